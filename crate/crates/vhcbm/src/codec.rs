//! Base64 little-endian `f64` arrays for model files.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use nalgebra::{DMatrix, DVector};

use crate::error::{AppError, Result};

pub fn encode_f64(values: &[f64]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|x| x.to_le_bytes()).collect();
    STANDARD.encode(bytes)
}

pub fn decode_f64(text: &str) -> Result<Vec<f64>> {
    let bytes = STANDARD
        .decode(text)
        .map_err(|e| AppError::Format { what: "base64 array", message: e.to_string() })?;
    if bytes.len() % 8 != 0 {
        return Err(AppError::Format {
            what: "base64 array",
            message: format!("{} bytes is not a whole number of f64 values", bytes.len()),
        });
    }
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
}

fn check_len(what: &'static str, values: &[f64], expected: usize) -> Result<()> {
    if values.len() != expected {
        return Err(AppError::Format { what, message: format!("expected {expected} values, found {}", values.len()) });
    }
    Ok(())
}

/// Column-major matrix.
pub fn decode_matrix(what: &'static str, text: &str, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
    let values = decode_f64(text)?;
    check_len(what, &values, rows * cols)?;
    Ok(DMatrix::from_vec(rows, cols, values))
}

pub fn decode_vector(what: &'static str, text: &str, len: usize) -> Result<DVector<f64>> {
    let values = decode_f64(text)?;
    check_len(what, &values, len)?;
    Ok(DVector::from_vec(values))
}

/// Lower triangle, column by column.
pub fn encode_lower(m: &DMatrix<f64>) -> String {
    let n = m.nrows();
    let packed: Vec<f64> = (0..n).flat_map(|j| (j..n).map(move |i| (i, j))).map(|(i, j)| m[(i, j)]).collect();
    encode_f64(&packed)
}

pub fn decode_lower(what: &'static str, text: &str, n: usize) -> Result<DMatrix<f64>> {
    let values = decode_f64(text)?;
    check_len(what, &values, n * (n + 1) / 2)?;
    let mut m = DMatrix::zeros(n, n);
    let mut it = values.into_iter();
    for j in 0..n {
        for i in j..n {
            m[(i, j)] = it.next().expect("length checked");
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_bits() {
        let v = [0.1, -0.0, f64::MIN_POSITIVE, 1e300, -3.5];
        let back = decode_f64(&encode_f64(&v)).unwrap();
        assert!(v.iter().zip(&back).all(|(a, b)| a.to_bits() == b.to_bits()));
        let l = DMatrix::from_fn(4, 4, |i, j| if i >= j { (i * 4 + j) as f64 + 0.5 } else { 0.0 });
        assert_eq!(decode_lower("l", &encode_lower(&l), 4).unwrap(), l);
        assert!(decode_f64("AAAA").is_err());
    }
}
