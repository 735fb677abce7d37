//! Versioned JSON files for fitted models.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use vhcbm_core::concept::ConceptGp;
use vhcbm_core::data::Standardizer;
use vhcbm_core::gp::{RbfKernel, SparseVariationalGp};
use vhcbm_core::head::LinearHead;
use vhcbm_core::model::ConceptBank;

use crate::codec::{decode_f64, decode_lower, decode_matrix, decode_vector, encode_f64, encode_lower};
use crate::error::{io_err, AppError, Result};

pub const MODEL_VERSION: u32 = 1;
pub const MODELS_MANIFEST: &str = "models.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpFile {
    pub version: u32,
    pub num_inducing: usize,
    pub dim: usize,
    /// `m x d`, column-major.
    pub inducing: String,
    pub variational_mean: String,
    /// Lower triangle of the variational factor, column by column.
    pub variational_chol: String,
    /// `[log output scale, log length scale, mean, jitter]`.
    pub hyperparameters: String,
}

impl GpFile {
    pub fn from_gp(gp: &SparseVariationalGp) -> Self {
        Self {
            version: MODEL_VERSION,
            num_inducing: gp.num_inducing(),
            dim: gp.dim(),
            inducing: encode_f64(gp.inducing().as_slice()),
            variational_mean: encode_f64(gp.variational_mean().as_slice()),
            variational_chol: encode_lower(gp.variational_chol()),
            hyperparameters: encode_f64(&[
                gp.kernel.log_output_scale(),
                gp.kernel.log_length_scale(),
                gp.mean,
                gp.jitter(),
            ]),
        }
    }

    pub fn to_gp(&self) -> Result<SparseVariationalGp> {
        check_version("gp", self.version)?;
        let m = self.num_inducing;
        let hyper = decode_f64(&self.hyperparameters)?;
        let [log_a, log_r, mean, jitter] = hyper[..] else {
            return Err(AppError::Format { what: "gp", message: "hyperparameters must hold 4 values".into() });
        };
        Ok(SparseVariationalGp::from_parts(
            decode_matrix("inducing inputs", &self.inducing, m, self.dim)?,
            RbfKernel::from_logs(log_a, log_r),
            mean,
            decode_vector("variational mean", &self.variational_mean, m)?,
            decode_lower("variational factor", &self.variational_chol, m)?,
            jitter,
        )?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptFile {
    pub version: u32,
    pub concept: usize,
    pub cardinality: usize,
    pub dirichlet_noise: f64,
    /// `v x v`, column-major.
    pub mixing: String,
    /// `(sample, value)` pairs the model was fitted on.
    pub training: Vec<(usize, usize)>,
    pub latents: Vec<GpFile>,
}

impl ConceptFile {
    pub fn from_model(gp: &ConceptGp) -> Self {
        Self {
            version: MODEL_VERSION,
            concept: gp.concept_index(),
            cardinality: gp.cardinality(),
            dirichlet_noise: gp.dirichlet_noise(),
            mixing: encode_f64(gp.mixing().as_slice()),
            training: gp.training().to_vec(),
            latents: gp.latents().iter().map(GpFile::from_gp).collect(),
        }
    }

    pub fn to_model(&self) -> Result<ConceptGp> {
        check_version("concept", self.version)?;
        let v = self.cardinality;
        if self.latents.len() != v {
            return Err(AppError::Format {
                what: "concept",
                message: format!("{} latent GPs for cardinality {v}", self.latents.len()),
            });
        }
        let latents = self.latents.iter().map(GpFile::to_gp).collect::<Result<Vec<_>>>()?;
        Ok(ConceptGp::from_parts(
            self.concept,
            latents,
            decode_matrix("mixing matrix", &self.mixing, v, v)?,
            self.dirichlet_noise,
            self.training.clone(),
        )?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadFile {
    pub version: u32,
    pub width: usize,
    pub num_labels: usize,
    /// `width x num_labels`, column-major.
    pub weights: String,
    pub bias: String,
}

impl HeadFile {
    pub fn from_head(head: &LinearHead) -> Self {
        Self {
            version: MODEL_VERSION,
            width: head.width(),
            num_labels: head.num_labels(),
            weights: encode_f64(head.weights().as_slice()),
            bias: encode_f64(head.bias().as_slice()),
        }
    }

    pub fn to_head(&self) -> Result<LinearHead> {
        check_version("head", self.version)?;
        Ok(LinearHead::from_parts(
            decode_matrix("head weights", &self.weights, self.width, self.num_labels)?,
            decode_vector("head bias", &self.bias, self.num_labels)?,
        )?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizerFile {
    pub version: u32,
    pub mean: String,
    pub std: String,
}

impl StandardizerFile {
    pub fn from_standardizer(s: &Standardizer) -> Self {
        Self { version: MODEL_VERSION, mean: encode_f64(s.mean()), std: encode_f64(s.std()) }
    }

    pub fn to_standardizer(&self) -> Result<Standardizer> {
        check_version("standardizer", self.version)?;
        Ok(Standardizer::from_parts(decode_f64(&self.mean)?, decode_f64(&self.std)?)?)
    }
}

/// Index of a saved model set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelsManifest {
    pub version: u32,
    pub cardinalities: Vec<usize>,
    pub concepts: Vec<String>,
    pub head: String,
    pub standardizer: String,
    /// Experiment seed the models came from.
    pub seed: u64,
    /// Fit round the models came from.
    pub iteration: usize,
}

fn check_version(what: &'static str, version: u32) -> Result<()> {
    if version != MODEL_VERSION {
        return Err(AppError::Format { what, message: format!("unsupported version {version}") });
    }
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string(value).expect("model files serialize");
    fs::write(path, text).map_err(io_err(path))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| AppError::Json { path: path.into(), source })
}

#[derive(Debug, Clone)]
pub struct SavedModels {
    pub manifest: ModelsManifest,
    pub bank: ConceptBank,
    pub head: LinearHead,
    pub standardizer: Standardizer,
}

pub fn save_models(
    dir: &Path,
    bank: &ConceptBank,
    head: &LinearHead,
    standardizer: &Standardizer,
    seed: u64,
    iteration: usize,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut concepts = Vec::new();
    for (i, c) in bank.concepts().iter().enumerate() {
        let c = c.as_ref().ok_or(vhcbm_core::error::Error::Unfitted { concept: i })?;
        let name = format!("concept_{i}.json");
        write_json(&dir.join(&name), &ConceptFile::from_model(c))?;
        concepts.push(name);
    }
    write_json(&dir.join("head.json"), &HeadFile::from_head(head))?;
    write_json(&dir.join("standardizer.json"), &StandardizerFile::from_standardizer(standardizer))?;
    let manifest = ModelsManifest {
        version: MODEL_VERSION,
        cardinalities: bank.cardinalities().to_vec(),
        concepts,
        head: "head.json".into(),
        standardizer: "standardizer.json".into(),
        seed,
        iteration,
    };
    let path = dir.join(MODELS_MANIFEST);
    fs::write(&path, serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n")
        .map_err(io_err(&path))
}

pub fn load_models(dir: &Path) -> Result<SavedModels> {
    let manifest: ModelsManifest = read_json(&dir.join(MODELS_MANIFEST))?;
    check_version("models manifest", manifest.version)?;
    let mut bank = ConceptBank::empty(manifest.cardinalities.clone());
    for name in &manifest.concepts {
        let file: ConceptFile = read_json(&dir.join(name))?;
        bank.insert(file.to_model()?)?;
    }
    if !bank.is_complete() {
        return Err(AppError::Format { what: "models manifest", message: "not every concept has a model".into() });
    }
    let head = read_json::<HeadFile>(&dir.join(&manifest.head))?.to_head()?;
    let standardizer = read_json::<StandardizerFile>(&dir.join(&manifest.standardizer))?.to_standardizer()?;
    Ok(SavedModels { manifest, bank, head, standardizer })
}
