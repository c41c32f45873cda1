//! Seeded structural topic model.
//!
//! Topic prevalence follows a logistic-normal prior whose mean is a linear
//! function of the document covariates. Topic content is a baseline
//! log-frequency plus sparse deviations for topic, content level and their
//! interaction. Parameters are estimated by variational EM, starting from
//! seed-informed topic-feature distributions.

mod content;
mod design;
mod effects;
mod estep;
mod fit;
pub mod optim;

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{DocumentVector, Vocabulary};
use crate::error::{Error, Result};
use crate::groups::CountrySet;

pub use content::{
    baseline_log_frequency, init_seeded, update_content, ContentModel, ContentOptions, ExpectedCounts, SeededInit,
    RESIDUAL_TOPIC,
};
pub use design::{design_terms, PrevalenceDesign};
pub use effects::{estimate_effects, regress_topics, signif_code, EffectRow, EffectTable};
pub use estep::{e_step, DocPosterior, DocPrior};
pub use fit::{fit, update_prevalence};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Relative bound change below which EM stops.
    #[serde(with = "maybe_infinite")]
    pub emtol: f64,
    pub seed_mass: f64,
    pub max_iter: usize,
    pub kappa_l1: f64,
    pub rng_seed: u64,
    /// Weight of seed pseudo-counts added at every M-step; 0 seeds the
    /// initialization only.
    #[serde(default)]
    pub seed_prior_weight: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            emtol: 1e-2,
            seed_mass: 0.25,
            max_iter: 100,
            kappa_l1: 0.01,
            rng_seed: 0,
            seed_prior_weight: 0.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.seed_mass > 0.0 && self.seed_mass < 1.0) {
            return Err(Error::Config(format!(
                "seed_mass must lie in (0, 1), got {}",
                self.seed_mass
            )));
        }
        if !(self.emtol > 0.0) {
            return Err(Error::Config(format!("emtol must be positive, got {}", self.emtol)));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("max_iter must be at least 1".into()));
        }
        if !(self.kappa_l1 >= 0.0) || !(self.seed_prior_weight >= 0.0) {
            return Err(Error::Config(
                "kappa_l1 and seed_prior_weight must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

mod maybe_infinite {
    use serde::{Deserialize, Deserializer, Serializer};

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(x) => Ok(x),
            Repr::Text(t) if t == "inf" => Ok(f64::INFINITY),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("bad tolerance '{t}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Emtol,
    MaxIter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    pub reason: StopReason,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StmModel {
    pub config: ModelConfig,
    pub topic_names: Vec<String>,
    pub countries: CountrySet,
    pub vocab_hash: String,
    pub terms: Vec<String>,
    pub content: ContentModel,
    /// P x (K - 1) prevalence coefficients.
    pub gamma: Vec<Vec<f64>>,
    /// (K - 1) x (K - 1) prior covariance.
    pub sigma: Vec<Vec<f64>>,
    pub lambda: Vec<Vec<f64>>,
    pub nu: Vec<Vec<f64>>,
    pub theta: Vec<Vec<f64>>,
    pub doc_levels: Vec<usize>,
    pub bound_trace: Vec<f64>,
    pub convergence: Convergence,
    /// Documents whose E-step hit its iteration cap in the last pass.
    pub flagged_docs: Vec<usize>,
}

pub(crate) fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

pub(crate) fn from_rows(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let n = rows.len();
    let m = rows.first().map_or(0, |r| r.len());
    DMatrix::from_fn(n, m, |i, j| rows[i][j])
}

/// SHA-256 over `kind\tsurface\n` lines in index order.
pub fn vocabulary_hash(vocab: &Vocabulary) -> String {
    let mut h = Sha256::new();
    for f in vocab.features() {
        h.update(f.kind.as_str().as_bytes());
        h.update(b"\t");
        h.update(f.surface.as_bytes());
        h.update(b"\n");
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

impl StmModel {
    pub fn n_topics(&self) -> usize {
        self.content.n_topics
    }

    pub fn n_levels(&self) -> usize {
        self.content.n_levels
    }

    pub fn vocab_size(&self) -> usize {
        self.content.vocab_size
    }

    pub fn n_docs(&self) -> usize {
        self.theta.len()
    }

    /// Topic-feature distribution of topic `topic` at content level `level`.
    pub fn beta(&self, level: usize, topic: usize) -> Result<Vec<f64>> {
        self.content.beta(level, topic)
    }

    pub fn topic_index(&self, name: &str) -> Option<usize> {
        self.topic_names.iter().position(|t| t == name)
    }

    pub fn gamma_matrix(&self) -> DMatrix<f64> {
        from_rows(&self.gamma)
    }

    pub fn sigma_matrix(&self) -> DMatrix<f64> {
        from_rows(&self.sigma)
    }

    /// Prior mean of a document at `level`.
    pub fn prior_mean(&self, design_row: &[f64]) -> Vec<f64> {
        let k1 = self.n_topics() - 1;
        (0..k1)
            .map(|k| design_row.iter().zip(&self.gamma).map(|(x, g)| x * g[k]).sum())
            .collect()
    }

    /// Runs the E-step for one document against the fitted parameters.
    pub fn e_step(&self, doc: &DocumentVector, design_row: &[f64], init: Option<&[f64]>) -> Result<DocPosterior> {
        let level = doc.group.content_level();
        if level >= self.n_levels() {
            return Err(Error::Index {
                what: "content level",
                index: level,
                len: self.n_levels(),
            });
        }
        let log_beta: Vec<Vec<f64>> = (0..self.n_topics()).map(|k| self.content.log_beta(level, k)).collect();
        let refs: Vec<&[f64]> = log_beta.iter().map(|r| r.as_slice()).collect();
        let sigma = self.sigma_matrix();
        let chol = sigma
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Degenerate("sigma is not positive definite".into()))?;
        let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|x| x.ln()).sum::<f64>();
        let sigma_inv = chol.inverse();
        let mu = self.prior_mean(design_row);
        let zeros = vec![0.0; self.n_topics() - 1];
        let prior = DocPrior {
            mu: &mu,
            sigma_inv: &sigma_inv,
            log_det_sigma: log_det,
        };
        Ok(e_step(
            &doc.features,
            &refs,
            &prior,
            init.unwrap_or(&zeros),
            optim::BfgsOptions::default(),
        ))
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&s).map_err(|e| Error::parse(path, e.line(), e.to_string()))
    }
}
