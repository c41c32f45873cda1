//! Post-fit regression of topic proportions on the prevalence design.

use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::design::PrevalenceDesign;
use super::StmModel;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectRow {
    pub topic: String,
    pub term: String,
    pub estimate: f64,
    pub std_error: f64,
    pub t_value: f64,
    pub p_value: f64,
    pub signif: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EffectTable {
    pub rows: Vec<EffectRow>,
    pub df_residual: usize,
}

/// Conventional significance code for a two-sided p-value.
pub fn signif_code(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else if p < 0.1 {
        "."
    } else {
        ""
    }
}

impl EffectTable {
    pub fn get(&self, topic: &str, term: &str) -> Option<&EffectRow> {
        self.rows.iter().find(|r| r.topic == topic && r.term == term)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Serialization(e.to_string()))?;
        for r in &self.rows {
            w.serialize(r).map_err(|e| Error::Serialization(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Per-topic OLS of `theta[.][k]` on the design with classical standard
/// errors and two-sided t-test p-values on `D - P` degrees of freedom.
pub fn regress_topics(theta: &[Vec<f64>], topic_names: &[String], design: &PrevalenceDesign) -> Result<EffectTable> {
    let n = design.n_docs();
    let p = design.n_terms();
    if theta.len() != n {
        return Err(Error::LengthMismatch {
            left: theta.len(),
            right: n,
        });
    }
    if n <= p {
        return Err(Error::InsufficientData(format!("{n} documents for {p} design terms")));
    }
    let k = topic_names.len();
    if let Some(row) = theta.iter().find(|r| r.len() != k) {
        return Err(Error::LengthMismatch {
            left: row.len(),
            right: k,
        });
    }
    let chol = design.gram_cholesky()?;
    let coef = chol.solve(&design.cross(theta));
    let gram_inv = chol.inverse();

    // Residual sums of squares per topic; fitted values depend only on level.
    let fitted: Vec<Vec<f64>> = (0..design.n_levels())
        .map(|l| {
            let x = design.level_row(l);
            (0..k).map(|t| (0..p).map(|j| x[j] * coef[(j, t)]).sum()).collect()
        })
        .collect();
    let mut rss = vec![0.0; k];
    for (d, row) in theta.iter().enumerate() {
        let f = &fitted[design.doc_levels()[d]];
        for t in 0..k {
            let e = row[t] - f[t];
            rss[t] += e * e;
        }
    }

    let df = n - p;
    let dist = StudentsT::new(0.0, 1.0, df as f64).map_err(|e| Error::Degenerate(e.to_string()))?;
    let mut rows = Vec::with_capacity(k * p);
    for t in 0..k {
        let s2 = rss[t] / df as f64;
        for j in 0..p {
            let estimate = coef[(j, t)];
            let std_error = (s2 * gram_inv[(j, j)]).sqrt();
            let t_value = estimate / std_error;
            let p_value = if t_value.is_nan() {
                f64::NAN
            } else {
                2.0 * dist.sf(t_value.abs())
            };
            rows.push(EffectRow {
                topic: topic_names[t].clone(),
                term: design.terms()[j].clone(),
                estimate,
                std_error,
                t_value,
                p_value,
                signif: signif_code(p_value).to_string(),
            });
        }
    }
    Ok(EffectTable { rows, df_residual: df })
}

pub fn estimate_effects(model: &StmModel, design: &PrevalenceDesign) -> Result<EffectTable> {
    regress_topics(&model.theta, &model.topic_names, design)
}
