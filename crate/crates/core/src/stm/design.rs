//! Dummy-coded prevalence design: intercept, position dummies, country
//! dummies and their interactions, with (first country, Center) as the
//! reference cell.
//!
//! Every row is determined by the document's content level, so the design
//! is stored as one row per level plus the level of each document.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::groups::{CountrySet, GroupLabel, PolPos};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrevalenceDesign {
    terms: Vec<String>,
    /// One design row per content level.
    level_rows: Vec<Vec<f64>>,
    doc_levels: Vec<usize>,
}

/// Non-reference positions in term order.
const POS_TERMS: [PolPos; 2] = [PolPos::Left, PolPos::Right];

pub fn design_terms(countries: &CountrySet) -> Vec<String> {
    let mut terms = vec!["(Intercept)".to_string()];
    terms.extend(POS_TERMS.iter().map(|p| p.as_str().to_string()));
    terms.extend(countries.names()[1..].iter().cloned());
    for c in &countries.names()[1..] {
        for p in POS_TERMS {
            terms.push(format!("{p}:{c}"));
        }
    }
    terms
}

fn level_row(label: GroupLabel, n_countries: usize) -> Vec<f64> {
    let p = 1 + 2 + (n_countries - 1) + 2 * (n_countries - 1);
    let mut row = vec![0.0; p];
    row[0] = 1.0;
    let pos_col = POS_TERMS.iter().position(|&x| x == label.pol_pos);
    if let Some(j) = pos_col {
        row[1 + j] = 1.0;
    }
    if label.country > 0 {
        row[3 + label.country - 1] = 1.0;
        if let Some(j) = pos_col {
            row[3 + (n_countries - 1) + 2 * (label.country - 1) + j] = 1.0;
        }
    }
    row
}

impl PrevalenceDesign {
    /// Builds the design for documents with the given labels and checks
    /// that it has full column rank.
    pub fn build(labels: &[GroupLabel], countries: &CountrySet) -> Result<Self> {
        let n_c = countries.len();
        let mut doc_levels = Vec::with_capacity(labels.len());
        for g in labels {
            if g.country >= n_c {
                return Err(Error::UnknownLevel(format!("country index {}", g.country)));
            }
            doc_levels.push(g.content_level());
        }
        let level_rows = (0..countries.n_levels())
            .map(|l| level_row(GroupLabel::from_level(l), n_c))
            .collect();
        let design = Self {
            terms: design_terms(countries),
            level_rows,
            doc_levels,
        };
        design.gram_cholesky()?;
        Ok(design)
    }

    /// Design with caller-supplied level rows, e.g. an intercept-only model.
    pub fn from_level_rows(terms: Vec<String>, level_rows: Vec<Vec<f64>>, doc_levels: Vec<usize>) -> Result<Self> {
        if let Some(r) = level_rows.iter().find(|r| r.len() != terms.len()) {
            return Err(Error::LengthMismatch {
                left: r.len(),
                right: terms.len(),
            });
        }
        if let Some(&l) = doc_levels.iter().find(|&&l| l >= level_rows.len()) {
            return Err(Error::UnknownLevel(format!("content level {l}")));
        }
        let design = Self {
            terms,
            level_rows,
            doc_levels,
        };
        design.gram_cholesky()?;
        Ok(design)
    }

    pub fn n_docs(&self) -> usize {
        self.doc_levels.len()
    }

    pub fn n_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn n_levels(&self) -> usize {
        self.level_rows.len()
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn doc_levels(&self) -> &[usize] {
        &self.doc_levels
    }

    pub fn level_row(&self, level: usize) -> &[f64] {
        &self.level_rows[level]
    }

    pub fn row(&self, doc: usize) -> &[f64] {
        &self.level_rows[self.doc_levels[doc]]
    }

    /// Dense D x P matrix.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n_docs(), self.n_terms(), |d, j| self.row(d)[j])
    }

    pub fn level_counts(&self) -> Vec<usize> {
        let mut n = vec![0; self.n_levels()];
        for &l in &self.doc_levels {
            n[l] += 1;
        }
        n
    }

    /// X'X accumulated per level.
    pub fn gram(&self) -> DMatrix<f64> {
        let p = self.n_terms();
        let mut g = DMatrix::zeros(p, p);
        for (l, &n) in self.level_counts().iter().enumerate() {
            if n == 0 {
                continue;
            }
            let x = DVector::from_column_slice(&self.level_rows[l]);
            g += (n as f64) * &x * x.transpose();
        }
        g
    }

    pub(crate) fn gram_cholesky(&self) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
        let g = self.gram();
        let chol = g
            .clone()
            .cholesky()
            .ok_or_else(|| Error::SingularDesign(self.empty_cells_message()))?;
        // Reject near-singular designs: the smallest pivot relative to the
        // largest diagonal entry.
        let l = chol.l();
        let max_diag = (0..g.nrows()).map(|i| g[(i, i)]).fold(0.0, f64::max);
        let min_pivot = (0..l.nrows())
            .map(|i| l[(i, i)] * l[(i, i)])
            .fold(f64::INFINITY, f64::min);
        if min_pivot <= 1e-10 * max_diag {
            return Err(Error::SingularDesign(self.empty_cells_message()));
        }
        Ok(chol)
    }

    fn empty_cells_message(&self) -> String {
        let empty: Vec<usize> = self
            .level_counts()
            .iter()
            .enumerate()
            .filter(|(_, &n)| n == 0)
            .map(|(l, _)| l)
            .collect();
        if empty.is_empty() {
            "columns are linearly dependent".into()
        } else {
            format!("content levels without documents: {empty:?}")
        }
    }

    /// X'Y for a D x m response given as rows.
    pub fn cross(&self, y: &[Vec<f64>]) -> DMatrix<f64> {
        let m = y.first().map_or(0, |r| r.len());
        let n_l = self.n_levels();
        let mut sums = vec![vec![0.0; m]; n_l];
        for (d, row) in y.iter().enumerate() {
            let s = &mut sums[self.doc_levels[d]];
            for (a, b) in s.iter_mut().zip(row) {
                *a += b;
            }
        }
        let p = self.n_terms();
        let mut out = DMatrix::zeros(p, m);
        for (l, s) in sums.iter().enumerate() {
            let x = &self.level_rows[l];
            for j in 0..p {
                if x[j] != 0.0 {
                    for (k, v) in s.iter().enumerate() {
                        out[(j, k)] += x[j] * v;
                    }
                }
            }
        }
        out
    }

    /// Column-wise least squares of `y` (D rows) on the design: P x m.
    pub fn least_squares(&self, y: &[Vec<f64>]) -> Result<DMatrix<f64>> {
        if y.len() != self.n_docs() {
            return Err(Error::LengthMismatch {
                left: y.len(),
                right: self.n_docs(),
            });
        }
        let chol = self.gram_cholesky()?;
        Ok(chol.solve(&self.cross(y)))
    }
}
