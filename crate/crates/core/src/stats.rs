//! Country-level association between Left-Right similarity and a survey
//! measure of perceived political conflict.

use std::collections::HashMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::stm::signif_code;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountryObservation {
    pub country: String,
    pub similarity: f64,
    pub conflict_share: f64,
}

/// Sample Pearson correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    let n = x.len();
    if n < 3 {
        return Err(Error::InsufficientData(format!(
            "pearson needs at least 3 pairs, got {n}"
        )));
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Degenerate("zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Quantile with linear interpolation between order statistics
/// (`h = (n - 1) p`).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub resamples: usize,
    pub skipped: usize,
    pub mean: f64,
    pub quantiles: (f64, f64),
    pub lower: f64,
    pub upper: f64,
}

/// Resamples pairs with replacement `b` times and summarizes the resulting
/// correlations. Resample `i` draws from its own ChaCha stream, so results
/// do not depend on scheduling.
pub fn bootstrap_ci(x: &[f64], y: &[f64], b: usize, quantiles: (f64, f64), rng_seed: u64) -> Result<BootstrapResult> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "bootstrap needs at least 3 pairs, got {}",
            x.len()
        )));
    }
    if !(0.0..=1.0).contains(&quantiles.0) || !(0.0..=1.0).contains(&quantiles.1) || quantiles.0 > quantiles.1 {
        return Err(Error::Config(format!("invalid quantiles {quantiles:?}")));
    }
    let n = x.len();
    let draws: Vec<Option<f64>> = (0..b)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
            rng.set_stream(i as u64);
            let mut xs = Vec::with_capacity(n);
            let mut ys = Vec::with_capacity(n);
            for _ in 0..n {
                let j = rng.random_range(0..n);
                xs.push(x[j]);
                ys.push(y[j]);
            }
            pearson(&xs, &ys).ok()
        })
        .collect();
    let mut valid: Vec<f64> = draws.into_iter().flatten().collect();
    let skipped = b - valid.len();
    if valid.is_empty() {
        return Err(Error::Degenerate(format!(
            "all {b} bootstrap resamples had zero variance"
        )));
    }
    let mean = valid.iter().sum::<f64>() / valid.len() as f64;
    valid.sort_by(f64::total_cmp);
    Ok(BootstrapResult {
        resamples: b,
        skipped,
        mean,
        quantiles,
        lower: quantile_sorted(&valid, quantiles.0),
        upper: quantile_sorted(&valid, quantiles.1),
    })
}

// ---------------------------------------------------------------------------
// Quasi-binomial GLM

/// Proportions are clamped to this distance from 0 and 1.
pub const ENDPOINT_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy)]
pub struct GlmOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for GlmOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub term: String,
    pub estimate: f64,
    pub std_error: f64,
    pub t_value: f64,
    pub p_value: f64,
    pub signif: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmFit {
    pub coefficients: Vec<Coefficient>,
    pub dispersion: f64,
    pub df_residual: usize,
    pub deviance: f64,
    pub iterations: usize,
    pub clamped: usize,
    pub fitted: Vec<f64>,
    /// Unscaled inverse information `(X'WX)^-1`.
    pub cov_unscaled: [[f64; 2]; 2],
}

impl GlmFit {
    pub fn intercept(&self) -> f64 {
        self.coefficients[0].estimate
    }

    pub fn slope(&self) -> f64 {
        self.coefficients[1].estimate
    }
}

pub fn logistic(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn binomial_deviance(y: &[f64], mu: &[f64]) -> f64 {
    let term = |a: f64, b: f64| if a > 0.0 { a * (a / b).ln() } else { 0.0 };
    2.0 * y
        .iter()
        .zip(mu)
        .map(|(&yi, &mi)| term(yi, mi) + term(1.0 - yi, 1.0 - mi))
        .sum::<f64>()
}

/// Logit-link regression of proportions on one predictor, fitted by
/// iteratively reweighted least squares with binomial variance. Standard
/// errors are scaled by the Pearson dispersion on `n - 2` degrees of
/// freedom and p-values come from the t distribution.
pub fn glm_quasibinomial(y: &[f64], x: &[f64], opts: GlmOptions) -> Result<GlmFit> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    let n = y.len();
    if n < 3 {
        return Err(Error::InsufficientData(format!(
            "GLM needs at least 3 observations, got {n}"
        )));
    }
    if let Some(bad) = y.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Config(format!("proportion {bad} outside [0, 1]")));
    }
    let mut clamped = 0;
    let y: Vec<f64> = y
        .iter()
        .map(|&v| {
            let c = v.clamp(ENDPOINT_EPS, 1.0 - ENDPOINT_EPS);
            if c != v {
                clamped += 1;
            }
            c
        })
        .collect();
    if clamped > 0 {
        log::warn!(
            "{clamped} endpoint proportions clamped to [{ENDPOINT_EPS}, {}]",
            1.0 - ENDPOINT_EPS
        );
    }

    let mut mu: Vec<f64> = y.iter().map(|v| (v + 0.5) / 2.0).collect();
    let mut eta: Vec<f64> = mu.iter().map(|&m| logit(m)).collect();
    let mut dev = binomial_deviance(&y, &mu);
    let mut trace = vec![dev];
    let mut beta = [0.0; 2];
    let mut inv = [[0.0; 2]; 2];
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=opts.max_iter {
        iterations = it;
        let (mut s00, mut s01, mut s11, mut t0, mut t1) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for i in 0..n {
            let w = mu[i] * (1.0 - mu[i]);
            let z = eta[i] + (y[i] - mu[i]) / w;
            s00 += w;
            s01 += w * x[i];
            s11 += w * x[i] * x[i];
            t0 += w * z;
            t1 += w * x[i] * z;
        }
        let det = s00 * s11 - s01 * s01;
        if !(det.abs() > 1e-300) {
            return Err(Error::Degenerate("predictor has no variation".into()));
        }
        inv = [[s11 / det, -s01 / det], [-s01 / det, s00 / det]];
        beta = [inv[0][0] * t0 + inv[0][1] * t1, inv[1][0] * t0 + inv[1][1] * t1];
        for i in 0..n {
            eta[i] = beta[0] + beta[1] * x[i];
            mu[i] = logistic(eta[i]);
        }
        let new_dev = binomial_deviance(&y, &mu);
        trace.push(new_dev);
        if !new_dev.is_finite() {
            break;
        }
        let rel = (new_dev - dev).abs() / (new_dev.abs() + 0.1);
        dev = new_dev;
        if rel < opts.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::IrlsDivergence { iterations, trace });
    }
    // Information at the final coefficients.
    let (mut s00, mut s01, mut s11) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let w = mu[i] * (1.0 - mu[i]);
        s00 += w;
        s01 += w * x[i];
        s11 += w * x[i] * x[i];
    }
    let det = s00 * s11 - s01 * s01;
    inv = if det.abs() > 1e-300 {
        [[s11 / det, -s01 / det], [-s01 / det, s00 / det]]
    } else {
        inv
    };

    let df = n - 2;
    let pearson_chi2: f64 = (0..n).map(|i| (y[i] - mu[i]).powi(2) / (mu[i] * (1.0 - mu[i]))).sum();
    let dispersion = pearson_chi2 / df as f64;
    let dist = StudentsT::new(0.0, 1.0, df as f64).map_err(|e| Error::Degenerate(e.to_string()))?;
    let coefficients = ["(Intercept)", "similarity"]
        .iter()
        .enumerate()
        .map(|(j, term)| {
            let std_error = (dispersion * inv[j][j]).sqrt();
            let t_value = beta[j] / std_error;
            let p_value = if t_value.is_nan() {
                f64::NAN
            } else {
                2.0 * dist.sf(t_value.abs())
            };
            Coefficient {
                term: term.to_string(),
                estimate: beta[j],
                std_error,
                t_value,
                p_value,
                signif: signif_code(p_value).to_string(),
            }
        })
        .collect();
    Ok(GlmFit {
        coefficients,
        dispersion,
        df_residual: df,
        deviance: dev,
        iterations,
        clamped,
        fitted: mu,
        cov_unscaled: inv,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub x: f64,
    pub fit: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Two-sided 90% normal quantile used for the pointwise band.
pub const Z_90: f64 = 1.6448536269514722;

/// Predicted proportions over `grid` with a 90% pointwise band built on the
/// linear predictor scale.
pub fn fitted_curve(fit: &GlmFit, grid: &[f64]) -> Vec<CurvePoint> {
    let (a, b) = (fit.intercept(), fit.slope());
    let c = &fit.cov_unscaled;
    grid.iter()
        .map(|&x| {
            let eta = a + b * x;
            let var = fit.dispersion * (c[0][0] + 2.0 * x * c[0][1] + x * x * c[1][1]);
            let se = var.max(0.0).sqrt();
            CurvePoint {
                x,
                fit: logistic(eta),
                lower: logistic(eta - Z_90 * se),
                upper: logistic(eta + Z_90 * se),
            }
        })
        .collect()
}

/// Evenly spaced grid of `n` points spanning the data range.
pub fn grid_over(x: &[f64], n: usize) -> Vec<f64> {
    let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if n < 2 || !(hi > lo) {
        return vec![lo];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

// ---------------------------------------------------------------------------
// Inputs and report

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub countries: Vec<String>,
    pub n: usize,
    pub pearson_r: f64,
    pub bootstrap: BootstrapResult,
    pub glm: GlmFit,
}

impl CorrelationReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Serialization(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CorrelateOptions {
    pub resamples: usize,
    pub quantiles: (f64, f64),
    pub rng_seed: u64,
    pub glm: GlmOptions,
}

impl Default for CorrelateOptions {
    fn default() -> Self {
        Self {
            resamples: 10_000,
            quantiles: (0.05, 0.95),
            rng_seed: 0,
            glm: GlmOptions::default(),
        }
    }
}

pub fn correlate(obs: &[CountryObservation], opts: &CorrelateOptions) -> Result<CorrelationReport> {
    let x: Vec<f64> = obs.iter().map(|o| o.similarity).collect();
    let y: Vec<f64> = obs.iter().map(|o| o.conflict_share).collect();
    Ok(CorrelationReport {
        countries: obs.iter().map(|o| o.country.clone()).collect(),
        n: obs.len(),
        pearson_r: pearson(&x, &y)?,
        bootstrap: bootstrap_ci(&x, &y, opts.resamples, opts.quantiles, opts.rng_seed)?,
        glm: glm_quasibinomial(&y, &x, opts.glm)?,
    })
}

fn normalize_country(s: &str) -> String {
    let s = s.trim().to_lowercase();
    s.strip_prefix("the ").map(str::to_string).unwrap_or(s)
}

fn read_table(path: &Path) -> Result<(Vec<String>, Vec<csv::StringRecord>)> {
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::parse(path, 0, e.to_string()))?;
    let header: Vec<String> = r
        .headers()
        .map_err(|e| Error::parse(path, 1, e.to_string()))?
        .iter()
        .map(|h| h.to_lowercase())
        .collect();
    let rows = r
        .records()
        .map(|rec| rec.map_err(|e| Error::parse(path, e.position().map_or(0, |p| p.line() as usize), e.to_string())))
        .collect::<Result<_>>()?;
    Ok((header, rows))
}

fn column(path: &Path, header: &[String], name: &str) -> Result<usize> {
    header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::parse(path, 1, format!("missing column '{name}'")))
}

fn parse_unit(path: &Path, line: usize, s: &str, what: &str) -> Result<f64> {
    let v: f64 = s
        .parse()
        .map_err(|_| Error::parse(path, line, format!("{what} '{s}' is not a number")))?;
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::parse(path, line, format!("{what} {v} outside [0, 1]")));
    }
    Ok(v)
}

/// Reads `(country, value)` pairs from the named column of a CSV file.
pub fn read_country_values(path: &Path, value_column: &str) -> Result<Vec<(String, f64)>> {
    let (header, rows) = read_table(path)?;
    let c = column(path, &header, "country")?;
    let v = column(path, &header, value_column)?;
    rows.iter()
        .enumerate()
        .map(|(i, r)| Ok((r[c].to_string(), parse_unit(path, i + 2, &r[v], value_column)?)))
        .collect()
}

/// Reads a CSV with columns country, similarity, conflict_share.
pub fn read_observations(path: &Path) -> Result<Vec<CountryObservation>> {
    let (header, rows) = read_table(path)?;
    let c = column(path, &header, "country")?;
    let s = column(path, &header, "similarity")?;
    let p = column(path, &header, "conflict_share")?;
    rows.iter()
        .enumerate()
        .map(|(i, r)| {
            Ok(CountryObservation {
                country: r[c].to_string(),
                similarity: parse_unit(path, i + 2, &r[s], "similarity")?,
                conflict_share: parse_unit(path, i + 2, &r[p], "conflict_share")?,
            })
        })
        .collect()
}

/// Inner join on country name (case-insensitive, a leading "the " ignored),
/// in the order of `similarity`.
pub fn join_observations(similarity: &[(String, f64)], conflict: &[(String, f64)]) -> Vec<CountryObservation> {
    let lookup: HashMap<String, f64> = conflict.iter().map(|(c, v)| (normalize_country(c), *v)).collect();
    similarity
        .iter()
        .filter_map(|(c, s)| {
            lookup.get(&normalize_country(c)).map(|&p| CountryObservation {
                country: c.clone(),
                similarity: *s,
                conflict_share: p,
            })
        })
        .collect()
}

pub fn write_curve_csv(path: &Path, curve: &[CurvePoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Serialization(e.to_string()))?;
    for p in curve {
        w.serialize(p).map_err(|e| Error::Serialization(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn cov_oracle(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let sx: f64 = x.iter().sum();
        let sy: f64 = y.iter().sum();
        let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
        let sxx: f64 = x.iter().map(|a| a * a).sum();
        let syy: f64 = y.iter().map(|b| b * b).sum();
        (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
    }

    #[test]
    fn pearson_lines_and_oracle() {
        let x = [1.0, 2.0, 3.5, 4.0, 7.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        assert!((pearson(&x, &y).unwrap() - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&x, &neg).unwrap() + 1.0).abs() < 1e-15);
        assert!(matches!(pearson(&x, &[1.0; 5]), Err(Error::Degenerate(_))));
        assert!(pearson(&x[..2], &y[..2]).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a: Vec<f64> = (0..20).map(|_| rng.random()).collect();
        let b: Vec<f64> = (0..20).map(|_| rng.random()).collect();
        assert!((pearson(&a, &b).unwrap() - cov_oracle(&a, &b)).abs() < 1e-12);
    }

    #[test]
    fn quantiles_interpolate() {
        let s = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile_sorted(&s, 0.5), 3.0);
        assert!((quantile_sorted(&s, 0.05) - 1.2).abs() < 1e-12);
        assert!((quantile_sorted(&s, 0.95) - 4.8).abs() < 1e-12);
    }

    #[test]
    fn bootstrap_on_an_exact_line() {
        // With three points a ninth of all resamples repeat one point.
        let x = [0.1, 0.2, 0.3];
        let y: Vec<f64> = x.iter().map(|v| 0.5 - 0.3 * v).collect();
        let r = bootstrap_ci(&x, &y, 2000, (0.05, 0.95), 9).unwrap();
        assert!(r.skipped > 0);
        assert!((r.lower + 1.0).abs() < 1e-12 && (r.upper + 1.0).abs() < 1e-12);
        let again = bootstrap_ci(&x, &y, 2000, (0.05, 0.95), 9).unwrap();
        assert_eq!(
            serde_json::to_string(&r).unwrap(),
            serde_json::to_string(&again).unwrap()
        );
    }

    #[test]
    fn flat_response_gives_zero_coefficients() {
        let x = [0.1, 0.4, 0.2, 0.9, 0.5];
        let fit = glm_quasibinomial(&[0.5; 5], &x, GlmOptions::default()).unwrap();
        assert!(fit.intercept().abs() < 1e-12 && fit.slope().abs() < 1e-12);
        let c = fitted_curve(&fit, &[0.0, 1.0]);
        assert!((c[0].fit - 0.5).abs() < 1e-12 && (c[1].fit - 0.5).abs() < 1e-12);
    }

    #[test]
    fn endpoints_are_clamped() {
        let fit = glm_quasibinomial(&[0.0, 0.2, 0.5, 1.0], &[0.0, 1.0, 2.0, 3.0], GlmOptions::default()).unwrap();
        assert_eq!(fit.clamped, 2);
        assert!(fit.fitted.iter().all(|&m| m > 0.0 && m < 1.0));
    }

    #[test]
    fn curve_passes_through_fitted_values_and_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let noise = Normal::new(0.0, 0.02).unwrap();
        let x: Vec<f64> = (0..12).map(|i| 0.85 + 0.01 * i as f64).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|v| (logistic(8.0 - 10.0 * v) + noise.sample(&mut rng)).clamp(0.01, 0.99))
            .collect();
        let fit = glm_quasibinomial(&y, &x, GlmOptions::default()).unwrap();
        let at_obs = fitted_curve(&fit, &x);
        for (p, m) in at_obs.iter().zip(&fit.fitted) {
            assert!((p.fit - m).abs() < 1e-12);
            assert!(p.lower <= p.fit && p.fit <= p.upper);
        }
        let grid = fitted_curve(&fit, &grid_over(&x, 50));
        let sign = fit.slope().signum();
        for w in grid.windows(2) {
            assert_eq!((w[1].fit - w[0].fit).signum(), sign);
        }
    }

    #[test]
    fn join_is_case_insensitive() {
        let sim = vec![("the Netherlands".to_string(), 0.9), ("Poland".to_string(), 0.8)];
        let conf = vec![("netherlands".to_string(), 0.4)];
        let j = join_observations(&sim, &conf);
        assert_eq!(j.len(), 1);
        assert_eq!(j[0].conflict_share, 0.4);
    }
}
