//! Variational EM driver and the prevalence M-step.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::content::{
    baseline_log_frequency, init_seeded, update_content, ContentModel, ContentOptions, ExpectedCounts,
};
use super::design::PrevalenceDesign;
use super::estep::{e_step, DocPrior};
use super::optim::BfgsOptions;
use super::{to_rows, vocabulary_hash, Convergence, ModelConfig, StmModel, StopReason};
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::lexicon::SeedLexicon;

/// Documents per parallel batch. Responsibilities are folded into the
/// sufficient statistics batch by batch in document order, which bounds
/// memory and keeps the reduction order independent of the thread count.
const BATCH: usize = 2048;

/// Amplitude of the deterministic jitter applied to the initial `lambda`.
const INIT_JITTER: f64 = 1e-3;

/// Least-squares update of the prevalence coefficients and the prior
/// covariance from per-document posteriors.
///
/// `gamma` regresses `lambda` on the design; `sigma` is the mean of
/// `diag(nu_d) + r_d r_d'` with residuals `r_d = lambda_d - x_d gamma`.
pub fn update_prevalence(
    design: &PrevalenceDesign,
    lambda: &[Vec<f64>],
    nu: &[Vec<f64>],
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if nu.len() != lambda.len() {
        return Err(Error::LengthMismatch {
            left: nu.len(),
            right: lambda.len(),
        });
    }
    let gamma = design.least_squares(lambda)?;
    let k1 = gamma.ncols();
    let n_docs = lambda.len();
    let level_means: Vec<DVector<f64>> = (0..design.n_levels())
        .map(|l| {
            let x = DVector::from_column_slice(design.level_row(l));
            gamma.transpose() * x
        })
        .collect();
    let mut sigma = DMatrix::zeros(k1, k1);
    let mut r = vec![0.0; k1];
    for d in 0..n_docs {
        let mu = &level_means[design.doc_levels()[d]];
        for i in 0..k1 {
            r[i] = lambda[d][i] - mu[i];
        }
        for i in 0..k1 {
            sigma[(i, i)] += nu[d][i];
            for j in 0..k1 {
                sigma[(i, j)] += r[i] * r[j];
            }
        }
    }
    sigma /= n_docs as f64;
    let sym = (&sigma + sigma.transpose()) * 0.5;
    Ok((gamma, sym))
}

struct PriorCache {
    sigma_inv: DMatrix<f64>,
    log_det: f64,
    /// Prior mean per content level.
    means: Vec<Vec<f64>>,
}

fn prior_cache(design: &PrevalenceDesign, gamma: &DMatrix<f64>, sigma: &DMatrix<f64>) -> Result<PriorCache> {
    let chol = sigma
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Degenerate("prior covariance lost positive definiteness".into()))?;
    let log_det = 2.0 * chol.l().diagonal().iter().map(|x| x.ln()).sum::<f64>();
    let sigma_inv = chol.inverse();
    let means = (0..design.n_levels())
        .map(|l| {
            let x = DVector::from_column_slice(design.level_row(l));
            (gamma.transpose() * x).iter().copied().collect()
        })
        .collect();
    Ok(PriorCache {
        sigma_inv,
        log_det,
        means,
    })
}

struct DocResult {
    lambda: Vec<f64>,
    nu: Vec<f64>,
    theta: Vec<f64>,
    bound: f64,
    converged: bool,
    /// `(cell offset, expected count)` contributions.
    expected: Vec<(usize, f64)>,
}

/// Fits the model by alternating per-document E-steps with the prevalence
/// and content M-steps until the relative bound change drops below
/// `config.emtol` or `config.max_iter` passes have run.
pub fn fit(
    corpus: &Corpus,
    design: &PrevalenceDesign,
    lexicon: &SeedLexicon,
    config: &ModelConfig,
) -> Result<StmModel> {
    config.validate()?;
    let docs = &corpus.documents;
    if docs.is_empty() {
        return Err(Error::InsufficientData("corpus has no documents".into()));
    }
    if design.n_docs() != docs.len() {
        return Err(Error::LengthMismatch {
            left: design.n_docs(),
            right: docs.len(),
        });
    }
    for (d, doc) in docs.iter().enumerate() {
        if design.doc_levels()[d] != doc.group.content_level() {
            return Err(Error::Config(format!(
                "design row {d} does not match document {}",
                doc.doc_id
            )));
        }
    }
    let n_levels = corpus.countries.n_levels();
    if design.n_levels() != n_levels {
        return Err(Error::LengthMismatch {
            left: design.n_levels(),
            right: n_levels,
        });
    }

    let v = corpus.vocabulary.len();
    let init = init_seeded(&corpus.vocabulary, lexicon, config.seed_mass)?;
    let k = init.beta.len();
    let k1 = k - 1;
    let mut content = ContentModel::from_init(baseline_log_frequency(docs, v), &init, n_levels);
    let mut gamma = DMatrix::zeros(design.n_terms(), k1);
    let mut sigma = DMatrix::identity(k1, k1);

    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut lambda: Vec<Vec<f64>> = docs
        .iter()
        .map(|_| (0..k1).map(|_| rng.random_range(-INIT_JITTER..INIT_JITTER)).collect())
        .collect();
    let mut nu = vec![vec![0.0; k1]; docs.len()];
    let mut theta = vec![vec![0.0; k]; docs.len()];
    let mut flagged = Vec::new();
    let mut bound_trace: Vec<f64> = Vec::new();
    let content_opts = ContentOptions {
        l1: config.kappa_l1,
        ..ContentOptions::default()
    };
    let bfgs = BfgsOptions::default();
    let mut reason = StopReason::MaxIter;

    for iter in 1..=config.max_iter {
        let log_beta = content.log_beta_cube();
        let prior = prior_cache(design, &gamma, &sigma)?;
        let mut counts = ExpectedCounts::zeros(n_levels, k, v);
        let mut bound = 0.0;
        flagged.clear();

        for start in (0..docs.len()).step_by(BATCH) {
            let end = (start + BATCH).min(docs.len());
            let results: Vec<DocResult> = (start..end)
                .into_par_iter()
                .map(|d| {
                    let doc = &docs[d];
                    let level = design.doc_levels()[d];
                    let rows: Vec<&[f64]> = (0..k).map(|t| log_beta[level * k + t].as_slice()).collect();
                    let p = DocPrior {
                        mu: &prior.means[level],
                        sigma_inv: &prior.sigma_inv,
                        log_det_sigma: prior.log_det,
                    };
                    let post = e_step(&doc.features, &rows, &p, &lambda[d], bfgs);
                    let mut expected = Vec::with_capacity(doc.features.len() * k);
                    for (&(w, c), phi) in doc.features.iter().zip(&post.phi) {
                        for t in 0..k {
                            expected.push(((level * k + t) * v + w, c as f64 * phi[t]));
                        }
                    }
                    DocResult {
                        lambda: post.lambda,
                        nu: post.nu,
                        theta: post.theta,
                        bound: post.bound,
                        converged: post.converged,
                        expected,
                    }
                })
                .collect();
            for (i, r) in results.into_iter().enumerate() {
                let d = start + i;
                bound += r.bound;
                for (o, e) in r.expected {
                    counts.data[o] += e;
                }
                if !r.converged {
                    flagged.push(d);
                }
                lambda[d] = r.lambda;
                nu[d] = r.nu;
                theta[d] = r.theta;
            }
        }
        if !bound.is_finite() {
            return Err(Error::NonFiniteBound(iter));
        }
        if !flagged.is_empty() {
            log::warn!(
                "EM iteration {iter}: {} documents hit the E-step iteration cap",
                flagged.len()
            );
        }

        let (g, s) = update_prevalence(design, &lambda, &nu)?;
        gamma = g;
        sigma = s;
        if config.seed_prior_weight > 0.0 {
            add_seed_pseudo_counts(&mut counts, &init.beta, &init.seeds, config.seed_prior_weight);
        }
        update_content(&mut content, &counts, &content_opts);

        let change = match bound_trace.last() {
            None => f64::MAX,
            Some(&prev) => ((bound - prev) / prev).abs(),
        };
        bound_trace.push(bound);
        if iter == 1 {
            log::info!("EM iteration 1: bound {bound:.6e}");
        } else {
            log::info!("EM iteration {iter}: bound {bound:.6e}, relative change {change:.3e}");
        }
        if change < config.emtol {
            reason = StopReason::Emtol;
            break;
        }
    }
    let iterations = bound_trace.len();

    Ok(StmModel {
        config: config.clone(),
        topic_names: init.topic_names,
        countries: corpus.countries.clone(),
        vocab_hash: vocabulary_hash(&corpus.vocabulary),
        terms: design.terms().to_vec(),
        content,
        gamma: to_rows(&gamma),
        sigma: to_rows(&sigma),
        lambda,
        nu,
        theta,
        doc_levels: design.doc_levels().to_vec(),
        bound_trace,
        convergence: Convergence { reason, iterations },
        flagged_docs: flagged,
    })
}

/// Persistent seed prior: each seeded cell receives pseudo-counts
/// proportional to its initial distribution, scaled by the cell's size.
fn add_seed_pseudo_counts(counts: &mut ExpectedCounts, beta0: &[Vec<f64>], seeds: &[Vec<usize>], weight: f64) {
    let (nl, nk) = (counts.n_levels, counts.n_topics);
    for l in 0..nl {
        for t in 0..nk {
            if seeds[t].is_empty() {
                continue;
            }
            let cell = counts.cell_mut(l, t);
            let n: f64 = cell.iter().sum();
            for (c, b) in cell.iter_mut().zip(&beta0[t]) {
                *c += weight * n * b;
            }
        }
    }
}
