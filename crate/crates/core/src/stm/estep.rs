//! Per-document variational step over the logistic-normal topic
//! coordinates `eta` (K - 1 free entries, the last topic pinned at 0).
//!
//! The objective is
//! `f(eta) = sum_v c_v ln sum_k theta_k beta_kv - 0.5 (eta - mu)' Sigma^-1 (eta - mu)`
//! with `theta = softmax(eta, 0)`. It is maximized by BFGS; the variational
//! variances are the inverse diagonal of the negative Hessian at the mode.

use nalgebra::DMatrix;

use super::content::log_sum_exp;
use super::optim::{bfgs, BfgsOptions};

/// Read-only prior for one document.
pub struct DocPrior<'a> {
    pub mu: &'a [f64],
    pub sigma_inv: &'a DMatrix<f64>,
    pub log_det_sigma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DocPosterior {
    pub lambda: Vec<f64>,
    pub nu: Vec<f64>,
    pub theta: Vec<f64>,
    /// Token-topic responsibilities, one row per distinct feature of the document.
    pub phi: Vec<Vec<f64>>,
    pub bound: f64,
    pub converged: bool,
}

#[cfg(test)]
fn theta_of(eta: &[f64]) -> Vec<f64> {
    let mut t: Vec<f64> = eta.iter().copied().chain(std::iter::once(0.0)).collect();
    super::content::softmax_in_place(&mut t);
    t
}

struct Objective<'a> {
    words: &'a [(usize, u32)],
    log_beta: &'a [&'a [f64]],
    prior: &'a DocPrior<'a>,
    n_tokens: f64,
}

impl Objective<'_> {
    fn k(&self) -> usize {
        self.log_beta.len()
    }

    /// Returns (log-likelihood, theta, phi rows).
    fn likelihood(&self, eta: &[f64], want_phi: bool) -> (f64, Vec<f64>, Vec<Vec<f64>>) {
        let k = self.k();
        let mut ext: Vec<f64> = eta.to_vec();
        ext.push(0.0);
        let lse = log_sum_exp(&ext);
        let log_theta: Vec<f64> = ext.iter().map(|e| e - lse).collect();
        let theta: Vec<f64> = log_theta.iter().map(|x| x.exp()).collect();
        let mut ll = 0.0;
        let mut phis = Vec::with_capacity(if want_phi { self.words.len() } else { 0 });
        let mut row = vec![0.0; k];
        for &(v, c) in self.words {
            for t in 0..k {
                row[t] = log_theta[t] + self.log_beta[t][v];
            }
            let lp = log_sum_exp(&row);
            ll += c as f64 * lp;
            if want_phi {
                phis.push(row.iter().map(|x| (x - lp).exp()).collect());
            }
        }
        (ll, theta, phis)
    }

    fn prior_term(&self, eta: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let n = eta.len();
        let r: Vec<f64> = eta.iter().zip(self.prior.mu).map(|(e, m)| e - m).collect();
        let mut quad = 0.0;
        let mut sr = vec![0.0; n];
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..n {
                acc += self.prior.sigma_inv[(i, j)] * r[j];
            }
            sr[i] = acc;
            quad += r[i] * acc;
        }
        if let Some(g) = grad {
            g.copy_from_slice(&sr);
        }
        0.5 * quad
    }

    /// Negative objective and its gradient.
    fn eval(&self, eta: &[f64], grad: &mut [f64]) -> f64 {
        let k = self.k();
        let mut ext: Vec<f64> = eta.to_vec();
        ext.push(0.0);
        let lse = log_sum_exp(&ext);
        let log_theta: Vec<f64> = ext.iter().map(|e| e - lse).collect();
        let mut ll = 0.0;
        let mut phi_sum = vec![0.0; k];
        let mut row = vec![0.0; k];
        for &(v, c) in self.words {
            for t in 0..k {
                row[t] = log_theta[t] + self.log_beta[t][v];
            }
            let lp = log_sum_exp(&row);
            let c = c as f64;
            ll += c * lp;
            for t in 0..k {
                phi_sum[t] += c * (row[t] - lp).exp();
            }
        }
        let prior = self.prior_term(eta, Some(grad));
        // grad currently holds Sigma^-1 (eta - mu).
        for i in 0..k - 1 {
            grad[i] -= phi_sum[i] - self.n_tokens * log_theta[i].exp();
        }
        prior - ll
    }
}

/// Optimizes one document's variational parameters starting from `init`.
pub fn e_step(
    words: &[(usize, u32)],
    log_beta: &[&[f64]],
    prior: &DocPrior,
    init: &[f64],
    opts: BfgsOptions,
) -> DocPosterior {
    let k = log_beta.len();
    debug_assert_eq!(init.len(), k - 1);
    let n_tokens: f64 = words.iter().map(|w| w.1 as f64).sum();
    let obj = Objective {
        words,
        log_beta,
        prior,
        n_tokens,
    };
    let start_value = obj.eval(init, &mut vec![0.0; k - 1]);
    let min = bfgs(|x, g| obj.eval(x, g), init, opts);
    let (lambda, converged) = if min.value.is_finite() && min.value <= start_value {
        (min.x, min.converged)
    } else {
        (init.to_vec(), false)
    };

    let (ll, theta, phi) = obj.likelihood(&lambda, true);
    let prior_quad = obj.prior_term(&lambda, None);

    // Diagonal of the negative Hessian:
    // Sigma^-1_ii + N theta_i (1 - theta_i) - sum_v c_v phi_vi (1 - phi_vi).
    // Floored at the prior precision.
    let nu: Vec<f64> = (0..k - 1)
        .map(|i| {
            let data: f64 = words
                .iter()
                .zip(&phi)
                .map(|(&(_, c), p)| c as f64 * p[i] * (1.0 - p[i]))
                .sum();
            let prior_prec = prior.sigma_inv[(i, i)];
            let prec = prior_prec + n_tokens * theta[i] * (1.0 - theta[i]) - data;
            1.0 / prec.max(prior_prec)
        })
        .collect();
    let half_log_det_nu: f64 = 0.5 * nu.iter().map(|x| x.ln()).sum::<f64>();
    let bound = ll - prior_quad + half_log_det_nu - 0.5 * prior.log_det_sigma;

    DocPosterior {
        lambda,
        nu,
        theta,
        phi,
        bound,
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_prior(n: usize) -> (Vec<f64>, DMatrix<f64>) {
        (vec![0.0; n], DMatrix::identity(n, n))
    }

    #[test]
    fn identical_topics_leave_prior_proportions() {
        let lb = [(0.5f64).ln(), (0.5f64).ln()];
        let log_beta = [&lb[..], &lb[..]];
        let (_, si) = identity_prior(1);
        let mu = vec![0.7];
        let prior = DocPrior {
            mu: &mu,
            sigma_inv: &si,
            log_det_sigma: 0.0,
        };
        let post = e_step(&[(0, 3), (1, 2)], &log_beta, &prior, &[0.0], BfgsOptions::default());
        assert!((post.lambda[0] - 0.7).abs() < 1e-6);
        for row in &post.phi {
            for t in 0..2 {
                assert!((row[t] - post.theta[t]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matches_grid_search_for_three_topics() {
        let b = [
            vec![0.5f64, 0.3, 0.1, 0.1],
            vec![0.1, 0.1, 0.6, 0.2],
            vec![0.25, 0.25, 0.25, 0.25],
        ];
        let lb: Vec<Vec<f64>> = b.iter().map(|r| r.iter().map(|x| x.ln()).collect()).collect();
        let log_beta: Vec<&[f64]> = lb.iter().map(|r| r.as_slice()).collect();
        let mu = vec![0.2, -0.1];
        let si = DMatrix::from_row_slice(2, 2, &[1.5, 0.3, 0.3, 0.8]);
        let prior = DocPrior {
            mu: &mu,
            sigma_inv: &si,
            log_det_sigma: 0.0,
        };
        let words = [(0, 4u32), (1, 1), (2, 3), (3, 2)];
        let post = e_step(&words, &log_beta, &prior, &[0.0, 0.0], BfgsOptions::default());

        let objective = |eta: &[f64]| {
            let th = theta_of(eta);
            let ll: f64 = words
                .iter()
                .map(|&(v, c)| c as f64 * (0..3).map(|k| th[k] * b[k][v]).sum::<f64>().ln())
                .sum();
            let r = [eta[0] - mu[0], eta[1] - mu[1]];
            let q = r[0] * (si[(0, 0)] * r[0] + si[(0, 1)] * r[1]) + r[1] * (si[(1, 0)] * r[0] + si[(1, 1)] * r[1]);
            ll - 0.5 * q
        };
        // Coarse grid then a fine grid around the best cell.
        let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
        let search = |c0: f64, c1: f64, half: f64, steps: i32, best: &mut (f64, f64, f64)| {
            for i in -steps..=steps {
                for j in -steps..=steps {
                    let e = [c0 + half * i as f64 / steps as f64, c1 + half * j as f64 / steps as f64];
                    let f = objective(&e);
                    if f > best.0 {
                        *best = (f, e[0], e[1]);
                    }
                }
            }
        };
        search(0.0, 0.0, 4.0, 200, &mut best);
        let (c0, c1) = (best.1, best.2);
        search(c0, c1, 0.04, 200, &mut best);
        assert!(
            (post.lambda[0] - best.1).abs() < 1e-3,
            "{:?} vs {:?}",
            post.lambda,
            best
        );
        assert!((post.lambda[1] - best.2).abs() < 1e-3);
    }

    #[test]
    fn degenerate_likelihood_assigns_all_mass() {
        let b1 = [0.0, f64::NEG_INFINITY];
        let b2 = [f64::NEG_INFINITY, 0.0];
        let log_beta = [&b1[..], &b2[..]];
        let (mu, si) = identity_prior(1);
        let prior = DocPrior {
            mu: &mu,
            sigma_inv: &si,
            log_det_sigma: 0.0,
        };
        let post = e_step(&[(0, 1)], &log_beta, &prior, &[0.0], BfgsOptions::default());
        assert!((post.phi[0][0] - 1.0).abs() < 1e-15);
        assert!(post.bound.is_finite());
        let s: f64 = post.theta.iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
    }
}
