//! Probit/logit retention models and inverse-probability weights.
//!
//! The retention design is intercept + treatment + IPW covariates over the
//! full sample (respondents and attriters). Fitting is Newton–Raphson with
//! the analytic Hessian and step halving.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Link, ModelSpec, SeparationPolicy};
use crate::dist::{ln_normal_cdf, logistic, mills_ratio, normal_cdf, softplus};
use crate::error::{Error, Result};
use crate::linalg::{cholesky_solve, Matrix, Qr};
use crate::regression::{self, FitResult, INTERCEPT};

/// Fitted probabilities are clamped to at least this before inversion.
pub const P_FLOOR: f64 = 1e-3;
pub const MAX_ITERATIONS: usize = 50;
pub const GRADIENT_TOL: f64 = 1e-8;
/// A coefficient beyond this on the link scale with a still-improving
/// likelihood is treated as separation.
pub const SEPARATION_BOUND: f64 = 15.0;
/// Total log-likelihood this close to zero means the response is perfectly
/// predicted, even if the saturated gradient has already vanished.
const PERFECT_FIT_LOGLIK: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IpwFit {
    /// Intercept, treatment, then IPW covariates.
    pub coefficients: Vec<f64>,
    /// Retention probability for every row, clamped into `[P_FLOOR, 1)`.
    pub fitted_probs: Vec<f64>,
    /// `1 / p̂ᵢ` for the respondent rows, in row order.
    pub weights: Vec<f64>,
    pub link: Link,
    pub converged: bool,
    pub iterations: usize,
    pub log_likelihood: f64,
}

/// Result of a binary-response maximum-likelihood fit.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryFit {
    pub coefficients: Vec<f64>,
    pub iterations: usize,
    pub log_likelihood: f64,
    /// Log-likelihood at each accepted iterate, starting point first.
    pub path: Vec<f64>,
}

struct Eval {
    loglik: f64,
    grad: Vec<f64>,
    /// Negative Hessian, row-major.
    info: Vec<f64>,
}

fn evaluate(x: &Matrix, r: &[u8], link: Link, beta: &[f64], with_derivs: bool) -> Eval {
    let (n, p) = (x.rows(), x.cols());
    let mut loglik = 0.0;
    let mut grad = vec![0.0; if with_derivs { p } else { 0 }];
    let mut info = vec![0.0; if with_derivs { p * p } else { 0 }];
    let mut row = vec![0.0; p];
    for i in 0..n {
        for (j, v) in row.iter_mut().enumerate() {
            *v = x.get(i, j);
        }
        let eta: f64 = row.iter().zip(beta).map(|(a, b)| a * b).sum();
        let (ll, score, curv) = match link {
            Link::Probit => {
                // q = ±1 folds both outcomes into Φ(qη).
                let q = if r[i] == 1 { 1.0 } else { -1.0 };
                let ll = ln_normal_cdf(q * eta);
                if !with_derivs {
                    (ll, 0.0, 0.0)
                } else {
                    let lambda = q * mills_ratio(q * eta);
                    (ll, lambda, lambda * (lambda + eta))
                }
            }
            Link::Logit => {
                let ri = f64::from(r[i]);
                let ll = ri * eta - softplus(eta);
                if !with_derivs {
                    (ll, 0.0, 0.0)
                } else {
                    let pr = logistic(eta);
                    (ll, ri - pr, pr * (1.0 - pr))
                }
            }
        };
        loglik += ll;
        if with_derivs {
            for a in 0..p {
                grad[a] += score * row[a];
                for b in 0..=a {
                    info[a * p + b] += curv * row[a] * row[b];
                }
            }
        }
    }
    if with_derivs {
        for a in 0..p {
            for b in 0..a {
                info[b * p + a] = info[a * p + b];
            }
        }
    }
    Eval { loglik, grad, info }
}

/// Maximizes the Bernoulli log-likelihood of `r` given design `x`.
pub fn fit_binary(x: &Matrix, r: &[u8], link: Link, start: Option<&[f64]>) -> Result<BinaryFit> {
    let p = x.cols();
    let mut beta = start.map_or_else(|| vec![0.0; p], <[f64]>::to_vec);
    let mut current = evaluate(x, r, link, &beta, true);
    let mut path = vec![current.loglik];
    for iteration in 0..=MAX_ITERATIONS {
        let gmax = current.grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if gmax < GRADIENT_TOL {
            if current.loglik > -PERFECT_FIT_LOGLIK {
                // Every observation predicted with certainty.
                return Err(separation(&beta, &beta));
            }
            return Ok(BinaryFit {
                coefficients: beta,
                iterations: iteration,
                log_likelihood: current.loglik,
                path,
            });
        }
        if iteration == MAX_ITERATIONS {
            break;
        }
        let step = cholesky_solve(&current.info, &current.grad, p).ok_or_else(|| {
            // Information matrix lost definiteness: probabilities saturated.
            separation(&beta, &beta)
        })?;
        // Once the predicted gain is below the resolution of the
        // log-likelihood, take the full Newton step without a line search.
        let predicted: f64 = current.grad.iter().zip(&step).map(|(g, s)| g * s).sum();
        let resolution = 1e-12 * (1.0 + current.loglik.abs());
        let mut scale = 1.0;
        let mut candidate: Vec<f64>;
        let mut cand_ll;
        let mut halvings = 0;
        loop {
            candidate = beta.iter().zip(&step).map(|(b, s)| b + scale * s).collect();
            cand_ll = evaluate(x, r, link, &candidate, false).loglik;
            if cand_ll >= current.loglik || predicted < resolution || halvings == 40 {
                break;
            }
            scale *= 0.5;
            halvings += 1;
        }
        if cand_ll < current.loglik - resolution {
            // No ascent direction left at working precision.
            break;
        }
        let improving = cand_ll > current.loglik + resolution;
        if improving && largest(&candidate).1.abs() > SEPARATION_BOUND {
            return Err(separation(&candidate, &beta));
        }
        beta = candidate;
        current = evaluate(x, r, link, &beta, true);
        path.push(current.loglik);
    }
    Err(Error::Convergence {
        iterations: MAX_ITERATIONS,
        coefficients: beta,
    })
}

fn separation(offending: &[f64], last: &[f64]) -> Error {
    let (index, value) = largest(offending);
    Error::Separation {
        index,
        value,
        coefficients: last.to_vec(),
    }
}

fn largest(v: &[f64]) -> (usize, f64) {
    v.iter()
        .copied()
        .enumerate()
        .fold((0, 0.0), |acc, (i, b)| if b.abs() > acc.1.abs() { (i, b) } else { acc })
}

pub fn inverse_link(link: Link, eta: f64) -> f64 {
    match link {
        Link::Probit => normal_cdf(eta),
        Link::Logit => logistic(eta),
    }
}

/// Retention design and response for one outcome, reusable across permuted
/// treatment vectors.
#[derive(Debug, Clone)]
pub struct RetentionModel {
    outcome: String,
    x: Matrix,
    response: Vec<u8>,
    link: Link,
    policy: SeparationPolicy,
}

impl RetentionModel {
    pub fn new(ds: &Dataset, outcome: &str, covariates: &[String], link: Link) -> Result<Self> {
        let o = ds
            .outcome(outcome)
            .ok_or_else(|| Error::UnknownColumn(outcome.to_string()))?;
        let response = o.response();
        let observed = response.iter().filter(|&&r| r == 1).count();
        if observed == response.len() {
            return Err(Error::DegenerateResponse {
                outcome: outcome.to_string(),
                reason: "every outcome is observed",
            });
        }
        if observed == 0 {
            return Err(Error::DegenerateResponse {
                outcome: outcome.to_string(),
                reason: "no outcome is observed",
            });
        }
        let n = ds.n_rows();
        let mut cols: Vec<Vec<f64>> = vec![vec![1.0; n], ds.treatment().iter().map(|&d| f64::from(d)).collect()];
        let mut names = vec![INTERCEPT.to_string(), ds.treatment_name().to_string()];
        for (name, values) in regression::lookup(ds, covariates)? {
            cols.push(values.to_vec());
            names.push(name.to_string());
        }
        let x = Matrix::from_columns(&cols);
        if let Err(e) = Qr::factor(x.clone()) {
            return Err(Error::SingularDesign {
                column: names[e.column].clone(),
            });
        }
        Ok(Self {
            outcome: outcome.to_string(),
            x,
            response,
            link,
            policy: SeparationPolicy::Fail,
        })
    }

    pub fn with_policy(mut self, policy: SeparationPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn response(&self) -> &[u8] {
        &self.response
    }

    /// Fits with `treatment` substituted for the observed assignment.
    pub fn fit(&mut self, treatment: Option<&[u8]>, start: Option<&[f64]>) -> Result<IpwFit> {
        if let Some(d) = treatment {
            for (x, &v) in self.x.col_mut(1).iter_mut().zip(d) {
                *x = f64::from(v);
            }
        }
        let (bf, converged) = match fit_binary(&self.x, &self.response, self.link, start) {
            Ok(bf) => (bf, true),
            Err(Error::Separation { coefficients, .. }) if self.policy == SeparationPolicy::Truncate => {
                let log_likelihood = evaluate(&self.x, &self.response, self.link, &coefficients, false).loglik;
                let bf = BinaryFit {
                    coefficients,
                    iterations: 0,
                    log_likelihood,
                    path: Vec::new(),
                };
                (bf, false)
            }
            Err(e) => return Err(e),
        };
        let eta = self.x.mul_vec(&bf.coefficients);
        let upper = 1.0 - f64::EPSILON;
        let fitted_probs: Vec<f64> = eta
            .iter()
            .map(|&e| inverse_link(self.link, e).clamp(P_FLOOR, upper))
            .collect();
        let weights = fitted_probs
            .iter()
            .zip(&self.response)
            .filter(|(_, &r)| r == 1)
            .map(|(p, _)| 1.0 / p)
            .collect();
        Ok(IpwFit {
            coefficients: bf.coefficients,
            fitted_probs,
            weights,
            link: self.link,
            converged,
            iterations: bf.iterations,
            log_likelihood: bf.log_likelihood,
        })
    }

    pub fn outcome(&self) -> &str {
        &self.outcome
    }
}

/// Retention model for `outcome`, optionally under a permuted treatment.
pub fn fit_retention(
    ds: &Dataset,
    outcome: &str,
    spec: &ModelSpec,
    treatment_override: Option<&[u8]>,
) -> Result<IpwFit> {
    let k = spec
        .outcome_names
        .iter()
        .position(|n| n == outcome)
        .unwrap_or(0);
    let mut model = RetentionModel::new(ds, outcome, spec.ipw_for(k), spec.link)?.with_policy(spec.separation);
    model.fit(treatment_override, None)
}

/// Weighted refit of the outcome model with IPW weights.
pub fn apply_ipw(ds: &Dataset, spec: &ModelSpec, outcome: &str, ipw: &IpwFit) -> Result<FitResult> {
    regression::ols_fit(ds, outcome, spec, Some(&ipw.weights))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Covariate, Outcome};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn attrition_data(n: usize, coeffs: (f64, f64, f64), link_noise_logistic: bool, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut d = Vec::new();
        let mut w = Vec::new();
        let mut y = Vec::new();
        for _ in 0..n {
            let di = u8::from(rng.sample::<f64, _>(StandardNormal) < 0.0);
            let wi: f64 = rng.sample(StandardNormal);
            let v: f64 = if link_noise_logistic {
                let u: f64 = rng.random();
                libm::log(u / (1.0 - u))
            } else {
                rng.sample(StandardNormal)
            };
            let e: f64 = rng.sample(StandardNormal);
            let observed = coeffs.0 + coeffs.1 * f64::from(di) + coeffs.2 * wi + v > 0.0;
            d.push(di);
            w.push(wi);
            y.push(observed.then_some(0.5 * f64::from(di) + 1.5 * wi + e));
        }
        Dataset::new(vec![Outcome::new("y", y)], "D", d, vec![Covariate::new("W", w)]).unwrap()
    }

    #[test]
    fn intercept_only_matches_closed_form() {
        let r = [1u8, 1, 0, 1, 1, 0, 1, 1, 0, 1];
        let x = Matrix::from_columns(&[vec![1.0; 10]]);
        for link in [Link::Probit, Link::Logit] {
            let fit = fit_binary(&x, &r, link, None).unwrap();
            let p = inverse_link(link, fit.coefficients[0]);
            assert!((p - 0.7).abs() < 1e-8, "{link:?}: {p}");
        }
    }

    #[test]
    fn recovers_retention_coefficients() {
        let ds = attrition_data(5000, (0.1, 0.25, 3.75), false, 77);
        let spec = ModelSpec::new(&["y"], "D").with_ipw(&["W"]);
        let fit = fit_retention(&ds, "y", &spec, None).unwrap();
        let b = &fit.coefficients;
        // Loose band; the acceptance suite pins the 3-SE criterion.
        assert!((b[0] - 0.1).abs() < 0.15, "{b:?}");
        assert!((b[1] - 0.25).abs() < 0.2, "{b:?}");
        assert!((b[2] - 3.75).abs() < 0.5, "{b:?}");
        assert!(fit.converged);
        assert!(fit.weights.iter().all(|w| *w >= 1.0));
    }

    #[test]
    fn probit_and_logit_rank_agree() {
        let ds = attrition_data(400, (0.3, 0.2, 0.8), true, 5);
        let mut spec = ModelSpec::new(&["y"], "D").with_ipw(&["W"]);
        let a = fit_retention(&ds, "y", &spec, None).unwrap();
        spec.link = Link::Logit;
        let b = fit_retention(&ds, "y", &spec, None).unwrap();
        // Within an arm both fits are monotone in W alone, so the orderings
        // coincide exactly; across arms the D/W coefficient ratios differ
        // slightly between links.
        let n = ds.n_rows();
        let d = ds.treatment();
        let mut concordant = 0usize;
        let mut pairs = 0usize;
        for i in 0..n {
            for j in 0..i {
                let pa = a.fitted_probs[i] - a.fitted_probs[j];
                let pb = b.fitted_probs[i] - b.fitted_probs[j];
                if d[i] == d[j] {
                    assert!(pa * pb > 0.0 || pa == 0.0 && pb == 0.0);
                }
                pairs += 1;
                concordant += usize::from(pa * pb >= 0.0);
            }
        }
        assert!(concordant as f64 / pairs as f64 > 0.99);
    }

    #[test]
    fn independent_response_gives_flat_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let n = 2000;
        let d: Vec<u8> = (0..n).map(|_| u8::from(rng.random::<f64>() < 0.5)).collect();
        let w: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let y: Vec<Option<f64>> = (0..n).map(|_| (rng.random::<f64>() < 0.7).then_some(1.0)).collect();
        let mean_r = y.iter().filter(|v| v.is_some()).count() as f64 / n as f64;
        let ds = Dataset::new(vec![Outcome::new("y", y)], "D", d, vec![Covariate::new("W", w)]).unwrap();
        let fit = fit_retention(&ds, "y", &ModelSpec::new(&["y"], "D").with_ipw(&["W"]), None).unwrap();
        assert!(fit.coefficients[1].abs() < 0.1 && fit.coefficients[2].abs() < 0.1);
        let avg = fit.weights.iter().sum::<f64>() / fit.weights.len() as f64;
        assert!((avg - 1.0 / mean_r).abs() < 0.05, "{avg} vs {}", 1.0 / mean_r);
        let spread = fit.weights.iter().fold(0.0f64, |m, w| m.max((w - avg).abs()));
        assert!(spread < 0.25 * avg);
    }

    #[test]
    fn all_respondents_is_degenerate() {
        let ds = Dataset::new(
            vec![Outcome::new("y", vec![Some(1.0); 4])],
            "D",
            vec![0, 1, 0, 1],
            vec![],
        )
        .unwrap();
        let err = fit_retention(&ds, "y", &ModelSpec::new(&["y"], "D"), None).unwrap_err();
        assert!(matches!(err, Error::DegenerateResponse { .. }));
    }

    #[test]
    fn complete_separation_is_detected() {
        let w = vec![-2.0, -1.5, -1.0, -0.5, 0.5, 1.0, 1.5, 2.0];
        let y = w.iter().map(|&v| (v > 0.0).then_some(1.0)).collect();
        let ds = Dataset::new(
            vec![Outcome::new("y", y)],
            "D",
            vec![0, 1, 0, 1, 0, 1, 0, 1],
            vec![Covariate::new("W", w)],
        )
        .unwrap();
        let err = fit_retention(&ds, "y", &ModelSpec::new(&["y"], "D").with_ipw(&["W"]), None).unwrap_err();
        assert!(matches!(err, Error::Separation { index: 2, .. }), "{err:?}");
    }

    #[test]
    fn zero_slope_retention_reproduces_ols() {
        // Retention independent of D and W in-sample: intercept-only structure
        // gives constant weights, hence the unweighted estimate.
        let ds = Dataset::new(
            vec![Outcome::new("y", vec![Some(1.0), None, Some(2.5), None, None, Some(1.1), Some(2.0), None])],
            "D",
            vec![0, 0, 1, 1, 0, 1, 0, 1],
            vec![],
        )
        .unwrap();
        let spec = ModelSpec::new(&["y"], "D");
        let mut ipw = fit_retention(&ds, "y", &spec, None).unwrap();
        // Balanced attrition by arm: D slope is exactly zero at the optimum.
        assert!(ipw.coefficients[1].abs() < 1e-7);
        let weighted = apply_ipw(&ds, &spec, "y", &ipw).unwrap();
        let plain = regression::ols_fit(&ds, "y", &spec, None).unwrap();
        assert!((weighted.gamma_hat - plain.gamma_hat).abs() < 1e-10);
        ipw.weights = vec![2.0; ipw.weights.len()];
        let weighted = apply_ipw(&ds, &spec, "y", &ipw).unwrap();
        assert!((weighted.t_stat - plain.t_stat).abs() < 1e-10);
    }

    #[test]
    fn loglik_never_decreases() {
        for link in [Link::Probit, Link::Logit] {
            let ds = attrition_data(300, (0.1, 0.25, 3.75), false, 9);
            let model = RetentionModel::new(&ds, "y", &["W".to_string()], link).unwrap();
            let fit = fit_binary(&model.x, &model.response, link, None).unwrap();
            assert!(fit.path.windows(2).all(|w| w[1] >= w[0] - 1e-12 * w[0].abs()), "{:?}", fit.path);
            let fin = evaluate(&model.x, &model.response, link, &fit.coefficients, true);
            assert!(fin.grad.iter().all(|g| g.abs() < GRADIENT_TOL));
        }
    }

    #[test]
    fn fit_is_deterministic() {
        let ds = attrition_data(200, (0.1, 0.25, 1.0), false, 12);
        let spec = ModelSpec::new(&["y"], "D").with_ipw(&["W"]);
        assert_eq!(fit_retention(&ds, "y", &spec, None), fit_retention(&ds, "y", &spec, None));
    }
}
