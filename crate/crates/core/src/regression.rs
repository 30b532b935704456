//! Ordinary and weighted least squares for the treatment-effect model
//! `y = γ·D + βᵀX + ε`, with classical or HC1 standard errors.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, ModelSpec};
use crate::dist::student_t_sf;
use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix, Qr};

pub const INTERCEPT: &str = "_cons";

/// Regressors for one fit: optional intercept, treatment, conditioning
/// covariates, in that order, restricted to the respondent rows.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    names: Vec<String>,
    x: Matrix,
    treatment_index: Option<usize>,
}

impl DesignMatrix {
    /// `treatment` is `None` for the reduced (nuisance-only) model.
    pub fn new(
        rows: &[usize],
        include_intercept: bool,
        treatment: Option<(&str, &[u8])>,
        covariates: &[(&str, &[f64])],
    ) -> Self {
        let mut names = Vec::new();
        let mut cols: Vec<Vec<f64>> = Vec::new();
        if include_intercept {
            names.push(INTERCEPT.to_string());
            cols.push(alloc::vec![1.0; rows.len()]);
        }
        let treatment_index = treatment.map(|(name, d)| {
            names.push(name.to_string());
            cols.push(rows.iter().map(|&i| f64::from(d[i])).collect());
            names.len() - 1
        });
        for (name, values) in covariates {
            names.push(name.to_string());
            cols.push(rows.iter().map(|&i| values[i]).collect());
        }
        Self {
            names,
            x: Matrix::from_columns(&cols),
            treatment_index,
        }
    }

    /// Design for `outcome` under `spec`, with the treatment vector replaced
    /// by `treatment` (full length, e.g. a permuted assignment).
    pub fn for_outcome(ds: &Dataset, spec: &ModelSpec, rows: &[usize], treatment: Option<&[u8]>) -> Result<Self> {
        let covs = lookup(ds, &spec.lc_names)?;
        Ok(Self::new(
            rows,
            spec.include_intercept,
            treatment.map(|d| (ds.treatment_name(), d)),
            &covs,
        ))
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn matrix(&self) -> &Matrix {
        &self.x
    }

    pub fn treatment_index(&self) -> Option<usize> {
        self.treatment_index
    }

    /// Replaces the treatment column (respondent rows only).
    pub fn set_treatment(&mut self, rows: &[usize], d: &[u8]) {
        let j = self.treatment_index.expect("design has no treatment column");
        for (x, &i) in self.x.col_mut(j).iter_mut().zip(rows) {
            *x = f64::from(d[i]);
        }
    }
}

pub(crate) fn lookup<'a>(ds: &'a Dataset, names: &'a [String]) -> Result<Vec<(&'a str, &'a [f64])>> {
    names
        .iter()
        .map(|n| {
            ds.covariate(n)
                .map(|c| (n.as_str(), c))
                .ok_or_else(|| Error::UnknownColumn(n.clone()))
        })
        .collect()
}

/// Least-squares solution shared by full and reduced fits.
#[derive(Debug, Clone)]
pub struct LeastSquares {
    pub coefficients: Vec<f64>,
    pub fitted: Vec<f64>,
    pub residuals: Vec<f64>,
    pub dof: usize,
    qr: Qr,
    sqrt_w: Option<Vec<f64>>,
}

pub fn least_squares(design: &DesignMatrix, y: &[f64], weights: Option<&[f64]>) -> Result<LeastSquares> {
    let x = &design.x;
    let (n, p) = (x.rows(), x.cols());
    assert_eq!(y.len(), n, "outcome length does not match design rows");
    if n <= p {
        return Err(Error::InsufficientData { rows: n, columns: p });
    }
    let sqrt_w = match weights {
        None => None,
        Some(w) => {
            if w.len() != n {
                return Err(Error::InvalidWeights(alloc::format!("{} weights for {n} rows", w.len())));
            }
            if let Some(bad) = w.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
                return Err(Error::InvalidWeights(alloc::format!("weight {bad} is not strictly positive")));
            }
            Some(w.iter().map(|v| libm::sqrt(*v)).collect::<Vec<_>>())
        }
    };
    let (xw, yw) = match &sqrt_w {
        None => (x.clone(), y.to_vec()),
        Some(s) => {
            let mut xw = x.clone();
            for j in 0..p {
                for (v, sw) in xw.col_mut(j).iter_mut().zip(s) {
                    *v *= sw;
                }
            }
            (xw, y.iter().zip(s).map(|(a, b)| a * b).collect())
        }
    };
    let qr = Qr::factor(xw).map_err(|e| Error::SingularDesign {
        column: design.names.get(e.column).cloned().unwrap_or_default(),
    })?;
    let coefficients = qr.solve(&yw);
    let fitted = x.mul_vec(&coefficients);
    let residuals = y.iter().zip(&fitted).map(|(a, b)| a - b).collect();
    Ok(LeastSquares {
        coefficients,
        fitted,
        residuals,
        dof: n - p,
        qr,
        sqrt_w,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub gamma_hat: f64,
    /// Coefficients other than the treatment's, in design order.
    pub beta_hat: Vec<f64>,
    pub se_gamma: f64,
    pub t_stat: f64,
    pub p_asym_1s: f64,
    pub p_asym_2s: f64,
    pub residuals: Vec<f64>,
    pub fitted: Vec<f64>,
    pub dof: usize,
    pub robust: bool,
    pub ipw: bool,
}

/// Fits the full model and studentizes the treatment coefficient.
pub fn fit_design(design: &DesignMatrix, y: &[f64], weights: Option<&[f64]>, robust: bool) -> Result<FitResult> {
    let t_idx = design
        .treatment_index
        .ok_or_else(|| Error::Config("design has no treatment column".into()))?;
    let ls = least_squares(design, y, weights)?;
    let n = y.len();
    let (inv_col, z) = ls.qr.inverse_gram_column(t_idx);
    let var = if robust {
        // HC1 on the √w-scaled problem: Σ ẽᵢ² (cᵀx̃ᵢ)² · n/dof.
        let x = &design.x;
        let mut acc = 0.0;
        for i in 0..n {
            let sw = ls.sqrt_w.as_ref().map_or(1.0, |s| s[i]);
            let mut lin = 0.0;
            for (j, c) in inv_col.iter().enumerate() {
                lin += c * x.get(i, j);
            }
            let e = ls.residuals[i] * sw;
            acc += (e * lin * sw) * (e * lin * sw);
        }
        acc * n as f64 / ls.dof as f64
    } else {
        let rss: f64 = match &ls.sqrt_w {
            None => dot(&ls.residuals, &ls.residuals),
            Some(s) => ls.residuals.iter().zip(s).map(|(e, w)| (e * w) * (e * w)).sum(),
        };
        rss / ls.dof as f64 * dot(&z, &z)
    };
    let gamma_hat = ls.coefficients[t_idx];
    let se_gamma = libm::sqrt(var);
    let t_stat = gamma_hat / se_gamma;
    let dof = ls.dof as f64;
    let p1 = student_t_sf(t_stat, dof);
    let p2 = (2.0 * student_t_sf(t_stat.abs(), dof)).min(1.0);
    let beta_hat = ls
        .coefficients
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != t_idx)
        .map(|(_, b)| *b)
        .collect();
    Ok(FitResult {
        gamma_hat,
        beta_hat,
        se_gamma,
        t_stat,
        p_asym_1s: p1,
        p_asym_2s: p2,
        residuals: ls.residuals,
        fitted: ls.fitted,
        dof: ls.dof,
        robust,
        ipw: weights.is_some(),
    })
}

/// Observed outcome values on the respondent rows, sign-flipped under
/// `spec.reverse`.
pub fn respondent_outcome(ds: &Dataset, outcome: &str, spec: &ModelSpec) -> Result<(Vec<usize>, Vec<f64>)> {
    let o = ds
        .outcome(outcome)
        .ok_or_else(|| Error::UnknownColumn(outcome.to_string()))?;
    let sign = if spec.reverse { -1.0 } else { 1.0 };
    let rows = o.respondents();
    let y = rows.iter().map(|&i| sign * o.values[i].unwrap_or(f64::NAN)).collect();
    Ok((rows, y))
}

/// Fits `outcome` on treatment and the conditioning covariates over the
/// outcome's respondents. `weights`, if given, has one entry per respondent.
pub fn ols_fit(ds: &Dataset, outcome: &str, spec: &ModelSpec, weights: Option<&[f64]>) -> Result<FitResult> {
    let (rows, y) = respondent_outcome(ds, outcome, spec)?;
    let design = DesignMatrix::for_outcome(ds, spec, &rows, Some(ds.treatment()))?;
    fit_design(&design, &y, weights, spec.robust)
}

/// Treatment effect in control-group standard deviations.
pub fn effect_size(fr: &FitResult, ds: &Dataset, outcome: &str) -> Result<f64> {
    let o = ds
        .outcome(outcome)
        .ok_or_else(|| Error::UnknownColumn(outcome.to_string()))?;
    let control: Vec<f64> = o
        .values
        .iter()
        .zip(ds.treatment())
        .filter_map(|(v, &d)| if d == 0 { *v } else { None })
        .collect();
    let degenerate = || Error::DegenerateScale {
        outcome: outcome.to_string(),
    };
    if control.len() < 2 {
        return Err(degenerate());
    }
    let m = control.iter().sum::<f64>() / control.len() as f64;
    let var = control.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (control.len() - 1) as f64;
    if !(var > 0.0) {
        return Err(degenerate());
    }
    Ok(fr.gamma_hat / libm::sqrt(var))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Covariate, Outcome};
    use alloc::vec;
    use alloc::vec::Vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn dataset(y: &[f64], d: &[u8], covs: Vec<Covariate>) -> Dataset {
        Dataset::new(
            vec![Outcome::new("y", y.iter().map(|v| Some(*v)).collect())],
            "D",
            d.to_vec(),
            covs,
        )
        .unwrap()
    }

    fn simulated(n: usize, seed: u64) -> (Vec<f64>, Vec<u8>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d: Vec<u8> = (0..n)
            .map(|_| u8::from(rng.sample::<f64, _>(StandardNormal) < 0.0))
            .collect();
        let y = d
            .iter()
            .map(|&di| 0.8 * f64::from(di) + rng.sample::<f64, _>(StandardNormal))
            .collect();
        (y, d)
    }

    #[test]
    fn perfect_fit() {
        let ds = dataset(&[1.0, 1.0, 0.0, 0.0], &[1, 1, 0, 0], vec![]);
        let fr = ols_fit(&ds, "y", &ModelSpec::new(&["y"], "D"), None).unwrap();
        assert!((fr.gamma_hat - 1.0).abs() < 1e-12);
        assert!(fr.residuals.iter().all(|e| e.abs() < 1e-12));
    }

    #[test]
    fn matches_two_by_two_normal_equations() {
        let (y, d) = simulated(20, 11);
        let ds = dataset(&y, &d, vec![]);
        let fr = ols_fit(&ds, "y", &ModelSpec::new(&["y"], "D"), None).unwrap();
        // Oracle: invert XᵀX = [[n, s], [s, s]] explicitly.
        let n = y.len() as f64;
        let s: f64 = d.iter().map(|&v| f64::from(v)).sum();
        let sy: f64 = y.iter().sum();
        let sdy: f64 = y.iter().zip(&d).map(|(a, &b)| a * f64::from(b)).sum();
        let det = n * s - s * s;
        let b0 = (s * sy - s * sdy) / det;
        let b1 = (-s * sy + n * sdy) / det;
        assert!((fr.gamma_hat - b1).abs() < 1e-12, "{} vs {b1}", fr.gamma_hat);
        assert!((fr.beta_hat[0] - b0).abs() < 1e-12);
        // Classical SE oracle: σ̂² · n/det.
        let rss: f64 = y
            .iter()
            .zip(&d)
            .map(|(a, &b)| {
                let e = a - b0 - b1 * f64::from(b);
                e * e
            })
            .sum();
        let se = libm::sqrt(rss / (n - 2.0) * n / det);
        assert!((fr.se_gamma - se).abs() < 1e-12);
        assert_eq!(fr.dof, 18);
    }

    #[test]
    fn constant_weights_leave_inference_unchanged() {
        let (y, d) = simulated(30, 5);
        let ds = dataset(&y, &d, vec![]);
        for robust in [false, true] {
            let mut spec = ModelSpec::new(&["y"], "D");
            spec.robust = robust;
            let a = ols_fit(&ds, "y", &spec, None).unwrap();
            let b = ols_fit(&ds, "y", &spec, Some(&vec![3.7; 30])).unwrap();
            assert!((a.gamma_hat - b.gamma_hat).abs() < 1e-12);
            assert!((a.se_gamma - b.se_gamma).abs() < 1e-12);
            assert!((a.t_stat - b.t_stat).abs() < 1e-10);
        }
    }

    #[test]
    fn residuals_plus_fitted_reconstruct_outcome() {
        let (y, d) = simulated(25, 8);
        let x: Vec<f64> = y.iter().map(|v| libm::sin(*v * 3.0)).collect();
        let ds = dataset(&y, &d, vec![Covariate::new("x", x)]);
        let fr = ols_fit(&ds, "y", &ModelSpec::new(&["y"], "D").with_lcvars(&["x"]), None).unwrap();
        for ((e, f), v) in fr.residuals.iter().zip(&fr.fitted).zip(&y) {
            assert!((e + f - v).abs() <= 1e-10 * v.abs().max(1.0));
        }
    }

    #[test]
    fn collinear_covariate_is_singular() {
        let (y, d) = simulated(12, 2);
        let ds = dataset(&y, &d, vec![Covariate::new("c", vec![2.5; 12])]);
        let err = ols_fit(&ds, "y", &ModelSpec::new(&["y"], "D").with_lcvars(&["c"]), None).unwrap_err();
        assert_eq!(err, Error::SingularDesign { column: "c".into() });
    }

    #[test]
    fn too_few_rows() {
        let ds = dataset(&[1.0, 2.0], &[0, 1], vec![]);
        let err = ols_fit(&ds, "y", &ModelSpec::new(&["y"], "D"), None).unwrap_err();
        assert_eq!(err, Error::InsufficientData { rows: 2, columns: 2 });
    }

    #[test]
    fn non_positive_weights_rejected() {
        let ds = dataset(&[1.0, 2.0, 3.0], &[0, 1, 1], vec![]);
        let err = ols_fit(&ds, "y", &ModelSpec::new(&["y"], "D"), Some(&[1.0, 0.0, 1.0])).unwrap_err();
        assert!(matches!(err, Error::InvalidWeights(_)));
    }

    #[test]
    fn shift_invariance_with_intercept() {
        let (y, d) = simulated(20, 4);
        let shifted: Vec<f64> = y.iter().map(|v| v + 42.0).collect();
        let spec = ModelSpec::new(&["y"], "D");
        let a = ols_fit(&dataset(&y, &d, vec![]), "y", &spec, None).unwrap();
        let b = ols_fit(&dataset(&shifted, &d, vec![]), "y", &spec, None).unwrap();
        assert!((a.gamma_hat - b.gamma_hat).abs() < 1e-10);
    }

    #[test]
    fn classical_and_hc1_agree_on_homoskedastic_data() {
        let (y, d) = simulated(500, 99);
        let ds = dataset(&y, &d, vec![]);
        let mut spec = ModelSpec::new(&["y"], "D");
        let classical = ols_fit(&ds, "y", &spec, None).unwrap().se_gamma;
        spec.robust = true;
        let hc1 = ols_fit(&ds, "y", &spec, None).unwrap().se_gamma;
        assert!((classical / hc1 - 1.0).abs() < 0.1, "{classical} vs {hc1}");
    }

    #[test]
    fn hc1_matches_sandwich_oracle() {
        // Two-group design: HC1 variance of the difference in means is
        // (n/(n-2)) · (Σ_treated e²/n1² + Σ_control e²/n0²).
        let (y, d) = simulated(17, 3);
        let ds = dataset(&y, &d, vec![]);
        let mut spec = ModelSpec::new(&["y"], "D");
        spec.robust = true;
        let fr = ols_fit(&ds, "y", &spec, None).unwrap();
        let (mut s1, mut s0, mut n1, mut n0) = (0.0, 0.0, 0.0, 0.0);
        for (e, &di) in fr.residuals.iter().zip(&d) {
            if di == 1 {
                s1 += e * e;
                n1 += 1.0;
            } else {
                s0 += e * e;
                n0 += 1.0;
            }
        }
        let n = 17.0;
        let var = n / (n - 2.0) * (s1 / (n1 * n1) + s0 / (n0 * n0));
        assert!((fr.se_gamma - libm::sqrt(var)).abs() < 1e-12);
    }

    #[test]
    fn p_values_are_consistent() {
        let (y, d) = simulated(20, 21);
        let fr = ols_fit(&dataset(&y, &d, vec![]), "y", &ModelSpec::new(&["y"], "D"), None).unwrap();
        let p1 = fr.p_asym_1s;
        assert!((fr.p_asym_2s - 2.0 * p1.min(1.0 - p1)).abs() < 1e-12);
    }

    #[test]
    fn one_sided_p_strictly_decreasing_in_t() {
        let mut prev = 1.0;
        for i in -40..=40 {
            let p = student_t_sf(i as f64 * 0.2, 18.0);
            assert!(p < prev);
            prev = p;
        }
    }

    #[test]
    fn effect_size_examples() {
        let ds = dataset(&[0.0, 2.0, 5.0, 7.0], &[0, 0, 1, 1], vec![]);
        let mut fr = ols_fit(&ds, "y", &ModelSpec::new(&["y"], "D"), None).unwrap();
        fr.gamma_hat = 1.0;
        let es = effect_size(&fr, &ds, "y").unwrap();
        assert!((es - 1.0 / libm::sqrt(2.0)).abs() < 1e-15);
        fr.gamma_hat = 0.0;
        assert_eq!(effect_size(&fr, &ds, "y").unwrap(), 0.0);
        let flat = dataset(&[1.0, 1.0, 5.0, 7.0], &[0, 0, 1, 1], vec![]);
        assert!(matches!(effect_size(&fr, &flat, "y"), Err(Error::DegenerateScale { .. })));
    }

    #[test]
    fn effect_size_close_to_gamma_for_unit_noise() {
        let (y, d) = simulated(100, 1234);
        let ds = dataset(&y, &d, vec![]);
        let fr = ols_fit(&ds, "y", &ModelSpec::new(&["y"], "D"), None).unwrap();
        // Oracle: control SD by direct summation.
        let c: Vec<f64> = y.iter().zip(&d).filter(|(_, &b)| b == 0).map(|(a, _)| *a).collect();
        let m = c.iter().sum::<f64>() / c.len() as f64;
        let sd = libm::sqrt(c.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (c.len() - 1) as f64);
        let es = effect_size(&fr, &ds, "y").unwrap();
        assert!((es - fr.gamma_hat / sd).abs() < 1e-12);
        assert!((es / fr.gamma_hat - 1.0).abs() < 0.2);
    }
}
