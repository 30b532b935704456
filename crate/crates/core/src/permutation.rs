//! Permutation tests for the treatment coefficient.
//!
//! Naive and block schemes permute the treatment assignment (over the full
//! sample, so attrition weights can be rebuilt from the permuted assignment).
//! Freedman–Lane permutes the residuals of the reduced model, which holds
//! the conditioning covariates but not the treatment, and refits the full
//! model on fitted-plus-permuted-residual outcomes.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{validate, Dataset, ModelSpec};
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::glm::{IpwFit, RetentionModel};
use crate::regression::{self, effect_size, least_squares, respondent_outcome, DesignMatrix, FitResult};
use crate::rng::{stream, tag};
use crate::stepdown::stepdown_adjust;

/// Permuted-outcome vectors kept for audit in [`PermutationResult::y_perm_sample`].
pub const Y_PERM_SAMPLE: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Naive,
    Block,
    FreedmanLane,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PValueMode {
    /// `#(t* > t) / np`.
    Raw,
    /// `(1 + #(t* ≥ t)) / (np + 1)`.
    #[default]
    Smoothed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationPlan {
    pub np: usize,
    pub scheme: Scheme,
    pub seed: u64,
    /// Refit the retention model on every permuted assignment.
    pub reestimate_ipw: bool,
    pub mode: PValueMode,
}

impl PermutationPlan {
    pub fn new(np: usize, scheme: Scheme, seed: u64) -> Self {
        Self {
            np,
            scheme,
            seed,
            reestimate_ipw: true,
            mode: PValueMode::Smoothed,
        }
    }

    fn blocks<'a>(&self, ds: &'a Dataset) -> Result<Option<&'a [u32]>> {
        match self.scheme {
            Scheme::Naive => Ok(None),
            Scheme::Block => ds
                .blocks()
                .map(Some)
                .ok_or_else(|| Error::Config("block permutation requires block labels".into())),
            Scheme::FreedmanLane => Ok(ds.blocks()),
        }
    }
}

/// `perm[i]` is the source row for position `i`. Within-block when `blocks`
/// is given, identity across blocks.
pub fn permutation_for(n: usize, blocks: Option<&[u32]>, seed: u64, replicate: usize) -> Vec<usize> {
    let mut rng = stream(seed, &[tag::PERMUTATION, replicate as u64]);
    match blocks {
        None => {
            let mut p: Vec<usize> = (0..n).collect();
            p.shuffle(&mut rng);
            p
        }
        Some(labels) => {
            let mut groups: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
            for (i, &l) in labels.iter().enumerate() {
                groups.entry(l).or_default().push(i);
            }
            let mut p = vec![0; n];
            for rows in groups.values() {
                let mut src = rows.clone();
                src.shuffle(&mut rng);
                for (&dst, s) in rows.iter().zip(src) {
                    p[dst] = s;
                }
            }
            p
        }
    }
}

/// Replicate `replicate` of `plan` over the rows of `ds`.
pub fn draw_permutation(plan: &PermutationPlan, ds: &Dataset, replicate: usize) -> Result<Vec<usize>> {
    if replicate >= plan.np {
        return Err(Error::Config(alloc::format!(
            "replicate {replicate} out of range for {} permutations",
            plan.np
        )));
    }
    Ok(permutation_for(ds.n_rows(), plan.blocks(ds)?, plan.seed, replicate))
}

/// Restricts a full-sample permutation to the respondent rows `rows`.
///
/// Returns `sigma` over respondent positions: position `j` takes its value
/// from position `sigma[j]`. Within each group (block, or the whole sample),
/// respondents are matched to the respondent sources in the order the
/// permutation visits them, so a uniform permutation induces a uniform one
/// and the identity induces the identity.
pub fn restrict_permutation(perm: &[usize], rows: &[usize], blocks: Option<&[u32]>) -> Vec<usize> {
    let n = perm.len();
    let mut position = vec![usize::MAX; n];
    for (j, &r) in rows.iter().enumerate() {
        position[r] = j;
    }
    let blocks = blocks.filter(|l| perm.iter().enumerate().all(|(i, &s)| l[i] == l[s]));
    let group_of = |i: usize| blocks.map_or(0, |l| l[i]);
    let mut targets: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    let mut sources: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        if position[i] != usize::MAX {
            targets.entry(group_of(i)).or_default().push(position[i]);
        }
        if position[perm[i]] != usize::MAX {
            sources.entry(group_of(i)).or_default().push(position[perm[i]]);
        }
    }
    let mut sigma = vec![0; rows.len()];
    for (g, t) in &targets {
        for (&dst, &src) in t.iter().zip(&sources[g]) {
            sigma[dst] = src;
        }
    }
    sigma
}

/// Fitted values and residuals of the reduced (treatment-free) model.
#[derive(Debug, Clone)]
struct Reduced {
    fitted: Vec<f64>,
    residuals: Vec<f64>,
}

impl Reduced {
    fn fit(ds: &Dataset, spec: &ModelSpec, rows: &[usize], y: &[f64], weights: Option<&[f64]>) -> Result<Self> {
        let design = DesignMatrix::for_outcome(ds, spec, rows, None)?;
        let ls = least_squares(&design, y, weights)?;
        Ok(Self {
            fitted: ls.fitted,
            residuals: ls.residuals,
        })
    }

    fn permuted(&self, sigma: &[usize]) -> Vec<f64> {
        self.fitted
            .iter()
            .zip(sigma)
            .map(|(f, &s)| f + self.residuals[s])
            .collect()
    }
}

/// Freedman–Lane adjusted outcome for one permutation, aligned to the
/// outcome's respondent rows.
pub fn freedman_lane_permute(ds: &Dataset, outcome: &str, spec: &ModelSpec, perm: &[usize]) -> Result<Vec<f64>> {
    let (rows, y) = respondent_outcome(ds, outcome, spec)?;
    let reduced = Reduced::fit(ds, spec, &rows, &y, None)?;
    Ok(reduced.permuted(&restrict_permutation(perm, &rows, ds.blocks())))
}

/// One-sided upper-tail permutation p-value.
pub fn permutation_p_value(t_obs: f64, t_perm: &[f64], mode: PValueMode) -> f64 {
    let np = t_perm.len();
    match mode {
        PValueMode::Raw => t_perm.iter().filter(|&&t| t > t_obs).count() as f64 / np as f64,
        PValueMode::Smoothed => {
            (1 + t_perm.iter().filter(|&&t| t >= t_obs).count()) as f64 / (np + 1) as f64
        }
    }
}

/// Estimates for one outcome on the observed data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeEstimates {
    pub outcome: String,
    pub respondents: usize,
    pub gamma_hat: f64,
    pub se_gamma: f64,
    pub gamma_hat_ipw: f64,
    pub effect_size: Option<f64>,
    pub p_asym_1s: f64,
    pub p_asym_2s: f64,
    /// One-sided asymptotic p of the weighted fit (equals `p_asym_1s` without IPW).
    pub p_asym_1s_ipw: f64,
    pub ipw_applied: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationResult {
    pub plan: PermutationPlan,
    pub estimates: Vec<OutcomeEstimates>,
    pub t_obs: Vec<f64>,
    /// `np × K`; `None` where the replicate's refit failed.
    pub t_perm: Vec<Vec<Option<f64>>>,
    pub t_obs_ipw: Vec<f64>,
    pub t_perm_ipw: Vec<Vec<Option<f64>>>,
    pub p_perm: Vec<f64>,
    pub p_perm_ipw: Vec<f64>,
    pub p_stepdown: Vec<f64>,
    /// Per outcome, the weight of every row (`None` for attriters), when IPW ran.
    pub ip_weights: Vec<Option<Vec<Option<f64>>>>,
    /// First few permuted outcome vectors of the first outcome, respondent-aligned.
    pub y_perm_sample: Vec<Vec<f64>>,
    pub failed_replicates: Vec<usize>,
}

struct IpwState {
    model: RetentionModel,
    fit: IpwFit,
    reduced: Option<Reduced>,
}

struct Prepared {
    rows: Vec<usize>,
    y: Vec<f64>,
    design: DesignMatrix,
    observed: FitResult,
    observed_ipw: FitResult,
    reduced: Option<Reduced>,
    ipw: Option<IpwState>,
}

struct ReplicateOut {
    t: Vec<Option<f64>>,
    t_ipw: Vec<Option<f64>>,
    y_perm: Option<Vec<f64>>,
}

impl Prepared {
    fn new(ds: &Dataset, spec: &ModelSpec, k: usize, scheme: Scheme) -> Result<Self> {
        let name = &spec.outcome_names[k];
        let (rows, y) = respondent_outcome(ds, name, spec)?;
        let design = DesignMatrix::for_outcome(ds, spec, &rows, Some(ds.treatment()))?;
        let observed = regression::fit_design(&design, &y, None, spec.robust)?;
        let fl = scheme == Scheme::FreedmanLane;
        let reduced = if fl {
            Some(Reduced::fit(ds, spec, &rows, &y, None)?)
        } else {
            None
        };
        let ipw_names = spec.ipw_for(k);
        let attrition = rows.len() < ds.n_rows();
        let ipw = if !ipw_names.is_empty() && attrition {
            let mut model = RetentionModel::new(ds, name, ipw_names, spec.link)?.with_policy(spec.separation);
            let fit = model.fit(None, None)?;
            let reduced = if fl {
                Some(Reduced::fit(ds, spec, &rows, &y, Some(&fit.weights))?)
            } else {
                None
            };
            Some(IpwState { model, fit, reduced })
        } else {
            None
        };
        let observed_ipw = match &ipw {
            Some(s) => regression::fit_design(&design, &y, Some(&s.fit.weights), spec.robust)?,
            None => observed.clone(),
        };
        Ok(Self {
            rows,
            y,
            design,
            observed,
            observed_ipw,
            reduced,
            ipw,
        })
    }

    /// `(t*, t*_ipw, permuted outcome)` for one replicate.
    fn replicate(
        &self,
        plan: &PermutationPlan,
        robust: bool,
        perm: &[usize],
        d_perm: &[u8],
        blocks: Option<&[u32]>,
        want_y: bool,
    ) -> (Option<f64>, Option<f64>, Option<Vec<f64>>) {
        let sigma = || restrict_permutation(perm, &self.rows, blocks);
        match plan.scheme {
            Scheme::Naive | Scheme::Block => {
                let mut design = self.design.clone();
                design.set_treatment(&self.rows, d_perm);
                let t = regression::fit_design(&design, &self.y, None, robust)
                    .ok()
                    .map(|f| f.t_stat);
                let t_ipw = match &self.ipw {
                    None => t,
                    Some(state) => {
                        let weights = if plan.reestimate_ipw {
                            let mut model = state.model.clone();
                            model
                                .fit(Some(d_perm), Some(&state.fit.coefficients))
                                .ok()
                                .map(|f| f.weights)
                        } else {
                            Some(state.fit.weights.clone())
                        };
                        weights.and_then(|w| {
                            regression::fit_design(&design, &self.y, Some(&w), robust)
                                .ok()
                                .map(|f| f.t_stat)
                        })
                    }
                };
                let y_perm = want_y.then(|| {
                    let sigma = sigma();
                    let mut out = vec![0.0; self.y.len()];
                    for (j, &s) in sigma.iter().enumerate() {
                        out[s] = self.y[j];
                    }
                    out
                });
                (t, t_ipw, y_perm)
            }
            Scheme::FreedmanLane => {
                let sigma = sigma();
                let reduced = self.reduced.as_ref().expect("reduced model prepared");
                let y_star = reduced.permuted(&sigma);
                let t = regression::fit_design(&self.design, &y_star, None, robust)
                    .ok()
                    .map(|f| f.t_stat);
                let t_ipw = match &self.ipw {
                    None => t,
                    Some(state) => {
                        let reduced_w = state.reduced.as_ref().expect("weighted reduced model prepared");
                        let y_w = reduced_w.permuted(&sigma);
                        regression::fit_design(&self.design, &y_w, Some(&state.fit.weights), robust)
                            .ok()
                            .map(|f| f.t_stat)
                    }
                };
                (t, t_ipw, want_y.then_some(y_star))
            }
        }
    }
}

/// Runs the full permutation analysis for every outcome in `spec`.
pub fn run_permtest<E: Executor>(
    ds: &Dataset,
    spec: &ModelSpec,
    plan: &PermutationPlan,
    exec: &E,
) -> Result<PermutationResult> {
    let blocks = plan.blocks(ds)?;
    let n = ds.n_rows();
    run_with_permutations(ds, spec, plan, exec, |r| permutation_for(n, blocks, plan.seed, r))
}

/// As [`run_permtest`], with replicate `r` using `draw(r)` as its permutation.
pub fn run_with_permutations<E, P>(
    ds: &Dataset,
    spec: &ModelSpec,
    plan: &PermutationPlan,
    exec: &E,
    draw: P,
) -> Result<PermutationResult>
where
    E: Executor,
    P: Fn(usize) -> Vec<usize> + Sync + Send,
{
    let diags = validate(ds, spec);
    if !diags.is_empty() {
        return Err(Error::Invalid(diags));
    }
    if plan.np == 0 {
        return Err(Error::Config("at least one permutation is required".into()));
    }
    let blocks = plan.blocks(ds)?;
    let k = spec.outcome_names.len();
    let prepared = (0..k)
        .map(|j| Prepared::new(ds, spec, j, plan.scheme))
        .collect::<Result<Vec<_>>>()?;

    let d = ds.treatment();
    let n = ds.n_rows();
    let replicates: Vec<ReplicateOut> = exec.map_indexed(plan.np, |r| {
        let perm = draw(r);
        let d_perm: Vec<u8> = perm.iter().map(|&s| d[s]).collect();
        let mut out = ReplicateOut {
            t: Vec::with_capacity(k),
            t_ipw: Vec::with_capacity(k),
            y_perm: None,
        };
        for (j, p) in prepared.iter().enumerate() {
            let want_y = j == 0 && r < Y_PERM_SAMPLE;
            let (t, t_ipw, y) = p.replicate(plan, spec.robust, &perm, &d_perm, blocks, want_y);
            out.t.push(t);
            out.t_ipw.push(t_ipw);
            if y.is_some() {
                out.y_perm = y;
            }
        }
        out
    });

    let mut failed = vec![0usize; k];
    for rep in &replicates {
        for j in 0..k {
            if rep.t[j].is_none() || rep.t_ipw[j].is_none() {
                failed[j] += 1;
            }
        }
    }
    for (j, &f) in failed.iter().enumerate() {
        if f * 20 > plan.np {
            return Err(Error::ReplicateBudget {
                outcome: spec.outcome_names[j].clone(),
                failed: f,
                total: plan.np,
            });
        }
    }

    let column = |j: usize, ipw: bool| -> Vec<f64> {
        replicates
            .iter()
            .filter_map(|rep| if ipw { rep.t_ipw[j] } else { rep.t[j] })
            .collect()
    };
    let t_obs: Vec<f64> = prepared.iter().map(|p| p.observed.t_stat).collect();
    let t_obs_ipw: Vec<f64> = prepared.iter().map(|p| p.observed_ipw.t_stat).collect();
    let p_perm = (0..k)
        .map(|j| permutation_p_value(t_obs[j], &column(j, false), plan.mode))
        .collect();
    let p_perm_ipw = (0..k)
        .map(|j| permutation_p_value(t_obs_ipw[j], &column(j, true), plan.mode))
        .collect();
    let joint: Vec<Vec<f64>> = replicates
        .iter()
        .filter_map(|rep| rep.t_ipw.iter().copied().collect::<Option<Vec<f64>>>())
        .collect();
    let p_stepdown = stepdown_adjust(&t_obs_ipw, &joint, spec.sd_method);

    let estimates = prepared
        .iter()
        .zip(&spec.outcome_names)
        .map(|(p, name)| {
            let es = if spec.effsize {
                Some(effect_size(&p.observed, ds, name)?)
            } else {
                None
            };
            Ok(OutcomeEstimates {
                outcome: name.clone(),
                respondents: p.rows.len(),
                gamma_hat: p.observed.gamma_hat,
                se_gamma: p.observed.se_gamma,
                gamma_hat_ipw: p.observed_ipw.gamma_hat,
                effect_size: es,
                p_asym_1s: p.observed.p_asym_1s,
                p_asym_2s: p.observed.p_asym_2s,
                p_asym_1s_ipw: p.observed_ipw.p_asym_1s,
                ipw_applied: p.ipw.is_some(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let ip_weights = prepared
        .iter()
        .map(|p| {
            p.ipw.as_ref().map(|s| {
                let mut w = vec![None; n];
                for (&row, &v) in p.rows.iter().zip(&s.fit.weights) {
                    w[row] = Some(v);
                }
                w
            })
        })
        .collect();

    let mut y_perm_sample = Vec::new();
    let mut t_perm = Vec::with_capacity(plan.np);
    let mut t_perm_ipw = Vec::with_capacity(plan.np);
    for rep in replicates {
        if let Some(y) = rep.y_perm {
            y_perm_sample.push(y);
        }
        t_perm.push(rep.t);
        t_perm_ipw.push(rep.t_ipw);
    }

    Ok(PermutationResult {
        plan: plan.clone(),
        estimates,
        t_obs,
        t_perm,
        t_obs_ipw,
        t_perm_ipw,
        p_perm,
        p_perm_ipw,
        p_stepdown,
        ip_weights,
        y_perm_sample,
        failed_replicates: failed,
    })
}

impl PermutationResult {
    pub fn outcome_names(&self) -> Vec<String> {
        self.estimates.iter().map(|e| e.outcome.to_string()).collect()
    }
}
