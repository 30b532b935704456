//! Dataset container, column roles, and validation.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One outcome column; `None` marks a missing (attrited) entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub name: String,
    pub values: Vec<Option<f64>>,
}

impl Outcome {
    pub fn new(name: impl Into<String>, values: Vec<Option<f64>>) -> Self {
        Self {
            name: name.into(),
            values,
        }
    }

    /// `R_i`: 1 where the outcome was observed.
    pub fn response(&self) -> Vec<u8> {
        self.values.iter().map(|v| u8::from(v.is_some())).collect()
    }

    /// Row indices with an observed value, ascending.
    pub fn respondents(&self) -> Vec<usize> {
        self.values
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|_| i))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Covariate {
    pub name: String,
    pub values: Vec<f64>,
}

impl Covariate {
    pub fn new(name: impl Into<String>, values: Vec<f64>) -> Self {
        Self {
            name: name.into(),
            values,
        }
    }
}

/// Immutable analysis dataset. Outcomes share one treatment vector and one
/// block structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    n_rows: usize,
    outcomes: Vec<Outcome>,
    treatment_name: String,
    treatment: Vec<u8>,
    covariates: Vec<Covariate>,
    block_names: Vec<String>,
    blocks: Option<Vec<u32>>,
}

impl Dataset {
    /// Assembles a dataset. Only lengths are checked here; semantic
    /// invariants are reported by [`validate`].
    pub fn new(
        outcomes: Vec<Outcome>,
        treatment_name: impl Into<String>,
        treatment: Vec<u8>,
        covariates: Vec<Covariate>,
    ) -> Result<Self> {
        let n_rows = treatment.len();
        for o in &outcomes {
            if o.values.len() != n_rows {
                return Err(Error::Config(alloc::format!(
                    "outcome `{}` has {} rows, treatment has {n_rows}",
                    o.name,
                    o.values.len()
                )));
            }
        }
        for c in &covariates {
            if c.values.len() != n_rows {
                return Err(Error::Config(alloc::format!(
                    "covariate `{}` has {} rows, treatment has {n_rows}",
                    c.name,
                    c.values.len()
                )));
            }
        }
        Ok(Self {
            n_rows,
            outcomes,
            treatment_name: treatment_name.into(),
            treatment,
            covariates,
            block_names: Vec::new(),
            blocks: None,
        })
    }

    /// Attaches block labels built from the named covariate columns. Each
    /// distinct combination of values becomes one block, numbered in order of
    /// first appearance.
    pub fn with_blocks(mut self, names: &[String]) -> Result<Self> {
        if names.is_empty() {
            self.block_names.clear();
            self.blocks = None;
            return Ok(self);
        }
        let cols = names
            .iter()
            .map(|n| self.covariate(n).ok_or_else(|| Error::UnknownColumn(n.clone())))
            .collect::<Result<Vec<_>>>()?;
        let mut ids: BTreeMap<Vec<u64>, u32> = BTreeMap::new();
        let mut labels = Vec::with_capacity(self.n_rows);
        for i in 0..self.n_rows {
            let key: Vec<u64> = cols.iter().map(|c| c[i].to_bits()).collect();
            let next = ids.len() as u32;
            labels.push(*ids.entry(key).or_insert(next));
        }
        self.block_names = names.to_vec();
        self.blocks = Some(labels);
        Ok(self)
    }

    /// Attaches explicit block labels.
    pub fn with_block_labels(mut self, name: impl Into<String>, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != self.n_rows {
            return Err(Error::Config("block labels length mismatch".into()));
        }
        self.block_names = alloc::vec![name.into()];
        self.blocks = Some(labels);
        Ok(self)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn outcomes(&self) -> &[Outcome] {
        &self.outcomes
    }

    pub fn outcome(&self, name: &str) -> Option<&Outcome> {
        self.outcomes.iter().find(|o| o.name == name)
    }

    pub fn treatment_name(&self) -> &str {
        &self.treatment_name
    }

    pub fn treatment(&self) -> &[u8] {
        &self.treatment
    }

    pub fn covariates(&self) -> &[Covariate] {
        &self.covariates
    }

    pub fn covariate(&self, name: &str) -> Option<&[f64]> {
        self.covariates
            .iter()
            .find(|c| c.name == name)
            .map(|c| c.values.as_slice())
    }

    pub fn block_names(&self) -> &[String] {
        &self.block_names
    }

    pub fn blocks(&self) -> Option<&[u32]> {
        self.blocks.as_deref()
    }

    fn has_column(&self, name: &str) -> bool {
        name == self.treatment_name
            || self.outcome(name).is_some()
            || self.covariate(name).is_some()
    }
}

/// What a retention fit does when the likelihood has no finite maximizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeparationPolicy {
    /// Report a separation error.
    #[default]
    Fail,
    /// Keep the last iterate inside the coefficient bound and weight with
    /// its clamped probabilities.
    Truncate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    #[default]
    Probit,
    Logit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepdownMethod {
    /// Max-t stepdown over the hypotheses not yet rejected.
    #[default]
    Rw16,
    /// Single-step max-t over all hypotheses.
    Rp,
}

/// Which columns play which role, plus estimator options.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub outcome_names: Vec<String>,
    pub treatment_name: String,
    /// Linear-conditioning covariates.
    pub lc_names: Vec<String>,
    /// IPW covariates, one list per outcome. A single list applies to every outcome.
    pub ipw_names: Vec<Vec<String>>,
    pub block_names: Vec<String>,
    pub robust: bool,
    pub reverse: bool,
    pub effsize: bool,
    pub link: Link,
    pub sd_method: StepdownMethod,
    pub include_intercept: bool,
    pub separation: SeparationPolicy,
}

impl ModelSpec {
    pub fn new(outcomes: &[&str], treatment: &str) -> Self {
        Self {
            outcome_names: outcomes.iter().map(|s| s.to_string()).collect(),
            treatment_name: treatment.to_string(),
            lc_names: Vec::new(),
            ipw_names: Vec::new(),
            block_names: Vec::new(),
            robust: false,
            reverse: false,
            effsize: false,
            link: Link::Probit,
            sd_method: StepdownMethod::Rw16,
            include_intercept: true,
            separation: SeparationPolicy::Fail,
        }
    }

    pub fn with_lcvars(mut self, names: &[&str]) -> Self {
        self.lc_names = names.iter().map(|s| s.to_string()).collect();
        self
    }

    pub fn with_ipw(mut self, names: &[&str]) -> Self {
        self.ipw_names = alloc::vec![names.iter().map(|s| s.to_string()).collect()];
        self
    }

    pub fn with_blocks(mut self, names: &[&str]) -> Self {
        self.block_names = names.iter().map(|s| s.to_string()).collect();
        self
    }

    /// IPW covariates for outcome `k`; empty means no IPW.
    pub fn ipw_for(&self, k: usize) -> &[String] {
        match self.ipw_names.len() {
            0 => &[],
            1 => &self.ipw_names[0],
            _ => self.ipw_names.get(k).map_or(&[][..], |v| v.as_slice()),
        }
    }

    pub fn has_ipw(&self) -> bool {
        self.ipw_names.iter().any(|v| !v.is_empty())
    }
}

/// One violated invariant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Diagnostic {
    EmptyDataset,
    TreatmentNotBinary { row: usize, value: u8 },
    TreatmentOneLevel { level: u8 },
    CovariateMissing { name: String, row: usize },
    SmallBlock { label: u32, size: usize },
    UnknownColumn { name: String },
    RoleOverlap { name: String },
    TreatmentReused { name: String },
    BlockMismatch,
    NoOutcomes,
    IpwListCount { lists: usize, outcomes: usize },
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Diagnostic::EmptyDataset => write!(f, "dataset has no rows"),
            Diagnostic::TreatmentNotBinary { row, value } => {
                write!(f, "treatment value {value} at row {row} is not 0 or 1")
            }
            Diagnostic::TreatmentOneLevel { level } => {
                write!(f, "treatment has one level (all {level})")
            }
            Diagnostic::CovariateMissing { name, row } => {
                write!(f, "covariate `{name}` is missing at row {row}")
            }
            Diagnostic::SmallBlock { label, size } => {
                write!(f, "block {label} has {size} member(s); at least 2 required")
            }
            Diagnostic::UnknownColumn { name } => write!(f, "column `{name}` not in dataset"),
            Diagnostic::RoleOverlap { name } => write!(f, "column `{name}` is assigned more than one role"),
            Diagnostic::TreatmentReused { name } => {
                write!(f, "treatment `{name}` cannot be a conditioning or IPW covariate")
            }
            Diagnostic::BlockMismatch => write!(f, "block variables differ from those attached to the dataset"),
            Diagnostic::NoOutcomes => write!(f, "no outcome selected"),
            Diagnostic::IpwListCount { lists, outcomes } => {
                write!(f, "{lists} IPW covariate lists given for {outcomes} outcomes")
            }
        }
    }
}

/// Checks every dataset and model invariant; an empty list means the pair is
/// ready for analysis.
pub fn validate(ds: &Dataset, spec: &ModelSpec) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    if ds.n_rows == 0 {
        out.push(Diagnostic::EmptyDataset);
    }

    let mut seen = [false; 2];
    for (row, &d) in ds.treatment.iter().enumerate() {
        if d > 1 {
            out.push(Diagnostic::TreatmentNotBinary { row: row + 1, value: d });
        } else {
            seen[d as usize] = true;
        }
    }
    if ds.n_rows > 0 && seen[0] != seen[1] {
        out.push(Diagnostic::TreatmentOneLevel {
            level: u8::from(seen[1]),
        });
    }

    for c in &ds.covariates {
        if let Some(row) = c.values.iter().position(|v| !v.is_finite()) {
            out.push(Diagnostic::CovariateMissing {
                name: c.name.clone(),
                row: row + 1,
            });
        }
    }

    if let Some(labels) = &ds.blocks {
        let mut sizes: BTreeMap<u32, usize> = BTreeMap::new();
        for &l in labels {
            *sizes.entry(l).or_default() += 1;
        }
        for (label, size) in sizes {
            if size < 2 {
                out.push(Diagnostic::SmallBlock { label, size });
            }
        }
    }

    // Model spec against dataset.
    if spec.outcome_names.is_empty() {
        out.push(Diagnostic::NoOutcomes);
    }
    let ipw_lists = spec.ipw_names.len();
    if ipw_lists > 1 && ipw_lists != spec.outcome_names.len() {
        out.push(Diagnostic::IpwListCount {
            lists: ipw_lists,
            outcomes: spec.outcome_names.len(),
        });
    }

    let check_exists = |name: &String, out: &mut Vec<Diagnostic>| {
        if !ds.has_column(name) {
            out.push(Diagnostic::UnknownColumn { name: name.clone() });
        }
    };
    for n in &spec.outcome_names {
        if ds.outcome(n).is_none() {
            out.push(Diagnostic::UnknownColumn { name: n.clone() });
        }
    }
    if spec.treatment_name != ds.treatment_name {
        out.push(Diagnostic::UnknownColumn {
            name: spec.treatment_name.clone(),
        });
    }
    for n in spec.lc_names.iter().chain(spec.ipw_names.iter().flatten()) {
        if *n == spec.treatment_name {
            out.push(Diagnostic::TreatmentReused { name: n.clone() });
        } else if ds.covariate(n).is_none() {
            check_exists(n, &mut out);
            if ds.has_column(n) {
                // Exists, but as an outcome.
                out.push(Diagnostic::RoleOverlap { name: n.clone() });
            }
        }
    }
    for n in &spec.block_names {
        if ds.covariate(n).is_none() {
            check_exists(n, &mut out);
        }
    }

    // Role disjointness: outcome / treatment / lc / block. IPW lists may
    // reuse lc variables; the retention model is a separate regression.
    let mut roles: BTreeMap<&str, u8> = BTreeMap::new();
    let named = spec
        .outcome_names
        .iter()
        .map(|n| (n, 0u8))
        .chain(core::iter::once((&spec.treatment_name, 1)))
        .chain(spec.lc_names.iter().map(|n| (n, 2)))
        .chain(spec.block_names.iter().map(|n| (n, 3)));
    for (name, role) in named {
        let prev = roles.insert(name.as_str(), role);
        if matches!(prev, Some(p) if p != role) {
            out.push(Diagnostic::RoleOverlap { name: name.clone() });
        }
    }

    if !spec.block_names.is_empty() && spec.block_names.as_slice() != ds.block_names() {
        out.push(Diagnostic::BlockMismatch);
    }
    out.dedup();
    out
}
