//! Rendering of simulation reports and permutation-test results.

use std::fmt::Write as _;

use permlab_core::simulation::Method;
use permlab_core::{PermutationResult, SimulationReport};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Table,
    Json,
    Csv,
}

/// Column and row keys shared by the table and CSV layouts: rows are
/// `(n, γ)`, columns are `(family, method)`, both in first-seen order.
struct Grid<'a> {
    families: Vec<String>,
    methods: Vec<Method>,
    rows: Vec<(usize, f64)>,
    reports: &'a [SimulationReport],
}

impl<'a> Grid<'a> {
    fn new(reports: &'a [SimulationReport]) -> Self {
        let mut families: Vec<String> = Vec::new();
        let mut methods: Vec<Method> = Vec::new();
        let mut rows: Vec<(usize, f64)> = Vec::new();
        for r in reports {
            let fam = r.config.error.family.name().to_string();
            if !families.contains(&fam) {
                families.push(fam);
            }
            for &m in r.methods() {
                if !methods.contains(&m) {
                    methods.push(m);
                }
            }
            for c in &r.cells {
                let key = (r.config.n, c.gamma);
                if !rows.iter().any(|k| k.0 == key.0 && k.1.to_bits() == key.1.to_bits()) {
                    rows.push(key);
                }
            }
        }
        Self {
            families,
            methods,
            rows,
            reports,
        }
    }

    fn rate(&self, n: usize, gamma: f64, family: &str, method: Method) -> Option<f64> {
        self.reports
            .iter()
            .filter(|r| r.config.n == n && r.config.error.family.name() == family)
            .flat_map(|r| &r.cells)
            .find(|c| c.gamma.to_bits() == gamma.to_bits())
            .and_then(|c| c.rate(method))
    }

    fn columns(&self) -> Vec<(String, Method)> {
        self.families
            .iter()
            .flat_map(|f| self.methods.iter().map(move |&m| (f.clone(), m)))
            .collect()
    }
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.3}"))
}

/// Renders a set of reports (typically one per family and sample size).
pub fn emit_report(reports: &[SimulationReport], format: Format) -> String {
    match format {
        Format::Json => {
            let mut s = serde_json::to_string_pretty(reports).expect("reports serialize");
            s.push('\n');
            s
        }
        Format::Csv => {
            let g = Grid::new(reports);
            let mut w = csv::Writer::from_writer(Vec::new());
            let mut header = vec!["n".to_string(), "gamma".to_string()];
            header.extend(g.columns().iter().map(|(f, m)| format!("{f}_{}", m.label())));
            w.write_record(&header).expect("in-memory write");
            for &(n, gamma) in &g.rows {
                let mut rec = vec![n.to_string(), gamma.to_string()];
                rec.extend(
                    g.columns()
                        .iter()
                        .map(|(f, m)| g.rate(n, gamma, f, *m).map_or_else(String::new, |v| v.to_string())),
                );
                w.write_record(&rec).expect("in-memory write");
            }
            String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
        }
        Format::Table => {
            let g = Grid::new(reports);
            let cols = g.columns();
            let width = cols
                .iter()
                .map(|(f, m)| f.len() + m.label().len() + 1)
                .max()
                .unwrap_or(0)
                .max(7);
            let mut out = String::new();
            if let Some(r) = reports.first() {
                let c = &r.config;
                let _ = writeln!(
                    out,
                    "design {}  B {}  np {}  alpha {}  seed {}",
                    c.design, c.replications, c.np, c.alpha, c.seed
                );
            }
            let _ = write!(out, "{:>4} {:>6}", "n", "gamma");
            for (f, m) in &cols {
                let _ = write!(out, " {:>width$}", format!("{f}:{}", m.label()));
            }
            out.push('\n');
            for &(n, gamma) in &g.rows {
                let _ = write!(out, "{n:>4} {gamma:>6.2}");
                for (f, m) in &cols {
                    let _ = write!(out, " {:>width$}", cell(g.rate(n, gamma, f, *m)));
                }
                out.push('\n');
            }
            let mut notes = Vec::new();
            for r in reports {
                for c in &r.cells {
                    let acc: Vec<String> = c
                        .accuracy
                        .iter()
                        .map(|a| format!("{:?} bias {:+.4} mse {:.4}", a.estimator, a.bias, a.mse).to_lowercase())
                        .collect();
                    let mut line = format!(
                        "n {} {} gamma {:.2}: {}",
                        r.config.n,
                        r.config.error.family.name(),
                        c.gamma,
                        acc.join(", ")
                    );
                    if let Some(ate) = c.respondent_ate {
                        let _ = write!(line, ", respondent ate {ate:.4}");
                    }
                    if c.regenerations > 0 {
                        let _ = write!(line, ", {} redraws", c.regenerations);
                    }
                    notes.push(line);
                }
            }
            if !notes.is_empty() {
                out.push('\n');
                for l in notes {
                    out.push_str(&l);
                    out.push('\n');
                }
            }
            out
        }
    }
}

/// Saved-results document written by `test --out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavedResults {
    pub outcomes: Vec<String>,
    pub treat: String,
    pub np: usize,
    pub scheme: permlab_core::Scheme,
    pub seed: u64,
    pub gamma_hat: Vec<f64>,
    pub gamma_hat_ipw: Vec<f64>,
    pub se_gamma: Vec<f64>,
    pub effsize: Vec<Option<f64>>,
    pub pval_asym1s: Vec<f64>,
    pub pval_asym2s: Vec<f64>,
    pub pval_perm: Vec<f64>,
    pub pval_permipw: Vec<f64>,
    pub pval_permsd: Vec<f64>,
    pub tstat_s: Vec<f64>,
    pub tstat_p: Vec<Vec<Option<f64>>>,
    pub tstat_s_ipw: Vec<f64>,
    pub tstat_p_ipw: Vec<Vec<Option<f64>>>,
    #[serde(rename = "ipWeights")]
    pub ip_weights: Vec<Option<Vec<Option<f64>>>>,
    #[serde(rename = "Yperm")]
    pub y_perm: Vec<Vec<f64>>,
    pub failed_replicates: Vec<usize>,
}

impl SavedResults {
    pub fn new(res: &PermutationResult, treat: &str) -> Self {
        let e = &res.estimates;
        Self {
            outcomes: res.outcome_names(),
            treat: treat.to_string(),
            np: res.plan.np,
            scheme: res.plan.scheme,
            seed: res.plan.seed,
            gamma_hat: e.iter().map(|x| x.gamma_hat).collect(),
            gamma_hat_ipw: e.iter().map(|x| x.gamma_hat_ipw).collect(),
            se_gamma: e.iter().map(|x| x.se_gamma).collect(),
            effsize: e.iter().map(|x| x.effect_size).collect(),
            pval_asym1s: e.iter().map(|x| x.p_asym_1s).collect(),
            pval_asym2s: e.iter().map(|x| x.p_asym_2s).collect(),
            pval_perm: res.p_perm.clone(),
            pval_permipw: res.p_perm_ipw.clone(),
            pval_permsd: res.p_stepdown.clone(),
            tstat_s: res.t_obs.clone(),
            tstat_p: res.t_perm.clone(),
            tstat_s_ipw: res.t_obs_ipw.clone(),
            tstat_p_ipw: res.t_perm_ipw.clone(),
            ip_weights: res.ip_weights.clone(),
            y_perm: res.y_perm_sample.clone(),
            failed_replicates: res.failed_replicates.clone(),
        }
    }
}

const SUMMARY_HEADER: [&str; 8] = [
    "outcome",
    "gamma_hat",
    "effsize",
    "p_asym_1s",
    "p_asym_2s",
    "p_perm",
    "p_perm_ipw",
    "p_stepdown",
];

fn summary_rows(res: &PermutationResult, effsize: bool) -> (Vec<&'static str>, Vec<Vec<String>>) {
    let header: Vec<&str> = SUMMARY_HEADER
        .iter()
        .copied()
        .filter(|h| effsize || *h != "effsize")
        .collect();
    let rows = res
        .estimates
        .iter()
        .enumerate()
        .map(|(k, e)| {
            let mut r = vec![e.outcome.clone(), e.gamma_hat.to_string()];
            if effsize {
                r.push(e.effect_size.map_or_else(String::new, |v| v.to_string()));
            }
            r.extend(
                [e.p_asym_1s, e.p_asym_2s, res.p_perm[k], res.p_perm_ipw[k], res.p_stepdown[k]]
                    .iter()
                    .map(f64::to_string),
            );
            r
        })
        .collect();
    (header, rows)
}

/// Results summary for `test` in the requested format.
pub fn emit_permtest(res: &PermutationResult, effsize: bool, format: Format) -> String {
    let (header, rows) = summary_rows(res, effsize);
    match format {
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(&header).expect("in-memory write");
            for r in &rows {
                w.write_record(r).expect("in-memory write");
            }
            String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
        }
        Format::Json => {
            let objs: Vec<serde_json::Map<String, serde_json::Value>> = rows
                .iter()
                .map(|r| {
                    header
                        .iter()
                        .zip(r)
                        .map(|(h, v)| {
                            let val = match v.parse::<f64>() {
                                Ok(x) if *h != "outcome" => serde_json::json!(x),
                                _ if v.is_empty() => serde_json::Value::Null,
                                _ => serde_json::json!(v),
                            };
                            (h.to_string(), val)
                        })
                        .collect()
                })
                .collect();
            let mut s = serde_json::to_string_pretty(&objs).expect("summary serializes");
            s.push('\n');
            s
        }
        Format::Table => {
            let widths: Vec<usize> = (0..header.len())
                .map(|j| {
                    rows.iter()
                        .map(|r| display(&r[j], j).len())
                        .chain([header[j].len()])
                        .max()
                        .unwrap_or(0)
                })
                .collect();
            let mut out = String::new();
            for (j, h) in header.iter().enumerate() {
                let _ = write!(out, "{}{h:>w$}", if j > 0 { "  " } else { "" }, w = widths[j]);
            }
            out.push('\n');
            for r in &rows {
                for (j, v) in r.iter().enumerate() {
                    let _ = write!(out, "{}{:>w$}", if j > 0 { "  " } else { "" }, display(v, j), w = widths[j]);
                }
                out.push('\n');
            }
            let _ = writeln!(
                out,
                "{} permutations ({:?}), seed {}",
                res.plan.np, res.plan.scheme, res.plan.seed
            );
            out
        }
    }
}

fn display(v: &str, column: usize) -> String {
    if column == 0 {
        return v.to_string();
    }
    v.parse::<f64>().map_or_else(|_| v.to_string(), |x| format!("{x:.4}"))
}
