use alloc::string::String;
use alloc::vec::Vec;

use crate::data::Diagnostic;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("singular design: column `{column}` is linearly dependent on earlier columns")]
    SingularDesign { column: String },

    #[error("insufficient data: {rows} usable rows for {columns} design columns")]
    InsufficientData { rows: usize, columns: usize },

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("degenerate scale: control-group outcome `{outcome}` has zero variance or fewer than 2 respondents")]
    DegenerateScale { outcome: String },

    #[error("retention model did not converge after {iterations} iterations")]
    Convergence {
        iterations: usize,
        coefficients: Vec<f64>,
    },

    #[error("retention model separated: coefficient {index} reached {value:.3} on the link scale")]
    Separation {
        index: usize,
        value: f64,
        /// Last accepted iterate before separation was detected.
        coefficients: Vec<f64>,
    },

    #[error("degenerate response for `{outcome}`: {reason}")]
    DegenerateResponse { outcome: String, reason: &'static str },

    #[error("unknown column `{0}`")]
    UnknownColumn(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid dataset: {}", join_diagnostics(.0))]
    Invalid(Vec<Diagnostic>),

    #[error("{failed} of {total} permutation replicates failed for `{outcome}` (budget is 5%)")]
    ReplicateBudget {
        outcome: String,
        failed: usize,
        total: usize,
    },

    #[error("gave up after {0} degenerate draws")]
    TooManyRegenerations(u32),
}

fn join_diagnostics(diags: &[Diagnostic]) -> String {
    use core::fmt::Write;
    let mut out = String::new();
    for (i, d) in diags.iter().enumerate() {
        if i > 0 {
            out.push_str("; ");
        }
        let _ = write!(out, "{d}");
    }
    out
}
