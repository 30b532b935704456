#![no_std]
extern crate alloc;

pub mod data;
pub mod dist;
pub mod error;
pub mod exec;
pub mod glm;
pub mod linalg;
pub mod permutation;
pub mod regression;
pub mod rng;
pub mod simulation;
pub mod stepdown;

pub use data::{validate, Covariate, Dataset, Diagnostic, Link, ModelSpec, Outcome, SeparationPolicy, StepdownMethod};
pub use error::{Error, Result};
pub use regression::{effect_size, ols_fit, DesignMatrix, FitResult};
pub use exec::{Executor, Sequential};
pub use permutation::{run_permtest, PValueMode, PermutationPlan, PermutationResult, Scheme};
pub use simulation::{gen_design, run_simulation, Design, ErrorDistribution, ErrorFamily, SimulationConfig, SimulationReport};
