//! Flat simulation config files.
//!
//! ```toml
//! design = "attrition"        # baseline_m1 | baseline_m2 | unbal_covariate | unbal_treatment | attrition
//! n = [20, 40, 60]            # one size or a list
//! gamma_grid = [0.0, 0.4, 0.8]
//! family = "all"              # normal | student | weibull | lognormal | cauchy | all, or a list
//! B = 1000
//! np = 1000
//! alpha = 0.05
//! seed = 12345
//! ```
//!
//! Every key is optional; see [`SimulationFile`] for the full list and
//! defaults. A list-valued `n` or `family` expands into one run per
//! combination.

use std::path::Path;

use permlab_core::simulation::{ATTRITION_DEFAULT, ATTRITION_ILLUSTRATIVE};
use permlab_core::{Design, ErrorDistribution, ErrorFamily, Link, Scheme, SeparationPolicy, SimulationConfig};
use serde::{Deserialize, Serialize};

pub const DEFAULT_SEED: u64 = 12345;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Toml {
        path: String,
        #[source]
        source: toml::de::Error,
    },
    #[error("unknown {what} `{value}`")]
    Unknown { what: &'static str, value: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    pub fn to_vec(&self) -> Vec<T> {
        match self {
            Self::One(v) => vec![v.clone()],
            Self::Many(v) => v.clone(),
        }
    }
}

/// One key per simulation setting. Unset keys take the defaults noted.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationFile {
    /// Default `baseline_m1`.
    pub design: Option<String>,
    /// Default `[20, 40, 60]`.
    pub n: Option<OneOrMany<usize>>,
    /// Default `0.0, 0.1, ..., 0.8`.
    pub gamma_grid: Option<Vec<f64>>,
    /// Default `normal`.
    pub family: Option<OneOrMany<String>>,
    /// Default true.
    pub standardize: Option<bool>,
    /// Student degrees of freedom, default 3.
    pub df: Option<f64>,
    /// Default 1.5.
    pub weibull_shape: Option<f64>,
    /// Default 1.
    pub weibull_scale: Option<f64>,
    /// Default 0.
    pub lognormal_mu: Option<f64>,
    /// Default 1.
    pub lognormal_sigma: Option<f64>,
    /// Default 1.
    pub cauchy_location: Option<f64>,
    /// Default 0.25.
    pub cauchy_scale: Option<f64>,
    /// Replications per cell, default 1000.
    #[serde(rename = "B", alias = "replications")]
    pub replications: Option<usize>,
    /// Default 1000.
    pub np: Option<usize>,
    /// Default 0.05.
    pub alpha: Option<f64>,
    /// `(α₀, α₁, α₂)`, default `(0.1, 0.25, 3.75)`.
    pub attrition_coeffs: Option<[f64; 3]>,
    /// `default` or `illustrative`; ignored when `attrition_coeffs` is set.
    pub attrition_preset: Option<String>,
    pub seed: Option<u64>,
    /// `naive` or `freedman_lane`; default depends on the design.
    pub scheme: Option<String>,
    /// Default `probit`.
    pub link: Option<String>,
    /// Default true.
    pub reestimate_ipw: Option<bool>,
    /// `fail` or `truncate`, default `truncate`.
    pub separation: Option<String>,
    /// Default false.
    pub redraw_failed: Option<bool>,
}

macro_rules! overlay {
    ($dst:ident, $src:ident; $($f:ident),*) => {
        $( if $src.$f.is_some() { $dst.$f = $src.$f.clone(); } )*
    };
}

impl SimulationFile {
    pub fn read(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        toml::from_str(&text).map_err(|source| ConfigError::Toml {
            path: path.display().to_string(),
            source,
        })
    }

    /// Settings in `other` replace those in `self`.
    pub fn overlay(&mut self, other: &SimulationFile) {
        overlay!(self, other; design, n, gamma_grid, family, standardize, df, weibull_shape,
            weibull_scale, lognormal_mu, lognormal_sigma, cauchy_location, cauchy_scale,
            replications, np, alpha, attrition_coeffs, attrition_preset, seed, scheme, link,
            reestimate_ipw, separation, redraw_failed);
    }

    fn families(&self) -> Result<Vec<ErrorFamily>, ConfigError> {
        let names = self
            .family
            .as_ref()
            .map_or_else(|| vec!["normal".to_string()], OneOrMany::to_vec);
        let mut out = Vec::new();
        for name in names {
            if name.eq_ignore_ascii_case("all") {
                out.extend(ErrorFamily::NAMES.iter().map(|n| ErrorFamily::by_name(n).expect("known family")));
                continue;
            }
            let fam = ErrorFamily::by_name(&name).ok_or(ConfigError::Unknown {
                what: "error family",
                value: name,
            })?;
            out.push(fam);
        }
        Ok(out
            .into_iter()
            .map(|f| match f {
                ErrorFamily::Normal => f,
                ErrorFamily::Student { df } => ErrorFamily::Student {
                    df: self.df.unwrap_or(df),
                },
                ErrorFamily::Weibull { shape, scale } => ErrorFamily::Weibull {
                    shape: self.weibull_shape.unwrap_or(shape),
                    scale: self.weibull_scale.unwrap_or(scale),
                },
                ErrorFamily::LogNormal { mu_log, sigma_log } => ErrorFamily::LogNormal {
                    mu_log: self.lognormal_mu.unwrap_or(mu_log),
                    sigma_log: self.lognormal_sigma.unwrap_or(sigma_log),
                },
                ErrorFamily::Cauchy { location, scale } => ErrorFamily::Cauchy {
                    location: self.cauchy_location.unwrap_or(location),
                    scale: self.cauchy_scale.unwrap_or(scale),
                },
            })
            .collect())
    }

    /// One validated config per `(n, family)`, `n` outermost.
    pub fn expand(&self) -> Result<Vec<SimulationConfig>, ConfigError> {
        let design = match &self.design {
            None => Design::BaselineM1,
            Some(d) => Design::by_name(d).ok_or_else(|| ConfigError::Unknown {
                what: "design",
                value: d.clone(),
            })?,
        };
        let ns = self.n.as_ref().map_or_else(|| vec![20, 40, 60], OneOrMany::to_vec);
        let coeffs = match (self.attrition_coeffs, self.attrition_preset.as_deref()) {
            (Some(c), _) => c,
            (None, None | Some("default")) => ATTRITION_DEFAULT,
            (None, Some("illustrative")) => ATTRITION_ILLUSTRATIVE,
            (None, Some(other)) => {
                return Err(ConfigError::Unknown {
                    what: "attrition preset",
                    value: other.to_string(),
                })
            }
        };
        let scheme = self.scheme.as_deref().map(parse_scheme).transpose()?;
        let link = self.link.as_deref().map(parse_link).transpose()?.unwrap_or_default();
        let separation = self
            .separation
            .as_deref()
            .map(parse_separation)
            .transpose()?
            .unwrap_or(SeparationPolicy::Truncate);
        let families = self.families()?;
        let mut out = Vec::new();
        for &n in &ns {
            for &family in &families {
                let mut cfg = SimulationConfig::new(design, n, family);
                if let Some(g) = &self.gamma_grid {
                    cfg.gamma_grid = g.clone();
                }
                cfg.error = ErrorDistribution {
                    family,
                    standardize: self.standardize.unwrap_or(true),
                };
                cfg.replications = self.replications.unwrap_or(1000);
                cfg.np = self.np.unwrap_or(1000);
                cfg.alpha = self.alpha.unwrap_or(0.05);
                cfg.attrition_coeffs = coeffs;
                cfg.seed = self.seed.unwrap_or(DEFAULT_SEED);
                cfg.scheme = scheme;
                cfg.link = link;
                cfg.reestimate_ipw = self.reestimate_ipw.unwrap_or(true);
                cfg.separation = separation;
                cfg.redraw_failed = self.redraw_failed.unwrap_or(false);
                cfg.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
                out.push(cfg);
            }
        }
        Ok(out)
    }
}

pub fn parse_scheme(s: &str) -> Result<Scheme, ConfigError> {
    match s.to_ascii_lowercase().replace('-', "_").as_str() {
        "naive" => Ok(Scheme::Naive),
        "block" => Ok(Scheme::Block),
        "freedman_lane" | "fl" => Ok(Scheme::FreedmanLane),
        _ => Err(ConfigError::Unknown {
            what: "scheme",
            value: s.to_string(),
        }),
    }
}

pub fn parse_link(s: &str) -> Result<Link, ConfigError> {
    match s.to_ascii_lowercase().as_str() {
        "probit" => Ok(Link::Probit),
        "logit" => Ok(Link::Logit),
        _ => Err(ConfigError::Unknown {
            what: "link",
            value: s.to_string(),
        }),
    }
}

pub fn parse_separation(s: &str) -> Result<SeparationPolicy, ConfigError> {
    match s.to_ascii_lowercase().as_str() {
        "fail" => Ok(SeparationPolicy::Fail),
        "truncate" => Ok(SeparationPolicy::Truncate),
        _ => Err(ConfigError::Unknown {
            what: "separation policy",
            value: s.to_string(),
        }),
    }
}
