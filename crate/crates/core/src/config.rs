//! Experiment configuration: a flat `key = value` text format with `#`
//! comments and dotted keys for nesting. Any language can parse or generate
//! it with string splitting alone.
//!
//! Later assignments win, both within a file and when command-line overrides
//! are appended after the file's pairs. [`ExperimentConfig::to_text`] emits
//! every effective setting in a fixed order, so parsing its output
//! reproduces the configuration exactly.

use std::collections::HashMap;
use std::fmt;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::lasso::SolveOptions;
use crate::sim::{Beta0Spec, DebiasParams, DesignSpec, PhiPolicy, Placement, SimParams};
use crate::theory::{ConeSearchOptions, PhiSearchMode};

/// What the binary should do.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Fit user-supplied data from CSV files.
    Fit,
    /// Run a replicated synthetic experiment.
    Simulate,
    /// Evaluate the theory diagnostics on one synthetic instance.
    Theory,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Mode::Fit => "fit",
            Mode::Simulate => "simulate",
            Mode::Theory => "theory",
        };
        f.write_str(s)
    }
}

/// One parsed `key = value` assignment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigPair {
    pub key: String,
    pub value: String,
    /// 1-based source line; 0 for command-line overrides.
    pub line: usize,
}

/// Parse the text format into ordered assignments. Blank lines and lines
/// starting with `#` are skipped; everything else must contain `=`.
pub fn parse_config_text(text: &str) -> Result<Vec<ConfigPair>> {
    let mut pairs = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some(eq) = line.find('=') else {
            return Err(Error::ConfigParse {
                line: idx + 1,
                message: format!("expected `key = value`, got `{line}`"),
            });
        };
        let key = line[..eq].trim();
        let value = line[eq + 1..].trim();
        if key.is_empty() {
            return Err(Error::ConfigParse {
                line: idx + 1,
                message: "empty key".to_string(),
            });
        }
        pairs.push(ConfigPair {
            key: key.to_string(),
            value: value.to_string(),
            line: idx + 1,
        });
    }
    Ok(pairs)
}

/// Append command-line overrides (`key=value` strings) after the file's
/// assignments so they take precedence.
pub fn apply_overrides(pairs: &mut Vec<ConfigPair>, overrides: &[String]) -> Result<()> {
    for ov in overrides {
        let Some(eq) = ov.find('=') else {
            return Err(Error::ConfigParse {
                line: 0,
                message: format!("override must look like key=value, got `{ov}`"),
            });
        };
        let key = ov[..eq].trim();
        let value = ov[eq + 1..].trim();
        if key.is_empty() {
            return Err(Error::ConfigParse {
                line: 0,
                message: format!("override has an empty key: `{ov}`"),
            });
        }
        pairs.push(ConfigPair {
            key: key.to_string(),
            value: value.to_string(),
            line: 0,
        });
    }
    Ok(())
}

/// Fully resolved experiment settings. Construct with [`ExperimentConfig::from_pairs`].
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub design_family: String,
    pub n: usize,
    pub p: usize,
    pub rho: f64,
    pub tau: f64,
    /// Grouped (unpenalized) column indices, 0-based ascending.
    pub g: Vec<usize>,
    pub s: usize,
    pub beta_min: f64,
    pub placement: String,
    pub g_value: f64,
    pub sigma: f64,
    /// `known` uses the configured sigma; `estimate` plugs in a residual
    /// estimate (fit mode only).
    pub sigma_mode: String,
    pub a: f64,
    pub level: f64,
    pub replicates: usize,
    pub base_seed: u64,
    pub solver_tol: f64,
    pub solver_max_sweeps: usize,
    pub phi0_mode: String,
    pub phi0_value: f64,
    pub phi0_n_directions: usize,
    pub phi0_cone_constant: f64,
    pub phi0_mesh_resolution: usize,
    pub debias_enabled: bool,
    pub debias_a_node: f64,
    pub output_format: String,
    /// Output directory; empty means the PLASSO_OUT_DIR environment
    /// variable, falling back to the working directory.
    pub output_dir: String,
    pub output_summary: String,
    /// Per-replicate record file; empty skips writing records.
    pub output_records: String,
    pub data_x: String,
    pub data_y: String,
}

fn validation(field: &str, message: impl Into<String>) -> Error {
    Error::ConfigValidation {
        field: field.to_string(),
        message: message.into(),
    }
}

struct PairReader {
    map: HashMap<String, (String, usize)>,
    used: Vec<String>,
}

impl PairReader {
    fn new(pairs: &[ConfigPair]) -> Self {
        let mut map = HashMap::new();
        for p in pairs {
            map.insert(p.key.clone(), (p.value.clone(), p.line));
        }
        PairReader {
            map,
            used: Vec::new(),
        }
    }

    fn raw(&mut self, key: &str) -> Option<String> {
        self.used.push(key.to_string());
        self.map.get(key).map(|(v, _)| v.clone())
    }

    fn string(&mut self, key: &str, default: &str) -> String {
        self.raw(key).unwrap_or_else(|| default.to_string())
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v
                .parse::<T>()
                .map_err(|_| validation(key, format!("cannot parse `{v}`"))),
        }
    }

    fn bool(&mut self, key: &str, default: bool) -> Result<bool> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => match v.as_str() {
                "true" | "1" | "yes" => Ok(true),
                "false" | "0" | "no" => Ok(false),
                other => Err(validation(
                    key,
                    format!("expected true/false, got `{other}`"),
                )),
            },
        }
    }

    fn index_list(&mut self, key: &str, default: &[usize]) -> Result<Vec<usize>> {
        match self.raw(key) {
            None => Ok(default.to_vec()),
            Some(v) => {
                let trimmed = v.trim();
                if trimmed.is_empty() {
                    return Ok(Vec::new());
                }
                trimmed
                    .split(',')
                    .map(|tok| {
                        tok.trim()
                            .parse::<usize>()
                            .map_err(|_| validation(key, format!("cannot parse index `{tok}`")))
                    })
                    .collect()
            }
        }
    }

    fn unknown_keys(&self) -> Vec<String> {
        let mut unknown: Vec<String> = self
            .map
            .keys()
            .filter(|k| !self.used.contains(k))
            .cloned()
            .collect();
        unknown.sort();
        unknown
    }
}

impl ExperimentConfig {
    /// Resolve assignments into a typed config with defaults, then validate.
    pub fn from_pairs(pairs: &[ConfigPair]) -> Result<Self> {
        let mut r = PairReader::new(pairs);
        let mode = match r.raw("mode") {
            None => return Err(validation("mode", "required: one of fit, simulate, theory")),
            Some(v) => match v.as_str() {
                "fit" => Mode::Fit,
                "simulate" => Mode::Simulate,
                "theory" => Mode::Theory,
                other => {
                    return Err(validation(
                        "mode",
                        format!("expected fit, simulate, or theory, got `{other}`"),
                    ))
                }
            },
        };
        let config = ExperimentConfig {
            mode,
            design_family: r.string("design.family", "orthogonal"),
            n: r.parse("design.n", 100usize)?,
            p: r.parse("design.p", 50usize)?,
            rho: r.parse("design.rho", 0.5f64)?,
            tau: r.parse("design.tau", 0.1f64)?,
            g: r.index_list("group.indices", &[0, 1])?,
            s: r.parse("beta0.s", 3usize)?,
            beta_min: r.parse("beta0.beta_min", 1.0f64)?,
            placement: r.string("beta0.placement", "lowest"),
            g_value: r.parse("beta0.g_value", 1.0f64)?,
            sigma: r.parse("sigma", 1.0f64)?,
            sigma_mode: r.string("sigma.mode", "known"),
            a: r.parse("a", 4.0f64)?,
            level: r.parse("level", 0.95f64)?,
            replicates: r.parse("replicates", 100usize)?,
            base_seed: r.parse("base_seed", 1u64)?,
            solver_tol: r.parse("solver.tol", 1e-8f64)?,
            solver_max_sweeps: r.parse("solver.max_sweeps", 10_000usize)?,
            phi0_mode: r.string("phi0.mode", "auto"),
            phi0_value: r.parse("phi0.value", 1.0f64)?,
            phi0_n_directions: r.parse("phi0.n_directions", 100_000usize)?,
            phi0_cone_constant: r.parse("phi0.cone_constant", 3.0f64)?,
            phi0_mesh_resolution: r.parse("phi0.mesh_resolution", 8usize)?,
            debias_enabled: r.bool("debias.enabled", false)?,
            debias_a_node: r.parse("debias.a_node", 2.0f64)?,
            output_format: r.string("output.format", "csv"),
            output_dir: r.string("output.dir", ""),
            output_summary: r.string("output.summary", "summary"),
            output_records: r.string("output.records", ""),
            data_x: r.string("data.x", ""),
            data_y: r.string("data.y", ""),
        };
        let unknown = r.unknown_keys();
        if !unknown.is_empty() {
            return Err(validation(
                &unknown[0],
                "unknown configuration key".to_string(),
            ));
        }
        config.validate()?;
        Ok(config)
    }

    /// Field-by-field validation; every error names the offending key.
    pub fn validate(&self) -> Result<()> {
        match self.design_family.as_str() {
            "orthogonal" | "gaussian_iid" | "gaussian_ar1" | "theta_controlled" => {}
            other => {
                return Err(validation(
                    "design.family",
                    format!(
                        "expected orthogonal, gaussian_iid, gaussian_ar1, or theta_controlled, got `{other}`"
                    ),
                ))
            }
        }
        if self.n == 0 {
            return Err(validation("design.n", "sample size must be positive"));
        }
        if self.p < 2 {
            return Err(validation("design.p", "need at least two columns"));
        }
        if !(self.rho.abs() < 1.0) {
            return Err(validation("design.rho", "must satisfy |rho| < 1"));
        }
        if self.tau < 0.0 {
            return Err(validation("design.tau", "must be nonnegative"));
        }
        if self.g.is_empty() {
            return Err(validation("group.indices", "must list at least one index"));
        }
        if self.g.windows(2).any(|w| w[0] >= w[1]) {
            return Err(validation(
                "group.indices",
                "must be strictly increasing without duplicates",
            ));
        }
        if *self.g.last().unwrap() >= self.p {
            return Err(validation(
                "group.indices",
                format!(
                    "index {} out of range for p = {}",
                    self.g.last().unwrap(),
                    self.p
                ),
            ));
        }
        if self.g.len() >= self.p {
            return Err(validation(
                "group.indices",
                "group must leave at least one penalized column",
            ));
        }
        if self.s > self.p - self.g.len() {
            return Err(validation(
                "beta0.s",
                format!(
                    "requested {} signals but only {} penalized columns exist",
                    self.s,
                    self.p - self.g.len()
                ),
            ));
        }
        if self.beta_min < 0.0 {
            return Err(validation("beta0.beta_min", "must be nonnegative"));
        }
        match self.placement.as_str() {
            "lowest" | "highest" => {}
            other => {
                return Err(validation(
                    "beta0.placement",
                    format!("expected lowest or highest, got `{other}`"),
                ))
            }
        }
        if self.sigma < 0.0 || !self.sigma.is_finite() {
            return Err(validation("sigma", "must be nonnegative and finite"));
        }
        match self.sigma_mode.as_str() {
            "known" => {}
            "estimate" => {
                if self.mode != Mode::Fit {
                    return Err(validation(
                        "sigma.mode",
                        "estimate is only available in fit mode; simulations know sigma",
                    ));
                }
            }
            other => {
                return Err(validation(
                    "sigma.mode",
                    format!("expected known or estimate, got `{other}`"),
                ))
            }
        }
        if self.mode != Mode::Fit && !(self.sigma > 0.0) {
            return Err(validation("sigma", "must be positive for synthetic modes"));
        }
        if !(self.a > 0.0) {
            return Err(validation("a", "penalty multiplier must be positive"));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(validation("level", "must lie strictly between 0 and 1"));
        }
        if !(self.solver_tol > 0.0) {
            return Err(validation("solver.tol", "must be positive"));
        }
        if self.solver_max_sweeps == 0 {
            return Err(validation("solver.max_sweeps", "must be positive"));
        }
        match self.phi0_mode.as_str() {
            "auto" | "exact" | "random" => {}
            "fixed" => {
                if !(self.phi0_value > 0.0) {
                    return Err(validation("phi0.value", "must be positive in fixed mode"));
                }
            }
            other => {
                return Err(validation(
                    "phi0.mode",
                    format!("expected auto, exact, random, or fixed, got `{other}`"),
                ))
            }
        }
        if self.phi0_n_directions == 0 {
            return Err(validation("phi0.n_directions", "must be positive"));
        }
        if !(self.phi0_cone_constant > 0.0) {
            return Err(validation("phi0.cone_constant", "must be positive"));
        }
        if self.phi0_mesh_resolution == 0 {
            return Err(validation("phi0.mesh_resolution", "must be positive"));
        }
        if !(self.debias_a_node > 0.0) {
            return Err(validation("debias.a_node", "must be positive"));
        }
        match self.output_format.as_str() {
            "csv" | "json" => {}
            other => {
                return Err(validation(
                    "output.format",
                    format!("expected csv or json, got `{other}`"),
                ))
            }
        }
        if self.output_summary.is_empty() {
            return Err(validation("output.summary", "must name a file"));
        }
        if self.mode == Mode::Fit {
            if self.data_x.is_empty() {
                return Err(validation("data.x", "fit mode requires a design CSV path"));
            }
            if self.data_y.is_empty() {
                return Err(validation(
                    "data.y",
                    "fit mode requires a response CSV path",
                ));
            }
        }
        Ok(())
    }

    /// Canonical text form: every effective setting, fixed order. Parsing
    /// the output reproduces this configuration exactly.
    pub fn to_text(&self) -> String {
        let g_list = self
            .g
            .iter()
            .map(|j| j.to_string())
            .collect::<Vec<_>>()
            .join(",");
        let mut out = String::new();
        let mut push = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        push("mode", self.mode.to_string());
        push("design.family", self.design_family.clone());
        push("design.n", self.n.to_string());
        push("design.p", self.p.to_string());
        push("design.rho", self.rho.to_string());
        push("design.tau", self.tau.to_string());
        push("group.indices", g_list);
        push("beta0.s", self.s.to_string());
        push("beta0.beta_min", self.beta_min.to_string());
        push("beta0.placement", self.placement.clone());
        push("beta0.g_value", self.g_value.to_string());
        push("sigma", self.sigma.to_string());
        push("sigma.mode", self.sigma_mode.clone());
        push("a", self.a.to_string());
        push("level", self.level.to_string());
        push("replicates", self.replicates.to_string());
        push("base_seed", self.base_seed.to_string());
        push("solver.tol", self.solver_tol.to_string());
        push("solver.max_sweeps", self.solver_max_sweeps.to_string());
        push("phi0.mode", self.phi0_mode.clone());
        push("phi0.value", self.phi0_value.to_string());
        push("phi0.n_directions", self.phi0_n_directions.to_string());
        push("phi0.cone_constant", self.phi0_cone_constant.to_string());
        push(
            "phi0.mesh_resolution",
            self.phi0_mesh_resolution.to_string(),
        );
        push("debias.enabled", self.debias_enabled.to_string());
        push("debias.a_node", self.debias_a_node.to_string());
        push("output.format", self.output_format.clone());
        push("output.dir", self.output_dir.clone());
        push("output.summary", self.output_summary.clone());
        push("output.records", self.output_records.clone());
        push("data.x", self.data_x.clone());
        push("data.y", self.data_y.clone());
        out
    }

    /// SHA-256 of the canonical text, hex-encoded. Stamped into every output
    /// file so results can be traced to their exact settings.
    pub fn sha256_hex(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.to_text().as_bytes());
        let digest = hasher.finalize();
        let mut hex = String::with_capacity(64);
        for byte in digest {
            use std::fmt::Write;
            write!(hex, "{byte:02x}").expect("writing to a String cannot fail");
        }
        hex
    }

    /// Translate into the simulation lab's parameter block.
    pub fn to_sim_params(&self) -> Result<SimParams> {
        let design = match self.design_family.as_str() {
            "orthogonal" => DesignSpec::Orthogonal,
            "gaussian_iid" => DesignSpec::GaussianIid,
            "gaussian_ar1" => DesignSpec::GaussianAr1 { rho: self.rho },
            "theta_controlled" => DesignSpec::ThetaControlled { tau: self.tau },
            other => {
                return Err(validation(
                    "design.family",
                    format!("unknown family `{other}`"),
                ))
            }
        };
        let placement = match self.placement.as_str() {
            "lowest" => Placement::Lowest,
            "highest" => Placement::Highest,
            other => {
                return Err(validation(
                    "beta0.placement",
                    format!("unknown placement `{other}`"),
                ))
            }
        };
        let (phi0_policy, search_mode) = match self.phi0_mode.as_str() {
            "auto" => (PhiPolicy::CertifiedOrSearch, PhiSearchMode::Auto),
            "exact" => (PhiPolicy::CertifiedOrSearch, PhiSearchMode::ForceExactSmall),
            "random" => (PhiPolicy::CertifiedOrSearch, PhiSearchMode::ForceRandom),
            "fixed" => (PhiPolicy::Fixed(self.phi0_value), PhiSearchMode::Auto),
            other => return Err(validation("phi0.mode", format!("unknown mode `{other}`"))),
        };
        Ok(SimParams {
            design,
            n: self.n,
            p: self.p,
            g: self.g.clone(),
            beta0: Beta0Spec {
                s: self.s,
                beta_min: self.beta_min,
                placement,
                g_value: self.g_value,
            },
            sigma: self.sigma,
            a: self.a,
            level: self.level,
            replicates: self.replicates,
            base_seed: self.base_seed,
            solver: SolveOptions {
                tol: self.solver_tol,
                max_sweeps: self.solver_max_sweeps,
            },
            phi0_policy,
            phi0_search: ConeSearchOptions {
                cone_constant: self.phi0_cone_constant,
                n_directions: self.phi0_n_directions,
                seed: 0,
                mesh_resolution: self.phi0_mesh_resolution,
                mode: search_mode,
            },
            debias: if self.debias_enabled {
                Some(DebiasParams {
                    a_node: self.debias_a_node,
                })
            } else {
                None
            },
        })
    }
}
