//! Run configuration in a flat `key = value` format.
//!
//! Keys are dotted (`objective.alpha = 100`); a `[section]` header prefixes
//! the keys that follow it. `#` starts a comment.
//!
//! ```text
//! mesh.unit_square = 16            # or mesh.msh_path = cavity.msh
//! objective.lambda_target_factor = 1.05
//! objective.alpha = 1e-3
//! eigen.index = 2
//! output.dir = out
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::bfgs::OptimizerConfig;
use crate::eigen::EigenSelection;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("duplicate key `{0}`")]
    DuplicateKey(String),
    #[error("missing key `{0}`")]
    MissingKey(String),
    #[error("invalid value for `{key}`: {reason}")]
    InvalidValue { key: String, reason: String },
    #[error("mesh file {0} does not exist")]
    MeshNotFound(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub enum MeshSource {
    MshPath(PathBuf),
    UnitSquare(usize),
}

/// `λ*` given directly or as a multiple of the initial eigenvalue.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TargetSpec {
    Absolute(f64),
    RelativeToInitial(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub mesh: MeshSource,
    pub target: TargetSpec,
    pub alpha: f64,
    pub beta: f64,
    pub epsilon: f64,
    /// `shift` is ignored when `shift_auto` is set; it is then derived from `λ*`.
    pub eigen: EigenSelection,
    pub shift_auto: bool,
    pub optimizer: OptimizerConfig,
    pub output_dir: PathBuf,
    /// Write a VTK snapshot every n iterations; 0 writes only the final state.
    pub emit_vtk_every: usize,
    pub seed: u64,
}

const KEYS: &[&str] = &[
    "mesh.msh_path",
    "mesh.unit_square",
    "objective.lambda_target",
    "objective.lambda_target_factor",
    "objective.alpha",
    "objective.beta",
    "objective.epsilon",
    "eigen.index",
    "eigen.gap_min",
    "eigen.shift",
    "eigen.nev",
    "eigen.tol",
    "eigen.strict_gap",
    "optimizer.tol",
    "optimizer.k_max",
    "optimizer.gamma",
    "optimizer.rho",
    "optimizer.ls_max",
    "optimizer.xi",
    "optimizer.m_mem",
    "optimizer.b0_scale",
    "output.dir",
    "output.emit_vtk_every",
    "seed",
];

fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut out = BTreeMap::new();
    let mut section = String::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest.strip_suffix(']').ok_or_else(|| ConfigError::Syntax {
                line: idx + 1,
                reason: "unterminated section header".into(),
            })?;
            section = name.trim().to_string();
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line: idx + 1,
            reason: format!("expected `key = value`, got `{line}`"),
        })?;
        let k = k.trim();
        if k.is_empty() {
            return Err(ConfigError::Syntax {
                line: idx + 1,
                reason: "empty key".into(),
            });
        }
        let key = if section.is_empty() { k.to_string() } else { format!("{section}.{k}") };
        if !KEYS.contains(&key.as_str()) {
            return Err(ConfigError::UnknownKey(key));
        }
        if out.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(ConfigError::DuplicateKey(key));
        }
    }
    Ok(out)
}

struct Values(BTreeMap<String, String>);

impl Values {
    fn get<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        self.0
            .get(key)
            .map(|v| {
                v.parse::<T>().map_err(|e| ConfigError::InvalidValue {
                    key: key.into(),
                    reason: format!("`{v}`: {e}"),
                })
            })
            .transpose()
    }

    fn or<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }
}

fn invalid(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::InvalidValue {
        key: key.into(),
        reason: reason.into(),
    }
}

impl RunConfig {
    /// Parses a configuration; relative paths are resolved against `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let v = Values(parse_pairs(text)?);

        let mesh = match (v.get::<String>("mesh.msh_path")?, v.get::<usize>("mesh.unit_square")?) {
            (Some(p), None) => MeshSource::MshPath(base_dir.join(p)),
            (None, Some(n)) if n > 0 => MeshSource::UnitSquare(n),
            (None, Some(_)) => return Err(invalid("mesh.unit_square", "must be positive")),
            (Some(_), Some(_)) => return Err(invalid("mesh", "give exactly one of msh_path and unit_square")),
            (None, None) => return Err(ConfigError::MissingKey("mesh.msh_path or mesh.unit_square".into())),
        };

        let target = match (
            v.get::<f64>("objective.lambda_target")?,
            v.get::<f64>("objective.lambda_target_factor")?,
        ) {
            (Some(t), None) if t.is_finite() && t > 0.0 => TargetSpec::Absolute(t),
            (None, Some(f)) if f.is_finite() && f > 0.0 => TargetSpec::RelativeToInitial(f),
            (None, None) => return Err(ConfigError::MissingKey("objective.lambda_target".into())),
            (Some(_), Some(_)) => {
                return Err(invalid("objective", "give only one of lambda_target and lambda_target_factor"))
            }
            _ => return Err(invalid("objective.lambda_target", "must be positive")),
        };
        let alpha = v.or("objective.alpha", 100.0)?;
        let beta = v.or("objective.beta", 1e-6)?;
        let epsilon = v.or("objective.epsilon", 1e-4)?;
        if !(alpha >= 0.0) {
            return Err(invalid("objective.alpha", "must be non-negative"));
        }
        if !(beta >= 0.0) {
            return Err(invalid("objective.beta", "must be non-negative"));
        }
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(invalid("objective.epsilon", "must lie in (0, 1)"));
        }

        let mut eigen = EigenSelection::new(v.or("eigen.index", 0)?);
        eigen.nev = v.or("eigen.nev", eigen.nev)?;
        eigen.tol = v.or("eigen.tol", eigen.tol)?;
        eigen.gap_min = v.or("eigen.gap_min", eigen.gap_min)?;
        eigen.strict_gap = v.or("eigen.strict_gap", false)?;
        let shift: Option<f64> = v.get("eigen.shift")?;
        eigen.shift = shift.unwrap_or(0.0);
        let seed = v.or("seed", 0u64)?;
        eigen.seed = seed;
        eigen.validate().map_err(|e| invalid("eigen", e.to_string()))?;

        let mut optimizer = OptimizerConfig::for_alpha(alpha);
        optimizer.tol = v.or("optimizer.tol", optimizer.tol)?;
        optimizer.k_max = v.or("optimizer.k_max", optimizer.k_max)?;
        optimizer.gamma = v.or("optimizer.gamma", optimizer.gamma)?;
        optimizer.rho_ls = v.or("optimizer.rho", optimizer.rho_ls)?;
        optimizer.ls_max = v.or("optimizer.ls_max", optimizer.ls_max)?;
        optimizer.xi = v.or("optimizer.xi", optimizer.xi)?;
        optimizer.m_mem = v.or("optimizer.m_mem", optimizer.m_mem)?;
        optimizer.b0_scale = v.or("optimizer.b0_scale", optimizer.b0_scale)?;
        optimizer.validate().map_err(|e| invalid("optimizer", e))?;

        let output_dir = base_dir.join(v.or("output.dir", "maxshape-out".to_string())?);

        Ok(Self {
            mesh,
            target,
            alpha,
            beta,
            epsilon,
            eigen,
            shift_auto: shift.is_none(),
            optimizer,
            output_dir,
            emit_vtk_every: v.or("output.emit_vtk_every", 0)?,
            seed,
        })
    }

    /// Reads a configuration file; paths inside are relative to its directory.
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    /// Configuration for the unit square with the given target.
    pub fn unit_square(n: usize, target: TargetSpec, index: usize, output_dir: PathBuf) -> Self {
        Self {
            mesh: MeshSource::UnitSquare(n),
            target,
            alpha: 100.0,
            beta: 1e-6,
            epsilon: 1e-4,
            eigen: EigenSelection::new(index),
            shift_auto: true,
            optimizer: OptimizerConfig::for_alpha(100.0),
            output_dir,
            emit_vtk_every: 0,
            seed: 0,
        }
    }

    /// Sets `α` and the matching default `B₀ = 1/α`.
    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self.optimizer.b0_scale = OptimizerConfig::for_alpha(alpha).b0_scale;
        self
    }
}
