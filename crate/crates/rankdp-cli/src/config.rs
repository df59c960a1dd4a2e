//! Flat `key=value` run configuration with command-line overrides.
//!
//! Paths inside a config file resolve relative to the file's directory, so a
//! directory holding a config, manifest and gallery is self-contained.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use rankdp_core::budget::MechanismParams;
use rankdp_core::influence::RankingKey;
use rankdp_core::mechanism::Method;

#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

/// Active-set rule for the closed-form solver.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KActive {
    /// Envelope-mass prefix rule (99.9%).
    Auto,
    Fixed(usize),
}

/// Fully resolved run configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub manifest: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub side: usize,
    pub levels: usize,
    pub m_f: usize,
    pub ranking: RankingKey,
    pub method: Method,
    pub epsilon0: f64,
    pub epsilon0_grid: Vec<f64>,
    pub p: f64,
    pub eta: f64,
    pub delta: f64,
    pub max_iters: usize,
    pub seed: u64,
    pub repeats: usize,
    pub k_active: KActive,
    pub tau_w: f64,
    pub radius_slack: f64,
    pub sensitivity_slack: f64,
    pub euclid_threshold: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            manifest: None,
            output_dir: PathBuf::from("rankdp-out"),
            side: 64,
            levels: 5,
            m_f: 5,
            ranking: RankingKey::WeightEnergy,
            method: Method::RdpLmgd,
            epsilon0: 0.2,
            epsilon0_grid: vec![0.2, 0.4, 0.6, 0.8, 1.0],
            p: 0.02,
            eta: 0.05,
            delta: 1e-3,
            max_iters: 50_000,
            seed: 42,
            repeats: 200,
            k_active: KActive::Auto,
            tau_w: rankdp_core::budget::DEFAULT_TAU_W,
            radius_slack: 1.1,
            sensitivity_slack: 1.0,
            euclid_threshold: 0.975,
        }
    }
}

impl RunConfig {
    /// Loads the file, then applies `key=value` overrides in order.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read {}: {}", path.display(), e)))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let mut pairs = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                ConfigError(format!("line {}: expected key=value", lineno + 1))
            })?;
            pairs.insert(k.trim().to_string(), v.trim().to_string());
        }
        for ov in overrides {
            let (k, v) = ov
                .split_once('=')
                .ok_or_else(|| ConfigError(format!("override `{}`: expected key=value", ov)))?;
            pairs.insert(k.trim().to_string(), v.trim().to_string());
        }
        Self::from_pairs(pairs, base)
    }

    pub fn from_overrides(overrides: &[String]) -> Result<Self, ConfigError> {
        let mut pairs = BTreeMap::new();
        for ov in overrides {
            let (k, v) = ov
                .split_once('=')
                .ok_or_else(|| ConfigError(format!("override `{}`: expected key=value", ov)))?;
            pairs.insert(k.trim().to_string(), v.trim().to_string());
        }
        Self::from_pairs(pairs, Path::new("."))
    }

    fn from_pairs(pairs: BTreeMap<String, String>, base: &Path) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        let mut levels_set = false;
        for (key, value) in &pairs {
            let v = value.as_str();
            let parse_f64 = |name: &str| -> Result<f64, ConfigError> {
                v.parse()
                    .map_err(|_| ConfigError(format!("{}: bad number `{}`", name, v)))
            };
            let parse_usize = |name: &str| -> Result<usize, ConfigError> {
                v.parse()
                    .map_err(|_| ConfigError(format!("{}: bad integer `{}`", name, v)))
            };
            match key.as_str() {
                "manifest" => cfg.manifest = Some(base.join(v)),
                "output_dir" => cfg.output_dir = base.join(v),
                "side" => cfg.side = parse_usize("side")?,
                "levels" => {
                    cfg.levels = parse_usize("levels")?;
                    levels_set = true;
                }
                "m_f" => cfg.m_f = parse_usize("m_f")?,
                "ranking" => {
                    cfg.ranking = RankingKey::parse(v)
                        .ok_or_else(|| ConfigError(format!("unknown ranking `{}`", v)))?
                }
                "method" => {
                    cfg.method = Method::parse(v)
                        .ok_or_else(|| ConfigError(format!("unknown method `{}`", v)))?
                }
                "epsilon0" => cfg.epsilon0 = parse_f64("epsilon0")?,
                "epsilon0_grid" => {
                    cfg.epsilon0_grid = v
                        .split(',')
                        .map(|t| {
                            t.trim()
                                .parse()
                                .map_err(|_| ConfigError(format!("bad grid entry `{}`", t)))
                        })
                        .collect::<Result<_, _>>()?;
                }
                "p" => cfg.p = parse_f64("p")?,
                "eta" => cfg.eta = parse_f64("eta")?,
                "delta" => cfg.delta = parse_f64("delta")?,
                "max_iters" => cfg.max_iters = parse_usize("max_iters")?,
                "seed" => {
                    cfg.seed = v
                        .parse()
                        .map_err(|_| ConfigError(format!("seed: bad integer `{}`", v)))?
                }
                "repeats" => cfg.repeats = parse_usize("repeats")?,
                "k_active" => {
                    cfg.k_active = if v == "auto" {
                        KActive::Auto
                    } else {
                        KActive::Fixed(parse_usize("k_active")?)
                    }
                }
                "tau_w" => cfg.tau_w = parse_f64("tau_w")?,
                "radius_slack" => cfg.radius_slack = parse_f64("radius_slack")?,
                "sensitivity_slack" => cfg.sensitivity_slack = parse_f64("sensitivity_slack")?,
                "euclid_threshold" => cfg.euclid_threshold = parse_f64("euclid_threshold")?,
                other => return Err(ConfigError(format!("unknown key `{}`", other))),
            }
        }
        if !levels_set {
            cfg.levels = (cfg.side.trailing_zeros().saturating_sub(1)).max(1) as usize;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.side < 4 || !self.side.is_power_of_two() {
            return Err(ConfigError(format!(
                "side {} must be a power of two >= 4",
                self.side
            )));
        }
        if self.levels == 0 || (1usize << self.levels) > self.side {
            return Err(ConfigError(format!(
                "levels {} invalid for side {}",
                self.levels, self.side
            )));
        }
        if self.epsilon0_grid.is_empty() || self.epsilon0_grid.iter().any(|&e| e <= 0.0) {
            return Err(ConfigError("epsilon0_grid must be non-empty and positive".into()));
        }
        if self.epsilon0 <= 0.0 {
            return Err(ConfigError("epsilon0 must be positive".into()));
        }
        if self.repeats == 0 {
            return Err(ConfigError("repeats must be >= 1".into()));
        }
        if !(0.0 < self.p && self.p < 1.0) {
            return Err(ConfigError(format!("p {} outside (0,1)", self.p)));
        }
        if !(0.001..=1.0).contains(&self.eta) {
            return Err(ConfigError(format!("eta {} outside [0.001, 1]", self.eta)));
        }
        if self.delta <= 0.0 {
            return Err(ConfigError("delta must be positive".into()));
        }
        if self.euclid_threshold <= 0.0 {
            return Err(ConfigError("euclid_threshold must be positive".into()));
        }
        Ok(())
    }

    pub fn mechanism_params(&self, epsilon0: f64) -> MechanismParams {
        MechanismParams {
            epsilon0,
            p: self.p,
            eta: self.eta,
            delta: self.delta,
            max_iters: self.max_iters,
            seed: self.seed,
        }
    }

    pub fn manifest_path(&self) -> Result<&Path, ConfigError> {
        self.manifest
            .as_deref()
            .ok_or_else(|| ConfigError("missing `manifest` key".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_overrides() {
        let cfg = RunConfig::from_overrides(&[
            "side=16".into(),
            "m_f=3".into(),
            "epsilon0_grid=0.5,1.0".into(),
            "k_active=24".into(),
        ])
        .unwrap();
        assert_eq!(cfg.side, 16);
        assert_eq!(cfg.levels, 3); // derived default
        assert_eq!(cfg.epsilon0_grid, vec![0.5, 1.0]);
        assert_eq!(cfg.k_active, KActive::Fixed(24));
    }

    #[test]
    fn bad_values_rejected() {
        assert!(RunConfig::from_overrides(&["side=10".into()]).is_err());
        assert!(RunConfig::from_overrides(&["eta=5".into()]).is_err());
        assert!(RunConfig::from_overrides(&["method=bogus".into()]).is_err());
        assert!(RunConfig::from_overrides(&["nonsense=1".into()]).is_err());
    }
}
