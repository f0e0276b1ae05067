use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::{sbu_skeleton, OperatorMode, SkeletonAdjacency};
use crate::basis::{ConstraintKind, ConstraintSpec};
use crate::error::{Error, Result};
use crate::gcn::Activation;
use crate::reparam::{gamma_lower_bound, CrispmaxConfig};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoisePolicy {
    /// Perturb the free parameters once, before the first forward pass.
    InitOnly,
    /// Perturb the free parameters before every forward pass.
    #[default]
    PerStep,
}

impl fmt::Display for NoisePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NoisePolicy::InitOnly => "init_only",
            NoisePolicy::PerStep => "per_step",
        })
    }
}

impl FromStr for NoisePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "init_only" => Ok(NoisePolicy::InitOnly),
            "per_step" => Ok(NoisePolicy::PerStep),
            other => Err(Error::Config(format!("unknown noise policy '{other}'"))),
        }
    }
}

/// Which joint graph the baselines start from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkeletonChoice {
    /// Two 15-joint SBU skeletons (30 joints).
    #[default]
    Sbu,
    /// A chain over however many joints the data has.
    Chain,
}

impl SkeletonChoice {
    pub fn build(self, joints: usize) -> Result<SkeletonAdjacency> {
        match self {
            SkeletonChoice::Sbu => {
                let s = sbu_skeleton();
                if s.n() != joints {
                    return Err(Error::Input(format!(
                        "sbu skeleton has {} joints but the data has {joints}",
                        s.n()
                    )));
                }
                Ok(s)
            }
            SkeletonChoice::Chain => Ok(SkeletonAdjacency::path(joints)),
        }
    }
}

impl fmt::Display for SkeletonChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SkeletonChoice::Sbu => "sbu",
            SkeletonChoice::Chain => "chain",
        })
    }
}

impl FromStr for SkeletonChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "sbu" => Ok(SkeletonChoice::Sbu),
            "chain" => Ok(SkeletonChoice::Chain),
            other => Err(Error::Config(format!("unknown skeleton '{other}'"))),
        }
    }
}

/// Everything that determines a training run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Clipped to the training-set size.
    pub batch_size: usize,
    pub momentum: f64,
    pub lr0: f64,
    pub lr_factor: f64,
    pub constraint: ConstraintKind,
    pub mode: OperatorMode,
    pub k: usize,
    /// `None` places γ exactly at the ε-orthogonality bound for (K, δ, ε).
    pub gamma_base: Option<f64>,
    pub eps: f64,
    pub delta: f64,
    pub anneal: bool,
    pub noise_std: f64,
    pub noise_policy: NoisePolicy,
    /// Temporal chunks per sequence.
    pub m: usize,
    pub seed: u64,
    pub channels: usize,
    pub activation: Activation,
    /// Use `(I − A_k)` for every operator.
    pub differential: bool,
    /// Standard deviation of the initial learned operator entries.
    pub init_std: f64,
    /// Amount added to one leading operator per entry at initialization
    /// when orthogonality is learned (0 disables).
    pub leader_gap: f64,
    pub skeleton: SkeletonChoice,
    /// Evaluate and emit the initial metrics only.
    pub dry_run: bool,
    /// Write a checkpoint every this many epochs (0 disables).
    pub checkpoint_every: usize,
    pub train_path: Option<String>,
    pub test_path: Option<String>,
    pub fold_path: Option<String>,
    /// Used when no test file or fold file is given.
    pub train_fraction: f64,
    pub metrics_path: Option<String>,
    pub artifact_path: Option<String>,
    pub checkpoint_path: Option<String>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 3000,
            batch_size: 200,
            momentum: 0.9,
            lr0: 0.01,
            lr_factor: 0.99,
            constraint: ConstraintKind::OrthStc,
            mode: OperatorMode::Ours,
            k: 4,
            gamma_base: None,
            eps: 0.01,
            delta: 0.01,
            anneal: true,
            noise_std: 1e-4,
            noise_policy: NoisePolicy::PerStep,
            m: 8,
            seed: 0,
            channels: 16,
            activation: Activation::Relu,
            differential: false,
            init_std: 0.1,
            leader_gap: 1.0,
            skeleton: SkeletonChoice::Sbu,
            dry_run: false,
            checkpoint_every: 0,
            train_path: None,
            test_path: None,
            fold_path: None,
            train_fraction: 0.7,
            metrics_path: None,
            artifact_path: None,
            checkpoint_path: None,
        }
    }
}

/// Keys accepted by [`TrainConfig::set`], in echo order.
pub const CONFIG_KEYS: [&str; 31] = [
    "epochs",
    "batch_size",
    "momentum",
    "lr0",
    "lr_factor",
    "constraint",
    "mode",
    "k",
    "gamma_base",
    "eps",
    "delta",
    "anneal",
    "noise_std",
    "noise_policy",
    "m",
    "seed",
    "channels",
    "activation",
    "differential",
    "init_std",
    "leader_gap",
    "skeleton",
    "dry_run",
    "checkpoint_every",
    "train_path",
    "test_path",
    "fold_path",
    "train_fraction",
    "metrics_path",
    "artifact_path",
    "checkpoint_path",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| Error::Config(format!("{key} = '{value}': {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        other => Err(Error::Config(format!("{key} = '{other}': expected a boolean"))),
    }
}

fn opt_path(value: &str) -> Option<String> {
    let v = value.trim();
    (!v.is_empty()).then(|| v.to_string())
}

impl TrainConfig {
    /// Sets one field from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key.trim() {
            "epochs" => self.epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "momentum" => self.momentum = parse(key, value)?,
            "lr0" => self.lr0 = parse(key, value)?,
            "lr_factor" => self.lr_factor = parse(key, value)?,
            "constraint" => self.constraint = value.trim().parse()?,
            "mode" => self.mode = value.trim().parse()?,
            "k" => self.k = parse(key, value)?,
            "gamma_base" => {
                self.gamma_base = match value.trim() {
                    "" | "bound" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "eps" => self.eps = parse(key, value)?,
            "delta" => self.delta = parse(key, value)?,
            "anneal" => self.anneal = parse_bool(key, value)?,
            "noise_std" => self.noise_std = parse(key, value)?,
            "noise_policy" => self.noise_policy = value.trim().parse()?,
            "m" => self.m = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "channels" => self.channels = parse(key, value)?,
            "activation" => self.activation = value.trim().parse()?,
            "differential" => self.differential = parse_bool(key, value)?,
            "init_std" => self.init_std = parse(key, value)?,
            "leader_gap" => self.leader_gap = parse(key, value)?,
            "skeleton" => self.skeleton = value.trim().parse()?,
            "dry_run" => self.dry_run = parse_bool(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, value)?,
            "train_path" => self.train_path = opt_path(value),
            "test_path" => self.test_path = opt_path(value),
            "fold_path" => self.fold_path = opt_path(value),
            "train_fraction" => self.train_fraction = parse(key, value)?,
            "metrics_path" => self.metrics_path = opt_path(value),
            "artifact_path" => self.artifact_path = opt_path(value),
            "checkpoint_path" => self.checkpoint_path = opt_path(value),
            other => return Err(Error::Config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of `self`. Blank lines and lines
    /// starting with `#` are skipped.
    pub fn apply_kv(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected 'key = value', got '{line}'", i + 1)))?;
            self.set(key, value).map_err(|e| match e {
                Error::Constraint(m) => Error::Constraint(format!("line {}: {m}", i + 1)),
                Error::Config(m) => Error::Config(format!("line {}: {m}", i + 1)),
                other => Error::Config(format!("line {}: {other}", i + 1)),
            })?;
        }
        Ok(())
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_kv(text)?;
        Ok(cfg)
    }

    /// Inverse of [`TrainConfig::from_kv`].
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        for key in CONFIG_KEYS {
            let _ = writeln!(out, "{key} = {}", self.value_of(key));
        }
        out
    }

    fn value_of(&self, key: &str) -> String {
        let path = |p: &Option<String>| p.clone().unwrap_or_default();
        match key {
            "epochs" => self.epochs.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "momentum" => self.momentum.to_string(),
            "lr0" => self.lr0.to_string(),
            "lr_factor" => self.lr_factor.to_string(),
            "constraint" => self.constraint.to_string(),
            "mode" => self.mode.to_string(),
            "k" => self.k.to_string(),
            "gamma_base" => self.gamma_base.map_or_else(|| "bound".into(), |g| g.to_string()),
            "eps" => self.eps.to_string(),
            "delta" => self.delta.to_string(),
            "anneal" => self.anneal.to_string(),
            "noise_std" => self.noise_std.to_string(),
            "noise_policy" => self.noise_policy.to_string(),
            "m" => self.m.to_string(),
            "seed" => self.seed.to_string(),
            "channels" => self.channels.to_string(),
            "activation" => self.activation.to_string(),
            "differential" => self.differential.to_string(),
            "init_std" => self.init_std.to_string(),
            "leader_gap" => self.leader_gap.to_string(),
            "skeleton" => self.skeleton.to_string(),
            "dry_run" => self.dry_run.to_string(),
            "checkpoint_every" => self.checkpoint_every.to_string(),
            "train_path" => path(&self.train_path),
            "test_path" => path(&self.test_path),
            "fold_path" => path(&self.fold_path),
            "train_fraction" => self.train_fraction.to_string(),
            "metrics_path" => path(&self.metrics_path),
            "artifact_path" => path(&self.artifact_path),
            "checkpoint_path" => path(&self.checkpoint_path),
            _ => unreachable!("key list and match arms agree"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1 (use dry_run for no training)".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if !(self.lr_factor > 0.0 && self.lr_factor < 1.0) {
            return Err(Error::Config(format!("lr_factor must lie in (0, 1), got {}", self.lr_factor)));
        }
        if !(self.lr0 >= super::LR_MIN && self.lr0 <= super::LR_MAX) {
            return Err(Error::Config(format!(
                "lr0 must lie in [{}, {}], got {}",
                super::LR_MIN,
                super::LR_MAX,
                self.lr0
            )));
        }
        if self.m == 0 || self.channels == 0 {
            return Err(Error::Config("m and channels must be >= 1".into()));
        }
        if !(self.init_std >= 0.0 && self.init_std.is_finite()) {
            return Err(Error::Config(format!("init_std must be >= 0, got {}", self.init_std)));
        }
        if !(self.leader_gap >= 0.0 && self.leader_gap.is_finite()) {
            return Err(Error::Config(format!("leader_gap must be >= 0, got {}", self.leader_gap)));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "train_fraction must lie in (0, 1), got {}",
                self.train_fraction
            )));
        }
        self.constraint.validate_for(self.k)?;
        self.constraint_spec().map(|_| ())
    }

    /// γ_base, resolved against the bound when unset.
    pub fn resolved_gamma(&self) -> Result<f64> {
        match self.gamma_base {
            Some(g) => Ok(g),
            None => gamma_lower_bound(self.k.max(2), self.delta, self.eps),
        }
    }

    pub fn constraint_spec(&self) -> Result<ConstraintSpec> {
        let crispmax = CrispmaxConfig::new(self.resolved_gamma()?, self.eps, self.delta, self.anneal, self.epochs)?;
        ConstraintSpec::new(self.constraint, crispmax, self.noise_std)
    }
}
