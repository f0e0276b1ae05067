use crate::error::{Error, Result};

/// Settings of the crispmax reparametrization.
#[derive(Clone, Debug, PartialEq)]
pub struct CrispmaxConfig {
    /// Inverse temperature reached at the last epoch.
    pub gamma_base: f64,
    /// Target bound on every entry of `A_k ⊙ A_k'`.
    pub eps: f64,
    /// Assumed per-entry separation between the leading operator and the rest.
    pub delta: f64,
    /// Ramp `γ` linearly over the epochs instead of using `gamma_base` throughout.
    pub anneal: bool,
    pub max_epochs: usize,
}

impl CrispmaxConfig {
    pub fn new(gamma_base: f64, eps: f64, delta: f64, anneal: bool, max_epochs: usize) -> Result<Self> {
        if !(gamma_base > 0.0 && gamma_base.is_finite()) {
            return Err(Error::Config(format!("gamma_base must be > 0, got {gamma_base}")));
        }
        check_eps(eps)?;
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::Config(format!("delta must be > 0, got {delta}")));
        }
        Ok(Self {
            gamma_base,
            eps,
            delta,
            anneal,
            max_epochs,
        })
    }

    /// Config whose `gamma_base` sits exactly at [`gamma_lower_bound`].
    pub fn at_bound(k: usize, delta: f64, eps: f64, anneal: bool, max_epochs: usize) -> Result<Self> {
        let gamma = gamma_lower_bound(k, delta, eps)?;
        Self::new(gamma, eps, delta, anneal, max_epochs)
    }

    /// Whether `gamma_base` is large enough for ε-orthogonality of K operators
    /// whose leading entries are separated by `delta`.
    pub fn guarantees_orthogonality(&self, k: usize) -> bool {
        gamma_lower_bound(k, self.delta, self.eps).is_ok_and(|b| self.gamma_base >= b)
    }
}

impl Default for CrispmaxConfig {
    /// K=2, δ=0.01, ε=0.01 at the bound, annealed over 3000 epochs.
    fn default() -> Self {
        Self::at_bound(2, 0.01, 0.01, true, 3000).expect("default crispmax parameters are valid")
    }
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps < 0.5) {
        return Err(Error::Domain(format!("eps must lie in (0, 0.5), got {eps}")));
    }
    Ok(())
}

/// Smallest `γ` for which crispmax of δ-separated inputs is ε-orthogonal:
///
/// `γ ≥ (1/δ) · ln( K·√(1−2ε) / (1 − √(1−2ε)) + 1 )`
pub fn gamma_lower_bound(k: usize, delta: f64, eps: f64) -> Result<f64> {
    if k == 0 {
        return Err(Error::Domain("K must be at least 1".into()));
    }
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::Domain(format!("delta must be > 0, got {delta}")));
    }
    check_eps(eps)?;
    let root = (1.0 - 2.0 * eps).sqrt();
    Ok((k as f64 * root / (1.0 - root)).ln_1p() / delta)
}

/// Effective `γ` at `epoch`: `gamma_base · epoch / max_epochs` when annealing,
/// floored at `gamma_base / max_epochs` so epoch 0 keeps a nonzero gradient.
pub fn anneal_gamma(cfg: &CrispmaxConfig, epoch: usize) -> f64 {
    if !cfg.anneal || cfg.max_epochs == 0 {
        return cfg.gamma_base;
    }
    let max = cfg.max_epochs as f64;
    let floor = cfg.gamma_base / max;
    let epoch = epoch.min(cfg.max_epochs) as f64;
    (cfg.gamma_base * epoch / max).max(floor)
}
