//! Slow reference implementations used to check the main code path.
//!
//! Nothing here calls into [`crate::gcn`] or the reparametrization
//! internals, except where the function under test is the point of the
//! exercise: the proposition trials feed `crispmax_forward` and check the
//! result with their own loops, and the pipeline gradient check differences
//! a loss built from [`naive_gcn`] on top of the constraint forward map.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::baselines::{build_operator_set, OperatorMode, SkeletonAdjacency};
use crate::basis::{ConstraintKind, FreeBasis};
use crate::error::{Error, Result};
use crate::gcn::{Activation, ConvFilterBank};
use crate::matrix::{Matrix, NodeSignal};
use crate::train::Model;
use crate::reparam::{crispmax_forward, gamma_lower_bound};

/// Largest node count the oracles accept.
pub const MAX_ORACLE_NODES: usize = 64;

/// Largest operator count the proposition harness accepts.
pub const MAX_ORACLE_OPERATORS: usize = 8;

/// Central differences `(f(x + h e_i) − f(x − h e_i)) / 2h` for every
/// coordinate of `point`.
pub fn finite_diff_grad<F>(mut f: F, point: &[f64], step: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::Domain(format!("finite-difference step must be > 0, got {step}")));
    }
    let mut x = point.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + step;
        let plus = f(&x);
        x[i] = orig - step;
        let minus = f(&x);
        x[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!(
                "finite difference at coordinate {i}: f(x+h)={plus}, f(x-h)={minus}"
            )));
        }
        grad.push((plus - minus) / (2.0 * step));
    }
    Ok(grad)
}

/// `f(Σ_k A_k Uᵀ W_k)` with plain nested loops.
pub fn naive_gcn(a: &[Matrix], u: &Matrix, w: &[Matrix], f: Activation) -> Result<Matrix> {
    if a.is_empty() {
        return Err(Error::Input("naive_gcn needs at least one operator".into()));
    }
    if a.len() != w.len() {
        return Err(Error::dim("naive_gcn operator/filter count", (a.len(), 0), (w.len(), 0)));
    }
    let s = u.rows();
    let n = u.cols();
    if n > MAX_ORACLE_NODES {
        return Err(Error::Input(format!("naive_gcn is test-scale only (n = {n})")));
    }
    let c = w[0].cols();
    for (ak, wk) in a.iter().zip(w) {
        if ak.rows() != n || ak.cols() != n {
            return Err(Error::dim("naive_gcn operator", (ak.rows(), ak.cols()), (n, n)));
        }
        if wk.rows() != s || wk.cols() != c {
            return Err(Error::dim("naive_gcn filter", (wk.rows(), wk.cols()), (s, c)));
        }
    }
    let mut out = vec![0.0; n * c];
    for (ak, wk) in a.iter().zip(w) {
        for i in 0..n {
            for ch in 0..c {
                let mut acc = 0.0;
                for r in 0..s {
                    let mut aut = 0.0;
                    for j in 0..n {
                        aut += ak[(i, j)] * u[(r, j)];
                    }
                    acc += aut * wk[(r, ch)];
                }
                out[i * c + ch] += acc;
            }
        }
    }
    for v in &mut out {
        *v = match f {
            Activation::Relu => {
                if *v > 0.0 {
                    *v
                } else {
                    0.0
                }
            }
            Activation::Identity => *v,
        };
    }
    Matrix::new(n, c, out)
}

/// Largest `(A_k ⊙ A_k')_ij` over every ordered pair `k ≠ k'` and entry.
pub fn exhaustive_max_overlap(mats: &[Matrix]) -> f64 {
    let mut worst = 0.0f64;
    for (k, a) in mats.iter().enumerate() {
        for (kk, b) in mats.iter().enumerate() {
            if k == kk {
                continue;
            }
            for i in 0..a.rows() {
                for j in 0..a.cols() {
                    let p = a[(i, j)] * b[(i, j)];
                    if p > worst {
                        worst = p;
                    }
                }
            }
        }
    }
    worst
}

/// Outcome of [`proposition_trials`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrialReport {
    pub gamma: f64,
    pub trials: usize,
    pub violations: usize,
    pub worst_overlap: f64,
}

/// Node count of every sampled instance.
const TRIAL_NODES: usize = 4;

/// Samples δ-separated free bases, applies crispmax at the bound and counts
/// instances whose maximum pairwise overlap exceeds `eps`.
pub fn proposition_trials(k: usize, delta: f64, eps: f64, trials: usize, seed: u64) -> Result<TrialReport> {
    let gamma = gamma_lower_bound(k, delta, eps)?;
    proposition_trials_at(k, delta, eps, gamma, trials, seed)
}

/// [`proposition_trials`] at an arbitrary `gamma`.
///
/// Half of the entries are adversarial: the leader exceeds every other
/// operator by exactly `delta`. The rest are rejection-sampled uniform
/// values whose leader clears the runner-up by at least `delta`.
pub fn proposition_trials_at(
    k: usize,
    delta: f64,
    eps: f64,
    gamma: f64,
    trials: usize,
    seed: u64,
) -> Result<TrialReport> {
    if trials == 0 {
        return Err(Error::Input("proposition_trials needs at least one trial".into()));
    }
    if !(2..=MAX_ORACLE_OPERATORS).contains(&k) {
        return Err(Error::Input(format!(
            "proposition_trials supports 2 <= K <= {MAX_ORACLE_OPERATORS}, got {k}"
        )));
    }
    let overlaps: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(seed, t as u64));
            let basis = FreeBasis::new(separated_instance(k, delta, &mut rng))?;
            let out = crispmax_forward(&basis, gamma)?;
            Ok(exhaustive_max_overlap(out.mats()))
        })
        .collect::<Result<_>>()?;
    Ok(TrialReport {
        gamma,
        trials,
        violations: overlaps.iter().filter(|&&o| o > eps).count(),
        worst_overlap: overlaps.iter().cloned().fold(0.0, f64::max),
    })
}

fn trial_seed(master: u64, trial: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = master ^ trial.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn separated_instance(k: usize, delta: f64, rng: &mut ChaCha8Rng) -> Vec<Matrix> {
    let n = TRIAL_NODES;
    let spread = (4.0 * delta).max(1.0);
    let mut mats: Vec<Vec<f64>> = vec![vec![0.0; n * n]; k];
    let mut vals = vec![0.0; k];
    for flat in 0..n * n {
        if rng.random_bool(0.5) {
            let leader = rng.random_range(0..k);
            let top = rng.random_range(-spread..spread);
            for (op, v) in vals.iter_mut().enumerate() {
                *v = if op == leader { top } else { top - delta };
            }
        } else {
            loop {
                for v in vals.iter_mut() {
                    *v = rng.random_range(-spread..spread);
                }
                if leader_gap(&vals) >= delta {
                    break;
                }
            }
        }
        for (op, v) in vals.iter().enumerate() {
            mats[op][flat] = *v;
        }
    }
    mats.into_iter()
        .map(|d| Matrix::new(n, n, d).expect("finite samples"))
        .collect()
}

fn leader_gap(vals: &[f64]) -> f64 {
    let mut best = f64::NEG_INFINITY;
    let mut second = f64::NEG_INFINITY;
    for &v in vals {
        if v > best {
            second = best;
            best = v;
        } else if v > second {
            second = v;
        }
    }
    best - second
}

/// Finite-difference step of the pipeline gradient check.
pub const GRADCHECK_STEP: f64 = 1e-5;
/// Largest accepted [`scaled_error`].
pub const GRADCHECK_TOL: f64 = 1e-5;
/// Magnitude below which errors are measured absolutely.
pub const GRADCHECK_FLOOR: f64 = 1e-2;
/// Inverse temperature used when orthogonality is active.
pub const GRADCHECK_GAMMA: f64 = 3.0;

/// `|a − b| / max(|a|, |b|, GRADCHECK_FLOOR)`.
pub fn scaled_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(GRADCHECK_FLOOR)
}

/// One configuration of the end-to-end gradient check.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradcheckCase {
    pub mode: OperatorMode,
    pub kind: ConstraintKind,
    pub k: usize,
    pub n: usize,
    pub differential: bool,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub case: GradcheckCase,
    pub max_error: f64,
    /// Parameter block holding the largest error.
    pub worst_block: String,
    pub checked: usize,
    pub ok: bool,
}

const GRADCHECK_DIM: usize = 6;
const GRADCHECK_CHANNELS: usize = 3;
const GRADCHECK_CLASSES: usize = 4;
const GRADCHECK_BATCH: usize = 3;
const KINK_MARGIN: f64 = 1e-3;

struct Instance {
    model: Model,
    signals: Vec<NodeSignal>,
    labels: Vec<usize>,
    gamma: f64,
}

fn build_instance(case: &GradcheckCase, rng: &mut ChaCha8Rng) -> Result<Instance> {
    let skeleton = SkeletonAdjacency::path(case.n);
    let set = build_operator_set(case.mode, &skeleton, case.kind, case.k, 0.5, rng)?;
    let mut filters = ConvFilterBank::random(case.k, GRADCHECK_DIM, GRADCHECK_CHANNELS, GRADCHECK_CLASSES, rng);
    for b in &mut filters.bias {
        *b = rng.random_range(-0.5..0.5);
    }
    let model = Model {
        operators: set.basis,
        fixed: set.fixed,
        kind: case.kind,
        filters,
        activation: Activation::Relu,
        differential: vec![case.differential; case.k],
    };
    let signals = (0..GRADCHECK_BATCH)
        .map(|_| NodeSignal::new(Matrix::from_fn(GRADCHECK_DIM, case.n, |_, _| rng.random_range(-1.0..1.0))))
        .collect();
    let labels = (0..GRADCHECK_BATCH).map(|_| rng.random_range(0..GRADCHECK_CLASSES)).collect();
    Ok(Instance {
        model,
        signals,
        labels,
        gamma: GRADCHECK_GAMMA,
    })
}

fn effective_operators(model: &Model, gamma: f64) -> Result<Vec<Matrix>> {
    let adj = model.constrained(gamma)?.adjacency;
    Ok(adj
        .mats()
        .iter()
        .zip(&model.differential)
        .map(|(a, &diff)| {
            if diff {
                Matrix::from_fn(a.rows(), a.cols(), |i, j| if i == j { 1.0 } else { 0.0 } - a[(i, j)])
            } else {
                a.clone()
            }
        })
        .collect())
}

/// Mean cross-entropy of `model` using [`naive_gcn`], loop-level mean
/// pooling and a direct log-sum-exp.
fn naive_loss(model: &Model, gamma: f64, signals: &[NodeSignal], labels: &[usize]) -> Result<f64> {
    let ops = effective_operators(model, gamma)?;
    let fb = &model.filters;
    let mut total = 0.0;
    for (u, &y) in signals.iter().zip(labels) {
        let h = naive_gcn(&ops, u.matrix(), &fb.filters, model.activation)?;
        let (n, c) = h.shape();
        let mut logits = fb.bias.clone();
        for ch in 0..c {
            let pooled = (0..n).map(|i| h[(i, ch)]).sum::<f64>() / n as f64;
            for (l, z) in logits.iter_mut().enumerate() {
                *z += fb.head[(ch, l)] * pooled;
            }
        }
        let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = top + logits.iter().map(|z| (z - top).exp()).sum::<f64>().ln();
        total += lse - logits[y];
    }
    Ok(total / signals.len() as f64)
}

fn min_abs_preactivation(inst: &Instance) -> Result<f64> {
    let ops = effective_operators(&inst.model, inst.gamma)?;
    let mut least = f64::INFINITY;
    for u in &inst.signals {
        let pre = naive_gcn(&ops, u.matrix(), &inst.model.filters.filters, Activation::Identity)?;
        least = pre.as_slice().iter().fold(least, |m, v| m.min(v.abs()));
    }
    Ok(least)
}

/// Compares every analytic parameter gradient of the full pipeline
/// (constraint map, convolution, pooling, head, cross-entropy) with central
/// differences of an independently assembled loss. Instances whose
/// pre-activations come within `1e-3` of the ReLU kink are redrawn.
pub fn pipeline_gradcheck(case: GradcheckCase) -> Result<GradcheckReport> {
    case.kind.validate_for(case.k)?;
    if case.k > MAX_ORACLE_OPERATORS {
        return Err(Error::Input(format!("gradcheck supports K <= {MAX_ORACLE_OPERATORS}, got {}", case.k)));
    }
    if !(2..=MAX_ORACLE_NODES).contains(&case.n) {
        return Err(Error::Input(format!("gradcheck needs 2 <= n <= {MAX_ORACLE_NODES}, got {}", case.n)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(case.seed);
    let mut inst = build_instance(&case, &mut rng)?;
    let mut attempts = 1;
    while min_abs_preactivation(&inst)? < KINK_MARGIN {
        if attempts == 100 {
            return Err(Error::Domain("no kink-free gradcheck instance found in 100 draws".into()));
        }
        inst = build_instance(&case, &mut rng)?;
        attempts += 1;
    }

    let batch: Vec<(&NodeSignal, usize)> = inst.signals.iter().zip(inst.labels.iter().copied()).collect();
    let (_, grads) = inst.model.loss_and_grad(inst.gamma, &batch)?;

    let mut max_error: f64 = 0.0;
    let mut worst_block = String::from("none");
    let mut checked = 0;
    let mut record = |block: String, analytic: &[f64], numeric: &[f64]| {
        for (a, b) in analytic.iter().zip(numeric) {
            let e = scaled_error(*a, *b);
            checked += 1;
            if e > max_error || e.is_nan() {
                max_error = if e.is_nan() { f64::INFINITY } else { e };
                worst_block = block.clone();
            }
        }
    };

    let (signals, labels, gamma) = (&inst.signals, &inst.labels, inst.gamma);
    let probe = |model: &Model| naive_loss(model, gamma, signals, labels).unwrap_or(f64::NAN);

    if let Some(op_grads) = &grads.operators {
        for (k, g) in op_grads.iter().enumerate() {
            let numeric = finite_diff_grad(
                |x| {
                    let mut m = inst.model.clone();
                    m.operators.mats_mut()[k].as_mut_slice().copy_from_slice(x);
                    probe(&m)
                },
                inst.model.operators.mats()[k].as_slice(),
                GRADCHECK_STEP,
            )?;
            record(format!("operator {k}"), g.as_slice(), &numeric);
        }
    }
    for (k, g) in grads.filters.iter().enumerate() {
        let numeric = finite_diff_grad(
            |x| {
                let mut m = inst.model.clone();
                m.filters.filters[k].as_mut_slice().copy_from_slice(x);
                probe(&m)
            },
            inst.model.filters.filters[k].as_slice(),
            GRADCHECK_STEP,
        )?;
        record(format!("filter {k}"), g.as_slice(), &numeric);
    }
    let numeric = finite_diff_grad(
        |x| {
            let mut m = inst.model.clone();
            m.filters.head.as_mut_slice().copy_from_slice(x);
            probe(&m)
        },
        inst.model.filters.head.as_slice(),
        GRADCHECK_STEP,
    )?;
    record("head".into(), grads.head.as_slice(), &numeric);
    let numeric = finite_diff_grad(
        |x| {
            let mut m = inst.model.clone();
            m.filters.bias.copy_from_slice(x);
            probe(&m)
        },
        &inst.model.filters.bias,
        GRADCHECK_STEP,
    )?;
    record("bias".into(), &grads.bias, &numeric);

    Ok(GradcheckReport {
        case,
        max_error,
        worst_block,
        checked,
        ok: max_error < GRADCHECK_TOL,
    })
}

/// Every (mode, constraint, K, differential) combination of the end-to-end
/// check, skipping combinations the constraint rejects.
pub fn gradcheck_cases(ks: &[usize], n: usize, seed: u64) -> Vec<GradcheckCase> {
    let mut out = Vec::new();
    for mode in OperatorMode::ALL {
        for kind in ConstraintKind::ALL {
            for &k in ks {
                if kind.validate_for(k).is_err() {
                    continue;
                }
                for differential in [false, true] {
                    out.push(GradcheckCase {
                        mode,
                        kind,
                        k,
                        n,
                        differential,
                        seed: seed.wrapping_add(out.len() as u64),
                    });
                }
            }
        }
    }
    out
}
