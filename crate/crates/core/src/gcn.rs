//! One graph-convolution block with K context matrices, followed by mean
//! pooling over nodes and an affine classifier head:
//!
//! ```text
//! H      = f( Σ_k agg_k W_k ),   agg_k = A_k Uᵀ  or  (I − A_k) Uᵀ
//! logits = headᵀ · mean_rows(H) + bias
//! ```

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::basis::AdjacencyBasis;
use crate::error::{Error, Result};
use crate::matrix::{Matrix, NodeSignal};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    /// Derivative evaluated at the pre-activation `x` (ReLU uses 0 at the kink).
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "relu" => Ok(Activation::Relu),
            "identity" | "id" | "linear" => Ok(Activation::Identity),
            other => Err(Error::Config(format!("unknown activation '{other}'"))),
        }
    }
}

/// Convolution filters `{W_k}` (each `s × C`) plus the classifier head
/// (`C × L` weights and `L` biases).
#[derive(Clone, Debug, PartialEq)]
pub struct ConvFilterBank {
    pub filters: Vec<Matrix>,
    pub head: Matrix,
    pub bias: Vec<f64>,
}

impl ConvFilterBank {
    pub fn new(filters: Vec<Matrix>, head: Matrix, bias: Vec<f64>) -> Result<Self> {
        let first = filters
            .first()
            .ok_or_else(|| Error::Input("filter bank needs at least one filter".into()))?;
        for w in &filters {
            if w.shape() != first.shape() {
                return Err(Error::dim("filter bank", w.shape(), first.shape()));
            }
        }
        if head.rows() != first.cols() {
            return Err(Error::dim("classifier head", head.shape(), first.shape()));
        }
        if bias.len() != head.cols() {
            return Err(Error::dim("classifier bias", (bias.len(), 1), head.shape()));
        }
        if bias.iter().any(|b| !b.is_finite()) {
            return Err(Error::NonFinite("classifier bias".into()));
        }
        Ok(Self {
            filters,
            head,
            bias,
        })
    }

    pub fn zeros(k: usize, signal_dim: usize, channels: usize, classes: usize) -> Self {
        Self {
            filters: vec![Matrix::zeros(signal_dim, channels); k],
            head: Matrix::zeros(channels, classes),
            bias: vec![0.0; classes],
        }
    }

    /// Gaussian initialization scaled by fan-in; biases start at zero.
    pub fn random(
        k: usize,
        signal_dim: usize,
        channels: usize,
        classes: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let filter_std = (2.0 / (signal_dim * k) as f64).sqrt();
        let head_std = (1.0 / channels as f64).sqrt();
        let wn = Normal::new(0.0, filter_std).expect("finite std");
        let hn = Normal::new(0.0, head_std).expect("finite std");
        let filters = (0..k)
            .map(|_| Matrix::from_fn(signal_dim, channels, |_, _| wn.sample(rng)))
            .collect();
        let head = Matrix::from_fn(channels, classes, |_, _| hn.sample(rng));
        Self {
            filters,
            head,
            bias: vec![0.0; classes],
        }
    }

    pub fn k(&self) -> usize {
        self.filters.len()
    }

    pub fn signal_dim(&self) -> usize {
        self.filters[0].rows()
    }

    pub fn channels(&self) -> usize {
        self.filters[0].cols()
    }

    pub fn classes(&self) -> usize {
        self.head.cols()
    }
}

/// `A Uᵀ`, or `(I − A) Uᵀ` for differential features. Result is `n × s`.
pub fn aggregate(a: &Matrix, u: &NodeSignal, differential: bool) -> Result<Matrix> {
    if !a.is_square() || a.cols() != u.nodes() {
        return Err(Error::dim("aggregate", a.shape(), u.matrix().shape()));
    }
    let ut = u.matrix().transpose();
    let au = a.matmul(&ut)?;
    if differential {
        ut.sub(&au)
    } else {
        Ok(au)
    }
}

#[derive(Clone, Debug)]
struct ForwardCache {
    signal: Matrix,
    aggregates: Vec<Matrix>,
    pre: Matrix,
    pooled: Vec<f64>,
    differential: Vec<bool>,
    activation: Activation,
}

/// Node features, logits and the values the backward pass needs.
#[derive(Clone, Debug)]
pub struct LayerOutput {
    /// Post-activation node features, `n × C`.
    pub h: Matrix,
    pub logits: Vec<f64>,
    cache: Option<ForwardCache>,
}

impl LayerOutput {
    /// Mean of `h` over nodes (the readout fed to the head).
    pub fn pooled(&self) -> Option<&[f64]> {
        self.cache.as_ref().map(|c| c.pooled.as_slice())
    }

    pub fn predicted_class(&self) -> usize {
        argmax(&self.logits)
    }

    /// Smallest `|pre-activation|`; a finite-difference check with a step
    /// well below this never crosses a ReLU kink.
    pub fn min_abs_preactivation(&self) -> Option<f64> {
        self.cache
            .as_ref()
            .map(|c| c.pre.as_slice().iter().fold(f64::INFINITY, |m, v| m.min(v.abs())))
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

pub fn gcn_forward(
    adjacency: &AdjacencyBasis,
    u: &NodeSignal,
    filters: &ConvFilterBank,
    activation: Activation,
    differential: &[bool],
) -> Result<LayerOutput> {
    let k = adjacency.k();
    if filters.k() != k {
        return Err(Error::dim("filter count vs operator count", (filters.k(), 0), (k, 0)));
    }
    if differential.len() != k {
        return Err(Error::dim("differential flags vs operator count", (differential.len(), 0), (k, 0)));
    }
    if adjacency.n() != u.nodes() {
        return Err(Error::dim("operators vs node signal", adjacency.mats()[0].shape(), u.matrix().shape()));
    }
    if filters.signal_dim() != u.dim() {
        return Err(Error::dim("filters vs node signal", filters.filters[0].shape(), u.matrix().shape()));
    }

    let n = u.nodes();
    let channels = filters.channels();
    let mut pre = Matrix::zeros(n, channels);
    let mut aggregates = Vec::with_capacity(k);
    for ((a, w), &diff) in adjacency.mats().iter().zip(&filters.filters).zip(differential) {
        let agg = aggregate(a, u, diff)?;
        pre.add_scaled_assign(&agg.matmul(w)?, 1.0)?;
        aggregates.push(agg);
    }
    let h = pre.map(|x| activation.apply(x));
    let pooled: Vec<f64> = h.col_sums().into_iter().map(|s| s / n as f64).collect();
    let logits = apply_head(&pooled, filters);

    Ok(LayerOutput {
        h,
        logits,
        cache: Some(ForwardCache {
            signal: u.matrix().clone(),
            aggregates,
            pre,
            pooled,
            differential: differential.to_vec(),
            activation,
        }),
    })
}

fn apply_head(pooled: &[f64], filters: &ConvFilterBank) -> Vec<f64> {
    let mut logits = filters.bias.clone();
    for (c, p) in pooled.iter().enumerate() {
        for (l, out) in logits.iter_mut().enumerate() {
            *out += p * filters.head.get(c, l);
        }
    }
    logits
}

/// `−log softmax(logits)[label]` via log-sum-exp.
pub fn cross_entropy(logits: &[f64], label: usize) -> Result<f64> {
    if label >= logits.len() {
        return Err(Error::Input(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    Ok(lse - logits[label])
}

/// Gradient of [`cross_entropy`] with respect to the logits: `softmax − onehot`.
pub fn cross_entropy_grad(logits: &[f64], label: usize) -> Result<Vec<f64>> {
    if label >= logits.len() {
        return Err(Error::Input(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps
        .iter()
        .enumerate()
        .map(|(l, e)| e / total - if l == label { 1.0 } else { 0.0 })
        .collect())
}

/// Gradients returned by [`gcn_backward`].
#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrads {
    pub filters: Vec<Matrix>,
    pub head: Matrix,
    pub bias: Vec<f64>,
    /// `∂E/∂A_k`, fed to [`crate::reparam::constrain_vjp`].
    pub adjacency: Vec<Matrix>,
    /// `∂E/∂U`, `s × n`.
    pub signal: Matrix,
}

impl LayerGrads {
    pub fn zeros_like(adjacency: &AdjacencyBasis, filters: &ConvFilterBank, signal_nodes: usize) -> Self {
        Self {
            filters: filters.filters.iter().map(|w| Matrix::zeros(w.rows(), w.cols())).collect(),
            head: Matrix::zeros(filters.head.rows(), filters.head.cols()),
            bias: vec![0.0; filters.bias.len()],
            adjacency: adjacency.mats().iter().map(|a| Matrix::zeros(a.rows(), a.cols())).collect(),
            signal: Matrix::zeros(filters.signal_dim(), signal_nodes),
        }
    }

    /// `self += scale * other`, block by block in a fixed order.
    pub fn accumulate(&mut self, other: &LayerGrads, scale: f64) -> Result<()> {
        for (a, b) in self.filters.iter_mut().zip(&other.filters) {
            a.add_scaled_assign(b, scale)?;
        }
        self.head.add_scaled_assign(&other.head, scale)?;
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            *a += scale * b;
        }
        for (a, b) in self.adjacency.iter_mut().zip(&other.adjacency) {
            a.add_scaled_assign(b, scale)?;
        }
        self.signal.add_scaled_assign(&other.signal, scale)?;
        Ok(())
    }
}

/// Backpropagates `∂E/∂logits` through the head, the pooling, the activation
/// and the convolution. Consumes the cached forward values; a second call on
/// the same output is a state error.
pub fn gcn_backward(
    out: &mut LayerOutput,
    adjacency: &AdjacencyBasis,
    filters: &ConvFilterBank,
    dlogits: &[f64],
) -> Result<LayerGrads> {
    let cache = out
        .cache
        .take()
        .ok_or_else(|| Error::State("gcn_backward already consumed this forward pass".into()))?;
    if dlogits.len() != filters.classes() {
        return Err(Error::dim("dlogits", (dlogits.len(), 1), filters.head.shape()));
    }
    if adjacency.k() != cache.aggregates.len() || filters.k() != cache.aggregates.len() {
        return Err(Error::dim("operator count", (adjacency.k(), filters.k()), (cache.aggregates.len(), 0)));
    }
    let n = cache.pre.rows();
    let channels = cache.pre.cols();

    let head = Matrix::from_fn(channels, dlogits.len(), |c, l| cache.pooled[c] * dlogits[l]);
    let bias = dlogits.to_vec();
    let dpooled: Vec<f64> = (0..channels)
        .map(|c| (0..dlogits.len()).fold(0.0, |acc, l| acc + filters.head.get(c, l) * dlogits[l]))
        .collect();
    let dpre = Matrix::from_fn(n, channels, |i, c| {
        dpooled[c] / n as f64 * cache.activation.derivative(cache.pre.get(i, c))
    });

    let mut grad_filters = Vec::with_capacity(filters.k());
    let mut grad_adjacency = Vec::with_capacity(filters.k());
    let mut grad_signal_t = Matrix::zeros(n, cache.signal.rows());
    for (op, (a, w)) in adjacency.mats().iter().zip(&filters.filters).enumerate() {
        let agg = &cache.aggregates[op];
        grad_filters.push(agg.transpose().matmul(&dpre)?);
        let dagg = dpre.matmul(&w.transpose())?;
        let da = dagg.matmul(&cache.signal)?;
        let through_a = a.transpose().matmul(&dagg)?;
        if cache.differential[op] {
            grad_adjacency.push(da.scale(-1.0));
            grad_signal_t.add_scaled_assign(&dagg, 1.0)?;
            grad_signal_t.add_scaled_assign(&through_a, -1.0)?;
        } else {
            grad_adjacency.push(da);
            grad_signal_t.add_scaled_assign(&through_a, 1.0)?;
        }
    }

    Ok(LayerGrads {
        filters: grad_filters,
        head,
        bias,
        adjacency: grad_adjacency,
        signal: grad_signal_t.transpose(),
    })
}
