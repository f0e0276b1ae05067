use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::basis::{AdjacencyBasis, ConstraintKind, FreeBasis, Mask};
use crate::data::macro_accuracy;
use crate::error::{Error, Result};
use crate::gcn::{cross_entropy, cross_entropy_grad, gcn_backward, gcn_forward, Activation, ConvFilterBank, LayerGrads};
use crate::matrix::{Matrix, NodeSignal};
use crate::reparam::{constrain, constrain_vjp, ConstraintCtx};

/// All trainable state of one network.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub operators: FreeBasis,
    /// Operators are used as given and never updated.
    pub fixed: bool,
    pub kind: ConstraintKind,
    pub filters: ConvFilterBank,
    pub activation: Activation,
    pub differential: Vec<bool>,
}

/// Gradients of the mean batch loss.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelGrads {
    /// `∂E/∂Â_k`; `None` for fixed operators.
    pub operators: Option<Vec<Matrix>>,
    pub filters: Vec<Matrix>,
    pub head: Matrix,
    pub bias: Vec<f64>,
}

/// Momentum buffers, shaped like the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Velocity {
    operators: Vec<Matrix>,
    filters: Vec<Matrix>,
    head: Matrix,
    bias: Vec<f64>,
}

impl Velocity {
    pub fn zeros_like(model: &Model) -> Self {
        let z = |m: &Matrix| Matrix::zeros(m.rows(), m.cols());
        Self {
            operators: model.operators.mats().iter().map(z).collect(),
            filters: model.filters.filters.iter().map(z).collect(),
            head: z(&model.filters.head),
            bias: vec![0.0; model.filters.bias.len()],
        }
    }
}

/// Constrained operators together with what their VJP needs.
pub struct Constrained {
    pub adjacency: AdjacencyBasis,
    pub ctx: Option<ConstraintCtx>,
}

impl Model {
    /// The context matrices the convolution sees at inverse temperature `gamma`.
    pub fn constrained(&self, gamma: f64) -> Result<Constrained> {
        if self.fixed {
            return Ok(Constrained {
                adjacency: AdjacencyBasis::new(self.operators.mats().to_vec(), self.kind)?,
                ctx: None,
            });
        }
        let (adjacency, ctx) = constrain(&self.operators, self.kind, gamma)?;
        Ok(Constrained {
            adjacency,
            ctx: Some(ctx),
        })
    }

    fn sample_grad(&self, adj: &AdjacencyBasis, u: &NodeSignal, label: usize) -> Result<(f64, LayerGrads)> {
        let mut out = gcn_forward(adj, u, &self.filters, self.activation, &self.differential)?;
        let loss = cross_entropy(&out.logits, label)?;
        let dlogits = cross_entropy_grad(&out.logits, label)?;
        let grads = gcn_backward(&mut out, adj, &self.filters, &dlogits)?;
        Ok((loss, grads))
    }

    /// Mean cross-entropy over the batch and its gradient. Samples are
    /// processed in parallel and reduced in batch order.
    pub fn loss_and_grad(&self, gamma: f64, batch: &[(&NodeSignal, usize)]) -> Result<(f64, ModelGrads)> {
        if batch.is_empty() {
            return Err(Error::Input("empty batch".into()));
        }
        let c = self.constrained(gamma)?;
        let per_sample: Vec<(f64, LayerGrads)> = batch
            .par_iter()
            .map(|(u, y)| self.sample_grad(&c.adjacency, u, *y))
            .collect::<Result<_>>()?;
        let scale = 1.0 / batch.len() as f64;
        let mut total = LayerGrads::zeros_like(&c.adjacency, &self.filters, batch[0].0.nodes());
        let mut loss = 0.0;
        for (l, g) in &per_sample {
            loss += l;
            total.accumulate(g, scale)?;
        }
        let operators = match &c.ctx {
            Some(ctx) => Some(constrain_vjp(ctx, self.kind, &total.adjacency)?.mats),
            None => None,
        };
        Ok((
            loss * scale,
            ModelGrads {
                operators,
                filters: total.filters,
                head: total.head,
                bias: total.bias,
            },
        ))
    }

    /// Mean loss only.
    pub fn loss(&self, gamma: f64, batch: &[(&NodeSignal, usize)]) -> Result<f64> {
        let c = self.constrained(gamma)?;
        let (loss, _) = self.evaluate_with(&c.adjacency, batch)?;
        Ok(loss)
    }

    /// Mean loss and macro accuracy under fixed operators.
    pub fn evaluate_with(&self, adj: &AdjacencyBasis, batch: &[(&NodeSignal, usize)]) -> Result<(f64, f64)> {
        if batch.is_empty() {
            return Err(Error::Input("cannot evaluate an empty set".into()));
        }
        let results: Vec<(f64, usize)> = batch
            .par_iter()
            .map(|(u, y)| {
                let out = gcn_forward(adj, u, &self.filters, self.activation, &self.differential)?;
                Ok((cross_entropy(&out.logits, *y)?, out.predicted_class()))
            })
            .collect::<Result<_>>()?;
        let loss = results.iter().map(|r| r.0).sum::<f64>() / batch.len() as f64;
        let preds: Vec<usize> = results.iter().map(|r| r.1).collect();
        let labels: Vec<usize> = batch.iter().map(|b| b.1).collect();
        Ok((loss, macro_accuracy(&preds, &labels)?))
    }

    pub fn predict_with(&self, adj: &AdjacencyBasis, u: &NodeSignal) -> Result<usize> {
        Ok(gcn_forward(adj, u, &self.filters, self.activation, &self.differential)?.predicted_class())
    }

    /// One momentum step on every trainable parameter.
    pub fn apply_update(&mut self, grads: &ModelGrads, velocity: &mut Velocity, lr: f64, momentum: f64) -> Result<()> {
        if !self.fixed {
            let g_ops = grads
                .operators
                .as_ref()
                .ok_or_else(|| Error::State("learned operators received no gradient".into()))?;
            let masks: Option<Vec<Mask>> = self.operators.masks().map(<[Mask]>::to_vec);
            for (op, ((p, g), v)) in self
                .operators
                .mats_mut()
                .iter_mut()
                .zip(g_ops)
                .zip(&mut velocity.operators)
                .enumerate()
            {
                let mask = masks.as_ref().map(|m| &m[op]);
                sgd_step(p.as_mut_slice(), g.as_slice(), v.as_mut_slice(), lr, momentum, mask)?;
            }
        }
        for ((p, g), v) in self.filters.filters.iter_mut().zip(&grads.filters).zip(&mut velocity.filters) {
            sgd_step(p.as_mut_slice(), g.as_slice(), v.as_mut_slice(), lr, momentum, None)?;
        }
        sgd_step(
            self.filters.head.as_mut_slice(),
            grads.head.as_slice(),
            velocity.head.as_mut_slice(),
            lr,
            momentum,
            None,
        )?;
        sgd_step(&mut self.filters.bias, &grads.bias, &mut velocity.bias, lr, momentum, None)
    }

    /// Adds `N(0, std²)` to every learned, unmasked operator entry.
    pub fn perturb_operators(&mut self, std: f64, rng: &mut impl Rng) {
        if self.fixed || std <= 0.0 {
            return;
        }
        let normal = Normal::new(0.0, std).expect("finite std");
        let masks: Option<Vec<Mask>> = self.operators.masks().map(<[Mask]>::to_vec);
        for (op, m) in self.operators.mats_mut().iter_mut().enumerate() {
            for (flat, v) in m.as_mut_slice().iter_mut().enumerate() {
                if masks.as_ref().is_none_or(|ms| ms[op].at(flat)) {
                    *v += normal.sample(rng);
                }
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.operators.mats().iter().all(Matrix::is_finite)
            && self.filters.filters.iter().all(Matrix::is_finite)
            && self.filters.head.is_finite()
            && self.filters.bias.iter().all(|b| b.is_finite())
    }
}

/// Classical momentum: `v ← μ v + g`, `p ← p − lr v`. Entries outside
/// `mask` are left untouched.
pub fn sgd_step(
    params: &mut [f64],
    grads: &[f64],
    velocity: &mut [f64],
    lr: f64,
    momentum: f64,
    mask: Option<&Mask>,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != velocity.len() {
        return Err(Error::dim(
            "sgd_step",
            (params.len(), grads.len()),
            (velocity.len(), params.len()),
        ));
    }
    if let Some(m) = mask {
        if m.n() * m.n() != params.len() {
            return Err(Error::dim("sgd_step mask", (m.n(), m.n()), (params.len(), 1)));
        }
    }
    for (i, ((p, g), v)) in params.iter_mut().zip(grads).zip(velocity.iter_mut()).enumerate() {
        if mask.is_some_and(|m| !m.at(i)) {
            continue;
        }
        *v = momentum * *v + g;
        *p -= lr * *v;
    }
    Ok(())
}

pub const LR_MIN: f64 = 1e-8;
pub const LR_MAX: f64 = 1.0;

/// Learning-rate update from the epoch losses seen so far.
///
/// The speed of change at epoch `t` is `loss[t−1] − loss[t]`. When it
/// exceeds the previous speed the rate is multiplied by `factor`, otherwise
/// divided by it. Fewer than three losses (fewer than two speeds) leave the
/// rate unchanged. The result is clamped to `[LR_MIN, LR_MAX]`.
pub fn adapt_lr(prev_lr: f64, losses: &[f64], factor: f64) -> f64 {
    let t = losses.len();
    if t < 3 {
        return prev_lr.clamp(LR_MIN, LR_MAX);
    }
    let speed = losses[t - 2] - losses[t - 1];
    let prev_speed = losses[t - 3] - losses[t - 2];
    let next = if speed > prev_speed {
        prev_lr * factor
    } else {
        prev_lr / factor
    };
    next.clamp(LR_MIN, LR_MAX)
}
