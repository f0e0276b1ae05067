//! Momentum-SGD training, evaluation, model artifacts and the ablation grid.

mod ablation;
mod artifact;
mod config;
mod model;

pub use ablation::{run_ablation_grid, AblationCell, AblationGrid, AblationTable, CellOutcome};
pub use artifact::{decode_artifact, encode_artifact, load_artifact, save_artifact, Artifact, ARTIFACT_MAGIC, ARTIFACT_VERSION};
pub use config::{NoisePolicy, SkeletonChoice, TrainConfig, CONFIG_KEYS};
pub use model::{adapt_lr, sgd_step, Constrained, Model, ModelGrads, Velocity, LR_MAX, LR_MIN};

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{build_operator_set, seed_leaders, SkeletonAdjacency};
use crate::basis::AdjacencyBasis;
use crate::data::{chunk_all, load_sequences, train_test_split, Dataset, FoldFile, SplitProtocol};
use crate::error::{Error, Result};
use crate::gcn::ConvFilterBank;
use crate::matrix::{Matrix, NodeSignal};
use crate::reparam::{anneal_gamma, check_epsilon_orthogonality, Orthogonality};

/// One line of the metrics stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean cross-entropy on the training set after the epoch's updates.
    pub loss: f64,
    pub train_acc: f64,
    pub test_acc: Option<f64>,
    pub lr: f64,
    /// Crispmax inverse temperature used in this epoch (orthogonality only).
    pub gamma_eff: Option<f64>,
    pub max_overlap: Option<f64>,
}

/// What an observer sees after each epoch.
pub struct EpochView<'a> {
    pub metrics: &'a EpochMetrics,
    pub model: &'a Model,
    pub adjacency: &'a AdjacencyBasis,
    /// Per-operator intermediates before crispmax, for learned operators.
    pub premapped: Option<&'a [Matrix]>,
}

/// Writes one JSON object per line, flushing after each.
pub struct MetricsWriter {
    out: BufWriter<File>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        Ok(Self {
            out: BufWriter::new(File::create(path).map_err(Error::io_at(path))?),
        })
    }

    pub fn write(&mut self, m: &EpochMetrics) -> Result<()> {
        self.out.write_all(metrics_line(m).as_bytes())?;
        self.out.flush()?;
        Ok(())
    }
}

/// The JSONL encoding of one metrics record, newline included.
pub fn metrics_line(m: &EpochMetrics) -> String {
    let mut s = serde_json::to_string(m).expect("metrics are always serializable");
    s.push('\n');
    s
}

/// Result of [`train`].
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    /// Context matrices at the final inverse temperature.
    pub adjacency: AdjacencyBasis,
    pub metrics: Vec<EpochMetrics>,
    pub final_gamma: f64,
    pub orthogonality: Option<Orthogonality>,
}

impl TrainOutcome {
    pub fn artifact(&self, cfg: &TrainConfig, vocab: &[String]) -> Artifact {
        Artifact {
            config: cfg.clone(),
            vocab: vocab.to_vec(),
            model: self.model.clone(),
            adjacency: self.adjacency.clone(),
        }
    }
}

fn labeled(signals: &[NodeSignal], data: &Dataset) -> Vec<(NodeSignal, usize)> {
    signals.iter().cloned().zip(data.labels()).collect()
}

/// Initial parameters for `cfg` on `joints` nodes and `classes` labels.
pub fn init_model(
    cfg: &TrainConfig,
    skeleton: &SkeletonAdjacency,
    classes: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Model> {
    let mut set = build_operator_set(cfg.mode, skeleton, cfg.constraint, cfg.k, cfg.init_std, rng)?;
    if cfg.constraint.has_orth() && !set.fixed {
        seed_leaders(&mut set.basis, cfg.leader_gap, cfg.constraint.has_sym(), rng);
    }
    let filters = ConvFilterBank::random(cfg.k, 3 * cfg.m, cfg.channels, classes, rng);
    Ok(Model {
        operators: set.basis,
        fixed: set.fixed,
        kind: cfg.constraint,
        filters,
        activation: cfg.activation,
        differential: vec![cfg.differential; cfg.k],
    })
}

/// Trains a model on `train`, reporting every epoch to `observer`.
///
/// Epoch 0 reports the initial parameters. With `dry_run` nothing else
/// happens. Every later epoch shuffles the training set, runs one momentum
/// step per batch, then evaluates on the training set (and `test` if given)
/// and adapts the learning rate.
pub fn train(
    cfg: &TrainConfig,
    skeleton: &SkeletonAdjacency,
    train: &Dataset,
    test: Option<&Dataset>,
    observer: &mut dyn FnMut(&EpochView<'_>) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Input("training set is empty".into()));
    }
    if train.joints() != Some(skeleton.n()) {
        return Err(Error::Input(format!(
            "data has {:?} joints but the skeleton has {}",
            train.joints(),
            skeleton.n()
        )));
    }
    if let Some(t) = test {
        if !t.is_empty() && t.joints() != train.joints() {
            return Err(Error::Input("train and test joint counts differ".into()));
        }
    }
    let spec = cfg.constraint_spec()?;
    let train_set = labeled(&chunk_all(&train.sequences, cfg.m)?, train);
    let test_set = match test {
        Some(t) if !t.is_empty() => Some(labeled(&chunk_all(&t.sequences, cfg.m)?, t)),
        _ => None,
    };
    let train_refs: Vec<(&NodeSignal, usize)> = train_set.iter().map(|(u, y)| (u, *y)).collect();
    let test_refs: Option<Vec<(&NodeSignal, usize)>> =
        test_set.as_ref().map(|s| s.iter().map(|(u, y)| (u, *y)).collect());

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = init_model(cfg, skeleton, train.classes(), &mut rng)?;
    if cfg.noise_policy == NoisePolicy::InitOnly {
        model.perturb_operators(cfg.noise_std, &mut rng);
    }
    let mut velocity = Velocity::zeros_like(&model);
    let orth = cfg.constraint.has_orth();
    let batch_size = cfg.batch_size.min(train_refs.len());
    let mut lr = cfg.lr0;
    let mut losses = Vec::new();
    let mut metrics_log = Vec::new();
    let mut order: Vec<usize> = (0..train_refs.len()).collect();

    let last_epoch = if cfg.dry_run { 0 } else { cfg.epochs };
    let mut gamma = anneal_gamma(&spec.crispmax, 0);
    let mut constrained = model.constrained(gamma)?;
    for epoch in 0..=last_epoch {
        if epoch > 0 {
            gamma = anneal_gamma(&spec.crispmax, epoch);
            order.shuffle(&mut rng);
            for chunk in order.chunks(batch_size) {
                if cfg.noise_policy == NoisePolicy::PerStep {
                    model.perturb_operators(cfg.noise_std, &mut rng);
                }
                let batch: Vec<(&NodeSignal, usize)> = chunk.iter().map(|&i| train_refs[i]).collect();
                let (loss, grads) = model
                    .loss_and_grad(gamma, &batch)
                    .map_err(|e| divergence(epoch, e))?;
                if !loss.is_finite() {
                    return Err(Error::Divergence {
                        epoch,
                        detail: format!("batch loss is {loss}"),
                    });
                }
                model.apply_update(&grads, &mut velocity, lr, cfg.momentum)?;
            }
            if !model.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    detail: "parameters became non-finite".into(),
                });
            }
            constrained = model.constrained(gamma).map_err(|e| divergence(epoch, e))?;
        }

        let (loss, train_acc) = model
            .evaluate_with(&constrained.adjacency, &train_refs)
            .map_err(|e| divergence(epoch, e))?;
        if !loss.is_finite() {
            return Err(Error::Divergence {
                epoch,
                detail: format!("training loss is {loss}"),
            });
        }
        let test_acc = match &test_refs {
            Some(t) => Some(model.evaluate_with(&constrained.adjacency, t)?.1),
            None => None,
        };
        let max_overlap = if orth {
            Some(check_epsilon_orthogonality(&constrained.adjacency, cfg.eps)?.max_overlap)
        } else {
            None
        };
        let m = EpochMetrics {
            epoch,
            loss,
            train_acc,
            test_acc,
            lr,
            gamma_eff: (orth && !model.fixed).then_some(gamma),
            max_overlap,
        };
        observer(&EpochView {
            metrics: &m,
            model: &model,
            adjacency: &constrained.adjacency,
            premapped: constrained.ctx.as_ref().map(|c| c.premapped()),
        })?;
        metrics_log.push(m);
        losses.push(loss);
        if epoch > 0 {
            lr = adapt_lr(lr, &losses, cfg.lr_factor);
        }
        if cfg.checkpoint_every > 0 && epoch > 0 && epoch % cfg.checkpoint_every == 0 {
            if let Some(path) = &cfg.checkpoint_path {
                let art = Artifact {
                    config: cfg.clone(),
                    vocab: train.vocab.clone(),
                    model: model.clone(),
                    adjacency: constrained.adjacency.clone(),
                };
                save_artifact(Path::new(path), &art)?;
            }
        }
    }

    let orthogonality = if orth {
        let o = check_epsilon_orthogonality(&constrained.adjacency, cfg.eps)?;
        if o.ok {
            info!("final operators are {}-orthogonal (max overlap {:.3e})", cfg.eps, o.max_overlap);
        } else {
            warn!(
                "final operators are not {}-orthogonal (max overlap {:.3e} at gamma {gamma})",
                cfg.eps, o.max_overlap
            );
        }
        Some(o)
    } else {
        None
    };
    Ok(TrainOutcome {
        model,
        adjacency: constrained.adjacency,
        metrics: metrics_log,
        final_gamma: gamma,
        orthogonality,
    })
}

fn divergence(epoch: usize, e: Error) -> Error {
    match e {
        Error::NonFinite(detail) => Error::Divergence { epoch, detail },
        other => other,
    }
}

/// Train and test sets named by `cfg`: an explicit test file, a fold file
/// over the training file, or a seeded fractional split of it.
pub fn load_training_data(cfg: &TrainConfig) -> Result<(Dataset, Dataset)> {
    let train_path = cfg
        .train_path
        .as_deref()
        .ok_or_else(|| Error::Config("train_path is required".into()))?;
    let all = load_sequences(Path::new(train_path), None)?;
    if let Some(test_path) = &cfg.test_path {
        if cfg.fold_path.is_some() {
            return Err(Error::Config("give either test_path or fold_path, not both".into()));
        }
        let test = load_sequences(Path::new(test_path), Some(&all.vocab))?;
        return Ok((all, test));
    }
    let protocol = match &cfg.fold_path {
        Some(fold) => SplitProtocol::Fold(FoldFile::load(Path::new(fold))?),
        None => SplitProtocol::Fraction {
            train_fraction: cfg.train_fraction,
            seed: cfg.seed,
        },
    };
    let (train_idx, test_idx) = train_test_split(all.len(), &protocol)?;
    Ok((all.subset(&train_idx), all.subset(&test_idx)))
}

/// Loss and macro accuracy of a trained artifact on `data`.
pub fn evaluate(artifact: &Artifact, data: &Dataset) -> Result<(f64, f64)> {
    let signals = chunk_all(&data.sequences, artifact.config.m)?;
    let set: Vec<(&NodeSignal, usize)> = signals.iter().zip(data.labels()).collect();
    artifact.model.evaluate_with(&artifact.adjacency, &set)
}
