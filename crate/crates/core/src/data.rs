//! Skeleton sequences, the temporal-chunking descriptor, file formats,
//! dataset splits and a synthetic classification task.

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::SkeletonAdjacency;
use crate::error::{Error, Result};
use crate::matrix::{Matrix, NodeSignal};

pub const FORMAT_VERSION: u32 = 1;

/// Default chunk count.
pub const DEFAULT_CHUNKS: usize = 8;

/// Joint positions over time for one labeled sample.
#[derive(Clone, Debug, PartialEq)]
pub struct SkeletonSequence {
    pub label: usize,
    frames: Vec<Vec<[f64; 3]>>,
}

impl SkeletonSequence {
    pub fn new(label: usize, frames: Vec<Vec<[f64; 3]>>) -> Result<Self> {
        let n = frames
            .first()
            .ok_or_else(|| Error::Input("sequence has no frames".into()))?
            .len();
        if n == 0 {
            return Err(Error::Input("frame has no joints".into()));
        }
        for (t, f) in frames.iter().enumerate() {
            if f.len() != n {
                return Err(Error::Input(format!(
                    "frame {t} has {} joints, expected {n}",
                    f.len()
                )));
            }
            if f.iter().flatten().any(|c| !c.is_finite()) {
                return Err(Error::NonFinite(format!("coordinate in frame {t}")));
            }
        }
        Ok(Self { label, frames })
    }

    pub fn frames(&self) -> &[Vec<[f64; 3]>] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn joints(&self) -> usize {
        self.frames[0].len()
    }
}

/// Per-chunk mean positions of every joint, stacked into a `3M × n` node
/// signal (row `3c + d` holds coordinate `d` of chunk `c`).
///
/// Frame `t` of `T` occupies the interval `[t/T, (t+1)/T)` and chunk `c` of
/// `M` occupies `[c/M, (c+1)/M)`; each chunk mean weights frames by the
/// length of their overlap with the chunk. When `M` divides `T` this is the
/// plain average of the `T/M` frames in each chunk. Duplicating every frame
/// leaves the weights, and hence the descriptor, unchanged, and no chunk is
/// ever empty.
pub fn temporal_chunk(seq: &SkeletonSequence, m: usize) -> Result<NodeSignal> {
    if m == 0 {
        return Err(Error::Input("chunk count must be >= 1".into()));
    }
    let t_len = seq.len();
    if t_len == 0 {
        return Err(Error::Input("cannot chunk a sequence with zero frames".into()));
    }
    let n = seq.joints();
    let mut u = Matrix::zeros(3 * m, n);
    // Integer time axis of length T·M: frame t spans [tM, (t+1)M), chunk c spans [cT, (c+1)T).
    for c in 0..m {
        let lo = c * t_len;
        let hi = lo + t_len;
        let first = lo / m;
        let last = (hi - 1) / m;
        for (t, frame) in seq.frames.iter().enumerate().take(last + 1).skip(first) {
            let f_lo = t * m;
            let f_hi = f_lo + m;
            let w = (hi.min(f_hi) - lo.max(f_lo)) as f64 / t_len as f64;
            for (j, p) in frame.iter().enumerate() {
                for d in 0..3 {
                    u[(3 * c + d, j)] += w * p[d];
                }
            }
        }
    }
    Ok(NodeSignal::new(u))
}

/// [`temporal_chunk`] over many sequences, in input order.
pub fn chunk_all(seqs: &[SkeletonSequence], m: usize) -> Result<Vec<NodeSignal>> {
    seqs.par_iter().map(|s| temporal_chunk(s, m)).collect()
}

/// Labeled sequences plus the label vocabulary (sorted, unique).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub vocab: Vec<String>,
    pub sequences: Vec<SkeletonSequence>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.vocab.len()
    }

    pub fn joints(&self) -> Option<usize> {
        self.sequences.first().map(SkeletonSequence::joints)
    }

    pub fn labels(&self) -> Vec<usize> {
        self.sequences.iter().map(|s| s.label).collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            vocab: self.vocab.clone(),
            sequences: indices.iter().map(|&i| self.sequences[i].clone()).collect(),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    format: u32,
    label: String,
    frames: Vec<Vec<[f64; 3]>>,
}

/// Reads line-delimited JSON records
/// `{"format": 1, "label": "...", "frames": [[[x, y, z], …], …]}`.
///
/// With `vocab = None` the vocabulary is the sorted set of labels in the
/// file; otherwise every label must already be in `vocab`.
pub fn load_sequences(path: &Path, vocab: Option<&[String]>) -> Result<Dataset> {
    let file = fs::File::open(path).map_err(Error::io_at(path))?;
    let mut raw = Vec::new();
    let mut joints: Option<usize> = None;
    for (line_no, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let index = raw.len();
        let parse_err = |msg: String| Error::Parse {
            line: line_no + 1,
            msg: format!("record {index}: {msg}"),
        };
        let rec: Record = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        if rec.format != FORMAT_VERSION {
            return Err(parse_err(format!("unsupported format {}", rec.format)));
        }
        let seq = SkeletonSequence::new(0, rec.frames).map_err(|e| parse_err(e.to_string()))?;
        match joints {
            None => joints = Some(seq.joints()),
            Some(n) if n != seq.joints() => {
                return Err(parse_err(format!(
                    "joint count {} differs from earlier records ({n})",
                    seq.joints()
                )))
            }
            Some(_) => {}
        }
        raw.push((line_no + 1, rec.label, seq));
    }

    let vocab: Vec<String> = match vocab {
        Some(v) => v.to_vec(),
        None => raw
            .iter()
            .map(|(_, l, _)| l.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect(),
    };
    let mut sequences = Vec::with_capacity(raw.len());
    for (index, (line, label, mut seq)) in raw.into_iter().enumerate() {
        seq.label = vocab.binary_search(&label).map_err(|_| Error::Parse {
            line,
            msg: format!("record {index}: unknown label '{label}'"),
        })?;
        sequences.push(seq);
    }
    Ok(Dataset { vocab, sequences })
}

pub fn save_sequences(path: &Path, data: &Dataset) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path).map_err(Error::io_at(path))?);
    for seq in &data.sequences {
        let label = data
            .vocab
            .get(seq.label)
            .ok_or_else(|| Error::Input(format!("label index {} outside vocabulary", seq.label)))?;
        let rec = Record {
            format: FORMAT_VERSION,
            label: label.clone(),
            frames: seq.frames.clone(),
        };
        serde_json::to_writer(&mut out, &rec).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Explicit split membership: `{"format": 1, "train": [...], "test": [...]}`.
/// A missing `test` list means every index not in `train`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldFile {
    pub format: u32,
    pub train: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<Vec<usize>>,
}

impl FoldFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(Error::io_at(path))?;
        let fold: FoldFile = serde_json::from_str(&text).map_err(|e| Error::Parse {
            line: e.line(),
            msg: e.to_string(),
        })?;
        if fold.format != FORMAT_VERSION {
            return Err(Error::Parse {
                line: 1,
                msg: format!("unsupported fold format {}", fold.format),
            });
        }
        Ok(fold)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum SplitProtocol {
    /// Seeded shuffle, then the first `round(train_fraction · N)` go to train.
    Fraction { train_fraction: f64, seed: u64 },
    Fold(FoldFile),
}

/// Disjoint, exhaustive train/test indices for `n` samples.
pub fn train_test_split(n: usize, protocol: &SplitProtocol) -> Result<(Vec<usize>, Vec<usize>)> {
    let (train, test) = match protocol {
        SplitProtocol::Fraction { train_fraction, seed } => {
            if !(0.0..=1.0).contains(train_fraction) {
                return Err(Error::Split(format!(
                    "train fraction must lie in [0, 1], got {train_fraction}"
                )));
            }
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut ChaCha8Rng::seed_from_u64(*seed));
            let cut = (train_fraction * n as f64).round() as usize;
            let test = idx.split_off(cut.min(n));
            (idx, test)
        }
        SplitProtocol::Fold(fold) => {
            let mut seen = vec![false; n];
            for &i in &fold.train {
                if i >= n {
                    return Err(Error::Split(format!("train index {i} out of range for {n} samples")));
                }
                if std::mem::replace(&mut seen[i], true) {
                    return Err(Error::Split(format!("index {i} listed twice")));
                }
            }
            let test = match &fold.test {
                Some(test) => {
                    for &i in test {
                        if i >= n {
                            return Err(Error::Split(format!("test index {i} out of range for {n} samples")));
                        }
                        if std::mem::replace(&mut seen[i], true) {
                            return Err(Error::Split(format!("index {i} is in both sides or listed twice")));
                        }
                    }
                    if let Some(missing) = seen.iter().position(|s| !s) {
                        return Err(Error::Split(format!("sample {missing} is in neither side")));
                    }
                    test.clone()
                }
                None => (0..n).filter(|&i| !seen[i]).collect(),
            };
            (fold.train.clone(), test)
        }
    };
    if train.is_empty() {
        return Err(Error::Split("train side is empty".into()));
    }
    if test.is_empty() {
        return Err(Error::Split("test side is empty".into()));
    }
    Ok((train, test))
}

/// Accuracy averaged uniformly over the classes that occur in `labels`.
pub fn macro_accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::dim("macro_accuracy", (predictions.len(), 1), (labels.len(), 1)));
    }
    if labels.is_empty() {
        return Err(Error::Input("macro accuracy of an empty set".into()));
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut hit = vec![0usize; classes];
    let mut total = vec![0usize; classes];
    for (&p, &y) in predictions.iter().zip(labels) {
        total[y] += 1;
        if p == y {
            hit[y] += 1;
        }
    }
    let (sum, present) = hit
        .iter()
        .zip(&total)
        .filter(|(_, &t)| t > 0)
        .fold((0.0, 0usize), |(s, c), (&h, &t)| (s + h as f64 / t as f64, c + 1));
    Ok(sum / present as f64)
}

/// Parameters of [`synthesize_task`].
#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub n_nodes: usize,
    pub n_classes: usize,
    pub samples_per_class: usize,
    pub hidden_adjacency_seed: u64,
    pub noise_std: f64,
    pub seed: u64,
    /// Frame counts are drawn uniformly from this inclusive range.
    pub frames: (usize, usize),
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_nodes: 12,
            n_classes: 4,
            samples_per_class: 40,
            hidden_adjacency_seed: 1,
            noise_std: 0.0,
            seed: 7,
            frames: (DEFAULT_CHUNKS, 4 * DEFAULT_CHUNKS),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticTask {
    /// Nominal skeleton: a chain over the joints.
    pub skeleton: SkeletonAdjacency,
    /// Pairs whose motions are coupled; labels depend only on these.
    pub hidden: SkeletonAdjacency,
    pub train: Dataset,
    pub test: Dataset,
}

/// Minimum chain distance between coupled joints.
const HIDDEN_MIN_HOPS: usize = 4;

/// Classes differ only in how the hidden pairs move relative to each other.
///
/// Each hidden pair `(u, v)` has a driver `u` following a smooth random
/// trajectory with isotropic Gaussian coefficients, and a follower
/// `v = S_c x_u + noise`, where `S_c` flips the sign of axis `d` when bit
/// `d` of `c` is set. At most eight classes are available.
/// Every joint has the same marginal distribution in every class, so only
/// operators that bring `u` and `v` together can tell the classes apart.
/// Hidden pairs are at least four hops apart on the chain when the joint
/// count allows it.
pub fn synthesize_task(cfg: &SynthConfig) -> Result<SyntheticTask> {
    if cfg.n_nodes < 2 || cfg.n_classes == 0 || cfg.samples_per_class == 0 {
        return Err(Error::Input(
            "synthetic task needs >= 2 nodes, >= 1 class and >= 1 sample per class".into(),
        ));
    }
    if cfg.n_classes > MAX_SYNTH_CLASSES {
        return Err(Error::Input(format!(
            "synthetic task supports at most {MAX_SYNTH_CLASSES} classes, got {}",
            cfg.n_classes
        )));
    }
    if cfg.frames.0 == 0 || cfg.frames.0 > cfg.frames.1 {
        return Err(Error::Input(format!("bad frame range {:?}", cfg.frames)));
    }
    if !(cfg.noise_std >= 0.0 && cfg.noise_std.is_finite()) {
        return Err(Error::Input(format!("noise_std must be >= 0, got {}", cfg.noise_std)));
    }
    let n = cfg.n_nodes;
    let skeleton = SkeletonAdjacency::path(n);
    let pairs = hidden_matching(n, cfg.hidden_adjacency_seed);
    let hidden = SkeletonAdjacency::new(n, pairs.iter().copied())?;
    let mut partner: Vec<Option<usize>> = vec![None; n];
    for &(u, v) in &pairs {
        partner[v] = Some(u);
    }

    let vocab: Vec<String> = (0..cfg.n_classes).map(|c| format!("c{c:02}")).collect();
    let rotations: Vec<[[f64; 3]; 3]> = (0..cfg.n_classes).map(axis_flips).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n_train = (7 * cfg.samples_per_class).div_ceil(10);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (class, rot) in rotations.iter().enumerate() {
        for i in 0..cfg.samples_per_class {
            let t_len = rng.random_range(cfg.frames.0..=cfg.frames.1);
            let frames = sample_frames(n, t_len, rot, &partner, cfg.noise_std, &mut rng);
            let seq = SkeletonSequence::new(class, frames)?;
            if i < n_train {
                train.push(seq);
            } else {
                test.push(seq);
            }
        }
    }
    Ok(SyntheticTask {
        skeleton,
        hidden,
        train: Dataset {
            vocab: vocab.clone(),
            sequences: train,
        },
        test: Dataset {
            vocab,
            sequences: test,
        },
    })
}

/// Random perfect (or near-perfect) matching whose pairs are at least
/// [`HIDDEN_MIN_HOPS`] apart on the chain; the first element of each pair
/// is the driver.
fn hidden_matching(n: usize, seed: u64) -> Vec<(usize, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let min_hops = if n >= 2 * HIDDEN_MIN_HOPS { HIDDEN_MIN_HOPS } else { 2.min(n - 1) };
    let mut nodes: Vec<usize> = (0..n).collect();
    for _ in 0..10_000 {
        nodes.shuffle(&mut rng);
        let pairs: Vec<(usize, usize)> = nodes.chunks_exact(2).map(|p| (p[0], p[1])).collect();
        if pairs.iter().all(|&(a, b)| a.abs_diff(b) >= min_hops) {
            return pairs;
        }
    }
    let half = n / 2;
    (0..half).map(|i| (i, i + half)).collect()
}

pub const MAX_SYNTH_CLASSES: usize = 8;

fn axis_flips(class: usize) -> [[f64; 3]; 3] {
    let mut m = [[0.0; 3]; 3];
    for (d, row) in m.iter_mut().enumerate() {
        row[d] = if class >> d & 1 == 1 { -1.0 } else { 1.0 };
    }
    m
}

/// Harmonics in each coordinate's random trajectory.
const HARMONICS: usize = 2;

fn sample_frames(
    n: usize,
    t_len: usize,
    rot: &[[f64; 3]; 3],
    partner: &[Option<usize>],
    noise_std: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<[f64; 3]>> {
    let mut gauss = || -> f64 { StandardNormal.sample(rng) };
    // coeffs[j][h][d]: h = 0 offset, then (sin, cos) per harmonic
    let coeffs: Vec<Vec<[f64; 3]>> = (0..n)
        .map(|_| (0..1 + 2 * HARMONICS).map(|_| [gauss(), gauss(), gauss()]).collect())
        .collect();
    let mut noise: Vec<f64> = Vec::with_capacity(n * t_len * 3);
    if noise_std > 0.0 {
        for _ in 0..n * t_len * 3 {
            noise.push(noise_std * gauss());
        }
    }
    let position = |j: usize, tau: f64| -> [f64; 3] {
        let c = &coeffs[j];
        let mut p = c[0];
        for h in 1..=HARMONICS {
            let arg = 2.0 * std::f64::consts::PI * h as f64 * tau;
            let (s, co) = arg.sin_cos();
            for d in 0..3 {
                p[d] += c[2 * h - 1][d] * s + c[2 * h][d] * co;
            }
        }
        p
    };
    (0..t_len)
        .map(|t| {
            let tau = t as f64 / t_len as f64;
            (0..n)
                .map(|j| {
                    let mut p = match partner[j] {
                        Some(u) => {
                            let x = position(u, tau);
                            let mut y = [0.0; 3];
                            for (r, out) in y.iter_mut().enumerate() {
                                *out = rot[r][0] * x[0] + rot[r][1] * x[1] + rot[r][2] * x[2];
                            }
                            y
                        }
                        None => position(j, tau),
                    };
                    if noise_std > 0.0 {
                        for (d, v) in p.iter_mut().enumerate() {
                            *v += noise[(t * n + j) * 3 + d];
                        }
                    }
                    p
                })
                .collect()
        })
        .collect()
}

/// Number of values per line of an SBU Kinect Interaction skeleton file:
/// frame index followed by two 15-joint skeletons.
const SBU_FIELDS: usize = 1 + 2 * 15 * 3;

/// Parses an SBU `skeleton_pos.txt` body into frames of 30 joints.
pub fn parse_sbu_frames(text: &str) -> Result<Vec<Vec<[f64; 3]>>> {
    let mut frames = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split(',')
            .map(|v| {
                v.trim().parse::<f64>().map_err(|e| Error::Parse {
                    line: line_no + 1,
                    msg: format!("'{}': {e}", v.trim()),
                })
            })
            .collect::<Result<_>>()?;
        if vals.len() != SBU_FIELDS {
            return Err(Error::Parse {
                line: line_no + 1,
                msg: format!("expected {SBU_FIELDS} comma-separated values, found {}", vals.len()),
            });
        }
        frames.push(vals[1..].chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect());
    }
    if frames.is_empty() {
        return Err(Error::Input("SBU file contains no frames".into()));
    }
    Ok(frames)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq_1d(values: &[f64]) -> SkeletonSequence {
        SkeletonSequence::new(0, values.iter().map(|&v| vec![[v, -v, 2.0 * v]]).collect()).unwrap()
    }

    #[test]
    fn t_equals_m_is_identity() {
        let vals: Vec<f64> = (0..8).map(|t| (t as f64).sin()).collect();
        let u = temporal_chunk(&seq_1d(&vals), 8).unwrap();
        for (c, v) in vals.iter().enumerate() {
            assert_eq!(u.matrix().get(3 * c, 0), *v);
            assert_eq!(u.matrix().get(3 * c + 1, 0), -v);
            assert_eq!(u.matrix().get(3 * c + 2, 0), 2.0 * v);
        }
    }

    #[test]
    fn linear_motion_sixteen_frames() {
        let vals: Vec<f64> = (0..16).map(|t| t as f64).collect();
        let u = temporal_chunk(&seq_1d(&vals), 8).unwrap();
        let means: Vec<f64> = (0..8).map(|c| u.matrix().get(3 * c, 0)).collect();
        assert_eq!(means, vec![0.5, 2.5, 4.5, 6.5, 8.5, 10.5, 12.5, 14.5]);
    }

    #[test]
    fn constant_trajectory_any_length() {
        for t_len in [1, 3, 7, 8, 13, 40] {
            let u = temporal_chunk(&seq_1d(&vec![1.25; t_len]), 8).unwrap();
            assert_eq!(u.dim(), 24);
            for c in 0..8 {
                assert!((u.matrix().get(3 * c, 0) - 1.25).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn short_sequences_fill_every_chunk() {
        let u = temporal_chunk(&seq_1d(&[1.0, 5.0, 9.0]), 8).unwrap();
        let means: Vec<f64> = (0..8).map(|c| u.matrix().get(3 * c, 0)).collect();
        assert_eq!(means[0], 1.0);
        assert_eq!(means[7], 9.0);
        assert!(means.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn rejects_empty_input() {
        assert!(SkeletonSequence::new(0, vec![]).is_err());
        assert!(temporal_chunk(&seq_1d(&[1.0]), 0).is_err());
    }

    #[test]
    fn fraction_split_counts() {
        let (tr, te) = train_test_split(10, &SplitProtocol::Fraction { train_fraction: 0.7, seed: 3 }).unwrap();
        assert_eq!((tr.len(), te.len()), (7, 3));
        let mut all: Vec<usize> = tr.iter().chain(&te).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert!(matches!(
            train_test_split(10, &SplitProtocol::Fraction { train_fraction: 1.0, seed: 3 }),
            Err(Error::Split(_))
        ));
    }

    #[test]
    fn fold_split_is_honored() {
        let fold = FoldFile {
            format: 1,
            train: vec![4, 0, 2],
            test: None,
        };
        let (tr, te) = train_test_split(5, &SplitProtocol::Fold(fold)).unwrap();
        assert_eq!(tr, vec![4, 0, 2]);
        assert_eq!(te, vec![1, 3]);
        let overlap = FoldFile {
            format: 1,
            train: vec![0, 1],
            test: Some(vec![1, 2]),
        };
        assert!(train_test_split(3, &SplitProtocol::Fold(overlap)).is_err());
    }

    #[test]
    fn macro_accuracy_weights_classes_equally() {
        // class 0: 3/4 correct, class 1: 0/1 correct
        let acc = macro_accuracy(&[0, 0, 0, 1, 0], &[0, 0, 0, 0, 1]).unwrap();
        assert!((acc - 0.375).abs() < 1e-15);
        assert!(macro_accuracy(&[], &[]).is_err());
    }

    #[test]
    fn synthetic_task_is_deterministic_and_split_by_class() {
        let cfg = SynthConfig {
            samples_per_class: 10,
            ..SynthConfig::default()
        };
        let a = synthesize_task(&cfg).unwrap();
        assert_eq!(a, synthesize_task(&cfg).unwrap());
        assert_eq!(a.train.len(), 4 * 7);
        assert_eq!(a.test.len(), 4 * 3);
        let one = synthesize_task(&SynthConfig {
            samples_per_class: 1,
            ..cfg.clone()
        })
        .unwrap();
        assert_eq!(one.train.len(), 4);
        assert!(one.test.is_empty());
    }

    #[test]
    fn hidden_pairs_are_far_on_the_chain() {
        let task = synthesize_task(&SynthConfig::default()).unwrap();
        assert_eq!(task.hidden.edges().len(), 6);
        for &(u, v) in task.hidden.edges() {
            assert!(v - u >= HIDDEN_MIN_HOPS);
        }
    }

    #[test]
    fn class_maps_are_distinct_sign_flips() {
        let maps: Vec<_> = (0..MAX_SYNTH_CLASSES).map(axis_flips).collect();
        for (a, ma) in maps.iter().enumerate() {
            for i in 0..3 {
                for j in 0..3 {
                    assert_eq!(ma[i][j].abs(), if i == j { 1.0 } else { 0.0 });
                }
            }
            for mb in &maps[a + 1..] {
                assert_ne!(ma, mb);
            }
        }
        let too_many = SynthConfig {
            n_classes: MAX_SYNTH_CLASSES + 1,
            ..SynthConfig::default()
        };
        assert!(synthesize_task(&too_many).is_err());
    }

    #[test]
    fn sbu_lines_parse_into_thirty_joints() {
        let line: Vec<String> = std::iter::once("1".to_string())
            .chain((0..90).map(|v| format!("{}", v as f64 / 100.0)))
            .collect();
        let text = format!("{}\n{}\n", line.join(","), line.join(", "));
        let frames = parse_sbu_frames(&text).unwrap();
        assert_eq!(frames.len(), 2);
        assert_eq!(frames[0].len(), 30);
        assert_eq!(frames[1][29], [0.87, 0.88, 0.89]);
        assert!(matches!(parse_sbu_frames("1,2,3"), Err(Error::Parse { line: 1, .. })));
    }
}
