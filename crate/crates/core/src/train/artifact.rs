//! Single-file model artifact. All integers are little-endian `u32`, all
//! reals little-endian IEEE-754 `f64`:
//!
//! ```text
//! magic    8 bytes  "CTXGCN01"
//! version  u32      1
//! config   u32 byte length, then UTF-8 `key = value` lines
//! labels   u32 count, then per label: u32 byte length, UTF-8 bytes
//! matrices u32 count, then per matrix:
//!          u32 name length, name bytes, u32 rows, u32 cols, rows·cols f64 (row-major)
//! ```
//!
//! Matrix names: `A_k` (context matrices as used at the end of training),
//! `free_k` (free parameters), `mask_k` (0/1 support, only for masked
//! operators), `W_k`, `head` (`C × L`) and `bias` (`1 × L`), with `k`
//! counting from 0.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::baselines::OperatorMode;
use crate::basis::{AdjacencyBasis, FreeBasis, Mask};
use crate::error::{Error, Result};
use crate::gcn::ConvFilterBank;
use crate::matrix::Matrix;

use super::{Model, TrainConfig};

pub const ARTIFACT_MAGIC: &[u8; 8] = b"CTXGCN01";
pub const ARTIFACT_VERSION: u32 = 1;

/// A trained model with the configuration and labels it was trained with.
#[derive(Clone, Debug, PartialEq)]
pub struct Artifact {
    pub config: TrainConfig,
    pub vocab: Vec<String>,
    pub model: Model,
    pub adjacency: AdjacencyBasis,
}

fn put_u32(buf: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Input(format!("{v} does not fit the artifact format")))?;
    buf.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_bytes(buf: &mut Vec<u8>, bytes: &[u8]) -> Result<()> {
    put_u32(buf, bytes.len())?;
    buf.extend_from_slice(bytes);
    Ok(())
}

fn put_matrix(buf: &mut Vec<u8>, name: &str, m: &Matrix) -> Result<()> {
    put_bytes(buf, name.as_bytes())?;
    put_u32(buf, m.rows())?;
    put_u32(buf, m.cols())?;
    for v in m.as_slice() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    Ok(())
}

pub fn encode_artifact(a: &Artifact) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    buf.extend_from_slice(ARTIFACT_MAGIC);
    buf.extend_from_slice(&ARTIFACT_VERSION.to_le_bytes());
    put_bytes(&mut buf, a.config.to_kv().as_bytes())?;
    put_u32(&mut buf, a.vocab.len())?;
    for label in &a.vocab {
        put_bytes(&mut buf, label.as_bytes())?;
    }

    let mut mats: Vec<(String, &Matrix)> = Vec::new();
    for (k, m) in a.adjacency.mats().iter().enumerate() {
        mats.push((format!("A_{k}"), m));
    }
    for (k, m) in a.model.operators.mats().iter().enumerate() {
        mats.push((format!("free_{k}"), m));
    }
    let mask_mats: Vec<Matrix> = a
        .model
        .operators
        .masks()
        .map(|ms| {
            ms.iter()
                .map(|mask| Matrix::from_fn(mask.n(), mask.n(), |i, j| if mask.get(i, j) { 1.0 } else { 0.0 }))
                .collect()
        })
        .unwrap_or_default();
    for (k, m) in mask_mats.iter().enumerate() {
        mats.push((format!("mask_{k}"), m));
    }
    for (k, m) in a.model.filters.filters.iter().enumerate() {
        mats.push((format!("W_{k}"), m));
    }
    mats.push(("head".into(), &a.model.filters.head));
    let bias = Matrix::new(1, a.model.filters.bias.len(), a.model.filters.bias.clone())?;
    mats.push(("bias".into(), &bias));

    put_u32(&mut buf, mats.len())?;
    for (name, m) in mats {
        put_matrix(&mut buf, &name, m)?;
    }
    Ok(buf)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Input(format!("artifact truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()?;
        String::from_utf8(self.take(len)?.to_vec())
            .map_err(|_| Error::Input(format!("invalid UTF-8 in artifact near byte {}", self.pos)))
    }

    fn matrix(&mut self) -> Result<(String, Matrix)> {
        let name = self.string()?;
        let rows = self.u32()?;
        let cols = self.u32()?;
        let count = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::Input(format!("matrix '{name}' is too large")))?;
        let raw = self.take(count.checked_mul(8).ok_or_else(|| Error::Input("matrix too large".into()))?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        Ok((name, Matrix::new(rows, cols, data)?))
    }
}

pub fn decode_artifact(bytes: &[u8]) -> Result<Artifact> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != ARTIFACT_MAGIC {
        return Err(Error::Input("not a model artifact (bad magic)".into()));
    }
    let version = r.u32()?;
    if version as u32 != ARTIFACT_VERSION {
        return Err(Error::Input(format!("unsupported artifact version {version}")));
    }
    let config = TrainConfig::from_kv(&r.string()?)?;
    let n_labels = r.u32()?;
    let vocab = (0..n_labels).map(|_| r.string()).collect::<Result<Vec<_>>>()?;
    let n_mats = r.u32()?;
    let mut mats = BTreeMap::new();
    for _ in 0..n_mats {
        let (name, m) = r.matrix()?;
        mats.insert(name, m);
    }
    if r.pos != bytes.len() {
        return Err(Error::Input(format!("{} trailing bytes after artifact", bytes.len() - r.pos)));
    }

    let mut take = |name: String| {
        mats.remove(&name)
            .ok_or_else(|| Error::Input(format!("artifact is missing matrix '{name}'")))
    };
    let k = config.k;
    let adjacency = (0..k).map(|i| take(format!("A_{i}"))).collect::<Result<Vec<_>>>()?;
    let free = (0..k).map(|i| take(format!("free_{i}"))).collect::<Result<Vec<_>>>()?;
    let filters = (0..k).map(|i| take(format!("W_{i}"))).collect::<Result<Vec<_>>>()?;
    let head = take("head".into())?;
    let bias = take("bias".into())?.into_vec();
    let masks: Vec<Mask> = (0..k)
        .filter_map(|i| mats.remove(&format!("mask_{i}")))
        .map(|m| Mask::from_fn(m.rows(), |i, j| m.get(i, j) != 0.0))
        .collect();
    let operators = match masks.len() {
        0 => FreeBasis::new(free)?,
        n if n == k => FreeBasis::with_masks(free, masks)?,
        n => return Err(Error::Input(format!("artifact has {n} masks for {k} operators"))),
    };

    Ok(Artifact {
        model: Model {
            operators,
            fixed: config.mode == OperatorMode::Hpm,
            kind: config.constraint,
            filters: ConvFilterBank::new(filters, head, bias)?,
            activation: config.activation,
            differential: vec![config.differential; k],
        },
        adjacency: AdjacencyBasis::new(adjacency, config.constraint)?,
        config,
        vocab,
    })
}

pub fn save_artifact(path: &Path, a: &Artifact) -> Result<()> {
    fs::write(path, encode_artifact(a)?).map_err(Error::io_at(path))?;
    Ok(())
}

pub fn load_artifact(path: &Path) -> Result<Artifact> {
    decode_artifact(&fs::read(path).map_err(Error::io_at(path))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::{build_operator_set, SkeletonAdjacency};
    use crate::basis::ConstraintKind;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn artifact(mode: OperatorMode) -> Artifact {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let config = TrainConfig {
            mode,
            k: 3,
            constraint: ConstraintKind::OrthStc,
            m: 2,
            channels: 2,
            ..TrainConfig::default()
        };
        let set = build_operator_set(mode, &SkeletonAdjacency::path(5), config.constraint, 3, 0.3, &mut rng).unwrap();
        let model = Model {
            operators: set.basis,
            fixed: set.fixed,
            kind: config.constraint,
            filters: ConvFilterBank::random(3, 6, 2, 3, &mut rng),
            activation: config.activation,
            differential: vec![false; 3],
        };
        let adjacency = model.constrained(7.0).unwrap().adjacency;
        Artifact {
            config,
            vocab: vec!["a".into(), "b".into(), "c".into()],
            model,
            adjacency,
        }
    }

    #[test]
    fn round_trips_bit_exactly() {
        for mode in OperatorMode::ALL {
            let a = artifact(mode);
            let bytes = encode_artifact(&a).unwrap();
            assert_eq!(&bytes[..8], ARTIFACT_MAGIC);
            let b = decode_artifact(&bytes).unwrap();
            assert_eq!(a, b, "{mode}");
            assert_eq!(encode_artifact(&b).unwrap(), bytes);
        }
    }

    #[test]
    fn rejects_corruption() {
        let bytes = encode_artifact(&artifact(OperatorMode::Ours)).unwrap();
        assert!(decode_artifact(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_artifact(&bad).is_err());
        let mut long = bytes;
        long.push(0);
        assert!(decode_artifact(&long).is_err());
    }
}
