//! Power-map operator sets built from a skeleton graph: handcrafted (HPM),
//! learned within the power-map supports (LPM), and fully learned (OURS).

use std::fmt;
use std::str::FromStr;

use log::warn;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::basis::{AdjacencyBasis, ConstraintKind, FreeBasis, Mask};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::reparam::{check_epsilon_orthogonality, symmetry_forward};

/// Undirected, unweighted joint graph.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkeletonAdjacency {
    n: usize,
    edges: Vec<(usize, usize)>,
}

impl SkeletonAdjacency {
    /// Edges are stored as `(min, max)` pairs, sorted and deduplicated.
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut norm = Vec::new();
        for (a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::Input(format!("edge ({a}, {b}) out of range for {n} joints")));
            }
            if a == b {
                return Err(Error::Input(format!("self-loop on joint {a} in skeleton edges")));
            }
            norm.push((a.min(b), a.max(b)));
        }
        norm.sort_unstable();
        norm.dedup();
        Ok(Self { n, edges: norm })
    }

    /// Chain `0 – 1 – … – (n−1)`.
    pub fn path(n: usize) -> Self {
        Self {
            n,
            edges: (1..n).map(|v| (v - 1, v)).collect(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Binary symmetric adjacency with zero diagonal.
    pub fn matrix(&self) -> Matrix {
        let mut a = Matrix::zeros(self.n, self.n);
        for &(u, v) in &self.edges {
            a[(u, v)] = 1.0;
            a[(v, u)] = 1.0;
        }
        a
    }

    pub fn components(&self) -> usize {
        let mut uf = UnionFind::new(self.n);
        let mut count = self.n;
        for &(u, v) in &self.edges {
            if uf.union(u, v) {
                count -= 1;
            }
        }
        count
    }
}

/// Disjoint-set forest with path halving and union by size.
#[derive(Clone, Debug)]
pub struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Merges the sets of `a` and `b`; false if they were already joined.
    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
        true
    }
}

/// `{A⁰ = I, A¹, …, A^{K−1}}`.
pub fn power_map_basis(a: &Matrix, k: usize) -> Result<AdjacencyBasis> {
    if k == 0 {
        return Err(Error::Input("power map needs K >= 1".into()));
    }
    if !a.is_square() {
        return Err(Error::dim("power_map_basis", a.shape(), (a.cols(), a.rows())));
    }
    let mut mats = Vec::with_capacity(k);
    let mut current = Matrix::identity(a.rows());
    for _ in 0..k {
        let next = current.matmul(a)?;
        mats.push(current);
        current = next;
    }
    AdjacencyBasis::new(mats, ConstraintKind::None)
}

/// Minimum spanning forest with unit weights: edges are scanned in
/// lexicographic order and kept unless they close a cycle.
pub fn kruskal_spanning_tree(g: &SkeletonAdjacency) -> SkeletonAdjacency {
    let mut uf = UnionFind::new(g.n);
    let edges = g
        .edges
        .iter()
        .copied()
        .filter(|&(u, v)| uf.union(u, v))
        .collect();
    SkeletonAdjacency { n: g.n, edges }
}

/// `½(A + Aᵀ)`.
pub fn symmetrize(a: &Matrix) -> Result<Matrix> {
    symmetry_forward(a)
}

/// `A D(A)⁻¹` with `D(A)` the diagonal of column sums.
pub fn column_stochastic_normalize(a: &Matrix) -> Result<Matrix> {
    if a.as_slice().iter().any(|&v| v < 0.0) {
        return Err(Error::Input("column normalization needs nonnegative entries".into()));
    }
    let sums = a.col_sums();
    if let Some(j) = sums.iter().position(|&s| s <= 0.0) {
        return Err(Error::IsolatedNode(j));
    }
    Ok(Matrix::from_fn(a.rows(), a.cols(), |i, j| a.get(i, j) / sums[j]))
}

/// Adds a unit self-loop to every node whose column is all zero.
pub fn add_self_loops(a: &Matrix) -> Matrix {
    let sums = a.col_sums();
    let mut out = a.clone();
    for (j, s) in sums.iter().enumerate() {
        if *s == 0.0 && j < a.rows() {
            out[(j, j)] = 1.0;
        }
    }
    out
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OperatorMode {
    /// Fixed powers of the skeleton.
    Hpm,
    /// Learned entries restricted to the supports of the skeleton powers.
    Lpm,
    /// Dense, fully learned operators.
    #[default]
    Ours,
}

impl OperatorMode {
    pub const ALL: [OperatorMode; 3] = [OperatorMode::Hpm, OperatorMode::Lpm, OperatorMode::Ours];

    pub fn as_str(self) -> &'static str {
        match self {
            OperatorMode::Hpm => "hpm",
            OperatorMode::Lpm => "lpm",
            OperatorMode::Ours => "ours",
        }
    }
}

impl fmt::Display for OperatorMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OperatorMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "hpm" => Ok(OperatorMode::Hpm),
            "lpm" => Ok(OperatorMode::Lpm),
            "ours" => Ok(OperatorMode::Ours),
            other => Err(Error::Config(format!("unknown operator mode '{other}'"))),
        }
    }
}

/// Initial operators for one training run.
#[derive(Clone, Debug, PartialEq)]
pub struct OperatorSet {
    pub basis: FreeBasis,
    /// Operators are used as-is and never updated.
    pub fixed: bool,
    pub kind: ConstraintKind,
}

impl OperatorSet {
    pub fn masks(&self) -> Option<&[Mask]> {
        self.basis.masks()
    }

    /// The handcrafted operators of a fixed set, tagged with the requested
    /// constraint.
    pub fn fixed_adjacency(&self) -> Option<AdjacencyBasis> {
        self.fixed.then(|| {
            AdjacencyBasis::new(self.basis.mats().to_vec(), self.kind).expect("validated at construction")
        })
    }
}

/// Skeleton preprocessing shared by HPM: spanning tree for orthogonality,
/// symmetrization, then column normalization for stochasticity.
fn handcrafted_adjacency(skeleton: &SkeletonAdjacency, kind: ConstraintKind) -> Result<Matrix> {
    let graph = if kind.has_orth() {
        kruskal_spanning_tree(skeleton)
    } else {
        skeleton.clone()
    };
    let mut a = graph.matrix();
    if kind.has_sym() {
        a = symmetrize(&a)?;
    }
    if kind.has_stc() {
        a = column_stochastic_normalize(&add_self_loops(&a))?;
    }
    Ok(a)
}

/// Builds the operator set for `mode`.
///
/// `init_std` scales the Gaussian initialization of learned entries.
pub fn build_operator_set(
    mode: OperatorMode,
    skeleton: &SkeletonAdjacency,
    kind: ConstraintKind,
    k: usize,
    init_std: f64,
    rng: &mut impl Rng,
) -> Result<OperatorSet> {
    kind.validate_for(k)?;
    if !(init_std >= 0.0 && init_std.is_finite()) {
        return Err(Error::Config(format!("init_std must be >= 0, got {init_std}")));
    }
    let n = skeleton.n();
    let noise = Normal::new(0.0, init_std).expect("finite std");
    match mode {
        OperatorMode::Hpm => {
            let a = handcrafted_adjacency(skeleton, kind)?;
            let powers = power_map_basis(&a, k)?.into_mats();
            if kind.has_orth() {
                warn_on_tree_overlap(&powers);
            }
            Ok(OperatorSet {
                basis: FreeBasis::new(powers)?,
                fixed: true,
                kind,
            })
        }
        OperatorMode::Lpm => {
            let binary = skeleton.matrix();
            let powers = power_map_basis(&binary, k)?.into_mats();
            let mut masks = Vec::with_capacity(k);
            let mut mats = Vec::with_capacity(k);
            for p in &powers {
                let mut mask = Mask::support(p)?;
                if kind.has_sym() {
                    mask = mask.symmetrized();
                }
                let base = if kind.has_stc() {
                    Matrix::zeros(n, n)
                } else {
                    column_stochastic_normalize(&add_self_loops(p))?
                };
                let m = Matrix::from_fn(n, n, |i, j| base.get(i, j) + noise.sample(rng));
                masks.push(mask);
                mats.push(m);
            }
            Ok(OperatorSet {
                basis: FreeBasis::with_masks(mats, masks)?,
                fixed: false,
                kind,
            })
        }
        OperatorMode::Ours => {
            let mats = (0..k)
                .map(|_| Matrix::from_fn(n, n, |_, _| noise.sample(rng)))
                .collect();
            Ok(OperatorSet {
                basis: FreeBasis::new(mats)?,
                fixed: false,
                kind,
            })
        }
    }
}

/// Raises one operator per entry by `gap` so that learned operators start
/// well separated under crispmax. Leaders are drawn among the operators whose
/// mask contains the entry. With `symmetric` the pattern is mirrored;
/// otherwise every column gets a near-equal share of each operator.
pub fn seed_leaders(basis: &mut FreeBasis, gap: f64, symmetric: bool, rng: &mut impl Rng) {
    let (k, n) = (basis.k(), basis.n());
    if k < 2 || gap == 0.0 {
        return;
    }
    let masks = basis.masks().map(<[Mask]>::to_vec);
    let eligible = |i: usize, j: usize| -> Vec<usize> {
        (0..k)
            .filter(|&op| masks.as_ref().is_none_or(|m| m[op].get(i, j)))
            .collect()
    };
    let mut leader = vec![None; n * n];
    if symmetric {
        for i in 0..n {
            for j in i..n {
                let ops = eligible(i, j);
                if !ops.is_empty() {
                    let op = ops[rng.random_range(0..ops.len())];
                    leader[i * n + j] = Some(op);
                    leader[j * n + i] = Some(op);
                }
            }
        }
    } else {
        let mut rows: Vec<usize> = (0..n).collect();
        for j in 0..n {
            rows.shuffle(rng);
            for (slot, &i) in rows.iter().enumerate() {
                let ops = eligible(i, j);
                if !ops.is_empty() {
                    leader[i * n + j] = Some(ops[slot % ops.len()]);
                }
            }
        }
    }
    for (op, m) in basis.mats_mut().iter_mut().enumerate() {
        for (v, l) in m.as_mut_slice().iter_mut().zip(&leader) {
            if *l == Some(op) {
                *v += gap;
            }
        }
    }
}

/// Checks the handcrafted orthogonal basis and warns about overlapping
/// pairs. Powers of equal parity share support on any tree with an edge.
fn warn_on_tree_overlap(powers: &[Matrix]) {
    for a in 0..powers.len() {
        for b in a + 1..powers.len() {
            let pair = AdjacencyBasis::new(vec![powers[a].clone(), powers[b].clone()], ConstraintKind::Orth)
                .expect("same shapes");
            if let Ok(o) = check_epsilon_orthogonality(&pair, 0.0) {
                if !o.ok {
                    warn!(
                        "handcrafted tree powers {a} and {b} overlap (max entrywise product {})",
                        o.max_overlap
                    );
                }
            }
        }
    }
}

/// Two 15-joint skeletons as laid out in SBU Kinect Interaction files
/// (second person offset by 15).
pub fn sbu_skeleton() -> SkeletonAdjacency {
    const ONE: [(usize, usize); 14] = [
        (0, 1),
        (1, 2),
        (1, 3),
        (3, 4),
        (4, 5),
        (1, 6),
        (6, 7),
        (7, 8),
        (2, 9),
        (9, 10),
        (10, 11),
        (2, 12),
        (12, 13),
        (13, 14),
    ];
    let edges = ONE.iter().copied().chain(ONE.iter().map(|&(a, b)| (a + 15, b + 15)));
    SkeletonAdjacency::new(30, edges).expect("static edge list is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn k_one_is_identity() {
        let b = power_map_basis(&SkeletonAdjacency::path(4).matrix(), 1).unwrap();
        assert_eq!(b.mats(), &[Matrix::identity(4)]);
        assert!(power_map_basis(&Matrix::identity(2), 0).is_err());
    }

    #[test]
    fn path_square_links_ends() {
        let b = power_map_basis(&SkeletonAdjacency::path(3).matrix(), 3).unwrap();
        assert_eq!(b.mats()[2].get(0, 2), 1.0);
        assert_eq!(b.mats()[2].get(1, 1), 2.0);
    }

    #[test]
    fn powers_of_stochastic_matrix_stay_stochastic() {
        let a = column_stochastic_normalize(&add_self_loops(&sbu_skeleton().matrix())).unwrap();
        for p in power_map_basis(&a, 6).unwrap().mats() {
            for s in p.col_sums() {
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn powers_of_symmetric_matrix_stay_symmetric() {
        let a = symmetrize(&sbu_skeleton().matrix()).unwrap();
        for p in power_map_basis(&a, 5).unwrap().mats() {
            assert!(p.sub(&p.transpose()).unwrap().max_abs() <= 1e-12);
        }
    }

    #[test]
    fn kruskal_tree_is_unchanged() {
        let t = SkeletonAdjacency::path(6);
        assert_eq!(kruskal_spanning_tree(&t), t);
    }

    #[test]
    fn kruskal_triangle_keeps_first_pairs() {
        let g = SkeletonAdjacency::new(3, [(1, 2), (0, 2), (0, 1)]).unwrap();
        let t = kruskal_spanning_tree(&g);
        assert_eq!(t.edges(), &[(0, 1), (0, 2)]);
    }

    #[test]
    fn symmetrize_mirrors_upper_triangle() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![0.0, 3.0]]).unwrap();
        assert_eq!(symmetrize(&a).unwrap().as_slice(), &[1.0, 1.0, 1.0, 3.0]);
    }

    #[test]
    fn star_with_self_loops_normalizes_by_hand() {
        let star = SkeletonAdjacency::new(4, [(0, 1), (0, 2), (0, 3)]).unwrap();
        let a = star.matrix().add(&Matrix::identity(4)).unwrap();
        let p = column_stochastic_normalize(&a).unwrap();
        for leaf in 1..4 {
            assert_eq!(p.get(leaf, leaf), 0.5);
            assert_eq!(p.get(0, leaf), 0.5);
        }
        for i in 0..4 {
            assert_eq!(p.get(i, 0), 0.25);
        }
        assert_eq!(column_stochastic_normalize(&p).unwrap(), p);
    }

    #[test]
    fn isolated_node_is_reported() {
        let a = SkeletonAdjacency::new(3, [(0, 1)]).unwrap().matrix();
        assert!(matches!(column_stochastic_normalize(&a), Err(Error::IsolatedNode(2))));
        let fixed = column_stochastic_normalize(&add_self_loops(&a)).unwrap();
        assert_eq!(fixed.get(2, 2), 1.0);
    }

    #[test]
    fn hpm_none_k1_is_identity_and_fixed() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let set = build_operator_set(OperatorMode::Hpm, &SkeletonAdjacency::path(5), ConstraintKind::None, 1, 0.1, &mut rng).unwrap();
        assert!(set.fixed);
        assert_eq!(set.basis.mats(), &[Matrix::identity(5)]);
    }

    #[test]
    fn hpm_orth_powers_of_opposite_parity_are_disjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let g = SkeletonAdjacency::new(6, [(0, 1), (1, 2), (2, 0), (2, 3), (3, 4), (4, 5), (5, 3)]).unwrap();
        let set = build_operator_set(OperatorMode::Hpm, &g, ConstraintKind::Orth, 4, 0.1, &mut rng).unwrap();
        let mats = set.basis.mats();
        for a in 0..4 {
            for b in (a + 1..4).step_by(2) {
                let pair = AdjacencyBasis::new(vec![mats[a].clone(), mats[b].clone()], ConstraintKind::Orth).unwrap();
                let o = check_epsilon_orthogonality(&pair, 0.0).unwrap();
                assert!(o.ok, "powers {a} and {b}: {}", o.max_overlap);
            }
        }
    }

    #[test]
    fn lpm_masks_follow_power_supports() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = SkeletonAdjacency::path(5);
        for kind in [ConstraintKind::None, ConstraintKind::Sym, ConstraintKind::OrthStc] {
            let set = build_operator_set(OperatorMode::Lpm, &g, kind, 3, 0.1, &mut rng).unwrap();
            assert!(!set.fixed);
            let powers = power_map_basis(&g.matrix(), 3).unwrap();
            for (mask, p) in set.masks().unwrap().iter().zip(powers.mats()) {
                assert_eq!(mask, &Mask::support(p).unwrap());
                assert!(mask.is_symmetric());
            }
            for (m, mask) in set.basis.mats().iter().zip(set.masks().unwrap()) {
                for flat in 0..25 {
                    if !mask.at(flat) {
                        assert_eq!(m.as_slice()[flat], 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn ours_is_dense_and_unmasked() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let set = build_operator_set(OperatorMode::Ours, &SkeletonAdjacency::path(4), ConstraintKind::Stc, 2, 1.0, &mut rng).unwrap();
        assert!(set.masks().is_none());
        assert!(set.basis.mats().iter().all(|m| m.as_slice().iter().all(|v| *v != 0.0)));
    }

    #[test]
    fn orth_with_one_operator_is_a_constraint_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for mode in OperatorMode::ALL {
            assert!(matches!(
                build_operator_set(mode, &SkeletonAdjacency::path(3), ConstraintKind::Orth, 1, 0.1, &mut rng),
                Err(Error::Constraint(_))
            ));
        }
    }

    #[test]
    fn sbu_skeleton_is_two_trees() {
        let s = sbu_skeleton();
        assert_eq!(s.n(), 30);
        assert_eq!(s.components(), 2);
        assert_eq!(kruskal_spanning_tree(&s), s);
    }

    fn random_graph(seed: u64, n: usize, p: f64) -> SkeletonAdjacency {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut edges = Vec::new();
        for u in 0..n {
            for v in u + 1..n {
                if rng.random_bool(p) {
                    edges.push((u, v));
                }
            }
        }
        SkeletonAdjacency::new(n, edges).unwrap()
    }

    /// Depth-first search for a cycle, independent of the union-find.
    fn has_cycle(g: &SkeletonAdjacency) -> bool {
        let mut adj = vec![Vec::new(); g.n()];
        for &(u, v) in g.edges() {
            adj[u].push(v);
            adj[v].push(u);
        }
        let mut seen = vec![false; g.n()];
        for root in 0..g.n() {
            if seen[root] {
                continue;
            }
            let mut stack = vec![(root, usize::MAX)];
            while let Some((v, parent)) = stack.pop() {
                if seen[v] {
                    return true;
                }
                seen[v] = true;
                for &w in &adj[v] {
                    if w != parent {
                        stack.push((w, v));
                    }
                }
            }
        }
        false
    }

    proptest! {
        #[test]
        fn kruskal_forest_properties(seed in any::<u64>(), n in 1usize..50, p in 0.0f64..0.5) {
            let g = random_graph(seed, n, p);
            let t = kruskal_spanning_tree(&g);
            prop_assert!(!has_cycle(&t));
            prop_assert_eq!(t.edges().len(), n - g.components());
            prop_assert!(t.edges().iter().all(|e| g.edges().contains(e)));
        }

        #[test]
        fn power_maps_match_repeated_multiplication(seed in any::<u64>(), n in 1usize..8, k in 1usize..6) {
            let a = random_graph(seed, n, 0.4).matrix();
            let basis = power_map_basis(&a, k).unwrap();
            let mut expected = Matrix::identity(n);
            for p in basis.mats() {
                prop_assert_eq!(p, &expected);
                let mut next = Matrix::zeros(n, n);
                for i in 0..n {
                    for j in 0..n {
                        let mut acc = 0.0;
                        for l in 0..n {
                            acc += expected.get(i, l) * a.get(l, j);
                        }
                        next[(i, j)] = acc;
                    }
                }
                expected = next;
            }
        }
    }
}
