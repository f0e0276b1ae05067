use ctxgcn::data::{macro_accuracy, temporal_chunk, SkeletonSequence};
use ctxgcn::gcn::gcn_forward;
use ctxgcn::train::TrainConfig;
use ctxgcn::{Activation, AdjacencyBasis, ConstraintKind, ConvFilterBank, Matrix, NodeSignal};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn frames(max_t: usize, joints: usize) -> impl Strategy<Value = Vec<Vec<[f64; 3]>>> {
    prop::collection::vec(prop::collection::vec(prop::array::uniform3(-5.0..5.0f64), joints), 1..=max_t)
}

proptest! {
    #[test]
    fn chunk_shape_and_duplication(f in frames(30, 3), m in 1usize..12) {
        let seq = SkeletonSequence::new(0, f.clone()).unwrap();
        let u = temporal_chunk(&seq, m).unwrap();
        prop_assert_eq!(u.dim(), 3 * m);
        prop_assert_eq!(u.nodes(), 3);
        let doubled = SkeletonSequence::new(0, f.iter().flat_map(|x| [x.clone(), x.clone()]).collect()).unwrap();
        let v = temporal_chunk(&doubled, m).unwrap();
        prop_assert!(u.matrix().sub(v.matrix()).unwrap().max_abs() <= 1e-12);
    }

    #[test]
    fn chunk_means_average_to_the_sequence_mean(f in frames(30, 2), m in 1usize..12) {
        let seq = SkeletonSequence::new(0, f.clone()).unwrap();
        let u = temporal_chunk(&seq, m).unwrap();
        for j in 0..2 {
            for d in 0..3 {
                let chunks: f64 = (0..m).map(|c| u.matrix().get(3 * c + d, j)).sum::<f64>() / m as f64;
                let direct: f64 = f.iter().map(|fr| fr[j][d]).sum::<f64>() / f.len() as f64;
                prop_assert!((chunks - direct).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn relu_layer_is_nonnegative(seed in any::<u64>(), n in 2usize..7, k in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let filters = ConvFilterBank::random(k, 4, 3, 2, &mut rng);
        let mats = (0..k).map(|i| Matrix::from_fn(n, n, |a, b| ((a * 7 + b * 3 + i) % 5) as f64 - 2.0)).collect();
        let adj = AdjacencyBasis::new(mats, ConstraintKind::None).unwrap();
        let u = NodeSignal::new(Matrix::from_fn(4, n, |a, b| (a as f64 - b as f64) * 0.3));
        let out = gcn_forward(&adj, &u, &filters, Activation::Relu, &vec![false; k]).unwrap();
        prop_assert!(out.h.as_slice().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn macro_accuracy_is_a_fraction(pairs in prop::collection::vec((0usize..4, 0usize..4), 1..40)) {
        let (pred, labels): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        let acc = macro_accuracy(&pred, &labels).unwrap();
        prop_assert!((0.0..=1.0).contains(&acc));
    }

    #[test]
    fn config_text_round_trips(epochs in 1usize..5000, k in 1usize..9, lr in 1e-6..0.5f64, seed in any::<u64>()) {
        let cfg = TrainConfig { epochs, k, lr0: lr, seed, constraint: ConstraintKind::Sym, ..TrainConfig::default() };
        prop_assert_eq!(TrainConfig::from_kv(&cfg.to_kv()).unwrap(), cfg);
    }
}
