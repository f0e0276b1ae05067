use ctxgcn::baselines::OperatorMode;
use ctxgcn::data::{load_sequences, save_sequences, synthesize_task, SynthConfig};
use ctxgcn::train::{
    decode_artifact, encode_artifact, evaluate, train, AblationGrid, SkeletonChoice, TrainConfig,
};
use ctxgcn::ConstraintKind;

fn two_class_task() -> ctxgcn::data::SyntheticTask {
    synthesize_task(&SynthConfig {
        n_classes: 2,
        samples_per_class: 40,
        ..SynthConfig::default()
    })
    .unwrap()
}

#[test]
fn ground_truth_operators_separate_the_training_set() {
    let task = two_class_task();
    let cfg = TrainConfig {
        mode: OperatorMode::Hpm,
        constraint: ConstraintKind::None,
        k: 2,
        m: 4,
        channels: 8,
        lr0: 0.05,
        epochs: 200,
        differential: true,
        seed: 2,
        ..TrainConfig::default()
    };
    let out = train(&cfg, &task.hidden, &task.train, None, &mut |_| Ok(())).unwrap();
    let last = out.metrics.last().unwrap();
    assert_eq!(last.train_acc, 1.0, "{last:?}");
}

#[test]
fn synthetic_data_round_trips_through_files() {
    let task = two_class_task();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("train.jsonl");
    save_sequences(&path, &task.train).unwrap();
    let back = load_sequences(&path, None).unwrap();
    assert_eq!(back, task.train);
    assert_eq!(synthesize_task(&SynthConfig { n_classes: 2, samples_per_class: 40, ..SynthConfig::default() }).unwrap(), task);
}

#[test]
fn artifact_evaluates_like_the_final_epoch() {
    let task = two_class_task();
    let cfg = TrainConfig {
        k: 2,
        m: 4,
        channels: 4,
        epochs: 5,
        skeleton: SkeletonChoice::Chain,
        seed: 9,
        ..TrainConfig::default()
    };
    let out = train(&cfg, &task.skeleton, &task.train, Some(&task.test), &mut |_| Ok(())).unwrap();
    let art = out.artifact(&cfg, &task.train.vocab);
    let back = decode_artifact(&encode_artifact(&art).unwrap()).unwrap();
    let (_, acc) = evaluate(&back, &task.test).unwrap();
    assert_eq!(Some(acc), out.metrics.last().unwrap().test_acc);
}

#[test]
fn single_cell_grid() {
    let task = two_class_task();
    let base = TrainConfig { m: 4, channels: 4, epochs: 2, ..TrainConfig::default() };
    let grid = AblationGrid {
        modes: vec![OperatorMode::Lpm],
        kinds: vec![ConstraintKind::SymOrth],
        ks: vec![2],
    };
    let table = ctxgcn::train::run_ablation_grid(&base, &grid, &task.skeleton, &task.train, &task.test).unwrap();
    assert_eq!(table.cells.len(), 1);
    assert!(table.cells[0].outcome.test_acc().is_some(), "{:?}", table.cells[0]);
}
