use lible_core::autodiff::Tape;
use lible_core::data::generate_synthetic;
use lible_core::model::{lib_loss_nodes, ModelDims, ModelParams, ObjectiveKind, GAP_HEAD, LD_HEAD};
use lible_core::trainer::{grid_search, train_and_evaluate, DEFAULT_GRID};
use lible_core::{binarize, recover, train, Batch, BinarizeStrategy, Checkpoint, Dataset, Error, Matrix, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn synthetic(n: usize, seed: u64) -> (Dataset, Matrix) {
    let mut ds = generate_synthetic(n, 6, 3, seed).unwrap();
    ds.standardize();
    let l = binarize(ds.distributions.as_ref().unwrap(), &BinarizeStrategy::MeanThreshold).unwrap();
    (ds, l)
}

fn small_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        latent_dim: 8,
        hidden_dim: 8,
        epochs,
        learning_rate: 1e-2,
        seed: 3,
        ..TrainConfig::default()
    }
}

#[test]
fn loss_descends() {
    let (ds, l) = synthetic(50, 0);
    let (_, hist) = train(&ds.features, &l, &small_config(200)).unwrap();
    assert_eq!(hist.epochs.len(), 200);
    assert!(hist.aborted.is_none());
    assert!(hist.last().unwrap().total < hist.initial().unwrap().total);
    assert!(hist.epochs.iter().all(|r| r.loss.total.is_finite()));
}

#[test]
fn training_is_deterministic() {
    let (ds, l) = synthetic(30, 1);
    for batch in [Batch::Full, Batch::Size(7)] {
        let cfg = TrainConfig {
            batch,
            ..small_config(20)
        };
        let (a, ha) = train(&ds.features, &l, &cfg).unwrap();
        let (b, hb) = train(&ds.features, &l, &cfg).unwrap();
        assert_eq!(a, b);
        let la: Vec<u64> = ha.epochs.iter().map(|r| r.loss.total.to_bits()).collect();
        let lb: Vec<u64> = hb.epochs.iter().map(|r| r.loss.total.to_bits()).collect();
        assert_eq!(la, lb);
    }
}

#[test]
fn zero_weights_leave_gap_and_ld_heads_untouched() {
    let (ds, l) = synthetic(30, 2);
    let cfg = TrainConfig {
        alpha: 0.0,
        beta: 0.0,
        ..small_config(15)
    };
    let init = ModelParams::init(ObjectiveKind::Lib, cfg.dims(6, 3), cfg.seed).unwrap();
    let (trained, _) = train(&ds.features, &l, &cfg).unwrap();
    let mut moved = false;
    for (name, m) in trained.blocks.iter() {
        let before = init.blocks.get(name).unwrap();
        if name.starts_with(&format!("{GAP_HEAD}.")) || name.starts_with(&format!("{LD_HEAD}.")) {
            assert_eq!(m, before, "{name} changed");
        } else if m != before {
            moved = true;
        }
    }
    assert!(moved);
}

#[test]
fn full_batch_gradient_ignores_instance_order() {
    let (ds, l) = synthetic(12, 3);
    let dims = ModelDims {
        input_dim: 6,
        hidden_dim: 5,
        latent_dim: 4,
        n_labels: 3,
    };
    let params = ModelParams::init(ObjectiveKind::Lib, dims, 4).unwrap();
    let eps = lible_core::model::standard_normal(12, 4, &mut ChaCha8Rng::seed_from_u64(5));
    let perm: Vec<usize> = vec![5, 11, 0, 3, 9, 1, 7, 2, 10, 4, 8, 6];

    let grads = |x: &Matrix, l: &Matrix, e: &Matrix| {
        let mut tape = Tape::new();
        let bound = params.blocks.bind(&mut tape);
        let nodes = lib_loss_nodes(&mut tape, &params, &bound, x, l, std::slice::from_ref(e), 1.0, 0.5).unwrap();
        let g = tape.backward(nodes.total).unwrap();
        bound.gradients(&tape, &g)
    };
    let a = grads(&ds.features, &l, &eps);
    let b = grads(&ds.features.select_rows(&perm), &l.select_rows(&perm), &eps.select_rows(&perm));
    for ((name, ga), (_, gb)) in a.iter().zip(b.iter()) {
        for (u, v) in ga.data().iter().zip(gb.data()) {
            assert!((u - v).abs() <= 1e-12 * u.abs().max(1.0), "{name}: {u} vs {v}");
        }
    }
}

#[test]
fn divergence_aborts_with_history() {
    let (ds, l) = synthetic(20, 4);
    let cfg = TrainConfig {
        learning_rate: 1e300,
        ..small_config(50)
    };
    match train(&ds.features, &l, &cfg) {
        Err(Error::TrainingAborted { epoch, term, history }) => {
            assert!(epoch >= 1 && epoch <= 50);
            assert!(!term.is_empty());
            assert_eq!(history.epochs.len(), epoch - 1);
            assert!(history.epochs.iter().all(|r| r.loss.total.is_finite()));
        }
        other => panic!("expected an abort, got {other:?}"),
    }
}

#[test]
fn invalid_labels_are_rejected() {
    let (ds, mut l) = synthetic(10, 5);
    l.row_mut(3).iter_mut().for_each(|v| *v = 0.0);
    assert!(train(&ds.features, &l, &small_config(2)).is_err());
    let short = l.select_rows(&[0, 1]);
    assert!(train(&ds.features, &short, &small_config(2)).is_err());
}

#[test]
fn gap_ablation_trains_and_recovers() {
    let (ds, l) = synthetic(30, 6);
    let cfg = TrainConfig {
        objective: ObjectiveKind::LibGap,
        ..small_config(30)
    };
    let (params, hist) = train(&ds.features, &l, &cfg).unwrap();
    assert!(params.blocks.names().all(|n| n.starts_with("gap.") || n.starts_with("ld.")));
    assert!(hist.last().unwrap().total < hist.initial().unwrap().total);
    let d = recover(&params, &ds.features).unwrap();
    for row in d.row_iter() {
        assert!(row.iter().all(|&v| v > 0.0));
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn checkpoint_and_history_export() {
    let (ds, l) = synthetic(20, 7);
    let cfg = small_config(5);
    let (params, hist) = train(&ds.features, &l, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("params.ckpt");
    Checkpoint::new(cfg.clone(), params.clone()).save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back.config, cfg);
    assert_eq!(back.params, params);
    assert_eq!(
        recover(&back.params, &ds.features).unwrap(),
        recover(&params, &ds.features).unwrap()
    );

    let mut csv = Vec::new();
    hist.write_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "epoch,total,assignment,gap,kl,seconds");
    assert_eq!(lines.count(), 5);
}

#[test]
fn one_cell_grid_equals_single_run() {
    let (ds, l) = synthetic(30, 8);
    let base = small_config(10);
    let grid = grid_search(&ds, &BinarizeStrategy::MeanThreshold, &[0.1], &[0.01], &base).unwrap();
    assert_eq!(grid.cells.len(), 1);
    assert_eq!(grid.best, Some(0));
    let cfg = TrainConfig {
        alpha: 0.1,
        beta: 0.01,
        ..base
    };
    let (report, _, _) = train_and_evaluate(&ds.features, &l, ds.distributions.as_ref().unwrap(), &cfg).unwrap();
    assert_eq!(grid.cells[0].outcome.as_ref().unwrap(), &report);
}

#[test]
fn two_by_two_grid_is_finite() {
    let (ds, _) = synthetic(30, 9);
    let grid = grid_search(&ds, &BinarizeStrategy::MeanThreshold, &[0.001, 10.0], &[0.001, 10.0], &small_config(10)).unwrap();
    assert_eq!(grid.cells.len(), 4);
    let seeds: Vec<u64> = grid.cells.iter().map(|c| c.seed).collect();
    assert_eq!(seeds, vec![3, 4, 5, 6]);
    assert!(grid.cells.iter().all(|c| c.outcome.as_ref().unwrap().all_finite()));
    assert!(grid.best.is_some());
}

#[test]
fn grid_without_distributions_is_rejected() {
    let (mut ds, l) = synthetic(10, 10);
    ds.logical = Some(l);
    ds.distributions = None;
    assert!(grid_search(&ds, &BinarizeStrategy::MeanThreshold, &[1.0], &[1.0], &small_config(2)).is_err());
}

#[test]
fn full_grid_is_robust_on_a_small_dataset() {
    let mut ds = generate_synthetic(50, 10, 4, 0).unwrap();
    ds.standardize();
    let base = TrainConfig {
        seed: 0,
        ..TrainConfig::default()
    };
    let grid = grid_search(&ds, &BinarizeStrategy::MeanThreshold, &DEFAULT_GRID, &DEFAULT_GRID, &base).unwrap();
    let cheb: Vec<f64> = grid.cells.iter().map(|c| c.outcome.as_ref().unwrap().chebyshev).collect();
    let max = cheb.iter().cloned().fold(f64::MIN, f64::max);
    let min = cheb.iter().cloned().fold(f64::MAX, f64::min);
    assert!(max - min < 0.08, "Chebyshev range {min}..{max}");
}
