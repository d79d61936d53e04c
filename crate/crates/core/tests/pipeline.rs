use crashrisk::config::RunConfig;
use crashrisk::data::{load_dataset, synth_generate, write_crashes, write_edges, write_features, DEFAULT_SEVERITY_WEIGHTS};
use crashrisk::pipeline::{evaluate, prepare, restore, train};
use crashrisk::train::{split_windows, Checkpoint};

fn short_run() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.train.epochs = 5;
    cfg.train.patience = 5;
    cfg
}

#[test]
fn training_loss_drops_over_five_epochs() {
    let cfg = short_run();
    let mut data = synth_generate(&cfg.synth, cfg.seed).unwrap().dataset;
    let split = prepare(&mut data).unwrap();
    let out = train(&data, &split, &cfg).unwrap();
    assert_eq!(out.history.len(), 5);
    assert!(
        out.history[4].train_loss < out.history[0].train_loss,
        "{:?}",
        out.history
    );
    let best = out
        .history
        .iter()
        .map(|r| r.validation_loss)
        .fold(f64::INFINITY, f64::min);
    assert_eq!(out.best.validation_loss, best);
}

#[test]
fn windows_stay_inside_their_blocks() {
    let cfg = RunConfig::default();
    let data = synth_generate(&cfg.synth, 1).unwrap().dataset;
    let split = crashrisk::data::temporal_split(data.n_slots()).unwrap();
    let (train_ws, val_ws) = split_windows(&split, &cfg.model);
    assert!(train_ws.iter().all(|w| w.inputs().start >= split.train.start && w.targets().end <= split.train.end));
    assert!(val_ws.iter().all(|w| w.targets().start >= split.validation.start && w.targets().end <= split.validation.end));
}

#[test]
fn saved_checkpoint_reproduces_the_evaluation() {
    let cfg = {
        let mut c = short_run();
        c.train.epochs = 2;
        c
    };
    let synth = synth_generate(&cfg.synth, cfg.seed).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write_edges(&dir.join("edges.csv"), &synth.dataset.graph).unwrap();
    write_crashes(&dir.join("crashes.csv"), &synth.dataset.risk).unwrap();
    write_features(&dir.join("features.csv"), &synth.dataset.features).unwrap();

    let mut data = load_dataset(dir, DEFAULT_SEVERITY_WEIGHTS).unwrap();
    let split = prepare(&mut data).unwrap();
    let out = train(&data, &split, &cfg).unwrap();
    let path = dir.join("checkpoint.json");
    out.best.save(&path).unwrap();

    let mut fresh = load_dataset(dir, DEFAULT_SEVERITY_WEIGHTS).unwrap();
    let (model, store) = restore(&Checkpoint::load(&path).unwrap(), &mut fresh).unwrap();
    let (best_model, best_store) = out.best.restore().unwrap();
    let a = evaluate(&best_model, &best_store, &data, &split, &cfg).unwrap();
    let b = evaluate(&model, &store, &fresh, &split, &cfg).unwrap();
    assert_eq!(a.report.to_json(), b.report.to_json());

    let m = &b.report.overall;
    assert!((0.0..=1.0).contains(&m.picp) && (0.0..=1.0).contains(&m.zr));
    assert!(m.rmse >= m.mae && m.mpiw >= 0.0);
    assert!(m.acc_hr.is_some() && m.mape.is_some());
    assert_eq!(b.report.per_step.len(), cfg.model.horizon);
}
