//! Acceptance harness: one PASS/FAIL line per criterion.
//!
//! Exits 0 so the suite stays runnable under `cargo test`; set
//! `ACCEPTANCE_STRICT=1` to turn any failure into a nonzero exit.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crashrisk::config::RunConfig;
use crashrisk::data::{synth_generate, Dataset, SynthConfig, Window};
use crashrisk::distcheck::{
    moment_settings, moments, normalization, normalization_settings, oracle_sweep, SWEEP_MU_PHI, SWEEP_RHO, SWEEP_Y,
};
use crashrisk::encoder::gat_attention;
use crashrisk::loss::{nll_positive_lower_bound, total_loss, LossConfig};
use crashrisk::metrics::{acc_hit_rate, point_metrics, zero_rate};
use crashrisk::model::{Model, ModelConfig, WindowBatch};
use crashrisk::pipeline::{synthetic_end_to_end, EndToEnd};
use crashrisk::tensor::{grad_check, Tape, Tensor, TensorError};
use crashrisk::tweedie::{zitd_log_density, SeriesConfig, ZitdParams};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    match oracle_sweep(&SeriesConfig::default()) {
        Ok(s) => {
            let secs = start.elapsed().as_secs_f64();
            outcome(
                s.max_gap < 1e-6 && secs < 10.0,
                format!("max |series - mixture| {:.2e} over {} points in {secs:.2}s", s.max_gap, s.points),
            )
        }
        Err(e) => outcome(false, e.to_string()),
    }
}

fn normalization_check() -> Outcome {
    let cfg = SeriesConfig::default();
    let mut worst = 0.0f64;
    let mut failed = Vec::new();
    for (k, z) in normalization_settings().iter().enumerate() {
        match normalization(z, 1_000_000, 1000 + k as u64, &cfg) {
            Ok(r) => {
                let dev = (r.total_mass - 1.0).abs();
                worst = worst.max(dev);
                if dev > 1e-3 {
                    failed.push(k);
                }
            }
            Err(e) => return outcome(false, format!("setting {k}: {e}")),
        }
    }
    outcome(
        failed.is_empty(),
        format!("12 settings, max |mass - 1| {worst:.2e}, failing {failed:?}"),
    )
}

fn moment_check() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for (k, z) in moment_settings().iter().enumerate() {
        let r = moments(z, 100_000, 2000 + k as u64);
        ok &= r.passed();
        lines.push(format!(
            "pi={} zero {:.4}/{:.4} mean {:.4}/{:.4}{}",
            z.pi,
            r.zero_fraction,
            r.zero_mass,
            r.mean,
            r.expected_mean,
            if z.pi == 0.0 {
                format!(" var {:.4}/{:.4}", r.variance, r.expected_variance)
            } else {
                String::new()
            }
        ));
    }
    outcome(ok, lines.join("; "))
}

fn lower_bound_check() -> Outcome {
    let cfg = SeriesConfig::default();
    let grid = [0.5, 1.0, 2.0];
    let mut min_margin = f64::INFINITY;
    let mut cells = 0;
    for &y in &grid {
        for &mu in &grid {
            for &phi in &grid {
                for &rho in &[1.2, 1.5, 1.8] {
                    for &pi in &[0.0, 0.5] {
                        let z = ZitdParams::new(pi, mu, phi, rho).expect("valid grid point");
                        let exact = match zitd_log_density(y, &z, &cfg) {
                            Ok(v) => -v,
                            Err(e) => return outcome(false, e.to_string()),
                        };
                        min_margin = min_margin.min(nll_positive_lower_bound(y, &z) - exact);
                        cells += 1;
                    }
                }
            }
        }
    }
    let anchor = nll_positive_lower_bound(1.0, &ZitdParams::new(0.0, 1.0, 1.0, 1.5).expect("valid"));

    // Reported only: the same comparison over the wider y range of the oracle sweep.
    let mut wide = (0, 0);
    for &y in &SWEEP_Y {
        for &mu in &SWEEP_MU_PHI {
            for &phi in &SWEEP_MU_PHI {
                for &rho in &SWEEP_RHO {
                    let z = ZitdParams::new(0.0, mu, phi, rho).expect("valid grid point");
                    if let Ok(v) = zitd_log_density(y, &z, &cfg) {
                        wide.0 += usize::from(nll_positive_lower_bound(y, &z) < -v - 1e-9);
                        wide.1 += 1;
                    }
                }
            }
        }
    }
    outcome(
        min_margin >= -1e-9 && (anchor - 8.693147).abs() < 1e-6,
        format!(
            "min(bound - exact) {min_margin:.4e} over {cells} cells; anchor {anchor:.7}; \
             for reference the bound fails on {}/{} cells with y from 0.1 to 10",
            wide.0, wide.1
        ),
    )
}

fn toy_data(seed: u64) -> Dataset {
    let cfg = SynthConfig {
        n_roads: 8,
        n_slots: 7,
        feature_dim: 3,
        extra_edge_prob: 0.3,
        pi: 0.3,
        target_zero_fraction: 0.5,
        ..SynthConfig::default()
    };
    synth_generate(&cfg, seed).expect("toy data").dataset
}

fn toy_model() -> ModelConfig {
    ModelConfig {
        history: 5,
        horizon: 2,
        hidden: 4,
        spatial_hidden: 3,
        heads: 2,
        ..ModelConfig::default()
    }
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let data = toy_data(3);
    let cfg = toy_model();
    let batch = WindowBatch::new(&data, Window { start: 0, history: 5, horizon: 2 }).expect("window");
    let positives = batch.targets.data().iter().filter(|&&y| y > 0.0).count();
    let mask = data.graph.attention_mask();
    let (model, mut store) = Model::init(&cfg, data.features.dim(), 11);
    let loss_cfg = LossConfig {
        eta: 0.01,
        ..LossConfig::default()
    };
    let report = grad_check::<_, TensorError>(
        |tape, s| {
            let vars = model.forward::<ChaCha8Rng>(tape, s, &batch, &mask, None)?;
            Ok(total_loss(tape, s, &vars, &batch.targets, &loss_cfg)?.0)
        },
        &mut store,
        1e-6,
        1e-4,
    );
    let secs = start.elapsed().as_secs_f64();
    match report {
        Ok(r) => outcome(
            r.passed() && secs < 30.0,
            format!(
                "{} entries, max relative error {:.2e}, {positives}/16 positive targets, {secs:.2}s",
                r.entries_checked, r.max_relative_error
            ),
        ),
        Err(e) => outcome(false, e.to_string()),
    }
}

fn structural_invariants() -> Outcome {
    let eps = ModelConfig::default().epsilon;
    let data = toy_data(5);
    let cfg = toy_model();
    let mask = data.graph.attention_mask();
    let batch = WindowBatch::new(&data, Window { start: 0, history: 5, horizon: 2 }).expect("window");
    let (model, mut store) = Model::init(&cfg, data.features.dim(), 1);
    let mut rng = ChaCha8Rng::seed_from_u64(99);

    let mut range_violations = 0usize;
    for trial in 0..10_000 {
        let scale = [0.1, 1.0, 5.0][trial % 3];
        for p in store.iter_mut() {
            for v in p.tensor.data_mut() {
                *v = rng.random_range(-scale..scale);
            }
        }
        let field = match model.predict(&store, &batch, &mask) {
            Ok(f) => f,
            Err(e) => return outcome(false, format!("forward {trial}: {e}")),
        };
        for k in 0..field.len() {
            let ok = (0.0..=1.0).contains(&field.pi[k])
                && field.mu[k] >= 0.0
                && field.phi[k] >= eps
                && field.rho[k] > 1.0
                && field.rho[k] <= 2.0 + eps;
            range_violations += usize::from(!ok);
        }
    }

    let mut worst_row = 0.0f64;
    for _ in 0..100 {
        let mut tape = Tape::new();
        let z: Vec<f64> = (0..8 * 4).map(|_| rng.random_range(-3.0..3.0)).collect();
        let z = tape.constant(Tensor::new(vec![8, 4], z).expect("shape")).expect("constant");
        for head in &model.encoder.gat1.heads {
            let (alpha, _) = gat_attention(&mut tape, &store, head, z, &mask, 0.2).expect("attention");
            let a = tape.value(alpha);
            for i in 0..8 {
                let row: f64 = (0..8).map(|j| a.data()[i * 8 + j]).sum();
                worst_row = worst_row.max((row - 1.0).abs());
            }
        }
    }

    let (model, store) = Model::init(&cfg, data.features.dim(), 21);
    let mut perm: Vec<usize> = (0..8).collect();
    use rand::seq::SliceRandom;
    perm.shuffle(&mut rng);
    let permuted = Dataset::new(
        data.graph.relabel(&perm).expect("relabel"),
        data.features.relabel(&perm),
        data.risk.relabel(&perm),
    )
    .expect("dataset");
    let pb = WindowBatch::new(&permuted, Window { start: 0, history: 5, horizon: 2 }).expect("window");
    let a = model.predict(&store, &batch, &mask).expect("forward");
    let b = model.predict(&store, &pb, &permuted.graph.attention_mask()).expect("forward");
    let mut equiv_gap = 0.0f64;
    for i in 0..8 {
        for j in 0..2 {
            let (ka, kb) = (i * 2 + j, perm[i] * 2 + j);
            for (x, y) in [(&a.pi, &b.pi), (&a.mu, &b.mu), (&a.phi, &b.phi), (&a.rho, &b.rho)] {
                equiv_gap = equiv_gap.max((x[ka] - y[kb]).abs());
            }
        }
    }

    outcome(
        range_violations == 0 && worst_row <= 1e-6 && equiv_gap < 1e-9,
        format!(
            "{range_violations} range violations in 10000 forwards; max |row sum - 1| {worst_row:.1e}; \
             permutation gap {equiv_gap:.1e}"
        ),
    )
}

fn end_to_end(run: &Result<(EndToEnd, f64), String>) -> Outcome {
    let (e2e, secs) = match run {
        Ok(v) => v,
        Err(e) => return outcome(false, e.clone()),
    };
    let m = &e2e.evaluation.report.overall;
    let ha = &e2e.evaluation.baseline;
    let hr = m.acc_hr.unwrap_or(f64::NAN);
    let checks = [
        ("PICP >= 0.85", m.picp >= 0.85),
        ("MAE <= HA", m.mae <= ha.mae),
        ("AccHR@20 >= 0.40", hr >= 0.40),
        ("runtime < 300s", *secs < 300.0),
    ];
    let failing: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    outcome(
        failing.is_empty(),
        format!(
            "zeros {:.3}; PICP {:.4}; MAE {:.4} vs HA {:.4}; AccHR@20 {hr:.4} (HA {:.4}); {secs:.1}s; failing {failing:?}",
            e2e.zero_fraction,
            m.picp,
            m.mae,
            ha.mae,
            ha.acc_hr.unwrap_or(f64::NAN)
        ),
    )
}

fn metric_anchors() -> Outcome {
    let mut bad = Vec::new();
    if point_metrics(&[0.0, 2.0], &[1.0, 1.0]) != (1.0, Some(0.5), 1.0) {
        bad.push("point");
    }
    if zero_rate(&[0.0, 0.0, 1.0], &[0.9, 0.9, 0.9], 0.5) != 2.0 / 3.0 {
        bad.push("zero rate");
    }
    let pred = vec![vec![5.0, 4.0, 3.0, 2.0, 1.0]];
    if acc_hit_rate(&[vec![1.0, 0.0, 0.0, 0.0, 0.0]], &pred, 0.2) != Some(1.0) {
        bad.push("hit top");
    }
    if acc_hit_rate(&[vec![0.0, 0.0, 0.0, 0.0, 1.0]], &pred, 0.2) != Some(0.0) {
        bad.push("hit bottom");
    }
    if acc_hit_rate(&[vec![0.0, 2.0, 0.0, 1.0, 0.0]], &pred, 1.0) != Some(1.0) {
        bad.push("hit full");
    }
    outcome(bad.is_empty(), format!("mismatches {bad:?}"))
}

fn fingerprint(e: &EndToEnd) -> (String, String) {
    (
        serde_json::to_string(&e.outcome.history).expect("history serialises"),
        e.evaluation.report.to_json(),
    )
}

fn determinism(first: &Result<(EndToEnd, f64), String>, second: &Result<(EndToEnd, f64), String>) -> Outcome {
    match (first, second) {
        (Ok((a, _)), Ok((b, _))) => {
            let (ha, ra) = fingerprint(a);
            let (hb, rb) = fingerprint(b);
            outcome(
                ha == hb && ra == rb,
                format!(
                    "loss history identical: {}; report identical: {} ({} epochs)",
                    ha == hb,
                    ra == rb,
                    a.outcome.history.len()
                ),
            )
        }
        (Err(e), _) | (_, Err(e)) => outcome(false, e.clone()),
    }
}

fn run_e2e() -> Result<(EndToEnd, f64), String> {
    let start = Instant::now();
    let out = synthetic_end_to_end(&RunConfig::default()).map_err(|e| e.to_string())?;
    Ok((out, start.elapsed().as_secs_f64()))
}

fn main() {
    let mut results: Vec<(&str, Outcome)> = vec![
        ("distribution oracle equivalence", oracle_equivalence()),
        ("normalization", normalization_check()),
        ("monte carlo moments", moment_check()),
        ("lower-bound property", lower_bound_check()),
        ("gradient correctness", gradient_check()),
        ("structural invariants", structural_invariants()),
    ];
    let first = run_e2e();
    results.push(("synthetic end-to-end", end_to_end(&first)));
    results.push(("metric unit anchors", metric_anchors()));
    let second = run_e2e();
    results.push(("determinism", determinism(&first, &second)));

    let mut failures = 0;
    for (name, o) in &results {
        println!("{} {name}: {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
        failures += usize::from(!o.passed);
    }
    println!("{}/{} criteria passed", results.len() - failures, results.len());
    if failures > 0 && std::env::var_os("ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}
