//! Command-line entry points.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{Overrides, RunConfig};
use crate::data::{
    load_dataset, synth_generate, write_crashes, write_edges, write_features, write_true_params, Dataset,
    Window, CRASHES_FILE, EDGES_FILE, FEATURES_FILE, TRUE_PARAMS_FILE,
};
use crate::pipeline::{evaluate, predict_windows, prepare, restore, train};
use crate::train::Checkpoint;
use crate::{Error, Result};

pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.toml";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const LOSS_HISTORY_FILE: &str = "loss_history.csv";
pub const METRICS_JSON_FILE: &str = "metrics.json";
pub const METRICS_CSV_FILE: &str = "metrics.csv";
pub const BASELINE_FILE: &str = "baseline.json";
pub const PREDICTIONS_FILE: &str = "predictions.csv";

#[derive(Debug, Parser)]
#[command(name = "crashrisk", version, about = "Zero-inflated Tweedie graph forecasting of road crash risk")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic dataset with known parameters to the data directory.
    SynthGen(Common),
    /// Train on the data directory and write a checkpoint and loss history.
    Train(Common),
    /// Score a checkpoint on the test block.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Forecast the horizon following the last observed slot.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Check densities, normalisation and sampling moments.
    DistCheck(Common),
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        RunConfig::resolve(
            self.config.as_deref(),
            &Overrides {
                seed: self.seed,
                epochs: self.epochs,
                out_dir: self.out_dir.clone(),
                data_dir: self.data_dir.clone(),
            },
        )
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn write_resolved(cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(&cfg.out_dir)?;
    std::fs::write(cfg.out_dir.join(RESOLVED_CONFIG_FILE), cfg.to_toml())?;
    Ok(())
}

fn load(cfg: &RunConfig) -> Result<Dataset> {
    Ok(load_dataset(&cfg.data.dir, cfg.data.severity_weights)?)
}

fn load_with_checkpoint(cfg: &RunConfig, path: &Path) -> Result<(Dataset, Checkpoint)> {
    let checkpoint = Checkpoint::load(path)?;
    let data = load(cfg)?;
    if checkpoint.model != cfg.model {
        log::warn!("model settings differ from the checkpoint; using the checkpoint's");
    }
    Ok((data, checkpoint))
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::SynthGen(common) => {
            let cfg = common.resolve()?;
            let out = synth_generate(&cfg.synth, cfg.seed)?;
            let dir = &cfg.data.dir;
            std::fs::create_dir_all(dir)?;
            write_edges(&dir.join(EDGES_FILE), &out.dataset.graph)?;
            write_crashes(&dir.join(CRASHES_FILE), &out.dataset.risk)?;
            write_features(&dir.join(FEATURES_FILE), &out.dataset.features)?;
            write_true_params(&dir.join(TRUE_PARAMS_FILE), &out.truth)?;
            write_resolved(&cfg)?;
            println!(
                "wrote {} roads x {} slots to {} (zero fraction {:.4}, expected {:.4})",
                cfg.synth.n_roads,
                cfg.synth.n_slots,
                dir.display(),
                out.empirical_zero_fraction,
                out.truth.mean_zero_mass()
            );
        }
        Command::Train(common) => {
            let cfg = common.resolve()?;
            let mut data = load(&cfg)?;
            let split = prepare(&mut data)?;
            let outcome = train(&data, &split, &cfg)?;
            write_resolved(&cfg)?;
            outcome.best.save(&cfg.out_dir.join(CHECKPOINT_FILE))?;
            let mut hist = String::from("epoch,train_loss,validation_loss\n");
            for r in &outcome.history {
                hist.push_str(&format!("{},{},{}\n", r.epoch, r.train_loss, r.validation_loss));
            }
            std::fs::write(cfg.out_dir.join(LOSS_HISTORY_FILE), hist)?;
            println!(
                "trained {} epochs; best validation loss {:.6} at epoch {}",
                outcome.history.len(),
                outcome.best.validation_loss,
                outcome.best.epoch
            );
            if let Some(reason) = outcome.aborted {
                return Err(Error::Diverged {
                    epoch: outcome.history.len() + 1,
                    reason: format!("{reason}; best checkpoint kept"),
                });
            }
        }
        Command::Evaluate { common, checkpoint } => {
            let cfg = common.resolve()?;
            let (mut data, ck) = load_with_checkpoint(&cfg, &checkpoint)?;
            let split = crate::data::temporal_split(data.n_slots())?;
            let (model, store) = restore(&ck, &mut data)?;
            let eval = evaluate(&model, &store, &data, &split, &cfg)?;
            write_resolved(&cfg)?;
            std::fs::write(cfg.out_dir.join(METRICS_JSON_FILE), eval.report.to_json())?;
            std::fs::write(cfg.out_dir.join(METRICS_CSV_FILE), eval.report.to_csv())?;
            std::fs::write(
                cfg.out_dir.join(BASELINE_FILE),
                serde_json::to_string_pretty(&eval.baseline)?,
            )?;
            eval.predictions.write_csv(&cfg.out_dir.join(PREDICTIONS_FILE))?;
            let m = &eval.report.overall;
            println!(
                "test cells {}: MAE {:.5} (HA {:.5}) RMSE {:.5} MPIW {:.5} PICP {:.4} ZR {:.4} AccHR {}",
                eval.report.cells,
                m.mae,
                eval.baseline.mae,
                m.rmse,
                m.mpiw,
                m.picp,
                m.zr,
                m.acc_hr.map_or("NA".into(), |v| format!("{v:.4}"))
            );
        }
        Command::Predict { common, checkpoint } => {
            let cfg = common.resolve()?;
            let (mut data, ck) = load_with_checkpoint(&cfg, &checkpoint)?;
            let (model, store) = restore(&ck, &mut data)?;
            let history = model.config.history;
            if data.n_slots() < history {
                return Err(Error::Config(format!(
                    "need {history} observed slots, data has {}",
                    data.n_slots()
                )));
            }
            let window = Window {
                start: data.n_slots() - history,
                history,
                horizon: model.config.horizon,
            };
            let set = predict_windows(&model, &store, &data, &[window], &cfg, false)?;
            write_resolved(&cfg)?;
            set.write_csv(&cfg.out_dir.join(PREDICTIONS_FILE))?;
            println!(
                "forecast slots {:?} for {} roads",
                window.targets(),
                data.graph.n_roads()
            );
        }
        Command::DistCheck(common) => {
            let cfg = common.resolve()?;
            let lines = crate::distcheck::run_all(&cfg.series, cfg.seed)?;
            let mut out = std::io::stdout().lock();
            for l in &lines {
                writeln!(out, "{} {}: {}", if l.passed { "PASS" } else { "FAIL" }, l.name, l.detail)?;
            }
            let ok = lines.iter().all(|l| l.passed);
            writeln!(out, "{}", if ok { "PASS" } else { "FAIL" })?;
            if !ok {
                return Err(Error::Check("distribution checks failed".into()));
            }
        }
    }
    Ok(())
}
