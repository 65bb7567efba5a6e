use anyhow::anyhow;
use log::{info, warn};
use serde::Serialize;

use cardiolens::encoder::{train, Checkpoint, TrainConfig, TrainError};
use cardiolens::synth::{split_by_patient, train_examples};

use crate::cli::{Profile, TrainArgs};
use crate::corpus::{load_corpus, load_vocab};
use crate::error::{usage, Classify, CliError, CliResult};
use crate::output::OutputDir;

use super::{csv_finish, csv_row};

pub const BEST_DIR: &str = "checkpoint";
pub const LAST_DIR: &str = "last";

#[derive(Serialize)]
struct Summary {
    n_train: usize,
    n_val: usize,
    steps: usize,
    config: TrainConfig,
    initial_val_mcmrr: f64,
    best_epoch: usize,
    best_val_mcmrr: f64,
    final_loss: Option<f64>,
}

fn config(args: &TrainArgs, seed: u64) -> TrainConfig {
    let base = match args.profile {
        Profile::Desk => TrainConfig::desk(),
        Profile::Paper => TrainConfig::default(),
    };
    TrainConfig {
        lr_max: args.lr_max.unwrap_or(base.lr_max),
        warmup_steps: args.warmup.unwrap_or(base.warmup_steps),
        epochs: args.epochs.unwrap_or(base.epochs),
        batch_size: args.batch_size.unwrap_or(base.batch_size),
        seed,
        d: args.dim.unwrap_or(base.d),
        val_every: args.val_every.unwrap_or(base.val_every),
    }
}

fn classify(e: TrainError) -> CliError {
    match e {
        TrainError::BatchSize(_) | TrainError::ValEvery | TrainError::Schedule(_) => usage(e.to_string()),
        TrainError::TooFewExamples { .. }
        | TrainError::TooFewValidation(_)
        | TrainError::SplitOverlap(_)
        | TrainError::BadExample { .. } => CliError::Input(e.into()),
        TrainError::Encoder(_) | TrainError::Retrieval(_) | TrainError::NonFinite { .. } => CliError::Numeric(e.into()),
    }
}

pub fn run(args: &TrainArgs, seed: u64, out: &mut OutputDir) -> CliResult<()> {
    if !(0.0..1.0).contains(&args.val_fraction) {
        return Err(usage(format!(
            "--val-fraction must be in [0, 1), got {}",
            args.val_fraction
        )));
    }
    let cfg = config(args, seed);
    if !cfg.lr_max.is_finite() || cfg.lr_max < 0.0 {
        return Err(usage(format!(
            "--lr-max must be a finite non-negative number, got {}",
            cfg.lr_max
        )));
    }
    if cfg.lr_max == 0.0 {
        warn!("--lr-max is 0: parameters will not change and the checkpoint is the initialization");
    }
    let vocab = load_vocab(args.vocab.as_deref())?;
    let studies = load_corpus(&args.corpus)?;
    let (tr, va) = split_by_patient(&studies, args.val_fraction, seed);
    let (tr, va) = (train_examples(&tr, &vocab), train_examples(&va, &vocab));
    info!("training on {} studies, validating on {}", tr.len(), va.len());

    let outcome = match train(&tr, &va, vocab.len(), &cfg) {
        Ok(o) => o,
        Err(TrainError::NonFinite { epoch, step, last_good }) => {
            last_good.save(&out.track(BEST_DIR)).input()?;
            out.keep();
            return Err(CliError::Numeric(anyhow!(
                "loss became non-finite at step {step} (epoch {epoch}); kept the checkpoint from epoch {} in {}",
                last_good.epoch,
                out.path(BEST_DIR).display()
            )));
        }
        Err(e) => return Err(classify(e)),
    };

    outcome.best.save(&out.track(BEST_DIR)).input()?;
    let last_val = outcome.history.last().map_or(f64::NAN, |v| v.mcmrr);
    Checkpoint {
        params: outcome.last.clone(),
        epoch: cfg.epochs,
        val_mcmrr: last_val,
    }
    .save(&out.track(LAST_DIR))
    .input()?;

    let mut losses = csv::Writer::from_writer(Vec::new());
    csv_row(&mut losses, &["step".into(), "lr".into(), "loss".into()])?;
    for (i, loss) in outcome.losses.iter().enumerate() {
        let lr = outcome.schedule.lr(i + 1).numeric()?;
        csv_row(&mut losses, &[(i + 1).to_string(), lr.to_string(), loss.to_string()])?;
    }
    out.write("losses.csv", csv_finish(losses)?)?;

    let mut val = csv::Writer::from_writer(Vec::new());
    csv_row(&mut val, &["epoch".into(), "val_mcmrr".into()])?;
    for p in &outcome.history {
        csv_row(&mut val, &[p.epoch.to_string(), p.mcmrr.to_string()])?;
    }
    out.write("validation.csv", csv_finish(val)?)?;

    out.write_json(
        "train.json",
        &Summary {
            n_train: tr.len(),
            n_val: va.len(),
            steps: outcome.losses.len(),
            initial_val_mcmrr: outcome.history.first().map_or(f64::NAN, |v| v.mcmrr),
            best_epoch: outcome.best.epoch,
            best_val_mcmrr: outcome.best.val_mcmrr,
            final_loss: outcome.losses.last().copied(),
            config: cfg,
        },
    )?;
    info!(
        "best validation MCMRR {:.3} at epoch {}",
        outcome.best.val_mcmrr, outcome.best.epoch
    );
    Ok(())
}
