use anyhow::anyhow;
use log::info;

use cardiolens::metrics::{auc_ci, mae_ci};
use cardiolens::tasks::{TaskDef, TaskType};
use cardiolens::tokenizer::DEFAULT_CONTEXT_LENGTH;
use cardiolens::zeroshot::{zeroshot_classify, zeroshot_regress_video, EnsembleMode};
use cardiolens::{normalize_text, Embedding, EvalReport};

use crate::cli::{Ensemble, ZeroshotArgs};
use crate::corpus::{check_compatible, load_checkpoint, load_corpus, load_vocab, read_text};
use crate::error::{usage, Classify, CliError, CliResult};
use crate::output::OutputDir;

use super::{bootstrap, csv_finish, csv_row};

fn load_task(args: &ZeroshotArgs) -> CliResult<TaskDef> {
    match (&args.task, &args.task_file) {
        (Some(name), None) => TaskDef::builtin(name).map_err(|e| usage(e.to_string())),
        (None, Some(path)) => {
            TaskDef::from_json(&read_text(path)?).input_with(|| format!("loading task {}", path.display()))
        }
        _ => Err(usage("give exactly one of --task and --task-file")),
    }
}

pub fn run(args: &ZeroshotArgs, seed: u64, out: &mut OutputDir) -> CliResult<()> {
    if !(args.top_fraction > 0.0 && args.top_fraction <= 1.0) {
        return Err(usage(format!(
            "--top-fraction must be in (0, 1], got {}",
            args.top_fraction
        )));
    }
    if args.frames == 0 || args.classify_frames == 0 {
        return Err(usage("--frames and --classify-frames must be at least 1"));
    }
    let task = load_task(args)?;
    let vocab = load_vocab(args.vocab.as_deref())?;
    let studies = load_corpus(&args.corpus)?;
    let ck = load_checkpoint(&args.checkpoint)?;
    check_compatible(&ck, &studies, &vocab)?;
    let params = &ck.params;

    let truths = studies
        .iter()
        .map(|s| s.latent.target(&task.task))
        .collect::<Option<Vec<f64>>>()
        .ok_or_else(|| CliError::Input(anyhow!("the corpus has no ground truth for task {:?}", task.task)))?;
    let encode_text = |text: &str| -> CliResult<Embedding> {
        let seq = vocab
            .tokenize_template(&normalize_text(text), DEFAULT_CONTEXT_LENGTH)
            .input()?;
        if seq.unk_count > 0 {
            return Err(CliError::Input(anyhow!("prompt {text:?} does not match any template")));
        }
        params.encode_text(&seq).numeric()
    };
    let used = args.frames.max(args.classify_frames);
    let frames: Vec<Vec<Embedding>> = studies
        .iter()
        .map(|s| {
            s.frames
                .iter()
                .take(used)
                .map(|f| params.encode_image(f))
                .collect::<Result<_, _>>()
        })
        .collect::<Result<_, _>>()
        .numeric()?;
    let groups = args
        .by_patient
        .then(|| studies.iter().map(|s| s.patient_id.clone()).collect());
    let boot = bootstrap(args.n_boot, seed, groups);

    let mut table = csv::Writer::from_writer(Vec::new());
    let report = match task.kind {
        TaskType::Regression => {
            let grid = task.grid().map_err(|e| CliError::Input(e.into()))?.embed(encode_text)?;
            let mode = match args.ensemble {
                Ensemble::Pooled => EnsembleMode::Pooled,
                Ensemble::Averaged => EnsembleMode::Averaged,
            };
            csv_row(
                &mut table,
                &[
                    "study_id",
                    "patient_id",
                    "truth",
                    "prediction",
                    "frame_min",
                    "frame_max",
                ]
                .map(String::from),
            )?;
            let mut preds = Vec::with_capacity(studies.len());
            for (s, (f, truth)) in studies.iter().zip(frames.iter().zip(&truths)) {
                let p = zeroshot_regress_video(f, &grid, args.top_fraction, mode, args.frames).numeric()?;
                csv_row(
                    &mut table,
                    &[
                        s.study_id.clone(),
                        s.patient_id.clone(),
                        truth.to_string(),
                        p.value.to_string(),
                        p.frame_min().to_string(),
                        p.frame_max().to_string(),
                    ],
                )?;
                preds.push(p.value);
            }
            let est = mae_ci(&preds, &truths, &boot).numeric()?;
            info!(
                "{}: MAE {:.3} [{:.3}, {:.3}]",
                task.task, est.value, est.ci_low, est.ci_high
            );
            EvalReport::for_metric(&task.task, "mae", preds.len(), &est)
        }
        TaskType::Binary => {
            let prompts = task
                .phrasings
                .iter()
                .map(|p| encode_text(p))
                .collect::<CliResult<Vec<_>>>()?;
            csv_row(
                &mut table,
                &["study_id", "patient_id", "label", "score"].map(String::from),
            )?;
            let mut scores = Vec::with_capacity(studies.len());
            let labels: Vec<bool> = truths.iter().map(|&t| t > 0.5).collect();
            for (s, (f, label)) in studies.iter().zip(frames.iter().zip(&labels)) {
                let score = zeroshot_classify(f, &prompts, args.classify_frames).numeric()?;
                csv_row(
                    &mut table,
                    &[
                        s.study_id.clone(),
                        s.patient_id.clone(),
                        u8::from(*label).to_string(),
                        score.to_string(),
                    ],
                )?;
                scores.push(score);
            }
            let est = auc_ci(&scores, &labels, &boot).numeric()?;
            info!(
                "{}: AUC {:.3} [{:.3}, {:.3}]",
                task.task, est.value, est.ci_low, est.ci_high
            );
            EvalReport::for_metric(&task.task, "auc", scores.len(), &est)
        }
    };
    out.write("predictions.csv", csv_finish(table)?)?;
    out.write_json("report.json", &report)?;
    Ok(())
}
