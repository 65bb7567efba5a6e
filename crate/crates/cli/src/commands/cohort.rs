use anyhow::anyhow;
use log::{info, warn};

use cardiolens::cohort::{
    pre_post_auc, procedure_timelines, relation_summary, same_patient_auc, sample_pairs, write_timeline_csv,
    CohortError,
};
use cardiolens::EvalReport;

use crate::cli::CohortArgs;
use crate::corpus::{load_source, read_events, EVENTS_FILE};
use crate::error::{usage, CliError, CliResult};
use crate::output::OutputDir;

use super::{bootstrap, csv_finish, csv_row};

fn classify(e: CohortError) -> CliError {
    match e {
        CohortError::Metric(_) => CliError::Numeric(e.into()),
        _ => CliError::Input(e.into()),
    }
}

pub fn run(args: &CohortArgs, seed: u64, out: &mut OutputDir) -> CliResult<()> {
    if args.pairs == 0 {
        return Err(usage("--pairs must be at least 1"));
    }
    if args.window < 0 {
        return Err(usage("--window must be non-negative"));
    }
    let (store, _) = load_source(&args.source)?;
    let boot = bootstrap(args.n_boot, seed, None);

    let pairs = sample_pairs(&store, args.pairs, seed).map_err(classify)?;
    let mut table = csv::Writer::from_writer(Vec::new());
    csv_row(
        &mut table,
        &["relation", "id_a", "id_b", "patient_a", "patient_b", "similarity"].map(String::from),
    )?;
    for p in &pairs {
        csv_row(
            &mut table,
            &[
                p.relation.as_str().to_string(),
                p.id_a.clone(),
                p.id_b.clone(),
                p.patient_a.clone(),
                p.patient_b.clone(),
                p.similarity.to_string(),
            ],
        )?;
    }
    out.write("pairs.csv", csv_finish(table)?)?;

    let summary: Vec<EvalReport> = relation_summary(&pairs, &boot)
        .map_err(classify)?
        .iter()
        .map(|r| EvalReport::for_metric(r.relation.as_str(), "mean_similarity", r.n, &r.mean))
        .collect();
    out.write_json("relations.json", &summary)?;

    let mut auc_reports = Vec::new();
    for (task, cross_study_only) in [("same_patient", false), ("same_patient_cross_study", true)] {
        let auc = same_patient_auc(&pairs, cross_study_only, &boot).map_err(classify)?;
        info!("{task}: AUC {:.3} over {} pairs", auc.estimate.value, auc.n);
        auc_reports.push(EvalReport::for_metric(task, "auc", auc.n, &auc.estimate));
    }
    out.write_json("same_patient_auc.json", &auc_reports)?;

    let events_path = args.events.clone().or_else(|| {
        args.source
            .corpus
            .as_ref()
            .map(|c| c.join(EVENTS_FILE))
            .filter(|p| p.exists())
    });
    let Some(events_path) = events_path else {
        return Ok(());
    };
    let events = read_events(&events_path)?;
    let mut timelines = Vec::new();
    for (result, (patient, _)) in procedure_timelines(&store, &events, args.window)
        .into_iter()
        .zip(&events)
    {
        match result {
            Ok(t) => timelines.push(t),
            Err(e) => warn!("patient {patient}: {e}"),
        }
    }
    if timelines.is_empty() {
        return Err(CliError::Input(anyhow!(
            "no event has images within {} days",
            args.window
        )));
    }
    let mut csv_out = Vec::new();
    write_timeline_csv(&mut csv_out, &timelines).map_err(classify)?;
    out.write("timeline.csv", csv_out)?;
    let auc = pre_post_auc(&timelines, &boot, args.by_patient).map_err(classify)?;
    info!(
        "before/after event: AUC {:.3} over {} images",
        auc.estimate.value, auc.n
    );
    out.write_json(
        "pre_post_auc.json",
        &EvalReport::for_metric("pre_post", "auc", auc.n, &auc.estimate),
    )?;
    Ok(())
}
