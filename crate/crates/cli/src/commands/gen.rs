use log::info;

use cardiolens::synth::{events_csv, export_frames, generate, reports_jsonl, EventConfig, SynthConfig};

use crate::cli::GenArgs;
use crate::corpus::{CORPUS_CONFIG, EVENTS_FILE, FRAMES_BLOB, FRAMES_MANIFEST, REPORTS_FILE};
use crate::error::{usage, CliResult};
use crate::output::OutputDir;

pub fn run(args: &GenArgs, seed: u64, out: &mut OutputDir) -> CliResult<()> {
    for (name, rate) in [
        ("--pap-measured-rate", args.pap_measured_rate),
        ("--pacemaker-rate", args.pacemaker_rate),
    ] {
        if !(0.0..=1.0).contains(&rate) {
            return Err(usage(format!("{name} must be in [0, 1], got {rate}")));
        }
    }
    let mut cfg = SynthConfig::new(args.patients, args.studies, seed, args.noise);
    cfg.frames_per_study = args.frames;
    cfg.d_img = args.d_img;
    cfg.pap_measured_rate = args.pap_measured_rate;
    cfg.pacemaker_rate = args.pacemaker_rate;
    cfg.event = args.event_shift.map(|shift| EventConfig {
        shift,
        window_days: args.window_days,
    });
    let studies = generate(&cfg).map_err(|e| usage(e.to_string()))?;
    let (manifest, blob) = export_frames(&studies);
    out.write(REPORTS_FILE, reports_jsonl(&studies))?;
    out.write(FRAMES_MANIFEST, manifest)?;
    out.write(FRAMES_BLOB, blob)?;
    if cfg.event.is_some() {
        out.write(EVENTS_FILE, events_csv(&studies))?;
    }
    out.write_json(CORPUS_CONFIG, &cfg)?;
    info!("generated {} studies for {} patients", studies.len(), args.patients);
    Ok(())
}
