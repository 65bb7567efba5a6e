use log::{info, warn};

use cardiolens::retrieval::{dedup_pairs, mcmrr, retrieval_metrics, Direction, ImagePooling};

use crate::cli::{Pooling, RetrievalArgs};
use crate::corpus::load_source;
use crate::error::{usage, Classify, CliResult};
use crate::output::OutputDir;

use super::{csv_finish, csv_row};

pub fn run(args: &RetrievalArgs, out: &mut OutputDir) -> CliResult<()> {
    if args.k.is_empty() || args.k.contains(&0) {
        return Err(usage("--k needs one or more positive cut-offs"));
    }
    let pooling = match args.pooling {
        Pooling::MinId => ImagePooling::MinId,
        Pooling::Mean if args.pool_frames == 0 => return Err(usage("--pool-frames must be at least 1")),
        Pooling::Mean => ImagePooling::MeanFirstFrames(args.pool_frames),
    };
    let (store, _) = load_source(&args.source)?;
    let dedup = dedup_pairs(&store, pooling).input()?;
    if dedup.excluded > 0 {
        warn!(
            "{} reports lack an image or a text record and were left out",
            dedup.excluded
        );
    }
    let pairs = dedup.pairs;
    let i2t = retrieval_metrics(&pairs, Direction::ImageToText, &args.k).input()?;
    let t2i = retrieval_metrics(&pairs, Direction::TextToImage, &args.k).input()?;
    let m = mcmrr(&i2t, &t2i).numeric()?;
    info!("{} pairs: MCMRR {m:.3}", pairs.len());

    let mut ranks = csv::Writer::from_writer(Vec::new());
    csv_row(
        &mut ranks,
        &["report_id", "image_to_text_rank", "text_to_image_rank"].map(String::from),
    )?;
    for (p, (a, b)) in pairs.iter().zip(i2t.ranks.iter().zip(&t2i.ranks)) {
        csv_row(&mut ranks, &[p.report_id.clone(), a.to_string(), b.to_string()])?;
    }
    out.write("ranks.csv", csv_finish(ranks)?)?;
    out.write_json("retrieval.json", &[i2t.to_report(Some(m)), t2i.to_report(Some(m))])?;
    Ok(())
}
