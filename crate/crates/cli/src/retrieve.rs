use std::fs;
use std::path::PathBuf;

use anyhow::Context;
use pedsearch::attributes::DEFAULT_SECOND_COLOR_MIN_SHARE;
use pedsearch::cascade::{load_query, CascadeConfig, ResultRecord};
use pedsearch::dataio::{load_bundle, write_overlay, write_results};
use pedsearch::metrics::{frame_correct, gt_bbox, DEFAULT_TAU};
use pedsearch::pipeline::process_frame;
use rayon::prelude::*;

use crate::{ExitWith, Outcome};

const LOAD: u8 = 1;
const QUERY: u8 = 2;

#[derive(Debug, clap::Args)]
pub struct Args {
    #[command(flatten)]
    pub bundle: crate::BundleArg,
    /// Semantic query JSON.
    #[arg(long)]
    pub query: PathBuf,
    /// Results file (JSON Lines, one record per frame).
    #[arg(long)]
    pub out: PathBuf,
    /// Write one annotated PNG per frame into this directory.
    #[arg(long)]
    pub overlay_dir: Option<PathBuf>,
    /// IoU needed to count a frame correct in the stderr summary (needs markers).
    #[arg(long, default_value_t = DEFAULT_TAU)]
    pub tau: f64,
    /// Subject whose marker box is drawn on overlays and scored in the summary.
    #[arg(long)]
    pub subject: Option<String>,
    #[arg(long, default_value_t = DEFAULT_SECOND_COLOR_MIN_SHARE)]
    pub second_color_min_share: f64,
    /// Worker threads; 0 uses every available core.
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
}

pub fn run(args: Args) -> Outcome {
    let bundle = load_bundle(&args.bundle.bundle).exit_with(LOAD)?;
    let query = load_query(&args.query, &bundle.palette).exit_with(QUERY)?;
    let config = CascadeConfig {
        second_color_min_share: args.second_color_min_share,
    };
    if let Some(dir) = &args.overlay_dir {
        fs::create_dir_all(dir)
            .with_context(|| format!("creating {}", dir.display()))
            .exit_with(LOAD)?;
    }
    let subject = args.subject.as_deref().or_else(|| {
        let mut ids: Vec<&str> = bundle.markers.iter().flatten().map(|m| m.subject_id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        (ids.len() == 1).then(|| ids[0])
    });
    let gt_for = |frame_id: u64| {
        let subject = subject?;
        bundle
            .markers_for_frame(frame_id)
            .into_iter()
            .find(|m| m.subject_id == subject)
            .and_then(|m| gt_bbox(m).ok())
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.workers)
        .build()
        .exit_with(LOAD)?;
    let results: Vec<Result<ResultRecord, anyhow::Error>> = pool.install(|| {
        (0..bundle.manifest.len())
            .into_par_iter()
            .map(|i| {
                let result = process_frame(&bundle, i, &query, &config)?;
                let record = ResultRecord::from(&result);
                if let Some(dir) = &args.overlay_dir {
                    let frame = bundle.load_frame(&bundle.manifest[i])?;
                    let path = dir.join(format!("{:06}.png", record.frame_id));
                    write_overlay(&frame, &record, gt_for(record.frame_id).as_ref(), &path)?;
                }
                Ok(record)
            })
            .collect()
    });
    let records: Vec<ResultRecord> = results.into_iter().collect::<Result<_, _>>().exit_with(LOAD)?;
    write_results(&records, &args.out).exit_with(LOAD)?;

    let unique = records.iter().filter(|r| r.unique).count();
    eprintln!(
        "{} frames, {unique} unique matches -> {}",
        records.len(),
        args.out.display()
    );
    if let Some(subject) = subject {
        let scored: Vec<bool> = records
            .iter()
            .filter_map(|r| gt_for(r.frame_id).map(|gt| frame_correct(r, &gt, args.tau)))
            .collect();
        if !scored.is_empty() {
            let correct = scored.iter().filter(|&&c| c).count();
            eprintln!(
                "subject {subject}: {correct}/{} annotated frames correct at tau {}",
                scored.len(),
                args.tau
            );
        }
    } else if bundle.markers.is_some() {
        log::info!("markers cover several subjects; pass --subject to score one");
    }
    Ok(())
}
