use std::fs::File;
use std::path::PathBuf;

use anyhow::Context;
use pedsearch::dataio::{read_results, write_atomic};
use pedsearch::metrics::{
    aggregate, evaluate_results, read_markers_csv, write_subject_csv, DEFAULT_INIT_SKIP, DEFAULT_IOU_THRESHOLD,
    DEFAULT_TAU,
};

use crate::{ExitWith, Outcome};

const FAIL: u8 = 1;

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Results file written by `retrieve`.
    #[arg(long)]
    pub results: PathBuf,
    /// Marker annotations CSV (frame_id,subject_id,marker_name,u,v).
    #[arg(long)]
    pub markers: PathBuf,
    /// Evaluation report (JSON).
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the per-subject table as CSV.
    #[arg(long)]
    pub subject_csv: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_IOU_THRESHOLD)]
    pub iou_threshold: f64,
    /// Frames skipped at the start of every subject.
    #[arg(long, default_value_t = DEFAULT_INIT_SKIP)]
    pub init_skip: usize,
    /// IoU needed for a unique result to count as correct.
    #[arg(long, default_value_t = DEFAULT_TAU)]
    pub tau: f64,
    /// Only score these subjects (repeatable).
    #[arg(long)]
    pub subject: Vec<String>,
}

pub fn run(args: Args) -> Outcome {
    let results = read_results(&args.results).exit_with(FAIL)?;
    let file = File::open(&args.markers)
        .with_context(|| format!("markers {}", args.markers.display()))
        .exit_with(FAIL)?;
    let mut markers = read_markers_csv(file)
        .with_context(|| format!("markers {}", args.markers.display()))
        .exit_with(FAIL)?;
    if !args.subject.is_empty() {
        markers.retain(|m| args.subject.contains(&m.subject_id));
    }
    if markers.is_empty() {
        return Err(anyhow::anyhow!("no marker annotations to evaluate")).exit_with(FAIL);
    }
    let series = evaluate_results(&results, &markers, args.tau).exit_with(FAIL)?;
    let report = aggregate(&series, args.iou_threshold, args.init_skip).exit_with(FAIL)?;

    let json = serde_json::to_string_pretty(&report).exit_with(FAIL)? + "\n";
    write_atomic(&args.out, json.as_bytes()).exit_with(FAIL)?;
    if let Some(path) = &args.subject_csv {
        let mut buf = Vec::new();
        write_subject_csv(&mut buf, &report).exit_with(FAIL)?;
        write_atomic(path, &buf).exit_with(FAIL)?;
    }
    let c = &report.corpus;
    eprintln!(
        "subjects retrieved {}/{}, avg TP {:.1}%, avg IoU correct {:.3}, avg IoU all {:.3}, IoU >= {} in {:.1}% of frames",
        c.subjects_retrieved,
        report.per_subject.len(),
        c.avg_tp_percent,
        c.avg_iou_correct,
        c.avg_iou_all,
        c.iou_threshold,
        100.0 * c.frac_iou_ge_threshold
    );
    Ok(())
}
