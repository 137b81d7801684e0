use pedsearch::dataio::read_calibration_records;
use pedsearch::selftest::{check_camera, HEIGHT_REL_TOL, ROUNDTRIP_TOL_PX};

use crate::{ExitWith, Outcome};

const LOAD: u8 = 1;
const VIOLATION: u8 = 3;

#[derive(Debug, clap::Args)]
pub struct Args {
    #[command(flatten)]
    pub bundle: crate::BundleArg,
}

pub fn run(args: Args) -> Outcome {
    let records = read_calibration_records(&args.bundle.bundle).exit_with(LOAD)?;
    if records.is_empty() {
        return Err(anyhow::anyhow!(
            "no calibration files under {}",
            args.bundle.bundle.display()
        ))
        .exit_with(LOAD);
    }
    let mut failed = Vec::new();
    for (path, rec) in records {
        let id = rec.camera_id.clone();
        let report = check_camera(&rec.to_calibration());
        if let Some(reason) = &report.invalid {
            eprintln!("{id}: FAIL invalid calibration ({}): {reason}", path.display());
            failed.push(id);
            continue;
        }
        let verdict = if report.passed() { "ok" } else { "FAIL" };
        eprintln!(
            "{id}: {verdict} roundtrip max {:.3e} px over {} pts (tol {ROUNDTRIP_TOL_PX:e}), \
             distortion inverse max {:.3e} px, height max rel err {:.3e} over {} persons (tol {HEIGHT_REL_TOL:e}), \
             undistortion {}",
            report.roundtrip_max_px,
            report.roundtrip_samples,
            report.distortion_max_px,
            report.height_max_rel,
            report.height_samples,
            if report.undistort_identity {
                "identity (k = 0)"
            } else {
                "active"
            },
        );
        if !report.passed() {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(anyhow::anyhow!("tolerance violated for {}", failed.join(", "))).exit_with(VIOLATION)
    }
}
