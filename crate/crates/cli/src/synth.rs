use std::fs;
use std::path::PathBuf;

use anyhow::Context;
use pedsearch::synth::{generate_scene, write_scene, SceneSpec, SynthError};

use crate::{ExitWith, Outcome};

const IO: u8 = 1;
const INVALID: u8 = 2;

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Scene description (JSON).
    #[arg(long)]
    pub spec: PathBuf,
    /// Output bundle directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: u64,
}

pub fn run(args: Args) -> Outcome {
    let text = fs::read_to_string(&args.spec)
        .with_context(|| format!("scene spec {}", args.spec.display()))
        .exit_with(INVALID)?;
    let spec = SceneSpec::from_json(&text)
        .with_context(|| format!("scene spec {}", args.spec.display()))
        .exit_with(INVALID)?;
    let scene = generate_scene(&spec, args.seed).exit_with(INVALID)?;
    match write_scene(&scene, &args.out) {
        Ok(()) => {}
        Err(e @ SynthError::Write(_)) => return Err(e).exit_with(IO),
        Err(e) => return Err(e).exit_with(INVALID),
    }
    eprintln!(
        "wrote {} frames, {} persons, seed {} -> {}",
        scene.frames.len(),
        spec.persons.len(),
        args.seed,
        args.out.display()
    );
    Ok(())
}
