//! `generate`: synthesize a cohort and write it as JSONL.

use std::path::{Path, PathBuf};

use vlrisk_core::cohort::generate_cohort;

use crate::io::{config::load_config, jsonl};
use crate::{check, usage, CliResult};

pub struct GenerateArgs {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: PathBuf,
    pub patients: Option<usize>,
    pub max_visits: Option<usize>,
}

pub fn run(args: &GenerateArgs) -> CliResult {
    let mut app = match load_config(args.config.as_deref()) {
        Ok(c) => c,
        Err(e) => return usage(e),
    };
    if let Some(seed) = args.seed {
        app.cohort.seed = seed;
    }
    if let Some(n) = args.patients {
        app.cohort.n_patients = n;
    }
    if let Some(mv) = args.max_visits {
        app.cohort.max_visits = mv;
    }
    let cohort = match generate_cohort(&app.cohort) {
        Ok(c) => c,
        Err(e) => return usage(anyhow::anyhow!("{e}")),
    };
    if let Err(e) = jsonl::save_cohort(&cohort, &args.out) {
        return check(e);
    }
    log::info!(
        "wrote {} patients to {}",
        cohort.len(),
        Path::new(&args.out).display()
    );
    println!("generated {} patients -> {}", cohort.len(), args.out.display());
    Ok(())
}
