//! `report`: the history-length sweep. One long-history cohort is
//! generated, then the pipeline is trained and tested at increasing
//! visit truncations (averaged over seeds), tabulating how
//! discrimination rises and calibration error falls with more history.

use std::path::PathBuf;

use vlrisk_core::cohort::generate_cohort;
use vlrisk_core::training::{train, Split};

use crate::io::{config::load_config, csv};
use crate::{check, usage, CliResult};

pub const SWEEP_LENGTHS: [usize; 4] = [4, 8, 16, 32];

pub struct ReportArgs {
    pub config: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub seed: Option<u64>,
    pub seeds: usize,
    pub epochs: Option<usize>,
    pub patients: Option<usize>,
}

pub fn run(args: &ReportArgs) -> CliResult {
    let mut app = match load_config(args.config.as_deref()) {
        Ok(c) => c,
        Err(e) => return usage(e),
    };
    if let Some(seed) = args.seed {
        app.cohort.seed = seed;
        app.train.seed = seed;
    }
    // sweep defaults: a smaller cohort than the main run, histories up
    // to the longest sweep point
    app.cohort.n_patients = args.patients.unwrap_or(600);
    app.cohort.max_visits = *SWEEP_LENGTHS.last().unwrap();
    app.train.epochs = args.epochs.unwrap_or(10);
    app.train.rl_epochs = 0;

    let cohort = match generate_cohort(&app.cohort) {
        Ok(c) => c,
        Err(e) => return usage(anyhow::anyhow!("{e}")),
    };

    let mut rows: Vec<(usize, u64, f64, f64)> = Vec::new();
    for &max_visits in &SWEEP_LENGTHS {
        for s in 0..args.seeds.max(1) as u64 {
            let mut cfg = app.train.clone();
            cfg.max_visits = Some(max_visits);
            cfg.seed = app.train.seed + s;
            let outcome = match train(&cohort, &cfg) {
                Ok(o) => o,
                Err(e) => {
                    return check(anyhow::anyhow!(
                        "sweep run (max_visits={max_visits}, seed={}) failed: {e}",
                        cfg.seed
                    ))
                }
            };
            let test = outcome
                .metrics
                .iter()
                .rev()
                .find(|m| matches!(m.split, Split::Test))
                .expect("train emits a test row");
            println!(
                "max_visits={max_visits} seed={} auroc={:.4} ece={:.4}",
                cfg.seed, test.auroc, test.ece
            );
            rows.push((max_visits, cfg.seed, test.auroc, test.ece));
        }
    }

    if let Err(e) = std::fs::create_dir_all(&args.out_dir) {
        return usage(anyhow::anyhow!("creating {}: {e}", args.out_dir.display()));
    }
    let path = args.out_dir.join("history_sweep.csv");
    if let Err(e) = csv::write_sweep_csv(&rows, &path) {
        return check(e);
    }
    println!("wrote {}", path.display());
    Ok(())
}
