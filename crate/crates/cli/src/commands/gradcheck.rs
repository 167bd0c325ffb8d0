//! `gradcheck`: run the finite-difference suite over every primitive
//! and over sampled coordinates of a fully assembled model. Exit code 1
//! when any coordinate exceeds tolerance.

use anyhow::anyhow;
use vlrisk_core::gradcheck::{primitive_suite, GradReport};
use vlrisk_core::training::full_pipeline_check;

use crate::{check, CliResult};

pub struct GradcheckArgs {
    pub seed: u64,
    /// Sampled coordinates of the assembled model.
    pub model_coords: usize,
    /// Test hook: offsets one analytic gradient so the failure path is
    /// exercisable end to end.
    pub corrupt: bool,
}

fn print_report(label: &str, report: &GradReport) {
    let failures: Vec<_> = report.failures().collect();
    for f in &failures {
        println!(
            "FAIL {label} {}[{}] analytic={:.6e} numeric={:.6e}",
            f.param, f.index, f.analytic, f.numeric
        );
    }
    let worst = report
        .worst()
        .map(|c| c.severity())
        .unwrap_or(0.0);
    println!(
        "{label}: {} coordinates, {} failures, worst severity {:.3e}",
        report.checks.len(),
        failures.len(),
        worst
    );
}

pub fn run(args: &GradcheckArgs) -> CliResult {
    let mut primitives = match primitive_suite(args.seed) {
        Ok(r) => r,
        Err(e) => return check(anyhow!("primitive suite failed to evaluate: {e}")),
    };
    if args.corrupt {
        if let Some(first) = primitives.checks.first_mut() {
            first.analytic += 1.0;
        }
    }
    print_report("primitives", &primitives);

    let pipeline = match full_pipeline_check(args.seed, args.model_coords) {
        Ok(r) => r,
        Err(e) => return check(anyhow!("pipeline check failed to evaluate: {e}")),
    };
    print_report("pipeline", &pipeline);

    if primitives.all_pass() && pipeline.all_pass() {
        println!("gradcheck: PASS");
        Ok(())
    } else {
        check(anyhow!("gradient tolerance exceeded"))
    }
}
