//! One line per acceptance criterion, each driven by its shipped config.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use fpme_harness::{run, ExperimentConfig, Summary};

const CRITERIA: [(u32, &str, &str); 14] = [
    (1, "01-extension-correctness.toml", "extension PDE residual and trace exactness"),
    (2, "02-dtn-equivalence.toml", "DtN multiplier against extrapolated normal derivative"),
    (3, "03-gradient-energy.toml", "gradient-energy identity, full and truncated"),
    (4, "04-truncation-decay.toml", "truncation decay bound and single-mode slope"),
    (5, "05-norm-equivalence.toml", "norm-equivalence constants and K-functional quadrature"),
    (6, "06-mass-conservation.toml", "conservation of mass"),
    (7, "07-l1-contraction.toml", "L1-contraction under refinement"),
    (8, "08-comparison.toml", "comparison of ordered data"),
    (9, "09-max-principle.toml", "weak maximum principle"),
    (10, "10-linear-exact.toml", "linear closed form, observed order and final error"),
    (11, "11-constant-datum.toml", "constant-datum closed form"),
    (12, "12-regularization-limit.toml", "regularization limit"),
    (13, "13-truncated-limit.toml", "truncated-to-full solver limit"),
    (14, "14-determinism.toml", "byte-identical CSV on reruns"),
];

fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn main() -> ExitCode {
    let mut failures = 0;
    for (number, file, title) in CRITERIA {
        let start = Instant::now();
        let outcome = ExperimentConfig::load(&configs_dir().join(file)).and_then(|config| run(&config));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(rows) => {
                let summary = Summary::of(&rows);
                let verdict = if summary.failed == 0 && summary.checked > 0 { "PASS" } else { "FAIL" };
                println!(
                    "criterion {number:>2} {verdict}  {title} ({} checks, {} failed, {secs:.1}s)",
                    summary.checked, summary.failed
                );
                if verdict == "FAIL" {
                    failures += 1;
                    for row in rows.iter().filter(|r| !r.pass()) {
                        println!("    {} {} = {:e}, threshold {:e}", row.case, row.quantity, row.value, row.threshold);
                    }
                }
            }
            Err(e) => {
                failures += 1;
                println!("criterion {number:>2} FAIL  {title} (error: {e})");
            }
        }
    }
    println!("acceptance: {} of {} criteria passed", CRITERIA.len() - failures, CRITERIA.len());
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
