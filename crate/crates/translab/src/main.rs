//! Experiment runner: `translab run <config.json>` executes a scenario and
//! writes its report and tables; `translab list` prints the catalogue.

use clap::{Parser, Subcommand};
use sha2::{Digest, Sha256};
use std::path::PathBuf;
use std::time::Instant;
use translab::config::ExperimentConfig;
use translab::scenarios::{run_scenario, SCENARIOS};
use translab::Error;

#[derive(Parser)]
#[command(name = "translab", about = "Transverse calculus laboratory on torus bundles")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario from a JSON config.
    Run {
        config: PathBuf,
        /// Output directory (falls back to $TRANSLAB_OUT, the config's
        /// out_dir, then ./out).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the config's random seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Linear algebra thread count.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// List the available scenarios.
    List {
        /// Emit a machine-readable JSON array.
        #[arg(long)]
        json: bool,
    },
}

fn main() {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::List { json } => {
            if json {
                let rows: Vec<_> = SCENARIOS
                    .iter()
                    .map(|s| {
                        serde_json::json!({
                            "name": s.name,
                            "dims": s.dims,
                            "runtime": s.runtime,
                        })
                    })
                    .collect();
                println!("{}", serde_json::to_string_pretty(&rows).unwrap());
            } else {
                println!("{:<22} {:<14} {}", "scenario", "dims", "approx runtime");
                for s in SCENARIOS {
                    println!("{:<22} {:<14} {}", s.name, s.dims, s.runtime);
                }
            }
            0
        }
        Command::Run { config, out, seed, threads } => run(config, out, seed, threads),
    };
    std::process::exit(code);
}

fn run(config: PathBuf, out: Option<PathBuf>, seed: Option<u64>, threads: Option<usize>) -> i32 {
    if let Some(n) = threads {
        std::env::set_var("OPENBLAS_NUM_THREADS", n.to_string());
        std::env::set_var("OMP_NUM_THREADS", n.to_string());
    }
    let mut cfg = match ExperimentConfig::from_path(&config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let out_dir = out
        .or_else(|| std::env::var("TRANSLAB_OUT").ok().map(PathBuf::from))
        .or_else(|| cfg.out_dir.clone().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    let started = Instant::now();
    let output = match run_scenario(&cfg) {
        Ok(o) => o,
        Err(e @ Error::ConfigInvalid(_)) => {
            eprintln!("error: {e}");
            return 2;
        }
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    let elapsed = started.elapsed().as_secs_f64();
    if let Err(e) = std::fs::create_dir_all(&out_dir) {
        eprintln!("error: cannot create {}: {e}", out_dir.display());
        return 1;
    }
    let mut artifacts = Vec::new();
    let report_path = out_dir.join(format!("{}_report.json", cfg.scenario));
    let report_json = serde_json::to_string_pretty(&output.report).unwrap();
    if let Err(e) = std::fs::write(&report_path, &report_json) {
        eprintln!("error: cannot write report: {e}");
        return 1;
    }
    artifacts.push((report_path.display().to_string(), sha256_hex(report_json.as_bytes())));
    for (name, contents) in &output.files {
        let path = out_dir.join(name);
        if let Err(e) = std::fs::write(&path, contents) {
            eprintln!("error: cannot write {}: {e}", path.display());
            return 1;
        }
        artifacts.push((path.display().to_string(), sha256_hex(contents.as_bytes())));
    }
    // run artifacts (timings included) go to stdout, not into the report,
    // so reruns stay byte-identical
    let artifact_json = serde_json::json!({
        "scenario": cfg.scenario,
        "files": artifacts.iter().map(|(f, h)| serde_json::json!({"path": f, "sha256": h})).collect::<Vec<_>>(),
        "wall_seconds": elapsed,
    });
    println!("{}", serde_json::to_string_pretty(&artifact_json).unwrap());
    for c in &output.report.checks {
        let status = if c.passed { "pass" } else { "FAIL" };
        println!("[{status}] {} ({} {} {:.3e})", c.name, c.value, c.direction, c.threshold);
    }
    if output.report.passed() {
        0
    } else {
        eprintln!(
            "failed checks: {}",
            output.report.failed_names().join(", ")
        );
        1
    }
}

fn sha256_hex(data: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(data);
    format!("{:x}", h.finalize())
}
