use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use osr_core::experiment::{
    emit_report, read_artifacts, run_experiment_with, sweep_openness_with, write_artifact,
    ExperimentConfig, RunArtifact,
};
use osr_core::gradcheck::{gradcheck_suite, GradcheckOptions};
use osr_core::{OsrError, Result};

const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Parser)]
#[command(name = "osr", version, about = "Open-set recognition experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate every configured (set, method, run), then report.
    Train(Common),
    /// Train with randomly drawn known sets of several sizes, then report.
    SweepOpenness {
        #[command(flatten)]
        common: Common,
        /// Training-class counts; defaults to `sweep.train_counts`.
        #[arg(long, value_delimiter = ',')]
        counts: Option<Vec<usize>>,
    },
    /// Rebuild the report from artifacts in `<out>/runs`.
    Report {
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Finite-difference check of every layer kind and the loss.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 5)]
        instances: usize,
        #[arg(long, hide = true)]
        corrupt_gradient: bool,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `base_seed`.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    runs: Option<usize>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut config = match &self.config {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| OsrError::Io {
                    path: p.clone(),
                    source: e,
                })?;
                ExperimentConfig::parse(&text)?
            }
            None => ExperimentConfig::default(),
        };
        if let Some(o) = &self.out {
            config.output_dir = o.clone();
        }
        if let Some(s) = self.seed {
            config.base_seed = s;
        }
        if let Some(r) = self.runs {
            config.runs = r;
        }
        config.validate()?;
        Ok(config)
    }
}

fn progress(a: &RunArtifact) {
    eprintln!(
        "{} {} {} run {}: overall F1 {:.4}, unknown recall {:.4}, closed-set acc {:.4} ({:.1}s)",
        a.dataset,
        a.method.name(),
        a.set_name,
        a.run,
        a.metrics.overall.f1,
        a.metrics.unknown_class.recall,
        a.closed_set_accuracy(),
        a.wall_clock.as_secs_f64()
    );
}

fn runs_dir(out: &Path) -> PathBuf {
    out.join("runs")
}

/// Writes artifacts, the wall-clock log and the report.
fn finish(artifacts: &[RunArtifact], out: &Path) -> Result<()> {
    let dir = runs_dir(out);
    let mut timings = String::new();
    for a in artifacts {
        write_artifact(a, &dir)?;
        let _ = writeln!(timings, "{} {:.3}", a.file_name(), a.wall_clock.as_secs_f64());
    }
    let path = out.join("timings.txt");
    std::fs::write(&path, timings).map_err(|e| OsrError::Io { path, source: e })?;
    let files = emit_report(artifacts, out)?;
    eprintln!("wrote {} artifacts and report to {}", artifacts.len(), out.display());
    eprintln!("summary: {}", files.summary.display());
    Ok(())
}

fn gradcheck(seed: u64, instances: usize, corrupt: bool) -> Result<bool> {
    let options = GradcheckOptions {
        instances,
        seed,
        corrupt,
        ..GradcheckOptions::default()
    };
    let outcomes = gradcheck_suite(&options)?;
    let mut ok = true;
    for o in &outcomes {
        let pass = o.passed(GRADCHECK_TOLERANCE);
        ok &= pass;
        println!(
            "{:<28} instances {:>2}  worst rel err {:.3e}  {}",
            o.component,
            o.instances,
            o.max_rel_error,
            if pass { "ok" } else { "FAIL" }
        );
    }
    Ok(ok)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Train(common) => {
            let config = common.load()?;
            let artifacts = run_experiment_with(&config, progress)?;
            finish(&artifacts, &config.output_dir)?;
        }
        Command::SweepOpenness { common, counts } => {
            let config = common.load()?;
            let counts = counts.unwrap_or_else(|| config.sweep_counts.clone());
            let (rows, artifacts) = sweep_openness_with(&config, &counts, progress)?;
            for r in &rows {
                let mean = r.f1.iter().sum::<f64>() / r.f1.len().max(1) as f64;
                println!(
                    "{} C_train {} openness {:.4} mean overall F1 {:.4}",
                    r.method.name(),
                    r.spec.c_train,
                    r.openness,
                    mean
                );
            }
            finish(&artifacts, &config.output_dir)?;
        }
        Command::Report { out } => {
            let artifacts = read_artifacts(&runs_dir(&out))?;
            emit_report(&artifacts, &out)?;
            eprintln!("report for {} artifacts written to {}", artifacts.len(), out.display());
        }
        Command::Gradcheck {
            seed,
            instances,
            corrupt_gradient,
        } => return gradcheck(seed, instances, corrupt_gradient),
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("verification failed");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
