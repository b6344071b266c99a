use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mixreg::harness::{self, report, Cell, Checkpoint, ExperimentConfig};
use mixreg::theory::{self, SgdSettings};

#[derive(Parser)]
#[command(
    name = "mixreg",
    version,
    about = "Mixout / mixconnect regularization toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the closed forms against exact enumeration; exits nonzero on failure.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Random instances per granularity.
        #[arg(long, default_value_t = 60)]
        instances: usize,
    },
    /// Least-squares line fit under mixout for a grid of p, as CSV.
    Regress {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.3, 0.6, 0.9])]
        p_grid: Vec<f64>,
        /// Write here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also fit by mask-sampled SGD and report the largest relative gap.
        #[arg(long)]
        sgd: bool,
    },
    /// Train on the source task and save the best checkpoint.
    Pretrain {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finetune a checkpoint once and print its runs.csv row.
    Finetune {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        /// `technique:p`, e.g. `mixout:0.7`.
        #[arg(long)]
        policy: Cell,
        #[arg(long, default_value_t = 0)]
        restart: usize,
    },
    /// Pretrain (or reuse --ckpt) and run every (technique, p, restart).
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        ckpt: Option<PathBuf>,
    },
    /// Recompute summary.csv from runs.csv in a sweep directory.
    Report { dir: PathBuf },
}

fn main() -> ExitCode {
    match run(Cli::parse().command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> mixreg::Result<ExitCode> {
    match command {
        Command::Verify { seed, instances } => {
            let checks = theory::verify::run_checks(seed, instances)?;
            let mut ok = true;
            for c in &checks {
                println!(
                    "{} {}: {}",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.detail
                );
                ok &= c.passed;
            }
            Ok(if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
        Command::Regress {
            seed,
            p_grid,
            out,
            sgd,
        } => {
            let settings = SgdSettings::default();
            let demo = theory::ls_regression_demo(seed, &p_grid, sgd.then_some(&settings))?;
            match &out {
                Some(path) => {
                    let f = File::create(path).map_err(|e| io_err(path, e))?;
                    theory::write_demo_csv(&demo.rows, BufWriter::new(f))
                        .map_err(|e| io_err(path, e))?;
                }
                None => theory::write_demo_csv(&demo.rows, io::stdout().lock())
                    .map_err(|e| io_err("<stdout>", e))?,
            }
            if sgd {
                let worst = demo
                    .rows
                    .iter()
                    .flat_map(|r| {
                        let s = r.w_sgd.as_ref().expect("sgd requested");
                        r.w_hat
                            .iter()
                            .zip(s)
                            .map(|(a, b)| ((a - b) / a).abs())
                            .collect::<Vec<_>>()
                    })
                    .fold(0.0, f64::max);
                eprintln!("largest relative gap between SGD and closed form: {worst:.3e}");
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Pretrain { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let data = harness::prepare_data(&cfg)?;
            let outcome = harness::pretrain(&cfg, &data)?;
            for t in &outcome.trials {
                match (t.val_accuracy, &t.failure) {
                    (Some(a), _) => eprintln!(
                        "epochs {} repeat {}: source val accuracy {a}",
                        t.epochs, t.repeat
                    ),
                    (None, Some(f)) => {
                        eprintln!("epochs {} repeat {}: failed ({f})", t.epochs, t.repeat)
                    }
                    (None, None) => {}
                }
            }
            outcome.checkpoint.save(&out)?;
            println!("{}", outcome.checkpoint.source_val_accuracy);
            Ok(ExitCode::SUCCESS)
        }
        Command::Finetune {
            config,
            ckpt,
            policy,
            restart,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let data = harness::prepare_data(&cfg)?;
            let ck = Checkpoint::load(&ckpt)?;
            let record = harness::finetune(&cfg, &data, &ck, &policy, restart)?;
            if let Some(f) = &record.failure {
                eprintln!("run failed: {f}");
            }
            let mut w = csv::Writer::from_writer(io::stdout().lock());
            w.serialize(report::RunRow::from(&record))
                .and_then(|_| w.flush().map_err(Into::into))
                .map_err(|e| mixreg::Error::Consistency(e.to_string()))?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Sweep { config, out, ckpt } => {
            let cfg = ExperimentConfig::load(&config)?;
            let data = harness::prepare_data(&cfg)?;
            std::fs::create_dir_all(&out).map_err(|e| io_err(&out, e))?;
            let ck = match ckpt {
                Some(path) => Checkpoint::load(&path)?,
                None => {
                    let outcome = harness::pretrain(&cfg, &data)?;
                    outcome.checkpoint.save(&out.join("pretrained.ckpt"))?;
                    outcome.checkpoint
                }
            };
            eprintln!("pretrained source val accuracy {}", ck.source_val_accuracy);
            let result = harness::sweep(&cfg, &data, &ck)?;
            harness::write_report(
                &out,
                &result.records,
                &result.summary,
                result.degenerate_threshold,
            )?;
            print_summary(&out.join(report::SUMMARY_FILE))?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Report { dir } => {
            harness::report(&dir)?;
            print_summary(&dir.join(report::SUMMARY_FILE))?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn io_err(path: impl AsRef<Path>, e: io::Error) -> mixreg::Error {
    mixreg::Error::Io {
        path: path.as_ref().to_path_buf(),
        source: e,
    }
}

fn print_summary(path: &Path) -> mixreg::Result<()> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    io::stdout()
        .lock()
        .write_all(text.as_bytes())
        .map_err(|e| io_err("<stdout>", e))
}
