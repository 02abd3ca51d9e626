use std::path::{Path, PathBuf};
use std::process::ExitCode;

use ahl_core::eval::{EvalResult, Summary, SweepParam};
use ahl_core::experiment::{self, RunConfig, SweepConfig};
use ahl_core::synthgen::MixtureSpec;
use ahl_core::{Error, Result};
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "ahl", version, about = "Heterogeneous anomaly learning experiments on feature vectors")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Worker threads (default: all cores)
    #[arg(long, global = true, env = "AHL_THREADS")]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run every configured variant under the configured protocol
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides `out` in the config)
        #[arg(long)]
        out: Option<PathBuf>,
        /// Global seed (overrides `seed` in the config)
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Re-run a recorded run and verify its results digest
    Replay {
        manifest: PathBuf,
        /// Output directory (default: `replay/` next to the manifest)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep C or K and write plot data
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum)]
        param: Option<Param>,
        /// Comma-separated values, e.g. 2,3,4,5
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<usize>>,
    },
    /// Write a synthetic dataset as CSV
    GenData {
        /// Destination CSV file
        #[arg(long)]
        out: PathBuf,
        /// Mixture description (TOML); the built-in benchmark when absent
        #[arg(long)]
        config: Option<PathBuf>,
        /// Seed for the built-in benchmark
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Param {
    #[value(name = "C")]
    C,
    #[value(name = "K")]
    K,
}

fn load(config: &Path, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(flag: Option<PathBuf>, cfg: &RunConfig) -> Result<PathBuf> {
    flag.or_else(|| cfg.out.clone())
        .ok_or_else(|| Error::config("out", "no output directory; pass --out or set `out`"))
}

fn fmt(s: Option<Summary>) -> String {
    s.map_or_else(|| "-".into(), |s| format!("{:.4}±{:.4}", s.mean, s.std))
}

fn print_results(results: &[EvalResult]) {
    println!("{:<12} {:<13} {:>15} {:>15} {:>15}", "variant", "setting", "auc_overall", "auc_seen", "auc_unseen");
    for r in results {
        println!(
            "{:<12} {:<13} {:>15} {:>15} {:>15}",
            r.variant,
            format!("{:?}", r.setting).to_lowercase(),
            fmt(Some(r.auc_overall)),
            fmt(r.auc_seen),
            fmt(r.auc_unseen)
        );
    }
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Run { config, out, seed } => {
            let cfg = load(&config, seed)?;
            let out = out_dir(out, &cfg)?;
            let done = experiment::run(&cfg, &out)?;
            print_results(&done.results);
            println!("wrote {}", out.join("manifest.json").display());
        }
        Command::Replay { manifest, out } => {
            let out = out.unwrap_or_else(|| manifest.parent().unwrap_or(Path::new(".")).join("replay"));
            let done = experiment::replay(&manifest, &out)?;
            print_results(&done.results);
            println!("replay matches recorded results ({})", done.manifest.results_sha256);
        }
        Command::Sweep {
            config,
            out,
            seed,
            param,
            values,
        } => {
            let cfg = load(&config, seed)?;
            let out = out_dir(out, &cfg)?;
            let sweep_cfg = match (param, values, &cfg.sweep) {
                (Some(p), Some(v), _) => SweepConfig {
                    param: match p {
                        Param::C => SweepParam::C,
                        Param::K => SweepParam::K,
                    },
                    values: v,
                },
                (None, None, Some(s)) => s.clone(),
                _ => return Err(Error::config("sweep", "give both --param and --values, or a [sweep] table")),
            };
            let rows = experiment::run_sweep(&cfg, &sweep_cfg, &out)?;
            for row in &rows {
                println!(
                    "{}={:<3} {:<12} unseen {}",
                    row.param.name(),
                    row.value,
                    row.result.variant,
                    fmt(row.result.auc_unseen)
                );
            }
            println!("wrote {}", out.join("sweep.csv").display());
        }
        Command::GenData { out, config, seed } => {
            let spec = match config {
                Some(path) => experiment::load_mixture(&path)?,
                None => MixtureSpec::default_benchmark(seed),
            };
            let ds = experiment::gen_data(&spec, &out)?;
            println!("wrote {} samples to {}", ds.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Error::Config { field, message }) => {
            eprintln!("error: invalid configuration: {field}: {message}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
