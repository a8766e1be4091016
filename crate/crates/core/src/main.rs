use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;

use qppg::env::SimRng;
use qppg::harness::{
    emit_results, ergodic_capacity, evaluate_saved, params_path, read_records, run_training,
    save_params, summarize, ExperimentConfig, OutputFormat, RunRecord, RECORDS_FILE,
};
use qppg::Result;

#[derive(Parser)]
#[command(name = "qppg", version, about = "Fisher-preconditioned policy gradient experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// key = value experiment file; defaults are used when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run a single seed instead of the configured list
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides out_dir)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train one agent on one environment for every seed
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "csv")]
        format: OutputFormat,
        /// Training noise level (overrides noise_level)
        #[arg(long)]
        noise: Option<f64>,
    },
    /// Greedy robustness of saved parameters
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Evaluation noise level; repeatable. Defaults to robustness_noise.
        #[arg(long)]
        noise: Vec<f64>,
    },
    /// Monte Carlo ergodic capacity of the link environment
    Capacity {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1_000_000)]
        samples: usize,
    },
    /// Merge run directories into one summary
    Report {
        /// Directories containing records.json
        dirs: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "json")]
        format: OutputFormat,
    },
}

fn load(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::from_file(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable value")
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { common, format, noise } => {
            let mut cfg = load(&common)?;
            if let Some(n) = noise {
                cfg.noise_level = n;
                cfg.validate()?;
            }
            let runs = run_training(&cfg)?;
            let records: Vec<RunRecord> = runs.iter().map(|r| r.record.clone()).collect();
            for path in emit_results(&records, format, &cfg.out_dir)? {
                eprintln!("wrote {}", path.display());
            }
            for run in &runs {
                let r = &run.record;
                if let Some(f) = &r.failure {
                    eprintln!("seed {}: failed after {} episodes: {f}", r.seed, r.rewards.len());
                    continue;
                }
                save_params(&params_path(&cfg.out_dir, r.seed), run.agent.layout(), run.agent.params())?;
                let ets = r.episodes_to_success.map_or("never".to_string(), |n| n.to_string());
                let robust: Vec<String> = r.robustness.iter().map(|e| format!("{}:{:.2}", e.noise, e.fraction)).collect();
                println!(
                    "{} {} seed {}: final moving avg {:.3}, success at {ets}, robustness [{}]",
                    r.agent,
                    r.env,
                    r.seed,
                    r.moving_avg.last().copied().unwrap_or(f64::NAN),
                    robust.join(" ")
                );
            }
        }
        Command::Evaluate { common, noise } => {
            let cfg = load(&common)?;
            let levels = if noise.is_empty() { cfg.robustness_noise.clone() } else { noise };
            let results = evaluate_saved(&cfg, &cfg.out_dir, &levels)?;
            let out: Vec<serde_json::Value> = results
                .into_iter()
                .map(|(seed, entries)| serde_json::json!({ "seed": seed, "robustness": entries }))
                .collect();
            println!("{}", json(&out));
        }
        Command::Capacity { common, samples } => {
            let cfg = load(&common)?;
            let seed = cfg.seeds[0];
            let est = ergodic_capacity(&cfg.link_config(cfg.pilot_snr_db), samples, &mut SimRng::seed_from_u64(seed))?;
            println!("{}", json(&est));
        }
        Command::Report { dirs, out, format } => {
            let mut records = Vec::new();
            for d in &dirs {
                records.extend(read_records(&d.join(RECORDS_FILE))?);
            }
            match out {
                Some(dir) => {
                    for path in emit_results(&records, format, &dir)? {
                        eprintln!("wrote {}", path.display());
                    }
                }
                None => println!("{}", json(&summarize(&records))),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
