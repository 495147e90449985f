use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use surgplan::envs::EnvKind;
use surgplan::harness::{
    evaluate, gradcheck, heatmap, train_with_progress, write_eval_csv, EvalSpec, Layouts,
    Normalization, RunConfig, DEFAULT_EVAL_SEED,
};
use surgplan::nets::Checkpoint;
use surgplan::tokens::{ProviderKind, TokenProvider};

const MIN_GRADCHECK_SAMPLES: usize = 100;

#[derive(Parser)]
#[command(
    name = "surgplan",
    version,
    about = "PPO with once-per-episode planning tokens on surrogate laparoscopic tasks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy and write checkpoints plus a metrics CSV.
    Train {
        #[arg(long)]
        env: Option<EnvKind>,
        #[arg(long)]
        tokens: Option<ProviderKind>,
        #[arg(long)]
        seed: Option<u64>,
        /// JSON file mirroring RunConfig; flags override its fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override total_timesteps.
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Evaluate a checkpoint with sampled actions.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        #[arg(long, default_value_t = DEFAULT_EVAL_SEED)]
        seed: u64,
        /// CSV destination; the report is always printed.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Evaluate under a different token provider than the one trained with.
        #[arg(long)]
        tokens: Option<ProviderKind>,
    },
    /// Export a reward-weighted visitation heatmap as `<out>.csv` and `<out>.pgm`.
    Heatmap {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        #[arg(long, default_value_t = DEFAULT_EVAL_SEED)]
        seed: u64,
        /// Draw a new scene every episode instead of replaying one.
        #[arg(long)]
        vary_layout: bool,
    },
    /// Check analytic gradients of the full loss against finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Train {
            env,
            tokens,
            seed,
            config,
            out,
            steps,
        } => {
            let mut cfg = match &config {
                Some(path) => RunConfig::from_json_file(path)?,
                None => RunConfig::default(),
            };
            if let Some(env) = env {
                cfg.env = env;
            }
            if let Some(tokens) = tokens {
                cfg.tokens.provider = tokens;
            }
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            if let Some(steps) = steps {
                cfg.total_timesteps = steps;
            }
            if let Some(out) = &out {
                cfg.output_dir = out.display().to_string();
            }
            let out_dir = PathBuf::from(&cfg.output_dir);
            let start = Instant::now();
            let outcome = train_with_progress(&cfg, &out_dir, |row| {
                eprintln!(
                    "step {:>8}  return {:>7.3}  success {:>5.2}  entropy {:.3}  kl {:.4}  [{:.0}s]",
                    row.step,
                    row.mean_return,
                    row.success_rate_window,
                    row.update.entropy,
                    row.update.approx_kl,
                    start.elapsed().as_secs_f64()
                )
            })
            .context("training failed")?;
            println!(
                "checkpoint {} {}",
                outcome.final_checkpoint.display(),
                outcome.final_hash
            );
            println!("metrics {}", outcome.metrics_path.display());
            println!(
                "episodes {} token_calls {}",
                outcome.episodes, outcome.provider_calls
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Eval {
            checkpoint,
            episodes,
            seed,
            report,
            tokens,
        } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let model = ckpt.to_model()?;
            let mut token_cfg = ckpt.config.tokens.clone();
            if let Some(t) = tokens {
                token_cfg.provider = t;
            }
            let provider = TokenProvider::new(token_cfg, ckpt.config.net.token_dim)?;
            let spec = EvalSpec {
                env: ckpt.config.env,
                shaping: ckpt.config.shaping,
                episodes,
                seed,
                layouts: Layouts::Varied,
            };
            let result = evaluate(&model, &spec, &provider)?;
            println!("{}", surgplan::harness::EvalReport::CSV_HEADER);
            println!("{}", result.csv_row());
            if let Some(path) = report {
                write_eval_csv(&path, &result, &ckpt.config.to_json(), &ckpt.hash())?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Heatmap {
            checkpoint,
            out,
            episodes,
            seed,
            vary_layout,
        } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let model = ckpt.to_model()?;
            let provider =
                TokenProvider::new(ckpt.config.tokens.clone(), ckpt.config.net.token_dim)?;
            let spec = EvalSpec {
                env: ckpt.config.env,
                shaping: ckpt.config.shaping,
                episodes,
                seed,
                layouts: if vary_layout {
                    Layouts::Varied
                } else {
                    Layouts::Fixed
                },
            };
            let (map, result) = heatmap(&model, &spec, &provider)?;
            let (csv, pgm) = map.write(&out, &ckpt.config.to_json(), &ckpt.hash())?;
            let peak = map.argmax();
            let norm = match map.normalization {
                Normalization::MaxAbs(m) => format!("max |H| {m:.6}"),
                Normalization::Skipped => "all zero".into(),
            };
            println!("{} {}", csv.display(), pgm.display());
            println!(
                "peak cell row {} col {}; {norm}; success_rate {}",
                peak.y, peak.x, result.success_rate
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Gradcheck { seed } => {
            let start = Instant::now();
            let report = gradcheck(seed)?;
            let worst = report.worst().cloned();
            println!(
                "checked {} parameters ({} kink-straddling probes excluded), max relative error {:.3e}, tolerance {:.0e}, {:.2}s",
                report.checked(),
                report.kinks(),
                report.max_rel_err(),
                report.tolerance,
                start.elapsed().as_secs_f64()
            );
            if report.checked() < MIN_GRADCHECK_SAMPLES {
                println!(
                    "FAIL: only {} parameters judged, need {MIN_GRADCHECK_SAMPLES}",
                    report.checked()
                );
                return Ok(ExitCode::FAILURE);
            }
            match report.into_result() {
                Ok(_) => {
                    if let Some(w) = worst {
                        println!(
                            "worst: {}[{}] analytic {:.9e} numeric {:.9e}",
                            w.name, w.index, w.analytic, w.numeric
                        );
                    }
                    println!("PASS");
                    Ok(ExitCode::SUCCESS)
                }
                Err(e) => {
                    println!("FAIL: {e}");
                    Ok(ExitCode::FAILURE)
                }
            }
        }
    }
}
