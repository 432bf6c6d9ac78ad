//! `cba`: run, compare and inspect learning regimes, or host a live session.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use cba::archive::{replay, SessionRecord};
use cba::harness::{compare_regimes, run_regime, sweep_fixed_threshold, teacher_evaluation, ExperimentConfig};
use cba::world::{calibrate_center_rate, evaluate, ForwardDriver, SensorConfig, TrafficPattern};
use cba::Mode;
use cba_service::{ServerConfig, SessionConfig};

#[derive(Parser)]
#[command(name = "cba", version, about = "Confidence-based autonomy on a simulated highway")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one regime with the oracle teacher.
    Run {
        #[command(flatten)]
        exp: ExperimentArgs,
        /// ce_s, ce_m, cd_only or cba.
        #[arg(long, default_value = "cba")]
        regime: Mode,
        /// Also write the full session archive.
        #[arg(long)]
        record: bool,
    },
    /// Run all four regimes under the same seeds and tabulate them.
    Compare {
        #[command(flatten)]
        exp: ExperimentArgs,
    },
    /// Sweep the single fixed threshold.
    Sweep {
        #[command(flatten)]
        exp: ExperimentArgs,
        /// Comma separated thresholds; defaults to the config's grid.
        #[arg(long, value_delimiter = ',')]
        grid: Vec<f64>,
    },
    /// Re-execute an archived session and check every event.
    Replay {
        archive: PathBuf,
    },
    /// Fit the middle-lane arrival rate to a baseline collision rate.
    CalibrateTraffic {
        /// Collision rate wanted from an agent that never changes lanes.
        #[arg(long, default_value_t = 0.30)]
        target: f64,
        #[arg(long, default_value_t = 10_000)]
        timesteps: u64,
        /// Pattern to start from (JSON); the evaluation pattern otherwise.
        #[arg(long)]
        template: Option<PathBuf>,
        /// Where to write the fitted pattern; stdout otherwise.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Host a live teaching session over a websocket.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        #[arg(long, default_value = "sessions")]
        session_dir: PathBuf,
        /// Session config (JSON) used when the teacher sends none.
        #[arg(long)]
        session: Option<PathBuf>,
        /// Wait for a start_session message instead of starting right away.
        #[arg(long)]
        no_autostart: bool,
    },
}

#[derive(Args)]
struct ExperimentArgs {
    /// Experiment config (JSON); missing fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Sets the world, model and split seeds at once.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_timesteps: Option<u64>,
    #[arg(long)]
    max_demonstrations: Option<usize>,
    #[arg(long)]
    completion_window: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

impl ExperimentArgs {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => read_json(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seeds.world = s;
            cfg.seeds.model = s;
            cfg.seeds.split = s;
        }
        if let Some(v) = self.max_timesteps {
            cfg.max_timesteps = v;
        }
        if let Some(v) = self.max_demonstrations {
            cfg.max_demonstrations = v;
        }
        if let Some(v) = self.completion_window {
            cfg.completion_window = v;
        }
        cfg.validate()?;
        std::fs::create_dir_all(&self.out).with_context(|| format!("creating {}", self.out.display()))?;
        Ok(cfg)
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(Cli::parse().command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn execute(command: Command) -> Result<ExitCode> {
    match command {
        Command::Run { exp, regime, record } => {
            let mut cfg = exp.config()?.with_regime(regime);
            cfg.record_session = record;
            let run = run_regime(&cfg)?;
            let r = &run.report;
            write_json(&exp.out.join("report.json"), r)?;
            if let Some(rec) = &run.record {
                rec.save(&exp.out.join("session.jsonl"))?;
            }
            println!(
                "{}: completed={} demonstrations={} timesteps={} training_collisions={} distance_to_teacher={:.4} final_collision_rate={:.4}",
                regime.as_str(),
                r.completed,
                r.total_demonstrations,
                r.timesteps,
                r.training_collisions,
                r.distance_to_teacher(),
                r.final_evaluation.collision_rate
            );
        }
        Command::Compare { exp } => {
            let cfg = exp.config()?;
            let sweep = sweep_fixed_threshold(&cfg.threshold_grid, &cfg)?;
            write_json(&exp.out.join("sweep.json"), &sweep)?;
            let mut reports = vec![sweep.best().clone()];
            for regime in [Mode::CeMultiple, Mode::CdOnly, Mode::Cba] {
                log::info!("running {}", regime.as_str());
                reports.push(run_regime(&cfg.clone().with_regime(regime))?.report);
            }
            let cmp = compare_regimes(&reports)?;
            std::fs::write(exp.out.join("comparison.csv"), cmp.to_csv())?;
            write_json(&exp.out.join("comparison.json"), &cmp)?;
            write_json(&exp.out.join("plot.json"), &cmp.plot_document())?;
            println!("ce_s threshold {}", sweep.best_threshold);
            print!("{}", cmp.to_csv());
        }
        Command::Sweep { exp, grid } => {
            let cfg = exp.config()?;
            let grid = if grid.is_empty() { cfg.threshold_grid.clone() } else { grid };
            let sweep = sweep_fixed_threshold(&grid, &cfg)?;
            write_json(&exp.out.join("sweep.json"), &sweep)?;
            println!("threshold,completed,demonstrations,final_collisions,distance_to_teacher");
            for (t, r) in &sweep.trials {
                println!(
                    "{t},{},{},{},{:.4}",
                    r.completed,
                    r.total_demonstrations,
                    r.final_evaluation.collisions,
                    r.distance_to_teacher()
                );
            }
            println!("best {}", sweep.best_threshold);
        }
        Command::Replay { archive } => {
            let record = SessionRecord::load(&archive)?;
            let report = replay(&record)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            if !report.identical() {
                return Ok(ExitCode::from(2));
            }
        }
        Command::CalibrateTraffic {
            target,
            timesteps,
            template,
            out,
        } => {
            if !(0.0..1.0).contains(&target) {
                bail!("target must be in [0, 1)");
            }
            let template = match template {
                Some(p) => TrafficPattern::from_json(&std::fs::read_to_string(&p)?)?,
                None => TrafficPattern::evaluation(),
            };
            let (pattern, rate) = calibrate_center_rate(&template, target, timesteps);
            let check = evaluate(&mut ForwardDriver, &pattern, SensorConfig::default(), timesteps);
            let teacher = teacher_evaluation(&ExperimentConfig {
                evaluation_pattern: pattern.clone(),
                eval_timesteps: timesteps,
                ..ExperimentConfig::default()
            });
            eprintln!(
                "center rate {} gives baseline collision rate {rate:.4} (recheck {:.4}); oracle collision rate {:.4}",
                pattern.lane_rates[1], check.collision_rate, teacher.collision_rate
            );
            let text = pattern.to_json()?;
            match out {
                Some(p) => std::fs::write(&p, text + "\n")?,
                None => println!("{text}"),
            }
        }
        Command::Serve {
            addr,
            session_dir,
            session,
            no_autostart,
        } => {
            let default_session: SessionConfig = match session {
                Some(p) => read_json(&p)?,
                None => SessionConfig::default(),
            };
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(cba_service::run(
                addr,
                ServerConfig {
                    session_dir,
                    default_session,
                    autostart: !no_autostart,
                },
            ))?;
        }
    }
    Ok(ExitCode::SUCCESS)
}
