use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use daif_cli::server::{self, ServeOptions};
use daif_core::config::{AgentKind, RunConfig};
use daif_core::demo::Demo;
use daif_core::trainer::{self, Agent};

#[derive(Parser)]
#[command(name = "daif", version, about = "Deep active inference and DQN agents for pixel-based car racing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON run configuration; missing fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Start from the small circular-track preset instead of the full-size defaults.
    #[arg(long, conflicts_with = "config")]
    desk: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the observation VAE to a demonstration file.
    PretrainVae {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        demo: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Train an agent, writing metrics.csv and checkpoints.
    Train {
        #[command(flatten)]
        common: Common,
        /// Episode length cap.
        #[arg(long)]
        steps: Option<u32>,
        #[arg(long)]
        agent: Option<AgentKind>,
        #[arg(long)]
        episodes: Option<u64>,
        /// Pre-trained VAE weights (dAIF only).
        #[arg(long)]
        vae: Option<PathBuf>,
        /// Resume from an agent checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Greedy evaluation of a checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Episode length cap.
        #[arg(long)]
        steps: Option<u32>,
        #[arg(long)]
        agent: Option<AgentKind>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        episodes: u64,
        #[arg(long)]
        vae: Option<PathBuf>,
    },
    /// Record a demonstration with the scripted driver.
    Record {
        #[command(flatten)]
        common: Common,
        /// Number of records to write.
        #[arg(long, default_value_t = 10_000)]
        steps: usize,
        /// Probability of a uniformly random action per step.
        #[arg(long, default_value_t = 0.1)]
        epsilon: f64,
    },
    /// Serve the interactive websocket session at ws://127.0.0.1:<port>/ws.
    Serve {
        #[command(flatten)]
        common: Common,
        /// Episode length cap.
        #[arg(long)]
        steps: Option<u32>,
        #[arg(long, default_value_t = 8765)]
        port: u16,
        #[arg(long, default_value_t = 33)]
        tick_ms: u64,
    },
}

fn load_config(c: &Common) -> anyhow::Result<RunConfig> {
    let mut cfg = match (&c.config, c.desk) {
        (Some(path), _) => RunConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
        (None, true) => RunConfig::desk(AgentKind::Daif, 0),
        (None, false) => RunConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(o) = &c.out {
        cfg.out_dir = o.clone();
    }
    Ok(cfg)
}

fn with_steps(mut cfg: RunConfig, steps: Option<u32>) -> RunConfig {
    if let Some(s) = steps {
        cfg.max_steps = s;
    }
    cfg
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::PretrainVae { common, demo, epochs } => {
            let mut cfg = load_config(&common)?;
            if let Some(e) = epochs {
                cfg.pretrain.epochs = e;
            }
            let demo = Demo::load(&demo).with_context(|| format!("reading {}", demo.display()))?;
            let (vae, report) = trainer::pretrain_vae(&cfg.vae, &cfg.pretrain, &demo, cfg.seed)?;
            std::fs::create_dir_all(&cfg.out_dir)?;
            let ckpt = cfg.out_dir.join("vae.fepr");
            trainer::save_vae(&vae, &ckpt)?;
            std::fs::write(cfg.out_dir.join("pretrain_report.json"), serde_json::to_string_pretty(&report)?)?;
            println!(
                "held-out BCE {:.1} -> {:.1} ({:.1}% drop); checkpoint {}",
                report.initial.heldout_bce,
                report.epochs.last().map_or(report.initial.heldout_bce, |e| e.heldout_bce),
                100.0 * report.best_heldout_drop(),
                ckpt.display()
            );
        }
        Command::Train {
            common,
            steps,
            agent,
            episodes,
            vae,
            checkpoint,
        } => {
            let mut cfg = with_steps(load_config(&common)?, steps);
            if let Some(a) = agent {
                cfg.agent = a;
            }
            if let Some(e) = episodes {
                cfg.episodes = e;
            }
            if vae.is_some() {
                cfg.vae_checkpoint = vae;
            }
            cfg.validate()?;
            let mut agent = Agent::from_config(&cfg)?;
            if let Some(c) = checkpoint {
                agent.load(&c)?;
            }
            let report = trainer::train_agent(&cfg, &mut agent)?;
            println!(
                "{} episodes, final MAR {:.1}; metrics {}",
                report.metrics.len(),
                report.final_mar(),
                report.metrics_path.display()
            );
        }
        Command::Eval {
            common,
            steps,
            agent,
            checkpoint,
            episodes,
            vae,
        } => {
            let mut cfg = with_steps(load_config(&common)?, steps);
            if let Some(a) = agent {
                cfg.agent = a;
            }
            if vae.is_some() {
                cfg.vae_checkpoint = vae;
            }
            let mut agent = Agent::from_config(&cfg)?;
            match (checkpoint, cfg.agent) {
                (Some(c), _) => agent.load(&c)?,
                (None, AgentKind::Random) => {}
                (None, _) => bail!("--checkpoint is required for a learning agent"),
            }
            let report = trainer::evaluate(&cfg, &mut agent, episodes)?;
            println!("{}", serde_json::to_string(&report)?);
        }
        Command::Record { common, steps, epsilon } => {
            let cfg = load_config(&common)?;
            let path = common.out.clone().unwrap_or_else(|| PathBuf::from("demo.fepd"));
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent)?;
            }
            let n = trainer::record_scripted_to(&cfg, steps, epsilon, &path)?;
            println!("wrote {n} records to {}", path.display());
        }
        Command::Serve {
            common,
            steps,
            port,
            tick_ms,
        } => {
            let cfg = with_steps(load_config(&common)?, steps);
            let options = ServeOptions {
                env: cfg.env_config(),
                seed: cfg.seed,
                tick: Duration::from_millis(tick_ms.max(1)),
                record_dir: common.out.clone().unwrap_or_else(|| Path::new("recordings").to_path_buf()),
            };
            let rt = tokio::runtime::Builder::new_current_thread().enable_all().build()?;
            rt.block_on(async move {
                let (listener, addr) = server::bind(port).await?;
                println!("serving ws://{addr}/ws");
                tokio::select! {
                    r = server::serve(listener, options) => r?,
                    _ = tokio::signal::ctrl_c() => {}
                }
                anyhow::Ok(())
            })?;
        }
    }
    Ok(())
}
