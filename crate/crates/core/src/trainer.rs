//! Training, evaluation, VAE pre-training and demo recording loops.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use daif_env::{RaceEnv, ScriptedDriver, NUM_ACTIONS};
use daif_nn::{Mode, OptimizerState, Tape};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{AgentKind, PretrainConfig, RunConfig};
use crate::daif::{load_vae, ActMode, DaifAgent, LatentTransition, LossBreakdown};
use crate::demo::{Demo, DemoRecord, DemoWriter};
use crate::dqn::{DqnAgent, StackTransition};
use crate::error::{CoreError, Result};
use crate::preprocess::{preprocess, stacks_to_tensor, ObservationStack};
use crate::vae::{Vae, VaeConfig};

/// `0.1 · cr + 0.9 · prev`.
pub fn mar_update(prev_mar: f64, cr: f64) -> f64 {
    0.1 * cr + 0.9 * prev_mar
}

/// Per-episode track seed, decorrelated from the run seed.
pub fn episode_seed(run_seed: u64, episode: u64) -> u64 {
    let mut z = run_seed ^ episode.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub episode: u64,
    pub steps: u32,
    pub cumulative_reward: f64,
    pub mar: f64,
    pub wall_ms: u64,
}

pub const METRICS_HEADER: &str = "episode,steps,cumulative_reward,mar,wall_ms";

impl EpisodeMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.episode, self.steps, self.cumulative_reward, self.mar, self.wall_ms
        )
    }
}

/// Per-update loss record for the JSON-lines log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub episode: u64,
    pub update: u64,
    #[serde(flatten)]
    pub losses: LossBreakdown,
}

pub enum Agent {
    Daif(Box<DaifAgent>),
    Dqn(Box<DqnAgent>),
    Random(ChaCha8Rng),
}

impl Agent {
    /// Builds the agent named in `config`. dAIF requires `config.vae_checkpoint`.
    pub fn from_config(config: &RunConfig) -> Result<Self> {
        match config.agent {
            AgentKind::Daif => {
                let path = config.vae_checkpoint.as_ref().ok_or_else(|| {
                    CoreError::Config("dAIF training needs a pre-trained VAE checkpoint (vae_checkpoint)".into())
                })?;
                let vae = load_vae(&config.vae, path, config.seed)?;
                Ok(Self::Daif(Box::new(DaifAgent::new(config.daif.clone(), vae, config.seed)?)))
            }
            AgentKind::Dqn => Ok(Self::Dqn(Box::new(DqnAgent::new(config.dqn.clone(), config.seed)?))),
            AgentKind::Random => Ok(Self::Random(ChaCha8Rng::seed_from_u64(config.seed))),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        match self {
            Self::Daif(a) => a.save(path),
            Self::Dqn(a) => a.save(path),
            Self::Random(_) => Ok(()),
        }
    }

    pub fn load(&mut self, path: &Path) -> Result<()> {
        match self {
            Self::Daif(a) => a.load(path),
            Self::Dqn(a) => a.load(path),
            Self::Random(_) => Ok(()),
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Phase {
    Train,
    Eval,
}

struct EpisodeOutcome {
    steps: u32,
    cumulative_reward: f64,
}

fn run_episode(
    agent: &mut Agent,
    env: &mut RaceEnv,
    seed: u64,
    episode: u64,
    phase: Phase,
    mut on_loss: impl FnMut(&LossBreakdown) -> Result<()>,
) -> Result<EpisodeOutcome> {
    let frame = env.reset(seed)?;
    let mut stack = ObservationStack::new(preprocess(&frame));
    let mut latent = match agent {
        Agent::Daif(a) => Some(a.encode(&stack)?),
        _ => None,
    };
    let mut cr = 0.0f64;
    loop {
        let action = match agent {
            Agent::Random(rng) => rng.random_range(0..NUM_ACTIONS),
            Agent::Dqn(a) => match phase {
                Phase::Train => a.act(&stack, episode)?,
                Phase::Eval => a.act_with_epsilon(&stack, 0.0)?,
            },
            Agent::Daif(a) => {
                let mode = if phase == Phase::Train { ActMode::Train } else { ActMode::Eval };
                a.select_action(latent.as_ref().expect("dAIF latent"), mode)?
            }
        };
        let step = env.step(action)?;
        cr += step.reward as f64;
        let next = stack.pushed(preprocess(&step.frame));
        match agent {
            Agent::Daif(a) => {
                let next_latent = a.encode(&next)?;
                if phase == Phase::Train {
                    let keep_stack = a.config.vae_loss_samples > 0;
                    let t = LatentTransition {
                        state: latent.take().expect("dAIF latent"),
                        action,
                        reward: step.reward,
                        next: next_latent.clone(),
                        done: step.done,
                        stack: keep_stack.then(|| stack.clone()),
                    };
                    if let Some(l) = a.observe(t)? {
                        on_loss(&l)?;
                    }
                }
                latent = Some(next_latent);
            }
            Agent::Dqn(a) if phase == Phase::Train => {
                a.observe(StackTransition {
                    state: stack.clone(),
                    action,
                    reward: step.reward,
                    next: next.clone(),
                    done: step.done,
                })?;
            }
            _ => {}
        }
        stack = next;
        if step.done {
            return Ok(EpisodeOutcome {
                steps: step.info.step_index,
                cumulative_reward: cr,
            });
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub metrics: Vec<EpisodeMetrics>,
    pub metrics_path: PathBuf,
    pub final_checkpoint: Option<PathBuf>,
}

impl TrainReport {
    pub fn final_mar(&self) -> f64 {
        self.metrics.last().map_or(0.0, |m| m.mar)
    }
}

/// Trains the configured agent, writing `metrics.csv`, `losses.jsonl`
/// (dAIF), periodic checkpoints and `config.json` into `config.out_dir`.
pub fn train(config: &RunConfig) -> Result<TrainReport> {
    config.validate()?;
    let mut agent = Agent::from_config(config)?;
    train_agent(config, &mut agent)
}

pub fn train_agent(config: &RunConfig, agent: &mut Agent) -> Result<TrainReport> {
    let out = &config.out_dir;
    std::fs::create_dir_all(out)?;
    config.save(&out.join("config.json"))?;
    let metrics_path = out.join("metrics.csv");
    let mut csv = BufWriter::new(File::create(&metrics_path)?);
    writeln!(csv, "{METRICS_HEADER}")?;
    let mut losses = match agent {
        Agent::Daif(_) if config.loss_log_every > 0 => Some(BufWriter::new(File::create(out.join("losses.jsonl"))?)),
        _ => None,
    };

    let mut env = RaceEnv::new(config.env_config())?;
    let start = Instant::now();
    let mut metrics: Vec<EpisodeMetrics> = Vec::with_capacity(config.episodes as usize);
    let mut updates = 0u64;
    let mut final_checkpoint = None;
    for episode in 0..config.episodes {
        let outcome = run_episode(
            agent,
            &mut env,
            episode_seed(config.seed, episode),
            episode,
            Phase::Train,
            |l| {
                updates += 1;
                if let Some(w) = losses.as_mut() {
                    if updates % config.loss_log_every == 0 {
                        let rec = LossRecord {
                            episode,
                            update: updates,
                            losses: l.clone(),
                        };
                        serde_json::to_writer(&mut *w, &rec)?;
                        w.write_all(b"\n")?;
                    }
                }
                Ok(())
            },
        )?;
        let mar = match metrics.last() {
            Some(prev) => mar_update(prev.mar, outcome.cumulative_reward),
            None => outcome.cumulative_reward,
        };
        let m = EpisodeMetrics {
            episode,
            steps: outcome.steps,
            cumulative_reward: outcome.cumulative_reward,
            mar,
            wall_ms: if config.record_wall_time {
                start.elapsed().as_millis() as u64
            } else {
                0
            },
        };
        writeln!(csv, "{}", m.csv_row())?;
        log::info!(
            "episode {episode}: steps {} reward {:.1} mar {:.1}",
            m.steps,
            m.cumulative_reward,
            m.mar
        );
        metrics.push(m);
        let last = episode + 1 == config.episodes;
        if config.checkpoint_every > 0 && ((episode + 1) % config.checkpoint_every == 0 || last) {
            if !matches!(agent, Agent::Random(_)) {
                let path = out.join(format!("checkpoint_ep{:05}.fepr", episode + 1));
                agent.save(&path)?;
                final_checkpoint = Some(path);
            }
        }
    }
    csv.flush()?;
    if let Some(w) = losses.as_mut() {
        w.flush()?;
    }
    Ok(TrainReport {
        metrics,
        metrics_path,
        final_checkpoint,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mean: f64,
    pub std: f64,
    pub rewards: Vec<f64>,
}

impl EvalReport {
    pub fn from_rewards(rewards: Vec<f64>) -> Self {
        let n = rewards.len().max(1) as f64;
        let mean = rewards.iter().sum::<f64>() / n;
        let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean,
            std: var.sqrt(),
            rewards,
        }
    }
}

/// Greedy evaluation over `episodes` tracks derived from `config.seed`.
pub fn evaluate(config: &RunConfig, agent: &mut Agent, episodes: u64) -> Result<EvalReport> {
    let mut env = RaceEnv::new(config.env_config())?;
    let eval_seed = config.seed ^ 0x5EED_0000_0000_0001;
    let mut rewards = Vec::with_capacity(episodes as usize);
    for e in 0..episodes {
        let o = run_episode(agent, &mut env, episode_seed(eval_seed, e), e, Phase::Eval, |_| Ok(()))?;
        rewards.push(o.cumulative_reward);
    }
    Ok(EvalReport::from_rewards(rewards))
}

/// Drives the scripted controller for exactly `steps` steps, resetting on
/// episode end, and returns the recording.
pub fn record_scripted(config: &RunConfig, steps: usize, epsilon: f64) -> Result<Demo> {
    let mut env = RaceEnv::new(config.env_config())?;
    let mut driver = ScriptedDriver::new(epsilon, config.seed);
    let mut demo = Demo::default();
    let mut episode = 0u64;
    let mut frame = env.reset(episode_seed(config.seed, episode))?;
    while demo.records.len() < steps {
        let action = driver.act(&env);
        let observation = preprocess(&frame);
        let s = env.step(action)?;
        demo.records.push(DemoRecord {
            action: action as u8,
            reward: s.reward,
            done: s.done,
            observation,
        });
        frame = if s.done {
            episode += 1;
            env.reset(episode_seed(config.seed, episode))?
        } else {
            s.frame
        };
    }
    Ok(demo)
}

pub fn record_scripted_to(config: &RunConfig, steps: usize, epsilon: f64, path: &Path) -> Result<usize> {
    let demo = record_scripted(config, steps, epsilon)?;
    let mut w = DemoWriter::create(path)?;
    for r in &demo.records {
        w.push(r)?;
    }
    w.finish()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_bce: f64,
    pub train_kl: f64,
    pub heldout_bce: f64,
    pub heldout_kl: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub stacks: usize,
    pub heldout: usize,
    pub initial: EpochStats,
    pub epochs: Vec<EpochStats>,
}

impl PretrainReport {
    /// Relative drop of held-out BCE from initialization to the best epoch.
    pub fn best_heldout_drop(&self) -> f64 {
        let best = self
            .epochs
            .iter()
            .map(|e| e.heldout_bce)
            .fold(self.initial.heldout_bce, f64::min);
        1.0 - best / self.initial.heldout_bce
    }
}

/// Mean BCE and KL per stack over `stacks`, evaluation mode, `z = s_μ`.
pub fn vae_scores(vae: &Vae, stacks: &[ObservationStack], chunk: usize) -> Result<(f64, f64)> {
    let mut bce = 0.0;
    let mut kl = 0.0;
    for part in stacks.chunks(chunk.max(1)) {
        let x = stacks_to_tensor(part.iter());
        let eps = daif_nn::Tensor::zeros(&[part.len(), vae.latent()]);
        let mut tape = Tape::new();
        let l = vae.forward_loss(&mut tape, &x, &eps, Mode::Eval)?;
        bce += tape.value(l.bce).item() as f64 * part.len() as f64;
        kl += tape.value(l.kl).item() as f64 * part.len() as f64;
    }
    let n = stacks.len().max(1) as f64;
    Ok((bce / n, kl / n))
}

/// Fits a fresh VAE to the stacks of `demo`. With `epochs = 0` the returned
/// network is exactly its initialization.
pub fn pretrain_vae(vae_config: &VaeConfig, cfg: &PretrainConfig, demo: &Demo, seed: u64) -> Result<(Vae, PretrainReport)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vae = Vae::new(vae_config.clone(), &mut rng)?;
    let stacks = demo.stacks()?;
    let n_hold = ((stacks.len() as f64 * cfg.holdout as f64).round() as usize).min(stacks.len() - 1);
    let (train_set, held) = stacks.split_at(stacks.len() - n_hold);
    let score_chunk = 64;
    let (hb, hk) = vae_scores(&vae, held, score_chunk)?;
    let initial = EpochStats {
        epoch: 0,
        train_bce: f64::NAN,
        train_kl: f64::NAN,
        heldout_bce: hb,
        heldout_kl: hk,
    };
    log::info!("pretrain: {} train / {} held-out stacks, initial held-out BCE {hb:.1}", train_set.len(), held.len());
    let mut opt = OptimizerState::adam(cfg.lr, &vae.store);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut sb, mut sk, mut seen) = (0.0, 0.0, 0usize);
        for idx in order.chunks(cfg.batch.max(2)) {
            if idx.len() < 2 {
                continue; // batch statistics need more than one sample
            }
            let x = stacks_to_tensor(idx.iter().map(|&i| &train_set[i]));
            let eps = vae.sample_eps(idx.len(), &mut rng);
            let mut tape = Tape::new();
            let l = vae.forward_loss(&mut tape, &x, &eps, Mode::Train)?;
            let total = tape.value(l.total).item();
            if !total.is_finite() {
                return Err(CoreError::NonFinite {
                    what: "VAE loss",
                    detail: format!("epoch {epoch}"),
                });
            }
            let grads = tape.backward(l.total)?;
            let bn = tape.take_bn_updates();
            opt.step(&mut vae.store, &grads);
            vae.store.apply_bn_updates(&bn);
            sb += tape.value(l.bce).item() as f64 * idx.len() as f64;
            sk += tape.value(l.kl).item() as f64 * idx.len() as f64;
            seen += idx.len();
        }
        let (hb, hk) = vae_scores(&vae, held, score_chunk)?;
        let stats = EpochStats {
            epoch,
            train_bce: sb / seen.max(1) as f64,
            train_kl: sk / seen.max(1) as f64,
            heldout_bce: hb,
            heldout_kl: hk,
        };
        log::info!(
            "pretrain epoch {epoch}: train BCE {:.1} KL {:.2} | held-out BCE {hb:.1} KL {hk:.2}",
            stats.train_bce,
            stats.train_kl
        );
        epochs.push(stats);
        if let Some(drop) = cfg.stop_at_drop {
            if hb <= (1.0 - drop as f64) * initial.heldout_bce {
                break;
            }
        }
    }
    vae.store.set_frozen(true);
    Ok((
        vae,
        PretrainReport {
            stacks: stacks.len(),
            heldout: held.len(),
            initial,
            epochs,
        },
    ))
}

pub fn save_vae(vae: &Vae, path: &Path) -> Result<()> {
    Ok(daif_nn::checkpoint::save(path, vae.store.named_tensors(""))?)
}
