//! Deep Q-network baseline sharing preprocessing and replay with the dAIF agent.

use std::path::Path;

use daif_env::NUM_ACTIONS;
use daif_nn::{checkpoint, LayerSpec, Mode, OptimizerState, ParamStore, Sequential, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::losses::{self, argmax};
use crate::preprocess::{stacks_to_tensor, ObservationStack, N_SCREENS, OBS_SIDE};
use crate::replay::{ReplayMemory, TargetSync};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DqnConfig {
    /// Output channels of the three convolutions.
    pub channels: [usize; 3],
    pub hidden: usize,
    pub lr: f32,
    pub gamma: f32,
    pub epsilon_start: f32,
    pub epsilon_min: f32,
    pub epsilon_decay: f32,
    pub capacity: usize,
    pub batch: usize,
    pub freeze_period: u64,
    pub learn_every: u64,
}

impl Default for DqnConfig {
    fn default() -> Self {
        Self {
            channels: [64, 128, 256],
            hidden: 512,
            lr: 1e-5,
            gamma: 0.99,
            epsilon_start: 0.15,
            epsilon_min: 0.05,
            epsilon_decay: 0.00015,
            capacity: 300_000,
            batch: 250,
            freeze_period: 50,
            learn_every: 1,
        }
    }
}

impl DqnConfig {
    pub fn q_specs(&self) -> Vec<LayerSpec> {
        let [c0, c1, c2] = self.channels;
        use LayerSpec::*;
        vec![
            Conv { out_channels: c0, kernel: 4, stride: 2 },
            BatchNorm,
            MaxPool { kernel: 2, stride: 2 },
            Relu,
            Conv { out_channels: c1, kernel: 4, stride: 2 },
            BatchNorm,
            MaxPool { kernel: 2, stride: 2 },
            Relu,
            Conv { out_channels: c2, kernel: 2, stride: 2 },
            Relu,
            Flatten,
            Dense { out_features: self.hidden },
            Dense { out_features: NUM_ACTIONS },
        ]
    }

    /// `max(ε_min, ε_0 − decay · episode)`, constant within an episode.
    pub fn epsilon(&self, episode: u64) -> f32 {
        epsilon_schedule(episode, self.epsilon_start, self.epsilon_decay, self.epsilon_min)
    }
}

pub fn epsilon_schedule(episode: u64, start: f32, decay: f32, min: f32) -> f32 {
    let v = start as f64 - decay as f64 * episode as f64;
    // f64 keeps the linear part exact to f32 precision at every episode
    (v.max(min as f64)) as f32
}

/// Q-target `r + γ max_a Q_target(s′, a)`, without the bootstrap on terminal steps.
pub fn q_target(reward: f32, next_q_target: &[f32], done: bool, gamma: f32) -> f32 {
    if done {
        reward
    } else {
        let m = next_q_target.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        reward + gamma * m
    }
}

#[derive(Clone, Debug)]
pub struct StackTransition {
    pub state: ObservationStack,
    pub action: usize,
    pub reward: f32,
    pub next: ObservationStack,
    pub done: bool,
}

#[derive(Clone, Debug)]
pub struct QNetwork {
    pub store: ParamStore,
    pub net: Sequential,
}

impl QNetwork {
    pub fn new(config: &DqnConfig, rng: &mut impl Rng) -> Result<Self> {
        let mut store = ParamStore::new();
        let net = Sequential::new(&mut store, "q", &[N_SCREENS, OBS_SIDE, OBS_SIDE], &config.q_specs(), rng)?;
        Ok(Self { store, net })
    }

    /// Evaluation-mode Q-values, row-major `(B, 11)`, using weights from `store`.
    pub fn eval_with(&self, store: &ParamStore, x: Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let y = self.net.forward(&mut tape, store, xv, Mode::Eval)?;
        Ok(tape.value(y).clone())
    }

    pub fn q_values(&self, stack: &ObservationStack) -> Result<Vec<f32>> {
        Ok(self.eval_with(&self.store, stacks_to_tensor(std::iter::once(stack)))?.into_data())
    }
}

#[derive(Clone, Debug)]
pub struct DqnAgent {
    pub config: DqnConfig,
    pub q: QNetwork,
    pub q_target: ParamStore,
    opt: OptimizerState,
    pub sync: TargetSync,
    pub replay: ReplayMemory<StackTransition>,
    rng: ChaCha8Rng,
    env_steps: u64,
    updates: u64,
}

impl DqnAgent {
    pub fn new(config: DqnConfig, seed: u64) -> Result<Self> {
        if config.batch == 0 || config.capacity < config.batch || config.learn_every == 0 {
            return Err(CoreError::Config(format!("invalid DQN hyperparameters: {config:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = QNetwork::new(&config, &mut rng)?;
        Ok(Self {
            q_target: q.store.clone(),
            opt: OptimizerState::adam(config.lr, &q.store),
            sync: TargetSync::new(config.freeze_period),
            replay: ReplayMemory::new(config.capacity),
            q,
            config,
            rng,
            env_steps: 0,
            updates: 0,
        })
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// ε-greedy with ε drawn from the per-episode schedule.
    pub fn act(&mut self, stack: &ObservationStack, episode: u64) -> Result<usize> {
        let eps = self.config.epsilon(episode);
        self.act_with_epsilon(stack, eps)
    }

    pub fn act_with_epsilon(&mut self, stack: &ObservationStack, eps: f32) -> Result<usize> {
        let explore = eps > 0.0 && self.rng.random::<f32>() < eps;
        if explore {
            Ok(self.rng.random_range(0..NUM_ACTIONS))
        } else {
            Ok(argmax(&self.q.q_values(stack)?))
        }
    }

    pub fn observe(&mut self, t: StackTransition) -> Result<Option<f32>> {
        self.replay.push(t);
        self.env_steps += 1;
        if self.env_steps % self.config.learn_every != 0 || !self.replay.is_ready(self.config.batch) {
            return Ok(None);
        }
        let batch: Vec<StackTransition> = self
            .replay
            .sample(self.config.batch, &mut self.rng)
            .expect("readiness checked")
            .into_iter()
            .cloned()
            .collect();
        let refs: Vec<&StackTransition> = batch.iter().collect();
        self.q_learn_step(&refs).map(Some)
    }

    pub fn q_learn_step(&mut self, batch: &[&StackTransition]) -> Result<f32> {
        let next = stacks_to_tensor(batch.iter().map(|t| &t.next));
        let next_q = self.q.eval_with(&self.q_target, next)?;
        let targets: Vec<f32> = batch
            .iter()
            .zip(next_q.rows())
            .map(|(t, row)| q_target(t.reward, row, t.done, self.config.gamma))
            .collect();
        let actions: Vec<usize> = batch.iter().map(|t| t.action).collect();

        let mut tape = Tape::new();
        let x = tape.constant(stacks_to_tensor(batch.iter().map(|t| &t.state)));
        let q = self.q.net.forward(&mut tape, &self.q.store, x, Mode::Train)?;
        let loss = losses::value_loss(&mut tape, q, &actions, &targets)?;
        let lv = tape.value(loss).item();
        if !lv.is_finite() {
            return Err(CoreError::NonFinite {
                what: "Q loss",
                detail: format!("loss {lv} on a batch of {}", batch.len()),
            });
        }
        let grads = tape.backward(loss)?;
        let bn = tape.take_bn_updates();
        self.opt.step(&mut self.q.store, &grads);
        self.q.store.apply_bn_updates(&bn);
        self.sync.tick(&self.q.store, &mut self.q_target);
        self.updates += 1;
        Ok(lv)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let named = self.q.store.named_tensors("").chain(
            self.q_target
                .named_tensors("")
                .map(|(n, t)| (n.replacen("q.", "q_target.", 1), t)),
        );
        Ok(checkpoint::save(path, named)?)
    }

    pub fn load(&mut self, path: &Path) -> Result<()> {
        let map = checkpoint::load(path)?;
        self.q.store.load_named("", &map)?;
        let target = map
            .iter()
            .filter_map(|(k, v)| k.strip_prefix("q_target.").map(|rest| (format!("q.{rest}"), v.clone())))
            .collect();
        self.q_target.load_named("", &target)?;
        Ok(())
    }
}
