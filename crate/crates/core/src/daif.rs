//! Deep active inference agent: frozen VAE, transition, policy and value
//! networks, trained by minimizing variational free energy with a
//! bootstrapped expected-free-energy value.

use std::collections::BTreeMap;
use std::path::Path;

use daif_nn::{checkpoint, LayerSpec, Mode, OptimizerState, ParamStore, Sequential, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::losses::{self, argmax, boltzmann_prior, efe_target, state_kl_scalar};
use crate::preprocess::{stacks_to_tensor, ObservationStack};
use crate::replay::{ReplayMemory, TargetSync};
use crate::vae::{Vae, VaeConfig};
use daif_env::NUM_ACTIONS;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DaifConfig {
    pub hidden: usize,
    /// Precision of the Boltzmann prior over EFE.
    pub gamma: f64,
    pub beta: f32,
    /// The VAE term of the free energy is divided by this.
    pub alpha: f32,
    pub lr_transition: f32,
    pub lr_policy: f32,
    pub lr_value: f32,
    pub lr_vae: f32,
    pub capacity: usize,
    pub batch: usize,
    pub freeze_period: u64,
    /// Learn once every this many environment steps.
    pub learn_every: u64,
    /// Sub-batch size for the (reported, frozen) VAE term; 0 skips it.
    pub vae_loss_samples: usize,
    /// Weight on the state-KL term of the EFE target. 1 is the full EFE;
    /// 0 reduces the target to discounted negative reward.
    pub efe_kl_weight: f32,
}

impl Default for DaifConfig {
    fn default() -> Self {
        Self {
            hidden: 512,
            gamma: 12.0,
            beta: 0.99,
            alpha: 18000.0,
            lr_transition: 1e-3,
            lr_policy: 1e-4,
            lr_value: 1e-5,
            lr_vae: 5e-6,
            capacity: 100_000,
            batch: 250,
            freeze_period: 50,
            learn_every: 1,
            vae_loss_samples: 4,
            efe_kl_weight: 1.0,
        }
    }
}

impl DaifConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.gamma >= 0.0
            && self.beta >= 0.0
            && self.beta <= 1.0
            && self.alpha > 0.0
            && self.hidden > 0
            && self.batch > 0
            && self.capacity >= self.batch
            && self.freeze_period > 0
            && self.learn_every > 0;
        if ok {
            Ok(())
        } else {
            Err(CoreError::Config(format!("invalid dAIF hyperparameters: {self:?}")))
        }
    }
}

/// Diagonal-Gaussian belief `(s_μ, logΣ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentState {
    pub mu: Vec<f32>,
    pub logvar: Vec<f32>,
}

impl LatentState {
    pub fn new(mu: Vec<f32>, logvar: Vec<f32>) -> Self {
        assert_eq!(mu.len(), logvar.len());
        Self { mu, logvar }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// Network input `[s_μ, Σ]` with `Σ = exp(logΣ)`.
    pub fn write_input(&self, out: &mut [f32]) {
        let l = self.dim();
        out[..l].copy_from_slice(&self.mu);
        for (o, &lv) in out[l..2 * l].iter_mut().zip(&self.logvar) {
            *o = lv.exp();
        }
    }
}

#[derive(Clone, Debug)]
pub struct LatentTransition {
    pub state: LatentState,
    pub action: usize,
    pub reward: f32,
    pub next: LatentState,
    pub done: bool,
    /// Kept only to report the VAE term.
    pub stack: Option<ObservationStack>,
}

/// Per-update loss values.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub vae: f32,
    pub transition: f32,
    pub policy: f32,
    pub value: f32,
    /// `vae / α + transition + policy`.
    pub total: f32,
}

/// Two-layer perceptron `in → hidden → out` with an optional softmax.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub store: ParamStore,
    pub net: Sequential,
}

impl Mlp {
    pub fn new(name: &str, input: usize, hidden: usize, output: usize, softmax: bool, rng: &mut impl Rng) -> Result<Self> {
        let mut specs = vec![
            LayerSpec::Dense { out_features: hidden },
            LayerSpec::Relu,
            LayerSpec::Dense { out_features: output },
        ];
        if softmax {
            specs.push(LayerSpec::Softmax);
        }
        let mut store = ParamStore::new();
        let net = Sequential::new(&mut store, name, &[input], &specs, rng)?;
        Ok(Self { store, net })
    }

    pub fn forward(&self, tape: &mut Tape, x: daif_nn::Var) -> Result<daif_nn::Var> {
        Ok(self.net.forward(tape, &self.store, x, Mode::Train)?)
    }

    /// Gradient-free forward pass using parameters from `store` (same layout).
    pub fn eval_with(&self, store: &ParamStore, x: Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let y = self.net.forward(&mut tape, store, xv, Mode::Eval)?;
        Ok(tape.value(y).clone())
    }

    pub fn eval(&self, x: Tensor) -> Result<Tensor> {
        self.eval_with(&self.store, x)
    }
}

pub enum ActMode {
    /// Sample from the policy.
    Train,
    /// Most probable action, lowest index on ties.
    Eval,
}

/// Draws an index from `probs` with one uniform variate.
pub fn sample_categorical(probs: &[f32], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0f64;
    for (i, &p) in probs.iter().enumerate() {
        acc += p as f64;
        if u < acc {
            return i;
        }
    }
    // rounding left a sliver above the cumulative sum: last positive entry
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

pub fn select_from_policy(probs: &[f32], mode: ActMode, rng: &mut impl Rng) -> usize {
    match mode {
        ActMode::Train => sample_categorical(probs, rng),
        ActMode::Eval => argmax(probs),
    }
}

#[derive(Clone, Debug)]
pub struct DaifAgent {
    pub config: DaifConfig,
    pub vae: Vae,
    pub transition: Mlp,
    pub policy: Mlp,
    pub value: Mlp,
    pub value_target: ParamStore,
    opt_transition: OptimizerState,
    opt_policy: OptimizerState,
    opt_value: OptimizerState,
    pub sync: TargetSync,
    pub replay: ReplayMemory<LatentTransition>,
    rng: ChaCha8Rng,
    env_steps: u64,
    updates: u64,
}

impl DaifAgent {
    /// Builds the agent around `vae`, which is frozen from here on.
    pub fn new(config: DaifConfig, mut vae: Vae, seed: u64) -> Result<Self> {
        config.validate()?;
        vae.store.set_frozen(true);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = vae.latent();
        let h = config.hidden;
        let transition = Mlp::new("trans", 2 * l + 1, h, l, false, &mut rng)?;
        let policy = Mlp::new("policy", 2 * l, h, NUM_ACTIONS, true, &mut rng)?;
        let value = Mlp::new("value", 2 * l, h, NUM_ACTIONS, false, &mut rng)?;
        let value_target = value.store.clone();
        Ok(Self {
            opt_transition: OptimizerState::adam(config.lr_transition, &transition.store),
            opt_policy: OptimizerState::adam(config.lr_policy, &policy.store),
            opt_value: OptimizerState::adam(config.lr_value, &value.store),
            sync: TargetSync::new(config.freeze_period),
            replay: ReplayMemory::new(config.capacity),
            config,
            vae,
            transition,
            policy,
            value,
            value_target,
            rng,
            env_steps: 0,
            updates: 0,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.vae.latent()
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn encode(&self, stack: &ObservationStack) -> Result<LatentState> {
        let x = stacks_to_tensor(std::iter::once(stack));
        let (mu, lv) = self.vae.encode_eval(&x)?;
        Ok(LatentState::new(mu, lv))
    }

    fn inputs<'a>(&self, states: impl ExactSizeIterator<Item = &'a LatentState>) -> Tensor {
        let l2 = 2 * self.latent_dim();
        let b = states.len();
        let mut data = vec![0.0; b * l2];
        for (chunk, s) in data.chunks_mut(l2).zip(states) {
            s.write_input(chunk);
        }
        Tensor::new(vec![b, l2], data).expect("input shape")
    }

    pub fn policy_probs(&self, state: &LatentState) -> Result<Vec<f32>> {
        Ok(self.policy.eval(self.inputs(std::iter::once(state)))?.into_data())
    }

    pub fn efe(&self, state: &LatentState) -> Result<Vec<f32>> {
        Ok(self.value.eval(self.inputs(std::iter::once(state)))?.into_data())
    }

    pub fn select_action(&mut self, state: &LatentState, mode: ActMode) -> Result<usize> {
        let q = self.policy_probs(state)?;
        Ok(select_from_policy(&q, mode, &mut self.rng))
    }

    /// Stores a transition and, every `learn_every` calls, runs one update
    /// once the memory holds a full batch.
    pub fn observe(&mut self, t: LatentTransition) -> Result<Option<LossBreakdown>> {
        self.replay.push(t);
        self.env_steps += 1;
        if self.env_steps % self.config.learn_every != 0 || !self.replay.is_ready(self.config.batch) {
            return Ok(None);
        }
        let batch: Vec<LatentTransition> = self
            .replay
            .sample(self.config.batch, &mut self.rng)
            .expect("readiness checked")
            .into_iter()
            .cloned()
            .collect();
        let refs: Vec<&LatentTransition> = batch.iter().collect();
        self.vfe_step(&refs).map(Some)
    }

    /// One free-energy update on `batch`.
    pub fn vfe_step(&mut self, batch: &[&LatentTransition]) -> Result<LossBreakdown> {
        let b = batch.len();
        let l = self.latent_dim();
        let x = self.inputs(batch.iter().map(|t| &t.state));
        let x_next = self.inputs(batch.iter().map(|t| &t.next));
        let actions: Vec<usize> = batch.iter().map(|t| t.action).collect();

        let mut xa = Vec::with_capacity(b * (2 * l + 1));
        for (row, t) in x.rows().zip(batch) {
            xa.extend_from_slice(row);
            xa.push(t.action as f32 / 10.0);
        }
        let xa = Tensor::new(vec![b, 2 * l + 1], xa)?;
        let mu_next: Vec<f32> = batch.iter().flat_map(|t| t.next.mu.iter().copied()).collect();
        let mu_next = Tensor::new(vec![b, l], mu_next)?;

        // bootstrap ingredients, all gradient-free
        let next_q = self.policy.eval(x_next.clone())?;
        let next_g = self.value.eval_with(&self.value_target, x_next)?;

        let mut tape = Tape::new();
        let xa_v = tape.constant(xa);
        let s_hat = self.transition.forward(&mut tape, xa_v)?;
        let target_mu = tape.constant(mu_next);
        let transition_loss = losses::mse(&mut tape, s_hat, target_mu)?;

        let s_hat_vals = tape.value(s_hat).clone();
        let g_hat: Vec<f32> = batch
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let kl = state_kl_scalar(&s_hat_vals.data()[i * l..(i + 1) * l], &t.next.mu, &t.next.logvar) as f32;
                let q = &next_q.data()[i * NUM_ACTIONS..(i + 1) * NUM_ACTIONS];
                let g = &next_g.data()[i * NUM_ACTIONS..(i + 1) * NUM_ACTIONS];
                efe_target(t.reward, self.config.efe_kl_weight * kl, q, g, t.done, self.config.beta)
            })
            .collect();

        let x_v = tape.constant(x);
        let g_pred = self.value.forward(&mut tape, x_v)?;
        let value_loss = losses::value_loss(&mut tape, g_pred, &actions, &g_hat)?;

        let prior: Vec<f32> = tape
            .value(g_pred)
            .rows()
            .flat_map(|g| boltzmann_prior(g, self.config.gamma).into_iter().map(|p| p as f32))
            .collect();
        let prior = Tensor::new(vec![b, NUM_ACTIONS], prior)?;
        let q = self.policy.forward(&mut tape, x_v)?;
        let policy_loss = losses::policy_kl(&mut tape, q, &prior)?;

        let vae = self.vae_term(batch)?;
        let tl = tape.value(transition_loss).item();
        let pl = tape.value(policy_loss).item();
        let vl = tape.value(value_loss).item();
        let total = vae / self.config.alpha + tl + pl;
        if !(total.is_finite() && vl.is_finite()) {
            let fingerprint: u64 = batch.iter().fold(0xcbf2_9ce4_8422_2325, |h, t| {
                (h ^ (t.action as u64) ^ (t.reward.to_bits() as u64) << 8).wrapping_mul(0x100_0000_01b3)
            });
            log::error!("non-finite free energy (total {total}, value {vl}); batch fingerprint {fingerprint:016x}");
            return Err(CoreError::NonFinite {
                what: "free-energy loss",
                detail: format!(
                    "vae {vae}, transition {tl}, policy {pl}, value {vl}; batch fingerprint {fingerprint:016x}"
                ),
            });
        }

        let partial = tape.add(transition_loss, policy_loss)?;
        let objective = tape.add(partial, value_loss)?;
        let grads = tape.backward(objective)?;
        self.opt_transition.step(&mut self.transition.store, &grads);
        self.opt_policy.step(&mut self.policy.store, &grads);
        self.opt_value.step(&mut self.value.store, &grads);
        self.sync.tick(&self.value.store, &mut self.value_target);
        self.updates += 1;

        Ok(LossBreakdown {
            vae,
            transition: tl,
            policy: pl,
            value: vl,
            total,
        })
    }

    fn vae_term(&mut self, batch: &[&LatentTransition]) -> Result<f32> {
        let n = self.config.vae_loss_samples.min(batch.len());
        let stacks: Vec<&ObservationStack> = batch.iter().filter_map(|t| t.stack.as_ref()).take(n).collect();
        if stacks.is_empty() {
            return Ok(0.0);
        }
        let x = stacks_to_tensor(stacks.iter().copied());
        let eps = self.vae.sample_eps(stacks.len(), &mut self.rng);
        let mut tape = Tape::new();
        let l = self.vae.forward_loss(&mut tape, &x, &eps, Mode::Eval)?;
        Ok(tape.value(l.total).item())
    }

    fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = Vec::new();
        out.extend(self.vae.store.named_tensors(""));
        out.extend(self.transition.store.named_tensors(""));
        out.extend(self.policy.store.named_tensors(""));
        out.extend(self.value.store.named_tensors(""));
        out.extend(
            self.value_target
                .named_tensors("")
                .map(|(n, t)| (n.replacen("value.", "value_target.", 1), t)),
        );
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(checkpoint::save(path, self.named())?)
    }

    pub fn load(&mut self, path: &Path) -> Result<()> {
        let map = checkpoint::load(path)?;
        self.load_map(&map)
    }

    fn load_map(&mut self, map: &BTreeMap<String, Tensor>) -> Result<()> {
        self.vae.store.load_named("", map)?;
        self.transition.store.load_named("", map)?;
        self.policy.store.load_named("", map)?;
        self.value.store.load_named("", map)?;
        let target: BTreeMap<String, Tensor> = map
            .iter()
            .filter_map(|(k, v)| k.strip_prefix("value_target.").map(|rest| (format!("value.{rest}"), v.clone())))
            .collect();
        self.value_target.load_named("", &target)?;
        Ok(())
    }
}

/// Builds a VAE from `config` and loads its weights from a checkpoint.
pub fn load_vae(config: &VaeConfig, path: &Path, seed: u64) -> Result<Vae> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vae = Vae::new(config.clone(), &mut rng)?;
    let map = checkpoint::load(path)?;
    vae.store.load_named("", &map)?;
    Ok(vae)
}
