//! Convolutional VAE over observation stacks.

use daif_nn::{Dense, LayerSpec, Mode, ParamStore, Result, Sequential, Tape, Tensor, Var};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::losses::{vae_loss, VaeLossVars};
use crate::preprocess::{N_SCREENS, OBS_SIDE};

pub const LOGVAR_MIN: f32 = -10.0;
pub const LOGVAR_MAX: f32 = 10.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VaeConfig {
    pub latent: usize,
    /// Output channels of the four encoder convolutions; the decoder mirrors them.
    pub channels: [usize; 4],
    /// Width of the dense layer between the conv stack and the μ / logΣ heads.
    pub enc_hidden: usize,
    /// Width of the first decoder dense layer.
    pub dec_hidden: usize,
    /// Keep a ReLU between the last batchnorm and the output sigmoid. Off by
    /// default: it confines outputs to [0.5, 1).
    pub final_relu: bool,
}

impl Default for VaeConfig {
    fn default() -> Self {
        Self {
            latent: 128,
            channels: [32, 64, 128, 256],
            enc_hidden: 128,
            dec_hidden: 128,
            final_relu: false,
        }
    }
}

impl VaeConfig {
    pub fn encoder_specs(&self) -> Vec<LayerSpec> {
        let [c0, c1, c2, c3] = self.channels;
        use LayerSpec::*;
        vec![
            Conv { out_channels: c0, kernel: 4, stride: 2 },
            BatchNorm,
            Relu,
            Conv { out_channels: c1, kernel: 4, stride: 2 },
            BatchNorm,
            Relu,
            Conv { out_channels: c2, kernel: 5, stride: 2 },
            BatchNorm,
            Relu,
            Conv { out_channels: c3, kernel: 3, stride: 2 },
            Relu,
            Flatten,
            Dense { out_features: self.enc_hidden },
        ]
    }

    pub fn decoder_specs(&self) -> Vec<LayerSpec> {
        let [c0, c1, c2, c3] = self.channels;
        use LayerSpec::*;
        let mut s = vec![
            Dense { out_features: self.dec_hidden },
            Dense { out_features: c3 },
            Unflatten,
            Deconv { out_channels: c2, kernel: 3, stride: 2 },
            BatchNorm,
            Relu,
            Deconv { out_channels: c1, kernel: 5, stride: 2 },
            BatchNorm,
            Relu,
            Deconv { out_channels: c0, kernel: 4, stride: 2 },
            BatchNorm,
            Relu,
            Deconv { out_channels: N_SCREENS, kernel: 4, stride: 2 },
            BatchNorm,
        ];
        if self.final_relu {
            s.push(Relu);
        }
        s.push(Sigmoid);
        s
    }
}

#[derive(Clone, Debug)]
pub struct Vae {
    pub config: VaeConfig,
    pub store: ParamStore,
    pub encoder: Sequential,
    pub mu_head: Dense,
    pub logvar_head: Dense,
    pub decoder: Sequential,
}

impl Vae {
    pub fn new(config: VaeConfig, rng: &mut impl Rng) -> Result<Self> {
        let mut store = ParamStore::new();
        let encoder = Sequential::new(
            &mut store,
            "vae.enc",
            &[N_SCREENS, OBS_SIDE, OBS_SIDE],
            &config.encoder_specs(),
            rng,
        )?;
        let trace = encoder.shape_trace(1)?;
        if trace[trace.len() - 3] != [1, config.channels[3], 1, 1] {
            return Err(daif_nn::NnError::Config(format!(
                "encoder conv stack must end at 1x1, got {:?}",
                trace[trace.len() - 3]
            )));
        }
        let mu_head = Dense::new(&mut store, "vae.enc.mu", config.enc_hidden, config.latent, rng);
        let logvar_head = Dense::new(&mut store, "vae.enc.logvar", config.enc_hidden, config.latent, rng);
        let decoder = Sequential::new(&mut store, "vae.dec", &[config.latent], &config.decoder_specs(), rng)?;
        Ok(Self {
            config,
            store,
            encoder,
            mu_head,
            logvar_head,
            decoder,
        })
    }

    pub fn latent(&self) -> usize {
        self.config.latent
    }

    /// `(s_μ, logΣ)` for a `(B, 8, 42, 42)` input, logΣ clamped to [−10, 10].
    pub fn encode(&self, tape: &mut Tape, x: Var, mode: Mode) -> Result<(Var, Var)> {
        let h = self.encoder.forward(tape, &self.store, x, mode)?;
        let mu = self.mu_head.forward(tape, &self.store, h)?;
        let lv = self.logvar_head.forward(tape, &self.store, h)?;
        let lv = tape.clamp(lv, LOGVAR_MIN, LOGVAR_MAX);
        Ok((mu, lv))
    }

    /// `z = μ + exp(logΣ / 2) ⊙ ε`.
    pub fn reparameterize(&self, tape: &mut Tape, mu: Var, logvar: Var, eps: &Tensor) -> Result<Var> {
        let half = tape.scale(logvar, 0.5);
        let std = tape.exp(half);
        let e = tape.constant(eps.clone());
        let noise = tape.mul(std, e)?;
        tape.add(mu, noise)
    }

    pub fn decode(&self, tape: &mut Tape, z: Var, mode: Mode) -> Result<Var> {
        self.decoder.forward(tape, &self.store, z, mode)
    }

    /// Full pass: encode, sample with `eps`, decode, and score against `x`.
    pub fn forward_loss(&self, tape: &mut Tape, x: &Tensor, eps: &Tensor, mode: Mode) -> Result<VaeLossVars> {
        let xv = tape.constant(x.clone());
        let (mu, lv) = self.encode(tape, xv, mode)?;
        let z = self.reparameterize(tape, mu, lv, eps)?;
        let recon = self.decode(tape, z, mode)?;
        vae_loss(tape, recon, x, mu, lv)
    }

    /// Evaluation-mode encoding without gradients: row-major `(B, L)` means and log-variances.
    pub fn encode_eval(&self, x: &Tensor) -> Result<(Vec<f32>, Vec<f32>)> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let (mu, lv) = self.encode(&mut tape, xv, Mode::Eval)?;
        let mu = tape.value(mu);
        let lv = tape.value(lv);
        if !mu.all_finite() || !lv.all_finite() {
            return Err(daif_nn::NnError::Config(format!(
                "encoder produced non-finite activations (mu finite: {}, logvar finite: {})",
                mu.all_finite(),
                lv.all_finite()
            )));
        }
        Ok((mu.data().to_vec(), lv.data().to_vec()))
    }

    pub fn sample_eps(&self, batch: usize, rng: &mut impl Rng) -> Tensor {
        let data = (0..batch * self.config.latent).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
        Tensor::new(vec![batch, self.config.latent], data).expect("eps shape")
    }
}
