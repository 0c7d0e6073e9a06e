//! Loss terms as tape expressions, plus the scalar helpers used for acting
//! and for building bootstrap targets.

use daif_nn::{softmax_f64, Result, Tape, Tensor, Var};

/// Clamp applied to reconstructions before taking logs.
pub const BCE_EPS: f32 = 1e-7;
/// Floor inside the logs of the policy KL.
pub const KL_FLOOR: f32 = 1e-9;

fn batch_of(tape: &Tape, v: Var) -> usize {
    tape.value(v).shape()[0]
}

/// Binary cross-entropy summed over every pixel, averaged over the batch.
pub fn bce(tape: &mut Tape, recon: Var, target: &Tensor) -> Result<Var> {
    let b = batch_of(tape, recon) as f32;
    let p = tape.clamp(recon, BCE_EPS, 1.0 - BCE_EPS);
    let t = tape.constant(target.clone());
    let one_minus_t = tape.constant(target.map(|v| 1.0 - v));
    let ln_p = tape.ln(p);
    let neg_p = tape.scale(p, -1.0);
    let q = tape.add_scalar(neg_p, 1.0);
    let ln_q = tape.ln(q);
    let a = tape.mul(t, ln_p)?;
    let c = tape.mul(one_minus_t, ln_q)?;
    let ll = tape.add(a, c)?;
    let s = tape.sum(ll);
    Ok(tape.scale(s, -1.0 / b))
}

/// `KL[N(μ, Σ) ‖ N(0, I)] = −½ Σ (1 + logΣ − μ² − Σ)`, averaged over the batch.
pub fn standard_normal_kl(tape: &mut Tape, mu: Var, logvar: Var) -> Result<Var> {
    let b = batch_of(tape, mu) as f32;
    let mu2 = tape.square(mu);
    let var = tape.exp(logvar);
    let t = tape.sub(logvar, mu2)?;
    let t = tape.sub(t, var)?;
    let t = tape.add_scalar(t, 1.0);
    let s = tape.sum(t);
    Ok(tape.scale(s, -0.5 / b))
}

#[derive(Clone, Copy, Debug)]
pub struct VaeLossVars {
    pub total: Var,
    pub bce: Var,
    pub kl: Var,
}

pub fn vae_loss(tape: &mut Tape, recon: Var, target: &Tensor, mu: Var, logvar: Var) -> Result<VaeLossVars> {
    let bce = bce(tape, recon, target)?;
    let kl = standard_normal_kl(tape, mu, logvar)?;
    let total = tape.add(bce, kl)?;
    Ok(VaeLossVars { total, bce, kl })
}

/// Mean squared error over every element.
pub fn mse(tape: &mut Tape, pred: Var, target: Var) -> Result<Var> {
    let d = tape.sub(pred, target)?;
    let d2 = tape.square(d);
    Ok(tape.mean(d2))
}

/// Per-sample `KL[N(ŝ, I) ‖ N(μ, Σ)] = ½ Σ_d [logΣ + (1 + (ŝ − μ)²)/Σ − 1]`, shape `(B)`.
pub fn state_kl(tape: &mut Tape, s_hat: Var, mu: Var, logvar: Var) -> Result<Var> {
    let d = tape.sub(s_hat, mu)?;
    let d2 = tape.square(d);
    let num = tape.add_scalar(d2, 1.0);
    let neg = tape.scale(logvar, -1.0);
    let inv_var = tape.exp(neg);
    let ratio = tape.mul(num, inv_var)?;
    let t = tape.add(logvar, ratio)?;
    let t = tape.add_scalar(t, -1.0);
    let s = tape.sum_last(t);
    Ok(tape.scale(s, 0.5))
}

/// Squared error on each sample's taken action, averaged over the batch.
pub fn value_loss(tape: &mut Tape, g_pred: Var, actions: &[usize], g_hat: &[f32]) -> Result<Var> {
    let picked = tape.gather(g_pred, actions)?;
    let target = tape.constant(Tensor::from_slice(&[g_hat.len()], g_hat)?);
    mse(tape, picked, target)
}

/// `KL[q ‖ p]` per row with both logs floored, averaged over the batch. `p` is treated as a constant.
pub fn policy_kl(tape: &mut Tape, q: Var, prior: &Tensor) -> Result<Var> {
    let b = batch_of(tape, q) as f32;
    let ln_p = tape.constant(prior.map(|v| v.max(KL_FLOOR).ln()));
    let qf = tape.clamp(q, KL_FLOOR, 1.0);
    let ln_q = tape.ln(qf);
    let diff = tape.sub(ln_q, ln_p)?;
    let t = tape.mul(q, diff)?;
    let s = tape.sum(t);
    Ok(tape.scale(s, 1.0 / b))
}

/// `σ(−γ G)`, evaluated in double precision.
pub fn boltzmann_prior(g: &[f32], gamma: f64) -> Vec<f64> {
    let logits: Vec<f64> = g.iter().map(|&v| -gamma * v as f64).collect();
    softmax_f64(&logits)
}

/// Bootstrapped EFE target `−r + kl + β Σ_a q(a) G_target(a)`, without the bootstrap on terminal steps.
pub fn efe_target(reward: f32, kl: f32, next_policy: &[f32], next_g_target: &[f32], done: bool, beta: f32) -> f32 {
    let base = -(reward as f64) + kl as f64;
    if done {
        return base as f32;
    }
    let expected: f64 = next_policy
        .iter()
        .zip(next_g_target)
        .map(|(&q, &g)| q as f64 * g as f64)
        .sum();
    (base + beta as f64 * expected) as f32
}

/// Scalar form of [`state_kl`] for one sample.
pub fn state_kl_scalar(s_hat: &[f32], mu: &[f32], logvar: &[f32]) -> f64 {
    s_hat
        .iter()
        .zip(mu)
        .zip(logvar)
        .map(|((&s, &m), &lv)| {
            let lv = lv as f64;
            let d = s as f64 - m as f64;
            lv + (1.0 + d * d) / lv.exp() - 1.0
        })
        .sum::<f64>()
        * 0.5
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
