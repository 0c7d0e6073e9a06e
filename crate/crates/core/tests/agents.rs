use daif_core::daif::{select_from_policy, ActMode, DaifAgent, DaifConfig, LatentState, LatentTransition};
use daif_core::dqn::{epsilon_schedule, q_target, DqnAgent, DqnConfig, StackTransition};
use daif_core::preprocess::{Observation, ObservationStack};
use daif_core::vae::{Vae, VaeConfig};
use daif_env::NUM_ACTIONS;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tiny_vae(latent: usize, seed: u64) -> Vae {
    let cfg = VaeConfig {
        latent,
        channels: [2, 2, 2, 2],
        enc_hidden: 8,
        dec_hidden: 8,
        final_relu: false,
    };
    Vae::new(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn tiny_daif(config: DaifConfig, latent: usize) -> DaifAgent {
    DaifAgent::new(config, tiny_vae(latent, 1), 5).unwrap()
}

fn one_hot_state(dim: usize, i: usize) -> LatentState {
    let mut mu = vec![0.0; dim];
    mu[i] = 1.0;
    LatentState::new(mu, vec![0.0; dim])
}

fn fast_config() -> DaifConfig {
    DaifConfig {
        hidden: 16,
        lr_transition: 1e-2,
        lr_policy: 1e-2,
        lr_value: 1e-2,
        capacity: 64,
        batch: 16,
        vae_loss_samples: 0,
        ..DaifConfig::default()
    }
}

#[test]
fn greedy_and_sampled_selection() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut q = [0.0f32; NUM_ACTIONS];
    q[3] = 1.0;
    assert_eq!(select_from_policy(&q, ActMode::Eval, &mut rng), 3);
    for _ in 0..100 {
        assert_eq!(select_from_policy(&q, ActMode::Train, &mut rng), 3);
    }
    assert_eq!(select_from_policy(&[1.0 / 11.0; 11], ActMode::Eval, &mut rng), 0);
}

#[test]
fn sampled_frequencies_track_the_policy() {
    let q: Vec<f32> = {
        let raw: Vec<f32> = (1..=NUM_ACTIONS).map(|i| i as f32).collect();
        let s: f32 = raw.iter().sum();
        raw.iter().map(|v| v / s).collect()
    };
    let draws = 100_000;
    let run = |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..draws).map(|_| select_from_policy(&q, ActMode::Train, &mut rng)).collect::<Vec<_>>()
    };
    let a = run(11);
    assert_eq!(a, run(11));
    let mut counts = [0usize; NUM_ACTIONS];
    for &i in &a {
        counts[i] += 1;
    }
    for (c, p) in counts.iter().zip(&q) {
        assert!((*c as f64 / draws as f64 - *p as f64).abs() < 0.01);
    }
}

#[test]
fn policy_outputs_are_distributions() {
    let agent = tiny_daif(fast_config(), 4);
    for i in 0..4 {
        let p = agent.policy_probs(&one_hot_state(4, i)).unwrap();
        assert_eq!(p.len(), NUM_ACTIONS);
        assert!(p.iter().all(|&v| v > 0.0));
        assert!((p.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        assert!(agent.efe(&one_hot_state(4, i)).unwrap().iter().all(|v| v.is_finite()));
    }
}

#[test]
fn zeroed_policy_head_is_uniform() {
    let mut agent = tiny_daif(fast_config(), 4);
    let names: Vec<_> = agent.policy.store.iter().map(|(id, p)| (id, p.name.clone())).collect();
    for (id, name) in names {
        if name.starts_with("policy.2.") {
            agent.policy.store.value_mut(id).data_mut().fill(0.0);
        }
    }
    let p = agent.policy_probs(&one_hot_state(4, 1)).unwrap();
    assert!(p.iter().all(|&v| (v - 1.0 / 11.0).abs() < 1e-7));
}

fn transition(dim: usize, s: usize, a: usize, r: f32, next: usize, done: bool) -> LatentTransition {
    LatentTransition {
        state: one_hot_state(dim, s),
        action: a,
        reward: r,
        next: one_hot_state(dim, next),
        done,
        stack: None,
    }
}

#[test]
fn learn_step_leaves_the_vae_untouched() {
    let mut agent = tiny_daif(fast_config(), 4);
    let vae_before = agent.vae.store.clone();
    let policy_before = agent.policy.store.clone();
    let batch: Vec<_> = (0..8).map(|i| transition(4, i % 4, i % 11, 1.0, (i + 1) % 4, false)).collect();
    let refs: Vec<_> = batch.iter().collect();
    let losses = agent.vfe_step(&refs).unwrap();
    assert!(losses.total.is_finite());
    assert!(agent.vae.store.bit_equal(&vae_before));
    assert!(!agent.policy.store.bit_equal(&policy_before));
}

#[test]
fn vae_term_is_scaled_by_alpha() {
    let cfg = DaifConfig {
        vae_loss_samples: 2,
        ..fast_config()
    };
    let mut agent = tiny_daif(cfg, 4);
    let stack = ObservationStack::new(Observation::filled(0.5));
    let batch: Vec<_> = (0..4)
        .map(|i| LatentTransition {
            stack: Some(stack.clone()),
            ..transition(4, i, i, 0.0, i, true)
        })
        .collect();
    let refs: Vec<_> = batch.iter().collect();
    let l = agent.vfe_step(&refs).unwrap();
    assert!(l.vae > 0.0);
    let expected = l.vae / agent.config.alpha + l.transition + l.policy;
    assert!((l.total - expected).abs() <= 1e-6 * expected.abs().max(1.0));
}

/// Two one-step contexts, each with a single rewarded action.
#[test]
fn learns_the_rewarded_action_in_a_two_state_problem() {
    let mut agent = tiny_daif(fast_config(), 4);
    let best = [3usize, 7];
    let terminal = 2;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..3000 {
        let batch: Vec<_> = (0..16)
            .map(|_| {
                use rand::Rng;
                let s = rng.random_range(0..2);
                let a = rng.random_range(0..NUM_ACTIONS);
                let r = if a == best[s] { 1.0 } else { 0.0 };
                transition(4, s, a, r, terminal, true)
            })
            .collect();
        let refs: Vec<_> = batch.iter().collect();
        agent.vfe_step(&refs).unwrap();
    }
    for s in 0..2 {
        let p = agent.policy_probs(&one_hot_state(4, s)).unwrap();
        assert!(p[best[s]] > 0.9, "state {s}: {p:?}");
        let mut greedy = agent.clone();
        assert_eq!(greedy.select_action(&one_hot_state(4, s), ActMode::Eval).unwrap(), best[s]);
    }
}

/// With no discount and no state term the value head regresses on −r.
#[test]
fn undiscounted_value_learns_negative_reward() {
    let cfg = DaifConfig {
        beta: 0.0,
        efe_kl_weight: 0.0,
        ..fast_config()
    };
    let mut agent = tiny_daif(cfg, 4);
    // (state, action, reward) for a two-step episode s0 → s1 → end
    let table = [(0usize, 2usize, 0.5f32), (0, 5, -1.0), (1, 2, 2.0), (1, 9, 0.25)];
    let batch: Vec<_> = table
        .iter()
        .map(|&(s, a, r)| transition(4, s, a, r, s + 1, s == 1))
        .collect();
    let refs: Vec<_> = batch.iter().collect();
    for _ in 0..3000 {
        agent.vfe_step(&refs).unwrap();
    }
    for &(s, a, r) in &table {
        let g = agent.efe(&one_hot_state(4, s)).unwrap();
        assert!((g[a] + r).abs() < 0.02, "G({s},{a}) = {} want {}", g[a], -r);
    }
}

#[test]
fn daif_checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("agent.fepr");
    let mut a = tiny_daif(fast_config(), 4);
    let batch: Vec<_> = (0..16).map(|i| transition(4, i % 4, i % 11, 1.0, (i + 1) % 4, false)).collect();
    let refs: Vec<_> = batch.iter().collect();
    a.vfe_step(&refs).unwrap();
    a.save(&path).unwrap();
    let names: Vec<String> = daif_nn::checkpoint::load(&path).unwrap().into_keys().collect();
    for prefix in ["vae.enc.", "vae.dec.", "trans.", "policy.", "value.", "value_target."] {
        assert!(names.iter().any(|n| n.starts_with(prefix)), "missing {prefix}");
    }
    let mut b = DaifAgent::new(fast_config(), tiny_vae(4, 99), 77).unwrap();
    b.load(&path).unwrap();
    assert!(b.vae.store.bit_equal(&a.vae.store));
    assert!(b.policy.store.bit_equal(&a.policy.store));
    assert!(b.value_target.bit_equal(&a.value_target));
    let s = one_hot_state(4, 2);
    assert_eq!(a.policy_probs(&s).unwrap(), b.policy_probs(&s).unwrap());
}

#[test]
fn epsilon_schedule_examples() {
    let c = DqnConfig::default();
    assert_eq!(c.epsilon(0), 0.15);
    assert_eq!(c.epsilon(100), 0.135);
    assert_eq!(c.epsilon(667), 0.05);
    assert_eq!(c.epsilon(10_000), 0.05);
}

#[test]
fn q_target_examples() {
    assert_eq!(q_target(3.0, &[10.0; 11], true, 0.99), 3.0);
    let mut next = [0.0f32; 11];
    next[6] = 10.0;
    assert!((q_target(0.0, &next, false, 0.99) - 9.9).abs() < 1e-6);
}

fn dqn_tiny() -> DqnConfig {
    DqnConfig {
        channels: [2, 2, 2],
        hidden: 8,
        capacity: 64,
        batch: 4,
        lr: 1e-3,
        ..DqnConfig::default()
    }
}

fn stack(v: f32) -> ObservationStack {
    ObservationStack::new(Observation::filled(v))
}

#[test]
fn q_network_shapes_and_determinism() {
    let agent = DqnAgent::new(DqnConfig::default(), 0).unwrap();
    let trace = agent.q.net.shape_trace(1).unwrap();
    assert_eq!(trace[0], vec![1, 64, 20, 20]);
    assert_eq!(trace.last().unwrap(), &vec![1, 11]);
    let s = stack(0.3);
    assert_eq!(agent.q.q_values(&s).unwrap(), agent.q.q_values(&s).unwrap());
}

#[test]
fn epsilon_extremes() {
    let mut agent = DqnAgent::new(dqn_tiny(), 3).unwrap();
    let s = stack(0.7);
    let greedy = daif_core::losses::argmax(&agent.q.q_values(&s).unwrap());
    for _ in 0..200 {
        assert_eq!(agent.act_with_epsilon(&s, 0.0).unwrap(), greedy);
    }
    let draws = 100_000;
    let mut counts = [0usize; NUM_ACTIONS];
    for _ in 0..draws {
        counts[agent.act_with_epsilon(&s, 1.0).unwrap()] += 1;
    }
    let expected = draws as f64 / NUM_ACTIONS as f64;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // χ²(10) at p = 0.001
    assert!(chi2 < 29.59, "χ² = {chi2}, counts {counts:?}");
}

#[test]
fn dqn_learns_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("q.fepr");
    let mut a = DqnAgent::new(dqn_tiny(), 4).unwrap();
    let mut last = None;
    for i in 0..40 {
        last = a
            .observe(StackTransition {
                state: stack((i % 5) as f32 / 5.0),
                action: i % 11,
                reward: 1.0,
                next: stack(((i + 1) % 5) as f32 / 5.0),
                done: i % 7 == 0,
            })
            .unwrap()
            .or(last);
    }
    assert!(last.unwrap().is_finite());
    assert_eq!(a.updates(), 37);
    a.save(&path).unwrap();
    let names: Vec<String> = daif_nn::checkpoint::load(&path).unwrap().into_keys().collect();
    assert!(names.iter().any(|n| n.starts_with("q.")) && names.iter().any(|n| n.starts_with("q_target.")));
    let mut b = DqnAgent::new(dqn_tiny(), 99).unwrap();
    b.load(&path).unwrap();
    assert!(b.q.store.bit_equal(&a.q.store));
    assert!(b.q_target.bit_equal(&a.q_target));
}

proptest! {
    #[test]
    fn epsilon_is_monotone_and_bounded(e in 0u64..100_000, d in 1u64..1000) {
        let lo = epsilon_schedule(e + d, 0.15, 0.00015, 0.05);
        let hi = epsilon_schedule(e, 0.15, 0.00015, 0.05);
        prop_assert!(lo <= hi);
        prop_assert!((0.05..=0.15).contains(&lo) && (0.05..=0.15).contains(&hi));
    }
}
