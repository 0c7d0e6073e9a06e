use daif_core::config::{AgentKind, RunConfig};
use daif_core::demo::{Demo, DemoRecord, HEADER_LEN, RECORD_LEN};
use daif_core::preprocess::{Observation, OBS_LEN};
use daif_core::trainer::{self, mar_update, Agent, EvalReport, METRICS_HEADER};
use daif_core::vae::VaeConfig;
use daif_core::CoreError;
use proptest::prelude::*;

fn record(i: usize) -> DemoRecord {
    let bytes: Vec<u8> = (0..OBS_LEN).map(|j| ((i * 31 + j) % 256) as u8).collect();
    DemoRecord {
        action: (i % 11) as u8,
        reward: i as f32 * 0.5 - 0.1,
        done: i % 4 == 3,
        observation: Observation::from_bytes(&bytes).unwrap(),
    }
}

fn demo(n: usize) -> Demo {
    Demo {
        records: (0..n).map(record).collect(),
        ..Demo::default()
    }
}

fn bytes_of(d: &Demo) -> Vec<u8> {
    let mut buf = Vec::new();
    d.write_to(&mut buf).unwrap();
    buf
}

fn parse_offset(bytes: &[u8]) -> u64 {
    match Demo::parse(bytes) {
        Err(CoreError::Parse { offset, .. }) => offset,
        other => panic!("expected a parse error, got {other:?}"),
    }
}

#[test]
fn fepd_layout_and_round_trip() {
    let d = demo(5);
    let buf = bytes_of(&d);
    assert_eq!(buf.len(), HEADER_LEN + 5 * RECORD_LEN);
    assert_eq!(&buf[..4], b"FEPD");
    assert_eq!(Demo::parse(&buf).unwrap(), d);
}

#[test]
fn fepd_errors_carry_offsets() {
    let good = bytes_of(&demo(3));
    let mut bad = good.clone();
    bad[0] = b'X';
    assert_eq!(parse_offset(&bad), 0);
    let mut bad = good.clone();
    bad[4] = 9;
    assert_eq!(parse_offset(&bad), 4);
    let second = (HEADER_LEN + RECORD_LEN) as u64;
    let mut bad = good.clone();
    bad[second as usize] = 11;
    assert_eq!(parse_offset(&bad), second);
    let mut bad = good.clone();
    bad[second as usize + 5] = 2;
    assert_eq!(parse_offset(&bad), second + 5);
    let truncated = &good[..good.len() - 10];
    assert_eq!(parse_offset(truncated), (good.len() - 10) as u64);
}

#[test]
fn sliding_windows_ignore_episode_ends() {
    assert_eq!(demo(8).stacks().unwrap().len(), 1);
    assert_eq!(demo(30).stacks().unwrap().len(), 23);
    assert!(demo(7).stacks().is_err());
    let d = demo(10);
    let s = d.stacks().unwrap();
    assert_eq!(s[2].newest(), &d.records[9].observation);
    assert_eq!(s[2].frames().next().unwrap(), &d.records[2].observation);
}

#[test]
fn scripted_recording_has_exact_length() {
    let cfg = RunConfig::desk(AgentKind::Random, 4);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("demo.fepd");
    assert_eq!(trainer::record_scripted_to(&cfg, 450, 0.1, &path).unwrap(), 450);
    let d = Demo::load(&path).unwrap();
    assert_eq!(d.len(), 450);
    // the scripted driver finishes a lap within 450 steps on the desk track
    assert!(d.records.iter().any(|r| r.done));
    assert_eq!(d, trainer::record_scripted(&cfg, 450, 0.1).unwrap());
}

#[test]
fn zero_epochs_returns_the_initialization() {
    let vae_cfg = VaeConfig {
        latent: 4,
        channels: [2, 2, 2, 2],
        enc_hidden: 8,
        dec_hidden: 8,
        final_relu: false,
    };
    let mut pcfg = RunConfig::default().pretrain;
    pcfg.epochs = 0;
    let d = trainer::record_scripted(&RunConfig::desk(AgentKind::Random, 1), 40, 0.0).unwrap();
    let (a, report) = trainer::pretrain_vae(&vae_cfg, &pcfg, &d, 3).unwrap();
    let (b, _) = trainer::pretrain_vae(&vae_cfg, &pcfg, &d, 3).unwrap();
    assert!(a.store.bit_equal(&b.store));
    assert!(report.epochs.is_empty());
    assert_eq!(report.stacks, 33);
    assert!(a.store.is_frozen());

    pcfg.epochs = 2;
    pcfg.lr = 1e-3;
    let (c, report) = trainer::pretrain_vae(&vae_cfg, &pcfg, &d, 3).unwrap();
    assert!(!c.store.bit_equal(&a.store));
    assert_eq!(report.epochs.len(), 2);
}

#[test]
fn mar_examples() {
    assert_eq!(mar_update(100.0, 100.0), 100.0);
    assert_eq!(mar_update(0.0, 100.0), 10.0);
    let mut m = 0.0;
    let mut last_gap = f64::INFINITY;
    for _ in 0..200 {
        m = mar_update(m, 50.0);
        let gap = 50.0 - m;
        assert!(gap >= 0.0 && gap <= last_gap);
        last_gap = gap;
    }
    assert!(last_gap < 1e-6);
}

#[test]
fn eval_report_statistics() {
    let r = EvalReport::from_rewards(vec![12.5]);
    assert_eq!((r.mean, r.std), (12.5, 0.0));
    let r = EvalReport::from_rewards(vec![1.0, 3.0]);
    assert_eq!((r.mean, r.std, r.rewards.len()), (2.0, 1.0, 2));
}

fn short_run(agent: AgentKind, seed: u64, out: &std::path::Path) -> RunConfig {
    let mut cfg = RunConfig::desk(agent, seed);
    cfg.episodes = 3;
    cfg.max_steps = 60;
    cfg.env.max_steps = 60;
    cfg.out_dir = out.to_path_buf();
    cfg.checkpoint_every = 2;
    cfg.dqn.batch = 8;
    cfg.daif.batch = 8;
    cfg
}

#[test]
fn training_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    for agent in [AgentKind::Random, AgentKind::Dqn] {
        let a = trainer::train(&short_run(agent, 8, &dir.path().join("a"))).unwrap();
        let b = trainer::train(&short_run(agent, 8, &dir.path().join("b"))).unwrap();
        let csv_a = std::fs::read_to_string(&a.metrics_path).unwrap();
        let csv_b = std::fs::read_to_string(&b.metrics_path).unwrap();
        assert_eq!(csv_a, csv_b);
        let lines: Vec<&str> = csv_a.lines().collect();
        assert_eq!(lines[0], METRICS_HEADER);
        assert_eq!(lines.len(), 4);
        // another seed changes the run: its rewards, or at least the learned weights
        let c = trainer::train(&short_run(agent, 9, &dir.path().join("c"))).unwrap();
        let weights = |r: &trainer::TrainReport| r.final_checkpoint.as_ref().map(|p| std::fs::read(p).unwrap());
        assert!(csv_a != std::fs::read_to_string(&c.metrics_path).unwrap() || weights(&a) != weights(&c));
    }
    assert!(dir.path().join("a/checkpoint_ep00002.fepr").exists());
    assert!(dir.path().join("a/checkpoint_ep00003.fepr").exists());
}

#[test]
fn daif_needs_a_vae_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_run(AgentKind::Daif, 1, dir.path());
    assert!(matches!(trainer::train(&cfg), Err(CoreError::Config(_))));
}

#[test]
fn daif_run_logs_loss_terms_and_evaluates_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = short_run(AgentKind::Daif, 2, &dir.path().join("run"));
    cfg.loss_log_every = 1;
    cfg.daif.vae_loss_samples = 2;
    let d = trainer::record_scripted(&cfg, 40, 0.0).unwrap();
    let mut pcfg = cfg.pretrain.clone();
    pcfg.epochs = 1;
    let (vae, _) = trainer::pretrain_vae(&cfg.vae, &pcfg, &d, 0).unwrap();
    let vae_path = dir.path().join("vae.fepr");
    trainer::save_vae(&vae, &vae_path).unwrap();
    cfg.vae_checkpoint = Some(vae_path);

    let report = trainer::train(&cfg).unwrap();
    let log = std::fs::read_to_string(cfg.out_dir.join("losses.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    for key in ["vae", "transition", "policy", "value", "total"] {
        assert!(first[key].as_f64().unwrap().is_finite(), "{key}");
    }
    assert!(first["vae"].as_f64().unwrap() > 0.0);

    let ckpt = report.final_checkpoint.unwrap();
    let mut agent = Agent::from_config(&cfg).unwrap();
    agent.load(&ckpt).unwrap();
    let e1 = trainer::evaluate(&cfg, &mut agent, 2).unwrap();
    let e2 = trainer::evaluate(&cfg, &mut agent, 2).unwrap();
    assert_eq!(e1, e2);
    assert_eq!(e1.rewards.len(), 2);
}

#[test]
fn config_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.json");
    let mut cfg = RunConfig::desk(AgentKind::Dqn, 42);
    cfg.vae_checkpoint = Some("weights/vae.fepr".into());
    cfg.pretrain.stop_at_drop = Some(0.4);
    cfg.save(&path).unwrap();
    assert_eq!(RunConfig::load(&path).unwrap(), cfg);

    std::fs::write(&path, r#"{"seed": 3, "agent": "random"}"#).unwrap();
    let partial = RunConfig::load(&path).unwrap();
    assert_eq!(partial.seed, 3);
    assert_eq!(partial.episodes, 1000);
    assert_eq!(partial.daif.gamma, 12.0);

    std::fs::write(&path, r#"{"episodes": 0}"#).unwrap();
    assert!(RunConfig::load(&path).is_err());
}

proptest! {
    #[test]
    fn mar_stays_within_observed_range(crs in prop::collection::vec(-100.0f64..1000.0, 1..200)) {
        let mut mar = crs[0];
        let (mut lo, mut hi) = (crs[0], crs[0]);
        for &cr in &crs[1..] {
            mar = mar_update(mar, cr);
            lo = lo.min(cr);
            hi = hi.max(cr);
            prop_assert!(mar >= lo - 1e-9 && mar <= hi + 1e-9);
        }
    }

    #[test]
    fn fepd_round_trips(n in 0usize..12, seed in any::<u32>()) {
        let d = Demo {
            records: (0..n).map(|i| record(i + seed as usize)).collect(),
            ..Demo::default()
        };
        prop_assert_eq!(Demo::parse(&bytes_of(&d)).unwrap(), d);
    }

    #[test]
    fn run_config_json_round_trips(seed in any::<u64>(), episodes in 1u64..5000, steps in 1u32..5000, gamma in 0.0f64..50.0, lr in 1e-7f32..1e-1) {
        let mut cfg = RunConfig::desk(AgentKind::Daif, seed);
        cfg.episodes = episodes;
        cfg.max_steps = steps;
        cfg.daif.gamma = gamma;
        cfg.dqn.lr = lr;
        let text = serde_json::to_string(&cfg).unwrap();
        prop_assert_eq!(serde_json::from_str::<RunConfig>(&text).unwrap(), cfg);
    }
}
