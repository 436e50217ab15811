use sdl_core::emulator::{forward_step, Mode, ModelConfig};
use sdl_core::synthgen::*;
use sdl_core::trainer::*;
use sdl_core::Error;

#[test]
fn full_scale_ledger_reproduces_counts() {
    let (phases, finetune) = full_scale_schedule();
    let counts: Vec<u64> = phases.iter().map(|p| p.forward_passes()).collect();
    // 70 × 1781 × 32 is 3,989,440; the reported phase-1 count is 3,988,160
    assert_eq!(counts, vec![3_989_440, 2_278_400, 2_560_000, 2_560_000, 1_024_000]);
    let scheduled = CostLedger::from_phases(&phases);
    let fine = CostLedger::from_phases(&[finetune]);
    assert_eq!(scheduled.total_forward(), 12_411_840);
    assert_eq!(fine.total_forward(), 200_000);
    let r_sched = cost_ratio(&scheduled, &fine, 2.0).unwrap();
    assert_eq!(format!("{:.2}%", 100.0 * r_sched), "1.61%");

    let (base, reported_fine) = full_scale_reported();
    assert_eq!(reported_fine, fine_counts(&fine));
    assert_eq!(base.total_forward(), 12_410_560);
    assert_eq!(base.total_backward(), 12_410_560);
    let r = cost_ratio(&base, &fine, 2.0).unwrap();
    assert_eq!(r, 200_000.0 / 12_410_560.0);
    assert_eq!(format!("{:.2}%", 100.0 * r), "1.61%");
    assert_eq!(format!("{:.3}%", 100.0 * r), "1.612%");
}

fn fine_counts(l: &CostLedger) -> CostLedger {
    let mut out = CostLedger::default();
    out.record("finetune", l.total_forward(), l.total_backward());
    out
}

#[test]
fn ratio_weighting() {
    let mut b = CostLedger::default();
    b.record("a", 100, 100);
    let mut f = CostLedger::default();
    f.record("b", 10, 10);
    // weight cancels when each forward pairs with one backward
    assert_eq!(cost_ratio(&b, &f, 2.0).unwrap(), cost_ratio(&b, &f, 7.0).unwrap());
    f.record("c", 10, 0);
    assert!((cost_ratio(&b, &f, 2.0).unwrap() - (20.0 + 2.0 * 10.0) / 300.0).abs() < 1e-15);
    assert!(cost_ratio(&CostLedger::default(), &f, 2.0).is_err());
}

#[test]
fn config_toml_round_trip() {
    let c = TrainConfig::default();
    let text = c.to_toml().unwrap();
    assert_eq!(TrainConfig::from_toml(&text).unwrap(), c);
    let partial = TrainConfig::from_toml("seed = 5\nfreeze_base = true\n").unwrap();
    assert_eq!(partial.seed, 5);
    assert!(partial.freeze_base);
    assert_eq!(partial.phases, c.phases);
    assert!(TrainConfig::from_toml("[finetune]\nloss = \"mse\"\n").is_err());
}

fn tiny_data() -> Dataset {
    let cfg = SystemConfig {
        grid: 16,
        spinup_strides: 10,
        ..SystemConfig::default()
    };
    let start = spin_up(&cfg, 1).unwrap();
    Dataset::from_trajectories(
        &cfg,
        1,
        vec![
            run_trajectory(&start, 1, 0, Split::Train, 30).unwrap(),
            run_trajectory(&start, 1, 1, Split::Val, 6).unwrap(),
        ],
    )
}

fn tiny_config() -> TrainConfig {
    TrainConfig {
        seed: 3,
        model: ModelConfig {
            grid: 16,
            widths: [4, 6, 8, 10],
            d_z: 3,
            ..ModelConfig::default()
        },
        phases: vec![Phase::mse("1-step", 1, 1, 10, 2), Phase::mse("2-step", 2, 1, 2, 2)],
        finetune: Phase::afcrps("finetune", 1, 3, 2, 3),
        validation_samples: 3,
        ..TrainConfig::default()
    }
}

#[test]
fn ledger_counts_training_passes() {
    let data = tiny_data();
    let mut t = Trainer::new(tiny_config());
    let out = t.train_deterministic(&data).unwrap();
    assert_eq!(out.ledger.phases[0].forward, 10 * 2);
    assert_eq!(out.ledger.phases[1].forward, 2 * 2 * 2);
    assert_eq!(out.metrics.len(), 2);
    assert!(out.metrics.iter().all(|m| m.val_loss.is_finite()));

    let fine = t.finetune_sdl(&out.model, &data).unwrap();
    assert_eq!(fine.ledger.total_forward(), 3 * 2 * 3);
    assert!(fine.model.has_sdl());
}

#[test]
fn training_is_deterministic() {
    let data = tiny_data();
    let a = Trainer::new(tiny_config()).train_deterministic(&data).unwrap();
    let b = Trainer::new(tiny_config()).train_deterministic(&data).unwrap();
    let curve = |o: &TrainOutcome| o.metrics.iter().map(|m| (m.train_loss, m.val_loss)).collect::<Vec<_>>();
    assert_eq!(curve(&a), curve(&b));
    assert_eq!(a.model, b.model);
}

#[test]
fn frozen_finetune_keeps_base_outputs() {
    let data = tiny_data();
    let cfg = TrainConfig {
        freeze_base: true,
        ..tiny_config()
    };
    let mut t = Trainer::new(cfg);
    let base = t.train_deterministic(&data).unwrap().model;
    let tuned = t.finetune_sdl(&base, &data).unwrap().model;
    let x = base.norm.normalize(data.state(RecordRef { trajectory: 1, step: 0 }));
    let before = forward_step(&base, &x, None, Mode::Deterministic, 0, false).unwrap();
    let after = forward_step(&tuned, &x, None, Mode::Deterministic, 0, false).unwrap();
    assert_eq!(before.output, after.output);
    assert_ne!(tuned.param("sdl1.style"), {
        let mut fresh = base.clone();
        fresh.insert_sdl(3);
        fresh.param("sdl1.style").cloned()
    }
    .as_ref());
}

#[test]
fn metrics_written_as_json_lines() {
    let data = tiny_data();
    let dir = tempfile::tempdir().unwrap();
    let mut t = Trainer::new(tiny_config());
    t.metrics_path = Some(dir.path().join("m.jsonl"));
    t.train_deterministic(&data).unwrap();
    let text = std::fs::read_to_string(dir.path().join("m.jsonl")).unwrap();
    let rows: Vec<EpochMetrics> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[1].phase, "2-step");
}

#[test]
fn divergence_aborts_with_last_good_checkpoint() {
    let data = tiny_data();
    let mut cfg = tiny_config();
    cfg.phases[0].learning_rate = 1e38;
    cfg.phases[0].grad_clip = 1e38;
    let dir = tempfile::tempdir().unwrap();
    let mut t = Trainer::new(cfg);
    t.checkpoint_path = Some(dir.path().join("last.sdlm"));
    let err = t.train_deterministic(&data).unwrap_err();
    assert!(matches!(err, Error::Diverged { .. }), "{err}");
    let saved = sdl_core::emulator::ModelState::read(&dir.path().join("last.sdlm")).unwrap();
    assert!(saved.params.iter().all(|(_, p)| p.is_finite()));
}
