use diffcore::{gaussian_stream, RngKey, StreamRole};
use sdl_core::emulator::*;
use sdl_core::sdl::LatentMode;

fn randn(n: usize, seed: u64) -> Vec<f32> {
    gaussian_stream(&RngKey::new(seed, 0, 0, 0, StreamRole::Auxiliary), n)
        .into_iter()
        .map(|v| v as f32)
        .collect()
}

fn tiny(placement: Placement, mode: LatentMode) -> ModelState {
    let cfg = ModelConfig {
        grid: 16,
        widths: [4, 6, 8, 10],
        d_z: 3,
        placement,
        latent_mode: mode,
        ..ModelConfig::default()
    };
    let mut m = ModelState::init(cfg, Normalization::identity(3)).unwrap();
    for (name, p) in m.params.iter_mut() {
        if name == "head.w" {
            let n = p.numel();
            p.data_mut().copy_from_slice(&randn(n, 5).iter().map(|v| v * 0.1).collect::<Vec<_>>());
        }
    }
    m.insert_sdl(1);
    m
}

#[test]
fn default_size_and_grids() {
    let m = ModelState::init(ModelConfig::default(), Normalization::identity(3)).unwrap();
    assert!((400_000..500_000).contains(&m.param_count()), "{}", m.param_count());
    let g = m.config.level_grids();
    assert_eq!(g.iter().map(|l| (l.level, l.h, l.channels)).collect::<Vec<_>>(), vec![(1, 8, 96), (2, 16, 64), (3, 32, 48)]);
    assert_eq!(m.config.latent_bytes_per_step(), 86_016);
    let up = ModelConfig {
        placement: Placement::AfterUpsample,
        ..ModelConfig::default()
    };
    assert_eq!(up.level_grids().iter().map(|l| l.h).collect::<Vec<_>>(), vec![16, 32, 64]);
    let vector = ModelConfig {
        latent_mode: LatentMode::Vector,
        ..ModelConfig::default()
    };
    assert!(vector.latent_grids().iter().all(|&(_, h, w)| h == 1 && w == 1));
}

#[test]
fn fresh_model_is_persistence() {
    let m = ModelState::init(
        ModelConfig {
            grid: 16,
            widths: [4, 6, 8, 10],
            ..ModelConfig::default()
        },
        Normalization::identity(3),
    )
    .unwrap();
    let x = randn(m.config.state_len(), 1);
    let out = forward_step(&m, &x, None, Mode::Deterministic, 0, false).unwrap();
    assert_eq!(out.output, x);
}

#[test]
fn checkpoint_round_trip() {
    let m = tiny(Placement::Bottleneck, LatentMode::Spatial);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.sdlm");
    m.write(&path).unwrap();
    let back = ModelState::read(&path).unwrap();
    assert_eq!(back, m);
    assert_eq!(back.checksum().unwrap(), m.checksum().unwrap());
    assert_eq!(back.to_bytes().unwrap(), std::fs::read(&path).unwrap());

    let mut bytes = std::fs::read(&path).unwrap();
    let n = bytes.len();
    bytes[n - 20] ^= 1;
    assert!(ModelState::from_bytes(&bytes).is_err());
}

#[test]
fn rollout_is_reproducible_and_members_differ() {
    for (placement, mode) in [
        (Placement::Bottleneck, LatentMode::Spatial),
        (Placement::AfterUpsample, LatentMode::Spatial),
        (Placement::Bottleneck, LatentMode::Vector),
    ] {
        let m = tiny(placement, mode);
        let x = randn(m.config.state_len(), 2);
        let spec = RolloutSpec {
            steps: 3,
            members: 3,
            beta: [1.0; 3],
            seed: 9,
            mode: Mode::Stochastic,
        };
        let a = rollout(&m, &x, spec).unwrap();
        let b = rollout(&m, &x, spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.members[0].states.len(), 3);
        assert_ne!(a.members[0].states[2], a.members[1].states[2]);

        let det = rollout(&m, &x, RolloutSpec { mode: Mode::Deterministic, ..spec }).unwrap();
        assert_eq!(det.members[0].states, det.members[2].states);
        let zero = rollout(&m, &x, RolloutSpec { beta: [0.0; 3], ..spec }).unwrap();
        assert_eq!(zero.members[1].states, det.members[0].states);
    }
}

#[test]
fn member_noise_uses_distinct_streams() {
    let cfg = tiny(Placement::Bottleneck, LatentMode::Spatial).config;
    let a = MemberNoise::draw(&cfg, 1, 0, 0).unwrap();
    let b = MemberNoise::draw(&cfg, 1, 1, 0).unwrap();
    let c = MemberNoise::draw(&cfg, 1, 0, 1).unwrap();
    assert_ne!(a.latents, b.latents);
    assert_ne!(a.latents, c.latents);
    assert_ne!(a.keys_r, b.keys_r);
    assert_eq!(a, MemberNoise::draw(&cfg, 1, 0, 0).unwrap());
}

#[test]
fn non_finite_state_aborts_member() {
    let mut m = tiny(Placement::Bottleneck, LatentMode::Spatial);
    for (name, p) in m.params.iter_mut() {
        if name == "head.b" {
            p.data_mut()[0] = f32::INFINITY;
        }
    }
    let x = randn(m.config.state_len(), 3);
    let spec = RolloutSpec {
        steps: 2,
        members: 2,
        beta: [1.0; 3],
        seed: 1,
        mode: Mode::Stochastic,
    };
    let r = rollout(&m, &x, spec).unwrap();
    assert!(r.members.iter().all(|t| t.aborted.is_some() && t.states.is_empty()));
}

#[test]
fn shape_and_mode_errors() {
    let m = tiny(Placement::Bottleneck, LatentMode::Spatial);
    assert!(forward_step(&m, &[0.0; 5], None, Mode::Deterministic, 0, false).is_err());
    let x = randn(m.config.state_len(), 4);
    assert!(forward_step(&m, &x, None, Mode::Stochastic, 0, false).is_err());
    let plain = ModelState::init(m.config.clone(), Normalization::identity(3)).unwrap();
    let spec = RolloutSpec {
        steps: 1,
        members: 1,
        beta: [1.0; 3],
        seed: 0,
        mode: Mode::Stochastic,
    };
    assert!(rollout(&plain, &x, spec).is_err());
}

#[test]
fn normalisation_round_trip() {
    let s1 = randn(3 * 16, 6);
    let s2: Vec<f32> = randn(3 * 16, 7).iter().map(|v| v * 3.0 + 1.0).collect();
    let n = Normalization::fit([s1.as_slice(), s2.as_slice()].into_iter(), 3);
    let back = n.denormalize(&n.normalize(&s2));
    for (a, b) in back.iter().zip(&s2) {
        assert!((a - b).abs() < 1e-5);
    }
}
