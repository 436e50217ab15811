use diffcore::{gaussian_stream, RngKey, StreamRole};
use sdl_core::container::{ContainerReader, ContainerWriter};
use sdl_core::emulator::*;
use sdl_core::latents::*;
use sdl_core::Error;

fn randn(n: usize, seed: u64) -> Vec<f32> {
    gaussian_stream(&RngKey::new(seed, 0, 0, 0, StreamRole::Auxiliary), n)
        .into_iter()
        .map(|v| v as f32)
        .collect()
}

fn tiny() -> ModelState {
    let cfg = ModelConfig {
        grid: 16,
        widths: [4, 6, 8, 10],
        d_z: 3,
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

fn run(m: &ModelState, members: usize, steps: usize) -> EnsembleBatch {
    let x = randn(m.config.state_len(), 2);
    rollout(
        m,
        &x,
        RolloutSpec {
            steps,
            members,
            beta: [1.0; 3],
            seed: 17,
            mode: Mode::Stochastic,
        },
    )
    .unwrap()
}

#[test]
fn write_read_round_trip_and_size() {
    let m = tiny();
    let batch = run(&m, 3, 4);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.sdla");
    let a = archive_write(&batch, &m, &path).unwrap();
    let back = LatentArchive::read(&path).unwrap();
    assert_eq!(back, a);
    let header_len = {
        let r = ContainerReader::open(&path, b"SDLA", 1).unwrap();
        r.header.len()
    };
    let file = std::fs::metadata(&path).unwrap().len() as usize;
    assert_eq!(file, 4 + 4 + 8 + header_len + payload_bytes(&m.config, 3, 4) + 8);
}

#[test]
fn default_size_per_member_step() {
    let cfg = ModelConfig::default();
    let payload = payload_bytes(&cfg, 10, 20);
    let nominal = 10 * 20 * 86_016;
    assert!((payload as f64 - nominal as f64).abs() / (nominal as f64) < 0.02);
}

#[test]
fn replay_is_bit_exact() {
    let m = tiny();
    let batch = run(&m, 3, 4);
    let a = LatentArchive::from_batch(&batch, &m).unwrap();
    for k in 0..3 {
        let r = replay_member(&a, &m, k, None).unwrap();
        assert_eq!(r.states, batch.members[k].states);
        let ones = replay_member(&a, &m, k, Some([1.0; 3])).unwrap();
        assert_eq!(ones.states, r.states);
    }
    let zero = replay_member(&a, &m, 1, Some([0.0; 3])).unwrap();
    let det = rollout(
        &m,
        &batch.initial,
        RolloutSpec {
            mode: Mode::Deterministic,
            members: 1,
            ..batch.spec
        },
    )
    .unwrap();
    assert_eq!(zero.states, det.members[0].states);
    assert!(matches!(replay_member(&a, &m, 3, None), Err(Error::OutOfRange { .. })));
}

#[test]
fn replay_refuses_other_checkpoints() {
    let m = tiny();
    let batch = run(&m, 2, 2);
    let a = LatentArchive::from_batch(&batch, &m).unwrap();
    let mut other = m.clone();
    other.params[0].1.data_mut()[0] += 1.0;
    assert!(matches!(replay_member(&a, &other, 0, None), Err(Error::ModelChecksum { .. })));
}

#[test]
fn versions_and_unknown_fields() {
    let m = tiny();
    let batch = run(&m, 2, 2);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.sdla");
    archive_write(&batch, &m, &path).unwrap();
    let r = ContainerReader::open(&path, b"SDLA", 1).unwrap();
    let mut header: serde_json::Value = serde_json::from_str(&r.header).unwrap();
    header["comment"] = serde_json::json!("added later");
    let bytes = std::fs::read(&path).unwrap();
    // magic, version and length precede the header; the checksum trails
    let payload = &bytes[16 + r.header.len()..bytes.len() - 8];
    for (version, ok) in [(1u32, true), (2, false)] {
        let p = dir.path().join(format!("v{version}.sdla"));
        let mut w = ContainerWriter::create(&p, b"SDLA", version, &header.to_string()).unwrap();
        w.write(payload).unwrap();
        w.finish().unwrap();
        let read = LatentArchive::read(&p);
        assert_eq!(read.is_ok(), ok, "version {version}");
        if ok {
            assert_eq!(read.unwrap().noise, LatentArchive::from_batch(&batch, &m).unwrap().noise);
        }
    }
}

#[test]
fn interpolation_endpoints_and_midpoint() {
    let m = tiny();
    let batch = run(&m, 2, 3);
    let a = LatentArchive::from_batch(&batch, &m).unwrap();
    for blend in [NoiseBlend::Nearest, NoiseBlend::Interpolate] {
        let e0 = interpolate_members(&a, &m, 0, 1, 0.0, blend).unwrap();
        assert_eq!(e0.states, batch.members[0].states);
        if blend == NoiseBlend::Nearest {
            let e1 = interpolate_members(&a, &m, 0, 1, 1.0, blend).unwrap();
            assert_eq!(e1.states, batch.members[1].states);
        }
    }
    let mid = interpolate_members(&a, &m, 0, 1, 0.5, NoiseBlend::Nearest).unwrap();
    for (t, n) in mid.noise.iter().enumerate() {
        for (z, (za, zb)) in n.latents.levels.iter().zip(a.noise[0][t].latents.levels.iter().zip(&a.noise[1][t].latents.levels)) {
            let expect: Vec<f32> = za.values.iter().zip(&zb.values).map(|(x, y)| 0.5 * x + 0.5 * y).collect();
            assert_eq!(z.values, expect);
        }
        assert_eq!(n.keys_r, a.noise[1][t].keys_r);
    }
    assert!(interpolate_members(&a, &m, 0, 1, 1.5, NoiseBlend::Nearest).is_err());
}

#[test]
fn rescale_sign_flip_negates_latent_contribution() {
    let m = tiny();
    let batch = run(&m, 2, 1);
    let a = LatentArchive::from_batch(&batch, &m).unwrap();
    let plus = rescale_ensemble(&a, &m, [2.0; 3]).unwrap();
    let minus = rescale_ensemble(&a, &m, [-2.0; 3]).unwrap();
    assert_ne!(plus[0].states, minus[0].states);
    assert_eq!(plus.len(), 2);
}
