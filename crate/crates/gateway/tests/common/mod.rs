#![allow(dead_code)]

use sdl_core::emulator::ModelConfig;
use sdl_core::pipeline::{EvalConfig, PipelineConfig};
use sdl_core::synthgen::{DatasetSizes, SystemConfig};
use sdl_core::trainer::{Phase, TrainConfig};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

pub fn tiny_config() -> PipelineConfig {
    PipelineConfig {
        seed: 5,
        system: SystemConfig {
            grid: 16,
            spinup_strides: 10,
            decorrelation_strides: 1,
            ..SystemConfig::default()
        },
        sizes: DatasetSizes {
            train: 12,
            val: 4,
            test: 8,
            samples_per_trajectory: 8,
        },
        train: TrainConfig {
            model: ModelConfig {
                grid: 16,
                widths: [4, 6, 8, 10],
                d_z: 3,
                ..ModelConfig::default()
            },
            phases: vec![Phase::mse("1-step", 1, 1, 4, 2)],
            finetune: Phase::afcrps("finetune", 1, 2, 2, 3),
            validation_samples: 2,
            ..TrainConfig::default()
        },
        eval: EvalConfig {
            members: 3,
            steps: 3,
            ic_spacing: 1,
            ..EvalConfig::default()
        },
    }
}

pub fn sdl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sdl")).args(args).output().expect("run sdl")
}

pub fn ok(args: &[&str]) -> String {
    let o = sdl(args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Dataset, checkpoints and one run under a data root, built once per
/// test binary through the CLI.
pub struct Fixture {
    pub dir: PathBuf,
    pub config: PathBuf,
    pub data: PathBuf,
    pub base: PathBuf,
    pub ensemble: PathBuf,
    /// Data root holding the run `r1`.
    pub root: PathBuf,
}

impl Fixture {
    pub fn run(&self) -> PathBuf {
        self.root.join("r1")
    }
}

pub fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap().keep();
        let config = dir.join("config.toml");
        std::fs::write(&config, tiny_config().to_toml().unwrap()).unwrap();
        let c = s(&config);
        let work = dir.join("work");
        ok(&["gen-data", "--config", c, "--out", s(&work)]);
        let data = work.join("dataset.sdld");
        ok(&["train-base", "--config", c, "--data", s(&data), "--out", s(&work)]);
        let base = work.join("base.sdlm");
        ok(&["finetune-sdl", "--config", c, "--base", s(&base), "--data", s(&data), "--out", s(&work)]);
        let ensemble = work.join("ensemble.sdlm");
        let root = dir.join("runs");
        ok(&[
            "forecast",
            "--config",
            c,
            "--checkpoint",
            s(&ensemble),
            "--data",
            s(&data),
            "--seed",
            "7",
            "--out",
            s(&root.join("r1")),
        ]);
        Fixture {
            dir,
            config,
            data,
            base,
            ensemble,
            root,
        }
    })
}

pub fn read_f32(path: &Path) -> Vec<f32> {
    std::fs::read(path)
        .unwrap()
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}
