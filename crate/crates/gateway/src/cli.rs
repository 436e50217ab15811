//! Subcommands of the `sdl` binary.

use crate::engine::{Engine, SpectraRequest, Trajectory, ROOT_ENV};
use crate::error::{GatewayError, Result};
use crate::manifest::{FileRef, RunManifest};
use crate::parse_beta;
use clap::{Args, Parser, Subcommand, ValueEnum};
use sdl_core::emulator::{rollout, Mode, ModelState, RolloutSpec};
use sdl_core::latents::{archive_write, rescale_ensemble, LatentArchive, NoiseBlend};
use sdl_core::losses::SpatialWeights;
use sdl_core::pipeline::{member_states, Pipeline, PipelineConfig};
use sdl_core::synthgen::{Dataset, RecordRef};
use sdl_core::trainer::{cost_ratio, full_scale_reported, full_scale_schedule, CostLedger, Trainer};
use sdl_core::verify::{MetricOptions, MetricsAccumulator};
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::sync::Arc;

#[derive(Debug, Parser)]
#[command(name = "sdl", version, about = "Train, run and inspect SDL ensemble emulators")]
pub struct Cli {
    /// Seed for every random stream; overrides the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Pipeline configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate the synthetic system and write the dataset.
    GenData,
    /// Train the deterministic emulator.
    TrainBase {
        #[arg(long)]
        data: PathBuf,
    },
    /// Insert noise layers and fine-tune them with afCRPS.
    FinetuneSdl {
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Run an ensemble from a test initial condition and archive its latents.
    Forecast(ForecastArgs),
    /// Regenerate one member from an archive.
    Replay {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        member: usize,
        #[arg(long, value_parser = parse_beta)]
        beta: Option<[f64; 3]>,
    },
    /// Regenerate every member with new scales.
    Rescale {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, value_parser = parse_beta)]
        beta: [f64; 3],
    },
    /// Trajectory between two archived members.
    Interpolate {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        i: usize,
        #[arg(long)]
        j: usize,
        #[arg(long)]
        e: f64,
        #[arg(long, value_enum, default_value_t = Blend::Nearest)]
        blend: Blend,
    },
    /// Score an archived ensemble against the dataset trajectory it started from.
    Verify {
        #[arg(long)]
        archive: PathBuf,
        /// Dataset holding the verifying trajectory.
        #[arg(long)]
        truth: PathBuf,
        /// Defaults to the checkpoint named in the archive's run manifest.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Deterministic model for `rmse_det`.
        #[arg(long)]
        base: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        rank_stride: usize,
    },
    /// Anomaly spectra while one level's scale varies.
    Spectra {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        level: u8,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        values: Vec<f64>,
        #[arg(long)]
        step: Option<usize>,
        #[arg(long, default_value_t = 0)]
        member: usize,
    },
    /// Forward/backward pass counts and the fine-tuning cost ratio.
    CostLedger {
        /// `paper` (published full-scale counts), `schedule`, `config`, or a directory with ledger files.
        #[arg(long, default_value = "paper")]
        phases: String,
    },
    /// HTTP service over the runs under a data root.
    Serve {
        /// Defaults to $SDL_DATA_ROOT.
        #[arg(long)]
        root: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
        #[arg(long)]
        workers: Option<usize>,
        /// Cached member trajectories.
        #[arg(long, default_value_t = 128)]
        cache: usize,
    },
}

#[derive(Debug, Args)]
pub struct ForecastArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Index into the test initial conditions.
    #[arg(long, default_value_t = 0)]
    pub case: usize,
    #[arg(long)]
    pub members: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long, value_parser = parse_beta, default_value = "1,1,1")]
    pub beta: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Blend {
    Nearest,
    Interpolate,
}

impl From<Blend> for NoiseBlend {
    fn from(b: Blend) -> Self {
        match b {
            Blend::Nearest => NoiseBlend::Nearest,
            Blend::Interpolate => NoiseBlend::Interpolate,
        }
    }
}

/// A raw little-endian f32 file described in a JSON sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct ArrayRef {
    pub file: String,
    pub shape: Vec<usize>,
    pub dtype: String,
}

pub fn write_array<'a>(dir: &Path, name: &str, shape: Vec<usize>, planes: impl Iterator<Item = &'a [f32]>) -> Result<ArrayRef> {
    let mut bytes = Vec::with_capacity(shape.iter().product::<usize>() * 4);
    for p in planes {
        for v in p {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    if bytes.len() != shape.iter().product::<usize>() * 4 {
        return Err(GatewayError::BadRequest(format!("{name}: data does not match shape {shape:?}")));
    }
    std::fs::write(dir.join(name), bytes)?;
    Ok(ArrayRef {
        file: name.to_string(),
        shape,
        dtype: "f32le".into(),
    })
}

pub fn read_array(dir: &Path, a: &ArrayRef) -> Result<Vec<f32>> {
    let bytes = std::fs::read(dir.join(&a.file))?;
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

#[derive(Debug, Serialize, serde::Deserialize)]
pub struct TrajectoryFile {
    pub run: String,
    pub members: Vec<usize>,
    pub beta: [f64; 3],
    pub variables: Vec<String>,
    /// Leads `1..=steps` of each listed member.
    pub states: ArrayRef,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub e: Option<f64>,
}

#[derive(Debug, Serialize, serde::Deserialize)]
pub struct RescaleFile {
    pub run: String,
    pub beta: [f64; 3],
    pub variables: Vec<String>,
    /// `(members, steps, variables, h, w)`.
    pub members: ArrayRef,
    /// `(steps, variables, h, w)`.
    pub mean: ArrayRef,
    pub std: ArrayRef,
}

fn out_dir(cli_out: &Option<PathBuf>) -> Result<PathBuf> {
    let dir = cli_out
        .clone()
        .ok_or_else(|| GatewayError::BadRequest("--out is required".into()))?;
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

pub fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<PipelineConfig> {
    let mut c = match path {
        Some(p) => PipelineConfig::from_toml(&std::fs::read_to_string(p)?)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = seed {
        c.seed = s;
    }
    Ok(c)
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(v)?)?;
    Ok(())
}

/// `12410560` → `12,410,560`.
pub fn thousands(n: u64) -> String {
    let s = n.to_string();
    let mut out = String::new();
    for (i, c) in s.chars().enumerate() {
        if i > 0 && (s.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(c);
    }
    out
}

fn trajectories_shape(run_dims: (usize, usize, usize), members: usize, steps: usize) -> Vec<usize> {
    vec![members, steps, run_dims.0, run_dims.1, run_dims.2]
}

pub fn run(cli: Cli) -> Result<()> {
    let config = load_config(cli.config.as_deref(), cli.seed)?;
    match cli.command {
        Command::GenData => {
            let out = out_dir(&cli.out)?;
            let data = Dataset::generate(&config.system, config.seed, &config.sizes, |m| log::info!("{m}"))?;
            let path = out.join("dataset.sdld");
            data.write(&path)?;
            let manifest = data.manifest("dataset.sdld", sdl_core::container::sha256_file(&path)?);
            write_json(&out.join("manifest.json"), &manifest)?;
            println!("dataset={} sha256={}", path.display(), manifest.sha256);
        }
        Command::TrainBase { data } => {
            let out = out_dir(&cli.out)?;
            let data = Dataset::read(&data)?;
            check_grid(&config, &data)?;
            let mut t = Trainer::new(train_config(&config));
            t.metrics_path = Some(out.join("metrics.jsonl"));
            t.checkpoint_path = Some(out.join("base.last-good.sdlm"));
            let o = t.train_deterministic(&data)?;
            let path = out.join("base.sdlm");
            o.model.write(&path)?;
            write_json(&out.join("ledger-base.json"), &o.ledger)?;
            println!("checkpoint={} sha256={}", path.display(), o.model.checksum()?);
        }
        Command::FinetuneSdl { base, data } => {
            let out = out_dir(&cli.out)?;
            let data = Dataset::read(&data)?;
            check_grid(&config, &data)?;
            let base = ModelState::read(&base)?;
            let mut t = Trainer::new(train_config(&config));
            t.metrics_path = Some(out.join("metrics.jsonl"));
            t.checkpoint_path = Some(out.join("ensemble.last-good.sdlm"));
            let o = t.finetune_sdl(&base, &data)?;
            let path = out.join("ensemble.sdlm");
            o.model.write(&path)?;
            write_json(&out.join("ledger-finetune.json"), &o.ledger)?;
            println!("checkpoint={} sha256={}", path.display(), o.model.checksum()?);
        }
        Command::Forecast(a) => forecast(&config, &out_dir(&cli.out)?, a)?,
        Command::Replay { run, member, beta } => {
            let out = out_dir(&cli.out)?;
            let engine = Engine::new(None, 0);
            let r = engine.open(&run)?;
            let beta = beta.unwrap_or(r.archive.header.beta);
            let states = engine.member(&r, member, Some(beta))?;
            let file = TrajectoryFile {
                run: r.id.clone(),
                members: vec![member],
                beta,
                variables: r.variable_names(),
                states: write_array(&out, "states.f32", trajectories_shape(r.dims(), 1, r.steps()), states.iter().map(|s| s.as_slice()))?,
                e: None,
            };
            write_json(&out.join("replay.json"), &file)?;
            println!("replay={}", out.join("replay.json").display());
        }
        Command::Rescale { run, beta } => {
            let out = out_dir(&cli.out)?;
            let engine = Engine::new(None, 0);
            let r = engine.open(&run)?;
            let e = engine.ensemble(&r, beta)?;
            let (nv, h, w) = r.dims();
            let file = RescaleFile {
                run: r.id.clone(),
                beta,
                variables: r.variable_names(),
                members: write_array(
                    &out,
                    "members.f32",
                    trajectories_shape(r.dims(), r.members(), r.steps()),
                    e.members.iter().flat_map(|t| t.iter().map(|s| s.as_slice())),
                )?,
                mean: write_array(&out, "mean.f32", vec![r.steps(), nv, h, w], e.mean.iter().map(|s| s.as_slice()))?,
                std: write_array(&out, "std.f32", vec![r.steps(), nv, h, w], e.std.iter().map(|s| s.as_slice()))?,
            };
            write_json(&out.join("rescale.json"), &file)?;
            println!("rescale={}", out.join("rescale.json").display());
        }
        Command::Interpolate { run, i, j, e, blend } => {
            let out = out_dir(&cli.out)?;
            let engine = Engine::new(None, 0);
            let r = engine.open(&run)?;
            let states = engine.interpolate_trajectory(&r, i, j, e, blend.into())?;
            let file = TrajectoryFile {
                run: r.id.clone(),
                members: vec![i, j],
                beta: r.archive.header.beta,
                variables: r.variable_names(),
                states: write_array(&out, "states.f32", trajectories_shape(r.dims(), 1, r.steps()), states.iter().map(|s| s.as_slice()))?,
                e: Some(e),
            };
            write_json(&out.join("interpolate.json"), &file)?;
            println!("interpolate={}", out.join("interpolate.json").display());
        }
        Command::Verify {
            archive,
            truth,
            checkpoint,
            base,
            rank_stride,
        } => verify(&out_dir(&cli.out)?, &archive, &truth, checkpoint, base, rank_stride)?,
        Command::Spectra {
            run,
            level,
            values,
            step,
            member,
        } => {
            let out = out_dir(&cli.out)?;
            let engine = Engine::new(None, 0);
            let r = engine.open(&run)?;
            let resp = engine.spectra(&r, &SpectraRequest { level, values, step, member })?;
            write_json(&out.join("spectra.json"), &resp)?;
            for c in &resp.curves {
                println!("level={} value={} anomaly_centroid={}", resp.level, c.value, c.anomaly_centroid);
            }
        }
        Command::CostLedger { phases } => {
            let (base, fine) = ledgers(&phases, &config)?;
            let ratio = cost_ratio(&base, &fine, base.backward_weight)?;
            println!("baseline_passes={}", thousands(base.total_forward()));
            println!("finetune_passes={}", thousands(fine.total_forward()));
            println!("ratio={:.2}%", 100.0 * ratio);
            if let Some(dir) = &cli.out {
                std::fs::create_dir_all(dir)?;
                write_json(
                    &dir.join("cost-ledger.json"),
                    &serde_json::json!({ "baseline": base, "finetune": fine, "ratio": ratio }),
                )?;
            }
        }
        Command::Serve {
            root,
            addr,
            workers,
            cache,
        } => {
            let root = root
                .or_else(|| std::env::var_os(ROOT_ENV).map(PathBuf::from))
                .ok_or_else(|| GatewayError::BadRequest(format!("--root or ${ROOT_ENV} is required")))?;
            if !root.is_dir() {
                return Err(GatewayError::NotFound(format!("data root {}", root.display())));
            }
            let workers = workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(2, |n| n.get()));
            let engine = Arc::new(Engine::new(Some(root), cache));
            tokio::runtime::Runtime::new()?.block_on(crate::http::serve(engine, &addr, workers))?;
        }
    }
    Ok(())
}

fn train_config(c: &PipelineConfig) -> sdl_core::trainer::TrainConfig {
    sdl_core::trainer::TrainConfig {
        seed: c.seed,
        ..c.train.clone()
    }
}

fn check_grid(c: &PipelineConfig, data: &Dataset) -> Result<()> {
    if data.grid() != c.train.model.grid {
        return Err(GatewayError::BadRequest(format!(
            "dataset grid {} differs from model grid {}",
            data.grid(),
            c.train.model.grid
        )));
    }
    Ok(())
}

fn ledgers(phases: &str, config: &PipelineConfig) -> Result<(CostLedger, CostLedger)> {
    match phases {
        "paper" => Ok(full_scale_reported()),
        "schedule" => {
            let (p, f) = full_scale_schedule();
            Ok((CostLedger::from_phases(&p), CostLedger::from_phases(&[f])))
        }
        "config" => Ok((
            CostLedger::from_phases(&config.train.phases),
            CostLedger::from_phases(&[config.train.finetune.clone()]),
        )),
        dir => {
            let dir = Path::new(dir);
            if !dir.is_dir() {
                return Err(GatewayError::BadRequest(format!(
                    "--phases must be paper, schedule, config or a directory, got {:?}",
                    dir.display().to_string()
                )));
            }
            let read = |name: &str| -> Result<CostLedger> { Ok(serde_json::from_str(&std::fs::read_to_string(dir.join(name))?)?) };
            Ok((read("ledger-base.json")?, read("ledger-finetune.json")?))
        }
    }
}

fn forecast(config: &PipelineConfig, out: &Path, a: ForecastArgs) -> Result<()> {
    let model = ModelState::read(&a.checkpoint)?;
    let data = Dataset::read(&a.data)?;
    let mut cfg = config.clone();
    if let Some(s) = a.steps {
        cfg.eval.steps = s;
    }
    if let Some(m) = a.members {
        cfg.eval.members = m;
    }
    let cases = Pipeline::new(out.to_path_buf(), cfg.clone()).test_cases(&data);
    let r = *cases
        .get(a.case)
        .ok_or_else(|| GatewayError::NotFound(format!("test case {} (have {})", a.case, cases.len())))?;
    let spec = RolloutSpec {
        steps: cfg.eval.steps,
        members: cfg.eval.members,
        beta: a.beta,
        seed: cfg.seed,
        mode: Mode::Stochastic,
    };
    let batch = rollout(&model, data.state(r), spec)?;
    member_states(&batch)?;
    let path = out.join("archive.sdla");
    archive_write(&batch, &model, &path)?;
    let run_id = out
        .canonicalize()?
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into());
    let manifest = RunManifest {
        run_id,
        checkpoint: FileRef::of(&a.checkpoint, out)?,
        archive: FileRef::of(&path, out)?,
        dataset: Some(FileRef::of(&a.data, out)?),
        case: Some((r.trajectory, r.step)),
        config: serde_json::json!({
            "seed": cfg.seed,
            "members": spec.members,
            "steps": spec.steps,
            "beta": spec.beta,
            "case": a.case,
            "pipeline": cfg,
        }),
        created_unix: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_secs()),
    };
    manifest.write(out)?;
    println!("archive={} sha256={}", path.display(), manifest.archive.sha256);
    Ok(())
}

/// Position of `initial` in the dataset with `steps` states after it.
fn locate(data: &Dataset, initial: &[f32], steps: usize) -> Option<RecordRef> {
    let len = data.state_len();
    for (t, traj) in data.trajectories.iter().enumerate() {
        for k in 0..traj.n_states.saturating_sub(steps) {
            if traj.state(k, len) == initial {
                return Some(RecordRef { trajectory: t, step: k });
            }
        }
    }
    None
}

fn verify(out: &Path, archive: &Path, truth: &Path, checkpoint: Option<PathBuf>, base: Option<PathBuf>, rank_stride: usize) -> Result<()> {
    let a = LatentArchive::read(archive)?;
    let checkpoint = match checkpoint {
        Some(c) => c,
        None => {
            let dir = archive.parent().unwrap_or(Path::new("."));
            RunManifest::read(dir)
                .map_err(|_| GatewayError::BadRequest("no --checkpoint and no run manifest next to the archive".into()))?
                .checkpoint
                .resolve(dir)
        }
    };
    let model = ModelState::read(&checkpoint)?;
    let data = Dataset::read(truth)?;
    let steps = a.header.steps;
    let r = locate(&data, &a.initial, steps)
        .ok_or_else(|| GatewayError::NotFound("archive initial state in the truth dataset".into()))?;
    let truth: Vec<Vec<f32>> = data.window(r, steps)[1..].iter().map(|s| s.to_vec()).collect();
    let members: Vec<Trajectory> = rescale_ensemble(&a, &model, a.header.beta)?
        .into_iter()
        .map(|t| match t.aborted {
            Some(m) => Err(GatewayError::Replay(m)),
            None => Ok(Arc::new(t.states)),
        })
        .collect::<Result<_>>()?;
    let det = match base {
        Some(b) => {
            let b = ModelState::read(&b)?;
            let run = rollout(
                &b,
                &a.initial,
                RolloutSpec {
                    steps,
                    members: 1,
                    beta: [1.0; 3],
                    seed: a.header.seed,
                    mode: Mode::Deterministic,
                },
            )?;
            Some(run.members[0].states.clone())
        }
        None => None,
    };
    let c = &model.config;
    let forecasts: Vec<Vec<Vec<f32>>> = members.iter().map(|t| t.as_ref().clone()).collect();
    let mut acc = MetricsAccumulator::new(
        a.header.members,
        steps,
        (c.variables, c.grid, c.grid),
        &SpatialWeights::uniform(c.grid),
        MetricOptions {
            rank_stride,
            tie_seed: a.header.seed,
            ..MetricOptions::default()
        },
    )?;
    acc.add(&forecasts, &truth, det.as_deref())?;
    let names: Vec<String> = sdl_core::synthgen::VARIABLES.iter().map(|s| s.to_string()).collect();
    let report = acc.report(&names)?;
    std::fs::write(out.join("report.json"), report.to_json()?)?;
    std::fs::write(out.join("report.csv"), report.to_table())?;
    for cell in &report.cells {
        if let Some(ssr) = cell.ssr {
            println!("variable={} lead={} ssr={ssr:.4}", cell.variable, cell.lead);
        }
    }
    Ok(())
}
