//! End-to-end run with on-disk caching of every stage.
//!
//! Artifacts live under `$SDL_PIPELINE_DIR`, or `target/sdl-pipeline` in
//! the workspace when unset. A stage is skipped when its output exists.

use crate::container::sha256_file;
use crate::emulator::{rollout, EnsembleBatch, Mode, ModelState, RolloutSpec};
use crate::error::{invalid, Result};
use crate::latents::{rescale_ensemble, LatentArchive};
use crate::losses::SpatialWeights;
use crate::synthgen::{Dataset, DatasetSizes, RecordRef, Split, SystemConfig, VARIABLES};
use crate::trainer::{CostLedger, TrainConfig, Trainer};
use crate::verify::{beta_layer_attribution, MetricOptions, MetricsAccumulator, Spectrum, VerificationReport};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::time::Instant;

pub const DIR_ENV: &str = "SDL_PIPELINE_DIR";

pub fn default_root() -> PathBuf {
    match std::env::var_os(DIR_ENV) {
        Some(p) => PathBuf::from(p),
        None => Path::new(env!("CARGO_MANIFEST_DIR")).join("../../target/sdl-pipeline"),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub members: usize,
    pub steps: usize,
    /// Strides between successive test initial conditions.
    pub ic_spacing: usize,
    pub rank_stride: usize,
    pub sweep_betas: Vec<f64>,
    pub sweep_cases: usize,
    pub attribution_value: f64,
    pub attribution_cases: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            members: 10,
            steps: 20,
            ic_spacing: 50,
            rank_stride: 16,
            sweep_betas: vec![0.0, 0.5, 1.0, 1.5, 2.0, 3.0],
            sweep_cases: 4,
            attribution_value: 2.0,
            attribution_cases: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub system: SystemConfig,
    pub sizes: DatasetSizes,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 20250101,
            system: SystemConfig::default(),
            sizes: DatasetSizes::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.system.validate()?;
        self.train.validate()?;
        if self.system.grid != self.train.model.grid {
            return Err(invalid(format!(
                "system grid {} differs from model grid {}",
                self.system.grid, self.train.model.grid
            )));
        }
        let e = &self.eval;
        if e.members < 2 || e.steps == 0 || e.ic_spacing == 0 || e.rank_stride == 0 {
            return Err(invalid("eval needs ≥ 2 members and positive steps, spacing and stride"));
        }
        Ok(())
    }
}

/// Ensemble statistics of one uniform scale, per variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub beta: f64,
    /// Spread aggregated over leads and cases.
    pub std: Vec<f64>,
    pub rmse: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionSummary {
    pub value: f64,
    /// Lead-1 anomaly spectrum per level, averaged over cases.
    pub spectra: Vec<(u8, Spectrum)>,
    pub centroids: Vec<(u8, f64)>,
    /// Weighted RMS of the vorticity anomaly at lead 1 per level.
    pub rms: Vec<(u8, f64)>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Timings {
    pub stages: Vec<(String, f64)>,
}

pub struct Pipeline {
    pub root: PathBuf,
    pub config: PipelineConfig,
}

impl Pipeline {
    pub fn new(root: PathBuf, config: PipelineConfig) -> Self {
        Self { root, config }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn timed<T>(&self, stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let t0 = Instant::now();
        let out = f()?;
        let secs = t0.elapsed().as_secs_f64();
        let path = self.path("timings.json");
        let mut t: Timings = std::fs::read_to_string(&path)
            .ok()
            .and_then(|s| serde_json::from_str(&s).ok())
            .unwrap_or_default();
        t.stages.retain(|(s, _)| s != stage);
        t.stages.push((stage.to_string(), secs));
        std::fs::write(&path, serde_json::to_string_pretty(&t)?)?;
        log::info!("{stage}: {secs:.1}s");
        Ok(out)
    }

    pub fn dataset(&self) -> Result<Dataset> {
        std::fs::create_dir_all(&self.root)?;
        let path = self.path("dataset.sdld");
        if path.exists() {
            return Dataset::read(&path);
        }
        let c = &self.config;
        let data = self.timed("gen-data", || {
            Dataset::generate(&c.system, c.seed, &c.sizes, |msg| log::info!("{msg}"))
        })?;
        let tmp = self.path("dataset.sdld.partial");
        data.write(&tmp)?;
        std::fs::rename(&tmp, &path)?;
        let manifest = data.manifest("dataset.sdld", sha256_file(&path)?);
        std::fs::write(self.path("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        Ok(data)
    }

    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.config.seed,
            ..self.config.train.clone()
        }
    }

    pub fn base(&self, data: &Dataset) -> Result<ModelState> {
        let path = self.path("base.sdlm");
        if path.exists() {
            return ModelState::read(&path);
        }
        let mut trainer = Trainer::new(self.train_config());
        trainer.metrics_path = Some(self.path("metrics.jsonl"));
        trainer.checkpoint_path = Some(self.path("base.last-good.sdlm"));
        let out = self.timed("train-base", || trainer.train_deterministic(data))?;
        std::fs::write(self.path("ledger-base.json"), serde_json::to_string_pretty(&out.ledger)?)?;
        out.model.write(&path)?;
        Ok(out.model)
    }

    pub fn ensemble(&self, base: &ModelState, data: &Dataset) -> Result<ModelState> {
        let path = self.path("ensemble.sdlm");
        if path.exists() {
            return ModelState::read(&path);
        }
        let mut trainer = Trainer::new(self.train_config());
        trainer.metrics_path = Some(self.path("metrics.jsonl"));
        trainer.checkpoint_path = Some(self.path("ensemble.last-good.sdlm"));
        let out = self.timed("finetune-sdl", || trainer.finetune_sdl(base, data))?;
        std::fs::write(self.path("ledger-finetune.json"), serde_json::to_string_pretty(&out.ledger)?)?;
        out.model.write(&path)?;
        Ok(out.model)
    }

    pub fn ledgers(&self) -> Result<(CostLedger, CostLedger)> {
        let read = |name: &str| -> Result<CostLedger> { Ok(serde_json::from_str(&std::fs::read_to_string(self.path(name))?)?) };
        Ok((read("ledger-base.json")?, read("ledger-finetune.json")?))
    }

    /// Test initial conditions spaced `ic_spacing` apart with room for the
    /// full lead range.
    pub fn test_cases(&self, data: &Dataset) -> Vec<RecordRef> {
        let e = &self.config.eval;
        data.starts(Split::Test, e.steps)
            .into_iter()
            .filter(|r| r.step % e.ic_spacing == 0)
            .collect()
    }

    fn case_seed(&self, case: usize) -> u64 {
        self.config.seed.wrapping_mul(1_000_003).wrapping_add(case as u64 + 1)
    }

    fn spec(&self, case: usize, beta: [f64; 3]) -> RolloutSpec {
        RolloutSpec {
            steps: self.config.eval.steps,
            members: self.config.eval.members,
            beta,
            seed: self.case_seed(case),
            mode: Mode::Stochastic,
        }
    }

    fn truth(&self, data: &Dataset, r: RecordRef) -> Vec<Vec<f32>> {
        data.window(r, self.config.eval.steps)[1..].iter().map(|s| s.to_vec()).collect()
    }

    fn variables() -> Vec<String> {
        VARIABLES.iter().map(|s| s.to_string()).collect()
    }

    fn dims(&self, model: &ModelState) -> (usize, usize, usize) {
        (model.config.variables, model.config.grid, model.config.grid)
    }

    /// Test-split verification of the ensemble with the base model as the
    /// deterministic reference.
    pub fn report(&self, base: &ModelState, model: &ModelState, data: &Dataset) -> Result<VerificationReport> {
        let path = self.path("report.json");
        if path.exists() {
            return Ok(serde_json::from_str(&std::fs::read_to_string(&path)?)?);
        }
        let e = &self.config.eval;
        let cases = self.test_cases(data);
        if cases.is_empty() {
            return Err(invalid("no test initial conditions"));
        }
        let options = MetricOptions {
            rank_stride: e.rank_stride,
            tie_seed: self.config.seed,
            ..MetricOptions::default()
        };
        let weights = SpatialWeights::uniform(model.config.grid);
        let report = self.timed("verify", || {
            let mut acc = MetricsAccumulator::new(e.members, e.steps, self.dims(model), &weights, options)?;
            for (i, r) in cases.iter().enumerate() {
                let initial = data.state(*r);
                let batch = rollout(model, initial, self.spec(i, [1.0; 3]))?;
                let det = rollout(
                    base,
                    initial,
                    RolloutSpec {
                        members: 1,
                        mode: Mode::Deterministic,
                        ..self.spec(i, [1.0; 3])
                    },
                )?;
                let forecasts = member_states(&batch)?;
                acc.add(&forecasts, &self.truth(data, *r), Some(&det.members[0].states))?;
            }
            acc.report(&Self::variables())
        })?;
        std::fs::write(&path, report.to_json()?)?;
        std::fs::write(self.path("report.csv"), report.to_table())?;
        Ok(report)
    }

    fn archive(&self, model: &ModelState, data: &Dataset, case: usize) -> Result<LatentArchive> {
        let cases = self.test_cases(data);
        let r = *cases.get(case).ok_or_else(|| invalid(format!("test case {case} missing")))?;
        let batch = rollout(model, data.state(r), self.spec(case, [1.0; 3]))?;
        LatentArchive::from_batch(&batch, model)
    }

    /// Uniform-scale sweep over `±sweep_betas` on the first test cases.
    pub fn sweep(&self, model: &ModelState, data: &Dataset) -> Result<Vec<SweepPoint>> {
        let path = self.path("sweep.json");
        if path.exists() {
            return Ok(serde_json::from_str(&std::fs::read_to_string(&path)?)?);
        }
        let e = &self.config.eval;
        let mut betas: Vec<f64> = e.sweep_betas.iter().flat_map(|&b| if b == 0.0 { vec![b] } else { vec![-b, b] }).collect();
        betas.sort_by(f64::total_cmp);
        let dims = self.dims(model);
        let weights = SpatialWeights::uniform(model.config.grid);
        let cases = self.test_cases(data);
        let n_cases = e.sweep_cases.min(cases.len());
        let points = self.timed("sweep", || {
            let mut accs = betas
                .iter()
                .map(|_| MetricsAccumulator::new(e.members, e.steps, dims, &weights, MetricOptions::default()))
                .collect::<Result<Vec<_>>>()?;
            for (case, r) in cases.iter().take(n_cases).enumerate() {
                let archive = self.archive(model, data, case)?;
                let truth = self.truth(data, *r);
                for (acc, &b) in accs.iter_mut().zip(&betas) {
                    let runs = rescale_ensemble(&archive, model, [b; 3])?;
                    let forecasts: Vec<Vec<Vec<f32>>> = runs.into_iter().map(|m| m.states).collect();
                    acc.add(&forecasts, &truth, None)?;
                }
            }
            betas
                .iter()
                .zip(&accs)
                .map(|(&beta, acc)| {
                    let rep = acc.report(&Self::variables())?;
                    let mut std = Vec::new();
                    let mut rmse = Vec::new();
                    for v in Self::variables() {
                        let cells: Vec<_> = rep.cells.iter().filter(|c| c.variable == v).collect();
                        let n = cells.len() as f64;
                        std.push((cells.iter().map(|c| c.spread * c.spread).sum::<f64>() / n).sqrt());
                        rmse.push((cells.iter().map(|c| c.rmse_ens_mean * c.rmse_ens_mean).sum::<f64>() / n).sqrt());
                    }
                    Ok(SweepPoint { beta, std, rmse })
                })
                .collect::<Result<Vec<_>>>()
        })?;
        std::fs::write(&path, serde_json::to_string_pretty(&points)?)?;
        Ok(points)
    }

    /// Lead-1 anomaly spectra of levels 1 and 3 at `attribution_value`.
    pub fn attribution(&self, model: &ModelState, data: &Dataset) -> Result<AttributionSummary> {
        let path = self.path("attribution.json");
        if path.exists() {
            return Ok(serde_json::from_str(&std::fs::read_to_string(&path)?)?);
        }
        let e = &self.config.eval;
        let n_cases = e.attribution_cases.min(self.test_cases(data).len());
        let n = model.config.grid;
        let summary = self.timed("attribution", || {
            let mut spectra = Vec::new();
            let mut centroids = Vec::new();
            let mut rms = Vec::new();
            for level in [1u8, 2, 3] {
                let mut sum: Option<Spectrum> = None;
                let mut sq = 0.0;
                for case in 0..n_cases {
                    let archive = self.archive(model, data, case)?;
                    let att = beta_layer_attribution(model, &archive, level, &[e.attribution_value])?;
                    let s = &att[0].spectra[0];
                    sq += att[0].anomalies[0][..n * n].iter().map(|v| (*v as f64).powi(2)).sum::<f64>() / (n * n) as f64;
                    sum = Some(match sum {
                        None => s.clone(),
                        Some(mut acc) => {
                            acc.energy.iter_mut().zip(&s.energy).for_each(|(a, b)| *a += b);
                            acc.total += s.total;
                            acc
                        }
                    });
                }
                let s = sum.ok_or_else(|| invalid("no attribution cases"))?;
                centroids.push((level, s.centroid()));
                rms.push((level, (sq / n_cases as f64).sqrt()));
                spectra.push((level, s));
            }
            Ok(AttributionSummary {
                value: e.attribution_value,
                spectra,
                centroids,
                rms,
            })
        })?;
        std::fs::write(&path, serde_json::to_string_pretty(&summary)?)?;
        Ok(summary)
    }

    /// Every stage, reusing cached outputs.
    pub fn run_all(&self) -> Result<PipelineResults> {
        let data = self.dataset()?;
        let base = self.base(&data)?;
        let model = self.ensemble(&base, &data)?;
        let report = self.report(&base, &model, &data)?;
        let sweep = self.sweep(&model, &data)?;
        let attribution = self.attribution(&model, &data)?;
        Ok(PipelineResults {
            report,
            sweep,
            attribution,
        })
    }
}

pub struct PipelineResults {
    pub report: VerificationReport,
    pub sweep: Vec<SweepPoint>,
    pub attribution: AttributionSummary,
}

/// `[member][lead]` physical states; aborted members are an error.
pub fn member_states(batch: &EnsembleBatch) -> Result<Vec<Vec<Vec<f32>>>> {
    batch
        .members
        .iter()
        .map(|m| match &m.aborted {
            Some(msg) => Err(crate::error::Error::NonFinite(msg.clone())),
            None => Ok(m.states.clone()),
        })
        .collect()
}
