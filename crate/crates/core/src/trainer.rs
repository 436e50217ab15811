//! Deterministic curriculum pre-training, SDL fine-tuning with the
//! almost-fair CRPS, and forward/backward pass accounting.

use crate::emulator::{build_forward, forward_step, MemberNoise, Mode, ModelConfig, ModelState, Normalization, ParamVars};
use crate::error::{invalid, Error, Result};
use crate::losses::{afcrps_field, LossConfig, SpatialWeights};
use crate::synthgen::{Dataset, RecordRef, Split};
use diffcore::{rng::uniform_stream, Graph, RngKey, StreamRole, Tensor};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mse,
    Afcrps,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Phase {
    pub name: String,
    pub loss: LossKind,
    pub rollout_steps: usize,
    pub epochs: usize,
    pub batches_per_epoch: usize,
    pub batch_size: usize,
    /// Ensemble members per sample; 0 for deterministic phases.
    pub members: usize,
    pub learning_rate: f64,
    /// Learning-rate multiplier for the SDL parameters.
    pub sdl_lr_scale: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub grad_clip: f64,
}

impl Default for Phase {
    fn default() -> Self {
        Self {
            name: "phase".into(),
            loss: LossKind::Mse,
            rollout_steps: 1,
            epochs: 1,
            batches_per_epoch: 1,
            batch_size: 1,
            members: 0,
            learning_rate: 3e-4,
            sdl_lr_scale: 1.0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            grad_clip: 1.0,
        }
    }
}

impl Phase {
    pub fn mse(name: &str, rollout_steps: usize, epochs: usize, batches_per_epoch: usize, batch_size: usize) -> Self {
        Self {
            name: name.into(),
            rollout_steps,
            epochs,
            batches_per_epoch,
            batch_size,
            ..Self::default()
        }
    }

    pub fn afcrps(name: &str, epochs: usize, batches_per_epoch: usize, batch_size: usize, members: usize) -> Self {
        Self {
            name: name.into(),
            loss: LossKind::Afcrps,
            epochs,
            batches_per_epoch,
            batch_size,
            members,
            learning_rate: 1e-4,
            sdl_lr_scale: 30.0,
            ..Self::default()
        }
    }

    /// Forward passes of one update.
    pub fn passes_per_update(&self) -> u64 {
        (self.batch_size * self.rollout_steps * self.members.max(1)) as u64
    }

    pub fn forward_passes(&self) -> u64 {
        (self.epochs * self.batches_per_epoch) as u64 * self.passes_per_update()
    }

    pub fn validate(&self) -> Result<()> {
        if self.rollout_steps == 0 || self.epochs == 0 || self.batches_per_epoch == 0 || self.batch_size == 0 {
            return Err(invalid(format!("phase {}: counts must be positive", self.name)));
        }
        if self.loss == LossKind::Afcrps && self.members < 1 {
            return Err(invalid(format!("phase {}: afcrps needs members ≥ 1", self.name)));
        }
        if !(self.learning_rate > 0.0) || !(self.grad_clip > 0.0) || !(self.sdl_lr_scale > 0.0) {
            return Err(invalid(format!("phase {}: learning rate and clip must be positive", self.name)));
        }
        Ok(())
    }
}

/// Full training configuration, readable from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub phases: Vec<Phase>,
    pub finetune: Phase,
    pub loss: LossConfig,
    /// Train only the SDL parameters during fine-tuning.
    pub freeze_base: bool,
    /// Validation samples scored after each epoch.
    pub validation_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            model: ModelConfig::default(),
            phases: vec![
                Phase::mse("1-step", 1, 30, 50, 8),
                Phase::mse("2-step", 2, 10, 50, 8),
                Phase::mse("4-step", 4, 10, 50, 8),
            ],
            finetune: Phase::afcrps("finetune", 20, 25, 4, 10),
            loss: LossConfig::default(),
            freeze_base: false,
            validation_samples: 64,
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        for p in &self.phases {
            p.validate()?;
        }
        self.finetune.validate()?;
        if self.finetune.loss != LossKind::Afcrps {
            return Err(invalid("fine-tuning uses the afcrps loss"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseCount {
    pub name: String,
    pub forward: u64,
    pub backward: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostLedger {
    pub phases: Vec<PhaseCount>,
    pub backward_weight: f64,
}

impl Default for CostLedger {
    fn default() -> Self {
        Self {
            phases: Vec::new(),
            backward_weight: 2.0,
        }
    }
}

impl CostLedger {
    /// Planned counts, one backward per forward.
    pub fn from_phases(phases: &[Phase]) -> Self {
        Self {
            phases: phases
                .iter()
                .map(|p| PhaseCount {
                    name: p.name.clone(),
                    forward: p.forward_passes(),
                    backward: p.forward_passes(),
                })
                .collect(),
            ..Self::default()
        }
    }

    pub fn record(&mut self, name: &str, forward: u64, backward: u64) {
        match self.phases.iter_mut().find(|p| p.name == name) {
            Some(p) => {
                p.forward += forward;
                p.backward += backward;
            }
            None => self.phases.push(PhaseCount {
                name: name.into(),
                forward,
                backward,
            }),
        }
    }

    pub fn total_forward(&self) -> u64 {
        self.phases.iter().map(|p| p.forward).sum()
    }

    pub fn total_backward(&self) -> u64 {
        self.phases.iter().map(|p| p.backward).sum()
    }
}

/// `(fwd_f + w·bwd_f) / (fwd_b + w·bwd_b)`. When every count pairs one
/// backward with each forward the weight cancels and the ratio is formed
/// from the integer forward counts directly.
pub fn cost_ratio(baseline: &CostLedger, finetune: &CostLedger, backward_weight: f64) -> Result<f64> {
    let (fb, bb) = (baseline.total_forward(), baseline.total_backward());
    let (ff, bf) = (finetune.total_forward(), finetune.total_backward());
    if fb == 0 {
        return Err(invalid("baseline ledger has no forward passes"));
    }
    if !(backward_weight >= 0.0) {
        return Err(invalid("backward weight must be non-negative"));
    }
    if fb == bb && ff == bf {
        return Ok(ff as f64 / fb as f64);
    }
    Ok((ff as f64 + backward_weight * bf as f64) / (fb as f64 + backward_weight * bb as f64))
}

/// Full-scale five-phase curriculum and fine-tuning schedule.
pub fn full_scale_schedule() -> (Vec<Phase>, Phase) {
    (
        vec![
            Phase::mse("1-step", 1, 70, 1781, 32),
            Phase::mse("2-step", 2, 20, 1780, 32),
            Phase::mse("4-step", 4, 20, 1000, 32),
            Phase::mse("8-step", 8, 20, 500, 32),
            Phase::mse("16-step", 16, 20, 100, 32),
        ],
        Phase::afcrps("finetune", 20, 1000, 1, 10),
    )
}

/// Per-phase pass counts as reported for the full-scale curriculum and
/// fine-tuning. The first count is 1,280 passes short of its own
/// `70 × 1781 × 32` schedule; the reported total is built from it.
pub fn full_scale_reported() -> (CostLedger, CostLedger) {
    let mut base = CostLedger::default();
    for (name, n) in [
        ("1-step", 3_988_160),
        ("2-step", 2_278_400),
        ("4-step", 2_560_000),
        ("8-step", 2_560_000),
        ("16-step", 1_024_000),
    ] {
        base.record(name, n, n);
    }
    let mut fine = CostLedger::default();
    fine.record("finetune", 200_000, 200_000);
    (base, fine)
}

/// Adam with global gradient-norm clipping.
#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    t: i32,
}

impl Adam {
    pub fn new(model: &ModelState) -> Self {
        let zeros: Vec<Vec<f32>> = model.params.iter().map(|(_, p)| vec![0.0; p.numel()]).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    /// Applies one update; `grads[i]` is `None` for frozen parameters.
    /// Returns the pre-clip global gradient norm.
    pub fn step(&mut self, model: &mut ModelState, grads: &[Option<Tensor<f32>>], phase: &Phase) -> f64 {
        let norm = grads
            .iter()
            .flatten()
            .flat_map(|g| g.data().iter())
            .map(|&x| (x as f64) * (x as f64))
            .sum::<f64>()
            .sqrt();
        let clip = if norm > phase.grad_clip { phase.grad_clip / norm } else { 1.0 };
        self.t += 1;
        let (b1, b2) = (phase.adam_beta1, phase.adam_beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        for (i, g) in grads.iter().enumerate() {
            let Some(g) = g else { continue };
            let (name, p) = &mut model.params[i];
            let lr = if name.starts_with("sdl") {
                phase.learning_rate * phase.sdl_lr_scale
            } else {
                phase.learning_rate
            };
            let p = p.data_mut();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..p.len() {
                let gj = g.data()[j] as f64 * clip;
                let mj = b1 * m[j] as f64 + (1.0 - b1) * gj;
                let vj = b2 * v[j] as f64 + (1.0 - b2) * gj * gj;
                m[j] = mj as f32;
                v[j] = vj as f32;
                p[j] -= (lr * (mj / c1) / ((vj / c2).sqrt() + phase.adam_eps)) as f32;
            }
        }
        norm
    }
}

/// One structured record per epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub phase: String,
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Mean ensemble standard deviation (fine-tuning only).
    pub spread: Option<f64>,
    pub grad_norm: f64,
    pub seconds: f64,
}

/// Training outputs.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ModelState,
    pub ledger: CostLedger,
    pub metrics: Vec<EpochMetrics>,
}

/// Drives the optimisation and its side outputs.
pub struct Trainer {
    pub config: TrainConfig,
    /// Appends one JSON line per epoch.
    pub metrics_path: Option<PathBuf>,
    /// Receives the last good state when a phase diverges.
    pub checkpoint_path: Option<PathBuf>,
    /// Called after every epoch.
    pub progress: Option<Box<dyn FnMut(&EpochMetrics) + Send>>,
}

fn stack(states: &[&[f32]], dims: [usize; 4]) -> Result<Tensor<f32>> {
    let data: Vec<f32> = states.iter().flat_map(|s| s.iter().copied()).collect();
    Ok(Tensor::from_vec(&dims, data)?)
}

fn sample_starts(starts: &[RecordRef], key: &RngKey, n: usize) -> Vec<RecordRef> {
    uniform_stream(key, n)
        .into_iter()
        .map(|u| starts[((u * starts.len() as f64) as usize).min(starts.len() - 1)])
        .collect()
}

/// Evenly spaced validation starts.
fn spaced(starts: &[RecordRef], n: usize) -> Vec<RecordRef> {
    if starts.is_empty() || n == 0 {
        return Vec::new();
    }
    let n = n.min(starts.len());
    (0..n).map(|i| starts[i * starts.len() / n]).collect()
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Self {
        Self {
            config,
            metrics_path: None,
            checkpoint_path: None,
            progress: None,
        }
    }

    fn emit(&mut self, m: EpochMetrics, all: &mut Vec<EpochMetrics>) -> Result<()> {
        if let Some(path) = &self.metrics_path {
            let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
            writeln!(f, "{}", serde_json::to_string(&m)?)?;
        }
        if let Some(cb) = self.progress.as_mut() {
            cb(&m);
        }
        all.push(m);
        Ok(())
    }

    fn diverged(&self, last_good: &ModelState, phase: &str, update: usize) -> Error {
        if let Some(path) = &self.checkpoint_path {
            if let Err(e) = last_good.write(path) {
                log::error!("could not save last good checkpoint: {e}");
            }
        }
        Error::Diverged {
            phase: phase.to_string(),
            update,
        }
    }

    /// Curriculum of MSE phases from a fresh model.
    pub fn train_deterministic(&mut self, data: &Dataset) -> Result<TrainOutcome> {
        self.config.validate()?;
        let v = self.config.model.variables;
        if data.grid() != self.config.model.grid {
            return Err(invalid(format!("dataset grid {} vs model grid {}", data.grid(), self.config.model.grid)));
        }
        let train_states = data
            .trajectories
            .iter()
            .filter(|t| t.split == Split::Train)
            .flat_map(|t| (0..t.n_states).map(move |k| t.state(k, data.state_len())));
        let norm = Normalization::fit(train_states, v);
        let mut model = ModelState::init(self.config.model.clone(), norm)?;
        let mut ledger = CostLedger::default();
        let mut metrics = Vec::new();
        let mut update = 0usize;
        let phases = self.config.phases.clone();
        for (pi, phase) in phases.iter().enumerate() {
            let mut adam = Adam::new(&model);
            let starts = data.starts(Split::Train, phase.rollout_steps);
            if starts.is_empty() {
                return Err(invalid(format!("no training windows for {}", phase.name)));
            }
            for epoch in 0..phase.epochs {
                let t0 = Instant::now();
                let mut loss_sum = 0.0;
                let mut gnorm = 0.0;
                for _ in 0..phase.batches_per_epoch {
                    let key = RngKey::new(self.config.seed, pi as u32, 0, update as u32, StreamRole::Auxiliary);
                    let batch = sample_starts(&starts, &key, phase.batch_size);
                    let last_good = model.clone();
                    let (loss, grads) = mse_loss_and_grads(&model, data, &batch, phase.rollout_steps)?;
                    if !loss.is_finite() {
                        return Err(self.diverged(&last_good, &phase.name, update));
                    }
                    gnorm = adam.step(&mut model, &grads, phase);
                    if model.params.iter().any(|(_, p)| !p.is_finite()) {
                        return Err(self.diverged(&last_good, &phase.name, update));
                    }
                    loss_sum += loss;
                    ledger.record(&phase.name, phase.passes_per_update(), phase.passes_per_update());
                    update += 1;
                }
                let val = validation_mse(&model, data, self.config.validation_samples)?;
                let m = EpochMetrics {
                    phase: phase.name.clone(),
                    epoch,
                    train_loss: loss_sum / phase.batches_per_epoch as f64,
                    val_loss: val,
                    spread: None,
                    grad_norm: gnorm,
                    seconds: t0.elapsed().as_secs_f64(),
                };
                log::info!("{} epoch {epoch}: train {:.5} val {:.5}", phase.name, m.train_loss, m.val_loss);
                self.emit(m, &mut metrics)?;
            }
        }
        Ok(TrainOutcome { model, ledger, metrics })
    }

    /// Inserts SDL layers into `base` and optimises single-step afCRPS with
    /// `members` replicas of each sample.
    pub fn finetune_sdl(&mut self, base: &ModelState, data: &Dataset) -> Result<TrainOutcome> {
        self.config.validate()?;
        let phase = self.config.finetune.clone();
        let loss_cfg = LossConfig {
            members: phase.members,
            ..self.config.loss
        };
        let mut model = base.clone();
        model.insert_sdl(self.config.seed);
        let freeze = self.config.freeze_base;
        let mut adam = Adam::new(&model);
        let starts = data.starts(Split::Train, 1);
        if starts.is_empty() {
            return Err(invalid("no training windows for fine-tuning"));
        }
        let mut ledger = CostLedger::default();
        let mut metrics = Vec::new();
        let mut update = 0usize;
        for epoch in 0..phase.epochs {
            let t0 = Instant::now();
            let mut loss_sum = 0.0;
            let mut spread_sum = 0.0;
            let mut gnorm = 0.0;
            for _ in 0..phase.batches_per_epoch {
                let key = RngKey::new(self.config.seed, 0, 1, update as u32, StreamRole::Auxiliary);
                let batch = sample_starts(&starts, &key, phase.batch_size);
                let last_good = model.clone();
                let step = afcrps_loss_and_grads(&model, data, &batch, &loss_cfg, self.config.seed, update as u32, freeze)?;
                if !step.loss.is_finite() {
                    return Err(self.diverged(&last_good, &phase.name, update));
                }
                gnorm = adam.step(&mut model, &step.grads, &phase);
                if model.params.iter().any(|(_, p)| !p.is_finite()) {
                    return Err(self.diverged(&last_good, &phase.name, update));
                }
                loss_sum += step.loss;
                spread_sum += step.spread;
                ledger.record(&phase.name, phase.passes_per_update(), phase.passes_per_update());
                update += 1;
            }
            let val = validation_afcrps(&model, data, self.config.validation_samples.min(16), &loss_cfg, self.config.seed)?;
            let m = EpochMetrics {
                phase: phase.name.clone(),
                epoch,
                train_loss: loss_sum / phase.batches_per_epoch as f64,
                val_loss: val,
                spread: Some(spread_sum / phase.batches_per_epoch as f64),
                grad_norm: gnorm,
                seconds: t0.elapsed().as_secs_f64(),
            };
            log::info!(
                "finetune epoch {epoch}: train {:.5} val {:.5} spread {:.4}",
                m.train_loss,
                m.val_loss,
                m.spread.unwrap_or(0.0)
            );
            self.emit(m, &mut metrics)?;
        }
        Ok(TrainOutcome { model, ledger, metrics })
    }
}

fn state_dims(model: &ModelState, b: usize) -> [usize; 4] {
    let c = &model.config;
    [b, c.variables, c.grid, c.grid]
}

/// Mean over rollout steps of the MSE in standardised units, gradients
/// flowing through every step. Returns `(loss, grads)` aligned with params.
pub fn mse_loss_and_grads(
    model: &ModelState,
    data: &Dataset,
    batch: &[RecordRef],
    steps: usize,
) -> Result<(f64, Vec<Option<Tensor<f32>>>)> {
    let mut g = Graph::<f32>::new();
    let p = ParamVars::load(&mut g, model, |_| true);
    let windows: Vec<Vec<Vec<f32>>> = batch
        .iter()
        .map(|r| data.window(*r, steps).into_iter().map(|s| model.norm.normalize(s)).collect())
        .collect();
    let dims = state_dims(model, batch.len());
    let at = |k: usize| -> Vec<&[f32]> { windows.iter().map(|w| w[k].as_slice()).collect() };
    let mut x = g.constant(stack(&at(0), dims)?);
    let mut total: Option<diffcore::Var> = None;
    for k in 1..=steps {
        x = build_forward(&mut g, model, &p, x, None)?.output;
        let target = g.constant(stack(&at(k), dims)?);
        let d = g.sub(x, target)?;
        let sq = g.mul(d, d)?;
        let l = g.mean(sq, None)?;
        total = Some(match total {
            None => l,
            Some(t) => g.add(t, l)?,
        });
    }
    let total = g.scale(total.expect("steps ≥ 1"), 1.0 / steps as f32);
    let loss = g.value(total).data()[0] as f64;
    if !loss.is_finite() {
        return Ok((loss, Vec::new()));
    }
    g.backward(total)?;
    Ok((loss, p.vars.iter().map(|v| g.grad(*v)).collect()))
}

pub struct CrpsStep {
    pub loss: f64,
    /// Mean per-point ensemble standard deviation (standardised units).
    pub spread: f64,
    pub grads: Vec<Option<Tensor<f32>>>,
}

/// One afCRPS step: each sample is replicated `members` times, member
/// `(b, m)` drawing latents under id `b·M + m` and step `update`.
pub fn afcrps_loss_and_grads(
    model: &ModelState,
    data: &Dataset,
    batch: &[RecordRef],
    loss: &LossConfig,
    seed: u64,
    update: u32,
    freeze_base: bool,
) -> Result<CrpsStep> {
    let m = loss.members;
    let cfg = &model.config;
    let mut g = Graph::<f32>::new();
    let p = ParamVars::load(&mut g, model, |n| !freeze_base || n.starts_with("sdl"));
    let mut inputs = Vec::with_capacity(batch.len() * m);
    let mut targets = Vec::with_capacity(batch.len());
    let mut noise = Vec::with_capacity(batch.len() * m);
    for (b, r) in batch.iter().enumerate() {
        let w = data.window(*r, 1);
        let x0 = model.norm.normalize(w[0]);
        targets.push(model.norm.normalize(w[1]));
        for j in 0..m {
            inputs.push(x0.clone());
            noise.push(MemberNoise::draw(cfg, seed, (b * m + j) as u32, update)?);
        }
    }
    let refs: Vec<&[f32]> = inputs.iter().map(|s| s.as_slice()).collect();
    let x = g.constant(stack(&refs, state_dims(model, inputs.len()))?);
    let out = build_forward(&mut g, model, &p, x, Some(&noise))?.output;
    let pts = cfg.state_len();
    let dims = (cfg.variables, cfg.grid, cfg.grid);
    let weights = SpatialWeights::uniform(cfg.grid);
    let ens = g.value(out).data().to_vec();
    let mut value = 0.0;
    let mut grad = vec![0f32; ens.len()];
    let mut spread = 0.0;
    for (b, target) in targets.iter().enumerate() {
        let chunk = &ens[b * m * pts..(b + 1) * m * pts];
        let (val, gr) = afcrps_field(chunk, m, target, dims, &weights, loss.alpha_loss)?;
        value += val / batch.len() as f64;
        for (dst, src) in grad[b * m * pts..].iter_mut().zip(&gr) {
            *dst = src / batch.len() as f32;
        }
        spread += ensemble_std(chunk, m, pts) / batch.len() as f64;
    }
    if !value.is_finite() {
        return Ok(CrpsStep {
            loss: value,
            spread,
            grads: Vec::new(),
        });
    }
    let l = g.scalar_fn(&[out], value as f32, vec![grad])?;
    g.backward(l)?;
    Ok(CrpsStep {
        loss: value,
        spread,
        grads: p.vars.iter().map(|v| g.grad(*v)).collect(),
    })
}

/// Mean per-point sample standard deviation of `(M, P)` values.
fn ensemble_std(ens: &[f32], m: usize, pts: usize) -> f64 {
    if m < 2 {
        return 0.0;
    }
    let mut acc = 0.0;
    for p in 0..pts {
        let mean = (0..m).map(|j| ens[j * pts + p] as f64).sum::<f64>() / m as f64;
        let var = (0..m).map(|j| (ens[j * pts + p] as f64 - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
        acc += var.sqrt();
    }
    acc / pts as f64
}

/// One-step MSE in standardised units over evenly spaced validation pairs.
pub fn validation_mse(model: &ModelState, data: &Dataset, n: usize) -> Result<f64> {
    let starts = spaced(&data.starts(Split::Val, 1), n);
    if starts.is_empty() {
        return Ok(f64::NAN);
    }
    let mut acc = 0.0;
    for r in &starts {
        let w = data.window(*r, 1);
        let x = model.norm.normalize(w[0]);
        let y = model.norm.normalize(w[1]);
        let out = forward_step(model, &x, None, Mode::Deterministic, 0, false)?.output;
        acc += out.iter().zip(&y).map(|(a, b)| ((a - b) as f64).powi(2)).sum::<f64>() / y.len() as f64;
    }
    Ok(acc / starts.len() as f64)
}

/// One-step afCRPS in standardised units over evenly spaced validation pairs.
pub fn validation_afcrps(model: &ModelState, data: &Dataset, n: usize, loss: &LossConfig, seed: u64) -> Result<f64> {
    let starts = spaced(&data.starts(Split::Val, 1), n);
    if starts.is_empty() {
        return Ok(f64::NAN);
    }
    let cfg = &model.config;
    let dims = (cfg.variables, cfg.grid, cfg.grid);
    let weights = SpatialWeights::uniform(cfg.grid);
    let mut acc = 0.0;
    for (i, r) in starts.iter().enumerate() {
        let w = data.window(*r, 1);
        let x = model.norm.normalize(w[0]);
        let y = model.norm.normalize(w[1]);
        let mut ens = Vec::with_capacity(loss.members * y.len());
        for j in 0..loss.members {
            let noise = MemberNoise::draw(cfg, seed ^ 0x5eed_0000, (i * loss.members + j) as u32, 0)?;
            ens.extend(forward_step(model, &x, Some(&noise), Mode::Stochastic, 0, false)?.output);
        }
        acc += afcrps_field(&ens, loss.members, &y, dims, &weights, loss.alpha_loss)?.0;
    }
    Ok(acc / starts.len() as f64)
}

/// Writes a training configuration template.
pub fn write_default_config(path: &Path) -> Result<()> {
    std::fs::write(path, TrainConfig::default().to_toml()?)?;
    Ok(())
}
