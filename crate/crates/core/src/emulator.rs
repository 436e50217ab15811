//! Convolutional encoder-decoder emulator with decoder-side SDL injection.
//!
//! ```text
//! x ─lift─ E0 ─pool─ E1 ─pool─ E2 ─pool─ E3 (bottleneck, SDL 1)
//!          │         │         └──────── up ─ SDL 2 ─ cat ─ D2
//!          │         └────────────────── up ─ SDL 3 ─ cat ─ D1
//!          └──────────────────────────── up ─────── cat ─ D0 ─ head ─ + x
//! ```
//!
//! Each `E`/`D` is a residual block of two periodic 3×3 convolutions. The
//! network works in per-variable standardised units and predicts the
//! increment; the zero-initialised head makes a fresh model persistence.

use crate::container::{ContainerReader, ContainerWriter};
use crate::error::{invalid, Error, Result};
use crate::sdl::{apply_beta, pixel_noise, sample_latents, sdl_graph, LatentMode, LatentSet, LevelGrid, SdlLayer, LEVELS};
use diffcore::{gaussian_stream, Graph, RngKey, Scalar, StreamRole, Tensor, Var};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

const CHECKPOINT_MAGIC: &[u8; 4] = b"SDLM";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    /// Level 1 on the bottleneck, levels 2–3 after the first two upsamplings.
    #[default]
    Bottleneck,
    /// Levels 1–3 after each of the three upsamplings.
    AfterUpsample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub grid: usize,
    /// Channel widths from the finest to the coarsest resolution.
    pub widths: [usize; 4],
    pub variables: usize,
    pub d_z: usize,
    pub alpha: f64,
    pub latent_mode: LatentMode,
    pub placement: Placement,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            grid: 64,
            widths: [32, 48, 64, 96],
            variables: 3,
            d_z: 16,
            alpha: crate::sdl::ALPHA,
            latent_mode: LatentMode::Spatial,
            placement: Placement::Bottleneck,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid == 0 || self.grid % 8 != 0 {
            return Err(invalid(format!("grid {} not divisible by 8", self.grid)));
        }
        if self.widths.contains(&0) || self.variables == 0 || self.d_z == 0 {
            return Err(invalid("widths, variables and d_z must be positive"));
        }
        Ok(())
    }

    /// Resolution index (0 = finest) where `level` is injected.
    pub fn stage_of(&self, level: u8) -> usize {
        match self.placement {
            Placement::Bottleneck => 4 - level as usize,
            Placement::AfterUpsample => 3 - level as usize,
        }
    }

    fn level_at(&self, stage: usize) -> Option<u8> {
        LEVELS.into_iter().find(|&l| self.stage_of(l) == stage)
    }

    pub fn level_grids(&self) -> Vec<LevelGrid> {
        LEVELS
            .iter()
            .map(|&level| {
                let r = self.stage_of(level);
                LevelGrid {
                    level,
                    h: self.grid >> r,
                    w: self.grid >> r,
                    channels: self.widths[r],
                }
            })
            .collect()
    }

    /// `(level, h, w)` of each latent tensor.
    pub fn latent_grids(&self) -> Vec<(u8, usize, usize)> {
        self.level_grids()
            .iter()
            .map(|g| match self.latent_mode {
                LatentMode::Spatial => (g.level, g.h, g.w),
                LatentMode::Vector => (g.level, 1, 1),
            })
            .collect()
    }

    /// Bytes of raw f32 latents per member and step.
    pub fn latent_bytes_per_step(&self) -> usize {
        self.latent_grids().iter().map(|(_, h, w)| h * w * self.d_z * 4).sum()
    }

    pub fn state_len(&self) -> usize {
        self.variables * self.grid * self.grid
    }
}

/// Per-variable standardisation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalization {
    pub fn identity(v: usize) -> Self {
        Self {
            mean: vec![0.0; v],
            std: vec![1.0; v],
        }
    }

    /// Statistics of `(V, H, W)` states.
    pub fn fit<'a>(states: impl Iterator<Item = &'a [f32]>, v: usize) -> Self {
        let mut s = vec![0.0; v];
        let mut s2 = vec![0.0; v];
        let mut n = 0usize;
        let mut plane = 0;
        for st in states {
            plane = st.len() / v;
            for (c, chunk) in st.chunks_exact(plane).enumerate() {
                for &x in chunk {
                    s[c] += x as f64;
                    s2[c] += (x as f64) * (x as f64);
                }
            }
            n += 1;
        }
        let cnt = (n * plane).max(1) as f64;
        let mean: Vec<f64> = s.iter().map(|a| a / cnt).collect();
        let std = s2
            .iter()
            .zip(&mean)
            .map(|(b, m)| (b / cnt - m * m).max(0.0).sqrt().max(1e-6))
            .collect();
        Self { mean, std }
    }

    pub fn normalize(&self, state: &[f32]) -> Vec<f32> {
        let plane = state.len() / self.mean.len();
        state
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let c = i / plane;
                ((x as f64 - self.mean[c]) / self.std[c]) as f32
            })
            .collect()
    }

    pub fn denormalize(&self, state: &[f32]) -> Vec<f32> {
        let plane = state.len() / self.mean.len();
        state
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let c = i / plane;
                (x as f64 * self.std[c] + self.mean[c]) as f32
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ParamInfo {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CheckpointHeader {
    config: ModelConfig,
    norm: Normalization,
    params: Vec<ParamInfo>,
}

/// Every trainable tensor, in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub config: ModelConfig,
    pub norm: Normalization,
    pub params: Vec<(String, Tensor<f32>)>,
}

fn init_tensor(shape: &[usize], std: f64, seed: u64, index: u32) -> Tensor<f32> {
    let n: usize = shape.iter().product();
    let data = if std == 0.0 {
        vec![0.0; n]
    } else {
        let key = RngKey::new(seed, 0, index, 0, StreamRole::InitPerturbation);
        gaussian_stream(&key, n).into_iter().map(|v| (v * std) as f32).collect()
    };
    Tensor::from_vec(shape, data).expect("init shape")
}

impl ModelState {
    /// Fresh deterministic model (no SDL layers).
    pub fn init(config: ModelConfig, norm: Normalization) -> Result<Self> {
        config.validate()?;
        let w = config.widths;
        let v = config.variables;
        let mut specs: Vec<(String, Vec<usize>, f64)> = Vec::new();
        let conv = |specs: &mut Vec<_>, name: &str, cout: usize, cin: usize, gain: f64| {
            let std = gain / ((cin * 9) as f64).sqrt();
            specs.push((format!("{name}.w"), vec![cout, cin, 3, 3], std));
            specs.push((format!("{name}.b"), vec![cout], 0.0));
        };
        let pw = |specs: &mut Vec<_>, name: &str, cout: usize, cin: usize| {
            specs.push((format!("{name}.w"), vec![cout, cin], 1.0 / (cin as f64).sqrt()));
            specs.push((format!("{name}.b"), vec![cout], 0.0));
        };
        conv(&mut specs, "enc0.lift", w[0], v, 1.0);
        for r in 0..4 {
            if r > 0 {
                pw(&mut specs, &format!("enc{r}.down"), w[r], w[r - 1]);
            }
            conv(&mut specs, &format!("enc{r}.c1"), w[r], w[r], 2f64.sqrt());
            conv(&mut specs, &format!("enc{r}.c2"), w[r], w[r], 0.5);
        }
        for r in (0..3).rev() {
            pw(&mut specs, &format!("dec{r}.up"), w[r], w[r + 1]);
            pw(&mut specs, &format!("dec{r}.merge"), w[r], 2 * w[r]);
            conv(&mut specs, &format!("dec{r}.c1"), w[r], w[r], 2f64.sqrt());
            conv(&mut specs, &format!("dec{r}.c2"), w[r], w[r], 0.5);
        }
        conv(&mut specs, "head", v, w[0], 0.0);
        let params = specs
            .into_iter()
            .enumerate()
            .map(|(i, (name, shape, std))| {
                let t = init_tensor(&shape, std, config.init_seed, i as u32);
                (name, t)
            })
            .collect();
        Ok(Self { config, norm, params })
    }

    pub fn has_sdl(&self) -> bool {
        self.param("sdl1.style").is_some()
    }

    /// Adds the three SDL layers (near-identity initialisation).
    pub fn insert_sdl(&mut self, seed: u64) {
        if self.has_sdl() {
            return;
        }
        for g in self.config.level_grids() {
            let layer = SdlLayer::init(g.level, g.channels, self.config.d_z, self.config.latent_mode, seed);
            self.params.push((
                format!("sdl{}.style", g.level),
                Tensor::from_vec(&[g.channels, self.config.d_z], layer.style).expect("style"),
            ));
            self.params.push((
                format!("sdl{}.modulation", g.level),
                Tensor::from_vec(&[1, g.channels, 1, 1], layer.modulation).expect("modulation"),
            ));
        }
    }

    pub fn sdl_layer(&self, level: u8) -> Option<SdlLayer> {
        let style = self.param(&format!("sdl{level}.style"))?;
        let modulation = self.param(&format!("sdl{level}.modulation"))?;
        Some(SdlLayer {
            level,
            alpha: self.config.alpha,
            mode: self.config.latent_mode,
            style: style.data().to_vec(),
            modulation: modulation.data().to_vec(),
            channels: style.shape()[0],
            d_z: style.shape()[1],
        })
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<f32>> {
        self.params.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = CheckpointHeader {
            config: self.config.clone(),
            norm: self.norm.clone(),
            params: self
                .params
                .iter()
                .map(|(name, t)| ParamInfo {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
        };
        let mut w = ContainerWriter::new(Vec::new(), CHECKPOINT_MAGIC, CHECKPOINT_VERSION, &serde_json::to_string(&header)?)?;
        for (_, t) in &self.params {
            w.write_f32s(t.data())?;
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ContainerReader::new(bytes, CHECKPOINT_MAGIC, CHECKPOINT_VERSION)?;
        let header: CheckpointHeader = serde_json::from_str(&r.header)?;
        header.config.validate()?;
        let mut params = Vec::with_capacity(header.params.len());
        for p in &header.params {
            let n = p.shape.iter().product();
            let data = r.read_f32s(n)?;
            params.push((p.name.clone(), Tensor::from_vec(&p.shape, data)?));
        }
        r.finish()?;
        Ok(Self {
            config: header.config,
            norm: header.norm,
            params,
        })
    }

    /// Hex SHA-256 of the serialised checkpoint.
    pub fn checksum(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_bytes()?)))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Parameters placed on a graph, aligned with `ModelState::params`.
pub struct ParamVars {
    pub vars: Vec<Var>,
    names: Vec<String>,
}

impl ParamVars {
    /// Leaves on `g`; `trainable` decides which receive gradients.
    pub fn load<T: Scalar>(g: &mut Graph<T>, model: &ModelState, trainable: impl Fn(&str) -> bool) -> Self {
        let mut vars = Vec::with_capacity(model.params.len());
        let mut names = Vec::with_capacity(model.params.len());
        for (name, t) in &model.params {
            let t = t.cast::<T>();
            vars.push(if trainable(name) { g.param(t) } else { g.constant(t) });
            names.push(name.clone());
        }
        Self { vars, names }
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.vars[i])
            .ok_or_else(|| invalid(format!("missing parameter {name}")))
    }
}

/// Latents and pixel-noise keys of one member for one step.
#[derive(Debug, Clone, PartialEq)]
pub struct MemberNoise {
    pub latents: LatentSet,
    /// Pixel-noise key per level 1..=3.
    pub keys_r: [RngKey; 3],
    /// `R = (1 − e) R(keys_r) + e R(other)` when set.
    pub r_blend: Option<([RngKey; 3], f32)>,
}

impl MemberNoise {
    /// Fresh draws for `(seed, member, step)`.
    pub fn draw(config: &ModelConfig, seed: u64, member: u32, step: u32) -> Result<Self> {
        let key = RngKey::new(seed, member, 0, step, StreamRole::Latent);
        let latents = sample_latents(&key, &config.latent_grids(), config.d_z)?;
        Ok(Self {
            latents,
            keys_r: LEVELS.map(|l| RngKey::new(seed, member, l as u32, step, StreamRole::PixelNoise)),
            r_blend: None,
        })
    }

    /// Pixel noise of `level` on a `(C, H, W)` grid.
    pub fn pixel_noise<T: Scalar>(&self, level: u8, c: usize, h: usize, w: usize) -> Vec<T> {
        let i = (level - 1) as usize;
        let r = pixel_noise::<T>(&self.keys_r[i], c, h, w).into_data();
        match &self.r_blend {
            None => r,
            Some((other, e)) => {
                let o = pixel_noise::<T>(&other[i], c, h, w).into_data();
                let (a, b) = (T::lit(1.0 - *e as f64), T::lit(*e as f64));
                r.iter().zip(&o).map(|(&x, &y)| a * x + b * y).collect()
            }
        }
    }
}

fn block<T: Scalar>(g: &mut Graph<T>, p: &ParamVars, name: &str, x: Var) -> Result<Var> {
    let h = g.conv3x3(x, p.get(&format!("{name}.c1.w"))?, Some(p.get(&format!("{name}.c1.b"))?))?;
    let h = g.gelu(h);
    let h = g.conv3x3(h, p.get(&format!("{name}.c2.w"))?, Some(p.get(&format!("{name}.c2.b"))?))?;
    Ok(g.add(x, h)?)
}

fn pointwise<T: Scalar>(g: &mut Graph<T>, p: &ParamVars, name: &str, x: Var) -> Result<Var> {
    Ok(g.pointwise(x, p.get(&format!("{name}.w"))?, Some(p.get(&format!("{name}.b"))?))?)
}

/// Graph outputs of one forward pass.
pub struct ForwardVars {
    /// `(B, V, H, W)` in standardised units.
    pub output: Var,
    /// Perturbation per level, when noise was injected.
    pub perturbations: Vec<(u8, Var)>,
}

/// Records the network on `g` for a standardised batch `x`. With `noise`,
/// member `b` of the batch uses `noise[b]`; all members must share `β`.
pub fn build_forward<T: Scalar>(
    g: &mut Graph<T>,
    model: &ModelState,
    p: &ParamVars,
    x: Var,
    noise: Option<&[MemberNoise]>,
) -> Result<ForwardVars> {
    let cfg = &model.config;
    let (b, v, h, w) = match g.shape(x) {
        [b, v, h, w] => (*b, *v, *h, *w),
        s => return Err(invalid(format!("state batch must be 4-D, got {s:?}"))),
    };
    if v != cfg.variables || h != cfg.grid || w != cfg.grid {
        return Err(Error::Shape {
            op: "forward",
            expected: format!("(B, {}, {}, {})", cfg.variables, cfg.grid, cfg.grid),
            found: format!("{:?}", g.shape(x)),
        });
    }
    if let Some(n) = noise {
        if n.len() != b {
            return Err(invalid(format!("{} noise records for batch {b}", n.len())));
        }
        if !model.has_sdl() {
            return Err(invalid("stochastic forward on a model without SDL layers"));
        }
        if n.iter().any(|m| m.latents.beta != n[0].latents.beta) {
            return Err(invalid("members of one batch must share beta"));
        }
    }
    let mut perturbations = Vec::new();
    let mut inject = |g: &mut Graph<T>, stage: usize, feat: Var| -> Result<Var> {
        let (Some(noise), Some(level)) = (noise, cfg.level_at(stage)) else {
            return Ok(feat);
        };
        let (_, c, fh, fw) = match g.shape(feat) {
            [a, b, c, d] => (*a, *b, *c, *d),
            _ => unreachable!(),
        };
        let mut zs = Vec::new();
        let mut rs = Vec::new();
        let (mut zh, mut zw) = (0, 0);
        for m in noise {
            let z = m
                .latents
                .level(level)
                .ok_or_else(|| invalid(format!("missing level {level} latent")))?;
            (zh, zw) = (z.h, z.w);
            zs.extend(z.channel_first::<T>());
            rs.extend(m.pixel_noise::<T>(level, c, fh, fw));
        }
        let zv = g.constant(Tensor::from_vec(&[noise.len(), cfg.d_z, zh, zw], zs)?);
        let rv = g.constant(Tensor::from_vec(&[noise.len(), c, fh, fw], rs)?);
        let style = p.get(&format!("sdl{level}.style"))?;
        let modulation = p.get(&format!("sdl{level}.modulation"))?;
        let beta = noise[0].latents.beta_of(level);
        let (out, pert) = sdl_graph(g, feat, zv, rv, style, modulation, cfg.alpha, beta)?;
        perturbations.push((level, pert));
        Ok(out)
    };

    let h0 = g.conv3x3(x, p.get("enc0.lift.w")?, Some(p.get("enc0.lift.b")?))?;
    let mut skips = vec![block(g, p, "enc0", h0)?];
    for r in 1..4 {
        let pooled = g.avgpool2(skips[r - 1])?;
        let d = pointwise(g, p, &format!("enc{r}.down"), pooled)?;
        skips.push(block(g, p, &format!("enc{r}"), d)?);
    }
    let mut d = inject(g, 3, skips[3])?;
    for r in (0..3).rev() {
        let up = g.upsample2(d)?;
        let u = pointwise(g, p, &format!("dec{r}.up"), up)?;
        let u = inject(g, r, u)?;
        let c = g.concat(u, skips[r])?;
        let m = pointwise(g, p, &format!("dec{r}.merge"), c)?;
        d = block(g, p, &format!("dec{r}"), m)?;
    }
    let head = g.conv3x3(d, p.get("head.w")?, Some(p.get("head.b")?))?;
    let output = g.add(x, head)?;
    Ok(ForwardVars { output, perturbations })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Deterministic,
    Stochastic,
}

/// One step of one member.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastStep {
    pub step_index: u32,
    /// Standardised `(V, H, W)` input and output.
    pub input: Vec<f32>,
    pub output: Vec<f32>,
    /// `(level, β α R ⊙ S ⊙ M)` per injected level.
    pub perturbations: Vec<(u8, Tensor<f32>)>,
}

/// Single-member inference step on a standardised state.
pub fn forward_step(
    model: &ModelState,
    state: &[f32],
    noise: Option<&MemberNoise>,
    mode: Mode,
    step_index: u32,
    keep_perturbations: bool,
) -> Result<ForecastStep> {
    let cfg = &model.config;
    if state.len() != cfg.state_len() {
        return Err(Error::Shape {
            op: "forward_step",
            expected: format!("{} values", cfg.state_len()),
            found: format!("{}", state.len()),
        });
    }
    let mut g = Graph::<f32>::new();
    let p = ParamVars::load(&mut g, model, |_| false);
    let x = g.constant(Tensor::from_vec(&[1, cfg.variables, cfg.grid, cfg.grid], state.to_vec())?);
    let noise = match mode {
        Mode::Deterministic => None,
        Mode::Stochastic => Some(std::slice::from_ref(
            noise.ok_or_else(|| invalid("stochastic step needs latents"))?,
        )),
    };
    let f = build_forward(&mut g, model, &p, x, noise)?;
    let perturbations = if keep_perturbations {
        f.perturbations.iter().map(|(l, v)| (*l, g.value(*v).clone())).collect()
    } else {
        Vec::new()
    };
    Ok(ForecastStep {
        step_index,
        input: state.to_vec(),
        output: g.value(f.output).data().to_vec(),
        perturbations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RolloutSpec {
    pub steps: usize,
    pub members: usize,
    pub beta: [f64; 3],
    pub seed: u64,
    pub mode: Mode,
}

/// One autoregressive trajectory and the noise that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct MemberTrajectory {
    pub member: u32,
    /// Physical `(V, H, W)` states at leads `1..=steps`.
    pub states: Vec<Vec<f32>>,
    /// Raw latents and keys per step (scales live in `RolloutSpec::beta`).
    pub noise: Vec<MemberNoise>,
    /// Set when the member was stopped by a non-finite state.
    pub aborted: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleBatch {
    pub spec: RolloutSpec,
    /// Physical `(V, H, W)` initial condition.
    pub initial: Vec<f32>,
    pub members: Vec<MemberTrajectory>,
}

/// Runs one member from `initial` with the given per-step noise and scales.
pub fn run_member(
    model: &ModelState,
    initial: &[f32],
    member: u32,
    noise: Vec<MemberNoise>,
    beta: [f64; 3],
    mode: Mode,
) -> Result<MemberTrajectory> {
    let mut state = model.norm.normalize(initial);
    let mut states = Vec::with_capacity(noise.len());
    let mut aborted = None;
    for (t, n) in noise.iter().enumerate() {
        let scaled = MemberNoise {
            latents: apply_beta(&n.latents, beta)?,
            keys_r: n.keys_r,
            r_blend: n.r_blend,
        };
        let step = forward_step(model, &state, Some(&scaled), mode, t as u32, false)?;
        if step.output.iter().any(|v| !v.is_finite()) {
            aborted = Some(format!("member {member}: non-finite state at step {t}"));
            break;
        }
        state = step.output;
        states.push(model.norm.denormalize(&state));
    }
    Ok(MemberTrajectory {
        member,
        states,
        noise,
        aborted,
    })
}

/// Independent autoregressive members with fresh latents per member and step.
pub fn rollout(model: &ModelState, initial: &[f32], spec: RolloutSpec) -> Result<EnsembleBatch> {
    if spec.steps == 0 || spec.members == 0 {
        return Err(invalid("rollout needs steps ≥ 1 and members ≥ 1"));
    }
    if spec.mode == Mode::Stochastic && !model.has_sdl() {
        return Err(invalid("stochastic rollout needs SDL layers"));
    }
    let members = (0..spec.members as u32)
        .into_par_iter()
        .map(|m| {
            let noise = (0..spec.steps as u32)
                .map(|t| MemberNoise::draw(&model.config, spec.seed, m, t))
                .collect::<Result<Vec<_>>>()?;
            run_member(model, initial, m, noise, spec.beta, spec.mode)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EnsembleBatch {
        spec,
        initial: initial.to_vec(),
        members,
    })
}
