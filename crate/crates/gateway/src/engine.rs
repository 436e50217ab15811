//! Replay engine shared by the CLI and the HTTP service.

use crate::error::{GatewayError, Result};
use crate::manifest::{RunManifest, MANIFEST_FILE};
use rayon::prelude::*;
use sdl_core::emulator::ModelState;
use sdl_core::latents::{interpolate_members, replay_member, LatentArchive, NoiseBlend};
use sdl_core::synthgen::VARIABLES;
use sdl_core::verify::{vorticity_spectrum, Spectrum};
use serde::{Deserialize, Serialize};
use std::collections::{HashMap, VecDeque};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

pub const ROOT_ENV: &str = "SDL_DATA_ROOT";

/// A loaded run: checkpoint and archive with verified checksums.
pub struct Run {
    pub id: String,
    pub dir: PathBuf,
    pub manifest: RunManifest,
    pub model: ModelState,
    pub archive: LatentArchive,
}

impl Run {
    pub fn open(dir: &Path) -> Result<Self> {
        let manifest = RunManifest::read(dir)?;
        // the dataset is not needed for replay and can be large, so only
        // the files read here are hashed
        manifest.checkpoint.check(dir)?;
        manifest.archive.check(dir)?;
        let model = ModelState::read(&manifest.checkpoint.resolve(dir))?;
        let archive = LatentArchive::read(&manifest.archive.resolve(dir))?;
        Ok(Self {
            id: manifest.run_id.clone(),
            dir: dir.to_path_buf(),
            manifest,
            model,
            archive,
        })
    }

    pub fn members(&self) -> usize {
        self.archive.header.members
    }

    pub fn steps(&self) -> usize {
        self.archive.header.steps
    }

    /// `(variables, h, w)` of one state.
    pub fn dims(&self) -> (usize, usize, usize) {
        let c = &self.model.config;
        (c.variables, c.grid, c.grid)
    }

    pub fn variable_names(&self) -> Vec<String> {
        (0..self.dims().0)
            .map(|v| VARIABLES.get(v).map(|s| s.to_string()).unwrap_or_else(|| format!("var{v}")))
            .collect()
    }

    /// Index of a variable given by name or position.
    pub fn variable(&self, key: &str) -> Result<usize> {
        let names = self.variable_names();
        if let Some(i) = names.iter().position(|n| n == key) {
            return Ok(i);
        }
        match key.parse::<usize>() {
            Ok(i) if i < names.len() => Ok(i),
            _ => Err(GatewayError::BadRequest(format!("unknown variable {key:?}"))),
        }
    }

    fn check_member(&self, member: usize) -> Result<()> {
        if member >= self.members() {
            return Err(GatewayError::NotFound(format!("member {member} (run has {})", self.members())));
        }
        Ok(())
    }

    /// Lead `step` in `1..=steps`, or the initial state at 0.
    fn check_step(&self, step: usize, allow_initial: bool) -> Result<()> {
        if step > self.steps() || (step == 0 && !allow_initial) {
            return Err(GatewayError::BadRequest(format!("step {step} outside 1..={}", self.steps())));
        }
        Ok(())
    }

    fn plane<'a>(&self, state: &'a [f32], variable: usize) -> &'a [f32] {
        let (_, h, w) = self.dims();
        &state[variable * h * w..(variable + 1) * h * w]
    }
}

pub type Trajectory = Arc<Vec<Vec<f32>>>;

type CacheKey = (PathBuf, [u64; 3], usize);

struct ReplayCache {
    map: HashMap<CacheKey, Trajectory>,
    order: VecDeque<CacheKey>,
    capacity: usize,
}

impl ReplayCache {
    fn get(&self, k: &CacheKey) -> Option<Trajectory> {
        self.map.get(k).cloned()
    }

    fn insert(&mut self, k: CacheKey, v: Trajectory) {
        if self.capacity == 0 || self.map.contains_key(&k) {
            return;
        }
        while self.map.len() >= self.capacity {
            match self.order.pop_front() {
                Some(old) => {
                    self.map.remove(&old);
                }
                None => break,
            }
        }
        self.order.push_back(k.clone());
        self.map.insert(k, v);
    }
}

/// Runs under one data root plus a replay cache keyed by
/// `(run, β, member)`. Archives are only ever read.
pub struct Engine {
    root: Option<PathBuf>,
    runs: Mutex<HashMap<PathBuf, Arc<Run>>>,
    cache: Mutex<ReplayCache>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    Member,
    Mean,
    Std,
    Interpolated,
}

/// One `(H, W)` plane as a flat row-major array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldResponse {
    pub run: String,
    pub kind: FieldKind,
    pub member: Option<usize>,
    pub step: usize,
    pub variable: String,
    pub beta: [f64; 3],
    /// `[h, w]`.
    pub dims: [usize; 2],
    pub values: Vec<f32>,
    pub min: f32,
    pub max: f32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ensemble_mean: Option<Vec<f32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ensemble_std: Option<Vec<f32>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldQuery {
    pub member: usize,
    pub step: usize,
    pub variable: String,
    pub beta: Option<[f64; 3]>,
    pub companions: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub beta: [f64; 3],
    /// Defaults to the last lead.
    pub step: Option<usize>,
    #[serde(default = "first_variable")]
    pub variable: String,
}

fn first_variable() -> String {
    VARIABLES[0].to_string()
}

/// Domain-mean ensemble spread per variable at one lead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSummary {
    pub step: usize,
    pub spread: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub run: String,
    pub beta: [f64; 3],
    pub members: usize,
    pub variables: Vec<String>,
    pub mean: FieldResponse,
    pub std: FieldResponse,
    pub summary: Vec<StepSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpolateRequest {
    pub member_i: usize,
    pub member_j: usize,
    pub e: f64,
    pub step: Option<usize>,
    #[serde(default = "first_variable")]
    pub variable: String,
    #[serde(default)]
    pub blend: NoiseBlend,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectraRequest {
    pub level: u8,
    pub values: Vec<f64>,
    pub step: Option<usize>,
    #[serde(default)]
    pub member: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumCurve {
    pub value: f64,
    /// Spectrum of the vorticity state.
    pub state: Vec<f64>,
    /// Spectrum of the anomaly against `β = (1, 1, 1)`.
    pub anomaly: Vec<f64>,
    pub anomaly_centroid: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectraResponse {
    pub run: String,
    pub level: u8,
    pub member: usize,
    pub step: usize,
    pub wavenumbers: Vec<usize>,
    /// State spectrum at `β = (1, 1, 1)`.
    pub reference: Vec<f64>,
    pub curves: Vec<SpectrumCurve>,
}

/// Per-lead ensemble moments of whole states.
pub struct EnsembleFields {
    pub members: Vec<Trajectory>,
    pub mean: Vec<Vec<f32>>,
    /// Standard deviation with divisor `M − 1`.
    pub std: Vec<Vec<f32>>,
}

fn beta_key(beta: [f64; 3]) -> [u64; 3] {
    // -0.0 and 0.0 give the same trajectories
    beta.map(|b| if b == 0.0 { 0 } else { b.to_bits() })
}

fn check_beta(beta: [f64; 3]) -> Result<()> {
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(GatewayError::BadRequest(format!("non-finite scale in {beta:?}")));
    }
    Ok(())
}

fn min_max(v: &[f32]) -> (f32, f32) {
    v.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

pub fn moments(members: &[Trajectory]) -> (Vec<Vec<f32>>, Vec<Vec<f32>>) {
    let m = members.len();
    let steps = members.first().map_or(0, |t| t.len());
    let mut mean = Vec::with_capacity(steps);
    let mut std = Vec::with_capacity(steps);
    for t in 0..steps {
        let n = members[0][t].len();
        let mut mu = vec![0.0f32; n];
        let mut sd = vec![0.0f32; n];
        for p in 0..n {
            let avg = members.iter().map(|s| s[t][p] as f64).sum::<f64>() / m as f64;
            let var = if m > 1 {
                members.iter().map(|s| (s[t][p] as f64 - avg).powi(2)).sum::<f64>() / (m - 1) as f64
            } else {
                0.0
            };
            mu[p] = avg as f32;
            sd[p] = var.sqrt() as f32;
        }
        mean.push(mu);
        std.push(sd);
    }
    (mean, std)
}

impl Engine {
    pub fn new(root: Option<PathBuf>, cache_capacity: usize) -> Self {
        Self {
            root,
            runs: Mutex::new(HashMap::new()),
            cache: Mutex::new(ReplayCache {
                map: HashMap::new(),
                order: VecDeque::new(),
                capacity: cache_capacity,
            }),
        }
    }

    pub fn root(&self) -> Option<&Path> {
        self.root.as_deref()
    }

    /// Manifests of every run directory directly under the root.
    pub fn list_runs(&self) -> Result<Vec<RunManifest>> {
        let root = self.root.as_ref().ok_or_else(|| GatewayError::BadRequest("no data root".into()))?;
        let mut out = Vec::new();
        for entry in std::fs::read_dir(root)? {
            let path = entry?.path();
            if path.join(MANIFEST_FILE).is_file() {
                out.push(RunManifest::read(&path)?);
            }
        }
        out.sort_by(|a, b| a.run_id.cmp(&b.run_id));
        Ok(out)
    }

    /// Run `id` under the root.
    pub fn run(&self, id: &str) -> Result<Arc<Run>> {
        let root = self.root.as_ref().ok_or_else(|| GatewayError::BadRequest("no data root".into()))?;
        if id.is_empty() || id.contains(['/', '\\']) || id == "." || id == ".." {
            return Err(GatewayError::NotFound(format!("run {id:?}")));
        }
        let dir = root.join(id);
        if !dir.join(MANIFEST_FILE).is_file() {
            return Err(GatewayError::NotFound(format!("run {id:?}")));
        }
        self.open(&dir)
    }

    /// Run stored in `dir`, loaded once.
    pub fn open(&self, dir: &Path) -> Result<Arc<Run>> {
        let key = dir.canonicalize().map_err(|_| GatewayError::NotFound(format!("run directory {}", dir.display())))?;
        if let Some(r) = self.runs.lock().expect("run table poisoned").get(&key) {
            return Ok(r.clone());
        }
        let run = Arc::new(Run::open(&key)?);
        self.runs.lock().expect("run table poisoned").entry(key).or_insert(run.clone());
        Ok(run)
    }

    /// Member states at leads `1..=steps` replayed with `beta`, or with
    /// the archived scales when `None`.
    pub fn member(&self, run: &Run, member: usize, beta: Option<[f64; 3]>) -> Result<Trajectory> {
        run.check_member(member)?;
        let beta = beta.unwrap_or(run.archive.header.beta);
        check_beta(beta)?;
        let key = (run.dir.clone(), beta_key(beta), member);
        if let Some(t) = self.cache.lock().expect("cache poisoned").get(&key) {
            return Ok(t);
        }
        let traj = replay_member(&run.archive, &run.model, member, Some(beta))?;
        if let Some(msg) = traj.aborted {
            return Err(GatewayError::Replay(format!("member {member}: {msg}")));
        }
        let t = Arc::new(traj.states);
        self.cache.lock().expect("cache poisoned").insert(key, t.clone());
        Ok(t)
    }

    /// Every member at `beta`, replaying the uncached ones in parallel.
    pub fn ensemble(&self, run: &Run, beta: [f64; 3]) -> Result<EnsembleFields> {
        check_beta(beta)?;
        let members = (0..run.members())
            .into_par_iter()
            .map(|k| self.member(run, k, Some(beta)))
            .collect::<Result<Vec<_>>>()?;
        let (mean, std) = moments(&members);
        Ok(EnsembleFields { members, mean, std })
    }

    pub fn field(&self, run: &Run, q: &FieldQuery) -> Result<FieldResponse> {
        run.check_member(q.member)?;
        run.check_step(q.step, true)?;
        let v = run.variable(&q.variable)?;
        let beta = q.beta.unwrap_or(run.archive.header.beta);
        let values = if q.step == 0 {
            run.plane(&run.archive.initial, v).to_vec()
        } else {
            run.plane(&self.member(run, q.member, Some(beta))?[q.step - 1], v).to_vec()
        };
        let (ensemble_mean, ensemble_std) = if q.companions && q.step > 0 {
            let e = self.ensemble(run, beta)?;
            (Some(run.plane(&e.mean[q.step - 1], v).to_vec()), Some(run.plane(&e.std[q.step - 1], v).to_vec()))
        } else {
            (None, None)
        };
        Ok(self.response(run, FieldKind::Member, Some(q.member), q.step, v, beta, values, ensemble_mean, ensemble_std))
    }

    #[allow(clippy::too_many_arguments)]
    fn response(
        &self,
        run: &Run,
        kind: FieldKind,
        member: Option<usize>,
        step: usize,
        variable: usize,
        beta: [f64; 3],
        values: Vec<f32>,
        ensemble_mean: Option<Vec<f32>>,
        ensemble_std: Option<Vec<f32>>,
    ) -> FieldResponse {
        let (_, h, w) = run.dims();
        let (min, max) = min_max(&values);
        FieldResponse {
            run: run.id.clone(),
            kind,
            member,
            step,
            variable: run.variable_names()[variable].clone(),
            beta,
            dims: [h, w],
            values,
            min,
            max,
            ensemble_mean,
            ensemble_std,
        }
    }

    pub fn generate(&self, run: &Run, req: &GenerateRequest) -> Result<GenerateResponse> {
        let step = req.step.unwrap_or(run.steps());
        run.check_step(step, false)?;
        let v = run.variable(&req.variable)?;
        let e = self.ensemble(run, req.beta)?;
        let (nv, h, w) = run.dims();
        let summary = (0..run.steps())
            .map(|t| StepSummary {
                step: t + 1,
                spread: (0..nv)
                    .map(|var| {
                        let p = run.plane(&e.std[t], var);
                        (p.iter().map(|&s| (s as f64).powi(2)).sum::<f64>() / (h * w) as f64).sqrt()
                    })
                    .collect(),
            })
            .collect();
        let mean = run.plane(&e.mean[step - 1], v).to_vec();
        let std = run.plane(&e.std[step - 1], v).to_vec();
        Ok(GenerateResponse {
            run: run.id.clone(),
            beta: req.beta,
            members: run.members(),
            variables: run.variable_names(),
            mean: self.response(run, FieldKind::Mean, None, step, v, req.beta, mean, None, None),
            std: self.response(run, FieldKind::Std, None, step, v, req.beta, std, None, None),
            summary,
        })
    }

    /// Whole interpolated trajectory at leads `1..=steps`.
    pub fn interpolate_trajectory(&self, run: &Run, i: usize, j: usize, e: f64, blend: NoiseBlend) -> Result<Vec<Vec<f32>>> {
        run.check_member(i)?;
        run.check_member(j)?;
        if !(0.0..=1.0).contains(&e) {
            return Err(GatewayError::BadRequest(format!("e = {e} outside [0, 1]")));
        }
        let t = interpolate_members(&run.archive, &run.model, i, j, e, blend)?;
        if let Some(msg) = t.aborted {
            return Err(GatewayError::Replay(msg));
        }
        Ok(t.states)
    }

    pub fn interpolate(&self, run: &Run, req: &InterpolateRequest) -> Result<FieldResponse> {
        let step = req.step.unwrap_or(run.steps());
        run.check_step(step, false)?;
        let v = run.variable(&req.variable)?;
        let states = self.interpolate_trajectory(run, req.member_i, req.member_j, req.e, req.blend)?;
        let values = run.plane(&states[step - 1], v).to_vec();
        Ok(self.response(run, FieldKind::Interpolated, None, step, v, run.archive.header.beta, values, None, None))
    }

    /// Spectra of one member when the scale of `level` takes each value
    /// with the others at one.
    pub fn spectra(&self, run: &Run, req: &SpectraRequest) -> Result<SpectraResponse> {
        if !(1..=3).contains(&req.level) {
            return Err(GatewayError::BadRequest(format!("level {} outside 1..=3", req.level)));
        }
        let step = req.step.unwrap_or(1);
        run.check_step(step, false)?;
        let n = run.dims().1;
        let base = self.member(run, req.member, Some([1.0; 3]))?;
        let base_state = &base[step - 1];
        let reference = vorticity_spectrum(base_state, n)?;
        let curves = req
            .values
            .iter()
            .map(|&value| {
                let mut beta = [1.0; 3];
                beta[(req.level - 1) as usize] = value;
                let states = self.member(run, req.member, Some(beta))?;
                let s = &states[step - 1];
                let anomaly: Vec<f32> = s.iter().zip(base_state).map(|(a, b)| a - b).collect();
                let a: Spectrum = vorticity_spectrum(&anomaly, n)?;
                Ok(SpectrumCurve {
                    value,
                    state: vorticity_spectrum(s, n)?.energy,
                    anomaly_centroid: a.centroid(),
                    anomaly: a.energy,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SpectraResponse {
            run: run.id.clone(),
            level: req.level,
            member: req.member,
            step,
            wavenumbers: (0..reference.energy.len()).collect(),
            reference: reference.energy,
            curves,
        })
    }
}
