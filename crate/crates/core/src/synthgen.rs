//! Stochastically forced barotropic vorticity with a passive tracer on the
//! doubly periodic square `[0, 2π)²`.
//!
//! ```text
//! ∂ζ/∂t = −J(ψ, ζ) + ν∇²ζ − μζ + f,    ∇²ψ = ζ,   u = −ψ_y, v = ψ_x
//! ∂θ/∂t = −J(ψ, θ) − G v + κ∇²θ
//! ```
//!
//! θ is the periodic anomaly about a fixed mean gradient `G y`, which keeps
//! tracer variance statistically steady. Pseudo-spectral in space with the
//! 2/3 rule, RK4 in time. The forcing is redrawn at the start of every stride
//! from the `DataForcing` stream and held fixed within it.

use crate::container::{ContainerReader, ContainerWriter};
use crate::error::{invalid, Error, Result};
use crate::fft::{wavenumber, Fft2};
use crate::verify::ke_spectrum;
use diffcore::{gaussian_stream, RngKey, StreamRole};
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::ops::Range;
use std::path::Path;

pub const VARIABLES: [&str; 3] = ["vorticity", "tracer", "speed"];
const DATASET_MAGIC: &[u8; 4] = b"SDLD";
const DATASET_VERSION: u32 = 1;
/// Layer id of the forcing stream used during spin-up.
const SPINUP_LAYER: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SystemConfig {
    pub grid: usize,
    pub nu: f64,
    pub mu: f64,
    pub forcing_kmin: f64,
    pub forcing_kmax: f64,
    pub sigma_f: f64,
    pub kappa: f64,
    pub tracer_gradient: f64,
    pub dt: f64,
    pub stride_steps: usize,
    pub spinup_strides: usize,
    /// Strides run after branching from the spun-up state before recording.
    pub decorrelation_strides: usize,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            grid: 64,
            nu: 1e-4,
            mu: 0.02,
            forcing_kmin: 3.0,
            forcing_kmax: 5.0,
            sigma_f: 0.3,
            kappa: 1e-4,
            tracer_gradient: 1.0,
            dt: 1e-3,
            stride_steps: 200,
            spinup_strides: 5000,
            decorrelation_strides: 50,
        }
    }
}

impl SystemConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid < 8 || self.grid % 2 != 0 {
            return Err(invalid(format!("grid {} must be even and ≥ 8", self.grid)));
        }
        if !(self.dt > 0.0) || self.stride_steps == 0 {
            return Err(invalid("dt and stride_steps must be positive"));
        }
        if self.nu < 0.0 || self.mu < 0.0 || self.kappa < 0.0 || self.sigma_f < 0.0 {
            return Err(invalid("negative dissipation or forcing amplitude"));
        }
        Ok(())
    }

    pub fn state_len(&self) -> usize {
        VARIABLES.len() * self.grid * self.grid
    }
}

/// Wavenumber tables for the transposed spectral layout `[kx][ky]`.
#[derive(Clone)]
struct Modes {
    kx: Vec<f64>,
    ky: Vec<f64>,
    k2: Vec<f64>,
    inv_k2: Vec<f64>,
    /// Indices kept by the 2/3 rule.
    active: Vec<usize>,
    /// `kx` rows containing any active mode.
    rows: Vec<bool>,
    /// Index of `−k`.
    neg: Vec<usize>,
}

impl Modes {
    fn new(n: usize) -> Self {
        let cut = (n / 3) as i64;
        let n2 = n * n;
        let mut m = Self {
            kx: vec![0.0; n2],
            ky: vec![0.0; n2],
            k2: vec![0.0; n2],
            inv_k2: vec![0.0; n2],
            active: Vec::new(),
            rows: vec![false; n],
            neg: vec![0; n2],
        };
        for ix in 0..n {
            for iy in 0..n {
                let (a, b) = (wavenumber(ix, n), wavenumber(iy, n));
                let idx = ix * n + iy;
                m.kx[idx] = a as f64;
                m.ky[idx] = b as f64;
                m.k2[idx] = (a * a + b * b) as f64;
                m.inv_k2[idx] = if idx == 0 { 0.0 } else { 1.0 / m.k2[idx] };
                m.neg[idx] = ((n - ix) % n) * n + (n - iy) % n;
                if a.abs() <= cut && b.abs() <= cut {
                    m.active.push(idx);
                    m.rows[ix] = true;
                }
            }
        }
        m
    }
}

#[derive(Clone)]
struct Work {
    b1: Vec<Complex64>,
    b2: Vec<Complex64>,
    b3: Vec<Complex64>,
    b4: Vec<Complex64>,
    zs: Vec<Complex64>,
    ts: Vec<Complex64>,
    kz: Vec<Complex64>,
    kt: Vec<Complex64>,
    az: Vec<Complex64>,
    at: Vec<Complex64>,
}

impl Work {
    fn new(n2: usize) -> Self {
        let z = vec![Complex64::default(); n2];
        Self {
            b1: z.clone(),
            b2: z.clone(),
            b3: z.clone(),
            b4: z.clone(),
            zs: z.clone(),
            ts: z.clone(),
            kz: z.clone(),
            kt: z.clone(),
            az: z.clone(),
            at: z,
        }
    }
}

pub struct Solver {
    cfg: SystemConfig,
    fft: Fft2,
    modes: Modes,
    zeta: Vec<Complex64>,
    theta: Vec<Complex64>,
    forcing: Vec<Complex64>,
    work: Work,
    max_cfl: f64,
}

impl Clone for Solver {
    fn clone(&self) -> Self {
        Self {
            cfg: self.cfg.clone(),
            fft: Fft2::new(self.cfg.grid),
            modes: self.modes.clone(),
            zeta: self.zeta.clone(),
            theta: self.theta.clone(),
            forcing: self.forcing.clone(),
            work: self.work.clone(),
            max_cfl: self.max_cfl,
        }
    }
}

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Tendencies of `(z, t)`; returns `max(|u| + |v|)`.
#[allow(clippy::too_many_arguments)]
fn tendency(
    cfg: &SystemConfig,
    m: &Modes,
    fft: &mut Fft2,
    forcing: &[Complex64],
    b: (&mut [Complex64], &mut [Complex64], &mut [Complex64], &mut [Complex64]),
    z: &[Complex64],
    t: &[Complex64],
    dz: &mut [Complex64],
    dt: &mut [Complex64],
) -> f64 {
    let (b1, b2, b3, b4) = b;
    let n = cfg.grid;
    let s = 1.0 / (n * n) as f64;
    for buf in [&mut *b1, &mut *b2, &mut *b3] {
        buf.fill(Complex64::default());
    }
    for &i in &m.active {
        let (a, c) = (m.kx[i], m.ky[i]);
        let psi = -z[i] * (m.inv_k2[i] * s);
        // u + i v with u = −ψ_y, v = ψ_x
        b1[i] = -I * c * psi - a * psi;
        let d = I * a - c;
        b2[i] = d * z[i] * s;
        b3[i] = d * t[i] * s;
    }
    fft.inverse_t(b1, &m.rows);
    fft.inverse_t(b2, &m.rows);
    fft.inverse_t(b3, &m.rows);
    let g = cfg.tracer_gradient;
    let mut vmax: f64 = 0.0;
    for p in 0..n * n {
        let (u, v) = (b1[p].re, b1[p].im);
        b4[p] = Complex64::new(u * b2[p].re + v * b2[p].im, u * b3[p].re + v * b3[p].im + g * v);
        vmax = vmax.max(u.abs() + v.abs());
    }
    fft.forward_t(b4, &m.rows);
    let (nu, mu, kappa) = (cfg.nu, cfg.mu, cfg.kappa);
    for &i in &m.active {
        let zc = b4[m.neg[i]].conj();
        let nz = (b4[i] + zc) * 0.5;
        let nt = (b4[i] - zc) * Complex64::new(0.0, -0.5);
        dz[i] = -nz - z[i] * (nu * m.k2[i] + mu) + forcing[i];
        dt[i] = -nt - t[i] * (kappa * m.k2[i]);
    }
    vmax
}

impl Solver {
    /// Quiescent solver (ζ = θ = 0, no forcing).
    pub fn new(cfg: &SystemConfig) -> Result<Self> {
        cfg.validate()?;
        let n2 = cfg.grid * cfg.grid;
        Ok(Self {
            cfg: cfg.clone(),
            fft: Fft2::new(cfg.grid),
            modes: Modes::new(cfg.grid),
            zeta: vec![Complex64::default(); n2],
            theta: vec![Complex64::default(); n2],
            forcing: vec![Complex64::default(); n2],
            work: Work::new(n2),
            max_cfl: 0.0,
        })
    }

    /// Random band-limited vorticity with unit physical-space std, θ = 0.
    pub fn initial(cfg: &SystemConfig, seed: u64) -> Result<Self> {
        let mut s = Self::new(cfg)?;
        let key = RngKey::new(seed, 0, 0, 0, StreamRole::InitPerturbation);
        s.zeta = s.band_noise(&key, 1.0);
        Ok(s)
    }

    pub fn config(&self) -> &SystemConfig {
        &self.cfg
    }

    /// Band-filtered white noise scaled so the expected physical std is `std`.
    fn band_noise(&mut self, key: &RngKey, std: f64) -> Vec<Complex64> {
        let n = self.cfg.grid;
        let mut h: Vec<Complex64> = gaussian_stream(key, n * n)
            .into_iter()
            .map(|x| Complex64::new(x, 0.0))
            .collect();
        self.fft.forward_t(&mut h, &self.modes.rows);
        let (lo, hi) = (self.cfg.forcing_kmin, self.cfg.forcing_kmax);
        let mut keep = vec![false; n * n];
        for &i in &self.modes.active {
            let k = self.modes.k2[i].sqrt();
            keep[i] = k >= lo && k <= hi;
        }
        let count = keep.iter().filter(|k| **k).count();
        // filtered unit white noise has variance count / N²
        let scale = if count == 0 { 0.0 } else { std * n as f64 / (count as f64).sqrt() };
        for (v, k) in h.iter_mut().zip(&keep) {
            *v = if *k { *v * scale } else { Complex64::default() };
        }
        h
    }

    pub fn set_forcing(&mut self, key: &RngKey) {
        if self.cfg.sigma_f == 0.0 {
            self.forcing.fill(Complex64::default());
        } else {
            self.forcing = self.band_noise(key, self.cfg.sigma_f);
        }
    }

    /// One RK4 step. Returns the CFL number of the starting state.
    pub fn step(&mut self) -> f64 {
        let h = self.cfg.dt;
        let Self {
            cfg,
            fft,
            modes,
            zeta,
            theta,
            forcing,
            work: w,
            ..
        } = self;
        let act = &modes.active;
        let mut vmax = 0.0;
        for stage in 0..4 {
            let (zin, tin): (&[Complex64], &[Complex64]) = if stage == 0 { (zeta, theta) } else { (&w.zs, &w.ts) };
            let v = tendency(
                cfg,
                modes,
                fft,
                forcing,
                (&mut w.b1, &mut w.b2, &mut w.b3, &mut w.b4),
                zin,
                tin,
                &mut w.kz,
                &mut w.kt,
            );
            let (acc_w, next_c) = match stage {
                0 => {
                    vmax = v;
                    (1.0, h / 2.0)
                }
                1 => (2.0, h / 2.0),
                2 => (2.0, h),
                _ => (1.0, 0.0),
            };
            for &i in act {
                if stage == 0 {
                    w.az[i] = w.kz[i];
                    w.at[i] = w.kt[i];
                } else {
                    w.az[i] += w.kz[i] * acc_w;
                    w.at[i] += w.kt[i] * acc_w;
                }
                if stage < 3 {
                    w.zs[i] = zeta[i] + w.kz[i] * next_c;
                    w.ts[i] = theta[i] + w.kt[i] * next_c;
                }
            }
        }
        let c = h / 6.0;
        for &i in act {
            zeta[i] += w.az[i] * c;
            theta[i] += w.at[i] * c;
        }
        let dx = std::f64::consts::TAU / cfg.grid as f64;
        vmax * h / dx
    }

    /// Draws the stride's forcing from `key` and integrates one stride.
    pub fn advance_stride(&mut self, key: &RngKey, stride: usize) -> Result<()> {
        self.set_forcing(key);
        let before = self.zeta.clone();
        for _ in 0..self.cfg.stride_steps {
            let cfl = self.step();
            if !cfl.is_finite() {
                break;
            }
            self.max_cfl = self.max_cfl.max(cfl);
            if cfl >= 0.5 {
                return Err(Error::Cfl { stride, cfl });
            }
        }
        let finite = self.zeta.iter().chain(&self.theta).all(|c| c.re.is_finite() && c.im.is_finite());
        if !finite {
            let (u, v) = self.velocity_of(&before);
            let spec = ke_spectrum(&u, &v, self.cfg.grid).map(|s| s.energy).unwrap_or_default();
            return Err(Error::BlowUp { stride, spectrum: spec });
        }
        Ok(())
    }

    fn velocity_of(&mut self, zeta: &[Complex64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.cfg.grid;
        let s = 1.0 / (n * n) as f64;
        let m = &self.modes;
        let mut b = vec![Complex64::default(); n * n];
        for &i in &m.active {
            let psi = -zeta[i] * (m.inv_k2[i] * s);
            b[i] = -I * m.ky[i] * psi - m.kx[i] * psi;
        }
        self.fft.inverse_t(&mut b, &self.modes.rows);
        (b.iter().map(|c| c.re).collect(), b.iter().map(|c| c.im).collect())
    }

    pub fn velocity(&mut self) -> (Vec<f64>, Vec<f64>) {
        let z = self.zeta.clone();
        self.velocity_of(&z)
    }

    /// Largest CFL number seen so far.
    pub fn max_cfl(&self) -> f64 {
        self.max_cfl
    }

    /// Physical `(ζ, θ, |u|)` as a `(3, N, N)` f32 state.
    pub fn state_f32(&mut self) -> Vec<f32> {
        let n = self.cfg.grid;
        let s = 1.0 / (n * n) as f64;
        let mut b = vec![Complex64::default(); n * n];
        for &i in &self.modes.active {
            b[i] = (self.zeta[i] + I * self.theta[i]) * s;
        }
        self.fft.inverse_t(&mut b, &self.modes.rows);
        let (u, v) = self.velocity();
        let mut out = Vec::with_capacity(self.cfg.state_len());
        out.extend(b.iter().map(|c| c.re as f32));
        out.extend(b.iter().map(|c| c.im as f32));
        out.extend(u.iter().zip(&v).map(|(a, b)| (a * a + b * b).sqrt() as f32));
        out
    }

    fn norm(&self) -> f64 {
        let n = self.cfg.grid as f64;
        1.0 / (n * n * n * n)
    }

    /// Domain-mean kinetic energy `⟨½|u|²⟩`.
    pub fn kinetic_energy(&self) -> f64 {
        self.zeta
            .iter()
            .zip(&self.modes.inv_k2)
            .map(|(z, ik)| 0.5 * z.norm_sqr() * ik)
            .sum::<f64>()
            * self.norm()
    }

    /// Domain-mean enstrophy `⟨½ζ²⟩`.
    pub fn enstrophy(&self) -> f64 {
        self.zeta.iter().map(|z| 0.5 * z.norm_sqr()).sum::<f64>() * self.norm()
    }

    pub fn tracer_mean(&self) -> f64 {
        let n = self.cfg.grid as f64;
        self.theta[0].re / (n * n)
    }

    /// Adds a uniform offset to the tracer anomaly.
    pub fn shift_tracer(&mut self, c: f64) {
        let n = self.cfg.grid as f64;
        self.theta[0] += Complex64::new(c * n * n, 0.0);
    }
}

pub fn forcing_key(seed: u64, trajectory: u32, stride: usize) -> RngKey {
    RngKey::new(seed, trajectory, 0, stride as u32, StreamRole::DataForcing)
}

fn spinup_key(seed: u64, stride: usize) -> RngKey {
    RngKey::new(seed, 0, SPINUP_LAYER, stride as u32, StreamRole::DataForcing)
}

/// Random start integrated for `spinup_strides` strides.
pub fn spin_up(cfg: &SystemConfig, seed: u64) -> Result<Solver> {
    let mut s = Solver::initial(cfg, seed)?;
    for k in 0..cfg.spinup_strides {
        s.advance_stride(&spinup_key(seed, k), k)?;
    }
    Ok(s)
}

/// One independent trajectory branched from a spun-up state: `n_samples + 1`
/// consecutive states after the decorrelation strides.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub id: u32,
    pub split: Split,
    pub n_states: usize,
    pub states: Vec<f32>,
}

impl Trajectory {
    pub fn state(&self, k: usize, len: usize) -> &[f32] {
        &self.states[k * len..(k + 1) * len]
    }
}

pub fn run_trajectory(start: &Solver, seed: u64, id: u32, split: Split, n_samples: usize) -> Result<Trajectory> {
    let mut s = start.clone();
    let cfg = s.cfg.clone();
    for k in 0..cfg.decorrelation_strides {
        s.advance_stride(&forcing_key(seed, id, k), k)?;
    }
    let mut states = Vec::with_capacity((n_samples + 1) * cfg.state_len());
    states.extend(s.state_f32());
    for k in 0..n_samples {
        let stride = cfg.decorrelation_strides + k;
        s.advance_stride(&forcing_key(seed, id, stride), stride)?;
        states.extend(s.state_f32());
    }
    Ok(Trajectory {
        id,
        split,
        n_states: n_samples + 1,
        states,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub trajectory: u32,
    pub step: usize,
    pub state_t: Vec<f32>,
    pub state_t1: Vec<f32>,
    /// Forcing stream used between the two states.
    pub key: RngKey,
}

fn records_of(traj: &Trajectory, cfg: &SystemConfig, seed: u64) -> Vec<SampleRecord> {
    let len = cfg.state_len();
    (0..traj.n_states - 1)
        .map(|k| SampleRecord {
            trajectory: traj.id,
            step: k,
            state_t: traj.state(k, len).to_vec(),
            state_t1: traj.state(k + 1, len).to_vec(),
            key: forcing_key(seed, traj.id, cfg.decorrelation_strides + k),
        })
        .collect()
}

/// Spin-up followed by `n_samples` records of trajectory 0.
pub fn integrate(cfg: &SystemConfig, seed: u64, n_samples: usize) -> Result<Vec<SampleRecord>> {
    if n_samples == 0 {
        return Err(invalid("n_samples must be ≥ 1"));
    }
    let start = spin_up(cfg, seed)?;
    let t = run_trajectory(&start, seed, 0, Split::Train, n_samples)?;
    Ok(records_of(&t, cfg, seed))
}

/// Recomputes one record from scratch.
pub fn regenerate_record(cfg: &SystemConfig, seed: u64, trajectory: u32, step: usize) -> Result<SampleRecord> {
    let start = spin_up(cfg, seed)?;
    let t = run_trajectory(&start, seed, trajectory, Split::Train, step + 1)?;
    Ok(records_of(&t, cfg, seed).swap_remove(step))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Contiguous `[train, val, test]` index ranges over `n` time-ordered records.
pub fn make_splits(n: usize, fractions: [f64; 3]) -> Result<[Range<usize>; 3]> {
    let total: f64 = fractions.iter().sum();
    if fractions.iter().any(|f| !(*f >= 0.0)) || (total - 1.0).abs() > 1e-9 {
        return Err(invalid(format!("fractions {fractions:?} must be non-negative and sum to 1")));
    }
    let a = (fractions[0] * n as f64).round() as usize;
    let b = ((fractions[0] + fractions[1]) * n as f64).round() as usize;
    let r = [0..a.min(n), a.min(n)..b.min(n), b.min(n)..n];
    for (range, f) in r.iter().zip(fractions) {
        if f > 0.0 && range.is_empty() {
            return Err(invalid(format!("too few records ({n}) for fractions {fractions:?}")));
        }
    }
    Ok(r)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub samples_per_trajectory: usize,
}

impl Default for DatasetSizes {
    fn default() -> Self {
        Self {
            train: 20_000,
            val: 2_000,
            test: 2_000,
            samples_per_trajectory: 2_000,
        }
    }
}

impl DatasetSizes {
    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }

    pub fn fractions(&self) -> [f64; 3] {
        let t = self.total() as f64;
        [self.train as f64 / t, self.val as f64 / t, self.test as f64 / t]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryInfo {
    pub id: u32,
    pub split: Split,
    pub n_states: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub config: SystemConfig,
    pub seed: u64,
    pub stride_steps: usize,
    pub variables: Vec<String>,
    pub trajectories: Vec<TrajectoryInfo>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub trajectories: Vec<Trajectory>,
}

/// One training pair `(state_t, state_t+1)`, by position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RecordRef {
    pub trajectory: usize,
    pub step: usize,
}

impl Dataset {
    /// Spins up once, then branches one trajectory per chunk of
    /// `samples_per_trajectory` records; splits never share a trajectory.
    pub fn generate(cfg: &SystemConfig, seed: u64, sizes: &DatasetSizes, mut progress: impl FnMut(&str)) -> Result<Self> {
        if sizes.samples_per_trajectory == 0 || sizes.total() == 0 {
            return Err(invalid("dataset sizes must be positive"));
        }
        progress(&format!("spin-up: {} strides", cfg.spinup_strides));
        let start = spin_up(cfg, seed)?;
        let mut trajectories = Vec::new();
        let mut id = 0u32;
        for (split, count) in [(Split::Train, sizes.train), (Split::Val, sizes.val), (Split::Test, sizes.test)] {
            let mut left = count;
            while left > 0 {
                let n = left.min(sizes.samples_per_trajectory);
                progress(&format!("trajectory {id} ({split:?}): {n} samples"));
                trajectories.push(run_trajectory(&start, seed, id, split, n)?);
                left -= n;
                id += 1;
            }
        }
        Ok(Self::from_trajectories(cfg, seed, trajectories))
    }

    pub fn from_trajectories(cfg: &SystemConfig, seed: u64, trajectories: Vec<Trajectory>) -> Self {
        let header = DatasetHeader {
            config: cfg.clone(),
            seed,
            stride_steps: cfg.stride_steps,
            variables: VARIABLES.iter().map(|s| s.to_string()).collect(),
            trajectories: trajectories
                .iter()
                .map(|t| TrajectoryInfo {
                    id: t.id,
                    split: t.split,
                    n_states: t.n_states,
                })
                .collect(),
        };
        Self { header, trajectories }
    }

    pub fn grid(&self) -> usize {
        self.header.config.grid
    }

    pub fn state_len(&self) -> usize {
        self.header.config.state_len()
    }

    pub fn state(&self, r: RecordRef) -> &[f32] {
        self.trajectories[r.trajectory].state(r.step, self.state_len())
    }

    /// States `k, k+1, …, k+len` of one trajectory.
    pub fn window(&self, r: RecordRef, len: usize) -> Vec<&[f32]> {
        (0..=len)
            .map(|j| self.state(RecordRef { step: r.step + j, ..r }))
            .collect()
    }

    /// Start positions in `split` with at least `lead` states after them.
    pub fn starts(&self, split: Split, lead: usize) -> Vec<RecordRef> {
        let mut out = Vec::new();
        for (ti, t) in self.trajectories.iter().enumerate() {
            if t.split == split && t.n_states > lead {
                out.extend((0..t.n_states - lead).map(|step| RecordRef { trajectory: ti, step }));
            }
        }
        out
    }

    pub fn count(&self, split: Split) -> usize {
        self.trajectories
            .iter()
            .filter(|t| t.split == split)
            .map(|t| t.n_states - 1)
            .sum()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let header = serde_json::to_string(&self.header)?;
        let mut w = ContainerWriter::create(path, DATASET_MAGIC, DATASET_VERSION, &header)?;
        for t in &self.trajectories {
            w.write_f32s(&t.states)?;
        }
        w.finish()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut r = ContainerReader::open(path, DATASET_MAGIC, DATASET_VERSION)?;
        let header: DatasetHeader = serde_json::from_str(&r.header)?;
        let len = header.config.state_len();
        let mut trajectories = Vec::with_capacity(header.trajectories.len());
        for info in &header.trajectories {
            let states = r.read_f32s(info.n_states * len)?;
            trajectories.push(Trajectory {
                id: info.id,
                split: info.split,
                n_states: info.n_states,
                states,
            });
        }
        r.finish()?;
        Ok(Self { header, trajectories })
    }

    pub fn manifest(&self, file: &str, sha256: String) -> DatasetManifest {
        let counts = [Split::Train, Split::Val, Split::Test].map(|s| self.count(s));
        let mut boundaries = Vec::new();
        let mut at = 0;
        for c in counts {
            boundaries.push([at, at + c]);
            at += c;
        }
        DatasetManifest {
            file: file.to_string(),
            sha256,
            seed: self.header.seed,
            train: counts[0],
            val: counts[1],
            test: counts[2],
            split_boundaries: boundaries,
            trajectories: self.header.trajectories.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub file: String,
    pub sha256: String,
    pub seed: u64,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    /// Half-open record index ranges of train, val and test.
    pub split_boundaries: Vec<[usize; 2]>,
    pub trajectories: Vec<TrajectoryInfo>,
}
