//! Ensemble verification metrics and kinetic-energy spectra.

use crate::emulator::ModelState;
use crate::error::{invalid, Error, Result};
use crate::fft::{wavenumber, Fft2};
use crate::latents::{replay_member, LatentArchive};
use crate::losses::{afcrps, SpatialWeights};
use diffcore::{rng::uniform_block, RngKey, StreamRole};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Ring-summed kinetic energy per integer wavenumber.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    /// `energy[n]` sums modes with `n − ½ < |k| ≤ n + ½`.
    pub energy: Vec<f64>,
    pub total: f64,
}

impl Spectrum {
    /// `Σ n E(n) / Σ E(n)`.
    pub fn centroid(&self) -> f64 {
        let s: f64 = self.energy.iter().sum();
        if s == 0.0 {
            return 0.0;
        }
        self.energy.iter().enumerate().map(|(n, e)| n as f64 * e).sum::<f64>() / s
    }

    /// Fraction of energy in wavenumbers `n ≤ cutoff`.
    pub fn fraction_at_or_below(&self, cutoff: usize) -> f64 {
        let s: f64 = self.energy.iter().sum();
        if s == 0.0 {
            return 0.0;
        }
        self.energy.iter().take(cutoff + 1).sum::<f64>() / s
    }

    pub fn peak(&self) -> usize {
        self.energy
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(n, _)| n)
            .unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlaneGrid {
    pub n: usize,
    pub periodic: bool,
}

pub fn ke_spectrum_on(grid: PlaneGrid, u: &[f64], v: &[f64]) -> Result<Spectrum> {
    if !grid.periodic {
        return Err(invalid("spectra need a doubly periodic grid"));
    }
    ke_spectrum(u, v, grid.n)
}

/// Isotropic KE spectrum of `(u, v)` on an `n × n` periodic grid, normalised
/// so `Σ E(n)` is the domain mean of `½(u² + v²)`.
pub fn ke_spectrum(u: &[f64], v: &[f64], n: usize) -> Result<Spectrum> {
    if u.len() != n * n || v.len() != n * n {
        return Err(Error::Shape {
            op: "ke_spectrum",
            expected: format!("{} values", n * n),
            found: format!("{} and {}", u.len(), v.len()),
        });
    }
    let mut fft = Fft2::new(n);
    let (uh, vh) = fft.forward_pair(u, v);
    let norm = 1.0 / ((n * n) as f64 * (n * n) as f64);
    let nmax = ((2.0f64).sqrt() * (n / 2) as f64).ceil() as usize + 1;
    let mut energy = vec![0.0; nmax + 1];
    for j in 0..n {
        for i in 0..n {
            let (a, b) = (wavenumber(i, n) as f64, wavenumber(j, n) as f64);
            let k = (a * a + b * b).sqrt();
            // n − ½ < k ≤ n + ½
            let ring = (k - 0.5).ceil().max(0.0) as usize;
            let idx = j * n + i;
            energy[ring] += 0.5 * (uh[idx].norm_sqr() + vh[idx].norm_sqr()) * norm;
        }
    }
    let total = energy.iter().sum();
    Ok(Spectrum { energy, total })
}

/// Velocity `(u, v) = (−ψ_y, ψ_x)` of the flow whose vorticity is `zeta`.
pub fn velocity_from_vorticity(zeta: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut fft = Fft2::new(n);
    let zh = fft.forward_real(zeta);
    let mut uh = zh.clone();
    let mut vh = zh;
    let i_unit = rustfft::num_complex::Complex64::new(0.0, 1.0);
    for j in 0..n {
        for i in 0..n {
            let (a, b) = (wavenumber(i, n) as f64, wavenumber(j, n) as f64);
            let k2 = a * a + b * b;
            let idx = j * n + i;
            let psi = if k2 == 0.0 { Default::default() } else { -uh[idx] / k2 };
            uh[idx] = -i_unit * b * psi;
            vh[idx] = i_unit * a * psi;
        }
    }
    fft.inverse_pair(&uh, &vh)
}

/// KE spectrum of the flow whose vorticity is the first `n × n` plane of a
/// `(V, H, W)` state.
pub fn vorticity_spectrum(state: &[f32], n: usize) -> Result<Spectrum> {
    if state.len() < n * n {
        return Err(invalid("state smaller than one plane"));
    }
    let zeta: Vec<f64> = state[..n * n].iter().map(|&v| v as f64).collect();
    let (u, v) = velocity_from_vorticity(&zeta, n);
    ke_spectrum(&u, &v, n)
}

/// Options of the ensemble scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricOptions {
    pub alpha_loss: f64,
    /// Multiply spread by `sqrt((M + 1) / M)` before forming the ratio.
    pub ssr_correction: bool,
    /// Rank histograms use every `rank_stride`-th point in each direction.
    pub rank_stride: usize,
    /// Seed of the tie-breaking stream.
    pub tie_seed: u64,
}

impl Default for MetricOptions {
    fn default() -> Self {
        Self {
            alpha_loss: 0.95,
            ssr_correction: false,
            rank_stride: 1,
            tie_seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default)]
struct Cell {
    w_sum: f64,
    sq_mean_err: f64,
    sq_det_err: f64,
    has_det: bool,
    var_sum: f64,
    crps_sum: f64,
    ranks: Vec<u64>,
}

/// Running sums per `(variable, lead)`, so cases can be added one at a time.
#[derive(Debug, Clone)]
pub struct MetricsAccumulator {
    members: usize,
    dims: (usize, usize, usize),
    weights: Vec<f64>,
    options: MetricOptions,
    leads: usize,
    cells: Vec<Cell>,
    cases: usize,
    tie_key: RngKey,
    tie_draws: u64,
}

impl MetricsAccumulator {
    pub fn new(
        members: usize,
        leads: usize,
        dims: (usize, usize, usize),
        weights: &SpatialWeights,
        options: MetricOptions,
    ) -> Result<Self> {
        if members < 2 {
            return Err(invalid("ensemble metrics need at least two members"));
        }
        if weights.rows() != dims.1 {
            return Err(invalid(format!("{} row weights for {} rows", weights.rows(), dims.1)));
        }
        if options.rank_stride == 0 {
            return Err(invalid("rank stride must be positive"));
        }
        let cells = (0..dims.0 * leads)
            .map(|_| Cell {
                ranks: vec![0; members + 1],
                ..Cell::default()
            })
            .collect();
        Ok(Self {
            members,
            dims,
            weights: weights.as_slice().to_vec(),
            tie_key: RngKey::new(options.tie_seed, 0, 0, 0, StreamRole::Auxiliary),
            options,
            leads,
            cells,
            cases: 0,
            tie_draws: 0,
        })
    }

    fn tie_uniform(&mut self) -> f64 {
        let d = self.tie_draws;
        self.tie_draws += 1;
        let key = self.tie_key.with_step((d >> 34) as u32);
        uniform_block(&key, (d >> 2) as u32)[(d & 3) as usize]
    }

    /// Adds one forecast case: `forecasts[m][t]` and `truth[t]` are
    /// `(V, H, W)` states; `deterministic[t]` is optional.
    pub fn add(&mut self, forecasts: &[Vec<Vec<f32>>], truth: &[Vec<f32>], deterministic: Option<&[Vec<f32>]>) -> Result<()> {
        let (nv, h, w) = self.dims;
        let pts = h * w;
        if forecasts.len() != self.members || truth.len() != self.leads {
            return Err(Error::Shape {
                op: "ensemble_metrics",
                expected: format!("{} members × {} leads", self.members, self.leads),
                found: format!("{} members, {} truth leads", forecasts.len(), truth.len()),
            });
        }
        let bad = |s: &[f32]| s.len() != nv * pts;
        if truth.iter().any(|s| bad(s))
            || forecasts.iter().any(|m| m.len() != self.leads || m.iter().any(|s| bad(s)))
            || deterministic.is_some_and(|d| d.len() != self.leads || d.iter().any(|s| bad(s)))
        {
            return Err(Error::Shape {
                op: "ensemble_metrics",
                expected: format!("states of {} values", nv * pts),
                found: "mismatched state".into(),
            });
        }
        let m = self.members;
        let mf = m as f64;
        let mut x = vec![0.0; m];
        for t in 0..self.leads {
            for v in 0..nv {
                let ci = v * self.leads + t;
                let mut cell = std::mem::take(&mut self.cells[ci]);
                for p in 0..pts {
                    let (row, col) = (p / w, p % w);
                    let wr = self.weights[row];
                    let idx = v * pts + p;
                    let y = truth[t][idx] as f64;
                    for (j, xj) in x.iter_mut().enumerate() {
                        *xj = forecasts[j][t][idx] as f64;
                    }
                    let mean = x.iter().sum::<f64>() / mf;
                    let var = x.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (mf - 1.0);
                    cell.w_sum += wr;
                    cell.sq_mean_err += wr * (mean - y).powi(2);
                    cell.var_sum += wr * var;
                    cell.crps_sum += wr * afcrps(&x, y, self.options.alpha_loss)?;
                    if let Some(d) = deterministic {
                        cell.has_det = true;
                        cell.sq_det_err += wr * (d[t][idx] as f64 - y).powi(2);
                    }
                    let s = self.options.rank_stride;
                    if row % s == 0 && col % s == 0 {
                        let below = x.iter().filter(|&&a| a < y).count();
                        let ties = x.iter().filter(|&&a| a == y).count();
                        let r = if ties == 0 {
                            below
                        } else {
                            let u = self.tie_uniform();
                            below + ((u * (ties + 1) as f64) as usize).min(ties)
                        };
                        cell.ranks[r] += 1;
                    }
                }
                self.cells[ci] = cell;
            }
        }
        self.cases += 1;
        Ok(())
    }

    pub fn report(&self, variables: &[String]) -> Result<VerificationReport> {
        let (nv, _, _) = self.dims;
        let mut cells = Vec::with_capacity(nv * self.leads);
        for v in 0..nv {
            for t in 0..self.leads {
                let c = &self.cells[v * self.leads + t];
                let n = c.w_sum.max(f64::MIN_POSITIVE);
                let rmse = (c.sq_mean_err / n).sqrt();
                let mut spread = (c.var_sum / n).sqrt();
                if self.options.ssr_correction {
                    spread *= ((self.members + 1) as f64 / self.members as f64).sqrt();
                }
                let ssr = if rmse > 0.0 {
                    Some(spread / rmse)
                } else if spread > 0.0 {
                    return Err(invalid(format!(
                        "spread-skill ratio undefined for variable {v} lead {}: zero ensemble-mean error",
                        t + 1
                    )));
                } else {
                    None
                };
                cells.push(CellMetrics {
                    variable: variables.get(v).cloned().unwrap_or_else(|| format!("var{v}")),
                    lead: t + 1,
                    rmse_det: c.has_det.then(|| (c.sq_det_err / n).sqrt()),
                    rmse_ens_mean: rmse,
                    crps: c.crps_sum / n,
                    spread,
                    ssr,
                    rank_p_value: chi_square_uniform(&c.ranks),
                    rank_histogram: c.ranks.clone(),
                    samples: c.ranks.iter().sum(),
                });
            }
        }
        Ok(VerificationReport {
            members: self.members,
            cases: self.cases,
            cells,
        })
    }
}

/// Chi-square goodness-of-fit p-value of counts against a flat histogram.
pub fn chi_square_uniform(counts: &[u64]) -> f64 {
    let n: u64 = counts.iter().sum();
    if n == 0 || counts.len() < 2 {
        return 1.0;
    }
    let e = n as f64 / counts.len() as f64;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
    ChiSquared::new((counts.len() - 1) as f64)
        .map(|d| d.sf(stat))
        .unwrap_or(f64::NAN)
}

/// Scores of one `(variable, lead)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMetrics {
    pub variable: String,
    pub lead: usize,
    pub rmse_det: Option<f64>,
    pub rmse_ens_mean: f64,
    pub crps: f64,
    pub spread: f64,
    pub ssr: Option<f64>,
    pub rank_histogram: Vec<u64>,
    pub rank_p_value: f64,
    /// Points entering the rank histogram.
    pub samples: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub members: usize,
    pub cases: usize,
    pub cells: Vec<CellMetrics>,
}

impl VerificationReport {
    pub fn cell(&self, variable: &str, lead: usize) -> Option<&CellMetrics> {
        self.cells.iter().find(|c| c.variable == variable && c.lead == lead)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One `variable,lead,metric,value` row per scalar metric.
    pub fn to_table(&self) -> String {
        let mut out = String::from("variable,lead,metric,value\n");
        for c in &self.cells {
            let mut row = |k: &str, v: f64| out.push_str(&format!("{},{},{k},{v}\n", c.variable, c.lead));
            if let Some(d) = c.rmse_det {
                row("rmse_det", d);
            }
            row("rmse_ens_mean", c.rmse_ens_mean);
            row("crps", c.crps);
            row("spread", c.spread);
            if let Some(s) = c.ssr {
                row("ssr", s);
            }
            row("rank_p_value", c.rank_p_value);
        }
        out
    }
}

/// Scores of one forecast case; see [`MetricsAccumulator::add`].
pub fn ensemble_metrics(
    forecasts: &[Vec<Vec<f32>>],
    truth: &[Vec<f32>],
    dims: (usize, usize, usize),
    weights: &SpatialWeights,
    options: MetricOptions,
    variables: &[String],
) -> Result<VerificationReport> {
    let mut acc = MetricsAccumulator::new(forecasts.len(), truth.len(), dims, weights, options)?;
    acc.add(forecasts, truth, None)?;
    acc.report(variables)
}

/// Bin counts of the truth's rank among the members, ties split uniformly.
pub fn rank_histogram(forecasts: &[Vec<f32>], truth: &[f32], tie_seed: u64) -> Result<Vec<u64>> {
    let m = forecasts.len();
    if m == 0 || forecasts.iter().any(|f| f.len() != truth.len()) {
        return Err(invalid("rank histogram needs members shaped like the truth"));
    }
    let key = RngKey::new(tie_seed, 0, 0, 0, StreamRole::Auxiliary);
    let mut counts = vec![0u64; m + 1];
    let mut draws = 0u64;
    for (p, &y) in truth.iter().enumerate() {
        let below = forecasts.iter().filter(|f| f[p] < y).count();
        let ties = forecasts.iter().filter(|f| f[p] == y).count();
        let r = if ties == 0 {
            below
        } else {
            let u = uniform_block(&key.with_step((draws >> 34) as u32), (draws >> 2) as u32)[(draws & 3) as usize];
            draws += 1;
            below + ((u * (ties + 1) as f64) as usize).min(ties)
        };
        counts[r] += 1;
    }
    Ok(counts)
}

/// Response of one member to varying a single level's scale.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelAttribution {
    pub value: f64,
    /// Physical anomaly relative to `β = (1, 1, 1)`, per lead.
    pub anomalies: Vec<Vec<f32>>,
    /// KE spectrum of each anomaly's vorticity.
    pub spectra: Vec<Spectrum>,
}

/// Member-0 anomalies when `β_level` takes each of `values` with the other
/// scales held at one.
pub fn beta_layer_attribution(
    model: &ModelState,
    archive: &LatentArchive,
    level: u8,
    values: &[f64],
) -> Result<Vec<LevelAttribution>> {
    if !(1..=3).contains(&level) {
        return Err(invalid(format!("level {level} outside 1..=3")));
    }
    let n = model.config.grid;
    let base = replay_member(archive, model, 0, Some([1.0; 3]))?;
    values
        .iter()
        .map(|&value| {
            let mut beta = [1.0; 3];
            beta[(level - 1) as usize] = value;
            let run = replay_member(archive, model, 0, Some(beta))?;
            let anomalies: Vec<Vec<f32>> = run
                .states
                .iter()
                .zip(&base.states)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect())
                .collect();
            let spectra = anomalies
                .iter()
                .map(|a| vorticity_spectrum(a, n))
                .collect::<Result<Vec<_>>>()?;
            Ok(LevelAttribution {
                value,
                anomalies,
                spectra,
            })
        })
        .collect()
}
