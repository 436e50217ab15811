//! Training objectives: row-weighted MSE and the almost-fair CRPS.

use crate::error::{invalid, Error, Result};
use diffcore::Scalar;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub alpha_loss: f64,
    pub members: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha_loss: 0.95,
            members: 10,
        }
    }
}

impl LossConfig {
    pub fn epsilon(&self) -> f64 {
        (1.0 - self.alpha_loss) / self.members as f64
    }
}

/// Per-row weights with `Σ w = N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialWeights {
    w: Vec<f64>,
}

impl SpatialWeights {
    pub fn uniform(rows: usize) -> Self {
        Self { w: vec![1.0; rows] }
    }

    /// Rescales non-negative weights to sum to their count.
    pub fn normalized(raw: &[f64]) -> Result<Self> {
        if raw.is_empty() || raw.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(invalid("weights must be finite and non-negative"));
        }
        let s: f64 = raw.iter().sum();
        if s <= 0.0 {
            return Err(invalid("weights sum to zero"));
        }
        let n = raw.len() as f64;
        Ok(Self {
            w: raw.iter().map(|v| v * n / s).collect(),
        })
    }

    /// Weights used as given (tests and special cases such as `(2, 0)`).
    pub fn raw(w: Vec<f64>) -> Self {
        Self { w }
    }

    pub fn rows(&self) -> usize {
        self.w.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.w
    }

    pub fn cast<T: Scalar>(&self) -> Vec<T> {
        self.w.iter().map(|&v| T::lit(v)).collect()
    }
}

/// `w_j = N cos φ_j / Σ cos φ_k` for latitudes in degrees.
pub fn cosine_weights(latitudes_deg: &[f64]) -> Result<SpatialWeights> {
    if latitudes_deg.iter().any(|p| !(p.abs() < 90.0)) {
        return Err(invalid("latitudes must lie strictly between the poles"));
    }
    let c: Vec<f64> = latitudes_deg.iter().map(|p| p.to_radians().cos()).collect();
    SpatialWeights::normalized(&c)
}

fn check_alpha(alpha_loss: f64) -> Result<()> {
    if !(alpha_loss > 0.0 && alpha_loss <= 1.0) {
        return Err(invalid(format!("alpha_loss {alpha_loss} outside (0, 1]")));
    }
    Ok(())
}

/// Coefficient `(1 − ε) / (2M(M − 1))` of the spread term; 0 when `M = 1`.
fn spread_coef(m: usize, alpha_loss: f64) -> f64 {
    if m < 2 {
        return 0.0;
    }
    let mf = m as f64;
    let eps = (1.0 - alpha_loss) / mf;
    (1.0 - eps) / (2.0 * mf * (mf - 1.0))
}

/// Almost-fair CRPS of an ensemble against one observation.
///
/// `(1/M) Σ_j |x_j − y| − (1 − ε)/(2M(M−1)) Σ_j Σ_k |x_j − x_k|`, with the
/// double sum over ordered pairs and `ε = (1 − α)/M`.
pub fn afcrps(x: &[f64], y: f64, alpha_loss: f64) -> Result<f64> {
    check_alpha(alpha_loss)?;
    if x.is_empty() {
        return Err(invalid("afcrps needs at least one member"));
    }
    let m = x.len();
    let skill = x.iter().map(|v| (v - y).abs()).sum::<f64>() / m as f64;
    Ok(skill - spread_coef(m, alpha_loss) * pair_sum(x))
}

/// `Σ_j Σ_k |x_j − x_k|` over ordered pairs, in O(M log M).
fn pair_sum(x: &[f64]) -> f64 {
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() as f64;
    // each sorted value contributes (2i − (M − 1)) times itself, doubled for order
    2.0 * s
        .iter()
        .enumerate()
        .map(|(i, v)| (2.0 * i as f64 - (m - 1.0)) * v)
        .sum::<f64>()
}

/// `afcrps` and its gradient with respect to each member, with `d|0| = 0`.
pub fn afcrps_grad(x: &[f64], y: f64, alpha_loss: f64) -> Result<(f64, Vec<f64>)> {
    let v = afcrps(x, y, alpha_loss)?;
    let m = x.len();
    let c = 2.0 * spread_coef(m, alpha_loss);
    let g = x
        .iter()
        .map(|&xj| {
            let pairs: f64 = x.iter().map(|&xk| sign0(xj - xk)).sum();
            sign0(xj - y) / m as f64 - c * pairs
        })
        .collect();
    Ok((v, g))
}

#[inline]
fn sign0(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Field afCRPS: pointwise scores over `(V, H, W)` averaged with row
/// weights, for `ens` laid out `(M, V, H, W)`. Returns the value and the
/// gradient with respect to `ens`.
pub fn afcrps_field<T: Scalar>(
    ens: &[T],
    members: usize,
    target: &[T],
    dims: (usize, usize, usize),
    weights: &SpatialWeights,
    alpha_loss: f64,
) -> Result<(f64, Vec<T>)> {
    let (v, h, w) = dims;
    let pts = v * h * w;
    if members == 0 || ens.len() != members * pts || target.len() != pts || weights.rows() != h {
        return Err(Error::Shape {
            op: "afcrps_field",
            expected: format!("ens {members}×{pts}, target {pts}, {h} row weights"),
            found: format!("ens {}, target {}, {} row weights", ens.len(), target.len(), weights.rows()),
        });
    }
    check_alpha(alpha_loss)?;
    let mut total = 0.0;
    let mut grad = vec![T::zero(); ens.len()];
    let mut x = vec![0.0; members];
    let norm = 1.0 / pts as f64;
    for p in 0..pts {
        let row = (p / w) % h;
        let wr = weights.as_slice()[row];
        for (j, xj) in x.iter_mut().enumerate() {
            *xj = ens[j * pts + p].as_f64();
        }
        let (val, g) = afcrps_grad(&x, target[p].as_f64(), alpha_loss)?;
        total += wr * val;
        for (j, gj) in g.iter().enumerate() {
            grad[j * pts + p] = T::lit(wr * gj * norm);
        }
    }
    Ok((total * norm, grad))
}

/// Row-weighted mean squared error over same-shaped `(…, H, W)` fields.
pub fn weighted_mse<T: Scalar>(pred: &[T], target: &[T], w: usize, weights: &SpatialWeights) -> Result<f64> {
    let h = weights.rows();
    if pred.len() != target.len() || w == 0 || pred.len() % (h * w) != 0 {
        return Err(Error::Shape {
            op: "weighted_mse",
            expected: format!("equal lengths, multiple of {h}×{w}"),
            found: format!("{} and {}", pred.len(), target.len()),
        });
    }
    let s: f64 = pred
        .iter()
        .zip(target)
        .enumerate()
        .map(|(i, (a, b))| {
            let d = a.as_f64() - b.as_f64();
            weights.as_slice()[(i / w) % h] * d * d
        })
        .sum();
    Ok(s / pred.len() as f64)
}
