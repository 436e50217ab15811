//! Stochastic decomposition layer: `F_out = F_in + α · R ⊙ S ⊙ M`.
//!
//! `S = W z` is a bias-free per-location linear map of the latent, `R` is
//! per-pixel Gaussian noise regenerated from its key, and `M` is a learned
//! per-channel modulation. Latents carry a per-level scale `β` that is
//! applied to the evaluated perturbation, `P(βz) = β · P(z)`; for a linear,
//! bias-free `W` this is the same map as scaling `z` itself, and it keeps
//! rescaling exact in floating point.

use crate::error::{invalid, Error, Result};
use diffcore::{gaussian_stream, rng::fill_gaussian, Graph, RngKey, Scalar, StreamRole, Tensor, Var};
use serde::{Deserialize, Serialize};

pub const ALPHA: f64 = 0.235;
pub const LEVELS: [u8; 3] = [1, 2, 3];
const STYLE_INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LatentMode {
    /// `S` varies over the level grid: latents are `(H_ℓ, W_ℓ, d_z)`.
    #[default]
    Spatial,
    /// One latent vector per level; `S` is broadcast as `(B, C, 1, 1)`.
    Vector,
}

/// Grid of one injection level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelGrid {
    pub level: u8,
    /// Feature grid the layer acts on.
    pub h: usize,
    pub w: usize,
    pub channels: usize,
}

/// Raw standard-normal latent of one level, stored `(H, W, d_z)` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTensor {
    pub level: u8,
    pub h: usize,
    pub w: usize,
    pub d_z: usize,
    pub values: Vec<f32>,
}

impl LatentTensor {
    pub fn new(level: u8, h: usize, w: usize, d_z: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != h * w * d_z {
            return Err(Error::Shape {
                op: "latent",
                expected: format!("{h}×{w}×{d_z}"),
                found: format!("{} values", values.len()),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("level {level} latent")));
        }
        Ok(Self {
            level,
            h,
            w,
            d_z,
            values,
        })
    }

    pub fn zeros(level: u8, h: usize, w: usize, d_z: usize) -> Self {
        Self {
            level,
            h,
            w,
            d_z,
            values: vec![0.0; h * w * d_z],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Channel-first `(d_z, H, W)` copy for the convolution layout.
    pub fn channel_first<T: Scalar>(&self) -> Vec<T> {
        let hw = self.h * self.w;
        let mut out = vec![T::zero(); self.values.len()];
        for p in 0..hw {
            for c in 0..self.d_z {
                out[c * hw + p] = T::lit(self.values[p * self.d_z + c] as f64);
            }
        }
        out
    }

    pub fn negated(&self) -> Self {
        Self {
            values: self.values.iter().map(|v| -v).collect(),
            ..self.clone()
        }
    }
}

/// Latents of every level for one member and step, with per-level scales.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSet {
    pub levels: Vec<LatentTensor>,
    pub beta: [f64; 3],
}

impl LatentSet {
    pub fn new(levels: Vec<LatentTensor>) -> Self {
        Self { levels, beta: [1.0; 3] }
    }

    pub fn level(&self, level: u8) -> Option<&LatentTensor> {
        self.levels.iter().find(|z| z.level == level)
    }

    pub fn beta_of(&self, level: u8) -> f64 {
        self.beta[(level - 1) as usize]
    }

    /// Latent values as the network sees them: `β_ℓ · Z_ℓ`.
    pub fn effective(&self, level: u8) -> Option<Vec<f32>> {
        let b = self.beta_of(level) as f32;
        self.level(level).map(|z| z.values.iter().map(|v| b * v).collect())
    }
}

/// `{β_ℓ Z_ℓ}`; the input set is left untouched and scales compose.
pub fn apply_beta(latents: &LatentSet, beta: [f64; 3]) -> Result<LatentSet> {
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(invalid(format!("non-finite beta {beta:?}")));
    }
    let mut out = latents.clone();
    for (o, b) in out.beta.iter_mut().zip(beta) {
        *o *= b;
    }
    Ok(out)
}

/// Independent standard-normal latents for every level. `key.role` must be
/// `Latent`; each level draws from `key.with_layer(level)`.
pub fn sample_latents(key: &RngKey, grids: &[(u8, usize, usize)], d_z: usize) -> Result<LatentSet> {
    if key.role != StreamRole::Latent {
        return Err(invalid(format!("latent key has role {:?}", key.role)));
    }
    let mut levels = Vec::with_capacity(grids.len());
    for &(level, h, w) in grids {
        let mut values = vec![0f32; h * w * d_z];
        fill_gaussian(&key.with_layer(level as u32), &mut values);
        levels.push(LatentTensor {
            level,
            h,
            w,
            d_z,
            values,
        });
    }
    Ok(LatentSet::new(levels))
}

/// Pixel noise `R` of shape `(1, C, H, W)` for one member.
pub fn pixel_noise<T: Scalar>(key: &RngKey, c: usize, h: usize, w: usize) -> Tensor<T> {
    let mut data = vec![T::zero(); c * h * w];
    fill_gaussian(key, &mut data);
    Tensor::from_vec(&[1, c, h, w], data).expect("pixel noise shape")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdlLayer {
    pub level: u8,
    pub alpha: f64,
    pub mode: LatentMode,
    /// `(C, d_z)`, no bias.
    pub style: Vec<f32>,
    /// `(1, C, 1, 1)`.
    pub modulation: Vec<f32>,
    pub channels: usize,
    pub d_z: usize,
}

impl SdlLayer {
    /// `W ~ N(0, 0.02²)` from the init stream, `M = 1`.
    pub fn init(level: u8, channels: usize, d_z: usize, mode: LatentMode, seed: u64) -> Self {
        let key = RngKey::new(seed, 0, 100 + level as u32, 0, StreamRole::InitPerturbation);
        let style = gaussian_stream(&key, channels * d_z)
            .into_iter()
            .map(|v| (v * STYLE_INIT_STD) as f32)
            .collect();
        Self {
            level,
            alpha: ALPHA,
            mode,
            style,
            modulation: vec![1.0; channels],
            channels,
            d_z,
        }
    }
}

/// Evaluated pieces of one layer application.
#[derive(Debug, Clone, PartialEq)]
pub struct SdlPerturbationRecord {
    pub level: u8,
    /// `(B, C, H, W)`, or `(B, C, 1, 1)` in vector mode.
    pub style: Tensor<f32>,
    pub pixel_noise: Tensor<f32>,
    /// `β · α · R ⊙ S ⊙ M`, `(B, C, H, W)`.
    pub perturbation: Tensor<f32>,
    pub key_r: RngKey,
}

/// Graph form of the layer for a batch whose members each carry their own
/// latent and noise: `z` is `(B, d_z, h, w)` and `r` is `(B, C, H, W)`.
/// Returns `(output, perturbation)`.
#[allow(clippy::too_many_arguments)]
pub fn sdl_graph<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    z: Var,
    r: Var,
    style: Var,
    modulation: Var,
    alpha: f64,
    beta: f64,
) -> Result<(Var, Var)> {
    let s = g.pointwise(z, style, None)?;
    let rs = if g.shape(s) == g.shape(r) {
        g.mul(r, s)?
    } else {
        g.broadcast_mul(r, s)?
    };
    let rsm = g.broadcast_mul(rs, modulation)?;
    let mut p = g.scale(rsm, T::lit(alpha));
    if beta != 1.0 {
        p = g.scale(p, T::lit(beta));
    }
    let out = g.add(x, p)?;
    Ok((out, p))
}

/// Applies one layer to `features` `(B, C, H, W)` with a single latent and
/// `R = gaussian_stream(key_r, B·C·H·W)`. `beta` scales the perturbation.
pub fn sdl_forward(
    features: &Tensor<f32>,
    z: &LatentTensor,
    beta: f64,
    key_r: RngKey,
    layer: &SdlLayer,
) -> Result<(Tensor<f32>, SdlPerturbationRecord)> {
    let (b, c, h, w) = features.dims4().ok_or_else(|| invalid("features must be 4-D"))?;
    if z.level != layer.level {
        return Err(invalid(format!("latent level {} for layer {}", z.level, layer.level)));
    }
    if c != layer.channels || z.d_z != layer.d_z {
        return Err(Error::Shape {
            op: "sdl_forward",
            expected: format!("{} channels, d_z {}", layer.channels, layer.d_z),
            found: format!("{c} channels, d_z {}", z.d_z),
        });
    }
    let (zh, zw) = match layer.mode {
        LatentMode::Spatial => (h, w),
        LatentMode::Vector => (1, 1),
    };
    if (z.h, z.w) != (zh, zw) {
        return Err(Error::Shape {
            op: "sdl_forward",
            expected: format!("latent grid {zh}×{zw}"),
            found: format!("{}×{}", z.h, z.w),
        });
    }
    if z.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("level {} latent", z.level)));
    }
    let mut g = Graph::<f32>::new();
    let x = g.constant(features.clone());
    let zc = z.channel_first::<f32>();
    let zt: Vec<f32> = (0..b).flat_map(|_| zc.iter().copied()).collect();
    let zv = g.constant(Tensor::from_vec(&[b, z.d_z, zh, zw], zt)?);
    let mut noise = vec![0f32; b * c * h * w];
    fill_gaussian(&key_r, &mut noise);
    let rv = g.constant(Tensor::from_vec(&[b, c, h, w], noise)?);
    let sv = g.constant(Tensor::from_vec(&[c, layer.d_z], layer.style.clone())?);
    let mv = g.constant(Tensor::from_vec(&[1, c, 1, 1], layer.modulation.clone())?);
    let (out, p) = sdl_graph(&mut g, x, zv, rv, sv, mv, layer.alpha, beta)?;
    let style = g.pointwise(zv, sv, None)?;
    let record = SdlPerturbationRecord {
        level: layer.level,
        style: g.value(style).clone(),
        pixel_noise: g.value(rv).clone(),
        perturbation: g.value(p).clone(),
        key_r,
    };
    Ok((g.value(out).clone(), record))
}
