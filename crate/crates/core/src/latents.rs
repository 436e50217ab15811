//! Latent archive: storage, replay, rescaling and interpolation of members.
//!
//! Payload layout after the JSON header: the `(V, H, W)` initial state as
//! f32, then for each member, step and level the `(H, W, d_z)` latent values
//! followed by the five words of that level's pixel-noise key.

use crate::container::{ContainerReader, ContainerWriter};
use crate::emulator::{run_member, EnsembleBatch, MemberNoise, MemberTrajectory, Mode, ModelConfig, ModelState};
use crate::error::{invalid, Error, Result};
use crate::sdl::{LatentSet, LatentTensor, LEVELS};
use diffcore::RngKey;
use serde::{Deserialize, Serialize};
use std::path::Path;

const ARCHIVE_MAGIC: &[u8; 4] = b"SDLA";
pub const ARCHIVE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveHeader {
    pub format_version: u32,
    /// Hex SHA-256 of the checkpoint that produced the members.
    pub model_checksum: String,
    pub config: ModelConfig,
    pub seed: u64,
    pub grid: usize,
    /// `(level, h, w)` of each stored latent.
    pub latent_grids: Vec<(u8, usize, usize)>,
    pub d_z: usize,
    pub members: usize,
    pub steps: usize,
    /// Scales applied when the members were generated.
    pub beta: [f64; 3],
    pub mode: Mode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentArchive {
    pub header: ArchiveHeader,
    /// Physical `(V, H, W)` initial condition.
    pub initial: Vec<f32>,
    /// Raw latents and keys, indexed `[member][step]`.
    pub noise: Vec<Vec<MemberNoise>>,
}

/// Per-level interpolation of pixel noise between two members.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoiseBlend {
    /// Keys of member i below `e = 0.5`, of member j from there on.
    #[default]
    Nearest,
    /// `R_e = (1 − e) R_i + e R_j`.
    Interpolate,
}

impl LatentArchive {
    pub fn from_batch(batch: &EnsembleBatch, model: &ModelState) -> Result<Self> {
        let cfg = &model.config;
        for m in &batch.members {
            if m.noise.len() != batch.spec.steps {
                return Err(invalid(format!(
                    "member {} has {} of {} latent records",
                    m.member,
                    m.noise.len(),
                    batch.spec.steps
                )));
            }
        }
        Ok(Self {
            header: ArchiveHeader {
                format_version: ARCHIVE_VERSION,
                model_checksum: model.checksum()?,
                config: cfg.clone(),
                seed: batch.spec.seed,
                grid: cfg.grid,
                latent_grids: cfg.latent_grids(),
                d_z: cfg.d_z,
                members: batch.members.len(),
                steps: batch.spec.steps,
                beta: batch.spec.beta,
                mode: batch.spec.mode,
            },
            initial: batch.initial.clone(),
            noise: batch.members.iter().map(|m| m.noise.clone()).collect(),
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let header = serde_json::to_string(&self.header)?;
        let mut w = ContainerWriter::create(path, ARCHIVE_MAGIC, ARCHIVE_VERSION, &header)?;
        w.write_f32s(&self.initial)?;
        for member in &self.noise {
            for step in member {
                for (i, &(level, _, _)) in self.header.latent_grids.iter().enumerate() {
                    let z = step
                        .latents
                        .level(level)
                        .ok_or_else(|| invalid(format!("missing level {level} latent")))?;
                    w.write_f32s(&z.values)?;
                    w.write_u64s(&step.keys_r[i].to_words())?;
                }
            }
        }
        w.finish()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut r = ContainerReader::open(path, ARCHIVE_MAGIC, ARCHIVE_VERSION)?;
        let header: ArchiveHeader = serde_json::from_str(&r.header)?;
        if header.latent_grids.len() != LEVELS.len() {
            return Err(Error::Format(format!("{} latent levels", header.latent_grids.len())));
        }
        let initial = r.read_f32s(header.config.state_len())?;
        let mut noise = Vec::with_capacity(header.members);
        for _ in 0..header.members {
            let mut steps = Vec::with_capacity(header.steps);
            for _ in 0..header.steps {
                let mut levels = Vec::with_capacity(3);
                let mut keys = Vec::with_capacity(3);
                for &(level, h, w) in &header.latent_grids {
                    let values = r.read_f32s(h * w * header.d_z)?;
                    levels.push(LatentTensor::new(level, h, w, header.d_z, values)?);
                    let words: [u64; 5] = r.read_u64s(5)?.try_into().expect("five words");
                    keys.push(RngKey::from_words(words).ok_or_else(|| Error::Format("bad rng key".into()))?);
                }
                steps.push(MemberNoise {
                    latents: LatentSet::new(levels),
                    keys_r: [keys[0], keys[1], keys[2]],
                    r_blend: None,
                });
            }
            noise.push(steps);
        }
        r.finish()?;
        Ok(Self { header, initial, noise })
    }

    fn check_model(&self, model: &ModelState) -> Result<()> {
        let sum = model.checksum()?;
        if sum != self.header.model_checksum {
            return Err(Error::ModelChecksum {
                archive: self.header.model_checksum.clone(),
                checkpoint: sum,
            });
        }
        Ok(())
    }

    fn member(&self, member: usize) -> Result<&[MemberNoise]> {
        self.noise.get(member).map(|v| v.as_slice()).ok_or(Error::OutOfRange {
            what: "member",
            index: member,
            len: self.noise.len(),
        })
    }
}

/// Archive of a finished rollout.
pub fn archive_write(batch: &EnsembleBatch, model: &ModelState, path: &Path) -> Result<LatentArchive> {
    let a = LatentArchive::from_batch(batch, model)?;
    a.write(path)?;
    Ok(a)
}

/// Regenerates one member; `beta_override` replaces the generation scales.
pub fn replay_member(
    archive: &LatentArchive,
    model: &ModelState,
    member: usize,
    beta_override: Option<[f64; 3]>,
) -> Result<MemberTrajectory> {
    archive.check_model(model)?;
    let noise = archive.member(member)?.to_vec();
    let beta = beta_override.unwrap_or(archive.header.beta);
    run_member(model, &archive.initial, member as u32, noise, beta, archive.header.mode)
}

/// Every member regenerated with scales `beta`.
pub fn rescale_ensemble(archive: &LatentArchive, model: &ModelState, beta: [f64; 3]) -> Result<Vec<MemberTrajectory>> {
    use rayon::prelude::*;
    archive.check_model(model)?;
    (0..archive.noise.len())
        .into_par_iter()
        .map(|m| replay_member(archive, model, m, Some(beta)))
        .collect()
}

/// Latents `(1 − e) Z_i + e Z_j` at every step and level.
pub fn interpolate_latents(a: &LatentSet, b: &LatentSet, e: f64) -> Result<LatentSet> {
    if !(0.0..=1.0).contains(&e) {
        return Err(invalid(format!("interpolation parameter {e} outside [0, 1]")));
    }
    let (wa, wb) = ((1.0 - e) as f32, e as f32);
    let levels = a
        .levels
        .iter()
        .map(|za| {
            let zb = b
                .level(za.level)
                .filter(|zb| zb.values.len() == za.values.len())
                .ok_or_else(|| invalid(format!("level {} latents differ in shape", za.level)))?;
            Ok(LatentTensor {
                values: za.values.iter().zip(&zb.values).map(|(x, y)| wa * x + wb * y).collect(),
                ..za.clone()
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LatentSet { levels, beta: a.beta })
}

/// Trajectory driven by latents interpolated between members `i` and `j`.
pub fn interpolate_members(
    archive: &LatentArchive,
    model: &ModelState,
    i: usize,
    j: usize,
    e: f64,
    blend: NoiseBlend,
) -> Result<MemberTrajectory> {
    archive.check_model(model)?;
    let (ni, nj) = (archive.member(i)?, archive.member(j)?);
    let noise = ni
        .iter()
        .zip(nj)
        .map(|(a, b)| {
            let latents = interpolate_latents(&a.latents, &b.latents, e)?;
            Ok(match blend {
                NoiseBlend::Nearest => MemberNoise {
                    latents,
                    keys_r: if e < 0.5 { a.keys_r } else { b.keys_r },
                    r_blend: None,
                },
                NoiseBlend::Interpolate => MemberNoise {
                    latents,
                    keys_r: a.keys_r,
                    r_blend: Some((b.keys_r, e as f32)),
                },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    run_member(model, &archive.initial, i as u32, noise, archive.header.beta, archive.header.mode)
}

/// Raw payload bytes of an archive with the given shape, excluding header
/// and framing.
pub fn payload_bytes(config: &ModelConfig, members: usize, steps: usize) -> usize {
    config.state_len() * 4 + members * steps * (config.latent_bytes_per_step() + LEVELS.len() * 40)
}
