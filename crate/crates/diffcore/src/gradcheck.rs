//! Central finite-difference gradient checks.
//!
//! The numeric side never touches the backward pass: it re-evaluates the
//! forward graph with one input element nudged by `±step`.

use crate::graph::{Graph, OpKind, Var};
use crate::rng::{gaussian_stream, RngKey, StreamRole};
use crate::tensor::Tensor;
use crate::Result;

pub const STEP: f64 = 1e-4;

/// `‖a − b‖ / max(‖a‖, ‖b‖)` over the concatenation of all inputs' gradients.
pub fn relative_error(analytic: &[Vec<f64>], numeric: &[Vec<f64>]) -> f64 {
    let mut diff = 0.0;
    let mut na = 0.0;
    let mut nn = 0.0;
    for (a, n) in analytic.iter().zip(numeric) {
        for (x, y) in a.iter().zip(n) {
            diff += (x - y) * (x - y);
            na += x * x;
            nn += y * y;
        }
    }
    let denom = na.sqrt().max(nn.sqrt());
    if denom < 1e-300 {
        diff.sqrt()
    } else {
        diff.sqrt() / denom
    }
}

/// Analytic gradients of `f` via one backward pass.
pub fn analytic_grads<F>(inputs: &[Tensor<f64>], f: &F) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = f(&mut g, &vars)?;
    g.backward(loss)?;
    Ok(vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| {
            g.grad(*v)
                .map(|t| t.into_data())
                .unwrap_or_else(|| vec![0.0; t.numel()])
        })
        .collect())
}

/// Central-difference gradients of `f` with respect to every input element.
pub fn numeric_grads<F>(inputs: &[Tensor<f64>], f: &F, step: f64) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let eval = |ins: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ins.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).data()[0])
    };
    let mut work = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let mut gi = vec![0.0; inputs[i].numel()];
        for (k, slot) in gi.iter_mut().enumerate() {
            let orig = inputs[i].data()[k];
            work[i].data_mut()[k] = orig + step;
            let up = eval(&work)?;
            work[i].data_mut()[k] = orig - step;
            let down = eval(&work)?;
            work[i].data_mut()[k] = orig;
            *slot = (up - down) / (2.0 * step);
        }
        out.push(gi);
    }
    Ok(out)
}

/// Relative error between analytic and central-difference gradients.
pub fn check<F>(inputs: &[Tensor<f64>], f: F) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let a = analytic_grads(inputs, &f)?;
    let n = numeric_grads(inputs, &f, STEP)?;
    Ok(relative_error(&a, &n))
}

fn randn(shape: &[usize], seed: u64, stream: u32) -> Tensor<f64> {
    let n = shape.iter().product();
    let key = RngKey::new(seed, stream, 0, 0, StreamRole::Auxiliary);
    Tensor::from_vec(shape, gaussian_stream(&key, n)).expect("shape")
}

/// Standard normals pushed away from zero so `|x|` has no kink within `STEP`.
fn randn_off_zero(shape: &[usize], seed: u64, stream: u32) -> Tensor<f64> {
    randn(shape, seed, stream).map(|v| if v.abs() < 0.05 { v.signum() * 0.05 + v } else { v })
}

/// Contracts a tensor output with a fixed random projection so every output
/// element contributes to the scalar loss.
fn project(g: &mut Graph<f64>, out: Var, seed: u64) -> Result<Var> {
    if g.value(out).numel() == 1 {
        return Ok(out);
    }
    let shape = g.shape(out).to_vec();
    let r = g.constant(randn(&shape, seed ^ 0x5eed, 999));
    let prod = g.mul(out, r)?;
    g.sum(prod, None)
}

/// Worst relative gradient error of `kind` over `trials` random cases.
pub fn check_kind(kind: OpKind, trials: usize, seed: u64) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for t in 0..trials {
        let s = seed.wrapping_mul(1000).wrapping_add(t as u64);
        let err = check_kind_once(kind, s)?;
        worst = worst.max(err);
    }
    Ok(worst)
}

fn check_kind_once(kind: OpKind, s: u64) -> Result<f64> {
    let x4 = |c: usize, h: usize| randn(&[2, c, h, h], s, 1);
    match kind {
        OpKind::Conv3x3 => check(
            &[randn(&[4, 3, 8, 8], s, 1), randn(&[2, 3, 3, 3], s, 2), randn(&[2], s, 3)],
            |g, v| {
                let y = g.conv3x3(v[0], v[1], Some(v[2]))?;
                project(g, y, s)
            },
        ),
        OpKind::Pointwise => check(&[x4(3, 4), randn(&[5, 3], s, 2), randn(&[5], s, 3)], |g, v| {
            let y = g.pointwise(v[0], v[1], Some(v[2]))?;
            project(g, y, s)
        }),
        OpKind::AvgPool2 => check(&[x4(2, 4)], |g, v| {
            let y = g.avgpool2(v[0])?;
            project(g, y, s)
        }),
        OpKind::Upsample2 => check(&[x4(2, 3)], |g, v| {
            let y = g.upsample2(v[0])?;
            project(g, y, s)
        }),
        OpKind::Concat => check(&[x4(2, 4), randn(&[2, 3, 4, 4], s, 2)], |g, v| {
            let y = g.concat(v[0], v[1])?;
            project(g, y, s)
        }),
        OpKind::Add => check(&[x4(2, 4), randn(&[2, 2, 4, 4], s, 2)], |g, v| {
            let y = g.add(v[0], v[1])?;
            project(g, y, s)
        }),
        OpKind::Sub => check(&[x4(2, 4), randn(&[2, 2, 4, 4], s, 2)], |g, v| {
            let y = g.sub(v[0], v[1])?;
            project(g, y, s)
        }),
        OpKind::Mul => check(&[x4(2, 4), randn(&[2, 2, 4, 4], s, 2)], |g, v| {
            let y = g.mul(v[0], v[1])?;
            project(g, y, s)
        }),
        OpKind::Abs => check(&[randn_off_zero(&[2, 2, 4, 4], s, 1)], |g, v| {
            let y = g.abs(v[0]);
            project(g, y, s)
        }),
        OpKind::BroadcastMul => {
            let per_sample = check(&[x4(3, 4), randn(&[2, 3, 1, 1], s, 2)], |g, v| {
                let y = g.broadcast_mul(v[0], v[1])?;
                project(g, y, s)
            })?;
            let shared = check(&[x4(3, 4), randn(&[1, 3, 1, 1], s, 3)], |g, v| {
                let y = g.broadcast_mul(v[0], v[1])?;
                project(g, y, s)
            })?;
            let upsampled = check(&[x4(3, 4), randn(&[2, 3, 2, 2], s, 4)], |g, v| {
                let y = g.broadcast_mul(v[0], v[1])?;
                project(g, y, s)
            })?;
            Ok(per_sample.max(shared).max(upsampled))
        }
        OpKind::Gelu => check(&[x4(2, 4)], |g, v| {
            let y = g.gelu(v[0]);
            project(g, y, s)
        }),
        OpKind::Sum | OpKind::Mean => {
            let rows = randn(&[4], s, 7).map(f64::abs).into_data();
            let mean = kind == OpKind::Mean;
            check(&[x4(2, 4)], move |g, v| {
                let sq = g.mul(v[0], v[0])?;
                if mean {
                    g.mean(sq, Some(&rows))
                } else {
                    g.sum(sq, Some(&rows))
                }
            })
        }
        OpKind::Scale => check(&[x4(2, 4)], |g, v| {
            let y = g.scale(v[0], -1.7);
            project(g, y, s)
        }),
        OpKind::ScalarFn => check(&[x4(2, 2)], |g, v| {
            // f(x) = Σ sin(x) with its analytic local gradient cos(x)
            let xs = g.value(v[0]).data().to_vec();
            let val = xs.iter().map(|x| x.sin()).sum();
            let local = xs.iter().map(|x| x.cos()).collect();
            let f = g.scalar_fn(&[v[0]], val, vec![local])?;
            let sc = g.scale(f, 2.0);
            g.sum(sc, None)
        }),
    }
}
