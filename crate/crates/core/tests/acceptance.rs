//! One PASS/FAIL line per acceptance criterion. The calibration, sweep and
//! attribution checks use the cached default pipeline (see
//! `sdl_core::pipeline`), running any missing stage first.
//!
//! Failures are reported, not raised; set `ACCEPTANCE_STRICT=1` to make any
//! FAIL line a nonzero exit.

use diffcore::gradcheck::{check_kind, relative_error};
use diffcore::rng::uniform_stream;
use diffcore::{gaussian_stream, OpKind, RngKey, StreamRole, Tensor};
use sdl_core::emulator::{forward_step, rollout, MemberNoise, Mode, ModelState, RolloutSpec};
use sdl_core::latents::{interpolate_members, replay_member, LatentArchive, NoiseBlend};
use sdl_core::losses::{afcrps, afcrps_grad, SpatialWeights};
use sdl_core::pipeline::{default_root, Pipeline, PipelineConfig, PipelineResults, Timings};
use sdl_core::sdl::{apply_beta, sdl_forward, LatentMode, LatentSet, LatentTensor, SdlLayer};
use sdl_core::synthgen::{Dataset, VARIABLES};
use sdl_core::trainer::{cost_ratio, full_scale_reported, full_scale_schedule, CostLedger};
use sdl_core::verify::{ke_spectrum, vorticity_spectrum, MetricOptions, MetricsAccumulator};
use std::time::Instant;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn uniforms(seed: u64, n: usize) -> impl FnMut() -> f64 {
    let u = uniform_stream(&RngKey::new(seed, 0, 0, 0, StreamRole::Auxiliary), n);
    let mut k = 0;
    move || {
        k += 1;
        u[k - 1]
    }
}

fn randn(n: usize, seed: u64, stream: u32) -> Vec<f32> {
    gaussian_stream(&RngKey::new(seed, stream, 0, 0, StreamRole::Auxiliary), n)
        .into_iter()
        .map(|v| v as f32)
        .collect()
}

fn brute_crps(x: &[f64], y: f64, alpha: f64) -> f64 {
    let m = x.len() as f64;
    let eps = (1.0 - alpha) / m;
    let skill = x.iter().map(|v| (v - y).abs()).sum::<f64>() / m;
    let mut pairs = 0.0;
    for a in x {
        for b in x {
            pairs += (a - b).abs();
        }
    }
    skill - (1.0 - eps) / (2.0 * m * (m - 1.0)) * pairs
}

fn crps_oracle() -> Outcome {
    let t0 = Instant::now();
    let mut next = uniforms(101, 10_000 * 14);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let m = 2 + (next() * 11.0) as usize;
        let x: Vec<f64> = (0..m).map(|_| next() * 10.0 - 5.0).collect();
        let y = next() * 10.0 - 5.0;
        let (a, b) = (afcrps(&x, y, 0.95).unwrap(), brute_crps(&x, y, 0.95));
        worst = worst.max((a - b).abs() / b.abs().max(f64::MIN_POSITIVE));
    }
    let secs = t0.elapsed().as_secs_f64();
    outcome(worst <= 1e-12 && secs < 5.0, format!("max rel err {worst:.1e} over 10^4 instances, {secs:.2}s"))
}

fn fair_limit() -> Outcome {
    let t0 = Instant::now();
    let (trials, m) = (10_000, 100);
    let z = gaussian_stream(&RngKey::new(102, 0, 0, 0, StreamRole::Auxiliary), trials * (m + 1));
    let s: Vec<f64> = z.chunks_exact(m + 1).map(|c| afcrps(&c[..m], c[m], 1.0).unwrap()).collect();
    let mean = s.iter().sum::<f64>() / trials as f64;
    let se = (s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (trials - 1) as f64 / trials as f64).sqrt();
    // CRPS of N(0,1) averaged over y ~ N(0,1)
    let exact = 1.0 / std::f64::consts::PI.sqrt();
    let secs = t0.elapsed().as_secs_f64();
    let dev = (mean - exact).abs() / se;
    outcome(dev < 3.0 && secs < 30.0, format!("mean {mean:.5} vs {exact:.5} ({dev:.2} se), {secs:.2}s"))
}

fn degeneracy() -> Outcome {
    let mut worst_fair: f64 = 0.0;
    let mut worst_af: f64 = 0.0;
    let mut next = uniforms(103, 2000);
    for _ in 0..1000 {
        let y = next() * 10.0 - 5.0;
        let d = next() * 10.0 - 5.0;
        worst_fair = worst_fair.max(afcrps(&[y, y + d], y, 1.0).unwrap().abs());
        worst_af = worst_af.max((afcrps(&[y, y + d], y, 0.95).unwrap() - 0.0125 * d.abs()).abs());
    }
    outcome(
        worst_fair < 1e-12 && worst_af < 1e-12,
        format!("max |fair| {worst_fair:.1e}, max |afCRPS - 0.0125|d|| {worst_af:.1e}"),
    )
}

fn gradients() -> Outcome {
    let t0 = Instant::now();
    let mut worst: Vec<String> = Vec::new();
    let mut pass = true;
    for kind in OpKind::ALL {
        let err = check_kind(kind, 20, 104).unwrap();
        pass &= err < 1e-5;
        if err >= 1e-5 {
            worst.push(format!("{kind:?} {err:.1e}"));
        }
    }
    let z = gaussian_stream(&RngKey::new(105, 0, 0, 0, StreamRole::Auxiliary), 20 * 9);
    let mut crps_err: f64 = 0.0;
    for c in z.chunks_exact(9) {
        let (x, y) = (&c[..8], c[8]);
        let (_, g) = afcrps_grad(x, y, 0.95).unwrap();
        let h = 1e-6;
        let fd: Vec<f64> = (0..x.len())
            .map(|j| {
                let (mut xp, mut xm) = (x.to_vec(), x.to_vec());
                xp[j] += h;
                xm[j] -= h;
                (afcrps(&xp, y, 0.95).unwrap() - afcrps(&xm, y, 0.95).unwrap()) / (2.0 * h)
            })
            .collect();
        crps_err = crps_err.max(relative_error(&[g], &[fd]));
    }
    pass &= crps_err < 1e-5;
    let secs = t0.elapsed().as_secs_f64();
    outcome(
        pass && secs < 120.0,
        format!(
            "{} op kinds and afcrps, worst afcrps rel err {crps_err:.1e}{}, {secs:.1}s",
            OpKind::ALL.len(),
            if worst.is_empty() { String::new() } else { format!("; failing {}", worst.join(", ")) }
        ),
    )
}

struct LayerCase {
    features: Tensor<f32>,
    z: LatentTensor,
    layer: SdlLayer,
    key: RngKey,
}

fn layer_case(seed: u64) -> LayerCase {
    let mut next = uniforms(seed, 8);
    let b = 1 + (next() * 3.0) as usize;
    let c = 1 + (next() * 12.0) as usize;
    let h = 2 + (next() * 10.0) as usize;
    let w = 2 + (next() * 10.0) as usize;
    let d_z = 1 + (next() * 8.0) as usize;
    let mode = if next() < 0.3 { LatentMode::Vector } else { LatentMode::Spatial };
    let (zh, zw) = if mode == LatentMode::Vector { (1, 1) } else { (h, w) };
    let mut layer = SdlLayer::init(1, c, d_z, mode, seed);
    layer.style = randn(c * d_z, seed, 1);
    layer.modulation = randn(c, seed, 2);
    LayerCase {
        features: Tensor::from_vec(&[b, c, h, w], randn(b * c * h * w, seed, 3)).unwrap(),
        z: LatentTensor::new(1, zh, zw, d_z, randn(zh * zw * d_z, seed, 4)).unwrap(),
        layer,
        key: RngKey::new(seed, 0, 1, 0, StreamRole::PixelNoise),
    }
}

fn identity_collapses() -> Outcome {
    let mut bad = 0;
    for seed in 0..100 {
        let c = layer_case(1000 + seed);
        let mut a0 = c.layer.clone();
        a0.alpha = 0.0;
        let mut m0 = c.layer.clone();
        m0.modulation.iter_mut().for_each(|m| *m = 0.0);
        let z0 = LatentTensor::zeros(1, c.z.h, c.z.w, c.z.d_z);
        for (z, layer) in [(&c.z, &a0), (&z0, &c.layer), (&c.z, &m0)] {
            let (out, _) = sdl_forward(&c.features, z, 1.0, c.key, layer).unwrap();
            if out.data() != c.features.data() {
                bad += 1;
            }
        }
    }
    outcome(bad == 0, format!("{bad} of 300 collapses differ from the input"))
}

struct Trained {
    model: ModelState,
    data: Dataset,
    pipeline: Pipeline,
    results: PipelineResults,
}

fn ensemble_spec(seed: u64) -> RolloutSpec {
    RolloutSpec {
        steps: 20,
        members: 10,
        beta: [1.0; 3],
        seed,
        mode: Mode::Stochastic,
    }
}

fn replay_exact(t: &Trained) -> Outcome {
    let r = t.pipeline.test_cases(&t.data)[0];
    let batch = rollout(&t.model, t.data.state(r), ensemble_spec(106)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.sdla");
    sdl_core::latents::archive_write(&batch, &t.model, &path).unwrap();
    let archive = LatentArchive::read(&path).unwrap();
    let mut max_abs: f32 = 0.0;
    for (k, m) in batch.members.iter().enumerate() {
        let again = replay_member(&archive, &t.model, k, None).unwrap();
        for (a, b) in again.states.iter().zip(&m.states) {
            for (x, y) in a.iter().zip(b) {
                max_abs = max_abs.max((x - y).abs());
            }
        }
        if again.states.len() != m.states.len() {
            max_abs = f32::INFINITY;
        }
    }
    outcome(max_abs == 0.0, format!("max abs difference {max_abs:e} over 10 members x 20 steps"))
}

/// Each level is driven alone (scale 0 elsewhere) so that the features it
/// sees are the same under every latent.
fn antisymmetry(t: &Trained) -> Outcome {
    let cases = t.pipeline.test_cases(&t.data);
    let mut next = uniforms(107, 200);
    let mut bad = Vec::new();
    let mut levels = 0;
    for trial in 0..100u32 {
        let r = cases[(next() * cases.len() as f64) as usize % cases.len()];
        let x = t.model.norm.normalize(t.data.state(r));
        let noise = MemberNoise::draw(&t.model.config, 5000 + trial as u64, 0, trial).unwrap();
        let beta = next() * 6.0 - 3.0;
        for level in 1..=3u8 {
            let mut only = [0.0; 3];
            only[level as usize - 1] = 1.0;
            let run = |latents: LatentSet| {
                let n = MemberNoise {
                    latents,
                    ..noise.clone()
                };
                let s = forward_step(&t.model, &x, Some(&n), Mode::Stochastic, 0, true).unwrap();
                s.perturbations.into_iter().find(|(l, _)| *l == level).unwrap().1
            };
            let neg = LatentSet {
                levels: noise.latents.levels.iter().map(|z| z.negated()).collect(),
                beta: noise.latents.beta,
            };
            let p = run(apply_beta(&noise.latents, only).unwrap());
            let pn = run(apply_beta(&neg, only).unwrap());
            let pb = run(apply_beta(&noise.latents, only.map(|o| o * beta)).unwrap());
            levels += 1;
            let neg_ok = p.data().iter().zip(pn.data()).all(|(u, v)| *v == -*u);
            let lin_ok = p.data().iter().zip(pb.data()).all(|(u, v)| *v == beta as f32 * *u);
            let nonzero = p.data().iter().any(|u| *u != 0.0);
            if !(neg_ok && lin_ok && nonzero) {
                bad.push(format!("trial {trial} level {level} (neg {neg_ok}, lin {lin_ok}, nonzero {nonzero})"));
            }
        }
    }
    outcome(
        bad.is_empty() && levels == 300,
        if bad.is_empty() { format!("{levels} level perturbations exact") } else { bad.join(", ") },
    )
}

fn ledger() -> Outcome {
    let (base, fine) = full_scale_reported();
    let r = cost_ratio(&base, &fine, 2.0).unwrap();
    let (phases, ft) = full_scale_schedule();
    let sched = CostLedger::from_phases(&phases);
    let sched_fine = CostLedger::from_phases(&[ft]);
    let pass = base.total_forward() == 12_410_560
        && fine.total_forward() == 200_000
        && format!("{:.2}%", 100.0 * r) == "1.61%"
        && format!("{:.3}%", 100.0 * r) == "1.612%"
        && sched_fine.total_forward() == 200_000;
    outcome(
        pass,
        format!(
            "{} / {} / {:.2}% ({:.3}%) (schedule arithmetic gives phase 1 = {}, total {})",
            base.total_forward(),
            fine.total_forward(),
            100.0 * r,
            100.0 * r,
            phases[0].forward_passes(),
            sched.total_forward()
        ),
    )
}

fn calibration(t: &Trained) -> Outcome {
    let rep = &t.results.report;
    let mut worst = (f64::NAN, String::new());
    let mut pass = true;
    for v in VARIABLES {
        for lead in 5..=20 {
            let ssr = rep.cell(v, lead).and_then(|c| c.ssr).unwrap_or(f64::NAN);
            let ok = (0.7..=1.3).contains(&ssr);
            pass &= ok;
            let dist = (ssr - 1.0).abs();
            if !(dist <= (worst.0 - 1.0).abs()) {
                worst = (ssr, format!("{v} lead {lead}"));
            }
        }
    }
    let p: Vec<String> = VARIABLES
        .iter()
        .map(|v| {
            let p = rep.cell(v, 20).map_or(f64::NAN, |c| c.rank_p_value);
            pass &= p > 0.001;
            format!("{v} {p:.2e}")
        })
        .collect();
    let timings: Timings = std::fs::read_to_string(t.pipeline.path("timings.json"))
        .ok()
        .and_then(|s| serde_json::from_str(&s).ok())
        .unwrap_or_default();
    let hours: f64 = timings.stages.iter().map(|(_, s)| s).sum::<f64>() / 3600.0;
    pass &= hours < 4.0;
    outcome(
        pass,
        format!(
            "worst SSR {:.3} ({}), lead-20 rank p: {}; pipeline {hours:.2} h on {} core(s)",
            worst.0,
            worst.1,
            p.join(", "),
            std::thread::available_parallelism().map_or(1, |n| n.get())
        ),
    )
}

fn sweep(t: &Trained) -> Outcome {
    let pts = &t.results.sweep;
    let at = |b: f64| pts.iter().find(|p| p.beta == b);
    let grid = [0.0, 0.5, 1.0, 1.5, 2.0, 3.0];
    let mut fails = Vec::new();
    for v in 0..VARIABLES.len() {
        for sign in [1.0, -1.0] {
            let stds: Vec<f64> = grid.iter().map(|&b| at(sign * b).map_or(f64::NAN, |p| p.std[v])).collect();
            if !stds.windows(2).all(|w| w[1] >= w[0]) {
                fails.push(format!("{} not monotone for sign {sign}: {stds:.4?}", VARIABLES[v]));
            }
            let (r1, r3) = (at(sign).map_or(f64::NAN, |p| p.rmse[v]), at(3.0 * sign).map_or(f64::NAN, |p| p.rmse[v]));
            if !(r1 <= r3) {
                fails.push(format!("{} rmse {r1:.4} at {} > {r3:.4} at {}", VARIABLES[v], sign, 3.0 * sign));
            }
        }
        if at(0.0).map_or(true, |p| p.std[v] != 0.0) {
            fails.push(format!("{} std at 0 is not 0", VARIABLES[v]));
        }
        for b in [1.0, 2.0, 3.0] {
            let (sp, sn) = (at(b).map_or(f64::NAN, |p| p.std[v]), at(-b).map_or(f64::NAN, |p| p.std[v]));
            let asym = (sp - sn).abs() / sp;
            if !(asym < 0.1) {
                fails.push(format!("{} asymmetry {asym:.3} at {b}", VARIABLES[v]));
            }
        }
    }
    let vort: Vec<String> = pts.iter().map(|p| format!("{}:{:.4}", p.beta, p.std[0])).collect();
    outcome(
        fails.is_empty(),
        if fails.is_empty() { format!("vorticity std {}", vort.join(" ")) } else { fails.join("; ") },
    )
}

fn attribution(t: &Trained) -> Outcome {
    let c = &t.results.attribution.centroids;
    let get = |l: u8| c.iter().find(|(lv, _)| *lv == l).map_or(f64::NAN, |(_, v)| *v);
    let (c1, c2, c3) = (get(1), get(2), get(3));
    outcome(c1 < c3, format!("centroids level 1 {c1:.3}, level 2 {c2:.3}, level 3 {c3:.3}"))
}

fn interpolation(t: &Trained) -> Outcome {
    let r = t.pipeline.test_cases(&t.data)[1];
    let batch = rollout(&t.model, t.data.state(r), RolloutSpec { members: 4, ..ensemble_spec(108) }).unwrap();
    let a = LatentArchive::from_batch(&batch, &t.model).unwrap();
    let mut fails = Vec::new();
    for (i, j) in [(0usize, 1usize), (2, 3), (3, 0)] {
        for blend in [NoiseBlend::Nearest, NoiseBlend::Interpolate] {
            let e0 = interpolate_members(&a, &t.model, i, j, 0.0, blend).unwrap();
            if e0.states != batch.members[i].states {
                fails.push(format!("e=0 {i}->{j} {blend:?}"));
            }
        }
        let e1 = interpolate_members(&a, &t.model, i, j, 1.0, NoiseBlend::Nearest).unwrap();
        if e1.states != batch.members[j].states {
            fails.push(format!("e=1 {i}->{j}"));
        }
        for e in [0.25, 0.5, 0.8] {
            let mid = interpolate_members(&a, &t.model, i, j, e, NoiseBlend::Nearest).unwrap();
            let (wa, wb) = ((1.0 - e) as f32, e as f32);
            for (step, n) in mid.noise.iter().enumerate() {
                for ((z, za), zb) in n.latents.levels.iter().zip(&a.noise[i][step].latents.levels).zip(&a.noise[j][step].latents.levels) {
                    let ok = z.values.iter().zip(za.values.iter().zip(&zb.values)).all(|(v, (x, y))| *v == wa * x + wb * y);
                    if !ok {
                        fails.push(format!("latents {i}->{j} e={e} step {step} level {}", z.level));
                    }
                }
            }
        }
    }
    outcome(fails.is_empty(), if fails.is_empty() { "3 pairs, 20 steps, e in {0, 0.25, 0.5, 0.8, 1}".into() } else { fails.join(", ") })
}

fn self_tests() -> Outcome {
    let (m, side) = (10, 100);
    let pts = side * side;
    let mut acc = MetricsAccumulator::new(m, 1, (1, side, side), &SpatialWeights::uniform(side), MetricOptions::default()).unwrap();
    for case in 0..10u64 {
        let truth = vec![randn(pts, 109 + case, 0)];
        let f: Vec<Vec<Vec<f32>>> = (0..m).map(|j| vec![randn(pts, 109 + case, 1 + j as u32)]).collect();
        acc.add(&f, &truth, None).unwrap();
    }
    let rep = acc.report(&["x".to_string()]).unwrap();
    let c = &rep.cells[0];
    let ssr = c.ssr.unwrap_or(f64::NAN);
    let n = 64;
    let u: Vec<f64> = randn(n * n, 110, 0).iter().map(|&v| v as f64).collect();
    let v: Vec<f64> = randn(n * n, 110, 1).iter().map(|&v| v as f64).collect();
    let s = ke_spectrum(&u, &v, n).unwrap();
    let ke = u.iter().zip(&v).map(|(a, b)| 0.5 * (a * a + b * b)).sum::<f64>() / (n * n) as f64;
    let parseval = ((s.energy.iter().sum::<f64>() - ke) / ke).abs();
    outcome(
        (0.9..=1.1).contains(&ssr) && c.rank_p_value > 0.01 && parseval < 1e-10 && c.samples == 100_000,
        format!("SSR {ssr:.4}, rank p {:.3} over {} samples, Parseval residual {parseval:.1e}", c.rank_p_value, c.samples),
    )
}

fn dataset_peak(t: &Trained) -> String {
    let cases = t.pipeline.test_cases(&t.data);
    let n = t.data.grid();
    let mut sum = vec![0.0; 0];
    for r in cases.iter().take(20) {
        let s = vorticity_spectrum(t.data.state(*r), n).unwrap();
        if sum.is_empty() {
            sum = vec![0.0; s.energy.len()];
        }
        sum.iter_mut().zip(&s.energy).for_each(|(a, b)| *a += b);
    }
    let peak = sum.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map_or(0, |(k, _)| k);
    format!("test-state KE spectrum peaks at n = {peak}")
}

fn load_trained() -> Result<Trained, String> {
    let pipeline = Pipeline::new(default_root(), PipelineConfig::default());
    let results = pipeline.run_all().map_err(|e| e.to_string())?;
    let data = pipeline.dataset().map_err(|e| e.to_string())?;
    let model = ModelState::read(&pipeline.path("ensemble.sdlm")).map_err(|e| e.to_string())?;
    Ok(Trained {
        model,
        data,
        pipeline,
        results,
    })
}

fn main() {
    let mut rows: Vec<(&str, Outcome)> = vec![
        ("afcrps matches double-loop oracle", crps_oracle()),
        ("fair limit matches Gaussian CRPS", fair_limit()),
        ("two-member degeneracy guard", degeneracy()),
        ("gradient suite", gradients()),
        ("noise layer identity collapses", identity_collapses()),
    ];
    let trained = load_trained();
    let needs: [(&str, fn(&Trained) -> Outcome); 7] = [
        ("replay is bit-exact", replay_exact),
        ("perturbation antisymmetry and linearity", antisymmetry),
        ("desk-scale calibration", calibration),
        ("uniform scale sweep structure", sweep),
        ("level attribution by wavenumber", attribution),
        ("interpolation endpoints and latents", interpolation),
        ("", |_| outcome(true, "")),
    ];
    match &trained {
        Ok(t) => {
            for (name, f) in needs.iter().filter(|(n, _)| !n.is_empty()) {
                rows.push((name, f(t)));
            }
        }
        Err(e) => {
            for (name, _) in needs.iter().filter(|(n, _)| !n.is_empty()) {
                rows.push((name, outcome(false, format!("pipeline unavailable: {e}"))));
            }
        }
    }
    rows.insert(7, ("cost ledger", ledger()));
    rows.push(("verification self-tests", self_tests()));

    let mut failed = 0;
    for (name, o) in &rows {
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    if let Ok(t) = &trained {
        println!("INFO {}", dataset_peak(t));
    }
    println!("acceptance: {} passed, {failed} failed", rows.len() - failed);
    if failed > 0 && std::env::var_os("ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}
