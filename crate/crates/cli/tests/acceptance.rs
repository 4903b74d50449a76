//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.
//!
//! Runs with `cargo test -p humanslam-cli --test acceptance`.

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use humanslam::ba_core::{cost, residual_jacobian, solve, BAConfig};
use humanslam::body_model::{BodyParams, BodyTemplate, FrameTag, NUM_JOINTS};
use humanslam::denoiser::{denoise, loss_and_gradients, total_loss, AdamWConfig, DenoiserConfig, DenoiserWeights, Trainer};
use humanslam::depth_calibration::{
    apply_calibration, calibrate, e_depth, rasterize_frames, CalibrationConfig, CalibrationProblem,
};
use humanslam::geometry::{DepthMap, Rotation, SE3Pose};
use humanslam::metrics::{
    accel_error, ate, depth_metrics, fa_mpjpe, pa_mpjpe, procrustes, wa_mpjpe, AteAlignment, JointSequence,
    MpjpeOptions, SimilarityAlignment,
};
use humanslam::synth::{denoiser_toy_task, generate, grid_minimum, GridSpec, SynthConfig, SynthScenario};
use humanslam::world_frame::{camera_to_world, track_to_world, world_to_camera};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

type Outcome = std::result::Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

fn rand_vec(rng: &mut ChaCha8Rng, s: f64) -> Vector3<f64> {
    Vector3::new(rng.random_range(-s..s), rng.random_range(-s..s), rng.random_range(-s..s))
}

fn rand_pose(rng: &mut ChaCha8Rng) -> SE3Pose<f64> {
    SE3Pose::new(Rotation::exp(&rand_vec(rng, 3.0)), rand_vec(rng, 5.0))
}

fn rand_params(rng: &mut ChaCha8Rng) -> BodyParams<f64> {
    let mut beta = [0.0; 10];
    for b in &mut beta {
        *b = rng.random_range(-2.0..2.0);
    }
    BodyParams {
        phi: Rotation::exp(&rand_vec(rng, 3.0)),
        theta: (0..NUM_JOINTS).map(|_| Rotation::exp(&rand_vec(rng, 0.8))).collect(),
        beta,
        gamma: rand_vec(rng, 3.0),
    }
}

// ---------------------------------------------------------------- calibration

struct CalibRun {
    truth: (f64, f64),
    noisy: bool,
    estimate: (f64, f64),
    energy: f64,
    seconds: f64,
    scenario: SynthScenario,
}

fn stratified(seed: u64) -> (f64, f64) {
    let s = 0.5 + 2.5 * ((seed * 7 % 20) as f64 / 19.0);
    let o = -1.0 + 2.0 * ((seed * 13 % 20) as f64 / 19.0);
    (s, o)
}

fn calibration_runs() -> Vec<CalibRun> {
    let mut runs = Vec::new();
    for noisy in [false, true] {
        for seed in 0..20u64 {
            let truth = stratified(seed);
            let cfg = SynthConfig {
                depth_scale: truth.0,
                depth_offset: truth.1,
                depth_noise: if noisy { 0.01 } else { 0.0 },
                ..Default::default()
            };
            let scenario = generate(1000 + seed, &cfg).expect("scenario");
            let frames = scenario.calibration_frames();
            let t0 = Instant::now();
            let r = calibrate(&frames, &scenario.intr, &CalibrationConfig::default()).expect("calibrate");
            let seconds = t0.elapsed().as_secs_f64();
            runs.push(CalibRun { truth, noisy, estimate: (r.s, r.o), energy: r.final_energy, seconds, scenario });
        }
    }
    runs
}

fn calibration_problem(sc: &SynthScenario) -> CalibrationProblem<f64> {
    let cfg = CalibrationConfig::default();
    let frames = sc.calibration_frames();
    let rasters = rasterize_frames(&frames, &sc.intr, cfg.splat_radius).unwrap();
    CalibrationProblem::new(&frames, &rasters, &sc.intr, cfg.lambda).unwrap()
}

fn criterion_1(runs: &[CalibRun]) -> Outcome {
    let worst = |noisy: bool| {
        runs.iter().filter(|r| r.noisy == noisy).fold((0.0f64, 0.0f64), |(ws, wo), r| {
            let es = (r.estimate.0 - r.truth.0).abs() / r.truth.0.abs();
            let eo = (r.estimate.1 - r.truth.1).abs() / r.truth.1.abs();
            (ws.max(es), wo.max(eo))
        })
    };
    let (cs, co) = worst(false);
    let (ns, no) = worst(true);
    let secs: f64 = runs.iter().map(|r| r.seconds).sum();
    let failing: Vec<String> = runs
        .iter()
        .filter(|r| r.noisy && (r.estimate.1 - r.truth.1).abs() / r.truth.1.abs() >= 0.02)
        .map(|r| format!("o*={:.3}→{:.4}", r.truth.1, r.estimate.1))
        .collect();
    let detail = format!(
        "clean max rel err s {:.2e} o {:.2e} (< 1e-3); 1% noise s {:.2e} o {:.2e} (< 2e-2); {} calibrations in {:.2} s (< 5 s){}",
        cs,
        co,
        ns,
        no,
        runs.len(),
        secs,
        if failing.is_empty() { String::new() } else { format!("; noisy offsets out of bound: {}", failing.join(", ")) }
    );
    check(cs < 1e-3 && co < 1e-3 && ns < 0.02 && no < 0.02 && secs < 5.0, detail)
}

fn criterion_2(runs: &[CalibRun]) -> Outcome {
    let mut worst = f64::NEG_INFINITY;
    for r in runs {
        let (_, _, grid) = grid_minimum(&calibration_problem(&r.scenario), &GridSpec::default());
        worst = worst.max(r.energy - grid);
    }
    check(worst <= 1e-6, format!("max (optimizer − 201×201 grid) energy over {} scenarios: {:.3e} (≤ 1e-6)", runs.len(), worst))
}

// ---------------------------------------------------------------- gradients

fn criterion_3(runs: &[CalibRun]) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);

    // E_depth: closed-form gradient of the optimizer's energy against differences of the per-pixel sum
    let mut depth_worst: f64 = 0.0;
    let mut depth_probes = 0;
    for r in runs.iter().filter(|r| !r.noisy) {
        let frames = r.scenario.calibration_frames();
        let rasters = rasterize_frames(&frames, &r.scenario.intr, CalibrationConfig::default().splat_radius).unwrap();
        let pb = CalibrationProblem::new(&frames, &rasters, &r.scenario.intr, 1.0).unwrap();
        for _ in 0..3 {
            let (s, o) = (rng.random_range(0.3..3.0), rng.random_range(-1.5..1.5));
            let an = pb.e_depth_grad(s, o);
            let h = 1e-5;
            let f = |s: f64, o: f64| e_depth(&frames, &rasters, s, o).unwrap();
            let fd = [(f(s + h, o) - f(s - h, o)) / (2.0 * h), (f(s, o + h) - f(s, o - h)) / (2.0 * h)];
            for k in 0..2 {
                depth_worst = depth_worst.max(rel_err(an[k], fd[k], 1e-6));
            }
            depth_probes += 1;
        }
    }

    // BA residual Jacobians on synthetic geometry at perturbed poses
    let mut ba_worst: f64 = 0.0;
    let mut ba_probes = 0;
    let scenes: Vec<_> = (0..4).map(|s| generate(300 + s, &SynthConfig::default()).unwrap()).collect();
    while ba_probes < 60 {
        let sc = &scenes[ba_probes % scenes.len()];
        let o = &sc.observations[rng.random_range(0..sc.observations.len())];
        let k = rng.random_range(0..o.pixels.len());
        let (gi, gj) = (sc.init_poses[o.i], sc.init_poses[o.j]);
        let d = sc.gt_inv_depths[o.i][k];
        let Some((_, jac)) = residual_jacobian(&gi, &gj, &sc.intr, &o.pixels[k], &o.targets[k], d) else { continue };
        let eval = |x: &[f64; 13]| {
            let a = gi.retract(&Vector3::new(x[0], x[1], x[2]), &Vector3::new(x[3], x[4], x[5]));
            let b = gj.retract(&Vector3::new(x[6], x[7], x[8]), &Vector3::new(x[9], x[10], x[11]));
            residual_jacobian(&a, &b, &sc.intr, &o.pixels[k], &o.targets[k], d + x[12]).unwrap().0
        };
        let h = 1e-6;
        for c in 0..13 {
            let (mut xp, mut xm) = ([0.0; 13], [0.0; 13]);
            xp[c] = h;
            xm[c] = -h;
            let fd = (eval(&xp) - eval(&xm)) / (2.0 * h);
            for row in 0..2 {
                ba_worst = ba_worst.max(rel_err(jac[(row, c)], fd[row], 1e-6));
            }
        }
        ba_probes += 1;
    }

    // full denoiser training loss with respect to random weights
    let net = DenoiserConfig {
        latent_dim: 16,
        decoder_layers: 2,
        attention_heads: 2,
        feedforward_dim: 32,
        scene_tokens: 4,
        train_window: [6, 6],
        infer_window: 6,
        max_window: 6,
        disc_hidden: 8,
        seed: 9,
        ..Default::default()
    };
    let mut w = DenoiserWeights::init(&net).unwrap();
    for m in w.tensors.values_mut() {
        for v in m.iter_mut() {
            *v += rng.random_range(-0.05..0.05);
        }
    }
    let sc = generate(
        31,
        &SynthConfig { frames: 6, anchors_per_frame: 25, body_rot_noise: 0.05, body_trans_noise: 0.03, ..Default::default() },
    )
    .unwrap();
    let batch = vec![sc.denoiser_sample(0).unwrap()];
    let (_, grads) = loss_and_gradients(&batch, &w).unwrap();
    let names: Vec<String> = w.tensors.keys().cloned().collect();
    let mut den_worst: f64 = 0.0;
    let den_probes = 60;
    for _ in 0..den_probes {
        let name = &names[rng.random_range(0..names.len())];
        let idx = rng.random_range(0..w.tensors[name].len());
        let f = |delta: f64| {
            let mut p = w.clone();
            p.tensors.get_mut(name).unwrap()[idx] += delta;
            total_loss(&batch, &p).unwrap().total
        };
        let fd = (f(1e-4) - f(-1e-4)) / 2e-4;
        den_worst = den_worst.max(rel_err(grads[name][idx], fd, 1e-6));
    }

    check(
        depth_worst < 1e-4 && ba_worst < 1e-4 && den_worst < 1e-4,
        format!(
            "max rel err: E_depth {:.2e} ({} probes), BA Jacobian {:.2e} ({} probes), denoiser loss {:.2e} ({} probes); bound 1e-4",
            depth_worst, depth_probes, ba_worst, ba_probes, den_worst, den_probes
        ),
    )
}

// ---------------------------------------------------------------- bundle adjustment

fn criterion_4() -> Outcome {
    let (mut rot, mut trans) = (0.0f64, 0.0f64);
    let mut monotone = true;
    let mut converged = true;
    for seed in 0..5 {
        let sc = generate(400 + seed, &SynthConfig::default()).unwrap();
        let sol = solve(&sc.ba_problem(&sc.depth_true, 1.0), &BAConfig::default()).unwrap();
        converged &= sol.converged;
        monotone &= sol.cost_trace.windows(2).all(|w| w[1] <= w[0]);
        for (p, g) in sol.poses.iter().zip(&sc.gt_poses) {
            rot = rot.max(p.rotation.angle_to(&g.rotation));
            trans = trans.max((p.translation - g.translation).norm());
        }
    }
    check(
        rot < 1e-6 && trans < 1e-6 && monotone && converged,
        format!("5 scenes from 0.05 rad / 0.05 m: max rot err {:.2e} rad, trans err {:.2e} m (< 1e-6); monotone {}; converged {}", rot, trans, monotone, converged),
    )
}

fn criterion_5() -> Outcome {
    let t0 = Instant::now();
    let mut ratios = Vec::new();
    for seed in 0..10 {
        let sc = generate(seed, &SynthConfig { corruption: 0.3, ..Default::default() }).unwrap();
        let pb = sc.ba_problem(&sc.depth_true, 1.0);
        let run = |use_masks: bool| {
            let sol = solve(&pb, &BAConfig { use_masks, ..Default::default() }).unwrap();
            ate(&sol.poses, &sc.gt_poses, AteAlignment::Rigid).unwrap()
        };
        ratios.push(run(true) / run(false));
    }
    let secs = t0.elapsed().as_secs_f64();
    let worst = ratios.iter().cloned().fold(0.0, f64::max);
    check(
        worst < 0.2 && secs < 60.0,
        format!("30% corrupted in-mask correspondences, 10 seeds: max ATE(masked)/ATE(unmasked) {:.3e} (< 0.2); {:.1} s (< 60 s)", worst, secs),
    )
}

fn path_length(poses: &[SE3Pose<f64>]) -> f64 {
    poses.windows(2).map(|w| (w[1].translation - w[0].translation).norm()).sum()
}

fn criterion_6() -> Outcome {
    let mut worst_scale: f64 = 0.0;
    for seed in 0..5 {
        let sc = generate(600 + seed, &SynthConfig::default()).unwrap();
        let cal = calibrate(&sc.calibration_frames(), &sc.intr, &CalibrationConfig::default()).unwrap();
        let priors: Vec<DepthMap<f64>> = sc.depth_raw.iter().map(|d| apply_calibration(d, cal.s, cal.o).unwrap()).collect();
        let sol = solve(&sc.ba_problem(&priors, 1.0), &BAConfig::default()).unwrap();
        let scale = path_length(&sol.poses) / path_length(&sc.gt_poses);
        worst_scale = worst_scale.max((scale - 1.0).abs());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst_gauge: f64 = 0.0;
    for seed in 0..5 {
        let sc = generate(650 + seed, &SynthConfig { sigma_px: 0.5, ..Default::default() }).unwrap();
        let pb = sc.ba_problem(&sc.depth_true, 0.0);
        let base = cost(&pb, &sc.init_poses, &pb.inv_depths);
        for _ in 0..10 {
            let g = rand_pose(&mut rng);
            let moved: Vec<_> = sc.init_poses.iter().map(|p| g.compose(p)).collect();
            let c = cost(&pb, &moved, &pb.inv_depths);
            worst_gauge = worst_gauge.max((c - base).abs() / (1.0 + base));
        }
    }
    check(
        worst_scale < 1e-3 && worst_gauge <= 1e-9,
        format!("calibrated prior, no alignment: max |scale − 1| {:.2e} (< 1e-3); depth_weight 0: max cost change under global SE(3) {:.2e} (≤ 1e-9)", worst_scale, worst_gauge),
    )
}

// ---------------------------------------------------------------- transport

fn criterion_7() -> Outcome {
    let template = BodyTemplate::standard();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut mesh, mut round, mut exact) = (0.0f64, 0.0f64, true);
    for _ in 0..100 {
        let p = rand_params(&mut rng);
        let g = rand_pose(&mut rng);
        let world = camera_to_world(&p, &g, &template);
        let lhs = template.pose_mesh(&world, FrameTag::World);
        let rhs = template.pose_mesh(&p, FrameTag::Camera).transformed(&g, FrameTag::World);
        for (a, b) in lhs.vertices.iter().zip(&rhs.vertices) {
            mesh = mesh.max((a - b).norm());
        }
        let back = world_to_camera(&world, &g, &template);
        round = round.max((back.phi.matrix() - p.phi.matrix()).abs().max()).max((back.gamma - p.gamma).abs().max());
        exact &= back.theta == p.theta && back.beta == p.beta;
    }
    check(
        mesh < 1e-9 && round < 1e-12 && exact,
        format!("100 samples: max vertex gap {:.2e} m (< 1e-9); round-trip error {:.2e} (< 1e-12); θ, β untouched {}", mesh, round, exact),
    )
}

// ---------------------------------------------------------------- denoiser

#[derive(Debug, Serialize, Deserialize)]
struct ToyCurve {
    seed: u64,
    steps: usize,
    total_loss: Vec<f64>,
}

fn fixture_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/denoiser_toy_curve.json")
}

fn criterion_8() -> Outcome {
    // identity initialization on a full-size network
    let sc = generate(8, &SynthConfig { body_rot_noise: 0.1, body_trans_noise: 0.05, missing_rate: 0.2, ..Default::default() }).unwrap();
    let template = BodyTemplate::standard();
    let track = track_to_world(&sc.cam_tracks[0], &sc.gt_poses, &template).unwrap();
    let filled = humanslam::world_frame::interpolate_track(&track).unwrap();
    let w = DenoiserWeights::init(&DenoiserConfig::default()).unwrap();
    let out = denoise(&filled, &sc.scene_cloud().unwrap(), &w).unwrap();
    let identity = out.slots == filled.slots;

    let t0 = Instant::now();
    let seed = 42;
    let steps = 500;
    let task = denoiser_toy_task(seed).map_err(|e| e.to_string())?;
    let batch = vec![task.sample];
    let mut trainer = Trainer::new(task.weights, AdamWConfig::default());
    let mut curve = Vec::with_capacity(steps + 1);
    for _ in 0..steps {
        curve.push(trainer.step(&batch).map_err(|e| e.to_string())?.total);
    }
    curve.push(trainer.loss(&batch).map_err(|e| e.to_string())?.total);
    let secs = t0.elapsed().as_secs_f64();
    let reduction = 1.0 - curve[steps] / curve[0];

    let path = fixture_path();
    let fixture = if path.exists() {
        let stored: ToyCurve = serde_json::from_slice(&fs::read(&path).unwrap()).map_err(|e| e.to_string())?;
        let drift = stored.total_loss.iter().zip(&curve).map(|(a, b)| rel_err(*a, *b, 1e-12)).fold(0.0, f64::max);
        let ok = stored.seed == seed && stored.steps == steps && stored.total_loss.len() == curve.len() && drift <= 1e-6;
        (ok, format!("matches stored curve (max rel drift {:.1e} ≤ 1e-6): {}", drift, ok))
    } else {
        let stored = ToyCurve { seed, steps, total_loss: curve.clone() };
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        fs::write(&path, serde_json::to_string_pretty(&stored).unwrap() + "\n").unwrap();
        (true, "curve fixture written".to_string())
    };
    check(
        identity && reduction >= 0.5 && secs < 120.0 && fixture.0,
        format!(
            "identity init returns input exactly: {}; {} steps: loss {:.3} → {:.3} ({:.1}% reduction, ≥ 50%) in {:.1} s (< 120 s); {}",
            identity,
            steps,
            curve[0],
            curve[steps],
            100.0 * reduction,
            secs,
            fixture.1
        ),
    )
}

// ---------------------------------------------------------------- metrics

fn sequence(rng: &mut ChaCha8Rng, frames: usize, joints: usize) -> JointSequence<f64> {
    let base: Vec<_> = (0..joints).map(|_| rand_vec(rng, 0.8)).collect();
    let vel = rand_vec(rng, 0.1);
    JointSequence::new((0..frames).map(|t| base.iter().map(|b| b + vel * t as f64 + rand_vec(rng, 0.05)).collect()).collect())
}

fn criterion_9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let opts = MpjpeOptions::default();
    let mut failures: Vec<String> = Vec::new();
    let mut expect = |ok: bool, what: &str| {
        if !ok {
            failures.push(what.to_string());
        }
    };

    let mut ordering_ok = true;
    for _ in 0..50 {
        let gt = sequence(&mut rng, 10, NUM_JOINTS);
        let g = SimilarityAlignment { scale: rng.random_range(0.8..1.2), rotation: Rotation::exp(&rand_vec(&mut rng, 3.0)), translation: rand_vec(&mut rng, 2.0), with_scale: true };
        let drift = rng.random_range(0.0..0.02);
        let noise = rng.random_range(0.001..0.1);
        let pred = JointSequence::new(
            gt.transformed(&g).frames.iter().enumerate().map(|(t, f)| f.iter().map(|p| p * (1.0 + drift * t as f64) + rand_vec(&mut rng, noise)).collect()).collect(),
        );
        let pa = pa_mpjpe(&pred, &gt).unwrap();
        let wa = wa_mpjpe(&pred, &gt, opts).unwrap();
        let fa = fa_mpjpe(&pred, &gt, opts).unwrap();
        ordering_ok &= pa <= wa + 1e-9 && wa <= fa + 1e-9;
    }
    expect(ordering_ok, "PA ≤ WA ≤ FA");

    // alignment-based examples hold to machine precision
    let tol = 1e-9;
    let x: Vec<_> = (0..10).map(|_| rand_vec(&mut rng, 1.0)).collect();
    let id = procrustes(&x, &x, true).unwrap();
    expect(id.scale == 1.0 && *id.rotation.matrix() == nalgebra::Matrix3::identity() && id.translation == Vector3::zeros(), "procrustes(X, X)");
    let rz = Rotation::rot_z(30f64.to_radians());
    let y: Vec<_> = x.iter().map(|p| rz.apply(p) * 2.0 + Vector3::new(1.0, 0.0, 0.0)).collect();
    let a = procrustes(&x, &y, true).unwrap();
    expect((a.scale - 2.0).abs() < tol && (a.rotation.matrix() - rz.matrix()).abs().max() < tol && (a.translation - Vector3::x()).norm() < tol, "procrustes construction");

    let gt = sequence(&mut rng, 8, NUM_JOINTS);
    let per_frame = JointSequence::new(
        gt.frames
            .iter()
            .map(|f| {
                let s = SimilarityAlignment { scale: rng.random_range(0.5..2.0), rotation: Rotation::exp(&rand_vec(&mut rng, 3.0)), translation: rand_vec(&mut rng, 3.0), with_scale: true };
                f.iter().map(|p| s.apply(p)).collect()
            })
            .collect(),
    );
    expect(pa_mpjpe(&per_frame, &gt).unwrap() < tol, "PA of per-frame similarity");
    let noisy = JointSequence::new(gt.frames.iter().map(|f| f.iter().map(|p| p + rand_vec(&mut rng, 0.05)).collect()).collect());
    let sim = SimilarityAlignment { scale: 1.7, rotation: Rotation::exp(&Vector3::new(0.4, -1.0, 2.0)), translation: Vector3::new(3.0, -1.0, 0.5), with_scale: true };
    expect((pa_mpjpe(&noisy.transformed(&sim), &gt).unwrap() - pa_mpjpe(&noisy, &gt).unwrap()).abs() < tol, "PA similarity invariance");
    let rigid = SimilarityAlignment { scale: 1.0, rotation: Rotation::exp(&Vector3::new(-0.3, 0.8, 0.1)), translation: Vector3::new(-2.0, 0.5, 1.0), with_scale: false };
    let moved = gt.transformed(&rigid);
    expect(wa_mpjpe(&moved, &gt, opts).unwrap() < tol && fa_mpjpe(&moved, &gt, opts).unwrap() < tol, "WA/FA of rigid motion");
    let t = gt.len();
    let shifted = JointSequence::new(gt.frames.iter().enumerate().map(|(k, f)| f.iter().map(|p| if k == 0 { *p } else { p + Vector3::new(0.010, 0.0, 0.0) }).collect()).collect());
    expect((fa_mpjpe(&shifted, &gt, opts).unwrap() - 10.0 * (t - 1) as f64 / t as f64).abs() < tol, "FA of shifted frames");

    let offset = JointSequence::new(gt.frames.iter().map(|f| f.iter().map(|p| p + Vector3::new(0.3, -0.2, 0.1)).collect()).collect());
    expect(accel_error(&offset, &gt).unwrap() < tol, "accel of constant offset");
    let linear = JointSequence::new(gt.frames.iter().enumerate().map(|(k, f)| f.iter().map(|p| p + Vector3::new(0.01, 0.02, -0.01) * k as f64).collect()).collect());
    expect(accel_error(&linear, &gt).unwrap() < tol, "accel of linear drift");
    let c = Vector3::new(0.002, -0.001, 0.0005);
    let single = JointSequence::new(gt.frames.iter().map(|f| vec![f[0]]).collect());
    let quad = JointSequence::new(single.frames.iter().enumerate().map(|(k, f)| vec![f[0] + c * (k * k) as f64]).collect());
    expect((accel_error(&quad, &single).unwrap() - 2.0 * c.norm() * 1000.0).abs() < tol, "accel of quadratic drift");

    let traj: Vec<_> = (0..8).map(|_| rand_pose(&mut rng)).collect();
    expect(ate(&traj, &traj, AteAlignment::Rigid).unwrap() == 0.0, "ATE of identical trajectories");
    let g = rand_pose(&mut rng);
    let moved: Vec<_> = traj.iter().map(|p| g.compose(p)).collect();
    expect(ate(&moved, &traj, AteAlignment::Rigid).unwrap() < tol, "ATE of rigid motion");

    let d = DepthMap::new(2, 2, vec![1.0, 2.0, 3.0, f64::NAN]).unwrap();
    let same = depth_metrics(&d, &d).unwrap();
    expect(same.delta1 == 1.0 && same.rel == 0.0 && same.rmse == 0.0, "depth pred = gt");
    let hand = depth_metrics(&DepthMap::new(2, 1, vec![1.0, 2.0]).unwrap(), &DepthMap::new(2, 1, vec![1.0, 1.0]).unwrap()).unwrap();
    expect(hand.delta1 == 0.5 && hand.rel == 0.5 && hand.rmse == 0.5f64.sqrt(), "depth hand example");

    let n = 13;
    check(
        failures.is_empty(),
        if failures.is_empty() {
            format!("ordering over 50 perturbed sequences (tol 1e-9) and {} metric examples hold", n)
        } else {
            format!("failed: {}", failures.join(", "))
        },
    )
}

// ---------------------------------------------------------------- end to end

fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn criterion_10() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let dirs = [tmp.path().join("a"), tmp.path().join("b")];
    for d in &dirs {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let code = humanslam_cli::run(["humanslam", "pipeline", "--seed", "42", "--out-dir", d.to_str().unwrap()], &mut out, &mut err);
        if code != 0 {
            return Err(format!("pipeline exited {}: {}", code, String::from_utf8_lossy(&err)));
        }
    }
    let (a, b) = (tree(&dirs[0]), tree(&dirs[1]));
    let identical = a == b;
    let m: serde_json::Value = serde_json::from_slice(&fs::read(dirs[0].join("metrics.json")).unwrap()).unwrap();
    let ate_mm = m["ate_mm"].as_f64().unwrap_or(f64::NAN);
    let wa_mm = m["wa_mpjpe_mm"].as_f64().unwrap_or(f64::NAN);
    check(
        identical && ate_mm < 1.0 && wa_mm < 1.0,
        format!("two runs, {} files byte-identical: {}; ATE {:.3e} mm (< 1), WA-MPJPE {:.3e} mm (< 1)", a.len(), identical, ate_mm, wa_mm),
    )
}

fn run_criterion(id: usize, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let t0 = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default();
        Err(format!("panicked: {}", msg))
    });
    let secs = t0.elapsed().as_secs_f64();
    let (tag, detail, ok) = match outcome {
        Ok(d) => ("PASS", d, true),
        Err(d) => ("FAIL", d, false),
    };
    println!("{} {:>2} {} [{:.1} s]: {}", tag, id, name, secs, detail);
    ok
}

fn main() {
    // flags such as --nocapture are accepted and ignored; the suite always runs whole
    let runs = calibration_runs();
    let results = [
        run_criterion(1, "calibration recovery", || criterion_1(&runs)),
        run_criterion(2, "calibration vs grid oracle", || criterion_2(&runs)),
        run_criterion(3, "gradient checks", || criterion_3(&runs)),
        run_criterion(4, "BA exactness", criterion_4),
        run_criterion(5, "dynamic masking benefit", criterion_5),
        run_criterion(6, "metric scale and gauge", criterion_6),
        run_criterion(7, "transport equivariance", criterion_7),
        run_criterion(8, "denoiser identity and learning", criterion_8),
        run_criterion(9, "metric suite", criterion_9),
        run_criterion(10, "end-to-end determinism", criterion_10),
    ];
    let passed = results.iter().filter(|r| **r).count();
    println!("acceptance: {}/{} criteria passed", passed, results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
