//! Acceptance gate: one test per release criterion. Each prints a single
//! PASS/FAIL line with the measured numbers before asserting.

use std::time::Instant;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rge_core::img::{ImageGray, ImageRgb, Mask};
use rge_core::io::{
    read_checkpoint, write_checkpoint, SceneCheckpoint,
};
use rge_core::metrics::psnr;
use rge_core::nn::persist::{load_weights, save_weights};
use rge_core::nn::FeatureMap;
use rge_core::raster::{render, render_backward, RenderOptions};
use rge_core::reward::{
    build_reward_net, joint_train, loss_reg, loss_reproj, loss_reward_total, RewardConfig,
};
use rge_core::splat::{CameraView, GaussianPrimitive, Maturity};
use rge_core::train::losses::{loss_ie, loss_io};
use rge_core::train::{
    calibrate_scale, classify_maturity, init_from_pointcloud, init_missing, phase1_train,
    phase2_train, TrainConfig, MIN_CALIB_OVERLAP,
};
use rge_core::world::{
    depth_oracle, gen_scene, gen_trajectory, sample_pointcloud, synth_prior, CorruptionConfig,
    PriorSample, SceneConfig, SyntheticScene, TrajectorySet,
};

fn report(criterion: &str, pass: bool, detail: &str) {
    println!("[{}] {criterion}: {detail}", if pass { "PASS" } else { "FAIL" });
}

// ------------------------------------------------------------ shared helpers

fn bench_world(seed: u64, side: usize, budget: usize) -> (SyntheticScene, TrajectorySet) {
    let cfg = SceneConfig {
        splat_budget: budget,
        path_length: 40.0,
        image_width: side,
        image_height: side,
        focal: 0.8 * side as f64,
    };
    let scene = gen_scene(seed, &cfg);
    let traj = gen_trajectory(&cfg, &[0.0, 3.5, 7.0], 40);
    (scene, traj)
}

/// Original-lane views split into (train, held-out) with stride 5.
fn split_views(
    scene: &SyntheticScene,
    traj: &TrajectorySet,
) -> (Vec<(CameraView, ImageRgb)>, Vec<(CameraView, ImageRgb)>) {
    let opts = RenderOptions::default();
    let mut train = Vec::new();
    let mut held = Vec::new();
    for (i, (_, cam)) in traj.original().views.iter().enumerate() {
        let gt = render(&scene.gaussians, cam, &opts).rgb;
        if i % 5 == 0 {
            held.push((cam.clone(), gt));
        } else {
            train.push((cam.clone(), gt));
        }
    }
    (train, held)
}

fn mean_psnr(gaussians: &[GaussianPrimitive], views: &[(CameraView, ImageRgb)]) -> f64 {
    let opts = RenderOptions::default();
    let sum: f64 = views
        .iter()
        .map(|(cam, gt)| psnr(&render(gaussians, cam, &opts).rgb, gt))
        .sum();
    sum / views.len() as f64
}

// --------------------------------------------------------------- criterion 1

#[test]
fn criterion_1_rasterizer_gradient_oracle() {
    let start = Instant::now();
    let mut matched = 0usize;
    let mut total = 0usize;
    let opts = RenderOptions::default();
    let h = 1e-4;
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(8..=20);
        let mut gaussians: Vec<GaussianPrimitive> = (0..n)
            .map(|_| {
                let mut g = GaussianPrimitive::new(
                    Vector3::new(rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5), rng.gen_range(2.0..6.0)),
                    Vector3::new(rng.gen_range(0.05..0.4), rng.gen_range(0.05..0.4), rng.gen_range(0.05..0.4)),
                    rng.gen_range(0.2..0.9),
                    Vector3::new(rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9)),
                );
                g.rotation = nalgebra::Vector4::new(
                    rng.gen_range(0.5..1.0),
                    rng.gen_range(-0.5..0.5),
                    rng.gen_range(-0.5..0.5),
                    rng.gen_range(-0.5..0.5),
                );
                g.normalize();
                g
            })
            .collect();
        let cam = CameraView::new(14.0, 14.0, 8.0, 8.0, 16, 16, nalgebra::Matrix4::identity());
        let mut w = ImageRgb::zeros(16, 16);
        for v in w.data.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        let loss = |gs: &[GaussianPrimitive]| -> f64 {
            let out = render(gs, &cam, &opts);
            out.rgb.data.iter().zip(&w.data).map(|(a, b)| a * b).sum()
        };
        let analytic = render_backward(&mut gaussians, &cam, &w, &opts).unwrap();
        for gi in 0..gaussians.len() {
            let a = &analytic.grads[gi];
            let coords: Vec<(f64, Box<dyn Fn(&mut GaussianPrimitive, f64)>)> = vec![
                (a.position.x, Box::new(|g, v| g.position.x = v)),
                (a.position.y, Box::new(|g, v| g.position.y = v)),
                (a.position.z, Box::new(|g, v| g.position.z = v)),
                (a.rotation.x, Box::new(|g, v| g.rotation.x = v)),
                (a.rotation.y, Box::new(|g, v| g.rotation.y = v)),
                (a.rotation.z, Box::new(|g, v| g.rotation.z = v)),
                (a.rotation.w, Box::new(|g, v| g.rotation.w = v)),
                (a.log_scale.x, Box::new(|g, v| g.log_scale.x = v)),
                (a.log_scale.y, Box::new(|g, v| g.log_scale.y = v)),
                (a.log_scale.z, Box::new(|g, v| g.log_scale.z = v)),
                (a.opacity_logit, Box::new(|g, v| g.opacity_logit = v)),
                (a.color.x, Box::new(|g, v| g.color.x = v)),
                (a.color.y, Box::new(|g, v| g.color.y = v)),
                (a.color.z, Box::new(|g, v| g.color.z = v)),
            ];
            let originals = [
                gaussians[gi].position.x, gaussians[gi].position.y, gaussians[gi].position.z,
                gaussians[gi].rotation.x, gaussians[gi].rotation.y, gaussians[gi].rotation.z, gaussians[gi].rotation.w,
                gaussians[gi].log_scale.x, gaussians[gi].log_scale.y, gaussians[gi].log_scale.z,
                gaussians[gi].opacity_logit,
                gaussians[gi].color.x, gaussians[gi].color.y, gaussians[gi].color.z,
            ];
            for (k, (an, set)) in coords.iter().enumerate() {
                let orig = originals[k];
                set(&mut gaussians[gi], orig + h);
                let lp = loss(&gaussians);
                set(&mut gaussians[gi], orig - h);
                let lm = loss(&gaussians);
                set(&mut gaussians[gi], orig);
                let fd = (lp - lm) / (2.0 * h);
                total += 1;
                let err = (fd - an).abs();
                if err < 1e-3 * fd.abs().max(an.abs()) || err < 1e-6 {
                    matched += 1;
                }
            }
        }
    }
    let frac = matched as f64 / total as f64;
    let secs = start.elapsed().as_secs_f64();
    let pass = frac >= 0.99 && secs < 60.0;
    report(
        "criterion 1 (rasterizer gradient oracle)",
        pass,
        &format!("{matched}/{total} coords matched ({:.2}%), {secs:.1}s", 100.0 * frac),
    );
    assert!(pass);
}

// --------------------------------------------------------------- criterion 2

#[test]
fn criterion_2_reward_net_gradient_oracle() {
    let mut net = build_reward_net(&RewardConfig::default(), 42);
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    let mut x = FeatureMap::zeros(3, 16, 16);
    for v in x.data.iter_mut() {
        *v = rng.gen_range(0.0..1.0);
    }
    let mut w = FeatureMap::zeros(1, 16, 16);
    for v in w.data.iter_mut() {
        *v = rng.gen_range(-1.0..1.0);
    }
    let loss = |net: &mut rge_core::nn::NetGraph| -> f64 {
        let y = net.forward(x.clone()).unwrap();
        y.data.iter().zip(&w.data).map(|(a, b)| a * b).sum()
    };
    net.zero_grad();
    let _ = net.forward(x.clone()).unwrap();
    let _ = net.backward(&w).unwrap();

    // collect (layer, param index) addresses of all parameters
    let mut addresses = Vec::new();
    for (li, l) in net.layers.iter().enumerate() {
        for pi in 0..l.weight.len() + l.bias.len() {
            addresses.push((li, pi));
        }
    }
    let mut matched = 0;
    let h = 1e-5;
    let n_samples = 200;
    for _ in 0..n_samples {
        let (li, pi) = addresses[rng.gen_range(0..addresses.len())];
        let nw = net.layers[li].weight.len();
        let (orig, analytic) = if pi < nw {
            (net.layers[li].weight[pi], net.layers[li].weight_grad[pi])
        } else {
            (net.layers[li].bias[pi - nw], net.layers[li].bias_grad[pi - nw])
        };
        let set = |net: &mut rge_core::nn::NetGraph, v: f64| {
            if pi < nw {
                net.layers[li].weight[pi] = v;
            } else {
                net.layers[li].bias[pi - nw] = v;
            }
        };
        set(&mut net, orig + h);
        let lp = loss(&mut net);
        set(&mut net, orig - h);
        let lm = loss(&mut net);
        set(&mut net, orig);
        let fd = (lp - lm) / (2.0 * h);
        let err = (fd - analytic).abs();
        if err < 1e-3 * fd.abs().max(analytic.abs()) || err < 1e-8 {
            matched += 1;
        }
    }
    let pass = matched == n_samples;
    report(
        "criterion 2 (confidence-net gradient oracle)",
        pass,
        &format!("{matched}/{n_samples} sampled parameters matched"),
    );
    assert!(pass);
}

// --------------------------------------------------------------- criterion 3

#[test]
fn criterion_3_loss_identities() {
    let mut failures = Vec::new();

    let (l_half, _) = loss_reg(&ImageGray::filled(4, 4, 0.5));
    if (l_half - 0.25).abs() > 1e-12 {
        failures.push(format!("reg(0.5)={l_half}"));
    }
    let mut hard = ImageGray::zeros(4, 4);
    for (i, v) in hard.data.iter_mut().enumerate() {
        *v = (i % 2) as f64;
    }
    let (l_hard, _) = loss_reg(&hard);
    if l_hard.abs() > 1e-12 {
        failures.push(format!("reg(0/1)={l_hard}"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut img = ImageRgb::zeros(6, 6);
    for v in img.data.iter_mut() {
        *v = rng.gen_range(0.0..1.0);
    }
    let valid = Mask::new(6, 6, true);
    let conf = ImageGray::filled(6, 6, 0.7);
    let (l_same, _) = loss_reproj(&conf, &img, &valid, &img).unwrap();
    if l_same.abs() > 1e-12 {
        failures.push(format!("reproj(proj=I_e)={l_same}"));
    }
    let mut other = img.clone();
    other.data.iter_mut().for_each(|v| *v = 1.0 - *v);
    let (l_zero_c, _) = loss_reproj(&ImageGray::zeros(6, 6), &img, &valid, &other).unwrap();
    if l_zero_c.abs() > 1e-12 {
        failures.push(format!("reproj(C=0)={l_zero_c}"));
    }

    let cfg = RewardConfig::default();
    let total = loss_reward_total(&cfg, 1.0, 1.0, 0.0);
    if (total - 0.8).abs() > 1e-12 {
        failures.push(format!("total(1,1,0)={total}"));
    }

    // additivity of the composite scene losses must be bitwise
    let mut b = ImageRgb::zeros(6, 6);
    for v in b.data.iter_mut() {
        *v = rng.gen_range(0.0..1.0);
    }
    let io = loss_io(&img, &b).unwrap();
    if io.value != 0.8 * io.l1 + 0.2 * io.dssim {
        failures.push("io additivity not bitwise".into());
    }
    let c = {
        let mut c = ImageGray::zeros(6, 6);
        for v in c.data.iter_mut() {
            *v = rng.gen_range(0.0..1.0);
        }
        c
    };
    let ie = loss_ie(&img, &b, &c).unwrap();
    if ie.value != 0.8 * ie.l1 + 0.2 * ie.dssim + 0.01 * ie.perceptual {
        failures.push("ie additivity not bitwise".into());
    }

    let pass = failures.is_empty();
    let detail = if pass { "all identities exact".to_string() } else { failures.join("; ") };
    report("criterion 3 (loss identities)", pass, &detail);
    assert!(pass, "{failures:?}");
}

// --------------------------------------------------------------- criterion 4

#[test]
fn criterion_4_phase1_convergence() {
    let start = Instant::now();
    let (scene, traj) = bench_world(0, 64, 5000);
    let (train_views, held_views) = split_views(&scene, &traj);
    let cfg = TrainConfig { seed: 0, ..TrainConfig::default() };
    let cloud = sample_pointcloud(&scene, traj.original(), 2, 200_000);
    let mut gaussians = init_from_pointcloud(&cloud, cfg.init_points());
    phase1_train(&mut gaussians, &train_views, &cfg).unwrap();
    let train_psnr = mean_psnr(&gaussians, &train_views);
    let held_psnr = mean_psnr(&gaussians, &held_views);
    let secs = start.elapsed().as_secs_f64();
    // stated targets 28/24 dB with a -1 dB cross-seed tolerance
    let pass = train_psnr >= 27.0 && held_psnr >= 23.0 && secs < 600.0;
    report(
        "criterion 4 (phase-1 convergence)",
        pass,
        &format!("train {train_psnr:.2} dB, held-out {held_psnr:.2} dB, {} gaussians, {secs:.0}s", gaussians.len()),
    );
    assert!(pass);
}

// ------------------------------------------------------- criteria 5/6 helper

struct SeedRun {
    auroc: f64,
    accepted_mae: f64,
    rejected_mae: f64,
    rge_psnr: f64,
    flat_psnr: f64,
}

/// One full small-scale pipeline run: phase 1, joint confidence training,
/// expansion with learned maps vs all-ones maps, scored on shifted-lane GT.
fn pipeline_run(seed: u64) -> SeedRun {
    let side = 32;
    let (scene, traj) = {
        let cfg = SceneConfig {
            splat_budget: 2500,
            path_length: 30.0,
            image_width: side,
            image_height: side,
            focal: 0.8 * side as f64,
        };
        (gen_scene(seed, &cfg), gen_trajectory(&cfg, &[0.0, 3.5], 12))
    };
    let opts = RenderOptions::default();
    let mut train_views = Vec::new();
    let mut _held = 0;
    for (i, (_, cam)) in traj.original().views.iter().enumerate() {
        if i % 5 == 0 {
            _held += 1;
            continue;
        }
        train_views.push((cam.clone(), render(&scene.gaussians, cam, &opts).rgb));
    }
    let cloud = sample_pointcloud(&scene, traj.original(), 2, 100_000);
    let cfg = TrainConfig { seed, ..TrainConfig::default() };
    let mut gaussians = init_from_pointcloud(&cloud, cfg.init_points());
    phase1_train(&mut gaussians, &train_views, &cfg).unwrap();

    let shifted = &traj.lanes[1];
    let priors: Vec<PriorSample> = shifted
        .views
        .iter()
        .map(|(vid, cam)| {
            synth_prior(&scene, vid, cam, &cloud, &CorruptionConfig { severity: 0.25 }, seed ^ 0xabcd)
                .unwrap()
        })
        .collect();

    let rcfg = RewardConfig::default(); // 5000 * desk 0.1 = 500 joint iterations
    let mut net = build_reward_net(&rcfg, seed);
    let mut joint_gs = gaussians.clone();
    let outcome = joint_train(&mut joint_gs, &train_views, &priors, &mut net, &rcfg, &cfg).unwrap();

    // confidence discrimination on the artifact masks
    let mut auroc_sum = 0.0;
    let mut acc_sum = 0.0;
    let mut rej_sum = 0.0;
    let mut mae_n = 0.0f64;
    for (map, prior) in outcome.maps.iter().zip(&priors) {
        auroc_sum += rge_core::metrics::reward_auroc(&map.values, &prior.artifact_mask);
        let gt = render(&scene.gaussians, &prior.cam, &opts).rgb;
        if let Ok(mm) = rge_core::metrics::masked_mae(&prior.image, &gt, &map.values, 0.5) {
            acc_sum += mm.accepted;
            rej_sum += mm.rejected;
            mae_n += 1.0;
        }
    }
    let auroc = auroc_sum / outcome.maps.len() as f64;
    let accepted_mae = acc_sum / mae_n.max(1.0);
    let rejected_mae = rej_sum / mae_n.max(1.0);

    // expansion with learned maps vs the all-ones ablation
    let expanded = |confs: Vec<ImageGray>| -> Vec<GaussianPrimitive> {
        let mut gs = joint_gs.clone();
        classify_maturity(&mut gs, &train_views, &cfg).unwrap();
        for p in &priors {
            let (est, est_valid) = depth_oracle(&scene, &p.cam, 0.1, seed ^ 0x77);
            let (md, mv) = rge_core::raster::render_depth(&gs, &p.cam, &opts);
            let s = calibrate_scale(&est, &est_valid, &md, &mv, MIN_CALIB_OVERLAP).unwrap_or(1.0);
            init_missing(&mut gs, &cloud, p, &est, &est_valid, s, 300);
        }
        phase2_train(&mut gs, &train_views, &priors, &confs, &cfg, cfg.phase2_iters()).unwrap();
        gs
    };
    let learned: Vec<ImageGray> = outcome.maps.iter().map(|m| m.values.clone()).collect();
    let ones: Vec<ImageGray> = priors
        .iter()
        .map(|p| ImageGray::filled(p.cam.width, p.cam.height, 1.0))
        .collect();
    let rge_gs = expanded(learned);
    let flat_gs = expanded(ones);

    // score on shifted-lane GT
    let shifted_gt: Vec<(CameraView, ImageRgb)> = shifted
        .views
        .iter()
        .map(|(_, cam)| (cam.clone(), render(&scene.gaussians, cam, &opts).rgb))
        .collect();
    let run = SeedRun {
        auroc,
        accepted_mae,
        rejected_mae,
        rge_psnr: mean_psnr(&rge_gs, &shifted_gt),
        flat_psnr: mean_psnr(&flat_gs, &shifted_gt),
    };
    println!(
        "  seed {seed}: auroc {:.3}, mae {:.4} vs {:.4}, shifted PSNR {:.2} (weighted) vs {:.2} (flat), mean confidence {:.3}",
        run.auroc, run.accepted_mae, run.rejected_mae, run.rge_psnr, run.flat_psnr, outcome.mean_confidence
    );
    run
}

fn seed_runs() -> &'static [SeedRun] {
    use std::sync::OnceLock;
    static RUNS: OnceLock<Vec<SeedRun>> = OnceLock::new();
    RUNS.get_or_init(|| (0..5).map(pipeline_run).collect())
}

// --------------------------------------------------------------- criterion 5

#[test]
fn criterion_5_reward_discrimination() {
    let runs = seed_runs();
    let mean_auroc = runs.iter().map(|r| r.auroc).sum::<f64>() / runs.len() as f64;
    let mae_ok = runs.iter().all(|r| r.accepted_mae < r.rejected_mae);
    let pass = mean_auroc >= 0.75 && mae_ok;
    let detail = runs
        .iter()
        .map(|r| format!("auroc {:.3} mae {:.4}<{:.4}", r.auroc, r.accepted_mae, r.rejected_mae))
        .collect::<Vec<_>>()
        .join(", ");
    report(
        "criterion 5 (confidence discrimination)",
        pass,
        &format!("mean AUROC {mean_auroc:.3}; {detail}"),
    );
    assert!(pass);
}

// --------------------------------------------------------------- criterion 6

#[test]
fn criterion_6_reward_ablation_trend() {
    let runs = seed_runs();
    let wins = runs.iter().filter(|r| r.rge_psnr > r.flat_psnr).count();
    let pass = wins >= 4;
    let detail = runs
        .iter()
        .map(|r| format!("{:.2} vs {:.2}", r.rge_psnr, r.flat_psnr))
        .collect::<Vec<_>>()
        .join(", ");
    report(
        "criterion 6 (confidence-weighting ablation)",
        pass,
        &format!("{wins}/5 seeds favor weighted training; PSNR {detail}"),
    );
    assert!(pass);
}

// --------------------------------------------------------------- criterion 7

#[test]
fn criterion_7_differentiated_training() {
    let side = 32;
    let seed = 3u64;
    let cfg = TrainConfig { seed, desk_scale: 0.2, ..TrainConfig::default() };
    let scfg = SceneConfig {
        splat_budget: 2500,
        path_length: 30.0,
        image_width: side,
        image_height: side,
        focal: 0.8 * side as f64,
    };
    let scene = gen_scene(seed, &scfg);
    let traj = gen_trajectory(&scfg, &[0.0, 3.5, 7.0], 12);
    let opts = RenderOptions::default();
    let mut train_views: Vec<(CameraView, ImageRgb)> = Vec::new();
    let mut heldout: Vec<(CameraView, ImageRgb)> = Vec::new();
    for (i, (_, cam)) in traj.original().views.iter().enumerate() {
        let gt = render(&scene.gaussians, cam, &opts).rgb;
        if i % 5 == 0 {
            heldout.push((cam.clone(), gt));
        } else {
            train_views.push((cam.clone(), gt));
        }
    }
    let cloud = sample_pointcloud(&scene, traj.original(), 2, 100_000);
    let mut base = init_from_pointcloud(&cloud, cfg.init_points());
    phase1_train(&mut base, &train_views, &cfg).unwrap();
    let priors: Vec<PriorSample> = traj.lanes[1]
        .views
        .iter()
        .map(|(vid, cam)| {
            synth_prior(&scene, vid, cam, &cloud, &CorruptionConfig { severity: 0.1 }, seed).unwrap()
        })
        .collect();
    let confs: Vec<ImageGray> = priors
        .iter()
        .map(|p| ImageGray::filled(p.cam.width, p.cam.height, 0.9))
        .collect();

    // warm up with one expansion round on the near lane so classification
    // sees the state a later expansion stage actually starts from
    phase2_train(&mut base, &train_views, &priors, &confs, &cfg, cfg.phase2_iters()).unwrap();

    // the comparison stage expands into the far lane, which is new content
    let far_priors: Vec<PriorSample> = traj.lanes[2]
        .views
        .iter()
        .map(|(vid, cam)| {
            synth_prior(&scene, vid, cam, &cloud, &CorruptionConfig { severity: 0.1 }, seed ^ 0x55)
                .unwrap()
        })
        .collect();
    let far_confs: Vec<ImageGray> = far_priors
        .iter()
        .map(|p| ImageGray::filled(p.cam.width, p.cam.height, 0.9))
        .collect();

    // frozen run: classify, seed the prior regions, keep the mature set pinned
    let mut frozen_gs = base.clone();
    classify_maturity(&mut frozen_gs, &train_views, &cfg).unwrap();
    let seed_missing = |gs: &mut Vec<GaussianPrimitive>| {
        for p in &far_priors {
            let (est, est_valid) = depth_oracle(&scene, &p.cam, 0.1, seed ^ 0x77);
            let (md, mv) = rge_core::raster::render_depth(gs, &p.cam, &opts);
            let s = calibrate_scale(&est, &est_valid, &md, &mv, MIN_CALIB_OVERLAP).unwrap_or(1.0);
            init_missing(gs, &cloud, p, &est, &est_valid, s, 300);
        }
    };
    seed_missing(&mut frozen_gs);
    let mature_before: Vec<GaussianPrimitive> = frozen_gs
        .iter()
        .filter(|g| g.maturity == Maturity::Mature)
        .cloned()
        .collect();
    let rep_frozen =
        phase2_train(&mut frozen_gs, &train_views, &far_priors, &far_confs, &cfg, cfg.phase2_iters())
            .unwrap();
    let mature_after: Vec<GaussianPrimitive> = frozen_gs
        .iter()
        .filter(|g| g.maturity == Maturity::Mature)
        .cloned()
        .collect();
    let byte_identical = mature_before == mature_after;

    // no-freeze ablation: same seeding, but nothing pinned
    let mut free_gs = base.clone();
    classify_maturity(&mut free_gs, &train_views, &cfg).unwrap();
    seed_missing(&mut free_gs);
    for g in free_gs.iter_mut() {
        g.maturity = Maturity::Immature;
    }
    let rep_free =
        phase2_train(&mut free_gs, &train_views, &far_priors, &far_confs, &cfg, cfg.phase2_iters())
            .unwrap();

    let update_ratio = rep_frozen.updates_applied as f64 / rep_free.updates_applied as f64;
    let n_mature = frozen_gs.iter().filter(|g| g.maturity == Maturity::Mature).count();
    let psnr_frozen = mean_psnr(&frozen_gs, &heldout);
    let psnr_free = mean_psnr(&free_gs, &heldout);
    let pass = byte_identical && update_ratio <= 0.7 && psnr_frozen >= psnr_free - 0.5;
    report(
        "criterion 7 (differentiated training)",
        pass,
        &format!(
            "mature block byte-identical: {byte_identical} ({n_mature}/{} mature); update ratio {update_ratio:.2}; held-out PSNR {psnr_frozen:.2} vs no-freeze {psnr_free:.2}",
            frozen_gs.len()
        ),
    );
    assert!(pass);
}

// --------------------------------------------------------------- criterion 8

#[test]
fn criterion_8_determinism_and_persistence() {
    let dir = tempfile::tempdir().unwrap();
    let run = || -> Vec<u8> {
        let scfg = SceneConfig {
            splat_budget: 1200,
            path_length: 24.0,
            image_width: 32,
            image_height: 32,
            focal: 26.0,
        };
        let scene = gen_scene(5, &scfg);
        let traj = gen_trajectory(&scfg, &[0.0], 4);
        let opts = RenderOptions::default();
        let views: Vec<(CameraView, ImageRgb)> = traj
            .original()
            .views
            .iter()
            .map(|(_, cam)| (cam.clone(), render(&scene.gaussians, cam, &opts).rgb))
            .collect();
        let cloud = sample_pointcloud(&scene, traj.original(), 3, 10_000);
        let mut gs = init_from_pointcloud(&cloud, 500);
        let cfg = TrainConfig { seed: 5, desk_scale: 0.01, ..TrainConfig::default() };
        phase1_train(&mut gs, &views, &cfg).unwrap();
        let ckpt = SceneCheckpoint { gaussians: gs, sh_degree: 0, desk_scale: 0.01, seed: 5 };
        let p = dir.path().join("det.ckpt");
        write_checkpoint(&ckpt, &p).unwrap();
        std::fs::read(&p).unwrap()
    };
    let a = run();
    let b = run();
    let deterministic = a == b;

    // checkpoint round trip byte-exact
    let p1 = dir.path().join("rt1.ckpt");
    let p2 = dir.path().join("rt2.ckpt");
    std::fs::write(&p1, &a).unwrap();
    let loaded = read_checkpoint(&p1).unwrap();
    write_checkpoint(&loaded, &p2).unwrap();
    let ckpt_roundtrip = std::fs::read(&p1).unwrap() == std::fs::read(&p2).unwrap();

    // weight file round trip byte-exact
    let net = build_reward_net(&RewardConfig::default(), 9);
    let w1 = dir.path().join("w1.rgen");
    let w2 = dir.path().join("w2.rgen");
    save_weights(&net, &w1).unwrap();
    let net2 = load_weights(&w1).unwrap();
    save_weights(&net2, &w2).unwrap();
    let weights_roundtrip = std::fs::read(&w1).unwrap() == std::fs::read(&w2).unwrap();

    let pass = deterministic && ckpt_roundtrip && weights_roundtrip;
    report(
        "criterion 8 (determinism & persistence)",
        pass,
        &format!(
            "training deterministic: {deterministic}; checkpoint round-trip: {ckpt_roundtrip}; weights round-trip: {weights_roundtrip}"
        ),
    );
    assert!(pass);
}

// --------------------------------------------------------------- criterion 9

#[test]
fn criterion_9_scale_calibration() {
    let scfg = SceneConfig {
        splat_budget: 2000,
        path_length: 30.0,
        image_width: 48,
        image_height: 48,
        focal: 40.0,
    };
    let scene = gen_scene(2, &scfg);
    let traj = gen_trajectory(&scfg, &[0.0], 3);
    let cam = &traj.original().views[1].1;
    let planted = 2.37;

    // noiseless: estimated depth = GT / planted, recovery must be exact
    let (gt_depth, valid) = depth_oracle(&scene, cam, 0.0, 0);
    let mut est = gt_depth.clone();
    est.data.iter_mut().for_each(|v| *v /= planted);
    let s0 = calibrate_scale(&est, &valid, &gt_depth, &valid, MIN_CALIB_OVERLAP).unwrap();
    let exact_err = (s0 - planted).abs() / planted;

    // default multiplicative noise U[0.9, 1.1]
    let (noisy, nvalid) = depth_oracle(&scene, cam, 0.1, 77);
    let mut est_n = noisy.clone();
    est_n.data.iter_mut().for_each(|v| *v /= planted);
    let s1 = calibrate_scale(&est_n, &nvalid, &gt_depth, &valid, MIN_CALIB_OVERLAP).unwrap();
    let noisy_err = (s1 - planted).abs() / planted;

    let pass = exact_err < 1e-9 && noisy_err < 0.05;
    report(
        "criterion 9 (scale calibration)",
        pass,
        &format!("noiseless rel err {exact_err:.2e}, noisy rel err {noisy_err:.4}"),
    );
    assert!(pass);
}
