use rge_core::img::{ImageGray, ImageRgb};
use rge_core::nn::optim::{reward_lr_at, AdamWConfig, OptimizerState};
use rge_core::nn::FeatureMap;
use rge_core::raster::{render, render_backward, RenderOptions};
use rge_core::reward::{build_reward_net, image_to_feature, infer_reward, loss_reg, loss_reproj, RewardConfig};
use rge_core::splat::CameraView;
use rge_core::train::losses::{loss_ie, loss_io};
use rge_core::train::{init_from_pointcloud, phase1_train, scene_extent, SceneAdam, TrainConfig};
use rge_core::world::{gen_scene, gen_trajectory, sample_pointcloud, synth_prior, CorruptionConfig, PriorSample, SceneConfig};

fn pad_to_multiple(f: &FeatureMap, m: usize) -> FeatureMap {
    let h = f.height.div_ceil(m) * m;
    let w = f.width.div_ceil(m) * m;
    let mut out = FeatureMap::zeros(f.channels, h, w);
    for c in 0..f.channels {
        for y in 0..f.height {
            for x in 0..f.width {
                out.data[(c * h + y) * w + x] = f.data[(c * f.height + y) * f.width + x];
            }
        }
    }
    out
}

fn feature_to_gray(f: &FeatureMap, h: usize, w: usize) -> ImageGray {
    let mut g = ImageGray::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            g.data[y * w + x] = f.data[y * f.width + x];
        }
    }
    g
}

#[test]
#[ignore]
fn probe_joint() {
    let seed: u64 = std::env::var("PROBE_SEED").ok().and_then(|s| s.parse().ok()).unwrap_or(0);
    let side = 32;
    let scfg = SceneConfig { splat_budget: 2500, path_length: 30.0, image_width: side, image_height: side, focal: 0.8 * side as f64 };
    let scene = gen_scene(seed, &scfg);
    let traj = gen_trajectory(&scfg, &[0.0, 3.5], 12);
    let opts = RenderOptions::default();
    let mut train_views: Vec<(CameraView, ImageRgb)> = Vec::new();
    for (i, (_, cam)) in traj.original().views.iter().enumerate() {
        if i % 5 != 0 { train_views.push((cam.clone(), render(&scene.gaussians, cam, &opts).rgb)); }
    }
    let cloud = sample_pointcloud(&scene, traj.original(), 2, 100_000);
    let cfg = TrainConfig { seed, ..TrainConfig::default() };
    let mut gs = init_from_pointcloud(&cloud, cfg.init_points());
    let priors: Vec<PriorSample> = traj.lanes[1].views.iter()
        .map(|(vid, cam)| synth_prior(&scene, vid, cam, &cloud, &CorruptionConfig { severity: 0.25 }, seed ^ 0xabcd).unwrap())
        .collect();
    if std::env::var("PROBE_P1_PRIORS").is_ok() {
        let mut p1_views = train_views.clone();
        for p in &priors { p1_views.push((p.cam.clone(), p.image.clone())); }
        phase1_train(&mut gs, &p1_views, &cfg).unwrap();
    } else {
        phase1_train(&mut gs, &train_views, &cfg).unwrap();
    }
    let rcfg = RewardConfig { anti_collapse: true, anti_collapse_weight: 10.0, anti_collapse_tau: 0.7, ..RewardConfig::default() };
    let mut net = build_reward_net(&rcfg, seed);

    // inline joint loop with per-class force diagnostics
    let iters = rcfg.joint_iters(cfg.desk_scale);
        let extent = scene_extent(&gs);
    let mut scene_opt = SceneAdam::new(&gs, extent, &cfg);
    let mut net_opt = OptimizerState::for_net(AdamWConfig::default(), &net);
    for it in 0..iters {
        let prior = &priors[it % priors.len()];
        let cam = &prior.cam;
        net.zero_grad();
        let input = pad_to_multiple(&image_to_feature(&prior.image), 8);
        let out = net.forward(input).unwrap();
        let conf = feature_to_gray(&out, cam.height, cam.width);

        let (_l_rp, d_rp) = loss_reproj(&conf, &prior.reproj, &prior.reproj_valid, &prior.image).unwrap();
        let (_l_rg, d_rg) = loss_reg(&conf);
        let rendered = render(&gs, cam, &opts);
        let l_ie = loss_ie(&rendered.rgb, &prior.image, &conf).unwrap();

        if it % 25 == 0 || it == iters - 1 {
            let mask = &prior.artifact_mask;
            let mut s = [[0.0f64; 5]; 2]; // [class][conf, d_rp, d_rg, d_ie, resid]
            let mut n = [0.0f64; 2];
            for p in 0..conf.data.len() {
                let k = if mask.data[p] { 1 } else { 0 };
                let resid: f64 = (0..3).map(|c| (rendered.rgb.data[3 * p + c] - prior.image.data[3 * p + c]).abs()).sum::<f64>() / 3.0;
                s[k][0] += conf.data[p];
                s[k][1] += rcfg.lambda_reproj * d_rp.data[p];
                s[k][2] += rcfg.lambda_reg * d_rg.data[p];
                s[k][3] += l_ie.grad_confidence.data[p];
                s[k][4] += resid;
                n[k] += 1.0;
            }
            for k in 0..2 {
                for v in s[k].iter_mut() { *v /= n[k].max(1.0); }
            }
            let au = rge_core::metrics::reward_auroc(&conf, mask);
            let mut qs = [Vec::new(), Vec::new()];
            for p in 0..conf.data.len() {
                qs[if mask.data[p] { 1 } else { 0 }].push(conf.data[p]);
            }
            for q in qs.iter_mut() { q.sort_by(|a, b| a.partial_cmp(b).unwrap()); }
            let pick = |v: &Vec<f64>, f: f64| v[((v.len() - 1) as f64 * f) as usize];
            println!("      clean q10/50/90 {:.2}/{:.2}/{:.2} | art q10/50/90 {:.2}/{:.2}/{:.2}",
                pick(&qs[0], 0.1), pick(&qs[0], 0.5), pick(&qs[0], 0.9),
                pick(&qs[1], 0.1), pick(&qs[1], 0.5), pick(&qs[1], 0.9));
            println!(
                "it {it:4}: auroc {au:.3} clean conf {:.3} rp {:+.2e} rg {:+.2e} ie {:+.2e} resid {:.4} | art conf {:.3} rp {:+.2e} rg {:+.2e} ie {:+.2e} resid {:.4}",
                s[0][0], s[0][1], s[0][2], s[0][3], s[0][4], s[1][0], s[1][1], s[1][2], s[1][3], s[1][4]
            );
        }

        let mut d_conf = d_rp;
        for p in 0..d_conf.data.len() {
            d_conf.data[p] = rcfg.lambda_reproj * d_conf.data[p]
                + rcfg.lambda_reg * d_rg.data[p]
                + l_ie.grad_confidence.data[p];
        }
        let hw = (cam.width * cam.height) as f64;
        if rcfg.anti_collapse {
            let mean_c = conf.data.iter().sum::<f64>() / hw;
            let gap = (rcfg.anti_collapse_tau - mean_c).max(0.0);
            let dmean = -2.0 * rcfg.anti_collapse_weight * gap / hw;
            d_conf.data.iter_mut().for_each(|g| *g += dmean);
        }
        let mut upstream = FeatureMap::zeros(1, out.height, out.width);
        for y in 0..cam.height {
            for x in 0..cam.width {
                upstream.data[y * out.width + x] = d_conf.data[y * cam.width + x];
            }
        }
        net.backward(&upstream).unwrap();
        let lr = reward_lr_at(it, iters).unwrap();
        net_opt.step_net(&mut net, lr).unwrap();

        let freeze_scene = std::env::var("PROBE_FREEZE_SCENE").is_ok();
        if !freeze_scene {
            let mut grads = render_backward(&mut gs, cam, &l_ie.grad_image, &opts).unwrap();
            let (ocam, ogt) = &train_views[it % train_views.len()];
            let oout = render(&gs, ocam, &opts);
            let l_io = loss_io(&oout.rgb, ogt).unwrap();
            let og = render_backward(&mut gs, ocam, &l_io.grad, &opts).unwrap();
            for (a, b) in grads.grads.iter_mut().zip(&og.grads) {
                a.position += b.position;
                a.rotation += b.rotation;
                a.log_scale += b.log_scale;
                a.opacity_logit += b.opacity_logit;
                a.color += b.color;
            }
            scene_opt.step(&mut gs, &grads.grads);
        }
    }

    // ascii dump of view 0: confidence / mask / per-pixel residual
    {
        let prior = &priors[0];
        let map = infer_reward(&mut net, &prior.image, &prior.view_id).unwrap();
        let rendered = render(&gs, &prior.cam, &opts);
        let glyph = |v: f64| b"0123456789"[(v.clamp(0.0, 1.0) * 9.999) as usize] as char;
        println!("conf | mask | resid for {}", prior.view_id);
        for y in 0..32 {
            let mut row = String::new();
            for x in 0..32 { row.push(glyph(map.values.data[y * 32 + x])); }
            row.push_str("  ");
            for x in 0..32 { row.push(if prior.artifact_mask.data[y * 32 + x] { '#' } else { '.' }); }
            row.push_str("  ");
            for x in 0..32 {
                let p = y * 32 + x;
                let r: f64 = (0..3).map(|c| (rendered.rgb.data[3 * p + c] - prior.image.data[3 * p + c]).abs()).sum::<f64>() / 3.0;
                row.push(glyph(r * 2.0));
            }
            println!("{row}");
        }
    }
    let mut auroc_sum = 0.0;
    for prior in &priors {
        let map = infer_reward(&mut net, &prior.image, &prior.view_id).unwrap();
        let a = rge_core::metrics::reward_auroc(&map.values, &prior.artifact_mask);
        auroc_sum += a;
        let lo = map.values.data.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = map.values.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        println!("{}: auroc {a:.3}, conf range [{lo:.4}, {hi:.4}]", map.source_view);
    }
    println!("mean auroc {:.3}", auroc_sum / priors.len() as f64);
}
