use rge_core::img::ImageGray;
use rge_core::nn::optim::{reward_lr_at, AdamWConfig, OptimizerState};
use rge_core::nn::FeatureMap;
use rge_core::reward::{build_reward_net, image_to_feature, RewardConfig};
use rge_core::world::{gen_scene, gen_trajectory, synth_prior, CorruptionConfig, SceneConfig};

#[test]
#[ignore]
fn probe_supervised_fit() {
    let side = 32usize;
    let scfg = SceneConfig { splat_budget: 2500, path_length: 30.0, image_width: side, image_height: side, focal: 0.8 * side as f64 };
    let scene = gen_scene(0, &scfg);
    let traj = gen_trajectory(&scfg, &[0.0, 3.5], 12);
    let cloud = rge_core::world::sample_pointcloud(&scene, traj.original(), 4, 50_000);
    let priors: Vec<_> = traj.lanes[1].views.iter()
        .map(|(vid, cam)| synth_prior(&scene, vid, cam, &cloud, &CorruptionConfig { severity: 0.25 }, 0xabcd).unwrap())
        .collect();
    let rcfg = RewardConfig::default();
    let mut net = build_reward_net(&rcfg, 0);
    let mut opt = OptimizerState::for_net(AdamWConfig::default(), &net);
    let hw = (side * side) as f64;
    for it in 0..400 {
        let prior = &priors[it % priors.len()];
        net.zero_grad();
        let input = image_to_feature(&prior.image);
        let out = net.forward(input).unwrap();
        let target: Vec<f64> = prior.artifact_mask.data.iter().map(|&m| if m { 0.0 } else { 1.0 }).collect();
        let mut loss = 0.0;
        let mut up = FeatureMap::zeros(1, out.height, out.width);
        for y in 0..side { for x in 0..side {
            let c = out.data[y * out.width + x];
            let d = c - target[y * side + x];
            loss += d * d / hw;
            up.data[y * out.width + x] = 2.0 * d / hw;
        }}
        net.backward(&up).unwrap();
        let lr = reward_lr_at(it, 400).unwrap();
        opt.step_net(&mut net, lr).unwrap();
        if it % 50 == 0 || it == 399 {
            let conf = ImageGray { width: side, height: side, data: (0..side*side).map(|p| out.data[(p / side) * out.width + p % side]).collect() };
            let auroc = rge_core::metrics::reward_auroc(&conf, &prior.artifact_mask);
            println!("it {it:4}: mse {loss:.4}, auroc(current view) {auroc:.3}");
        }
    }
}

