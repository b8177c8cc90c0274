// Scratch calibration harness for the desk-scale training run. Not part of
// the deliverable; removed before finalizing.

use std::time::Instant;

use volcap::eval::{per_joint_error, voxel_mse_report, JointSubset};
use volcap::hull::FusionMode;
use volcap::network::{
    build_network, pretrain_encoder, train, Augmentation, NetworkConfig, TrainingTriplet,
};
use volcap::synth::{generate_dataset, BodyModel, MotionSpec, RigSpec};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let channels: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(6);
    let fc: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(64);
    let pre_epochs: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(30);
    let epochs: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(30);
    let frames: usize = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(200);

    let t0 = Instant::now();
    let body = BodyModel::humanoid17();
    let motion = MotionSpec::walk17(frames);
    let rig = RigSpec::ring4();
    let dataset = generate_dataset(
        &body,
        &motion,
        &rig,
        32,
        1,
        2024,
        FusionMode::ProductOfProbabilities,
    )
    .unwrap();
    let triplets = dataset.triplets().unwrap();
    println!("synth: {:.1}s for {} frames", t0.elapsed().as_secs_f64(), frames);

    let train_set: Vec<TrainingTriplet> = triplets
        .iter()
        .enumerate()
        .filter(|(i, _)| i % 5 != 4)
        .map(|(_, t)| t.clone())
        .collect();
    let held_out: Vec<TrainingTriplet> = triplets
        .iter()
        .enumerate()
        .filter(|(i, _)| i % 5 == 4)
        .map(|(_, t)| t.clone())
        .collect();
    println!("split: {} train / {} held out", train_set.len(), held_out.len());

    let config = NetworkConfig::paper(1, 17)
        .unwrap()
        .with_max_channels(channels)
        .with_fc_widths(fc, fc)
        .with_norm_bbox(dataset.bbox)
        .with_seed(7)
        .with_batch_size(4);
    let mut model = build_network::<f32>(config).unwrap();

    let t1 = Instant::now();
    let pre_history = pretrain_encoder(&mut model, &train_set, pre_epochs, 11).unwrap();
    println!(
        "pretrain {} epochs: {:.1}s, loss {:.4e} -> {:.4e}",
        pre_epochs,
        t1.elapsed().as_secs_f64(),
        pre_history.first().unwrap_or(&f64::NAN),
        pre_history.last().unwrap_or(&f64::NAN)
    );

    let t2 = Instant::now();
    let history = train(&mut model, &train_set, epochs, Augmentation::On, 13).unwrap();
    println!(
        "train {} epochs: {:.1}s ({:.1}s/epoch), dual loss {:.4e} -> {:.4e} (ratio {:.1}x)",
        epochs,
        t2.elapsed().as_secs_f64(),
        t2.elapsed().as_secs_f64() / epochs as f64,
        history[0],
        history.last().unwrap(),
        history[0] / history.last().unwrap()
    );

    // held-out evaluation
    let mut est = Vec::new();
    let mut gt = Vec::new();
    let mut outputs = Vec::new();
    let mut inputs = Vec::new();
    let mut truths = Vec::new();
    for (i, t) in held_out.iter().enumerate() {
        // reconstruct the coarse grid stored in the dataset
        let coarse = &dataset
            .frames
            .iter()
            .enumerate()
            .filter(|(j, _)| j % 5 == 4)
            .map(|(_, f)| f.coarse.clone())
            .collect::<Vec<_>>()[i];
        let (skel, refined) = model.infer(coarse).unwrap();
        est.push(skel);
        gt.push(t.target_joints.clone());
        outputs.push(refined);
        inputs.push(t.input_volume.clone());
        truths.push(t.target_volume.clone());
    }
    let pose = per_joint_error(&est, &gt, &JointSubset::identity(17)).unwrap();
    let height: f64 = gt.iter().map(|f| f.height()).sum::<f64>() / gt.len() as f64;
    println!(
        "held-out pose error: {:.1} mm (10% body height = {:.1} mm) -> {}",
        pose.mean_mm,
        0.1 * height,
        if pose.mean_mm < 0.1 * height { "PASS" } else { "FAIL" }
    );
    let vol = voxel_mse_report(&outputs, &inputs, &truths).unwrap();
    println!(
        "held-out voxel MSE: output {:.4e} vs input baseline {:.4e} (ratio {:.3}) -> {}",
        vol.mean_output_mse,
        vol.mean_input_mse,
        vol.mean_output_mse / vol.mean_input_mse,
        if vol.mean_output_mse < 0.5 * vol.mean_input_mse { "PASS" } else { "FAIL" }
    );
    println!("total: {:.1}s", t0.elapsed().as_secs_f64());
}
