//! Encoder pretraining and full dual-loss training with rotation
//! augmentation.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::model::Autoencoder;
use super::{normalize_joints, volume_to_tensor, NetError};
use crate::grid::VoxelGrid;
use crate::resample::rotate_volume;
use crate::skeleton::{rotate_skeleton, SkeletonFrame};
use crate::tensor::{Scalar, Tape, Tensor};

/// One supervised sample: the tricubic-upsampled coarse hull, the native
/// high-resolution hull, and the ground-truth joints.
#[derive(Debug, Clone)]
pub struct TrainingTriplet {
    pub input_volume: VoxelGrid,
    pub target_volume: VoxelGrid,
    pub target_joints: SkeletonFrame,
}

impl TrainingTriplet {
    pub fn validate(&self) -> Result<(), NetError> {
        if self.input_volume.resolution() != self.target_volume.resolution() {
            return Err(NetError::WrongInputResolution {
                expected: self.target_volume.resolution(),
                got: self.input_volume.resolution(),
            });
        }
        if self.input_volume.bbox_min() != self.target_volume.bbox_min()
            || self.input_volume.bbox_max() != self.target_volume.bbox_max()
        {
            return Err(NetError::UnrealizableSchedule(
                "triplet input and target volumes must share a bounding box".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Augmentation {
    On,
    Off,
}

/// Full training: per-epoch shuffled batches, optional per-sample random
/// vertical-axis rotation applied consistently to both volumes and the
/// joints, Adadelta updates on the dual loss. Returns per-epoch mean loss.
pub fn train<T: Scalar>(
    model: &mut Autoencoder<T>,
    triplets: &[TrainingTriplet],
    epochs: usize,
    augmentation: Augmentation,
    seed: u64,
) -> Result<Vec<f64>, NetError> {
    run_training(model, triplets, epochs, augmentation, seed, Phase::Full)
}

/// Encoder pretraining: minimizes the joint-position MSE alone, updating
/// only the encoder and the bottleneck up to the latent layer. Decoder
/// parameters are never touched.
pub fn pretrain_encoder<T: Scalar>(
    model: &mut Autoencoder<T>,
    triplets: &[TrainingTriplet],
    epochs: usize,
    seed: u64,
) -> Result<Vec<f64>, NetError> {
    run_training(
        model,
        triplets,
        epochs,
        Augmentation::Off,
        seed,
        Phase::EncoderOnly,
    )
}

#[derive(Clone, Copy, PartialEq)]
enum Phase {
    Full,
    EncoderOnly,
}

fn run_training<T: Scalar>(
    model: &mut Autoencoder<T>,
    triplets: &[TrainingTriplet],
    epochs: usize,
    augmentation: Augmentation,
    seed: u64,
    phase: Phase,
) -> Result<Vec<f64>, NetError> {
    if triplets.is_empty() {
        return Err(NetError::EmptyDataset);
    }
    for t in triplets {
        t.validate()?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let batch_size = model.config().batch_size.max(1);
    let lambda = model.config().lambda;
    let mut history = Vec::with_capacity(epochs);

    for epoch in 0..epochs {
        let mut order: Vec<usize> = (0..triplets.len()).collect();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;

        for chunk in order.chunks(batch_size) {
            let mut inputs = Vec::with_capacity(chunk.len());
            let mut targets = Vec::with_capacity(chunk.len());
            let mut joints = Vec::with_capacity(chunk.len());
            for &idx in chunk {
                let t = &triplets[idx];
                if augmentation == Augmentation::On {
                    let angle = rng.gen::<f64>() * std::f64::consts::TAU;
                    let center = t.input_volume.bbox_center();
                    inputs.push(rotate_volume(&t.input_volume, angle));
                    targets.push(rotate_volume(&t.target_volume, angle));
                    joints.push(rotate_skeleton(&t.target_joints, angle, center));
                } else {
                    inputs.push(t.input_volume.clone());
                    targets.push(t.target_volume.clone());
                    joints.push(t.target_joints.clone());
                }
            }

            let input_batch = stack_volumes::<T>(&inputs);
            let joint_batch = stack_joints::<T>(&joints, model);

            let mut tape: Tape<T> = Tape::new();
            let x = tape.constant(input_batch);
            let loss_node = match phase {
                Phase::Full => {
                    let target_batch = stack_volumes::<T>(&targets);
                    let (latent, output) = model.forward_on_tape(&mut tape, x)?;
                    let tj = tape.constant(joint_batch);
                    let tv = tape.constant(target_batch);
                    model.dual_loss_on_tape(&mut tape, latent, output, tj, tv, lambda)?
                }
                Phase::EncoderOnly => {
                    let latent = model.encode_on_tape(&mut tape, x)?;
                    let tj = tape.constant(joint_batch);
                    tape.mse(latent, tj)?
                }
            };

            let loss = tape.value(loss_node).item().to_f64();
            if !loss.is_finite() {
                return Err(NetError::DivergedLoss { epoch, loss });
            }
            model.params_mut().zero_grads();
            tape.backward(loss_node, model.params_mut())?;
            let (params, optimizer) = model.params_and_optimizer_mut();
            optimizer.step(params);
            epoch_loss += loss * chunk.len() as f64;
        }
        history.push(epoch_loss / triplets.len() as f64);
    }
    Ok(history)
}

fn stack_volumes<T: Scalar>(volumes: &[VoxelGrid]) -> Tensor<T> {
    let first = volume_to_tensor::<T>(&volumes[0]);
    let mut shape = vec![volumes.len()];
    shape.extend_from_slice(first.shape());
    let mut data = Vec::with_capacity(first.len() * volumes.len());
    data.extend_from_slice(first.data());
    for v in &volumes[1..] {
        data.extend_from_slice(volume_to_tensor::<T>(v).data());
    }
    Tensor::from_vec(&shape, data).expect("uniform volume shapes")
}

fn stack_joints<T: Scalar>(frames: &[SkeletonFrame], model: &Autoencoder<T>) -> Tensor<T> {
    let bbox = model.config().norm_bbox;
    let width = model.config().latent_width();
    let mut data = Vec::with_capacity(frames.len() * width);
    for f in frames {
        let flat = normalize_joints(f, &bbox);
        assert_eq!(flat.len(), width, "joint count must match the config");
        data.extend(flat.into_iter().map(T::from_f64));
    }
    Tensor::from_vec(&[frames.len(), width], data).expect("uniform joint widths")
}
