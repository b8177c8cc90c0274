//! Parameter allocation, forward pass, dual loss, and inference.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{LayoutPlan, NetworkConfig, SkipTap};
use super::{denormalize_joints, tensor_to_volume, volume_to_tensor, NetError};
use crate::grid::{Bbox, VoxelGrid};
use crate::optim::{AdadeltaConfig, AdadeltaState};
use crate::resample::tricubic_upsample;
use crate::skeleton::SkeletonFrame;
use crate::tensor::{NodeId, Padding, ParamId, ParamSet, Scalar, Tape, Tensor};

const POOL_WINDOW: usize = 2;
const POOL_STRIDE: usize = 2;

struct LayerIds {
    encoder: Vec<(ParamId, ParamId)>,
    bottleneck: Vec<(ParamId, ParamId)>,
    decoder: Vec<(ParamId, ParamId)>,
    /// Projection conv per skip, when tap/decoder channel counts differ.
    skip_proj: Vec<Option<(ParamId, ParamId)>>,
}

/// The assembled encoder/bottleneck/decoder with its parameters and
/// optimizer state.
pub struct Autoencoder<T: Scalar> {
    config: NetworkConfig,
    plan: LayoutPlan,
    params: ParamSet<T>,
    optimizer: AdadeltaState<T>,
    ids: LayerIds,
}

/// Allocates and initializes all parameters for `config`. Weights are
/// fan-in-scaled uniform from the config seed; biases start at zero.
pub fn build_network<T: Scalar>(config: NetworkConfig) -> Result<Autoencoder<T>, NetError> {
    let plan = config.plan()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params: ParamSet<T> = ParamSet::new();

    let init = |params: &mut ParamSet<T>,
                    name: String,
                    shape: &[usize],
                    fan_in: usize,
                    rng: &mut ChaCha8Rng|
     -> ParamId {
        let limit = (1.0 / fan_in as f64).sqrt();
        let mut t = Tensor::zeros(shape);
        for v in t.data_mut() {
            *v = T::from_f64(rng.gen_range(-limit..limit));
        }
        params.add(name, t)
    };

    let mut encoder = Vec::new();
    let mut cin = 1usize;
    for (i, l) in config.encoder.iter().enumerate() {
        let k = l.filter;
        let kernel = init(
            &mut params,
            format!("enc{i}.kernel"),
            &[k, k, k, cin, l.channels],
            k * k * k * cin,
            &mut rng,
        );
        let bias = params.add(format!("enc{i}.bias"), Tensor::zeros(&[l.channels]));
        encoder.push((kernel, bias));
        cin = l.channels;
    }

    let mut bottleneck = Vec::new();
    let mut width = plan.flatten_len;
    for (i, &out) in config.bottleneck.iter().enumerate() {
        let weight = init(
            &mut params,
            format!("fc{i}.weight"),
            &[width, out],
            width,
            &mut rng,
        );
        let bias = params.add(format!("fc{i}.bias"), Tensor::zeros(&[out]));
        bottleneck.push((weight, bias));
        width = out;
    }

    let mut decoder = Vec::new();
    let mut dec_cin = 1usize; // seed volume has one channel
    for (i, l) in config.decoder.iter().enumerate() {
        let k = l.filter;
        // kernel layout [k,k,k,Cout,Cin]: the conv kernel of the transposed
        // direction
        let kernel = init(
            &mut params,
            format!("dec{i}.kernel"),
            &[k, k, k, l.channels, dec_cin],
            k * k * k * dec_cin,
            &mut rng,
        );
        let bias = params.add(format!("dec{i}.bias"), Tensor::zeros(&[l.channels]));
        decoder.push((kernel, bias));
        dec_cin = l.channels;
    }

    let mut skip_proj = Vec::new();
    for (i, &(tap_c, dec_c)) in plan.skip_channels.iter().enumerate() {
        if tap_c == dec_c {
            skip_proj.push(None);
        } else {
            let kernel = init(
                &mut params,
                format!("skip{i}.kernel"),
                &[1, 1, 1, tap_c, dec_c],
                tap_c,
                &mut rng,
            );
            let bias = params.add(format!("skip{i}.bias"), Tensor::zeros(&[dec_c]));
            skip_proj.push(Some((kernel, bias)));
        }
    }

    let optimizer = AdadeltaState::new(&params, AdadeltaConfig::default());
    Ok(Autoencoder {
        config,
        plan,
        params,
        optimizer,
        ids: LayerIds {
            encoder,
            bottleneck,
            decoder,
            skip_proj,
        },
    })
}

impl<T: Scalar> Autoencoder<T> {
    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn plan(&self) -> &LayoutPlan {
        &self.plan
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub(crate) fn params_and_optimizer_mut(
        &mut self,
    ) -> (&mut ParamSet<T>, &mut AdadeltaState<T>) {
        (&mut self.params, &mut self.optimizer)
    }

    pub fn optimizer(&self) -> &AdadeltaState<T> {
        &self.optimizer
    }

    /// Rebuilds a model from checkpointed pieces. The parameter set must
    /// have been produced by `build_network` with the same config.
    pub fn from_parts(
        config: NetworkConfig,
        params: ParamSet<T>,
        optimizer: AdadeltaState<T>,
    ) -> Result<Self, NetError> {
        let rebuilt = build_network::<T>(config)?;
        for id in rebuilt.params.ids() {
            let name = &rebuilt.params.get(id).name;
            let found = params.by_name(name).ok_or_else(|| {
                NetError::UnrealizableSchedule(format!("checkpoint is missing parameter {name}"))
            })?;
            if params.get(found).value.shape() != rebuilt.params.get(id).value.shape() {
                return Err(NetError::UnrealizableSchedule(format!(
                    "checkpoint parameter {name} has shape {:?}, expected {:?}",
                    params.get(found).value.shape(),
                    rebuilt.params.get(id).value.shape()
                )));
            }
        }
        Ok(Autoencoder {
            params,
            optimizer,
            ..rebuilt
        })
    }

    /// Ids of the parameters the encoder pretraining phase updates:
    /// encoder convolutions plus the bottleneck up to and including the
    /// latent layer.
    pub fn encoder_param_ids(&self) -> Vec<ParamId> {
        let mut ids: Vec<ParamId> = Vec::new();
        for &(k, b) in &self.ids.encoder {
            ids.push(k);
            ids.push(b);
        }
        for &(w, b) in &self.ids.bottleneck[..3] {
            ids.push(w);
            ids.push(b);
        }
        ids
    }

    pub fn decoder_param_ids(&self) -> Vec<ParamId> {
        let mut ids: Vec<ParamId> = Vec::new();
        ids.push(self.ids.bottleneck[3].0);
        ids.push(self.ids.bottleneck[3].1);
        for &(k, b) in &self.ids.decoder {
            ids.push(k);
            ids.push(b);
        }
        for proj in self.ids.skip_proj.iter().flatten() {
            ids.push(proj.0);
            ids.push(proj.1);
        }
        ids
    }

    /// Records the full forward pass on `tape`; returns the latent
    /// (3J-wide, linear) and output-volume nodes.
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape<T>,
        input: NodeId,
    ) -> Result<(NodeId, NodeId), NetError> {
        self.forward_with_params(&self.params, tape, input)
    }

    /// Records the encoder + bottleneck-through-latent only; the graph the
    /// pretraining phase optimizes.
    pub(crate) fn encode_on_tape(
        &self,
        tape: &mut Tape<T>,
        input: NodeId,
    ) -> Result<NodeId, NetError> {
        let (latent, _, _) = self.encode_with_params(&self.params, tape, input)?;
        Ok(latent)
    }

    /// Forward pass reading weights from an explicit parameter set (used by
    /// the finite-difference harness to evaluate perturbed weights).
    pub fn forward_with_params(
        &self,
        params: &ParamSet<T>,
        tape: &mut Tape<T>,
        input: NodeId,
    ) -> Result<(NodeId, NodeId), NetError> {
        let (latent, enc_outputs, batch) = self.encode_with_params(params, tape, input)?;
        let output = self.decode_with_params(params, tape, latent, input, &enc_outputs, batch)?;
        Ok((latent, output))
    }

    fn encode_with_params(
        &self,
        params: &ParamSet<T>,
        tape: &mut Tape<T>,
        input: NodeId,
    ) -> Result<(NodeId, Vec<NodeId>, Option<usize>), NetError> {
        let shape = tape.value(input).shape().to_vec();
        let batch = match shape[..] {
            [d, h, w, c] => {
                self.check_input_spatial([d, h, w], c)?;
                None
            }
            [b, d, h, w, c] => {
                self.check_input_spatial([d, h, w], c)?;
                Some(b)
            }
            _ => {
                return Err(NetError::WrongInputResolution {
                    expected: [self.config.input_resolution; 3],
                    got: [0; 3],
                })
            }
        };

        let mut x = input;
        let mut enc_outputs = Vec::with_capacity(self.config.encoder.len());
        for (l, &(kid, bid)) in self.config.encoder.iter().zip(&self.ids.encoder) {
            let k = tape.param(params, kid);
            let b = tape.param(params, bid);
            x = tape.conv3d(x, k, b, l.stride, Padding::Same)?;
            x = tape.relu(x);
            if l.pool_after {
                x = tape.maxpool3d(x, POOL_WINDOW, POOL_STRIDE)?;
            }
            enc_outputs.push(x);
        }

        // Bottleneck; the latent layer (index 2) stays linear.
        let flat_shape = match batch {
            Some(b) => vec![b, self.plan.flatten_len],
            None => vec![self.plan.flatten_len],
        };
        x = tape.reshape(x, &flat_shape)?;
        for (i, &(wid, bid)) in self.ids.bottleneck[..3].iter().enumerate() {
            let w = tape.param(params, wid);
            let b = tape.param(params, bid);
            x = tape.fully_connected(x, w, b)?;
            if i < 2 {
                x = tape.relu(x);
            }
        }
        Ok((x, enc_outputs, batch))
    }

    fn decode_with_params(
        &self,
        params: &ParamSet<T>,
        tape: &mut Tape<T>,
        latent: NodeId,
        input: NodeId,
        enc_outputs: &[NodeId],
        batch: Option<usize>,
    ) -> Result<NodeId, NetError> {
        // Final bottleneck layer lifts the latent into the decoder seed.
        let (wid, bid) = self.ids.bottleneck[3];
        let w = tape.param(params, wid);
        let b = tape.param(params, bid);
        let mut x = tape.fully_connected(latent, w, b)?;
        x = tape.relu(x);

        let s = self.plan.seed_side;
        let seed_shape = match batch {
            Some(b) => vec![b, s, s, s, 1],
            None => vec![s, s, s, 1],
        };
        x = tape.reshape(x, &seed_shape)?;
        let last = self.config.decoder.len() - 1;
        for (i, (l, &(kid, bid))) in self
            .config
            .decoder
            .iter()
            .zip(&self.ids.decoder)
            .enumerate()
        {
            let k = tape.param(params, kid);
            let b = tape.param(params, bid);
            let sp = self.plan.dec_spatial[i];
            x = tape.deconv3d(x, k, b, l.stride, l.padding, [sp, sp, sp])?;
            if i != last {
                x = tape.relu(x);
            }
            // Skip joins after this layer's activation.
            for (si, skip) in self.config.skips.iter().enumerate() {
                if skip.after_decoder_layer != i {
                    continue;
                }
                let tap = match skip.tap {
                    SkipTap::Input => input,
                    SkipTap::Encoder(j) => enc_outputs[j],
                };
                let tap = match self.ids.skip_proj[si] {
                    Some((pk, pb)) => {
                        let pk = tape.param(params, pk);
                        let pb = tape.param(params, pb);
                        tape.conv3d(tap, pk, pb, 1, Padding::Same)?
                    }
                    None => tap,
                };
                x = tape.mean_combine(x, tap)?;
            }
        }
        Ok(x)
    }

    /// Dual loss: volume reconstruction MSE plus `lambda` times the
    /// joint-position MSE (which the MSE's mean already normalizes by the
    /// 3J latent width).
    pub fn dual_loss_on_tape(
        &self,
        tape: &mut Tape<T>,
        latent: NodeId,
        output: NodeId,
        target_joints: NodeId,
        target_volume: NodeId,
        lambda: f64,
    ) -> Result<NodeId, NetError> {
        let volume_term = tape.mse(output, target_volume)?;
        let joint_term = tape.mse(latent, target_joints)?;
        let scaled = tape.scale(joint_term, T::from_f64(lambda));
        Ok(tape.add(volume_term, scaled)?)
    }

    /// Single-input forward pass; returns the latent vector and the output
    /// volume tensor.
    pub fn run(&self, input: &Tensor<T>) -> Result<(Vec<T>, Tensor<T>), NetError> {
        let mut tape = Tape::new();
        let x = tape.constant(input.clone());
        let (latent, output) = self.forward_on_tape(&mut tape, x)?;
        Ok((
            tape.value(latent).data().to_vec(),
            tape.value(output).clone(),
        ))
    }

    /// Full inference: tricubic-upsamples a coarse hull to the network
    /// resolution, runs the forward pass, denormalizes the latent into
    /// world-millimetre joints, and clamps the refined volume to `[0, 1]`.
    pub fn infer(&self, coarse: &VoxelGrid) -> Result<(SkeletonFrame, VoxelGrid), NetError> {
        let expected = self.config.input_resolution / self.config.scale;
        if coarse.resolution() != [expected; 3] {
            return Err(NetError::WrongInputResolution {
                expected: [expected; 3],
                got: coarse.resolution(),
            });
        }
        let upsampled = tricubic_upsample(coarse, self.config.scale)?;
        let input = volume_to_tensor::<T>(&upsampled);
        let (latent, output) = self.run(&input)?;
        let flat: Vec<f64> = latent.iter().map(|&v| Scalar::to_f64(v)).collect();
        let skeleton = denormalize_joints(&flat, &self.config.norm_bbox);
        let bbox = Bbox::new(
            [
                coarse.bbox_min().x,
                coarse.bbox_min().y,
                coarse.bbox_min().z,
            ],
            [
                coarse.bbox_max().x,
                coarse.bbox_max().y,
                coarse.bbox_max().z,
            ],
        );
        let volume = tensor_to_volume(&output, bbox)?;
        Ok((skeleton, volume))
    }

    fn check_input_spatial(&self, spatial: [usize; 3], channels: usize) -> Result<(), NetError> {
        let r = self.config.input_resolution;
        if spatial != [r; 3] || channels != 1 {
            return Err(NetError::WrongInputResolution {
                expected: [r; 3],
                got: spatial,
            });
        }
        Ok(())
    }
}


#[cfg(test)]
mod tests {





    use super::test_support::miniature_config;
    use super::*;
    use crate::tensor::{check_gradients, seeded_tensor};

    #[test]
    fn paper_forward_shapes_hold_at_reduced_channels() {
        for n in [1usize, 2] {
            let config = NetworkConfig::paper(n, 26)
                .unwrap()
                .with_max_channels(2)
                .with_fc_widths(16, 16);
            let model: Autoencoder<f32> = build_network(config).unwrap();
            let r = 32 * n;
            let input = Tensor::zeros(&[r, r, r, 1]);
            let (latent, output) = model.run(&input).unwrap();
            assert_eq!(latent.len(), 78, "latent width at n={n}");
            assert_eq!(output.shape(), &[r, r, r, 1], "output shape at n={n}");
        }
    }

    #[test]
    fn zero_weights_give_zero_latent() {
        let config = miniature_config(3);
        let mut model: Autoencoder<f64> = build_network(config).unwrap();
        for id in model.params.ids().collect::<Vec<_>>() {
            model.params.get_mut(id).value.data_mut().fill(0.0);
        }
        let input = Tensor::filled(&[8, 8, 8, 1], 0.5);
        let (latent, _) = model.run(&input).unwrap();
        assert!(latent.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_is_bitwise_deterministic() {
        let config = miniature_config(7);
        let model: Autoencoder<f64> = build_network(config).unwrap();
        let input = seeded_tensor(&[8, 8, 8, 1], 50);
        let (l1, o1) = model.run(&input).unwrap();
        let (l2, o2) = model.run(&input).unwrap();
        assert!(l1
            .iter()
            .zip(&l2)
            .all(|(a, b)| a.to_bits() == b.to_bits()));
        assert!(o1
            .data()
            .iter()
            .zip(o2.data())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn batched_and_single_forward_agree() {
        let config = miniature_config(11);
        let model: Autoencoder<f64> = build_network(config).unwrap();
        let a = seeded_tensor(&[8, 8, 8, 1], 60);
        let b = seeded_tensor(&[8, 8, 8, 1], 61);
        let mut batch = Tensor::zeros(&[2, 8, 8, 8, 1]);
        batch.data_mut()[..512].copy_from_slice(a.data());
        batch.data_mut()[512..].copy_from_slice(b.data());
        let (la, oa) = model.run(&a).unwrap();
        let (lb, ob) = model.run(&b).unwrap();
        let mut tape: Tape<f64> = Tape::new();
        let x = tape.constant(batch);
        let (latent, output) = model.forward_on_tape(&mut tape, x).unwrap();
        assert_eq!(tape.value(latent).shape(), &[2, 6]);
        assert_eq!(tape.value(output).shape(), &[2, 8, 8, 8, 1]);
        let lbatch = tape.value(latent).data();
        for (i, &v) in la.iter().enumerate() {
            assert!((lbatch[i] - v).abs() < 1e-12);
        }
        for (i, &v) in lb.iter().enumerate() {
            assert!((lbatch[6 + i] - v).abs() < 1e-12);
        }
        let obatch = tape.value(output).data();
        for (i, &v) in oa.data().iter().enumerate() {
            assert!((obatch[i] - v).abs() < 1e-12);
        }
        for (i, &v) in ob.data().iter().enumerate() {
            assert!((obatch[512 + i] - v).abs() < 1e-12);
        }
    }

    #[test]
    fn dual_loss_analytic_cases() {
        let config = miniature_config(13);
        let model: Autoencoder<f64> = build_network(config).unwrap();
        let mut tape: Tape<f64> = Tape::new();

        // perfect prediction on both heads -> 0
        let latent = tape.constant(Tensor::filled(&[6], 0.25));
        let volume = tape.constant(Tensor::filled(&[8, 8, 8, 1], 0.5));
        let tj = tape.constant(Tensor::filled(&[6], 0.25));
        let tv = tape.constant(Tensor::filled(&[8, 8, 8, 1], 0.5));
        let loss = model
            .dual_loss_on_tape(&mut tape, latent, volume, tj, tv, 1e-3)
            .unwrap();
        assert_eq!(tape.value(loss).item(), 0.0);

        // volume perfect, one joint coordinate off by delta:
        // loss = lambda * delta^2 / (3J)
        let delta = 0.3;
        let mut off = Tensor::filled(&[6], 0.25);
        off.data_mut()[4] += delta;
        let latent = tape.constant(off);
        let loss = model
            .dual_loss_on_tape(&mut tape, latent, volume, tj, tv, 1e-3)
            .unwrap();
        let expect = 1e-3 * delta * delta / 6.0;
        assert!((tape.value(loss).item() - expect).abs() < 1e-15);
    }

    /// End-to-end gradient check on the miniature config: every layer kind
    /// participates, analytic vs central finite differences.
    ///
    /// Relu and max-pool are piecewise-linear; a fixture whose forward pass
    /// runs close to a kink makes the numeric derivative meaningless. The
    /// seed scan below selects a fixture with a safe margin before checking.
    #[test]
    fn end_to_end_gradients_match_finite_differences() {
        let eps = 1e-5;
        // 30x the probe step: single-coordinate perturbations move any
        // pre-activation by at most a few eps through fan-in-scaled weights.
        let margin_needed = 3e-4;
        let mut chosen = None;
        for fixture_seed in 0..60u64 {
            let config = miniature_config(17 + fixture_seed);
            let mut model: Autoencoder<f64> = build_network(config).unwrap();
            // zero-initialized biases leave exact-zero pre-activations in
            // sparsely reached deconv outputs; give every bias a small
            // generic value so kinks sit away from the operating point
            for (i, id) in model.params.ids().collect::<Vec<_>>().into_iter().enumerate() {
                if model.params.get(id).name.ends_with(".bias") {
                    let shape = model.params.get(id).value.shape().to_vec();
                    let noise =
                        seeded_tensor::<f64>(&shape, 900 + fixture_seed * 37 + i as u64);
                    model.params.get_mut(id).value = noise.map(|v| v * 0.2);
                }
            }
            let input =
                seeded_tensor::<f64>(&[8, 8, 8, 1], 70 + fixture_seed).map(|v| v * 0.5 + 0.5);
            let mut tape: Tape<f64> = Tape::new();
            let x = tape.constant(input.clone());
            model.forward_on_tape(&mut tape, x).unwrap();
            if tape.kink_margin() > margin_needed {
                chosen = Some((model, input, fixture_seed));
                break;
            }
        }
        let (model, input, fixture_seed) =
            chosen.expect("no kink-safe fixture found in 60 seeds");
        let target_v =
            seeded_tensor::<f64>(&[8, 8, 8, 1], 171 + fixture_seed).map(|v| v * 0.5 + 0.5);
        let target_j = seeded_tensor::<f64>(&[6], 172 + fixture_seed);

        let loss_of = |params: &ParamSet<f64>| -> f64 {
            let mut tape: Tape<f64> = Tape::new();
            let x = tape.constant(input.clone());
            let (latent, output) = model.forward_with_params(params, &mut tape, x).unwrap();
            let tj = tape.constant(target_j.clone());
            let tv = tape.constant(target_v.clone());
            let loss = model
                .dual_loss_on_tape(&mut tape, latent, output, tj, tv, 0.5)
                .unwrap();
            tape.value(loss).item()
        };

        let mut work = model.params.clone();
        {
            let mut tape: Tape<f64> = Tape::new();
            let x = tape.constant(input.clone());
            let (latent, output) = model.forward_on_tape(&mut tape, x).unwrap();
            let tj = tape.constant(target_j.clone());
            let tv = tape.constant(target_v.clone());
            let loss = model
                .dual_loss_on_tape(&mut tape, latent, output, tj, tv, 0.5)
                .unwrap();
            work.zero_grads();
            tape.backward(loss, &mut work).unwrap();
        }
        let ids: Vec<ParamId> = work.ids().collect();
        let report = check_gradients(&work, &ids, eps, loss_of);
        assert!(
            report.passes(1e-4),
            "end-to-end max rel err {:e} over {} coords (fixture seed {fixture_seed})",
            report.max_rel_err,
            report.checked
        );
    }

    #[test]
    fn infer_rejects_wrong_resolution() {
        let config = NetworkConfig::paper(1, 26)
            .unwrap()
            .with_max_channels(2)
            .with_fc_widths(8, 8);
        let model: Autoencoder<f32> = build_network(config).unwrap();
        let coarse = VoxelGrid::zeros(
            [16, 16, 16],
            nalgebra::Point3::origin(),
            nalgebra::Point3::new(1.0, 1.0, 1.0),
        );
        assert!(matches!(
            model.infer(&coarse),
            Err(NetError::WrongInputResolution { .. })
        ));
    }

    #[test]
    fn infer_produces_upscaled_clamped_volume_and_joints() {
        let config = NetworkConfig::paper(2, 26)
            .unwrap()
            .with_max_channels(2)
            .with_fc_widths(8, 8);
        let model: Autoencoder<f32> = build_network(config).unwrap();
        let mut coarse = VoxelGrid::zeros(
            [32, 32, 32],
            nalgebra::Point3::new(-1000.0, -1000.0, 0.0),
            nalgebra::Point3::new(1000.0, 1000.0, 2000.0),
        );
        coarse.values_mut().fill(0.4);
        let (skeleton, volume) = model.infer(&coarse).unwrap();
        assert_eq!(skeleton.joint_count(), 26);
        assert_eq!(volume.resolution(), [64, 64, 64]);
        assert!(volume.values().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}
