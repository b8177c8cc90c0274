//! Network architecture description and shape-plan validation.

use serde::{Deserialize, Serialize};

use super::NetError;
use crate::grid::Bbox;
use crate::tensor::Padding;

/// One encoder convolution layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayerSpec {
    pub channels: usize,
    pub filter: usize,
    pub stride: usize,
    /// 2x2x2 stride-2 max-pooling applied after this layer's activation.
    pub pool_after: bool,
}

/// One decoder transposed-convolution layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeconvLayerSpec {
    pub channels: usize,
    pub filter: usize,
    pub stride: usize,
    pub padding: Padding,
}

/// Where a skip connection taps the encoder side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipTap {
    /// The network input volume itself.
    Input,
    /// Output of the given encoder layer (after its pooling, if any).
    Encoder(usize),
}

/// A skip connection: encoder activation combined (mean) into the output of
/// a decoder layer of matching spatial size. A 1x1x1 projection convolution
/// is inserted automatically when channel counts differ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipSpec {
    pub tap: SkipTap,
    pub after_decoder_layer: usize,
}

/// Full architecture + training hyperparameters. The default construction
/// (`NetworkConfig::paper(n, j)`) reproduces the published layer schedule
/// for upscale factors 1, 2, and 4.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// Upscale factor n: output resolution is (32n)^3 from 32^3 input.
    pub scale: usize,
    /// Joint count J; the latent layer is 3J wide.
    pub joint_count: usize,
    /// Spatial edge length of the network input (32n for paper configs).
    pub input_resolution: usize,
    pub encoder: Vec<ConvLayerSpec>,
    /// Fully-connected widths; index 2 is the latent (must equal 3J), the
    /// last must be a perfect cube (the decoder seed volume).
    pub bottleneck: Vec<usize>,
    pub decoder: Vec<DeconvLayerSpec>,
    pub skips: Vec<SkipSpec>,
    /// Weight of the joint-position loss term.
    pub lambda: f64,
    pub batch_size: usize,
    /// World box used to normalize joint coordinates to [-1,1] per axis.
    pub norm_bbox: Bbox,
    /// Weight-initialization seed.
    pub seed: u64,
}

/// Resolved per-layer shape tables computed from a [`NetworkConfig`].
#[derive(Debug, Clone, PartialEq)]
pub struct LayoutPlan {
    /// Spatial edge after each encoder layer (post pooling).
    pub enc_spatial: Vec<usize>,
    pub enc_channels: Vec<usize>,
    pub flatten_len: usize,
    /// Edge of the cubic seed volume the bottleneck reshapes into.
    pub seed_side: usize,
    /// Spatial edge after each decoder layer.
    pub dec_spatial: Vec<usize>,
    pub dec_channels: Vec<usize>,
    pub output_resolution: usize,
    /// For each skip: (tap channels, decoder channels at the join).
    pub skip_channels: Vec<(usize, usize)>,
}

const POOL_WINDOW: usize = 2;
const POOL_STRIDE: usize = 2;

impl NetworkConfig {
    /// The published architecture for upscale factor `n` in {1, 2, 4}.
    ///
    /// Channel counts, layer counts, and filter sizes follow the published
    /// table: encoders of 5/6/7 layers, decoders of 6/8/10, bottleneck
    /// 1024/1024/3J/216, filters 3^3 except the first two encoder and last
    /// two decoder layers at 5^3, max-pool at the fourth encoder layer.
    /// Strides are chosen so every variant flattens at 4^3 before the
    /// bottleneck: the first 2 + log2(n) convolutions use stride 2.
    pub fn paper(scale: usize, joint_count: usize) -> Result<Self, NetError> {
        let (enc_channels, dec_channels): (Vec<usize>, Vec<usize>) = match scale {
            1 => (vec![96, 96, 96, 96, 96], vec![96, 96, 96, 96, 64, 1]),
            2 => (
                vec![32, 64, 96, 96, 96, 96],
                vec![96, 96, 96, 96, 64, 64, 32, 1],
            ),
            4 => (
                vec![32, 32, 32, 64, 96, 96, 96],
                vec![96, 96, 96, 96, 64, 64, 32, 32, 32, 1],
            ),
            other => {
                return Err(NetError::UnrealizableSchedule(format!(
                    "unsupported upscale factor {other}; expected 1, 2, or 4"
                )))
            }
        };
        let stride2_convs = 2 + scale.ilog2() as usize;
        let encoder = enc_channels
            .iter()
            .enumerate()
            .map(|(i, &channels)| ConvLayerSpec {
                channels,
                // 5^3 filters on the first two layers
                filter: if i < 2 { 5 } else { 3 },
                stride: if i < stride2_convs { 2 } else { 1 },
                pool_after: i == 3,
            })
            .collect();

        // Decoder: one valid-padding layer grows the 6^3 seed to 8^3, then
        // stride-2 layers double up to (32n)^3, the rest refine at full
        // resolution. 5^3 filters on the last two layers.
        let doublings = 2 + scale.ilog2() as usize;
        let n_dec = dec_channels.len();
        let decoder = dec_channels
            .iter()
            .enumerate()
            .map(|(i, &channels)| DeconvLayerSpec {
                channels,
                filter: if i >= n_dec - 2 { 5 } else { 3 },
                stride: if (1..=doublings).contains(&i) { 2 } else { 1 },
                padding: if i == 0 { Padding::Valid } else { Padding::Same },
            })
            .collect();

        let mut config = NetworkConfig {
            scale,
            joint_count,
            input_resolution: 32 * scale,
            encoder,
            bottleneck: vec![1024, 1024, 3 * joint_count, 216],
            decoder,
            skips: Vec::new(),
            lambda: 1e-3,
            batch_size: 8,
            norm_bbox: Bbox::new([-1000.0, -1000.0, 0.0], [1000.0, 1000.0, 2000.0]),
            seed: 0,
        };
        config.skips = config.default_skips()?;
        config.plan()?;
        Ok(config)
    }

    /// Caps every (de)convolution channel count, keeping the structure.
    /// Used for desk-scale training runs.
    pub fn with_max_channels(mut self, cap: usize) -> Self {
        for l in &mut self.encoder {
            l.channels = l.channels.min(cap);
        }
        for l in &mut self.decoder {
            l.channels = l.channels.min(cap);
        }
        self
    }

    /// Replaces the two leading fully-connected widths.
    pub fn with_fc_widths(mut self, first: usize, second: usize) -> Self {
        self.bottleneck[0] = first;
        self.bottleneck[1] = second;
        self
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn with_batch_size(mut self, batch_size: usize) -> Self {
        self.batch_size = batch_size;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_norm_bbox(mut self, bbox: Bbox) -> Self {
        self.norm_bbox = bbox;
        self
    }

    pub fn latent_width(&self) -> usize {
        3 * self.joint_count
    }

    /// The two standard skips: the network input joins the decoder where it
    /// first reaches full resolution, the first encoder activation joins
    /// where the decoder reaches half resolution.
    fn default_skips(&self) -> Result<Vec<SkipSpec>, NetError> {
        let probe = NetworkConfig {
            skips: Vec::new(),
            ..self.clone()
        };
        let plan = probe.plan()?;
        let full = self.input_resolution;
        let half = full / 2;
        let mut skips = Vec::new();
        if let Some(at) = plan.dec_spatial.iter().position(|&s| s == half) {
            skips.push(SkipSpec {
                tap: SkipTap::Encoder(0),
                after_decoder_layer: at,
            });
        }
        if let Some(at) = plan.dec_spatial.iter().position(|&s| s == full) {
            // joining after the final layer would bypass the volume head
            if at + 1 < plan.dec_spatial.len() {
                skips.push(SkipSpec {
                    tap: SkipTap::Input,
                    after_decoder_layer: at,
                });
            }
        }
        Ok(skips)
    }

    /// Walks the schedule, checking realizability, and returns the shape
    /// tables. Fails with `UnrealizableSchedule` when strides/pools cannot
    /// produce consistent spatial sizes.
    pub fn plan(&self) -> Result<LayoutPlan, NetError> {
        if self.encoder.is_empty() || self.decoder.is_empty() {
            return Err(NetError::UnrealizableSchedule(
                "encoder and decoder need at least one layer".into(),
            ));
        }
        if self.bottleneck.len() != 4 {
            return Err(NetError::UnrealizableSchedule(format!(
                "bottleneck must have 4 fully-connected layers, got {}",
                self.bottleneck.len()
            )));
        }
        if self.bottleneck[2] != self.latent_width() {
            return Err(NetError::UnrealizableSchedule(format!(
                "latent width {} must equal 3 x joint_count = {}",
                self.bottleneck[2],
                self.latent_width()
            )));
        }

        let mut spatial = self.input_resolution;
        let mut enc_spatial = Vec::new();
        let mut enc_channels = Vec::new();
        for (i, l) in self.encoder.iter().enumerate() {
            if l.stride == 0 || l.filter % 2 == 0 {
                return Err(NetError::UnrealizableSchedule(format!(
                    "encoder layer {i}: filter must be odd, stride >= 1"
                )));
            }
            spatial = spatial.div_ceil(l.stride);
            if l.pool_after {
                if spatial < POOL_WINDOW {
                    return Err(NetError::UnrealizableSchedule(format!(
                        "encoder layer {i}: spatial {spatial} too small to pool"
                    )));
                }
                spatial = (spatial - POOL_WINDOW) / POOL_STRIDE + 1;
            }
            if spatial == 0 {
                return Err(NetError::UnrealizableSchedule(format!(
                    "encoder layer {i}: spatial size collapsed to zero"
                )));
            }
            enc_spatial.push(spatial);
            enc_channels.push(l.channels);
        }
        let flatten_len = spatial.pow(3) * enc_channels.last().copied().unwrap();

        let seed_vol = *self.bottleneck.last().unwrap();
        let seed_side = (seed_vol as f64).cbrt().round() as usize;
        if seed_side.pow(3) != seed_vol {
            return Err(NetError::UnrealizableSchedule(format!(
                "bottleneck output {seed_vol} is not a perfect cube"
            )));
        }

        let mut dec_spatial = Vec::new();
        let mut dec_channels = Vec::new();
        let mut sp = seed_side;
        for (i, l) in self.decoder.iter().enumerate() {
            sp = match l.padding {
                Padding::Same => sp * l.stride,
                Padding::Valid => {
                    if l.stride != 1 {
                        return Err(NetError::UnrealizableSchedule(format!(
                            "decoder layer {i}: valid padding requires stride 1"
                        )));
                    }
                    sp + l.filter - 1
                }
            };
            dec_spatial.push(sp);
            dec_channels.push(l.channels);
        }
        if sp != self.input_resolution {
            return Err(NetError::UnrealizableSchedule(format!(
                "decoder produces {sp}^3, input resolution is {}^3",
                self.input_resolution
            )));
        }
        if dec_channels.last() != Some(&1) {
            return Err(NetError::UnrealizableSchedule(
                "final decoder layer must emit one channel".into(),
            ));
        }

        let mut skip_channels = Vec::new();
        for (i, s) in self.skips.iter().enumerate() {
            let (tap_spatial, tap_channels) = match s.tap {
                SkipTap::Input => (self.input_resolution, 1),
                SkipTap::Encoder(j) => {
                    if j >= enc_spatial.len() {
                        return Err(NetError::UnrealizableSchedule(format!(
                            "skip {i} taps encoder layer {j}, encoder has {}",
                            enc_spatial.len()
                        )));
                    }
                    (enc_spatial[j], enc_channels[j])
                }
            };
            let d = s.after_decoder_layer;
            if d >= dec_spatial.len() {
                return Err(NetError::UnrealizableSchedule(format!(
                    "skip {i} joins after decoder layer {d}, decoder has {}",
                    dec_spatial.len()
                )));
            }
            if dec_spatial[d] != tap_spatial {
                return Err(NetError::UnrealizableSchedule(format!(
                    "skip {i}: tap spatial {tap_spatial} != decoder spatial {} at layer {d}",
                    dec_spatial[d]
                )));
            }
            skip_channels.push((tap_channels, dec_channels[d]));
        }

        Ok(LayoutPlan {
            enc_spatial,
            enc_channels,
            flatten_len,
            seed_side,
            dec_spatial,
            dec_channels,
            output_resolution: sp,
            skip_channels,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_layer_counts_match_published_table() {
        for (n, enc, dec) in [(1usize, 5usize, 6usize), (2, 6, 8), (4, 7, 10)] {
            let c = NetworkConfig::paper(n, 26).unwrap();
            assert_eq!(c.encoder.len(), enc, "encoder length at n={n}");
            assert_eq!(c.decoder.len(), dec, "decoder length at n={n}");
            assert_eq!(c.bottleneck, vec![1024, 1024, 78, 216]);
        }
    }

    #[test]
    fn paper_channel_schedules_match_published_table() {
        let c = NetworkConfig::paper(1, 26).unwrap();
        let enc: Vec<usize> = c.encoder.iter().map(|l| l.channels).collect();
        assert_eq!(enc, vec![96, 96, 96, 96, 96]);
        let dec: Vec<usize> = c.decoder.iter().map(|l| l.channels).collect();
        assert_eq!(dec, vec![96, 96, 96, 96, 64, 1]);

        let c = NetworkConfig::paper(2, 26).unwrap();
        let enc: Vec<usize> = c.encoder.iter().map(|l| l.channels).collect();
        assert_eq!(enc, vec![32, 64, 96, 96, 96, 96]);
        let dec: Vec<usize> = c.decoder.iter().map(|l| l.channels).collect();
        assert_eq!(dec, vec![96, 96, 96, 96, 64, 64, 32, 1]);

        let c = NetworkConfig::paper(4, 26).unwrap();
        let enc: Vec<usize> = c.encoder.iter().map(|l| l.channels).collect();
        assert_eq!(enc, vec![32, 32, 32, 64, 96, 96, 96]);
        let dec: Vec<usize> = c.decoder.iter().map(|l| l.channels).collect();
        assert_eq!(dec, vec![96, 96, 96, 96, 64, 64, 32, 32, 32, 1]);
    }

    #[test]
    fn filter_sizes_follow_star_placement() {
        for n in [1usize, 2, 4] {
            let c = NetworkConfig::paper(n, 26).unwrap();
            for (i, l) in c.encoder.iter().enumerate() {
                assert_eq!(l.filter, if i < 2 { 5 } else { 3 }, "enc {i} at n={n}");
            }
            let last = c.decoder.len();
            for (i, l) in c.decoder.iter().enumerate() {
                assert_eq!(
                    l.filter,
                    if i >= last - 2 { 5 } else { 3 },
                    "dec {i} at n={n}"
                );
            }
            assert!(c.encoder[3].pool_after, "pool at fourth layer, n={n}");
            assert_eq!(c.encoder.iter().filter(|l| l.pool_after).count(), 1);
        }
    }

    #[test]
    fn all_scales_flatten_at_four_cubed() {
        for n in [1usize, 2, 4] {
            let plan = NetworkConfig::paper(n, 26).unwrap().plan().unwrap();
            assert_eq!(*plan.enc_spatial.last().unwrap(), 4, "n={n}");
            assert_eq!(plan.flatten_len, 64 * 96);
            assert_eq!(plan.seed_side, 6);
            assert_eq!(plan.output_resolution, 32 * n, "n={n}");
        }
    }

    #[test]
    fn output_reaches_128_at_scale_4() {
        let plan = NetworkConfig::paper(4, 26).unwrap().plan().unwrap();
        assert_eq!(plan.output_resolution, 128);
    }

    #[test]
    fn two_skips_at_full_and_half_resolution() {
        for n in [1usize, 2, 4] {
            let c = NetworkConfig::paper(n, 26).unwrap();
            assert_eq!(c.skips.len(), 2, "n={n}");
            let plan = c.plan().unwrap();
            let spatials: Vec<usize> = c
                .skips
                .iter()
                .map(|s| plan.dec_spatial[s.after_decoder_layer])
                .collect();
            assert!(spatials.contains(&(32 * n)));
            assert!(spatials.contains(&(16 * n)));
        }
    }

    #[test]
    fn latent_mismatch_is_unrealizable() {
        let mut c = NetworkConfig::paper(1, 26).unwrap();
        c.bottleneck[2] = 77;
        assert!(matches!(
            c.plan(),
            Err(NetError::UnrealizableSchedule(_))
        ));
    }

    #[test]
    fn non_cube_seed_is_unrealizable() {
        let mut c = NetworkConfig::paper(1, 26).unwrap();
        c.bottleneck[3] = 215;
        assert!(matches!(c.plan(), Err(NetError::UnrealizableSchedule(_))));
    }

    #[test]
    fn wrong_decoder_target_is_unrealizable() {
        let mut c = NetworkConfig::paper(1, 26).unwrap();
        c.input_resolution = 40;
        assert!(matches!(c.plan(), Err(NetError::UnrealizableSchedule(_))));
    }

    #[test]
    fn config_serializes_round_trip() {
        let c = NetworkConfig::paper(2, 26).unwrap();
        let json = serde_json::to_string(&c).unwrap();
        let back: NetworkConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, c);
    }
}
