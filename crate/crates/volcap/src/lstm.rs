//! Temporal smoothing of per-frame joint vectors: a two-layer LSTM over a
//! fixed lookback window, with an affine projection from the top hidden
//! state back to the 3J joint vector.
//!
//! Each output frame is produced from a freshly zero-initialized state fed
//! with the last `lookback` frames (zero-padded at the start of the
//! sequence), so smoothing is stateless across calls and parallel over
//! frames.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::Bbox;
use crate::optim::{AdadeltaConfig, AdadeltaState};
use crate::tensor::{ParamId, ParamSet, Scalar, Tensor};

#[derive(Debug, Error)]
pub enum LstmError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("training requires a non-empty dataset")]
    EmptyDataset,

    #[error("sequence pair has {noisy} noisy frames but {clean} ground-truth frames")]
    LengthMismatch { noisy: usize, clean: usize },
}

/// Architecture of the smoother.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmootherConfig {
    pub layers: usize,
    pub cells: usize,
    /// Number of past frames (including the current one) fed per output.
    pub lookback: usize,
    /// Width of the joint vectors (3J).
    pub vector_width: usize,
    /// World box for normalizing skeleton streams at the tool boundary;
    /// the smoothing core itself is unit-agnostic.
    pub norm_bbox: Bbox,
    pub seed: u64,
}

impl SmootherConfig {
    /// Published defaults: two layers of 1024 cells, lookback 5.
    pub fn paper(joint_count: usize) -> Self {
        SmootherConfig {
            layers: 2,
            cells: 1024,
            lookback: 5,
            vector_width: 3 * joint_count,
            norm_bbox: Bbox::new([-1000.0, -1000.0, 0.0], [1000.0, 1000.0, 2000.0]),
            seed: 0,
        }
    }

    pub fn with_cells(mut self, cells: usize) -> Self {
        self.cells = cells;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Standard LSTM gating for one timestep of one layer.
///
/// `w_ih` is `[4H, I]`, `w_hh` is `[4H, H]`, `bias` is `[4H]`, with gate
/// rows ordered input, forget, candidate, output. Returns the new hidden
/// and cell state:
/// `c = f . c_prev + i . g`, `h = o . tanh(c)`.
pub fn lstm_step<T: Scalar>(
    w_ih: &Tensor<T>,
    w_hh: &Tensor<T>,
    bias: &Tensor<T>,
    input: &[T],
    prev_hidden: &[T],
    prev_cell: &[T],
) -> Result<(Vec<T>, Vec<T>), LstmError> {
    let (h, cache) = step_with_cache(w_ih, w_hh, bias, input, prev_hidden, prev_cell)?;
    Ok((h, cache.c))
}

struct StepCache<T> {
    x: Vec<T>,
    h_prev: Vec<T>,
    c_prev: Vec<T>,
    i: Vec<T>,
    f: Vec<T>,
    g: Vec<T>,
    o: Vec<T>,
    c: Vec<T>,
}

fn step_with_cache<T: Scalar>(
    w_ih: &Tensor<T>,
    w_hh: &Tensor<T>,
    bias: &Tensor<T>,
    input: &[T],
    prev_hidden: &[T],
    prev_cell: &[T],
) -> Result<(Vec<T>, StepCache<T>), LstmError> {
    let [rows, n_in] = w_ih.shape()[..] else {
        return Err(LstmError::ShapeMismatch(format!(
            "w_ih must be rank 2, got {:?}",
            w_ih.shape()
        )));
    };
    let cells = rows / 4;
    if rows != 4 * cells || n_in != input.len() {
        return Err(LstmError::ShapeMismatch(format!(
            "w_ih is [{rows},{n_in}], input has {} values",
            input.len()
        )));
    }
    if w_hh.shape() != [4 * cells, cells] {
        return Err(LstmError::ShapeMismatch(format!(
            "w_hh must be [{},{cells}], got {:?}",
            4 * cells,
            w_hh.shape()
        )));
    }
    if bias.shape() != [4 * cells] || prev_hidden.len() != cells || prev_cell.len() != cells {
        return Err(LstmError::ShapeMismatch(
            "bias/state widths do not match the cell count".into(),
        ));
    }

    let mut gates = bias.data().to_vec();
    for (r, gate) in gates.iter_mut().enumerate() {
        let wrow = &w_ih.data()[r * n_in..(r + 1) * n_in];
        let mut acc = *gate;
        for (&w, &x) in wrow.iter().zip(input) {
            acc = acc + w * x;
        }
        let hrow = &w_hh.data()[r * cells..(r + 1) * cells];
        for (&w, &h) in hrow.iter().zip(prev_hidden) {
            acc = acc + w * h;
        }
        *gate = acc;
    }

    let sigmoid = |x: T| T::one() / (T::one() + (-x).exp());
    let i: Vec<T> = gates[..cells].iter().map(|&v| sigmoid(v)).collect();
    let f: Vec<T> = gates[cells..2 * cells].iter().map(|&v| sigmoid(v)).collect();
    let g: Vec<T> = gates[2 * cells..3 * cells].iter().map(|&v| v.tanh()).collect();
    let o: Vec<T> = gates[3 * cells..].iter().map(|&v| sigmoid(v)).collect();

    let c: Vec<T> = (0..cells)
        .map(|k| f[k] * prev_cell[k] + i[k] * g[k])
        .collect();
    let h: Vec<T> = (0..cells).map(|k| o[k] * c[k].tanh()).collect();

    let cache = StepCache {
        x: input.to_vec(),
        h_prev: prev_hidden.to_vec(),
        c_prev: prev_cell.to_vec(),
        i,
        f,
        g,
        o,
        c,
    };
    Ok((h, cache))
}

struct LayerIds {
    w_ih: ParamId,
    w_hh: ParamId,
    bias: ParamId,
}

/// Trained smoother: stacked LSTM layers plus the output projection.
pub struct Smoother<T: Scalar> {
    config: SmootherConfig,
    params: ParamSet<T>,
    optimizer: AdadeltaState<T>,
    layers: Vec<LayerIds>,
    proj_w: ParamId,
    proj_b: ParamId,
}

/// Allocates a smoother with fan-in-scaled uniform weights from the config
/// seed.
pub fn build_smoother<T: Scalar>(config: SmootherConfig) -> Result<Smoother<T>, LstmError> {
    if config.layers == 0 || config.cells == 0 || config.lookback == 0 || config.vector_width == 0
    {
        return Err(LstmError::ShapeMismatch(
            "layers, cells, lookback, and vector width must all be >= 1".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params: ParamSet<T> = ParamSet::new();
    let init = |params: &mut ParamSet<T>, name: String, shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng| {
        let limit = (1.0 / fan_in as f64).sqrt();
        let mut t = Tensor::zeros(shape);
        for v in t.data_mut() {
            *v = T::from_f64(rng.gen_range(-limit..limit));
        }
        params.add(name, t)
    };

    let h = config.cells;
    let mut layers = Vec::new();
    let mut width = config.vector_width;
    for l in 0..config.layers {
        let w_ih = init(&mut params, format!("lstm{l}.w_ih"), &[4 * h, width], width, &mut rng);
        let w_hh = init(&mut params, format!("lstm{l}.w_hh"), &[4 * h, h], h, &mut rng);
        let bias = params.add(format!("lstm{l}.bias"), Tensor::zeros(&[4 * h]));
        layers.push(LayerIds { w_ih, w_hh, bias });
        width = h;
    }
    let proj_w = init(
        &mut params,
        "proj.weight".into(),
        &[h, config.vector_width],
        h,
        &mut rng,
    );
    let proj_b = params.add("proj.bias", Tensor::zeros(&[config.vector_width]));

    let optimizer = AdadeltaState::new(&params, AdadeltaConfig::default());
    Ok(Smoother {
        config,
        params,
        optimizer,
        layers,
        proj_w,
        proj_b,
    })
}

impl<T: Scalar> Smoother<T> {
    pub fn config(&self) -> &SmootherConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn optimizer(&self) -> &AdadeltaState<T> {
        &self.optimizer
    }

    /// Rebuilds from checkpointed pieces (see `build_smoother` for the
    /// expected parameter names).
    pub fn from_parts(
        config: SmootherConfig,
        params: ParamSet<T>,
        optimizer: AdadeltaState<T>,
    ) -> Result<Self, LstmError> {
        let rebuilt = build_smoother::<T>(config)?;
        for id in rebuilt.params.ids() {
            let name = &rebuilt.params.get(id).name;
            let found = params.by_name(name).ok_or_else(|| {
                LstmError::ShapeMismatch(format!("checkpoint is missing parameter {name}"))
            })?;
            if params.get(found).value.shape() != rebuilt.params.get(id).value.shape() {
                return Err(LstmError::ShapeMismatch(format!(
                    "checkpoint parameter {name} has unexpected shape"
                )));
            }
        }
        Ok(Smoother {
            params,
            optimizer,
            ..rebuilt
        })
    }

    /// Smooths a sequence: for each frame, the window of the last
    /// `lookback` frames (zero-padded before the sequence start) is run
    /// through the stack from zero state and the top hidden state is
    /// projected back to a joint vector. Output length = input length.
    pub fn smooth_sequence(&self, frames: &[Vec<T>]) -> Result<Vec<Vec<T>>, LstmError> {
        frames
            .iter()
            .enumerate()
            .map(|(t, _)| self.smooth_window(frames, t).map(|(y, _)| y))
            .collect()
    }

    /// Runs the window ending at frame `t`; returns the projected output
    /// and the per-layer per-step caches for backward.
    #[allow(clippy::type_complexity)]
    fn smooth_window(
        &self,
        frames: &[Vec<T>],
        t: usize,
    ) -> Result<(Vec<T>, Vec<Vec<StepCache<T>>>), LstmError> {
        self.smooth_window_with(&self.params, frames, t)
    }

    #[allow(clippy::type_complexity)]
    fn smooth_window_with(
        &self,
        params: &ParamSet<T>,
        frames: &[Vec<T>],
        t: usize,
    ) -> Result<(Vec<T>, Vec<Vec<StepCache<T>>>), LstmError> {
        let width = self.config.vector_width;
        let f = self.config.lookback;
        let cells = self.config.cells;
        if frames[t].len() != width {
            return Err(LstmError::ShapeMismatch(format!(
                "frame {t} has {} values, expected {width}",
                frames[t].len()
            )));
        }
        // window = frames[t+1-f ..= t], zero-padded before the start
        let zero_frame = vec![T::zero(); width];
        let mut h: Vec<Vec<T>> = vec![vec![T::zero(); cells]; self.config.layers];
        let mut c: Vec<Vec<T>> = vec![vec![T::zero(); cells]; self.config.layers];
        let mut caches: Vec<Vec<StepCache<T>>> = (0..self.config.layers).map(|_| Vec::new()).collect();

        for step in 0..f {
            let idx = (t + 1 + step) as isize - f as isize;
            let input_frame = if idx < 0 {
                &zero_frame
            } else {
                &frames[idx as usize]
            };
            let mut x: Vec<T> = input_frame.clone();
            for (l, ids) in self.layers.iter().enumerate() {
                let (new_h, cache) = step_with_cache(
                    &params.get(ids.w_ih).value,
                    &params.get(ids.w_hh).value,
                    &params.get(ids.bias).value,
                    &x,
                    &h[l],
                    &c[l],
                )?;
                c[l] = cache.c.clone();
                x = new_h.clone();
                h[l] = new_h;
                caches[l].push(cache);
            }
        }

        // affine projection of the top hidden state
        let w = &params.get(self.proj_w).value;
        let b = &params.get(self.proj_b).value;
        let top = &h[self.config.layers - 1];
        let mut y = b.data().to_vec();
        for (k, &hv) in top.iter().enumerate() {
            let wrow = &w.data()[k * width..(k + 1) * width];
            for (a, &wv) in y.iter_mut().zip(wrow) {
                *a = *a + hv * wv;
            }
        }
        Ok((y, caches))
    }

    /// Loss and gradient accumulation for one (noisy, clean) window pair.
    /// Returns the window's squared-error mean.
    fn backward_window(
        &mut self,
        frames: &[Vec<T>],
        target: &[T],
        t: usize,
    ) -> Result<f64, LstmError> {
        let (y, caches) = self.smooth_window(frames, t)?;
        let width = self.config.vector_width;
        let cells = self.config.cells;
        let f = self.config.lookback;
        let n_layers = self.config.layers;

        // d MSE / dy
        let scale = T::from_f64(2.0 / width as f64);
        let dy: Vec<T> = y
            .iter()
            .zip(target)
            .map(|(&p, &tv)| (p - tv) * scale)
            .collect();
        let loss: f64 = y
            .iter()
            .zip(target)
            .map(|(&p, &tv)| {
                let d = Scalar::to_f64(p - tv);
                d * d
            })
            .sum::<f64>()
            / width as f64;

        // projection gradients; dh seeds the top layer at the last step
        let top_h_last: Vec<T> = {
            let cache = &caches[n_layers - 1][f - 1];
            (0..cells).map(|k| cache.o[k] * cache.c[k].tanh()).collect()
        };
        {
            let w = self.params.get_mut(self.proj_w);
            for (k, &hv) in top_h_last.iter().enumerate() {
                let grow = &mut w.grad.data_mut()[k * width..(k + 1) * width];
                for (gw, &gv) in grow.iter_mut().zip(&dy) {
                    *gw = *gw + hv * gv;
                }
            }
        }
        {
            let b = self.params.get_mut(self.proj_b);
            for (gb, &gv) in b.grad.data_mut().iter_mut().zip(&dy) {
                *gb = *gb + gv;
            }
        }
        let proj_w = &self.params.get(self.proj_w).value;
        let mut dh_top = vec![T::zero(); cells];
        for (k, dh) in dh_top.iter_mut().enumerate() {
            let wrow = &proj_w.data()[k * width..(k + 1) * width];
            let mut acc = T::zero();
            for (&wv, &gv) in wrow.iter().zip(&dy) {
                acc = acc + wv * gv;
            }
            *dh = acc;
        }

        // BPTT: dh/dc carried backward per layer; dx of layer l feeds
        // dh of layer l-1 at the same timestep.
        let mut dh: Vec<Vec<T>> = vec![vec![T::zero(); cells]; n_layers];
        let mut dc: Vec<Vec<T>> = vec![vec![T::zero(); cells]; n_layers];
        dh[n_layers - 1] = dh_top;

        let mut grads: Vec<(Vec<T>, Vec<T>, Vec<T>)> = self
            .layers
            .iter()
            .map(|ids| {
                (
                    vec![T::zero(); self.params.get(ids.w_ih).value.len()],
                    vec![T::zero(); self.params.get(ids.w_hh).value.len()],
                    vec![T::zero(); 4 * cells],
                )
            })
            .collect();

        for step in (0..f).rev() {
            let mut dx_lower: Option<Vec<T>> = None;
            for l in (0..n_layers).rev() {
                let cache = &caches[l][step];
                let mut dh_l = std::mem::take(&mut dh[l]);
                if l == n_layers - 1 {
                    // projection gradient only at the last step (handled
                    // above as the initial dh); nothing extra here
                } else if let Some(dx) = dx_lower.take() {
                    for (a, &v) in dh_l.iter_mut().zip(&dx) {
                        *a = *a + v;
                    }
                }
                let dc_l = std::mem::take(&mut dc[l]);

                let n_in = cache.x.len();
                let w_ih = &self.params.get(self.layers[l].w_ih).value;
                let w_hh = &self.params.get(self.layers[l].w_hh).value;

                let mut dgates = vec![T::zero(); 4 * cells];
                let mut dc_prev = vec![T::zero(); cells];
                for k in 0..cells {
                    let tanh_c = cache.c[k].tanh();
                    let do_ = dh_l[k] * tanh_c;
                    let dct = dc_l[k] + dh_l[k] * cache.o[k] * (T::one() - tanh_c * tanh_c);
                    let di = dct * cache.g[k];
                    let df = dct * cache.c_prev[k];
                    let dg = dct * cache.i[k];
                    dgates[k] = di * cache.i[k] * (T::one() - cache.i[k]);
                    dgates[cells + k] = df * cache.f[k] * (T::one() - cache.f[k]);
                    dgates[2 * cells + k] = dg * (T::one() - cache.g[k] * cache.g[k]);
                    dgates[3 * cells + k] = do_ * cache.o[k] * (T::one() - cache.o[k]);
                    dc_prev[k] = dct * cache.f[k];
                }

                let (gw_ih, gw_hh, gb) = &mut grads[l];
                for (r, &dg) in dgates.iter().enumerate() {
                    let row = &mut gw_ih[r * n_in..(r + 1) * n_in];
                    for (a, &xv) in row.iter_mut().zip(&cache.x) {
                        *a = *a + dg * xv;
                    }
                    let row = &mut gw_hh[r * cells..(r + 1) * cells];
                    for (a, &hv) in row.iter_mut().zip(&cache.h_prev) {
                        *a = *a + dg * hv;
                    }
                    gb[r] = gb[r] + dg;
                }

                // carry to previous timestep and to the layer below
                let mut dx = vec![T::zero(); n_in];
                let mut dh_prev = vec![T::zero(); cells];
                for (r, &dg) in dgates.iter().enumerate() {
                    let wrow = &w_ih.data()[r * n_in..(r + 1) * n_in];
                    for (a, &wv) in dx.iter_mut().zip(wrow) {
                        *a = *a + dg * wv;
                    }
                    let hrow = &w_hh.data()[r * cells..(r + 1) * cells];
                    for (a, &wv) in dh_prev.iter_mut().zip(hrow) {
                        *a = *a + dg * wv;
                    }
                }
                dh[l] = dh_prev;
                dc[l] = dc_prev;
                dx_lower = Some(dx);
            }
        }

        for (l, ids) in self.layers.iter().enumerate() {
            let (gw_ih, gw_hh, gb) = &grads[l];
            add_into(self.params.get_mut(ids.w_ih).grad.data_mut(), gw_ih);
            add_into(self.params.get_mut(ids.w_hh).grad.data_mut(), gw_hh);
            add_into(self.params.get_mut(ids.bias).grad.data_mut(), gb);
        }
        Ok(loss)
    }
}

fn add_into<T: Scalar>(acc: &mut [T], add: &[T]) {
    for (a, &v) in acc.iter_mut().zip(add) {
        *a = *a + v;
    }
}

/// Trains the smoother to map noisy sequences onto ground-truth joint
/// vectors: per-epoch shuffled sequences, gradients through the unrolled
/// lookback window, Adadelta updates per sequence. Returns per-epoch mean
/// loss.
pub fn train_smoother<T: Scalar>(
    smoother: &mut Smoother<T>,
    data: &[(Vec<Vec<T>>, Vec<Vec<T>>)],
    epochs: usize,
    seed: u64,
) -> Result<Vec<f64>, LstmError> {
    if data.is_empty() {
        return Err(LstmError::EmptyDataset);
    }
    for (noisy, clean) in data {
        if noisy.len() != clean.len() {
            return Err(LstmError::LengthMismatch {
                noisy: noisy.len(),
                clean: clean.len(),
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut history = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for &si in &order {
            let (noisy, clean) = &data[si];
            smoother.params.zero_grads();
            let mut seq_loss = 0.0;
            for t in 0..noisy.len() {
                seq_loss += smoother.backward_window(noisy, &clean[t], t)?;
            }
            let (params, opt) = (&mut smoother.params, &mut smoother.optimizer);
            opt.step(params);
            epoch_loss += seq_loss / noisy.len() as f64;
        }
        history.push(epoch_loss / data.len() as f64);
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{check_gradients, seeded_tensor};

    fn tiny_config(cells: usize, lookback: usize, width: usize, seed: u64) -> SmootherConfig {
        SmootherConfig {
            layers: 2,
            cells,
            lookback,
            vector_width: width,
            norm_bbox: Bbox::new([-1.0; 3], [1.0; 3]),
            seed,
        }
    }

    #[test]
    fn zero_weights_give_zero_hidden() {
        // o = sigmoid(0) = 0.5, c = 0, tanh(0) = 0 -> h = 0
        let w_ih = Tensor::<f64>::zeros(&[8, 3]);
        let w_hh = Tensor::<f64>::zeros(&[8, 2]);
        let bias = Tensor::<f64>::zeros(&[8]);
        let (h, c) = lstm_step(&w_ih, &w_hh, &bias, &[1.0, -2.0, 0.5], &[0.0; 2], &[0.0; 2])
            .unwrap();
        assert_eq!(h, vec![0.0, 0.0]);
        assert_eq!(c, vec![0.0, 0.0]);
    }

    #[test]
    fn saturated_forget_gate_preserves_cell() {
        // forget bias 50 => f ~= 1; zero input weights => i*g contributes 0
        let cells = 2;
        let w_ih = Tensor::<f64>::zeros(&[4 * cells, 3]);
        let w_hh = Tensor::<f64>::zeros(&[4 * cells, cells]);
        let mut bias = Tensor::<f64>::zeros(&[4 * cells]);
        for k in 0..cells {
            bias.data_mut()[cells + k] = 50.0;
        }
        let prev_c = [0.73, -0.21];
        let (_, c) = lstm_step(&w_ih, &w_hh, &bias, &[0.4, 0.1, -0.9], &[0.3; 2], &prev_c)
            .unwrap();
        for (a, b) in c.iter().zip(&prev_c) {
            assert!((a - b).abs() < 1e-9, "cell not preserved: {a} vs {b}");
        }
    }

    #[test]
    fn single_cell_matches_hand_computed_gates() {
        // one cell, one input; hand-set weights
        let w_ih = Tensor::from_vec(&[4, 1], vec![0.5, -0.3, 0.8, 0.2]).unwrap();
        let w_hh = Tensor::from_vec(&[4, 1], vec![0.1, 0.4, -0.2, 0.6]).unwrap();
        let bias = Tensor::from_vec(&[4], vec![0.05, -0.1, 0.2, 0.0]).unwrap();
        let (x, h0, c0) = (0.7, 0.3, -0.4);

        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let i = sig(0.5 * x + 0.1 * h0 + 0.05);
        let f = sig(-0.3 * x + 0.4 * h0 - 0.1);
        let g = (0.8 * x - 0.2 * h0 + 0.2).tanh();
        let o = sig(0.2 * x + 0.6 * h0);
        let c = f * c0 + i * g;
        let h = o * c.tanh();

        let (hh, cc) = lstm_step(&w_ih, &w_hh, &bias, &[x], &[h0], &[c0]).unwrap();
        assert!((hh[0] - h).abs() < 1e-12);
        assert!((cc[0] - c).abs() < 1e-12);
    }

    #[test]
    fn hidden_values_are_bounded_by_one() {
        let config = tiny_config(4, 3, 2, 3);
        let smoother: Smoother<f64> = build_smoother(config).unwrap();
        let frames: Vec<Vec<f64>> = (0..10)
            .map(|i| {
                seeded_tensor::<f64>(&[2], 40 + i)
                    .data()
                    .iter()
                    .map(|v| v * 20.0)
                    .collect()
            })
            .collect();
        // outputs are affine maps of |h|<=1, so only h is bounded; check via
        // a probe window on the raw step function
        let out = smoother.smooth_sequence(&frames).unwrap();
        assert_eq!(out.len(), frames.len());
        let ids = &smoother.layers[0];
        let (h, _) = lstm_step(
            &smoother.params.get(ids.w_ih).value,
            &smoother.params.get(ids.w_hh).value,
            &smoother.params.get(ids.bias).value,
            &frames[0],
            &vec![0.0; 4],
            &vec![0.0; 4],
        )
        .unwrap();
        assert!(h.iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn length_one_sequence_smooths_to_length_one() {
        let config = tiny_config(3, 5, 4, 5);
        let smoother: Smoother<f64> = build_smoother(config).unwrap();
        let out = smoother.smooth_sequence(&[vec![0.1, 0.2, 0.3, 0.4]]).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].len(), 4);
    }

    #[test]
    fn smoothing_is_stateless_across_calls() {
        let config = tiny_config(4, 5, 3, 6);
        let smoother: Smoother<f64> = build_smoother(config).unwrap();
        let frames: Vec<Vec<f64>> = (0..7)
            .map(|i| seeded_tensor::<f64>(&[3], 90 + i).data().to_vec())
            .collect();
        let a = smoother.smooth_sequence(&frames).unwrap();
        let b = smoother.smooth_sequence(&frames).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let mut smoother: Smoother<f64> = build_smoother(tiny_config(2, 3, 2, 7)).unwrap();
        assert!(matches!(
            train_smoother(&mut smoother, &[], 1, 0),
            Err(LstmError::EmptyDataset)
        ));
    }

    #[test]
    fn zero_epochs_leave_model_unchanged() {
        let mut smoother: Smoother<f64> = build_smoother(tiny_config(2, 3, 2, 8)).unwrap();
        let before = smoother.params.value_digest();
        let data = vec![(vec![vec![0.1, 0.2]; 4], vec![vec![0.1, 0.2]; 4])];
        let h = train_smoother(&mut smoother, &data, 0, 1).unwrap();
        assert!(h.is_empty());
        assert_eq!(smoother.params.value_digest(), before);
    }

    #[test]
    fn fixed_seed_reproduces_loss_history() {
        let data: Vec<(Vec<Vec<f64>>, Vec<Vec<f64>>)> = (0..3)
            .map(|s| {
                let clean: Vec<Vec<f64>> = (0..6)
                    .map(|t| vec![(t as f64 * 0.3 + s as f64).sin() * 0.5; 2])
                    .collect();
                let noisy = clean
                    .iter()
                    .enumerate()
                    .map(|(t, f)| {
                        let n = seeded_tensor::<f64>(&[2], (s * 10 + t) as u64);
                        f.iter().zip(n.data()).map(|(&v, &e)| v + 0.1 * e).collect()
                    })
                    .collect();
                (noisy, clean)
            })
            .collect();
        let mut s1: Smoother<f64> = build_smoother(tiny_config(3, 3, 2, 9)).unwrap();
        let h1 = train_smoother(&mut s1, &data, 5, 42).unwrap();
        let mut s2: Smoother<f64> = build_smoother(tiny_config(3, 3, 2, 9)).unwrap();
        let h2 = train_smoother(&mut s2, &data, 5, 42).unwrap();
        assert!(h1.iter().zip(&h2).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(s1.params.value_digest(), s2.params.value_digest());
    }

    /// BPTT against central finite differences on a 2-cell, lookback-3
    /// miniature.
    #[test]
    fn bptt_gradients_match_finite_differences() {
        let config = tiny_config(2, 3, 2, 10);
        let mut smoother: Smoother<f64> = build_smoother(config).unwrap();
        // give biases generic values so gates sit away from saturation
        for id in smoother.params.ids().collect::<Vec<_>>() {
            if smoother.params.get(id).name.ends_with(".bias") {
                let shape = smoother.params.get(id).value.shape().to_vec();
                smoother.params.get_mut(id).value =
                    seeded_tensor::<f64>(&shape, 500 + id_index(&smoother.params, id))
                        .map(|v| v * 0.3);
            }
        }
        let frames: Vec<Vec<f64>> = (0..5)
            .map(|i| seeded_tensor::<f64>(&[2], 200 + i).data().to_vec())
            .collect();
        let target: Vec<f64> = seeded_tensor::<f64>(&[2], 300).data().to_vec();
        let t = 4;

        smoother.params.zero_grads();
        smoother.backward_window(&frames, &target, t).unwrap();

        let work = smoother.params.clone();
        let config = smoother.config.clone();
        let loss_of = |params: &ParamSet<f64>| -> f64 {
            let probe = Smoother {
                config: config.clone(),
                params: params.clone(),
                optimizer: AdadeltaState::new(params, AdadeltaConfig::default()),
                layers: params_layers(params, 2),
                proj_w: params.by_name("proj.weight").unwrap(),
                proj_b: params.by_name("proj.bias").unwrap(),
            };
            let (y, _) = probe.smooth_window(&frames, t).unwrap();
            y.iter()
                .zip(&target)
                .map(|(&p, &tv)| (p - tv) * (p - tv))
                .sum::<f64>()
                / y.len() as f64
        };
        let ids: Vec<ParamId> = work.ids().collect();
        let report = check_gradients(&work, &ids, 1e-5, loss_of);
        assert!(
            report.passes(1e-4),
            "BPTT max rel err {:e} over {} coords",
            report.max_rel_err,
            report.checked
        );
    }

    fn id_index(params: &ParamSet<f64>, id: ParamId) -> u64 {
        params.ids().position(|x| x == id).unwrap() as u64
    }

    fn params_layers(params: &ParamSet<f64>, n: usize) -> Vec<LayerIds> {
        (0..n)
            .map(|l| LayerIds {
                w_ih: params.by_name(&format!("lstm{l}.w_ih")).unwrap(),
                w_hh: params.by_name(&format!("lstm{l}.w_hh")).unwrap(),
                bias: params.by_name(&format!("lstm{l}.bias")).unwrap(),
            })
            .collect()
    }

    /// Trained on noisy-to-clean pairs of a smooth trajectory, the smoother
    /// beats the raw noisy input.
    #[test]
    fn trained_smoother_reduces_noise_mse() {
        let width = 4;
        let len = 30;
        let sigma = 0.15;
        let make_clean = |phase: f64| -> Vec<Vec<f64>> {
            (0..len)
                .map(|t| {
                    (0..width)
                        .map(|k| ((t as f64 * 0.25) + phase + k as f64).sin() * 0.5)
                        .collect()
                })
                .collect()
        };
        let noisy_of = |clean: &[Vec<f64>], seed: u64| -> Vec<Vec<f64>> {
            clean
                .iter()
                .enumerate()
                .map(|(t, f)| {
                    let n = seeded_tensor::<f64>(&[width], seed * 1000 + t as u64);
                    // seeded_tensor is uniform(-0.5,0.5): std ~= 0.29
                    f.iter()
                        .zip(n.data())
                        .map(|(&v, &e)| v + e * (sigma / 0.29))
                        .collect()
                })
                .collect()
        };
        let train_data: Vec<(Vec<Vec<f64>>, Vec<Vec<f64>>)> = (0..6)
            .map(|s| {
                let clean = make_clean(s as f64 * 0.7);
                (noisy_of(&clean, s as u64 + 1), clean)
            })
            .collect();
        let mut smoother: Smoother<f64> =
            build_smoother(tiny_config(24, 5, width, 11)).unwrap();
        train_smoother(&mut smoother, &train_data, 60, 17).unwrap();

        // held-out trajectory
        let clean = make_clean(9.9);
        let noisy = noisy_of(&clean, 77);
        let smoothed = smoother.smooth_sequence(&noisy).unwrap();
        let mse = |a: &[Vec<f64>], b: &[Vec<f64>]| -> f64 {
            let mut acc = 0.0;
            let mut n = 0;
            for (x, y) in a.iter().zip(b) {
                for (&u, &v) in x.iter().zip(y) {
                    acc += (u - v) * (u - v);
                    n += 1;
                }
            }
            acc / n as f64
        };
        let noisy_mse = mse(&noisy, &clean);
        let smooth_mse = mse(&smoothed, &clean);
        assert!(
            smooth_mse < noisy_mse,
            "smoother did not beat noisy input: {smooth_mse} vs {noisy_mse}"
        );
    }
}
