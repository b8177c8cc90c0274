//! Define-by-run recording of operations and reverse-mode traversal.

use super::ops::{
    channel_sum, conv3d_forward, conv3d_input_grad, conv3d_kernel_grad, fc_backward, fc_forward,
    maxpool3d_forward, ConvGeom,
};
use super::{Padding, ParamId, ParamSet, Scalar, Tensor, TensorError, VolumeDims};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

enum Op<T> {
    Leaf {
        param: Option<ParamId>,
    },
    Conv3d {
        input: NodeId,
        kernel: NodeId,
        bias: NodeId,
        geom: ConvGeom,
        batch: usize,
    },
    Deconv3d {
        input: NodeId,
        kernel: NodeId,
        bias: NodeId,
        /// Geometry of the underlying convolution this op is the adjoint of:
        /// `geom.in_sp` is this op's *output* spatial size.
        geom: ConvGeom,
        batch: usize,
    },
    MaxPool3d {
        input: NodeId,
        argmax: Vec<usize>,
        tie_gap: f64,
    },
    FullyConnected {
        input: NodeId,
        weights: NodeId,
        bias: NodeId,
        batch: usize,
    },
    Relu {
        input: NodeId,
    },
    MeanCombine {
        a: NodeId,
        b: NodeId,
    },
    Reshape {
        input: NodeId,
    },
    Mse {
        prediction: NodeId,
        target: NodeId,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    Scale {
        input: NodeId,
        factor: T,
    },
}

/// Gradients per tape node after a backward pass.
pub struct NodeGrads<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> NodeGrads<T> {
    pub fn of(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.grads[id.0].as_ref()
    }
}

/// Append-only record of a forward computation. Nodes are created in
/// topological order, so reverse traversal visits each node exactly once.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> NodeId {
        debug_assert!(value.all_finite(), "non-finite values recorded on tape");
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    /// Records a constant input; no gradient is tracked for it.
    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Leaf { param: None })
    }

    /// Records a parameter leaf; backward accumulates its gradient.
    pub fn param(&mut self, params: &ParamSet<T>, id: ParamId) -> NodeId {
        self.push(params.get(id).value.clone(), Op::Leaf { param: Some(id) })
    }

    /// 3D cross-correlation with kernel `[k,k,k,Cin,Cout]` and bias `[Cout]`.
    pub fn conv3d(
        &mut self,
        input: NodeId,
        kernel: NodeId,
        bias: NodeId,
        stride: usize,
        padding: Padding,
    ) -> Result<NodeId, TensorError> {
        let dims = VolumeDims::parse(self.value(input).shape(), "conv3d input")?;
        let geom = self.conv_geometry(dims, kernel, bias, stride, padding)?;
        let y = conv3d_forward(
            self.value(input).data(),
            self.value(kernel).data(),
            self.value(bias).data(),
            &geom,
            dims.batch,
        );
        let shape = dims.to_shape(geom.out_sp, geom.cout);
        let value = Tensor::from_vec(&shape, y)?;
        Ok(self.push(
            value,
            Op::Conv3d {
                input,
                kernel,
                bias,
                geom,
                batch: dims.batch,
            },
        ))
    }

    /// Transposed convolution: the exact linear adjoint of [`Tape::conv3d`]
    /// with the same kernel, stride, and padding, plus a bias add. The
    /// kernel is shaped `[k,k,k,Cout,Cin]` where `Cin` is this op's input
    /// channel count — i.e. it is the kernel of the convolution being
    /// transposed. `output_spatial` resolves the stride ambiguity and must
    /// convolve back to the input's spatial size.
    pub fn deconv3d(
        &mut self,
        input: NodeId,
        kernel: NodeId,
        bias: NodeId,
        stride: usize,
        padding: Padding,
        output_spatial: [usize; 3],
    ) -> Result<NodeId, TensorError> {
        let dims = VolumeDims::parse(self.value(input).shape(), "deconv3d input")?;
        let kshape = self.value(kernel).shape().to_vec();
        let [k0, k1, k2, cout, cin] = kshape[..] else {
            return Err(TensorError::ShapeMismatch(format!(
                "deconv3d kernel must be rank 5 [k,k,k,Cout,Cin], got {kshape:?}"
            )));
        };
        if k0 != k1 || k1 != k2 {
            return Err(TensorError::ShapeMismatch(format!(
                "deconv3d kernel must be cubic, got {kshape:?}"
            )));
        }
        if cin != dims.channels {
            return Err(TensorError::ShapeMismatch(format!(
                "deconv3d kernel expects {cin} input channels, input has {}",
                dims.channels
            )));
        }
        if self.value(bias).shape() != [cout] {
            return Err(TensorError::ShapeMismatch(format!(
                "deconv3d bias must be [{cout}], got {:?}",
                self.value(bias).shape()
            )));
        }
        // Geometry of the conv this op transposes: output_spatial -> input.
        let geom = ConvGeom::resolve(output_spatial, k0, stride, padding, cout, cin)?;
        if geom.out_sp != dims.spatial {
            return Err(TensorError::InconsistentOutputShape {
                requested: output_spatial,
                input: dims.spatial,
                stride,
            });
        }
        let mut y = conv3d_input_grad(
            self.value(input).data(),
            self.value(kernel).data(),
            &geom,
            dims.batch,
        );
        let bias_data = self.value(bias).data();
        for row in y.chunks_exact_mut(cout) {
            for (a, &b) in row.iter_mut().zip(bias_data) {
                *a = *a + b;
            }
        }
        let shape = dims.to_shape(output_spatial, cout);
        let value = Tensor::from_vec(&shape, y)?;
        Ok(self.push(
            value,
            Op::Deconv3d {
                input,
                kernel,
                bias,
                geom,
                batch: dims.batch,
            },
        ))
    }

    /// Max pooling with cubic window; gradient routes to the recorded argmax
    /// positions only.
    pub fn maxpool3d(
        &mut self,
        input: NodeId,
        window: usize,
        stride: usize,
    ) -> Result<NodeId, TensorError> {
        let dims = VolumeDims::parse(self.value(input).shape(), "maxpool3d input")?;
        let (y, argmax, out_sp, tie_gap) =
            maxpool3d_forward(self.value(input).data(), dims, window, stride)?;
        let shape = dims.to_shape(out_sp, dims.channels);
        let value = Tensor::from_vec(&shape, y)?;
        Ok(self.push(
            value,
            Op::MaxPool3d {
                input,
                argmax,
                tie_gap,
            },
        ))
    }

    /// Affine map: input `[B,in]` (or `[in]`) times weights `[in,out]` plus
    /// bias `[out]`.
    pub fn fully_connected(
        &mut self,
        input: NodeId,
        weights: NodeId,
        bias: NodeId,
    ) -> Result<NodeId, TensorError> {
        let in_shape = self.value(input).shape().to_vec();
        let (batch, n_in, batched) = match in_shape[..] {
            [n] => (1, n, false),
            [b, n] => (b, n, true),
            _ => {
                return Err(TensorError::ShapeMismatch(format!(
                    "fully_connected input must be rank 1 or 2, got {in_shape:?}"
                )))
            }
        };
        let wshape = self.value(weights).shape().to_vec();
        let [wi, wo] = wshape[..] else {
            return Err(TensorError::ShapeMismatch(format!(
                "weights must be rank 2 [in,out], got {wshape:?}"
            )));
        };
        if wi != n_in {
            return Err(TensorError::ShapeMismatch(format!(
                "weights expect {wi} inputs, input provides {n_in}"
            )));
        }
        if self.value(bias).shape() != [wo] {
            return Err(TensorError::ShapeMismatch(format!(
                "bias must be [{wo}], got {:?}",
                self.value(bias).shape()
            )));
        }
        let y = fc_forward(
            self.value(input).data(),
            self.value(weights).data(),
            self.value(bias).data(),
            batch,
            n_in,
            wo,
        );
        let shape = if batched { vec![batch, wo] } else { vec![wo] };
        let value = Tensor::from_vec(&shape, y)?;
        Ok(self.push(
            value,
            Op::FullyConnected {
                input,
                weights,
                bias,
                batch,
            },
        ))
    }

    pub fn relu(&mut self, input: NodeId) -> NodeId {
        let value = self.value(input).map(|v| v.max(T::zero()));
        self.push(value, Op::Relu { input })
    }

    /// Elementwise mean of two same-shaped tensors, `(a + b) / 2`.
    pub fn mean_combine(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(TensorError::ShapeMismatch(format!(
                "mean_combine requires identical shapes, got {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let half = T::from_f64(0.5);
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| (x + y) * half)
            .collect();
        let value = Tensor::from_vec(self.value(a).shape().to_vec().as_slice(), data)?;
        Ok(self.push(value, Op::MeanCombine { a, b }))
    }

    pub fn reshape(&mut self, input: NodeId, shape: &[usize]) -> Result<NodeId, TensorError> {
        let value = self.value(input).reshaped(shape)?;
        Ok(self.push(value, Op::Reshape { input }))
    }

    /// Mean squared error over all elements; yields a rank-0 node.
    pub fn mse(&mut self, prediction: NodeId, target: NodeId) -> Result<NodeId, TensorError> {
        if self.value(prediction).shape() != self.value(target).shape() {
            return Err(TensorError::ShapeMismatch(format!(
                "mse requires identical shapes, got {:?} vs {:?}",
                self.value(prediction).shape(),
                self.value(target).shape()
            )));
        }
        let n = self.value(prediction).len();
        let mut acc = T::zero();
        for (&p, &t) in self
            .value(prediction)
            .data()
            .iter()
            .zip(self.value(target).data())
        {
            let d = p - t;
            acc = acc + d * d;
        }
        let value = Tensor::scalar(acc / T::from_f64(n as f64));
        Ok(self.push(value, Op::Mse { prediction, target }))
    }

    /// Elementwise sum of two same-shaped tensors.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(TensorError::ShapeMismatch(format!(
                "add requires identical shapes, got {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let value = Tensor::from_vec(self.value(a).shape().to_vec().as_slice(), data)?;
        Ok(self.push(value, Op::Add { a, b }))
    }

    /// Multiplication by a compile-time constant (e.g. a loss weight).
    pub fn scale(&mut self, input: NodeId, factor: T) -> NodeId {
        let value = self.value(input).map(|v| v * factor);
        self.push(value, Op::Scale { input, factor })
    }

    fn conv_geometry(
        &self,
        dims: VolumeDims,
        kernel: NodeId,
        bias: NodeId,
        stride: usize,
        padding: Padding,
    ) -> Result<ConvGeom, TensorError> {
        let kshape = self.value(kernel).shape().to_vec();
        let [k0, k1, k2, cin, cout] = kshape[..] else {
            return Err(TensorError::ShapeMismatch(format!(
                "conv3d kernel must be rank 5 [k,k,k,Cin,Cout], got {kshape:?}"
            )));
        };
        if k0 != k1 || k1 != k2 {
            return Err(TensorError::ShapeMismatch(format!(
                "conv3d kernel must be cubic, got {kshape:?}"
            )));
        }
        if cin != dims.channels {
            return Err(TensorError::ShapeMismatch(format!(
                "conv3d kernel expects {cin} input channels, input has {}",
                dims.channels
            )));
        }
        if self.value(bias).shape() != [cout] {
            return Err(TensorError::ShapeMismatch(format!(
                "conv3d bias must be [{cout}], got {:?}",
                self.value(bias).shape()
            )));
        }
        ConvGeom::resolve(dims.spatial, k0, stride, padding, cin, cout)
    }

    /// Reverse-mode traversal from a scalar loss. Returns per-node gradients
    /// and accumulates parameter gradients into `params`. Parameters not
    /// used by the graph keep whatever gradient they already had (zero after
    /// `zero_grads`).
    pub fn backward(
        &self,
        loss: NodeId,
        params: &mut ParamSet<T>,
    ) -> Result<NodeGrads<T>, TensorError> {
        if self.value(loss).len() != 1 {
            return Err(TensorError::NonScalarLoss(
                self.value(loss).shape().to_vec(),
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::from_vec(
            self.value(loss).shape().to_vec().as_slice(),
            vec![T::one()],
        )?);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else {
                continue;
            };
            match &self.nodes[i].op {
                Op::Leaf { param } => {
                    if let Some(id) = param {
                        params.accumulate_grad(*id, &g);
                    }
                }
                Op::Conv3d {
                    input,
                    kernel,
                    bias,
                    geom,
                    batch,
                } => {
                    let dx = conv3d_input_grad(g.data(), self.value(*kernel).data(), geom, *batch);
                    let dk = conv3d_kernel_grad(
                        self.value(*input).data(),
                        g.data(),
                        geom,
                        *batch,
                    );
                    let db = channel_sum(g.data(), geom.cout);
                    accumulate(&mut grads, *input, self.shape_of(*input), dx)?;
                    accumulate(&mut grads, *kernel, self.shape_of(*kernel), dk)?;
                    accumulate(&mut grads, *bias, self.shape_of(*bias), db)?;
                }
                Op::Deconv3d {
                    input,
                    kernel,
                    bias,
                    geom,
                    batch,
                } => {
                    // out = adjoint-conv(input) + bias, so d_input is the
                    // forward convolution of the output gradient, and the
                    // kernel gradient swaps the roles of activation and
                    // gradient relative to conv3d. In `geom` the conv-side
                    // input is this op's output: geom.cin channels.
                    let zero_bias = vec![T::zero(); geom.cout];
                    let dx = conv3d_forward(
                        g.data(),
                        self.value(*kernel).data(),
                        &zero_bias,
                        geom,
                        *batch,
                    );
                    let dk =
                        conv3d_kernel_grad(g.data(), self.value(*input).data(), geom, *batch);
                    let db = channel_sum(g.data(), geom.cin);
                    accumulate(&mut grads, *input, self.shape_of(*input), dx)?;
                    accumulate(&mut grads, *kernel, self.shape_of(*kernel), dk)?;
                    accumulate(&mut grads, *bias, self.shape_of(*bias), db)?;
                }
                Op::MaxPool3d { input, argmax, .. } => {
                    let mut dx = vec![T::zero(); self.value(*input).len()];
                    for (&src, &gv) in argmax.iter().zip(g.data()) {
                        dx[src] = dx[src] + gv;
                    }
                    accumulate(&mut grads, *input, self.shape_of(*input), dx)?;
                }
                Op::FullyConnected {
                    input,
                    weights,
                    bias,
                    batch,
                } => {
                    let wshape = self.value(*weights).shape();
                    let (n_in, n_out) = (wshape[0], wshape[1]);
                    let (dx, dw, db) = fc_backward(
                        self.value(*input).data(),
                        self.value(*weights).data(),
                        g.data(),
                        *batch,
                        n_in,
                        n_out,
                    );
                    accumulate(&mut grads, *input, self.shape_of(*input), dx)?;
                    accumulate(&mut grads, *weights, self.shape_of(*weights), dw)?;
                    accumulate(&mut grads, *bias, self.shape_of(*bias), db)?;
                }
                Op::Relu { input } => {
                    let dx: Vec<T> = self
                        .value(*input)
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(&x, &gv)| if x > T::zero() { gv } else { T::zero() })
                        .collect();
                    accumulate(&mut grads, *input, self.shape_of(*input), dx)?;
                }
                Op::MeanCombine { a, b } => {
                    let half = T::from_f64(0.5);
                    let dg: Vec<T> = g.data().iter().map(|&v| v * half).collect();
                    accumulate(&mut grads, *a, self.shape_of(*a), dg.clone())?;
                    accumulate(&mut grads, *b, self.shape_of(*b), dg)?;
                }
                Op::Reshape { input } => {
                    accumulate(&mut grads, *input, self.shape_of(*input), g.data().to_vec())?;
                }
                Op::Mse { prediction, target } => {
                    let n = self.value(*prediction).len();
                    let scale = T::from_f64(2.0 / n as f64) * g.item();
                    let dpred: Vec<T> = self
                        .value(*prediction)
                        .data()
                        .iter()
                        .zip(self.value(*target).data())
                        .map(|(&p, &t)| (p - t) * scale)
                        .collect();
                    let dtarget: Vec<T> = dpred.iter().map(|&v| -v).collect();
                    accumulate(&mut grads, *prediction, self.shape_of(*prediction), dpred)?;
                    accumulate(&mut grads, *target, self.shape_of(*target), dtarget)?;
                }
                Op::Add { a, b } => {
                    accumulate(&mut grads, *a, self.shape_of(*a), g.data().to_vec())?;
                    accumulate(&mut grads, *b, self.shape_of(*b), g.data().to_vec())?;
                }
                Op::Scale { input, factor } => {
                    let dg: Vec<T> = g.data().iter().map(|&v| v * *factor).collect();
                    accumulate(&mut grads, *input, self.shape_of(*input), dg)?;
                }
            }
            grads[i] = Some(g);
        }
        Ok(NodeGrads { grads })
    }


    fn shape_of(&self, id: NodeId) -> Vec<usize> {
        self.value(id).shape().to_vec()
    }

    /// Distance of this forward pass from the nearest non-smooth point: the
    /// smallest |pre-activation| over all relu inputs and the smallest
    /// max-to-runner-up gap over all pooling windows. Finite-difference
    /// fixtures require this to be comfortably larger than the probe step,
    /// otherwise a perturbation flips a kink and corrupts the numeric
    /// derivative.
    pub fn kink_margin(&self) -> f64 {
        let mut margin = f64::INFINITY;
        for node in &self.nodes {
            match &node.op {
                Op::Relu { input } => {
                    for &v in self.value(*input).data() {
                        margin = margin.min(v.to_f64().abs());
                    }
                }
                Op::MaxPool3d { tie_gap, .. } => {
                    margin = margin.min(*tie_gap);
                }
                _ => {}
            }
        }
        margin
    }
}

fn accumulate<T: Scalar>(
    grads: &mut [Option<Tensor<T>>],
    id: NodeId,
    shape: Vec<usize>,
    data: Vec<T>,
) -> Result<(), TensorError> {
    match &mut grads[id.0] {
        Some(existing) => {
            for (a, &v) in existing.data_mut().iter_mut().zip(&data) {
                *a = *a + v;
            }
        }
        slot @ None => {
            *slot = Some(Tensor::from_vec(&shape, data)?);
        }
    }
    Ok(())
}
