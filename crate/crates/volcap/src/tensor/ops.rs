//! Raw kernels behind the differentiable ops: 3D cross-correlation, its two
//! adjoints, max-pooling, and the affine map. All kernels are gathers from
//! the written element's perspective, so parallel execution is bitwise
//! identical to sequential.

use rayon::prelude::*;

use super::{Padding, Scalar, TensorError, VolumeDims};

/// Below this output size the rayon dispatch overhead dominates.
const PARALLEL_THRESHOLD: usize = 32_768;

/// Resolved geometry of one convolution: spatial sizes, padding, channels.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub k: usize,
    pub stride: usize,
    pub in_sp: [usize; 3],
    pub out_sp: [usize; 3],
    pub pad_lo: [usize; 3],
    pub cin: usize,
    pub cout: usize,
}

impl ConvGeom {
    pub fn resolve(
        in_sp: [usize; 3],
        k: usize,
        stride: usize,
        padding: Padding,
        cin: usize,
        cout: usize,
    ) -> Result<Self, TensorError> {
        if k == 0 || k % 2 == 0 {
            return Err(TensorError::ShapeMismatch(format!(
                "kernel size must be odd and positive, got {k}"
            )));
        }
        if stride == 0 {
            return Err(TensorError::ShapeMismatch("stride must be >= 1".into()));
        }
        let mut out_sp = [0usize; 3];
        let mut pad_lo = [0usize; 3];
        for a in 0..3 {
            match padding {
                Padding::Same => {
                    out_sp[a] = in_sp[a].div_ceil(stride);
                    let total = ((out_sp[a] - 1) * stride + k).saturating_sub(in_sp[a]);
                    pad_lo[a] = total / 2;
                }
                Padding::Valid => {
                    if in_sp[a] < k {
                        return Err(TensorError::ShapeMismatch(format!(
                            "valid convolution needs input >= kernel, got {} < {k}",
                            in_sp[a]
                        )));
                    }
                    out_sp[a] = (in_sp[a] - k) / stride + 1;
                    pad_lo[a] = 0;
                }
            }
        }
        Ok(ConvGeom {
            k,
            stride,
            in_sp,
            out_sp,
            pad_lo,
            cin,
            cout,
        })
    }

    fn out_len(&self, batch: usize) -> usize {
        batch * self.out_sp.iter().product::<usize>() * self.cout
    }

    fn in_len(&self, batch: usize) -> usize {
        batch * self.in_sp.iter().product::<usize>() * self.cin
    }
}

/// y[b,od,oh,ow,oc] = bias[oc] + sum_{kd,kh,kw,ic} x[b,od*s+kd-p,...,ic] * K[kd,kh,kw,ic,oc]
pub(crate) fn conv3d_forward<T: Scalar>(
    x: &[T],
    kernel: &[T],
    bias: &[T],
    geom: &ConvGeom,
    batch: usize,
) -> Vec<T> {
    debug_assert_eq!(x.len(), geom.in_len(batch));
    debug_assert_eq!(kernel.len(), geom.k.pow(3) * geom.cin * geom.cout);
    debug_assert_eq!(bias.len(), geom.cout);
    let g = *geom;
    let [id_, ih_, iw_] = g.in_sp;
    let [od_, oh_, ow_] = g.out_sp;
    let (cin, cout, k, s) = (g.cin, g.cout, g.k, g.stride);
    let mut out = vec![T::zero(); g.out_len(batch)];
    let chunk = oh_ * ow_ * cout;

    let fill = |slab: usize, out_slab: &mut [T]| {
        let b = slab / od_;
        let od = slab % od_;
        for oh in 0..oh_ {
            for ow in 0..ow_ {
                let acc = &mut out_slab[(oh * ow_ + ow) * cout..(oh * ow_ + ow + 1) * cout];
                acc.copy_from_slice(bias);
                for kd in 0..k {
                    let id = (od * s + kd) as isize - g.pad_lo[0] as isize;
                    if id < 0 || id >= id_ as isize {
                        continue;
                    }
                    for kh in 0..k {
                        let ih = (oh * s + kh) as isize - g.pad_lo[1] as isize;
                        if ih < 0 || ih >= ih_ as isize {
                            continue;
                        }
                        for kw in 0..k {
                            let iw = (ow * s + kw) as isize - g.pad_lo[2] as isize;
                            if iw < 0 || iw >= iw_ as isize {
                                continue;
                            }
                            let x_base = (((b * id_ + id as usize) * ih_ + ih as usize) * iw_
                                + iw as usize)
                                * cin;
                            let k_base = (((kd * k + kh) * k + kw) * cin) * cout;
                            for ic in 0..cin {
                                let xv = x[x_base + ic];
                                let krow = &kernel[k_base + ic * cout..k_base + (ic + 1) * cout];
                                for (a, &kv) in acc.iter_mut().zip(krow) {
                                    *a = *a + xv * kv;
                                }
                            }
                        }
                    }
                }
            }
        }
    };

    if out.len() >= PARALLEL_THRESHOLD {
        out.par_chunks_mut(chunk).enumerate().for_each(|(i, c)| fill(i, c));
    } else {
        out.chunks_mut(chunk).enumerate().for_each(|(i, c)| fill(i, c));
    }
    out
}

/// Adjoint of `conv3d_forward` in its input slot:
/// dx[b,id,ih,iw,ic] = sum over kernel taps whose stride-aligned output
/// position exists of dy[b,od,oh,ow,oc] * K[kd,kh,kw,ic,oc].
///
/// Also the forward map of the transposed convolution.
pub(crate) fn conv3d_input_grad<T: Scalar>(
    dy: &[T],
    kernel: &[T],
    geom: &ConvGeom,
    batch: usize,
) -> Vec<T> {
    debug_assert_eq!(dy.len(), geom.out_len(batch));
    let g = *geom;
    let [id_, ih_, iw_] = g.in_sp;
    let [od_, oh_, ow_] = g.out_sp;
    let (cin, cout, k, s) = (g.cin, g.cout, g.k, g.stride);
    let mut dx = vec![T::zero(); g.in_len(batch)];
    let chunk = ih_ * iw_ * cin;

    // For input position i and tap kd: od*s = i + pad - kd must be a
    // non-negative multiple of the stride with od < out.
    let tap = |i: usize, pad: usize, kd: usize, out: usize| -> Option<usize> {
        let t = i as isize + pad as isize - kd as isize;
        if t < 0 || t % s as isize != 0 {
            return None;
        }
        let o = (t / s as isize) as usize;
        (o < out).then_some(o)
    };

    let fill = |slab: usize, dx_slab: &mut [T]| {
        let b = slab / id_;
        let id = slab % id_;
        for ih in 0..ih_ {
            for iw in 0..iw_ {
                let acc = &mut dx_slab[(ih * iw_ + iw) * cin..(ih * iw_ + iw + 1) * cin];
                for kd in 0..k {
                    let Some(od) = tap(id, g.pad_lo[0], kd, od_) else {
                        continue;
                    };
                    for kh in 0..k {
                        let Some(oh) = tap(ih, g.pad_lo[1], kh, oh_) else {
                            continue;
                        };
                        for kw in 0..k {
                            let Some(ow) = tap(iw, g.pad_lo[2], kw, ow_) else {
                                continue;
                            };
                            let dy_base = (((b * od_ + od) * oh_ + oh) * ow_ + ow) * cout;
                            let dyrow = &dy[dy_base..dy_base + cout];
                            let k_base = (((kd * k + kh) * k + kw) * cin) * cout;
                            for (ic, a) in acc.iter_mut().enumerate() {
                                let krow = &kernel[k_base + ic * cout..k_base + (ic + 1) * cout];
                                let mut sum = T::zero();
                                for (&gv, &kv) in dyrow.iter().zip(krow) {
                                    sum = sum + gv * kv;
                                }
                                *a = *a + sum;
                            }
                        }
                    }
                }
            }
        }
    };

    if dx.len() >= PARALLEL_THRESHOLD {
        dx.par_chunks_mut(chunk).enumerate().for_each(|(i, c)| fill(i, c));
    } else {
        dx.chunks_mut(chunk).enumerate().for_each(|(i, c)| fill(i, c));
    }
    dx
}

/// dK[kd,kh,kw,ic,oc] = sum_{b,od,oh,ow} x[b,od*s+kd-p,...,ic] * dy[b,od,oh,ow,oc]
pub(crate) fn conv3d_kernel_grad<T: Scalar>(
    x: &[T],
    dy: &[T],
    geom: &ConvGeom,
    batch: usize,
) -> Vec<T> {
    let g = *geom;
    let [id_, ih_, iw_] = g.in_sp;
    let [od_, oh_, ow_] = g.out_sp;
    let (cin, cout, k, s) = (g.cin, g.cout, g.k, g.stride);
    let mut dk = vec![T::zero(); k * k * k * cin * cout];
    let chunk = cin * cout;

    let fill = |tap_idx: usize, block: &mut [T]| {
        let kd = tap_idx / (k * k);
        let kh = (tap_idx / k) % k;
        let kw = tap_idx % k;
        for b in 0..batch {
            for od in 0..od_ {
                let id = (od * s + kd) as isize - g.pad_lo[0] as isize;
                if id < 0 || id >= id_ as isize {
                    continue;
                }
                for oh in 0..oh_ {
                    let ih = (oh * s + kh) as isize - g.pad_lo[1] as isize;
                    if ih < 0 || ih >= ih_ as isize {
                        continue;
                    }
                    for ow in 0..ow_ {
                        let iw = (ow * s + kw) as isize - g.pad_lo[2] as isize;
                        if iw < 0 || iw >= iw_ as isize {
                            continue;
                        }
                        let x_base = (((b * id_ + id as usize) * ih_ + ih as usize) * iw_
                            + iw as usize)
                            * cin;
                        let dy_base = (((b * od_ + od) * oh_ + oh) * ow_ + ow) * cout;
                        let dyrow = &dy[dy_base..dy_base + cout];
                        for ic in 0..cin {
                            let xv = x[x_base + ic];
                            let brow = &mut block[ic * cout..(ic + 1) * cout];
                            for (a, &gv) in brow.iter_mut().zip(dyrow) {
                                *a = *a + xv * gv;
                            }
                        }
                    }
                }
            }
        }
    };

    let taps = k * k * k;
    if taps * chunk >= PARALLEL_THRESHOLD && taps > 1 {
        dk.par_chunks_mut(chunk).enumerate().for_each(|(i, c)| fill(i, c));
    } else {
        dk.chunks_mut(chunk).enumerate().for_each(|(i, c)| fill(i, c));
    }
    dk
}

/// Sums a gradient over every axis except the trailing channel axis.
pub(crate) fn channel_sum<T: Scalar>(dy: &[T], channels: usize) -> Vec<T> {
    let mut out = vec![T::zero(); channels];
    for row in dy.chunks_exact(channels) {
        for (a, &v) in out.iter_mut().zip(row) {
            *a = *a + v;
        }
    }
    out
}

/// Valid-style max pooling over cubic windows; records the flat input index
/// of each selected maximum (first occurrence wins ties) for backward
/// routing, plus the smallest max-to-runner-up gap across all windows (the
/// margin to an argmax flip, used by gradient-check fixtures). The window is
/// clamped per axis so degenerate (flat) axes pass through unchanged.
pub(crate) fn maxpool3d_forward<T: Scalar>(
    x: &[T],
    dims: VolumeDims,
    window: usize,
    stride: usize,
) -> Result<(Vec<T>, Vec<usize>, [usize; 3], f64), TensorError> {
    if window == 0 || stride == 0 {
        return Err(TensorError::ShapeMismatch(
            "pool window and stride must be >= 1".into(),
        ));
    }
    let [d, h, w] = dims.spatial;
    let win = [window.min(d), window.min(h), window.min(w)];
    let out_sp = [
        (d - win[0]) / stride + 1,
        (h - win[1]) / stride + 1,
        (w - win[2]) / stride + 1,
    ];
    let c = dims.channels;
    let len = dims.batch * out_sp.iter().product::<usize>() * c;
    let mut out = vec![T::zero(); len];
    let mut arg = vec![0usize; len];
    let mut min_gap = f64::INFINITY;
    let mut o = 0;
    for b in 0..dims.batch {
        for od in 0..out_sp[0] {
            for oh in 0..out_sp[1] {
                for ow in 0..out_sp[2] {
                    for ic in 0..c {
                        let mut best = T::neg_infinity();
                        let mut second = T::neg_infinity();
                        let mut best_idx = 0usize;
                        for kd in 0..win[0] {
                            for kh in 0..win[1] {
                                for kw in 0..win[2] {
                                    let idx = ((((b * d + od * stride + kd) * h
                                        + oh * stride
                                        + kh)
                                        * w
                                        + ow * stride
                                        + kw)
                                        * c)
                                        + ic;
                                    if x[idx] > best {
                                        second = best;
                                        best = x[idx];
                                        best_idx = idx;
                                    } else if x[idx] > second {
                                        second = x[idx];
                                    }
                                }
                            }
                        }
                        // A 0-0 tie is two relu-clamped values; no gradient
                        // flows through either, so it is not a kink.
                        if second.is_finite() && !(best == T::zero() && second == T::zero()) {
                            min_gap = min_gap.min((best - second).to_f64());
                        }
                        out[o] = best;
                        arg[o] = best_idx;
                        o += 1;
                    }
                }
            }
        }
    }
    Ok((out, arg, out_sp, min_gap))
}

/// y = x W + b with x `[B, in]` (or `[in]`), W `[in, out]`, b `[out]`.
pub(crate) fn fc_forward<T: Scalar>(
    x: &[T],
    weights: &[T],
    bias: &[T],
    batch: usize,
    n_in: usize,
    n_out: usize,
) -> Vec<T> {
    let mut out = vec![T::zero(); batch * n_out];
    for b in 0..batch {
        let row = &mut out[b * n_out..(b + 1) * n_out];
        row.copy_from_slice(bias);
        let xrow = &x[b * n_in..(b + 1) * n_in];
        for (i, &xv) in xrow.iter().enumerate() {
            let wrow = &weights[i * n_out..(i + 1) * n_out];
            for (a, &wv) in row.iter_mut().zip(wrow) {
                *a = *a + xv * wv;
            }
        }
    }
    out
}

pub(crate) fn fc_backward<T: Scalar>(
    x: &[T],
    weights: &[T],
    dy: &[T],
    batch: usize,
    n_in: usize,
    n_out: usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let mut dx = vec![T::zero(); batch * n_in];
    let mut dw = vec![T::zero(); n_in * n_out];
    let mut db = vec![T::zero(); n_out];
    for b in 0..batch {
        let gr = &dy[b * n_out..(b + 1) * n_out];
        let xr = &x[b * n_in..(b + 1) * n_in];
        for i in 0..n_in {
            let wrow = &weights[i * n_out..(i + 1) * n_out];
            let mut sum = T::zero();
            for (&gv, &wv) in gr.iter().zip(wrow) {
                sum = sum + gv * wv;
            }
            dx[b * n_in + i] = dx[b * n_in + i] + sum;
            let dwrow = &mut dw[i * n_out..(i + 1) * n_out];
            let xv = xr[i];
            for (a, &gv) in dwrow.iter_mut().zip(gr) {
                *a = *a + xv * gv;
            }
        }
        for (a, &gv) in db.iter_mut().zip(gr) {
            *a = *a + gv;
        }
    }
    (dx, dw, db)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_padding_output_is_ceil() {
        let g = ConvGeom::resolve([5, 5, 5], 3, 2, Padding::Same, 1, 1).unwrap();
        assert_eq!(g.out_sp, [3, 3, 3]);
        let g = ConvGeom::resolve([6, 6, 6], 3, 2, Padding::Same, 1, 1).unwrap();
        assert_eq!(g.out_sp, [3, 3, 3]);
    }

    #[test]
    fn valid_padding_output_shrinks() {
        let g = ConvGeom::resolve([5, 5, 5], 3, 1, Padding::Valid, 1, 1).unwrap();
        assert_eq!(g.out_sp, [3, 3, 3]);
        assert!(ConvGeom::resolve([2, 2, 2], 3, 1, Padding::Valid, 1, 1).is_err());
    }

    #[test]
    fn even_kernel_rejected() {
        assert!(ConvGeom::resolve([4, 4, 4], 2, 1, Padding::Same, 1, 1).is_err());
    }

    #[test]
    fn all_ones_valid_conv_sums_window() {
        let g = ConvGeom::resolve([3, 3, 3], 3, 1, Padding::Valid, 1, 1).unwrap();
        let x = vec![1.0f64; 27];
        let kernel = vec![1.0f64; 27];
        let y = conv3d_forward(&x, &kernel, &[0.5], &g, 1);
        assert_eq!(y, vec![27.5]);
    }

    #[test]
    fn maxpool_matches_hand_case() {
        // 1D-like fixture [1,5,3,2] as a [4,1,1,1] volume, window 2 stride 2
        let dims = VolumeDims::parse(&[4, 1, 1, 1], "x").unwrap();
        let (y, arg, out_sp, gap) =
            maxpool3d_forward(&[1.0f64, 5.0, 3.0, 2.0], dims, 2, 2).unwrap();
        assert_eq!(out_sp, [2, 1, 1]);
        assert_eq!(y, vec![5.0, 3.0]);
        assert_eq!(arg, vec![1, 2]);
        assert_eq!(gap, 1.0); // windows (1,5) and (3,2): min gap 3-2
    }

    #[test]
    fn fc_identity_passes_through() {
        let mut w = vec![0.0f64; 9];
        for i in 0..3 {
            w[i * 3 + i] = 1.0;
        }
        let y = fc_forward(&[1.0, -2.0, 3.0], &w, &[0.0; 3], 1, 3, 3);
        assert_eq!(y, vec![1.0, -2.0, 3.0]);
    }
}
