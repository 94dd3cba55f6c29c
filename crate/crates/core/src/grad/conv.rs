//! 2-D convolution primitives in NCHW layout: stride-1 same-padded
//! cross-correlation, the patchifying strided variant (kernel = stride), and
//! its transposed inverse.

use super::{Scalar, Tape, Tensor};
use crate::error::{Error, Result};
use crate::exec;

#[inline]
fn axpy<T: Scalar>(out: &mut [T], alpha: T, row: &[T]) {
    for (o, &r) in out.iter_mut().zip(row) {
        *o += alpha * r;
    }
}

/// Accumulate `w * shifted(in_row)` into `out_row`, where the shift is in
/// columns and out-of-range columns are zero (same padding).
#[inline]
fn axpy_shifted<T: Scalar>(out_row: &mut [T], in_row: &[T], weight: T, shift: isize) {
    let w = out_row.len() as isize;
    let lo = 0.max(-shift) as usize;
    let hi = (w.min(w - shift)) as usize;
    if lo >= hi {
        return;
    }
    let src = &in_row[(lo as isize + shift) as usize..(hi as isize + shift) as usize];
    axpy(&mut out_row[lo..hi], weight, src);
}

impl<T: Scalar> Tape<T> {
    /// Same-padded stride-1 cross-correlation plus bias:
    /// `x: [B, C_in, H, W]`, `w: [C_out, C_in, k, k]` (k odd), `b: [C_out]`.
    pub fn conv2d(&mut self, x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        let &[bs, c_in, h, wd] = x.shape() else {
            return Err(Error::shape("conv2d", format!("input must be [B,C,H,W], got {:?}", x.shape())));
        };
        let &[c_out, wc_in, k, k2] = w.shape() else {
            return Err(Error::shape("conv2d", format!("weight must be [Co,Ci,k,k], got {:?}", w.shape())));
        };
        if k != k2 || k % 2 == 0 {
            return Err(Error::shape("conv2d", format!("kernel must be odd square, got {k}x{k2}")));
        }
        if wc_in != c_in {
            return Err(Error::shape(
                "conv2d",
                format!("input has {c_in} channels but weight expects {wc_in}"),
            ));
        }
        if b.shape() != [c_out] {
            return Err(Error::shape("conv2d", format!("bias must be [{c_out}], got {:?}", b.shape())));
        }
        let pad = (k / 2) as isize;
        let plane = h * wd;

        let x_data = x.data_arc();
        let w_data = w.data_arc();
        let mut data = vec![T::ZERO; bs * c_out * plane];
        exec::for_each_chunk(&mut data, plane, |bc, out_plane| {
            let (bi, co) = (bc / c_out, bc % c_out);
            let bias = b.data()[co];
            for v in out_plane.iter_mut() {
                *v = bias;
            }
            for ci in 0..c_in {
                let x_plane = &x_data[(bi * c_in + ci) * plane..(bi * c_in + ci + 1) * plane];
                for ky in 0..k {
                    let dy = ky as isize - pad;
                    for kx in 0..k {
                        let dx = kx as isize - pad;
                        let weight = w_data[((co * c_in + ci) * k + ky) * k + kx];
                        if weight == T::ZERO {
                            continue;
                        }
                        for oh in 0..h as isize {
                            let ih = oh + dy;
                            if ih < 0 || ih >= h as isize {
                                continue;
                            }
                            axpy_shifted(
                                &mut out_plane[oh as usize * wd..(oh as usize + 1) * wd],
                                &x_plane[ih as usize * wd..(ih as usize + 1) * wd],
                                weight,
                                dx,
                            );
                        }
                    }
                }
            }
        });
        let out = Tensor::from_vec(vec![bs, c_out, h, wd], data)?;
        let (nx, nw, nb) = (x.node(), w.node(), b.node());
        if nx.is_none() && nw.is_none() && nb.is_none() {
            return Ok(out);
        }
        let node = self.record(move |g, store| {
            if let Some(nb) = nb {
                let mut gb = vec![T::ZERO; c_out];
                for bi in 0..bs {
                    for (co, slot) in gb.iter_mut().enumerate() {
                        for &v in &g[(bi * c_out + co) * plane..(bi * c_out + co + 1) * plane] {
                            *slot += v;
                        }
                    }
                }
                store.accumulate(nb, gb);
            }
            if let Some(nx) = nx {
                // dx = g correlated with the flipped kernel, channels transposed
                let mut gx = vec![T::ZERO; bs * c_in * plane];
                exec::for_each_chunk(&mut gx, plane, |bc, gx_plane| {
                    let (bi, ci) = (bc / c_in, bc % c_in);
                    for co in 0..c_out {
                        let g_plane = &g[(bi * c_out + co) * plane..(bi * c_out + co + 1) * plane];
                        for ky in 0..k {
                            let dy = ky as isize - pad;
                            for kx in 0..k {
                                let dx = kx as isize - pad;
                                let weight = w_data[((co * c_in + ci) * k + ky) * k + kx];
                                if weight == T::ZERO {
                                    continue;
                                }
                                // out[oh] reads in[oh + dy] forward, so the
                                // gradient flows with the shifts negated
                                for ih in 0..h as isize {
                                    let oh = ih - dy;
                                    if oh < 0 || oh >= h as isize {
                                        continue;
                                    }
                                    axpy_shifted(
                                        &mut gx_plane[ih as usize * wd..(ih as usize + 1) * wd],
                                        &g_plane[oh as usize * wd..(oh as usize + 1) * wd],
                                        weight,
                                        -dx,
                                    );
                                }
                            }
                        }
                    }
                });
                store.accumulate(nx, gx);
            }
            if let Some(nw) = nw {
                let mut gw = vec![T::ZERO; c_out * c_in * k * k];
                exec::for_each_chunk(&mut gw, c_in * k * k, |co, gw_slab| {
                    for bi in 0..bs {
                        let g_plane = &g[(bi * c_out + co) * plane..(bi * c_out + co + 1) * plane];
                        for ci in 0..c_in {
                            let x_plane =
                                &x_data[(bi * c_in + ci) * plane..(bi * c_in + ci + 1) * plane];
                            for ky in 0..k {
                                let dy = ky as isize - pad;
                                for kx in 0..k {
                                    let dx = kx as isize - pad;
                                    let mut acc = T::ZERO;
                                    for oh in 0..h as isize {
                                        let ih = oh + dy;
                                        if ih < 0 || ih >= h as isize {
                                            continue;
                                        }
                                        let orow =
                                            &g_plane[oh as usize * wd..(oh as usize + 1) * wd];
                                        let irow =
                                            &x_plane[ih as usize * wd..(ih as usize + 1) * wd];
                                        let lo = 0.max(-dx) as usize;
                                        let hi = ((wd as isize).min(wd as isize - dx)) as usize;
                                        if lo < hi {
                                            let shifted = &irow
                                                [(lo as isize + dx) as usize..(hi as isize + dx) as usize];
                                            for (&gv, &xv) in orow[lo..hi].iter().zip(shifted) {
                                                acc += gv * xv;
                                            }
                                        }
                                    }
                                    gw_slab[(ci * k + ky) * k + kx] += acc;
                                }
                            }
                        }
                    }
                });
                store.accumulate(nw, gw);
            }
        });
        Ok(out.with_node(node))
    }

    /// Patchifying convolution with kernel = stride = `p` and no padding:
    /// `x: [B, C_in, H, W]` (H, W divisible by p) -> `[B, C_out, H/p, W/p]`.
    pub fn conv2d_patch(&mut self, x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>, p: usize) -> Result<Tensor<T>> {
        let &[bs, c_in, h, wd] = x.shape() else {
            return Err(Error::shape("conv2d_patch", format!("input must be [B,C,H,W], got {:?}", x.shape())));
        };
        let &[c_out, wc_in, k, k2] = w.shape() else {
            return Err(Error::shape("conv2d_patch", format!("weight must be [Co,Ci,p,p], got {:?}", w.shape())));
        };
        if k != p || k2 != p || p == 0 {
            return Err(Error::shape("conv2d_patch", format!("kernel {k}x{k2} must equal stride {p}")));
        }
        if wc_in != c_in || b.shape() != [c_out] {
            return Err(Error::shape("conv2d_patch", "channel/bias mismatch".to_string()));
        }
        if h % p != 0 || wd % p != 0 {
            return Err(Error::shape(
                "conv2d_patch",
                format!("H={h}, W={wd} not divisible by patch {p}; pad the input first"),
            ));
        }
        let (oh, ow) = (h / p, wd / p);
        let in_plane = h * wd;
        let out_plane = oh * ow;

        let x_data = x.data_arc();
        let w_data = w.data_arc();
        let mut data = vec![T::ZERO; bs * c_out * out_plane];
        exec::for_each_chunk(&mut data, out_plane, |bc, plane_out| {
            let (bi, co) = (bc / c_out, bc % c_out);
            let bias = b.data()[co];
            for (o_idx, slot) in plane_out.iter_mut().enumerate() {
                let (orow, ocol) = (o_idx / ow, o_idx % ow);
                let mut acc = bias;
                for ci in 0..c_in {
                    let x_plane = &x_data[(bi * c_in + ci) * in_plane..];
                    for ky in 0..p {
                        let row = &x_plane[(orow * p + ky) * wd + ocol * p..][..p];
                        let wrow = &w_data[((co * c_in + ci) * p + ky) * p..][..p];
                        for (&xv, &wv) in row.iter().zip(wrow) {
                            acc += xv * wv;
                        }
                    }
                }
                *slot = acc;
            }
        });
        let out = Tensor::from_vec(vec![bs, c_out, oh, ow], data)?;
        let (nx, nw, nb) = (x.node(), w.node(), b.node());
        if nx.is_none() && nw.is_none() && nb.is_none() {
            return Ok(out);
        }
        let node = self.record(move |g, store| {
            if let Some(nb) = nb {
                let mut gb = vec![T::ZERO; c_out];
                for bi in 0..bs {
                    for (co, slot) in gb.iter_mut().enumerate() {
                        for &v in &g[(bi * c_out + co) * out_plane..(bi * c_out + co + 1) * out_plane] {
                            *slot += v;
                        }
                    }
                }
                store.accumulate(nb, gb);
            }
            if let Some(nx) = nx {
                // patches do not overlap, so each input position belongs to
                // exactly one output position
                let mut gx = vec![T::ZERO; bs * c_in * in_plane];
                exec::for_each_chunk(&mut gx, in_plane, |bc, gx_plane| {
                    let (bi, ci) = (bc / c_in, bc % c_in);
                    for co in 0..c_out {
                        let g_plane = &g[(bi * c_out + co) * out_plane..];
                        for o_idx in 0..out_plane {
                            let gv = g_plane[o_idx];
                            if gv == T::ZERO {
                                continue;
                            }
                            let (orow, ocol) = (o_idx / ow, o_idx % ow);
                            for ky in 0..p {
                                let dst = &mut gx_plane[(orow * p + ky) * wd + ocol * p..][..p];
                                let wrow = &w_data[((co * c_in + ci) * p + ky) * p..][..p];
                                axpy(dst, gv, wrow);
                            }
                        }
                    }
                });
                store.accumulate(nx, gx);
            }
            if let Some(nw) = nw {
                let mut gw = vec![T::ZERO; c_out * c_in * p * p];
                exec::for_each_chunk(&mut gw, c_in * p * p, |co, gw_slab| {
                    for bi in 0..bs {
                        let g_plane = &g[(bi * c_out + co) * out_plane..];
                        for ci in 0..c_in {
                            let x_plane = &x_data[(bi * c_in + ci) * in_plane..];
                            for o_idx in 0..out_plane {
                                let gv = g_plane[o_idx];
                                if gv == T::ZERO {
                                    continue;
                                }
                                let (orow, ocol) = (o_idx / ow, o_idx % ow);
                                for ky in 0..p {
                                    let row = &x_plane[(orow * p + ky) * wd + ocol * p..][..p];
                                    let dst = &mut gw_slab[(ci * p + ky) * p..][..p];
                                    axpy(dst, gv, row);
                                }
                            }
                        }
                    }
                });
                store.accumulate(nw, gw);
            }
        });
        Ok(out.with_node(node))
    }

    /// Transposed convolution with kernel = stride = `p` (inverse shape of
    /// [`Self::conv2d_patch`]): `x: [B, C_in, H, W]` -> `[B, C_out, H*p, W*p]`
    /// with `w: [C_in, C_out, p, p]`.
    pub fn conv_transpose2d_patch(&mut self, x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>, p: usize) -> Result<Tensor<T>> {
        let &[bs, c_in, h, wd] = x.shape() else {
            return Err(Error::shape("conv_transpose2d_patch", format!("input must be [B,C,H,W], got {:?}", x.shape())));
        };
        let &[wc_in, c_out, k, k2] = w.shape() else {
            return Err(Error::shape("conv_transpose2d_patch", format!("weight must be [Ci,Co,p,p], got {:?}", w.shape())));
        };
        if k != p || k2 != p || p == 0 || wc_in != c_in || b.shape() != [c_out] {
            return Err(Error::shape("conv_transpose2d_patch", "kernel/stride/channel mismatch".to_string()));
        }
        let (oh, ow) = (h * p, wd * p);
        let in_plane = h * wd;
        let out_plane = oh * ow;

        let x_data = x.data_arc();
        let w_data = w.data_arc();
        let mut data = vec![T::ZERO; bs * c_out * out_plane];
        exec::for_each_chunk(&mut data, out_plane, |bc, plane_out| {
            let (bi, co) = (bc / c_out, bc % c_out);
            let bias = b.data()[co];
            for v in plane_out.iter_mut() {
                *v = bias;
            }
            for ci in 0..c_in {
                let x_plane = &x_data[(bi * c_in + ci) * in_plane..];
                for i_idx in 0..in_plane {
                    let xv = x_plane[i_idx];
                    if xv == T::ZERO {
                        continue;
                    }
                    let (irow, icol) = (i_idx / wd, i_idx % wd);
                    for ky in 0..p {
                        let dst = &mut plane_out[(irow * p + ky) * ow + icol * p..][..p];
                        let wrow = &w_data[((ci * c_out + co) * p + ky) * p..][..p];
                        axpy(dst, xv, wrow);
                    }
                }
            }
        });
        let out = Tensor::from_vec(vec![bs, c_out, oh, ow], data)?;
        let (nx, nw, nb) = (x.node(), w.node(), b.node());
        if nx.is_none() && nw.is_none() && nb.is_none() {
            return Ok(out);
        }
        let node = self.record(move |g, store| {
            if let Some(nb) = nb {
                let mut gb = vec![T::ZERO; c_out];
                for bi in 0..bs {
                    for (co, slot) in gb.iter_mut().enumerate() {
                        for &v in &g[(bi * c_out + co) * out_plane..(bi * c_out + co + 1) * out_plane] {
                            *slot += v;
                        }
                    }
                }
                store.accumulate(nb, gb);
            }
            if let Some(nx) = nx {
                let mut gx = vec![T::ZERO; bs * c_in * in_plane];
                exec::for_each_chunk(&mut gx, in_plane, |bc, gx_plane| {
                    let (bi, ci) = (bc / c_in, bc % c_in);
                    for co in 0..c_out {
                        let g_plane = &g[(bi * c_out + co) * out_plane..];
                        for (i_idx, slot) in gx_plane.iter_mut().enumerate() {
                            let (irow, icol) = (i_idx / wd, i_idx % wd);
                            let mut acc = T::ZERO;
                            for ky in 0..p {
                                let row = &g_plane[(irow * p + ky) * ow + icol * p..][..p];
                                let wrow = &w_data[((ci * c_out + co) * p + ky) * p..][..p];
                                for (&gv, &wv) in row.iter().zip(wrow) {
                                    acc += gv * wv;
                                }
                            }
                            *slot += acc;
                        }
                    }
                });
                store.accumulate(nx, gx);
            }
            if let Some(nw) = nw {
                let mut gw = vec![T::ZERO; c_in * c_out * p * p];
                exec::for_each_chunk(&mut gw, c_out * p * p, |ci, gw_slab| {
                    for bi in 0..bs {
                        let x_plane = &x_data[(bi * c_in + ci) * in_plane..];
                        for co in 0..c_out {
                            let g_plane = &g[(bi * c_out + co) * out_plane..];
                            for i_idx in 0..in_plane {
                                let xv = x_plane[i_idx];
                                if xv == T::ZERO {
                                    continue;
                                }
                                let (irow, icol) = (i_idx / wd, i_idx % wd);
                                for ky in 0..p {
                                    let row = &g_plane[(irow * p + ky) * ow + icol * p..][..p];
                                    let dst = &mut gw_slab[(co * p + ky) * p..][..p];
                                    axpy(dst, xv, row);
                                }
                            }
                        }
                    }
                });
                store.accumulate(nw, gw);
            }
        });
        Ok(out.with_node(node))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_by_one_identity_kernel() {
        let mut tape = Tape::<f64>::new();
        let x = Tensor::from_vec(vec![1, 1, 3, 3], (0..9).map(|i| i as f64).collect()).unwrap();
        let w = Tensor::from_vec(vec![1, 1, 1, 1], vec![1.0]).unwrap();
        let b = Tensor::from_vec(vec![1], vec![0.0]).unwrap();
        let y = tape.conv2d(&x, &w, &b).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn averaging_kernel_keeps_constant_interior() {
        let mut tape = Tape::<f64>::new();
        let x = Tensor::from_vec(vec![1, 1, 5, 5], vec![2.0; 25]).unwrap();
        let w = Tensor::from_vec(vec![1, 1, 3, 3], vec![1.0 / 9.0; 9]).unwrap();
        let b = Tensor::from_vec(vec![1], vec![0.0]).unwrap();
        let y = tape.conv2d(&x, &w, &b).unwrap();
        // zero padding shrinks borders; interior must be preserved exactly
        for r in 1..4 {
            for c in 1..4 {
                assert!((y.data()[r * 5 + c] - 2.0).abs() < 1e-12);
            }
        }
        assert!(y.data()[0] < 2.0);
    }

    #[test]
    fn channel_mismatch_is_shape_error() {
        let mut tape = Tape::<f64>::new();
        let x = Tensor::from_vec(vec![1, 2, 4, 4], vec![0.0; 32]).unwrap();
        let w = Tensor::from_vec(vec![1, 3, 3, 3], vec![0.0; 27]).unwrap();
        let b = Tensor::from_vec(vec![1], vec![0.0]).unwrap();
        assert!(tape.conv2d(&x, &w, &b).is_err());
    }

    #[test]
    fn patch_then_transpose_restores_shape() {
        let mut tape = Tape::<f64>::new();
        let x = Tensor::from_vec(vec![1, 2, 6, 8], (0..96).map(|i| i as f64 * 0.01).collect()).unwrap();
        let w = Tensor::from_vec(vec![3, 2, 2, 2], (0..24).map(|i| i as f64 * 0.1).collect()).unwrap();
        let b = Tensor::from_vec(vec![3], vec![0.1, 0.2, 0.3]).unwrap();
        let y = tape.conv2d_patch(&x, &w, &b, 2).unwrap();
        assert_eq!(y.shape(), &[1, 3, 3, 4]);
        let wt = Tensor::from_vec(vec![3, 2, 2, 2], (0..24).map(|i| i as f64 * 0.05).collect()).unwrap();
        let bt = Tensor::from_vec(vec![2], vec![0.0, 0.0]).unwrap();
        let back = tape.conv_transpose2d_patch(&y, &wt, &bt, 2).unwrap();
        assert_eq!(back.shape(), x.shape());
    }

    #[test]
    fn patch_conv_with_p1_is_pointwise() {
        let mut tape = Tape::<f64>::new();
        let x = Tensor::from_vec(vec![1, 1, 2, 2], vec![1., 2., 3., 4.]).unwrap();
        let w = Tensor::from_vec(vec![1, 1, 1, 1], vec![2.0]).unwrap();
        let b = Tensor::from_vec(vec![1], vec![1.0]).unwrap();
        let y = tape.conv2d_patch(&x, &w, &b, 1).unwrap();
        assert_eq!(y.data(), &[3., 5., 7., 9.]);
    }
}
