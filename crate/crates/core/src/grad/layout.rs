//! Data-movement primitives: permutation, slicing, concatenation, cyclic
//! shifts, window partitioning, and reflection padding. All are bijective or
//! sparse linear maps, so their backward rules are index bookkeeping.

use super::{strides, Scalar, Tape, Tensor};
use crate::error::{Error, Result};
use std::sync::Arc;

fn permute_data<T: Scalar>(data: &[T], shape: &[usize], axes: &[usize]) -> (Vec<usize>, Vec<T>) {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let out_strides = strides(&out_shape);
    let mut out = vec![T::ZERO; data.len()];
    // walk output linearly, map each index back to the source
    for (o_idx, slot) in out.iter_mut().enumerate() {
        let mut rem = o_idx;
        let mut src = 0;
        for (d, &os) in out_strides.iter().enumerate() {
            let coord = rem / os;
            rem %= os;
            src += coord * in_strides[axes[d]];
        }
        *slot = data[src];
    }
    (out_shape, out)
}

fn inverse_axes(axes: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; axes.len()];
    for (i, &a) in axes.iter().enumerate() {
        inv[a] = i;
    }
    inv
}

impl<T: Scalar> Tape<T> {
    /// Reorder dimensions; `axes` is a permutation of `0..rank`.
    pub fn permute(&mut self, a: &Tensor<T>, axes: &[usize]) -> Result<Tensor<T>> {
        let rank = a.shape().len();
        let mut seen = vec![false; rank];
        if axes.len() != rank || axes.iter().any(|&x| x >= rank || std::mem::replace(&mut seen[x], true)) {
            return Err(Error::shape(
                "permute",
                format!("{axes:?} is not a permutation of 0..{rank}"),
            ));
        }
        let (out_shape, data) = permute_data(a.data(), a.shape(), axes);
        let out = Tensor::from_vec(out_shape, data)?;
        let Some(na) = a.node() else { return Ok(out) };
        let inv = inverse_axes(axes);
        let g_shape = out.shape().to_vec();
        let node = self.record(move |g, store| {
            let (_, back) = permute_data(g, &g_shape, &inv);
            store.accumulate(na, back);
        });
        Ok(out.with_node(node))
    }

    /// Slice `len` entries starting at `start` along `axis`.
    pub fn narrow(&mut self, a: &Tensor<T>, axis: usize, start: usize, len: usize) -> Result<Tensor<T>> {
        let shape = a.shape().to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(Error::shape(
                "narrow",
                format!("axis {axis} range {start}..{} out of {shape:?}", start + len),
            ));
        }
        let inner: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();
        let dim = shape[axis];
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let mut data = vec![T::ZERO; outer * len * inner];
        for o in 0..outer {
            let src = &a.data()[(o * dim + start) * inner..(o * dim + start + len) * inner];
            data[o * len * inner..(o + 1) * len * inner].copy_from_slice(src);
        }
        let out = Tensor::from_vec(out_shape, data)?;
        let Some(na) = a.node() else { return Ok(out) };
        let total = a.numel();
        let node = self.record(move |g, store| {
            let mut back = vec![T::ZERO; total];
            for o in 0..outer {
                back[(o * dim + start) * inner..(o * dim + start + len) * inner]
                    .copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
            }
            store.accumulate(na, back);
        });
        Ok(out.with_node(node))
    }

    /// Concatenate along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, parts: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("concat of zero tensors"))?;
        let rank = first.shape().len();
        if axis >= rank {
            return Err(Error::shape("concat", format!("axis {axis} out of rank {rank}")));
        }
        for p in parts {
            if p.shape().len() != rank
                || p.shape()[..axis] != first.shape()[..axis]
                || p.shape()[axis + 1..] != first.shape()[axis + 1..]
            {
                return Err(Error::shape(
                    "concat",
                    format!("{:?} vs {:?} along axis {axis}", p.shape(), first.shape()),
                ));
            }
        }
        let inner: usize = first.shape()[axis + 1..].iter().product();
        let outer: usize = first.shape()[..axis].iter().product();
        let dims: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        let total_dim: usize = dims.iter().sum();
        let mut out_shape = first.shape().to_vec();
        out_shape[axis] = total_dim;

        let mut data = vec![T::ZERO; outer * total_dim * inner];
        for o in 0..outer {
            let mut offset = 0;
            for (p, &d) in parts.iter().zip(&dims) {
                let src = &p.data()[o * d * inner..(o + 1) * d * inner];
                let at = (o * total_dim + offset) * inner;
                data[at..at + d * inner].copy_from_slice(src);
                offset += d;
            }
        }
        let out = Tensor::from_vec(out_shape, data)?;
        let nodes: Vec<Option<super::NodeId>> = parts.iter().map(|p| p.node()).collect();
        if nodes.iter().all(|n| n.is_none()) {
            return Ok(out);
        }
        let numels: Vec<usize> = parts.iter().map(|p| p.numel()).collect();
        let node = self.record(move |g, store| {
            let mut offset = 0;
            for ((n, &d), &numel) in nodes.iter().zip(&dims).zip(&numels) {
                if let Some(n) = *n {
                    let mut back = vec![T::ZERO; numel];
                    for o in 0..outer {
                        let at = (o * total_dim + offset) * inner;
                        back[o * d * inner..(o + 1) * d * inner]
                            .copy_from_slice(&g[at..at + d * inner]);
                    }
                    store.accumulate(n, back);
                }
                offset += d;
            }
        });
        Ok(out.with_node(node))
    }

    /// Cyclic shift of a `[B, H, W, C]` tensor along H and W:
    /// `out[h][w] = in[(h - sh) mod H][(w - sw) mod W]`.
    pub fn roll2d(&mut self, a: &Tensor<T>, shift_h: isize, shift_w: isize) -> Result<Tensor<T>> {
        let &[b, h, w, c] = a.shape() else {
            return Err(Error::shape("roll2d", format!("needs [B,H,W,C], got {:?}", a.shape())));
        };
        let sh = shift_h.rem_euclid(h as isize) as usize;
        let sw = shift_w.rem_euclid(w as isize) as usize;
        if sh == 0 && sw == 0 {
            return Ok(a.clone());
        }
        let data = roll_data(a.data(), b, h, w, c, sh, sw);
        let out = Tensor::from_vec(a.shape().to_vec(), data)?;
        let Some(na) = a.node() else { return Ok(out) };
        let node = self.record(move |g, store| {
            // inverse roll
            let back = roll_data(g, b, h, w, c, h - sh, w - sw);
            store.accumulate(na, back);
        });
        Ok(out.with_node(node))
    }

    /// Rearrange `[B, H, W, C]` into `[B * H/w * W/w, w*w, C]` windows.
    pub fn window_partition(&mut self, a: &Tensor<T>, win: usize) -> Result<Tensor<T>> {
        let &[b, h, w, c] = a.shape() else {
            return Err(Error::shape(
                "window_partition",
                format!("needs [B,H,W,C], got {:?}", a.shape()),
            ));
        };
        if win == 0 || h % win != 0 || w % win != 0 {
            return Err(Error::shape(
                "window_partition",
                format!("H={h}, W={w} not divisible by window {win}; pad the input first"),
            ));
        }
        let data = partition_data(a.data(), b, h, w, c, win, false);
        let out = Tensor::from_vec(vec![b * (h / win) * (w / win), win * win, c], data)?;
        let Some(na) = a.node() else { return Ok(out) };
        let node = self.record(move |g, store| {
            store.accumulate(na, partition_data(g, b, h, w, c, win, true));
        });
        Ok(out.with_node(node))
    }

    /// Inverse of [`Self::window_partition`]: windows back to `[B, H, W, C]`.
    pub fn window_reverse(&mut self, a: &Tensor<T>, win: usize, h: usize, w: usize) -> Result<Tensor<T>> {
        let &[nwin, tokens, c] = a.shape() else {
            return Err(Error::shape(
                "window_reverse",
                format!("needs [windows, tokens, C], got {:?}", a.shape()),
            ));
        };
        if tokens != win * win || h % win != 0 || w % win != 0 {
            return Err(Error::shape(
                "window_reverse",
                format!("{tokens} tokens / {h}x{w} incompatible with window {win}"),
            ));
        }
        let per_image = (h / win) * (w / win);
        if nwin % per_image != 0 {
            return Err(Error::shape(
                "window_reverse",
                format!("{nwin} windows not a multiple of {per_image}"),
            ));
        }
        let b = nwin / per_image;
        let data = partition_data(a.data(), b, h, w, c, win, true);
        let out = Tensor::from_vec(vec![b, h, w, c], data)?;
        let Some(na) = a.node() else { return Ok(out) };
        let node = self.record(move |g, store| {
            store.accumulate(na, partition_data(g, b, h, w, c, win, false));
        });
        Ok(out.with_node(node))
    }

    /// Reflection-pad the bottom/right of a `[B, H, W, C]` tensor so H and W
    /// reach the given targets. The mirror excludes the edge row/column
    /// itself, so pads up to `dim - 1` are representable.
    pub fn pad_reflect(&mut self, a: &Tensor<T>, target_h: usize, target_w: usize) -> Result<Tensor<T>> {
        let &[b, h, w, c] = a.shape() else {
            return Err(Error::shape("pad_reflect", format!("needs [B,H,W,C], got {:?}", a.shape())));
        };
        if target_h == h && target_w == w {
            return Ok(a.clone());
        }
        if target_h < h || target_w < w || target_h >= 2 * h || target_w >= 2 * w {
            return Err(Error::shape(
                "pad_reflect",
                format!("cannot reflect-pad {h}x{w} to {target_h}x{target_w}"),
            ));
        }
        let reflect = |i: usize, n: usize| if i < n { i } else { 2 * n - 2 - i };
        let mut data = vec![T::ZERO; b * target_h * target_w * c];
        for bi in 0..b {
            for oh in 0..target_h {
                let ih = reflect(oh, h);
                for ow in 0..target_w {
                    let iw = reflect(ow, w);
                    let src = ((bi * h + ih) * w + iw) * c;
                    let dst = ((bi * target_h + oh) * target_w + ow) * c;
                    data[dst..dst + c].copy_from_slice(&a.data()[src..src + c]);
                }
            }
        }
        let out = Tensor::from_vec(vec![b, target_h, target_w, c], data)?;
        let Some(na) = a.node() else { return Ok(out) };
        let node = self.record(move |g, store| {
            let mut back = vec![T::ZERO; b * h * w * c];
            for bi in 0..b {
                for oh in 0..target_h {
                    let ih = reflect(oh, h);
                    for ow in 0..target_w {
                        let iw = reflect(ow, w);
                        let src = ((bi * target_h + oh) * target_w + ow) * c;
                        let dst = ((bi * h + ih) * w + iw) * c;
                        for k in 0..c {
                            back[dst + k] += g[src + k];
                        }
                    }
                }
            }
            store.accumulate(na, back);
        });
        Ok(out.with_node(node))
    }

    /// Keep the top-left `h x w` region of a `[B, H, W, C]` tensor.
    pub fn crop(&mut self, a: &Tensor<T>, h: usize, w: usize) -> Result<Tensor<T>> {
        let &[b, fh, fw, c] = a.shape() else {
            return Err(Error::shape("crop", format!("needs [B,H,W,C], got {:?}", a.shape())));
        };
        if h > fh || w > fw {
            return Err(Error::shape("crop", format!("{h}x{w} exceeds {fh}x{fw}")));
        }
        if h == fh && w == fw {
            return Ok(a.clone());
        }
        let mut data = vec![T::ZERO; b * h * w * c];
        for bi in 0..b {
            for r in 0..h {
                let src = ((bi * fh + r) * fw) * c;
                let dst = ((bi * h + r) * w) * c;
                data[dst..dst + w * c].copy_from_slice(&a.data()[src..src + w * c]);
            }
        }
        let out = Tensor::from_vec(vec![b, h, w, c], data)?;
        let Some(na) = a.node() else { return Ok(out) };
        let node = self.record(move |g, store| {
            let mut back = vec![T::ZERO; b * fh * fw * c];
            for bi in 0..b {
                for r in 0..h {
                    let dst = ((bi * fh + r) * fw) * c;
                    let src = ((bi * h + r) * w) * c;
                    back[dst..dst + w * c].copy_from_slice(&g[src..src + w * c]);
                }
            }
            store.accumulate(na, back);
        });
        Ok(out.with_node(node))
    }

    /// Gather rows of a `[R, C]` table by a fixed index list.
    pub fn index_select_rows(&mut self, table: &Tensor<T>, idx: &Arc<Vec<usize>>) -> Result<Tensor<T>> {
        let &[rows, cols] = table.shape() else {
            return Err(Error::shape(
                "index_select_rows",
                format!("needs [R,C] table, got {:?}", table.shape()),
            ));
        };
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(Error::invalid(format!("row index {bad} out of {rows}")));
        }
        let mut data = vec![T::ZERO; idx.len() * cols];
        for (o, &r) in idx.iter().enumerate() {
            data[o * cols..(o + 1) * cols].copy_from_slice(&table.data()[r * cols..(r + 1) * cols]);
        }
        let out = Tensor::from_vec(vec![idx.len(), cols], data)?;
        let Some(nt) = table.node() else { return Ok(out) };
        let idx = Arc::clone(idx);
        let node = self.record(move |g, store| {
            let mut back = vec![T::ZERO; rows * cols];
            for (o, &r) in idx.iter().enumerate() {
                for k in 0..cols {
                    back[r * cols + k] += g[o * cols + k];
                }
            }
            store.accumulate(nt, back);
        });
        Ok(out.with_node(node))
    }
}

fn roll_data<T: Scalar>(data: &[T], b: usize, h: usize, w: usize, c: usize, sh: usize, sw: usize) -> Vec<T> {
    let mut out = vec![T::ZERO; data.len()];
    for bi in 0..b {
        for oh in 0..h {
            let ih = (oh + h - sh) % h;
            for ow in 0..w {
                let iw = (ow + w - sw) % w;
                let src = ((bi * h + ih) * w + iw) * c;
                let dst = ((bi * h + oh) * w + ow) * c;
                out[dst..dst + c].copy_from_slice(&data[src..src + c]);
            }
        }
    }
    out
}

/// Forward (`reverse = false`) maps image layout to window layout; with
/// `reverse = true` it scatters window layout back to image layout. The two
/// directions are inverse bijections, so each also serves as the other's
/// backward rule.
fn partition_data<T: Scalar>(
    data: &[T],
    b: usize,
    h: usize,
    w: usize,
    c: usize,
    win: usize,
    reverse: bool,
) -> Vec<T> {
    let (nh, nw) = (h / win, w / win);
    let mut out = vec![T::ZERO; data.len()];
    for bi in 0..b {
        for wh in 0..nh {
            for ww in 0..nw {
                let win_idx = (bi * nh + wh) * nw + ww;
                for ih in 0..win {
                    for iw in 0..win {
                        let img = ((bi * h + wh * win + ih) * w + ww * win + iw) * c;
                        let tok = (win_idx * win * win + ih * win + iw) * c;
                        let (src, dst) = if reverse { (tok, img) } else { (img, tok) };
                        out[dst..dst + c].copy_from_slice(&data[src..src + c]);
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iota(n: usize) -> Vec<f64> {
        (0..n).map(|i| i as f64).collect()
    }

    #[test]
    fn partition_roundtrip_is_identity() {
        let mut tape = Tape::<f64>::new();
        let x = Tensor::from_vec(vec![1, 8, 8, 3], iota(192)).unwrap();
        let parts = tape.window_partition(&x, 4).unwrap();
        assert_eq!(parts.shape(), &[4, 16, 3]);
        let back = tape.window_reverse(&parts, 4, 8, 8).unwrap();
        assert_eq!(back.data(), x.data());
    }

    #[test]
    fn whole_image_window_is_flatten() {
        let mut tape = Tape::<f64>::new();
        let x = Tensor::from_vec(vec![1, 4, 4, 2], iota(32)).unwrap();
        let parts = tape.window_partition(&x, 4).unwrap();
        assert_eq!(parts.shape(), &[1, 16, 2]);
        assert_eq!(parts.data(), x.data());
    }

    #[test]
    fn partition_requires_divisible_dims() {
        let mut tape = Tape::<f64>::new();
        let x = Tensor::from_vec(vec![1, 6, 8, 1], iota(48)).unwrap();
        let err = tape.window_partition(&x, 4).unwrap_err().to_string();
        assert!(err.contains("pad"), "{err}");
    }

    #[test]
    fn roll_identities() {
        let mut tape = Tape::<f64>::new();
        let x = Tensor::from_vec(vec![1, 3, 4, 1], iota(12)).unwrap();
        let same = tape.roll2d(&x, 0, 0).unwrap();
        assert_eq!(same.data(), x.data());
        let full = tape.roll2d(&x, 3, 4).unwrap();
        assert_eq!(full.data(), x.data());
        // rolling twice by (1, 2) equals rolling once by (2, 4 mod 4)
        let twice = {
            let a = tape.roll2d(&x, 1, 2).unwrap();
            tape.roll2d(&a, 1, 2).unwrap()
        };
        let once = tape.roll2d(&x, 2, 4).unwrap();
        assert_eq!(twice.data(), once.data());
    }

    #[test]
    fn roll_moves_content() {
        let mut tape = Tape::<f64>::new();
        let x = Tensor::from_vec(vec![1, 2, 2, 1], vec![1., 2., 3., 4.]).unwrap();
        let r = tape.roll2d(&x, 1, 0).unwrap();
        assert_eq!(r.data(), &[3., 4., 1., 2.]);
    }

    #[test]
    fn permute_transposes() {
        let mut tape = Tape::<f64>::new();
        let x = Tensor::from_vec(vec![2, 3], iota(6)).unwrap();
        let t = tape.permute(&x, &[1, 0]).unwrap();
        assert_eq!(t.shape(), &[3, 2]);
        assert_eq!(t.data(), &[0., 3., 1., 4., 2., 5.]);
        assert!(tape.permute(&x, &[0, 0]).is_err());
    }

    #[test]
    fn narrow_and_concat_invert() {
        let mut tape = Tape::<f64>::new();
        let x = Tensor::from_vec(vec![2, 4], iota(8)).unwrap();
        let left = tape.narrow(&x, 1, 0, 2).unwrap();
        let right = tape.narrow(&x, 1, 2, 2).unwrap();
        let glued = tape.concat(&[&left, &right], 1).unwrap();
        assert_eq!(glued.data(), x.data());
    }

    #[test]
    fn pad_reflect_mirrors_without_edge() {
        let mut tape = Tape::<f64>::new();
        let x = Tensor::from_vec(vec![1, 2, 3, 1], iota(6)).unwrap();
        let p = tape.pad_reflect(&x, 3, 4).unwrap();
        // rows: [0 1 2], [3 4 5], reflected row = row 0; cols reflect col 1
        assert_eq!(
            p.data(),
            &[0., 1., 2., 1., 3., 4., 5., 4., 0., 1., 2., 1.]
        );
        let c = tape.crop(&p, 2, 3).unwrap();
        assert_eq!(c.data(), x.data());
    }
}
