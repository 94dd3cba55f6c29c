//! Elementwise and normalization primitives.

use super::{Scalar, Tape, Tensor};
use crate::error::{Error, Result};
use std::sync::Arc;

fn suffix_of(small: &[usize], big: &[usize]) -> bool {
    small.len() <= big.len() && big[big.len() - small.len()..] == *small
}

impl<T: Scalar> Tape<T> {
    /// `a + b`, where `b` either matches `a`'s shape or is broadcast over
    /// `a`'s leading dimensions (`b.shape` a suffix of `a.shape`).
    pub fn add(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        if !suffix_of(b.shape(), a.shape()) {
            return Err(Error::shape(
                "add",
                format!("{:?} vs {:?}", a.shape(), b.shape()),
            ));
        }
        let bn = b.numel();
        let mut data = a.data().to_vec();
        for (chunk, _) in data.chunks_mut(bn).zip(0..) {
            for (x, &y) in chunk.iter_mut().zip(b.data()) {
                *x += y;
            }
        }
        let out = Tensor::from_vec(a.shape().to_vec(), data)?;
        let (na, nb) = (a.node(), b.node());
        if na.is_none() && nb.is_none() {
            return Ok(out);
        }
        let node = self.record(move |g, store| {
            if let Some(na) = na {
                store.accumulate_slice(na, g);
            }
            if let Some(nb) = nb {
                if g.len() == bn {
                    store.accumulate_slice(nb, g);
                } else {
                    let mut gb = vec![T::ZERO; bn];
                    for chunk in g.chunks(bn) {
                        for (s, &v) in gb.iter_mut().zip(chunk) {
                            *s += v;
                        }
                    }
                    store.accumulate(nb, gb);
                }
            }
        });
        Ok(out.with_node(node))
    }

    /// Elementwise `a - b` (equal shapes).
    pub fn sub(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        if a.shape() != b.shape() {
            return Err(Error::shape(
                "sub",
                format!("{:?} vs {:?}", a.shape(), b.shape()),
            ));
        }
        let data = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| x - y)
            .collect();
        let out = Tensor::from_vec(a.shape().to_vec(), data)?;
        let (na, nb) = (a.node(), b.node());
        if na.is_none() && nb.is_none() {
            return Ok(out);
        }
        let node = self.record(move |g, store| {
            if let Some(na) = na {
                store.accumulate_slice(na, g);
            }
            if let Some(nb) = nb {
                store.accumulate(nb, g.iter().map(|&v| -v).collect());
            }
        });
        Ok(out.with_node(node))
    }

    /// Elementwise (Hadamard) product of equal shapes.
    pub fn mul(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        if a.shape() != b.shape() {
            return Err(Error::shape(
                "mul",
                format!("{:?} vs {:?}", a.shape(), b.shape()),
            ));
        }
        let data = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| x * y)
            .collect();
        let out = Tensor::from_vec(a.shape().to_vec(), data)?;
        let (na, nb) = (a.node(), b.node());
        if na.is_none() && nb.is_none() {
            return Ok(out);
        }
        let a_data = a.data_arc();
        let b_data = b.data_arc();
        let node = self.record(move |g, store| {
            if let Some(na) = na {
                store.accumulate(na, g.iter().zip(b_data.iter()).map(|(&v, &y)| v * y).collect());
            }
            if let Some(nb) = nb {
                store.accumulate(nb, g.iter().zip(a_data.iter()).map(|(&v, &x)| v * x).collect());
            }
        });
        Ok(out.with_node(node))
    }

    /// Multiply by a compile-time constant.
    pub fn scale(&mut self, a: &Tensor<T>, factor: f64) -> Result<Tensor<T>> {
        let f = T::from_f64(factor);
        let data = a.data().iter().map(|&x| x * f).collect();
        let out = Tensor::from_vec(a.shape().to_vec(), data)?;
        let Some(na) = a.node() else { return Ok(out) };
        let node = self.record(move |g, store| {
            store.accumulate(na, g.iter().map(|&v| v * f).collect());
        });
        Ok(out.with_node(node))
    }

    /// GELU with the tanh approximation.
    pub fn gelu(&mut self, a: &Tensor<T>) -> Result<Tensor<T>> {
        let k = T::from_f64((2.0 / std::f64::consts::PI).sqrt());
        let c = T::from_f64(0.044715);
        let half = T::from_f64(0.5);
        let data: Vec<T> = a
            .data()
            .iter()
            .map(|&x| {
                let u = k * (x + c * x * x * x);
                half * x * (T::ONE + u.tanh())
            })
            .collect();
        let out = Tensor::from_vec(a.shape().to_vec(), data)?;
        let Some(na) = a.node() else { return Ok(out) };
        let a_data = a.data_arc();
        let node = self.record(move |g, store| {
            let three = T::from_f64(3.0);
            let grad = g
                .iter()
                .zip(a_data.iter())
                .map(|(&v, &x)| {
                    let u = k * (x + c * x * x * x);
                    let t = u.tanh();
                    let sech2 = T::ONE - t * t;
                    let du = k * (T::ONE + three * c * x * x);
                    v * (half * (T::ONE + t) + half * x * sech2 * du)
                })
                .collect();
            store.accumulate(na, grad);
        });
        Ok(out.with_node(node))
    }

    /// Numerically stable softmax over the last dimension.
    pub fn softmax(&mut self, a: &Tensor<T>) -> Result<Tensor<T>> {
        let d = *a
            .shape()
            .last()
            .ok_or_else(|| Error::shape("softmax", "rank-0 input"))?;
        let mut data = vec![T::ZERO; a.numel()];
        for (row_out, row_in) in data.chunks_mut(d).zip(a.data().chunks(d)) {
            let mut max = row_in[0];
            for &v in row_in {
                max = max.maximum(v);
            }
            let mut sum = T::ZERO;
            for (o, &v) in row_out.iter_mut().zip(row_in) {
                *o = (v - max).exp();
                sum += *o;
            }
            for o in row_out.iter_mut() {
                *o = *o / sum;
            }
        }
        let out = Tensor::from_vec(a.shape().to_vec(), data)?;
        let Some(na) = a.node() else { return Ok(out) };
        let y = out.data_arc();
        let node = self.record(move |g, store| {
            let mut grad = vec![T::ZERO; g.len()];
            for ((gx, gy), yrow) in grad.chunks_mut(d).zip(g.chunks(d)).zip(y.chunks(d)) {
                let mut dot = T::ZERO;
                for (&gv, &yv) in gy.iter().zip(yrow) {
                    dot += gv * yv;
                }
                for ((o, &gv), &yv) in gx.iter_mut().zip(gy).zip(yrow) {
                    *o = yv * (gv - dot);
                }
            }
            store.accumulate(na, grad);
        });
        Ok(out.with_node(node))
    }

    /// Layer normalization over the last dimension followed by the affine
    /// transform `gamma * x_hat + beta`.
    pub fn layer_norm(
        &mut self,
        x: &Tensor<T>,
        gamma: &Tensor<T>,
        beta: &Tensor<T>,
        eps: f64,
    ) -> Result<Tensor<T>> {
        let d = *x
            .shape()
            .last()
            .ok_or_else(|| Error::shape("layer_norm", "rank-0 input"))?;
        if gamma.shape() != [d] || beta.shape() != [d] {
            return Err(Error::shape(
                "layer_norm",
                format!(
                    "gamma {:?} / beta {:?} must be [{d}]",
                    gamma.shape(),
                    beta.shape()
                ),
            ));
        }
        let rows = x.numel() / d;
        let epsilon = T::from_f64(eps);
        let inv_d = T::from_f64(1.0 / d as f64);
        let mut data = vec![T::ZERO; x.numel()];
        let mut xhat = vec![T::ZERO; x.numel()];
        let mut inv_std = vec![T::ZERO; rows];
        for r in 0..rows {
            let row = &x.data()[r * d..(r + 1) * d];
            let mut mean = T::ZERO;
            for &v in row {
                mean += v;
            }
            mean *= inv_d;
            let mut var = T::ZERO;
            for &v in row {
                let c = v - mean;
                var += c * c;
            }
            var *= inv_d;
            let istd = T::ONE / (var + epsilon).sqrt();
            inv_std[r] = istd;
            for i in 0..d {
                let h = (row[i] - mean) * istd;
                xhat[r * d + i] = h;
                data[r * d + i] = gamma.data()[i] * h + beta.data()[i];
            }
        }
        let out = Tensor::from_vec(x.shape().to_vec(), data)?;
        let (nx, ng, nb) = (x.node(), gamma.node(), beta.node());
        if nx.is_none() && ng.is_none() && nb.is_none() {
            return Ok(out);
        }
        let xhat = Arc::new(xhat);
        let inv_std = Arc::new(inv_std);
        let gamma_data = gamma.data_arc();
        let node = self.record(move |g, store| {
            if let Some(nb) = nb {
                let mut gb = vec![T::ZERO; d];
                for row in g.chunks(d) {
                    for (s, &v) in gb.iter_mut().zip(row) {
                        *s += v;
                    }
                }
                store.accumulate(nb, gb);
            }
            if let Some(ng) = ng {
                let mut gg = vec![T::ZERO; d];
                for (row, hrow) in g.chunks(d).zip(xhat.chunks(d)) {
                    for ((s, &v), &h) in gg.iter_mut().zip(row).zip(hrow) {
                        *s += v * h;
                    }
                }
                store.accumulate(ng, gg);
            }
            if let Some(nx) = nx {
                let mut gx = vec![T::ZERO; g.len()];
                for r in 0..rows {
                    let gy = &g[r * d..(r + 1) * d];
                    let h = &xhat[r * d..(r + 1) * d];
                    let mut mean_gh = T::ZERO;
                    let mut mean_ghh = T::ZERO;
                    for i in 0..d {
                        let ghat = gy[i] * gamma_data[i];
                        mean_gh += ghat;
                        mean_ghh += ghat * h[i];
                    }
                    mean_gh *= inv_d;
                    mean_ghh *= inv_d;
                    let istd = inv_std[r];
                    for i in 0..d {
                        let ghat = gy[i] * gamma_data[i];
                        gx[r * d + i] = istd * (ghat - mean_gh - h[i] * mean_ghh);
                    }
                }
                store.accumulate(nx, gx);
            }
        });
        Ok(out.with_node(node))
    }

    /// Mean over all elements, returned as a `[1]` tensor. Accumulates in
    /// f64 so large f32 reductions keep full single precision.
    pub fn mean_all(&mut self, a: &Tensor<T>) -> Result<Tensor<T>> {
        let n = a.numel();
        let mut sum = 0.0f64;
        for &v in a.data() {
            sum += v.to_f64();
        }
        let inv_n = T::from_f64(1.0 / n as f64);
        let out = Tensor::scalar(T::from_f64(sum / n as f64));
        let Some(na) = a.node() else { return Ok(out) };
        let node = self.record(move |g, store| {
            let v = g[0] * inv_n;
            store.accumulate(na, vec![v; n]);
        });
        Ok(out.with_node(node))
    }

    /// Mean squared error between equal-shaped tensors, as a `[1]` tensor.
    pub fn mse(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        let diff = self.sub(a, b)?;
        let sq = self.mul(&diff, &diff)?;
        self.mean_all(&sq)
    }
}
