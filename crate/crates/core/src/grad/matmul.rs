//! Batched matrix multiplication.

use super::{Scalar, Tape, Tensor};
use crate::error::{Error, Result};
use crate::exec;

/// `out[i, :] += alpha * row[:]` inner kernel, written so the column loop
/// vectorizes.
#[inline]
fn axpy<T: Scalar>(out: &mut [T], alpha: T, row: &[T]) {
    for (o, &r) in out.iter_mut().zip(row) {
        *o += alpha * r;
    }
}

/// C[m,n] = A[m,k] * B[k,n], C assumed zeroed.
pub(crate) fn gemm<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, c: &mut [T]) {
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        for kk in 0..k {
            let alpha = a[i * k + kk];
            if alpha != T::ZERO {
                axpy(c_row, alpha, &b[kk * n..(kk + 1) * n]);
            }
        }
    }
}

/// C[m,k] = A[m,n] * B[k,n]^T (dot products of rows), C assumed zeroed.
fn gemm_nt<T: Scalar>(a: &[T], b: &[T], m: usize, n: usize, k: usize, c: &mut [T]) {
    for i in 0..m {
        let a_row = &a[i * n..(i + 1) * n];
        for kk in 0..k {
            let b_row = &b[kk * n..(kk + 1) * n];
            let mut acc = T::ZERO;
            for (&x, &y) in a_row.iter().zip(b_row) {
                acc += x * y;
            }
            c[i * k + kk] = acc;
        }
    }
}

/// C[k,n] += A[m,k]^T * B[m,n].
fn gemm_tn_accum<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, c: &mut [T]) {
    for i in 0..m {
        let b_row = &b[i * n..(i + 1) * n];
        for kk in 0..k {
            let alpha = a[i * k + kk];
            if alpha != T::ZERO {
                axpy(&mut c[kk * n..(kk + 1) * n], alpha, b_row);
            }
        }
    }
}

impl<T: Scalar> Tape<T> {
    /// Batched matrix product `a @ b` for `a: [..., M, K]` against either
    /// `b: [K, N]` (shared across the batch) or `b: [..., K, N]` with
    /// identical leading dimensions.
    pub fn matmul(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        let ar = a.shape().len();
        let br = b.shape().len();
        if ar < 2 || br < 2 {
            return Err(Error::shape(
                "matmul",
                format!("needs rank >= 2, got {:?} x {:?}", a.shape(), b.shape()),
            ));
        }
        let (m, k) = (a.shape()[ar - 2], a.shape()[ar - 1]);
        let (kb, n) = (b.shape()[br - 2], b.shape()[br - 1]);
        let shared_b = br == 2;
        let batches_match = shared_b || a.shape()[..ar - 2] == b.shape()[..br - 2];
        if k != kb || !batches_match {
            return Err(Error::shape(
                "matmul",
                format!("cannot multiply {:?} by {:?}", a.shape(), b.shape()),
            ));
        }
        let batch: usize = a.shape()[..ar - 2].iter().product();
        let mut out_shape = a.shape()[..ar - 2].to_vec();
        out_shape.extend([m, n]);

        let a_data = a.data_arc();
        let b_data = b.data_arc();
        let mut data = vec![T::ZERO; batch * m * n];
        if batch == 1 {
            // parallelize over output rows
            exec::for_each_chunk(&mut data, n, |i, row| {
                for kk in 0..k {
                    let alpha = a_data[i * k + kk];
                    if alpha != T::ZERO {
                        axpy(row, alpha, &b_data[kk * n..(kk + 1) * n]);
                    }
                }
            });
        } else {
            exec::for_each_chunk(&mut data, m * n, |bi, c| {
                let a_slab = &a_data[bi * m * k..(bi + 1) * m * k];
                let b_slab = if shared_b {
                    &b_data[..]
                } else {
                    &b_data[bi * k * n..(bi + 1) * k * n]
                };
                gemm(a_slab, b_slab, m, k, n, c);
            });
        }
        let out = Tensor::from_vec(out_shape, data)?;
        let (na, nb) = (a.node(), b.node());
        if na.is_none() && nb.is_none() {
            return Ok(out);
        }
        let node = self.record(move |g, store| {
            if let Some(na) = na {
                // dA = dC * B^T per batch
                let mut ga = vec![T::ZERO; batch * m * k];
                exec::for_each_chunk(&mut ga, m * k, |bi, slab| {
                    let g_slab = &g[bi * m * n..(bi + 1) * m * n];
                    let b_slab = if shared_b {
                        &b_data[..]
                    } else {
                        &b_data[bi * k * n..(bi + 1) * k * n]
                    };
                    gemm_nt(g_slab, b_slab, m, n, k, slab);
                });
                store.accumulate(na, ga);
            }
            if let Some(nb) = nb {
                // dB = sum over batches of A^T * dC
                if shared_b {
                    let mut gb = vec![T::ZERO; k * n];
                    for bi in 0..batch {
                        gemm_tn_accum(
                            &a_data[bi * m * k..(bi + 1) * m * k],
                            &g[bi * m * n..(bi + 1) * m * n],
                            m,
                            k,
                            n,
                            &mut gb,
                        );
                    }
                    store.accumulate(nb, gb);
                } else {
                    let mut gb = vec![T::ZERO; batch * k * n];
                    exec::for_each_chunk(&mut gb, k * n, |bi, slab| {
                        gemm_tn_accum(
                            &a_data[bi * m * k..(bi + 1) * m * k],
                            &g[bi * m * n..(bi + 1) * m * n],
                            m,
                            k,
                            n,
                            slab,
                        );
                    });
                    store.accumulate(nb, gb);
                }
            }
        });
        Ok(out.with_node(node))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_is_neutral() {
        let mut tape = Tape::<f64>::new();
        let a = Tensor::from_vec(vec![2, 2], vec![1., 2., 3., 4.]).unwrap();
        let eye = Tensor::from_vec(vec![2, 2], vec![1., 0., 0., 1.]).unwrap();
        let c = tape.matmul(&a, &eye).unwrap();
        assert_eq!(c.data(), a.data());
    }

    #[test]
    fn hand_product() {
        let mut tape = Tape::<f64>::new();
        let a = Tensor::from_vec(vec![2, 2], vec![1., 2., 3., 4.]).unwrap();
        let b = Tensor::from_vec(vec![2, 1], vec![1., 1.]).unwrap();
        let c = tape.matmul(&a, &b).unwrap();
        assert_eq!(c.shape(), &[2, 1]);
        assert_eq!(c.data(), &[3., 7.]);
    }

    #[test]
    fn dim_mismatch_names_both_shapes() {
        let mut tape = Tape::<f64>::new();
        let a = Tensor::from_vec(vec![2, 3], vec![0.; 6]).unwrap();
        let b = Tensor::from_vec(vec![2, 2], vec![0.; 4]).unwrap();
        let err = tape.matmul(&a, &b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("[2, 2]"), "{err}");
    }

    #[test]
    fn batched_matches_loop() {
        let mut tape = Tape::<f64>::new();
        let a = Tensor::from_vec(vec![2, 2, 3], (0..12).map(|i| i as f64).collect()).unwrap();
        let b = Tensor::from_vec(vec![2, 3, 2], (0..12).map(|i| (i as f64) * 0.5).collect())
            .unwrap();
        let c = tape.matmul(&a, &b).unwrap();
        assert_eq!(c.shape(), &[2, 2, 2]);
        for bi in 0..2 {
            for i in 0..2 {
                for j in 0..2 {
                    let mut want = 0.0;
                    for kk in 0..3 {
                        want += a.data()[bi * 6 + i * 3 + kk] * b.data()[bi * 6 + kk * 2 + j];
                    }
                    assert!((c.data()[bi * 4 + i * 2 + j] - want).abs() < 1e-12);
                }
            }
        }
    }
}
