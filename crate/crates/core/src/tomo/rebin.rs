//! Fan-to-parallel rebinning and its exact transpose.
//!
//! A parallel sample (theta, s) pulls from fan coordinates beta = theta -
//! gamma, gamma = asin(s / source_to_iso) by bilinear interpolation. The view
//! axis is periodic over the full circle and wraps; fan angles outside the
//! detector arc contribute zero.

use super::{CtImage, ScanGeometry, Sinogram, SinogramKind, TWO_PI};
use crate::error::{Error, Result};
use crate::exec;

/// Bilinear stencil of one parallel sample in fan coordinates:
/// up to four (flat fan index, weight) pairs.
fn stencil(geom: &ScanGeometry, i: usize, j: usize) -> [(usize, f64); 4] {
    let nv = geom.num_views as f64;
    let nd = geom.num_detectors;
    let theta = geom.parallel_angle(i);
    let gamma = (geom.offset(j) / geom.source_to_iso).asin();
    let beta = (theta - gamma).rem_euclid(TWO_PI);

    let b_f = beta / (TWO_PI / nv);
    let b0 = b_f.floor();
    let wb = b_f - b0;
    // beta < 2*pi guarantees b0 < num_views; the +1 neighbor wraps.
    let b0i = (b0 as usize) % geom.num_views;
    let b1i = (b0i + 1) % geom.num_views;

    let g_f = geom.gamma_to_index(gamma);
    let g0 = g_f.floor();
    let wg = g_f - g0;

    let mut out = [(0usize, 0.0f64); 4];
    let mut k = 0;
    for (bi, bw) in [(b0i, 1.0 - wb), (b1i, wb)] {
        for (gi, gw) in [(g0, 1.0 - wg), (g0 + 1.0, wg)] {
            if (0.0..(nd as f64)).contains(&gi) {
                out[k] = (bi * nd + gi as usize, bw * gw);
                k += 1;
            }
        }
    }
    out
}

/// Resample a fan sinogram onto the parallel (theta, s) grid.
pub fn rebin_fan_to_parallel(sino: &Sinogram, geom: &ScanGeometry) -> Result<Sinogram> {
    sino.expect_kind(SinogramKind::Fan, "rebin_fan_to_parallel")?;
    if sino.rows != geom.num_views || sino.cols != geom.num_detectors {
        return Err(Error::shape(
            "rebin_fan_to_parallel",
            format!(
                "sinogram {}x{} does not match geometry {}x{}",
                sino.rows, sino.cols, geom.num_views, geom.num_detectors
            ),
        ));
    }
    let nd = geom.num_detectors;
    let mut out = vec![0.0f32; geom.num_views * nd];
    exec::for_each_chunk(&mut out, nd, |i, row| {
        for (j, slot) in row.iter_mut().enumerate() {
            let mut acc = 0.0f64;
            for (idx, w) in stencil(geom, i, j) {
                acc += w * sino.data[idx] as f64;
            }
            *slot = acc as f32;
        }
    });
    Ok(Sinogram::unchecked(
        out,
        geom.clone(),
        SinogramKind::Parallel,
    ))
}

/// Exact transpose of [`rebin_fan_to_parallel`]: scatter a parallel-domain
/// cotangent back onto the fan grid with the same bilinear weights.
pub fn rebin_adjoint(par: &Sinogram, geom: &ScanGeometry) -> Result<Sinogram> {
    par.expect_kind(SinogramKind::Parallel, "rebin_adjoint")?;
    if par.rows != geom.num_views || par.cols != geom.num_detectors {
        return Err(Error::shape(
            "rebin_adjoint",
            format!(
                "sinogram {}x{} does not match geometry {}x{}",
                par.rows, par.cols, geom.num_views, geom.num_detectors
            ),
        ));
    }
    let nd = geom.num_detectors;
    let mut acc = vec![0.0f64; geom.num_views * nd];
    // Scatter with wrapping view indices: rows interleave, so this stays
    // sequential (it is a negligible fraction of the adjoint's cost).
    for i in 0..geom.num_views {
        for j in 0..nd {
            let g = par.data[i * nd + j] as f64;
            if g == 0.0 {
                continue;
            }
            for (idx, w) in stencil(geom, i, j) {
                acc[idx] += w * g;
            }
        }
    }
    let out = acc.iter().map(|&v| v as f32).collect();
    Ok(Sinogram::unchecked(out, geom.clone(), SinogramKind::Fan))
}

/// Convenience used by tests: rebin the projection of an image in one call.
pub(crate) fn project_and_rebin(image: &CtImage, geom: &ScanGeometry) -> Result<Sinogram> {
    rebin_fan_to_parallel(&super::forward_project(image, geom)?, geom)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_rebins_to_zero() {
        let geom = ScanGeometry::desk(24, 32).unwrap();
        let fan = Sinogram::fan(vec![0.0; 24 * 256], geom.clone()).unwrap();
        let par = rebin_fan_to_parallel(&fan, &geom).unwrap();
        assert_eq!(par.kind, SinogramKind::Parallel);
        assert!(par.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rebin_rejects_parallel_input() {
        let geom = ScanGeometry::desk(24, 32).unwrap();
        let par = Sinogram::parallel(vec![0.0; 24 * 256], geom.clone()).unwrap();
        assert!(rebin_fan_to_parallel(&par, &geom).is_err());
        let fan = Sinogram::fan(vec![0.0; 24 * 256], geom.clone()).unwrap();
        assert!(rebin_adjoint(&fan, &geom).is_err());
    }

    #[test]
    fn rebin_adjoint_dot_test() {
        let geom = ScanGeometry::desk(24, 32).unwrap();
        let mut state = 0xB7E151628AED2A6Bu64;
        let mut next = move || {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((state >> 33) as f64 / (1u64 << 31) as f64) as f32 - 1.0
        };
        let n = 24 * 256;
        let fan = Sinogram::fan((0..n).map(|_| next()).collect(), geom.clone()).unwrap();
        let par = Sinogram::parallel((0..n).map(|_| next()).collect(), geom.clone()).unwrap();
        let lhs: f64 = rebin_fan_to_parallel(&fan, &geom)
            .unwrap()
            .data
            .iter()
            .zip(&par.data)
            .map(|(&a, &b)| a as f64 * b as f64)
            .sum();
        let rhs: f64 = rebin_adjoint(&par, &geom)
            .unwrap()
            .data
            .iter()
            .zip(&fan.data)
            .map(|(&a, &b)| a as f64 * b as f64)
            .sum();
        assert!((lhs - rhs).abs() <= 1e-4 * lhs.abs().max(rhs.abs()));
    }
}
