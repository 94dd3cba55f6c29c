//! Filtered backprojection and its exact adjoint.
//!
//! `fbp = backproject . (1/ds) . ramp_filter . rebin_fan_to_parallel`, where
//! `ds` is the parallel offset spacing. The 1/ds factor converts the ramp's
//! cycles-per-sample normalization into physical frequency so reconstructed
//! values come out in the same normalized attenuation units as the phantom.

use super::filter::scale_in_place;
use super::{
    backproject, parallel_project, ramp_filter, rebin_adjoint, rebin_fan_to_parallel, CtImage,
    ScanGeometry, Sinogram, SinogramKind,
};
use crate::error::{Error, Result};

/// Reconstruct an image from a fan-beam sinogram.
pub fn fbp(sino: &Sinogram, geom: &ScanGeometry) -> Result<CtImage> {
    sino.expect_kind(SinogramKind::Fan, "fbp")?;
    if sino.rows != geom.num_views || sino.cols != geom.num_detectors {
        return Err(Error::shape(
            "fbp",
            format!(
                "sinogram {}x{} does not match geometry {}x{}",
                sino.rows, sino.cols, geom.num_views, geom.num_detectors
            ),
        ));
    }
    let par = rebin_fan_to_parallel(sino, geom)?;
    let mut filtered = ramp_filter(&par)?;
    scale_in_place(&mut filtered, 1.0 / geom.offset_step());
    backproject(&filtered, geom)
}

/// Exact transpose of [`fbp`]: maps an image-domain cotangent back to a
/// fan-sinogram cotangent, so `<fbp(y), g> = <y, fbp_adjoint(g)>`.
pub fn fbp_adjoint(image_grad: &CtImage, geom: &ScanGeometry) -> Result<Sinogram> {
    if !image_grad.geometry.same_grid(geom) {
        return Err(Error::shape(
            "fbp_adjoint",
            format!(
                "image grid {:?} does not match geometry grid {:?}",
                image_grad.geometry.image_size, geom.image_size
            ),
        ));
    }
    // Transposes compose in reverse: backproject^T, then the (self-adjoint)
    // ramp, then rebin^T.
    let mut splat = parallel_project(image_grad, geom)?;
    scale_in_place(
        &mut splat,
        std::f64::consts::PI / geom.num_views as f64 / geom.offset_step(),
    );
    let filtered = ramp_filter(&splat)?;
    rebin_adjoint(&filtered, geom)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lcg_values(n: usize, mut state: u64) -> Vec<f32> {
        (0..n)
            .map(|_| {
                state = state
                    .wrapping_mul(6364136223846793005)
                    .wrapping_add(1442695040888963407);
                ((state >> 33) as f64 / (1u64 << 31) as f64) as f32 - 1.0
            })
            .collect()
    }

    #[test]
    fn zero_sinogram_reconstructs_to_zero() {
        let geom = ScanGeometry::desk(24, 32).unwrap();
        let sino = Sinogram::fan(vec![0.0; 24 * 256], geom.clone()).unwrap();
        let img = fbp(&sino, &geom).unwrap();
        assert!(img.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fbp_scales_linearly() {
        let geom = ScanGeometry::desk(16, 32).unwrap();
        let data = lcg_values(16 * 256, 7);
        let scaled: Vec<f32> = data.iter().map(|v| v * 2.5).collect();
        let a = fbp(&Sinogram::fan(data, geom.clone()).unwrap(), &geom).unwrap();
        let b = fbp(&Sinogram::fan(scaled, geom.clone()).unwrap(), &geom).unwrap();
        let max = a.data.iter().fold(0.0f32, |m, v| m.max(v.abs()));
        for (&x, &y) in a.data.iter().zip(&b.data) {
            assert!((2.5 * x - y).abs() <= 1e-5 * max.max(1.0));
        }
    }

    #[test]
    fn fbp_adjoint_dot_test() {
        let geom = ScanGeometry::desk(48, 64).unwrap();
        let y = Sinogram::fan(lcg_values(48 * 256, 11), geom.clone()).unwrap();
        let g = CtImage::from_data(lcg_values(64 * 64, 13), geom.clone()).unwrap();
        let lhs: f64 = fbp(&y, &geom)
            .unwrap()
            .data
            .iter()
            .zip(&g.data)
            .map(|(&a, &b)| a as f64 * b as f64)
            .sum();
        let rhs: f64 = fbp_adjoint(&g, &geom)
            .unwrap()
            .data
            .iter()
            .zip(&y.data)
            .map(|(&a, &b)| a as f64 * b as f64)
            .sum();
        assert!(
            (lhs - rhs).abs() <= 1e-4 * lhs.abs().max(rhs.abs()),
            "lhs={lhs} rhs={rhs}"
        );
    }

    #[test]
    fn zero_cotangent_gives_zero_gradient() {
        let geom = ScanGeometry::desk(8, 32).unwrap();
        let g = CtImage::zeros(geom.clone());
        let back = fbp_adjoint(&g, &geom).unwrap();
        assert_eq!(back.kind, SinogramKind::Fan);
        assert!(back.data.iter().all(|&v| v == 0.0));
    }
}
