//! Ray-driven fan-beam projection and the pixel-driven parallel
//! projector/backprojector pair.
//!
//! `parallel_project` and `backproject` use identical bilinear footprints
//! (scatter vs gather), so the unweighted backprojector is the exact
//! discrete transpose of the parallel projector. FBP's gradient relies on
//! that exactness.

use super::{sample_bilinear, CtImage, ScanGeometry, Sinogram, SinogramKind};
use crate::error::{Error, Result};
use crate::exec;

/// Fan-beam forward projection: line integrals along every (view, detector)
/// ray, by equidistant sampling at half-pixel steps with bilinear image
/// interpolation.
pub fn forward_project(image: &CtImage, geom: &ScanGeometry) -> Result<Sinogram> {
    if !image.geometry.same_grid(geom) {
        return Err(Error::shape(
            "forward_project",
            format!(
                "image grid {:?} does not match geometry grid {:?}",
                image.geometry.image_size, geom.image_size
            ),
        ));
    }
    let (h, w) = geom.image_size;
    let half_w = 0.5 * w as f64 * geom.pixel_spacing;
    let half_h = 0.5 * h as f64 * geom.pixel_spacing;
    // Clip rays to the circle circumscribing the image square.
    let r_clip = half_w.hypot(half_h) + geom.pixel_spacing;
    let step = geom.pixel_spacing / 2.0;
    let d_si = geom.source_to_iso;

    let mut out = vec![0.0f32; geom.num_views * geom.num_detectors];
    exec::for_each_chunk(&mut out, geom.num_detectors, |v, row| {
        let beta = geom.view_angles[v];
        let (sx, sy) = (-d_si * beta.sin(), d_si * beta.cos());
        for (d, slot) in row.iter_mut().enumerate() {
            let theta = beta + geom.detector_gamma(d);
            let (tx, ty) = (theta.sin(), -theta.cos());
            // |S + u t|^2 = r_clip^2, with |t| = 1
            let b = 2.0 * (sx * tx + sy * ty);
            let c = sx * sx + sy * sy - r_clip * r_clip;
            let disc = b * b - 4.0 * c;
            if disc <= 0.0 {
                continue;
            }
            let sq = disc.sqrt();
            let u0 = (-b - sq) / 2.0;
            let u1 = (-b + sq) / 2.0;
            let n = ((u1 - u0) / step).ceil().max(1.0) as usize;
            let du = (u1 - u0) / n as f64;
            let mut acc = 0.0f64;
            for i in 0..n {
                let u = u0 + (i as f64 + 0.5) * du;
                acc += sample_bilinear(&image.data, geom, sx + u * tx, sy + u * ty);
            }
            *slot = (acc * du) as f32;
        }
    });
    Ok(Sinogram::unchecked(out, geom.clone(), SinogramKind::Fan))
}

/// Pixel-driven parallel projection onto the rebinned grid: each pixel
/// scatters its value into the two offset bins its ray coordinate straddles.
///
/// This is the exact transpose of the unweighted [`backproject`] gather and
/// serves as the adjoint partner inside [`super::fbp_adjoint`].
pub fn parallel_project(image: &CtImage, geom: &ScanGeometry) -> Result<Sinogram> {
    if !image.geometry.same_grid(geom) {
        return Err(Error::shape(
            "parallel_project",
            format!(
                "image grid {:?} does not match geometry grid {:?}",
                image.geometry.image_size, geom.image_size
            ),
        ));
    }
    let (h, w) = geom.image_size;
    let nd = geom.num_detectors;
    let mut out = vec![0.0f32; geom.num_views * nd];
    exec::for_each_chunk(&mut out, nd, |i, row| {
        let theta = geom.parallel_angle(i);
        let (ct, st) = (theta.cos(), theta.sin());
        let mut acc = vec![0.0f64; nd];
        for r in 0..h {
            let y_st = geom.pixel_y(r) * st;
            for c in 0..w {
                let v = image.data[r * w + c] as f64;
                if v == 0.0 {
                    continue;
                }
                let s = geom.pixel_x(c) * ct + y_st;
                let j_f = geom.offset_to_index(s);
                let j0 = j_f.floor();
                let wj = j_f - j0;
                if (0.0..(nd as f64)).contains(&j0) {
                    acc[j0 as usize] += (1.0 - wj) * v;
                }
                let j1 = j0 + 1.0;
                if (0.0..(nd as f64)).contains(&j1) {
                    acc[j1 as usize] += wj * v;
                }
            }
        }
        for (slot, a) in row.iter_mut().zip(&acc) {
            *slot = *a as f32;
        }
    });
    Ok(Sinogram::unchecked(
        out,
        geom.clone(),
        SinogramKind::Parallel,
    ))
}

/// Parallel-beam backprojection: each pixel gathers the linearly
/// interpolated sinogram sample at `s = x cos(theta) + y sin(theta)` over all
/// angles, weighted by `pi / num_angles`.
pub fn backproject(sino: &Sinogram, geom: &ScanGeometry) -> Result<CtImage> {
    sino.expect_kind(SinogramKind::Parallel, "backproject")?;
    if sino.rows != geom.num_views || sino.cols != geom.num_detectors {
        return Err(Error::shape(
            "backproject",
            format!(
                "sinogram {}x{} does not match geometry {}x{}",
                sino.rows, sino.cols, geom.num_views, geom.num_detectors
            ),
        ));
    }
    let (h, w) = geom.image_size;
    let nd = geom.num_detectors;
    let weight = std::f64::consts::PI / geom.num_views as f64;
    let trig: Vec<(f64, f64)> = (0..geom.num_views)
        .map(|i| {
            let t = geom.parallel_angle(i);
            (t.cos(), t.sin())
        })
        .collect();

    let mut out = vec![0.0f32; h * w];
    exec::for_each_chunk(&mut out, w, |r, row| {
        let y = geom.pixel_y(r);
        for (c, slot) in row.iter_mut().enumerate() {
            let x = geom.pixel_x(c);
            let mut acc = 0.0f64;
            for (i, &(ct, st)) in trig.iter().enumerate() {
                let s = x * ct + y * st;
                let j_f = geom.offset_to_index(s);
                let j0 = j_f.floor();
                let wj = j_f - j0;
                let base = i * nd;
                if (0.0..(nd as f64)).contains(&j0) {
                    acc += (1.0 - wj) * sino.data[base + j0 as usize] as f64;
                }
                let j1 = j0 + 1.0;
                if (0.0..(nd as f64)).contains(&j1) {
                    acc += wj * sino.data[base + j1 as usize] as f64;
                }
            }
            *slot = (acc * weight) as f32;
        }
    });
    Ok(CtImage {
        data: out,
        geometry: geom.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dot(a: &[f32], b: &[f32]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(&x, &y)| x as f64 * y as f64)
            .sum()
    }

    #[test]
    fn zero_image_projects_to_zero() {
        let geom = ScanGeometry::desk(24, 32).unwrap();
        let sino = forward_project(&CtImage::zeros(geom.clone()), &geom).unwrap();
        assert!(sino.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn grid_mismatch_is_rejected() {
        let a = ScanGeometry::desk(24, 32).unwrap();
        let b = ScanGeometry::desk(24, 64).unwrap();
        let img = CtImage::zeros(a);
        assert!(forward_project(&img, &b).is_err());
    }

    #[test]
    fn backproject_requires_parallel_kind() {
        let geom = ScanGeometry::desk(8, 16).unwrap();
        let fan = Sinogram::fan(vec![0.0; 8 * 256], geom.clone()).unwrap();
        assert!(backproject(&fan, &geom).is_err());
    }

    #[test]
    fn single_bin_backprojects_onto_a_strip() {
        let geom = ScanGeometry::desk(16, 64).unwrap();
        let mut data = vec![0.0f32; 16 * 256];
        let (i0, j0) = (4, 100);
        data[i0 * 256 + j0] = 1.0;
        let sino = Sinogram::parallel(data, geom.clone()).unwrap();
        let img = backproject(&sino, &geom).unwrap();

        let theta = geom.parallel_angle(i0);
        let s0 = geom.offset(j0);
        let mut on = 0.0f64;
        let mut off = 0.0f64;
        let (mut n_on, mut n_off) = (0usize, 0usize);
        for r in 0..64 {
            for c in 0..64 {
                let s = geom.pixel_x(c) * theta.cos() + geom.pixel_y(r) * theta.sin();
                let v = img.data[r * 64 + c].abs() as f64;
                if (s - s0).abs() < geom.offset_step() {
                    on += v;
                    n_on += 1;
                } else if (s - s0).abs() > 4.0 * geom.offset_step() {
                    off += v;
                    n_off += 1;
                }
            }
        }
        // support concentrated on the strip x cos + y sin = s0
        assert!(on / n_on as f64 > 100.0 * (off / n_off as f64 + 1e-12));
    }

    #[test]
    fn projector_backprojector_dot_test() {
        // <P(x), y> = <x, P^T(y)> with P^T = backproject / (pi / n_angles)
        let geom = ScanGeometry::desk(48, 64).unwrap();
        let mut rng = 0x243F6A8885A308D3u64;
        let mut next = move || {
            rng = rng.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((rng >> 33) as f64 / (1u64 << 31) as f64) as f32 - 1.0
        };
        let ximg = CtImage::from_data((0..64 * 64).map(|_| next()).collect(), geom.clone()).unwrap();
        let ysino =
            Sinogram::parallel((0..48 * 256).map(|_| next()).collect(), geom.clone()).unwrap();

        let px = parallel_project(&ximg, &geom).unwrap();
        let bty = backproject(&ysino, &geom).unwrap();
        let lhs = dot(&px.data, &ysino.data) * (std::f64::consts::PI / 48.0);
        let rhs = dot(&ximg.data, &bty.data);
        assert!(
            (lhs - rhs).abs() <= 1e-4 * lhs.abs().max(rhs.abs()),
            "lhs={lhs} rhs={rhs}"
        );
    }
}
