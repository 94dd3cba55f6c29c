//! Ellipse-union phantoms and their rasterization.

use super::{CtImage, ScanGeometry};
use crate::error::{Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// One additive ellipse of a phantom.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub center_x: f64,
    pub center_y: f64,
    pub semi_axis_a: f64,
    pub semi_axis_b: f64,
    pub rotation_rad: f64,
    pub additive_value: f64,
}

impl Ellipse {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let dx = x - self.center_x;
        let dy = y - self.center_y;
        let (s, c) = self.rotation_rad.sin_cos();
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        (u / self.semi_axis_a).powi(2) + (v / self.semi_axis_b).powi(2) <= 1.0
    }

    fn fits_unit_disk(&self) -> bool {
        let r = (self.center_x.powi(2) + self.center_y.powi(2)).sqrt();
        r + self.semi_axis_a.max(self.semi_axis_b) <= 1.0 + 1e-9
    }
}

/// A phantom as a list of additive ellipses, all inside the unit disk.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub ellipses: Vec<Ellipse>,
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        for (i, e) in self.ellipses.iter().enumerate() {
            if !(e.semi_axis_a > 0.0 && e.semi_axis_b > 0.0) {
                return Err(Error::invalid(format!(
                    "ellipse {i} has non-positive semi-axes"
                )));
            }
            if !e.fits_unit_disk() {
                return Err(Error::invalid(format!(
                    "ellipse {i} extends outside the unit disk"
                )));
            }
        }
        Ok(())
    }

    /// The ten-ellipse head phantom with intensities scaled so the skull
    /// reads 1.0 and soft tissue about 0.2.
    pub fn shepp_logan() -> Self {
        let rows: [(f64, f64, f64, f64, f64, f64); 10] = [
            (0.0, 0.0, 0.69, 0.92, 0.0, 1.0),
            (0.0, -0.0184, 0.6624, 0.874, 0.0, -0.8),
            (0.22, 0.0, 0.11, 0.31, -18.0, -0.2),
            (-0.22, 0.0, 0.16, 0.41, 18.0, -0.2),
            (0.0, 0.35, 0.21, 0.25, 0.0, 0.1),
            (0.0, 0.1, 0.046, 0.046, 0.0, 0.1),
            (0.0, -0.1, 0.046, 0.046, 0.0, 0.1),
            (-0.08, -0.605, 0.046, 0.023, 0.0, 0.1),
            (0.0, -0.605, 0.023, 0.023, 0.0, 0.1),
            (0.06, -0.605, 0.023, 0.046, 0.0, 0.1),
        ];
        PhantomSpec {
            ellipses: rows
                .iter()
                .map(|&(cx, cy, a, b, deg, v)| Ellipse {
                    center_x: cx,
                    center_y: cy,
                    semi_axis_a: a,
                    semi_axis_b: b,
                    rotation_rad: deg.to_radians(),
                    additive_value: v,
                })
                .collect(),
        }
    }

    /// Randomly perturb every ellipse parameter by up to `frac` relative,
    /// then shrink axes where needed so the phantom stays inside the unit
    /// disk.
    pub fn jittered<R: Rng>(&self, rng: &mut R, frac: f64) -> PhantomSpec {
        let mut j = |v: f64| v * (1.0 + frac * (2.0 * rng.random::<f64>() - 1.0));
        let ellipses = self
            .ellipses
            .iter()
            .map(|e| {
                let mut out = Ellipse {
                    center_x: j(e.center_x),
                    center_y: j(e.center_y),
                    semi_axis_a: j(e.semi_axis_a),
                    semi_axis_b: j(e.semi_axis_b),
                    rotation_rad: j(e.rotation_rad),
                    additive_value: j(e.additive_value),
                };
                let r = (out.center_x.powi(2) + out.center_y.powi(2)).sqrt();
                let reach = out.semi_axis_a.max(out.semi_axis_b);
                if r + reach > 1.0 {
                    let shrink = (1.0 - r).max(0.0) / reach;
                    out.semi_axis_a *= shrink;
                    out.semi_axis_b *= shrink;
                }
                out
            })
            .collect();
        PhantomSpec { ellipses }
    }
}

/// Rasterize onto the geometry's grid with 2x2 supersampling; each
/// subsample is the clipped ellipse-value sum, so pixels land in [0, 1].
pub fn rasterize_phantom(spec: &PhantomSpec, geom: &ScanGeometry) -> Result<CtImage> {
    spec.validate()?;
    let (h, w) = geom.image_size;
    let ps = geom.pixel_spacing;
    let mut data = vec![0.0f32; h * w];
    crate::exec::for_each_chunk(&mut data, w, |r, row| {
        let y0 = geom.pixel_y(r);
        for (c, slot) in row.iter_mut().enumerate() {
            let x0 = geom.pixel_x(c);
            let mut acc = 0.0f64;
            for (dx, dy) in [(-0.25, -0.25), (0.25, -0.25), (-0.25, 0.25), (0.25, 0.25)] {
                let x = x0 + dx * ps;
                let y = y0 + dy * ps;
                let sum: f64 = spec
                    .ellipses
                    .iter()
                    .filter(|e| e.contains(x, y))
                    .map(|e| e.additive_value)
                    .sum();
                acc += sum.clamp(0.0, 1.0);
            }
            *slot = (acc / 4.0) as f32;
        }
    });
    Ok(CtImage {
        data,
        geometry: geom.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_spec_rasterizes_to_zero() {
        let geom = ScanGeometry::desk(8, 32).unwrap();
        let img = rasterize_phantom(&PhantomSpec::default(), &geom).unwrap();
        assert!(img.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn full_disk_fills_interior() {
        let geom = ScanGeometry::desk(8, 64).unwrap();
        let spec = PhantomSpec {
            ellipses: vec![Ellipse {
                center_x: 0.0,
                center_y: 0.0,
                semi_axis_a: 0.8,
                semi_axis_b: 0.8,
                rotation_rad: 0.0,
                additive_value: 1.0,
            }],
        };
        let img = rasterize_phantom(&spec, &geom).unwrap();
        let at = |x: f64, y: f64| {
            let c = ((x + 1.0) / geom.pixel_spacing - 0.5).round() as usize;
            let r = ((1.0 - y) / geom.pixel_spacing - 0.5).round() as usize;
            img.data[r * 64 + c]
        };
        assert_eq!(at(0.0, 0.0), 1.0);
        assert_eq!(at(0.3, -0.3), 1.0);
        assert_eq!(at(0.9, 0.0), 0.0);
        assert_eq!(at(0.0, 0.95), 0.0);
    }

    #[test]
    fn ellipse_outside_disk_is_rejected() {
        let geom = ScanGeometry::desk(8, 32).unwrap();
        let spec = PhantomSpec {
            ellipses: vec![Ellipse {
                center_x: 0.5,
                center_y: 0.0,
                semi_axis_a: 0.6,
                semi_axis_b: 0.2,
                rotation_rad: 0.0,
                additive_value: 1.0,
            }],
        };
        assert!(rasterize_phantom(&spec, &geom).is_err());
    }

    #[test]
    fn shepp_logan_structure() {
        let geom = ScanGeometry::desk(8, 128).unwrap();
        let spec = PhantomSpec::shepp_logan();
        let img = rasterize_phantom(&spec, &geom).unwrap();
        let lo = img.data.iter().fold(f32::INFINITY, |m, &v| m.min(v));
        let hi = img.data.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v));
        assert!(lo >= 0.0 && hi <= 1.0);

        // membership checks at analytic sample points
        let at = |x: f64, y: f64| {
            let c = ((x + 1.0) / geom.pixel_spacing - 0.5).round() as usize;
            let r = ((1.0 - y) / geom.pixel_spacing - 0.5).round() as usize;
            img.data[r * 128 + c]
        };
        // skull ring near the top of the outer ellipse
        assert!(at(0.0, 0.89) > 0.9, "skull ring missing");
        // soft tissue interior
        assert!((at(0.0, -0.3) - 0.2).abs() < 0.05);
        // outside the head
        assert_eq!(at(0.0, 0.97), 0.0);
    }

    #[test]
    fn jitter_stays_valid() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(5);
        let base = PhantomSpec::shepp_logan();
        for _ in 0..50 {
            let j = base.jittered(&mut rng, 0.1);
            assert!(j.validate().is_ok());
        }
    }
}
