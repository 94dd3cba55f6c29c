//! Fan-beam tomography: geometry, forward projection, fan-to-parallel
//! rebinning, ramp filtering, backprojection, and their composition into
//! filtered backprojection (FBP).
//!
//! Every operator in this module is linear in its array argument and ships
//! with an exact discrete adjoint, which is what makes the dual-domain
//! consistency layer differentiable.
//!
//! Coordinate conventions: the reconstruction field of view is the unit disk
//! (radius 1.0). The source at view angle `beta` sits at
//! `source_to_iso * (-sin beta, cos beta)`; a ray at fan angle `gamma` has
//! parallel-beam coordinates `theta = beta + gamma`, `s = source_to_iso * sin
//! gamma`. Image pixels are laid out row-major with x increasing rightwards
//! and y increasing upwards.

mod fbp;
mod filter;
mod phantom;
mod project;
mod rebin;

pub use fbp::{fbp, fbp_adjoint};
pub use filter::{ramp_filter, ramp_filter_with, ApodizationWindow};
pub use phantom::{rasterize_phantom, Ellipse, PhantomSpec};
pub use project::{backproject, forward_project, parallel_project};
pub use rebin::{rebin_adjoint, rebin_fan_to_parallel};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

pub const TWO_PI: f64 = std::f64::consts::TAU;

/// Full description of a fan-beam acquisition and its reconstruction grid.
///
/// Lengths are in normalized units where the field-of-view radius is 1.0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanGeometry {
    /// Number of projection views (uniformly spaced over the full circle).
    pub num_views: usize,
    /// View angles in radians, `angle[k] = 2*pi*k / num_views`.
    pub view_angles: Vec<f64>,
    /// Detector elements along the equiangular arc.
    pub num_detectors: usize,
    /// Source-to-isocenter distance.
    pub source_to_iso: f64,
    /// Source-to-detector distance.
    pub source_to_detector: f64,
    /// Equiangular fan half-angle in radians.
    pub detector_arc: f64,
    /// Reconstruction grid (rows, cols).
    pub image_size: (usize, usize),
    /// Side length of one pixel.
    pub pixel_spacing: f64,
}

impl ScanGeometry {
    /// Build a geometry with uniform view angles and validate its invariants.
    pub fn new(
        num_views: usize,
        num_detectors: usize,
        image_size: (usize, usize),
        pixel_spacing: f64,
        source_to_iso: f64,
        source_to_detector: f64,
        detector_arc: f64,
    ) -> Result<Self> {
        let view_angles = (0..num_views)
            .map(|k| TWO_PI * k as f64 / num_views as f64)
            .collect();
        let geom = ScanGeometry {
            num_views,
            view_angles,
            num_detectors,
            source_to_iso,
            source_to_detector,
            detector_arc,
            image_size,
            pixel_spacing,
        };
        geom.validate()?;
        Ok(geom)
    }

    /// Desk-scale default: square image, 256 detectors, magnification-3 fan
    /// whose arc exactly covers the unit field of view.
    pub fn desk(num_views: usize, image_px: usize) -> Result<Self> {
        let d_si = 3.0;
        Self::new(
            num_views,
            256,
            (image_px, image_px),
            2.0 / image_px as f64,
            d_si,
            5.0,
            (1.0 / d_si).asin(),
        )
    }

    /// Same scanner, different number of uniformly spaced views.
    pub fn with_num_views(&self, num_views: usize) -> Result<Self> {
        if num_views < 2 {
            return Err(Error::invalid(format!(
                "num_views must be >= 2, got {num_views}"
            )));
        }
        Self::new(
            num_views,
            self.num_detectors,
            self.image_size,
            self.pixel_spacing,
            self.source_to_iso,
            self.source_to_detector,
            self.detector_arc,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_views < 2 {
            return Err(Error::invalid("geometry needs at least 2 views"));
        }
        if self.num_detectors == 0 || self.image_size.0 == 0 || self.image_size.1 == 0 {
            return Err(Error::invalid("geometry has an empty axis"));
        }
        if !(self.pixel_spacing > 0.0) {
            return Err(Error::invalid("pixel_spacing must be positive"));
        }
        if !(self.source_to_detector > self.source_to_iso && self.source_to_iso > 1.0) {
            return Err(Error::invalid(
                "need source_to_detector > source_to_iso > 1.0",
            ));
        }
        if self.detector_arc.sin() < 1.0 / self.source_to_iso - 1e-12 {
            return Err(Error::invalid(
                "detector arc does not cover the unit field of view",
            ));
        }
        if self.view_angles.len() != self.num_views {
            return Err(Error::invalid("view_angles length != num_views"));
        }
        let step = TWO_PI / self.num_views as f64;
        for (k, &a) in self.view_angles.iter().enumerate() {
            if (a - step * k as f64).abs() > 1e-9 {
                return Err(Error::invalid(
                    "view angles must be uniform: angle[k] = 2*pi*k/num_views",
                ));
            }
        }
        Ok(())
    }

    /// Angular pitch between adjacent detector elements.
    pub fn gamma_step(&self) -> f64 {
        2.0 * self.detector_arc / self.num_detectors as f64
    }

    /// Fan angle of detector element `d` (bin center).
    pub fn detector_gamma(&self, d: usize) -> f64 {
        (d as f64 + 0.5 - self.num_detectors as f64 / 2.0) * self.gamma_step()
    }

    /// Fractional detector index for fan angle `gamma` (inverse of
    /// [`Self::detector_gamma`]).
    pub fn gamma_to_index(&self, gamma: f64) -> f64 {
        gamma / self.gamma_step() + self.num_detectors as f64 / 2.0 - 0.5
    }

    /// Largest signed ray offset representable on the parallel grid.
    pub fn offset_max(&self) -> f64 {
        self.source_to_iso * self.detector_arc.sin()
    }

    /// Spacing of the parallel offset grid (same bin count as the detector).
    pub fn offset_step(&self) -> f64 {
        2.0 * self.offset_max() / self.num_detectors as f64
    }

    /// Signed offset of parallel bin `j` (bin center).
    pub fn offset(&self, j: usize) -> f64 {
        (j as f64 + 0.5 - self.num_detectors as f64 / 2.0) * self.offset_step()
    }

    /// Fractional parallel-bin index for offset `s`.
    pub fn offset_to_index(&self, s: f64) -> f64 {
        s / self.offset_step() + self.num_detectors as f64 / 2.0 - 0.5
    }

    /// Parallel view angles cover `[0, pi)` with the same count as the fan
    /// views.
    pub fn parallel_angle(&self, i: usize) -> f64 {
        std::f64::consts::PI * i as f64 / self.num_views as f64
    }

    /// World x of pixel column `c` (pixel center).
    pub fn pixel_x(&self, c: usize) -> f64 {
        (c as f64 + 0.5) * self.pixel_spacing - 0.5 * self.image_size.1 as f64 * self.pixel_spacing
    }

    /// World y of pixel row `r` (pixel center, y up).
    pub fn pixel_y(&self, r: usize) -> f64 {
        0.5 * self.image_size.0 as f64 * self.pixel_spacing - (r as f64 + 0.5) * self.pixel_spacing
    }

    /// True when two geometries share the same reconstruction grid.
    pub fn same_grid(&self, other: &ScanGeometry) -> bool {
        self.image_size == other.image_size
            && (self.pixel_spacing - other.pixel_spacing).abs() < 1e-12
    }

    /// True when two geometries describe the same scanner (grid plus fan).
    pub fn same_scanner(&self, other: &ScanGeometry) -> bool {
        self.same_grid(other)
            && self.num_detectors == other.num_detectors
            && (self.source_to_iso - other.source_to_iso).abs() < 1e-12
            && (self.source_to_detector - other.source_to_detector).abs() < 1e-12
            && (self.detector_arc - other.detector_arc).abs() < 1e-12
    }
}

/// A reconstruction-grid image of normalized attenuation values.
#[derive(Debug, Clone)]
pub struct CtImage {
    pub data: Vec<f32>,
    pub geometry: ScanGeometry,
}

impl CtImage {
    pub fn zeros(geometry: ScanGeometry) -> Self {
        let n = geometry.image_size.0 * geometry.image_size.1;
        CtImage {
            data: vec![0.0; n],
            geometry,
        }
    }

    /// Wrap raw data, validating shape and finiteness.
    pub fn from_data(data: Vec<f32>, geometry: ScanGeometry) -> Result<Self> {
        let n = geometry.image_size.0 * geometry.image_size.1;
        if data.len() != n {
            return Err(Error::shape(
                "CtImage::from_data",
                format!("expected {n} values, got {}", data.len()),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("image contains non-finite values".into()));
        }
        Ok(CtImage { data, geometry })
    }

    pub fn rows(&self) -> usize {
        self.geometry.image_size.0
    }

    pub fn cols(&self) -> usize {
        self.geometry.image_size.1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SinogramKind {
    Fan,
    Parallel,
}

/// A stack of projections: `rows x cols` line integrals bound to the
/// geometry they were measured (or rebinned) under.
///
/// Fan sinograms are `num_views x num_detectors`; parallel sinograms carry
/// their own grid of `num_views` angles over `[0, pi)` by `num_detectors`
/// signed offsets.
#[derive(Debug, Clone)]
pub struct Sinogram {
    pub data: Vec<f32>,
    pub rows: usize,
    pub cols: usize,
    pub kind: SinogramKind,
    pub geometry: ScanGeometry,
}

impl Sinogram {
    pub fn fan(data: Vec<f32>, geometry: ScanGeometry) -> Result<Self> {
        Self::checked(data, geometry, SinogramKind::Fan)
    }

    pub fn parallel(data: Vec<f32>, geometry: ScanGeometry) -> Result<Self> {
        Self::checked(data, geometry, SinogramKind::Parallel)
    }

    fn checked(data: Vec<f32>, geometry: ScanGeometry, kind: SinogramKind) -> Result<Self> {
        let (rows, cols) = (geometry.num_views, geometry.num_detectors);
        if data.len() != rows * cols {
            return Err(Error::shape(
                "Sinogram",
                format!("expected {rows}x{cols} values, got {}", data.len()),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(
                "sinogram contains non-finite values".into(),
            ));
        }
        Ok(Sinogram {
            data,
            rows,
            cols,
            kind,
            geometry,
        })
    }

    pub(crate) fn unchecked(
        data: Vec<f32>,
        geometry: ScanGeometry,
        kind: SinogramKind,
    ) -> Sinogram {
        Sinogram {
            rows: geometry.num_views,
            cols: geometry.num_detectors,
            data,
            kind,
            geometry,
        }
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub(crate) fn expect_kind(&self, kind: SinogramKind, op: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::invalid(format!(
                "{op} expects a {kind:?} sinogram, got {:?}",
                self.kind
            )));
        }
        Ok(())
    }
}

/// Bilinear sample of a row-major image at world coordinates, zero outside
/// the grid.
pub(crate) fn sample_bilinear(
    data: &[f32],
    geom: &ScanGeometry,
    x: f64,
    y: f64,
) -> f64 {
    let (h, w) = geom.image_size;
    let ps = geom.pixel_spacing;
    let col_f = (x + 0.5 * w as f64 * ps) / ps - 0.5;
    let row_f = (0.5 * h as f64 * ps - y) / ps - 0.5;
    let c0 = col_f.floor();
    let r0 = row_f.floor();
    let wc = col_f - c0;
    let wr = row_f - r0;
    let mut acc = 0.0;
    for (ri, rw) in [(r0, 1.0 - wr), (r0 + 1.0, wr)] {
        if !(0.0..(h as f64)).contains(&ri) || rw == 0.0 {
            continue;
        }
        let ri = ri as usize;
        for (ci, cw) in [(c0, 1.0 - wc), (c0 + 1.0, wc)] {
            if !(0.0..(w as f64)).contains(&ci) || cw == 0.0 {
                continue;
            }
            acc += rw * cw * data[ri * w + ci as usize] as f64;
        }
    }
    acc
}
