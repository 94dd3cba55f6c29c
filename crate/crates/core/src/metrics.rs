//! Image-quality metrics: PSNR, multi-scale SSIM, and RMSE.
//!
//! MS-SSIM uses the standard five-level configuration (Gaussian window 11,
//! sigma 1.5, the usual level weights). Images too small for five dyadic
//! scales fall back to the largest feasible level count with renormalized
//! weights; the effective count is reported next to the score.

use crate::error::{Error, Result};
use crate::tomo::CtImage;
use serde::{Deserialize, Serialize};

/// Standard five-level MS-SSIM weights.
pub const LEVEL_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    /// Dynamic range of valid data (1.0 for normalized attenuation).
    pub data_range: f64,
    /// Requested MS-SSIM levels (at most 5); auto-reduced on small images.
    pub ssim_levels: usize,
    /// Gaussian window size (odd).
    pub ssim_kernel: usize,
    /// Gaussian window standard deviation.
    pub ssim_sigma: f64,
    /// Luminance stability constant factor.
    pub k1: f64,
    /// Contrast stability constant factor.
    pub k2: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            data_range: 1.0,
            ssim_levels: 5,
            ssim_kernel: 11,
            ssim_sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
        }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.data_range > 0.0) {
            return Err(Error::invalid("data_range must be positive"));
        }
        if self.ssim_levels == 0 || self.ssim_levels > 5 {
            return Err(Error::invalid("ssim_levels must be in 1..=5"));
        }
        if self.ssim_kernel % 2 == 0 || self.ssim_kernel == 0 {
            return Err(Error::invalid("ssim_kernel must be odd"));
        }
        if !(self.ssim_sigma > 0.0) {
            return Err(Error::invalid("ssim_sigma must be positive"));
        }
        Ok(())
    }
}

fn check_shapes(pred: &CtImage, gt: &CtImage, op: &str) -> Result<(usize, usize)> {
    if pred.geometry.image_size != gt.geometry.image_size {
        return Err(Error::shape(
            op,
            format!(
                "{:?} vs {:?}",
                pred.geometry.image_size, gt.geometry.image_size
            ),
        ));
    }
    Ok(pred.geometry.image_size)
}

fn mse(pred: &CtImage, gt: &CtImage) -> f64 {
    let n = pred.data.len() as f64;
    pred.data
        .iter()
        .zip(&gt.data)
        .map(|(&a, &b)| {
            let d = a as f64 - b as f64;
            d * d
        })
        .sum::<f64>()
        / n
}

/// Peak signal-to-noise ratio in dB, capped at 99.0 (identical images).
pub fn psnr(pred: &CtImage, gt: &CtImage, cfg: &MetricConfig) -> Result<f64> {
    check_shapes(pred, gt, "psnr")?;
    cfg.validate()?;
    let err = mse(pred, gt);
    if err == 0.0 {
        return Ok(99.0);
    }
    Ok((10.0 * (cfg.data_range * cfg.data_range / err).log10()).min(99.0))
}

/// Root mean squared error.
pub fn rmse(pred: &CtImage, gt: &CtImage) -> Result<f64> {
    check_shapes(pred, gt, "rmse")?;
    Ok(mse(pred, gt).sqrt())
}

/// MS-SSIM score together with the level count actually used.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MsSsim {
    pub value: f64,
    pub levels_used: usize,
}

/// Multi-scale structural similarity over dyadic 2x2 mean-pool scales,
/// luminance applied at the coarsest level. Symmetric in its arguments.
pub fn ms_ssim(pred: &CtImage, gt: &CtImage, cfg: &MetricConfig) -> Result<MsSsim> {
    let (h, w) = check_shapes(pred, gt, "ms_ssim")?;
    cfg.validate()?;
    // largest level count with min dim >= kernel * 2^(levels-1)
    let min_dim = h.min(w);
    let mut levels = 0usize;
    while levels < cfg.ssim_levels && min_dim >= cfg.ssim_kernel * (1 << levels) {
        levels += 1;
    }
    if levels == 0 {
        return Err(Error::invalid(format!(
            "image {h}x{w} too small for one {}-tap SSIM level",
            cfg.ssim_kernel
        )));
    }
    let weight_sum: f64 = LEVEL_WEIGHTS[..levels].iter().sum();
    let weights: Vec<f64> = LEVEL_WEIGHTS[..levels].iter().map(|w| w / weight_sum).collect();

    let c1 = (cfg.k1 * cfg.data_range).powi(2);
    let c2 = (cfg.k2 * cfg.data_range).powi(2);
    let window = gaussian_window(cfg.ssim_kernel, cfg.ssim_sigma);

    let mut a: Vec<f64> = pred.data.iter().map(|&v| v as f64).collect();
    let mut b: Vec<f64> = gt.data.iter().map(|&v| v as f64).collect();
    let (mut ch, mut cw) = (h, w);
    let mut value = 1.0f64;
    for (level, &wt) in weights.iter().enumerate() {
        let (mean_l, mean_cs) = ssim_terms(&a, &b, ch, cw, &window, c1, c2);
        if level + 1 == weights.len() {
            // luminance only at the coarsest scale
            value *= (mean_l * mean_cs).max(0.0).powf(wt);
        } else {
            value *= mean_cs.max(0.0).powf(wt);
            a = downsample2(&a, ch, cw);
            b = downsample2(&b, ch, cw);
            ch /= 2;
            cw /= 2;
        }
    }
    Ok(MsSsim {
        value,
        levels_used: levels,
    })
}

fn gaussian_window(k: usize, sigma: f64) -> Vec<f64> {
    let half = (k / 2) as f64;
    let mut w: Vec<f64> = (0..k)
        .map(|i| (-((i as f64 - half).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = w.iter().sum();
    for v in &mut w {
        *v /= sum;
    }
    w
}

/// Valid-mode separable Gaussian filtering of one image.
fn filter_valid(img: &[f64], h: usize, w: usize, window: &[f64]) -> (Vec<f64>, usize, usize) {
    let k = window.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    // horizontal pass
    let mut tmp = vec![0.0f64; h * ow];
    for r in 0..h {
        for c in 0..ow {
            let mut acc = 0.0;
            for (i, &wv) in window.iter().enumerate() {
                acc += wv * img[r * w + c + i];
            }
            tmp[r * ow + c] = acc;
        }
    }
    // vertical pass
    let mut out = vec![0.0f64; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            let mut acc = 0.0;
            for (i, &wv) in window.iter().enumerate() {
                acc += wv * tmp[(r + i) * ow + c];
            }
            out[r * ow + c] = acc;
        }
    }
    (out, oh, ow)
}

/// Mean luminance and contrast-structure terms of SSIM at one scale.
fn ssim_terms(a: &[f64], b: &[f64], h: usize, w: usize, window: &[f64], c1: f64, c2: f64) -> (f64, f64) {
    let aa: Vec<f64> = a.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = b.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    let (mu_a, oh, ow) = filter_valid(a, h, w, window);
    let (mu_b, _, _) = filter_valid(b, h, w, window);
    let (e_aa, _, _) = filter_valid(&aa, h, w, window);
    let (e_bb, _, _) = filter_valid(&bb, h, w, window);
    let (e_ab, _, _) = filter_valid(&ab, h, w, window);

    let n = (oh * ow) as f64;
    let mut sum_l = 0.0;
    let mut sum_cs = 0.0;
    for i in 0..oh * ow {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let var_a = e_aa[i] - ma * ma;
        let var_b = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        sum_l += (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
        sum_cs += (2.0 * cov + c2) / (var_a + var_b + c2);
    }
    (sum_l / n, sum_cs / n)
}

fn downsample2(img: &[f64], h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0f64; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = 0.25
                * (img[(2 * r) * w + 2 * c]
                    + img[(2 * r) * w + 2 * c + 1]
                    + img[(2 * r + 1) * w + 2 * c]
                    + img[(2 * r + 1) * w + 2 * c + 1]);
        }
    }
    out
}
