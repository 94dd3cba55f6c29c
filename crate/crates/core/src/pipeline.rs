//! End-to-end orchestration shared by the CLI and the acceptance suite:
//! phantom batches, dataset loading, reconstruction, evaluation, and the
//! ablation table.

use crate::error::{Error, Result};
use crate::grad::Tape;
use crate::io;
use crate::metrics::{ms_ssim, psnr, rmse, MetricConfig};
use crate::model::{tensor_image, DuDoTransModel, ModelConfig, ModelVariant};
use crate::simulate::{DatasetManifest, Split};
use crate::tomo::{fbp, CtImage, PhantomSpec, ScanGeometry, Sinogram};
use crate::train::{train_loop, TrainConfig, TrainItem, TrainReport};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use std::io::Write;
use std::path::Path;

/// `count` phantoms: the canonical head phantom first, then jittered
/// variants (every ellipse parameter perturbed up to 10%).
pub fn phantom_batch(count: usize, seed: u64) -> Vec<PhantomSpec> {
    let base = PhantomSpec::shepp_logan();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            if i == 0 {
                base.clone()
            } else {
                base.jittered(&mut rng, 0.1)
            }
        })
        .collect()
}

/// Materialize one split of a dataset into memory.
pub fn load_split(manifest: &DatasetManifest, dir: &Path, split: Split) -> Result<Vec<TrainItem>> {
    manifest
        .split(split)
        .map(|e| {
            Ok(TrainItem {
                phantom: io::read_image(&dir.join(&e.phantom))?,
                clean: io::read_sinogram(&dir.join(&e.clean_sino))?,
                noisy: io::read_sinogram(&dir.join(&e.noisy_sino))?,
            })
        })
        .collect()
}

/// Reconstruction methods selectable from the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReconMethod {
    Fbp,
    ImgTrans,
    DuDoTrans,
}

impl ReconMethod {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "fbp" => Ok(ReconMethod::Fbp),
            "imgtrans" => Ok(ReconMethod::ImgTrans),
            "dudotrans" => Ok(ReconMethod::DuDoTrans),
            other => Err(Error::invalid(format!(
                "unknown method {other}; expected fbp, imgtrans, or dudotrans"
            ))),
        }
    }

    pub fn variant(self) -> Option<ModelVariant> {
        match self {
            ReconMethod::Fbp => None,
            ReconMethod::ImgTrans => Some(ModelVariant::ImgTrans),
            ReconMethod::DuDoTrans => Some(ModelVariant::DuDoTrans),
        }
    }
}

/// Reconstruct one sinogram with an optional trained model (`None` = plain
/// FBP).
pub fn reconstruct(model: Option<&DuDoTransModel>, sino: &Sinogram) -> Result<CtImage> {
    match model {
        None => fbp(sino, &sino.geometry),
        Some(m) => {
            let mut tape = Tape::new();
            let out = m.forward(&mut tape, sino)?;
            tensor_image(&out.x_final, &sino.geometry)
        }
    }
}

/// One evaluation row of the metric report.
#[derive(Debug, Clone)]
pub struct MetricRow {
    pub file: String,
    pub psnr: f64,
    pub ms_ssim: f64,
    pub ssim_levels_used: usize,
    pub rmse: f64,
}

/// Compare predictions against ground truths pairwise.
pub fn evaluate_pairs(
    pairs: &[(String, CtImage, CtImage)],
    cfg: &MetricConfig,
) -> Result<Vec<MetricRow>> {
    pairs
        .iter()
        .map(|(name, pred, gt)| {
            let s = ms_ssim(pred, gt, cfg)?;
            Ok(MetricRow {
                file: name.clone(),
                psnr: psnr(pred, gt, cfg)?,
                ms_ssim: s.value,
                ssim_levels_used: s.levels_used,
                rmse: rmse(pred, gt)?,
            })
        })
        .collect()
}

/// Arithmetic mean over rows, labeled `mean`.
pub fn mean_row(rows: &[MetricRow]) -> MetricRow {
    let n = rows.len().max(1) as f64;
    MetricRow {
        file: "mean".into(),
        psnr: rows.iter().map(|r| r.psnr).sum::<f64>() / n,
        ms_ssim: rows.iter().map(|r| r.ms_ssim).sum::<f64>() / n,
        ssim_levels_used: rows.first().map(|r| r.ssim_levels_used).unwrap_or(0),
        rmse: rows.iter().map(|r| r.rmse).sum::<f64>() / n,
    }
}

/// Write the metric report CSV (per-file rows plus the mean row).
pub fn write_metric_report(path: &Path, rows: &[MetricRow]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    writeln!(f, "file,psnr,ms_ssim,ssim_levels_used,rmse").map_err(|e| Error::io(path, e))?;
    for r in rows.iter().chain(std::iter::once(&mean_row(rows))) {
        writeln!(
            f,
            "{},{},{},{},{}",
            r.file, r.psnr, r.ms_ssim, r.ssim_levels_used, r.rmse
        )
        .map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Evaluate a reconstruction method over dataset items.
pub fn evaluate_method(
    model: Option<&DuDoTransModel>,
    items: &[TrainItem],
    cfg: &MetricConfig,
) -> Result<Vec<MetricRow>> {
    let pairs: Vec<(String, CtImage, CtImage)> = items
        .iter()
        .enumerate()
        .map(|(i, item)| {
            Ok((
                format!("item_{i:03}"),
                reconstruct(model, &item.noisy)?,
                item.phantom.clone(),
            ))
        })
        .collect::<Result<_>>()?;
    evaluate_pairs(&pairs, cfg)
}

/// One ablation table row.
#[derive(Debug, Clone)]
pub struct AblationRow {
    pub variant: String,
    pub psnr: f64,
    pub ms_ssim: f64,
    pub rmse: f64,
    pub param_count: usize,
}

/// Train a model variant on the train split and return it with its report.
pub fn train_variant(
    variant: ModelVariant,
    base_config: &ModelConfig,
    geometry: &ScanGeometry,
    train_items: &[TrainItem],
    cfg: &TrainConfig,
    out_dir: &Path,
) -> Result<(DuDoTransModel, TrainReport)> {
    let mut config = base_config.clone();
    config.variant = variant;
    if variant == ModelVariant::ImgTrans {
        config.srt = None;
    }
    let mut model = DuDoTransModel::init(config, geometry.clone())?;
    let report = train_loop(&mut model, train_items, cfg, out_dir)?;
    Ok((model, report))
}

/// Run the requested variants under identical seed and budget and evaluate
/// each on the test split.
pub fn ablate(
    methods: &[ReconMethod],
    base_config: &ModelConfig,
    geometry: &ScanGeometry,
    train_items: &[TrainItem],
    test_items: &[TrainItem],
    train_cfg: &TrainConfig,
    metric_cfg: &MetricConfig,
    out_dir: &Path,
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for method in methods {
        let (model, label) = match method {
            ReconMethod::Fbp => (None, "fbp"),
            ReconMethod::ImgTrans => {
                let (m, _) = train_variant(
                    ModelVariant::ImgTrans,
                    base_config,
                    geometry,
                    train_items,
                    train_cfg,
                    &out_dir.join("imgtrans"),
                )?;
                (Some(m), "imgtrans")
            }
            ReconMethod::DuDoTrans => {
                let (m, _) = train_variant(
                    ModelVariant::DuDoTrans,
                    base_config,
                    geometry,
                    train_items,
                    train_cfg,
                    &out_dir.join("dudotrans"),
                )?;
                (Some(m), "dudotrans")
            }
        };
        let metrics = evaluate_method(model.as_ref(), test_items, metric_cfg)?;
        let mean = mean_row(&metrics);
        rows.push(AblationRow {
            variant: label.into(),
            psnr: mean.psnr,
            ms_ssim: mean.ms_ssim,
            rmse: mean.rmse,
            param_count: model.as_ref().map(|m| m.count_parameters()).unwrap_or(0),
        });
    }
    Ok(rows)
}

/// Write the ablation table CSV.
pub fn write_ablation_table(path: &Path, rows: &[AblationRow]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    writeln!(f, "variant,psnr,ms_ssim,rmse,param_count").map_err(|e| Error::io(path, e))?;
    for r in rows {
        writeln!(f, "{},{},{},{},{}", r.variant, r.psnr, r.ms_ssim, r.rmse, r.param_count)
            .map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}
