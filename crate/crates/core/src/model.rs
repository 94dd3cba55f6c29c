//! The dual-domain reconstruction model: a sinogram restoration transformer
//! (SRT), a differentiable consistency layer that maps the restored sinogram
//! through FBP, and a residual image reconstruction module (RIRM) that
//! refines the concatenated image estimates.
//!
//! With every residual exit zero-initialized the whole network is exactly
//! the FBP baseline at step 0: the restored sinogram equals the input and
//! the final image equals `fbp(input)`.

use crate::error::{Error, Result};
use crate::grad::{Tape, Tensor};
use crate::params::{xavier, zeros, ParamId, ParamStore};
use crate::swin::{PatchEmbed, PatchUnembed, ResidualBlock, StmConfig};
use crate::tomo::{fbp, fbp_adjoint, CtImage, ScanGeometry, Sinogram, SinogramKind};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

/// Sinogram-branch layout: `depth` residual blocks of `width` STMs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SrtConfig {
    pub depth: usize,
    pub width: usize,
    pub stm: StmConfig,
    pub patch_size: usize,
}

impl SrtConfig {
    /// Desk-scale default: 3 blocks of one STM, C = 32, operating on the
    /// sinogram grid directly.
    pub fn desk() -> Self {
        SrtConfig {
            depth: 3,
            width: 1,
            stm: StmConfig::new(32, 4, 4),
            patch_size: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.width == 0 || self.patch_size == 0 {
            return Err(Error::invalid("SRT depth, width, patch size must be >= 1"));
        }
        self.stm.validate()
    }
}

/// Image-branch layout: `depth` deep-feature blocks of `width` STMs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RirmConfig {
    pub depth: usize,
    pub width: usize,
    pub stm: StmConfig,
    pub patch_size: usize,
}

impl RirmConfig {
    /// Desk-scale default: 2 blocks of 4 STMs on a 2x-patchified image grid.
    pub fn desk() -> Self {
        RirmConfig {
            depth: 2,
            width: 4,
            stm: StmConfig::new(32, 4, 4),
            patch_size: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.width == 0 || self.patch_size == 0 {
            return Err(Error::invalid("RIRM depth, width, patch size must be >= 1"));
        }
        self.stm.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelVariant {
    /// Full dual-domain model: SRT + consistency layer + RIRM.
    DuDoTrans,
    /// Image-domain ablation: RIRM alone on the FBP image.
    ImgTrans,
}

/// Everything needed to rebuild a model deterministically.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: ModelVariant,
    pub srt: Option<SrtConfig>,
    pub rirm: RirmConfig,
    pub lambda1: f64,
    pub lambda2: f64,
    pub init_seed: u64,
}

impl ModelConfig {
    pub fn desk_dudotrans(seed: u64) -> Self {
        ModelConfig {
            variant: ModelVariant::DuDoTrans,
            srt: Some(SrtConfig::desk()),
            rirm: RirmConfig::desk(),
            lambda1: 1.0,
            lambda2: 1.0,
            init_seed: seed,
        }
    }

    pub fn desk_imgtrans(seed: u64) -> Self {
        ModelConfig {
            variant: ModelVariant::ImgTrans,
            srt: None,
            rirm: RirmConfig::desk(),
            lambda1: 1.0,
            lambda2: 1.0,
            init_seed: seed,
        }
    }

    /// Reduced size for smoke tests: C = 16, SRT (3, 1), RIRM (2, 2).
    pub fn tiny_dudotrans(seed: u64) -> Self {
        let stm = StmConfig::new(16, 4, 4);
        ModelConfig {
            variant: ModelVariant::DuDoTrans,
            srt: Some(SrtConfig {
                depth: 3,
                width: 1,
                stm,
                patch_size: 1,
            }),
            rirm: RirmConfig {
                depth: 2,
                width: 2,
                stm,
                patch_size: 2,
            },
            lambda1: 1.0,
            lambda2: 1.0,
            init_seed: seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (self.variant, &self.srt) {
            (ModelVariant::DuDoTrans, Some(srt)) => srt.validate()?,
            (ModelVariant::DuDoTrans, None) => {
                return Err(Error::invalid("dudotrans variant needs an SRT config"))
            }
            (ModelVariant::ImgTrans, Some(_)) => {
                return Err(Error::invalid("imgtrans variant must not carry an SRT config"))
            }
            (ModelVariant::ImgTrans, None) => {}
        }
        self.rirm.validate()?;
        if self.lambda1 < 0.0 || self.lambda2 < 0.0 {
            return Err(Error::invalid("loss weights must be non-negative"));
        }
        Ok(())
    }
}

/// Sinogram restoration trunk: first conv, optional patchify, residual
/// blocks, then the skip-and-project exit back to sinogram space.
struct SrtModule {
    cfg: SrtConfig,
    first_w: ParamId,
    first_b: ParamId,
    embed: Option<PatchEmbed<f32>>,
    unembed: Option<PatchUnembed<f32>>,
    blocks: Vec<ResidualBlock<f32>>,
    mid_w: ParamId,
    mid_b: ParamId,
    last_w: ParamId,
    last_b: ParamId,
}

impl SrtModule {
    fn init<R: Rng>(store: &mut ParamStore<f32>, cfg: SrtConfig, rng: &mut R) -> Result<Self> {
        let c = cfg.stm.embed_dim;
        let first_w = store.add("srt.first.w", vec![c, 1, 3, 3], xavier(rng, c * 9, 9, c))?;
        let first_b = store.add("srt.first.b", vec![c], zeros(c))?;
        let (embed, unembed) = if cfg.patch_size > 1 {
            (
                Some(PatchEmbed::init(store, "srt.embed", c, c, cfg.patch_size, rng)?),
                Some(PatchUnembed::init(store, "srt.unembed", c, c, cfg.patch_size, rng)?),
            )
        } else {
            (None, None)
        };
        let mut blocks = Vec::with_capacity(cfg.depth);
        for i in 0..cfg.depth {
            blocks.push(ResidualBlock::init(
                store,
                &format!("srt.block{i}"),
                cfg.width,
                cfg.stm,
                i * cfg.width,
                rng,
            )?);
        }
        let mid_w = store.add("srt.mid.w", vec![c, c, 3, 3], xavier(rng, c * c * 9, c * 9, c))?;
        let mid_b = store.add("srt.mid.b", vec![c], zeros(c))?;
        // residual exit back to one channel: zero so the SRT starts as identity
        let last_w = store.add("srt.last.w", vec![1, c, 3, 3], zeros(c * 9))?;
        let last_b = store.add("srt.last.b", vec![1], zeros(1))?;
        Ok(SrtModule {
            cfg,
            first_w,
            first_b,
            embed,
            unembed,
            blocks,
            mid_w,
            mid_b,
            last_w,
            last_b,
        })
    }

    /// `y + conv(conv(trunk) + first_features)`, all in `[1, 1, H, W]`.
    fn forward(&self, tape: &mut Tape<f32>, store: &ParamStore<f32>, y: &Tensor<f32>) -> Result<Tensor<f32>> {
        let &[_, _, h, w] = y.shape() else {
            return Err(Error::shape("srt_forward", format!("needs NCHW, got {:?}", y.shape())));
        };
        let fw = store.leaf(tape, self.first_w);
        let fb = store.leaf(tape, self.first_b);
        let features = tape.conv2d(y, &fw, &fb)?;
        let f0 = match &self.embed {
            Some(e) => e.forward(tape, store, &features)?,
            None => features,
        };
        let mut x = f0.clone();
        for block in &self.blocks {
            x = block.forward(tape, store, &x)?;
        }
        let mw = store.leaf(tape, self.mid_w);
        let mb = store.leaf(tape, self.mid_b);
        let mixed = tape.conv2d(&x, &mw, &mb)?;
        let skip = tape.add(&mixed, &f0)?;
        let restored = match &self.unembed {
            Some(u) => u.forward(tape, store, &skip, (h, w))?,
            None => skip,
        };
        let lw = store.leaf(tape, self.last_w);
        let lb = store.leaf(tape, self.last_b);
        let delta = tape.conv2d(&restored, &lw, &lb)?;
        tape.add(&delta, y)
    }
}

/// Image refinement trunk: shallow conv over the stacked estimates, optional
/// patchify, deep residual blocks, then the zero-init reconstruction exit
/// anchored on the FBP image.
struct RirmModule {
    cfg: RirmConfig,
    in_channels: usize,
    sl_w: ParamId,
    sl_b: ParamId,
    embed: Option<PatchEmbed<f32>>,
    unembed: Option<PatchUnembed<f32>>,
    blocks: Vec<ResidualBlock<f32>>,
    recon_w: ParamId,
    recon_b: ParamId,
}

impl RirmModule {
    fn init<R: Rng>(
        store: &mut ParamStore<f32>,
        cfg: RirmConfig,
        in_channels: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let c = cfg.stm.embed_dim;
        let fan_in = in_channels * 9;
        let sl_w = store.add(
            "rirm.sl.w",
            vec![c, in_channels, 3, 3],
            xavier(rng, c * fan_in, fan_in, c),
        )?;
        let sl_b = store.add("rirm.sl.b", vec![c], zeros(c))?;
        let (embed, unembed) = if cfg.patch_size > 1 {
            (
                Some(PatchEmbed::init(store, "rirm.embed", c, c, cfg.patch_size, rng)?),
                Some(PatchUnembed::init(store, "rirm.unembed", c, c, cfg.patch_size, rng)?),
            )
        } else {
            (None, None)
        };
        let mut blocks = Vec::with_capacity(cfg.depth);
        for i in 0..cfg.depth {
            blocks.push(ResidualBlock::init(
                store,
                &format!("rirm.df{i}"),
                cfg.width,
                cfg.stm,
                i * cfg.width,
                rng,
            )?);
        }
        // residual exit: zero so the module reproduces the FBP image at init
        let recon_w = store.add("rirm.recon.w", vec![1, c, 3, 3], zeros(c * 9))?;
        let recon_b = store.add("rirm.recon.b", vec![1], zeros(1))?;
        Ok(RirmModule {
            cfg,
            in_channels,
            sl_w,
            sl_b,
            embed,
            unembed,
            blocks,
            recon_w,
            recon_b,
        })
    }

    fn forward(
        &self,
        tape: &mut Tape<f32>,
        store: &ParamStore<f32>,
        x_fbp: &Tensor<f32>,
        x_consistency: Option<&Tensor<f32>>,
    ) -> Result<Tensor<f32>> {
        let &[_, _, h, w] = x_fbp.shape() else {
            return Err(Error::shape("rirm_forward", format!("needs NCHW, got {:?}", x_fbp.shape())));
        };
        let input = match x_consistency {
            Some(x2) => {
                if x2.shape() != x_fbp.shape() {
                    return Err(Error::shape(
                        "rirm_forward",
                        format!("estimates disagree: {:?} vs {:?}", x_fbp.shape(), x2.shape()),
                    ));
                }
                tape.concat(&[x_fbp, x2], 1)?
            }
            None => x_fbp.clone(),
        };
        if input.shape()[1] != self.in_channels {
            return Err(Error::shape(
                "rirm_forward",
                format!("expected {} input channels, got {}", self.in_channels, input.shape()[1]),
            ));
        }
        let sw = store.leaf(tape, self.sl_w);
        let sb = store.leaf(tape, self.sl_b);
        let shallow = tape.conv2d(&input, &sw, &sb)?;
        let mut x = match &self.embed {
            Some(e) => e.forward(tape, store, &shallow)?,
            None => shallow,
        };
        for block in &self.blocks {
            x = block.forward(tape, store, &x)?;
        }
        let x = match &self.unembed {
            Some(u) => u.forward(tape, store, &x, (h, w))?,
            None => x,
        };
        let rw = store.leaf(tape, self.recon_w);
        let rb = store.leaf(tape, self.recon_b);
        let residual = tape.conv2d(&x, &rw, &rb)?;
        tape.add(&residual, x_fbp)
    }
}

/// Full dual-domain model: parameters, configuration, and scanner binding.
pub struct DuDoTransModel {
    pub config: ModelConfig,
    pub geometry: ScanGeometry,
    pub store: ParamStore<f32>,
    srt: Option<SrtModule>,
    rirm: RirmModule,
}

/// Intermediate results of one forward pass.
pub struct ModelOutput {
    /// Restored sinogram (dual-domain variant only).
    pub y_restored: Option<Tensor<f32>>,
    /// Consistency-layer image estimate (dual-domain variant only).
    pub x_consistency: Option<Tensor<f32>>,
    /// Final reconstruction.
    pub x_final: Tensor<f32>,
    /// The detached FBP baseline the residual path is anchored on.
    pub x_fbp: CtImage,
}

/// Per-term loss values alongside the differentiable total.
pub struct LossBundle {
    pub total: Tensor<f32>,
    pub srt_term: f64,
    pub dc_term: f64,
    pub rirm_term: f64,
}

impl DuDoTransModel {
    pub fn init(config: ModelConfig, geometry: ScanGeometry) -> Result<Self> {
        config.validate()?;
        geometry.validate()?;
        let mut rng = ChaCha12Rng::seed_from_u64(config.init_seed);
        let mut store = ParamStore::new();
        let srt = match (&config.variant, config.srt) {
            (ModelVariant::DuDoTrans, Some(cfg)) => Some(SrtModule::init(&mut store, cfg, &mut rng)?),
            _ => None,
        };
        let in_channels = if srt.is_some() { 2 } else { 1 };
        let rirm = RirmModule::init(&mut store, config.rirm, in_channels, &mut rng)?;
        Ok(DuDoTransModel {
            config,
            geometry,
            store,
            srt,
            rirm,
        })
    }

    /// Exact count of trainable scalars.
    pub fn count_parameters(&self) -> usize {
        self.store.total_parameters()
    }

    pub fn variant(&self) -> ModelVariant {
        self.config.variant
    }

    /// Restore a sinogram: `[1, 1, views, detectors] -> same shape`.
    pub fn srt_forward(&self, tape: &mut Tape<f32>, y: &Tensor<f32>) -> Result<Tensor<f32>> {
        let srt = self
            .srt
            .as_ref()
            .ok_or_else(|| Error::invalid("this variant has no sinogram branch"))?;
        srt.forward(tape, &self.store, y)
    }

    /// Refine the image estimates: anchored residual on the FBP input.
    pub fn rirm_forward(
        &self,
        tape: &mut Tape<f32>,
        x_fbp: &Tensor<f32>,
        x_consistency: Option<&Tensor<f32>>,
    ) -> Result<Tensor<f32>> {
        self.rirm.forward(tape, &self.store, x_fbp, x_consistency)
    }

    /// One full forward pass from a measured fan sinogram.
    pub fn forward(&self, tape: &mut Tape<f32>, y_noisy: &Sinogram) -> Result<ModelOutput> {
        y_noisy.expect_kind(SinogramKind::Fan, "model forward")?;
        if !y_noisy.geometry.same_scanner(&self.geometry) {
            return Err(Error::invalid(
                "sinogram geometry does not match the scanner this model was built for",
            ));
        }
        let geom = &y_noisy.geometry;
        let x_fbp = fbp(y_noisy, geom)?;
        // constant input: the raw-FBP branch carries no gradient
        let x1 = image_tensor(&x_fbp);

        match self.variant() {
            ModelVariant::DuDoTrans => {
                let y = sinogram_tensor(y_noisy);
                let y_restored = self.srt_forward(tape, &y)?;
                let x2 = dudo_consistency(tape, &y_restored, geom)?;
                let x_final = self.rirm_forward(tape, &x1, Some(&x2))?;
                Ok(ModelOutput {
                    y_restored: Some(y_restored),
                    x_consistency: Some(x2),
                    x_final,
                    x_fbp,
                })
            }
            ModelVariant::ImgTrans => {
                let x_final = self.rirm_forward(tape, &x1, None)?;
                Ok(ModelOutput {
                    y_restored: None,
                    x_consistency: None,
                    x_final,
                    x_fbp,
                })
            }
        }
    }

    /// Total training objective for one item; per-term values are reported
    /// for logging.
    pub fn loss(
        &self,
        tape: &mut Tape<f32>,
        output: &ModelOutput,
        y_gt: &Sinogram,
        x_gt: &CtImage,
    ) -> Result<LossBundle> {
        total_loss(
            tape,
            output.y_restored.as_ref(),
            output.x_consistency.as_ref(),
            &output.x_final,
            &sinogram_tensor(y_gt),
            &image_tensor(x_gt),
            self.config.lambda1,
            self.config.lambda2,
        )
    }
}

/// Differentiable consistency layer: FBP on the forward pass, its exact
/// adjoint on the backward pass. Linear, so the tape rule is the transpose.
pub fn dudo_consistency(
    tape: &mut Tape<f32>,
    y: &Tensor<f32>,
    geom: &ScanGeometry,
) -> Result<Tensor<f32>> {
    let (rows, cols) = (geom.num_views, geom.num_detectors);
    if y.numel() != rows * cols {
        return Err(Error::shape(
            "dudo_consistency",
            format!("sinogram tensor {:?} does not match {rows}x{cols}", y.shape()),
        ));
    }
    let sino = Sinogram::unchecked(y.data().to_vec(), geom.clone(), SinogramKind::Fan);
    let image = fbp(&sino, geom)?;
    let (h, w) = geom.image_size;
    let out = Tensor::from_vec(vec![1, 1, h, w], image.data)?;
    let Some(ny) = y.node() else { return Ok(out) };
    let geom = geom.clone();
    let node = tape.record(move |g, store| {
        let cotangent = CtImage {
            data: g.to_vec(),
            geometry: geom.clone(),
        };
        let back = fbp_adjoint(&cotangent, &geom).expect("adjoint of a valid cotangent");
        store.accumulate(ny, back.data);
    });
    Ok(out.with_node(node))
}

/// `L = L_SRT + lambda1 * L_DC + lambda2 * L_RIRM`, each term a mean squared
/// error; absent branches contribute zero.
#[allow(clippy::too_many_arguments)]
pub fn total_loss(
    tape: &mut Tape<f32>,
    y_restored: Option<&Tensor<f32>>,
    x_consistency: Option<&Tensor<f32>>,
    x_final: &Tensor<f32>,
    y_gt: &Tensor<f32>,
    x_gt: &Tensor<f32>,
    lambda1: f64,
    lambda2: f64,
) -> Result<LossBundle> {
    if x_final.shape() != x_gt.shape() {
        return Err(Error::shape(
            "total_loss",
            format!("prediction {:?} vs target {:?}", x_final.shape(), x_gt.shape()),
        ));
    }
    let l_rirm = tape.mse(x_final, x_gt)?;
    let rirm_term = l_rirm.data()[0] as f64;
    let mut total = tape.scale(&l_rirm, lambda2)?;
    let mut srt_term = 0.0;
    if let Some(y_hat) = y_restored {
        if y_hat.shape() != y_gt.shape() {
            return Err(Error::shape(
                "total_loss",
                format!("restored {:?} vs target {:?}", y_hat.shape(), y_gt.shape()),
            ));
        }
        let l_srt = tape.mse(y_hat, y_gt)?;
        srt_term = l_srt.data()[0] as f64;
        total = tape.add(&total, &l_srt)?;
    }
    let mut dc_term = 0.0;
    if let Some(x2) = x_consistency {
        let l_dc = tape.mse(x2, x_gt)?;
        dc_term = l_dc.data()[0] as f64;
        let weighted = tape.scale(&l_dc, lambda1)?;
        total = tape.add(&total, &weighted)?;
    }
    Ok(LossBundle {
        total,
        srt_term,
        dc_term,
        rirm_term,
    })
}

pub fn sinogram_tensor(s: &Sinogram) -> Tensor<f32> {
    Tensor::from_vec(vec![1, 1, s.rows, s.cols], s.data.clone()).expect("sinogram is rectangular")
}

pub fn image_tensor(img: &CtImage) -> Tensor<f32> {
    let (h, w) = img.geometry.image_size;
    Tensor::from_vec(vec![1, 1, h, w], img.data.clone()).expect("image is rectangular")
}

/// Copy a `[1, 1, H, W]` tensor back into an image bound to `geom`.
pub fn tensor_image(t: &Tensor<f32>, geom: &ScanGeometry) -> Result<CtImage> {
    let (h, w) = geom.image_size;
    if t.numel() != h * w {
        return Err(Error::shape(
            "tensor_image",
            format!("{:?} does not hold {h}x{w} samples", t.shape()),
        ));
    }
    CtImage::from_data(t.data().to_vec(), geom.clone())
}

/// Copy a `[1, 1, V, D]` tensor back into a fan sinogram bound to `geom`.
pub fn tensor_sinogram(t: &Tensor<f32>, geom: &ScanGeometry) -> Result<Sinogram> {
    Sinogram::fan(t.data().to_vec(), geom.clone())
}
