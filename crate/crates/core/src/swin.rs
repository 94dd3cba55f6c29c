//! Shifted-window attention blocks: windowed multi-head self-attention with
//! relative position bias, the Swin-style transformer module (attention +
//! MLP with pre-norm residuals), the residual block that wraps a run of
//! modules with a convolution, and patch embed/unembed.
//!
//! Every residual exit (attention output projection, second MLP layer,
//! residual-block convolution) is zero-initialized, so a freshly built stack
//! computes the identity map. Inputs whose spatial size is not a window
//! multiple are reflection-padded and cropped back.

use crate::error::{Error, Result};
use crate::grad::{Scalar, Tape, Tensor};
use crate::params::{xavier, zeros, ParamId, ParamStore};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

const MASK_NEG: f64 = -1e9;

/// Shape of one Swin transformer module.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StmConfig {
    /// Embedding width C.
    pub embed_dim: usize,
    /// Attention heads; must divide `embed_dim`.
    pub num_heads: usize,
    /// Window side length w.
    pub window_size: usize,
    /// Cyclic pre-shift: 0 or w/2. Stacks alternate between the two.
    pub shift: usize,
    /// MLP hidden width as a multiple of C.
    pub mlp_ratio: f64,
}

impl StmConfig {
    pub fn new(embed_dim: usize, num_heads: usize, window_size: usize) -> Self {
        StmConfig {
            embed_dim,
            num_heads,
            window_size,
            shift: 0,
            mlp_ratio: 2.0,
        }
    }

    pub fn with_shift(mut self, shift: usize) -> Self {
        self.shift = shift;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.num_heads == 0 || self.embed_dim % self.num_heads != 0 {
            return Err(Error::invalid(format!(
                "embed_dim {} must be a positive multiple of num_heads {}",
                self.embed_dim, self.num_heads
            )));
        }
        if self.window_size == 0 || self.shift >= self.window_size {
            return Err(Error::invalid(format!(
                "shift {} must be smaller than window {}",
                self.shift, self.window_size
            )));
        }
        if self.mlp_ratio <= 0.0 {
            return Err(Error::invalid("mlp_ratio must be positive"));
        }
        Ok(())
    }
}

/// Relative-offset index map for a w x w window: entry (i, j) addresses the
/// bias-table row for the offset between tokens i and j.
fn relative_index(win: usize) -> Vec<usize> {
    let n = win * win;
    let span = 2 * win - 1;
    let mut idx = Vec::with_capacity(n * n);
    for i in 0..n {
        let (ih, iw) = (i / win, i % win);
        for j in 0..n {
            let (jh, jw) = (j / win, j % win);
            let dh = ih + win - 1 - jh;
            let dw = iw + win - 1 - jw;
            idx.push(dh * span + dw);
        }
    }
    idx
}

/// Attention mask for shifted windows on an `h x w` grid: token pairs that
/// originate from different pre-roll regions get a large negative score.
/// Returned as a constant `[windows_per_image, heads, N, N]` tensor.
fn shift_mask<T: Scalar>(h: usize, w: usize, win: usize, shift: usize, heads: usize) -> Tensor<T> {
    let mut labels = vec![0u8; h * w];
    let bounds = |dim: usize| [0, dim - win, dim - shift, dim];
    let hb = bounds(h);
    let wb = bounds(w);
    let mut region = 0u8;
    for hs in 0..3 {
        for ws in 0..3 {
            for r in hb[hs]..hb[hs + 1] {
                for c in wb[ws]..wb[ws + 1] {
                    labels[r * w + c] = region;
                }
            }
            region += 1;
        }
    }
    // labels move with the cyclic roll before windowing
    let (nh, nw) = (h / win, w / win);
    let n = win * win;
    let neg = T::from_f64(MASK_NEG);
    let mut data = vec![T::ZERO; nh * nw * heads * n * n];
    let rolled = |r: usize, c: usize| labels[((r + shift) % h) * w + (c + shift) % w];
    for wh in 0..nh {
        for ww in 0..nw {
            let widx = wh * nw + ww;
            let mut window_labels = Vec::with_capacity(n);
            for ih in 0..win {
                for iw in 0..win {
                    window_labels.push(rolled(wh * win + ih, ww * win + iw));
                }
            }
            for i in 0..n {
                for j in 0..n {
                    if window_labels[i] != window_labels[j] {
                        for head in 0..heads {
                            data[((widx * heads + head) * n + i) * n + j] = neg;
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(vec![nh * nw, heads, n, n], data).expect("mask shape is consistent")
}

/// Windowed multi-head self-attention with relative position bias.
pub struct WindowAttention<T: Scalar> {
    pub cfg: StmConfig,
    qkv_w: ParamId,
    qkv_b: ParamId,
    proj_w: ParamId,
    proj_b: ParamId,
    bias_table: ParamId,
    rel_index: Arc<Vec<usize>>,
    _marker: std::marker::PhantomData<T>,
}

impl<T: Scalar> WindowAttention<T> {
    pub fn init<R: Rng>(
        store: &mut ParamStore<T>,
        prefix: &str,
        cfg: StmConfig,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.embed_dim;
        let span = 2 * cfg.window_size - 1;
        let qkv_w = store.add(
            format!("{prefix}.qkv.w"),
            vec![c, 3 * c],
            xavier(rng, c * 3 * c, c, 3 * c),
        )?;
        let qkv_b = store.add(format!("{prefix}.qkv.b"), vec![3 * c], zeros(3 * c))?;
        // residual exit: zero so attention contributes nothing at init
        let proj_w = store.add(format!("{prefix}.proj.w"), vec![c, c], zeros(c * c))?;
        let proj_b = store.add(format!("{prefix}.proj.b"), vec![c], zeros(c))?;
        let bias_table = store.add(
            format!("{prefix}.rel_bias"),
            vec![span * span, cfg.num_heads],
            zeros(span * span * cfg.num_heads),
        )?;
        Ok(WindowAttention {
            cfg,
            qkv_w,
            qkv_b,
            proj_w,
            proj_b,
            bias_table,
            rel_index: Arc::new(relative_index(cfg.window_size)),
            _marker: std::marker::PhantomData,
        })
    }

    /// Shift, window, attend, and stitch back: `[B, H, W, C] -> [B, H, W, C]`.
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: &Tensor<T>,
    ) -> Result<Tensor<T>> {
        let &[b, h, w, c] = x.shape() else {
            return Err(Error::shape(
                "window_msa",
                format!("needs [B,H,W,C], got {:?}", x.shape()),
            ));
        };
        let cfg = &self.cfg;
        if c != cfg.embed_dim {
            return Err(Error::shape(
                "window_msa",
                format!("channels {c} != embed_dim {}", cfg.embed_dim),
            ));
        }
        let win = cfg.window_size;
        let heads = cfg.num_heads;
        let d = c / heads;
        let n = win * win;

        // pad to window multiples, remembering the crop
        let ph = h.div_ceil(win) * win;
        let pw = w.div_ceil(win) * win;
        let padded = tape.pad_reflect(x, ph, pw)?;
        let shifted = if cfg.shift > 0 {
            tape.roll2d(&padded, -(cfg.shift as isize), -(cfg.shift as isize))?
        } else {
            padded
        };
        let windows = tape.window_partition(&shifted, win)?; // [B*nw, N, C]
        let nw_total = windows.shape()[0];
        let nw_per_image = nw_total / b;

        let qkv_w = store.leaf(tape, self.qkv_w);
        let qkv_b = store.leaf(tape, self.qkv_b);
        let qkv = tape.matmul(&windows, &qkv_w)?;
        let qkv = tape.add(&qkv, &qkv_b)?; // [B*nw, N, 3C]

        let mut split = |tape: &mut Tape<T>, start: usize| -> Result<Tensor<T>> {
            let part = tape.narrow(&qkv, 2, start, c)?;
            let part = part.reshape(vec![nw_total, n, heads, d])?;
            tape.permute(&part, &[0, 2, 1, 3]) // [B*nw, heads, N, d]
        };
        let q = split(tape, 0)?;
        let k = split(tape, c)?;
        let v = split(tape, 2 * c)?;

        let kt = tape.permute(&k, &[0, 1, 3, 2])?; // [B*nw, heads, d, N]
        let scores = tape.matmul(&q, &kt)?;
        let scores = tape.scale(&scores, 1.0 / (d as f64).sqrt())?; // [B*nw, heads, N, N]

        // relative position bias, broadcast over windows
        let table = store.leaf(tape, self.bias_table);
        let bias = tape.index_select_rows(&table, &self.rel_index)?; // [N*N, heads]
        let bias = bias.reshape(vec![n, n, heads])?;
        let bias = tape.permute(&bias, &[2, 0, 1])?; // [heads, N, N]
        let scores = tape.add(&scores, &bias)?;

        let scores = if cfg.shift > 0 {
            // tokens from different pre-roll regions must not attend
            let mask = shift_mask::<T>(ph, pw, win, cfg.shift, heads);
            let grouped = scores.reshape(vec![b, nw_per_image, heads, n, n])?;
            let masked = tape.add(&grouped, &mask)?;
            masked.reshape(vec![nw_total, heads, n, n])?
        } else {
            scores
        };

        let attn = tape.softmax(&scores)?;
        let ctx = tape.matmul(&attn, &v)?; // [B*nw, heads, N, d]
        let ctx = tape.permute(&ctx, &[0, 2, 1, 3])?; // [B*nw, N, heads, d]
        let ctx = ctx.reshape(vec![nw_total, n, c])?;

        let proj_w = store.leaf(tape, self.proj_w);
        let proj_b = store.leaf(tape, self.proj_b);
        let out = tape.matmul(&ctx, &proj_w)?;
        let out = tape.add(&out, &proj_b)?;

        let stitched = tape.window_reverse(&out, win, ph, pw)?;
        let unshifted = if cfg.shift > 0 {
            tape.roll2d(&stitched, cfg.shift as isize, cfg.shift as isize)?
        } else {
            stitched
        };
        tape.crop(&unshifted, h, w)
    }
}

/// One Swin transformer module: pre-norm attention and MLP, both residual.
pub struct Stm<T: Scalar> {
    pub attn: WindowAttention<T>,
    norm1_g: ParamId,
    norm1_b: ParamId,
    norm2_g: ParamId,
    norm2_b: ParamId,
    fc1_w: ParamId,
    fc1_b: ParamId,
    fc2_w: ParamId,
    fc2_b: ParamId,
}

impl<T: Scalar> Stm<T> {
    pub fn init<R: Rng>(
        store: &mut ParamStore<T>,
        prefix: &str,
        cfg: StmConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let c = cfg.embed_dim;
        let hidden = (cfg.mlp_ratio * c as f64).round() as usize;
        let ones = vec![T::ONE; c];
        let norm1_g = store.add(format!("{prefix}.norm1.g"), vec![c], ones.clone())?;
        let norm1_b = store.add(format!("{prefix}.norm1.b"), vec![c], zeros(c))?;
        let attn = WindowAttention::init(store, &format!("{prefix}.attn"), cfg, rng)?;
        let norm2_g = store.add(format!("{prefix}.norm2.g"), vec![c], ones)?;
        let norm2_b = store.add(format!("{prefix}.norm2.b"), vec![c], zeros(c))?;
        let fc1_w = store.add(
            format!("{prefix}.mlp.fc1.w"),
            vec![c, hidden],
            xavier(rng, c * hidden, c, hidden),
        )?;
        let fc1_b = store.add(format!("{prefix}.mlp.fc1.b"), vec![hidden], zeros(hidden))?;
        // residual exit: zero so the MLP contributes nothing at init
        let fc2_w = store.add(format!("{prefix}.mlp.fc2.w"), vec![hidden, c], zeros(hidden * c))?;
        let fc2_b = store.add(format!("{prefix}.mlp.fc2.b"), vec![c], zeros(c))?;
        Ok(Stm {
            attn,
            norm1_g,
            norm1_b,
            norm2_g,
            norm2_b,
            fc1_w,
            fc1_b,
            fc2_w,
            fc2_b,
        })
    }

    /// `x + W-MSA(LN(x))`, then `+ MLP(LN(.))` with a GELU hidden layer.
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: &Tensor<T>,
    ) -> Result<Tensor<T>> {
        let g1 = store.leaf(tape, self.norm1_g);
        let b1 = store.leaf(tape, self.norm1_b);
        let normed = tape.layer_norm(x, &g1, &b1, 1e-5)?;
        let attended = self.attn.forward(tape, store, &normed)?;
        let x = tape.add(&attended, x)?;

        let g2 = store.leaf(tape, self.norm2_g);
        let b2 = store.leaf(tape, self.norm2_b);
        let normed = tape.layer_norm(&x, &g2, &b2, 1e-5)?;
        let fc1_w = store.leaf(tape, self.fc1_w);
        let fc1_b = store.leaf(tape, self.fc1_b);
        let hidden = tape.matmul(&normed, &fc1_w)?;
        let hidden = tape.add(&hidden, &fc1_b)?;
        let hidden = tape.gelu(&hidden)?;
        let fc2_w = store.leaf(tape, self.fc2_w);
        let fc2_b = store.leaf(tape, self.fc2_b);
        let mlp = tape.matmul(&hidden, &fc2_w)?;
        let mlp = tape.add(&mlp, &fc2_b)?;
        tape.add(&mlp, &x)
    }
}

/// A run of STMs followed by a zero-initialized convolution, added back to
/// the block input. Operates on NCHW feature maps.
pub struct ResidualBlock<T: Scalar> {
    pub stms: Vec<Stm<T>>,
    conv_w: ParamId,
    conv_b: ParamId,
}

impl<T: Scalar> ResidualBlock<T> {
    /// `width` STMs alternating shift 0 and w/2, starting from
    /// `shift_offset` (so alternation can continue across blocks).
    pub fn init<R: Rng>(
        store: &mut ParamStore<T>,
        prefix: &str,
        width: usize,
        base: StmConfig,
        shift_offset: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if width == 0 {
            return Err(Error::invalid("residual block needs at least one STM"));
        }
        let c = base.embed_dim;
        let mut stms = Vec::with_capacity(width);
        for j in 0..width {
            let shift = if (shift_offset + j) % 2 == 1 {
                base.window_size / 2
            } else {
                0
            };
            stms.push(Stm::init(
                store,
                &format!("{prefix}.stm{j}"),
                base.with_shift(shift),
                rng,
            )?);
        }
        let conv_w = store.add(format!("{prefix}.conv.w"), vec![c, c, 3, 3], zeros(c * c * 9))?;
        let conv_b = store.add(format!("{prefix}.conv.b"), vec![c], zeros(c))?;
        Ok(ResidualBlock { stms, conv_w, conv_b })
    }

    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: &Tensor<T>,
    ) -> Result<Tensor<T>> {
        let mut t = tape.permute(x, &[0, 2, 3, 1])?; // NCHW -> BHWC
        for stm in &self.stms {
            t = stm.forward(tape, store, &t)?;
        }
        let t = tape.permute(&t, &[0, 3, 1, 2])?; // back to NCHW
        let w = store.leaf(tape, self.conv_w);
        let b = store.leaf(tape, self.conv_b);
        let conv = tape.conv2d(&t, &w, &b)?;
        tape.add(&conv, x)
    }
}

/// Strided patchifying convolution; pads spatial dims to a patch multiple by
/// reflection (the matching unembed crops back).
pub struct PatchEmbed<T: Scalar> {
    w: ParamId,
    b: ParamId,
    pub patch: usize,
    _marker: std::marker::PhantomData<T>,
}

impl<T: Scalar> PatchEmbed<T> {
    pub fn init<R: Rng>(
        store: &mut ParamStore<T>,
        prefix: &str,
        c_in: usize,
        c_out: usize,
        patch: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let fan_in = c_in * patch * patch;
        let w = store.add(
            format!("{prefix}.w"),
            vec![c_out, c_in, patch, patch],
            xavier(rng, c_out * fan_in, fan_in, c_out),
        )?;
        let b = store.add(format!("{prefix}.b"), vec![c_out], zeros(c_out))?;
        Ok(PatchEmbed {
            w,
            b,
            patch,
            _marker: std::marker::PhantomData,
        })
    }

    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: &Tensor<T>,
    ) -> Result<Tensor<T>> {
        let &[_, _, h, w] = x.shape() else {
            return Err(Error::shape("patch_embed", format!("needs NCHW, got {:?}", x.shape())));
        };
        let p = self.patch;
        let x = if h % p != 0 || w % p != 0 {
            let bhwc = tape.permute(x, &[0, 2, 3, 1])?;
            let padded = tape.pad_reflect(&bhwc, h.div_ceil(p) * p, w.div_ceil(p) * p)?;
            tape.permute(&padded, &[0, 3, 1, 2])?
        } else {
            x.clone()
        };
        let wt = store.leaf(tape, self.w);
        let bt = store.leaf(tape, self.b);
        tape.conv2d_patch(&x, &wt, &bt, p)
    }
}

/// Transposed-convolution inverse of [`PatchEmbed`]; crops to the recorded
/// pre-embed spatial size.
pub struct PatchUnembed<T: Scalar> {
    w: ParamId,
    b: ParamId,
    pub patch: usize,
    _marker: std::marker::PhantomData<T>,
}

impl<T: Scalar> PatchUnembed<T> {
    pub fn init<R: Rng>(
        store: &mut ParamStore<T>,
        prefix: &str,
        c_in: usize,
        c_out: usize,
        patch: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let fan_out = c_out * patch * patch;
        let w = store.add(
            format!("{prefix}.w"),
            vec![c_in, c_out, patch, patch],
            xavier(rng, c_in * fan_out, c_in, fan_out),
        )?;
        let b = store.add(format!("{prefix}.b"), vec![c_out], zeros(c_out))?;
        Ok(PatchUnembed {
            w,
            b,
            patch,
            _marker: std::marker::PhantomData,
        })
    }

    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: &Tensor<T>,
        target_hw: (usize, usize),
    ) -> Result<Tensor<T>> {
        let wt = store.leaf(tape, self.w);
        let bt = store.leaf(tape, self.b);
        let up = tape.conv_transpose2d_patch(x, &wt, &bt, self.patch)?;
        let &[_, _, h, w] = up.shape() else { unreachable!() };
        if (h, w) == target_hw {
            return Ok(up);
        }
        let bhwc = tape.permute(&up, &[0, 2, 3, 1])?;
        let cropped = tape.crop(&bhwc, target_hw.0, target_hw.1)?;
        tape.permute(&cropped, &[0, 3, 1, 2])
    }
}
