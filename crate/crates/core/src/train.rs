//! Adam optimization and the training loop.

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::grad::{Gradients, Tape};
use crate::model::DuDoTransModel;
use crate::params::ParamStore;
use crate::tomo::{CtImage, Sinogram};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};

/// Adam moments and hyperparameters, laid out parallel to a parameter store.
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub moments: Vec<Moments>,
}

pub struct Moments {
    pub m: Vec<f32>,
    pub v: Vec<f32>,
}

impl AdamState {
    /// Fresh state with zero moments for every parameter in the store.
    pub fn new(store: &ParamStore<f32>, lr: f64) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments: store
                .iter()
                .map(|(_, t)| Moments {
                    m: vec![0.0; t.numel()],
                    v: vec![0.0; t.numel()],
                })
                .collect(),
        }
    }

    /// One Adam update from a dense per-parameter gradient table
    /// (`None` entries leave the parameter untouched). `scale` multiplies
    /// every gradient, which is how batches average.
    pub fn step_table(
        &mut self,
        store: &mut ParamStore<f32>,
        grads: &[Option<Vec<f32>>],
        scale: f64,
    ) -> Result<()> {
        if grads.len() != store.len() || self.moments.len() != store.len() {
            return Err(Error::invalid(format!(
                "optimizer state covers {} parameters, store has {}",
                self.moments.len(),
                store.len()
            )));
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let (lr, eps) = (self.lr, self.eps);
        for id in 0..store.len() {
            let Some(g) = &grads[id] else { continue };
            let moments = &mut self.moments[id];
            if g.len() != moments.m.len() {
                return Err(Error::shape(
                    "adam_step",
                    format!(
                        "gradient for {} has {} values, parameter has {}",
                        store.name(id),
                        g.len(),
                        moments.m.len()
                    ),
                ));
            }
            let theta = store.tensor_mut(id).data_mut();
            for i in 0..g.len() {
                let gi = g[i] * scale as f32;
                moments.m[i] = b1 * moments.m[i] + (1.0 - b1) * gi;
                moments.v[i] = b2 * moments.v[i] + (1.0 - b2) * gi * gi;
                let m_hat = moments.m[i] as f64 / bc1;
                let v_hat = moments.v[i] as f64 / bc2;
                theta[i] = (theta[i] as f64 - lr * m_hat / (v_hat.sqrt() + eps)) as f32;
            }
        }
        Ok(())
    }

    /// Convenience for batch size 1: update straight from a backward pass.
    pub fn step(&mut self, store: &mut ParamStore<f32>, grads: &Gradients<f32>) -> Result<()> {
        let table = gradient_table(store, grads);
        self.step_table(store, &table, 1.0)
    }
}

/// Dense per-parameter gradient table from a backward pass.
pub fn gradient_table(store: &ParamStore<f32>, grads: &Gradients<f32>) -> Vec<Option<Vec<f32>>> {
    (0..store.len())
        .map(|id| grads.get(store.get(id)).map(|g| g.to_vec()))
        .collect()
}

fn accumulate_table(acc: &mut [Option<Vec<f32>>], store: &ParamStore<f32>, grads: &Gradients<f32>) {
    for (id, slot) in acc.iter_mut().enumerate() {
        if let Some(g) = grads.get(store.get(id)) {
            match slot {
                Some(existing) => {
                    for (e, &v) in existing.iter_mut().zip(g) {
                        *e += v;
                    }
                }
                None => *slot = Some(g.to_vec()),
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Write a checkpoint every this many epochs (and always at the end).
    pub checkpoint_interval: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lr: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 1,
            seed: 0,
            checkpoint_interval: 10,
            lambda1: 1.0,
            lambda2: 1.0,
            lr: 1e-4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch_size must be >= 1"));
        }
        if !(self.lr > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        Ok(())
    }
}

/// One training example held in memory.
pub struct TrainItem {
    pub phantom: CtImage,
    pub clean: Sinogram,
    pub noisy: Sinogram,
}

#[derive(Debug, Clone, Serialize)]
pub struct LossRecord {
    pub epoch: usize,
    pub item: usize,
    pub loss: f64,
    pub loss_srt: f64,
    pub loss_dc: f64,
    pub loss_rirm: f64,
}

pub struct TrainReport {
    pub records: Vec<LossRecord>,
    pub epoch_means: Vec<f64>,
    pub checkpoints: Vec<PathBuf>,
}

/// Forward + loss for one item; returns the tape for an optional backward.
fn item_loss(
    model: &DuDoTransModel,
    item: &TrainItem,
) -> Result<(Tape<f32>, crate::model::LossBundle)> {
    let mut tape = Tape::new();
    let output = model.forward(&mut tape, &item.noisy)?;
    let bundle = model.loss(&mut tape, &output, &item.clean, &item.phantom)?;
    Ok((tape, bundle))
}

/// Mean total loss over a set of items (no gradients).
pub fn mean_loss(model: &DuDoTransModel, items: &[TrainItem]) -> Result<f64> {
    let mut acc = 0.0;
    for item in items {
        let (_, bundle) = item_loss(model, item)?;
        acc += bundle.total.data()[0] as f64;
    }
    Ok(acc / items.len() as f64)
}

/// Epoch-shuffled Adam training. Writes `loss_log.csv` and periodic
/// `ckpt_epoch{N}.ddtc` checkpoints into `out_dir`; bit-reproducible for a
/// fixed seed (kernels use fixed reduction orders regardless of threading).
pub fn train_loop(
    model: &mut DuDoTransModel,
    items: &[TrainItem],
    cfg: &TrainConfig,
    out_dir: &Path,
) -> Result<TrainReport> {
    cfg.validate()?;
    if items.is_empty() {
        return Err(Error::invalid("training needs a non-empty train split"));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    model.config.lambda1 = cfg.lambda1;
    model.config.lambda2 = cfg.lambda2;

    let mut adam = AdamState::new(&model.store, cfg.lr);
    let mut shuffler = ChaCha12Rng::seed_from_u64(cfg.seed);
    let mut records = Vec::new();
    let mut epoch_means = Vec::new();
    let mut checkpoints = Vec::new();

    let log_path = out_dir.join("loss_log.csv");
    let mut log = std::fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    writeln!(log, "epoch,item,loss,loss_srt,loss_dc,loss_rirm").map_err(|e| Error::io(&log_path, e))?;

    let mut order: Vec<usize> = (0..items.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffler);
        let mut epoch_acc = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut table: Vec<Option<Vec<f32>>> = vec![None; model.store.len()];
            for &idx in batch {
                let item = &items[idx];
                let (tape, bundle) = item_loss(model, item)?;
                let loss = bundle.total.data()[0] as f64;
                if !loss.is_finite() {
                    return Err(Error::Numerical(format!(
                        "non-finite loss at epoch {epoch}, item {idx}"
                    )));
                }
                epoch_acc += loss;
                records.push(LossRecord {
                    epoch,
                    item: idx,
                    loss,
                    loss_srt: bundle.srt_term,
                    loss_dc: bundle.dc_term,
                    loss_rirm: bundle.rirm_term,
                });
                let rec = records.last().expect("just pushed");
                writeln!(
                    log,
                    "{},{},{},{},{},{}",
                    rec.epoch, rec.item, rec.loss, rec.loss_srt, rec.loss_dc, rec.loss_rirm
                )
                .map_err(|e| Error::io(&log_path, e))?;
                let grads = tape.backward(&bundle.total)?;
                accumulate_table(&mut table, &model.store, &grads);
            }
            adam.step_table(&mut model.store, &table, 1.0 / batch.len() as f64)?;
        }
        epoch_means.push(epoch_acc / items.len() as f64);
        if epoch % cfg.checkpoint_interval == 0 || epoch == cfg.epochs {
            let path = out_dir.join(format!("ckpt_epoch{epoch}.ddtc"));
            checkpoint::save_checkpoint(&path, model, Some(&adam))?;
            checkpoints.push(path);
        }
    }
    Ok(TrainReport {
        records,
        epoch_means,
        checkpoints,
    })
}

pub struct OverfitReport {
    pub initial_loss: f64,
    pub final_loss: f64,
    pub steps: usize,
    pub passed: bool,
}

/// Desk-scale training sanity check: cycle a handful of items for `steps`
/// Adam updates and require the mean loss to drop by at least 10x.
pub fn overfit_smoke(
    model: &mut DuDoTransModel,
    items: &[TrainItem],
    steps: usize,
    lr: f64,
) -> Result<OverfitReport> {
    if items.is_empty() {
        return Err(Error::invalid("overfit_smoke needs items"));
    }
    let initial_loss = mean_loss(model, items)?;
    let mut adam = AdamState::new(&model.store, lr);
    for step in 0..steps {
        let item = &items[step % items.len()];
        let (tape, bundle) = item_loss(model, item)?;
        if !bundle.total.data()[0].is_finite() {
            return Err(Error::Numerical(format!("non-finite loss at step {step}")));
        }
        let grads = tape.backward(&bundle.total)?;
        adam.step(&mut model.store, &grads)?;
    }
    let final_loss = mean_loss(model, items)?;
    Ok(OverfitReport {
        initial_loss,
        final_loss,
        steps,
        passed: final_loss <= 0.1 * initial_loss,
    })
}
