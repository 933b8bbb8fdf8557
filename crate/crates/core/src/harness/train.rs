//! Pre-training loop with AdamW, warmup and step decay.

use std::collections::HashMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{error, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::detector::{checkpoint, pretrain_loss, Detector, LabelTensors};
use crate::error::{Error, Result};
use crate::losses::{LossBreakdown, LossConfig};
use crate::nn::{Graph, Matrix, ParamStore};
use crate::prep::PseudoLabelSet;

use super::config::TrainConfig;
use super::dataset::DatasetItem;

/// One training image with its frozen features and labels.
#[derive(Debug, Clone)]
pub struct TrainItem {
    pub id: String,
    pub tokens: Matrix,
    pub labels: LabelTensors,
}

/// Pairs every dataset image with its label set and precomputes the frozen
/// backbone tokens. Every image must have a label set.
pub fn training_items(det: &Detector, dataset: &[DatasetItem], labels: &[PseudoLabelSet]) -> Result<Vec<TrainItem>> {
    let cfg = det.config();
    let by_id: HashMap<&str, &PseudoLabelSet> = labels.iter().map(|s| (s.image_id.as_str(), s)).collect();
    dataset
        .iter()
        .map(|item| {
            let set = by_id
                .get(item.id.as_str())
                .ok_or_else(|| Error::Data(format!("no pseudo-labels for image {}", item.id)))?;
            Ok(TrainItem {
                id: item.id.clone(),
                tokens: det.backbone_tokens(&item.image)?,
                labels: LabelTensors::from_set(set, cfg.image_size, cfg.dim, cfg.k_cls)?,
            })
        })
        .collect()
}

/// Adam with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    steps: i32,
}

impl AdamW {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Matrix> = store.ids().map(|id| Matrix::zeros(store.value(id).dim())).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            steps: 0,
        }
    }

    /// Applies one update from the gradients accumulated in `store`.
    pub fn step(&mut self, store: &mut ParamStore, lr: f64, cfg: &TrainConfig) {
        self.steps += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.steps);
        let bc2 = 1.0 - cfg.beta2.powi(self.steps);
        let ids: Vec<_> = store.ids().collect();
        for (k, id) in ids.into_iter().enumerate() {
            let grad = store.grad(id).clone();
            let m = &mut self.m[k];
            let v = &mut self.v[k];
            let value = store.value_mut(id);
            ndarray::Zip::from(value)
                .and(m)
                .and(v)
                .and(&grad)
                .for_each(|p, m, v, &g| {
                    *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                    *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                    let update = (*m / bc1) / ((*v / bc2).sqrt() + cfg.adam_eps);
                    *p -= lr * (update + cfg.weight_decay * *p);
                });
        }
    }
}

/// One row of the metrics file: batch-mean loss components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub iteration: usize,
    pub epoch: usize,
    pub lr: f64,
    pub ca_det: f64,
    pub cls: f64,
    pub reg: f64,
    pub ang: f64,
    pub ca_aux: f64,
    pub cls_aux: f64,
    pub reg_aux: f64,
    pub ang_aux: f64,
    pub distill: f64,
    pub total: f64,
}

impl MetricsRow {
    pub fn new(iteration: usize, epoch: usize, lr: f64, b: &LossBreakdown) -> Self {
        Self {
            iteration,
            epoch,
            lr,
            ca_det: b.ca_det,
            cls: b.cls,
            reg: b.reg,
            ang: b.ang,
            ca_aux: b.ca_aux,
            cls_aux: b.cls_aux,
            reg_aux: b.reg_aux,
            ang_aux: b.ang_aux,
            distill: b.distill,
            total: b.total,
        }
    }

    pub fn breakdown(&self) -> LossBreakdown {
        LossBreakdown {
            ca_det: self.ca_det,
            cls: self.cls,
            reg: self.reg,
            ang: self.ang,
            ca_aux: self.ca_aux,
            cls_aux: self.cls_aux,
            reg_aux: self.reg_aux,
            ang_aux: self.ang_aux,
            distill: self.distill,
            total: self.total,
        }
    }
}

/// Where a run writes its outputs.
#[derive(Debug, Clone, Default)]
pub struct RunOutputs {
    pub metrics: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub iterations: usize,
    /// Mean breakdown over the images of each epoch.
    pub epoch_means: Vec<LossBreakdown>,
}

fn mean_breakdown(parts: &[LossBreakdown]) -> LossBreakdown {
    let n = parts.len().max(1) as f64;
    let mut out = LossBreakdown::default();
    for b in parts {
        out.ca_det += b.ca_det;
        out.cls += b.cls;
        out.reg += b.reg;
        out.ang += b.ang;
        out.ca_aux += b.ca_aux;
        out.cls_aux += b.cls_aux;
        out.reg_aux += b.reg_aux;
        out.ang_aux += b.ang_aux;
        out.distill += b.distill;
        out.total += b.total;
    }
    out.ca_det /= n;
    out.cls /= n;
    out.reg /= n;
    out.ang /= n;
    out.ca_aux /= n;
    out.cls_aux /= n;
    out.reg_aux /= n;
    out.ang_aux /= n;
    out.distill /= n;
    out.total /= n;
    out
}

fn grad_norm(store: &ParamStore) -> f64 {
    store
        .ids()
        .map(|id| store.grad(id).iter().map(|g| g * g).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

/// Loss of one image; its parameter gradients are added into the
/// detector's accumulators with weight `scale`.
pub fn accumulate_image(det: &mut Detector, item: &TrainItem, loss: &LossConfig, scale: f64) -> Result<LossBreakdown> {
    let mut g = Graph::new();
    let (total, breakdown, _) = pretrain_loss(det, &mut g, &item.tokens, &item.labels, loss)?;
    if breakdown.is_finite() {
        g.backward(total).accumulate_params(&g, det.store_mut(), scale);
    }
    Ok(breakdown)
}

fn dump_nan(path: &Path, iteration: usize, epoch: usize, ids: &[String], parts: &[LossBreakdown]) {
    let dump = serde_json::json!({
        "iteration": iteration,
        "epoch": epoch,
        "images": ids,
        "breakdowns": parts,
    });
    if let Err(e) = fs::write(path, dump.to_string()) {
        error!("cannot write diagnostic dump {}: {e}", path.display());
    }
}

/// Trains `det` in place on `items`.
pub fn pretrain(det: &mut Detector, items: &[TrainItem], cfg: &TrainConfig, out: &RunOutputs) -> Result<TrainSummary> {
    cfg.validate()?;
    if items.is_empty() {
        return Err(Error::Data("no training images".into()));
    }
    let mut metrics = match &out.metrics {
        Some(p) => Some(BufWriter::new(fs::File::create(p).map_err(|e| Error::io(p, e))?)),
        None => None,
    };
    let mut opt = AdamW::new(det.store());
    let mut iteration = 0;
    let mut epoch_means = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..items.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);
        let mut epoch_parts = Vec::with_capacity(items.len());

        for (batch_index, batch) in order.chunks(cfg.batch_size).enumerate() {
            let lr = cfg.lr_at(iteration, epoch);
            let scale = 1.0 / batch.len() as f64;
            det.store_mut().zero_grads();
            let mut parts = Vec::with_capacity(batch.len());
            for &i in batch {
                parts.push(accumulate_image(det, &items[i], &cfg.loss, scale)?);
            }
            let ids: Vec<String> = batch.iter().map(|&i| items[i].id.clone()).collect();
            let mean = mean_breakdown(&parts);
            let norm = grad_norm(det.store());
            if !mean.is_finite() || !norm.is_finite() {
                let detail = format!("non-finite loss or gradient in batch [{}]", ids.join(", "));
                error!("iteration {iteration}: {detail}");
                let dump_path = out
                    .metrics
                    .as_ref()
                    .map(|p| p.with_extension("nan.json"))
                    .unwrap_or_else(|| PathBuf::from("mutdet-nan.json"));
                dump_nan(&dump_path, iteration, epoch, &ids, &parts);
                return Err(Error::NumericalFailure {
                    iteration,
                    batch: batch_index,
                    detail,
                });
            }
            if cfg.grad_clip > 0.0 && norm > cfg.grad_clip {
                let s = cfg.grad_clip / norm;
                let store = det.store_mut();
                let ids: Vec<_> = store.ids().collect();
                for id in ids {
                    store.grad_mut(id).mapv_inplace(|g| g * s);
                }
            }
            opt.step(det.store_mut(), lr, cfg);

            if let Some(w) = metrics.as_mut() {
                if iteration % cfg.log_every == 0 {
                    let row = MetricsRow::new(iteration, epoch, lr, &mean);
                    let line = serde_json::to_string(&row).map_err(|e| Error::Data(e.to_string()))?;
                    let path = out.metrics.as_deref().unwrap_or(Path::new(""));
                    writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
                }
            }
            epoch_parts.extend(parts);
            iteration += 1;
        }

        let mean = mean_breakdown(&epoch_parts);
        info!("epoch {epoch}: mean total {:.6}", mean.total);
        epoch_means.push(mean);
        if let Some(ckpt) = &out.checkpoint {
            if cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 && epoch + 1 < cfg.epochs {
                checkpoint::save(det, &ckpt.with_extension(format!("epoch{}", epoch + 1)))?;
            }
        }
    }

    if let (Some(w), Some(p)) = (metrics.as_mut(), out.metrics.as_ref()) {
        w.flush().map_err(|e| Error::io(p, e))?;
    }
    if let Some(ckpt) = &out.checkpoint {
        checkpoint::save(det, ckpt)?;
    }
    Ok(TrainSummary {
        iterations: iteration,
        epoch_means,
    })
}

/// Reads a metrics file written by [`pretrain`].
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}
