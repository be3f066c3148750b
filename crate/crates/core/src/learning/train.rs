use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::loss::{compute_loss, load_balance_loss, LossWeights};
use super::optim::{AdamW, AdamWConfig};
use crate::config::{LrSchedule, TrainConfig};
use crate::error::{Error, Result};
use crate::geometry::{Box3D, RegionSample};
use crate::model::{search_region, template_region, Model};
use crate::numerics::Var;
use crate::params::{Graph, ParamGrads};
use crate::synthdata::Sequence;

/// One frame of a training clip, with everything that does not
/// depend on the parameters already computed.
#[derive(Clone, Debug)]
pub struct PlannedFrame {
    pub template: RegionSample,
    pub search: RegionSample,
    /// Ground truth in the canonical frame of the search region.
    pub gt: Box3D,
}

/// A clip of consecutive frames. The first frame is its own template.
#[derive(Clone, Debug)]
pub struct ClipPlan {
    pub frames: Vec<PlannedFrame>,
}

/// Crops the regions of the clip starting at `start`.
///
/// Each search region is cropped around the previous ground-truth box (the
/// frame's own box for the first frame) moved by Gaussian jitter, imitating
/// the error of a previous prediction.
pub fn plan_clip(model: &Model, cfg: &TrainConfig, seq: &Sequence, start: usize, rng: &mut ChaCha8Rng) -> Result<ClipPlan> {
    let end = start + cfg.clip_length;
    if end > seq.len() {
        return Err(Error::Contract(format!(
            "clip {start}..{end} exceeds sequence of {} frames",
            seq.len()
        )));
    }
    let jitter = Normal::new(0.0, cfg.search_jitter.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let z_jitter = Normal::new(0.0, cfg.search_z_jitter.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let yaw_jitter = Normal::new(0.0, cfg.search_yaw_jitter.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let first = &seq.frames[start];
    let mut frames = Vec::with_capacity(cfg.clip_length);
    for i in start..end {
        let prev = &seq.frames[i.saturating_sub(1).max(start)];
        let cur = &seq.frames[i];
        let template = template_region(&model.config, (&first.cloud, &first.gt), (&prev.cloud, &prev.gt), rng.random());
        let offset = [
            jitter.sample(rng),
            jitter.sample(rng),
            z_jitter.sample(rng),
            yaw_jitter.sample(rng),
        ];
        let reference = crate::geometry::apply_box_offset(&prev.gt, offset);
        let search = search_region(&model.config, &cur.cloud, &reference, rng.random());
        frames.push(PlannedFrame {
            template,
            search,
            gt: reference.relative(&cur.gt),
        });
    }
    Ok(ClipPlan { frames })
}

/// Summed loss of a clip on `g`, plus the values of its terms.
#[derive(Clone, Copy, Debug)]
pub struct ClipLoss {
    pub total: Var,
    pub cls: f64,
    pub reg: f64,
}

/// Runs the clip frame by frame, carrying the temporal output forward.
/// With `bptt` the carried token stays on the tape so gradients reach earlier
/// frames; otherwise it is detached.
pub fn clip_loss(g: &mut Graph<'_>, model: &Model, plan: &ClipPlan, cfg: &TrainConfig) -> Result<ClipLoss> {
    let weights = LossWeights {
        cls: cfg.lambda_cls,
        reg: cfg.lambda_reg,
        huber_delta: cfg.huber_delta,
    };
    let mut carried: Option<Var> = None;
    let mut total: Option<Var> = None;
    let (mut cls, mut reg) = (0.0, 0.0);
    for f in &plan.frames {
        let out = model.frame_forward(g, &f.template, &f.search, carried)?;
        let l = compute_loss(g, out.head, &out.search_centers, &f.gt, weights)?;
        cls += l.cls;
        reg += l.reg;
        let mut frame_total = l.total;
        if cfg.load_balance_weight > 0.0 {
            if let Some(aux) = load_balance_loss(g, &out.routing)? {
                let aux = g.tape.scale(aux, cfg.load_balance_weight);
                frame_total = g.tape.add(frame_total, aux)?;
            }
        }
        total = Some(match total {
            Some(t) => g.tape.add(t, frame_total)?,
            None => frame_total,
        });
        carried = Some(if cfg.bptt { out.temporal } else { g.tape.detach(out.temporal) });
    }
    let total = total.ok_or_else(|| Error::Contract("clip has no frames".into()))?;
    Ok(ClipLoss { total, cls, reg })
}

/// One line of the loss log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub loss: f64,
    pub loss_cls: f64,
    pub loss_reg: f64,
}

impl StepLog {
    pub const CSV_HEADER: &'static str = "step,loss,loss_cls,loss_reg";

    pub fn csv_line(&self) -> String {
        format!("{},{},{},{}", self.step, self.loss, self.loss_cls, self.loss_reg)
    }
}

/// Writes a loss log as CSV.
pub fn write_loss_log(log: &[StepLog], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "{}", StepLog::CSV_HEADER)?;
    for l in log {
        writeln!(out, "{}", l.csv_line())?;
    }
    Ok(())
}

/// Mean loss of the first and last `window` steps.
pub fn smoothed_endpoints(log: &[StepLog], window: usize) -> Option<(f64, f64)> {
    if log.is_empty() || window == 0 {
        return None;
    }
    let w = window.min(log.len());
    let mean = |s: &[StepLog]| s.iter().map(|l| l.loss).sum::<f64>() / s.len() as f64;
    Some((mean(&log[..w]), mean(&log[log.len() - w..])))
}

/// Clips of every sequence, as `(sequence, start)` pairs.
fn all_clips(sequences: &[Sequence], clip_length: usize) -> Vec<(usize, usize)> {
    sequences
        .iter()
        .enumerate()
        .flat_map(|(s, seq)| (0..(seq.len() + 1).saturating_sub(clip_length)).map(move |start| (s, start)))
        .collect()
}

/// Post-warmup multiplier for `step`.
fn decay(cfg: &TrainConfig, step: usize) -> f64 {
    match cfg.lr_schedule {
        LrSchedule::Constant => 1.0,
        LrSchedule::Cosine => {
            let span = cfg.steps.saturating_sub(cfg.warmup_steps).max(1);
            let t = step.saturating_sub(cfg.warmup_steps) as f64 / span as f64;
            0.5 * (1.0 + (std::f64::consts::PI * t).cos())
        }
    }
}

/// Trains the tunable parameters of `model` on clips drawn from `sequences`.
///
/// Clips are visited in a seeded shuffled order, reshuffled each pass. Each
/// step accumulates the gradients of `batch_size` clips, averages them,
/// clips their global norm and applies one AdamW update. `on_step` sees each
/// log line as it is produced.
pub fn train(
    model: &mut Model,
    sequences: &[Sequence],
    cfg: &TrainConfig,
    mut on_step: impl FnMut(&StepLog),
) -> Result<Vec<StepLog>> {
    cfg.validate()?;
    let clips = all_clips(sequences, cfg.clip_length);
    if clips.is_empty() {
        return Err(Error::Config(format!(
            "no training clips of length {} in {} sequences",
            cfg.clip_length,
            sequences.len()
        )));
    }
    let frozen_before = model.store.frozen_digest();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order = clips.clone();
    order.shuffle(&mut rng);
    let mut cursor = 0;
    let mut opt = AdamW::new(
        &model.store,
        AdamWConfig {
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.adam_eps,
            weight_decay: cfg.weight_decay,
        },
    );
    let mut log = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let mut grads = ParamGrads::zeros_like(&model.store);
        let (mut loss, mut cls, mut reg) = (0.0, 0.0, 0.0);
        for _ in 0..cfg.batch_size {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let (s, start) = order[cursor];
            cursor += 1;
            let plan = plan_clip(model, cfg, &sequences[s], start, &mut rng)?;
            let mut g = Graph::new(&model.store);
            let l = clip_loss(&mut g, model, &plan, cfg)?;
            loss += g.value(l.total).item()?;
            cls += l.cls;
            reg += l.reg;
            let (pg, _) = g.backward(l.total)?;
            grads.accumulate(&pg);
        }
        let inv = 1.0 / cfg.batch_size as f64;
        grads.scale(inv);
        if cfg.grad_clip > 0.0 {
            let norm = grads.global_norm();
            if norm > cfg.grad_clip {
                grads.scale(cfg.grad_clip / norm);
            }
        }
        let warm = if cfg.warmup_steps > 0 {
            ((step + 1) as f64 / cfg.warmup_steps as f64).min(1.0)
        } else {
            1.0
        };
        opt.step(&mut model.store, &grads, cfg.learning_rate * warm * decay(cfg, step));
        let entry = StepLog {
            step,
            loss: loss * inv,
            loss_cls: cls * inv,
            loss_reg: reg * inv,
        };
        on_step(&entry);
        log.push(entry);
    }
    if model.store.frozen_digest() != frozen_before {
        return Err(Error::Contract("frozen parameters changed during training".into()));
    }
    Ok(log)
}
