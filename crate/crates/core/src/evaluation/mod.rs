//! One-pass tracking evaluation, reference trackers and expert statistics.
//!
//! Each sequence is tracked from its first ground-truth box only. Per-frame
//! IoU and center distance are turned into Success and Precision, per
//! category and pooled over all frames. For models with expert layers the
//! gate mass each expert receives is tallied per category and layer.

mod metrics;
mod tracker;

pub use metrics::{precision, success, PRECISION_MAX_DIST, PRECISION_THRESHOLDS};
pub use tracker::{
    track_sequence, ConstantVelocityTracker, ModelTracker, OracleTracker, RoutedGates, StaticTracker, Tracker,
    TrackerState,
};

use std::collections::BTreeMap;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::iou3d;
use crate::model::Model;
use crate::synthdata::Sequence;

/// Which tracker [`evaluate`] runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackerKind {
    Model,
    /// Replays ground truth; a harness self-check.
    Oracle,
    /// Keeps the first box forever.
    Static,
    /// Extrapolates motion from the first two true boxes.
    ConstantVelocity,
}

impl TrackerKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Model => "model",
            Self::Oracle => "oracle",
            Self::Static => "static",
            Self::ConstantVelocity => "constant_velocity",
        }
    }
}

impl FromStr for TrackerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "model" => Ok(Self::Model),
            "oracle" => Ok(Self::Oracle),
            "static" => Ok(Self::Static),
            "constant_velocity" | "cv" => Ok(Self::ConstantVelocity),
            other => Err(Error::Config(format!("unknown tracker `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricPair {
    pub success: f64,
    pub precision: f64,
}

impl MetricPair {
    fn from_series(ious: &[f64], dists: &[f64]) -> Result<Self> {
        Ok(Self {
            success: success(ious)?,
            precision: precision(dists)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryMetrics {
    pub success: f64,
    pub precision: f64,
    pub sequences: usize,
    pub frames: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceRecord {
    /// Position in the evaluated list.
    pub index: usize,
    pub category: String,
    pub seed: u64,
    /// One entry per frame after the first.
    pub ious: Vec<f64>,
    pub distances: Vec<f64>,
    pub success: f64,
    pub precision: f64,
}

/// One cell of the expert-activation histogram.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramRow {
    pub category: String,
    /// Layer number in the configured index base.
    pub layer: usize,
    pub expert: usize,
    pub fraction: f64,
}

/// Gate mass per `(category, layer)` and expert.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExpertHistogram {
    totals: BTreeMap<(String, usize), Vec<f64>>,
}

impl ExpertHistogram {
    /// Adds gate totals of one sequence.
    pub fn add(&mut self, category: &str, layer: usize, gates: &[f64]) {
        let t = self
            .totals
            .entry((category.to_string(), layer))
            .or_insert_with(|| vec![0.0; gates.len()]);
        for (a, b) in t.iter_mut().zip(gates) {
            *a += b;
        }
    }

    pub fn is_empty(&self) -> bool {
        self.totals.is_empty()
    }

    /// Normalized rows, ordered by category, layer, expert.
    pub fn rows(&self) -> Vec<HistogramRow> {
        let mut out = Vec::new();
        for ((cat, layer), t) in &self.totals {
            let sum: f64 = t.iter().sum();
            for (e, v) in t.iter().enumerate() {
                out.push(HistogramRow {
                    category: cat.clone(),
                    layer: *layer,
                    expert: e,
                    fraction: if sum > 0.0 { v / sum } else { 0.0 },
                });
            }
        }
        out
    }

    /// CSV with header `category,layer,expert,fraction`.
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "category,layer,expert,fraction")?;
        for r in self.rows() {
            writeln!(out, "{},{},{},{}", r.category, r.layer, r.expert, r.fraction)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tracker: String,
    /// Pooled over every evaluated frame.
    pub mean: MetricPair,
    pub categories: BTreeMap<String, CategoryMetrics>,
    pub sequences: Vec<SequenceRecord>,
    pub expert_histogram: Vec<HistogramRow>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

struct SequenceResult {
    record: SequenceRecord,
    gates: BTreeMap<usize, Vec<f64>>,
}

fn eval_one(model: Option<&Model>, seq: &Sequence, index: usize, kind: TrackerKind) -> Result<SequenceResult> {
    let mut gates = BTreeMap::new();
    let preds = match kind {
        TrackerKind::Model => {
            let model = model.ok_or_else(|| Error::Contract("model tracker needs a model".into()))?;
            let mut t = ModelTracker::new(model);
            let preds = track_sequence(&mut t, seq)?;
            let base = model.config.layer_index_base;
            gates = t.gate_totals().iter().map(|(l, v)| (l + base, v.clone())).collect();
            preds
        }
        TrackerKind::Oracle => track_sequence(&mut OracleTracker::new(seq), seq)?,
        TrackerKind::Static => track_sequence(&mut StaticTracker::default(), seq)?,
        TrackerKind::ConstantVelocity => track_sequence(&mut ConstantVelocityTracker::new(seq)?, seq)?,
    };
    let (ious, distances): (Vec<f64>, Vec<f64>) = preds
        .iter()
        .zip(&seq.frames[1..])
        .map(|(p, f)| (iou3d(&p.bbox, &f.gt), p.bbox.center_distance(&f.gt)))
        .unzip();
    let m = MetricPair::from_series(&ious, &distances)?;
    Ok(SequenceResult {
        record: SequenceRecord {
            index,
            category: seq.category.clone(),
            seed: seq.seed,
            ious,
            distances,
            success: m.success,
            precision: m.precision,
        },
        gates,
    })
}

/// Applies `f` to every sequence on up to `jobs` threads; results keep the
/// input order, so the outcome does not depend on `jobs`.
fn map_sequences<T: Send>(
    sequences: &[Sequence],
    jobs: usize,
    f: impl Fn(usize, &Sequence) -> Result<T> + Sync,
) -> Result<Vec<T>> {
    let jobs = jobs.max(1).min(sequences.len().max(1));
    if jobs == 1 {
        return sequences.iter().enumerate().map(|(i, s)| f(i, s)).collect();
    }
    let mut slots: Vec<Option<Result<T>>> = (0..sequences.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let f = &f;
        let handles: Vec<_> = (0..jobs)
            .map(|j| {
                scope.spawn(move || {
                    (j..sequences.len())
                        .step_by(jobs)
                        .map(|i| (i, f(i, &sequences[i])))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("evaluation worker panicked") {
                slots[i] = Some(r);
            }
        }
    });
    slots.into_iter().map(|s| s.expect("every slot filled")).collect()
}

/// Tracks every sequence and builds the report. `model` is required for
/// [`TrackerKind::Model`] and ignored otherwise.
pub fn evaluate(model: Option<&Model>, sequences: &[Sequence], kind: TrackerKind, jobs: usize) -> Result<EvalReport> {
    if sequences.is_empty() {
        return Err(Error::EmptyInput("no sequences to evaluate"));
    }
    let results = map_sequences(sequences, jobs, |i, s| eval_one(model, s, i, kind))?;
    let mut hist = ExpertHistogram::default();
    let mut per_cat: BTreeMap<String, (Vec<f64>, Vec<f64>, usize)> = BTreeMap::new();
    let (mut all_iou, mut all_dist) = (Vec::new(), Vec::new());
    for r in &results {
        let rec = &r.record;
        for (layer, g) in &r.gates {
            hist.add(&rec.category, *layer, g);
        }
        let e = per_cat.entry(rec.category.clone()).or_default();
        e.0.extend(&rec.ious);
        e.1.extend(&rec.distances);
        e.2 += 1;
        all_iou.extend(&rec.ious);
        all_dist.extend(&rec.distances);
    }
    let mut categories = BTreeMap::new();
    for (cat, (ious, dists, n)) in per_cat {
        let m = MetricPair::from_series(&ious, &dists)?;
        categories.insert(
            cat,
            CategoryMetrics {
                success: m.success,
                precision: m.precision,
                sequences: n,
                frames: ious.len(),
            },
        );
    }
    Ok(EvalReport {
        tracker: kind.name().to_string(),
        mean: MetricPair::from_series(&all_iou, &all_dist)?,
        categories,
        sequences: results.into_iter().map(|r| r.record).collect(),
        expert_histogram: hist.rows(),
    })
}

/// Expert-activation histogram of `model` over `sequences`: every routed
/// token adds its gate values to its experts; rows are normalized per
/// `(category, layer)`.
pub fn expert_stats(model: &Model, sequences: &[Sequence], jobs: usize) -> Result<ExpertHistogram> {
    if model.config.moge_positions()?.is_empty() {
        return Err(Error::Config("model has no expert layers".into()));
    }
    let per_seq = map_sequences(sequences, jobs, |_, s| {
        let mut t = ModelTracker::new(model);
        track_sequence(&mut t, s)?;
        Ok(t.gate_totals().clone())
    })?;
    let base = model.config.layer_index_base;
    let mut hist = ExpertHistogram::default();
    for (s, gates) in sequences.iter().zip(&per_seq) {
        for (layer, g) in gates {
            hist.add(&s.category, layer + base, g);
        }
    }
    Ok(hist)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_token_histogram() {
        let mut h = ExpertHistogram::default();
        h.add("car", 2, &[0.0, 0.7, 0.0, 0.3]);
        let rows = h.rows();
        assert_eq!(rows.len(), 4);
        assert!((rows[1].fraction - 0.7).abs() < 1e-15);
        assert!((rows[3].fraction - 0.3).abs() < 1e-15);
        assert_eq!(rows[0].fraction, 0.0);
    }

    #[test]
    fn tracker_names_parse() {
        for k in [
            TrackerKind::Model,
            TrackerKind::Oracle,
            TrackerKind::Static,
            TrackerKind::ConstantVelocity,
        ] {
            assert_eq!(k.name().parse::<TrackerKind>().unwrap(), k);
        }
        assert!("nope".parse::<TrackerKind>().is_err());
    }
}
