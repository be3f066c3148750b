use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::geometry::{normalize_angle, Box3D, PointCloud};
use crate::learning::{localize, Prediction};
use crate::model::{search_region, template_region, Model};
use crate::numerics::Tensor;
use crate::params::Graph;
use crate::synthdata::Sequence;
use crate::temporal::TemporalToken;

/// A one-pass single-object tracker.
///
/// The interface only ever hands over the first box, so an implementation
/// cannot read later ground truth.
pub trait Tracker {
    /// Starts a new sequence from its first frame and given box.
    fn reset(&mut self, cloud: &PointCloud, first_box: Box3D) -> Result<()>;
    /// Predicts the box in the next frame.
    fn track(&mut self, cloud: &PointCloud) -> Result<Prediction>;
}

/// Mutable per-sequence inference state of [`ModelTracker`].
#[derive(Clone, Debug)]
pub struct TrackerState {
    pub prev_box: Box3D,
    pub prev_cloud: PointCloud,
    pub first_box: Box3D,
    pub first_cloud: PointCloud,
    pub temporal: TemporalToken,
    /// 1 right after reset; incremented per tracked frame.
    pub frame_index: usize,
    /// How many times a carried temporal value was fed back in.
    pub propagations: usize,
}

/// Gate matrix of one mixture layer for the last tracked frame.
#[derive(Clone, Debug)]
pub struct RoutedGates {
    pub layer: usize,
    /// `[1 + G_s, M]`.
    pub gates: Tensor,
}

/// The network wrapped as a [`Tracker`].
pub struct ModelTracker<'a> {
    model: &'a Model,
    state: Option<TrackerState>,
    last_routing: Vec<RoutedGates>,
    gate_totals: BTreeMap<usize, Vec<f64>>,
}

impl<'a> ModelTracker<'a> {
    pub fn new(model: &'a Model) -> Self {
        Self {
            model,
            state: None,
            last_routing: Vec::new(),
            gate_totals: BTreeMap::new(),
        }
    }

    pub fn state(&self) -> Option<&TrackerState> {
        self.state.as_ref()
    }

    pub fn last_routing(&self) -> &[RoutedGates] {
        &self.last_routing
    }

    /// Per mixture layer (zero-based), the summed gate of every expert over
    /// all routed tokens since construction.
    pub fn gate_totals(&self) -> &BTreeMap<usize, Vec<f64>> {
        &self.gate_totals
    }
}

impl ModelTracker<'_> {
    /// One network pass on `cloud` around the current previous box.
    fn step(&mut self, cloud: &PointCloud) -> Result<Prediction> {
        let model = self.model;
        let st = self
            .state
            .as_mut()
            .ok_or_else(|| Error::Contract("track called before reset".into()))?;
        let seed = st.frame_index as u64;
        let template = template_region(
            &model.config,
            (&st.first_cloud, &st.first_box),
            (&st.prev_cloud, &st.prev_box),
            seed,
        );
        let search = search_region(&model.config, cloud, &st.prev_box, seed);
        let mut g = Graph::new(&model.store);
        let carried = if model.config.temporal_propagation {
            st.temporal.carried.clone().map(|t| g.tape.constant(t))
        } else {
            None
        };
        if carried.is_some() {
            st.propagations += 1;
        }
        let out = model.frame_forward(&mut g, &template, &search, carried)?;
        let pred = localize(g.value(out.head), &out.search_centers, &st.prev_box)?;
        self.last_routing = out
            .routing
            .iter()
            .map(|r| RoutedGates {
                layer: r.layer,
                gates: g.value(r.routing.gates).clone(),
            })
            .collect();
        for r in &self.last_routing {
            let m = r.gates.last_dim();
            let totals = self.gate_totals.entry(r.layer).or_insert_with(|| vec![0.0; m]);
            for row in r.gates.data().chunks(m) {
                for (t, v) in totals.iter_mut().zip(row) {
                    *t += v;
                }
            }
        }
        st.temporal.carried = Some(g.value(out.temporal).clone());
        Ok(pred)
    }
}

impl Tracker for ModelTracker<'_> {
    /// Also runs the first frame through the network (its prediction is
    /// discarded) so that the second frame already receives a carried token.
    fn reset(&mut self, cloud: &PointCloud, first_box: Box3D) -> Result<()> {
        self.state = Some(TrackerState {
            prev_box: first_box,
            prev_cloud: cloud.clone(),
            first_box,
            first_cloud: cloud.clone(),
            temporal: TemporalToken {
                initial: self.model.temporal,
                carried: None,
            },
            frame_index: 1,
            propagations: 0,
        });
        self.last_routing.clear();
        self.step(cloud)?;
        Ok(())
    }

    fn track(&mut self, cloud: &PointCloud) -> Result<Prediction> {
        let pred = self.step(cloud)?;
        let st = self.state.as_mut().expect("state set by step");
        st.prev_box = pred.bbox;
        st.prev_cloud = cloud.clone();
        st.frame_index += 1;
        Ok(pred)
    }
}

/// Test double that replays known boxes. It cheats on purpose and exists to
/// check the evaluation harness.
pub struct OracleTracker {
    boxes: Vec<Box3D>,
    next: usize,
}

impl OracleTracker {
    pub fn new(seq: &Sequence) -> Self {
        Self {
            boxes: seq.frames.iter().map(|f| f.gt).collect(),
            next: 1,
        }
    }
}

impl Tracker for OracleTracker {
    fn reset(&mut self, _cloud: &PointCloud, _first_box: Box3D) -> Result<()> {
        self.next = 1;
        Ok(())
    }

    fn track(&mut self, _cloud: &PointCloud) -> Result<Prediction> {
        let b = *self
            .boxes
            .get(self.next)
            .ok_or_else(|| Error::Contract("oracle ran past the end of its sequence".into()))?;
        self.next += 1;
        Ok(Prediction {
            bbox: b,
            confidence: 1.0,
        })
    }
}

/// Always predicts the first box.
#[derive(Default)]
pub struct StaticTracker {
    first: Option<Box3D>,
}

impl Tracker for StaticTracker {
    fn reset(&mut self, _cloud: &PointCloud, first_box: Box3D) -> Result<()> {
        self.first = Some(first_box);
        Ok(())
    }

    fn track(&mut self, _cloud: &PointCloud) -> Result<Prediction> {
        let b = self
            .first
            .ok_or_else(|| Error::Contract("track called before reset".into()))?;
        Ok(Prediction {
            bbox: b,
            confidence: 1.0,
        })
    }
}

/// Extrapolates the last displacement and yaw change.
///
/// It is given the true box of the second frame as well as the first, the
/// least information from which a velocity can be formed; from the third
/// frame on it only dead-reckons from its own predictions.
pub struct ConstantVelocityTracker {
    second: Box3D,
    history: Vec<Box3D>,
}

impl ConstantVelocityTracker {
    pub fn new(seq: &Sequence) -> Result<Self> {
        let second = seq
            .frames
            .get(1)
            .ok_or_else(|| Error::Contract("constant-velocity baseline needs two frames".into()))?
            .gt;
        Ok(Self {
            second,
            history: Vec::new(),
        })
    }
}

impl Tracker for ConstantVelocityTracker {
    fn reset(&mut self, _cloud: &PointCloud, first_box: Box3D) -> Result<()> {
        self.history = vec![first_box];
        Ok(())
    }

    fn track(&mut self, _cloud: &PointCloud) -> Result<Prediction> {
        let next = match self.history.as_slice() {
            [] => return Err(Error::Contract("track called before reset".into())),
            [_] => self.second,
            [.., a, b] => Box3D {
                center: [0, 1, 2].map(|i| 2.0 * b.center[i] - a.center[i]),
                yaw: normalize_angle(b.yaw + normalize_angle(b.yaw - a.yaw)),
                size: b.size,
            },
        };
        self.history.push(next);
        Ok(Prediction {
            bbox: next,
            confidence: 1.0,
        })
    }
}

/// Runs a tracker over a sequence: one prediction per frame after the first.
pub fn track_sequence(tracker: &mut dyn Tracker, seq: &Sequence) -> Result<Vec<Prediction>> {
    let first = seq
        .frames
        .first()
        .ok_or(Error::EmptyInput("sequence without frames"))?;
    tracker.reset(&first.cloud, first.gt)?;
    seq.frames[1..].iter().map(|f| tracker.track(&f.cloud)).collect()
}
