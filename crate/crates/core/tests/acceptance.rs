//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the report always prints:
//! `cargo test --test acceptance`. The two desk-scale training runs take
//! several minutes each on one core.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use pctrack::checkpoint;
use pctrack::config::{MaskMode, ModelConfig, NamedPlacement, Placement, TemplateMode, TrainConfig};
use pctrack::embedding::embed_region;
use pctrack::encoder::{encoder_forward, moge_forward, router_topk, EncoderParams, MoGEParams};
use pctrack::evaluation::{evaluate, expert_stats, track_sequence, ModelTracker, Tracker, TrackerKind};
use pctrack::geometry::{farthest_point_sample, iou3d, Box3D, PointCloud};
use pctrack::learning::{clip_loss, head_forward, plan_clip, smoothed_endpoints, train, StepLog};
use pctrack::model::Model;
use pctrack::numerics::gradcheck::{check, relative_error};
use pctrack::numerics::{Tape, Tensor, Var};
use pctrack::params::{Graph, ParamStore};
use pctrack::synthdata::{make_desk_dataset, write_dataset, Dataset, Sequence};
use pctrack::temporal::propagate_temporal_token;
use pctrack::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Seed of the acceptance dataset and training runs.
const SEED: u64 = 0;
/// Optimizer steps of the desk-scale runs.
const DESK_STEPS: usize = 1500;
const GRAD_EPS: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-4;
const MARGIN: f64 = 15.0;
const DESK_BUDGET_SECS: f64 = 15.0 * 60.0;
const REFERENCE_TUNABLE: f64 = 5.30e6;

type Outcome = std::result::Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn lib<T>(r: Result<T>) -> std::result::Result<T, String> {
    r.map_err(|e| e.to_string())
}

// ---------------------------------------------------------------- 1

struct GradCase {
    name: &'static str,
    shapes: Vec<Vec<usize>>,
    f: Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>,
}

/// Weighted sum with fixed pseudo-random weights, so every output entry of
/// `y` reaches the scalar with a different coefficient.
fn probe(t: &mut Tape, y: Var) -> Result<Var> {
    let shape = t.value(y).shape().to_vec();
    let n: usize = shape.iter().product();
    let w: Vec<f64> = (0..n).map(|i| ((i * 7919 % 97) as f64 / 97.0) - 0.4).collect();
    let w = t.constant(Tensor::new(&shape, w)?);
    let m = t.mul(y, w)?;
    Ok(t.sum(m))
}

fn grad_cases() -> Vec<GradCase> {
    let case = |name, shapes: Vec<Vec<usize>>, f: Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>| GradCase {
        name,
        shapes,
        f,
    };
    vec![
        case("add", vec![vec![3, 4], vec![3, 4]], Box::new(|t, v| {
            let y = t.add(v[0], v[1])?;
            probe(t, y)
        })),
        case("add_broadcast", vec![vec![3, 4], vec![4]], Box::new(|t, v| {
            let y = t.add(v[0], v[1])?;
            probe(t, y)
        })),
        case("sub", vec![vec![2, 5], vec![2, 5]], Box::new(|t, v| {
            let y = t.sub(v[0], v[1])?;
            probe(t, y)
        })),
        case("mul_broadcast_column", vec![vec![4, 1], vec![4, 3]], Box::new(|t, v| {
            let y = t.mul(v[0], v[1])?;
            probe(t, y)
        })),
        case("scale", vec![vec![3, 3]], Box::new(|t, v| {
            let y = t.scale(v[0], -1.7);
            probe(t, y)
        })),
        case("matmul", vec![vec![3, 4], vec![4, 2]], Box::new(|t, v| {
            let y = t.matmul(v[0], v[1])?;
            probe(t, y)
        })),
        case("matmul_batched_shared", vec![vec![2, 3, 4], vec![4, 2]], Box::new(|t, v| {
            let y = t.matmul(v[0], v[1])?;
            probe(t, y)
        })),
        case("transpose", vec![vec![3, 5]], Box::new(|t, v| {
            let y = t.transpose(v[0])?;
            probe(t, y)
        })),
        case("softmax", vec![vec![3, 5]], Box::new(|t, v| {
            let y = t.softmax(v[0])?;
            probe(t, y)
        })),
        case("layer_norm", vec![vec![3, 6], vec![6], vec![6]], Box::new(|t, v| {
            let y = t.layer_norm(v[0], v[1], v[2], 1e-5)?;
            probe(t, y)
        })),
        case("gelu", vec![vec![4, 4]], Box::new(|t, v| {
            let y = t.gelu(v[0]);
            probe(t, y)
        })),
        case("relu", vec![vec![4, 4]], Box::new(|t, v| {
            let y = t.relu(v[0]);
            probe(t, y)
        })),
        case("slice_concat_rows", vec![vec![5, 3], vec![2, 3]], Box::new(|t, v| {
            let a = t.slice_rows(v[0], 1, 3)?;
            let y = t.concat_rows(&[v[1], a])?;
            probe(t, y)
        })),
        case("slice_concat_cols", vec![vec![3, 5], vec![3, 2]], Box::new(|t, v| {
            let a = t.slice_cols(v[0], 2, 2)?;
            let y = t.concat_cols(&[a, v[1]])?;
            probe(t, y)
        })),
        case("gather_scatter", vec![vec![5, 3]], Box::new(|t, v| {
            let a = t.gather_rows(v[0], &[4, 0, 4, 2])?;
            let y = t.scatter_rows(a, &[1, 3, 0, 5], 6)?;
            probe(t, y)
        })),
        case("reshape_max_pool", vec![vec![12, 3]], Box::new(|t, v| {
            let a = t.reshape(v[0], &[3, 4, 3])?;
            let y = t.max_pool(a)?;
            probe(t, y)
        })),
        case("mean", vec![vec![3, 4]], Box::new(|t, v| {
            let y = t.mean(v[0]);
            let y = t.mul(y, y)?;
            Ok(t.sum(y))
        })),
        case("top_k_softmax", vec![vec![4, 6]], Box::new(|t, v| {
            let y = t.top_k_softmax(v[0], 3)?;
            probe(t, y)
        })),
        case("bce_with_logits", vec![vec![6, 1]], Box::new(|t, v| {
            let y = t.bce_with_logits(v[0], &[1.0, 0.0, 1.0, 1.0, 0.0, 0.0])?;
            probe(t, y)
        })),
        case("huber", vec![vec![2, 4]], Box::new(|t, v| {
            let y = t.huber(v[0], &[0.1, -2.0, 3.0, 0.0, 0.5, 1.7, -0.2, -4.0], 1.0)?;
            probe(t, y)
        })),
    ]
}

/// Random input that keeps a distance from the kinks of ReLU, max and Huber.
fn smooth_input(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v: f64 = rng.random_range(-2.0..2.0);
            if v.abs() < 0.05 {
                v.signum() * 0.05 + v
            } else {
                v
            }
        })
        .collect();
    Tensor::new(shape, data).unwrap()
}

fn tiny_sequence() -> Sequence {
    let spec = pctrack::synthdata::CategorySpec::car();
    pctrack::synthdata::generate_sequence(&spec, 4, 3).unwrap()
}

/// Finite differences of the full clip loss with respect to the tunable
/// parameters of a tiny model whose zero-initialized parts were randomized.
fn clip_loss_gradcheck(seed: u64) -> std::result::Result<(f64, usize), String> {
    let mut model = lib(Model::new(ModelConfig::tiny()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<_> = model.store.iter().filter(|(_, p)| !p.frozen).map(|(id, _)| id).collect();
    for &id in &ids {
        for v in model.store.get_mut(id).value.data_mut() {
            *v += rng.random_range(-0.2..0.2);
        }
    }
    let cfg = TrainConfig {
        clip_length: 3,
        ..TrainConfig::default()
    };
    let seq = tiny_sequence();
    let plan = lib(plan_clip(&model, &cfg, &seq, 0, &mut rng))?;
    let loss_of = |store: &ParamStore| -> f64 {
        let mut m2 = Model::new(ModelConfig::tiny()).unwrap();
        m2.store = store.clone();
        let mut g = Graph::new(&m2.store);
        let l = clip_loss(&mut g, &m2, &plan, &cfg).unwrap();
        g.value(l.total).item().unwrap()
    };
    let mut g = Graph::new(&model.store);
    let l = lib(clip_loss(&mut g, &model, &plan, &cfg))?;
    let (grads, _) = lib(g.backward(l.total))?;
    // A central difference cannot resolve less than a few ulps of the loss
    // over 2ε; errors at that level count as agreement.
    let resolvable = 4.0 * f64::EPSILON * g.value(l.total).item().unwrap().abs() / (2.0 * GRAD_EPS);
    let floor = resolvable / GRAD_TOL;
    let (mut worst, mut checked) = (0.0f64, 0);
    let mut store = model.store.clone();
    for &id in &ids {
        let n = store.value(id).numel();
        let analytic = grads.get(id).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; n]);
        // A handful of coordinates per tensor keeps the check fast.
        for i in (0..n).step_by((n / 6).max(1)) {
            let orig = store.value(id).data()[i];
            store.get_mut(id).value.data_mut()[i] = orig + GRAD_EPS;
            let plus = loss_of(&store);
            store.get_mut(id).value.data_mut()[i] = orig - GRAD_EPS;
            let minus = loss_of(&store);
            store.get_mut(id).value.data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * GRAD_EPS);
            let err = relative_error(analytic[i], numeric);
            let scale = analytic[i].abs().max(numeric.abs()).max(floor);
            worst = worst.max(err.min((analytic[i] - numeric).abs() / scale));
            checked += 1;
        }
    }
    Ok((worst, checked))
}

fn criterion_1() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut cases = 0;
    let mut worst = (0.0f64, "");
    for c in grad_cases() {
        for _ in 0..6 {
            let inputs: Vec<Tensor> = c.shapes.iter().map(|s| smooth_input(s, &mut rng)).collect();
            let r = lib(check(&inputs, GRAD_EPS, |t, v| (c.f)(t, v)))?;
            if r.max_rel_err > worst.0 {
                worst = (r.max_rel_err, c.name);
            }
            cases += 1;
        }
    }
    let mut clip_worst = 0.0f64;
    for seed in 0..2 {
        let (w, _) = clip_loss_gradcheck(seed)?;
        clip_worst = clip_worst.max(w);
        cases += 1;
    }
    let secs = t0.elapsed().as_secs_f64();
    ensure(cases >= 100, || format!("only {cases} cases"))?;
    ensure(worst.0 < GRAD_TOL, || format!("{} rel err {:.2e}", worst.1, worst.0))?;
    ensure(clip_worst < GRAD_TOL, || format!("clip loss rel err {clip_worst:.2e}"))?;
    ensure(secs < 60.0, || format!("took {secs:.1}s"))?;
    Ok(format!(
        "{cases} cases, worst op rel err {:.1e} ({}), clip loss {:.1e}, {secs:.1}s",
        worst.0, worst.1, clip_worst
    ))
}

// ---------------------------------------------------------------- 3

fn criterion_3() -> Outcome {
    let mut model = lib(Model::new(ModelConfig::desk()))?;
    let mut zeroed = 0;
    let ids: Vec<_> = model
        .store
        .iter()
        .filter(|(_, p)| p.name.contains(".adapter_") || p.name.contains(".moge") || p.name.starts_with("mask."))
        .map(|(id, _)| id)
        .collect();
    for id in ids {
        model.store.get_mut(id).value.data_mut().fill(0.0);
        zeroed += 1;
    }
    let data = lib(make_desk_dataset(SEED))?;
    let f = &data.heldout[0].frames[0];
    let template = pctrack::model::template_region(&model.config, (&f.cloud, &f.gt), (&f.cloud, &f.gt), 1);
    let search = pctrack::model::search_region(&model.config, &data.heldout[0].frames[1].cloud, &f.gt, 1);

    let mut g = Graph::new(&model.store);
    let full = lib(model.frame_forward(&mut g, &template, &search, None))?;
    let full_head = g.value(full.head).clone();
    let full_temporal = g.value(full.temporal).clone();

    let plain_encoder = EncoderParams {
        layers: model
            .encoder
            .layers
            .iter()
            .map(|l| pctrack::encoder::EncoderLayer {
                backbone: l.backbone,
                adapters: None,
                moge: None,
            })
            .collect(),
        ..model.encoder.clone()
    };
    let cfg = &model.config;
    let mut g = Graph::new(&model.store);
    let t = lib(embed_region(&mut g, &template, cfg.template_groups, cfg.group_neighbors, &model.patch, &model.positional))?;
    let s = lib(embed_region(&mut g, &search, cfg.search_groups, cfg.group_neighbors, &model.patch, &model.positional))?;
    let temporal = g.param(model.temporal);
    let f0 = lib(g.tape.concat_rows(&[temporal, t.tokens, s.tokens]))?;
    let enc = lib(encoder_forward(&mut g, f0, model.layout(), &plain_encoder))?;
    let head = lib(head_forward(&mut g, enc.search, &model.head))?;

    ensure(g.value(head) == &full_head, || "search head outputs differ".into())?;
    ensure(g.value(enc.temporal) == &full_temporal, || "temporal output differs".into())?;
    Ok(format!("{zeroed} adapter/expert/β tensors zeroed; outputs identical to the plain transformer"))
}

// ---------------------------------------------------------------- 4

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 4);
    let mut rows_checked = 0;
    let mut worst_gate = 0.0f64;
    while rows_checked < 10_000 {
        let m = rng.random_range(1..=8);
        let k = rng.random_range(1..=m);
        let rows = 100;
        // Coarse values make exact ties common.
        let z: Vec<f64> = (0..rows * m)
            .map(|_| f64::from(rng.random_range(-6..=6i32)) * 0.25)
            .collect();
        let mut store = ParamStore::new();
        let mut eye = Tensor::zeros(&[m, m]);
        for i in 0..m {
            eye.data_mut()[i * m + i] = 1.0;
        }
        let router = store.add("router", eye, false);
        let mut g = Graph::new(&store);
        let zv = g.tape.constant(Tensor::new(&[rows, m], z.clone()).unwrap());
        let r = lib(router_topk(&mut g, zv, router, k))?;
        for (row, logits) in g.value(r.gates).data().chunks(m).zip(z.chunks(m)) {
            let want = common::topk_gates_by_sort(logits, k);
            let got_idx: Vec<usize> = (0..m).filter(|&i| row[i] > 0.0).collect();
            ensure(got_idx == common::topk_by_sort(logits, k), || format!("index sets differ on {logits:?}"))?;
            for (a, b) in row.iter().zip(&want) {
                worst_gate = worst_gate.max((a - b).abs());
            }
            rows_checked += 1;
        }
    }
    ensure(worst_gate < 1e-9, || format!("gate error {worst_gate:.2e}"))?;

    let mut instances = 0;
    let mut worst_mix = 0.0f64;
    for s in [1, 2, 5, 16] {
        for d in [1, 2, 7, 16] {
            for m in 1..=8 {
                let mut store = ParamStore::new();
                let p = MoGEParams::init(&mut store, "moge", d, d.div_ceil(8).max(1), m, m, &mut rng);
                let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
                for id in ids {
                    for v in store.get_mut(id).value.data_mut() {
                        *v = rng.random_range(-1.0..1.0);
                    }
                }
                let z = Tensor::randn(&[s, d], 1.0, &mut rng);
                let mut g = Graph::new(&store);
                let zv = g.tape.constant(z.clone());
                let (out, _) = lib(moge_forward(&mut g, zv, &p))?;
                let want = common::mixture(&store, &common::to_mat(&z), &p);
                worst_mix = worst_mix.max(common::max_abs_diff(&common::to_mat(g.value(out)), &want));
                instances += 1;
            }
        }
    }
    ensure(worst_mix < 1e-9, || format!("dense mixture error {worst_mix:.2e}"))?;
    Ok(format!(
        "{rows_checked} rows vs full sort (gate err {worst_gate:.1e}); {instances} K=M instances (err {worst_mix:.1e})"
    ))
}

// ---------------------------------------------------------------- 5

fn criterion_5(data: &Dataset) -> Outcome {
    let model = lib(Model::new(ModelConfig::desk()))?;
    let mut g = Graph::new(&model.store);
    let t0 = lib(propagate_temporal_token(&mut g, model.temporal, None))?;
    ensure(g.value(t0) == model.store.value(model.temporal), || "t=1 token is not the initial token".into())?;

    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 5);
    let carried = Tensor::randn(&[1, model.config.dim], 1.0, &mut rng);
    let c = g.tape.constant(carried.clone());
    let t2 = lib(propagate_temporal_token(&mut g, model.temporal, Some(c)))?;
    let want: Vec<f64> = model
        .store
        .value(model.temporal)
        .data()
        .iter()
        .zip(carried.data())
        .map(|(a, b)| a + b)
        .collect();
    ensure(g.value(t2).data() == want.as_slice(), || "carried token is not added exactly".into())?;

    let (a, b) = (&data.heldout[0], &data.heldout[20]);
    let mut fresh = ModelTracker::new(&model);
    let want = lib(track_sequence(&mut fresh, b))?;
    let mut reused = ModelTracker::new(&model);
    lib(track_sequence(&mut reused, a))?;
    let got = lib(track_sequence(&mut reused, b))?;
    ensure(got == want, || "reset tracker diverges from a fresh one".into())?;
    let props = reused.state().map(|s| s.propagations).unwrap_or(0);
    ensure(props == b.len() - 1, || format!("{props} propagations for {} frames", b.len()))?;

    let mut after_reset = ModelTracker::new(&model);
    lib(after_reset.reset(&b.frames[0].cloud, b.frames[0].gt))?;
    lib(after_reset.track(&b.frames[1].cloud))?;
    lib(after_reset.reset(&b.frames[0].cloud, b.frames[0].gt))?;
    let p = lib(after_reset.track(&b.frames[1].cloud))?;
    ensure(p == want[0], || "first prediction after reset differs".into())?;
    Ok(format!("identity exact, t=1 bitwise, reset reproduces a fresh tracker ({props} propagations)"))
}

// ---------------------------------------------------------------- 6

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 6);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let size = |rng: &mut ChaCha8Rng| [0, 1, 2].map(|_| rng.random_range(0.5..3.0));
        let a = Box3D::new([0.0, 0.0, 0.0], rng.random_range(-3.2..3.2), size(&mut rng)).unwrap();
        let center = [0, 1, 2].map(|_| rng.random_range(-1.0..1.0));
        let b = Box3D::new(center, rng.random_range(-3.2..3.2), size(&mut rng)).unwrap();
        let mc = common::monte_carlo_iou(&a, &b, 1_000_000, &mut rng);
        worst = worst.max((iou3d(&a, &b) - mc).abs());
    }
    ensure(worst < 0.01, || format!("Monte-Carlo disagreement {worst:.4}"))?;

    let unit = Box3D::canonical([1.0; 3]);
    let shifted = Box3D::new([0.5, 0.0, 0.0], 0.0, [1.0; 3]).unwrap();
    let third = iou3d(&unit, &shifted);
    ensure((third - 1.0 / 3.0).abs() < 1e-12, || format!("offset cubes give {third}"))?;
    let turned = Box3D::new([0.0; 3], std::f64::consts::FRAC_PI_4, [1.0; 3]).unwrap();
    let diag = iou3d(&unit, &turned);
    ensure((diag - 0.7071).abs() < 0.01, || format!("45° case gives {diag}"))?;

    for n in 1..=200usize {
        let pts: Vec<[f64; 3]> = (0..n).map(|_| [0, 1, 2].map(|_| rng.random_range(-5.0..5.0))).collect();
        let start = rng.random_range(0..n);
        let got = lib(farthest_point_sample(&PointCloud::new(pts.clone()), n, start))?;
        ensure(got == common::greedy_fps(&pts, n, start), || format!("FPS differs at N={n}"))?;
    }
    Ok(format!("MC max err {worst:.4} over 50 pairs; 1/3 and {diag:.4}; FPS N=1..200 exact"))
}

// ---------------------------------------------------------- 2, 7, 8, 9

struct DeskRun {
    model: Model,
    log: Vec<StepLog>,
    frozen_before: String,
    train_secs: f64,
}

fn desk_train(cfg: ModelConfig, data: &Dataset) -> std::result::Result<DeskRun, String> {
    let mut model = lib(Model::new(cfg))?;
    let frozen_before = model.store.frozen_digest();
    let train_cfg = TrainConfig {
        steps: DESK_STEPS,
        seed: SEED,
        ..TrainConfig::default()
    };
    let t0 = Instant::now();
    let log = lib(train(&mut model, &data.train, &train_cfg, |_| {}))?;
    Ok(DeskRun {
        model,
        log,
        frozen_before,
        train_secs: t0.elapsed().as_secs_f64(),
    })
}

fn head_only() -> ModelConfig {
    ModelConfig {
        adapter_layers: Placement::Named(NamedPlacement::None),
        moge_layers: Placement::Named(NamedPlacement::None),
        temporal_propagation: false,
        mask_mode: MaskMode::Fixed,
        freeze_embedding: true,
        ..ModelConfig::desk()
    }
}

fn criterion_2(run: &DeskRun) -> Outcome {
    let after = run.model.store.frozen_digest();
    ensure(run.log.len() >= 500, || format!("only {} steps", run.log.len()))?;
    ensure(after == run.frozen_before, || "frozen digest changed".into())?;
    Ok(format!(
        "{} frozen tensors, digest {}… unchanged after {} steps",
        run.model.store.iter().filter(|(_, p)| p.frozen).count(),
        &after[..12],
        run.log.len()
    ))
}

fn criterion_7(run: &DeskRun, data: &Dataset) -> std::result::Result<(String, f64), String> {
    let t0 = Instant::now();
    let model = lib(evaluate(Some(&run.model), &data.heldout, TrackerKind::Model, 1))?;
    let stat = lib(evaluate(None, &data.heldout, TrackerKind::Static, 1))?;
    let secs = run.train_secs + t0.elapsed().as_secs_f64();
    let (first, last) = smoothed_endpoints(&run.log, 50).ok_or("empty log")?;
    let margin = model.mean.success - stat.mean.success;
    let detail = format!(
        "success {:.2} vs static {:.2} (margin {margin:.2}); precision {:.2}; loss {first:.3} -> {last:.3}; {secs:.0}s",
        model.mean.success, stat.mean.success, model.mean.precision
    );
    ensure(margin >= MARGIN, || detail.clone())?;
    ensure(last < 0.5 * first, || detail.clone())?;
    ensure(secs < DESK_BUDGET_SECS, || detail.clone())?;
    Ok((detail, model.mean.success))
}

fn criterion_8(full_success: f64, data: &Dataset) -> Outcome {
    let run = desk_train(head_only(), data)?;
    let r = lib(evaluate(Some(&run.model), &data.heldout, TrackerKind::Model, 1))?;
    let detail = format!(
        "full {full_success:.2} vs head-only {:.2} ({} vs {} tunable)",
        r.mean.success,
        lib(Model::new(ModelConfig::desk()))?.tunable_count(),
        run.model.tunable_count()
    );
    ensure(full_success >= r.mean.success, || detail.clone())?;
    Ok(detail)
}

fn criterion_9(run: &DeskRun, data: &Dataset) -> Outcome {
    let hist = lib(expert_stats(&run.model, &data.heldout, 1))?;
    let mut sums: std::collections::BTreeMap<(String, usize), f64> = Default::default();
    for r in hist.rows() {
        ensure((0.0..=1.0).contains(&r.fraction), || format!("fraction {}", r.fraction))?;
        *sums.entry((r.category, r.layer)).or_default() += r.fraction;
    }
    let cats: std::collections::BTreeSet<_> = sums.keys().map(|k| k.0.clone()).collect();
    ensure(cats.len() == 4, || format!("categories {cats:?}"))?;
    let layers = run.model.config.moge_positions().unwrap().len();
    ensure(sums.len() == 4 * layers, || format!("{} rows groups", sums.len()))?;
    let worst = sums.values().map(|s| (s - 1.0).abs()).fold(0.0, f64::max);
    ensure(worst <= 1e-9, || format!("row sum off by {worst:.2e}"))?;
    Ok(format!("{} (category, layer) rows, worst |sum-1| {worst:.1e}", sums.len()))
}

// ---------------------------------------------------------------- 10

fn dir_bytes(dir: &std::path::Path) -> Vec<(std::path::PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn criterion_10(data: &Dataset) -> Outcome {
    let again = lib(make_desk_dataset(SEED))?;
    ensure(&again == data, || "regenerated dataset differs".into())?;
    let tmp = tempfile::TempDir::new().map_err(|e| e.to_string())?;
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    lib(write_dataset(data, &a))?;
    lib(write_dataset(&again, &b))?;
    ensure(dir_bytes(&a) == dir_bytes(&b), || "dataset files differ".into())?;

    let short = |cfg: ModelConfig| -> std::result::Result<Vec<u8>, String> {
        let mut m = lib(Model::new(cfg))?;
        let tc = TrainConfig {
            steps: 20,
            ..TrainConfig::default()
        };
        lib(train(&mut m, &data.train, &tc, |_| {}))?;
        Ok(checkpoint::to_bytes(&m))
    };
    let cfg = ModelConfig {
        template_mode: TemplateMode::Merged,
        ..ModelConfig::desk()
    };
    let c1 = short(cfg.clone())?;
    ensure(c1 == short(cfg)?, || "checkpoints differ".into())?;

    let model = lib(checkpoint::from_bytes(&c1))?;
    let seqs = &data.heldout[..16];
    let r1 = lib(evaluate(Some(&model), seqs, TrackerKind::Model, 1))?.to_json();
    let r2 = lib(evaluate(Some(&model), seqs, TrackerKind::Model, 1))?.to_json();
    ensure(r1 == r2, || "reports differ".into())?;
    let r3 = lib(evaluate(Some(&model), seqs, TrackerKind::Model, 3))?.to_json();
    ensure(r1 == r3, || "threaded report differs".into())?;
    Ok(format!(
        "dataset ({} files), checkpoint ({} bytes) and report identical",
        dir_bytes(&a).len(),
        c1.len()
    ))
}

// ---------------------------------------------------------------- 11

/// Tunable parameters counted by hand from the architecture.
fn closed_form(c: &ModelConfig) -> usize {
    let d = c.dim;
    let r = c.adapter_rank;
    let m = c.experts;
    let h = c.expert_hidden();
    let f = c.ffn_hidden();
    let adapters = c.adapter_positions().unwrap().len() * 2 * (2 * d * r + d);
    let experts = c.moge_positions().unwrap().len() * (d * m + m * (2 * d * h + h + d));
    let masks = match c.mask_mode {
        MaskMode::Fixed => 0,
        MaskMode::DynamicBeta => c.template_groups + c.search_groups,
        MaskMode::FullyLearnable => 3,
    };
    let embed = if c.freeze_embedding {
        0
    } else {
        (3 * d / 2 + d / 2 + d / 2 * d + d) + (3 * d + d + d * d + d)
    };
    let head = d * d + d + d * 5 + 5;
    let backbone = if c.full_finetune {
        c.layers * (4 * d + 4 * (d * d + d) + d * f + f + f * d + d)
    } else {
        0
    };
    adapters + experts + d + masks + embed + head + backbone
}

fn criterion_11() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 11);
    let placements = [
        Placement::all(),
        Placement::even(),
        Placement::Named(NamedPlacement::Odd),
        Placement::Named(NamedPlacement::Last),
        Placement::none(),
        Placement::Layers(vec![1, 3]),
    ];
    let modes = [MaskMode::Fixed, MaskMode::DynamicBeta, MaskMode::FullyLearnable];
    for i in 0..24 {
        let experts = rng.random_range(1..=8);
        let cfg = ModelConfig {
            layers: 3 + i % 2,
            dim: 8 * rng.random_range(1..=4),
            heads: 2,
            adapter_rank: rng.random_range(1..8),
            experts,
            top_k: rng.random_range(1..=experts),
            adapter_layers: placements[i % placements.len()].clone(),
            moge_layers: placements[(i * 5 + 1) % placements.len()].clone(),
            mask_mode: modes[i % 3],
            full_finetune: i % 4 == 3,
            freeze_embedding: i % 3 == 1,
            template_groups: rng.random_range(4..=16),
            search_groups: rng.random_range(4..=16),
            template_points: 16,
            search_points: 16,
            group_neighbors: 4,
            ..ModelConfig::desk()
        };
        let model = lib(Model::new(cfg.clone()))?;
        let want = closed_form(&cfg);
        ensure(model.tunable_count() == want, || {
            format!("config {i}: model {} vs formula {want}", model.tunable_count())
        })?;
        ensure(lib(model.budget())?.total() == want, || format!("config {i}: budget disagrees"))?;
    }
    let desk = lib(Model::new(ModelConfig::desk()))?;
    ensure(desk.tunable_count() == closed_form(&desk.config), || "desk count".into())?;
    let large = ModelConfig::full_scale();
    let big = lib(Model::new(large.clone()))?;
    ensure(big.tunable_count() == closed_form(&large), || "full-scale count".into())?;
    let b = lib(big.budget())?;
    Ok(format!(
        "24 random configs + desk ({}) match; full-scale {} ({:.2} M; adapters {:.2} M, experts {:.2} M) vs reference {:.2} M (informational)",
        desk.tunable_count(),
        big.tunable_count(),
        big.tunable_count() as f64 / 1e6,
        b.adapters as f64 / 1e6,
        b.moge as f64 / 1e6,
        REFERENCE_TUNABLE / 1e6
    ))
}

// ---------------------------------------------------------------- driver

fn guarded<T>(f: impl FnOnce() -> std::result::Result<T, String>) -> std::result::Result<T, String> {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(r) => r,
        Err(p) => Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into())),
    }
}

fn main() {
    let mut results: Vec<(u8, &str, Outcome)> = Vec::new();
    let data = make_desk_dataset(SEED).expect("desk dataset");

    results.push((1, "gradient suite", guarded(criterion_1)));
    results.push((3, "baseline reduction", guarded(criterion_3)));
    results.push((4, "routing correctness", guarded(criterion_4)));
    results.push((5, "temporal contract", guarded(|| criterion_5(&data))));
    results.push((6, "geometry oracles", guarded(criterion_6)));

    match guarded(|| desk_train(ModelConfig::desk(), &data)) {
        Ok(run) => {
            results.push((2, "frozen backbone immutability", guarded(|| criterion_2(&run))));
            let c7 = guarded(|| criterion_7(&run, &data));
            let c8 = match &c7 {
                Ok((_, success)) => guarded(|| criterion_8(*success, &data)),
                Err(_) => Err("needs the criterion 7 model".into()),
            };
            results.push((7, "desk-scale learning", c7.map(|(d, _)| d)));
            results.push((8, "component toggle sanity", c8));
            results.push((9, "expert activation report", guarded(|| criterion_9(&run, &data))));
        }
        Err(why) => {
            let names = [
                (2, "frozen backbone immutability"),
                (7, "desk-scale learning"),
                (8, "component toggle sanity"),
                (9, "expert activation report"),
            ];
            for (id, name) in names {
                results.push((id, name, Err(format!("desk training failed: {why}"))));
            }
        }
    }
    results.push((10, "determinism", guarded(|| criterion_10(&data))));
    results.push((11, "tunable-parameter accounting", guarded(criterion_11)));

    results.sort_by_key(|r| r.0);
    let mut failed = Vec::new();
    for (id, name, r) in &results {
        match r {
            Ok(detail) => println!("PASS {id:>2} {name}: {detail}"),
            Err(why) => {
                println!("FAIL {id:>2} {name}: {why}");
                failed.push(*id);
            }
        }
    }
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
