//! Independent reference implementations used by the integration tests.
//!
//! Everything here is written as plain loops over `Vec<Vec<f64>>`, sharing no
//! code with the library beyond reading parameter values.

#![allow(dead_code)]

use pctrack::encoder::{EncoderParams, MoGEParams};
use pctrack::geometry::Box3D;
use pctrack::numerics::Tensor;
use pctrack::params::{ParamId, ParamStore};
use rand::Rng;

pub type Mat = Vec<Vec<f64>>;

pub fn to_mat(t: &Tensor) -> Mat {
    let cols = t.last_dim();
    t.data().chunks(cols).map(<[f64]>::to_vec).collect()
}

pub fn from_mat(m: &Mat) -> Tensor {
    Tensor::from_rows(m).unwrap()
}

fn w(store: &ParamStore, id: ParamId) -> Mat {
    let t = store.value(id);
    if t.ndim() == 1 {
        vec![t.data().to_vec()]
    } else {
        to_mat(t)
    }
}

fn row_vec(store: &ParamStore, id: ParamId) -> Vec<f64> {
    store.value(id).data().to_vec()
}

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            let mut s = 0.0;
            for t in 0..k {
                s += a[i][t] * b[t][j];
            }
            out[i][j] = s;
        }
    }
    out
}

fn affine(x: &Mat, wm: &Mat, b: &[f64]) -> Mat {
    let mut y = matmul(x, wm);
    for row in &mut y {
        for (v, bb) in row.iter_mut().zip(b) {
            *v += bb;
        }
    }
    y
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

fn map(x: &Mat, f: impl Fn(f64) -> f64) -> Mat {
    x.iter().map(|r| r.iter().map(|&v| f(v)).collect()).collect()
}

fn add(a: &Mat, b: &Mat) -> Mat {
    a.iter()
        .zip(b)
        .map(|(r, s)| r.iter().zip(s).map(|(x, y)| x + y).collect())
        .collect()
}

fn layer_norm(x: &Mat, gain: &[f64], bias: &[f64], eps: f64) -> Mat {
    x.iter()
        .map(|r| {
            let n = r.len() as f64;
            let mean = r.iter().sum::<f64>() / n;
            let var = r.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let inv = 1.0 / (var + eps).sqrt();
            r.iter()
                .enumerate()
                .map(|(j, v)| (v - mean) * inv * gain[j] + bias[j])
                .collect()
        })
        .collect()
}

pub fn softmax(r: &[f64]) -> Vec<f64> {
    let m = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = r.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// Indices of the `k` largest entries by a full sort, ties to the lower index.
pub fn topk_by_sort(r: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..r.len()).collect();
    idx.sort_by(|&a, &b| r[b].total_cmp(&r[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx.sort_unstable();
    idx
}

/// Gates from a full sort: softmax over the selected logits, zero elsewhere.
pub fn topk_gates_by_sort(r: &[f64], k: usize) -> Vec<f64> {
    let idx = topk_by_sort(r, k);
    let sel: Vec<f64> = idx.iter().map(|&i| r[i]).collect();
    let p = softmax(&sel);
    let mut out = vec![0.0; r.len()];
    for (i, v) in idx.iter().zip(p) {
        out[*i] = v;
    }
    out
}

fn attention(store: &ParamStore, x: &Mat, l: &pctrack::encoder::TransformerLayerParams, heads: usize) -> Mat {
    let q = affine(x, &w(store, l.wq), &row_vec(store, l.bq));
    let k = affine(x, &w(store, l.wk), &row_vec(store, l.bk));
    let v = affine(x, &w(store, l.wv), &row_vec(store, l.bv));
    let (n, d) = (x.len(), x[0].len());
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut cat = vec![vec![0.0; d]; n];
    for h in 0..heads {
        for i in 0..n {
            let scores: Vec<f64> = (0..n)
                .map(|j| (0..dh).map(|t| q[i][h * dh + t] * k[j][h * dh + t]).sum::<f64>() * scale)
                .collect();
            let a = softmax(&scores);
            for t in 0..dh {
                cat[i][h * dh + t] = (0..n).map(|j| a[j] * v[j][h * dh + t]).sum();
            }
        }
    }
    affine(&cat, &w(store, l.wo), &row_vec(store, l.bo))
}

fn ffn(store: &ParamStore, x: &Mat, w1: ParamId, b1: ParamId, w2: ParamId, b2: ParamId) -> Mat {
    let h = map(&affine(x, &w(store, w1), &row_vec(store, b1)), gelu);
    affine(&h, &w(store, w2), &row_vec(store, b2))
}

fn adapter(store: &ParamStore, x: &Mat, p: &pctrack::encoder::AdapterParams) -> Mat {
    let score = matmul(x, &w(store, p.w_score));
    let up = matmul(&map(&matmul(x, &w(store, p.w_down)), gelu), &w(store, p.w_up));
    up.iter()
        .zip(&score)
        .map(|(r, s)| r.iter().map(|v| v * s[0].max(0.0)).collect())
        .collect()
}

/// Mixture output for each row of `z`, routing by a full sort.
pub fn mixture(store: &ParamStore, z: &Mat, p: &MoGEParams) -> Mat {
    let logits = matmul(z, &w(store, p.router));
    let mut out = vec![vec![0.0; z[0].len()]; z.len()];
    for (i, row) in z.iter().enumerate() {
        let gates = topk_gates_by_sort(&logits[i], p.top_k);
        for (m, e) in p.experts.iter().enumerate() {
            if gates[m] == 0.0 {
                continue;
            }
            let y = ffn(store, &vec![row.clone()], e.w1, e.b1, e.w2, e.b2);
            for (o, v) in out[i].iter_mut().zip(&y[0]) {
                *o += gates[m] * v;
            }
        }
    }
    out
}

/// Straight-line encoder over `[1 + t + s, d]` tokens.
pub fn encoder(store: &ParamStore, enc: &EncoderParams, x: &Mat, template: usize) -> Mat {
    let mut x = x.clone();
    for layer in &enc.layers {
        let l = &layer.backbone;
        let n1 = layer_norm(&x, &row_vec(store, l.ln1_gain), &row_vec(store, l.ln1_bias), enc.eps);
        let mut hid = add(&attention(store, &n1, l, enc.heads), &x);
        if let Some((a1, _)) = &layer.adapters {
            hid = add(&hid, &adapter(store, &n1, a1));
        }
        let n2 = layer_norm(&hid, &row_vec(store, l.ln2_gain), &row_vec(store, l.ln2_bias), enc.eps);
        let mut out = add(&ffn(store, &n2, l.ffn_w1, l.ffn_b1, l.ffn_w2, l.ffn_b2), &hid);
        if let Some((_, a2)) = &layer.adapters {
            out = add(&out, &adapter(store, &n2, a2));
        }
        if let Some(moge) = &layer.moge {
            let rows: Vec<usize> = std::iter::once(0).chain(1 + template..out.len()).collect();
            let z: Mat = rows.iter().map(|&r| out[r].clone()).collect();
            let mixed = mixture(store, &z, moge);
            for (r, m) in rows.iter().zip(mixed) {
                for (o, v) in out[*r].iter_mut().zip(m) {
                    *o += v;
                }
            }
        }
        x = out;
    }
    x
}

/// Greedy farthest point sampling recomputing every distance from scratch.
pub fn greedy_fps(points: &[[f64; 3]], n: usize, start: usize) -> Vec<usize> {
    let d2 = |a: [f64; 3], b: [f64; 3]| (0..3).map(|i| (a[i] - b[i]) * (a[i] - b[i])).sum::<f64>();
    let mut chosen = vec![start];
    while chosen.len() < n.min(points.len()) {
        let mut best = (f64::NEG_INFINITY, usize::MAX);
        for (i, &p) in points.iter().enumerate() {
            if chosen.contains(&i) {
                continue;
            }
            let m = chosen.iter().map(|&c| d2(p, points[c])).fold(f64::INFINITY, f64::min);
            if m > best.0 {
                best = (m, i);
            }
        }
        chosen.push(best.1);
    }
    chosen
}

/// Monte-Carlo IoU: uniform samples in the joint bounding volume, counted by
/// plain containment.
pub fn monte_carlo_iou<R: Rng>(a: &Box3D, b: &Box3D, samples: usize, rng: &mut R) -> f64 {
    let reach = |x: &Box3D| 0.5 * (x.size[0].hypot(x.size[1]));
    let lo = [
        (a.center[0] - reach(a)).min(b.center[0] - reach(b)),
        (a.center[1] - reach(a)).min(b.center[1] - reach(b)),
        (a.center[2] - 0.5 * a.size[2]).min(b.center[2] - 0.5 * b.size[2]),
    ];
    let hi = [
        (a.center[0] + reach(a)).max(b.center[0] + reach(b)),
        (a.center[1] + reach(a)).max(b.center[1] + reach(b)),
        (a.center[2] + 0.5 * a.size[2]).max(b.center[2] + 0.5 * b.size[2]),
    ];
    let inside = |bx: &Box3D, p: [f64; 3]| {
        let (s, c) = bx.yaw.sin_cos();
        let (dx, dy) = (p[0] - bx.center[0], p[1] - bx.center[1]);
        let lx = c * dx + s * dy;
        let ly = -s * dx + c * dy;
        lx.abs() <= 0.5 * bx.size[0] && ly.abs() <= 0.5 * bx.size[1] && (p[2] - bx.center[2]).abs() <= 0.5 * bx.size[2]
    };
    let (mut both, mut either) = (0usize, 0usize);
    for _ in 0..samples {
        let p = [0, 1, 2].map(|i| rng.random_range(lo[i]..hi[i]));
        let (ia, ib) = (inside(a, p), inside(b, p));
        both += usize::from(ia && ib);
        either += usize::from(ia || ib);
    }
    if either == 0 {
        0.0
    } else {
        both as f64 / either as f64
    }
}

pub fn max_abs_diff(a: &Mat, b: &Mat) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
