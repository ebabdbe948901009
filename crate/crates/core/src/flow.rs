//! Flow matching on the projected disk.
//!
//! A velocity network `u(x, t | c)` transports a standard 2D Gaussian to the
//! exit-direction distribution. Sampling integrates the ODE with forward
//! Euler; the density of a point is obtained by inverting those same Euler
//! steps one at a time (Newton on `z + dt u(z) = y`) and accumulating the
//! exact 2x2 log-determinants, so `flow_pdf` is the density of exactly the
//! map `flow_sample` applies.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{disk_point_to_dir, Dataset};
use crate::error::{Error, Result};
use crate::geom::{gaussian2d_log_pdf, gaussian2d_pdf, sample_uniform_hemisphere, Direction, DiskPoint, Rng};
use crate::nn::{Adam, DenseNet, NetLayout, Scalar};

pub const FEATURE_DIM: usize = 32;
/// Incident direction (3) and one-hot channel (3).
pub const BASE_COND_DIM: usize = 6;
pub const DEFAULT_STEPS: usize = 50;
pub const REFLOW_STEPS: usize = 10;
pub const MAX_REDRAWS: usize = 32;
pub const CLAMP_RADIUS: f64 = 1.0 - 1e-6;

const INFER_CHUNK: usize = 256;
const GRAD_CHUNK: usize = 256;
const NEWTON_TOL: f64 = 1e-7;
const NEWTON_MAX_ITERS: usize = 12;
const TAG_SAMPLE: u64 = 0x666c_7773;
const TAG_REFLOW: u64 = 0x7266_6c77;

static CLAMPED: AtomicU64 = AtomicU64::new(0);
static SINGULAR: AtomicU64 = AtomicU64::new(0);

/// Process-wide diagnostics: samples clamped onto the disk after exhausting
/// redraws, and pdf queries that hit a non-invertible or unresolved step.
pub fn diagnostics() -> (u64, u64) {
    (CLAMPED.load(Ordering::Relaxed), SINGULAR.load(Ordering::Relaxed))
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowModel {
    pub net: DenseNet<f32>,
    /// Euler steps used for sampling and density evaluation.
    pub steps: usize,
    pub sv: bool,
}

pub fn cond_dim(sv: bool) -> usize {
    BASE_COND_DIM + if sv { FEATURE_DIM } else { 0 }
}

/// Point (2) and time (1) precede the condition.
pub fn input_dim(sv: bool) -> usize {
    3 + cond_dim(sv)
}

impl FlowModel {
    pub fn layout(sv: bool, hidden: &[usize], residual: Option<usize>) -> NetLayout {
        let l = NetLayout::mlp(input_dim(sv), hidden, 2);
        match residual {
            Some(r) => l.with_residual(r),
            None => l,
        }
    }

    pub fn new(net: DenseNet<f32>, steps: usize, sv: bool) -> Result<Self> {
        if net.input_size() != input_dim(sv) || net.output_size() != 2 {
            return Err(Error::Shape(format!(
                "flow network maps {} -> {}, expected {} -> 2",
                net.input_size(),
                net.output_size(),
                input_dim(sv)
            )));
        }
        if steps == 0 {
            return Err(Error::Invalid("flow needs at least one step".into()));
        }
        Ok(FlowModel { net, steps, sv })
    }

    pub fn cond_dim(&self) -> usize {
        cond_dim(self.sv)
    }

    fn check_cond(&self, c: &FlowCond) -> Result<()> {
        if c.values.len() != self.cond_dim() {
            return Err(if self.sv && c.values.len() == BASE_COND_DIM {
                Error::MissingFeature
            } else {
                Error::Shape(format!("condition has {} values, model expects {}", c.values.len(), self.cond_dim()))
            });
        }
        Ok(())
    }
}

/// Encoded conditioning vector: incident direction, one-hot channel and,
/// for spatially varying models, the texture feature.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowCond {
    values: Vec<f32>,
}

impl FlowCond {
    pub fn new(wi: Direction, channel: usize, feature: Option<&[f32]>) -> Result<Self> {
        if channel > 2 {
            return Err(Error::Invalid(format!("channel {channel} out of range")));
        }
        let mut values = vec![wi.x() as f32, wi.y() as f32, wi.z() as f32, 0.0, 0.0, 0.0];
        values[3 + channel] = 1.0;
        if let Some(f) = feature {
            if f.len() != FEATURE_DIM {
                return Err(Error::Shape(format!("feature has {} values, expected {FEATURE_DIM}", f.len())));
            }
            values.extend_from_slice(f);
        }
        Ok(FlowCond { values })
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }
}

/// Conditions for a batch: one shared, or one per row.
#[derive(Clone, Copy)]
pub enum Conds<'a> {
    Shared(&'a FlowCond),
    PerRow(&'a [FlowCond]),
}

impl<'a> Conds<'a> {
    fn get(&self, i: usize) -> &'a FlowCond {
        match *self {
            Conds::Shared(c) => c,
            Conds::PerRow(cs) => &cs[i],
        }
    }

    fn check(&self, model: &FlowModel, n: usize) -> Result<()> {
        match *self {
            Conds::Shared(c) => model.check_cond(c),
            Conds::PerRow(cs) => {
                if cs.len() != n {
                    return Err(Error::Shape(format!("{} conditions for {n} rows", cs.len())));
                }
                cs.iter().try_for_each(|c| model.check_cond(c))
            }
        }
    }
}

/// Network input rows `[x, y, t, cond...]` for a set of condition rows.
struct InputRows {
    width: usize,
    data: Vec<f32>,
}

impl InputRows {
    fn new(conds: impl Iterator<Item = impl AsRef<[f32]>>, width: usize) -> Self {
        let mut data = Vec::new();
        for c in conds {
            data.extend_from_slice(&[0.0, 0.0, 0.0]);
            data.extend_from_slice(c.as_ref());
        }
        debug_assert_eq!(data.len() % width, 0);
        InputRows { width, data }
    }

    fn rows(&self) -> usize {
        self.data.len() / self.width
    }

    fn set(&mut self, row: usize, x: [f64; 2], t: f64) {
        let r = &mut self.data[row * self.width..row * self.width + 3];
        r[0] = x[0] as f32;
        r[1] = x[1] as f32;
        r[2] = t as f32;
    }
}

/// Bookkeeping of a batched sampling call.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SampleStats {
    pub samples: u64,
    /// Base draws integrated, including redraws.
    pub draws: u64,
    pub off_disk: u64,
    pub clamped: u64,
    /// Velocity network evaluations (one per row per Euler step).
    pub net_evals: u64,
}

impl SampleStats {
    fn merge(&mut self, o: &SampleStats) {
        self.samples += o.samples;
        self.draws += o.draws;
        self.off_disk += o.off_disk;
        self.clamped += o.clamped;
        self.net_evals += o.net_evals;
    }

    pub fn off_disk_fraction(&self) -> f64 {
        self.off_disk as f64 / self.draws.max(1) as f64
    }

    pub fn evals_per_sample(&self) -> f64 {
        self.net_evals as f64 / self.samples.max(1) as f64
    }
}

/// Forward Euler integration of the rows of `input` from the given base points.
fn integrate(model: &FlowModel, input: &mut InputRows, x: &mut [[f64; 2]]) {
    let n = model.steps;
    let dt = 1.0 / n as f64;
    for k in 0..n {
        let t = k as f64 * dt;
        for (r, p) in x.iter().enumerate() {
            input.set(r, *p, t);
        }
        let u = model.net.forward_batch(&input.data, input.rows()).expect("input shape fixed by construction");
        for (r, p) in x.iter_mut().enumerate() {
            p[0] += dt * u[2 * r] as f64;
            p[1] += dt * u[2 * r + 1] as f64;
        }
    }
}

/// Pushes base points through the flow without any disk handling.
pub fn flow_transport(model: &FlowModel, conds: Conds, x0: &[[f64; 2]]) -> Result<Vec<[f64; 2]>> {
    conds.check(model, x0.len())?;
    let out: Vec<Vec<[f64; 2]>> = x0
        .par_chunks(INFER_CHUNK)
        .enumerate()
        .map(|(ci, chunk)| {
            let base = ci * INFER_CHUNK;
            let mut input =
                InputRows::new((0..chunk.len()).map(|i| conds.get(base + i).values()), input_dim(model.sv));
            let mut x = chunk.to_vec();
            integrate(model, &mut input, &mut x);
            x
        })
        .collect();
    Ok(out.concat())
}

fn sample_chunk(model: &FlowModel, conds: Conds, base: usize, n: usize, rng: &mut Rng) -> (Vec<(DiskPoint, [f64; 2])>, SampleStats) {
    let mut stats = SampleStats { samples: n as u64, ..Default::default() };
    let mut result = vec![(DiskPoint::new(0.0, 0.0), [0.0; 2]); n];
    let mut pending: Vec<usize> = (0..n).collect();
    let mut last = vec![[0.0; 2]; n];
    for _round in 0..MAX_REDRAWS {
        if pending.is_empty() {
            break;
        }
        let mut x: Vec<[f64; 2]> = pending
            .iter()
            .map(|_| {
                let g = crate::geom::gaussian2d_sample(rng);
                [g.u, g.v]
            })
            .collect();
        let mut input = InputRows::new(pending.iter().map(|&i| conds.get(base + i).values()), input_dim(model.sv));
        integrate(model, &mut input, &mut x);
        stats.draws += pending.len() as u64;
        stats.net_evals += (pending.len() * model.steps) as u64;
        let mut still = Vec::new();
        for (&i, p) in pending.iter().zip(&x) {
            if p[0] * p[0] + p[1] * p[1] <= 1.0 {
                result[i] = (DiskPoint::new(p[0], p[1]), *p);
            } else {
                stats.off_disk += 1;
                last[i] = *p;
                still.push(i);
            }
        }
        pending = still;
    }
    for i in pending {
        let p = last[i];
        let s = CLAMP_RADIUS / (p[0] * p[0] + p[1] * p[1]).sqrt();
        result[i] = (DiskPoint::new(p[0] * s, p[1] * s), p);
        stats.clamped += 1;
    }
    CLAMPED.fetch_add(stats.clamped, Ordering::Relaxed);
    (result, stats)
}

/// Draws `n` directions. Rows are processed in fixed chunks with one random
/// stream each, so results do not depend on the number of threads. Densities
/// are not computed; use [`flow_pdf_batch`] on the points when needed.
pub fn flow_sample_batch(model: &FlowModel, conds: Conds, n: usize, seed: u64) -> Result<(Vec<DiskPoint>, SampleStats)> {
    conds.check(model, n)?;
    let n_chunks = n.div_ceil(INFER_CHUNK);
    let parts: Vec<(Vec<(DiskPoint, [f64; 2])>, SampleStats)> = (0..n_chunks)
        .into_par_iter()
        .map(|k| {
            let mut rng = Rng::keyed(seed, &[TAG_SAMPLE, k as u64]);
            let len = INFER_CHUNK.min(n - k * INFER_CHUNK);
            sample_chunk(model, conds, k * INFER_CHUNK, len, &mut rng)
        })
        .collect();
    let mut stats = SampleStats::default();
    let mut points = Vec::with_capacity(n);
    for (p, s) in &parts {
        stats.merge(s);
        points.extend(p.iter().map(|(d, _)| *d));
    }
    Ok((points, stats))
}

/// One direction and its density per projected solid angle.
pub fn flow_sample(model: &FlowModel, cond: &FlowCond, rng: &mut Rng) -> Result<(DiskPoint, f64)> {
    model.check_cond(cond)?;
    let (pts, _) = sample_chunk(model, Conds::Shared(cond), 0, 1, rng);
    let pdf = flow_pdf_batch(model, Conds::Shared(cond), &[pts[0].0])?;
    Ok((pts[0].0, pdf[0]))
}

/// Density per projected solid angle of the discretized flow at `wo`.
pub fn flow_pdf(model: &FlowModel, cond: &FlowCond, wo: DiskPoint) -> Result<f64> {
    Ok(flow_pdf_batch(model, Conds::Shared(cond), &[wo])?[0])
}

pub fn flow_pdf_batch(model: &FlowModel, conds: Conds, points: &[DiskPoint]) -> Result<Vec<f64>> {
    conds.check(model, points.len())?;
    let out: Vec<Vec<f64>> = points
        .par_chunks(INFER_CHUNK)
        .enumerate()
        .map(|(ci, chunk)| {
            let base = ci * INFER_CHUNK;
            pdf_chunk(model, conds, base, chunk)
        })
        .collect();
    Ok(out.concat())
}

fn det_step(j: [f32; 4], dt: f64) -> f64 {
    let [a, b, c, d] = j.map(|v| v as f64);
    (1.0 + dt * a) * (1.0 + dt * d) - dt * dt * b * c
}

fn pdf_chunk(model: &FlowModel, conds: Conds, base: usize, points: &[DiskPoint]) -> Vec<f64> {
    let n = model.steps;
    let dt = 1.0 / n as f64;
    let width = input_dim(model.sv);
    let mut out = vec![0.0; points.len()];
    // Rows still being inverted and their state.
    let mut active: Vec<usize> = (0..points.len()).filter(|&i| points[i].radius_sq() <= 1.0).collect();
    let mut y: Vec<[f64; 2]> = active.iter().map(|&i| [points[i].u, points[i].v]).collect();
    let mut log_det = vec![0.0; active.len()];

    // Velocity at the current point and the later time, used as the initial
    // guess for each inverse step.
    let mut input = InputRows::new(active.iter().map(|&i| conds.get(base + i).values()), width);
    for (r, p) in y.iter().enumerate() {
        input.set(r, *p, 1.0);
    }
    let mut u_prev = if active.is_empty() {
        Vec::new()
    } else {
        model.net.forward_batch(&input.data, input.rows()).expect("input shape fixed by construction")
    };

    for k in (0..n).rev() {
        if active.is_empty() {
            break;
        }
        let t = k as f64 * dt;
        let mut z: Vec<[f64; 2]> = y
            .iter()
            .enumerate()
            .map(|(r, p)| [p[0] - dt * u_prev[2 * r] as f64, p[1] - dt * u_prev[2 * r + 1] as f64])
            .collect();
        let m = active.len();
        let mut jac = vec![[0.0f32; 4]; m];
        let mut u_at = vec![0.0f32; 2 * m];
        let mut todo: Vec<usize> = (0..m).collect();
        for _ in 0..NEWTON_MAX_ITERS {
            if todo.is_empty() {
                break;
            }
            let mut sub = InputRows::new(todo.iter().map(|&r| conds.get(base + active[r]).values()), width);
            for (s, &r) in todo.iter().enumerate() {
                sub.set(s, z[r], t);
            }
            let (u, j) = model.net.jacobian_2d_batch(&sub.data, sub.rows()).expect("input shape fixed by construction");
            let mut next = Vec::new();
            for (s, &r) in todo.iter().enumerate() {
                jac[r] = j[s];
                u_at[2 * r] = u[2 * s];
                u_at[2 * r + 1] = u[2 * s + 1];
                let res = [
                    z[r][0] + dt * u[2 * s] as f64 - y[r][0],
                    z[r][1] + dt * u[2 * s + 1] as f64 - y[r][1],
                ];
                let [a, b, c, d] = j[s].map(|v| dt * v as f64);
                let (a, d) = (1.0 + a, 1.0 + d);
                let det = a * d - b * c;
                if det.abs() < 1e-300 {
                    continue;
                }
                let dz = [(d * res[0] - b * res[1]) / det, (a * res[1] - c * res[0]) / det];
                z[r][0] -= dz[0];
                z[r][1] -= dz[1];
                if dz[0].abs().max(dz[1].abs()) > NEWTON_TOL {
                    next.push(r);
                }
            }
            todo = next;
        }
        // Rows still in `todo` have no verified preimage.
        let mut failed = vec![false; m];
        for &r in &todo {
            failed[r] = true;
        }
        let mut keep = Vec::with_capacity(m);
        for r in 0..m {
            let det = det_step(jac[r], dt);
            if failed[r] || det <= 0.0 || !z[r][0].is_finite() || !z[r][1].is_finite() {
                SINGULAR.fetch_add(1, Ordering::Relaxed);
                continue;
            }
            log_det[r] += det.ln();
            keep.push(r);
        }
        if keep.len() != m {
            active = keep.iter().map(|&r| active[r]).collect();
            log_det = keep.iter().map(|&r| log_det[r]).collect();
            u_at = keep.iter().flat_map(|&r| [u_at[2 * r], u_at[2 * r + 1]]).collect();
            z = keep.iter().map(|&r| z[r]).collect();
        }
        y = z;
        u_prev = u_at;
    }
    for (r, &i) in active.iter().enumerate() {
        let x0 = DiskPoint::new(y[r][0], y[r][1]);
        out[i] = (gaussian2d_log_pdf(x0) - log_det[r]).exp();
    }
    out
}

/// Trainable grid of feature vectors, looked up bilinearly at texel centres
/// with clamp-to-edge addressing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeuralTexture {
    pub width: usize,
    pub height: usize,
    pub dim: usize,
    /// `data[(y * width + x) * dim + f]`.
    pub data: Vec<f32>,
}

impl NeuralTexture {
    pub fn zeros(width: usize, height: usize, dim: usize) -> Result<Self> {
        if width == 0 || height == 0 || dim == 0 {
            return Err(Error::Shape(format!("texture {width}x{height}x{dim}")));
        }
        Ok(NeuralTexture { width, height, dim, data: vec![0.0; width * height * dim] })
    }

    pub fn init(width: usize, height: usize, rng: &mut Rng) -> Result<Self> {
        let mut t = NeuralTexture::zeros(width, height, FEATURE_DIM)?;
        t.data.iter_mut().for_each(|v| *v = (0.1 * rng.normal()) as f32);
        Ok(t)
    }

    pub fn from_data(width: usize, height: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 || dim == 0 || data.len() != width * height * dim {
            return Err(Error::Shape(format!("texture {width}x{height}x{dim} with {} values", data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Shape("non-finite texture entry".into()));
        }
        Ok(NeuralTexture { width, height, dim, data })
    }

    /// The four texels and weights blended at `uv`.
    fn taps(&self, uv: [f64; 2]) -> [(usize, f32); 4] {
        let fx = (uv[0] * self.width as f64 - 0.5).clamp(0.0, (self.width - 1) as f64);
        let fy = (uv[1] * self.height as f64 - 0.5).clamp(0.0, (self.height - 1) as f64);
        let (x0, y0) = (fx.floor() as usize, fy.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(self.width - 1), (y0 + 1).min(self.height - 1));
        let (ax, ay) = ((fx - x0 as f64) as f32, (fy - y0 as f64) as f32);
        [
            (y0 * self.width + x0, (1.0 - ax) * (1.0 - ay)),
            (y0 * self.width + x1, ax * (1.0 - ay)),
            (y1 * self.width + x0, (1.0 - ax) * ay),
            (y1 * self.width + x1, ax * ay),
        ]
    }

    pub fn lookup(&self, uv: [f64; 2]) -> Vec<f32> {
        let mut f = vec![0.0; self.dim];
        for (texel, w) in self.taps(uv) {
            for (o, v) in f.iter_mut().zip(&self.data[texel * self.dim..(texel + 1) * self.dim]) {
                *o += w * v;
            }
        }
        f
    }

    /// Adds the gradient of a lookup at `uv` with upstream `g` into `grad`.
    fn scatter(&self, uv: [f64; 2], g: &[f32], grad: &mut [f32]) {
        for (texel, w) in self.taps(uv) {
            for (o, v) in grad[texel * self.dim..(texel + 1) * self.dim].iter_mut().zip(g) {
                *o += w * v;
            }
        }
    }
}

/// Anisotropic total variation: absolute differences to the right and lower
/// neighbours, summed over features; no wrap-around. Gradients are added
/// into `grad` scaled by `weight`.
pub fn tv_loss(tex: &NeuralTexture, weight: f32, grad: Option<&mut [f32]>) -> f64 {
    let (w, h, d) = (tex.width, tex.height, tex.dim);
    let mut loss = 0.0;
    let mut grad = grad;
    for y in 0..h {
        for x in 0..w {
            let here = (y * w + x) * d;
            for nb in [(x + 1 < w).then(|| here + d), (y + 1 < h).then(|| here + w * d)].into_iter().flatten() {
                for f in 0..d {
                    let diff = tex.data[nb + f] - tex.data[here + f];
                    loss += diff.abs() as f64;
                    if let Some(g) = grad.as_deref_mut() {
                        let s = weight * diff.signum() * (diff != 0.0) as u8 as f32;
                        g[nb + f] += s;
                        g[here + f] -= s;
                    }
                }
            }
        }
    }
    loss
}

/// One flow-matching minibatch: endpoints, base draws, times and
/// conditioning rows.
#[derive(Clone, Debug, Default)]
pub struct CfmBatch {
    pub x0: Vec<[f64; 2]>,
    pub x1: Vec<[f64; 2]>,
    pub t: Vec<f64>,
    /// Row-major, `cond_dim` values per row.
    pub cond: Vec<f32>,
}

impl CfmBatch {
    pub fn len(&self) -> usize {
        self.x1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x1.is_empty()
    }

    fn input<T: Scalar>(&self, range: std::ops::Range<usize>, cond_dim: usize) -> Vec<T> {
        let mut x = Vec::with_capacity(range.len() * (3 + cond_dim));
        for i in range {
            let t = self.t[i];
            for a in 0..2 {
                x.push(T::from_f64(t * self.x1[i][a] + (1.0 - t) * self.x0[i][a]));
            }
            x.push(T::from_f64(t));
            x.extend(self.cond[i * cond_dim..(i + 1) * cond_dim].iter().map(|&c| T::from_f64(c as f64)));
        }
        x
    }
}

/// Mean over the batch of `|u(x_t, t | c) - (x1 - x0)|^2`, its parameter
/// gradient and, on request, the gradient with respect to the conditioning
/// rows. Rows are processed in fixed chunks whose gradients are summed in
/// order, so the result is independent of the thread count.
pub fn cfm_loss<T: Scalar>(net: &DenseNet<T>, batch: &CfmBatch, want_cond_grad: bool) -> Result<(f64, Vec<T>, Vec<T>)> {
    let b = batch.len();
    if b == 0 {
        return Err(Error::Invalid("empty flow-matching batch".into()));
    }
    let cond_dim = net.input_size() - 3;
    if batch.cond.len() != b * cond_dim || batch.x0.len() != b || batch.t.len() != b {
        return Err(Error::Shape("flow-matching batch fields disagree in length".into()));
    }
    let scale = 1.0 / b as f64;
    let parts: Vec<Result<(f64, Vec<T>, Vec<T>)>> = (0..b.div_ceil(GRAD_CHUNK))
        .into_par_iter()
        .map(|k| {
            let range = k * GRAD_CHUNK..b.min((k + 1) * GRAD_CHUNK);
            let x = batch.input::<T>(range.clone(), cond_dim);
            let tape = net.forward_tape(&x, range.len())?;
            let out = tape.output();
            let mut up = vec![T::zero(); out.len()];
            let mut loss = 0.0;
            for (r, i) in range.clone().enumerate() {
                for a in 0..2 {
                    let target = batch.x1[i][a] - batch.x0[i][a];
                    let e = out[2 * r + a].as_f64() - target;
                    loss += e * e;
                    up[2 * r + a] = T::from_f64(2.0 * e * scale);
                }
            }
            let mut grads = vec![T::zero(); net.params().len()];
            let mut ig = Vec::new();
            net.backward_tape(&tape, &up, &mut grads, want_cond_grad.then_some(&mut ig))?;
            let cg = if want_cond_grad {
                let w = 3 + cond_dim;
                ig.chunks_exact(w).flat_map(|row| row[3..].to_vec()).collect()
            } else {
                Vec::new()
            };
            Ok((loss * scale, grads, cg))
        })
        .collect();
    let mut loss = 0.0;
    let mut grads = vec![T::zero(); net.params().len()];
    let mut cond_grad = Vec::new();
    for p in parts {
        let (l, g, c) = p?;
        loss += l;
        for (a, b) in grads.iter_mut().zip(&g) {
            *a = *a + *b;
        }
        cond_grad.extend(c);
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite { batch: 0 });
    }
    Ok((loss, grads, cond_grad))
}

/// Training hyper-parameters for [`train_flow`] and [`reflow_distill`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Cosine decay from `lr` to `lr * final_lr_ratio` over the run.
    pub final_lr_ratio: f64,
    /// Decay of the weight average returned as the model; 0 returns the
    /// last iterate.
    #[serde(default)]
    pub ema_decay: f64,
    /// Caps the samples visited per epoch; `None` visits all.
    pub samples_per_epoch: Option<usize>,
    pub hidden: Vec<usize>,
    pub residual: Option<usize>,
    pub steps: usize,
    pub tv_weight: f64,
    pub texture_size: [usize; 2],
}

impl Default for FlowTrainConfig {
    fn default() -> Self {
        FlowTrainConfig {
            epochs: 500,
            batch_size: 4096,
            lr: 3e-3,
            final_lr_ratio: 0.01,
            ema_decay: 0.9999,
            samples_per_epoch: None,
            hidden: vec![64; 5],
            residual: None,
            steps: DEFAULT_STEPS,
            tv_weight: 1e-4,
            texture_size: [256, 256],
        }
    }
}

impl FlowTrainConfig {
    /// Wider network with a residual layer, used for spatially varying data.
    pub fn sv_default() -> Self {
        FlowTrainConfig {
            hidden: vec![128; 5],
            residual: Some(2),
            ..FlowTrainConfig::default()
        }
    }
}

#[derive(Clone, Debug)]
pub struct FlowTraining {
    pub model: FlowModel,
    pub texture: Option<NeuralTexture>,
    /// Mean loss per epoch.
    pub log: Vec<f64>,
}

/// Exponential moving average of parameters, with the usual warm-up so
/// early iterates do not dominate short runs.
struct Ema {
    decay: f64,
    avg: Vec<f32>,
    updates: u64,
}

impl Ema {
    fn new(decay: f64, params: &[f32]) -> Self {
        Ema { decay, avg: params.to_vec(), updates: 0 }
    }

    fn update(&mut self, params: &[f32]) {
        self.updates += 1;
        let d = self.decay.min((1 + self.updates) as f64 / (10 + self.updates) as f64) as f32;
        for (a, &p) in self.avg.iter_mut().zip(params) {
            *a = d * *a + (1.0 - d) * p;
        }
    }

    /// Writes the average into `params` unless averaging is disabled.
    fn finish(self, params: &mut [f32]) {
        if self.decay > 0.0 {
            params.copy_from_slice(&self.avg);
        }
    }
}

fn cosine_lr(cfg: &FlowTrainConfig, step: usize, total: usize) -> f64 {
    let p = step as f64 / total.max(1) as f64;
    let r = cfg.final_lr_ratio + (1.0 - cfg.final_lr_ratio) * 0.5 * (1.0 + (std::f64::consts::PI * p).cos());
    cfg.lr * r
}

struct Target {
    x1: [f64; 2],
    cond: FlowCond,
    uv: Option<[f64; 2]>,
}

/// Fits a flow to the accepted samples of `data`; spatially varying data
/// also trains a neural texture jointly, regularized by `tv_loss`.
pub fn train_flow(data: &Dataset, cfg: &FlowTrainConfig, seed: u64) -> Result<FlowTraining> {
    let mut targets = Vec::new();
    let mut per_channel = [0usize; 3];
    for r in data.records.iter().filter(|r| r.accepted) {
        per_channel[r.channel as usize] += 1;
        let feature = data.sv.then(|| vec![0.0; FEATURE_DIM]);
        targets.push(Target {
            x1: [r.wo[0] as f64, r.wo[1] as f64],
            cond: FlowCond::new(r.wi_dir(), r.channel as usize, feature.as_deref())?,
            uv: r.uv.map(|[u, v]| [u as f64, v as f64]),
        });
    }
    if let Some(c) = per_channel.iter().position(|&n| n == 0) {
        return Err(Error::EmptyChannel(c));
    }
    let mut rng = Rng::new(seed, 0x7472_6e66);
    let layout = FlowModel::layout(data.sv, &cfg.hidden, cfg.residual);
    let net = DenseNet::init(layout, &mut rng)?;
    let mut model = FlowModel::new(net, cfg.steps, data.sv)?;
    let mut texture = if data.sv {
        Some(NeuralTexture::init(cfg.texture_size[0], cfg.texture_size[1], &mut rng)?)
    } else {
        None
    };
    let mut log = Vec::with_capacity(cfg.epochs);
    let per_epoch = cfg.samples_per_epoch.unwrap_or(targets.len()).min(targets.len());
    let batches_per_epoch = per_epoch.div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * batches_per_epoch;
    let mut adam = Adam::new(model.net.params().len(), cfg.lr);
    let mut tex_adam = texture.as_ref().map(|t| Adam::new(t.data.len(), cfg.lr));
    let mut ema = Ema::new(cfg.ema_decay, model.net.params());
    let mut tex_ema = texture.as_ref().map(|t| Ema::new(cfg.ema_decay, &t.data));
    let mut order: Vec<usize> = (0..targets.len()).collect();
    let mut step = 0;
    for _epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order[..per_epoch].chunks(cfg.batch_size) {
            let mut batch = CfmBatch::default();
            for &i in chunk {
                let tg = &targets[i];
                let g = crate::geom::gaussian2d_sample(&mut rng);
                batch.x0.push([g.u, g.v]);
                batch.x1.push(tg.x1);
                batch.t.push(rng.uniform());
                match (&texture, tg.uv) {
                    (Some(tex), Some(uv)) => {
                        batch.cond.extend_from_slice(&tg.cond.values()[..BASE_COND_DIM]);
                        batch.cond.extend(tex.lookup(uv));
                    }
                    _ => batch.cond.extend_from_slice(tg.cond.values()),
                }
            }
            let (loss, grads, cond_grad) = cfm_loss(&model.net, &batch, texture.is_some())
                .map_err(|e| match e {
                    Error::NonFinite { .. } => Error::NonFinite { batch: step },
                    e => e,
                })?;
            let lr = cosine_lr(cfg, step, total_steps);
            adam.lr = lr;
            adam.step(model.net.params_mut(), &grads).map_err(|_| Error::NonFinite { batch: step })?;
            if let (Some(tex), Some(ta)) = (texture.as_mut(), tex_adam.as_mut()) {
                let cd = model.cond_dim();
                let mut tg = vec![0.0f32; tex.data.len()];
                for (r, &i) in chunk.iter().enumerate() {
                    let row = &cond_grad[r * cd + BASE_COND_DIM..(r + 1) * cd];
                    tex.scatter(targets[i].uv.expect("sv targets carry uv"), row, &mut tg);
                }
                tv_loss(tex, cfg.tv_weight as f32, Some(&mut tg));
                ta.lr = lr;
                ta.step(&mut tex.data, &tg).map_err(|_| Error::NonFinite { batch: step })?;
            }
            ema.update(model.net.params());
            if let (Some(tex), Some(te)) = (texture.as_ref(), tex_ema.as_mut()) {
                te.update(&tex.data);
            }
            epoch_loss += loss * chunk.len() as f64;
            step += 1;
        }
        log.push(epoch_loss / per_epoch as f64);
    }
    ema.finish(model.net.params_mut());
    if let (Some(tex), Some(te)) = (texture.as_mut(), tex_ema) {
        te.finish(&mut tex.data);
    }
    Ok(FlowTraining { model, texture, log })
}

/// Hyper-parameters of [`reflow_distill`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReflowConfig {
    pub epochs: usize,
    pub pairs_per_epoch: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub final_lr_ratio: f64,
    #[serde(default)]
    pub ema_decay: f64,
    pub student_steps: usize,
}

impl Default for ReflowConfig {
    fn default() -> Self {
        ReflowConfig {
            epochs: 40,
            pairs_per_epoch: 1 << 17,
            batch_size: 4096,
            lr: 1e-3,
            final_lr_ratio: 0.01,
            ema_decay: 0.0,
            student_steps: REFLOW_STEPS,
        }
    }
}

/// Teacher-generated coupling `(x0, x1)` for one reflow epoch, with random
/// conditions (uniform incident direction, channel and uv).
pub fn reflow_pairs(teacher: &FlowModel, texture: Option<&NeuralTexture>, n: usize, seed: u64, epoch: usize) -> Result<CfmBatch> {
    if teacher.sv != texture.is_some() {
        return Err(Error::MissingFeature);
    }
    let mut rng = Rng::keyed(seed, &[TAG_REFLOW, epoch as u64]);
    let mut conds = Vec::with_capacity(n);
    let mut x0 = Vec::with_capacity(n);
    for _ in 0..n {
        let wi = sample_uniform_hemisphere(&mut rng);
        let channel = rng.below(3);
        let feature = texture.map(|t| t.lookup([rng.uniform(), rng.uniform()]));
        conds.push(FlowCond::new(wi, channel, feature.as_deref())?);
        let g = crate::geom::gaussian2d_sample(&mut rng);
        x0.push([g.u, g.v]);
    }
    let x1 = flow_transport(teacher, Conds::PerRow(&conds), &x0)?;
    let t = (0..n).map(|_| rng.uniform()).collect();
    Ok(CfmBatch {
        x0,
        x1,
        t,
        cond: conds.iter().flat_map(|c| c.values().to_vec()).collect(),
    })
}

/// Distils `teacher` into a student that needs fewer Euler steps by
/// training on the teacher's own noise-to-sample coupling.
pub fn reflow_distill(teacher: &FlowModel, texture: Option<&NeuralTexture>, cfg: &ReflowConfig, seed: u64) -> Result<(FlowModel, Vec<f64>)> {
    let mut student = FlowModel::new(teacher.net.clone(), cfg.student_steps, teacher.sv)?;
    let mut adam = Adam::new(student.net.params().len(), cfg.lr);
    let mut rng = Rng::new(seed, 0x7266_7472);
    let batches = cfg.pairs_per_epoch.div_ceil(cfg.batch_size);
    let total = cfg.epochs * batches;
    let sched = FlowTrainConfig { lr: cfg.lr, final_lr_ratio: cfg.final_lr_ratio, ..FlowTrainConfig::default() };
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut ema = Ema::new(cfg.ema_decay, student.net.params());
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let pairs = reflow_pairs(teacher, texture, cfg.pairs_per_epoch, seed, epoch)?;
        let cd = student.cond_dim();
        let mut epoch_loss = 0.0;
        for b in 0..batches {
            let range = b * cfg.batch_size..cfg.pairs_per_epoch.min((b + 1) * cfg.batch_size);
            let batch = CfmBatch {
                x0: pairs.x0[range.clone()].to_vec(),
                x1: pairs.x1[range.clone()].to_vec(),
                t: range.clone().map(|_| rng.uniform()).collect(),
                cond: pairs.cond[range.start * cd..range.end * cd].to_vec(),
            };
            let (loss, grads, _) = cfm_loss(&student.net, &batch, false).map_err(|e| match e {
                Error::NonFinite { .. } => Error::NonFinite { batch: step },
                e => e,
            })?;
            adam.lr = cosine_lr(&sched, step, total);
            adam.step(student.net.params_mut(), &grads).map_err(|_| Error::NonFinite { batch: step })?;
            ema.update(student.net.params());
            epoch_loss += loss * range.len() as f64;
            step += 1;
        }
        log.push(epoch_loss / cfg.pairs_per_epoch as f64);
    }
    ema.finish(student.net.params_mut());
    Ok((student, log))
}

/// Conditions for the incident direction stored on a dataset record.
pub fn cond_for_disk(wi: DiskPoint, channel: usize, feature: Option<&[f32]>) -> Result<FlowCond> {
    FlowCond::new(disk_point_to_dir(wi), channel, feature)
}

/// Standard Gaussian density; re-exported for identity-flow checks.
pub fn base_pdf(p: DiskPoint) -> f64 {
    gaussian2d_pdf(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::NetLayout;

    fn zero_model(steps: usize) -> FlowModel {
        FlowModel::new(DenseNet::zeros(FlowModel::layout(false, &[8], None)).unwrap(), steps, false).unwrap()
    }

    fn cond() -> FlowCond {
        FlowCond::new(Direction::NORMAL, 0, None).unwrap()
    }

    /// `u(x) = x` as a one-layer linear network.
    fn linear_model() -> FlowModel {
        let layout = NetLayout { sizes: vec![9, 2], activation: crate::nn::Activation::Identity, residual: None };
        let mut net = DenseNet::<f32>::zeros(layout).unwrap();
        let (w, _) = net.layer_mut(0);
        w[0] = 1.0;
        w[9 + 1] = 1.0;
        FlowModel::new(net, 1, false).unwrap()
    }

    #[test]
    fn zero_flow_is_the_base_gaussian() {
        let m = zero_model(50);
        let p = flow_pdf(&m, &cond(), DiskPoint::new(0.0, 0.0)).unwrap();
        assert!((p - 0.159155).abs() < 1e-6, "{p}");
        let q = DiskPoint::new(0.3, -0.4);
        assert!((flow_pdf(&m, &cond(), q).unwrap() - gaussian2d_pdf(q)).abs() < 1e-12);
        assert_eq!(flow_pdf(&m, &cond(), DiskPoint::new(0.9, 0.9)).unwrap(), 0.0);

        let mut rng = Rng::new(1, 0);
        let mut expect = Rng::new(1, 0);
        let (s, pdf) = flow_sample(&m, &cond(), &mut rng).unwrap();
        let mut g = crate::geom::gaussian2d_sample(&mut expect);
        while g.radius_sq() > 1.0 {
            g = crate::geom::gaussian2d_sample(&mut expect);
        }
        assert_eq!(s, g);
        assert!((pdf - gaussian2d_pdf(g)).abs() < 1e-12);
    }

    #[test]
    fn linear_velocity_density() {
        let m = linear_model();
        let y = DiskPoint::new(0.5, -0.3);
        let p = flow_pdf(&m, &cond(), y).unwrap();
        let expect = gaussian2d_pdf(DiskPoint::new(0.25, -0.15)) / 4.0;
        assert!((p - expect).abs() < 1e-9 * expect, "{p} vs {expect}");
        let x = flow_transport(&m, Conds::Shared(&cond()), &[[0.25, -0.15]]).unwrap();
        assert!((x[0][0] - 0.5).abs() < 1e-7 && (x[0][1] + 0.3).abs() < 1e-7);
    }

    #[test]
    fn random_flow_pdf_inverts_the_sampler() {
        let mut rng = Rng::new(3, 0);
        let net = DenseNet::init(FlowModel::layout(false, &[32, 32], None), &mut rng).unwrap();
        let mut net = net;
        // Scale up the output layer so the flow is far from the identity.
        let (w, _) = net.layer_mut(2);
        w.iter_mut().for_each(|v| *v *= 10.0);
        let m = FlowModel::new(net, 20, false).unwrap();
        let c = FlowCond::new(Direction::new(0.3, 0.1, 0.9486832980505138).unwrap(), 2, None).unwrap();
        let x0: Vec<[f64; 2]> = (0..64).map(|_| {
            let g = crate::geom::gaussian2d_sample(&mut rng);
            [g.u * 0.4, g.v * 0.4]
        }).collect();
        let x1 = flow_transport(&m, Conds::Shared(&c), &x0).unwrap();
        // Density by brute-force finite differences of the forward map.
        for (a, b) in x0.iter().zip(&x1) {
            if b[0] * b[0] + b[1] * b[1] > 1.0 {
                continue;
            }
            // Large enough to swamp f32 rounding in the network.
            let h = 1e-3;
            let f = |dx: f64, dy: f64| flow_transport(&m, Conds::Shared(&c), &[[a[0] + dx, a[1] + dy]]).unwrap()[0];
            let (px, mx, py, my) = (f(h, 0.0), f(-h, 0.0), f(0.0, h), f(0.0, -h));
            let j = [
                (px[0] - mx[0]) / (2.0 * h),
                (py[0] - my[0]) / (2.0 * h),
                (px[1] - mx[1]) / (2.0 * h),
                (py[1] - my[1]) / (2.0 * h),
            ];
            let det = j[0] * j[3] - j[1] * j[2];
            let expect = gaussian2d_pdf(DiskPoint::new(a[0], a[1])) / det.abs();
            let got = flow_pdf(&m, &c, DiskPoint::new(b[0], b[1])).unwrap();
            assert!((got - expect).abs() < 2e-3 * expect, "{got} vs {expect}");
        }
    }

    #[test]
    fn tv_examples() {
        let t = NeuralTexture::from_data(2, 2, 1, vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        assert_eq!(tv_loss(&t, 1.0, None), 2.0);
        let c = NeuralTexture::from_data(3, 2, 2, vec![0.7; 12]).unwrap();
        assert_eq!(tv_loss(&c, 1.0, None), 0.0);
        let mut rng = Rng::new(5, 0);
        let r = NeuralTexture::init(4, 3, &mut rng).unwrap();
        let mut s = r.clone();
        s.data.iter_mut().for_each(|v| *v *= -2.5);
        assert!((tv_loss(&s, 1.0, None) - 2.5 * tv_loss(&r, 1.0, None)).abs() < 1e-5);
    }

    #[test]
    fn tv_gradient_matches_differences() {
        // Integer entries keep every neighbour difference away from the kink.
        let data = (0..3 * 3 * 4).map(|i| ((i * 37) % 101) as f32).collect();
        let t = NeuralTexture::from_data(3, 3, 4, data).unwrap();
        let mut g = vec![0.0f32; t.data.len()];
        tv_loss(&t, 1.0, Some(&mut g));
        for i in 0..t.data.len() {
            let mut p = t.clone();
            let mut m = t.clone();
            p.data[i] += 0.25;
            m.data[i] -= 0.25;
            let fd = (tv_loss(&p, 1.0, None) - tv_loss(&m, 1.0, None)) / 0.5;
            assert!((fd - g[i] as f64).abs() < 1e-9, "{i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn texture_lookup_is_bilinear() {
        let t = NeuralTexture::from_data(2, 1, 1, vec![0.0, 1.0]).unwrap();
        assert_eq!(t.lookup([0.25, 0.5]), vec![0.0]);
        assert_eq!(t.lookup([0.5, 0.5]), vec![0.5]);
        assert_eq!(t.lookup([0.99, 0.1]), vec![1.0]);
    }

    fn gaussian_batch(n: usize, cond_dim: usize, seed: u64) -> CfmBatch {
        let mut rng = Rng::new(seed, 0);
        let mut b = CfmBatch::default();
        for _ in 0..n {
            let g = crate::geom::gaussian2d_sample(&mut rng);
            let h = crate::geom::gaussian2d_sample(&mut rng);
            b.x0.push([g.u, g.v]);
            b.x1.push([h.u, h.v]);
            b.t.push(rng.uniform());
            b.cond.extend((0..cond_dim).map(|_| rng.uniform_f32()));
        }
        b
    }

    #[test]
    fn cfm_loss_of_zero_net_between_gaussians() {
        let net = DenseNet::<f32>::zeros(FlowModel::layout(false, &[16], None)).unwrap();
        let b = gaussian_batch(100_000, 6, 2);
        let (loss, _, _) = cfm_loss(&net, &b, false).unwrap();
        assert!((loss - 4.0).abs() < 0.05, "{loss}");
    }

    #[test]
    fn cfm_loss_vanishes_for_the_exact_velocity() {
        // The velocity network returns x1 - x0 when the two are fed in as
        // the condition through a linear layer.
        let layout = NetLayout { sizes: vec![7, 2], activation: crate::nn::Activation::Identity, residual: None };
        let mut net = DenseNet::<f64>::zeros(layout).unwrap();
        let (w, _) = net.layer_mut(0);
        w[3] = 1.0;
        w[7 + 4] = 1.0;
        let mut b = gaussian_batch(64, 4, 4);
        for i in 0..64 {
            b.cond[i * 4] = (b.x1[i][0] - b.x0[i][0]) as f32;
            b.cond[i * 4 + 1] = (b.x1[i][1] - b.x0[i][1]) as f32;
            b.x1[i] = [b.x0[i][0] + b.cond[i * 4] as f64, b.x0[i][1] + b.cond[i * 4 + 1] as f64];
        }
        let (loss, _, _) = cfm_loss(&net, &b, false).unwrap();
        assert!(loss < 1e-12, "{loss}");
    }

    #[test]
    fn cfm_gradient_matches_finite_differences() {
        let mut rng = Rng::new(6, 0);
        let net = DenseNet::<f64>::init(FlowModel::layout(false, &[6, 5], None), &mut rng).unwrap();
        let b = gaussian_batch(16, 6, 7);
        let (_, g, _) = cfm_loss(&net, &b, false).unwrap();
        let mut worst: f64 = 0.0;
        for i in 0..net.params().len() {
            let h = 1e-6;
            let mut p = net.clone();
            p.params_mut()[i] += h;
            let mut m = net.clone();
            m.params_mut()[i] -= h;
            let fd = (cfm_loss(&p, &b, false).unwrap().0 - cfm_loss(&m, &b, false).unwrap().0) / (2.0 * h);
            worst = worst.max((fd - g[i]).abs() / fd.abs().max(1e-3));
        }
        assert!(worst < 1e-3, "{worst}");
    }

    #[test]
    fn flow_cond_validation() {
        assert!(FlowCond::new(Direction::NORMAL, 3, None).is_err());
        assert!(FlowCond::new(Direction::NORMAL, 0, Some(&[0.0; 5])).is_err());
        let sv = FlowModel::new(DenseNet::zeros(FlowModel::layout(true, &[4], None)).unwrap(), 5, true).unwrap();
        assert!(matches!(flow_pdf(&sv, &cond(), DiskPoint::new(0.0, 0.0)), Err(Error::MissingFeature)));
    }

    #[test]
    fn reflow_pairs_follow_the_teacher() {
        // u(x) = x over 8 Euler steps scales points by (9/8)^8.
        let mut teacher = linear_model();
        teacher.steps = 8;
        let pairs = reflow_pairs(&teacher, None, 64, 5, 0).unwrap();
        let k = (9.0f64 / 8.0).powi(8);
        for (a, b) in pairs.x0.iter().zip(&pairs.x1) {
            assert!((b[0] - k * a[0]).abs() < 1e-5 * (1.0 + b[0].abs()));
            assert!((b[1] - k * a[1]).abs() < 1e-5 * (1.0 + b[1].abs()));
        }
        assert_eq!(pairs.cond.len(), 64 * cond_dim(false));
        assert!(matches!(reflow_pairs(&teacher, Some(&NeuralTexture::zeros(2, 2, 32).unwrap()), 4, 5, 0), Err(Error::MissingFeature)));
    }

    #[test]
    fn ema_warms_up_and_can_be_disabled() {
        // First update uses decay 2/11, so the average moves most of the way.
        let mut ema = Ema::new(0.9999, &[0.0f32, 1.0]);
        ema.update(&[1.1, 1.0]);
        let mut out = [5.0f32, 5.0];
        ema.finish(&mut out);
        assert!((out[0] - 0.9).abs() < 1e-6 && out[1] == 1.0, "{out:?}");

        let mut off = Ema::new(0.0, &[0.0f32]);
        off.update(&[2.0]);
        let mut last = [3.0f32];
        off.finish(&mut last);
        assert_eq!(last, [3.0]);
    }

    #[test]
    fn reflow_fits_the_coupling() {
        let mut rng = Rng::new(8, 0);
        let teacher = FlowModel::new(DenseNet::init(FlowModel::layout(false, &[16, 16], None), &mut rng).unwrap(), 20, false).unwrap();
        let cfg = ReflowConfig { epochs: 6, pairs_per_epoch: 2048, batch_size: 256, lr: 3e-3, ..Default::default() };
        let (student, log) = reflow_distill(&teacher, None, &cfg, 2).unwrap();
        assert_eq!(student.steps, REFLOW_STEPS);
        assert!(log[5] < 0.5 * log[0], "{log:?}");
        let (again, _) = reflow_distill(&teacher, None, &cfg, 2).unwrap();
        assert_eq!(student.net.params(), again.net.params());
    }
}
