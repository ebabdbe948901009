//! Periodic triangulated heightfield traced with a 2D DDA.

use std::f64::consts::PI;

use crate::geom::{Rng, Vec3};

use super::TraceHit;

/// Grid cells visited before a ray is declared trapped.
const MAX_DDA_STEPS: usize = 1 << 20;

#[derive(Clone, Debug)]
pub struct Heightfield {
    pub nx: usize,
    pub ny: usize,
    pub cell: f64,
    heights: Vec<f64>,
    cell_max: Vec<f64>,
    pub hmin: f64,
    pub hmax: f64,
}

pub(crate) enum HfTrace {
    Hit(TraceHit),
    Escaped,
    Lost,
}

impl Heightfield {
    /// `heights` are vertex heights in row-major order (`heights[j * nx + i]`).
    pub fn new(nx: usize, ny: usize, cell: f64, heights: Vec<f64>) -> Self {
        assert_eq!(heights.len(), nx * ny);
        let hmin = heights.iter().copied().fold(f64::INFINITY, f64::min);
        let hmax = heights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut hf = Heightfield {
            nx,
            ny,
            cell,
            heights,
            cell_max: vec![0.0; nx * ny],
            hmin,
            hmax,
        };
        for j in 0..ny {
            for i in 0..nx {
                let (i, j) = (i as i64, j as i64);
                let m = hf
                    .h(i, j)
                    .max(hf.h(i + 1, j))
                    .max(hf.h(i, j + 1))
                    .max(hf.h(i + 1, j + 1));
                hf.cell_max[j as usize * nx + i as usize] = m;
            }
        }
        hf
    }

    pub fn heights(&self) -> &[f64] {
        &self.heights
    }

    pub fn extent(&self) -> [f64; 2] {
        [self.nx as f64 * self.cell, self.ny as f64 * self.cell]
    }

    fn wrap(&self, i: i64, j: i64) -> usize {
        let i = i.rem_euclid(self.nx as i64) as usize;
        let j = j.rem_euclid(self.ny as i64) as usize;
        j * self.nx + i
    }

    fn h(&self, i: i64, j: i64) -> f64 {
        self.heights[self.wrap(i, j)]
    }

    /// Cell index (wrapped) containing the horizontal position `(x, y)`.
    pub fn cell_at(&self, x: f64, y: f64) -> usize {
        let i = (x / self.cell).floor() as i64;
        let j = (y / self.cell).floor() as i64;
        self.wrap(i, j)
    }

    pub(crate) fn trace(&self, o: Vec3, d: Vec3) -> HfTrace {
        let eps = 1e-9 * self.cell;
        let mut t0 = 0.0;
        if o.z > self.hmax {
            if d.z >= 0.0 {
                return HfTrace::Escaped;
            }
            t0 = (self.hmax - o.z) / d.z;
        }
        let start = o + d * t0;
        let c = self.cell;
        let mut ix = (start.x / c).floor() as i64;
        let mut iy = (start.y / c).floor() as i64;
        let step_x: i64 = if d.x > 0.0 { 1 } else { -1 };
        let step_y: i64 = if d.y > 0.0 { 1 } else { -1 };
        let next_boundary = |i: i64, step: i64| (if step > 0 { i + 1 } else { i }) as f64 * c;
        let mut t_max_x = if d.x != 0.0 {
            t0 + (next_boundary(ix, step_x) - start.x) / d.x
        } else {
            f64::INFINITY
        };
        let mut t_max_y = if d.y != 0.0 {
            t0 + (next_boundary(iy, step_y) - start.y) / d.y
        } else {
            f64::INFINITY
        };
        let t_delta_x = if d.x != 0.0 { c / d.x.abs() } else { f64::INFINITY };
        let t_delta_y = if d.y != 0.0 { c / d.y.abs() } else { f64::INFINITY };
        let mut t_enter = t0;

        for _ in 0..MAX_DDA_STEPS {
            let t_exit = t_max_x.min(t_max_y);
            let z_enter = o.z + d.z * t_enter;
            let z_exit = o.z + d.z * t_exit.min(1e30);
            let cell_idx = self.wrap(ix, iy);
            if z_enter.min(z_exit) <= self.cell_max[cell_idx] + eps {
                if let Some(hit) = self.intersect_cell(o, d, ix, iy, t_enter - eps, t_exit + eps) {
                    return HfTrace::Hit(hit);
                }
            }
            if d.z > 0.0 && z_exit > self.hmax {
                return HfTrace::Escaped;
            }
            if d.z < 0.0 && z_exit < self.hmin - 1e-6 * c {
                return HfTrace::Lost;
            }
            if !t_exit.is_finite() {
                // Exactly vertical ray that missed its cell.
                return if d.z > 0.0 { HfTrace::Escaped } else { HfTrace::Lost };
            }
            if t_max_x < t_max_y {
                ix += step_x;
                t_max_x += t_delta_x;
            } else {
                iy += step_y;
                t_max_y += t_delta_y;
            }
            t_enter = t_exit;
        }
        HfTrace::Lost
    }

    fn intersect_cell(&self, o: Vec3, d: Vec3, ix: i64, iy: i64, t_lo: f64, t_hi: f64) -> Option<TraceHit> {
        let c = self.cell;
        let x0 = ix as f64 * c;
        let y0 = iy as f64 * c;
        let v00 = Vec3::new(x0, y0, self.h(ix, iy));
        let v10 = Vec3::new(x0 + c, y0, self.h(ix + 1, iy));
        let v11 = Vec3::new(x0 + c, y0 + c, self.h(ix + 1, iy + 1));
        let v01 = Vec3::new(x0, y0 + c, self.h(ix, iy + 1));
        let mut best: Option<(f64, Vec3)> = None;
        for (a, b, cc) in [(v00, v10, v11), (v00, v11, v01)] {
            if let Some(t) = ray_triangle(o, d, a, b, cc) {
                if t >= t_lo.max(1e-12) && t <= t_hi && best.map_or(true, |(bt, _)| t < bt) {
                    best = Some((t, (b - a).cross(cc - a).normalize()));
                }
            }
        }
        best.map(|(t, n)| TraceHit {
            p: o + d * t,
            n,
            material: self.wrap(ix, iy),
        })
    }
}

/// Möller-Trumbore; double-sided.
fn ray_triangle(o: Vec3, d: Vec3, a: Vec3, b: Vec3, c: Vec3) -> Option<f64> {
    let e1 = b - a;
    let e2 = c - a;
    let p = d.cross(e2);
    let det = e1.dot(p);
    if det.abs() < 1e-14 {
        return None;
    }
    let inv = 1.0 / det;
    let s = o - a;
    let u = s.dot(p) * inv;
    if !(-1e-12..=1.0 + 1e-12).contains(&u) {
        return None;
    }
    let q = s.cross(e1);
    let v = d.dot(q) * inv;
    if v < -1e-12 || u + v > 1.0 + 1e-12 {
        return None;
    }
    Some(e2.dot(q) * inv)
}

/// Periodic Gaussian random surface whose facet slopes follow a Beckmann
/// distribution of the given roughness (per-axis slope variance alpha^2/2).
pub fn beckmann_heights(n: usize, cell: f64, roughness: f64, seed: u64) -> Vec<f64> {
    let mut rng = Rng::new(seed, 0x4846);
    let size = n as f64 * cell;
    let k_max = (n / 6).max(2) as i64;
    let width = k_max as f64 / 2.5;
    let mut waves = Vec::new();
    for kx in -k_max..=k_max {
        for ky in 0..=k_max {
            if (ky == 0 && kx <= 0) || kx * kx + ky * ky > k_max * k_max {
                continue;
            }
            let k2 = (kx * kx + ky * ky) as f64;
            let amp = (-k2 / (2.0 * width * width)).exp() * rng.normal();
            let phase = 2.0 * PI * rng.uniform();
            waves.push((kx as f64, ky as f64, amp, phase));
        }
    }
    let mut heights = vec![0.0; n * n];
    for j in 0..n {
        for i in 0..n {
            let (x, y) = (i as f64 * cell, j as f64 * cell);
            heights[j * n + i] = waves
                .iter()
                .map(|&(kx, ky, a, ph)| a * (2.0 * PI * (kx * x + ky * y) / size + ph).cos())
                .sum();
        }
    }
    // Rescale so the discrete facet slopes have the target variance.
    let mut s2 = 0.0;
    for j in 0..n {
        for i in 0..n {
            let dx = heights[j * n + (i + 1) % n] - heights[j * n + i];
            let dy = heights[((j + 1) % n) * n + i] - heights[j * n + i];
            s2 += (dx * dx + dy * dy) / (cell * cell);
        }
    }
    let per_axis = s2 / (2.0 * (n * n) as f64);
    let scale = (roughness * roughness / 2.0 / per_axis).sqrt();
    heights.iter_mut().for_each(|h| *h *= scale);
    heights
}
