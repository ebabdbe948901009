//! Periodic field of spheres resting on a ground plane.

use serde::{Deserialize, Serialize};

use crate::geom::{Rng, Vec3};

use super::TraceHit;

const MAX_DDA_STEPS: usize = 1 << 20;

/// Material id of the ground plane; spheres use [`SPHERE_MATERIAL`].
pub const GROUND_MATERIAL: usize = 0;
pub const SPHERE_MATERIAL: usize = 1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sphere {
    pub center: [f64; 2],
    pub radius: f64,
}

#[derive(Clone, Debug)]
pub struct SphereField {
    pub tile: f64,
    pub spheres: Vec<Sphere>,
    grid: usize,
    cell: f64,
    /// Per grid cell: (sphere index, periodic image offset).
    cells: Vec<Vec<(usize, [f64; 2])>>,
    pub top: f64,
}

pub(crate) enum SfTrace {
    Hit(TraceHit),
    Escaped,
    Lost,
}

/// Dart-throwing Poisson-disk centers on a periodic square tile.
pub fn poisson_centers(tile: f64, min_distance: f64, seed: u64, max_count: usize) -> Vec<[f64; 2]> {
    let mut rng = Rng::new(seed, 0x5350);
    let mut pts: Vec<[f64; 2]> = Vec::new();
    let mut misses = 0;
    while misses < 5000 && pts.len() < max_count {
        let p = [rng.uniform() * tile, rng.uniform() * tile];
        let ok = pts.iter().all(|q| {
            let mut dx = (p[0] - q[0]).abs();
            let mut dy = (p[1] - q[1]).abs();
            dx = dx.min(tile - dx);
            dy = dy.min(tile - dy);
            dx * dx + dy * dy >= min_distance * min_distance
        });
        if ok {
            pts.push(p);
            misses = 0;
        } else {
            misses += 1;
        }
    }
    pts
}

impl SphereField {
    pub fn new(tile: f64, spheres: Vec<Sphere>) -> Self {
        let r_max = spheres.iter().map(|s| s.radius).fold(0.0, f64::max);
        let grid = ((tile / (2.0 * r_max.max(1e-6))).floor() as usize).clamp(1, 256);
        let cell = tile / grid as f64;
        let mut cells = vec![Vec::new(); grid * grid];
        for (k, s) in spheres.iter().enumerate() {
            for ox in [-tile, 0.0, tile] {
                for oy in [-tile, 0.0, tile] {
                    let cx = s.center[0] + ox;
                    let cy = s.center[1] + oy;
                    let lo_x = ((cx - s.radius) / cell).floor().max(0.0) as usize;
                    let hi_x = ((cx + s.radius) / cell).floor().min(grid as f64 - 1.0);
                    let lo_y = ((cy - s.radius) / cell).floor().max(0.0) as usize;
                    let hi_y = ((cy + s.radius) / cell).floor().min(grid as f64 - 1.0);
                    if hi_x < 0.0 || hi_y < 0.0 {
                        continue;
                    }
                    for j in lo_y..=hi_y as usize {
                        for i in lo_x..=hi_x as usize {
                            cells[j * grid + i].push((k, [ox, oy]));
                        }
                    }
                }
            }
        }
        let top = 2.0 * r_max;
        SphereField {
            tile,
            spheres,
            grid,
            cell,
            cells,
            top,
        }
    }

    pub(crate) fn trace(&self, o: Vec3, d: Vec3) -> SfTrace {
        let eps = 1e-9 * self.tile;
        let mut t0 = 0.0;
        if o.z > self.top {
            if d.z >= 0.0 {
                return SfTrace::Escaped;
            }
            t0 = (self.top - o.z) / d.z;
        }
        let t_ground = if d.z < 0.0 { -o.z / d.z } else { f64::INFINITY };
        let start = o + d * t0;
        let c = self.cell;
        let g = self.grid as i64;
        let mut ix = (start.x / c).floor() as i64;
        let mut iy = (start.y / c).floor() as i64;
        let step_x: i64 = if d.x > 0.0 { 1 } else { -1 };
        let step_y: i64 = if d.y > 0.0 { 1 } else { -1 };
        let bound = |i: i64, s: i64| (if s > 0 { i + 1 } else { i }) as f64 * c;
        let mut t_max_x = if d.x != 0.0 { t0 + (bound(ix, step_x) - start.x) / d.x } else { f64::INFINITY };
        let mut t_max_y = if d.y != 0.0 { t0 + (bound(iy, step_y) - start.y) / d.y } else { f64::INFINITY };
        let t_dx = if d.x != 0.0 { c / d.x.abs() } else { f64::INFINITY };
        let t_dy = if d.y != 0.0 { c / d.y.abs() } else { f64::INFINITY };
        let mut t_enter = t0;

        for _ in 0..MAX_DDA_STEPS {
            let t_exit = t_max_x.min(t_max_y);
            let wx = ix.rem_euclid(g);
            let wy = iy.rem_euclid(g);
            let shift = [
                ix.div_euclid(g) as f64 * self.tile,
                iy.div_euclid(g) as f64 * self.tile,
            ];
            let mut best: Option<(f64, Vec3)> = None;
            for &(k, off) in &self.cells[(wy * g + wx) as usize] {
                let s = self.spheres[k];
                let center = Vec3::new(s.center[0] + off[0] + shift[0], s.center[1] + off[1] + shift[1], s.radius);
                if let Some(t) = ray_sphere(o, d, center, s.radius) {
                    if t >= t_enter - eps && t <= t_exit + eps && best.map_or(true, |(bt, _)| t < bt) {
                        best = Some((t, center));
                    }
                }
            }
            if let Some((t, center)) = best {
                if t < t_ground {
                    let p = o + d * t;
                    return SfTrace::Hit(TraceHit {
                        p,
                        n: (p - center).normalize(),
                        material: SPHERE_MATERIAL,
                    });
                }
            }
            if t_ground <= t_exit {
                return SfTrace::Hit(TraceHit {
                    p: o + d * t_ground,
                    n: Vec3::Z,
                    material: GROUND_MATERIAL,
                });
            }
            let z_exit = o.z + d.z * t_exit;
            if d.z > 0.0 && z_exit > self.top {
                return SfTrace::Escaped;
            }
            if !t_exit.is_finite() {
                return if d.z >= 0.0 { SfTrace::Escaped } else { SfTrace::Lost };
            }
            if t_max_x < t_max_y {
                ix += step_x;
                t_max_x += t_dx;
            } else {
                iy += step_y;
                t_max_y += t_dy;
            }
            t_enter = t_exit;
        }
        SfTrace::Lost
    }
}

/// Nearest intersection with `t > 0` (the ray starts outside the sphere).
fn ray_sphere(o: Vec3, d: Vec3, c: Vec3, r: f64) -> Option<f64> {
    let oc = o - c;
    let b = oc.dot(d);
    let cc = oc.dot(oc) - r * r;
    let disc = b * b - cc;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let t1 = -b - sq;
    if t1 > 1e-12 {
        return Some(t1);
    }
    let t2 = -b + sq;
    if t2 > 1e-12 && cc < 0.0 {
        Some(t2)
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn poisson_respects_min_distance() {
        let pts = poisson_centers(10.0, 1.5, 4, usize::MAX);
        assert!(pts.len() > 10);
        for (i, p) in pts.iter().enumerate() {
            for q in &pts[i + 1..] {
                let mut dx = (p[0] - q[0]).abs();
                let mut dy = (p[1] - q[1]).abs();
                dx = dx.min(10.0 - dx);
                dy = dy.min(10.0 - dy);
                assert!((dx * dx + dy * dy).sqrt() >= 1.5 - 1e-12);
            }
        }
    }

    #[test]
    fn vertical_ray_hits_sphere_top() {
        let f = SphereField::new(4.0, vec![Sphere { center: [1.0, 1.0], radius: 0.5 }]);
        match f.trace(Vec3::new(1.0, 1.0, 3.0), -Vec3::Z) {
            SfTrace::Hit(h) => {
                assert_eq!(h.material, SPHERE_MATERIAL);
                assert!((h.p.z - 1.0).abs() < 1e-9);
            }
            _ => panic!(),
        }
        match f.trace(Vec3::new(3.0, 3.0, 3.0), -Vec3::Z) {
            SfTrace::Hit(h) => assert_eq!(h.material, GROUND_MATERIAL),
            _ => panic!(),
        }
    }

    #[test]
    fn periodic_image_is_found() {
        let f = SphereField::new(4.0, vec![Sphere { center: [1.0, 1.0], radius: 0.5 }]);
        // Same sphere one tile over, reached by a slanted ray.
        let o = Vec3::new(3.0, 1.0, 0.5);
        let d = Vec3::new(1.0, 0.0, 0.0);
        match f.trace(o, d) {
            SfTrace::Hit(h) => {
                assert_eq!(h.material, SPHERE_MATERIAL);
                assert!((h.p.x - 4.5).abs() < 1e-9);
            }
            _ => panic!(),
        }
    }
}
