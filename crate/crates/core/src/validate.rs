//! Statistical checks tying learned models to their oracles: equal-area disk
//! chi-square tests, normalization quadrature, furnace and energy checks.

use std::f64::consts::{PI, TAU};

use serde::Serialize;

use crate::albedo::mc_albedo_estimate;
use crate::error::{Error, Result};
use crate::flow::{flow_pdf_batch, flow_sample_batch, Conds, FlowCond, FlowModel};
use crate::geom::{sample_uniform_hemisphere, Direction, DiskPoint, Rng};
use crate::material::PureSampleMaterial;
use crate::microgeo::MicrogeometryScene;

const TAG_FURNACE: u64 = 0x4655_524e;
const TAG_SUITE: u64 = 0x5355_4954;

/// Sub-quadrature resolution per bin along each axis.
const BIN_QUAD: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Chi2 {
    pub statistic: f64,
    pub dof: usize,
    pub p: f64,
}

/// Partition of the unit disk into `rings x sectors` cells of equal area.
/// Ring `k` spans radii `sqrt(k / rings)..sqrt((k + 1) / rings)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DiskBins {
    pub rings: usize,
    pub sectors: usize,
}

impl DiskBins {
    /// Picks the most square factorization of `n_bins`.
    pub fn new(n_bins: usize) -> Result<Self> {
        if n_bins < 2 {
            return Err(Error::ZeroDof);
        }
        let rings = (1..=n_bins).take_while(|d| d * d <= n_bins).filter(|d| n_bins % d == 0).last().unwrap_or(1);
        Ok(DiskBins { rings, sectors: n_bins / rings })
    }

    pub fn len(&self) -> usize {
        self.rings * self.sectors
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Cell index of a point; points on or past the rim go to the outer ring.
    pub fn index(&self, p: DiskPoint) -> usize {
        let ring = ((p.radius_sq() * self.rings as f64) as usize).min(self.rings - 1);
        let mut phi = p.v.atan2(p.u);
        if phi < 0.0 {
            phi += TAU;
        }
        let sector = ((phi / TAU * self.sectors as f64) as usize).min(self.sectors - 1);
        ring * self.sectors + sector
    }

    /// Sub-quadrature nodes of one cell, uniform in area.
    fn nodes(&self, bin: usize) -> impl Iterator<Item = DiskPoint> + '_ {
        let (k, s) = (bin / self.sectors, bin % self.sectors);
        (0..BIN_QUAD * BIN_QUAD).map(move |q| {
            let (i, j) = (q / BIN_QUAD, q % BIN_QUAD);
            let r = ((k as f64 + (i as f64 + 0.5) / BIN_QUAD as f64) / self.rings as f64).sqrt();
            let phi = TAU * (s as f64 + (j as f64 + 0.5) / BIN_QUAD as f64) / self.sectors as f64;
            DiskPoint::new(r * phi.cos(), r * phi.sin())
        })
    }
}

/// Pearson chi-square of observed counts against expected probabilities.
/// `probs` is normalized internally.
pub fn pearson(counts: &[u64], probs: &[f64]) -> Result<Chi2> {
    if counts.len() != probs.len() {
        return Err(Error::Shape(format!("{} counts, {} probabilities", counts.len(), probs.len())));
    }
    if counts.len() < 2 {
        return Err(Error::ZeroDof);
    }
    let n: u64 = counts.iter().sum();
    let total: f64 = probs.iter().sum();
    if !(total > 0.0) || probs.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
        return Err(Error::Invalid("bin probabilities must be finite, non-negative and not all zero".into()));
    }
    let expected: Vec<f64> = probs.iter().map(|p| p / total * n as f64).collect();
    let min = expected.iter().cloned().fold(f64::INFINITY, f64::min);
    if min < 5.0 {
        return Err(Error::TooFewExpected(min));
    }
    let statistic = counts.iter().zip(&expected).map(|(&o, &e)| (o as f64 - e).powi(2) / e).sum();
    let dof = counts.len() - 1;
    Ok(Chi2 { statistic, dof, p: chi2_sf(statistic, dof as f64) })
}

/// Pearson chi-square after pooling the least likely bins into one cell
/// until that cell expects at least 5 counts. Learned densities can put
/// essentially no mass in some bins, which more samples would not fix.
pub fn pearson_pooled(counts: &[u64], probs: &[f64]) -> Result<Chi2> {
    if counts.len() != probs.len() {
        return Err(Error::Shape(format!("{} counts, {} probabilities", counts.len(), probs.len())));
    }
    let n: u64 = counts.iter().sum();
    let total: f64 = probs.iter().sum();
    if !(total > 0.0) || probs.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
        return Err(Error::Invalid("bin probabilities must be finite, non-negative and not all zero".into()));
    }
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[a].total_cmp(&probs[b]).then(a.cmp(&b)));
    let (mut pool_c, mut pool_p, mut k) = (0u64, 0.0, 0);
    while k < order.len() && probs[order[k]] / total * (n as f64) < 5.0 {
        pool_c += counts[order[k]];
        pool_p += probs[order[k]];
        k += 1;
    }
    let mut c: Vec<u64> = order[k..].iter().map(|&i| counts[i]).collect();
    let mut p: Vec<f64> = order[k..].iter().map(|&i| probs[i]).collect();
    if k > 0 {
        // Top the pool up with the next smallest bins if needed.
        while pool_p / total * (n as f64) < 5.0 && !c.is_empty() {
            pool_c += c.remove(0);
            pool_p += p.remove(0);
        }
        c.push(pool_c);
        p.push(pool_p);
    }
    pearson(&c, &p)
}

/// Chi-square test of disk points against the uniform distribution.
pub fn chi2_equal_area_disk(samples: &[DiskPoint], n_bins: usize) -> Result<Chi2> {
    let bins = DiskBins::new(n_bins)?;
    let mut counts = vec![0u64; bins.len()];
    for &p in samples {
        counts[bins.index(p)] += 1;
    }
    pearson(&counts, &vec![1.0; bins.len()])
}

/// Bin probabilities of a flow by sub-quadrature of its density, normalized
/// over the disk (the sampler never returns points outside it).
pub fn flow_bin_probs(model: &FlowModel, cond: &FlowCond, bins: DiskBins) -> Result<Vec<f64>> {
    let pts: Vec<DiskPoint> = (0..bins.len()).flat_map(|b| bins.nodes(b)).collect();
    let pdf = flow_pdf_batch(model, Conds::Shared(cond), &pts)?;
    let per = BIN_QUAD * BIN_QUAD;
    let area = PI / bins.len() as f64;
    Ok(pdf.chunks(per).map(|c| c.iter().sum::<f64>() / per as f64 * area).collect())
}

/// Chi-square of `n_samples` flow draws against the flow's own density.
pub fn hist_vs_pdf(model: &FlowModel, cond: &FlowCond, n_samples: usize, n_bins: usize, seed: u64) -> Result<Chi2> {
    let bins = DiskBins::new(n_bins)?;
    let (pts, _) = flow_sample_batch(model, Conds::Shared(cond), n_samples, seed)?;
    let mut counts = vec![0u64; bins.len()];
    for p in pts {
        counts[bins.index(p)] += 1;
    }
    pearson_pooled(&counts, &flow_bin_probs(model, cond, bins)?)
}

/// Midpoint nodes of `grid_n` rings (uniform in r^2) by `grid_n` sectors,
/// and the common cell area. The cells tile the disk exactly.
pub fn disk_grid(grid_n: usize) -> (Vec<DiskPoint>, f64) {
    let n = grid_n as f64;
    let pts = (0..grid_n * grid_n)
        .map(|k| {
            let r = (((k / grid_n) as f64 + 0.5) / n).sqrt();
            let phi = TAU * ((k % grid_n) as f64 + 0.5) / n;
            DiskPoint::new(r * phi.cos(), r * phi.sin())
        })
        .collect();
    (pts, PI / (n * n))
}

/// Midpoint quadrature of the flow density over the disk.
pub fn normalization(model: &FlowModel, cond: &FlowCond, grid_n: usize) -> Result<f64> {
    if grid_n < 64 {
        return Err(Error::Invalid(format!("normalization grid {grid_n} is below 64")));
    }
    let (pts, cell) = disk_grid(grid_n);
    Ok(flow_pdf_batch(model, Conds::Shared(cond), &pts)?.iter().sum::<f64>() * cell)
}

/// `n_theta x n_phi` cell midpoints, uniform in solid angle.
pub fn stratified_directions(n_theta: usize, n_phi: usize) -> Vec<Direction> {
    let mut out = Vec::with_capacity(n_theta * n_phi);
    for i in 0..n_theta {
        let z = 1.0 - (i as f64 + 0.5) / n_theta as f64;
        let s = (1.0 - z * z).sqrt();
        for j in 0..n_phi {
            let phi = TAU * (j as f64 + 0.5) / n_phi as f64;
            out.push(Direction::new(s * phi.cos(), s * phi.sin(), z).expect("unit by construction"));
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Furnace {
    /// Largest `|alpha - 1|` over directions and channels.
    pub max_deviation: f64,
    pub warning: Option<String>,
}

/// Furnace test of a scene by brute-force walks over 64 stratified directions.
pub fn furnace_scene(scene: &MicrogeometryScene, walks: usize, uv: Option<[f64; 2]>, seed: u64) -> Result<Furnace> {
    let warning = (!scene.is_lossless()).then(|| "scene is lossy; deviation is not a conservation test".to_string());
    let mut worst: f64 = 0.0;
    for (i, wi) in stratified_directions(8, 8).into_iter().enumerate() {
        for c in 0..3 {
            let mut rng = Rng::keyed(seed, &[TAG_FURNACE, i as u64, c as u64]);
            worst = worst.max((mc_albedo_estimate(scene, wi, c, uv, walks, &mut rng)? - 1.0).abs());
        }
    }
    Ok(Furnace { max_deviation: worst, warning })
}

/// Furnace test of a learned albedo over 64 stratified directions.
pub fn furnace_material(m: &PureSampleMaterial, uv: Option<[f64; 2]>) -> Result<Furnace> {
    let mut worst: f64 = 0.0;
    for wi in stratified_directions(8, 8) {
        for a in m.albedo(wi, uv)? {
            worst = worst.max((a - 1.0).abs());
        }
    }
    Ok(Furnace { max_deviation: worst, warning: None })
}

/// `(integral of eval over the projected hemisphere, albedo)` per channel.
pub fn energy(m: &PureSampleMaterial, wi: Direction, uv: Option<[f64; 2]>, grid_n: usize) -> Result<([f64; 3], [f64; 3])> {
    let (pts, cell) = disk_grid(grid_n);
    let f = m.eval_many(wi, &pts, uv)?;
    let mut sum = [0.0; 3];
    for v in f {
        for c in 0..3 {
            sum[c] += v[c];
        }
    }
    Ok((sum.map(|s| s * cell), m.albedo(wi, uv)?))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReportEntry {
    pub name: String,
    pub statistic: f64,
    pub p: Option<f64>,
    pub pass: bool,
    pub seed: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Report {
    pub entries: Vec<ReportEntry>,
}

impl Report {
    pub fn push(&mut self, name: impl Into<String>, statistic: f64, p: Option<f64>, pass: bool, seed: u64) {
        self.entries.push(ReportEntry { name: name.into(), statistic, p, pass, seed });
    }

    pub fn all_pass(&self) -> bool {
        self.entries.iter().all(|e| e.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ReportEntry> {
        self.entries.iter().filter(|e| !e.pass)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Sizes and thresholds of [`validate_material`].
#[derive(Clone, Debug, PartialEq)]
pub struct SuiteConfig {
    pub seed: u64,
    /// Directions for the normalization and chi-square suites.
    pub directions: usize,
    pub norm_grid: usize,
    pub norm_tolerance: f64,
    pub samples: usize,
    pub bins: usize,
    pub p_min: f64,
    pub energy_directions: usize,
    pub energy_grid: usize,
    pub energy_tolerance: f64,
    /// Run the albedo furnace check (only meaningful for lossless scenes).
    pub furnace: bool,
    pub furnace_tolerance: f64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            seed: 0,
            directions: 8,
            norm_grid: 128,
            norm_tolerance: 0.05,
            samples: 100_000,
            bins: 64,
            p_min: 0.001,
            energy_directions: 16,
            energy_grid: 64,
            energy_tolerance: 0.05,
            furnace: false,
            furnace_tolerance: 0.02,
        }
    }
}

/// Runs the model suites on a learned material. Direction `i` of a suite
/// uses channel `i mod 3`; spatially varying materials get a random uv.
pub fn validate_material(m: &PureSampleMaterial, cfg: &SuiteConfig) -> Result<Report> {
    let mut report = Report::default();
    let seed = cfg.seed;
    let pick = |suite: u64, i: usize| -> (Direction, Option<[f64; 2]>) {
        let mut rng = Rng::keyed(seed, &[TAG_SUITE, suite, i as u64]);
        let wi = sample_uniform_hemisphere(&mut rng);
        let uv = m.sv().then(|| [rng.uniform(), rng.uniform()]);
        (wi, uv)
    };
    for i in 0..cfg.directions {
        let (wi, uv) = pick(0, i);
        let cond = &m.flow_conds(wi, uv)?[i % 3];
        let z = normalization(&m.flow, cond, cfg.norm_grid)?;
        report.push(format!("normalization[{i}]"), z, None, (z - 1.0).abs() <= cfg.norm_tolerance, seed);
    }
    for i in 0..cfg.directions {
        let (wi, uv) = pick(1, i);
        let cond = &m.flow_conds(wi, uv)?[i % 3];
        let s = seed.wrapping_add(i as u64);
        let chi = hist_vs_pdf(&m.flow, cond, cfg.samples, cfg.bins, s)?;
        report.push(format!("hist_vs_pdf[{i}]"), chi.statistic, Some(chi.p), chi.p > cfg.p_min, s);
    }
    for i in 0..cfg.energy_directions {
        let (wi, uv) = pick(2, i);
        let (integral, albedo) = energy(m, wi, uv, cfg.energy_grid)?;
        let worst = (0..3).map(|c| (integral[c] - albedo[c]).abs() / albedo[c].max(1e-12)).fold(0.0, f64::max);
        report.push(format!("energy[{i}]"), worst, None, worst <= cfg.energy_tolerance, seed);
    }
    if cfg.furnace {
        let uv = m.sv().then_some([0.5, 0.5]);
        let f = furnace_material(m, uv)?;
        report.push("furnace", f.max_deviation, None, f.max_deviation <= cfg.furnace_tolerance, seed);
    }
    Ok(report)
}

/// Upper tail `P(X > x)` of the chi-square distribution with `k` degrees of freedom.
pub fn chi2_sf(x: f64, k: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    gamma_q(0.5 * k, 0.5 * x)
}

/// Regularized upper incomplete gamma `Q(a, x)`.
pub fn gamma_q(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < a + 1.0 {
        1.0 - gamma_p_series(a, x)
    } else {
        gamma_q_fraction(a, x)
    }
}

fn gamma_p_series(a: f64, x: f64) -> f64 {
    let mut term = 1.0 / a;
    let mut sum = term;
    let mut ap = a;
    for _ in 0..1000 {
        ap += 1.0;
        term *= x / ap;
        sum += term;
        if term.abs() < sum.abs() * 1e-16 {
            break;
        }
    }
    sum * (-x + a * x.ln() - ln_gamma(a)).exp()
}

// Modified Lentz evaluation of the continued fraction for Q.
fn gamma_q_fraction(a: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..1000 {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    (-x + a * x.ln() - ln_gamma(a)).exp() * h
}

/// Lanczos approximation (g = 7, 9 terms).
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        return (PI / (PI * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut s = C[0];
    for (i, &c) in C.iter().enumerate().skip(1) {
        s += c / (x + i as f64);
    }
    let t = x + G + 0.5;
    0.5 * (TAU).ln() + (x + 0.5) * t.ln() - t + s.ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{gaussian2d_sample, sample_uniform_disk};
    use crate::microgeo::MicroBrdf;
    use crate::nn::DenseNet;

    fn zero_flow(steps: usize) -> FlowModel {
        FlowModel::new(DenseNet::zeros(FlowModel::layout(false, &[8], None)).unwrap(), steps, false).unwrap()
    }

    fn any_cond() -> FlowCond {
        FlowCond::new(Direction::new(0.0, 0.6, 0.8).unwrap(), 1, None).unwrap()
    }

    #[test]
    fn bins_are_equal_area() {
        for (n, r, s) in [(64, 8, 8), (16, 4, 4), (8, 2, 4), (7, 1, 7), (2, 1, 2)] {
            assert_eq!(DiskBins::new(n).unwrap(), DiskBins { rings: r, sectors: s });
        }
        assert!(matches!(DiskBins::new(1), Err(Error::ZeroDof)));
        // Fraction of a fine uniform lattice landing in each cell.
        let bins = DiskBins::new(16).unwrap();
        let mut rng = Rng::new(4, 0);
        let pts: Vec<DiskPoint> = (0..400_000).map(|_| sample_uniform_disk(&mut rng)).collect();
        let mut counts = vec![0usize; 16];
        for p in &pts {
            counts[bins.index(*p)] += 1;
        }
        for c in counts {
            assert!((c as f64 / pts.len() as f64 - 1.0 / 16.0).abs() < 2e-3);
        }
        assert_eq!(bins.index(DiskPoint::new(1.0, 0.0)), 12);
    }

    #[test]
    fn chi2_sf_matches_statrs() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        for k in [1.0, 2.0, 3.0, 15.0, 63.0, 200.0] {
            let d = ChiSquared::new(k).unwrap();
            for q in [0.01, 0.3, 0.9, 1.0, 1.7, 3.0, 6.0] {
                let x = k * q;
                let want = d.sf(x);
                let got = chi2_sf(x, k);
                assert!((got - want).abs() <= 1e-12 + 1e-9 * want, "k {k} x {x}: {got} vs {want}");
            }
        }
        // Far tail keeps relative accuracy.
        let want = ChiSquared::new(63.0).unwrap().sf(400.0);
        assert!((chi2_sf(400.0, 63.0) / want - 1.0).abs() < 1e-8);
        assert_eq!(chi2_sf(0.0, 3.0), 1.0);
    }

    #[test]
    fn pooling_merges_sparse_bins() {
        // n = 1000: bins with probability 0, 0.001 and 0.003 expect 0, 1 and 3
        // counts and pool with the 0.006 bin (6 counts) into one cell.
        let probs = [0.3, 0.0, 0.001, 0.39, 0.003, 0.006, 0.3];
        let counts = [310, 1, 0, 380, 5, 4, 300];
        let got = pearson_pooled(&counts, &probs).unwrap();
        let want = pearson(&[310, 380, 300, 10], &[0.3, 0.39, 0.3, 0.01]).unwrap();
        assert_eq!(got, want);
        assert_eq!(got.dof, 3);
        // Nothing to pool: identical to the plain test.
        let c = [250, 240, 260, 250];
        assert_eq!(pearson_pooled(&c, &[1.0; 4]).unwrap(), pearson(&c, &[1.0; 4]).unwrap());
        // Too few samples for two cells.
        assert!(matches!(pearson_pooled(&[3, 4], &[0.5, 0.5]), Err(Error::ZeroDof)));
    }

    #[test]
    fn ln_gamma_known_values() {
        assert!((ln_gamma(1.0)).abs() < 1e-14);
        assert!((ln_gamma(5.0) - 24f64.ln()).abs() < 1e-13);
        assert!((ln_gamma(0.5) - PI.sqrt().ln()).abs() < 1e-13);
        assert!((ln_gamma(0.1) - 2.252_712_651_734_206).abs() < 1e-12);
    }

    #[test]
    fn uniform_points_pass_and_one_bin_fails() {
        let mut rng = Rng::new(3, 0);
        let pts: Vec<DiskPoint> = (0..10_000).map(|_| sample_uniform_disk(&mut rng)).collect();
        let r = chi2_equal_area_disk(&pts, 16).unwrap();
        assert_eq!(r.dof, 15);
        assert!(r.p > 1e-4);
        let clumped = vec![DiskPoint::new(0.1, 0.1); 10_000];
        assert!(chi2_equal_area_disk(&clumped, 16).unwrap().p < 1e-10);
        assert!(matches!(chi2_equal_area_disk(&pts, 1), Err(Error::ZeroDof)));
        assert!(matches!(chi2_equal_area_disk(&pts[..70], 16), Err(Error::TooFewExpected(_))));
    }

    #[test]
    fn null_p_values_are_uniform() {
        // Kolmogorov-Smirnov at the 1% level over 100 repetitions.
        let mut ps: Vec<f64> = (0..100)
            .map(|s| {
                let mut rng = Rng::new(1000 + s, 0);
                let pts: Vec<DiskPoint> = (0..10_000).map(|_| sample_uniform_disk(&mut rng)).collect();
                chi2_equal_area_disk(&pts, 16).unwrap().p
            })
            .collect();
        ps.sort_by(f64::total_cmp);
        let n = ps.len() as f64;
        let d = ps
            .iter()
            .enumerate()
            .map(|(i, &p)| (p - i as f64 / n).max((i as f64 + 1.0) / n - p))
            .fold(0.0, f64::max);
        assert!(d < 1.628 / n.sqrt(), "KS statistic {d}");
    }

    #[test]
    fn zero_flow_histogram_matches_gaussian_masses() {
        let m = zero_flow(4);
        let cond = any_cond();
        let bins = DiskBins::new(64).unwrap();
        // Closed-form ring masses of the base Gaussian, split evenly by sector.
        let analytic: Vec<f64> = (0..64)
            .map(|b| {
                let k = (b / 8) as f64;
                ((-k / 16.0).exp() - (-(k + 1.0) / 16.0).exp()) / 8.0
            })
            .collect();
        let quad = flow_bin_probs(&m, &cond, bins).unwrap();
        for (q, a) in quad.iter().zip(&analytic) {
            assert!((q / a - 1.0).abs() < 1e-3);
        }
        let r = hist_vs_pdf(&m, &cond, 100_000, 64, 5).unwrap();
        assert!(r.p > 0.01, "p = {}", r.p);
    }

    #[test]
    fn mismatched_pair_is_rejected() {
        // Gaussian draws binned against uniform probabilities.
        let mut rng = Rng::new(8, 0);
        let pts: Vec<DiskPoint> = std::iter::repeat_with(|| gaussian2d_sample(&mut rng))
            .filter(|p| p.on_disk())
            .take(100_000)
            .collect();
        assert!(chi2_equal_area_disk(&pts, 64).unwrap().p < 1e-6);
        let bins = DiskBins::new(64).unwrap();
        let mut counts = vec![0u64; 64];
        for p in &pts {
            counts[bins.index(*p)] += 1;
        }
        let probs = flow_bin_probs(&zero_flow(2), &any_cond(), bins).unwrap();
        assert!(pearson(&counts, &probs).unwrap().p > 1e-3);
    }

    #[test]
    fn normalization_of_zero_flow() {
        let m = zero_flow(3);
        let z = normalization(&m, &any_cond(), 64).unwrap();
        let want = 1.0 - (-0.5f64).exp();
        assert!((z - want).abs() < 1e-4, "{z}");
        let fine = normalization(&m, &any_cond(), 256).unwrap();
        assert!((fine / z - 1.0).abs() < 5e-3);
        assert!(normalization(&m, &any_cond(), 32).is_err());
    }

    #[test]
    fn stratified_directions_cover_hemisphere() {
        let d = stratified_directions(8, 8);
        assert_eq!(d.len(), 64);
        let mean_z = d.iter().map(|v| v.z()).sum::<f64>() / 64.0;
        assert!((mean_z - 0.5).abs() < 1e-12);
        assert!(d.iter().all(|v| v.z() > 0.0));
    }

    #[test]
    fn furnace_on_scenes() {
        let mirror = MicrogeometryScene::flat(MicroBrdf::Mirror { reflectance: [1.0; 3] }).unwrap();
        let f = furnace_scene(&mirror, 200, None, 1).unwrap();
        assert_eq!(f.max_deviation, 0.0);
        assert!(f.warning.is_none());
        let lam = MicrogeometryScene::flat(MicroBrdf::Lambertian { albedo: [0.8; 3] }).unwrap();
        let f = furnace_scene(&lam, 2000, None, 1).unwrap();
        assert!((f.max_deviation - 0.2).abs() < 0.05);
        assert!(f.warning.is_some());
    }

    #[test]
    fn suite_runs_on_small_material() {
        use crate::albedo::AlbedoModel;
        use crate::material::Metadata;
        let mut anet = DenseNet::zeros(AlbedoModel::layout(false, &[4], None)).unwrap();
        anet.layer_mut(1).1.copy_from_slice(&[0.8, 0.5, 0.2]);
        let m = PureSampleMaterial::new(zero_flow(2), AlbedoModel::new(anet, false).unwrap(), None, Metadata::default()).unwrap();
        let cfg = SuiteConfig { directions: 2, samples: 20_000, energy_directions: 2, furnace: true, ..Default::default() };
        let r = validate_material(&m, &cfg).unwrap();
        assert_eq!(r.entries.len(), 7);
        // A truncated Gaussian holds 39% of its mass on the disk.
        assert!(r.entries.iter().filter(|e| e.name.starts_with("normalization")).all(|e| !e.pass));
        assert!(r.entries.iter().filter(|e| e.name.starts_with("hist")).all(|e| e.pass));
        let json: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(json["entries"][0]["name"], "normalization[0]");
        assert!(!r.all_pass());
    }
}
