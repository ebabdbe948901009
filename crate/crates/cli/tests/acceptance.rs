//! End-to-end acceptance checks. Prints one `criterion N: PASS|FAIL` line per
//! criterion and exits non-zero if any fails. Set `ACCEPTANCE_ONLY=2,6` to
//! run a subset; the others are reported as skipped.

use std::f64::consts::{FRAC_1_PI, PI};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use psample_core::albedo::{mc_albedo_estimate, train_albedo, AlbedoModel, AlbedoTrainConfig};
use psample_core::dataset::generate_homogeneous;
use psample_core::flow::{
    flow_pdf, flow_pdf_batch, flow_sample_batch, reflow_distill, train_flow, Conds, FlowCond, FlowModel, FlowTrainConfig,
    ReflowConfig,
};
use psample_core::geom::{disk_to_dir, sample_uniform_hemisphere, DiskPoint, Rng};
use psample_core::material::{Metadata, PureSampleMaterial};
use psample_core::microgeo::{scene_from_json, MicroBrdf, MicrogeometryScene};
use psample_core::nn::{DenseNet, NetLayout};
use psample_core::validate::{disk_grid, furnace_material, furnace_scene, normalization, validate_material, Report, SuiteConfig};
use psample_render::scene::SceneFile;
use psample_render::{render, Image, RenderOptions, RenderScene, Strategy};

const ALBEDO: [f64; 3] = [0.8, 0.5, 0.2];
/// Flow training budget shared by every scene: epochs and samples per epoch.
const LAMBERTIAN_FLOW: (usize, usize) = (500, 458_752);
const SCENE_FLOW: (usize, usize) = (100, 262_144);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Option<Outcome> {
    Some(Outcome { pass, detail })
}

fn progress(msg: &str) {
    eprintln!("[acceptance] {msg}");
}

fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn load_scene(name: &str) -> MicrogeometryScene {
    scene_from_json(&std::fs::read_to_string(repo().join("scenes").join(name)).unwrap()).unwrap()
}

fn lambertian_scene() -> MicrogeometryScene {
    MicrogeometryScene::flat(MicroBrdf::Lambertian { albedo: ALBEDO }).unwrap()
}

/// Centers of 8 equal-area rings by 8 sectors.
fn grid64() -> Vec<DiskPoint> {
    (0..64)
        .map(|k| {
            let r = (((k / 8) as f64 + 0.5) / 8.0).sqrt();
            let phi = 2.0 * PI * ((k % 8) as f64 + 0.5) / 8.0;
            DiskPoint::new(r * phi.cos(), r * phi.sin())
        })
        .collect()
}

/// A trained material with its wall-clock training times in seconds.
struct Trained {
    name: &'static str,
    material: PureSampleMaterial,
    flow_secs: f64,
    albedo_secs: f64,
    report: Option<Report>,
}

fn train(name: &'static str, scene: &MicrogeometryScene, budget: (usize, usize)) -> Trained {
    let data = generate_homogeneous(scene, 512, 2000, 1).unwrap();
    let cfg = FlowTrainConfig { epochs: budget.0, samples_per_epoch: Some(budget.1), ..Default::default() };
    let t = Instant::now();
    let flow = train_flow(&data, &cfg, 7).unwrap().model;
    let flow_secs = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let (albedo, _) = train_albedo(&data, None, &AlbedoTrainConfig::default(), 1).unwrap();
    let albedo_secs = t.elapsed().as_secs_f64();
    progress(&format!("{name}: flow {flow_secs:.0} s, albedo {albedo_secs:.1} s"));
    let material = PureSampleMaterial::new(flow, albedo, None, Metadata::default()).unwrap();
    Trained { name, material, flow_secs, albedo_secs, report: None }
}

fn ensure_report(t: &mut Trained) -> &Report {
    if t.report.is_none() {
        let start = Instant::now();
        t.report = Some(validate_material(&t.material, &SuiteConfig::default()).unwrap());
        progress(&format!("{}: suite {:.0} s", t.name, start.elapsed().as_secs_f64()));
    }
    t.report.as_ref().unwrap()
}

fn criterion1(m: &Trained) -> Option<Outcome> {
    let pts = grid64();
    let mut rng = Rng::new(101, 0);
    let (mut pdf_err, mut alb_err, mut eval_err) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..100 {
        let wi = sample_uniform_hemisphere(&mut rng);
        let a = m.material.albedo(wi, None).unwrap();
        for c in 0..3 {
            alb_err = alb_err.max((a[c] - ALBEDO[c]).abs());
            let cond = FlowCond::new(wi, c, None).unwrap();
            for p in flow_pdf_batch(&m.material.flow, Conds::Shared(&cond), &pts).unwrap() {
                pdf_err = pdf_err.max((p * PI - 1.0).abs());
            }
        }
        let wos: Vec<_> = pts.iter().map(|p| disk_to_dir(*p).unwrap().vec()).collect();
        for wo in wos {
            let f = m.material.eval(wi.vec(), wo, None).unwrap();
            for c in 0..3 {
                eval_err = eval_err.max((f[c] / (ALBEDO[c] * FRAC_1_PI) - 1.0).abs());
            }
        }
    }
    let pass = pdf_err <= 0.10 && alb_err <= 0.02 && eval_err <= 0.10 && m.flow_secs <= 1200.0 && m.albedo_secs <= 120.0;
    outcome(
        pass,
        format!(
            "max |pdf*pi - 1| {pdf_err:.4} (<= 0.10), max |albedo - a| {alb_err:.4} (<= 0.02), \
             max |eval/(a/pi) - 1| {eval_err:.4} (<= 0.10); flow {:.0} s (<= 1200), albedo {:.1} s (<= 120)",
            m.flow_secs, m.albedo_secs
        ),
    )
}

fn criterion2() -> Option<Outcome> {
    let scene = lambertian_scene();
    let start = Instant::now();
    let n = 1_000_000;
    let mut rng = Rng::new(202, 0);
    let wi = sample_uniform_hemisphere(&mut rng);
    let mut worst_sigmas: f64 = 0.0;
    let mut estimates = [0.0; 3];
    for c in 0..3 {
        let est = mc_albedo_estimate(&scene, wi, c, None, n, &mut rng).unwrap();
        let sigma = (ALBEDO[c] * (1.0 - ALBEDO[c]) / n as f64).sqrt();
        worst_sigmas = worst_sigmas.max((est - ALBEDO[c]).abs() / sigma);
        estimates[c] = est;
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst_sigmas <= 3.0 && secs < 30.0,
        format!("estimates {estimates:.5?} over 1e6 walks each, worst {worst_sigmas:.2} sigma (<= 3), {secs:.1} s (< 30)"),
    )
}

/// `start` marks the beginning of data generation for the mirror scene.
fn criterion3(mirror: &Trained, start: Instant) -> Option<Outcome> {
    let mc = furnace_scene(&load_scene("mirror_heightfield.json"), 10_000, None, 303).unwrap();
    let learned = furnace_material(&mirror.material, None).unwrap();
    let total_secs = start.elapsed().as_secs_f64();
    let pass = mc.max_deviation == 0.0 && learned.max_deviation <= 0.02 && total_secs < 1800.0;
    outcome(
        pass,
        format!(
            "MC max |alpha - 1| {:e} (== 0), learned max |alpha - 1| {:.4} (<= 0.02), {total_secs:.0} s (< 1800)",
            mc.max_deviation, learned.max_deviation
        ),
    )
}

fn suite_entries<'a>(r: &'a Report, prefix: &'a str) -> impl Iterator<Item = &'a psample_core::validate::ReportEntry> {
    r.entries.iter().filter(move |e| e.name.starts_with(prefix))
}

fn criterion4(models: &mut [&mut Trained]) -> Option<Outcome> {
    let zero = FlowModel::new(DenseNet::zeros(FlowModel::layout(false, &[64; 5], None)).unwrap(), 50, false).unwrap();
    let cond = FlowCond::new(sample_uniform_hemisphere(&mut Rng::new(404, 0)), 1, None).unwrap();
    let origin = flow_pdf(&zero, &cond, DiskPoint::new(0.0, 0.0)).unwrap();
    let mass = normalization(&zero, &cond, 128).unwrap();
    let origin_err = (origin - 0.5 * FRAC_1_PI).abs();
    let mass_err = (mass - (1.0 - (-0.5f64).exp())).abs();
    let mut pass = origin_err <= 1e-6 && mass_err <= 1e-3;
    let mut detail = format!("zero flow: |pdf(0) - 1/2pi| {origin_err:.1e} (<= 1e-6), |mass - 0.3935| {mass_err:.1e} (<= 1e-3)");
    for m in models.iter_mut() {
        let name = m.name;
        let r = ensure_report(m);
        let (lo, hi) = suite_entries(r, "normalization").fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), e| {
            (lo.min(e.statistic), hi.max(e.statistic))
        });
        pass &= (0.95..=1.05).contains(&lo) && (0.95..=1.05).contains(&hi);
        detail += &format!("; {name} in [{lo:.4}, {hi:.4}]");
    }
    outcome(pass, detail)
}

fn criterion5(models: &mut [&mut Trained]) -> Option<Outcome> {
    let mut pass = true;
    let mut detail = String::from("min p over 8 directions (> 0.001):");
    for m in models.iter_mut() {
        let name = m.name;
        let r = ensure_report(m);
        let min_p = suite_entries(r, "hist_vs_pdf").filter_map(|e| e.p).fold(1.0f64, f64::min);
        let n = suite_entries(r, "hist_vs_pdf").count();
        pass &= n == 8 && min_p > 0.001;
        detail += &format!(" {name} {min_p:.4}");
    }
    outcome(pass, detail)
}

fn random_layout(rng: &mut Rng) -> NetLayout {
    let cond = rng.below(7);
    let hidden: Vec<usize> = (0..1 + rng.below(4)).map(|_| 2 + rng.below(11)).collect();
    let mut layout = NetLayout::mlp(2 + cond, &hidden, 2 + rng.below(2));
    let square: Vec<usize> = (1..layout.sizes.len() - 1).filter(|&l| layout.sizes[l] == layout.sizes[l + 1]).collect();
    if !square.is_empty() && rng.below(2) == 0 {
        layout = layout.with_residual(square[rng.below(square.len())]);
    }
    layout
}

fn criterion6() -> Option<Outcome> {
    let start = Instant::now();
    let mut rng = Rng::new(606, 0);
    let h = 1e-5;
    let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-6);
    let (mut worst_back, mut worst_jac) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let mut net = DenseNet::<f64>::init(random_layout(&mut rng), &mut rng).unwrap();
        for p in net.params_mut() {
            *p += 0.2 * rng.normal();
        }
        let x: Vec<f64> = (0..net.input_size()).map(|_| rng.normal()).collect();
        let up: Vec<f64> = (0..net.output_size()).map(|_| rng.normal()).collect();
        let f = |n: &DenseNet<f64>, x: &[f64]| -> f64 { n.forward(x).unwrap().iter().zip(&up).map(|(a, b)| a * b).sum() };
        let (g, ig) = net.backward(&x, &up).unwrap();
        for k in 0..net.params().len() {
            let (mut p, mut m) = (net.clone(), net.clone());
            p.params_mut()[k] += h;
            m.params_mut()[k] -= h;
            worst_back = worst_back.max(rel((f(&p, &x) - f(&m, &x)) / (2.0 * h), g[k]));
        }
        for k in 0..x.len() {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[k] += h;
            xm[k] -= h;
            worst_back = worst_back.max(rel((f(&net, &xp) - f(&net, &xm)) / (2.0 * h), ig[k]));
        }
        let jac = net.input_jacobian_2d([x[0], x[1]], &x[2..]).unwrap();
        for c in 0..2 {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[c] += h;
            xm[c] -= h;
            let (yp, ym) = (net.forward(&xp).unwrap(), net.forward(&xm).unwrap());
            for r in 0..2 {
                worst_jac = worst_jac.max(rel((yp[r] - ym[r]) / (2.0 * h), jac[r][c]));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst_back < 1e-3 && worst_jac < 1e-3 && secs < 60.0,
        format!("100 nets: backward max rel err {worst_back:.2e}, input_jacobian_2d {worst_jac:.2e} (< 1e-3), {secs:.1} s (< 60)"),
    )
}

fn criterion7(teacher: &Trained) -> (Option<Outcome>, Trained) {
    let start = Instant::now();
    let (student, _) = reflow_distill(&teacher.material.flow, None, &ReflowConfig::default(), 3).unwrap();
    let secs = start.elapsed().as_secs_f64();
    progress(&format!("reflow {secs:.0} s"));
    let (grid, _) = disk_grid(64);
    let mut rng = Rng::new(707, 0);
    let (mut worst, mut teacher_evals, mut student_evals) = (0.0f64, 0.0, 0.0);
    for i in 0..8 {
        let cond = FlowCond::new(sample_uniform_hemisphere(&mut rng), i % 3, None).unwrap();
        let a = flow_pdf_batch(&teacher.material.flow, Conds::Shared(&cond), &grid).unwrap();
        let b = flow_pdf_batch(&student, Conds::Shared(&cond), &grid).unwrap();
        let mean = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / grid.len() as f64;
        worst = worst.max(mean);
        teacher_evals += flow_sample_batch(&teacher.material.flow, Conds::Shared(&cond), 10_000, i as u64).unwrap().1.evals_per_sample();
        student_evals += flow_sample_batch(&student, Conds::Shared(&cond), 10_000, i as u64).unwrap().1.evals_per_sample();
    }
    let ratio = teacher_evals / student_evals;
    let pass = worst < 0.05 * FRAC_1_PI && ratio >= 4.0 && student.steps == 10 && teacher.material.flow.steps == 50;
    let albedo: AlbedoModel = teacher.material.albedo.clone();
    let material = PureSampleMaterial::new(student, albedo, None, Metadata::default()).unwrap();
    (
        outcome(
            pass,
            format!(
                "worst mean |pdf diff| over 8 directions {:.4}/pi (< 0.05/pi), {:.1}x fewer net evaluations per sample (>= 4)",
                worst * PI,
                ratio
            ),
        ),
        Trained { name: "reflow", material, flow_secs: secs, albedo_secs: 0.0, report: None },
    )
}

fn render_scene(v: serde_json::Value) -> RenderScene {
    let desc: SceneFile = serde_json::from_value(v).unwrap();
    RenderScene::from_file(&desc, Path::new("."), None).unwrap()
}

fn mean_relative_difference(a: &Image, b: &Image) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for (p, q) in a.pixels.iter().zip(&b.pixels) {
        for c in 0..3 {
            if q[c] > 0.0 {
                sum += ((p[c] - q[c]) / q[c]).abs() as f64;
                n += 1;
            }
        }
    }
    sum / n.max(1) as f64
}

fn criterion8() -> Option<Outcome> {
    let start = Instant::now();
    // A floor and a wall, so both strategies see occlusion and interreflection.
    let env = render_scene(serde_json::json!({
        "camera": {"origin": [0, -2, 2.5], "look_at": [0, 0, 0.3], "up": [0, 0, 1], "fov_deg": 40},
        "image": {"width": 64, "height": 64, "spp": 4096},
        "materials": {
            "floor": {"kind": "lambertian", "albedo": [0.8, 0.5, 0.2]},
            "wall": {"kind": "lambertian", "albedo": [0.3, 0.6, 0.9]}
        },
        "quads": [
            {"corner": [-10, -10, 0], "edge_u": [20, 0, 0], "edge_v": [0, 20, 0], "material": "floor"},
            {"corner": [-1, 0.5, 0], "edge_u": [2, 0, 0], "edge_v": [0, 0, 1.2], "material": "wall"}
        ],
        "environment": {"radiance": [1.0, 0.8, 0.6]}
    }));
    let run = |strategy| render(&env, &RenderOptions { seed: 808, strategy, spp: None }).unwrap();
    let diff = mean_relative_difference(&run(Strategy::MaterialOnly), &run(Strategy::LightOnly));

    let light = [0.4, -0.3, 1.5];
    let intensity = 6.0;
    let s = render_scene(serde_json::json!({
        "camera": {"origin": [0, 0, 3], "look_at": [0, 0, 0], "up": [0, 1, 0], "fov_deg": 30},
        "image": {"width": 64, "height": 64, "spp": 256},
        "materials": {"m": {"kind": "lambertian", "albedo": ALBEDO}},
        "quads": [{"corner": [-1, -1, 0], "edge_u": [2, 0, 0], "edge_v": [0, 2, 0], "material": "m"}],
        "point_lights": [{"position": light, "intensity": [intensity, intensity, intensity]}]
    }));
    let img = render(&s, &RenderOptions { seed: 809, ..Default::default() }).unwrap();
    let c = &s.camera;
    let mut worst: f64 = 0.0;
    for y in 0..64 {
        for x in 0..64 {
            // Closed form averaged over a 4x4 sub-pixel lattice.
            let mut want = 0.0;
            for k in 0..16 {
                let sx = (x as f64 + (k % 4) as f64 / 4.0 + 0.125) / 64.0;
                let sy = (y as f64 + (k / 4) as f64 / 4.0 + 0.125) / 64.0;
                let d = (c.forward + c.right * (2.0 * sx - 1.0) + c.up * (1.0 - 2.0 * sy)).normalize();
                let t = -c.origin.z / d.z;
                let p = [c.origin.x + t * d.x, c.origin.y + t * d.y];
                let to = [light[0] - p[0], light[1] - p[1], light[2]];
                let d2 = to[0] * to[0] + to[1] * to[1] + to[2] * to[2];
                want += intensity * (to[2] / d2.sqrt()) / d2 / 16.0;
            }
            let got = img.get(x, y);
            for ch in 0..3 {
                worst = worst.max((got[ch] as f64 / (ALBEDO[ch] * FRAC_1_PI * want) - 1.0).abs());
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        diff < 0.03 && worst < 0.02,
        format!(
            "material-only vs light-only mean relative difference {diff:.4} (< 0.03); \
             point light worst pixel error {worst:.4} (< 0.02); {secs:.0} s"
        ),
    )
}

fn criterion9(slab: &mut Trained) -> Option<Outcome> {
    let r = ensure_report(slab);
    let min_norm = suite_entries(r, "normalization").map(|e| (e.statistic - 1.0).abs()).fold(0.0f64, f64::max);
    let min_p = suite_entries(r, "hist_vs_pdf").filter_map(|e| e.p).fold(1.0f64, f64::min);
    let energy = suite_entries(r, "energy").map(|e| e.statistic).fold(0.0f64, f64::max);
    let n_energy = suite_entries(r, "energy").count();
    outcome(
        r.all_pass() && n_energy == 16,
        format!(
            "max |normalization - 1| {min_norm:.4} (<= 0.05), min chi-square p {min_p:.4} (> 0.001), \
             worst energy error over 16 directions {energy:.4} (<= 0.05)"
        ),
    )
}

/// Runs the command line pipeline with `threads` workers in a fresh
/// directory and returns every produced file plus captured stdout.
fn pipeline(dir: &Path, threads: usize) -> Vec<(String, Vec<u8>)> {
    let _ = std::fs::remove_dir_all(dir);
    std::fs::create_dir_all(dir).unwrap();
    let scenes = repo().join("scenes");
    let scene = |n: &str| scenes.join(n).to_string_lossy().into_owned();
    std::fs::write(
        dir.join("view.json"),
        serde_json::json!({
            "camera": {"origin": [0, -2, 2], "look_at": [0, 0, 0], "up": [0, 0, 1], "fov_deg": 40},
            "image": {"width": 8, "height": 8, "spp": 2},
            "materials": {"m": {"kind": "neural", "path": "reflow.psm"}},
            "quads": [{"corner": [-1, -1, 0], "edge_u": [2, 0, 0], "edge_v": [0, 2, 0], "material": "m"}],
            "point_lights": [{"position": [1, -1, 2], "intensity": [3, 3, 3]}],
            "environment": {"radiance": [0.2, 0.2, 0.2]}
        })
        .to_string(),
    )
    .unwrap();
    let steps: Vec<Vec<String>> = [
        vec!["gen", "--scene", &scene("flat_lambertian.json"), "--count", "20000", "--out", "data.psmp"],
        vec!["train-flow", "--dataset", "data.psmp", "--epochs", "2", "--out", "flow.psm"],
        vec!["train-albedo", "--model", "flow.psm", "--dataset", "data.psmp", "--epochs", "50", "--out", "model.psm"],
        vec!["reflow", "--model", "model.psm", "--epochs", "1", "--count", "4096", "--out", "reflow.psm"],
        vec!["eval", "--model", "reflow.psm", "--out", "eval.jsonl"],
        vec!["sample", "--model", "reflow.psm", "--out", "sample.jsonl"],
        vec!["pdf", "--model", "reflow.psm", "--out", "pdf.jsonl"],
        vec!["render", "--scene", "view.json", "--out", "view.pfm"],
        vec!["validate", "--model", "model.psm", "--steps", "5", "--count", "5000", "--out", "report.json"],
        vec!["gen", "--scene", &scene("sv_checker.json"), "--sv", "--count", "3000", "--out", "sv.psmp"],
        vec!["train-flow", "--dataset", "sv.psmp", "--sv", "--epochs", "1", "--out", "sv_flow.psm"],
        vec!["train-albedo", "--model", "sv_flow.psm", "--scene", &scene("sv_checker.json"), "--count", "200", "--epochs", "20", "--out", "sv.psm"],
        vec!["sample", "--model", "sv.psm", "--out", "sv_sample.jsonl"],
    ]
    .iter()
    .map(|s| s.iter().map(|a| a.to_string()).collect())
    .collect();
    let mut stdout = Vec::new();
    for args in &steps {
        let out = Command::new(env!("CARGO_BIN_EXE_psample"))
            .current_dir(dir)
            .args(args)
            .args(["--seed", "11", "--deterministic", "--threads", &threads.to_string()])
            .output()
            .unwrap();
        // A tiny model may fail its own validation; only crashes matter here.
        let ok = out.status.success() || (args[0] == "validate" && out.status.code() == Some(1));
        assert!(ok, "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
        stdout.extend_from_slice(&out.stdout);
    }
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files.push(("stdout".into(), stdout));
    files
}

fn criterion10() -> Option<Outcome> {
    let start = Instant::now();
    let root = std::env::temp_dir().join(format!("psample-acceptance-{}", std::process::id()));
    let a = pipeline(&root.join("t1"), 1);
    let b = pipeline(&root.join("t3"), 3);
    let _ = std::fs::remove_dir_all(&root);
    let differing: Vec<&str> = a.iter().zip(&b).filter(|(x, y)| x != y).map(|(x, _)| x.0.as_str()).collect();
    let pass = a.len() == b.len() && differing.is_empty();
    outcome(
        pass,
        format!(
            "{} outputs of 13 pipeline runs compared between 1 and 3 threads, differing: {differing:?}; {:.0} s",
            a.len(),
            start.elapsed().as_secs_f64()
        ),
    )
}

fn main() -> ExitCode {
    let only: Option<Vec<usize>> =
        std::env::var("ACCEPTANCE_ONLY").ok().map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let want = |n: usize| only.as_ref().is_none_or(|o| o.contains(&n));
    let mut results: Vec<Option<Outcome>> = (0..=10).map(|_| None).collect();

    if want(2) {
        results[2] = criterion2();
    }
    if want(6) {
        results[6] = criterion6();
    }
    if want(8) {
        results[8] = criterion8();
    }

    let models_needed = [1, 3, 4, 5, 7, 9].iter().any(|&n| want(n));
    let mut mirror = None;
    let mut slab = None;
    let mut lambertian = None;
    let mut student = None;
    if models_needed {
        if want(3) || want(4) || want(5) {
            let start = Instant::now();
            let m = train("mirror", &load_scene("mirror_heightfield.json"), SCENE_FLOW);
            if want(3) {
                results[3] = criterion3(&m, start);
            }
            mirror = Some(m);
        }
        if want(9) || want(4) || want(5) {
            slab = Some(train("slab", &load_scene("layered_slab.json"), SCENE_FLOW));
        }
        if want(1) || want(4) || want(5) || want(7) {
            let m = train("lambertian", &lambertian_scene(), LAMBERTIAN_FLOW);
            if want(1) {
                results[1] = criterion1(&m);
            }
            if want(7) || want(4) || want(5) {
                let (r, s) = criterion7(&m);
                if want(7) {
                    results[7] = r;
                }
                student = Some(s);
            }
            lambertian = Some(m);
        }
        if want(9) {
            results[9] = criterion9(slab.as_mut().unwrap());
        }
        let mut models: Vec<&mut Trained> =
            [lambertian.as_mut(), student.as_mut(), mirror.as_mut(), slab.as_mut()].into_iter().flatten().collect();
        if want(4) {
            results[4] = criterion4(&mut models);
        }
        if want(5) {
            results[5] = criterion5(&mut models);
        }
    }
    if want(10) {
        results[10] = criterion10();
    }

    let mut failed = false;
    for (n, r) in results.iter().enumerate().skip(1) {
        match r {
            Some(o) => {
                failed |= !o.pass;
                println!("criterion {n}: {} {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
            }
            None => println!("criterion {n}: SKIP"),
        }
    }
    if failed {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
