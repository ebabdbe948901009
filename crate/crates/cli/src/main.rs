//! `psample`: generate walk datasets, train and distil learned materials,
//! query them, render with them and validate them.

mod defaults;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use psample_core::albedo::{mc_albedo_estimate, train_albedo, AlbedoModel, AlbedoTrainConfig};
use psample_core::dataset::{generate_albedo_sv, generate_homogeneous_total, generate_sv, Dataset};
use psample_core::flow::{reflow_distill, train_flow, FlowTrainConfig, ReflowConfig};
use psample_core::geom::{sample_uniform_hemisphere, Rng};
use psample_core::material::{config_digest, Metadata, PureSampleMaterial};
use psample_core::microgeo::{scene_from_json, MicrogeometryScene};
use psample_core::validate::{furnace_scene, stratified_directions, validate_material, SuiteConfig};
use psample_core::Error;
use psample_render::{render, write_pfm, write_ppm, RenderOptions, RenderScene};

use defaults as d;

#[derive(Parser, Debug)]
#[command(name = "psample", version, about = "Learn, sample and render BRDFs from random walks on microgeometry")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    opts: Opts,
}

#[derive(Subcommand, Clone, Copy, Debug, PartialEq, Eq)]
enum Command {
    /// Trace random walks on a microgeometry scene and write a dataset.
    Gen,
    /// Train the exit-direction flow (and neural texture) on a dataset.
    TrainFlow,
    /// Train the albedo network of a model from acceptance ratios.
    TrainAlbedo,
    /// Distil a model's flow into one that needs fewer Euler steps.
    Reflow,
    /// Evaluate the BRDF at random direction pairs.
    Eval,
    /// Draw outgoing directions from the material.
    Sample,
    /// Evaluate the sampling density at random direction pairs.
    Pdf,
    /// Path trace a render scene.
    Render,
    /// Run the statistical validation suites on a model.
    Validate,
    /// Describe a model or dataset file.
    Inspect,
}

#[derive(clap::Args, Debug, Default, Serialize)]
struct Opts {
    /// Scene JSON: microgeometry for gen / train-albedo / validate, render scene for render.
    #[arg(long, global = true)]
    scene: Option<PathBuf>,
    /// Dataset file (.psmp).
    #[arg(long, global = true)]
    dataset: Option<PathBuf>,
    /// Model file (.psm).
    #[arg(long, global = true)]
    model: Option<PathBuf>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "PSAMPLE_THREADS")]
    threads: Option<usize>,
    /// Euler steps of the flow.
    #[arg(long, global = true)]
    steps: Option<usize>,
    /// Training epochs (iterations for train-albedo).
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true)]
    lr: Option<f64>,
    /// Require spatially varying data.
    #[arg(long, global = true)]
    sv: bool,
    /// Item count: walks, pairs, groups, queries or samples depending on the command.
    #[arg(long, global = true)]
    count: Option<usize>,
    #[arg(long, global = true)]
    spp: Option<usize>,
    /// Ordered reductions only. Every stage already reduces in a fixed
    /// order, so output never depends on the thread count.
    #[arg(long, global = true)]
    deterministic: bool,
}

/// One-line failure reported as JSON on stderr.
#[derive(Debug)]
struct Fail {
    kind: &'static str,
    message: String,
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail { kind: e.kind(), message: e.to_string() }
    }
}

impl From<std::io::Error> for Fail {
    fn from(e: std::io::Error) -> Self {
        Error::from(e).into()
    }
}

/// Attaches the file name to errors from reading or writing `path`.
fn at(path: &Path) -> impl Fn(Error) -> Fail + '_ {
    move |e| {
        let mut f = Fail::from(e);
        f.message = format!("{}: {}", path.display(), f.message);
        f
    }
}

fn usage(message: impl Into<String>) -> Fail {
    Fail { kind: "usage", message: message.into() }
}

type Res<T> = Result<T, Fail>;

impl Opts {
    fn set_flags(&self) -> Vec<&'static str> {
        let mut v = Vec::new();
        let mut add = |on: bool, name| {
            if on {
                v.push(name)
            }
        };
        add(self.scene.is_some(), "scene");
        add(self.dataset.is_some(), "dataset");
        add(self.model.is_some(), "model");
        add(self.out.is_some(), "out");
        add(self.steps.is_some(), "steps");
        add(self.epochs.is_some(), "epochs");
        add(self.lr.is_some(), "lr");
        add(self.sv, "sv");
        add(self.count.is_some(), "count");
        add(self.spp.is_some(), "spp");
        v
    }

    fn need<'a>(&self, v: &'a Option<PathBuf>, flag: &str) -> Res<&'a Path> {
        v.as_deref().ok_or_else(|| usage(format!("--{flag} is required")))
    }
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Gen => "gen",
            Command::TrainFlow => "train-flow",
            Command::TrainAlbedo => "train-albedo",
            Command::Reflow => "reflow",
            Command::Eval => "eval",
            Command::Sample => "sample",
            Command::Pdf => "pdf",
            Command::Render => "render",
            Command::Validate => "validate",
            Command::Inspect => "inspect",
        }
    }

    /// Flags besides --seed, --threads and --deterministic.
    fn flags(self) -> &'static [&'static str] {
        match self {
            Command::Gen => &["scene", "out", "count", "sv"],
            Command::TrainFlow => &["dataset", "out", "epochs", "lr", "steps", "sv"],
            Command::TrainAlbedo => &["model", "dataset", "scene", "count", "out", "epochs", "lr"],
            Command::Reflow => &["model", "out", "epochs", "lr", "steps", "count"],
            Command::Eval | Command::Sample | Command::Pdf => &["model", "count", "steps", "out"],
            Command::Render => &["scene", "model", "spp", "out"],
            Command::Validate => &["model", "scene", "count", "steps", "out"],
            Command::Inspect => &["model", "dataset"],
        }
    }
}

fn print_config(cmd: Command, seed: u64, threads: usize, o: &Opts, resolved: Value) {
    let line = json!({
        "command": cmd.name(),
        "seed": seed,
        "threads": threads,
        "deterministic": o.deterministic,
        "config": resolved,
    });
    eprintln!("{line}");
}

fn emit(out: Option<&Path>, lines: &[Value]) -> Res<()> {
    let mut text = String::new();
    for l in lines {
        text.push_str(&l.to_string());
        text.push('\n');
    }
    match out {
        Some(p) => fs::write(p, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn load_scene(path: &Path) -> Res<MicrogeometryScene> {
    scene_from_json(&fs::read_to_string(path).map_err(|e| at(path)(e.into()))?).map_err(at(path))
}

fn run(cli: Cli) -> Res<()> {
    let (cmd, o) = (cli.command, &cli.opts);
    for f in o.set_flags() {
        if !cmd.flags().contains(&f) {
            return Err(usage(format!("--{f} is not used by `{}`", cmd.name())));
        }
    }
    let threads = match o.threads {
        Some(0) => return Err(usage("--threads must be at least 1")),
        Some(n) => n,
        None => std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Fail { kind: "threads", message: e.to_string() })?;
    let seed = o.seed.unwrap_or(d::SEED);
    let show = |resolved: Value| print_config(cmd, seed, threads, o, resolved);
    match cmd {
        Command::Gen => gen(o, seed, show),
        Command::TrainFlow => train_flow_cmd(o, seed, show),
        Command::TrainAlbedo => train_albedo_cmd(o, seed, show),
        Command::Reflow => reflow_cmd(o, seed, show),
        Command::Eval | Command::Sample | Command::Pdf => query(cmd, o, seed, show),
        Command::Render => render_cmd(o, seed, show),
        Command::Validate => validate_cmd(o, seed, show),
        Command::Inspect => inspect(o, show),
    }
}

fn gen(o: &Opts, seed: u64, show: impl Fn(Value)) -> Res<()> {
    let scene_path = o.need(&o.scene, "scene")?;
    let out = o.need(&o.out, "out")?;
    let scene = load_scene(scene_path)?;
    let sv = scene.desc().sv;
    if o.sv && !sv {
        return Err(usage("--sv given but the scene is not spatially varying"));
    }
    let count = o.count.unwrap_or(if sv { d::GEN_SV_PAIRS } else { d::GEN_COUNT });
    show(json!({
        "scene": scene_path,
        "out": out,
        "sv": sv,
        "count": count,
        "walks_per_direction": (!sv).then_some(d::GEN_WALKS_PER_DIRECTION),
    }));
    let data = if sv {
        generate_sv(&scene, count, seed)?
    } else {
        generate_homogeneous_total(&scene, count, d::GEN_WALKS_PER_DIRECTION, seed)?
    };
    data.write(out).map_err(at(out))?;
    let counts = data.counts();
    emit(None, &[json!({
        "records": data.len(),
        "walks": counts.map(|c| c.0),
        "accepted": counts.map(|c| c.1),
        "scene_hash": format!("{:016x}", data.scene_hash),
    })])
}

fn train_flow_cmd(o: &Opts, seed: u64, show: impl Fn(Value)) -> Res<()> {
    let data_path = o.need(&o.dataset, "dataset")?;
    let out = o.need(&o.out, "out")?;
    let data = Dataset::read(data_path).map_err(at(data_path))?;
    if o.sv && !data.sv {
        return Err(usage("--sv given but the dataset is not spatially varying"));
    }
    let mut cfg = if data.sv { FlowTrainConfig::sv_default() } else { FlowTrainConfig::default() };
    cfg.epochs = o.epochs.unwrap_or(d::FLOW_EPOCHS);
    cfg.lr = o.lr.unwrap_or(d::FLOW_LR);
    if let Some(s) = o.steps {
        cfg.steps = s;
    }
    show(json!({ "dataset": data_path, "out": out, "train": cfg }));
    let tr = train_flow(&data, &cfg, seed)?;
    // Until train-albedo runs, the albedo is the dataset's mean acceptance.
    let mean = data.counts().map(|(w, a)| if w > 0 { a as f64 / w as f64 } else { 0.0 });
    let acfg = if data.sv { AlbedoTrainConfig::sv_default() } else { AlbedoTrainConfig::default() };
    let albedo = AlbedoModel::constant(AlbedoModel::layout(data.sv, &acfg.hidden, acfg.residual), data.sv, mean)?;
    let metadata = Metadata {
        scene_hash: data.scene_hash,
        config_digest: config_digest(&json!({ "train_flow": cfg, "seed": seed })),
        stages: vec!["flow".into()],
    };
    PureSampleMaterial::new(tr.model, albedo, tr.texture, metadata)?.save(out).map_err(at(out))?;
    emit(None, &[json!({ "epochs": tr.log.len(), "loss": tr.log })])
}

fn train_albedo_cmd(o: &Opts, seed: u64, show: impl Fn(Value)) -> Res<()> {
    let model_path = o.need(&o.model, "model")?;
    let out = o.need(&o.out, "out")?;
    let mut m = PureSampleMaterial::load(model_path).map_err(at(model_path))?;
    let sv = m.sv();
    let mut cfg = if sv { AlbedoTrainConfig::sv_default() } else { AlbedoTrainConfig::default() };
    cfg.iterations = o.epochs.unwrap_or(d::ALBEDO_ITERATIONS);
    cfg.lr = o.lr.unwrap_or(d::ALBEDO_LR);
    let source = match (&o.dataset, &o.scene) {
        (Some(p), None) => json!({ "dataset": p }),
        (None, Some(p)) => {
            let count = o.count.unwrap_or(if sv { d::ALBEDO_SV_GROUPS } else { d::GEN_COUNT });
            json!({ "scene": p, "count": count, "walks_per_group": if sv { d::ALBEDO_SV_WALKS } else { d::GEN_WALKS_PER_DIRECTION } })
        }
        _ => return Err(usage("give exactly one of --dataset or --scene")),
    };
    if o.dataset.is_some() && o.count.is_some() {
        return Err(usage("--count only applies with --scene"));
    }
    show(json!({ "model": model_path, "out": out, "source": source, "train": cfg }));
    let data = match (&o.dataset, &o.scene) {
        (Some(p), _) => Dataset::read(p).map_err(at(p))?,
        (None, Some(p)) => {
            let scene = load_scene(p)?;
            let count = source["count"].as_u64().expect("set above") as usize;
            if sv {
                generate_albedo_sv(&scene, count, d::ALBEDO_SV_WALKS, seed)?
            } else {
                generate_homogeneous_total(&scene, count, d::GEN_WALKS_PER_DIRECTION, seed)?
            }
        }
        _ => unreachable!("checked above"),
    };
    if data.sv != sv {
        return Err(usage(format!("model sv = {sv} but data sv = {}", data.sv)));
    }
    if m.metadata.scene_hash != 0 && data.scene_hash != 0 && m.metadata.scene_hash != data.scene_hash {
        eprintln!("{}", json!({ "warning": "albedo data comes from a different scene than the flow data" }));
    }
    let (albedo, log) = train_albedo(&data, m.texture.as_ref(), &cfg, seed)?;
    m.albedo = albedo;
    m.metadata.stages.push("albedo".into());
    m.metadata.config_digest = config_digest(&json!({ "previous": m.metadata.config_digest, "train_albedo": cfg, "seed": seed }));
    m.save(out).map_err(at(out))?;
    emit(None, &[json!({ "iterations": log.len(), "final_loss": log.last() })])
}

fn reflow_cmd(o: &Opts, seed: u64, show: impl Fn(Value)) -> Res<()> {
    let model_path = o.need(&o.model, "model")?;
    let out = o.need(&o.out, "out")?;
    let mut m = PureSampleMaterial::load(model_path).map_err(at(model_path))?;
    let mut cfg = ReflowConfig { epochs: o.epochs.unwrap_or(d::REFLOW_EPOCHS), lr: o.lr.unwrap_or(d::REFLOW_LR), ..Default::default() };
    if let Some(s) = o.steps {
        cfg.student_steps = s;
    }
    if let Some(c) = o.count {
        cfg.pairs_per_epoch = c;
    }
    show(json!({ "model": model_path, "out": out, "reflow": cfg }));
    let (student, log) = reflow_distill(&m.flow, m.texture.as_ref(), &cfg, seed)?;
    m.flow = student;
    m.metadata.stages.push("reflow".into());
    m.metadata.config_digest = config_digest(&json!({ "previous": m.metadata.config_digest, "reflow": cfg, "seed": seed }));
    m.save(out).map_err(at(out))?;
    emit(None, &[json!({ "epochs": log.len(), "loss": log })])
}

fn query(cmd: Command, o: &Opts, seed: u64, show: impl Fn(Value)) -> Res<()> {
    let model_path = o.need(&o.model, "model")?;
    let mut m = PureSampleMaterial::load(model_path).map_err(at(model_path))?;
    if let Some(s) = o.steps {
        if s == 0 {
            return Err(usage("--steps must be at least 1"));
        }
        m.flow.steps = s;
    }
    let n = o.count.unwrap_or(d::QUERIES);
    show(json!({ "model": model_path, "count": n, "steps": m.flow.steps, "out": o.out }));
    let mut rng = Rng::keyed(seed, &[0x5155_4552]);
    let mut lines = Vec::with_capacity(n);
    for _ in 0..n {
        let wi = sample_uniform_hemisphere(&mut rng);
        let uv = m.sv().then(|| [rng.uniform(), rng.uniform()]);
        let line = match cmd {
            Command::Sample => match m.sample(wi.vec(), uv, &mut rng)? {
                Some(s) => json!({
                    "wi": wi.vec().to_array(), "uv": uv, "wo": s.wo.vec().to_array(),
                    "pdf": s.pdf, "weight": s.weight, "channel": s.channel,
                }),
                None => json!({ "wi": wi.vec().to_array(), "uv": uv, "wo": null }),
            },
            _ => {
                let wo = sample_uniform_hemisphere(&mut rng);
                let mut l = json!({ "wi": wi.vec().to_array(), "uv": uv, "wo": wo.vec().to_array() });
                if cmd == Command::Eval {
                    l["f"] = json!(m.eval(wi.vec(), wo.vec(), uv)?);
                    l["albedo"] = json!(m.albedo(wi, uv)?);
                } else {
                    l["pdf"] = json!(m.pdf(wi.vec(), wo.vec(), uv)?);
                }
                l
            }
        };
        lines.push(line);
    }
    emit(o.out.as_deref(), &lines)
}

fn render_cmd(o: &Opts, seed: u64, show: impl Fn(Value)) -> Res<()> {
    let scene_path = o.need(&o.scene, "scene")?;
    let out = o.need(&o.out, "out")?;
    let scene = RenderScene::load(scene_path, o.model.as_deref()).map_err(at(scene_path))?;
    let spp = o.spp.unwrap_or(scene.spp);
    if spp == 0 {
        return Err(usage("--spp must be at least 1"));
    }
    let preview = out.with_extension("ppm");
    show(json!({
        "scene": scene_path, "model": o.model, "out": out, "preview": preview,
        "width": scene.width, "height": scene.height, "spp": spp,
    }));
    let img = render(&scene, &RenderOptions { seed, spp: Some(spp), ..Default::default() })?;
    write_pfm(&img, out).map_err(at(out))?;
    write_ppm(&img, &preview).map_err(at(&preview))?;
    emit(None, &[json!({ "width": img.width, "height": img.height, "spp": spp, "mean": img.mean() })])
}

fn validate_cmd(o: &Opts, seed: u64, show: impl Fn(Value)) -> Res<()> {
    let model_path = o.need(&o.model, "model")?;
    let mut m = PureSampleMaterial::load(model_path).map_err(at(model_path))?;
    if let Some(s) = o.steps {
        m.flow.steps = s.max(1);
    }
    let scene = o.scene.as_deref().map(load_scene).transpose()?;
    let cfg = SuiteConfig {
        seed,
        samples: o.count.unwrap_or(d::VALIDATE_SAMPLES),
        furnace: scene.as_ref().is_some_and(|s| s.is_lossless()),
        ..Default::default()
    };
    show(json!({
        "model": model_path, "scene": o.scene, "out": o.out, "steps": m.flow.steps,
        "samples": cfg.samples, "bins": cfg.bins, "directions": cfg.directions,
        "energy_directions": cfg.energy_directions, "furnace": cfg.furnace,
    }));
    let mut report = validate_material(&m, &cfg)?;
    if let Some(scene) = &scene {
        let uv = m.sv().then_some([0.5, 0.5]);
        if scene.is_lossless() {
            let f = furnace_scene(scene, d::FURNACE_WALKS, uv, seed)?;
            report.push("scene_furnace", f.max_deviation, None, f.max_deviation == 0.0, seed);
        }
        // Learned albedo against brute-force walks over 64 stratified directions.
        let dirs = stratified_directions(8, 8);
        let mut err = [0.0; 3];
        for (i, wi) in dirs.iter().enumerate() {
            let a = m.albedo(*wi, uv)?;
            for (c, e) in err.iter_mut().enumerate() {
                let mut rng = Rng::keyed(seed, &[0x414c_4244, i as u64, c as u64]);
                *e += (a[c] - mc_albedo_estimate(scene, *wi, c, uv, 10_000, &mut rng)?).abs() / dirs.len() as f64;
            }
        }
        for (c, e) in err.iter().enumerate() {
            report.push(format!("albedo_vs_mc[{c}]"), *e, None, *e <= 0.02, seed);
        }
    }
    let json = report.to_json();
    match o.out.as_deref() {
        Some(p) => fs::write(p, &json)?,
        None => println!("{json}"),
    }
    let failed: Vec<&str> = report.failures().map(|e| e.name.as_str()).collect();
    if failed.is_empty() {
        eprintln!("{}", json!({ "passed": report.entries.len(), "failed": 0 }));
        Ok(())
    } else {
        Err(Fail {
            kind: "validation_failed",
            message: format!("{} of {} checks failed: {}", failed.len(), report.entries.len(), failed.join(", ")),
        })
    }
}

fn inspect(o: &Opts, show: impl Fn(Value)) -> Res<()> {
    let v = match (&o.model, &o.dataset) {
        (Some(p), None) => {
            show(json!({ "model": p }));
            let m = PureSampleMaterial::load(p).map_err(at(p))?;
            json!({
                "kind": "model",
                "sv": m.sv(),
                "flow": { "layout": m.flow.net.layout(), "steps": m.flow.steps, "params": m.flow.net.params().len() },
                "albedo": { "layout": m.albedo.net.layout(), "params": m.albedo.net.params().len() },
                "texture": m.texture.as_ref().map(|t| json!({ "width": t.width, "height": t.height, "dim": t.dim })),
                "metadata": m.metadata,
            })
        }
        (None, Some(p)) => {
            show(json!({ "dataset": p }));
            let data = Dataset::read(p).map_err(at(p))?;
            let counts = data.counts();
            json!({
                "kind": "dataset",
                "sv": data.sv,
                "records": data.len(),
                "scene_hash": format!("{:016x}", data.scene_hash),
                "seed": data.seed,
                "walks": counts.map(|c| c.0),
                "accepted": counts.map(|c| c.1),
                "groups": data.groups().len(),
            })
        }
        _ => return Err(usage("give exactly one of --model or --dataset")),
    };
    emit(None, &[v])
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("{}", json!({ "error": "usage", "message": first }));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", json!({ "error": f.kind, "message": f.message }));
            if f.kind == "usage" {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
