//! Command-line interface.

use std::ops::Range;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use sit_core::mesh::{build_icosphere, catmull_clark, Icosphere, Mesh, TriMesh};
use sit_core::model::{Confound, SiTConfig, SiTModel, PROFILES};
use sit_core::patching::{build_ico_patch_table, build_quad_patch_table};
use sit_core::resample::{apply_resample, build_resample_table, rotate, Axis, RotationBank};
use sit_core::train::{
    evaluate, gen_synthetic, pretrain_mpp, train_loop, Control, Dataset, LossKind, Observer, Target,
};
use sit_core::RngState;

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::RunConfig;
use crate::data::{load_dataset, save_dataset, LoadedData};
use crate::error::{write, Error, Result};
use crate::exec::Threaded;
use crate::export::{export_maps, ExportRequest};
use crate::format::{load_field, load_pairs, load_quad_mesh, load_tri_mesh, save_field, save_mesh, save_patch_table, save_resample};
use crate::manifest::RunManifest;
use crate::metrics::{history_csv, write_metrics, HEADER};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "SIT_OUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "sit", version, about = "Surface vision transformer toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a unit icosphere of the given order.
    Icosphere {
        #[arg(long)]
        order: u32,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build a patch table from an icosphere pair or a quad control mesh.
    Patch(PatchArgs),
    /// Resample a field between spherical meshes, optionally rotated.
    Resample(ResampleArgs),
    /// Write a synthetic band-limited dataset.
    Synth(SynthArgs),
    /// Masked-patch-prediction pretraining.
    Pretrain(TrainArgs),
    /// Supervised training.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Export attention rollout maps for one example.
    Attend(AttendArgs),
    /// Print the exact parameter count of a configuration.
    Info(InfoArgs),
}

#[derive(Debug, Args)]
pub struct PatchArgs {
    #[arg(long, requires = "coarse", conflicts_with_all = ["control", "pairs"])]
    fine: Option<PathBuf>,
    #[arg(long)]
    coarse: Option<PathBuf>,
    /// Quad control mesh, subdivided twice with Catmull-Clark.
    #[arg(long, required_unless_present = "fine")]
    control: Option<PathBuf>,
    /// Element pairs forming one patch each.
    #[arg(long, requires = "control")]
    pairs: Option<PathBuf>,
    /// Where to write the subdivided quad mesh the table indexes.
    #[arg(long, requires = "control")]
    fine_out: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ResampleArgs {
    #[arg(long)]
    src: PathBuf,
    #[arg(long)]
    dst: PathBuf,
    /// Mesh file with channels on the source mesh.
    #[arg(long)]
    field: PathBuf,
    /// Rotation `axis:degrees` applied to the data, e.g. `x:10`.
    #[arg(long)]
    rotate: Option<String>,
    #[arg(long)]
    table_out: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 6)]
    order: u32,
    #[arg(long, default_value_t = 12)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Classification targets (sign of the regression target).
    #[arg(long)]
    classes: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Start from a checkpoint: encoder and embeddings are kept, the head is
    /// re-initialized.
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    /// Recorded in the results file.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AttendArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 0)]
    index: usize,
    /// Comma-separated head indices; all heads when absent.
    #[arg(long, value_delimiter = ',')]
    heads: Option<Vec<usize>>,
    /// Layer range `start..end`; all layers when absent.
    #[arg(long)]
    layers: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InfoArgs {
    #[arg(long, conflicts_with = "profile")]
    config: Option<PathBuf>,
    #[arg(long)]
    profile: Option<String>,
    #[arg(long)]
    channels: Option<usize>,
}

fn out_path(arg: &Option<PathBuf>, default_name: &str) -> Result<PathBuf> {
    match arg {
        Some(p) => Ok(p.clone()),
        None => match std::env::var_os(OUT_DIR_ENV) {
            Some(d) => Ok(PathBuf::from(d).join(default_name)),
            None => Err(Error::Usage(format!("--out is required when {OUT_DIR_ENV} is unset"))),
        },
    }
}

fn sidecar(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".run.json");
    PathBuf::from(s)
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Icosphere { order, out } => icosphere(order, &out),
        Command::Patch(a) => patch(&a),
        Command::Resample(a) => resample(&a),
        Command::Synth(a) => synth(&a),
        Command::Pretrain(a) => training(&a, true),
        Command::Train(a) => training(&a, false),
        Command::Eval(a) => eval(&a),
        Command::Attend(a) => attend(&a),
        Command::Info(a) => info(&a),
    }
}

fn icosphere(order: u32, out: &Option<PathBuf>) -> Result<()> {
    let out = out_path(out, &format!("ico{order}.surf"))?;
    let mut manifest = RunManifest::start("icosphere");
    manifest.config = serde_json::json!({ "order": order });
    let ico = build_icosphere(order)?;
    save_mesh(&Mesh::Tri(ico.mesh().clone()), &out)?;
    println!("vertices {} faces {}", ico.mesh().vertex_count(), ico.mesh().face_count());
    manifest.output(&out);
    manifest.finish(&sidecar(&out))
}

/// The icosphere whose geometry equals `mesh`, if any.
fn as_icosphere(mesh: &TriMesh) -> Option<Icosphere> {
    let order = (0..=sit_core::mesh::MAX_ICOSPHERE_ORDER).find(|&n| Icosphere::expected_vertex_count(n) == mesh.vertex_count())?;
    let ico = build_icosphere(order).ok()?;
    (ico.mesh().id() == mesh.id()).then_some(ico)
}

fn patch(a: &PatchArgs) -> Result<()> {
    let out = out_path(&a.out, "patches.txt")?;
    let mut manifest = RunManifest::start("patch");
    let table = if let (Some(fine), Some(coarse)) = (&a.fine, &a.coarse) {
        manifest.input(fine)?;
        manifest.input(coarse)?;
        let lookup = |p: &Path| -> Result<Icosphere> {
            as_icosphere(&load_tri_mesh(p)?)
                .ok_or_else(|| sit_core::Error::Validation(format!("{} is not an icosphere", p.display())).into())
        };
        build_ico_patch_table(&lookup(fine)?, &lookup(coarse)?)?
    } else {
        let control_path = a.control.as_ref().ok_or_else(|| Error::Usage("give --fine/--coarse or --control".into()))?;
        manifest.input(control_path)?;
        let control = load_quad_mesh(control_path)?;
        let fine = catmull_clark(&catmull_clark(&control)?)?;
        let pairs = match &a.pairs {
            Some(p) => {
                manifest.input(p)?;
                Some(load_pairs(p)?)
            }
            None => None,
        };
        if let Some(fo) = &a.fine_out {
            save_mesh(&Mesh::Quad(fine.clone()), fo)?;
            manifest.output(fo);
        }
        build_quad_patch_table(&control, &fine, pairs.as_deref())?
    };
    save_patch_table(&table, &out)?;
    println!("patches {} vertices_per_patch {}", table.patch_count(), table.vertices_per_patch());
    manifest.output(&out);
    manifest.finish(&sidecar(&out))
}

fn parse_rotation(s: &str) -> Result<(Axis, f64)> {
    let (axis, deg) = s.split_once(':').ok_or_else(|| Error::Usage(format!("--rotate expects axis:degrees, got {s:?}")))?;
    let deg: f64 = deg.parse().map_err(|_| Error::Usage(format!("bad rotation angle {deg:?}")))?;
    Ok((Axis::parse(axis).map_err(|e| Error::Usage(e.to_string()))?, deg))
}

fn resample(a: &ResampleArgs) -> Result<()> {
    let out = out_path(&a.out, "resampled.surf")?;
    let mut manifest = RunManifest::start("resample");
    let rotation = a.rotate.as_deref().map(parse_rotation).transpose()?;
    manifest.config = serde_json::json!({ "rotate": a.rotate });
    for p in [&a.src, &a.dst, &a.field] {
        manifest.input(p)?;
    }
    let src = load_tri_mesh(&a.src)?;
    let dst = load_tri_mesh(&a.dst)?;
    let (_, field) = load_field(&a.field)?;
    if field.mesh_id() != src.id() {
        return Err(sit_core::Error::Validation(format!("{} does not live on {}", a.field.display(), a.src.display())).into());
    }
    // Rotating the data by R(θ) samples the source at R(−θ)·v.
    let query = match rotation {
        None => dst.clone(),
        Some((axis, deg)) => {
            let verts = dst
                .vertices()
                .iter()
                .map(|v| {
                    let r = rotate(axis, -deg, [v[0] as f64, v[1] as f64, v[2] as f64]);
                    [r[0] as f32, r[1] as f32, r[2] as f32]
                })
                .collect();
            TriMesh::new(verts, dst.faces().to_vec())?
        }
    };
    let table = build_resample_table(&src, &query)?;
    let moved = apply_resample(&field, &table)?;
    save_field(&Mesh::Tri(dst), &moved, &out)?;
    manifest.output(&out);
    if let Some(t) = &a.table_out {
        save_resample(&table, t)?;
        manifest.output(t);
    }
    manifest.finish(&sidecar(&out))
}

fn synth(a: &SynthArgs) -> Result<()> {
    let out = out_path(&a.out, "synthetic")?;
    let mut manifest = RunManifest::start("synth");
    manifest.seed = Some(a.seed);
    manifest.config = serde_json::json!({ "order": a.order, "count": a.count, "classes": a.classes });
    let ico = build_icosphere(a.order)?;
    let mut data = gen_synthetic(&ico, a.count, &mut RngState::new(a.seed))?;
    if a.classes {
        for e in &mut data.examples {
            e.target = Target::Class((e.target.value() > 0.0) as usize);
        }
    }
    let desc = save_dataset(&out, &Mesh::Tri(ico.mesh().clone()), &data)?;
    println!("examples {} patches {} vertices_per_patch {}", data.len(), data.table.patch_count(), data.table.vertices_per_patch());
    manifest.output(&desc);
    manifest.finish(&out.join("run.json"))
}

/// Take N, V and C from the data; explicit settings must agree with it.
fn fit_to_data(cfg: &mut SiTConfig, rc: &RunConfig, data: &Dataset) -> Result<()> {
    let actual = [
        ("num_patches", data.table.patch_count()),
        ("vertices_per_patch", data.table.vertices_per_patch()),
        ("channels", data.channels()),
    ];
    for (key, value) in actual {
        let given = cfg.to_pairs().into_iter().find(|(k, _)| *k == key).map(|(_, v)| v).expect("known key");
        if rc.model.overrides.contains_key(key) && given != value.to_string() {
            return Err(sit_core::Error::Config(format!("config sets {key} = {given} but the data has {value}")).into());
        }
        cfg.set(key, &value.to_string())?;
    }
    Ok(())
}

/// Copy every tensor of `src` whose name and shape match, except the head
/// (final norm and output layer).
fn warm_start(model: &mut SiTModel<f32>, src: &SiTModel<f32>) -> Result<()> {
    let source: Vec<(String, &sit_core::Tensor<f32>)> = src.params();
    let mut copied = 0;
    for (name, t) in model.params_mut() {
        if name.starts_with("head.") || name.starts_with("final_ln.") {
            continue;
        }
        if let Some((_, s)) = source.iter().find(|(n, s)| *n == name && s.shape() == t.shape()) {
            t.data_mut().copy_from_slice(s.data());
            copied += 1;
        }
    }
    if !source.iter().any(|(n, s)| n == "embed.weight" && s.shape() == model.embed.weight.shape()) {
        return Err(sit_core::Error::Config("initial checkpoint does not match the model's patch embedding".into()).into());
    }
    log::info!("warm start: copied {copied} tensors, head re-initialized");
    Ok(())
}

struct CliObserver {
    dir: PathBuf,
    total: usize,
    written: Vec<PathBuf>,
}

impl Observer<f32> for CliObserver {
    fn iteration(&mut self, it: usize, loss: f64, _: &SiTModel<f32>) -> sit_core::Result<Control> {
        if it % (self.total / 10).max(1) == 0 {
            log::info!("iteration {it}/{} loss {loss:.6e}", self.total);
        }
        Ok(Control::Continue)
    }

    fn checkpoint(&mut self, it: usize, model: &SiTModel<f32>) -> sit_core::Result<()> {
        let p = self.dir.join(format!("checkpoint-{it:06}.ckpt"));
        save_checkpoint(model, &p).map_err(|e| sit_core::Error::State(e.to_string()))?;
        self.written.push(p);
        Ok(())
    }
}

fn rotation_bank(data: &LoadedData, cap: Option<f64>) -> Result<Option<RotationBank>> {
    let Some(cap) = cap else { return Ok(None) };
    let ico = match &data.carrier {
        Mesh::Tri(m) => as_icosphere(m),
        Mesh::Quad(_) => None,
    };
    let ico = ico.ok_or_else(|| sit_core::Error::Config("rotation augmentation needs an icosphere carrier mesh".into()))?;
    Ok(Some(RotationBank::new(&ico, cap)?))
}

fn training(a: &TrainArgs, pretrain: bool) -> Result<()> {
    let command = if pretrain { "pretrain" } else { "train" };
    let dir = out_path(&a.out, command)?;
    let mut manifest = RunManifest::start(command);
    let mut rc = RunConfig::load(&a.config)?;
    manifest.input(&a.config)?;
    if let Some(s) = a.seed {
        rc.train.seed = s;
    }
    if let Some(lr) = a.lr {
        rc.train.lr = lr;
    }
    if let Some(n) = a.iterations {
        rc.train.iterations = n;
    }
    if pretrain {
        rc.train.loss = "mpp".into();
    }
    let data = load_dataset(&a.data)?;
    for p in &data.inputs {
        manifest.input(p)?;
    }
    let mut mcfg = rc.model_config()?;
    fit_to_data(&mut mcfg, &rc, &data.dataset)?;
    if pretrain {
        mcfg.mpp_head = true;
    }
    let tcfg = rc.train_config()?;
    manifest.seed = Some(tcfg.seed);
    manifest.config = rc.to_json();

    let mut model = SiTModel::<f32>::new(mcfg, &mut RngState::new(tcfg.seed).fork(0x1417))?;
    if let Some(init) = &a.init {
        manifest.input(init)?;
        warm_start(&mut model, &load_checkpoint(init)?)?;
    }
    if let Some(dc) = model.deconfounder.as_mut() {
        let values: Vec<f64> = data.dataset.examples.iter().filter_map(|e| e.confound).collect();
        dc.init_stats(&values)?;
    }
    let init_path = dir.join("init.ckpt");
    save_checkpoint(&model, &init_path)?;
    let bank = rotation_bank(&data, tcfg.augmentation)?;
    let exec = Threaded::new(a.workers);
    let mut obs = CliObserver { dir: dir.clone(), total: tcfg.iterations, written: Vec::new() };
    let report = if pretrain {
        pretrain_mpp(&mut model, &data.dataset, &tcfg, bank.as_ref(), &exec, &mut obs)?
    } else {
        train_loop(&mut model, &data.dataset, &tcfg, bank.as_ref(), &exec, &mut obs)?
    };
    let final_path = dir.join("final.ckpt");
    save_checkpoint(&model, &final_path)?;
    let history_path = dir.join("history.csv");
    write(&history_path, history_csv(&report.history))?;
    let metrics_path = dir.join("metrics.csv");
    if let LossKind::Mpp(_) = tcfg.loss {
        let h = &report.history;
        let k = (h.len() / 10).max(1);
        let first = h[..k].iter().sum::<f64>() / k as f64;
        let last = h[h.len() - k..].iter().sum::<f64>() / k as f64;
        let seed = tcfg.seed;
        write(&metrics_path, format!("{HEADER}\nmpp_loss_first_decile,{first},train,{seed}\nmpp_loss_last_decile,{last},train,{seed}\n"))?;
    } else {
        let m = evaluate(&model, &data.dataset, &exec)?;
        write_metrics(&metrics_path, &m, "train", tcfg.seed)?;
    }
    println!("iterations {} final_loss {}", report.history.len(), report.history.last().copied().unwrap_or(f64::NAN));
    for p in [&init_path, &final_path, &history_path, &metrics_path].into_iter().chain(&obs.written) {
        manifest.output(p);
    }
    manifest.finish(&dir.join("run.json"))
}

fn eval(a: &EvalArgs) -> Result<()> {
    let out = out_path(&a.out, "metrics.csv")?;
    let mut manifest = RunManifest::start("eval");
    manifest.seed = Some(a.seed);
    manifest.input(&a.checkpoint)?;
    let model = load_checkpoint(&a.checkpoint)?;
    let data = load_dataset(&a.data)?;
    for p in &data.inputs {
        manifest.input(p)?;
    }
    let m = evaluate(&model, &data.dataset, &Threaded::new(a.workers))?;
    write_metrics(&out, &m, &a.split, a.seed)?;
    for (k, v) in m.records() {
        println!("{k} {v}");
    }
    manifest.output(&out);
    manifest.finish(&sidecar(&out))
}

fn parse_range(s: &str) -> Result<Range<usize>> {
    let bad = || Error::Usage(format!("--layers expects start..end, got {s:?}"));
    let (a, b) = s.split_once("..").ok_or_else(bad)?;
    Ok(a.parse().map_err(|_| bad())?..b.parse().map_err(|_| bad())?)
}

fn attend(a: &AttendArgs) -> Result<()> {
    let dir = out_path(&a.out, "attention")?;
    let mut manifest = RunManifest::start("attend");
    manifest.input(&a.checkpoint)?;
    let model = load_checkpoint(&a.checkpoint)?;
    let data = load_dataset(&a.data)?;
    for p in &data.inputs {
        manifest.input(p)?;
    }
    let Some(example) = data.dataset.examples.get(a.index) else {
        return Err(sit_core::Error::Argument(format!("example {} of {}", a.index, data.dataset.len())).into());
    };
    let heads: Vec<usize> = a.heads.clone().unwrap_or_else(|| (0..model.config.heads).collect());
    let layers = a.layers.as_deref().map(parse_range).transpose()?;
    let confound = match (&model.deconfounder, example.confound) {
        (Some(_), Some(c)) => Confound::Raw(c),
        _ => Confound::None,
    };
    manifest.config = serde_json::json!({ "index": a.index, "heads": heads, "layers": a.layers });
    let seq = data.dataset.sequence(a.index)?;
    let req = ExportRequest { heads: &heads, layers, confound };
    for p in export_maps(&model, &seq, &data.dataset.table, &data.carrier, &req, &dir)? {
        manifest.output(&p);
    }
    manifest.finish(&dir.join("run.json"))
}

fn info(a: &InfoArgs) -> Result<()> {
    let mut cfg = match (&a.config, &a.profile) {
        (Some(p), _) => RunConfig::load(p)?.model_config()?,
        (None, Some(name)) => SiTConfig::profile(name)?,
        (None, None) => return Err(Error::Usage(format!("give --config or --profile ({})", PROFILES.join(", ")))),
    };
    if let Some(c) = a.channels {
        cfg.channels = c;
    }
    cfg.validate()?;
    for (k, v) in cfg.to_pairs() {
        println!("{k} = {v}");
    }
    println!("parameters {}", cfg.parameter_count());
    Ok(())
}
