//! Command-line interface.
//!
//! Every subcommand writes its artifacts, the resolved configuration
//! (`config.json`) and a `run.log` under `--out` (default `$DLA_LAB_OUT`).
//! The only nondeterministic content is the single `timing:` line of
//! `run.log` and the measured latencies of `bench`.

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use dla_lab_core::data::{gen_record, gen_synthetic, DatasetRecord};
use dla_lab_core::detector::{detector_gradcheck, preset, DetectorConfig, DetectorParams};
use dla_lab_core::dla::{count_flops, count_mda_flops, gradcheck_instance, DlaConfig, FlopBreakdown};
use dla_lab_core::encoder::{block_flops, fusion_discrepancy, GelanMode, BRANCH_SHAPES};
use dla_lab_core::evaluation::evaluate;
use dla_lab_core::geometry::LineSegment;
use serde::Serialize;
use serde_json::json;

use crate::bench::bench_latency;
use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::dataset::{load_dataset, save_dataset, GeneratorInfo};
use crate::error::{LabError, LabResult};
use crate::plot::{pr_csv, pr_svg, Curve, EvalReport};
use crate::train::{predict_all, train_toy, TrainOptions};

/// Relative error bound of the gradient checks.
pub const GRADCHECK_TOL: f64 = 1e-4;
/// Absolute bound of the fusion check.
pub const FUSION_TOL: f64 = 1e-10;

#[derive(Debug, Parser)]
#[command(name = "dla-lab", version, about = "Deformable line attention: verification, training, evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct Common {
    /// Seed of every random choice made by the command.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long, env = "DLA_LAB_OUT")]
    pub out: PathBuf,
    /// Worker threads where the computation allows it; results do not depend on it.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    pub jobs: u32,
}

/// Comma-separated list of counts, e.g. `4,1,1`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Counts(pub Vec<usize>);

impl FromStr for Counts {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        s.split(',')
            .map(|t| t.trim().parse::<usize>().map_err(|e| format!("`{t}`: {e}")))
            .collect::<Result<Vec<_>, _>>()
            .map(Counts)
    }
}

/// Comma-separated list of reals.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Reals(pub Vec<f64>);

impl FromStr for Reals {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        s.split(',')
            .map(|t| t.trim().parse::<f64>().map_err(|e| format!("`{t}`: {e}")))
            .collect::<Result<Vec<_>, _>>()
            .map(Reals)
    }
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct ModelArgs {
    /// One of linea-{n,s,m,l}-toy.
    #[arg(long, default_value = "linea-n-toy")]
    pub preset: String,
    /// Number of queries k.
    #[arg(long)]
    pub queries: Option<usize>,
    /// Attention heads M of the line attention.
    #[arg(long)]
    pub heads: Option<usize>,
    /// Sampling points per level, e.g. 4,1,1.
    #[arg(long)]
    pub points: Option<Counts>,
    /// Decoder layers.
    #[arg(long)]
    pub layers: Option<usize>,
}

impl ModelArgs {
    pub fn resolve(&self) -> LabResult<DetectorConfig> {
        let mut cfg = preset(&self.preset)?;
        if let Some(k) = self.queries {
            cfg.num_queries = k;
        }
        if let Some(m) = self.heads {
            cfg.dla_heads = m;
        }
        if let Some(p) = &self.points {
            cfg.points_per_level = p.0.clone();
        }
        if let Some(l) = self.layers {
            cfg.decoder_layers = l;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Finite-difference checks of the attention operator and the full detector.
    Gradcheck(GradcheckArgs),
    /// Train-mode versus deploy-mode encoder fusion equivalence.
    FuseVerify(FuseArgs),
    /// Write a synthetic dataset.
    GenData(GenArgs),
    /// Train a toy detector; writes a checkpoint and metrics.
    TrainToy(TrainArgs),
    /// Structural AP of a checkpoint on a dataset.
    EvalSap(EvalArgs),
    /// Per-stage inference latency.
    Bench(BenchArgs),
    /// Analytic FLOPs of line attention versus deformable point attention.
    Flops(FlopsArgs),
    /// Precision-recall CSV and SVG from an `eval-sap` report.
    Plot(PlotArgs),
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct GradcheckArgs {
    #[command(flatten)]
    pub common: Common,
    /// Random operator configurations.
    #[arg(long, default_value_t = 24)]
    pub configs: u64,
    /// Coordinates checked per detector parameter group (0 skips the detector suite).
    #[arg(long, default_value_t = 6)]
    pub detector_coords: usize,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct FuseArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value_t = 100)]
    pub draws: u64,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct GenArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value_t = 512)]
    pub n: usize,
    /// Image height and width.
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    #[arg(long, default_value_t = 3)]
    pub max_lines: usize,
    /// Record index of the first image; indices key the per-record streams.
    #[arg(long, default_value_t = 0)]
    pub first_index: usize,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Training dataset directory; defaults to 512 synthetic 32x32 images.
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Validation dataset directory; defaults to the 64 synthetic images after the training set.
    #[arg(long)]
    pub val: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Base learning rate (backbone included).
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub no_augment: bool,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Distance thresholds in the 128x128 frame.
    #[arg(long, default_value = "5,10,15")]
    pub thresholds: Reals,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct BenchArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Trained weights; random initialization otherwise.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    #[arg(long, default_value_t = 3)]
    pub warmup: usize,
    #[arg(long, default_value_t = 20)]
    pub reps: usize,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct FlopsArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value = "4,1,1")]
    pub points: Counts,
    #[arg(long, default_value_t = 1100)]
    pub queries: usize,
    #[arg(long, default_value_t = 8)]
    pub heads: usize,
    #[arg(long, default_value_t = 256)]
    pub dim: usize,
    /// Decoder layers the per-layer cost is multiplied by.
    #[arg(long, default_value_t = 6)]
    pub layers: usize,
    /// Side of the map used for the fusion block cost.
    #[arg(long, default_value_t = 20)]
    pub map_size: usize,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct PlotArgs {
    #[command(flatten)]
    pub common: Common,
    /// Report written by `eval-sap`; defaults to `<out>/eval.json`.
    #[arg(long)]
    pub eval: Option<PathBuf>,
}

/// Artifact sink of one run.
struct Run {
    out: PathBuf,
    log: String,
    started: Instant,
    started_unix_ms: u128,
}

impl Run {
    fn start(command: &str, common: &Common, resolved: &serde_json::Value) -> LabResult<Self> {
        fs::create_dir_all(&common.out).map_err(|e| LabError::io(&common.out, e))?;
        let text = serde_json::to_string_pretty(resolved).expect("config serializes");
        println!("{text}");
        let run = Self {
            out: common.out.clone(),
            log: format!("command: {command}\n"),
            started: Instant::now(),
            started_unix_ms: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis()),
        };
        run.write("config.json", format!("{text}\n").as_bytes())?;
        Ok(run)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn write(&self, name: &str, bytes: &[u8]) -> LabResult<()> {
        let p = self.path(name);
        fs::write(&p, bytes).map_err(|e| LabError::io(&p, e))
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> LabResult<()> {
        let text = serde_json::to_string_pretty(value).expect("report serializes");
        self.write(name, format!("{text}\n").as_bytes())
    }

    /// Prints a result line and appends it to the log.
    fn say(&mut self, line: impl AsRef<str>) {
        println!("{}", line.as_ref());
        self.log.push_str(line.as_ref());
        self.log.push('\n');
    }

    fn finish(mut self) -> LabResult<()> {
        let line = format!(
            "timing: started_unix_ms={} elapsed_s={:.3}",
            self.started_unix_ms,
            self.started.elapsed().as_secs_f64()
        );
        self.log.push_str(&line);
        self.log.push('\n');
        self.write("run.log", self.log.as_bytes())
    }
}

fn resolved<T: Serialize>(args: &T, extra: serde_json::Value) -> serde_json::Value {
    let mut v = serde_json::to_value(args).expect("args serialize");
    if let (Some(m), serde_json::Value::Object(e)) = (v.as_object_mut(), extra) {
        m.extend(e);
    }
    v
}

fn gradcheck(a: &GradcheckArgs) -> LabResult<()> {
    let mut run = Run::start("gradcheck", &a.common, &resolved(a, json!({ "tolerance": GRADCHECK_TOL })))?;
    let mut worst: Vec<(String, f64)> = Vec::new();
    let mut note = |name: &str, err: f64| match worst.iter_mut().find(|(n, _)| n == name) {
        Some((_, w)) => *w = w.max(err),
        None => worst.push((name.to_string(), err)),
    };
    let mut instances = Vec::new();
    for i in 0..a.configs {
        let seed = a.common.seed.wrapping_mul(1 << 20).wrapping_add(i);
        let rep = gradcheck_instance(seed)?;
        for (g, e) in &rep.groups {
            note(&format!("dla.{g}"), *e);
        }
        instances.push(json!({
            "seed": seed,
            "heads": rep.config.heads,
            "points_per_level": rep.config.points_per_level,
            "dim": rep.config.dim,
            "groups": rep.groups.iter().map(|(g, e)| json!({ "group": g, "max_rel_error": e })).collect::<Vec<_>>(),
        }));
    }
    if a.detector_coords > 0 {
        for (g, e) in detector_gradcheck(a.common.seed, a.detector_coords)? {
            note(&format!("detector.{g}"), e);
        }
    }
    let failed: Vec<&str> = worst.iter().filter(|(_, e)| !(*e < GRADCHECK_TOL)).map(|(n, _)| n.as_str()).collect();
    let failed_msg = failed.join(", ");
    run.say(format!("{:<32} {:>12}", "group", "max_rel_err"));
    for (n, e) in &worst {
        run.say(format!("{n:<32} {e:>12.3e}"));
    }
    run.write_json(
        "gradcheck.json",
        &json!({
            "tolerance": GRADCHECK_TOL,
            "groups": worst.iter().map(|(g, e)| json!({ "group": g, "max_rel_error": e })).collect::<Vec<_>>(),
            "instances": instances,
        }),
    )?;
    let pass = failed_msg.is_empty();
    run.say(format!("gradcheck: {}", if pass { "pass" } else { "FAIL" }));
    run.finish()?;
    if pass {
        Ok(())
    } else {
        Err(LabError::CheckFailed(format!("gradient mismatch in {failed_msg}")))
    }
}

fn fuse_verify(a: &FuseArgs) -> LabResult<()> {
    let mut run = Run::start("fuse-verify", &a.common, &resolved(a, json!({ "tolerance": FUSION_TOL })))?;
    let diffs: Vec<f64> = (0..a.draws)
        .map(|i| fusion_discrepancy(a.common.seed, i))
        .collect::<Result<_, _>>()?;
    let worst = diffs.iter().copied().fold(0.0, f64::max);
    let pass = diffs.iter().all(|d| *d <= FUSION_TOL);
    run.write_json("fuse.json", &json!({ "tolerance": FUSION_TOL, "max_abs_diff": worst, "draws": diffs }))?;
    run.say(format!("draws: {}  max |train - deploy|: {worst:.3e}", a.draws));
    run.say(format!("fuse-verify: {}", if pass { "pass" } else { "FAIL" }));
    run.finish()?;
    if pass {
        Ok(())
    } else {
        Err(LabError::CheckFailed(format!("fused output differs by {worst:.3e}")))
    }
}

fn gen_data(a: &GenArgs) -> LabResult<()> {
    let mut run = Run::start("gen-data", &a.common, &resolved(a, json!({ "rng": "chacha20" })))?;
    let records: Vec<DatasetRecord> = (a.first_index..a.first_index + a.n)
        .map(|i| gen_record(i, (a.size, a.size), a.max_lines, a.common.seed))
        .collect::<Result<_, _>>()?;
    let info = GeneratorInfo {
        rng: "chacha20".into(),
        seed: a.common.seed,
        height: a.size,
        width: a.size,
        max_lines: a.max_lines,
        first_index: a.first_index,
    };
    save_dataset(&a.common.out, &records, Some(info))?;
    let lines: usize = records.iter().map(|r| r.lines.len()).sum();
    run.say(format!("records: {}  lines: {lines}", records.len()));
    run.finish()
}

/// Default toy split: records `0..512` for training, `512..576` for validation.
pub fn default_split(seed: u64) -> LabResult<(Vec<DatasetRecord>, Vec<DatasetRecord>)> {
    let train = gen_synthetic(512, (32, 32), 3, seed)?;
    let val = (512..576).map(|i| gen_record(i, (32, 32), 3, seed)).collect::<Result<_, _>>()?;
    Ok((train, val))
}

fn train(a: &TrainArgs) -> LabResult<()> {
    let mut cfg = a.model.resolve()?;
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(lr) = a.lr {
        cfg.optimizer.lr = lr;
        cfg.optimizer.backbone_lr = lr;
    }
    cfg.validate()?;
    let opts = TrainOptions {
        seed: a.common.seed,
        augment: !a.no_augment,
        jobs: a.common.jobs as usize,
        ..TrainOptions::default()
    };
    let mut run = Run::start("train-toy", &a.common, &resolved(a, json!({ "config": cfg, "options": opts })))?;
    let (default_train, default_val) = match (&a.train, &a.val) {
        (Some(_), Some(_)) => (Vec::new(), Vec::new()),
        _ => default_split(a.common.seed)?,
    };
    let train = match &a.train {
        Some(p) => load_dataset(p)?,
        None => default_train,
    };
    let val = match &a.val {
        Some(p) => load_dataset(p)?,
        None => default_val,
    };
    let mut csv = String::from("epoch,lr_scale,train_loss,val_sap10\n");
    let result = train_toy(&train, &val, &cfg, &opts, |e| {
        writeln!(csv, "{},{},{},{}", e.epoch, e.lr_scale, e.train_loss, e.val_sap10).unwrap();
        println!("epoch {:>3}  loss {:>9.4}  val sAP10 {:>6.2}", e.epoch, e.train_loss, e.val_sap10);
    });
    run.write("metrics.csv", csv.as_bytes())?;
    let (params, report) = match result {
        Ok(r) => r,
        Err(f) => {
            if f.batch.is_empty() {
                run.say(format!("failed in epoch {} outside a training batch: {}", f.epoch, f.error));
            } else {
                save_dataset(&run.path("failed-batch"), &f.batch, None)?;
                run.say(format!("failed in epoch {}: {}; batch written to failed-batch/", f.epoch, f.error));
            }
            run.finish()?;
            return Err(f.error);
        }
    };
    save_checkpoint(&run.path("checkpoint.dlackpt"), &cfg, &params)?;
    run.write_json("summary.json", &report)?;
    run.say(format!(
        "loss {:.4} -> {:.4} ({:.1}%)",
        report.initial_loss,
        report.final_loss,
        100.0 * report.final_loss / report.initial_loss
    ));
    run.say(format!("val sAP10 {:.2} -> {:.2}", report.initial_val_sap10, report.final_val_sap10));
    run.finish()
}

fn eval_sap(a: &EvalArgs) -> LabResult<()> {
    let mut run = Run::start("eval-sap", &a.common, &resolved(a, json!({})))?;
    let (cfg, params) = load_checkpoint(&a.checkpoint)?;
    let data = load_dataset(&a.data)?;
    let preds = predict_all(&cfg, &params, &data, a.common.jobs as usize)?;
    let truths: Vec<Vec<LineSegment>> = data.iter().map(|r| r.lines.clone()).collect();
    let res = evaluate(&preds, &truths, &a.thresholds.0)?;
    let report = EvalReport {
        checkpoint: a.checkpoint.display().to_string(),
        dataset: a.data.display().to_string(),
        images: data.len(),
        truths: truths.iter().map(Vec::len).sum(),
        curves: res
            .sap
            .iter()
            .zip(res.pr_points)
            .map(|(&(theta, sap), (_, points))| Curve { theta, sap, points })
            .collect(),
    };
    for c in &report.curves {
        run.say(format!("sAP{} = {:.2}", c.theta, c.sap));
    }
    run.write_json("eval.json", &report)?;
    run.finish()
}

fn plot(a: &PlotArgs) -> LabResult<()> {
    let mut run = Run::start("plot", &a.common, &resolved(a, json!({})))?;
    let src = a.eval.clone().unwrap_or_else(|| a.common.out.join("eval.json"));
    let bytes = fs::read(&src).map_err(|e| LabError::io(&src, e))?;
    let report: EvalReport = serde_json::from_slice(&bytes).map_err(|e| LabError::Malformed {
        what: src.display().to_string(),
        detail: e.to_string(),
    })?;
    for c in &report.curves {
        let stem = format!("pr_sap{}", c.theta);
        run.write(&format!("{stem}.csv"), pr_csv(&c.points).as_bytes())?;
        run.write(&format!("{stem}.svg"), pr_svg(c).as_bytes())?;
        run.say(format!("{stem}.csv {stem}.svg"));
    }
    run.finish()
}

fn bench(a: &BenchArgs) -> LabResult<()> {
    let (cfg, params) = match &a.checkpoint {
        Some(p) => load_checkpoint(p)?,
        None => {
            let cfg = a.model.resolve()?;
            let params = DetectorParams::init(&cfg, a.common.seed)?;
            (cfg, params)
        }
    };
    let mut run = Run::start("bench", &a.common, &resolved(a, json!({ "config": cfg })))?;
    let rep = bench_latency(&cfg, &params, (a.size, a.size), a.warmup, a.reps, a.common.seed)?;
    run.say(format!("{:<9} {:>9} {:>9} {:>9}", "stage", "mean_ms", "p50_ms", "p95_ms"));
    for (name, s) in [("backbone", rep.backbone), ("encoder", rep.encoder), ("decoder", rep.decoder), ("total", rep.total)] {
        println!("{name:<9} {:>9.3} {:>9.3} {:>9.3}", s.mean_ms, s.p50_ms, s.p95_ms);
    }
    run.write_json("bench.json", &rep)?;
    run.finish()
}

fn flops_row(model: &str, f: &FlopBreakdown, layers: usize) -> String {
    format!(
        "{model},{},{},{},{},{},{},{},{}",
        f.location_head,
        f.weight_head,
        f.sampling,
        f.bilinear,
        f.out_proj,
        f.per_query,
        f.total,
        f.total * layers as u64
    )
}

fn flops(a: &FlopsArgs) -> LabResult<()> {
    let mut run = Run::start("flops", &a.common, &resolved(a, json!({})))?;
    let c = DlaConfig::new(a.heads, a.points.0.clone(), a.dim)?;
    let dla = count_flops(&c, a.queries);
    let mda = count_mda_flops(&c, a.queries);
    let mut csv = String::from("model,location_head,weight_head,sampling,bilinear,out_proj,per_query,layer_total,decoder_total\n");
    csv.push_str(&flops_row("dla", &dla, a.layers));
    csv.push('\n');
    csv.push_str(&flops_row("mda", &mda, a.layers));
    csv.push('\n');
    run.write("flops.csv", csv.as_bytes())?;
    let s = a.map_size;
    let gelan = [
        ("train", BRANCH_SHAPES.len(), block_flops(a.dim, s, s, &BRANCH_SHAPES, GelanMode::Train)),
        ("deploy", BRANCH_SHAPES.len(), block_flops(a.dim, s, s, &BRANCH_SHAPES, GelanMode::Deploy)),
        ("train", 1, block_flops(a.dim, s, s, &BRANCH_SHAPES[..1], GelanMode::Train)),
        ("deploy", 1, block_flops(a.dim, s, s, &BRANCH_SHAPES[..1], GelanMode::Deploy)),
    ];
    let mut gcsv = String::from("mode,branches,channels,height,width,flops\n");
    for (mode, b, f) in gelan {
        writeln!(gcsv, "{mode},{b},{},{s},{s},{f}", a.dim).unwrap();
    }
    run.write("gelan_flops.csv", gcsv.as_bytes())?;
    let points = a.points.0.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
    run.say(format!("points ({points}), M {}, d {}, k {}", a.heads, a.dim, a.queries));
    run.say(format!("dla flops per layer: {}  ({:.4} G over {} layers)", dla.total, (dla.total * a.layers as u64) as f64 / 1e9, a.layers));
    run.say(format!("mda flops per layer: {}  ({:.4} G over {} layers)", mda.total, (mda.total * a.layers as u64) as f64 / 1e9, a.layers));
    run.say(format!("fusion block {s}x{s}: train {} / deploy {}", gelan[0].2, gelan[1].2));
    run.finish()
}

pub fn execute(cmd: &Command) -> LabResult<()> {
    match cmd {
        Command::Gradcheck(a) => gradcheck(a),
        Command::FuseVerify(a) => fuse_verify(a),
        Command::GenData(a) => gen_data(a),
        Command::TrainToy(a) => train(a),
        Command::EvalSap(a) => eval_sap(a),
        Command::Bench(a) => bench(a),
        Command::Flops(a) => flops(a),
        Command::Plot(a) => plot(a),
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Failures print `error[class]: message` on stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let rendered = e.to_string();
            let first = rendered.lines().next().unwrap_or("invalid arguments");
            eprintln!("error[usage]: {}", first.trim_start_matches("error: "));
            eprint!("{}", e.render());
            return 2;
        }
    };
    match execute(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error[{}]: {}", e.class(), e);
            e.exit_code()
        }
    }
}
