//! `cmstew` command-line front end.
//!
//! Every command reads one JSON run configuration (optional; defaults
//! otherwise), applies `--set key.path=value` overrides and writes all of
//! its artifacts below the configured output directory.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::{
    generate_synthetic, load_dataset, save_dataset, standardize, Dataset, Split, Standardizer,
    SyntheticSpec,
};
use crate::experiment::{
    run_protocol, ArchConfig, SeedResult, TransferExperiment, TransferSummary,
};
use crate::models::{
    rank_modalities, read_checkpoint, write_checkpoint, Checkpoint, CheckpointKind, MetricKind,
    ModalityRecord,
};
use crate::training::{
    evaluate, train_source, train_weak, Ablation, JsonlSink, MetricsLine, MetricsSink, TrainConfig,
};
use crate::verify::{run_verify, Level, Oracles};
use crate::{Error, Result};

pub const METRICS_FILE: &str = "metrics.jsonl";

fn default_run_id() -> String {
    "run".into()
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn default_seeds() -> Vec<u64> {
    (0..5).collect()
}

/// Contents of `--config`. Relative paths are resolved against the file's
/// directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_run_id")]
    pub run_id: String,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    /// Dataset manifest; without one the synthetic generator is used.
    #[serde(default)]
    pub manifest: Option<PathBuf>,
    #[serde(default)]
    pub strong: Option<String>,
    #[serde(default)]
    pub weak: Option<String>,
    /// Modalities ranked by `rank`; empty means all of them.
    #[serde(default)]
    pub modalities: Vec<String>,
    #[serde(default)]
    pub source_checkpoint: Option<PathBuf>,
    /// Z-score features with train-split statistics.
    #[serde(default = "yes")]
    pub standardize: bool,
    #[serde(default)]
    pub arch: ArchConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub synthetic: SyntheticSpec,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub oracles: Oracles,
}

fn yes() -> bool {
    true
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

/// Sets `a.b.c` inside a JSON object. The value is parsed as JSON when
/// possible and kept as a string otherwise.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {assignment:?} is not KEY=VALUE")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            return Err(Error::Config(format!(
                "override key {key:?} has an empty segment"
            )));
        }
        let obj = match node {
            Value::Object(m) => m,
            Value::Null => {
                *node = Value::Object(Default::default());
                node.as_object_mut().expect("just set")
            }
            _ => {
                return Err(Error::Config(format!(
                    "override key {key:?}: {part} is not inside an object"
                )))
            }
        };
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj.entry(part.to_string()).or_insert(Value::Null);
    }
    unreachable!("split yields at least one part")
}

/// Loads `path` (or defaults), applies overrides and resolves paths.
pub fn load_run_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    let (mut value, base) = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            let v: Value = serde_json::from_str(&text)?;
            (v, p.parent().map(Path::to_path_buf).unwrap_or_default())
        }
        None => (Value::Object(Default::default()), PathBuf::new()),
    };
    for o in overrides {
        apply_override(&mut value, o)?;
    }
    let mut cfg: RunConfig =
        serde_json::from_value(value).map_err(|e| Error::Config(format!("run config: {e}")))?;
    let resolve = |p: &mut PathBuf| {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    };
    resolve(&mut cfg.out_dir);
    if let Some(m) = cfg.manifest.as_mut() {
        resolve(m);
    }
    if let Some(s) = cfg.source_checkpoint.as_mut() {
        resolve(s);
    }
    Ok(cfg)
}

#[derive(Debug, Parser)]
#[command(
    name = "cmstew",
    version,
    about = "Train, evaluate and verify strong-to-weak modality transfer models"
)]
pub struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for data generation, initialisation, shuffling and dropout.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (overrides the configuration).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Configuration override, e.g. `--set train.lr=0.001`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a uni-modal model per modality and order them by dev score.
    Rank {
        /// Comma-separated modality names (default: configuration, then all).
        #[arg(long, value_delimiter = ',')]
        modalities: Vec<String>,
    },
    /// Train the source model or a weak model against a frozen source.
    Train {
        #[arg(long)]
        stage: Stage,
        /// Frozen source checkpoint (weak stage).
        #[arg(long)]
        source: Option<PathBuf>,
        /// none, no-lfa or no-decoder.
        #[arg(long)]
        ablation: Option<String>,
        /// Modality to train on (default: strong for source, weak for weak).
        #[arg(long)]
        modality: Option<String>,
    },
    /// Evaluate a checkpoint on one split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "dev")]
        split: String,
        #[arg(long)]
        modality: Option<String>,
    },
    /// Write the synthetic two-modality dataset as a manifest and CSV files.
    Synth,
    /// Run the invariant suites.
    Verify {
        #[arg(long, default_value = "fast")]
        level: String,
    },
    /// Run the five-model transfer protocol for every configured seed.
    Sweep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Stage {
    Source,
    Weak,
}

/// Outcome of a command that ran to completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    /// Verification ran but at least one check failed.
    ChecksFailed,
}

struct Context {
    cfg: RunConfig,
}

impl Context {
    fn out(&self, name: &str) -> PathBuf {
        self.cfg.out_dir.join(name)
    }

    fn sink(&self) -> Result<JsonlSink> {
        JsonlSink::open(&self.out(METRICS_FILE))
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf> {
        let path = self.out(name);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    /// Manifest dataset, or the synthetic one; standardised when configured.
    fn dataset(&self) -> Result<(Dataset, Option<Standardizer>)> {
        let ds = match &self.cfg.manifest {
            Some(m) => load_dataset(m)?,
            None => generate_synthetic(&self.cfg.synthetic)?,
        };
        if self.cfg.standardize {
            let (ds, st) = standardize(ds)?;
            Ok((ds, Some(st)))
        } else {
            Ok((ds, None))
        }
    }

    fn strong(&self) -> Result<String> {
        match (&self.cfg.strong, &self.cfg.manifest) {
            (Some(s), _) => Ok(s.clone()),
            (None, None) => Ok(self.cfg.synthetic.strong_name.clone()),
            (None, Some(_)) => Err(Error::Config(
                "no strong modality configured (set `strong`)".into(),
            )),
        }
    }

    fn weak(&self) -> Result<String> {
        match (&self.cfg.weak, &self.cfg.manifest) {
            (Some(s), _) => Ok(s.clone()),
            (None, None) => Ok(self.cfg.synthetic.weak_name.clone()),
            (None, Some(_)) => Err(Error::Config(
                "no weak modality configured (set `weak`)".into(),
            )),
        }
    }
}

fn summary_line(
    run_id: &str,
    stage: &str,
    epoch: usize,
    split: &str,
    r: &crate::training::SplitReport,
) -> MetricsLine {
    MetricsLine {
        run_id: run_id.to_string(),
        stage: stage.to_string(),
        epoch,
        split: split.to_string(),
        loss_p: Some(r.loss_p),
        loss_a: r.loss_a,
        loss_t: r.loss_t,
        loss_total: Some(r.loss_total),
        acc: r.acc,
        f1: r.f1,
        ccc: r.ccc,
        seconds: 0.0,
    }
}

fn stats_path(checkpoint: &Path) -> PathBuf {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(".stats.json");
    PathBuf::from(s)
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string(value)?);
    Ok(())
}

/// Runs one parsed command line.
pub fn run(cli: Cli) -> Result<Outcome> {
    let mut overrides = Vec::new();
    if let Some(seed) = cli.seed {
        overrides.push(format!("train.seed={seed}"));
        overrides.push(format!("synthetic.seed={seed}"));
    }
    overrides.extend(cli.overrides.iter().cloned());
    let mut cfg = load_run_config(cli.config.as_deref(), &overrides)?;
    if let Some(out) = cli.out {
        cfg.out_dir = out;
    }
    cfg.train.validate()?;
    let ctx = Context { cfg };
    match cli.command {
        Command::Rank { modalities } => cmd_rank(&ctx, modalities),
        Command::Train {
            stage,
            source,
            ablation,
            modality,
        } => cmd_train(&ctx, stage, source, ablation, modality),
        Command::Eval {
            checkpoint,
            split,
            modality,
        } => cmd_eval(&ctx, &checkpoint, &split, modality),
        Command::Synth => cmd_synth(&ctx),
        Command::Verify { level } => cmd_verify(&ctx, Level::parse(&level)?),
        Command::Sweep => cmd_sweep(&ctx),
    }
}

fn cmd_rank(ctx: &Context, requested: Vec<String>) -> Result<Outcome> {
    let (ds, _) = ctx.dataset()?;
    let names: Vec<String> = if !requested.is_empty() {
        requested
    } else if !ctx.cfg.modalities.is_empty() {
        ctx.cfg.modalities.clone()
    } else {
        ds.modalities.keys().cloned().collect()
    };
    if names.len() < 2 {
        return Err(Error::Config(format!(
            "ranking needs at least 2 modalities, got {}",
            names.len()
        )));
    }
    let base = TrainConfig {
        alpha: 0.0,
        beta: 0.0,
        ablation: Ablation::None,
        ..ctx.cfg.train.clone()
    };
    let mut sink = ctx.sink()?;
    let mut records = Vec::new();
    for name in &names {
        let d = ds.dim(name)?;
        let model = ctx.cfg.arch.model(ds.task, d, None, base.dropout_rate);
        let out = train_source(
            &ds,
            name,
            &model,
            &base,
            &format!("{}/rank/{name}", ctx.cfg.run_id),
            &mut sink,
        )?;
        records.push(ModalityRecord {
            name: name.clone(),
            feature_dim: d,
            score: out.best_metric,
            metric_kind: MetricKind::HigherBetter,
        });
    }
    let ranked = rank_modalities(&records)?;
    println!(
        "{:>4}  {:<16} {:>6} {:>10}",
        "rank", "modality", "dim", "dev score"
    );
    for (i, r) in ranked.iter().enumerate() {
        println!(
            "{:>4}  {:<16} {:>6} {:>10.4}",
            i + 1,
            r.name,
            r.feature_dim,
            r.score
        );
    }
    ctx.write_json("ranking.json", &ranked)?;
    Ok(Outcome::Success)
}

fn cmd_train(
    ctx: &Context,
    stage: Stage,
    source: Option<PathBuf>,
    ablation: Option<String>,
    modality: Option<String>,
) -> Result<Outcome> {
    let mut train = ctx.cfg.train.clone();
    if let Some(a) = ablation {
        train.ablation = Ablation::parse(&a)?;
    }
    let source_path = source.or_else(|| ctx.cfg.source_checkpoint.clone());
    let source_model = match stage {
        Stage::Source => None,
        Stage::Weak => {
            let path = source_path.ok_or_else(|| {
                Error::Config(
                    "the weak stage needs a frozen source checkpoint (--source PATH)".into(),
                )
            })?;
            if !path.exists() {
                return Err(Error::Config(format!(
                    "source checkpoint {} does not exist",
                    path.display()
                )));
            }
            Some(read_checkpoint(&path)?.into_source()?)
        }
    };
    let (ds, stats) = ctx.dataset()?;
    let run_id = ctx.cfg.run_id.clone();
    let mut sink = ctx.sink()?;
    let (stage_name, checkpoint, best_epoch, best) = match source_model {
        None => {
            let m = modality.map_or_else(|| ctx.strong(), Ok)?;
            train.alpha = 0.0;
            train.beta = 0.0;
            train.ablation = Ablation::None;
            let model = ctx
                .cfg
                .arch
                .model(ds.task, ds.dim(&m)?, None, train.dropout_rate);
            let out = train_source(&ds, &m, &model, &train, &run_id, &mut sink)?;
            let best = out.history[out.best_epoch - 1].dev.clone();
            (
                "source",
                Checkpoint::Source(out.model),
                out.best_epoch,
                best,
            )
        }
        Some(src) => {
            let weak = modality.map_or_else(|| ctx.weak(), Ok)?;
            let strong = ctx.strong()?;
            let w = train.weights();
            train.alpha = w.alpha;
            train.beta = w.beta;
            let model = ctx.cfg.arch.model(
                ds.task,
                ds.dim(&weak)?,
                Some(ds.dim(&strong)?),
                train.dropout_rate,
            );
            let out = train_weak(
                &ds, &weak, &strong, &src, &model, &train, &run_id, &mut sink,
            )?;
            let best = out.history[out.best_epoch - 1].dev.clone();
            ("weak", Checkpoint::Weak(out.model), out.best_epoch, best)
        }
    };
    let ckpt_path = ctx.out(&format!("{run_id}.{stage_name}.ckpt"));
    write_checkpoint(&ckpt_path, &checkpoint)?;
    if let Some(st) = stats {
        ctx.write_json(&format!("{run_id}.{stage_name}.ckpt.stats.json"), &st)?;
    }
    let mut recorded = ctx.cfg.clone();
    recorded.train = train;
    ctx.write_json(&format!("{run_id}.{stage_name}.config.json"), &recorded)?;
    let line = summary_line(&run_id, stage_name, best_epoch, "best", &best);
    sink.record(&line)?;
    print_json(&line)?;
    Ok(Outcome::Success)
}

fn cmd_eval(
    ctx: &Context,
    checkpoint: &Path,
    split: &str,
    modality: Option<String>,
) -> Result<Outcome> {
    let split = Split::parse(split)?;
    let ckpt = read_checkpoint(checkpoint)?;
    let manifest = ctx
        .cfg
        .manifest
        .as_ref()
        .ok_or_else(|| Error::Config("eval needs a dataset manifest (`manifest`)".into()))?;
    let mut ds = load_dataset(manifest)?;
    let stats = stats_path(checkpoint);
    if stats.exists() {
        let text = std::fs::read_to_string(&stats).map_err(|e| Error::io(&stats, e))?;
        let st: Standardizer = serde_json::from_str(&text)?;
        st.apply(&mut ds);
    }
    let kind = ckpt.kind();
    let modality = match (modality, kind) {
        (Some(m), _) => m,
        (None, CheckpointKind::Source) => ctx.strong()?,
        (None, CheckpointKind::Weak) => ctx.weak()?,
    };
    if ds.split(split).is_empty() {
        let available: Vec<&str> = Split::ALL
            .iter()
            .filter(|s| !ds.split(**s).is_empty())
            .map(|s| s.as_str())
            .collect();
        return Err(Error::Config(format!(
            "split {split} is empty; available: {}",
            available.join(", ")
        )));
    }
    let report = evaluate(ckpt.network(), &ds, split, &modality)?;
    let line = summary_line(&ctx.cfg.run_id, "eval", 0, split.as_str(), &report);
    ctx.sink()?.record(&line)?;
    print_json(&line)?;
    Ok(Outcome::Success)
}

fn cmd_synth(ctx: &Context) -> Result<Outcome> {
    let ds = generate_synthetic(&ctx.cfg.synthetic)?;
    let path = save_dataset(&ds, &ctx.out("synthetic"))?;
    ctx.write_json("synthetic/spec.json", &ctx.cfg.synthetic)?;
    println!("{}", path.display());
    Ok(Outcome::Success)
}

fn experiment(ctx: &Context) -> TransferExperiment {
    TransferExperiment {
        seeds: ctx.cfg.seeds.clone(),
        spec: ctx.cfg.synthetic.clone(),
        arch: ctx.cfg.arch.clone(),
        train: ctx.cfg.train.clone(),
    }
}

fn cmd_verify(ctx: &Context, level: Level) -> Result<Outcome> {
    let mut sink = ctx.sink()?;
    let report = run_verify(level, &ctx.cfg.oracles, &experiment(ctx), &mut sink);
    print!("{}", report.render());
    ctx.write_json("verify.json", &report)?;
    if report.passed() {
        Ok(Outcome::Success)
    } else {
        eprintln!("failed checks: {}", report.failures().join(", "));
        Ok(Outcome::ChecksFailed)
    }
}

fn cmd_sweep(ctx: &Context) -> Result<Outcome> {
    let mut sink = ctx.sink()?;
    let summary = match &ctx.cfg.manifest {
        None => experiment(ctx).run(&mut sink)?,
        Some(_) => {
            let (ds, _) = ctx.dataset()?;
            let (strong, weak) = (ctx.strong()?, ctx.weak()?);
            let start = std::time::Instant::now();
            let mut per_seed: Vec<SeedResult> = Vec::new();
            for &seed in &ctx.cfg.seeds {
                let cfg = TrainConfig {
                    seed,
                    ..ctx.cfg.train.clone()
                };
                let prefix = format!("{}/seed{seed}/", ctx.cfg.run_id);
                per_seed.push(
                    run_protocol(&ds, &strong, &weak, &ctx.cfg.arch, &cfg, &prefix, &mut sink)?.0,
                );
            }
            TransferSummary {
                per_seed,
                seconds: start.elapsed().as_secs_f64(),
            }
        }
    };
    print!("{}", summary.table());
    ctx.write_json("sweep.json", &summary)?;
    Ok(Outcome::Success)
}
