mod manifest;

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use cropkge::baselines::{
    distill_bkd, ext_model, importance_by_loss, importance_by_value, train_dt, write_importance,
    ImportanceMethod,
};
use cropkge::checkpoint::{load_checkpoint, save_checkpoint};
use cropkge::config::{apply, parse_config};
use cropkge::data::{load_dataset, split_paths, write_dataset};
use cropkge::eval::{correctness_matrix, link_prediction, rank_sub_models, arr_from_matrix, write_matrix};
use cropkge::report::{emit_report, ReportFormat};
use cropkge::synth::{generate, SynthConfig};
use cropkge::train::{search_lr, train_med, LrSearch};
use cropkge::{CroppableModel, Dataset, DimensionSchedule, Split, TrainConfig, TrainOutcome, TripleOrder};

use manifest::{dataset_checksum, RunManifest};

const DATA_ENV: &str = "CROPKGE_DATA_DIR";

#[derive(Parser)]
#[command(name = "cropkge", version, about = "Croppable knowledge-graph embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a croppable model, a single-width model or a distilled student.
    Train(TrainArgs),
    /// Cut a checkpoint down to one of its scheduled widths.
    Crop(CropArgs),
    /// Filtered link prediction for one, several or all widths.
    Eval(EvalArgs),
    /// Per-column importance scores, optionally applied as a reordering.
    Importance(ImportanceArgs),
    /// Write embedding tables as TSV.
    Dump(DumpArgs),
    /// Print dataset sizes as JSON.
    Stats(DataArgs),
    /// Generate the bundled synthetic dataset.
    Synth(SynthArgs),
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Dataset directory with train/valid/test files. Relative paths that do
    /// not exist are also looked up under $CROPKGE_DATA_DIR.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Order::Hrt)]
    order: Order,
}

#[derive(Clone, Copy, ValueEnum)]
enum Order {
    Hrt,
    Htr,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Method {
    Med,
    Dt,
    Bkd,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, default_value_t = Method::Med)]
    method: Method,
    /// Full-width teacher checkpoint for `--method bkd`.
    #[arg(long)]
    teacher: Option<PathBuf>,
    /// `key = value` file applied before the flags below.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    score_fn: Option<String>,
    #[arg(long)]
    norm: Option<String>,
    /// `start:stop:step` or a comma list.
    #[arg(long)]
    dims: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    /// Pick the learning rate from the configured search list by validation MRR.
    #[arg(long)]
    lr_search: bool,
    /// Comma list of noMLM, noEIM, noDLW.
    #[arg(long)]
    ablate: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    neg: Option<usize>,
    #[arg(long)]
    margin: Option<f64>,
    /// Worker threads; 1 keeps training bit-reproducible.
    #[arg(long, default_value_t = 1)]
    threads: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CropArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dim: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// `all` or a comma list of scheduled widths.
    #[arg(long, default_value = "all")]
    dim: String,
    /// Re-slice the checkpoint under this schedule first (prefix extraction).
    #[arg(long)]
    dims: Option<String>,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long)]
    arr: bool,
    #[arg(long)]
    arr_include_vacuous: bool,
    #[arg(long, default_value = "csv")]
    format: String,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    threads: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ImportanceArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value = "value")]
    mode: String,
    #[arg(long, default_value_t = 64)]
    neg: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Also write the checkpoint with columns sorted by importance.
    #[arg(long)]
    apply: bool,
    #[arg(long, default_value_t = 0)]
    threads: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DumpArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Table name, or `all`.
    #[arg(long, default_value = "all")]
    table: String,
    /// Width to write; defaults to the full width.
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = SynthConfig::default().entities)]
    entities: usize,
    #[arg(long, default_value_t = SynthConfig::default().relations)]
    relations: usize,
    #[arg(long, default_value_t = SynthConfig::default().triples)]
    triples: usize,
    #[arg(long, default_value_t = SynthConfig::default().latent_dim)]
    latent_dim: usize,
    #[arg(long, default_value_t = SynthConfig::default().fanout)]
    fanout: usize,
    #[arg(long, default_value_t = SynthConfig::default().seed)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
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
            let line = msg.lines().next().unwrap_or("usage error");
            eprintln!("error: {}", line.trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let chain: Vec<String> = e.chain().map(|c| c.to_string()).collect();
            eprintln!("error: {}", chain.join(": ").replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Train(a) => cmd_train(a),
        Command::Crop(a) => cmd_crop(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Importance(a) => cmd_importance(a),
        Command::Dump(a) => cmd_dump(a),
        Command::Stats(a) => cmd_stats(a),
        Command::Synth(a) => cmd_synth(a),
    }
}

fn set_threads(n: usize) -> Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| anyhow!("thread pool: {e}"))
}

fn resolve_data(args: &DataArgs) -> Result<PathBuf> {
    let env = std::env::var_os(DATA_ENV).map(PathBuf::from);
    match (&args.data, env) {
        (Some(p), _) if p.is_dir() => Ok(p.clone()),
        (Some(p), Some(root)) if p.is_relative() && root.join(p).is_dir() => Ok(root.join(p)),
        (Some(p), _) => bail!("dataset directory {} not found", p.display()),
        (None, Some(root)) if root.is_dir() => Ok(root),
        (None, Some(root)) => bail!("${DATA_ENV} points to {}, which is not a directory", root.display()),
        (None, None) => bail!("no dataset given: pass --data or set ${DATA_ENV}"),
    }
}

fn open_data(args: &DataArgs, manifest: &mut RunManifest) -> Result<Dataset> {
    let dir = resolve_data(args)?;
    let order = match args.order {
        Order::Hrt => TripleOrder::Hrt,
        Order::Htr => TripleOrder::Htr,
    };
    let ds = load_dataset(&dir, order)?;
    manifest.set_dataset(&dir, dataset_checksum(&split_paths(&dir)?)?)?;
    Ok(ds)
}

fn build_config(a: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            parse_config(&text, TrainConfig::default()).with_context(|| p.display().to_string())?
        }
        None => TrainConfig::default(),
    };
    let overrides: [(&str, Option<String>); 10] = [
        ("score_fn", a.score_fn.clone()),
        ("norm", a.norm.clone()),
        ("dims", a.dims.clone()),
        ("seed", a.seed.map(|v| v.to_string())),
        ("lr", a.lr.map(|v| v.to_string())),
        ("ablate", a.ablate.clone()),
        ("max_epochs", a.epochs.map(|v| v.to_string())),
        ("batch_size", a.batch_size.map(|v| v.to_string())),
        ("neg_per_pos", a.neg.map(|v| v.to_string())),
        ("margin", a.margin.map(|v| v.to_string())),
    ];
    for (key, value) in overrides {
        if let Some(v) = value {
            apply(&mut cfg, key, &v).with_context(|| format!("--{}", key.replace('_', "-")))?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Serialize)]
struct TrainSnapshot<'a> {
    method: Method,
    teacher: Option<&'a Path>,
    lr_search: bool,
    config: &'a TrainConfig,
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let mut cfg = build_config(&a)?;
    if a.method == Method::Bkd && a.teacher.is_none() {
        bail!("--method bkd requires --teacher");
    }
    if a.method != Method::Med && cfg.dims.len() != 1 {
        bail!("--method {} trains a single width; pass one value to --dims", method_name(a.method));
    }
    set_threads(a.threads)?;
    let snapshot = serde_json::to_value(TrainSnapshot {
        method: a.method,
        teacher: a.teacher.as_deref(),
        lr_search: a.lr_search,
        config: &cfg,
    })?;
    let mut manifest = RunManifest::begin("train", &a.out, snapshot, Some(cfg.seed))?;
    let ds = open_data(&a.data, &mut manifest)?;
    let teacher = a.teacher.as_ref().map(load_checkpoint).transpose()?;

    let train_once = |c: &TrainConfig| -> cropkge::Result<TrainOutcome> {
        match a.method {
            Method::Med => train_med(&ds, c),
            Method::Dt => train_dt(&ds, c.dims.full_dim(), c),
            Method::Bkd => distill_bkd(teacher.as_ref().expect("checked above"), &ds, c.dims.full_dim(), c),
        }
    };
    let outcome = if a.lr_search {
        let mut runs = Vec::new();
        let search: LrSearch = search_lr(&cfg, |c| {
            let o = train_once(c)?;
            runs.push((c.lr, o.clone()));
            Ok(o)
        })?;
        let path = a.out.join("lr_search.json");
        fs::write(&path, serde_json::to_string_pretty(&search)? + "\n")?;
        manifest.output(path);
        cfg.lr = search.best_lr;
        runs.into_iter()
            .find(|(lr, _)| *lr == search.best_lr)
            .map(|(_, o)| o)
            .expect("best lr was one of the runs")
    } else {
        train_once(&cfg)?
    };

    let ckpt = a.out.join("model.ckpt");
    save_checkpoint(&outcome.model, &ckpt)?;
    manifest.output(&ckpt);
    let log = a.out.join("train.log.jsonl");
    let mut w = BufWriter::new(fs::File::create(&log).with_context(|| log.display().to_string())?);
    outcome.write_log(&mut w)?;
    w.flush()?;
    manifest.output(&log);
    let cfg_path = a.out.join("config.txt");
    fs::write(&cfg_path, cropkge::config::format_config(&cfg))?;
    manifest.output(&cfg_path);
    println!(
        "trained {} epochs ({} steps); best epoch {:?}, validation MRR {:?}",
        outcome.epochs_run, outcome.steps, outcome.best_epoch, outcome.best_mrr
    );
    manifest.finish()
}

fn method_name(m: Method) -> &'static str {
    match m {
        Method::Med => "med",
        Method::Dt => "dt",
        Method::Bkd => "bkd",
    }
}

fn cmd_crop(a: CropArgs) -> Result<()> {
    let cfg = serde_json::json!({ "checkpoint": a.checkpoint, "dim": a.dim });
    let mut manifest = RunManifest::begin("crop", &a.out, cfg, None)?;
    let model = load_checkpoint(&a.checkpoint)?;
    let cropped = model.crop(a.dim)?;
    let path = a.out.join("model.ckpt");
    save_checkpoint(&cropped, &path)?;
    manifest.output(&path);
    println!("{}", cropped.param_count(a.dim));
    manifest.finish()
}

fn reschedule(model: CroppableModel, dims: Option<&str>) -> Result<CroppableModel> {
    match dims {
        Some(spec) => Ok(ext_model(&model, DimensionSchedule::parse_spec(spec)?, None)?),
        None => Ok(model),
    }
}

fn selected_dims(model: &CroppableModel, spec: &str) -> Result<Vec<usize>> {
    if spec.eq_ignore_ascii_case("all") {
        return Ok(model.schedule().dims().to_vec());
    }
    let mut out = Vec::new();
    for part in spec.split(',') {
        let d: usize = part.trim().parse().map_err(|_| anyhow!("--dim: `{part}` is not a width"))?;
        model.schedule().index_of(d)?;
        out.push(d);
    }
    Ok(out)
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let split: Split = a.split.parse()?;
    let format: ReportFormat = a.format.parse()?;
    set_threads(a.threads)?;
    let cfg = serde_json::json!({
        "checkpoint": a.checkpoint, "dim": a.dim, "dims": a.dims, "split": split,
        "arr": a.arr, "arr_include_vacuous": a.arr_include_vacuous, "format": a.format,
    });
    let mut manifest = RunManifest::begin("eval", &a.out, cfg, None)?;
    let ds = open_data(&a.data, &mut manifest)?;
    let model = reschedule(load_checkpoint(&a.checkpoint)?, a.dims.as_deref())?;
    let dims = selected_dims(&model, &a.dim)?;

    let mut reports = Vec::with_capacity(dims.len());
    for d in &dims {
        let i = model.schedule().index_of(*d)?;
        reports.push(link_prediction(&model, i, &ds, split)?);
    }
    let ext = match format {
        ReportFormat::Csv => "csv",
        ReportFormat::Json => "json",
    };
    let path = a.out.join(format!("report.{ext}"));
    emit_report(&reports, &path, format)?;
    manifest.output(&path);
    manifest.output(a.out.join("report.series.tsv"));
    for r in &reports {
        println!("dim {} mrr {:.4} hit@1 {:.4} hit@3 {:.4} hit@10 {:.4}", r.dim, r.mrr, r.hit1, r.hit3, r.hit10);
    }

    if a.arr {
        let ranks = rank_sub_models(&model, &ds, split)?;
        let matrix = correctness_matrix(&ranks);
        let mpath = a.out.join("arr_matrix.tsv");
        write_matrix(&matrix, &mpath)?;
        let report = arr_from_matrix(matrix, a.arr_include_vacuous);
        let apath = a.out.join("arr.json");
        fs::write(&apath, serde_json::to_string_pretty(&report)? + "\n")?;
        manifest.output(mpath);
        manifest.output(apath);
        println!("arr {:.6} ({}/{} of {})", report.arr, report.retained, report.counted, report.total);
    }
    manifest.finish()
}

fn cmd_importance(a: ImportanceArgs) -> Result<()> {
    let mode: ImportanceMethod = a.mode.parse()?;
    set_threads(a.threads)?;
    let cfg = serde_json::json!({
        "checkpoint": a.checkpoint, "mode": a.mode, "neg": a.neg, "apply": a.apply,
    });
    let mut manifest = RunManifest::begin("importance", &a.out, cfg, Some(a.seed))?;
    let model = load_checkpoint(&a.checkpoint)?;
    let importance = match mode {
        ImportanceMethod::Value => importance_by_value(&model),
        ImportanceMethod::Loss => {
            let ds = open_data(&a.data, &mut manifest)?;
            if ds.valid.is_empty() {
                bail!("loss importance needs a non-empty validation split");
            }
            importance_by_loss(&model, &ds.valid, a.neg, a.seed)?
        }
    };
    let path = a.out.join("importance.tsv");
    write_importance(&importance, &path)?;
    manifest.output(&path);
    if a.apply {
        let reordered = model.reorder_dimensions(&importance)?;
        let ckpt = a.out.join("model.ckpt");
        save_checkpoint(&reordered, &ckpt)?;
        manifest.output(ckpt);
    }
    manifest.finish()
}

fn cmd_dump(a: DumpArgs) -> Result<()> {
    let cfg = serde_json::json!({ "checkpoint": a.checkpoint, "table": a.table, "dim": a.dim });
    let mut manifest = RunManifest::begin("dump", &a.out, cfg, None)?;
    let model = load_checkpoint(&a.checkpoint)?;
    let width = a.dim.unwrap_or(model.full_dim());
    if width == 0 || width > model.full_dim() {
        bail!("--dim {width} outside 1..={}", model.full_dim());
    }
    let picked: Vec<usize> = if a.table == "all" {
        (0..model.tables().len()).collect()
    } else {
        let idx = model
            .tables()
            .iter()
            .position(|t| t.name == a.table)
            .ok_or_else(|| {
                let names: Vec<&str> = model.tables().iter().map(|t| t.name).collect();
                anyhow!("no table `{}`; available: {}", a.table, names.join(", "))
            })?;
        vec![idx]
    };
    for idx in picked {
        let path = a.out.join(format!("{}.tsv", model.table(idx).name));
        let mut w = BufWriter::new(fs::File::create(&path).with_context(|| path.display().to_string())?);
        model.dump_table(idx, width, &mut w)?;
        w.flush()?;
        manifest.output(path);
    }
    manifest.finish()
}

fn cmd_stats(a: DataArgs) -> Result<()> {
    let dir = resolve_data(&a)?;
    let order = match a.order {
        Order::Hrt => TripleOrder::Hrt,
        Order::Htr => TripleOrder::Htr,
    };
    let ds = load_dataset(&dir, order)?;
    println!("{}", serde_json::to_string(&ds.stats())?);
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        entities: a.entities,
        relations: a.relations,
        triples: a.triples,
        latent_dim: a.latent_dim,
        fanout: a.fanout,
        seed: a.seed,
        ..SynthConfig::default()
    };
    let mut manifest = RunManifest::begin("synth", &a.out, serde_json::to_value(&cfg)?, Some(a.seed))?;
    let ds = generate(&cfg)?;
    write_dataset(&ds, &a.out)?;
    for name in ["train.txt", "valid.txt", "test.txt"] {
        manifest.output(a.out.join(name));
    }
    println!("{}", serde_json::to_string(&ds.stats())?);
    manifest.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use cropkge::{Norm, ScoreFunction, ScoreKind};

    fn model() -> CroppableModel {
        CroppableModel::zeros(
            ScoreFunction::new(ScoreKind::TransE, Norm::L2),
            DimensionSchedule::new(vec![2, 4, 6]).unwrap(),
            3,
            1,
        )
        .unwrap()
    }

    #[test]
    fn dim_selection() {
        let m = model();
        assert_eq!(selected_dims(&m, "all").unwrap(), vec![2, 4, 6]);
        assert_eq!(selected_dims(&m, "6,2").unwrap(), vec![6, 2]);
        assert!(selected_dims(&m, "5").is_err());
        assert!(selected_dims(&m, "x").is_err());
    }

    #[test]
    fn reschedule_slices_prefixes() {
        let m = reschedule(model(), Some("1:6:1")).unwrap();
        assert_eq!(m.schedule().len(), 6);
        assert!(reschedule(model(), Some("8")).is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
