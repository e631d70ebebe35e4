//! `avsumm` command-line tool.
//!
//! Settings come from an optional TOML file (`--config`), then flags. The
//! merged configuration is written into every output file. Relative output
//! paths are resolved against `$AVSUMM_OUTPUT_ROOT` when it is set.

pub mod config;
pub mod error;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use avsumm_core::checkpoint::{inspect_checkpoint, load_checkpoint, CHECKPOINT_MAGIC};
use avsumm_core::dataset::MANIFEST_FILE_NAME;
use avsumm_core::eval::{evaluate_summary, format_table, run_video, write_score_curve, SummaryRecord};
use avsumm_core::features::{decode_header, FEATURE_MAGIC};
use avsumm_core::fixture::generate;
use avsumm_core::model::{param_count, ModelConfig};
use avsumm_core::{load_manifest, Dataset, Protocol, Trainer, Video};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

pub use config::RunConfig;
pub use error::CliError;

pub const OUTPUT_ROOT_ENV: &str = "AVSUMM_OUTPUT_ROOT";
pub const CHECKPOINT_FILE: &str = "checkpoint.mf2c";

#[derive(Debug, Parser)]
#[command(name = "avsumm", version, about = "Audio-visual video summarization")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset with planted events.
    GenFixtures(GenArgs),
    /// Train a model and write a checkpoint plus a training log.
    Train(TrainArgs),
    /// Summarize videos with a trained checkpoint.
    Summarize(SummarizeArgs),
    /// F-score evaluation against user summaries.
    Eval(EvalArgs),
    /// Print header information of a feature or checkpoint file.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, default_value = "fixtures")]
    pub out: PathBuf,
    #[arg(long)]
    pub videos: Option<usize>,
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub visual_dim: Option<usize>,
    #[arg(long)]
    pub audio_dim: Option<usize>,
    #[arg(long)]
    pub users: Option<usize>,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Manifest file, or a directory containing `dataset.manifest`.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Hold out this fold (train skips it; summarize/eval use only it).
    #[arg(long)]
    pub test_fold: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value = "run")]
    pub out: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Drop the audio pathway (zero audio stream, no audio adapter).
    #[arg(long)]
    pub no_audio: bool,
    /// Allow global cross-modal attention during fusion.
    #[arg(long)]
    pub no_align_mask: bool,
    /// Remove the center-ness head and its loss term.
    #[arg(long)]
    pub no_centerness: bool,
    /// Continue from this checkpoint up to the configured epoch count.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SummarizeArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "summaries")]
    pub out: PathBuf,
    /// Only this video.
    #[arg(long)]
    pub video: Option<String>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ProtocolArg {
    Max,
    Mean,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_enum)]
    pub protocol: Option<ProtocolArg>,
    /// Directory for `eval.jsonl`; nothing is written without it.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    pub path: PathBuf,
}

/// Resolves an output path against the output root.
pub fn output_path(path: &Path) -> PathBuf {
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) if path.is_relative() => PathBuf::from(root).join(path),
        _ => path.to_path_buf(),
    }
}

fn manifest_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join(MANIFEST_FILE_NAME)
    } else {
        p.to_path_buf()
    }
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("json serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

struct JsonLines {
    path: PathBuf,
    out: BufWriter<File>,
}

impl JsonLines {
    fn create(path: PathBuf) -> Result<Self, CliError> {
        let file = File::create(&path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        Ok(JsonLines {
            path,
            out: BufWriter::new(file),
        })
    }

    fn write(&mut self, value: &serde_json::Value) -> Result<(), CliError> {
        let io = |e: std::io::Error| CliError::Data(format!("{}: {e}", self.path.display()));
        serde_json::to_writer(&mut self.out, value).map_err(|e| io(e.into()))?;
        self.out.write_all(b"\n").map_err(io)?;
        self.out.flush().map_err(io)
    }
}

fn select<'d>(dataset: &'d Dataset, fold: Option<usize>, held_out: bool) -> Vec<&'d Video> {
    dataset
        .videos()
        .iter()
        .filter(|v| match fold {
            None => true,
            Some(k) => (v.fold == k) == held_out,
        })
        .collect()
}

/// Model input dimensions always come from the data.
fn fit_dims(model: &mut ModelConfig, dataset: &Dataset) {
    if let Some(v) = dataset.videos().first() {
        model.visual_dim = v.visual.dim();
        model.audio_dim = v.audio.dim();
    }
}

fn ablations(model: &ModelConfig) -> Vec<&'static str> {
    let mut out = Vec::new();
    if !model.use_audio {
        out.push("no-audio");
    }
    if !model.align_mask {
        out.push("no-align-mask");
    }
    if !model.centerness {
        out.push("no-centerness");
    }
    out
}

fn cmd_gen(mut cfg: RunConfig, args: &GenArgs) -> Result<(), CliError> {
    let f = &mut cfg.fixture;
    f.videos = args.videos.unwrap_or(f.videos);
    f.frames = args.frames.unwrap_or(f.frames);
    f.visual_dim = args.visual_dim.unwrap_or(f.visual_dim);
    f.audio_dim = args.audio_dim.unwrap_or(f.audio_dim);
    f.users = args.users.unwrap_or(f.users);
    let fixture = generate(output_path(&args.out), &cfg.fixture)?;
    println!("{}", fixture.manifest_path.display());
    Ok(())
}

fn cmd_train(mut cfg: RunConfig, args: &TrainArgs) -> Result<(), CliError> {
    if let Some(e) = args.epochs {
        cfg.train.epochs = e;
    }
    if let Some(lr) = args.lr {
        cfg.train.adam.lr = lr;
    }
    if args.data.test_fold.is_some() {
        cfg.eval.test_fold = args.data.test_fold;
    }
    let resumed = match &args.resume {
        Some(path) => Some(load_checkpoint(path)?),
        None => None,
    };
    match &resumed {
        Some(ckpt) => cfg.model = ckpt.meta.model.clone(),
        None => {
            if args.no_audio {
                cfg.model.use_audio = false;
            }
            if args.no_align_mask {
                cfg.model.align_mask = false;
            }
            if args.no_centerness {
                cfg.model.centerness = false;
            }
        }
    }
    if !cfg.model.centerness {
        cfg.train.loss.mu = 0.0;
    }
    cfg.train.validate()?;
    cfg.postprocess.validate()?;

    let dataset = load_manifest(manifest_path(&args.data.manifest))?;
    if resumed.is_none() {
        fit_dims(&mut cfg.model, &dataset);
    }
    cfg.model.validate()?;
    let videos = select(&dataset, cfg.eval.test_fold, false);
    if videos.is_empty() {
        return Err(CliError::Data("no training videos after the fold split".into()));
    }

    let out = output_path(&args.out);
    create_dir(&out)?;
    let header = json!({
        "kind": "config",
        "config": cfg.to_json(),
        "ablations": ablations(&cfg.model),
        "param_count": param_count(&cfg.model),
        "resumed_from": args.resume,
    });
    let mut log = JsonLines::create(out.join("train_log.jsonl"))?;
    log.write(&header)?;

    let mut trainer = match resumed {
        Some(ckpt) => Trainer::resume(cfg.train.clone(), &videos, ckpt)?,
        None => Trainer::new(cfg.model.clone(), cfg.train.clone(), &videos)?,
    };
    let ckpt_path = out.join(CHECKPOINT_FILE);
    let mut log_error = None;
    let report = trainer.run(Some(&ckpt_path), |r| {
        if log_error.is_none() {
            let mut record = serde_json::to_value(r).expect("record serializes");
            record["kind"] = json!("epoch");
            log_error = log.write(&record).err();
        }
    })?;
    if let Some(e) = log_error {
        return Err(e);
    }
    write_json(
        &out.join("report.json"),
        &json!({
            "config": cfg.to_json(),
            "ablations": ablations(&cfg.model),
            "report": report,
        }),
    )?;
    let first = report.first_loss().unwrap_or(f64::NAN);
    let last = report.last_loss().unwrap_or(f64::NAN);
    println!(
        "trained {} epochs on {} videos: loss {first:.6} -> {last:.6}; checkpoint {}",
        trainer.epochs_done(),
        videos.len(),
        ckpt_path.display()
    );
    Ok(())
}

struct Loaded {
    cfg: RunConfig,
    dataset: Dataset,
    params: avsumm_core::ModelParams,
}

fn load_for_inference(mut cfg: RunConfig, data: &DataArgs, checkpoint: &Path) -> Result<Loaded, CliError> {
    if data.test_fold.is_some() {
        cfg.eval.test_fold = data.test_fold;
    }
    cfg.postprocess.validate()?;
    let ckpt = load_checkpoint(checkpoint)?;
    cfg.model = ckpt.meta.model.clone();
    let dataset = load_manifest(manifest_path(&data.manifest))?;
    if let Some(v) = dataset.videos().first() {
        if v.visual.dim() != cfg.model.visual_dim || v.audio.dim() != cfg.model.audio_dim {
            return Err(CliError::Data(format!(
                "{}: model expects feature dims {}/{}, dataset has {}/{}",
                checkpoint.display(),
                cfg.model.visual_dim,
                cfg.model.audio_dim,
                v.visual.dim(),
                v.audio.dim()
            )));
        }
    }
    Ok(Loaded {
        cfg,
        dataset,
        params: ckpt.params,
    })
}

fn cmd_summarize(cfg: RunConfig, args: &SummarizeArgs) -> Result<(), CliError> {
    let Loaded { cfg, dataset, params } = load_for_inference(cfg, &args.data, &args.checkpoint)?;
    let mut videos = select(&dataset, cfg.eval.test_fold, true);
    if let Some(id) = &args.video {
        videos.retain(|v| &v.id == id);
        if videos.is_empty() {
            return Err(CliError::Data(format!("no video {id} in the selected split")));
        }
    }
    let out = output_path(&args.out);
    let curves = out.join("curves");
    create_dir(&curves)?;
    let mut records = JsonLines::create(out.join("summaries.jsonl"))?;
    records.write(&json!({"kind": "config", "config": cfg.to_json(), "checkpoint": args.checkpoint}))?;
    for v in videos {
        let result = run_video(v, &params, &cfg.model, &cfg.postprocess)?;
        let record = SummaryRecord::new(&v.id, &result.summary, v.fps);
        let mut value = serde_json::to_value(&record).expect("record serializes");
        value["kind"] = json!("summary");
        records.write(&value)?;
        write_score_curve(curves.join(format!("{}.csv", v.id)), &result.predictions, &result.summary.mask)?;
        println!(
            "{}: {} of {} frames ({:.1}%), budget {} frames, {:.1}s of {:.1}s",
            v.id,
            record.frames_used,
            record.frames,
            100.0 * record.frames_used as f64 / record.frames as f64,
            record.budget,
            record.seconds_used,
            v.duration_secs()
        );
    }
    Ok(())
}

fn cmd_eval(mut cfg: RunConfig, args: &EvalArgs) -> Result<(), CliError> {
    if let Some(p) = args.protocol {
        cfg.eval.protocol = match p {
            ProtocolArg::Max => Protocol::Max,
            ProtocolArg::Mean => Protocol::Mean,
        };
    }
    let Loaded { cfg, dataset, params } = load_for_inference(cfg, &args.data, &args.checkpoint)?;
    let videos = select(&dataset, cfg.eval.test_fold, true);
    if videos.is_empty() {
        return Err(CliError::Data("evaluation split is empty".into()));
    }
    let mut per_video = Vec::with_capacity(videos.len());
    for v in &videos {
        let result = run_video(v, &params, &cfg.model, &cfg.postprocess)?;
        per_video.push(evaluate_summary(
            v,
            &result.summary,
            cfg.postprocess.budget_fraction,
            cfg.postprocess.kts(),
            cfg.eval.protocol,
        )?);
    }
    let mean_f = per_video.iter().map(|v| v.f).sum::<f64>() / per_video.len() as f64;
    let result = avsumm_core::EvalResult {
        protocol: cfg.eval.protocol,
        split: cfg.eval.test_fold,
        videos: per_video,
        mean_f,
    };
    println!("{}", format_table(&result));
    println!("dataset F = {:.4}", result.mean_f);
    if let Some(dir) = &args.out {
        let dir = output_path(dir);
        create_dir(&dir)?;
        let mut lines = JsonLines::create(dir.join("eval.jsonl"))?;
        lines.write(&json!({"kind": "config", "config": cfg.to_json(), "checkpoint": args.checkpoint}))?;
        for v in &result.videos {
            let mut value = serde_json::to_value(v).expect("record serializes");
            value["kind"] = json!("video");
            lines.write(&value)?;
        }
        lines.write(&json!({
            "kind": "dataset",
            "protocol": result.protocol,
            "split": result.split,
            "mean_f": result.mean_f,
        }))?;
    }
    Ok(())
}

fn cmd_inspect(args: &InspectArgs) -> Result<(), CliError> {
    let path = &args.path;
    let bytes = std::fs::read(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let bad = |e: avsumm_core::FormatError| CliError::Data(format!("{}: {e}", path.display()));
    if bytes.starts_with(&FEATURE_MAGIC) {
        let h = decode_header(&bytes).map_err(bad)?;
        avsumm_core::FeatureSequence::decode(&bytes).map_err(bad)?;
        println!("feature file {}", path.display());
        println!("version  {}", h.version);
        println!("modality {}", h.modality);
        println!("frames   {}", h.frames);
        println!("dim      {}", h.dim);
    } else if bytes.starts_with(&CHECKPOINT_MAGIC) {
        let info = inspect_checkpoint(&bytes).map_err(bad)?;
        println!("checkpoint {}", path.display());
        println!("version    {}", info.version);
        println!("epochs     {}", info.meta.epochs);
        println!("adam step  {}", info.meta.adam_step);
        println!("params     {}", param_count(&info.meta.model));
        println!(
            "model      {}",
            serde_json::to_string(&info.meta.model).expect("config serializes")
        );
        for (name, rows, cols) in &info.tensors {
            println!("  {name} {rows}x{cols}");
        }
    } else {
        return Err(CliError::Data(format!(
            "{}: not a feature file or checkpoint",
            path.display()
        )));
    }
    Ok(())
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
}

/// Runs a parsed command line.
pub fn run(cli: Cli) -> Result<(), CliError> {
    init_logging(cli.verbose);
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.train.seed = seed;
        cfg.fixture.seed = seed;
    }
    match &cli.command {
        Command::GenFixtures(a) => cmd_gen(cfg, a),
        Command::Train(a) => cmd_train(cfg, a),
        Command::Summarize(a) => cmd_summarize(cfg, a),
        Command::Eval(a) => cmd_eval(cfg, a),
        Command::Inspect(a) => cmd_inspect(a),
    }
}

/// Parses `args` and runs, returning the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { error::EXIT_USAGE } else { error::EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => error::EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
