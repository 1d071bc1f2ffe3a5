use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use attr2face_core::attributes::{compose, FACE_ATTRS};
use attr2face_core::config::{Dataset, GeneratorLossForm, TrainConfig};
use attr2face_core::nn::NormKind;
use attr2face_core::predictor::{balanced_accuracy, AttributePredictor, PredictorTrainConfig, EXTRACTORS};
use attr2face_core::train::StageSelection;
use clap::{Args, Parser, Subcommand};

use attr2face::cache::write_cache;
use attr2face::checkpoint::{file_hash, load_predictor, save_predictor};
use attr2face::config::{config_hash, resolve, to_toml};
use attr2face::dataset::{encode_png, prepare, Split};
use attr2face::eval::{evaluate_run, predictor_data, EvalOptions};
use attr2face::service::{serve, AppState, DEFAULT_MAX_COUNT};
use attr2face::synth::Synthesizer;
use attr2face::synthetic::write_dataset;
use attr2face::trainer::{load_training_samples, run_training, RunOptions};

#[derive(Parser)]
#[command(name = "attr2face", version, about = "Attribute-conditioned sketch and face synthesis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Curate a dataset split into a binary sample cache.
    Prepare(PrepareArgs),
    /// Train the sketch stage only.
    TrainSketch(TrainArgs),
    /// Train the face stage with a frozen sketch generator.
    TrainFace(TrainFaceArgs),
    /// Train both stages (jointly, or staged when configured).
    Train(TrainArgs),
    /// Write synthesized faces as PNG files.
    Synthesize(SynthesizeArgs),
    /// Compute FID and Attribute-L2 for a checkpoint.
    Evaluate(EvaluateArgs),
    /// Start the HTTP synthesis service.
    Serve(ServeArgs),
    /// Write a procedural attribute-driven dataset.
    MakeSynthetic(MakeSyntheticArgs),
    /// Train the attribute predictor used by evaluation.
    TrainPredictor(TrainPredictorArgs),
}

#[derive(Args)]
struct PrepareArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "train")]
    split: Split,
    #[arg(long, value_delimiter = ',', default_value = "16,32,64")]
    scales: Vec<usize>,
}

/// One flag per configuration key.
#[derive(Args, Default)]
struct ConfigOverrides {
    #[arg(long, value_parser = parse_enum::<Dataset>)]
    dataset: Option<Dataset>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr_stage1: Option<f64>,
    #[arg(long)]
    lr_stage2: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    freeze_epochs: Option<usize>,
    #[arg(long)]
    decay_fraction: Option<f64>,
    #[arg(long)]
    lambda_s: Option<f64>,
    #[arg(long)]
    lambda_f: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    scales: Option<Vec<usize>>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    width_div: Option<usize>,
    #[arg(long, value_parser = parse_enum::<NormKind>)]
    norm: Option<NormKind>,
    #[arg(long, value_parser = parse_enum::<GeneratorLossForm>)]
    generator_loss: Option<GeneratorLossForm>,
    #[arg(long)]
    adam_beta1: Option<f64>,
    #[arg(long)]
    adam_beta2: Option<f64>,
    #[arg(long)]
    staged: Option<bool>,
    #[arg(long)]
    stop_gradient_sketch: Option<bool>,
    #[arg(long)]
    ground_truth_sketch: Option<bool>,
}

fn parse_enum<T: serde::de::DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

impl ConfigOverrides {
    fn table(&self) -> anyhow::Result<toml::Table> {
        let mut t = toml::Table::new();
        let mut put = |k: &str, v: Option<toml::Value>| {
            if let Some(v) = v {
                t.insert(k.to_string(), v);
            }
        };
        put("dataset", self.dataset.as_ref().map(ser));
        put("batch_size", self.batch_size.map(|v| toml::Value::Integer(v as i64)));
        put("lr_stage1", self.lr_stage1.map(toml::Value::Float));
        put("lr_stage2", self.lr_stage2.map(toml::Value::Float));
        put("epochs", self.epochs.map(|v| toml::Value::Integer(v as i64)));
        put("freeze_epochs", self.freeze_epochs.map(|v| toml::Value::Integer(v as i64)));
        put("decay_fraction", self.decay_fraction.map(toml::Value::Float));
        put("lambda_s", self.lambda_s.map(toml::Value::Float));
        put("lambda_f", self.lambda_f.map(toml::Value::Float));
        put(
            "scales",
            self.scales.as_ref().map(|s| toml::Value::Array(s.iter().map(|&v| toml::Value::Integer(v as i64)).collect())),
        );
        if let Some(seed) = self.seed {
            let seed = i64::try_from(seed).context("seed must fit in a signed 64-bit integer")?;
            put("seed", Some(toml::Value::Integer(seed)));
        }
        put("width_div", self.width_div.map(|v| toml::Value::Integer(v as i64)));
        put("norm", self.norm.as_ref().map(ser));
        put("generator_loss", self.generator_loss.as_ref().map(ser));
        put("adam_beta1", self.adam_beta1.map(toml::Value::Float));
        put("adam_beta2", self.adam_beta2.map(toml::Value::Float));
        put("staged", self.staged.map(toml::Value::Boolean));
        put("stop_gradient_sketch", self.stop_gradient_sketch.map(toml::Value::Boolean));
        put("ground_truth_sketch", self.ground_truth_sketch.map(toml::Value::Boolean));
        Ok(t)
    }
}

fn ser<T: serde::Serialize>(v: &T) -> toml::Value {
    toml::Value::try_from(v).expect("enum serializes to a string")
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory or sample cache file.
    #[arg(long)]
    data: PathBuf,
    /// Output directory for checkpoints and the metrics log.
    #[arg(long)]
    out: PathBuf,
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Start from the desk-scale smoke profile instead of the dataset defaults.
    #[arg(long)]
    smoke: bool,
    #[arg(long)]
    max_steps: Option<u64>,
    #[arg(long)]
    checkpoint_every: Option<u64>,
    /// Checkpoint to resume from; its configuration hash must match.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[command(flatten)]
    overrides: ConfigOverrides,
}

#[derive(Args)]
struct TrainFaceArgs {
    #[command(flatten)]
    train: TrainArgs,
    /// Checkpoint providing the trained sketch generator.
    #[arg(long)]
    sketch_stage: Option<PathBuf>,
}

#[derive(Args)]
struct SynthesizeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Attribute override `Name=value` (case-insensitive name, value in [-1, 1]).
    #[arg(long = "attr")]
    attrs: Vec<String>,
    /// Comma-separated base vector of 23 values (default: all -1).
    #[arg(long)]
    base: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    count: usize,
    /// Sweep this attribute over the six progression weights.
    #[arg(long)]
    progression: Option<String>,
    /// Also write the intermediate sketches.
    #[arg(long)]
    return_sketch: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Dataset directory (its test split is the reference set).
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    predictor: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    n_samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "predictor", value_parser = clap::builder::PossibleValuesParser::new(EXTRACTORS))]
    extractor: String,
    /// Score copies of the reference faces instead of generated ones.
    #[arg(long)]
    oracle: bool,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    #[arg(long, default_value_t = DEFAULT_MAX_COUNT)]
    max_count: usize,
}

#[derive(Args)]
struct MakeSyntheticArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Put every sample in the training split.
    #[arg(long)]
    all_train: bool,
}

#[derive(Args)]
struct TrainPredictorArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_delimiter = ',', default_value = "16,32,64")]
    scales: Vec<usize>,
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli.command) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Prepare(a) => {
            let samples = prepare(&a.data, a.split, &a.scales)?;
            write_cache(&a.out, &a.scales, &samples)?;
            println!("wrote {} samples to {}", samples.len(), a.out.display());
        }
        Command::TrainSketch(a) => train(a, StageSelection::Sketch, None)?,
        Command::Train(a) => train(a, StageSelection::Both, None)?,
        Command::TrainFace(a) => train(a.train, StageSelection::Face, a.sketch_stage)?,
        Command::Synthesize(a) => synthesize(a)?,
        Command::Evaluate(a) => evaluate(a)?,
        Command::Serve(a) => {
            let model = a.checkpoint.as_deref().map(Synthesizer::load).transpose()?;
            if let Some(m) = &model {
                println!("loaded model {}", m.model_hash);
            }
            let rt = tokio::runtime::Runtime::new()?;
            println!("listening on {}", a.addr);
            rt.block_on(serve(AppState::new(model, a.max_count), a.addr))?;
        }
        Command::MakeSynthetic(a) => {
            write_dataset(&a.out, a.n, a.seed, a.all_train)?;
            println!("wrote {} samples to {}", a.n, a.out.display());
        }
        Command::TrainPredictor(a) => train_predictor(a)?,
    }
    Ok(())
}

fn train(a: TrainArgs, plan: StageSelection, sketch_stage: Option<PathBuf>) -> anyhow::Result<()> {
    let cfg: TrainConfig = resolve(a.config.as_deref(), &a.overrides.table()?, a.smoke)?;
    for p in [&a.resume, &sketch_stage].into_iter().flatten() {
        if !p.exists() {
            bail!("checkpoint not found: {}", p.display());
        }
    }
    let samples = load_training_samples(&a.data, &cfg.scales)?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    std::fs::write(a.out.join("config.toml"), to_toml(&cfg)?)?;
    let opts = RunOptions {
        max_steps: a.max_steps,
        checkpoint_every: a.checkpoint_every,
        resume: a.resume,
        sketch_stage,
        ..RunOptions::new(&a.out, plan)
    };
    println!("config {} on {} samples", config_hash(&cfg), samples.len());
    let summary = run_training(&cfg, &samples, &opts)?;
    if let (Some(first), Some(last)) = (summary.reports.first(), summary.reports.last()) {
        for (label, r0, r1) in [("sketch", &first.sketch, &last.sketch), ("face", &first.face, &last.face)] {
            if let (Some(r0), Some(r1)) = (r0, r1) {
                println!(
                    "{label}: g_adv {:.4} -> {:.4}, d_loss {:.4} -> {:.4}, judgment gap {:.4}",
                    r0.g_adv, r1.g_adv, r0.d_loss, r1.d_loss, r1.judgment_gap
                );
            }
        }
    }
    println!("step {} checkpoint {}", summary.trainer.step, summary.final_checkpoint.display());
    Ok(())
}

fn require_checkpoint(path: &Path) -> anyhow::Result<()> {
    if !path.is_file() {
        bail!("checkpoint not found: {}", path.display());
    }
    Ok(())
}

fn parse_base(base: Option<&str>) -> anyhow::Result<Vec<f64>> {
    match base {
        None => Ok(vec![-1.0; FACE_ATTRS]),
        Some(s) => {
            let v = s.split(',').map(|p| p.trim().parse::<f64>()).collect::<Result<Vec<_>, _>>().context("parsing --base")?;
            if v.len() != FACE_ATTRS {
                bail!("--base needs {FACE_ATTRS} values, got {}", v.len());
            }
            Ok(v)
        }
    }
}

fn parse_overrides(attrs: &[String]) -> anyhow::Result<Vec<(String, f64)>> {
    attrs
        .iter()
        .map(|a| {
            let (name, value) = a.split_once('=').with_context(|| format!("--attr `{a}` is not Name=value"))?;
            let value: f64 = value.trim().parse().with_context(|| format!("--attr `{a}`: bad value"))?;
            Ok((name.trim().to_string(), value))
        })
        .collect()
}

fn write_png(path: &Path, image: &attr2face_core::data::Image) -> anyhow::Result<()> {
    std::fs::write(path, encode_png(image)?).with_context(|| format!("writing {}", path.display()))
}

fn synthesize(a: SynthesizeArgs) -> anyhow::Result<()> {
    require_checkpoint(&a.checkpoint)?;
    let synth = Synthesizer::load(&a.checkpoint)?;
    let overrides = parse_overrides(&a.attrs)?;
    let pairs: Vec<(&str, f64)> = overrides.iter().map(|(n, v)| (n.as_str(), *v)).collect();
    let y = compose(&parse_base(a.base.as_deref())?, &pairs)?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut written = Vec::new();
    if let Some(attr) = &a.progression {
        let (weights, out) = synth.progression(attr, &y, a.seed)?;
        for (k, (w, face)) in weights.iter().zip(&out.faces).enumerate() {
            let path = a.out.join(format!("progression-{k}-{attr}-{w:+.1}.png"));
            write_png(&path, face)?;
            written.push(path);
            if a.return_sketch {
                write_png(&a.out.join(format!("progression-{k}-{attr}-{w:+.1}-sketch.png")), &out.sketches[k])?;
            }
        }
    } else {
        if a.count == 0 {
            bail!("--count must be at least 1");
        }
        let out = synth.synthesize(&y, a.seed, a.count)?;
        for (i, face) in out.faces.iter().enumerate() {
            let path = a.out.join(format!("face-{i:03}.png"));
            write_png(&path, face)?;
            written.push(path);
            if a.return_sketch {
                write_png(&a.out.join(format!("sketch-{i:03}.png")), &out.sketches[i])?;
            }
        }
    }
    for p in &written {
        println!("{}", p.display());
    }
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> anyhow::Result<()> {
    if let Some(c) = &a.checkpoint {
        require_checkpoint(c)?;
    } else if !a.oracle {
        bail!("--checkpoint is required unless --oracle is given");
    }
    require_checkpoint(&a.predictor)?;
    let synth = a.checkpoint.as_deref().map(Synthesizer::load).transpose()?;
    let scales = match &synth {
        Some(s) => s.pipeline.scales().to_vec(),
        None => vec![16, 32, 64],
    };
    let predictor = load_predictor(&a.predictor)?;
    let test = prepare(&a.data, Split::Test, &scales)?;
    let opts = EvalOptions { n_samples: a.n_samples, seed: a.seed, extractor: a.extractor, oracle: a.oracle, ..EvalOptions::default() };
    let report = evaluate_run(synth.as_ref(), &test, &predictor, &file_hash(&a.predictor)?, &opts)?;
    let text = report.render();
    print!("{text}");
    if let Some(out) = &a.out {
        std::fs::write(out, &text).with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(())
}

fn train_predictor(a: TrainPredictorArgs) -> anyhow::Result<()> {
    let top = *a.scales.last().context("no scales")?;
    let train = prepare(&a.data, Split::Train, &a.scales)?;
    if train.is_empty() {
        bail!("no training samples under {}", a.data.display());
    }
    let (x, y) = predictor_data(&train)?;
    let mut p = AttributePredictor::new(top, a.seed)?;
    let history = p.train(&x, &y, &PredictorTrainConfig { epochs: a.epochs, seed: a.seed, ..PredictorTrainConfig::default() })?;
    println!("final training loss {:.4}", history.last().copied().unwrap_or(f64::NAN));
    let held_out = prepare(&a.data, Split::Test, &a.scales)?;
    if !held_out.is_empty() {
        let (xt, yt) = predictor_data(&held_out)?;
        let (_, scores) = p.predict(&xt)?;
        let (acc, _) = balanced_accuracy(&scores, &yt)?;
        println!("held-out balanced accuracy {acc:.4} over {} samples", held_out.len());
    }
    save_predictor(&p, a.seed, &a.out)?;
    println!("wrote {}", a.out.display());
    Ok(())
}
