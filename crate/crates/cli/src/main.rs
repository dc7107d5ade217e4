//! `wandernet` command-line tool.
//!
//! Exit status: 0 success, 1 usage or configuration error, 2 data or schema
//! error, 3 model or weights error. Failures print one line on stderr.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use wandernet::augment::{augment_set, AugmentConfig};
use wandernet::dataset::{self, TraceDataset};
use wandernet::nn::{load_weights, save_weights, CnnModel};
use wandernet::pipeline::{self, export_history, TrainConfig};
use wandernet::raster::IMAGE_SIDE;
use wandernet::synth::{gen_dataset, SynthConfig};

#[derive(Parser)]
#[command(
    name = "wandernet",
    version,
    about = "Wandering detection from indoor movement traces"
)]
struct Cli {
    /// Floor-plan width in pixels used to interpret dataset coordinates.
    #[arg(long, global = true, default_value_t = 640)]
    floor_width: u32,
    /// Floor-plan height in pixels.
    #[arg(long, global = true, default_value_t = 480)]
    floor_height: u32,
    /// Worker threads. Computation is single-threaded; any value gives the
    /// same, deterministic output.
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    threads: u32,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Synth {
        /// Generator config (JSON). Defaults to the train/test composition.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Use the validation composition instead of the config's counts.
        #[arg(long)]
        validation: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the 128×128 stroke image of every trace as PNG.
    Render {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Split, augment and train; writes weights and the per-epoch history.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Training config (JSON). Defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Print precision, recall, F1 and accuracy as JSON.
    Eval {
        #[command(flatten)]
        io: ModelInput,
    },
    /// Print `interval,probability,label` for every trace.
    Predict {
        #[command(flatten)]
        io: ModelInput,
    },
    /// Write processed images and their augmented variants as PNG.
    ExportImages {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Training config whose `augment` block is used.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ModelInput {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    weights: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
}

enum Failure {
    Usage(String),
    Data(String),
    Model(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Model(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Model(m) => m,
        }
    }
}

type Outcome = Result<(), Failure>;

fn read(path: &Path, fail: fn(String) -> Failure) -> Result<Vec<u8>, Failure> {
    fs::read(path).map_err(|e| fail(format!("cannot read {}: {e}", path.display())))
}

fn write(path: &Path, bytes: &[u8], fail: fn(String) -> Failure) -> Outcome {
    fs::write(path, bytes).map_err(|e| fail(format!("cannot write {}: {e}", path.display())))
}

fn create_dir(dir: &Path) -> Outcome {
    fs::create_dir_all(dir).map_err(|e| Failure::Data(format!("cannot create {}: {e}", dir.display())))
}

fn load_config<T: Default + serde::de::DeserializeOwned>(path: Option<&Path>) -> Result<T, Failure> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let bytes = read(path, Failure::Usage)?;
    serde_json::from_slice(&bytes).map_err(|e| Failure::Usage(format!("config {}: {e}", path.display())))
}

fn load_train_config(path: Option<&Path>) -> Result<TrainConfig, Failure> {
    let cfg: TrainConfig = load_config(path)?;
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(cfg)
}

/// Reads, groups and validates a dataset file.
fn load_data(cli: &Cli, path: &Path) -> Result<TraceDataset, Failure> {
    let bytes = read(path, Failure::Data)?;
    let data = dataset::parse_dataset(&bytes, cli.floor_width, cli.floor_height)
        .map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    let violations = dataset::validate(&data);
    if let Some(first) = violations.first() {
        return Err(Failure::Data(format!(
            "{}: {} violation(s), first: {first}",
            path.display(),
            violations.len()
        )));
    }
    if data.is_empty() {
        return Err(Failure::Data(format!("{}: dataset holds no traces", path.display())));
    }
    Ok(data)
}

fn load_model(path: &Path) -> Result<CnnModel<f32>, Failure> {
    let bytes = read(path, Failure::Model)?;
    let model = load_weights::<f32>(&bytes).map_err(|e| Failure::Model(format!("{}: {e}", path.display())))?;
    if model.arch().input_side != IMAGE_SIDE {
        return Err(Failure::Model(format!(
            "{}: model expects {}px inputs, images are {IMAGE_SIDE}px",
            path.display(),
            model.arch().input_side
        )));
    }
    Ok(model)
}

fn prepare(data: &TraceDataset) -> Result<Vec<pipeline::Sample>, Failure> {
    pipeline::prepare(data).map_err(|e| Failure::Data(e.to_string()))
}

/// Interval start as a file-name stem, e.g. `2024-01-01T14-00`.
fn stem(sample: &pipeline::Sample) -> String {
    dataset::format_timestamp(&sample.interval).replace(':', "-")
}

fn run(cli: &Cli) -> Outcome {
    if cli.threads > 1 {
        log::info!("--threads {}: computation runs on one thread", cli.threads);
    }
    match &cli.command {
        Command::Synth {
            config,
            seed,
            validation,
            out,
        } => {
            let mut cfg: SynthConfig = load_config(config.as_deref())?;
            if let Some(seed) = seed {
                cfg.seed = *seed;
            }
            if *validation {
                cfg.counts = SynthConfig::validation(cfg.seed).counts;
            }
            let data = gen_dataset(&cfg).map_err(|e| Failure::Usage(e.to_string()))?;
            write(out, &dataset::serialize_dataset(&data), Failure::Data)
        }
        Command::Render { data, out_dir } => {
            let samples = prepare(&load_data(cli, data)?)?;
            create_dir(out_dir)?;
            for s in &samples {
                let path = out_dir.join(format!("{}.png", stem(s)));
                s.image
                    .image
                    .write_png(&path)
                    .map_err(|e| Failure::Data(e.to_string()))?;
            }
            Ok(())
        }
        Command::Train {
            data,
            config,
            weights,
            history,
        } => {
            let cfg = load_train_config(config.as_deref())?;
            let data = load_data(cli, data)?;
            let (train_set, test_set) =
                pipeline::split(&data, cfg.split_fraction, cfg.seed).map_err(|e| Failure::Data(e.to_string()))?;
            let (train_set, test_set) = (prepare(&train_set)?, prepare(&test_set)?);
            let model = CnnModel::new(cfg.model.clone(), cfg.seed).map_err(|e| Failure::Usage(e.to_string()))?;
            let (model, hist) =
                pipeline::train(model, &train_set, &test_set, &cfg).map_err(|e| Failure::Model(e.to_string()))?;
            write(weights, &save_weights(&model), Failure::Model)?;
            if let Some(path) = history {
                write(path, export_history(&hist).as_bytes(), Failure::Data)?;
            }
            Ok(())
        }
        Command::Eval { io } => {
            let samples = prepare(&load_data(cli, &io.data)?)?;
            let model = load_model(&io.weights)?;
            let metrics =
                pipeline::evaluate(&model, &samples, io.threshold).map_err(|e| Failure::Model(e.to_string()))?;
            println!("{}", serde_json::to_string(&metrics).expect("metrics serialize"));
            Ok(())
        }
        Command::Predict { io } => {
            let samples = prepare(&load_data(cli, &io.data)?)?;
            let model = load_model(&io.weights)?;
            let images: Vec<_> = samples.iter().map(|s| &s.image.image).collect();
            let probs = pipeline::predict_probabilities(&model, &images).map_err(|e| Failure::Model(e.to_string()))?;
            for (s, p) in samples.iter().zip(probs) {
                let label = if p >= io.threshold { "wandering" } else { "normal" };
                println!("{},{p:.6},{label}", dataset::format_timestamp(&s.interval));
            }
            Ok(())
        }
        Command::ExportImages { data, out_dir, config } => {
            let aug: AugmentConfig = load_train_config(config.as_deref())?.augment;
            let samples = prepare(&load_data(cli, data)?)?;
            let images: Vec<_> = samples.iter().map(|s| s.image.clone()).collect();
            let expanded = augment_set(&images, &aug).map_err(|e| Failure::Usage(e.to_string()))?;
            create_dir(out_dir)?;
            let per = aug.copies_per_image + 1;
            for (i, img) in expanded.iter().enumerate() {
                let path = out_dir.join(format!("{}_{}.png", stem(&samples[i / per]), i % per));
                img.image.write_png(&path).map_err(|e| Failure::Data(e.to_string()))?;
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let first = e.to_string();
            let first = first.lines().next().unwrap_or("invalid arguments");
            eprintln!("wandernet: error: {}", first.trim_start_matches("error: "));
            return ExitCode::from(1);
        }
    };
    env_logger::Builder::new()
        .filter_level(if cli.verbose {
            log::LevelFilter::Info
        } else {
            log::LevelFilter::Warn
        })
        .format_timestamp(None)
        .init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("wandernet: error: {}", f.message().replace('\n', " "));
            ExitCode::from(f.code())
        }
    }
}
