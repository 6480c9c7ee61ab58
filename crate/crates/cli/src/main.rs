use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use log::info;
use wavfusion::data::{generate_to_dir, Manifest, SynthSpec};
use wavfusion::oracle::{compare, MarginBatch};
use wavfusion::rng::PortableRng;
use wavfusion::tensor::OpKind;
use wavfusion::train::ablate::{ablate, Suite};
use wavfusion::train::gradcheck::{gradcheck, gradcheck_with_fault, tiny_setup, GradcheckOptions};
use wavfusion::train::run::{
    fit_dims, load_model, predictions_to_text, read_config, run_experiment, test_split, write_run, Prediction,
    CHECKPOINT_FILE, CONFIG_FILE, REPORT_FILE,
};
use wavfusion::train::{evaluate, ExperimentConfig};

mod flags;

use flags::ExperimentFlags;

const OUT_DIR_ENV: &str = "WAVFUSION_OUT_DIR";

#[derive(Parser)]
#[command(
    name = "wavfusion",
    version,
    about = "Gated cross-modal fusion for speech emotion recognition"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded synthetic trimodal dataset.
    GenData(GenDataArgs),
    /// Train on a dataset directory and write a run directory.
    Train(TrainArgs),
    /// Evaluate a run directory's checkpoint.
    Eval(EvalArgs),
    /// Run an ablation grid over several seeds.
    Ablate(AblateArgs),
    /// Compare analytic and finite-difference gradients on a tiny model.
    Gradcheck(GradcheckArgs),
    /// Compare the margin loss against an independent implementation.
    OracleMargin(OracleArgs),
}

fn parse_range(s: &str) -> Result<(usize, usize), String> {
    let (lo, hi) = s.split_once(':').unwrap_or((s, s));
    let lo = lo
        .trim()
        .parse()
        .map_err(|_| format!("bad range {s:?}, expected MIN:MAX"))?;
    let hi = hi
        .trim()
        .parse()
        .map_err(|_| format!("bad range {s:?}, expected MIN:MAX"))?;
    Ok((lo, hi))
}

#[derive(clap::Args)]
struct GenDataArgs {
    /// Output directory [default: $WAVFUSION_OUT_DIR/data]
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 6)]
    classes: usize,
    #[arg(long, default_value_t = 50)]
    samples_per_class: usize,
    #[arg(long, default_value_t = 12)]
    audio_dim: usize,
    #[arg(long, default_value_t = 12)]
    text_dim: usize,
    #[arg(long, default_value_t = 8)]
    visual_dim: usize,
    /// Frame count range MIN:MAX
    #[arg(long, default_value = "4:8", value_parser = parse_range)]
    audio_frames: (usize, usize),
    #[arg(long, default_value = "2:5", value_parser = parse_range)]
    text_frames: (usize, usize),
    #[arg(long, default_value = "3:6", value_parser = parse_range)]
    visual_frames: (usize, usize),
    /// Class separation for every modality
    #[arg(long, default_value_t = 1.0)]
    separation: f64,
    #[arg(long)]
    audio_separation: Option<f64>,
    #[arg(long)]
    text_separation: Option<f64>,
    #[arg(long)]
    visual_separation: Option<f64>,
    /// Weight of the latent shared across modalities, in [0, 1]
    #[arg(long, default_value_t = 0.3)]
    correlation: f64,
    #[arg(long, default_value_t = 1.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(clap::Args)]
struct TrainArgs {
    #[command(flatten)]
    experiment: ExperimentFlags,
}

#[derive(clap::Args)]
struct EvalArgs {
    /// Run directory written by `train`
    #[arg(long)]
    run_dir: PathBuf,
    /// Dataset directory [default: the run's data-dir]
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Modality mask to evaluate with [default: the run's]
    #[arg(long)]
    modalities: Option<String>,
    /// Evaluate on the run's test split or on every utterance
    #[arg(long, default_value = "test", value_parser = ["test", "all"])]
    subset: String,
    /// Write per-utterance predictions here
    #[arg(long)]
    predictions: Option<PathBuf>,
}

#[derive(clap::Args)]
struct AblateArgs {
    /// modality, lvc, lambda or layers
    #[arg(long)]
    suite: String,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    seeds: Vec<u64>,
    /// Worker threads [default: available cores]
    #[arg(long)]
    threads: Option<usize>,
    #[command(flatten)]
    experiment: ExperimentFlags,
}

#[derive(clap::Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 1e-4)]
    eps: f64,
    #[arg(long, default_value_t = 1e-3)]
    tolerance: f64,
    /// Scale the Conv1d adjoint by this factor in the analytic pass
    #[arg(long, hide = true)]
    inject_conv_fault: Option<f64>,
    #[command(flatten)]
    experiment: ExperimentFlags,
}

#[derive(clap::Args)]
struct OracleArgs {
    /// Margin batch file: modality <TAB> label <TAB> components
    #[arg(long)]
    batch: Option<PathBuf>,
    /// Number of random batches when no file is given
    #[arg(long, default_value_t = 100)]
    random: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Utterances per random batch (three embeddings each)
    #[arg(long, default_value_t = 4)]
    samples: usize,
    #[arg(long, default_value_t = 3)]
    classes: usize,
    #[arg(long, default_value_t = 8)]
    dim: usize,
    #[arg(long, default_value_t = 0.5)]
    margin: f64,
    #[arg(long, default_value_t = 1e-10)]
    tolerance: f64,
}

fn out_root() -> PathBuf {
    std::env::var_os(OUT_DIR_ENV).map_or_else(|| PathBuf::from("wavfusion-out"), PathBuf::from)
}

fn gen_data(args: GenDataArgs) -> anyhow::Result<ExitCode> {
    let out = args.out_dir.unwrap_or_else(|| out_root().join("data"));
    let spec = SynthSpec {
        classes: args.classes,
        samples_per_class: args.samples_per_class,
        dims: [args.audio_dim, args.text_dim, args.visual_dim],
        lengths: [args.audio_frames, args.text_frames, args.visual_frames],
        separation: [
            args.audio_separation.unwrap_or(args.separation),
            args.text_separation.unwrap_or(args.separation),
            args.visual_separation.unwrap_or(args.separation),
        ],
        correlation: args.correlation,
        noise: args.noise,
        seed: args.seed,
    };
    let samples = generate_to_dir(&spec, &out)?;
    println!("wrote {} utterances to {}", samples.len(), out.display());
    Ok(ExitCode::SUCCESS)
}

fn load_dataset(config: &ExperimentConfig) -> anyhow::Result<Vec<wavfusion::data::UtteranceSample>> {
    let Some(dir) = &config.data_dir else {
        return Err(wavfusion::Error::Config("data-dir is required".into()).into());
    };
    let manifest = Manifest::read(dir)?;
    let samples = manifest.load(dir, config.model.classes)?;
    info!("loaded {} utterances from {}", samples.len(), dir.display());
    Ok(samples)
}

fn train(args: TrainArgs) -> anyhow::Result<ExitCode> {
    let mut config = args.experiment.resolve(ExperimentConfig::default())?;
    let samples = load_dataset(&config)?;
    fit_dims(&mut config, &samples)?;
    let out = config.out_dir.clone().unwrap_or_else(|| out_root().join("run"));
    config.out_dir = Some(out.clone());
    let run = run_experiment(&config, &samples)?;
    write_run(&out, &run).with_context(|| format!("writing run to {}", out.display()))?;
    println!("best-epoch = {}", run.report.best_epoch);
    println!("test-acc = {}", run.report.test.accuracy);
    println!("test-wf1 = {}", run.report.test.weighted_f1);
    println!("report = {}", out.join(REPORT_FILE).display());
    Ok(ExitCode::SUCCESS)
}

fn eval(args: EvalArgs) -> anyhow::Result<ExitCode> {
    let mut config = read_config(&args.run_dir.join(CONFIG_FILE))?;
    if let Some(dir) = args.data_dir {
        config.data_dir = Some(dir);
    }
    let model = load_model(&config, &args.run_dir.join(CHECKPOINT_FILE))?;
    let samples = load_dataset(&config)?;
    let samples = match args.subset.as_str() {
        "all" => samples,
        _ => test_split(&config, &samples)?,
    };
    let mask = match &args.modalities {
        Some(m) => m.parse()?,
        None => config.modalities,
    };
    let e = evaluate(&model, &samples, mask, config.precision)?;
    if let Some(path) = &args.predictions {
        let preds: Vec<Prediction> = samples
            .iter()
            .zip(&e.predictions)
            .map(|(s, &p)| Prediction {
                id: s.id.clone(),
                label: s.label,
                predicted: p,
            })
            .collect();
        std::fs::write(path, predictions_to_text(&preds)).with_context(|| format!("writing {}", path.display()))?;
    }
    println!("modalities = {mask}");
    println!("samples = {}", samples.len());
    println!("test-acc = {}", e.metrics.accuracy);
    println!("test-wf1 = {}", e.metrics.weighted_f1);
    Ok(ExitCode::SUCCESS)
}

fn run_ablate(args: AblateArgs) -> anyhow::Result<ExitCode> {
    let suite: Suite = args.suite.parse()?;
    let mut config = args.experiment.resolve(ExperimentConfig::default())?;
    let samples = load_dataset(&config)?;
    fit_dims(&mut config, &samples)?;
    let threads = args
        .threads
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let table = ablate(suite, &config, &samples, &args.seeds, threads)?;
    let tsv = table.to_tsv();
    let out = config.out_dir.clone().unwrap_or_else(out_root);
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let path = out.join(format!("ablate-{}.tsv", args.suite));
    std::fs::write(&path, &tsv).with_context(|| format!("writing {}", path.display()))?;
    print!("{tsv}");
    info!("table written to {}", path.display());
    Ok(ExitCode::SUCCESS)
}

fn run_gradcheck(args: GradcheckArgs) -> anyhow::Result<ExitCode> {
    let (base, _) = tiny_setup(0);
    let config = args.experiment.resolve(base)?;
    let (_, samples) = tiny_setup(config.seed);
    let options = GradcheckOptions {
        eps: args.eps,
        tolerance: args.tolerance,
        ..GradcheckOptions::default()
    };
    let report = match args.inject_conv_fault {
        Some(f) => gradcheck_with_fault(&config, &samples, &options, OpKind::Conv1d, f)?,
        None => gradcheck(&config, &samples, &options)?,
    };
    print!("{}", report.to_text());
    if report.passed() {
        Ok(ExitCode::SUCCESS)
    } else {
        let worst = report.worst();
        eprintln!(
            "gradcheck failed: {} has relative error {:.3e} > {:e}",
            worst.name, worst.max_rel_error, report.tolerance
        );
        Ok(ExitCode::from(2))
    }
}

fn run_oracle(args: OracleArgs) -> anyhow::Result<ExitCode> {
    let batches = match &args.batch {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            vec![MarginBatch::parse(&text).map_err(|e| e.in_path(path))?]
        }
        None => {
            if args.classes == 0 {
                bail!(wavfusion::Error::Config("classes must be at least 1".into()));
            }
            let mut rng = PortableRng::new(args.seed);
            (0..args.random)
                .map(|_| MarginBatch::random(&mut rng, args.samples, args.classes, args.dim))
                .collect()
        }
    };
    println!("# batch\ttriplets\tproduction\treference\tdifference");
    let mut worst = 0.0f64;
    for (i, b) in batches.iter().enumerate() {
        let c = compare(b, args.margin)?;
        worst = worst.max(c.difference());
        println!(
            "{i}\t{}\t{}\t{}\t{:e}",
            c.triplets,
            c.production,
            c.reference,
            c.difference()
        );
    }
    println!("\nbatches = {}", batches.len());
    println!("max-difference = {worst:e}");
    if worst < args.tolerance {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("margin oracle mismatch: {worst:e} >= {:e}", args.tolerance);
        Ok(ExitCode::from(2))
    }
}

trait InPath {
    fn in_path(self, path: &Path) -> wavfusion::Error;
}

impl InPath for wavfusion::Error {
    fn in_path(self, path: &Path) -> wavfusion::Error {
        wavfusion::Error::File {
            path: path.to_path_buf(),
            source: Box::new(self),
        }
    }
}

fn is_validation(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        c.downcast_ref::<wavfusion::Error>()
            .is_some_and(wavfusion::Error::is_validation)
    })
}

/// Error chain joined by ": ", skipping causes the outer message already
/// spells out.
fn describe(e: &anyhow::Error) -> String {
    let mut out = e.to_string();
    for cause in e.chain().skip(1) {
        let c = cause.to_string();
        if !out.contains(&c) {
            out = format!("{out}: {c}");
        }
    }
    out
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Ablate(a) => run_ablate(a),
        Command::Gradcheck(a) => run_gradcheck(a),
        Command::OracleMargin(a) => run_oracle(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            if is_validation(&e) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
