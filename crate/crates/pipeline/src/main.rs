//! `nsneg` command line.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nsneg_core::losses::LossVariant;
use nsneg_core::patch_tile::{PatchAugment, TileConfig};
use nsneg_core::texture_synth::SynthConfig;
use nsneg_core::toy_trainer::{ToyDataConfig, TrainConfig};
use nsneg_pipeline::{
    accuracy_command, analyze_command, generate_command, shape_bias_command, toy_command, FileConfig,
    MethodSelection, PipelineConfig, PipelineError,
};

#[derive(Debug, Parser)]
#[command(name = "nsneg", version, about = "Non-semantic negative generation and analysis")]
struct Cli {
    /// JSON file with defaults for any long flag.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write texture and/or patch negatives for every image under a directory.
    Generate(GenerateArgs),
    /// Cosine-similarity histogram of two row-paired embedding files.
    Analyze(AnalyzeArgs),
    /// Train the toy encoder over an alpha x seed grid.
    Toy(ToyArgs),
    /// Shape bias of cue-conflict prediction records.
    ShapeBias(ShapeBiasArgs),
    /// Per-class (and optionally coarse/finer) accuracy of prediction records.
    Accuracy(AccuracyArgs),
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, value_enum)]
    method: Option<MethodSelection>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    d_min: Option<u32>,
    #[arg(long)]
    d_max: Option<u32>,
    #[arg(long)]
    out_size: Option<u32>,
    #[arg(long)]
    window: Option<u32>,
    #[arg(long)]
    tolerance: Option<f64>,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    #[arg(long)]
    a: Option<PathBuf>,
    #[arg(long)]
    b: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ToyArgs {
    /// Comma-separated alphas, e.g. `0,1,2,3`.
    #[arg(long)]
    alphas: Option<String>,
    /// Comma-separated seeds.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// In-batch standard negatives per step.
    #[arg(long)]
    negatives: Option<usize>,
    #[arg(long)]
    shortcut_dim: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// nce_in, nce_out or byol.
    #[arg(long)]
    loss: Option<LossVariant>,
}

#[derive(Debug, Args)]
struct ShapeBiasArgs {
    /// CSV of `predicted,shape_label,texture_label`.
    #[arg(long)]
    records: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AccuracyArgs {
    /// CSV of `predicted,label`.
    #[arg(long)]
    records: Option<PathBuf>,
    /// CSV of `finer,coarse` class ids.
    #[arg(long)]
    class_map: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn required<T>(cli: Option<T>, file: Option<T>, flag: &str) -> Result<T, PipelineError> {
    cli.or(file)
        .ok_or_else(|| PipelineError::Usage(format!("missing --{flag}")))
}

fn parse_list<T: std::str::FromStr>(text: &str, flag: &str) -> Result<Vec<T>, PipelineError> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|_| PipelineError::Usage(format!("--{flag}: cannot parse {s:?}")))
        })
        .collect()
}

fn generate(args: GenerateArgs, file: &FileConfig) -> Result<(), PipelineError> {
    let input = required(args.input, file.input.clone(), "input")?;
    let output = required(args.output, file.output.clone(), "output")?;
    let method = required(args.method, file.method, "method")?;
    let mut cfg = PipelineConfig::new(input, output, method);
    cfg.global_seed = args.seed.or(file.seed).unwrap_or(0);
    cfg.workers = args.workers.or(file.workers).unwrap_or(1);
    let defaults = TileConfig::default();
    let d_min = args.d_min.or(file.d_min).unwrap_or(defaults.d_min);
    let d_max = args.d_max.or(file.d_max).unwrap_or(defaults.d_max);
    let out_size = args.out_size.or(file.out_size).unwrap_or(defaults.out_size);
    cfg.tile = TileConfig {
        d_min,
        d_max,
        out_size,
        augment: PatchAugment::default_for(d_max),
        crop_mode: Default::default(),
    }
    .validated()
    .map_err(|e| PipelineError::InvalidConfig(e.to_string()))?;
    let window = args.window.or(file.window).unwrap_or(SynthConfig::default().window);
    cfg.synth = SynthConfig::with_window(out_size, window);
    if let Some(tol) = args.tolerance.or(file.tolerance) {
        cfg.synth.tolerance = tol;
    }
    let summary = generate_command(&cfg)?;
    println!(
        "wrote {} images, {} failures, manifest {}",
        summary.written,
        summary.failures,
        summary.manifest.display()
    );
    for e in summary.entries.iter().filter(|e| !e.is_success()) {
        eprintln!("failed {} ({}): {}", e.input, e.method.name(), e.error.as_deref().unwrap_or(""));
    }
    Ok(())
}

fn analyze(args: AnalyzeArgs, file: &FileConfig) -> Result<(), PipelineError> {
    let a = required(args.a, file.a.clone(), "a")?;
    let b = required(args.b, file.b.clone(), "b")?;
    let out = required(args.out, file.out.clone(), "out")?;
    let summary = analyze_command(&a, &b, &out)?;
    println!("mean similarity {:.5} over {} pairs", summary.mean, summary.n);
    Ok(())
}

fn toy(args: ToyArgs, file: &FileConfig) -> Result<(), PipelineError> {
    let alphas = match args.alphas {
        Some(text) => parse_list(&text, "alphas")?,
        None => required(None, file.alphas.clone(), "alphas")?,
    };
    let seeds = match args.seeds {
        Some(text) => parse_list(&text, "seeds")?,
        None => file.seeds.clone().unwrap_or_else(|| vec![0]),
    };
    let out = required(args.out, file.out.clone(), "out")?;
    let data = ToyDataConfig {
        shortcut_dim: args.shortcut_dim.or(file.shortcut_dim).unwrap_or(0),
        ..ToyDataConfig::default()
    };
    let mut base = TrainConfig::with_alpha(0.0, 0);
    if let Some(steps) = args.steps.or(file.steps) {
        base.steps = steps;
    }
    if let Some(n) = args.negatives.or(file.negatives) {
        base.batch_negatives = n;
    }
    if let Some(lr) = args.lr.or(file.lr) {
        base.lr = lr;
    }
    if let Some(variant) = args.loss {
        base.loss.variant = variant;
    }
    let rows = toy_command(&alphas, &seeds, &data, &base, &out)?;
    println!("wrote {} rows to {}", rows.len(), out.display());
    Ok(())
}

fn shape_bias(args: ShapeBiasArgs, file: &FileConfig) -> Result<(), PipelineError> {
    let records = required(args.records, file.records.clone(), "records")?;
    let out = required(args.out, file.out.clone(), "out")?;
    let report = shape_bias_command(&records, &out)?;
    println!("shape bias {:.5} over {} decisions", report.shape_bias, report.shape_decisions + report.texture_decisions);
    Ok(())
}

fn accuracy(args: AccuracyArgs, file: &FileConfig) -> Result<(), PipelineError> {
    let records = required(args.records, file.records.clone(), "records")?;
    let out = required(args.out, file.out.clone(), "out")?;
    let class_map = args.class_map.or(file.class_map.clone());
    let report = accuracy_command(&records, class_map.as_deref(), &out)?;
    if let Some(cf) = report.coarse_finer {
        println!("coarse {:.5} finer {:.5}", cf.coarse, cf.finer);
    }
    println!("{} classes", report.per_class.accuracy.len());
    Ok(())
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let file = match &cli.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    match cli.command {
        Command::Generate(args) => generate(args, &file),
        Command::Analyze(args) => analyze(args, &file),
        Command::Toy(args) => toy(args, &file),
        Command::ShapeBias(args) => shape_bias(args, &file),
        Command::Accuracy(args) => accuracy(args, &file),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
