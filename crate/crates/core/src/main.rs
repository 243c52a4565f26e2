use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::builder::NonEmptyStringValueParser;
use clap::{Args, Parser, Subcommand};

use edgelit::cli::{
    evaluate_sets, simulate, sweep_thickness, train_model, train_params, EvalSpec, ExperimentPlan,
    Overrides, TrainSpec, PAIR_MOUNT_HEIGHT_MM, PAIR_SEPARATION_MM,
};
use edgelit::error::{Error, Result};
use edgelit::learning::TwoStageModel;
use edgelit::protocols::Dataset;
use edgelit::seed::Seed;
use edgelit::sensor::{SensorConfig, TraceCache};
use edgelit::surface::IndenterState;

#[derive(Parser)]
#[command(name = "edgelit", version, about = "Edge-lit elastomer tactile pad: simulate, train, evaluate")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Record the datasets of an experiment plan.
    Simulate(SimulateArgs),
    /// Fit the touch classifier and position/depth regressor.
    Train(TrainArgs),
    /// Accuracy tables and arrow exports for test datasets.
    Eval(EvalArgs),
    /// Opposed-pair signal against depth for several slab thicknesses.
    SweepThickness(SweepArgs),
    /// Touch reports for every sample of a dataset, one JSON object per line.
    Predict(PredictArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Plan file; the built-in replication preset when omitted.
    #[arg(long)]
    plan: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Ambient light level applied to every dataset.
    #[arg(long)]
    ambient: Option<f64>,
    #[arg(long)]
    rays_per_state: Option<usize>,
    /// Reading noise applied to every dataset.
    #[arg(long)]
    noise_sigma: Option<f64>,
    /// Write the plan actually run and stop.
    #[arg(long)]
    print_plan: bool,
    /// Write per-ray records of one illumination state as JSON lines.
    #[arg(long)]
    dump_paths: Option<PathBuf>,
    /// Indenter "x,y,depth" (mm) for --dump-paths.
    #[arg(long, value_parser = parse_point, default_value = "0,0,1", allow_hyphen_values = true)]
    dump_at_mm: [f64; 3],
    #[arg(long, default_value_t = 0)]
    dump_emitter: usize,
}

#[derive(Args)]
struct TrainArgs {
    /// Training dataset files.
    #[arg(required = true)]
    datasets: Vec<PathBuf>,
    #[arg(long, default_value = "model.json")]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fixed regularization; skips the grid search together with --gamma.
    #[arg(long, requires = "gamma")]
    lambda: Option<f64>,
    #[arg(long, requires = "lambda")]
    gamma: Option<f64>,
    #[arg(long)]
    svm_c: Option<f64>,
    #[arg(long)]
    lambda_points: Option<usize>,
    #[arg(long)]
    gamma_points: Option<usize>,
    #[arg(long)]
    max_regression_samples: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, value_parser = NonEmptyStringValueParser::new())]
    model: String,
    /// Test dataset files; each gets its own tables, named after the file.
    #[arg(required = true)]
    datasets: Vec<PathBuf>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [7.0, 8.0, 12.0], allow_negative_numbers = true)]
    thickness_mm: Vec<f64>,
    #[arg(long, default_value_t = 6.0)]
    depth_max_mm: f64,
    #[arg(long, default_value_t = 0.1)]
    depth_step_mm: f64,
    #[arg(long, default_value_t = PAIR_SEPARATION_MM)]
    separation_mm: f64,
    #[arg(long, default_value_t = PAIR_MOUNT_HEIGHT_MM)]
    mount_height_mm: f64,
    /// Sensor description supplying optics and surface parameters.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    rays_per_state: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "thickness")]
    out: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long, value_parser = NonEmptyStringValueParser::new())]
    model: String,
    dataset: PathBuf,
    /// Output file; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_point(s: &str) -> std::result::Result<[f64; 3], String> {
    let v = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("{t:?}: {e}")))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    <[f64; 3]>::try_from(v).map_err(|v| format!("expected x,y,depth, got {} numbers", v.len()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::SweepThickness(a) => cmd_sweep(a),
        Command::Predict(a) => cmd_predict(a),
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn cmd_simulate(a: SimulateArgs) -> Result<()> {
    let mut plan = match &a.plan {
        Some(p) => ExperimentPlan::load(p)?,
        None => ExperimentPlan::replication(),
    };
    plan.apply(&Overrides {
        seed: a.seed,
        output_dir: a.out,
        ambient_level: a.ambient,
        rays_per_state: a.rays_per_state,
        noise_sigma: a.noise_sigma,
    });
    plan.validate()?;
    if a.print_plan {
        print!("{}", plan.to_toml());
        return Ok(());
    }
    if let Some(dump) = &a.dump_paths {
        let cache = TraceCache::new(&plan.sensor()?, plan.transport_seed())?;
        let [x, y, d] = a.dump_at_mm;
        let (_, paths) = cache.paths(a.dump_emitter, &IndenterState::new(x, y, d))?;
        let mut text = String::new();
        for p in paths {
            text.push_str(&serde_json::to_string(&p).expect("path record serializes"));
            text.push('\n');
        }
        write_file(dump, &text)?;
    }
    for (name, ds) in simulate(&plan)? {
        eprintln!("{name}: {} samples, config {}", ds.samples.len(), ds.meta.config_hash);
    }
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let sets = a.datasets.iter().map(|p| Dataset::load(p)).collect::<Result<Vec<_>>>()?;
    let refs: Vec<&Dataset> = sets.iter().collect();
    let defaults = TrainSpec::default();
    let spec = TrainSpec {
        svm_c: a.svm_c.unwrap_or(defaults.svm_c),
        lambda: a.lambda,
        gamma: a.gamma,
        lambda_points: a.lambda_points.unwrap_or(defaults.lambda_points),
        gamma_points: a.gamma_points.unwrap_or(defaults.gamma_points),
        max_regression_samples: a.max_regression_samples.unwrap_or(defaults.max_regression_samples),
        ..defaults
    };
    let model = train_model(&refs, &train_params(&spec, a.seed), &a.out)?;
    eprintln!(
        "lambda {} gamma {} (grid search: {})",
        model.report.lambda, model.report.gamma, model.report.grid_searched
    );
    Ok(())
}

fn dataset_name(p: &Path) -> String {
    p.file_stem().map_or_else(|| "dataset".into(), |s| s.to_string_lossy().into_owned())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let model = TwoStageModel::load(Path::new(&a.model))?;
    let sets = a
        .datasets
        .iter()
        .map(|p| Ok((dataset_name(p), Dataset::load(p)?)))
        .collect::<Result<Vec<_>>>()?;
    let tables = evaluate_sets(&model, &sets, &EvalSpec::default(), &a.out)?;
    for (name, rows) in tables {
        println!("{}", edgelit::evaluation::to_text(&name, &rows));
    }
    Ok(())
}

fn cmd_sweep(a: SweepArgs) -> Result<()> {
    let mut sensor = match &a.config {
        Some(p) => SensorConfig::load(p)?,
        None => SensorConfig::default(),
    };
    if let Some(r) = a.rays_per_state {
        sensor.rays_per_state = r;
    }
    if !(a.depth_step_mm > 0.0 && a.depth_max_mm >= 0.0) {
        return Err(Error::InvalidInput("depth step must be positive and depth max non-negative".into()));
    }
    let steps = (a.depth_max_mm / a.depth_step_mm + 1e-9).floor() as usize;
    let depths: Vec<f64> = (0..=steps).map(|k| k as f64 * a.depth_step_mm).collect();
    let series = sweep_thickness(
        &sensor,
        &a.thickness_mm,
        &depths,
        a.separation_mm,
        a.mount_height_mm,
        Seed(a.seed),
        Some(&a.out),
    )?;
    for s in series {
        match s.deadband {
            Some(b) => println!("{} mm: deadband {:.1}..{:.1} mm", s.thickness_mm, b.start, b.end),
            None => println!("{} mm: no deadband", s.thickness_mm),
        }
    }
    Ok(())
}

fn cmd_predict(a: PredictArgs) -> Result<()> {
    let model = TwoStageModel::load(Path::new(&a.model))?;
    let ds = Dataset::load(&a.dataset)?;
    if ds.meta.config_hash != model.config_hash {
        return Err(Error::HashMismatch {
            expected: model.config_hash,
            found: ds.meta.config_hash,
        });
    }
    let mut text = String::new();
    for s in &ds.samples {
        text.push_str(&serde_json::to_string(&model.predict(&s.frame)).expect("report serializes"));
        text.push('\n');
    }
    match &a.out {
        Some(p) => write_file(p, &text),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|source| Error::Io {
                path: "<stdout>".into(),
                source,
            }),
    }
}
