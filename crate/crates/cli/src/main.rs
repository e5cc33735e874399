use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use serde_json::json;

use mvbound::bounds::{bennett_surface, bennett_surface_csv};
use mvbound::dataio::{
    read_dataset, read_prediction_table, stratified_split, synthetic_dataset, write_libsvm,
    write_prediction_table, SyntheticConfig,
};
use mvbound::ensemble::{train_bagged, BaggingConfig, MajorityVote, TreeConfig};
use mvbound::grids::GridConfig;
use mvbound::lossstats::LossStats;
use mvbound::oracle::{ratio_surface, surface_csv};
use mvbound::pipeline::{evaluate, EvalConfig, EvalReport};
use mvbound::{Error, Result};

/// PAC-Bayesian bounds for weighted majority votes.
#[derive(Parser, Debug)]
#[command(name = "mvbound", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a bagged tree ensemble and write its out-of-bag and test prediction tables.
    Train(TrainArgs),
    /// Evaluate FO, TND, CμTND and COTND at uniform and optimized weights.
    Bounds(BoundsArgs),
    /// Oracle ratio surface CSV (g, t, ratio).
    OracleSurface(OracleArgs),
    /// Bennett/Bernstein ratio surface CSV.
    BennettSurface(BennettArgs),
    /// Write the synthetic two-Gaussian dataset in LIBSVM format.
    Synth(SynthArgs),
}

#[derive(Args, Debug, Clone)]
struct LearnerArgs {
    /// Number of trees.
    #[arg(long, default_value_t = 20)]
    hypotheses: usize,
    #[arg(long, default_value_t = 3)]
    depth: usize,
    /// Features sampled per split.
    #[arg(long, default_value_t = 1)]
    features_per_split: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Held-out fraction for the test split.
    #[arg(long, default_value_t = 0.2)]
    test_fraction: f64,
}

impl LearnerArgs {
    fn bagging(&self) -> BaggingConfig {
        BaggingConfig {
            n_hypotheses: self.hypotheses,
            tree: TreeConfig {
                max_depth: self.depth,
                features_per_split: self.features_per_split,
                ..Default::default()
            },
            bootstrap_fraction: 1.0,
            seed: self.seed,
        }
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// LIBSVM or dense CSV dataset.
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    learner: LearnerArgs,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct BoundsArgs {
    /// Dataset to split, bag and evaluate.
    #[arg(long, conflicts_with = "table", required_unless_present = "table")]
    data: Option<PathBuf>,
    /// Validation prediction table (instead of --data).
    #[arg(long)]
    table: Option<PathBuf>,
    /// Test prediction table for majority-vote losses.
    #[arg(long, requires = "table")]
    test_table: Option<PathBuf>,
    #[command(flatten)]
    learner: LearnerArgs,
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    #[arg(long, default_value_t = 200)]
    mu_grid_size: usize,
    #[arg(long, default_value_t = 1.05)]
    c1: f64,
    #[arg(long, default_value_t = 1.05)]
    c2: f64,
    /// Output directory for report.json and traces; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct OracleArgs {
    /// Points per unit of g and t over [0, 1/2).
    #[arg(long, default_value_t = 400)]
    resolution: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BennettArgs {
    /// Sample sizes, one surface each.
    #[arg(long = "n", value_delimiter = ',', default_values_t = [1000usize, 10000])]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 5.0)]
    kl: f64,
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    #[arg(long, default_value_t = 100)]
    resolution: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value_t = 3000)]
    points: usize,
    #[arg(long, default_value_t = 6)]
    features: usize,
    #[arg(long, default_value_t = 2021)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn create_parent(path: &Path) -> Result<()> {
    match path.parent().filter(|d| !d.as_os_str().is_empty()) {
        Some(dir) => create_dir(dir),
        None => Ok(()),
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => {
            create_parent(p)?;
            write(p, text)
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn train(args: &TrainArgs) -> Result<()> {
    let data = read_dataset(&args.data)?;
    let (tr, te) = stratified_split(&data, args.learner.test_fraction, args.learner.seed)?;
    let ens = train_bagged(&tr, &args.learner.bagging())?;
    let test = ens.predict_table(&te)?;
    create_dir(&args.out)?;
    write_prediction_table(&ens.table, args.out.join("oob.table"))?;
    write_prediction_table(&test, args.out.join("test.table"))?;
    let stats = LossStats::from_table(&ens.table)?;
    let h = ens.n_hypotheses();
    let summary = json!({
        "n_train": tr.len(),
        "n_test": te.len(),
        "n_hypotheses": h,
        "oob_sizes": stats.validation_sizes(),
        "oob_losses": stats.gibbs(),
        "oob_gibbs_uniform": stats.gibbs_expectation(&vec![1.0 / h as f64; h]),
        "test_mv_uniform": MajorityVote::uniform(h).test_loss(&test)?,
        "config": args.learner.bagging(),
    });
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    write(&args.out.join("summary.json"), &format!("{text}\n"))?;
    println!("{text}");
    Ok(())
}

fn bounds(args: &BoundsArgs) -> Result<()> {
    if !(args.delta > 0.0 && args.delta < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "--delta must lie in (0, 1), got {}",
            args.delta
        )));
    }
    for (flag, c) in [("--c1", args.c1), ("--c2", args.c2)] {
        if !(c > 1.0 && c.is_finite()) {
            return Err(Error::InvalidArgument(format!("{flag} must be > 1, got {c}")));
        }
    }
    let cfg = EvalConfig {
        delta: args.delta,
        grid: GridConfig {
            k_mu: args.mu_grid_size,
            c1: args.c1,
            c2: args.c2,
        },
        ..Default::default()
    };
    let report: EvalReport = match (&args.data, &args.table) {
        (Some(path), _) => {
            let data = read_dataset(path)?;
            let (tr, te) = stratified_split(&data, args.learner.test_fraction, args.learner.seed)?;
            let ens = train_bagged(&tr, &args.learner.bagging())?;
            let test = ens.predict_table(&te)?;
            evaluate(&ens.table, Some(&test), &cfg)?
        }
        (None, Some(path)) => {
            let oob = read_prediction_table(path)?;
            let test = args.test_table.as_ref().map(read_prediction_table).transpose()?;
            evaluate(&oob, test.as_ref(), &cfg)?
        }
        (None, None) => unreachable!("clap requires --data or --table"),
    };
    let text = format!("{}\n", report.without_traces().to_json());
    match &args.out {
        Some(dir) => {
            create_dir(dir)?;
            write(&dir.join("report.json"), &text)?;
            for e in &report.entries {
                if let Some(trace) = &e.trace {
                    let name = format!("trace_{}.jsonl", e.bound.to_lowercase());
                    write(&dir.join(name), &trace.to_jsonl())?;
                }
            }
            info!("wrote {}", dir.join("report.json").display());
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn bennett(args: &BennettArgs) -> Result<()> {
    if !(args.delta > 0.0 && args.delta < 1.0) || args.kl.is_nan() || args.kl < 0.0 || args.resolution == 0 {
        return Err(Error::InvalidArgument(
            "need delta in (0, 1), kl >= 0 and a positive resolution".into(),
        ));
    }
    let mut text = String::new();
    for (i, &n) in args.sizes.iter().enumerate() {
        let csv = bennett_surface_csv(&bennett_surface(n, args.kl, args.delta, args.resolution)?);
        // One header for all sizes; the n column tells them apart.
        let body = if i == 0 {
            csv.as_str()
        } else {
            csv.split_once('\n').map_or("", |(_, b)| b)
        };
        text.push_str(body);
    }
    emit(args.out.as_deref(), &text)
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Train(a) => train(a),
        Command::Bounds(a) => bounds(a),
        Command::OracleSurface(a) => {
            if a.resolution == 0 {
                return Err(Error::InvalidArgument("resolution must be positive".into()));
            }
            emit(a.out.as_deref(), &surface_csv(&ratio_surface(a.resolution)))
        }
        Command::BennettSurface(a) => bennett(a),
        Command::Synth(a) => {
            let d = synthetic_dataset(&SyntheticConfig {
                n_points: a.points,
                n_features: a.features,
                seed: a.seed,
                ..Default::default()
            })?;
            create_parent(&a.out)?;
            write_libsvm(&d, &a.out)
        }
    }
}

fn configure_threads() -> std::result::Result<(), String> {
    let Ok(v) = std::env::var("MVBOUND_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("MVBOUND_THREADS must be a positive integer, got {v:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_input_error() { 2 } else { 3 })
        }
    }
}
