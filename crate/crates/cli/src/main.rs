//! Command-line front end for replaying generation logs, fitting ensemble
//! weights and producing the experiment curves. All output is a pure
//! function of the inputs and the seed: no timestamps, no machine state,
//! stable iteration orders throughout.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use boinf::adaptive::AdaptiveError;
use boinf::datamodel::{DataError, GenerationDataset};
use boinf::ensemble::{
    bo1_best_model, boinf_accuracy, build_instance, export_lp, max_margin, solve,
    EnsembleData, EnsembleError, MilpSolution, SolveStatus,
};
use boinf::harness::{
    adaptive_curve, answer_domain, curve_csv, fixed_bon_curve, hoeffding_n0, learning_csv,
    simulate_problems, transfer_csv, transfer_eval, weight_learning_curve, ExperimentConfig,
    HarnessError,
};
use boinf::posterior::{PosteriorConfig, PosteriorError};
use boinf::WeightVector;

#[derive(Parser)]
#[command(
    name = "boinf",
    version,
    about = "Weighted-ensemble majority voting with a Bayes-factor stopping rule"
)]
struct Cli {
    /// Worker threads for parallel trials (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Validate a generation log and print a summary.
    IngestCheck(IngestArgs),
    /// Replay the stopping rule once per problem and print each episode.
    Simulate(SimulateArgs),
    /// Fit ensemble weights by exact vote-count optimisation.
    Optimize(OptimizeArgs),
    /// Accuracy and cost curves for fixed and adaptive sampling.
    Curve(CurveArgs),
    /// Vote accuracy of weights trained on growing problem subsets.
    LearnCurve(LearnCurveArgs),
    /// Optimised three-model ensembles versus their best member.
    Transfer(TransferArgs),
    /// Sample-size bound for identifying the plurality answer everywhere.
    Bound(BoundArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Generation log (JSONL with model, problem, answer, optional tokens
    /// and gold). Relative paths also resolve under $BOINF_DATA_DIR.
    #[arg(long)]
    data: PathBuf,
    /// Optional problems file (JSONL with problem, gold, optional domain).
    #[arg(long)]
    problems: Option<PathBuf>,
    /// Drop answers carrying the unparseable marker before any analysis.
    #[arg(long)]
    drop_unparseable: bool,
}

#[derive(Args)]
struct ModelArgs {
    /// Comma-separated model subset (default: every model in the log).
    #[arg(long, value_delimiter = ',')]
    models: Vec<String>,
    /// Comma-separated ensemble weights matching --models. Default uniform.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    weights: Vec<f64>,
}

#[derive(Args)]
struct StopArgs {
    /// Dirichlet process concentration of the stopping posterior.
    #[arg(long, default_value_t = 0.3)]
    alpha: f64,
    /// Monte-Carlo samples per posterior evaluation.
    #[arg(long, default_value_t = 1000)]
    mc_samples: u32,
    /// Hard cap on generations per problem.
    #[arg(long, default_value_t = 100)]
    n_max: u32,
    /// Master seed; every random stream is derived from it.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SolverArgs {
    /// Bisection tolerance for the largest surviving margin.
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    /// Branch-and-bound node budget per solve.
    #[arg(long, default_value_t = 200_000)]
    node_budget: u64,
}

#[derive(Args)]
struct IngestArgs {
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    models: ModelArgs,
    #[command(flatten)]
    stop: StopArgs,
    /// Stopping threshold for the evidence; "inf" never stops early.
    #[arg(long, default_value = "30", value_parser = parse_threshold)]
    b: f64,
    /// Print the episodes as JSON instead of text rows.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct OptimizeArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    models: ModelArgs,
    #[command(flatten)]
    solver: SolverArgs,
    /// Solve at this fixed margin instead of searching the largest one.
    #[arg(long)]
    xi: Option<f64>,
    /// Write the fitted weights as JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the integer program in LP format here.
    #[arg(long)]
    emit_lp: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CurveKind {
    Fixed,
    Adaptive,
    Both,
}

#[derive(Args)]
struct CurveArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    models: ModelArgs,
    #[command(flatten)]
    stop: StopArgs,
    #[arg(long, value_enum, default_value_t = CurveKind::Both)]
    kind: CurveKind,
    /// Replay trials per point.
    #[arg(long, default_value_t = 100)]
    trials: u32,
    /// Sample sizes for the fixed curve.
    #[arg(long, value_delimiter = ',', default_value = "1,2,5,10,20,50,100")]
    n_grid: Vec<u32>,
    /// Thresholds for the adaptive curve; "inf" allowed.
    #[arg(long, value_delimiter = ',', value_parser = parse_threshold,
          default_value = "2,3,5,7,10,30,100,300")]
    b_grid: Vec<f64>,
    /// Directory the CSV files are written to.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct LearnCurveArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    models: ModelArgs,
    #[command(flatten)]
    solver: SolverArgs,
    /// Training-set sizes; 0 is the uniform-weights baseline.
    #[arg(long, value_delimiter = ',', required = true)]
    sizes: Vec<usize>,
    /// Random training subsets drawn per size.
    #[arg(long, default_value_t = 10)]
    reps: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct TransferArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    models: ModelArgs,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct BoundArgs {
    /// Total failure probability.
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    /// Plurality-to-runner-up probability gap.
    #[arg(long, default_value_t = 0.2)]
    gap: f64,
    /// Number of answer categories.
    #[arg(long, default_value_t = 3)]
    s: u32,
}

enum CliError {
    Validation(String),
    Runtime(String),
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<PosteriorError> for CliError {
    fn from(e: PosteriorError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<AdaptiveError> for CliError {
    fn from(e: AdaptiveError) -> Self {
        match e {
            AdaptiveError::SourceFailed { .. } => CliError::Runtime(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<EnsembleError> for CliError {
    fn from(e: EnsembleError) -> Self {
        match e {
            EnsembleError::Lp(_) | EnsembleError::Io(_) => CliError::Runtime(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::BadConfig(_) => CliError::Validation(e.to_string()),
            HarnessError::Adaptive(a) => a.into(),
            HarnessError::Data(d) => d.into(),
            HarnessError::Ensemble(s) => s.into(),
            HarnessError::Posterior(p) => p.into(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

fn parse_threshold(s: &str) -> Result<f64, String> {
    let b = if s.eq_ignore_ascii_case("inf") || s.eq_ignore_ascii_case("infinity") {
        f64::INFINITY
    } else {
        s.parse::<f64>().map_err(|e| e.to_string())?
    };
    if b > 0.0 {
        Ok(b)
    } else {
        Err(format!("threshold must be positive, got {b}"))
    }
}

fn main() {
    // Die quietly when stdout is a closed pipe, like any other filter.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Some(jobs) = cli.jobs {
        // Ignore failure: the pool can only be set once per process.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global();
    }
    match run(cli.cmd) {
        Ok(()) => {}
        Err(CliError::Validation(msg)) => {
            eprintln!("error: {msg}");
            std::process::exit(1);
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            std::process::exit(2);
        }
    }
}

fn run(cmd: Cmd) -> Result<(), CliError> {
    match cmd {
        Cmd::IngestCheck(a) => ingest_check(a),
        Cmd::Simulate(a) => simulate(a),
        Cmd::Optimize(a) => optimize(a),
        Cmd::Curve(a) => curve(a),
        Cmd::LearnCurve(a) => learn_curve(a),
        Cmd::Transfer(a) => transfer(a),
        Cmd::Bound(a) => bound(a),
    }
}

/// Missing relative paths fall back to $BOINF_DATA_DIR.
fn resolve_path(p: &Path) -> PathBuf {
    if !p.exists() && p.is_relative() {
        if let Ok(dir) = std::env::var("BOINF_DATA_DIR") {
            let alt = Path::new(&dir).join(p);
            if alt.exists() {
                return alt;
            }
        }
    }
    p.to_path_buf()
}

fn load(args: &DataArgs) -> Result<GenerationDataset, CliError> {
    let data = resolve_path(&args.data);
    let problems = args.problems.as_ref().map(|p| resolve_path(p));
    let ds = GenerationDataset::load_with_problems(&data, problems.as_deref())?;
    Ok(if args.drop_unparseable {
        ds.without_unparseable()
    } else {
        ds
    })
}

fn pick_models(ds: &GenerationDataset, requested: &[String]) -> Result<Vec<String>, CliError> {
    if requested.is_empty() {
        return Ok(ds.models().to_vec());
    }
    for m in requested {
        if !ds.models().contains(m) {
            return Err(CliError::Validation(format!(
                "model {m:?} is not in the log; available: {}",
                ds.models().join(", ")
            )));
        }
    }
    Ok(requested.to_vec())
}

fn pick_weights(models: &[String], weights: &[f64]) -> Result<WeightVector, CliError> {
    if weights.is_empty() {
        return Ok(WeightVector::uniform(models.len()));
    }
    if weights.len() != models.len() {
        return Err(CliError::Validation(format!(
            "{} weights for {} models",
            weights.len(),
            models.len()
        )));
    }
    Ok(WeightVector::new(weights.to_vec())?)
}

fn file_tag(data: &Path, models: &[String]) -> String {
    let stem = data
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "data".into());
    format!("{stem}_{}", models.join("+"))
}

fn write_out(path: &Path, content: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    std::fs::write(path, content)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn ingest_check(args: IngestArgs) -> Result<(), CliError> {
    let ds = load(&args.data)?;
    let report = ds.report();
    println!("lines: {}", report.lines);
    println!("records: {}", report.records);
    println!("records missing tokens: {}", report.missing_tokens);
    println!("models ({}): {}", ds.models().len(), ds.models().join(", "));
    println!("problems: {}", ds.problems().len());
    println!("distinct answers: {}", answer_domain(&ds).len());
    let mut unparseable = 0usize;
    let mut min_per_cell = usize::MAX;
    for spec in ds.problems() {
        for m in ds.models() {
            let recs = ds.records_for(m, &spec.id)?;
            min_per_cell = min_per_cell.min(recs.len());
            unparseable += recs.iter().filter(|(a, _)| a.is_unparseable()).count();
        }
    }
    println!("unparseable answers: {unparseable}");
    println!("fewest records per model and problem: {min_per_cell}");
    println!("ok");
    Ok(())
}

fn simulate(args: SimulateArgs) -> Result<(), CliError> {
    let ds = load(&args.data)?;
    let models = pick_models(&ds, &args.models.models)?;
    let w = pick_weights(&models, &args.models.weights)?;
    let posterior = PosteriorConfig::new(args.stop.alpha, args.stop.mc_samples, args.stop.seed)?;
    let rows = simulate_problems(
        &ds,
        &models,
        &w,
        args.b,
        args.stop.n_max,
        posterior,
        args.stop.seed,
    )?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&rows)?);
        return Ok(());
    }
    let mut correct = 0u32;
    let mut samples = 0u64;
    let mut tokens = 0u64;
    for r in &rows {
        println!(
            "{}: answer={} correct={} n={} tokens={} bf={} stopped_by={}",
            r.problem,
            r.answer,
            r.correct,
            r.n_used,
            r.tokens_used,
            r.bayes_factor,
            match r.stopped_by {
                boinf::posterior::StopReason::BayesFactor => "bayes_factor",
                boinf::posterior::StopReason::Budget => "budget",
            }
        );
        correct += u32::from(r.correct);
        samples += u64::from(r.n_used);
        tokens += r.tokens_used;
    }
    let q = rows.len() as f64;
    println!(
        "accuracy: {} ({}/{})",
        f64::from(correct) / q,
        correct,
        rows.len()
    );
    println!("mean samples: {}", samples as f64 / q);
    println!("mean tokens: {}", tokens as f64 / q);
    Ok(())
}

#[derive(serde::Serialize)]
struct WeightsOut<'a> {
    models: &'a [String],
    weights: &'a [f64],
    objective: u32,
    total_problems: usize,
    margin: f64,
    status: SolveStatus,
    nodes: u64,
    selected_problems: &'a [String],
}

fn optimize(args: OptimizeArgs) -> Result<(), CliError> {
    let ds = load(&args.data)?;
    let models = pick_models(&ds, &args.models.models)?;
    if !args.models.weights.is_empty() {
        return Err(CliError::Validation(
            "optimize fits the weights; --weights is not accepted".into(),
        ));
    }
    let data = EnsembleData::from_dataset(&ds, &models)?;
    let inst = build_instance(&data);
    let sol: MilpSolution = match args.xi {
        Some(xi) => solve(&inst, xi, args.solver.node_budget)?,
        None => max_margin(&inst, args.solver.tol, args.solver.node_budget)?,
    };
    if sol.status != SolveStatus::Optimal {
        return Err(CliError::Runtime(format!(
            "node budget {} exhausted before the search finished",
            args.solver.node_budget
        )));
    }
    let (best, accs) = bo1_best_model(&data);
    for (m, acc) in models.iter().zip(&accs) {
        println!("single-draw accuracy {m}: {acc}");
    }
    println!("best single model: {}", models[best]);
    println!(
        "weights: {}",
        sol.w
            .as_slice()
            .iter()
            .zip(&models)
            .map(|(v, m)| format!("{m}={v}"))
            .collect::<Vec<_>>()
            .join(" ")
    );
    println!(
        "problems won in the vote limit: {}/{}",
        sol.objective,
        inst.problems.len()
    );
    println!("margin: {}", sol.margin);
    println!("nodes: {}", sol.nodes);
    println!(
        "vote-limit accuracy at fitted weights: {}",
        boinf_accuracy(&data, &sol.w)?
    );
    if let Some(out) = &args.out {
        let payload = WeightsOut {
            models: &models,
            weights: sol.w.as_slice(),
            objective: sol.objective,
            total_problems: inst.problems.len(),
            margin: sol.margin,
            status: sol.status,
            nodes: sol.nodes,
            selected_problems: &sol.selected,
        };
        write_out(out, &format!("{}\n", serde_json::to_string_pretty(&payload)?))?;
    }
    if let Some(lp_path) = &args.emit_lp {
        let mut buf = Vec::new();
        export_lp(&inst, args.xi.unwrap_or(sol.margin), &mut buf)?;
        write_out(lp_path, &String::from_utf8(buf).expect("LP text is UTF-8"))?;
    }
    Ok(())
}

fn curve(args: CurveArgs) -> Result<(), CliError> {
    let ds = load(&args.data)?;
    let models = pick_models(&ds, &args.models.models)?;
    let w = pick_weights(&models, &args.models.weights)?;
    let mut cfg = ExperimentConfig::new(args.stop.seed);
    cfg.trials = args.trials;
    cfg.n_max = args.stop.n_max;
    cfg.b_grid = args.b_grid.clone();
    cfg.posterior = PosteriorConfig::new(args.stop.alpha, args.stop.mc_samples, args.stop.seed)?;
    let tag = file_tag(&args.data.data, &models);
    if matches!(args.kind, CurveKind::Fixed | CurveKind::Both) {
        let points = fixed_bon_curve(&ds, &models, &w, &args.n_grid, &cfg)?;
        let csv = curve_csv(&points);
        print!("{csv}");
        write_out(&args.out_dir.join(format!("curve_fixed_{tag}.csv")), &csv)?;
    }
    if matches!(args.kind, CurveKind::Adaptive | CurveKind::Both) {
        let points = adaptive_curve(&ds, &models, &w, &cfg)?;
        let csv = curve_csv(&points);
        print!("{csv}");
        write_out(&args.out_dir.join(format!("curve_adaptive_{tag}.csv")), &csv)?;
    }
    Ok(())
}

fn learn_curve(args: LearnCurveArgs) -> Result<(), CliError> {
    let ds = load(&args.data)?;
    let models = pick_models(&ds, &args.models.models)?;
    if !args.models.weights.is_empty() {
        return Err(CliError::Validation(
            "learn-curve fits the weights; --weights is not accepted".into(),
        ));
    }
    let data = EnsembleData::from_dataset(&ds, &models)?;
    let points = weight_learning_curve(
        &data,
        &args.sizes,
        args.reps,
        args.solver.tol,
        args.solver.node_budget,
        args.seed,
    )?;
    let csv = learning_csv(&points);
    print!("{csv}");
    let tag = file_tag(&args.data.data, &models);
    write_out(&args.out_dir.join(format!("learn_{tag}.csv")), &csv)?;
    Ok(())
}

fn transfer(args: TransferArgs) -> Result<(), CliError> {
    let ds = load(&args.data)?;
    let models = pick_models(&ds, &args.models.models)?;
    if !args.models.weights.is_empty() {
        return Err(CliError::Validation(
            "transfer fits the weights; --weights is not accepted".into(),
        ));
    }
    let data = EnsembleData::from_dataset(&ds, &models)?;
    let rows = transfer_eval(&data, args.solver.tol, args.solver.node_budget)?;
    let csv = transfer_csv(&rows);
    print!("{csv}");
    let improved = rows.iter().filter(|r| r.improved).count();
    println!("triples at or above their best member: {improved}/{}", rows.len());
    let tag = file_tag(&args.data.data, &models);
    write_out(&args.out_dir.join(format!("transfer_{tag}.csv")), &csv)?;
    Ok(())
}

fn bound(args: BoundArgs) -> Result<(), CliError> {
    let n0 = hoeffding_n0(args.delta, args.gap, args.s)?;
    println!(
        "samples per problem so every plurality is identified: {n0} (delta={}, gap={}, categories={})",
        args.delta, args.gap, args.s
    );
    Ok(())
}
