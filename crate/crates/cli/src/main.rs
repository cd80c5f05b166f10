//! `metaimpact` command-line tool.
//!
//! Exit status: 0 on success, 1 on bad input or configuration, 2 when an
//! internal invariant fails.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use metaimpact::distributions::{
    empirical_histogram, estimate_beta, write_beta_report, BetaMethod, Binning, DistError,
};
use metaimpact::farmer::{FarmerError, FarmerParams, ImpactSchedule, LengthSupport};
use metaimpact::impact::{
    compute_paths, fair_pricing_check, fit_power_law_with, impact_dynamics, permanent_impact,
    square_root_analysis, temporary_impact, write_curve_csv, write_duration_buckets_csv,
    write_fair_pricing_csv, write_fits_csv, write_sqrt_scatter_csv, write_statistics_csv,
    DynamicsOptions, FitMethod, ImpactError, RELAXATION_GRID, SQRT_BUCKETS,
};
use metaimpact::ingestion::{parse_market_tape, parse_order_log, IngestError, MarketTapes, RejectionReport};
use metaimpact::reconstruction::{
    enrich_all, filter_min_length, reconstruct_with, write_metaorder_summary, ReconstructError,
    ReconstructOptions,
};
use metaimpact::synthetic::{generate_corpus, GeneratorConfig, SyntheticError};
use metaimpact::{Metaorder, Phase, TradingCalendar};

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser, Debug)]
#[command(name = "metaimpact", version, about = "Metaorder reconstruction and market-impact analysis")]
struct Cli {
    /// Directory for output files.
    #[arg(long, global = true, env = "METAIMPACT_OUT_DIR", default_value = ".")]
    out_dir: PathBuf,
    /// IANA time zone that defines trading days.
    #[arg(long, global = true, default_value = "Europe/Paris")]
    timezone: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Group fills into metaorders and write a summary.
    Reconstruct {
        #[command(flatten)]
        input: Input,
    },
    /// Impact curves, length distributions and β estimates.
    Analyze {
        #[command(flatten)]
        input: Input,
        /// Execution-phase buckets.
        #[arg(long, default_value_t = 100)]
        buckets: usize,
        /// Relaxation-phase buckets.
        #[arg(long, default_value_t = RELAXATION_GRID)]
        relax_buckets: usize,
        /// Relaxation sampling instants per metaorder.
        #[arg(long, default_value_t = RELAXATION_GRID)]
        grid: usize,
        #[arg(long, value_enum, default_value_t = Fit::Log)]
        fit: Fit,
    },
    /// Write a synthetic order log, tape and ground-truth sidecar.
    Simulate(SimulateArgs),
    /// Tabulate the exact impact schedule.
    FarmerCurves {
        #[arg(long, default_value_t = 1.5)]
        beta: f64,
        #[arg(long, default_value_t = 1000)]
        horizon: usize,
        #[arg(long, value_enum, default_value_t = Support::FromTwo)]
        support: Support,
        #[arg(long, default_value_t = 1.0)]
        r0_plus: f64,
        #[arg(long, default_value_t = 1.0)]
        r1_plus: f64,
    },
    /// Compare each metaorder's VWAP with the price at t0 + 2T.
    FairPricing {
        #[command(flatten)]
        input: Input,
    },
    /// Fit peak impact against participation and test for a duration effect.
    SqrtLaw {
        #[command(flatten)]
        input: Input,
        #[arg(long, default_value_t = SQRT_BUCKETS)]
        buckets: usize,
        #[arg(long, value_enum, default_value_t = Fit::Log)]
        fit: Fit,
    },
}

#[derive(Args, Debug)]
struct Input {
    /// Order log.
    #[arg(long)]
    orders: PathBuf,
    /// Market tape (required except for `reconstruct`).
    #[arg(long)]
    tape: Option<PathBuf>,
    /// Keep only metaorders with at least this many executions.
    #[arg(long, default_value_t = 2)]
    min_length: usize,
    /// Split a metaorder at idle gaps longer than this.
    #[arg(long)]
    max_gap_ms: Option<i64>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// key=value generator settings; flags override them.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    noise: Option<f64>,
    /// Any other generator setting, as key=value.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    settings: Vec<String>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Fit {
    Log,
    Nls,
}

impl From<Fit> for FitMethod {
    fn from(f: Fit) -> Self {
        match f {
            Fit::Log => FitMethod::LogOls,
            Fit::Nls => FitMethod::Nls,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Support {
    FromOne,
    FromTwo,
}

#[derive(Debug)]
enum Failure {
    Input(String),
    Internal(String),
}

impl Failure {
    fn input(e: impl std::fmt::Display) -> Self {
        Failure::Input(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::input(e)
    }
}

impl From<IngestError> for Failure {
    fn from(e: IngestError) -> Self {
        Failure::input(e)
    }
}

impl From<DistError> for Failure {
    fn from(e: DistError) -> Self {
        Failure::input(e)
    }
}

impl From<ReconstructError> for Failure {
    fn from(e: ReconstructError) -> Self {
        Failure::input(e)
    }
}

impl From<FarmerError> for Failure {
    fn from(e: FarmerError) -> Self {
        match e {
            FarmerError::ClosedFormMismatch { .. } => Failure::Internal(e.to_string()),
            _ => Failure::input(e),
        }
    }
}

impl From<ImpactError> for Failure {
    fn from(e: ImpactError) -> Self {
        match e {
            ImpactError::Curve(_) => Failure::Internal(e.to_string()),
            _ => Failure::input(e),
        }
    }
}

impl From<SyntheticError> for Failure {
    fn from(e: SyntheticError) -> Self {
        match e {
            SyntheticError::Model(m) => m.into(),
            SyntheticError::HorizonOverflow { .. } | SyntheticError::PriceRange => {
                Failure::Internal(e.to_string())
            }
            _ => Failure::input(e),
        }
    }
}

struct Context {
    out_dir: PathBuf,
    calendar: TradingCalendar,
    provenance: String,
}

impl Context {
    fn create(&self, name: &str) -> Result<BufWriter<File>, Failure> {
        let path = self.out_dir.join(name);
        let file = File::create(&path)
            .map_err(|e| Failure::Input(format!("cannot create {}: {e}", path.display())))?;
        Ok(BufWriter::new(file))
    }

    fn prov(&self) -> Option<&str> {
        Some(&self.provenance)
    }
}

fn open(path: &Path) -> Result<BufReader<File>, Failure> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Failure::Input(format!("cannot open {}: {e}", path.display())))
}

fn write_rejections(ctx: &Context, name: &str, report: &RejectionReport) -> Result<(), Failure> {
    if !report.is_empty() {
        eprintln!("warning: {} lines rejected, see {name}", report.len());
        report.write_csv(ctx.create(name)?, ctx.prov())?;
    }
    Ok(())
}

struct Loaded {
    metaorders: Vec<Metaorder>,
    tapes: Option<MarketTapes>,
}

// Ingestion, reconstruction, length filter and (with a tape) enrichment.
// Per-line and per-metaorder problems are written out and never abort.
fn load(ctx: &Context, input: &Input, need_tape: bool) -> Result<Loaded, Failure> {
    if need_tape && input.tape.is_none() {
        return Err(Failure::Input("--tape is required".into()));
    }
    let log = parse_order_log(open(&input.orders)?, &ctx.calendar)?;
    write_rejections(ctx, "order_rejections.csv", &log.rejections)?;
    let options = ReconstructOptions {
        max_gap_ms: input.max_gap_ms,
    };
    let rec = reconstruct_with(&log.fills, &options);
    let mut metaorders = filter_min_length(rec.metaorders, input.min_length)?;
    let tapes = match &input.tape {
        Some(path) => {
            let tapes = parse_market_tape(open(path)?, &ctx.calendar)?;
            write_rejections(ctx, "tape_rejections.csv", &tapes.rejections)?;
            let (ok, errors) = enrich_all(metaorders, &tapes);
            if !errors.is_empty() {
                let mut report = RejectionReport::default();
                for (i, e) in errors.iter().enumerate() {
                    report.push(i as u64 + 1, e.to_string());
                }
                write_rejections(ctx, "metaorder_rejections.csv", &report)?;
            }
            metaorders = ok;
            Some(tapes)
        }
        None => None,
    };
    if metaorders.is_empty() {
        return Err(Failure::Input("no metaorders left after reconstruction".into()));
    }
    Ok(Loaded { metaorders, tapes })
}

fn reconstruct(ctx: &Context, input: &Input) -> Result<(), Failure> {
    let loaded = load(ctx, input, false)?;
    write_metaorder_summary(ctx.create("metaorders.csv")?, &loaded.metaorders, ctx.prov())?;
    println!("{} metaorders", loaded.metaorders.len());
    Ok(())
}

fn mean_median(mut v: Vec<f64>) -> (f64, f64) {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let mean = v.iter().sum::<f64>() / n as f64;
    let median = if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    };
    (mean, median)
}

fn analyze(
    ctx: &Context,
    input: &Input,
    options: DynamicsOptions,
    grid: usize,
    fit: FitMethod,
) -> Result<(), Failure> {
    if grid == 0 {
        return Err(Failure::Input("--grid must be positive".into()));
    }
    let loaded = load(ctx, input, true)?;
    let tapes = loaded.tapes.as_ref().expect("tape checked");
    let ms = &loaded.metaorders;
    write_metaorder_summary(ctx.create("metaorders.csv")?, ms, ctx.prov())?;

    let (paths, errors) = compute_paths(ms, tapes, grid);
    for e in &errors {
        eprintln!("warning: {e}");
    }
    let curve = impact_dynamics(&paths, &options)?;
    write_curve_csv(
        ctx.create("impact_execution.csv")?,
        &curve,
        &[Phase::Execution],
        ctx.prov(),
    )?;
    write_curve_csv(
        ctx.create("impact_dynamics.csv")?,
        &curve,
        &[Phase::Execution, Phase::Relaxation],
        ctx.prov(),
    )?;

    let exec: Vec<(f64, f64)> = curve
        .phase(Phase::Execution)
        .map(|p| (p.rescaled_time, p.mean_signed_impact))
        .collect();
    match fit_power_law_with(&exec, fit) {
        Ok(f) => write_fits_csv(ctx.create("impact_fits.csv")?, &[("execution", f)], ctx.prov())?,
        Err(e) => eprintln!("warning: execution power-law fit skipped: {e}"),
    }

    let lengths: Vec<usize> = ms.iter().map(|m| m.length()).collect();
    let (mean_n, median_n) = mean_median(lengths.iter().map(|&n| n as f64).collect());
    let mut stats: Vec<(&str, f64)> = vec![
        ("metaorders", ms.len() as f64),
        ("paths", paths.len() as f64),
        ("truncated_paths", paths.iter().filter(|p| p.truncated).count() as f64),
        ("proxy_paths", paths.iter().filter(|p| p.proxy).count() as f64),
        ("mean_length", mean_n),
        ("median_length", median_n),
    ];
    let temporary = temporary_impact(&curve)?;
    stats.push(("temporary_impact", temporary));
    if let Ok(permanent) = permanent_impact(&curve) {
        stats.push(("permanent_impact", permanent));
        stats.push(("permanent_to_temporary", permanent / temporary));
    }
    if let Some(s) = curve.seam() {
        stats.push(("seam_execution", s.execution));
        stats.push(("seam_mid", s.mid));
    }
    write_statistics_csv(ctx.create("impact_statistics.csv")?, &stats, ctx.prov())?;

    let as_f64 = |v: &[usize]| v.iter().map(|&n| n as f64).collect::<Vec<_>>();
    empirical_histogram(&as_f64(&lengths), Binning::Integer)?
        .write_csv(ctx.create("length_distribution.csv")?, ctx.prov())?;
    empirical_histogram(&as_f64(&lengths), Binning::Log(30))?
        .write_csv(ctx.create("length_distribution_log.csv")?, ctx.prov())?;
    let participation: Vec<f64> = ms.iter().filter_map(|m| m.participation()).collect();
    empirical_histogram(&participation, Binning::Log(30))?
        .write_csv(ctx.create("participation_distribution.csv")?, ctx.prov())?;
    let durations: Vec<f64> = ms.iter().map(|m| m.duration_secs()).collect();
    empirical_histogram(&durations, Binning::Log(30))?
        .write_csv(ctx.create("duration_distribution.csv")?, ctx.prov())?;

    let mut estimates = Vec::new();
    for method in [BetaMethod::Mle, BetaMethod::LogLogRegression] {
        match estimate_beta(&lengths, method) {
            Ok(e) => estimates.push(e),
            Err(e) => eprintln!("warning: {} estimate skipped: {e}", method.as_str()),
        }
    }
    write_beta_report(ctx.create("beta.csv")?, &estimates, ctx.prov())?;

    println!(
        "{} metaorders, temporary {temporary}, beta {}",
        ms.len(),
        estimates
            .first()
            .map(|e| e.beta.to_string())
            .unwrap_or_else(|| "n/a".into())
    );
    Ok(())
}

fn read_config(path: &Path, config: &mut GeneratorConfig) -> Result<(), Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::Input(format!("cannot read {}: {e}", path.display())))?;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Failure::Input(format!("{}:{}: expected key=value", path.display(), i + 1))
        })?;
        config
            .set(k.trim(), v.trim())
            .map_err(|e| Failure::Input(format!("{}:{}: {e}", path.display(), i + 1)))?;
    }
    Ok(())
}

fn simulate(ctx: &Context, args: &SimulateArgs) -> Result<(), Failure> {
    let mut config = GeneratorConfig {
        calendar: ctx.calendar,
        ..GeneratorConfig::default()
    };
    if let Some(path) = &args.config {
        read_config(path, &mut config)?;
    }
    for kv in &args.settings {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Failure::Input(format!("--set {kv}: expected key=value")))?;
        config.set(k.trim(), v.trim())?;
    }
    if let Some(b) = args.beta {
        config.beta = b;
    }
    if let Some(c) = args.count {
        config.count = c;
    }
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if let Some(n) = args.noise {
        config.noise = n;
    }
    let summary = generate_corpus(
        &config,
        ctx.create("orders.csv")?,
        ctx.create("tape.csv")?,
        ctx.create("truth.csv")?,
        ctx.prov(),
    )?;
    println!(
        "{} metaorders, {} fills, {} tape lines",
        summary.metaorders, summary.fills, summary.tape_lines
    );
    Ok(())
}

fn farmer_curves(
    ctx: &Context,
    beta: f64,
    horizon: usize,
    support: Support,
    r0: f64,
    r1: f64,
) -> Result<(), Failure> {
    let support = match support {
        Support::FromOne => LengthSupport::FromOne,
        Support::FromTwo => LengthSupport::FromTwo,
    };
    let params = FarmerParams::new(beta, horizon)?
        .with_support(support)
        .with_increments(r0, r1);
    let s = ImpactSchedule::new(params)?;
    let mut w = ctx.create("farmer_curves.csv")?;
    writeln!(w, "# {}", ctx.provenance)?;
    writeln!(w, "t,p_t,r_plus,r_minus,immediate,ratio")?;
    for t in 1..=horizon {
        writeln!(
            w,
            "{t},{},{},{},{},{}",
            s.continuation(t)?,
            s.r_plus(t)?,
            s.r_minus(t)?,
            s.immediate(t)?,
            s.ratio(t)?
        )?;
    }
    w.flush()?;
    Ok(())
}

fn fair_pricing(ctx: &Context, input: &Input) -> Result<(), Failure> {
    let loaded = load(ctx, input, true)?;
    let report = fair_pricing_check(&loaded.metaorders, loaded.tapes.as_ref().expect("tape"))?;
    write_fair_pricing_csv(ctx.create("fair_pricing.csv")?, &report, ctx.prov())?;
    write_statistics_csv(
        ctx.create("fair_pricing_statistics.csv")?,
        &[
            ("points", report.points.len() as f64),
            ("excluded", report.excluded as f64),
            ("slope", report.slope),
            ("intercept", report.intercept),
            ("rms_distance", report.rms_distance),
            ("max_deviation", report.max_deviation),
        ],
        ctx.prov(),
    )?;
    println!("{} points, slope {}", report.points.len(), report.slope);
    Ok(())
}

fn sqrt_law(ctx: &Context, input: &Input, buckets: usize, fit: FitMethod) -> Result<(), Failure> {
    let loaded = load(ctx, input, true)?;
    let (paths, errors) = compute_paths(
        &loaded.metaorders,
        loaded.tapes.as_ref().expect("tape"),
        RELAXATION_GRID,
    );
    for e in &errors {
        eprintln!("warning: {e}");
    }
    let report = square_root_analysis(&paths, buckets, fit)?;
    write_sqrt_scatter_csv(ctx.create("sqrt_scatter.csv")?, &report, ctx.prov())?;
    write_duration_buckets_csv(ctx.create("sqrt_duration_buckets.csv")?, &report, ctx.prov())?;
    write_fits_csv(ctx.create("sqrt_fit.csv")?, &[("participation", report.fit)], ctx.prov())?;
    write_statistics_csv(
        ctx.create("sqrt_statistics.csv")?,
        &[
            ("metaorders", report.points.len() as f64),
            ("duration_coefficient", report.duration_coefficient),
            ("duration_coefficient_se", report.duration_coefficient_se),
        ],
        ctx.prov(),
    )?;
    println!(
        "participation exponent {}, duration coefficient {}",
        report.fit.exponent, report.duration_coefficient
    );
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    let calendar = TradingCalendar::from_name(&cli.timezone)
        .ok_or_else(|| Failure::Input(format!("unknown time zone {:?}", cli.timezone)))?;
    fs::create_dir_all(&cli.out_dir)
        .map_err(|e| Failure::Input(format!("cannot create {}: {e}", cli.out_dir.display())))?;
    let name = match &cli.command {
        Command::Reconstruct { .. } => "reconstruct",
        Command::Analyze { .. } => "analyze",
        Command::Simulate(_) => "simulate",
        Command::FarmerCurves { .. } => "farmer-curves",
        Command::FairPricing { .. } => "fair-pricing",
        Command::SqrtLaw { .. } => "sqrt-law",
    };
    let ctx = Context {
        out_dir: cli.out_dir,
        calendar,
        provenance: format!("metaimpact {name} {VERSION}"),
    };
    match &cli.command {
        Command::Reconstruct { input } => reconstruct(&ctx, input),
        Command::Analyze {
            input,
            buckets,
            relax_buckets,
            grid,
            fit,
        } => analyze(
            &ctx,
            input,
            DynamicsOptions {
                execution_buckets: *buckets,
                relaxation_buckets: *relax_buckets,
            },
            *grid,
            (*fit).into(),
        ),
        Command::Simulate(args) => simulate(&ctx, args),
        Command::FarmerCurves {
            beta,
            horizon,
            support,
            r0_plus,
            r1_plus,
        } => farmer_curves(&ctx, *beta, *horizon, *support, *r0_plus, *r1_plus),
        Command::FairPricing { input } => fair_pricing(&ctx, input),
        Command::SqrtLaw { input, buckets, fit } => sqrt_law(&ctx, input, *buckets, (*fit).into()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Internal(msg)) => {
            eprintln!("internal error: {msg}");
            ExitCode::from(2)
        }
    }
}
