//! The `domino` command-line tool.
//!
//! Subcommands read a portfolio config (JSON), write their primary table as
//! CSV to stdout and a run manifest either to `--manifest <path>` or, as one
//! JSON line, to stderr. Exit codes: 0 success, 1 invalid input, guard
//! violation or failed comparison, 2 unreadable or malformed config.

pub mod format;
pub mod manifest;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use domino_core::analytic::{evaluate_query, DistributionTable, QuadMethod, QuadratureSpec, Query};
use domino_core::model::validate_portfolio;
use domino_core::montecarlo::{compare, simulate, EnsembleStats, EstimateRow, Scheme, SimConfig};
use domino_core::{DominoError, IndexSet, Portfolio};
use manifest::RunManifest;
use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

#[derive(Parser, Debug)]
#[command(name = "domino", version, about = "Default contagion in structural credit portfolios")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Check a portfolio config and list violated invariants.
    Validate(ValidateArgs),
    /// Semi-analytic probabilities.
    Analytic(AnalyticArgs),
    /// Monte Carlo estimates.
    Simulate(SimulateArgs),
    /// Analytic values against Monte Carlo estimates.
    Compare(CompareArgs),
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Portfolio config (JSON).
    pub config: PathBuf,
    /// Write the run manifest here instead of stderr.
    #[arg(long, value_name = "PATH")]
    pub manifest: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug, Clone)]
pub struct QueryArgs {
    /// Horizon.
    #[arg(long = "t", value_name = "TIME")]
    pub t: f64,
    /// `nt`, `tau <m>` or `survive <ids>` (comma separated); repeatable.
    /// Defaults to `nt`.
    #[arg(long = "query", num_args = 1..=2, value_names = ["KIND", "ARG"], action = clap::ArgAction::Append)]
    pub query: Vec<String>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Tensor,
    Qmc,
}

#[derive(Args, Debug, Clone)]
pub struct QuadArgs {
    #[arg(long, default_value_t = 24)]
    pub time_nodes: usize,
    #[arg(long, default_value_t = 16)]
    pub space_nodes: usize,
    #[arg(long, default_value_t = 1.0 - 1e-8)]
    pub tail_quantile: f64,
    /// Longest default history summed (defaults to the firm count).
    #[arg(long)]
    pub max_depth: Option<usize>,
    #[arg(long, value_enum, default_value_t = MethodArg::Tensor)]
    pub method: MethodArg,
    #[arg(long, default_value_t = 1 << 14)]
    pub qmc_points: usize,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum SchemeArg {
    Exact,
    Euler,
}

#[derive(Args, Debug, Clone)]
pub struct SimArgs {
    #[arg(long, default_value_t = 100_000)]
    pub paths: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = SchemeArg::Exact)]
    pub scheme: SchemeArg,
    /// Euler step (defaults to horizon / 1024).
    #[arg(long)]
    pub dt: Option<f64>,
    /// Turn off the Brownian-bridge crossing test of the Euler scheme.
    #[arg(long)]
    pub no_bridge: bool,
    /// Simulation worker threads.
    #[arg(long, env = "DOMINO_THREADS")]
    pub threads: Option<usize>,
}

#[derive(Args, Debug, Clone)]
pub struct AnalyticArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub queries: QueryArgs,
    #[command(flatten)]
    pub quad: QuadArgs,
}

#[derive(Args, Debug, Clone)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub queries: QueryArgs,
    #[command(flatten)]
    pub sim: SimArgs,
    /// Write every contagion event as JSONL.
    #[arg(long, value_name = "PATH")]
    pub events: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct CompareArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub queries: QueryArgs,
    #[command(flatten)]
    pub quad: QuadArgs,
    #[command(flatten)]
    pub sim: SimArgs,
    /// Negate the contagion matrix seen by the analytic engine.
    #[arg(long, hide = true)]
    pub test_corrupt_sign: bool,
}

/// Why a run stopped; determines the exit code.
#[derive(Debug)]
pub enum Failure {
    /// Exit 1.
    Invalid(String),
    /// Exit 2.
    Parse(String),
}

impl Failure {
    pub fn code(&self) -> i32 {
        match self {
            Failure::Invalid(_) => 1,
            Failure::Parse(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Invalid(m) | Failure::Parse(m) => m,
        }
    }
}

impl From<DominoError> for Failure {
    fn from(e: DominoError) -> Self {
        match e {
            DominoError::Parse(_) => Failure::Parse(e.to_string()),
            _ => Failure::Invalid(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Invalid(format!("i/o error: {e}"))
    }
}

type Outcome = std::result::Result<i32, Failure>;

/// Parses `args` (program name first) and runs the tool. Returns the exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let (cli, queries) = match parse(args) {
        Ok(v) => v,
        Err(e) => {
            let _ = write!(stderr, "{}", e.render());
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    let _ = write!(stdout, "{e}");
                    0
                }
                _ => 1,
            };
        }
    };
    match execute(&cli.command, queries, stdout, stderr) {
        Ok(code) => code,
        Err(f) => {
            let _ = writeln!(stderr, "error: {}", f.message());
            f.code()
        }
    }
}

/// Parsed command line plus the `--query` occurrences, which the derive
/// layer flattens.
fn parse<I, T>(args: I) -> std::result::Result<(Cli, Vec<Vec<String>>), clap::Error>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = Cli::command().try_get_matches_from(args)?;
    let cli = Cli::from_arg_matches(&matches)?;
    let queries = matches
        .subcommand()
        .and_then(|(_, sub)| sub.try_get_occurrences::<String>("query").ok().flatten())
        .map(|occ| occ.map(|vals| vals.cloned().collect()).collect())
        .unwrap_or_default();
    Ok((cli, queries))
}

/// Parses one `--query` occurrence.
pub fn parse_query(words: &[String], n: usize) -> std::result::Result<Query, String> {
    let arg = words.get(1).map(String::as_str);
    match (words.first().map(String::as_str), arg) {
        (Some("nt"), None) => Ok(Query::Nt),
        (Some("tau"), Some(m)) => {
            let m: usize = m.parse().map_err(|_| format!("tau needs an integer, got {m:?}"))?;
            if m == 0 || m > n {
                return Err(format!("tau index must lie in 1..={n}, got {m}"));
            }
            Ok(Query::TauTail(m))
        }
        (Some("survive"), Some(ids)) => {
            let mut set = IndexSet::EMPTY;
            for tok in ids.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                let id: usize = tok.parse().map_err(|_| format!("bad firm id {tok:?}"))?;
                if id >= n {
                    return Err(format!("firm id {id} out of range for {n} firms"));
                }
                set = set.with(id);
            }
            if set.is_empty() {
                return Err("survive needs at least one firm id".into());
            }
            Ok(Query::Survive(set))
        }
        _ => Err(format!("unrecognised query {:?}", words.join(" "))),
    }
}

fn queries_for(raw: &[Vec<String>], n: usize) -> std::result::Result<Vec<Query>, Failure> {
    if raw.is_empty() {
        return Ok(vec![Query::Nt]);
    }
    raw.iter().map(|w| parse_query(w, n).map_err(Failure::Invalid)).collect()
}

fn quad_spec(a: &QuadArgs) -> QuadratureSpec {
    QuadratureSpec {
        time_nodes: a.time_nodes,
        space_nodes: a.space_nodes,
        tail_quantile: a.tail_quantile,
        max_cascade_depth: a.max_depth,
        method: match a.method {
            MethodArg::Tensor => QuadMethod::Tensor,
            MethodArg::Qmc => QuadMethod::Qmc,
        },
        qmc_points: a.qmc_points,
    }
}

fn sim_config(a: &SimArgs, t: f64) -> SimConfig {
    let scheme = match a.scheme {
        SchemeArg::Exact => Scheme::ExactRenewal,
        SchemeArg::Euler => Scheme::Euler,
    };
    SimConfig {
        dt: a.dt,
        bridge_correction: !a.no_bridge,
        ..SimConfig::new(a.paths, t, a.seed, scheme)
    }
}

/// Reads and parses a config without checking its invariants.
pub fn load_config(path: &Path) -> std::result::Result<(Portfolio, String), Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Parse(format!("cannot read {}: {e}", path.display())))?;
    let p = Portfolio::from_json(&text)?;
    Ok((p, text))
}

fn load_valid(path: &Path) -> std::result::Result<Portfolio, Failure> {
    let (p, _) = load_config(path)?;
    let bad = validate_portfolio(&p);
    if bad.is_empty() {
        Ok(p)
    } else {
        let lines: Vec<String> = bad.iter().map(|v| v.to_string()).collect();
        Err(Failure::Invalid(format!("invalid portfolio\n{}", lines.join("\n"))))
    }
}

fn check_horizon(t: f64) -> std::result::Result<(), Failure> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Failure::Invalid(format!("--t must be positive and finite, got {t}")))
    }
}

fn with_threads<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> std::result::Result<R, Failure> {
    match threads {
        None => Ok(f()),
        Some(0) => Err(Failure::Invalid("--threads must be at least 1".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Failure::Invalid(format!("cannot start {n} threads: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

fn emit_manifest(m: &RunManifest, target: Option<&Path>, stderr: &mut dyn Write) -> std::result::Result<(), Failure> {
    let json = serde_json::to_string_pretty(m).expect("manifest serializes");
    match target {
        Some(path) => std::fs::write(path, json + "\n")?,
        None => writeln!(stderr, "{}", serde_json::to_string(m).expect("manifest serializes"))?,
    }
    Ok(())
}

fn execute(cmd: &Command, raw_queries: Vec<Vec<String>>, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Outcome {
    match cmd {
        Command::Validate(a) => cmd_validate(a, stdout, stderr),
        Command::Analytic(a) => cmd_analytic(a, &raw_queries, stdout, stderr),
        Command::Simulate(a) => cmd_simulate(a, &raw_queries, stdout, stderr),
        Command::Compare(a) => cmd_compare(a, &raw_queries, stdout, stderr),
    }
}

pub fn cmd_validate(a: &ValidateArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Outcome {
    let mut m = RunManifest::start("validate");
    let (p, _) = load_config(&a.common.config)?;
    m.config_hash = Some(manifest::config_hash(&p));
    let bad = validate_portfolio(&p);
    for v in &bad {
        writeln!(stdout, "{v}")?;
    }
    m.finish();
    emit_manifest(&m, a.common.manifest.as_deref(), stderr)?;
    Ok(if bad.is_empty() { 0 } else { 1 })
}

fn analytic_table(p: &Portfolio, qs: &[Query], t: f64, quad: &QuadratureSpec) -> std::result::Result<DistributionTable, Failure> {
    let tables = qs
        .iter()
        .map(|q| evaluate_query(p, q, t, quad))
        .collect::<domino_core::Result<Vec<_>>>()?;
    Ok(DistributionTable::concat(&tables))
}

pub fn cmd_analytic(a: &AnalyticArgs, raw: &[Vec<String>], stdout: &mut dyn Write, stderr: &mut dyn Write) -> Outcome {
    let mut m = RunManifest::start("analytic");
    let p = load_valid(&a.common.config)?;
    check_horizon(a.queries.t)?;
    let qs = queries_for(raw, p.n())?;
    let quad = quad_spec(&a.quad);
    m.config_hash = Some(manifest::config_hash(&p));
    m.horizon = Some(a.queries.t);
    m.queries = qs.iter().flat_map(|q| q.labels(p.n())).collect();
    m.quadrature = Some(quad.clone());
    let table = analytic_table(&p, &qs, a.queries.t, &quad)?;
    format::write_table(&mut *stdout, &table)?;
    m.finish();
    emit_manifest(&m, a.common.manifest.as_deref(), stderr)?;
    Ok(0)
}

/// Runs the simulator and tallies at the horizon, optionally writing events.
fn run_simulation(
    p: &Portfolio,
    cfg: &SimConfig,
    threads: Option<usize>,
    events: Option<&Path>,
) -> std::result::Result<EnsembleStats, Failure> {
    let mut sink = match events {
        Some(path) => Some(BufWriter::new(File::create(path)?)),
        None => None,
    };
    let stats = with_threads(threads, || -> std::result::Result<EnsembleStats, Failure> {
        let mut stats = EnsembleStats::new(p.n());
        for r in simulate(p, cfg)? {
            let r = r?;
            r.check(p)?;
            stats.add(&r, cfg.horizon);
            if let Some(w) = sink.as_mut() {
                format::write_events(w, &r)?;
            }
        }
        Ok(stats)
    })??;
    if let Some(mut w) = sink {
        w.flush()?;
    }
    Ok(stats)
}

fn mc_rows(stats: &EnsembleStats, qs: &[Query]) -> Vec<EstimateRow> {
    qs.iter().flat_map(|q| stats.rows(q)).collect()
}

pub fn cmd_simulate(a: &SimulateArgs, raw: &[Vec<String>], stdout: &mut dyn Write, stderr: &mut dyn Write) -> Outcome {
    let mut m = RunManifest::start("simulate");
    let p = load_valid(&a.common.config)?;
    check_horizon(a.queries.t)?;
    let qs = queries_for(raw, p.n())?;
    let cfg = sim_config(&a.sim, a.queries.t);
    cfg.validate()?;
    m.config_hash = Some(manifest::config_hash(&p));
    m.horizon = Some(a.queries.t);
    m.seed = Some(cfg.seed);
    m.queries = qs.iter().flat_map(|q| q.labels(p.n())).collect();
    m.simulation = Some(cfg.clone());
    m.threads = a.sim.threads;
    let stats = run_simulation(&p, &cfg, a.sim.threads, a.events.as_deref())?;
    format::write_estimates(&mut *stdout, &mc_rows(&stats, &qs))?;
    m.censored_paths = Some(stats.censored);
    m.ties = Some(stats.ties);
    m.finish();
    emit_manifest(&m, a.common.manifest.as_deref(), stderr)?;
    Ok(0)
}

pub fn cmd_compare(a: &CompareArgs, raw: &[Vec<String>], stdout: &mut dyn Write, stderr: &mut dyn Write) -> Outcome {
    let mut m = RunManifest::start("compare");
    let p = load_valid(&a.common.config)?;
    let t = a.queries.t;
    check_horizon(t)?;
    let qs = queries_for(raw, p.n())?;
    let quad = quad_spec(&a.quad);
    let cfg = sim_config(&a.sim, t);
    cfg.validate()?;
    m.config_hash = Some(manifest::config_hash(&p));
    m.horizon = Some(t);
    m.seed = Some(cfg.seed);
    m.queries = qs.iter().flat_map(|q| q.labels(p.n())).collect();
    m.quadrature = Some(quad.clone());
    m.simulation = Some(cfg.clone());
    m.threads = a.sim.threads;

    let analytic_portfolio = if a.test_corrupt_sign {
        m.test_corrupt_sign = true;
        p.with_contagion(p.contagion.map(|c| -c))
    } else {
        p.clone()
    };
    let table = analytic_table(&analytic_portfolio, &qs, t, &quad)?;
    let stats = run_simulation(&p, &cfg, a.sim.threads, None)?;
    let report = compare(&table, &mc_rows(&stats, &qs))?;
    format::write_comparison(&mut *stdout, &report.entries)?;
    m.censored_paths = Some(stats.censored);
    m.ties = Some(stats.ties);
    m.all_pass = Some(report.all_pass);
    m.finish();
    emit_manifest(&m, a.common.manifest.as_deref(), stderr)?;
    Ok(if report.all_pass { 0 } else { 1 })
}
