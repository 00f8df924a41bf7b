use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use praline::engine::{self, EngineError, Mode, Options, Report};
use praline::frontend::{parse, parse_atom, Atom};
use praline::optimizer::Optimizer;
use praline::oracle;

#[derive(Parser)]
#[command(name = "praline", version, about = "Probability bounds for Datalog programs with partially known input correlations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute probability bounds for the queried facts.
    Solve(SolveArgs),
    /// Exact ranges and sampled world probabilities, for small programs.
    Oracle(OracleArgs),
}

#[derive(Args)]
struct Common {
    /// Program file.
    file: PathBuf,
    /// Query pattern such as `path(1,X)`; may be repeated.
    #[arg(long = "query", short = 'q')]
    queries: Vec<String>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Classes with more members are not encoded exactly.
    #[arg(long, default_value_t = 12)]
    max_class_size: usize,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value = "delta", value_parser = ["exact", "approx", "delta"])]
    mode: String,
    #[arg(long, default_value_t = 0.01)]
    delta: f64,
    /// Write the JSON report to this file (`-` for standard output).
    #[arg(long)]
    json: Option<PathBuf>,
    /// Largest joint-variable count of a cut encoding.
    #[arg(long, default_value_t = 4096)]
    cut_cap: usize,
    /// Worker threads (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
    /// Treat every inferred correlation as unknown.
    #[arg(long)]
    force_unknown_corr: bool,
    #[arg(long)]
    dump_exprs: bool,
    #[arg(long)]
    dump_constraints: bool,
    #[arg(long)]
    dump_correlations: bool,
    #[arg(long)]
    dump_graph: bool,
}

#[derive(Args)]
struct OracleArgs {
    #[command(flatten)]
    common: Common,
    /// Feasible distributions sampled per query.
    #[arg(long, default_value_t = 100)]
    samples: usize,
}

/// `x` with six significant digits, trailing zeros dropped.
fn sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let decimals = (5 - x.abs().log10().floor() as i32).max(0) as usize;
    let s = format!("{x:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

fn render(report: &Report) -> String {
    let mut out = String::new();
    for f in &report.facts {
        out += &format!("{}: [{}, {}]", f.atom, sig6(f.lower), sig6(f.upper));
        if !f.flags.is_empty() {
            out += &format!("  % {} ({})", f.mode, f.flags.join(", "));
        }
        out.push('\n');
    }
    out
}

/// Writes to standard output, ignoring a closed pipe.
fn emit(s: &str) {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(s.as_bytes()).and_then(|()| out.flush());
}

fn fail(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(2)
}

fn options(common: &Common) -> Result<Options, String> {
    let queries = common
        .queries
        .iter()
        .map(|q| parse_atom(q).map_err(|e| format!("query `{q}`: {e}")))
        .collect::<Result<Vec<Atom>, _>>()?;
    Ok(Options { queries, seed: common.seed, max_class_size: common.max_class_size, ..Options::default() })
}

fn load(common: &Common) -> Result<praline::Program, String> {
    let src = fs::read_to_string(&common.file).map_err(|e| format!("{}: {e}", common.file.display()))?;
    parse(&src).map_err(|e| format!("{}:{e}", common.file.display()))
}

fn solve(args: &SolveArgs) -> ExitCode {
    let program = match load(&args.common) {
        Ok(p) => p,
        Err(e) => return fail(e),
    };
    let mut opts = match options(&args.common) {
        Ok(o) => o,
        Err(e) => return fail(e),
    };
    opts.mode = args.mode.parse::<Mode>().expect("validated by clap");
    opts.delta = args.delta;
    opts.cut_cap = args.cut_cap;
    opts.jobs = args.jobs;
    opts.force_unknown_corr = args.force_unknown_corr;

    if args.dump_exprs || args.dump_constraints || args.dump_correlations || args.dump_graph {
        let pre = match engine::prepare(&program, &opts) {
            Ok(p) => p,
            Err(e) => return report_error(e),
        };
        if args.dump_graph {
            emit(&(engine::dump_graph(&pre) + "\n"));
        }
        if args.dump_constraints {
            emit(&engine::dump_constraints(&pre));
        }
        if args.dump_correlations {
            emit(&engine::dump_correlations(&pre, &opts));
        }
        if args.dump_exprs {
            emit(&engine::dump_exprs(&pre, &opts));
        }
    }

    let report = match engine::solve(&program, &opts) {
        Ok(r) => r,
        Err(e) => return report_error(e),
    };
    match &args.json {
        Some(path) => {
            let json = serde_json::to_string_pretty(&report).expect("report serializes");
            if path.as_os_str() == "-" {
                emit(&(json + "\n"));
            } else if let Err(e) = fs::write(path, json + "\n") {
                return fail(format!("{}: {e}", path.display()));
            } else {
                emit(&render(&report));
            }
        }
        None => emit(&render(&report)),
    }
    ExitCode::SUCCESS
}

fn report_error(e: EngineError) -> ExitCode {
    match e {
        EngineError::NoSolution { class } => {
            emit("No solution\n");
            log::info!("constraints of class V{} are unsatisfiable", class + 1);
            ExitCode::from(1)
        }
        e => fail(e),
    }
}

fn run_oracle(args: &OracleArgs) -> ExitCode {
    let program = match load(&args.common) {
        Ok(p) => p,
        Err(e) => return fail(e),
    };
    let opts = match options(&args.common) {
        Ok(o) => o,
        Err(e) => return fail(e),
    };
    let pre = match engine::prepare(&program, &opts) {
        Ok(p) => p,
        Err(e) => return report_error(e),
    };
    let cfg = praline::optimizer::OptConfig { seed: opts.seed, ..Default::default() };
    let opt = Optimizer::new(&pre.phi, cfg.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut samples = Vec::new();
    for _ in 0..args.samples {
        match oracle::sample_distribution(&opt, &pre.graph, &mut rng) {
            Ok(mu) => samples.push(mu),
            Err(e) => return fail(e),
        }
    }
    for &v in &pre.targets {
        let name = pre.graph.nodes[v].name();
        let exact = match oracle::exact_interval_oracle(&program, &pre.phi, &pre.graph, v, &cfg) {
            Ok(iv) => format!("[{}, {}]", sig6(iv.lo), sig6(iv.hi)),
            Err(e) => format!("unavailable ({e})"),
        };
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for mu in &samples {
            match oracle::world_prob(&program, &pre.graph, v, mu) {
                Ok(w) => {
                    lo = lo.min(w);
                    hi = hi.max(w);
                }
                Err(e) => return fail(format!("{name}: {e}")),
            }
        }
        let sampled = if samples.is_empty() { "none".to_string() } else { format!("[{}, {}]", sig6(lo), sig6(hi)) };
        emit(&format!("{name}: exact {exact} sampled {sampled}\n"));
    }
    ExitCode::SUCCESS
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("PRALINE_LOG")).init();
    let cli = Cli::parse();
    match &cli.command {
        Command::Solve(a) => solve(a),
        Command::Oracle(a) => run_oracle(a),
    }
}
