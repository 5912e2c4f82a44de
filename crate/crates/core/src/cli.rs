//! The `gapcert` command line.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::gap::{self, GapKind, GapReport, Margins, ProbeOptions, SweepOptions, SweepPoint};
use crate::model::{Layer, Process, ProblemSpec};
use crate::pmp::{self, CertifyOptions, Classification, Mode};
use crate::solve::{self, Objective, SolveOptions, TranscribeOptions};
use crate::{bundled, embed, io, par, relax, report};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_FINDING: i32 = 2;
pub const EXIT_USAGE: i32 = 64;

#[derive(Debug, Parser)]
#[command(name = "gapcert", version, about = "Infimum-gap evidence and maximum-principle certificates for impulsive control problems")]
pub struct Cli {
    /// Directory receiving reports and CSV files.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, global = true, default_value_t = 1e-6)]
    pub tol_feas: f64,
    #[arg(long, global = true, default_value_t = 1e-5)]
    pub tol_kkt: f64,
    /// Seed of the multistart streams.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Transcribe and solve one layer of a problem.
    Solve(SolveArgs),
    /// Embed an original-time process (columns t, u_1..u_m, a_index).
    Embed {
        problem: String,
        process: PathBuf,
        /// Resample on this many uniform intervals instead of the native grid.
        #[arg(long)]
        nodes: Option<usize>,
    },
    /// Approximate a relaxed process by chattering extended controls.
    Chatter {
        problem: String,
        relaxed: PathBuf,
        #[arg(long)]
        eta: f64,
    },
    /// Classify a process by maximum-principle multipliers.
    Certify {
        problem: String,
        process: PathBuf,
        #[arg(long, default_value = "fixed")]
        mode: Mode,
    },
    /// Check the inward-pointing constraint qualification at the start.
    Cq {
        problem: String,
        process: PathBuf,
        #[arg(long)]
        sbar: f64,
    },
    /// Sweep the three layers and grade the evidence of an infimum gap.
    Gap(GapArgs),
    /// Write a bundled problem and its reference process; `--all` runs the
    /// whole pipeline on it.
    Example {
        name: String,
        #[arg(long)]
        all: bool,
    },
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    pub problem: String,
    #[arg(long, default_value = "extended")]
    pub layer: Layer,
    #[arg(long, default_value_t = 40)]
    pub n: usize,
    #[arg(long, default_value_t = 0.05)]
    pub w0_floor: f64,
    #[arg(long, default_value_t = 8)]
    pub multistart: usize,
    #[arg(long)]
    pub free_horizon: bool,
    /// Process CSV used as the first start.
    #[arg(long)]
    pub init: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GapArgs {
    pub problem: String,
    /// Reference process for the isolation probe.
    #[arg(long = "ref")]
    pub reference: Option<PathBuf>,
    #[arg(long, requires = "reference")]
    pub delta: Option<f64>,
    /// Grid sizes of the extended, relaxed and probe refinements.
    #[arg(long, value_delimiter = ',', default_values_t = [20, 40, 80])]
    pub levels: Vec<usize>,
    /// Grid size of the strict sweep.
    #[arg(long, default_value_t = 80)]
    pub strict_n: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [0.2, 0.1, 0.05])]
    pub floors: Vec<f64>,
    #[arg(long, default_value_t = 0.05)]
    pub probe_floor: f64,
    #[arg(long, default_value_t = 4)]
    pub multistart: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub solver_tol: f64,
    #[arg(long)]
    pub no_relaxed: bool,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match par::threads_from_env() {
        Ok(t) => par::init_threads(t),
        Err(msg) => {
            eprintln!("error: {msg}");
            return EXIT_USAGE;
        }
    }
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}

/// A bundled problem name or a problem file path.
pub fn load_spec(problem: &str) -> Result<ProblemSpec> {
    let path = Path::new(problem);
    if !path.exists() {
        if let Some(spec) = bundled::by_name(problem) {
            return Ok(spec);
        }
    }
    crate::model::load_problem(path)
}

fn write(dir: &Path, name: &str, text: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(name);
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

fn solve_options(cli: &Cli) -> SolveOptions {
    SolveOptions {
        tol_feas: cli.tol_feas,
        tol_kkt: cli.tol_kkt,
        ..SolveOptions::default()
    }
}

fn certify_options(cli: &Cli) -> CertifyOptions {
    CertifyOptions {
        tol_feas: cli.tol_feas.max(1e-6),
        ..CertifyOptions::default()
    }
}

fn positive(name: &str, v: f64) -> Result<f64> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(Error::Range(format!("--{name} must be positive, got {v}")))
    }
}

fn dispatch(cli: &Cli) -> Result<i32> {
    positive("tol-feas", cli.tol_feas)?;
    positive("tol-kkt", cli.tol_kkt)?;
    match &cli.command {
        Command::Solve(a) => cmd_solve(cli, a),
        Command::Embed { problem, process, nodes } => {
            let spec = load_spec(problem)?;
            let text = std::fs::read_to_string(process).map_err(|e| Error::io(process, e))?;
            let orig = io::parse_original_csv(&text, &spec)?;
            let proc = embed::embed_original(&spec, &orig, *nodes)?;
            let csv = io::emit_process_csv(&proc)?;
            let path = write(&cli.out, "embedded.csv", &csv)?;
            println!("embedded process: {} intervals, horizon {}", proc.intervals(), proc.horizon());
            println!("cost original = {} embedded = {}", orig.cost(&spec), proc.cost(&spec));
            println!("wrote {}", path.display());
            Ok(EXIT_OK)
        }
        Command::Chatter { problem, relaxed, eta } => {
            let spec = load_spec(problem)?;
            let rel = io::read_process_csv(relaxed, &spec)?;
            let ext = relax::chatter(&spec, &rel, positive("eta", *eta)?)?;
            let err = relax::sup_error(&spec, &ext, &rel);
            let path = write(&cli.out, "chattered.csv", &io::emit_process_csv(&ext)?)?;
            let rec = crate::model::check_feasibility(&spec, &ext, cli.tol_feas);
            println!(
                "eta = {eta} sup_error = {err} intervals = {} max_constraint_violation = {}",
                ext.intervals(),
                rec.max_constraint_violation
            );
            println!("wrote {}", path.display());
            Ok(EXIT_OK)
        }
        Command::Certify { problem, process, mode } => {
            let spec = load_spec(problem)?;
            let proc = io::read_process_csv(process, &spec)?;
            certify(cli, &spec, &proc, *mode, "certify.txt")
        }
        Command::Cq { problem, process, sbar } => {
            let spec = load_spec(problem)?;
            let proc = io::read_process_csv(process, &spec)?;
            cq(cli, &spec, &proc, *sbar)
        }
        Command::Gap(a) => {
            let spec = load_spec(&a.problem)?;
            let reference = a.reference.as_ref().map(|p| io::read_process_csv(p, &spec)).transpose()?;
            let rep = gap_pipeline(cli, &spec, a, reference.as_ref().zip(a.delta))?;
            Ok(gap_code(&rep))
        }
        Command::Example { name, all } => cmd_example(cli, name, *all),
    }
}

fn cmd_solve(cli: &Cli, a: &SolveArgs) -> Result<i32> {
    let spec = load_spec(&a.problem)?;
    let topts = TranscribeOptions {
        n: a.n,
        w0_floor: a.w0_floor,
        free_horizon: a.free_horizon,
        ..TranscribeOptions::default()
    };
    let trans = solve::transcribe(&spec, a.layer, &topts, Objective::Cost)?;
    let init = a.init.as_ref().map(|p| io::read_process_csv(p, &spec)).transpose()?;
    let sopts = solve_options(cli);
    let rep = solve::multistart_from(&trans, init.as_ref(), a.multistart, cli.seed, &sopts, par::Parallelism::default())?;
    let text = report::solve_text(&spec, a.layer, &rep, cli.tol_feas);
    write(&cli.out, "solve.txt", &text)?;
    write(&cli.out, "process.csv", &io::emit_process_csv(&rep.process)?)?;
    print!("{text}");
    Ok(if rep.is_feasible(cli.tol_feas) { EXIT_OK } else { EXIT_FINDING })
}

fn certify(cli: &Cli, spec: &ProblemSpec, proc: &Process, mode: Mode, file: &str) -> Result<i32> {
    let rep = pmp::classify(spec, proc, mode, &certify_options(cli))?;
    let text = report::extremal_text(&rep, proc);
    write(&cli.out, file, &text)?;
    print!("{text}");
    Ok(if rep.classification == Classification::NotExtremal { EXIT_FINDING } else { EXIT_OK })
}

fn cq(cli: &Cli, spec: &ProblemSpec, proc: &Process, sbar: f64) -> Result<i32> {
    let opts = certify_options(cli);
    let samples = pmp::sample_grid(spec, opts.directions, opts.radii);
    let rep = pmp::check_cq_h6(spec, proc, positive("sbar", sbar)?, &samples, opts.tol_active)?;
    let text = report::cq_text(&rep);
    write(&cli.out, "cq.txt", &text)?;
    print!("{text}");
    Ok(if rep.satisfied { EXIT_OK } else { EXIT_FINDING })
}

fn gap_code(rep: &GapReport) -> i32 {
    if rep.verdict.kind == GapKind::GapEvidence {
        EXIT_FINDING
    } else {
        EXIT_OK
    }
}

fn gap_pipeline(cli: &Cli, spec: &ProblemSpec, a: &GapArgs, probe: Option<(&Process, f64)>) -> Result<GapReport> {
    if a.levels.is_empty() || a.floors.is_empty() {
        return Err(Error::Range("--levels and --floors must be nonempty".into()));
    }
    let sweep = SweepOptions {
        multistart: a.multistart,
        seed: cli.seed,
        solve: solve_options(cli),
        ..SweepOptions::default()
    };
    let strict_points: Vec<SweepPoint> = a
        .floors
        .iter()
        .map(|&f| SweepPoint {
            n: a.strict_n,
            w0_floor: f,
        })
        .collect();
    let level_points: Vec<SweepPoint> = a.levels.iter().map(|&n| SweepPoint { n, w0_floor: 0.0 }).collect();
    let strict = gap::infimum_sweep(spec, Layer::Strict, &strict_points, &sweep)?;
    let extended = gap::infimum_sweep(spec, Layer::Extended, &level_points, &sweep)?;
    let relaxed = if a.no_relaxed {
        None
    } else {
        Some(gap::infimum_sweep(spec, Layer::Relaxed, &level_points, &sweep)?)
    };
    let probe = probe
        .map(|(reference, delta)| {
            let opts = ProbeOptions {
                w0_floor: a.probe_floor,
                sweep: sweep.clone(),
                ..ProbeOptions::default()
            };
            gap::isolation_probe(spec, reference, delta, &a.levels, &opts)
        })
        .transpose()?;
    let margins = Margins {
        solver_tol: a.solver_tol,
        spread: None,
    };
    let verdict = gap::gap_verdict(&strict, &extended, relaxed.as_ref(), &margins)?;
    let rep = GapReport {
        strict,
        extended,
        relaxed,
        probe,
        verdict,
    };
    let mut trend_csvs = vec![io::emit_trend_csv(&rep.strict)?, io::emit_trend_csv(&rep.extended)?];
    if let Some(r) = &rep.relaxed {
        trend_csvs.push(io::emit_trend_csv(r)?);
    }
    for (text, layer) in trend_csvs.iter().zip(["strict", "extended", "relaxed"]) {
        write(&cli.out, &format!("trend_{layer}.csv"), text)?;
    }
    if let Some(p) = &rep.probe {
        write(&cli.out, "probe.csv", &io::emit_probe_csv(p)?)?;
    }
    let series = io::trend_series(&trend_csvs)?;
    write(&cli.out, "trend.svg", &io::trend_svg(&format!("{}: best objective per layer", spec.name), &series))?;
    let text = report::gap_text(spec, &rep);
    write(&cli.out, "gap.txt", &text)?;
    print!("{text}");
    Ok(rep)
}

fn reference(name: &str, spec: &ProblemSpec) -> Result<Option<Process>> {
    Ok(match name {
        "ex51" => Some(bundled::ex51_reference(spec, 40)?),
        "gapfix" => Some(bundled::gap_fixture_reference(spec, 40)?),
        _ => None,
    })
}

fn cmd_example(cli: &Cli, name: &str, all: bool) -> Result<i32> {
    let source = bundled::source(name).ok_or_else(|| {
        let names: Vec<&str> = bundled::PROBLEMS.iter().map(|(n, _)| *n).collect();
        Error::Range(format!("unknown example {name:?}; available: {}", names.join(", ")))
    })?;
    let spec = bundled::by_name(name).expect("bundled problem parses");
    write(&cli.out, &format!("{name}.toml"), source)?;
    let reference = reference(name, &spec)?;
    if let Some(r) = &reference {
        write(&cli.out, "reference.csv", &io::emit_process_csv(r)?)?;
    }
    if !all {
        println!("wrote {name}.toml to {}", cli.out.display());
        return Ok(EXIT_OK);
    }
    let solve_args = SolveArgs {
        problem: name.into(),
        layer: Layer::Extended,
        n: 40,
        w0_floor: 0.05,
        multistart: 8,
        free_horizon: false,
        init: None,
    };
    let mut code = cmd_solve(cli, &solve_args)?;
    if let Some(r) = &reference {
        println!();
        let mode = if name == "ex51" { Mode::FreeImpulsive } else { Mode::Fixed };
        code = code.max(certify(cli, &spec, r, mode, "certify.txt")?);
        println!();
        code = code.max(cq(cli, &spec, r, 0.5 * r.horizon())?);
    }
    println!();
    let gap_args = GapArgs {
        problem: name.into(),
        reference: None,
        delta: reference.as_ref().map(|_| 0.2),
        levels: vec![20, 40, 80],
        strict_n: 80,
        floors: vec![0.2, 0.1, 0.05],
        probe_floor: 0.05,
        multistart: 4,
        solver_tol: 1e-3,
        no_relaxed: false,
    };
    let rep = gap_pipeline(cli, &spec, &gap_args, reference.as_ref().map(|r| (r, 0.2)))?;
    if name == "ex51" {
        Ok(code.max(gap_code(&rep)))
    } else {
        Ok(code)
    }
}
