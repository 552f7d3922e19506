//! Command-line front end: `decompose`, `generate`, `graph`, and `verify`
//! subcommands over CSV samples.
//!
//! Exit codes: 0 success/converged, 1 bad input or internal failure,
//! 2 three-point array present, 3 not converged (or verification above
//! tolerance), 4 no usable lattice level.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufReader, Write as _};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use num::bigint::BigInt;
use num::rational::BigRational;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::geometry::{ExactCoord, PlaneSample, SamplePoint};
use crate::lattice::{build_graph, classify_edges, debug_dump};
use crate::oracle::exact_decompose;
use crate::solver::{self, decompose, IterationRecord, MIN_TOL};
use crate::step::{decompose_step, PiecewiseLinear};
use crate::{Error, Result};

/// Largest admissible lattice level. Coordinates are capped at parse time
/// so that cell indices at this level still fit in i64 comfortably.
pub const MAX_LEVEL: u32 = 40;

/// Validated knobs for a decomposition run.
#[derive(Clone, Copy, Debug)]
pub struct RunConfig {
    pub tol: f64,
    pub max_iter: u32,
    pub max_n: u32,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.tol.is_finite() || self.tol < MIN_TOL {
            return Err(Error::Config {
                detail: format!("--tol must be a finite number >= {MIN_TOL}, got {}", self.tol),
            });
        }
        if self.max_iter == 0 {
            return Err(Error::Config { detail: "--max-iter must be at least 1".into() });
        }
        if self.max_n > MAX_LEVEL {
            return Err(Error::Config {
                detail: format!("--max-n must be at most {MAX_LEVEL}, got {}", self.max_n),
            });
        }
        Ok(())
    }
}

#[derive(Parser)]
#[command(
    name = "sepdec",
    version,
    about = "Decompose a finite plane sample f(x,y) into g(x) + h(y)"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Decompose a sample CSV into g and h
    Decompose(DecomposeArgs),
    /// Generate a sample from a built-in family
    Generate(GenerateArgs),
    /// Print the occupied-cell graph at a level as JSON
    Graph(GraphArgs),
    /// Check a written decomposition against a sample
    Verify(VerifyArgs),
}

#[derive(Args)]
pub struct DecomposeArgs {
    /// Input sample CSV, one `x,y,f` record per line
    #[arg(long)]
    pub input: PathBuf,
    /// Directory for g.csv, h.csv, trace.jsonl, report.json
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    /// Target residual sup-norm
    #[arg(long, default_value_t = 1e-3)]
    pub tol: f64,
    /// Iteration budget
    #[arg(long, default_value_t = 60)]
    pub max_iter: u32,
    /// Largest lattice level to search
    #[arg(long, default_value_t = MAX_LEVEL)]
    pub max_n: u32,
    /// Run exactly one step at --eps instead of iterating to --tol
    #[arg(long, requires = "eps")]
    pub single_step: bool,
    /// Step tolerance for --single-step
    #[arg(long, requires = "single_step")]
    pub eps: Option<f64>,
    /// Re-read the written files and cross-check them
    #[arg(long)]
    pub verify: bool,
    /// Also write points.csv, g_plot.csv, h_plot.csv
    #[arg(long)]
    pub plot: bool,
}

#[derive(Args)]
pub struct GenerateArgs {
    /// Sample family
    #[arg(long, value_enum)]
    pub family: Family,
    /// Number of points
    #[arg(long, default_value_t = 100)]
    pub count: usize,
    /// Seed for the deterministic generator
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output CSV path
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct GraphArgs {
    /// Input sample CSV
    #[arg(long)]
    pub input: PathBuf,
    /// Lattice level
    #[arg(long)]
    pub n: u32,
    /// Long-edge threshold, a decimal such as 0.25
    #[arg(long)]
    pub delta: String,
}

#[derive(Args)]
pub struct VerifyArgs {
    /// Input sample CSV
    #[arg(long)]
    pub input: PathBuf,
    /// Piecewise-linear g file
    #[arg(long)]
    pub g: PathBuf,
    /// Piecewise-linear h file
    #[arg(long)]
    pub h: PathBuf,
    /// Largest acceptable residual sup-norm
    #[arg(long, default_value_t = 1e-3)]
    pub tol: f64,
}

/// Built-in sample families. All of them produce samples free of
/// three-point arrays, with deterministic output for a given seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Family {
    /// Strictly increasing x and y: no shared coordinates at all.
    MonotoneCurve,
    /// Disjoint column pairs, row pairs, and singletons.
    CoordinatePairs,
    /// Random grid points, accepted only while array-free.
    RandomNoarray,
}

impl Family {
    fn name(&self) -> &'static str {
        match self {
            Family::MonotoneCurve => "monotone-curve",
            Family::CoordinatePairs => "coordinate-pairs",
            Family::RandomNoarray => "random-noarray",
        }
    }
}

/// Entry point used by the binary; returns the process exit code.
pub fn run() -> i32 {
    let env = env_logger::Env::new().filter("SEPDEC_LOG");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(err) => {
            if let Error::ArrayPresent { witness } = &err {
                println!("three-point array: {witness}");
            }
            eprintln!("error: {err}");
            exit_code(&err)
        }
    }
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::ArrayPresent { .. } => 2,
        Error::ResolutionExhausted { .. } => 4,
        _ => 1,
    }
}

fn dispatch(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Decompose(args) => cmd_decompose(args),
        Command::Generate(args) => cmd_generate(args),
        Command::Graph(args) => cmd_graph(args),
        Command::Verify(args) => cmd_verify(args),
    }
}

#[derive(Serialize)]
struct Report {
    input: String,
    points: usize,
    f_norm: f64,
    mode: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_iter: Option<u32>,
    max_n: u32,
    converged: bool,
    iterations: u32,
    final_residual: f64,
    norm_g: f64,
    norm_h: f64,
    g_breakpoints: usize,
    h_breakpoints: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    single_step: Option<SingleStepReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    verify: Option<VerifyReport>,
}

#[derive(Serialize)]
struct SingleStepReport {
    eps: f64,
    eps_used: f64,
    delta_exponent: i32,
    level: u32,
}

#[derive(Serialize)]
struct VerifyReport {
    reread_residual: f64,
    matches: bool,
    exact_decomposable: bool,
}

fn cmd_decompose(args: DecomposeArgs) -> Result<i32> {
    let config = RunConfig { tol: args.tol, max_iter: args.max_iter, max_n: args.max_n };
    config.validate()?;
    let sample = PlaneSample::from_csv_path(&args.input)?;
    std::fs::create_dir_all(&args.out_dir)?;

    let f_norm = crate::geometry::sup_norm(&sample);
    let (g, h, converged, iterations, final_residual, trace, single_step);
    if args.single_step {
        let eps = args.eps.expect("clap enforces --eps with --single-step");
        if !eps.is_finite() || eps < MIN_TOL {
            return Err(Error::Config {
                detail: format!("--eps must be a finite number >= {MIN_TOL}, got {eps}"),
            });
        }
        let step = decompose_step(&sample, eps, config.max_n)?;
        trace = vec![IterationRecord {
            iter: 1,
            eps: step.eps_used,
            residual_sup: step.residual_sup,
            norm_g: step.norm_g,
            norm_h: step.norm_h,
            level_n: step.level,
        }];
        single_step = Some(SingleStepReport {
            eps,
            eps_used: step.eps_used,
            delta_exponent: step.delta_used.exponent(),
            level: step.level,
        });
        (g, h) = (step.g, step.h);
        (converged, iterations, final_residual) = (true, 1, step.residual_sup);
    } else {
        let result = decompose(&sample, config.tol, config.max_iter, config.max_n)?;
        trace = result.trace;
        single_step = None;
        (g, h) = (result.g, result.h);
        (converged, iterations, final_residual) =
            (result.converged, result.iterations, result.final_residual);
    }

    let g_path = args.out_dir.join("g.csv");
    let h_path = args.out_dir.join("h.csv");
    write_atomic(&g_path, g.to_csv().as_bytes())?;
    write_atomic(&h_path, h.to_csv().as_bytes())?;
    let mut trace_text = String::new();
    for record in &trace {
        let line = serde_json::to_string(record).expect("trace records serialize");
        trace_text.push_str(&line);
        trace_text.push('\n');
    }
    write_atomic(&args.out_dir.join("trace.jsonl"), trace_text.as_bytes())?;

    let verify = if args.verify {
        let g_back = PiecewiseLinear::from_csv_reader(BufReader::new(File::open(&g_path)?))?;
        let h_back = PiecewiseLinear::from_csv_reader(BufReader::new(File::open(&h_path)?))?;
        let (_, reread_residual) = solver::evaluate(&sample, &g_back, &h_back);
        let exact_decomposable = match exact_decompose(&sample) {
            Ok(_) => true,
            Err(Error::NotDecomposable { .. }) => false,
            Err(other) => return Err(other),
        };
        Some(VerifyReport {
            reread_residual,
            matches: reread_residual == final_residual,
            exact_decomposable,
        })
    } else {
        None
    };
    let verify_failed = verify.as_ref().is_some_and(|v| !v.matches);

    let report = Report {
        input: args.input.display().to_string(),
        points: sample.len(),
        f_norm,
        mode: if args.single_step { "single-step" } else { "iterate" },
        tol: (!args.single_step).then_some(config.tol),
        max_iter: (!args.single_step).then_some(config.max_iter),
        max_n: config.max_n,
        converged,
        iterations,
        final_residual,
        norm_g: g.norm(),
        norm_h: h.norm(),
        g_breakpoints: g.breakpoints().len(),
        h_breakpoints: h.breakpoints().len(),
        single_step,
        verify,
    };
    let mut report_text = serde_json::to_string_pretty(&report).expect("report serializes");
    report_text.push('\n');
    write_atomic(&args.out_dir.join("report.json"), report_text.as_bytes())?;

    if args.plot {
        write_plots(&args.out_dir, &sample, &g, &h)?;
    }
    if verify_failed {
        return Err(Error::guarantee(
            "re-read decomposition does not reproduce the reported residual",
        ));
    }

    if args.single_step {
        println!("single step: residual {final_residual}");
        Ok(0)
    } else if converged {
        println!("converged in {iterations} iterations: residual {final_residual}");
        Ok(0)
    } else {
        println!("not converged after {iterations} iterations: residual {final_residual}");
        Ok(3)
    }
}

fn write_plots(
    out_dir: &Path,
    sample: &PlaneSample,
    g: &PiecewiseLinear,
    h: &PiecewiseLinear,
) -> Result<()> {
    let mut points = Vec::new();
    sample.write_csv(&mut points)?;
    write_atomic(&out_dir.join("points.csv"), &points)?;
    let ((min_x, max_x), (min_y, max_y)) = sample.bounding_box();
    write_atomic(
        &out_dir.join("g_plot.csv"),
        dense_csv("x,g", g, min_x.to_f64(), max_x.to_f64()).as_bytes(),
    )?;
    write_atomic(
        &out_dir.join("h_plot.csv"),
        dense_csv("y,h", h, min_y.to_f64(), max_y.to_f64()).as_bytes(),
    )?;
    Ok(())
}

/// 1000 evaluation rows across the padded range.
fn dense_csv(header: &str, pl: &PiecewiseLinear, lo: f64, hi: f64) -> String {
    let span = if hi > lo { hi - lo } else { 1.0 };
    let (lo, hi) = (lo - 0.05 * span, hi + 0.05 * span);
    let mut out = format!("# {header}\n");
    for k in 0..1000 {
        let x = lo + (hi - lo) * (k as f64) / 999.0;
        let _ = writeln!(out, "{x},{}", pl.eval_f64(x));
    }
    out
}

fn cmd_generate(args: GenerateArgs) -> Result<i32> {
    let sample = generate_sample(args.family, args.count, args.seed)?;
    let mut bytes = Vec::new();
    sample.write_csv(&mut bytes)?;
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    write_atomic(&args.out, &bytes)?;
    Ok(0)
}

fn cmd_graph(args: GraphArgs) -> Result<i32> {
    if args.n > MAX_LEVEL {
        return Err(Error::Config {
            detail: format!("--n must be at most {MAX_LEVEL}, got {}", args.n),
        });
    }
    let delta = ExactCoord::parse(&args.delta)
        .map_err(|e| Error::Config { detail: format!("--delta: {e}") })?;
    if delta <= ExactCoord::zero() {
        return Err(Error::Config { detail: "--delta must be positive".into() });
    }
    let sample = PlaneSample::from_csv_path(&args.input)?;
    let graph = build_graph(&sample, args.n);
    let views = classify_edges(&graph, &delta);
    let dump = debug_dump(&graph, &views);
    println!("{}", serde_json::to_string_pretty(&dump).expect("dump serializes"));
    Ok(0)
}

fn cmd_verify(args: VerifyArgs) -> Result<i32> {
    if !args.tol.is_finite() || args.tol < MIN_TOL {
        return Err(Error::Config {
            detail: format!("--tol must be a finite number >= {MIN_TOL}, got {}", args.tol),
        });
    }
    let sample = PlaneSample::from_csv_path(&args.input)?;
    let g = PiecewiseLinear::from_csv_reader(BufReader::new(File::open(&args.g)?))?;
    let h = PiecewiseLinear::from_csv_reader(BufReader::new(File::open(&args.h)?))?;
    let (_, residual) = solver::evaluate(&sample, &g, &h);
    let exact = match exact_decompose(&sample) {
        Ok(_) => "decomposable",
        Err(Error::NotDecomposable { .. }) => "not decomposable",
        Err(other) => return Err(other),
    };
    println!("residual {residual}");
    println!("exact oracle: {exact}");
    Ok(if residual <= args.tol { 0 } else { 3 })
}

/// Writes through a temporary file in the same directory, so readers never
/// observe a partially written file.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Generates one of the built-in sample families, deterministically in
/// `seed`.
pub fn generate_sample(family: Family, count: usize, seed: u64) -> Result<PlaneSample> {
    if count == 0 || count > 100_000 {
        return Err(Error::Config {
            detail: format!("count must be between 1 and 100000, got {count}"),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = match family {
        Family::MonotoneCurve => monotone_curve(count, &mut rng),
        Family::CoordinatePairs => coordinate_pairs(count, &mut rng),
        Family::RandomNoarray => random_noarray(count, &mut rng)?,
    };
    let sample = PlaneSample::new(points)?;
    debug_assert!(crate::geometry::detect_three_array(&sample).is_none());
    Ok(sample)
}

/// Exact coordinate `micros / 10^6`.
fn micro6(micros: u32) -> ExactCoord {
    ExactCoord::from_ratio(BigRational::new(BigInt::from(micros), BigInt::from(1_000_000)))
}

/// Exact coordinate `millis / 10^3`.
fn milli3(millis: u32) -> ExactCoord {
    ExactCoord::from_ratio(BigRational::new(BigInt::from(millis), BigInt::from(1_000)))
}

/// Strictly increasing x and y with a wavy value profile. No coordinate
/// repeats, so no three-point array can occur.
fn monotone_curve(count: usize, rng: &mut ChaCha8Rng) -> Vec<SamplePoint> {
    let mut draw_axis = |rng: &mut ChaCha8Rng| {
        let mut set = BTreeSet::new();
        while set.len() < count {
            set.insert(rng.gen_range(1..1_000_000u32));
        }
        set.into_iter().collect::<Vec<u32>>()
    };
    let xs = draw_axis(rng);
    let ys = draw_axis(rng);
    let amplitude = rng.gen_range(0.5..1.5);
    let frequency = rng.gen_range(2.0..9.0);
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let tilt = rng.gen_range(-1.0..1.0);
    let offset = rng.gen_range(-0.5..0.5);
    (0..count)
        .map(|k| {
            let t = if count == 1 { 0.0 } else { k as f64 / (count - 1) as f64 };
            SamplePoint {
                x: micro6(xs[k]),
                y: micro6(ys[k]),
                f: amplitude * (frequency * t + phase).sin() + tilt * (t - 0.5) * (t - 0.5)
                    + offset,
            }
        })
        .collect()
}

/// Vertical pairs, horizontal pairs, and singletons on globally fresh
/// coordinates: shared-column points never share rows and vice versa, so
/// no point can become the middle of a three-point array.
fn coordinate_pairs(count: usize, rng: &mut ChaCha8Rng) -> Vec<SamplePoint> {
    let stride = ((900_000 / (2 * count as u32 + 4)).max(1)).min(997);
    let mut next_x = 0u32;
    let mut next_y = 0u32;
    let mut points = Vec::with_capacity(count);
    let mut fresh = |cursor: &mut u32, rng: &mut ChaCha8Rng| {
        *cursor += 1 + rng.gen_range(0..stride);
        *cursor
    };
    while points.len() < count {
        let remaining = count - points.len();
        let kind = if remaining == 1 { 2 } else { rng.gen_range(0..3) };
        match kind {
            0 => {
                let x = fresh(&mut next_x, rng);
                for _ in 0..2 {
                    let y = fresh(&mut next_y, rng);
                    points.push(SamplePoint {
                        x: micro6(x),
                        y: micro6(y),
                        f: rng.gen_range(-1.0..1.0),
                    });
                }
            }
            1 => {
                let y = fresh(&mut next_y, rng);
                for _ in 0..2 {
                    let x = fresh(&mut next_x, rng);
                    points.push(SamplePoint {
                        x: micro6(x),
                        y: micro6(y),
                        f: rng.gen_range(-1.0..1.0),
                    });
                }
            }
            _ => {
                let x = fresh(&mut next_x, rng);
                let y = fresh(&mut next_y, rng);
                points.push(SamplePoint {
                    x: micro6(x),
                    y: micro6(y),
                    f: rng.gen_range(-1.0..1.0),
                });
            }
        }
    }
    points
}

/// Random points on a 1000×1000 grid, accepted only while the sample stays
/// free of three-point arrays. Tracks, per point, whether it already
/// shares its column or its row with someone: a point may do one or the
/// other, never both, which is exactly the array-free condition.
fn random_noarray(count: usize, rng: &mut ChaCha8Rng) -> Result<Vec<SamplePoint>> {
    let mut coords: Vec<(u32, u32)> = Vec::with_capacity(count);
    let mut values: Vec<f64> = Vec::with_capacity(count);
    let mut x_groups: HashMap<u32, Vec<usize>> = HashMap::new();
    let mut y_groups: HashMap<u32, Vec<usize>> = HashMap::new();
    let mut has_x_link = Vec::with_capacity(count);
    let mut has_y_link = Vec::with_capacity(count);
    let mut taken: HashSet<(u32, u32)> = HashSet::new();
    let mut budget = 200 * count + 1000;
    while coords.len() < count && budget > 0 {
        budget -= 1;
        // Bias toward reusing occupied coordinates so shared columns and
        // rows actually appear at small sizes.
        let x = if !coords.is_empty() && rng.gen_range(0..4) == 0 {
            coords[rng.gen_range(0..coords.len())].0
        } else {
            rng.gen_range(0..1000)
        };
        let y = if !coords.is_empty() && rng.gen_range(0..4) == 0 {
            coords[rng.gen_range(0..coords.len())].1
        } else {
            rng.gen_range(0..1000)
        };
        if taken.contains(&(x, y)) {
            continue;
        }
        let xs = x_groups.get(&x).map(Vec::as_slice).unwrap_or(&[]);
        let ys = y_groups.get(&y).map(Vec::as_slice).unwrap_or(&[]);
        if !xs.is_empty() && !ys.is_empty() {
            continue; // the candidate itself would be a middle point
        }
        if xs.iter().any(|&p| has_y_link[p]) || ys.iter().any(|&p| has_x_link[p]) {
            continue; // an existing point would become a middle point
        }
        let idx = coords.len();
        for &p in xs {
            has_x_link[p] = true;
        }
        for &p in ys {
            has_y_link[p] = true;
        }
        has_x_link.push(!xs.is_empty());
        has_y_link.push(!ys.is_empty());
        x_groups.entry(x).or_default().push(idx);
        y_groups.entry(y).or_default().push(idx);
        taken.insert((x, y));
        coords.push((x, y));
        values.push(rng.gen_range(-1.0..1.0));
    }
    if coords.len() < count {
        return Err(Error::GenerationFailed {
            family: Family::RandomNoarray.name().into(),
            detail: format!("placed {} of {count} points before the retry budget ran out",
                coords.len()),
        });
    }
    Ok(coords
        .into_iter()
        .zip(values)
        .map(|((x, y), f)| SamplePoint { x: milli3(x), y: milli3(y), f })
        .collect())
}
