//! Command-line front end.
//!
//! Data goes to stdout (or `--out`), diagnostics to stderr. Every data
//! stream starts with a `#` header line naming the version, command and
//! effective seed.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use num_complex::Complex64;

use crate::analysis::{
    run_success_experiment, theoretical_failure_bound, AggregateRow, ExperimentSpec, GammaSpec, LatticePolicy, MRule,
    RunOptions, SupportSpec,
};
use crate::detect::{detect_and_compute, detect_topk, postprocess_r1l, DetectionResult};
use crate::dimincr::{sfft, Candidates, SfftParams, DEFAULT_C, DEFAULT_PAIR_CAP};
use crate::error::{Error, Result};
use crate::freqset::{full_grid, hyperbolic_cross, join_ints, random_subset, FreqSet, Population};
use crate::lattice::{draw_config, draw_config_with_sizes, next_valid_prime, MultiLatticeConfig};
use crate::polyeval::{
    f10_coeff, f10_sq_norm, random_poly, rel_l2_error, SamplingOracle, Signal, SparsePoly, DEFAULT_MIN_MAG, F10,
};
use crate::seed;

const VERSION: &str = env!("CARGO_PKG_VERSION");

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_EMPTY: i32 = 3;
pub const EXIT_CAPACITY: i32 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "mlsfft",
    version,
    about = "Sparse Fourier reconstruction with multiple random rank-1 lattices"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Identify frequencies of a signal within a candidate set.
    Detect(DetectArgs),
    /// Dimension-incremental sparse FFT.
    Sfft(SfftArgs),
    /// Repeated-trial experiments and the theoretical bound curve.
    #[command(subcommand)]
    Experiment(ExperimentCmd),
}

#[derive(Debug, Args)]
pub struct GammaArgs {
    /// Spatial dimension.
    #[arg(long)]
    pub dim: Option<usize>,
    /// Full grid [-N, N]^d.
    #[arg(long, value_name = "N", conflicts_with_all = ["hc", "gamma_file"])]
    pub grid: Option<u32>,
    /// Hyperbolic cross with parameter N.
    #[arg(long, value_name = "N", conflicts_with = "gamma_file")]
    pub hc: Option<u32>,
    /// Hyperbolic cross weights, comma separated (default all ones).
    #[arg(long, value_delimiter = ',', requires = "hc")]
    pub weights: Option<Vec<f64>>,
    /// Candidate set in the `d=<d> n=<count>` line format.
    #[arg(long, value_name = "PATH")]
    pub gamma_file: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    /// `random-poly`, `f10` or `poly:<path>`.
    #[arg(long, default_value = "random-poly")]
    pub oracle: String,
    /// Support size of `random-poly` (defaults to the sparsity).
    #[arg(long)]
    pub support_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[command(flatten)]
    pub gamma: GammaArgs,
    #[command(flatten)]
    pub oracle: OracleArgs,
    /// Sparsity the lattices are sized for.
    #[arg(long)]
    pub sparsity: usize,
    #[arg(long, default_value_t = 0.1)]
    pub delta: f64,
    #[arg(long, default_value_t = DEFAULT_C)]
    pub c: f64,
    /// Number of lattices; overrides the count derived from delta.
    #[arg(long = "lattices", value_name = "L")]
    pub lattices: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    pub l_scale: f64,
    /// Lattice configuration (JSON) to use instead of drawing one.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Samples to use instead of querying the oracle; needs --config.
    #[arg(long, value_name = "PATH", requires = "config")]
    pub samples: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    pub save_config: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    pub save_samples: Option<PathBuf>,
    /// Keep only the largest coefficients.
    #[arg(long, value_name = "S")]
    pub topk: Option<usize>,
    /// Minimum coefficient magnitude kept by --topk.
    #[arg(long, default_value_t = 0.0)]
    pub theta: f64,
    /// Refine coefficients on lattices where a frequency has its own residue.
    #[arg(long)]
    pub postprocess: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SfftArgs {
    #[command(flatten)]
    pub gamma: GammaArgs,
    #[command(flatten)]
    pub oracle: OracleArgs,
    #[arg(long)]
    pub sparsity: usize,
    /// Per-stage sparsity (default twice the sparsity).
    #[arg(long)]
    pub s_local: Option<usize>,
    #[arg(long, default_value_t = 1e-12)]
    pub theta: f64,
    /// Detection iterations (default from the failure budget).
    #[arg(long)]
    pub r: Option<usize>,
    #[arg(long, default_value_t = 0.9)]
    pub delta: f64,
    #[arg(long, default_value_t = DEFAULT_C)]
    pub c: f64,
    #[arg(long, default_value_t = 1.0)]
    pub l_scale: f64,
    #[arg(long, default_value_t = DEFAULT_PAIR_CAP)]
    pub pair_cap: u128,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum ExperimentCmd {
    /// Random candidate sets and supports in a box.
    Random(RandomArgs),
    /// Fixed hyperbolic cross candidates with a weighted cross as support.
    Hyperbolic(HyperbolicArgs),
    /// Sparse FFT approximation of the tensor-product B-spline test function.
    Bspline(BsplineArgs),
    /// Theoretical failure bound as a function of L.
    Bound(BoundArgs),
    /// Experiment described by a JSON file.
    Spec(SpecArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PolicyArg {
    PerTrial,
    PerL,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Lattice counts: `a..b` (odd steps), `a..b:step` or a comma list.
    #[arg(long = "L", value_name = "RANGE", default_value = "9..37")]
    pub l_values: String,
    #[arg(long, default_value_t = 200)]
    pub trials: usize,
    #[arg(long, default_value_t = DEFAULT_C)]
    pub c: f64,
    /// Lower bound for the lattice size (default c times the support size).
    #[arg(long, conflicts_with = "m")]
    pub m_lower: Option<f64>,
    /// Fixed lattice size.
    #[arg(long)]
    pub m: Option<u64>,
    #[arg(long, value_enum)]
    pub lattices: Option<PolicyArg>,
    #[arg(long)]
    pub postprocess: bool,
    /// Tolerated numbers of potential false positives, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub pfp_budgets: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub run: RunArgs,
    /// Print the resolved experiment as JSON and exit.
    #[arg(long)]
    pub dump_spec: bool,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Worker threads (default: all cores).
    #[arg(long)]
    pub threads: Option<usize>,
    /// Record per-trial wall-clock time.
    #[arg(long)]
    pub timing: bool,
    /// CSV output (default stdout).
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Per-trial JSON-lines output.
    #[arg(long, value_name = "PATH")]
    pub records: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RandomArgs {
    #[arg(long, default_value_t = 3)]
    pub dim: usize,
    /// Candidates are drawn from [-box, box]^d.
    #[arg(long = "box", default_value_t = 1000)]
    pub half_width: i32,
    #[arg(long, default_value_t = 100_000)]
    pub gamma_size: usize,
    #[arg(long, default_value_t = 100)]
    pub support_size: usize,
    /// Keep the first candidate set and support for all trials.
    #[arg(long)]
    pub fixed_sets: bool,
    #[command(flatten)]
    pub sweep: SweepArgs,
}

#[derive(Debug, Args)]
pub struct HyperbolicArgs {
    #[arg(long, default_value_t = 6)]
    pub dim: usize,
    /// Parameter of the unweighted candidate cross.
    #[arg(long, default_value_t = 16)]
    pub n: u32,
    /// Parameter of the weighted support cross (default n).
    #[arg(long)]
    pub support_n: Option<u32>,
    /// Support weights are t^exp for coordinate t = 1..d.
    #[arg(long, default_value_t = 1.08)]
    pub weight_exp: f64,
    #[command(flatten)]
    pub sweep: SweepArgs,
}

#[derive(Debug, Args)]
pub struct BsplineArgs {
    #[arg(long, default_value_t = 16)]
    pub n: u32,
    #[arg(long, default_value_t = 1000)]
    pub sparsity: usize,
    #[arg(long, default_value_t = 5)]
    pub r: usize,
    #[arg(long, default_value_t = 0.999)]
    pub delta: f64,
    #[arg(long, default_value_t = 0.25)]
    pub l_scale: f64,
    #[arg(long, default_value_t = 1e-12)]
    pub theta: f64,
    #[arg(long, default_value_t = 1)]
    pub runs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BoundArgs {
    #[arg(long, default_value_t = 1e7)]
    pub gamma_size: f64,
    #[arg(long, default_value_t = DEFAULT_C)]
    pub c: f64,
    #[arg(long = "L", value_name = "RANGE", default_value = "9..47")]
    pub l_values: String,
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SpecArgs {
    /// JSON experiment description.
    pub spec: PathBuf,
    #[command(flatten)]
    pub run: RunArgs,
}

/// Failure of a command, carrying its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Capacity { .. } => EXIT_CAPACITY,
            Error::Io(_) => EXIT_FAILURE,
            _ => EXIT_VALIDATION,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        Error::Io(e).into()
    }
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError {
        code: EXIT_VALIDATION,
        message: msg.into(),
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Parses `argv` (including the program name) and runs the command.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

pub fn execute(cli: Cli) -> CliResult<i32> {
    match cli.command {
        Command::Detect(a) => cmd_detect(a),
        Command::Sfft(a) => cmd_sfft(a),
        Command::Experiment(ExperimentCmd::Random(a)) => cmd_random(a),
        Command::Experiment(ExperimentCmd::Hyperbolic(a)) => cmd_hyperbolic(a),
        Command::Experiment(ExperimentCmd::Bspline(a)) => cmd_bspline(a),
        Command::Experiment(ExperimentCmd::Bound(a)) => cmd_bound(a),
        Command::Experiment(ExperimentCmd::Spec(a)) => cmd_spec(a),
    }
}

fn output(path: &Option<PathBuf>) -> CliResult<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn header(w: &mut dyn Write, command: &str, seed: Option<u64>, params: &[(&str, String)]) -> io::Result<()> {
    let seed = seed.map_or_else(|| "none".to_string(), |s| s.to_string());
    write!(w, "# mlsfft {VERSION} {command} seed={seed}")?;
    for (k, v) in params {
        write!(w, " {k}={v}")?;
    }
    writeln!(w)
}

/// `a..b` steps by 2 (lattice counts are odd), `a..b:s` by `s`, and
/// `a,b,c` lists values.
pub fn parse_range(text: &str) -> Result<Vec<usize>> {
    let bad = || Error::invalid(format!("cannot parse range '{text}'"));
    let num = |s: &str| s.trim().parse::<usize>().map_err(|_| bad());
    if let Some((a, rest)) = text.split_once("..") {
        let (b, step) = match rest.split_once(':') {
            Some((b, s)) => (num(b)?, num(s)?),
            None => (num(rest)?, 2),
        };
        let a = num(a)?;
        if step == 0 || b < a {
            return Err(bad());
        }
        Ok((a..=b).step_by(step).collect())
    } else {
        text.split(',').map(num).collect()
    }
}

impl GammaArgs {
    fn candidates(&self) -> CliResult<Candidates> {
        if let Some(path) = &self.gamma_file {
            let set = read_freqset(path)?;
            if let Some(d) = self.dim {
                if d != set.dim() {
                    return Err(invalid(format!(
                        "--dim {d} does not match the candidate file ({})",
                        set.dim()
                    )));
                }
            }
            return Ok(Candidates::Set(set));
        }
        let dim = self
            .dim
            .ok_or_else(|| invalid("--dim is required unless --gamma-file is given"))?;
        if dim == 0 {
            return Err(invalid("--dim must be positive"));
        }
        match (self.grid, self.hc) {
            (Some(n), None) => Ok(Candidates::Grid { dim, n }),
            (None, Some(n)) => {
                let weights = self.weights.clone().unwrap_or_else(|| vec![1.0; dim]);
                if weights.len() != dim {
                    return Err(invalid(format!("expected {dim} weights, got {}", weights.len())));
                }
                Ok(Candidates::HyperbolicCross { n, weights })
            }
            _ => Err(invalid("one of --grid, --hc or --gamma-file is required")),
        }
    }
}

fn materialize(c: &Candidates) -> Result<FreqSet> {
    match c {
        Candidates::Grid { dim, n } => full_grid(*dim, *n),
        Candidates::HyperbolicCross { n, weights } => hyperbolic_cross(weights.len(), *n, weights),
        Candidates::Set(s) => Ok(s.clone()),
    }
}

fn read_freqset(path: &Path) -> Result<FreqSet> {
    FreqSet::read_text(BufReader::new(File::open(path)?))
}

enum Oracle {
    Poly(SparsePoly),
    F10,
}

impl OracleArgs {
    fn build(&self, gamma: &Candidates, sparsity: usize, seed: u64) -> CliResult<Oracle> {
        match self.oracle.as_str() {
            "f10" => {
                if gamma.dim() != 10 {
                    return Err(invalid("the f10 oracle is 10-dimensional"));
                }
                Ok(Oracle::F10)
            }
            "random-poly" => {
                let size = self.support_size.unwrap_or(sparsity);
                let mut rng = seed::stream(seed, &[100]);
                let support = match gamma {
                    Candidates::Grid { dim, n } => random_subset(
                        Population::Box {
                            dim: *dim,
                            lo: -(*n as i32),
                            hi: *n as i32,
                        },
                        size,
                        &mut rng,
                    )?,
                    other => random_subset(Population::Set(&materialize(other)?), size, &mut rng)?,
                };
                Ok(Oracle::Poly(random_poly(&support, &mut rng, DEFAULT_MIN_MAG)?))
            }
            spec => match spec.strip_prefix("poly:") {
                Some(path) => {
                    let p = SparsePoly::read_text(BufReader::new(File::open(path)?))?;
                    if p.support().dim() != gamma.dim() {
                        return Err(invalid(format!(
                            "polynomial has dimension {}, candidates {}",
                            p.support().dim(),
                            gamma.dim()
                        )));
                    }
                    Ok(Oracle::Poly(p))
                }
                None => Err(invalid(format!("unknown oracle '{spec}'"))),
            },
        }
    }
}

/// Writes lattice samples as blocks of `lattice <l> M=<M>` followed by
/// one `re im` line per node.
pub fn write_samples<W: Write>(mut w: W, samples: &[Vec<Complex64>]) -> Result<()> {
    for (l, s) in samples.iter().enumerate() {
        writeln!(w, "lattice {l} M={}", s.len())?;
        for v in s {
            writeln!(w, "{:e} {:e}", v.re, v.im)?;
        }
    }
    Ok(())
}

pub fn read_samples<R: BufRead>(r: R) -> Result<Vec<Vec<Complex64>>> {
    let mut out: Vec<Vec<Complex64>> = Vec::new();
    let mut expected = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let ln = i + 1;
        if let Some(rest) = line.strip_prefix("lattice") {
            let m = rest
                .split_whitespace()
                .find_map(|t| t.strip_prefix("M="))
                .and_then(|v| v.parse::<usize>().ok())
                .ok_or_else(|| Error::parse(ln, "expected 'lattice <l> M=<M>'"))?;
            out.push(Vec::with_capacity(m));
            expected.push(m);
            continue;
        }
        let cur = out
            .last_mut()
            .ok_or_else(|| Error::parse(ln, "sample before any lattice header"))?;
        let mut toks = line.split_whitespace().map(|t| t.parse::<f64>());
        match (toks.next(), toks.next(), toks.next()) {
            (Some(Ok(re)), Some(Ok(im)), None) => cur.push(Complex64::new(re, im)),
            _ => return Err(Error::parse(ln, "expected 're im'")),
        }
    }
    for (l, (s, &m)) in out.iter().zip(&expected).enumerate() {
        if s.len() != m {
            return Err(Error::invalid(format!(
                "lattice {l} declares {m} samples, found {}",
                s.len()
            )));
        }
    }
    Ok(out)
}

fn write_result(w: &mut dyn Write, r: &DetectionResult) -> Result<()> {
    writeln!(w, "d={} n={}", r.detected.dim(), r.len())?;
    let coeffs = r.coeffs.as_deref().unwrap_or(&[]);
    for (k, c) in r.detected.iter().zip(coeffs) {
        writeln!(w, "{} {:e} {:e}", join_ints(k), c.re, c.im)?;
    }
    Ok(())
}

fn sample_config<S: Signal>(oracle: &SamplingOracle<S>, config: &MultiLatticeConfig) -> Result<Vec<Vec<Complex64>>> {
    config
        .lattices
        .iter()
        .map(|lat| oracle.sample_on_lattice(lat))
        .collect()
}

fn check_unit_interval(name: &str, v: f64) -> CliResult<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(invalid(format!("--{name} must lie in (0, 1), got {v}")))
    }
}

fn cmd_detect(a: DetectArgs) -> CliResult<i32> {
    if a.sparsity == 0 {
        return Err(invalid("--sparsity must be positive"));
    }
    check_unit_interval("delta", a.delta)?;
    if a.lattices.is_some_and(|l| l == 0 || l % 2 == 0) {
        return Err(invalid("--lattices must be odd"));
    }
    let cands = a.gamma.candidates()?;
    let gamma = materialize(&cands)?;
    let config = match &a.config {
        Some(path) => MultiLatticeConfig::from_json(&std::fs::read_to_string(path)?)?,
        None => {
            let mut rng = seed::stream(a.seed, &[101]);
            let cfg = match a.lattices {
                Some(l) => {
                    let m = next_valid_prime(&gamma, a.c * a.sparsity as f64)?;
                    draw_config_with_sizes(gamma.dim(), &vec![m; l], a.sparsity, a.delta, 0.5, a.c, &mut rng)?
                }
                None => draw_config(&gamma, a.sparsity, a.delta, 0.5, a.c, a.l_scale, &mut rng)?,
            };
            cfg.with_seed(a.seed)
        }
    };
    if config.dim() != gamma.dim() {
        return Err(invalid("configuration and candidate set differ in dimension"));
    }
    let (samples, truth) = match &a.samples {
        Some(path) => (read_samples(BufReader::new(File::open(path)?))?, None),
        None => {
            let built = a.oracle.build(&cands, a.sparsity, a.seed)?;
            match built {
                Oracle::Poly(p) => {
                    let o = SamplingOracle::new(&p);
                    (sample_config(&o, &config)?, Some(p))
                }
                Oracle::F10 => (sample_config(&SamplingOracle::new(F10), &config)?, None),
            }
        }
    };
    if let Some(path) = &a.save_config {
        std::fs::write(path, config.to_json()?)?;
    }
    if let Some(path) = &a.save_samples {
        write_samples(BufWriter::new(File::create(path)?), &samples)?;
    }
    let mut res = match a.topk {
        Some(s) => detect_topk(&samples, &config, &gamma, s, a.theta)?,
        None => detect_and_compute(&samples, &config, &gamma)?,
    };
    if a.postprocess {
        res = postprocess_r1l(&res, &samples, &config)?;
    }
    if let Some(p) = &truth {
        let exact = res.detected == *p.support();
        eprintln!(
            "detected {} of {} true frequencies; exact support: {exact}",
            res.detected.intersection(p.support())?.len(),
            p.support().len()
        );
    }
    let mut w = output(&a.out)?;
    header(
        &mut *w,
        "detect",
        Some(config.seed.unwrap_or(a.seed)),
        &[
            ("L", config.len().to_string()),
            ("M", config.lattices[0].size().to_string()),
            ("samples", config.sample_count().to_string()),
            ("candidates", gamma.len().to_string()),
        ],
    )?;
    write_result(&mut *w, &res)?;
    w.flush()?;
    Ok(EXIT_OK)
}

fn cmd_sfft(a: SfftArgs) -> CliResult<i32> {
    if a.sparsity == 0 {
        return Err(invalid("--sparsity must be positive"));
    }
    check_unit_interval("delta", a.delta)?;
    let cands = a.gamma.candidates()?;
    let mut params = SfftParams::new(a.sparsity, a.delta, a.seed);
    if let Some(s) = a.s_local {
        params.s_local = s;
    }
    params.theta = a.theta;
    params.r = a.r;
    params.c = a.c;
    params.l_scale = a.l_scale;
    params.pair_cap = a.pair_cap;
    params.validate()?;
    let built = a.oracle.build(&cands, a.sparsity, a.seed)?;
    let (res, err) = match &built {
        Oracle::Poly(p) => {
            let res = sfft(&SamplingOracle::new(p), &cands, &params)?;
            let err = p.rel_l2_error(&res.support, &res.coeffs)?;
            (res, err)
        }
        Oracle::F10 => {
            let res = sfft(&SamplingOracle::new(F10), &cands, &params)?;
            let err = rel_l2_error(&res.support, &res.coeffs, f10_sq_norm(), |k| {
                Complex64::new(f10_coeff(k).unwrap_or(0.0), 0.0)
            })?;
            (res, err)
        }
    };
    for s in &res.stage_log {
        eprintln!(
            "step {} t={} candidates={} found={} lattices={} M={} samples={}",
            s.step, s.t, s.candidates, s.found, s.lattices, s.lattice_size, s.samples
        );
    }
    eprintln!("samples {} relative l2 error {err:e}", res.sample_count);
    let mut w = output(&a.out)?;
    header(
        &mut *w,
        "sfft",
        Some(a.seed),
        &[
            ("d", cands.dim().to_string()),
            ("s", a.sparsity.to_string()),
            ("r", res.schedule.r.to_string()),
            ("delta", a.delta.to_string()),
            ("samples", res.sample_count.to_string()),
        ],
    )?;
    writeln!(w, "d={} n={}", res.support.dim(), res.support.len())?;
    for (k, c) in res.support.iter().zip(&res.coeffs) {
        writeln!(w, "{} {:e} {:e}", join_ints(k), c.re, c.im)?;
    }
    w.flush()?;
    if res.support.is_empty() {
        eprintln!("error: no frequencies identified");
        return Ok(EXIT_EMPTY);
    }
    Ok(EXIT_OK)
}

impl SweepArgs {
    fn apply(
        &self,
        gamma: GammaSpec,
        support: SupportSpec,
        policy: LatticePolicy,
        name: &str,
    ) -> CliResult<ExperimentSpec> {
        Ok(ExperimentSpec {
            name: name.to_string(),
            gamma,
            support,
            redraw_gamma: true,
            redraw_support: true,
            lattices: match self.lattices {
                Some(PolicyArg::PerTrial) => LatticePolicy::PerTrial,
                Some(PolicyArg::PerL) => LatticePolicy::PerL,
                None => policy,
            },
            l_values: parse_range(&self.l_values)?,
            trials: self.trials,
            c: self.c,
            m_rule: match self.m {
                Some(m) => MRule::Fixed { m },
                None => MRule::NextValidPrime { lower: self.m_lower },
            },
            postprocess: self.postprocess,
            pfp_budgets: self.pfp_budgets.clone(),
            seed: self.seed,
            csv_out: self.run.out.clone(),
            records_out: self.run.records.clone(),
        })
    }
}

fn cmd_random(a: RandomArgs) -> CliResult<i32> {
    let mut spec = a.sweep.apply(
        GammaSpec::RandomBox {
            dim: a.dim,
            lo: -a.half_width,
            hi: a.half_width,
            size: a.gamma_size,
        },
        SupportSpec::RandomSubset { size: a.support_size },
        LatticePolicy::PerTrial,
        "random",
    )?;
    if a.fixed_sets {
        spec.redraw_gamma = false;
        spec.redraw_support = false;
    }
    finish_experiment(spec, &a.sweep.run, a.sweep.dump_spec)
}

fn cmd_hyperbolic(a: HyperbolicArgs) -> CliResult<i32> {
    let weights: Vec<f64> = (1..=a.dim).map(|t| (t as f64).powf(a.weight_exp)).collect();
    let spec = a.sweep.apply(
        GammaSpec::HyperbolicCross {
            dim: a.dim,
            n: a.n,
            weights: vec![1.0; a.dim],
        },
        SupportSpec::HyperbolicCross {
            n: a.support_n.unwrap_or(a.n),
            weights,
        },
        LatticePolicy::PerTrial,
        "hyperbolic",
    )?;
    finish_experiment(spec, &a.sweep.run, a.sweep.dump_spec)
}

fn cmd_spec(a: SpecArgs) -> CliResult<i32> {
    let mut spec: ExperimentSpec = serde_json::from_str(&std::fs::read_to_string(&a.spec)?).map_err(Error::from)?;
    if a.run.out.is_some() {
        spec.csv_out = a.run.out.clone();
    }
    if a.run.records.is_some() {
        spec.records_out = a.run.records.clone();
    }
    finish_experiment(spec, &a.run, false)
}

fn finish_experiment(spec: ExperimentSpec, run: &RunArgs, dump: bool) -> CliResult<i32> {
    spec.validate()?;
    if dump {
        let mut w = output(&None)?;
        writeln!(w, "{}", serde_json::to_string_pretty(&spec).map_err(Error::from)?)?;
        w.flush()?;
        return Ok(EXIT_OK);
    }
    if run.threads == Some(0) {
        return Err(invalid("--threads must be positive"));
    }
    let out = run_success_experiment(
        &spec,
        RunOptions {
            threads: run.threads,
            timing: run.timing,
        },
    )?;
    let mut w = output(&spec.csv_out)?;
    header(
        &mut *w,
        &format!("experiment {}", spec.name),
        Some(spec.seed),
        &[
            ("trials", spec.trials.to_string()),
            ("c", spec.c.to_string()),
            ("postprocess", spec.postprocess.to_string()),
        ],
    )?;
    writeln!(w, "{}", AggregateRow::CSV_HEADER)?;
    for row in &out.rows {
        writeln!(w, "{}", row.csv_line())?;
    }
    w.flush()?;
    if let Some(path) = &spec.records_out {
        let mut rw = BufWriter::new(File::create(path)?);
        for r in &out.records {
            writeln!(rw, "{}", serde_json::to_string(r).map_err(Error::from)?)?;
        }
        rw.flush()?;
    }
    for row in &out.rows {
        if !row.fail_rate_pfp_budget.is_empty() {
            let budgets: Vec<String> = row
                .fail_rate_pfp_budget
                .iter()
                .map(|(b, r)| format!("{b}:{r}"))
                .collect();
            eprintln!("L={} fail rate with PFP budget {}", row.l, budgets.join(" "));
        }
    }
    Ok(EXIT_OK)
}

fn cmd_bspline(a: BsplineArgs) -> CliResult<i32> {
    if a.sparsity == 0 || a.runs == 0 {
        return Err(invalid("--sparsity and --runs must be positive"));
    }
    check_unit_interval("delta", a.delta)?;
    let cands = Candidates::Grid { dim: 10, n: a.n };
    let mut w = output(&a.out)?;
    header(
        &mut *w,
        "experiment bspline",
        Some(a.seed),
        &[
            ("N", a.n.to_string()),
            ("s", a.sparsity.to_string()),
            ("r", a.r.to_string()),
            ("delta", a.delta.to_string()),
            ("l_scale", a.l_scale.to_string()),
        ],
    )?;
    writeln!(w, "run,seed,N,s,support,rel_l2_error,samples")?;
    for run in 0..a.runs {
        let seed = a.seed.wrapping_add(run as u64);
        let mut params = SfftParams::new(a.sparsity, a.delta, seed);
        params.r = Some(a.r);
        params.l_scale = a.l_scale;
        params.theta = a.theta;
        params.validate()?;
        let res = sfft(&SamplingOracle::new(F10), &cands, &params)?;
        let err = rel_l2_error(&res.support, &res.coeffs, f10_sq_norm(), |k| {
            Complex64::new(f10_coeff(k).unwrap_or(0.0), 0.0)
        })?;
        writeln!(
            w,
            "{run},{seed},{},{},{},{err:e},{}",
            a.n,
            a.sparsity,
            res.support.len(),
            res.sample_count
        )?;
    }
    w.flush()?;
    Ok(EXIT_OK)
}

fn cmd_bound(a: BoundArgs) -> CliResult<i32> {
    let ls = parse_range(&a.l_values)?;
    let rows = ls
        .iter()
        .map(|&l| theoretical_failure_bound(a.gamma_size, l, a.c).map(|b| (l, b)))
        .collect::<Result<Vec<_>>>()?;
    let mut w = output(&a.out)?;
    header(
        &mut *w,
        "experiment bound",
        None,
        &[("gamma_size", a.gamma_size.to_string()), ("c", a.c.to_string())],
    )?;
    writeln!(w, "L,theo_bound")?;
    for (l, b) in rows {
        writeln!(w, "{l},{b:.6}")?;
    }
    w.flush()?;
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges() {
        assert_eq!(parse_range("37..47").unwrap(), vec![37, 39, 41, 43, 45, 47]);
        assert_eq!(parse_range("1..4:1").unwrap(), vec![1, 2, 3, 4]);
        assert_eq!(parse_range("5,9, 11").unwrap(), vec![5, 9, 11]);
        assert!(parse_range("9..3").is_err());
        assert!(parse_range("a..b").is_err());
        assert!(parse_range("1..5:0").is_err());
    }

    #[test]
    fn samples_roundtrip() {
        let s = vec![
            vec![Complex64::new(0.1, -2.5), Complex64::new(1e-300, 3.0)],
            vec![Complex64::new(-0.0, 7.25)],
        ];
        let mut buf = Vec::new();
        write_samples(&mut buf, &s).unwrap();
        assert!(String::from_utf8(buf.clone()).unwrap().starts_with("lattice 0 M=2\n"));
        assert_eq!(read_samples(&buf[..]).unwrap(), s);
        assert!(read_samples("lattice 0 M=2\n1 2\n".as_bytes()).is_err());
        assert!(read_samples("1 2\n".as_bytes()).is_err());
    }

    #[test]
    fn exit_codes_follow_error_kind() {
        let cap: CliError = Error::Capacity {
            what: "x",
            requested: 2,
            cap: 1,
        }
        .into();
        assert_eq!(cap.code, EXIT_CAPACITY);
        assert_eq!(CliError::from(Error::invalid("x")).code, EXIT_VALIDATION);
    }
}
