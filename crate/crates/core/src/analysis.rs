//! Worst-case accounting of potential false positives and negatives, the
//! theoretical failure bound, and the repeated-trial experiment runner.
//!
//! The accounting runs median detection on the all-ones polynomial over the
//! support `I`. Every bin then holds an integer, namely the number of
//! elements of `I` aliasing onto it, so the median of a frequency tells how
//! often it collides with the support on a majority of lattices.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detect::{detect_and_compute, postprocess_r1l, DetectionResult};
use crate::error::{Error, Result};
use crate::freqset::{full_grid, hyperbolic_cross, random_subset, FreqSet, Population};
use crate::lattice::{next_valid_prime, random_generator, MultiLatticeConfig, Rank1Lattice};
use crate::polyeval::{SamplingOracle, SparsePoly};
use crate::seed;

/// Medians of the auxiliary polynomial are integers up to this tolerance.
pub const INTEGER_TOLERANCE: f64 = 1e-6;

/// Classification of one detection run on the all-ones polynomial.
#[derive(Debug, Clone)]
pub struct PfpPfn {
    /// Elements of `I` whose median is at least 2.
    pub pfn: FreqSet,
    /// Elements of `Γ \ I` that were detected with a median of at least 1.
    pub pfp: FreqSet,
    /// Frequencies whose median is not an admissible integer, or elements of
    /// `I` that went undetected. Neither can happen with exact arithmetic.
    pub anomalies: FreqSet,
    pub detection: DetectionResult,
}

impl PfpPfn {
    pub fn is_clean(&self) -> bool {
        self.pfn.is_empty() && self.pfp.is_empty()
    }
}

fn as_count(v: Complex64) -> Option<i64> {
    let r = v.re.round();
    ((v.re - r).abs() <= INTEGER_TOLERANCE && v.im.abs() <= INTEGER_TOLERANCE).then_some(r as i64)
}

/// Sorts the detection result of the all-ones polynomial into PFN, PFP and
/// anomalies.
pub fn classify(detection: DetectionResult, support: &FreqSet) -> Result<PfpPfn> {
    let coeffs = detection
        .coeffs
        .as_deref()
        .ok_or_else(|| Error::invalid("classification needs median coefficients"))?;
    let d = support.dim();
    let (mut pfn, mut pfp, mut bad) = (Vec::new(), Vec::new(), Vec::new());
    for (k, &c) in detection.detected.iter().zip(coeffs) {
        let inside = support.contains(k);
        match (as_count(c), inside) {
            (Some(1), true) | (Some(0), false) => {}
            (Some(n), true) if n >= 2 => pfn.extend_from_slice(k),
            (Some(n), false) if n >= 1 => pfp.extend_from_slice(k),
            _ => bad.extend_from_slice(k),
        }
    }
    // a support element always sees at least its own coefficient, so it
    // cannot go undetected
    for k in support.iter() {
        if !detection.detected.contains(k) {
            bad.extend_from_slice(k);
        }
    }
    Ok(PfpPfn {
        pfn: FreqSet::from_flat(d, pfn)?,
        pfp: FreqSet::from_flat(d, pfp)?,
        anomalies: FreqSet::from_flat(d, bad)?,
        detection,
    })
}

fn ones_samples(support: &FreqSet, config: &MultiLatticeConfig) -> Result<Vec<Vec<Complex64>>> {
    let oracle = SamplingOracle::new(SparsePoly::ones(support.clone()));
    config
        .lattices
        .iter()
        .map(|lat| oracle.sample_on_lattice(lat))
        .collect()
}

fn check_support(support: &FreqSet, gamma: &FreqSet, config: &MultiLatticeConfig) -> Result<()> {
    if support.dim() != gamma.dim() || config.dim() != gamma.dim() {
        return Err(Error::DimensionMismatch {
            expected: gamma.dim(),
            found: if support.dim() != gamma.dim() {
                support.dim()
            } else {
                config.dim()
            },
        });
    }
    if !support.is_subset(gamma) {
        return Err(Error::invalid("support must be a subset of the candidate set"));
    }
    Ok(())
}

/// Potential false negatives and positives of `config` for support `I`
/// within candidate set `Γ`.
pub fn pfp_pfn_count(support: &FreqSet, gamma: &FreqSet, config: &MultiLatticeConfig) -> Result<PfpPfn> {
    check_support(support, gamma, config)?;
    let samples = ones_samples(support, config)?;
    classify(detect_and_compute(&samples, config, gamma)?, support)
}

/// `|Γ| (c-1)^{-L(c-2)/(4c)}`, the failure probability bound of median
/// detection with `L` lattices of size above `c|I|`. Values above 1 carry
/// no information.
pub fn theoretical_failure_bound(gamma_size: f64, l: usize, c: f64) -> Result<f64> {
    if !(c > 2.0) || !c.is_finite() {
        return Err(Error::invalid(format!("c must exceed 2, got {c}")));
    }
    if !(gamma_size >= 0.0) {
        return Err(Error::invalid(format!(
            "candidate count must be nonnegative, got {gamma_size}"
        )));
    }
    Ok(gamma_size * (c - 1.0).powf(-(l as f64) * (c - 2.0) / (4.0 * c)))
}

/// Total number of samples, `Σ_ℓ M_ℓ`.
pub fn sample_budget(config: &MultiLatticeConfig) -> u64 {
    config.sample_count()
}

/// `37 s (ln|Γ| - ln δ)`, a sample count that suffices for recovery with
/// probability `1 - δ`.
pub fn guaranteed_sample_budget(sparsity: usize, gamma_size: f64, delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid(format!("delta must lie in (0, 1), got {delta}")));
    }
    if !(gamma_size >= 1.0) {
        return Err(Error::invalid(format!(
            "candidate count must be at least 1, got {gamma_size}"
        )));
    }
    Ok(37.0 * sparsity as f64 * (gamma_size.ln() - delta.ln()))
}

/// How the candidate set of a trial is produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GammaSpec {
    /// `size` distinct frequencies drawn uniformly from `[lo, hi]^dim`.
    RandomBox {
        dim: usize,
        lo: i32,
        hi: i32,
        size: usize,
    },
    Grid {
        dim: usize,
        n: u32,
    },
    HyperbolicCross {
        dim: usize,
        n: u32,
        weights: Vec<f64>,
    },
    File {
        path: PathBuf,
    },
}

/// How the support of a trial is produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SupportSpec {
    /// `size` distinct elements of the candidate set.
    RandomSubset {
        size: usize,
    },
    HyperbolicCross {
        n: u32,
        weights: Vec<f64>,
    },
    File {
        path: PathBuf,
    },
}

/// When lattice generators are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatticePolicy {
    /// Fresh generators for every trial.
    PerTrial,
    /// One configuration per `L`, shared by all its trials.
    PerL,
}

/// Choice of the common lattice size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MRule {
    /// Smallest prime above `lower` (default `c|I|`) with an injective
    /// reduction on the candidate set.
    NextValidPrime {
        lower: Option<f64>,
    },
    Fixed {
        m: u64,
    },
}

fn default_true() -> bool {
    true
}

/// Declarative description of a success-rate experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    #[serde(default)]
    pub name: String,
    pub gamma: GammaSpec,
    pub support: SupportSpec,
    /// Redraw a random candidate set in every trial instead of once.
    #[serde(default = "default_true")]
    pub redraw_gamma: bool,
    #[serde(default = "default_true")]
    pub redraw_support: bool,
    pub lattices: LatticePolicy,
    pub l_values: Vec<usize>,
    pub trials: usize,
    pub c: f64,
    pub m_rule: MRule,
    #[serde(default)]
    pub postprocess: bool,
    #[serde(default)]
    pub pfp_budgets: Vec<usize>,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv_out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub records_out: Option<PathBuf>,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 2.0) || !self.c.is_finite() {
            return Err(Error::invalid(format!("c must exceed 2, got {}", self.c)));
        }
        if let Some(&l) = self.l_values.iter().find(|&&l| l == 0 || l % 2 == 0) {
            return Err(Error::invalid(format!(
                "lattice counts must be odd and positive, got {l}"
            )));
        }
        match &self.gamma {
            GammaSpec::RandomBox { dim, lo, hi, size } => {
                if *dim == 0 || hi < lo || *size == 0 {
                    return Err(Error::invalid(
                        "random candidate box needs dim > 0, lo <= hi and size > 0",
                    ));
                }
            }
            GammaSpec::Grid { dim, .. } | GammaSpec::HyperbolicCross { dim, .. } if *dim == 0 => {
                return Err(Error::invalid("candidate set dimension must be positive"));
            }
            _ => {}
        }
        if let SupportSpec::RandomSubset { size: 0 } = self.support {
            return Err(Error::invalid("support size must be positive"));
        }
        match self.m_rule {
            MRule::Fixed { m } if m < 2 => Err(Error::invalid("lattice size must be at least 2")),
            MRule::NextValidPrime { lower: Some(x) } if !x.is_finite() => {
                Err(Error::invalid("prime lower bound must be finite"))
            }
            _ => Ok(()),
        }
    }
}

/// Outcome of one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    #[serde(rename = "L")]
    pub l: usize,
    pub trial: usize,
    /// Seed of the trial's own stream; reruns the trial in isolation.
    pub seed: u64,
    #[serde(rename = "M")]
    pub m: u64,
    pub gamma_size: usize,
    pub pfn_count: usize,
    pub pfp_count: usize,
    pub anomalies: usize,
    pub success_plain: bool,
    pub success_pfp_budget: BTreeMap<usize, bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub success_postprocessed: Option<bool>,
    pub sample_count: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_time: Option<f64>,
}

/// Per-`L` summary over all trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    #[serde(rename = "L")]
    pub l: usize,
    pub trials: usize,
    pub fail_rate: f64,
    pub fail_rate_postprocessed: Option<f64>,
    /// Failure rate when up to `b` potential false positives are tolerated.
    pub fail_rate_pfp_budget: BTreeMap<usize, f64>,
    pub max_pfn: usize,
    pub max_pfp: usize,
    pub theo_bound: f64,
    pub samples: u64,
}

impl AggregateRow {
    pub const CSV_HEADER: &'static str =
        "L,trials,fail_rate,fail_rate_postprocessed,max_pfn,max_pfp,theo_bound,samples";

    pub fn csv_line(&self) -> String {
        let post = self
            .fail_rate_postprocessed
            .map_or_else(|| "NA".to_string(), |v| v.to_string());
        format!(
            "{},{},{},{},{},{},{:e},{}",
            self.l, self.trials, self.fail_rate, post, self.max_pfn, self.max_pfp, self.theo_bound, self.samples
        )
    }
}

#[derive(Debug, Clone, Default)]
pub struct ExperimentOutput {
    pub records: Vec<TrialRecord>,
    pub rows: Vec<AggregateRow>,
}

/// Execution knobs that do not change results.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Worker threads; `None` uses every available core.
    pub threads: Option<usize>,
    /// Record per-trial wall-clock time.
    pub timing: bool,
}

fn load_set(path: &PathBuf) -> Result<FreqSet> {
    let f = std::fs::File::open(path)?;
    FreqSet::read_text(std::io::BufReader::new(f))
}

/// Candidate sets and supports that do not change between trials.
struct FixedSets {
    gamma: Option<FreqSet>,
    support: Option<FreqSet>,
}

impl ExperimentSpec {
    fn gamma_is_random(&self) -> bool {
        matches!(self.gamma, GammaSpec::RandomBox { .. })
    }

    fn support_is_random(&self) -> bool {
        matches!(self.support, SupportSpec::RandomSubset { .. })
    }

    fn draw_gamma<R: Rng>(&self, rng: &mut R) -> Result<FreqSet> {
        match &self.gamma {
            GammaSpec::RandomBox { dim, lo, hi, size } => random_subset(
                Population::Box {
                    dim: *dim,
                    lo: *lo,
                    hi: *hi,
                },
                *size,
                rng,
            ),
            GammaSpec::Grid { dim, n } => full_grid(*dim, *n),
            GammaSpec::HyperbolicCross { dim, n, weights } => hyperbolic_cross(*dim, *n, weights),
            GammaSpec::File { path } => load_set(path),
        }
    }

    fn draw_support<R: Rng>(&self, gamma: &FreqSet, rng: &mut R) -> Result<FreqSet> {
        match &self.support {
            SupportSpec::RandomSubset { size } => random_subset(Population::Set(gamma), *size, rng),
            SupportSpec::HyperbolicCross { n, weights } => hyperbolic_cross(gamma.dim(), *n, weights),
            SupportSpec::File { path } => load_set(path),
        }
    }

    fn fixed_sets(&self) -> Result<FixedSets> {
        let gamma = if self.gamma_is_random() && self.redraw_gamma {
            None
        } else {
            Some(self.draw_gamma(&mut seed::stream(self.seed, &[0, 0]))?)
        };
        let support = match &gamma {
            Some(g) if !(self.support_is_random() && self.redraw_support) => {
                Some(self.draw_support(g, &mut seed::stream(self.seed, &[0, 1]))?)
            }
            _ => None,
        };
        Ok(FixedSets { gamma, support })
    }

    fn lattice_size(&self, gamma: &FreqSet, support_len: usize) -> Result<u64> {
        match self.m_rule {
            MRule::Fixed { m } => Ok(m),
            MRule::NextValidPrime { lower } => next_valid_prime(gamma, lower.unwrap_or(self.c * support_len as f64)),
        }
    }

    /// `L` uniform generators of size `m`. The size is deliberately not
    /// checked against `c|I|`; probing small sizes is part of the sweep.
    fn config_for<R: Rng>(
        &self,
        d: usize,
        l: usize,
        m: u64,
        support_len: usize,
        rng: &mut R,
    ) -> Result<MultiLatticeConfig> {
        let lattices = (0..l)
            .map(|_| Rank1Lattice::new(random_generator(d, m, rng), m))
            .collect::<Result<Vec<_>>>()?;
        MultiLatticeConfig::from_lattices(lattices, 0.5, self.c, 0.5, support_len.max(1))
    }
}

struct TrialOutcome {
    m: u64,
    gamma_size: usize,
    counts: Option<PfpPfn>,
    postprocessed: Option<bool>,
    samples: u64,
}

fn run_trial(
    spec: &ExperimentSpec,
    fixed: &FixedSets,
    shared: Option<&MultiLatticeConfig>,
    l: usize,
    rng: &mut ChaCha8Rng,
) -> Result<TrialOutcome> {
    let drawn_gamma;
    let gamma = match &fixed.gamma {
        Some(g) => g,
        None => {
            drawn_gamma = spec.draw_gamma(rng)?;
            &drawn_gamma
        }
    };
    let drawn_support;
    let support = match &fixed.support {
        Some(s) => s,
        None => {
            drawn_support = spec.draw_support(gamma, rng)?;
            &drawn_support
        }
    };
    let owned;
    let config = match shared {
        Some(c) => c,
        None => {
            let m = spec.lattice_size(gamma, support.len())?;
            owned = spec.config_for(gamma.dim(), l, m, support.len(), rng)?;
            &owned
        }
    };
    check_support(support, gamma, config)?;
    let samples = ones_samples(support, config)?;
    let det = detect_and_compute(&samples, config, gamma)?;
    let counts = classify(det, support)?;
    // postprocessing is only meaningful without potential false negatives
    let postprocessed = if spec.postprocess {
        Some(
            counts.pfn.is_empty()
                && counts.anomalies.is_empty()
                && postprocess_r1l(&counts.detection, &samples, config)?.detected == *support,
        )
    } else {
        None
    };
    Ok(TrialOutcome {
        m: config.lattices[0].size(),
        gamma_size: gamma.len(),
        samples: sample_budget(config),
        counts: Some(counts),
        postprocessed,
    })
}

fn trial_seed(master: u64, l: usize, trial: usize) -> u64 {
    seed::stream(master, &[1, l as u64, trial as u64]).gen()
}

/// Runs every trial of every `L` and aggregates the results. Per-trial
/// errors are recorded and counted as failures; the sweep continues.
pub fn run_success_experiment(spec: &ExperimentSpec, opts: RunOptions) -> Result<ExperimentOutput> {
    spec.validate()?;
    if spec.trials == 0 || spec.l_values.is_empty() {
        return Ok(ExperimentOutput::default());
    }
    let fixed = spec.fixed_sets()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    let mut out = ExperimentOutput::default();
    for &l in &spec.l_values {
        let shared = match spec.lattices {
            LatticePolicy::PerTrial => None,
            LatticePolicy::PerL => Some(shared_config(spec, &fixed, l)?),
        };
        let records: Vec<TrialRecord> = pool.install(|| {
            (0..spec.trials)
                .into_par_iter()
                .map(|trial| {
                    let seed = trial_seed(spec.seed, l, trial);
                    let start = Instant::now();
                    let res = run_trial(spec, &fixed, shared.as_ref(), l, &mut ChaCha8Rng::seed_from_u64(seed));
                    let wall = opts.timing.then(|| start.elapsed().as_secs_f64());
                    record(spec, l, trial, seed, res, wall)
                })
                .collect()
        });
        out.rows.push(aggregate(spec, l, &records, &fixed)?);
        out.records.extend(records);
    }
    Ok(out)
}

/// Under the per-`L` policy the size is chosen for the candidate set of the
/// first trial, since the configuration is drawn before any other trial.
fn shared_config(spec: &ExperimentSpec, fixed: &FixedSets, l: usize) -> Result<MultiLatticeConfig> {
    let (gamma, support_len) = match (&fixed.gamma, &fixed.support) {
        (Some(g), Some(s)) => (g.clone(), s.len()),
        _ => {
            let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(spec.seed, l, 0));
            let g = match &fixed.gamma {
                Some(g) => g.clone(),
                None => spec.draw_gamma(&mut rng)?,
            };
            let n = match &fixed.support {
                Some(s) => s.len(),
                None => spec.draw_support(&g, &mut rng)?.len(),
            };
            (g, n)
        }
    };
    let m = spec.lattice_size(&gamma, support_len)?;
    spec.config_for(
        gamma.dim(),
        l,
        m,
        support_len,
        &mut seed::stream(spec.seed, &[2, l as u64]),
    )
}

fn record(
    spec: &ExperimentSpec,
    l: usize,
    trial: usize,
    seed: u64,
    res: Result<TrialOutcome>,
    wall_time: Option<f64>,
) -> TrialRecord {
    let mut rec = TrialRecord {
        l,
        trial,
        seed,
        m: 0,
        gamma_size: 0,
        pfn_count: 0,
        pfp_count: 0,
        anomalies: 0,
        success_plain: false,
        success_pfp_budget: spec.pfp_budgets.iter().map(|&b| (b, false)).collect(),
        success_postprocessed: spec.postprocess.then_some(false),
        sample_count: 0,
        error: None,
        wall_time,
    };
    match res {
        Err(e) => rec.error = Some(e.to_string()),
        Ok(o) => {
            let c = o.counts.expect("trial outcome carries counts");
            rec.m = o.m;
            rec.gamma_size = o.gamma_size;
            rec.sample_count = o.samples;
            rec.pfn_count = c.pfn.len();
            rec.pfp_count = c.pfp.len();
            rec.anomalies = c.anomalies.len();
            let sound = c.anomalies.is_empty() && c.pfn.is_empty();
            rec.success_plain = sound && c.pfp.is_empty();
            for (&b, ok) in rec.success_pfp_budget.iter_mut() {
                *ok = sound && c.pfp.len() <= b;
            }
            rec.success_postprocessed = o.postprocessed;
        }
    }
    rec
}

fn aggregate(spec: &ExperimentSpec, l: usize, records: &[TrialRecord], fixed: &FixedSets) -> Result<AggregateRow> {
    let n = records.len();
    let rate = |pred: &dyn Fn(&TrialRecord) -> bool| records.iter().filter(|r| !pred(r)).count() as f64 / n as f64;
    let gamma_size = match (&fixed.gamma, &spec.gamma) {
        (Some(g), _) => g.len(),
        (None, GammaSpec::RandomBox { size, .. }) => *size,
        (None, _) => records.iter().map(|r| r.gamma_size).max().unwrap_or(0),
    };
    Ok(AggregateRow {
        l,
        trials: n,
        fail_rate: rate(&|r| r.success_plain),
        fail_rate_postprocessed: spec
            .postprocess
            .then(|| rate(&|r| r.success_postprocessed == Some(true))),
        fail_rate_pfp_budget: spec
            .pfp_budgets
            .iter()
            .map(|&b| (b, rate(&|r| r.success_pfp_budget.get(&b) == Some(&true))))
            .collect(),
        max_pfn: records.iter().map(|r| r.pfn_count).max().unwrap_or(0),
        max_pfp: records.iter().map(|r| r.pfp_count).max().unwrap_or(0),
        theo_bound: theoretical_failure_bound(gamma_size as f64, l, spec.c)?,
        samples: records.iter().map(|r| r.sample_count).max().unwrap_or(0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::Rank1Lattice;
    use proptest::prelude::*;
    use rand::Rng;

    fn cfg(zs: &[Vec<i64>], m: u64) -> MultiLatticeConfig {
        let lats = zs.iter().map(|z| Rank1Lattice::new(z.clone(), m).unwrap()).collect();
        MultiLatticeConfig::from_lattices(lats, 0.5, 10.33, 0.5, 1).unwrap()
    }

    fn set(d: usize, rows: &[&[i32]]) -> FreqSet {
        FreqSet::from_rows(d, rows.iter().copied()).unwrap()
    }

    /// Alias counts enumerated directly from residues.
    fn brute(support: &FreqSet, gamma: &FreqSet, c: &MultiLatticeConfig) -> (Vec<Vec<i32>>, Vec<Vec<i32>>) {
        let (mut pfn, mut pfp) = (Vec::new(), Vec::new());
        let l = c.len();
        for k in gamma.iter() {
            let mut counts: Vec<usize> = c
                .lattices
                .iter()
                .map(|lat| support.iter().filter(|j| lat.residue(j) == lat.residue(k)).count())
                .collect();
            let nonzero = counts.iter().filter(|&&n| n > 0).count();
            if 2 * nonzero < l {
                continue;
            }
            counts.sort_unstable();
            let med = counts[l / 2];
            if support.contains(k) && med >= 2 {
                pfn.push(k.to_vec());
            } else if !support.contains(k) && med >= 1 {
                pfp.push(k.to_vec());
            }
        }
        (pfn, pfp)
    }

    #[test]
    fn single_frequency_has_no_pfn() {
        let gamma = full_grid(2, 3).unwrap();
        let support = set(2, &[&[1, -2]]);
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let zs: Vec<Vec<i64>> = (0..5).map(|_| random_generator(2, 11, &mut rng)).collect();
            let r = pfp_pfn_count(&support, &gamma, &cfg(&zs, 11)).unwrap();
            assert!(r.pfn.is_empty());
            assert!(r.anomalies.is_empty());
        }
    }

    #[test]
    fn zero_generators_alias_everything() {
        let gamma = full_grid(2, 2).unwrap();
        let support = set(2, &[&[0, 1], &[1, 1], &[-2, 0]]);
        let r = pfp_pfn_count(&support, &gamma, &cfg(&vec![vec![0, 0]; 3], 7)).unwrap();
        assert_eq!(r.pfn, support);
        assert_eq!(r.pfp, gamma.difference(&support).unwrap());
        assert!(r.anomalies.is_empty());
        assert!(!r.is_clean());
    }

    #[test]
    fn support_outside_gamma_is_rejected() {
        let gamma = full_grid(1, 2).unwrap();
        let support = set(1, &[&[5]]);
        assert!(pfp_pfn_count(&support, &gamma, &cfg(&[vec![1]], 11)).is_err());
    }

    #[test]
    fn bound_values() {
        let b = |l| theoretical_failure_bound(1e7, l, 10.33).unwrap();
        assert!((b(37) - 0.583).abs() < 1e-3, "{}", b(37));
        assert!(b(41) <= 0.10);
        assert_eq!(theoretical_failure_bound(123.0, 0, 10.33).unwrap(), 123.0);
        assert!(theoretical_failure_bound(1e7, 37, 2.0).is_err());
    }

    #[test]
    fn budgets() {
        let want = 37.0 * 1000.0 * ((1e7f64).ln() + 2f64.ln());
        let got = guaranteed_sample_budget(1000, 1e7, 0.5).unwrap();
        assert!((got - want).abs() < 1e-6 * want);
        assert!((got - 6.22e5).abs() < 0.01e5);
        assert_eq!(sample_budget(&cfg(&[vec![1, 3]], 101)), 101);
        assert_eq!(sample_budget(&cfg(&[vec![1, 3], vec![2, 5], vec![0, 1]], 101)), 303);
    }

    fn small_spec(policy: LatticePolicy) -> ExperimentSpec {
        ExperimentSpec {
            name: "unit".into(),
            gamma: GammaSpec::RandomBox {
                dim: 2,
                lo: -30,
                hi: 30,
                size: 400,
            },
            support: SupportSpec::RandomSubset { size: 12 },
            redraw_gamma: true,
            redraw_support: true,
            lattices: policy,
            l_values: vec![1, 3, 5, 9],
            trials: 25,
            c: 10.33,
            m_rule: MRule::NextValidPrime { lower: None },
            postprocess: true,
            pfp_budgets: vec![0, 2],
            seed: 99,
            csv_out: None,
            records_out: None,
        }
    }

    #[test]
    fn experiment_is_deterministic_across_thread_counts() {
        for policy in [LatticePolicy::PerTrial, LatticePolicy::PerL] {
            let spec = small_spec(policy);
            let one = run_success_experiment(
                &spec,
                RunOptions {
                    threads: Some(1),
                    timing: false,
                },
            )
            .unwrap();
            let two = run_success_experiment(
                &spec,
                RunOptions {
                    threads: Some(2),
                    timing: false,
                },
            )
            .unwrap();
            assert_eq!(one.records, two.records);
            assert_eq!(one.rows, two.rows);
            assert_eq!(one.rows.len(), 4);
            assert_eq!(one.records.len(), 100);
        }
    }

    #[test]
    fn experiment_invariants() {
        let out = run_success_experiment(&small_spec(LatticePolicy::PerTrial), RunOptions::default()).unwrap();
        for r in &out.records {
            assert!(r.error.is_none(), "{:?}", r.error);
            assert_eq!(r.anomalies, 0);
            if r.success_plain {
                assert!(r.success_pfp_budget.values().all(|&b| b));
                assert_eq!(r.success_postprocessed, Some(true));
            }
            assert!(r.wall_time.is_none());
        }
        for row in &out.rows {
            assert!(row.fail_rate_postprocessed.unwrap() <= row.fail_rate);
            assert_eq!(row.fail_rate_pfp_budget[&0], row.fail_rate);
            assert!(row.fail_rate_pfp_budget[&2] <= row.fail_rate);
        }
        // a single lattice of this size aliases often, nine rarely
        let rates: Vec<f64> = out.rows.iter().map(|r| r.fail_rate).collect();
        assert!(rates[0] > rates[3], "{rates:?}");
    }

    #[test]
    fn zero_trials_give_empty_output() {
        let mut spec = small_spec(LatticePolicy::PerTrial);
        spec.trials = 0;
        let out = run_success_experiment(&spec, RunOptions::default()).unwrap();
        assert!(out.records.is_empty() && out.rows.is_empty());
    }

    #[test]
    fn spec_roundtrips_through_json() {
        let spec = small_spec(LatticePolicy::PerL);
        let text = serde_json::to_string(&spec).unwrap();
        assert_eq!(serde_json::from_str::<ExperimentSpec>(&text).unwrap(), spec);
        let mut bad = spec.clone();
        bad.l_values = vec![4];
        assert!(run_success_experiment(&bad, RunOptions::default()).is_err());
    }

    #[test]
    fn csv_line_format() {
        let row = AggregateRow {
            l: 9,
            trials: 10,
            fail_rate: 0.5,
            fail_rate_postprocessed: None,
            fail_rate_pfp_budget: BTreeMap::new(),
            max_pfn: 1,
            max_pfp: 2,
            theo_bound: 0.25,
            samples: 99,
        };
        assert_eq!(row.csv_line(), "9,10,0.5,NA,1,2,2.5e-1,99");
        assert_eq!(
            AggregateRow::CSV_HEADER.split(',').count(),
            row.csv_line().split(',').count()
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]
        #[test]
        fn matches_brute_force(
            d in 1usize..=3,
            m_idx in 0usize..6,
            l in prop::sample::select(vec![1usize, 3, 5]),
            seed in any::<u64>(),
        ) {
            let m = [5u64, 7, 11, 13, 29, 31][m_idx];
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let gsize = rng.gen_range(1..=64usize).min(5usize.pow(d as u32));
            let gamma = random_subset(Population::Box { dim: d, lo: -2, hi: 2 }, gsize, &mut rng).unwrap();
            let isize = rng.gen_range(1..=8usize).min(gamma.len());
            let support = random_subset(Population::Set(&gamma), isize, &mut rng).unwrap();
            let zs: Vec<Vec<i64>> = (0..l).map(|_| random_generator(d, m, &mut rng)).collect();
            let c = cfg(&zs, m);
            let r = pfp_pfn_count(&support, &gamma, &c).unwrap();
            let (pfn, pfp) = brute(&support, &gamma, &c);
            prop_assert!(r.anomalies.is_empty());
            prop_assert_eq!(r.pfn.iter().map(|k| k.to_vec()).collect::<Vec<_>>(), pfn);
            prop_assert_eq!(r.pfp.iter().map(|k| k.to_vec()).collect::<Vec<_>>(), pfp);
            prop_assert!(r.pfn.is_subset(&support));
            prop_assert!(r.pfp.intersection(&support).unwrap().is_empty());
        }
    }
}
