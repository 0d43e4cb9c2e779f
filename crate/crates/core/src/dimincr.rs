//! Dimension-incremental sparse FFT.
//!
//! The support is found one coordinate at a time. Step 1 identifies the
//! values each coordinate takes in the support from line samples. Step 2
//! couples the first `t-1` coordinates with coordinate `t`, pruning the
//! product candidates with multi-lattice median detection while the
//! remaining coordinates are fixed at random values. Step 3 computes the
//! final coefficients on the identified set.

use num_complex::Complex64;
use rand::Rng;
use serde::Serialize;

use crate::detect::detect_topk;
use crate::dft::Dft;
use crate::error::{Error, Result};
use crate::freqset::{self, FreqSet};
use crate::lattice::{draw_config, Rank1Lattice};
use crate::polyeval::{SamplingOracle, Signal};
use crate::seed;

/// Default oversampling factor for lattice sizes.
pub const DEFAULT_C: f64 = 10.33;
/// Default cap on `|J_t|`.
pub const DEFAULT_PAIR_CAP: u128 = 10_000_000;

/// Search space of the sparse FFT. Grids and crosses are never materialized.
#[derive(Debug, Clone)]
pub enum Candidates {
    /// `[-n, n]^dim`.
    Grid {
        dim: usize,
        n: u32,
    },
    /// `{k : Π max(1, w_t |k_t|) <= n}` with positive weights.
    HyperbolicCross {
        n: u32,
        weights: Vec<f64>,
    },
    Set(FreqSet),
}

impl Candidates {
    pub fn dim(&self) -> usize {
        match self {
            Candidates::Grid { dim, .. } => *dim,
            Candidates::HyperbolicCross { weights, .. } => weights.len(),
            Candidates::Set(s) => s.dim(),
        }
    }

    pub fn cardinality(&self) -> Result<u128> {
        match self {
            Candidates::Grid { dim, n } => Ok(freqset::full_grid_cardinality(*dim, *n).unwrap_or(u128::MAX)),
            Candidates::HyperbolicCross { n, weights } => {
                freqset::hyperbolic_cross_cardinality(weights.len(), *n, weights)
            }
            Candidates::Set(s) => Ok(s.len() as u128),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Candidates::Grid { dim, .. } if *dim == 0 => Err(Error::invalid("dimension must be positive")),
            Candidates::HyperbolicCross { weights, .. } if weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) => {
                Err(Error::invalid("cross weights must be positive and finite"))
            }
            Candidates::HyperbolicCross { weights, .. } if weights.is_empty() => {
                Err(Error::invalid("dimension must be positive"))
            }
            Candidates::Set(s) if s.is_empty() => Err(Error::EmptySet),
            _ => Ok(()),
        }
    }

    /// Sorted values of coordinate `t` (0-based) over the set.
    pub fn coordinate_values(&self, t: usize) -> Result<Vec<i32>> {
        if t >= self.dim() {
            return Err(Error::invalid(format!("coordinate {t} out of range")));
        }
        Ok(match self {
            Candidates::Grid { n, .. } => (-(*n as i32)..=*n as i32).collect(),
            Candidates::HyperbolicCross { n, weights } => {
                let w = weights[t];
                let lim = (1..)
                    .take_while(|&k| (w * k as f64).max(1.0) <= *n as f64)
                    .last()
                    .unwrap_or(0);
                (-lim..=lim).collect()
            }
            Candidates::Set(s) => s.project(&[t])?.as_flat().to_vec(),
        })
    }

    /// Membership test for the projection onto the first `t` coordinates.
    pub fn prefix_test(&self, t: usize) -> Result<PrefixTest<'_>> {
        if t == 0 || t > self.dim() {
            return Err(Error::invalid(format!("prefix length {t} out of range")));
        }
        Ok(match self {
            Candidates::Grid { n, .. } => PrefixTest::Box(*n as i32),
            Candidates::HyperbolicCross { n, weights } => PrefixTest::Cross(*n as f64, &weights[..t]),
            Candidates::Set(s) if t == s.dim() => PrefixTest::Borrowed(s),
            Candidates::Set(s) => PrefixTest::Owned(s.project(&(0..t).collect::<Vec<_>>())?),
        })
    }
}

/// Membership in `P_{1..t}(Γ)`.
pub enum PrefixTest<'a> {
    Box(i32),
    /// A prefix of a cross element, padded with zeros, is a cross element.
    Cross(f64, &'a [f64]),
    Borrowed(&'a FreqSet),
    Owned(FreqSet),
}

impl PrefixTest<'_> {
    pub fn contains(&self, k: &[i32]) -> bool {
        match self {
            PrefixTest::Box(n) => k.iter().all(|x| x.abs() <= *n),
            PrefixTest::Cross(n, w) => {
                k.iter()
                    .zip(w.iter())
                    .map(|(&x, &wt)| (wt * x.unsigned_abs() as f64).max(1.0))
                    .product::<f64>()
                    <= *n
            }
            PrefixTest::Borrowed(s) => s.contains(k),
            PrefixTest::Owned(s) => s.contains(k),
        }
    }
}

/// Iteration count and failure budgets derived from `(s, d, δ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Schedule {
    pub r: usize,
    /// Budget of each identification call in Step 2.
    pub gamma_a: f64,
    /// Budget of the final coefficient computation.
    pub gamma: f64,
}

/// `r = ⌈2 s ln(3ds/δ)⌉`, `γ_A = δ/(3dr)`, `γ = δ/(3d)`.
pub fn choose_params(s: usize, d: usize, delta: f64) -> Result<Schedule> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::invalid(format!("delta must be positive, got {delta}")));
    }
    if s == 0 || d == 0 {
        return Err(Error::invalid("sparsity and dimension must be positive"));
    }
    let (sf, df) = (s as f64, d as f64);
    let r = (2.0 * sf * (3.0 * df * sf / delta).ln()).ceil().max(1.0) as usize;
    Ok(schedule_with_r(r, d, delta))
}

fn schedule_with_r(r: usize, d: usize, delta: f64) -> Schedule {
    let df = d as f64;
    Schedule {
        r,
        gamma_a: delta / (3.0 * df * r as f64),
        gamma: delta / (3.0 * df),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SfftParams {
    pub s: usize,
    pub s_local: usize,
    pub theta: f64,
    /// Overrides the derived number of detection iterations.
    pub r: Option<usize>,
    pub delta: f64,
    pub c: f64,
    /// Scales the lattice count of the Step 2 identification calls.
    pub l_scale: f64,
    pub pair_cap: u128,
    pub seed: u64,
}

impl SfftParams {
    pub fn new(s: usize, delta: f64, seed: u64) -> Self {
        Self {
            s,
            s_local: 2 * s,
            theta: 1e-12,
            r: None,
            delta,
            c: DEFAULT_C,
            l_scale: 1.0,
            pair_cap: DEFAULT_PAIR_CAP,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.s == 0 {
            return Err(Error::invalid("sparsity must be positive"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::invalid(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        if self.s_local < self.s {
            return Err(Error::invalid(format!(
                "s_local = {} is below s = {}",
                self.s_local, self.s
            )));
        }
        if !(self.theta >= 0.0) {
            return Err(Error::invalid("threshold must be nonnegative"));
        }
        if self.r == Some(0) {
            return Err(Error::invalid("at least one detection iteration is required"));
        }
        Ok(())
    }

    pub fn schedule(&self, d: usize) -> Result<Schedule> {
        let base = choose_params(self.s, d, self.delta)?;
        Ok(match self.r {
            Some(r) => schedule_with_r(r, d, self.delta),
            None => base,
        })
    }
}

/// Bookkeeping of one pipeline stage.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageRecord {
    pub step: u8,
    /// Coordinate (1-based) the stage worked on; 0 for the final step.
    pub t: usize,
    /// `K_t` in Step 1, `|J_t|` in Step 2, the candidate count in Step 3.
    pub candidates: usize,
    /// Size of the identified set after the stage.
    pub found: usize,
    pub lattices: usize,
    pub lattice_size: u64,
    pub samples: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SfftResult {
    pub support: FreqSet,
    pub coeffs: Vec<Complex64>,
    pub sample_count: u64,
    pub schedule: Schedule,
    pub stage_log: Vec<StageRecord>,
}

impl SfftResult {
    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn coeff(&self, k: &[i32]) -> Option<Complex64> {
        self.support.position(k).map(|i| self.coeffs[i])
    }
}

/// Coordinate values present in the support, read off `r` random line
/// samples of coordinate `t`.
pub fn step1_component<S: Signal>(
    oracle: &SamplingOracle<S>,
    gamma: &Candidates,
    t: usize,
    iterations: usize,
    s_local: usize,
    theta: f64,
    master_seed: u64,
) -> Result<Vec<i32>> {
    let d = gamma.dim();
    let values = gamma.coordinate_values(t)?;
    let (lo, hi) = (values[0], *values.last().unwrap());
    let k = (hi as i64 - lo as i64 + 1) as usize;
    let line = Rank1Lattice::new(vec![1 % k as i64], k as u64)?;
    let mut dft = Dft::new(k);
    let mut found: Vec<i32> = Vec::new();
    for i in 0..iterations {
        let mut rng = seed::stream(master_seed, &[1, t as u64, i as u64]);
        let base: Vec<f64> = (0..d).map(|_| rng.gen::<f64>()).collect();
        let mut g = oracle.sample_embedded(&line, &[t], &base)?;
        dft.forward_normalized(&mut g)?;
        // bin h collects every k_t ≡ h (mod K); [lo, hi] holds exactly one of them
        let mut bins: Vec<(i32, f64)> = values
            .iter()
            .map(|&v| (v, g[(v as i64).rem_euclid(k as i64) as usize].norm()))
            .filter(|&(_, mag)| mag >= theta)
            .collect();
        bins.sort_by(|a, b| b.1.total_cmp(&a.1));
        bins.truncate(s_local);
        found.extend(bins.into_iter().map(|(v, _)| v));
    }
    found.sort_unstable();
    found.dedup();
    Ok(found)
}

/// `(prev × cur) ∩ P_{1..t}(Γ)`, in lexicographic order.
pub fn pair_candidates(prev: &FreqSet, cur: &[i32], prefix: &PrefixTest<'_>, cap: u128) -> Result<FreqSet> {
    let product = prev.len() as u128 * cur.len() as u128;
    if product > cap {
        return Err(Error::Capacity {
            what: "paired candidate set",
            requested: product,
            cap,
        });
    }
    let t = prev.dim() + 1;
    let mut data = Vec::new();
    let mut k = vec![0i32; t];
    for a in prev.iter() {
        k[..t - 1].copy_from_slice(a);
        for &b in cur {
            k[t - 1] = b;
            if prefix.contains(&k) {
                data.extend_from_slice(&k);
            }
        }
    }
    let mut sorted = cur.to_vec();
    sorted.sort_unstable();
    if sorted == cur {
        Ok(FreqSet::from_sorted_unchecked(t, data))
    } else {
        FreqSet::from_flat(t, data)
    }
}

struct Identified {
    support: FreqSet,
    coeffs: Vec<Complex64>,
    lattices: usize,
    lattice_size: u64,
}

/// Draws lattices for `candidates` in the first `candidates.dim()`
/// coordinates, samples with the other coordinates held at `base`, and
/// runs thresholded top-k median detection.
#[allow(clippy::too_many_arguments)]
fn identify<S: Signal, R: Rng>(
    oracle: &SamplingOracle<S>,
    candidates: &FreqSet,
    base: &[f64],
    sparsity: usize,
    keep: usize,
    budget: f64,
    l_scale: f64,
    params: &SfftParams,
    rng: &mut R,
) -> Result<Identified> {
    let cfg = draw_config(candidates, sparsity, budget, 0.5, params.c, l_scale, rng)?;
    let coords: Vec<usize> = (0..candidates.dim()).collect();
    let samples = cfg
        .lattices
        .iter()
        .map(|lat| oracle.sample_embedded(lat, &coords, base))
        .collect::<Result<Vec<_>>>()?;
    let r = detect_topk(&samples, &cfg, candidates, keep, params.theta)?;
    Ok(Identified {
        support: r.detected,
        coeffs: r.coeffs.unwrap_or_default(),
        lattices: cfg.len(),
        lattice_size: cfg.lattices[0].size(),
    })
}

/// Runs the full pipeline. An empty identified set at any stage ends the
/// run early with an empty support.
pub fn sfft<S: Signal>(oracle: &SamplingOracle<S>, gamma: &Candidates, params: &SfftParams) -> Result<SfftResult> {
    gamma.validate()?;
    params.validate()?;
    let d = gamma.dim();
    if oracle.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: oracle.dim(),
        });
    }
    let schedule = params.schedule(d)?;
    let start = oracle.count();
    let mut log = Vec::new();
    let empty = |log: Vec<StageRecord>| SfftResult {
        support: FreqSet::empty(d),
        coeffs: Vec::new(),
        sample_count: oracle.count() - start,
        schedule,
        stage_log: log,
    };

    let mut components = Vec::with_capacity(d);
    for t in 0..d {
        let before = oracle.count();
        let found = step1_component(oracle, gamma, t, schedule.r, params.s_local, params.theta, params.seed)?;
        let values = gamma.coordinate_values(t)?;
        log.push(StageRecord {
            step: 1,
            t: t + 1,
            candidates: (values[values.len() - 1] as i64 - values[0] as i64 + 1) as usize,
            found: found.len(),
            lattices: schedule.r,
            lattice_size: (values[values.len() - 1] as i64 - values[0] as i64 + 1) as u64,
            samples: oracle.count() - before,
        });
        if found.is_empty() {
            return Ok(empty(log));
        }
        components.push(found);
    }

    let mut current = FreqSet::from_flat(1, components[0].clone())?;
    for t in 1..d {
        let before = oracle.count();
        let prefix = gamma.prefix_test(t + 1)?;
        let pairs = pair_candidates(&current, &components[t], &prefix, params.pair_cap)?;
        let last = t + 1 == d;
        let (rounds, keep) = if last {
            (1, params.s)
        } else {
            (schedule.r, params.s_local)
        };
        let mut union = FreqSet::empty(t + 1);
        let (mut lattices, mut lattice_size) = (0, 0);
        if !pairs.is_empty() {
            for i in 0..rounds {
                let mut rng = seed::stream(params.seed, &[2, t as u64, i as u64]);
                let mut base = vec![0.0; d];
                for v in base.iter_mut().skip(t + 1) {
                    *v = rng.gen::<f64>();
                }
                let sparsity = params.s_local.min(pairs.len());
                let found = identify(
                    oracle,
                    &pairs,
                    &base,
                    sparsity,
                    keep,
                    schedule.gamma_a,
                    params.l_scale,
                    params,
                    &mut rng,
                )?;
                lattices += found.lattices;
                lattice_size = found.lattice_size;
                union = union.union(&found.support)?;
            }
        }
        log.push(StageRecord {
            step: 2,
            t: t + 1,
            candidates: pairs.len(),
            found: union.len(),
            lattices,
            lattice_size,
            samples: oracle.count() - before,
        });
        if union.is_empty() {
            return Ok(empty(log));
        }
        current = union;
    }

    let before = oracle.count();
    let mut rng = seed::stream(params.seed, &[3]);
    // the reduced lattice count is meant for the pruning calls only; the
    // coefficients reported to the caller get the full count
    let fin = identify(
        oracle,
        &current,
        &vec![0.0; d],
        params.s,
        params.s,
        schedule.gamma,
        1.0,
        params,
        &mut rng,
    )?;
    log.push(StageRecord {
        step: 3,
        t: 0,
        candidates: current.len(),
        found: fin.support.len(),
        lattices: fin.lattices,
        lattice_size: fin.lattice_size,
        samples: oracle.count() - before,
    });
    Ok(SfftResult {
        support: fin.support,
        coeffs: fin.coeffs,
        sample_count: oracle.count() - start,
        schedule,
        stage_log: log,
    })
}
