//! Frequency identification from samples along multiple rank-1 lattices.
//!
//! Every lattice sample vector is transformed once. The estimate of `p̂_k`
//! on lattice `ℓ` is the DFT bin at the residue `k·z_ℓ mod M_ℓ`, which holds
//! the sum of all coefficients aliasing onto that bin. A frequency is
//! detected when enough lattices report a nonzero bin, and its coefficient
//! is the componentwise median of the per-lattice estimates.

use std::collections::HashMap;

use num_complex::Complex64;

use crate::dft::Dft;
use crate::error::{Error, Result};
use crate::freqset::FreqSet;
use crate::lattice::MultiLatticeConfig;

/// Magnitude threshold below which a DFT bin counts as zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZeroTest {
    pub theta_zero: f64,
}

impl ZeroTest {
    pub fn new(theta_zero: f64) -> Result<Self> {
        if !(theta_zero >= 0.0) || !theta_zero.is_finite() {
            return Err(Error::invalid(format!(
                "zero threshold must be finite and nonnegative, got {theta_zero}"
            )));
        }
        Ok(Self { theta_zero })
    }

    /// `max(1e-12, 1e-10 · median_ℓ RMS(samples_ℓ))`.
    pub fn from_samples(samples: &[Vec<Complex64>]) -> Self {
        let mut rms: Vec<f64> = samples
            .iter()
            .filter(|s| !s.is_empty())
            .map(|s| (s.iter().map(|v| v.norm_sqr()).sum::<f64>() / s.len() as f64).sqrt())
            .collect();
        let med = if rms.is_empty() {
            0.0
        } else {
            rms.sort_by(f64::total_cmp);
            let n = rms.len();
            if n % 2 == 1 {
                rms[n / 2]
            } else {
                0.5 * (rms[n / 2 - 1] + rms[n / 2])
            }
        };
        Self {
            theta_zero: (1e-10 * med).max(1e-12),
        }
    }

    #[inline]
    pub fn is_nonzero(&self, v: Complex64) -> bool {
        // squared magnitudes decide unless close to the threshold, where
        // the exact modulus does
        let q = v.norm_sqr();
        let t2 = self.theta_zero * self.theta_zero;
        if q > 2.0 * t2 {
            true
        } else if q < 0.5 * t2 {
            false
        } else {
            v.norm() > self.theta_zero
        }
    }
}

/// Outcome of one identification run on a candidate set.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionResult {
    /// The detected frequencies, a subset of the candidate set.
    pub detected: FreqSet,
    /// Coefficients aligned with the rows of `detected`, when computed.
    pub coeffs: Option<Vec<Complex64>>,
    /// Number of lattices with a nonzero bin, aligned with `detected`.
    pub hits: Vec<u32>,
    pub theta_zero: f64,
}

impl DetectionResult {
    pub fn len(&self) -> usize {
        self.detected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.detected.is_empty()
    }

    pub fn coeff(&self, k: &[i32]) -> Option<Complex64> {
        let i = self.detected.position(k)?;
        self.coeffs.as_ref().map(|c| c[i])
    }
}

/// Normalized DFTs of all lattice sample vectors.
pub struct LatticeSpectra<'a> {
    config: &'a MultiLatticeConfig,
    spectra: Vec<Vec<Complex64>>,
}

impl<'a> LatticeSpectra<'a> {
    pub fn compute(samples: &[Vec<Complex64>], config: &'a MultiLatticeConfig) -> Result<Self> {
        if samples.len() != config.len() {
            return Err(Error::LengthMismatch {
                expected: config.len(),
                found: samples.len(),
            });
        }
        let mut plans: HashMap<u64, Dft> = HashMap::new();
        let mut spectra = Vec::with_capacity(samples.len());
        for (s, lat) in samples.iter().zip(&config.lattices) {
            let m = lat.size();
            if s.len() as u64 != m {
                return Err(Error::LengthMismatch {
                    expected: m as usize,
                    found: s.len(),
                });
            }
            let mut buf = s.clone();
            plans
                .entry(m)
                .or_insert_with(|| Dft::new(m as usize))
                .forward_normalized(&mut buf)?;
            spectra.push(buf);
        }
        Ok(Self { config, spectra })
    }

    pub fn config(&self) -> &MultiLatticeConfig {
        self.config
    }

    /// Estimates `p̂_k^{(ℓ)}` for all lattices, written into `out`.
    #[inline]
    pub fn gather(&self, k: &[i32], out: &mut [Complex64]) {
        for ((o, lat), spec) in out.iter_mut().zip(&self.config.lattices).zip(&self.spectra) {
            *o = spec[lat.residue(k) as usize];
        }
    }

    fn check_candidates(&self, gamma: &FreqSet) -> Result<()> {
        if gamma.dim() != self.config.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.config.dim(),
                found: gamma.dim(),
            });
        }
        Ok(())
    }
}

/// Per-lattice coefficient estimates: row `i` holds `(p̂_k^{(ℓ)})_ℓ` for the
/// `i`-th element `k` of `gamma`.
pub fn per_lattice_coefficients(
    samples: &[Vec<Complex64>],
    config: &MultiLatticeConfig,
    gamma: &FreqSet,
) -> Result<Vec<Vec<Complex64>>> {
    let spectra = LatticeSpectra::compute(samples, config)?;
    spectra.check_candidates(gamma)?;
    Ok(gamma
        .iter()
        .map(|k| {
            let mut v = vec![Complex64::new(0.0, 0.0); config.len()];
            spectra.gather(k, &mut v);
            v
        })
        .collect())
}

/// Median of an odd-length list, by full sort.
fn median_odd(v: &mut [f64]) -> f64 {
    v.sort_unstable_by(f64::total_cmp);
    v[v.len() / 2]
}

/// Componentwise median of complex values.
pub fn complex_median(values: &[Complex64]) -> Complex64 {
    assert!(values.len() % 2 == 1, "median needs an odd number of values");
    let mut re: Vec<f64> = values.iter().map(|v| v.re).collect();
    let mut im: Vec<f64> = values.iter().map(|v| v.im).collect();
    Complex64::new(median_odd(&mut re), median_odd(&mut im))
}

fn scan(spectra: &LatticeSpectra<'_>, gamma: &FreqSet, zero: ZeroTest, medians: bool) -> Result<DetectionResult> {
    spectra.check_candidates(gamma)?;
    let cfg = spectra.config();
    let l = cfg.len();
    let need = cfg.nu * l as f64;
    let mut vals = vec![Complex64::new(0.0, 0.0); l];
    let mut re = vec![0.0; l];
    let mut im = vec![0.0; l];
    let mut data = Vec::new();
    let mut hits = Vec::new();
    let mut coeffs = Vec::new();
    // a frequency is dropped as soon as a majority of nonzero bins is out
    // of reach, which settles most candidates after a few lattices
    let max_misses = l - (need.ceil() as usize).min(l);
    'cand: for k in gamma.iter() {
        let mut misses = 0;
        for ((v, lat), spec) in vals.iter_mut().zip(&cfg.lattices).zip(&spectra.spectra) {
            *v = spec[lat.residue(k) as usize];
            if !zero.is_nonzero(*v) {
                misses += 1;
                if misses > max_misses {
                    continue 'cand;
                }
            }
        }
        let h = l - misses;
        data.extend_from_slice(k);
        hits.push(h as u32);
        if medians {
            for ((r, i), v) in re.iter_mut().zip(im.iter_mut()).zip(&vals) {
                *r = v.re;
                *i = v.im;
            }
            coeffs.push(Complex64::new(median_odd(&mut re), median_odd(&mut im)));
        }
    }
    Ok(DetectionResult {
        detected: FreqSet::from_sorted_unchecked(gamma.dim(), data),
        coeffs: medians.then_some(coeffs),
        hits,
        theta_zero: zero.theta_zero,
    })
}

fn require_median_config(config: &MultiLatticeConfig) -> Result<()> {
    if config.len() % 2 == 0 {
        return Err(Error::invalid(format!(
            "median detection needs an odd number of lattices, got {}",
            config.len()
        )));
    }
    if config.nu != 0.5 {
        return Err(Error::invalid(format!(
            "median detection needs nu = 1/2, got {}",
            config.nu
        )));
    }
    Ok(())
}

/// Classification only: `k` is detected when at least `ν·L` lattices
/// report a nonzero bin at its residue.
pub fn detect_frequencies(
    samples: &[Vec<Complex64>],
    config: &MultiLatticeConfig,
    gamma: &FreqSet,
    zero: ZeroTest,
) -> Result<DetectionResult> {
    let spectra = LatticeSpectra::compute(samples, config)?;
    scan(&spectra, gamma, zero, false)
}

/// Classification plus median coefficients, with the default zero test.
pub fn detect_and_compute(
    samples: &[Vec<Complex64>],
    config: &MultiLatticeConfig,
    gamma: &FreqSet,
) -> Result<DetectionResult> {
    detect_and_compute_with(samples, config, gamma, ZeroTest::from_samples(samples))
}

pub fn detect_and_compute_with(
    samples: &[Vec<Complex64>],
    config: &MultiLatticeConfig,
    gamma: &FreqSet,
    zero: ZeroTest,
) -> Result<DetectionResult> {
    require_median_config(config)?;
    let spectra = LatticeSpectra::compute(samples, config)?;
    scan(&spectra, gamma, zero, true)
}

/// Median detection restricted to coefficients of magnitude at least
/// `theta`, keeping the `s_tilde` largest. Ties in magnitude keep the
/// lexicographically smaller frequency.
pub fn detect_topk(
    samples: &[Vec<Complex64>],
    config: &MultiLatticeConfig,
    gamma: &FreqSet,
    s_tilde: usize,
    theta: f64,
) -> Result<DetectionResult> {
    detect_topk_with(samples, config, gamma, s_tilde, theta, ZeroTest::from_samples(samples))
}

pub fn detect_topk_with(
    samples: &[Vec<Complex64>],
    config: &MultiLatticeConfig,
    gamma: &FreqSet,
    s_tilde: usize,
    theta: f64,
    zero: ZeroTest,
) -> Result<DetectionResult> {
    if !(theta >= 0.0) {
        return Err(Error::invalid(format!("threshold must be nonnegative, got {theta}")));
    }
    let full = detect_and_compute_with(samples, config, gamma, zero)?;
    Ok(truncate_topk(full, s_tilde, theta))
}

pub(crate) fn truncate_topk(full: DetectionResult, s_tilde: usize, theta: f64) -> DetectionResult {
    let coeffs = full.coeffs.as_deref().expect("median result carries coefficients");
    let mut order: Vec<usize> = (0..full.len()).filter(|&i| coeffs[i].norm() >= theta).collect();
    // stable: equal magnitudes stay in lexicographic order
    order.sort_by(|&a, &b| coeffs[b].norm().total_cmp(&coeffs[a].norm()));
    order.truncate(s_tilde);
    order.sort_unstable();
    select(&full, &order)
}

fn select(full: &DetectionResult, keep: &[usize]) -> DetectionResult {
    let dim = full.detected.dim();
    let mut data = Vec::with_capacity(keep.len() * dim);
    for &i in keep {
        data.extend_from_slice(full.detected.row(i));
    }
    DetectionResult {
        detected: FreqSet::from_sorted_unchecked(dim, data),
        coeffs: full.coeffs.as_ref().map(|c| keep.iter().map(|&i| c[i]).collect()),
        hits: keep.iter().map(|&i| full.hits[i]).collect(),
        theta_zero: full.theta_zero,
    }
}

/// Refines median coefficients using lattices on which a detected frequency
/// has a residue no other detected frequency shares. There the bin holds
/// that frequency alone (within the detected set), so the average over such
/// lattices replaces the median. Frequencies whose refined coefficient is
/// not above the zero threshold are dropped.
pub fn postprocess_r1l(
    result: &DetectionResult,
    samples: &[Vec<Complex64>],
    config: &MultiLatticeConfig,
) -> Result<DetectionResult> {
    let medians = result
        .coeffs
        .as_ref()
        .ok_or_else(|| Error::invalid("postprocessing needs median coefficients"))?;
    let spectra = LatticeSpectra::compute(samples, config)?;
    spectra.check_candidates(&result.detected)?;
    let n = result.len();
    let mut sum = vec![Complex64::new(0.0, 0.0); n];
    let mut count = vec![0u32; n];
    let mut residues = vec![0u64; n];
    let mut multiplicity: HashMap<u64, u32> = HashMap::with_capacity(n);
    for (lat, spec) in config.lattices.iter().zip(&spectra.spectra) {
        multiplicity.clear();
        for (i, k) in result.detected.iter().enumerate() {
            residues[i] = lat.residue(k);
            *multiplicity.entry(residues[i]).or_insert(0) += 1;
        }
        for i in 0..n {
            if multiplicity[&residues[i]] == 1 {
                sum[i] += spec[residues[i] as usize];
                count[i] += 1;
            }
        }
    }
    let refined: Vec<Complex64> = (0..n)
        .map(|i| {
            if count[i] > 0 {
                sum[i] / count[i] as f64
            } else {
                medians[i]
            }
        })
        .collect();
    let keep: Vec<usize> = (0..n).filter(|&i| refined[i].norm() > result.theta_zero).collect();
    let mut out = select(result, &keep);
    out.coeffs = Some(keep.iter().map(|&i| refined[i]).collect());
    Ok(out)
}
