//! Signals on the d-torus: sparse trigonometric polynomials, a counting
//! sampling oracle, and the tensor-product B-spline test function.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::io::{BufRead, Write};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Mutex, OnceLock};

use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};
use crate::freqset::{join_ints, read_rows, FreqSet};
use crate::lattice::Rank1Lattice;

/// `e^{2πi s}` with the argument reduced to `[-1/2, 1/2]` first.
#[inline]
pub(crate) fn cis_turns(s: f64) -> Complex64 {
    let r = s - s.round();
    Complex64::from_polar(1.0, 2.0 * PI * r)
}

/// Table of `e^{2πi n/M}` for `n = 0..M`.
pub(crate) fn roots_of_unity(m: u64) -> Vec<Complex64> {
    (0..m)
        .map(|n| Complex64::from_polar(1.0, 2.0 * PI * n as f64 / m as f64))
        .collect()
}

/// A complex-valued function on `[0,1)^d`.
pub trait Signal: Send + Sync {
    fn dim(&self) -> usize;

    fn eval(&self, x: &[f64]) -> Complex64;

    /// Samples along the nodes of `lat`, whose components fill the
    /// coordinates `coords` of `base`; the remaining coordinates keep the
    /// values from `base`.
    fn sample_embedded(&self, lat: &Rank1Lattice, coords: &[usize], base: &[f64]) -> Vec<Complex64> {
        let mut x = base.to_vec();
        let mut node = vec![0.0; lat.dim()];
        (0..lat.size())
            .map(|j| {
                lat.node(j, &mut node);
                for (&t, &v) in coords.iter().zip(&node) {
                    x[t] = v;
                }
                self.eval(&x)
            })
            .collect()
    }
}

impl<S: Signal + ?Sized> Signal for Box<S> {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn eval(&self, x: &[f64]) -> Complex64 {
        (**self).eval(x)
    }

    fn sample_embedded(&self, lat: &Rank1Lattice, coords: &[usize], base: &[f64]) -> Vec<Complex64> {
        (**self).sample_embedded(lat, coords, base)
    }
}

impl<S: Signal + ?Sized> Signal for &S {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn eval(&self, x: &[f64]) -> Complex64 {
        (**self).eval(x)
    }

    fn sample_embedded(&self, lat: &Rank1Lattice, coords: &[usize], base: &[f64]) -> Vec<Complex64> {
        (**self).sample_embedded(lat, coords, base)
    }
}

/// A signal behind a black-box interface that counts every evaluation.
pub struct SamplingOracle<S> {
    signal: S,
    count: AtomicU64,
}

impl<S: Signal> SamplingOracle<S> {
    pub fn new(signal: S) -> Self {
        Self {
            signal,
            count: AtomicU64::new(0),
        }
    }

    pub fn dim(&self) -> usize {
        self.signal.dim()
    }

    /// Total number of evaluations so far.
    pub fn count(&self) -> u64 {
        self.count.load(Ordering::Relaxed)
    }

    pub fn signal(&self) -> &S {
        &self.signal
    }

    pub fn eval(&self, x: &[f64]) -> Result<Complex64> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: x.len(),
            });
        }
        self.count.fetch_add(1, Ordering::Relaxed);
        Ok(self.signal.eval(x))
    }

    pub fn sample_embedded(&self, lat: &Rank1Lattice, coords: &[usize], base: &[f64]) -> Result<Vec<Complex64>> {
        if base.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: base.len(),
            });
        }
        if coords.len() != lat.dim() || coords.iter().any(|&t| t >= self.dim()) {
            return Err(Error::invalid("lattice coordinates do not fit the signal dimension"));
        }
        self.count.fetch_add(lat.size(), Ordering::Relaxed);
        Ok(self.signal.sample_embedded(lat, coords, base))
    }

    /// Samples on the full-dimensional lattice nodes `j z / M mod 1`.
    pub fn sample_on_lattice(&self, lat: &Rank1Lattice) -> Result<Vec<Complex64>> {
        if lat.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: lat.dim(),
            });
        }
        let coords: Vec<usize> = (0..self.dim()).collect();
        self.sample_embedded(lat, &coords, &vec![0.0; self.dim()])
    }
}

/// `p(x) = Σ_{k ∈ I} p̂_k e^{2πi k·x}` with all coefficients nonzero.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsePoly {
    support: FreqSet,
    coeffs: Vec<Complex64>,
}

impl SparsePoly {
    /// `coeffs[i]` belongs to `support.row(i)`.
    pub fn new(support: FreqSet, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != support.len() {
            return Err(Error::LengthMismatch {
                expected: support.len(),
                found: coeffs.len(),
            });
        }
        if let Some(i) = coeffs.iter().position(|c| *c == Complex64::new(0.0, 0.0)) {
            return Err(Error::invalid(format!("coefficient {i} is zero")));
        }
        crate::dft::check_finite(&coeffs)?;
        Ok(Self { support, coeffs })
    }

    /// Builds a polynomial from unordered `(frequency, coefficient)` pairs.
    pub fn from_terms(dim: usize, mut terms: Vec<(Vec<i32>, Complex64)>) -> Result<Self> {
        terms.sort_by(|a, b| a.0.cmp(&b.0));
        if let Some(w) = terms.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::invalid(format!("duplicate frequency {:?}", w[0].0)));
        }
        let support = FreqSet::from_rows(dim, terms.iter().map(|t| &t.0))?;
        Self::new(support, terms.into_iter().map(|t| t.1).collect())
    }

    /// The all-ones polynomial `Σ_{k ∈ I} e^{2πi k·x}`.
    pub fn ones(support: FreqSet) -> Self {
        let n = support.len();
        Self {
            support,
            coeffs: vec![Complex64::new(1.0, 0.0); n],
        }
    }

    pub fn support(&self) -> &FreqSet {
        &self.support
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeff(&self, k: &[i32]) -> Option<Complex64> {
        self.support.position(k).map(|i| self.coeffs[i])
    }

    /// Relative l2 distance of the approximation `coeffs` on `support`,
    /// summed term by term over both supports.
    pub fn rel_l2_error(&self, support: &FreqSet, coeffs: &[Complex64]) -> Result<f64> {
        if coeffs.len() != support.len() {
            return Err(Error::LengthMismatch {
                expected: support.len(),
                found: coeffs.len(),
            });
        }
        if support.dim() != self.support.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.support.dim(),
                found: support.dim(),
            });
        }
        let norm: f64 = self.coeffs.iter().map(|c| c.norm_sqr()).sum();
        if !(norm > 0.0) {
            return Err(Error::invalid("polynomial is zero"));
        }
        let mut err: f64 = support
            .iter()
            .zip(coeffs)
            .map(|(k, c)| (c - self.coeff(k).unwrap_or_default()).norm_sqr())
            .sum();
        err += self
            .support
            .iter()
            .zip(&self.coeffs)
            .filter(|(k, _)| !support.contains(k))
            .map(|(_, c)| c.norm_sqr())
            .sum::<f64>();
        Ok((err / norm).sqrt())
    }

    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "d={} n={}", self.support.dim(), self.support.len())?;
        for (k, c) in self.support.iter().zip(&self.coeffs) {
            writeln!(w, "{} {:e} {:e}", join_ints(k), c.re, c.im)?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<Self> {
        let (dim, rows) = read_rows(r, 2)?;
        let terms = rows.into_iter().map(|(k, v)| (k, Complex64::new(v[0], v[1]))).collect();
        Self::from_terms(dim, terms)
    }
}

impl Signal for SparsePoly {
    fn dim(&self) -> usize {
        self.support.dim()
    }

    fn eval(&self, x: &[f64]) -> Complex64 {
        self.support
            .iter()
            .zip(&self.coeffs)
            .map(|(k, c)| {
                let s: f64 = k.iter().zip(x).map(|(&kt, &xt)| kt as f64 * xt).sum();
                c * cis_turns(s)
            })
            .sum()
    }

    /// Exact summation over the support. Each term contributes
    /// `p̂_k e^{2πi k·base} e^{2πi j r_k / M}` with `r_k` the residue of the
    /// embedded part of `k`, so node `j` needs only a table lookup.
    fn sample_embedded(&self, lat: &Rank1Lattice, coords: &[usize], base: &[f64]) -> Vec<Complex64> {
        let m = lat.size();
        let roots = roots_of_unity(m);
        let mut fixed = vec![true; self.dim()];
        for &t in coords {
            fixed[t] = false;
        }
        let mut out = vec![Complex64::new(0.0, 0.0); m as usize];
        let mut sub = vec![0i32; coords.len()];
        for (k, c) in self.support.iter().zip(&self.coeffs) {
            let s: f64 = (0..k.len()).filter(|&t| fixed[t]).map(|t| k[t] as f64 * base[t]).sum();
            let amp = c * cis_turns(s);
            for (o, &t) in sub.iter_mut().zip(coords) {
                *o = k[t];
            }
            let r = lat.residue(&sub) as usize;
            let mut idx = 0usize;
            for v in out.iter_mut() {
                *v += amp * roots[idx];
                idx += r;
                if idx >= m as usize {
                    idx -= m as usize;
                }
            }
        }
        out
    }
}

/// Random coefficients on `support`, uniform on `[-1,1) + [-1,1)i`,
/// redrawn until the magnitude reaches `min_mag`.
pub fn random_poly<R: Rng + ?Sized>(support: &FreqSet, rng: &mut R, min_mag: f64) -> Result<SparsePoly> {
    if !(min_mag < 1.0) {
        return Err(Error::invalid("minimum coefficient magnitude must be below 1"));
    }
    let coeffs = (0..support.len())
        .map(|_| loop {
            let c = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            if c.norm() >= min_mag && c.norm() > 0.0 {
                break c;
            }
        })
        .collect();
    SparsePoly::new(support.clone(), coeffs)
}

/// Default coefficient magnitude floor for random test polynomials.
pub const DEFAULT_MIN_MAG: f64 = 1e-6;

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        x.sin() / x
    }
}

/// Truncation horizon of the B-spline normalization series.
fn bspline_horizon(m: u32) -> u64 {
    100_000u64.max(1000 * m as u64)
}

/// `Σ_{|k| ≤ H} sinc(πk/m)^{2m}`, smallest terms first.
pub fn bspline_energy_series(m: u32, horizon: u64) -> f64 {
    let mf = m as f64;
    let mut tail = 0.0;
    for k in (1..=horizon).rev() {
        if k % m as u64 == 0 {
            continue;
        }
        tail += sinc(PI * k as f64 / mf).powi(2 * m as i32);
    }
    1.0 + 2.0 * tail
}

/// Normalization constant `C_m` making `N_m` a unit vector in `L2(T)`.
pub fn bspline_norm_constant(m: u32) -> f64 {
    assert!(m >= 1, "B-spline order must be positive");
    static CACHE: OnceLock<Mutex<HashMap<u32, f64>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(&c) = cache.lock().unwrap().get(&m) {
        return c;
    }
    let c = bspline_energy_series(m, bspline_horizon(m)).powf(-0.5);
    cache.lock().unwrap().insert(m, c);
    c
}

/// Fourier coefficient `C_m sinc(πk/m)^m (-1)^k` of the periodic B-spline `N_m`.
pub fn bspline_coeff(m: u32, k: i64) -> f64 {
    if k != 0 && k % m as i64 == 0 {
        return 0.0;
    }
    let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
    bspline_norm_constant(m) * sinc(PI * k as f64 / m as f64).powi(m as i32) * sign
}

/// Centered cardinal B-spline of order `m`, supported on `[-m/2, m/2]`.
pub fn cardinal_bspline(m: u32, u: f64) -> f64 {
    let half = m as f64 / 2.0;
    // symmetric: evaluate on the left half where only few truncated powers are active
    let v = -u.abs();
    if v <= -half {
        return 0.0;
    }
    if m == 1 {
        return 1.0;
    }
    let mut fact = 1.0;
    for i in 2..m {
        fact *= i as f64;
    }
    let mut binom = 1.0;
    let mut sum = 0.0;
    for j in 0..=m {
        let s = v + half - j as f64;
        if s <= 0.0 {
            break;
        }
        let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
        sum += sign * binom * s.powi(m as i32 - 1);
        binom = binom * (m - j) as f64 / (j + 1) as f64;
    }
    sum / fact
}

/// Periodic B-spline `N_m(x)` evaluated through its piecewise-polynomial form.
pub fn bspline_eval(m: u32, x: f64) -> f64 {
    let x = x - x.floor();
    bspline_norm_constant(m) * m as f64 * cardinal_bspline(m, m as f64 * (x - 0.5))
}

/// Coordinate groups (0-based) and spline orders of the 10-dimensional test function.
pub const F10_GROUPS: [(&[usize], u32); 3] = [(&[0, 2, 7], 2), (&[1, 4, 5, 9], 4), (&[3, 6, 8], 6)];

/// `f(x) = Π_{t∈{1,3,8}} N_2(x_t) + Π_{t∈{2,5,6,10}} N_4(x_t) + Π_{t∈{4,7,9}} N_6(x_t)`
/// with 1-based coordinates.
#[derive(Debug, Clone, Copy, Default)]
pub struct F10;

impl Signal for F10 {
    fn dim(&self) -> usize {
        10
    }

    fn eval(&self, x: &[f64]) -> Complex64 {
        let v: f64 = F10_GROUPS
            .iter()
            .map(|(dims, m)| dims.iter().map(|&t| bspline_eval(*m, x[t])).product::<f64>())
            .sum();
        Complex64::new(v, 0.0)
    }
}

/// Fourier coefficient of the test function at `k ∈ Z^10`.
pub fn f10_coeff(k: &[i32]) -> Result<f64> {
    if k.len() != 10 {
        return Err(Error::DimensionMismatch {
            expected: 10,
            found: k.len(),
        });
    }
    let mut total = 0.0;
    for (dims, m) in F10_GROUPS {
        let outside_zero = (0..10).filter(|t| !dims.contains(t)).all(|t| k[t] == 0);
        if outside_zero {
            total += dims.iter().map(|&t| bspline_coeff(m, k[t] as i64)).product::<f64>();
        }
    }
    Ok(total)
}

/// `‖f‖²`: each summand has unit norm, and two summands on disjoint
/// coordinate groups overlap only through their mean values.
pub fn f10_sq_norm() -> f64 {
    let means: Vec<f64> = F10_GROUPS
        .iter()
        .map(|(dims, m)| bspline_norm_constant(*m).powi(dims.len() as i32))
        .collect();
    let mut cross = 0.0;
    for i in 0..means.len() {
        for j in i + 1..means.len() {
            cross += means[i] * means[j];
        }
    }
    means.len() as f64 + 2.0 * cross
}

/// Relative L2 error `√(‖f‖² − Σ_I |f̂_k|² + Σ_I |p̃_k − f̂_k|²) / ‖f‖` of the
/// approximation with coefficients `coeffs` on `support`. The subtraction
/// limits the resolution to about 1e-8 relative; sparse polynomials have
/// the exact [`SparsePoly::rel_l2_error`].
pub fn rel_l2_error<F>(support: &FreqSet, coeffs: &[Complex64], f_sq_norm: f64, f_coeff: F) -> Result<f64>
where
    F: Fn(&[i32]) -> Complex64,
{
    if !(f_sq_norm > 0.0) {
        return Err(Error::invalid("function norm must be positive"));
    }
    if coeffs.len() != support.len() {
        return Err(Error::LengthMismatch {
            expected: support.len(),
            found: coeffs.len(),
        });
    }
    let mut rad = f_sq_norm;
    for (k, p) in support.iter().zip(coeffs) {
        let fk = f_coeff(k);
        rad += (p - fk).norm_sqr() - fk.norm_sqr();
    }
    if rad < -1e-12 {
        return Err(Error::invalid(format!("negative error radicand {rad:e}")));
    }
    Ok(rad.max(0.0).sqrt() / f_sq_norm.sqrt())
}
