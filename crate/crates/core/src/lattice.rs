//! Rank-1 lattices, admissible prime sizes and random multi-lattice draws.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::freqset::{hash_row, FreqSet};

/// The lattice `{ j z / M mod 1 : j = 0, ..., M-1 }` on the torus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rank1Lattice {
    z: Vec<i64>,
    m: u64,
}

impl Rank1Lattice {
    pub fn new(z: Vec<i64>, m: u64) -> Result<Self> {
        if m == 0 {
            return Err(Error::invalid("lattice size must be positive"));
        }
        if m > i64::MAX as u64 {
            return Err(Error::invalid("lattice size exceeds 63 bits"));
        }
        if z.is_empty() {
            return Err(Error::invalid("generating vector must be nonempty"));
        }
        if z.iter().any(|&zt| zt < 0 || zt as u64 >= m) {
            return Err(Error::invalid(format!(
                "generating vector components must lie in [0, {}]",
                m - 1
            )));
        }
        Ok(Self { z, m })
    }

    pub fn z(&self) -> &[i64] {
        &self.z
    }

    pub fn size(&self) -> u64 {
        self.m
    }

    pub fn dim(&self) -> usize {
        self.z.len()
    }

    /// Integer numerators of node `j`: `(j z_t) mod M`.
    #[inline]
    pub fn node_numerators(&self, j: u64, out: &mut [u64]) {
        let m = self.m as u128;
        for (o, &zt) in out.iter_mut().zip(&self.z) {
            *o = ((j as u128 * zt as u128) % m) as u64;
        }
    }

    /// Node `j` written into `out` (length `d`).
    pub fn node(&self, j: u64, out: &mut [f64]) {
        let m = self.m as u128;
        for (o, &zt) in out.iter_mut().zip(&self.z) {
            *o = ((j as u128 * zt as u128) % m) as f64 / self.m as f64;
        }
    }

    /// All `M` nodes, row-major.
    pub fn nodes(&self) -> Vec<Vec<f64>> {
        (0..self.m)
            .map(|j| {
                let mut x = vec![0.0; self.dim()];
                self.node(j, &mut x);
                x
            })
            .collect()
    }

    /// `k · z mod M` in `[0, M-1]`.
    #[inline]
    pub fn residue(&self, k: &[i32]) -> u64 {
        debug_assert_eq!(k.len(), self.z.len());
        let mut acc = 0i64;
        for (&a, &b) in k.iter().zip(&self.z) {
            match (a as i64).checked_mul(b).and_then(|t| acc.checked_add(t)) {
                Some(v) => acc = v,
                None => return self.residue_wide(k),
            }
        }
        acc.rem_euclid(self.m as i64) as u64
    }

    #[cold]
    fn residue_wide(&self, k: &[i32]) -> u64 {
        let dot: i128 = k.iter().zip(&self.z).map(|(&a, &b)| a as i128 * b as i128).sum();
        dot.rem_euclid(self.m as i128) as u64
    }
}

/// `L` lattices plus the detection parameters they were drawn for.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiLatticeConfig {
    pub lattices: Vec<Rank1Lattice>,
    /// Decision threshold: a frequency is detected on at least `nu * L` lattices.
    pub nu: f64,
    /// Oversampling factor; every lattice size exceeds `c * sparsity`.
    pub c: f64,
    pub delta: f64,
    pub sparsity: usize,
    pub seed: Option<u64>,
}

impl MultiLatticeConfig {
    /// Assembles a configuration from explicit lattices, which may differ in size.
    pub fn from_lattices(lattices: Vec<Rank1Lattice>, nu: f64, c: f64, delta: f64, sparsity: usize) -> Result<Self> {
        if lattices.is_empty() {
            return Err(Error::invalid("at least one lattice is required"));
        }
        let d = lattices[0].dim();
        if let Some(bad) = lattices.iter().find(|l| l.dim() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: bad.dim(),
            });
        }
        if !(nu > 0.0 && nu <= 0.5) {
            return Err(Error::invalid(format!("nu must lie in (0, 1/2], got {nu}")));
        }
        Ok(Self {
            lattices,
            nu,
            c,
            delta,
            sparsity,
            seed: None,
        })
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    /// Number of lattices `L`.
    pub fn len(&self) -> usize {
        self.lattices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lattices.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.lattices[0].dim()
    }

    /// The common size when all lattices agree.
    pub fn shared_size(&self) -> Option<u64> {
        let m = self.lattices[0].size();
        self.lattices.iter().all(|l| l.size() == m).then_some(m)
    }

    /// Total number of sampling nodes `Σ M_ℓ`.
    pub fn sample_count(&self) -> u64 {
        self.lattices.iter().map(|l| l.size()).sum()
    }

    pub fn to_json(&self) -> Result<String> {
        let shared = self.shared_size();
        let file = ConfigFile {
            m: shared,
            l: self.len(),
            nu: self.nu,
            c: self.c,
            delta: self.delta,
            seed: self.seed,
            sparsity: self.sparsity,
            sizes: if shared.is_none() {
                Some(self.lattices.iter().map(|l| l.size()).collect())
            } else {
                None
            },
            z: self.lattices.iter().map(|l| l.z.clone()).collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: ConfigFile = serde_json::from_str(text)?;
        if f.z.len() != f.l {
            return Err(Error::LengthMismatch {
                expected: f.l,
                found: f.z.len(),
            });
        }
        let sizes = match (f.m, f.sizes) {
            (_, Some(s)) => s,
            (Some(m), None) => vec![m; f.l],
            (None, None) => return Err(Error::invalid("config needs either M or sizes")),
        };
        if sizes.len() != f.l {
            return Err(Error::LengthMismatch {
                expected: f.l,
                found: sizes.len(),
            });
        }
        let lattices =
            f.z.into_iter()
                .zip(sizes)
                .map(|(z, m)| Rank1Lattice::new(z, m))
                .collect::<Result<Vec<_>>>()?;
        let mut cfg = Self::from_lattices(lattices, f.nu, f.c, f.delta, f.sparsity)?;
        cfg.seed = f.seed;
        Ok(cfg)
    }
}

#[derive(Serialize, Deserialize)]
struct ConfigFile {
    #[serde(rename = "M")]
    m: Option<u64>,
    #[serde(rename = "L")]
    l: usize,
    nu: f64,
    c: f64,
    delta: f64,
    seed: Option<u64>,
    sparsity: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sizes: Option<Vec<u64>>,
    z: Vec<Vec<i64>>,
}

fn mul_mod(a: u64, b: u64, m: u64) -> u64 {
    ((a as u128 * b as u128) % m as u128) as u64
}

fn pow_mod(mut a: u64, mut e: u64, m: u64) -> u64 {
    let mut r = 1 % m;
    a %= m;
    while e > 0 {
        if e & 1 == 1 {
            r = mul_mod(r, a, m);
        }
        a = mul_mod(a, a, m);
        e >>= 1;
    }
    r
}

/// Deterministic Miller–Rabin, exact for all 64-bit inputs.
pub fn is_prime(n: u64) -> bool {
    const WITNESSES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
    if n < 2 {
        return false;
    }
    for &p in &WITNESSES {
        if n % p == 0 {
            return n == p;
        }
    }
    let mut d = n - 1;
    let mut s = 0;
    while d % 2 == 0 {
        d /= 2;
        s += 1;
    }
    'witness: for &a in &WITNESSES {
        let mut x = pow_mod(a, d, n);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..s {
            x = mul_mod(x, x, n);
            if x == n - 1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

/// Whether reduction modulo `p` is injective on `s`.
pub fn reduction_is_injective(s: &FreqSet, p: u64) -> bool {
    let n = s.len();
    if n <= 1 {
        return true;
    }
    if let Ok(e) = s.expansion() {
        if p > e {
            return true;
        }
    }
    let mut scratch = ReductionTable::new(n, s.dim());
    scratch.injective(s, p)
}

struct ReductionTable {
    slots: Vec<u32>,
    mask: usize,
    buf: Vec<i32>,
    other: Vec<i32>,
}

impl ReductionTable {
    fn new(n: usize, dim: usize) -> Self {
        let cap = (2 * n).next_power_of_two().max(8);
        Self {
            slots: vec![0; cap],
            mask: cap - 1,
            buf: vec![0; dim],
            other: vec![0; dim],
        }
    }

    fn injective(&mut self, s: &FreqSet, p: u64) -> bool {
        self.slots.fill(0);
        let p = p.min(i32::MAX as u64 + 1) as i64;
        for (i, k) in s.iter().enumerate() {
            for (b, &x) in self.buf.iter_mut().zip(k) {
                *b = (x as i64).rem_euclid(p) as i32;
            }
            let mut slot = hash_row(&self.buf) as usize & self.mask;
            loop {
                let v = self.slots[slot];
                if v == 0 {
                    self.slots[slot] = i as u32 + 1;
                    break;
                }
                for (o, &x) in self.other.iter_mut().zip(s.row((v - 1) as usize)) {
                    *o = (x as i64).rem_euclid(p) as i32;
                }
                if self.other == self.buf {
                    return false;
                }
                slot = (slot + 1) & self.mask;
            }
        }
        true
    }
}

/// Smallest prime `p > lower` whose reduction is injective on `s`.
///
/// Every prime above the expansion of `s` qualifies, so the scan terminates.
pub fn next_valid_prime(s: &FreqSet, lower: f64) -> Result<u64> {
    if s.is_empty() {
        return Err(Error::EmptySet);
    }
    if !lower.is_finite() {
        return Err(Error::invalid("prime lower bound must be finite"));
    }
    let expansion = s.expansion()?;
    let mut p = if lower < 2.0 { 2 } else { lower.floor() as u64 + 1 };
    let mut table = None;
    loop {
        while !is_prime(p) {
            p += 1;
        }
        if p > expansion || s.len() <= 1 {
            return Ok(p);
        }
        let t = table.get_or_insert_with(|| ReductionTable::new(s.len(), s.dim()));
        if t.injective(s, p) {
            return Ok(p);
        }
        p += 1;
    }
}

fn check_detection_params(delta: f64, nu: f64, c: f64, l_scale: f64) -> Result<()> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid(format!("delta must lie in (0, 1), got {delta}")));
    }
    if !(nu > 0.0 && nu <= 0.5) {
        return Err(Error::invalid(format!("nu must lie in (0, 1/2], got {nu}")));
    }
    if !(c.is_finite() && c > 1.0 / nu && c > 2.0) {
        return Err(Error::invalid(format!("c must exceed max(2, 1/nu), got {c}")));
    }
    if !(l_scale.is_finite() && l_scale > 0.0) {
        return Err(Error::invalid(format!("L scale must be positive, got {l_scale}")));
    }
    Ok(())
}

/// Number of lattices needed for candidate sets of size `gamma_size` and
/// failure probability `delta`.
///
/// The value is `L_scale · c(c-2) / ((cν-1)² ln(c-1)) · (ln|Γ| - ln δ)`,
/// rounded up to the next integer, or to the next odd integer when
/// `force_odd` is set; at least 1.
pub fn required_lattice_count(
    gamma_size: usize,
    delta: f64,
    nu: f64,
    c: f64,
    force_odd: bool,
    l_scale: f64,
) -> Result<usize> {
    check_detection_params(delta, nu, c, l_scale)?;
    if gamma_size == 0 {
        return Err(Error::EmptySet);
    }
    let pref = c * (c - 2.0) / ((c * nu - 1.0).powi(2) * (c - 1.0).ln());
    let raw = l_scale * pref * ((gamma_size as f64).ln() - delta.ln());
    let mut l = raw.ceil().max(1.0) as usize;
    if force_odd && l % 2 == 0 {
        l += 1;
    }
    Ok(l)
}

/// Uniform generating vector in `[0, M-1]^d`.
pub fn random_generator<R: Rng + ?Sized>(d: usize, m: u64, rng: &mut R) -> Vec<i64> {
    (0..d).map(|_| rng.gen_range(0..m) as i64).collect()
}

/// Draws a configuration for candidate set `s`: one shared prime size
/// `M = next_valid_prime(s, c·sparsity)` and `L` i.i.d. uniform generators.
/// `L` is forced odd when `nu = 1/2`.
pub fn draw_config<R: Rng + ?Sized>(
    s: &FreqSet,
    sparsity: usize,
    delta: f64,
    nu: f64,
    c: f64,
    l_scale: f64,
    rng: &mut R,
) -> Result<MultiLatticeConfig> {
    let l = required_lattice_count(s.len(), delta, nu, c, nu == 0.5, l_scale)?;
    let m = next_valid_prime(s, c * sparsity as f64)?;
    draw_config_with_sizes(s.dim(), &vec![m; l], sparsity, delta, nu, c, rng)
}

/// Draws one uniform generator per requested lattice size.
pub fn draw_config_with_sizes<R: Rng + ?Sized>(
    d: usize,
    sizes: &[u64],
    sparsity: usize,
    delta: f64,
    nu: f64,
    c: f64,
    rng: &mut R,
) -> Result<MultiLatticeConfig> {
    if sparsity == 0 {
        return Err(Error::invalid("sparsity must be positive"));
    }
    if let Some(&m) = sizes.iter().find(|&&m| (m as f64) <= c * sparsity as f64) {
        return Err(Error::invalid(format!(
            "lattice size {m} does not exceed c * sparsity = {}",
            c * sparsity as f64
        )));
    }
    let lattices = sizes
        .iter()
        .map(|&m| Rank1Lattice::new(random_generator(d, m, rng), m))
        .collect::<Result<Vec<_>>>()?;
    MultiLatticeConfig::from_lattices(lattices, nu, c, delta, sparsity)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::freqset::{full_grid, hyperbolic_cross, random_subset, Population};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn lat(z: &[i64], m: u64) -> Rank1Lattice {
        Rank1Lattice::new(z.to_vec(), m).unwrap()
    }

    #[test]
    fn nodes_examples() {
        let l = lat(&[1], 4);
        let xs: Vec<f64> = l.nodes().into_iter().map(|x| x[0]).collect();
        assert_eq!(xs, vec![0.0, 0.25, 0.5, 0.75]);
        let zero = lat(&[0, 0, 0], 7);
        assert!(zero.nodes().iter().all(|x| x.iter().all(|&v| v == 0.0)));
        assert_eq!(zero.nodes().len(), 7);
        let mut x = [0.0; 2];
        lat(&[1, 3], 5).node(2, &mut x);
        assert!((x[0] - 0.4).abs() < 1e-15 && (x[1] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn residue_examples() {
        assert_eq!(lat(&[1], 5).residue(&[-1]), 4);
        assert_eq!(lat(&[1, 3], 7).residue(&[2, 3]), 4);
        assert_eq!(lat(&[4, 6, 2], 11).residue(&[0, 0, 0]), 0);
        // products beyond 64 bits
        let big = lat(&[(1i64 << 62) - 1, 3], (1u64 << 62) + 1);
        let k = [i32::MAX, -7];
        let expect = (i32::MAX as i128 * ((1i128 << 62) - 1) - 21).rem_euclid((1i128 << 62) + 1);
        assert_eq!(big.residue(&k) as i128, expect);
    }

    #[test]
    fn rejects_bad_lattices() {
        assert!(Rank1Lattice::new(vec![5], 5).is_err());
        assert!(Rank1Lattice::new(vec![-1], 5).is_err());
        assert!(Rank1Lattice::new(vec![0], 0).is_err());
    }

    #[test]
    fn primality() {
        let small: Vec<u64> = (0..60).filter(|&n| is_prime(n)).collect();
        assert_eq!(
            small,
            vec![2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59]
        );
        assert!(is_prime(10_331));
        assert!(is_prime(11_047));
        assert!(!is_prime(3_215_031_751)); // strong pseudoprime to bases 2, 3, 5, 7
        assert!(is_prime(18_446_744_073_709_551_557));
        for n in 2u64..5000 {
            let trial = (2..n).take_while(|q| q * q <= n).all(|q| n % q != 0);
            assert_eq!(is_prime(n), trial, "n = {n}");
        }
    }

    #[test]
    fn next_valid_prime_examples() {
        let s = FreqSet::from_rows(1, [[0], [5]]).unwrap();
        assert_eq!(next_valid_prime(&s, 4.0).unwrap(), 7);
        let g = full_grid(2, 3).unwrap();
        // expansion 6, so the first prime above 6 qualifies
        assert_eq!(next_valid_prime(&g, 6.0).unwrap(), 7);
        assert!(next_valid_prime(&FreqSet::empty(2), 3.0).is_err());
    }

    #[test]
    fn lattice_sizes_for_reference_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let boxed = random_subset(
            Population::Box {
                dim: 3,
                lo: -1000,
                hi: 1000,
            },
            20_000,
            &mut rng,
        )
        .unwrap();
        assert_eq!(next_valid_prime(&boxed, 10.33 * 1000.0).unwrap(), 10_331);
        let cross = hyperbolic_cross(3, 32, &[1.0; 3]).unwrap();
        assert_eq!(next_valid_prime(&cross, 10.33 * 1069.0).unwrap(), 11_047);
    }

    #[test]
    fn lattice_count_formula() {
        // prefactor 4c/((c-2) ln(c-1)) at c = 10.33
        let c: f64 = 10.33;
        let pref = 4.0 * c / ((c - 2.0) * (c - 1.0).ln());
        assert!((pref - 2.221165).abs() < 1e-5);
        for &(g, delta) in &[(10_000_000usize, 0.5), (100_000, 0.1), (8, 0.99), (1069, 0.9)] {
            let l = required_lattice_count(g, delta, 0.5, c, true, 1.0).unwrap();
            let raw = pref * ((g as f64).ln() - delta.ln());
            assert_eq!(l % 2, 1);
            assert!(l as f64 >= raw && (l as f64) < raw + 2.0);
            assert!((l as f64) <= 3.183 * ((g as f64).ln() - delta.ln()) + 2.0);
        }
        let quarter = required_lattice_count(5000, 0.9, 0.5, c, true, 0.25).unwrap();
        let raw = 0.25 * pref * (5000f64.ln() - 0.9f64.ln());
        assert_eq!(quarter, {
            let n = raw.ceil() as usize;
            if n % 2 == 0 {
                n + 1
            } else {
                n
            }
        });
        assert_eq!(required_lattice_count(2, 0.9, 0.5, c, true, 0.25).unwrap(), 1);
        assert!(required_lattice_count(10, 0.5, 0.5, 2.0, true, 1.0).is_err());
        assert!(required_lattice_count(10, 0.5, 0.25, 3.5, false, 1.0).is_err());
        assert!(required_lattice_count(10, 1.0, 0.5, 10.0, true, 1.0).is_err());
        // general nu, no odd forcing
        let l = required_lattice_count(1000, 0.1, 0.25, 8.0, false, 1.0).unwrap();
        let raw = 8.0 * 6.0 / (1.0 * 7f64.ln()) * (1000f64.ln() - 0.1f64.ln());
        assert_eq!(l, raw.ceil() as usize);
    }

    #[test]
    fn draw_config_contract() {
        let g = full_grid(2, 10).unwrap();
        let a = draw_config(&g, 5, 0.1, 0.5, 10.33, 1.0, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = draw_config(&g, 5, 0.1, 0.5, 10.33, 1.0, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.shared_size(), Some(53));
        assert_eq!(a.len() % 2, 1);
        for l in &a.lattices {
            assert!(l.z().iter().all(|&z| (0..53).contains(&z)));
        }
        let back = MultiLatticeConfig::from_json(&a.clone().with_seed(9).to_json().unwrap()).unwrap();
        assert_eq!(back, a.with_seed(9));
    }

    #[test]
    fn distinct_sizes_roundtrip() {
        let cfg =
            draw_config_with_sizes(3, &[11, 13, 17], 1, 0.5, 0.5, 10.33, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(cfg.shared_size(), None);
        assert_eq!(cfg.sample_count(), 41);
        assert_eq!(MultiLatticeConfig::from_json(&cfg.to_json().unwrap()).unwrap(), cfg);
        assert!(draw_config_with_sizes(3, &[7], 1, 0.5, 0.5, 10.33, &mut ChaCha8Rng::seed_from_u64(2)).is_err());
    }

    proptest! {
        #[test]
        fn residue_respects_congruence(
            k in prop::collection::vec(-50i32..50, 3),
            shift in prop::collection::vec(-3i32..3, 3),
            z in prop::collection::vec(0i64..31, 3),
        ) {
            let l = lat(&z, 31);
            let h: Vec<i32> = k.iter().zip(&shift).map(|(a, s)| a + 31 * s).collect();
            prop_assert_eq!(l.residue(&k), l.residue(&h));
            let red: Vec<i32> = k.iter().map(|x| x.rem_euclid(31)).collect();
            prop_assert_eq!(l.residue(&k), l.residue(&red));
        }

        #[test]
        fn alias_classes_match_brute_force(
            rows in prop::collection::vec(prop::collection::vec(-20i32..20, 3), 1..8),
            z in prop::collection::vec(0i64..29, 3),
        ) {
            let set = FreqSet::from_rows(3, rows).unwrap();
            let l = lat(&z, 29);
            for k in set.iter() {
                for h in set.iter() {
                    let dot: i64 = h.iter().zip(k).zip(&z).map(|((a, b), zt)| (*a as i64 - *b as i64) * zt).sum();
                    prop_assert_eq!(l.residue(k) == l.residue(h), dot.rem_euclid(29) == 0);
                }
            }
        }

        #[test]
        fn valid_prime_is_injective(
            rows in prop::collection::vec(prop::collection::vec(-30i32..30, 2), 1..40),
            lower in 0.0f64..40.0,
        ) {
            let set = FreqSet::from_rows(2, rows).unwrap();
            let p = next_valid_prime(&set, lower).unwrap();
            prop_assert!(p as f64 > lower && is_prime(p));
            prop_assert_eq!(set.reduce_mod(p as u32).len(), set.len());
            let mut q = if lower < 2.0 { 2 } else { lower.floor() as u64 + 1 };
            while q < p {
                if is_prime(q) {
                    prop_assert!(set.reduce_mod(q as u32).len() < set.len());
                }
                q += 1;
            }
        }
    }
}
