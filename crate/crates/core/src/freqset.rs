//! Frequency index sets in `Z^d`.
//!
//! A [`FreqSet`] stores its multi-indices as one flat, row-major `i32` buffer,
//! sorted lexicographically and free of duplicates. Iteration order is
//! therefore canonical, which keeps every randomized experiment replayable.
//! Membership queries go through a lazily built open-addressing index over
//! the rows.

use std::cmp::Ordering;
use std::fmt;
use std::io::{BufRead, Write};
use std::sync::OnceLock;

use rand::Rng;

use crate::error::{Error, Result};

/// Default materialization cap for generated sets.
pub const DEFAULT_ELEMENT_CAP: u128 = 50_000_000;

/// A finite, duplicate-free set of frequencies sharing one dimension.
pub struct FreqSet {
    dim: usize,
    data: Vec<i32>,
    index: OnceLock<RowIndex>,
}

impl FreqSet {
    /// Empty set of the given dimension.
    pub fn empty(dim: usize) -> Self {
        assert!(dim >= 1, "frequency dimension must be positive");
        Self::from_sorted_unchecked(dim, Vec::new())
    }

    /// Builds a set from a flat row-major buffer, sorting and deduplicating.
    pub fn from_flat(dim: usize, data: Vec<i32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("frequency dimension must be positive"));
        }
        if data.len() % dim != 0 {
            return Err(Error::LengthMismatch {
                expected: (data.len() / dim + 1) * dim,
                found: data.len(),
            });
        }
        let n = data.len() / dim;
        let already_sorted = (1..n).all(|i| data[(i - 1) * dim..i * dim] < data[i * dim..(i + 1) * dim]);
        if already_sorted {
            return Ok(Self::from_sorted_unchecked(dim, data));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_unstable_by(|&a, &b| data[a * dim..(a + 1) * dim].cmp(&data[b * dim..(b + 1) * dim]));
        let mut out = Vec::with_capacity(data.len());
        for &i in &order {
            let row = &data[i * dim..(i + 1) * dim];
            if out.len() >= dim && &out[out.len() - dim..] == row {
                continue;
            }
            out.extend_from_slice(row);
        }
        Ok(Self::from_sorted_unchecked(dim, out))
    }

    /// Builds a set from individual rows.
    pub fn from_rows<R, I>(dim: usize, rows: I) -> Result<Self>
    where
        R: AsRef<[i32]>,
        I: IntoIterator<Item = R>,
    {
        let mut data = Vec::new();
        for r in rows {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::from_flat(dim, data)
    }

    pub(crate) fn from_sorted_unchecked(dim: usize, data: Vec<i32>) -> Self {
        debug_assert!(data.len() % dim == 0);
        Self {
            dim,
            data,
            index: OnceLock::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// The `i`-th frequency in lexicographic order.
    pub fn row(&self, i: usize) -> &[i32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &[i32]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    /// Flat row-major view of all components.
    pub fn as_flat(&self) -> &[i32] {
        &self.data
    }

    /// Position of `k` in iteration order.
    pub fn position(&self, k: &[i32]) -> Option<usize> {
        if k.len() != self.dim || self.is_empty() {
            return None;
        }
        self.index
            .get_or_init(|| RowIndex::build(self.dim, &self.data))
            .find(self.dim, &self.data, k)
    }

    pub fn contains(&self, k: &[i32]) -> bool {
        self.position(k).is_some()
    }

    /// Sorted union of two sets of equal dimension.
    pub fn union(&self, other: &FreqSet) -> Result<FreqSet> {
        self.merge(other, |a, b| a || b)
    }

    /// Elements of `self` not in `other`.
    pub fn difference(&self, other: &FreqSet) -> Result<FreqSet> {
        self.merge(other, |a, b| a && !b)
    }

    pub fn intersection(&self, other: &FreqSet) -> Result<FreqSet> {
        self.merge(other, |a, b| a && b)
    }

    pub fn is_subset(&self, other: &FreqSet) -> bool {
        self.dim == other.dim && self.iter().all(|k| other.contains(k))
    }

    fn merge(&self, other: &FreqSet, keep: impl Fn(bool, bool) -> bool) -> Result<FreqSet> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: other.dim,
            });
        }
        let (n, m) = (self.len(), other.len());
        let mut out = Vec::new();
        let (mut i, mut j) = (0, 0);
        while i < n || j < m {
            let ord = match (i < n, j < m) {
                (true, true) => self.row(i).cmp(other.row(j)),
                (true, false) => Ordering::Less,
                _ => Ordering::Greater,
            };
            let (row, in_a, in_b) = match ord {
                Ordering::Less => {
                    i += 1;
                    (self.row(i - 1), true, false)
                }
                Ordering::Greater => {
                    j += 1;
                    (other.row(j - 1), false, true)
                }
                Ordering::Equal => {
                    i += 1;
                    j += 1;
                    (self.row(i - 1), true, true)
                }
            };
            if keep(in_a, in_b) {
                out.extend_from_slice(row);
            }
        }
        Ok(FreqSet::from_sorted_unchecked(self.dim, out))
    }

    /// Smallest and largest value of coordinate `t` (0-based).
    pub fn coordinate_range(&self, t: usize) -> Option<(i32, i32)> {
        if t >= self.dim || self.is_empty() {
            return None;
        }
        let mut lo = i32::MAX;
        let mut hi = i32::MIN;
        for k in self.iter() {
            lo = lo.min(k[t]);
            hi = hi.max(k[t]);
        }
        Some((lo, hi))
    }

    /// Largest coordinate-wise extent `max_t (max k_t - min k_t)`.
    pub fn expansion(&self) -> Result<u64> {
        if self.is_empty() {
            return Err(Error::EmptySet);
        }
        Ok((0..self.dim)
            .map(|t| {
                let (lo, hi) = self.coordinate_range(t).unwrap();
                (hi as i64 - lo as i64) as u64
            })
            .max()
            .unwrap_or(0))
    }

    /// Restriction to the listed coordinates (0-based), deduplicated.
    pub fn project(&self, dims: &[usize]) -> Result<FreqSet> {
        if dims.is_empty() {
            return Err(Error::invalid("projection needs at least one coordinate"));
        }
        if let Some(&bad) = dims.iter().find(|&&t| t >= self.dim) {
            return Err(Error::invalid(format!(
                "coordinate index {bad} out of range for dimension {}",
                self.dim
            )));
        }
        let mut data = Vec::with_capacity(self.len() * dims.len());
        for k in self.iter() {
            data.extend(dims.iter().map(|&t| k[t]));
        }
        FreqSet::from_flat(dims.len(), data)
    }

    /// Componentwise reduction into `{0, ..., m-1}^d`, deduplicated.
    ///
    /// `m` must fit into `i32`.
    pub fn reduce_mod(&self, m: u32) -> FreqSet {
        assert!(m >= 1 && m <= i32::MAX as u32, "modulus out of range");
        let m = m as i32;
        let data = self.data.iter().map(|&x| x.rem_euclid(m)).collect();
        FreqSet::from_flat(self.dim, data).expect("dimension preserved")
    }

    /// Writes the line format: a `d=<d> n=<count>` header, then one
    /// frequency per line with space-separated components.
    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "d={} n={}", self.dim, self.len())?;
        for k in self.iter() {
            writeln!(w, "{}", join_ints(k))?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<FreqSet> {
        let (dim, rows) = read_rows(r, 0)?;
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (k, _) in rows {
            data.extend(k);
        }
        FreqSet::from_flat(dim, data)
    }
}

impl Clone for FreqSet {
    fn clone(&self) -> Self {
        Self::from_sorted_unchecked(self.dim, self.data.clone())
    }
}

impl PartialEq for FreqSet {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && self.data == other.data
    }
}

impl Eq for FreqSet {}

impl fmt::Debug for FreqSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut list = f.debug_list();
        for k in self.iter().take(16) {
            list.entry(&k);
        }
        if self.len() > 16 {
            list.entry(&format_args!("... ({} total)", self.len()));
        }
        list.finish()
    }
}

pub(crate) fn join_ints(k: &[i32]) -> String {
    k.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

/// Parses the header + rows format. Each row holds `dim` integers followed
/// by exactly `extra` floating-point values.
pub(crate) fn read_rows<R: BufRead>(r: R, extra: usize) -> Result<(usize, Vec<(Vec<i32>, Vec<f64>)>)> {
    let mut dim = None;
    let mut expected = 0usize;
    let mut rows = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let ln = lineno + 1;
        match dim {
            None => {
                let mut d = None;
                let mut n = None;
                for tok in line.split_whitespace() {
                    if let Some(v) = tok.strip_prefix("d=") {
                        d = v.parse::<usize>().ok();
                    } else if let Some(v) = tok.strip_prefix("n=") {
                        n = v.parse::<usize>().ok();
                    }
                }
                match (d, n) {
                    (Some(d), Some(n)) if d >= 1 => {
                        dim = Some(d);
                        expected = n;
                    }
                    _ => return Err(Error::parse(ln, "expected header 'd=<d> n=<count>'")),
                }
            }
            Some(d) => {
                let toks: Vec<&str> = line.split_whitespace().collect();
                if toks.len() != d + extra {
                    return Err(Error::parse(
                        ln,
                        format!("expected {} fields, found {}", d + extra, toks.len()),
                    ));
                }
                let k = toks[..d]
                    .iter()
                    .map(|s| s.parse::<i32>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| Error::parse(ln, e.to_string()))?;
                let v = toks[d..]
                    .iter()
                    .map(|s| s.parse::<f64>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| Error::parse(ln, e.to_string()))?;
                rows.push((k, v));
            }
        }
    }
    let dim = dim.ok_or_else(|| Error::parse(0, "missing header"))?;
    if rows.len() != expected {
        return Err(Error::parse(
            0,
            format!("header announces {expected} rows, found {}", rows.len()),
        ));
    }
    Ok((dim, rows))
}

#[inline]
pub(crate) fn hash_row(k: &[i32]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &x in k {
        h = (h ^ (x as u32 as u64)).wrapping_mul(0x9e37_79b9_7f4a_7c15);
        h ^= h >> 29;
    }
    h ^= h >> 32;
    h.wrapping_mul(0xd6e8_feb8_6659_fd93)
}

/// Open-addressing table of row positions (stored off by one, 0 = empty).
#[derive(Clone)]
struct RowIndex {
    slots: Vec<u32>,
    mask: usize,
}

impl RowIndex {
    fn build(dim: usize, data: &[i32]) -> Self {
        let n = data.len() / dim;
        assert!(n < u32::MAX as usize, "set too large to index");
        let cap = (2 * n).next_power_of_two().max(8);
        let mask = cap - 1;
        let mut slots = vec![0u32; cap];
        for (i, k) in data.chunks_exact(dim).enumerate() {
            let mut s = hash_row(k) as usize & mask;
            while slots[s] != 0 {
                s = (s + 1) & mask;
            }
            slots[s] = i as u32 + 1;
        }
        Self { slots, mask }
    }

    fn find(&self, dim: usize, data: &[i32], k: &[i32]) -> Option<usize> {
        let mut s = hash_row(k) as usize & self.mask;
        loop {
            match self.slots[s] {
                0 => return None,
                v => {
                    let i = (v - 1) as usize;
                    if &data[i * dim..(i + 1) * dim] == k {
                        return Some(i);
                    }
                }
            }
            s = (s + 1) & self.mask;
        }
    }
}

/// Number of elements of `[-n, n]^d`, or `None` on overflow.
pub fn full_grid_cardinality(d: usize, n: u32) -> Option<u128> {
    let side = 2 * n as u128 + 1;
    (0..d).try_fold(1u128, |acc, _| acc.checked_mul(side))
}

/// The full grid `[-n, n]^d ∩ Z^d` in lexicographic order.
pub fn full_grid(d: usize, n: u32) -> Result<FreqSet> {
    full_grid_with_cap(d, n, DEFAULT_ELEMENT_CAP)
}

pub fn full_grid_with_cap(d: usize, n: u32, cap: u128) -> Result<FreqSet> {
    if d == 0 {
        return Err(Error::invalid("dimension must be positive"));
    }
    if n > i32::MAX as u32 / 2 {
        return Err(Error::invalid("grid half-width out of range"));
    }
    let count = full_grid_cardinality(d, n).unwrap_or(u128::MAX);
    if count > cap {
        return Err(Error::Capacity {
            what: "full grid",
            requested: count,
            cap,
        });
    }
    let n = n as i32;
    let mut data = Vec::with_capacity(count as usize * d);
    let mut k = vec![-n; d];
    loop {
        data.extend_from_slice(&k);
        let mut t = d;
        loop {
            if t == 0 {
                return Ok(FreqSet::from_sorted_unchecked(d, data));
            }
            t -= 1;
            if k[t] < n {
                k[t] += 1;
                break;
            }
            k[t] = -n;
        }
    }
}

fn check_cross_args(d: usize, weights: &[f64]) -> Result<()> {
    if d == 0 {
        return Err(Error::invalid("dimension must be positive"));
    }
    if weights.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: weights.len(),
        });
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::invalid("cross weights must be finite and nonnegative"));
    }
    Ok(())
}

/// Largest `k >= 0` with `acc * max(1, w k) <= n`, or `None` when unbounded.
fn cross_limit(acc: f64, w: f64, n: f64) -> Option<i64> {
    if w == 0.0 {
        return None;
    }
    let mut k = (n / (acc * w)).floor().max(0.0) as i64;
    // floor of a quotient can be off by one against the product test
    while k > 0 && acc * (w * k as f64).max(1.0) > n {
        k -= 1;
    }
    while acc * (w * (k + 1) as f64).max(1.0) <= n {
        k += 1;
    }
    Some(k)
}

/// Weighted hyperbolic cross `{k : Π_t max(1, w_t |k_t|) <= n}`.
///
/// Enumeration recurses over coordinates and bounds each one by the budget
/// left over from the previous coordinates.
pub fn hyperbolic_cross(d: usize, n: u32, weights: &[f64]) -> Result<FreqSet> {
    hyperbolic_cross_with_cap(d, n, weights, DEFAULT_ELEMENT_CAP)
}

pub fn hyperbolic_cross_with_cap(d: usize, n: u32, weights: &[f64], cap: u128) -> Result<FreqSet> {
    let count = hyperbolic_cross_cardinality(d, n, weights)?;
    if count > cap {
        return Err(Error::Capacity {
            what: "hyperbolic cross",
            requested: count,
            cap,
        });
    }
    let mut data = Vec::with_capacity(count as usize * d);
    let mut k = vec![0i32; d];
    cross_enumerate(0, 1.0, n as f64, weights, &mut k, &mut data);
    Ok(FreqSet::from_sorted_unchecked(d, data))
}

fn cross_enumerate(t: usize, acc: f64, n: f64, w: &[f64], k: &mut [i32], out: &mut Vec<i32>) {
    if t == k.len() {
        out.extend_from_slice(k);
        return;
    }
    let lim = cross_limit(acc, w[t], n).expect("zero weight is rejected by the cardinality pass") as i32;
    for v in -lim..=lim {
        k[t] = v;
        let f = (w[t] * v.unsigned_abs() as f64).max(1.0);
        cross_enumerate(t + 1, acc * f, n, w, k, out);
    }
    k[t] = 0;
}

/// Cardinality of the weighted hyperbolic cross without materializing it.
pub fn hyperbolic_cross_cardinality(d: usize, n: u32, weights: &[f64]) -> Result<u128> {
    check_cross_args(d, weights)?;
    fn count(t: usize, acc: f64, n: f64, w: &[f64]) -> Option<u128> {
        if t == w.len() {
            return Some(1);
        }
        let lim = cross_limit(acc, w[t], n)?;
        let mut total = count(t + 1, acc, n, w)?;
        for v in 1..=lim {
            let f = (w[t] * v as f64).max(1.0);
            total += 2 * count(t + 1, acc * f, n, w)?;
        }
        Some(total)
    }
    count(0, 1.0, n as f64, weights).ok_or_else(|| Error::invalid("a zero weight makes the cross infinite"))
}

/// Population to draw random frequencies from.
#[derive(Debug, Clone, Copy)]
pub enum Population<'a> {
    /// The integer box `[lo, hi]^dim`.
    Box {
        dim: usize,
        lo: i32,
        hi: i32,
    },
    Set(&'a FreqSet),
}

impl Population<'_> {
    pub fn dim(&self) -> usize {
        match self {
            Population::Box { dim, .. } => *dim,
            Population::Set(s) => s.dim(),
        }
    }

    pub fn size(&self) -> Option<u128> {
        match *self {
            Population::Box { dim, lo, hi } => {
                if hi < lo {
                    return Some(0);
                }
                let side = (hi as i64 - lo as i64 + 1) as u128;
                (0..dim).try_fold(1u128, |acc, _| acc.checked_mul(side))
            }
            Population::Set(s) => Some(s.len() as u128),
        }
    }
}

/// Uniform sample of `count` distinct frequencies, without replacement.
pub fn random_subset<R: Rng + ?Sized>(pop: Population<'_>, count: usize, rng: &mut R) -> Result<FreqSet> {
    let dim = pop.dim();
    if dim == 0 {
        return Err(Error::invalid("dimension must be positive"));
    }
    let size = pop.size().unwrap_or(u128::MAX);
    if count as u128 > size {
        return Err(Error::invalid(format!(
            "cannot draw {count} elements from a population of {size}"
        )));
    }
    if count == 0 {
        return Ok(FreqSet::empty(dim));
    }
    if size > usize::MAX as u128 {
        return Err(Error::Capacity {
            what: "random subset population",
            requested: size,
            cap: usize::MAX as u128,
        });
    }
    let picks: Vec<u64> = if (count as u128) * 4 <= size {
        sparse_index_sample(rng, size as u64, count)
    } else {
        rand::seq::index::sample(rng, size as usize, count)
            .iter()
            .map(|i| i as u64)
            .collect()
    };
    let mut data = Vec::with_capacity(count * dim);
    match pop {
        Population::Box { lo, hi, .. } => {
            let side = (hi as i64 - lo as i64 + 1) as u64;
            for &idx in &picks {
                let mut rest = idx;
                let start = data.len();
                data.resize(start + dim, 0);
                for t in (0..dim).rev() {
                    data[start + t] = (lo as i64 + (rest % side) as i64) as i32;
                    rest /= side;
                }
            }
        }
        Population::Set(s) => {
            for &idx in &picks {
                data.extend_from_slice(s.row(idx as usize));
            }
        }
    }
    FreqSet::from_flat(dim, data)
}

/// Distinct uniform indices below `size` for `count` much smaller than
/// `size`: draw with replacement, sort, deduplicate, top up. The procedure
/// commutes with relabelings of the population, so every `count`-subset is
/// equally likely.
fn sparse_index_sample<R: Rng + ?Sized>(rng: &mut R, size: u64, count: usize) -> Vec<u64> {
    let mut picks: Vec<u64> = Vec::with_capacity(count + count / 8 + 16);
    while picks.len() < count {
        let missing = count - picks.len();
        picks.extend((0..missing).map(|_| rng.gen_range(0..size)));
        picks.sort_unstable();
        picks.dedup();
    }
    picks
}
