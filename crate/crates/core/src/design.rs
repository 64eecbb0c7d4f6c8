//! Point sets in the unit hypercube: construction, Latin hypercube sampling,
//! mixture discrepancy and discrepancy-optimized lattice designs.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{check_dim, Error, Result};

/// Two rows closer than this in every coordinate are the same point.
pub const DUPLICATE_TOLERANCE: f64 = 1e-12;

/// An `n × m` matrix of points in `[0,1]^m`, stored row-major.
///
/// Rows are pairwise distinct; construction rejects duplicates and
/// out-of-range coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct DesignMatrix {
    data: Vec<f64>,
    n: usize,
    m: usize,
}

impl DesignMatrix {
    pub fn new(n: usize, m: usize, data: Vec<f64>) -> Result<Self> {
        if n == 0 || m == 0 {
            return Err(Error::InvalidArgument(format!(
                "design needs n >= 1 and m >= 1 (got n = {n}, m = {m})"
            )));
        }
        check_dim(n * m, data.len())?;
        if let Some(pos) = data
            .iter()
            .position(|v| !v.is_finite() || *v < 0.0 || *v > 1.0)
        {
            return Err(Error::InvalidArgument(format!(
                "coordinate {} of row {} is {} (outside [0,1])",
                pos % m,
                pos / m,
                data[pos]
            )));
        }
        let design = DesignMatrix { data, n, m };
        if let Some((a, b)) = design.find_duplicate() {
            return Err(Error::InvalidArgument(format!(
                "rows {a} and {b} are duplicates"
            )));
        }
        Ok(design)
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let m = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * m);
        for row in rows {
            check_dim(m, row.as_ref().len())?;
            data.extend_from_slice(row.as_ref());
        }
        Self::new(rows.len(), m, data)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.m..(i + 1) * self.m]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.m)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows().map(<[f64]>::to_vec).collect()
    }

    /// Index of the first row within [`DUPLICATE_TOLERANCE`] of `x`.
    pub fn position(&self, x: &[f64]) -> Option<usize> {
        self.rows().position(|r| same_point(r, x))
    }

    /// A new design with `x` appended as the last row.
    pub fn with_point(&self, x: &[f64]) -> Result<Self> {
        check_dim(self.m, x.len())?;
        let mut data = self.data.clone();
        data.extend_from_slice(x);
        Self::new(self.n + 1, self.m, data)
    }

    /// Row-wise concatenation.
    pub fn stack(&self, other: &DesignMatrix) -> Result<Self> {
        check_dim(self.m, other.m)?;
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Self::new(self.n + other.n, self.m, data)
    }

    /// The sub-design made of the given rows, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(indices.len() * self.m);
        for &i in indices {
            if i >= self.n {
                return Err(Error::InvalidArgument(format!(
                    "row index {i} out of range for {} rows",
                    self.n
                )));
            }
            data.extend_from_slice(self.row(i));
        }
        Self::new(indices.len(), self.m, data)
    }

    /// Drops every row that appears (within tolerance) in `other`.
    /// Returns `None` when nothing would be left.
    pub fn without(&self, other: &DesignMatrix) -> Option<Self> {
        let keep: Vec<usize> = (0..self.n)
            .filter(|&i| other.position(self.row(i)).is_none())
            .collect();
        if keep.is_empty() {
            return None;
        }
        self.select(&keep).ok()
    }

    fn find_duplicate(&self) -> Option<(usize, usize)> {
        // Sweep in order of the first coordinate; duplicates must be adjacent
        // within the first-coordinate tolerance window.
        let mut order: Vec<usize> = (0..self.n).collect();
        order.sort_by(|&a, &b| self.row(a)[0].total_cmp(&self.row(b)[0]));
        for (pos, &a) in order.iter().enumerate() {
            let ra = self.row(a);
            for &b in &order[pos + 1..] {
                let rb = self.row(b);
                if rb[0] - ra[0] >= DUPLICATE_TOLERANCE {
                    break;
                }
                if same_point(ra, rb) {
                    return Some((a.min(b), a.max(b)));
                }
            }
        }
        None
    }

    /// One row per line, comma separated, no header. Values are printed with
    /// the shortest representation that parses back to the same `f64`.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.data.len() * 20);
        for row in self.rows() {
            for (j, v) in row.iter().enumerate() {
                if j > 0 {
                    out.push(',');
                }
                let _ = write!(out, "{v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rows = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let row = line
                .split(',')
                .map(|t| t.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
            rows.push(row);
        }
        Self::from_rows(&rows)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("design serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }
}

impl Serialize for DesignMatrix {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_seq(self.rows())
    }
}

impl<'de> Deserialize<'de> for DesignMatrix {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(deserializer)?;
        DesignMatrix::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

pub(crate) fn same_point(a: &[f64], b: &[f64]) -> bool {
    a.iter()
        .zip(b)
        .all(|(x, y)| (x - y).abs() < DUPLICATE_TOLERANCE)
}

/// Squared mixture discrepancy of a design.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct Discrepancy {
    pub md_squared: f64,
}

/// Seeded generator used by every stochastic routine in the crate.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random Latin hypercube: along every axis each of the `n` bins
/// `[i/n, (i+1)/n)` holds exactly one point, jittered uniformly inside it.
pub fn latin_hypercube(n: usize, m: usize, seed: u64) -> Result<DesignMatrix> {
    if n == 0 || m == 0 {
        return Err(Error::InvalidArgument(format!(
            "latin hypercube needs n >= 1 and m >= 1 (got n = {n}, m = {m})"
        )));
    }
    let mut rng = seeded_rng(seed);
    Ok(latin_hypercube_with(n, m, &mut rng))
}

pub(crate) fn latin_hypercube_with<R: Rng>(n: usize, m: usize, rng: &mut R) -> DesignMatrix {
    let mut data = vec![0.0; n * m];
    let mut perm: Vec<usize> = (0..n).collect();
    let nf = n as f64;
    for j in 0..m {
        perm.shuffle(rng);
        for (i, &bin) in perm.iter().enumerate() {
            let upper = (bin + 1) as f64 / nf;
            let mut v = (bin as f64 + rng.random::<f64>()) / nf;
            if v >= upper {
                v = upper.next_down();
            }
            data[i * m + j] = v;
        }
    }
    // Bins are distinct per column, so rows cannot coincide.
    DesignMatrix { data, n, m }
}

// Every per-coordinate factor is scaled by 24 so the constants (19/12,
// 5/3, 15/8) become integers; the total is divided by 24^m at the end.
const MD_SCALE: f64 = 24.0;
const MD_CONST: f64 = 38.0;

#[inline]
fn md_single_factor(c: f64) -> f64 {
    let a = c.abs();
    40.0 - 6.0 * a - 6.0 * a * a
}

#[inline]
fn md_pair_factor(ci: f64, ck: f64) -> f64 {
    let d = (ci - ck).abs();
    45.0 - 6.0 * ci.abs() - 6.0 * ck.abs() - 18.0 * d + 12.0 * d * d
}

#[inline]
fn md_combine(m: usize, n: usize, single: f64, pair: f64) -> f64 {
    let nf = n as f64;
    (MD_CONST.powi(m as i32) - 2.0 / nf * single + pair / (nf * nf)) / MD_SCALE.powi(m as i32)
}

/// Squared mixture discrepancy computed from the closed-form double sum on
/// centred coordinates `x - 0.5`.
pub fn mixture_discrepancy(design: &DesignMatrix) -> Discrepancy {
    let (n, m) = (design.n(), design.m());
    let centred: Vec<f64> = design.as_slice().iter().map(|v| v - 0.5).collect();
    let row = |i: usize| &centred[i * m..(i + 1) * m];

    let single: f64 = (0..n)
        .map(|i| row(i).iter().map(|&c| md_single_factor(c)).product::<f64>())
        .sum();

    let mut pair = 0.0;
    for i in 0..n {
        let ri = row(i);
        pair += ri.iter().map(|&c| md_pair_factor(c, c)).product::<f64>();
        for k in (i + 1)..n {
            let rk = row(k);
            pair += 2.0
                * ri.iter()
                    .zip(rk)
                    .map(|(&a, &b)| md_pair_factor(a, b))
                    .product::<f64>();
        }
    }
    let md_squared = md_combine(m, n, single, pair);
    debug_assert!(md_squared >= -1e-12, "negative MD^2 {md_squared}");
    Discrepancy { md_squared }
}

/// Settings for the lattice exchange search behind [`md_optimized_design`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExchangeOptions {
    /// Number of proposed column swaps.
    pub budget: usize,
    /// Random lattice designs drawn before the search; the best one seeds it.
    pub initial_candidates: usize,
    /// Starting acceptance threshold, as a fraction of the initial MD².
    /// The threshold decays linearly to zero. Zero means pure descent.
    pub threshold_fraction: f64,
}

impl Default for ExchangeOptions {
    fn default() -> Self {
        ExchangeOptions {
            budget: 5000,
            initial_candidates: 50,
            threshold_fraction: 5e-3,
        }
    }
}

/// Lattice level `i` (0-based) of an `n`-level factor: `(2i+1)/(2n)`.
pub fn lattice_level(i: usize, n: usize) -> f64 {
    (2 * i + 1) as f64 / (2 * n) as f64
}

/// Mixture-discrepancy optimized design on the centred `n`-level lattice.
///
/// Starts from the best of 50 random lattice Latin hypercubes and improves
/// it by threshold-accepting level swaps within a column. The returned
/// design is the best visited, so its MD² never exceeds the best starter.
pub fn md_optimized_design(n: usize, m: usize, seed: u64, budget: usize) -> Result<DesignMatrix> {
    md_optimized_design_with(
        n,
        m,
        seed,
        ExchangeOptions {
            budget,
            ..ExchangeOptions::default()
        },
    )
    .map(|run| run.design)
}

/// Outcome of an exchange search, with the accepted-move MD² history.
#[derive(Clone, Debug)]
pub struct ExchangeRun {
    pub design: DesignMatrix,
    pub start_md_squared: f64,
    pub best_md_squared: f64,
    /// MD² after each accepted move, in order.
    pub accepted: Vec<f64>,
}

pub fn md_optimized_design_with(
    n: usize,
    m: usize,
    seed: u64,
    opts: ExchangeOptions,
) -> Result<ExchangeRun> {
    if n < 2 || m == 0 {
        return Err(Error::InvalidArgument(format!(
            "optimized design needs n >= 2 and m >= 1 (got n = {n}, m = {m})"
        )));
    }
    let mut rng = seeded_rng(seed);
    let starters = opts.initial_candidates.max(1);
    let mut best_levels = Vec::new();
    let mut best_md = f64::INFINITY;
    for _ in 0..starters {
        let levels = random_lattice_levels(n, m, &mut rng);
        let md = mixture_discrepancy(&levels_to_design(&levels, n, m)).md_squared;
        if md < best_md {
            best_md = md;
            best_levels = levels;
        }
    }

    let mut state = ExchangeState::new(best_levels, n, m);
    let start = state.md_squared();
    let mut best = (start, state.levels.clone());
    let mut accepted = Vec::new();
    let t0 = opts.threshold_fraction.max(0.0) * start;
    for step in 0..opts.budget {
        let threshold = t0 * (1.0 - step as f64 / opts.budget as f64);
        let col = rng.random_range(0..m);
        let a = rng.random_range(0..n);
        let mut b = rng.random_range(0..n - 1);
        if b >= a {
            b += 1;
        }
        let delta = state.propose_swap(col, a, b);
        if delta < threshold {
            state.commit();
            let md = state.md_squared();
            accepted.push(md);
            if md < best.0 {
                best = (md, state.levels.clone());
            }
        }
    }
    let design = levels_to_design(&best.1, n, m);
    let best_md_squared = mixture_discrepancy(&design).md_squared;
    Ok(ExchangeRun {
        design,
        start_md_squared: start,
        best_md_squared,
        accepted,
    })
}

fn random_lattice_levels<R: Rng>(n: usize, m: usize, rng: &mut R) -> Vec<usize> {
    let mut levels = vec![0usize; n * m];
    let mut perm: Vec<usize> = (0..n).collect();
    for j in 0..m {
        perm.shuffle(rng);
        for i in 0..n {
            levels[i * m + j] = perm[i];
        }
    }
    levels
}

fn levels_to_design(levels: &[usize], n: usize, m: usize) -> DesignMatrix {
    let data = levels.iter().map(|&l| lattice_level(l, n)).collect();
    // Each column is a permutation, so rows are distinct.
    DesignMatrix { data, n, m }
}

/// Incremental MD² bookkeeping for column swaps: keeps every row's single
/// product and the full symmetric matrix of pair products.
struct ExchangeState {
    n: usize,
    m: usize,
    levels: Vec<usize>,
    centred: Vec<f64>,
    single: Vec<f64>,
    pair: Vec<f64>,
    single_sum: f64,
    pair_sum: f64,
    pending: Option<PendingSwap>,
}

struct PendingSwap {
    col: usize,
    a: usize,
    b: usize,
    single_a: f64,
    single_b: f64,
    row_a: Vec<f64>,
    row_b: Vec<f64>,
    d_single: f64,
    d_pair: f64,
}

impl ExchangeState {
    fn new(levels: Vec<usize>, n: usize, m: usize) -> Self {
        let centred: Vec<f64> = levels.iter().map(|&l| lattice_level(l, n) - 0.5).collect();
        let mut state = ExchangeState {
            n,
            m,
            levels,
            centred,
            single: vec![0.0; n],
            pair: vec![0.0; n * n],
            single_sum: 0.0,
            pair_sum: 0.0,
            pending: None,
        };
        for i in 0..n {
            state.single[i] = state.single_product(i, None);
            for k in 0..n {
                state.pair[i * n + k] = state.pair_product(i, k, None);
            }
        }
        state.single_sum = state.single.iter().sum();
        state.pair_sum = state.pair.iter().sum();
        state
    }

    fn md_squared(&self) -> f64 {
        md_combine(self.m, self.n, self.single_sum, self.pair_sum)
    }

    /// Centred coordinate, optionally as if column `col` of rows a and b
    /// were swapped.
    #[inline]
    fn coord(&self, i: usize, j: usize, swap: Option<(usize, usize, usize)>) -> f64 {
        let src = match swap {
            Some((col, a, b)) if j == col && i == a => b,
            Some((col, a, b)) if j == col && i == b => a,
            _ => i,
        };
        self.centred[src * self.m + j]
    }

    fn single_product(&self, i: usize, swap: Option<(usize, usize, usize)>) -> f64 {
        (0..self.m)
            .map(|j| md_single_factor(self.coord(i, j, swap)))
            .product()
    }

    fn pair_product(&self, i: usize, k: usize, swap: Option<(usize, usize, usize)>) -> f64 {
        (0..self.m)
            .map(|j| md_pair_factor(self.coord(i, j, swap), self.coord(k, j, swap)))
            .product()
    }

    /// Change in MD² if column `col` of rows `a` and `b` were swapped.
    fn propose_swap(&mut self, col: usize, a: usize, b: usize) -> f64 {
        let n = self.n;
        let swap = Some((col, a, b));
        let single_a = self.single_product(a, swap);
        let single_b = self.single_product(b, swap);
        let d_single = single_a + single_b - self.single[a] - self.single[b];

        let mut row_a = vec![0.0; n];
        let mut row_b = vec![0.0; n];
        let mut d_pair = 0.0;
        for k in 0..n {
            row_a[k] = self.pair_product(a, k, swap);
            row_b[k] = self.pair_product(b, k, swap);
        }
        for k in 0..n {
            if k == a || k == b {
                continue;
            }
            d_pair += 2.0 * (row_a[k] - self.pair[a * n + k]);
            d_pair += 2.0 * (row_b[k] - self.pair[b * n + k]);
        }
        d_pair += row_a[a] - self.pair[a * n + a];
        d_pair += row_b[b] - self.pair[b * n + b];
        d_pair += 2.0 * (row_a[b] - self.pair[a * n + b]);

        let nf = n as f64;
        let delta = (-2.0 / nf * d_single + d_pair / (nf * nf)) / MD_SCALE.powi(self.m as i32);
        self.pending = Some(PendingSwap {
            col,
            a,
            b,
            single_a,
            single_b,
            row_a,
            row_b,
            d_single,
            d_pair,
        });
        delta
    }

    fn commit(&mut self) {
        let Some(p) = self.pending.take() else {
            return;
        };
        let (n, m) = (self.n, self.m);
        self.levels.swap(p.a * m + p.col, p.b * m + p.col);
        self.centred.swap(p.a * m + p.col, p.b * m + p.col);
        self.single[p.a] = p.single_a;
        self.single[p.b] = p.single_b;
        for k in 0..n {
            self.pair[p.a * n + k] = p.row_a[k];
            self.pair[k * n + p.a] = p.row_a[k];
        }
        for k in 0..n {
            self.pair[p.b * n + k] = p.row_b[k];
            self.pair[k * n + p.b] = p.row_b[k];
        }
        self.single_sum += p.d_single;
        self.pair_sum += p.d_pair;
    }
}
