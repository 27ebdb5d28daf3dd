//! Systemic-risk scores on the interbank liability matrix.
//!
//! Orientation: `L[i][j]` is what bank `i` owes bank `j` (a loan of `j`
//! to `i`). A default of `i` hits its lenders, so impact flows along rows:
//! `W[i][j] = min(1, L[i][j] / C[j])`.
//!
//! DebtRank is computed with the distress state machine (each bank
//! propagates distress exactly once). Katz centrality solves
//! `K = αLK + β1` with `α` tied to the spectral radius of `L`.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CentralityError {
    #[error("dimension mismatch: matrix is {matrix}x{matrix}, vector has {vector} entries")]
    DimensionMismatch { matrix: usize, vector: usize },
    #[error("{what} did not converge after {iterations} iterations")]
    NoConvergence { what: &'static str, iterations: usize },
}

/// Gross interbank exposures; entry `(i, j)` is what `i` owes `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct LiabilityMatrix {
    n: usize,
    data: Vec<f64>,
}

impl LiabilityMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    /// Build from `(borrower, lender, amount)` triples; duplicates are summed.
    pub fn from_entries(n: usize, entries: impl IntoIterator<Item = (usize, usize, f64)>) -> Self {
        let mut m = Self::zeros(n);
        for (i, j, a) in entries {
            m.add(i, j, a);
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        let mut m = Self::zeros(n);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), n, "row {i} has wrong length");
            m.data[i * n..(i + 1) * n].copy_from_slice(row);
        }
        m
    }

    pub fn size(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] += v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn total(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Copy with the rows and columns of inactive banks zeroed.
    pub fn restricted(&self, active: &[bool]) -> Self {
        let mut m = self.clone();
        for i in 0..self.n {
            for j in 0..self.n {
                if !active[i] || !active[j] {
                    m.set(i, j, 0.0);
                }
            }
        }
        m
    }
}

/// `W[i][j] ∈ [0, 1]`: fraction of `j`'s capital lost if `i` defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpactMatrix {
    n: usize,
    data: Vec<f64>,
}

impl ImpactMatrix {
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect::<Vec<_>>();
        assert_eq!(data.len(), n * n);
        Self { n, data }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    /// Nonzero entries of row `i` as `(j, W[i][j])`, ascending in `j`.
    fn sparse_rows(&self) -> Vec<Vec<(usize, f64)>> {
        (0..self.n)
            .map(|i| {
                (0..self.n)
                    .filter_map(|j| {
                        let w = self.get(i, j);
                        (w != 0.0).then_some((j, w))
                    })
                    .collect()
            })
            .collect()
    }
}

pub fn impact_matrix(l: &LiabilityMatrix, capital: &[f64]) -> Result<ImpactMatrix, CentralityError> {
    let n = l.size();
    if capital.len() != n {
        return Err(CentralityError::DimensionMismatch {
            matrix: n,
            vector: capital.len(),
        });
    }
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let lij = l.get(i, j);
            if lij > 0.0 {
                let c = capital[j];
                // a bank without positive capital is wiped out by any loss
                data[i * n + j] = if c <= 0.0 { 1.0 } else { (lij / c).min(1.0) };
            }
        }
    }
    Ok(ImpactMatrix { n, data })
}

/// Share of each bank in total interbank lending.
#[derive(Debug, Clone, PartialEq)]
pub struct EconomicValue {
    pub v: Vec<f64>,
    /// Set when there are no outstanding loans and `v` falls back to uniform.
    pub degenerate: bool,
}

pub fn economic_value(l: &LiabilityMatrix) -> EconomicValue {
    let n = l.size();
    // lent[j] = Σ_i L[i][j]
    let mut lent = vec![0.0; n];
    for i in 0..n {
        for (j, x) in l.row(i).iter().enumerate() {
            lent[j] += x;
        }
    }
    let total: f64 = lent.iter().sum();
    if total > 0.0 {
        EconomicValue {
            v: lent.iter().map(|x| x / total).collect(),
            degenerate: false,
        }
    } else {
        EconomicValue {
            v: vec![1.0 / n.max(1) as f64; n],
            degenerate: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Distress {
    Undistressed,
    Distressed,
    Inactive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DebtRankOutcome {
    /// Induced distress, excluding the initial distress of the seed set.
    pub value: f64,
    /// Final distress levels.
    pub h: Vec<f64>,
    /// Propagation rounds executed before no bank was left distressed.
    pub rounds: usize,
}

/// Reusable propagation buffers over a fixed impact matrix.
struct Propagator<'a> {
    rows: &'a [Vec<(usize, f64)>],
    h: Vec<f64>,
    state: Vec<Distress>,
    incr: Vec<f64>,
    is_touched: Vec<bool>,
    touched: Vec<usize>,
    active: Vec<usize>,
    next: Vec<usize>,
}

impl<'a> Propagator<'a> {
    fn new(rows: &'a [Vec<(usize, f64)>]) -> Self {
        let n = rows.len();
        Self {
            rows,
            h: vec![0.0; n],
            state: vec![Distress::Undistressed; n],
            incr: vec![0.0; n],
            is_touched: vec![false; n],
            touched: Vec::new(),
            active: Vec::new(),
            next: Vec::new(),
        }
    }

    fn run(&mut self, v: &[f64], seeds: &[usize], psi: f64) -> (f64, usize) {
        self.h.iter_mut().for_each(|x| *x = 0.0);
        self.state.iter_mut().for_each(|s| *s = Distress::Undistressed);
        self.active.clear();
        for &s in seeds {
            if self.state[s] == Distress::Undistressed {
                self.h[s] = psi;
                self.state[s] = Distress::Distressed;
                self.active.push(s);
            }
        }
        self.active.sort_unstable();
        let initial: f64 = self.active.iter().map(|&s| psi * v[s]).sum();

        let mut rounds = 0;
        while !self.active.is_empty() {
            rounds += 1;
            // contributions to each target accumulate in ascending source order
            for &j in &self.active {
                let hj = self.h[j];
                for &(i, w) in &self.rows[j] {
                    if !self.is_touched[i] {
                        self.is_touched[i] = true;
                        self.touched.push(i);
                    }
                    self.incr[i] += w * hj;
                }
            }
            for &j in &self.active {
                self.state[j] = Distress::Inactive;
            }
            self.next.clear();
            for &i in &self.touched {
                self.h[i] = (self.h[i] + self.incr[i]).min(1.0);
                self.incr[i] = 0.0;
                self.is_touched[i] = false;
                if self.state[i] == Distress::Undistressed && self.h[i] > 0.0 {
                    self.state[i] = Distress::Distressed;
                    self.next.push(i);
                }
            }
            self.touched.clear();
            self.next.sort_unstable();
            std::mem::swap(&mut self.active, &mut self.next);
        }
        let total: f64 = self.h.iter().zip(v).map(|(h, v)| h * v).sum();
        (total - initial, rounds)
    }
}

/// DebtRank of the seed set `seeds` under initial distress `psi`.
pub fn debtrank(w: &ImpactMatrix, v: &EconomicValue, seeds: &[usize], psi: f64) -> DebtRankOutcome {
    let rows = w.sparse_rows();
    let mut p = Propagator::new(&rows);
    let (value, rounds) = p.run(&v.v, seeds, psi);
    DebtRankOutcome {
        value,
        h: p.h,
        rounds,
    }
}

/// Single-bank DebtRank for every bank, seeds in full default (`psi`).
pub fn debtrank_all(l: &LiabilityMatrix, capital: &[f64], psi: f64) -> Result<Vec<f64>, CentralityError> {
    let w = impact_matrix(l, capital)?;
    let v = economic_value(l);
    let rows = w.sparse_rows();
    let mut p = Propagator::new(&rows);
    Ok((0..l.size())
        .map(|i| {
            if rows[i].is_empty() {
                0.0
            } else {
                p.run(&v.v, &[i], psi).0
            }
        })
        .collect())
}

/// As [`debtrank_all`], with inactive (defaulted) banks removed from the
/// network first; they score 0.
pub fn debtrank_all_active(
    l: &LiabilityMatrix,
    capital: &[f64],
    psi: f64,
    active: &[bool],
) -> Result<Vec<f64>, CentralityError> {
    if active.iter().all(|&a| a) {
        return debtrank_all(l, capital, psi);
    }
    let restricted = l.restricted(active);
    let mut scores = debtrank_all(&restricted, capital, psi)?;
    for (s, &a) in scores.iter_mut().zip(active) {
        if !a {
            *s = 0.0;
        }
    }
    Ok(scores)
}

/// `R̂_i = R_i / Σ R`; the flag is set when every score is zero and the
/// uniform vector is returned instead.
pub fn normalize_debtrank(r: &[f64]) -> (Vec<f64>, bool) {
    let total: f64 = r.iter().sum();
    if total > 0.0 {
        (r.iter().map(|x| x / total).collect(), false)
    } else {
        (vec![1.0 / r.len().max(1) as f64; r.len()], true)
    }
}

const MAX_ITERATIONS: usize = 100_000;
const TOLERANCE: f64 = 1e-10;

/// Fixpoint of `I = Wv + βWI` by plain iteration. Only converges when
/// `β·ρ(W) < 1`; kept for comparison with the state-machine DebtRank.
pub fn recursive_impact(w: &ImpactMatrix, v: &EconomicValue, beta: f64) -> Result<Vec<f64>, CentralityError> {
    let n = w.size();
    if v.v.len() != n {
        return Err(CentralityError::DimensionMismatch {
            matrix: n,
            vector: v.v.len(),
        });
    }
    let direct: Vec<f64> = (0..n)
        .map(|i| (0..n).map(|j| w.get(i, j) * v.v[j]).sum())
        .collect();
    let mut cur = vec![0.0; n];
    for _ in 0..MAX_ITERATIONS {
        let next: Vec<f64> = (0..n)
            .map(|i| direct[i] + beta * (0..n).map(|j| w.get(i, j) * cur[j]).sum::<f64>())
            .collect();
        let diff = max_abs_diff(&next, &cur);
        let scale = next.iter().fold(1.0_f64, |m, x| m.max(x.abs()));
        if !diff.is_finite() || !scale.is_finite() {
            break;
        }
        cur = next;
        if diff <= TOLERANCE * scale {
            return Ok(cur);
        }
    }
    Err(CentralityError::NoConvergence {
        what: "recursive impact",
        iterations: MAX_ITERATIONS,
    })
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Attenuation relative to the spectral radius.
const STALL_LIMIT: usize = 1000;

pub const KATZ_DAMPING: f64 = 0.99;
/// Attenuation used when `L` is nilpotent (no cycles).
pub const KATZ_ALPHA_FALLBACK: f64 = 0.1;
const KAPPA_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct KatzScores {
    pub scores: Vec<f64>,
    /// Largest eigenvalue of `L`.
    pub kappa: f64,
    pub alpha: f64,
}

/// Spectral radius of a nonnegative matrix: the largest Perron root over
/// its strongly connected components.
pub fn spectral_radius(l: &LiabilityMatrix) -> Result<f64, CentralityError> {
    let n = l.size();
    let mut best = 0.0_f64;
    for comp in strongly_connected_components(l) {
        let root = if comp.len() == 1 {
            l.get(comp[0], comp[0]).max(0.0)
        } else {
            perron_root(l, &comp)?
        };
        best = best.max(root);
    }
    debug_assert!(n == 0 || best.is_finite());
    Ok(best)
}

/// Power iteration on the shifted block `M/c + I`, which is primitive for an
/// irreducible block; stops when the Collatz–Wielandt bounds meet.
fn perron_root(l: &LiabilityMatrix, comp: &[usize]) -> Result<f64, CentralityError> {
    let k = comp.len();
    let block: Vec<f64> = comp
        .iter()
        .flat_map(|&i| comp.iter().map(move |&j| (i, j)))
        .map(|(i, j)| l.get(i, j))
        .collect();
    let scale = (0..k)
        .map(|r| block[r * k..(r + 1) * k].iter().sum::<f64>())
        .fold(0.0_f64, f64::max);
    if scale <= 0.0 {
        return Ok(0.0);
    }
    let mut x = vec![1.0 / k as f64; k];
    let mut y = vec![0.0; k];
    for _ in 0..MAX_ITERATIONS {
        let (mut lo, mut hi) = (f64::INFINITY, 0.0_f64);
        for r in 0..k {
            let row = &block[r * k..(r + 1) * k];
            let mx: f64 = row.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>() / scale;
            y[r] = mx + x[r];
            let ratio = y[r] / x[r];
            lo = lo.min(ratio);
            hi = hi.max(ratio);
        }
        if hi - lo <= TOLERANCE * hi {
            let lambda = 0.5 * (lo + hi);
            return Ok(((lambda - 1.0) * scale).max(0.0));
        }
        let norm: f64 = y.iter().sum();
        for (xi, yi) in x.iter_mut().zip(&y) {
            *xi = yi / norm;
        }
    }
    Err(CentralityError::NoConvergence {
        what: "power iteration",
        iterations: MAX_ITERATIONS,
    })
}

/// Tarjan's algorithm over the nonzero pattern of `L`, iterative.
fn strongly_connected_components(l: &LiabilityMatrix) -> Vec<Vec<usize>> {
    let n = l.size();
    let adj: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| l.get(i, j) > 0.0).collect())
        .collect();
    const UNSEEN: usize = usize::MAX;
    let mut index = vec![UNSEEN; n];
    let mut low = vec![0; n];
    let mut on_stack = vec![false; n];
    let mut stack = Vec::new();
    let mut comps = Vec::new();
    let mut counter = 0;
    for root in 0..n {
        if index[root] != UNSEEN {
            continue;
        }
        let mut call: Vec<(usize, usize)> = vec![(root, 0)];
        index[root] = counter;
        low[root] = counter;
        counter += 1;
        stack.push(root);
        on_stack[root] = true;
        while let Some(&mut (v, ref mut next)) = call.last_mut() {
            if let Some(&w) = adj[v].get(*next) {
                *next += 1;
                if index[w] == UNSEEN {
                    index[w] = counter;
                    low[w] = counter;
                    counter += 1;
                    stack.push(w);
                    on_stack[w] = true;
                    call.push((w, 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
            } else {
                call.pop();
                if let Some(&(parent, _)) = call.last() {
                    low[parent] = low[parent].min(low[v]);
                }
                if low[v] == index[v] {
                    let mut comp = Vec::new();
                    while let Some(w) = stack.pop() {
                        on_stack[w] = false;
                        comp.push(w);
                        if w == v {
                            break;
                        }
                    }
                    comp.sort_unstable();
                    comps.push(comp);
                }
            }
        }
    }
    comps
}

/// Katz centrality `K = αLK + β1` with `α = 0.99/κ₁`, or `α = 0.1` when
/// `κ₁` vanishes.
pub fn katz_scores(l: &LiabilityMatrix, beta: f64) -> Result<KatzScores, CentralityError> {
    let kappa = spectral_radius(l)?;
    let alpha = if kappa < KAPPA_EPS {
        KATZ_ALPHA_FALLBACK
    } else {
        KATZ_DAMPING / kappa
    };
    let direct = solve_katz(l, alpha, beta);
    let residual = katz_residual(l, alpha, beta, &direct);
    if residual <= TOLERANCE {
        return Ok(KatzScores { scores: direct, kappa, alpha });
    }
    // refine by fixed-point iteration from the direct solution
    match katz_fixpoint(l, alpha, beta, &direct) {
        Ok(scores) => Ok(KatzScores { scores, kappa, alpha }),
        // large scores put the absolute residual below rounding resolution
        Err(_) if residual <= TOLERANCE * inf_norm(&direct).max(1.0) => Ok(KatzScores {
            scores: direct,
            kappa,
            alpha,
        }),
        Err(e) => Err(e),
    }
}

fn inf_norm(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// `‖K − (αLK + β1)‖∞`.
pub fn katz_residual(l: &LiabilityMatrix, alpha: f64, beta: f64, k: &[f64]) -> f64 {
    (0..l.size())
        .map(|i| {
            let lk: f64 = l.row(i).iter().zip(k).map(|(a, b)| a * b).sum();
            (k[i] - (alpha * lk + beta)).abs()
        })
        .fold(0.0, f64::max)
}

/// Jacobi iteration `K ← αLK + β1` from `start`, until the residual is
/// below tolerance. Gives up once the residual stops improving.
pub fn katz_fixpoint(l: &LiabilityMatrix, alpha: f64, beta: f64, start: &[f64]) -> Result<Vec<f64>, CentralityError> {
    let n = l.size();
    let mut k = start.to_vec();
    let mut next = vec![0.0; n];
    let mut best = f64::INFINITY;
    let mut stalled = 0;
    for _ in 0..MAX_ITERATIONS {
        for (i, slot) in next.iter_mut().enumerate() {
            let lk: f64 = l.row(i).iter().zip(&k).map(|(a, b)| a * b).sum();
            *slot = alpha * lk + beta;
        }
        std::mem::swap(&mut k, &mut next);
        let residual = katz_residual(l, alpha, beta, &k);
        if residual <= TOLERANCE {
            return Ok(k);
        }
        if !residual.is_finite() {
            break;
        }
        if residual < best {
            best = residual;
            stalled = 0;
        } else {
            stalled += 1;
            if stalled >= STALL_LIMIT {
                break;
            }
        }
    }
    Err(CentralityError::NoConvergence {
        what: "Katz fixpoint",
        iterations: MAX_ITERATIONS,
    })
}

/// Gaussian elimination with partial pivoting on `(I − αL)K = β1`, plus one
/// step of iterative refinement.
fn solve_katz(l: &LiabilityMatrix, alpha: f64, beta: f64) -> Vec<f64> {
    let n = l.size();
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] = if i == j { 1.0 } else { 0.0 } - alpha * l.get(i, j);
        }
    }
    let lu = Lu::factor(a, n);
    let rhs = vec![beta; n];
    let mut k = lu.solve(&rhs);
    let r: Vec<f64> = (0..n)
        .map(|i| {
            let lk: f64 = l.row(i).iter().zip(&k).map(|(a, b)| a * b).sum();
            beta - (k[i] - alpha * lk)
        })
        .collect();
    let d = lu.solve(&r);
    for (x, dx) in k.iter_mut().zip(d) {
        *x += dx;
    }
    k
}

struct Lu {
    n: usize,
    a: Vec<f64>,
    perm: Vec<usize>,
}

impl Lu {
    fn factor(mut a: Vec<f64>, n: usize) -> Self {
        let mut perm: Vec<usize> = (0..n).collect();
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&x, &y| a[x * n + col].abs().total_cmp(&a[y * n + col].abs()))
                .unwrap();
            if pivot != col {
                for c in 0..n {
                    a.swap(pivot * n + c, col * n + c);
                }
                perm.swap(pivot, col);
            }
            let d = a[col * n + col];
            if d == 0.0 {
                continue;
            }
            for r in col + 1..n {
                let f = a[r * n + col] / d;
                a[r * n + col] = f;
                if f != 0.0 {
                    for c in col + 1..n {
                        a[r * n + c] -= f * a[col * n + c];
                    }
                }
            }
        }
        Self { n, a, perm }
    }

    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for r in 0..n {
            for c in 0..r {
                x[r] -= self.a[r * n + c] * x[c];
            }
        }
        for r in (0..n).rev() {
            for c in r + 1..n {
                x[r] -= self.a[r * n + c] * x[c];
            }
            x[r] /= self.a[r * n + r];
        }
        x
    }
}

/// Risk ranks: rank 1 is the highest score, rank `B` the lowest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankVector(pub Vec<usize>);

impl RankVector {
    pub fn of(&self, bank: usize) -> usize {
        self.0[bank]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_permutation(&self) -> bool {
        let mut seen = vec![false; self.0.len()];
        self.0.iter().all(|&r| {
            r >= 1 && r <= seen.len() && !std::mem::replace(&mut seen[r - 1], true)
        })
    }
}

/// Descending sort of `scores`; ties are broken by a permutation drawn from
/// `tie_seed` rather than by bank index.
pub fn rank_banks(scores: &[f64], tie_seed: u64) -> RankVector {
    let n = scores.len();
    let mut priority: Vec<usize> = (0..n).collect();
    priority.shuffle(&mut ChaCha8Rng::seed_from_u64(tie_seed));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then(priority[a].cmp(&priority[b]))
    });
    let mut rank = vec![0; n];
    for (pos, &bank) in order.iter().enumerate() {
        rank[bank] = pos + 1;
    }
    RankVector(rank)
}

/// Ranks with inactive banks pushed to the worst positions.
pub fn rank_banks_active(scores: &[f64], active: &[bool], tie_seed: u64) -> RankVector {
    let masked: Vec<f64> = scores
        .iter()
        .zip(active)
        .map(|(&s, &a)| if a { s } else { f64::NEG_INFINITY })
        .collect();
    rank_banks(&masked, tie_seed)
}
