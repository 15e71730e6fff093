//! Conditional graph entropy: the minimum of I(V; L | K) over kernels
//! p(v | l) supported on the independent sets that contain l.
//!
//! For a fixed law of (L, K) the objective is a p(k)-weighted sum of mutual
//! informations of the same channel p(v | l) under different input laws
//! p(l | k), so it is convex in the kernel. The solver is a Blahut–Arimoto
//! style alternating minimization; it is stopped by a Lagrangian dual bound
//! that is tight at the optimum, and the same bound gives the oracle its
//! lower bracket.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chargraph::{CharGraph, CompositeSpec, IndepSetFamily};
use crate::dist::{entropy_bits, pick, to_f64, Joint, Prob};
use crate::error::{Error, Result};

const LN2: f64 = std::f64::consts::LN_2;

/// A graph entropy instance: the exact law of (L, K) and the candidate
/// value alphabet for V.
#[derive(Debug, Clone)]
pub struct EntropyProblem {
    n_letters: usize,
    sets: Vec<Vec<usize>>,
    /// (l, k) -> p(l, k), positive entries only.
    exact: BTreeMap<(usize, usize), Prob>,
    k_labels: Vec<Vec<u32>>,
    // Float views of `exact`.
    pl: Vec<f64>,
    pk: Vec<f64>,
    by_l: Vec<Vec<(usize, f64)>>,
    by_k: Vec<Vec<(usize, f64)>>,
    cover: Vec<Vec<usize>>,
    active: Vec<usize>,
}

impl EntropyProblem {
    /// Builds the problem for `graph` (built from `joint` under `spec`) with
    /// the given family, usually its maximal independent sets.
    pub fn new(graph: &CharGraph, family: &IndepSetFamily, joint: &Joint, spec: &CompositeSpec) -> Result<Self> {
        let l_cols = joint.columns(&spec.l)?;
        let k_cols = joint.columns(&spec.k)?;
        let mut k_index: BTreeMap<Vec<u32>, usize> = BTreeMap::new();
        let mut table = Vec::new();
        for (x, p) in joint.rows() {
            let l = graph.vertex_index(&pick(x, &l_cols));
            let next = k_index.len();
            let k = *k_index.entry(pick(x, &k_cols)).or_insert(next);
            table.push((l, k, p.clone()));
        }
        let mut k_labels = vec![Vec::new(); k_index.len()];
        for (label, i) in k_index {
            k_labels[i] = label;
        }
        Self::from_table(graph.vertex_count(), family.sets.clone(), table, k_labels)
    }

    /// Builds a problem from an explicit `(l, k, p)` table.
    pub fn from_table(
        n_letters: usize,
        sets: Vec<Vec<usize>>,
        table: Vec<(usize, usize, Prob)>,
        k_labels: Vec<Vec<u32>>,
    ) -> Result<Self> {
        let n_k = k_labels.len();
        let mut exact: BTreeMap<(usize, usize), Prob> = BTreeMap::new();
        for (l, k, p) in table {
            if l >= n_letters || k >= n_k {
                return Err(Error::InvalidCoordinates(format!("entry ({l}, {k}) out of range")));
            }
            *exact.entry((l, k)).or_insert_with(|| Prob::from_integer(0.into())) += p;
        }
        exact.retain(|_, p| *p > Prob::from_integer(0.into()));
        for s in &sets {
            if s.iter().any(|&v| v >= n_letters) {
                return Err(Error::InvalidCoordinates("set mentions an unknown letter".into()));
            }
        }

        let mut pl = vec![0.0; n_letters];
        let mut pk = vec![0.0; n_k];
        let mut by_l = vec![Vec::new(); n_letters];
        let mut by_k = vec![Vec::new(); n_k];
        for (&(l, k), p) in &exact {
            let p = to_f64(p);
            pl[l] += p;
            pk[k] += p;
            by_l[l].push((k, p));
            by_k[k].push((l, p));
        }
        let cover: Vec<Vec<usize>> = (0..n_letters)
            .map(|l| (0..sets.len()).filter(|&s| sets[s].binary_search(&l).is_ok()).collect())
            .collect();
        let active: Vec<usize> = (0..n_letters).filter(|&l| pl[l] > 0.0).collect();
        for &l in &active {
            if cover[l].is_empty() {
                return Err(Error::UncoveredVertex(l));
            }
        }
        Ok(EntropyProblem {
            n_letters,
            sets,
            exact,
            k_labels,
            pl,
            pk,
            by_l,
            by_k,
            cover,
            active,
        })
    }

    pub fn letter_count(&self) -> usize {
        self.n_letters
    }

    pub fn sets(&self) -> &[Vec<usize>] {
        &self.sets
    }

    pub fn k_labels(&self) -> &[Vec<u32>] {
        &self.k_labels
    }

    /// Letters of positive probability.
    pub fn active_letters(&self) -> &[usize] {
        &self.active
    }

    /// Indices of the sets containing `l`.
    pub fn covering(&self, l: usize) -> &[usize] {
        &self.cover[l]
    }

    /// H(L | K) in bits.
    pub fn conditional_entropy(&self) -> f64 {
        let mut pk: BTreeMap<usize, Prob> = BTreeMap::new();
        for (&(_, k), p) in &self.exact {
            *pk.entry(k).or_insert_with(|| Prob::from_integer(0.into())) += p;
        }
        entropy_bits(self.exact.values()) - entropy_bits(pk.values())
    }

    fn conditional_q(&self, p: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let m = self.sets.len();
        let mut q = vec![vec![0.0; m]; self.pk.len()];
        for (k, row) in q.iter_mut().enumerate() {
            for &(l, plk) in &self.by_k[k] {
                for &v in &self.cover[l] {
                    row[v] += plk * p[l][v];
                }
            }
            for x in row.iter_mut() {
                *x /= self.pk[k];
            }
        }
        q
    }

    /// I(V; L | K) in bits for the kernel `p[l][v]`.
    pub fn objective(&self, p: &[Vec<f64>]) -> f64 {
        let q = self.conditional_q(p);
        let mut total = 0.0;
        for &l in &self.active {
            for &(k, plk) in &self.by_l[l] {
                for &v in &self.cover[l] {
                    let a = p[l][v];
                    if a > 0.0 {
                        total += plk * a * (a / q[k][v]).ln();
                    }
                }
            }
        }
        (total / LN2).max(0.0)
    }

    fn uniform(&self) -> Vec<Vec<f64>> {
        let mut p = vec![vec![0.0; self.sets.len()]; self.n_letters];
        for l in 0..self.n_letters {
            let c = &self.cover[l];
            for &v in c {
                p[l][v] = 1.0 / c.len() as f64;
            }
        }
        p
    }

    /// Every letter on its first covering set.
    pub fn first_cover(&self) -> Vec<Vec<f64>> {
        let mut p = vec![vec![0.0; self.sets.len()]; self.n_letters];
        for l in 0..self.n_letters {
            if let Some(&v) = self.cover[l].first() {
                p[l][v] = 1.0;
            }
        }
        p
    }

    /// One Blahut–Arimoto step. Zero entries stay zero.
    fn ba_step(&self, p: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let q = self.conditional_q(p);
        let mut next = p.to_vec();
        for &l in &self.active {
            let mut logs: Vec<(usize, f64)> = Vec::new();
            for &v in &self.cover[l] {
                if p[l][v] <= 0.0 {
                    continue;
                }
                let e: f64 = self.by_l[l]
                    .iter()
                    .map(|&(k, plk)| plk / self.pl[l] * q[k][v].ln())
                    .sum();
                logs.push((v, e));
            }
            let top = logs.iter().map(|&(_, e)| e).fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logs.iter().map(|&(_, e)| (e - top).exp()).sum();
            for x in next[l].iter_mut() {
                *x = 0.0;
            }
            for (v, e) in logs {
                next[l][v] = (e - top).exp() / z;
            }
        }
        next
    }

    /// A rigorous lower bound (bits) on the minimum, derived from the
    /// Lagrangian dual of min over (P, r) of sum p(l,k) P ln(P / r); the
    /// multipliers are read off `p`. Tight when `p` is optimal.
    pub fn dual_lower_bound(&self, p: &[Vec<f64>]) -> f64 {
        if self.active.is_empty() {
            return 0.0;
        }
        let q = self.conditional_q(p);
        let n_k = self.pk.len();
        let m = self.sets.len();
        // log r(v | k), floored so that every relevant geometric mean is finite.
        let log_r: Vec<Vec<f64>> = (0..m)
            .map(|v| (0..n_k).map(|k| q[k][v].max(1e-30).ln()).collect())
            .collect();
        let log_g = |l: usize, lr: &[f64]| -> f64 {
            self.by_l[l].iter().map(|&(k, plk)| plk / self.pl[l] * lr[k]).sum()
        };

        // lambda_l = p(l) / sum over covering v of G_{v,l}(r).
        let mut log_lambda = vec![0.0; self.n_letters];
        for &l in &self.active {
            let logs: Vec<f64> = self.cover[l].iter().map(|&v| log_g(l, &log_r[v])).collect();
            let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = top + logs.iter().map(|&e| (e - top).exp()).sum::<f64>().ln();
            log_lambda[l] = self.pl[l].ln() - lse;
        }

        // For each column pick r0 by a short power iteration and record the
        // multiplier nu_{v,k} it certifies.
        let mut nu = vec![0.0f64; n_k];
        for v in 0..m {
            let members: Vec<usize> = self.sets[v]
                .iter()
                .copied()
                .filter(|&l| self.pl[l] > 0.0)
                .collect();
            if members.is_empty() {
                continue;
            }
            let ratio = |lr: &[f64]| -> Vec<f64> {
                let mut out = vec![0.0; n_k];
                for &l in &members {
                    let g = log_lambda[l] + log_g(l, lr);
                    for &(k, plk) in &self.by_l[l] {
                        out[k] += (g + (plk / self.pl[l]).ln() - lr[k]).exp();
                    }
                }
                out
            };
            let mut lr = log_r[v].clone();
            let mut best: Option<(f64, Vec<f64>)> = None;
            for _ in 0..40 {
                let t = ratio(&lr);
                let worst = (0..n_k)
                    .filter(|&k| t[k] > 0.0)
                    .map(|k| t[k] / self.pk[k])
                    .fold(0.0, f64::max);
                if best.as_ref().is_none_or(|(w, _)| worst < *w) {
                    best = Some((worst, t.clone()));
                }
                // r <- T(r), T(r)_k = p(k) * ratio_k * r_k / p(k)
                for k in 0..n_k {
                    if t[k] > 0.0 {
                        lr[k] += (t[k] / self.pk[k]).ln();
                    }
                }
                let top = lr.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                for x in lr.iter_mut() {
                    *x -= top;
                }
            }
            let (_, t) = best.expect("at least one iteration");
            for k in 0..n_k {
                nu[k] = nu[k].max(t[k]);
            }
        }

        let h: f64 = self.active.iter().map(|&l| -self.pl[l] * self.pl[l].ln()).sum();
        let lam: f64 = self.active.iter().map(|&l| self.pl[l] * log_lambda[l]).sum();
        let bound = (h + 1.0 + lam - nu.iter().sum::<f64>()) / LN2;
        bound.max(0.0)
    }
}

/// H(L | K) in bits for an exact joint over the listed coordinates.
pub fn conditional_entropy(joint: &Joint, spec: &CompositeSpec) -> Result<f64> {
    joint.conditional_entropy(&spec.l, &spec.k)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub restarts: usize,
    pub tol: f64,
    pub max_iter: usize,
    /// Restart seeds are grid points with step 1 / grid_den on each row.
    pub grid_den: u32,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            restarts: 16,
            tol: 1e-9,
            max_iter: 20_000,
            grid_den: 8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropySolution {
    /// Best objective found, in bits.
    pub value: f64,
    /// `assignment[l][v]` = p(v | l), indexed by set position.
    pub assignment: Vec<Vec<f64>>,
    pub lower_bound: f64,
    /// value - lower_bound.
    pub certificate: f64,
    pub iterations: usize,
    pub restart: usize,
    /// Whether every accepted step kept the objective from increasing.
    pub monotone: bool,
}

impl EntropySolution {
    /// Sets carrying probability above `eps` for some positive-mass letter.
    pub fn used_sets(&self, problem: &EntropyProblem, eps: f64) -> Vec<usize> {
        let mut used: Vec<usize> = problem
            .active_letters()
            .iter()
            .flat_map(|&l| (0..problem.sets().len()).filter(move |&v| self.assignment[l][v] > eps))
            .collect();
        used.sort_unstable();
        used.dedup();
        used
    }

    pub fn is_deterministic(&self, problem: &EntropyProblem) -> bool {
        problem
            .active_letters()
            .iter()
            .all(|&l| self.assignment[l].iter().filter(|&&x| x > 0.0).count() == 1)
    }
}

#[derive(Clone)]
struct Run {
    p: Vec<Vec<f64>>,
    value: f64,
    lower: f64,
    iterations: usize,
    monotone: bool,
    stalled: bool,
}

impl Run {
    fn gap(&self) -> f64 {
        self.value - self.lower
    }
}

/// At most `budget` multiplicative updates from `p`.
fn refine(problem: &EntropyProblem, mut p: Vec<Vec<f64>>, cfg: &SolverConfig, budget: usize) -> Run {
    let mut value = problem.objective(&p);
    let mut lower = 0.0f64;
    let mut monotone = true;
    let mut stalled = false;
    let mut it = 0;
    while it < budget {
        it += 1;
        let next = problem.ba_step(&p);
        let v = problem.objective(&next);
        if v > value + 1e-12 {
            monotone = false;
        }
        let drop = value - v;
        p = next;
        value = v;
        if it % 16 == 0 || drop.abs() < cfg.tol * 1e-3 || it == budget {
            lower = lower.max(problem.dual_lower_bound(&p));
            if value - lower <= cfg.tol {
                break;
            }
            if drop.abs() < 1e-15 {
                stalled = true;
                break;
            }
        }
    }
    Run {
        p,
        value,
        lower,
        iterations: it,
        monotone,
        stalled,
    }
}

/// Snaps small entries of `from` to zero and re-optimizes on the remaining
/// support. Boundary optima are reached only sublinearly by the
/// multiplicative updates, so several candidate supports are tried, starting
/// with the row-wise argmax. Returns the best candidate, if any.
fn polish(problem: &EntropyProblem, from: &Run, cfg: &SolverConfig, budget: usize) -> Option<Run> {
    let support_of = |p: &[Vec<f64>]| -> Vec<Vec<bool>> {
        p.iter().map(|r| r.iter().map(|&x| x > 0.0).collect()).collect()
    };
    let mut tried = vec![support_of(&from.p)];
    let mut best: Option<Run> = None;
    let mut spent = 0;
    for threshold in [None, Some(1e-2), Some(1e-3), Some(1e-4), Some(1e-6), Some(1e-8)] {
        let mut p = from.p.clone();
        for &l in problem.active_letters() {
            let row = &mut p[l];
            let cut = match threshold {
                Some(t) => t,
                None => row.iter().copied().fold(0.0, f64::max),
            };
            for x in row.iter_mut() {
                if *x < cut {
                    *x = 0.0;
                }
            }
            let keep: f64 = row.iter().sum();
            for x in row.iter_mut() {
                *x /= keep;
            }
        }
        let support = support_of(&p);
        if tried.contains(&support) {
            continue;
        }
        tried.push(support);
        let cand = refine(problem, p, cfg, budget);
        spent += cand.iterations;
        let lower = best.as_ref().map_or(0.0, |b| b.lower).max(cand.lower);
        if best.as_ref().is_none_or(|b| cand.value < b.value) {
            best = Some(cand);
        }
        let b = best.as_mut().expect("just set");
        b.lower = lower;
        b.iterations = spent;
        if b.value - b.lower.max(from.lower) <= cfg.tol {
            break;
        }
    }
    best
}

/// Alternates bursts of updates with polishing until the dual gap closes,
/// the updates stall, or the iteration budget runs out.
fn solve_from(problem: &EntropyProblem, p0: Vec<Vec<f64>>, cfg: &SolverConfig) -> Run {
    let mut interior = Run {
        value: problem.objective(&p0),
        p: p0,
        lower: 0.0,
        iterations: 0,
        monotone: true,
        stalled: false,
    };
    let mut best: Option<Run> = None;
    let mut lower = 0.0f64;
    let mut iterations = 0;
    let mut monotone = true;
    let mut chunk = 64;
    while iterations < cfg.max_iter {
        let budget = chunk.min(cfg.max_iter - iterations);
        let step = refine(problem, interior.p.clone(), cfg, budget);
        iterations += step.iterations;
        monotone &= step.monotone;
        lower = lower.max(step.lower);
        interior = step;
        if best.as_ref().is_none_or(|b| interior.value <= b.value) {
            best = Some(interior.clone());
        }
        if best.as_ref().expect("set").value - lower <= cfg.tol {
            break;
        }
        if let Some(c) = polish(problem, &interior, cfg, budget) {
            iterations += c.iterations;
            monotone &= c.monotone;
            lower = lower.max(c.lower);
            if c.value < best.as_ref().expect("set").value {
                best = Some(c);
            }
        }
        if best.as_ref().expect("set").value - lower <= cfg.tol || interior.stalled {
            break;
        }
        chunk *= 2;
    }
    let mut best = best.unwrap_or(interior);
    best.lower = lower.min(best.value);
    best.iterations = iterations;
    best.monotone = monotone;
    best
}

fn seed_assignment(problem: &EntropyProblem, restart: usize, cfg: &SolverConfig) -> Vec<Vec<f64>> {
    let uniform = problem.uniform();
    match restart {
        0 => uniform,
        1 => mix(&problem.first_cover(), &uniform, 0.5),
        _ => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(restart as u64);
            let den = cfg.grid_den.max(1);
            let mut p = vec![vec![0.0; problem.sets().len()]; problem.letter_count()];
            for l in 0..problem.letter_count() {
                let c = problem.covering(l);
                if c.is_empty() {
                    continue;
                }
                // A uniformly random grid point of the simplex over c.
                let mut cuts: Vec<u32> = (0..c.len() - 1).map(|_| rng.gen_range(0..=den)).collect();
                cuts.sort_unstable();
                let mut prev = 0;
                for (i, &v) in c.iter().enumerate() {
                    let cut = cuts.get(i).copied().unwrap_or(den);
                    p[l][v] = f64::from(cut - prev) / f64::from(den);
                    prev = cut;
                }
            }
            mix(&p, &uniform, 0.8)
        }
    }
}

fn mix(a: &[Vec<f64>], b: &[Vec<f64>], w: f64) -> Vec<Vec<f64>> {
    a.iter()
        .zip(b)
        .map(|(ra, rb)| ra.iter().zip(rb).map(|(x, y)| w * x + (1.0 - w) * y).collect())
        .collect()
}

/// Minimizes I(V; L | K) over kernels supported on the covering sets.
pub fn graph_entropy(problem: &EntropyProblem, cfg: &SolverConfig) -> Result<EntropySolution> {
    if problem.sets().is_empty() && !problem.active_letters().is_empty() {
        return Err(Error::UncoveredVertex(problem.active_letters()[0]));
    }
    let restarts = cfg.restarts.max(1);
    // The objective is convex, so once the first start is certified to
    // within `tol` no other start can do better by more than `tol`.
    let first = solve_from(problem, seed_assignment(problem, 0, cfg), cfg);
    let mut runs = vec![first];
    if runs[0].gap() > cfg.tol {
        runs.extend(
            (1..restarts)
                .into_par_iter()
                .map(|r| solve_from(problem, seed_assignment(problem, r, cfg), cfg))
                .collect::<Vec<_>>(),
        );
    }
    let lower = runs.iter().map(|r| r.lower).fold(0.0, f64::max);
    let monotone = runs.iter().all(|r| r.monotone);
    let iterations = runs.iter().map(|r| r.iterations).sum();
    let (restart, best) = runs
        .into_iter()
        .enumerate()
        .min_by(|(i, a), (j, b)| a.value.total_cmp(&b.value).then(i.cmp(j)))
        .expect("at least one restart");
    let lower = lower.min(best.value);
    Ok(EntropySolution {
        value: best.value,
        assignment: best.p,
        lower_bound: lower,
        certificate: best.value - lower,
        iterations,
        restart,
        monotone,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleLimits {
    pub max_letters: usize,
    pub max_points: u64,
}

impl Default for OracleLimits {
    fn default() -> Self {
        OracleLimits {
            max_letters: 6,
            max_points: 20_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleBracket {
    pub lower: f64,
    pub upper: f64,
    pub points: u64,
    pub best: Vec<Vec<f64>>,
}

impl OracleBracket {
    pub fn contains(&self, value: f64, slack: f64) -> bool {
        self.lower - slack <= value && value <= self.upper + slack
    }
}

fn compositions(parts: usize, den: u32) -> Vec<Vec<u32>> {
    if parts == 1 {
        return vec![vec![den]];
    }
    let mut out = Vec::new();
    for first in 0..=den {
        for mut rest in compositions(parts - 1, den - first) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

/// Exhaustive grid search with step 1/den on every positive-mass row. The
/// upper end is the best grid value; the lower end is the dual bound at the
/// best grid points.
pub fn graph_entropy_oracle(problem: &EntropyProblem, den: u32, limits: &OracleLimits) -> Result<OracleBracket> {
    if problem.letter_count() > limits.max_letters {
        return Err(Error::GuardExceeded {
            what: "oracle letters",
            limit: limits.max_letters,
            actual: problem.letter_count(),
        });
    }
    let den = den.max(1);
    let rows: Vec<usize> = problem.active_letters().to_vec();
    let grids: Vec<Vec<Vec<u32>>> = rows
        .iter()
        .map(|&l| compositions(problem.covering(l).len(), den))
        .collect();
    let points = grids
        .iter()
        .try_fold(1u64, |acc, g| acc.checked_mul(g.len() as u64))
        .unwrap_or(u64::MAX);
    if points > limits.max_points {
        return Err(Error::GuardExceeded {
            what: "oracle grid points",
            limit: limits.max_points as usize,
            actual: points.min(usize::MAX as u64) as usize,
        });
    }
    let m = problem.sets().len();
    let to_row = |l: usize, comp: &[u32]| -> Vec<f64> {
        let mut row = vec![0.0; m];
        for (&v, &c) in problem.covering(l).iter().zip(comp) {
            row[v] = f64::from(c) / f64::from(den);
        }
        row
    };

    // Split on the first row's grid and search the rest in parallel.
    let evaluate_rest = |head: usize| -> (f64, Vec<usize>) {
        let mut idx = vec![0usize; rows.len()];
        if !rows.is_empty() {
            idx[0] = head;
        }
        let mut p = problem.first_cover();
        for (i, &l) in rows.iter().enumerate() {
            p[l] = to_row(l, &grids[i][idx[i]]);
        }
        let mut best = (f64::INFINITY, idx.clone());
        loop {
            let v = problem.objective(&p);
            if v < best.0 {
                best = (v, idx.clone());
            }
            let mut i = 1;
            loop {
                if i >= rows.len() {
                    return best;
                }
                idx[i] += 1;
                if idx[i] < grids[i].len() {
                    p[rows[i]] = to_row(rows[i], &grids[i][idx[i]]);
                    break;
                }
                idx[i] = 0;
                p[rows[i]] = to_row(rows[i], &grids[i][0]);
                i += 1;
            }
        }
    };
    let heads = if rows.is_empty() { 1 } else { grids[0].len() };
    let mut results: Vec<(f64, Vec<usize>)> = (0..heads).into_par_iter().map(evaluate_rest).collect();
    results.sort_by(|a, b| a.0.total_cmp(&b.0));

    let assignment = |idx: &[usize]| {
        let mut p = problem.first_cover();
        for (i, &l) in rows.iter().enumerate() {
            p[l] = to_row(l, &grids[i][idx[i]]);
        }
        p
    };
    let best = assignment(&results[0].1);
    let lower = results
        .iter()
        .take(8)
        .map(|(_, idx)| problem.dual_lower_bound(&assignment(idx)))
        .fold(0.0, f64::max);
    Ok(OracleBracket {
        lower: lower.min(results[0].0),
        upper: results[0].0,
        points,
        best,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chargraph::{build_char_graph, maximal_independent_sets, tests::off_diagonal_joint};
    use crate::dist::Coord;
    use crate::model::NodeId;
    use num_rational::BigRational;
    use proptest::prelude::*;

    fn off_diagonal_problem() -> EntropyProblem {
        let (j, f) = off_diagonal_joint();
        let spec = CompositeSpec::new(vec![Coord::Source(NodeId(1))], vec![Coord::Source(NodeId(2))]).unwrap();
        let g = build_char_graph(&j, &f, &spec, 100).unwrap();
        let fam = maximal_independent_sets(&g, 100).unwrap();
        EntropyProblem::new(&g, &fam, &j, &spec).unwrap()
    }

    /// I(V;X|Y) on the off-diagonal example as a function of the weight delta of letter 2 on
    /// {1,2} and letter 3 on {3,4}, evaluated directly from the definition.
    fn off_diagonal_closed_form() -> f64 {
        // With delta = 1: V = {1,2} for x in {1,2}, {3,4} otherwise.
        // p(v | y): y=1 -> x in {2,3,4} -> v1 w.p. 1/3; y=2 -> 1/3; y=3,4 -> 2/3.
        let h = |p: f64| -p * p.log2() - (1.0 - p) * (1.0 - p).log2();
        h(1.0 / 3.0)
    }

    #[test]
    fn off_diagonal_value_and_support() {
        let pb = off_diagonal_problem();
        assert!((pb.conditional_entropy() - 3f64.log2()).abs() < 1e-9);
        let sol = graph_entropy(&pb, &SolverConfig::default()).unwrap();
        assert!((sol.value - 0.9183).abs() < 1e-3, "{}", sol.value);
        assert!((sol.value - off_diagonal_closed_form()).abs() < 1e-9);
        assert_eq!(sol.used_sets(&pb, 1e-6), vec![0, 2]);
        assert!(sol.certificate < 1e-6);
        assert!(sol.monotone);
    }

    #[test]
    fn oracle_brackets_off_diagonal() {
        let pb = off_diagonal_problem();
        let b = graph_entropy_oracle(&pb, 16, &OracleLimits::default()).unwrap();
        assert!(b.lower <= off_diagonal_closed_form() + 1e-12);
        assert!(b.upper >= off_diagonal_closed_form() - 1e-12);
        assert!(b.upper - b.lower < 0.2);
    }

    fn table_problem(n: usize, sets: Vec<Vec<usize>>, rows: &[(usize, usize, i64, i64)], nk: usize) -> EntropyProblem {
        EntropyProblem::from_table(
            n,
            sets,
            rows.iter()
                .map(|&(l, k, a, b)| (l, k, BigRational::new(a.into(), b.into())))
                .collect(),
            (0..nk).map(|k| vec![k as u32]).collect(),
        )
        .unwrap()
    }

    #[test]
    fn single_set_gives_zero() {
        let pb = table_problem(3, vec![vec![0, 1, 2]], &[(0, 0, 1, 3), (1, 0, 1, 3), (2, 1, 1, 3)], 2);
        let sol = graph_entropy(&pb, &SolverConfig::default()).unwrap();
        assert!(sol.value.abs() < 1e-12);
        let b = graph_entropy_oracle(&pb, 16, &OracleLimits::default()).unwrap();
        assert_eq!((b.lower, b.upper), (0.0, 0.0));
    }

    #[test]
    fn singletons_give_conditional_entropy() {
        let pb = table_problem(
            3,
            vec![vec![0], vec![1], vec![2]],
            &[(0, 0, 1, 4), (1, 0, 1, 4), (2, 0, 1, 4), (0, 1, 1, 4)],
            2,
        );
        let sol = graph_entropy(&pb, &SolverConfig::default()).unwrap();
        assert!((sol.value - pb.conditional_entropy()).abs() < 1e-12);
        let b = graph_entropy_oracle(&pb, 16, &OracleLimits::default()).unwrap();
        assert!((b.upper - pb.conditional_entropy()).abs() < 1e-12);
        assert!((b.lower - b.upper).abs() < 1e-9);
    }

    #[test]
    fn uncovered_letter_is_an_error() {
        let r = EntropyProblem::from_table(
            2,
            vec![vec![0]],
            vec![(1, 0, BigRational::new(1.into(), 1.into()))],
            vec![vec![0]],
        );
        assert!(matches!(r, Err(Error::UncoveredVertex(1))));
    }

    /// a occurs with k in {0,1}, b with {0,2}, c with {1,2}; any two letters
    /// share a set. The optimum is randomized and strictly below every
    /// deterministic choice.
    #[test]
    fn randomized_optimum_beats_deterministic() {
        let pb = table_problem(
            3,
            vec![vec![0, 1], vec![0, 2], vec![1, 2]],
            &[(0, 0, 1, 6), (0, 1, 1, 6), (1, 0, 1, 6), (1, 2, 1, 6), (2, 1, 1, 6), (2, 2, 1, 6)],
            3,
        );
        let sol = graph_entropy(&pb, &SolverConfig::default()).unwrap();
        let det = deterministic_min(&pb);
        assert!(sol.value < det - 0.05, "{} vs {}", sol.value, det);
        assert!(!sol.is_deterministic(&pb));
        assert!(sol.certificate < 1e-8);
    }

    fn deterministic_min(pb: &EntropyProblem) -> f64 {
        let rows = pb.active_letters().to_vec();
        let mut best = f64::INFINITY;
        let mut idx = vec![0usize; rows.len()];
        loop {
            let mut p = pb.first_cover();
            for (i, &l) in rows.iter().enumerate() {
                p[l] = vec![0.0; pb.sets().len()];
                p[l][pb.covering(l)[idx[i]]] = 1.0;
            }
            best = best.min(pb.objective(&p));
            let mut i = 0;
            loop {
                if i == rows.len() {
                    return best;
                }
                idx[i] += 1;
                if idx[i] < pb.covering(rows[i]).len() {
                    break;
                }
                idx[i] = 0;
                i += 1;
            }
        }
    }

    fn arb_problem() -> impl Strategy<Value = EntropyProblem> {
        (2usize..=5, 1usize..=3).prop_flat_map(|(n, nk)| {
            (
                Just((n, nk)),
                proptest::collection::vec(0i64..3, n * nk),
                proptest::collection::vec(proptest::bool::weighted(0.4), n * n),
            )
                .prop_filter_map("positive mass", |((n, nk), w, bits)| {
                    let total: i64 = w.iter().sum();
                    if total == 0 {
                        return None;
                    }
                    let edges: Vec<(usize, usize)> = (0..n)
                        .flat_map(|a| (a + 1..n).map(move |b| (a, b)))
                        .filter(|&(a, b)| bits[a * n + b])
                        .collect();
                    let g = CharGraph::from_edges(n, &edges);
                    let fam = maximal_independent_sets(&g, 100).unwrap();
                    let rows: Vec<(usize, usize, Prob)> = (0..n)
                        .flat_map(|l| (0..nk).map(move |k| (l, k)))
                        .filter(|&(l, k)| w[l * nk + k] > 0)
                        .map(|(l, k)| (l, k, BigRational::new(w[l * nk + k].into(), total.into())))
                        .collect();
                    let used: Vec<usize> = {
                        let mut ks: Vec<usize> = rows.iter().map(|r| r.1).collect();
                        ks.sort_unstable();
                        ks.dedup();
                        ks
                    };
                    // Compact the k labels to the used ones.
                    let rows = rows
                        .into_iter()
                        .map(|(l, k, p)| (l, used.binary_search(&k).unwrap(), p))
                        .collect();
                    EntropyProblem::from_table(n, fam.sets, rows, used.iter().map(|&k| vec![k as u32]).collect()).ok()
                })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn value_between_zero_and_conditional_entropy(pb in arb_problem()) {
            let sol = graph_entropy(&pb, &SolverConfig::default()).unwrap();
            prop_assert!(sol.value >= 0.0);
            prop_assert!(sol.value <= pb.conditional_entropy() + 1e-9);
            prop_assert!(sol.monotone);
            prop_assert!(sol.lower_bound <= sol.value + 1e-12);
            prop_assert!(sol.certificate <= 1e-6, "certificate {}", sol.certificate);
            for l in 0..pb.letter_count() {
                let s: f64 = sol.assignment[l].iter().sum();
                prop_assert!((s - 1.0).abs() < 1e-12);
                for v in 0..pb.sets().len() {
                    if !pb.covering(l).contains(&v) {
                        prop_assert_eq!(sol.assignment[l][v], 0.0);
                    }
                }
            }
        }

        #[test]
        fn deterministic_kernels_never_beat_the_solver(pb in arb_problem()) {
            let sol = graph_entropy(&pb, &SolverConfig::default()).unwrap();
            prop_assert!(deterministic_min(&pb) >= sol.value - 1e-9);
        }

        #[test]
        fn oracle_bracket_contains_solver_value(pb in arb_problem()) {
            let sol = graph_entropy(&pb, &SolverConfig::default()).unwrap();
            let b = graph_entropy_oracle(&pb, 8, &OracleLimits::default()).unwrap();
            prop_assert!(b.contains(sol.value, 1e-9), "{:?} vs {}", (b.lower, b.upper), sol.value);
        }
    }
}
