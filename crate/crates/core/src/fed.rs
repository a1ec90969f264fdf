//! Free energy density relative to a sequence of finite actions.
//!
//! For one action and one neighbourhood `O = {ν : d̄-upper(ν_R, μ_R) ≤ ε}` the
//! consistency infimum `inf_{ζ ∈ Ω(σ,O)} (1/|V|)[ζ(U) − H(ζ)]` is a convex
//! program: the objective is convex in `ζ`, `P_ζ^σ` is linear in `ζ` and
//! optimal transport is jointly convex in its marginals. Microstates with the
//! same lifted-pattern counts are interchangeable in the constraint, so the
//! program is solved over those classes, with mass spread `∝ e^{−U}` inside
//! each class.
//!
//! Solution path per cell:
//! 1. If `ξ_V` is feasible the value is `−log Z/|V|`.
//! 2. An LP over `(ζ, coupling)` gives `min d̄` over all `ζ`; above `ε` the
//!    value is `+∞`.
//! 3. Otherwise the entropically smoothed dual is maximized by Newton's
//!    method in `(φ, λ)` while the smoothing is driven to zero. The primal
//!    `ζ_φ` is mixed with the LP point until exactly feasible, and the exact
//!    dual at `(φ, λ)` gives a lower bound. Both are reported.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::cayley::{metric_tail, CayleyBall, GroupSpec};
use crate::error::{Error, Result};
use crate::homgraph::{random_hom, sofic_delta, HomGraph, SoficDelta};
use crate::lp::{LinearProgram, LpOutcome};
use crate::model::{energies, gibbs_finite, log_partition_cycle, log_sum_exp, SpinModel};
use crate::state::{
    dbar_truncated, dense_size, empirical_state, pattern_distance, DenseState, PatternDistribution,
};
use crate::transport::solve_transport;

#[derive(Clone, Debug, PartialEq)]
pub struct FedOptions {
    /// Final smoothing temperature per site.
    pub tau_final: f64,
    pub max_newton: usize,
    /// Largest accepted per-site duality gap for `Converged`.
    pub gap_tol: f64,
    /// Largest accepted `coupling columns` count in the feasibility LP.
    pub max_lp_columns: usize,
}

impl Default for FedOptions {
    fn default() -> Self {
        Self {
            tau_final: 1e-7,
            max_newton: 200,
            gap_tol: 1e-5,
            max_lp_columns: 60_000,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    /// `ξ_V` itself is feasible.
    Unconstrained,
    Converged,
    /// Feasible witness found but the duality gap exceeds the tolerance.
    GapAboveTolerance,
    /// The witness failed independent re-verification.
    VerificationFailed,
    /// `ε` is below the metric tail, so no depth-`R` certificate can reach it.
    BelowTail,
    Infeasible,
}

impl CellStatus {
    pub fn is_finite(self) -> bool {
        !matches!(self, CellStatus::BelowTail | CellStatus::Infeasible)
    }
}

#[derive(Clone, Debug)]
pub struct ConsistencyResult {
    /// Per-site objective of the witness; `+∞` if the set is empty.
    pub value: f64,
    /// Per-site dual bound; the true infimum lies in `[lower_bound, value]`.
    pub lower_bound: f64,
    /// Certified `d̄` upper bound of the witness, or the least achievable one if infeasible.
    pub residual: f64,
    pub status: CellStatus,
    pub iterations: usize,
    pub witness: Option<DenseState>,
}

/// Microstates grouped by lifted-pattern counts.
struct Classes {
    n: usize,
    patterns: Vec<Vec<u8>>,
    /// Sparse `P_x^σ` per class: `(pattern index, frequency)`.
    columns: Vec<Vec<(usize, f64)>>,
    /// `log Σ_{x ∈ class} e^{−U(x)}`.
    log_mass: Vec<f64>,
    class_of: Vec<u32>,
    energies: Vec<f64>,
}

impl Classes {
    fn build(model: &SpinModel, hom: &HomGraph, ball: &CayleyBall) -> Result<Self> {
        let n = hom.len();
        let a = model.alphabet();
        let size = dense_size(a, n)?;
        let energies = energies(model, hom)?;
        let images: Vec<Vec<usize>> = (0..n).map(|v| hom.ball_image(v, ball)).collect();
        let mut pattern_index: HashMap<Vec<u8>, usize> = HashMap::new();
        let mut patterns = vec![];
        let mut class_index: HashMap<Vec<(u32, u32)>, u32> = HashMap::new();
        let mut columns = vec![];
        let mut log_mass: Vec<f64> = vec![];
        let mut class_of = Vec::with_capacity(size);
        let mut x = vec![0u8; n];
        let mut key: Vec<(u32, u32)> = vec![];
        let mut pat = vec![];
        for (idx, &u) in energies.iter().enumerate() {
            if idx > 0 {
                for digit in x.iter_mut() {
                    *digit += 1;
                    if (*digit as usize) < a {
                        break;
                    }
                    *digit = 0;
                }
            }
            key.clear();
            for img in &images {
                pat.clear();
                pat.extend(img.iter().map(|&w| x[w]));
                let next = patterns.len();
                let p = *pattern_index.entry(pat.clone()).or_insert_with(|| {
                    patterns.push(pat.clone());
                    next
                });
                key.push((p as u32, 1));
            }
            key.sort_unstable();
            key.dedup_by(|b, a| {
                if a.0 == b.0 {
                    a.1 += b.1;
                    true
                } else {
                    false
                }
            });
            let next = columns.len() as u32;
            let k = *class_index.entry(key.clone()).or_insert_with(|| {
                columns.push(key.iter().map(|&(p, c)| (p as usize, c as f64 / n as f64)).collect());
                log_mass.push(f64::NEG_INFINITY);
                next
            });
            let lm = &mut log_mass[k as usize];
            *lm = log_add_exp(*lm, -u);
            class_of.push(k);
        }
        Ok(Self {
            n,
            patterns,
            columns,
            log_mass,
            class_of,
            energies,
        })
    }

    fn len(&self) -> usize {
        self.columns.len()
    }

    fn pattern_marginal(&self, zeta: &[f64]) -> Vec<f64> {
        let mut p = vec![0.0; self.patterns.len()];
        for (col, &z) in self.columns.iter().zip(zeta) {
            for &(i, f) in col {
                p[i] += z * f;
            }
        }
        p
    }

    /// `ζ(U) − H(ζ)` for class weights spread `∝ e^{−U}` within classes.
    fn objective(&self, zeta: &[f64]) -> f64 {
        zeta.iter()
            .zip(&self.log_mass)
            .map(|(&z, &lm)| if z > 0.0 { z * (z.ln() - lm) } else { 0.0 })
            .sum()
    }

    fn dense(&self, zeta: &[f64], alphabet: usize) -> Result<DenseState> {
        let probs = self
            .class_of
            .iter()
            .zip(&self.energies)
            .map(|(&k, &u)| {
                let z = zeta[k as usize];
                if z > 0.0 {
                    z * (-u - self.log_mass[k as usize]).exp()
                } else {
                    0.0
                }
            })
            .collect();
        DenseState::from_probs(self.n, alphabet, probs)
    }
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Depth-`R` data shared by every evaluation in one cell.
struct Problem<'a> {
    classes: &'a Classes,
    target: Vec<f64>,
    /// `cost[p][q]` between achievable pattern `p` and target atom `q`.
    cost: Vec<Vec<f64>>,
    budget: f64,
}

impl Problem<'_> {
    fn m(&self) -> usize {
        self.classes.patterns.len()
    }

    fn exact_ot(&self, p: &[f64]) -> Result<f64> {
        let rows: Vec<usize> = (0..p.len()).filter(|&i| p[i] > 0.0).collect();
        let supply: Vec<f64> = rows.iter().map(|&i| p[i]).collect();
        let cost: Vec<f64> = rows.iter().flat_map(|&i| self.cost[i].iter().copied()).collect();
        Ok(solve_transport(&supply, &self.target, &cost)?.cost)
    }

    fn gibbs_classes(&self) -> Vec<f64> {
        let lz = log_sum_exp(&self.classes.log_mass);
        self.classes.log_mass.iter().map(|lm| (lm - lz).exp()).collect()
    }

    /// `min_ζ OT(P_ζ, μ_R)` and a minimizer.
    fn feasibility(&self, max_columns: usize) -> Result<(f64, Vec<f64>)> {
        let (k, m, q) = (self.classes.len(), self.m(), self.target.len());
        if k + m * q > max_columns {
            return Err(Error::Solver(format!(
                "feasibility program has {} columns, above the limit {max_columns}",
                k + m * q
            )));
        }
        let width = k + m * q;
        let mut c = vec![0.0; width];
        for p in 0..m {
            for j in 0..q {
                c[k + p * q + j] = self.cost[p][j];
            }
        }
        let mut lp = LinearProgram::new(c);
        let mut row = vec![0.0; width];
        row[..k].iter_mut().for_each(|x| *x = 1.0);
        lp.add_eq(row, 1.0);
        for p in 0..m {
            let mut row = vec![0.0; width];
            for (kk, col) in self.classes.columns.iter().enumerate() {
                if let Some(&(_, f)) = col.iter().find(|&&(i, _)| i == p) {
                    row[kk] = f;
                }
            }
            for j in 0..q {
                row[k + p * q + j] = -1.0;
            }
            lp.add_eq(row, 0.0);
        }
        for j in 0..q {
            let mut row = vec![0.0; width];
            for p in 0..m {
                row[k + p * q + j] = 1.0;
            }
            lp.add_eq(row, self.target[j]);
        }
        match lp.solve()? {
            LpOutcome::Optimal { x, .. } => {
                let mut zeta = x[..k].to_vec();
                let total: f64 = zeta.iter().sum();
                zeta.iter_mut().for_each(|z| *z /= total);
                // re-evaluate exactly; the LP value carries pivoting round-off
                let ot = self.exact_ot(&self.classes.pattern_marginal(&zeta))?;
                Ok((ot, zeta))
            }
            other => Err(Error::Solver(format!("feasibility program: {other:?}"))),
        }
    }

    /// Class weights `ζ_φ ∝ exp(log_mass − φ·C)` and `log Z(φ)`.
    fn tilt(&self, phi: &[f64]) -> (Vec<f64>, f64) {
        let s: Vec<f64> = self
            .classes
            .columns
            .iter()
            .zip(&self.classes.log_mass)
            .map(|(col, &lm)| lm - col.iter().map(|&(i, f)| phi[i] * f).sum::<f64>())
            .collect();
        let lz = log_sum_exp(&s);
        (s.iter().map(|v| (v - lz).exp()).collect(), lz)
    }

    /// Exact dual `−log Z(φ) + Σ_q μ_q min_p(λ d_pq − φ_p) − λ ε'`.
    fn exact_dual(&self, phi: &[f64], lambda: f64) -> f64 {
        let (_, lz) = self.tilt(phi);
        let mut g = -lz - lambda * self.budget;
        for (j, &t) in self.target.iter().enumerate() {
            let min = (0..self.m())
                .map(|p| lambda * self.cost[p][j] - phi[p])
                .fold(f64::INFINITY, f64::min);
            g += t * min;
        }
        g
    }

    /// Smoothed dual with gradient and Hessian in `(φ, λ)`.
    fn smoothed(&self, phi: &[f64], lambda: f64, tau: f64) -> (f64, DVector<f64>, DMatrix<f64>) {
        let m = self.m();
        let (zeta, lz) = self.tilt(phi);
        let mut grad = DVector::zeros(m + 1);
        let mut hess = DMatrix::zeros(m + 1, m + 1);
        // −Cov_ζ(C)
        let p = self.classes.pattern_marginal(&zeta);
        for (col, &z) in self.classes.columns.iter().zip(&zeta) {
            if z == 0.0 {
                continue;
            }
            for &(i, fi) in col {
                for &(j, fj) in col {
                    hess[(i, j)] -= z * fi * fj;
                }
            }
        }
        for i in 0..m {
            grad[i] = p[i];
            for j in 0..m {
                hess[(i, j)] += p[i] * p[j];
            }
        }
        let mut g = -lz - lambda * self.budget;
        grad[m] = -self.budget;
        let mut a = vec![0.0; m];
        let mut w = vec![0.0; m];
        for (q, &t) in self.target.iter().enumerate() {
            for pp in 0..m {
                a[pp] = (phi[pp] - lambda * self.cost[pp][q]) / tau;
            }
            let lse = log_sum_exp(&a);
            g += t * (-tau * lse);
            let mut wd = 0.0;
            let mut wdd = 0.0;
            for pp in 0..m {
                w[pp] = (a[pp] - lse).exp();
                wd += w[pp] * self.cost[pp][q];
                wdd += w[pp] * self.cost[pp][q] * self.cost[pp][q];
            }
            grad[m] += t * wd;
            let s = t / tau;
            for i in 0..m {
                if w[i] == 0.0 {
                    continue;
                }
                grad[i] -= t * w[i];
                hess[(i, i)] -= s * w[i];
                for j in 0..m {
                    hess[(i, j)] += s * w[i] * w[j];
                }
                let cross = s * (w[i] * self.cost[i][q] - w[i] * wd);
                hess[(i, m)] += cross;
                hess[(m, i)] += cross;
            }
            hess[(m, m)] -= s * (wdd - wd * wd);
        }
        (g, grad, hess)
    }

    /// Damped Newton ascent on the smoothed dual at fixed `tau`.
    fn newton(&self, phi: &mut Vec<f64>, lambda: &mut f64, tau: f64, max_iter: usize) -> usize {
        let m = self.m();
        for it in 0..max_iter {
            let (g, grad, hess) = self.smoothed(phi, *lambda, tau);
            let mut neg = -hess;
            let scale = (0..=m).map(|i| neg[(i, i)].abs()).fold(1e-300, f64::max);
            let mut ridge = 1e-13 * scale;
            let step = loop {
                let mut reg = neg.clone();
                for i in 0..=m {
                    reg[(i, i)] += ridge;
                }
                if let Some(ch) = reg.cholesky() {
                    break ch.solve(&grad);
                }
                ridge *= 100.0;
                if ridge > scale {
                    neg = DMatrix::identity(m + 1, m + 1) * scale;
                }
            };
            let decrement = grad.dot(&step);
            if decrement <= 1e-14 * (1.0 + g.abs()) {
                return it;
            }
            let mut alpha: f64 = 1.0;
            if step[m] < 0.0 {
                alpha = alpha.min(0.9 * *lambda / -step[m]);
            }
            let mut accepted = false;
            for _ in 0..60 {
                let trial: Vec<f64> = (0..m).map(|i| phi[i] + alpha * step[i]).collect();
                let tl = *lambda + alpha * step[m];
                let (gt, _, _) = self.smoothed(&trial, tl, tau);
                if gt >= g + 1e-4 * alpha * decrement {
                    *phi = trial;
                    *lambda = tl;
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
            }
            if !accepted {
                return it;
            }
        }
        max_iter
    }
}

/// `inf (1/|V|)[ζ(U) − H(ζ)]` over `ζ` whose depth-`R` empirical distribution is
/// within certified `d̄` distance `epsilon` of `target` (a marginal on `ball`).
pub fn consistency_infimum(
    hom: &HomGraph,
    spec: &GroupSpec,
    model: &SpinModel,
    target: &PatternDistribution,
    ball: &CayleyBall,
    epsilon: f64,
    opts: &FedOptions,
) -> Result<ConsistencyResult> {
    let classes = Classes::build(model, hom, ball)?;
    solve_cell(&classes, hom, spec, model, target, ball, epsilon, opts)
}

#[allow(clippy::too_many_arguments)]
fn solve_cell(
    classes: &Classes,
    hom: &HomGraph,
    spec: &GroupSpec,
    model: &SpinModel,
    target: &PatternDistribution,
    ball: &CayleyBall,
    epsilon: f64,
    opts: &FedOptions,
) -> Result<ConsistencyResult> {
    if target.radius() != ball.radius() || target.pattern_len() != ball.len() {
        return Err(Error::RadiusMismatch(target.radius(), ball.radius()));
    }
    let n = hom.len() as f64;
    let tail = metric_tail(spec, ball.radius());
    let budget = epsilon - tail;
    let infinite = |status, residual| ConsistencyResult {
        value: f64::INFINITY,
        lower_bound: f64::INFINITY,
        residual,
        status,
        iterations: 0,
        witness: None,
    };
    if budget < 0.0 {
        return Ok(infinite(CellStatus::BelowTail, tail));
    }
    let weights = target.position_weights();
    let atoms: Vec<(&Vec<u8>, f64)> = target.iter().collect();
    let cost = classes
        .patterns
        .iter()
        .map(|p| atoms.iter().map(|(q, _)| pattern_distance(&weights, p, q)).collect())
        .collect();
    let prob = Problem {
        classes,
        target: atoms.iter().map(|(_, w)| *w).collect(),
        cost,
        budget,
    };
    let alphabet = model.alphabet();
    let finish = |zeta: &[f64], lower: f64, status: CellStatus, iterations: usize| -> Result<ConsistencyResult> {
        let witness = classes.dense(zeta, alphabet)?;
        let residual = dbar_truncated(&empirical_state(hom, &witness, ball)?, target, spec)?.upper;
        let value = classes.objective(zeta) / n;
        let status = if residual > epsilon + 1e-9 {
            CellStatus::VerificationFailed
        } else {
            status
        };
        Ok(ConsistencyResult {
            value,
            lower_bound: lower.min(value),
            residual,
            status,
            iterations,
            witness: Some(witness),
        })
    };

    let gibbs = prob.gibbs_classes();
    let log_z = log_sum_exp(&classes.log_mass);
    if prob.exact_ot(&classes.pattern_marginal(&gibbs))? <= budget {
        return finish(&gibbs, -log_z / n, CellStatus::Unconstrained, 0);
    }
    let (min_ot, zeta_f) = prob.feasibility(opts.max_lp_columns)?;
    if min_ot > budget + 1e-9 {
        return Ok(infinite(CellStatus::Infeasible, min_ot + tail));
    }

    let mut phi = vec![0.0; prob.m()];
    let mut lambda = n;
    let mut iterations = 0;
    let mut tau = n;
    while tau >= n * opts.tau_final * (1.0 - 1e-9) {
        iterations += prob.newton(&mut phi, &mut lambda, tau, opts.max_newton);
        tau /= 10.0;
    }
    let (zeta_phi, _) = prob.tilt(&phi);
    let lower = (prob.exact_dual(&phi, lambda) / n).max(-log_z / n);

    // smallest mixing weight toward the LP point that is exactly feasible
    let mix = |theta: f64| -> Vec<f64> {
        zeta_phi.iter().zip(&zeta_f).map(|(a, b)| (1.0 - theta) * a + theta * b).collect()
    };
    let feasible = |z: &[f64]| -> Result<bool> { Ok(prob.exact_ot(&classes.pattern_marginal(z))? <= budget) };
    let zeta = if feasible(&zeta_phi)? {
        zeta_phi.clone()
    } else {
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..50 {
            let mid = 0.5 * (lo + hi);
            if feasible(&mix(mid))? {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        mix(hi)
    };
    let upper = classes.objective(&zeta) / n;
    let status = if upper - lower <= opts.gap_tol {
        CellStatus::Converged
    } else {
        CellStatus::GapAboveTolerance
    };
    finish(&zeta, lower, status, iterations)
}

/// How the members of a sofic sequence are produced.
#[derive(Clone, Debug, PartialEq)]
pub enum SoficSequence {
    Cycles(Vec<usize>),
    /// `a × b` tori acting by the two coordinate shifts.
    Tori(Vec<(usize, usize)>),
    /// `random_hom(spec, sizes[i], seed + i)`.
    Random { sizes: Vec<usize>, seed: u64 },
    Explicit(Vec<HomGraph>),
}

impl SoficSequence {
    pub fn build(&self, spec: &GroupSpec) -> Result<Vec<HomGraph>> {
        let homs: Vec<HomGraph> = match self {
            SoficSequence::Cycles(sizes) => sizes.iter().map(|&n| HomGraph::cycle(n)).collect(),
            SoficSequence::Tori(dims) => dims.iter().map(|&(a, b)| torus(a, b)).collect::<Result<_>>()?,
            SoficSequence::Random { sizes, seed } => sizes
                .iter()
                .enumerate()
                .map(|(i, &n)| random_hom(spec, n, seed.wrapping_add(i as u64)))
                .collect::<Result<_>>()?,
            SoficSequence::Explicit(h) => h.clone(),
        };
        if homs.windows(2).any(|w| w[1].len() <= w[0].len()) {
            return Err(Error::Invalid("sequence sizes must be strictly increasing".into()));
        }
        for (i, h) in homs.iter().enumerate() {
            let v = h.validate(spec);
            if h.rank() != spec.rank() || !v.ok {
                return Err(Error::InvalidHom(format!("sequence member {i}: {}", v.message)));
            }
        }
        Ok(homs)
    }
}

/// The `a × b` discrete torus; vertex `(i, j)` is `i + a·j`.
pub fn torus(a: usize, b: usize) -> Result<HomGraph> {
    let n = a * b;
    let s1 = (0..n).map(|v| (v % a + 1) % a + a * (v / a)).collect();
    let s2 = (0..n).map(|v| v % a + a * ((v / a + 1) % b)).collect();
    HomGraph::new(vec![s1, s2])
}

#[derive(Clone, Debug, Serialize)]
pub struct FedCell {
    pub n: usize,
    pub epsilon: f64,
    pub radius: usize,
    pub value: f64,
    pub lower_bound: f64,
    pub residual: f64,
    pub status: CellStatus,
    pub iterations: usize,
    /// Set when a larger-`ε` cell took the better value of a smaller-`ε` cell.
    pub carried: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct FedEstimate {
    pub radius: usize,
    pub tail: f64,
    pub deltas: Vec<(usize, SoficDelta)>,
    pub cells: Vec<FedCell>,
    /// `(n, ε, value)` at the largest `n` and smallest `ε` with a finite value.
    pub headline: Option<(usize, f64, f64)>,
}

/// Radius cap for the `Δ` of each member.
const DELTA_RADIUS: usize = 40;

/// Table of consistency infima over members × `epsilons` (decreasing).
#[allow(clippy::too_many_arguments)]
pub fn fed_estimate(
    homs: &[HomGraph],
    spec: &GroupSpec,
    model: &SpinModel,
    target: &PatternDistribution,
    ball: &CayleyBall,
    epsilons: &[f64],
    opts: &FedOptions,
) -> Result<FedEstimate> {
    if epsilons.is_empty() || epsilons.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Invalid("epsilon schedule must be nonempty and strictly decreasing".into()));
    }
    let deltas = homs
        .iter()
        .map(|h| Ok((h.len(), sofic_delta(h, spec, DELTA_RADIUS)?)))
        .collect::<Result<Vec<_>>>()?;
    let classes = homs
        .par_iter()
        .map(|h| Classes::build(model, h, ball))
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, f64)> = (0..homs.len()).flat_map(|i| epsilons.iter().map(move |&e| (i, e))).collect();
    let results = jobs
        .par_iter()
        .map(|&(i, e)| solve_cell(&classes[i], &homs[i], spec, model, target, ball, e, opts))
        .collect::<Result<Vec<_>>>()?;
    let mut cells: Vec<FedCell> = jobs
        .iter()
        .zip(results)
        .map(|(&(i, e), r)| FedCell {
            n: homs[i].len(),
            epsilon: e,
            radius: ball.radius(),
            value: r.value,
            lower_bound: r.lower_bound,
            residual: r.residual,
            status: r.status,
            iterations: r.iterations,
            carried: false,
        })
        .collect();
    // a witness for a smaller ε is feasible for every larger one
    for row in cells.chunks_mut(epsilons.len()) {
        let mut best: Option<FedCell> = None;
        for cell in row.iter_mut().rev() {
            match &best {
                Some(b) if b.value < cell.value => {
                    let lower = cell.lower_bound.min(b.value);
                    *cell = FedCell {
                        epsilon: cell.epsilon,
                        lower_bound: lower,
                        carried: true,
                        ..b.clone()
                    };
                }
                _ => best = Some(cell.clone()),
            }
        }
    }
    let headline = cells
        .iter()
        .filter(|c| c.value.is_finite())
        .max_by(|a, b| a.n.cmp(&b.n).then(b.epsilon.total_cmp(&a.epsilon)))
        .map(|c| (c.n, c.epsilon, c.value));
    Ok(FedEstimate {
        radius: ball.radius(),
        tail: metric_tail(spec, ball.radius()),
        deltas,
        cells,
        headline,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct FedLogZ {
    /// `(n, (1/n) log Z_n)` per member.
    pub per_site: Vec<(usize, f64)>,
    /// `−min_n (1/n) log Z_n`.
    pub value: f64,
}

/// The minimal free energy density `−liminf (1/|V_n|) log Z_n`, with the
/// liminf taken as the minimum over the given members. Cycles use the
/// transfer matrix; other actions are enumerated.
pub fn fed_via_log_z(homs: &[HomGraph], model: &SpinModel) -> Result<FedLogZ> {
    if homs.is_empty() {
        return Err(Error::Invalid("empty sequence".into()));
    }
    let per_site = homs
        .iter()
        .map(|h| {
            let n = h.len();
            let lz = if *h == HomGraph::cycle(n) {
                log_partition_cycle(model, n)
            } else {
                gibbs_finite(model, h)?.1
            };
            Ok((n, lz / n as f64))
        })
        .collect::<Result<Vec<_>>>()?;
    let value = -per_site.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    Ok(FedLogZ { per_site, value })
}

/// `value ∈ [u_min − log|A|, u_max] ∪ {+∞}`.
pub fn fed_bounds_check(value: f64, model: &SpinModel, rank: usize) -> bool {
    if value == f64::INFINITY {
        return true;
    }
    let (lo, hi) = model.u_bounds(rank);
    let slack = 1e-12 * (1.0 + value.abs());
    value >= lo - (model.alphabet() as f64).ln() - slack && value <= hi + slack
}
