//! Exact discrete optimal transport by the transportation simplex method.

use crate::error::{Error, Result};

/// Largest support accepted on either side.
pub const TRANSPORT_ATOM_BUDGET: usize = 2000;

#[derive(Clone, Debug, PartialEq)]
pub struct TransportPlan {
    pub cost: f64,
    /// Nonzero flows `(source, sink, mass)`.
    pub flows: Vec<(usize, usize, f64)>,
}

/// Minimizes `Σ cost[i·n + j]·π_ij` over couplings of `supply` and `demand`.
///
/// Totals must agree to `1e−9`; `demand` is rescaled to the supply total.
pub fn solve_transport(supply: &[f64], demand: &[f64], cost: &[f64]) -> Result<TransportPlan> {
    let (m, n) = (supply.len(), demand.len());
    if m == 0 || n == 0 {
        return Err(Error::Solver("empty transport marginal".into()));
    }
    if m > TRANSPORT_ATOM_BUDGET || n > TRANSPORT_ATOM_BUDGET {
        return Err(Error::TransportBudget {
            atoms: m.max(n),
            budget: TRANSPORT_ATOM_BUDGET,
        });
    }
    if cost.len() != m * n || cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::Solver("cost matrix has the wrong shape or non-finite entries".into()));
    }
    if supply.iter().chain(demand).any(|&x| !(x >= 0.0 && x.is_finite())) {
        return Err(Error::Solver("negative or non-finite marginal".into()));
    }
    let total_s: f64 = supply.iter().sum();
    let total_d: f64 = demand.iter().sum();
    if (total_s - total_d).abs() > 1e-9 * total_s.max(1.0) {
        return Err(Error::Solver(format!(
            "unbalanced transport problem: {total_s} vs {total_d}"
        )));
    }
    let demand: Vec<f64> = demand.iter().map(|d| d * total_s / total_d).collect();
    Simplex::new(supply, &demand, cost).run()
}

struct Simplex<'a> {
    m: usize,
    n: usize,
    cost: &'a [f64],
    /// Basic cells and their flows; always `m + n − 1` of them, forming a spanning tree.
    cells: Vec<(usize, usize)>,
    flow: Vec<f64>,
    u: Vec<f64>,
    v: Vec<f64>,
    price_from: usize,
}

impl<'a> Simplex<'a> {
    /// North-west corner start; each step moves right or down, so the basis is a staircase tree.
    fn new(supply: &[f64], demand: &[f64], cost: &'a [f64]) -> Self {
        let (m, n) = (supply.len(), demand.len());
        let mut rs = supply.to_vec();
        let mut rd = demand.to_vec();
        let mut cells = Vec::with_capacity(m + n - 1);
        let mut flow = Vec::with_capacity(m + n - 1);
        let (mut i, mut j) = (0, 0);
        loop {
            let x = rs[i].min(rd[j]).max(0.0);
            cells.push((i, j));
            flow.push(x);
            rs[i] -= x;
            rd[j] -= x;
            if i == m - 1 && j == n - 1 {
                break;
            }
            if i == m - 1 {
                j += 1;
            } else if j == n - 1 || rs[i] <= rd[j] {
                i += 1;
            } else {
                j += 1;
            }
        }
        Self {
            m,
            n,
            cost,
            cells,
            flow,
            u: vec![0.0; m],
            v: vec![0.0; n],
            price_from: 0,
        }
    }

    /// Tree adjacency over nodes `rows ∪ cols` (cols offset by `m`); entries are basic slots.
    fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![vec![]; self.m + self.n];
        for (k, &(i, j)) in self.cells.iter().enumerate() {
            adj[i].push(k);
            adj[self.m + j].push(k);
        }
        adj
    }

    fn other_end(&self, slot: usize, node: usize) -> usize {
        let (i, j) = self.cells[slot];
        if node == i {
            self.m + j
        } else {
            i
        }
    }

    fn potentials(&mut self, adj: &[Vec<usize>]) {
        let mut seen = vec![false; self.m + self.n];
        let mut stack = vec![0];
        seen[0] = true;
        self.u[0] = 0.0;
        while let Some(node) = stack.pop() {
            for &k in &adj[node] {
                let other = self.other_end(k, node);
                if seen[other] {
                    continue;
                }
                seen[other] = true;
                let (i, j) = self.cells[k];
                let c = self.cost[i * self.n + j];
                if other >= self.m {
                    self.v[j] = c - self.u[i];
                } else {
                    self.u[i] = c - self.v[j];
                }
                stack.push(other);
            }
        }
    }

    /// Entering cell with negative reduced cost; block pricing from a rotating start,
    /// or the first one in row-major order when `bland` is set.
    fn price(&mut self, tol: f64, bland: bool) -> Option<(usize, usize)> {
        let total = self.m * self.n;
        let block = total.clamp(1, 4096);
        let mut scanned = 0;
        let mut pos = if bland { 0 } else { self.price_from };
        let mut best: Option<(f64, usize)> = None;
        while scanned < total {
            let end = (scanned + block).min(total);
            while scanned < end {
                let cell = pos;
                let (i, j) = (cell / self.n, cell % self.n);
                let rc = self.cost[cell] - self.u[i] - self.v[j];
                if rc < -tol {
                    if bland {
                        return Some((i, j));
                    }
                    if best.is_none_or(|(b, _)| rc < b) {
                        best = Some((rc, cell));
                    }
                }
                pos = (pos + 1) % total;
                scanned += 1;
            }
            if let Some((_, cell)) = best {
                self.price_from = pos;
                return Some((cell / self.n, cell % self.n));
            }
        }
        None
    }

    /// Slots on the tree path from row `i` to column `j`, starting next to row `i`.
    fn path(&self, adj: &[Vec<usize>], i: usize, j: usize) -> Vec<usize> {
        let nodes = self.m + self.n;
        let mut via = vec![usize::MAX; nodes];
        let mut seen = vec![false; nodes];
        let mut stack = vec![i];
        seen[i] = true;
        let target = self.m + j;
        while let Some(node) = stack.pop() {
            if node == target {
                break;
            }
            for &k in &adj[node] {
                let other = self.other_end(k, node);
                if !seen[other] {
                    seen[other] = true;
                    via[other] = k;
                    stack.push(other);
                }
            }
        }
        let mut slots = vec![];
        let mut node = target;
        while node != i {
            let k = via[node];
            slots.push(k);
            node = self.other_end(k, node);
        }
        slots.reverse();
        slots
    }

    fn run(mut self) -> Result<TransportPlan> {
        let scale = self.cost.iter().fold(0.0f64, |a, &c| a.max(c.abs())).max(1.0);
        let tol = 1e-12 * scale;
        let max_iter = 200 * (self.m + self.n) + 10 * self.m * self.n + 1000;
        let mut degenerate_run = 0;
        let mut bland = false;
        for _ in 0..max_iter {
            let adj = self.adjacency();
            self.potentials(&adj);
            let Some((ei, ej)) = self.price(tol, bland) else {
                return Ok(self.finish());
            };
            let path = self.path(&adj, ei, ej);
            // path slots alternate −, +, −, …, the last one sharing column ej
            let mut leave = None;
            let mut theta = f64::INFINITY;
            for (pos, &k) in path.iter().enumerate() {
                if pos % 2 == 0 && self.flow[k] < theta {
                    theta = self.flow[k];
                    leave = Some(k);
                }
            }
            let leave = leave.expect("cycle has a decreasing cell");
            let theta = theta.max(0.0);
            for (pos, &k) in path.iter().enumerate() {
                if pos % 2 == 0 {
                    self.flow[k] = (self.flow[k] - theta).max(0.0);
                } else {
                    self.flow[k] += theta;
                }
            }
            self.cells[leave] = (ei, ej);
            self.flow[leave] = theta;
            if theta == 0.0 {
                degenerate_run += 1;
                if degenerate_run > 20 * (self.m + self.n) {
                    bland = true;
                }
            } else {
                degenerate_run = 0;
                bland = false;
            }
        }
        Err(Error::Solver(format!(
            "transportation simplex did not converge in {max_iter} pivots"
        )))
    }

    fn finish(self) -> TransportPlan {
        let mut cost = 0.0;
        let mut flows = vec![];
        for (k, &(i, j)) in self.cells.iter().enumerate() {
            if self.flow[k] > 0.0 {
                cost += self.flow[k] * self.cost[i * self.n + j];
                flows.push((i, j, self.flow[k]));
            }
        }
        flows.sort_by_key(|&(i, j, _)| (i, j));
        TransportPlan { cost, flows }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lp::{LinearProgram, LpOutcome};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// The same problem as a generic LP with equality constraints.
    fn lp_oracle(supply: &[f64], demand: &[f64], cost: &[f64]) -> f64 {
        let (m, n) = (supply.len(), demand.len());
        let mut lp = LinearProgram::new(cost.to_vec());
        for i in 0..m {
            let mut row = vec![0.0; m * n];
            row[i * n..(i + 1) * n].iter_mut().for_each(|x| *x = 1.0);
            lp.add_eq(row, supply[i]);
        }
        for j in 0..n {
            let mut row = vec![0.0; m * n];
            (0..m).for_each(|i| row[i * n + j] = 1.0);
            lp.add_eq(row, demand[j]);
        }
        match lp.solve().unwrap() {
            LpOutcome::Optimal { value, .. } => value,
            other => panic!("{other:?}"),
        }
    }

    fn random_marginal(rng: &mut ChaCha8Rng, k: usize, sparse: bool) -> Vec<f64> {
        let mut raw: Vec<f64> = (0..k)
            .map(|_| if sparse && rng.gen_bool(0.4) { 0.0 } else { rng.gen_range(0.0..1.0) })
            .collect();
        if raw.iter().sum::<f64>() == 0.0 {
            raw[0] = 1.0;
        }
        let t: f64 = raw.iter().sum();
        raw.iter().map(|x| x / t).collect()
    }

    #[test]
    fn trivial_cases() {
        let plan = solve_transport(&[1.0], &[1.0], &[2.5]).unwrap();
        assert_eq!(plan.cost, 2.5);
        let plan = solve_transport(&[0.5, 0.5], &[0.5, 0.5], &[0.0, 1.0, 1.0, 0.0]).unwrap();
        assert_eq!(plan.cost, 0.0);
        let plan = solve_transport(&[0.5, 0.5], &[0.5, 0.5], &[1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(plan.cost, 0.0);
        assert_eq!(plan.flows, vec![(0, 1, 0.5), (1, 0, 0.5)]);
        assert!(solve_transport(&[1.0], &[0.5], &[0.0]).is_err());
    }

    #[test]
    fn degenerate_integer_problems() {
        // equal marginals everywhere produce many simultaneous exhaustions
        let k = 12;
        let s = vec![1.0 / k as f64; k];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..20 {
            let cost: Vec<f64> = (0..k * k).map(|_| rng.gen_range(0..4) as f64).collect();
            let plan = solve_transport(&s, &s, &cost).unwrap();
            assert!((plan.cost - lp_oracle(&s, &s, &cost)).abs() < 1e-10);
        }
    }

    proptest! {
        #[test]
        fn matches_generic_lp(seed in 0u64..400, m in 1usize..9, n in 1usize..9) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let supply = random_marginal(&mut rng, m, true);
            let demand = random_marginal(&mut rng, n, true);
            let cost: Vec<f64> = (0..m * n).map(|_| rng.gen_range(0.0..3.0)).collect();
            let plan = solve_transport(&supply, &demand, &cost).unwrap();
            prop_assert!((plan.cost - lp_oracle(&supply, &demand, &cost)).abs() < 1e-10);
            let mut rows = vec![0.0; m];
            let mut cols = vec![0.0; n];
            for &(i, j, f) in &plan.flows {
                prop_assert!(f >= 0.0);
                rows[i] += f;
                cols[j] += f;
            }
            for i in 0..m { prop_assert!((rows[i] - supply[i]).abs() < 1e-12); }
            for j in 0..n { prop_assert!((cols[j] - demand[j]).abs() < 1e-12); }
        }
    }
}
