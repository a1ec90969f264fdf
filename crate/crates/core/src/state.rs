//! Microstates, dense states over `A^V`, depth-`R` pattern distributions and
//! the distances between them.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::cayley::{metric_tail, CayleyBall, GroupSpec};
use crate::error::{Error, Result};
use crate::homgraph::HomGraph;
use crate::transport::{solve_transport, TRANSPORT_ATOM_BUDGET};

/// A labeling `x ∈ A^V`.
pub type Microstate = Vec<u8>;

/// Largest dense state vector, `|A|^n ≤ 2^20`.
pub const DENSE_BUDGET: usize = 1 << 20;

/// `|A|^n`, or an error beyond the dense budget.
pub fn dense_size(alphabet: usize, n: usize) -> Result<usize> {
    let size = (alphabet as u128).checked_pow(n as u32).unwrap_or(u128::MAX);
    if size > DENSE_BUDGET as u128 {
        return Err(Error::DenseBudget {
            states: size,
            budget: DENSE_BUDGET,
        });
    }
    Ok(size as usize)
}

/// A probability vector over `A^V`; microstate `x` sits at `Σ_v x(v)|A|^v`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DenseRepr", into = "DenseRepr")]
pub struct DenseState {
    n: usize,
    alphabet: usize,
    probs: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DenseRepr {
    n: usize,
    alphabet: usize,
    probs: Vec<f64>,
}

impl TryFrom<DenseRepr> for DenseState {
    type Error = Error;

    fn try_from(r: DenseRepr) -> Result<Self> {
        DenseState::from_probs(r.n, r.alphabet, r.probs)
    }
}

impl From<DenseState> for DenseRepr {
    fn from(s: DenseState) -> Self {
        DenseRepr {
            n: s.n,
            alphabet: s.alphabet,
            probs: s.probs,
        }
    }
}

impl DenseState {
    /// Validates nonnegativity and normalization (within `1e−9`), then renormalizes.
    pub fn from_probs(n: usize, alphabet: usize, mut probs: Vec<f64>) -> Result<Self> {
        let size = dense_size(alphabet, n)?;
        if probs.len() != size {
            return Err(Error::InvalidState(format!(
                "expected {size} probabilities, got {}",
                probs.len()
            )));
        }
        if let Some(i) = probs.iter().position(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::InvalidState(format!(
                "probability {} at index {i} is not a nonnegative number",
                probs[i]
            )));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidState(format!("probabilities sum to {total}")));
        }
        probs.iter_mut().for_each(|p| *p /= total);
        Ok(Self { n, alphabet, probs })
    }

    pub fn uniform(n: usize, alphabet: usize) -> Result<Self> {
        let size = dense_size(alphabet, n)?;
        Self::from_probs(n, alphabet, vec![1.0 / size as f64; size])
    }

    pub fn point_mass(alphabet: usize, x: &[u8]) -> Result<Self> {
        let size = dense_size(alphabet, x.len())?;
        let mut probs = vec![0.0; size];
        probs[microstate_index(alphabet, x)] = 1.0;
        Self::from_probs(x.len(), alphabet, probs)
    }

    /// Independent sites, site `v` distributed as `marginals[v]`.
    pub fn product(marginals: &[Vec<f64>]) -> Result<Self> {
        let n = marginals.len();
        let alphabet = marginals.first().map_or(0, Vec::len);
        let size = dense_size(alphabet, n)?;
        if marginals.iter().any(|m| m.len() != alphabet) {
            return Err(Error::InvalidState("ragged site marginals".into()));
        }
        let mut probs = vec![1.0; size];
        for (idx, p) in probs.iter_mut().enumerate() {
            let mut rest = idx;
            for m in marginals {
                *p *= m[rest % alphabet];
                rest /= alphabet;
            }
        }
        Self::from_probs(n, alphabet, probs)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn alphabet(&self) -> usize {
        self.alphabet
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn into_probs(self) -> Vec<f64> {
        self.probs
    }

    pub fn prob(&self, x: &[u8]) -> f64 {
        self.probs[microstate_index(self.alphabet, x)]
    }

    pub fn microstate(&self, index: usize) -> Microstate {
        decode_microstate(self.alphabet, self.n, index)
    }

    pub fn tv(&self, other: &DenseState) -> f64 {
        0.5 * self
            .probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
    }

    /// Law of `x(v)` for each site.
    pub fn site_marginals(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.alphabet]; self.n];
        for (idx, &p) in self.probs.iter().enumerate() {
            let mut rest = idx;
            for row in out.iter_mut() {
                row[rest % self.alphabet] += p;
                rest /= self.alphabet;
            }
        }
        out
    }
}

pub fn microstate_index(alphabet: usize, x: &[u8]) -> usize {
    x.iter().rev().fold(0, |acc, &l| acc * alphabet + l as usize)
}

pub fn decode_microstate(alphabet: usize, n: usize, mut index: usize) -> Microstate {
    let mut x = Vec::with_capacity(n);
    for _ in 0..n {
        x.push((index % alphabet) as u8);
        index /= alphabet;
    }
    x
}

/// A probability distribution over labelings of `B(e,R)`, in ball order.
#[derive(Clone, Debug, PartialEq)]
pub struct PatternDistribution {
    radius: usize,
    rank: usize,
    alphabet: usize,
    prefix_lens: Vec<usize>,
    weights: BTreeMap<Vec<u8>, f64>,
}

#[derive(Serialize)]
struct PatternEntry<'a> {
    labels: &'a [u8],
    weight: f64,
}

#[derive(Serialize)]
struct PatternDistributionJson<'a> {
    radius: usize,
    spec_hash: String,
    patterns: Vec<PatternEntry<'a>>,
}

impl PatternDistribution {
    /// Merges repeated patterns and drops zero weights; weights must sum to 1.
    pub fn new(
        ball: &CayleyBall,
        alphabet: usize,
        weights: impl IntoIterator<Item = (Vec<u8>, f64)>,
    ) -> Result<Self> {
        let prefix_lens = (0..=ball.radius()).map(|k| ball.prefix_len(k)).collect();
        let mut map: BTreeMap<Vec<u8>, f64> = BTreeMap::new();
        for (p, w) in weights {
            if p.len() != ball.len() || p.iter().any(|&l| l as usize >= alphabet) {
                return Err(Error::InvalidState(format!(
                    "pattern {p:?} does not label the radius-{} ball over {alphabet} letters",
                    ball.radius()
                )));
            }
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::InvalidState(format!("invalid pattern weight {w}")));
            }
            if w > 0.0 {
                *map.entry(p).or_insert(0.0) += w;
            }
        }
        let total: f64 = map.values().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidState(format!("pattern weights sum to {total}")));
        }
        map.values_mut().for_each(|w| *w /= total);
        Ok(Self {
            radius: ball.radius(),
            rank: ball.rank(),
            alphabet,
            prefix_lens,
            weights: map,
        })
    }

    pub fn point_mass(ball: &CayleyBall, alphabet: usize, pattern: Vec<u8>) -> Result<Self> {
        Self::new(ball, alphabet, [(pattern, 1.0)])
    }

    /// I.i.d. letters with law `marginal` at every ball vertex.
    pub fn product(ball: &CayleyBall, marginal: &[f64]) -> Result<Self> {
        let sites = vec![marginal.to_vec(); ball.len()];
        let mut acc = HashMap::new();
        accumulate_product(&sites, &(0..ball.len()).collect::<Vec<_>>(), 1.0, &mut acc)?;
        Self::new(ball, marginal.len(), acc)
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn alphabet(&self) -> usize {
        self.alphabet
    }

    /// Number of ball vertices.
    pub fn pattern_len(&self) -> usize {
        *self.prefix_lens.last().expect("radius ≥ 0")
    }

    pub fn weight(&self, pattern: &[u8]) -> f64 {
        self.weights.get(pattern).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Vec<u8>, f64)> {
        self.weights.iter().map(|(p, &w)| (p, w))
    }

    pub fn support_len(&self) -> usize {
        self.weights.len()
    }

    /// Depth of each ball position.
    pub fn depths(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.pattern_len());
        for (k, &end) in self.prefix_lens.iter().enumerate() {
            out.resize(end, k);
        }
        out
    }

    /// `(3r)^{−|γ|}` for each ball position.
    pub fn position_weights(&self) -> Vec<f64> {
        let base = 3.0 * self.rank as f64;
        self.depths().iter().map(|&d| base.powi(-(d as i32))).collect()
    }

    /// Push-forward under truncation to radius `r ≤ R`.
    pub fn restrict(&self, radius: usize) -> Result<Self> {
        if radius > self.radius {
            return Err(Error::RadiusMismatch(radius, self.radius));
        }
        let len = self.prefix_lens[radius];
        let mut map: BTreeMap<Vec<u8>, f64> = BTreeMap::new();
        for (p, &w) in &self.weights {
            *map.entry(p[..len].to_vec()).or_insert(0.0) += w;
        }
        Ok(Self {
            radius,
            rank: self.rank,
            alphabet: self.alphabet,
            prefix_lens: self.prefix_lens[..=radius].to_vec(),
            weights: map,
        })
    }

    /// Law of the root letter.
    pub fn root_marginal(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.alphabet];
        for (p, &w) in &self.weights {
            out[p[0] as usize] += w;
        }
        out
    }

    pub fn to_json(&self, spec: &GroupSpec) -> serde_json::Value {
        let view = PatternDistributionJson {
            radius: self.radius,
            spec_hash: spec.hash_hex(),
            patterns: self
                .weights
                .iter()
                .map(|(p, &w)| PatternEntry { labels: p, weight: w })
                .collect(),
        };
        serde_json::to_value(view).expect("pattern distribution serializes")
    }

    fn check_comparable(&self, other: &Self) -> Result<()> {
        if self.radius != other.radius {
            return Err(Error::RadiusMismatch(self.radius, other.radius));
        }
        if self.rank != other.rank || self.alphabet != other.alphabet {
            return Err(Error::Invalid(
                "pattern distributions over different balls or alphabets".into(),
            ));
        }
        Ok(())
    }
}

/// Adds `scale ×` the law of `(x(sites[0]), x(sites[1]), …)` under independent
/// site laws, handling repeated sites.
fn accumulate_product(
    site_laws: &[Vec<f64>],
    sites: &[usize],
    scale: f64,
    acc: &mut HashMap<Vec<u8>, f64>,
) -> Result<()> {
    let mut distinct: Vec<usize> = sites.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    let alphabet = site_laws[sites[0]].len();
    let count = (alphabet as u128).checked_pow(distinct.len() as u32).unwrap_or(u128::MAX);
    if count > DENSE_BUDGET as u128 {
        return Err(Error::DenseBudget {
            states: count,
            budget: DENSE_BUDGET,
        });
    }
    let slot: Vec<usize> = sites
        .iter()
        .map(|s| distinct.binary_search(s).expect("present"))
        .collect();
    let mut assign = vec![0usize; distinct.len()];
    loop {
        let w: f64 = distinct
            .iter()
            .zip(&assign)
            .map(|(&s, &a)| site_laws[s][a])
            .product::<f64>()
            * scale;
        if w > 0.0 {
            let pattern = slot.iter().map(|&k| assign[k] as u8).collect();
            *acc.entry(pattern).or_insert(0.0) += w;
        }
        let mut i = 0;
        loop {
            if i == assign.len() {
                return Ok(());
            }
            assign[i] += 1;
            if assign[i] < alphabet {
                break;
            }
            assign[i] = 0;
            i += 1;
        }
    }
}

/// `Π_v x`: the pattern `γ ↦ x(σ^γ v)` on the ball.
pub fn lift(hom: &HomGraph, x: &[u8], v: usize, ball: &CayleyBall) -> Vec<u8> {
    hom.ball_image(v, ball).iter().map(|&w| x[w]).collect()
}

/// `P_x^σ = (1/|V|) Σ_v δ_{Π_v x}`.
pub fn empirical_micro(
    hom: &HomGraph,
    x: &[u8],
    ball: &CayleyBall,
    alphabet: usize,
) -> Result<PatternDistribution> {
    let counts = pattern_counts(hom, x, ball, None);
    let n = hom.len() as f64;
    PatternDistribution::new(ball, alphabet, counts.into_iter().map(|(p, c)| (p, c as f64 / n)))
}

/// Lifted-pattern counts over all vertices, or over `mask`-selected ones.
pub fn pattern_counts(
    hom: &HomGraph,
    x: &[u8],
    ball: &CayleyBall,
    mask: Option<&[bool]>,
) -> HashMap<Vec<u8>, usize> {
    let mut counts = HashMap::new();
    for v in 0..hom.len() {
        if mask.is_some_and(|m| !m[v]) {
            continue;
        }
        *counts.entry(lift(hom, x, v, ball)).or_insert(0) += 1;
    }
    counts
}

/// `P_ζ^σ = Σ_x ζ{x} P_x^σ`.
pub fn empirical_state(hom: &HomGraph, zeta: &DenseState, ball: &CayleyBall) -> Result<PatternDistribution> {
    let all: Vec<usize> = (0..hom.len()).collect();
    empirical_over(hom, zeta, ball, &all)
}

/// `P̃_ζ^{σ,R}`: the average restricted to vertices whose ball is isomorphic to the Cayley ball.
pub fn good_vertex_empirical(
    hom: &HomGraph,
    zeta: &DenseState,
    ball: &CayleyBall,
) -> Result<PatternDistribution> {
    let good: Vec<usize> = hom
        .good_mask(ball)
        .iter()
        .enumerate()
        .filter_map(|(v, &g)| g.then_some(v))
        .collect();
    if good.is_empty() {
        return Err(Error::NoGoodVertices(ball.radius()));
    }
    empirical_over(hom, zeta, ball, &good)
}

fn empirical_over(
    hom: &HomGraph,
    zeta: &DenseState,
    ball: &CayleyBall,
    vertices: &[usize],
) -> Result<PatternDistribution> {
    if zeta.n() != hom.len() {
        return Err(Error::InvalidState(format!(
            "state has {} sites but the hom has {}",
            zeta.n(),
            hom.len()
        )));
    }
    let a = zeta.alphabet();
    let powers: Vec<usize> = (0..hom.len()).map(|v| a.pow(v as u32)).collect();
    let mut acc: HashMap<Vec<u8>, f64> = HashMap::new();
    let scale = 1.0 / vertices.len() as f64;
    for &v in vertices {
        let img = hom.ball_image(v, ball);
        let mut local: HashMap<Vec<u8>, f64> = HashMap::new();
        for (idx, &p) in zeta.probs().iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let pattern: Vec<u8> = img.iter().map(|&w| ((idx / powers[w]) % a) as u8).collect();
            *local.entry(pattern).or_insert(0.0) += p;
        }
        for (pat, p) in local {
            *acc.entry(pat).or_insert(0.0) += p * scale;
        }
    }
    PatternDistribution::new(ball, a, acc)
}

/// Exact `P_ζ^σ` for a product state `ζ = ⊗_v site_laws[v]`, without
/// enumerating `A^V`.
pub fn empirical_product(
    hom: &HomGraph,
    site_laws: &[Vec<f64>],
    ball: &CayleyBall,
) -> Result<PatternDistribution> {
    if site_laws.len() != hom.len() {
        return Err(Error::InvalidState("one site law per vertex required".into()));
    }
    let mut acc = HashMap::new();
    let scale = 1.0 / hom.len() as f64;
    for v in 0..hom.len() {
        accumulate_product(site_laws, &hom.ball_image(v, ball), scale, &mut acc)?;
    }
    PatternDistribution::new(ball, site_laws[0].len(), acc)
}

/// `(1/2)·L1` distance.
pub fn tv_distance(p: &PatternDistribution, q: &PatternDistribution) -> Result<f64> {
    p.check_comparable(q)?;
    let mut total = 0.0;
    for (pat, &w) in &p.weights {
        total += (w - q.weight(pat)).abs();
    }
    for (pat, &w) in &q.weights {
        if !p.weights.contains_key(pat) {
            total += w;
        }
    }
    Ok(0.5 * total)
}

/// Certified interval for `d̄` between any measures with the given depth-`R` marginals.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DbarInterval {
    pub lower: f64,
    pub upper: f64,
}

/// `d_R(p,q) = Σ_{|γ|≤R} (3r)^{−|γ|}·1[p(γ) ≠ q(γ)]`.
pub fn pattern_distance(weights: &[f64], p: &[u8], q: &[u8]) -> f64 {
    weights
        .iter()
        .zip(p.iter().zip(q))
        .filter(|(_, (a, b))| a != b)
        .map(|(w, _)| w)
        .sum()
}

/// Optimal transport between depth-`R` marginals under `d_R`, plus the metric tail.
pub fn dbar_truncated(
    p: &PatternDistribution,
    q: &PatternDistribution,
    spec: &GroupSpec,
) -> Result<DbarInterval> {
    p.check_comparable(q)?;
    let atoms = p.support_len().max(q.support_len());
    if atoms > TRANSPORT_ATOM_BUDGET {
        return Err(Error::TransportBudget {
            atoms,
            budget: TRANSPORT_ATOM_BUDGET,
        });
    }
    let weights = p.position_weights();
    let (pp, pw): (Vec<&Vec<u8>>, Vec<f64>) = p.iter().unzip();
    let (qp, qw): (Vec<&Vec<u8>>, Vec<f64>) = q.iter().unzip();
    let cost: Vec<f64> = pp
        .iter()
        .flat_map(|a| qp.iter().map(|b| pattern_distance(&weights, a, b)).collect::<Vec<_>>())
        .collect();
    let plan = solve_transport(&pw, &qw, &cost)?;
    let lower = plan.cost.max(0.0);
    Ok(DbarInterval {
        lower,
        upper: lower + metric_tail(spec, p.radius()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cayley::build_ball;
    use crate::homgraph::random_hom;
    use crate::model::{gibbs_finite, SpinModel};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn z_ball(r: usize) -> CayleyBall {
        build_ball(&GroupSpec::integers(), r).unwrap()
    }

    fn random_dense(rng: &mut ChaCha8Rng, n: usize, a: usize) -> DenseState {
        let raw: Vec<f64> = (0..a.pow(n as u32)).map(|_| rng.gen_range(0.0..1.0)).collect();
        let total: f64 = raw.iter().sum();
        DenseState::from_probs(n, a, raw.iter().map(|p| p / total).collect()).unwrap()
    }

    #[test]
    fn dense_state_basics() {
        assert!(dense_size(2, 20).is_ok());
        assert!(matches!(dense_size(2, 21), Err(Error::DenseBudget { .. })));
        let x = vec![1, 0, 2];
        let s = DenseState::point_mass(3, &x).unwrap();
        assert_eq!(s.prob(&x), 1.0);
        assert_eq!(s.microstate(microstate_index(3, &x)), x);
        assert!(DenseState::from_probs(1, 2, vec![0.5, 0.6]).is_err());
        assert!(DenseState::from_probs(1, 2, vec![-0.1, 1.1]).is_err());
        let prod = DenseState::product(&[vec![0.2, 0.8], vec![0.5, 0.5]]).unwrap();
        assert!((prod.prob(&[1, 0]) - 0.4).abs() < 1e-15);
        let m = prod.site_marginals();
        assert!((m[0][1] - 0.8).abs() < 1e-15 && (m[1][0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn lift_examples() {
        let c4 = HomGraph::cycle(4);
        let x = vec![1, 0, 1, 0];
        assert_eq!(lift(&c4, &x, 0, &z_ball(0)), vec![1]);
        assert_eq!(lift(&c4, &x, 0, &z_ball(1)), vec![x[0], x[1], x[3]]);
        let constant = vec![2u8; 4];
        assert!(lift(&c4, &constant, 3, &z_ball(2)).iter().all(|&l| l == 2));
    }

    #[test]
    fn empirical_micro_examples() {
        let c3 = HomGraph::cycle(3);
        let p = empirical_micro(&c3, &[1, 1, 0], &z_ball(0), 2).unwrap();
        assert!((p.weight(&[1]) - 2.0 / 3.0).abs() < 1e-15);
        assert!((p.weight(&[0]) - 1.0 / 3.0).abs() < 1e-15);
        let q = empirical_micro(&c3, &[0, 0, 0], &z_ball(1), 2).unwrap();
        assert_eq!(q.support_len(), 1);
        assert_eq!(q.weight(&[0, 0, 0]), 1.0);
    }

    #[test]
    fn empirical_state_of_point_mass_is_empirical_micro() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = GroupSpec::free(2).unwrap();
        let hom = random_hom(&spec, 7, 2).unwrap();
        let ball = build_ball(&spec, 1).unwrap();
        for _ in 0..10 {
            let x: Vec<u8> = (0..7).map(|_| rng.gen_range(0..2)).collect();
            let a = empirical_state(&hom, &DenseState::point_mass(2, &x).unwrap(), &ball).unwrap();
            let b = empirical_micro(&hom, &x, &ball, 2).unwrap();
            assert!(tv_distance(&a, &b).unwrap() < 1e-14);
        }
    }

    #[test]
    fn uniform_state_is_letter_exchangeable() {
        let hom = HomGraph::cycle(5);
        let p = empirical_state(&hom, &DenseState::uniform(5, 3).unwrap(), &z_ball(1)).unwrap();
        let w = p.weight(&[0, 1, 2]);
        for perm in [[1u8, 0, 2], [2, 1, 0], [0, 2, 1]] {
            let pat: Vec<u8> = [0u8, 1, 2].iter().map(|&l| perm[l as usize]).collect();
            assert!((p.weight(&pat) - w).abs() < 1e-15);
        }
    }

    #[test]
    fn gibbs_window_matches_transfer_matrix() {
        // 3-site window of the 8-cycle Ising Gibbs state: T^{n−2}-weighted oracle
        let model = SpinModel::ising(0.5, 0.0);
        let (xi, _) = gibbs_finite(&model, &HomGraph::cycle(8)).unwrap();
        let p = empirical_state(&HomGraph::cycle(8), &xi, &z_ball(1)).unwrap();
        let t = |a: u8, b: u8| (-model.j(a, b)).exp();
        let mut power = [[1.0, 0.0], [0.0, 1.0]];
        for _ in 0..6 {
            let mut next = [[0.0; 2]; 2];
            for i in 0..2 {
                for j in 0..2 {
                    next[i][j] = (0..2).map(|k| power[i][k] * t(k as u8, j as u8)).sum();
                }
            }
            power = next;
        }
        let mut oracle = BTreeMap::new();
        let mut z = 0.0;
        for l in 0..2u8 {
            for c in 0..2u8 {
                for r in 0..2u8 {
                    let w = t(l, c) * t(c, r) * power[r as usize][l as usize];
                    z += w;
                    // ball order: e, s, s⁻¹ = centre, right, left
                    oracle.insert(vec![c, r, l], w);
                }
            }
        }
        for (pat, w) in oracle {
            assert!((p.weight(&pat) - w / z).abs() < 1e-14);
        }
    }

    #[test]
    fn good_vertex_examples() {
        let c = HomGraph::cycle(9);
        let ball = z_ball(2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let zeta = random_dense(&mut rng, 9, 2);
        let a = empirical_state(&c, &zeta, &ball).unwrap();
        let b = good_vertex_empirical(&c, &zeta, &ball).unwrap();
        assert!(tv_distance(&a, &b).unwrap() < 1e-14);
        assert!(matches!(
            good_vertex_empirical(&HomGraph::cycle(3), &random_dense(&mut rng, 3, 2), &ball),
            Err(Error::NoGoodVertices(2))
        ));
    }

    #[test]
    fn good_vertex_tv_bound() {
        let spec = GroupSpec::free(2).unwrap();
        let ball = build_ball(&spec, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for seed in 0..8 {
            let hom = random_hom(&spec, 8, seed).unwrap();
            let delta = hom.delta_r(&ball);
            if delta == 1.0 {
                continue;
            }
            let zeta = random_dense(&mut rng, 8, 2);
            let a = empirical_state(&hom, &zeta, &ball).unwrap();
            let b = good_vertex_empirical(&hom, &zeta, &ball).unwrap();
            assert!(tv_distance(&a, &b).unwrap() <= 2.0 * delta + 1e-12);
        }
    }

    #[test]
    fn single_good_vertex_is_its_lift_law() {
        let spec = GroupSpec::free(2).unwrap();
        let ball = build_ball(&spec, 1).unwrap();
        let (hom, v) = (0..5000)
            .find_map(|seed| {
                let hom = random_hom(&spec, 8, seed).unwrap();
                let good: Vec<usize> = (0..8).filter(|&v| hom.ball_isomorphic(v, &ball)).collect();
                (good.len() == 1).then(|| (hom, good[0]))
            })
            .expect("some seed has exactly one good vertex");
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let zeta = random_dense(&mut rng, 8, 2);
        let mut oracle: HashMap<Vec<u8>, f64> = HashMap::new();
        for (idx, &p) in zeta.probs().iter().enumerate() {
            *oracle.entry(lift(&hom, &zeta.microstate(idx), v, &ball)).or_insert(0.0) += p;
        }
        let oracle = PatternDistribution::new(&ball, 2, oracle).unwrap();
        let good = good_vertex_empirical(&hom, &zeta, &ball).unwrap();
        assert!(tv_distance(&good, &oracle).unwrap() < 1e-14);
    }

    #[test]
    fn tv_examples() {
        let b = z_ball(0);
        let p = PatternDistribution::new(&b, 2, [(vec![0], 0.8), (vec![1], 0.2)]).unwrap();
        let q = PatternDistribution::new(&b, 2, [(vec![0], 0.5), (vec![1], 0.5)]).unwrap();
        assert!((tv_distance(&p, &q).unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(tv_distance(&p, &p).unwrap(), 0.0);
        let a = PatternDistribution::point_mass(&b, 2, vec![0]).unwrap();
        let c = PatternDistribution::point_mass(&b, 2, vec![1]).unwrap();
        assert_eq!(tv_distance(&a, &c).unwrap(), 1.0);
        let deeper = PatternDistribution::point_mass(&z_ball(1), 2, vec![0, 0, 0]).unwrap();
        assert!(matches!(tv_distance(&a, &deeper), Err(Error::RadiusMismatch(0, 1))));
    }

    #[test]
    fn dbar_examples() {
        let z = GroupSpec::integers();
        let b = z_ball(1);
        let plus = PatternDistribution::point_mass(&b, 2, vec![1, 1, 1]).unwrap();
        let minus = PatternDistribution::point_mass(&b, 2, vec![0, 0, 0]).unwrap();
        let d = dbar_truncated(&plus, &minus, &z).unwrap();
        assert!((d.lower - 5.0 / 3.0).abs() < 1e-14);
        assert!((d.upper - 2.0).abs() < 1e-14);
        let same = dbar_truncated(&plus, &plus, &z).unwrap();
        assert_eq!(same.lower, 0.0);
        assert!((same.upper - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn dbar_interval_tightens_with_radius() {
        let z = GroupSpec::integers();
        let big = z_ball(3);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let hom = HomGraph::cycle(9);
        let za = random_dense(&mut rng, 9, 2);
        let zb = random_dense(&mut rng, 9, 2);
        let pa = empirical_state(&hom, &za, &big).unwrap();
        let pb = empirical_state(&hom, &zb, &big).unwrap();
        let mut prev: Option<DbarInterval> = None;
        for r in 0..=3 {
            let d = dbar_truncated(&pa.restrict(r).unwrap(), &pb.restrict(r).unwrap(), &z).unwrap();
            if let Some(p) = prev {
                assert!(d.lower >= p.lower - 1e-12);
                assert!(d.upper <= p.upper + 1e-12);
            }
            prev = Some(d);
        }
    }

    #[test]
    fn empirical_product_matches_dense() {
        let spec = GroupSpec::free(2).unwrap();
        let ball = build_ball(&spec, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for seed in 0..4 {
            let hom = random_hom(&spec, 6, seed).unwrap();
            let laws: Vec<Vec<f64>> = (0..6)
                .map(|_| {
                    let p = rng.gen_range(0.05..0.95);
                    vec![p, 1.0 - p]
                })
                .collect();
            let exact = empirical_product(&hom, &laws, &ball).unwrap();
            let dense = empirical_state(&hom, &DenseState::product(&laws).unwrap(), &ball).unwrap();
            assert!(tv_distance(&exact, &dense).unwrap() < 1e-13);
        }
    }

    proptest! {
        #[test]
        fn restriction_commutes_with_empirical_micro(seed in 0u64..300, n in 1usize..12) {
            let spec = GroupSpec::free(2).unwrap();
            let hom = random_hom(&spec, n, seed).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<u8> = (0..n).map(|_| rng.gen_range(0..3)).collect();
            let big = build_ball(&spec, 2).unwrap();
            let p = empirical_micro(&hom, &x, &big, 3).unwrap();
            for r in 0..=2 {
                let small = build_ball(&spec, r).unwrap();
                let direct = empirical_micro(&hom, &x, &small, 3).unwrap();
                prop_assert_eq!(p.restrict(r).unwrap().support_len(), direct.support_len());
                prop_assert!(tv_distance(&p.restrict(r).unwrap(), &direct).unwrap() < 1e-14);
            }
            // weights are multiples of 1/n
            for (_, w) in p.iter() {
                let k = w * n as f64;
                prop_assert!((k - k.round()).abs() < 1e-9);
            }
        }

        #[test]
        fn letter_permutation_is_covariant(seed in 0u64..300) {
            let hom = HomGraph::cycle(6);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<u8> = (0..6).map(|_| rng.gen_range(0..3)).collect();
            let perm = [2u8, 0, 1];
            let y: Vec<u8> = x.iter().map(|&l| perm[l as usize]).collect();
            let ball = z_ball(1);
            let px = empirical_micro(&hom, &x, &ball, 3).unwrap();
            let py = empirical_micro(&hom, &y, &ball, 3).unwrap();
            for (pat, w) in px.iter() {
                let mapped: Vec<u8> = pat.iter().map(|&l| perm[l as usize]).collect();
                prop_assert!((py.weight(&mapped) - w).abs() < 1e-15);
            }
        }

        #[test]
        fn dbar_lower_is_a_metric(seed in 0u64..200) {
            let z = GroupSpec::integers();
            let ball = z_ball(1);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut random_pd = || {
                let raw: Vec<f64> = (0..8).map(|_| if rng.gen_bool(0.3) { 0.0 } else { rng.gen_range(0.0..1.0) }).collect();
                let raw = if raw.iter().sum::<f64>() == 0.0 { vec![1.0; 8] } else { raw };
                let total: f64 = raw.iter().sum();
                let entries = (0..8).map(|i| (decode_microstate(2, 3, i), raw[i] / total));
                PatternDistribution::new(&ball, 2, entries).unwrap()
            };
            let (p, q, r) = (random_pd(), random_pd(), random_pd());
            let d = |a: &PatternDistribution, b: &PatternDistribution| dbar_truncated(a, b, &z).unwrap().lower;
            prop_assert!(d(&p, &p).abs() < 1e-12);
            prop_assert!((d(&p, &q) - d(&q, &p)).abs() < 1e-12);
            prop_assert!(d(&p, &r) <= d(&p, &q) + d(&q, &r) + 1e-12);
            // OT never exceeds diameter × TV
            let diam: f64 = p.position_weights().iter().sum();
            prop_assert!(d(&p, &q) <= diam * tv_distance(&p, &q).unwrap() + 1e-12);
        }
    }
}
