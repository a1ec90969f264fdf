//! Finite actions `σ ∈ Hom(Γ, Sym(V))` and how closely they resemble the
//! Cayley graph locally.
//!
//! `σ^{s_i}` is stored as a permutation; words act by composition, so
//! `σ^{w_1⋯w_k} = σ^{w_1} ∘ ⋯ ∘ σ^{w_k}` and the rightmost letter is applied
//! first. This is what makes `γ ↦ σ^γ v` a left action compatible with the
//! lift `(Π_v x)(γ) = x(σ^γ v)`.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cayley::{letters, BallLimits, CayleyBall, Group, GroupFamily, GroupSpec, Letter, Word};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "HomGraphRepr", into = "HomGraphRepr")]
pub struct HomGraph {
    n: usize,
    perms: Vec<Vec<usize>>,
    inverses: Vec<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HomGraphRepr {
    n: usize,
    perms: Vec<Vec<usize>>,
}

impl TryFrom<HomGraphRepr> for HomGraph {
    type Error = Error;

    fn try_from(repr: HomGraphRepr) -> Result<Self> {
        let hom = HomGraph::new(repr.perms)?;
        if hom.n != repr.n {
            return Err(Error::InvalidHom(format!(
                "declared n = {} but permutations have length {}",
                repr.n, hom.n
            )));
        }
        Ok(hom)
    }
}

impl From<HomGraph> for HomGraphRepr {
    fn from(h: HomGraph) -> Self {
        HomGraphRepr {
            n: h.n,
            perms: h.perms,
        }
    }
}

/// Outcome of checking a hom against a presentation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Validation {
    pub ok: bool,
    /// First violated relator, with a vertex it moves.
    pub violation: Option<(Word, usize)>,
    pub message: String,
}

impl HomGraph {
    /// Builds a hom from the images of `s_1..s_r`; each must be a bijection.
    pub fn new(perms: Vec<Vec<usize>>) -> Result<Self> {
        let n = perms.first().map_or(0, Vec::len);
        if perms.is_empty() || n == 0 {
            return Err(Error::InvalidHom("need at least one generator and one vertex".into()));
        }
        let mut inverses = Vec::with_capacity(perms.len());
        for (i, p) in perms.iter().enumerate() {
            if p.len() != n {
                return Err(Error::InvalidHom(format!(
                    "permutation {} has length {} (expected {n})",
                    i + 1,
                    p.len()
                )));
            }
            let mut inv = vec![usize::MAX; n];
            for (v, &w) in p.iter().enumerate() {
                if w >= n || inv[w] != usize::MAX {
                    return Err(Error::InvalidHom(format!(
                        "permutation {} is not a bijection at vertex {v}",
                        i + 1
                    )));
                }
                inv[w] = v;
            }
            inverses.push(inv);
        }
        Ok(Self { n, perms, inverses })
    }

    pub fn identity(n: usize, rank: usize) -> Self {
        Self::new(vec![(0..n).collect(); rank]).expect("identity is a bijection")
    }

    /// The `n`-cycle `v ↦ v + 1 mod n` as an action of ℤ.
    pub fn cycle(n: usize) -> Self {
        Self::new(vec![(0..n).map(|v| (v + 1) % n).collect()]).expect("shift is a bijection")
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn rank(&self) -> usize {
        self.perms.len()
    }

    pub fn perm(&self, generator: usize) -> &[usize] {
        &self.perms[generator]
    }

    /// `σ^{letter}(v)`.
    #[inline]
    pub fn step(&self, letter: Letter, v: usize) -> usize {
        if letter.inverse {
            self.inverses[letter.generator][v]
        } else {
            self.perms[letter.generator][v]
        }
    }

    /// `σ^{w}(v)` for a word in product order.
    pub fn apply(&self, word: &[Letter], v: usize) -> usize {
        word.iter().rev().fold(v, |u, &l| self.step(l, u))
    }

    /// The `2r` neighbours `σ^s v`, `s ∈ S`, in letter order and with repetition.
    pub fn neighbors(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        letters(self.rank()).map(move |l| self.step(l, v))
    }

    pub fn validate(&self, spec: &GroupSpec) -> Validation {
        if self.rank() != spec.rank() {
            return Validation {
                ok: false,
                violation: None,
                message: format!("hom has {} generators, group has {}", self.rank(), spec.rank()),
            };
        }
        for rel in spec.relators() {
            for v in 0..self.n {
                if self.apply(&rel, v) != v {
                    let text: Vec<String> = rel.iter().map(|l| l.to_string()).collect();
                    return Validation {
                        ok: false,
                        message: format!("relator {} moves vertex {v}", text.join("")),
                        violation: Some((rel, v)),
                    };
                }
            }
        }
        Validation {
            ok: true,
            violation: None,
            message: "ok".into(),
        }
    }

    /// `σ^γ(v)` for every ball vertex `γ`, in ball order.
    pub fn ball_image(&self, v: usize, ball: &CayleyBall) -> Vec<usize> {
        let mut img = Vec::with_capacity(ball.len());
        self.ball_image_into(v, ball, &mut img);
        img
    }

    fn ball_image_into(&self, v: usize, ball: &CayleyBall, img: &mut Vec<usize>) {
        img.clear();
        img.push(v);
        for i in 1..ball.len() {
            let (p, l) = ball.parent(i).expect("non-root vertex has a parent");
            img.push(self.step(l, img[p]));
        }
    }

    /// Whether `γ ↦ σ^γ v` is a label- and direction-preserving isomorphism
    /// from `B_Γ(e,R)` onto `B_σ(v,R)`.
    pub fn ball_isomorphic(&self, v: usize, ball: &CayleyBall) -> bool {
        Scratch::new(self.n).check(self, v, ball)
    }

    /// `δ_R^σ`: the fraction of vertices whose radius-`R` ball is not isomorphic
    /// to the Cayley ball.
    pub fn delta_r(&self, ball: &CayleyBall) -> f64 {
        self.bad_vertices(ball).len() as f64 / self.n as f64
    }

    /// Vertices failing the ball-isomorphism check.
    pub fn bad_vertices(&self, ball: &CayleyBall) -> Vec<usize> {
        if ball.len() > self.n {
            return (0..self.n).collect();
        }
        (0..self.n)
            .into_par_iter()
            .map_init(
                || Scratch::new(self.n),
                |s, v| (!s.check(self, v, ball)).then_some(v),
            )
            .flatten()
            .collect()
    }

    /// Mask of vertices passing the ball-isomorphism check.
    pub fn good_mask(&self, ball: &CayleyBall) -> Vec<bool> {
        let mut mask = vec![true; self.n];
        for v in self.bad_vertices(ball) {
            mask[v] = false;
        }
        mask
    }

    pub fn fixed_point_fraction(&self, word: &[Letter]) -> f64 {
        let fixed = (0..self.n).filter(|&v| self.apply(word, v) == v).count();
        fixed as f64 / self.n as f64
    }

    /// Whether every vertex is reachable from vertex 0.
    pub fn is_transitive(&self) -> bool {
        let mut seen = vec![false; self.n];
        let mut stack = vec![0];
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = stack.pop() {
            for w in self.neighbors(u).collect::<Vec<_>>() {
                if !seen[w] {
                    seen[w] = true;
                    count += 1;
                    stack.push(w);
                }
            }
        }
        count == self.n
    }

    /// Disjoint union; vertices of `other` are shifted by `self.len()`.
    pub fn disjoint_union(&self, other: &HomGraph) -> Result<HomGraph> {
        if self.rank() != other.rank() {
            return Err(Error::InvalidHom("rank mismatch in disjoint union".into()));
        }
        let perms = self
            .perms
            .iter()
            .zip(&other.perms)
            .map(|(a, b)| a.iter().copied().chain(b.iter().map(|&w| w + self.n)).collect())
            .collect();
        HomGraph::new(perms)
    }
}

/// Reusable per-thread buffers for the ball-isomorphism check.
struct Scratch {
    stamp: Vec<u32>,
    epoch: u32,
    img: Vec<usize>,
    queue: Vec<(usize, usize)>,
}

impl Scratch {
    fn new(n: usize) -> Self {
        Self {
            stamp: vec![0; n],
            epoch: 0,
            img: vec![],
            queue: vec![],
        }
    }

    fn next_epoch(&mut self) -> u32 {
        self.epoch = self.epoch.wrapping_add(1);
        if self.epoch == 0 {
            self.stamp.iter_mut().for_each(|s| *s = 0);
            self.epoch = 1;
        }
        self.epoch
    }

    fn check(&mut self, hom: &HomGraph, v: usize, ball: &CayleyBall) -> bool {
        // a radius-0 ball is a bare point; loops at v are not part of it
        if ball.radius() == 0 {
            return true;
        }
        if ball.len() > hom.n {
            return false;
        }
        let mut img = std::mem::take(&mut self.img);
        hom.ball_image_into(v, ball, &mut img);
        let ok = self.check_image(hom, v, ball, &img);
        self.img = img;
        ok
    }

    fn check_image(&mut self, hom: &HomGraph, v: usize, ball: &CayleyBall, img: &[usize]) -> bool {
        // injective
        let e = self.next_epoch();
        for &u in img {
            if self.stamp[u] == e {
                return false;
            }
            self.stamp[u] = e;
        }
        // induced σ-edges among the image must be exactly the images of Cayley edges
        let mut edge_count = 0;
        for &u in img {
            for g in 0..hom.rank() {
                if self.stamp[hom.perms[g][u]] == e {
                    edge_count += 1;
                }
            }
        }
        if edge_count != ball.edges().len() {
            return false;
        }
        // the image is contained in B_σ(v,R); it must also exhaust it
        let e = self.next_epoch();
        self.queue.clear();
        self.queue.push((v, 0));
        self.stamp[v] = e;
        let mut head = 0;
        while head < self.queue.len() {
            let (u, d) = self.queue[head];
            head += 1;
            if d == ball.radius() {
                continue;
            }
            for l in letters(hom.rank()) {
                let w = hom.step(l, u);
                if self.stamp[w] != e {
                    self.stamp[w] = e;
                    self.queue.push((w, d + 1));
                    if self.queue.len() > img.len() {
                        return false;
                    }
                }
            }
        }
        self.queue.len() == img.len()
    }
}

/// `Δ^σ` restricted to radii `0..=R_max`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SoficDelta {
    pub value: f64,
    pub argmin_r: usize,
    /// `δ_R^σ` for `R = 0..=R_max`.
    pub deltas: Vec<f64>,
    /// Maximal overestimate of the untruncated infimum, `9·(2/3)^{R_max}`.
    pub slack: f64,
}

/// `min_{R ≤ R_max} 9·(2/3)^R + 6·δ_R^σ`.
pub fn sofic_delta(hom: &HomGraph, spec: &GroupSpec, r_max: usize) -> Result<SoficDelta> {
    let limits = BallLimits {
        max_radius: r_max.max(BallLimits::default().max_radius),
        ..BallLimits::default()
    };
    let group = Group::with_limits(spec, limits)?;
    let mut deltas = Vec::with_capacity(r_max + 1);
    for r in 0..=r_max {
        if deltas.last() == Some(&1.0) {
            deltas.push(1.0);
            continue;
        }
        let ball = group.ball(r)?;
        deltas.push(hom.delta_r(&ball));
        if ball.len() > hom.len() {
            // larger balls cannot embed either
            deltas.resize(r_max + 1, 1.0);
            break;
        }
    }
    let (argmin_r, value) = deltas
        .iter()
        .enumerate()
        .map(|(r, &d)| (r, delta_term(r, d)))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best });
    Ok(SoficDelta {
        value,
        argmin_r,
        deltas,
        slack: 9.0 * (2.0f64 / 3.0).powi(r_max as i32),
    })
}

/// Largest `R ≤ cap` whose Cayley ball has at most `n` elements. Beyond it
/// `δ_R = 1` for every action on `n` points, so only constant terms remain.
pub fn fitting_radius(spec: &GroupSpec, n: usize, cap: usize) -> Result<usize> {
    let limits = BallLimits {
        max_radius: cap.max(BallLimits::default().max_radius),
        ..BallLimits::default()
    };
    let group = Group::with_limits(spec, limits)?;
    let mut r = 0;
    while r < cap && group.ball(r + 1)?.len() <= n {
        r += 1;
    }
    Ok(r)
}

fn delta_term(r: usize, delta: f64) -> f64 {
    9.0 * (2.0f64 / 3.0).powi(r as i32) + 6.0 * delta
}

/// Random action: uniform permutations for free generators, uniformly random
/// fixed-point-free permutations of order `m` for a `ℤ_m` factor.
pub fn random_hom(spec: &GroupSpec, n: usize, seed: u64) -> Result<HomGraph> {
    if n == 0 {
        return Err(Error::InvalidHom("n must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let uniform = |rng: &mut ChaCha8Rng| {
        let mut p: Vec<usize> = (0..n).collect();
        p.shuffle(rng);
        p
    };
    let perms = match spec.family() {
        GroupFamily::Free => (0..spec.rank()).map(|_| uniform(&mut rng)).collect(),
        GroupFamily::FreeProductCyclic { orders } => {
            let mut perms = Vec::with_capacity(orders.len());
            for &m in orders {
                let m = m as usize;
                if !n.is_multiple_of(m) {
                    return Err(Error::InvalidHom(format!(
                        "n = {n} is not divisible by the cyclic order {m}"
                    )));
                }
                let order = uniform(&mut rng);
                let mut p = vec![0; n];
                for block in order.chunks(m) {
                    for k in 0..m {
                        p[block[k]] = block[(k + 1) % m];
                    }
                }
                perms.push(p);
            }
            perms
        }
        GroupFamily::FreeAbelian | GroupFamily::FinitePresented { .. } => {
            return Err(Error::InvalidHom(
                "random homs are only available for free groups and free products of cyclic groups"
                    .into(),
            ))
        }
    };
    HomGraph::new(perms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cayley::build_ball;
    use proptest::prelude::*;

    fn torus(k: usize) -> HomGraph {
        let idx = |i: usize, j: usize| (i % k) * k + (j % k);
        let mut a = vec![0; k * k];
        let mut b = vec![0; k * k];
        for i in 0..k {
            for j in 0..k {
                a[idx(i, j)] = idx(i + 1, j);
                b[idx(i, j)] = idx(i, j + 1);
            }
        }
        HomGraph::new(vec![a, b]).unwrap()
    }

    #[test]
    fn construction_rejects_non_bijections() {
        assert!(HomGraph::new(vec![vec![0, 0]]).is_err());
        assert!(HomGraph::new(vec![vec![0, 1], vec![0]]).is_err());
        assert!(serde_json::from_str::<HomGraph>(r#"{"n":3,"perms":[[1,0]]}"#).is_err());
        let h: HomGraph = serde_json::from_str(r#"{"n":2,"perms":[[1,0]]}"#).unwrap();
        assert_eq!(h.len(), 2);
    }

    #[test]
    fn validate_examples() {
        let z2 = GroupSpec::free_abelian(2).unwrap();
        assert!(HomGraph::identity(5, 2).validate(&z2).ok);
        assert!(torus(4).validate(&z2).ok);
        let bad = HomGraph::new(vec![vec![1, 2, 0], vec![1, 0, 2]]).unwrap();
        let report = bad.validate(&z2);
        assert!(!report.ok);
        let (rel, v) = report.violation.unwrap();
        assert_eq!(rel, vec![Letter::gen(0), Letter::gen(1), Letter::inv(0), Letter::inv(1)]);
        assert_ne!(bad.apply(&rel, v), v);
        assert!(!HomGraph::cycle(3).validate(&z2).ok);
    }

    #[test]
    fn apply_examples() {
        let c = HomGraph::cycle(7);
        assert_eq!(c.apply(&[], 3), 3);
        assert_eq!(c.apply(&[Letter::gen(0); 10], 0), 3);
        for v in 0..7 {
            assert_eq!(c.apply(&[Letter::gen(0), Letter::inv(0)], v), v);
        }
        // rightmost letter acts first
        let h = HomGraph::new(vec![vec![1, 0, 2], vec![0, 2, 1]]).unwrap();
        assert_eq!(h.apply(&[Letter::gen(0), Letter::gen(1)], 1), h.step(Letter::gen(0), 2));
    }

    #[test]
    fn cycle_ball_isomorphism_threshold() {
        let z = GroupSpec::integers();
        for n in [5usize, 8, 20] {
            let c = HomGraph::cycle(n);
            for r in 0..=n.min(12) {
                let ball = build_ball(&z, r).unwrap();
                let expected = 2 * r + 2 <= n || r == 0;
                for v in 0..n {
                    assert_eq!(c.ball_isomorphic(v, &ball), expected, "n={n} r={r}");
                }
            }
        }
        let ball = build_ball(&GroupSpec::free(2).unwrap(), 1).unwrap();
        assert!(!HomGraph::identity(1, 2).ball_isomorphic(0, &ball));
    }

    #[test]
    fn cycle_delta() {
        let c = HomGraph::cycle(20);
        let d = sofic_delta(&c, &GroupSpec::integers(), 9).unwrap();
        assert!(d.deltas.iter().all(|&x| x == 0.0));
        assert!((d.value - 9.0 * (2.0f64 / 3.0).powi(9)).abs() < 1e-12);
        assert_eq!(d.argmin_r, 9);
        let d = sofic_delta(&c, &GroupSpec::integers(), 15).unwrap();
        assert_eq!(d.deltas[10], 1.0);
        assert_eq!(d.argmin_r, 9);
        let id = sofic_delta(&HomGraph::identity(1, 2), &GroupSpec::free(2).unwrap(), 20).unwrap();
        assert_eq!(id.deltas[0], 0.0);
        assert!(id.deltas[1..].iter().all(|&x| x == 1.0));
        assert!((id.value - (6.0 + 9.0 * (2.0f64 / 3.0).powi(20))).abs() < 1e-12);
    }

    #[test]
    fn fitting_radius_examples() {
        // |B_R| is 2R+1 on the integers and 2·3^R − 1 on F_2
        assert_eq!(fitting_radius(&GroupSpec::integers(), 20, 40).unwrap(), 9);
        let f2 = GroupSpec::free(2).unwrap();
        assert_eq!(fitting_radius(&f2, 50, 40).unwrap(), 2);
        assert_eq!(fitting_radius(&f2, 500, 40).unwrap(), 5);
        assert_eq!(fitting_radius(&f2, 500, 3).unwrap(), 3);
        assert_eq!(fitting_radius(&f2, 4, 40).unwrap(), 0);
    }

    #[test]
    fn torus_delta_matches_geometry() {
        // on a k×k torus, radius-R L1 balls embed iff 2R+1 ≤ k
        let z2 = GroupSpec::free_abelian(2).unwrap();
        let t = torus(6);
        let d = sofic_delta(&t, &z2, 4).unwrap();
        assert_eq!(d.deltas, vec![0.0, 0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn fixed_points() {
        let c = HomGraph::cycle(9);
        assert_eq!(c.fixed_point_fraction(&[]), 1.0);
        assert_eq!(c.fixed_point_fraction(&[Letter::gen(0)]), 0.0);
        assert_eq!(c.fixed_point_fraction(&[Letter::gen(0); 9]), 1.0);
        let f2 = GroupSpec::free(2).unwrap();
        for seed in 0..5 {
            let h = random_hom(&f2, 1000, seed).unwrap();
            assert!(h.fixed_point_fraction(&[Letter::gen(0)]) < 0.02);
        }
    }

    #[test]
    fn random_hom_contract() {
        let f2 = GroupSpec::free(2).unwrap();
        assert_eq!(random_hom(&f2, 40, 7).unwrap(), random_hom(&f2, 40, 7).unwrap());
        assert_ne!(random_hom(&f2, 40, 7).unwrap(), random_hom(&f2, 40, 8).unwrap());
        assert_eq!(random_hom(&GroupSpec::integers(), 1, 3).unwrap(), HomGraph::identity(1, 1));
        let d = GroupSpec::free_product_cyclic(vec![2, 3]).unwrap();
        assert!(random_hom(&d, 9, 0).is_err());
        let h = random_hom(&d, 12, 0).unwrap();
        assert!(h.validate(&d).ok);
        assert_eq!(h.fixed_point_fraction(&[Letter::gen(0)]), 0.0);
        assert_eq!(h.fixed_point_fraction(&[Letter::gen(1)]), 0.0);
        assert!(random_hom(&GroupSpec::free_abelian(2).unwrap(), 4, 0).is_err());
    }

    proptest! {
        #[test]
        fn delta_is_monotone_in_radius(seed in 0u64..1000, n in 1usize..60) {
            let spec = GroupSpec::free(2).unwrap();
            let h = random_hom(&spec, n, seed).unwrap();
            let d = sofic_delta(&h, &spec, 5).unwrap();
            prop_assert_eq!(d.deltas[0], 0.0);
            for w in d.deltas.windows(2) {
                prop_assert!(w[0] <= w[1]);
            }
            prop_assert!(d.value >= 0.0 && d.value <= 9.0);
        }

        #[test]
        fn involution_products_validate(seed in 0u64..1000, half in 1usize..20) {
            let spec = GroupSpec::free_product_cyclic(vec![2, 2, 2]).unwrap();
            let h = random_hom(&spec, 2 * half, seed).unwrap();
            prop_assert!(h.validate(&spec).ok);
        }

        #[test]
        fn ball_image_is_homomorphic(seed in 0u64..1000, n in 1usize..30) {
            let spec = GroupSpec::free(2).unwrap();
            let h = random_hom(&spec, n, seed).unwrap();
            let ball = build_ball(&spec, 3).unwrap();
            let img = h.ball_image(n / 2, &ball);
            for i in 0..ball.len() {
                prop_assert_eq!(img[i], h.apply(ball.word(i), n / 2));
            }
        }
    }
}
