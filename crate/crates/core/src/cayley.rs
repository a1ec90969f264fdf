//! Finitely generated groups and their rooted, edge-labeled Cayley balls.
//!
//! The Cayley graph has an `i`-labeled directed edge `(γ, s_i γ)` for every
//! generator `s_i`. Balls are enumerated breadth-first from the identity,
//! expanding letters in the fixed order `s_1, s_1⁻¹, s_2, s_2⁻¹, …`, so the
//! vertex order (and therefore every pattern index) is reproducible, and the
//! ball of radius `R' < R` is a prefix of the ball of radius `R`.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// A generator or its inverse.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Letter {
    pub generator: usize,
    pub inverse: bool,
}

impl Letter {
    pub const fn new(generator: usize, inverse: bool) -> Self {
        Self { generator, inverse }
    }

    pub const fn gen(generator: usize) -> Self {
        Self::new(generator, false)
    }

    pub const fn inv(generator: usize) -> Self {
        Self::new(generator, true)
    }

    pub const fn inverse_letter(self) -> Self {
        Self::new(self.generator, !self.inverse)
    }

    /// Position in the letter order `s_1, s_1⁻¹, s_2, s_2⁻¹, …`.
    pub const fn code(self) -> usize {
        2 * self.generator + self.inverse as usize
    }

    pub const fn from_code(code: usize) -> Self {
        Self::new(code / 2, code % 2 == 1)
    }

    /// `k > 0` is `s_k`, `k < 0` is `s_{|k|}⁻¹` (one-based, as in config files).
    pub fn from_signed(k: i64, rank: usize) -> Result<Self> {
        let g = k.unsigned_abs() as usize;
        if k == 0 || g > rank {
            return Err(Error::InvalidGroup(format!(
                "letter {k} out of range for rank {rank}"
            )));
        }
        Ok(Self::new(g - 1, k < 0))
    }

    pub fn to_signed(self) -> i64 {
        let g = self.generator as i64 + 1;
        if self.inverse {
            -g
        } else {
            g
        }
    }
}

impl fmt::Display for Letter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.inverse {
            write!(f, "s{}⁻¹", self.generator + 1)
        } else {
            write!(f, "s{}", self.generator + 1)
        }
    }
}

/// A word in product order: `[l_1, …, l_k]` is the group element `l_1 ⋯ l_k`.
pub type Word = Vec<Letter>;

pub fn word_from_signed(letters: &[i64], rank: usize) -> Result<Word> {
    letters.iter().map(|&k| Letter::from_signed(k, rank)).collect()
}

pub fn inverse_word(word: &[Letter]) -> Word {
    word.iter().rev().map(|l| l.inverse_letter()).collect()
}

/// All `2r` letters in the canonical order.
pub fn letters(rank: usize) -> impl Iterator<Item = Letter> {
    (0..2 * rank).map(Letter::from_code)
}

/// Supported group families.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum GroupFamily {
    /// Free group `F_r`; `r = 1` is ℤ.
    Free,
    /// `ℤ^r` with the standard basis.
    FreeAbelian,
    /// `ℤ_{m_1} * ⋯ * ℤ_{m_r}`, generator `s_i` generating the `i`-th factor.
    FreeProductCyclic { orders: Vec<u32> },
    /// `⟨s_1..s_r | relators⟩`, normal forms via a bounded Knuth–Bendix completion.
    FinitePresented { relators: Vec<Word> },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "GroupSpecRepr", into = "GroupSpecRepr")]
pub struct GroupSpec {
    family: GroupFamily,
    rank: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GroupSpecRepr {
    family: String,
    r: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    orders: Vec<u32>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    relators: Vec<Vec<i64>>,
}

impl TryFrom<GroupSpecRepr> for GroupSpec {
    type Error = Error;

    fn try_from(repr: GroupSpecRepr) -> Result<Self> {
        match repr.family.as_str() {
            "free" => GroupSpec::free(repr.r),
            "free_abelian" => GroupSpec::free_abelian(repr.r),
            "free_product_cyclic" => {
                if repr.orders.len() != repr.r {
                    return Err(Error::InvalidGroup(format!(
                        "{} cyclic orders given for r = {}",
                        repr.orders.len(),
                        repr.r
                    )));
                }
                GroupSpec::free_product_cyclic(repr.orders)
            }
            "finite_presented" => {
                let relators = repr
                    .relators
                    .iter()
                    .map(|w| word_from_signed(w, repr.r))
                    .collect::<Result<Vec<_>>>()?;
                GroupSpec::finite_presented(repr.r, relators)
            }
            other => Err(Error::InvalidGroup(format!("unknown family {other:?}"))),
        }
    }
}

impl From<GroupSpec> for GroupSpecRepr {
    fn from(spec: GroupSpec) -> Self {
        let (family, orders, relators) = match spec.family {
            GroupFamily::Free => ("free", vec![], vec![]),
            GroupFamily::FreeAbelian => ("free_abelian", vec![], vec![]),
            GroupFamily::FreeProductCyclic { orders } => ("free_product_cyclic", orders, vec![]),
            GroupFamily::FinitePresented { relators } => (
                "finite_presented",
                vec![],
                relators
                    .iter()
                    .map(|w| w.iter().map(|l| l.to_signed()).collect())
                    .collect(),
            ),
        };
        GroupSpecRepr {
            family: family.to_string(),
            r: spec.rank,
            orders,
            relators,
        }
    }
}

impl GroupSpec {
    pub fn free(rank: usize) -> Result<Self> {
        Self::checked(GroupFamily::Free, rank)
    }

    /// ℤ with one generator.
    pub fn integers() -> Self {
        Self {
            family: GroupFamily::Free,
            rank: 1,
        }
    }

    pub fn free_abelian(rank: usize) -> Result<Self> {
        Self::checked(GroupFamily::FreeAbelian, rank)
    }

    pub fn free_product_cyclic(orders: Vec<u32>) -> Result<Self> {
        if let Some(m) = orders.iter().find(|&&m| m < 2) {
            return Err(Error::InvalidGroup(format!("cyclic order {m} < 2")));
        }
        let rank = orders.len();
        Self::checked(GroupFamily::FreeProductCyclic { orders }, rank)
    }

    pub fn finite_presented(rank: usize, relators: Vec<Word>) -> Result<Self> {
        for w in &relators {
            if w.is_empty() {
                return Err(Error::InvalidGroup("empty relator".into()));
            }
            if let Some(l) = w.iter().find(|l| l.generator >= rank) {
                return Err(Error::InvalidGroup(format!("letter {l} out of range")));
            }
            if w.windows(2).any(|p| p[0] == p[1].inverse_letter()) {
                return Err(Error::InvalidGroup("relator is not freely reduced".into()));
            }
        }
        Self::checked(GroupFamily::FinitePresented { relators }, rank)
    }

    fn checked(family: GroupFamily, rank: usize) -> Result<Self> {
        if rank == 0 {
            return Err(Error::InvalidGroup("rank must be positive".into()));
        }
        Ok(Self { family, rank })
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn family(&self) -> &GroupFamily {
        &self.family
    }

    /// Relators that every action must satisfy.
    pub fn relators(&self) -> Vec<Word> {
        match &self.family {
            GroupFamily::Free => vec![],
            GroupFamily::FreeAbelian => {
                let mut out = vec![];
                for i in 0..self.rank {
                    for j in i + 1..self.rank {
                        out.push(vec![
                            Letter::gen(i),
                            Letter::gen(j),
                            Letter::inv(i),
                            Letter::inv(j),
                        ]);
                    }
                }
                out
            }
            GroupFamily::FreeProductCyclic { orders } => orders
                .iter()
                .enumerate()
                .map(|(i, &m)| vec![Letter::gen(i); m as usize])
                .collect(),
            GroupFamily::FinitePresented { relators } => relators.clone(),
        }
    }

    /// Short hex digest identifying the spec.
    pub fn hash_hex(&self) -> String {
        let json = serde_json::to_string(self).expect("group spec serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Upper bound `|S_n| ≤ 2r(2r−1)^{n−1}` valid for every family.
    pub fn sphere_size_bound(&self, n: usize) -> f64 {
        if n == 0 {
            return 1.0;
        }
        let r = self.rank as f64;
        2.0 * r * (2.0 * r - 1.0).powi(n as i32 - 1)
    }

    /// Exact `|S_n|` for the closed-form families.
    pub fn exact_sphere_size(&self, n: usize) -> Option<f64> {
        if n == 0 {
            return Some(1.0);
        }
        let r = self.rank;
        match &self.family {
            GroupFamily::Free => Some(self.sphere_size_bound(n)),
            GroupFamily::FreeAbelian => {
                let mut total = 0.0;
                for k in 1..=r.min(n) {
                    total += 2f64.powi(k as i32) * binomial(r, k) * binomial(n - 1, k - 1);
                }
                Some(total)
            }
            GroupFamily::FreeProductCyclic { orders } => Some(cyclic_product_spheres(orders, n)[n]),
            GroupFamily::FinitePresented { .. } => None,
        }
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Sphere sizes of a free product of cyclic groups by counting reduced
/// syllable sequences; entry `n` is `|S_n|`.
fn cyclic_product_spheres(orders: &[u32], max_n: usize) -> Vec<f64> {
    // syllable length histogram per factor: #{k ∈ 1..m-1 : min(k, m-k) = l}
    let hist: Vec<Vec<f64>> = orders
        .iter()
        .map(|&m| {
            let mut h = vec![0.0; max_n + 1];
            for k in 1..m {
                let l = k.min(m - k) as usize;
                if l <= max_n {
                    h[l] += 1.0;
                }
            }
            h
        })
        .collect();
    let f = orders.len();
    // ending[i][n]: words of length n whose first syllable lies in factor i
    let mut ending = vec![vec![0.0; max_n + 1]; f];
    for n in 1..=max_n {
        for i in 0..f {
            let mut acc = 0.0;
            for l in 1..=n {
                let g = hist[i][l];
                if g == 0.0 {
                    continue;
                }
                let rest = if l == n {
                    1.0
                } else {
                    (0..f).filter(|&j| j != i).map(|j| ending[j][n - l]).sum()
                };
                acc += g * rest;
            }
            ending[i][n] = acc;
        }
    }
    let mut out = vec![1.0; max_n + 1];
    for (n, slot) in out.iter_mut().enumerate().skip(1) {
        *slot = (0..f).map(|i| ending[i][n]).sum();
    }
    out
}

/// Closed-form tail `Σ_{n>R} 2r(2r−1)^{n−1}(3r)^{−n}`; always `≤ 3·(2/3)^{R+1}`.
pub fn metric_tail_bound(rank: usize, radius: usize) -> f64 {
    let r = rank as f64;
    let q = (2.0 * r - 1.0) / (3.0 * r);
    (2.0 / 3.0) * q.powi(radius as i32) / (1.0 - q)
}

/// Upper bound on `Σ_{|γ|>R} (3r)^{−|γ|}`: the exact sum (to double precision)
/// when sphere sizes have a closed form, the geometric bound otherwise.
pub fn metric_tail(spec: &GroupSpec, radius: usize) -> f64 {
    if matches!(spec.family(), GroupFamily::FinitePresented { .. }) {
        return metric_tail_bound(spec.rank(), radius);
    }
    let base = 3.0 * spec.rank() as f64;
    let cyclic = match spec.family() {
        GroupFamily::FreeProductCyclic { orders } => Some(orders.clone()),
        _ => None,
    };
    let mut total = 0.0;
    let mut n = radius + 1;
    let mut cyclic_table: Vec<f64> = vec![];
    loop {
        let size = match &cyclic {
            Some(orders) => {
                if n >= cyclic_table.len() {
                    cyclic_table = cyclic_product_spheres(orders, 2 * n + 16);
                }
                cyclic_table[n]
            }
            None => spec.exact_sphere_size(n).expect("closed-form family"),
        };
        total += size * base.powi(-(n as i32));
        let remainder = metric_tail_bound(spec.rank(), n);
        if remainder <= 1e-18 * total || remainder < 1e-300 {
            break;
        }
        n += 1;
    }
    total
}

/// Budgets for ball enumeration and for the rewriting fallback.
#[derive(Clone, Debug)]
pub struct BallLimits {
    pub max_radius: usize,
    pub max_vertices: usize,
    pub max_rules: usize,
    pub max_passes: usize,
}

impl Default for BallLimits {
    fn default() -> Self {
        Self {
            max_radius: 12,
            max_vertices: 4_000_000,
            max_rules: 400,
            max_passes: 32,
        }
    }
}

/// Canonical representation of a group element.
pub type ElementKey = Vec<i32>;

#[derive(Clone, Debug)]
enum Multiplier {
    Free,
    Abelian,
    Cyclic(Vec<u32>),
    Rewriting(RewritingSystem),
}

/// A group spec together with its normal-form machinery.
#[derive(Clone, Debug)]
pub struct Group {
    spec: GroupSpec,
    limits: BallLimits,
    mul: Multiplier,
}

impl Group {
    pub fn new(spec: &GroupSpec) -> Result<Self> {
        Self::with_limits(spec, BallLimits::default())
    }

    pub fn with_limits(spec: &GroupSpec, limits: BallLimits) -> Result<Self> {
        let mul = match spec.family() {
            GroupFamily::Free => Multiplier::Free,
            GroupFamily::FreeAbelian => Multiplier::Abelian,
            GroupFamily::FreeProductCyclic { orders } => Multiplier::Cyclic(orders.clone()),
            GroupFamily::FinitePresented { relators } => {
                Multiplier::Rewriting(RewritingSystem::complete(spec.rank(), relators, &limits)?)
            }
        };
        Ok(Self {
            spec: spec.clone(),
            limits,
            mul,
        })
    }

    pub fn spec(&self) -> &GroupSpec {
        &self.spec
    }

    pub fn limits(&self) -> &BallLimits {
        &self.limits
    }

    pub fn identity(&self) -> ElementKey {
        match self.mul {
            Multiplier::Abelian => vec![0; self.spec.rank()],
            _ => vec![],
        }
    }

    /// Normal form of `letter · γ`.
    pub fn left_mul(&self, letter: Letter, key: &[i32]) -> ElementKey {
        match &self.mul {
            Multiplier::Free => {
                let code = letter.to_signed() as i32;
                if key.first() == Some(&-code) {
                    key[1..].to_vec()
                } else {
                    let mut out = Vec::with_capacity(key.len() + 1);
                    out.push(code);
                    out.extend_from_slice(key);
                    out
                }
            }
            Multiplier::Abelian => {
                let mut out = key.to_vec();
                out[letter.generator] += if letter.inverse { -1 } else { 1 };
                out
            }
            Multiplier::Cyclic(orders) => {
                let g = letter.generator as i32;
                let m = orders[letter.generator] as i32;
                let delta = if letter.inverse { m - 1 } else { 1 };
                if key.first() == Some(&g) {
                    let e = (key[1] + delta) % m;
                    if e == 0 {
                        key[2..].to_vec()
                    } else {
                        let mut out = key.to_vec();
                        out[1] = e;
                        out
                    }
                } else {
                    let mut out = Vec::with_capacity(key.len() + 2);
                    out.push(g);
                    out.push(delta);
                    out.extend_from_slice(key);
                    out
                }
            }
            Multiplier::Rewriting(rs) => {
                let mut w: Vec<u8> = Vec::with_capacity(key.len() + 1);
                w.push(letter.code() as u8);
                w.extend(key.iter().map(|&c| c as u8));
                rs.reduce(&w).into_iter().map(i32::from).collect()
            }
        }
    }

    /// Normal form of the product `w_1 ⋯ w_k`.
    pub fn element(&self, word: &[Letter]) -> ElementKey {
        word.iter()
            .rev()
            .fold(self.identity(), |acc, &l| self.left_mul(l, &acc))
    }

    /// BFS-enumerated ball `B(e, R)` with all induced labeled edges.
    pub fn ball(&self, radius: usize) -> Result<CayleyBall> {
        if radius > self.limits.max_radius {
            return Err(Error::RadiusTooLarge {
                radius,
                max: self.limits.max_radius,
            });
        }
        let rank = self.spec.rank();
        let mut keys = vec![self.identity()];
        let mut index: HashMap<ElementKey, usize> = HashMap::new();
        index.insert(keys[0].clone(), 0);
        let mut words: Vec<Word> = vec![vec![]];
        let mut depth = vec![0usize];
        let mut parent = vec![None];
        let mut layer_ends = vec![1usize];
        for d in 1..=radius {
            let start = if d == 1 { 0 } else { layer_ends[d - 2] };
            let end = layer_ends[d - 1];
            for v in start..end {
                for letter in letters(rank) {
                    let key = self.left_mul(letter, &keys[v]);
                    if index.contains_key(&key) {
                        continue;
                    }
                    if keys.len() >= self.limits.max_vertices {
                        return Err(Error::BallTooLarge {
                            radius,
                            budget: self.limits.max_vertices,
                        });
                    }
                    index.insert(key.clone(), keys.len());
                    let mut word = Vec::with_capacity(d);
                    word.push(letter);
                    word.extend_from_slice(&words[v]);
                    keys.push(key);
                    words.push(word);
                    depth.push(d);
                    parent.push(Some((v, letter)));
                }
            }
            layer_ends.push(keys.len());
        }
        let steps: Vec<Vec<Option<usize>>> = keys
            .iter()
            .map(|k| {
                letters(rank)
                    .map(|l| index.get(&self.left_mul(l, k)).copied())
                    .collect()
            })
            .collect();
        let mut edges = vec![];
        for (v, row) in steps.iter().enumerate() {
            for g in 0..rank {
                if let Some(w) = row[Letter::gen(g).code()] {
                    edges.push((v, g, w));
                }
            }
        }
        Ok(CayleyBall {
            radius,
            rank,
            keys,
            index,
            words,
            depth,
            parent,
            steps,
            edges,
            layer_ends,
        })
    }
}

/// Convenience wrapper: normal forms plus BFS in one call.
pub fn build_ball(spec: &GroupSpec, radius: usize) -> Result<CayleyBall> {
    Group::new(spec)?.ball(radius)
}

/// `|{γ : |γ| = n}|` for `n = 0..=R`, read off the enumerated ball.
pub fn sphere_sizes(spec: &GroupSpec, radius: usize) -> Result<Vec<usize>> {
    Ok(build_ball(spec, radius)?.sphere_sizes())
}

/// The closed radius-`R` ball around the identity.
#[derive(Clone, Debug)]
pub struct CayleyBall {
    radius: usize,
    rank: usize,
    keys: Vec<ElementKey>,
    index: HashMap<ElementKey, usize>,
    words: Vec<Word>,
    depth: Vec<usize>,
    parent: Vec<Option<(usize, Letter)>>,
    steps: Vec<Vec<Option<usize>>>,
    edges: Vec<(usize, usize, usize)>,
    layer_ends: Vec<usize>,
}

impl CayleyBall {
    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn depth(&self, v: usize) -> usize {
        self.depth[v]
    }

    pub fn depths(&self) -> &[usize] {
        &self.depth
    }

    /// A shortest word for vertex `v`, in product order.
    pub fn word(&self, v: usize) -> &[Letter] {
        &self.words[v]
    }

    pub fn key(&self, v: usize) -> &[i32] {
        &self.keys[v]
    }

    pub fn index_of(&self, key: &[i32]) -> Option<usize> {
        self.index.get(key).copied()
    }

    /// `(p, l)` with `v = l · p`; `None` for the root.
    pub fn parent(&self, v: usize) -> Option<(usize, Letter)> {
        self.parent[v]
    }

    /// Index of `letter · v` if it lies in the ball.
    pub fn step(&self, v: usize, letter: Letter) -> Option<usize> {
        self.steps[v][letter.code()]
    }

    /// Directed edges `(src, generator, dst)` of the induced subgraph.
    pub fn edges(&self) -> &[(usize, usize, usize)] {
        &self.edges
    }

    /// Number of vertices at depth `≤ k`.
    pub fn prefix_len(&self, k: usize) -> usize {
        self.layer_ends[k.min(self.radius)]
    }

    pub fn sphere_sizes(&self) -> Vec<usize> {
        let mut out = vec![0; self.radius + 1];
        for &d in &self.depth {
            out[d] += 1;
        }
        out
    }

    /// `Σ_{|γ|≤R} (3r)^{−|γ|}`, the largest possible depth-`R` distance.
    pub fn metric_weight_sum(&self) -> f64 {
        self.depth.iter().map(|&d| self.metric_weight(d)).sum()
    }

    pub fn metric_weight(&self, depth: usize) -> f64 {
        (3.0 * self.rank as f64).powi(-(depth as i32))
    }

    /// The sub-ball of radius `r ≤ R`; identical to enumerating it directly.
    pub fn truncate(&self, radius: usize) -> CayleyBall {
        let radius = radius.min(self.radius);
        let len = self.prefix_len(radius);
        let keys = self.keys[..len].to_vec();
        let index = keys
            .iter()
            .enumerate()
            .map(|(i, k)| (k.clone(), i))
            .collect();
        let steps = self.steps[..len]
            .iter()
            .map(|row| row.iter().map(|s| s.filter(|&w| w < len)).collect())
            .collect();
        let edges = self
            .edges
            .iter()
            .copied()
            .filter(|&(a, _, b)| a < len && b < len)
            .collect();
        CayleyBall {
            radius,
            rank: self.rank,
            keys,
            index,
            words: self.words[..len].to_vec(),
            depth: self.depth[..len].to_vec(),
            parent: self.parent[..len].to_vec(),
            steps,
            edges,
            layer_ends: self.layer_ends[..=radius].to_vec(),
        }
    }

    /// Indices of the root's neighbours, one per letter (with repetition).
    pub fn root_neighbors(&self) -> Vec<usize> {
        letters(self.rank)
            .map(|l| self.step(0, l).expect("radius ≥ 1"))
            .collect()
    }
}

/// Shortlex rewriting system over letter codes.
#[derive(Clone, Debug, Default)]
struct RewritingSystem {
    rules: Vec<(Vec<u8>, Vec<u8>)>,
}

fn shortlex_greater(a: &[u8], b: &[u8]) -> bool {
    a.len() > b.len() || (a.len() == b.len() && a > b)
}

impl RewritingSystem {
    fn reduce(&self, word: &[u8]) -> Vec<u8> {
        let mut out: Vec<u8> = Vec::with_capacity(word.len());
        let mut input: Vec<u8> = word.iter().rev().copied().collect();
        while let Some(c) = input.pop() {
            out.push(c);
            for (lhs, rhs) in &self.rules {
                if out.ends_with(lhs) {
                    out.truncate(out.len() - lhs.len());
                    input.extend(rhs.iter().rev());
                    break;
                }
            }
        }
        out
    }

    /// Adds `p = q` as an oriented rule if the two sides have distinct normal forms.
    fn add_equation(&mut self, p: &[u8], q: &[u8]) -> bool {
        let p = self.reduce(p);
        let q = self.reduce(q);
        if p == q {
            return false;
        }
        if shortlex_greater(&p, &q) {
            self.rules.push((p, q));
        } else {
            self.rules.push((q, p));
        }
        true
    }

    fn critical_pairs(a: &(Vec<u8>, Vec<u8>), b: &(Vec<u8>, Vec<u8>)) -> Vec<(Vec<u8>, Vec<u8>)> {
        let (l1, r1) = a;
        let (l2, r2) = b;
        let mut out = vec![];
        for k in 1..l1.len().min(l2.len()) {
            if l1[l1.len() - k..] == l2[..k] {
                let mut p = r1.clone();
                p.extend_from_slice(&l2[k..]);
                let mut q = l1[..l1.len() - k].to_vec();
                q.extend_from_slice(r2);
                out.push((p, q));
            }
        }
        if a != b && l2.len() <= l1.len() {
            for s in 0..=l1.len() - l2.len() {
                if l1[s..s + l2.len()] == l2[..] {
                    let mut q = l1[..s].to_vec();
                    q.extend_from_slice(r2);
                    q.extend_from_slice(&l1[s + l2.len()..]);
                    out.push((r1.clone(), q));
                }
            }
        }
        out
    }

    /// Drops rules whose left side is reducible by another rule and
    /// normalizes right sides. Returns whether anything changed.
    fn interreduce(&mut self) -> bool {
        let mut changed = false;
        let mut i = 0;
        while i < self.rules.len() {
            let (lhs, rhs) = self.rules[i].clone();
            let others = RewritingSystem {
                rules: self
                    .rules
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .map(|(_, r)| r.clone())
                    .collect(),
            };
            if others.reduce(&lhs) != lhs {
                self.rules.remove(i);
                self.add_equation(&lhs, &rhs);
                changed = true;
                i = 0;
                continue;
            }
            let reduced = others.reduce(&rhs);
            if reduced != rhs {
                self.rules[i].1 = reduced;
                changed = true;
            }
            i += 1;
        }
        changed
    }

    fn complete(rank: usize, relators: &[Word], limits: &BallLimits) -> Result<Self> {
        let mut rs = RewritingSystem::default();
        for g in 0..rank {
            let (a, b) = ((2 * g) as u8, (2 * g + 1) as u8);
            rs.rules.push((vec![a, b], vec![]));
            rs.rules.push((vec![b, a], vec![]));
        }
        for w in relators {
            let codes: Vec<u8> = w.iter().map(|l| l.code() as u8).collect();
            rs.add_equation(&codes, &[]);
        }
        rs.interreduce();
        for _ in 0..limits.max_passes {
            let mut changed = false;
            let mut i = 0;
            while i < rs.rules.len() {
                for j in 0..=i {
                    let (a, b) = (rs.rules[i].clone(), rs.rules[j].clone());
                    let mut pairs = Self::critical_pairs(&a, &b);
                    if i != j {
                        pairs.extend(Self::critical_pairs(&b, &a));
                    }
                    for (p, q) in pairs {
                        changed |= rs.add_equation(&p, &q);
                    }
                    if rs.rules.len() > limits.max_rules {
                        return Err(Error::UndecidableAtBudget(format!(
                            "Knuth–Bendix completion exceeded {} rules",
                            limits.max_rules
                        )));
                    }
                }
                i += 1;
            }
            changed |= rs.interreduce();
            if !changed {
                return Ok(rs);
            }
        }
        Err(Error::UndecidableAtBudget(format!(
            "Knuth–Bendix completion did not converge within {} passes",
            limits.max_passes
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    /// Shortest-word lengths by exhaustive enumeration of all words of length ≤ `max_len`.
    fn word_length_oracle(group: &Group, max_len: usize) -> BTreeMap<ElementKey, usize> {
        let rank = group.spec().rank();
        let mut best = BTreeMap::new();
        let mut frontier: Vec<Word> = vec![vec![]];
        for len in 0..=max_len {
            for w in &frontier {
                best.entry(group.element(w)).or_insert(len);
            }
            frontier = frontier
                .iter()
                .flat_map(|w| {
                    letters(rank).map(move |l| {
                        let mut v = w.clone();
                        v.push(l);
                        v
                    })
                })
                .collect();
        }
        best
    }

    #[test]
    fn integer_ball_radius_one() {
        let ball = build_ball(&GroupSpec::integers(), 1).unwrap();
        assert_eq!(ball.len(), 3);
        assert_eq!(ball.edges().len(), 2);
        assert_eq!(ball.word(1), &[Letter::gen(0)]);
        assert_eq!(ball.word(2), &[Letter::inv(0)]);
    }

    #[test]
    fn sphere_sizes_match_examples() {
        assert_eq!(sphere_sizes(&GroupSpec::integers(), 3).unwrap(), vec![1, 2, 2, 2]);
        assert_eq!(
            sphere_sizes(&GroupSpec::free(2).unwrap(), 2).unwrap(),
            vec![1, 4, 12]
        );
        assert_eq!(
            sphere_sizes(&GroupSpec::free_abelian(2).unwrap(), 2).unwrap(),
            vec![1, 4, 8]
        );
        assert_eq!(build_ball(&GroupSpec::free(2).unwrap(), 2).unwrap().len(), 17);
    }

    #[test]
    fn infinite_dihedral_ball_is_a_path() {
        let spec = GroupSpec::free_product_cyclic(vec![2, 2]).unwrap();
        let ball = build_ball(&spec, 2).unwrap();
        assert_eq!(ball.len(), 5);
        // every vertex has at most two distinct neighbours
        for v in 0..ball.len() {
            let mut nb: Vec<usize> = letters(2).filter_map(|l| ball.step(v, l)).collect();
            nb.sort();
            nb.dedup();
            assert!(nb.len() <= 2);
        }
        // order-2 generators give edges in both directions
        assert_eq!(ball.edges().len(), 8);
    }

    #[test]
    fn bfs_depth_equals_shortest_word_length() {
        let specs = vec![
            GroupSpec::free(2).unwrap(),
            GroupSpec::free_abelian(2).unwrap(),
            GroupSpec::free_abelian(3).unwrap(),
            GroupSpec::free_product_cyclic(vec![2, 3]).unwrap(),
            GroupSpec::free_product_cyclic(vec![5]).unwrap(),
        ];
        for spec in specs {
            let group = Group::new(&spec).unwrap();
            let oracle = word_length_oracle(&group, 4);
            let ball = group.ball(4).unwrap();
            let from_ball: BTreeMap<ElementKey, usize> =
                (0..ball.len()).map(|v| (ball.key(v).to_vec(), ball.depth(v))).collect();
            assert_eq!(oracle, from_ball, "{spec:?}");
        }
    }

    #[test]
    fn abelian_depth_is_l1_norm() {
        let group = Group::new(&GroupSpec::free_abelian(2).unwrap()).unwrap();
        let ball = group.ball(5).unwrap();
        for v in 0..ball.len() {
            let l1: i32 = ball.key(v).iter().map(|c| c.abs()).sum();
            assert_eq!(l1 as usize, ball.depth(v));
        }
        // every point with L1 norm ≤ 5 is present
        assert_eq!(ball.len(), 1 + 4 * (1 + 2 + 3 + 4 + 5));
    }

    #[test]
    fn closed_form_sphere_sizes_agree_with_bfs() {
        let specs = vec![
            GroupSpec::free(3).unwrap(),
            GroupSpec::free_abelian(3).unwrap(),
            GroupSpec::free_product_cyclic(vec![2, 3, 4]).unwrap(),
            GroupSpec::free_product_cyclic(vec![2, 2, 2]).unwrap(),
        ];
        for spec in specs {
            let bfs = sphere_sizes(&spec, 5).unwrap();
            for (n, &s) in bfs.iter().enumerate() {
                assert_eq!(spec.exact_sphere_size(n).unwrap(), s as f64, "{spec:?} n={n}");
                assert!(s as f64 <= spec.sphere_size_bound(n));
            }
        }
    }

    #[test]
    fn balls_are_nested_prefixes() {
        for spec in [
            GroupSpec::free(2).unwrap(),
            GroupSpec::free_product_cyclic(vec![2, 3]).unwrap(),
        ] {
            let big = build_ball(&spec, 4).unwrap();
            for r in 0..4 {
                let small = build_ball(&spec, r).unwrap();
                let cut = big.truncate(r);
                assert_eq!(small.len(), cut.len());
                for v in 0..small.len() {
                    assert_eq!(small.key(v), big.key(v));
                }
                assert_eq!(small.edges(), cut.edges());
                assert_eq!(small.sphere_sizes().iter().sum::<usize>(), small.len());
            }
        }
    }

    #[test]
    fn metric_tail_values() {
        let z = GroupSpec::integers();
        assert!((metric_tail(&z, 0) - 1.0).abs() < 1e-15);
        assert!((metric_tail(&z, 1) - 1.0 / 3.0).abs() < 1e-15);
        assert!((metric_tail(&z, 2) - 1.0 / 9.0).abs() < 1e-15);
        assert!(metric_tail(&z, 60) < 1e-25);
        let f2 = GroupSpec::free(2).unwrap();
        assert!(metric_tail_bound(2, 1) <= 4.0 / 3.0);
        for spec in [
            GroupSpec::free(2).unwrap(),
            GroupSpec::free_abelian(2).unwrap(),
            GroupSpec::free_product_cyclic(vec![2, 2, 2]).unwrap(),
        ] {
            for r in 0..6 {
                let t = metric_tail(&spec, r);
                assert!(t <= 3.0 * (2.0f64 / 3.0).powi(r as i32 + 1) + 1e-12);
                assert!(t <= metric_tail_bound(spec.rank(), r) + 1e-12);
            }
        }
        // exact tail plus ball weights is the full sum
        let ball = build_ball(&f2, 3).unwrap();
        let total = ball.metric_weight_sum() + metric_tail(&f2, 3);
        let r = 2.0f64;
        let q = (2.0 * r - 1.0) / (3.0 * r);
        let full = 1.0 + (2.0 / 3.0) / (1.0 - q);
        assert!((total - full).abs() < 1e-12);
    }

    #[test]
    fn presented_groups_match_closed_forms() {
        let z2 = GroupSpec::finite_presented(
            2,
            vec![vec![Letter::gen(0), Letter::gen(1), Letter::inv(0), Letter::inv(1)]],
        )
        .unwrap();
        assert_eq!(
            sphere_sizes(&z2, 5).unwrap(),
            sphere_sizes(&GroupSpec::free_abelian(2).unwrap(), 5).unwrap()
        );
        let dihedral = GroupSpec::finite_presented(
            2,
            vec![vec![Letter::gen(0); 2], vec![Letter::gen(1); 2]],
        )
        .unwrap();
        assert_eq!(sphere_sizes(&dihedral, 6).unwrap(), vec![1, 2, 2, 2, 2, 2, 2]);
        let free = GroupSpec::finite_presented(2, vec![]).unwrap();
        assert_eq!(sphere_sizes(&free, 3).unwrap(), vec![1, 4, 12, 36]);
        // S_3 = <a, b | a², b², (ab)³> has 6 elements
        let s3 = GroupSpec::finite_presented(
            2,
            vec![
                vec![Letter::gen(0); 2],
                vec![Letter::gen(1); 2],
                [Letter::gen(0), Letter::gen(1)].repeat(3),
            ],
        )
        .unwrap();
        let ball = build_ball(&s3, 6).unwrap();
        assert_eq!(ball.len(), 6);
        assert_eq!(ball.sphere_sizes(), vec![1, 2, 2, 1, 0, 0, 0]);
    }

    #[test]
    fn rewriting_budget_fails_loudly() {
        // Baumslag–Solitar BS(1,2) has no finite shortlex system
        let bs = GroupSpec::finite_presented(
            2,
            vec![vec![Letter::gen(1), Letter::gen(0), Letter::inv(1), Letter::inv(0), Letter::inv(0)]],
        )
        .unwrap();
        let limits = BallLimits {
            max_rules: 60,
            max_passes: 6,
            ..BallLimits::default()
        };
        match Group::with_limits(&bs, limits) {
            Err(Error::UndecidableAtBudget(_)) => {}
            other => panic!("expected budget failure, got {other:?}"),
        }
    }

    #[test]
    fn radius_limit_enforced() {
        assert!(matches!(
            build_ball(&GroupSpec::integers(), 13),
            Err(Error::RadiusTooLarge { .. })
        ));
    }

    #[test]
    fn spec_json_round_trip() {
        let json = r#"{"family":"free_product_cyclic","r":2,"orders":[2,3]}"#;
        let spec: GroupSpec = serde_json::from_str(json).unwrap();
        assert_eq!(spec, GroupSpec::free_product_cyclic(vec![2, 3]).unwrap());
        assert_eq!(serde_json::to_string(&spec).unwrap(), json);
        let bad = r#"{"family":"free","r":0}"#;
        assert!(serde_json::from_str::<GroupSpec>(bad).is_err());
        let rel = r#"{"family":"finite_presented","r":2,"relators":[[1,2,-1,-2]]}"#;
        let spec: GroupSpec = serde_json::from_str(rel).unwrap();
        assert_eq!(spec.relators().len(), 1);
    }
}
