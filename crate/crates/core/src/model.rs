//! Nearest-neighbour spin models, heat-bath kernels and finite-volume
//! Gibbs measures.

use serde::{Deserialize, Serialize};

use crate::cayley::{inverse_word, letters, Group, GroupSpec, Letter};
use crate::error::{Error, Result};
use crate::homgraph::HomGraph;
use crate::state::{dense_size, DenseState};

/// Alphabet size, symmetric pair potential `J` and field `h`, in natural units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelRepr", into = "ModelRepr")]
pub struct SpinModel {
    alphabet: usize,
    j: Vec<Vec<f64>>,
    h: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ModelRepr {
    Explicit {
        alphabet: usize,
        #[serde(rename = "J")]
        j: Vec<Vec<f64>>,
        h: Vec<f64>,
    },
    Preset {
        preset: String,
        beta: f64,
        #[serde(default)]
        field: f64,
    },
}

impl TryFrom<ModelRepr> for SpinModel {
    type Error = Error;

    fn try_from(repr: ModelRepr) -> Result<Self> {
        match repr {
            ModelRepr::Explicit { alphabet, j, h } => SpinModel::new(alphabet, j, h),
            ModelRepr::Preset {
                preset,
                beta,
                field,
            } => match preset.as_str() {
                "ising" => Ok(SpinModel::ising(beta, field)),
                other => Err(Error::InvalidModel(format!("unknown preset {other:?}"))),
            },
        }
    }
}

impl From<SpinModel> for ModelRepr {
    fn from(m: SpinModel) -> Self {
        ModelRepr::Explicit {
            alphabet: m.alphabet,
            j: m.j,
            h: m.h,
        }
    }
}

/// Ising spin of a letter: 0 ↦ −1, 1 ↦ +1.
pub fn ising_spin(letter: u8) -> f64 {
    if letter == 0 {
        -1.0
    } else {
        1.0
    }
}

impl SpinModel {
    pub fn new(alphabet: usize, j: Vec<Vec<f64>>, h: Vec<f64>) -> Result<Self> {
        if !(2..=255).contains(&alphabet) {
            return Err(Error::InvalidModel(format!("alphabet size {alphabet} not in 2..=255")));
        }
        if j.len() != alphabet || j.iter().any(|row| row.len() != alphabet) {
            return Err(Error::InvalidModel(format!("J must be {alphabet}×{alphabet}")));
        }
        if h.len() != alphabet {
            return Err(Error::InvalidModel(format!("h must have length {alphabet}")));
        }
        for a in 0..alphabet {
            if !h[a].is_finite() {
                return Err(Error::InvalidModel(format!("h({a}) is not finite")));
            }
            for b in 0..alphabet {
                if !j[a][b].is_finite() {
                    return Err(Error::InvalidModel(format!("J({a},{b}) is not finite")));
                }
                if j[a][b] != j[b][a] {
                    return Err(Error::InvalidModel(format!(
                        "J is not symmetric: J({a},{b}) = {} but J({b},{a}) = {}",
                        j[a][b], j[b][a]
                    )));
                }
            }
        }
        Ok(Self { alphabet, j, h })
    }

    /// `J ≡ 0`, `h ≡ 0`.
    pub fn free(alphabet: usize) -> Result<Self> {
        Self::new(alphabet, vec![vec![0.0; alphabet]; alphabet], vec![0.0; alphabet])
    }

    /// `J(a,b) = −β s(a)s(b)`, `h(a) = −B s(a)` with spins `s = (−1, +1)`.
    pub fn ising(beta: f64, field: f64) -> Self {
        let s = [-1.0, 1.0];
        let j = (0..2)
            .map(|a| (0..2).map(|b| -beta * s[a] * s[b]).collect())
            .collect();
        let h = s.iter().map(|&sa| -field * sa).collect();
        Self { alphabet: 2, j, h }
    }

    pub fn alphabet(&self) -> usize {
        self.alphabet
    }

    #[inline]
    pub fn j(&self, a: u8, b: u8) -> f64 {
        self.j[a as usize][b as usize]
    }

    #[inline]
    pub fn h(&self, a: u8) -> f64 {
        self.h[a as usize]
    }

    /// `Φ_v = h(x_v) + Σ_{s∈S} J(x_v, x(σ^s v))` from the `2r` neighbour letters.
    pub fn phi(&self, xv: u8, nbrs: &[u8]) -> f64 {
        self.h(xv) + nbrs.iter().map(|&b| self.j(xv, b)).sum::<f64>()
    }

    /// `c(a) ∝ exp{−Φ(a, nbrs)}`.
    pub fn kernel(&self, nbrs: &[u8]) -> Vec<f64> {
        let neg: Vec<f64> = (0..self.alphabet as u8).map(|a| -self.phi(a, nbrs)).collect();
        let lse = log_sum_exp(&neg);
        neg.iter().map(|&x| (x - lse).exp()).collect()
    }

    /// Kernel at site `v` of microstate `x`; ignores `x(v)`.
    pub fn site_kernel(&self, hom: &HomGraph, x: &[u8], v: usize) -> Vec<f64> {
        let nbrs: Vec<u8> = hom.neighbors(v).map(|w| x[w]).collect();
        self.kernel(&nbrs)
    }

    /// `U(x) = Σ_v h(x_v) + Σ_v Σ_i J(x_v, x(σ^{s_i} v))`.
    pub fn total_energy(&self, hom: &HomGraph, x: &[u8]) -> f64 {
        let mut u = 0.0;
        for (v, &xv) in x.iter().enumerate() {
            u += self.h(xv);
            for g in 0..hom.rank() {
                u += self.j(xv, x[hom.perm(g)[v]]);
            }
        }
        u
    }

    /// `(u_min, u_max)` bounding `U(x)/|V|` for rank-`r` actions.
    pub fn u_bounds(&self, rank: usize) -> (f64, f64) {
        let r = rank as f64;
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for a in 0..self.alphabet {
            let jmin = self.j[a].iter().copied().fold(f64::INFINITY, f64::min);
            let jmax = self.j[a].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            lo = lo.min(self.h[a] + r * jmin);
            hi = hi.max(self.h[a] + r * jmax);
        }
        (lo, hi)
    }

    /// Every heat-bath kernel, indexed by neighbour-context code
    /// `Σ_k nbrs[k]·|A|^k`.
    pub fn kernel_table(&self, rank: usize) -> Result<KernelTable> {
        KernelTable::new(self, rank)
    }
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

/// Heat-bath kernels for every neighbour context, with `log c` alongside.
#[derive(Clone, Debug)]
pub struct KernelTable {
    alphabet: usize,
    degree: usize,
    probs: Vec<f64>,
    log_probs: Vec<f64>,
    phis: Vec<f64>,
}

const KERNEL_TABLE_BUDGET: usize = 1 << 22;

impl KernelTable {
    pub fn new(model: &SpinModel, rank: usize) -> Result<Self> {
        let a = model.alphabet();
        let degree = 2 * rank;
        let contexts = (a as u128).pow(degree as u32);
        if contexts * a as u128 > KERNEL_TABLE_BUDGET as u128 {
            return Err(Error::DenseBudget {
                states: contexts,
                budget: KERNEL_TABLE_BUDGET,
            });
        }
        let contexts = contexts as usize;
        let mut probs = Vec::with_capacity(contexts * a);
        let mut log_probs = Vec::with_capacity(contexts * a);
        let mut phis = Vec::with_capacity(contexts * a);
        let mut nbrs = vec![0u8; degree];
        for code in 0..contexts {
            let mut c = code;
            for slot in nbrs.iter_mut() {
                *slot = (c % a) as u8;
                c /= a;
            }
            let neg: Vec<f64> = (0..a as u8).map(|l| -model.phi(l, &nbrs)).collect();
            let lse = log_sum_exp(&neg);
            for &x in &neg {
                phis.push(-x);
                log_probs.push(x - lse);
                probs.push((x - lse).exp());
            }
        }
        Ok(Self {
            alphabet: a,
            degree,
            probs,
            log_probs,
            phis,
        })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    /// Context code of the neighbours of `v`.
    #[inline]
    pub fn context(&self, hom: &HomGraph, x: &[u8], v: usize) -> usize {
        let mut code = 0;
        let mut mult = 1;
        for w in hom.neighbors(v) {
            code += x[w] as usize * mult;
            mult *= self.alphabet;
        }
        code
    }

    #[inline]
    pub fn probs(&self, context: usize) -> &[f64] {
        &self.probs[context * self.alphabet..(context + 1) * self.alphabet]
    }

    #[inline]
    pub fn log_probs(&self, context: usize) -> &[f64] {
        &self.log_probs[context * self.alphabet..(context + 1) * self.alphabet]
    }

    /// `Φ(a, context)` for every letter `a`.
    #[inline]
    pub fn phis(&self, context: usize) -> &[f64] {
        &self.phis[context * self.alphabet..(context + 1) * self.alphabet]
    }

    /// Smallest kernel probability over all contexts.
    pub fn min_prob(&self) -> f64 {
        self.probs.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// `U(x)` for every microstate index, decoding digits incrementally.
pub fn energies(model: &SpinModel, hom: &HomGraph) -> Result<Vec<f64>> {
    let n = hom.len();
    let size = dense_size(model.alphabet(), n)?;
    let a = model.alphabet();
    let mut x = vec![0u8; n];
    let mut out = Vec::with_capacity(size);
    for _ in 0..size {
        out.push(model.total_energy(hom, &x));
        for digit in x.iter_mut() {
            *digit += 1;
            if (*digit as usize) < a {
                break;
            }
            *digit = 0;
        }
    }
    Ok(out)
}

/// `ξ_V ∝ exp{−U}` and `log Z_V`, by enumeration.
pub fn gibbs_finite(model: &SpinModel, hom: &HomGraph) -> Result<(DenseState, f64)> {
    let u = energies(model, hom)?;
    let neg: Vec<f64> = u.iter().map(|&x| -x).collect();
    let log_z = log_sum_exp(&neg);
    let probs = neg.iter().map(|&x| (x - log_z).exp()).collect();
    Ok((DenseState::from_probs(hom.len(), model.alphabet(), probs)?, log_z))
}

/// `log Z` of the `n`-cycle from `log tr Tⁿ`, `T(a,b) = exp{−h(a) − J(a,b)}`.
pub fn log_partition_cycle(model: &SpinModel, n: usize) -> f64 {
    let a = model.alphabet();
    let t: Vec<Vec<f64>> = (0..a as u8)
        .map(|x| (0..a as u8).map(|y| (-model.h(x) - model.j(x, y)).exp()).collect())
        .collect();
    let (power, log_scale) = scaled_power(&t, n);
    let trace: f64 = (0..a).map(|i| power[i][i]).sum();
    trace.ln() + log_scale
}

/// `M^k = e^{scale}·P` with `P` kept at unit max entry.
fn scaled_power(m: &[Vec<f64>], mut k: usize) -> (Vec<Vec<f64>>, f64) {
    let a = m.len();
    let mut result: Vec<Vec<f64>> = (0..a)
        .map(|i| (0..a).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let mut result_scale = 0.0;
    let mut base = m.to_vec();
    let mut base_scale = normalize_max(&mut base);
    while k > 0 {
        if k & 1 == 1 {
            result = mat_mul(&result, &base);
            result_scale += base_scale + normalize_max(&mut result);
        }
        k >>= 1;
        if k > 0 {
            base = mat_mul(&base, &base);
            base_scale = 2.0 * base_scale + normalize_max(&mut base);
        }
    }
    (result, result_scale)
}

fn normalize_max(m: &mut [Vec<f64>]) -> f64 {
    let max = m.iter().flatten().copied().fold(0.0, f64::max);
    for x in m.iter_mut().flatten() {
        *x /= max;
    }
    max.ln()
}

fn mat_mul(x: &[Vec<f64>], y: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let a = x.len();
    (0..a)
        .map(|i| (0..a).map(|j| (0..a).map(|k| x[i][k] * y[k][j]).sum()).collect())
        .collect()
}

fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Distinct neighbours of the identity, each with the letter positions in
/// `s_1, s_1⁻¹, …` that reach it.
fn neighbor_classes(spec: &GroupSpec) -> Result<(Group, Vec<(Vec<i32>, Vec<usize>)>)> {
    let group = Group::new(spec)?;
    let mut classes: Vec<(Vec<i32>, Vec<usize>)> = vec![];
    for l in letters(spec.rank()) {
        let key = group.left_mul(l, &group.identity());
        match classes.iter_mut().find(|(k, _)| *k == key) {
            Some((_, pos)) => pos.push(l.code()),
            None => classes.push((key, vec![l.code()])),
        }
    }
    Ok((group, classes))
}

/// `c_e(γ)`: worst total-variation change of the root kernel when the letter
/// at `γ` alone is changed.
fn root_dependence(model: &SpinModel, classes: &[(Vec<i32>, Vec<usize>)], target: usize) -> f64 {
    let a = model.alphabet();
    let k = classes.len();
    let degree: usize = classes.iter().map(|(_, p)| p.len()).sum();
    let mut assignment = vec![0usize; k];
    let mut nbrs = vec![0u8; degree];
    let mut worst: f64 = 0.0;
    let fill = |assignment: &[usize], nbrs: &mut [u8]| {
        for (c, (_, pos)) in classes.iter().enumerate() {
            for &p in pos {
                nbrs[p] = assignment[c] as u8;
            }
        }
    };
    loop {
        fill(&assignment, &mut nbrs);
        let base = model.kernel(&nbrs);
        let own = assignment[target];
        for b in 0..a {
            if b == own {
                continue;
            }
            let mut other = assignment.clone();
            other[target] = b;
            let mut nbrs2 = nbrs.clone();
            fill(&other, &mut nbrs2);
            worst = worst.max(total_variation(&base, &model.kernel(&nbrs2)));
        }
        // next assignment
        let mut i = 0;
        loop {
            if i == k {
                return worst;
            }
            assignment[i] += 1;
            if assignment[i] < a {
                break;
            }
            assignment[i] = 0;
            i += 1;
        }
    }
}

/// `c_u(v)` for sites given as words: the largest total-variation change of
/// `c_u(η,·)` when `η` changes at `v` only. Uses `c_u(v) = c_e(v·u⁻¹)`.
pub fn dependence_coefficient(
    model: &SpinModel,
    spec: &GroupSpec,
    u: &[Letter],
    v: &[Letter],
) -> Result<f64> {
    let (group, classes) = neighbor_classes(spec)?;
    let mut word = v.to_vec();
    word.extend(inverse_word(u));
    let key = group.element(&word);
    Ok(match classes.iter().position(|(k, _)| *k == key) {
        Some(target) => root_dependence(model, &classes, target),
        None => 0.0,
    })
}

/// `M = Σ_h c_h(e)·(3r)^{d(h,e)}` over the distinct neighbours `h` of `e`.
pub fn m_constant(model: &SpinModel, spec: &GroupSpec) -> Result<f64> {
    let (group, classes) = neighbor_classes(spec)?;
    let r = spec.rank() as f64;
    let mut m = 0.0;
    for (_, positions) in &classes {
        // c_h(e) = c_e(h⁻¹)
        let inverse = Letter::from_code(positions[0]).inverse_letter();
        let inv_key = group.left_mul(inverse, &group.identity());
        let target = classes
            .iter()
            .position(|(k, _)| *k == inv_key)
            .expect("inverse of a neighbour is a neighbour");
        m += root_dependence(model, &classes, target) * 3.0 * r;
    }
    assert!(m <= 12.0 * r * r + 1e-12, "M = {m} exceeds 12r²");
    Ok(m)
}
