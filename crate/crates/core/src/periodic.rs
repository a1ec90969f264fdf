//! Periodic measures as finite labeled Γ-sets, and the finite actions whose
//! empirical distributions reproduce them exactly.

use serde::{Deserialize, Serialize};

use crate::cayley::{CayleyBall, GroupSpec};
use crate::error::{Error, Result};
use crate::homgraph::HomGraph;
use crate::state::{pattern_counts, Microstate, PatternDistribution};

/// A transitive finite Γ-set with an `A`-labeling; point `v` encodes the
/// configuration `γ ↦ labels[σ^γ v]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "OrbitRepr", into = "OrbitRepr")]
pub struct Orbit {
    action: HomGraph,
    labels: Vec<u8>,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
enum OrbitRepr {
    Explicit { action: HomGraph, labels: Vec<u8> },
    Period { period: Vec<u8> },
}

impl TryFrom<OrbitRepr> for Orbit {
    type Error = Error;

    fn try_from(repr: OrbitRepr) -> Result<Self> {
        match repr {
            OrbitRepr::Explicit { action, labels } => Orbit::new(action, labels),
            OrbitRepr::Period { period } => Orbit::periodic(period),
        }
    }
}

impl From<Orbit> for OrbitRepr {
    fn from(o: Orbit) -> Self {
        OrbitRepr::Explicit {
            action: o.action,
            labels: o.labels,
        }
    }
}

impl Orbit {
    pub fn new(action: HomGraph, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != action.len() {
            return Err(Error::InvalidHom(format!(
                "{} labels for an orbit of size {}",
                labels.len(),
                action.len()
            )));
        }
        if !action.is_transitive() {
            return Err(Error::InvalidHom("orbit action is not transitive".into()));
        }
        Ok(Self { action, labels })
    }

    /// The `ℤ`-orbit of the configuration repeating `period` (`s` shifts by one).
    pub fn periodic(period: Vec<u8>) -> Result<Self> {
        if period.is_empty() {
            return Err(Error::InvalidHom("empty period".into()));
        }
        Self::new(HomGraph::cycle(period.len()), period)
    }

    pub fn action(&self) -> &HomGraph {
        &self.action
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// `μ = Σ_i a_i Unif(Γy_i)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeriodicMeasure {
    alphabet: usize,
    orbits: Vec<Orbit>,
    weights: Vec<f64>,
}

impl PeriodicMeasure {
    pub fn new(spec: &GroupSpec, alphabet: usize, orbits: Vec<Orbit>, weights: Vec<f64>) -> Result<Self> {
        if orbits.is_empty() || orbits.len() != weights.len() {
            return Err(Error::InvalidState("one weight per orbit, at least one orbit".into()));
        }
        if weights.iter().any(|&w| !(w >= 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidState("orbit weights must be a probability vector".into()));
        }
        for (i, o) in orbits.iter().enumerate() {
            if o.action.rank() != spec.rank() {
                return Err(Error::InvalidHom(format!("orbit {i} has the wrong rank")));
            }
            let check = o.action.validate(spec);
            if !check.ok {
                return Err(Error::InvalidHom(format!("orbit {i}: {}", check.message)));
            }
            if o.labels.iter().any(|&l| l as usize >= alphabet) {
                return Err(Error::InvalidState(format!("orbit {i} uses a letter outside the alphabet")));
            }
        }
        Ok(Self {
            alphabet,
            orbits,
            weights,
        })
    }

    pub fn alphabet(&self) -> usize {
        self.alphabet
    }

    pub fn orbits(&self) -> &[Orbit] {
        &self.orbits
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn orbit_sizes(&self) -> Vec<usize> {
        self.orbits.iter().map(Orbit::len).collect()
    }

    /// Depth-`R` marginal, computed orbit by orbit.
    pub fn marginal(&self, ball: &CayleyBall) -> Result<PatternDistribution> {
        let mut acc = vec![];
        for (o, &a) in self.orbits.iter().zip(&self.weights) {
            let size = o.len() as f64;
            for (p, c) in pattern_counts(&o.action, &o.labels, ball, None) {
                acc.push((p, a * c as f64 / size));
            }
        }
        PatternDistribution::new(ball, self.alphabet, acc)
    }
}

/// Disjoint union of `multiplicities[i]` copies of orbit `i`, labeled by `x(v) = v(e)`.
pub fn orbit_copy_construction(pm: &PeriodicMeasure, multiplicities: &[usize]) -> Result<(HomGraph, Microstate)> {
    if multiplicities.is_empty() || multiplicities.len() != pm.orbits.len() {
        return Err(Error::Invalid("one multiplicity per orbit required".into()));
    }
    if multiplicities.contains(&0) {
        return Err(Error::Invalid("multiplicities must be positive".into()));
    }
    let mut hom: Option<HomGraph> = None;
    let mut x = vec![];
    for (o, &m) in pm.orbits.iter().zip(multiplicities) {
        for _ in 0..m {
            hom = Some(match hom {
                None => o.action.clone(),
                Some(h) => h.disjoint_union(&o.action)?,
            });
            x.extend_from_slice(&o.labels);
        }
    }
    Ok((hom.expect("nonempty"), x))
}

/// Positive multiplicities with `Σ m_i s_i ≤ n_target` minimizing
/// `max_i |m_i s_i / Σ_j m_j s_j − a_i|`; ties go to the larger total.
pub fn multiplicity_select(weights: &[f64], sizes: &[usize], n_target: usize) -> Result<(Vec<usize>, f64)> {
    if weights.is_empty() || weights.len() != sizes.len() || sizes.contains(&0) {
        return Err(Error::Invalid("one positive orbit size per weight required".into()));
    }
    let minimum: usize = sizes.iter().sum();
    if n_target < minimum {
        return Err(Error::Invalid(format!(
            "target size {n_target} is below the {minimum} vertices needed for one copy of each orbit"
        )));
    }
    let k = weights.len();
    // floor/ceil choices per orbit; beyond this only nearest rounding is tried
    let exhaustive = k <= 12;
    let mut best: Option<(Vec<usize>, f64, usize)> = None;
    let mut consider = |m: Vec<usize>| {
        let total: usize = m.iter().zip(sizes).map(|(a, b)| a * b).sum();
        if total > n_target {
            return;
        }
        let err = m
            .iter()
            .zip(sizes)
            .zip(weights)
            .map(|((&mi, &si), &a)| ((mi * si) as f64 / total as f64 - a).abs())
            .fold(0.0, f64::max);
        let better = match &best {
            None => true,
            Some((_, e, t)) => err < *e || (err == *e && total > *t),
        };
        if better {
            best = Some((m, err, total));
        }
    };
    for n in minimum..=n_target {
        let ideal: Vec<f64> = weights.iter().zip(sizes).map(|(&a, &s)| a * n as f64 / s as f64).collect();
        if exhaustive {
            for mask in 0..1usize << k {
                let m = ideal
                    .iter()
                    .enumerate()
                    .map(|(i, &v)| {
                        let r = if mask >> i & 1 == 1 { v.ceil() } else { v.floor() };
                        (r as usize).max(1)
                    })
                    .collect();
                consider(m);
            }
        } else {
            consider(ideal.iter().map(|v| (v.round() as usize).max(1)).collect());
        }
    }
    let (m, err, _) = best.expect("n_target admits one copy of each orbit");
    Ok((m, err))
}
