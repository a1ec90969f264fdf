//! Shift-invariant target measures, represented by their finite-depth marginals.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::cayley::{CayleyBall, GroupSpec};
use crate::error::{Error, Result};
use crate::model::SpinModel;
use crate::periodic::PeriodicMeasure;
use crate::state::PatternDistribution;

#[derive(Clone, Debug, PartialEq)]
pub enum TargetMeasure {
    /// Given marginals; must be at least as deep as requested.
    Explicit(PatternDistribution),
    /// I.i.d. letters.
    Product(Vec<f64>),
    /// The unique Gibbs measure of a model on `ℤ`.
    ChainGibbs(SpinModel),
    Periodic(PeriodicMeasure),
}

impl TargetMeasure {
    /// The marginal on `ball`.
    pub fn marginal(&self, spec: &GroupSpec, ball: &CayleyBall) -> Result<PatternDistribution> {
        if ball.rank() != spec.rank() {
            return Err(Error::InvalidGroup("ball and group spec disagree on rank".into()));
        }
        match self {
            TargetMeasure::Explicit(p) => {
                if p.rank() != spec.rank() {
                    return Err(Error::InvalidState("explicit marginals over a different rank".into()));
                }
                p.restrict(ball.radius())
            }
            TargetMeasure::Product(m) => PatternDistribution::product(ball, m),
            TargetMeasure::ChainGibbs(model) => chain_gibbs_marginal(model, ball),
            TargetMeasure::Periodic(pm) => pm.marginal(ball),
        }
    }

    pub fn alphabet(&self) -> usize {
        match self {
            TargetMeasure::Explicit(p) => p.alphabet(),
            TargetMeasure::Product(m) => m.len(),
            TargetMeasure::ChainGibbs(model) => model.alphabet(),
            TargetMeasure::Periodic(pm) => pm.alphabet(),
        }
    }
}

/// Depth-`R` marginal of the Gibbs measure on `ℤ`, from the symmetric
/// transfer matrix `K(a,b) = exp(−h(a)/2 − J(a,b) − h(b)/2)` and its Perron vector `ψ`:
/// `μ{x_{−R..R}} = ψ(x_{−R}) Π K(x_i, x_{i+1}) ψ(x_R) / λ^{2R}`.
pub fn chain_gibbs_marginal(model: &SpinModel, ball: &CayleyBall) -> Result<PatternDistribution> {
    let r = ball.radius();
    if ball.rank() != 1 || ball.len() != 2 * r + 1 {
        return Err(Error::InvalidGroup("chain Gibbs targets live on the integers".into()));
    }
    let a = model.alphabet();
    let k = DMatrix::from_fn(a, a, |i, j| {
        (-model.h(i as u8) / 2.0 - model.j(i as u8, j as u8) - model.h(j as u8) / 2.0).exp()
    });
    let eig = SymmetricEigen::new(k.clone());
    let top = eig.eigenvalues.imax();
    let lambda = eig.eigenvalues[top];
    let mut psi: Vec<f64> = eig.eigenvectors.column(top).iter().copied().collect();
    if psi.iter().sum::<f64>() < 0.0 {
        psi.iter_mut().for_each(|p| *p = -*p);
    }
    // ball position of each vertex on the line
    let pos: Vec<usize> = (0..ball.len())
        .map(|v| {
            let s: i64 = ball.word(v).iter().map(|l| if l.inverse { -1 } else { 1 }).sum();
            (s + r as i64) as usize
        })
        .collect();
    let len = 2 * r + 1;
    let total = a.pow(len as u32);
    let mut out = Vec::with_capacity(total);
    let mut path = vec![0u8; len];
    for code in 0..total {
        let mut rest = code;
        for p in path.iter_mut() {
            *p = (rest % a) as u8;
            rest /= a;
        }
        let mut w = psi[path[0] as usize] * psi[path[len - 1] as usize];
        for i in 0..len - 1 {
            w *= k[(path[i] as usize, path[i + 1] as usize)] / lambda;
        }
        out.push((pos.iter().map(|&p| path[p]).collect::<Vec<u8>>(), w));
    }
    let total_weight: f64 = out.iter().map(|(_, w)| w).sum();
    PatternDistribution::new(ball, a, out.into_iter().map(|(p, w)| (p, w / total_weight)))
}
