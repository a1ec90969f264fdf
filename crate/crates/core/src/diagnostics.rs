//! Gibbs diagnostics at finite depth: the averaged detailed-balance failure
//! `Δ_a^R`, root-conditional checks, and non-Gibbs certificates.

use serde::Serialize;

use crate::cayley::{letters, CayleyBall};
use crate::dynamics::f0_log;
use crate::error::{Error, Result};
use crate::homgraph::HomGraph;
use crate::model::{gibbs_finite, SpinModel};
use crate::state::{DenseState, PatternDistribution};

/// Positions of the root's `2r` neighbours, in letter order.
fn root_neighbors(ball: &CayleyBall) -> Vec<usize> {
    letters(ball.rank())
        .map(|l| ball.step(0, l).expect("radius at least 1"))
        .collect()
}

fn check_depth(mu: &PatternDistribution, model: &SpinModel) -> Result<()> {
    if mu.radius() == 0 {
        return Err(Error::RadiusMismatch(0, 1));
    }
    if mu.alphabet() != model.alphabet() {
        return Err(Error::InvalidState("pattern alphabet differs from the model's".into()));
    }
    Ok(())
}

fn ensure_ball(mu: &PatternDistribution, ball: &CayleyBall) -> Result<()> {
    if ball.radius() < 1 || ball.len() < mu.pattern_len() || ball.rank() != mu.rank() {
        return Err(Error::RadiusMismatch(ball.radius(), mu.radius()));
    }
    Ok(())
}

/// One summand `μ{y}·F0(…)` of `Δ_a^R`.
fn term(mu: &PatternDistribution, model: &SpinModel, nbrs: &[usize], y: &[u8], w: f64, a: u8, buf: &mut Vec<u8>) -> f64 {
    if y[0] == a {
        return 0.0;
    }
    buf.clear();
    buf.extend_from_slice(y);
    buf[0] = a;
    let wa = mu.weight(buf);
    if wa == 0.0 {
        return -w;
    }
    let ctx: Vec<u8> = nbrs.iter().map(|&k| y[k]).collect();
    let l = model.phi(a, &ctx) - model.phi(y[0], &ctx) + wa.ln() - w.ln();
    w * f0_log(l)
}

/// `Δ_a^R(μ_R) = Σ_y μ_R{y}·F0(e^{Φ_e(y^{e→a}) − Φ_e(y)}·μ_R{y^{e→a}}/μ_R{y})`.
///
/// `ball` must have the radius of `mu` (or more).
pub fn delta_a_r(mu: &PatternDistribution, model: &SpinModel, a: u8, ball: &CayleyBall) -> Result<f64> {
    check_depth(mu, model)?;
    ensure_ball(mu, ball)?;
    let nbrs = root_neighbors(ball);
    let mut buf = vec![];
    Ok(mu.iter().map(|(y, w)| term(mu, model, &nbrs, y, w, a, &mut buf)).sum())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConditionalWitness {
    pub radius: usize,
    pub letter: u8,
    pub pattern: Vec<u8>,
    /// `|μ(root = a | rest) − c_e(y, a)|`.
    pub deficit: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Verdict {
    ConsistentToDepth { radius: usize },
    Violation { witness: ConditionalWitness },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GibbsReport {
    /// `deltas[R−1][a] = Δ_a^R` for `R = 1..=radius`.
    pub deltas: Vec<Vec<f64>>,
    /// Whether every pattern of the depth-`R` marginal has positive weight.
    pub full_support: Vec<bool>,
    pub worst: Option<ConditionalWitness>,
    pub verdict: Verdict,
}

/// Compares the root-conditional law of `μ` with `c_e` at every depth `1..=R`.
pub fn gibbs_conditional_check(
    mu: &PatternDistribution,
    model: &SpinModel,
    ball: &CayleyBall,
    tol: f64,
) -> Result<GibbsReport> {
    check_depth(mu, model)?;
    ensure_ball(mu, ball)?;
    let nbrs = root_neighbors(ball);
    let alphabet = model.alphabet();
    let mut deltas = vec![];
    let mut full_support = vec![];
    let mut worst: Option<ConditionalWitness> = None;
    for r in 1..=mu.radius() {
        let m = mu.restrict(r)?;
        deltas.push(
            (0..alphabet as u8)
                .map(|a| delta_a_r(&m, model, a, ball))
                .collect::<Result<Vec<f64>>>()?,
        );
        let possible = (alphabet as f64).powi(m.pattern_len() as i32);
        full_support.push(m.support_len() as f64 == possible);
        let mut y = vec![];
        for (pattern, _) in m.iter() {
            y.clone_from(pattern);
            let ctx: Vec<u8> = nbrs.iter().map(|&k| pattern[k]).collect();
            let kernel = model.kernel(&ctx);
            let fibre: Vec<f64> = (0..alphabet as u8)
                .map(|a| {
                    y[0] = a;
                    m.weight(&y)
                })
                .collect();
            let total: f64 = fibre.iter().sum();
            for a in 0..alphabet {
                let deficit = (fibre[a] / total - kernel[a]).abs();
                if worst.as_ref().is_none_or(|w| deficit > w.deficit) {
                    y[0] = a as u8;
                    worst = Some(ConditionalWitness {
                        radius: r,
                        letter: a as u8,
                        pattern: y.clone(),
                        deficit,
                    });
                }
            }
        }
    }
    let verdict = match &worst {
        Some(w) if w.deficit > tol => Verdict::Violation { witness: w.clone() },
        _ => Verdict::ConsistentToDepth { radius: mu.radius() },
    };
    Ok(GibbsReport {
        deltas,
        full_support,
        worst,
        verdict,
    })
}

/// Whether `ζ` agrees with `ξ_V ∝ e^{−U}` to within `tol` at every microstate.
pub fn is_gibbs_finite(zeta: &DenseState, model: &SpinModel, hom: &HomGraph, tol: f64) -> Result<bool> {
    if tol == f64::INFINITY {
        return Ok(true);
    }
    let (xi, _) = gibbs_finite(model, hom)?;
    if xi.len() != zeta.len() {
        return Err(Error::InvalidState("state does not match the action".into()));
    }
    Ok(xi.probs().iter().zip(zeta.probs()).all(|(a, b)| (a - b).abs() <= tol))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CertificateKind {
    /// `μ{y} > 0` but `μ{y^{e→a}} = 0`.
    Support,
    /// Full support, but a strictly negative `F0` term.
    NegativeTerm,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NonGibbsCertificate {
    pub kind: CertificateKind,
    pub pattern: Vec<u8>,
    pub letter: u8,
    /// `μ{y}·F0(…)`, which is `−μ{y}` for a support violation.
    pub term: f64,
    /// Least heat-bath probability over all neighbour contexts.
    pub kernel_lower_bound: f64,
    /// `s·|term|/2`: a guaranteed free-energy decrease rate per good vertex.
    pub deficit: f64,
}

/// Terms at or above this are treated as zero.
const TERM_TOL: f64 = -1e-12;

/// The most negative `F0` term of `Δ_a^R(μ_R)` over all `a`, if any is negative.
pub fn non_gibbs_certificate(
    mu: &PatternDistribution,
    model: &SpinModel,
    ball: &CayleyBall,
) -> Result<Option<NonGibbsCertificate>> {
    check_depth(mu, model)?;
    ensure_ball(mu, ball)?;
    let nbrs = root_neighbors(ball);
    let mut buf = vec![];
    let mut best: Option<(f64, Vec<u8>, u8, bool)> = None;
    for (y, w) in mu.iter() {
        for a in 0..model.alphabet() as u8 {
            let t = term(mu, model, &nbrs, y, w, a, &mut buf);
            if t < TERM_TOL && best.as_ref().is_none_or(|b| t < b.0) {
                buf.clear();
                buf.extend_from_slice(y);
                buf[0] = a;
                let support = mu.weight(&buf) == 0.0;
                best = Some((t, y.clone(), a, support));
            }
        }
    }
    let s = model.kernel_table(ball.rank())?.min_prob();
    Ok(best.map(|(t, pattern, letter, support)| NonGibbsCertificate {
        kind: if support {
            CertificateKind::Support
        } else {
            CertificateKind::NegativeTerm
        },
        pattern,
        letter,
        term: t,
        kernel_lower_bound: s,
        deficit: s * t.abs() / 2.0,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cayley::{build_ball, GroupSpec};
    use crate::dynamics::Glauber;
    use crate::homgraph::random_hom;
    use crate::state::{empirical_state, good_vertex_empirical};
    use crate::target::chain_gibbs_marginal;

    fn biased(ball: &CayleyBall) -> PatternDistribution {
        PatternDistribution::product(ball, &[0.2, 0.8]).unwrap()
    }

    #[test]
    fn delta_examples() {
        let spec = GroupSpec::integers();
        let ball = build_ball(&spec, 1).unwrap();
        let ising = SpinModel::ising(0.5, 0.0);
        // direct-formula values for i.i.d. P(+1) = 0.8
        let frozen = [-0.27717130752857894, -0.751313818773188];
        for a in 0..2 {
            let d = delta_a_r(&biased(&ball), &ising, a, &ball).unwrap();
            assert!((d - frozen[a as usize]).abs() < 1e-14, "{d}");
        }
        let free = SpinModel::free(2).unwrap();
        let uniform = PatternDistribution::product(&ball, &[0.5, 0.5]).unwrap();
        assert_eq!(delta_a_r(&uniform, &free, 0, &ball).unwrap(), 0.0);
        let ball0 = ball.truncate(0);
        let p0 = PatternDistribution::product(&ball0, &[0.5, 0.5]).unwrap();
        assert!(delta_a_r(&p0, &free, 0, &ball0).is_err());
    }

    #[test]
    fn chain_gibbs_marginals_pass() {
        let ball = build_ball(&GroupSpec::integers(), 3).unwrap();
        let model = SpinModel::ising(0.8, -0.4);
        let mu = chain_gibbs_marginal(&model, &ball).unwrap();
        let report = gibbs_conditional_check(&mu, &model, &ball, 1e-10).unwrap();
        assert_eq!(report.verdict, Verdict::ConsistentToDepth { radius: 3 });
        assert!(report.deltas.iter().flatten().all(|d| d.abs() < 1e-12));
        assert!(report.full_support.iter().all(|&f| f));
        assert_eq!(non_gibbs_certificate(&mu, &model, &ball).unwrap(), None);
    }

    #[test]
    fn point_mass_fails_on_support() {
        let ball = build_ball(&GroupSpec::integers(), 1).unwrap();
        let model = SpinModel::ising(0.5, 0.0);
        let mu = PatternDistribution::point_mass(&ball, 2, vec![1, 0, 1]).unwrap();
        let report = gibbs_conditional_check(&mu, &model, &ball, 1e-8).unwrap();
        assert!(matches!(report.verdict, Verdict::Violation { .. }));
        assert_eq!(report.full_support, vec![false]);
        let vacuous = gibbs_conditional_check(&mu, &model, &ball, f64::INFINITY).unwrap();
        assert_eq!(vacuous.verdict, Verdict::ConsistentToDepth { radius: 1 });
        let cert = non_gibbs_certificate(&mu, &model, &ball).unwrap().unwrap();
        assert_eq!(cert.kind, CertificateKind::Support);
        assert_eq!((cert.pattern, cert.letter, cert.term), (vec![1, 0, 1], 0, -1.0));
    }

    #[test]
    fn biased_product_certificate() {
        let ball = build_ball(&GroupSpec::integers(), 1).unwrap();
        let model = SpinModel::ising(0.5, 0.0);
        let cert = non_gibbs_certificate(&biased(&ball), &model, &ball).unwrap().unwrap();
        assert_eq!(cert.kind, CertificateKind::NegativeTerm);
        // s = e^{−1}/(e + e^{−1}) for two aligned neighbours
        let s = (-1f64).exp() / (1f64.exp() + (-1f64).exp());
        assert!((cert.kernel_lower_bound - s).abs() < 1e-15);
        assert!((cert.deficit - s * cert.term.abs() / 2.0).abs() < 1e-15);
        let uniform = PatternDistribution::product(&ball, &[0.5, 0.5]).unwrap();
        assert_eq!(non_gibbs_certificate(&uniform, &SpinModel::free(2).unwrap(), &ball).unwrap(), None);
    }

    #[test]
    fn finite_gibbs_checks() {
        let model = SpinModel::ising(0.5, 0.1);
        let hom = HomGraph::cycle(6);
        let (xi, _) = gibbs_finite(&model, &hom).unwrap();
        assert!(is_gibbs_finite(&xi, &model, &hom, 1e-14).unwrap());
        let uniform = DenseState::uniform(6, 2).unwrap();
        assert!(!is_gibbs_finite(&uniform, &model, &hom, 1e-6).unwrap());
        assert!(is_gibbs_finite(&uniform, &model, &hom, f64::INFINITY).unwrap());
        // a cycle is locally ℤ to radius 2, so its Gibbs state has vanishing Δ there
        let ball = build_ball(&GroupSpec::integers(), 2).unwrap();
        let mu = empirical_state(&hom, &xi, &ball).unwrap();
        for a in 0..2 {
            assert!(delta_a_r(&mu, &model, a, &ball).unwrap().abs() < 1e-13);
        }
    }

    #[test]
    fn free_energy_decrease_is_bounded_by_good_vertex_delta() {
        // d/dt[ζ(U) − H(ζ)] ≤ s·|V'|·Σ_a Δ_a^R(P̃_ζ)
        let spec = GroupSpec::free_product_cyclic(vec![3, 3]).unwrap();
        let model = SpinModel::ising(0.6, 0.2);
        let ball = build_ball(&spec, 1).unwrap();
        for seed in 0..6 {
            let hom = random_hom(&spec, 12, seed).unwrap();
            let good = hom.good_mask(&ball).iter().filter(|&&g| g).count();
            if good == 0 {
                continue;
            }
            let zeta = DenseState::product(&vec![vec![0.3, 0.7]; 12]).unwrap();
            let g = Glauber::dense(&model, &hom).unwrap();
            let d = g.free_energy_derivative(&zeta).unwrap();
            let tilde = good_vertex_empirical(&hom, &zeta, &ball).unwrap();
            let s = model.kernel_table(2).unwrap().min_prob();
            let sum: f64 = (0..2).map(|a| delta_a_r(&tilde, &model, a, &ball).unwrap()).sum();
            assert!(d <= s * good as f64 * sum + 1e-12, "seed {seed}: {d} vs {}", s * good as f64 * sum);
        }
    }
}
