//! Glauber dynamics on a finite action: the exact master equation on dense
//! states, exact event-driven sampling, and the free energy along the flow.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cayley::{CayleyBall, GroupSpec};
use crate::error::{Error, Result};
use crate::homgraph::{sofic_delta, HomGraph};
use crate::model::{energies, m_constant, KernelTable, SpinModel};
use crate::state::{
    dbar_truncated, dense_size, empirical_product, empirical_state, DbarInterval, DenseState,
    Microstate, PatternDistribution,
};

/// One resampling: at `time`, site `site` took letter `new_letter` (possibly unchanged).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryEvent {
    pub time: f64,
    pub site: usize,
    pub new_letter: u8,
}

/// `F0(s) = s − s log s − 1`, with `F0(0) = −1`.
pub fn f0(s: f64) -> Result<f64> {
    if s < 0.0 || s.is_nan() {
        return Err(Error::NegativeArgument(s));
    }
    if s == 0.0 {
        return Ok(-1.0);
    }
    Ok(s - s * s.ln() - 1.0)
}

/// `F0(e^L)`; the power series `−Σ_{k≥2} (k−1)L^k/k!` avoids cancellation near `L = 0`.
pub fn f0_log(l: f64) -> f64 {
    if l.abs() < 0.1 {
        let mut term = l; // L^k / k! at k = 1
        let mut sum = 0.0;
        for k in 2..20 {
            term *= l / k as f64;
            sum -= (k - 1) as f64 * term;
        }
        sum
    } else {
        l.exp() * (1.0 - l) - 1.0
    }
}

/// A model on a finite action with everything the dense computations reuse.
#[derive(Clone, Debug)]
pub struct Glauber<'a> {
    model: &'a SpinModel,
    hom: &'a HomGraph,
    table: KernelTable,
    powers: Vec<usize>,
    has_loop: Vec<bool>,
    size: usize,
    energies: Option<Vec<f64>>,
}

impl<'a> Glauber<'a> {
    /// For sampling only; no dense budget applies.
    pub fn sampler(model: &'a SpinModel, hom: &'a HomGraph) -> Result<Self> {
        let has_loop = (0..hom.len()).map(|v| hom.neighbors(v).any(|w| w == v)).collect();
        Ok(Self {
            model,
            hom,
            table: model.kernel_table(hom.rank())?,
            powers: vec![],
            has_loop,
            size: 0,
            energies: None,
        })
    }

    /// For dense computations over all of `A^V`.
    pub fn dense(model: &'a SpinModel, hom: &'a HomGraph) -> Result<Self> {
        let size = dense_size(model.alphabet(), hom.len())?;
        let mut g = Self::sampler(model, hom)?;
        g.size = size;
        g.powers = (0..hom.len()).map(|v| model.alphabet().pow(v as u32)).collect();
        g.energies = Some(energies(model, hom)?);
        Ok(g)
    }

    pub fn model(&self) -> &SpinModel {
        self.model
    }

    pub fn hom(&self) -> &HomGraph {
        self.hom
    }

    pub fn table(&self) -> &KernelTable {
        &self.table
    }

    fn energies(&self) -> &[f64] {
        self.energies.as_deref().expect("dense system")
    }

    fn check_state(&self, zeta: &DenseState) -> Result<()> {
        if self.size == 0 {
            return Err(Error::Invalid("system was built for sampling only".into()));
        }
        if zeta.n() != self.hom.len() || zeta.alphabet() != self.model.alphabet() {
            return Err(Error::InvalidState(format!(
                "state over {} sites and {} letters does not match the system",
                zeta.n(),
                zeta.alphabet()
            )));
        }
        Ok(())
    }

    /// Decodes `index` into `x` and returns each site's context code.
    fn contexts(&self, index: usize, x: &mut [u8], ctx: &mut [usize]) {
        let a = self.model.alphabet();
        let mut rest = index;
        for xv in x.iter_mut() {
            *xv = (rest % a) as u8;
            rest /= a;
        }
        for (v, c) in ctx.iter_mut().enumerate() {
            *c = self.table.context(self.hom, x, v);
        }
    }

    /// Context of `v` in `x^{w→a}` given the context of `v` in `x`.
    fn context_after_flip(&self, x: &mut [u8], v: usize, a: u8, ctx_v: usize) -> usize {
        if !self.has_loop[v] {
            return ctx_v;
        }
        let old = x[v];
        x[v] = a;
        let c = self.table.context(self.hom, x, v);
        x[v] = old;
        c
    }

    fn rhs_into(&self, zeta: &[f64], out: &mut [f64]) {
        let n = self.hom.len();
        let a = self.model.alphabet();
        out.par_iter_mut()
            .enumerate()
            .with_min_len(256)
            .for_each_init(
                || (vec![0u8; n], vec![0usize; n]),
                |(x, ctx), (idx, slot)| {
                    self.contexts(idx, x, ctx);
                    let mut d = 0.0;
                    for v in 0..n {
                        let xv = x[v];
                        let probs = self.table.probs(ctx[v]);
                        d -= zeta[idx] * (1.0 - probs[xv as usize]);
                        for b in 0..a as u8 {
                            if b == xv {
                                continue;
                            }
                            let y = idx + b as usize * self.powers[v] - xv as usize * self.powers[v];
                            let cy = self.context_after_flip(x, v, b, ctx[v]);
                            d += zeta[y] * self.table.probs(cy)[xv as usize];
                        }
                    }
                    *slot = d;
                },
            );
    }

    /// `dζ{x}/dt = Σ_{v,a} [ζ{x^{v→a}} c_v(x^{v→a}, x(v)) − ζ{x} c_v(x,a)]`.
    pub fn master_rhs(&self, zeta: &DenseState) -> Result<Vec<f64>> {
        self.check_state(zeta)?;
        let mut out = vec![0.0; self.size];
        self.rhs_into(zeta.probs(), &mut out);
        Ok(out)
    }

    /// RK4 with step `≤ dt`, renormalized after each step.
    pub fn evolve_exact(&self, zeta0: &DenseState, t: f64, dt: f64) -> Result<DenseState> {
        Ok(self.evolve_path(zeta0, &[t], dt)?.pop().expect("one time"))
    }

    /// States at each of the nondecreasing `times`, integrating from 0.
    pub fn evolve_path(&self, zeta0: &DenseState, times: &[f64], dt: f64) -> Result<Vec<DenseState>> {
        self.check_state(zeta0)?;
        if !(dt > 0.0) {
            return Err(Error::Invalid(format!("time step {dt} must be positive")));
        }
        if times.iter().any(|&t| !(t >= 0.0)) || times.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Invalid("times must be nonnegative and nondecreasing".into()));
        }
        let size = self.size;
        let mut z = zeta0.probs().to_vec();
        let mut now = 0.0;
        let (mut k1, mut k2, mut k3, mut k4, mut tmp) = (
            vec![0.0; size],
            vec![0.0; size],
            vec![0.0; size],
            vec![0.0; size],
            vec![0.0; size],
        );
        let mut out = Vec::with_capacity(times.len());
        for &target in times {
            let span = target - now;
            let steps = (span / dt).ceil() as usize;
            let h = if steps > 0 { span / steps as f64 } else { 0.0 };
            for _ in 0..steps {
                self.rhs_into(&z, &mut k1);
                axpy(&z, h / 2.0, &k1, &mut tmp);
                self.rhs_into(&tmp, &mut k2);
                axpy(&z, h / 2.0, &k2, &mut tmp);
                self.rhs_into(&tmp, &mut k3);
                axpy(&z, h, &k3, &mut tmp);
                self.rhs_into(&tmp, &mut k4);
                for i in 0..size {
                    z[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                }
                now += h;
                normalize(&mut z, now)?;
            }
            now = target;
            out.push(DenseState::from_probs(self.hom.len(), self.model.alphabet(), z.clone())?);
        }
        Ok(out)
    }

    /// Independent integrator: `ζ_t = Σ_k Pois(k; Λt)·ζ_0 Pᵏ` with `P = I + Q/Λ`, `Λ = |V|`.
    pub fn evolve_uniformized(&self, zeta0: &DenseState, t: f64) -> Result<DenseState> {
        self.check_state(zeta0)?;
        let lambda = self.hom.len() as f64;
        let mean = lambda * t;
        let k_max = (mean + 12.0 * mean.sqrt() + 40.0).ceil() as usize;
        let mut term = zeta0.probs().to_vec();
        let mut acc = vec![0.0; self.size];
        let mut rhs = vec![0.0; self.size];
        let mut log_weight = -mean; // log Pois(0)
        for k in 0..=k_max {
            let w = log_weight.exp();
            for (a, &p) in acc.iter_mut().zip(&term) {
                *a += w * p;
            }
            self.rhs_into(&term, &mut rhs);
            for (p, &r) in term.iter_mut().zip(&rhs) {
                *p += r / lambda;
            }
            log_weight += mean.ln() - ((k + 1) as f64).ln();
        }
        normalize(&mut acc, t)?;
        DenseState::from_probs(self.hom.len(), self.model.alphabet(), acc)
    }

    /// `ζ(U) + Σ ζ log ζ`.
    pub fn free_energy(&self, zeta: &DenseState) -> Result<f64> {
        self.check_state(zeta)?;
        Ok(zeta
            .probs()
            .iter()
            .zip(self.energies())
            .map(|(&p, &u)| if p > 0.0 { p * (u + p.ln()) } else { 0.0 })
            .sum())
    }

    /// `Σ_{x,v,a} F0(e^{−Φ_v(x)}/e^{−Φ_v(x^{v→a})} · ζ{x^{v→a}}/ζ{x}) ζ{x} c_v(x,a)`.
    ///
    /// Defined only for full-support `ζ`.
    pub fn free_energy_derivative(&self, zeta: &DenseState) -> Result<f64> {
        self.check_state(zeta)?;
        let z = zeta.probs();
        if let Some(index) = z.iter().position(|&p| p <= 0.0) {
            return Err(Error::NotFullSupport { index });
        }
        let n = self.hom.len();
        let a = self.model.alphabet();
        let total = (0..self.size)
            .into_par_iter()
            .with_min_len(256)
            .map_init(
                || (vec![0u8; n], vec![0usize; n]),
                |(x, ctx), idx| {
                    self.contexts(idx, x, ctx);
                    let mut s = 0.0;
                    let log_zx = z[idx].ln();
                    for v in 0..n {
                        let xv = x[v];
                        let probs = self.table.probs(ctx[v]);
                        let phi_x = self.table.phis(ctx[v])[xv as usize];
                        for b in 0..a as u8 {
                            if b == xv {
                                continue;
                            }
                            let y = idx + b as usize * self.powers[v] - xv as usize * self.powers[v];
                            let cy = self.context_after_flip(x, v, b, ctx[v]);
                            let phi_y = self.table.phis(cy)[b as usize];
                            let l = phi_y - phi_x + z[y].ln() - log_zx;
                            s += z[idx] * probs[b as usize] * f0_log(l);
                        }
                    }
                    s
                },
            )
            .collect::<Vec<f64>>();
        Ok(total.iter().sum())
    }

    /// Kernel-driven jump process from `x0` up to time `t`; sites ring at total rate `|V|`.
    pub fn sample_trajectory(&self, x0: &[u8], t: f64, seed: u64) -> (Microstate, Vec<TrajectoryEvent>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = x0.to_vec();
        let mut events = vec![];
        self.run(&mut x, t, &mut rng, |e| events.push(e));
        (x, events)
    }

    /// Advances `x` in place, reporting every ring.
    pub fn run(&self, x: &mut [u8], t: f64, rng: &mut ChaCha8Rng, mut on_event: impl FnMut(TrajectoryEvent)) {
        let n = self.hom.len();
        let rate = n as f64;
        let mut time = 0.0;
        loop {
            let u: f64 = rng.gen();
            time += -(1.0 - u).ln() / rate;
            if time > t {
                return;
            }
            let v = rng.gen_range(0..n);
            let probs = self.table.probs(self.table.context(self.hom, x, v));
            let r: f64 = rng.gen();
            let mut acc = 0.0;
            let mut letter = probs.len() - 1;
            for (b, &p) in probs.iter().enumerate() {
                acc += p;
                if r < acc {
                    letter = b;
                    break;
                }
            }
            x[v] = letter as u8;
            on_event(TrajectoryEvent {
                time,
                site: v,
                new_letter: letter as u8,
            });
        }
    }
}

fn axpy(base: &[f64], h: f64, k: &[f64], out: &mut [f64]) {
    for ((o, &b), &d) in out.iter_mut().zip(base).zip(k) {
        *o = b + h * d;
    }
}

fn normalize(z: &mut [f64], time: f64) -> Result<()> {
    let min = z.iter().copied().fold(f64::INFINITY, f64::min);
    if min < -1e-10 {
        return Err(Error::StepTooLarge { value: min, time });
    }
    z.iter_mut().for_each(|p| *p = p.max(0.0));
    let total: f64 = z.iter().sum();
    z.iter_mut().for_each(|p| *p /= total);
    Ok(())
}

/// Outcome of the two-approximation stability inequality
/// `d̄(P^a_{ζ_t}, P^b_{ζ'_t}) ≤ [(Δ^a + Δ^b)t + d̄(P^a_{ζ_0}, P^b_{ζ'_0})]·e^{Mt}`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StabilityReport {
    pub t: f64,
    pub radius: usize,
    pub delta_a: f64,
    pub delta_b: f64,
    pub m: f64,
    pub initial: DbarInterval,
    pub at_t: DbarInterval,
    /// Added to `at_t.upper` to cover sampling error; zero for exact states.
    pub sampling_margin: f64,
    pub measured_upper: f64,
    pub bound: f64,
    pub pass: bool,
}

/// Radius cap for `Δ` in stability reports.
const DELTA_RADIUS: usize = 40;

#[allow(clippy::too_many_arguments)]
fn stability_report(
    spec: &GroupSpec,
    model: &SpinModel,
    hom_a: &HomGraph,
    hom_b: &HomGraph,
    initial: DbarInterval,
    at_t: DbarInterval,
    sampling_margin: f64,
    t: f64,
    radius: usize,
) -> Result<StabilityReport> {
    let delta_a = sofic_delta(hom_a, spec, DELTA_RADIUS)?.value;
    let delta_b = sofic_delta(hom_b, spec, DELTA_RADIUS)?.value;
    let m = m_constant(model, spec)?;
    let bound = ((delta_a + delta_b) * t + initial.upper) * (m * t).exp();
    let measured_upper = at_t.upper + sampling_margin;
    Ok(StabilityReport {
        t,
        radius,
        delta_a,
        delta_b,
        m,
        initial,
        at_t,
        sampling_margin,
        measured_upper,
        bound,
        pass: measured_upper <= bound,
    })
}

/// Exact version: evolves both dense states and compares depth-`R` empirical distributions.
#[allow(clippy::too_many_arguments)]
pub fn stability_gap(
    spec: &GroupSpec,
    model: &SpinModel,
    hom_a: &HomGraph,
    hom_b: &HomGraph,
    zeta_a: &DenseState,
    zeta_b: &DenseState,
    ball: &CayleyBall,
    t: f64,
    dt: f64,
) -> Result<StabilityReport> {
    let ga = Glauber::dense(model, hom_a)?;
    let gb = Glauber::dense(model, hom_b)?;
    let p0 = empirical_state(hom_a, zeta_a, ball)?;
    let q0 = empirical_state(hom_b, zeta_b, ball)?;
    let initial = dbar_truncated(&p0, &q0, spec)?;
    let pt = empirical_state(hom_a, &ga.evolve_exact(zeta_a, t, dt)?, ball)?;
    let qt = empirical_state(hom_b, &gb.evolve_exact(zeta_b, t, dt)?, ball)?;
    let at_t = dbar_truncated(&pt, &qt, spec)?;
    stability_report(spec, model, hom_a, hom_b, initial, at_t, 0.0, t, ball.radius())
}

/// Monte Carlo estimate of `P_{ζ_t}^σ` from i.i.d. product initial states.
#[derive(Clone, Debug)]
pub struct SampledEmpirical {
    pub estimate: PatternDistribution,
    /// Standard error of each pattern's estimated weight.
    pub std_errors: HashMap<Vec<u8>, f64>,
    pub trajectories: usize,
}

impl SampledEmpirical {
    /// Bound on `d̄(estimate, truth)` when every weight is within `z` standard errors.
    pub fn margin(&self, z: f64) -> f64 {
        let diam: f64 = self.estimate.position_weights().iter().sum();
        diam * 0.5 * z * self.std_errors.values().sum::<f64>()
    }
}

const SAMPLE_CHUNKS: usize = 256;

/// Runs `trajectories` independent copies from `⊗ site_law` to time `t` and
/// averages the lifted-pattern frequencies. Output is independent of the
/// thread count.
pub fn sample_empirical(
    model: &SpinModel,
    hom: &HomGraph,
    site_law: &[f64],
    ball: &CayleyBall,
    t: f64,
    trajectories: usize,
    seed: u64,
) -> Result<SampledEmpirical> {
    if trajectories < 2 {
        return Err(Error::Invalid("need at least two trajectories".into()));
    }
    let g = Glauber::sampler(model, hom)?;
    let n = hom.len();
    let images: Vec<Vec<usize>> = (0..n).map(|v| hom.ball_image(v, ball)).collect();
    let chunk_len = trajectories.div_ceil(SAMPLE_CHUNKS);
    let chunks: Vec<HashMap<Vec<u8>, (f64, f64)>> = (0..SAMPLE_CHUNKS)
        .into_par_iter()
        .map(|c| {
            let start = c * chunk_len;
            let end = ((c + 1) * chunk_len).min(trajectories);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64 + 1);
            let mut sums: HashMap<Vec<u8>, (f64, f64)> = HashMap::new();
            let mut x = vec![0u8; n];
            let mut counts: HashMap<Vec<u8>, usize> = HashMap::new();
            for _ in start..end {
                for xv in x.iter_mut() {
                    *xv = sample_letter(site_law, rng.gen());
                }
                g.run(&mut x, t, &mut rng, |_| {});
                counts.clear();
                for img in &images {
                    let pat: Vec<u8> = img.iter().map(|&w| x[w]).collect();
                    *counts.entry(pat).or_insert(0) += 1;
                }
                for (pat, &k) in &counts {
                    let f = k as f64 / n as f64;
                    let e = sums.entry(pat.clone()).or_insert((0.0, 0.0));
                    e.0 += f;
                    e.1 += f * f;
                }
            }
            sums
        })
        .collect();
    let mut totals: HashMap<Vec<u8>, (f64, f64)> = HashMap::new();
    for chunk in chunks {
        let mut entries: Vec<_> = chunk.into_iter().collect();
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        for (pat, (s, s2)) in entries {
            let e = totals.entry(pat).or_insert((0.0, 0.0));
            e.0 += s;
            e.1 += s2;
        }
    }
    let k = trajectories as f64;
    let mut std_errors = HashMap::new();
    let mut weights = vec![];
    for (pat, (s, s2)) in totals {
        let mean = s / k;
        let var = ((s2 - k * mean * mean) / (k - 1.0)).max(0.0);
        std_errors.insert(pat.clone(), (var / k).sqrt());
        weights.push((pat, mean));
    }
    Ok(SampledEmpirical {
        estimate: PatternDistribution::new(ball, model.alphabet(), weights)?,
        std_errors,
        trajectories,
    })
}

fn sample_letter(law: &[f64], u: f64) -> u8 {
    let mut acc = 0.0;
    for (b, &p) in law.iter().enumerate() {
        acc += p;
        if u < acc {
            return b as u8;
        }
    }
    (law.len() - 1) as u8
}

/// Stability check for systems beyond the dense budget: both sides start from
/// `⊗ site_law`, the time-`t` empirical distributions are estimated by
/// sampling, and the measured upper bound is inflated by a 4-standard-error
/// margin on each side.
#[allow(clippy::too_many_arguments)]
pub fn stability_gap_sampled(
    spec: &GroupSpec,
    model: &SpinModel,
    hom_a: &HomGraph,
    hom_b: &HomGraph,
    site_law: &[f64],
    ball: &CayleyBall,
    t: f64,
    trajectories: usize,
    seed: u64,
) -> Result<StabilityReport> {
    let laws_a = vec![site_law.to_vec(); hom_a.len()];
    let laws_b = vec![site_law.to_vec(); hom_b.len()];
    let initial = dbar_truncated(
        &empirical_product(hom_a, &laws_a, ball)?,
        &empirical_product(hom_b, &laws_b, ball)?,
        spec,
    )?;
    let sa = sample_empirical(model, hom_a, site_law, ball, t, trajectories, seed)?;
    let sb = sample_empirical(model, hom_b, site_law, ball, t, trajectories, seed.wrapping_add(1))?;
    let at_t = dbar_truncated(&sa.estimate, &sb.estimate, spec)?;
    let margin = sa.margin(4.0) + sb.margin(4.0);
    stability_report(spec, model, hom_a, hom_b, initial, at_t, margin, t, ball.radius())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cayley::build_ball;
    use crate::homgraph::random_hom;
    use crate::model::gibbs_finite;
    use nalgebra::DMatrix;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_full_support(n: usize, a: usize, seed: u64) -> DenseState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw: Vec<f64> = (0..a.pow(n as u32)).map(|_| rng.gen_range(0.05..1.0)).collect();
        let t: f64 = raw.iter().sum();
        DenseState::from_probs(n, a, raw.iter().map(|p| p / t).collect()).unwrap()
    }

    /// The generator as an explicit matrix `𝔄(x,y)`, so that `dζ/dt = 𝔄ζ`.
    fn generator_matrix(model: &SpinModel, hom: &HomGraph) -> DMatrix<f64> {
        let n = hom.len();
        let a = model.alphabet();
        let size = a.pow(n as u32);
        let mut m = DMatrix::zeros(size, size);
        for y in 0..size {
            let ys = crate::state::decode_microstate(a, n, y);
            for v in 0..n {
                let c = model.site_kernel(hom, &ys, v);
                for b in 0..a as u8 {
                    if b == ys[v] {
                        continue;
                    }
                    let mut xs = ys.clone();
                    xs[v] = b;
                    let x = crate::state::microstate_index(a, &xs);
                    m[(x, y)] += c[b as usize];
                    m[(y, y)] -= c[b as usize];
                }
            }
        }
        m
    }

    #[test]
    fn f0_values() {
        assert_eq!(f0(1.0).unwrap(), 0.0);
        assert_eq!(f0(0.0).unwrap(), -1.0);
        assert!((f0(std::f64::consts::E).unwrap() + 1.0).abs() < 1e-15);
        assert!(f0(-0.1).is_err());
        for l in [-3.0, -0.5, -0.09, -1e-6, 0.0, 1e-6, 0.05, 0.099, 0.1, 0.7, 4.0] {
            let direct = f0(f64::exp(l)).unwrap();
            assert!((f0_log(l) - direct).abs() < 1e-14 * (1.0 + direct.abs()), "L={l}");
            assert!(f0_log(l) <= 0.0);
        }
    }

    #[test]
    fn generator_identities() {
        let model = SpinModel::ising(0.7, 0.2);
        let hom = HomGraph::cycle(4);
        let m = generator_matrix(&model, &hom);
        let p: Vec<f64> = crate::model::energies(&model, &hom).unwrap().iter().map(|u| (-u).exp()).collect();
        for y in 0..m.ncols() {
            assert!(m.column(y).sum().abs() < 1e-14);
        }
        for x in 0..m.nrows() {
            let s: f64 = (0..m.ncols()).map(|y| m[(x, y)] * p[y]).sum();
            assert!(s.abs() < 1e-12);
        }
        let g = Glauber::dense(&model, &hom).unwrap();
        let zeta = random_full_support(4, 2, 1);
        let rhs = g.master_rhs(&zeta).unwrap();
        let direct = &m * DMatrix::from_column_slice(zeta.len(), 1, zeta.probs());
        for i in 0..rhs.len() {
            assert!((rhs[i] - direct[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn master_rhs_examples() {
        let model = SpinModel::ising(0.5, 0.0);
        let hom = HomGraph::cycle(5);
        let g = Glauber::dense(&model, &hom).unwrap();
        let (xi, _) = gibbs_finite(&model, &hom).unwrap();
        assert!(g.master_rhs(&xi).unwrap().iter().all(|d| d.abs() < 1e-15));
        let free = SpinModel::free(3).unwrap();
        let gf = Glauber::dense(&free, &hom).unwrap();
        let rhs = gf.master_rhs(&DenseState::uniform(5, 3).unwrap()).unwrap();
        assert!(rhs.iter().all(|d| d.abs() < 1e-15));
        let rhs = g.master_rhs(&random_full_support(5, 2, 3)).unwrap();
        assert!(rhs.iter().sum::<f64>().abs() < 1e-14);
    }

    #[test]
    fn integrators_agree_with_matrix_exponential() {
        let model = SpinModel::ising(0.5, 0.1);
        let hom = HomGraph::cycle(4);
        let g = Glauber::dense(&model, &hom).unwrap();
        let zeta0 = DenseState::point_mass(2, &[1, 0, 0, 1]).unwrap();
        let m = generator_matrix(&model, &hom);
        // exp(tM) by scaling and squaring a Taylor series
        let t = 0.8;
        let scaled = &m * (t / 1024.0);
        let mut e = DMatrix::identity(16, 16);
        let mut term = DMatrix::identity(16, 16);
        for k in 1..20 {
            term = &term * &scaled / k as f64;
            e += &term;
        }
        for _ in 0..10 {
            e = &e * &e;
        }
        let oracle = &e * DMatrix::from_column_slice(16, 1, zeta0.probs());
        let rk4 = g.evolve_exact(&zeta0, t, 1e-3).unwrap();
        let unif = g.evolve_uniformized(&zeta0, t).unwrap();
        for i in 0..16 {
            assert!((rk4.probs()[i] - oracle[i]).abs() < 1e-11);
            assert!((unif.probs()[i] - oracle[i]).abs() < 1e-12);
        }
        assert_eq!(g.evolve_exact(&zeta0, 0.0, 1e-3).unwrap(), zeta0);
        let early = g.evolve_exact(&zeta0, 0.01, 1e-3).unwrap();
        assert!(early.probs().iter().all(|&p| p > 0.0));
    }

    #[test]
    fn oversized_step_is_reported() {
        let model = SpinModel::ising(0.5, 0.0);
        let hom = HomGraph::cycle(4);
        let g = Glauber::dense(&model, &hom).unwrap();
        let zeta0 = DenseState::point_mass(2, &[1, 0, 1, 0]).unwrap();
        assert!(matches!(g.evolve_exact(&zeta0, 5.0, 2.0), Err(Error::StepTooLarge { .. })));
    }

    #[test]
    fn free_energy_examples() {
        let model = SpinModel::ising(0.5, 0.0);
        let hom = HomGraph::cycle(6);
        let g = Glauber::dense(&model, &hom).unwrap();
        let (xi, log_z) = gibbs_finite(&model, &hom).unwrap();
        assert!((g.free_energy(&xi).unwrap() + log_z).abs() < 1e-12);
        let x = vec![1, 0, 0, 1, 1, 1];
        let point = DenseState::point_mass(2, &x).unwrap();
        assert!((g.free_energy(&point).unwrap() - model.total_energy(&hom, &x)).abs() < 1e-15);
        assert!(g.free_energy_derivative(&xi).unwrap().abs() < 1e-12);
        assert!(matches!(
            g.free_energy_derivative(&point),
            Err(Error::NotFullSupport { .. })
        ));
        let (lo, _) = model.u_bounds(1);
        let zeta = random_full_support(6, 2, 4);
        assert!(g.free_energy(&zeta).unwrap() >= 6.0 * (lo - 2f64.ln()) - 1e-12);
    }

    #[test]
    fn derivative_matches_entropy_production_formula() {
        // d/dt Σ ζ log(ζ/P) = Σ_x (dζ/dt)(x) log(ζ(x)/P(x))
        let model = SpinModel::ising(0.9, -0.3);
        let hom = random_hom(&GroupSpec::free_product_cyclic(vec![3, 3]).unwrap(), 6, 2).unwrap();
        let g = Glauber::dense(&model, &hom).unwrap();
        let zeta = random_full_support(6, 2, 9);
        let rhs = g.master_rhs(&zeta).unwrap();
        let u = crate::model::energies(&model, &hom).unwrap();
        let oracle: f64 = (0..zeta.len()).map(|i| rhs[i] * (zeta.probs()[i].ln() + u[i])).sum();
        let d = g.free_energy_derivative(&zeta).unwrap();
        assert!((d - oracle).abs() < 1e-12 * oracle.abs().max(1.0));
    }

    #[test]
    fn sampler_contract() {
        let model = SpinModel::ising(0.5, 0.0);
        let hom = HomGraph::cycle(8);
        let g = Glauber::sampler(&model, &hom).unwrap();
        let x0 = vec![0u8; 8];
        let (x, ev) = g.sample_trajectory(&x0, 0.0, 1);
        assert_eq!(x, x0);
        assert!(ev.is_empty());
        let (xa, ea) = g.sample_trajectory(&x0, 3.0, 42);
        let (xb, eb) = g.sample_trajectory(&x0, 3.0, 42);
        assert_eq!((xa, &ea), (xb, &eb));
        assert!(ea.windows(2).all(|w| w[0].time < w[1].time));
        let nt = 8.0 * 3.0;
        assert!((ea.len() as f64 - nt).abs() < 4.0 * nt.sqrt());
    }

    #[test]
    fn sampled_empirical_is_thread_independent_and_close() {
        let model = SpinModel::ising(0.5, 0.0);
        let hom = HomGraph::cycle(6);
        let ball = build_ball(&GroupSpec::integers(), 1).unwrap();
        let law = [0.3, 0.7];
        let a = sample_empirical(&model, &hom, &law, &ball, 0.5, 4000, 5).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| sample_empirical(&model, &hom, &law, &ball, 0.5, 4000, 5).unwrap());
        assert_eq!(a.estimate, b.estimate);
        let g = Glauber::dense(&model, &hom).unwrap();
        let zeta0 = DenseState::product(&vec![law.to_vec(); 6]).unwrap();
        let exact = empirical_state(&hom, &g.evolve_exact(&zeta0, 0.5, 1e-3).unwrap(), &ball).unwrap();
        let d = dbar_truncated(&a.estimate, &exact, &GroupSpec::integers()).unwrap();
        assert!(d.lower <= a.margin(4.0));
    }

    #[test]
    fn exact_stability_on_small_cycles() {
        let spec = GroupSpec::integers();
        let model = SpinModel::ising(0.5, 0.0);
        let ball = build_ball(&spec, 1).unwrap();
        let (ha, hb) = (HomGraph::cycle(6), HomGraph::cycle(8));
        let law = vec![0.4, 0.6];
        let za = DenseState::product(&vec![law.clone(); 6]).unwrap();
        let zb = DenseState::product(&vec![law.clone(); 8]).unwrap();
        for t in [0.0, 0.1, 0.5] {
            let r = stability_gap(&spec, &model, &ha, &hb, &za, &zb, &ball, t, 1e-3).unwrap();
            assert!(r.pass, "{r:?}");
        }
        let same = stability_gap(&spec, &model, &ha, &ha, &za, &za, &ball, 0.3, 1e-3).unwrap();
        assert_eq!(same.at_t.lower, 0.0);
        assert!(same.pass);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn derivative_is_nonpositive_and_conserves_mass(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let model = SpinModel::ising(rng.gen_range(-1.0..1.0), rng.gen_range(-0.5..0.5));
            let hom = HomGraph::cycle(4);
            let g = Glauber::dense(&model, &hom).unwrap();
            let zeta = random_full_support(4, 2, seed);
            prop_assert!(g.free_energy_derivative(&zeta).unwrap() <= 1e-15);
            let later = g.evolve_exact(&zeta, 0.3, 1e-2).unwrap();
            prop_assert!((later.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(g.free_energy(&later).unwrap() <= g.free_energy(&zeta).unwrap() + 1e-12);
        }
    }
}
