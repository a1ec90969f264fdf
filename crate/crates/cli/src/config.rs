//! Experiment configuration. Every stochastic element carries an explicit seed.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use sofic_glauber::cayley::{build_ball, CayleyBall, GroupSpec};
use sofic_glauber::fed::{torus, FedOptions};
use sofic_glauber::homgraph::{random_hom, HomGraph};
use sofic_glauber::model::SpinModel;
use sofic_glauber::periodic::{Orbit, PeriodicMeasure};
use sofic_glauber::state::{DenseState, PatternDistribution};
use sofic_glauber::target::TargetMeasure;
use sofic_glauber::verify::VerifyParams;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "GroupSpec::integers")]
    pub group: GroupSpec,
    #[serde(default)]
    pub model: Option<SpinModel>,
    #[serde(default)]
    pub homs: Option<HomSource>,
    #[serde(default)]
    pub dynamics: Option<DynamicsConfig>,
    #[serde(default)]
    pub sofic: Option<SoficConfig>,
    #[serde(default)]
    pub fed: Option<FedConfig>,
    #[serde(default)]
    pub diagnose: Option<DiagnoseConfig>,
    #[serde(default)]
    pub verify: Option<VerifyConfig>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum HomSource {
    Cycles(Vec<usize>),
    Tori(Vec<(usize, usize)>),
    /// `replicates` independent actions per size; member `i` uses `seed + i`.
    Random {
        sizes: Vec<usize>,
        seed: u64,
        #[serde(default = "one")]
        replicates: usize,
    },
    Explicit(Vec<HomGraph>),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsConfig {
    /// Snapshot times; the last one is also the trajectory horizon.
    pub times: Vec<f64>,
    #[serde(default = "default_dt")]
    pub dt: f64,
    pub initial: InitialState,
    /// Emit exact master-equation snapshots.
    #[serde(default = "yes")]
    pub exact: bool,
    #[serde(default)]
    pub trajectories: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialState {
    Uniform,
    /// I.i.d. letters with this law.
    Product(Vec<f64>),
    PointMass(Vec<u8>),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SoficConfig {
    #[serde(default = "default_r_max")]
    pub r_max: usize,
    /// Cap `r_max` per member at the largest radius whose ball fits in `n` points.
    #[serde(default)]
    pub fit_radius: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FedConfig {
    pub radius: usize,
    /// Strictly decreasing.
    pub epsilons: Vec<f64>,
    pub target: TargetConfig,
    #[serde(default)]
    pub solver: SolverConfig,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub tau_final: Option<f64>,
    pub max_newton: Option<usize>,
    pub gap_tol: Option<f64>,
    pub max_lp_columns: Option<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnoseConfig {
    pub radius: usize,
    pub target: TargetConfig,
    #[serde(default = "default_tol")]
    pub tol: f64,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    pub seed: Option<u64>,
    pub dt: Option<f64>,
    pub sampler_trajectories: Option<usize>,
    pub stability_trajectories: Option<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetConfig {
    /// I.i.d. letters.
    Product(Vec<f64>),
    /// Gibbs measure of a model on the integers.
    ChainGibbs(SpinModel),
    Periodic {
        orbits: Vec<Orbit>,
        weights: Vec<f64>,
    },
    /// Dirac mass on one pattern of the configured ball.
    PointMass(Vec<u8>),
    /// Marginals on the configured ball.
    Explicit(Vec<WeightedPattern>),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightedPattern {
    pub labels: Vec<u8>,
    pub weight: f64,
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

fn default_dt() -> f64 {
    1e-3
}

fn default_r_max() -> usize {
    20
}

fn default_tol() -> f64 {
    1e-8
}

/// A configured action with a display label.
pub struct Member {
    pub label: String,
    pub hom: HomGraph,
}

impl ExperimentConfig {
    /// Parses JSON; errors carry the line and column serde reports.
    pub fn parse(text: &str) -> Result<Self, String> {
        serde_json::from_str(text).map_err(|e| format!("config: {e}"))
    }

    pub fn apply_seed_override(&mut self, seed: u64) {
        if let Some(HomSource::Random { seed: s, .. }) = &mut self.homs {
            *s = seed;
        }
        if let Some(d) = &mut self.dynamics {
            d.seed = seed;
        }
        self.verify.get_or_insert_with(VerifyConfig::default).seed = Some(seed);
    }

    /// SHA-256 of the normalized configuration.
    pub fn hash(&self) -> String {
        // Value maps are ordered, so key order in the file does not matter
        let value = serde_json::to_value(self).expect("config serializes");
        let digest = Sha256::digest(value.to_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn model(&self) -> Result<&SpinModel, String> {
        self.model.as_ref().ok_or_else(|| "config: missing field `model`".to_string())
    }

    pub fn members(&self) -> Result<Vec<Member>, String> {
        let source = self.homs.as_ref().ok_or("config: missing field `homs`")?;
        let members: Vec<Member> = match source {
            HomSource::Cycles(sizes) => sizes
                .iter()
                .map(|&n| Member {
                    label: format!("cycle{n}"),
                    hom: HomGraph::cycle(n),
                })
                .collect(),
            HomSource::Tori(dims) => dims
                .iter()
                .map(|&(a, b)| {
                    Ok(Member {
                        label: format!("torus{a}x{b}"),
                        hom: torus(a, b).map_err(|e| format!("homs.tori: {e}"))?,
                    })
                })
                .collect::<Result<_, String>>()?,
            HomSource::Random {
                sizes,
                seed,
                replicates,
            } => {
                let mut out = vec![];
                for (i, &n) in sizes.iter().enumerate() {
                    for k in 0..*replicates {
                        let s = seed.wrapping_add((i * replicates + k) as u64);
                        out.push(Member {
                            label: format!("random{n}s{s}"),
                            hom: random_hom(&self.group, n, s).map_err(|e| format!("homs.random: {e}"))?,
                        });
                    }
                }
                out
            }
            HomSource::Explicit(homs) => homs
                .iter()
                .enumerate()
                .map(|(i, h)| Member {
                    label: format!("explicit{i}"),
                    hom: h.clone(),
                })
                .collect(),
        };
        if members.is_empty() {
            return Err("config: `homs` lists no actions".into());
        }
        for (i, m) in members.iter().enumerate() {
            let v = m.hom.validate(&self.group);
            if m.hom.rank() != self.group.rank() || !v.ok {
                return Err(format!("homs[{i}] ({}) is not an action of the group: {}", m.label, v.message));
            }
        }
        Ok(members)
    }

    pub fn verify_params(&self) -> VerifyParams {
        let mut p = VerifyParams::default();
        if let Some(v) = &self.verify {
            p.seed = v.seed.unwrap_or(p.seed);
            p.dt = v.dt.unwrap_or(p.dt);
            p.sampler_trajectories = v.sampler_trajectories.unwrap_or(p.sampler_trajectories);
            p.stability_trajectories = v.stability_trajectories.unwrap_or(p.stability_trajectories);
        }
        p
    }

    pub fn ball(&self, radius: usize) -> Result<CayleyBall, String> {
        build_ball(&self.group, radius).map_err(|e| e.to_string())
    }
}

impl InitialState {
    /// Site law for i.i.d. sampling, or the fixed configuration.
    pub fn dense(&self, n: usize, alphabet: usize) -> Result<DenseState, String> {
        match self {
            InitialState::Uniform => DenseState::uniform(n, alphabet),
            InitialState::Product(law) => {
                if law.len() != alphabet {
                    return Err(format!("dynamics.initial.product has {} entries for {alphabet} letters", law.len()));
                }
                DenseState::product(&vec![law.clone(); n])
            }
            InitialState::PointMass(x) => {
                if x.len() != n {
                    return Err(format!("dynamics.initial.point_mass has {} sites, action has {n}", x.len()));
                }
                DenseState::point_mass(alphabet, x)
            }
        }
        .map_err(|e| format!("dynamics.initial: {e}"))
    }
}

impl SolverConfig {
    pub fn options(&self) -> FedOptions {
        let d = FedOptions::default();
        FedOptions {
            tau_final: self.tau_final.unwrap_or(d.tau_final),
            max_newton: self.max_newton.unwrap_or(d.max_newton),
            gap_tol: self.gap_tol.unwrap_or(d.gap_tol),
            max_lp_columns: self.max_lp_columns.unwrap_or(d.max_lp_columns),
        }
    }
}

impl TargetConfig {
    pub fn marginal(&self, spec: &GroupSpec, ball: &CayleyBall, alphabet: usize) -> Result<PatternDistribution, String> {
        let measure = match self {
            TargetConfig::Product(law) => TargetMeasure::Product(law.clone()),
            TargetConfig::ChainGibbs(model) => TargetMeasure::ChainGibbs(model.clone()),
            TargetConfig::Periodic { orbits, weights } => TargetMeasure::Periodic(
                PeriodicMeasure::new(spec, alphabet, orbits.clone(), weights.clone()).map_err(|e| format!("target: {e}"))?,
            ),
            TargetConfig::PointMass(p) => TargetMeasure::Explicit(
                PatternDistribution::point_mass(ball, alphabet, p.clone()).map_err(|e| format!("target: {e}"))?,
            ),
            TargetConfig::Explicit(ps) => TargetMeasure::Explicit(
                PatternDistribution::new(ball, alphabet, ps.iter().map(|p| (p.labels.clone(), p.weight)))
                    .map_err(|e| format!("target: {e}"))?,
            ),
        };
        if measure.alphabet() != alphabet {
            return Err(format!(
                "target has {} letters but the model has {alphabet}",
                measure.alphabet()
            ));
        }
        measure.marginal(spec, ball).map_err(|e| format!("target: {e}"))
    }
}
