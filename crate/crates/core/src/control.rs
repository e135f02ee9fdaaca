//! Linear Sarsa(0) control on top of a frozen feature map.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::env::{EnvState, Environment, Policy};
use crate::error::{Error, Result};
use crate::network::{MlpParams, Optimizer, OptimizerKind};
use crate::seed::{child_rng, SimRng};
use crate::tilecoding::TileCoder;

/// Features of one observation: a dense vector or the active indices of a
/// binary encoding.
#[derive(Clone, Debug, PartialEq)]
pub enum Features {
    Dense(Vec<f64>),
    Active(Vec<usize>),
}

impl Features {
    pub fn dot(&self, w: &[f64]) -> f64 {
        match self {
            Features::Dense(v) => v.iter().zip(w).map(|(a, b)| a * b).sum(),
            Features::Active(idx) => idx.iter().map(|&i| w[i]).sum(),
        }
    }

    fn check(&self, width: usize) -> Result<()> {
        match self {
            Features::Dense(v) if v.len() != width => Err(Error::shape("features", width, v.len())),
            Features::Active(idx) if idx.iter().any(|&i| i >= width) => {
                Err(Error::invalid(format!("active index out of range for width {width}")))
            }
            _ => Ok(()),
        }
    }

    pub fn to_dense(&self, width: usize) -> Vec<f64> {
        match self {
            Features::Dense(v) => v.clone(),
            Features::Active(idx) => {
                let mut v = vec![0.0; width];
                for &i in idx {
                    v[i] += 1.0;
                }
                v
            }
        }
    }
}

/// A fixed map from observations to features.
pub trait FeatureMap {
    fn num_features(&self) -> usize;
    fn features(&self, obs: &[f64]) -> Result<Features>;
}

impl FeatureMap for MlpParams {
    fn num_features(&self) -> usize {
        self.width()
    }

    fn features(&self, obs: &[f64]) -> Result<Features> {
        Ok(Features::Dense(self.represent(obs)?))
    }
}

impl FeatureMap for TileCoder {
    fn num_features(&self) -> usize {
        TileCoder::num_features(self)
    }

    fn features(&self, obs: &[f64]) -> Result<Features> {
        Ok(Features::Active(self.encode(obs)?))
    }
}

/// One weight vector per action.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearQ {
    pub weights: Vec<Vec<f64>>,
}

impl LinearQ {
    pub fn zeros(actions: usize, width: usize) -> Self {
        LinearQ {
            weights: vec![vec![0.0; width]; actions],
        }
    }

    /// Weights drawn from `N(0, std^2)`.
    pub fn gaussian(actions: usize, width: usize, std: f64, rng: &mut SimRng) -> Result<Self> {
        let normal = Normal::new(0.0, std).map_err(|e| Error::invalid(format!("Q init std {std}: {e}")))?;
        Ok(LinearQ {
            weights: (0..actions)
                .map(|_| (0..width).map(|_| normal.sample(rng)).collect())
                .collect(),
        })
    }

    pub fn num_actions(&self) -> usize {
        self.weights.len()
    }

    pub fn width(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    pub fn q_values(&self, phi: &Features) -> Result<Vec<f64>> {
        phi.check(self.width())?;
        Ok(self.weights.iter().map(|w| phi.dot(w)).collect())
    }

    pub fn q(&self, phi: &Features, action: usize) -> Result<f64> {
        phi.check(self.width())?;
        let w = self
            .weights
            .get(action)
            .ok_or_else(|| Error::invalid(format!("action {action} out of range")))?;
        Ok(phi.dot(w))
    }
}

/// Uniform random action with probability `epsilon`, otherwise the greedy
/// action with ties going to the lowest index.
pub fn epsilon_greedy(q: &[f64], epsilon: f64, rng: &mut SimRng) -> usize {
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        return rng.random_range(0..q.len());
    }
    argmax(q)
}

pub fn argmax(q: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in q.iter().enumerate() {
        if v > q[best] {
            best = i;
        }
    }
    best
}

/// One Sarsa(0) update of the taken action's weights. `next` is `None` when
/// the successor is terminal. Returns the TD error.
pub fn sarsa_update(
    q: &mut LinearQ,
    opt: &mut Optimizer,
    phi: &Features,
    action: usize,
    reward: f64,
    gamma: f64,
    next: Option<(&Features, usize)>,
) -> Result<f64> {
    let bootstrap = match next {
        Some((phi_next, a_next)) => gamma * q.q(phi_next, a_next)?,
        None => 0.0,
    };
    let delta = reward + bootstrap - q.q(phi, action)?;
    let width = q.width();
    let w = &mut q.weights[action];
    match phi {
        Features::Active(idx) if opt.is_plain_sgd() => {
            let step = opt.learning_rate() * delta;
            for &i in idx {
                w[i] += step;
            }
            opt.t += 1;
        }
        _ => {
            let grad: Vec<f64> = phi.to_dense(width).into_iter().map(|v| -delta * v).collect();
            opt.step_slot(action, w, &grad)?;
        }
    }
    Ok(delta)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerChoice {
    /// Step-decay SGD for sparse representations, RMSprop for dense ones.
    #[default]
    Auto,
    StepDecay,
    Rmsprop,
}

fn default_episodes() -> usize {
    100
}

fn default_epsilon() -> f64 {
    0.1
}

fn default_alpha() -> f64 {
    0.01
}

fn default_q_std() -> f64 {
    0.01
}

fn default_decay_every() -> u64 {
    25
}

fn default_decay_factor() -> f64 {
    0.5
}

/// The step sizes considered when tuning control.
pub const ALPHA_GRID: [f64; 7] = [0.1, 0.04, 0.01, 0.004, 0.001, 0.0004, 0.0001];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlConfig {
    #[serde(default = "default_episodes")]
    pub episodes: usize,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Initial step size.
    #[serde(default = "default_alpha")]
    pub alpha0: f64,
    #[serde(default)]
    pub optimizer: OptimizerChoice,
    /// Standard deviation of the Gaussian weight initialization.
    #[serde(default = "default_q_std")]
    pub q_init_std: f64,
    #[serde(default = "default_decay_every")]
    pub decay_every: u64,
    #[serde(default = "default_decay_factor")]
    pub decay_factor: f64,
}

impl Default for ControlConfig {
    fn default() -> Self {
        ControlConfig {
            episodes: default_episodes(),
            epsilon: default_epsilon(),
            alpha0: default_alpha(),
            optimizer: OptimizerChoice::Auto,
            q_init_std: default_q_std(),
            decay_every: default_decay_every(),
            decay_factor: default_decay_factor(),
        }
    }
}

impl ControlConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::invalid(format!("epsilon {} outside [0, 1]", self.epsilon)));
        }
        if !(self.alpha0 >= 0.0 && self.alpha0.is_finite()) {
            return Err(Error::invalid(format!("alpha0 {} must be finite and >= 0", self.alpha0)));
        }
        if !(self.q_init_std >= 0.0 && self.q_init_std.is_finite()) {
            return Err(Error::invalid("q_init_std must be finite and >= 0"));
        }
        if self.episodes == 0 {
            return Err(Error::invalid("episodes must be positive"));
        }
        Ok(())
    }

    /// Whether `alpha0` is one of the standard grid values.
    pub fn alpha_on_grid(&self) -> bool {
        ALPHA_GRID.iter().any(|&a| (a - self.alpha0).abs() <= 1e-12 * a)
    }

    pub fn optimizer_kind(&self, sparse_features: bool) -> OptimizerKind {
        let step_decay = OptimizerKind::StepDecaySgd {
            factor: self.decay_factor,
            every: self.decay_every,
        };
        match self.optimizer {
            OptimizerChoice::StepDecay => step_decay,
            OptimizerChoice::Rmsprop => OptimizerKind::RMSPROP,
            OptimizerChoice::Auto if sparse_features => step_decay,
            OptimizerChoice::Auto => OptimizerKind::RMSPROP,
        }
    }
}

/// Per-episode outcomes of one control run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LearningCurve {
    pub seed: u64,
    pub steps: Vec<usize>,
    pub returns: Vec<f64>,
    pub truncated: Vec<bool>,
}

impl LearningCurve {
    pub fn len(&self) -> usize {
        self.returns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.returns.is_empty()
    }

    /// Mean return over the last `n` episodes.
    pub fn final_mean_return(&self, n: usize) -> f64 {
        let tail = &self.returns[self.returns.len().saturating_sub(n)..];
        tail.iter().sum::<f64>() / tail.len().max(1) as f64
    }

    /// Episodes that ended by termination rather than the cut-off.
    pub fn goals_reached(&self) -> usize {
        self.truncated.iter().filter(|&&t| !t).count()
    }
}

#[derive(Clone, Debug)]
pub struct ControlRun {
    pub curve: LearningCurve,
    /// `probe_values[e][p]`: value of probe `p` after episode `e`.
    pub probe_values: Vec<Vec<f64>>,
    pub q: LinearQ,
}

/// A state-action pair whose value is tracked during control.
#[derive(Clone, Debug, PartialEq)]
pub struct Probe {
    pub obs: Vec<f64>,
    pub action: usize,
}

/// Runs Sarsa(0) for `config.episodes` episodes. `sparse_features` picks the
/// optimizer when the choice is automatic.
pub fn run_control(
    env: &Environment,
    features: &dyn FeatureMap,
    sparse_features: bool,
    config: &ControlConfig,
    seed: u64,
    probes: &[Probe],
) -> Result<ControlRun> {
    config.validate()?;
    let width = features.num_features();
    let actions = env.num_actions();
    let mut q = LinearQ::gaussian(actions, width, config.q_init_std, &mut child_rng(seed, "q-init", 0))?;
    let mut opt = Optimizer::new(config.optimizer_kind(sparse_features), config.alpha0, &vec![width; actions])?;
    let probe_phi = probes
        .iter()
        .map(|p| features.features(&p.obs))
        .collect::<Result<Vec<_>>>()?;
    let mut rng = child_rng(seed, "control", 0);
    let mut curve = LearningCurve {
        seed,
        ..LearningCurve::default()
    };
    let mut probe_values = Vec::with_capacity(config.episodes);
    for _ in 0..config.episodes {
        let (mut state, obs) = env.reset(&mut rng);
        let mut phi = features.features(&obs)?;
        let mut action = epsilon_greedy(&q.q_values(&phi)?, config.epsilon, &mut rng);
        let mut ret = 0.0;
        let mut steps = 0;
        loop {
            let (t, next) = env.step(&state, action, &mut rng)?;
            steps += 1;
            ret += t.reward;
            if t.is_terminal() {
                sarsa_update(&mut q, &mut opt, &phi, action, t.reward, 0.0, None)?;
                curve.truncated.push(false);
                break;
            }
            let phi_next = features.features(&t.next_obs)?;
            let a_next = epsilon_greedy(&q.q_values(&phi_next)?, config.epsilon, &mut rng);
            // the cut-off is not part of the task, so bootstrap through it
            sarsa_update(&mut q, &mut opt, &phi, action, t.reward, t.discount, Some((&phi_next, a_next)))?;
            if t.truncated {
                curve.truncated.push(true);
                break;
            }
            state = next;
            phi = phi_next;
            action = a_next;
        }
        if q.weights.iter().flatten().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("action-value weights diverged".into()));
        }
        opt.end_episode();
        curve.steps.push(steps);
        curve.returns.push(ret);
        probe_values.push(
            probes
                .iter()
                .zip(&probe_phi)
                .map(|(p, f)| q.q(f, p.action))
                .collect::<Result<Vec<_>>>()?,
        );
    }
    Ok(ControlRun {
        curve,
        probe_values,
        q,
    })
}

/// Epsilon-greedy policy of a learned action-value function.
pub struct EpsilonGreedyPolicy<'a> {
    pub env: &'a Environment,
    pub features: &'a dyn FeatureMap,
    pub q: &'a LinearQ,
    pub epsilon: f64,
}

impl Policy<EnvState> for EpsilonGreedyPolicy<'_> {
    fn act(&self, state: &EnvState, rng: &mut SimRng) -> Result<usize> {
        let phi = self.features.features(&self.env.observe(state))?;
        Ok(epsilon_greedy(&self.q.q_values(&phi)?, self.epsilon, rng))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Domain;
    use crate::seed::rng_from_seed;
    use crate::tilecoding::TileCoderConfig;

    fn sgd(lr: f64, actions: usize, width: usize) -> Optimizer {
        Optimizer::new(
            OptimizerKind::StepDecaySgd {
                factor: 1.0,
                every: 1,
            },
            lr,
            &vec![width; actions],
        )
        .unwrap()
    }

    #[test]
    fn q_value_examples() {
        let q = LinearQ::zeros(3, 4);
        assert_eq!(q.q_values(&Features::Dense(vec![1.0, 2.0, 3.0, 4.0])).unwrap(), vec![0.0; 3]);
        let mut q = LinearQ::zeros(2, 4);
        q.weights[1] = vec![0.1, 0.2, 0.3, 0.4];
        assert_eq!(q.q_values(&Features::Dense(vec![0.0, 0.0, 1.0, 0.0])).unwrap(), vec![0.0, 0.3]);
        let q = LinearQ {
            weights: vec![vec![0.5; 8192]],
        };
        assert_eq!(q.q_values(&Features::Active((0..8).map(|i| i * 100).collect())).unwrap(), vec![4.0]);
        assert!(q.q_values(&Features::Dense(vec![1.0; 3])).is_err());
        assert!(q.q_values(&Features::Active(vec![9000])).is_err());
    }

    #[test]
    fn epsilon_greedy_examples() {
        let mut rng = rng_from_seed(0);
        assert_eq!(epsilon_greedy(&[1.0, 3.0, 2.0], 0.0, &mut rng), 1);
        assert_eq!(epsilon_greedy(&[2.0, 2.0], 0.0, &mut rng), 0);
        let mut counts = [0usize; 4];
        let n = 100_000;
        for _ in 0..n {
            counts[epsilon_greedy(&[0.0, 5.0, 1.0, 2.0], 1.0, &mut rng)] += 1;
        }
        for c in counts {
            assert!((c as f64 / n as f64 - 0.25).abs() < 0.02 * 0.25 * 4.0, "{counts:?}");
        }
        // shifting every value leaves the greedy choice alone
        let q = [0.3, -1.0, 0.9, 0.9];
        let shifted: Vec<f64> = q.iter().map(|v| v + 17.0).collect();
        assert_eq!(argmax(&q), argmax(&shifted));
    }

    #[test]
    fn sarsa_update_examples() {
        let mut q = LinearQ::zeros(2, 3);
        let mut opt = sgd(0.5, 2, 3);
        let phi = Features::Dense(vec![0.0, 1.0, 0.0]);
        sarsa_update(&mut q, &mut opt, &phi, 1, 1.0, 0.0, None).unwrap();
        assert_eq!(q.weights[1], vec![0.0, 0.5, 0.0]);
        assert_eq!(q.weights[0], vec![0.0; 3]);

        let before = q.clone();
        let delta = sarsa_update(&mut q, &mut opt, &phi, 1, 0.0, 1.0, Some((&phi, 1))).unwrap();
        assert_eq!(delta, 0.0);
        assert_eq!(q, before);

        let mut sparse = LinearQ::zeros(2, 3);
        let mut opt = sgd(0.5, 2, 3);
        sarsa_update(&mut sparse, &mut opt, &Features::Active(vec![1]), 1, 1.0, 0.0, None).unwrap();
        assert_eq!(sparse, before);
    }

    #[test]
    fn rmsprop_update_only_touches_taken_action() {
        let mut rng = rng_from_seed(5);
        let mut q = LinearQ::gaussian(3, 5, 0.1, &mut rng).unwrap();
        let before = q.clone();
        let mut opt = Optimizer::new(OptimizerKind::RMSPROP, 0.01, &[5, 5, 5]).unwrap();
        let phi = Features::Dense(vec![0.3, 0.0, 1.0, 0.2, 0.5]);
        sarsa_update(&mut q, &mut opt, &phi, 2, -1.0, 1.0, Some((&phi, 0))).unwrap();
        assert_eq!(q.weights[0], before.weights[0]);
        assert_eq!(q.weights[1], before.weights[1]);
        assert_ne!(q.weights[2], before.weights[2]);
    }

    #[test]
    fn control_is_deterministic() {
        let env = Environment::new(Domain::MountainCar);
        let tc = TileCoder::new(TileCoderConfig::default(), 2).unwrap();
        let cfg = ControlConfig {
            episodes: 3,
            alpha0: 0.1,
            ..ControlConfig::default()
        };
        let probes = [Probe {
            obs: vec![0.3, 0.5],
            action: 0,
        }];
        let a = run_control(&env, &tc, true, &cfg, 7, &probes).unwrap();
        let b = run_control(&env, &tc, true, &cfg, 7, &probes).unwrap();
        assert_eq!(a.curve, b.curve);
        assert_eq!(a.probe_values, b.probe_values);
        assert_eq!(a.probe_values.len(), 3);
        assert!(a.curve.steps.iter().all(|&s| s <= 1000));
    }

    #[test]
    fn frozen_weights_keep_probe_values() {
        let env = Environment::new(Domain::PuddleWorld);
        let tc = TileCoder::new(TileCoderConfig::default(), 2).unwrap();
        let cfg = ControlConfig {
            episodes: 3,
            alpha0: 0.0,
            ..ControlConfig::default()
        };
        let probes = [Probe {
            obs: vec![0.2, 0.2],
            action: 1,
        }];
        let run = run_control(&env, &tc, true, &cfg, 1, &probes).unwrap();
        assert!(run.probe_values.windows(2).all(|w| w[0] == w[1]));
        // initial values are within a few init standard deviations of 0
        assert!(run.probe_values[0][0].abs() < 5.0 * 0.01 * 8f64.sqrt());
    }

    #[test]
    fn tile_coding_learns_mountain_car() {
        let env = Environment::new(Domain::MountainCar);
        let tc = TileCoder::new(TileCoderConfig::default(), 2).unwrap();
        let cfg = ControlConfig {
            alpha0: 0.1,
            ..ControlConfig::default()
        };
        let run = run_control(&env, &tc, true, &cfg, 3, &[]).unwrap();
        let last: f64 = run.curve.steps[90..].iter().sum::<usize>() as f64 / 10.0;
        assert!(last < 300.0, "final steps {last}");
    }
}
