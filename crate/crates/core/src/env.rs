//! Classic episodic control domains: Mountain Car, Puddle World, Acrobot and
//! Catcher, together with the fixed behaviour policies used to collect
//! pretraining data.
//!
//! All dynamics are pure functions of `(state, action, rng)`. Observations are
//! normalized to `[0, 1]` per dimension with fixed per-domain bounds, and
//! [`Environment::state_from_observation`] inverts that map so rollouts can be
//! started from any observation.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::SimRng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    MountainCar,
    PuddleWorld,
    Acrobot,
    Catcher,
}

impl Domain {
    pub const ALL: [Domain; 4] = [
        Domain::MountainCar,
        Domain::PuddleWorld,
        Domain::Acrobot,
        Domain::Catcher,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Domain::MountainCar => "mountain_car",
            Domain::PuddleWorld => "puddle_world",
            Domain::Acrobot => "acrobot",
            Domain::Catcher => "catcher",
        }
    }

    pub fn obs_dim(self) -> usize {
        match self {
            Domain::MountainCar | Domain::PuddleWorld => 2,
            Domain::Acrobot | Domain::Catcher => 4,
        }
    }

    pub fn num_actions(self) -> usize {
        match self {
            Domain::PuddleWorld => 4,
            _ => 3,
        }
    }

    pub(crate) fn tag(self) -> u8 {
        match self {
            Domain::MountainCar => 0,
            Domain::PuddleWorld => 1,
            Domain::Acrobot => 2,
            Domain::Catcher => 3,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Result<Self> {
        Domain::ALL
            .get(tag as usize)
            .copied()
            .ok_or_else(|| Error::Format(format!("unknown domain tag {tag}")))
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Domain::ALL
            .into_iter()
            .find(|d| d.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown domain '{s}'")))
    }
}

/// Geometry and physics constants that are free parameters of the domains.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    /// Episode length cut-off; the step that reaches it is flagged truncated.
    pub cutoff: usize,
    pub puddle_step: f64,
    pub puddle_noise: f64,
    /// Goal is reached once `(1 - x) + (1 - y) <= puddle_goal_radius`.
    pub puddle_goal_radius: f64,
    pub puddle_penalty: f64,
    /// Capsules as `[x0, y0, x1, y1, radius]`.
    pub puddles: Vec<[f64; 5]>,
    pub catcher_paddle_speed: f64,
    pub catcher_fall_speed: f64,
    pub catcher_half_width: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            cutoff: 1000,
            puddle_step: 0.05,
            puddle_noise: 0.01,
            puddle_goal_radius: 0.1,
            puddle_penalty: 400.0,
            puddles: vec![[0.1, 0.75, 0.45, 0.75, 0.1], [0.45, 0.4, 0.45, 0.8, 0.1]],
            catcher_paddle_speed: 0.05,
            catcher_fall_speed: 0.04,
            catcher_half_width: 0.1,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cutoff == 0 {
            return Err(Error::invalid("cutoff must be positive"));
        }
        let positive = [
            ("puddle_step", self.puddle_step),
            ("puddle_goal_radius", self.puddle_goal_radius),
            ("catcher_paddle_speed", self.catcher_paddle_speed),
            ("catcher_fall_speed", self.catcher_fall_speed),
            ("catcher_half_width", self.catcher_half_width),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        if !(self.puddle_noise >= 0.0 && self.puddle_penalty >= 0.0) {
            return Err(Error::invalid("puddle noise and penalty must be non-negative"));
        }
        Ok(())
    }
}

/// Unnormalized state variables of each domain.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RawState {
    MountainCar {
        position: f64,
        velocity: f64,
    },
    PuddleWorld {
        x: f64,
        y: f64,
    },
    Acrobot {
        theta1: f64,
        theta2: f64,
        dtheta1: f64,
        dtheta2: f64,
    },
    Catcher {
        paddle_x: f64,
        paddle_velocity: f64,
        apple_x: f64,
        apple_y: f64,
    },
}

impl RawState {
    pub fn domain(&self) -> Domain {
        match self {
            RawState::MountainCar { .. } => Domain::MountainCar,
            RawState::PuddleWorld { .. } => Domain::PuddleWorld,
            RawState::Acrobot { .. } => Domain::Acrobot,
            RawState::Catcher { .. } => Domain::Catcher,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvState {
    pub raw: RawState,
    /// Steps taken in the current episode.
    pub steps: usize,
    pub done: bool,
}

impl EnvState {
    fn fresh(raw: RawState) -> Self {
        EnvState {
            raw,
            steps: 0,
            done: false,
        }
    }

    pub fn domain(&self) -> Domain {
        self.raw.domain()
    }
}

/// One environment step.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    /// 0 exactly when `next_obs` is terminal, otherwise 1.
    pub discount: f64,
    /// Set when the episode was cut off; such transitions keep discount 1.
    pub truncated: bool,
}

impl Transition {
    pub fn is_terminal(&self) -> bool {
        self.discount == 0.0
    }
}

pub const MC_POSITION: (f64, f64) = (-1.2, 0.6);
pub const MC_VELOCITY: (f64, f64) = (-0.07, 0.07);
const MC_GOAL: f64 = 0.5;

const ACROBOT_DT: f64 = 0.05;
const ACROBOT_SUBSTEPS: usize = 4;
pub const ACROBOT_MAX_VEL1: f64 = 4.0 * PI;
pub const ACROBOT_MAX_VEL2: f64 = 9.0 * PI;

/// A domain bound to its constants.
#[derive(Clone, Debug, PartialEq)]
pub struct Environment {
    pub domain: Domain,
    pub config: EnvConfig,
}

impl Environment {
    pub fn new(domain: Domain) -> Self {
        Environment {
            domain,
            config: EnvConfig::default(),
        }
    }

    pub fn with_config(domain: Domain, config: EnvConfig) -> Result<Self> {
        config.validate()?;
        Ok(Environment { domain, config })
    }

    pub fn num_actions(&self) -> usize {
        self.domain.num_actions()
    }

    pub fn obs_dim(&self) -> usize {
        self.domain.obs_dim()
    }

    /// Draws a start state from the domain's start distribution.
    pub fn reset(&self, rng: &mut SimRng) -> (EnvState, Vec<f64>) {
        let raw = match self.domain {
            Domain::MountainCar => RawState::MountainCar {
                position: rng.random_range(-0.6..=-0.4),
                velocity: 0.0,
            },
            Domain::PuddleWorld => loop {
                let (x, y) = (rng.random::<f64>(), rng.random::<f64>());
                if !self.puddle_goal(x, y) {
                    break RawState::PuddleWorld { x, y };
                }
            },
            Domain::Acrobot => RawState::Acrobot {
                theta1: rng.random_range(-0.1..=0.1),
                theta2: rng.random_range(-0.1..=0.1),
                dtheta1: rng.random_range(-0.1..=0.1),
                dtheta2: rng.random_range(-0.1..=0.1),
            },
            Domain::Catcher => RawState::Catcher {
                paddle_x: 0.5,
                paddle_velocity: 0.0,
                apple_x: rng.random(),
                apple_y: 1.0,
            },
        };
        let state = EnvState::fresh(raw);
        let obs = self.observe(&state);
        (state, obs)
    }

    /// Advances one step. Stepping a finished episode is an error.
    pub fn step(
        &self,
        state: &EnvState,
        action: usize,
        rng: &mut SimRng,
    ) -> Result<(Transition, EnvState)> {
        if state.done {
            return Err(Error::EpisodeFinished);
        }
        if state.domain() != self.domain {
            return Err(Error::DomainMismatch {
                expected: self.domain.to_string(),
                found: state.domain().to_string(),
            });
        }
        if action >= self.num_actions() {
            return Err(Error::invalid(format!(
                "action {action} out of range for {}",
                self.domain
            )));
        }
        let (raw, reward, terminal) = match state.raw {
            RawState::MountainCar { position, velocity } => {
                mountain_car_step(position, velocity, action)
            }
            RawState::PuddleWorld { x, y } => self.puddle_step(x, y, action, rng),
            RawState::Acrobot {
                theta1,
                theta2,
                dtheta1,
                dtheta2,
            } => acrobot_step([theta1, theta2, dtheta1, dtheta2], action),
            RawState::Catcher {
                paddle_x,
                apple_x,
                apple_y,
                ..
            } => self.catcher_step(paddle_x, apple_x, apple_y, action, rng),
        };
        let steps = state.steps + 1;
        let truncated = !terminal && steps >= self.config.cutoff;
        let next = EnvState {
            raw,
            steps,
            done: terminal || truncated,
        };
        let transition = Transition {
            obs: self.observe(state),
            action,
            reward,
            next_obs: self.observe(&next),
            discount: if terminal { 0.0 } else { 1.0 },
            truncated,
        };
        Ok((transition, next))
    }

    /// Normalized observation in `[0, 1]^d`.
    pub fn observe(&self, state: &EnvState) -> Vec<f64> {
        let unit = |v: f64, (lo, hi): (f64, f64)| ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
        match state.raw {
            RawState::MountainCar { position, velocity } => {
                vec![unit(position, MC_POSITION), unit(velocity, MC_VELOCITY)]
            }
            RawState::PuddleWorld { x, y } => vec![x, y],
            RawState::Acrobot {
                theta1,
                theta2,
                dtheta1,
                dtheta2,
            } => vec![
                unit(wrap_angle(theta1), (-PI, PI)),
                unit(wrap_angle(theta2), (-PI, PI)),
                unit(dtheta1, (-ACROBOT_MAX_VEL1, ACROBOT_MAX_VEL1)),
                unit(dtheta2, (-ACROBOT_MAX_VEL2, ACROBOT_MAX_VEL2)),
            ],
            RawState::Catcher {
                paddle_x,
                paddle_velocity,
                apple_x,
                apple_y,
            } => {
                let s = self.config.catcher_paddle_speed;
                vec![paddle_x, unit(paddle_velocity, (-s, s)), apple_x, apple_y]
            }
        }
    }

    /// Inverts [`observe`](Self::observe): builds a fresh (step 0) state.
    pub fn state_from_observation(&self, obs: &[f64]) -> Result<EnvState> {
        if obs.len() != self.obs_dim() {
            return Err(Error::shape(
                "Environment::state_from_observation",
                self.obs_dim(),
                obs.len(),
            ));
        }
        if obs.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("observation outside [0, 1]"));
        }
        let lerp = |u: f64, (lo, hi): (f64, f64)| lo + u * (hi - lo);
        let raw = match self.domain {
            Domain::MountainCar => RawState::MountainCar {
                position: lerp(obs[0], MC_POSITION),
                velocity: lerp(obs[1], MC_VELOCITY),
            },
            Domain::PuddleWorld => RawState::PuddleWorld {
                x: obs[0],
                y: obs[1],
            },
            Domain::Acrobot => RawState::Acrobot {
                theta1: lerp(obs[0], (-PI, PI)),
                theta2: lerp(obs[1], (-PI, PI)),
                dtheta1: lerp(obs[2], (-ACROBOT_MAX_VEL1, ACROBOT_MAX_VEL1)),
                dtheta2: lerp(obs[3], (-ACROBOT_MAX_VEL2, ACROBOT_MAX_VEL2)),
            },
            Domain::Catcher => {
                let s = self.config.catcher_paddle_speed;
                RawState::Catcher {
                    paddle_x: obs[0],
                    paddle_velocity: lerp(obs[1], (-s, s)),
                    apple_x: obs[2],
                    apple_y: obs[3],
                }
            }
        };
        Ok(EnvState::fresh(raw))
    }

    /// Whether `state` is a goal/terminal configuration of the domain.
    pub fn is_goal(&self, state: &EnvState) -> bool {
        match state.raw {
            RawState::MountainCar { position, .. } => position >= MC_GOAL,
            RawState::PuddleWorld { x, y } => self.puddle_goal(x, y),
            RawState::Acrobot { theta1, theta2, .. } => acrobot_goal(theta1, theta2),
            RawState::Catcher { .. } => false,
        }
    }

    /// Action of the fixed data-collection policy for this domain.
    pub fn data_policy_action(&self, state: &EnvState, rng: &mut SimRng) -> usize {
        let n = self.num_actions();
        match state.raw {
            RawState::MountainCar { velocity, .. } => {
                if rng.random::<f64>() < 0.1 {
                    rng.random_range(0..n)
                } else if velocity > 0.0 {
                    2
                } else if velocity < 0.0 {
                    0
                } else {
                    1
                }
            }
            RawState::PuddleWorld { .. } => {
                if rng.random::<f64>() < 0.5 {
                    PW_NORTH
                } else {
                    PW_EAST
                }
            }
            RawState::Acrobot { dtheta1, .. } => {
                // Pump energy: the reaction of a torque on the elbow against
                // the first link's swing accelerates that swing.
                if rng.random::<f64>() < 0.1 {
                    rng.random_range(0..n)
                } else if dtheta1 > 0.0 {
                    0
                } else if dtheta1 < 0.0 {
                    2
                } else {
                    1
                }
            }
            RawState::Catcher {
                paddle_x, apple_x, ..
            } => {
                if rng.random::<f64>() < 0.5 {
                    if apple_x < paddle_x {
                        0
                    } else if apple_x > paddle_x {
                        2
                    } else {
                        1
                    }
                } else {
                    rng.random_range(0..n)
                }
            }
        }
    }

    fn puddle_goal(&self, x: f64, y: f64) -> bool {
        (1.0 - x) + (1.0 - y) <= self.config.puddle_goal_radius
    }

    /// Total puddle penalty (a non-positive number) at `(x, y)`.
    pub fn puddle_cost(&self, x: f64, y: f64) -> f64 {
        self.config
            .puddles
            .iter()
            .map(|&[x0, y0, x1, y1, radius]| {
                let depth = radius - segment_distance((x, y), (x0, y0), (x1, y1));
                if depth > 0.0 {
                    -self.config.puddle_penalty * depth
                } else {
                    0.0
                }
            })
            .sum()
    }

    fn puddle_step(&self, x: f64, y: f64, action: usize, rng: &mut SimRng) -> (RawState, f64, bool) {
        let (dx, dy) = match action {
            PW_NORTH => (0.0, 1.0),
            PW_EAST => (1.0, 0.0),
            PW_SOUTH => (0.0, -1.0),
            _ => (-1.0, 0.0),
        };
        let (nx_noise, ny_noise) = if self.config.puddle_noise > 0.0 {
            let normal = Normal::new(0.0, self.config.puddle_noise).expect("validated noise");
            (normal.sample(rng), normal.sample(rng))
        } else {
            (0.0, 0.0)
        };
        let step = self.config.puddle_step;
        let nx = (x + dx * step + nx_noise).clamp(0.0, 1.0);
        let ny = (y + dy * step + ny_noise).clamp(0.0, 1.0);
        let reward = -1.0 + self.puddle_cost(nx, ny);
        (RawState::PuddleWorld { x: nx, y: ny }, reward, self.puddle_goal(nx, ny))
    }

    fn catcher_step(
        &self,
        paddle_x: f64,
        apple_x: f64,
        apple_y: f64,
        action: usize,
        rng: &mut SimRng,
    ) -> (RawState, f64, bool) {
        let cfg = &self.config;
        let velocity = (action as f64 - 1.0) * cfg.catcher_paddle_speed;
        let paddle_x = (paddle_x + velocity).clamp(0.0, 1.0);
        let apple_y = apple_y - cfg.catcher_fall_speed;
        let mut state = RawState::Catcher {
            paddle_x,
            paddle_velocity: velocity,
            apple_x,
            apple_y: apple_y.max(0.0),
        };
        if apple_y > 1e-12 {
            return (state, 0.0, false);
        }
        if (paddle_x - apple_x).abs() <= cfg.catcher_half_width + 1e-12 {
            state = RawState::Catcher {
                paddle_x,
                paddle_velocity: velocity,
                apple_x: rng.random(),
                apple_y: 1.0,
            };
            (state, 1.0, false)
        } else {
            (state, -1.0, true)
        }
    }
}

pub const PW_NORTH: usize = 0;
pub const PW_EAST: usize = 1;
pub const PW_SOUTH: usize = 2;
pub const PW_WEST: usize = 3;

fn mountain_car_step(position: f64, velocity: f64, action: usize) -> (RawState, f64, bool) {
    let throttle = action as f64 - 1.0;
    let mut v = (velocity + 0.001 * throttle - 0.0025 * (3.0 * position).cos())
        .clamp(MC_VELOCITY.0, MC_VELOCITY.1);
    let mut p = position + v;
    if p <= MC_POSITION.0 {
        p = MC_POSITION.0;
        v = 0.0;
    }
    p = p.min(MC_POSITION.1);
    (
        RawState::MountainCar {
            position: p,
            velocity: v,
        },
        -1.0,
        p >= MC_GOAL,
    )
}

fn wrap_angle(theta: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let w = (theta + PI).rem_euclid(two_pi) - PI;
    // rem_euclid can round up to exactly 2*pi
    if w >= PI {
        w - two_pi
    } else {
        w
    }
}

fn acrobot_goal(theta1: f64, theta2: f64) -> bool {
    -theta1.cos() - (theta1 + theta2).cos() > 1.0
}

fn acrobot_accel(s: [f64; 4], torque: f64) -> (f64, f64) {
    const M1: f64 = 1.0;
    const M2: f64 = 1.0;
    const L1: f64 = 1.0;
    const LC1: f64 = 0.5;
    const LC2: f64 = 0.5;
    const I1: f64 = 1.0;
    const I2: f64 = 1.0;
    const G: f64 = 9.8;
    let [t1, t2, dt1, dt2] = s;
    let d1 = M1 * LC1 * LC1 + M2 * (L1 * L1 + LC2 * LC2 + 2.0 * L1 * LC2 * t2.cos()) + I1 + I2;
    let d2 = M2 * (LC2 * LC2 + L1 * LC2 * t2.cos()) + I2;
    let phi2 = M2 * LC2 * G * (t1 + t2 - PI / 2.0).cos();
    let phi1 = -M2 * L1 * LC2 * dt2 * dt2 * t2.sin()
        - 2.0 * M2 * L1 * LC2 * dt2 * dt1 * t2.sin()
        + (M1 * LC1 + M2 * L1) * G * (t1 - PI / 2.0).cos()
        + phi2;
    let ddt2 = (torque + d2 / d1 * phi1 - M2 * L1 * LC2 * dt1 * dt1 * t2.sin() - phi2)
        / (M2 * LC2 * LC2 + I2 - d2 * d2 / d1);
    let ddt1 = -(d2 * ddt2 + phi1) / d1;
    (ddt1, ddt2)
}

fn acrobot_step(mut s: [f64; 4], action: usize) -> (RawState, f64, bool) {
    let torque = action as f64 - 1.0;
    for _ in 0..ACROBOT_SUBSTEPS {
        let (a1, a2) = acrobot_accel(s, torque);
        s[2] = (s[2] + ACROBOT_DT * a1).clamp(-ACROBOT_MAX_VEL1, ACROBOT_MAX_VEL1);
        s[3] = (s[3] + ACROBOT_DT * a2).clamp(-ACROBOT_MAX_VEL2, ACROBOT_MAX_VEL2);
        s[0] += ACROBOT_DT * s[2];
        s[1] += ACROBOT_DT * s[3];
    }
    let theta1 = wrap_angle(s[0]);
    let theta2 = wrap_angle(s[1]);
    (
        RawState::Acrobot {
            theta1,
            theta2,
            dtheta1: s[2],
            dtheta2: s[3],
        },
        -1.0,
        acrobot_goal(theta1, theta2),
    )
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (abx, aby) = (b.0 - a.0, b.1 - a.1);
    let len2 = abx * abx + aby * aby;
    let t = if len2 > 0.0 {
        (((p.0 - a.0) * abx + (p.1 - a.1) * aby) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (cx, cy) = (a.0 + t * abx, a.1 + t * aby);
    ((p.0 - cx).powi(2) + (p.1 - cy).powi(2)).sqrt()
}

/// A finite-action episodic process, abstracted so value estimators can run
/// on the benchmark domains and on small test MDPs alike.
pub trait Episodic {
    type State: Clone;

    fn num_actions(&self) -> usize;

    /// Returns `(reward, next_state, episode_over)`.
    fn transition(
        &self,
        state: &Self::State,
        action: usize,
        rng: &mut SimRng,
    ) -> Result<(f64, Self::State, bool)>;
}

impl Episodic for Environment {
    type State = EnvState;

    fn num_actions(&self) -> usize {
        self.domain.num_actions()
    }

    fn transition(
        &self,
        state: &EnvState,
        action: usize,
        rng: &mut SimRng,
    ) -> Result<(f64, EnvState, bool)> {
        let (t, next) = self.step(state, action, rng)?;
        let over = next.done;
        Ok((t.reward, next, over))
    }
}

/// A stationary policy over the states of an [`Episodic`] process.
pub trait Policy<S> {
    fn act(&self, state: &S, rng: &mut SimRng) -> Result<usize>;
}

/// The fixed data-collection policy of a domain.
pub struct DataPolicy<'a>(pub &'a Environment);

impl Policy<EnvState> for DataPolicy<'_> {
    fn act(&self, state: &EnvState, rng: &mut SimRng) -> Result<usize> {
        Ok(self.0.data_policy_action(state, rng))
    }
}
