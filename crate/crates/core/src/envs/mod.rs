//! Environments: a seeded random tabular MDP and a cart-pole simulator.

mod cartpole;
mod mdp;

pub use cartpole::{
    cartpole_reset, cartpole_step, CartPole, CartPoleState, CartPoleStep, OBSERVATION_ANGLE_BOUND,
};
pub use mdp::{
    exact_expected_reward, generate_random_mdp, mdp_step, one_hot_policy,
    optimal_deterministic_policy, MdpSpec, POLICY_ROW_TOLERANCE, ROW_SUM_TOLERANCE,
};
pub(crate) use mdp::sample_categorical;

use serde::{Deserialize, Serialize};

/// The environments the estimators and runners know how to drive.
#[derive(Debug, Clone, PartialEq)]
pub enum Environment {
    RandomMdp(MdpSpec),
    CartPole(CartPole),
}

/// A state of either environment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum EnvState {
    Discrete(usize),
    CartPole(CartPoleState),
}

/// Policy input derived from an environment state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Observation {
    Index(usize),
    Features([f64; 4]),
}

impl EnvState {
    pub fn observe(&self) -> Observation {
        match self {
            EnvState::Discrete(s) => Observation::Index(*s),
            EnvState::CartPole(c) => Observation::Features(c.features()),
        }
    }
}

/// One `(s, a, s')` transition with the log-probability the acting policy
/// assigned to `a`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionSample {
    pub state: EnvState,
    pub action: usize,
    pub next_state: EnvState,
    pub reward: f64,
    pub terminal: bool,
    pub behavior_log_prob: f64,
}
