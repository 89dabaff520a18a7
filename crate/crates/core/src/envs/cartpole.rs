use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SimRng;

/// Observation-space bound on the pole angle (41.8 degrees). Failure happens
/// much earlier, at [`CartPole::angle_threshold`].
pub const OBSERVATION_ANGLE_BOUND: f64 = 41.8 * std::f64::consts::PI / 180.0;

/// Cart-pole state. `steps` counts transitions taken in the current episode
/// and drives the episode cap.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CartPoleState {
    pub cart_position: f64,
    pub cart_velocity: f64,
    pub pole_angle: f64,
    pub pole_tip_velocity: f64,
    #[serde(default)]
    pub steps: u32,
}

impl CartPoleState {
    pub fn new(cart_position: f64, cart_velocity: f64, pole_angle: f64, pole_tip_velocity: f64) -> Self {
        Self {
            cart_position,
            cart_velocity,
            pole_angle,
            pole_tip_velocity,
            steps: 0,
        }
    }

    /// The four physical components, in observation order.
    pub fn features(&self) -> [f64; 4] {
        [
            self.cart_position,
            self.cart_velocity,
            self.pole_angle,
            self.pole_tip_velocity,
        ]
    }

    /// Reflection through x = 0. The dynamics commute with this map when the
    /// action is swapped too.
    pub fn mirrored(&self) -> Self {
        Self {
            cart_position: -self.cart_position,
            cart_velocity: -self.cart_velocity,
            pole_angle: -self.pole_angle,
            pole_tip_velocity: -self.pole_tip_velocity,
            steps: self.steps,
        }
    }
}

/// Result of one cart-pole transition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CartPoleStep {
    pub next: CartPoleState,
    pub reward: f64,
    pub terminal: bool,
}

/// Classic cart-pole physics with explicit Euler integration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CartPole {
    pub gravity: f64,
    pub cart_mass: f64,
    pub pole_mass: f64,
    /// Half the pole length.
    pub half_length: f64,
    pub force: f64,
    pub tau: f64,
    pub position_threshold: f64,
    pub angle_threshold: f64,
    pub max_steps: u32,
}

impl Default for CartPole {
    fn default() -> Self {
        Self {
            gravity: 9.8,
            cart_mass: 1.0,
            pole_mass: 0.1,
            half_length: 0.5,
            force: 10.0,
            tau: 0.02,
            position_threshold: 2.4,
            angle_threshold: 12.0 * 2.0 * std::f64::consts::PI / 360.0,
            max_steps: 200,
        }
    }
}

impl CartPole {
    /// Each component uniform on [-0.05, 0.05].
    pub fn reset(&self, rng: &mut SimRng) -> CartPoleState {
        let mut draw = || rng.random_range(-0.05..=0.05);
        CartPoleState {
            cart_position: draw(),
            cart_velocity: draw(),
            pole_angle: draw(),
            pole_tip_velocity: draw(),
            steps: 0,
        }
    }

    /// True when the cart or pole left the allowed region.
    pub fn failed(&self, state: &CartPoleState) -> bool {
        state.cart_position.abs() > self.position_threshold
            || state.pole_angle.abs() > self.angle_threshold
    }

    pub fn is_terminal(&self, state: &CartPoleState) -> bool {
        self.failed(state) || state.steps >= self.max_steps
    }

    /// Applies force left (action 0) or right (action 1) for one time step.
    ///
    /// Reward is 1.0 unless the transition ends in failure. Reaching the step
    /// cap is terminal but still rewarded.
    pub fn step(&self, state: &CartPoleState, action: usize) -> Result<CartPoleStep> {
        if self.is_terminal(state) {
            return Err(Error::contract("cart-pole episode already terminated"));
        }
        let force = match action {
            0 => -self.force,
            1 => self.force,
            other => return Err(Error::invalid(format!("cart-pole action {other} not in {{0, 1}}"))),
        };

        let total_mass = self.cart_mass + self.pole_mass;
        let pole_mass_length = self.pole_mass * self.half_length;
        let (sin, cos) = state.pole_angle.sin_cos();
        let omega = state.pole_tip_velocity;

        let temp = (force + pole_mass_length * omega * omega * sin) / total_mass;
        let angular_acc = (self.gravity * sin - cos * temp)
            / (self.half_length * (4.0 / 3.0 - self.pole_mass * cos * cos / total_mass));
        let linear_acc = temp - pole_mass_length * angular_acc * cos / total_mass;

        let next = CartPoleState {
            cart_position: state.cart_position + self.tau * state.cart_velocity,
            cart_velocity: state.cart_velocity + self.tau * linear_acc,
            pole_angle: state.pole_angle + self.tau * omega,
            pole_tip_velocity: omega + self.tau * angular_acc,
            steps: state.steps + 1,
        };
        let failed = self.failed(&next);
        Ok(CartPoleStep {
            next,
            reward: if failed { 0.0 } else { 1.0 },
            terminal: failed || next.steps >= self.max_steps,
        })
    }
}

/// [`CartPole::reset`] with the standard constants.
pub fn cartpole_reset(rng: &mut SimRng) -> CartPoleState {
    CartPole::default().reset(rng)
}

/// [`CartPole::step`] with the standard constants.
pub fn cartpole_step(state: &CartPoleState, action: usize) -> Result<CartPoleStep> {
    CartPole::default().step(state, action)
}
