use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{seeded, SimRng};

/// Tolerance on transition-row sums accepted when validating an MDP.
pub const ROW_SUM_TOLERANCE: f64 = 1e-12;

/// Tolerance on policy row sums accepted by [`exact_expected_reward`].
pub const POLICY_ROW_TOLERANCE: f64 = 1e-9;

/// A tabular MDP with dense transition and reward tensors, both indexed
/// `[state][action][next_state]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMdp")]
pub struct MdpSpec {
    pub num_states: usize,
    pub num_actions: usize,
    pub seed: u64,
    pub transitions: Vec<Vec<Vec<f64>>>,
    pub rewards: Vec<Vec<Vec<f64>>>,
}

#[derive(Deserialize)]
struct RawMdp {
    num_states: usize,
    num_actions: usize,
    seed: u64,
    transitions: Vec<Vec<Vec<f64>>>,
    rewards: Vec<Vec<Vec<f64>>>,
}

impl TryFrom<RawMdp> for MdpSpec {
    type Error = Error;

    fn try_from(raw: RawMdp) -> Result<Self> {
        MdpSpec::new(
            raw.num_states,
            raw.num_actions,
            raw.seed,
            raw.transitions,
            raw.rewards,
        )
    }
}

impl MdpSpec {
    /// Builds an MDP from explicit tensors, checking shapes and that every
    /// transition row is a probability distribution.
    ///
    /// The mixed-sign reward requirement only applies to generated MDPs, so
    /// hand-built ones (constant rewards, dominance fixtures) are accepted.
    pub fn new(
        num_states: usize,
        num_actions: usize,
        seed: u64,
        transitions: Vec<Vec<Vec<f64>>>,
        rewards: Vec<Vec<Vec<f64>>>,
    ) -> Result<Self> {
        if num_states == 0 || num_actions == 0 {
            return Err(Error::invalid("MDP needs at least one state and one action"));
        }
        check_shape("transitions", &transitions, num_states, num_actions)?;
        check_shape("rewards", &rewards, num_states, num_actions)?;
        for (s, per_state) in transitions.iter().enumerate() {
            for (a, row) in per_state.iter().enumerate() {
                if row.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
                    return Err(Error::invalid(format!(
                        "transition row ({s}, {a}) has a negative or non-finite entry"
                    )));
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                    return Err(Error::invalid(format!(
                        "transition row ({s}, {a}) sums to {sum}"
                    )));
                }
            }
        }
        if rewards.iter().flatten().flatten().any(|r| !r.is_finite()) {
            return Err(Error::invalid("rewards must be finite"));
        }
        Ok(Self {
            num_states,
            num_actions,
            seed,
            transitions,
            rewards,
        })
    }

    /// Expected immediate reward of taking `action` in `state`:
    /// `sum_{s'} P[s][a][s'] * R[s][a][s']`.
    pub fn expected_reward(&self, state: usize, action: usize) -> f64 {
        self.transitions[state][action]
            .iter()
            .zip(&self.rewards[state][action])
            .map(|(p, r)| p * r)
            .sum()
    }

    /// The full `[state][action]` table of expected immediate rewards.
    pub fn expected_reward_table(&self) -> Vec<Vec<f64>> {
        (0..self.num_states)
            .map(|s| {
                (0..self.num_actions)
                    .map(|a| self.expected_reward(s, a))
                    .collect()
            })
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

fn check_shape(
    name: &str,
    tensor: &[Vec<Vec<f64>>],
    num_states: usize,
    num_actions: usize,
) -> Result<()> {
    let ok = tensor.len() == num_states
        && tensor.iter().all(|per_state| {
            per_state.len() == num_actions && per_state.iter().all(|row| row.len() == num_states)
        });
    if ok {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "{name} must have shape [{num_states}][{num_actions}][{num_states}]"
        )))
    }
}

/// Draws a random MDP: transition rows are i.i.d. uniform(0, 1) entries
/// normalized to sum to one, rewards are uniform on [-1, 1].
///
/// The reward tensor is redrawn until it holds both signs, which only matters
/// for tiny MDPs. Identical `(num_states, num_actions, seed)` always give a
/// bit-identical result.
pub fn generate_random_mdp(num_states: usize, num_actions: usize, seed: u64) -> Result<MdpSpec> {
    if num_states < 2 || num_actions < 2 {
        return Err(Error::invalid(format!(
            "random MDP needs num_states >= 2 and num_actions >= 2, got ({num_states}, {num_actions})"
        )));
    }
    let mut rng = seeded(seed);

    let transitions = (0..num_states)
        .map(|_| {
            (0..num_actions)
                .map(|_| {
                    let raw: Vec<f64> = (0..num_states)
                        // strictly positive
                        .map(|_| 1.0 - rng.random::<f64>())
                        .collect();
                    let total: f64 = raw.iter().sum();
                    raw.into_iter().map(|x| x / total).collect()
                })
                .collect()
        })
        .collect();

    let rewards = loop {
        let rewards: Vec<Vec<Vec<f64>>> = (0..num_states)
            .map(|_| {
                (0..num_actions)
                    .map(|_| {
                        (0..num_states)
                            .map(|_| rng.random_range(-1.0..=1.0))
                            .collect()
                    })
                    .collect()
            })
            .collect();
        let flat = rewards.iter().flatten().flatten();
        let has_pos = flat.clone().any(|&r: &f64| r > 0.0);
        let has_neg = flat.clone().any(|&r: &f64| r < 0.0);
        if has_pos && has_neg {
            break rewards;
        }
    };

    MdpSpec::new(num_states, num_actions, seed, transitions, rewards)
}

/// Samples one transition from `(state, action)`.
pub fn mdp_step(
    mdp: &MdpSpec,
    state: usize,
    action: usize,
    rng: &mut SimRng,
) -> Result<(usize, f64)> {
    if state >= mdp.num_states || action >= mdp.num_actions {
        return Err(Error::invalid(format!(
            "(state {state}, action {action}) outside MDP with {} states and {} actions",
            mdp.num_states, mdp.num_actions
        )));
    }
    let row = &mdp.transitions[state][action];
    let next = sample_categorical(row, rng);
    Ok((next, mdp.rewards[state][action][next]))
}

/// Inverse-CDF draw from a probability vector. Falls back to the last index
/// with positive mass if rounding leaves the draw beyond the cumulative sum.
pub(crate) fn sample_categorical(probs: &[f64], rng: &mut SimRng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

/// Exact expected one-step reward of a stochastic policy with start states
/// drawn uniformly: `(1/|S|) sum_s sum_a pi[s][a] sum_{s'} P[s][a][s'] R[s][a][s']`.
pub fn exact_expected_reward(mdp: &MdpSpec, action_probs: &[Vec<f64>]) -> Result<f64> {
    if action_probs.len() != mdp.num_states
        || action_probs.iter().any(|row| row.len() != mdp.num_actions)
    {
        return Err(Error::invalid(format!(
            "policy must have shape [{}][{}]",
            mdp.num_states, mdp.num_actions
        )));
    }
    let mut total = 0.0;
    for (s, row) in action_probs.iter().enumerate() {
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > POLICY_ROW_TOLERANCE || row.iter().any(|&p| !(p >= 0.0)) {
            return Err(Error::invalid(format!(
                "policy row {s} is not a probability distribution (sum {sum})"
            )));
        }
        total += row
            .iter()
            .enumerate()
            .map(|(a, &p)| p * mdp.expected_reward(s, a))
            .sum::<f64>();
    }
    Ok(total / mdp.num_states as f64)
}

/// One-hot `[state][action]` matrix for a deterministic policy.
pub fn one_hot_policy(policy: &[usize], num_actions: usize) -> Vec<Vec<f64>> {
    policy
        .iter()
        .map(|&a| {
            let mut row = vec![0.0; num_actions];
            row[a] = 1.0;
            row
        })
        .collect()
}

/// The optimal deterministic policy and its value.
///
/// With uniform start states the objective separates per state, so the
/// per-state argmax of the expected immediate reward is globally optimal.
/// Ties go to the lowest action index.
pub fn optimal_deterministic_policy(mdp: &MdpSpec) -> Result<(Vec<usize>, f64)> {
    let policy: Vec<usize> = (0..mdp.num_states)
        .map(|s| {
            let mut best = 0;
            let mut best_value = mdp.expected_reward(s, 0);
            for a in 1..mdp.num_actions {
                let value = mdp.expected_reward(s, a);
                if value > best_value {
                    best = a;
                    best_value = value;
                }
            }
            best
        })
        .collect();
    let value = exact_expected_reward(mdp, &one_hot_policy(&policy, mdp.num_actions))?;
    Ok((policy, value))
}
