//! REINFORCE baseline: plain gradient ascent on `E[G * log pi(a|s, theta)]`
//! with hand-derived gradients, no baseline subtraction.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::envs::{Environment, Observation, TransitionSample};
use crate::error::{Error, Result};
use crate::estimator::{collect_mdp_samples, mean, rollout_episodes, ReplayBuffer};
use crate::policy::{init_params, mlp_forward, softmax_in_place, ParamVector, PolicySpec, ProposalConfig, MLP_INPUTS, MLP_OUTPUTS};
use crate::rng::SimRng;
use crate::sampler::{ChainTrace, StepRecord};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PgConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub buffer_size: usize,
    pub iterations: usize,
    /// Record wall-clock time per step; when false `elapsed_s` is zero.
    pub record_wall_clock: bool,
}

impl PgConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid(format!("learning_rate must be non-negative, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 || self.buffer_size == 0 || self.iterations == 0 {
            return Err(Error::invalid("batch_size, buffer_size and iterations must be positive"));
        }
        if self.batch_size > self.buffer_size {
            return Err(Error::invalid(format!(
                "batch_size {} exceeds buffer_size {}",
                self.batch_size, self.buffer_size
            )));
        }
        Ok(())
    }
}

/// Adds `weight * d/dtheta log pi(action | obs, theta)` into `grad`.
fn accumulate_score(
    spec: &PolicySpec,
    theta: &[f64],
    obs: &Observation,
    action: usize,
    weight: f64,
    grad: &mut [f64],
    scratch: &mut Vec<f64>,
) -> Result<()> {
    match (*spec, obs) {
        (PolicySpec::Tabular { num_states, num_actions }, Observation::Index(s)) => {
            if *s >= num_states || action >= num_actions {
                return Err(Error::contract(format!("sample ({s}, {action}) outside {spec}")));
            }
            let row = s * num_actions..(s + 1) * num_actions;
            scratch.clear();
            scratch.extend_from_slice(&theta[row.clone()]);
            softmax_in_place(scratch);
            for (a, (g, p)) in grad[row].iter_mut().zip(scratch.iter()).enumerate() {
                let indicator = if a == action { 1.0 } else { 0.0 };
                *g += weight * (indicator - p);
            }
            Ok(())
        }
        (PolicySpec::Mlp { hidden }, Observation::Features(x)) => {
            if action >= MLP_OUTPUTS {
                return Err(Error::contract(format!("action {action} outside {spec}")));
            }
            scratch.clear();
            scratch.resize(hidden, 0.0);
            let mut logits = [0.0; MLP_OUTPUTS];
            mlp_forward(hidden, theta, x, scratch, &mut logits);
            softmax_in_place(&mut logits);
            // d log softmax / d logits = onehot - p
            let mut dlogits = [0.0; MLP_OUTPUTS];
            for k in 0..MLP_OUTPUTS {
                dlogits[k] = weight * (if k == action { 1.0 } else { 0.0 } - logits[k]);
            }
            let w2_at = MLP_INPUTS * hidden + hidden;
            let b2_at = w2_at + MLP_OUTPUTS * hidden;
            for k in 0..MLP_OUTPUTS {
                grad[b2_at + k] += dlogits[k];
                for j in 0..hidden {
                    grad[w2_at + k * hidden + j] += dlogits[k] * scratch[j];
                }
            }
            for j in 0..hidden {
                let back: f64 = (0..MLP_OUTPUTS).map(|k| dlogits[k] * theta[w2_at + k * hidden + j]).sum();
                let dz = back * (1.0 - scratch[j] * scratch[j]);
                grad[MLP_INPUTS * hidden + j] += dz;
                for i in 0..MLP_INPUTS {
                    grad[j * MLP_INPUTS + i] += dz * x[i];
                }
            }
            Ok(())
        }
        _ => Err(Error::contract(format!("observation {obs:?} does not fit policy {spec}"))),
    }
}

/// `(1/|B|) sum_b G_b * grad log pi(a_b | s_b, theta)`.
pub fn policy_gradient(
    spec: &PolicySpec,
    theta: &ParamVector,
    batch: &[TransitionSample],
    returns: &[f64],
) -> Result<ParamVector> {
    spec.check(theta)?;
    if batch.is_empty() {
        return Err(Error::invalid("policy gradient of an empty batch"));
    }
    if batch.len() != returns.len() {
        return Err(Error::invalid("batch and returns differ in length"));
    }
    let mut grad = vec![0.0; theta.len()];
    let mut scratch = Vec::new();
    for (sample, &g) in batch.iter().zip(returns) {
        accumulate_score(spec, &theta.values, &sample.state.observe(), sample.action, g, &mut grad, &mut scratch)?;
    }
    let n = batch.len() as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    ParamVector::new(theta.layout, grad)
}

/// The surrogate objective whose gradient [`policy_gradient`] computes:
/// `(1/|B|) sum_b G_b * log pi(a_b | s_b, theta)`.
pub fn surrogate_objective(
    spec: &PolicySpec,
    theta: &ParamVector,
    batch: &[TransitionSample],
    returns: &[f64],
) -> Result<f64> {
    let mut total = 0.0;
    for (sample, &g) in batch.iter().zip(returns) {
        let probs = crate::policy::action_distribution(spec, theta, &sample.state.observe())?;
        total += g * probs[sample.action].ln();
    }
    Ok(total / batch.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PgOutput {
    pub initial: ParamVector,
    pub final_theta: ParamVector,
    pub trace: ChainTrace,
    pub seconds: f64,
}

/// Gradient ascent from `theta_0 ~ N(0, prior.sigma^2 I)`.
pub fn reinforce_run(
    config: &PgConfig,
    env: &Environment,
    spec: &PolicySpec,
    prior: &ProposalConfig,
    rng: &mut SimRng,
) -> Result<PgOutput> {
    config.validate()?;
    let theta = init_params(spec, prior, rng);
    reinforce_from(config, env, spec, theta, rng)
}

/// Gradient ascent from a given starting point.
pub fn reinforce_from(
    config: &PgConfig,
    env: &Environment,
    spec: &PolicySpec,
    theta: ParamVector,
    rng: &mut SimRng,
) -> Result<PgOutput> {
    config.validate()?;
    spec.check(&theta)?;
    let started = Instant::now();
    let initial = theta.clone();
    let mut theta = theta;
    let mut buffer: ReplayBuffer<crate::estimator::ScoredTransition> = ReplayBuffer::new(config.buffer_size)?;
    let mut records = Vec::with_capacity(config.iterations);
    for i in 0..config.iterations {
        let (batch, returns, estimate) = match env {
            Environment::RandomMdp(mdp) => {
                let batch = collect_mdp_samples(mdp, spec, &theta, config.batch_size, rng)?;
                let returns: Vec<f64> = batch.iter().map(|s| s.reward).collect();
                let estimate = mean(&returns);
                (batch, returns, estimate)
            }
            Environment::CartPole(cartpole) => {
                let rollouts = rollout_episodes(cartpole, spec, &theta, config.batch_size, rng)?;
                if rollouts.episode_returns.is_empty() {
                    return Err(Error::Estimation("no completed episodes".into()));
                }
                buffer.clear();
                for t in rollouts.transitions {
                    buffer.push(t);
                }
                let drawn = buffer.sample(config.batch_size, rng)?;
                let returns = drawn.iter().map(|t| t.return_to_go).collect();
                let batch = drawn.into_iter().map(|t| t.sample).collect();
                (batch, returns, mean(&rollouts.episode_returns))
            }
        };
        let grad = policy_gradient(spec, &theta, &batch, &returns)?;
        theta = theta.add_scaled(&grad, config.learning_rate)?;
        records.push(StepRecord {
            iteration: i + 1,
            reward: estimate,
            accepted: true,
            greedy: true,
            temperature: 0.0,
            elapsed_s: if config.record_wall_clock { started.elapsed().as_secs_f64() } else { 0.0 },
        });
    }
    Ok(PgOutput {
        initial,
        final_theta: theta,
        trace: ChainTrace { records },
        seconds: started.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{exact_expected_reward, generate_random_mdp, CartPoleState, EnvState, MdpSpec};
    use crate::policy::tabular_action_table;
    use crate::rng::seeded;
    use rand::Rng;

    fn sample(state: EnvState, action: usize) -> TransitionSample {
        TransitionSample {
            state,
            action,
            next_state: state,
            reward: 0.0,
            terminal: false,
            behavior_log_prob: 0.0,
        }
    }

    #[test]
    fn zero_returns_give_zero_gradient() {
        let spec = PolicySpec::mlp(5);
        let theta = init_params(&spec, &ProposalConfig::new(1.0).unwrap(), &mut seeded(1));
        let batch: Vec<_> = (0..6)
            .map(|i| sample(EnvState::CartPole(CartPoleState::new(0.01 * i as f64, 0.1, -0.02, 0.3)), i % 2))
            .collect();
        let grad = policy_gradient(&spec, &theta, &batch, &[0.0; 6]).unwrap();
        assert!(grad.values.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn uniform_tabular_single_sample() {
        let spec = PolicySpec::tabular(3, 4);
        let theta = ParamVector::zeros(spec);
        let grad = policy_gradient(&spec, &theta, &[sample(EnvState::Discrete(1), 2)], &[1.0]).unwrap();
        for s in 0..3 {
            for a in 0..4 {
                let expected = if s == 1 { (if a == 2 { 1.0 } else { 0.0 }) - 0.25 } else { 0.0 };
                assert!((grad.values[s * 4 + a] - expected).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn tabular_gradient_rows_sum_to_zero() {
        let spec = PolicySpec::tabular(4, 3);
        let mut rng = seeded(3);
        let theta = init_params(&spec, &ProposalConfig::new(2.0).unwrap(), &mut rng);
        let batch: Vec<_> = (0..50).map(|_| sample(EnvState::Discrete(rng.random_range(0..4)), rng.random_range(0..3))).collect();
        let returns: Vec<f64> = (0..50).map(|_| rng.random_range(-1.0..1.0)).collect();
        let grad = policy_gradient(&spec, &theta, &batch, &returns).unwrap();
        for row in grad.values.chunks(3) {
            assert!(row.iter().sum::<f64>().abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_rejects_bad_inputs() {
        let spec = PolicySpec::tabular(2, 2);
        let theta = ParamVector::zeros(spec);
        assert!(policy_gradient(&spec, &theta, &[], &[]).is_err());
        assert!(matches!(
            policy_gradient(&spec, &ParamVector::zeros(PolicySpec::tabular(1, 4)), &[sample(EnvState::Discrete(0), 0)], &[1.0]),
            Err(Error::ContractViolation(_))
        ));
        assert!(policy_gradient(&spec, &theta, &[sample(EnvState::Discrete(5), 0)], &[1.0]).is_err());
    }

    #[test]
    fn zero_learning_rate_freezes_parameters() {
        let mdp = generate_random_mdp(4, 3, 2).unwrap();
        let spec = PolicySpec::tabular(4, 3);
        let env = Environment::RandomMdp(mdp);
        let config = PgConfig { learning_rate: 0.0, batch_size: 64, buffer_size: 64, iterations: 20, record_wall_clock: false };
        let out = reinforce_run(&config, &env, &spec, &ProposalConfig::new(1.0).unwrap(), &mut seeded(1)).unwrap();
        assert_eq!(out.initial, out.final_theta);
        assert_eq!(out.trace.len(), 20);
        assert!(out.trace.records.iter().all(|r| r.accepted && r.greedy));
    }

    fn dominant_mdp() -> MdpSpec {
        // action 1 wins in state 0, action 0 wins in state 1
        let mut mdp = generate_random_mdp(2, 2, 7).unwrap();
        mdp.rewards[0][0] = vec![-0.5, -0.5];
        mdp.rewards[0][1] = vec![0.5, 0.5];
        mdp.rewards[1][0] = vec![0.8, 0.8];
        mdp.rewards[1][1] = vec![-0.2, -0.2];
        mdp
    }

    #[test]
    fn dominant_action_probability_rises() {
        let mdp = dominant_mdp();
        let spec = PolicySpec::tabular(2, 2);
        let env = Environment::RandomMdp(mdp.clone());
        let config = PgConfig { learning_rate: 0.1, batch_size: 128, buffer_size: 128, iterations: 2000, record_wall_clock: false };
        let out = reinforce_from(&config, &env, &spec, ParamVector::zeros(spec), &mut seeded(3)).unwrap();
        let table = tabular_action_table(&spec, &out.final_theta).unwrap();
        assert!(table[0][1] > 0.9 && table[1][0] > 0.9, "{table:?}");
        let value = exact_expected_reward(&mdp, &table).unwrap();
        assert!(value > 0.55);
    }

    #[test]
    fn cartpole_run_produces_full_trace() {
        let spec = PolicySpec::mlp(8);
        let env = Environment::CartPole(Default::default());
        let config = PgConfig { learning_rate: 0.01, batch_size: 64, buffer_size: 256, iterations: 5, record_wall_clock: true };
        let out = reinforce_run(&config, &env, &spec, &ProposalConfig::new(0.5).unwrap(), &mut seeded(2)).unwrap();
        assert_eq!(out.trace.len(), 5);
        assert!(out.trace.records.iter().all(|r| r.reward >= 0.0 && r.reward <= 200.0));
    }
}
