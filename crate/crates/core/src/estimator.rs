//! Expected-utility estimators and the decorrelation replay buffer.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::envs::{mdp_step, sample_categorical, CartPole, EnvState, Environment, MdpSpec, Observation, TransitionSample};
use crate::error::{Error, Result};
use crate::policy::{action_distribution, tabular_action_table, ParamVector, PolicySpec};
use crate::rng::SimRng;

/// How a batch of experience is reduced to a single utility estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateMode {
    /// Mean of single-step rewards with uniformly drawn start states.
    PerStepMean,
    /// Mean undiscounted return of complete episodes.
    EpisodicReturn,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub batch_size: usize,
    pub buffer_size: usize,
    pub mode: EstimateMode,
}

impl EstimatorConfig {
    pub fn new(batch_size: usize, buffer_size: usize, mode: EstimateMode) -> Result<Self> {
        let config = Self {
            batch_size,
            buffer_size,
            mode,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        if self.mode == EstimateMode::EpisodicReturn && self.batch_size > self.buffer_size {
            return Err(Error::invalid(format!(
                "batch_size {} exceeds buffer_size {}",
                self.batch_size, self.buffer_size
            )));
        }
        Ok(())
    }

    /// The mode matching an environment.
    pub fn mode_for(env: &Environment) -> EstimateMode {
        match env {
            Environment::RandomMdp(_) => EstimateMode::PerStepMean,
            Environment::CartPole(_) => EstimateMode::EpisodicReturn,
        }
    }
}

/// Bounded FIFO of experience. Pushing into a full buffer evicts the oldest
/// entry.
#[derive(Debug, Clone)]
pub struct ReplayBuffer<T> {
    capacity: usize,
    entries: VecDeque<T>,
}

impl<T: Clone> ReplayBuffer<T> {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::invalid("buffer capacity must be positive"));
        }
        Ok(Self {
            capacity,
            entries: VecDeque::with_capacity(capacity.min(1 << 16)),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    pub fn push(&mut self, item: T) {
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(item);
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.entries.iter()
    }

    /// `k` entries at distinct, uniformly chosen positions.
    pub fn sample(&self, k: usize, rng: &mut SimRng) -> Result<Vec<T>> {
        if k > self.entries.len() {
            return Err(Error::invalid(format!(
                "cannot sample {k} entries from a buffer of {}",
                self.entries.len()
            )));
        }
        Ok(rand::seq::index::sample(rng, self.entries.len(), k)
            .into_iter()
            .map(|i| self.entries[i].clone())
            .collect())
    }
}

/// A transition annotated with the undiscounted return from its step to the
/// end of the episode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredTransition {
    pub sample: TransitionSample,
    pub return_to_go: f64,
}

/// Complete episodes gathered under one policy.
#[derive(Debug, Clone, Default)]
pub struct Rollouts {
    pub transitions: Vec<ScoredTransition>,
    pub episode_returns: Vec<f64>,
}

/// Runs complete cart-pole episodes under `theta` until at least
/// `min_transitions` transitions have been collected.
pub fn rollout_episodes(
    env: &CartPole,
    spec: &PolicySpec,
    theta: &ParamVector,
    min_transitions: usize,
    rng: &mut SimRng,
) -> Result<Rollouts> {
    spec.check(theta)?;
    let mut out = Rollouts::default();
    while out.transitions.len() < min_transitions {
        let start = out.transitions.len();
        let mut state = env.reset(rng);
        loop {
            let obs = Observation::Features(state.features());
            let probs = action_distribution(spec, theta, &obs)?;
            let action = sample_categorical(&probs, rng);
            let step = env.step(&state, action)?;
            out.transitions.push(ScoredTransition {
                sample: TransitionSample {
                    state: EnvState::CartPole(state),
                    action,
                    next_state: EnvState::CartPole(step.next),
                    reward: step.reward,
                    terminal: step.terminal,
                    behavior_log_prob: probs[action].ln(),
                },
                return_to_go: 0.0,
            });
            state = step.next;
            if step.terminal {
                break;
            }
        }
        let mut acc = 0.0;
        for t in out.transitions[start..].iter_mut().rev() {
            acc += t.sample.reward;
            t.return_to_go = acc;
        }
        out.episode_returns.push(acc);
    }
    Ok(out)
}

/// `n` independent one-step transitions on the MDP: start state uniform,
/// action from the tabular policy. The return-to-go of each is its reward.
pub fn collect_mdp_samples(
    mdp: &MdpSpec,
    spec: &PolicySpec,
    theta: &ParamVector,
    n: usize,
    rng: &mut SimRng,
) -> Result<Vec<TransitionSample>> {
    check_mdp_policy(mdp, spec)?;
    let table = tabular_action_table(spec, theta)?;
    (0..n)
        .map(|_| {
            let state = rng.random_range(0..mdp.num_states);
            let action = sample_categorical(&table[state], rng);
            let (next, reward) = mdp_step(mdp, state, action, rng)?;
            Ok(TransitionSample {
                state: EnvState::Discrete(state),
                action,
                next_state: EnvState::Discrete(next),
                reward,
                terminal: false,
                behavior_log_prob: table[state][action].ln(),
            })
        })
        .collect()
}

fn check_mdp_policy(mdp: &MdpSpec, spec: &PolicySpec) -> Result<()> {
    match *spec {
        PolicySpec::Tabular {
            num_states,
            num_actions,
        } if num_states == mdp.num_states && num_actions == mdp.num_actions => Ok(()),
        _ => Err(Error::contract(format!(
            "policy {spec} does not fit an MDP with {} states and {} actions",
            mdp.num_states, mdp.num_actions
        ))),
    }
}

/// On-policy Monte Carlo estimate of the expected utility of `theta`.
///
/// * Random MDP: mean of `batch_size` single-step rewards.
/// * Cart-pole: complete episodes until `batch_size` transitions are
///   collected; the estimate is the mean episode return.
pub fn estimate_on_policy(
    env: &Environment,
    spec: &PolicySpec,
    theta: &ParamVector,
    config: &EstimatorConfig,
    rng: &mut SimRng,
) -> Result<f64> {
    match (env, config.mode) {
        (Environment::RandomMdp(mdp), EstimateMode::PerStepMean) => {
            check_mdp_policy(mdp, spec)?;
            if config.batch_size == 0 {
                return Err(Error::Estimation("empty batch".into()));
            }
            // Inlined version of collect_mdp_samples without materializing the batch.
            let table = tabular_action_table(spec, theta)?;
            let mut total = 0.0;
            for _ in 0..config.batch_size {
                let state = rng.random_range(0..mdp.num_states);
                let action = sample_categorical(&table[state], rng);
                total += mdp_step(mdp, state, action, rng)?.1;
            }
            Ok(total / config.batch_size as f64)
        }
        (Environment::CartPole(cartpole), EstimateMode::EpisodicReturn) => {
            let rollouts = rollout_episodes(cartpole, spec, theta, config.batch_size, rng)?;
            if rollouts.episode_returns.is_empty() {
                return Err(Error::Estimation("no completed episodes".into()));
            }
            Ok(mean(&rollouts.episode_returns))
        }
        (_, mode) => Err(Error::contract(format!(
            "estimate mode {mode:?} does not apply to this environment"
        ))),
    }
}

/// Importance-sampled estimate of the expected one-step utility of `theta`
/// from transitions gathered by another policy. Each reward is weighted by
/// `pi(a|s, theta) / behavior(a|s)`.
pub fn estimate_off_policy(
    behavior_samples: &[TransitionSample],
    spec: &PolicySpec,
    theta: &ParamVector,
    config: &EstimatorConfig,
) -> Result<f64> {
    if config.mode != EstimateMode::PerStepMean {
        return Err(Error::contract("off-policy estimation supports per-step mode only"));
    }
    if behavior_samples.is_empty() {
        return Err(Error::Estimation("no behavior samples".into()));
    }
    let mut total = 0.0;
    for sample in behavior_samples {
        if !sample.behavior_log_prob.is_finite() {
            return Err(Error::contract(format!(
                "behavior probability of action {} is zero or invalid",
                sample.action
            )));
        }
        let target = action_distribution(spec, theta, &sample.state.observe())?[sample.action].ln();
        total += (target - sample.behavior_log_prob).exp() * sample.reward;
    }
    Ok(total / behavior_samples.len() as f64)
}

pub(crate) fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{exact_expected_reward, generate_random_mdp};
    use crate::policy::{init_params, ProposalConfig};
    use crate::rng::seeded;
    use proptest::prelude::*;

    fn mdp_env(s: usize, a: usize, seed: u64) -> (MdpSpec, Environment, PolicySpec) {
        let mdp = generate_random_mdp(s, a, seed).unwrap();
        (mdp.clone(), Environment::RandomMdp(mdp), PolicySpec::tabular(s, a))
    }

    fn per_step(batch: usize) -> EstimatorConfig {
        EstimatorConfig::new(batch, batch, EstimateMode::PerStepMean).unwrap()
    }

    fn mean_and_se(xs: &[f64]) -> (f64, f64) {
        let m = mean(xs);
        let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
        (m, (var / xs.len() as f64).sqrt())
    }

    #[test]
    fn fifo_eviction() {
        let mut buf = ReplayBuffer::new(3).unwrap();
        for i in 0..4 {
            buf.push(i);
        }
        let items: Vec<i32> = buf.iter().copied().collect();
        assert_eq!(items, vec![1, 2, 3]);
        assert_eq!(buf.len(), 3);
        assert!(ReplayBuffer::<i32>::new(0).is_err());
    }

    #[test]
    fn full_draw_is_permutation() {
        let mut buf = ReplayBuffer::new(10).unwrap();
        for i in 0..7 {
            buf.push(i);
        }
        let mut drawn = buf.sample(7, &mut seeded(1)).unwrap();
        drawn.sort();
        assert_eq!(drawn, (0..7).collect::<Vec<_>>());
        assert!(matches!(buf.sample(8, &mut seeded(1)), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn single_draws_are_uniform() {
        let mut buf = ReplayBuffer::new(10).unwrap();
        for i in 0..10usize {
            buf.push(i);
        }
        let mut rng = seeded(3);
        let n = 100_000;
        let mut counts = [0usize; 10];
        for _ in 0..n {
            counts[buf.sample(1, &mut rng).unwrap()[0]] += 1;
        }
        for c in counts {
            assert!((c as f64 / n as f64 - 0.1).abs() < 0.01);
        }
    }

    proptest! {
        #[test]
        fn draws_never_repeat(len in 1usize..60, k_frac in 0.0f64..1.0, seed in any::<u64>()) {
            let mut buf = ReplayBuffer::new(40).unwrap();
            for i in 0..len { buf.push(i); }
            let k = (k_frac * buf.len() as f64) as usize;
            let mut drawn = buf.sample(k, &mut seeded(seed)).unwrap();
            prop_assert_eq!(drawn.len(), k);
            drawn.sort();
            drawn.dedup();
            prop_assert_eq!(drawn.len(), k);
            prop_assert!(buf.len() <= 40);
        }
    }

    #[test]
    fn constant_reward_estimate_is_exact() {
        let (mut mdp, _, spec) = mdp_env(5, 3, 1);
        for r in mdp.rewards.iter_mut().flatten().flatten() {
            *r = 0.3;
        }
        let env = Environment::RandomMdp(mdp);
        let mut rng = seeded(2);
        for _ in 0..5 {
            let theta = init_params(&spec, &ProposalConfig::new(2.0).unwrap(), &mut rng);
            let est = estimate_on_policy(&env, &spec, &theta, &per_step(64), &mut rng).unwrap();
            assert!((est - 0.3).abs() < 1e-15);
        }
    }

    #[test]
    fn on_policy_matches_exact_value() {
        let (mdp, env, spec) = mdp_env(5, 3, 7);
        let theta = ParamVector::zeros(spec);
        let exact = exact_expected_reward(&mdp, &tabular_action_table(&spec, &theta).unwrap()).unwrap();
        let samples = collect_mdp_samples(&mdp, &spec, &theta, 100_000, &mut seeded(4)).unwrap();
        let rewards: Vec<f64> = samples.iter().map(|s| s.reward).collect();
        let (m, se) = mean_and_se(&rewards);
        assert!((m - exact).abs() < 3.0 * se, "{m} vs {exact} (se {se})");
        let est = estimate_on_policy(&env, &spec, &theta, &per_step(100_000), &mut seeded(5)).unwrap();
        assert!((est - exact).abs() < 3.0 * se);
    }

    #[test]
    fn off_policy_identity_weights() {
        let (mdp, _, spec) = mdp_env(4, 3, 9);
        let theta = init_params(&spec, &ProposalConfig::new(1.0).unwrap(), &mut seeded(1));
        let samples = collect_mdp_samples(&mdp, &spec, &theta, 2000, &mut seeded(2)).unwrap();
        let plain = mean(&samples.iter().map(|s| s.reward).collect::<Vec<_>>());
        let est = estimate_off_policy(&samples, &spec, &theta, &per_step(2000)).unwrap();
        assert!((est - plain).abs() < 1e-12);
    }

    #[test]
    fn off_policy_zero_rewards_and_bad_probabilities() {
        let (mdp, _, spec) = mdp_env(3, 2, 4);
        let theta = ParamVector::zeros(spec);
        let mut samples = collect_mdp_samples(&mdp, &spec, &theta, 100, &mut seeded(3)).unwrap();
        for s in &mut samples {
            s.reward = 0.0;
        }
        let target = init_params(&spec, &ProposalConfig::new(3.0).unwrap(), &mut seeded(4));
        assert_eq!(estimate_off_policy(&samples, &spec, &target, &per_step(100)).unwrap(), 0.0);
        samples[3].behavior_log_prob = f64::NEG_INFINITY;
        assert!(matches!(
            estimate_off_policy(&samples, &spec, &target, &per_step(100)),
            Err(Error::ContractViolation(_))
        ));
    }

    #[test]
    fn off_policy_is_unbiased() {
        let (mdp, _, spec) = mdp_env(3, 2, 13);
        let behavior = ParamVector::zeros(spec);
        let target = ParamVector::new(spec, vec![1.0, -0.5, 0.2, 0.9, -1.2, 0.4]).unwrap();
        let exact = exact_expected_reward(&mdp, &tabular_action_table(&spec, &target).unwrap()).unwrap();
        let mut rng = seeded(21);
        let estimates: Vec<f64> = (0..200)
            .map(|_| {
                let batch = collect_mdp_samples(&mdp, &spec, &behavior, 500, &mut rng).unwrap();
                estimate_off_policy(&batch, &spec, &target, &per_step(500)).unwrap()
            })
            .collect();
        let (m, se) = mean_and_se(&estimates);
        assert!((m - exact).abs() < 3.0 * se, "{m} vs {exact} (se {se})");
    }

    #[test]
    fn variance_scales_inversely_with_batch() {
        let (_, env, spec) = mdp_env(5, 3, 3);
        let theta = ParamVector::zeros(spec);
        let mut rng = seeded(77);
        let mut variance = |batch: usize| {
            let xs: Vec<f64> = (0..100)
                .map(|_| estimate_on_policy(&env, &spec, &theta, &per_step(batch), &mut rng).unwrap())
                .collect();
            let (_, se) = mean_and_se(&xs);
            se * se * xs.len() as f64
        };
        let small = variance(250);
        let large = variance(1000);
        let ratio = large / small;
        assert!((0.15..=0.4).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn always_right_cartpole_returns_fall_time() {
        // oracle: fall times over a grid of start states spanning the reset box
        let cartpole = CartPole::default();
        let grid = [-0.05, 0.0, 0.05];
        let mut lo = f64::INFINITY;
        let mut hi = 0.0f64;
        for &x in &grid {
            for &v in &grid {
                for &a in &grid {
                    for &w in &grid {
                        let mut s = crate::envs::CartPoleState::new(x, v, a, w);
                        let mut ret = 0.0;
                        loop {
                            let step = cartpole.step(&s, 1).unwrap();
                            ret += step.reward;
                            s = step.next;
                            if step.terminal {
                                break;
                            }
                        }
                        lo = lo.min(ret);
                        hi = hi.max(ret);
                    }
                }
            }
        }
        assert!(hi < 20.0);

        let spec = PolicySpec::mlp(4);
        let mut values = vec![0.0; spec.num_params()];
        let n = values.len();
        values[n - 1] = 1e3;
        let theta = ParamVector::new(spec, values).unwrap();
        let env = Environment::CartPole(cartpole);
        let config = EstimatorConfig::new(200, 1000, EstimateMode::EpisodicReturn).unwrap();
        let est = estimate_on_policy(&env, &spec, &theta, &config, &mut seeded(5)).unwrap();
        assert!(est >= lo && est <= hi, "{est} not in [{lo}, {hi}]");
    }

    #[test]
    fn rollout_returns_to_go_are_consistent() {
        let spec = PolicySpec::mlp(8);
        let theta = ParamVector::zeros(spec);
        let r = rollout_episodes(&CartPole::default(), &spec, &theta, 300, &mut seeded(3)).unwrap();
        assert!(r.transitions.len() >= 300);
        let starts: Vec<f64> = r
            .transitions
            .iter()
            .enumerate()
            .filter(|(i, _)| *i == 0 || r.transitions[i - 1].sample.terminal)
            .map(|(_, t)| t.return_to_go)
            .collect();
        assert_eq!(starts, r.episode_returns);
        assert!(r.transitions.last().unwrap().sample.terminal);
    }

    #[test]
    fn mismatched_mode_is_rejected() {
        let (_, env, spec) = mdp_env(3, 2, 1);
        let config = EstimatorConfig::new(10, 10, EstimateMode::EpisodicReturn).unwrap();
        let theta = ParamVector::zeros(spec);
        assert!(estimate_on_policy(&env, &spec, &theta, &config, &mut seeded(0)).is_err());
        assert!(EstimatorConfig::new(20, 10, EstimateMode::EpisodicReturn).is_err());
        assert!(EstimatorConfig::new(0, 10, EstimateMode::PerStepMean).is_err());
    }
}
