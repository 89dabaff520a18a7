//! Annealed on-policy Metropolis-Hastings over policy parameters.
//!
//! The chain targets `prior(theta) * exp(r(theta) / T)` where `r` is a noisy
//! utility estimate and `T` is cooled geometrically after every step. A
//! proposal whose estimate beats the current one is taken outright; any other
//! proposal is accepted when `exp(delta log target) >= p` for a fresh
//! `p ~ U(0, 1)`. All density arithmetic happens in log space.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::envs::{exact_expected_reward, Environment, MdpSpec};
use crate::error::{Error, Result};
use crate::estimator::{estimate_on_policy, EstimatorConfig};
use crate::policy::{
    init_params, log_prior_density, propose, tabular_action_table, ParamVector, PolicySpec,
    ProposalConfig,
};
use crate::rng::SimRng;

/// Geometric cooling `T_i = T_0 * rate^i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnealSchedule {
    pub initial_temperature: f64,
    pub cooling_rate: f64,
}

impl AnnealSchedule {
    pub fn new(initial_temperature: f64, cooling_rate: f64) -> Result<Self> {
        if !(initial_temperature > 0.0) || !initial_temperature.is_finite() {
            return Err(Error::invalid(format!(
                "requirement T > 0 violated: initial temperature {initial_temperature}"
            )));
        }
        if !(cooling_rate > 0.0 && cooling_rate < 1.0) {
            return Err(Error::invalid(format!(
                "requirement cooling rate in (0, 1) violated: {cooling_rate}"
            )));
        }
        Ok(Self {
            initial_temperature,
            cooling_rate,
        })
    }

    /// A schedule that never cools. Only for verifying the sampler at a
    /// fixed temperature; [`run_chain`] requires a proper cooling rate.
    pub fn frozen(temperature: f64) -> Result<Self> {
        if !(temperature > 0.0) || !temperature.is_finite() {
            return Err(Error::invalid(format!("temperature must be positive, got {temperature}")));
        }
        Ok(Self {
            initial_temperature: temperature,
            cooling_rate: 1.0,
        })
    }

    pub fn temperature_at(&self, iteration: usize) -> f64 {
        (self.initial_temperature.ln() + iteration as f64 * self.cooling_rate.ln()).exp()
    }
}

/// Loop state of the chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub theta: ParamVector,
    pub reward_estimate: f64,
    pub temperature: f64,
    pub iteration: usize,
}

/// One row of a chain (or gradient-ascent) trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub iteration: usize,
    pub reward: f64,
    pub accepted: bool,
    pub greedy: bool,
    pub temperature: f64,
    pub elapsed_s: f64,
}

pub const TRACE_HEADER: &str = "iteration,reward,accepted,greedy,temperature,elapsed_s";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChainTrace {
    pub records: Vec<StepRecord>,
}

/// 17 significant digits, enough to round-trip any f64.
fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

impl ChainTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.reward).collect()
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        self.records.iter().filter(|r| r.accepted).count() as f64 / self.records.len() as f64
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{TRACE_HEADER}")?;
        for r in &self.records {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                r.iteration,
                fmt_f64(r.reward),
                r.accepted,
                r.greedy,
                fmt_f64(r.temperature),
                fmt_f64(r.elapsed_s)
            )?;
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("csv is ascii")
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = std::io::BufWriter::new(file);
        self.write_csv(&mut out)
            .and_then(|_| out.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(TRACE_HEADER) {
            return Err(Error::invalid("trace csv header mismatch"));
        }
        let bad = |line: &str| Error::invalid(format!("malformed trace row `{line}`"));
        let records = lines
            .filter(|l| !l.is_empty())
            .map(|line| {
                let f: Vec<&str> = line.split(',').collect();
                if f.len() != 6 {
                    return Err(bad(line));
                }
                Ok(StepRecord {
                    iteration: f[0].parse().map_err(|_| bad(line))?,
                    reward: f[1].parse().map_err(|_| bad(line))?,
                    accepted: f[2].parse().map_err(|_| bad(line))?,
                    greedy: f[3].parse().map_err(|_| bad(line))?,
                    temperature: f[4].parse().map_err(|_| bad(line))?,
                    elapsed_s: f[5].parse().map_err(|_| bad(line))?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { records })
    }
}

/// Source of the utility `r(theta)` used by the chain.
pub trait UtilityEstimator {
    fn estimate(&mut self, theta: &ParamVector, rng: &mut SimRng) -> Result<f64>;
}

/// Monte Carlo estimates by running the policy in its environment.
#[derive(Debug, Clone)]
pub struct OnPolicyEstimator<'a> {
    pub env: &'a Environment,
    pub spec: PolicySpec,
    pub config: EstimatorConfig,
}

impl UtilityEstimator for OnPolicyEstimator<'_> {
    fn estimate(&mut self, theta: &ParamVector, rng: &mut SimRng) -> Result<f64> {
        estimate_on_policy(self.env, &self.spec, theta, &self.config, rng)
    }
}

/// Noise-free utility of a tabular policy on a known MDP.
#[derive(Debug, Clone)]
pub struct ExactMdpUtility<'a> {
    pub mdp: &'a MdpSpec,
    pub spec: PolicySpec,
}

impl UtilityEstimator for ExactMdpUtility<'_> {
    fn estimate(&mut self, theta: &ParamVector, _rng: &mut SimRng) -> Result<f64> {
        exact_expected_reward(self.mdp, &tabular_action_table(&self.spec, theta)?)
    }
}

impl<F> UtilityEstimator for F
where
    F: FnMut(&ParamVector, &mut SimRng) -> Result<f64>,
{
    fn estimate(&mut self, theta: &ParamVector, rng: &mut SimRng) -> Result<f64> {
        self(theta, rng)
    }
}

/// Symmetric proposal kernel. The acceptance rule omits the Hastings
/// correction, so implementations must have `q(a -> b) = q(b -> a)`.
pub trait ProposalKernel {
    fn propose(&self, theta: &ParamVector, rng: &mut SimRng) -> ParamVector;
}

impl ProposalKernel for ProposalConfig {
    fn propose(&self, theta: &ParamVector, rng: &mut SimRng) -> ParamVector {
        propose(theta, self, rng)
    }
}

/// `log prior(theta) + reward / T`.
pub fn log_target(theta: &ParamVector, reward_estimate: f64, temperature: f64, prior: &ProposalConfig) -> Result<f64> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::contract(format!("temperature must be positive and finite, got {temperature}")));
    }
    if !reward_estimate.is_finite() {
        return Err(Error::contract(format!("reward estimate {reward_estimate} is not finite")));
    }
    Ok(log_prior_density(theta, prior)? + reward_estimate / temperature)
}

/// Log of the Metropolis ratio for moving from `current` to the proposal at
/// the current temperature.
pub fn acceptance_log_ratio(
    current: &ChainState,
    proposed_theta: &ParamVector,
    proposed_reward: f64,
    prior: &ProposalConfig,
) -> Result<f64> {
    let t = current.temperature;
    // Evaluate the reward difference directly so large r/T terms do not
    // cancel catastrophically.
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::contract(format!("temperature must be positive and finite, got {t}")));
    }
    if !proposed_reward.is_finite() || !current.reward_estimate.is_finite() {
        return Err(Error::contract("reward estimates must be finite"));
    }
    let prior_delta = log_prior_density(proposed_theta, prior)? - log_prior_density(&current.theta, prior)?;
    Ok(prior_delta + (proposed_reward - current.reward_estimate) / t)
}

/// `min(1, exp(log_ratio))`.
pub fn acceptance_probability(log_ratio: f64) -> f64 {
    if log_ratio >= 0.0 {
        1.0
    } else {
        log_ratio.exp()
    }
}

/// One iteration of the annealed chain.
///
/// The uniform draw is only consumed on the non-greedy branch, and the
/// temperature is cooled after the accept/reject decision. A rejected step
/// keeps both the parameters and their stored estimate.
pub fn mh_step<E, K>(
    state: &ChainState,
    estimator: &mut E,
    kernel: &K,
    prior: &ProposalConfig,
    cooling_rate: f64,
    rng: &mut SimRng,
) -> Result<(ChainState, StepRecord)>
where
    E: UtilityEstimator + ?Sized,
    K: ProposalKernel + ?Sized,
{
    let proposed = kernel.propose(&state.theta, rng);
    let proposed_reward = estimator.estimate(&proposed, rng)?;

    let (accepted, greedy) = if proposed_reward > state.reward_estimate {
        (true, true)
    } else {
        let alpha = acceptance_log_ratio(state, &proposed, proposed_reward, prior)?.exp();
        let p: f64 = rng.random();
        (alpha >= p, false)
    };

    let temperature = state.temperature * cooling_rate;
    let iteration = state.iteration + 1;
    let next = if accepted {
        ChainState {
            theta: proposed,
            reward_estimate: proposed_reward,
            temperature,
            iteration,
        }
    } else {
        ChainState {
            theta: state.theta.clone(),
            reward_estimate: state.reward_estimate,
            temperature,
            iteration,
        }
    };
    let record = StepRecord {
        iteration,
        reward: next.reward_estimate,
        accepted,
        greedy,
        temperature,
        elapsed_s: 0.0,
    };
    Ok((next, record))
}

/// Everything the chain runner needs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub n_iterations: usize,
    pub schedule: AnnealSchedule,
    pub proposal: ProposalConfig,
    pub prior: ProposalConfig,
    pub estimator: EstimatorConfig,
    /// Record wall-clock time per step; when false `elapsed_s` is zero.
    pub record_wall_clock: bool,
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_iterations == 0 {
            return Err(Error::invalid("requirement n > 0 violated"));
        }
        AnnealSchedule::new(self.schedule.initial_temperature, self.schedule.cooling_rate)?;
        for (name, sigma) in [("proposal", self.proposal.sigma), ("prior", self.prior.sigma)] {
            if !(sigma > 0.0) || !sigma.is_finite() {
                return Err(Error::invalid(format!(
                    "requirement Sigma positive definite violated: {name} sigma {sigma}"
                )));
            }
        }
        self.estimator.validate()
    }
}

/// Output of a chain: the `n + 1` visited parameter vectors (including the
/// initial draw) and one trace record per iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainOutput {
    pub samples: Vec<ParamVector>,
    pub trace: ChainTrace,
    /// Estimate of the initial state.
    pub initial_reward: f64,
    pub seconds: f64,
}

impl ChainOutput {
    pub fn final_theta(&self) -> &ParamVector {
        self.samples.last().expect("chain always holds theta_0")
    }

    /// The visited sample with the highest stored estimate (latest on ties).
    pub fn best_sample(&self) -> &ParamVector {
        let mut best = 0;
        let mut best_reward = self.initial_reward;
        for (i, r) in self.trace.records.iter().enumerate() {
            if r.reward >= best_reward {
                best_reward = r.reward;
                best = i + 1;
            }
        }
        &self.samples[best]
    }
}

/// Runs the annealed chain with on-policy Monte Carlo estimates.
pub fn run_chain(config: &ChainConfig, env: &Environment, spec: &PolicySpec, rng: &mut SimRng) -> Result<ChainOutput> {
    let mut estimator = OnPolicyEstimator {
        env,
        spec: *spec,
        config: config.estimator,
    };
    run_chain_with(config, spec, &mut estimator, &config.proposal, rng)
}

/// Runs the annealed chain with any utility source and proposal kernel.
pub fn run_chain_with<E, K>(
    config: &ChainConfig,
    spec: &PolicySpec,
    estimator: &mut E,
    kernel: &K,
    rng: &mut SimRng,
) -> Result<ChainOutput>
where
    E: UtilityEstimator + ?Sized,
    K: ProposalKernel + ?Sized,
{
    config.validate()?;
    let started = Instant::now();
    let theta = init_params(spec, &config.prior, rng);
    let initial_reward = estimator.estimate(&theta, rng)?;
    let mut state = ChainState {
        theta,
        reward_estimate: initial_reward,
        temperature: config.schedule.initial_temperature,
        iteration: 0,
    };
    let mut samples = Vec::with_capacity(config.n_iterations + 1);
    samples.push(state.theta.clone());
    let mut records = Vec::with_capacity(config.n_iterations);
    for _ in 0..config.n_iterations {
        let (next, mut record) = mh_step(
            &state,
            estimator,
            kernel,
            &config.prior,
            config.schedule.cooling_rate,
            rng,
        )?;
        if config.record_wall_clock {
            record.elapsed_s = started.elapsed().as_secs_f64();
        }
        samples.push(next.theta.clone());
        records.push(record);
        state = next;
    }
    Ok(ChainOutput {
        samples,
        trace: ChainTrace { records },
        initial_reward,
        seconds: started.elapsed().as_secs_f64(),
    })
}

/// Normalized weights `w_k ~ exp(log_priors[k] + utilities[k] / T)` over a
/// finite grid, computed with max-subtraction.
pub fn grid_posterior(utilities: &[f64], log_priors: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if utilities.len() != log_priors.len() || utilities.len() < 2 {
        return Err(Error::invalid("grid needs matching utility and prior vectors of length >= 2"));
    }
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::invalid(format!("temperature must be positive, got {temperature}")));
    }
    if utilities.iter().chain(log_priors).any(|v| !v.is_finite()) {
        return Err(Error::contract("grid values must be finite"));
    }
    let logits: Vec<f64> = utilities
        .iter()
        .zip(log_priors)
        .map(|(u, lp)| lp + u / temperature)
        .collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::contract("grid posterior weights underflowed"));
    }
    Ok(weights.into_iter().map(|w| w / total).collect())
}

/// Posterior mass outside the utility maximizers of the grid, summed directly
/// so it stays resolvable when far below machine epsilon.
pub fn off_maximum_mass(utilities: &[f64], log_priors: &[f64], temperature: f64) -> Result<f64> {
    let weights = grid_posterior(utilities, log_priors, temperature)?;
    let best = utilities.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(weights
        .iter()
        .zip(utilities)
        .filter(|(_, &u)| u < best)
        .map(|(w, _)| w)
        .sum())
}
