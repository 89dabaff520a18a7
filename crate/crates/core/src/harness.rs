//! Experiment harness: configuration, seeded trials, aggregation, output
//! files and runtime comparison.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envs::{
    exact_expected_reward, generate_random_mdp, optimal_deterministic_policy, CartPole, Environment, MdpSpec,
};
use crate::error::{Error, Result};
use crate::estimator::{rollout_episodes, EstimateMode, EstimatorConfig};
use crate::policy::{posterior_average_table, tabular_action_table, ParamVector, PolicySpec, ProposalConfig, DEFAULT_HIDDEN};
use crate::reinforce::{reinforce_run, PgConfig};
use crate::rng::{derived, derived_seed, StreamPurpose};
use crate::sampler::{off_maximum_mass, run_chain, AnnealSchedule, ChainConfig, ChainTrace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Experiment {
    RandomMdp,
    Cartpole,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Mh,
    Reinforce,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MhSettings {
    pub initial_temperature: f64,
    pub cooling_rate: f64,
    pub proposal_sigma: f64,
    pub prior_sigma: f64,
    /// Fraction of the chain discarded before posterior averaging.
    pub burn_in_fraction: f64,
}

impl Default for MhSettings {
    fn default() -> Self {
        Self {
            initial_temperature: 1.0,
            cooling_rate: 0.999,
            proposal_sigma: 0.1,
            prior_sigma: 1.0,
            burn_in_fraction: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PgSettings {
    pub learning_rate: f64,
}

impl Default for PgSettings {
    fn default() -> Self {
        Self { learning_rate: 0.1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorSettings {
    pub batch_size: usize,
    pub buffer_size: usize,
}

impl Default for EstimatorSettings {
    fn default() -> Self {
        Self {
            batch_size: 512,
            buffer_size: 512,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MdpDims {
    pub num_states: usize,
    pub num_actions: usize,
}

impl Default for MdpDims {
    fn default() -> Self {
        Self {
            num_states: 10,
            num_actions: 5,
        }
    }
}

/// Every knob of an experiment. Missing JSON fields take the defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub algorithm: Algorithm,
    pub n_iterations: usize,
    pub trials: usize,
    pub master_seed: u64,
    pub mh: MhSettings,
    pub pg: PgSettings,
    pub estimator: EstimatorSettings,
    pub mdp_dims: MdpDims,
    /// Hidden width of the cart-pole network.
    pub hidden_size: usize,
    /// Episodes used to score a final cart-pole policy.
    pub eval_episodes: usize,
    /// Write wall-clock seconds into traces. Turn off for byte-reproducible
    /// trace files.
    pub record_wall_clock: bool,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            experiment: Experiment::RandomMdp,
            algorithm: Algorithm::Mh,
            n_iterations: 10_000,
            trials: 10,
            master_seed: 0,
            mh: MhSettings::default(),
            pg: PgSettings::default(),
            estimator: EstimatorSettings::default(),
            mdp_dims: MdpDims::default(),
            hidden_size: DEFAULT_HIDDEN,
            eval_episodes: 100,
            record_wall_clock: true,
            output_dir: PathBuf::from("out"),
        }
    }
}

fn field_error(field: &'static str, reason: impl Into<String>) -> Error {
    Error::Validation {
        field,
        reason: reason.into(),
    }
}

fn positive(field: &'static str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(field_error(field, format!("must be positive and finite, got {value}")))
    }
}

impl RunConfig {
    /// Default random-MDP experiment: T0 = 1.0, cooling 0.999, batch 512,
    /// 10000 iterations, 10 trials. Prior and proposal share sigma = 2.0;
    /// the narrow 0.1 proposal stalls against noisy batch-512 estimates.
    pub fn random_mdp_default() -> Self {
        Self {
            mh: MhSettings {
                proposal_sigma: 2.0,
                prior_sigma: 2.0,
                ..MhSettings::default()
            },
            output_dir: PathBuf::from("out/random_mdp"),
            ..Self::default()
        }
    }

    /// Default cart-pole experiment: T0 = 1.0, cooling 0.9, buffer 10000,
    /// batch 512, 1000 iterations, 10 trials.
    pub fn cartpole_default() -> Self {
        Self {
            experiment: Experiment::Cartpole,
            n_iterations: 1000,
            mh: MhSettings {
                cooling_rate: 0.9,
                ..MhSettings::default()
            },
            estimator: EstimatorSettings {
                batch_size: 512,
                buffer_size: 10_000,
            },
            output_dir: PathBuf::from("out/cartpole"),
            ..Self::default()
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text)?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_iterations == 0 {
            return Err(field_error("n_iterations", "must be positive"));
        }
        if self.trials == 0 {
            return Err(field_error("trials", "must be at least 1"));
        }
        if self.trials > u32::MAX as usize {
            return Err(field_error("trials", "too many trials"));
        }
        positive("mh.initial_temperature", self.mh.initial_temperature)?;
        if !(self.mh.cooling_rate > 0.0 && self.mh.cooling_rate < 1.0) {
            return Err(field_error("mh.cooling_rate", format!("must lie in (0, 1), got {}", self.mh.cooling_rate)));
        }
        positive("mh.proposal_sigma", self.mh.proposal_sigma)?;
        positive("mh.prior_sigma", self.mh.prior_sigma)?;
        if !(0.0..1.0).contains(&self.mh.burn_in_fraction) {
            return Err(field_error("mh.burn_in_fraction", "must lie in [0, 1)"));
        }
        if !(self.pg.learning_rate >= 0.0) || !self.pg.learning_rate.is_finite() {
            return Err(field_error("pg.learning_rate", "must be non-negative and finite"));
        }
        if self.estimator.batch_size == 0 {
            return Err(field_error("estimator.batch_size", "must be positive"));
        }
        if self.estimator.batch_size > self.estimator.buffer_size {
            return Err(field_error("estimator.buffer_size", "must be at least batch_size"));
        }
        if self.experiment == Experiment::RandomMdp {
            if self.mdp_dims.num_states < 2 {
                return Err(field_error("mdp_dims.num_states", "must be at least 2"));
            }
            if self.mdp_dims.num_actions < 2 {
                return Err(field_error("mdp_dims.num_actions", "must be at least 2"));
            }
        }
        if self.hidden_size == 0 {
            return Err(field_error("hidden_size", "must be positive"));
        }
        if self.eval_episodes == 0 {
            return Err(field_error("eval_episodes", "must be positive"));
        }
        Ok(())
    }

    pub fn policy_spec(&self) -> PolicySpec {
        match self.experiment {
            Experiment::RandomMdp => PolicySpec::tabular(self.mdp_dims.num_states, self.mdp_dims.num_actions),
            Experiment::Cartpole => PolicySpec::mlp(self.hidden_size),
        }
    }

    pub fn estimator_config(&self) -> EstimatorConfig {
        EstimatorConfig {
            batch_size: self.estimator.batch_size,
            buffer_size: self.estimator.buffer_size,
            mode: match self.experiment {
                Experiment::RandomMdp => EstimateMode::PerStepMean,
                Experiment::Cartpole => EstimateMode::EpisodicReturn,
            },
        }
    }

    pub fn chain_config(&self) -> Result<ChainConfig> {
        Ok(ChainConfig {
            n_iterations: self.n_iterations,
            schedule: AnnealSchedule::new(self.mh.initial_temperature, self.mh.cooling_rate)?,
            proposal: ProposalConfig::new(self.mh.proposal_sigma)?,
            prior: ProposalConfig::new(self.mh.prior_sigma)?,
            estimator: self.estimator_config(),
            record_wall_clock: self.record_wall_clock,
        })
    }

    pub fn pg_config(&self) -> PgConfig {
        PgConfig {
            learning_rate: self.pg.learning_rate,
            batch_size: self.estimator.batch_size,
            buffer_size: self.estimator.buffer_size,
            iterations: self.n_iterations,
            record_wall_clock: self.record_wall_clock,
        }
    }

    /// The environment of trial `k`. Random-MDP trials each get their own
    /// MDP, seeded from `(master_seed, k)`.
    pub fn trial_environment(&self, trial: usize) -> Result<Environment> {
        match self.experiment {
            Experiment::RandomMdp => {
                let seed = derived_seed(self.master_seed, StreamPurpose::Environment, trial as u32);
                Ok(Environment::RandomMdp(generate_random_mdp(
                    self.mdp_dims.num_states,
                    self.mdp_dims.num_actions,
                    seed,
                )?))
            }
            Experiment::Cartpole => Ok(Environment::CartPole(CartPole::default())),
        }
    }
}

/// A policy handed to [`evaluate_final_policy`].
#[derive(Debug, Clone, PartialEq)]
pub enum FinalPolicy {
    Params(ParamVector),
    /// Explicit `[state][action]` table (tabular environments only).
    Table(Vec<Vec<f64>>),
}

/// Ground-truth score of a policy: the exact expected reward on an MDP, or
/// the mean return of `episodes` cart-pole episodes drawn from `eval_seed`.
pub fn evaluate_final_policy(
    env: &Environment,
    spec: &PolicySpec,
    policy: &FinalPolicy,
    episodes: usize,
    eval_seed: u64,
) -> Result<f64> {
    match (env, policy) {
        (Environment::RandomMdp(mdp), FinalPolicy::Params(theta)) => {
            exact_expected_reward(mdp, &tabular_action_table(spec, theta)?)
        }
        (Environment::RandomMdp(mdp), FinalPolicy::Table(table)) => exact_expected_reward(mdp, table),
        (Environment::CartPole(cartpole), FinalPolicy::Params(theta)) => {
            if episodes == 0 {
                return Err(Error::invalid("evaluation needs at least one episode"));
            }
            let mut rng = crate::rng::seeded(eval_seed);
            let mut total = 0.0;
            for _ in 0..episodes {
                // one complete episode per call
                total += rollout_episodes(cartpole, spec, theta, 1, &mut rng)?.episode_returns[0];
            }
            Ok(total / episodes as f64)
        }
        (Environment::CartPole(_), FinalPolicy::Table(_)) => {
            Err(Error::invalid("cart-pole policies cannot be given as tables"))
        }
    }
}

/// Outcome of one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub trial: usize,
    pub trace: ChainTrace,
    /// Parameters visited by the chain (MH) or the start and end points
    /// (REINFORCE).
    pub samples: Vec<ParamVector>,
    pub final_theta: ParamVector,
    pub final_eval: f64,
    /// MH only: score of the posterior-averaged policy (tabular only).
    pub posterior_mean_eval: Option<f64>,
    /// MH only: score of the highest-estimate sample.
    pub best_sample_eval: Option<f64>,
    /// Random MDP only: value of the optimal deterministic policy.
    pub oracle_value: Option<f64>,
    pub seconds: f64,
}

fn eval_seed(config: &RunConfig, trial: usize) -> u64 {
    derived_seed(config.master_seed, StreamPurpose::Evaluation, trial as u32)
}

/// Runs trial `trial` of `algorithm` under `config`.
pub fn run_trial(config: &RunConfig, algorithm: Algorithm, trial: usize) -> Result<TrialResult> {
    config.validate()?;
    let env = config.trial_environment(trial)?;
    let spec = config.policy_spec();
    let mut rng = derived(config.master_seed, StreamPurpose::Run, trial as u32);
    let seed = eval_seed(config, trial);
    let score = |p: &FinalPolicy| evaluate_final_policy(&env, &spec, p, config.eval_episodes, seed);
    let oracle_value = match &env {
        Environment::RandomMdp(mdp) => Some(optimal_deterministic_policy(mdp)?.1),
        Environment::CartPole(_) => None,
    };

    match algorithm {
        Algorithm::Mh => {
            let out = run_chain(&config.chain_config()?, &env, &spec, &mut rng)?;
            let final_theta = out.final_theta().clone();
            let final_eval = score(&FinalPolicy::Params(final_theta.clone()))?;
            let best_sample_eval = Some(score(&FinalPolicy::Params(out.best_sample().clone()))?);
            let posterior_mean_eval = match spec {
                PolicySpec::Tabular { .. } => {
                    let burn_in = (config.mh.burn_in_fraction * out.samples.len() as f64) as usize;
                    let table = posterior_average_table(&out.samples, burn_in, &spec)?;
                    Some(score(&FinalPolicy::Table(table))?)
                }
                PolicySpec::Mlp { .. } => None,
            };
            Ok(TrialResult {
                trial,
                trace: out.trace,
                samples: out.samples,
                final_theta,
                final_eval,
                posterior_mean_eval,
                best_sample_eval,
                oracle_value,
                seconds: out.seconds,
            })
        }
        Algorithm::Reinforce => {
            let prior = ProposalConfig::new(config.mh.prior_sigma)?;
            let out = reinforce_run(&config.pg_config(), &env, &spec, &prior, &mut rng)?;
            let final_eval = score(&FinalPolicy::Params(out.final_theta.clone()))?;
            Ok(TrialResult {
                trial,
                trace: out.trace,
                samples: vec![out.initial, out.final_theta.clone()],
                final_theta: out.final_theta,
                final_eval,
                posterior_mean_eval: None,
                best_sample_eval: None,
                oracle_value,
                seconds: out.seconds,
            })
        }
    }
}

/// Per-iteration mean and population standard deviation across traces.
pub fn aggregate_traces(traces: &[&ChainTrace]) -> Result<(Vec<f64>, Vec<f64>)> {
    let first = traces.first().ok_or_else(|| Error::invalid("no traces to aggregate"))?;
    let n = first.len();
    if traces.iter().any(|t| t.len() != n) {
        return Err(Error::invalid("traces differ in length"));
    }
    let k = traces.len() as f64;
    let mut means = Vec::with_capacity(n);
    let mut stds = Vec::with_capacity(n);
    for i in 0..n {
        let m = traces.iter().map(|t| t.records[i].reward).sum::<f64>() / k;
        let var = traces.iter().map(|t| (t.records[i].reward - m).powi(2)).sum::<f64>() / k;
        means.push(m);
        stds.push(var.sqrt());
    }
    Ok((means, stds))
}

/// Summary written as `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub config: RunConfig,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Sum of per-trial optimize/sample wall-clock seconds.
    pub runtime_s: f64,
    /// Mean final-policy score across trials.
    pub final_eval: f64,
    pub final_evals: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_values: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub posterior_mean_evals: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_sample_evals: Option<Vec<f64>>,
}

impl AggregateReport {
    pub fn from_trials(config: &RunConfig, trials: &[TrialResult]) -> Result<Self> {
        let traces: Vec<&ChainTrace> = trials.iter().map(|t| &t.trace).collect();
        let (mean, std) = aggregate_traces(&traces)?;
        let final_evals: Vec<f64> = trials.iter().map(|t| t.final_eval).collect();
        let collect = |f: fn(&TrialResult) -> Option<f64>| trials.iter().map(f).collect::<Option<Vec<f64>>>();
        Ok(Self {
            config: config.clone(),
            mean,
            std,
            runtime_s: trials.iter().map(|t| t.seconds).sum(),
            final_eval: final_evals.iter().sum::<f64>() / final_evals.len() as f64,
            final_evals,
            oracle_values: collect(|t| t.oracle_value),
            posterior_mean_evals: collect(|t| t.posterior_mean_eval),
            best_sample_evals: collect(|t| t.best_sample_eval),
        })
    }

    pub fn aggregate_csv(&self) -> String {
        let mut out = String::from("iteration,mean,std\n");
        for (i, (m, s)) in self.mean.iter().zip(&self.std).enumerate() {
            out.push_str(&format!("{},{:.16e},{:.16e}\n", i + 1, m, s));
        }
        out
    }
}

/// Creates `dir` and checks it accepts files.
fn ensure_writable(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let probe = dir.join(".write-probe");
    fs::File::create(&probe)
        .and_then(|mut f| f.write_all(b""))
        .map_err(|e| Error::io(&probe, e))?;
    fs::remove_file(&probe).map_err(|e| Error::io(&probe, e))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Runs every trial (in parallel), then writes `trial_NNN.csv` per trial,
/// `aggregate.csv` and `report.json` into `config.output_dir`.
pub fn run_experiment(config: &RunConfig) -> Result<(AggregateReport, Vec<TrialResult>)> {
    config.validate()?;
    ensure_writable(&config.output_dir)?;
    let trials = run_trials(config, config.algorithm)?;
    let report = AggregateReport::from_trials(config, &trials)?;
    for t in &trials {
        t.trace.save_csv(&config.output_dir.join(format!("trial_{:03}.csv", t.trial)))?;
    }
    write_file(&config.output_dir.join("aggregate.csv"), &report.aggregate_csv())?;
    write_file(
        &config.output_dir.join("report.json"),
        &serde_json::to_string_pretty(&report)?,
    )?;
    Ok((report, trials))
}

/// Runs every trial of `algorithm` concurrently, in trial order.
pub fn run_trials(config: &RunConfig, algorithm: Algorithm) -> Result<Vec<TrialResult>> {
    config.validate()?;
    (0..config.trials)
        .into_par_iter()
        .map(|k| run_trial(config, algorithm, k))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RuntimeComparison {
    pub mh_seconds: f64,
    pub pg_seconds: f64,
}

/// Total wall-clock of both algorithms at identical iteration counts and
/// batch sizes. Runs are serial on the calling thread and no files are
/// written; only the optimize/sample loops are timed.
pub fn compare_runtimes(config: &RunConfig) -> Result<RuntimeComparison> {
    config.validate()?;
    let spec = config.policy_spec();
    let chain = config.chain_config()?;
    let pg = config.pg_config();
    let prior = ProposalConfig::new(config.mh.prior_sigma)?;
    let mut mh_seconds = 0.0;
    let mut pg_seconds = 0.0;
    for k in 0..config.trials {
        let env = config.trial_environment(k)?;

        let mut rng = derived(config.master_seed, StreamPurpose::Run, k as u32);
        let started = Instant::now();
        run_chain(&chain, &env, &spec, &mut rng)?;
        mh_seconds += started.elapsed().as_secs_f64();

        let mut rng = derived(config.master_seed, StreamPurpose::Run, k as u32);
        let started = Instant::now();
        reinforce_run(&pg, &env, &spec, &prior, &mut rng)?;
        pg_seconds += started.elapsed().as_secs_f64();
    }
    Ok(RuntimeComparison { mh_seconds, pg_seconds })
}

/// One row of `lemma-check`: temperature and posterior mass off the
/// maximizer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LemmaRow {
    pub temperature: f64,
    pub off_max_mass: f64,
}

/// Utility grid of `size` points with a unique maximum `gap` above the rest:
/// index 0 has utility 0, the others are spread over `[-gap - 1, -gap]`.
pub fn lemma_grid(size: usize, gap: f64) -> Result<Vec<f64>> {
    if size < 2 {
        return Err(Error::invalid("grid size must be at least 2"));
    }
    if !(gap > 0.0) || !gap.is_finite() {
        return Err(Error::invalid("gap must be positive"));
    }
    Ok(std::iter::once(0.0)
        .chain((1..size).map(|k| -gap - (k - 1) as f64 / (size - 1) as f64))
        .collect())
}

/// Off-maximum posterior mass on `utilities` with flat prior at each
/// temperature.
pub fn lemma_table(utilities: &[f64], log_priors: &[f64], temperatures: &[f64]) -> Result<Vec<LemmaRow>> {
    temperatures
        .iter()
        .map(|&t| {
            Ok(LemmaRow {
                temperature: t,
                off_max_mass: off_maximum_mass(utilities, log_priors, t)?,
            })
        })
        .collect()
}

/// Reads an MDP from a JSON file.
pub fn load_mdp(path: &Path) -> Result<MdpSpec> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    MdpSpec::from_json(&text)
}
