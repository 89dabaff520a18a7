//! Policy parameterizations, Gaussian prior/proposal, and posterior averaging.
//!
//! Two architectures are supported:
//!
//! * **tabular**: one logit per `(state, action)`, softmax per state row.
//! * **mlp**: `softmax(W2 · tanh(W1 · s + b1) + b2)` on the four cart-pole
//!   features with a configurable hidden width and two actions.
//!
//! Parameters live in a flat [`ParamVector`]. The MLP block order is
//! `W1` (hidden × 4, row-major), `b1`, `W2` (2 × hidden, row-major), `b2`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::envs::{sample_categorical, Observation};
use crate::error::{Error, Result};
use crate::rng::SimRng;

pub const MLP_INPUTS: usize = 4;
pub const MLP_OUTPUTS: usize = 2;
pub const DEFAULT_HIDDEN: usize = 32;

/// Shape of a policy, which doubles as the layout descriptor of its
/// parameters (`"tabular:10x5"`, `"mlp:4x32x2"`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PolicySpec {
    Tabular { num_states: usize, num_actions: usize },
    Mlp { hidden: usize },
}

impl PolicySpec {
    pub fn tabular(num_states: usize, num_actions: usize) -> Self {
        PolicySpec::Tabular {
            num_states,
            num_actions,
        }
    }

    pub fn mlp(hidden: usize) -> Self {
        PolicySpec::Mlp { hidden }
    }

    pub fn num_params(&self) -> usize {
        match *self {
            PolicySpec::Tabular {
                num_states,
                num_actions,
            } => num_states * num_actions,
            PolicySpec::Mlp { hidden } => {
                MLP_INPUTS * hidden + hidden + MLP_OUTPUTS * hidden + MLP_OUTPUTS
            }
        }
    }

    pub fn num_actions(&self) -> usize {
        match *self {
            PolicySpec::Tabular { num_actions, .. } => num_actions,
            PolicySpec::Mlp { .. } => MLP_OUTPUTS,
        }
    }

    pub(crate) fn check(&self, theta: &ParamVector) -> Result<()> {
        if theta.layout != *self || theta.values.len() != self.num_params() {
            return Err(Error::contract(format!(
                "parameter layout {} (len {}) does not match policy {}",
                theta.layout,
                theta.values.len(),
                self
            )));
        }
        Ok(())
    }

    /// Writes the output logits for `obs` into `logits`.
    pub(crate) fn logits_into(&self, theta: &[f64], obs: &Observation, logits: &mut [f64]) -> Result<()> {
        match (*self, obs) {
            (
                PolicySpec::Tabular {
                    num_states,
                    num_actions,
                },
                Observation::Index(s),
            ) => {
                if *s >= num_states {
                    return Err(Error::contract(format!(
                        "state {s} outside tabular policy with {num_states} states"
                    )));
                }
                logits.copy_from_slice(&theta[s * num_actions..(s + 1) * num_actions]);
                Ok(())
            }
            (PolicySpec::Mlp { hidden }, Observation::Features(x)) => {
                let mut h = vec![0.0; hidden];
                mlp_forward(hidden, theta, x, &mut h, logits);
                Ok(())
            }
            _ => Err(Error::contract(format!(
                "observation {obs:?} does not fit policy {self}"
            ))),
        }
    }
}

impl fmt::Display for PolicySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicySpec::Tabular {
                num_states,
                num_actions,
            } => write!(f, "tabular:{num_states}x{num_actions}"),
            PolicySpec::Mlp { hidden } => write!(f, "mlp:{MLP_INPUTS}x{hidden}x{MLP_OUTPUTS}"),
        }
    }
}

impl FromStr for PolicySpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::invalid(format!("unrecognized policy layout `{s}`"));
        let (kind, dims) = s.split_once(':').ok_or_else(bad)?;
        let dims: Vec<usize> = dims
            .split('x')
            .map(|d| d.parse().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        match (kind, dims.as_slice()) {
            ("tabular", &[s, a]) if s > 0 && a > 0 => Ok(PolicySpec::tabular(s, a)),
            ("mlp", &[MLP_INPUTS, h, MLP_OUTPUTS]) if h > 0 => Ok(PolicySpec::mlp(h)),
            _ => Err(bad()),
        }
    }
}

impl Serialize for PolicySpec {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PolicySpec {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

/// Flat policy parameters tagged with their layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams")]
pub struct ParamVector {
    pub layout: PolicySpec,
    pub values: Vec<f64>,
}

#[derive(Deserialize)]
struct RawParams {
    layout: PolicySpec,
    values: Vec<f64>,
}

impl TryFrom<RawParams> for ParamVector {
    type Error = Error;

    fn try_from(raw: RawParams) -> Result<Self> {
        ParamVector::new(raw.layout, raw.values)
    }
}

impl ParamVector {
    /// Wraps `values`, checking the length against the layout and that every
    /// entry is finite.
    pub fn new(layout: PolicySpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.num_params() {
            return Err(Error::contract(format!(
                "layout {layout} needs {} values, got {}",
                layout.num_params(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::contract(format!("parameter {i} is not finite")));
        }
        Ok(Self { layout, values })
    }

    pub fn zeros(layout: PolicySpec) -> Self {
        Self {
            layout,
            values: vec![0.0; layout.num_params()],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `self + scale * other`, for two vectors with the same layout.
    pub fn add_scaled(&self, other: &ParamVector, scale: f64) -> Result<ParamVector> {
        if self.layout != other.layout {
            return Err(Error::contract(format!(
                "cannot add layouts {} and {}",
                self.layout, other.layout
            )));
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + scale * b)
            .collect();
        ParamVector::new(self.layout, values)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Isotropic Gaussian with standard deviation `sigma`, used both as the prior
/// over parameters and as the random-walk proposal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProposalConfig {
    pub sigma: f64,
}

impl ProposalConfig {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::invalid(format!("sigma must be positive and finite, got {sigma}")));
        }
        Ok(Self { sigma })
    }
}

pub(crate) fn mlp_forward(hidden: usize, theta: &[f64], x: &[f64; 4], h: &mut [f64], logits: &mut [f64]) {
    let (w1, rest) = theta.split_at(MLP_INPUTS * hidden);
    let (b1, rest) = rest.split_at(hidden);
    let (w2, b2) = rest.split_at(MLP_OUTPUTS * hidden);
    for j in 0..hidden {
        let row = &w1[j * MLP_INPUTS..(j + 1) * MLP_INPUTS];
        let z = b1[j] + row[0] * x[0] + row[1] * x[1] + row[2] * x[2] + row[3] * x[3];
        h[j] = z.tanh();
    }
    for k in 0..MLP_OUTPUTS {
        let row = &w2[k * hidden..(k + 1) * hidden];
        logits[k] = b2[k] + row.iter().zip(h.iter()).map(|(w, v)| w * v).sum::<f64>();
    }
}

/// In-place max-shifted softmax.
pub(crate) fn softmax_in_place(values: &mut [f64]) {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in values.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in values.iter_mut() {
        *v /= total;
    }
}

/// `pi(. | obs, theta)`.
pub fn action_distribution(spec: &PolicySpec, theta: &ParamVector, obs: &Observation) -> Result<Vec<f64>> {
    spec.check(theta)?;
    let mut probs = vec![0.0; spec.num_actions()];
    spec.logits_into(&theta.values, obs, &mut probs)?;
    softmax_in_place(&mut probs);
    Ok(probs)
}

/// Every per-state action distribution of a tabular policy, as a
/// `[state][action]` matrix.
pub fn tabular_action_table(spec: &PolicySpec, theta: &ParamVector) -> Result<Vec<Vec<f64>>> {
    spec.check(theta)?;
    match *spec {
        PolicySpec::Tabular {
            num_states,
            num_actions,
        } => Ok((0..num_states)
            .map(|s| {
                let mut row = theta.values[s * num_actions..(s + 1) * num_actions].to_vec();
                softmax_in_place(&mut row);
                row
            })
            .collect()),
        PolicySpec::Mlp { .. } => Err(Error::contract("action table needs a tabular policy")),
    }
}

/// Draws `a ~ pi(. | obs, theta)` and returns it with its log-probability.
pub fn sample_action(
    spec: &PolicySpec,
    theta: &ParamVector,
    obs: &Observation,
    rng: &mut SimRng,
) -> Result<(usize, f64)> {
    let probs = action_distribution(spec, theta, obs)?;
    let action = sample_categorical(&probs, rng);
    Ok((action, probs[action].ln()))
}

/// `theta_0 ~ N(0, sigma^2 I)`.
pub fn init_params(spec: &PolicySpec, prior: &ProposalConfig, rng: &mut SimRng) -> ParamVector {
    let values = (0..spec.num_params())
        .map(|_| prior.sigma * rng.sample::<f64, _>(StandardNormal))
        .collect();
    ParamVector {
        layout: *spec,
        values,
    }
}

/// Gaussian random-walk proposal `theta' ~ N(theta, sigma^2 I)`.
pub fn propose(theta: &ParamVector, proposal: &ProposalConfig, rng: &mut SimRng) -> ParamVector {
    let values = theta
        .values
        .iter()
        .map(|v| v + proposal.sigma * rng.sample::<f64, _>(StandardNormal))
        .collect();
    ParamVector {
        layout: theta.layout,
        values,
    }
}

fn gaussian_log_density(offsets: impl Iterator<Item = f64>, sigma: f64) -> f64 {
    let norm = sigma.ln() + 0.5 * (2.0 * std::f64::consts::PI).ln();
    offsets.map(|d| -d * d / (2.0 * sigma * sigma) - norm).sum()
}

/// Log density of the random-walk proposal moving `from` to `to`.
pub fn proposal_log_density(from: &ParamVector, to: &ParamVector, proposal: &ProposalConfig) -> Result<f64> {
    if from.layout != to.layout {
        return Err(Error::contract("proposal density across different layouts"));
    }
    Ok(gaussian_log_density(
        from.values.iter().zip(&to.values).map(|(a, b)| b - a),
        proposal.sigma,
    ))
}

/// Log density of the isotropic Gaussian prior `N(0, sigma^2 I)` at `theta`.
pub fn log_prior_density(theta: &ParamVector, prior: &ProposalConfig) -> Result<f64> {
    if theta.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::contract("prior density of non-finite parameters"));
    }
    Ok(gaussian_log_density(theta.values.iter().copied(), prior.sigma))
}

/// Mean action distribution over the samples after `burn_in`.
pub fn posterior_average_policy(
    samples: &[ParamVector],
    burn_in: usize,
    spec: &PolicySpec,
    obs: &Observation,
) -> Result<Vec<f64>> {
    let kept = samples.get(burn_in..).unwrap_or(&[]);
    if kept.is_empty() {
        return Err(Error::invalid(format!(
            "burn-in {burn_in} leaves no samples out of {}",
            samples.len()
        )));
    }
    let mut mean = vec![0.0; spec.num_actions()];
    for theta in kept {
        for (m, p) in mean.iter_mut().zip(action_distribution(spec, theta, obs)?) {
            *m += p;
        }
    }
    let m = kept.len() as f64;
    mean.iter_mut().for_each(|v| *v /= m);
    Ok(mean)
}

/// Posterior-averaged `[state][action]` table for a tabular policy.
pub fn posterior_average_table(samples: &[ParamVector], burn_in: usize, spec: &PolicySpec) -> Result<Vec<Vec<f64>>> {
    match *spec {
        PolicySpec::Tabular { num_states, .. } => (0..num_states)
            .map(|s| posterior_average_policy(samples, burn_in, spec, &Observation::Index(s)))
            .collect(),
        PolicySpec::Mlp { .. } => Err(Error::contract("action table needs a tabular policy")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use proptest::prelude::*;

    fn tab(values: Vec<f64>, s: usize, a: usize) -> (PolicySpec, ParamVector) {
        let spec = PolicySpec::tabular(s, a);
        (spec, ParamVector::new(spec, values).unwrap())
    }

    #[test]
    fn mlp_param_count() {
        assert_eq!(PolicySpec::mlp(32).num_params(), 226);
        assert_eq!(PolicySpec::tabular(10, 5).num_params(), 50);
    }

    #[test]
    fn layout_descriptor_round_trips() {
        for spec in [PolicySpec::tabular(10, 5), PolicySpec::mlp(32)] {
            assert_eq!(spec.to_string().parse::<PolicySpec>().unwrap(), spec);
        }
        assert!("mlp:3x32x2".parse::<PolicySpec>().is_err());
        assert!("tabular:0x2".parse::<PolicySpec>().is_err());
        let theta = init_params(&PolicySpec::mlp(8), &ProposalConfig::new(1.0).unwrap(), &mut seeded(1));
        let back = ParamVector::from_json(&theta.to_json().unwrap()).unwrap();
        assert_eq!(theta, back);
        assert!(theta.to_json().unwrap().contains("\"layout\":\"mlp:4x8x2\""));
    }

    #[test]
    fn zero_parameters_give_uniform() {
        let spec = PolicySpec::tabular(3, 4);
        let p = action_distribution(&spec, &ParamVector::zeros(spec), &Observation::Index(1)).unwrap();
        assert!(p.iter().all(|&x| (x - 0.25).abs() < 1e-15));
        let mlp = PolicySpec::mlp(32);
        let p = action_distribution(&mlp, &ParamVector::zeros(mlp), &Observation::Features([0.1, -0.3, 0.02, 1.0])).unwrap();
        assert!(p.iter().all(|&x| (x - 0.5).abs() < 1e-15));
    }

    #[test]
    fn two_logit_softmax_value() {
        let (spec, theta) = tab(vec![2.0, 0.0], 1, 2);
        let p = action_distribution(&spec, &theta, &Observation::Index(0)).unwrap();
        let e2 = 2f64.exp();
        assert!((p[0] - e2 / (e2 + 1.0)).abs() < 1e-15);
        assert!((p[1] - 1.0 / (e2 + 1.0)).abs() < 1e-15);
        assert!((p[0] - 0.8808).abs() < 1e-4);
    }

    #[test]
    fn layout_mismatch_is_contract_violation() {
        let spec = PolicySpec::tabular(3, 2);
        let other = ParamVector::zeros(PolicySpec::tabular(2, 3));
        assert!(matches!(
            action_distribution(&spec, &other, &Observation::Index(0)),
            Err(Error::ContractViolation(_))
        ));
        assert!(matches!(
            action_distribution(&spec, &ParamVector::zeros(spec), &Observation::Features([0.0; 4])),
            Err(Error::ContractViolation(_))
        ));
        assert!(ParamVector::new(spec, vec![0.0; 5]).is_err());
        assert!(ParamVector::new(spec, vec![0.0, 0.0, 0.0, 0.0, 0.0, f64::NAN]).is_err());
    }

    #[test]
    fn saturated_logits_always_pick_first_action() {
        let (spec, theta) = tab(vec![1e3, 0.0], 1, 2);
        let mut rng = seeded(4);
        for _ in 0..1000 {
            let (a, lp) = sample_action(&spec, &theta, &Observation::Index(0), &mut rng).unwrap();
            assert_eq!(a, 0);
            assert_eq!(lp, 0.0);
        }
    }

    #[test]
    fn sampled_frequencies_match_distribution() {
        let (spec, theta) = tab(vec![0.3, -1.0, 0.8], 1, 3);
        let obs = Observation::Index(0);
        let probs = action_distribution(&spec, &theta, &obs).unwrap();
        let mut rng = seeded(8);
        let n = 100_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            let (a, lp) = sample_action(&spec, &theta, &obs, &mut rng).unwrap();
            counts[a] += 1;
            // log then exp is exact up to rounding
            assert!((lp.exp() - probs[a]).abs() <= 4.0 * f64::EPSILON * probs[a]);
        }
        let tv: f64 = counts
            .iter()
            .zip(&probs)
            .map(|(&c, p)| (c as f64 / n as f64 - p).abs())
            .sum::<f64>()
            / 2.0;
        assert!(tv < 0.01);
    }

    #[test]
    fn init_params_moments() {
        let sigma = 0.7;
        let spec = PolicySpec::tabular(1000, 100);
        let theta = init_params(&spec, &ProposalConfig::new(sigma).unwrap(), &mut seeded(12));
        let n = theta.len() as f64;
        let mean = theta.values.iter().sum::<f64>() / n;
        let var = theta.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 0.01 * sigma);
        assert!((var.sqrt() - sigma).abs() < 0.01 * sigma);
        let again = init_params(&spec, &ProposalConfig::new(sigma).unwrap(), &mut seeded(12));
        assert_eq!(theta, again);
    }

    #[test]
    fn proposal_moments_and_degenerate_width() {
        let spec = PolicySpec::tabular(2, 2);
        let theta = ParamVector::new(spec, vec![0.5, -1.0, 2.0, 0.0]).unwrap();
        let sigma = 0.3;
        let cfg = ProposalConfig::new(sigma).unwrap();
        let mut rng = seeded(6);
        let n = 100_000;
        let mut sums = [0.0; 4];
        for _ in 0..n {
            let next = propose(&theta, &cfg, &mut rng);
            for ((acc, a), b) in sums.iter_mut().zip(&next.values).zip(&theta.values) {
                *acc += a - b;
            }
        }
        assert!(sums.iter().all(|s| (s / n as f64).abs() < 0.01 * sigma));
        assert_eq!(theta.values, vec![0.5, -1.0, 2.0, 0.0]);

        let tiny = ProposalConfig::new(1e-12).unwrap();
        let next = propose(&theta, &tiny, &mut rng);
        for (a, b) in next.values.iter().zip(&theta.values) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn sigma_must_be_positive() {
        assert!(ProposalConfig::new(0.0).is_err());
        assert!(ProposalConfig::new(-1.0).is_err());
        assert!(ProposalConfig::new(f64::NAN).is_err());
    }

    #[test]
    fn prior_at_origin() {
        let spec = PolicySpec::tabular(3, 2);
        let lp = log_prior_density(&ParamVector::zeros(spec), &ProposalConfig::new(1.0).unwrap()).unwrap();
        let expected = -(6.0 / 2.0) * (2.0 * std::f64::consts::PI).ln();
        assert!((lp - expected).abs() < 1e-12);
    }

    #[test]
    fn prior_decreases_with_norm() {
        let spec = PolicySpec::tabular(1, 3);
        let cfg = ProposalConfig::new(0.5).unwrap();
        let direction = [0.3, -0.5, 0.8];
        let mut last = f64::INFINITY;
        for k in 0..20 {
            let scale = k as f64 * 0.25;
            let theta = ParamVector::new(spec, direction.iter().map(|d| d * scale).collect()).unwrap();
            let lp = log_prior_density(&theta, &cfg).unwrap();
            assert!(lp < last);
            last = lp;
        }
    }

    #[test]
    fn prior_integrates_to_one_in_one_dimension() {
        // trapezoid rule over +-12 sigma
        let spec = PolicySpec::tabular(1, 1);
        let sigma = 0.8;
        let cfg = ProposalConfig::new(sigma).unwrap();
        let n = 200_000;
        let (lo, hi) = (-12.0 * sigma, 12.0 * sigma);
        let h = (hi - lo) / n as f64;
        let f = |x: f64| log_prior_density(&ParamVector::new(spec, vec![x]).unwrap(), &cfg).unwrap().exp();
        let mut total = 0.5 * (f(lo) + f(hi));
        for i in 1..n {
            total += f(lo + i as f64 * h);
        }
        assert!((total * h - 1.0).abs() < 1e-9);
    }

    #[test]
    fn posterior_average_cases() {
        let spec = PolicySpec::tabular(1, 2);
        let theta = ParamVector::new(spec, vec![0.4, -0.2]).unwrap();
        let obs = Observation::Index(0);
        let single = action_distribution(&spec, &theta, &obs).unwrap();
        let avg = posterior_average_policy(&vec![theta.clone(); 5], 2, &spec, &obs).unwrap();
        for (a, b) in avg.iter().zip(&single) {
            assert!((a - b).abs() < 1e-15);
        }

        let left = ParamVector::new(spec, vec![1e3, 0.0]).unwrap();
        let right = ParamVector::new(spec, vec![0.0, 1e3]).unwrap();
        let avg = posterior_average_policy(&[left, right], 0, &spec, &obs).unwrap();
        assert_eq!(avg, vec![0.5, 0.5]);

        assert!(matches!(
            posterior_average_policy(&vec![theta; 3], 3, &spec, &obs),
            Err(Error::InvalidArgument(_))
        ));
    }

    proptest! {
        #[test]
        fn distributions_are_valid_and_shift_invariant(
            logits in proptest::collection::vec(-30.0f64..30.0, 12),
            shift in -50.0f64..50.0,
            x in proptest::array::uniform4(-3.0f64..3.0),
        ) {
            let spec = PolicySpec::tabular(4, 3);
            let theta = ParamVector::new(spec, logits.clone()).unwrap();
            let mut shifted = logits.clone();
            for v in &mut shifted[3..6] { *v += shift; }
            let shifted = ParamVector::new(spec, shifted).unwrap();
            let p = action_distribution(&spec, &theta, &Observation::Index(1)).unwrap();
            let q = action_distribution(&spec, &shifted, &Observation::Index(1)).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|&v| v >= 0.0));
            for (a, b) in p.iter().zip(&q) { prop_assert!((a - b).abs() < 1e-12); }

            // mlp: shifting both output biases shifts both logits equally
            let mlp = PolicySpec::mlp(6);
            let mut values: Vec<f64> = (0..mlp.num_params()).map(|i| logits[i % 12] * 0.1).collect();
            let base = ParamVector::new(mlp, values.clone()).unwrap();
            let n = values.len();
            values[n - 1] += shift;
            values[n - 2] += shift;
            let moved = ParamVector::new(mlp, values).unwrap();
            let p = action_distribution(&mlp, &base, &Observation::Features(x)).unwrap();
            let q = action_distribution(&mlp, &moved, &Observation::Features(x)).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (a, b) in p.iter().zip(&q) { prop_assert!((a - b).abs() < 1e-12); }
        }

        #[test]
        fn proposal_density_is_symmetric(
            a in proptest::collection::vec(-5.0f64..5.0, 6),
            b in proptest::collection::vec(-5.0f64..5.0, 6),
            sigma in 0.01f64..3.0,
        ) {
            let spec = PolicySpec::tabular(2, 3);
            let a = ParamVector::new(spec, a).unwrap();
            let b = ParamVector::new(spec, b).unwrap();
            let cfg = ProposalConfig::new(sigma).unwrap();
            let forward = proposal_log_density(&a, &b, &cfg).unwrap();
            let backward = proposal_log_density(&b, &a, &cfg).unwrap();
            prop_assert!((forward - backward).abs() <= 1e-12 * forward.abs().max(1.0));
        }

        #[test]
        fn posterior_average_is_order_invariant_and_normalized(
            raw in proptest::collection::vec(proptest::collection::vec(-4.0f64..4.0, 6), 2..8),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            let spec = PolicySpec::tabular(2, 3);
            let samples: Vec<ParamVector> = raw.into_iter().map(|v| ParamVector::new(spec, v).unwrap()).collect();
            let mut shuffled = samples.clone();
            shuffled.shuffle(&mut seeded(seed));
            for s in 0..2 {
                let obs = Observation::Index(s);
                let p = posterior_average_policy(&samples, 0, &spec, &obs).unwrap();
                let q = posterior_average_policy(&shuffled, 0, &spec, &obs).unwrap();
                prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                for (a, b) in p.iter().zip(&q) { prop_assert!((a - b).abs() < 1e-12); }
            }
        }
    }
}
