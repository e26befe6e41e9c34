//! Maximum-likelihood estimation of `P[E|S]` through a known channel by
//! expectation-maximization (the iterative Bayesian update).
//!
//! For each group `s` independently, starting from the uniform prior `θ⁽⁰⁾`,
//!
//! ```text
//! θ⁽ᵗ⁾[e] = Σ_z φ_s[z] · P[z|e,s] θ⁽ᵗ⁻¹⁾[e] / Σ_e' P[z|e',s] θ⁽ᵗ⁻¹⁾[e']
//! ```
//!
//! until every entry moves by less than `γ` between consecutive iterates.
//! The update is the maximizer of the EM surrogate, so the log-likelihood
//! never decreases along the sequence.
//!
//! The stopping rule bounds the step size, not the distance to the MLE; on
//! slowly converging (non-invertible) channels the last iterate may still be
//! further than `γ` from the limit.

use std::time::Instant;

use rayon::prelude::*;
use thiserror::Error;

use crate::types::{validate_channel, Channel, GroupLabel, GroupedDistribution, ProbVector, Validation};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimatorError {
    #[error("channel and observations do not share a Z domain")]
    DomainMismatch,
    #[error("channel has {channel} groups but observations have {observed}")]
    GroupMismatch { channel: usize, observed: usize },
    #[error("invalid channel: {0}")]
    InvalidChannel(String),
    #[error("invalid EM configuration: {0}")]
    InvalidConfig(String),
    #[error("group {group}: observed z={z} has zero probability under every e")]
    InconsistentObservation { group: GroupLabel, z: i64 },
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmConfig {
    /// Per-entry stopping tolerance on consecutive iterates.
    pub gamma: f64,
    pub max_iterations: usize,
    /// Record the log-likelihood of every iterate (normalized to one sample).
    pub record_trace: bool,
    /// Estimate groups concurrently.
    pub parallel: bool,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self { gamma: 1e-6, max_iterations: 10_000, record_trace: false, parallel: false }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<(), EstimatorError> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(EstimatorError::InvalidConfig(format!("gamma must be > 0, got {}", self.gamma)));
        }
        if self.max_iterations == 0 {
            return Err(EstimatorError::InvalidConfig("max_iterations must be >= 1".into()));
        }
        Ok(())
    }
}

/// Outcome for one group.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupFit {
    pub estimate: ProbVector,
    /// Value of `t` when the loop stopped.
    pub iterations: usize,
    pub converged: bool,
    /// `L(θ⁽⁰⁾), L(θ⁽¹⁾), …` when tracing was requested.
    pub likelihood_trace: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmResult {
    pub estimate: GroupedDistribution,
    pub iterations: Vec<usize>,
    pub converged: Vec<bool>,
    pub likelihood_trace: Option<Vec<Vec<f64>>>,
    pub wall_time: f64,
}

/// Runs the estimator from the uniform prior for every group.
pub fn babe_estimate(channel: &Channel, phi: &GroupedDistribution, cfg: &EmConfig) -> Result<EmResult, EstimatorError> {
    let start = GroupedDistribution::new(
        (0..phi.num_groups()).map(|_| ProbVector::uniform(channel.e_domain().clone())).collect(),
    )
    .map_err(|_| EstimatorError::GroupMismatch { channel: channel.num_groups(), observed: 0 })?;
    estimate_from(channel, phi, &start, cfg)
}

/// Runs the estimator from an arbitrary starting prior.
///
/// Restarting from a converged estimate is how the fixed-point property is
/// checked.
pub fn estimate_from(
    channel: &Channel,
    phi: &GroupedDistribution,
    start: &GroupedDistribution,
    cfg: &EmConfig,
) -> Result<EmResult, EstimatorError> {
    cfg.validate()?;
    if phi.domain() != channel.z_domain() || start.domain() != channel.e_domain() {
        return Err(EstimatorError::DomainMismatch);
    }
    if phi.num_groups() != channel.num_groups() || start.num_groups() != channel.num_groups() {
        return Err(EstimatorError::GroupMismatch { channel: channel.num_groups(), observed: phi.num_groups() });
    }
    if let Validation::Violation(v) = validate_channel(channel) {
        return Err(EstimatorError::InvalidChannel(v.to_string()));
    }

    let clock = Instant::now();
    let fit = |g: usize| {
        let s = GroupLabel(g);
        estimate_group(channel, s, phi.group(s), start.group(s), cfg)
    };
    let fits: Vec<GroupFit> = if cfg.parallel {
        (0..channel.num_groups()).into_par_iter().map(fit).collect::<Result<_, _>>()?
    } else {
        (0..channel.num_groups()).map(fit).collect::<Result<_, _>>()?
    };
    let wall_time = clock.elapsed().as_secs_f64();

    let iterations = fits.iter().map(|f| f.iterations).collect();
    let converged = fits.iter().map(|f| f.converged).collect();
    let likelihood_trace = cfg
        .record_trace
        .then(|| fits.iter().map(|f| f.likelihood_trace.clone().unwrap_or_default()).collect());
    let estimate = GroupedDistribution::new(fits.into_iter().map(|f| f.estimate).collect())
        .expect("all estimates share the E domain");
    Ok(EmResult { estimate, iterations, converged, likelihood_trace, wall_time })
}

/// One EM update. Writes `θ⁽ᵗ⁾` into `next` given `θ⁽ᵗ⁻¹⁾` in `theta`.
fn update(
    matrix: &[f64],
    nz: usize,
    phi: &[f64],
    theta: &[f64],
    next: &mut [f64],
    weights: &mut [f64],
) -> Result<(), usize> {
    // weights[z] = φ[z] / P_θ[z], zero where z is unobserved
    weights.fill(0.0);
    for (e, &t) in theta.iter().enumerate() {
        if t == 0.0 {
            continue;
        }
        let row = &matrix[e * nz..(e + 1) * nz];
        for (w, &p) in weights.iter_mut().zip(row) {
            *w += p * t;
        }
    }
    for (z, (w, &f)) in weights.iter_mut().zip(phi).enumerate() {
        if f > 0.0 {
            if *w <= 0.0 {
                return Err(z);
            }
            *w = f / *w;
        } else {
            *w = 0.0;
        }
    }
    for (e, (n, &t)) in next.iter_mut().zip(theta).enumerate() {
        let row = &matrix[e * nz..(e + 1) * nz];
        let g: f64 = row.iter().zip(weights.iter()).map(|(&p, &w)| p * w).sum();
        *n = t * g;
    }
    Ok(())
}

fn estimate_group(
    channel: &Channel,
    s: GroupLabel,
    phi: &ProbVector,
    start: &ProbVector,
    cfg: &EmConfig,
) -> Result<GroupFit, EstimatorError> {
    let nz = channel.z_domain().len();
    let matrix = channel.matrix(s);
    let phi = phi.mass();
    let mut theta = start.mass().to_vec();
    let mut next = vec![0.0; theta.len()];
    let mut weights = vec![0.0; nz];
    let mut trace = cfg.record_trace.then(|| vec![mean_log_likelihood(matrix, nz, &theta, phi)]);

    let mut t = 0;
    let mut converged = false;
    while t < cfg.max_iterations {
        t += 1;
        update(matrix, nz, phi, &theta, &mut next, &mut weights).map_err(|zi| {
            EstimatorError::InconsistentObservation { group: s, z: channel.z_domain().value(zi) }
        })?;
        let step = theta.iter().zip(&next).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        std::mem::swap(&mut theta, &mut next);
        if let Some(trace) = trace.as_mut() {
            trace.push(mean_log_likelihood(matrix, nz, &theta, phi));
        }
        if step < cfg.gamma {
            converged = true;
            break;
        }
    }
    if !converged {
        log::debug!("group {s}: no convergence after {t} iterations");
    }
    Ok(GroupFit {
        estimate: ProbVector::from_parts_unchecked(channel.e_domain().clone(), theta),
        iterations: t,
        converged,
        likelihood_trace: trace,
    })
}

fn mean_log_likelihood(matrix: &[f64], nz: usize, theta: &[f64], phi: &[f64]) -> f64 {
    let mut total = 0.0;
    for (z, &f) in phi.iter().enumerate() {
        if f == 0.0 {
            continue;
        }
        let marginal: f64 = theta.iter().enumerate().map(|(e, &t)| matrix[e * nz + z] * t).sum();
        if marginal <= 0.0 {
            return f64::NEG_INFINITY;
        }
        total += f * marginal.ln();
    }
    total
}

/// `Σ_z M·φ_s[z]·log Σ_e P[z|e,s]·θ[e]`, or `-∞` when an observed `z` has no mass.
pub fn log_likelihood(
    theta: &ProbVector,
    channel: &Channel,
    s: GroupLabel,
    phi_s: &ProbVector,
    sample_count: usize,
) -> Result<f64, EstimatorError> {
    if theta.domain() != channel.e_domain() || phi_s.domain() != channel.z_domain() {
        return Err(EstimatorError::DomainMismatch);
    }
    if s.0 >= channel.num_groups() {
        return Err(EstimatorError::GroupMismatch { channel: channel.num_groups(), observed: s.0 + 1 });
    }
    let ll = mean_log_likelihood(channel.matrix(s), channel.z_domain().len(), theta.mass(), phi_s.mass());
    Ok(sample_count as f64 * ll)
}
