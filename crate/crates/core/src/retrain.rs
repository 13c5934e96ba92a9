//! Bayesian retraining trigger.
//!
//! The posterior that a model needs retraining given an observed degradation
//! `s_t` is
//!
//! ```text
//! P(R=1 | s) = L1·π / (L1·π + L0·(1 − π))
//! ```
//!
//! where `π` is the prior and `L1`, `L0` are the likelihoods of `s` under the
//! "needs retraining" and "healthy" hypotheses. The trigger fires when the
//! posterior exceeds the configured threshold.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("both likelihoods are zero; posterior is undefined")]
    DegenerateEvidence,
    #[error("invalid policy config: {0}")]
    InvalidConfig(String),
    #[error("degradation signal must be finite, got {0}")]
    NonFiniteSignal(f64),
}

/// Observed performance degradation: reference metric minus current metric.
/// Positive means the model got worse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DegradationSignal {
    pub s_t: f64,
    pub observed_at: DateTime<Utc>,
}

impl DegradationSignal {
    pub fn new(s_t: f64) -> Self {
        DegradationSignal {
            s_t,
            observed_at: Utc::now(),
        }
    }
}

/// Univariate Gaussian likelihood.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gaussian {
    pub mean: f64,
    pub std: f64,
}

impl Gaussian {
    pub fn ln_pdf(&self, x: f64) -> f64 {
        let z = (x - self.mean) / self.std;
        -0.5 * z * z - self.std.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    pub prior_retrain: f64,
    /// Likelihood of the signal when retraining is needed.
    pub retrain_likelihood: Gaussian,
    /// Likelihood of the signal when the model is healthy.
    pub healthy_likelihood: Gaussian,
    pub posterior_threshold: f64,
    /// Carry each posterior forward as the next prior.
    pub sequential: bool,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            prior_retrain: 0.5,
            retrain_likelihood: Gaussian {
                mean: 0.05,
                std: 0.02,
            },
            healthy_likelihood: Gaussian {
                mean: 0.0,
                std: 0.02,
            },
            posterior_threshold: 0.7,
            sequential: false,
        }
    }
}

impl PolicyConfig {
    pub fn check(&self) -> Result<(), PolicyError> {
        let prob = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(PolicyError::InvalidConfig(format!("{name}={v} not in [0, 1]")))
            }
        };
        prob("prior_retrain", self.prior_retrain)?;
        prob("posterior_threshold", self.posterior_threshold)?;
        for (name, g) in [
            ("retrain_likelihood", self.retrain_likelihood),
            ("healthy_likelihood", self.healthy_likelihood),
        ] {
            if !(g.std > 0.0) || !g.std.is_finite() || !g.mean.is_finite() {
                return Err(PolicyError::InvalidConfig(format!(
                    "{name} needs a finite mean and std > 0"
                )));
            }
        }
        Ok(())
    }
}

/// Log-likelihoods of one observation under both hypotheses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evidence {
    pub ln_retrain: f64,
    pub ln_healthy: f64,
}

impl Evidence {
    /// Evidence from explicit likelihood values (densities or masses).
    pub fn from_likelihoods(retrain: f64, healthy: f64) -> Self {
        Evidence {
            ln_retrain: retrain.ln(),
            ln_healthy: healthy.ln(),
        }
    }

    /// Evidence from the configured Gaussian densities.
    pub fn gaussian(s_t: f64, config: &PolicyConfig) -> Self {
        Evidence {
            ln_retrain: config.retrain_likelihood.ln_pdf(s_t),
            ln_healthy: config.healthy_likelihood.ln_pdf(s_t),
        }
    }

    /// Returns `(P(R=1|s), P(R=0|s))`.
    ///
    /// Both likelihoods are rescaled by their common maximum before the
    /// ratio is formed, so tiny densities do not underflow to `0/0`.
    pub fn posteriors(&self, prior: f64) -> Result<(f64, f64), PolicyError> {
        let scale = self.ln_retrain.max(self.ln_healthy);
        if scale == f64::NEG_INFINITY || scale.is_nan() {
            return Err(PolicyError::DegenerateEvidence);
        }
        let l1 = (self.ln_retrain - scale).exp();
        let l0 = (self.ln_healthy - scale).exp();
        let retrain = l1 * prior;
        let healthy = l0 * (1.0 - prior);
        let denom = retrain + healthy;
        if denom == 0.0 {
            return Err(PolicyError::DegenerateEvidence);
        }
        Ok((retrain / denom, healthy / denom))
    }
}

/// `P(R=1 | s)` from explicit likelihoods.
pub fn posterior_from_likelihoods(prior: f64, retrain: f64, healthy: f64) -> Result<f64, PolicyError> {
    Evidence::from_likelihoods(retrain, healthy)
        .posteriors(prior)
        .map(|(p, _)| p)
}

/// `P(R=1 | s)` under the configured Gaussian likelihoods.
pub fn posterior_retrain(signal: &DegradationSignal, config: &PolicyConfig) -> Result<f64, PolicyError> {
    config.check()?;
    if !signal.s_t.is_finite() {
        return Err(PolicyError::NonFiniteSignal(signal.s_t));
    }
    Evidence::gaussian(signal.s_t, config)
        .posteriors(config.prior_retrain)
        .map(|(p, _)| p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrainDecision {
    pub posterior: f64,
    pub trigger: bool,
    pub rationale: String,
    /// Prior to use for the next observation (sequential mode only).
    pub next_prior: Option<f64>,
}

/// Applies the posterior threshold to one signal.
pub fn decide(signal: &DegradationSignal, config: &PolicyConfig) -> Result<RetrainDecision, PolicyError> {
    let posterior = posterior_retrain(signal, config)?;
    Ok(decision_from_posterior(posterior, signal.s_t, config))
}

pub(crate) fn decision_from_posterior(posterior: f64, s_t: f64, config: &PolicyConfig) -> RetrainDecision {
    let trigger = posterior > config.posterior_threshold;
    let rationale = format!(
        "s_t={s_t:.6} prior={:.6} posterior={posterior:.6} {} threshold {:.3}",
        config.prior_retrain,
        if trigger { ">" } else { "<=" },
        config.posterior_threshold,
    );
    RetrainDecision {
        posterior,
        trigger,
        rationale,
        next_prior: config.sequential.then_some(posterior),
    }
}

/// Per-stream policy state; owns the running prior in sequential mode.
#[derive(Debug, Clone)]
pub struct RetrainPolicy {
    config: PolicyConfig,
    prior: f64,
}

impl RetrainPolicy {
    pub fn new(config: PolicyConfig) -> Result<Self, PolicyError> {
        config.check()?;
        let prior = config.prior_retrain;
        Ok(RetrainPolicy { config, prior })
    }

    pub fn prior(&self) -> f64 {
        self.prior
    }

    pub fn config(&self) -> &PolicyConfig {
        &self.config
    }

    pub fn observe(&mut self, signal: &DegradationSignal) -> Result<RetrainDecision, PolicyError> {
        let config = PolicyConfig {
            prior_retrain: self.prior,
            ..self.config.clone()
        };
        let decision = decide(signal, &config)?;
        if let Some(next) = decision.next_prior {
            self.prior = next;
        }
        Ok(decision)
    }

    /// Restores the configured prior, e.g. after a retrain.
    pub fn reset(&mut self) {
        self.prior = self.config.prior_retrain;
    }
}
