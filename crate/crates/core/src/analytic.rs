//! Saturation analysis of the simple CSMA contention model.
//!
//! After an idle slot every contending node transmits independently with
//! probability `tau`. Busy events (success or collision) last one packet time
//! and are always followed by an idle slot of length `sigma`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schemes::TargetRate;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MacParams {
    pub n: usize,
    pub tau: f64,
    pub sigma: f64,
}

impl MacParams {
    pub fn new(n: usize, tau: f64, sigma: f64) -> Result<Self> {
        let params = MacParams { n, tau, sigma };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("at least one contending node required".into()));
        }
        validate_tau_sigma(self.tau, self.sigma)
    }
}

pub(crate) fn validate_tau_sigma(tau: f64, sigma: f64) -> Result<()> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::Config(format!("tau must lie in (0, 1), got {tau}")));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Config(format!("sigma must be positive, got {sigma}")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlotProbabilities {
    pub p_s: f64,
    pub p_i: f64,
    pub p_c: f64,
}

/// Success, idle and collision probabilities of a contention slot.
///
/// `p_c` is summed from the binomial tail rather than formed as
/// `1 - p_s - p_i`, which loses all precision when `n * tau` is small.
pub fn slot_probabilities(params: &MacParams) -> SlotProbabilities {
    let n = params.n;
    let tau = params.tau;
    let log_idle = (n as f64) * (-tau).ln_1p();
    let p_i = log_idle.exp();
    let p_s = n as f64 * tau * ((n - 1) as f64 * (-tau).ln_1p()).exp();

    let ratio = tau / (1.0 - tau);
    let mut term = p_s;
    let mut p_c = 0.0;
    for j in 2..=n {
        term *= (n - j + 1) as f64 / j as f64 * ratio;
        p_c += term;
    }
    SlotProbabilities { p_s, p_i, p_c }
}

/// Expected duration of one contention cycle: `(1 - p_i)(1 + sigma) + p_i sigma`.
pub fn renewal_time(params: &MacParams) -> f64 {
    let busy = -((params.n as f64) * (-params.tau).ln_1p()).exp_m1();
    busy * (1.0 + params.sigma) + (1.0 - busy) * params.sigma
}

/// Per-node min-throughput attained when every node gets an equal share of
/// the successes and each success delivers `d`.
pub fn throughput_bound(d: TargetRate, params: &MacParams) -> f64 {
    let probs = slot_probabilities(params);
    probs.p_s * d.get() / (params.n as f64 * renewal_time(params))
}
