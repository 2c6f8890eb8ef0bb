//! Closed-form thresholds for the regimes where the policy does not matter.
//!
//! Below [`low_q_threshold`] (or [`low_p_threshold`]) every non-trivial
//! policy contains the infection with probability at least `1 - delta`.
//! Above the runaway level `f(delta)` for the product `p * q`, every policy
//! fails with probability at least `1 - delta`.

use serde::Serialize;

use crate::error::{Error, Result};

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid("delta", format!("{delta} is not in (0, 1)")))
    }
}

/// `m = ceil(e / delta) + k`, the horizon both low-parameter bounds share.
fn horizon(delta: f64, k: u32) -> Result<f64> {
    check_delta(delta)?;
    Ok((std::f64::consts::E / delta).ceil() + k as f64)
}

/// `q(delta, k) = 1 / (ceil(e / delta) + k)`.
pub fn low_q_threshold(delta: f64, k: u32) -> Result<f64> {
    Ok(1.0 / horizon(delta, k)?)
}

/// `p(delta, k)`; the same formula as [`low_q_threshold`].
pub fn low_p_threshold(delta: f64, k: u32) -> Result<f64> {
    Ok(1.0 / horizon(delta, k)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RunawayCertificate {
    pub p: f64,
    pub q: f64,
    pub delta: f64,
    /// `2 * ceil(max(128, ln(4/delta)/2)) + 16`.
    pub h: u64,
    /// `max((1 - delta/2)^(1/h), 1/2)`.
    pub f_delta: f64,
    /// `p * q > f_delta`.
    pub certified: bool,
}

impl RunawayCertificate {
    /// Active infections that, once reached, make containment unlikely:
    /// `2 * ceil(max(128, ln(4/delta)/2))`.
    pub fn b(&self) -> u64 {
        2 * half_ln_term(self.delta).max(128.0).ceil() as u64
    }

    /// Epoch length constant `2 * ceil(max(64/(pq), ln(4/delta)/2))`.
    /// `None` when `p * q = 0`.
    pub fn c(&self) -> Option<u64> {
        let pq = self.p * self.q;
        (pq > 0.0).then(|| 2 * (64.0 / pq).max(half_ln_term(self.delta)).ceil() as u64)
    }
}

fn half_ln_term(delta: f64) -> f64 {
    (4.0 / delta).ln() / 2.0
}

/// Checks whether `(p, q)` lies above the runaway level for `delta`.
///
/// `f(delta)` is evaluated as `exp(ln(1 - delta/2) / h)`: the check must
/// separate values that agree to six decimals.
pub fn runaway_certificate(p: f64, q: f64, delta: f64) -> Result<RunawayCertificate> {
    check_delta(delta)?;
    crate::error::check_probability("p", p)?;
    crate::error::check_probability("q", q)?;
    let h = 2 * half_ln_term(delta).max(128.0).ceil() as u64 + 16;
    let root = ((-delta / 2.0).ln_1p() / h as f64).exp();
    let f_delta = root.max(0.5);
    Ok(RunawayCertificate {
        p,
        q,
        delta,
        h,
        f_delta,
        certified: p * q > f_delta,
    })
}

/// Active infections at the end of round `t` when `p = q = 1`, `k = 3` and
/// the tracer stabilizes one node per step: `X_3 = 6`,
/// `X_{t+1} = 2 (X_t - 1)`, i.e. `X_t = 2^(t-1) + 2`.
///
/// `None` past the range of `u64`.
pub fn chain_growth_oracle(t: u32) -> Result<Option<u64>> {
    if t < 3 {
        return Err(Error::invalid("t", "the chain starts at round 3"));
    }
    let mut x: u64 = 6;
    for _ in 3..t {
        x = match x.checked_sub(1).and_then(|v| v.checked_mul(2)) {
            Some(v) => v,
            None => return Ok(None),
        };
    }
    Ok(Some(x))
}
