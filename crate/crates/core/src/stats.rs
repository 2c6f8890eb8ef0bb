//! Chernoff tail bounds and the coin-comparison confidence procedures.
//!
//! Each policy's containment indicator is treated as a biased coin. Given
//! `n` fresh flips per coin and a lower bound `p0` on every coin's bias,
//! the procedures bound the probability that the coin with the largest
//! observed fraction is not the one with the largest true bias.

use serde::Serialize;

use crate::error::{check_probability, Error, Result};

/// Fraction of the observed gap used as the per-coin deviation allowance.
pub const GAP_FRACTION: f64 = 0.49;

/// Failure level the second-round sample size is designed for.
pub const SECOND_ROUND_FAILURE: f64 = 0.15;

/// `exp(-mu * gamma^2 / 3)`, bounding `Pr(X >= (1 + gamma) mu)`.
pub fn chernoff_upper(mu: f64, gamma: f64) -> Result<f64> {
    if !(mu >= 0.0) {
        return Err(Error::invalid("mu", format!("{mu} is negative")));
    }
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::invalid("gamma", format!("{gamma} is not in (0, 1]")));
    }
    Ok((-mu * gamma * gamma / 3.0).exp())
}

/// `exp(-mu * gamma^2 / 2)`, bounding `Pr(X <= (1 - gamma) mu)`.
pub fn chernoff_lower(mu: f64, gamma: f64) -> Result<f64> {
    if !(mu >= 0.0) {
        return Err(Error::invalid("mu", format!("{mu} is negative")));
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::invalid("gamma", format!("{gamma} is not in (0, 1)")));
    }
    Ok((-mu * gamma * gamma / 2.0).exp())
}

/// Why a comparison makes no claim.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum NoClaim {
    /// The top observed fractions are equal.
    ZeroGap,
    /// Some `epsilon / p0 >= 1`, so the tail bounds do not apply.
    EpsilonTooLarge,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConfidenceReport {
    /// Deviation allowance for the top pair (`0.49 * d`).
    pub epsilon: f64,
    /// Allowance against the third coin, three-coin comparisons only.
    pub epsilon2: Option<f64>,
    pub p0: f64,
    /// `1 - c * exp(-n epsilon^2 / 3)`; may be negative, never above 1.
    /// Only a guarantee when `applicable`.
    pub confidence: f64,
    pub applicable: bool,
    pub no_claim: Option<NoClaim>,
    /// Index of the coin with the largest observed fraction; `None` on a
    /// tie at the top.
    pub winner: Option<usize>,
    /// Observed gap between the top two coins.
    pub gap: f64,
}

impl ConfidenceReport {
    /// The confidence, if it is backed by the bound.
    pub fn guarantee(&self) -> Option<f64> {
        self.applicable.then_some(self.confidence)
    }

    /// Whether the report supports a winner claim at `threshold`.
    pub fn claims(&self, threshold: f64) -> bool {
        self.applicable && self.confidence >= threshold
    }
}

fn check_inputs(n: u64, phats: &[f64], p0: f64) -> Result<()> {
    if n < 1 {
        return Err(Error::invalid("n", "at least one flip per coin"));
    }
    for &phat in phats {
        check_probability("phat", phat)?;
    }
    if !(p0 > 0.0 && p0 <= 1.0) {
        return Err(Error::invalid("p0", format!("{p0} is not in (0, 1]")));
    }
    Ok(())
}

/// Confidence that the coin with the larger observed fraction also has the
/// larger bias, from `n` flips of each coin.
pub fn two_coin_confidence(n: u64, phat_a: f64, phat_b: f64, p0: f64) -> Result<ConfidenceReport> {
    check_inputs(n, &[phat_a, phat_b], p0)?;
    let gap = (phat_a - phat_b).abs();
    let epsilon = GAP_FRACTION * gap;
    let confidence = 1.0 - 2.0 * (-(n as f64) * epsilon * epsilon / 3.0).exp();
    let no_claim = if gap == 0.0 {
        Some(NoClaim::ZeroGap)
    } else if epsilon / p0 >= 1.0 {
        Some(NoClaim::EpsilonTooLarge)
    } else {
        None
    };
    let winner = match phat_a.partial_cmp(&phat_b) {
        Some(std::cmp::Ordering::Greater) => Some(0),
        Some(std::cmp::Ordering::Less) => Some(1),
        _ => None,
    };
    Ok(ConfidenceReport {
        epsilon,
        epsilon2: None,
        p0,
        confidence,
        applicable: no_claim.is_none(),
        no_claim,
        winner,
        gap,
    })
}

/// Three-coin version: the observed maximum against the other two.
pub fn three_coin_confidence(n: u64, phats: [f64; 3], p0: f64) -> Result<ConfidenceReport> {
    check_inputs(n, &phats, p0)?;
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| phats[j].total_cmp(&phats[i]));
    let [a, b, c] = order.map(|i| phats[i]);
    let d1 = a - b;
    let d2 = a - c;
    let epsilon = GAP_FRACTION * d1;
    let epsilon2 = GAP_FRACTION * d2;
    let confidence = 1.0 - 3.0 * (-(n as f64) * epsilon * epsilon / 3.0).exp();
    let no_claim = if d1 == 0.0 {
        Some(NoClaim::ZeroGap)
    } else if epsilon / p0 >= 1.0 || epsilon2 / p0 >= 1.0 {
        Some(NoClaim::EpsilonTooLarge)
    } else {
        None
    };
    Ok(ConfidenceReport {
        epsilon,
        epsilon2: Some(epsilon2),
        p0,
        confidence,
        applicable: no_claim.is_none(),
        no_claim,
        winner: (d1 > 0.0).then_some(order[0]),
        gap: d1,
    })
}

/// Second-round trial count for a first-round gap `d`:
/// `50 * ceil(ceil(3 ln(1/0.15) / (0.49 d)^2) / 50)`.
pub fn second_round_size(d: f64) -> Result<u64> {
    if !(d > 0.0) {
        return Err(Error::invalid("d", format!("{d} must be positive")));
    }
    let eps = GAP_FRACTION * d;
    let inner = (3.0 * (1.0 / SECOND_ROUND_FAILURE).ln() / (eps * eps)).ceil();
    if !inner.is_finite() || inner > u64::MAX as f64 / 2.0 {
        return Err(Error::invalid("d", format!("{d} needs an unrepresentable trial count")));
    }
    Ok(50 * (inner as u64).div_ceil(50))
}
