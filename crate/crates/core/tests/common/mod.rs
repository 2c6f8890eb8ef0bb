#![allow(dead_code)]

pub mod oracle;
pub mod soundness;

/// Binomial standard deviation of an observed fraction.
pub fn binomial_sigma(p: f64, n: u64) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}
