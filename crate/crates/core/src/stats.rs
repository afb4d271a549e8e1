//! Success-rate statistics for the harness: Wilson intervals and a
//! one-sided two-proportion z-test.

use serde::{Deserialize, Serialize};

/// Abramowitz-Stegun 7.1.26 rational approximation of erf; absolute error
/// below 1.5e-7, plenty for test decisions at alpha = 0.05.
pub fn erf(x: f64) -> f64 {
    let sign = if x < 0.0 { -1.0 } else { 1.0 };
    let x = x.abs();
    let t = 1.0 / (1.0 + 0.3275911 * x);
    let poly = t
        * (0.254829592
            + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
    sign * (1.0 - poly * (-x * x).exp())
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + erf(z / std::f64::consts::SQRT_2))
}

/// Wilson 95% score interval for a binomial proportion.
pub fn wilson_interval(successes: u32, trials: u32) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let z = 1.959963984540054f64; // 97.5th percentile
    let n = f64::from(trials);
    let p = f64::from(successes) / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = (z / denom) * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// One-sided two-proportion z-test of `p_a > p_b` using the pooled standard
/// error. Returns the p-value (small means a beats b).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProportionTest {
    pub z: f64,
    pub p_value: f64,
}

pub fn two_proportion_test(
    successes_a: u32,
    trials_a: u32,
    successes_b: u32,
    trials_b: u32,
) -> ProportionTest {
    let (na, nb) = (f64::from(trials_a).max(1.0), f64::from(trials_b).max(1.0));
    let pa = f64::from(successes_a) / na;
    let pb = f64::from(successes_b) / nb;
    let pooled = f64::from(successes_a + successes_b) / (na + nb);
    let se = (pooled * (1.0 - pooled) * (1.0 / na + 1.0 / nb)).sqrt();
    if se == 0.0 {
        // Degenerate pools (all success or all failure): no evidence.
        return ProportionTest { z: 0.0, p_value: 0.5 };
    }
    let z = (pa - pb) / se;
    ProportionTest {
        z,
        p_value: 1.0 - normal_cdf(z),
    }
}
