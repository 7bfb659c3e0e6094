use libm::{floor, log, sqrt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ParaError;

const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    /// 95% Wilson score interval.
    pub lo: f64,
    pub hi: f64,
    pub successes: u64,
    pub trials: u64,
}

impl Estimate {
    pub fn covers(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }
}

pub fn wilson_interval(successes: u64, trials: u64) -> Result<(f64, f64), ParaError> {
    if trials == 0 {
        return Err(ParaError::NoTrials);
    }
    let n = trials as f64;
    let ph = successes as f64 / n;
    let z2 = Z95 * Z95;
    let denom = 1.0 + z2 / n;
    let centre = (ph + z2 / (2.0 * n)) / denom;
    let half = Z95 * sqrt(ph * (1.0 - ph) / n + z2 / (4.0 * n * n)) / denom;
    Ok(((centre - half).max(0.0), (centre + half).min(1.0)))
}

/// Seeded simulation of the hammer-count chain solved by
/// [`super::exact_success_dp`].
///
/// Runs of successful hammers are drawn as one geometric variate each, so a
/// trial costs one draw per refresh rather than one per slot.
pub fn monte_carlo_p_rh(
    p: f64,
    n_rh: u64,
    slots: u64,
    trials: u64,
    seed: u64,
) -> Result<Estimate, ParaError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(ParaError::InvalidProbability(p));
    }
    if n_rh == 0 {
        return Err(ParaError::InvalidParams("N_RH must be at least 1"));
    }
    if trials == 0 {
        return Err(ParaError::NoTrials);
    }
    let ln_q = libm::log1p(-p / 2.0);
    let n = n_rh as i64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut successes = 0u64;
    for _ in 0..trials {
        let mut left = slots as i64;
        while left >= n {
            // Hammers landed before the next refresh: P(K >= k) = q^k.
            let run = if ln_q == 0.0 {
                f64::INFINITY
            } else {
                let u: f64 = 1.0 - rng.gen::<f64>();
                floor(log(u) / ln_q)
            };
            if run >= n as f64 {
                successes += 1;
                break;
            }
            // The run, the refreshing activation and the refresh itself.
            left -= run as i64 + 2;
        }
    }
    let (lo, hi) = wilson_interval(successes, trials)?;
    Ok(Estimate {
        mean: successes as f64 / trials as f64,
        lo,
        hi,
        successes,
        trials,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::para::exact_success_dp;

    #[test]
    fn agrees_with_dp_on_small_chain() {
        let e = monte_carlo_p_rh(0.5, 2, 4, 200_000, 1).unwrap();
        assert!(e.covers(exact_success_dp(0.5, 2, 4).unwrap()), "{e:?}");
        let e = monte_carlo_p_rh(1.0, 2, 2, 200_000, 2).unwrap();
        assert!(e.covers(0.25), "{e:?}");
    }

    #[test]
    fn zero_trials_is_an_error() {
        assert_eq!(monte_carlo_p_rh(0.5, 2, 4, 0, 0), Err(ParaError::NoTrials));
    }

    #[test]
    fn wilson_bounds() {
        let (lo, hi) = wilson_interval(0, 100).unwrap();
        assert!(lo < 1e-12);
        assert!(hi > 0.03 && hi < 0.04);
        let (lo, hi) = wilson_interval(50, 100).unwrap();
        assert!(lo < 0.5 && hi > 0.5);
    }

    #[test]
    fn deterministic_for_a_seed() {
        let a = monte_carlo_p_rh(0.3, 5, 50, 10_000, 9).unwrap();
        let b = monte_carlo_p_rh(0.3, 5, 50, 10_000, 9).unwrap();
        assert_eq!(a, b);
    }
}
