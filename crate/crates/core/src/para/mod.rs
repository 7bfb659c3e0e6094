//! Failure-probability analysis for PARA when preventive refreshes may be
//! deferred by a scheduling slack, and the threshold solver built on it.
//!
//! An attacker hammers one victim for a whole refresh window. Every
//! activation of an aggressor triggers a refresh of the victim with
//! probability `p/2`. The attack succeeds once `N_RH` activations land
//! without an intervening refresh; a refresh that is deferred by the slack
//! lets `HC_deadline` extra activations slip through.

mod dp;
mod mc;

pub use dp::{exact_success_dp, DP_MAX_CELLS};
pub use mc::{monte_carlo_p_rh, wilson_interval, Estimate};

use libm::{exp, expm1, log, log1p};

use crate::time::Ps;
use crate::timing::TimingParams;

/// Default reliability target for the whole refresh window.
pub const DEFAULT_TARGET: f64 = 1e-15;

const BRACKET_LO: f64 = 1e-9;
const MAX_ITERATIONS: u32 = 80;
const TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ParaError {
    #[error("probability {0} is outside (0, 1]")]
    InvalidProbability(f64),
    #[error("hammer count {hc} outside [1, {n_rh})")]
    HammerCountOutOfRange { hc: u64, n_rh: u64 },
    #[error("invalid parameters: {0}")]
    InvalidParams(&'static str),
    #[error("target {target:e} unreachable: even p_th = 1 leaves p_RH = {at_one:e}")]
    Unreachable { target: f64, at_one: f64 },
    #[error("DP table of {cells} cells exceeds the limit of {limit}")]
    TableTooLarge { cells: u128, limit: u128 },
    #[error("an estimate needs at least one trial")]
    NoTrials,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParaParams {
    pub n_rh: u64,
    pub t_refw: Ps,
    pub t_rc: Ps,
    /// How long a preventive refresh may wait before it is performed.
    pub slack: Ps,
    pub target: f64,
}

impl ParaParams {
    /// DDR4 window and row cycle, slack given in multiples of tRC.
    pub fn ddr4(n_rh: u64, slack_multiple: u64) -> Self {
        let t = TimingParams::ddr4();
        Self {
            n_rh,
            t_refw: t.t_refw,
            t_rc: t.t_rc,
            slack: slack_multiple * t.t_rc,
            target: DEFAULT_TARGET,
        }
    }

    pub fn validate(&self) -> Result<(), ParaError> {
        if self.n_rh == 0 {
            return Err(ParaError::InvalidParams("N_RH must be at least 1"));
        }
        if self.t_rc == 0 || self.t_refw == 0 {
            return Err(ParaError::InvalidParams("tREFW and tRC must be positive"));
        }
        if self.hc_deadline() >= self.n_rh {
            return Err(ParaError::InvalidParams("HC_deadline must be below N_RH"));
        }
        if !(self.target > 0.0 && self.target < 1.0) {
            return Err(ParaError::InvalidParams("target must lie in (0, 1)"));
        }
        Ok(())
    }

    /// Activations an attacker fits in one refresh window.
    pub fn slots(&self) -> u64 {
        self.t_refw / self.t_rc
    }

    /// Activations that fit inside the slack.
    pub fn hc_deadline(&self) -> u64 {
        self.slack / self.t_rc
    }

    /// Maximum number of failed attempts before the successful one.
    pub fn n_f_max(&self) -> NfMax {
        let used = self.n_rh + self.hc_deadline();
        match self.slots().checked_sub(used) {
            Some(room) => NfMax {
                value: room / 2,
                clamped: false,
            },
            None => NfMax {
                value: 0,
                clamped: true,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NfMax {
    pub value: u64,
    /// The window could not even hold one full attack.
    pub clamped: bool,
}

fn check_p(p: f64) -> Result<(), ParaError> {
    if p > 0.0 && p <= 1.0 {
        Ok(())
    } else {
        Err(ParaError::InvalidProbability(p))
    }
}

/// `ln(1 - p/2)`.
fn ln_q(p: f64) -> f64 {
    log1p(-p / 2.0)
}

/// Probability that an attempt ends in a refresh after `hc` hammers.
pub fn failed_attempt_prob(hc: u64, p: f64, n_rh: u64) -> Result<f64, ParaError> {
    check_p(p)?;
    if hc == 0 || hc >= n_rh {
        return Err(ParaError::HammerCountOutOfRange { hc, n_rh });
    }
    Ok(exp(hc as f64 * ln_q(p)) * p / 2.0)
}

/// `ln Σ_{k=0}^{m} r^k` for `0 < r < 1`, from the closed form
/// `(1 - r^(m+1)) / (1 - r)`.
fn ln_geometric_sum(ln_r: f64, m: u64) -> f64 {
    let num = -expm1((m as f64 + 1.0) * ln_r);
    log(num) - log1p(-exp(ln_r))
}

/// The same partial sum, accumulated term by term with compensation.
/// Stops once the remaining tail cannot affect a double.
fn geometric_term_sum(ln_r: f64, m: u64) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    let mut k = 0u64;
    while k <= m {
        let term = exp(k as f64 * ln_r);
        let t = sum + term;
        if libm::fabs(sum) >= libm::fabs(term) {
            comp += (sum - t) + term;
        } else {
            comp += (term - t) + sum;
        }
        sum = t;
        if term < sum * 1e-20 {
            break;
        }
        k += 1;
    }
    sum + comp
}

fn ln_r(p: f64) -> f64 {
    log(p / 2.0) + ln_q(p)
}

/// `ln p_RH(p)`.
pub fn ln_p_rh(p: f64, params: &ParaParams) -> Result<f64, ParaError> {
    check_p(p)?;
    params.validate()?;
    if params.slots() < params.n_rh {
        return Ok(f64::NEG_INFINITY);
    }
    let m = params.n_f_max().value;
    let exponent = (params.n_rh - params.hc_deadline()) as f64;
    Ok(exponent * ln_q(p) + ln_geometric_sum(ln_r(p), m))
}

/// Probability that a single victim collects `N_RH` unrefreshed hammers
/// somewhere in one refresh window.
pub fn p_rh(p: f64, params: &ParaParams) -> Result<f64, ParaError> {
    Ok(exp(ln_p_rh(p, params)?))
}

/// [`p_rh`] evaluated term by term instead of through the closed form.
pub fn p_rh_term_sum(p: f64, params: &ParaParams) -> Result<f64, ParaError> {
    check_p(p)?;
    params.validate()?;
    if params.slots() < params.n_rh {
        return Ok(0.0);
    }
    let m = params.n_f_max().value;
    let exponent = (params.n_rh - params.hc_deadline()) as f64;
    Ok(exp(exponent * ln_q(p)) * geometric_term_sum(ln_r(p), m))
}

/// Failure probability when refreshes are never deferred and failed
/// attempts are not counted: `(1 - p/2)^N_RH`.
pub fn legacy_p_rh(p: f64, n_rh: u64) -> Result<f64, ParaError> {
    check_p(p)?;
    if n_rh == 0 {
        return Err(ParaError::InvalidParams("N_RH must be at least 1"));
    }
    Ok(exp(n_rh as f64 * ln_q(p)))
}

/// Ratio between [`p_rh`] and [`legacy_p_rh`].
pub fn k_factor(p: f64, params: &ParaParams) -> Result<f64, ParaError> {
    check_p(p)?;
    params.validate()?;
    let m = params.n_f_max().value;
    Ok(exp(
        -(params.hc_deadline() as f64) * ln_q(p) + ln_geometric_sum(ln_r(p), m)
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParaSolution {
    pub p_th: f64,
    pub p_rh: f64,
    pub iterations: u32,
    pub n_f_max: u64,
}

/// Smallest probability in `[1e-9, 1]` whose `ln_f` is at most
/// `ln(target)`, assuming `ln_f` decreases monotonically.
fn bisect<F>(target: f64, ln_f: F) -> Result<(f64, u32), ParaError>
where
    F: Fn(f64) -> Result<f64, ParaError>,
{
    let ln_target = log(target);
    let at_one = ln_f(1.0)?;
    if at_one > ln_target {
        return Err(ParaError::Unreachable {
            target,
            at_one: exp(at_one),
        });
    }
    if ln_f(BRACKET_LO)? <= ln_target {
        return Ok((BRACKET_LO, 0));
    }
    let (mut lo, mut hi) = (BRACKET_LO, 1.0);
    let mut it = 0;
    while it < MAX_ITERATIONS && hi - lo > TOLERANCE {
        let mid = 0.5 * (lo + hi);
        if ln_f(mid)? <= ln_target {
            hi = mid;
        } else {
            lo = mid;
        }
        it += 1;
    }
    Ok((hi, it))
}

pub fn solve_p_th(params: &ParaParams) -> Result<ParaSolution, ParaError> {
    params.validate()?;
    let (p_th, iterations) = bisect(params.target, |p| ln_p_rh(p, params))?;
    Ok(ParaSolution {
        p_th,
        p_rh: p_rh(p_th, params)?,
        iterations,
        n_f_max: params.n_f_max().value,
    })
}

pub fn legacy_solve_p_th(n_rh: u64, target: f64) -> Result<f64, ParaError> {
    if !(target > 0.0 && target < 1.0) {
        return Err(ParaError::InvalidParams("target must lie in (0, 1)"));
    }
    bisect(target, |p| Ok(n_rh as f64 * ln_q(p))).map(|(p, _)| p)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n_rh: u64, slots: u64) -> ParaParams {
        ParaParams {
            n_rh,
            t_refw: slots * 1000,
            t_rc: 1000,
            slack: 0,
            target: 1e-3,
        }
    }

    #[test]
    fn failed_attempt() {
        assert_eq!(failed_attempt_prob(1, 1.0, 4).unwrap(), 0.25);
        assert!((failed_attempt_prob(2, 0.5, 4).unwrap() - 0.140625).abs() < 1e-15);
        assert!(failed_attempt_prob(0, 0.5, 4).is_err());
        assert!(failed_attempt_prob(4, 0.5, 4).is_err());
    }

    #[test]
    fn n_f_max_values() {
        let p = ParaParams::ddr4(9600, 0);
        assert_eq!(p.slots(), 1_383_783);
        assert_eq!(p.n_f_max().value, 687_091);
        let tight = toy(10, 10);
        assert_eq!(tight.n_f_max().value, 0);
        let p8 = ParaParams::ddr4(9600, 8);
        assert_eq!(p8.hc_deadline(), 8);
        assert_eq!(p8.n_f_max().value, (1_383_783 - 9600 - 8) / 2);
        assert!(toy(20, 10).n_f_max().clamped);
    }

    #[test]
    fn small_cases_by_hand() {
        let v = p_rh(0.5, &toy(2, 4)).unwrap();
        assert!((v - 0.66796875).abs() < 1e-14);
        let v = p_rh(1.0, &toy(1, 3)).unwrap();
        assert!((v - 0.625).abs() < 1e-14);
        assert!(p_rh(1e-9, &toy(4, 100)).unwrap() > 0.999_999);
        assert_eq!(p_rh(0.5, &toy(5, 4)).unwrap(), 0.0);
        assert!(p_rh(0.0, &toy(2, 4)).is_err());
        assert!(legacy_p_rh(2.0, 4).is_err());
    }

    #[test]
    fn closed_form_matches_term_sum() {
        for &(n, s) in &[(64u64, 0u64), (1024, 0), (128, 8), (9600, 4)] {
            let params = ParaParams::ddr4(n, s);
            for &p in &[1e-6, 0.001, 0.07, 0.5, 0.86, 1.0] {
                let a = p_rh(p, &params).unwrap();
                let b = p_rh_term_sum(p, &params).unwrap();
                if a > 0.0 {
                    assert!(((a - b) / a).abs() < 1e-12, "n={n} p={p}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn solver_meets_target() {
        let params = ParaParams::ddr4(1024, 0);
        let s = solve_p_th(&params).unwrap();
        assert!(s.p_rh <= params.target);
        assert!(p_rh(s.p_th - 2e-6, &params).unwrap() > params.target);
        assert!(s.iterations <= 80);
        let unreachable = ParaParams {
            target: 1e-300,
            ..ParaParams::ddr4(2, 0)
        };
        assert!(matches!(
            solve_p_th(&unreachable),
            Err(ParaError::Unreachable { .. })
        ));
    }

    #[test]
    fn legacy_solver_inverts_closed_form() {
        let p = legacy_solve_p_th(1024, 1e-15).unwrap();
        // (1 - p/2)^1024 = 1e-15  =>  p = 2 (1 - 1e-15^(1/1024))
        let exact = 2.0 * (1.0 - libm::pow(1e-15, 1.0 / 1024.0));
        assert!((p - exact).abs() < 2e-6);
    }
}
