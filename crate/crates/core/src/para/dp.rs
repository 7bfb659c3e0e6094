use alloc::vec;

use super::ParaError;

/// Largest `T * N_RH` table [`exact_success_dp`] will evaluate.
pub const DP_MAX_CELLS: u128 = 1 << 32;

/// Exact probability that the hammer count reaches `n_rh` within `slots`
/// activation slots.
///
/// Each slot holds one aggressor activation. With probability `q = 1 - p/2`
/// it adds a hammer to the victim; otherwise the victim is refreshed, the
/// count drops to zero and the refresh takes one extra slot:
///
/// `f(t, r) = q * [r + 1 = N ? 1 : f(t-1, r+1)] + (1 - q) * f(t-2, 0)`,
/// with `f(t <= 0, .) = 0`.
pub fn exact_success_dp(p: f64, n_rh: u64, slots: u64) -> Result<f64, ParaError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(ParaError::InvalidProbability(p));
    }
    if n_rh == 0 {
        return Err(ParaError::InvalidParams("N_RH must be at least 1"));
    }
    if slots < n_rh {
        return Ok(0.0);
    }
    let cells = slots as u128 * n_rh as u128;
    if cells > DP_MAX_CELLS {
        return Err(ParaError::TableTooLarge {
            cells,
            limit: DP_MAX_CELLS,
        });
    }
    let n = n_rh as usize;
    let q = 1.0 - p / 2.0;
    let reset = p / 2.0;
    // prev[r] = f(t-1, r); f0_prev2 = f(t-2, 0).
    let mut prev = vec![0.0f64; n];
    let mut cur = vec![0.0f64; n];
    let mut f0_prev2 = 0.0f64;
    for _ in 1..=slots {
        for r in 0..n {
            let advance = if r + 1 == n { 1.0 } else { prev[r + 1] };
            cur[r] = q * advance + reset * f0_prev2;
        }
        f0_prev2 = prev[0];
        core::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[0])
}
