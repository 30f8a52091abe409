use crate::error::{Error, Result};

use super::{ProbabilityVector, RateTable};

/// Largest state count accepted by [`dense_oracle_step`].
pub const MAX_ORACLE_STATES: usize = 64;

/// Reference Euler step through the full `N x N` generator matrix.
///
/// Slow and test-scale only. Assembles `A` entry by entry from
/// [`RateTable::rate`] and returns `p + dt·(A·p)` without the stability
/// guard, so `dt = 0` is allowed.
pub fn dense_oracle_step(
    pv: &ProbabilityVector,
    rates: &RateTable,
    dt: f64,
) -> Result<ProbabilityVector> {
    let n = pv.n_states();
    if n != rates.n_states() {
        return Err(Error::InvalidArgument(format!(
            "probability vector has {n} states but rate table has {}",
            rates.n_states()
        )));
    }
    if n > MAX_ORACLE_STATES {
        return Err(Error::InvalidArgument(format!(
            "dense oracle limited to {MAX_ORACLE_STATES} states, got {n}"
        )));
    }

    let mut generator = vec![vec![0.0; n]; n];
    for l in 0..n {
        if l + 1 < n {
            generator[l][l + 1] = rates.rate(l, l + 1);
            generator[l][l] -= rates.rate(l + 1, l);
        }
        if l > 0 {
            generator[l][l - 1] = rates.rate(l, l - 1);
            generator[l][l] -= rates.rate(l - 1, l);
        }
    }

    let p = pv.as_slice();
    let next = generator
        .iter()
        .zip(p)
        .map(|(row, &pl)| {
            let flow: f64 = row.iter().zip(p).map(|(a, x)| a * x).sum();
            pl + dt * flow
        })
        .collect();
    // No validation: the oracle reports whatever the matrix produces.
    Ok(ProbabilityVector { p: next })
}
