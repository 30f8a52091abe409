//! Birth-death master equation over queue lengths.
//!
//! The state is a probability vector `P(l, t)` over queue lengths
//! `l = 0..N-1`. Only neighbouring transitions exist. Every rate depends on
//! the destination index and the previous average queue size:
//!
//! ```text
//! a(x, y) = exp(-|x + avg|)      (flow from y into x, |x - y| = 1)
//! ```
//!
//! Evolution is explicit forward Euler with step `dt`.

mod oracle;

pub use oracle::{dense_oracle_step, MAX_ORACLE_STATES};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Tolerance used when accepting an externally supplied probability vector.
pub const SUM_TOLERANCE: f64 = 1e-9;

/// How the probability vector is filled before the first arrival.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitMode {
    #[default]
    Uniform,
    /// Positive draws from a ChaCha8 stream seeded with the given value,
    /// normalized to sum 1.
    SeededRandom(u64),
}

/// `P(l, t)` for `l = 0..n_states`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityVector {
    p: Vec<f64>,
}

impl ProbabilityVector {
    pub fn new(n_states: usize, mode: InitMode) -> Result<Self> {
        check_states(n_states)?;
        let p = match mode {
            InitMode::Uniform => vec![1.0 / n_states as f64; n_states],
            InitMode::SeededRandom(seed) => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                // gen() is in [0, 1); flip it so every draw is strictly positive.
                let raw: Vec<f64> = (0..n_states).map(|_| 1.0 - rng.gen::<f64>()).collect();
                let total: f64 = raw.iter().sum();
                raw.into_iter().map(|x| x / total).collect()
            }
        };
        Ok(ProbabilityVector { p })
    }

    /// Wraps an explicit distribution. Entries must be finite and
    /// non-negative and sum to 1 within [`SUM_TOLERANCE`].
    pub fn from_vec(p: Vec<f64>) -> Result<Self> {
        check_states(p.len())?;
        if let Some(bad) = p.iter().find(|x| !x.is_finite() || **x < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "probability entry {bad} is not a finite non-negative value"
            )));
        }
        let total: f64 = p.iter().sum();
        if (total - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::InvalidArgument(format!(
                "probabilities sum to {total}, expected 1"
            )));
        }
        Ok(ProbabilityVector { p })
    }

    pub fn n_states(&self) -> usize {
        self.p.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.p
    }

    pub fn sum(&self) -> f64 {
        self.p.iter().sum()
    }

    /// `P(q, t)`. The caller clamps `q` to the buffer before asking.
    pub fn probability_of(&self, q: usize) -> Result<f64> {
        self.p.get(q).copied().ok_or(Error::OutOfRange {
            q,
            n_states: self.p.len(),
        })
    }

    pub fn memory_bytes(&self) -> usize {
        self.p.len() * std::mem::size_of::<f64>()
    }
}

/// Convenience wrapper over [`ProbabilityVector::new`].
pub fn init_probabilities(n_states: usize, mode: InitMode) -> Result<ProbabilityVector> {
    ProbabilityVector::new(n_states, mode)
}

/// The `2N - 2` neighbour transition rates.
///
/// `forward[l]` is the rate of `l -> l+1` for `l = 0..N-2`.
/// `backward[l-1]` is the rate of `l -> l-1` for `l = 1..N-1`.
#[derive(Debug, Clone, PartialEq)]
pub struct RateTable {
    forward: Vec<f64>,
    backward: Vec<f64>,
    avg_used: f64,
    max_outflow: f64,
}

impl RateTable {
    pub fn build(avg: f64, n_states: usize) -> Result<Self> {
        check_states(n_states)?;
        let mut table = RateTable {
            forward: vec![0.0; n_states - 1],
            backward: vec![0.0; n_states - 1],
            avg_used: 0.0,
            max_outflow: 0.0,
        };
        table.rebuild(avg)?;
        Ok(table)
    }

    /// Recomputes every rate in place from a new average.
    pub fn rebuild(&mut self, avg: f64) -> Result<()> {
        if !avg.is_finite() || avg < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "average queue size must be finite and non-negative, got {avg}"
            )));
        }
        for (l, rate) in self.forward.iter_mut().enumerate() {
            *rate = boltzmann_rate((l + 1) as f64, avg);
        }
        for (k, rate) in self.backward.iter_mut().enumerate() {
            // state k+1 drains into k
            *rate = boltzmann_rate(k as f64, avg);
        }
        self.avg_used = avg;
        self.max_outflow = max_outflow(&self.forward, &self.backward);
        Ok(())
    }

    /// Builds a table from explicit rates. Used to inject synthetic
    /// generators in tests.
    pub fn from_parts(forward: Vec<f64>, backward: Vec<f64>) -> Result<Self> {
        if forward.len() != backward.len() || forward.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "rate vectors must be non-empty and equal length, got {} and {}",
                forward.len(),
                backward.len()
            )));
        }
        if forward
            .iter()
            .chain(backward.iter())
            .any(|r| !r.is_finite() || *r < 0.0)
        {
            return Err(Error::InvalidArgument(
                "rates must be finite and non-negative".into(),
            ));
        }
        let max_outflow = max_outflow(&forward, &backward);
        Ok(RateTable {
            forward,
            backward,
            avg_used: f64::NAN,
            max_outflow,
        })
    }

    pub fn n_states(&self) -> usize {
        self.forward.len() + 1
    }

    /// Number of stored rates, always `2N - 2`.
    pub fn len(&self) -> usize {
        self.forward.len() + self.backward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn avg_used(&self) -> f64 {
        self.avg_used
    }

    pub fn forward(&self) -> &[f64] {
        &self.forward
    }

    pub fn backward(&self) -> &[f64] {
        &self.backward
    }

    /// Rate of `l -> l+1`; zero at the top state.
    pub fn forward_out(&self, l: usize) -> f64 {
        self.forward.get(l).copied().unwrap_or(0.0)
    }

    /// Rate of `l -> l-1`; zero at state 0.
    pub fn backward_out(&self, l: usize) -> f64 {
        if l == 0 {
            0.0
        } else {
            self.backward.get(l - 1).copied().unwrap_or(0.0)
        }
    }

    /// `a(to, from)`: rate of flow from `from` into `to`. Zero unless the
    /// states are neighbours inside the table.
    pub fn rate(&self, to: usize, from: usize) -> f64 {
        if to == from + 1 {
            self.forward_out(from)
        } else if from == to + 1 {
            self.backward_out(from)
        } else {
            0.0
        }
    }

    /// Largest total outflow `a(l-1,l) + a(l+1,l)` over all states.
    pub fn max_outflow(&self) -> f64 {
        self.max_outflow
    }

    pub fn memory_bytes(&self) -> usize {
        self.len() * std::mem::size_of::<f64>()
    }
}

/// Convenience wrapper over [`RateTable::build`].
pub fn build_rate_table(avg: f64, n_states: usize) -> Result<RateTable> {
    RateTable::build(avg, n_states)
}

/// Exponent magnitude past which `exp(-x)` is certainly below
/// `f64::MIN_POSITIVE` (`-ln(MIN_POSITIVE)` is about 708.396).
const FLUSH_EXPONENT: f64 = 708.4;

fn boltzmann_rate(destination: f64, avg: f64) -> f64 {
    let energy = (destination + avg).abs();
    if energy > FLUSH_EXPONENT {
        return 0.0;
    }
    let rate = (-energy).exp();
    if rate < f64::MIN_POSITIVE {
        0.0
    } else {
        rate
    }
}

fn max_outflow(forward: &[f64], backward: &[f64]) -> f64 {
    let n = forward.len() + 1;
    (0..n)
        .map(|l| {
            let up = forward.get(l).copied().unwrap_or(0.0);
            let down = if l == 0 { 0.0 } else { backward[l - 1] };
            up + down
        })
        .fold(0.0, f64::max)
}

fn check_states(n_states: usize) -> Result<()> {
    if n_states < 2 {
        return Err(Error::config(
            "n_states",
            format!("at least 2 states required, got {n_states}"),
        ));
    }
    Ok(())
}

fn check_step(pv: &ProbabilityVector, rates: &RateTable, dt: f64) -> Result<()> {
    if pv.n_states() != rates.n_states() {
        return Err(Error::InvalidArgument(format!(
            "probability vector has {} states but rate table has {}",
            pv.n_states(),
            rates.n_states()
        )));
    }
    if !dt.is_finite() || dt <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "time step must be positive, got {dt}"
        )));
    }
    if dt * rates.max_outflow() >= 1.0 {
        return Err(Error::Unstable {
            dt,
            max_outflow: rates.max_outflow(),
        });
    }
    Ok(())
}

/// One forward Euler step written into `out`.
///
/// Each entry is `p[l]·(1 - dt·out(l)) + dt·in(l)`; both terms are
/// non-negative under the stability guard.
fn euler_into(p: &[f64], rates: &RateTable, dt: f64, out: &mut [f64]) {
    let n = p.len();
    let fwd = &rates.forward;
    let bwd = &rates.backward;
    for l in 0..n {
        let up = if l + 1 < n { fwd[l] } else { 0.0 };
        let down = if l > 0 { bwd[l - 1] } else { 0.0 };
        let mut gain = 0.0;
        if l > 0 {
            gain += fwd[l - 1] * p[l - 1];
        }
        if l + 1 < n {
            gain += bwd[l] * p[l + 1];
        }
        out[l] = p[l] * (1.0 - dt * (up + down)) + dt * gain;
    }
}

pub fn euler_step(pv: &ProbabilityVector, rates: &RateTable, dt: f64) -> Result<ProbabilityVector> {
    check_step(pv, rates, dt)?;
    let mut out = vec![0.0; pv.n_states()];
    euler_into(&pv.p, rates, dt, &mut out);
    Ok(ProbabilityVector { p: out })
}

/// Rebuilds the rates from `avg_prev` once, then applies `substeps` Euler
/// steps of size `dt`.
pub fn evolve_on_arrival(
    pv: &ProbabilityVector,
    avg_prev: f64,
    dt: f64,
    substeps: usize,
) -> Result<ProbabilityVector> {
    let mut kernel = MasterEquation::from_parts(
        pv.clone(),
        KernelSettings {
            n_states: pv.n_states(),
            dt,
            substeps,
            init: InitMode::Uniform,
        },
    )?;
    kernel.evolve(avg_prev)?;
    Ok(kernel.pv)
}

/// Settings for the per-arrival master-equation solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSettings {
    pub n_states: usize,
    pub dt: f64,
    pub substeps: usize,
    pub init: InitMode,
}

impl Default for KernelSettings {
    fn default() -> Self {
        KernelSettings {
            n_states: 500,
            dt: 0.01,
            substeps: 1,
            init: InitMode::Uniform,
        }
    }
}

impl KernelSettings {
    pub fn validate(&self) -> Result<()> {
        check_states(self.n_states)?;
        if !self.dt.is_finite() || self.dt <= 0.0 {
            return Err(Error::config(
                "dt",
                format!("must be positive, got {}", self.dt),
            ));
        }
        // Rates never exceed 1, so a state's outflow never exceeds 2.
        if 2.0 * self.dt >= 1.0 {
            return Err(Error::config(
                "dt",
                format!("dt={} violates dt*2*max(rate) < 1", self.dt),
            ));
        }
        if self.substeps == 0 {
            return Err(Error::config("substeps", "must be at least 1"));
        }
        Ok(())
    }
}

/// Reusable solver state: probability vector, rate table, and a scratch
/// buffer, so per-arrival evolution does not allocate.
#[derive(Debug, Clone)]
pub struct MasterEquation {
    pv: ProbabilityVector,
    rates: RateTable,
    scratch: Vec<f64>,
    dt: f64,
    substeps: usize,
}

impl MasterEquation {
    pub fn new(settings: KernelSettings) -> Result<Self> {
        settings.validate()?;
        let pv = ProbabilityVector::new(settings.n_states, settings.init)?;
        Self::from_parts(pv, settings)
    }

    /// Starts from an explicit distribution; `settings.n_states` and
    /// `settings.init` are taken from `pv`.
    pub fn from_parts(pv: ProbabilityVector, settings: KernelSettings) -> Result<Self> {
        let settings = KernelSettings {
            n_states: pv.n_states(),
            ..settings
        };
        settings.validate()?;
        let n = pv.n_states();
        Ok(MasterEquation {
            rates: RateTable::build(0.0, n)?,
            scratch: vec![0.0; n],
            pv,
            dt: settings.dt,
            substeps: settings.substeps,
        })
    }

    pub fn evolve(&mut self, avg_prev: f64) -> Result<()> {
        self.rates.rebuild(avg_prev)?;
        check_step(&self.pv, &self.rates, self.dt)?;
        for _ in 0..self.substeps {
            euler_into(&self.pv.p, &self.rates, self.dt, &mut self.scratch);
            std::mem::swap(&mut self.pv.p, &mut self.scratch);
        }
        Ok(())
    }

    pub fn probabilities(&self) -> &ProbabilityVector {
        &self.pv
    }

    pub fn rates(&self) -> &RateTable {
        &self.rates
    }

    pub fn n_states(&self) -> usize {
        self.pv.n_states()
    }

    pub fn probability_of(&self, q: usize) -> Result<f64> {
        self.pv.probability_of(q)
    }

    /// Bytes held by the solver's vectors (probabilities, rates, scratch).
    pub fn memory_bytes(&self) -> usize {
        self.pv.memory_bytes()
            + self.rates.memory_bytes()
            + self.scratch.len() * std::mem::size_of::<f64>()
    }
}
