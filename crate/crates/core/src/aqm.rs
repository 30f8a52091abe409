//! Per-arrival admission decisions for classic RED and master-equation RED.
//!
//! Both gateways share one threshold/marking skeleton ([`Gateway`]); they
//! differ only in the [`AverageEstimator`] that produces `avg`.

use crate::error::{Error, Result};
use crate::kernel::{KernelSettings, MasterEquation, ProbabilityVector};

/// Classic RED parameters. `w_q` is read only by [`Ewma`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RedParams {
    pub minth: f64,
    pub maxth: f64,
    pub maxp: f64,
    pub w_q: f64,
    pub use_count_correction: bool,
}

impl Default for RedParams {
    fn default() -> Self {
        RedParams {
            minth: 5.0,
            maxth: 15.0,
            maxp: 1.0 / 50.0,
            w_q: 0.002,
            use_count_correction: true,
        }
    }
}

impl RedParams {
    /// The subset of parameters the marking skeleton needs.
    pub fn marking(&self) -> MarkingParams {
        MarkingParams {
            minth: self.minth,
            maxth: self.maxth,
            maxp: self.maxp,
            use_count_correction: self.use_count_correction,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.marking().validate()?;
        check_weight(self.w_q)
    }
}

/// Thresholds and marking ceiling. Deliberately has no queue weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarkingParams {
    pub minth: f64,
    pub maxth: f64,
    pub maxp: f64,
    pub use_count_correction: bool,
}

impl MarkingParams {
    pub fn validate(&self) -> Result<()> {
        if !self.minth.is_finite() || self.minth < 0.0 {
            return Err(Error::config("minth", "must be finite and non-negative"));
        }
        if !self.maxth.is_finite() || self.maxth <= 0.0 {
            return Err(Error::config("maxth", "must be finite and positive"));
        }
        if self.minth >= self.maxth {
            return Err(Error::config(
                "minth, maxth",
                format!(
                    "minth ({}) must be below maxth ({})",
                    self.minth, self.maxth
                ),
            ));
        }
        if !(self.maxp > 0.0 && self.maxp <= 1.0) {
            return Err(Error::config("maxp", "must lie in (0, 1]"));
        }
        Ok(())
    }
}

fn check_weight(w_q: f64) -> Result<()> {
    if !(w_q > 0.0 && w_q <= 1.0) {
        return Err(Error::config(
            "w_q",
            format!("must lie in (0, 1], got {w_q}"),
        ));
    }
    Ok(())
}

/// `(1 - w_q)·avg + w_q·q`.
pub fn ewma_update(avg: f64, q: usize, w_q: f64) -> Result<f64> {
    check_weight(w_q)?;
    Ok((1.0 - w_q) * avg + w_q * q as f64)
}

/// `q·P(q, t)`.
pub fn mred_average(q: usize, kernel: &MasterEquation) -> Result<f64> {
    Ok(q as f64 * kernel.probability_of(q)?)
}

/// In-band marking probability with optional count correction.
///
/// Only defined for `minth <= avg < maxth`.
pub fn marking_probability(avg: f64, params: &MarkingParams, count: u64) -> Result<f64> {
    if !(avg >= params.minth && avg < params.maxth) {
        return Err(Error::ContractViolation(format!(
            "marking probability requested for avg={avg} outside [{}, {})",
            params.minth, params.maxth
        )));
    }
    let pb = params.maxp * (avg - params.minth) / (params.maxth - params.minth);
    if !params.use_count_correction {
        return Ok(pb.clamp(0.0, 1.0));
    }
    let denom = 1.0 - count as f64 * pb;
    if denom <= 0.0 {
        return Ok(1.0);
    }
    Ok((pb / denom).clamp(0.0, 1.0))
}

/// Source of the average queue size seen by the marking skeleton.
pub trait AverageEstimator: Send {
    /// Called once per arrival with the queue length before enqueueing.
    fn on_arrival(&mut self, q: usize) -> Result<f64>;

    /// Service capacity that went unused because the queue was empty.
    fn on_idle(&mut self, _slots: u64) {}

    fn average(&self) -> f64;

    /// The master-equation state, for estimators that keep one.
    fn probabilities(&self) -> Option<&ProbabilityVector> {
        None
    }
}

/// Classic RED smoothing.
///
/// Arrivals to a non-empty queue apply [`ewma_update`]. An arrival to an
/// empty queue instead decays the average by `(1 - w_q)^m`, where `m` is
/// the number of service slots that went unused since the queue emptied.
#[derive(Debug, Clone)]
pub struct Ewma {
    w_q: f64,
    avg: f64,
    idle_slots: u64,
}

impl Ewma {
    pub fn new(w_q: f64) -> Result<Self> {
        check_weight(w_q)?;
        Ok(Ewma {
            w_q,
            avg: 0.0,
            idle_slots: 0,
        })
    }
}

impl AverageEstimator for Ewma {
    fn on_arrival(&mut self, q: usize) -> Result<f64> {
        if q > 0 {
            self.avg = ewma_update(self.avg, q, self.w_q)?;
        } else if self.idle_slots > 0 {
            let m = i32::try_from(self.idle_slots).unwrap_or(i32::MAX);
            self.avg *= (1.0 - self.w_q).powi(m);
        }
        self.idle_slots = 0;
        Ok(self.avg)
    }

    fn on_idle(&mut self, slots: u64) {
        self.idle_slots = self.idle_slots.saturating_add(slots);
    }

    fn average(&self) -> f64 {
        self.avg
    }
}

/// Average from the master equation: evolve with the previous average,
/// then read `q·P(q, t)`.
#[derive(Debug, Clone)]
pub struct MasterEquationAverage {
    kernel: MasterEquation,
    avg: f64,
}

impl MasterEquationAverage {
    pub fn new(settings: KernelSettings) -> Result<Self> {
        Ok(Self::with_kernel(MasterEquation::new(settings)?))
    }

    pub fn with_kernel(kernel: MasterEquation) -> Self {
        MasterEquationAverage { kernel, avg: 0.0 }
    }

    pub fn kernel(&self) -> &MasterEquation {
        &self.kernel
    }
}

impl AverageEstimator for MasterEquationAverage {
    fn on_arrival(&mut self, q: usize) -> Result<f64> {
        self.kernel.evolve(self.avg)?;
        self.avg = mred_average(q, &self.kernel)?;
        Ok(self.avg)
    }

    fn average(&self) -> f64 {
        self.avg
    }

    fn probabilities(&self) -> Option<&ProbabilityVector> {
        Some(self.kernel.probabilities())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropReason {
    /// Random early drop inside the threshold band.
    Early,
    /// Average at or above `maxth`.
    Forced,
    /// Buffer full.
    Overflow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Enqueue,
    Drop(DropReason),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Verdict {
    pub action: Action,
    pub marking_prob_used: f64,
    pub avg_at_decision: f64,
}

impl Verdict {
    pub fn is_drop(&self) -> bool {
        matches!(self.action, Action::Drop(_))
    }

    /// Dropped by the AQM rather than by the buffer cap.
    pub fn is_mark(&self) -> bool {
        matches!(
            self.action,
            Action::Drop(DropReason::Early) | Action::Drop(DropReason::Forced)
        )
    }
}

/// Snapshot of the gateway's queue bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GatewayState {
    pub q: usize,
    pub avg: f64,
    pub count: u64,
}

/// A RED-style gateway queue with a pluggable average.
pub struct Gateway {
    marking: MarkingParams,
    estimator: Box<dyn AverageEstimator>,
    pub(crate) q: usize,
    count: u64,
    max_queue: usize,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("marking", &self.marking)
            .field("state", &self.state())
            .field("max_queue", &self.max_queue)
            .finish()
    }
}

impl Gateway {
    /// `max_queue` is the largest queue length the buffer holds.
    pub fn new(
        marking: MarkingParams,
        estimator: Box<dyn AverageEstimator>,
        max_queue: usize,
    ) -> Result<Self> {
        marking.validate()?;
        Ok(Gateway {
            marking,
            estimator,
            q: 0,
            count: 0,
            max_queue,
        })
    }

    /// Classic RED with an `n_states`-slot buffer (queue lengths `0..n_states`).
    pub fn red(params: &RedParams, n_states: usize) -> Result<Self> {
        params.validate()?;
        if n_states < 2 {
            return Err(Error::config("n_states", "at least 2 states required"));
        }
        Self::new(
            params.marking(),
            Box::new(Ewma::new(params.w_q)?),
            n_states - 1,
        )
    }

    /// Master-equation RED. Takes no queue weight.
    pub fn mred(marking: MarkingParams, kernel: KernelSettings) -> Result<Self> {
        let estimator = MasterEquationAverage::new(kernel)?;
        Self::new(marking, Box::new(estimator), kernel.n_states - 1)
    }

    pub fn state(&self) -> GatewayState {
        GatewayState {
            q: self.q,
            avg: self.estimator.average(),
            count: self.count,
        }
    }

    pub fn probabilities(&self) -> Option<&ProbabilityVector> {
        self.estimator.probabilities()
    }

    pub fn queue_len(&self) -> usize {
        self.q
    }

    pub fn max_queue(&self) -> usize {
        self.max_queue
    }

    /// Handles one arriving packet. `u` is a uniform draw in `[0, 1)`.
    pub fn on_arrival(&mut self, u: f64) -> Result<Verdict> {
        let avg = self.estimator.on_arrival(self.q)?;
        let m = &self.marking;

        let (action, prob) = if avg < m.minth {
            self.count = 0;
            (Action::Enqueue, 0.0)
        } else if avg < m.maxth {
            let p = marking_probability(avg, m, self.count)?;
            if u < p {
                self.count = 0;
                (Action::Drop(DropReason::Early), p)
            } else {
                self.count += 1;
                (Action::Enqueue, p)
            }
        } else if avg >= m.maxth {
            self.count = 0;
            (Action::Drop(DropReason::Forced), 1.0)
        } else {
            return Err(Error::ContractViolation(format!(
                "average queue size {avg} is not comparable"
            )));
        };

        let action = match action {
            Action::Enqueue if self.q >= self.max_queue => Action::Drop(DropReason::Overflow),
            Action::Enqueue => {
                self.q += 1;
                Action::Enqueue
            }
            dropped => dropped,
        };
        Ok(Verdict {
            action,
            marking_prob_used: prob,
            avg_at_decision: avg,
        })
    }

    /// Removes up to `n` packets from the queue.
    pub fn service(&mut self, n: usize) {
        if n > self.q {
            self.estimator.on_idle((n - self.q) as u64);
        }
        self.q = self.q.saturating_sub(n);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Replays a fixed sequence of averages.
    struct Replay {
        seq: Vec<f64>,
        next: usize,
    }

    impl AverageEstimator for Replay {
        fn on_arrival(&mut self, _q: usize) -> Result<f64> {
            let avg = self.seq[self.next];
            self.next += 1;
            Ok(avg)
        }

        fn average(&self) -> f64 {
            self.seq[self.next.saturating_sub(1)]
        }
    }

    fn band() -> MarkingParams {
        RedParams::default().marking()
    }

    fn no_correction() -> MarkingParams {
        MarkingParams {
            use_count_correction: false,
            ..band()
        }
    }

    #[test]
    fn ewma_examples() {
        assert_eq!(ewma_update(0.0, 10, 1.0).unwrap(), 10.0);
        assert_eq!(ewma_update(7.0, 7, 0.002).unwrap(), 7.0);
        assert!((ewma_update(0.0, 10, 0.002).unwrap() - 0.02).abs() < 1e-15);
        assert!(ewma_update(0.0, 10, 0.0).is_err());
        assert!(ewma_update(0.0, 10, 1.5).is_err());
    }

    #[test]
    fn mred_average_examples() {
        let uniform = MasterEquation::new(KernelSettings::default()).unwrap();
        assert_eq!(mred_average(0, &uniform).unwrap(), 0.0);
        assert!((mred_average(10, &uniform).unwrap() - 0.02).abs() < 1e-15);
        assert!(mred_average(500, &uniform).is_err());

        let mut p = vec![0.0; 10];
        p[5] = 0.06;
        p[0] = 0.94;
        let kernel = MasterEquation::from_parts(
            ProbabilityVector::from_vec(p).unwrap(),
            KernelSettings::default(),
        )
        .unwrap();
        assert!((mred_average(5, &kernel).unwrap() - 0.3).abs() < 1e-15);
    }

    #[test]
    fn marking_probability_examples() {
        assert_eq!(marking_probability(5.0, &band(), 0).unwrap(), 0.0);
        assert!((marking_probability(10.0, &no_correction(), 0).unwrap() - 0.01).abs() < 1e-15);
        assert!((marking_probability(10.0, &band(), 50).unwrap() - 0.02).abs() < 1e-15);
        // count·pb >= 1 saturates
        assert_eq!(marking_probability(10.0, &band(), 100).unwrap(), 1.0);
        assert_eq!(marking_probability(10.0, &band(), 1000).unwrap(), 1.0);
    }

    #[test]
    fn marking_probability_outside_band_is_contract_violation() {
        for avg in [4.99, 15.0, 20.0, f64::NAN] {
            assert!(matches!(
                marking_probability(avg, &band(), 0),
                Err(Error::ContractViolation(_))
            ));
        }
    }

    #[test]
    fn params_validation() {
        let swapped = RedParams {
            minth: 15.0,
            maxth: 5.0,
            ..RedParams::default()
        };
        match swapped.validate() {
            Err(Error::InvalidConfig { field, .. }) => {
                assert!(field.contains("minth") && field.contains("maxth"))
            }
            other => panic!("unexpected {other:?}"),
        }
        let bad_p = RedParams {
            maxp: 0.0,
            ..RedParams::default()
        };
        assert!(bad_p.validate().is_err());
    }

    #[test]
    fn red_empty_queue_enqueues() {
        let mut gw = Gateway::red(&RedParams::default(), 500).unwrap();
        let v = gw.on_arrival(0.0).unwrap();
        assert_eq!(v.action, Action::Enqueue);
        assert_eq!(gw.queue_len(), 1);
        assert_eq!(gw.state().avg, 0.0);
    }

    #[test]
    fn red_idle_decay() {
        let mut est = Ewma::new(0.5).unwrap();
        assert_eq!(est.on_arrival(4).unwrap(), 2.0);
        // empty queue but no idle capacity recorded
        assert_eq!(est.on_arrival(0).unwrap(), 2.0);
        est.on_idle(2);
        est.on_idle(1);
        assert_eq!(est.on_arrival(0).unwrap(), 0.25);
        // consumed
        assert_eq!(est.on_arrival(0).unwrap(), 0.25);
    }

    #[test]
    fn red_recovers_after_forced_drops() {
        let params = RedParams {
            w_q: 0.5,
            ..RedParams::default()
        };
        let mut gw = Gateway::red(&params, 100).unwrap();
        for _ in 0..40 {
            gw.on_arrival(0.9).unwrap();
        }
        assert!(gw.state().avg >= 15.0);
        gw.service(100);
        let v = gw.on_arrival(0.9).unwrap();
        assert!(v.avg_at_decision < 5.0);
        assert_eq!(v.action, Action::Enqueue);
    }

    #[test]
    fn above_maxth_always_drops() {
        for u in [0.0, 0.5, 0.999999] {
            let replay = Replay {
                seq: vec![20.0],
                next: 0,
            };
            let mut gw = Gateway::new(band(), Box::new(replay), 499).unwrap();
            let v = gw.on_arrival(u).unwrap();
            assert_eq!(v.action, Action::Drop(DropReason::Forced));
            assert_eq!(v.marking_prob_used, 1.0);
            assert_eq!(gw.queue_len(), 0);
        }
    }

    #[test]
    fn mid_band_high_draw_enqueues() {
        let replay = Replay {
            seq: vec![10.0, 10.0],
            next: 0,
        };
        let mut gw = Gateway::new(no_correction(), Box::new(replay), 499).unwrap();
        let v = gw.on_arrival(0.999).unwrap();
        assert_eq!(v.action, Action::Enqueue);
        assert!((v.marking_prob_used - 0.01).abs() < 1e-15);
        assert_eq!(gw.state().count, 1);
        let v = gw.on_arrival(0.001).unwrap();
        assert_eq!(v.action, Action::Drop(DropReason::Early));
        assert_eq!(gw.state().count, 0);
    }

    #[test]
    fn full_buffer_tail_drops() {
        let replay = Replay {
            seq: vec![0.0; 3],
            next: 0,
        };
        let mut gw = Gateway::new(band(), Box::new(replay), 2).unwrap();
        assert_eq!(gw.on_arrival(0.5).unwrap().action, Action::Enqueue);
        assert_eq!(gw.on_arrival(0.5).unwrap().action, Action::Enqueue);
        let v = gw.on_arrival(0.5).unwrap();
        assert_eq!(v.action, Action::Drop(DropReason::Overflow));
        assert!(!v.is_mark());
        assert_eq!(gw.queue_len(), 2);
        gw.service(5);
        assert_eq!(gw.queue_len(), 0);
    }

    #[test]
    fn mred_first_arrival() {
        let mut gw = Gateway::mred(band(), KernelSettings::default()).unwrap();
        let v = gw.on_arrival(0.3).unwrap();
        assert_eq!(v.action, Action::Enqueue);
        assert_eq!(v.avg_at_decision, 0.0);
    }

    fn mred_with_spike(q: usize, mass: f64, minth: f64) -> (Gateway, usize) {
        let mut p = vec![0.0; 50];
        p[q] = mass;
        p[0] += 1.0 - mass;
        let kernel = MasterEquation::from_parts(
            ProbabilityVector::from_vec(p).unwrap(),
            KernelSettings::default(),
        )
        .unwrap();
        let marking = MarkingParams { minth, ..band() };
        let est = MasterEquationAverage::with_kernel(kernel);
        let mut gw = Gateway::new(marking, Box::new(est), 49).unwrap();
        for _ in 0..q {
            gw.q += 1;
        }
        (gw, q)
    }

    #[test]
    fn mred_small_average_enqueues() {
        let (mut gw, _) = mred_with_spike(5, 0.06, 5.0);
        let v = gw.on_arrival(0.0).unwrap();
        // One Euler step moves P(5) by O(dt·e^-4) relative.
        assert!((v.avg_at_decision - 0.3).abs() < 1e-3);
        assert_eq!(v.action, Action::Enqueue);
    }

    #[test]
    fn mred_enters_marking_band() {
        let (mut gw, _) = mred_with_spike(5, 1.0, 4.0);
        let v = gw.on_arrival(0.999).unwrap();
        assert!(v.avg_at_decision >= 4.0 && v.avg_at_decision <= 5.0);
        assert!(v.marking_prob_used > 0.0);
        let (mut gw, _) = mred_with_spike(5, 1.0, 4.0);
        assert_eq!(
            gw.on_arrival(0.0).unwrap().action,
            Action::Drop(DropReason::Early)
        );
    }

    /// Record the averages an estimator produced, then replay them through
    /// the skeleton: verdicts must agree.
    fn replay_matches(mut live: Gateway, draws: &[f64], service_every: usize) {
        let mut avgs = Vec::new();
        let mut live_verdicts = Vec::new();
        for (i, &u) in draws.iter().enumerate() {
            let v = live.on_arrival(u).unwrap();
            avgs.push(v.avg_at_decision);
            live_verdicts.push(v);
            if i % service_every == 0 {
                live.service(3);
            }
        }
        let replay = Replay { seq: avgs, next: 0 };
        let mut fixed = Gateway::new(live.marking, Box::new(replay), live.max_queue).unwrap();
        for (i, &u) in draws.iter().enumerate() {
            assert_eq!(fixed.on_arrival(u).unwrap(), live_verdicts[i]);
            if i % service_every == 0 {
                fixed.service(3);
            }
        }
    }

    #[test]
    fn skeleton_is_shared() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let draws: Vec<f64> = (0..4000).map(|_| rng.gen()).collect();
        let params = RedParams {
            w_q: 0.05,
            ..RedParams::default()
        };
        replay_matches(Gateway::red(&params, 200).unwrap(), &draws, 4);
        let marking = MarkingParams {
            minth: 0.1,
            maxth: 0.6,
            ..band()
        };
        let kernel = KernelSettings {
            n_states: 60,
            ..KernelSettings::default()
        };
        replay_matches(Gateway::mred(marking, kernel).unwrap(), &draws, 4);
    }

    proptest! {
        #[test]
        fn ewma_contracts_toward_q(avg in 0.0f64..100.0, q in 0usize..100, w in 0.001f64..=1.0) {
            let next = ewma_update(avg, q, w).unwrap();
            let qf = q as f64;
            prop_assert!(((next - qf).abs() - (1.0 - w) * (avg - qf).abs()).abs() <= 1e-12);
            prop_assert!(next >= avg.min(qf) - 1e-12 && next <= avg.max(qf) + 1e-12);
        }

        #[test]
        fn marking_monotone_in_avg(a in 5.0f64..15.0, b in 5.0f64..15.0, count in 0u64..200, corr: bool) {
            let m = MarkingParams { use_count_correction: corr, ..band() };
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let plo = marking_probability(lo, &m, count).unwrap();
            let phi = marking_probability(hi, &m, count).unwrap();
            prop_assert!(plo <= phi);
            prop_assert!((0.0..=1.0).contains(&plo) && (0.0..=1.0).contains(&phi));
        }

        #[test]
        fn exactly_one_branch(avg in -1.0f64..40.0, u in 0.0f64..1.0) {
            let replay = Replay { seq: vec![avg], next: 0 };
            let mut gw = Gateway::new(band(), Box::new(replay), 100).unwrap();
            let v = gw.on_arrival(u).unwrap();
            if avg < 5.0 {
                prop_assert_eq!(v.action, Action::Enqueue);
                prop_assert_eq!(v.marking_prob_used, 0.0);
            } else if avg < 15.0 {
                prop_assert!(v.marking_prob_used <= 1.0);
            } else {
                prop_assert_eq!(v.action, Action::Drop(DropReason::Forced));
            }
        }

        #[test]
        fn mred_average_bounded_by_queue(seed in any::<u64>(), arrivals in 1usize..300) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let marking = MarkingParams { minth: 0.05, maxth: 0.5, ..band() };
            let kernel = KernelSettings { n_states: 40, ..KernelSettings::default() };
            let mut gw = Gateway::mred(marking, kernel).unwrap();
            for _ in 0..arrivals {
                let q = gw.queue_len();
                let v = gw.on_arrival(rng.gen()).unwrap();
                prop_assert!(v.avg_at_decision >= 0.0 && v.avg_at_decision <= q as f64);
                if rng.gen::<f64>() < 0.3 {
                    gw.service(2);
                }
            }
        }
    }
}
