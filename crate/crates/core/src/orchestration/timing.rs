//! Wall-clock attribution of a run into init, train, exchange and aggregate.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Init,
    Train,
    Exchange,
    Aggregate,
}

/// Per-phase seconds plus an independently measured total.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TimingBreakdown {
    pub t_init: f64,
    pub t_train: f64,
    pub t_exchange: f64,
    pub t_aggregate: f64,
    pub t_total: f64,
}

impl TimingBreakdown {
    pub fn component_sum(&self) -> f64 {
        self.t_init + self.t_train + self.t_exchange + self.t_aggregate
    }

    /// `t_total` equals the component sum within `max(1%, 10 ms)`.
    pub fn is_additive(&self) -> bool {
        let slack = (0.01 * self.t_total.abs()).max(0.010);
        (self.t_total - self.component_sum()).abs() <= slack
    }

    pub fn get(&self, phase: Phase) -> f64 {
        match phase {
            Phase::Init => self.t_init,
            Phase::Train => self.t_train,
            Phase::Exchange => self.t_exchange,
            Phase::Aggregate => self.t_aggregate,
        }
    }

    fn slot(&mut self, phase: Phase) -> &mut f64 {
        match phase {
            Phase::Init => &mut self.t_init,
            Phase::Train => &mut self.t_train,
            Phase::Exchange => &mut self.t_exchange,
            Phase::Aggregate => &mut self.t_aggregate,
        }
    }

    /// Component-wise mean; `None` for an empty slice.
    pub fn mean(items: &[TimingBreakdown]) -> Option<TimingBreakdown> {
        if items.is_empty() {
            return None;
        }
        let n = items.len() as f64;
        let mut out = TimingBreakdown::default();
        for t in items {
            out.t_init += t.t_init / n;
            out.t_train += t.t_train / n;
            out.t_exchange += t.t_exchange / n;
            out.t_aggregate += t.t_aggregate / n;
            out.t_total += t.t_total / n;
        }
        Some(out)
    }

    pub fn difference(&self, earlier: &TimingBreakdown) -> TimingBreakdown {
        TimingBreakdown {
            t_init: self.t_init - earlier.t_init,
            t_train: self.t_train - earlier.t_train,
            t_exchange: self.t_exchange - earlier.t_exchange,
            t_aggregate: self.t_aggregate - earlier.t_aggregate,
            t_total: self.t_total - earlier.t_total,
        }
    }
}

/// Charges every elapsed instant to exactly one phase.
///
/// Each [`PhaseClock::charge`] bills the time since the previous mark, so the
/// phases tile the run without gaps and their sum tracks the total.
#[derive(Debug, Clone)]
pub struct PhaseClock {
    start: Instant,
    mark: Instant,
    totals: TimingBreakdown,
}

impl Default for PhaseClock {
    fn default() -> Self {
        PhaseClock::start()
    }
}

impl PhaseClock {
    pub fn start() -> Self {
        let now = Instant::now();
        PhaseClock { start: now, mark: now, totals: TimingBreakdown::default() }
    }

    /// Time since the previous mark, without charging or moving the mark.
    pub fn pending(&self) -> Duration {
        self.mark.elapsed()
    }

    /// Bills the time since the previous mark to `phase`.
    pub fn charge(&mut self, phase: Phase) -> f64 {
        let now = Instant::now();
        let secs = now.duration_since(self.mark).as_secs_f64();
        self.mark = now;
        *self.totals.slot(phase) += secs;
        secs
    }

    /// Bills the time since the previous mark to `primary`, capped at
    /// `primary_secs`, and the remainder to `rest`.
    pub fn charge_split(&mut self, primary: Phase, primary_secs: f64, rest: Phase) -> f64 {
        let now = Instant::now();
        let secs = now.duration_since(self.mark).as_secs_f64();
        self.mark = now;
        let first = primary_secs.clamp(0.0, secs);
        *self.totals.slot(primary) += first;
        *self.totals.slot(rest) += secs - first;
        secs
    }

    /// Snapshot with `t_total` measured from the start, independently of the
    /// charged phases. Time since the last mark is not yet included anywhere.
    pub fn snapshot(&self) -> TimingBreakdown {
        TimingBreakdown { t_total: self.mark.duration_since(self.start).as_secs_f64(), ..self.totals }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phases_tile_the_total() {
        let mut clock = PhaseClock::start();
        std::thread::sleep(Duration::from_millis(5));
        clock.charge(Phase::Init);
        std::thread::sleep(Duration::from_millis(10));
        clock.charge_split(Phase::Train, 0.004, Phase::Exchange);
        clock.charge(Phase::Aggregate);
        let t = clock.snapshot();
        assert!(t.t_init >= 0.005);
        assert!((t.t_train - 0.004).abs() < 1e-12);
        assert!(t.t_exchange >= 0.005);
        assert!((t.t_total - t.component_sum()).abs() < 1e-9);
        assert!(t.is_additive());
    }

    #[test]
    fn split_caps_primary_at_elapsed() {
        let mut clock = PhaseClock::start();
        clock.charge_split(Phase::Train, 1e6, Phase::Exchange);
        let t = clock.snapshot();
        assert_eq!(t.t_exchange, 0.0);
        assert!(t.t_train < 1.0);
    }

    #[test]
    fn additivity_slack() {
        let ok = TimingBreakdown { t_init: 1.0, t_train: 2.0, t_exchange: 3.0, t_aggregate: 4.0, t_total: 10.09 };
        assert!(ok.is_additive());
        let bad = TimingBreakdown { t_total: 10.2, ..ok };
        assert!(!bad.is_additive());
        let small = TimingBreakdown { t_init: 0.001, t_total: 0.011, ..Default::default() };
        assert!(small.is_additive());
    }

    #[test]
    fn mean_of_breakdowns() {
        let a = TimingBreakdown { t_init: 1.0, t_train: 2.0, t_exchange: 0.0, t_aggregate: 0.0, t_total: 3.0 };
        let b = TimingBreakdown { t_init: 3.0, t_train: 0.0, t_exchange: 2.0, t_aggregate: 0.0, t_total: 5.0 };
        let m = TimingBreakdown::mean(&[a, b]).unwrap();
        assert_eq!((m.t_init, m.t_train, m.t_exchange, m.t_total), (2.0, 1.0, 1.0, 4.0));
        assert!(TimingBreakdown::mean(&[]).is_none());
    }
}
