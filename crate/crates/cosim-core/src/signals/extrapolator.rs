//! Real-time slope/error extrapolator.
//!
//! Between coarse arrivals the output advances each fine step by
//!
//! ```text
//! y[t] = y[t-1] + dy_s + dy_e
//! dy_s = (a[T] - a[T-n]) / N        average variation of received data
//! dy_e = k1 * (a[T] - y[t-1])       error pull toward the latest actual
//! ```
//!
//! where `a[T]` is the most recent actual sample, `a[T-n]` the n-th
//! previous one, and `N` the number of fine steps spanned by those n
//! arrival intervals. `N` is recomputed from observed arrival spacing on
//! every arrival (arrival cadence over jittery transports is irregular)
//! and clamped to at least 1.

use std::collections::VecDeque;
use std::time::Duration;

use crate::signals::SignalError;
use crate::time::SimTime;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtrapolatorConfig {
    /// How many arrival intervals the slope estimate spans. Default 1.
    pub n: usize,
    /// Error-feedback gain. Default 0.001.
    pub k1: f64,
    /// Fine-grid step, used to convert arrival spacing into step counts.
    pub ts_emt: Duration,
    /// Optional symmetric bound on `dy_s` per step. `Some(0.0)` disables
    /// slope following entirely.
    pub slope_clamp: Option<f64>,
}

impl Default for ExtrapolatorConfig {
    fn default() -> Self {
        ExtrapolatorConfig {
            n: 1,
            k1: 0.001,
            ts_emt: Duration::from_micros(100),
            slope_clamp: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Extrapolator {
    cfg: ExtrapolatorConfig,
    /// Previous extrapolated output.
    y_e_prev: f64,
    /// Recent actual arrivals, oldest first, at most n+1 entries.
    history: VecDeque<(SimTime, f64)>,
    /// Fine steps spanned by the last n arrival intervals, >= 1.
    n_steps: u64,
    arrivals_seen: u64,
    stale_dropped: u64,
}

impl Extrapolator {
    pub fn new(cfg: ExtrapolatorConfig) -> Result<Self, SignalError> {
        if cfg.n == 0 {
            return Err(SignalError::InvalidParameter("n must be >= 1".into()));
        }
        if !(cfg.k1.is_finite() && cfg.k1 >= 0.0) {
            return Err(SignalError::InvalidParameter(format!(
                "k1 must be finite and >= 0, got {}",
                cfg.k1
            )));
        }
        if cfg.ts_emt.is_zero() {
            return Err(SignalError::InvalidParameter(
                "ts_emt must be positive".into(),
            ));
        }
        if let Some(c) = cfg.slope_clamp {
            if !(c.is_finite() && c >= 0.0) {
                return Err(SignalError::InvalidParameter(format!(
                    "slope clamp must be finite and >= 0, got {c}"
                )));
            }
        }
        Ok(Extrapolator {
            history: VecDeque::with_capacity(cfg.n + 1),
            cfg,
            y_e_prev: 0.0,
            n_steps: 1,
            arrivals_seen: 0,
            stale_dropped: 0,
        })
    }

    /// Accept an actual sample. Arrivals must be strictly newer than the
    /// last accepted one; anything else is dropped and counted as stale.
    pub fn on_arrival(&mut self, at: SimTime, value: f64) -> Result<(), SignalError> {
        if !value.is_finite() {
            return Err(SignalError::NonFinite);
        }
        if let Some(&(latest, _)) = self.history.back() {
            if at <= latest {
                self.stale_dropped += 1;
                return Err(SignalError::StaleArrival { at, latest });
            }
        }
        self.history.push_back((at, value));
        while self.history.len() > self.cfg.n + 1 {
            self.history.pop_front();
        }
        self.arrivals_seen += 1;
        if self.arrivals_seen == 1 {
            self.y_e_prev = value;
        }
        if self.history.len() == self.cfg.n + 1 {
            let (t_old, _) = self.history[0];
            let (t_new, _) = *self.history.back().unwrap();
            let span_us = t_new.as_micros() - t_old.as_micros();
            let steps = (span_us as f64 / self.cfg.ts_emt.as_micros() as f64).round() as u64;
            self.n_steps = steps.max(1);
        }
        Ok(())
    }

    /// Produce the next fine-grid output.
    ///
    /// Until n+1 arrivals are in (no slope can be formed yet), and in the
    /// degenerate configuration where both increments are disabled
    /// (`k1 == 0` and slope clamp 0, leaving the recursion nothing to move
    /// the output with), this holds the latest actual sample.
    pub fn step(&mut self) -> Result<f64, SignalError> {
        let &(_, latest) = self.history.back().ok_or(SignalError::Uninitialized)?;
        if self.arrivals_seen <= self.cfg.n as u64 || !self.extrapolation_active() {
            self.y_e_prev = latest;
            return Ok(latest);
        }
        let (_, oldest) = self.history[0];
        let mut dy_s = (latest - oldest) / self.n_steps as f64;
        if let Some(c) = self.cfg.slope_clamp {
            dy_s = dy_s.clamp(-c, c);
        }
        let dy_e = self.cfg.k1 * (latest - self.y_e_prev);
        let y = self.y_e_prev + dy_s + dy_e;
        self.y_e_prev = y;
        Ok(y)
    }

    fn extrapolation_active(&self) -> bool {
        self.cfg.k1 != 0.0 || self.cfg.slope_clamp != Some(0.0)
    }

    /// Warm-start the recursion from a known previous output.
    pub fn set_previous_output(&mut self, y: f64) {
        self.y_e_prev = y;
    }

    pub fn previous_output(&self) -> f64 {
        self.y_e_prev
    }

    /// Current N: fine steps spanned by the last n arrival intervals.
    pub fn current_steps(&self) -> u64 {
        self.n_steps
    }

    pub fn arrivals_seen(&self) -> u64 {
        self.arrivals_seen
    }

    pub fn stale_dropped(&self) -> u64 {
        self.stale_dropped
    }
}
