//! Injected-latency models for emulated transports.

use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::transport::TransportError;

/// Delay distribution for one transport direction. Parameters are in
/// seconds to keep scenario configs readable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LatencyModel {
    Fixed { delay_s: f64 },
    Uniform { lo_s: f64, hi_s: f64 },
    Triangular { lo_s: f64, mode_s: f64, hi_s: f64 },
}

impl LatencyModel {
    pub fn fixed(delay: Duration) -> Self {
        LatencyModel::Fixed {
            delay_s: delay.as_secs_f64(),
        }
    }

    pub fn validate(&self) -> Result<(), TransportError> {
        let bad = |msg: String| Err(TransportError::InvalidLatencyModel(msg));
        match *self {
            LatencyModel::Fixed { delay_s } => {
                if !(delay_s.is_finite() && delay_s >= 0.0) {
                    return bad(format!("fixed delay {delay_s} must be >= 0"));
                }
            }
            LatencyModel::Uniform { lo_s, hi_s } => {
                if !(lo_s.is_finite() && hi_s.is_finite() && 0.0 <= lo_s && lo_s <= hi_s) {
                    return bad(format!("uniform bounds [{lo_s}, {hi_s}] invalid"));
                }
            }
            LatencyModel::Triangular { lo_s, mode_s, hi_s } => {
                if !(lo_s.is_finite()
                    && mode_s.is_finite()
                    && hi_s.is_finite()
                    && 0.0 <= lo_s
                    && lo_s <= mode_s
                    && mode_s <= hi_s)
                {
                    return bad(format!("triangular ({lo_s}, {mode_s}, {hi_s}) invalid"));
                }
            }
        }
        Ok(())
    }

    /// Draw one delay. All draws are non-negative and within the model's
    /// support.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Duration {
        let secs = match *self {
            LatencyModel::Fixed { delay_s } => delay_s,
            LatencyModel::Uniform { lo_s, hi_s } => {
                let u: f64 = rng.gen();
                lo_s + u * (hi_s - lo_s)
            }
            LatencyModel::Triangular { lo_s, mode_s, hi_s } => {
                // Inverse-CDF sampling.
                let u: f64 = rng.gen();
                let span = hi_s - lo_s;
                if span <= 0.0 {
                    lo_s
                } else {
                    let fc = (mode_s - lo_s) / span;
                    if u < fc {
                        lo_s + (u * span * (mode_s - lo_s)).sqrt()
                    } else {
                        hi_s - ((1.0 - u) * span * (hi_s - mode_s)).sqrt()
                    }
                }
            }
        };
        Duration::from_secs_f64(secs.max(0.0))
    }

    /// Analytic mean of the distribution.
    pub fn mean(&self) -> Duration {
        let secs = match *self {
            LatencyModel::Fixed { delay_s } => delay_s,
            LatencyModel::Uniform { lo_s, hi_s } => 0.5 * (lo_s + hi_s),
            LatencyModel::Triangular { lo_s, mode_s, hi_s } => (lo_s + mode_s + hi_s) / 3.0,
        };
        Duration::from_secs_f64(secs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn fixed_draw_is_exact() {
        let m = LatencyModel::fixed(Duration::from_millis(20));
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        for _ in 0..100 {
            assert_eq!(m.draw(&mut rng), Duration::from_millis(20));
        }
    }

    #[test]
    fn uniform_draws_stay_in_bounds() {
        let m = LatencyModel::Uniform {
            lo_s: 0.017,
            hi_s: 0.035,
        };
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        for _ in 0..10_000 {
            let d = m.draw(&mut rng).as_secs_f64();
            assert!((0.017..=0.035).contains(&d));
        }
    }

    #[test]
    fn triangular_draws_stay_in_bounds_and_match_mean() {
        let m = LatencyModel::Triangular {
            lo_s: 1.0,
            mode_s: 2.5,
            hi_s: 8.5,
        };
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let n = 20_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let d = m.draw(&mut rng).as_secs_f64();
            assert!((1.0..=8.5).contains(&d));
            sum += d;
        }
        let mean = sum / n as f64;
        let analytic = m.mean().as_secs_f64();
        assert!((mean - analytic).abs() / analytic < 0.02, "mean={mean}");
    }

    #[test]
    fn seeded_draws_are_reproducible() {
        let m = LatencyModel::Uniform {
            lo_s: 0.017,
            hi_s: 0.035,
        };
        let a: Vec<Duration> = {
            let mut rng = ChaCha12Rng::seed_from_u64(42);
            (0..100).map(|_| m.draw(&mut rng)).collect()
        };
        let b: Vec<Duration> = {
            let mut rng = ChaCha12Rng::seed_from_u64(42);
            (0..100).map(|_| m.draw(&mut rng)).collect()
        };
        assert_eq!(a, b);
    }

    #[test]
    fn validation_rejects_bad_parameters() {
        assert!(LatencyModel::Fixed { delay_s: -1.0 }.validate().is_err());
        assert!(LatencyModel::Uniform {
            lo_s: 2.0,
            hi_s: 1.0
        }
        .validate()
        .is_err());
        assert!(LatencyModel::Triangular {
            lo_s: 1.0,
            mode_s: 9.0,
            hi_s: 8.5
        }
        .validate()
        .is_err());
        assert!(LatencyModel::Triangular {
            lo_s: 1.0,
            mode_s: 2.5,
            hi_s: 8.5
        }
        .validate()
        .is_ok());
    }
}
