//! Random Early Detection with the count-based drop probability correction.

use crate::engine::{RngStream, Time};
use crate::Error;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RedParams {
    /// EWMA weight `w` in (0, 1).
    pub weight: f64,
    pub max_p: f64,
    /// Thresholds as fractions of the queue's buffer share.
    pub min_frac: f64,
    pub max_frac: f64,
    /// Packet size used to convert idle time into "missed" averaging slots.
    pub typical_packet_bytes: u32,
}

impl Default for RedParams {
    fn default() -> Self {
        Self {
            weight: 0.002,
            max_p: 0.1,
            min_frac: 0.25,
            max_frac: 0.75,
            typical_packet_bytes: 500,
        }
    }
}

impl RedParams {
    pub fn validate(&self) -> Result<(), Error> {
        let bad = |what, value| Err(Error::InvalidParameter { what, value });
        if !(self.weight > 0.0 && self.weight < 1.0) {
            return bad("RED weight", self.weight);
        }
        if !(self.max_p > 0.0 && self.max_p <= 1.0) {
            return bad("RED max_p", self.max_p);
        }
        if !(self.min_frac > 0.0 && self.min_frac < self.max_frac && self.max_frac <= 1.0) {
            return bad("RED threshold fractions", self.min_frac);
        }
        if self.typical_packet_bytes == 0 {
            return bad("RED typical packet size", 0.0);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RedVerdict {
    Accept,
    EarlyDrop,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RedState {
    pub avg_queue: f64,
    pub weight_w: f64,
    pub min_th: f64,
    pub max_th: f64,
    pub max_p: f64,
    /// Packets accepted since the last drop.
    pub count: u32,
    pub idle_since: Option<Time>,
}

impl RedState {
    pub fn new(weight_w: f64, min_th: f64, max_th: f64, max_p: f64) -> Result<Self, Error> {
        if !(weight_w > 0.0 && weight_w < 1.0) {
            return Err(Error::InvalidParameter {
                what: "RED weight",
                value: weight_w,
            });
        }
        if !(min_th > 0.0 && min_th < max_th) {
            return Err(Error::InvalidParameter {
                what: "RED thresholds",
                value: min_th,
            });
        }
        if !(max_p > 0.0 && max_p <= 1.0) {
            return Err(Error::InvalidParameter {
                what: "RED max_p",
                value: max_p,
            });
        }
        Ok(Self {
            avg_queue: 0.0,
            weight_w,
            min_th,
            max_th,
            max_p,
            count: 0,
            idle_since: Some(0.0),
        })
    }

    /// Thresholds at `min_frac`/`max_frac` of `share` bytes.
    pub fn for_share(params: &RedParams, share: f64) -> Result<Self, Error> {
        Self::new(
            params.weight,
            params.min_frac * share,
            params.max_frac * share,
            params.max_p,
        )
    }

    /// Updates the average on a packet arrival that found `queue_bytes` queued.
    ///
    /// After an idle period the average decays as if `m` empty-queue arrivals
    /// had happened, `m = idle / slot`, where `slot` is the transmission time
    /// of a typical packet.
    pub fn update_avg(&mut self, queue_bytes: f64, now: Time, slot: Time) -> f64 {
        let w = self.weight_w;
        match self.idle_since.take() {
            Some(since) if queue_bytes == 0.0 => {
                let m = if slot > 0.0 { (now - since).max(0.0) / slot } else { 0.0 };
                self.avg_queue *= libm::pow(1.0 - w, m);
            }
            _ => {
                self.avg_queue = (1.0 - w) * self.avg_queue + w * queue_bytes;
            }
        }
        self.avg_queue
    }

    pub fn mark_idle(&mut self, now: Time) {
        self.idle_since = Some(now);
    }

    /// Base drop probability `p_b` for the current average.
    pub fn base_probability(&self) -> f64 {
        let avg = self.avg_queue;
        if avg < self.min_th {
            0.0
        } else if avg >= self.max_th {
            1.0
        } else {
            self.max_p * (avg - self.min_th) / (self.max_th - self.min_th)
        }
    }

    /// Drop probability `p_a` after the count correction.
    pub fn drop_probability(&self) -> f64 {
        let pb = self.base_probability();
        if pb <= 0.0 || pb >= 1.0 {
            return pb;
        }
        let denom = 1.0 - f64::from(self.count) * pb;
        if denom <= pb {
            1.0
        } else {
            pb / denom
        }
    }

    pub fn drop_decision(&mut self, rng: &mut RngStream) -> RedVerdict {
        if self.avg_queue < self.min_th {
            self.count = 0;
            return RedVerdict::Accept;
        }
        if self.avg_queue >= self.max_th {
            self.count = 0;
            return RedVerdict::EarlyDrop;
        }
        let pa = self.drop_probability();
        if rng.uniform() < pa {
            self.count = 0;
            RedVerdict::EarlyDrop
        } else {
            self.count += 1;
            RedVerdict::Accept
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state() -> RedState {
        RedState::new(0.002, 2560.0, 7680.0, 0.1).unwrap()
    }

    #[test]
    fn ewma_substitution() {
        let mut r = state();
        r.idle_since = None;
        assert!((r.update_avg(1000.0, 0.0, 1e-3) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn ewma_fixed_point() {
        let mut r = state();
        r.idle_since = None;
        r.avg_queue = 1234.5;
        assert!((r.update_avg(1234.5, 0.0, 1e-3) - 1234.5).abs() < 1e-9);
    }

    #[test]
    fn idle_decay() {
        let mut r = state();
        r.avg_queue = 5000.0;
        r.mark_idle(1.0);
        // ten transmission slots of 1 ms
        let avg = r.update_avg(0.0, 1.010, 1e-3);
        let expected = 5000.0 * 0.998f64.powi(10);
        assert!((avg - expected).abs() < 1e-6);
        assert!((avg - 4901.0).abs() < 1.0);
    }

    #[test]
    fn below_min_always_accepts() {
        let mut r = state();
        r.avg_queue = 2559.0;
        r.count = 17;
        let mut rng = RngStream::new("red", 1);
        for _ in 0..1000 {
            assert_eq!(r.drop_decision(&mut rng), RedVerdict::Accept);
        }
        assert_eq!(r.count, 0);
    }

    #[test]
    fn at_max_forces_drop() {
        let mut r = state();
        r.avg_queue = 7680.0;
        let mut rng = RngStream::new("red", 1);
        assert_eq!(r.drop_decision(&mut rng), RedVerdict::EarlyDrop);
    }

    #[test]
    fn midpoint_probability() {
        let mut r = state();
        r.avg_queue = (2560.0 + 7680.0) / 2.0;
        r.count = 0;
        assert!((r.base_probability() - 0.05).abs() < 1e-15);
        assert!((r.drop_probability() - 0.05).abs() < 1e-15);
        // count correction: p_a = p_b / (1 - count * p_b)
        r.count = 10;
        assert!((r.drop_probability() - 0.05 / 0.5).abs() < 1e-15);
        r.count = 20;
        assert_eq!(r.drop_probability(), 1.0);
    }

    #[test]
    fn midpoint_empirical_rate() {
        let mut r = state();
        r.avg_queue = (2560.0 + 7680.0) / 2.0;
        let mut rng = RngStream::new("red", 3);
        let n = 200_000;
        let drops = (0..n)
            .filter(|_| r.drop_decision(&mut rng) == RedVerdict::EarlyDrop)
            .count();
        // the count correction makes inter-drop gaps uniform on 1..=1/p_b,
        // so the long-run drop rate is 2 / (1/p_b + 1) = 2/21
        let rate = drops as f64 / n as f64;
        assert!((rate - 2.0 / 21.0).abs() < 0.003, "rate {rate}");
    }

    #[test]
    fn bad_parameters_rejected() {
        assert!(RedState::new(0.0, 1.0, 2.0, 0.1).is_err());
        assert!(RedState::new(0.002, 2.0, 2.0, 0.1).is_err());
        assert!(RedState::new(0.002, 1.0, 2.0, 1.5).is_err());
        let p = RedParams {
            min_frac: 0.9,
            ..RedParams::default()
        };
        assert!(p.validate().is_err());
    }

    proptest::proptest! {
        #[test]
        fn base_probability_is_monotone(a in 0.0f64..20_000.0, b in 0.0f64..20_000.0) {
            let mut lo = state();
            let mut hi = state();
            lo.avg_queue = a.min(b);
            hi.avg_queue = a.max(b);
            proptest::prop_assert!(lo.base_probability() <= hi.base_probability());
        }
    }
}
