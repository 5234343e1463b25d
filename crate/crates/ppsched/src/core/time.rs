//! Fixed-point time. All schedule arithmetic runs on integer microseconds so
//! simulated costs, bubbles, and solver objectives are exact and reproducible;
//! floating point only appears at the reporting boundary (rates, milliseconds).

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

use serde::{Deserialize, Serialize};

/// A signed duration or instant in whole microseconds.
///
/// Signed so that formula-style quantities (e.g. a bubble term `T_F + T_B - 2 T_W`)
/// can be represented without panicking; schedule instants themselves are
/// always non-negative.
#[derive(Copy, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TimeUs(pub i64);

impl TimeUs {
    pub const ZERO: TimeUs = TimeUs(0);

    /// Converts a duration in milliseconds, rounding to the nearest microsecond.
    ///
    /// Measured pass times are reported in milliseconds with at most three
    /// decimals, so this conversion is exact for them.
    pub fn from_ms(ms: f64) -> TimeUs {
        TimeUs((ms * 1_000.0).round() as i64)
    }

    pub fn from_us(us: i64) -> TimeUs {
        TimeUs(us)
    }

    pub fn as_us(self) -> i64 {
        self.0
    }

    pub fn as_ms(self) -> f64 {
        self.0 as f64 / 1_000.0
    }

    pub fn is_negative(self) -> bool {
        self.0 < 0
    }

    /// Saturating max with zero; used when a formula term can go negative.
    pub fn clamp_non_negative(self) -> TimeUs {
        TimeUs(self.0.max(0))
    }
}

impl Add for TimeUs {
    type Output = TimeUs;
    fn add(self, rhs: TimeUs) -> TimeUs {
        TimeUs(self.0 + rhs.0)
    }
}

impl AddAssign for TimeUs {
    fn add_assign(&mut self, rhs: TimeUs) {
        self.0 += rhs.0;
    }
}

impl Sub for TimeUs {
    type Output = TimeUs;
    fn sub(self, rhs: TimeUs) -> TimeUs {
        TimeUs(self.0 - rhs.0)
    }
}

impl SubAssign for TimeUs {
    fn sub_assign(&mut self, rhs: TimeUs) {
        self.0 -= rhs.0;
    }
}

impl Neg for TimeUs {
    type Output = TimeUs;
    fn neg(self) -> TimeUs {
        TimeUs(-self.0)
    }
}

impl Mul<i64> for TimeUs {
    type Output = TimeUs;
    fn mul(self, rhs: i64) -> TimeUs {
        TimeUs(self.0 * rhs)
    }
}

impl Sum for TimeUs {
    fn sum<I: Iterator<Item = TimeUs>>(iter: I) -> TimeUs {
        TimeUs(iter.map(|t| t.0).sum())
    }
}

impl fmt::Debug for TimeUs {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}us", self.0)
    }
}

impl fmt::Display for TimeUs {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ms_round_trip_is_exact_for_three_decimals() {
        let t = TimeUs::from_ms(18.522);
        assert_eq!(t.as_us(), 18_522);
        assert_eq!(t.as_ms(), 18.522);
    }

    #[test]
    fn arithmetic_behaves_like_integers() {
        let a = TimeUs(5);
        let b = TimeUs(3);
        assert_eq!((a + b).as_us(), 8);
        assert_eq!((a - b).as_us(), 2);
        assert_eq!((b - a).as_us(), -2);
        assert_eq!((a * 4).as_us(), 20);
        assert_eq!((b - a).clamp_non_negative(), TimeUs::ZERO);
        let total: TimeUs = [a, b, TimeUs(1)].into_iter().sum();
        assert_eq!(total.as_us(), 9);
    }
}
