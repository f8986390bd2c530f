//! Integer clock values with infinite sentinels.

use std::fmt;
use std::ops::Add;

use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};

/// A local clock value or duration bound, in ticks.
///
/// `INFINITY` and `NEG_INFINITY` absorb finite offsets.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Time(i64);

impl Time {
    pub const INFINITY: Time = Time(i64::MAX);
    pub const NEG_INFINITY: Time = Time(i64::MIN);
    pub const ZERO: Time = Time(0);

    /// A finite value. Panics on the sentinel encodings.
    pub fn new(ticks: i64) -> Time {
        assert!(
            ticks != i64::MAX && ticks != i64::MIN,
            "finite time out of range"
        );
        Time(ticks)
    }

    pub fn is_finite(self) -> bool {
        self != Time::INFINITY && self != Time::NEG_INFINITY
    }

    /// The finite tick count, if any.
    pub fn ticks(self) -> Option<i64> {
        self.is_finite().then_some(self.0)
    }

    /// Tick count of a value known to be finite.
    pub fn finite(self) -> i64 {
        self.ticks().expect("finite time expected")
    }

    /// Adds a finite offset; sentinels are preserved and finite values saturate
    /// short of the sentinels.
    pub fn plus(self, d: i64) -> Time {
        if !self.is_finite() {
            return self;
        }
        Time(self.0.saturating_add(d).clamp(i64::MIN + 1, i64::MAX - 1))
    }
}

impl Add<i64> for Time {
    type Output = Time;
    fn add(self, d: i64) -> Time {
        self.plus(d)
    }
}

impl From<i64> for Time {
    fn from(v: i64) -> Time {
        Time::new(v)
    }
}

impl fmt::Debug for Time {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl fmt::Display for Time {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Time::INFINITY => write!(f, "inf"),
            Time::NEG_INFINITY => write!(f, "-inf"),
            Time(v) => write!(f, "{v}"),
        }
    }
}

impl Serialize for Time {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match *self {
            Time::INFINITY => s.serialize_str("inf"),
            Time::NEG_INFINITY => s.serialize_str("-inf"),
            Time(v) => s.serialize_i64(v),
        }
    }
}

impl<'de> Deserialize<'de> for Time {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Time, D::Error> {
        struct TimeVisitor;
        impl Visitor<'_> for TimeVisitor {
            type Value = Time;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "an integer tick count, \"inf\" or \"-inf\"")
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Time, E> {
                if v == i64::MAX || v == i64::MIN {
                    return Err(E::custom("tick count collides with a sentinel"));
                }
                Ok(Time(v))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Time, E> {
                let v = i64::try_from(v).map_err(|_| E::custom("tick count too large"))?;
                self.visit_i64(v)
            }
            // Self-describing formats such as CSV may surface "inf" as a float.
            fn visit_f64<E: de::Error>(self, v: f64) -> Result<Time, E> {
                if v == f64::INFINITY {
                    Ok(Time::INFINITY)
                } else if v == f64::NEG_INFINITY {
                    Ok(Time::NEG_INFINITY)
                } else if v.fract() == 0.0 && v.abs() < 9.0e15 {
                    self.visit_i64(v as i64)
                } else {
                    Err(E::custom(format!("tick counts are integers, got {v}")))
                }
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<Time, E> {
                match v {
                    "inf" | "+inf" | "infinity" => Ok(Time::INFINITY),
                    "-inf" | "-infinity" => Ok(Time::NEG_INFINITY),
                    _ => Err(E::custom(format!("unrecognized time {v:?}"))),
                }
            }
        }
        d.deserialize_any(TimeVisitor)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sentinels_absorb_offsets() {
        assert_eq!(Time::INFINITY + 5, Time::INFINITY);
        assert_eq!(Time::NEG_INFINITY + 1_000, Time::NEG_INFINITY);
        assert_eq!(Time::new(3) + 4, Time::new(7));
        assert!(Time::NEG_INFINITY < Time::new(-1_000_000));
        assert!(Time::new(1_000_000) < Time::INFINITY);
    }

    #[test]
    fn serde_roundtrip() {
        for t in [
            Time::INFINITY,
            Time::NEG_INFINITY,
            Time::new(-4),
            Time::new(99),
        ] {
            let s = serde_json::to_string(&t).unwrap();
            assert_eq!(serde_json::from_str::<Time>(&s).unwrap(), t);
        }
        assert_eq!(serde_json::to_string(&Time::INFINITY).unwrap(), "\"inf\"");
    }
}
