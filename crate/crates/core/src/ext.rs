//! Extended integers: finite values plus a distinguished `inf`.
//!
//! Edge multiplicities live in `{0, 1, 2, ...} ∪ {inf}`. The shifted
//! adjacency matrices used by the rest of the crate also carry `-1` on the
//! diagonal, so [`Ext`] wraps a signed finite value. All arithmetic is
//! checked: overflow is an error, and `inf - inf` is only defined where a
//! caller explicitly opts into the convention `inf - inf = inf`.

use std::cmp::Ordering;
use std::fmt;

use serde::de::{self, Deserializer, Visitor};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// A finite signed integer or `inf`.
///
/// `inf` compares strictly greater than every finite value.
///
/// ```
/// use movecalc::Ext;
/// assert_eq!(Ext::Fin(2).add(Ext::Inf).unwrap(), Ext::Inf);
/// assert_eq!(Ext::Inf.mul(Ext::Fin(0)).unwrap(), Ext::Fin(0));
/// assert!(Ext::Fin(3).sub(Ext::Inf).is_err());
/// ```
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub enum Ext {
    Fin(i64),
    Inf,
}

impl Ext {
    pub const ZERO: Ext = Ext::Fin(0);
    pub const ONE: Ext = Ext::Fin(1);

    pub fn is_inf(self) -> bool {
        matches!(self, Ext::Inf)
    }

    pub fn is_zero(self) -> bool {
        self == Ext::Fin(0)
    }

    /// True for finite values `>= 0` or `inf`; multiplicities must satisfy this.
    pub fn is_multiplicity(self) -> bool {
        match self {
            Ext::Fin(v) => v >= 0,
            Ext::Inf => true,
        }
    }

    pub fn is_positive(self) -> bool {
        match self {
            Ext::Fin(v) => v > 0,
            Ext::Inf => true,
        }
    }

    /// The finite value, or an error when the value is `inf`.
    pub fn finite(self) -> Result<i64> {
        match self {
            Ext::Fin(v) => Ok(v),
            Ext::Inf => Err(Error::Arithmetic("expected a finite value, got inf".into())),
        }
    }

    pub fn add(self, rhs: Ext) -> Result<Ext> {
        match (self, rhs) {
            (Ext::Inf, _) | (_, Ext::Inf) => Ok(Ext::Inf),
            (Ext::Fin(a), Ext::Fin(b)) => a
                .checked_add(b)
                .map(Ext::Fin)
                .ok_or_else(|| Error::Arithmetic(format!("overflow in {a} + {b}"))),
        }
    }

    /// Product with the conventions `inf * 0 = 0` and `inf * k = inf` for `k >= 1`.
    pub fn mul(self, rhs: Ext) -> Result<Ext> {
        match (self, rhs) {
            (Ext::Fin(0), _) | (_, Ext::Fin(0)) => Ok(Ext::Fin(0)),
            (Ext::Inf, _) | (_, Ext::Inf) => Ok(Ext::Inf),
            (Ext::Fin(a), Ext::Fin(b)) => a
                .checked_mul(b)
                .map(Ext::Fin)
                .ok_or_else(|| Error::Arithmetic(format!("overflow in {a} * {b}"))),
        }
    }

    /// Checked subtraction. `inf - finite = inf`; `x - inf` and `inf - inf`
    /// are errors here (see [`Ext::sub_absorbing`] for the one place the
    /// latter is permitted).
    pub fn sub(self, rhs: Ext) -> Result<Ext> {
        match (self, rhs) {
            (_, Ext::Inf) => Err(Error::Arithmetic(
                "subtraction of inf is not defined here".into(),
            )),
            (Ext::Inf, Ext::Fin(_)) => Ok(Ext::Inf),
            (Ext::Fin(a), Ext::Fin(b)) => a
                .checked_sub(b)
                .map(Ext::Fin)
                .ok_or_else(|| Error::Arithmetic(format!("overflow in {a} - {b}"))),
        }
    }

    /// Subtraction with the convention `inf - inf = inf`, used only on
    /// columns of infinite emitters where the operation provably does not
    /// alter the column. `finite - inf` is still an error.
    pub fn sub_absorbing(self, rhs: Ext) -> Result<Ext> {
        match (self, rhs) {
            (Ext::Inf, Ext::Inf) => Ok(Ext::Inf),
            _ => self.sub(rhs),
        }
    }

    pub fn checked_sum<I: IntoIterator<Item = Ext>>(iter: I) -> Result<Ext> {
        let mut acc = Ext::ZERO;
        for v in iter {
            acc = acc.add(v)?;
        }
        Ok(acc)
    }
}

impl PartialOrd for Ext {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Ext {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Ext::Inf, Ext::Inf) => Ordering::Equal,
            (Ext::Inf, Ext::Fin(_)) => Ordering::Greater,
            (Ext::Fin(_), Ext::Inf) => Ordering::Less,
            (Ext::Fin(a), Ext::Fin(b)) => a.cmp(b),
        }
    }
}

impl From<i64> for Ext {
    fn from(v: i64) -> Self {
        Ext::Fin(v)
    }
}

impl fmt::Display for Ext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Ext::Fin(v) => write!(f, "{v}"),
            Ext::Inf => write!(f, "inf"),
        }
    }
}

impl Serialize for Ext {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Ext::Fin(v) => serializer.serialize_i64(*v),
            Ext::Inf => serializer.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Ext {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct ExtVisitor;

        impl Visitor<'_> for ExtVisitor {
            type Value = Ext;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("an integer or the string \"inf\"")
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Ext, E> {
                Ok(Ext::Fin(v))
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Ext, E> {
                i64::try_from(v)
                    .map(Ext::Fin)
                    .map_err(|_| E::custom(format!("{v} does not fit in 64 bits")))
            }

            fn visit_str<E: de::Error>(self, s: &str) -> std::result::Result<Ext, E> {
                if s == "inf" {
                    Ok(Ext::Inf)
                } else {
                    Err(E::custom(format!("expected \"inf\", got {s:?}")))
                }
            }
        }

        deserializer.deserialize_any(ExtVisitor)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inf_absorbs_addition() {
        assert_eq!(Ext::Inf.add(Ext::Fin(7)).unwrap(), Ext::Inf);
        assert_eq!(Ext::Fin(7).add(Ext::Inf).unwrap(), Ext::Inf);
    }

    #[test]
    fn inf_times_zero_is_zero() {
        assert_eq!(Ext::Inf.mul(Ext::Fin(0)).unwrap(), Ext::Fin(0));
        assert_eq!(Ext::Fin(0).mul(Ext::Inf).unwrap(), Ext::Fin(0));
        assert_eq!(Ext::Inf.mul(Ext::Fin(3)).unwrap(), Ext::Inf);
    }

    #[test]
    fn inf_minus_inf_needs_permission() {
        assert!(Ext::Inf.sub(Ext::Inf).is_err());
        assert_eq!(Ext::Inf.sub_absorbing(Ext::Inf).unwrap(), Ext::Inf);
        assert!(Ext::Fin(1).sub_absorbing(Ext::Inf).is_err());
    }

    #[test]
    fn overflow_is_an_error() {
        assert!(Ext::Fin(i64::MAX).add(Ext::Fin(1)).is_err());
        assert!(Ext::Fin(i64::MAX).mul(Ext::Fin(2)).is_err());
    }

    #[test]
    fn ordering_puts_inf_on_top() {
        assert!(Ext::Inf > Ext::Fin(i64::MAX));
        assert!(Ext::Fin(-1) < Ext::Fin(0));
    }

    #[test]
    fn serde_round_trip() {
        let vals = [Ext::Fin(-1), Ext::Fin(0), Ext::Fin(42), Ext::Inf];
        for v in vals {
            let s = serde_json::to_string(&v).unwrap();
            let back: Ext = serde_json::from_str(&s).unwrap();
            assert_eq!(v, back);
        }
        assert_eq!(serde_json::to_string(&Ext::Inf).unwrap(), "\"inf\"");
    }
}
