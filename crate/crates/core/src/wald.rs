//! Unpooled Wald statistic and the asymptotic two-sided test.
//!
//! The statistic is kept in exact form, `T = ±√(num/den)` with integer `num`
//! and `den`, so that states with mathematically equal statistics compare
//! equal. Exact tests rely on this: ties must be grouped atomically and a
//! one-ulp difference between `T(x)` and `T(swap(x))` would split a group.

use crate::error::{Error, Result};
use crate::numerics::normal_quantile;
use crate::state_space::TrialState;
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::fmt;

/// A Wald statistic value on the extended real line.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ExtendedStat {
    NegInf,
    /// `(−1)^neg · √(num/den)` in lowest terms; zero is `{neg: false, num: 0, den: 1}`.
    Finite { neg: bool, num: u64, den: u64 },
    PosInf,
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

impl ExtendedStat {
    pub const ZERO: ExtendedStat = ExtendedStat::Finite { neg: false, num: 0, den: 1 };

    /// `±√(num/den)`, reduced to lowest terms.
    pub fn signed_sqrt_ratio(neg: bool, num: u64, den: u64) -> Self {
        assert!(den > 0);
        if num == 0 {
            return Self::ZERO;
        }
        let g = gcd(num, den);
        ExtendedStat::Finite { neg, num: num / g, den: den / g }
    }

    pub fn value(&self) -> f64 {
        match *self {
            ExtendedStat::NegInf => f64::NEG_INFINITY,
            ExtendedStat::PosInf => f64::INFINITY,
            ExtendedStat::Finite { neg, num, den } => {
                let v = (num as f64 / den as f64).sqrt();
                if neg {
                    -v
                } else {
                    v
                }
            }
        }
    }

    pub fn neg(&self) -> Self {
        match *self {
            ExtendedStat::NegInf => ExtendedStat::PosInf,
            ExtendedStat::PosInf => ExtendedStat::NegInf,
            ExtendedStat::Finite { num: 0, .. } => *self,
            ExtendedStat::Finite { neg, num, den } => ExtendedStat::Finite { neg: !neg, num, den },
        }
    }

    pub fn abs(&self) -> Self {
        match *self {
            ExtendedStat::NegInf | ExtendedStat::PosInf => ExtendedStat::PosInf,
            ExtendedStat::Finite { num, den, .. } => ExtendedStat::Finite { neg: false, num, den },
        }
    }

    /// Ordering key for the sign: −∞ < negative < 0 < positive < +∞.
    fn rank(&self) -> i8 {
        match *self {
            ExtendedStat::NegInf => -2,
            ExtendedStat::Finite { num: 0, .. } => 0,
            ExtendedStat::Finite { neg: true, .. } => -1,
            ExtendedStat::Finite { neg: false, .. } => 1,
            ExtendedStat::PosInf => 2,
        }
    }
}

impl Ord for ExtendedStat {
    fn cmp(&self, other: &Self) -> Ordering {
        let (ra, rb) = (self.rank(), other.rank());
        if ra != rb {
            return ra.cmp(&rb);
        }
        match (*self, *other) {
            (
                ExtendedStat::Finite { neg, num: n1, den: d1 },
                ExtendedStat::Finite { num: n2, den: d2, .. },
            ) => {
                let mag = (n1 as u128 * d2 as u128).cmp(&(n2 as u128 * d1 as u128));
                if neg {
                    mag.reverse()
                } else {
                    mag
                }
            }
            _ => Ordering::Equal,
        }
    }
}

impl PartialOrd for ExtendedStat {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for ExtendedStat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            ExtendedStat::NegInf => write!(f, "-inf"),
            ExtendedStat::PosInf => write!(f, "+inf"),
            ExtendedStat::Finite { num: 0, .. } => write!(f, "0"),
            ExtendedStat::Finite { neg, num, den } => {
                write!(f, "{}sqrt({num}/{den})", if neg { "-" } else { "+" })
            }
        }
    }
}

impl std::str::FromStr for ExtendedStat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Format(format!("bad statistic value {s:?}"));
        match s {
            "-inf" => return Ok(ExtendedStat::NegInf),
            "+inf" => return Ok(ExtendedStat::PosInf),
            "0" => return Ok(ExtendedStat::ZERO),
            _ => {}
        }
        let (neg, rest) = match s.as_bytes().first() {
            Some(b'-') => (true, &s[1..]),
            Some(b'+') => (false, &s[1..]),
            _ => return Err(bad()),
        };
        let inner = rest.strip_prefix("sqrt(").and_then(|r| r.strip_suffix(')')).ok_or_else(bad)?;
        let (a, b) = inner.split_once('/').ok_or_else(bad)?;
        let num: u64 = a.parse().map_err(|_| bad())?;
        let den: u64 = b.parse().map_err(|_| bad())?;
        if den == 0 || num == 0 {
            return Err(bad());
        }
        Ok(ExtendedStat::signed_sqrt_ratio(neg, num, den))
    }
}

impl Serialize for ExtendedStat {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ExtendedStat {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// `T = (θ̂_D − θ̂_C) / √(θ̂_C(1−θ̂_C)/n_C + θ̂_D(1−θ̂_D)/n_D)`, with `0·∞ = 0`.
pub fn wald_statistic(x: &TrialState) -> Result<ExtendedStat> {
    if x.n_c == 0 || x.n_d == 0 {
        return Err(Error::Domain(format!("Wald statistic needs both arms observed, got {x}")));
    }
    Ok(wald_unchecked(x))
}

#[inline]
pub(crate) fn wald_unchecked(x: &TrialState) -> ExtendedStat {
    let (sc, sd, nc, nd) = (x.s_c as i64, x.s_d as i64, x.n_c as i64, x.n_d as i64);
    let diff = sd * nc - sc * nd;
    let neg = diff < 0;
    let var = (sc * (nc - sc)) as u64 * (nd * nd * nd) as u64 + (sd * (nd - sd)) as u64 * (nc * nc * nc) as u64;
    if var == 0 {
        return match diff.cmp(&0) {
            Ordering::Less => ExtendedStat::NegInf,
            Ordering::Equal => ExtendedStat::ZERO,
            Ordering::Greater => ExtendedStat::PosInf,
        };
    }
    let d = diff.unsigned_abs();
    ExtendedStat::signed_sqrt_ratio(neg, d * d * (nc * nd) as u64, var)
}

/// Two-sided critical value `z_{1−α/2}`.
pub fn z_critical(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("significance level {alpha}")));
    }
    normal_quantile(1.0 - alpha / 2.0)
}

/// `|t| ≥ z_{1−α/2}`.
pub fn asymptotic_reject_value(t: f64, alpha: f64) -> Result<bool> {
    Ok(t.abs() >= z_critical(alpha)?)
}

pub fn asymptotic_reject(x: &TrialState, alpha: f64) -> Result<bool> {
    asymptotic_reject_value(wald_statistic(x)?.value(), alpha)
}
