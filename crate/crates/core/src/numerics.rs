//! Special functions and accumulation helpers.
//!
//! Everything here is a pure function of its arguments. The Beta-family
//! routines are tuned for the argument ranges that occur in trials with up to
//! a thousand participants (counts plus one, so parameters up to ~1002).

use crate::error::{Error, Result};
use std::f64::consts::LN_2;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Stirling remainder `ln Γ(x) − [(x − ½) ln x − x + ln √(2π)]` for `x ≥ 10`.
fn stirling_remainder(x: f64) -> f64 {
    debug_assert!(x >= 10.0);
    let r = 1.0 / x;
    let r2 = r * r;
    // Bernoulli-number coefficients B_{2k} / (2k (2k − 1)).
    const C: [f64; 8] = [
        1.0 / 12.0,
        -1.0 / 360.0,
        1.0 / 1260.0,
        -1.0 / 1680.0,
        1.0 / 1188.0,
        -691.0 / 360_360.0,
        1.0 / 156.0,
        -3617.0 / 122_400.0,
    ];
    let mut acc = 0.0;
    for c in C.iter().rev() {
        acc = acc * r2 + c;
    }
    acc * r
}

/// `ln Γ(x)` for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    assert!(x > 0.0, "ln_gamma needs a positive argument");
    if x >= 10.0 {
        return (x - 0.5) * x.ln() - x + LN_SQRT_2PI + stirling_remainder(x);
    }
    let mut y = x;
    let mut prod = 1.0;
    while y < 10.0 {
        prod *= y;
        y += 1.0;
    }
    ln_gamma(y) - prod.ln()
}

/// `ln B(a, b)`.
///
/// Uses the split-Stirling form for large arguments so the result stays
/// accurate to ~1e−13 absolute even when `ln Γ` itself is in the thousands.
pub fn log_beta(a: f64, b: f64) -> Result<f64> {
    if !(a > 0.0 && b > 0.0) || !a.is_finite() || !b.is_finite() {
        return Err(Error::Domain(format!("log_beta({a}, {b})")));
    }
    let p = a.min(b);
    let q = a.max(b);
    if p.fract() == 0.0 && q.fract() == 0.0 && p + q <= FACTORIALS as f64 {
        // B(p, q) = (p−1)! (q−1)! / (p+q−1)!
        let f = factorials();
        let (i, j) = (p as usize, q as usize);
        return Ok((f[i - 1] / f[i + j - 1] * f[j - 1]).ln());
    }
    let v = if p >= 10.0 {
        let corr = stirling_remainder(p) + stirling_remainder(q) - stirling_remainder(p + q);
        -0.5 * q.ln() + LN_SQRT_2PI + corr + (p - 0.5) * (p / (p + q)).ln()
            + q * (-p / (p + q)).ln_1p()
    } else if q >= 10.0 {
        let corr = stirling_remainder(q) - stirling_remainder(p + q);
        ln_gamma(p) + corr + p - p * (p + q).ln() + (q - 0.5) * (-p / (p + q)).ln_1p()
    } else {
        ln_gamma(p) + ln_gamma(q) - ln_gamma(p + q)
    };
    Ok(v)
}

const FACTORIALS: usize = 171;

fn factorials() -> &'static [f64; FACTORIALS] {
    static TABLE: std::sync::OnceLock<[f64; FACTORIALS]> = std::sync::OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = [1.0; FACTORIALS];
        for k in 1..FACTORIALS {
            t[k] = t[k - 1] * k as f64;
        }
        t
    })
}

/// Continued fraction for the incomplete beta function (modified Lentz).
fn betacf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..20_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn beta_cdf(x: f64, a: f64, b: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) || !(a > 0.0 && b > 0.0) {
        return Err(Error::Domain(format!("beta_cdf({x}, {a}, {b})")));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x == 1.0 {
        return Ok(1.0);
    }
    Ok(beta_cdf_unchecked(x, a, b))
}

fn beta_cdf_unchecked(x: f64, a: f64, b: f64) -> f64 {
    let lb = log_beta(a, b).expect("positive parameters");
    let front = (a * x.ln() + b * (-x).ln_1p() - lb).exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * betacf(a, b, x) / a
    } else {
        1.0 - front * betacf(b, a, 1.0 - x) / b
    }
}

/// Upper tail `1 − I_x(a, b)` without cancellation.
fn beta_sf(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x >= 1.0 {
        return 0.0;
    }
    beta_cdf_unchecked(1.0 - x, b, a)
}

/// `ln(I_u(a,b) − I_l(a,b))`, the log Beta mass of `[l, u]`.
///
/// Picks the lower or upper tail representation so the difference is taken
/// between the two smaller numbers.
pub fn beta_interval_log_mass(l: f64, u: f64, a: f64, b: f64) -> Result<f64> {
    if !(0.0 <= l && l < u && u <= 1.0) {
        return Err(Error::Domain(format!("degenerate interval [{l}, {u}]")));
    }
    let mean = a / (a + b);
    let diff = if l >= mean {
        beta_sf(l, a, b) - beta_sf(u, a, b)
    } else if u <= mean {
        beta_cdf(u, a, b)? - beta_cdf(l, a, b)?
    } else {
        1.0 - beta_cdf(l, a, b)? - beta_sf(u, a, b)
    };
    Ok(if diff > 0.0 { diff.ln() } else { f64::NEG_INFINITY })
}

/// `P(X > Y)` for independent `X ~ Beta(a1, b1)`, `Y ~ Beta(a2, b2)` with
/// integer parameters.
pub fn prob_beta_greater(a1: u32, b1: u32, a2: u32, b2: u32) -> Result<f64> {
    if a1 == 0 || b1 == 0 || a2 == 0 || b2 == 0 {
        return Err(Error::Domain(format!(
            "prob_beta_greater({a1}, {b1}, {a2}, {b2})"
        )));
    }
    Ok(beta_greater_pair(a1, b1, a2, b2).0)
}

/// Returns `(P(X > Y), P(Y > X))`, summing whichever of the four equivalent
/// finite series is shortest.
pub(crate) fn beta_greater_pair(a1: u32, b1: u32, a2: u32, b2: u32) -> (f64, f64) {
    // Evaluate in a canonical argument order so that swapping the two
    // distributions swaps the results exactly.
    if (a1, b1) == (a2, b2) {
        return (0.5, 0.5);
    }
    if (a1, b1) > (a2, b2) {
        let (p, q) = beta_greater_pair(a2, b2, a1, b1);
        return (q, p);
    }
    // P(X > Y) = S(a1, b1, a2, b2), the series over i < a1.
    // P(Y > X) = S(a2, b2, a1, b1).
    // Reflecting θ → 1 − θ: P(X > Y) = P(1−Y > 1−X) = S(b2, a2, b1, a1),
    // and P(Y > X) = S(b1, a1, b2, a2).
    let m = a1.min(a2).min(b1).min(b2);
    if m == a1 {
        let p = series(a1, b1, a2, b2);
        (p, 1.0 - p)
    } else if m == a2 {
        let p = series(a2, b2, a1, b1);
        (1.0 - p, p)
    } else if m == b2 {
        let p = series(b2, a2, b1, a1);
        (p, 1.0 - p)
    } else {
        let p = series(b1, a1, b2, a2);
        (1.0 - p, p)
    }
}

/// `Σ_{i<a1} B(a2+i, b1+b2) / ((b1+i) B(1+i, b1) B(a2, b2))`, i.e. `P(X > Y)`.
fn series(a1: u32, b1: u32, a2: u32, b2: u32) -> f64 {
    let (a2f, b1f, b2f) = (a2 as f64, b1 as f64, b2 as f64);
    // term_0 = B(a2, b1+b2) / B(a2, b2)
    let mut log_scale = log_beta(a2f, b1f + b2f).unwrap() - log_beta(a2f, b2f).unwrap();
    let mut cur = 1.0;
    let mut acc = 1.0;
    for i in 0..a1.saturating_sub(1) {
        let i = i as f64;
        cur *= (a2f + i) * (b1f + i) / ((a2f + i + b1f + b2f) * (1.0 + i));
        acc += cur;
        if acc > 1e200 {
            log_scale += acc.ln();
            cur /= acc;
            acc = 1.0;
        }
    }
    (log_scale + acc.ln()).exp().min(1.0)
}

/// Inverse standard normal CDF (Wichura's AS 241, ~1e−16 relative).
#[allow(clippy::inconsistent_digit_grouping, clippy::excessive_precision)]
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("normal_quantile({p})")));
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        let num = (((((((2509.080_928_730_122_7 * r + 33430.575_583_588_128) * r
            + 67265.770_927_008_7)
            * r
            + 45921.953_931_549_87)
            * r
            + 13731.693_765_509_461)
            * r
            + 1971.590_950_306_551_3)
            * r
            + 133.141_667_891_784_38)
            * r
            + 3.387_132_872_796_366_5)
            * q;
        let den = ((((((5226.495_278_852_545 * r + 28729.085_735_721_943) * r
            + 39307.895_800_092_71)
            * r
            + 21213.794_301_586_597)
            * r
            + 5394.196_021_424_751)
            * r
            + 687.187_007_492_057_9)
            * r
            + 42.313_330_701_600_91)
            * r
            + 1.0;
        return Ok(num / den);
    }
    let r0 = if q < 0.0 { p } else { 1.0 - p };
    let mut r = (-r0.ln()).sqrt();
    let val = if r <= 5.0 {
        r -= 1.6;
        let num = ((((((7.745_450_142_783_414e-4 * r + 0.022_723_844_989_269_184) * r
            + 0.241_780_725_177_450_6)
            * r
            + 1.270_458_252_452_368_4)
            * r
            + 3.647_848_324_763_204_5)
            * r
            + 5.769_497_221_460_691)
            * r
            + 4.630_337_846_156_546)
            * r
            + 1.423_437_110_749_683_5;
        let den = ((((((1.050_750_071_644_416_9e-9 * r + 5.475_938_084_995_345e-4) * r
            + 0.015_198_666_563_616_457)
            * r
            + 0.148_103_976_427_480_08)
            * r
            + 0.689_767_334_985_1)
            * r
            + 1.676_384_830_183_803_8)
            * r
            + 2.053_191_626_637_759)
            * r
            + 1.0;
        num / den
    } else {
        r -= 5.0;
        let num = ((((((2.010_334_399_292_288_1e-7 * r + 2.711_555_568_743_487_6e-5) * r
            + 0.001_242_660_947_388_078_4)
            * r
            + 0.026_532_189_526_576_124)
            * r
            + 0.296_560_571_828_504_9)
            * r
            + 1.784_826_539_917_291_3)
            * r
            + 5.463_784_911_164_114)
            * r
            + 6.657_904_643_501_103;
        let den = ((((((2.044_263_103_389_939_7e-15 * r + 1.421_511_758_316_446e-7) * r
            + 1.846_318_317_510_054_8e-5)
            * r
            + 7.868_691_311_456_133e-4)
            * r
            + 0.014_875_361_290_850_615)
            * r
            + 0.136_929_880_922_735_8)
            * r
            + 0.599_832_206_555_888)
            * r
            + 1.0;
        num / den
    };
    Ok(if q < 0.0 { -val } else { val })
}

/// A nonnegative real carried as its natural log; `−∞` is zero.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Default)]
pub struct LogWeight(pub f64);

impl LogWeight {
    pub const ZERO: LogWeight = LogWeight(f64::NEG_INFINITY);
    pub const ONE: LogWeight = LogWeight(0.0);

    pub fn from_value(v: f64) -> Self {
        LogWeight(v.ln())
    }

    pub fn value(self) -> f64 {
        self.0.exp()
    }

    pub fn is_zero(self) -> bool {
        self.0 == f64::NEG_INFINITY
    }
}

impl std::ops::Add for LogWeight {
    type Output = LogWeight;
    fn add(self, rhs: LogWeight) -> LogWeight {
        LogWeight(log_add_exp(self.0, rhs.0))
    }
}

impl std::ops::Mul for LogWeight {
    type Output = LogWeight;
    fn mul(self, rhs: LogWeight) -> LogWeight {
        if self.is_zero() || rhs.is_zero() {
            LogWeight::ZERO
        } else {
            LogWeight(self.0 + rhs.0)
        }
    }
}

/// `ln(e^a + e^b)`.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// `ln Σ e^{x_i}` in the given order, shifted by the maximum.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    let mut s = NeumaierSum::default();
    for &x in xs {
        s.add((x - m).exp());
    }
    m + s.total().ln()
}

/// Neumaier's compensated summation.
#[derive(Clone, Copy, Debug, Default)]
pub struct NeumaierSum {
    sum: f64,
    comp: f64,
}

impl NeumaierSum {
    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn total(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Row `k ↦ C(m, k)` of Pascal's triangle in floating point.
///
/// Built additively, so entries below 2⁵³ are exact and larger ones carry at
/// most `m` roundings.
pub fn binomial_row(m: usize) -> Vec<f64> {
    let mut row = vec![0.0; m + 1];
    row[0] = 1.0;
    for i in 1..=m {
        for k in (1..=i).rev() {
            row[k] += row[k - 1];
        }
    }
    row
}

/// `ln 2`, re-exported for normalisation checks.
pub const LN2: f64 = LN_2;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_beta_small_cases() {
        assert_eq!(log_beta(1.0, 1.0).unwrap(), 0.0);
        assert!((log_beta(2.0, 1.0).unwrap() - 0.5f64.ln()).abs() < 1e-15);
        assert!((log_beta(2.0, 3.0).unwrap() - (1.0f64 / 12.0).ln()).abs() < 1e-15);
        assert!(log_beta(0.0, 1.0).is_err());
    }

    #[test]
    fn beta_cdf_closed_forms() {
        for &x in &[0.0, 0.1, 0.37, 0.5, 0.99, 1.0] {
            assert!((beta_cdf(x, 1.0, 1.0).unwrap() - x).abs() < 1e-14);
        }
        assert!((beta_cdf(0.5, 2.0, 2.0).unwrap() - 0.5).abs() < 1e-14);
        assert!((beta_cdf(0.25, 2.0, 1.0).unwrap() - 0.0625).abs() < 1e-15);
        assert!(beta_cdf(1.5, 1.0, 1.0).is_err());
    }

    #[test]
    fn beta_greater_examples() {
        assert!((prob_beta_greater(1, 1, 1, 1).unwrap() - 0.5).abs() < 1e-15);
        assert!((prob_beta_greater(2, 1, 1, 2).unwrap() - 5.0 / 6.0).abs() < 1e-14);
        for a in 1..12 {
            for b in 1..12 {
                assert!((prob_beta_greater(a, b, a, b).unwrap() - 0.5).abs() < 1e-13);
            }
        }
        assert!(prob_beta_greater(0, 1, 1, 1).is_err());
    }

    #[test]
    fn quantile_examples() {
        assert_eq!(normal_quantile(0.5).unwrap(), 0.0);
        assert!((normal_quantile(0.975).unwrap() - 1.959_963_984_540_054).abs() < 1e-12);
        assert!((normal_quantile(0.025).unwrap() + 1.959_963_984_540_054).abs() < 1e-12);
        assert!(normal_quantile(0.0).is_err());
        assert!(normal_quantile(1.0).is_err());
    }

    #[test]
    fn pascal_row() {
        assert_eq!(binomial_row(4), vec![1.0, 4.0, 6.0, 4.0, 1.0]);
    }

    #[test]
    fn log_weights_combine() {
        let a = LogWeight::from_value(2.0);
        let b = LogWeight::from_value(3.0);
        assert!(((a + b).value() - 5.0).abs() < 1e-14);
        assert!(((a * b).value() - 6.0).abs() < 1e-14);
        assert_eq!((a + LogWeight::ZERO).0, a.0);
        assert!((a * LogWeight::ZERO).is_zero());
    }
}
