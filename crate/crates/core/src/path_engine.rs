//! Forward network algorithm for the path coefficients `g` and likelihood evaluation.
//!
//! The probability of terminal state `x` under success rates θ factors as
//! `g(x) · Π_a θ_a^{s_a} (1−θ_a)^{n_a−s_a}`, where `g` sums the allocation
//! probabilities of every path into `x` and does not depend on θ.

use crate::error::{Error, Result};
use crate::numerics::{binomial_row, NeumaierSum, LN2};
use crate::policy::{AllocationRule, Policy};
use crate::state_space::{LayerIndex, TrialState};
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rayon::prelude::*;
use std::io::{Read, Write};

/// Number of states summed sequentially before partial sums are combined.
/// Fixed so that reductions do not depend on the worker count.
pub(crate) const CHUNK: usize = 1 << 14;

/// Terminal-layer path coefficients, stored as `ln g` in canonical order.
#[derive(Clone, Debug, PartialEq)]
pub struct PathWeightTable {
    pub layer: LayerIndex,
    pub n: u32,
    pub burn_in: u32,
    pub descriptor: String,
    /// Maximum randomized allocation rate for table policies.
    pub p: Option<f64>,
    /// Free-form provenance carried in the file header (the CLI stores its
    /// configuration and version here).
    pub meta: String,
    pub log_g: Vec<f64>,
}

impl PathWeightTable {
    pub fn len(&self) -> usize {
        self.log_g.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_g.is_empty()
    }

    /// `g` in linear scale. Finite for horizons up to 1023, since `g ≤ 2ⁿ`.
    pub fn g(&self) -> Vec<f64> {
        self.log_g.iter().map(|v| v.exp()).collect()
    }

    pub fn states(&self) -> impl Iterator<Item = TrialState> + '_ {
        self.layer.states()
    }

    /// `Σ g · 2^{−n}`, which is 1 for every valid policy.
    pub fn total_mass(&self) -> f64 {
        let shift = -(self.n as f64) * LN2;
        chunked_sum(&self.log_g, |&v| (v + shift).exp())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(FORMAT_VERSION)?;
        w.write_u32::<LittleEndian>(self.n)?;
        w.write_u32::<LittleEndian>(self.burn_in)?;
        w.write_f64::<LittleEndian>(self.p.unwrap_or(f64::NAN))?;
        let d = self.descriptor.as_bytes();
        w.write_u32::<LittleEndian>(d.len() as u32)?;
        w.write_all(d)?;
        let m = self.meta.as_bytes();
        w.write_u32::<LittleEndian>(m.len() as u32)?;
        w.write_all(m)?;
        w.write_u64::<LittleEndian>(self.log_g.len() as u64)?;
        for &v in &self.log_g {
            w.write_f64::<LittleEndian>(v)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a path-weight table".into()));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported table version {version}")));
        }
        let n = r.read_u32::<LittleEndian>()?;
        let burn_in = r.read_u32::<LittleEndian>()?;
        let p = r.read_f64::<LittleEndian>()?;
        let dlen = r.read_u32::<LittleEndian>()? as usize;
        if dlen > 1 << 16 {
            return Err(Error::Format("descriptor too long".into()));
        }
        let mut d = vec![0u8; dlen];
        r.read_exact(&mut d)?;
        let descriptor = String::from_utf8(d).map_err(|e| Error::Format(e.to_string()))?;
        let mlen = r.read_u32::<LittleEndian>()? as usize;
        if mlen > 1 << 24 {
            return Err(Error::Format("metadata too long".into()));
        }
        let mut m = vec![0u8; mlen];
        r.read_exact(&mut m)?;
        let meta = String::from_utf8(m).map_err(|e| Error::Format(e.to_string()))?;
        if 2 * burn_in > n || n > 1023 {
            return Err(Error::Format(format!("bad header n={n}, b={burn_in}")));
        }
        let layer = LayerIndex::new(n, burn_in);
        let count = r.read_u64::<LittleEndian>()? as usize;
        if count != layer.len() {
            return Err(Error::Format(format!("expected {} weights, found {count}", layer.len())));
        }
        let mut log_g = vec![0.0; count];
        r.read_f64_into::<LittleEndian>(&mut log_g)?;
        Ok(PathWeightTable {
            layer,
            n,
            burn_in,
            descriptor,
            p: (!p.is_nan()).then_some(p),
            meta,
            log_g,
        })
    }
}

const MAGIC: &[u8; 4] = b"RXPW";
const FORMAT_VERSION: u32 = 1;

/// Exact path weights for any policy, using the closed form for equal allocation.
pub fn path_weights(policy: &Policy) -> Result<PathWeightTable> {
    let mut t = if policy.is_equal_allocation() {
        equal_allocation_g(policy.n, policy.burn_in)?
    } else {
        forward_g(policy, policy.n, policy.burn_in)?
    };
    t.descriptor = policy.descriptor();
    if let crate::policy::PolicyKind::CmdpTable(table) = &policy.kind {
        t.p = Some(table.p);
    }
    Ok(t)
}

/// Network algorithm: sweep from the end of burn-in to the horizon.
///
/// Coefficients are accumulated in linear scale (`g ≤ 2ⁿ` fits a double for
/// `n ≤ 1023`) and converted to logs once at the end. Each destination state
/// gathers its four predecessor edges in a fixed order: control success,
/// control failure, developmental success, developmental failure.
pub fn forward_g<P: AllocationRule + ?Sized>(policy: &P, n: u32, b: u32) -> Result<PathWeightTable> {
    if 2 * b > n {
        return Err(Error::Domain(format!("burn-in {b} per arm does not fit horizon {n}")));
    }
    if n > 1023 {
        return Err(Error::Numeric(format!("horizon {n} would overflow path weights")));
    }
    let start = LayerIndex::new(2 * b, b);
    let cb = binomial_row(b as usize);
    let mut g: Vec<f64> = start
        .states()
        .map(|x| cb[x.s_c as usize] * cb[x.s_d as usize])
        .collect();
    let mut cur = start;
    for t in 2 * b..n {
        let next = LayerIndex::new(t + 1, b);
        g = step(policy, &cur, &next, &g)?;
        cur = next;
    }
    let table = PathWeightTable {
        layer: cur,
        n,
        burn_in: b,
        descriptor: String::new(),
        p: None,
        meta: String::new(),
        log_g: g.iter().map(|v| v.ln()).collect(),
    };
    check_mass(&table)?;
    Ok(table)
}

fn check_mass(t: &PathWeightTable) -> Result<()> {
    let m = t.total_mass();
    if (m - 1.0).abs() > 1e-9 {
        return Err(Error::Numeric(format!("path weights sum to {m} instead of 1")));
    }
    Ok(())
}

/// One layer of the forward recursion.
fn step<P: AllocationRule + ?Sized>(
    policy: &P,
    cur: &LayerIndex,
    next: &LayerIndex,
    g: &[f64],
) -> Result<Vec<f64>> {
    let t = cur.t();
    // g·q and g·(1−q) per source state.
    let blocks: Vec<u32> = cur.nc_range().collect();
    let split: Vec<(Vec<f64>, Vec<f64>)> = blocks
        .par_iter()
        .map(|&n_c| -> Result<(Vec<f64>, Vec<f64>)> {
            let n_d = t - n_c;
            let (off, len) = cur.block(n_c);
            let mut to_c = Vec::with_capacity(len);
            let mut to_d = Vec::with_capacity(len);
            for s_c in 0..=n_c {
                for s_d in 0..=n_d {
                    let i = off + to_c.len();
                    let gi = g[i];
                    if gi == 0.0 {
                        to_c.push(0.0);
                        to_d.push(0.0);
                        continue;
                    }
                    let x = TrialState::new(s_c, s_d, n_c, n_d);
                    let q = policy.prob(&x)?;
                    if !(0.0..=1.0).contains(&q) {
                        return Err(Error::Numeric(format!("allocation probability {q} at {x}")));
                    }
                    to_c.push(gi * q);
                    to_d.push(gi * (1.0 - q));
                }
            }
            Ok((to_c, to_d))
        })
        .collect::<Result<_>>()?;
    let lo = *cur.nc_range().start();
    let block_of = |n_c: u32| -> Option<&(Vec<f64>, Vec<f64>)> {
        if cur.nc_range().contains(&n_c) {
            Some(&split[(n_c - lo) as usize])
        } else {
            None
        }
    };
    let t1 = t + 1;
    let out_blocks: Vec<Vec<f64>> = next
        .nc_range()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&n_c| {
            let n_d = t1 - n_c;
            let from_c = if n_c > 0 { block_of(n_c - 1).map(|b| &b.0) } else { None };
            let from_d = block_of(n_c).map(|b| &b.1);
            let w_c = n_d as usize + 1; // row width of the (n_c−1, n_d) block
            let w_d = n_d as usize; // row width of the (n_c, n_d−1) block
            let mut out = Vec::with_capacity((n_c as usize + 1) * (n_d as usize + 1));
            for s_c in 0..=n_c as usize {
                for s_d in 0..=n_d as usize {
                    let mut v = 0.0;
                    if let Some(src) = from_c {
                        if s_c >= 1 {
                            v += src[(s_c - 1) * w_c + s_d];
                        }
                        if s_c < n_c as usize {
                            v += src[s_c * w_c + s_d];
                        }
                    }
                    if let Some(src) = from_d {
                        if s_d >= 1 {
                            v += src[s_c * w_d + s_d - 1];
                        }
                        if s_d < n_d as usize {
                            v += src[s_c * w_d + s_d];
                        }
                    }
                    out.push(v);
                }
            }
            out
        })
        .collect();
    Ok(out_blocks.concat())
}

/// Closed form for equal allocation: `g = C(n/2, s_c) C(n/2, s_d)` on balanced states.
pub fn equal_allocation_g(n: u32, b: u32) -> Result<PathWeightTable> {
    if n % 2 == 1 {
        return Err(Error::Domain(format!("equal allocation needs an even horizon, got {n}")));
    }
    if 2 * b > n {
        return Err(Error::Domain(format!("burn-in {b} per arm does not fit horizon {n}")));
    }
    let layer = LayerIndex::new(n, b);
    let h = n / 2;
    let c = binomial_row(h as usize);
    let log_g = layer
        .states()
        .map(|x| {
            if x.n_c == h {
                (c[x.s_c as usize] * c[x.s_d as usize]).ln()
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    Ok(PathWeightTable {
        layer,
        n,
        burn_in: b,
        descriptor: "equal_allocation".into(),
        p: None,
        meta: String::new(),
        log_g,
    })
}

/// `k ln θ` with the convention `0 · ln 0 = 0`.
#[inline]
pub(crate) fn xlog(k: u32, ln_theta: f64) -> f64 {
    if k == 0 {
        0.0
    } else {
        k as f64 * ln_theta
    }
}

/// `Σ_a s_a ln θ_a + (n_a − s_a) ln(1 − θ_a)`.
pub fn log_likelihood_weight(x: &TrialState, theta: (f64, f64)) -> f64 {
    let (tc, td) = theta;
    xlog(x.s_c, tc.ln()) + xlog(x.f_c(), (-tc).ln_1p()) + xlog(x.s_d, td.ln()) + xlog(x.f_d(), (-td).ln_1p())
}

/// Sum of `f(v)` over `xs` in fixed-size chunks, combined in order.
pub(crate) fn chunked_sum<T: Sync>(xs: &[T], f: impl Fn(&T) -> f64 + Sync) -> f64 {
    let parts: Vec<NeumaierSum> = xs
        .par_chunks(CHUNK)
        .map(|c| {
            let mut s = NeumaierSum::default();
            for v in c {
                s.add(f(v));
            }
            s
        })
        .collect();
    let mut s = NeumaierSum::default();
    for p in parts {
        s.add(p.total());
    }
    s.total()
}

/// A terminal functional `f` premultiplied by `g`, ready for repeated evaluation.
///
/// Only states with `f·g ≠ 0` are kept; each carries `ln |f·g|`, its sign and
/// the outcome counts.
#[derive(Clone, Debug)]
pub struct WeightedFunctional {
    terms: Vec<Term>,
}

#[derive(Clone, Copy, Debug)]
struct Term {
    log_fg: f64,
    negative: bool,
    s_c: u32,
    f_c: u32,
    s_d: u32,
    f_d: u32,
}

impl WeightedFunctional {
    pub fn new(f: &[f64], g: &PathWeightTable) -> Result<Self> {
        if f.len() != g.len() {
            return Err(Error::Domain(format!(
                "functional has {} entries but the layer has {}",
                f.len(),
                g.len()
            )));
        }
        let mut terms = Vec::new();
        for ((x, &fv), &lg) in g.states().zip(f).zip(&g.log_g) {
            if !fv.is_finite() {
                return Err(Error::Domain(format!("non-finite functional value at {x}")));
            }
            if fv == 0.0 || lg == f64::NEG_INFINITY {
                continue;
            }
            terms.push(Term {
                log_fg: fv.abs().ln() + lg,
                negative: fv < 0.0,
                s_c: x.s_c,
                f_c: x.f_c(),
                s_d: x.s_d,
                f_d: x.f_d(),
            });
        }
        Ok(WeightedFunctional { terms })
    }

    /// `Σ f g θ-likelihood`, summed after shifting by the largest log term.
    pub fn eval(&self, theta: (f64, f64)) -> f64 {
        let (lc, lfc) = (theta.0.ln(), (-theta.0).ln_1p());
        let (ld, lfd) = (theta.1.ln(), (-theta.1).ln_1p());
        let log_term = |t: &Term| t.log_fg + xlog(t.s_c, lc) + xlog(t.f_c, lfc) + xlog(t.s_d, ld) + xlog(t.f_d, lfd);
        let max = self
            .terms
            .par_chunks(CHUNK)
            .map(|c| c.iter().map(log_term).fold(f64::NEG_INFINITY, f64::max))
            .collect::<Vec<_>>()
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return 0.0;
        }
        let total = chunked_sum(&self.terms, |t| {
            let v = (log_term(t) - max).exp();
            if t.negative {
                -v
            } else {
                v
            }
        });
        total * max.exp()
    }
}

/// `Σ_x f(x) g(x) P_θ-likelihood(x)`.
pub fn oc_value(f: &[f64], g: &PathWeightTable, theta: (f64, f64)) -> Result<f64> {
    Ok(WeightedFunctional::new(f, g)?.eval(theta))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_policy_one_step() {
        let q = |_: &TrialState| 0.3;
        let t = forward_g(&q, 1, 0).unwrap();
        let g = |x: TrialState| t.log_g[t.layer.index(&x).unwrap()].exp();
        assert!((g(TrialState::new(1, 0, 1, 0)) - 0.3).abs() < 1e-15);
        assert!((g(TrialState::new(0, 0, 1, 0)) - 0.3).abs() < 1e-15);
        assert!((g(TrialState::new(0, 1, 0, 1)) - 0.7).abs() < 1e-15);
        assert!((g(TrialState::new(0, 0, 0, 1)) - 0.7).abs() < 1e-15);
    }

    #[test]
    fn burn_in_only() {
        let q = |_: &TrialState| 0.9;
        let t = forward_g(&q, 12, 6).unwrap();
        let c = binomial_row(6);
        for (x, lg) in t.states().zip(&t.log_g) {
            assert_eq!(x.n_c, 6);
            assert!((lg.exp() - c[x.s_c as usize] * c[x.s_d as usize]).abs() < 1e-12);
        }
    }

    #[test]
    fn equal_allocation_small() {
        let t = equal_allocation_g(2, 0).unwrap();
        let at = |x: TrialState| t.log_g[t.layer.index(&x).unwrap()];
        assert_eq!(at(TrialState::new(0, 0, 1, 1)), 0.0);
        assert_eq!(at(TrialState::new(1, 1, 1, 1)), 0.0);
        assert_eq!(at(TrialState::new(0, 0, 2, 0)), f64::NEG_INFINITY);
        assert!(equal_allocation_g(3, 0).is_err());
    }

    #[test]
    fn likelihood_conventions() {
        let x = TrialState::new(2, 3, 2, 3);
        assert_eq!(log_likelihood_weight(&x, (1.0, 1.0)), 0.0);
        let y = TrialState::new(1, 3, 2, 3);
        assert_eq!(log_likelihood_weight(&y, (1.0, 1.0)), f64::NEG_INFINITY);
        assert!((log_likelihood_weight(&y, (0.5, 0.5)) + 5.0 * LN2).abs() < 1e-14);
    }

    #[test]
    fn oc_value_examples() {
        let t = equal_allocation_g(2, 0).unwrap();
        let ones = vec![1.0; t.len()];
        assert!((oc_value(&ones, &t, (0.2, 0.7)).unwrap() - 1.0).abs() < 1e-14);
        let s1: Vec<f64> = t.states().map(|x| (x.successes() == 1) as u8 as f64).collect();
        assert!((oc_value(&s1, &t, (0.5, 0.5)).unwrap() - 0.5).abs() < 1e-15);
        let s2: Vec<f64> = t.states().map(|x| (x.successes() == 2) as u8 as f64).collect();
        assert!((oc_value(&s2, &t, (1.0, 1.0)).unwrap() - 1.0).abs() < 1e-15);
        assert!(oc_value(&s2[1..], &t, (1.0, 1.0)).is_err());
    }

    #[test]
    fn table_round_trip() {
        let q = |x: &TrialState| if x.s_c > x.s_d { 0.7 } else { 0.4 };
        let mut t = forward_g(&q, 9, 1).unwrap();
        t.descriptor = "custom".into();
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        let back = PathWeightTable::read_from(&buf[..]).unwrap();
        assert_eq!(back, t);
        assert!(PathWeightTable::read_from(&buf[..20]).is_err());
    }
}
