//! Certified suprema of null rejection polynomials in Bernstein form.
//!
//! Under `θ_C = θ_D = θ` the probability of a rejection set is
//! `Σ_s b_s C(n,s) θ^s (1−θ)^{n−s}`, where `b_s` is the conditional rejection
//! probability within stratum `s`. On any interval the largest Bernstein
//! coefficient bounds the polynomial from above, and subdividing with
//! de Casteljau tightens that bound towards the true maximum.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

/// Bracket `[lower, upper]` around `sup_θ P(θ)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupBound {
    pub lower: f64,
    pub upper: f64,
}

/// Slack allowed above the target when accepting a rejection set.
pub const CERT_TOL: f64 = 1e-10;

/// Subdivisions after which an undecided bracket is treated as too large.
const MAX_SPLITS: usize = 50_000;

#[derive(Clone, Debug)]
pub struct NullPolynomial {
    b: Vec<f64>,
    ln_binom: Vec<f64>,
}

impl NullPolynomial {
    pub fn new(b: Vec<f64>) -> Self {
        let n = b.len() - 1;
        let row = crate::numerics::binomial_row(n);
        NullPolynomial { b, ln_binom: row.iter().map(|c| c.ln()).collect() }
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.b
    }

    pub fn degree(&self) -> usize {
        self.b.len() - 1
    }

    pub fn eval(&self, theta: f64) -> f64 {
        let n = self.degree();
        if theta <= 0.0 {
            return self.b[0];
        }
        if theta >= 1.0 {
            return self.b[n];
        }
        let (l, l1) = (theta.ln(), (-theta).ln_1p());
        let mut s = 0.0;
        for (k, &bk) in self.b.iter().enumerate() {
            if bk != 0.0 {
                s += bk * (self.ln_binom[k] + k as f64 * l + (n - k) as f64 * l1).exp();
            }
        }
        s
    }

    pub fn coefficient_max(&self) -> f64 {
        self.b.iter().copied().fold(0.0, f64::max)
    }

    /// Maximum over the grid `θ = i / (4n)`, with its location.
    pub fn grid_max(&self) -> (f64, f64) {
        let m = 4 * self.degree().max(1);
        let mut best = (f64::NEG_INFINITY, 0.0);
        for i in 0..=m {
            let th = i as f64 / m as f64;
            let v = self.eval(th);
            if v > best.0 {
                best = (v, th);
            }
        }
        best
    }

    /// `(grid maximum, maximum coefficient)`.
    pub fn crude_bracket(&self) -> SupBound {
        SupBound { lower: self.grid_max().0, upper: self.coefficient_max() }
    }

    /// Decide whether `sup P ≤ target` (up to [`CERT_TOL`]).
    ///
    /// Returns the decision and the bracket that justified it.
    pub fn certify(&self, target: f64) -> (bool, SupBound) {
        let crude = self.coefficient_max();
        let (lower, _) = self.grid_max();
        if crude <= target {
            return (true, SupBound { lower, upper: crude });
        }
        if lower > target {
            return (false, SupBound { lower, upper: crude });
        }
        self.branch_and_bound(target, lower)
    }

    fn branch_and_bound(&self, target: f64, mut lower: f64) -> (bool, SupBound) {
        let mut heap = BinaryHeap::new();
        heap.push(Piece::new(0.0, 1.0, self.b.clone()));
        let mut splits = 0;
        loop {
            let top = heap.pop().expect("heap never empties");
            if top.ub <= target + CERT_TOL {
                return (true, SupBound { lower, upper: top.ub });
            }
            if splits >= MAX_SPLITS || top.hi - top.lo < 1e-13 {
                return (false, SupBound { lower, upper: top.ub });
            }
            splits += 1;
            let mid = 0.5 * (top.lo + top.hi);
            let (l, r) = de_casteljau_half(&top.coef);
            // The shared endpoint is a point value of the polynomial.
            lower = lower.max(*l.last().unwrap());
            if lower > target {
                return (false, SupBound { lower, upper: top.ub });
            }
            heap.push(Piece::new(top.lo, mid, l));
            heap.push(Piece::new(mid, top.hi, r));
        }
    }
}

struct Piece {
    ub: f64,
    lo: f64,
    hi: f64,
    coef: Vec<f64>,
}

impl Piece {
    fn new(lo: f64, hi: f64, coef: Vec<f64>) -> Self {
        let ub = coef.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Piece { ub, lo, hi, coef }
    }
}

impl PartialEq for Piece {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}
impl Eq for Piece {}
impl PartialOrd for Piece {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Piece {
    fn cmp(&self, o: &Self) -> Ordering {
        self.ub.total_cmp(&o.ub).then_with(|| o.lo.total_cmp(&self.lo))
    }
}

/// Split Bernstein coefficients at the midpoint of their interval.
fn de_casteljau_half(c: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = c.len() - 1;
    let mut work = c.to_vec();
    let mut left = Vec::with_capacity(n + 1);
    let mut right = vec![0.0; n + 1];
    left.push(work[0]);
    right[n] = work[n];
    for level in 1..=n {
        for i in 0..=(n - level) {
            work[i] = 0.5 * (work[i] + work[i + 1]);
        }
        left.push(work[0]);
        right[n - level] = work[n - level];
    }
    (left, right)
}
