//! Conditional, unconditional and generalized-Boschloo exact Wald tests.
//!
//! All three work from a terminal [`PathWeightTable`]. Within a stratum of
//! total successes `s`, the null distribution of the state does not depend on
//! the common success rate: `P(x | s) = g(x) / C(n, s)`. Tie groups (states
//! sharing a statistic value) are always included or excluded as a whole.

pub mod bernstein;

use crate::error::{Error, Result};
use crate::numerics::binomial_row;
use crate::path_engine::PathWeightTable;
use crate::wald::{wald_unchecked, z_critical, ExtendedStat};
use bernstein::{NullPolynomial, SupBound};
use serde::{Deserialize, Serialize};

/// Absolute slack when comparing accumulated conditional probabilities with a level.
const LEVEL_EPS: f64 = 1e-12;

/// Relative tolerance for grouping equal generalized-Boschloo p-values.
pub const GB_TIE_RTOL: f64 = 1e-9;

/// Per-state quantities shared by every rule construction.
struct Prepared {
    n: u32,
    stat: Vec<ExtendedStat>,
    stratum: Vec<u32>,
    /// `g(x) / C(n, s(x))`.
    cond: Vec<f64>,
    /// Indices of states with positive weight.
    reachable: Vec<usize>,
}

fn prepare(g: &PathWeightTable) -> Result<Prepared> {
    if g.burn_in == 0 {
        return Err(Error::Domain("exact tests need a burn-in of at least one per arm".into()));
    }
    let ln_c: Vec<f64> = binomial_row(g.n as usize).iter().map(|c| c.ln()).collect();
    let mut stat = Vec::with_capacity(g.len());
    let mut stratum = Vec::with_capacity(g.len());
    let mut cond = Vec::with_capacity(g.len());
    let mut reachable = Vec::new();
    for (i, (x, &lg)) in g.states().zip(&g.log_g).enumerate() {
        let s = x.successes();
        stat.push(wald_unchecked(&x));
        stratum.push(s);
        let c = (lg - ln_c[s as usize]).exp();
        cond.push(c);
        if c > 0.0 {
            reachable.push(i);
        }
    }
    Ok(Prepared { n: g.n, stat, stratum, cond, reachable })
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("significance level {alpha}")))
    }
}

fn check_horizon(g: &PathWeightTable, n: u32) -> Result<()> {
    if g.n != n {
        return Err(Error::Domain(format!("rule built for n={n} applied to n={}", g.n)));
    }
    Ok(())
}

/// Critical values of one stratum; `None` means the tail never rejects.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StratumCritical {
    pub lower: Option<ExtendedStat>,
    pub upper: Option<ExtendedStat>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionalRule {
    pub n: u32,
    pub alpha: f64,
    pub strata: Vec<StratumCritical>,
    pub audit_lower: SupBound,
    pub audit_upper: SupBound,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnconditionalRule {
    pub n: u32,
    pub alpha: f64,
    pub lower: Option<ExtendedStat>,
    pub upper: Option<ExtendedStat>,
    pub audit_lower: SupBound,
    pub audit_upper: SupBound,
}

/// Rejects when the conditional two-sided p-value `T_GB` is at most `critical`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GbRule {
    pub n: u32,
    pub alpha: f64,
    /// Largest included p-value; `None` rejects nothing.
    pub critical: Option<f64>,
    /// Smallest excluded p-value. Every threshold in `[critical, next_excluded)`
    /// gives the same test.
    pub next_excluded: Option<f64>,
    pub audit: SupBound,
    #[serde(skip)]
    pub t_gb: Vec<f64>,
}

impl GbRule {
    /// Supremum of thresholds that define this test (`c̲_GB`).
    pub fn threshold_sup(&self) -> f64 {
        self.next_excluded.unwrap_or(f64::INFINITY)
    }
}

/// Tie groups of `idx` sorted by `key`, as `(start, end)` ranges.
fn groups_by<K: PartialEq>(idx: &[usize], key: impl Fn(usize) -> K) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=idx.len() {
        if i == idx.len() || key(idx[i]) != key(idx[start]) {
            out.push((start, i));
            start = i;
        }
    }
    out
}

/// Largest prefix of tie groups whose cumulative conditional mass stays within `level`.
fn conditional_tail(order: &[usize], groups: &[(usize, usize)], cond: &[f64], level: f64) -> Option<usize> {
    let mut acc = 0.0;
    let mut last = None;
    for (k, &(a, b)) in groups.iter().enumerate() {
        acc += order[a..b].iter().map(|&i| cond[i]).sum::<f64>();
        if acc > level + LEVEL_EPS {
            break;
        }
        last = Some(k);
    }
    last
}

pub fn conditional_rule(g: &PathWeightTable, alpha: f64) -> Result<ConditionalRule> {
    check_alpha(alpha)?;
    let p = prepare(g)?;
    let n = p.n as usize;
    let mut by_stratum: Vec<Vec<usize>> = vec![Vec::new(); n + 1];
    for &i in &p.reachable {
        by_stratum[p.stratum[i] as usize].push(i);
    }
    let half = alpha / 2.0;
    let mut strata = Vec::with_capacity(n + 1);
    for mut idx in by_stratum {
        idx.sort_by(|&a, &b| p.stat[b].cmp(&p.stat[a]).then(a.cmp(&b)));
        let groups = groups_by(&idx, |i| p.stat[i]);
        let upper = conditional_tail(&idx, &groups, &p.cond, half).map(|k| p.stat[idx[groups[k].0]]);
        idx.reverse();
        let groups = groups_by(&idx, |i| p.stat[i]);
        let lower = conditional_tail(&idx, &groups, &p.cond, half).map(|k| p.stat[idx[groups[k].0]]);
        strata.push(StratumCritical { lower, upper });
    }
    let mut rule = ConditionalRule {
        n: p.n,
        alpha,
        strata,
        audit_lower: SupBound { lower: 0.0, upper: 0.0 },
        audit_upper: SupBound { lower: 0.0, upper: 0.0 },
    };
    let (lo, hi) = split_tails(&p, |i| {
        let c = &rule.strata[p.stratum[i] as usize];
        (c.lower.is_some_and(|v| p.stat[i] <= v), c.upper.is_some_and(|v| p.stat[i] >= v))
    });
    rule.audit_lower = NullPolynomial::new(lo).certify(half).1;
    rule.audit_upper = NullPolynomial::new(hi).certify(half).1;
    Ok(rule)
}

/// Bernstein coefficients of the lower and upper rejection sets.
fn split_tails(p: &Prepared, decide: impl Fn(usize) -> (bool, bool)) -> (Vec<f64>, Vec<f64>) {
    let n = p.n as usize;
    let mut lo = vec![0.0; n + 1];
    let mut hi = vec![0.0; n + 1];
    for &i in &p.reachable {
        let (l, h) = decide(i);
        let s = p.stratum[i] as usize;
        if l {
            lo[s] += p.cond[i];
        }
        if h {
            hi[s] += p.cond[i];
        }
    }
    (lo, hi)
}

/// Bernstein coefficients `b_s` of a prefix of `order`.
fn prefix_coefficients(p: &Prepared, order: &[usize], end: usize) -> Vec<f64> {
    let mut b = vec![0.0; p.n as usize + 1];
    for &i in &order[..end] {
        b[p.stratum[i] as usize] += p.cond[i];
    }
    b
}

/// Largest number of leading tie groups whose certified null supremum stays within `level`.
///
/// The true supremum grows with the prefix, so a bisection over group counts
/// finds the same cut as adding groups one at a time.
fn unconditional_cut(p: &Prepared, order: &[usize], groups: &[(usize, usize)], level: f64) -> (usize, SupBound) {
    let check = |k: usize| -> (bool, SupBound) {
        let end = if k == 0 { 0 } else { groups[k - 1].1 };
        NullPolynomial::new(prefix_coefficients(p, order, end)).certify(level)
    };
    let (mut lo, mut hi) = (0usize, groups.len());
    let mut best = check(0).1;
    // Invariant: `lo` groups pass; more than `hi` groups fail.
    while lo < hi {
        let mid = (lo + hi).div_ceil(2);
        let (ok, bound) = check(mid);
        if ok {
            lo = mid;
            best = bound;
        } else {
            hi = mid - 1;
        }
    }
    (lo, best)
}

pub fn unconditional_rule(g: &PathWeightTable, alpha: f64) -> Result<UnconditionalRule> {
    check_alpha(alpha)?;
    let p = prepare(g)?;
    let half = alpha / 2.0;
    let mut order = p.reachable.clone();
    order.sort_by(|&a, &b| p.stat[b].cmp(&p.stat[a]).then(a.cmp(&b)));
    let groups = groups_by(&order, |i| p.stat[i]);
    let (k_hi, audit_upper) = unconditional_cut(&p, &order, &groups, half);
    let upper = (k_hi > 0).then(|| p.stat[order[groups[k_hi - 1].0]]);
    order.reverse();
    let groups = groups_by(&order, |i| p.stat[i]);
    let (k_lo, audit_lower) = unconditional_cut(&p, &order, &groups, half);
    let lower = (k_lo > 0).then(|| p.stat[order[groups[k_lo - 1].0]]);
    Ok(UnconditionalRule { n: p.n, alpha, lower, upper, audit_lower, audit_upper })
}

/// `T_GB(x) = Σ_{x' : s(x')=s(x), |T(x')| ≥ |T(x)|} g(x') / C(n, s(x'))` for every state.
pub fn gb_statistic(g: &PathWeightTable) -> Result<Vec<f64>> {
    let p = prepare(g)?;
    Ok(gb_values(&p))
}

fn gb_values(p: &Prepared) -> Vec<f64> {
    let n = p.n as usize;
    let mut by_stratum: Vec<Vec<usize>> = vec![Vec::new(); n + 1];
    for i in 0..p.stat.len() {
        by_stratum[p.stratum[i] as usize].push(i);
    }
    let mut out = vec![0.0; p.stat.len()];
    for mut idx in by_stratum {
        idx.sort_by(|&a, &b| p.stat[b].abs().cmp(&p.stat[a].abs()).then(a.cmp(&b)));
        let mut acc = 0.0;
        for (a, b) in groups_by(&idx, |i| p.stat[i].abs()) {
            acc += idx[a..b].iter().map(|&i| p.cond[i]).sum::<f64>();
            for &i in &idx[a..b] {
                out[i] = acc;
            }
        }
    }
    out
}

pub fn gb_rule(g: &PathWeightTable, alpha: f64) -> Result<GbRule> {
    check_alpha(alpha)?;
    let p = prepare(g)?;
    let t_gb = gb_values(&p);
    let mut order = p.reachable.clone();
    order.sort_by(|&a, &b| t_gb[a].total_cmp(&t_gb[b]).then(a.cmp(&b)));
    // Chain groups from each group's first value so that near-equal p-values
    // computed along different summation orders stay together.
    let mut groups = Vec::new();
    let mut start = 0;
    for i in 1..=order.len() {
        if i == order.len() || t_gb[order[i]] > t_gb[order[start]] * (1.0 + GB_TIE_RTOL) {
            groups.push((start, i));
            start = i;
        }
    }
    let (k, audit) = unconditional_cut(&p, &order, &groups, alpha);
    let critical = (k > 0).then(|| t_gb[order[groups[k - 1].1 - 1]]);
    let next_excluded = groups.get(k).map(|&(a, _)| t_gb[order[a]]);
    Ok(GbRule { n: p.n, alpha, critical, next_excluded, audit, t_gb })
}

/// `(grid maximum, maximum Bernstein coefficient)` of the null rejection
/// probability of an arbitrary terminal indicator.
pub fn bernstein_tail_sup(g: &PathWeightTable, reject: &[bool]) -> Result<SupBound> {
    Ok(NullPolynomial::new(rejection_coefficients(g, reject)?).crude_bracket())
}

/// Certified bracket around the null supremum of a terminal indicator.
pub fn certified_tail_sup(g: &PathWeightTable, reject: &[bool], target: f64) -> Result<(bool, SupBound)> {
    Ok(NullPolynomial::new(rejection_coefficients(g, reject)?).certify(target))
}

/// `b_s = Σ_{x: s(x)=s, reject(x)} g(x) / C(n, s)`.
pub fn rejection_coefficients(g: &PathWeightTable, reject: &[bool]) -> Result<Vec<f64>> {
    if reject.len() != g.len() {
        return Err(Error::Domain(format!("indicator has {} entries, layer has {}", reject.len(), g.len())));
    }
    let ln_c: Vec<f64> = binomial_row(g.n as usize).iter().map(|c| c.ln()).collect();
    let mut b = vec![0.0; g.n as usize + 1];
    for ((x, &lg), &r) in g.states().zip(&g.log_g).zip(reject) {
        if r && lg > f64::NEG_INFINITY {
            let s = x.successes() as usize;
            b[s] += (lg - ln_c[s]).exp();
        }
    }
    Ok(b)
}

/// Which test a rule implements.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    Conditional,
    Unconditional,
    Asymptotic,
    Gb,
}

impl TestKind {
    pub const ALL: [TestKind; 4] = [TestKind::Conditional, TestKind::Unconditional, TestKind::Asymptotic, TestKind::Gb];

    pub fn label(&self) -> &'static str {
        match self {
            TestKind::Conditional => "conditional",
            TestKind::Unconditional => "unconditional",
            TestKind::Asymptotic => "asymptotic",
            TestKind::Gb => "gb",
        }
    }
}

/// Any of the four tests, ready to produce a terminal rejection indicator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestRule {
    Asymptotic { alpha: f64, z: f64 },
    Conditional(ConditionalRule),
    Unconditional(UnconditionalRule),
    Gb(GbRule),
}

impl TestRule {
    pub fn build(kind: TestKind, g: &PathWeightTable, alpha: f64) -> Result<Self> {
        Ok(match kind {
            TestKind::Asymptotic => TestRule::asymptotic(alpha)?,
            TestKind::Conditional => TestRule::Conditional(conditional_rule(g, alpha)?),
            TestKind::Unconditional => TestRule::Unconditional(unconditional_rule(g, alpha)?),
            TestKind::Gb => TestRule::Gb(gb_rule(g, alpha)?),
        })
    }

    pub fn asymptotic(alpha: f64) -> Result<Self> {
        Ok(TestRule::Asymptotic { alpha, z: z_critical(alpha)? })
    }

    pub fn kind(&self) -> TestKind {
        match self {
            TestRule::Asymptotic { .. } => TestKind::Asymptotic,
            TestRule::Conditional(_) => TestKind::Conditional,
            TestRule::Unconditional(_) => TestKind::Unconditional,
            TestRule::Gb(_) => TestKind::Gb,
        }
    }

    pub fn alpha(&self) -> f64 {
        match self {
            TestRule::Asymptotic { alpha, .. } => *alpha,
            TestRule::Conditional(r) => r.alpha,
            TestRule::Unconditional(r) => r.alpha,
            TestRule::Gb(r) => r.alpha,
        }
    }

    /// Level the certified supremum is compared against, per tail.
    pub fn audits(&self) -> Vec<(f64, SupBound)> {
        match self {
            TestRule::Asymptotic { .. } => vec![],
            TestRule::Conditional(r) => vec![(r.alpha / 2.0, r.audit_lower), (r.alpha / 2.0, r.audit_upper)],
            TestRule::Unconditional(r) => vec![(r.alpha / 2.0, r.audit_lower), (r.alpha / 2.0, r.audit_upper)],
            TestRule::Gb(r) => vec![(r.alpha, r.audit)],
        }
    }

    /// Terminal rejection indicator over `g`'s layer.
    pub fn reject_indicator(&self, g: &PathWeightTable) -> Result<Vec<bool>> {
        Ok(match self {
            TestRule::Asymptotic { z, .. } => g
                .states()
                .map(|x| {
                    if x.n_c == 0 || x.n_d == 0 {
                        false
                    } else {
                        wald_unchecked(&x).value().abs() >= *z
                    }
                })
                .collect(),
            TestRule::Conditional(r) => {
                check_horizon(g, r.n)?;
                g.states()
                    .map(|x| {
                        let t = wald_unchecked(&x);
                        let c = &r.strata[x.successes() as usize];
                        c.lower.is_some_and(|v| t <= v) || c.upper.is_some_and(|v| t >= v)
                    })
                    .collect()
            }
            TestRule::Unconditional(r) => {
                check_horizon(g, r.n)?;
                g.states()
                    .map(|x| {
                        let t = wald_unchecked(&x);
                        r.lower.is_some_and(|v| t <= v) || r.upper.is_some_and(|v| t >= v)
                    })
                    .collect()
            }
            TestRule::Gb(r) => {
                check_horizon(g, r.n)?;
                let t_gb = if r.t_gb.len() == g.len() { r.t_gb.clone() } else { gb_statistic(g)? };
                t_gb.iter().map(|&v| r.critical.is_some_and(|c| v <= c)).collect()
            }
        })
    }
}
