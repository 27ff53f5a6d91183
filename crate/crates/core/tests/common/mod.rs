//! Brute-force oracles shared by the integration tests and the acceptance run.
//!
//! Everything here is written against plain floating point and explicit
//! history enumeration, without the library's layer indexing or exact
//! rational statistics.

#![allow(dead_code)]

use std::collections::HashMap;

use rarexact::state_space::Arm;
use rarexact::TrialState;

pub type GMap = HashMap<TrialState, f64>;

fn push(x: TrialState, arm: Arm, success: bool) -> TrialState {
    let (s, f) = x.successors(arm);
    if success {
        s
    } else {
        f
    }
}

/// Burn-in assignment used by every policy: control on even epochs.
fn burn_in_q(t: u32) -> f64 {
    if t.is_multiple_of(2) {
        1.0
    } else {
        0.0
    }
}

/// `g(x)` by walking all `4ⁿ` arm/outcome histories; outcome branches carry weight 1.
pub fn enumerate_g(q: &dyn Fn(&TrialState) -> f64, n: u32, b: u32) -> GMap {
    fn rec(x: TrialState, w: f64, n: u32, b: u32, q: &dyn Fn(&TrialState) -> f64, out: &mut GMap) {
        let t = x.epoch();
        if t == n {
            *out.entry(x).or_insert(0.0) += w;
            return;
        }
        let p = if t < 2 * b { burn_in_q(t) } else { q(&x) };
        for (arm, pa) in [(Arm::C, p), (Arm::D, 1.0 - p)] {
            if pa == 0.0 {
                continue;
            }
            for y in [true, false] {
                rec(push(x, arm, y), w * pa, n, b, q, out);
            }
        }
    }
    let mut out = GMap::new();
    rec(TrialState::new(0, 0, 0, 0), 1.0, n, b, q, &mut out);
    out
}

/// Equal allocation realized as "fewer participants first, coin flip when level".
pub fn balanced_rule(x: &TrialState) -> f64 {
    match x.n_c.cmp(&x.n_d) {
        std::cmp::Ordering::Less => 1.0,
        std::cmp::Ordering::Greater => 0.0,
        std::cmp::Ordering::Equal => 0.5,
    }
}

/// Expected fraction on the better arm, by enumerating histories with outcome probabilities.
pub fn enumerate_benefit(q: &dyn Fn(&TrialState) -> f64, n: u32, b: u32, theta: (f64, f64)) -> f64 {
    fn rec(x: TrialState, w: f64, n: u32, b: u32, q: &dyn Fn(&TrialState) -> f64, th: (f64, f64), acc: &mut f64) {
        let t = x.epoch();
        if t == n {
            let better = if th.0 > th.1 { x.n_c } else { x.n_d };
            *acc += w * better as f64 / n as f64;
            return;
        }
        let p = if t < 2 * b { burn_in_q(t) } else { q(&x) };
        for (arm, pa, ta) in [(Arm::C, p, th.0), (Arm::D, 1.0 - p, th.1)] {
            if pa == 0.0 {
                continue;
            }
            rec(push(x, arm, true), w * pa * ta, n, b, q, th, acc);
            rec(push(x, arm, false), w * pa * (1.0 - ta), n, b, q, th, acc);
        }
    }
    if theta.0 == theta.1 {
        return 0.5;
    }
    let mut acc = 0.0;
    rec(TrialState::new(0, 0, 0, 0), 1.0, n, b, q, theta, &mut acc);
    acc
}

/// Wald statistic in plain floating point.
pub fn wald_f64(x: &TrialState) -> f64 {
    let (nc, nd) = (x.n_c as f64, x.n_d as f64);
    let (pc, pd) = (x.s_c as f64 / nc, x.s_d as f64 / nd);
    let var = pc * (1.0 - pc) / nc + pd * (1.0 - pd) / nd;
    let diff = pd - pc;
    if var == 0.0 {
        if diff > 0.0 {
            f64::INFINITY
        } else if diff < 0.0 {
            f64::NEG_INFINITY
        } else {
            0.0
        }
    } else {
        diff / var.sqrt()
    }
}

pub fn choose(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn close(a: f64, b: f64) -> bool {
    a == b || (a.is_finite() && b.is_finite() && (a - b).abs() <= 1e-9 * a.abs().max(b.abs()))
}

/// States with positive weight sorted by `key` descending, split into groups of
/// numerically equal keys.
fn groups(states: &[(TrialState, f64)], key: &dyn Fn(&TrialState) -> f64) -> Vec<Vec<(TrialState, f64)>> {
    let mut v: Vec<(TrialState, f64)> = states.to_vec();
    v.sort_by(|a, b| key(&b.0).total_cmp(&key(&a.0)));
    let mut out: Vec<Vec<(TrialState, f64)>> = Vec::new();
    for s in v {
        match out.last_mut() {
            Some(g) if close(key(&g[0].0), key(&s.0)) => g.push(s),
            _ => out.push(vec![s]),
        }
    }
    out
}

fn conditional_weights(g: &GMap, n: u32) -> Vec<(TrialState, f64)> {
    g.iter()
        .filter(|(_, &w)| w > 0.0)
        .map(|(x, &w)| (*x, w / choose(n, x.successes())))
        .collect()
}

/// Conditional test: per stratum, largest tail of whole tie groups with mass ≤ α/2.
pub fn brute_conditional(g: &GMap, n: u32, alpha: f64) -> HashMap<TrialState, bool> {
    let cw = conditional_weights(g, n);
    let mut out: HashMap<TrialState, bool> = cw.iter().map(|(x, _)| (*x, false)).collect();
    for s in 0..=n {
        let stratum: Vec<(TrialState, f64)> = cw.iter().copied().filter(|(x, _)| x.successes() == s).collect();
        for sign in [1.0, -1.0] {
            let mut acc = 0.0;
            for grp in groups(&stratum, &|x| sign * wald_f64(x)) {
                acc += grp.iter().map(|p| p.1).sum::<f64>();
                if acc > alpha / 2.0 + 1e-12 {
                    break;
                }
                for (x, _) in grp {
                    out.insert(x, true);
                }
            }
        }
    }
    out
}

/// `sup_θ Σ_s b_s C(n,s) θ^s (1−θ)^{n−s}` by a dense grid plus golden-section polishing.
pub fn null_sup(b: &[f64]) -> f64 {
    let n = b.len() - 1;
    let eval = |th: f64| -> f64 {
        b.iter()
            .enumerate()
            .map(|(s, &bs)| bs * choose(n as u32, s as u32) * th.powi(s as i32) * (1.0 - th).powi((n - s) as i32))
            .sum()
    };
    let m = 20_000;
    let mut best = (0.0f64, 0.0f64);
    for i in 0..=m {
        let th = i as f64 / m as f64;
        let v = eval(th);
        if v > best.0 {
            best = (v, th);
        }
    }
    let (mut lo, mut hi) = ((best.1 - 1.0 / m as f64).max(0.0), (best.1 + 1.0 / m as f64).min(1.0));
    let r = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..100 {
        let a = hi - r * (hi - lo);
        let c = lo + r * (hi - lo);
        if eval(a) < eval(c) {
            lo = a;
        } else {
            hi = c;
        }
    }
    best.0.max(eval(0.5 * (lo + hi)))
}

/// Result of a brute-force unconditional construction.
pub struct BruteRule {
    pub reject: HashMap<TrialState, bool>,
    /// True if the null supremum at the cut is too close to the level to
    /// decide with floating point.
    pub ambiguous: bool,
}

/// Grows the rejection region group by group along `key` (descending) while the
/// null supremum stays within `level`.
fn grow(cw: &[(TrialState, f64)], n: u32, key: &dyn Fn(&TrialState) -> f64, level: f64, out: &mut HashMap<TrialState, bool>) -> bool {
    let mut b = vec![0.0; n as usize + 1];
    let mut ambiguous = false;
    for grp in groups(cw, key) {
        let mut trial = b.clone();
        for (x, w) in &grp {
            trial[x.successes() as usize] += w;
        }
        let sup = null_sup(&trial);
        if (sup - level).abs() < 1e-7 {
            ambiguous = true;
        }
        if sup > level {
            break;
        }
        b = trial;
        for (x, _) in grp {
            out.insert(x, true);
        }
    }
    ambiguous
}

pub fn brute_unconditional(g: &GMap, n: u32, alpha: f64) -> BruteRule {
    let cw = conditional_weights(g, n);
    let mut reject: HashMap<TrialState, bool> = cw.iter().map(|(x, _)| (*x, false)).collect();
    let a1 = grow(&cw, n, &|x| wald_f64(x), alpha / 2.0, &mut reject);
    let a2 = grow(&cw, n, &|x| -wald_f64(x), alpha / 2.0, &mut reject);
    BruteRule { reject, ambiguous: a1 || a2 }
}

/// Conditional two-sided p-value: stratum mass of states at least as extreme in `|T|`.
pub fn brute_gb_statistic(g: &GMap, n: u32) -> HashMap<TrialState, f64> {
    let cw = conditional_weights(g, n);
    cw.iter()
        .map(|(x, _)| {
            let t = wald_f64(x).abs();
            let p: f64 = cw
                .iter()
                .filter(|(y, _)| y.successes() == x.successes() && (wald_f64(y).abs() >= t || close(wald_f64(y).abs(), t)))
                .map(|p| p.1)
                .sum();
            (*x, p)
        })
        .collect()
}

pub fn brute_gb(g: &GMap, n: u32, alpha: f64) -> BruteRule {
    let cw = conditional_weights(g, n);
    let tgb = brute_gb_statistic(g, n);
    let mut reject: HashMap<TrialState, bool> = cw.iter().map(|(x, _)| (*x, false)).collect();
    let ambiguous = grow(&cw, n, &|x| -tgb[x], alpha, &mut reject);
    BruteRule { reject, ambiguous }
}

/// All states after burn-in with `2b ≤ t < n`, the decision points of a table.
pub fn decision_states(n: u32, b: u32) -> Vec<TrialState> {
    let mut v = Vec::new();
    for t in 2 * b..n {
        for n_c in b..=t - b {
            let n_d = t - n_c;
            for s_c in 0..=n_c {
                for s_d in 0..=n_d {
                    v.push(TrialState::new(s_c, s_d, n_c, n_d));
                }
            }
        }
    }
    v
}

/// Maximum of `Σ g·reward` over every deterministic table with actions `{1−p, ½, p}`.
pub fn brute_best_table(n: u32, b: u32, p: f64, reward: &dyn Fn(&TrialState) -> f64) -> f64 {
    let states = decision_states(n, b);
    let k = states.len() as u32;
    let mut best = f64::NEG_INFINITY;
    let actions = [1.0 - p, 0.5, p];
    for code in 0..3u64.pow(k) {
        let mut c = code;
        let mut table = HashMap::new();
        for x in &states {
            table.insert(*x, actions[(c % 3) as usize]);
            c /= 3;
        }
        let g = enumerate_g(&|x| table[x], n, b);
        let v: f64 = g.iter().map(|(x, w)| w * reward(x)).sum();
        best = best.max(v);
    }
    best
}

/// Chi-square upper-tail p-value of observed counts against expected probabilities,
/// pooling cells with expected count below 5.
pub fn chi_square_p(observed: &[u64], probs: &[f64]) -> f64 {
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    let total: u64 = observed.iter().sum();
    let mut cells: Vec<(f64, f64)> = Vec::new();
    let mut pooled = (0.0, 0.0);
    for (&o, &p) in observed.iter().zip(probs) {
        let e = p * total as f64;
        if e < 5.0 {
            pooled.0 += o as f64;
            pooled.1 += e;
        } else {
            cells.push((o as f64, e));
        }
    }
    if pooled.1 > 0.0 {
        cells.push(pooled);
    }
    let stat: f64 = cells.iter().map(|(o, e)| (o - e) * (o - e) / e).sum();
    let df = (cells.len() - 1) as f64;
    1.0 - ChiSquared::new(df).unwrap().cdf(stat)
}

/// Two-sample Kolmogorov–Smirnov p-value (asymptotic Kolmogorov distribution).
pub fn ks_two_sample_p(a: &mut [f64], b: &mut [f64]) -> f64 {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len(), b.len());
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < n && j < m {
        let v = a[i].min(b[j]);
        while i < n && a[i] <= v {
            i += 1;
        }
        while j < m && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let en = ((n * m) as f64 / (n + m) as f64).sqrt();
    let lambda = (en + 0.12 + 0.11 / en) * d;
    let mut p = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        p += 2.0 * (-1f64).powi(k - 1) * (-2.0 * kf * kf * lambda * lambda).exp();
    }
    p.clamp(0.0, 1.0)
}
