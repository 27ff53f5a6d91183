//! Constrained MDP designs: allocation tables that maximize Bayesian average
//! power under type I error and patient-benefit constraints.
//!
//! Terminal probabilities under every prior used here factor as
//! `g(x) · w(x)`, so each operating characteristic is a terminal reward
//! summed against `g`. The Lagrangian of the program is therefore a single
//! terminal reward, maximized over deterministic tables by backward
//! recursion. Multipliers are updated by projected subgradient steps.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{beta_interval_log_mass, binomial_row, log_beta, LogWeight, NeumaierSum};
use crate::path_engine::{equal_allocation_g, forward_g, log_likelihood_weight, PathWeightTable};
use crate::policy::{PolicyTable, ACTION_HALF, ACTION_HIGH, ACTION_LOW};
use crate::state_space::{LayerIndex, TrialState};
use crate::wald::{wald_unchecked, z_critical};

/// A prior over `(θ_C, θ_D)`, used through its terminal weight `∫ θ-likelihood`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Measure {
    /// Uniform on the unit square.
    AltUniform,
    /// Uniform on the diagonal `θ_C = θ_D`.
    NullUniform,
    Point { theta: f64 },
    Rectangle(Rectangle),
}

/// Uniform prior on `[l_c, u_c] × [l_d, u_d]` with interior-disjoint sides.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rectangle {
    pub l_c: f64,
    pub u_c: f64,
    pub l_d: f64,
    pub u_d: f64,
}

impl Rectangle {
    pub fn new(c: (f64, f64), d: (f64, f64)) -> Result<Self> {
        let r = Rectangle { l_c: c.0, u_c: c.1, l_d: d.0, u_d: d.1 };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        for (l, u) in [(self.l_c, self.u_c), (self.l_d, self.u_d)] {
            if !(0.0 <= l && l < u && u <= 1.0) {
                return Err(Error::Config(format!("degenerate rectangle side [{l}, {u}]")));
            }
        }
        if !(self.u_c <= self.l_d || self.u_d <= self.l_c) {
            return Err(Error::Config(format!("rectangle sides overlap: {self:?}")));
        }
        Ok(())
    }

    /// `true` if developmental has the higher success rates throughout.
    pub fn developmental_better(&self) -> bool {
        self.l_d >= self.u_c
    }
}

/// Interval endpoints combined into benefit rectangles by default.
pub const BENEFIT_INTERVALS: [(f64, f64); 6] =
    [(0.0, 0.05), (0.05, 0.1), (0.1, 0.25), (0.25, 0.5), (0.5, 0.75), (0.75, 1.0)];

/// All ordered pairs of distinct intervals from [`BENEFIT_INTERVALS`], as
/// (control side, developmental side).
pub fn default_rectangles() -> Vec<Rectangle> {
    let mut v = Vec::new();
    for &c in &BENEFIT_INTERVALS {
        for &d in &BENEFIT_INTERVALS {
            if c != d {
                v.push(Rectangle { l_c: c.0, u_c: c.1, l_d: d.0, u_d: d.1 });
            }
        }
    }
    v
}

/// `ln w(x)` for a terminal state, where the measure's terminal probability is `g(x) w(x)`.
pub fn measure_log_weight(x: &TrialState, m: &Measure) -> Result<LogWeight> {
    let lb = |s: u32, f: u32| log_beta(s as f64 + 1.0, f as f64 + 1.0);
    Ok(LogWeight(match m {
        Measure::AltUniform => lb(x.s_c, x.f_c())? + lb(x.s_d, x.f_d())?,
        Measure::NullUniform => lb(x.successes(), x.f_c() + x.f_d())?,
        Measure::Point { theta } => {
            if !(0.0..=1.0).contains(theta) {
                return Err(Error::Domain(format!("point mass at θ = {theta}")));
            }
            log_likelihood_weight(x, (*theta, *theta))
        }
        Measure::Rectangle(r) => {
            r.validate().map_err(|e| Error::Domain(e.to_string()))?;
            arm_interval_log_weight(x.s_c, x.f_c(), r.l_c, r.u_c)?
                + arm_interval_log_weight(x.s_d, x.f_d(), r.l_d, r.u_d)?
        }
    }))
}

fn arm_interval_log_weight(s: u32, f: u32, l: f64, u: f64) -> Result<f64> {
    let (a, b) = (s as f64 + 1.0, f as f64 + 1.0);
    Ok(beta_interval_log_mass(l, u, a, b)? - (u - l).ln() + log_beta(a, b)?)
}

/// Multiplier step schedule and stopping rule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DualSettings {
    pub max_iter: usize,
    /// Step size at iteration `k` is `eta0 / √k`.
    pub eta0: f64,
    /// Absolute slack allowed on every constraint.
    pub tolerance: f64,
    /// Divide the subgradient by its Euclidean norm before stepping.
    pub normalized: bool,
    /// Stop once a feasible iterate is within this of the best dual bound.
    pub gap_tolerance: f64,
}

impl Default for DualSettings {
    fn default() -> Self {
        DualSettings { max_iter: 300, eta0: 1.0, tolerance: 5e-4, normalized: true, gap_tolerance: 1e-4 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CmdpSpec {
    pub n: u32,
    pub burn_in: u32,
    /// Maximum randomized allocation rate; actions are `{1−p, ½, p}`.
    pub p: f64,
    /// Level of the embedded two-sided asymptotic Wald test.
    pub alpha: f64,
    /// Bound on the average type I error under [`Measure::NullUniform`].
    pub avg_type1: Option<f64>,
    /// Bound on the type I error at every point of `null_grid`.
    pub pointwise_type1: Option<f64>,
    pub null_grid: Vec<f64>,
    /// Rectangles on which the expected fraction on the better arm must reach `benefit_floor`.
    pub rectangles: Vec<Rectangle>,
    pub benefit_floor: f64,
    pub dual: DualSettings,
}

impl Default for CmdpSpec {
    fn default() -> Self {
        CmdpSpec {
            n: 50,
            burn_in: 6,
            p: 0.95,
            alpha: 0.05,
            avg_type1: Some(0.045),
            pointwise_type1: Some(0.05),
            null_grid: (0..=20).map(|i| i as f64 / 20.0).collect(),
            rectangles: vec![],
            benefit_floor: 0.5,
            dual: DualSettings::default(),
        }
    }
}

impl CmdpSpec {
    /// Power-maximizing program with the default constraints.
    pub fn power(n: u32, burn_in: u32) -> Self {
        CmdpSpec { n, burn_in, ..Default::default() }
    }

    /// [`CmdpSpec::power`] plus patient-benefit floors on [`default_rectangles`].
    pub fn benefit_and_power(n: u32, burn_in: u32) -> Self {
        CmdpSpec { rectangles: default_rectangles(), ..CmdpSpec::power(n, burn_in) }
    }

    pub fn validate(&self) -> Result<()> {
        if 2 * self.burn_in > self.n {
            return Err(Error::Config(format!("burn-in {} per arm exceeds horizon {}", self.burn_in, self.n)));
        }
        if !(0.5..=1.0).contains(&self.p) {
            return Err(Error::Config(format!("p must lie in [0.5, 1], got {}", self.p)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if let Some(a2) = self.pointwise_type1 {
            if a2 > self.alpha {
                return Err(Error::Config(format!("pointwise bound {a2} exceeds the test level {}", self.alpha)));
            }
        }
        if let Some(a1) = self.avg_type1 {
            if !(0.0..=1.0).contains(&a1) {
                return Err(Error::Config(format!("average type I bound {a1} outside [0, 1]")));
            }
        }
        if self.null_grid.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(Error::Config("null grid point outside [0, 1]".into()));
        }
        for r in &self.rectangles {
            r.validate()?;
        }
        let d = &self.dual;
        if d.max_iter == 0 || !(d.eta0 > 0.0) || !(d.tolerance >= 0.0) || !(d.gap_tolerance >= 0.0) {
            return Err(Error::Config(format!("invalid dual settings {d:?}")));
        }
        Ok(())
    }

    /// Constraints in the order used for multipliers and reports.
    pub fn constraints(&self) -> Vec<Constraint> {
        let mut v = Vec::new();
        if let Some(a) = self.avg_type1 {
            v.push(Constraint { label: "average_type1".into(), measure: Measure::NullUniform, bound: a });
        }
        if let Some(a) = self.pointwise_type1 {
            for &t in &self.null_grid {
                v.push(Constraint { label: format!("type1({t})"), measure: Measure::Point { theta: t }, bound: a });
            }
        }
        for r in &self.rectangles {
            v.push(Constraint {
                label: format!("benefit([{},{}]x[{},{}])", r.l_c, r.u_c, r.l_d, r.u_d),
                measure: Measure::Rectangle(*r),
                bound: self.benefit_floor,
            });
        }
        v
    }
}

/// One constraint. Type I constraints (null and point measures) read
/// `value ≤ bound`; benefit constraints (rectangles) read `value ≥ bound`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub label: String,
    pub measure: Measure,
    pub bound: f64,
}

impl Constraint {
    fn is_benefit(&self) -> bool {
        matches!(self.measure, Measure::Rectangle(_))
    }

    /// Positive when violated.
    pub fn violation(&self, value: f64) -> f64 {
        if self.is_benefit() {
            self.bound - value
        } else {
            value - self.bound
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintValue {
    pub label: String,
    pub value: f64,
    pub bound: f64,
    pub violation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    /// Bayesian average power of the embedded test.
    pub objective: f64,
    pub constraints: Vec<ConstraintValue>,
    pub max_violation: f64,
    pub feasible: bool,
}

impl AuditReport {
    pub fn value(&self, label: &str) -> Option<f64> {
        self.constraints.iter().find(|c| c.label == label).map(|c| c.value)
    }
}

/// Multipliers and per-iteration record of the dual solver.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DualState {
    pub multipliers: Vec<f64>,
    pub history: Vec<DualIterate>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualIterate {
    pub objective: f64,
    /// `L(λ)`, an upper bound on the best feasible objective.
    pub dual_value: f64,
    pub max_violation: f64,
    pub feasible: bool,
    /// Multipliers `λ` at which `dual_value` was evaluated.
    pub multipliers: Vec<f64>,
}

impl DualState {
    /// Smallest dual value seen so far, per iteration.
    pub fn best_dual_path(&self) -> Vec<f64> {
        let mut best = f64::INFINITY;
        self.history
            .iter()
            .map(|h| {
                best = best.min(h.dual_value);
                best
            })
            .collect()
    }

    /// Upper bound on the objective of any policy whose constraint
    /// violations are all at most `tolerance`: `min_k L(λ_k) + tolerance · Σ λ_k`.
    pub fn relaxed_bound(&self, tolerance: f64) -> f64 {
        self.history
            .iter()
            .map(|h| h.dual_value + tolerance * h.multipliers.iter().sum::<f64>())
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Clone, Debug)]
pub struct CmdpSolution {
    pub table: Arc<PolicyTable>,
    pub audit: AuditReport,
    pub dual: DualState,
    /// No iterate met every constraint; `table` is the least violating one.
    pub infeasible_at_tolerance: bool,
    /// Equal allocation audited against the same constraints, when `n` is even.
    pub baseline: Option<AuditReport>,
}

/// Terminal weights of every measure, factored per arm where possible.
struct TerminalWeights {
    layer: LayerIndex,
    n: u32,
    reject: Vec<bool>,
    /// `B(s+1, m−s+1)` at triangular index `(m, s)`.
    alt: Vec<f64>,
    per_constraint: Vec<ConstraintWeight>,
}

enum ConstraintWeight {
    /// Depends on the total success count only.
    Total(Vec<f64>),
    /// Product of per-arm factors, times the fraction on `better`.
    Rect { c: Vec<f64>, d: Vec<f64>, developmental: bool },
}

fn tri(m: u32, s: u32) -> usize {
    (m as usize * (m as usize + 1)) / 2 + s as usize
}

impl TerminalWeights {
    fn new(spec: &CmdpSpec, constraints: &[Constraint]) -> Result<Self> {
        let n = spec.n;
        let layer = LayerIndex::new(n, spec.burn_in);
        let z = z_critical(spec.alpha)?;
        let reject = layer.states().map(|x| wald_unchecked(&x).value().abs() >= z).collect();
        let per_arm = |f: &dyn Fn(u32, u32) -> Result<f64>| -> Result<Vec<f64>> {
            let mut v = Vec::with_capacity(tri(n + 1, 0));
            for m in 0..=n {
                for s in 0..=m {
                    v.push(f(s, m - s)?);
                }
            }
            Ok(v)
        };
        let alt = per_arm(&|s, f| Ok(log_beta(s as f64 + 1.0, f as f64 + 1.0)?.exp()))?;
        let per_constraint = constraints
            .iter()
            .map(|c| -> Result<ConstraintWeight> {
                Ok(match c.measure {
                    Measure::NullUniform => ConstraintWeight::Total(
                        (0..=n)
                            .map(|s| Ok(log_beta(s as f64 + 1.0, (n - s) as f64 + 1.0)?.exp()))
                            .collect::<Result<_>>()?,
                    ),
                    Measure::Point { theta } => {
                        let x = |s: u32| TrialState::new(s, 0, n, 0);
                        ConstraintWeight::Total((0..=n).map(|s| log_likelihood_weight(&x(s), (theta, theta)).exp()).collect())
                    }
                    Measure::Rectangle(r) => ConstraintWeight::Rect {
                        c: per_arm(&|s, f| Ok(arm_interval_log_weight(s, f, r.l_c, r.u_c)?.exp()))?,
                        d: per_arm(&|s, f| Ok(arm_interval_log_weight(s, f, r.l_d, r.u_d)?.exp()))?,
                        developmental: r.developmental_better(),
                    },
                    Measure::AltUniform => {
                        return Err(Error::Config(format!("{}: the objective measure cannot be a constraint", c.label)))
                    }
                })
            })
            .collect::<Result<_>>()?;
        Ok(TerminalWeights { layer, n, reject, alt, per_constraint })
    }

    /// Constraint integrand at state `x` (index `i`), before sign arrangement.
    #[inline]
    fn integrand(&self, j: usize, i: usize, x: &TrialState) -> f64 {
        match &self.per_constraint[j] {
            ConstraintWeight::Total(w) => {
                if self.reject[i] {
                    w[x.successes() as usize]
                } else {
                    0.0
                }
            }
            ConstraintWeight::Rect { c, d, developmental } => {
                let on_better = if *developmental { x.n_d } else { x.n_c };
                c[tri(x.n_c, x.s_c)] * d[tri(x.n_d, x.s_d)] * on_better as f64 / self.n as f64
            }
        }
    }

    #[inline]
    fn objective(&self, i: usize, x: &TrialState) -> f64 {
        if self.reject[i] {
            self.alt[tri(x.n_c, x.s_c)] * self.alt[tri(x.n_d, x.s_d)]
        } else {
            0.0
        }
    }

    /// `objective − Σ λ_j · (signed integrand_j)`, with benefit integrands negated.
    fn lagrangian_reward(&self, lambda: &[f64], constraints: &[Constraint]) -> Vec<f64> {
        let active: Vec<(usize, f64)> = lambda
            .iter()
            .enumerate()
            .filter(|(_, &l)| l > 0.0)
            .map(|(j, &l)| (j, if constraints[j].is_benefit() { -l } else { l }))
            .collect();
        let states: Vec<TrialState> = self.layer.states().collect();
        states
            .par_iter()
            .enumerate()
            .map(|(i, x)| {
                let mut r = self.objective(i, x);
                for &(j, l) in &active {
                    r -= l * self.integrand(j, i, x);
                }
                r
            })
            .collect()
    }

    fn audit(&self, g: &PathWeightTable, constraints: &[Constraint], tol: f64) -> AuditReport {
        let gl = g.g();
        let states: Vec<TrialState> = self.layer.states().collect();
        let sum = |f: &dyn Fn(usize, &TrialState) -> f64| {
            let mut acc = NeumaierSum::default();
            for (i, x) in states.iter().enumerate() {
                if gl[i] != 0.0 {
                    acc.add(gl[i] * f(i, x));
                }
            }
            acc.total()
        };
        let objective = sum(&|i, x| self.objective(i, x));
        let values: Vec<f64> = (0..constraints.len())
            .into_par_iter()
            .map(|j| sum(&|i, x| self.integrand(j, i, x)))
            .collect();
        report(objective, constraints, &values, tol)
    }
}

fn report(objective: f64, constraints: &[Constraint], values: &[f64], tol: f64) -> AuditReport {
    let cs: Vec<ConstraintValue> = constraints
        .iter()
        .zip(values)
        .map(|(c, &v)| ConstraintValue { label: c.label.clone(), value: v, bound: c.bound, violation: c.violation(v) })
        .collect();
    let max_violation = cs.iter().map(|c| c.violation).fold(f64::NEG_INFINITY, f64::max);
    AuditReport { objective, feasible: cs.iter().all(|c| c.violation <= tol), constraints: cs, max_violation }
}

/// Backward recursion maximizing `Σ g · reward` over tables with actions `{1−p, ½, p}`.
///
/// `reward` is indexed by the terminal layer. Returns the optimal table and
/// its value. Equal continuation values (to a relative `1e−12`) take ½.
pub fn lagrangian_backward(reward: &[f64], spec: &CmdpSpec) -> Result<(PolicyTable, f64)> {
    backward(reward, spec.n, spec.burn_in, spec.p, None)
}

/// `Σ g · reward` for a fixed table, computed backwards.
pub fn evaluate_backward(reward: &[f64], table: &PolicyTable) -> Result<f64> {
    Ok(backward(reward, table.n, table.burn_in, table.p, Some(table))?.1)
}

const TIE_RTOL: f64 = 1e-12;

fn backward(reward: &[f64], n: u32, b: u32, p: f64, fixed: Option<&PolicyTable>) -> Result<(PolicyTable, f64)> {
    if 2 * b > n {
        return Err(Error::Domain(format!("burn-in {b} per arm does not fit horizon {n}")));
    }
    let last = LayerIndex::new(n, b);
    if reward.len() != last.len() {
        return Err(Error::Domain(format!("reward has {} entries, terminal layer has {}", reward.len(), last.len())));
    }
    if let Some((i, _)) = reward.iter().enumerate().find(|(_, r)| !r.is_finite()) {
        return Err(Error::Domain(format!("non-finite reward at {}", last.state(i))));
    }
    let mut layers: Vec<Option<Vec<u8>>> = vec![None; n as usize];
    let mut v = reward.to_vec();
    let mut next = last;
    for t in (2 * b..n).rev() {
        let cur = LayerIndex::new(t, b);
        let blocks: Vec<u32> = cur.nc_range().collect();
        let fixed_codes = fixed.map(|f| f.layers[t as usize].as_deref().expect("post burn-in layer"));
        let out: Vec<(Vec<f64>, Vec<u8>)> = blocks
            .par_iter()
            .map(|&n_c| {
                let n_d = t - n_c;
                let (off, len) = cur.block(n_c);
                let mut vals = Vec::with_capacity(len);
                let mut codes = Vec::with_capacity(len);
                let c_off = next.block(n_c + 1).0;
                let d_off = next.block(n_c).0;
                for s_c in 0..=n_c {
                    for s_d in 0..=n_d {
                        // Successor blocks are (n_c+1, n_d) with rows of n_d+1
                        // and (n_c, n_d+1) with rows of n_d+2.
                        let ic = c_off + (s_c * (n_d + 1) + s_d) as usize;
                        let id = d_off + (s_c * (n_d + 2) + s_d) as usize;
                        let a = v[ic + (n_d + 1) as usize] + v[ic];
                        let bb = v[id + 1] + v[id];
                        let code = match fixed_codes {
                            Some(fc) => fc[off + codes.len()],
                            None => {
                                if (a - bb).abs() <= TIE_RTOL * a.abs().max(bb.abs()) {
                                    ACTION_HALF
                                } else if a > bb {
                                    ACTION_HIGH
                                } else {
                                    ACTION_LOW
                                }
                            }
                        };
                        let q = match code {
                            ACTION_LOW => 1.0 - p,
                            ACTION_HALF => 0.5,
                            _ => p,
                        };
                        vals.push(q * a + (1.0 - q) * bb);
                        codes.push(code);
                    }
                }
                (vals, codes)
            })
            .collect();
        let (vals, codes): (Vec<Vec<f64>>, Vec<Vec<u8>>) = out.into_iter().unzip();
        v = vals.concat();
        layers[t as usize] = Some(codes.concat());
        next = cur;
    }
    // Burn-in leaves C(b, s_c) C(b, s_d) paths into each balanced start state.
    let cb = binomial_row(b as usize);
    let mut value = NeumaierSum::default();
    for (x, vx) in next.states().zip(&v) {
        value.add(cb[x.s_c as usize] * cb[x.s_d as usize] * vx);
    }
    let table = match fixed {
        Some(f) => f.clone(),
        None => PolicyTable::new(n, b, p, layers)?,
    };
    Ok((table, value.total()))
}

/// Audit a table: objective and every constraint of `spec`, from exact path weights.
pub fn audit_policy(table: &PolicyTable, spec: &CmdpSpec) -> Result<AuditReport> {
    spec.validate()?;
    let constraints = spec.constraints();
    let w = TerminalWeights::new(spec, &constraints)?;
    audit_with(&w, table, &constraints, spec.dual.tolerance)
}

/// Audit arbitrary path weights (for example equal allocation) against `spec`.
pub fn audit_weights(g: &PathWeightTable, spec: &CmdpSpec) -> Result<AuditReport> {
    spec.validate()?;
    if g.n != spec.n || g.burn_in != spec.burn_in {
        return Err(Error::Config("path weights and CMDP spec disagree on n or burn-in".into()));
    }
    let constraints = spec.constraints();
    let w = TerminalWeights::new(spec, &constraints)?;
    Ok(w.audit(g, &constraints, spec.dual.tolerance))
}

fn audit_with(w: &TerminalWeights, table: &PolicyTable, constraints: &[Constraint], tol: f64) -> Result<AuditReport> {
    let g = table_weights(table)?;
    Ok(w.audit(&g, constraints, tol))
}

fn table_weights(table: &PolicyTable) -> Result<PathWeightTable> {
    let mut g = forward_g(table, table.n, table.burn_in)?;
    g.p = Some(table.p);
    Ok(g)
}

/// Projected subgradient on the Lagrangian dual, keeping the best feasible table.
pub fn solve_cmdp(spec: &CmdpSpec) -> Result<CmdpSolution> {
    spec.validate()?;
    let constraints = spec.constraints();
    let w = TerminalWeights::new(spec, &constraints)?;
    let tol = spec.dual.tolerance;
    let baseline = if spec.n.is_multiple_of(2) {
        Some(w.audit(&equal_allocation_g(spec.n, spec.burn_in)?, &constraints, tol))
    } else {
        None
    };
    let mut lambda = vec![0.0; constraints.len()];
    let mut state = DualState::default();
    let mut best: Option<(PolicyTable, AuditReport)> = None;
    let mut least_violating: Option<(PolicyTable, AuditReport)> = None;
    let mut best_dual = f64::INFINITY;
    for k in 1..=spec.dual.max_iter {
        let reward = w.lagrangian_reward(&lambda, &constraints);
        let (table, value) = lagrangian_backward(&reward, spec)?;
        let audit = audit_with(&w, &table, &constraints, tol)?;
        // L(λ) = max_π Σ g R + Σ λ_j · (signed bound_j)
        let dual_value = value
            + lambda
                .iter()
                .zip(&constraints)
                .map(|(l, c)| l * if c.is_benefit() { -c.bound } else { c.bound })
                .sum::<f64>();
        best_dual = best_dual.min(dual_value);
        state.history.push(DualIterate {
            objective: audit.objective,
            dual_value,
            max_violation: audit.max_violation,
            feasible: audit.feasible,
            multipliers: lambda.clone(),
        });
        let violations: Vec<f64> = audit.constraints.iter().map(|c| c.violation).collect();
        if audit.feasible {
            if best.as_ref().is_none_or(|(_, a)| audit.objective > a.objective) {
                best = Some((table.clone(), audit.clone()));
            }
        } else if least_violating.as_ref().is_none_or(|(_, a)| audit.max_violation < a.max_violation) {
            least_violating = Some((table.clone(), audit.clone()));
        }
        if let Some((_, a)) = &best {
            if constraints.is_empty() || best_dual - a.objective <= spec.dual.gap_tolerance {
                break;
            }
        }
        let norm = if spec.dual.normalized {
            violations.iter().map(|v| v * v).sum::<f64>().sqrt()
        } else {
            1.0
        };
        if norm == 0.0 {
            break;
        }
        let eta = spec.dual.eta0 / (k as f64).sqrt();
        for (l, v) in lambda.iter_mut().zip(&violations) {
            *l = (*l + eta * v / norm).max(0.0);
        }
    }
    state.multipliers = lambda;
    let (infeasible, (table, audit)) = match best {
        Some(b) => (false, b),
        None => (true, least_violating.expect("at least one iterate")),
    };
    Ok(CmdpSolution { table: Arc::new(table), audit, dual: state, infeasible_at_tolerance: infeasible, baseline })
}
