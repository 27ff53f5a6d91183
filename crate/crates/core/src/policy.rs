//! Allocation policies: the probability that the next participant goes to control.

use crate::error::{Error, Result};
use crate::numerics::beta_greater_pair;
use crate::state_space::{LayerIndex, TrialState};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Anything that assigns a control-allocation probability to a state.
///
/// The path engine only needs this; [`Policy`] is the production
/// implementation and tests plug in their own.
pub trait AllocationRule: Sync {
    fn prob(&self, x: &TrialState) -> Result<f64>;
}

impl<F: Fn(&TrialState) -> f64 + Sync> AllocationRule for F {
    fn prob(&self, x: &TrialState) -> Result<f64> {
        Ok(self(x))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum PolicyKind {
    EqualAllocation,
    DbcdNeyman { gamma: f64 },
    TemperedDbcdNeyman { gamma: f64 },
    BayesianRar,
    CmdpTable(Arc<PolicyTable>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Policy {
    pub kind: PolicyKind,
    pub n: u32,
    pub burn_in: u32,
}

/// Lower and upper clip applied to DBCD allocation probabilities.
pub const DBCD_CLIP: (f64, f64) = (0.01, 0.99);

impl Policy {
    pub fn new(kind: PolicyKind, n: u32, burn_in: u32) -> Result<Self> {
        if 2 * burn_in > n {
            return Err(Error::Config(format!("burn-in {burn_in} per arm exceeds horizon {n}")));
        }
        match &kind {
            PolicyKind::DbcdNeyman { gamma } | PolicyKind::TemperedDbcdNeyman { gamma } => {
                if !(gamma.is_finite() && *gamma >= 0.0) {
                    return Err(Error::Config(format!("gamma must be a nonnegative number, got {gamma}")));
                }
                if burn_in == 0 {
                    return Err(Error::Config("DBCD needs a burn-in of at least one per arm".into()));
                }
            }
            PolicyKind::CmdpTable(t) => {
                if t.n != n || t.burn_in != burn_in {
                    return Err(Error::Config(format!(
                        "policy table is for n={}, b={} but n={n}, b={burn_in} was requested",
                        t.n, t.burn_in
                    )));
                }
            }
            _ => {}
        }
        Ok(Policy { kind, n, burn_in })
    }

    pub fn is_equal_allocation(&self) -> bool {
        matches!(self.kind, PolicyKind::EqualAllocation)
    }

    /// Arm-swap symmetric by construction (CMDP tables generally are not).
    pub fn is_symmetric(&self) -> bool {
        !matches!(self.kind, PolicyKind::CmdpTable(_))
    }

    /// Short descriptor used in file headers, e.g. `dbcd_neyman(gamma=2)`.
    pub fn descriptor(&self) -> String {
        match &self.kind {
            PolicyKind::EqualAllocation => "equal_allocation".into(),
            PolicyKind::DbcdNeyman { gamma } => format!("dbcd_neyman(gamma={gamma})"),
            PolicyKind::TemperedDbcdNeyman { gamma } => format!("tempered_dbcd_neyman(gamma={gamma})"),
            PolicyKind::BayesianRar => "bayesian_rar".into(),
            PolicyKind::CmdpTable(t) => format!("cmdp_table(p={})", t.p),
        }
    }

    /// Probability of allocating the next participant to control.
    ///
    /// During burn-in the arms alternate, starting with control. Equal
    /// allocation reports ½; its exact path weights come from the closed form
    /// in the path engine, and simulation realizes it with permuted blocks.
    pub fn alloc_prob(&self, x: &TrialState) -> Result<f64> {
        let t = x.epoch();
        if t < 2 * self.burn_in {
            return Ok(if t.is_multiple_of(2) { 1.0 } else { 0.0 });
        }
        Ok(match &self.kind {
            PolicyKind::EqualAllocation => 0.5,
            PolicyKind::DbcdNeyman { gamma } => dbcd_prob(x, *gamma)?,
            PolicyKind::TemperedDbcdNeyman { gamma } => tempered_dbcd_prob(x, *gamma)?,
            PolicyKind::BayesianRar => brar_prob(x, self.n),
            PolicyKind::CmdpTable(table) => table.prob(x)?,
        })
    }
}

impl AllocationRule for Policy {
    fn prob(&self, x: &TrialState) -> Result<f64> {
        self.alloc_prob(x)
    }
}

/// Neyman allocation proportion for control.
pub fn neyman_target(theta_c: f64, theta_d: f64) -> Result<f64> {
    if !(theta_c > 0.0 && theta_c < 1.0 && theta_d > 0.0 && theta_d < 1.0) {
        return Err(Error::Domain(format!("neyman_target({theta_c}, {theta_d})")));
    }
    let sc = (theta_c * (1.0 - theta_c)).sqrt();
    let sd = (theta_d * (1.0 - theta_d)).sqrt();
    Ok(sc / (sc + sd))
}

/// Shrunk success-rate estimate `(s + ½) / (n + 1)`.
pub fn shrunk_estimate(s: u32, n: u32) -> f64 {
    (s as f64 + 0.5) / (n as f64 + 1.0)
}

/// Hu–Zhang allocation function `h(ρ, r)`.
pub fn dbcd_allocation(rho: f64, r: f64, gamma: f64) -> f64 {
    let a = rho * (rho / r).powf(gamma);
    let b = (1.0 - rho) * ((1.0 - rho) / (1.0 - r)).powf(gamma);
    a / (a + b)
}

pub fn dbcd_prob(x: &TrialState, gamma: f64) -> Result<f64> {
    if x.n_c == 0 || x.n_d == 0 {
        return Err(Error::Domain(format!("DBCD needs both arms observed, got {x}")));
    }
    let rho = neyman_target(shrunk_estimate(x.s_c, x.n_c), shrunk_estimate(x.s_d, x.n_d))?;
    let r = x.n_c as f64 / x.epoch() as f64;
    Ok(dbcd_allocation(rho, r, gamma).clamp(DBCD_CLIP.0, DBCD_CLIP.1))
}

pub fn tempered_dbcd_prob(x: &TrialState, gamma: f64) -> Result<f64> {
    let q = dbcd_prob(x, gamma)?;
    let tc = shrunk_estimate(x.s_c, x.n_c);
    let td = shrunk_estimate(x.s_d, x.n_d);
    Ok(if (q > 0.5 && tc > td) || (q < 0.5 && td > tc) { q } else { 0.5 })
}

/// Power-tuned posterior probability of control being better (uniform priors).
///
/// The exponent is `(t+1)/(2n)`, with `t+1` the position of the participant
/// being allocated.
pub fn brar_prob(x: &TrialState, n: u32) -> f64 {
    let t = x.epoch();
    if t == 0 {
        return 0.5;
    }
    let (p, p_bar) = beta_greater_pair(x.s_c + 1, x.f_c() + 1, x.s_d + 1, x.f_d() + 1);
    let e = (t + 1) as f64 / (2.0 * n as f64);
    tuned_ratio(p, p_bar, e)
}

/// `P^e / (P^e + (1−P)^e)` evaluated through the ratio of the smaller tail.
///
/// Written so that exchanging `p` and `p_bar` yields exactly `1 − q`.
fn tuned_ratio(p: f64, p_bar: f64, e: f64) -> f64 {
    if p >= p_bar {
        1.0 / (1.0 + (p_bar / p).powf(e))
    } else {
        1.0 - tuned_ratio(p_bar, p, e)
    }
}

/// Optimized deterministic table of actions drawn from `{1−p, ½, p}`.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyTable {
    pub n: u32,
    pub burn_in: u32,
    pub p: f64,
    /// `layers[t]` for `t < n`; `None` for burn-in layers.
    pub layers: Vec<Option<Vec<u8>>>,
    index: Vec<LayerIndex>,
}

/// Action codes in the serialized table.
pub const ACTION_LOW: u8 = 0;
pub const ACTION_HALF: u8 = 1;
pub const ACTION_HIGH: u8 = 2;

impl PolicyTable {
    pub fn new(n: u32, burn_in: u32, p: f64, layers: Vec<Option<Vec<u8>>>) -> Result<Self> {
        if !(0.5..=1.0).contains(&p) {
            return Err(Error::Config(format!("p must lie in [0.5, 1], got {p}")));
        }
        if layers.len() != n as usize {
            return Err(Error::Format(format!("expected {n} layers, found {}", layers.len())));
        }
        let index: Vec<LayerIndex> = (0..n).map(|t| LayerIndex::new(t, burn_in)).collect();
        for (t, l) in layers.iter().enumerate() {
            match l {
                None if (t as u32) < 2 * burn_in => {}
                Some(codes) if (t as u32) >= 2 * burn_in => {
                    if codes.len() != index[t].len() {
                        return Err(Error::Format(format!(
                            "layer {t}: expected {} entries, found {}",
                            index[t].len(),
                            codes.len()
                        )));
                    }
                    if codes.iter().any(|&c| c > ACTION_HIGH) {
                        return Err(Error::Format(format!("layer {t}: action code out of range")));
                    }
                }
                _ => return Err(Error::Format(format!("layer {t}: burn-in sentinel misplaced"))),
            }
        }
        Ok(PolicyTable { n, burn_in, p, layers, index })
    }

    /// Table with the ½ action everywhere after burn-in.
    pub fn uniform(n: u32, burn_in: u32, p: f64) -> Result<Self> {
        let layers = (0..n)
            .map(|t| (t >= 2 * burn_in).then(|| vec![ACTION_HALF; LayerIndex::new(t, burn_in).len()]))
            .collect();
        PolicyTable::new(n, burn_in, p, layers)
    }

    pub fn action_prob(&self, code: u8) -> f64 {
        match code {
            ACTION_LOW => 1.0 - self.p,
            ACTION_HALF => 0.5,
            _ => self.p,
        }
    }

    pub fn layer_index(&self, t: u32) -> &LayerIndex {
        &self.index[t as usize]
    }

    pub fn prob(&self, x: &TrialState) -> Result<f64> {
        let t = x.epoch() as usize;
        let codes = self
            .layers
            .get(t)
            .and_then(|l| l.as_ref())
            .ok_or_else(|| Error::Inadmissible(format!("{x}: no table entry at epoch {t}")))?;
        let i = self.index[t].index(x)?;
        Ok(self.action_prob(codes[i]))
    }
}

impl AllocationRule for PolicyTable {
    fn prob(&self, x: &TrialState) -> Result<f64> {
        PolicyTable::prob(self, x)
    }
}

/// On-disk form of a [`PolicyTable`].
#[derive(Serialize, Deserialize)]
pub struct PolicyTableDoc {
    pub n: u32,
    pub burn_in: u32,
    pub p: f64,
    pub layers: Vec<Option<Vec<u8>>>,
}

impl From<&PolicyTable> for PolicyTableDoc {
    fn from(t: &PolicyTable) -> Self {
        PolicyTableDoc { n: t.n, burn_in: t.burn_in, p: t.p, layers: t.layers.clone() }
    }
}

impl TryFrom<PolicyTableDoc> for PolicyTable {
    type Error = Error;
    fn try_from(d: PolicyTableDoc) -> Result<Self> {
        PolicyTable::new(d.n, d.burn_in, d.p, d.layers)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn neyman_examples() {
        assert_eq!(neyman_target(0.3, 0.3).unwrap(), 0.5);
        assert_eq!(format!("{:.2}", neyman_target(0.5, 0.52).unwrap()), "0.50");
        assert_eq!(format!("{:.2}", neyman_target(0.97, 0.99).unwrap()), "0.63");
        assert!(neyman_target(0.0, 0.5).is_err());
    }

    #[test]
    fn dbcd_fixed_points() {
        for &rho in &[0.2, 0.5, 0.63] {
            assert!((dbcd_allocation(rho, rho, 2.0) - rho).abs() < 1e-15);
            assert!((dbcd_allocation(rho, 0.3, 0.0) - rho).abs() < 1e-15);
        }
    }

    #[test]
    fn tempering_branches() {
        let x = TrialState::new(3, 3, 6, 6);
        assert_eq!(tempered_dbcd_prob(&x, 2.0).unwrap(), 0.5);
    }

    #[test]
    fn brar_examples() {
        assert_eq!(brar_prob(&TrialState::default(), 10), 0.5);
        let q = brar_prob(&TrialState::new(1, 0, 1, 1), 4);
        let p: f64 = 5.0 / 6.0;
        let want = p.powf(0.375) / (p.powf(0.375) + (1.0 - p).powf(0.375));
        assert!((q - want).abs() < 1e-13);
        assert!((want - 0.646_465_605_290_224_6).abs() < 1e-12);
    }

    #[test]
    fn burn_in_alternates() {
        let pol = Policy::new(PolicyKind::BayesianRar, 20, 2).unwrap();
        assert_eq!(pol.alloc_prob(&TrialState::default()).unwrap(), 1.0);
        assert_eq!(pol.alloc_prob(&TrialState::new(0, 0, 1, 0)).unwrap(), 0.0);
        assert_eq!(pol.alloc_prob(&TrialState::new(0, 0, 2, 2)).unwrap(), 0.5);
    }

    #[test]
    fn table_lookup() {
        let t = Arc::new(PolicyTable::uniform(6, 1, 0.95).unwrap());
        let pol = Policy::new(PolicyKind::CmdpTable(t.clone()), 6, 1).unwrap();
        assert_eq!(pol.alloc_prob(&TrialState::new(0, 1, 1, 1)).unwrap(), 0.5);
        assert!(t.prob(&TrialState::new(0, 0, 1, 0)).is_err());
        assert!(Policy::new(PolicyKind::CmdpTable(t), 8, 1).is_err());
    }
}
