//! Exact operating characteristics: rejection rates and patient benefit.

use crate::error::{Error, Result};
use crate::exact_tests::{TestKind, TestRule};
use crate::path_engine::{PathWeightTable, WeightedFunctional};
use serde::{Deserialize, Serialize};

/// Which success-rate pairs to evaluate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ThetaSpec {
    /// `θ_C = θ_D` at `count` equally spaced points of `[lo, hi]`.
    NullDiagonal { lo: f64, hi: f64, count: usize },
    /// For each control rate `θ̃`, `θ_D` runs from `θ̃` to 1 in steps of `step`.
    Curves { theta_c: Vec<f64>, step: f64 },
    List { points: Vec<(f64, f64)> },
}

impl ThetaSpec {
    pub fn points(&self) -> Result<Vec<(f64, f64)>> {
        let pts: Vec<(f64, f64)> = match self {
            ThetaSpec::NullDiagonal { lo, hi, count } => match count {
                0 => vec![],
                1 => vec![(*lo, *lo)],
                c => (0..*c)
                    .map(|i| {
                        let v = lo + (hi - lo) * i as f64 / (c - 1) as f64;
                        (v, v)
                    })
                    .collect(),
            },
            ThetaSpec::Curves { theta_c, step } => {
                if !(*step > 0.0) {
                    return Err(Error::Config(format!("curve step must be positive, got {step}")));
                }
                let mut v = Vec::new();
                for &tc in theta_c {
                    let m = ((1.0 - tc) / step + 1e-9).floor() as usize;
                    v.extend((0..=m).map(|k| (tc, (tc + k as f64 * step).min(1.0))));
                }
                v
            }
            ThetaSpec::List { points } => points.clone(),
        };
        if pts.is_empty() {
            return Err(Error::Config("empty θ grid".into()));
        }
        for &(a, b) in &pts {
            if !((0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&b)) {
                return Err(Error::Config(format!("θ = ({a}, {b}) outside [0,1]²")));
            }
        }
        Ok(pts)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OcPoint {
    pub theta_c: f64,
    pub theta_d: f64,
    pub rejection_rate: f64,
    pub patient_benefit: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OcProfile {
    pub policy: String,
    pub test: TestKind,
    pub n: u32,
    pub alpha: f64,
    pub points: Vec<OcPoint>,
}

/// Precomputed `f ∘ g` vectors for one design and one test.
pub struct OcEvaluator {
    reject: WeightedFunctional,
    alloc_c: WeightedFunctional,
    alloc_d: WeightedFunctional,
}

impl OcEvaluator {
    pub fn new(g: &PathWeightTable, rule: &TestRule) -> Result<Self> {
        let f: Vec<f64> = rule.reject_indicator(g)?.into_iter().map(|r| r as u8 as f64).collect();
        let n = g.n as f64;
        let fc: Vec<f64> = g.states().map(|x| x.n_c as f64 / n).collect();
        let fd: Vec<f64> = g.states().map(|x| x.n_d as f64 / n).collect();
        Ok(OcEvaluator {
            reject: WeightedFunctional::new(&f, g)?,
            alloc_c: WeightedFunctional::new(&fc, g)?,
            alloc_d: WeightedFunctional::new(&fd, g)?,
        })
    }

    pub fn rejection_rate(&self, theta: (f64, f64)) -> f64 {
        self.reject.eval(theta).clamp(0.0, 1.0)
    }

    pub fn patient_benefit(&self, theta: (f64, f64)) -> f64 {
        benefit_from(&self.alloc_c, &self.alloc_d, theta)
    }

    pub fn point(&self, theta: (f64, f64)) -> OcPoint {
        OcPoint {
            theta_c: theta.0,
            theta_d: theta.1,
            rejection_rate: self.rejection_rate(theta),
            patient_benefit: self.patient_benefit(theta),
        }
    }
}

fn benefit_from(c: &WeightedFunctional, d: &WeightedFunctional, theta: (f64, f64)) -> f64 {
    use std::cmp::Ordering::*;
    match theta.0.total_cmp(&theta.1) {
        Equal => 0.5,
        Greater => c.eval(theta).clamp(0.0, 1.0),
        Less => d.eval(theta).clamp(0.0, 1.0),
    }
}

pub fn rejection_rate(g: &PathWeightTable, rule: &TestRule, theta: (f64, f64)) -> Result<f64> {
    let f: Vec<f64> = rule.reject_indicator(g)?.into_iter().map(|r| r as u8 as f64).collect();
    Ok(WeightedFunctional::new(&f, g)?.eval(theta).clamp(0.0, 1.0))
}

/// Expected fraction of participants on the better arm (½ under the null).
pub fn patient_benefit(g: &PathWeightTable, theta: (f64, f64)) -> Result<f64> {
    let n = g.n as f64;
    let fc: Vec<f64> = g.states().map(|x| x.n_c as f64 / n).collect();
    let fd: Vec<f64> = g.states().map(|x| x.n_d as f64 / n).collect();
    Ok(benefit_from(&WeightedFunctional::new(&fc, g)?, &WeightedFunctional::new(&fd, g)?, theta))
}

pub fn profile(g: &PathWeightTable, rule: &TestRule, spec: &ThetaSpec) -> Result<OcProfile> {
    let pts = spec.points()?;
    let ev = OcEvaluator::new(g, rule)?;
    Ok(OcProfile {
        policy: g.descriptor.clone(),
        test: rule.kind(),
        n: g.n,
        alpha: rule.alpha(),
        points: pts.into_iter().map(|t| ev.point(t)).collect(),
    })
}

/// Pointwise `a − b` of two profiles over the same grid.
pub fn profile_difference(a: &OcProfile, b: &OcProfile) -> Result<Vec<OcPoint>> {
    if a.points.len() != b.points.len() {
        return Err(Error::Domain("profiles are over different grids".into()));
    }
    a.points
        .iter()
        .zip(&b.points)
        .map(|(p, q)| {
            if p.theta_c != q.theta_c || p.theta_d != q.theta_d {
                return Err(Error::Domain("profiles are over different grids".into()));
            }
            Ok(OcPoint {
                theta_c: p.theta_c,
                theta_d: p.theta_d,
                rejection_rate: p.rejection_rate - q.rejection_rate,
                patient_benefit: p.patient_benefit - q.patient_benefit,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::path_engine::equal_allocation_g;

    #[test]
    fn grids() {
        let p = ThetaSpec::NullDiagonal { lo: 0.0, hi: 1.0, count: 21 }.points().unwrap();
        assert_eq!(p.len(), 21);
        assert!((p[20].0 - 1.0).abs() < 1e-15);
        let c = ThetaSpec::Curves { theta_c: vec![0.5], step: 0.1 }.points().unwrap();
        assert_eq!(c.len(), 6);
        assert!(ThetaSpec::List { points: vec![] }.points().is_err());
    }

    #[test]
    fn equal_allocation_benefit_is_half() {
        let g = equal_allocation_g(20, 2).unwrap();
        for th in [(0.1, 0.4), (0.7, 0.2), (0.5, 0.5)] {
            assert!((patient_benefit(&g, th).unwrap() - 0.5).abs() < 1e-12);
        }
    }
}
