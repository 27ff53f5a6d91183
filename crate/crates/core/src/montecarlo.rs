//! Trial simulation, permuted blocks and the re-randomization Wald test.
//!
//! Every trial `i` draws from its own ChaCha8 stream (`stream = i`) keyed by
//! the master seed, so results do not depend on how trials are scheduled.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::Policy;
use crate::state_space::{Arm, TrialState};
use crate::wald::wald_unchecked;

/// Name of the generator, recorded next to seeds in outputs.
pub const GENERATOR: &str = "chacha8 (rand_chacha 0.9), stream = trial index";

/// Block size used to realize equal allocation after burn-in.
pub const EA_BLOCK: u32 = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngSeed {
    pub seed: u64,
}

impl RngSeed {
    pub fn new(seed: u64) -> Self {
        RngSeed { seed }
    }

    pub fn generator(&self) -> &'static str {
        GENERATOR
    }

    /// Independent stream for trial `index`.
    pub fn stream(&self, index: u64) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::seed_from_u64(self.seed);
        r.set_stream(index);
        r
    }
}

/// How the `2b` burn-in participants are assigned.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BurnIn {
    /// Control, developmental, control, ... Equal allocation then uses
    /// balanced blocks, so every trial ends with `n/2` per arm as in the
    /// exact design.
    Alternate,
    /// One permuted block of size `2b`. Equal allocation then uses blocks of
    /// [`EA_BLOCK`] with the last one cut off at the horizon. This is the
    /// randomization procedure the re-randomization test conditions on.
    PermutedBlock,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialHistory {
    /// `(arm, success)` per participant, in order.
    pub steps: Vec<(Arm, bool)>,
}

impl TrialHistory {
    pub fn terminal(&self) -> TrialState {
        self.state_after(self.steps.len())
    }

    pub fn state_after(&self, t: usize) -> TrialState {
        let mut x = TrialState::new(0, 0, 0, 0);
        for &(arm, y) in &self.steps[..t] {
            let (s, f) = x.successors(arm);
            x = if y { s } else { f };
        }
        x
    }

    pub fn outcomes(&self) -> Vec<bool> {
        self.steps.iter().map(|s| s.1).collect()
    }

    /// Fraction of the first `t` participants on control, for `t = 1..=n`.
    pub fn running_proportion(&self) -> Vec<f64> {
        let mut on_c = 0u32;
        self.steps
            .iter()
            .enumerate()
            .map(|(i, &(arm, _))| {
                on_c += (arm == Arm::C) as u32;
                on_c as f64 / (i + 1) as f64
            })
            .collect()
    }
}

/// `n` assignments in permuted blocks of size `block`.
///
/// A trailing partial block of even length is balanced; an odd one is a
/// prefix of a permuted balanced block one longer.
pub fn permuted_block_sequence<R: Rng + ?Sized>(n: u32, block: u32, rng: &mut R) -> Result<Vec<Arm>> {
    if block == 0 || block % 2 == 1 {
        return Err(Error::Domain(format!("permuted blocks need an even positive size, got {block}")));
    }
    let mut out = Vec::with_capacity(n as usize);
    let mut left = n;
    while left > 0 {
        let len = left.min(block);
        let full = len + len % 2;
        let mut b: Vec<Arm> = (0..full).map(|i| if i < full / 2 { Arm::C } else { Arm::D }).collect();
        b.shuffle(rng);
        out.extend_from_slice(&b[..len as usize]);
        left -= len;
    }
    Ok(out)
}

/// `n` assignments from permuted balanced blocks of size `block`, the last
/// block cut off after `n` participants.
pub fn truncated_block_sequence<R: Rng + ?Sized>(n: u32, block: u32, rng: &mut R) -> Result<Vec<Arm>> {
    if block == 0 || block % 2 == 1 {
        return Err(Error::Domain(format!("permuted blocks need an even positive size, got {block}")));
    }
    let mut out = Vec::with_capacity((n + block) as usize);
    while out.len() < n as usize {
        let mut b: Vec<Arm> = (0..block).map(|i| if i < block / 2 { Arm::C } else { Arm::D }).collect();
        b.shuffle(rng);
        out.extend(b);
    }
    out.truncate(n as usize);
    Ok(out)
}

fn burn_in_arms<R: Rng + ?Sized>(b: u32, mode: BurnIn, rng: &mut R) -> Result<Vec<Arm>> {
    Ok(match mode {
        BurnIn::Alternate => (0..2 * b).map(|t| if t % 2 == 0 { Arm::C } else { Arm::D }).collect(),
        BurnIn::PermutedBlock => permuted_block_sequence(2 * b, (2 * b).max(2), rng)?,
    })
}

/// Where outcomes come from while running an allocation mechanism.
enum Outcomes<'a> {
    Draw(f64, f64),
    Fixed(&'a [bool]),
}

/// Run the policy's allocation mechanism for `policy.n` participants.
///
/// Equal allocation is realized with permuted blocks of [`EA_BLOCK`] after
/// burn-in; other policies draw each arm from `alloc_prob`.
fn run<R: Rng + ?Sized>(policy: &Policy, burn: BurnIn, outcomes: Outcomes<'_>, rng: &mut R) -> Result<TrialHistory> {
    let n = policy.n;
    let b = policy.burn_in;
    let mut planned = burn_in_arms(b, burn, rng)?;
    if policy.is_equal_allocation() {
        if n % 2 == 1 {
            return Err(Error::Domain(format!("equal allocation needs an even horizon, got {n}")));
        }
        planned.extend(match burn {
            BurnIn::Alternate => permuted_block_sequence(n - 2 * b, EA_BLOCK, rng)?,
            BurnIn::PermutedBlock => truncated_block_sequence(n - 2 * b, EA_BLOCK, rng)?,
        });
    }
    let mut x = TrialState::new(0, 0, 0, 0);
    let mut steps = Vec::with_capacity(n as usize);
    for t in 0..n as usize {
        let arm = match planned.get(t) {
            Some(&a) => a,
            None => {
                let q = policy.alloc_prob(&x)?;
                if rng.random::<f64>() < q {
                    Arm::C
                } else {
                    Arm::D
                }
            }
        };
        let y = match &outcomes {
            Outcomes::Draw(tc, td) => rng.random::<f64>() < if arm == Arm::C { *tc } else { *td },
            Outcomes::Fixed(ys) => ys[t],
        };
        let (s, f) = x.successors(arm);
        x = if y { s } else { f };
        steps.push((arm, y));
    }
    Ok(TrialHistory { steps })
}

fn check_theta(theta: (f64, f64)) -> Result<()> {
    if !((0.0..=1.0).contains(&theta.0) && (0.0..=1.0).contains(&theta.1)) {
        return Err(Error::Domain(format!("θ = ({}, {}) outside [0,1]²", theta.0, theta.1)));
    }
    Ok(())
}

/// One simulated trial drawn from `rng`.
pub fn simulate_with<R: Rng + ?Sized>(policy: &Policy, theta: (f64, f64), burn: BurnIn, rng: &mut R) -> Result<TrialHistory> {
    check_theta(theta)?;
    run(policy, burn, Outcomes::Draw(theta.0, theta.1), rng)
}

/// One simulated trial on stream 0 of `seed`.
pub fn simulate_trial(policy: &Policy, theta: (f64, f64), seed: RngSeed) -> Result<TrialHistory> {
    simulate_with(policy, theta, BurnIn::Alternate, &mut seed.stream(0))
}

/// Terminal states of `sims` independent trials, trial `i` on stream `i`.
pub fn simulate_terminals(policy: &Policy, theta: (f64, f64), sims: u64, seed: RngSeed) -> Result<Vec<TrialState>> {
    check_theta(theta)?;
    (0..sims)
        .into_par_iter()
        .map(|i| Ok(simulate_with(policy, theta, BurnIn::Alternate, &mut seed.stream(i))?.terminal()))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomizationOutcome {
    pub p_value: f64,
    pub reject: bool,
}

/// Re-run the allocation mechanism with `observed`'s outcomes held fixed by position.
pub fn rerandomize<R: Rng + ?Sized>(observed: &TrialHistory, policy: &Policy, rng: &mut R) -> Result<TrialHistory> {
    if observed.steps.len() != policy.n as usize {
        return Err(Error::Domain(format!(
            "history has {} participants, policy horizon is {}",
            observed.steps.len(),
            policy.n
        )));
    }
    run(policy, BurnIn::PermutedBlock, Outcomes::Fixed(&observed.outcomes()), rng)
}

/// Re-randomization Wald test holding the outcome sequence fixed by position.
///
/// Burn-in participants are re-randomized in one permuted block.
pub fn randomization_test<R: Rng + ?Sized>(
    observed: &TrialHistory,
    policy: &Policy,
    reps: u32,
    alpha: f64,
    rng: &mut R,
) -> Result<RandomizationOutcome> {
    if reps < 100 {
        return Err(Error::Domain(format!("at least 100 re-randomizations are needed, got {reps}")));
    }
    let t_obs = wald_unchecked(&observed.terminal()).abs();
    let mut extreme = 0u32;
    for _ in 0..reps {
        let h = rerandomize(observed, policy, rng)?;
        if wald_unchecked(&h.terminal()).abs() >= t_obs {
            extreme += 1;
        }
    }
    let p_value = (1 + extreme) as f64 / (reps + 1) as f64;
    Ok(RandomizationOutcome { p_value, reject: p_value <= alpha })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RejectionEstimate {
    pub rejections: u64,
    pub sims: u64,
    pub reps: u32,
    pub estimate: f64,
    /// Normal-approximation 95% half-width.
    pub half_width: f64,
    pub seed: RngSeed,
}

impl RejectionEstimate {
    pub fn interval(&self) -> (f64, f64) {
        (self.estimate - self.half_width, self.estimate + self.half_width)
    }

    /// `true` if the 95% intervals `self` and `center ± half` intersect.
    pub fn overlaps(&self, center: f64, half: f64) -> bool {
        let (lo, hi) = self.interval();
        lo <= center + half && center - half <= hi
    }
}

/// Rejection rate of the re-randomization test over `sims` simulated trials.
pub fn randomization_rejection_rate(
    policy: &Policy,
    theta: (f64, f64),
    sims: u64,
    reps: u32,
    alpha: f64,
    seed: RngSeed,
) -> Result<RejectionEstimate> {
    if sims < 100 {
        return Err(Error::Domain(format!("at least 100 simulations are needed, got {sims}")));
    }
    check_theta(theta)?;
    let rejections: u64 = (0..sims)
        .into_par_iter()
        .map(|i| -> Result<u64> {
            let mut rng = seed.stream(i);
            let obs = run(policy, BurnIn::PermutedBlock, Outcomes::Draw(theta.0, theta.1), &mut rng)?;
            Ok(randomization_test(&obs, policy, reps, alpha, &mut rng)?.reject as u64)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .sum();
    let p = rejections as f64 / sims as f64;
    Ok(RejectionEstimate {
        rejections,
        sims,
        reps,
        estimate: p,
        half_width: 1.96 * (p * (1.0 - p) / sims as f64).sqrt(),
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::PolicyKind;

    #[test]
    fn blocks_are_balanced() {
        let mut r = RngSeed::new(7).stream(0);
        let s = permuted_block_sequence(40, 10, &mut r).unwrap();
        for k in 1..=4 {
            assert_eq!(s[..10 * k].iter().filter(|&&a| a == Arm::C).count(), 5 * k);
        }
        assert!(permuted_block_sequence(10, 3, &mut r).is_err());
        let s = permuted_block_sequence(18, 10, &mut r).unwrap();
        assert_eq!(s.iter().filter(|&&a| a == Arm::C).count(), 9);
        let counts: std::collections::BTreeSet<usize> = (0..200)
            .map(|_| truncated_block_sequence(18, 10, &mut r).unwrap()[10..].iter().filter(|&&a| a == Arm::C).count())
            .collect();
        assert_eq!(counts.into_iter().collect::<Vec<_>>(), [3, 4, 5]);
    }

    #[test]
    fn certain_success() {
        let p = Policy::new(PolicyKind::BayesianRar, 20, 2).unwrap();
        let h = simulate_trial(&p, (1.0, 1.0), RngSeed::new(1)).unwrap();
        assert!(h.steps.iter().all(|s| s.1));
        assert_eq!(h.terminal().successes(), 20);
    }

    #[test]
    fn equal_allocation_ends_balanced() {
        let p = Policy::new(PolicyKind::EqualAllocation, 50, 6).unwrap();
        for i in 0..20 {
            let h = simulate_with(&p, (0.3, 0.6), BurnIn::Alternate, &mut RngSeed::new(3).stream(i)).unwrap();
            assert_eq!(h.terminal().n_c, 25);
        }
    }

    #[test]
    fn all_failures_never_reject() {
        let p = Policy::new(PolicyKind::EqualAllocation, 20, 2).unwrap();
        let h = simulate_trial(&p, (0.0, 0.0), RngSeed::new(5)).unwrap();
        let r = randomization_test(&h, &p, 200, 0.05, &mut RngSeed::new(5).stream(1)).unwrap();
        assert_eq!(r.p_value, 1.0);
        assert!(!r.reject);
    }
}
