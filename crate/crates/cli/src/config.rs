//! The JSON run configuration shared by every subcommand.

use std::path::PathBuf;
use std::sync::Arc;

use rarexact::cmdp::{default_rectangles, CmdpSpec, DualSettings, Rectangle};
use rarexact::oc::ThetaSpec;
use rarexact::policy::PolicyTableDoc;
use rarexact::{Policy, PolicyKind, PolicyTable, TestKind};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub n: u32,
    /// Participants per arm allocated before the policy takes over.
    pub burn_in: u32,
    pub policy: PolicySpec,
    /// Comparison design for `power-diff`.
    pub baseline: PolicySpec,
    pub tests: Vec<TestKind>,
    /// Two-sided level; exact two-tailed tests use `alpha / 2` per tail.
    pub alpha: f64,
    pub theta: ThetaSpec,
    pub cmdp: CmdpOptions,
    pub mc: McOptions,
    pub paths: PathOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            n: 50,
            burn_in: 6,
            policy: PolicySpec::EqualAllocation,
            baseline: PolicySpec::EqualAllocation,
            tests: TestKind::ALL.to_vec(),
            alpha: 0.05,
            theta: ThetaSpec::Curves { theta_c: vec![0.01, 0.1, 0.3, 0.5, 0.7, 0.9], step: 0.01 },
            cmdp: CmdpOptions::default(),
            mc: McOptions::default(),
            paths: PathOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicySpec {
    EqualAllocation,
    BayesianRar,
    DbcdNeyman {
        #[serde(default = "default_gamma")]
        gamma: f64,
    },
    TemperedDbcdNeyman {
        #[serde(default = "default_gamma")]
        gamma: f64,
    },
    /// Allocation table written by `cmdp solve`.
    CmdpTable { path: PathBuf },
}

fn default_gamma() -> f64 {
    2.0
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CmdpOptions {
    pub p: f64,
    pub avg_type1: Option<f64>,
    pub pointwise_type1: Option<f64>,
    pub null_grid: Vec<f64>,
    /// Add the patient-benefit constraints.
    pub benefit: bool,
    /// Rectangles for the benefit constraints; empty means the default set.
    pub rectangles: Vec<Rectangle>,
    pub benefit_floor: f64,
    pub dual: DualSettings,
}

impl Default for CmdpOptions {
    fn default() -> Self {
        let d = CmdpSpec::default();
        CmdpOptions {
            p: d.p,
            avg_type1: d.avg_type1,
            pointwise_type1: d.pointwise_type1,
            null_grid: d.null_grid,
            benefit: false,
            rectangles: vec![],
            benefit_floor: d.benefit_floor,
            dual: d.dual,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McOptions {
    pub sims: u64,
    pub reps: u32,
    pub seed: u64,
    pub theta: Vec<(f64, f64)>,
}

impl Default for McOptions {
    fn default() -> Self {
        McOptions { sims: 1000, reps: 1000, seed: 1, theta: vec![(0.5, 0.5)] }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathOptions {
    pub trials: u64,
    pub theta: (f64, f64),
    pub seed: u64,
}

impl Default for PathOptions {
    fn default() -> Self {
        PathOptions { trials: 10, theta: (0.5, 0.5), seed: 1 }
    }
}

/// Allocation table file: either the bare table or a `cmdp solve` artifact.
#[derive(Deserialize)]
#[serde(untagged)]
enum TableFile {
    Wrapped { table: PolicyTableDoc },
    Bare(PolicyTableDoc),
}

impl RunConfig {
    pub fn load(path: &std::path::Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let cfg: RunConfig = serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
            return Err(CliError::config(format!("alpha must lie in (0, 1), got {}", cfg.alpha)));
        }
        if cfg.tests.is_empty() {
            return Err(CliError::config("no tests requested"));
        }
        Ok(cfg)
    }

    pub fn policy(&self) -> Result<Policy, CliError> {
        self.build_policy(&self.policy)
    }

    pub fn baseline(&self) -> Result<Policy, CliError> {
        self.build_policy(&self.baseline)
    }

    fn build_policy(&self, spec: &PolicySpec) -> Result<Policy, CliError> {
        let kind = match spec {
            PolicySpec::EqualAllocation => PolicyKind::EqualAllocation,
            PolicySpec::BayesianRar => PolicyKind::BayesianRar,
            PolicySpec::DbcdNeyman { gamma } => PolicyKind::DbcdNeyman { gamma: *gamma },
            PolicySpec::TemperedDbcdNeyman { gamma } => PolicyKind::TemperedDbcdNeyman { gamma: *gamma },
            PolicySpec::CmdpTable { path } => {
                let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
                let doc = match serde_json::from_str(&text).map_err(|e| CliError::format(format!("{}: {e}", path.display())))? {
                    TableFile::Wrapped { table } | TableFile::Bare(table) => table,
                };
                PolicyKind::CmdpTable(Arc::new(PolicyTable::try_from(doc)?))
            }
        };
        Ok(Policy::new(kind, self.n, self.burn_in)?)
    }

    pub fn cmdp_spec(&self) -> CmdpSpec {
        let c = &self.cmdp;
        let rectangles = match (c.benefit, c.rectangles.is_empty()) {
            (false, _) => vec![],
            (true, true) => default_rectangles(),
            (true, false) => c.rectangles.clone(),
        };
        CmdpSpec {
            n: self.n,
            burn_in: self.burn_in,
            p: c.p,
            alpha: self.alpha,
            avg_type1: c.avg_type1,
            pointwise_type1: c.pointwise_type1,
            null_grid: c.null_grid.clone(),
            rectangles,
            benefit_floor: c.benefit_floor,
            dual: c.dual.clone(),
        }
    }
}
