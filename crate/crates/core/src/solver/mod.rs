//! Optimization core: the perspective rate function, the per-state dual
//! subproblem, projected subgradient ascent with primal recovery, and the
//! penalized convex-concave procedure for the cases with a free level choice.

pub mod ccp;
pub mod dual;
pub mod energy;
pub mod penalty;
pub mod rate;

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::channel::{PhysicalConfig, SystemStateTable};
use crate::error::{invalid, Result};

pub use ccp::{ccp_solve, ccp_subproblem, BandBlock, CcpOutcome, CcpRun, CcpState, Hinge};
pub use dual::{solve_dual, ContinuousSolution, FixedBlock, FixedSelection};
pub use penalty::{linearized_penalty, penalty};
pub use rate::{inner_dual_subproblem, rate, InnerSolution};

/// One multicast group as seen by the solver: user indices and tile count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub users: Vec<usize>,
    pub tiles: usize,
}

/// Continuous part of a streaming problem: groups, encoding ladder, channel states.
#[derive(Debug, Clone)]
pub struct Instance {
    pub phys: PhysicalConfig,
    pub level_rates: Vec<f64>,
    pub groups: Vec<GroupSpec>,
    pub states: SystemStateTable,
    /// `noise / gain` for every state and user.
    pub(crate) noise_over_gain: Vec<Vec<f64>>,
}

impl Instance {
    pub fn new(
        phys: PhysicalConfig,
        level_rates: Vec<f64>,
        groups: Vec<GroupSpec>,
        states: SystemStateTable,
    ) -> Result<Self> {
        phys.validate()?;
        if level_rates.is_empty() {
            return invalid("instance needs at least one quality level");
        }
        let users = states.rows.first().map(|r| r.gains.len()).unwrap_or(0);
        if states.rows.iter().any(|r| r.gains.len() != users) {
            return invalid("system states have inconsistent user counts");
        }
        if states.rows.iter().any(|r| r.gains.iter().any(|g| !(*g > 0.0))) {
            return invalid("channel gains must be positive");
        }
        for g in &groups {
            if g.users.is_empty() {
                return invalid("group without users");
            }
            if let Some(&k) = g.users.iter().find(|&&k| k >= users) {
                return invalid(format!("group references user index {k} but states cover {users} users"));
            }
        }
        let noise_over_gain = states
            .rows
            .iter()
            .map(|r| r.gains.iter().map(|g| phys.noise_w / g).collect())
            .collect();
        Ok(Self {
            phys,
            level_rates,
            groups,
            states,
            noise_over_gain,
        })
    }

    pub fn levels(&self) -> usize {
        self.level_rates.len()
    }

    pub fn streams(&self) -> usize {
        self.groups.len() * self.levels()
    }

    pub fn stream(&self, group: usize, level_idx: usize) -> usize {
        group * self.levels() + level_idx
    }

    /// `B / (T ln 2)`: converts natural-log capacity into bits/s of required rate.
    pub(crate) fn log_scale(&self) -> f64 {
        self.phys.rate_scale() / LN_2
    }

    /// Required rate of group `group` at 0-based level `level_idx` when fully selected.
    pub fn full_demand(&self, group: usize, level_idx: usize) -> f64 {
        self.groups[group].tiles as f64 * self.level_rates[level_idx]
    }

    /// Rate delivered to `user` by `stream` averaged over the channel states.
    pub fn delivered_rate(&self, alloc: &Allocation, stream: usize, user: usize) -> f64 {
        let c = self.log_scale();
        self.states
            .rows
            .iter()
            .enumerate()
            .map(|(h, row)| {
                let t = alloc.time[h][stream];
                let e = alloc.energy[h][stream];
                if t <= 0.0 {
                    0.0
                } else {
                    row.prob * c * t * (e / (t * self.noise_over_gain[h][user])).ln_1p()
                }
            })
            .sum()
    }
}

/// Per-state time and energy of every (group, level) stream. Indexed `[state][group * L + level]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub levels: usize,
    pub time: Vec<Vec<f64>>,
    pub energy: Vec<Vec<f64>>,
}

impl Allocation {
    pub fn zeros(states: usize, streams: usize, levels: usize) -> Self {
        Self {
            levels,
            time: vec![vec![0.0; streams]; states],
            energy: vec![vec![0.0; streams]; states],
        }
    }

    pub fn t(&self, state: usize, group: usize, level_idx: usize) -> f64 {
        self.time[state][group * self.levels + level_idx]
    }

    pub fn e(&self, state: usize, group: usize, level_idx: usize) -> f64 {
        self.energy[state][group * self.levels + level_idx]
    }

    /// Transmit power `e / t`, zero where no airtime is allocated.
    pub fn power(&self, state: usize, group: usize, level_idx: usize) -> f64 {
        let t = self.t(state, group, level_idx);
        if t > 0.0 {
            self.e(state, group, level_idx) / t
        } else {
            0.0
        }
    }

    /// Expected per-frame transmission energy.
    pub fn expected_energy(&self, states: &SystemStateTable) -> f64 {
        states
            .rows
            .iter()
            .zip(&self.energy)
            .map(|(row, e)| row.prob * e.iter().sum::<f64>())
            .sum()
    }
}

/// Step size `a / (b + n)` on normalized multipliers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSize {
    pub a: f64,
    pub b: f64,
}

impl StepSize {
    pub fn at(&self, n: usize) -> f64 {
        self.a / (self.b + n as f64)
    }
}

impl Default for StepSize {
    fn default() -> Self {
        Self { a: 1.0, b: 10.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Relative primal-dual gap at which subgradient ascent stops.
    pub gap_tol: f64,
    pub max_iterations: usize,
    pub step: StepSize,
    /// Primal recovery runs every this many subgradient iterations.
    pub check_every: usize,
    /// Relative objective decrease below which a CCP run stops.
    pub ccp_tol: f64,
    pub ccp_max_iterations: usize,
    /// Per-entry distance to {0,1} accepted as binary.
    pub binary_tol: f64,
    pub restarts: usize,
    /// Initial penalty weight as a multiple of the objective estimate.
    pub rho_factor: f64,
    pub rho_escalation: f64,
    /// Largest penalty weight tried, as a multiple of the initial one.
    pub rho_max_multiple: f64,
    pub seed: u64,
    /// Keep per-iteration records in the result.
    pub trace: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            gap_tol: 1e-4,
            max_iterations: 5000,
            step: StepSize::default(),
            check_every: 10,
            ccp_tol: 1e-5,
            ccp_max_iterations: 200,
            binary_tol: 1e-6,
            restarts: 10,
            rho_factor: 0.05,
            rho_escalation: 10.0,
            rho_max_multiple: 1e4,
            seed: 0,
            trace: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gap_tol > 0.0) || !(self.ccp_tol > 0.0) || !(self.binary_tol > 0.0) {
            return invalid("solver tolerances must be positive");
        }
        if self.max_iterations == 0 || self.check_every == 0 || self.ccp_max_iterations == 0 {
            return invalid("iteration limits must be positive");
        }
        if self.restarts == 0 {
            return invalid("at least one restart is required");
        }
        if !(self.step.a > 0.0) || !(self.step.b >= 0.0) {
            return invalid("step size needs a > 0 and b >= 0");
        }
        if !(self.rho_factor > 0.0) || !(self.rho_escalation > 1.0) || !(self.rho_max_multiple >= 1.0) {
            return invalid("penalty schedule needs rho_factor > 0, escalation > 1, max multiple >= 1");
        }
        Ok(())
    }
}

/// One line of solver diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub run: usize,
    pub ccp_iteration: usize,
    pub iteration: usize,
    pub dual_value: f64,
    pub primal_value: f64,
    pub gap: f64,
    pub penalty_residual: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Best lower bound of the last continuous solve.
    pub dual_value: f64,
    /// Objective of the recovered feasible primal of the last continuous solve.
    pub primal_value: f64,
    pub gap: f64,
    /// Subgradient iterations summed over every continuous solve.
    pub iterations: usize,
    pub converged: bool,
    /// Largest dual value observed minus the best primal value; positive means weak duality broke.
    pub weak_duality_excess: f64,
    pub penalty_residual: f64,
    pub ccp_iterations: usize,
    pub accepted_runs: usize,
    pub rho: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<TraceRecord>,
}

/// Relative gap `(primal - dual) / |primal|`, zero for an empty problem.
pub(crate) fn relative_gap(primal: f64, dual: f64) -> f64 {
    if primal.abs() < f64::MIN_POSITIVE {
        (primal - dual).max(0.0)
    } else {
        (primal - dual) / primal.abs()
    }
}
