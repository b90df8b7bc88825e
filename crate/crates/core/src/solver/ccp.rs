//! Penalized convex-concave procedure for the level selection.
//!
//! The binary selectors are relaxed to `[0, 1]` and a concave penalty `rho * sum y (1 - y)`
//! is added. Each iteration replaces the penalty by its tangent at the previous point,
//! which leaves a convex problem solved by the dual engine. Several starts are tried and
//! the penalty weight grows until some run ends on a binary point.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dual::{run_engine, solve_dual, EngineBlock, EngineParams, Vertex};
use super::penalty::penalty;
use super::{Allocation, Diagnostics, FixedSelection, Instance, SolverConfig, TraceRecord};
use crate::error::{invalid, Error, Result};

/// `coef * max(level_sum - threshold, 0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hinge {
    pub coef: f64,
    pub threshold: f64,
}

impl Hinge {
    pub fn zero() -> Self {
        Self {
            coef: 0.0,
            threshold: 0.0,
        }
    }

    pub fn eval(&self, level_sum: f64) -> f64 {
        if self.coef == 0.0 {
            0.0
        } else {
            self.coef * (level_sum - self.threshold).max(0.0)
        }
    }
}

/// Admissible selectors of one (group, user) pair: one level from `lo..=hi`, relaxed to
/// the convex hull of those levels (the simplex over the band). Transcoding is charged
/// per level, so the relaxed cost interpolates the binary one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandBlock {
    pub group: usize,
    pub user: usize,
    pub lo: u32,
    pub hi: u32,
    pub hinge: Hinge,
}

impl BandBlock {
    fn validate(&self, inst: &Instance) -> Result<()> {
        let grp = inst
            .groups
            .get(self.group)
            .ok_or_else(|| Error::InvalidInput(format!("group {} out of range", self.group)))?;
        if !grp.users.contains(&self.user) {
            return invalid(format!("user {} is not in group {}", self.user, self.group));
        }
        if self.lo < 1 || self.lo > self.hi || self.hi as usize > inst.levels() {
            return invalid(format!("level band [{}, {}] is not inside 1..={}", self.lo, self.hi, inst.levels()));
        }
        Ok(())
    }

    /// Transcoding cost of transmitting `level`.
    pub fn level_cost(&self, level: u32) -> f64 {
        self.hinge.eval(level as f64)
    }

    /// One vertex per admissible level.
    pub(crate) fn vertices(&self) -> Vec<Vertex> {
        (self.lo..=self.hi)
            .map(|l| Vertex {
                y: vec![(l as usize - 1, 1.0)],
                cost: self.level_cost(l),
            })
            .collect()
    }

    fn admits(&self, level: u32) -> bool {
        (self.lo..=self.hi).contains(&level)
    }
}

/// Result of one convexified iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct CcpState {
    /// Selector per block, lowest level first.
    pub y: Vec<Vec<f64>>,
    pub alloc: Allocation,
    pub energy: f64,
    /// Transcoding energy of `y`.
    pub transcoding: f64,
    pub dual_value: f64,
    pub gap: f64,
    pub iterations: usize,
    pub converged: bool,
    pub weak_duality_excess: f64,
    pub(crate) prices: Vec<f64>,
    pub(crate) trace: Vec<TraceRecord>,
}

impl CcpState {
    pub fn penalty(&self) -> f64 {
        self.y.iter().map(|b| penalty(b).unwrap_or(f64::INFINITY)).sum()
    }

    /// Energy plus transcoding plus the exact (not linearized) penalty.
    pub fn penalized(&self, rho: f64) -> f64 {
        self.energy + self.transcoding + rho * self.penalty()
    }
}

fn engine_blocks(inst: &Instance, blocks: &[BandBlock], y_prev: &[Vec<f64>], rho: f64) -> Vec<EngineBlock> {
    blocks
        .iter()
        .zip(y_prev)
        .map(|(b, p)| EngineBlock {
            group: b.group,
            user: b.user,
            vertices: b.vertices(),
            linear: p.iter().map(|p| rho * (1.0 - 2.0 * p)).collect(),
            level_cost: (1..=inst.levels() as u32)
                .map(|l| if b.admits(l) { b.level_cost(l) } else { 0.0 })
                .collect(),
        })
        .collect()
}

fn transcoding(blocks: &[BandBlock], y: &[Vec<f64>]) -> f64 {
    blocks
        .iter()
        .zip(y)
        .map(|(b, y)| y.iter().enumerate().map(|(l, v)| v * b.level_cost(l as u32 + 1)).sum::<f64>())
        .sum()
}

fn subproblem(
    inst: &Instance,
    blocks: &[BandBlock],
    y_prev: &[Vec<f64>],
    rho: f64,
    config: &SolverConfig,
    warm: Option<&[f64]>,
    tag: (usize, usize),
) -> Result<CcpState> {
    let eb = engine_blocks(inst, blocks, y_prev, rho);
    let constant = rho * y_prev.iter().flatten().map(|p| p * p).sum::<f64>();
    let out = run_engine(&EngineParams {
        inst,
        blocks: &eb,
        constant,
        y_start: y_prev,
        warm,
        config,
        tag,
    })?;
    Ok(CcpState {
        transcoding: transcoding(blocks, &out.y),
        y: out.y,
        alloc: out.alloc,
        energy: out.energy,
        dual_value: out.dual,
        gap: out.gap,
        iterations: out.iterations,
        converged: out.converged,
        weak_duality_excess: out.weak_excess,
        prices: out.prices,
        trace: out.trace,
    })
}

/// One convexified iteration: the penalty is linearized at `y_prev` and the resulting
/// convex problem is solved. `y_prev` must lie in the relaxed bands.
pub fn ccp_subproblem(
    inst: &Instance,
    blocks: &[BandBlock],
    y_prev: &[Vec<f64>],
    rho: f64,
    config: &SolverConfig,
) -> Result<CcpState> {
    check_blocks(inst, blocks, y_prev)?;
    if !(rho >= 0.0) || !rho.is_finite() {
        return invalid("penalty weight must be finite and non-negative");
    }
    subproblem(inst, blocks, y_prev, rho, config, None, (0, 0))
}

fn check_blocks(inst: &Instance, blocks: &[BandBlock], y: &[Vec<f64>]) -> Result<()> {
    if blocks.len() != y.len() {
        return invalid("one selector per block is required");
    }
    for (b, yb) in blocks.iter().zip(y) {
        b.validate(inst)?;
        if yb.len() != inst.levels() || yb.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return invalid(format!("selector of group {} user {} is malformed", b.group, b.user));
        }
        let sum: f64 = yb.iter().sum();
        let outside = yb.iter().enumerate().any(|(l, v)| *v > 0.0 && !b.admits(l as u32 + 1));
        if (sum - 1.0).abs() > 1e-9 || outside {
            return invalid(format!("selector of group {} user {} is outside its band", b.group, b.user));
        }
    }
    Ok(())
}

/// Summary of one CCP run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CcpRun {
    pub run: usize,
    pub rho: f64,
    /// `true` for the deterministic starts built from the given levels.
    pub heuristic_start: bool,
    pub iterations: usize,
    pub penalized_objective: f64,
    pub penalty_residual: f64,
    pub accepted: bool,
    /// Objective of the rounded selection after the final continuous solve.
    pub objective: Option<f64>,
    /// Penalized objective after every accepted iteration.
    pub history: Vec<f64>,
}

/// Best binary selection found together with its allocation.
#[derive(Debug, Clone, PartialEq)]
pub struct CcpOutcome {
    /// Selected level per block.
    pub levels: Vec<u32>,
    pub alloc: Allocation,
    pub energy: f64,
    pub transcoding: f64,
    pub diagnostics: Diagnostics,
    pub runs: Vec<CcpRun>,
}

struct Candidate {
    levels: Vec<u32>,
    alloc: Allocation,
    energy: f64,
    transcoding: f64,
    dual: f64,
    gap: f64,
    converged: bool,
    weak_excess: f64,
}

fn one_hot(levels: usize, level: u32) -> Vec<f64> {
    let mut y = vec![0.0; levels];
    y[level as usize - 1] = 1.0;
    y
}

fn evaluate_levels(
    inst: &Instance,
    blocks: &[BandBlock],
    levels: &[u32],
    config: &SolverConfig,
    iterations: &mut usize,
) -> Result<Candidate> {
    let selection = FixedSelection {
        blocks: blocks
            .iter()
            .zip(levels)
            .map(|(b, &l)| super::dual::FixedBlock {
                group: b.group,
                user: b.user,
                y: one_hot(inst.levels(), l),
            })
            .collect(),
    };
    let sol = solve_dual(inst, &selection, config)?;
    *iterations += sol.iterations;
    let trans: f64 = blocks.iter().zip(levels).map(|(b, &l)| b.hinge.eval(l as f64)).sum();
    Ok(Candidate {
        levels: levels.to_vec(),
        alloc: sol.alloc,
        energy: sol.energy,
        transcoding: trans,
        dual: sol.dual_value + trans,
        gap: sol.gap,
        converged: sol.converged,
        weak_excess: sol.weak_duality_excess,
    })
}

/// Uniformly random point of the relaxed band.
pub fn random_start(block: &BandBlock, levels: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let verts = block.vertices();
    let weights: Vec<f64> = verts.iter().map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
    let total: f64 = weights.iter().sum();
    let mut y = vec![0.0; levels];
    for (v, w) in verts.iter().zip(&weights) {
        for &(l, val) in &v.y {
            y[l] += w / total * val;
        }
    }
    for v in &mut y {
        *v = v.clamp(0.0, 1.0);
    }
    y
}

/// Runs the penalized procedure from every start and returns the best binary selection.
///
/// `starts` lists deterministic level choices (one level per block) that are tried before
/// the random restarts; each start is also kept as a candidate in its own right.
pub fn ccp_solve(
    inst: &Instance,
    blocks: &[BandBlock],
    starts: &[Vec<u32>],
    config: &SolverConfig,
) -> Result<CcpOutcome> {
    config.validate()?;
    for b in blocks {
        b.validate(inst)?;
    }
    for s in starts {
        if s.len() != blocks.len() || s.iter().zip(blocks).any(|(l, b)| !b.admits(*l)) {
            return invalid("start levels must pick one admissible level per block");
        }
    }
    let levels = inst.levels();
    let mut total_iterations = 0;
    let mut trace = Vec::new();

    let mut best: Option<Candidate> = None;
    let keep = |best: &mut Option<Candidate>, c: Candidate| {
        if best.as_ref().map_or(true, |b| c.energy + c.transcoding < b.energy + b.transcoding) {
            *best = Some(c);
        }
    };
    for s in starts {
        let c = evaluate_levels(inst, blocks, s, config, &mut total_iterations)?;
        keep(&mut best, c);
    }
    let estimate = match &best {
        Some(c) => c.energy + c.transcoding,
        None => {
            let lo: Vec<u32> = blocks.iter().map(|b| b.lo).collect();
            let c = evaluate_levels(inst, blocks, &lo, config, &mut total_iterations)?;
            let e = c.energy + c.transcoding;
            keep(&mut best, c);
            e
        }
    };
    let rho0 = config.rho_factor * if estimate > 0.0 { estimate } else { 1.0 };

    let n_runs = config.restarts.max(starts.len());
    let mut runs = Vec::new();
    let mut rho = rho0;
    let mut ccp_iterations = 0;
    let mut accepted_runs = 0;
    let mut min_residual = f64::INFINITY;
    let mut last_residual = 0.0;
    loop {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ rho.to_bits());
        let mut any_accepted = false;
        for run in 0..n_runs {
            let heuristic = run < starts.len();
            let start: Vec<Vec<f64>> = if heuristic {
                starts[run].iter().map(|&l| one_hot(levels, l)).collect()
            } else {
                blocks.iter().map(|b| random_start(b, levels, &mut rng)).collect()
            };
            let mut y = start;
            let mut prev = f64::INFINITY;
            let mut warm: Option<Vec<f64>> = None;
            let mut it = 0;
            let mut current: Option<CcpState> = None;
            let mut history = Vec::new();
            while it < config.ccp_max_iterations {
                let st = subproblem(inst, blocks, &y, rho, config, warm.as_deref(), (runs.len(), it))?;
                it += 1;
                total_iterations += st.iterations;
                let obj = st.penalized(rho);
                if config.trace {
                    let res = st.penalty();
                    trace.extend(st.trace.iter().cloned().map(|mut r| {
                        r.penalty_residual = res;
                        r
                    }));
                }
                if obj >= prev {
                    break;
                }
                let rel = (prev - obj) / obj.abs().max(f64::MIN_POSITIVE);
                y = st.y.clone();
                warm = Some(st.prices.clone());
                current = Some(st);
                prev = obj;
                history.push(obj);
                if rel < config.ccp_tol {
                    break;
                }
            }
            ccp_iterations += it;
            let residual = current.as_ref().map_or_else(
                || y.iter().map(|b| penalty(b).unwrap_or(f64::INFINITY)).sum(),
                |s| s.penalty(),
            );
            last_residual = residual;
            min_residual = min_residual.min(residual);
            let binary = y.iter().flatten().all(|v| v.min(1.0 - v) <= config.binary_tol);
            let rounded: Option<Vec<u32>> = if binary {
                blocks
                    .iter()
                    .zip(&y)
                    .map(|(b, yb)| {
                        let ones: Vec<usize> = (0..levels).filter(|&l| yb[l] > 0.5).collect();
                        match ones.as_slice() {
                            [l] if b.admits(*l as u32 + 1) => Some(*l as u32 + 1),
                            _ => None,
                        }
                    })
                    .collect()
            } else {
                None
            };
            let mut objective = None;
            if let Some(lv) = rounded {
                any_accepted = true;
                accepted_runs += 1;
                let c = evaluate_levels(inst, blocks, &lv, config, &mut total_iterations)?;
                objective = Some(c.energy + c.transcoding);
                keep(&mut best, c);
            }
            runs.push(CcpRun {
                run: runs.len(),
                rho,
                heuristic_start: heuristic,
                iterations: it,
                penalized_objective: prev,
                penalty_residual: residual,
                accepted: objective.is_some(),
                objective,
                history,
            });
        }
        if any_accepted || rho * config.rho_escalation > rho0 * config.rho_max_multiple * (1.0 + 1e-12) {
            if !any_accepted && starts.is_empty() {
                return Err(Error::NoBinarySolution {
                    rho,
                    runs: runs.len(),
                    min_penalty: min_residual,
                });
            }
            break;
        }
        rho *= config.rho_escalation;
    }

    let best = best.expect("at least one candidate is always evaluated");
    Ok(CcpOutcome {
        diagnostics: Diagnostics {
            dual_value: best.dual,
            primal_value: best.energy + best.transcoding,
            gap: best.gap,
            iterations: total_iterations,
            converged: best.converged,
            weak_duality_excess: best.weak_excess,
            penalty_residual: last_residual,
            ccp_iterations,
            accepted_runs,
            rho,
            trace,
        },
        levels: best.levels,
        alloc: best.alloc,
        energy: best.energy,
        transcoding: best.transcoding,
        runs,
    })
}
