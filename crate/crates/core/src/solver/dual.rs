//! Partial dual decomposition of the continuous time/energy problem.
//!
//! The rate constraints of every (group, user, level) demand are relaxed with a price.
//! For fixed prices the problem splits into one subproblem per system state (solved
//! exactly by ratio reduction) and one small linear program per selector block (solved
//! by vertex enumeration). Prices follow projected subgradient ascent with per-demand
//! step sizes. Primal points are recovered from the step-weighted average of the
//! subproblem solutions: the averaged airtime is kept and the energy is re-optimized
//! exactly for it, which also yields fresh prices used to restart the ascent when they
//! give a better bound.

use microlp::{ComparisonOp, OptimizationDirection, Problem, Variable};
use serde::{Deserialize, Serialize};

use super::energy::stream_energy;
use super::rate::power_ratio;
use super::{relative_gap, Allocation, Instance, SolverConfig, TraceRecord};
use crate::error::{invalid, Error, Result};

/// Solves an LP, treating a numerical breakdown inside the simplex code like an
/// infeasible model. The LPs only ever improve a point the engine already has.
fn solve_quietly(lp: Problem) -> Option<microlp::Solution> {
    std::panic::catch_unwind(std::panic::AssertUnwindSafe(move || lp.solve())).ok()?.ok()
}

/// Largest normalized price before the ascent is declared divergent.
const DIVERGENCE_LIMIT: f64 = 1e12;

/// A selector vertex: sparse `(level index, value)` entries and its fixed cost.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Vertex {
    pub y: Vec<(usize, f64)>,
    pub cost: f64,
}

/// Level choice of one (group, user) pair, as seen by the engine.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct EngineBlock {
    pub group: usize,
    pub user: usize,
    pub vertices: Vec<Vertex>,
    /// Extra linear cost per level (the penalty tangent in CCP iterations).
    pub linear: Vec<f64>,
    /// Transcoding cost per level; vertex costs are the matching combinations.
    pub level_cost: Vec<f64>,
}

impl EngineBlock {
    fn cost_at(&self, y: &[f64]) -> f64 {
        self.level_cost.iter().zip(&self.linear).zip(y).map(|((c, a), v)| (c + a) * v).sum()
    }
}

#[derive(Debug, Clone, Copy)]
struct Slot {
    block: usize,
    level: usize,
    user: usize,
    stream: usize,
    /// Rate needed when the selector is 1.
    cap: f64,
}

pub(crate) struct EngineParams<'a> {
    pub inst: &'a Instance,
    pub blocks: &'a [EngineBlock],
    pub constant: f64,
    /// A feasible selector per block, used for the first primal point.
    pub y_start: &'a [Vec<f64>],
    /// Prices from an earlier solve with the same block layout.
    pub warm: Option<&'a [f64]>,
    pub config: &'a SolverConfig,
    pub tag: (usize, usize),
}

#[derive(Debug, Clone)]
pub(crate) struct EngineOutput {
    pub y: Vec<Vec<f64>>,
    pub alloc: Allocation,
    pub energy: f64,
    pub dual: f64,
    pub gap: f64,
    pub iterations: usize,
    pub converged: bool,
    pub weak_excess: f64,
    pub prices: Vec<f64>,
    pub trace: Vec<TraceRecord>,
}

struct Recovered {
    y: Vec<Vec<f64>>,
    alloc: Allocation,
    energy: f64,
    value: f64,
    /// Price per slot; `None` where the slot carried no demand.
    prices: Vec<Option<f64>>,
}

struct Evaluation {
    value: f64,
    /// Chosen stream and its power ratio per state.
    chosen: Vec<Option<(usize, f64)>>,
    /// Chosen vertex per block.
    vertex: Vec<usize>,
    /// Optimal power ratio of every carrying stream, `[state][position in stream_slots]`.
    powers: Vec<Vec<f64>>,
}

struct Engine<'a> {
    p: &'a EngineParams<'a>,
    slots: Vec<Slot>,
    /// Streams that carry at least one slot, with their slot indices.
    stream_slots: Vec<(usize, Vec<usize>)>,
    /// Slot indices of every stream.
    by_stream: Vec<Vec<usize>>,
    /// Slot index of `(block, level)`.
    slot_of: Vec<Vec<Option<usize>>>,
    c: f64,
}

impl<'a> Engine<'a> {
    fn new(p: &'a EngineParams<'a>) -> Self {
        let inst = p.inst;
        let levels = inst.levels();
        let mut slots = Vec::new();
        let mut slot_of = vec![vec![None; levels]; p.blocks.len()];
        for (b, block) in p.blocks.iter().enumerate() {
            let mut used = vec![false; levels];
            for v in &block.vertices {
                for &(l, y) in &v.y {
                    if y > 0.0 {
                        used[l] = true;
                    }
                }
            }
            for (l, u) in used.into_iter().enumerate() {
                if u {
                    slot_of[b][l] = Some(slots.len());
                    slots.push(Slot {
                        block: b,
                        level: l,
                        user: block.user,
                        stream: inst.stream(block.group, l),
                        cap: inst.full_demand(block.group, l),
                    });
                }
            }
        }
        let mut by_stream: Vec<Vec<usize>> = vec![Vec::new(); inst.streams()];
        for (i, s) in slots.iter().enumerate() {
            by_stream[s.stream].push(i);
        }
        let stream_slots = by_stream
            .iter()
            .cloned()
            .enumerate()
            .filter(|(_, v)| !v.is_empty())
            .collect();
        Self {
            p,
            slots,
            stream_slots,
            by_stream,
            slot_of,
            c: inst.log_scale(),
        }
    }

    fn evaluate(&self, mu: &[f64]) -> Evaluation {
        let inst = self.p.inst;
        let frame = inst.phys.frame_s;
        let mut value = self.p.constant;
        let mut chosen = Vec::with_capacity(inst.states.len());
        let mut powers = Vec::with_capacity(inst.states.len());
        let mut terms = Vec::with_capacity(8);
        for (h, row) in inst.states.rows.iter().enumerate() {
            let a = &inst.noise_over_gain[h];
            let mut best: Option<(usize, f64)> = None;
            let mut best_v = 0.0;
            let mut pw_row = Vec::with_capacity(self.stream_slots.len());
            for (s, slots) in &self.stream_slots {
                terms.clear();
                for &i in slots {
                    if mu[i] > 0.0 {
                        terms.push((a[self.slots[i].user], mu[i] * self.c));
                    }
                }
                let (pw, v) = power_ratio(&terms);
                pw_row.push(pw);
                if v < best_v {
                    best_v = v;
                    best = Some((*s, pw));
                }
            }
            value += row.prob * frame * best_v;
            chosen.push(best);
            powers.push(pw_row);
        }

        let mut vertex = Vec::with_capacity(self.p.blocks.len());
        for (b, block) in self.p.blocks.iter().enumerate() {
            let mut best = (0, f64::INFINITY);
            for (vi, v) in block.vertices.iter().enumerate() {
                let mut cost = v.cost;
                for &(l, y) in &v.y {
                    let price = self.slot_of[b][l].map(|i| mu[i] * self.slots[i].cap).unwrap_or(0.0);
                    cost += (price + block.linear[l]) * y;
                }
                if cost < best.1 {
                    best = (vi, cost);
                }
            }
            value += best.1;
            vertex.push(best.0);
        }
        Evaluation {
            value,
            chosen,
            vertex,
            powers,
        }
    }

    /// Primal point from an airtime profile and averaged selectors.
    fn recover(&self, time: &[Vec<f64>], y: Vec<Vec<f64>>) -> Option<Recovered> {
        let inst = self.p.inst;
        let n_states = inst.states.len();
        let frame = inst.phys.frame_s;
        let levels = inst.levels();

        let mut demands: Vec<Vec<(usize, f64, usize)>> = vec![Vec::new(); inst.streams()];
        for (i, s) in self.slots.iter().enumerate() {
            let d = s.cap * y[s.block][s.level];
            if d > 0.0 {
                demands[s.stream].push((s.user, d, i));
            }
        }
        let demanded: Vec<usize> = (0..inst.streams()).filter(|&s| !demands[s].is_empty()).collect();

        let mut alloc = Allocation::zeros(n_states, inst.streams(), levels);
        let uniform = frame / demanded.len().max(1) as f64;
        for h in 0..n_states {
            let total: f64 = demanded.iter().map(|&s| time[h][s]).sum();
            for &s in &demanded {
                alloc.time[h][s] = if total > 0.0 { frame * time[h][s] / total } else { uniform };
            }
        }
        let starved: Vec<usize> = demanded
            .iter()
            .copied()
            .filter(|&s| (0..n_states).all(|h| alloc.time[h][s] <= 0.0 || inst.states.rows[h].prob <= 0.0))
            .collect();

        // streams the LP left without airtime get a thin slice of every state
        let mut best: Option<(f64, Allocation, Vec<Option<f64>>)> = None;
        let slices: &[f64] = if starved.is_empty() { &[0.0] } else { &[1e-6, 1e-4, 1e-2] };
        for &eps in slices {
            let mut trial = alloc.clone();
            if eps > 0.0 {
                let keep = 1.0 - eps * starved.len() as f64;
                for h in 0..n_states {
                    for &s in &demanded {
                        trial.time[h][s] *= keep;
                    }
                    for &s in &starved {
                        trial.time[h][s] = eps * frame;
                    }
                }
            }
            let Some(prices) = self.fill_energy(&mut trial, &demanded, &demands) else {
                continue;
            };
            let e = trial.expected_energy(&inst.states);
            if best.as_ref().map_or(true, |b| e < b.0) {
                best = Some((e, trial, prices));
            }
        }
        let (_, alloc, prices) = best?;

        let energy = alloc.expected_energy(&inst.states);
        let value = energy
            + self.p.constant
            + self
                .p
                .blocks
                .iter()
                .zip(&y)
                .map(|(b, yb)| b.cost_at(yb))
                .sum::<f64>();
        Some(Recovered {
            y,
            alloc,
            energy,
            value,
            prices,
        })
    }


    /// Minimum energy of every demanded stream at the airtime already in `alloc`.
    fn fill_energy(
        &self,
        alloc: &mut Allocation,
        demanded: &[usize],
        demands: &[Vec<(usize, f64, usize)>],
    ) -> Option<Vec<Option<f64>>> {
        let inst = self.p.inst;
        let n_states = inst.states.len();
        let mut prices = vec![None; self.slots.len()];
        let mut column = vec![0.0; n_states];
        for &s in demanded {
            for h in 0..n_states {
                column[h] = alloc.time[h][s];
            }
            let users: Vec<(usize, f64)> = demands[s].iter().map(|&(k, d, _)| (k, d)).collect();
            let sol = stream_energy(inst, &column, &users)?;
            for h in 0..n_states {
                alloc.energy[h][s] = sol.energy[h];
            }
            for (&(_, _, i), price) in demands[s].iter().zip(sol.prices) {
                prices[i] = Some(price);
            }
        }
        Some(prices)
    }

    /// Best primal over the pooled power columns: airtime per (state, stream, power) and
    /// a convex combination of vertices per block, with rates linear in the airtime.
    fn solve_lp(&self, pool: &mut ColumnPool, scale_hint: f64) -> Option<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let p = self.p;
        let inst = p.inst;
        let frame = inst.phys.frame_s;
        let e_scale = if scale_hint.is_finite() && scale_hint.abs() > 0.0 { scale_hint.abs() } else { 1.0 };
        let mut lp = Problem::new(OptimizationDirection::Minimize);
        let mut rate_rows: Vec<Vec<(Variable, f64)>> = vec![Vec::new(); self.slots.len()];
        let mut tau: Vec<(usize, usize, usize, Variable)> = Vec::new();
        for (h, row) in inst.states.rows.iter().enumerate() {
            if row.prob <= 0.0 {
                continue;
            }
            let a = &inst.noise_over_gain[h];
            let mut budget = Vec::new();
            for (js, (_, slots)) in self.stream_slots.iter().enumerate() {
                for (ci, &pw) in pool.powers[h][js].iter().enumerate() {
                    let v = lp.add_var(row.prob * frame * pw / e_scale, (0.0, 1.0));
                    budget.push((v, 1.0));
                    tau.push((h, js, ci, v));
                    for &i in slots {
                        let r = row.prob * frame * self.c * (pw / a[self.slots[i].user]).ln_1p() / self.slots[i].cap;
                        rate_rows[i].push((v, r));
                    }
                }
            }
            if !budget.is_empty() {
                lp.add_constraint(budget.as_slice(), ComparisonOp::Le, 1.0);
            }
        }
        let mut weights: Vec<Vec<Variable>> = Vec::with_capacity(p.blocks.len());
        for (b, block) in p.blocks.iter().enumerate() {
            let mut vars = Vec::with_capacity(block.vertices.len());
            for v in &block.vertices {
                let cost = v.cost + v.y.iter().map(|&(l, y)| block.linear[l] * y).sum::<f64>();
                let var = lp.add_var(cost / e_scale, (0.0, 1.0));
                for &(l, y) in &v.y {
                    if let Some(i) = self.slot_of[b][l] {
                        rate_rows[i].push((var, -y));
                    }
                }
                vars.push(var);
            }
            let row: Vec<(Variable, f64)> = vars.iter().map(|&v| (v, 1.0)).collect();
            lp.add_constraint(row.as_slice(), ComparisonOp::Eq, 1.0);
            weights.push(vars);
        }
        for row in &rate_rows {
            lp.add_constraint(row.as_slice(), ComparisonOp::Ge, 0.0);
        }
        let sol = solve_quietly(lp)?;

        let mut time = vec![vec![0.0; inst.streams()]; inst.states.len()];
        let mut used = vec![vec![Vec::new(); self.stream_slots.len()]; inst.states.len()];
        for &(h, js, ci, v) in &tau {
            let x = sol[v].clamp(0.0, 1.0);
            time[h][self.stream_slots[js].0] += frame * x;
            if x > 0.0 {
                used[h][js].push(ci);
            }
        }
        pool.mark_used(used);
        let levels = inst.levels();
        let y = p
            .blocks
            .iter()
            .zip(&weights)
            .map(|(block, vars)| {
                let mut y = vec![0.0; levels];
                let total: f64 = vars.iter().map(|&v| sol[v].max(0.0)).sum();
                for (vert, &var) in block.vertices.iter().zip(vars) {
                    for &(l, val) in &vert.y {
                        y[l] += sol[var].max(0.0) / total * val;
                    }
                }
                y.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
                y
            })
            .collect();
        Some((time, y))
    }

    /// Prices from the dual of the recovery LP: the best multipliers of the piecewise
    /// linear model of the dual function spanned by the pooled columns.
    /// The prices are boxed around `anchor` so a pool that cannot yet serve some demand
    /// does not send them to infinity.
    fn master_prices(&self, pool: &ColumnPool, scale_hint: f64, anchor: &[f64], radius: f64) -> Option<Vec<f64>> {
        let p = self.p;
        let inst = p.inst;
        let frame = inst.phys.frame_s;
        let e_scale = if scale_hint.is_finite() && scale_hint.abs() > 0.0 { scale_hint.abs() } else { 1.0 };
        let top = anchor
            .iter()
            .zip(&self.slots)
            .map(|(m, slot)| m * slot.cap / e_scale)
            .fold(1.0f64, f64::max);
        let mut lp = Problem::new(OptimizationDirection::Maximize);
        let mu: Vec<Variable> = anchor
            .iter()
            .zip(&self.slots)
            .map(|(m, slot)| {
                let m = m * slot.cap / e_scale;
                let bounds = if m > 0.0 && radius.is_finite() {
                    (m / radius, m * radius)
                } else {
                    (0.0, MASTER_BOX * top)
                };
                lp.add_var(0.0, bounds)
            })
            .collect();
        for (h, row) in inst.states.rows.iter().enumerate() {
            if row.prob <= 0.0 {
                continue;
            }
            let a = &inst.noise_over_gain[h];
            let sigma = lp.add_var(-1.0, (0.0, f64::INFINITY));
            for (js, (_, slots)) in self.stream_slots.iter().enumerate() {
                for &pw in &pool.powers[h][js] {
                    let mut cut: Vec<(Variable, f64)> = vec![(sigma, -1.0)];
                    for &i in slots {
                        let r = row.prob * frame * self.c * (pw / a[self.slots[i].user]).ln_1p() / self.slots[i].cap;
                        cut.push((mu[i], r));
                    }
                    lp.add_constraint(cut.as_slice(), ComparisonOp::Le, row.prob * frame * pw / e_scale);
                }
            }
        }
        for (b, block) in p.blocks.iter().enumerate() {
            let pi = lp.add_var(1.0, (f64::NEG_INFINITY, f64::INFINITY));
            for v in &block.vertices {
                let cost = v.cost + v.y.iter().map(|&(l, y)| block.linear[l] * y).sum::<f64>();
                let mut cut: Vec<(Variable, f64)> = vec![(pi, 1.0)];
                for &(l, y) in &v.y {
                    if let Some(i) = self.slot_of[b][l] {
                        cut.push((mu[i], -y));
                    }
                }
                lp.add_constraint(cut.as_slice(), ComparisonOp::Le, cost / e_scale);
            }
        }
        let sol = solve_quietly(lp)?;
        let prices: Vec<f64> = mu
            .iter()
            .zip(&self.slots)
            .map(|(&v, slot)| sol[v].max(0.0) * e_scale / slot.cap)
            .collect();
        prices.iter().all(|p| p.is_finite()).then_some(prices)
    }

    fn run(&self) -> Result<EngineOutput> {
        let p = self.p;
        let inst = p.inst;
        let cfg = p.config;
        let n_states = inst.states.len();
        let frame = inst.phys.frame_s;
        let levels = inst.levels();

        // initial primal: the given selectors with airtime split evenly
        let even = vec![vec![1.0; inst.streams()]; n_states];
        let mut best = self
            .recover(&even, p.y_start.to_vec())
            .ok_or(Error::NoPrimal { iterations: 0 })?;

        if self.slots.is_empty() {
            return Ok(self.finish(best, f64::NEG_INFINITY, 0, true, f64::NEG_INFINITY, Vec::new(), Vec::new()));
        }

        // per-slot price scale, then normalized multipliers
        let mut scale = self.fallback_scales(&best.prices);
        let mut lambda = vec![1.0; self.slots.len()];
        if let Some(w) = p.warm.filter(|w| w.len() == self.slots.len()) {
            for i in 0..w.len() {
                if w[i] > 0.0 {
                    scale[i] = w[i];
                } else {
                    lambda[i] = 0.0;
                }
            }
        }

        let mut best_dual = f64::NEG_INFINITY;
        let mut max_dual = f64::NEG_INFINITY;
        let mut best_mu = vec![0.0; self.slots.len()];
        let mut best_powers: Vec<Vec<f64>> = Vec::new();
        let mut pool = ColumnPool::new(inst, self.stream_slots.len());
        let mut radius = INITIAL_RADIUS;
        let mut null_steps = 0usize;
        pool.add_alloc(&best.alloc, &self.stream_slots);
        let mut trace = Vec::new();

        let mut t_sum = vec![vec![0.0; inst.streams()]; n_states];
        let mut y_sum: Vec<Vec<f64>> = vec![vec![0.0; levels]; p.blocks.len()];
        let mut w_sum = 0.0;
        let mut mu = vec![0.0; self.slots.len()];
        let mut delivered = vec![0.0; self.slots.len()];
        let mut iterations = 0;
        let mut converged = false;

        for n in 0..cfg.max_iterations {
            iterations = n + 1;
            for i in 0..mu.len() {
                mu[i] = lambda[i] * scale[i];
            }
            let ev = self.evaluate(&mu);
            max_dual = max_dual.max(ev.value);
            if ev.value > best_dual {
                best_dual = ev.value;
                best_mu.copy_from_slice(&mu);
                best_powers.clone_from(&ev.powers);
            }

            let eta = cfg.step.at(n);
            delivered.iter_mut().for_each(|d| *d = 0.0);
            for (h, pick) in ev.chosen.iter().enumerate() {
                if let Some((s, pw)) = *pick {
                    t_sum[h][s] += eta * frame;
                    let q = inst.states.rows[h].prob;
                    let a = &inst.noise_over_gain[h];
                    for &i in &self.by_stream[s] {
                        delivered[i] += self.c * q * frame * (pw / a[self.slots[i].user]).ln_1p();
                    }
                }
            }
            for (b, &vi) in ev.vertex.iter().enumerate() {
                for &(l, y) in &p.blocks[b].vertices[vi].y {
                    y_sum[b][l] += eta * y;
                }
            }
            w_sum += eta;

            let mut max_lambda = 0.0f64;
            for (i, slot) in self.slots.iter().enumerate() {
                let vi = ev.vertex[slot.block];
                let y = p.blocks[slot.block].vertices[vi]
                    .y
                    .iter()
                    .find(|(l, _)| *l == slot.level)
                    .map(|(_, y)| *y)
                    .unwrap_or(0.0);
                let sub = (slot.cap * y - delivered[i]) / slot.cap;
                lambda[i] = (lambda[i] + eta * sub).max(0.0);
                max_lambda = max_lambda.max(lambda[i]);
            }
            if !max_lambda.is_finite() || max_lambda > DIVERGENCE_LIMIT {
                return Err(Error::Divergence {
                    iterations,
                    max_multiplier: max_lambda,
                });
            }

            let last = n + 1 == cfg.max_iterations;
            if (n + 1) % cfg.check_every == 0 || last {
                let t_avg: Vec<Vec<f64>> = t_sum.iter().map(|r| r.iter().map(|t| t / w_sum).collect()).collect();
                let y_avg: Vec<Vec<f64>> = y_sum.iter().map(|r| r.iter().map(|y| y / w_sum).collect()).collect();
                pool.add_powers(&ev.powers);
                pool.add_powers(&best_powers);
                if let Some(prices) = self.master_prices(&pool, best.value, &best_mu, radius) {
                    let ev3 = self.evaluate(&prices);
                    max_dual = max_dual.max(ev3.value);
                    pool.add_powers(&ev3.powers);
                    if ev3.value > best_dual {
                        best_dual = ev3.value;
                        best_mu.copy_from_slice(&prices);
                        for i in 0..scale.len() {
                            if prices[i] > 0.0 {
                                scale[i] = prices[i];
                                lambda[i] = 1.0;
                            } else {
                                lambda[i] = 0.0;
                            }
                        }
                        best_powers = ev3.powers;
                        radius = (radius * radius).clamp(INITIAL_RADIUS, MAX_RADIUS);
                        null_steps = 0;
                    } else {
                        null_steps += 1;
                        radius = if null_steps % NULL_RESET == 0 {
                            INITIAL_RADIUS.powi(1 << (null_steps / NULL_RESET).min(4))
                        } else {
                            radius.sqrt().max(MIN_RADIUS)
                        };
                    }
                }
                let mut candidates = Vec::with_capacity(2);
                candidates.extend(self.recover(&t_avg, y_avg));
                if let Some((t_lp, y_lp)) = self.solve_lp(&mut pool, best.value) {
                    candidates.extend(self.recover(&t_lp, y_lp));
                }
                for rec in candidates {
                    // prices certified by a recovered airtime often bound better than the iterate
                    let mut candidate = mu.clone();
                    for (i, pr) in rec.prices.iter().enumerate() {
                        if let Some(pr) = pr {
                            candidate[i] = *pr;
                        }
                    }
                    let ev2 = self.evaluate(&candidate);
                    max_dual = max_dual.max(ev2.value);
                    if ev2.value > best_dual {
                        best_dual = ev2.value;
                        best_mu.copy_from_slice(&candidate);
                        for i in 0..scale.len() {
                            if candidate[i] > 0.0 {
                                scale[i] = candidate[i];
                                lambda[i] = 1.0;
                            } else {
                                lambda[i] = candidate[i] / scale[i];
                            }
                        }
                        t_sum.iter_mut().for_each(|r| r.iter_mut().for_each(|v| *v = 0.0));
                        y_sum.iter_mut().for_each(|r| r.iter_mut().for_each(|v| *v = 0.0));
                        w_sum = 0.0;
                        pool.add_powers(&ev2.powers);
                        best_powers = ev2.powers;
                    }
                    pool.add_alloc(&rec.alloc, &self.stream_slots);
                    if rec.value < best.value {
                        best = rec;
                    }
                }
                if cfg.trace {
                    trace.push(TraceRecord {
                        run: p.tag.0,
                        ccp_iteration: p.tag.1,
                        iteration: iterations,
                        dual_value: best_dual,
                        primal_value: best.value,
                        gap: relative_gap(best.value, best_dual),
                        penalty_residual: 0.0,
                    });
                }
                if relative_gap(best.value, best_dual) <= cfg.gap_tol {
                    converged = true;
                    break;
                }
            }
        }
        Ok(self.finish(best, best_dual, iterations, converged, max_dual, best_mu, trace))
    }

    /// Price scale per slot: the certified price where the slot carries demand,
    /// otherwise the largest price on the same stream, block, or anywhere.
    fn fallback_scales(&self, prices: &[Option<f64>]) -> Vec<f64> {
        let positive = |it: &mut dyn Iterator<Item = usize>| -> Option<f64> {
            it.filter_map(|i| prices[i]).filter(|p| *p > 0.0).fold(None, |acc, p| Some(acc.map_or(p, |a: f64| a.max(p))))
        };
        let global = positive(&mut (0..self.slots.len())).unwrap_or(1.0);
        self.slots
            .iter()
            .enumerate()
            .map(|(i, s)| {
                prices[i]
                    .filter(|p| *p > 0.0)
                    .or_else(|| positive(&mut self.by_stream[s.stream].iter().copied()))
                    .or_else(|| positive(&mut (0..self.slots.len()).filter(|&j| self.slots[j].block == s.block)))
                    .unwrap_or(global)
            })
            .collect()
    }

    #[allow(clippy::too_many_arguments)]
    fn finish(
        &self,
        best: Recovered,
        dual: f64,
        iterations: usize,
        converged: bool,
        max_dual: f64,
        prices: Vec<f64>,
        trace: Vec<TraceRecord>,
    ) -> EngineOutput {
        let dual = if self.slots.is_empty() { best.value } else { dual };
        EngineOutput {
            gap: relative_gap(best.value, dual),
            weak_excess: if max_dual.is_finite() { max_dual - best.value } else { 0.0 },
            y: best.y,
            alloc: best.alloc,
            energy: best.energy,
            dual,
            iterations,
            converged,
            prices,
            trace,
        }
    }
}


/// Most power columns kept per (state, stream).
const POOL_CAP: usize = 8;
/// Power columns are kept only with SNR inside `[1 / SNR_RANGE, SNR_RANGE]` for some user.
const SNR_RANGE: f64 = 1e15;
/// Master prices may grow at most this factor beyond the largest anchor price.
const MASTER_BOX: f64 = 1e3;
/// Relative trust region of the master prices around the best prices so far.
const INITIAL_RADIUS: f64 = 4.0;
const MIN_RADIUS: f64 = 1.0 + 1e-6;
const MAX_RADIUS: f64 = 1e6;
/// Consecutive master steps without dual progress before the trust region is widened again.
const NULL_RESET: usize = 6;

/// Candidate power ratios per (state, carrying stream) for the recovery LP.
struct ColumnPool {
    powers: Vec<Vec<Vec<f64>>>,
    used: Vec<Vec<Vec<bool>>>,
    /// Admissible power range per state.
    range: Vec<(f64, f64)>,
}

impl ColumnPool {
    fn new(inst: &Instance, streams: usize) -> Self {
        let states = inst.states.len();
        let range = inst
            .noise_over_gain
            .iter()
            .map(|a| {
                let lo = a.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = a.iter().copied().fold(0.0, f64::max);
                (lo / SNR_RANGE, hi * SNR_RANGE)
            })
            .collect();
        Self {
            powers: vec![vec![Vec::new(); streams]; states],
            used: vec![vec![Vec::new(); streams]; states],
            range,
        }
    }

    fn add(&mut self, h: usize, js: usize, pw: f64) {
        let (lo, hi) = self.range[h];
        if !(pw >= lo && pw <= hi) {
            return;
        }
        let list = &mut self.powers[h][js];
        if list.iter().any(|q| (q - pw).abs() <= 1e-9 * pw) {
            return;
        }
        let used = &mut self.used[h][js];
        if list.len() >= POOL_CAP {
            let drop = used.iter().position(|u| !u).unwrap_or(0);
            list.remove(drop);
            used.remove(drop);
        }
        list.push(pw);
        used.push(false);
    }

    fn add_powers(&mut self, powers: &[Vec<f64>]) {
        for (h, row) in powers.iter().enumerate() {
            for (js, &pw) in row.iter().enumerate() {
                self.add(h, js, pw);
            }
        }
    }

    fn add_alloc(&mut self, alloc: &Allocation, stream_slots: &[(usize, Vec<usize>)]) {
        for h in 0..alloc.time.len() {
            for (js, (s, _)) in stream_slots.iter().enumerate() {
                let t = alloc.time[h][*s];
                if t > 0.0 {
                    self.add(h, js, alloc.energy[h][*s] / t);
                }
            }
        }
    }

    fn mark_used(&mut self, used: Vec<Vec<Vec<usize>>>) {
        for (h, row) in used.into_iter().enumerate() {
            for (js, list) in row.into_iter().enumerate() {
                let flags = &mut self.used[h][js];
                flags.iter_mut().for_each(|f| *f = false);
                for ci in list {
                    flags[ci] = true;
                }
            }
        }
    }
}

pub(crate) fn run_engine(params: &EngineParams<'_>) -> Result<EngineOutput> {
    params.config.validate()?;
    if params.y_start.len() != params.blocks.len() {
        return invalid("starting selectors do not match the blocks");
    }
    Engine::new(params).run()
}

/// Selector of one (group, user) pair held fixed during a continuous solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedBlock {
    pub group: usize,
    pub user: usize,
    /// Selector per level, lowest level first.
    pub y: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FixedSelection {
    pub blocks: Vec<FixedBlock>,
}

impl FixedSelection {
    /// Every user of every group receives exactly one level, given by `level_of(group, user)`.
    pub fn from_levels(inst: &Instance, mut level_of: impl FnMut(usize, usize) -> u32) -> Self {
        let levels = inst.levels();
        let blocks = inst
            .groups
            .iter()
            .enumerate()
            .flat_map(|(g, grp)| grp.users.iter().map(move |&k| (g, k)))
            .map(|(g, k)| {
                let mut y = vec![0.0; levels];
                y[level_of(g, k) as usize - 1] = 1.0;
                FixedBlock { group: g, user: k, y }
            })
            .collect();
        Self { blocks }
    }
}

/// Result of a continuous solve with the level selection held fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousSolution {
    pub alloc: Allocation,
    /// Expected energy per frame of `alloc`.
    pub energy: f64,
    pub dual_value: f64,
    pub gap: f64,
    pub iterations: usize,
    pub converged: bool,
    pub weak_duality_excess: f64,
    /// Final price per (block, level) slot with positive selector.
    pub prices: Vec<f64>,
    pub trace: Vec<TraceRecord>,
}

/// Minimum expected transmission energy for a fixed level selection.
pub fn solve_dual(inst: &Instance, selection: &FixedSelection, config: &SolverConfig) -> Result<ContinuousSolution> {
    let levels = inst.levels();
    let mut blocks = Vec::with_capacity(selection.blocks.len());
    let mut y_start = Vec::with_capacity(selection.blocks.len());
    for b in &selection.blocks {
        let grp = inst
            .groups
            .get(b.group)
            .ok_or_else(|| Error::InvalidInput(format!("group {} out of range", b.group)))?;
        if !grp.users.contains(&b.user) {
            return invalid(format!("user {} is not in group {}", b.user, b.group));
        }
        if b.y.len() != levels || b.y.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return invalid(format!("selector of group {} user {} is malformed", b.group, b.user));
        }
        blocks.push(EngineBlock {
            group: b.group,
            user: b.user,
            vertices: vec![Vertex {
                y: b.y.iter().copied().enumerate().filter(|(_, v)| *v > 0.0).collect(),
                cost: 0.0,
            }],
            linear: vec![0.0; levels],
            level_cost: vec![0.0; levels],
        });
        y_start.push(b.y.clone());
    }
    let out = run_engine(&EngineParams {
        inst,
        blocks: &blocks,
        constant: 0.0,
        y_start: &y_start,
        warm: None,
        config,
        tag: (0, 0),
    })?;
    Ok(ContinuousSolution {
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
