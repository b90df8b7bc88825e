//! The four streaming cases (with or without user transcoding, absolute or relative
//! smoothness), their objective, the baselines, and the ordering check between cases.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::channel::{enumerate_system_states, ChannelModel, PhysicalConfig, SystemStateTable, DEFAULT_STATE_CAP};
use crate::error::{invalid, Error, Result};
use crate::solver::{
    ccp_solve, solve_dual, Allocation, BandBlock, Diagnostics, FixedBlock, FixedSelection, GroupSpec, Hinge, Instance,
    SolverConfig,
};
use crate::tiling::{build_partition, FovRequest, Partition, TileGroup, UserId, VideoGeometry};

/// Transcoding power per level reduction of every user, in watts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserCompute {
    pub power_w: Vec<f64>,
}

impl UserCompute {
    pub fn uniform(users: usize, power_w: f64) -> Self {
        Self {
            power_w: vec![power_w; users],
        }
    }

    /// `kappa * cycles * frame_rate * f^2` from the chip energy coefficient, the CPU cycles
    /// needed per level reduction and the CPU frequency.
    pub fn derived_power(kappa: f64, cycles: f64, frame_rate: f64, f_hz: f64) -> f64 {
        kappa * cycles * frame_rate * f_hz * f_hz
    }

    pub fn validate(&self, users: usize) -> Result<()> {
        if self.power_w.len() != users {
            return invalid(format!("{} transcoding powers for {users} users", self.power_w.len()));
        }
        if self.power_w.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
            return invalid("transcoding power must be finite and non-negative");
        }
        Ok(())
    }
}

/// A complete problem instance. `users[i]`, `channel.per_user_states[i]` and
/// `compute.power_w[i]` describe the same user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub geometry: VideoGeometry,
    pub phys: PhysicalConfig,
    pub users: Vec<FovRequest>,
    pub channel: ChannelModel,
    pub compute: UserCompute,
    #[serde(default = "default_state_cap")]
    pub state_cap: usize,
}

fn default_state_cap() -> usize {
    DEFAULT_STATE_CAP
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        self.phys.validate()?;
        self.channel.validate()?;
        let k = self.users.len();
        if self.channel.users() != k {
            return invalid(format!("channel model covers {} users, scenario has {k}", self.channel.users()));
        }
        self.compute.validate(k)?;
        for u in &self.users {
            if u.tiles.is_empty() {
                return invalid(format!("user {} requests no tiles", u.user));
            }
            if u.requirement < 1 || u.requirement as usize > self.geometry.levels() {
                return invalid(format!("user {} requires level {} outside 1..={}", u.user, u.requirement, self.geometry.levels()));
            }
            if let Some(t) = u.tiles.iter().find(|t| !self.geometry.contains(**t)) {
                return invalid(format!("user {} requests tile {t} outside the grid", u.user));
            }
        }
        Ok(())
    }

    pub fn partition(&self) -> Result<Partition> {
        build_partition(&self.users)
    }

    pub fn states(&self) -> Result<SystemStateTable> {
        enumerate_system_states(&self.channel, self.state_cap)
    }

    pub(crate) fn position(&self) -> BTreeMap<UserId, usize> {
        self.users.iter().enumerate().map(|(i, u)| (u.user, i)).collect()
    }

    /// Solver instance for the given tile groups.
    pub fn instance(&self, groups: &[TileGroup], states: SystemStateTable) -> Result<Instance> {
        let pos = self.position();
        let specs = groups
            .iter()
            .map(|g| {
                let users = g
                    .users
                    .iter()
                    .map(|u| pos.get(u).copied().ok_or_else(|| Error::InvalidInput(format!("unknown user {u}"))))
                    .collect::<Result<Vec<_>>>()?;
                Ok(GroupSpec {
                    users,
                    tiles: g.tile_count(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Instance::new(self.phys, self.geometry.encoding_rates.clone(), specs, states)
    }

    pub(crate) fn requirement(&self, user: UserId) -> u32 {
        self.users.iter().find(|u| u.user == user).map(|u| u.requirement).unwrap_or(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transcoding {
    With,
    Without,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Smoothness {
    Absolute,
    Relative,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaseSpec {
    pub transcoding: Transcoding,
    pub smoothness: Smoothness,
    /// Tolerated quality variation, used with relative smoothness.
    pub delta: u32,
    /// Weight of transcoding energy against transmission energy.
    pub beta: f64,
}

impl CaseSpec {
    pub fn new(transcoding: Transcoding, smoothness: Smoothness, delta: u32, beta: f64) -> Self {
        Self {
            transcoding,
            smoothness,
            delta,
            beta,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 1.0) || !self.beta.is_finite() {
            return invalid(format!("beta must be a finite value >= 1, got {}", self.beta));
        }
        Ok(())
    }

    /// Relative smoothness with zero tolerance behaves exactly like absolute smoothness.
    pub fn is_degenerate(&self) -> bool {
        self.smoothness == Smoothness::Relative && self.delta == 0
    }

    pub fn label(&self) -> &'static str {
        match (self.transcoding, self.smoothness) {
            (Transcoding::Without, Smoothness::Absolute) => "wo-a",
            (Transcoding::Without, Smoothness::Relative) => "wo-r",
            (Transcoding::With, Smoothness::Absolute) => "w-a",
            (Transcoding::With, Smoothness::Relative) => "w-r",
        }
    }

    /// Admissible transmitted levels for a user with requirement `r`.
    pub fn band(&self, r: u32, levels: u32) -> (u32, u32) {
        match (self.transcoding, self.smoothness) {
            (Transcoding::Without, Smoothness::Absolute) => (r, r),
            (Transcoding::Without, Smoothness::Relative) => (r, (r + self.delta).min(levels)),
            (Transcoding::With, _) => (r, levels),
        }
    }

    /// Playback level for a user with requirement `r` receiving `level`.
    pub fn playback(&self, r: u32, level: f64) -> f64 {
        match (self.transcoding, self.smoothness) {
            (Transcoding::Without, _) => level,
            (Transcoding::With, Smoothness::Absolute) => r as f64,
            (Transcoding::With, Smoothness::Relative) => apply_theorem2(level, r, self.delta),
        }
    }
}

/// Case identifier as used on the command line: `wo-a`, `wo-r`, `w-a` or `w-r`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CaseKind {
    #[serde(rename = "wo-a")]
    WoA,
    #[serde(rename = "wo-r")]
    WoR,
    #[serde(rename = "w-a")]
    WA,
    #[serde(rename = "w-r")]
    WR,
}

impl CaseKind {
    pub const ALL: [CaseKind; 4] = [CaseKind::WoA, CaseKind::WoR, CaseKind::WA, CaseKind::WR];

    pub fn spec(self, delta: u32, beta: f64) -> CaseSpec {
        let (t, s) = match self {
            CaseKind::WoA => (Transcoding::Without, Smoothness::Absolute),
            CaseKind::WoR => (Transcoding::Without, Smoothness::Relative),
            CaseKind::WA => (Transcoding::With, Smoothness::Absolute),
            CaseKind::WR => (Transcoding::With, Smoothness::Relative),
        };
        CaseSpec::new(t, s, delta, beta)
    }
}

impl FromStr for CaseKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wo-a" => Ok(CaseKind::WoA),
            "wo-r" => Ok(CaseKind::WoR),
            "w-a" => Ok(CaseKind::WA),
            "w-r" => Ok(CaseKind::WR),
            _ => invalid(format!("unknown case '{s}', expected wo-a, wo-r, w-a or w-r")),
        }
    }
}

impl fmt::Display for CaseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.spec(0, 1.0).label())
    }
}

/// Levels chosen for one user of one tile group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionEntry {
    /// Index into the result's group list.
    pub group: usize,
    pub user: UserId,
    /// Playback level.
    pub x: f64,
    /// Transmission selector per level, lowest first.
    pub y: Vec<f64>,
}

impl SelectionEntry {
    /// `sum_l l y_l`: the transmitted level when `y` is binary.
    pub fn transmitted(&self) -> f64 {
        self.y.iter().enumerate().map(|(l, v)| (l + 1) as f64 * v).sum()
    }

    /// The selected level of a binary selector.
    pub fn level(&self) -> Option<u32> {
        let ones: Vec<usize> = (0..self.y.len()).filter(|&l| self.y[l] == 1.0).collect();
        match (ones.as_slice(), self.y.iter().all(|v| *v == 0.0 || *v == 1.0)) {
            ([l], true) => Some(*l as u32 + 1),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QualitySelection {
    pub entries: Vec<SelectionEntry>,
}

/// Every (group, user) pair in group order, users in ascending id order.
pub(crate) fn blocks_of(groups: &[TileGroup]) -> Vec<(usize, UserId)> {
    groups
        .iter()
        .enumerate()
        .flat_map(|(g, grp)| grp.users.iter().map(move |&u| (g, u)))
        .collect()
}

/// Selection with every user receiving exactly its required level.
pub fn fix_y_absolute(partition: &Partition, requirements: &BTreeMap<UserId, u32>, levels: u32) -> Result<QualitySelection> {
    let entries = blocks_of(&partition.groups)
        .into_iter()
        .map(|(g, u)| {
            let r = *requirements
                .get(&u)
                .ok_or_else(|| Error::InvalidInput(format!("no requirement for user {u}")))?;
            if r < 1 || r > levels {
                return invalid(format!("requirement {r} of user {u} outside 1..={levels}"));
            }
            let mut y = vec![0.0; levels as usize];
            y[r as usize - 1] = 1.0;
            Ok(SelectionEntry {
                group: g,
                user: u,
                x: r as f64,
                y,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(QualitySelection { entries })
}

/// Playback level under relative smoothness with transcoding: `min(r + delta, transmitted)`.
pub fn apply_theorem2(transmitted: f64, r: u32, delta: u32) -> f64 {
    transmitted.min((r + delta) as f64)
}

/// Expected transmission energy plus `beta` times the transcoding energy per frame.
pub fn objective(
    case: &CaseSpec,
    alloc: &Allocation,
    sel: &QualitySelection,
    states: &SystemStateTable,
    groups: &[TileGroup],
    scenario: &Scenario,
) -> Result<f64> {
    if alloc.time.len() != states.len() || alloc.energy.len() != states.len() {
        return invalid("allocation does not match the channel states");
    }
    let transmission = alloc.expected_energy(states);
    Ok(transmission + transcoding_energy(case, sel, groups, scenario)?)
}

/// `beta * sum |P_S| P_k T (transmitted - x)`, zero without transcoding.
pub fn transcoding_energy(case: &CaseSpec, sel: &QualitySelection, groups: &[TileGroup], scenario: &Scenario) -> Result<f64> {
    let pos = scenario.position();
    let mut total = 0.0;
    for e in &sel.entries {
        let slack = e.transmitted() - e.x;
        if slack < -1e-9 {
            return Err(Error::InvalidSelection(format!(
                "user {} plays level {} above the transmitted level {}",
                e.user,
                e.x,
                e.transmitted()
            )));
        }
        if case.transcoding == Transcoding::Without {
            continue;
        }
        let grp = groups
            .get(e.group)
            .ok_or_else(|| Error::InvalidSelection(format!("group {} out of range", e.group)))?;
        let k = *pos
            .get(&e.user)
            .ok_or_else(|| Error::InvalidSelection(format!("unknown user {}", e.user)))?;
        total += case.beta * grp.tile_count() as f64 * scenario.compute.power_w[k] * scenario.phys.frame_s * slack.max(0.0);
    }
    Ok(total)
}

/// Outcome of solving one case or baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    pub scheme: String,
    pub case: CaseSpec,
    /// Objective in joules per frame.
    pub objective: f64,
    pub transmission_energy: f64,
    pub transcoding_energy: f64,
    /// Tile groups the allocation is indexed by.
    pub groups: Vec<TileGroup>,
    pub selection: QualitySelection,
    pub allocation: Allocation,
    pub diagnostics: Diagnostics,
}

impl SolveResult {
    /// Transmitted level per (group user set, user).
    pub fn levels(&self) -> Vec<(Vec<UserId>, UserId, Option<u32>)> {
        self.selection
            .entries
            .iter()
            .map(|e| (self.groups[e.group].users.clone(), e.user, e.level()))
            .collect()
    }
}

fn selection_from_levels(case: &CaseSpec, scenario: &Scenario, groups: &[TileGroup], levels: &[u32]) -> QualitySelection {
    let l = scenario.geometry.levels();
    let entries = blocks_of(groups)
        .into_iter()
        .zip(levels)
        .map(|((g, u), &lv)| {
            let mut y = vec![0.0; l];
            y[lv as usize - 1] = 1.0;
            SelectionEntry {
                group: g,
                user: u,
                x: case.playback(scenario.requirement(u), lv as f64),
                y,
            }
        })
        .collect();
    QualitySelection { entries }
}

/// Solves the continuous part for a fixed level per block and assembles the result.
pub(crate) fn solve_fixed(
    scheme: &str,
    case: &CaseSpec,
    scenario: &Scenario,
    groups: Vec<TileGroup>,
    levels: &[u32],
    config: &SolverConfig,
) -> Result<SolveResult> {
    let inst = scenario.instance(&groups, scenario.states()?)?;
    let pos = scenario.position();
    let fixed = FixedSelection {
        blocks: blocks_of(&groups)
            .into_iter()
            .zip(levels)
            .map(|((g, u), &lv)| {
                let mut y = vec![0.0; inst.levels()];
                y[lv as usize - 1] = 1.0;
                FixedBlock {
                    group: g,
                    user: pos[&u],
                    y,
                }
            })
            .collect(),
    };
    let sol = solve_dual(&inst, &fixed, config)?;
    let selection = selection_from_levels(case, scenario, &groups, levels);
    let trans = transcoding_energy(case, &selection, &groups, scenario)?;
    Ok(SolveResult {
        scheme: scheme.to_string(),
        case: *case,
        objective: sol.energy + trans,
        transmission_energy: sol.energy,
        transcoding_energy: trans,
        groups,
        selection,
        allocation: sol.alloc,
        diagnostics: Diagnostics {
            dual_value: sol.dual_value + trans,
            primal_value: sol.energy + trans,
            gap: sol.gap,
            iterations: sol.iterations,
            converged: sol.converged,
            weak_duality_excess: sol.weak_duality_excess,
            trace: sol.trace,
            ..Default::default()
        },
    })
}

/// Admissible level band and hinge of every block of `groups`.
pub fn band_blocks(case: &CaseSpec, scenario: &Scenario, groups: &[TileGroup]) -> Vec<BandBlock> {
    let pos = scenario.position();
    let levels = scenario.geometry.levels() as u32;
    blocks_of(groups)
        .into_iter()
        .map(|(g, u)| {
            let k = pos[&u];
            let r = scenario.users[k].requirement;
            let (lo, hi) = case.band(r, levels);
            let hinge = match (case.transcoding, case.smoothness) {
                (Transcoding::Without, _) => Hinge::zero(),
                (Transcoding::With, s) => Hinge {
                    coef: case.beta * groups[g].tile_count() as f64 * scenario.compute.power_w[k] * scenario.phys.frame_s,
                    threshold: match s {
                        Smoothness::Absolute => r as f64,
                        Smoothness::Relative => (r + case.delta) as f64,
                    },
                },
            };
            BandBlock {
                group: g,
                user: k,
                lo,
                hi,
                hinge,
            }
        })
        .collect()
}

/// Highest requirement in every group.
fn group_max(scenario: &Scenario, groups: &[TileGroup]) -> Vec<u32> {
    groups
        .iter()
        .map(|g| g.users.iter().map(|&u| scenario.requirement(u)).max().unwrap_or(1))
        .collect()
}

/// Solves one case on the scenario's partition.
pub fn solve_case(case: &CaseSpec, scenario: &Scenario, config: &SolverConfig) -> Result<SolveResult> {
    case.validate()?;
    scenario.validate()?;
    let groups = scenario.partition()?.groups;
    let required: Vec<u32> = blocks_of(&groups).iter().map(|&(_, u)| scenario.requirement(u)).collect();
    if case.transcoding == Transcoding::Without && case.smoothness == Smoothness::Absolute {
        return solve_fixed(case.label(), case, scenario, groups, &required, config);
    }

    let inst = scenario.instance(&groups, scenario.states()?)?;
    let blocks = band_blocks(case, scenario, &groups);
    // deterministic starts: everyone at its requirement, and everyone as close as the band
    // allows to the highest requirement of its group (the cheapest shared level)
    let gmax = group_max(scenario, &groups);
    let shared: Vec<u32> = blocks.iter().map(|b| gmax[b.group].clamp(b.lo, b.hi)).collect();
    let mut starts = vec![required];
    if !starts.contains(&shared) {
        starts.push(shared);
    }
    let out = ccp_solve(&inst, &blocks, &starts, config)?;
    let selection = selection_from_levels(case, scenario, &groups, &out.levels);
    let trans = transcoding_energy(case, &selection, &groups, scenario)?;
    Ok(SolveResult {
        scheme: case.label().to_string(),
        case: *case,
        objective: out.energy + trans,
        transmission_energy: out.energy,
        transcoding_energy: trans,
        groups,
        selection,
        allocation: out.alloc,
        diagnostics: out.diagnostics,
    })
}

/// Every user served on its own with its whole tile set at its required level.
pub fn baseline_unicast(scenario: &Scenario, config: &SolverConfig) -> Result<SolveResult> {
    scenario.validate()?;
    let groups: Vec<TileGroup> = scenario
        .users
        .iter()
        .map(|u| TileGroup {
            users: vec![u.user],
            tiles: u.tiles.clone(),
        })
        .collect();
    let levels: Vec<u32> = scenario.users.iter().map(|u| u.requirement).collect();
    let case = CaseKind::WoA.spec(0, 1.0);
    solve_fixed("unicast", &case, scenario, groups, &levels, config)
}

/// Every group transmitted once at the highest requirement among its users; users with a
/// lower requirement transcode down to it (absolute) or to `r + delta` (relative).
pub fn baseline_max_quality(scenario: &Scenario, smoothness: Smoothness, delta: u32, beta: f64, config: &SolverConfig) -> Result<SolveResult> {
    scenario.validate()?;
    let case = CaseSpec::new(Transcoding::With, smoothness, delta, beta);
    case.validate()?;
    let groups = scenario.partition()?.groups;
    let gmax = group_max(scenario, &groups);
    let levels: Vec<u32> = blocks_of(&groups).iter().map(|&(g, _)| gmax[g]).collect();
    let scheme = match smoothness {
        Smoothness::Absolute => "baseline-w-a",
        Smoothness::Relative => "baseline-w-r",
    };
    solve_fixed(scheme, &case, scenario, groups, &levels, config)
}

/// Objectives of the four cases on one scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaseValues {
    pub wo_a: f64,
    pub wo_r: f64,
    pub w_a: f64,
    pub w_r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingCheck {
    pub relation: String,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingReport {
    pub checks: Vec<OrderingCheck>,
}

impl OrderingReport {
    pub fn all_hold(&self) -> bool {
        self.checks.iter().all(|c| c.holds)
    }
}

impl fmt::Display for OrderingReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(
                f,
                "{} {}: {:.9e} vs {:.9e}",
                if c.holds { "PASS" } else { "FAIL" },
                c.relation,
                c.lhs,
                c.rhs
            )?;
        }
        Ok(())
    }
}

/// Checks the four orderings implied by nested feasible sets:
/// `wo-r <= wo-a`, `w-r <= w-a`, `w-a <= wo-a`, `w-r <= wo-r`.
/// Each holds when `lhs <= rhs + abs_slack + rel_slack * |rhs|`.
pub fn check_ordering(values: &CaseValues, abs_slack: f64, rel_slack: f64) -> OrderingReport {
    let pairs = [
        ("E(wo-r) <= E(wo-a)", values.wo_r, values.wo_a),
        ("E(w-r) <= E(w-a)", values.w_r, values.w_a),
        ("E(w-a) <= E(wo-a)", values.w_a, values.wo_a),
        ("E(w-r) <= E(wo-r)", values.w_r, values.wo_r),
    ];
    OrderingReport {
        checks: pairs
            .iter()
            .map(|&(name, lhs, rhs)| OrderingCheck {
                relation: name.to_string(),
                lhs,
                rhs,
                holds: lhs <= rhs + abs_slack + rel_slack * rhs.abs(),
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tiling::TileIndex;
    use std::collections::BTreeSet;

    fn tiles(list: &[(usize, usize)]) -> BTreeSet<TileIndex> {
        list.iter().map(|&(row, col)| TileIndex { row, col }).collect()
    }

    fn scenario(reqs: &[(Vec<(usize, usize)>, u32)]) -> Scenario {
        let users: Vec<FovRequest> = reqs
            .iter()
            .enumerate()
            .map(|(i, (t, r))| FovRequest {
                user: i as u32 + 1,
                tiles: tiles(t),
                requirement: *r,
            })
            .collect();
        Scenario {
            geometry: VideoGeometry::new(2, 4, vec![6.66e5, 16.18e5, 24.29e5], 30.0).unwrap(),
            phys: PhysicalConfig::default(),
            channel: ChannelModel::two_state(users.len(), 1e-6),
            compute: UserCompute::uniform(users.len(), 2e-5),
            users,
            state_cap: DEFAULT_STATE_CAP,
        }
    }

    #[test]
    fn theorem2_examples() {
        assert_eq!(apply_theorem2(3.0, 1, 1), 2.0);
        assert_eq!(apply_theorem2(2.0, 2, 1), 2.0);
        for l in 1..=5u32 {
            for r in 1..=l {
                for d in 0..=5u32 {
                    let x = apply_theorem2(l as f64, r, d);
                    assert_eq!(x, if r + d < l { (r + d) as f64 } else { l as f64 });
                    assert!(x >= r as f64 && x <= (r + d) as f64 && x <= l as f64);
                }
            }
        }
    }

    #[test]
    fn transcoding_term_arithmetic() {
        // one group of two tiles, user transmits level 3 and plays level 1
        let sc = scenario(&[(vec![(1, 1), (1, 2)], 1)]);
        let groups = sc.partition().unwrap().groups;
        let sel = QualitySelection {
            entries: vec![SelectionEntry {
                group: 0,
                user: 1,
                x: 1.0,
                y: vec![0.0, 0.0, 1.0],
            }],
        };
        let case = CaseKind::WA.spec(0, 1.0);
        let t = transcoding_energy(&case, &sel, &groups, &sc).unwrap();
        assert!((t - 4e-6).abs() < 1e-18);
        let bad = QualitySelection {
            entries: vec![SelectionEntry { x: 3.0, y: vec![1.0, 0.0, 0.0], ..sel.entries[0].clone() }],
        };
        assert!(matches!(transcoding_energy(&case, &bad, &groups, &sc), Err(Error::InvalidSelection(_))));
    }

    #[test]
    fn fixed_selection_has_one_level_per_block() {
        let sc = scenario(&[(vec![(1, 1), (1, 2)], 3), (vec![(1, 2)], 1)]);
        let req: BTreeMap<UserId, u32> = sc.users.iter().map(|u| (u.user, u.requirement)).collect();
        let sel = fix_y_absolute(&sc.partition().unwrap(), &req, 3).unwrap();
        assert_eq!(sel.entries.len(), 3);
        for e in &sel.entries {
            assert_eq!(e.y.iter().sum::<f64>(), 1.0);
            assert_eq!(e.level(), Some(req[&e.user]));
        }
    }

    #[test]
    fn case_labels_round_trip() {
        for k in CaseKind::ALL {
            assert_eq!(k.to_string().parse::<CaseKind>().unwrap(), k);
        }
        assert!("x-y".parse::<CaseKind>().is_err());
    }

    #[test]
    fn ordering_report_flags_violations() {
        let v = CaseValues {
            wo_a: 1.0,
            wo_r: 0.9,
            w_a: 0.95,
            w_r: 0.88,
        };
        assert!(check_ordering(&v, 0.0, 0.0).all_hold());
        let bad = CaseValues { w_r: 0.96, ..v };
        let rep = check_ordering(&bad, 0.0, 0.0);
        assert!(!rep.all_hold());
        assert_eq!(rep.checks.iter().filter(|c| !c.holds).count(), 2);
    }

    #[test]
    fn bands_per_case() {
        assert_eq!(CaseKind::WoA.spec(1, 1.0).band(2, 5), (2, 2));
        assert_eq!(CaseKind::WoR.spec(1, 1.0).band(2, 5), (2, 3));
        assert_eq!(CaseKind::WoR.spec(4, 1.0).band(2, 5), (2, 5));
        assert_eq!(CaseKind::WA.spec(1, 1.0).band(2, 5), (2, 5));
        assert!(CaseKind::WoR.spec(0, 1.0).is_degenerate());
    }
}
