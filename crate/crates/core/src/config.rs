//! Scenario files: the JSON document read by the command-line tool.
//!
//! Every section except `geometry`, `physical` and `users` may be omitted and then takes
//! the simulation defaults. Errors carry the JSON path of the offending field.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::channel::{ChannelModel, ChannelState, PhysicalConfig, DEFAULT_STATE_CAP};
use crate::experiments::{ExperimentParams, Scheme};
use crate::oracle::OracleBudget;
use crate::problems::{CaseKind, CaseSpec, Scenario, UserCompute};
use crate::solver::{SolverConfig, StepSize};
use crate::tiling::{fov_tiles, FovRequest, FovShape, TileIndex, VideoGeometry};

/// A schema or validation failure at `path`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl ConfigError {
    fn at(path: impl Into<String>, message: impl fmt::Display) -> Self {
        Self {
            path: path.into(),
            message: message.to_string(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.path.is_empty() || self.path == "." {
            write!(f, "{}", self.message)
        } else {
            write!(f, "{}: {}", self.path, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

type ConfigResult<T> = std::result::Result<T, ConfigError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub geometry: GeometrySection,
    pub physical: PhysicalSection,
    #[serde(default)]
    pub users: Vec<UserSection>,
    #[serde(default)]
    pub fov: FovSection,
    #[serde(default)]
    pub smoothness: SmoothnessSection,
    #[serde(default)]
    pub transcoding: TranscodingSection,
    #[serde(default)]
    pub channel: ChannelSection,
    #[serde(default)]
    pub solver: SolverSection,
    /// Random scenario generation for sweeps.
    #[serde(default)]
    pub experiment: Option<ExperimentSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometrySection {
    #[serde(rename = "M")]
    pub rows: usize,
    #[serde(rename = "N")]
    pub cols: usize,
    /// Optional; must match the number of encoding rates when given.
    #[serde(rename = "L", default)]
    pub levels: Option<usize>,
    pub encoding_rates: Vec<f64>,
    pub frame_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicalSection {
    pub bandwidth_hz: f64,
    pub frame_s: f64,
    #[serde(default)]
    pub noise_w: Option<f64>,
    #[serde(default)]
    pub temperature_k: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserSection {
    pub id: u32,
    /// FoV centre as (longitude, latitude) in degrees.
    #[serde(default)]
    pub direction_deg: Option<(f64, f64)>,
    /// Explicit 1-based (row, column) tiles.
    #[serde(default)]
    pub tiles: Option<Vec<(usize, usize)>>,
    pub r: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FovSection {
    pub span_deg: (f64, f64),
    pub margin_deg: f64,
}

impl Default for FovSection {
    fn default() -> Self {
        let s = FovShape::default();
        Self {
            span_deg: s.span_deg,
            margin_deg: s.margin_deg,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmoothnessSection {
    pub delta: u32,
}

impl Default for SmoothnessSection {
    fn default() -> Self {
        Self { delta: 1 }
    }
}

/// Per-user transcoding power, one value for everyone or one per user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PowerValue {
    Uniform(f64),
    PerUser(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TranscodingSection {
    #[serde(default = "one")]
    pub beta: f64,
    #[serde(default)]
    pub p_k_w: Option<PowerValue>,
    /// Chip energy coefficient; with `cycles` and `f_hz` it replaces `p_k_w`.
    #[serde(default)]
    pub kappa: Option<f64>,
    #[serde(default)]
    pub cycles: Option<f64>,
    #[serde(default)]
    pub f_hz: Option<f64>,
}

fn one() -> f64 {
    1.0
}

impl Default for TranscodingSection {
    fn default() -> Self {
        Self {
            beta: 1.0,
            p_k_w: None,
            kappa: None,
            cycles: None,
            f_hz: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSection {
    /// One state list per user; a single list is shared by every user.
    /// Absent means two equiprobable gains `d` and `2d` with `d = 1e-6`.
    #[serde(default)]
    pub per_user_states: Option<Vec<Vec<ChannelState>>>,
    #[serde(default)]
    pub state_cap: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub gap: f64,
    pub ccp: f64,
    pub binary: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        let d = SolverConfig::default();
        Self {
            gap: d.gap_tol,
            ccp: d.ccp_tol,
            binary: d.binary_tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RhoSection {
    pub factor: f64,
    pub escalation: f64,
    pub max_multiple: f64,
}

impl Default for RhoSection {
    fn default() -> Self {
        let d = SolverConfig::default();
        Self {
            factor: d.rho_factor,
            escalation: d.rho_escalation,
            max_multiple: d.rho_max_multiple,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub tolerances: Tolerances,
    pub step_size: StepSize,
    pub rho: RhoSection,
    pub restarts: usize,
    pub seed: u64,
    pub max_iterations: usize,
    pub ccp_max_iterations: usize,
    pub check_every: usize,
    /// Largest number of level combinations the oracle may enumerate.
    pub oracle_max_enumerations: u64,
}

impl Default for SolverSection {
    fn default() -> Self {
        let d = SolverConfig::default();
        Self {
            tolerances: Tolerances::default(),
            step_size: d.step,
            rho: RhoSection::default(),
            restarts: d.restarts,
            seed: d.seed,
            max_iterations: d.max_iterations,
            ccp_max_iterations: d.ccp_max_iterations,
            check_every: d.check_every,
            oracle_max_enumerations: OracleBudget::default().max_enumerations,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    #[serde(rename = "K", default = "default_users")]
    pub users: usize,
    #[serde(default)]
    pub gamma: f64,
    #[serde(default = "default_r_lb")]
    pub r_lb: u32,
    #[serde(default = "default_r_ub")]
    pub r_ub: u32,
    #[serde(default = "default_realizations")]
    pub realizations: usize,
    /// Candidate viewing directions, most popular first.
    #[serde(default)]
    pub directions_deg: Option<Vec<(f64, f64)>>,
    #[serde(default)]
    pub schemes: Option<Vec<String>>,
}

fn default_users() -> usize {
    ExperimentParams::default().users
}
fn default_r_lb() -> u32 {
    ExperimentParams::default().r_lb
}
fn default_r_ub() -> u32 {
    ExperimentParams::default().r_ub
}
fn default_realizations() -> usize {
    50
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            users: default_users(),
            gamma: 0.0,
            r_lb: default_r_lb(),
            r_ub: default_r_ub(),
            realizations: default_realizations(),
            directions_deg: None,
            schemes: None,
        }
    }
}

/// Parses a scenario file, reporting the path of the first schema violation.
pub fn parse(text: &str) -> ConfigResult<ScenarioFile> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let file: ScenarioFile = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        ConfigError::at(path, e.into_inner())
    })?;
    file.validate()?;
    Ok(file)
}

pub fn load(path: &Path) -> ConfigResult<ScenarioFile> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::at("", format!("reading {}: {e}", path.display())))?;
    parse(&text)
}

impl ScenarioFile {
    /// Checks everything that does not depend on the command.
    pub fn validate(&self) -> ConfigResult<()> {
        self.geometry()?;
        self.physical()?;
        self.solver_config()?;
        self.transcoding_base()?;
        if !(self.transcoding.beta >= 1.0) || !self.transcoding.beta.is_finite() {
            return Err(ConfigError::at("transcoding.beta", "must be finite and at least 1"));
        }
        let s = &self.fov;
        if !(s.span_deg.0 > 0.0 && s.span_deg.0 <= 360.0 && s.span_deg.1 > 0.0 && s.span_deg.1 <= 180.0) {
            return Err(ConfigError::at("fov.span_deg", "spans must lie in (0, 360] x (0, 180]"));
        }
        if !(s.margin_deg >= 0.0) {
            return Err(ConfigError::at("fov.margin_deg", "must be non-negative"));
        }
        if !self.users.is_empty() {
            self.scenario()?;
        }
        if self.experiment.is_some() {
            self.experiment_params()?;
        }
        Ok(())
    }

    pub fn geometry(&self) -> ConfigResult<VideoGeometry> {
        let g = &self.geometry;
        if let Some(l) = g.levels {
            if l != g.encoding_rates.len() {
                return Err(ConfigError::at(
                    "geometry.L",
                    format!("{l} levels but {} encoding rates", g.encoding_rates.len()),
                ));
            }
        }
        if g.rows == 0 {
            return Err(ConfigError::at("geometry.M", "must be at least 1"));
        }
        if g.cols == 0 {
            return Err(ConfigError::at("geometry.N", "must be at least 1"));
        }
        if !(g.frame_rate > 0.0) || !g.frame_rate.is_finite() {
            return Err(ConfigError::at("geometry.frame_rate", "must be positive"));
        }
        VideoGeometry::new(g.rows, g.cols, g.encoding_rates.clone(), g.frame_rate)
            .map_err(|e| ConfigError::at("geometry.encoding_rates", e))
    }

    pub fn physical(&self) -> ConfigResult<PhysicalConfig> {
        let p = &self.physical;
        let built = match (p.noise_w, p.temperature_k) {
            (Some(n), None) => PhysicalConfig::new(p.bandwidth_hz, p.frame_s, n),
            (None, Some(t)) => PhysicalConfig::with_temperature(p.bandwidth_hz, p.frame_s, t),
            (None, None) => PhysicalConfig::with_temperature(p.bandwidth_hz, p.frame_s, 300.0),
            (Some(_), Some(_)) => {
                return Err(ConfigError::at("physical", "give noise_w or temperature_k, not both"));
            }
        };
        built.map_err(|e| {
            let field = if !(p.bandwidth_hz > 0.0) {
                "physical.bandwidth_hz"
            } else if !(p.frame_s > 0.0) {
                "physical.frame_s"
            } else if p.noise_w.is_some() {
                "physical.noise_w"
            } else {
                "physical.temperature_k"
            };
            ConfigError::at(field, e)
        })
    }

    /// Transcoding power shared by every user, if the file gives a single value.
    fn transcoding_base(&self) -> ConfigResult<Option<f64>> {
        let t = &self.transcoding;
        let derived = [t.kappa, t.cycles, t.f_hz];
        let any_derived = derived.iter().any(Option::is_some);
        match (&t.p_k_w, any_derived) {
            (Some(_), true) => Err(ConfigError::at("transcoding", "give p_k_w or kappa/cycles/f_hz, not both")),
            (Some(PowerValue::Uniform(p)), false) => {
                if *p >= 0.0 && p.is_finite() {
                    Ok(Some(*p))
                } else {
                    Err(ConfigError::at("transcoding.p_k_w", "must be finite and non-negative"))
                }
            }
            (Some(PowerValue::PerUser(list)), false) => {
                if let Some(i) = list.iter().position(|p| !(*p >= 0.0) || !p.is_finite()) {
                    return Err(ConfigError::at(format!("transcoding.p_k_w[{i}]"), "must be finite and non-negative"));
                }
                Ok(None)
            }
            (None, true) => {
                let names = ["transcoding.kappa", "transcoding.cycles", "transcoding.f_hz"];
                for (v, name) in derived.iter().zip(names) {
                    match v {
                        None => return Err(ConfigError::at(name, "missing; kappa, cycles and f_hz go together")),
                        Some(x) if !(*x >= 0.0) || !x.is_finite() => {
                            return Err(ConfigError::at(name, "must be finite and non-negative"));
                        }
                        _ => {}
                    }
                }
                Ok(Some(UserCompute::derived_power(
                    t.kappa.unwrap_or_default(),
                    t.cycles.unwrap_or_default(),
                    self.geometry.frame_rate,
                    t.f_hz.unwrap_or_default(),
                )))
            }
            (None, false) => Ok(Some(ExperimentParams::default().transcoding_power_w)),
        }
    }

    pub fn solver_config(&self) -> ConfigResult<SolverConfig> {
        let s = &self.solver;
        let cfg = SolverConfig {
            gap_tol: s.tolerances.gap,
            ccp_tol: s.tolerances.ccp,
            binary_tol: s.tolerances.binary,
            step: s.step_size,
            rho_factor: s.rho.factor,
            rho_escalation: s.rho.escalation,
            rho_max_multiple: s.rho.max_multiple,
            restarts: s.restarts,
            seed: s.seed,
            max_iterations: s.max_iterations,
            ccp_max_iterations: s.ccp_max_iterations,
            check_every: s.check_every,
            trace: false,
        };
        cfg.validate().map_err(|e| ConfigError::at("solver", e))?;
        Ok(cfg)
    }

    pub fn oracle_budget(&self) -> OracleBudget {
        OracleBudget {
            max_enumerations: self.solver.oracle_max_enumerations,
            ..OracleBudget::default()
        }
    }

    pub fn case(&self, kind: CaseKind) -> CaseSpec {
        kind.spec(self.smoothness.delta, self.transcoding.beta)
    }

    fn fov_shape(&self) -> FovShape {
        FovShape {
            span_deg: self.fov.span_deg,
            margin_deg: self.fov.margin_deg,
        }
    }

    fn channel_model(&self, users: usize) -> ConfigResult<ChannelModel> {
        let model = match &self.channel.per_user_states {
            None => ChannelModel::two_state(users, 1e-6),
            Some(lists) if lists.len() == 1 => ChannelModel {
                per_user_states: vec![lists[0].clone(); users],
            },
            Some(lists) => {
                if lists.len() != users {
                    return Err(ConfigError::at(
                        "channel.per_user_states",
                        format!("{} state lists for {users} users", lists.len()),
                    ));
                }
                ChannelModel {
                    per_user_states: lists.clone(),
                }
            }
        };
        model.validate().map_err(|e| ConfigError::at("channel.per_user_states", e))?;
        Ok(model)
    }

    /// The scenario described by the `users` section.
    pub fn scenario(&self) -> ConfigResult<Scenario> {
        if self.users.is_empty() {
            return Err(ConfigError::at("users", "at least one user is required"));
        }
        let geometry = self.geometry()?;
        let shape = self.fov_shape();
        let mut seen = BTreeSet::new();
        let mut users = Vec::with_capacity(self.users.len());
        for (i, u) in self.users.iter().enumerate() {
            let at = |field: &str| format!("users[{i}].{field}");
            if !seen.insert(u.id) {
                return Err(ConfigError::at(at("id"), format!("duplicate user id {}", u.id)));
            }
            if u.r < 1 || u.r as usize > geometry.levels() {
                return Err(ConfigError::at(at("r"), format!("level {} outside 1..={}", u.r, geometry.levels())));
            }
            let tiles = match (&u.direction_deg, &u.tiles) {
                (Some(dir), None) => fov_tiles(*dir, &shape, &geometry).map_err(|e| ConfigError::at(at("direction_deg"), e))?,
                (None, Some(list)) => {
                    let set: BTreeSet<TileIndex> = list.iter().map(|&t| TileIndex::from(t)).collect();
                    if set.is_empty() {
                        return Err(ConfigError::at(at("tiles"), "empty tile list"));
                    }
                    if let Some(t) = set.iter().find(|t| !geometry.contains(**t)) {
                        return Err(ConfigError::at(at("tiles"), format!("tile {t} outside the {}x{} grid", geometry.rows, geometry.cols)));
                    }
                    set
                }
                _ => return Err(ConfigError::at(format!("users[{i}]"), "give exactly one of direction_deg and tiles")),
            };
            users.push(FovRequest {
                user: u.id,
                tiles,
                requirement: u.r,
            });
        }
        let k = users.len();
        let compute = match (&self.transcoding.p_k_w, self.transcoding_base()?) {
            (Some(PowerValue::PerUser(list)), _) => {
                if list.len() != k {
                    return Err(ConfigError::at("transcoding.p_k_w", format!("{} powers for {k} users", list.len())));
                }
                UserCompute { power_w: list.clone() }
            }
            (_, Some(p)) => UserCompute::uniform(k, p),
            (_, None) => unreachable!("per-user powers handled above"),
        };
        let scenario = Scenario {
            geometry,
            phys: self.physical()?,
            channel: self.channel_model(k)?,
            compute,
            users,
            state_cap: self.channel.state_cap.unwrap_or(DEFAULT_STATE_CAP),
        };
        scenario.validate().map_err(|e| ConfigError::at("users", e))?;
        Ok(scenario)
    }

    /// Generation parameters for sweeps. The channel of the first user applies to everyone.
    pub fn experiment_params(&self) -> ConfigResult<ExperimentParams> {
        let exp = self.experiment.clone().unwrap_or_default();
        self.schemes()?;
        let base = ExperimentParams::default();
        let channel_states = match &self.channel.per_user_states {
            None => base.channel_states.clone(),
            Some(lists) => {
                let first = lists.first().ok_or_else(|| ConfigError::at("channel.per_user_states", "empty"))?;
                if lists.iter().any(|l| l != first) {
                    return Err(ConfigError::at("channel.per_user_states", "generated users need one shared state list"));
                }
                first.clone()
            }
        };
        let power = self
            .transcoding_base()?
            .ok_or_else(|| ConfigError::at("transcoding.p_k_w", "generated users need a single transcoding power"))?;
        let params = ExperimentParams {
            users: exp.users,
            gamma: exp.gamma,
            r_lb: exp.r_lb,
            r_ub: exp.r_ub,
            delta: self.smoothness.delta,
            beta: self.transcoding.beta,
            geometry: self.geometry()?,
            phys: self.physical()?,
            shape: self.fov_shape(),
            directions: exp.directions_deg.clone().unwrap_or(base.directions),
            channel_states,
            transcoding_power_w: power,
            state_cap: self.channel.state_cap.unwrap_or(DEFAULT_STATE_CAP),
        };
        params.validate().map_err(|e| ConfigError::at("experiment", e))?;
        if exp.realizations == 0 {
            return Err(ConfigError::at("experiment.realizations", "must be at least 1"));
        }
        Ok(params)
    }

    pub fn realizations(&self) -> usize {
        self.experiment.as_ref().map_or_else(default_realizations, |e| e.realizations)
    }

    pub fn schemes(&self) -> ConfigResult<Vec<Scheme>> {
        match self.experiment.as_ref().and_then(|e| e.schemes.as_ref()) {
            None => Ok(Scheme::ALL.to_vec()),
            Some(list) => list
                .iter()
                .enumerate()
                .map(|(i, s)| s.parse().map_err(|e| ConfigError::at(format!("experiment.schemes[{i}]"), e)))
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "geometry": {"M": 2, "N": 4, "L": 3, "encoding_rates": [6.66e5, 16.18e5, 24.29e5], "frame_rate": 30},
        "physical": {"bandwidth_hz": 150e6, "frame_s": 0.05, "temperature_k": 300},
        "users": [
            {"id": 1, "tiles": [[1, 1], [1, 2]], "r": 1},
            {"id": 2, "tiles": [[1, 2], [2, 2]], "r": 3}
        ]
    }"#;

    fn with(patch: impl FnOnce(&mut serde_json::Value)) -> String {
        let mut v: serde_json::Value = serde_json::from_str(MINIMAL).unwrap();
        patch(&mut v);
        v.to_string()
    }

    #[test]
    fn minimal_file_gets_simulation_defaults() {
        let f = parse(MINIMAL).unwrap();
        let sc = f.scenario().unwrap();
        assert_eq!(sc.users.len(), 2);
        assert_eq!(sc.channel.per_user_states.len(), 2);
        assert_eq!(sc.compute.power_w, vec![2e-5, 2e-5]);
        assert!((sc.phys.noise_w - 150e6 * 1.38e-23 * 300.0).abs() < 1e-25);
        assert_eq!(f.smoothness.delta, 1);
        assert_eq!(f.solver_config().unwrap(), SolverConfig::default());
    }

    #[test]
    fn missing_field_is_named() {
        let text = with(|v| {
            v["geometry"].as_object_mut().unwrap().remove("encoding_rates");
        });
        let e = parse(&text).unwrap_err();
        assert!(e.to_string().contains("encoding_rates"), "{e}");
    }

    #[test]
    fn wrong_type_reports_nested_path() {
        let text = with(|v| v["users"][1]["r"] = "high".into());
        let e = parse(&text).unwrap_err();
        assert_eq!(e.path, "users[1].r");
    }

    #[test]
    fn unknown_field_is_rejected() {
        let text = with(|v| v["geometry"]["rows"] = 3.into());
        assert!(parse(&text).is_err());
    }

    #[test]
    fn level_count_must_match_rates() {
        let text = with(|v| v["geometry"]["L"] = 4.into());
        assert_eq!(parse(&text).unwrap_err().path, "geometry.L");
    }

    #[test]
    fn requirement_out_of_range() {
        let text = with(|v| v["users"][0]["r"] = 4.into());
        assert_eq!(parse(&text).unwrap_err().path, "users[0].r");
    }

    #[test]
    fn direction_and_tiles_are_exclusive() {
        let text = with(|v| v["users"][0]["direction_deg"] = serde_json::json!([0.0, 0.0]));
        assert_eq!(parse(&text).unwrap_err().path, "users[0]");
    }

    #[test]
    fn directions_become_tile_blocks() {
        let text = with(|v| {
            v["geometry"] = serde_json::json!({"M": 18, "N": 36, "encoding_rates": [1.0, 2.0], "frame_rate": 30});
            v["users"] = serde_json::json!([{"id": 7, "direction_deg": [0.0, 0.0], "r": 2}]);
        });
        let sc = parse(&text).unwrap().scenario().unwrap();
        assert_eq!(sc.users[0].tiles.len(), 144);
    }

    #[test]
    fn derived_transcoding_power() {
        let text = with(|v| v["transcoding"] = serde_json::json!({"beta": 1, "kappa": 1e-27, "cycles": 1e3, "f_hz": 1e9}));
        let sc = parse(&text).unwrap().scenario().unwrap();
        let expected = 1e-27 * 1e3 * 30.0 * 1e18;
        assert!((sc.compute.power_w[0] - expected).abs() <= 1e-12 * expected);
    }

    #[test]
    fn partial_derived_power_names_missing_field() {
        let text = with(|v| v["transcoding"] = serde_json::json!({"kappa": 1e-27, "cycles": 1e3}));
        assert_eq!(parse(&text).unwrap_err().path, "transcoding.f_hz");
    }

    #[test]
    fn shared_state_list_is_broadcast() {
        let text = with(|v| v["channel"] = serde_json::json!({"per_user_states": [[{"gain": 1e-6, "prob": 1.0}]]}));
        let sc = parse(&text).unwrap().scenario().unwrap();
        assert_eq!(sc.states().unwrap().len(), 1);
    }

    #[test]
    fn bad_probabilities_are_rejected() {
        let text = with(|v| v["channel"] = serde_json::json!({"per_user_states": [[{"gain": 1e-6, "prob": 0.7}]]}));
        assert_eq!(parse(&text).unwrap_err().path, "channel.per_user_states");
    }

    #[test]
    fn solver_section_overrides() {
        let text = with(|v| v["solver"] = serde_json::json!({"restarts": 3, "seed": 9, "tolerances": {"gap": 1e-3}}));
        let cfg = parse(&text).unwrap().solver_config().unwrap();
        assert_eq!((cfg.restarts, cfg.seed, cfg.gap_tol), (3, 9, 1e-3));
        assert_eq!(cfg.ccp_tol, SolverConfig::default().ccp_tol);
    }

    #[test]
    fn experiment_section_builds_params() {
        let text = with(|v| v["experiment"] = serde_json::json!({"K": 4, "gamma": 1.5, "r_ub": 3, "schemes": ["wo-a", "unicast"]}));
        let f = parse(&text).unwrap();
        let p = f.experiment_params().unwrap();
        assert_eq!((p.users, p.gamma, p.delta), (4, 1.5, 1));
        assert_eq!(f.schemes().unwrap(), vec![Scheme::WoA, Scheme::Unicast]);
        assert_eq!(f.realizations(), 50);
    }

    #[test]
    fn unknown_scheme_is_reported() {
        let text = with(|v| v["experiment"] = serde_json::json!({"schemes": ["wo-a", "best"]}));
        assert_eq!(parse(&text).unwrap_err().path, "experiment.schemes[1]");
    }
}
