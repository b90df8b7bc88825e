//! Random scenarios with Zipf-distributed viewing directions and Monte-Carlo sweeps.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{ChannelModel, ChannelState, PhysicalConfig, DEFAULT_STATE_CAP};
use crate::error::{invalid, Error, Result};
use crate::problems::{baseline_max_quality, baseline_unicast, solve_case, CaseKind, Scenario, Smoothness, UserCompute};
use crate::solver::SolverConfig;
use crate::tiling::{fov_tiles, FovRequest, FovShape, VideoGeometry};

/// CSV header of a sweep table.
pub const CSV_HEADER: [&str; 6] = ["param", "scheme", "mean_energy_J", "std_energy_J", "n_ok", "n_failed"];

/// Table I encoding rates per tile, bits/s.
pub const DEFAULT_RATES: [f64; 5] = [6.66e5, 16.18e5, 24.29e5, 32.01e5, 40.23e5];

/// `v^-gamma` normalized over `v = 1..=count`.
pub fn zipf_probs(gamma: f64, count: usize) -> Result<Vec<f64>> {
    if count == 0 {
        return invalid("Zipf support must hold at least one value");
    }
    if !gamma.is_finite() || gamma < 0.0 {
        return invalid(format!("Zipf exponent must be finite and non-negative, got {gamma}"));
    }
    let w: Vec<f64> = (1..=count).map(|v| (v as f64).powf(-gamma)).collect();
    let total: f64 = w.iter().sum();
    Ok(w.into_iter().map(|x| x / total).collect())
}

/// Everything needed to draw one random scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentParams {
    pub users: usize,
    pub gamma: f64,
    pub r_lb: u32,
    pub r_ub: u32,
    pub delta: u32,
    pub beta: f64,
    pub geometry: VideoGeometry,
    pub phys: PhysicalConfig,
    pub shape: FovShape,
    /// Viewing directions `(longitude, latitude)` in popularity order.
    pub directions: Vec<(f64, f64)>,
    /// Channel states shared by every user.
    pub channel_states: Vec<ChannelState>,
    pub transcoding_power_w: f64,
    pub state_cap: usize,
}

impl Default for ExperimentParams {
    fn default() -> Self {
        Self {
            users: 3,
            gamma: 0.0,
            r_lb: 1,
            r_ub: 5,
            delta: 1,
            beta: 1.0,
            geometry: VideoGeometry::new(18, 36, DEFAULT_RATES.to_vec(), 30.0).expect("valid defaults"),
            phys: PhysicalConfig::default(),
            shape: FovShape::default(),
            directions: (0..5).map(|i| (72.0 * i as f64, 0.0)).collect(),
            channel_states: ChannelModel::two_state(1, 1e-6).per_user_states.remove(0),
            transcoding_power_w: 2e-5,
            state_cap: DEFAULT_STATE_CAP,
        }
    }
}

impl ExperimentParams {
    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        self.phys.validate()?;
        let levels = self.geometry.levels() as u32;
        if self.users == 0 {
            return invalid("at least one user is needed");
        }
        if self.r_lb < 1 || self.r_lb > self.r_ub || self.r_ub > levels {
            return invalid(format!("requirement range {}..={} must lie in 1..={levels}", self.r_lb, self.r_ub));
        }
        if self.directions.is_empty() {
            return invalid("at least one viewing direction is needed");
        }
        if !(self.beta >= 1.0) {
            return invalid("beta must be at least 1");
        }
        if !(self.transcoding_power_w >= 0.0) {
            return invalid("transcoding power must be non-negative");
        }
        zipf_probs(self.gamma, self.directions.len())?;
        ChannelModel::new(vec![self.channel_states.clone()])?;
        Ok(())
    }
}

/// Drawn direction index (1 = most popular) and requirement of every user.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioDraw {
    pub directions: Vec<usize>,
    pub requirements: Vec<u32>,
}

/// Draws users one after another, each from two uniforms fed through the inverse CDFs.
/// With a shared stream, a larger `users` extends a smaller draw, a larger `gamma` moves
/// every user towards more popular directions, and shifting `r_lb`/`r_ub` together
/// shifts every requirement.
pub fn draw(params: &ExperimentParams, rng: &mut impl Rng) -> Result<ScenarioDraw> {
    let probs = zipf_probs(params.gamma, params.directions.len())?;
    let span = (params.r_ub - params.r_lb + 1) as f64;
    let mut out = ScenarioDraw {
        directions: Vec::with_capacity(params.users),
        requirements: Vec::with_capacity(params.users),
    };
    for _ in 0..params.users {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut v = probs.len();
        for (i, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                v = i + 1;
                break;
            }
        }
        let w: f64 = rng.gen();
        let r = params.r_lb + ((w * span) as u32).min(params.r_ub - params.r_lb);
        out.directions.push(v);
        out.requirements.push(r);
    }
    Ok(out)
}

/// Scenario of one draw.
pub fn build_scenario(params: &ExperimentParams, d: &ScenarioDraw) -> Result<Scenario> {
    let mut users = Vec::with_capacity(d.directions.len());
    for (k, (&v, &r)) in d.directions.iter().zip(&d.requirements).enumerate() {
        let dir = *params
            .directions
            .get(v.wrapping_sub(1))
            .ok_or_else(|| Error::InvalidInput(format!("direction index {v} out of range")))?;
        users.push(FovRequest {
            user: k as u32 + 1,
            tiles: fov_tiles(dir, &params.shape, &params.geometry)?,
            requirement: r,
        });
    }
    let n = users.len();
    let sc = Scenario {
        geometry: params.geometry.clone(),
        phys: params.phys,
        users,
        channel: ChannelModel::new(vec![params.channel_states.clone(); n])?,
        compute: UserCompute::uniform(n, params.transcoding_power_w),
        state_cap: params.state_cap,
    };
    sc.validate()?;
    Ok(sc)
}

pub fn generate_scenario(params: &ExperimentParams, rng: &mut impl Rng) -> Result<Scenario> {
    params.validate()?;
    let d = draw(params, rng)?;
    build_scenario(params, &d)
}

/// Random stream of realization `index`. Every swept value uses the same streams, so
/// the curves are compared on common random numbers.
pub fn realization_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SweepParam {
    #[serde(rename = "K")]
    Users,
    #[serde(rename = "rbar")]
    MeanQuality,
    #[serde(rename = "gamma")]
    Zipf,
    #[serde(rename = "delta")]
    Tolerance,
}

impl SweepParam {
    /// Parameters with `value` substituted. The mean requirement moves a window of
    /// three levels: `r_lb = rbar - 1`, `r_ub = rbar + 1`.
    pub fn apply(self, base: &ExperimentParams, value: f64) -> Result<ExperimentParams> {
        let whole = |what: &str| -> Result<u32> {
            if value.fract() != 0.0 || value < 0.0 {
                return invalid(format!("{what} must be a non-negative integer, got {value}"));
            }
            Ok(value as u32)
        };
        let mut p = base.clone();
        match self {
            SweepParam::Users => p.users = whole("K")? as usize,
            SweepParam::MeanQuality => {
                let r = whole("rbar")?;
                if r < 2 {
                    return invalid("rbar must be at least 2");
                }
                p.r_lb = r - 1;
                p.r_ub = r + 1;
            }
            SweepParam::Zipf => p.gamma = value,
            SweepParam::Tolerance => p.delta = whole("delta")?,
        }
        p.validate()?;
        Ok(p)
    }
}

impl FromStr for SweepParam {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "K" => Ok(Self::Users),
            "rbar" => Ok(Self::MeanQuality),
            "gamma" => Ok(Self::Zipf),
            "delta" => Ok(Self::Tolerance),
            _ => invalid(format!("unknown sweep parameter {s:?}; expected K, rbar, gamma or delta")),
        }
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Users => "K",
            Self::MeanQuality => "rbar",
            Self::Zipf => "gamma",
            Self::Tolerance => "delta",
        })
    }
}

/// A proposed case or one of the baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scheme {
    #[serde(rename = "wo-a")]
    WoA,
    #[serde(rename = "wo-r")]
    WoR,
    #[serde(rename = "w-a")]
    WA,
    #[serde(rename = "w-r")]
    WR,
    #[serde(rename = "unicast")]
    Unicast,
    #[serde(rename = "baseline-w-a")]
    BaselineWA,
    #[serde(rename = "baseline-w-r")]
    BaselineWR,
}

impl Scheme {
    pub const ALL: [Scheme; 7] = [
        Scheme::WoA,
        Scheme::WoR,
        Scheme::WA,
        Scheme::WR,
        Scheme::Unicast,
        Scheme::BaselineWA,
        Scheme::BaselineWR,
    ];

    /// Whether the scheme exploits shared tiles (every scheme but unicast).
    pub fn multicast(self) -> bool {
        self != Scheme::Unicast
    }

    /// Whether the scheme's constraint depends on the tolerance.
    pub fn relative(self) -> bool {
        matches!(self, Scheme::WoR | Scheme::WR | Scheme::BaselineWR)
    }

    pub fn label(self) -> &'static str {
        match self {
            Scheme::WoA => "wo-a",
            Scheme::WoR => "wo-r",
            Scheme::WA => "w-a",
            Scheme::WR => "w-r",
            Scheme::Unicast => "unicast",
            Scheme::BaselineWA => "baseline-w-a",
            Scheme::BaselineWR => "baseline-w-r",
        }
    }

    /// Objective of the scheme on one scenario.
    pub fn run(self, scenario: &Scenario, delta: u32, beta: f64, config: &SolverConfig) -> Result<f64> {
        let case = |k: CaseKind| solve_case(&k.spec(delta, beta), scenario, config);
        let res = match self {
            Scheme::WoA => case(CaseKind::WoA)?,
            Scheme::WoR => case(CaseKind::WoR)?,
            Scheme::WA => case(CaseKind::WA)?,
            Scheme::WR => case(CaseKind::WR)?,
            Scheme::Unicast => baseline_unicast(scenario, config)?,
            Scheme::BaselineWA => baseline_max_quality(scenario, Smoothness::Absolute, delta, beta, config)?,
            Scheme::BaselineWR => baseline_max_quality(scenario, Smoothness::Relative, delta, beta, config)?,
        };
        Ok(res.objective)
    }
}

impl FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|x| x.label() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown scheme {s:?}")))
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub param: SweepParam,
    pub values: Vec<f64>,
    pub base: ExperimentParams,
    pub realizations: usize,
    pub seed: u64,
    pub schemes: Vec<Scheme>,
    pub solver: SolverConfig,
}

impl SweepSpec {
    pub fn new(param: SweepParam, values: Vec<f64>, base: ExperimentParams) -> Self {
        Self {
            param,
            values,
            base,
            realizations: 200,
            seed: 0,
            schemes: Scheme::ALL.to_vec(),
            solver: SolverConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.realizations == 0 {
            return invalid("a sweep needs at least one realization");
        }
        if self.values.is_empty() || self.schemes.is_empty() {
            return invalid("a sweep needs at least one value and one scheme");
        }
        self.solver.validate()?;
        for &v in &self.values {
            self.param.apply(&self.base, v)?;
        }
        Ok(())
    }
}

/// Mean and spread of one scheme at one swept value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub param: f64,
    pub scheme: Scheme,
    pub mean_energy_j: f64,
    /// Sample standard deviation; zero with fewer than two successes.
    pub std_energy_j: f64,
    pub n_ok: usize,
    pub n_failed: usize,
    /// Objective of every realization, `None` where the solve failed.
    #[serde(skip)]
    pub samples: Vec<Option<f64>>,
}

/// Runs every scheme on every realization of every swept value. Failed solves are
/// counted and left out of the statistics.
pub fn run_sweep(spec: &SweepSpec) -> Result<Vec<SweepRow>> {
    spec.validate()?;
    let params = spec
        .values
        .iter()
        .map(|&v| spec.param.apply(&spec.base, v))
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, usize)> = (0..params.len())
        .flat_map(|i| (0..spec.realizations).map(move |r| (i, r)))
        .collect();
    let outcomes: Vec<Vec<Option<f64>>> = jobs
        .par_iter()
        .map(|&(i, r)| {
            let p = &params[i];
            let mut rng = realization_rng(spec.seed, r);
            match generate_scenario(p, &mut rng) {
                Ok(sc) => spec
                    .schemes
                    .iter()
                    .map(|s| s.run(&sc, p.delta, p.beta, &spec.solver).ok())
                    .collect(),
                Err(_) => vec![None; spec.schemes.len()],
            }
        })
        .collect();

    let mut rows = Vec::with_capacity(params.len() * spec.schemes.len());
    for (i, &value) in spec.values.iter().enumerate() {
        let chunk = &outcomes[i * spec.realizations..(i + 1) * spec.realizations];
        for (j, &scheme) in spec.schemes.iter().enumerate() {
            let samples: Vec<Option<f64>> = chunk.iter().map(|o| o[j]).collect();
            let ok: Vec<f64> = samples.iter().flatten().copied().collect();
            let n = ok.len();
            let mean = if n > 0 { ok.iter().sum::<f64>() / n as f64 } else { f64::NAN };
            let std = if n > 1 {
                (ok.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            } else {
                0.0
            };
            rows.push(SweepRow {
                param: value,
                scheme,
                mean_energy_j: mean,
                std_energy_j: std,
                n_ok: n,
                n_failed: samples.len() - n,
                samples,
            });
        }
    }
    Ok(rows)
}

/// Writes the table with the fixed header; floats use shortest round-trip formatting.
pub fn write_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::InvalidInput(format!("writing CSV: {e}"));
    w.write_record(CSV_HEADER).map_err(io)?;
    for r in rows {
        w.write_record([
            r.param.to_string(),
            r.scheme.to_string(),
            r.mean_energy_j.to_string(),
            r.std_energy_j.to_string(),
            r.n_ok.to_string(),
            r.n_failed.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| Error::InvalidInput(format!("writing CSV: {e}")))?;
    Ok(())
}
