//! Physical-layer constants and the finite, i.i.d. system channel state space.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub const BOLTZMANN: f64 = 1.38e-23;

/// Default cap on the number of enumerated system states.
pub const DEFAULT_STATE_CAP: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalConfig {
    pub bandwidth_hz: f64,
    pub frame_s: f64,
    pub noise_w: f64,
}

impl PhysicalConfig {
    pub fn new(bandwidth_hz: f64, frame_s: f64, noise_w: f64) -> Result<Self> {
        let p = Self {
            bandwidth_hz,
            frame_s,
            noise_w,
        };
        p.validate()?;
        Ok(p)
    }

    /// Thermal noise `B * k_B * T0`.
    pub fn with_temperature(bandwidth_hz: f64, frame_s: f64, temperature_k: f64) -> Result<Self> {
        if !(temperature_k > 0.0) {
            return invalid("noise temperature must be positive");
        }
        Self::new(bandwidth_hz, frame_s, bandwidth_hz * BOLTZMANN * temperature_k)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("bandwidth", self.bandwidth_hz),
            ("frame duration", self.frame_s),
            ("noise power", self.noise_w),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return invalid(format!("{name} must be positive and finite, got {v}"));
            }
        }
        Ok(())
    }

    /// `B / T`, the factor in front of every rate expression.
    pub fn rate_scale(&self) -> f64 {
        self.bandwidth_hz / self.frame_s
    }
}

impl Default for PhysicalConfig {
    fn default() -> Self {
        Self::with_temperature(150e6, 0.05, 300.0).expect("valid defaults")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelState {
    pub gain: f64,
    pub prob: f64,
}

/// Independent per-user channel distributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelModel {
    pub per_user_states: Vec<Vec<ChannelState>>,
}

impl ChannelModel {
    pub fn new(per_user_states: Vec<Vec<ChannelState>>) -> Result<Self> {
        let m = Self { per_user_states };
        m.validate()?;
        Ok(m)
    }

    /// Every user gets the same two-point `{d, 2d}` distribution with equal mass.
    pub fn two_state(users: usize, d: f64) -> Self {
        let states = vec![
            ChannelState { gain: d, prob: 0.5 },
            ChannelState {
                gain: 2.0 * d,
                prob: 0.5,
            },
        ];
        Self {
            per_user_states: vec![states; users],
        }
    }

    pub fn users(&self) -> usize {
        self.per_user_states.len()
    }

    pub fn validate(&self) -> Result<()> {
        for (k, states) in self.per_user_states.iter().enumerate() {
            if states.is_empty() {
                return invalid(format!("user {k} has no channel states"));
            }
            if states.iter().any(|s| !(s.gain > 0.0) || !s.gain.is_finite()) {
                return invalid(format!("user {k} has a non-positive channel gain"));
            }
            if states.iter().any(|s| !(0.0..=1.0).contains(&s.prob)) {
                return invalid(format!("user {k} has a probability outside [0,1]"));
            }
            let total: f64 = states.iter().map(|s| s.prob).sum();
            if (total - 1.0).abs() > 1e-12 {
                return invalid(format!("user {k} state probabilities sum to {total}"));
            }
        }
        Ok(())
    }
}

/// One system state: the gain of every user plus its probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemState {
    pub gains: Vec<f64>,
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemStateTable {
    pub rows: Vec<SystemState>,
}

impl SystemStateTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Deterministic single state with the given gains.
    pub fn deterministic(gains: Vec<f64>) -> Self {
        Self {
            rows: vec![SystemState { gains, prob: 1.0 }],
        }
    }

    /// Marginal distribution of user `k` recovered from the table, in first-seen order.
    pub fn marginal(&self, k: usize) -> Vec<ChannelState> {
        let mut out: Vec<ChannelState> = Vec::new();
        for row in &self.rows {
            match out.iter_mut().find(|s| s.gain == row.gains[k]) {
                Some(s) => s.prob += row.prob,
                None => out.push(ChannelState {
                    gain: row.gains[k],
                    prob: row.prob,
                }),
            }
        }
        out
    }
}

/// Cartesian product of the per-user state lists. The last user varies fastest.
pub fn enumerate_system_states(model: &ChannelModel, cap: usize) -> Result<SystemStateTable> {
    model.validate()?;
    let needed = model
        .per_user_states
        .iter()
        .try_fold(1u128, |acc, s| acc.checked_mul(s.len() as u128))
        .unwrap_or(u128::MAX);
    if needed > cap as u128 {
        return Err(Error::Capacity {
            what: "system channel states",
            needed,
            limit: cap as u128,
        });
    }

    let mut rows = vec![SystemState {
        gains: Vec::with_capacity(model.users()),
        prob: 1.0,
    }];
    for states in &model.per_user_states {
        rows = rows
            .into_iter()
            .flat_map(|row| {
                states.iter().map(move |s| {
                    let mut gains = row.gains.clone();
                    gains.push(s.gain);
                    SystemState {
                        gains,
                        prob: row.prob * s.prob,
                    }
                })
            })
            .collect();
    }
    Ok(SystemStateTable { rows })
}
