use crate::channel::PhysicalConfig;
use crate::error::{invalid, Result};

/// Achievable rate in bits/s of a stream given airtime `t` and energy `e` per frame:
/// `(B/T) t log2(1 + e h / (t n0))`, extended by 0 at `t = 0`.
pub fn rate(t: f64, e: f64, gain: f64, phys: &PhysicalConfig) -> Result<f64> {
    if !(t >= 0.0) || !(e >= 0.0) || !t.is_finite() || !e.is_finite() {
        return invalid(format!("rate needs finite t >= 0 and e >= 0, got t={t}, e={e}"));
    }
    if !(gain > 0.0) {
        return invalid("channel gain must be positive");
    }
    if t == 0.0 {
        return Ok(0.0);
    }
    Ok(phys.rate_scale() * t * (e * gain / (t * phys.noise_w)).ln_1p() / std::f64::consts::LN_2)
}

/// Minimizes `phi(p) = p - sum_k w_k ln(1 + p / a_k)` over `p >= 0`.
///
/// `terms` holds `(a_k, w_k)` with `a_k = n0 / h_k > 0` and `w_k >= 0` already scaled
/// by `B / (T ln 2)`. Returns the minimizer and the minimum, which is never positive.
pub(crate) fn power_ratio(terms: &[(f64, f64)]) -> (f64, f64) {
    match terms {
        [] => (0.0, 0.0),
        [(a, w)] => {
            if *w <= *a {
                (0.0, 0.0)
            } else {
                let p = w - a;
                (p, p - w * (p / a).ln_1p())
            }
        }
        _ => {
            let slope0: f64 = terms.iter().map(|(a, w)| w / a).sum();
            if slope0 <= 1.0 {
                return (0.0, 0.0);
            }
            // phi' is concave and increasing, so Newton from a point with phi' <= 0
            // climbs monotonically to the root.
            let mut p = terms.iter().map(|(a, w)| (w - a).max(0.0)).fold(0.0, f64::max);
            let upper: f64 = terms.iter().map(|(_, w)| w).sum();
            for _ in 0..200 {
                let (mut g, mut dg) = (0.0, 0.0);
                for (a, w) in terms {
                    let r = w / (a + p);
                    g += r;
                    dg += r / (a + p);
                }
                let f = 1.0 - g;
                if f >= 0.0 {
                    break;
                }
                let next = (p - f / dg).min(upper);
                if next - p <= 1e-14 * next {
                    p = next;
                    break;
                }
                p = next;
            }
            let v = p - terms.iter().map(|(a, w)| w * (p / a).ln_1p()).sum::<f64>();
            (p, v.min(0.0))
        }
    }
}

/// Exact solution of one per-state dual subproblem.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerSolution {
    /// Airtime per stream.
    pub time: Vec<f64>,
    /// Energy per stream.
    pub energy: Vec<f64>,
    /// Optimal power ratio of each stream if it were given airtime.
    pub power: Vec<f64>,
    /// Minimum of the per-unit-time cost of each stream (never positive).
    pub unit_value: Vec<f64>,
    /// Subproblem value including the constant term.
    pub value: f64,
}

/// Minimizes `sum e - sum_k w_k (B/T) t log2(1 + e h_k / (t n0))` over one system state
/// subject to `t >= 0`, `sum t <= T`, `e >= 0`, then adds `constant`.
///
/// `streams[s]` lists `(user index, weight)` pairs for stream `s`. The whole frame goes to
/// the stream with the most negative unit value, lowest index on ties.
pub fn inner_dual_subproblem(
    phys: &PhysicalConfig,
    gains: &[f64],
    streams: &[Vec<(usize, f64)>],
    constant: f64,
) -> Result<InnerSolution> {
    phys.validate()?;
    let c = phys.rate_scale() / std::f64::consts::LN_2;
    let mut terms = Vec::new();
    let mut power = Vec::with_capacity(streams.len());
    let mut unit_value = Vec::with_capacity(streams.len());
    for stream in streams {
        terms.clear();
        for &(k, w) in stream {
            if !(w >= 0.0) || !w.is_finite() {
                return invalid(format!("weights must be finite and non-negative, got {w}"));
            }
            let g = *gains
                .get(k)
                .ok_or_else(|| crate::Error::InvalidInput(format!("user index {k} out of range")))?;
            if w > 0.0 {
                terms.push((phys.noise_w / g, w * c));
            }
        }
        let (p, v) = power_ratio(&terms);
        power.push(p);
        unit_value.push(v);
    }

    let mut time = vec![0.0; streams.len()];
    let mut energy = vec![0.0; streams.len()];
    let best = pick_stream(&unit_value);
    let mut value = constant;
    if let Some(s) = best {
        time[s] = phys.frame_s;
        energy[s] = phys.frame_s * power[s];
        value += phys.frame_s * unit_value[s];
    }
    Ok(InnerSolution {
        time,
        energy,
        power,
        unit_value,
        value,
    })
}

/// Stream with the most negative unit value; `None` when every value is zero.
pub(crate) fn pick_stream(unit_value: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    let mut best_v = 0.0;
    for (s, &v) in unit_value.iter().enumerate() {
        if v < best_v {
            best_v = v;
            best = Some(s);
        }
    }
    best
}
