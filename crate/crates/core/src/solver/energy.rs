//! Minimum energy of one stream when its airtime in every state is fixed.
//!
//! With the airtime pinned, the problem separates by stream: choose a power ratio per
//! state so that every user's average rate meets its demand at least energy. The dual
//! variables are one price per user; the power ratio in each state minimizes the same
//! one-dimensional cost as the per-state dual subproblem.

use super::rate::power_ratio;
use super::Instance;

/// Energy per state plus the user prices that certify it.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct StreamEnergy {
    /// Energy per state (`t * p`).
    pub energy: Vec<f64>,
    /// Price of each demand, in the same order as the input, in joules per bit/s.
    pub prices: Vec<f64>,
}

struct Setup {
    /// `q_h t_h` of every state with airtime.
    weight: Vec<f64>,
    states: Vec<usize>,
    /// `a[h][j]` for active state `h` and demand `j`.
    a: Vec<Vec<f64>>,
    /// Demand in natural-log units: `required / (B / (T ln 2))`.
    target: Vec<f64>,
}

impl Setup {
    fn powers(&self, w: &[f64], out: &mut Vec<f64>) {
        out.clear();
        let mut terms = Vec::with_capacity(w.len());
        for a in &self.a {
            terms.clear();
            terms.extend(a.iter().zip(w).filter(|(_, w)| **w > 0.0).map(|(a, w)| (*a, *w)));
            out.push(power_ratio(&terms).0);
        }
    }

    fn delivered(&self, p: &[f64], j: usize) -> f64 {
        self.weight
            .iter()
            .zip(p)
            .zip(&self.a)
            .map(|((wt, p), a)| wt * (p / a[j]).ln_1p())
            .sum()
    }

    /// Dual function `sum_j w_j target_j + sum_h wt_h min_p (p - sum_j w_j ln(1 + p / a_hj))`.
    fn dual(&self, w: &[f64], p: &[f64]) -> f64 {
        let mut v: f64 = w.iter().zip(&self.target).map(|(w, t)| w * t).sum();
        for ((wt, p), a) in self.weight.iter().zip(p).zip(&self.a) {
            v += wt * (p - a.iter().zip(w).map(|(a, w)| w * (p / a).ln_1p()).sum::<f64>());
        }
        v
    }

    /// Projected Newton ascent on the dual over `w >= 0`.
    fn newton(&self, w: &mut [f64]) {
        let m = w.len();
        let mut p = Vec::new();
        let mut trial_p = Vec::new();
        self.powers(w, &mut p);
        let mut value = self.dual(w, &p);
        for _ in 0..100 {
            let grad: Vec<f64> = (0..m).map(|j| self.target[j] - self.delivered(&p, j)).collect();
            let free: Vec<usize> = (0..m).filter(|&j| w[j] > 0.0 || grad[j] > 0.0).collect();
            if free.iter().all(|&j| grad[j].abs() <= 1e-14 * self.target[j]) {
                return;
            }
            // negated Hessian on the free prices
            let n = free.len();
            let mut hess = vec![vec![0.0; n]; n];
            for ((wt, &ph), a) in self.weight.iter().zip(&p).zip(&self.a) {
                if ph <= 0.0 {
                    continue;
                }
                let s: f64 = a.iter().zip(w.iter()).map(|(a, w)| w / ((a + ph) * (a + ph))).sum();
                if s <= 0.0 {
                    continue;
                }
                for (r, &j) in free.iter().enumerate() {
                    for (c, &l) in free.iter().enumerate() {
                        hess[r][c] += wt / ((a[j] + ph) * (a[l] + ph) * s);
                    }
                }
            }
            let ridge = 1e-12 * (0..n).map(|i| hess[i][i]).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
            for (i, row) in hess.iter_mut().enumerate() {
                row[i] += ridge;
            }
            let Some(step) = solve_spd(hess, free.iter().map(|&j| grad[j]).collect()) else {
                return;
            };
            let mut t = 1.0;
            let mut trial = w.to_vec();
            let mut improved = false;
            for _ in 0..60 {
                trial.copy_from_slice(w);
                for (i, &j) in free.iter().enumerate() {
                    trial[j] = (w[j] + t * step[i]).max(0.0);
                }
                self.powers(&trial, &mut trial_p);
                let v = self.dual(&trial, &trial_p);
                let rise: f64 = (0..m).map(|j| grad[j] * (trial[j] - w[j])).sum();
                if v >= value + 1e-4 * rise && v >= value {
                    improved = v > value || rise <= 0.0;
                    w.copy_from_slice(&trial);
                    std::mem::swap(&mut p, &mut trial_p);
                    value = v;
                    break;
                }
                t *= 0.5;
            }
            if !improved {
                return;
            }
        }
    }

    /// Water-filling level for demand `j` served alone.
    fn alone(&self, j: usize) -> f64 {
        let mut order: Vec<(f64, f64)> = self.a.iter().zip(&self.weight).map(|(a, w)| (a[j], *w)).collect();
        order.sort_by(|x, y| x.0.total_cmp(&y.0));
        let (mut sw, mut swl) = (0.0, 0.0);
        let mut level = 0.0;
        for (i, (a, w)) in order.iter().enumerate() {
            sw += w;
            swl += w * a.ln();
            level = ((self.target[j] + swl) / sw).exp();
            let next = order.get(i + 1).map(|x| x.0).unwrap_or(f64::INFINITY);
            if level <= next {
                break;
            }
        }
        level.max(order[0].0)
    }
}

/// Solves one stream. `time[h]` is the airtime in state `h`, `demands` holds
/// `(user index, required bits/s)`. Returns `None` when a positive demand has no airtime.
pub(crate) fn stream_energy(inst: &Instance, time: &[f64], demands: &[(usize, f64)]) -> Option<StreamEnergy> {
    let n_states = inst.states.len();
    let mut prices = vec![0.0; demands.len()];
    let active: Vec<usize> = (0..demands.len()).filter(|&j| demands[j].1 > 0.0).collect();
    if active.is_empty() {
        return Some(StreamEnergy {
            energy: vec![0.0; n_states],
            prices,
        });
    }
    let states: Vec<usize> = (0..n_states)
        .filter(|&h| time[h] > 0.0 && inst.states.rows[h].prob > 0.0)
        .collect();
    if states.is_empty() {
        return None;
    }
    let c = inst.log_scale();
    let setup = Setup {
        weight: states.iter().map(|&h| inst.states.rows[h].prob * time[h]).collect(),
        a: states
            .iter()
            .map(|&h| active.iter().map(|&j| inst.noise_over_gain[h][demands[j].0]).collect())
            .collect(),
        target: active.iter().map(|&j| demands[j].1 / c).collect(),
        states,
    };

    let m = active.len();
    let alone: Vec<f64> = (0..m).map(|j| setup.alone(j)).collect();
    let mut w = vec![0.0; m];
    let mut p = Vec::new();
    if m == 1 {
        w[0] = alone[0];
        setup.powers(&w, &mut p);
    } else {
        // a few sweeps of coordinate ascent from the most demanding user, then Newton
        let first = (0..m).max_by(|&x, &y| alone[x].total_cmp(&alone[y])).unwrap();
        w[first] = alone[first];
        for _sweep in 0..3 {
            for j in 0..m {
                w[j] = 0.0;
                setup.powers(&w, &mut p);
                if setup.delivered(&p, j) < setup.target[j] {
                    w[j] = solve_price(&setup, &mut w, j, alone[j]);
                }
            }
        }
        setup.newton(&mut w);
        setup.powers(&w, &mut p);
    }

    // scale power up until every demand holds exactly in floating point
    let short = |p: &[f64], scale: f64| {
        (0..m).any(|j| {
            setup
                .weight
                .iter()
                .zip(p)
                .zip(&setup.a)
                .map(|((wt, p), a)| wt * (scale * p / a[j]).ln_1p())
                .sum::<f64>()
                < setup.target[j]
        })
    };
    let mut scale = 1.0;
    if short(&p, 1.0) {
        let mut hi = 1.0 + 1e-12;
        while short(&p, hi) {
            hi = 1.0 + 2.0 * (hi - 1.0);
            if hi > 1e6 {
                break;
            }
        }
        let mut lo = 1.0;
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if short(&p, mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        scale = hi;
    }

    let mut energy = vec![0.0; n_states];
    for (i, &h) in setup.states.iter().enumerate() {
        energy[h] = time[h] * p[i] * scale;
    }
    for (i, &j) in active.iter().enumerate() {
        prices[j] = w[i] / c;
    }
    Some(StreamEnergy { energy, prices })
}

/// Solves `A x = b` for a small symmetric positive definite `A` by Cholesky.
fn solve_spd(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for j in 0..n {
        let mut d = a[j][j];
        for k in 0..j {
            d -= a[j][k] * a[j][k];
        }
        if !(d > 0.0) {
            return None;
        }
        let d = d.sqrt();
        a[j][j] = d;
        for i in j + 1..n {
            let mut v = a[i][j];
            for k in 0..j {
                v -= a[i][k] * a[j][k];
            }
            a[i][j] = v / d;
        }
    }
    for i in 0..n {
        for k in 0..i {
            b[i] -= a[i][k] * b[k];
        }
        b[i] /= a[i][i];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            b[i] -= a[k][i] * b[k];
        }
        b[i] /= a[i][i];
    }
    Some(b)
}

/// Smallest price for demand `j` that meets its target given the other prices.
fn solve_price(setup: &Setup, w: &mut [f64], j: usize, upper: f64) -> f64 {
    let mut p = Vec::new();
    let (mut lo, mut hi) = (0.0, upper);
    let mut x = upper;
    for _ in 0..200 {
        w[j] = x;
        setup.powers(w, &mut p);
        let f = setup.delivered(&p, j) - setup.target[j];
        if f >= 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        if hi - lo <= 1e-14 * hi {
            break;
        }
        // Newton on the delivered rate, falling back to bisection outside the bracket
        let mut slope = 0.0;
        for ((wt, p), a) in setup.weight.iter().zip(&p).zip(&setup.a) {
            if *p <= 0.0 {
                continue;
            }
            let curv: f64 = a.iter().zip(w.iter()).map(|(a, w)| w / ((a + p) * (a + p))).sum();
            slope += wt / (a[j] + p) * (1.0 / (a[j] + p)) / curv;
        }
        let newton = x - f / slope;
        x = if slope > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    hi
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{ChannelModel, ChannelState, PhysicalConfig, SystemStateTable};
    use crate::solver::GroupSpec;

    fn instance(states: SystemStateTable, users: usize) -> Instance {
        let groups = vec![GroupSpec {
            users: (0..users).collect(),
            tiles: 1,
        }];
        Instance::new(PhysicalConfig::new(1e6, 0.01, 1e-9).unwrap(), vec![1e6], groups, states).unwrap()
    }

    fn delivered(inst: &Instance, time: &[f64], energy: &[f64], user: usize) -> f64 {
        let ph = inst.phys;
        inst.states
            .rows
            .iter()
            .enumerate()
            .filter(|(h, _)| time[*h] > 0.0)
            .map(|(h, r)| r.prob * crate::solver::rate(time[h], energy[h], r.gains[user], &ph).unwrap())
            .sum()
    }

    #[test]
    fn single_state_single_user_closed_form() {
        let inst = instance(SystemStateTable::deterministic(vec![2e-3]), 1);
        let t = inst.phys.frame_s;
        let need = 3.3e6;
        let sol = stream_energy(&inst, &[t], &[(0, need)]).unwrap();
        let exact = t * (inst.phys.noise_w / 2e-3) * (2f64.powf(need / inst.phys.bandwidth_hz) - 1.0);
        assert!((sol.energy[0] - exact).abs() <= 1e-12 * exact);
    }

    #[test]
    fn water_filling_two_states() {
        let m = ChannelModel::new(vec![vec![
            ChannelState { gain: 1e-3, prob: 0.5 },
            ChannelState { gain: 4e-3, prob: 0.5 },
        ]])
        .unwrap();
        let states = crate::channel::enumerate_system_states(&m, 10).unwrap();
        let inst = instance(states, 1);
        let t = inst.phys.frame_s;
        let sol = stream_energy(&inst, &[t, t], &[(0, 1e6)]).unwrap();
        let got = delivered(&inst, &[t, t], &sol.energy, 0);
        assert!((got - 1e6).abs() < 1e-6 * 1e6 && got >= 1e6);
        // equal water level across both states
        let p0 = sol.energy[0] / t + inst.phys.noise_w / 1e-3;
        let p1 = sol.energy[1] / t + inst.phys.noise_w / 4e-3;
        assert!((p0 - p1).abs() < 1e-9 * p0);
    }

    #[test]
    fn shared_stream_meets_both_demands() {
        let m = ChannelModel::new(vec![
            vec![
                ChannelState { gain: 1e-3, prob: 0.5 },
                ChannelState { gain: 2e-3, prob: 0.5 },
            ];
            2
        ])
        .unwrap();
        let states = crate::channel::enumerate_system_states(&m, 10).unwrap();
        let inst = instance(states, 2);
        let t = vec![0.004; 4];
        let need = [(0, 2e6), (1, 1.5e6)];
        let sol = stream_energy(&inst, &t, &need).unwrap();
        for (k, r) in need {
            let got = delivered(&inst, &t, &sol.energy, k);
            assert!(got >= r * (1.0 - 1e-12), "user {k}: {got} < {r}");
        }
        // cost can't beat serving the harder user alone, and both prices are non-negative
        let alone = stream_energy(&inst, &t, &need[..1]).unwrap();
        let e: f64 = sol.energy.iter().zip(&inst.states.rows).map(|(e, r)| e * r.prob).sum();
        let ea: f64 = alone.energy.iter().zip(&inst.states.rows).map(|(e, r)| e * r.prob).sum();
        assert!(e >= ea * (1.0 - 1e-12));
        assert!(sol.prices.iter().all(|p| *p >= 0.0));
    }

    /// Lagrangian lower bound at the returned prices, with the inner minimum over the
    /// power found by bisection on its increasing derivative.
    fn dual_bound(inst: &Instance, time: &[f64], demands: &[(usize, f64)], prices: &[f64]) -> f64 {
        let c = inst.log_scale();
        let w: Vec<f64> = prices.iter().map(|p| p * c).collect();
        let mut v: f64 = demands.iter().zip(&w).map(|((_, d), w)| w * d / c).sum();
        for (h, row) in inst.states.rows.iter().enumerate() {
            let a: Vec<f64> = demands.iter().map(|&(k, _)| inst.noise_over_gain[h][k]).collect();
            let slope = |p: f64| 1.0 - a.iter().zip(&w).map(|(a, w)| w / (a + p)).sum::<f64>();
            let (mut lo, mut hi) = (0.0, 1.0);
            if slope(0.0) < 0.0 {
                while slope(hi) < 0.0 {
                    hi *= 2.0;
                }
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if slope(mid) < 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
            } else {
                hi = 0.0;
            }
            let p = hi;
            let inner = p - a.iter().zip(&w).map(|(a, w)| w * (p / a).ln_1p()).sum::<f64>();
            v += row.prob * time[h] * inner;
        }
        v
    }

    #[test]
    fn shared_stream_energy_matches_its_dual_bound() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for case in 0..20 {
            let users = 2 + case % 3;
            let m = ChannelModel::new(vec![
                vec![
                    ChannelState { gain: 1e-3, prob: 0.5 },
                    ChannelState { gain: 2e-3, prob: 0.5 },
                ];
                users
            ])
            .unwrap();
            let states = crate::channel::enumerate_system_states(&m, 100).unwrap();
            let inst = instance(states, users);
            let t: Vec<f64> = (0..inst.states.len()).map(|_| rng.gen_range(0.001..0.01)).collect();
            let need: Vec<(usize, f64)> = (0..users).map(|k| (k, rng.gen_range(0.2e6..3e6))).collect();
            let sol = stream_energy(&inst, &t, &need).unwrap();
            let primal: f64 = sol.energy.iter().zip(&inst.states.rows).map(|(e, r)| e * r.prob).sum();
            let dual = dual_bound(&inst, &t, &need, &sol.prices);
            assert!(dual <= primal * (1.0 + 1e-12), "case {case}: dual {dual} above primal {primal}");
            assert!((primal - dual) <= 1e-9 * primal, "case {case}: gap {}", (primal - dual) / primal);
        }
    }

    #[test]
    fn no_airtime_means_infeasible() {
        let inst = instance(SystemStateTable::deterministic(vec![1e-3]), 1);
        assert!(stream_energy(&inst, &[0.0], &[(0, 1.0)]).is_none());
        assert_eq!(stream_energy(&inst, &[0.0], &[(0, 0.0)]).unwrap().energy, vec![0.0]);
    }
}
