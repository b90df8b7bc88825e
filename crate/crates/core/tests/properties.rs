use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use tilecast::channel::{enumerate_system_states, ChannelModel, ChannelState, PhysicalConfig, DEFAULT_STATE_CAP};
use tilecast::oracle::{brute_force_optimal, verify_solution, OracleBudget, VerifyTolerances};
use tilecast::problems::{
    baseline_max_quality, baseline_unicast, solve_case, CaseKind, Scenario, Smoothness, Transcoding, UserCompute,
};
use tilecast::solver::SolverConfig;
use tilecast::tiling::{
    build_partition, fov_tiles, shared_levels, FovRequest, FovShape, OpportunityKind, TileIndex, VideoGeometry,
};

const RATES: [f64; 3] = [6.66e5, 16.18e5, 24.29e5];

fn tile_sets(rows: usize, cols: usize, users: std::ops::Range<usize>) -> impl Strategy<Value = Vec<BTreeSet<TileIndex>>> {
    let tile = (1..=rows, 1..=cols).prop_map(|(row, col)| TileIndex { row, col });
    prop::collection::vec(prop::collection::btree_set(tile, 1..6), users)
}

fn requests(sets: &[BTreeSet<TileIndex>], reqs: &[u32]) -> Vec<FovRequest> {
    sets.iter()
        .zip(reqs)
        .enumerate()
        .map(|(i, (t, &r))| FovRequest {
            user: i as u32 + 1,
            tiles: t.clone(),
            requirement: r,
        })
        .collect()
}

fn scenario(users: Vec<FovRequest>, two_state: bool) -> Scenario {
    let k = users.len();
    let channel = if two_state {
        ChannelModel::two_state(k, 1e-6)
    } else {
        ChannelModel::new(vec![vec![ChannelState { gain: 1.5e-6, prob: 1.0 }]; k]).unwrap()
    };
    Scenario {
        geometry: VideoGeometry::new(2, 4, RATES.to_vec(), 30.0).unwrap(),
        phys: PhysicalConfig::default(),
        channel,
        compute: UserCompute::uniform(k, 2e-5),
        users,
        state_cap: DEFAULT_STATE_CAP,
    }
}

/// Small scenarios: up to three users on a 2x4 grid with three levels, at most 4 channel states.
fn small_scenario() -> impl Strategy<Value = Scenario> {
    (1usize..=3)
        .prop_flat_map(|k| (tile_sets(2, 4, k..k + 1), prop::collection::vec(1u32..=3, k)))
        .prop_map(|(sets, reqs)| {
            let two_state = sets.len() <= 2;
            scenario(requests(&sets, &reqs), two_state)
        })
}

fn fast_config() -> SolverConfig {
    SolverConfig {
        restarts: 3,
        ..Default::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn partition_matches_per_tile_grouping(sets in tile_sets(4, 4, 1..6)) {
        let reqs = vec![1; sets.len()];
        let users = requests(&sets, &reqs);
        let part = build_partition(&users).unwrap();

        let mut expected: BTreeMap<Vec<u32>, BTreeSet<TileIndex>> = BTreeMap::new();
        let all: BTreeSet<TileIndex> = sets.iter().flatten().copied().collect();
        for &t in &all {
            let who: Vec<u32> = users.iter().filter(|u| u.tiles.contains(&t)).map(|u| u.user).collect();
            expected.entry(who).or_default().insert(t);
        }
        let got: BTreeMap<Vec<u32>, BTreeSet<TileIndex>> =
            part.groups.iter().map(|g| (g.users.clone(), g.tiles.clone())).collect();
        prop_assert_eq!(&got, &expected);

        let union: BTreeSet<TileIndex> = part.groups.iter().flat_map(|g| g.tiles.iter().copied()).collect();
        prop_assert_eq!(union, all);
        let total: usize = part.groups.iter().map(|g| g.tiles.len()).sum();
        prop_assert_eq!(total, got.values().map(|t| t.len()).sum::<usize>());
        for g in &part.groups {
            prop_assert!(!g.tiles.is_empty());
            for t in &g.tiles {
                let who: Vec<u32> = users.iter().filter(|u| u.tiles.contains(t)).map(|u| u.user).collect();
                prop_assert_eq!(&who, &g.users);
            }
        }
    }

    #[test]
    fn opportunity_sets_nest(reqs in prop::collection::vec(1u32..=6, 1..5), delta in 0u32..4) {
        let l = 6;
        let nat = shared_levels(&reqs, delta, l, OpportunityKind::Natural);
        let rel = shared_levels(&reqs, delta, l, OpportunityKind::Relative);
        let tr = shared_levels(&reqs, delta, l, OpportunityKind::Transcoding);
        prop_assert!(nat.is_subset(&rel));
        prop_assert!(rel.is_subset(&tr));
        prop_assert!(tr.iter().all(|&x| (1..=l).contains(&x)));
        if reqs.len() == 1 {
            prop_assert!(nat.contains(&reqs[0]));
        }
    }

    #[test]
    fn fov_shifts_by_whole_tiles(lon in -180.0f64..180.0, lat in -60.0f64..60.0, shift in 0i64..36,
                                 span_h in 5.0f64..200.0, span_v in 5.0f64..150.0, margin in 0.0f64..15.0) {
        let geo = VideoGeometry::new(18, 36, RATES.to_vec(), 30.0).unwrap();
        let shape = FovShape { span_deg: (span_h, span_v), margin_deg: margin };
        let base = fov_tiles((lon, lat), &shape, &geo).unwrap();
        let moved = fov_tiles((lon + 10.0 * shift as f64, lat), &shape, &geo).unwrap();
        let expected: BTreeSet<TileIndex> = base
            .iter()
            .map(|t| TileIndex { row: t.row, col: ((t.col - 1) as i64 + shift).rem_euclid(36) as usize + 1 })
            .collect();
        prop_assert_eq!(moved, expected);
    }

    #[test]
    fn state_table_is_a_product_distribution(
        probs in prop::collection::vec(prop::collection::vec(0.05f64..1.0, 1..4), 1..5)
    ) {
        let per_user: Vec<Vec<ChannelState>> = probs
            .iter()
            .map(|w| {
                let s: f64 = w.iter().sum();
                w.iter().enumerate().map(|(i, x)| ChannelState { gain: 1e-6 * (i + 1) as f64, prob: x / s }).collect()
            })
            .collect();
        let model = ChannelModel::new(per_user.clone()).unwrap();
        let table = enumerate_system_states(&model, DEFAULT_STATE_CAP).unwrap();
        prop_assert_eq!(table.len(), per_user.iter().map(Vec::len).product::<usize>());
        prop_assert!((table.rows.iter().map(|r| r.prob).sum::<f64>() - 1.0).abs() <= 1e-9);
        for (k, states) in per_user.iter().enumerate() {
            let m = table.marginal(k);
            for s in states {
                let got: f64 = m.iter().filter(|x| x.gain == s.gain).map(|x| x.prob).sum();
                prop_assert!((got - s.prob).abs() <= 1e-12);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10))]

    #[test]
    fn solutions_are_feasible_binary_and_bounded_by_baselines(sc in small_scenario()) {
        let cfg = fast_config();
        let tol = VerifyTolerances::default();
        let mut values = std::collections::HashMap::new();
        for kind in CaseKind::ALL {
            let case = kind.spec(1, 1.0);
            let res = solve_case(&case, &sc, &cfg).unwrap();
            for e in &res.selection.entries {
                prop_assert!(e.y.iter().all(|v| *v == 0.0 || *v == 1.0));
                prop_assert_eq!(e.y.iter().filter(|v| **v == 1.0).count(), 1);
            }
            let report = verify_solution(&case, &sc, &res).unwrap();
            prop_assert!(report.passes(&tol), "{kind}: {report:?}");
            values.insert(kind, res);
        }
        let slack = |r: &tilecast::problems::SolveResult| r.objective * (1.0 + 2.0 * cfg.gap_tol);
        let unicast = baseline_unicast(&sc, &cfg).unwrap();
        prop_assert!(values[&CaseKind::WoA].objective <= slack(&unicast));
        let wa = baseline_max_quality(&sc, Smoothness::Absolute, 1, 1.0, &cfg).unwrap();
        prop_assert!(values[&CaseKind::WA].objective <= slack(&wa));
        let wr = baseline_max_quality(&sc, Smoothness::Relative, 1, 1.0, &cfg).unwrap();
        prop_assert!(values[&CaseKind::WR].objective <= slack(&wr));
        prop_assert_eq!(wa.case.transcoding, Transcoding::With);
    }

    #[test]
    fn oracle_is_a_lower_bound(sc in small_scenario()) {
        let cfg = fast_config();
        for kind in [CaseKind::WoR, CaseKind::WA, CaseKind::WR] {
            let case = kind.spec(1, 1.0);
            let exact = brute_force_optimal(&case, &sc, &OracleBudget::default(), &cfg).unwrap().result;
            let heuristic = solve_case(&case, &sc, &cfg).unwrap();
            let slack = exact.diagnostics.gap.max(0.0) + heuristic.diagnostics.gap.max(0.0) + 1e-9;
            prop_assert!(exact.objective <= heuristic.objective * (1.0 + slack), "{kind}: {} > {}", exact.objective, heuristic.objective);
        }
    }

    #[test]
    fn objective_ignores_user_labels(sc in small_scenario()) {
        let cfg = fast_config();
        let k = sc.users.len() as u32;
        let mut relabeled = sc.clone();
        for u in &mut relabeled.users {
            u.user = k + 1 - u.user;
        }
        relabeled.users.reverse();
        relabeled.channel.per_user_states.reverse();
        relabeled.compute.power_w.reverse();
        let case = CaseKind::WoA.spec(1, 1.0);
        let a = solve_case(&case, &sc, &cfg).unwrap();
        let b = solve_case(&case, &relabeled, &cfg).unwrap();
        let slack = a.diagnostics.gap.max(0.0) + b.diagnostics.gap.max(0.0) + 1e-9;
        prop_assert!((a.objective - b.objective).abs() <= slack * a.objective.max(b.objective),
            "{} vs {}", a.objective, b.objective);
    }
}
