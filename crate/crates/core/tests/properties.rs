//! Randomized invariants over schedule shapes within their preconditions.

use pipetab::analytic::formula_bubble_ratio;
use pipetab::costmodel::{ModelConfig, SystemConfig};
use pipetab::execgraph::{build_exec_graph, check_graph, GradientRelease, GraphOptions, NodeKind};
use pipetab::schedule::{
    build_schedule, parse_table_csv, render_table, structural_metrics, validate_table, BuildOptions, ScheduleKind,
    ScheduleTable, StagePlacement, TableFormat,
};
use pipetab::simulator::{simulate, simulate_with, slot_proportional_durations, timeline_metrics};
use proptest::prelude::*;

/// Divisible by every stage and chunk count generated below.
const BLOCKS: u32 = 480;

fn model() -> ModelConfig {
    ModelConfig { blocks: BLOCKS, minibatch: 1920, ..ModelConfig::default() }
}

fn table(kind: ScheduleKind, s: usize, b: usize, recompute: bool) -> ScheduleTable {
    let p = StagePlacement::for_kind(kind, s, BLOCKS, 2).unwrap();
    build_schedule(kind, s, b, &p, BuildOptions { recompute, waves: 2 }).unwrap()
}

/// (kind, S, B) satisfying each family's preconditions.
fn shape() -> impl Strategy<Value = (ScheduleKind, usize, usize)> {
    prop_oneof![
        (1usize..=6, 0u32..=6).prop_map(|(s, e)| (ScheduleKind::GPipe, s, 1usize << e)),
        (1usize..=6, 0u32..=6).prop_map(|(s, e)| (ScheduleKind::OneF1B, s, 1usize << e)),
        (1usize..=4, 1u32..=6).prop_map(|(h, e)| (ScheduleKind::Chimera, 2 * h, 1usize << e)),
        (1usize..=5).prop_map(|h| (ScheduleKind::Hanayo, 2 * h, 2 * h)),
    ]
}

fn unidirectional() -> impl Strategy<Value = (usize, usize)> {
    (2usize..=6, 1usize..=40)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn built_tables_validate((kind, s, b) in shape(), recompute in any::<bool>()) {
        let t = table(kind, s, b, recompute);
        let report = validate_table(&t);
        prop_assert!(report.is_valid(), "{}", report.summary(5));
    }

    #[test]
    fn graphs_are_acyclic_and_clean((kind, s, b) in shape(), recompute in any::<bool>(), backward in any::<bool>()) {
        let t = table(kind, s, b, recompute);
        let release = if backward { GradientRelease::AfterBackward } else { GradientRelease::AfterAgrad };
        let g = build_exec_graph(&t, &model(), GraphOptions { gradient_release: release, ..Default::default() }).unwrap();
        prop_assert!(g.topo_order().is_ok());
        let r = check_graph(&g);
        prop_assert!(r.is_ok(), "{:?}", r.violations.first());
    }

    #[test]
    fn unidirectional_transfer_count((s, b) in unidirectional(), one_f in any::<bool>()) {
        let kind = if one_f { ScheduleKind::OneF1B } else { ScheduleKind::GPipe };
        let p = StagePlacement::uniform(s, 120).unwrap();
        let t = build_schedule(kind, s, b, &p, BuildOptions::default()).unwrap();
        let g = build_exec_graph(&t, &ModelConfig { blocks: 120, minibatch: b as u64, ..ModelConfig::default() }, GraphOptions::default()).unwrap();
        let n = g.nodes.iter().filter(|n| matches!(n.kind, NodeKind::Transfer { .. })).count();
        prop_assert_eq!(n, 2 * b * (s - 1));
    }

    #[test]
    fn gpipe_and_one_f_one_b_match_the_formula((s, b) in unidirectional()) {
        let p = StagePlacement::uniform(s, 120).unwrap();
        let g = build_schedule(ScheduleKind::GPipe, s, b, &p, BuildOptions::default()).unwrap();
        let o = build_schedule(ScheduleKind::OneF1B, s, b, &p, BuildOptions::default()).unwrap();
        let f = formula_bubble_ratio(ScheduleKind::GPipe, s, b).unwrap().bubble_ratio;
        prop_assert_eq!(structural_metrics(&g).unwrap().bubble_ratio, f);
        prop_assert_eq!(structural_metrics(&o).unwrap().bubble_ratio, f);
    }

    #[test]
    fn chimera_beats_gpipe_but_not_its_formula(h in 1usize..=4, e in 1u32..=6) {
        let (s, b) = (2 * h, 1usize << e);
        let c = structural_metrics(&table(ScheduleKind::Chimera, s, b, false)).unwrap().bubble_ratio;
        let g = structural_metrics(&table(ScheduleKind::GPipe, s, b, false)).unwrap().bubble_ratio;
        let f = formula_bubble_ratio(ScheduleKind::Chimera, s, b).unwrap().bubble_ratio;
        prop_assert!(c <= g + 1e-12, "chimera {} gpipe {}", c, g);
        prop_assert!(c >= f - 1e-12, "chimera table {} formula {}", c, f);
    }

    #[test]
    fn formulas_fall_with_b_and_rise_with_s(s in 2usize..=16, b in 1usize..=128) {
        for kind in [ScheduleKind::GPipe, ScheduleKind::OneF1B] {
            let here = formula_bubble_ratio(kind, s, b).unwrap().bubble_ratio;
            prop_assert!(formula_bubble_ratio(kind, s, b + 1).unwrap().bubble_ratio < here);
            prop_assert!(formula_bubble_ratio(kind, s + 1, b).unwrap().bubble_ratio > here);
        }
        let s = s + s % 2;
        let here = formula_bubble_ratio(ScheduleKind::Chimera, s, b).unwrap().bubble_ratio;
        prop_assert!(formula_bubble_ratio(ScheduleKind::Chimera, s, b + 1).unwrap().bubble_ratio <= here);
        prop_assert!(formula_bubble_ratio(ScheduleKind::Chimera, s + 2, b).unwrap().bubble_ratio > here);
    }

    #[test]
    fn construction_and_simulation_are_deterministic((kind, s, b) in shape()) {
        let (t1, t2) = (table(kind, s, b, false), table(kind, s, b, false));
        prop_assert_eq!(&t1, &t2);
        let g = build_exec_graph(&t1, &model(), GraphOptions::default()).unwrap();
        let sys = SystemConfig::baseline();
        prop_assert_eq!(simulate(&g, &sys).unwrap(), simulate(&g, &sys).unwrap());
    }

    #[test]
    fn makespan_lies_between_critical_path_and_serial_sum((kind, s, b) in shape()) {
        let t = table(kind, s, b, false);
        let g = build_exec_graph(&t, &model(), GraphOptions::default()).unwrap();
        let sys = SystemConfig::baseline();
        let tl = simulate(&g, &sys).unwrap();
        let d: Vec<f64> = g.nodes.iter().map(|n| pipetab::simulator::node_duration(n, &sys)).collect();
        let cp = g.critical_path(&d).unwrap();
        let serial: f64 = d.iter().sum();
        prop_assert!(tl.makespan >= cp * (1.0 - 1e-12), "{} < {}", tl.makespan, cp);
        prop_assert!(tl.makespan <= serial * (1.0 + 1e-12));
    }

    #[test]
    fn slower_links_never_speed_things_up((kind, s, b) in shape(), slowdown in 1.5f64..20.0) {
        let t = table(kind, s, b, false);
        let g = build_exec_graph(&t, &model(), GraphOptions::default()).unwrap();
        let base = SystemConfig::baseline();
        let slow = SystemConfig { net_bandwidth: base.net_bandwidth / slowdown, net_latency: base.net_latency * slowdown, ..base.clone() };
        let (a, z) = (simulate(&g, &base).unwrap().makespan, simulate(&g, &slow).unwrap().makespan);
        prop_assert!(z >= a * (1.0 - 1e-12), "{} < {}", z, a);
    }

    #[test]
    fn ideal_network_simulation_reproduces_the_table((kind, s, b) in shape(), recompute in any::<bool>()) {
        let t = table(kind, s, b, recompute);
        let structural = structural_metrics(&t).unwrap().bubble_ratio;
        let opts = GraphOptions { gradient_release: GradientRelease::AfterBackward, ..Default::default() };
        let g = build_exec_graph(&t, &model(), opts).unwrap();
        let d = slot_proportional_durations(&g, &t.slot_weights, 1.0);
        let beta = timeline_metrics(&simulate_with(&g, &d).unwrap()).beta_idle;
        prop_assert!((beta - structural).abs() <= 1e-9 * structural.max(1e-12), "sim {} table {}", beta, structural);
    }

    #[test]
    fn csv_rendering_round_trips((kind, s, b) in shape(), recompute in any::<bool>()) {
        let t = table(kind, s, b, recompute);
        let grid = parse_table_csv(&render_table(&t, TableFormat::Csv)).unwrap();
        prop_assert_eq!(&grid, &t.grid);
    }
}
