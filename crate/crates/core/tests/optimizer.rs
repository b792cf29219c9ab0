mod common;

use std::collections::BTreeMap;

use proptest::prelude::*;

use common::*;
use toposem::eval::metrics::ate;
use toposem::eval::sim::square_loop;
use toposem::graph::{EdgeKind, GraphEdge, GraphSnapshot};
use toposem::optimizer::{optimize, DcsParams, OptimizeOptions};
use toposem::SE3Pose;

/// Ground truth around a 5 m square, five nodes per side, heading along
/// the direction of travel.
fn square_truth() -> Vec<SE3Pose> {
    let mut out = Vec::new();
    for side in 0..4 {
        let yaw = side as f64 * std::f64::consts::FRAC_PI_2;
        let (x0, y0) = [(0.0, 0.0), (5.0, 0.0), (5.0, 5.0), (0.0, 5.0)][side];
        for k in 0..5 {
            let s = k as f64;
            out.push(SE3Pose::from_xyz_yaw(x0 + s * yaw.cos(), y0 + s * yaw.sin(), 0.0, yaw));
        }
    }
    out
}

/// Odometry with a small heading bias on every edge and a kick on the final
/// one; optional loop from the last node back to node 0.
fn drifted(loop_meas: Option<SE3Pose>) -> (GraphSnapshot, BTreeMap<usize, SE3Pose>) {
    let truth = square_truth();
    let bias = SE3Pose::from_xyz_yaw(0.0, 0.0, 0.0, 0.01);
    let mut rel: Vec<SE3Pose> = truth.windows(2).map(|w| w[0].between(&w[1]).compose(&bias)).collect();
    let last = rel.len() - 1;
    rel[last] = rel[last].compose(&SE3Pose::from_xyz_yaw(0.3, 0.2, 0.0, 0.05));
    let mut odom = vec![truth[0]];
    for r in &rel {
        odom.push(odom.last().unwrap().compose(r));
    }
    let kfs = odom.iter().enumerate().map(|(i, p)| keyframe(i, *p, None)).collect();
    let mut edges = odometry_chain(&odom);
    if let Some(m) = loop_meas {
        edges.push(GraphEdge { from: truth.len() - 1, to: 0, kind: EdgeKind::Loop, rel_pose: m, info_weight: 1.0 });
    }
    let gt = truth.into_iter().enumerate().collect();
    (GraphSnapshot::from_parts(kfs, edges, 1).unwrap(), gt)
}

fn solve(snap: &GraphSnapshot) -> toposem::optimizer::Optimized {
    optimize(snap, &DcsParams::new(1.0).unwrap(), &OptimizeOptions::default()).unwrap()
}

#[test]
fn wrong_loop_is_switched_off() {
    let truth = square_truth();
    let good = truth[19].between(&truth[0]);
    let bad = SE3Pose::from_xyz_yaw(8.0, -6.0, 0.0, 2.0);

    let (none, gt) = drifted(None);
    let base = ate(&solve(&none).poses, &gt).unwrap();
    let (right, _) = drifted(Some(good));
    let fixed = ate(&solve(&right).poses, &gt).unwrap();
    let (wrong, _) = drifted(Some(bad));
    let kept = ate(&solve(&wrong).poses, &gt).unwrap();

    assert!(base > 0.05, "drift should be visible, ate {base}");
    assert!(fixed < 0.5 * base, "{fixed} vs {base}");
    assert!((kept - base).abs() <= 0.1 * base, "{kept} vs {base}");
}

#[test]
fn node_zero_is_bit_identical() {
    let sq = square_loop(7, 10.0, 0.3);
    let snap = square_snapshot(&sq, true, true);
    let out = solve(&snap);
    assert_eq!(out.poses[&0], snap.keyframes()[0].pose);
}

#[test]
fn consistent_graph_is_a_fixed_point() {
    let truth = square_truth();
    let kfs = truth.iter().enumerate().map(|(i, p)| keyframe(i, *p, None)).collect();
    let mut edges = odometry_chain(&truth);
    edges.push(GraphEdge { from: 19, to: 0, kind: EdgeKind::Loop, rel_pose: truth[19].between(&truth[0]), info_weight: 1.0 });
    let snap = GraphSnapshot::from_parts(kfs, edges, 1).unwrap();
    let out = solve(&snap);
    assert!(out.final_cost() < 1e-20);
    for (i, p) in truth.iter().enumerate() {
        assert!(out.poses[&i].approx_eq(p, 1e-10), "node {i}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn robust_cost_never_increases(seed in 0u64..10_000, outliers in 0.0f64..0.6, phi in 0.1f64..10.0) {
        let sq = square_loop(seed, 10.0, outliers);
        let snap = square_snapshot(&sq, true, true);
        let out = optimize(&snap, &DcsParams::new(phi).unwrap(), &OptimizeOptions::default()).unwrap();
        prop_assert!(out.cost_history.windows(2).all(|w| w[1] <= w[0]));
        prop_assert_eq!(out.poses[&0], snap.keyframes()[0].pose);
    }
}
