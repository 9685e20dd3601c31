//! Instantaneous skew metrics over a set of logical clock readings.

use serde::Serialize;

use crate::topology::{NodeId, Topology};

/// Skews in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Default)]
pub struct MetricsSample {
    pub time: f64,
    /// Maximum global skew.
    pub mgs: f64,
    /// Average over nodes of each node's largest skew to any node.
    pub ags: f64,
    /// Maximum local skew over edges.
    pub mls: f64,
    /// Average over nodes of each node's largest skew to a neighbour.
    pub als: f64,
    /// Fewer than two nodes were on; all metrics are zero.
    pub degenerate: bool,
}

/// `snapshot` holds `(node, t̂)` for powered-on nodes. Local skews use
/// undirected neighbourhoods restricted to the snapshot; a node with no
/// powered neighbour contributes 0 to ALS.
pub fn compute_metrics(time: f64, snapshot: &[(NodeId, f64)], topology: &Topology) -> MetricsSample {
    if snapshot.len() < 2 {
        return MetricsSample {
            time,
            degenerate: true,
            ..Default::default()
        };
    }
    let mut value = vec![None; topology.node_count() as usize];
    for &(id, t) in snapshot {
        value[id.index()] = Some(t);
    }
    let (lo, hi) = snapshot
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(_, t)| {
            (lo.min(t), hi.max(t))
        });
    let n = snapshot.len() as f64;
    // The farthest node from t is always one of the extremes.
    let ags = snapshot
        .iter()
        .map(|&(_, t)| (t - lo).max(hi - t))
        .sum::<f64>()
        / n;
    let mut mls: f64 = 0.0;
    let mut als_sum = 0.0;
    for &(id, t) in snapshot {
        let local = topology
            .neighbors(id)
            .iter()
            .filter_map(|nb| value[nb.index()])
            .map(|u| (t - u).abs())
            .fold(0.0, f64::max);
        mls = mls.max(local);
        als_sum += local;
    }
    MetricsSample {
        time,
        mgs: hi - lo,
        ags,
        mls,
        als: als_sum / n,
        degenerate: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_nodes() {
        let t = Topology::line(2).unwrap();
        let m = compute_metrics(0.0, &[(NodeId(1), 0.0), (NodeId(2), 100e-6)], &t);
        for v in [m.mgs, m.ags, m.mls, m.als] {
            assert!((v - 100e-6).abs() < 1e-18);
        }
    }

    #[test]
    fn line_of_three() {
        let t = Topology::line(3).unwrap();
        let m = compute_metrics(0.0, &[(NodeId(1), 0.0), (NodeId(2), 1.0), (NodeId(3), 3.0)], &t);
        assert_eq!(m.mgs, 3.0);
        assert_eq!(m.mls, 2.0);
        assert_eq!(m.ags, 8.0 / 3.0);
        assert_eq!(m.als, 5.0 / 3.0);
    }

    #[test]
    fn all_equal() {
        let t = Topology::complete(4).unwrap();
        let snap: Vec<_> = t.nodes().map(|n| (n, 7.5)).collect();
        let m = compute_metrics(1.0, &snap, &t);
        assert_eq!((m.mgs, m.ags, m.mls, m.als), (0.0, 0.0, 0.0, 0.0));
        assert!(!m.degenerate);
    }

    #[test]
    fn single_node_is_flagged() {
        let t = Topology::line(3).unwrap();
        let m = compute_metrics(1.0, &[(NodeId(2), 5.0)], &t);
        assert!(m.degenerate);
        assert_eq!(m.mgs, 0.0);
    }
}
