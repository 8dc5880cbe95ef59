#![allow(dead_code)]

use gridbp::coarse_grain::{parse_partition, Partition};
use gridbp::grid::{Bus, Line};
use gridbp::scenarios::{sample_measurements, MissingMask, PlacementStrategy};
use gridbp::{build_factor_graph, FactorGraph, GridCase, MeasurementSet};
use nalgebra::DMatrix;

pub fn full_measurements(case: &GridCase, variance: f64, seed: u64) -> MeasurementSet {
    sample_measurements(case, &MissingMask::none(PlacementStrategy::Uniform), variance, seed).unwrap()
}

/// Lines 1 (bus 1 -> 2) and 2 (bus 2 -> 3) with flow measurements on both
/// lines and an injection measurement at bus 2 only, so the injection factor
/// reads x2 - x1.
pub fn block_graph(z1: f64, z2: f64, zg: f64, s1: f64, s2: f64, sg: f64) -> FactorGraph {
    let bus = |id| Bus {
        id,
        angle: 0.0,
        injection_true: 0.0,
        scheduled_injection: None,
    };
    let line = |id, from_bus, to_bus| Line {
        id,
        from_bus,
        to_bus,
        susceptance: 10.0,
        flow_true: 0.0,
    };
    let case = GridCase::new("block", 100.0, vec![bus(1), bus(2), bus(3)], vec![line(1, 1, 2), line(2, 2, 3)]).unwrap();
    let mut meas = MeasurementSet::default();
    meas.flow.insert(1, gridbp::scenarios::Measurement::new(z1, s1));
    meas.flow.insert(2, gridbp::scenarios::Measurement::new(z2, s2));
    meas.injection.insert(2, gridbp::scenarios::Measurement::new(zg, sg));
    build_factor_graph(&case, &meas).unwrap()
}

pub fn rel_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

/// Σ over lines of (estimate - true flow)², in per-unit².
pub fn total_squared_error_pu(case: &GridCase, means: &[f64]) -> f64 {
    case.lines()
        .iter()
        .zip(means)
        .map(|(l, m)| ((m - l.flow_true) / case.base_mva()).powi(2))
        .sum()
}

fn area_connected(case: &GridCase, assign: &[usize], area: usize) -> bool {
    let members: Vec<usize> = (0..assign.len()).filter(|&b| assign[b] == area).collect();
    let Some(&start) = members.first() else {
        return false;
    };
    let mut seen = vec![false; assign.len()];
    seen[start] = true;
    let mut stack = vec![start];
    let mut count = 1;
    while let Some(b) = stack.pop() {
        for &(l, _) in case.incident_lines(b) {
            let (u, v) = case.endpoints(l);
            let o = if u == b { v } else { u };
            if assign[o] == area && !seen[o] {
                seen[o] = true;
                count += 1;
                stack.push(o);
            }
        }
    }
    count == members.len()
}

/// A connected 3-area partition with its true inter-area flows
/// (pairs 0-1, 1-2, 0-2) and number of pairs that share a line.
pub struct Candidate {
    pub assign: Vec<usize>,
    pub flows: [f64; 3],
    pub linked_pairs: usize,
}

/// Every connected 3-area partition of a small case, areas labelled in order
/// of first appearance.
pub fn connected_three_partitions(case: &GridCase) -> Vec<Candidate> {
    let n = case.buses().len();
    assert!(n <= 16, "exhaustive enumeration is for small cases");
    let mut out = Vec::new();
    let mut assign = vec![0usize; n];
    for code in 0..3usize.pow(n as u32) {
        let mut c = code;
        for a in assign.iter_mut() {
            *a = c % 3;
            c /= 3;
        }
        let mut next = 0;
        if assign.iter().any(|&a| {
            let bad = a > next;
            if a == next {
                next += 1;
            }
            bad
        }) || next != 3
        {
            continue;
        }
        if !(0..3).all(|a| area_connected(case, &assign, a)) {
            continue;
        }
        let mut flows = [0.0; 3];
        let mut cut = [0usize; 3];
        for (l, line) in case.lines().iter().enumerate() {
            let (u, v) = case.endpoints(l);
            let (a, b) = (assign[u], assign[v]);
            if a == b {
                continue;
            }
            let (lo, hi, s) = if a < b { (a, b, 1.0) } else { (b, a, -1.0) };
            let p = match (lo, hi) {
                (0, 1) => 0,
                (1, 2) => 1,
                _ => 2,
            };
            flows[p] += s * line.flow_true;
            cut[p] += 1;
        }
        out.push(Candidate {
            assign: assign.clone(),
            flows,
            linked_pairs: cut.iter().filter(|&&k| k > 0).count(),
        });
    }
    out
}

/// Summed absolute difference between the sorted flow magnitudes and a
/// target triple.
pub fn flow_mismatch(flows: &[f64; 3], target: [f64; 3]) -> f64 {
    let mut a: Vec<f64> = flows.iter().map(|x| x.abs()).collect();
    a.sort_by(|x, y| y.total_cmp(x));
    let mut t = target.to_vec();
    t.sort_by(|x, y| y.total_cmp(x));
    a.iter().zip(&t).map(|(x, y)| (x - y).abs()).sum()
}

pub fn to_partition(case: &GridCase, assign: &[usize], name: &str) -> Partition {
    let labels = ["I", "II", "III"];
    let text: String = case
        .buses()
        .iter()
        .zip(assign)
        .map(|(b, &a)| format!("{} {}\n", b.id, labels[a]))
        .collect();
    parse_partition(&text, name, case).unwrap()
}

/// IEEE-14 3-area partitions whose true area flows (within 8 MW summed)
/// resemble the geographic three-pair partition (97.5, 10.8, 4.96 MW) and
/// the two-pair partition without I-III lines (71.9, 15.7, 0 MW).
pub fn ieee14_fingerprint_partitions(case: &GridCase) -> (Vec<Partition>, Vec<Partition>) {
    let mut three = Vec::new();
    let mut two = Vec::new();
    for c in connected_three_partitions(case) {
        if c.linked_pairs == 3 && flow_mismatch(&c.flows, [97.5, 10.8, 4.96]) < 8.0 {
            three.push(to_partition(case, &c.assign, &format!("three_pair_{}", three.len())));
        }
        if c.linked_pairs == 2 && flow_mismatch(&c.flows, [71.9, 15.7, 0.0]) < 8.0 {
            two.push(to_partition(case, &c.assign, &format!("two_pair_{}", two.len())));
        }
    }
    (three, two)
}
