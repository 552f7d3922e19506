//! Independent cross-checks: an exact additive-decomposability test over
//! rational arithmetic, and an exhaustive path-length verifier for small
//! lattice graphs.
//!
//! Nothing here shares logic with the construction in `step`; these
//! functions exist so that results can be validated by a second route.

use std::collections::BTreeMap;

use num::bigint::BigInt;
use num::rational::BigRational;
use num::{Signed, ToPrimitive, Zero};

use crate::geometry::{ExactCoord, PlaneSample};
use crate::lattice::{LatticeGraph, SubgraphViews};
use crate::{Error, Result};

/// Largest graph the exhaustive path verifier accepts.
pub const EXHAUSTIVE_VERTEX_LIMIT: usize = 20;

/// An exact additive decomposition `f(x,y) = g(x) + h(y)` on the sampled
/// positions, rendered to f64. The defining identity holds exactly in
/// rational arithmetic; only this final rendering rounds.
#[derive(Clone, Debug)]
pub struct ExactDecomposition {
    pub g: BTreeMap<ExactCoord, f64>,
    pub h: BTreeMap<ExactCoord, f64>,
}

/// Decides exactly whether the sample admits an additive decomposition,
/// and produces one if so.
///
/// Positions sharing an x bind their `h` values together, positions
/// sharing a y bind `g` values; each connected component of that binding
/// structure is propagated from its smallest x value (gauged to `g = 0`)
/// in exact rational arithmetic. A revisited position whose forced value
/// disagrees is a proof that no decomposition exists.
pub fn exact_decompose(sample: &PlaneSample) -> Result<ExactDecomposition> {
    let pts = sample.points();
    let mut xs: Vec<&ExactCoord> = pts.iter().map(|p| &p.x).collect();
    xs.sort();
    xs.dedup();
    let mut ys: Vec<&ExactCoord> = pts.iter().map(|p| &p.y).collect();
    ys.sort();
    ys.dedup();
    let x_id: BTreeMap<&ExactCoord, usize> =
        xs.iter().enumerate().map(|(k, &x)| (x, k)).collect();
    let y_id: BTreeMap<&ExactCoord, usize> =
        ys.iter().enumerate().map(|(k, &y)| (y, xs.len() + k)).collect();

    // Node = column or row; one edge per sample point.
    let node_count = xs.len() + ys.len();
    let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); node_count];
    for (idx, p) in pts.iter().enumerate() {
        let (cx, ry) = (x_id[&p.x], y_id[&p.y]);
        adjacency[cx].push(idx);
        adjacency[ry].push(idx);
    }

    let exact_f: Vec<BigRational> = pts
        .iter()
        .map(|p| BigRational::from_float(p.f).expect("sample values are finite"))
        .collect();
    let mut assigned: Vec<Option<BigRational>> = vec![None; node_count];
    // Scanning columns in coordinate order roots every component at its
    // smallest x, which fixes the gauge deterministically.
    for root in 0..xs.len() {
        if assigned[root].is_some() {
            continue;
        }
        assigned[root] = Some(BigRational::zero());
        let mut queue = std::collections::VecDeque::from([root]);
        while let Some(node) = queue.pop_front() {
            let own = assigned[node].clone().expect("queued nodes are assigned");
            for &idx in &adjacency[node] {
                let p = &pts[idx];
                let other = if node < xs.len() { y_id[&p.y] } else { x_id[&p.x] };
                let forced = &exact_f[idx] - &own;
                match &assigned[other] {
                    None => {
                        assigned[other] = Some(forced);
                        queue.push_back(other);
                    }
                    Some(existing) if *existing != forced => {
                        return Err(Error::NotDecomposable {
                            detail: format!(
                                "value at ({}, {}) is inconsistent with the \
                                 values forced by the rest of its component",
                                p.x, p.y
                            ),
                        });
                    }
                    Some(_) => {}
                }
            }
        }
    }

    let render = |r: &BigRational| r.to_f64().expect("bounded rationals render to f64");
    Ok(ExactDecomposition {
        g: xs
            .iter()
            .map(|&x| (x.clone(), render(assigned[x_id[&x]].as_ref().unwrap())))
            .collect(),
        h: ys
            .iter()
            .map(|&y| (y.clone(), render(assigned[y_id[&y]].as_ref().unwrap())))
            .collect(),
    })
}

/// Exhaustively verifies, on a small graph, that every path whose first
/// edge spans at least δ in x and whose last edge spans at least δ in y —
/// with only short edges in between — has more than `bound` edges.
///
/// Returns `Ok(false)` with a shorter path found, `Ok(true)` if none
/// exists, and `TooLarge` beyond [`EXHAUSTIVE_VERTEX_LIMIT`] vertices.
/// This re-derives from the path definition what `hv_separation` computes
/// via vertex classes and is deliberately independent of it.
pub fn verify_long_path_bound(
    graph: &LatticeGraph,
    views: &SubgraphViews,
    bound: u64,
) -> Result<bool> {
    if graph.vertex_count() > EXHAUSTIVE_VERTEX_LIMIT {
        return Err(Error::TooLarge {
            vertices: graph.vertex_count(),
            limit: EXHAUSTIVE_VERTEX_LIMIT,
        });
    }
    let two = BigInt::from(2);
    let spans_delta = |gap: i64| {
        // gap / 2^level >= delta, exactly.
        let lhs = BigRational::new(BigInt::from(gap), two.pow(graph.level));
        lhs >= *views.delta.as_ratio()
    };
    let x_long: Vec<bool> = graph
        .edges()
        .iter()
        .map(|e| {
            let (a, b) = (&graph.vertices()[e.a], &graph.vertices()[e.b]);
            spans_delta((a.i - b.i).abs())
        })
        .collect();
    let y_long: Vec<bool> = graph
        .edges()
        .iter()
        .map(|e| {
            let (a, b) = (&graph.vertices()[e.a], &graph.vertices()[e.b]);
            spans_delta((a.j - b.j).abs())
        })
        .collect();

    if bound == 0 {
        return Ok(true); // no path has zero edges
    }
    // A single edge long both ways is already a violating path of length 1.
    if (0..graph.edges().len()).any(|e| x_long[e] && y_long[e]) {
        return Ok(false);
    }

    // Walk outward from every x-long first edge over short edges, trying to
    // finish with a y-long edge within the budget. `best[v]` prunes walks
    // that arrive no earlier than a previous visit.
    for first in 0..graph.edges().len() {
        if !x_long[first] {
            continue;
        }
        let e = &graph.edges()[first];
        for start in [e.a, e.b] {
            let mut best: Vec<Option<u64>> = vec![None; graph.vertex_count()];
            let mut stack = vec![(start, 1u64)];
            while let Some((v, used)) = stack.pop() {
                if best[v].is_some_and(|b| b <= used) {
                    continue;
                }
                best[v] = Some(used);
                for &next in graph.incident(v) {
                    if y_long[next] && used + 1 <= bound {
                        return Ok(false);
                    }
                    if !views.long[next] && used + 1 < bound {
                        stack.push((graph.other_end(next, v), used + 1));
                    }
                }
            }
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::SamplePoint;
    use crate::lattice::{build_graph, classify_edges, hv_separation};

    fn coord(s: &str) -> ExactCoord {
        ExactCoord::parse(s).unwrap()
    }

    fn sample_from(pts: &[(&str, &str, f64)]) -> PlaneSample {
        PlaneSample::new(
            pts.iter()
                .map(|(x, y, f)| SamplePoint { x: coord(x), y: coord(y), f: *f })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn rectangle_with_inconsistent_corner_is_not_decomposable() {
        let s = sample_from(&[
            ("0", "0", 0.0),
            ("0", "1", 0.0),
            ("1", "0", 0.0),
            ("1", "1", 1.0),
        ]);
        assert!(matches!(exact_decompose(&s), Err(Error::NotDecomposable { .. })));
    }

    #[test]
    fn consistent_rectangle_recovers_exact_values() {
        // f = g + h with dyadic values: every forced value is an exact f64.
        let s = sample_from(&[
            ("0", "0", 0.0),
            ("0", "1", 0.5),
            ("1", "0", 0.25),
            ("1", "1", 0.75),
        ]);
        let d = exact_decompose(&s).unwrap();
        assert_eq!(d.g[&coord("0")], 0.0);
        assert_eq!(d.g[&coord("1")], 0.25);
        assert_eq!(d.h[&coord("0")], 0.0);
        assert_eq!(d.h[&coord("1")], 0.5);
    }

    #[test]
    fn gauge_is_zero_at_smallest_column_of_each_component() {
        let s = sample_from(&[
            // Component 1: columns 0,1 tied through row 0.
            ("0", "0", 0.5),
            ("1", "0", 0.75),
            // Component 2: a lone point far away.
            ("5", "9", -2.0),
        ]);
        let d = exact_decompose(&s).unwrap();
        assert_eq!(d.g[&coord("0")], 0.0);
        assert_eq!(d.g[&coord("5")], 0.0);
        assert_eq!(d.h[&coord("9")], -2.0);
    }

    #[test]
    fn samples_without_three_point_arrays_always_decompose() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
        for round in 0..80 {
            let n = rng.gen_range(1..30);
            let mut pts = Vec::new();
            let mut taken = std::collections::HashSet::new();
            while pts.len() < n {
                let x = rng.gen_range(0..40u32);
                let y = rng.gen_range(0..40u32);
                if taken.insert((x, y)) {
                    pts.push(SamplePoint {
                        x: ExactCoord::from_integer(x as i64),
                        y: ExactCoord::from_integer(y as i64),
                        f: rng.gen_range(-3.0..3.0f64),
                    });
                }
            }
            let s = PlaneSample::new(pts).unwrap();
            if crate::geometry::detect_three_array(&s).is_some() {
                continue;
            }
            // No array means no binding cycle: decomposition always exists.
            let d = exact_decompose(&s).unwrap_or_else(|e| {
                panic!("round {round}: array-free sample failed: {e}")
            });
            for p in s.points() {
                let err = (p.f - d.g[&p.x] - d.h[&p.y]).abs();
                assert!(err < 1e-12, "round {round}: residual {err}");
            }
        }
    }

    #[test]
    fn decomposable_verdict_matches_reconstruction_even_with_cycles() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(29);
        // Build additive samples over a full grid (plenty of cycles) with
        // dyadic g/h so f is exactly additive in f64.
        for _ in 0..20 {
            let w = rng.gen_range(2..6);
            let gv: Vec<f64> = (0..w).map(|_| rng.gen_range(-8..8) as f64 / 4.0).collect();
            let hv: Vec<f64> = (0..w).map(|_| rng.gen_range(-8..8) as f64 / 4.0).collect();
            let mut pts = Vec::new();
            for (i, g) in gv.iter().enumerate() {
                for (j, h) in hv.iter().enumerate() {
                    pts.push(SamplePoint {
                        x: ExactCoord::from_integer(i as i64),
                        y: ExactCoord::from_integer(j as i64),
                        f: g + h,
                    });
                }
            }
            let s = PlaneSample::new(pts).unwrap();
            let d = exact_decompose(&s).unwrap();
            for p in s.points() {
                assert_eq!(p.f, d.g[&p.x] + d.h[&p.y]);
            }
        }
    }

    fn graph_views(
        pts: &[(&str, &str, f64)],
        level: u32,
        delta: &str,
    ) -> (LatticeGraph, SubgraphViews) {
        let s = sample_from(pts);
        let g = build_graph(&s, level);
        let views = classify_edges(&g, &coord(delta));
        (g, views)
    }

    #[test]
    fn finds_short_violating_path() {
        // Row pair then column pair through a shared corner cell: the path
        // x-long edge, y-long edge has length 2. The loose corner pair
        // (0,0)-(2,2) exceeds 1 in both coordinates, so no edge skips it.
        let (g, views) = graph_views(
            &[("0", "0", 0.0), ("2", "0", 0.0), ("2", "2", 0.0)],
            0,
            "2",
        );
        assert!(!verify_long_path_bound(&g, &views, 2).unwrap());
        // Length exactly 2: a bound of 1 is satisfied.
        assert!(verify_long_path_bound(&g, &views, 1).unwrap());
    }

    #[test]
    fn no_violation_without_vertical_long_edges() {
        let (g, views) =
            graph_views(&[("0", "0", 0.0), ("1", "0", 0.0)], 0, "1");
        for bound in 0..6 {
            assert!(verify_long_path_bound(&g, &views, bound).unwrap());
        }
    }

    #[test]
    fn short_edges_between_long_ends_count_toward_length() {
        // A chain A(0,0)-B(2,1)-C(3,2)-D(4,3)-E(5,5): A-B is x-long,
        // B-C and C-D are short diagonal steps, D-E is y-long, and no
        // other pair is close enough in either coordinate to form an
        // edge. The only mixed long path has length 4.
        let (g, views) = graph_views(
            &[
                ("0", "0", 0.0),
                ("2", "1", 0.0),
                ("3", "2", 0.0),
                ("4", "3", 0.0),
                ("5", "5", 0.0),
            ],
            0,
            "2",
        );
        assert_eq!(g.edges().len(), 4);
        assert!(!verify_long_path_bound(&g, &views, 4).unwrap());
        assert!(verify_long_path_bound(&g, &views, 3).unwrap());
    }

    #[test]
    fn rejects_oversized_graphs() {
        let pts: Vec<(String, String, f64)> =
            (0..21).map(|k| (k.to_string(), (100 + 3 * k).to_string(), 0.0)).collect();
        let refs: Vec<(&str, &str, f64)> =
            pts.iter().map(|(x, y, f)| (x.as_str(), y.as_str(), *f)).collect();
        let s = sample_from(&refs);
        let g = build_graph(&s, 0);
        let views = classify_edges(&g, &coord("1"));
        assert!(matches!(
            verify_long_path_bound(&g, &views, 3),
            Err(Error::TooLarge { vertices: 21, limit: 20 })
        ));
    }

    #[test]
    fn separation_threshold_implies_exhaustive_bound() {
        use rand::{Rng, SeedableRng};
        // On graphs where x-long edges are wider than one cell, a
        // separation above l-2 forces every mixed long path past length l.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        for _ in 0..40 {
            let n = rng.gen_range(3..12);
            let mut pts = Vec::new();
            let mut taken = std::collections::HashSet::new();
            while pts.len() < n {
                let x = rng.gen_range(0..10u32);
                let y = rng.gen_range(0..10u32);
                if taken.insert((x, y)) {
                    pts.push(SamplePoint {
                        x: ExactCoord::from_integer(x as i64),
                        y: ExactCoord::from_integer(y as i64),
                        f: 0.0,
                    });
                }
            }
            let s = PlaneSample::new(pts).unwrap();
            let g = build_graph(&s, 0);
            // δ = 2 cells: long edges cannot carry a vertical flag.
            let views = classify_edges(&g, &coord("2"));
            for l in 1..6u64 {
                if hv_separation(&g, &views).exceeds(l as i64 - 2) {
                    assert!(
                        verify_long_path_bound(&g, &views, l).unwrap(),
                        "separation above {} but a path of length <= {l} exists",
                        l as i64 - 2
                    );
                }
            }
        }
    }
}
