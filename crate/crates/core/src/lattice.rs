//! Dyadic lattice graphs over a plane sample.
//!
//! At level `n` the plane is cut into half-open squares of side 1/2^n; each
//! occupied square becomes a vertex carrying the smallest-index sample point
//! it contains. Two vertices are joined when their cells share a column
//! band or a row band (index difference at most one); an edge is *long*
//! when the lattice points are at max-metric distance at least δ.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde_json::json;

use crate::geometry::{Dyadic, ExactCoord, PlaneSample};
use crate::{Error, Result};

/// An occupied lattice cell. `rep` is the smallest index of a sample point
/// inside the cell; the representative position stands in for the whole
/// cell when values are read off.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vertex {
    pub i: i64,
    pub j: i64,
    pub rep: usize,
}

/// An undirected edge between vertex ranks `a < b`. `vertical` means the
/// column indices differ by at most one (the segment runs roughly up-down),
/// `horizontal` the same for rows; both can hold at once.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub vertical: bool,
    pub horizontal: bool,
}

/// The lattice graph at one level. Vertices are sorted by `(i, j)` and
/// edges by `(a, b)`, so equal samples produce identical structures
/// regardless of input order.
#[derive(Clone, Debug)]
pub struct LatticeGraph {
    pub level: u32,
    vertices: Vec<Vertex>,
    edges: Vec<Edge>,
    adjacency: Vec<Vec<usize>>,
}

impl LatticeGraph {
    pub fn vertices(&self) -> &[Vertex] {
        &self.vertices
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    /// Edge ids incident to vertex `v`.
    pub fn incident(&self, v: usize) -> &[usize] {
        &self.adjacency[v]
    }

    pub fn rank_of(&self, i: i64, j: i64) -> Option<usize> {
        self.vertices.binary_search_by(|v| (v.i, v.j).cmp(&(i, j))).ok()
    }

    /// True when every cell holds exactly one sample point, i.e. the sample
    /// is fully separated at this level.
    pub fn single_occupancy(&self, sample: &PlaneSample) -> bool {
        self.vertices.len() == sample.len()
    }

    pub fn other_end(&self, edge: usize, v: usize) -> usize {
        let e = &self.edges[edge];
        if e.a == v {
            e.b
        } else {
            e.a
        }
    }
}

/// Builds the level-`n` lattice graph: one vertex per occupied cell, an
/// edge whenever two cells lie in the same or adjacent columns, or the same
/// or adjacent rows.
pub fn build_graph(sample: &PlaneSample, level: u32) -> LatticeGraph {
    let mut cells: BTreeMap<(i64, i64), usize> = BTreeMap::new();
    for (idx, p) in sample.points().iter().enumerate() {
        let key = (p.x.cell_index(level), p.y.cell_index(level));
        cells.entry(key).or_insert(idx); // first hit = smallest index
    }
    let vertices: Vec<Vertex> = cells
        .into_iter()
        .map(|((i, j), rep)| Vertex { i, j, rep })
        .collect();

    let mut by_column: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    let mut by_row: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (rank, v) in vertices.iter().enumerate() {
        by_column.entry(v.i).or_default().push(rank);
        by_row.entry(v.j).or_default().push(rank);
    }

    let mut pairs: BTreeSet<(usize, usize)> = BTreeSet::new();
    let mut collect = |groups: &BTreeMap<i64, Vec<usize>>| {
        for (&key, members) in groups {
            for (pos, &a) in members.iter().enumerate() {
                for &b in &members[pos + 1..] {
                    pairs.insert((a.min(b), a.max(b)));
                }
                if let Some(next) = groups.get(&(key + 1)) {
                    for &b in next {
                        pairs.insert((a.min(b), a.max(b)));
                    }
                }
            }
        }
    };
    collect(&by_column);
    collect(&by_row);

    let edges: Vec<Edge> = pairs
        .into_iter()
        .map(|(a, b)| {
            let (va, vb) = (&vertices[a], &vertices[b]);
            Edge {
                a,
                b,
                vertical: (va.i - vb.i).abs() <= 1,
                horizontal: (va.j - vb.j).abs() <= 1,
            }
        })
        .collect();

    let mut adjacency = vec![Vec::new(); vertices.len()];
    for (id, e) in edges.iter().enumerate() {
        adjacency[e.a].push(id);
        adjacency[e.b].push(id);
    }

    LatticeGraph { level, vertices, edges, adjacency }
}

/// Length classification of every edge against δ, plus the vertex sets
/// touched by long horizontal / long vertical edges.
#[derive(Clone, Debug)]
pub struct SubgraphViews {
    pub delta: ExactCoord,
    /// Per edge id: max-metric lattice distance is at least δ.
    pub long: Vec<bool>,
    /// Per vertex rank: incident to some long horizontal edge.
    pub v_hor: Vec<bool>,
    /// Per vertex rank: incident to some long vertical edge.
    pub v_vert: Vec<bool>,
}

impl SubgraphViews {
    pub fn short_edges<'a>(&'a self, graph: &'a LatticeGraph) -> impl Iterator<Item = usize> + 'a {
        (0..graph.edges().len()).filter(|&e| !self.long[e])
    }

    pub fn has_hor(&self) -> bool {
        self.v_hor.iter().any(|&b| b)
    }

    pub fn has_vert(&self) -> bool {
        self.v_vert.iter().any(|&b| b)
    }
}

/// Splits edges into short (< δ) and long (≥ δ) by exact comparison of the
/// lattice-point max-metric distance with δ.
pub fn classify_edges(graph: &LatticeGraph, delta: &ExactCoord) -> SubgraphViews {
    assert!(*delta > ExactCoord::zero(), "delta must be positive");
    let mut long = vec![false; graph.edges().len()];
    let mut v_hor = vec![false; graph.vertex_count()];
    let mut v_vert = vec![false; graph.vertex_count()];
    for (id, e) in graph.edges().iter().enumerate() {
        let (va, vb) = (&graph.vertices()[e.a], &graph.vertices()[e.b]);
        let gap = (va.i - vb.i).abs().max((va.j - vb.j).abs());
        let distance = ExactCoord::from_dyadic(gap, graph.level);
        if distance >= *delta {
            long[id] = true;
            if e.horizontal {
                v_hor[e.a] = true;
                v_hor[e.b] = true;
            }
            if e.vertical {
                v_vert[e.a] = true;
                v_vert[e.b] = true;
            }
        }
    }
    SubgraphViews { delta: delta.clone(), long, v_hor, v_vert }
}

/// Graph distance between the long-horizontal and long-vertical vertex
/// sets, over all edges.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Separation {
    Finite(u64),
    Infinite,
}

impl Separation {
    /// True when the separation is strictly greater than `threshold`
    /// (infinite separation exceeds everything).
    pub fn exceeds(&self, threshold: i64) -> bool {
        match self {
            Separation::Infinite => true,
            Separation::Finite(d) => (*d as i64) > threshold,
        }
    }
}

/// Multi-source BFS distance from the long-horizontal vertex set to the
/// long-vertical vertex set. Zero exactly when the sets intersect;
/// infinite when either set is empty or no path joins them.
pub fn hv_separation(graph: &LatticeGraph, views: &SubgraphViews) -> Separation {
    if !views.has_hor() || !views.has_vert() {
        return Separation::Infinite;
    }
    let mut dist: Vec<Option<u64>> = vec![None; graph.vertex_count()];
    let mut queue = VecDeque::new();
    for v in 0..graph.vertex_count() {
        if views.v_hor[v] {
            dist[v] = Some(0);
            queue.push_back(v);
        }
    }
    while let Some(v) = queue.pop_front() {
        let d = dist[v].unwrap();
        if views.v_vert[v] {
            return Separation::Finite(d);
        }
        for &e in graph.incident(v) {
            let w = graph.other_end(e, v);
            if dist[w].is_none() {
                dist[w] = Some(d + 1);
                queue.push_back(w);
            }
        }
    }
    Separation::Infinite
}

/// Smallest level `n ≤ max_n` whose cell width is at most δ/2 and whose
/// long-horizontal / long-vertical separation strictly exceeds
/// `buckets - 1`.
pub fn choose_resolution(
    sample: &PlaneSample,
    delta: Dyadic,
    buckets: u64,
    max_n: u32,
) -> Result<u32> {
    let threshold = buckets as i64 - 1;
    let start = delta.min_level();
    for n in start..=max_n {
        let graph = build_graph(sample, n);
        let views = classify_edges(&graph, &delta.as_coord());
        if hv_separation(&graph, &views).exceeds(threshold) {
            return Ok(n);
        }
    }
    Err(Error::ResolutionExhausted {
        max_n,
        detail: format!(
            "separation needs to exceed {threshold} with cell width ≤ {}/2",
            delta.as_coord()
        ),
    })
}

/// JSON debug dump of a classified graph.
pub fn debug_dump(graph: &LatticeGraph, views: &SubgraphViews) -> serde_json::Value {
    let vertices: Vec<_> = graph.vertices().iter().map(|v| json!([v.i, v.j])).collect();
    let edges: Vec<_> = graph
        .edges()
        .iter()
        .enumerate()
        .map(|(id, e)| {
            let (va, vb) = (&graph.vertices()[e.a], &graph.vertices()[e.b]);
            json!([
                [va.i, va.j],
                [vb.i, vb.j],
                { "v": e.vertical, "h": e.horizontal, "long": views.long[id] }
            ])
        })
        .collect();
    json!({ "level": graph.level, "vertices": vertices, "edges": edges })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::SamplePoint;
    use rand::{Rng, SeedableRng};

    fn coord(s: &str) -> ExactCoord {
        ExactCoord::parse(s).unwrap()
    }

    fn sample_from(pts: &[(&str, &str)]) -> PlaneSample {
        PlaneSample::new(
            pts.iter()
                .map(|(x, y)| SamplePoint { x: coord(x), y: coord(y), f: 0.0 })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn single_point_yields_one_vertex_no_edges() {
        let g = build_graph(&sample_from(&[("0.1", "0.1")]), 1);
        assert_eq!(g.vertices(), &[Vertex { i: 0, j: 0, rep: 0 }]);
        assert!(g.edges().is_empty());
    }

    #[test]
    fn same_row_distant_cells_get_both_flags_at_coarse_level() {
        // Cells (0,0) and (1,0) at level 1: columns adjacent AND rows equal.
        let g = build_graph(&sample_from(&[("0.1", "0.1"), ("0.9", "0.1")]), 1);
        assert_eq!(g.vertex_count(), 2);
        assert_eq!(g.edges().len(), 1);
        let e = &g.edges()[0];
        assert!(e.vertical && e.horizontal);
    }

    #[test]
    fn representative_is_smallest_sample_index() {
        let g = build_graph(&sample_from(&[("0.3", "0.3"), ("0.1", "0.1")]), 0);
        assert_eq!(g.vertex_count(), 1);
        assert_eq!(g.vertices()[0].rep, 0);
    }

    #[test]
    fn classification_against_delta_is_exact() {
        // Lattice points (0,0) and (0,0.5) at level 1.
        let s = sample_from(&[("0", "0"), ("0", "0.5")]);
        let g = build_graph(&s, 1);
        assert_eq!(g.edges().len(), 1);
        let views = classify_edges(&g, &coord("0.3"));
        assert!(views.long[0]);
        assert!(g.edges()[0].vertical);
        let views = classify_edges(&g, &coord("0.75"));
        assert!(!views.long[0]);
        // Boundary: distance exactly δ counts as long.
        let views = classify_edges(&g, &coord("0.5"));
        assert!(views.long[0]);
    }

    #[test]
    fn separation_infinite_without_long_edges() {
        let s = sample_from(&[("0.1", "0.1"), ("0.2", "0.2")]);
        let g = build_graph(&s, 1);
        let views = classify_edges(&g, &coord("1"));
        assert_eq!(hv_separation(&g, &views), Separation::Infinite);
    }

    #[test]
    fn separation_zero_when_sets_share_a_vertex() {
        // The middle cell of a three-point array touches a long vertical
        // and a long horizontal edge.
        let s = sample_from(&[("0", "0"), ("0", "1"), ("1", "1")]);
        let g = build_graph(&s, 2);
        let views = classify_edges(&g, &coord("0.5"));
        assert_eq!(hv_separation(&g, &views), Separation::Finite(0));
    }

    /// Per-source BFS used as the separation oracle.
    fn separation_oracle(graph: &LatticeGraph, views: &SubgraphViews) -> Separation {
        let mut best: Option<u64> = None;
        for s in 0..graph.vertex_count() {
            if !views.v_hor[s] {
                continue;
            }
            let mut dist = vec![None; graph.vertex_count()];
            dist[s] = Some(0u64);
            let mut q = VecDeque::from([s]);
            while let Some(v) = q.pop_front() {
                for &e in graph.incident(v) {
                    let w = graph.other_end(e, v);
                    if dist[w].is_none() {
                        dist[w] = Some(dist[v].unwrap() + 1);
                        q.push_back(w);
                    }
                }
            }
            for t in 0..graph.vertex_count() {
                if views.v_vert[t] {
                    if let Some(d) = dist[t] {
                        best = Some(best.map_or(d, |b: u64| b.min(d)));
                    }
                }
            }
        }
        best.map_or(Separation::Infinite, Separation::Finite)
    }

    fn random_sample(rng: &mut impl Rng, n: usize, grid: u32) -> PlaneSample {
        let mut pts = Vec::new();
        let mut seen = std::collections::HashSet::new();
        while pts.len() < n {
            let x = rng.gen_range(0..grid);
            let y = rng.gen_range(0..grid);
            if seen.insert((x, y)) {
                pts.push(SamplePoint {
                    x: coord(&format!("0.{x:03}")),
                    y: coord(&format!("0.{y:03}")),
                    f: 0.0,
                });
            }
        }
        PlaneSample::new(pts).unwrap()
    }

    #[test]
    fn separation_matches_per_source_bfs() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
        for _ in 0..60 {
            let s = random_sample(&mut rng, rng.gen_range(2..20), 8);
            let n = rng.gen_range(1..6);
            let g = build_graph(&s, n);
            let k = rng.gen_range(1..=n as i32);
            let views = classify_edges(&g, &Dyadic::new(-k).as_coord());
            assert_eq!(hv_separation(&g, &views), separation_oracle(&g, &views));
        }
    }

    #[test]
    fn edges_match_all_pairs_scan() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        for _ in 0..150 {
            let s = random_sample(&mut rng, rng.gen_range(1..25), 16);
            let n = rng.gen_range(0..7);
            let g = build_graph(&s, n);
            // Oracle: every vertex pair, straight from the definition.
            let mut expected = Vec::new();
            for a in 0..g.vertex_count() {
                for b in (a + 1)..g.vertex_count() {
                    let (va, vb) = (&g.vertices()[a], &g.vertices()[b]);
                    let di = (va.i - vb.i).abs();
                    let dj = (va.j - vb.j).abs();
                    if di <= 1 || dj <= 1 {
                        expected.push(Edge {
                            a,
                            b,
                            vertical: di <= 1,
                            horizontal: dj <= 1,
                        });
                    }
                }
            }
            assert_eq!(g.edges(), &expected[..]);
        }
    }

    #[test]
    fn graph_is_invariant_under_input_permutation() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(47);
        for _ in 0..40 {
            let s = random_sample(&mut rng, rng.gen_range(2..20), 10);
            let mut shuffled: Vec<SamplePoint> = s.points().to_vec();
            for i in (1..shuffled.len()).rev() {
                shuffled.swap(i, rng.gen_range(0..=i));
            }
            let s2 = PlaneSample::new(shuffled).unwrap();
            let n = rng.gen_range(0..6);
            let (g1, g2) = (build_graph(&s, n), build_graph(&s2, n));
            let keys = |g: &LatticeGraph| {
                g.vertices().iter().map(|v| (v.i, v.j)).collect::<Vec<_>>()
            };
            assert_eq!(keys(&g1), keys(&g2));
            let edge_keys = |g: &LatticeGraph| {
                g.edges()
                    .iter()
                    .map(|e| {
                        let (va, vb) = (&g.vertices()[e.a], &g.vertices()[e.b]);
                        ((va.i, va.j), (vb.i, vb.j), e.vertical, e.horizontal)
                    })
                    .collect::<Vec<_>>()
            };
            assert_eq!(edge_keys(&g1), edge_keys(&g2));
        }
    }

    #[test]
    fn finer_levels_refine_cells() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(59);
        for _ in 0..40 {
            let s = random_sample(&mut rng, rng.gen_range(1..15), 12);
            let n = rng.gen_range(0..6);
            let (coarse, fine) = (build_graph(&s, n), build_graph(&s, n + 1));
            for v in fine.vertices() {
                let parent = (v.i.div_euclid(2), v.j.div_euclid(2));
                assert!(
                    coarse.rank_of(parent.0, parent.1).is_some(),
                    "fine cell ({}, {}) has no parent at level {n}",
                    v.i,
                    v.j
                );
            }
        }
    }

    #[test]
    fn resolution_for_separated_diagonal_sample() {
        // Strictly monotone positions: all coordinates distinct, so at a
        // fine enough level nothing shares a band and separation is
        // infinite. The chosen level must be the smallest satisfying both
        // conditions.
        let s = sample_from(&[
            ("0.11", "0.13"),
            ("0.23", "0.27"),
            ("0.41", "0.44"),
            ("0.63", "0.61"),
            ("0.86", "0.88"),
        ]);
        let delta = Dyadic::new(-2);
        let n = choose_resolution(&s, delta, 3, 24).unwrap();
        assert!(n >= delta.min_level());
        let check = |m: u32| {
            let g = build_graph(&s, m);
            let views = classify_edges(&g, &delta.as_coord());
            hv_separation(&g, &views).exceeds(2)
        };
        assert!(check(n));
        for m in delta.min_level()..n {
            assert!(!check(m), "level {m} already satisfied the conditions");
        }
    }

    #[test]
    fn resolution_exhausts_on_three_point_array() {
        // The array's middle cell stays in both long vertex sets at every
        // level, so no level works for buckets ≥ 1.
        let s = sample_from(&[("0", "0"), ("0", "1"), ("1", "1")]);
        let r = choose_resolution(&s, Dyadic::new(-1), 1, 10);
        assert!(matches!(r, Err(Error::ResolutionExhausted { .. })));
    }

    #[test]
    fn zero_buckets_only_needs_cell_width() {
        let s = sample_from(&[("0", "0"), ("0", "1"), ("1", "1")]);
        let n = choose_resolution(&s, Dyadic::new(-1), 0, 10).unwrap();
        assert_eq!(n, Dyadic::new(-1).min_level());
    }

    #[test]
    fn debug_dump_shape() {
        let s = sample_from(&[("0.1", "0.1"), ("0.9", "0.1")]);
        let g = build_graph(&s, 1);
        let views = classify_edges(&g, &coord("0.5"));
        let v = debug_dump(&g, &views);
        assert_eq!(v["level"], 1);
        assert_eq!(v["vertices"].as_array().unwrap().len(), 2);
        let edge = &v["edges"][0];
        assert_eq!(edge[0], serde_json::json!([0, 0]));
        assert_eq!(edge[1], serde_json::json!([1, 0]));
        assert_eq!(edge[2]["v"], true);
        assert_eq!(edge[2]["h"], true);
        assert_eq!(edge[2]["long"], true);
    }
}
