//! One decomposition step: from a sample and a tolerance `eps` to
//! piecewise-linear `g` and `h` with `|f - g∘p - h∘q| ≤ 6·eps` on the
//! sample.
//!
//! The construction reads values at cell representatives, splits vertices
//! by sign, joins each sign class to a value chain `w_0 … w_C` (one vertex
//! per eps-level), and turns the BFS distance to the chain top into the
//! discrete one-variable part `g`. Every bound the theory promises is
//! re-checked on the produced data; a failed check is an internal error,
//! never a silently degraded result.

use std::collections::{BTreeMap, VecDeque};
use std::fmt::Write as _;

use crate::geometry::{
    detect_three_array, modulus_delta, sup_norm, Dyadic, ExactCoord, PlaneSample,
};
use crate::lattice::{build_graph, classify_edges, hv_separation, LatticeGraph, SubgraphViews};
use crate::{Error, Result};

/// Values of the target function at cell representatives, parallel to
/// `graph.vertices()`.
#[derive(Clone, Debug)]
pub struct VertexFunction {
    values: Vec<f64>,
}

impl VertexFunction {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, rank: usize) -> f64 {
        self.values[rank]
    }

    pub fn sup(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).fold(0.0, f64::max)
    }
}

/// Reads the sampled value at each vertex's representative point.
pub fn sample_values(sample: &PlaneSample, graph: &LatticeGraph) -> VertexFunction {
    VertexFunction {
        values: graph.vertices().iter().map(|v| sample.point(v.rep).f).collect(),
    }
}

/// True iff every short edge moves the vertex values by strictly less than
/// `eps`. Holds whenever δ came from `modulus_delta` and the cell width is
/// at most δ/2: representatives then sit strictly closer than 2δ.
pub fn check_short_edges(
    graph: &LatticeGraph,
    views: &SubgraphViews,
    values: &VertexFunction,
    eps: f64,
) -> bool {
    views.short_edges(graph).all(|e| {
        let edge = &graph.edges()[e];
        (values.get(edge.a) - values.get(edge.b)).abs() < eps
    })
}

/// Number of full eps-levels below `f_norm`: the largest integer with
/// `buckets · eps ≤ f_norm`, fixed up so the defining comparisons hold in
/// f64 arithmetic exactly as stated.
pub fn eps_buckets(f_norm: f64, eps: f64) -> u64 {
    assert!(eps > 0.0 && f_norm >= 0.0);
    let mut b = (f_norm / eps).floor() as u64;
    while b > 0 && (b as f64) * eps > f_norm {
        b -= 1;
    }
    while ((b + 1) as f64) * eps <= f_norm {
        b += 1;
    }
    b
}

/// Smallest integer with `c · eps ≥ value` (the chain length needed to
/// cover `value`, and the chain index a vertex of that value attaches to).
pub fn cover_bucket(value: f64, eps: f64) -> u64 {
    assert!(eps > 0.0 && value >= 0.0);
    let mut c = (value / eps).ceil() as u64;
    while c > 0 && ((c - 1) as f64) * eps >= value {
        c -= 1;
    }
    while (c as f64) * eps < value {
        c += 1;
    }
    c
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn admits(&self, value: f64) -> bool {
        match self {
            Sign::Plus => value >= 0.0,
            Sign::Minus => value < 0.0,
        }
    }
}

/// Node of an augmented sign graph: a lattice vertex (by rank) or a chain
/// vertex `w_k`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum AugNode {
    Cell(usize),
    Chain(u64),
}

/// One sign class joined to its value chain. Edges are the class's short
/// edges, the chain edges `w_k w_{k+1}`, and one attachment edge per
/// long-horizontal class vertex, landing on the chain index that covers
/// its |value|.
#[derive(Clone, Debug)]
pub struct AugmentedSignGraph {
    pub sign: Sign,
    /// Vertex ranks in this class, ascending.
    pub members: Vec<usize>,
    /// No class vertex touches a long horizontal edge: the chain is not
    /// built and the potential is identically zero on the class.
    pub trivial: bool,
    /// Chain vertices are `w_0 … w_{chain_len}` (absent when trivial).
    pub chain_len: u64,
    /// All edges, sorted; `Cell` endpoints use graph vertex ranks.
    pub edges: Vec<(AugNode, AugNode)>,
    /// BFS distance to the chain top per member rank; `None` means not
    /// connected to the chain top.
    distances: BTreeMap<usize, Option<u64>>,
}

impl AugmentedSignGraph {
    /// Distance from vertex `rank` to the chain top, if connected.
    pub fn distance(&self, rank: usize) -> Option<u64> {
        self.distances.get(&rank).copied().flatten()
    }

    pub fn contains(&self, rank: usize) -> bool {
        self.distances.contains_key(&rank)
    }
}

/// Builds the augmented graph of one sign class.
pub fn build_augmented(
    graph: &LatticeGraph,
    views: &SubgraphViews,
    values: &VertexFunction,
    sign: Sign,
    eps: f64,
    chain_len: u64,
) -> AugmentedSignGraph {
    let members: Vec<usize> =
        (0..graph.vertex_count()).filter(|&v| sign.admits(values.get(v))).collect();
    let in_class: Vec<bool> = {
        let mut m = vec![false; graph.vertex_count()];
        for &v in &members {
            m[v] = true;
        }
        m
    };
    let trivial = !members.iter().any(|&v| views.v_hor[v]);
    if trivial {
        return AugmentedSignGraph {
            sign,
            distances: members.iter().map(|&v| (v, None)).collect(),
            members,
            trivial: true,
            chain_len: 0,
            edges: Vec::new(),
        };
    }

    // Node ids: members first (by position), then chain 0..=chain_len.
    let member_pos: BTreeMap<usize, usize> =
        members.iter().enumerate().map(|(pos, &v)| (v, pos)).collect();
    let chain_base = members.len();
    let node_count = chain_base + chain_len as usize + 1;
    let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); node_count];
    let mut edges: Vec<(AugNode, AugNode)> = Vec::new();
    let mut connect = |adjacency: &mut Vec<Vec<usize>>, a: usize, b: usize| {
        adjacency[a].push(b);
        adjacency[b].push(a);
    };

    for e in views.short_edges(graph) {
        let edge = &graph.edges()[e];
        if in_class[edge.a] && in_class[edge.b] {
            connect(&mut adjacency, member_pos[&edge.a], member_pos[&edge.b]);
            edges.push((AugNode::Cell(edge.a), AugNode::Cell(edge.b)));
        }
    }
    for k in 0..chain_len {
        connect(&mut adjacency, chain_base + k as usize, chain_base + k as usize + 1);
        edges.push((AugNode::Chain(k), AugNode::Chain(k + 1)));
    }
    for &v in &members {
        if !views.v_hor[v] {
            continue;
        }
        let bucket = cover_bucket(values.get(v).abs(), eps);
        debug_assert!(bucket <= chain_len);
        connect(&mut adjacency, member_pos[&v], chain_base + bucket as usize);
        edges.push((AugNode::Cell(v), AugNode::Chain(bucket)));
    }
    edges.sort();

    // BFS from the chain top.
    let mut dist: Vec<Option<u64>> = vec![None; node_count];
    let top = chain_base + chain_len as usize;
    dist[top] = Some(0);
    let mut queue = VecDeque::from([top]);
    while let Some(v) = queue.pop_front() {
        for &w in &adjacency[v] {
            if dist[w].is_none() {
                dist[w] = Some(dist[v].unwrap() + 1);
                queue.push_back(w);
            }
        }
    }

    let distances = members.iter().map(|&v| (v, dist[member_pos[&v]])).collect();
    AugmentedSignGraph { sign, members, trivial: false, chain_len, edges, distances }
}

/// The discrete one-variable part on vertices: distance to the chain top,
/// converted to a value. Vertices not connected to the chain top (and all
/// of a trivial class) get zero.
pub fn discrete_potential(
    plus: &AugmentedSignGraph,
    minus: &AugmentedSignGraph,
    eps: f64,
    vertex_count: usize,
) -> VertexFunction {
    let mut values = vec![0.0; vertex_count];
    for class in [plus, minus] {
        if class.trivial {
            continue;
        }
        for &v in &class.members {
            let Some(d) = class.distance(v) else { continue };
            if d >= class.chain_len {
                continue;
            }
            let magnitude = (class.chain_len - d) as f64 * eps;
            values[v] = match class.sign {
                Sign::Plus => magnitude,
                Sign::Minus => -magnitude,
            };
        }
    }
    VertexFunction { values }
}

/// Re-checks every promised bound of the discrete potential on the data
/// actually produced:
/// short edges move it by at most eps; at long-horizontal vertices it
/// tracks the values within eps; at long-vertical vertices it vanishes; it
/// never leaves the interval between 0 and the vertex value.
pub fn verify_potential(
    graph: &LatticeGraph,
    views: &SubgraphViews,
    values: &VertexFunction,
    potential: &VertexFunction,
    eps: f64,
) -> Result<()> {
    for (id, edge) in graph.edges().iter().enumerate() {
        if !views.long[id] {
            let gap = (potential.get(edge.a) - potential.get(edge.b)).abs();
            if gap > eps {
                return Err(Error::guarantee(format!(
                    "short edge {id} moves the potential by {gap} > eps = {eps}"
                )));
            }
        }
    }
    for v in 0..graph.vertex_count() {
        let (f, g) = (values.get(v), potential.get(v));
        if views.v_hor[v] && (f - g).abs() > eps {
            return Err(Error::guarantee(format!(
                "long-horizontal vertex {v}: |value - potential| = {} > eps = {eps}",
                (f - g).abs()
            )));
        }
        if views.v_vert[v] && g != 0.0 {
            return Err(Error::guarantee(format!(
                "long-vertical vertex {v}: potential = {g}, expected 0"
            )));
        }
        let sandwiched = if f >= 0.0 { (0.0..=f).contains(&g) } else { (f..=0.0).contains(&g) };
        if !sandwiched {
            return Err(Error::guarantee(format!(
                "vertex {v}: potential {g} outside [0, value] for value {f}"
            )));
        }
    }
    if potential.sup() > values.sup() {
        return Err(Error::guarantee(format!(
            "potential norm {} exceeds value norm {}",
            potential.sup(),
            values.sup()
        )));
    }
    Ok(())
}

/// A function on one lattice axis: value per occupied cell index at a
/// fixed level.
#[derive(Clone, Debug, PartialEq)]
pub struct GridFunction {
    pub level: u32,
    pub values: BTreeMap<i64, f64>,
}

impl GridFunction {
    pub fn coord(&self, key: i64) -> ExactCoord {
        ExactCoord::from_dyadic(key, self.level)
    }
}

/// Collapses the potential to one value per column (read at the smallest
/// row index) and the complement `value - potential` to one value per row
/// (read at the smallest column index).
pub fn fiber_functions(
    graph: &LatticeGraph,
    values: &VertexFunction,
    potential: &VertexFunction,
) -> (GridFunction, GridFunction) {
    let mut g_grid = BTreeMap::new();
    let mut h_grid = BTreeMap::new();
    // Vertices are sorted by (i, j): the first vertex of a column has its
    // smallest j, and the first vertex of a row its smallest i.
    for (rank, v) in graph.vertices().iter().enumerate() {
        g_grid.entry(v.i).or_insert_with(|| potential.get(rank));
        h_grid.entry(v.j).or_insert_with(|| values.get(rank) - potential.get(rank));
    }
    (
        GridFunction { level: graph.level, values: g_grid },
        GridFunction { level: graph.level, values: h_grid },
    )
}

/// Re-checks the fiber-function bounds: each vertex is reproduced within
/// 3·eps, adjacent occupied columns differ by at most eps in `g`, adjacent
/// occupied rows by at most 2·eps in `h`.
pub fn verify_fibers(
    graph: &LatticeGraph,
    values: &VertexFunction,
    g_grid: &GridFunction,
    h_grid: &GridFunction,
    eps: f64,
) -> Result<()> {
    for (rank, v) in graph.vertices().iter().enumerate() {
        let sum = g_grid.values[&v.i] + h_grid.values[&v.j];
        let err = (values.get(rank) - sum).abs();
        if err > 3.0 * eps {
            return Err(Error::guarantee(format!(
                "vertex ({}, {}) reproduced with error {err} > 3·eps = {}",
                v.i,
                v.j,
                3.0 * eps
            )));
        }
    }
    let adjacent_bound = |grid: &GridFunction, factor: f64, what: &str| -> Result<()> {
        let keys: Vec<i64> = grid.values.keys().copied().collect();
        for pair in keys.windows(2) {
            if pair[1] - pair[0] == 1 {
                let gap = (grid.values[&pair[0]] - grid.values[&pair[1]]).abs();
                if gap > factor * eps {
                    return Err(Error::guarantee(format!(
                        "adjacent {what} {} and {} differ by {gap} > {factor}·eps",
                        pair[0], pair[1]
                    )));
                }
            }
        }
        Ok(())
    };
    adjacent_bound(g_grid, 1.0, "columns")?;
    adjacent_bound(h_grid, 2.0, "rows")
}

/// A piecewise-linear function of one variable: exact breakpoint
/// coordinates in strictly increasing order, linear between consecutive
/// breakpoints, constant beyond the extremes. The sup-norm is therefore
/// the largest |value| over breakpoints.
#[derive(Clone, Debug)]
pub struct PiecewiseLinear {
    points: Vec<(ExactCoord, f64)>,
    xs_f64: Vec<f64>,
}

impl PiecewiseLinear {
    pub fn new(points: Vec<(ExactCoord, f64)>) -> Self {
        assert!(!points.is_empty(), "a piecewise-linear function needs a breakpoint");
        for w in points.windows(2) {
            assert!(w[0].0 < w[1].0, "breakpoints must strictly increase");
        }
        let xs_f64 = points.iter().map(|(x, _)| x.to_f64()).collect();
        PiecewiseLinear { points, xs_f64 }
    }

    /// The zero function.
    pub fn zero() -> Self {
        PiecewiseLinear::new(vec![(ExactCoord::zero(), 0.0)])
    }

    pub fn breakpoints(&self) -> &[(ExactCoord, f64)] {
        &self.points
    }

    pub fn norm(&self) -> f64 {
        self.points.iter().map(|(_, v)| v.abs()).fold(0.0, f64::max)
    }

    /// Evaluation at an exact coordinate.
    pub fn eval(&self, x: &ExactCoord) -> f64 {
        match self.points.binary_search_by(|(bx, _)| bx.cmp(x)) {
            Ok(i) => self.points[i].1,
            Err(0) => self.points[0].1,
            Err(i) if i == self.points.len() => self.points[i - 1].1,
            Err(i) => {
                let (x0, v0) = &self.points[i - 1];
                let (x1, v1) = &self.points[i];
                let t = ExactCoord::from_ratio(
                    (x.as_ratio() - x0.as_ratio()) / (x1.as_ratio() - x0.as_ratio()),
                )
                .to_f64();
                v0 + t * (v1 - v0)
            }
        }
    }

    /// Approximate evaluation for plotting.
    pub fn eval_f64(&self, x: f64) -> f64 {
        let i = self.xs_f64.partition_point(|&bx| bx <= x);
        if i == 0 {
            return self.points[0].1;
        }
        if i == self.points.len() {
            return self.points[i - 1].1;
        }
        let (x0, v0) = (self.xs_f64[i - 1], self.points[i - 1].1);
        let (x1, v1) = (self.xs_f64[i], self.points[i].1);
        if x1 == x0 {
            return v0;
        }
        v0 + (x - x0) / (x1 - x0) * (v1 - v0)
    }

    /// Pointwise sum, with the union of the two breakpoint sets (merged
    /// exactly) as the new breakpoints.
    pub fn merge_add(&self, other: &PiecewiseLinear) -> PiecewiseLinear {
        let mut coords: Vec<&ExactCoord> = self
            .points
            .iter()
            .map(|(x, _)| x)
            .chain(other.points.iter().map(|(x, _)| x))
            .collect();
        coords.sort();
        coords.dedup();
        let points = coords
            .into_iter()
            .map(|x| (x.clone(), self.eval(x) + other.eval(x)))
            .collect();
        PiecewiseLinear::new(points)
    }

    /// Serializes breakpoints as `coordinate,value` lines under the format
    /// header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("# pl v1 tails=constant\n");
        for (x, v) in &self.points {
            let _ = writeln!(out, "{x},{v}");
        }
        out
    }

    pub fn from_csv_reader<R: std::io::BufRead>(reader: R) -> Result<Self> {
        let mut points = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let lineno = lineno + 1;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (xs, vs) = trimmed
                .split_once(',')
                .ok_or_else(|| Error::parse(lineno, "expected `coordinate,value`"))?;
            let x = ExactCoord::parse(xs.trim()).map_err(|e| Error::parse(lineno, e))?;
            let v: f64 = vs
                .trim()
                .parse()
                .map_err(|_| Error::parse(lineno, format!("`{vs}` is not a number")))?;
            points.push((x, v));
        }
        if points.is_empty() {
            return Err(Error::parse(0, "no breakpoints"));
        }
        for w in points.windows(2) {
            if w[0].0 >= w[1].0 {
                return Err(Error::parse(0, "breakpoints must strictly increase"));
            }
        }
        Ok(PiecewiseLinear::new(points))
    }
}

/// Extends a grid function to the line. Between lattice-adjacent occupied
/// cells the extension is linear; across a wider gap it stays constant
/// over the first cell and then runs linearly to the next occupied cell;
/// beyond the extremes it is constant.
pub fn extend_piecewise_linear(grid: &GridFunction) -> PiecewiseLinear {
    let entries: Vec<(i64, f64)> = grid.values.iter().map(|(&k, &v)| (k, v)).collect();
    let mut points = Vec::with_capacity(entries.len() * 2);
    for (pos, &(key, value)) in entries.iter().enumerate() {
        points.push((grid.coord(key), value));
        if let Some(&(next, _)) = entries.get(pos + 1) {
            if next - key > 1 {
                // Hold the cell's value across its own width first.
                points.push((grid.coord(key + 1), value));
            }
        }
    }
    PiecewiseLinear::new(points)
}

/// Result of one decomposition step.
#[derive(Clone, Debug)]
pub struct StepResult {
    pub g: PiecewiseLinear,
    pub h: PiecewiseLinear,
    /// The eps the construction actually used: the input rounded down to a
    /// short dyadic mantissa, so chain values are exact in f64.
    pub eps_used: f64,
    pub delta_used: Dyadic,
    pub level: u32,
    pub residual_sup: f64,
    pub norm_g: f64,
    pub norm_h: f64,
}

/// Residual `f - g∘p - h∘q` at every sample point.
pub fn residuals(sample: &PlaneSample, g: &PiecewiseLinear, h: &PiecewiseLinear) -> Vec<f64> {
    sample
        .points()
        .iter()
        .map(|p| p.f - g.eval(&p.x) - h.eval(&p.y))
        .collect()
}

pub fn sup(values: &[f64]) -> f64 {
    values.iter().map(|v| v.abs()).fold(0.0, f64::max)
}

/// Rounds eps down to 21 significant bits. Chain values `k · eps` are then
/// exact in f64 for any chain this crate can build, which keeps the
/// certificate comparisons free of rounding surprises.
fn snap_eps(eps: f64) -> f64 {
    assert!(eps.is_finite() && eps > 0.0, "eps must be a positive finite number");
    assert!(eps >= 1e-300, "eps too small");
    f64::from_bits(eps.to_bits() & !((1u64 << 32) - 1))
}

/// Runs one full decomposition step at tolerance `eps`, searching levels up
/// to `max_n`.
///
/// The level is the smallest one whose cell width is at most δ/2, whose
/// long-horizontal/long-vertical separation exceeds the bucket count minus
/// one, and whose cells each hold a single sample point. The last
/// condition makes every sample point the representative of its own cell,
/// which is what lets the 6·eps bound hold at every sample point rather
/// than only at representatives.
pub fn decompose_step(sample: &PlaneSample, eps: f64, max_n: u32) -> Result<StepResult> {
    if let Some(witness) = detect_three_array(sample) {
        return Err(Error::ArrayPresent { witness });
    }
    let eps_used = snap_eps(eps);
    let f_norm = sup_norm(sample);
    let delta = modulus_delta(sample, eps_used)?;
    let buckets = eps_buckets(f_norm, eps_used);
    let chain = cover_bucket(f_norm, eps_used);
    debug_assert!(chain <= buckets + 1);

    let mut chosen = None;
    for n in delta.min_level()..=max_n {
        let graph = build_graph(sample, n);
        if !graph.single_occupancy(sample) {
            continue;
        }
        let views = classify_edges(&graph, &delta.as_coord());
        if hv_separation(&graph, &views).exceeds(buckets as i64 - 1) {
            chosen = Some((n, graph, views));
            break;
        }
    }
    let Some((level, graph, views)) = chosen else {
        return Err(Error::ResolutionExhausted {
            max_n,
            detail: format!(
                "no level gives single occupancy and separation above {}",
                buckets as i64 - 1
            ),
        });
    };
    log::debug!(
        "step: eps={eps_used} delta={} level={level} vertices={} buckets={buckets}",
        delta,
        graph.vertex_count()
    );

    let values = sample_values(sample, &graph);
    if !check_short_edges(&graph, &views, &values, eps_used) {
        return Err(Error::guarantee(
        "a short edge moves the values by eps or more despite the continuity radius",
        ));
    }
    let plus = build_augmented(&graph, &views, &values, Sign::Plus, eps_used, chain);
    let minus = build_augmented(&graph, &views, &values, Sign::Minus, eps_used, chain);
    let potential = discrete_potential(&plus, &minus, eps_used, graph.vertex_count());
    verify_potential(&graph, &views, &values, &potential, eps_used)?;

    let (g_grid, h_grid) = fiber_functions(&graph, &values, &potential);
    verify_fibers(&graph, &values, &g_grid, &h_grid, eps_used)?;

    let g = extend_piecewise_linear(&g_grid);
    let h = extend_piecewise_linear(&h_grid);
    let residual_sup = sup(&residuals(sample, &g, &h));
    let norm_g = g.norm();
    let norm_h = h.norm();

    if residual_sup > 6.0 * eps_used {
        return Err(Error::guarantee(format!(
            "step residual {residual_sup} exceeds 6·eps = {}",
            6.0 * eps_used
        )));
    }
    if norm_g > f_norm {
        return Err(Error::guarantee(format!("norm of g ({norm_g}) exceeds norm of f ({f_norm})")));
    }
    if norm_h > 2.0 * f_norm {
        return Err(Error::guarantee(format!(
            "norm of h ({norm_h}) exceeds 2·norm of f ({})",
            2.0 * f_norm
        )));
    }
    Ok(StepResult { g, h, eps_used, delta_used: delta, level, residual_sup, norm_g, norm_h })
}
