//! Channel fusion as a layered DAG, and a checker for the four fusion design
//! principles:
//!
//! 1. full connectivity: every input reaches every output;
//! 2. large bottleneck: the minimum vertex cut between inputs and outputs is at least `n`;
//! 3. low operation count: fewer edges than the dense `n_0 x n_m` fusion;
//! 4. operation symmetry: within a layer all nodes share one out-degree.
//!
//! For a graph that satisfies all four, the edge count is at least `n log2 n`;
//! [`audit`] checks that bound on the concrete instance and reports it.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::butterfly::ButterflySpec;
use crate::{BftError, Result};

/// `layers[i]` nodes in layer `i`; `edges[i]` holds `(from, to)` pairs from
/// layer `i` into layer `i + 1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionGraph {
    layers: Vec<usize>,
    edges: Vec<Vec<(usize, usize)>>,
}

impl FusionGraph {
    pub fn new(layers: Vec<usize>, edges: Vec<Vec<(usize, usize)>>) -> Result<Self> {
        let g = Self { layers, edges };
        g.validate()?;
        Ok(g)
    }

    fn validate(&self) -> Result<()> {
        if self.layers.len() < 2 {
            return Err(BftError::shape("FusionGraph", "at least 2 layers", self.layers.len()));
        }
        if self.layers.contains(&0) {
            return Err(BftError::shape(
                "FusionGraph",
                "non-empty layers",
                format!("{:?}", self.layers),
            ));
        }
        if self.edges.len() != self.layers.len() - 1 {
            return Err(BftError::shape(
                "FusionGraph",
                format!("{} edge layers", self.layers.len() - 1),
                self.edges.len(),
            ));
        }
        for (l, layer_edges) in self.edges.iter().enumerate() {
            for &(from, to) in layer_edges {
                if from >= self.layers[l] || to >= self.layers[l + 1] {
                    return Err(BftError::shape(
                        "FusionGraph edge",
                        format!("endpoints within {}x{}", self.layers[l], self.layers[l + 1]),
                        format!("({from}, {to}) in edge layer {l}"),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let g: Self = serde_json::from_str(text)?;
        g.validate()?;
        Ok(g)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("graph serializes")
    }

    /// One complete bipartite layer: a dense pointwise fusion.
    pub fn dense(n: usize) -> Self {
        let edges = (0..n).flat_map(|u| (0..n).map(move |v| (u, v))).collect();
        Self {
            layers: vec![n, n],
            edges: vec![edges],
        }
    }

    pub fn layers(&self) -> &[usize] {
        &self.layers
    }

    pub fn edges(&self) -> &[Vec<(usize, usize)>] {
        &self.edges
    }

    pub fn edges_mut(&mut self) -> &mut Vec<Vec<(usize, usize)>> {
        &mut self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.iter().map(Vec::len).sum()
    }

    /// Number of input channels.
    pub fn n(&self) -> usize {
        self.layers[0]
    }
}

/// The butterfly as a fusion graph: `m + 1` layers of `n` nodes; node `src` of
/// layer `i` feeds the `k_i` outputs of its group.
pub fn export_graph(spec: &ButterflySpec) -> FusionGraph {
    let n = spec.n();
    let mut edges = Vec::with_capacity(spec.layers());
    for i in 0..spec.layers() {
        let (k, block) = spec.layer_geometry(i);
        let part = block / k;
        let mut layer = Vec::with_capacity(n * k);
        for row in 0..n {
            let base = row - row % block + row % part;
            for j in 0..k {
                layer.push((base + j * part, row));
            }
        }
        layer.sort_unstable();
        edges.push(layer);
    }
    FusionGraph {
        layers: vec![n; spec.layers() + 1],
        edges,
    }
}

/// Input-to-output path counts, `counts[u][v]`, by layer-wise products.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PathCounts {
    pub counts: Vec<Vec<u64>>,
}

impl PathCounts {
    pub fn fully_connected(&self) -> bool {
        self.counts.iter().flatten().all(|&c| c >= 1)
    }

    pub fn all_unique(&self) -> bool {
        self.counts.iter().flatten().all(|&c| c == 1)
    }
}

pub fn check_full_connectivity(g: &FusionGraph) -> PathCounts {
    let n0 = g.layers[0];
    let mut counts: Vec<Vec<u64>> = (0..n0).map(|u| (0..n0).map(|i| u64::from(i == u)).collect()).collect();
    for (l, layer_edges) in g.edges.iter().enumerate() {
        let width = g.layers[l + 1];
        counts = counts
            .iter()
            .map(|row| {
                let mut next = vec![0u64; width];
                for &(from, to) in layer_edges {
                    next[to] = next[to].saturating_add(row[from]);
                }
                next
            })
            .collect();
    }
    PathCounts { counts }
}

const INF: i64 = i64::MAX / 4;

struct FlowEdge {
    to: usize,
    cap: i64,
}

/// Dinic max-flow on a small adjacency-list network.
struct Dinic {
    edges: Vec<FlowEdge>,
    adj: Vec<Vec<usize>>,
    level: Vec<i32>,
    iter: Vec<usize>,
}

impl Dinic {
    fn new(nodes: usize) -> Self {
        Self {
            edges: Vec::new(),
            adj: vec![Vec::new(); nodes],
            level: vec![0; nodes],
            iter: vec![0; nodes],
        }
    }

    fn add_edge(&mut self, from: usize, to: usize, cap: i64) {
        self.adj[from].push(self.edges.len());
        self.edges.push(FlowEdge { to, cap });
        self.adj[to].push(self.edges.len());
        self.edges.push(FlowEdge { to: from, cap: 0 });
    }

    fn bfs(&mut self, s: usize) {
        self.level.iter_mut().for_each(|l| *l = -1);
        self.level[s] = 0;
        let mut queue = VecDeque::from([s]);
        while let Some(v) = queue.pop_front() {
            for &e in &self.adj[v] {
                let to = self.edges[e].to;
                if self.edges[e].cap > 0 && self.level[to] < 0 {
                    self.level[to] = self.level[v] + 1;
                    queue.push_back(to);
                }
            }
        }
    }

    fn dfs(&mut self, v: usize, t: usize, f: i64) -> i64 {
        if v == t {
            return f;
        }
        while self.iter[v] < self.adj[v].len() {
            let e = self.adj[v][self.iter[v]];
            let to = self.edges[e].to;
            if self.edges[e].cap > 0 && self.level[v] < self.level[to] {
                let d = self.dfs(to, t, f.min(self.edges[e].cap));
                if d > 0 {
                    self.edges[e].cap -= d;
                    self.edges[e ^ 1].cap += d;
                    return d;
                }
            }
            self.iter[v] += 1;
        }
        0
    }

    fn max_flow(&mut self, s: usize, t: usize) -> i64 {
        let mut flow = 0;
        loop {
            self.bfs(s);
            if self.level[t] < 0 {
                return flow;
            }
            self.iter.iter_mut().for_each(|i| *i = 0);
            loop {
                let f = self.dfs(s, t, INF);
                if f == 0 {
                    break;
                }
                flow = (flow + f).min(INF);
                if flow >= INF {
                    return flow;
                }
            }
        }
    }
}

/// Minimum number of internal nodes whose removal leaves no input-to-output path.
///
/// Every node is split into `in -> out` with capacity 1 for internal layers and
/// unbounded capacity for the input and output layers, which cannot be cut.
/// A two-layer graph has no internal nodes; if it is connected its bottleneck
/// is its narrowest layer, `min(n_0, n_m)`. A disconnected graph returns 0.
pub fn bottleneck_size(g: &FusionGraph) -> usize {
    let depth = g.layers.len();
    let mut first_id = Vec::with_capacity(depth);
    let mut total = 0;
    for &w in &g.layers {
        first_id.push(total);
        total += w;
    }
    let source = 2 * total;
    let sink = source + 1;
    let mut net = Dinic::new(total * 2 + 2);
    for (l, &w) in g.layers.iter().enumerate() {
        let cap = if l == 0 || l == depth - 1 { INF } else { 1 };
        for i in 0..w {
            let id = first_id[l] + i;
            net.add_edge(2 * id, 2 * id + 1, cap);
            if l == 0 {
                net.add_edge(source, 2 * id, INF);
            }
            if l == depth - 1 {
                net.add_edge(2 * id + 1, sink, INF);
            }
        }
    }
    for (l, layer_edges) in g.edges.iter().enumerate() {
        for &(from, to) in layer_edges {
            net.add_edge(2 * (first_id[l] + from) + 1, 2 * (first_id[l + 1] + to), INF);
        }
    }
    let flow = net.max_flow(source, sink);
    if flow >= INF {
        g.layers[0].min(g.layers[depth - 1])
    } else {
        flow as usize
    }
}

/// `true` for edge layer `i` iff all nodes of layer `i` share one out-degree.
pub fn check_symmetry(g: &FusionGraph) -> Vec<bool> {
    g.edges
        .iter()
        .enumerate()
        .map(|(l, layer_edges)| {
            let mut degree = vec![0usize; g.layers[l]];
            for &(from, _) in layer_edges {
                degree[from] += 1;
            }
            degree.windows(2).all(|w| w[0] == w[1])
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub n: usize,
    pub layers: Vec<usize>,
    pub edge_count: usize,
    pub full_connectivity: bool,
    pub unique_paths: bool,
    pub bottleneck: usize,
    pub large_bottleneck: bool,
    pub low_operation_count: bool,
    pub symmetry: Vec<bool>,
    pub operation_symmetry: bool,
    pub all_principles: bool,
    /// `n * log2 n`.
    pub edge_bound: f64,
    pub bound_ratio: f64,
    /// `Some(edge_count >= n log2 n)` when all four principles pass.
    pub bound_holds: Option<bool>,
    /// Premises of the edge bound that this graph does not meet.
    pub notes: Vec<String>,
}

impl AuditReport {
    pub fn principles(&self) -> [bool; 4] {
        [
            self.full_connectivity,
            self.large_bottleneck,
            self.low_operation_count,
            self.operation_symmetry,
        ]
    }
}

pub fn audit(g: &FusionGraph) -> AuditReport {
    let n = g.n();
    let n_out = *g.layers.last().expect("validated graph");
    let paths = check_full_connectivity(g);
    let bottleneck = bottleneck_size(g);
    let symmetry = check_symmetry(g);
    let edge_count = g.edge_count();

    let full_connectivity = paths.fully_connected();
    let large_bottleneck = bottleneck >= n;
    let low_operation_count = edge_count < n * n_out;
    let operation_symmetry = symmetry.iter().all(|&s| s);
    let all_principles = full_connectivity && large_bottleneck && low_operation_count && operation_symmetry;

    let edge_bound = n as f64 * (n as f64).log2();
    let bound_ratio = if edge_bound > 0.0 {
        edge_count as f64 / edge_bound
    } else {
        f64::INFINITY
    };

    let mut notes = Vec::new();
    if n_out != n {
        notes.push(format!("input width {n} differs from output width {n_out}"));
    }
    for (l, &w) in g.layers.iter().enumerate() {
        if w < n {
            notes.push(format!("layer {l} has {w} < {n} nodes"));
        }
    }
    for (l, &s) in symmetry.iter().enumerate() {
        if !s {
            notes.push(format!("out-degree varies within layer {l}"));
        }
    }

    AuditReport {
        n,
        layers: g.layers.clone(),
        edge_count,
        full_connectivity,
        unique_paths: paths.all_unique(),
        bottleneck,
        large_bottleneck,
        low_operation_count,
        symmetry,
        operation_symmetry,
        all_principles,
        edge_bound,
        bound_ratio,
        bound_holds: all_principles.then_some(edge_count as f64 >= edge_bound),
        notes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle;

    fn spec(n: usize, k: usize) -> ButterflySpec {
        ButterflySpec::with_base(n, k).unwrap()
    }

    #[test]
    fn export_edge_counts() {
        let g = export_graph(&spec(2, 2));
        assert_eq!(g.layers(), &[2, 2]);
        assert_eq!(g.edges()[0], vec![(0, 0), (0, 1), (1, 0), (1, 1)]);
        assert_eq!(export_graph(&spec(8, 2)).edge_count(), 48);
        let g = export_graph(&ButterflySpec::new(16, vec![4, 4]).unwrap());
        assert_eq!(g.edges().len(), 2);
        assert_eq!(g.edge_count(), 128);
    }

    #[test]
    fn butterfly_paths_are_unique() {
        let counts = check_full_connectivity(&export_graph(&spec(8, 2)));
        assert_eq!(counts.counts.len(), 8);
        assert!(counts.all_unique());
        assert!(check_full_connectivity(&FusionGraph::dense(8)).all_unique());
    }

    #[test]
    fn deleted_edge_breaks_connectivity() {
        let mut g = export_graph(&spec(8, 2));
        g.edges_mut()[1].remove(3);
        let counts = check_full_connectivity(&g);
        assert!(!counts.fully_connected());
        assert!(counts.counts.iter().flatten().any(|&c| c == 0));
    }

    #[test]
    fn butterfly_bottleneck_is_n() {
        assert_eq!(bottleneck_size(&export_graph(&spec(8, 2))), 8);
        assert_eq!(bottleneck_size(&export_graph(&spec(64, 4))), 64);
    }

    #[test]
    fn hourglass_bottleneck_is_one() {
        let n = 4;
        let down = (0..n).map(|u| (u, 0)).collect();
        let up = (0..n).map(|v| (0, v)).collect();
        let g = FusionGraph::new(vec![n, 1, n], vec![down, up]).unwrap();
        assert!(check_full_connectivity(&g).fully_connected());
        assert_eq!(bottleneck_size(&g), 1);
        assert_eq!(oracle::brute_force_vertex_cut(&g), Some(1));
    }

    #[test]
    fn parallel_butterflies_match_brute_force() {
        // two disjoint 4-channel butterflies side by side
        let half = export_graph(&spec(4, 2));
        let edges = half
            .edges()
            .iter()
            .map(|layer| layer.iter().flat_map(|&(a, b)| [(a, b), (a + 4, b + 4)]).collect())
            .collect();
        let g = FusionGraph::new(vec![8, 8, 8], edges).unwrap();
        assert!(!check_full_connectivity(&g).fully_connected());
        let want = oracle::brute_force_vertex_cut(&g).unwrap();
        assert_eq!(bottleneck_size(&g), want);
        assert_eq!(want, 8);
    }

    #[test]
    fn flow_matches_brute_force_on_small_butterflies() {
        for s in [spec(4, 2), spec(8, 2), ButterflySpec::new(12, vec![3, 2, 2]).unwrap()] {
            let g = export_graph(&s);
            if g.layers().len() > 2 && g.layers()[1..g.layers().len() - 1].iter().sum::<usize>() <= 20 {
                assert_eq!(Some(bottleneck_size(&g)), oracle::brute_force_vertex_cut(&g), "{s}");
            }
        }
    }

    #[test]
    fn disconnected_graph_has_zero_bottleneck() {
        let g = FusionGraph::new(vec![2, 2, 2], vec![vec![(0, 0)], vec![(1, 1)]]).unwrap();
        assert_eq!(bottleneck_size(&g), 0);
    }

    #[test]
    fn symmetry_checks() {
        assert!(check_symmetry(&export_graph(&spec(16, 2))).iter().all(|&s| s));
        assert_eq!(check_symmetry(&FusionGraph::dense(5)), vec![true]);
        let mut g = export_graph(&spec(8, 2));
        g.edges_mut()[1].push((0, 7));
        assert_eq!(check_symmetry(&g), vec![true, false, true]);
    }

    #[test]
    fn audit_butterfly_and_dense() {
        let r = audit(&export_graph(&spec(64, 2)));
        assert!(r.all_principles);
        assert_eq!(r.bound_ratio, 2.0);
        assert_eq!(r.bound_holds, Some(true));

        let r = audit(&FusionGraph::dense(64));
        assert_eq!(r.principles(), [true, true, false, true]);
        assert_eq!(r.edge_count, 4096);
        assert!((r.bound_ratio - 4096.0 / 384.0).abs() < 1e-12);
        assert_eq!(r.bound_holds, None);

        let r = audit(&export_graph(&ButterflySpec::new(16, vec![4, 4]).unwrap()));
        assert!(r.all_principles);
        assert_eq!(r.edge_count, 128);
        assert_eq!(r.bound_ratio, 2.0);
    }

    #[test]
    fn json_round_trip_and_validation() {
        let g = export_graph(&spec(4, 2));
        assert_eq!(FusionGraph::from_json(&g.to_json()).unwrap(), g);
        let parsed = FusionGraph::from_json(r#"{"layers":[2,2],"edges":[[[0,0],[1,1]]]}"#).unwrap();
        assert_eq!(parsed.edge_count(), 2);
        assert!(FusionGraph::from_json(r#"{"layers":[2,2],"edges":[[[0,5]]]}"#).is_err());
        assert!(FusionGraph::from_json(r#"{"layers":[2,2,2],"edges":[[[0,0]]]}"#).is_err());
    }
}
