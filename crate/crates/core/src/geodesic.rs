//! Approximate geodesic distances on the sample manifold.
//!
//! A symmetric kNN graph with Euclidean edge lengths stands in for the
//! manifold; shortest paths on it approximate geodesic distance. To avoid an
//! `n × n` table, only a landmark subset gets exact shortest-path distances and
//! every sample is routed through its nearest landmark.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::path::Path;

use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::io::{format_err, read_framed, write_framed, PayloadReader};
use crate::linalg::Matrix;
use crate::neighbors::{dist, knn, points};

/// Shortest edge length kept in the graph; duplicate samples would otherwise
/// produce zero-length edges.
const MIN_EDGE: f64 = 1e-12;

/// Default neighbourhood size.
pub const DEFAULT_K: usize = 10;

#[derive(Debug, Clone)]
pub struct KnnGraph {
    pub k: usize,
    /// Per node, `(neighbor, length)` sorted by neighbour index.
    pub adjacency: Vec<Vec<(usize, f64)>>,
    /// Edges added to join disconnected components, in insertion order.
    pub repairs: Vec<(usize, usize, f64)>,
}

impl KnnGraph {
    pub fn node_count(&self) -> usize {
        self.adjacency.len()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.adjacency[u].binary_search_by_key(&v, |&(w, _)| w).is_ok()
    }

    fn add_edge(&mut self, u: usize, v: usize, len: f64) {
        for (a, b) in [(u, v), (v, u)] {
            if let Err(pos) = self.adjacency[a].binary_search_by_key(&b, |&(w, _)| w) {
                self.adjacency[a].insert(pos, (b, len));
            }
        }
    }

    /// Connected-component label of every node, labels in order of first
    /// appearance.
    pub fn components(&self) -> Vec<usize> {
        let n = self.node_count();
        let mut label = vec![usize::MAX; n];
        let mut next = 0;
        let mut stack = Vec::new();
        for s in 0..n {
            if label[s] != usize::MAX {
                continue;
            }
            label[s] = next;
            stack.push(s);
            while let Some(u) = stack.pop() {
                for &(v, _) in &self.adjacency[u] {
                    if label[v] == usize::MAX {
                        label[v] = next;
                        stack.push(v);
                    }
                }
            }
            next += 1;
        }
        label
    }
}

/// Symmetric kNN graph over the columns of `x`.
///
/// Each sample links to its `k` Euclidean nearest neighbours and the edge set
/// is symmetrized by union. While the graph is disconnected, the shortest
/// Euclidean edge between two different components is added.
pub fn build_knn_graph(x: &Matrix, k: usize) -> Result<KnnGraph> {
    let n = x.cols();
    if n < 2 {
        return Err(invalid(format!("kNN graph needs at least 2 samples, got {n}")));
    }
    if k == 0 || k >= n {
        return Err(invalid(format!("need 1 <= k < n, got k={k}, n={n}")));
    }
    let pts = points(x);
    let mut graph = KnnGraph { k, adjacency: vec![Vec::new(); n], repairs: Vec::new() };
    for (u, nbrs) in knn(&pts, k).into_iter().enumerate() {
        for (v, d) in nbrs {
            graph.add_edge(u, v, d.max(MIN_EDGE));
        }
    }
    loop {
        let comp = graph.components();
        if comp.iter().all(|&c| c == 0) {
            break;
        }
        let (u, v, d) = (0..n)
            .into_par_iter()
            .filter_map(|i| {
                (i + 1..n)
                    .filter(|&j| comp[j] != comp[i])
                    .map(|j| (i, j, dist(&pts[i], &pts[j])))
                    .min_by(|a, b| a.2.total_cmp(&b.2))
            })
            .min_by(|a, b| a.2.total_cmp(&b.2).then((a.0, a.1).cmp(&(b.0, b.1))))
            .expect("at least two components");
        info!("kNN graph repair: joining components via edge ({u}, {v}) of length {d:.6}");
        graph.add_edge(u, v, d.max(MIN_EDGE));
        graph.repairs.push((u, v, d));
    }
    Ok(graph)
}

#[derive(Copy, Clone, PartialEq)]
struct HeapEntry {
    dist: f64,
    node: usize,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        other.dist.total_cmp(&self.dist).then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Single-source shortest path lengths (Dijkstra).
pub fn shortest_paths_from(graph: &KnnGraph, source: usize) -> Result<Vec<f64>> {
    let n = graph.node_count();
    if source >= n {
        return Err(Error::OutOfRange { index: source, len: n });
    }
    let mut d = vec![f64::INFINITY; n];
    let mut heap = BinaryHeap::new();
    d[source] = 0.0;
    heap.push(HeapEntry { dist: 0.0, node: source });
    while let Some(HeapEntry { dist: du, node: u }) = heap.pop() {
        if du > d[u] {
            continue;
        }
        for &(v, w) in &graph.adjacency[u] {
            let nd = du + w;
            if nd < d[v] {
                d[v] = nd;
                heap.push(HeapEntry { dist: nd, node: v });
            }
        }
    }
    if let Some(node) = d.iter().position(|v| v.is_infinite()) {
        return Err(Error::Unreachable { source_node: source, node });
    }
    Ok(d)
}

/// Landmark shortest-path table answering approximate geodesic queries.
#[derive(Debug, Clone)]
pub struct GeodesicIndex {
    pub n: usize,
    pub k: usize,
    pub seed: u64,
    /// Sample index of every landmark, in selection order.
    pub landmarks: Vec<usize>,
    /// `L × L` graph distances between landmarks.
    pub landmark_dists: Matrix,
    /// Per sample, the position in `landmarks` of its nearest landmark.
    pub assignment: Vec<usize>,
    /// Largest Euclidean distance from a sample to its landmark.
    pub covering_radius: f64,
    pub repair_count: usize,
}

/// Builds the kNN graph and the landmark index in one go.
pub fn build_index(x: &Matrix, k: usize, landmark_count: usize, seed: u64) -> Result<GeodesicIndex> {
    let graph = build_knn_graph(x, k)?;
    build_index_on_graph(x, &graph, landmark_count, seed)
}

/// Landmark index over an existing graph built on the same samples.
///
/// Landmarks come from farthest-point sampling started at a seeded random
/// sample; every sample is assigned to its Euclidean-nearest landmark.
pub fn build_index_on_graph(
    x: &Matrix,
    graph: &KnnGraph,
    landmark_count: usize,
    seed: u64,
) -> Result<GeodesicIndex> {
    let n = x.cols();
    if graph.node_count() != n {
        return Err(invalid("graph and samples disagree on n"));
    }
    if landmark_count < 2 {
        return Err(invalid(format!("need at least 2 landmarks, got {landmark_count}")));
    }
    if landmark_count > n {
        return Err(invalid(format!("{landmark_count} landmarks requested for {n} samples")));
    }
    let pts = points(x);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = rng.random_range(0..n);

    let mut chosen = vec![false; n];
    let mut nearest = vec![f64::INFINITY; n];
    let mut assignment = vec![0usize; n];
    let mut landmarks = Vec::with_capacity(landmark_count);
    let mut next = start;
    for slot in 0..landmark_count {
        landmarks.push(next);
        chosen[next] = true;
        let anchor = &pts[next];
        nearest
            .par_iter_mut()
            .zip(assignment.par_iter_mut())
            .zip(pts.par_iter())
            .for_each(|((best, owner), p)| {
                let d = dist(p, anchor);
                if d < *best {
                    *best = d;
                    *owner = slot;
                }
            });
        assignment[next] = slot;
        nearest[next] = 0.0;
        if slot + 1 < landmark_count {
            next = (0..n)
                .filter(|&i| !chosen[i])
                .fold(None::<usize>, |acc, i| match acc {
                    Some(b) if nearest[b] >= nearest[i] => Some(b),
                    _ => Some(i),
                })
                .expect("unchosen samples remain");
        }
    }
    let covering_radius = nearest.iter().copied().fold(0.0, f64::max);

    let rows: Vec<Vec<f64>> = landmarks
        .par_iter()
        .map(|&l| shortest_paths_from(graph, l).map(|d| landmarks.iter().map(|&m| d[m]).collect()))
        .collect::<Result<_>>()?;
    let l = landmarks.len();
    let mut table = Matrix::zeros(l, l);
    for a in 0..l {
        for b in a + 1..l {
            let v = 0.5 * (rows[a][b] + rows[b][a]);
            table[(a, b)] = v;
            table[(b, a)] = v;
        }
    }
    Ok(GeodesicIndex {
        n,
        k: graph.k,
        seed,
        landmarks,
        landmark_dists: table,
        assignment,
        covering_radius,
        repair_count: graph.repairs.len(),
    })
}

#[derive(Serialize, Deserialize)]
struct GeoHeader {
    format: String,
    version: u32,
    n: usize,
    k: usize,
    seed: u64,
    exact: bool,
    repair_count: usize,
    covering_radius: f64,
    landmarks: Vec<usize>,
}

const GEO_FORMAT: &str = "pcae-geodesic-index";

impl GeodesicIndex {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn landmark_count(&self) -> usize {
        self.landmarks.len()
    }

    /// True when every sample is its own landmark, so queries are exact
    /// graph distances.
    pub fn is_exact(&self) -> bool {
        self.landmarks.len() == self.n
    }

    /// Graph distance between the landmarks assigned to samples `i` and `j`.
    pub fn approx_dist(&self, i: usize, j: usize) -> Result<f64> {
        for idx in [i, j] {
            if idx >= self.n {
                return Err(Error::OutOfRange { index: idx, len: self.n });
            }
        }
        let (a, b) = (self.assignment[i], self.assignment[j]);
        Ok(if a == b { 0.0 } else { self.landmark_dists[(a, b)] })
    }

    /// Writes a `.geo` file: a JSON header line, then the landmark table as
    /// little-endian `f32` (row-major), then the assignment as `u32`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let header = GeoHeader {
            format: GEO_FORMAT.into(),
            version: 1,
            n: self.n,
            k: self.k,
            seed: self.seed,
            exact: self.is_exact(),
            repair_count: self.repair_count,
            covering_radius: self.covering_radius,
            landmarks: self.landmarks.clone(),
        };
        let l = self.landmarks.len();
        let mut payload = Vec::with_capacity(4 * (l * l + self.n));
        for v in self.landmark_dists.as_slice() {
            payload.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        for &a in &self.assignment {
            payload.extend_from_slice(&(a as u32).to_le_bytes());
        }
        write_framed(path, &header, &payload)
    }

    pub fn load(path: &Path) -> Result<GeodesicIndex> {
        let (h, payload): (GeoHeader, _) = read_framed(path)?;
        if h.format != GEO_FORMAT || h.version != 1 {
            return Err(format_err(path, "not a version-1 geodesic index"));
        }
        let l = h.landmarks.len();
        let mut rd = PayloadReader::new(&payload);
        let mut table = Vec::with_capacity(l * l);
        for _ in 0..l * l {
            table.push(rd.f32().ok_or_else(|| format_err(path, "truncated distance table"))? as f64);
        }
        let mut assignment = Vec::with_capacity(h.n);
        for _ in 0..h.n {
            let a = rd.u32().ok_or_else(|| format_err(path, "truncated assignment"))? as usize;
            if a >= l {
                return Err(format_err(path, "assignment refers to a missing landmark"));
            }
            assignment.push(a);
        }
        if !rd.is_empty() {
            return Err(format_err(path, "trailing bytes"));
        }
        Ok(GeodesicIndex {
            n: h.n,
            k: h.k,
            seed: h.seed,
            landmarks: h.landmarks,
            landmark_dists: Matrix::new(l, l, table)?,
            assignment,
            covering_radius: h.covering_radius,
            repair_count: h.repair_count,
        })
    }
}
