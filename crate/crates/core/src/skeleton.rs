//! The 21-joint hand kinematic tree and the graph algebra derived from it:
//! raw and symmetrically normalized adjacency, multi-hop expansion, all-pairs
//! hop distances, and the skeleton edge mask used by masked attention.
//!
//! Joint ordering follows the FPHA skeleton files: index 0 is the wrist,
//! 1-5 are the five MCP joints (thumb, index, middle, ring, pinky), and
//! 6-20 are the per-finger PIP/DIP/TIP chains in the same finger order.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of joints in the hand skeleton.
pub const JOINT_COUNT: usize = 21;

/// Wrist joint index.
pub const WRIST: usize = 0;

/// Fingertip joint indices (thumb, index, middle, ring, pinky).
pub const FINGERTIPS: [usize; 5] = [8, 11, 14, 17, 20];

const JOINT_NAMES: [&str; JOINT_COUNT] = [
    "wrist",
    "thumb_mcp",
    "index_mcp",
    "middle_mcp",
    "ring_mcp",
    "pinky_mcp",
    "thumb_pip",
    "thumb_dip",
    "thumb_tip",
    "index_pip",
    "index_dip",
    "index_tip",
    "middle_pip",
    "middle_dip",
    "middle_tip",
    "ring_pip",
    "ring_dip",
    "ring_tip",
    "pinky_pip",
    "pinky_dip",
    "pinky_tip",
];

#[derive(Debug, Error, PartialEq)]
pub enum SkeletonError {
    #[error("graph with {joints} joints needs {} edges, got {edges}", joints - 1)]
    EdgeCount { joints: usize, edges: usize },
    #[error("edge ({0}, {1}) is out of range or a self-loop")]
    BadEdge(usize, usize),
    #[error("graph is not connected from the root")]
    Disconnected,
}

/// A connected tree over hand joints, rooted at the wrist.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonGraph {
    joint_count: usize,
    edges: Vec<(usize, usize)>,
    joint_names: Vec<String>,
    parent: Vec<Option<usize>>,
}

impl SkeletonGraph {
    /// Builds a tree from an undirected edge list, rooted at joint 0.
    pub fn from_edges(
        joint_count: usize,
        edges: Vec<(usize, usize)>,
        joint_names: Vec<String>,
    ) -> Result<Self, SkeletonError> {
        if joint_count == 0 || edges.len() + 1 != joint_count {
            return Err(SkeletonError::EdgeCount {
                joints: joint_count,
                edges: edges.len(),
            });
        }
        let mut adj = vec![Vec::new(); joint_count];
        for &(a, b) in &edges {
            if a >= joint_count || b >= joint_count || a == b {
                return Err(SkeletonError::BadEdge(a, b));
            }
            adj[a].push(b);
            adj[b].push(a);
        }
        // BFS from the root assigns parents and proves connectivity.
        let mut parent = vec![None; joint_count];
        let mut seen = vec![false; joint_count];
        let mut queue = std::collections::VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    parent[v] = Some(u);
                    queue.push_back(v);
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(SkeletonError::Disconnected);
        }
        Ok(Self {
            joint_count,
            edges,
            joint_names,
            parent,
        })
    }

    pub fn joint_count(&self) -> usize {
        self.joint_count
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn joint_names(&self) -> &[String] {
        &self.joint_names
    }

    pub fn joint_name(&self, j: usize) -> &str {
        &self.joint_names[j]
    }

    /// Parent of each joint; the root has none.
    pub fn parent(&self, j: usize) -> Option<usize> {
        self.parent[j]
    }

    /// Degree of each joint in the raw (loop-free) adjacency.
    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0usize; self.joint_count];
        for &(a, b) in &self.edges {
            deg[a] += 1;
            deg[b] += 1;
        }
        deg
    }

    /// Edge list and names as JSON, for debugging and external tools.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("skeleton serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

/// Which matrix an [`AdjacencyMatrix`] holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AdjacencyKind {
    Raw,
    Normalized1Hop,
    NormalizedMultihop,
    SkeletonMask,
}

/// Dense J x J matrix over the skeleton, tagged with its construction.
#[derive(Debug, Clone)]
pub struct AdjacencyMatrix {
    pub kind: AdjacencyKind,
    n: usize,
    values: Vec<f64>,
}

impl AdjacencyMatrix {
    /// Wraps an explicit square matrix (values in row-major order).
    pub fn from_values(kind: AdjacencyKind, values: Vec<f64>) -> Result<Self, SkeletonError> {
        let n = (values.len() as f64).sqrt() as usize;
        if n * n != values.len() {
            return Err(SkeletonError::EdgeCount {
                joints: n,
                edges: values.len(),
            });
        }
        Ok(AdjacencyMatrix { kind, n, values })
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    /// For mask kinds: whether attention from `i` to `j` is allowed.
    pub fn is_connected(&self, i: usize, j: usize) -> bool {
        self.get(i, j) != 0.0
    }

    /// Number of nonzero entries.
    pub fn support(&self) -> usize {
        self.values.iter().filter(|v| **v != 0.0).count()
    }
}

/// All-pairs shortest-path hop counts on the tree.
#[derive(Debug, Clone)]
pub struct HopDistanceTable {
    n: usize,
    dist: Vec<u32>,
    wrist_dist: Vec<u32>,
}

impl HopDistanceTable {
    pub fn get(&self, i: usize, j: usize) -> u32 {
        self.dist[i * self.n + j]
    }

    /// Hop distance from the wrist (row 0), indexed by joint.
    pub fn wrist_dist(&self) -> &[u32] {
        &self.wrist_dist
    }

    pub fn max(&self) -> u32 {
        self.dist.iter().copied().max().unwrap_or(0)
    }
}

/// The canonical 21-joint hand tree.
pub fn build_hand_skeleton() -> SkeletonGraph {
    // Five MCPs hang off the wrist; each finger continues MCP->PIP->DIP->TIP.
    let mut edges = Vec::with_capacity(20);
    for finger in 0..5 {
        let mcp = 1 + finger;
        let pip = 6 + 3 * finger;
        edges.push((WRIST, mcp));
        edges.push((mcp, pip));
        edges.push((pip, pip + 1));
        edges.push((pip + 1, pip + 2));
    }
    SkeletonGraph::from_edges(
        JOINT_COUNT,
        edges,
        JOINT_NAMES.iter().map(|s| s.to_string()).collect(),
    )
    .expect("canonical skeleton is a valid tree")
}

fn raw_matrix(g: &SkeletonGraph) -> Vec<f64> {
    let n = g.joint_count();
    let mut a = vec![0.0; n * n];
    for &(i, j) in g.edges() {
        a[i * n + j] = 1.0;
        a[j * n + i] = 1.0;
    }
    a
}

/// Raw 0/1 adjacency with zero diagonal.
pub fn raw_adjacency(g: &SkeletonGraph) -> AdjacencyMatrix {
    AdjacencyMatrix {
        kind: AdjacencyKind::Raw,
        n: g.joint_count(),
        values: raw_matrix(g),
    }
}

/// Symmetrically normalized adjacency with self-loops:
/// `A_hat = D^{-1/2} (A + I) D^{-1/2}` where `D` is the degree of `A + I`.
pub fn normalized_adjacency(g: &SkeletonGraph) -> AdjacencyMatrix {
    let n = g.joint_count();
    let mut a = raw_matrix(g);
    for i in 0..n {
        a[i * n + i] = 1.0;
    }
    let inv_sqrt_deg: Vec<f64> = (0..n)
        .map(|i| {
            let d: f64 = (0..n).map(|j| a[i * n + j]).sum();
            1.0 / d.sqrt()
        })
        .collect();
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] *= inv_sqrt_deg[i] * inv_sqrt_deg[j];
        }
    }
    AdjacencyMatrix {
        kind: AdjacencyKind::Normalized1Hop,
        n,
        values: a,
    }
}

/// Two-hop expansion `A_hat + A_hat^2` of the normalized adjacency, taken
/// verbatim without renormalizing the sum.
pub fn multihop_adjacency(g: &SkeletonGraph) -> AdjacencyMatrix {
    let n = g.joint_count();
    let a = normalized_adjacency(g);
    let mut out = a.values.clone();
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for k in 0..n {
                acc += a.values[i * n + k] * a.values[k * n + j];
            }
            out[i * n + j] += acc;
        }
    }
    AdjacencyMatrix {
        kind: AdjacencyKind::NormalizedMultihop,
        n,
        values: out,
    }
}

/// BFS all-pairs hop counts.
pub fn hop_distances(g: &SkeletonGraph) -> HopDistanceTable {
    let n = g.joint_count();
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in g.edges() {
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut dist = vec![u32::MAX; n * n];
    for s in 0..n {
        dist[s * n + s] = 0;
        let mut queue = std::collections::VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if dist[s * n + v] == u32::MAX {
                    dist[s * n + v] = dist[s * n + u] + 1;
                    queue.push_back(v);
                }
            }
        }
    }
    let wrist_dist = dist[..n].to_vec();
    HopDistanceTable { n, dist, wrist_dist }
}

/// Boolean mask (as 0/1 values) that is true exactly on skeleton edges plus
/// the diagonal: each joint may attend to itself and its tree neighbors.
pub fn skeleton_mask(g: &SkeletonGraph) -> AdjacencyMatrix {
    let n = g.joint_count();
    let mut m = raw_matrix(g);
    for i in 0..n {
        m[i * n + i] = 1.0;
    }
    AdjacencyMatrix {
        kind: AdjacencyKind::SkeletonMask,
        n,
        values: m,
    }
}
