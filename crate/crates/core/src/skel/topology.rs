//! Hand-graph topology, neighbor partitioning, and adjacency normalization.

use serde::{Deserialize, Serialize};

use super::SkeletonFrame;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// On-disk topology description.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TopologyConfig {
    pub joint_count: usize,
    pub edges: Vec<[usize; 2]>,
    #[serde(default)]
    pub wrist_index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub joint_names: Option<Vec<String>>,
}

/// Validated hand skeleton graph.
#[derive(Debug, Clone, PartialEq)]
pub struct HandTopology {
    joint_count: usize,
    edges: Vec<(usize, usize)>,
    wrist_index: usize,
    joint_names: Option<Vec<String>>,
}

impl HandTopology {
    pub fn joint_count(&self) -> usize {
        self.joint_count
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn wrist_index(&self) -> usize {
        self.wrist_index
    }

    pub fn joint_names(&self) -> Option<&[String]> {
        self.joint_names.as_deref()
    }

    pub fn to_config(&self) -> TopologyConfig {
        TopologyConfig {
            joint_count: self.joint_count,
            edges: self.edges.iter().map(|&(a, b)| [a, b]).collect(),
            wrist_index: self.wrist_index,
            joint_names: self.joint_names.clone(),
        }
    }

    /// Binary adjacency without self-loops.
    pub fn adjacency(&self) -> Tensor {
        let n = self.joint_count;
        let mut a = Tensor::zeros(&[n, n]);
        for &(i, j) in &self.edges {
            a.set(&[i, j], 1.0);
            a.set(&[j, i], 1.0);
        }
        a
    }

    /// All-pairs hop distances by BFS from every node.
    pub fn hop_distances(&self) -> Vec<Vec<usize>> {
        let n = self.joint_count;
        let mut neighbors = vec![Vec::new(); n];
        for &(i, j) in &self.edges {
            neighbors[i].push(j);
            neighbors[j].push(i);
        }
        let mut dist = vec![vec![usize::MAX; n]; n];
        for start in 0..n {
            let mut queue = std::collections::VecDeque::new();
            dist[start][start] = 0;
            queue.push_back(start);
            while let Some(u) = queue.pop_front() {
                for &v in &neighbors[u] {
                    if dist[start][v] == usize::MAX {
                        dist[start][v] = dist[start][u] + 1;
                        queue.push_back(v);
                    }
                }
            }
        }
        dist
    }

    /// Default 20-joint hand tree: wrist → palm → five finger chains
    /// (thumb and little finger with 3 joints, the rest with 4).
    pub fn default_hand() -> HandTopology {
        let names = [
            "wrist", "palm", "thumb_1", "thumb_2", "thumb_tip", "index_1", "index_2", "index_3",
            "index_tip", "middle_1", "middle_2", "middle_3", "middle_tip", "ring_1", "ring_2",
            "ring_3", "ring_tip", "little_1", "little_2", "little_tip",
        ];
        let edges = vec![
            [0, 1],
            [1, 2],
            [2, 3],
            [3, 4],
            [1, 5],
            [5, 6],
            [6, 7],
            [7, 8],
            [1, 9],
            [9, 10],
            [10, 11],
            [11, 12],
            [1, 13],
            [13, 14],
            [14, 15],
            [15, 16],
            [1, 17],
            [17, 18],
            [18, 19],
        ];
        build_topology(&TopologyConfig {
            joint_count: 20,
            edges,
            wrist_index: 0,
            joint_names: Some(names.iter().map(|s| s.to_string()).collect()),
        })
        .expect("default hand topology is valid")
    }
}

/// Validate a topology description: no self or duplicate edges, indices in
/// range, and a connected graph.
pub fn build_topology(config: &TopologyConfig) -> Result<HandTopology> {
    let n = config.joint_count;
    if n == 0 {
        return Err(Error::Config("joint_count must be positive".into()));
    }
    if config.wrist_index >= n {
        return Err(Error::Config(format!("wrist_index {} out of range", config.wrist_index)));
    }
    if let Some(names) = &config.joint_names {
        if names.len() != n {
            return Err(Error::Config(format!("{} joint names for {} joints", names.len(), n)));
        }
    }
    let mut seen = std::collections::HashSet::new();
    let mut edges = Vec::with_capacity(config.edges.len());
    for &[a, b] in &config.edges {
        if a == b {
            return Err(Error::Config(format!("self edge ({a}, {a})")));
        }
        if a >= n || b >= n {
            return Err(Error::Config(format!("edge ({a}, {b}) out of range for {n} joints")));
        }
        let key = (a.min(b), a.max(b));
        if !seen.insert(key) {
            return Err(Error::Config(format!("duplicate edge ({a}, {b})")));
        }
        edges.push(key);
    }
    // Connectivity check by BFS from joint 0.
    let mut neighbors = vec![Vec::new(); n];
    for &(i, j) in &edges {
        neighbors[i].push(j);
        neighbors[j].push(i);
    }
    let mut visited = vec![false; n];
    let mut queue = std::collections::VecDeque::from([0usize]);
    visited[0] = true;
    let mut count = 1;
    while let Some(u) = queue.pop_front() {
        for &v in &neighbors[u] {
            if !visited[v] {
                visited[v] = true;
                count += 1;
                queue.push_back(v);
            }
        }
    }
    if count != n {
        return Err(Error::Config(format!("graph is disconnected: reached {count} of {n} joints")));
    }
    Ok(HandTopology {
        joint_count: n,
        edges,
        wrist_index: config.wrist_index,
        joint_names: config.joint_names.clone(),
    })
}

/// Rule for splitting each node's neighbor set into convolution subsets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PartitionStrategy {
    /// {self-connections, all neighbors}.
    UniLabeling,
    /// One subset per exact hop distance 0..=max_hop.
    Distance { max_hop: usize },
    /// {root, centripetal, centrifugal} split by distance to the skeleton's
    /// gravity center in a reference frame.
    SpatialConfiguration,
}

/// Binary partition matrices Ã_k for the chosen strategy.
pub fn partition_graph(
    topology: &HandTopology,
    strategy: PartitionStrategy,
    reference_frame: Option<&SkeletonFrame>,
) -> Result<Vec<Tensor>> {
    let n = topology.joint_count();
    match strategy {
        PartitionStrategy::UniLabeling => Ok(vec![Tensor::eye(n), topology.adjacency()]),
        PartitionStrategy::Distance { max_hop } => {
            if max_hop == 0 {
                return Err(Error::Config("distance partitioning needs max_hop >= 1".into()));
            }
            let dist = topology.hop_distances();
            let mut parts = Vec::with_capacity(max_hop + 1);
            for hop in 0..=max_hop {
                let mut m = Tensor::zeros(&[n, n]);
                for i in 0..n {
                    for j in 0..n {
                        if dist[i][j] == hop {
                            m.set(&[i, j], 1.0);
                        }
                    }
                }
                parts.push(m);
            }
            Ok(parts)
        }
        PartitionStrategy::SpatialConfiguration => {
            let frame = reference_frame.ok_or(Error::MissingReference)?;
            if frame.joint_count() != n {
                return Err(Error::shape(
                    "partition_graph",
                    format!("reference frame has {} joints, topology {n}", frame.joint_count()),
                ));
            }
            // Gravity center = mean of all joints of the reference frame.
            let mut center = [0.0f64; 3];
            for i in 0..n {
                let p = frame.joint(i);
                for (c, v) in center.iter_mut().zip(p) {
                    *c += v / n as f64;
                }
            }
            let dist_to_center: Vec<f64> = (0..n)
                .map(|i| {
                    let p = frame.joint(i);
                    ((p[0] - center[0]).powi(2)
                        + (p[1] - center[1]).powi(2)
                        + (p[2] - center[2]).powi(2))
                    .sqrt()
                })
                .collect();
            let mut root = Tensor::eye(n);
            let mut centripetal = Tensor::zeros(&[n, n]);
            let mut centrifugal = Tensor::zeros(&[n, n]);
            for &(i, j) in topology.edges() {
                for (a, b) in [(i, j), (j, i)] {
                    // Neighbor b of root a, sorted by distance to center.
                    if dist_to_center[b] < dist_to_center[a] {
                        centripetal.set(&[a, b], 1.0);
                    } else if dist_to_center[b] > dist_to_center[a] {
                        centrifugal.set(&[a, b], 1.0);
                    } else {
                        root.set(&[a, b], 1.0);
                    }
                }
            }
            Ok(vec![root, centripetal, centrifugal])
        }
    }
}

/// Normalized partition matrices with the shared degree diagonal.
#[derive(Debug, Clone)]
pub struct AdjacencyStack {
    matrices: Vec<Tensor>,
    raw: Vec<Tensor>,
    degree: Vec<f64>,
}

impl AdjacencyStack {
    pub fn kernel_count(&self) -> usize {
        self.matrices.len()
    }

    pub fn joint_count(&self) -> usize {
        self.matrices[0].shape()[0]
    }

    /// Normalized matrices A_k.
    pub fn matrices(&self) -> &[Tensor] {
        &self.matrices
    }

    /// Raw binary partitions Ã_k.
    pub fn raw(&self) -> &[Tensor] {
        &self.raw
    }

    /// Shared degree diagonal D_ii.
    pub fn degree(&self) -> &[f64] {
        &self.degree
    }

    /// Partition + normalize in one step.
    pub fn build(
        topology: &HandTopology,
        strategy: PartitionStrategy,
        reference_frame: Option<&SkeletonFrame>,
        identity_per_partition: bool,
    ) -> Result<AdjacencyStack> {
        let raw = partition_graph(topology, strategy, reference_frame)?;
        normalize_adjacency(&raw, identity_per_partition)
    }
}

/// Symmetric normalization A_k = D^{-1/2}·(Ã_k + I)·D^{-1/2} with a degree
/// diagonal shared across partitions: D_ii = Σ_j Σ_k (Ã_k[i][j] + I[i][j]).
///
/// `identity_per_partition = false` skips the added identity (for partition
/// stacks that already contain the hop-0 identity) and drops the identity
/// term from D accordingly, preserving the degree-consistency of the stack.
pub fn normalize_adjacency(raw: &[Tensor], identity_per_partition: bool) -> Result<AdjacencyStack> {
    if raw.is_empty() {
        return Err(Error::Config("adjacency stack needs at least one partition".into()));
    }
    let n = raw[0].shape()[0];
    for m in raw {
        if m.rank() != 2 || m.shape() != [n, n] {
            return Err(Error::shape(
                "normalize_adjacency",
                format!("expected [{n}, {n}], got {:?}", m.shape()),
            ));
        }
        if m.data().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Input("raw partition matrices must be binary".into()));
        }
    }
    let mut augmented: Vec<Tensor> = raw.to_vec();
    if identity_per_partition {
        for m in augmented.iter_mut() {
            for i in 0..n {
                let v = m.at(&[i, i]);
                m.set(&[i, i], v + 1.0);
            }
        }
    }
    let mut degree = vec![0.0f64; n];
    for m in &augmented {
        for i in 0..n {
            degree[i] += m.data()[i * n..(i + 1) * n].iter().sum::<f64>();
        }
    }
    if degree.iter().any(|&d| d <= 0.0) {
        return Err(Error::Config(
            "zero row degree: some joint is isolated in every partition".into(),
        ));
    }
    let inv_sqrt: Vec<f64> = degree.iter().map(|d| 1.0 / d.sqrt()).collect();
    let matrices = augmented
        .into_iter()
        .map(|m| {
            let mut out = m;
            for i in 0..n {
                for j in 0..n {
                    let v = out.at(&[i, j]) * inv_sqrt[i] * inv_sqrt[j];
                    out.set(&[i, j], v);
                }
            }
            out
        })
        .collect();
    Ok(AdjacencyStack { matrices, raw: raw.to_vec(), degree })
}
