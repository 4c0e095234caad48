//! Symmetric weighted communication graphs and their switching schedules.
//!
//! Graphs are stored dense (the target sizes top out around a thousand nodes)
//! with the undirected edge list derived once at construction for the
//! simulation loop. Random graphs come from a pinned generator so that runs
//! are reproducible across machines: `ChaCha8` seeded with `seed_from_u64`,
//! one `next_u64` draw per unordered pair `(i, j)`, `i < j`, in lexicographic
//! order, mapped to `[0, 1)` by dividing by 2⁶⁴.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TopologyError {
    #[error("weight matrix must be square, got {0} entries for n = {1}")]
    NotSquare(usize, usize),
    #[error("weight matrix must be symmetric: W[{0}][{1}] = {2} but W[{1}][{0}] = {3}")]
    NotSymmetric(usize, usize, f64, f64),
    #[error("diagonal entry W[{0}][{0}] must be zero, got {1}")]
    NonZeroDiagonal(usize, f64),
    #[error("weight W[{0}][{1}] must be finite and nonnegative, got {2}")]
    BadWeight(usize, usize, f64),
    #[error("cycle graphs need at least 3 nodes, got {0}")]
    CycleTooSmall(usize),
    #[error("linking probability must lie in [0, 1], got {0}")]
    BadProbability(f64),
    #[error("edge ({0}, {1}) is out of range for n = {2}")]
    EdgeOutOfRange(usize, usize, usize),
    #[error("self-loop ({0}, {0}) is not allowed")]
    SelfLoop(usize),
    #[error("all edge weights are zero; protocol scaling is undefined")]
    AllZero,
    #[error("topologies must share the node count, got {0} and {1}")]
    SizeMismatch(usize, usize),
    #[error("a schedule needs at least one segment")]
    EmptySchedule,
    #[error("segment durations must be at least 1 iteration")]
    ZeroDuration,
    #[error("uniform-connectivity window B must be at least 1")]
    ZeroWindow,
}

/// A symmetric weighted graph with zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    n: usize,
    weights: Vec<f64>,
    /// Undirected edges `(i, j, w)` with `i < j`, lexicographic.
    edges: Vec<(usize, usize, f64)>,
}

impl Topology {
    /// Validate and wrap a dense row-major weight matrix.
    pub fn from_weights(n: usize, weights: Vec<f64>) -> Result<Topology, TopologyError> {
        if weights.len() != n * n {
            return Err(TopologyError::NotSquare(weights.len(), n));
        }
        for i in 0..n {
            let d = weights[i * n + i];
            if d != 0.0 {
                return Err(TopologyError::NonZeroDiagonal(i, d));
            }
            for j in (i + 1)..n {
                let wij = weights[i * n + j];
                let wji = weights[j * n + i];
                if !wij.is_finite() || wij < 0.0 {
                    return Err(TopologyError::BadWeight(i, j, wij));
                }
                if wij != wji {
                    return Err(TopologyError::NotSymmetric(i, j, wij, wji));
                }
            }
        }
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                let w = weights[i * n + j];
                if w > 0.0 {
                    edges.push((i, j, w));
                }
            }
        }
        Ok(Topology { n, weights, edges })
    }

    /// Build from an undirected edge list; missing pairs get weight zero.
    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)]) -> Result<Topology, TopologyError> {
        let mut weights = vec![0.0; n * n];
        for &(i, j, w) in edges {
            if i == j {
                return Err(TopologyError::SelfLoop(i));
            }
            if i >= n || j >= n {
                return Err(TopologyError::EdgeOutOfRange(i, j, n));
            }
            if !w.is_finite() || w < 0.0 {
                return Err(TopologyError::BadWeight(i, j, w));
            }
            weights[i * n + j] = w;
            weights[j * n + i] = w;
        }
        Topology::from_weights(n, weights)
    }

    /// Ring of `n >= 3` nodes with a uniform edge weight.
    pub fn cycle(n: usize, weight: f64) -> Result<Topology, TopologyError> {
        if n < 3 {
            return Err(TopologyError::CycleTooSmall(n));
        }
        let edges: Vec<(usize, usize, f64)> = (0..n).map(|i| (i, (i + 1) % n, weight)).collect();
        Topology::from_edges(n, &edges)
    }

    /// Erdős–Rényi graph: each unordered pair is linked independently with
    /// probability `p` at weight 1. Deterministic for a given seed; see the
    /// module docs for the exact draw order.
    pub fn erdos_renyi(n: usize, p: f64, seed: u64) -> Result<Topology, TopologyError> {
        if !(0.0..=1.0).contains(&p) {
            return Err(TopologyError::BadProbability(p));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                let u = rng.next_u64() as f64 / 2f64.powi(64);
                if u < p {
                    edges.push((i, j, 1.0));
                }
            }
        }
        Topology::from_edges(n, &edges)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.n + j]
    }

    /// Undirected edges `(i, j, w)` with `i < j` in lexicographic order.
    pub fn edges(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }

    /// Maximum weighted degree `max_i Σ_j W_ij`; rejects the all-zero graph
    /// because the protocols divide by it.
    pub fn w_max(&self) -> Result<f64, TopologyError> {
        let m = (0..self.n)
            .map(|i| (0..self.n).map(|j| self.weight(i, j)).sum::<f64>())
            .fold(0.0f64, f64::max);
        if m <= 0.0 {
            return Err(TopologyError::AllZero);
        }
        Ok(m)
    }

    /// Graph Laplacian `L = D − W`, row-major. Row sums are exactly zero by
    /// construction (each diagonal is the sum of the negated off-diagonals).
    pub fn laplacian(&self) -> Vec<f64> {
        let n = self.n;
        let mut lap = vec![0.0; n * n];
        for i in 0..n {
            let mut degree = 0.0;
            for j in 0..n {
                if j != i {
                    let w = self.weight(i, j);
                    lap[i * n + j] = -w;
                    degree += w;
                }
            }
            lap[i * n + i] = degree;
        }
        lap
    }

    /// True iff the positive-weight edges form a single connected component.
    pub fn is_connected(&self) -> bool {
        if self.n == 0 {
            return false;
        }
        let mut seen = vec![false; self.n];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut count = 1;
        while let Some(i) = stack.pop() {
            for (j, visited) in seen.iter_mut().enumerate() {
                if !*visited && self.weight(i, j) > 0.0 {
                    *visited = true;
                    count += 1;
                    stack.push(j);
                }
            }
        }
        count == self.n
    }

    /// Entrywise maximum of the member weight matrices: an edge is present in
    /// the union iff it is present in any member.
    pub fn union(topologies: &[&Topology]) -> Result<Topology, TopologyError> {
        let first = topologies.first().ok_or(TopologyError::EmptySchedule)?;
        let n = first.n;
        let mut weights = vec![0.0; n * n];
        for t in topologies {
            if t.n != n {
                return Err(TopologyError::SizeMismatch(n, t.n));
            }
            for (k, w) in t.weights.iter().enumerate() {
                if *w > weights[k] {
                    weights[k] = *w;
                }
            }
        }
        Topology::from_weights(n, weights)
    }
}

/// One schedule entry: a topology held for a fixed number of iterations.
#[derive(Debug, Clone)]
pub struct Segment {
    pub duration: u64,
    pub topology: Topology,
}

/// A time-varying communication graph: segments applied in order and repeated
/// cyclically, with a declared uniform-connectivity window `B`.
#[derive(Debug, Clone)]
pub struct TopologySchedule {
    segments: Vec<Segment>,
    b: u64,
}

impl TopologySchedule {
    pub fn new(segments: Vec<Segment>, b: u64) -> Result<TopologySchedule, TopologyError> {
        if segments.is_empty() {
            return Err(TopologyError::EmptySchedule);
        }
        if b == 0 {
            return Err(TopologyError::ZeroWindow);
        }
        let n = segments[0].topology.n();
        for s in &segments {
            if s.duration == 0 {
                return Err(TopologyError::ZeroDuration);
            }
            if s.topology.n() != n {
                return Err(TopologyError::SizeMismatch(n, s.topology.n()));
            }
        }
        Ok(TopologySchedule { segments, b })
    }

    /// A single topology held forever; window B = 1.
    pub fn static_topology(topology: Topology) -> TopologySchedule {
        TopologySchedule {
            segments: vec![Segment {
                duration: 1,
                topology,
            }],
            b: 1,
        }
    }

    pub fn n(&self) -> usize {
        self.segments[0].topology.n()
    }

    pub fn b(&self) -> u64 {
        self.b
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    /// Total length of one schedule period in iterations.
    pub fn period(&self) -> u64 {
        self.segments.iter().map(|s| s.duration).sum()
    }

    /// Topology governing iteration `k` (cyclic).
    pub fn topology_at(&self, k: u64) -> &Topology {
        let mut t = k % self.period();
        for s in &self.segments {
            if t < s.duration {
                return &s.topology;
            }
            t -= s.duration;
        }
        unreachable!("period covers all offsets");
    }

    /// Run-constant scaling degree: the maximum `w_max` over all segments,
    /// so the per-step rate bound holds in every segment.
    pub fn run_w_max(&self) -> Result<f64, TopologyError> {
        let mut m = 0.0f64;
        for s in &self.segments {
            m = m.max(s.topology.w_max()?);
        }
        Ok(m)
    }

    /// True iff the union of the topologies active in `[t, t+B)` is
    /// connected for every window start `t` within one schedule period.
    pub fn certify_uniform_connectivity(&self) -> bool {
        let period = self.period();
        for t in 0..period {
            let mut members: Vec<&Topology> = Vec::new();
            for o in 0..self.b {
                let topo = self.topology_at((t + o) % period);
                if !members.iter().any(|m| std::ptr::eq(*m, topo)) {
                    members.push(topo);
                }
            }
            match Topology::union(&members) {
                Ok(u) => {
                    if !u.is_connected() {
                        return false;
                    }
                }
                Err(_) => return false,
            }
        }
        true
    }
}
