//! Weighted undirected graphs, switching schedules, and Laplacian spectra.
//!
//! A [`Topology`] is an immutable symmetric weight matrix `W` with zero
//! diagonal; its Laplacian `L = diag(W·1) − W` drives the allocation
//! protocols. A [`TopologySchedule`] sequences several topologies with dwell
//! times, optionally cycling forever, to model networks whose links come and
//! go. Convergence over such networks only needs the union over a finite
//! window to be connected, which [`TopologySchedule::uniformly_connected`]
//! checks.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("weight matrix must be {n}x{n}, got {rows}x{cols}")]
    BadShape { n: usize, rows: usize, cols: usize },
    #[error("weights must be symmetric: W[{i},{j}]={wij} but W[{j},{i}]={wji}")]
    Asymmetric { i: usize, j: usize, wij: f64, wji: f64 },
    #[error("self-loops are not allowed: W[{i},{i}]={w}")]
    SelfLoop { i: usize, w: f64 },
    #[error("weights must be finite and nonnegative: W[{i},{j}]={w}")]
    BadWeight { i: usize, j: usize, w: f64 },
    #[error("agent count must be at least 1")]
    Empty,
    #[error("spectral summary needs at least 2 agents, got {n}")]
    TooSmallForSpectrum { n: usize },
    #[error("edge list line {line}: {reason}")]
    EdgeList { line: usize, reason: String },
    #[error("schedule must contain at least one phase")]
    EmptySchedule,
    #[error("schedule phase {index} has non-positive dwell {dwell}")]
    BadDwell { index: usize, dwell: f64 },
    #[error("schedule phases disagree on agent count: phase 0 has {expected}, phase {index} has {found}")]
    MixedSizes { expected: usize, index: usize, found: usize },
    #[error("instant {tau} is beyond the end of the non-cyclic schedule ({end})")]
    BeyondSchedule { tau: f64, end: f64 },
    #[error("instant must be nonnegative, got {tau}")]
    NegativeInstant { tau: f64 },
    #[error("window length must be positive, got {length}")]
    EmptyWindow { length: f64 },
    #[error("window [{start}, {end}) does not fit inside the non-cyclic schedule")]
    WindowOutOfRange { start: f64, end: f64 },
    #[error("declared uniform-connectivity window {window} fails: union over [{start}, {start_plus}) is disconnected")]
    NotUniformlyConnected { window: f64, start: f64, start_plus: f64 },
    #[error("graph generator: {0}")]
    Generator(String),
}

/// Second-smallest (Fiedler) and largest Laplacian eigenvalues.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralSummary {
    pub lambda2: f64,
    pub lambda_n: f64,
}

/// An undirected weighted graph over `n` agents.
///
/// Invariants enforced at construction: `W` is exactly symmetric with zero
/// diagonal and finite nonnegative entries. Bidirectional links are what make
/// the protocols sum-preserving, so symmetry is checked bit-for-bit rather
/// than within a tolerance.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    n: usize,
    weights: DMatrix<f64>,
    neighbors: Vec<Vec<(usize, f64)>>,
}

impl Topology {
    pub fn new(weights: DMatrix<f64>) -> Result<Self, NetworkError> {
        let n = weights.nrows();
        if n == 0 {
            return Err(NetworkError::Empty);
        }
        if weights.ncols() != n {
            return Err(NetworkError::BadShape {
                n,
                rows: weights.nrows(),
                cols: weights.ncols(),
            });
        }
        for i in 0..n {
            let d = weights[(i, i)];
            if d != 0.0 {
                return Err(NetworkError::SelfLoop { i, w: d });
            }
            for j in 0..n {
                let w = weights[(i, j)];
                if !w.is_finite() || w < 0.0 {
                    return Err(NetworkError::BadWeight { i, j, w });
                }
                if weights[(j, i)] != w {
                    return Err(NetworkError::Asymmetric {
                        i,
                        j,
                        wij: w,
                        wji: weights[(j, i)],
                    });
                }
            }
        }
        let neighbors = (0..n)
            .map(|i| {
                (0..n)
                    .filter(|&j| weights[(j, i)] != 0.0)
                    .map(|j| (j, weights[(j, i)]))
                    .collect()
            })
            .collect();
        Ok(Self {
            n,
            weights,
            neighbors,
        })
    }

    /// Build from an undirected edge list; each `(i, j, w)` sets both
    /// `W[i,j]` and `W[j,i]`.
    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)]) -> Result<Self, NetworkError> {
        if n == 0 {
            return Err(NetworkError::Empty);
        }
        let mut w = DMatrix::zeros(n, n);
        for &(i, j, weight) in edges {
            if i >= n || j >= n {
                return Err(NetworkError::Generator(format!(
                    "edge ({i}, {j}) out of range for n={n}"
                )));
            }
            if i == j {
                return Err(NetworkError::SelfLoop { i, w: weight });
            }
            if !weight.is_finite() || weight <= 0.0 {
                return Err(NetworkError::BadWeight { i, j, w: weight });
            }
            if w[(i, j)] != 0.0 {
                return Err(NetworkError::Generator(format!(
                    "duplicate edge ({i}, {j})"
                )));
            }
            w[(i, j)] = weight;
            w[(j, i)] = weight;
        }
        Self::new(w)
    }

    /// Parse the edge-list text format: one `i j weight` triple per line,
    /// 0-based indices, `#` comments and blank lines allowed.
    ///
    /// A pair appearing twice (in either orientation) is rejected, so a file
    /// cannot silently declare conflicting directions of the same link.
    pub fn parse_edge_list(n: usize, text: &str) -> Result<Self, NetworkError> {
        let mut edges: Vec<(usize, usize, f64)> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = lineno + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let fields: Vec<&str> = content.split_whitespace().collect();
            if fields.len() != 3 {
                return Err(NetworkError::EdgeList {
                    line,
                    reason: format!("expected `i j weight`, got {} fields", fields.len()),
                });
            }
            let parse_idx = |s: &str| -> Result<usize, NetworkError> {
                s.parse().map_err(|_| NetworkError::EdgeList {
                    line,
                    reason: format!("bad agent index `{s}`"),
                })
            };
            let i = parse_idx(fields[0])?;
            let j = parse_idx(fields[1])?;
            let weight: f64 = fields[2].parse().map_err(|_| NetworkError::EdgeList {
                line,
                reason: format!("bad weight `{}`", fields[2]),
            })?;
            if i >= n || j >= n {
                return Err(NetworkError::EdgeList {
                    line,
                    reason: format!("index out of range for n={n}"),
                });
            }
            if i == j {
                return Err(NetworkError::EdgeList {
                    line,
                    reason: "self-loops are not allowed".into(),
                });
            }
            if !weight.is_finite() || weight <= 0.0 {
                return Err(NetworkError::EdgeList {
                    line,
                    reason: format!("weight must be positive and finite, got {weight}"),
                });
            }
            if edges
                .iter()
                .any(|&(a, b, _)| (a, b) == (i, j) || (a, b) == (j, i))
            {
                return Err(NetworkError::EdgeList {
                    line,
                    reason: format!("duplicate edge ({i}, {j})"),
                });
            }
            edges.push((i, j, weight));
        }
        Self::from_edges(n, &edges)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[(i, j)]
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    /// Neighbors of agent `i` as `(j, W[j,i])` pairs in ascending `j` order.
    ///
    /// The fixed order keeps neighbor-sum reductions deterministic, so runs
    /// are bit-reproducible.
    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.neighbors[i]
    }

    /// Undirected edges as `(i, j, w)` with `i < j`.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for i in 0..self.n {
            for &(j, w) in &self.neighbors[i] {
                if i < j {
                    out.push((i, j, w));
                }
            }
        }
        out
    }

    /// The graph Laplacian `L = diag(W·1) − W`. Rows sum to zero.
    pub fn laplacian(&self) -> DMatrix<f64> {
        let n = self.n;
        let mut l = -self.weights.clone();
        for i in 0..n {
            l[(i, i)] = self.weights.row(i).sum();
        }
        l
    }

    /// Eigenvalues λ₂ (algebraic connectivity) and λₙ of the Laplacian,
    /// from a dense symmetric eigendecomposition. Intended for n ≲ 500.
    pub fn spectral_summary(&self) -> Result<SpectralSummary, NetworkError> {
        if self.n < 2 {
            return Err(NetworkError::TooSmallForSpectrum { n: self.n });
        }
        let eig = SymmetricEigen::new(self.laplacian());
        let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        vals.sort_by(|a, b| a.total_cmp(b));
        Ok(SpectralSummary {
            lambda2: vals[1],
            lambda_n: vals[self.n - 1],
        })
    }

    /// True iff the graph on nonzero weights has a single connected
    /// component (breadth-first traversal). This is the authoritative
    /// connectivity check; the spectral `λ₂ > 0` test is a cross-check.
    pub fn is_connected(&self) -> bool {
        if self.n == 0 {
            return false;
        }
        let mut seen = vec![false; self.n];
        let mut queue = std::collections::VecDeque::from([0usize]);
        seen[0] = true;
        let mut count = 1;
        while let Some(i) = queue.pop_front() {
            for &(j, _) in &self.neighbors[i] {
                if !seen[j] {
                    seen[j] = true;
                    count += 1;
                    queue.push_back(j);
                }
            }
        }
        count == self.n
    }

    /// Edge-wise maximum of weights with another topology over the same
    /// agents.
    pub fn union(&self, other: &Topology) -> Result<Topology, NetworkError> {
        if self.n != other.n {
            return Err(NetworkError::MixedSizes {
                expected: self.n,
                index: 1,
                found: other.n,
            });
        }
        let w = self.weights.zip_map(&other.weights, f64::max);
        Topology::new(w)
    }

    /// Graph with no edges.
    pub fn empty(n: usize) -> Result<Self, NetworkError> {
        Self::new(DMatrix::zeros(n, n))
    }
}

/// One phase of a switching schedule: a topology held for `dwell` units
/// (steps for discrete protocols, time for continuous ones).
#[derive(Debug, Clone)]
pub struct SchedulePhase {
    pub topology: Topology,
    pub dwell: f64,
}

/// An ordered sequence of topology phases, optionally repeating forever.
///
/// Phase boundaries follow the convention that a phase becomes active exactly
/// at its start instant: with dwells `5, 5`, instant `5.0` already belongs to
/// the second phase.
#[derive(Debug, Clone)]
pub struct TopologySchedule {
    phases: Vec<SchedulePhase>,
    cyclic: bool,
    declared_window: Option<f64>,
    shuffle_seed: Option<u64>,
}

impl TopologySchedule {
    pub fn new(phases: Vec<SchedulePhase>, cyclic: bool) -> Result<Self, NetworkError> {
        if phases.is_empty() {
            return Err(NetworkError::EmptySchedule);
        }
        let n = phases[0].topology.n();
        for (index, phase) in phases.iter().enumerate() {
            if !(phase.dwell > 0.0) || !phase.dwell.is_finite() {
                return Err(NetworkError::BadDwell {
                    index,
                    dwell: phase.dwell,
                });
            }
            if phase.topology.n() != n {
                return Err(NetworkError::MixedSizes {
                    expected: n,
                    index,
                    found: phase.topology.n(),
                });
            }
        }
        Ok(Self {
            phases,
            cyclic,
            declared_window: None,
            shuffle_seed: None,
        })
    }

    /// A static network: one phase, cycling.
    pub fn single(topology: Topology) -> Self {
        Self {
            phases: vec![SchedulePhase {
                topology,
                dwell: 1.0,
            }],
            cyclic: true,
            declared_window: None,
            shuffle_seed: None,
        }
    }

    /// Declare the window `T` over which union connectivity is asserted.
    /// Fails if some window of length `T` has a disconnected union.
    pub fn with_window(mut self, window: f64) -> Result<Self, NetworkError> {
        self.declared_window = Some(window);
        if !self.uniformly_connected(window)? {
            let (start, _) = self.first_disconnected_window(window)?;
            return Err(NetworkError::NotUniformlyConnected {
                window,
                start,
                start_plus: start + window,
            });
        }
        Ok(self)
    }

    /// Permute the phase order independently within each cycle, seeded.
    ///
    /// With shuffling, windows shorter than two periods can no longer be
    /// certified: a window straddling two differently-permuted cycles may
    /// miss a phase. Any declared window is revalidated.
    pub fn with_shuffle(mut self, seed: u64) -> Result<Self, NetworkError> {
        self.shuffle_seed = Some(seed);
        if let Some(window) = self.declared_window {
            if !self.uniformly_connected(window)? {
                return Err(NetworkError::NotUniformlyConnected {
                    window,
                    start: 0.0,
                    start_plus: window,
                });
            }
        }
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.phases[0].topology.n()
    }

    pub fn phases(&self) -> &[SchedulePhase] {
        &self.phases
    }

    pub fn cyclic(&self) -> bool {
        self.cyclic
    }

    pub fn shuffle_seed(&self) -> Option<u64> {
        self.shuffle_seed
    }

    pub fn declared_window(&self) -> Option<f64> {
        self.declared_window
    }

    /// Total dwell of one pass over the phases.
    pub fn period(&self) -> f64 {
        self.phases.iter().map(|p| p.dwell).sum()
    }

    /// End instant for non-cyclic schedules, `None` when cyclic.
    pub fn end(&self) -> Option<f64> {
        if self.cyclic {
            None
        } else {
            Some(self.period())
        }
    }

    /// The order phases play in during the given cycle (a permutation of
    /// `0..phases.len()`); the identity unless shuffling is enabled.
    pub fn phase_order(&self, cycle: u64) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.phases.len()).collect();
        if let Some(seed) = self.shuffle_seed {
            let mut rng = ChaCha8Rng::seed_from_u64(mix64(seed, cycle));
            for i in (1..order.len()).rev() {
                let j = rng.gen_range(0..=i);
                order.swap(i, j);
            }
        }
        order
    }

    /// The phase active at instant `tau` (steps for DT, time for CT).
    pub fn topology_at(&self, tau: f64) -> Result<&Topology, NetworkError> {
        if !(tau >= 0.0) {
            return Err(NetworkError::NegativeInstant { tau });
        }
        let period = self.period();
        let (cycle, offset) = if self.cyclic {
            let c = (tau / period).floor();
            (c as u64, tau - c * period)
        } else {
            if tau >= period {
                return Err(NetworkError::BeyondSchedule { tau, end: period });
            }
            (0, tau)
        };
        let order = self.phase_order(cycle);
        let mut cum = 0.0;
        for &idx in &order {
            cum += self.phases[idx].dwell;
            if offset < cum {
                return Ok(&self.phases[idx].topology);
            }
        }
        // Float fuzz can leave offset a hair past the last boundary.
        Ok(&self.phases[*order.last().expect("non-empty")].topology)
    }

    /// Edge-wise maximum of weights across all phases intersecting
    /// `[start, start + length)`.
    pub fn union_over_window(&self, start: f64, length: f64) -> Result<Topology, NetworkError> {
        if !(length > 0.0) {
            return Err(NetworkError::EmptyWindow { length });
        }
        if !(start >= 0.0) {
            return Err(NetworkError::NegativeInstant { tau: start });
        }
        let period = self.period();
        if !self.cyclic && start + length > period * (1.0 + 1e-12) {
            return Err(NetworkError::WindowOutOfRange {
                start,
                end: start + length,
            });
        }
        // Whole-period (or longer) windows on a cyclic schedule cover every
        // phase regardless of shuffling.
        if self.cyclic && length >= period {
            return self.union_all();
        }
        let mut union = Topology::empty(self.n())?;
        let mut cycle = (start / period).floor().max(0.0) as u64;
        let end = start + length;
        loop {
            let base = cycle as f64 * period;
            if base >= end {
                break;
            }
            let order = self.phase_order(cycle);
            let mut cum = base;
            for &idx in &order {
                let phase_start = cum;
                let phase_end = cum + self.phases[idx].dwell;
                if phase_start < end && phase_end > start {
                    union = union.union(&self.phases[idx].topology)?;
                }
                cum = phase_end;
            }
            if !self.cyclic {
                break;
            }
            cycle += 1;
        }
        Ok(union)
    }

    /// Union of every phase.
    pub fn union_all(&self) -> Result<Topology, NetworkError> {
        let mut union = Topology::empty(self.n())?;
        for phase in &self.phases {
            union = union.union(&phase.topology)?;
        }
        Ok(union)
    }

    /// True iff the union over every window of length `window` is connected.
    ///
    /// For round-robin schedules the set of phases a window intersects only
    /// changes when an endpoint crosses a phase boundary, so checking windows
    /// anchored at boundaries (and at boundary − window) is exhaustive. For
    /// shuffled schedules the guarantee is conservative: true only when the
    /// window spans at least two periods, which always contains one complete
    /// cycle and therefore every phase.
    pub fn uniformly_connected(&self, window: f64) -> Result<bool, NetworkError> {
        if !(window > 0.0) {
            return Err(NetworkError::EmptyWindow { length: window });
        }
        if self.shuffle_seed.is_some() {
            return Ok(self.cyclic
                && window >= 2.0 * self.period()
                && self.union_all()?.is_connected());
        }
        Ok(self.first_disconnected_window(window)?.1)
    }

    /// Returns (witness start, all-connected) for round-robin schedules.
    fn first_disconnected_window(&self, window: f64) -> Result<(f64, bool), NetworkError> {
        let period = self.period();
        let mut starts: Vec<f64> = Vec::new();
        let mut cum = 0.0;
        let mut boundaries = vec![0.0];
        for phase in &self.phases {
            cum += phase.dwell;
            boundaries.push(cum);
        }
        if self.cyclic {
            if window >= period {
                return Ok((0.0, self.union_all()?.is_connected()));
            }
            for &b in &boundaries {
                starts.push(b.rem_euclid(period));
                starts.push((b - window).rem_euclid(period));
            }
        } else {
            if window > period {
                return Err(NetworkError::WindowOutOfRange {
                    start: 0.0,
                    end: window,
                });
            }
            for &b in &boundaries {
                if b + window <= period {
                    starts.push(b);
                }
                let s = b - window;
                if s >= 0.0 {
                    starts.push(s);
                }
            }
            starts.push(period - window);
        }
        for &s in &starts {
            if !self.union_over_window(s, window)?.is_connected() {
                return Ok((s, false));
            }
        }
        Ok((0.0, true))
    }
}

fn mix64(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer over both inputs
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Named graph families used by scenario configs.
pub mod generators {
    use super::{mix64, NetworkError, Topology};
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub fn path(n: usize, weight: f64) -> Result<Topology, NetworkError> {
        let edges: Vec<_> = (0..n.saturating_sub(1))
            .map(|i| (i, i + 1, weight))
            .collect();
        Topology::from_edges(n, &edges)
    }

    pub fn cycle(n: usize, weight: f64) -> Result<Topology, NetworkError> {
        if n < 3 {
            return Err(NetworkError::Generator(format!(
                "cycle needs n >= 3, got {n}"
            )));
        }
        let edges: Vec<_> = (0..n).map(|i| (i, (i + 1) % n, weight)).collect();
        Topology::from_edges(n, &edges)
    }

    pub fn complete(n: usize, weight: f64) -> Result<Topology, NetworkError> {
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                edges.push((i, j, weight));
            }
        }
        Topology::from_edges(n, &edges)
    }

    /// Ring where every node also links to neighbors at circular distance
    /// `2..=k`; `k = 1` is the plain cycle.
    pub fn k_hop_ring(n: usize, k: usize, weight: f64) -> Result<Topology, NetworkError> {
        if k == 0 || 2 * k >= n {
            return Err(NetworkError::Generator(format!(
                "k-hop ring needs 1 <= k < n/2, got k={k}, n={n}"
            )));
        }
        let mut edges = Vec::new();
        for i in 0..n {
            for hop in 1..=k {
                edges.push((i, (i + hop) % n, weight));
            }
        }
        Topology::from_edges(n, &edges)
    }

    /// Uniform points in the unit square, connected when closer than
    /// `radius`. May be disconnected; see [`random_geometric_connected`].
    pub fn random_geometric(
        n: usize,
        radius: f64,
        weight: f64,
        seed: u64,
    ) -> Result<Topology, NetworkError> {
        if !(radius > 0.0) {
            return Err(NetworkError::Generator(format!(
                "radius must be positive, got {radius}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let points: Vec<(f64, f64)> = (0..n)
            .map(|_| (rng.gen::<f64>(), rng.gen::<f64>()))
            .collect();
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                let dx = points[i].0 - points[j].0;
                let dy = points[i].1 - points[j].1;
                if (dx * dx + dy * dy).sqrt() < radius {
                    edges.push((i, j, weight));
                }
            }
        }
        Topology::from_edges(n, &edges)
    }

    /// Retries `random_geometric` with derived seeds until connected.
    pub fn random_geometric_connected(
        n: usize,
        radius: f64,
        weight: f64,
        seed: u64,
        max_tries: usize,
    ) -> Result<Topology, NetworkError> {
        for attempt in 0..max_tries.max(1) {
            let t = random_geometric(n, radius, weight, mix64(seed, attempt as u64))?;
            if t.is_connected() {
                return Ok(t);
            }
        }
        Err(NetworkError::Generator(format!(
            "no connected random-geometric graph in {max_tries} tries (n={n}, radius={radius})"
        )))
    }

    /// Seeded random split of a graph's edges into `parts` edge-disjoint
    /// subgraphs over the same agents. Their union is the input graph.
    pub fn partition_edges(
        topology: &Topology,
        parts: usize,
        seed: u64,
    ) -> Result<Vec<Topology>, NetworkError> {
        if parts == 0 {
            return Err(NetworkError::Generator("parts must be >= 1".into()));
        }
        let edges = topology.edges();
        if edges.len() < parts {
            return Err(NetworkError::Generator(format!(
                "cannot split {} edges into {parts} nonempty parts",
                edges.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Deal one edge to each part first so none is empty, then assign the
        // rest uniformly.
        let mut order: Vec<usize> = (0..edges.len()).collect();
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        let mut buckets: Vec<Vec<(usize, usize, f64)>> = vec![Vec::new(); parts];
        for (pos, &edge_idx) in order.iter().enumerate() {
            let part = if pos < parts {
                pos
            } else {
                rng.gen_range(0..parts)
            };
            buckets[part].push(edges[edge_idx]);
        }
        buckets
            .into_iter()
            .map(|b| Topology::from_edges(topology.n(), &b))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::dmatrix;

    fn unit_edges(n: usize, edges: &[(usize, usize)]) -> Topology {
        let e: Vec<_> = edges.iter().map(|&(i, j)| (i, j, 1.0)).collect();
        Topology::from_edges(n, &e).unwrap()
    }

    #[test]
    fn laplacian_of_two_node_path() {
        let t = unit_edges(2, &[(0, 1)]);
        let l = t.laplacian();
        assert_eq!(l, dmatrix![1.0, -1.0; -1.0, 1.0]);
    }

    #[test]
    fn laplacian_of_empty_graph_is_zero() {
        let t = Topology::empty(3).unwrap();
        assert_eq!(t.laplacian(), DMatrix::zeros(3, 3));
    }

    #[test]
    fn laplacian_of_triangle_has_eigenvalues_0_3_3() {
        let t = unit_edges(3, &[(0, 1), (1, 2), (2, 0)]);
        let eig = SymmetricEigen::new(t.laplacian());
        let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        vals.sort_by(|a, b| a.total_cmp(b));
        assert_relative_eq!(vals[0], 0.0, epsilon = 1e-12);
        assert_relative_eq!(vals[1], 3.0, epsilon = 1e-10);
        assert_relative_eq!(vals[2], 3.0, epsilon = 1e-10);
    }

    #[test]
    fn laplacian_rows_sum_to_zero() {
        let t = generators::random_geometric(15, 0.6, 1.0, 7).unwrap();
        let l = t.laplacian();
        for i in 0..15 {
            assert!(l.row(i).sum().abs() < 1e-12);
        }
    }

    #[test]
    fn complete_graph_spectrum_is_n() {
        let t = generators::complete(4, 1.0).unwrap();
        let s = t.spectral_summary().unwrap();
        assert_relative_eq!(s.lambda2, 4.0, epsilon = 1e-8);
        assert_relative_eq!(s.lambda_n, 4.0, epsilon = 1e-8);
    }

    #[test]
    fn disconnected_graph_has_zero_fiedler_value() {
        let t = unit_edges(4, &[(0, 1), (2, 3)]);
        let s = t.spectral_summary().unwrap();
        assert!(s.lambda2.abs() < 1e-10);
        assert!(!t.is_connected());
    }

    #[test]
    fn cycle_c12_fiedler_matches_circulant_formula() {
        let t = generators::cycle(12, 1.0).unwrap();
        let s = t.spectral_summary().unwrap();
        let expected = 2.0 - 2.0 * (2.0 * std::f64::consts::PI / 12.0).cos();
        assert_relative_eq!(s.lambda2, expected, epsilon = 1e-10);
    }

    #[test]
    fn spectral_summary_rejects_single_agent() {
        let t = Topology::empty(1).unwrap();
        assert!(matches!(
            t.spectral_summary(),
            Err(NetworkError::TooSmallForSpectrum { n: 1 })
        ));
    }

    #[test]
    fn connectivity_matches_bfs_on_named_families() {
        assert!(generators::path(5, 1.0).unwrap().is_connected());
        assert!(!unit_edges(4, &[(0, 1), (2, 3)]).is_connected());
        assert!(generators::k_hop_ring(12, 2, 1.0).unwrap().is_connected());
    }

    #[test]
    fn asymmetric_weights_rejected() {
        let w = dmatrix![0.0, 1.0; 0.5, 0.0];
        assert!(matches!(
            Topology::new(w),
            Err(NetworkError::Asymmetric { .. })
        ));
    }

    #[test]
    fn self_loop_rejected() {
        let w = dmatrix![0.5, 1.0; 1.0, 0.0];
        assert!(matches!(
            Topology::new(w),
            Err(NetworkError::SelfLoop { .. })
        ));
    }

    #[test]
    fn edge_list_round_trips_and_rejects_conflicts() {
        let t = Topology::parse_edge_list(3, "0 1 2.0\n# comment\n\n1 2 0.5\n").unwrap();
        assert_eq!(t.weight(0, 1), 2.0);
        assert_eq!(t.weight(1, 0), 2.0);
        assert_eq!(t.weight(2, 1), 0.5);

        let dup = Topology::parse_edge_list(3, "0 1 2.0\n1 0 1.0\n");
        assert!(matches!(dup, Err(NetworkError::EdgeList { line: 2, .. })));
    }

    #[test]
    fn union_is_edgewise_max_and_monotone() {
        let a = unit_edges(4, &[(0, 1)]);
        let b = unit_edges(4, &[(2, 3)]);
        let u = a.union(&b).unwrap();
        assert_eq!(u.weight(0, 1), 1.0);
        assert_eq!(u.weight(2, 3), 1.0);
        // adding a phase never removes an edge
        for (i, j, w) in a.edges() {
            assert!(u.weight(i, j) >= w);
        }
    }

    #[test]
    fn schedule_boundary_convention() {
        let a = unit_edges(2, &[(0, 1)]);
        let b = Topology::empty(2).unwrap();
        let s = TopologySchedule::new(
            vec![
                SchedulePhase {
                    topology: a.clone(),
                    dwell: 5.0,
                },
                SchedulePhase {
                    topology: b,
                    dwell: 5.0,
                },
            ],
            true,
        )
        .unwrap();
        assert_eq!(s.topology_at(0.0).unwrap().weight(0, 1), 1.0);
        assert_eq!(s.topology_at(4.999).unwrap().weight(0, 1), 1.0);
        assert_eq!(s.topology_at(5.0).unwrap().weight(0, 1), 0.0);
        // cyclic wraparound
        assert_eq!(s.topology_at(10.0).unwrap().weight(0, 1), 1.0);
    }

    #[test]
    fn non_cyclic_schedule_rejects_past_end() {
        let a = unit_edges(2, &[(0, 1)]);
        let s = TopologySchedule::new(
            vec![SchedulePhase {
                topology: a,
                dwell: 3.0,
            }],
            false,
        )
        .unwrap();
        assert!(s.topology_at(2.999).is_ok());
        assert!(matches!(
            s.topology_at(3.0),
            Err(NetworkError::BeyondSchedule { .. })
        ));
    }

    #[test]
    fn single_phase_window_union_is_that_phase() {
        let a = unit_edges(3, &[(0, 1), (1, 2)]);
        let s = TopologySchedule::single(a.clone());
        let u = s.union_over_window(0.0, 10.0).unwrap();
        assert_eq!(u.weights(), a.weights());
    }

    #[test]
    fn two_phase_window_union_merges_edge_sets() {
        let a = unit_edges(4, &[(0, 1)]);
        let b = unit_edges(4, &[(2, 3)]);
        let s = TopologySchedule::new(
            vec![
                SchedulePhase {
                    topology: a,
                    dwell: 1.0,
                },
                SchedulePhase {
                    topology: b,
                    dwell: 1.0,
                },
            ],
            true,
        )
        .unwrap();
        let u = s.union_over_window(0.0, 2.0).unwrap();
        assert_eq!(u.weight(0, 1), 1.0);
        assert_eq!(u.weight(2, 3), 1.0);
        // window inside first phase only
        let first = s.union_over_window(0.0, 1.0).unwrap();
        assert_eq!(first.weight(2, 3), 0.0);
        assert!(matches!(
            s.union_over_window(0.0, 0.0),
            Err(NetworkError::EmptyWindow { .. })
        ));
    }

    #[test]
    fn four_phase_partition_union_connected_but_phases_not() {
        let base = generators::random_geometric_connected(20, 0.45, 1.0, 11, 50).unwrap();
        let parts = generators::partition_edges(&base, 4, 3).unwrap();
        assert_eq!(parts.len(), 4);
        let phases: Vec<_> = parts
            .iter()
            .map(|t| SchedulePhase {
                topology: t.clone(),
                dwell: 10.0,
            })
            .collect();
        let s = TopologySchedule::new(phases, true).unwrap();
        assert!(s.union_all().unwrap().is_connected());
        // full-cycle window must be connected
        assert!(s.uniformly_connected(40.0).unwrap());
        // reassemble equals the base graph
        let u = s.union_over_window(0.0, 40.0).unwrap();
        assert_eq!(u.weights(), base.weights());
    }

    #[test]
    fn uniform_connectivity_fails_for_short_windows() {
        let a = unit_edges(4, &[(0, 1), (1, 2)]);
        let b = unit_edges(4, &[(2, 3), (3, 0)]);
        let s = TopologySchedule::new(
            vec![
                SchedulePhase {
                    topology: a,
                    dwell: 2.0,
                },
                SchedulePhase {
                    topology: b,
                    dwell: 2.0,
                },
            ],
            true,
        )
        .unwrap();
        assert!(!s.uniformly_connected(2.0).unwrap());
        assert!(s.uniformly_connected(4.0).unwrap());
        assert!(s.clone().with_window(4.0).is_ok());
        assert!(matches!(
            s.with_window(2.0),
            Err(NetworkError::NotUniformlyConnected { .. })
        ));
    }

    #[test]
    fn shuffled_schedule_is_deterministic_per_seed() {
        let a = unit_edges(3, &[(0, 1)]);
        let b = unit_edges(3, &[(1, 2)]);
        let c = unit_edges(3, &[(0, 2)]);
        let mk = || {
            TopologySchedule::new(
                vec![
                    SchedulePhase {
                        topology: a.clone(),
                        dwell: 1.0,
                    },
                    SchedulePhase {
                        topology: b.clone(),
                        dwell: 1.0,
                    },
                    SchedulePhase {
                        topology: c.clone(),
                        dwell: 1.0,
                    },
                ],
                true,
            )
            .unwrap()
            .with_shuffle(99)
            .unwrap()
        };
        let s1 = mk();
        let s2 = mk();
        for k in 0..30 {
            let tau = k as f64;
            assert_eq!(
                s1.topology_at(tau).unwrap().weights(),
                s2.topology_at(tau).unwrap().weights()
            );
        }
        // every cycle is a permutation: each phase appears once per period
        for cycle in 0..10 {
            let mut seen = [false; 3];
            for slot in 0..3 {
                let t = s1.topology_at(cycle as f64 * 3.0 + slot as f64).unwrap();
                for (idx, orig) in [&a, &b, &c].iter().enumerate() {
                    if t.weights() == orig.weights() {
                        seen[idx] = true;
                    }
                }
            }
            assert_eq!(seen, [true; 3]);
        }
    }

    #[test]
    fn spectral_connectivity_threshold_agrees_with_bfs() {
        for seed in 0..20u64 {
            let t = generators::random_geometric(12, 0.4, 1.0, seed).unwrap();
            let spectral = t.spectral_summary().unwrap().lambda2 > 1e-9;
            assert_eq!(spectral, t.is_connected(), "seed {seed}");
        }
    }
}
