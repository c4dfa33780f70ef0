//! Multi-altitude decision graph and the per-node observation built on it.
//!
//! Nodes sit above horizontal sites, replicated once per altitude level.
//! Each node is connected to `k / n` nearest nodes on every one of the `n`
//! levels, so the agent always has both climbing and descending options.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::belief::BeliefState;
use crate::sensor::{footprint_cells, SensorConfig};
use crate::{GridSpec, IppError, Position, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Sampling {
    /// One site per grid-cell center.
    #[default]
    Lattice,
    /// `sites` uniformly random horizontal sites.
    Random { sites: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RoadmapConfig {
    pub altitudes: Vec<f64>,
    pub k: usize,
    pub k_pe: usize,
    pub sampling: Sampling,
}

impl Default for RoadmapConfig {
    fn default() -> Self {
        Self { altitudes: vec![8.0, 14.0], k: 20, k_pe: 32, sampling: Sampling::Lattice }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Roadmap {
    pub grid: GridSpec,
    pub nodes: Vec<Position>,
    pub altitude_levels: Vec<f64>,
    /// Level index of every node.
    pub level: Vec<usize>,
    pub edges: Vec<Vec<usize>>,
    /// Per-node Laplacian positional encoding; empty until computed.
    pub pe: Vec<Vec<f64>>,
    pub k: usize,
}

/// Lattice roadmap without positional encodings.
pub fn build_roadmap(grid: GridSpec, altitudes: &[f64], k: usize) -> Result<Roadmap> {
    let sites: Vec<[f64; 2]> = (0..grid.len()).map(|i| grid.center(i)).collect();
    build_from_sites(grid, &sites, altitudes, k)
}

/// Roadmap with sampling and positional encodings per `cfg`.
pub fn build_roadmap_with(grid: GridSpec, cfg: &RoadmapConfig) -> Result<Roadmap> {
    let mut roadmap = match cfg.sampling {
        Sampling::Lattice => build_roadmap(grid, &cfg.altitudes, cfg.k)?,
        Sampling::Random { sites, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let [ex, ey] = grid.extent();
            let pts: Vec<[f64; 2]> =
                (0..sites).map(|_| [rng.random_range(0.0..ex), rng.random_range(0.0..ey)]).collect();
            build_from_sites(grid, &pts, &cfg.altitudes, cfg.k)?
        }
    };
    roadmap.pe = laplacian_pe(&roadmap.edges, cfg.k_pe)?;
    Ok(roadmap)
}

fn build_from_sites(grid: GridSpec, sites: &[[f64; 2]], altitudes: &[f64], k: usize) -> Result<Roadmap> {
    let levels = altitudes.len();
    if levels == 0 {
        return Err(IppError::Config("at least one altitude level is required".into()));
    }
    if altitudes.iter().any(|&h| !(h > 0.0)) {
        return Err(IppError::Config(format!("altitudes must be positive: {altitudes:?}")));
    }
    if k == 0 || k % levels != 0 {
        return Err(IppError::Config(format!(
            "k = {k} must be a positive multiple of the {levels} altitude levels"
        )));
    }
    let per_level = k / levels;
    if per_level >= sites.len() {
        return Err(IppError::Config(format!(
            "k / levels = {per_level} needs more than {} sites per level",
            sites.len()
        )));
    }
    let mut nodes = Vec::with_capacity(sites.len() * levels);
    let mut level = Vec::with_capacity(sites.len() * levels);
    for (l, &h) in altitudes.iter().enumerate() {
        for s in sites {
            nodes.push([s[0], s[1], h]);
            level.push(l);
        }
    }
    let n_sites = sites.len();
    let mut edges = Vec::with_capacity(nodes.len());
    let mut scratch: Vec<(f64, usize)> = Vec::with_capacity(n_sites);
    for (i, p) in nodes.iter().enumerate() {
        let mut adj = Vec::with_capacity(k);
        for l in 0..levels {
            scratch.clear();
            scratch.extend(
                (l * n_sites..(l + 1) * n_sites)
                    .filter(|&j| j != i)
                    .map(|j| (dist2(p, &nodes[j]), j)),
            );
            // ties resolve to the lower node index
            scratch.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            adj.extend(scratch[..per_level].iter().map(|&(_, j)| j));
        }
        edges.push(adj);
    }
    Ok(Roadmap { grid, nodes, altitude_levels: altitudes.to_vec(), level, edges, pe: Vec::new(), k })
}

fn dist2(a: &Position, b: &Position) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

impl Roadmap {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn distance(&self, a: usize, b: usize) -> f64 {
        dist2(&self.nodes[a], &self.nodes[b]).sqrt()
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.edges[node]
    }

    pub fn is_adjacent(&self, from: usize, to: usize) -> bool {
        self.edges[from].contains(&to)
    }

    pub fn pe_dim(&self) -> usize {
        self.pe.first().map_or(0, Vec::len)
    }

    /// Node closest to `pos` in 3D.
    pub fn nearest_node(&self, pos: Position) -> usize {
        (0..self.len())
            .min_by(|&a, &b| dist2(&self.nodes[a], &pos).total_cmp(&dist2(&self.nodes[b], &pos)))
            .expect("roadmap has nodes")
    }

    pub fn level_index(&self, altitude: f64) -> Option<usize> {
        self.altitude_levels.iter().position(|&h| (h - altitude).abs() < 1e-9)
    }

    /// Text dump: a `nodes N` header, one `i x y z` line per node, then one
    /// `i j` line per directed edge.
    pub fn to_edge_list_text(&self) -> String {
        let mut out = format!("nodes {}\n", self.len());
        for (i, [x, y, z]) in self.nodes.iter().enumerate() {
            let _ = writeln!(out, "{i} {x} {y} {z}");
        }
        for (i, adj) in self.edges.iter().enumerate() {
            for j in adj {
                let _ = writeln!(out, "{i} {j}");
            }
        }
        out
    }
}

/// Eigenvectors of the symmetric normalized Laplacian `I − D^{-1/2} A D^{-1/2}`
/// of the symmetrized adjacency, ascending by eigenvalue, skipping the
/// trivial eigenvector. Each vector's largest-magnitude entry is made positive.
///
/// A disconnected graph is encoded per connected component and zero-padded.
pub fn laplacian_pe(adjacency: &[Vec<usize>], k_pe: usize) -> Result<Vec<Vec<f64>>> {
    let n = adjacency.len();
    if k_pe >= n {
        return Err(IppError::Config(format!("k_pe = {k_pe} must be below the node count {n}")));
    }
    let mut sym = vec![Vec::new(); n];
    for (i, adj) in adjacency.iter().enumerate() {
        for &j in adj {
            if j >= n {
                return Err(IppError::Index { index: j, len: n });
            }
            if i != j {
                sym[i].push(j);
                sym[j].push(i);
            }
        }
    }
    for s in &mut sym {
        s.sort_unstable();
        s.dedup();
    }
    let components = connected_components(&sym);
    if components.len() > 1 {
        log::warn!("roadmap has {} connected components; encoding each separately", components.len());
    }
    let mut pe = vec![vec![0.0; k_pe]; n];
    for comp in &components {
        let vectors = component_eigenvectors(&sym, comp, k_pe);
        for (col, v) in vectors.iter().enumerate() {
            for (local, &node) in comp.iter().enumerate() {
                pe[node][col] = v[local];
            }
        }
    }
    Ok(pe)
}

fn connected_components(sym: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let mut seen = vec![false; sym.len()];
    let mut out = Vec::new();
    for start in 0..sym.len() {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        let mut comp = vec![start];
        let mut queue = VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            for &v in &sym[u] {
                if !seen[v] {
                    seen[v] = true;
                    comp.push(v);
                    queue.push_back(v);
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

/// Up to `k_pe` non-trivial eigenvectors restricted to one component.
fn component_eigenvectors(sym: &[Vec<usize>], comp: &[usize], k_pe: usize) -> Vec<Vec<f64>> {
    let m = comp.len();
    if m < 2 {
        return Vec::new();
    }
    let laplacian = normalized_laplacian(sym, comp);
    let eig = SymmetricEigen::new(laplacian);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]).then(a.cmp(&b)));
    order
        .into_iter()
        .skip(1)
        .take(k_pe)
        .map(|c| {
            let mut v: Vec<f64> = eig.eigenvectors.column(c).iter().copied().collect();
            fix_sign(&mut v);
            v
        })
        .collect()
}

/// Normalized Laplacian of the subgraph induced by `comp` (local indexing).
pub fn normalized_laplacian(sym: &[Vec<usize>], comp: &[usize]) -> DMatrix<f64> {
    let m = comp.len();
    let mut local = vec![usize::MAX; sym.len()];
    for (li, &g) in comp.iter().enumerate() {
        local[g] = li;
    }
    let deg: Vec<f64> = comp.iter().map(|&g| sym[g].len() as f64).collect();
    let mut lap = DMatrix::identity(m, m);
    for (li, &g) in comp.iter().enumerate() {
        for &h in &sym[g] {
            let lj = local[h];
            if lj != usize::MAX {
                lap[(li, lj)] -= 1.0 / (deg[li] * deg[lj]).sqrt();
            }
        }
    }
    lap
}

fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() + 1e-12 {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Per-axis min-max scaling to `[0, 1]`; a constant axis maps to 0.
pub fn normalize_coords(nodes: &[Position]) -> Vec<Position> {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in nodes {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    nodes
        .iter()
        .map(|p| {
            let mut q = [0.0; 3];
            for a in 0..3 {
                let span = hi[a] - lo[a];
                q[a] = if span > 0.0 { (p[a] - lo[a]) / span } else { 0.0 };
            }
            q
        })
        .collect()
}

/// How a node's footprint uncertainty is reduced to one scalar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NodeStat {
    /// Mean of the per-cell standard deviations.
    #[default]
    MeanStd,
    /// Trace of the footprint covariance submatrix.
    TraceSubmatrix,
}

/// Footprint cells of every node, computed once per roadmap and sensor.
#[derive(Debug, Clone)]
pub struct FootprintIndex {
    pub cells: Vec<Vec<usize>>,
}

impl FootprintIndex {
    pub fn new(roadmap: &Roadmap, sensor: &SensorConfig) -> Result<Self> {
        let cells = roadmap
            .nodes
            .iter()
            .map(|&p| footprint_cells(p, &roadmap.grid, sensor))
            .collect::<Result<_>>()?;
        Ok(Self { cells })
    }
}

/// The roadmap with belief statistics attached to every node.
#[derive(Debug, Clone)]
pub struct AugmentedGraph {
    pub roadmap: Arc<Roadmap>,
    pub node_mu: Vec<f64>,
    pub node_std: Vec<f64>,
    pub normalized_coords: Arc<Vec<Position>>,
}

impl AugmentedGraph {
    /// Policy input row for a node: normalized x, y, z, mean, uncertainty.
    pub fn node_features(&self, node: usize) -> [f64; 5] {
        let [x, y, z] = self.normalized_coords[node];
        [x, y, z, self.node_mu[node], self.node_std[node]]
    }
}

pub fn augment(roadmap: &Arc<Roadmap>, belief: &BeliefState, sensor: &SensorConfig) -> Result<AugmentedGraph> {
    let index = FootprintIndex::new(roadmap, sensor)?;
    let coords = Arc::new(normalize_coords(&roadmap.nodes));
    augment_with(roadmap, belief, &index, &coords, NodeStat::MeanStd)
}

pub fn augment_with(
    roadmap: &Arc<Roadmap>,
    belief: &BeliefState,
    index: &FootprintIndex,
    coords: &Arc<Vec<Position>>,
    stat: NodeStat,
) -> Result<AugmentedGraph> {
    if belief.len() != roadmap.grid.len() {
        return Err(IppError::Dimension(format!(
            "belief has {} cells, roadmap grid {}",
            belief.len(),
            roadmap.grid.len()
        )));
    }
    let var = belief.variances();
    let std: Vec<f64> = var.iter().map(|v| v.max(0.0).sqrt()).collect();
    let mut node_mu = Vec::with_capacity(roadmap.len());
    let mut node_std = Vec::with_capacity(roadmap.len());
    for cells in &index.cells {
        let n = cells.len() as f64;
        node_mu.push(cells.iter().map(|&c| belief.mu[c]).sum::<f64>() / n);
        node_std.push(match stat {
            NodeStat::MeanStd => cells.iter().map(|&c| std[c]).sum::<f64>() / n,
            NodeStat::TraceSubmatrix => cells.iter().map(|&c| var[c].max(0.0)).sum::<f64>(),
        });
    }
    Ok(AugmentedGraph { roadmap: Arc::clone(roadmap), node_mu, node_std, normalized_coords: Arc::clone(coords) })
}
