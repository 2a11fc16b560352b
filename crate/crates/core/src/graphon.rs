//! Piecewise-constant (stochastic block model) graphons.
//!
//! A [`Graphon`] is a symmetric `D x D` matrix of edge probabilities. Graphs
//! are turned into graphons by degree sorting followed by block averaging,
//! and graphs are drawn from graphons by assigning each node a uniform latent
//! position and flipping one coin per node pair.

use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph_io::{write_file, Graph};

/// Largest asymmetry accepted by [`Graphon::devectorize`].
pub const SYMMETRY_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GraphonJson", into = "GraphonJson")]
pub struct Graphon {
    resolution: usize,
    matrix: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct GraphonJson {
    #[serde(rename = "D")]
    d: usize,
    #[serde(rename = "W")]
    w: Vec<f64>,
}

impl TryFrom<GraphonJson> for Graphon {
    type Error = Error;

    fn try_from(j: GraphonJson) -> Result<Self> {
        Graphon::new(j.d, j.w)
    }
}

impl From<Graphon> for GraphonJson {
    fn from(g: Graphon) -> Self {
        GraphonJson {
            d: g.resolution,
            w: g.matrix,
        }
    }
}

impl Graphon {
    /// Wraps a row-major matrix, requiring exact symmetry and entries in `[0, 1]`.
    pub fn new(resolution: usize, matrix: Vec<f64>) -> Result<Self> {
        if resolution == 0 {
            return Err(Error::Shape("graphon resolution must be positive".into()));
        }
        if matrix.len() != resolution * resolution {
            return Err(Error::Shape(format!(
                "{} entries for a {resolution}x{resolution} graphon",
                matrix.len()
            )));
        }
        if let Some(x) = matrix.iter().find(|x| !(0.0..=1.0).contains(*x)) {
            return Err(Error::Validity(format!("entry {x} outside [0, 1]")));
        }
        for a in 0..resolution {
            for b in a + 1..resolution {
                if matrix[a * resolution + b] != matrix[b * resolution + a] {
                    return Err(Error::Validity(format!(
                        "entries ({a}, {b}) and ({b}, {a}) differ"
                    )));
                }
            }
        }
        Ok(Graphon { resolution, matrix })
    }

    pub fn constant(resolution: usize, p: f64) -> Result<Self> {
        Graphon::new(resolution, vec![p; resolution * resolution])
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.matrix[a * self.resolution + b]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.matrix
    }

    /// Row-major flattening into a descriptor of length `D^2`.
    pub fn vectorize(&self) -> Vec<f64> {
        self.matrix.clone()
    }

    /// Inverse of [`Graphon::vectorize`].
    ///
    /// Pairs `(a, b)` / `(b, a)` may differ by up to [`SYMMETRY_TOL`]; they are
    /// replaced by their average. Entries are clamped into `[0, 1]` when they
    /// overshoot by rounding only.
    pub fn devectorize(descriptor: &[f64]) -> Result<Self> {
        let d = (descriptor.len() as f64).sqrt().round() as usize;
        if d == 0 || d * d != descriptor.len() {
            return Err(Error::Shape(format!(
                "descriptor of length {} is not a square matrix",
                descriptor.len()
            )));
        }
        let mut m = descriptor.to_vec();
        for a in 0..d {
            for b in a + 1..d {
                let (x, y) = (m[a * d + b], m[b * d + a]);
                if (x - y).abs() > SYMMETRY_TOL || !x.is_finite() || !y.is_finite() {
                    return Err(Error::Validity(format!(
                        "entries ({a}, {b})={x} and ({b}, {a})={y} are not symmetric"
                    )));
                }
                let avg = 0.5 * (x + y);
                m[a * d + b] = avg;
                m[b * d + a] = avg;
            }
        }
        for x in &mut m {
            if *x < -1e-12 || *x > 1.0 + 1e-12 || x.is_nan() {
                return Err(Error::Validity(format!("entry {x} outside [0, 1]")));
            }
            *x = x.clamp(0.0, 1.0);
        }
        Graphon::new(d, m)
    }

    /// Entry-wise convex combination `w * self + (1 - w) * other`.
    pub fn mix(&self, other: &Graphon, w: f64) -> Result<Graphon> {
        if self.resolution != other.resolution {
            return Err(Error::Shape(format!(
                "cannot mix resolutions {} and {}",
                self.resolution, other.resolution
            )));
        }
        let m = self
            .matrix
            .iter()
            .zip(&other.matrix)
            .map(|(&x, &y)| (w * x + (1.0 - w) * y).clamp(0.0, 1.0))
            .collect();
        Graphon::new(self.resolution, m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Load {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut s = serde_json::to_string(self)?;
        s.push('\n');
        write_file(path, s.as_bytes())
    }
}

/// Block index of latent position `zeta` for `d` blocks; `zeta = 1` maps to the last block.
pub fn block_of(zeta: f64, d: usize) -> usize {
    ((zeta * d as f64).floor() as usize).min(d - 1)
}

/// Splits `0..n` into `d` contiguous bins whose sizes differ by at most one.
/// Larger bins come first.
pub fn bin_bounds(n: usize, d: usize) -> Vec<usize> {
    let (q, r) = (n / d, n % d);
    let mut bounds = Vec::with_capacity(d + 1);
    bounds.push(0);
    for b in 0..d {
        let size = q + usize::from(b < r);
        bounds.push(bounds[b] + size);
    }
    bounds
}

/// Estimates a `D x D` block graphon by sorting nodes by degree (descending,
/// ties by node index) and averaging the adjacency over contiguous bins.
///
/// Diagonal blocks divide by the number of unordered distinct pairs inside
/// the bin; a bin with a single node has no such pairs and gets 0.
pub fn estimate_graphon(graph: &Graph, resolution: usize) -> Result<Graphon> {
    let n = graph.node_count();
    if n == 0 {
        return Err(Error::Estimation("graph has no nodes".into()));
    }
    if resolution == 0 || resolution > n {
        return Err(Error::Estimation(format!(
            "resolution {resolution} needs between 1 and {n} nodes per graph"
        )));
    }
    let deg = graph.degrees();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| deg[b].cmp(&deg[a]).then(a.cmp(&b)));

    let bounds = bin_bounds(n, resolution);
    let mut bin = vec![0usize; n];
    for b in 0..resolution {
        for &v in &order[bounds[b]..bounds[b + 1]] {
            bin[v] = b;
        }
    }

    let d = resolution;
    let mut counts = vec![0usize; d * d];
    for &(i, j) in graph.edges() {
        let (a, b) = (bin[i].min(bin[j]), bin[i].max(bin[j]));
        counts[a * d + b] += 1;
    }
    let size = |b: usize| bounds[b + 1] - bounds[b];
    let mut m = vec![0.0; d * d];
    for a in 0..d {
        for b in a..d {
            let pairs = if a == b {
                size(a) * (size(a) - 1) / 2
            } else {
                size(a) * size(b)
            };
            let v = if pairs == 0 {
                0.0
            } else {
                counts[a * d + b] as f64 / pairs as f64
            };
            m[a * d + b] = v;
            m[b * d + a] = v;
        }
    }
    Graphon::new(d, m)
}

/// Estimates every graph in parallel.
pub fn estimate_all<'a>(
    graphs: impl IntoParallelIterator<Item = &'a Graph>,
    resolution: usize,
) -> Result<Vec<Graphon>> {
    graphs
        .into_par_iter()
        .map(|g| estimate_graphon(g, resolution))
        .collect()
}

/// Samples a simple undirected graph on `node_count` nodes from `graphon`.
///
/// Each node draws `zeta ~ U[0, 1)`; each pair `i < j` is joined with
/// probability `W[block(zeta_i)][block(zeta_j)]`.
pub fn sample_graph<R: Rng + ?Sized>(graphon: &Graphon, node_count: usize, rng: &mut R) -> Graph {
    let d = graphon.resolution();
    let blocks: Vec<usize> = (0..node_count)
        .map(|_| block_of(rng.gen::<f64>(), d))
        .collect();
    let mut edges = Vec::new();
    for i in 0..node_count {
        for j in i + 1..node_count {
            if rng.gen::<f64>() < graphon.get(blocks[i], blocks[j]) {
                edges.push((i, j));
            }
        }
    }
    Graph::from_sorted_unchecked(node_count, edges)
}
