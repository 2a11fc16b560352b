#![allow(dead_code)]

use graphmad::cvxclust::{gamma_of, FusionWeights};
use graphmad::graph_io::{Dataset, Graph, LabeledGraph};
use ndarray::Array2;

/// All ordered set partitions of `0..n`.
pub fn weak_orderings(n: usize) -> Vec<Vec<Vec<usize>>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for ordering in weak_orderings(n - 1) {
        let k = ordering.len();
        // Join an existing block.
        for b in 0..k {
            let mut o = ordering.clone();
            o[b].push(n - 1);
            out.push(o);
        }
        // Or open a new block at any position.
        for pos in 0..=k {
            let mut o = ordering.clone();
            o.insert(pos, vec![n - 1]);
            out.push(o);
        }
    }
    out
}

pub fn scalar_objective(theta: &[f64], u: &[f64], w: &FusionWeights, gamma: f64) -> f64 {
    let n = theta.len();
    let mut f: f64 = theta.iter().zip(u).map(|(x, y)| (x - y) * (x - y)).sum();
    for i in 0..n {
        for j in i + 1..n {
            f += gamma * w.get(i, j) * (u[i] - u[j]).abs();
        }
    }
    f
}

/// Exact scalar minimizer by enumeration.
///
/// On the face of a fixed weak ordering the objective is a smooth quadratic
/// in the block values, minimized at
/// `v_B = (sum_B x - gamma/2 * sum_{i in B} (sum_{j below} w_ij - sum_{j above} w_ij)) / |B|`.
/// The optimum lies in the relative interior of the face of its own
/// ordering, so it is one of these candidates; every candidate is feasible,
/// so the smallest true objective among them is the optimum.
pub fn scalar_oracle(theta: &[f64], w: &FusionWeights, gamma: f64) -> (Vec<f64>, f64) {
    let n = theta.len();
    let mut best = (theta.to_vec(), f64::INFINITY);
    for ordering in weak_orderings(n) {
        let mut rank = vec![0usize; n];
        for (r, b) in ordering.iter().enumerate() {
            for &i in b {
                rank[i] = r;
            }
        }
        let mut u = vec![0.0; n];
        for b in &ordering {
            let mut push = 0.0;
            for &i in b {
                for j in 0..n {
                    if rank[j] < rank[i] {
                        push += w.get(i, j);
                    } else if rank[j] > rank[i] {
                        push -= w.get(i, j);
                    }
                }
            }
            let sum: f64 = b.iter().map(|&i| theta[i]).sum();
            let v = (sum - 0.5 * gamma * push) / b.len() as f64;
            for &i in b {
                u[i] = v;
            }
        }
        let f = scalar_objective(theta, &u, w, gamma);
        if f < best.1 {
            best = (u, f);
        }
    }
    best
}

/// Oracle centroids and total objective for every coordinate.
pub fn oracle_solution(x: &Array2<f64>, w: &FusionWeights, lambda: f64) -> (Array2<f64>, f64) {
    let gamma = gamma_of(lambda);
    let mut u = Array2::zeros(x.dim());
    let mut total = 0.0;
    for c in 0..x.ncols() {
        let theta = x.column(c).to_vec();
        let (uc, f) = scalar_oracle(&theta, w, gamma);
        for i in 0..x.nrows() {
            u[[i, c]] = uc[i];
        }
        total += f;
    }
    (u, total)
}

/// Two points `{0, d}` with weight `w`: centroids move `gamma * w / 2`
/// inwards until they meet at `gamma * w >= d`.
pub fn two_point_closed_form(d: f64, w: f64, gamma: f64) -> (f64, f64) {
    if gamma * w >= d {
        (d / 2.0, d / 2.0)
    } else {
        (gamma * w / 2.0, d - gamma * w / 2.0)
    }
}

pub fn complete_graph(n: usize) -> Graph {
    let pairs = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j)));
    Graph::from_pairs(n, pairs).unwrap().0
}

/// Graphs whose degree-sorted block-1 graphon equals `density` exactly:
/// `k` edges on `n` nodes laid out deterministically.
pub fn graph_with_edges(n: usize, k: usize) -> Graph {
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .take(k)
        .collect();
    Graph::from_pairs(n, pairs).unwrap().0
}

/// One-coordinate "descriptor" datasets: graph `i` has `edges[i]` edges on
/// `n` nodes, so at resolution 1 its descriptor is `edges[i] / C(n, 2)`.
pub fn density_dataset(
    name: &str,
    n: usize,
    edges: &[usize],
    classes: &[usize],
    k: usize,
) -> Dataset {
    let graphs = edges
        .iter()
        .zip(classes)
        .map(|(&e, &c)| LabeledGraph::new(graph_with_edges(n, e), c, k).unwrap())
        .collect();
    Dataset::with_index_labels(name, graphs, k).unwrap()
}

/// Graphs sampled from one 2-block graphon per class, with node counts in `sizes`.
pub fn sbm_dataset(
    name: &str,
    class_params: &[(f64, f64)],
    per_class: usize,
    sizes: std::ops::Range<usize>,
    seed: u64,
) -> Dataset {
    use graphmad::graphon::{sample_graph, Graphon};
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let k = class_params.len();
    let mut graphs = Vec::new();
    for _ in 0..per_class {
        for (c, &(p_in, p_out)) in class_params.iter().enumerate() {
            let w = Graphon::new(2, vec![p_in, p_out, p_out, p_in]).unwrap();
            let n = rng.gen_range(sizes.clone());
            graphs.push(LabeledGraph::new(sample_graph(&w, n, &mut rng), c, k).unwrap());
        }
    }
    Dataset::with_index_labels(name, graphs, k).unwrap()
}

/// Writes `dataset` as a plain TUDataset directory under `root`.
pub fn write_dataset(root: &std::path::Path, dataset: &Dataset) {
    graphmad::graph_io::write_augmented_dataset(
        root,
        &dataset.name,
        dataset,
        &[],
        &serde_json::json!({}),
    )
    .unwrap();
}

pub fn fixtures() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests")
        .join("fixtures")
}

pub fn cli(args: &[&str]) -> i32 {
    let mut full = vec!["graphmad"];
    full.extend_from_slice(args);
    graphmad::cli::main_with_args(full)
}
