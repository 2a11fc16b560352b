//! Label-weighted convex clustering of descriptors and its solution path.
//!
//! For fusion level `lambda in [0, 1)` the centroids minimize
//!
//! ```text
//! sum_i ||u_i - x_i||_2^2 + gamma * sum_{i<j} w_ij ||u_i - u_j||_1,   gamma = lambda / (1 - lambda)
//! ```
//!
//! with `w_ij = 1` inside a class and `epsilon` across classes. The objective
//! separates over coordinates, so each coordinate is solved on its own (in
//! parallel) and fusion is detected jointly afterwards.

mod flow;
mod scalar;

use std::collections::{BTreeMap, HashMap};

use ndarray::{Array1, Array2, Axis};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use scalar::{column_residual, solve_column, ColumnProblem, ColumnState};

/// Pairwise fusion weights: 1 within a class, `epsilon` across classes.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionWeights {
    classes: Vec<usize>,
    epsilon: f64,
}

impl FusionWeights {
    pub fn from_classes(classes: &[usize], epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(Error::Config(format!(
                "epsilon must lie in (0, 1), got {epsilon}"
            )));
        }
        Ok(FusionWeights {
            classes: classes.to_vec(),
            epsilon,
        })
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i == j {
            0.0
        } else if self.classes[i] == self.classes[j] {
            1.0
        } else {
            self.epsilon
        }
    }

    pub fn to_matrix(&self) -> Array2<f64> {
        let n = self.len();
        Array2::from_shape_fn((n, n), |(i, j)| self.get(i, j))
    }

    /// Reorders samples: sample `k` of the result is sample `perm[k]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        FusionWeights {
            classes: perm.iter().map(|&k| self.classes[k]).collect(),
            epsilon: self.epsilon,
        }
    }
}

/// Builds weights from one-hot label vectors.
pub fn build_weights(labels: &[Vec<f64>], epsilon: f64) -> Result<FusionWeights> {
    let classes = labels
        .iter()
        .map(|y| {
            let hot: Vec<usize> = (0..y.len()).filter(|&k| y[k] == 1.0).collect();
            if hot.len() != 1 || y.iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::Config(format!("label {y:?} is not one-hot")));
            }
            Ok(hot[0])
        })
        .collect::<Result<Vec<_>>>()?;
    FusionWeights::from_classes(&classes, epsilon)
}

/// Maps a mixup parameter to the fusion penalty `lambda / (1 - lambda)`.
pub fn gamma_of(lambda: f64) -> f64 {
    lambda / (1.0 - lambda)
}

/// Increasing fusion levels `0 = l_0 < ... < l_M < 1`, followed by the analytic endpoint 1.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LambdaGrid {
    values: Vec<f64>,
}

impl LambdaGrid {
    /// `values` must start at 0, end at 1 and increase strictly.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 || values[0] != 0.0 || *values.last().unwrap() != 1.0 {
            return Err(Error::Config(
                "lambda grid must start at 0 and end at 1".into(),
            ));
        }
        if values
            .windows(2)
            .any(|w| w[0].partial_cmp(&w[1]) != Some(std::cmp::Ordering::Less))
        {
            return Err(Error::Config("lambda grid must increase strictly".into()));
        }
        Ok(LambdaGrid { values })
    }

    /// `points` values spaced uniformly on `[0, 0.99]`, plus 1.
    pub fn uniform(points: usize) -> Result<Self> {
        if points < 2 {
            return Err(Error::Config("grid needs at least two points".into()));
        }
        let last = (points - 1) as f64;
        let mut v: Vec<f64> = (0..points).map(|m| 0.99 * m as f64 / last).collect();
        v.push(1.0);
        LambdaGrid::new(v)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Relative residual tolerance; the absolute bound is `tol * (1 + max |x|)`.
    pub tol: f64,
    pub max_iterations: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-6,
            max_iterations: 10_000,
        }
    }
}

fn check_descriptors(descriptors: &Array2<f64>, weights: &FusionWeights) -> Result<()> {
    if descriptors.nrows() != weights.len() {
        return Err(Error::Shape(format!(
            "{} descriptors but {} weighted samples",
            descriptors.nrows(),
            weights.len()
        )));
    }
    if descriptors.nrows() == 0 || descriptors.ncols() == 0 {
        return Err(Error::Shape("empty descriptor matrix".into()));
    }
    if descriptors.iter().any(|x| !x.is_finite()) {
        return Err(Error::Shape("descriptors must be finite".into()));
    }
    Ok(())
}

fn abs_tol(descriptors: &Array2<f64>, tol: f64) -> f64 {
    tol * (1.0 + descriptors.iter().fold(0.0f64, |m, x| m.max(x.abs())))
}

/// Per-column solver state carried between grid points.
#[derive(Debug, Clone)]
struct PathState {
    gamma: f64,
    columns: Vec<ColumnState>,
}

fn column_key(theta: &[f64], warm: Option<&[f64]>) -> Vec<u64> {
    theta
        .iter()
        .chain(warm.into_iter().flatten())
        .map(|x| x.to_bits())
        .collect()
}

/// Solves every coordinate at one `lambda`. Identical columns (with identical
/// warm starts) are solved once, so symmetric inputs give bitwise symmetric outputs.
fn solve_columns(
    descriptors: &Array2<f64>,
    weights: &FusionWeights,
    lambda: f64,
    warm: Option<&PathState>,
    opts: &SolverOptions,
) -> Result<PathState> {
    let p = descriptors.ncols();
    let cols: Vec<Vec<f64>> = descriptors.axis_iter(Axis(1)).map(|c| c.to_vec()).collect();
    let mut unique: Vec<usize> = Vec::new();
    let mut slot = vec![0usize; p];
    let mut seen: HashMap<Vec<u64>, usize> = HashMap::new();
    for c in 0..p {
        let key = column_key(&cols[c], warm.map(|w| w.columns[c].u.as_slice()));
        slot[c] = *seen.entry(key).or_insert_with(|| {
            unique.push(c);
            unique.len() - 1
        });
    }
    let gamma = gamma_of(lambda);
    let tol = abs_tol(descriptors, opts.tol);
    let solved: Vec<_> = unique
        .par_iter()
        .map(|&c| {
            let problem = ColumnProblem {
                theta: &cols[c],
                weights,
                gamma,
                tol,
                max_iterations: opts.max_iterations,
            };
            let prev = warm.map(|w| &w.columns[c]);
            // Multipliers scale with the box they live in.
            let dual = warm.filter(|w| w.gamma > 0.0).and_then(|w| {
                let ratio = gamma / w.gamma;
                w.columns[c]
                    .dual
                    .as_ref()
                    .map(|d| d.iter().map(|&x| x * ratio).collect::<Vec<f64>>())
            });
            solve_column(&problem, prev.map(|s| s.u.as_slice()), dual.as_deref())
        })
        .collect();
    let mut columns = Vec::with_capacity(p);
    for c in 0..p {
        match &solved[slot[c]] {
            Ok(s) => columns.push(s.clone()),
            Err(e) => {
                return Err(Error::Solver {
                    lambda,
                    iterations: e.iterations,
                    residual: e.residual,
                })
            }
        }
    }
    Ok(PathState { gamma, columns })
}

fn state_to_matrix(state: &PathState, t: usize) -> Array2<f64> {
    let p = state.columns.len();
    Array2::from_shape_fn((t, p), |(i, c)| state.columns[c].u[i])
}

fn state_from_matrix(m: &Array2<f64>) -> PathState {
    PathState {
        gamma: 0.0,
        columns: m
            .axis_iter(Axis(1))
            .map(|c| ColumnState {
                u: c.to_vec(),
                dual: None,
                iterations: 0,
            })
            .collect(),
    }
}

/// Centroids at one fusion level `0 < lambda < 1`.
///
/// The result satisfies `optimality_residual(..) <= tol * (1 + max |x|)`.
pub fn solve_at(
    descriptors: &Array2<f64>,
    weights: &FusionWeights,
    lambda: f64,
    warm_start: Option<&Array2<f64>>,
    opts: &SolverOptions,
) -> Result<Array2<f64>> {
    check_descriptors(descriptors, weights)?;
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::Config(format!(
            "lambda must lie in (0, 1), got {lambda}"
        )));
    }
    let warm = match warm_start {
        Some(w) if w.dim() != descriptors.dim() => {
            return Err(Error::Shape("warm start does not match descriptors".into()))
        }
        Some(w) => Some(state_from_matrix(w)),
        None => None,
    };
    let state = solve_columns(descriptors, weights, lambda, warm.as_ref(), opts)?;
    Ok(state_to_matrix(&state, descriptors.nrows()))
}

/// Largest minimal subgradient residual of the objective at `centroids`,
/// over samples and coordinates. Entries that are exactly equal within a
/// coordinate are treated as fused; their pairwise signs are chosen optimally.
pub fn optimality_residual(
    descriptors: &Array2<f64>,
    weights: &FusionWeights,
    lambda: f64,
    centroids: &Array2<f64>,
) -> f64 {
    let gamma = gamma_of(lambda);
    (0..descriptors.ncols())
        .into_par_iter()
        .map(|c| {
            let theta = descriptors.column(c).to_vec();
            let u = centroids.column(c).to_vec();
            column_residual(&theta, &u, weights, gamma)
        })
        .reduce(|| 0.0, f64::max)
}

/// Objective value at `centroids`.
pub fn objective(
    descriptors: &Array2<f64>,
    weights: &FusionWeights,
    lambda: f64,
    centroids: &Array2<f64>,
) -> f64 {
    let gamma = gamma_of(lambda);
    let t = descriptors.nrows();
    let fid: f64 = (centroids - descriptors).iter().map(|d| d * d).sum();
    let mut fus = 0.0;
    for i in 0..t {
        for j in i + 1..t {
            let l1: f64 = centroids
                .row(i)
                .iter()
                .zip(centroids.row(j))
                .map(|(a, b)| (a - b).abs())
                .sum();
            fus += weights.get(i, j) * l1;
        }
    }
    fid + if fus == 0.0 { 0.0 } else { gamma * fus }
}

/// Absolute fusion threshold: `delta_fuse` times the overall descriptor range.
pub fn fusion_threshold(descriptors: &Array2<f64>, delta_fuse: f64) -> f64 {
    let (lo, hi) = descriptors
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        });
    let range = hi - lo;
    delta_fuse * if range > 0.0 { range } else { 1.0 }
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Connected components of "max-norm distance <= threshold", numbered in
/// order of their smallest member.
pub fn assign_clusters(centroids: &Array2<f64>, threshold: f64) -> (Vec<usize>, usize) {
    let t = centroids.nrows();
    let mut parent: Vec<usize> = (0..t).collect();
    for i in 0..t {
        for j in i + 1..t {
            let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
            if ri == rj {
                continue;
            }
            let close = centroids
                .row(i)
                .iter()
                .zip(centroids.row(j))
                .all(|(a, b)| (a - b).abs() <= threshold);
            if close {
                parent[ri.max(rj)] = ri.min(rj);
            }
        }
    }
    let mut ids = BTreeMap::new();
    let labels: Vec<usize> = (0..t)
        .map(|i| {
            let r = find(&mut parent, i);
            let next = ids.len();
            *ids.entry(r).or_insert(next)
        })
        .collect();
    (labels, ids.len())
}

/// Replaces each multi-member cell by its mean, repeating detection until stable.
fn snap(centroids: &mut Array2<f64>, threshold: f64) -> (Vec<usize>, usize) {
    loop {
        let (labels, count) = assign_clusters(centroids, threshold);
        let t = centroids.nrows();
        if count == t {
            return (labels, count);
        }
        let mut sums = Array2::<f64>::zeros((count, centroids.ncols()));
        let mut sizes = vec![0usize; count];
        for i in 0..t {
            sums.row_mut(labels[i]).scaled_add(1.0, &centroids.row(i));
            sizes[labels[i]] += 1;
        }
        for i in 0..t {
            if sizes[labels[i]] > 1 {
                let mean: Array1<f64> = &sums.row(labels[i]) / sizes[labels[i]] as f64;
                centroids.row_mut(i).assign(&mean);
            }
        }
        let (again, again_count) = assign_clusters(centroids, threshold);
        if again_count == count {
            return (again, again_count);
        }
    }
}

/// Cells of a partition given as per-sample labels.
pub fn cells_of(labels: &[usize]) -> Vec<Vec<usize>> {
    let k = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut cells = vec![Vec::new(); k];
    for (i, &l) in labels.iter().enumerate() {
        cells[l].push(i);
    }
    cells
}

/// A fusion event: at `lambda`, the listed cells of the previous grid point joined.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FusionEvent {
    pub lambda: f64,
    pub merged: Vec<Vec<usize>>,
}

/// Centroid trajectories over a lambda grid.
#[derive(Debug, Clone)]
pub struct ClusterPath {
    pub grid: LambdaGrid,
    /// One `T x p` centroid matrix per grid point.
    pub centroids: Vec<Array2<f64>>,
    /// Per grid point, the cell index of every sample.
    pub assignments: Vec<Vec<usize>>,
    pub cluster_counts: Vec<usize>,
    /// Grid indices where the cluster count rose relative to the previous point.
    pub monotonicity_violations: Vec<usize>,
}

impl ClusterPath {
    pub fn samples(&self) -> usize {
        self.assignments.first().map_or(0, Vec::len)
    }

    pub fn cells(&self, m: usize) -> Vec<Vec<usize>> {
        cells_of(&self.assignments[m])
    }

    /// Merges between consecutive grid points.
    pub fn fusion_events(&self) -> Vec<FusionEvent> {
        let mut events = Vec::new();
        for m in 1..self.grid.len() {
            let prev = &self.assignments[m - 1];
            for cell in self.cells(m) {
                let mut parts: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
                for &i in &cell {
                    parts.entry(prev[i]).or_default().push(i);
                }
                if parts.len() > 1 {
                    events.push(FusionEvent {
                        lambda: self.grid.values()[m],
                        merged: parts.into_values().collect(),
                    });
                }
            }
        }
        events
    }

    pub fn to_json(&self, include_centroids: bool) -> serde_json::Value {
        let mut v = serde_json::json!({
            "grid": self.grid.values(),
            "cluster_counts": self.cluster_counts,
            "fusion_events": self.fusion_events(),
            "monotonicity_violations": self.monotonicity_violations,
        });
        if include_centroids {
            let c: Vec<Vec<Vec<f64>>> = self
                .centroids
                .iter()
                .map(|m| m.rows().into_iter().map(|r| r.to_vec()).collect())
                .collect();
            v["centroids"] = serde_json::json!(c);
        }
        v
    }
}

/// Everything needed to solve at arbitrary fusion levels.
#[derive(Debug, Clone)]
pub struct ClusterProblem<'a> {
    pub descriptors: &'a Array2<f64>,
    pub weights: &'a FusionWeights,
    pub options: SolverOptions,
    pub delta_fuse: f64,
}

impl ClusterProblem<'_> {
    pub fn threshold(&self) -> f64 {
        fusion_threshold(self.descriptors, self.delta_fuse)
    }

    /// Grand mean of the descriptors, as a single row.
    pub fn grand_mean(&self) -> Array1<f64> {
        self.descriptors
            .mean_axis(Axis(0))
            .expect("non-empty descriptors")
    }

    /// Snapped centroids and their cells at any `lambda in [0, 1]`.
    pub fn solve_snapped(
        &self,
        lambda: f64,
        warm: Option<&Array2<f64>>,
    ) -> Result<(Array2<f64>, Vec<usize>, usize)> {
        let thr = self.threshold();
        if lambda == 0.0 {
            let c = self.descriptors.clone();
            let (labels, count) = assign_clusters(&c, thr);
            return Ok((c, labels, count));
        }
        if lambda == 1.0 {
            let t = self.descriptors.nrows();
            let mean = self.grand_mean();
            let c = Array2::from_shape_fn((t, mean.len()), |(_, k)| mean[k]);
            return Ok((c, vec![0; t], 1));
        }
        let mut c = solve_at(self.descriptors, self.weights, lambda, warm, &self.options)?;
        let (labels, count) = snap(&mut c, thr);
        Ok((c, labels, count))
    }
}

/// Solves along `grid` with warm starts; the endpoints are filled analytically.
pub fn trace_clusterpath(
    descriptors: &Array2<f64>,
    weights: &FusionWeights,
    grid: &LambdaGrid,
    opts: &SolverOptions,
    delta_fuse: f64,
) -> Result<ClusterPath> {
    check_descriptors(descriptors, weights)?;
    if delta_fuse.is_nan() || delta_fuse <= 0.0 {
        return Err(Error::Config("delta_fuse must be positive".into()));
    }
    let problem = ClusterProblem {
        descriptors,
        weights,
        options: *opts,
        delta_fuse,
    };
    let thr = problem.threshold();
    let mut centroids = Vec::with_capacity(grid.len());
    let mut assignments = Vec::with_capacity(grid.len());
    let mut counts = Vec::with_capacity(grid.len());
    let mut warm: Option<PathState> = None;
    for &lambda in grid.values() {
        let (c, labels, count) = if lambda == 0.0 || lambda == 1.0 {
            problem.solve_snapped(lambda, None)?
        } else {
            let state = solve_columns(descriptors, weights, lambda, warm.as_ref(), opts)?;
            let iters: usize = state.columns.iter().map(|s| s.iterations).sum();
            log::debug!("lambda={lambda:.4} solver iterations={iters}");
            let mut c = state_to_matrix(&state, descriptors.nrows());
            warm = Some(state);
            let (labels, count) = snap(&mut c, thr);
            (c, labels, count)
        };
        log::debug!("lambda={lambda:.4} clusters={count}");
        centroids.push(c);
        assignments.push(labels);
        counts.push(count);
    }
    let violations: Vec<usize> = (1..counts.len())
        .filter(|&m| counts[m] > counts[m - 1])
        .collect();
    if !violations.is_empty() {
        log::warn!(
            "cluster count increases at {} grid points",
            violations.len()
        );
    }
    Ok(ClusterPath {
        grid: grid.clone(),
        centroids,
        assignments,
        cluster_counts: counts,
        monotonicity_violations: violations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn weights_follow_classes() {
        let w = build_weights(&[vec![1.0, 0.0], vec![1.0, 0.0]], 0.3).unwrap();
        assert_eq!(w.get(0, 1), 1.0);
        let w = build_weights(&[vec![1.0, 0.0], vec![0.0, 1.0]], 0.01).unwrap();
        assert_eq!(w.get(0, 1), 0.01);
        let w = FusionWeights::from_classes(&[0, 0, 1], 0.5).unwrap();
        assert_eq!(
            w.to_matrix(),
            array![[0.0, 1.0, 0.5], [1.0, 0.0, 0.5], [0.5, 0.5, 0.0]]
        );
    }

    #[test]
    fn epsilon_bounds() {
        for eps in [0.0, 1.0, -0.1, f64::NAN] {
            assert!(matches!(
                FusionWeights::from_classes(&[0, 1], eps),
                Err(Error::Config(_))
            ));
        }
    }

    #[test]
    fn default_grid() {
        let g = LambdaGrid::uniform(101).unwrap();
        assert_eq!(g.len(), 102);
        assert_eq!(g.values()[0], 0.0);
        assert!((g.values()[100] - 0.99).abs() < 1e-15);
        assert_eq!(g.values()[101], 1.0);
        assert!(LambdaGrid::new(vec![0.0, 0.5, 0.5, 1.0]).is_err());
    }

    #[test]
    fn tiny_lambda_returns_data() {
        let x = array![[0.1, 0.7], [0.4, 0.2], [0.9, 0.5]];
        let w = FusionWeights::from_classes(&[0, 1, 0], 0.01).unwrap();
        let u = solve_at(&x, &w, 1e-8, None, &SolverOptions::default()).unwrap();
        assert!(u.iter().zip(x.iter()).all(|(a, b)| (a - b).abs() < 1e-6));
    }

    #[test]
    fn two_point_family() {
        let x = array![[0.0], [2.0]];
        let w = FusionWeights::from_classes(&[0, 0], 0.5).unwrap();
        let opts = SolverOptions::default();
        // gamma = 0.5 and gamma = 3.
        let u = solve_at(&x, &w, 1.0 / 3.0, None, &opts).unwrap();
        assert!((u[[0, 0]] - 0.25).abs() < 1e-12 && (u[[1, 0]] - 1.75).abs() < 1e-12);
        assert!(optimality_residual(&x, &w, 1.0 / 3.0, &u) <= 1e-9);
        let u = solve_at(&x, &w, 0.75, None, &opts).unwrap();
        assert_eq!(u, array![[1.0], [1.0]]);
    }

    #[test]
    fn residual_examples() {
        let x = array![[0.0], [2.0]];
        let w = FusionWeights::from_classes(&[0, 0], 0.5).unwrap();
        let exact = array![[0.25], [1.75]];
        assert!(optimality_residual(&x, &w, 1.0 / 3.0, &exact) <= 1e-9);
        assert!(optimality_residual(&x, &w, 0.9, &x) > 0.0);
        let mean = array![[1.0], [1.0]];
        assert!(optimality_residual(&x, &w, 0.9, &mean) <= 1e-6);
    }

    #[test]
    fn bad_lambda_is_rejected() {
        let x = array![[0.0], [2.0]];
        let w = FusionWeights::from_classes(&[0, 0], 0.5).unwrap();
        for l in [0.0, 1.0, 1.5] {
            assert!(solve_at(&x, &w, l, None, &SolverOptions::default()).is_err());
        }
    }

    #[test]
    fn endpoints_and_counts() {
        let x = array![[0.0], [1.0], [5.0]];
        let w = FusionWeights::from_classes(&[0, 0, 0], 0.5).unwrap();
        let grid = LambdaGrid::uniform(101).unwrap();
        let path = trace_clusterpath(&x, &w, &grid, &SolverOptions::default(), 1e-4).unwrap();
        assert_eq!(path.centroids[0], x);
        assert_eq!(path.cluster_counts[0], 3);
        assert_eq!(*path.cluster_counts.last().unwrap(), 1);
        assert_eq!(path.centroids.last().unwrap(), &array![[2.0], [2.0], [2.0]]);
        assert!(path.monotonicity_violations.is_empty());
        let events = path.fusion_events();
        assert_eq!(events[0].merged, vec![vec![0], vec![1]]);
    }

    #[test]
    fn duplicates_are_prefused() {
        let x = array![[0.3], [0.3], [0.8]];
        let w = FusionWeights::from_classes(&[0, 1, 1], 0.1).unwrap();
        let grid = LambdaGrid::uniform(5).unwrap();
        let path = trace_clusterpath(&x, &w, &grid, &SolverOptions::default(), 1e-4).unwrap();
        assert_eq!(path.cluster_counts[0], 2);
    }
}
