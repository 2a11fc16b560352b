//! Collapsing a clusterpath into one branch per class and scheduling soft
//! labels along each branch.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::cvxclust::{cells_of, ClusterPath, ClusterProblem, LambdaGrid};
use crate::error::{Error, Result};

/// How many bisection steps are spent looking for exactly `K` clusters
/// between two grid points.
pub const MAX_REFINEMENTS: usize = 20;

/// Denominator magnitude below which a branch counts as stationary.
const STATIONARY_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BranchSelection {
    pub lambda_star: f64,
    pub index_sets: Vec<Vec<usize>>,
    /// Found by bisection between grid points.
    pub refined: bool,
    /// Cells had to be split to reach `K`.
    pub split: bool,
}

/// Picks the fusion level where the path has exactly `k` clusters and
/// returns the cells there.
///
/// Tries the grid first, then bisects between the bracketing grid points.
/// If the count still jumps past `k`, the smallest level with fewer clusters
/// is used and its largest cells are split by 2-means on the centroids just
/// before the jump.
pub fn select_branch_lambda(
    path: &ClusterPath,
    problem: &ClusterProblem,
    k: usize,
) -> Result<BranchSelection> {
    let t = path.samples();
    if k == 0 || k > t {
        return Err(Error::Config(format!(
            "cannot form {k} branches from {t} samples"
        )));
    }
    let grid = path.grid.values();
    if let Some(m) = path.cluster_counts.iter().position(|&c| c == k) {
        return Ok(BranchSelection {
            lambda_star: grid[m],
            index_sets: path.cells(m),
            refined: false,
            split: false,
        });
    }
    // First point where the count drops below k.
    let hi_idx = path
        .cluster_counts
        .iter()
        .position(|&c| c < k)
        .expect("the fused endpoint has one cluster");
    if hi_idx == 0 {
        // Fewer than k distinct descriptors: split straight from the data.
        let labels = path.assignments[0].clone();
        let sets = split_until(
            cells_of(&labels),
            k,
            &path.centroids[0],
            problem.descriptors,
        );
        return Ok(BranchSelection {
            lambda_star: 0.0,
            index_sets: sets,
            refined: false,
            split: true,
        });
    }
    let (mut lo, mut hi) = (grid[hi_idx - 1], grid[hi_idx]);
    let mut lo_centroids = path.centroids[hi_idx - 1].clone();
    let mut hi_labels = path.assignments[hi_idx].clone();
    for _ in 0..MAX_REFINEMENTS {
        let mid = 0.5 * (lo + hi);
        let (c, labels, count) = problem.solve_snapped(mid, Some(&lo_centroids))?;
        if count == k {
            return Ok(BranchSelection {
                lambda_star: mid,
                index_sets: cells_of(&labels),
                refined: true,
                split: false,
            });
        }
        if count > k {
            lo = mid;
            lo_centroids = c;
        } else {
            hi = mid;
            hi_labels = labels;
        }
    }
    log::warn!("no fusion level with exactly {k} clusters; splitting cells at lambda={hi:.6}");
    let sets = split_until(cells_of(&hi_labels), k, &lo_centroids, problem.descriptors);
    Ok(BranchSelection {
        lambda_star: hi,
        index_sets: sets,
        refined: true,
        split: true,
    })
}

fn sq_dist(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Splits `cell` in two by 2-means on the rows of `points`, seeded with the
/// two members farthest apart. `None` when all rows coincide.
fn bisect(cell: &[usize], points: &Array2<f64>) -> Option<(Vec<usize>, Vec<usize>)> {
    let (mut a, mut b, mut far) = (cell[0], cell[0], 0.0);
    for (x, &i) in cell.iter().enumerate() {
        for &j in &cell[x + 1..] {
            let d = sq_dist(points.row(i), points.row(j));
            if d > far {
                (a, b, far) = (i, j, d);
            }
        }
    }
    if far == 0.0 {
        return None;
    }
    let mut ca = points.row(a).to_owned();
    let mut cb = points.row(b).to_owned();
    let mut assign: Vec<bool> = Vec::new();
    for _ in 0..100 {
        let next: Vec<bool> = cell
            .iter()
            .map(|&i| sq_dist(points.row(i), ca.view()) <= sq_dist(points.row(i), cb.view()))
            .collect();
        if next == assign {
            break;
        }
        assign = next;
        let mean = |side: bool| -> Array1<f64> {
            let rows: Vec<usize> = cell
                .iter()
                .zip(&assign)
                .filter(|(_, &s)| s == side)
                .map(|(&i, _)| i)
                .collect();
            points
                .select(Axis(0), &rows)
                .mean_axis(Axis(0))
                .expect("non-empty side")
        };
        ca = mean(true);
        cb = mean(false);
    }
    let left: Vec<usize> = cell
        .iter()
        .zip(&assign)
        .filter(|(_, &s)| s)
        .map(|(&i, _)| i)
        .collect();
    let right: Vec<usize> = cell
        .iter()
        .zip(&assign)
        .filter(|(_, &s)| !s)
        .map(|(&i, _)| i)
        .collect();
    Some((left, right))
}

fn split_until(
    mut cells: Vec<Vec<usize>>,
    k: usize,
    centroids: &Array2<f64>,
    descriptors: &Array2<f64>,
) -> Vec<Vec<usize>> {
    while cells.len() < k {
        // Largest cell; ties go to the earliest.
        let idx = (0..cells.len()).fold(0, |best, c| {
            if cells[c].len() > cells[best].len() {
                c
            } else {
                best
            }
        });
        let cell = cells.remove(idx);
        let (left, right) = bisect(&cell, centroids)
            .or_else(|| bisect(&cell, descriptors))
            .unwrap_or_else(|| {
                let half = cell.len() / 2;
                (cell[..half].to_vec(), cell[half..].to_vec())
            });
        cells.push(left);
        cells.push(right);
    }
    for c in &mut cells {
        c.sort_unstable();
    }
    cells.sort();
    cells
}

/// `K` averaged trajectories and their label anchors.
#[derive(Debug, Clone)]
pub struct ExtendedClusterPath {
    pub grid: LambdaGrid,
    /// Per branch, a `grid x p` matrix.
    pub branches: Vec<Array2<f64>>,
    pub index_sets: Vec<Vec<usize>>,
    pub lambda_star: f64,
    /// Class composition of each branch.
    pub label_start: Vec<Vec<f64>>,
    /// Label at total fusion: the global class proportions.
    pub label_end: Vec<f64>,
}

impl ExtendedClusterPath {
    pub fn branch_count(&self) -> usize {
        self.branches.len()
    }

    /// Branch centroid at any `lambda in [0, 1]`, linear between grid points.
    pub fn point_at(&self, branch: usize, lambda: f64) -> Array1<f64> {
        let (m, f) = locate(self.grid.values(), lambda);
        let b = &self.branches[branch];
        if f == 0.0 {
            return b.row(m).to_owned();
        }
        &b.row(m) * (1.0 - f) + &b.row(m + 1) * f
    }

    /// Branch whose index set holds the most samples of `class`; ties go to the lower branch.
    pub fn majority_branch(&self, classes: &[usize], class: usize) -> usize {
        let counts: Vec<usize> = self
            .index_sets
            .iter()
            .map(|s| s.iter().filter(|&&i| classes[i] == class).count())
            .collect();
        (0..counts.len()).fold(0, |best, b| if counts[b] > counts[best] { b } else { best })
    }
}

/// Grid cell containing `lambda` and the fraction of the way to the next point.
pub fn locate(grid: &[f64], lambda: f64) -> (usize, f64) {
    let lambda = lambda.clamp(0.0, 1.0);
    let last = grid.len() - 1;
    if lambda >= grid[last] {
        return (last, 0.0);
    }
    let m = grid.partition_point(|&g| g <= lambda) - 1;
    let f = (lambda - grid[m]) / (grid[m + 1] - grid[m]);
    (m, f)
}

/// Averages the per-sample paths over each chosen index set.
pub fn collapse_branches(
    path: &ClusterPath,
    selection: &BranchSelection,
    classes: &[usize],
    class_count: usize,
) -> Result<ExtendedClusterPath> {
    let t = path.samples();
    let index_sets = &selection.index_sets;
    if classes.len() != t {
        return Err(Error::Shape(format!(
            "{} labels for {t} samples",
            classes.len()
        )));
    }
    let mut seen = vec![false; t];
    for set in index_sets.iter() {
        if set.is_empty() {
            return Err(Error::Partition("empty index set".into()));
        }
        for &i in set {
            if i >= t || std::mem::replace(&mut seen[i], true) {
                return Err(Error::Partition(format!(
                    "sample {i} is out of range or repeated"
                )));
            }
        }
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(Error::Partition(format!("sample {i} is in no index set")));
    }

    let branches = index_sets
        .iter()
        .map(|set| {
            let rows: Vec<Array1<f64>> = path
                .centroids
                .iter()
                .map(|c| {
                    c.select(Axis(0), set)
                        .mean_axis(Axis(0))
                        .expect("non-empty")
                })
                .collect();
            let p = rows[0].len();
            Array2::from_shape_fn((rows.len(), p), |(m, c)| rows[m][c])
        })
        .collect();
    let proportions = |members: &mut dyn Iterator<Item = usize>| {
        let mut v = vec![0.0; class_count];
        let mut n = 0usize;
        for i in members {
            v[classes[i]] += 1.0;
            n += 1;
        }
        v.iter_mut().for_each(|x| *x /= n as f64);
        v
    };
    let label_start = index_sets
        .iter()
        .map(|set| proportions(&mut set.iter().copied()))
        .collect();
    let label_end = proportions(&mut (0..t));
    Ok(ExtendedClusterPath {
        grid: path.grid.clone(),
        branches,
        index_sets: index_sets.clone(),
        lambda_star: selection.lambda_star,
        label_start,
        label_end,
    })
}

fn sq_norm(v: ndarray::ArrayView1<f64>) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// Normalized squared-norm progress of a branch on its grid, clamped to `[0, 1]`.
///
/// Returns the values and whether clamping changed any of them.
pub fn compute_rate(branch: &Array2<f64>, grid: &LambdaGrid) -> (Vec<f64>, bool) {
    let lam = grid.values();
    let n = branch.nrows();
    let start = sq_norm(branch.row(0));
    let denom = sq_norm(branch.row(n - 1)) - start;
    let mut clamped = false;
    let mut g: Vec<f64> = (0..n)
        .map(|m| {
            if denom.abs() < STATIONARY_EPS {
                return lam[m];
            }
            let raw = (sq_norm(branch.row(m)) - start) / denom;
            let c = raw.clamp(0.0, 1.0);
            clamped |= c != raw;
            c
        })
        .collect();
    g[0] = 0.0;
    g[n - 1] = 1.0;
    (g, clamped)
}

/// `g * start + (1 - g) * end`.
pub fn label_at(start: &[f64], end: &[f64], g: f64) -> Vec<f64> {
    start
        .iter()
        .zip(end)
        .map(|(&a, &b)| (g * a + (1.0 - g) * b).clamp(0.0, 1.0))
        .collect()
}

/// Which end of the rate curve the branch composition is attached to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum LabelOrientation {
    /// Weight the branch composition by `g(lambda)`, as the label formula is written.
    Paper,
    /// Weight the branch composition by `1 - g(lambda)`, so the label starts at the
    /// branch composition where the data path starts at the original samples.
    #[default]
    EndpointConsistent,
}

impl LabelOrientation {
    /// Weight on the branch composition for rate value `g`.
    pub fn start_weight(self, g: f64) -> f64 {
        match self {
            LabelOrientation::Paper => g,
            LabelOrientation::EndpointConsistent => 1.0 - g,
        }
    }
}

impl fmt::Display for LabelOrientation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LabelOrientation::Paper => "paper",
            LabelOrientation::EndpointConsistent => "endpoint-consistent",
        })
    }
}

impl FromStr for LabelOrientation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(LabelOrientation::Paper),
            "endpoint-consistent" => Ok(LabelOrientation::EndpointConsistent),
            _ => Err(Error::Config(format!("unknown label orientation {s:?}"))),
        }
    }
}

/// Per-branch rate curves and soft labels on the grid.
#[derive(Debug, Clone)]
pub struct LabelPath {
    pub orientation: LabelOrientation,
    pub rates: Vec<Vec<f64>>,
    /// `labels[k][m]` is the soft label of branch `k` at grid point `m`.
    pub labels: Vec<Vec<Vec<f64>>>,
    pub clamped: Vec<bool>,
}

impl LabelPath {
    pub fn new(ext: &ExtendedClusterPath, orientation: LabelOrientation) -> Self {
        let mut rates = Vec::new();
        let mut labels = Vec::new();
        let mut clamped = Vec::new();
        for (k, branch) in ext.branches.iter().enumerate() {
            let (g, c) = compute_rate(branch, &ext.grid);
            if c {
                log::info!("branch {k}: rate clamped into [0, 1]");
            }
            labels.push(
                g.iter()
                    .map(|&gm| {
                        label_at(
                            &ext.label_start[k],
                            &ext.label_end,
                            orientation.start_weight(gm),
                        )
                    })
                    .collect(),
            );
            rates.push(g);
            clamped.push(c);
        }
        LabelPath {
            orientation,
            rates,
            labels,
            clamped,
        }
    }

    /// Rate of branch `k` at any `lambda`, linear between grid points.
    pub fn rate_at(&self, grid: &LambdaGrid, k: usize, lambda: f64) -> f64 {
        let (m, f) = locate(grid.values(), lambda);
        let g = &self.rates[k];
        if f == 0.0 {
            g[m]
        } else {
            (1.0 - f) * g[m] + f * g[m + 1]
        }
    }

    /// Soft label of branch `k` at any `lambda`.
    pub fn label(&self, ext: &ExtendedClusterPath, k: usize, lambda: f64) -> Vec<f64> {
        let g = self.rate_at(&ext.grid, k, lambda);
        label_at(
            &ext.label_start[k],
            &ext.label_end,
            self.orientation.start_weight(g),
        )
    }
}

#[derive(Serialize)]
struct ExtendedJson<'a> {
    lambda_star: f64,
    index_sets: &'a [Vec<usize>],
    grid: &'a [f64],
    orientation: LabelOrientation,
    label_start: &'a [Vec<f64>],
    label_end: &'a [f64],
    rates: &'a [Vec<f64>],
    rate_clamped: &'a [bool],
    #[serde(skip_serializing_if = "Option::is_none")]
    branches: Option<Vec<Vec<Vec<f64>>>>,
}

/// JSON export: branch choice, rate curves and label anchors, and optionally the trajectories.
pub fn extended_to_json(
    ext: &ExtendedClusterPath,
    labels: &LabelPath,
    include_branches: bool,
) -> serde_json::Value {
    let branches = include_branches.then(|| {
        ext.branches
            .iter()
            .map(|b| b.rows().into_iter().map(|r| r.to_vec()).collect())
            .collect()
    });
    serde_json::to_value(ExtendedJson {
        lambda_star: ext.lambda_star,
        index_sets: &ext.index_sets,
        grid: ext.grid.values(),
        orientation: labels.orientation,
        label_start: &ext.label_start,
        label_end: &ext.label_end,
        rates: &labels.rates,
        rate_clamped: &labels.clamped,
        branches,
    })
    .expect("serializable")
}

/// CSV with columns `lambda,branch,g_cp,cluster_count`, one row per branch and grid point.
pub fn rates_csv(path: &ClusterPath, labels: &LabelPath) -> String {
    let mut out = String::from("lambda,branch,g_cp,cluster_count\n");
    for (m, &lambda) in path.grid.values().iter().enumerate() {
        for (k, g) in labels.rates.iter().enumerate() {
            out.push_str(&format!(
                "{lambda},{k},{},{}\n",
                g[m], path.cluster_counts[m]
            ));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn grid3() -> LambdaGrid {
        LambdaGrid::new(vec![0.0, 0.5, 1.0]).unwrap()
    }

    #[test]
    fn linear_branch_rate() {
        // u(l) = 2 + 2l  =>  g(l) = (l^2 + 2l) / 3.
        let b = array![[2.0], [3.0], [4.0]];
        let (g, clamped) = compute_rate(&b, &grid3());
        assert_eq!(g[0], 0.0);
        assert_eq!(g[2], 1.0);
        assert!((g[1] - 5.0 / 12.0).abs() < 1e-12);
        assert!(!clamped);
    }

    #[test]
    fn stationary_branch_rate_is_lambda() {
        let b = array![[0.7, 0.1], [0.7, 0.1], [0.7, 0.1]];
        let (g, _) = compute_rate(&b, &grid3());
        assert_eq!(g, vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn non_monotone_norm_is_clamped() {
        let b = array![[1.0], [3.0], [2.0]];
        let (g, clamped) = compute_rate(&b, &grid3());
        assert_eq!(g, vec![0.0, 1.0, 1.0]);
        assert!(clamped);
    }

    #[test]
    fn label_mixing() {
        assert_eq!(label_at(&[1.0, 0.0], &[0.5, 0.5], 1.0), vec![1.0, 0.0]);
        assert_eq!(label_at(&[1.0, 0.0], &[0.5, 0.5], 0.0), vec![0.5, 0.5]);
        assert_eq!(label_at(&[1.0, 0.0], &[0.5, 0.5], 0.5), vec![0.75, 0.25]);
    }

    #[test]
    fn orientation_names() {
        for o in [
            LabelOrientation::Paper,
            LabelOrientation::EndpointConsistent,
        ] {
            assert_eq!(o.to_string().parse::<LabelOrientation>().unwrap(), o);
        }
        assert!("sideways".parse::<LabelOrientation>().is_err());
    }

    #[test]
    fn locate_on_grid() {
        let g = [0.0, 0.5, 1.0];
        assert_eq!(locate(&g, 0.0), (0, 0.0));
        assert_eq!(locate(&g, 0.25), (0, 0.5));
        assert_eq!(locate(&g, 0.5), (1, 0.0));
        assert_eq!(locate(&g, 1.0), (2, 0.0));
    }

    #[test]
    fn bisect_separates_two_clumps() {
        let pts = array![[0.0], [0.1], [5.0], [5.2], [0.05]];
        let (a, b) = bisect(&[0, 1, 2, 3, 4], &pts).unwrap();
        let mut sides = [a, b];
        sides.sort();
        assert_eq!(sides, [vec![0, 1, 4], vec![2, 3]]);
        assert!(bisect(&[0, 1], &array![[1.0], [1.0]]).is_none());
    }
}
