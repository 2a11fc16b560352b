mod common;

use common::{density_dataset, sbm_dataset};
use graphmad::cvxclust::{
    build_weights, trace_clusterpath, ClusterPath, ClusterProblem, FusionWeights, LambdaGrid,
    SolverOptions,
};
use graphmad::graph_io::{one_hot, Dataset};
use graphmad::graphon::{estimate_all, Graphon};
use graphmad::mixpath::{
    collapse_branches, compute_rate, select_branch_lambda, BranchSelection, ExtendedClusterPath,
    LabelOrientation, LabelPath,
};
use graphmad::mixup::{
    estimate_class_graphons, generate, ClassGraphonSet, DataFn, LabelFn, LambdaSource, MixupInputs,
    MixupSpec,
};
use graphmad::Error;
use ndarray::{array, Array2, Axis};

fn trace(x: &Array2<f64>, w: &FusionWeights, grid: &LambdaGrid) -> ClusterPath {
    trace_clusterpath(x, w, grid, &SolverOptions::default(), 1e-4).unwrap()
}

fn select(
    x: &Array2<f64>,
    w: &FusionWeights,
    path: &ClusterPath,
    k: usize,
) -> graphmad::Result<BranchSelection> {
    let problem = ClusterProblem {
        descriptors: x,
        weights: w,
        options: SolverOptions::default(),
        delta_fuse: 1e-4,
    };
    select_branch_lambda(path, &problem, k)
}

#[test]
fn three_point_branch_selection() {
    let x = array![[0.0], [1.0], [5.0]];
    let w = FusionWeights::from_classes(&[0, 0, 0], 0.5).unwrap();
    let grid = LambdaGrid::uniform(101).unwrap();
    let path = trace(&x, &w, &grid);

    let two = select(&x, &w, &path, 2).unwrap();
    assert_eq!(two.index_sets, vec![vec![0, 1], vec![2]]);
    assert!(two.lambda_star > 0.0 && !two.split);

    let three = select(&x, &w, &path, 3).unwrap();
    assert_eq!(three.lambda_star, 0.0);
    assert_eq!(three.index_sets, vec![vec![0], vec![1], vec![2]]);

    let one = select(&x, &w, &path, 1).unwrap();
    let first_fused = path.cluster_counts.iter().position(|&c| c == 1).unwrap();
    assert_eq!(one.lambda_star, grid.values()[first_fused]);
    assert_eq!(one.index_sets, vec![vec![0, 1, 2]]);

    assert!(matches!(select(&x, &w, &path, 4), Err(Error::Config(_))));
}

#[test]
fn coarse_grid_is_refined_by_bisection() {
    let x = array![[0.0], [1.0], [5.0]];
    let w = FusionWeights::from_classes(&[0, 0, 0], 0.5).unwrap();
    let grid = LambdaGrid::new(vec![0.0, 0.9, 1.0]).unwrap();
    let path = trace(&x, &w, &grid);
    assert_eq!(path.cluster_counts, vec![3, 1, 1]);
    let sel = select(&x, &w, &path, 2).unwrap();
    assert!(sel.refined && !sel.split);
    assert!(sel.lambda_star > 0.0 && sel.lambda_star < 0.9);
    assert_eq!(sel.index_sets, vec![vec![0, 1], vec![2]]);
}

#[test]
fn duplicate_descriptors_are_split() {
    let x = array![[0.0], [0.0], [1.0]];
    let w = FusionWeights::from_classes(&[0, 1, 2], 0.5).unwrap();
    let path = trace(&x, &w, &LambdaGrid::uniform(11).unwrap());
    assert_eq!(path.cluster_counts[0], 2);
    let sel = select(&x, &w, &path, 3).unwrap();
    assert!(sel.split);
    assert_eq!(sel.index_sets, vec![vec![0], vec![1], vec![2]]);
}

#[test]
fn simultaneous_fusions_fall_back_to_a_partition() {
    // Two mirror-image pairs fuse at the same level, so the count may skip 3.
    let x = array![[0.0], [1.0], [10.0], [11.0]];
    let w = FusionWeights::from_classes(&[0, 0, 0, 0], 0.5).unwrap();
    let path = trace(&x, &w, &LambdaGrid::uniform(101).unwrap());
    let sel = select(&x, &w, &path, 3).unwrap();
    assert_eq!(sel.index_sets.len(), 3);
    let mut all: Vec<usize> = sel.index_sets.concat();
    all.sort();
    assert_eq!(all, vec![0, 1, 2, 3]);
}

fn toy_branches() -> (ClusterPath, ExtendedClusterPath, Vec<usize>) {
    let x = array![
        [0.1, 0.2],
        [0.15, 0.1],
        [0.9, 0.8],
        [0.5, 0.5],
        [0.85, 0.95]
    ];
    let classes = vec![0, 0, 1, 0, 1];
    let w = FusionWeights::from_classes(&classes, 0.01).unwrap();
    let path = trace(&x, &w, &LambdaGrid::uniform(51).unwrap());
    let sel = select(&x, &w, &path, 2).unwrap();
    let ext = collapse_branches(&path, &sel, &classes, 2).unwrap();
    (path, ext, classes)
}

#[test]
fn collapse_conserves_mass() {
    let (path, ext, _) = toy_branches();
    for (m, c) in path.centroids.iter().enumerate() {
        let total = c.sum_axis(Axis(0));
        let mut from_branches = ndarray::Array1::<f64>::zeros(total.len());
        for (b, set) in ext.branches.iter().zip(&ext.index_sets) {
            from_branches = from_branches + &b.row(m) * set.len() as f64;
        }
        assert!((&total - &from_branches).iter().all(|d| d.abs() < 1e-12));
    }
}

#[test]
fn branches_meet_at_the_grand_mean() {
    let (path, ext, _) = toy_branches();
    let last = path.grid.len() - 1;
    let mean = path.centroids[0].mean_axis(Axis(0)).unwrap();
    for b in &ext.branches {
        assert!((&b.row(last) - &mean).iter().all(|d| d.abs() < 1e-12));
    }
    let labels = LabelPath::new(&ext, LabelOrientation::EndpointConsistent);
    for k in 0..ext.branch_count() {
        assert_eq!(labels.labels[k][last], ext.label_end);
        assert_eq!(labels.labels[k][0], ext.label_start[k]);
    }
}

#[test]
fn anchors_count_classes() {
    let x = array![[0.0], [0.1], [0.2], [5.0]];
    let classes = [0, 0, 1, 1];
    let w = FusionWeights::from_classes(&classes, 0.01).unwrap();
    let path = trace(&x, &w, &LambdaGrid::uniform(11).unwrap());
    let sel = BranchSelection {
        lambda_star: 0.0,
        index_sets: vec![vec![0, 1, 2], vec![3]],
        refined: false,
        split: false,
    };
    let ext = collapse_branches(&path, &sel, &classes, 2).unwrap();
    assert!((ext.label_start[0][0] - 2.0 / 3.0).abs() < 1e-15);
    assert!((ext.label_start[0][1] - 1.0 / 3.0).abs() < 1e-15);
    assert_eq!(ext.label_start[1], vec![0.0, 1.0]);
    assert_eq!(ext.label_end, vec![0.5, 0.5]);
    // A singleton branch follows its own sample.
    for (m, c) in path.centroids.iter().enumerate() {
        assert_eq!(ext.branches[1].row(m), c.row(3));
    }

    let bad = |sets: Vec<Vec<usize>>| {
        let sel = BranchSelection {
            index_sets: sets,
            ..sel.clone()
        };
        collapse_branches(&path, &sel, &classes, 2)
    };
    assert!(matches!(
        bad(vec![vec![0, 1, 2, 3], vec![]]),
        Err(Error::Partition(_))
    ));
    assert!(matches!(
        bad(vec![vec![0, 1, 2], vec![2, 3]]),
        Err(Error::Partition(_))
    ));
    assert!(matches!(bad(vec![vec![0, 1]]), Err(Error::Partition(_))));
}

#[test]
fn labels_stay_on_the_simplex() {
    let (_, ext, _) = toy_branches();
    for orientation in [
        LabelOrientation::Paper,
        LabelOrientation::EndpointConsistent,
    ] {
        let lp = LabelPath::new(&ext, orientation);
        for branch in &lp.labels {
            for y in branch {
                assert!(y.iter().all(|&v| (0.0..=1.0).contains(&v)));
                assert!((y.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn rate_ignores_coordinate_order() {
    let (_, ext, _) = toy_branches();
    let b = &ext.branches[0];
    let swapped = Array2::from_shape_fn(b.dim(), |(m, c)| b[[m, b.ncols() - 1 - c]]);
    assert_eq!(
        compute_rate(b, &ext.grid).0,
        compute_rate(&swapped, &ext.grid).0
    );
}

/// Dataset, extended path and labels for generation tests.
struct Fixture {
    dataset: Dataset,
    ext: ExtendedClusterPath,
    labels: LabelPath,
    classes: ClassGraphonSet,
}

fn fixture(orientation: LabelOrientation) -> Fixture {
    let dataset = sbm_dataset("GEN", &[(0.8, 0.2), (0.3, 0.3)], 6, 20..21, 12);
    let estimates = estimate_all(
        dataset
            .graphs()
            .iter()
            .map(|g| &g.graph)
            .collect::<Vec<_>>(),
        2,
    )
    .unwrap();
    let x = Array2::from_shape_fn((estimates.len(), 4), |(i, c)| estimates[i].as_slice()[c]);
    let w = build_weights(&dataset.labels(), 0.01).unwrap();
    let path = trace(&x, &w, &LambdaGrid::uniform(41).unwrap());
    let sel = select(&x, &w, &path, 2).unwrap();
    let ext = collapse_branches(&path, &sel, &dataset.classes(), 2).unwrap();
    let labels = LabelPath::new(&ext, orientation);
    let classes = ClassGraphonSet::from_estimates(&estimates, &dataset.classes(), 2).unwrap();
    Fixture {
        dataset,
        ext,
        labels,
        classes,
    }
}

impl Fixture {
    fn inputs(&self) -> MixupInputs<'_> {
        MixupInputs {
            dataset: &self.dataset,
            extended: Some(&self.ext),
            labels: Some(&self.labels),
            class_graphons: Some(&self.classes),
        }
    }
}

#[test]
fn clusterpath_endpoint_reproduces_branch_start() {
    let f = fixture(LabelOrientation::EndpointConsistent);
    let spec = MixupSpec {
        lambda_source: LambdaSource::Fixed(0.0),
        ..MixupSpec::default()
    };
    let out = generate(f.inputs(), &spec, 10, 1).unwrap();
    for (g, d) in out.graphs.iter().zip(&out.draws) {
        let k = d.branch.unwrap();
        assert_eq!(g.soft_label, f.ext.label_start[k]);
        assert_eq!(f.ext.point_at(k, 0.0), f.ext.branches[k].row(0));
    }
}

#[test]
fn linear_endpoint_reproduces_class_graphon() {
    let f = fixture(LabelOrientation::EndpointConsistent);
    let spec = MixupSpec {
        data_fn: DataFn::Linear,
        label_fn: LabelFn::Linear,
        lambda_source: LambdaSource::Fixed(1.0),
        ..MixupSpec::default()
    };
    let out = generate(f.inputs(), &spec, 10, 2).unwrap();
    for (g, d) in out.graphs.iter().zip(&out.draws) {
        let (k, k2) = d.classes.unwrap();
        assert_ne!(k, k2);
        assert_eq!(g.soft_label, one_hot(k, 2));
        let mixed = graphmad::mixup::linear_graphon_mix(&f.classes, k, k2, 1.0).unwrap();
        assert_eq!(mixed, f.classes.graphons[k]);
    }
}

#[test]
fn lambda_draws_are_shared_across_functions() {
    let f = fixture(LabelOrientation::EndpointConsistent);
    let mut lambdas = Vec::new();
    for data_fn in [DataFn::Clusterpath, DataFn::Linear] {
        for label_fn in [
            LabelFn::Linear,
            LabelFn::Sigmoid,
            LabelFn::Logit,
            LabelFn::Clusterpath,
        ] {
            let spec = MixupSpec {
                data_fn,
                label_fn,
                ..MixupSpec::default()
            };
            let out = generate(f.inputs(), &spec, 8, 99).unwrap();
            lambdas.push(out.draws.iter().map(|d| d.lambda).collect::<Vec<_>>());
        }
    }
    assert!(lambdas.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn generation_edge_cases() {
    let f = fixture(LabelOrientation::Paper);
    let spec = MixupSpec::default();
    assert!(generate(f.inputs(), &spec, 0, 1).unwrap().graphs.is_empty());
    let bare = MixupInputs {
        extended: None,
        labels: None,
        ..f.inputs()
    };
    assert!(matches!(generate(bare, &spec, 3, 1), Err(Error::Config(_))));
    let linear = MixupSpec {
        data_fn: DataFn::Linear,
        label_fn: LabelFn::Sigmoid,
        ..spec
    };
    assert_eq!(generate(bare, &linear, 3, 1).unwrap().graphs.len(), 3);
}

#[test]
fn generated_edge_counts_match_the_mixed_graphon() {
    // Single-size dataset, so every new graph has 20 nodes.
    let f = fixture(LabelOrientation::EndpointConsistent);
    let lambda = 0.37;
    let spec = MixupSpec {
        lambda_source: LambdaSource::Fixed(lambda),
        ..MixupSpec::default()
    };
    let out = generate(f.inputs(), &spec, 400, 5).unwrap();
    for k in 0..2 {
        let theta = f.ext.point_at(k, lambda);
        let w = Graphon::devectorize(&theta.to_vec()).unwrap();
        // Equal-width latent blocks make the expected density the entry mean.
        let p = w.as_slice().iter().sum::<f64>() / 4.0;
        let edges: Vec<f64> = out
            .graphs
            .iter()
            .zip(&out.draws)
            .filter(|(_, d)| d.branch == Some(k))
            .map(|(g, _)| g.graph.edge_count() as f64)
            .collect();
        assert!(edges.len() > 100);
        let n = edges.len() as f64;
        let mean = edges.iter().sum::<f64>() / n;
        let var = edges.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let se = (var / n).sqrt();
        assert!(
            (mean - 190.0 * p).abs() < 3.0 * se,
            "branch {k}: {mean} vs {}",
            190.0 * p
        );
    }
}

#[test]
fn class_graphons_recover_their_generators() {
    // Core-periphery blocks: the dense block has the larger expected degree,
    // which degree sorting needs to line bins up with blocks.
    let params = [(0.8, 0.3, 0.1), (0.6, 0.3, 0.1)];
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(8);
    let mut graphs = Vec::new();
    for (c, &(a, b, d)) in params.iter().enumerate() {
        let w = Graphon::new(2, vec![a, b, b, d]).unwrap();
        for _ in 0..50 {
            let g = graphmad::graphon::sample_graph(&w, 200, &mut rng);
            graphs.push(graphmad::graph_io::LabeledGraph::new(g, c, 2).unwrap());
        }
    }
    let dataset = Dataset::with_index_labels("CG", graphs, 2).unwrap();
    let set = estimate_class_graphons(&dataset, 2).unwrap();
    for (g, &(a, b, d)) in set.graphons.iter().zip(&params) {
        for (got, want) in g.as_slice().iter().zip([a, b, b, d]) {
            assert!((got - want).abs() < 0.05, "{got} vs {want}");
        }
    }
}

#[test]
fn single_graph_class_is_its_own_estimate() {
    let d = density_dataset("ONE", 6, &[3, 7, 15], &[0, 1, 1], 2);
    let set = estimate_class_graphons(&d, 1).unwrap();
    assert_eq!(set.graphons[0].as_slice(), &[0.2]);
    let want = (7.0 / 15.0 + 1.0) / 2.0;
    assert!((set.graphons[1].as_slice()[0] - want).abs() < 1e-15);
}
