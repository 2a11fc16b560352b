//! Data and label mixup functions and generation of new soft-labeled graphs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph_io::{one_hot, Dataset, SoftLabeledGraph};
use crate::graphon::{sample_graph, Graphon};
use crate::mixpath::{label_at, ExtendedClusterPath, LabelOrientation, LabelPath};

/// How the descriptor of a new graph is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum DataFn {
    /// A point on a collapsed clusterpath branch.
    Clusterpath,
    /// A convex combination of two class graphons.
    Linear,
}

/// How the soft label of a new graph is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum LabelFn {
    Linear,
    Sigmoid,
    Logit,
    Clusterpath,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "value")]
pub enum LambdaSource {
    Uniform,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixupSpec {
    pub data_fn: DataFn,
    pub label_fn: LabelFn,
    /// Sharpness of the sigmoid and logit label weights.
    pub a: f64,
    pub lambda_source: LambdaSource,
    pub orientation: LabelOrientation,
}

impl Default for MixupSpec {
    fn default() -> Self {
        MixupSpec {
            data_fn: DataFn::Clusterpath,
            label_fn: LabelFn::Clusterpath,
            a: 5.0,
            lambda_source: LambdaSource::Uniform,
            orientation: LabelOrientation::default(),
        }
    }
}

impl MixupSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0 && self.a.is_finite()) {
            return Err(Error::Config(format!(
                "sharpness a must be positive, got {}",
                self.a
            )));
        }
        if let LambdaSource::Fixed(l) = self.lambda_source {
            if !(0.0..=1.0).contains(&l) {
                return Err(Error::Config(format!("fixed lambda {l} is outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn needs_clusterpath(&self) -> bool {
        self.data_fn == DataFn::Clusterpath || self.label_fn == LabelFn::Clusterpath
    }

    /// Weight on the first label for the linear, sigmoid and logit functions.
    fn weight(&self, lambda: f64) -> f64 {
        match self.label_fn {
            LabelFn::Sigmoid => sigmoid_weight(lambda, self.a),
            LabelFn::Logit => logit_weight(lambda, self.a),
            LabelFn::Linear | LabelFn::Clusterpath => lambda,
        }
    }
}

/// One averaged graphon per class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassGraphonSet {
    pub graphons: Vec<Graphon>,
}

impl ClassGraphonSet {
    /// Averages per-graph estimates within each class.
    pub fn from_estimates(
        estimates: &[Graphon],
        classes: &[usize],
        class_count: usize,
    ) -> Result<Self> {
        if estimates.len() != classes.len() {
            return Err(Error::Shape(format!(
                "{} estimates for {} labels",
                estimates.len(),
                classes.len()
            )));
        }
        let d = estimates.first().map_or(0, Graphon::resolution);
        let mut sums = vec![vec![0.0; d * d]; class_count];
        let mut counts = vec![0usize; class_count];
        for (g, &k) in estimates.iter().zip(classes) {
            if g.resolution() != d {
                return Err(Error::Shape("estimates have mixed resolutions".into()));
            }
            for (s, v) in sums[k].iter_mut().zip(g.as_slice()) {
                *s += v;
            }
            counts[k] += 1;
        }
        let graphons = sums
            .into_iter()
            .zip(&counts)
            .enumerate()
            .map(|(k, (sum, &n))| {
                if n == 0 {
                    return Err(Error::Config(format!("class {k} has no graphs")));
                }
                Graphon::new(
                    d,
                    sum.into_iter().map(|s| (s / n as f64).min(1.0)).collect(),
                )
            })
            .collect::<Result<_>>()?;
        Ok(ClassGraphonSet { graphons })
    }

    pub fn len(&self) -> usize {
        self.graphons.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphons.is_empty()
    }
}

pub fn estimate_class_graphons(dataset: &Dataset, resolution: usize) -> Result<ClassGraphonSet> {
    let graphs: Vec<_> = dataset.graphs().iter().map(|g| &g.graph).collect();
    let estimates = crate::graphon::estimate_all(graphs, resolution)?;
    ClassGraphonSet::from_estimates(&estimates, &dataset.classes(), dataset.class_count())
}

/// `lambda * W_k + (1 - lambda) * W_k'`.
pub fn linear_graphon_mix(
    set: &ClassGraphonSet,
    k: usize,
    k_prime: usize,
    lambda: f64,
) -> Result<Graphon> {
    if k == k_prime {
        return Err(Error::Config(format!(
            "linear graphon mixup needs two different classes, got {k} twice"
        )));
    }
    let (a, b) = match (set.graphons.get(k), set.graphons.get(k_prime)) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(Error::Config(format!(
                "class pair ({k}, {k_prime}) out of range"
            )))
        }
    };
    a.mix(b, lambda)
}

fn mix_labels(y_i: &[f64], y_j: &[f64], w: f64) -> Vec<f64> {
    label_at(y_i, y_j, w)
}

pub fn linear_label_mix(y_i: &[f64], y_j: &[f64], lambda: f64) -> Vec<f64> {
    mix_labels(y_i, y_j, lambda)
}

pub fn sigmoid_weight(lambda: f64, a: f64) -> f64 {
    1.0 / (1.0 + (-a * (2.0 * lambda - 1.0)).exp())
}

/// `ln(lambda / (1 - lambda)) / (2a) + 1/2`, clamped to `[0, 1]`.
pub fn logit_weight(lambda: f64, a: f64) -> f64 {
    if lambda <= 0.0 {
        return 0.0;
    }
    if lambda >= 1.0 {
        return 1.0;
    }
    ((lambda / (1.0 - lambda)).ln() / (2.0 * a) + 0.5).clamp(0.0, 1.0)
}

pub fn sigmoid_label_mix(y_i: &[f64], y_j: &[f64], lambda: f64, a: f64) -> Vec<f64> {
    mix_labels(y_i, y_j, sigmoid_weight(lambda, a))
}

pub fn logit_label_mix(y_i: &[f64], y_j: &[f64], lambda: f64, a: f64) -> Vec<f64> {
    mix_labels(y_i, y_j, logit_weight(lambda, a))
}

/// Random choices behind one generated graph.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Draw {
    pub lambda: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub branch: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub classes: Option<(usize, usize)>,
    pub nodes: usize,
}

#[derive(Debug, Clone)]
pub struct Generated {
    pub graphs: Vec<SoftLabeledGraph>,
    pub draws: Vec<Draw>,
}

/// Precomputed structures that the mixup functions read from.
#[derive(Debug, Clone, Copy)]
pub struct MixupInputs<'a> {
    pub dataset: &'a Dataset,
    pub extended: Option<&'a ExtendedClusterPath>,
    pub labels: Option<&'a LabelPath>,
    pub class_graphons: Option<&'a ClassGraphonSet>,
}

// Independent streams of one seed, so that e.g. the lambda draws do not
// depend on which data function consumes the selection stream.
const LAMBDA_STREAM: u64 = 0;
const SELECTION_STREAM: u64 = 1;
const SAMPLING_STREAM: u64 = 2;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Generates `count` new graphs with soft labels.
///
/// Graphs are sampled in parallel from per-graph seeds, so the output does
/// not depend on the thread count.
pub fn generate(
    inputs: MixupInputs<'_>,
    spec: &MixupSpec,
    count: usize,
    seed: u64,
) -> Result<Generated> {
    spec.validate()?;
    let dataset = inputs.dataset;
    let k_count = dataset.class_count();
    let path = match (inputs.extended, inputs.labels) {
        (Some(e), Some(l)) => Some((e, l)),
        _ if spec.needs_clusterpath() => {
            return Err(Error::Config(
                "clusterpath mixup requested without an extended clusterpath".into(),
            ))
        }
        _ => None,
    };
    let class_set = match (spec.data_fn, inputs.class_graphons) {
        (DataFn::Linear, None) => {
            return Err(Error::Config(
                "linear graphon mixup requested without class graphons".into(),
            ))
        }
        (DataFn::Linear, Some(_)) if k_count < 2 => {
            return Err(Error::Config(
                "linear graphon mixup needs at least two classes".into(),
            ))
        }
        (_, set) => set,
    };
    if count == 0 {
        return Ok(Generated {
            graphs: Vec::new(),
            draws: Vec::new(),
        });
    }
    if dataset.is_empty() {
        return Err(Error::Config(
            "cannot draw node counts from an empty dataset".into(),
        ));
    }

    let mut lambda_rng = stream(seed, LAMBDA_STREAM);
    let mut select_rng = stream(seed, SELECTION_STREAM);
    let mut sample_rng = stream(seed, SAMPLING_STREAM);
    let sizes: Vec<usize> = dataset
        .graphs()
        .iter()
        .map(|g| g.graph.node_count())
        .collect();
    let classes = dataset.classes();

    let mut jobs = Vec::with_capacity(count);
    let mut draws = Vec::with_capacity(count);
    for _ in 0..count {
        let lambda = match spec.lambda_source {
            LambdaSource::Uniform => lambda_rng.gen::<f64>(),
            LambdaSource::Fixed(l) => l,
        };
        let nodes = sizes[sample_rng.gen_range(0..sizes.len())];
        let graph_seed: u64 = sample_rng.gen();
        let (graphon, label, draw) = match spec.data_fn {
            DataFn::Clusterpath => {
                let (ext, lp) = path.expect("checked above");
                let k = select_rng.gen_range(0..ext.branch_count());
                let graphon = Graphon::devectorize(&ext.point_at(k, lambda).to_vec())?;
                let label = match spec.label_fn {
                    LabelFn::Clusterpath => lp.label(ext, k, lambda),
                    _ => label_at(
                        &ext.label_start[k],
                        &ext.label_end,
                        spec.orientation.start_weight(spec.weight(lambda)),
                    ),
                };
                let draw = Draw {
                    lambda,
                    branch: Some(k),
                    classes: None,
                    nodes,
                };
                (graphon, label, draw)
            }
            DataFn::Linear => {
                let set = class_set.expect("checked above");
                let k = select_rng.gen_range(0..k_count);
                let k_prime = (k + select_rng.gen_range(1..k_count)) % k_count;
                let graphon = linear_graphon_mix(set, k, k_prime, lambda)?;
                let label = match spec.label_fn {
                    LabelFn::Clusterpath => {
                        let (ext, lp) = path.expect("checked above");
                        // The graph is pure class k at lambda = 1, where the
                        // branch label sits at its own composition.
                        lp.label(ext, ext.majority_branch(&classes, k), 1.0 - lambda)
                    }
                    _ => mix_labels(
                        &one_hot(k, k_count),
                        &one_hot(k_prime, k_count),
                        spec.weight(lambda),
                    ),
                };
                let draw = Draw {
                    lambda,
                    branch: None,
                    classes: Some((k, k_prime)),
                    nodes,
                };
                (graphon, label, draw)
            }
        };
        jobs.push((graphon, label, graph_seed));
        draws.push(draw);
    }

    let graphs = jobs
        .into_par_iter()
        .zip(draws.par_iter())
        .map(|((graphon, label, graph_seed), draw)| {
            let mut rng = ChaCha8Rng::seed_from_u64(graph_seed);
            SoftLabeledGraph::new(sample_graph(&graphon, draw.nodes, &mut rng), label)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Generated { graphs, draws })
}
