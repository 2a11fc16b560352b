//! Labeled graph types and TUDataset-format reading and writing.
//!
//! A TUDataset directory `<root>/<name>/` holds at least
//!
//! * `<name>_A.txt`: one edge per line, `i, j`, 1-indexed global node ids,
//! * `<name>_graph_indicator.txt`: line `n` holds the 1-indexed graph id of node `n`,
//! * `<name>_graph_labels.txt`: line `g` holds the raw integer label of graph `g`.
//!
//! Augmented datasets additionally carry `<name>_graph_soft_labels.txt`
//! (one probability vector per graph) and `manifest.json`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};

/// Tolerance on the unit sum of a soft label.
pub const SOFT_LABEL_SUM_TOL: f64 = 1e-9;

/// Undirected simple graph on `0..node_count`.
///
/// Edges are stored once as `(i, j)` with `i < j`, sorted.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Graph {
    node_count: usize,
    edges: Vec<(usize, usize)>,
}

impl Graph {
    /// Builds a simple graph, collapsing duplicate and reversed pairs.
    ///
    /// Returns the graph and the number of self-loop pairs that were dropped.
    pub fn from_pairs(
        node_count: usize,
        pairs: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<(Self, usize)> {
        let mut set = BTreeSet::new();
        let mut loops = 0;
        for (a, b) in pairs {
            if a >= node_count || b >= node_count {
                return Err(Error::Shape(format!(
                    "edge ({a}, {b}) references a node outside 0..{node_count}"
                )));
            }
            if a == b {
                loops += 1;
                continue;
            }
            set.insert((a.min(b), a.max(b)));
        }
        Ok((
            Graph {
                node_count,
                edges: set.into_iter().collect(),
            },
            loops,
        ))
    }

    /// Builds a graph from edges already known to be simple, `i < j` and sorted.
    pub(crate) fn from_sorted_unchecked(node_count: usize, edges: Vec<(usize, usize)>) -> Self {
        debug_assert!(edges.windows(2).all(|w| w[0] < w[1]));
        debug_assert!(edges.iter().all(|&(i, j)| i < j && j < node_count));
        Graph { node_count, edges }
    }

    pub fn empty(node_count: usize) -> Self {
        Graph {
            node_count,
            edges: Vec::new(),
        }
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.node_count];
        for &(i, j) in &self.edges {
            deg[i] += 1;
            deg[j] += 1;
        }
        deg
    }

    /// Relabels nodes: node `v` becomes `perm[v]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.node_count {
            return Err(Error::Shape(format!(
                "permutation of length {} for {} nodes",
                perm.len(),
                self.node_count
            )));
        }
        let (g, _) = Graph::from_pairs(
            self.node_count,
            self.edges.iter().map(|&(i, j)| (perm[i], perm[j])),
        )?;
        Ok(g)
    }
}

/// A graph with a hard class label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledGraph {
    pub graph: Graph,
    class: usize,
    class_count: usize,
}

impl LabeledGraph {
    pub fn new(graph: Graph, class: usize, class_count: usize) -> Result<Self> {
        if class >= class_count {
            return Err(Error::Config(format!(
                "class {class} out of range for {class_count} classes"
            )));
        }
        Ok(LabeledGraph {
            graph,
            class,
            class_count,
        })
    }

    pub fn class(&self) -> usize {
        self.class
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    /// One-hot label vector.
    pub fn label(&self) -> Vec<f64> {
        one_hot(self.class, self.class_count)
    }
}

pub fn one_hot(class: usize, class_count: usize) -> Vec<f64> {
    let mut v = vec![0.0; class_count];
    v[class] = 1.0;
    v
}

/// A generated graph with a probability vector as label.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftLabeledGraph {
    pub graph: Graph,
    pub soft_label: Vec<f64>,
}

impl SoftLabeledGraph {
    pub fn new(graph: Graph, soft_label: Vec<f64>) -> Result<Self> {
        check_probability_vector(&soft_label, SOFT_LABEL_SUM_TOL)?;
        Ok(SoftLabeledGraph { graph, soft_label })
    }

    /// Class with the largest soft-label mass; ties go to the lower index.
    pub fn majority_class(&self) -> usize {
        argmax(&self.soft_label)
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub fn check_probability_vector(v: &[f64], sum_tol: f64) -> Result<()> {
    if v.is_empty() {
        return Err(Error::Validity("empty probability vector".into()));
    }
    if let Some(x) = v.iter().find(|x| !(0.0..=1.0).contains(*x)) {
        return Err(Error::Validity(format!(
            "soft label entry {x} outside [0, 1]"
        )));
    }
    let s: f64 = v.iter().sum();
    if (s - 1.0).abs() > sum_tol {
        return Err(Error::Validity(format!("soft label sums to {s}, not 1")));
    }
    Ok(())
}

/// An ordered collection of labeled graphs over `class_count` classes.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    graphs: Vec<LabeledGraph>,
    class_count: usize,
    /// Raw on-disk label of each class index, sorted ascending.
    raw_labels: Vec<i64>,
    /// Self-loop entries dropped while loading.
    pub self_loops_dropped: usize,
}

impl Dataset {
    /// Validates that every label has length `class_count` and that every class occurs.
    pub fn new(
        name: impl Into<String>,
        graphs: Vec<LabeledGraph>,
        class_count: usize,
        raw_labels: Vec<i64>,
    ) -> Result<Self> {
        if class_count == 0 {
            return Err(Error::Config("a dataset needs at least one class".into()));
        }
        if raw_labels.len() != class_count {
            return Err(Error::Config(format!(
                "{} raw labels for {class_count} classes",
                raw_labels.len()
            )));
        }
        if raw_labels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(
                "raw labels must be strictly increasing".into(),
            ));
        }
        let mut seen = vec![false; class_count];
        for g in &graphs {
            if g.class_count != class_count {
                return Err(Error::Config(format!(
                    "graph label has {} classes, dataset has {class_count}",
                    g.class_count
                )));
            }
            seen[g.class] = true;
        }
        if let Some(k) = seen.iter().position(|s| !s) {
            return Err(Error::Config(format!("class {k} has no graphs")));
        }
        Ok(Dataset {
            name: name.into(),
            graphs,
            class_count,
            raw_labels,
            self_loops_dropped: 0,
        })
    }

    /// Dataset whose raw labels are the class indices themselves.
    pub fn with_index_labels(
        name: impl Into<String>,
        graphs: Vec<LabeledGraph>,
        class_count: usize,
    ) -> Result<Self> {
        Dataset::new(name, graphs, class_count, (0..class_count as i64).collect())
    }

    pub fn graphs(&self) -> &[LabeledGraph] {
        &self.graphs
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn raw_labels(&self) -> &[i64] {
        &self.raw_labels
    }

    pub fn labels(&self) -> Vec<Vec<f64>> {
        self.graphs.iter().map(LabeledGraph::label).collect()
    }

    pub fn classes(&self) -> Vec<usize> {
        self.graphs.iter().map(LabeledGraph::class).collect()
    }

    /// Number of graphs per class.
    pub fn class_sizes(&self) -> Vec<usize> {
        let mut n = vec![0; self.class_count];
        for g in &self.graphs {
            n[g.class] += 1;
        }
        n
    }

    /// Fraction of graphs in each class.
    pub fn class_proportions(&self) -> Vec<f64> {
        let t = self.graphs.len() as f64;
        self.class_sizes()
            .into_iter()
            .map(|n| n as f64 / t)
            .collect()
    }
}

fn tu_file(dir: &Path, name: &str, suffix: &str) -> PathBuf {
    dir.join(format!("{name}_{suffix}.txt"))
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Load {
        path: path.to_path_buf(),
        source,
    })
}

fn file_label(path: &Path) -> String {
    path.file_name()
        .map(|f| f.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// Non-blank lines with their 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
}

fn parse_int<T: std::str::FromStr>(field: &str, file: &str, line: usize) -> Result<T> {
    field.trim().parse().map_err(|_| {
        Error::format(
            file,
            format!("line {line}: cannot parse {field:?} as an integer"),
        )
    })
}

/// Loads `<data_dir>/<name>/` in TUDataset format.
///
/// Raw class labels are remapped to `0..K` in ascending order. Reversed and
/// repeated edge entries collapse to one undirected edge; self-loops are
/// dropped and counted in [`Dataset::self_loops_dropped`].
pub fn load_tudataset(data_dir: &Path, name: &str) -> Result<Dataset> {
    let dir = data_dir.join(name);
    let a_path = tu_file(&dir, name, "A");
    let ind_path = tu_file(&dir, name, "graph_indicator");
    let lab_path = tu_file(&dir, name, "graph_labels");
    let a_text = read_file(&a_path)?;
    let ind_text = read_file(&ind_path)?;
    let lab_text = read_file(&lab_path)?;
    let (a_file, ind_file, lab_file) = (
        file_label(&a_path),
        file_label(&ind_path),
        file_label(&lab_path),
    );

    let raw: Vec<i64> = content_lines(&lab_text)
        .map(|(n, l)| parse_int(l, &lab_file, n))
        .collect::<Result<_>>()?;
    if raw.is_empty() {
        return Err(Error::format(&lab_file, "no graphs"));
    }
    let graph_count = raw.len();

    // Node n (0-based) -> graph g (0-based), and its index within that graph.
    let mut node_graph = Vec::new();
    let mut node_local = Vec::new();
    let mut sizes = vec![0usize; graph_count];
    for (n, l) in content_lines(&ind_text) {
        let g: usize = parse_int(l, &ind_file, n)?;
        if g == 0 || g > graph_count {
            return Err(Error::format(
                &ind_file,
                format!("line {n}: graph id {g} outside 1..={graph_count}"),
            ));
        }
        node_graph.push(g - 1);
        node_local.push(sizes[g - 1]);
        sizes[g - 1] += 1;
    }
    if let Some(g) = sizes.iter().position(|&s| s == 0) {
        return Err(Error::format(
            &ind_file,
            format!("graph {} has no nodes", g + 1),
        ));
    }

    let mut pairs: Vec<Vec<(usize, usize)>> = vec![Vec::new(); graph_count];
    for (n, l) in content_lines(&a_text) {
        let mut it = l.split(',');
        let (Some(a), Some(b), None) = (it.next(), it.next(), it.next()) else {
            return Err(Error::format(
                &a_file,
                format!("line {n}: expected \"i, j\""),
            ));
        };
        let a: usize = parse_int(a, &a_file, n)?;
        let b: usize = parse_int(b, &a_file, n)?;
        for v in [a, b] {
            if v == 0 || v > node_graph.len() {
                return Err(Error::format(
                    &a_file,
                    format!("line {n}: node {v} is not listed in the graph indicator"),
                ));
            }
        }
        let (ga, gb) = (node_graph[a - 1], node_graph[b - 1]);
        if ga != gb {
            return Err(Error::format(
                &a_file,
                format!("line {n}: edge joins graphs {} and {}", ga + 1, gb + 1),
            ));
        }
        pairs[ga].push((node_local[a - 1], node_local[b - 1]));
    }

    let distinct: BTreeSet<i64> = raw.iter().copied().collect();
    let raw_labels: Vec<i64> = distinct.into_iter().collect();
    let class_of: BTreeMap<i64, usize> = raw_labels
        .iter()
        .enumerate()
        .map(|(k, &r)| (r, k))
        .collect();
    let k = raw_labels.len();

    let mut loops = 0;
    let mut graphs = Vec::with_capacity(graph_count);
    for (g, p) in pairs.into_iter().enumerate() {
        let (graph, dropped) = Graph::from_pairs(sizes[g], p)?;
        loops += dropped;
        graphs.push(LabeledGraph::new(graph, class_of[&raw[g]], k)?);
    }
    if loops > 0 {
        log::warn!("{name}: dropped {loops} self-loop entries");
    }
    let mut ds = Dataset::new(name, graphs, k, raw_labels)?;
    ds.self_loops_dropped = loops;
    Ok(ds)
}

/// Reads `<data_dir>/<name>/<name>_graph_soft_labels.txt`.
pub fn load_soft_labels(data_dir: &Path, name: &str) -> Result<Vec<Vec<f64>>> {
    let path = tu_file(&data_dir.join(name), name, "graph_soft_labels");
    let text = read_file(&path)?;
    let file = file_label(&path);
    let mut out = Vec::new();
    let mut width = None;
    for (n, l) in content_lines(&text) {
        let row: Vec<f64> = l
            .split(',')
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::format(&file, format!("line {n}: cannot parse {f:?}")))
            })
            .collect::<Result<_>>()?;
        if *width.get_or_insert(row.len()) != row.len() {
            return Err(Error::format(&file, format!("line {n}: ragged row")));
        }
        // Each entry carries up to half a unit in the ninth significant digit.
        check_probability_vector(&row, row.len() as f64 * 1e-9)
            .map_err(|e| Error::format(&file, format!("line {n}: {e}")))?;
        out.push(row);
    }
    Ok(out)
}

/// Formats `x` as a plain decimal rounded to 9 significant digits.
pub fn format_sig9(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return if x == 0.0 { "0".into() } else { x.to_string() };
    }
    let sci = format!("{x:.8e}");
    let (_, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("exponent");
    let rounded: f64 = sci.parse().expect("round trip");
    let decimals = (8 - exp).max(0) as usize;
    let mut s = format!("{rounded:.decimals$}");
    if s.contains('.') {
        while s.ends_with('0') {
            s.pop();
        }
        if s.ends_with('.') {
            s.pop();
        }
    }
    if s == "-0" {
        s = "0".into();
    }
    s
}

#[derive(Serialize)]
struct Manifest<'a, M: Serialize> {
    toolkit: &'static str,
    version: &'static str,
    name: &'a str,
    class_count: usize,
    raw_labels: &'a [i64],
    original_graphs: usize,
    new_graphs: usize,
    total_graphs: usize,
    run: &'a M,
}

/// Writes the union of `originals` and `new_graphs` to `<out_dir>/<name>/`.
///
/// Originals come first and keep one-hot soft labels. New graphs are written
/// with the raw label of their majority class in `graph_labels.txt`; their
/// full probability vectors go to the soft-label sidecar. `run` is echoed
/// under the `run` key of `manifest.json`.
pub fn write_augmented_dataset<M: Serialize>(
    out_dir: &Path,
    name: &str,
    originals: &Dataset,
    new_graphs: &[SoftLabeledGraph],
    run: &M,
) -> Result<PathBuf> {
    let k = originals.class_count();
    if let Some(g) = new_graphs.iter().find(|g| g.soft_label.len() != k) {
        return Err(Error::Shape(format!(
            "soft label of length {} for {k} classes",
            g.soft_label.len()
        )));
    }
    let dir = out_dir.join(name);
    fs::create_dir_all(&dir).map_err(|source| Error::Write {
        path: dir.clone(),
        source,
    })?;

    let rows = originals
        .graphs()
        .iter()
        .map(|g| (&g.graph, g.class(), g.label()))
        .chain(
            new_graphs
                .iter()
                .map(|g| (&g.graph, g.majority_class(), g.soft_label.clone())),
        );

    let mut a = String::new();
    let mut ind = String::new();
    let mut lab = String::new();
    let mut soft = String::new();
    let mut offset = 0usize;
    for (gi, (graph, class, label)) in rows.enumerate() {
        for _ in 0..graph.node_count() {
            writeln!(ind, "{}", gi + 1).unwrap();
        }
        for &(i, j) in graph.edges() {
            let (u, v) = (offset + i + 1, offset + j + 1);
            writeln!(a, "{u}, {v}").unwrap();
            writeln!(a, "{v}, {u}").unwrap();
        }
        writeln!(lab, "{}", originals.raw_labels()[class]).unwrap();
        let fields: Vec<String> = label.iter().map(|&x| format_sig9(x)).collect();
        writeln!(soft, "{}", fields.join(",")).unwrap();
        offset += graph.node_count();
    }

    let manifest = Manifest {
        toolkit: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        name,
        class_count: k,
        raw_labels: originals.raw_labels(),
        original_graphs: originals.len(),
        new_graphs: new_graphs.len(),
        total_graphs: originals.len() + new_graphs.len(),
        run,
    };
    let mut manifest_text = serde_json::to_string_pretty(&manifest)?;
    manifest_text.push('\n');

    for (path, body) in [
        (tu_file(&dir, name, "A"), a),
        (tu_file(&dir, name, "graph_indicator"), ind),
        (tu_file(&dir, name, "graph_labels"), lab),
        (tu_file(&dir, name, "graph_soft_labels"), soft),
        (dir.join("manifest.json"), manifest_text),
    ] {
        write_file(&path, body.as_bytes())?;
    }
    Ok(dir)
}

pub(crate) fn write_file(path: &Path, body: &[u8]) -> Result<()> {
    fs::write(path, body).map_err(|source| Error::Write {
        path: path.to_path_buf(),
        source,
    })
}
