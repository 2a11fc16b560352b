//! One coordinate of the clustering objective:
//!
//! ```text
//! minimize  sum_i (u_i - x_i)^2 + gamma * sum_{i<j} w_ij |u_i - u_j|
//! ```
//!
//! Solved by accelerated projected gradient on the dual (edge multipliers
//! `z_ij` boxed by `gamma * w_ij`, primal `u = x - D^T z / 2`). Every few
//! iterations the iterate is polished: its fused groups and their order are
//! read off, group values are recomputed in closed form, and the candidate is
//! accepted once its exact subgradient residual is within tolerance.

use super::flow::FlowNetwork;
use super::FusionWeights;

pub(crate) struct ColumnProblem<'a> {
    pub theta: &'a [f64],
    pub weights: &'a FusionWeights,
    pub gamma: f64,
    /// Absolute residual tolerance.
    pub tol: f64,
    pub max_iterations: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct ColumnState {
    pub u: Vec<f64>,
    pub dual: Option<Vec<f64>>,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct NotConverged {
    pub residual: f64,
    pub iterations: usize,
}

/// Indices sorted by value, ties by index.
fn argsort(u: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..u.len()).collect();
    order.sort_by(|&a, &b| u[a].total_cmp(&u[b]).then(a.cmp(&b)));
    order
}

/// Maximizes `sum_{i in S} a_i - gamma * sum_{i in S, j in M \ S} w_ij` over
/// subsets `S` of `members` by a minimum cut. Returns the value and `S`.
fn max_closure(a: &[f64], members: &[usize], w: &FusionWeights, gamma: f64) -> (f64, Vec<usize>) {
    let m = members.len();
    let (s, t) = (m, m + 1);
    let scale = a.iter().fold(0.0f64, |acc, x| acc.max(x.abs())) + gamma;
    let mut net = FlowNetwork::new(m + 2, 1e-15 * scale.max(f64::MIN_POSITIVE));
    for (k, &ak) in a.iter().enumerate() {
        if ak > 0.0 {
            net.add_arc(s, k, ak);
        } else if ak < 0.0 {
            net.add_arc(k, t, -ak);
        }
    }
    for x in 0..m {
        for y in x + 1..m {
            net.add_edge(x, y, gamma * w.get(members[x], members[y]));
        }
    }
    net.max_flow(s, t);
    let side = net.source_side(s);
    let set: Vec<usize> = (0..m).filter(|&k| side[k]).collect();
    let mut value: f64 = set.iter().map(|&k| a[k]).sum();
    for &x in &set {
        for y in (0..m).filter(|&y| !side[y]) {
            value -= gamma * w.get(members[x], members[y]);
        }
    }
    (value, set)
}

/// Smallest `tau` such that some antisymmetric within-group selection
/// `|f_ij| <= gamma * w_ij` brings every `|b_i + sum_j f_ij|` to at most `tau`.
///
/// Equals `max(0, max_S (|sum_S b| - cut(S)) / |S|)`, found by Dinkelbach
/// iterations on the ratio.
pub(crate) fn group_residual(b: &[f64], members: &[usize], w: &FusionWeights, gamma: f64) -> f64 {
    let m = members.len();
    let slack = 1e-14 * (1.0 + b.iter().fold(0.0f64, |acc, x| acc.max(x.abs())) * m as f64);
    let mut best = 0.0f64;
    for sign in [1.0, -1.0] {
        // Singleton cuts give a starting lower bound.
        let mut tau = (0..m)
            .map(|x| {
                let cut: f64 = (0..m)
                    .filter(|&y| y != x)
                    .map(|y| gamma * w.get(members[x], members[y]))
                    .sum();
                sign * b[x] - cut
            })
            .fold(0.0f64, f64::max);
        loop {
            let a: Vec<f64> = b.iter().map(|&x| sign * x - tau).collect();
            let (value, set) = max_closure(&a, members, w, gamma);
            if set.is_empty() || value <= slack {
                break;
            }
            let ratio = tau + value / set.len() as f64;
            if ratio <= tau {
                break;
            }
            tau = ratio;
        }
        best = best.max(tau);
    }
    best
}

/// True when [`group_residual`] is at most `tau`, using a single cut per sign.
fn group_residual_within(
    b: &[f64],
    members: &[usize],
    w: &FusionWeights,
    gamma: f64,
    tau: f64,
) -> bool {
    let m = members.len();
    // Singleton cuts are cheap and reject most bad candidates.
    for x in 0..m {
        let cut: f64 = (0..m)
            .filter(|&y| y != x)
            .map(|y| gamma * w.get(members[x], members[y]))
            .sum();
        if b[x].abs() - cut > tau {
            return false;
        }
    }
    let slack = 1e-14 * (1.0 + b.iter().fold(0.0f64, |acc, x| acc.max(x.abs())) * m as f64);
    [1.0, -1.0].into_iter().all(|sign| {
        let a: Vec<f64> = b.iter().map(|&x| sign * x - tau).collect();
        max_closure(&a, members, w, gamma).0 <= slack
    })
}

/// Groups of exactly equal values (ascending) and the stationarity excess
/// `b_i = 2 (u_i - x_i) + gamma * sum_{u_j != u_i} w_ij sign(u_i - u_j)`.
fn groups_and_excess(
    theta: &[f64],
    u: &[f64],
    w: &FusionWeights,
    gamma: f64,
) -> (Vec<Vec<usize>>, Vec<f64>) {
    let order = argsort(u);
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for &i in &order {
        match groups.last_mut() {
            Some(g) if u[g[0]] == u[i] => g.push(i),
            _ => groups.push(vec![i]),
        }
    }
    let n = u.len();
    let b = (0..n)
        .map(|i| {
            let mut push = 0.0;
            for j in 0..n {
                if u[j] < u[i] {
                    push += w.get(i, j);
                } else if u[j] > u[i] {
                    push -= w.get(i, j);
                }
            }
            2.0 * (u[i] - theta[i]) + gamma * push
        })
        .collect();
    (groups, b)
}

/// Exact minimal subgradient residual (max over samples) of `u` for one coordinate.
pub(crate) fn column_residual(theta: &[f64], u: &[f64], w: &FusionWeights, gamma: f64) -> f64 {
    let (groups, b) = groups_and_excess(theta, u, w, gamma);
    groups
        .iter()
        .map(|g| {
            if g.len() == 1 {
                b[g[0]].abs()
            } else {
                let bg: Vec<f64> = g.iter().map(|&i| b[i]).collect();
                group_residual(&bg, g, w, gamma)
            }
        })
        .fold(0.0, f64::max)
}

fn column_residual_within(
    theta: &[f64],
    u: &[f64],
    w: &FusionWeights,
    gamma: f64,
    tau: f64,
) -> bool {
    let (groups, b) = groups_and_excess(theta, u, w, gamma);
    groups.iter().all(|g| {
        if g.len() == 1 {
            b[g[0]].abs() <= tau
        } else {
            let bg: Vec<f64> = g.iter().map(|&i| b[i]).collect();
            group_residual_within(&bg, g, w, gamma, tau)
        }
    })
}

struct Block {
    members: Vec<usize>,
    theta_sum: f64,
    /// `sum_{i in block} sum_{j outside} w_ij sign(block - j)`.
    push: f64,
}

impl Block {
    fn value(&self, gamma: f64) -> f64 {
        (self.theta_sum - 0.5 * gamma * self.push) / self.members.len() as f64
    }
}

/// Closed-form centroids for an ordered partition, merging adjacent groups
/// whose values would cross. The push term of a merged block is the sum of
/// its parts: the mutual contributions cancel.
fn closed_form(p: &ColumnProblem, groups: &[Vec<usize>]) -> Vec<f64> {
    let n = p.theta.len();
    let mut rank = vec![0usize; n];
    for (r, g) in groups.iter().enumerate() {
        for &i in g {
            rank[i] = r;
        }
    }
    let mut stack: Vec<Block> = Vec::with_capacity(groups.len());
    for g in groups {
        let mut push = 0.0;
        for &i in g {
            for j in 0..n {
                if rank[j] < rank[i] {
                    push += p.weights.get(i, j);
                } else if rank[j] > rank[i] {
                    push -= p.weights.get(i, j);
                }
            }
        }
        stack.push(Block {
            members: g.clone(),
            theta_sum: g.iter().map(|&i| p.theta[i]).sum(),
            push,
        });
        while stack.len() >= 2
            && stack[stack.len() - 2].value(p.gamma) >= stack[stack.len() - 1].value(p.gamma)
        {
            let top = stack.pop().unwrap();
            let below = stack.last_mut().unwrap();
            below.members.extend(top.members);
            below.theta_sum += top.theta_sum;
            below.push += top.push;
        }
    }
    let (lo, hi) = p
        .theta
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        });
    let mut u = vec![0.0; n];
    for blk in &stack {
        let v = blk.value(p.gamma).clamp(lo, hi);
        for &i in &blk.members {
            u[i] = v;
        }
    }
    u
}

/// Reads candidate partitions off `hint` at several gap thresholds and
/// returns the first closed-form candidate that passes the residual check.
fn polish(p: &ColumnProblem, hint: &[f64]) -> Option<Vec<f64>> {
    let order = argsort(hint);
    let span = hint[order[order.len() - 1]] - hint[order[0]];
    let scale = if span > 0.0 { span } else { 1.0 };
    let mut last_cuts: Option<Vec<usize>> = None;
    for rel in [0.0, 1e-10, 1e-8, 1e-6, 1e-4, 1e-3] {
        let rho = rel * scale;
        let cuts: Vec<usize> = (1..order.len())
            .filter(|&k| hint[order[k]] - hint[order[k - 1]] > rho)
            .collect();
        if last_cuts.as_ref() == Some(&cuts) {
            continue;
        }
        let mut groups = Vec::with_capacity(cuts.len() + 1);
        let mut start = 0;
        for &c in cuts.iter().chain(std::iter::once(&order.len())) {
            groups.push(order[start..c].to_vec());
            start = c;
        }
        last_cuts = Some(cuts);
        let u = closed_form(p, &groups);
        if column_residual_within(p.theta, &u, p.weights, p.gamma, p.tol) {
            return Some(u);
        }
    }
    None
}

fn edge_count(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

fn primal(theta: &[f64], z: &[f64], out: &mut [f64]) {
    let n = theta.len();
    out.copy_from_slice(theta);
    let mut e = 0;
    for i in 0..n {
        for j in i + 1..n {
            out[i] -= 0.5 * z[e];
            out[j] += 0.5 * z[e];
            e += 1;
        }
    }
}

pub(crate) fn solve_column(
    p: &ColumnProblem,
    warm_u: Option<&[f64]>,
    warm_dual: Option<&[f64]>,
) -> Result<ColumnState, NotConverged> {
    let n = p.theta.len();
    if n <= 1 || p.gamma == 0.0 {
        return Ok(ColumnState {
            u: p.theta.to_vec(),
            dual: None,
            iterations: 0,
        });
    }

    // The previous structure (or the data itself) often survives a small step in gamma.
    if let Some(u) = polish(p, warm_u.unwrap_or(p.theta)) {
        return Ok(ColumnState {
            u,
            dual: None,
            iterations: 0,
        });
    }

    let m = edge_count(n);
    let bound: Vec<f64> = {
        let mut b = Vec::with_capacity(m);
        for i in 0..n {
            for j in i + 1..n {
                b.push(p.gamma * p.weights.get(i, j));
            }
        }
        b
    };
    let mut z: Vec<f64> = match (warm_dual, warm_u) {
        (Some(d), _) if d.len() == m => d
            .iter()
            .zip(&bound)
            .map(|(&x, &c)| x.clamp(-c, c))
            .collect(),
        (_, Some(u)) => {
            let mut z = Vec::with_capacity(m);
            let mut e = 0;
            for i in 0..n {
                for j in i + 1..n {
                    z.push(bound[e] * (u[i] - u[j]).signum() * f64::from(u[i] != u[j]));
                    e += 1;
                }
            }
            z
        }
        _ => vec![0.0; m],
    };

    let step = 2.0 / n as f64;
    let mut y = z.clone();
    let mut z_next = vec![0.0; m];
    let mut u = vec![0.0; n];
    let mut t = 1.0f64;
    for k in 1..=p.max_iterations {
        primal(p.theta, &y, &mut u);
        let mut e = 0;
        for i in 0..n {
            for j in i + 1..n {
                z_next[e] = (y[e] + step * (u[i] - u[j])).clamp(-bound[e], bound[e]);
                e += 1;
            }
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        // Gradient-based adaptive restart.
        let restart: f64 = (0..m)
            .map(|e| (y[e] - z_next[e]) * (z_next[e] - z[e]))
            .sum();
        if restart > 0.0 {
            t = 1.0;
            y.copy_from_slice(&z_next);
        } else {
            let mom = (t - 1.0) / t_next;
            for e in 0..m {
                y[e] = z_next[e] + mom * (z_next[e] - z[e]);
            }
            t = t_next;
        }
        std::mem::swap(&mut z, &mut z_next);

        let every = if k < 200 { 10 } else { 50 };
        if k % every == 0 || k == p.max_iterations {
            primal(p.theta, &z, &mut u);
            if let Some(sol) = polish(p, &u) {
                return Ok(ColumnState {
                    u: sol,
                    dual: Some(z),
                    iterations: k,
                });
            }
        }
    }
    primal(p.theta, &z, &mut u);
    Err(NotConverged {
        residual: column_residual(p.theta, &u, p.weights, p.gamma),
        iterations: p.max_iterations,
    })
}
