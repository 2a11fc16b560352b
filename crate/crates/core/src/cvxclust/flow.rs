//! Dinic max-flow on small dense networks with real capacities.

use std::collections::VecDeque;

struct Arc {
    to: usize,
    cap: f64,
}

pub(crate) struct FlowNetwork {
    arcs: Vec<Arc>,
    adj: Vec<Vec<usize>>,
    level: Vec<i32>,
    next: Vec<usize>,
    eps: f64,
}

impl FlowNetwork {
    /// `eps` is the residual capacity below which an arc counts as saturated.
    pub fn new(nodes: usize, eps: f64) -> Self {
        FlowNetwork {
            arcs: Vec::new(),
            adj: vec![Vec::new(); nodes],
            level: vec![0; nodes],
            next: vec![0; nodes],
            eps,
        }
    }

    pub fn add_arc(&mut self, from: usize, to: usize, cap: f64) {
        self.add_pair(from, to, cap, 0.0);
    }

    /// Undirected edge: capacity `cap` in both directions.
    pub fn add_edge(&mut self, a: usize, b: usize, cap: f64) {
        self.add_pair(a, b, cap, cap);
    }

    fn add_pair(&mut self, a: usize, b: usize, cab: f64, cba: f64) {
        if cab <= 0.0 && cba <= 0.0 {
            return;
        }
        self.adj[a].push(self.arcs.len());
        self.arcs.push(Arc { to: b, cap: cab });
        self.adj[b].push(self.arcs.len());
        self.arcs.push(Arc { to: a, cap: cba });
    }

    fn bfs(&mut self, s: usize, t: usize) -> bool {
        self.level.iter_mut().for_each(|l| *l = -1);
        self.level[s] = 0;
        let mut q = VecDeque::from([s]);
        while let Some(v) = q.pop_front() {
            for &e in &self.adj[v] {
                let Arc { to, cap } = self.arcs[e];
                if cap > self.eps && self.level[to] < 0 {
                    self.level[to] = self.level[v] + 1;
                    q.push_back(to);
                }
            }
        }
        self.level[t] >= 0
    }

    fn dfs(&mut self, v: usize, t: usize, pushed: f64) -> f64 {
        if v == t {
            return pushed;
        }
        while self.next[v] < self.adj[v].len() {
            let e = self.adj[v][self.next[v]];
            let Arc { to, cap } = self.arcs[e];
            if cap > self.eps && self.level[to] == self.level[v] + 1 {
                let d = self.dfs(to, t, pushed.min(cap));
                if d > 0.0 {
                    self.arcs[e].cap -= d;
                    self.arcs[e ^ 1].cap += d;
                    return d;
                }
            }
            self.next[v] += 1;
        }
        0.0
    }

    pub fn max_flow(&mut self, s: usize, t: usize) -> f64 {
        let mut flow = 0.0;
        while self.bfs(s, t) {
            self.next.iter_mut().for_each(|n| *n = 0);
            loop {
                let f = self.dfs(s, t, f64::INFINITY);
                if f <= 0.0 {
                    break;
                }
                flow += f;
            }
        }
        flow
    }

    /// Nodes reachable from `s` in the residual network (after [`Self::max_flow`]).
    pub fn source_side(&self, s: usize) -> Vec<bool> {
        let mut seen = vec![false; self.adj.len()];
        seen[s] = true;
        let mut stack = vec![s];
        while let Some(v) = stack.pop() {
            for &e in &self.adj[v] {
                let Arc { to, cap } = self.arcs[e];
                if cap > self.eps && !seen[to] {
                    seen[to] = true;
                    stack.push(to);
                }
            }
        }
        seen
    }
}
