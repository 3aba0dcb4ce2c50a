//! Primal network simplex for the transportation problem with an overflow sink.
//!
//! Nodes are the sources `0..m`, the targets `m..m+n` and the sink `m+n`,
//! which is also the root of the spanning tree. Every source owns a zero-cost
//! arc into the sink that absorbs surplus mass, and every target starts out
//! fed by an artificial arc from the sink whose cost exceeds any real path, so
//! the initial basis is feasible and strongly feasible (every tree arc carries
//! positive flow). Leaving arcs are chosen by the last-blocking-arc rule, which
//! keeps the basis strongly feasible and rules out cycling.

const NONE: usize = usize::MAX;

pub(crate) struct NetworkSimplex {
    num_sources: usize,
    num_targets: usize,
    tail: Vec<u32>,
    head: Vec<u32>,
    cost: Vec<f64>,
    flow: Vec<f64>,
    in_tree: Vec<bool>,
    num_real: usize,

    parent: Vec<usize>,
    pred: Vec<usize>,
    depth: Vec<usize>,
    pi: Vec<f64>,
    first_child: Vec<usize>,
    next_sib: Vec<usize>,
    prev_sib: Vec<usize>,

    next_arc: usize,
    tolerance: f64,
    pivots: usize,
}

pub(crate) enum SimplexStatus {
    Optimal,
    PivotLimit,
}

impl NetworkSimplex {
    /// `arcs` are real `(source, target, cost)` triples; costs must be
    /// nonnegative. `tolerance` is the reduced-cost threshold for entering.
    pub fn new(supplies: &[f64], demands: &[f64], arcs: &[(u32, u32, f64)], tolerance: f64) -> Self {
        let m = supplies.len();
        let n = demands.len();
        let root = m + n;
        let num_nodes = m + n + 1;
        let max_cost = arcs.iter().map(|a| a.2).fold(0.0, f64::max);
        let artificial_cost = 3.0 * max_cost + 1.0;

        let num_arcs = arcs.len() + m + n;
        let mut tail = Vec::with_capacity(num_arcs);
        let mut head = Vec::with_capacity(num_arcs);
        let mut cost = Vec::with_capacity(num_arcs);
        for &(i, j, c) in arcs {
            tail.push(i);
            head.push(m as u32 + j);
            cost.push(c);
        }
        let num_real = arcs.len();
        let mut s = Self {
            num_sources: m,
            num_targets: n,
            tail,
            head,
            cost,
            flow: vec![0.0; num_real],
            in_tree: vec![false; num_real],
            num_real,
            parent: vec![NONE; num_nodes],
            pred: vec![NONE; num_nodes],
            depth: vec![0; num_nodes],
            pi: vec![0.0; num_nodes],
            first_child: vec![NONE; num_nodes],
            next_sib: vec![NONE; num_nodes],
            prev_sib: vec![NONE; num_nodes],
            next_arc: 0,
            tolerance,
            pivots: 0,
        };
        // sink arcs, then artificial arcs; both start in the tree
        for (i, &mass) in supplies.iter().enumerate() {
            let e = s.push_arc(i as u32, root as u32, 0.0);
            s.flow[e] = mass;
            s.in_tree[e] = true;
            s.link(i, root, e);
            s.pi[i] = 0.0;
        }
        for (j, &mass) in demands.iter().enumerate() {
            let v = m + j;
            let e = s.push_arc(root as u32, v as u32, artificial_cost);
            s.flow[e] = mass;
            s.in_tree[e] = true;
            s.link(v, root, e);
            s.pi[v] = artificial_cost;
        }
        for v in 0..root {
            s.depth[v] = 1;
        }
        s
    }

    fn push_arc(&mut self, t: u32, h: u32, c: f64) -> usize {
        self.tail.push(t);
        self.head.push(h);
        self.cost.push(c);
        self.flow.push(0.0);
        self.in_tree.push(false);
        self.tail.len() - 1
    }

    /// Appends a real arc as a nonbasic arc at zero flow.
    pub fn add_arc(&mut self, source: u32, target: u32, cost: f64) {
        self.push_arc(source, self.num_sources as u32 + target, cost);
    }

    #[cfg(test)]
    fn root(&self) -> usize {
        self.num_sources + self.num_targets
    }

    fn link(&mut self, child: usize, parent: usize, arc: usize) {
        self.parent[child] = parent;
        self.pred[child] = arc;
        let first = self.first_child[parent];
        self.next_sib[child] = first;
        self.prev_sib[child] = NONE;
        if first != NONE {
            self.prev_sib[first] = child;
        }
        self.first_child[parent] = child;
    }

    fn unlink(&mut self, child: usize) {
        let p = self.parent[child];
        let (prev, next) = (self.prev_sib[child], self.next_sib[child]);
        if prev != NONE {
            self.next_sib[prev] = next;
        } else {
            self.first_child[p] = next;
        }
        if next != NONE {
            self.prev_sib[next] = prev;
        }
        self.prev_sib[child] = NONE;
        self.next_sib[child] = NONE;
    }

    #[inline]
    fn reduced_cost(&self, e: usize) -> f64 {
        self.cost[e] + self.pi[self.tail[e] as usize] - self.pi[self.head[e] as usize]
    }

    fn find_entering(&mut self) -> Option<usize> {
        let num_arcs = self.tail.len();
        let block = ((num_arcs as f64).sqrt() as usize).max(16);
        let mut best = NONE;
        let mut best_rc = -self.tolerance;
        let mut seen = 0;
        let start = self.next_arc % num_arcs;
        for k in 0..num_arcs {
            let mut e = start + k;
            if e >= num_arcs {
                e -= num_arcs;
            }
            if !self.in_tree[e] {
                let rc = self.reduced_cost(e);
                if rc < best_rc {
                    best_rc = rc;
                    best = e;
                }
            }
            seen += 1;
            if seen == block {
                if best != NONE {
                    self.next_arc = e + 1;
                    return Some(best);
                }
                seen = 0;
            }
        }
        (best != NONE).then_some(best)
    }

    pub fn run(&mut self, max_pivots: usize) -> SimplexStatus {
        while let Some(e) = self.find_entering() {
            if self.pivots >= max_pivots {
                return SimplexStatus::PivotLimit;
            }
            self.pivot(e);
            self.pivots += 1;
        }
        SimplexStatus::Optimal
    }

    fn pivot(&mut self, entering: usize) {
        let u = self.tail[entering] as usize;
        let v = self.head[entering] as usize;

        let (mut a, mut b) = (u, v);
        while a != b {
            if self.depth[a] > self.depth[b] {
                a = self.parent[a];
            } else if self.depth[b] > self.depth[a] {
                b = self.parent[b];
            } else {
                a = self.parent[a];
                b = self.parent[b];
            }
        }
        let join = a;

        // Flow runs join -> u -> v -> join. Blocking arcs point against it.
        let mut delta = f64::INFINITY;
        let mut leave = NONE;
        let mut leave_on_u_side = true;
        let mut w = u;
        while w != join {
            let arc = self.pred[w];
            if self.tail[arc] as usize == w && self.flow[arc] < delta {
                delta = self.flow[arc];
                leave = w;
            }
            w = self.parent[w];
        }
        w = v;
        while w != join {
            let arc = self.pred[w];
            if self.head[arc] as usize == w && self.flow[arc] <= delta {
                delta = self.flow[arc];
                leave = w;
                leave_on_u_side = false;
            }
            w = self.parent[w];
        }
        debug_assert!(leave != NONE, "uncapacitated cycle with negative cost");

        if delta > 0.0 {
            w = u;
            while w != join {
                let arc = self.pred[w];
                if self.tail[arc] as usize == w {
                    self.flow[arc] -= delta;
                } else {
                    self.flow[arc] += delta;
                }
                w = self.parent[w];
            }
            w = v;
            while w != join {
                let arc = self.pred[w];
                if self.head[arc] as usize == w {
                    self.flow[arc] -= delta;
                } else {
                    self.flow[arc] += delta;
                }
                w = self.parent[w];
            }
        }
        self.flow[entering] = delta;
        let leaving_arc = self.pred[leave];
        self.flow[leaving_arc] = 0.0;
        self.in_tree[leaving_arc] = false;
        self.in_tree[entering] = true;

        // Hang the detached subtree (rooted at `leave`) from the entering arc.
        let (inner, outer) = if leave_on_u_side { (u, v) } else { (v, u) };
        let mut child = inner;
        let mut new_parent = outer;
        let mut new_pred = entering;
        loop {
            let old_parent = self.parent[child];
            let old_pred = self.pred[child];
            self.unlink(child);
            self.link(child, new_parent, new_pred);
            if child == leave {
                break;
            }
            new_parent = child;
            new_pred = old_pred;
            child = old_parent;
        }
        self.refresh_subtree(inner);
    }

    /// Recomputes depth and potential below (and including) `top`.
    fn refresh_subtree(&mut self, top: usize) {
        let mut stack = vec![top];
        while let Some(x) = stack.pop() {
            let p = self.parent[x];
            let arc = self.pred[x];
            self.depth[x] = self.depth[p] + 1;
            // tree arcs satisfy cost + pi[tail] - pi[head] = 0
            self.pi[x] = if self.tail[arc] as usize == p {
                self.pi[p] + self.cost[arc]
            } else {
                self.pi[p] - self.cost[arc]
            };
            let mut c = self.first_child[x];
            while c != NONE {
                stack.push(c);
                c = self.next_sib[c];
            }
        }
    }

    /// Positive flows on real arcs as `(source, target, flow)`.
    pub fn real_flows(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let m = self.num_sources;
        let real_front = 0..self.num_real;
        let appended = self.num_real + m + self.num_targets..self.tail.len();
        real_front
            .chain(appended)
            .filter(move |&e| self.flow[e] > 0.0)
            .map(move |e| (self.tail[e] as usize, self.head[e] as usize - m, self.flow[e]))
    }

    /// Total flow still carried by artificial arcs.
    pub fn artificial_flow(&self) -> f64 {
        let start = self.num_real + self.num_sources;
        (start..start + self.num_targets).map(|e| self.flow[e]).sum()
    }

    /// Reduced cost of a prospective real arc under the current potentials.
    pub fn reduced_cost_of(&self, source: usize, target: usize, cost: f64) -> f64 {
        cost + self.pi[source] - self.pi[self.num_sources + target]
    }

    pub fn pivots(&self) -> usize {
        self.pivots
    }

    #[cfg(test)]
    fn check_tree(&self) {
        let root = self.root();
        let mut count = 0;
        for x in 0..self.pi.len() {
            if x == root {
                continue;
            }
            let arc = self.pred[x];
            assert!(self.in_tree[arc]);
            assert!(self.reduced_cost(arc).abs() < 1e-9);
            assert_eq!(self.depth[x], self.depth[self.parent[x]] + 1);
            count += 1;
        }
        assert_eq!(count, self.in_tree.iter().filter(|&&t| t).count());
    }
}
