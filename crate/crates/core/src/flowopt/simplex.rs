//! Primal network simplex.
//!
//! The spanning tree is rooted at an artificial node joined to every real
//! node by a big-M arc. The entering arc is the lowest-indexed eligible one
//! (Bland's rule) and the leaving arc is the last blocking arc of the pivot
//! cycle, which keeps the tree strongly feasible and rules out cycling.
//! Flows stay integral because supplies and capacities are.

use super::{flow_cost, FlowNetwork, FlowSolution, FlowStatus, INF_CAP};
use crate::error::{Error, Result};

const LOWER: i8 = 1;
const UPPER: i8 = -1;
const TREE: i8 = 0;

struct Simplex {
    root: usize,
    src: Vec<usize>,
    dst: Vec<usize>,
    cap: Vec<i64>,
    cost: Vec<f64>,
    flow: Vec<i64>,
    state: Vec<i8>,
    tree_arcs: Vec<usize>,
    parent: Vec<usize>,
    pred: Vec<usize>,
    depth: Vec<usize>,
    pot: Vec<f64>,
    eps: f64,
    // scratch for tree rebuilds
    adj_start: Vec<usize>,
    adj: Vec<usize>,
    queue: Vec<usize>,
}

fn residual(cap: i64, flow: i64) -> i64 {
    if cap >= INF_CAP {
        INF_CAP
    } else {
        cap - flow
    }
}

impl Simplex {
    fn new(net: &FlowNetwork) -> Self {
        let n = net.nodes;
        let m = net.arcs.len();
        let root = n;
        let max_cost = net
            .arcs
            .iter()
            .map(|a| a.unit_cost.abs())
            .fold(0.0f64, f64::max);
        let sum_cost: f64 = net.arcs.iter().map(|a| a.unit_cost.abs()).sum();
        let art_cost = sum_cost + 1.0;

        let mut s = Simplex {
            root,
            src: Vec::with_capacity(m + n),
            dst: Vec::with_capacity(m + n),
            cap: Vec::with_capacity(m + n),
            cost: Vec::with_capacity(m + n),
            flow: vec![0; m + n],
            state: vec![LOWER; m + n],
            tree_arcs: Vec::with_capacity(n),
            parent: vec![usize::MAX; n + 1],
            pred: vec![usize::MAX; n + 1],
            depth: vec![0; n + 1],
            pot: vec![0.0; n + 1],
            eps: 1e-9 * max_cost.max(1.0),
            adj_start: vec![0; n + 2],
            adj: Vec::new(),
            queue: Vec::with_capacity(n + 1),
        };
        for a in &net.arcs {
            s.src.push(a.src);
            s.dst.push(a.dst);
            s.cap.push(a.capacity);
            s.cost.push(a.unit_cost);
        }
        for u in 0..n {
            let k = m + u;
            let b = net.supply[u];
            if b >= 0 {
                s.src.push(u);
                s.dst.push(root);
                s.flow[k] = b;
            } else {
                s.src.push(root);
                s.dst.push(u);
                s.flow[k] = -b;
            }
            s.cap.push(INF_CAP);
            s.cost.push(art_cost);
            s.state[k] = TREE;
            s.tree_arcs.push(k);
        }
        s.rebuild_tree();
        s
    }

    /// Recomputes parent pointers, depths and potentials from the tree arc set.
    fn rebuild_tree(&mut self) {
        let nodes = self.root + 1;
        self.adj_start.iter_mut().for_each(|x| *x = 0);
        for &a in &self.tree_arcs {
            self.adj_start[self.src[a] + 1] += 1;
            self.adj_start[self.dst[a] + 1] += 1;
        }
        for v in 0..nodes {
            self.adj_start[v + 1] += self.adj_start[v];
        }
        self.adj.clear();
        self.adj.resize(2 * self.tree_arcs.len(), 0);
        let mut fill = self.adj_start.clone();
        let mut sorted = self.tree_arcs.clone();
        sorted.sort_unstable();
        for &a in &sorted {
            for v in [self.src[a], self.dst[a]] {
                self.adj[fill[v]] = a;
                fill[v] += 1;
            }
        }
        self.queue.clear();
        self.queue.push(self.root);
        self.parent[self.root] = usize::MAX;
        self.pred[self.root] = usize::MAX;
        self.depth[self.root] = 0;
        self.pot[self.root] = 0.0;
        let mut head = 0;
        while head < self.queue.len() {
            let u = self.queue[head];
            head += 1;
            for k in self.adj_start[u]..self.adj_start[u + 1] {
                let a = self.adj[k];
                if a == self.pred[u] {
                    continue;
                }
                let v = if self.src[a] == u { self.dst[a] } else { self.src[a] };
                self.parent[v] = u;
                self.pred[v] = a;
                self.depth[v] = self.depth[u] + 1;
                // tree arcs have zero reduced cost: cost + pot[src] - pot[dst] = 0
                self.pot[v] = if self.src[a] == u {
                    self.pot[u] + self.cost[a]
                } else {
                    self.pot[u] - self.cost[a]
                };
                self.queue.push(v);
            }
        }
        debug_assert_eq!(self.queue.len(), nodes, "tree must span all nodes");
    }

    fn find_entering(&self) -> Option<usize> {
        (0..self.src.len()).find(|&a| {
            let st = self.state[a];
            if st == TREE || self.cap[a] == 0 {
                return false;
            }
            let rc = self.cost[a] + self.pot[self.src[a]] - self.pot[self.dst[a]];
            (st == LOWER && rc < -self.eps) || (st == UPPER && rc > self.eps)
        })
    }

    fn join(&self, mut u: usize, mut v: usize) -> usize {
        while u != v {
            if self.depth[u] >= self.depth[v] {
                u = self.parent[u];
            } else {
                v = self.parent[v];
            }
        }
        u
    }

    /// One pivot. Returns `Err(Unbounded)` on an uncapacitated negative cycle.
    fn pivot(&mut self, entering: usize) -> Result<()> {
        let lower = self.state[entering] == LOWER;
        let (first, second) = if lower {
            (self.src[entering], self.dst[entering])
        } else {
            (self.dst[entering], self.src[entering])
        };
        let join = self.join(first, second);

        // Flow goes first -> second on the entering arc, then second up to
        // the join and down from the join to first.
        let mut delta = residual(self.cap[entering], 0);
        let mut leave: Option<usize> = None;
        let mut u = first;
        while u != join {
            let a = self.pred[u];
            let d = if self.dst[a] == u {
                residual(self.cap[a], self.flow[a])
            } else {
                self.flow[a]
            };
            if d < delta {
                delta = d;
                leave = Some(u);
            }
            u = self.parent[u];
        }
        let mut u = second;
        while u != join {
            let a = self.pred[u];
            let d = if self.src[a] == u {
                residual(self.cap[a], self.flow[a])
            } else {
                self.flow[a]
            };
            if d <= delta {
                delta = d;
                leave = Some(u);
            }
            u = self.parent[u];
        }
        if delta >= INF_CAP {
            return Err(Error::Unbounded);
        }

        if delta > 0 {
            self.flow[entering] += if lower { delta } else { -delta };
            let mut u = first;
            while u != join {
                let a = self.pred[u];
                self.flow[a] += if self.dst[a] == u { delta } else { -delta };
                u = self.parent[u];
            }
            let mut u = second;
            while u != join {
                let a = self.pred[u];
                self.flow[a] += if self.src[a] == u { delta } else { -delta };
                u = self.parent[u];
            }
        }

        match leave {
            None => {
                self.state[entering] = if lower { UPPER } else { LOWER };
            }
            Some(u_out) => {
                let out = self.pred[u_out];
                self.state[out] = if self.flow[out] == 0 { LOWER } else { UPPER };
                self.state[entering] = TREE;
                let slot = self
                    .tree_arcs
                    .iter()
                    .position(|&a| a == out)
                    .expect("leaving arc is a tree arc");
                self.tree_arcs[slot] = entering;
                self.rebuild_tree();
            }
        }
        Ok(())
    }
}

/// Solves a min-cost flow instance exactly.
///
/// Returns [`FlowStatus::Infeasible`] (with zero flows) when supplies cannot
/// be routed, and rejects networks whose supplies do not balance.
pub fn min_cost_flow(net: &FlowNetwork) -> Result<FlowSolution> {
    net.validate()?;
    let m = net.arcs.len();
    let mut s = Simplex::new(net);
    while let Some(a) = s.find_entering() {
        s.pivot(a)?;
    }
    if s.flow[m..].iter().any(|&f| f > 0) {
        return Ok(FlowSolution {
            arc_flows: vec![0; m],
            objective: 0.0,
            status: FlowStatus::Infeasible,
        });
    }
    let arc_flows = s.flow[..m].to_vec();
    let objective = flow_cost(net, &arc_flows);
    Ok(FlowSolution {
        arc_flows,
        objective,
        status: FlowStatus::Optimal,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flowopt::check_flow;
    use rand::{Rng, SeedableRng};

    #[test]
    fn single_arc() {
        let mut net = FlowNetwork::new(2);
        net.add_arc(0, 1, 3, 2.0);
        net.supply = vec![3, -3];
        let sol = min_cost_flow(&net).unwrap();
        assert_eq!(sol.status, FlowStatus::Optimal);
        assert_eq!(sol.arc_flows, vec![3]);
        assert_eq!(sol.objective, 6.0);
    }

    #[test]
    fn zero_supplies_give_zero_flow() {
        let mut net = FlowNetwork::new(3);
        net.add_arc(0, 1, 5, 1.0);
        net.add_arc(1, 2, INF_CAP, 0.0);
        net.add_arc(2, 0, 2, 3.0);
        let sol = min_cost_flow(&net).unwrap();
        assert_eq!(sol.arc_flows, vec![0, 0, 0]);
        assert_eq!(sol.objective, 0.0);
    }

    #[test]
    fn negative_cycle_with_capacity_is_saturated() {
        let mut net = FlowNetwork::new(2);
        net.add_arc(0, 1, 2, -3.0);
        net.add_arc(1, 0, 5, 1.0);
        let sol = min_cost_flow(&net).unwrap();
        assert_eq!(sol.arc_flows, vec![2, 2]);
        assert_eq!(sol.objective, -4.0);
    }

    #[test]
    fn unbounded_negative_cycle_is_an_error() {
        let mut net = FlowNetwork::new(2);
        net.add_arc(0, 1, INF_CAP, -3.0);
        net.add_arc(1, 0, INF_CAP, 1.0);
        assert!(matches!(min_cost_flow(&net), Err(Error::Unbounded)));
    }

    #[test]
    fn imbalance_rejected() {
        let mut net = FlowNetwork::new(2);
        net.add_arc(0, 1, 3, 1.0);
        net.supply = vec![2, -1];
        assert!(matches!(min_cost_flow(&net), Err(Error::MalformedNetwork(_))));
    }

    #[test]
    fn infeasible_reported() {
        let mut net = FlowNetwork::new(2);
        net.add_arc(0, 1, 1, 1.0);
        net.supply = vec![2, -2];
        assert_eq!(min_cost_flow(&net).unwrap().status, FlowStatus::Infeasible);
    }

    /// Exhaustive search over every integral flow vector.
    fn brute_force(net: &FlowNetwork) -> Option<f64> {
        let m = net.arcs.len();
        let mut flows = vec![0i64; m];
        let mut best: Option<f64> = None;
        loop {
            let mut bal = net.supply.clone();
            for (a, &f) in net.arcs.iter().zip(&flows) {
                bal[a.src] -= f;
                bal[a.dst] += f;
            }
            if bal.iter().all(|&b| b == 0) {
                let c: f64 = net.arcs.iter().zip(&flows).map(|(a, &f)| a.unit_cost * f as f64).sum();
                best = Some(best.map_or(c, |b: f64| b.min(c)));
            }
            let mut k = 0;
            loop {
                if k == m {
                    return best;
                }
                if flows[k] < net.arcs[k].capacity {
                    flows[k] += 1;
                    break;
                }
                flows[k] = 0;
                k += 1;
            }
        }
    }

    #[test]
    fn matches_exhaustive_enumeration() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2024);
        let mut feasible = 0;
        for case in 0..100 {
            let n = rng.random_range(2..=6);
            let arcs = rng.random_range(1..=6);
            let mut net = FlowNetwork::new(n);
            for _ in 0..arcs {
                let s = rng.random_range(0..n);
                let mut d = rng.random_range(0..n);
                if d == s {
                    d = (d + 1) % n;
                }
                net.add_arc(s, d, rng.random_range(0..=4), rng.random_range(-3..=5) as f64);
            }
            // supplies from a random feasible flow half of the time
            if case % 2 == 0 {
                for a in net.arcs.clone() {
                    let f = rng.random_range(0..=a.capacity);
                    net.supply[a.src] += f;
                    net.supply[a.dst] -= f;
                }
            } else {
                let u = rng.random_range(0..n);
                let v = (u + 1) % n;
                let b = rng.random_range(0..=3);
                net.supply[u] += b;
                net.supply[v] -= b;
            }
            let sol = min_cost_flow(&net).unwrap();
            match brute_force(&net) {
                Some(best) => {
                    feasible += 1;
                    assert_eq!(sol.status, FlowStatus::Optimal, "case {case}");
                    check_flow(&net, &sol).unwrap();
                    assert_eq!(sol.objective, best, "case {case}: {net:?}");
                }
                None => assert_eq!(sol.status, FlowStatus::Infeasible, "case {case}"),
            }
        }
        assert!(feasible >= 50);
    }

    #[test]
    fn deterministic() {
        let mut net = FlowNetwork::new(4);
        for (s, d, c) in [(0, 1, 1.0), (0, 2, 1.0), (1, 3, 1.0), (2, 3, 1.0), (0, 3, 2.0)] {
            net.add_arc(s, d, 2, c);
        }
        net.supply = vec![3, 0, 0, -3];
        let a = min_cost_flow(&net).unwrap();
        let b = min_cost_flow(&net).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.objective, 6.0);
    }
}
