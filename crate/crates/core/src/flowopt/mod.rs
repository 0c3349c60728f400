//! Integral min-cost flow and the fleet problems reduced to it.
//!
//! All three decision problems of a control step (passenger matching,
//! rebalancing toward a desired distribution, and the time-expanded MPC
//! planners) are posed as min-cost flow instances and solved exactly by
//! [`min_cost_flow`], a primal network simplex. Every returned solution is
//! rechecked by an independent validator.

mod dimacs;
mod mpc;
mod problems;
mod simplex;

pub use dimacs::write_dimacs;
pub use mpc::{solve_mpc_forecast, solve_mpc_oracle, MpcPlan, DEFAULT_MPC_HORIZON, FORECAST_SCALE};
pub use problems::{
    check_matching, check_rebalance, matching_profit, rebalancing_cost, solve_matching,
    solve_rebalance, Matching, Rebalancing,
};
pub use simplex::min_cost_flow;

use crate::error::{Error, Result};

/// Capacity value treated as unbounded.
pub const INF_CAP: i64 = i64::MAX / 4;

#[derive(Clone, Debug, PartialEq)]
pub struct FlowArc {
    pub src: usize,
    pub dst: usize,
    /// Nonnegative; [`INF_CAP`] for uncapacitated arcs.
    pub capacity: i64,
    pub unit_cost: f64,
}

/// A min-cost flow instance. Positive supplies are sources, negative are sinks.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FlowNetwork {
    pub nodes: usize,
    pub arcs: Vec<FlowArc>,
    pub supply: Vec<i64>,
}

impl FlowNetwork {
    pub fn new(nodes: usize) -> Self {
        FlowNetwork {
            nodes,
            arcs: Vec::new(),
            supply: vec![0; nodes],
        }
    }

    /// Appends an arc and returns its index.
    pub fn add_arc(&mut self, src: usize, dst: usize, capacity: i64, unit_cost: f64) -> usize {
        self.arcs.push(FlowArc {
            src,
            dst,
            capacity,
            unit_cost,
        });
        self.arcs.len() - 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.supply.len() != self.nodes {
            return Err(Error::MalformedNetwork(format!(
                "{} supplies for {} nodes",
                self.supply.len(),
                self.nodes
            )));
        }
        let total: i128 = self.supply.iter().map(|&s| s as i128).sum();
        if total != 0 {
            return Err(Error::MalformedNetwork(format!("supplies sum to {total}, not 0")));
        }
        for (k, a) in self.arcs.iter().enumerate() {
            if a.src >= self.nodes || a.dst >= self.nodes {
                return Err(Error::MalformedNetwork(format!("arc {k} has a missing endpoint")));
            }
            if a.capacity < 0 || a.capacity > INF_CAP {
                return Err(Error::MalformedNetwork(format!("arc {k} capacity {}", a.capacity)));
            }
            if !a.unit_cost.is_finite() {
                return Err(Error::MalformedNetwork(format!("arc {k} cost is not finite")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FlowStatus {
    Optimal,
    Infeasible,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowSolution {
    pub arc_flows: Vec<i64>,
    pub objective: f64,
    pub status: FlowStatus,
}

/// Sum of `flow * unit_cost` in arc order.
pub fn flow_cost(net: &FlowNetwork, flows: &[i64]) -> f64 {
    net.arcs
        .iter()
        .zip(flows)
        .map(|(a, &f)| f as f64 * a.unit_cost)
        .sum()
}

/// Checks bounds and conservation of an optimal solution.
pub fn check_flow(net: &FlowNetwork, sol: &FlowSolution) -> Result<()> {
    if sol.arc_flows.len() != net.arcs.len() {
        return Err(Error::Dimension(format!(
            "{} flows for {} arcs",
            sol.arc_flows.len(),
            net.arcs.len()
        )));
    }
    let mut balance = net.supply.clone();
    for (k, (a, &f)) in net.arcs.iter().zip(&sol.arc_flows).enumerate() {
        if f < 0 || f > a.capacity {
            return Err(Error::Simulation(format!(
                "arc {k} flow {f} outside [0, {}]",
                a.capacity
            )));
        }
        balance[a.src] -= f;
        balance[a.dst] += f;
    }
    if let Some(v) = balance.iter().position(|&b| b != 0) {
        return Err(Error::Simulation(format!("flow not conserved at node {v}")));
    }
    Ok(())
}
