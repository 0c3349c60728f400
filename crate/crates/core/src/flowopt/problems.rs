//! Passenger matching and minimum-cost rebalancing.

use super::{check_flow, min_cost_flow, FlowNetwork, FlowStatus, INF_CAP};
use crate::error::{Error, Result};

/// Passenger flows `x[i][j]` (row-major) and their profit.
#[derive(Clone, Debug, PartialEq)]
pub struct Matching {
    pub flows: Vec<u32>,
    pub profit: f64,
}

impl Matching {
    pub fn served(&self) -> u32 {
        self.flows.iter().sum()
    }

    /// Vehicles leaving station `i` with passengers.
    pub fn departures(&self, n: usize, i: usize) -> u32 {
        self.flows[i * n..(i + 1) * n].iter().sum()
    }
}

/// Rebalancing flows `y[i][j]` (row-major, diagonal always zero) and their cost.
#[derive(Clone, Debug, PartialEq)]
pub struct Rebalancing {
    pub flows: Vec<u32>,
    pub cost: f64,
}

impl Rebalancing {
    pub fn moved(&self) -> u32 {
        self.flows.iter().sum()
    }
}

/// `Σ x_ij (p_ij - c_ij)` in row-major order.
pub fn matching_profit(flows: &[u32], price: &[f64], cost: &[f64]) -> f64 {
    flows
        .iter()
        .zip(price.iter().zip(cost))
        .map(|(&x, (&p, &c))| x as f64 * (p - c))
        .sum()
}

/// `Σ_{i≠j} y_ij c_ij` in row-major order.
pub fn rebalancing_cost(n: usize, flows: &[u32], cost: &[f64]) -> f64 {
    flows
        .iter()
        .zip(cost)
        .enumerate()
        .filter(|(k, _)| k / n != k % n)
        .map(|(_, (&y, &c))| y as f64 * c)
        .sum()
}

fn check_dims(n: usize, parts: &[(&str, usize, usize)]) -> Result<()> {
    for &(name, len, want) in parts {
        if len != want {
            return Err(Error::Dimension(format!(
                "{name} has {len} entries, expected {want} for {n} stations"
            )));
        }
    }
    Ok(())
}

/// Profit-maximizing assignment of idle vehicles to requests.
///
/// Maximizes `Σ x_ij (p_ij - c_ij)` subject to `0 ≤ x_ij ≤ d_ij` and
/// `Σ_j x_ij ≤ idle_i`. Loss-making OD pairs are never served. Inputs are
/// row-major `n x n` slices.
pub fn solve_matching(
    n: usize,
    demand: &[u32],
    price: &[f64],
    cost: &[f64],
    idle: &[u32],
) -> Result<Matching> {
    check_dims(
        n,
        &[
            ("demand", demand.len(), n * n),
            ("price", price.len(), n * n),
            ("cost", cost.len(), n * n),
            ("idle", idle.len(), n),
        ],
    )?;
    // origins 0..n, destinations n..2n, slack sink 2n
    let sink = 2 * n;
    let mut net = FlowNetwork::new(2 * n + 1);
    let mut od_arcs = Vec::new();
    for i in 0..n {
        for j in 0..n {
            let k = i * n + j;
            let margin = price[k] - cost[k];
            if demand[k] > 0 && margin >= 0.0 {
                od_arcs.push((k, net.add_arc(i, n + j, demand[k] as i64, -margin)));
            }
        }
    }
    let mut total = 0i64;
    for i in 0..n {
        net.add_arc(i, sink, INF_CAP, 0.0);
        net.add_arc(n + i, sink, INF_CAP, 0.0);
        net.supply[i] = idle[i] as i64;
        total += idle[i] as i64;
    }
    net.supply[sink] = -total;
    let sol = min_cost_flow(&net)?;
    debug_assert_eq!(sol.status, FlowStatus::Optimal);
    check_flow(&net, &sol)?;
    let mut flows = vec![0u32; n * n];
    for (k, arc) in od_arcs {
        flows[k] = sol.arc_flows[arc] as u32;
    }
    let profit = matching_profit(&flows, price, cost);
    let m = Matching { flows, profit };
    check_matching(n, demand, idle, &m)?;
    Ok(m)
}

/// Independent check of the matching constraints.
pub fn check_matching(n: usize, demand: &[u32], idle: &[u32], m: &Matching) -> Result<()> {
    for (k, (&x, &d)) in m.flows.iter().zip(demand).enumerate() {
        if x > d {
            return Err(Error::Simulation(format!(
                "passenger flow {x} exceeds demand {d} on ({}, {})",
                k / n,
                k % n
            )));
        }
    }
    for i in 0..n {
        let out = m.departures(n, i);
        if out > idle[i] {
            return Err(Error::Simulation(format!(
                "station {i} dispatches {out} vehicles but has {}",
                idle[i]
            )));
        }
    }
    Ok(())
}

/// Cheapest integral rebalancing that leaves at least `desired_i` vehicles at
/// every station while sending at most `idle_i` out of each.
pub fn solve_rebalance(n: usize, idle: &[u32], desired: &[u32], cost: &[f64]) -> Result<Rebalancing> {
    check_dims(
        n,
        &[
            ("idle", idle.len(), n),
            ("desired", desired.len(), n),
            ("cost", cost.len(), n * n),
        ],
    )?;
    let have: u64 = idle.iter().map(|&v| v as u64).sum();
    let want: u64 = desired.iter().map(|&v| v as u64).sum();
    if want > have {
        return Err(Error::Precondition(format!(
            "desired vehicles {want} exceed idle vehicles {have}"
        )));
    }
    // origins 0..n (supply idle_i), destinations n..2n (demand desired_j),
    // surplus sink 2n
    let sink = 2 * n;
    let mut net = FlowNetwork::new(2 * n + 1);
    let mut reb_arcs = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i == j {
                net.add_arc(i, n + j, INF_CAP, 0.0);
            } else {
                reb_arcs.push((i * n + j, net.add_arc(i, n + j, INF_CAP, cost[i * n + j])));
            }
        }
    }
    for j in 0..n {
        net.add_arc(n + j, sink, INF_CAP, 0.0);
        net.supply[j] = idle[j] as i64;
        net.supply[n + j] = -(desired[j] as i64);
    }
    net.supply[sink] = -((have - want) as i64);
    let sol = min_cost_flow(&net)?;
    if sol.status != FlowStatus::Optimal {
        return Err(Error::Simulation("rebalancing problem infeasible".into()));
    }
    check_flow(&net, &sol)?;
    let mut flows = vec![0u32; n * n];
    for (k, arc) in reb_arcs {
        flows[k] = sol.arc_flows[arc] as u32;
    }
    let cost_total = rebalancing_cost(n, &flows, cost);
    let r = Rebalancing {
        flows,
        cost: cost_total,
    };
    check_rebalance(n, idle, desired, &r)?;
    Ok(r)
}

/// Independent check of the rebalancing constraints.
pub fn check_rebalance(n: usize, idle: &[u32], desired: &[u32], r: &Rebalancing) -> Result<()> {
    for i in 0..n {
        if r.flows[i * n + i] != 0 {
            return Err(Error::Simulation(format!("self-rebalancing at station {i}")));
        }
        let out: i64 = (0..n).map(|j| r.flows[i * n + j] as i64).sum();
        let inc: i64 = (0..n).map(|j| r.flows[j * n + i] as i64).sum();
        if out > idle[i] as i64 {
            return Err(Error::Simulation(format!(
                "station {i} rebalances {out} vehicles but has {}",
                idle[i]
            )));
        }
        if idle[i] as i64 + inc - out < desired[i] as i64 {
            return Err(Error::Simulation(format!(
                "station {i} ends with {} vehicles, desired {}",
                idle[i] as i64 + inc - out,
                desired[i]
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_demand_no_flow() {
        let m = solve_matching(2, &[0; 4], &[0.0, 3.0, 3.0, 0.0], &[0.0, 1.0, 1.0, 0.0], &[2, 2])
            .unwrap();
        assert_eq!(m.flows, vec![0; 4]);
        assert_eq!(m.profit, 0.0);
    }

    #[test]
    fn supply_limited_matching() {
        // d[0][1] = 3, margin 1, two idle vehicles at station 0
        let m = solve_matching(2, &[0, 3, 0, 0], &[0.0, 2.0, 0.0, 0.0], &[0.0, 1.0, 0.0, 0.0], &[2, 0])
            .unwrap();
        assert_eq!(m.flows, vec![0, 2, 0, 0]);
        assert_eq!(m.profit, 2.0);
    }

    #[test]
    fn loss_making_requests_unserved() {
        let m = solve_matching(2, &[0, 3, 0, 0], &[0.0, 1.0, 0.0, 0.0], &[0.0, 2.0, 0.0, 0.0], &[5, 0])
            .unwrap();
        assert_eq!(m.served(), 0);
    }

    #[test]
    fn prefers_higher_margin() {
        // one vehicle at 0, requests to 1 (margin 1) and 2 (margin 4)
        let n = 3;
        let mut d = vec![0; 9];
        d[1] = 1;
        d[2] = 1;
        let mut p = vec![0.0; 9];
        p[1] = 2.0;
        p[2] = 5.0;
        let c = vec![1.0; 9];
        let m = solve_matching(n, &d, &p, &c, &[1, 0, 0]).unwrap();
        assert_eq!(m.flows[2], 1);
        assert_eq!(m.profit, 4.0);
    }

    #[test]
    fn balanced_needs_no_rebalancing() {
        let r = solve_rebalance(3, &[2, 1, 0], &[2, 1, 0], &[1.0; 9]).unwrap();
        assert_eq!(r.moved(), 0);
        assert_eq!(r.cost, 0.0);
    }

    #[test]
    fn moves_one_vehicle() {
        let r = solve_rebalance(2, &[2, 0], &[1, 1], &[0.0, 3.0, 3.0, 0.0]).unwrap();
        assert_eq!(r.flows, vec![0, 1, 0, 0]);
        assert_eq!(r.cost, 3.0);
    }

    #[test]
    fn over_demand_is_precondition_error() {
        let err = solve_rebalance(2, &[1, 0], &[1, 1], &[0.0; 4]).unwrap_err();
        assert!(matches!(err, Error::Precondition(_)));
    }

    #[test]
    fn dimension_mismatch() {
        assert!(matches!(
            solve_matching(2, &[0; 3], &[0.0; 4], &[0.0; 4], &[0, 0]),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn zero_cost_reroute_is_free() {
        let mut c = vec![5.0; 9];
        c[1 * 3 + 2] = 0.0;
        let r = solve_rebalance(3, &[0, 2, 0], &[0, 0, 2], &c).unwrap();
        assert_eq!(r.flows[5], 2);
        assert_eq!(r.cost, 0.0);
    }
}
