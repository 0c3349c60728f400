//! DIMACS min-cost-flow text dumps, for cross-checking with other solvers.

use std::io::Write;

use super::{FlowNetwork, FlowSolution, INF_CAP};
use crate::error::Result;

/// Writes `net` (and optionally a solution as `f` lines) in DIMACS format.
/// Nodes are 1-based; uncapacitated arcs get the total absolute supply as
/// their bound. Costs are written as decimals.
pub fn write_dimacs(
    net: &FlowNetwork,
    solution: Option<&FlowSolution>,
    mut out: impl Write,
) -> Result<()> {
    let bound: i64 = net.supply.iter().map(|s| s.abs()).sum::<i64>().max(1);
    writeln!(out, "c min-cost flow instance")?;
    writeln!(out, "p min {} {}", net.nodes, net.arcs.len())?;
    for (v, &b) in net.supply.iter().enumerate() {
        if b != 0 {
            writeln!(out, "n {} {}", v + 1, b)?;
        }
    }
    for a in &net.arcs {
        let cap = if a.capacity >= INF_CAP { bound } else { a.capacity };
        writeln!(out, "a {} {} 0 {} {}", a.src + 1, a.dst + 1, cap, a.unit_cost)?;
    }
    if let Some(sol) = solution {
        writeln!(out, "s {}", sol.objective)?;
        for (a, &f) in net.arcs.iter().zip(&sol.arc_flows) {
            if f != 0 {
                writeln!(out, "f {} {} {}", a.src + 1, a.dst + 1, f)?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flowopt::min_cost_flow;

    #[test]
    fn dump_format() {
        let mut net = FlowNetwork::new(2);
        net.add_arc(0, 1, 3, 2.0);
        net.add_arc(1, 0, INF_CAP, 1.5);
        net.supply = vec![3, -3];
        let sol = min_cost_flow(&net).unwrap();
        let mut buf = Vec::new();
        write_dimacs(&net, Some(&sol), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[1], "p min 2 2");
        assert_eq!(lines[2], "n 1 3");
        assert_eq!(lines[3], "n 2 -3");
        assert_eq!(lines[4], "a 1 2 0 3 2");
        assert_eq!(lines[5], "a 2 1 0 6 1.5");
        assert_eq!(lines[6], "s 6");
        assert_eq!(lines[7], "f 1 2 3");
    }
}
