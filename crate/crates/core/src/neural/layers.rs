use rand::Rng;

use super::graph::{Graph, ParamSet, Var};
use super::tensor::Tensor;
use crate::error::Result;

/// Affine map `x W + b` applied row-wise.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: usize,
    pub b: usize,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    /// Registers `{name}.w` and `{name}.b`, uniform in `±1/√input`.
    pub fn new(ps: &mut ParamSet, name: &str, input: usize, output: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        let w = ps.push(format!("{name}.w"), Tensor::uniform(input, output, bound, rng));
        let b = ps.push(format!("{name}.b"), Tensor::uniform(1, output, bound, rng));
        Linear { w, b, input, output }
    }

    pub fn forward(&self, g: &mut Graph, ps: &ParamSet, x: Var) -> Result<Var> {
        let w = g.param(ps, self.w);
        let b = g.param(ps, self.b);
        let y = g.matmul(x, w)?;
        g.add_row(y, b)
    }
}

/// Gated recurrent unit applied independently to each row.
///
/// ```text
/// r  = σ(x W_xr + h W_hr + b_r)
/// z  = σ(x W_xz + h W_hz + b_z)
/// n  = tanh(x W_xn + r ⊙ (h W_hn) + b_n)
/// h' = (1 - z) ⊙ n + z ⊙ h
/// ```
#[derive(Clone, Copy, Debug)]
pub struct GruCell {
    pub input: usize,
    pub hidden: usize,
    /// `[W_x, W_h, b]` for the reset, update and candidate gates.
    gates: [[usize; 3]; 3],
}

impl GruCell {
    pub fn new(ps: &mut ParamSet, name: &str, input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let mut gates = [[0; 3]; 3];
        for (slot, gate) in gates.iter_mut().zip(["r", "z", "n"]) {
            slot[0] = ps.push(format!("{name}.w_x{gate}"), Tensor::uniform(input, hidden, bound, rng));
            slot[1] = ps.push(format!("{name}.w_h{gate}"), Tensor::uniform(hidden, hidden, bound, rng));
            slot[2] = ps.push(format!("{name}.b_{gate}"), Tensor::uniform(1, hidden, bound, rng));
        }
        GruCell { input, hidden, gates }
    }

    pub fn num_params(input: usize, hidden: usize) -> usize {
        3 * (input + hidden + 1) * hidden
    }

    /// `x` is `N x input`, `h` is `N x hidden`; returns `N x hidden`.
    pub fn forward(&self, g: &mut Graph, ps: &ParamSet, x: Var, h: Var) -> Result<Var> {
        let [r, z, n] = self.gates;
        let pre = |g: &mut Graph, [wx, wh, b]: [usize; 3]| -> Result<(Var, Var)> {
            let wx = g.param(ps, wx);
            let wh = g.param(ps, wh);
            let b = g.param(ps, b);
            let xa = g.matmul(x, wx)?;
            let xa = g.add_row(xa, b)?;
            let ha = g.matmul(h, wh)?;
            Ok((xa, ha))
        };
        let (xr, hr) = pre(g, r)?;
        let r = g.add(xr, hr)?;
        let r = g.sigmoid(r);
        let (xz, hz) = pre(g, z)?;
        let z = g.add(xz, hz)?;
        let z = g.sigmoid(z);
        let (xn, hn) = pre(g, n)?;
        let rh = g.mul(r, hn)?;
        let n = g.add(xn, rh)?;
        let n = g.tanh(n);
        // n + z ⊙ (h - n)
        let d = g.sub(h, n)?;
        let zd = g.mul(z, d)?;
        g.add(n, zd)
    }
}
