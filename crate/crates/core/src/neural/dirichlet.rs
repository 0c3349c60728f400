//! Dirichlet policy head: sampling, log-density and entropy.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::graph::{Graph, Var};
use super::special::{digamma, ln_gamma};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Actions are clamped into `[ACTION_CLAMP, 1 - ACTION_CLAMP]` and
/// renormalized before evaluating densities.
pub const ACTION_CLAMP: f64 = 1e-9;

/// `ln X` for `X ~ Gamma(alpha, 1)`, by Marsaglia and Tsang's squeeze method.
/// For `alpha < 1` uses `X = Y · U^{1/alpha}` with `Y ~ Gamma(alpha + 1)`,
/// kept in log space so tiny shapes do not underflow.
pub fn ln_gamma_sample(alpha: f64, rng: &mut impl Rng) -> f64 {
    if alpha < 1.0 {
        let u: f64 = rng.random::<f64>();
        return ln_gamma_sample(alpha + 1.0, rng) + u.max(f64::MIN_POSITIVE).ln() / alpha;
    }
    let d = alpha - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x: f64 = StandardNormal.sample(rng);
        let v = 1.0 + c * x;
        if v <= 0.0 {
            continue;
        }
        let v = v * v * v;
        let u: f64 = rng.random::<f64>();
        let x2 = x * x;
        if u < 1.0 - 0.0331 * x2 * x2 || u.ln() < 0.5 * x2 + d * (1.0 - v + v.ln()) {
            return d.ln() + v.ln();
        }
    }
}

fn check_alpha(alpha: &[f64]) -> Result<()> {
    if alpha.is_empty() {
        return Err(Error::Dimension("Dirichlet needs at least one component".into()));
    }
    if let Some(k) = alpha.iter().position(|a| !(a.is_finite() && *a > 0.0)) {
        return Err(Error::Precondition(format!(
            "Dirichlet concentration {k} is {}, must be finite and positive",
            alpha[k]
        )));
    }
    Ok(())
}

/// Draws one point of the simplex from `Dir(alpha)`.
pub fn sample(alpha: &[f64], rng: &mut impl Rng) -> Result<Vec<f64>> {
    check_alpha(alpha)?;
    let logs: Vec<f64> = alpha.iter().map(|&a| ln_gamma_sample(a, rng)).collect();
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let s: f64 = w.iter().sum();
    Ok(w.into_iter().map(|x| x / s).collect())
}

pub fn mean(alpha: &[f64]) -> Vec<f64> {
    let s: f64 = alpha.iter().sum();
    alpha.iter().map(|a| a / s).collect()
}

/// `ln a` after clamping into the interior of the simplex.
fn clamped_log(a: &[f64]) -> Vec<f64> {
    let c: Vec<f64> = a.iter().map(|x| x.clamp(ACTION_CLAMP, 1.0 - ACTION_CLAMP)).collect();
    let s: f64 = c.iter().sum();
    c.iter().map(|x| (x / s).ln()).collect()
}

/// `ln Γ(Σα) - Σ ln Γ(α_i) + Σ (α_i - 1) ln a_i`
pub fn log_prob(alpha: &[f64], a: &[f64]) -> Result<f64> {
    check_alpha(alpha)?;
    if alpha.len() != a.len() {
        return Err(Error::Dimension(format!(
            "Dirichlet has {} components, action has {}",
            alpha.len(),
            a.len()
        )));
    }
    let la = clamped_log(a);
    let s: f64 = alpha.iter().sum();
    Ok(ln_gamma(s) - alpha.iter().map(|&x| ln_gamma(x)).sum::<f64>()
        + alpha.iter().zip(&la).map(|(x, l)| (x - 1.0) * l).sum::<f64>())
}

/// `ln B(α) + (α₀ - K) ψ(α₀) - Σ (α_i - 1) ψ(α_i)`
pub fn entropy(alpha: &[f64]) -> Result<f64> {
    check_alpha(alpha)?;
    let k = alpha.len() as f64;
    let s: f64 = alpha.iter().sum();
    let ln_b = alpha.iter().map(|&x| ln_gamma(x)).sum::<f64>() - ln_gamma(s);
    Ok(ln_b + (s - k) * digamma(s) - alpha.iter().map(|&x| (x - 1.0) * digamma(x)).sum::<f64>())
}

/// Differentiable [`log_prob`]; `alpha` is an `N x 1` node.
pub fn log_prob_var(g: &mut Graph, alpha: Var, a: &[f64]) -> Result<Var> {
    let n = g.value(alpha).len();
    if n != a.len() {
        return Err(Error::Dimension(format!(
            "Dirichlet has {n} components, action has {}",
            a.len()
        )));
    }
    let shape = g.value(alpha).shape();
    let la = Tensor::from_vec(shape[0], shape[1], clamped_log(a));
    let s = g.sum(alpha);
    let lg_s = g.ln_gamma(s);
    let lg = g.ln_gamma(alpha);
    let lg = g.sum(lg);
    let am1 = g.add_scalar(alpha, -1.0);
    let t = g.mul_const(am1, la)?;
    let t = g.sum(t);
    let out = g.sub(lg_s, lg)?;
    g.add(out, t)
}

/// Differentiable [`entropy`].
pub fn entropy_var(g: &mut Graph, alpha: Var) -> Result<Var> {
    let k = g.value(alpha).len() as f64;
    let s = g.sum(alpha);
    let lg = g.ln_gamma(alpha);
    let lg = g.sum(lg);
    let lg_s = g.ln_gamma(s);
    let ln_b = g.sub(lg, lg_s)?;
    let sk = g.add_scalar(s, -k);
    let ps = g.digamma(s);
    let t1 = g.mul(sk, ps)?;
    let am1 = g.add_scalar(alpha, -1.0);
    let pa = g.digamma(alpha);
    let t2 = g.mul(am1, pa)?;
    let t2 = g.sum(t2);
    let out = g.add(ln_b, t1)?;
    g.sub(out, t2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::graph::tests::check_grad;
    use crate::seed::rng_from;

    #[test]
    fn uniform_density_on_two_simplex() {
        // Dir(1, 1) is uniform on a segment of length 1 in the first coordinate
        assert!(log_prob(&[1.0, 1.0], &[0.3, 0.7]).unwrap().abs() < 1e-12);
    }

    #[test]
    fn beta_two_two_at_half() {
        // 6 a (1 - a) at a = 1/2
        let lp = log_prob(&[2.0, 2.0], &[0.5, 0.5]).unwrap();
        assert!((lp - 1.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn samples_on_simplex_with_correct_mean() {
        let mut rng = rng_from(&[9]);
        let alpha = [0.5, 2.0, 7.5];
        let n = 20_000;
        let mut acc = [0.0; 3];
        for _ in 0..n {
            let a = sample(&alpha, &mut rng).unwrap();
            assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(a.iter().all(|&x| (0.0..=1.0).contains(&x)));
            for k in 0..3 {
                acc[k] += a[k];
            }
        }
        for (k, m) in mean(&alpha).iter().enumerate() {
            // standard error is below 0.002 for every component
            assert!((acc[k] / n as f64 - m).abs() < 0.01, "component {k}");
        }
    }

    #[test]
    fn tiny_concentrations_still_normalize() {
        let mut rng = rng_from(&[10]);
        for _ in 0..100 {
            let a = sample(&[1e-3; 5], &mut rng).unwrap();
            assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(a.iter().all(|x| x.is_finite()));
        }
    }

    #[test]
    fn sampling_is_deterministic_in_rng_state() {
        let a = sample(&[1.0, 2.0, 3.0], &mut rng_from(&[11])).unwrap();
        let b = sample(&[1.0, 2.0, 3.0], &mut rng_from(&[11])).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_concentration_rejected() {
        assert!(sample(&[1.0, 0.0], &mut rng_from(&[0])).is_err());
        assert!(log_prob(&[1.0, f64::NAN], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn graph_versions_match_and_differentiate() {
        let alpha = Tensor::column(vec![0.7, 1.9, 3.2, 0.2]);
        let action = [0.1, 0.2, 0.6, 0.1];
        let mut g = Graph::new();
        let v = g.input(alpha.clone());
        let lp = log_prob_var(&mut g, v, &action).unwrap();
        let h = entropy_var(&mut g, v).unwrap();
        assert!((g.value(lp).item() - log_prob(&alpha.data, &action).unwrap()).abs() < 1e-12);
        assert!((g.value(h).item() - entropy(&alpha.data).unwrap()).abs() < 1e-12);
        check_grad(&alpha, |g, v| log_prob_var(g, v, &action).unwrap());
        check_grad(&alpha, |g, v| entropy_var(g, v).unwrap());
    }

    #[test]
    fn entropy_of_uniform_is_zero() {
        // Dir(1, 1, 1) is uniform on a simplex of area 1/2
        assert!((entropy(&[1.0, 1.0, 1.0]).unwrap() - 0.5f64.ln()).abs() < 1e-12);
    }
}
