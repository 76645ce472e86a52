//! Composite Gauss–Legendre quadrature on fixed panel breaks.

use crate::par::{self, Execution};

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n > 0, "Gauss-Legendre order must be positive");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// `(P_n(x), P_n'(x))` by the three-term recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Quadrature points over `[breaks[0], breaks[last]]`: every interval between
/// consecutive breaks is split into `subpanels` equal pieces carrying an `order`-point rule.
pub fn composite_nodes(breaks: &[f64], subpanels: usize, order: usize) -> Vec<(f64, f64)> {
    let (x, w) = gauss_legendre(order);
    let mut out = Vec::with_capacity((breaks.len() - 1) * subpanels * order);
    for pair in breaks.windows(2) {
        let h = (pair[1] - pair[0]) / subpanels as f64;
        for s in 0..subpanels {
            let a = pair[0] + s as f64 * h;
            for (xi, wi) in x.iter().zip(&w) {
                out.push((a + 0.5 * h * (xi + 1.0), 0.5 * h * wi));
            }
        }
    }
    out
}

/// Result of an integration with doubling-based error control.
#[derive(Debug, Clone, PartialEq)]
pub struct Integral {
    /// One value per integrand component.
    pub values: Vec<f64>,
    /// Largest absolute change between the last two refinements.
    pub error: f64,
    pub subpanels: usize,
    pub converged: bool,
}

/// Integrates a vector-valued function, doubling the subpanel count until the
/// relative change in every component is below `rel_tol` or `max_subpanels` is reached.
pub fn integrate_vec<F>(
    exec: Execution,
    breaks: &[f64],
    order: usize,
    initial_subpanels: usize,
    max_subpanels: usize,
    rel_tol: f64,
    f: F,
) -> Integral
where
    F: Fn(f64) -> Vec<f64> + Sync + Send,
{
    let eval = |sub: usize| -> Vec<f64> {
        let nodes = composite_nodes(breaks, sub, order);
        let vals = par::map_slice(exec, &nodes, |&(x, w)| {
            let mut v = f(x);
            v.iter_mut().for_each(|y| *y *= w);
            v
        });
        let mut acc = vec![0.0; vals.first().map_or(0, Vec::len)];
        for v in &vals {
            for (a, b) in acc.iter_mut().zip(v) {
                *a += b;
            }
        }
        acc
    };
    let mut sub = initial_subpanels.max(1);
    let mut prev = eval(sub);
    loop {
        let next_sub = sub * 2;
        let next = eval(next_sub);
        let error = prev
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let scale = next.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let converged = error <= rel_tol * scale.max(f64::MIN_POSITIVE);
        if converged || next_sub >= max_subpanels {
            return Integral {
                values: next,
                error,
                subpanels: next_sub,
                converged,
            };
        }
        sub = next_sub;
        prev = next;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn rule_integrates_polynomials_exactly() {
        for n in [1usize, 2, 5, 16, 32] {
            let (x, w) = gauss_legendre(n);
            assert_relative_eq!(w.iter().sum::<f64>(), 2.0, epsilon = 1e-13);
            for deg in 0..2 * n {
                let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32)).sum();
                let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
                assert!((q - exact).abs() < 1e-13, "n={n} deg={deg}");
            }
        }
    }

    #[test]
    fn composite_exponential() {
        let r = integrate_vec(Execution::Sequential, &[0.0, 1.0, 3.0], 8, 1, 1024, 1e-13, |x| {
            vec![(-x).exp(), x * x]
        });
        assert!(r.converged);
        assert_relative_eq!(r.values[0], 1.0 - (-3.0f64).exp(), epsilon = 1e-13);
        assert_relative_eq!(r.values[1], 9.0, epsilon = 1e-12);
    }

    #[test]
    fn jump_on_break_is_exact() {
        let f = |x: f64| vec![if x <= 0.0 { 1.0 } else { -2.0 }];
        let r = integrate_vec(Execution::Parallel, &[-1.0, 0.0, 1.0], 4, 1, 8, 1e-12, f);
        assert_relative_eq!(r.values[0], -1.0, epsilon = 1e-14);
    }
}
