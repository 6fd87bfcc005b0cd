//! Gauss-Legendre quadrature nodes and weights.
//!
//! Nodes are the roots of the Legendre polynomial P_n, found by Newton
//! iteration from the Chebyshev-angle initial guess; weights follow from the
//! derivative identity w_i = 2 / ((1 - x^2) P_n'(x)^2). Rules are cached per
//! order since the same order is requested millions of times in the marginal
//! likelihood hot path.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

/// A quadrature rule on the reference interval [-1, 1].
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    /// Build the order-n rule from scratch.
    pub fn build(n: usize) -> Self {
        assert!(n >= 1, "quadrature order must be >= 1");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        // Roots come in +- pairs; solve the lower half and mirror.
        let m = n.div_ceil(2);
        for i in 0..m {
            // Chebyshev-like initial guess for root i (descending order).
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                // Evaluate P_n and P_n' by the three-term recurrence.
                let (mut p0, mut p1) = (1.0, x);
                for j in 2..=n {
                    let p2 = ((2 * j - 1) as f64 * x * p1 - (j - 1) as f64 * p0) / j as f64;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let step = p1 / dp;
                x -= step;
                if step.abs() < 1e-15 {
                    break;
                }
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            // Store ascending: the i-th pair is (-|x|, +|x|).
            nodes[i] = -x.abs();
            weights[i] = w;
            nodes[n - 1 - i] = -nodes[i];
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        Self { nodes, weights }
    }

    /// Nodes and weights mapped onto [a, b].
    pub fn mapped(&self, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        let nodes = self.nodes.iter().map(|x| mid + half * x).collect();
        let weights = self.weights.iter().map(|w| w * half).collect();
        (nodes, weights)
    }
}

/// Cached rule for the given order.
pub fn gauss_legendre(n: usize) -> GaussLegendre {
    static CACHE: OnceLock<Mutex<HashMap<usize, GaussLegendre>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut map = cache.lock().expect("quadrature cache poisoned");
    map.entry(n).or_insert_with(|| GaussLegendre::build(n)).clone()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrates_polynomials_exactly() {
        // Order n is exact for degree 2n - 1.
        let rule = gauss_legendre(8);
        let mut integral = 0.0;
        for (x, w) in rule.nodes.iter().zip(&rule.weights) {
            integral += w * (3.0 * x.powi(15) + x.powi(14) - 2.0 * x * x + 1.0);
        }
        // Odd terms vanish; int_-1^1 x^14 = 2/15, x^2 = 2/3.
        let expect = 2.0 / 15.0 - 2.0 * (2.0 / 3.0) + 2.0;
        assert!((integral - expect).abs() < 1e-13, "got {integral}, want {expect}");
    }

    #[test]
    fn weights_sum_to_interval_length() {
        for n in [1, 2, 3, 16, 32, 64] {
            let rule = gauss_legendre(n);
            let s: f64 = rule.weights.iter().sum();
            assert!((s - 2.0).abs() < 1e-12, "order {n}: {s}");
            // Nodes ascending and inside the interval.
            assert!(rule.nodes.windows(2).all(|w| w[0] < w[1]) || n == 1);
            assert!(rule.nodes.iter().all(|x| x.abs() <= 1.0));
        }
    }

    #[test]
    fn mapped_rule_integrates_on_shifted_interval() {
        let rule = gauss_legendre(32);
        let (nodes, weights) = rule.mapped(0.0, 6.0);
        // int_0^6 u exp(-u^2/2) du = 1 - exp(-18)
        let integral: f64 =
            nodes.iter().zip(&weights).map(|(u, w)| w * u * (-u * u / 2.0).exp()).sum();
        assert!((integral - (1.0 - (-18.0f64).exp())).abs() < 1e-10);
    }

    #[test]
    fn self_convergence_on_smooth_integrand() {
        let f = |x: f64| (2.0 * x).sin().exp();
        let eval = |n: usize| -> f64 {
            let rule = gauss_legendre(n);
            rule.nodes.iter().zip(&rule.weights).map(|(x, w)| w * f(*x)).sum()
        };
        let (a, b) = (eval(32), eval(64));
        assert!((a - b).abs() < 1e-13 * b.abs());
    }
}
