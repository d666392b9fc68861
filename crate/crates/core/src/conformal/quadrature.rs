//! Gauss–Legendre rules on (0, 1).

/// Nodes and weights of an `n`-point Gauss–Legendre rule mapped to (0, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    /// Newton iteration on `P_n` from the Chebyshev-like initial guesses.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
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
                if dx.abs() < 1e-15 {
                    break;
                }
            }
            let (_, d) = legendre(n, x);
            dp = if d != 0.0 { d } else { dp };
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            // map [-1, 1] → [0, 1]
            nodes[i] = 0.5 * (1.0 - x);
            nodes[n - 1 - i] = 0.5 * (1.0 + x);
            weights[i] = 0.5 * w;
            weights[n - 1 - i] = 0.5 * w;
        }
        GaussLegendre { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `ln ∫₀¹ exp(g(ε)) dε` with max-shift stabilisation.
    pub fn log_integrate(&self, log_integrand: impl Fn(f64) -> f64) -> f64 {
        let terms: Vec<f64> = self
            .nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w.ln() + log_integrand(x))
            .collect();
        log_sum_exp(&terms)
    }
}

/// `(P_n(x), P_n'(x))` by the three-term recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

pub(crate) fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrates_polynomials_exactly() {
        let rule = GaussLegendre::new(8);
        assert!((rule.weights().iter().sum::<f64>() - 1.0).abs() < 1e-14);
        // exact through degree 15
        for k in 0..16 {
            let got: f64 = rule.nodes().iter().zip(rule.weights()).map(|(x, w)| w * x.powi(k)).sum();
            assert!((got - 1.0 / (k as f64 + 1.0)).abs() < 1e-14, "degree {k}");
        }
    }

    #[test]
    fn sixty_four_nodes_are_sorted_and_symmetric() {
        let rule = GaussLegendre::new(64);
        assert!(rule.nodes().windows(2).all(|p| p[0] < p[1]));
        assert!(rule.nodes()[0] > 0.0 && rule.nodes()[63] < 1.0);
        for i in 0..32 {
            assert!((rule.nodes()[i] + rule.nodes()[63 - i] - 1.0).abs() < 1e-15);
        }
        let lg = rule.log_integrate(|x| 2.0 * x.ln());
        assert!((lg - (1.0f64 / 3.0).ln()).abs() < 1e-13);
    }
}
