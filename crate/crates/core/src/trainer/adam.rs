use crate::linalg::Real;

#[derive(Debug, Clone)]
pub struct Adam<T> {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<T>,
    v: Vec<T>,
    t: i32,
}

impl<T: Real> Adam<T> {
    pub fn new(n: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps,
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [T], grad: &[T]) {
        assert_eq!(params.len(), grad.len());
        self.t += 1;
        let (b1, b2) = (T::of_f64(self.beta1), T::of_f64(self.beta2));
        let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let step = T::of_f64(self.lr * c2.sqrt() / c1);
        let eps = T::of_f64(self.eps * c2.sqrt());
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = b1 * self.m[i] + one_b1 * g;
            self.v[i] = b2 * self.v[i] + one_b2 * g * g;
            params[i] -= step * self.m[i] / (self.v[i].sqrt() + eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut opt = Adam::<f64>::new(2, 0.1, 0.9, 0.999, 1e-8);
        let mut p = vec![1.0, -1.0];
        opt.step(&mut p, &[3.0, -0.5]);
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn minimises_quadratic() {
        let mut opt = Adam::<f64>::new(1, 0.05, 0.9, 0.999, 1e-8);
        let mut p = vec![5.0];
        for _ in 0..2000 {
            let g = [2.0 * (p[0] - 2.0)];
            opt.step(&mut p, &g);
        }
        assert!((p[0] - 2.0).abs() < 1e-3);
    }
}
