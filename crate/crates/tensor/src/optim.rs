use crate::{Element, ParameterSet, Result, TensorError};

/// Stochastic gradient descent with a momentum buffer and L2 weight decay.
///
/// `v ← momentum·v + grad + weight_decay·θ`, then `θ ← θ − lr·v`.
#[derive(Clone, Debug)]
pub struct Sgd<T: Element = f32> {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Option<ParameterSet<T>>,
}

impl<T: Element> Sgd<T> {
    pub fn new(lr: f64, momentum: f64, weight_decay: f64) -> Result<Self> {
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(TensorError::InvalidArgument(format!("learning rate {lr}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(TensorError::InvalidArgument(format!("momentum {momentum}")));
        }
        if !(weight_decay >= 0.0 && weight_decay.is_finite()) {
            return Err(TensorError::InvalidArgument(format!(
                "weight decay {weight_decay}"
            )));
        }
        Ok(Sgd {
            lr,
            momentum,
            weight_decay,
            velocity: None,
        })
    }

    pub fn step(&mut self, params: &mut ParameterSet<T>, grads: &ParameterSet<T>) -> Result<()> {
        params.ensure_aligned(grads)?;
        let velocity = self.velocity.get_or_insert_with(|| params.zeros_like());
        velocity.ensure_aligned(params)?;
        let (mu, wd, lr) = (T::of(self.momentum), T::of(self.weight_decay), T::of(self.lr));
        for (((_, theta), (_, g)), (_, v)) in params
            .iter_mut()
            .zip(grads.iter())
            .zip(velocity.iter_mut())
        {
            for ((t, &gv), vv) in theta
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(v.data_mut().iter_mut())
            {
                *vv = mu * *vv + gv + wd * *t;
                *t = *t - lr * *vv;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Tensor;

    fn scalar_set(v: f64) -> ParameterSet<f64> {
        let mut p = ParameterSet::new();
        p.insert("theta", Tensor::scalar(v));
        p
    }

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        let mut p = scalar_set(0.7);
        let mut opt = Sgd::new(0.0, 0.9, 1e-4).unwrap();
        opt.step(&mut p, &scalar_set(123.0)).unwrap();
        assert_eq!(p, scalar_set(0.7));
    }

    #[test]
    fn single_plain_step() {
        let mut p = scalar_set(1.0);
        let mut opt = Sgd::new(0.1, 0.0, 0.0).unwrap();
        opt.step(&mut p, &scalar_set(1.0)).unwrap();
        assert!((p.get("theta").unwrap().item() - 0.9).abs() < 1e-15);
    }

    #[test]
    fn quadratic_bowl_converges() {
        // f(θ) = θ², ∇f = 2θ; each plain step multiplies θ by 0.8.
        let mut p = scalar_set(1.0);
        let mut opt = Sgd::new(0.1, 0.0, 0.0).unwrap();
        for _ in 0..100 {
            let theta = p.get("theta").unwrap().item();
            opt.step(&mut p, &scalar_set(2.0 * theta)).unwrap();
        }
        let theta = p.get("theta").unwrap().item();
        assert!(theta.abs() < 1e-8, "theta = {theta}");
        assert!((theta - 0.8f64.powi(100)).abs() < 1e-20);
    }

    #[test]
    fn misaligned_gradients_rejected() {
        let mut p = scalar_set(1.0);
        let mut g = ParameterSet::new();
        g.insert("other", Tensor::scalar(1.0));
        let mut opt = Sgd::new(0.1, 0.0, 0.0).unwrap();
        assert!(matches!(opt.step(&mut p, &g), Err(TensorError::Misaligned(_))));
    }

    #[test]
    fn momentum_and_decay_follow_update_rule() {
        let mut p = scalar_set(2.0);
        let mut opt = Sgd::new(0.5, 0.5, 0.1).unwrap();
        opt.step(&mut p, &scalar_set(1.0)).unwrap();
        // v = 1 + 0.2 = 1.2; θ = 2 - 0.6 = 1.4
        assert!((p.get("theta").unwrap().item() - 1.4).abs() < 1e-12);
        opt.step(&mut p, &scalar_set(1.0)).unwrap();
        // v = 0.6 + 1 + 0.14 = 1.74; θ = 1.4 - 0.87 = 0.53
        assert!((p.get("theta").unwrap().item() - 0.53).abs() < 1e-12);
    }
}
