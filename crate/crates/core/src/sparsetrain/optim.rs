use super::network::{Gradients, Network};
use super::scalar::Scalar;
use super::TrainError;

/// Momentum SGD: `v = momentum * v + g`, `w -= lr * v`, where `g` includes
/// the weight-decay gradient `2 * weight_decay * w`.
#[derive(Debug, Clone)]
pub struct Sgd<T> {
    pub lr: f64,
    pub momentum: f64,
    velocity: Vec<T>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(lr: f64, momentum: f64) -> Self {
        Self {
            lr,
            momentum,
            velocity: Vec::new(),
        }
    }

    pub fn reset(&mut self) {
        self.velocity.clear();
    }

    /// Applies one update. `grads` must come from [`Network::backward`];
    /// weight decay is added here.
    pub fn step(&mut self, net: &mut Network<T>, grads: &Gradients<T>) -> Result<(), TrainError> {
        let mut g = grads.clone();
        net.add_weight_decay(&mut g);
        let total = net.parameter_count();
        if self.velocity.is_empty() {
            self.velocity = vec![T::zero(); total];
        }
        let shapes_match = g.0.len() == net.params().len()
            && g.0.iter().zip(net.params()).all(|(a, b)| match (a, b) {
                (Some(a), Some(b)) => a.w.len() == b.w.len() && a.b.len() == b.b.len(),
                (None, None) => true,
                _ => false,
            });
        if !shapes_match || self.velocity.len() != total {
            return Err(TrainError::Config("gradient shapes do not match the network".into()));
        }
        let lr = T::of(self.lr);
        let mu = T::of(self.momentum);
        let mut vi = self.velocity.iter_mut();
        for (p, gp) in net.params_mut().iter_mut().zip(&g.0) {
            if let (Some(p), Some(gp)) = (p.as_mut(), gp.as_ref()) {
                for (w, &gv) in p.w.iter_mut().zip(&gp.w).chain(p.b.iter_mut().zip(&gp.b)) {
                    let v = vi.next().expect("sized to parameter count");
                    *v = mu * *v + gv;
                    *w -= lr * *v;
                }
            }
        }
        Ok(())
    }
}
