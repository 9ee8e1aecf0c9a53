use super::tape::Tensor;
use super::ModelError;

/// Adam with decoupled weight decay. Parameters and moments are kept at
/// f32 precision after every update so checkpoints reload bit-exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(params: &[Tensor], lr: f64) -> Self {
        AdamW {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            step: 0,
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    pub fn update(&mut self, params: &mut [Tensor], grads: &[Vec<f64>]) -> Result<(), ModelError> {
        if let Some(k) = grads.iter().position(|g| g.iter().any(|x| !x.is_finite())) {
            return Err(ModelError::NonFiniteGradient(k));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for i in 0..g.len() {
                let mi = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                let vi = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let step = mi / c1 / ((vi / c2).sqrt() + self.eps);
                let w = p.data[i];
                p.data[i] = round32(w - self.lr * (step + self.weight_decay * w));
                m[i] = round32(mi);
                v[i] = round32(vi);
            }
        }
        Ok(())
    }
}

fn round32(x: f64) -> f64 {
    x as f32 as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_scalar_formula() {
        let mut p = vec![Tensor::from_vec(1, 2, vec![0.5, -1.0])];
        let mut opt = AdamW::new(&p, 0.1);
        opt.update(&mut p, &[vec![0.2, 0.0]]).unwrap();
        // first step: m̂ = g, v̂ = g², so the step is g / (|g| + eps)
        let expect = 0.5 - 0.1 * (0.2 / (0.2 + 1e-8) + 0.01 * 0.5);
        assert_eq!(p[0].data[0], expect as f32 as f64);
        assert_eq!(p[0].data[1], (-1.0 - 0.1 * 0.01 * -1.0) as f32 as f64);
        assert_eq!(opt.step, 1);
    }

    #[test]
    fn zero_lr_keeps_params() {
        let mut p = vec![Tensor::from_vec(1, 3, vec![0.25, -2.0, 3.0])];
        let before = p.clone();
        let mut opt = AdamW::new(&p, 0.0);
        opt.update(&mut p, &[vec![1.0, -1.0, 0.5]]).unwrap();
        assert_eq!(p, before);
        assert!(opt.m[0].iter().all(|&x| x != 0.0));
    }

    #[test]
    fn rejects_non_finite() {
        let mut p = vec![Tensor::zeros(1, 1), Tensor::zeros(1, 1)];
        let mut opt = AdamW::new(&p, 0.1);
        let err = opt.update(&mut p, &[vec![0.0], vec![f64::NAN]]).unwrap_err();
        assert_eq!(err, ModelError::NonFiniteGradient(1));
        assert_eq!(opt.step, 0);
    }
}
