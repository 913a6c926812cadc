use super::{Gradients, NumError, ParamSet, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..Self::default()
        }
    }
}

/// Bias-corrected Adam with per-parameter moment estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl Adam {
    pub fn new(params: &ParamSet, config: AdamConfig) -> Self {
        let zeros = |ps: &ParamSet| ps.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        Adam {
            config,
            step: 0,
            first: zeros(params),
            second: zeros(params),
        }
    }

    /// Rebuilds optimizer state from saved moments.
    pub fn from_state(
        config: AdamConfig,
        step: u64,
        first: Vec<Tensor>,
        second: Vec<Tensor>,
    ) -> Result<Self, NumError> {
        if first.len() != second.len()
            || first
                .iter()
                .zip(&second)
                .any(|(a, b)| a.shape() != b.shape())
        {
            return Err(NumError::Shape("adam moments disagree in shape".into()));
        }
        Ok(Adam {
            config,
            step,
            first,
            second,
        })
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Tensor] {
        &self.first
    }

    pub fn second_moments(&self) -> &[Tensor] {
        &self.second
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &Gradients) -> Result<(), NumError> {
        if grads.tensors().len() != params.len() || self.first.len() != params.len() {
            return Err(NumError::Shape(format!(
                "{} parameters, {} gradients, {} moment slots",
                params.len(),
                grads.tensors().len(),
                self.first.len()
            )));
        }
        for (id, g) in params.ids().zip(grads.tensors()) {
            if g.shape() != params.get(id).shape() || self.first[id.index()].shape() != g.shape() {
                return Err(NumError::Shape(format!(
                    "gradient shape {:?} for parameter {} of shape {:?}",
                    g.shape(),
                    params.name(id),
                    params.get(id).shape()
                )));
            }
        }

        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            let i = id.index();
            let g = grads.tensors()[i].data();
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            let p = params.get_mut(id).data_mut();
            for k in 0..g.len() {
                m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
                v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
                let m_hat = m[k] / c1;
                let v_hat = v[k] / c2;
                p[k] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
