use super::net::{Gradients, ProposalNet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam moments for a list of parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    /// State for tensors of the given lengths.
    pub fn with_shapes(config: AdamConfig, shapes: &[usize]) -> Result<Self> {
        if !(config.lr >= 0.0
            && (0.0..1.0).contains(&config.beta1)
            && (0.0..1.0).contains(&config.beta2)
            && config.eps > 0.0)
        {
            return Err(Error::config("invalid optimizer settings"));
        }
        Ok(Adam {
            config,
            step: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        })
    }

    /// State for every weight and bias tensor of `net`.
    pub fn new(config: AdamConfig, net: &ProposalNet) -> Result<Self> {
        let shapes: Vec<usize> = net.convs().flat_map(|c| [c.weight.len(), c.bias.len()]).collect();
        Adam::with_shapes(config, &shapes)
    }

    pub fn step_tensors(&mut self, params: Vec<&mut [f64]>, grads: Vec<&[f64]>) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::shape("tensor count does not match the optimizer state"));
        }
        if params.iter().zip(&grads).zip(&self.m).any(|((p, g), m)| p.len() != m.len() || g.len() != m.len()) {
            return Err(Error::shape("gradient shape does not match its parameter"));
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            }
        }
        Ok(())
    }

    pub fn update(&mut self, net: &mut ProposalNet, grads: &Gradients) -> Result<()> {
        let params: Vec<&mut [f64]> =
            net.convs_mut().flat_map(|c| [c.weight.as_mut_slice(), c.bias.as_mut_slice()]).collect();
        let grads: Vec<&[f64]> = grads.convs.iter().flat_map(|g| [g.weight.as_slice(), g.bias.as_slice()]).collect();
        self.step_tensors(params, grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut adam = Adam::with_shapes(AdamConfig { lr: 0.1, ..AdamConfig::default() }, &[2]).unwrap();
        let mut p = vec![1.0, -1.0];
        adam.step_tensors(vec![&mut p], vec![&[3.0, -0.5]]).unwrap();
        assert!((p[0] - 0.9).abs() < 1e-6 && (p[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut adam = Adam::with_shapes(AdamConfig { lr: 0.05, ..AdamConfig::default() }, &[1]).unwrap();
        let mut x = vec![2.0];
        for _ in 0..500 {
            let g = [2.0 * (x[0] - 0.5)];
            adam.step_tensors(vec![&mut x], vec![&g]).unwrap();
        }
        assert!((x[0] - 0.5).abs() < 1e-2);
    }

    #[test]
    fn rejects_bad_settings_and_shapes() {
        assert!(Adam::with_shapes(AdamConfig { beta1: 1.0, ..AdamConfig::default() }, &[1]).is_err());
        let mut adam = Adam::with_shapes(AdamConfig::default(), &[2]).unwrap();
        let mut p = vec![0.0];
        assert!(adam.step_tensors(vec![&mut p], vec![&[0.0]]).is_err());
    }
}
