use super::array::ParamSet;
use crate::{Error, Result};

/// Adam with bias-corrected moments. Moment buffers follow the parameter set's order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step_count: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &ParamSet, learning_rate: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, p)| vec![0.0; p.len()]).collect();
        AdamState {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step_count: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn first_moment(&self) -> &[Vec<f64>] {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &[Vec<f64>] {
        &self.second_moment
    }

    pub(crate) fn from_parts(
        learning_rate: f64,
        step_count: u64,
        first_moment: Vec<Vec<f64>>,
        second_moment: Vec<Vec<f64>>,
    ) -> Self {
        AdamState {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step_count,
            first_moment,
            second_moment,
        }
    }

    /// One update of every parameter; gradients are zeroed afterwards.
    pub fn step(&mut self, params: &mut ParamSet) -> Result<()> {
        if params.len() != self.first_moment.len() {
            return Err(Error::Contract(format!(
                "optimizer tracks {} parameters, set has {}",
                self.first_moment.len(),
                params.len()
            )));
        }
        if let Some((name, _)) = params.iter().find(|(_, p)| p.grad().is_none()) {
            return Err(Error::Contract(format!("parameter `{name}` has no gradient")));
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (i, (name, p)) in params.iter_mut().enumerate() {
            let g = p.grad().expect("checked above").to_vec();
            let (m, v) = (&mut self.first_moment[i], &mut self.second_moment[i]);
            for (j, w) in p.values_mut().iter_mut().enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let mhat = m[j] / c1;
                let vhat = v[j] / c2;
                *w -= self.learning_rate * mhat / (vhat.sqrt() + self.epsilon);
            }
            if p.values().iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("adam update of `{name}`")));
            }
            p.zero_grad();
        }
        Ok(())
    }
}
