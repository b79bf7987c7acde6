use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment estimates for a flat parameter list.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    /// Number of updates applied so far.
    pub t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(param_count: usize) -> Self {
        AdamState {
            t: 0,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
        }
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }

    /// One bias-corrected Adam update over a sequence of parameter tensors.
    /// Tensors must be passed in the same order and with the same total
    /// length on every call.
    pub fn step<'a, I>(&mut self, cfg: &AdamConfig, tensors: I)
    where
        I: IntoIterator<Item = (&'a mut [f64], &'a [f64])>,
    {
        self.t += 1;
        let t = self.t as i32;
        let correct1 = 1.0 - cfg.beta1.powi(t);
        let correct2 = 1.0 - cfg.beta2.powi(t);
        let mut offset = 0;
        for (params, grads) in tensors {
            assert_eq!(
                params.len(),
                grads.len(),
                "parameter/gradient shape mismatch"
            );
            let end = offset + params.len();
            let m = &mut self.m[offset..end];
            let v = &mut self.v[offset..end];
            for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(m).zip(v) {
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                let m_hat = *m / correct1;
                let v_hat = *v / correct2;
                *p -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
            }
            offset = end;
        }
        assert_eq!(
            offset,
            self.m.len(),
            "optimizer state does not match parameters"
        );
    }
}
