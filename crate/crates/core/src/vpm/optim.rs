use serde::{Deserialize, Serialize};

/// First-order update rule shared by the primal and dual variables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    /// Adam with `beta1 = 0.5` and the usual `beta2`, `eps`.
    pub const fn adam_default() -> Self {
        Optimizer::Adam {
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// Step `delta` to be *added* for ascent (subtracted for descent).
    pub fn step(&self, moments: &mut AdamMoments, g: &[f64], rate: f64) -> Vec<f64> {
        match *self {
            Optimizer::Sgd => g.iter().map(|&gi| rate * gi).collect(),
            Optimizer::Adam { beta1, beta2, eps } => adam_step(moments, g, rate, beta1, beta2, eps),
        }
    }
}

impl Default for Optimizer {
    fn default() -> Self {
        Self::adam_default()
    }
}

/// Running first and second moments plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamMoments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamMoments {
    pub fn zeros(len: usize) -> Self {
        AdamMoments {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn reset(&mut self) {
        self.m.iter_mut().for_each(|x| *x = 0.0);
        self.v.iter_mut().for_each(|x| *x = 0.0);
        self.t = 0;
    }
}

/// Bias-corrected Adam step `rate * m_hat / (sqrt(v_hat) + eps)`.
pub fn adam_step(moments: &mut AdamMoments, g: &[f64], rate: f64, beta1: f64, beta2: f64, eps: f64) -> Vec<f64> {
    assert_eq!(moments.m.len(), g.len(), "moment vectors must align with the gradient");
    moments.t += 1;
    let t = moments.t as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    g.iter()
        .zip(moments.m.iter_mut().zip(moments.v.iter_mut()))
        .map(|(&gi, (m, v))| {
            *m = beta1 * *m + (1.0 - beta1) * gi;
            *v = beta2 * *v + (1.0 - beta2) * gi * gi;
            rate * (*m / c1) / ((*v / c2).sqrt() + eps)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_gives_zero_step() {
        let mut mo = AdamMoments::zeros(3);
        assert_eq!(adam_step(&mut mo, &[0.0; 3], 0.1, 0.5, 0.999, 1e-8), vec![0.0; 3]);
    }

    #[test]
    fn constant_gradient_step_tends_to_rate() {
        let mut mo = AdamMoments::zeros(2);
        let mut last = vec![];
        for _ in 0..5000 {
            last = adam_step(&mut mo, &[3.0, -0.2], 0.01, 0.5, 0.999, 1e-8);
        }
        assert!((last[0] - 0.01).abs() < 1e-8);
        assert!((last[1] + 0.01).abs() < 1e-8);
    }

    #[test]
    fn first_step_is_rate_times_sign() {
        let mut mo = AdamMoments::zeros(1);
        let d = adam_step(&mut mo, &[-7.0], 0.3, 0.5, 0.999, 1e-8);
        assert!((d[0] + 0.3).abs() < 1e-9);
    }

    #[test]
    fn deterministic() {
        let run = || {
            let mut mo = AdamMoments::zeros(2);
            (0..10)
                .map(|k| adam_step(&mut mo, &[k as f64, 1.0 / (k + 1) as f64], 0.1, 0.5, 0.999, 1e-8))
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }
}
