//! Dense feed-forward network with manual reverse-mode gradients.
//!
//! Parameters live in a caller-owned flat vector. Layer `l` maps
//! `sizes[l] -> sizes[l + 1]` and stores its weights input-major
//! (`w[i * out + o]`) followed by `out` biases, so a batched layer is one
//! row-major matrix product.

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the activation output.
    #[inline]
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    sizes: Vec<usize>,
    activation: Activation,
}

/// Per-layer activations of one batched forward pass.
#[derive(Debug, Clone)]
pub struct NetworkTrace {
    batch: usize,
    /// `layers[0]` is the input; `layers[l]` for `l >= 1` the post-activation
    /// output of layer `l - 1` (the last one is linear).
    layers: Vec<Vec<f64>>,
}

impl NetworkTrace {
    pub fn output(&self) -> &[f64] {
        self.layers.last().expect("trace has an input layer")
    }

    pub fn batch(&self) -> usize {
        self.batch
    }
}

impl Network {
    /// `sizes = [input, hidden.., output]`; hidden layers use `activation`,
    /// the output layer is linear.
    pub fn new(sizes: Vec<usize>, activation: Activation) -> Self {
        assert!(sizes.len() >= 2, "network needs input and output sizes");
        assert!(sizes.iter().all(|&s| s > 0), "layer sizes must be positive");
        Network { sizes, activation }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    fn layer_offsets(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let mut offset = 0;
        self.sizes.windows(2).map(move |w| {
            let start = offset;
            offset += w[0] * w[1] + w[1];
            (start, w[0], w[1])
        })
    }

    /// Uniform fan-in initialization `U(-1/sqrt(in), 1/sqrt(in))` for all
    /// weights, zero biases. The output layer's weights are scaled by
    /// `output_scale`.
    pub fn init_params<R: Rng + ?Sized>(&self, output_scale: f64, rng: &mut R) -> Vec<f64> {
        let mut params = vec![0.0; self.param_count()];
        let layers = self.sizes.len() - 1;
        for (l, (start, fan_in, fan_out)) in self.layer_offsets().enumerate() {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let scale = if l + 1 == layers { output_scale } else { 1.0 };
            for w in &mut params[start..start + fan_in * fan_out] {
                *w = scale * rng.random_range(-bound..bound);
            }
        }
        params
    }

    /// Index of the first output-layer bias in the flat parameter vector.
    pub fn output_bias_offset(&self) -> usize {
        self.param_count() - self.output_dim()
    }

    pub fn forward(&self, params: &[f64], xs: &[f64]) -> NetworkTrace {
        let input = self.input_dim();
        debug_assert_eq!(params.len(), self.param_count());
        debug_assert_eq!(xs.len() % input, 0);
        let batch = xs.len() / input;
        let layer_count = self.sizes.len() - 1;
        let mut layers = Vec::with_capacity(self.sizes.len());
        layers.push(xs.to_vec());
        for (l, (start, fan_in, fan_out)) in self.layer_offsets().enumerate() {
            let w = &params[start..start + fan_in * fan_out];
            let b = &params[start + fan_in * fan_out..start + fan_in * fan_out + fan_out];
            let prev = &layers[l];
            let mut out = Vec::with_capacity(batch * fan_out);
            for _ in 0..batch {
                out.extend_from_slice(b);
            }
            // out (batch x fan_out) += prev (batch x fan_in) * w (fan_in x fan_out)
            gemm(batch, fan_in, fan_out, prev, (fan_in, 1), w, (fan_out, 1), 1.0, &mut out);
            if l + 1 < layer_count {
                let act = self.activation;
                out.iter_mut().for_each(|v| *v = act.apply(*v));
            }
            layers.push(out);
        }
        NetworkTrace { batch, layers }
    }

    /// Accumulates `sum_k d_out[k] . d(output_k)/d(params)` into `grad`.
    ///
    /// `d_out` is `batch x output_dim`, row-major.
    pub fn backward(&self, params: &[f64], trace: &NetworkTrace, d_out: &[f64], grad: &mut [f64]) {
        debug_assert_eq!(grad.len(), self.param_count());
        debug_assert_eq!(d_out.len(), trace.batch * self.output_dim());
        let batch = trace.batch;
        let offsets: Vec<_> = self.layer_offsets().collect();
        let mut delta = d_out.to_vec();
        for l in (0..offsets.len()).rev() {
            let (start, fan_in, fan_out) = offsets[l];
            let input = &trace.layers[l];
            let (gw, rest) = grad[start..].split_at_mut(fan_in * fan_out);
            let gb = &mut rest[..fan_out];
            for d_row in delta.chunks_exact(fan_out) {
                for (g, &d) in gb.iter_mut().zip(d_row) {
                    *g += d;
                }
            }
            // gw (fan_in x fan_out) += input^T (fan_in x batch) * delta (batch x fan_out)
            gemm(fan_in, batch, fan_out, input, (1, fan_in), &delta, (fan_out, 1), 1.0, gw);
            if l == 0 {
                break;
            }
            let w = &params[start..start + fan_in * fan_out];
            // next (batch x fan_in) = delta (batch x fan_out) * w^T (fan_out x fan_in)
            let mut next = vec![0.0; batch * fan_in];
            gemm(batch, fan_out, fan_in, &delta, (fan_out, 1), w, (1, fan_out), 0.0, &mut next);
            let act = self.activation;
            for (n, &a) in next.iter_mut().zip(input) {
                *n *= act.derivative_from_output(a);
            }
            delta = next;
        }
    }
}

/// `c (m x n) = a (m x k) * b (k x n) + beta * c`, with `c` row-major and
/// `a`, `b` given by (row stride, column stride).
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(k == 0 || (m - 1) * rsa + (k - 1) * csa < a.len());
    assert!(k == 0 || (k - 1) * rsb + (n - 1) * csb < b.len());
    assert_eq!(c.len(), m * n);
    // SAFETY: the asserts above keep every strided access inside `a`, `b`
    // and `c`, and `c` is a unique borrow that aliases neither input.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
