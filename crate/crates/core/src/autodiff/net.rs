//! Dense feed-forward networks: ReLU hidden layers, identity output.
//!
//! Two differentiation routes exist and must agree: a hand-rolled layer-wise
//! backward pass (`forward_cached` + `backprop`, the fast path used by the
//! trainers) and a replay of the same arithmetic on the scalar [`Tape`]
//! (`forward_tape`, used where the loss head needs graph-level chain rules).

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Fully connected network. Weights are stored row-major per layer:
/// `weights[l][o * in + i]` connects input `i` to output `o` of layer `l`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DenseNet {
    layer_sizes: Vec<usize>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    /// Activation tag; only "relu" (hidden layers) is defined.
    activation: String,
}

impl DenseNet {
    /// He-uniform initialization: W ~ U(-sqrt(6/fan_in), +sqrt(6/fan_in)), b = 0.
    pub fn new(layer_sizes: &[usize], rng: &mut impl Rng) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::invalid("DenseNet::new", "need at least input and output sizes"));
        }
        if layer_sizes.iter().any(|&s| s == 0) {
            return Err(Error::invalid("DenseNet::new", "layer sizes must be positive"));
        }
        let mut weights = Vec::with_capacity(layer_sizes.len() - 1);
        let mut biases = Vec::with_capacity(layer_sizes.len() - 1);
        for w in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / fan_in as f64).sqrt();
            let layer: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| rng.gen_range(-limit..limit))
                .collect();
            weights.push(layer);
            biases.push(vec![0.0; fan_out]);
        }
        Ok(DenseNet {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
            activation: "relu".to_string(),
        })
    }

    /// All-zero parameters; useful for constructing nets whose output is a
    /// pure bias (and in tests).
    pub fn zeroed(layer_sizes: &[usize]) -> Result<Self> {
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let mut net = Self::new(layer_sizes, &mut rng)?;
        for w in &mut net.weights {
            w.iter_mut().for_each(|x| *x = 0.0);
        }
        Ok(net)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn bias_mut(&mut self, layer: usize) -> &mut [f64] {
        &mut self.biases[layer]
    }

    pub fn weight_mut(&mut self, layer: usize) -> &mut [f64] {
        &mut self.weights[layer]
    }

    /// Total parameter count (weights + biases).
    pub fn param_count(&self) -> usize {
        self.weights.iter().map(Vec::len).sum::<usize>() + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    /// Flattens parameters as [w0, b0, w1, b1, ...] with weights row-major.
    /// This order is shared by `load_flat`, the Adam state, and `forward_tape`.
    pub fn flatten(&self, out: &mut Vec<f64>) {
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
    }

    /// Inverse of [`DenseNet::flatten`].
    pub fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::ShapeMismatch {
                context: "DenseNet::load_flat",
                expected: self.param_count(),
                actual: flat.len(),
            });
        }
        let mut ofs = 0;
        for (w, b) in self.weights.iter_mut().zip(&mut self.biases) {
            let wlen = w.len();
            w.copy_from_slice(&flat[ofs..ofs + wlen]);
            ofs += wlen;
            let blen = b.len();
            b.copy_from_slice(&flat[ofs..ofs + blen]);
            ofs += blen;
        }
        Ok(())
    }

    fn check_input(&self, len: usize) -> Result<()> {
        if len != self.input_dim() {
            return Err(Error::ShapeMismatch {
                context: "DenseNet forward",
                expected: self.input_dim(),
                actual: len,
            });
        }
        Ok(())
    }

    /// Plain forward pass.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input.len())?;
        let last = self.num_layers() - 1;
        let mut x = input.to_vec();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let fan_in = self.layer_sizes[l];
            let mut y = vec![0.0; b.len()];
            for (o, yo) in y.iter_mut().enumerate() {
                let row = &w[o * fan_in..(o + 1) * fan_in];
                let mut acc = b[o];
                for (wi, xi) in row.iter().zip(&x) {
                    acc += wi * xi;
                }
                *yo = if l < last { acc.max(0.0) } else { acc };
            }
            x = y;
        }
        Ok(x)
    }

    /// Forward pass that records post-activation values per layer so that
    /// [`DenseNet::backprop`] can run afterwards. `cache.activations[0]` is
    /// the input itself and the last entry is the network output.
    pub fn forward_cached(&self, input: &[f64], cache: &mut NetCache) -> Result<()> {
        self.check_input(input.len())?;
        cache.ensure_layout(&self.layer_sizes);
        cache.activations[0].copy_from_slice(input);
        let last = self.num_layers() - 1;
        for l in 0..self.weights.len() {
            let fan_in = self.layer_sizes[l];
            let (prev, next) = cache.activations.split_at_mut(l + 1);
            let x = &prev[l];
            let y = &mut next[0];
            let w = &self.weights[l];
            let b = &self.biases[l];
            for (o, yo) in y.iter_mut().enumerate() {
                let row = &w[o * fan_in..(o + 1) * fan_in];
                let mut acc = b[o];
                for (wi, xi) in row.iter().zip(x.iter()) {
                    acc += wi * xi;
                }
                *yo = if l < last { acc.max(0.0) } else { acc };
            }
        }
        Ok(())
    }

    /// Accumulates parameter gradients for one sample into `grads`
    /// (flattened layout), given d(loss)/d(output). Must follow a
    /// `forward_cached` call on the same cache.
    ///
    /// ReLU kinks use subgradient 0: a hidden unit whose post-activation is
    /// exactly 0 passes no gradient, matching the tape.
    pub fn backprop(&self, cache: &NetCache, d_output: &[f64], grads: &mut [f64]) -> Result<()> {
        if d_output.len() != self.output_dim() {
            return Err(Error::ShapeMismatch {
                context: "DenseNet backprop",
                expected: self.output_dim(),
                actual: d_output.len(),
            });
        }
        if grads.len() != self.param_count() {
            return Err(Error::ShapeMismatch {
                context: "DenseNet backprop grads",
                expected: self.param_count(),
                actual: grads.len(),
            });
        }
        // Per-layer flat offsets mirror `flatten`.
        let mut offsets = Vec::with_capacity(self.num_layers());
        let mut ofs = 0;
        for (w, b) in self.weights.iter().zip(&self.biases) {
            offsets.push(ofs);
            ofs += w.len() + b.len();
        }

        let mut delta = d_output.to_vec();
        for l in (0..self.num_layers()).rev() {
            let fan_in = self.layer_sizes[l];
            let x = &cache.activations[l];
            let w = &self.weights[l];
            let base = offsets[l];
            let wlen = w.len();
            // dW[o][i] += delta[o] * x[i]; db[o] += delta[o]
            for (o, &d) in delta.iter().enumerate() {
                if d != 0.0 {
                    let row = &mut grads[base + o * fan_in..base + (o + 1) * fan_in];
                    for (g, xi) in row.iter_mut().zip(x.iter()) {
                        *g += d * xi;
                    }
                }
                grads[base + wlen + o] += d;
            }
            if l == 0 {
                break;
            }
            // delta_prev[i] = sum_o W[o][i] * delta[o], masked by ReLU activity.
            let mut prev = vec![0.0; fan_in];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &w[o * fan_in..(o + 1) * fan_in];
                for (p, wi) in prev.iter_mut().zip(row.iter()) {
                    *p += wi * d;
                }
            }
            for (p, &a) in prev.iter_mut().zip(x.iter()) {
                if a <= 0.0 {
                    *p = 0.0;
                }
            }
            delta = prev;
        }
        Ok(())
    }

    /// Registers every parameter as a tape leaf, in `flatten` order.
    pub fn params_to_tape(&self, tape: &mut Tape) -> Vec<Var> {
        let mut vars = Vec::with_capacity(self.param_count());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            for &p in w {
                vars.push(tape.leaf(p));
            }
            for &p in b {
                vars.push(tape.leaf(p));
            }
        }
        vars
    }

    /// Replays the forward pass on the tape. `params` must come from
    /// [`DenseNet::params_to_tape`] (same order, same tape).
    pub fn forward_tape(&self, tape: &mut Tape, params: &[Var], input: &[Var]) -> Result<Vec<Var>> {
        self.check_input(input.len())?;
        if params.len() != self.param_count() {
            return Err(Error::ShapeMismatch {
                context: "DenseNet::forward_tape params",
                expected: self.param_count(),
                actual: params.len(),
            });
        }
        let last = self.num_layers() - 1;
        let mut x: Vec<Var> = input.to_vec();
        let mut ofs = 0;
        for l in 0..self.num_layers() {
            let fan_in = self.layer_sizes[l];
            let fan_out = self.layer_sizes[l + 1];
            let mut y = Vec::with_capacity(fan_out);
            for o in 0..fan_out {
                let row = &params[ofs + o * fan_in..ofs + (o + 1) * fan_in];
                let mut acc = params[ofs + fan_in * fan_out + o]; // bias
                for (&wi, &xi) in row.iter().zip(&x) {
                    let p = tape.mul(wi, xi);
                    acc = tape.add(acc, p);
                }
                y.push(if l < last { tape.relu(acc) } else { acc });
            }
            ofs += fan_in * fan_out + fan_out;
            x = y;
        }
        Ok(x)
    }
}

/// Reusable per-sample activation buffers for `forward_cached`/`backprop`.
#[derive(Debug, Default, Clone)]
pub struct NetCache {
    activations: Vec<Vec<f64>>,
}

impl NetCache {
    pub fn new() -> Self {
        Self::default()
    }

    fn ensure_layout(&mut self, layer_sizes: &[usize]) {
        if self.activations.len() != layer_sizes.len()
            || self
                .activations
                .iter()
                .zip(layer_sizes)
                .any(|(a, &s)| a.len() != s)
        {
            self.activations = layer_sizes.iter().map(|&s| vec![0.0; s]).collect();
        }
    }

    /// Network output of the last `forward_cached` call.
    pub fn output(&self) -> &[f64] {
        self.activations.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weights_output_bias() {
        let mut net = DenseNet::zeroed(&[3, 4, 2]).unwrap();
        net.bias_mut(1).copy_from_slice(&[0.5, -1.5]);
        let y = net.forward(&[9.0, -3.0, 7.0]).unwrap();
        assert_eq!(y, vec![0.5, -1.5]);
    }

    #[test]
    fn single_linear_layer_matrix_product() {
        let mut net = DenseNet::zeroed(&[2, 2]).unwrap();
        net.weight_mut(0).copy_from_slice(&[2.0, 0.0, 0.0, 3.0]);
        let y = net.forward(&[1.0, 1.0]).unwrap();
        assert_eq!(y, vec![2.0, 3.0]);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let net = DenseNet::zeroed(&[3, 1]).unwrap();
        assert!(matches!(
            net.forward(&[1.0, 2.0]),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    /// Independent forward-pass oracle: an explicitly coded matrix-multiply
    /// recomputation, sharing no code with `DenseNet::forward`.
    fn reference_forward(net: &DenseNet, input: &[f64]) -> Vec<f64> {
        let sizes = net.layer_sizes();
        let mut x = input.to_vec();
        for l in 0..net.num_layers() {
            let (n_in, n_out) = (sizes[l], sizes[l + 1]);
            let mut y = vec![0.0; n_out];
            for o in 0..n_out {
                let mut s = net.biases[l][o];
                for i in 0..n_in {
                    s += net.weights[l][o * n_in + i] * x[i];
                }
                y[o] = s;
            }
            if l < net.num_layers() - 1 {
                for v in &mut y {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            x = y;
        }
        x
    }

    #[test]
    fn random_net_matches_independent_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let net = DenseNet::new(&[4, 6, 5, 3], &mut rng).unwrap();
        for _ in 0..20 {
            let input: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let a = net.forward(&input).unwrap();
            let b = reference_forward(&net, &input);
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-12, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn seeded_init_is_reproducible() {
        let a = DenseNet::new(&[5, 8, 1], &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        let b = DenseNet::new(&[5, 8, 1], &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        let (mut fa, mut fb) = (Vec::new(), Vec::new());
        a.flatten(&mut fa);
        b.flatten(&mut fb);
        assert_eq!(fa, fb);
    }

    #[test]
    fn tape_forward_matches_plain() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = DenseNet::new(&[3, 5, 2], &mut rng).unwrap();
        let input = [0.3, -1.2, 0.8];
        let plain = net.forward(&input).unwrap();

        let mut tape = Tape::new();
        let params = net.params_to_tape(&mut tape);
        let in_vars: Vec<Var> = input.iter().map(|&v| tape.constant(v)).collect();
        let out = net.forward_tape(&mut tape, &params, &in_vars).unwrap();
        for (v, &p) in out.iter().zip(&plain) {
            assert!((tape.value(*v) - p).abs() < 1e-15);
        }
    }

    #[test]
    fn backprop_matches_tape_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net = DenseNet::new(&[4, 6, 6, 1], &mut rng).unwrap();
        let input: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();

        // Loss = output[0]; upstream derivative 1.
        let mut cache = NetCache::new();
        net.forward_cached(&input, &mut cache).unwrap();
        let mut fast = vec![0.0; net.param_count()];
        net.backprop(&cache, &[1.0], &mut fast).unwrap();

        let mut tape = Tape::new();
        let params = net.params_to_tape(&mut tape);
        let in_vars: Vec<Var> = input.iter().map(|&v| tape.constant(v)).collect();
        let out = net.forward_tape(&mut tape, &params, &in_vars).unwrap();
        tape.backward(out[0]).unwrap();
        for (i, &pv) in params.iter().enumerate() {
            assert!(
                (fast[i] - tape.grad(pv)).abs() < 1e-12,
                "param {i}: fast {} vs tape {}",
                fast[i],
                tape.grad(pv)
            );
        }
    }
}
