//! Fully connected network with tanh hidden layers and an affine output layer.
//!
//! Parameters live in one flat vector. Each layer contributes its weight
//! matrix (row-major, `out × in`) followed by its bias vector. Gradients are
//! accumulated by hand-written reverse-mode passes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct LayerSlot {
    fan_in: usize,
    fan_out: usize,
    weights: usize,
    bias: usize,
}

/// Layer widths `[input, hidden..., output]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    sizes: Vec<usize>,
    slots: Vec<LayerSlot>,
}

/// Per-layer activations of one forward pass, input included.
#[derive(Debug, Clone, Default)]
pub struct Trace {
    acts: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.acts.last().map_or(&[], Vec::as_slice)
    }
}

impl Architecture {
    /// Panics if fewer than two sizes are given or any size is zero.
    pub fn new(sizes: Vec<usize>) -> Self {
        assert!(sizes.len() >= 2, "need at least input and output widths");
        assert!(sizes.iter().all(|&s| s > 0), "layer widths must be positive");
        let mut slots = Vec::with_capacity(sizes.len() - 1);
        let mut offset = 0;
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            slots.push(LayerSlot {
                fan_in,
                fan_out,
                weights: offset,
                bias: offset + fan_in * fan_out,
            });
            offset += fan_in * fan_out + fan_out;
        }
        Self { sizes, slots }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_width(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_width(&self) -> usize {
        *self.sizes.last().expect("non-empty")
    }

    pub fn param_count(&self) -> usize {
        self.slots
            .last()
            .map_or(0, |s| s.bias + s.fan_out)
    }

    /// Fan-in of the layer owning parameter `index`.
    pub fn fan_in_of(&self, index: usize) -> usize {
        self.slots
            .iter()
            .find(|s| index < s.bias + s.fan_out)
            .map_or(1, |s| s.fan_in)
    }

    /// Offsets of layer `layer`'s weight matrix and bias vector.
    pub fn layer_offsets(&self, layer: usize) -> (usize, usize) {
        let s = self.slots[layer];
        (s.weights, s.bias)
    }

    /// Uniform `±1/√fan_in` initialization, rounded to `f32`.
    pub fn init(&self, seed: u64) -> Vec<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..self.param_count())
            .map(|i| {
                let bound = 1.0 / (self.fan_in_of(i) as f64).sqrt();
                rng.random_range(-bound..=bound) as f32
            })
            .collect()
    }

    /// Forward pass keeping every activation for a later [`backward`](Self::backward).
    pub fn forward_trace(&self, theta: &[f64], input: &[f64], trace: &mut Trace) {
        debug_assert_eq!(theta.len(), self.param_count());
        debug_assert_eq!(input.len(), self.input_width());
        trace.acts.resize(self.sizes.len(), Vec::new());
        trace.acts[0].clear();
        trace.acts[0].extend_from_slice(input);
        let last = self.slots.len() - 1;
        for (l, s) in self.slots.iter().enumerate() {
            let (prev, rest) = trace.acts.split_at_mut(l + 1);
            let x = &prev[l];
            let y = &mut rest[0];
            y.clear();
            for o in 0..s.fan_out {
                let row = &theta[s.weights + o * s.fan_in..s.weights + (o + 1) * s.fan_in];
                let z = theta[s.bias + o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
                y.push(if l == last { z } else { z.tanh() });
            }
        }
    }

    pub fn forward(&self, theta: &[f64], input: &[f64]) -> Vec<f64> {
        let mut trace = Trace::default();
        self.forward_trace(theta, input, &mut trace);
        trace.acts.pop().unwrap_or_default()
    }

    /// Accumulate `∂loss/∂θ` into `grad` given `∂loss/∂output`.
    pub fn backward(&self, theta: &[f64], trace: &Trace, grad_out: &[f64], grad: &mut [f64]) {
        let mut delta: Vec<f64> = grad_out.to_vec();
        let mut next = Vec::new();
        for l in (0..self.slots.len()).rev() {
            let s = self.slots[l];
            let x = &trace.acts[l];
            for o in 0..s.fan_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                grad[s.bias + o] += d;
                let base = s.weights + o * s.fan_in;
                for (g, &v) in grad[base..base + s.fan_in].iter_mut().zip(x) {
                    *g += d * v;
                }
            }
            if l == 0 {
                break;
            }
            // x is the tanh output of layer l-1: d tanh = 1 - a^2
            next.clear();
            next.resize(s.fan_in, 0.0);
            for o in 0..s.fan_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let base = s.weights + o * s.fan_in;
                for (acc, &w) in next.iter_mut().zip(&theta[base..base + s.fan_in]) {
                    *acc += d * w;
                }
            }
            for (acc, &a) in next.iter_mut().zip(x) {
                *acc *= 1.0 - a * a;
            }
            std::mem::swap(&mut delta, &mut next);
        }
    }
}

pub(crate) fn widen(theta: &[f32]) -> Vec<f64> {
    theta.iter().map(|&v| f64::from(v)).collect()
}

pub(crate) fn narrow(theta: &[f64]) -> Vec<f32> {
    theta.iter().map(|&v| v as f32).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn loss(arch: &Architecture, theta: &[f64], x: &[f64], target: &[f64]) -> f64 {
        arch.forward(theta, x)
            .iter()
            .zip(target)
            .map(|(y, t)| (y - t) * (y - t))
            .sum()
    }

    #[test]
    fn layout_and_counts() {
        let arch = Architecture::new(vec![4, 3, 2]);
        assert_eq!(arch.param_count(), 4 * 3 + 3 + 3 * 2 + 2);
        assert_eq!(arch.layer_offsets(1), (15, 21));
        assert_eq!(arch.fan_in_of(0), 4);
        assert_eq!(arch.fan_in_of(14), 4);
        assert_eq!(arch.fan_in_of(15), 3);
        assert_eq!(arch.fan_in_of(22), 3);
    }

    #[test]
    fn init_is_bounded_and_seeded() {
        let arch = Architecture::new(vec![16, 4, 16]);
        let a = arch.init(3);
        assert_eq!(a, arch.init(3));
        assert_ne!(a, arch.init(4));
        for (i, &v) in a.iter().enumerate() {
            assert!(f64::from(v).abs() <= 1.0 / (arch.fan_in_of(i) as f64).sqrt() + 1e-7);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let arch = Architecture::new(vec![5, 4, 3, 5]);
        let theta = widen(&arch.init(11));
        let x = [0.3, -1.2, 0.5, 2.0, -0.1];
        let target = [0.0, 1.0, -1.0, 0.5, 0.2];
        let mut trace = Trace::default();
        arch.forward_trace(&theta, &x, &mut trace);
        let g_out: Vec<f64> = trace
            .output()
            .iter()
            .zip(&target)
            .map(|(y, t)| 2.0 * (y - t))
            .collect();
        let mut grad = vec![0.0; theta.len()];
        arch.backward(&theta, &trace, &g_out, &mut grad);
        let h = 1e-5;
        for i in 0..theta.len() {
            let mut p = theta.clone();
            p[i] += h;
            let up = loss(&arch, &p, &x, &target);
            p[i] -= 2.0 * h;
            let down = loss(&arch, &p, &x, &target);
            let fd = (up - down) / (2.0 * h);
            assert!((fd - grad[i]).abs() <= 1e-6 * (1.0 + fd.abs()), "param {i}: {fd} vs {}", grad[i]);
        }
    }
}
