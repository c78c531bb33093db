//! Parameter containers shared by the network components.
//!
//! Components are generic over their leaf type `P`: `Tensor<T>` for stored
//! parameters, [`Var`] once bound to a tape. `map` walks leaves in a fixed
//! order with dotted names, which is also the order gradients are collected
//! and checkpoints are written in.

use rand::Rng as _;

use crate::error::Result;
use crate::rng::{derive_seed, rng_for, streams};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    /// Raw scalar fed to a sigmoid→softmax fusion.
    FusionLogit,
}

/// Uniform-bound gain that preserves activation variance through a ReLU.
pub const RELU_GAIN: f64 = 2.449_489_742_783_178;

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Callback used by every `map` implementation.
pub type MapFn<'a, P, Q> = dyn FnMut(&str, ParamKind, &P) -> Q + 'a;
pub type VisitMutFn<'a, P> = dyn FnMut(&str, ParamKind, &mut P) + 'a;

fn name_hash(name: &str) -> u64 {
    // FNV-1a; stable across platforms and releases.
    name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Deterministic per-parameter initializer: the draw for a parameter depends
/// only on the init seed and the parameter's name.
#[derive(Clone, Copy, Debug)]
pub struct Init {
    pub seed: u64,
}

impl Init {
    pub fn uniform<T: Scalar>(&self, name: &str, dims: &[usize], bound: f64) -> Tensor<T> {
        let mut rng = rng_for(derive_seed(self.seed, name_hash(name)), streams::INIT);
        if bound == 0.0 {
            return Tensor::zeros(dims);
        }
        Tensor::from_fn(dims, |_| T::lit(rng.random_range(-bound..bound)))
    }
}

/// Dense layer `y = x W + b` with `W: [in, out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear<P> {
    pub weight: P,
    pub bias: P,
}

impl<T: Scalar> Linear<Tensor<T>> {
    /// Fan-in uniform weights `U(±1/√fan_in)`, zero bias.
    pub fn init(init: Init, name: &str, fan_in: usize, fan_out: usize) -> Self {
        Self::init_with_gain(init, name, fan_in, fan_out, 1.0)
    }

    /// Weights `U(±gain/√fan_in)`, zero bias.
    pub fn init_with_gain(init: Init, name: &str, fan_in: usize, fan_out: usize, gain: f64) -> Self {
        let bound = gain / (fan_in.max(1) as f64).sqrt();
        Linear {
            weight: init.uniform(&join(name, "weight"), &[fan_in, fan_out], bound),
            bias: Tensor::zeros(&[fan_out]),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.dims()[1]
    }
}

impl<P> Linear<P> {
    pub fn map<Q>(&self, prefix: &str, f: &mut MapFn<'_, P, Q>) -> Linear<Q> {
        Linear {
            weight: f(&join(prefix, "weight"), ParamKind::Weight, &self.weight),
            bias: f(&join(prefix, "bias"), ParamKind::Bias, &self.bias),
        }
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut VisitMutFn<'_, P>) {
        f(&join(prefix, "weight"), ParamKind::Weight, &mut self.weight);
        f(&join(prefix, "bias"), ParamKind::Bias, &mut self.bias);
    }
}

impl Linear<Var> {
    /// Applies the layer to a rank-1 input.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let n = tape.value(x).len();
        let row = tape.reshape(x, &[1, n])?;
        let y = tape.matmul(row, self.weight)?;
        let m = tape.dims(y)[1];
        let y = tape.reshape(y, &[m])?;
        tape.add(y, self.bias)
    }
}
