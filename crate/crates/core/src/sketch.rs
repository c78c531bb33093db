//! Count Sketch / Tensor Sketch approximation of outer products.
//!
//! A [`SketchPlan`] holds two independent hash/sign table pairs. The compact
//! bilinear feature of a vector pair `(x, y)` is
//! `CS1(x) ⊛ CS2(y)`, whose inner products are unbiased estimates of the inner
//! products of the flattened outer products `x yᵀ`:
//! `E⟨C(x, y), C(u, v)⟩ = ⟨x, u⟩⟨y, v⟩`.

use rand::Rng as _;
use rustfft::num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{rng_for, streams};
use crate::scalar::Scalar;
use crate::tensor::{Spectral, Tensor};

/// Selects one of the plan's two independent hash/sign table pairs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Which {
    First,
    Second,
}

/// How the second factor of each inter-frame sketch is chosen.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SketchMode {
    /// `CS1(f_i) ⊛ CS2(f_{i+1})`: sketch of the cross-frame outer product.
    #[default]
    Pair,
    /// `CS1(f_i) ⊛ CS2(f_i)`: single-frame polynomial-kernel reading, kept
    /// for ablation.
    SingleFrame,
}

impl SketchMode {
    /// Frame offset of the second factor.
    pub fn lag(self) -> usize {
        match self {
            SketchMode::Pair => 1,
            SketchMode::SingleFrame => 0,
        }
    }
}

/// Frozen random tables defining the compact bilinear map.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SketchPlan {
    input_dim: usize,
    output_dim: usize,
    h1: Vec<i32>,
    h2: Vec<i32>,
    s1: Vec<i8>,
    s2: Vec<i8>,
    seed: u64,
}

impl SketchPlan {
    /// Draws hash tables uniformly over `[0, output_dim)` and signs uniformly
    /// over `{-1, +1}`, reproducibly from `seed`.
    pub fn new(input_dim: usize, output_dim: usize, seed: u64) -> Result<Self> {
        if input_dim == 0 || output_dim == 0 {
            return Err(Error::Config(format!(
                "sketch dims must be positive (input {input_dim}, output {output_dim})"
            )));
        }
        if output_dim > i32::MAX as usize {
            return Err(Error::Config(format!(
                "sketch output dim {output_dim} exceeds the 32-bit hash range"
            )));
        }
        let mut rng = rng_for(seed, streams::SKETCH);
        let d = output_dim as i32;
        let mut hashes = || -> Vec<i32> { (0..input_dim).map(|_| rng.random_range(0..d)).collect() };
        let h1 = hashes();
        let h2 = hashes();
        let mut signs = || -> Vec<i8> {
            (0..input_dim)
                .map(|_| if rng.random_bool(0.5) { 1 } else { -1 })
                .collect()
        };
        let s1 = signs();
        let s2 = signs();
        Ok(SketchPlan {
            input_dim,
            output_dim,
            h1,
            h2,
            s1,
            s2,
            seed,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn hashes(&self, which: Which) -> &[i32] {
        match which {
            Which::First => &self.h1,
            Which::Second => &self.h2,
        }
    }

    pub fn signs(&self, which: Which) -> &[i8] {
        match which {
            Which::First => &self.s1,
            Which::Second => &self.s2,
        }
    }

    /// Sketches a raw slice into `out` (which is overwritten).
    pub(crate) fn sketch_into<T: Scalar>(&self, x: &[T], which: Which, out: &mut [T]) {
        out.iter_mut().for_each(|v| *v = T::zero());
        let (h, s) = (self.hashes(which), self.signs(which));
        for ((&v, &hj), &sj) in x.iter().zip(h).zip(s) {
            let slot = &mut out[hj as usize];
            if sj > 0 {
                *slot += v;
            } else {
                *slot -= v;
            }
        }
    }

    /// Adjoint of [`Self::sketch_into`]: `gx[j] += s(j) * g[h(j)]`.
    pub(crate) fn unsketch_add<T: Scalar>(&self, g: &[T], which: Which, gx: &mut [T]) {
        let (h, s) = (self.hashes(which), self.signs(which));
        for ((o, &hj), &sj) in gx.iter_mut().zip(h).zip(s) {
            let v = g[hj as usize];
            if sj > 0 {
                *o += v;
            } else {
                *o -= v;
            }
        }
    }

    fn check_input<T: Scalar>(&self, op: &'static str, x: &Tensor<T>) -> Result<()> {
        if x.rank() != 1 || x.len() != self.input_dim {
            return Err(Error::shape(op, x.dims(), &[self.input_dim]));
        }
        Ok(())
    }
}

/// `out[h(j)] += s(j) * x[j]` with the selected table pair.
pub fn count_sketch<T: Scalar>(x: &Tensor<T>, which: Which, plan: &SketchPlan) -> Result<Tensor<T>> {
    plan.check_input("count_sketch", x)?;
    let mut out = vec![T::zero(); plan.output_dim];
    plan.sketch_into(x.data(), which, &mut out);
    Ok(Tensor::vector(out))
}

/// Compact bilinear feature `CS1(x) ⊛ CS2(y)` of length `output_dim`.
pub fn compact_bilinear<T: Scalar>(
    x: &Tensor<T>,
    y: &Tensor<T>,
    plan: &SketchPlan,
) -> Result<Tensor<T>> {
    plan.check_input("compact_bilinear", x)?;
    plan.check_input("compact_bilinear", y)?;
    let a = count_sketch(x, Which::First, plan)?;
    let b = count_sketch(y, Which::Second, plan)?;
    let mut sp = Spectral::new(plan.output_dim);
    Ok(Tensor::vector(sp.convolve(a.data(), b.data())))
}

/// Flattened outer product `vec(x yᵀ)`, row-major (`out[i * n + j] = x[i] y[j]`).
pub fn exact_bilinear<T: Scalar>(x: &Tensor<T>, y: &Tensor<T>) -> Result<Tensor<T>> {
    if x.rank() != 1 || x.dims() != y.dims() {
        return Err(Error::shape("exact_bilinear", x.dims(), y.dims()));
    }
    let mut out = Vec::with_capacity(x.len() * y.len());
    for &a in x.data() {
        out.extend(y.data().iter().map(|&b| a * b));
    }
    Ok(Tensor::vector(out))
}

/// Spectra saved by the batched inter-frame sketch for its backward pass.
#[derive(Clone, Debug)]
pub(crate) struct PairSpectra<T> {
    /// `FFT(CS1(f_{k,S}))` for every frame `k` and location `S`, `[t, HW, d]`.
    first: Vec<Complex<T>>,
    /// `FFT(CS2(f_{k,S}))`, same layout.
    second: Vec<Complex<T>>,
}

/// Geometry of a `[t, C, H, W]` feature passing through the batched sketch.
#[derive(Clone, Copy, Debug)]
pub(crate) struct PairGeom {
    pub t: usize,
    pub c: usize,
    pub hw: usize,
    pub d: usize,
    pub lag: usize,
}

impl PairGeom {
    pub fn pairs(&self) -> usize {
        self.t - 1
    }
}

/// Computes `b[i, :, S] = CS1(f_{i,S}) ⊛ CS2(f_{i+lag,S})` for `i < t-1` and
/// every spatial location, returning the `[t-1, d, H, W]` buffer.
pub(crate) fn pair_sketch_forward<T: Scalar>(
    f: &[T],
    g: PairGeom,
    plan: &SketchPlan,
) -> (Vec<T>, PairSpectra<T>) {
    let PairGeom { t, c, hw, d, lag } = g;
    let mut sp = Spectral::new(d);
    let zero = Complex::new(T::zero(), T::zero());
    let mut first = vec![zero; t * hw * d];
    let mut second = vec![zero; t * hw * d];
    let mut column = vec![T::zero(); c];
    let mut sketched = vec![T::zero(); d];
    for k in 0..t {
        for s in 0..hw {
            for (ch, v) in column.iter_mut().enumerate() {
                *v = f[(k * c + ch) * hw + s];
            }
            let slot = (k * hw + s) * d;
            plan.sketch_into(&column, Which::First, &mut sketched);
            sp.forward_into(&sketched, &mut first[slot..slot + d]);
            plan.sketch_into(&column, Which::Second, &mut sketched);
            sp.forward_into(&sketched, &mut second[slot..slot + d]);
        }
    }
    let pairs = g.pairs();
    let mut out = vec![T::zero(); pairs * d * hw];
    let mut prod = vec![zero; d];
    let mut real = vec![T::zero(); d];
    for i in 0..pairs {
        for s in 0..hw {
            let a = &first[(i * hw + s) * d..(i * hw + s + 1) * d];
            let b = &second[((i + lag) * hw + s) * d..((i + lag) * hw + s + 1) * d];
            for ((p, &x), &y) in prod.iter_mut().zip(a).zip(b) {
                *p = x * y;
            }
            sp.inverse_real_into(&mut prod, &mut real);
            for (k, &v) in real.iter().enumerate() {
                out[(i * d + k) * hw + s] = v;
            }
        }
    }
    (out, PairSpectra { first, second })
}

/// Gradient of [`pair_sketch_forward`] with respect to the `[t, C, H, W]` input.
pub(crate) fn pair_sketch_backward<T: Scalar>(
    gout: &[T],
    g: PairGeom,
    plan: &SketchPlan,
    saved: &PairSpectra<T>,
) -> Vec<T> {
    let PairGeom { t, c, hw, d, lag } = g;
    let mut sp = Spectral::new(d);
    let zero = Complex::new(T::zero(), T::zero());
    let mut gf = vec![T::zero(); t * c * hw];
    let mut column = vec![T::zero(); d];
    let mut spec = vec![zero; d];
    let mut work = vec![zero; d];
    let mut real = vec![T::zero(); d];
    let mut gcol = vec![T::zero(); c];
    for i in 0..g.pairs() {
        for s in 0..hw {
            for (k, v) in column.iter_mut().enumerate() {
                *v = gout[(i * d + k) * hw + s];
            }
            sp.forward_into(&column, &mut spec);
            let a = &saved.first[(i * hw + s) * d..(i * hw + s + 1) * d];
            let b = &saved.second[((i + lag) * hw + s) * d..((i + lag) * hw + s + 1) * d];
            // first factor: correlate with the second sketch
            for ((w, &x), &y) in work.iter_mut().zip(&spec).zip(b) {
                *w = x * y.conj();
            }
            sp.inverse_real_into(&mut work, &mut real);
            gcol.iter_mut().for_each(|v| *v = T::zero());
            plan.unsketch_add(&real, Which::First, &mut gcol);
            for (ch, &v) in gcol.iter().enumerate() {
                gf[(i * c + ch) * hw + s] += v;
            }
            // second factor: correlate with the first sketch
            for ((w, &x), &y) in work.iter_mut().zip(&spec).zip(a) {
                *w = x * y.conj();
            }
            sp.inverse_real_into(&mut work, &mut real);
            gcol.iter_mut().for_each(|v| *v = T::zero());
            plan.unsketch_add(&real, Which::Second, &mut gcol);
            for (ch, &v) in gcol.iter().enumerate() {
                gf[((i + lag) * c + ch) * hw + s] += v;
            }
        }
    }
    gf
}
