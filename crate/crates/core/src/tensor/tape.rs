//! Tape-based reverse-mode differentiation.
//!
//! Every primitive evaluates eagerly, stores its output on the tape and
//! records enough to run its backward rule. [`Tape::backward`] replays the
//! records in exact reverse order, accumulating cotangents into each
//! tensor's gradient slot.

use std::sync::Arc;

use super::kernels::{self, ConvGeom};
use super::{numel, Spectral, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::sketch::{self, PairGeom, PairSpectra, SketchPlan, Which};

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    ScaleBy(Var, Var),
    ScaleSlices(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    Softmax(Var),
    PlaneNorm { x: Var, plane: usize, inv_std: Vec<T> },
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    Select(Var, usize),
    AvgPool {
        x: Var,
        kernel: [usize; 3],
        stride: [usize; 3],
    },
    Concat {
        a: Var,
        b: Var,
        axis: usize,
    },
    CircConv(Var, Var),
    CountSketch {
        x: Var,
        plan: Arc<SketchPlan>,
        which: Which,
    },
    PairSketch {
        f: Var,
        plan: Arc<SketchPlan>,
        geom: PairGeom,
        saved: Box<PairSpectra<T>>,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        geom: ConvGeom,
    },
    CrossEntropy {
        logits: Var,
        label: usize,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    tracked: bool,
    param: bool,
}

/// Ordered record of primitive operations and the tensors they produced.
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

fn same_dims<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::shape(op, a.dims(), b.dims()));
    }
    Ok(())
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn softmax_slice<T: Scalar>(x: &[T]) -> Vec<T> {
    let max = x.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = x.iter().map(|&v| (v - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let tracked = inputs.iter().any(|v| self.nodes[v.0].tracked);
        self.nodes.push(Node {
            value,
            op,
            tracked,
            param: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a tensor that receives no gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            tracked: false,
            param: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a trainable leaf; its gradient is populated by [`Self::backward`].
    pub fn param(&mut self, mut value: Tensor<T>) -> Var {
        value.clear_grad();
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            tracked: true,
            param: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn dims(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.dims()
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad()
    }

    /// Leaves registered with [`Self::param`], in recording order.
    pub fn params(&self) -> Vec<Var> {
        (0..self.nodes.len())
            .filter(|&i| self.nodes[i].param)
            .map(Var)
            .collect()
    }

    /// Order in which [`Self::backward`] visits the records leading to `loss`.
    pub fn backward_order(&self, loss: Var) -> Vec<Var> {
        (0..=loss.0).rev().map(Var).collect()
    }

    // ---- elementwise -------------------------------------------------------

    fn zip_with(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (x, y) = (self.value(a), self.value(b));
        same_dims(op, x, y)?;
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        Tensor::new(x.dims().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with("add", a, b, |p, q| p + q)?;
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with("sub", a, b, |p, q| p - q)?;
        Ok(self.push(out, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with("mul", a, b, |p, q| p * q)?;
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    /// Multiplies by a fixed scalar.
    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let out = self.value(x).map(|v| v * s);
        self.push(out, Op::Scale(x, s), &[x])
    }

    /// Multiplies by a one-element tensor recorded on the tape.
    pub fn scale_by(&mut self, x: Var, s: Var) -> Result<Var> {
        if self.value(s).len() != 1 {
            return Err(Error::shape("scale_by", self.dims(x), self.dims(s)));
        }
        let k = self.value(s).data()[0];
        let out = self.value(x).map(|v| v * k);
        Ok(self.push(out, Op::ScaleBy(x, s), &[x, s]))
    }

    /// Multiplies slice `i` of the leading axis by `w[i]`.
    pub fn scale_slices(&mut self, x: Var, w: Var) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        if wv.rank() != 1 || xv.dims()[0] != wv.len() {
            return Err(Error::shape("scale_slices", xv.dims(), wv.dims()));
        }
        let inner = numel(&xv.dims()[1..]);
        let mut data = xv.data().to_vec();
        for (i, &k) in wv.data().iter().enumerate() {
            for v in &mut data[i * inner..(i + 1) * inner] {
                *v *= k;
            }
        }
        let out = Tensor::new(xv.dims().to_vec(), data)?;
        Ok(self.push(out, Op::ScaleSlices(x, w), &[x, w]))
    }

    /// Rectified linear unit; the subgradient at zero is zero.
    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        self.push(out, Op::Relu(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        self.push(out, Op::Sigmoid(x), &[x])
    }

    /// Max-shifted softmax over a rank-1 tensor.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() != 1 || xv.is_empty() {
            return Err(Error::shape("softmax", xv.dims(), &[xv.len().max(1)]));
        }
        let out = Tensor::vector(softmax_slice(xv.data()));
        Ok(self.push(out, Op::Softmax(x), &[x]))
    }

    /// Normalizes every trailing `H × W` plane of a rank-3+ tensor to zero
    /// mean and unit variance: `(x − μ) / √(σ² + eps)`. A constant plane maps
    /// to zero.
    pub fn plane_norm(&mut self, x: Var, eps: T) -> Result<Var> {
        let xv = self.value(x);
        let d = xv.dims();
        if d.len() < 3 || d[d.len() - 1] * d[d.len() - 2] == 0 {
            return Err(Error::Input(format!(
                "plane_norm needs a rank-3+ tensor with non-empty planes, got {d:?}"
            )));
        }
        let plane = d[d.len() - 1] * d[d.len() - 2];
        let inv_n = T::one() / T::lit(plane as f64);
        let mut out = xv.clone();
        out.clear_grad();
        let mut inv_std = Vec::with_capacity(xv.len() / plane);
        for p in out.data_mut().chunks_exact_mut(plane) {
            let mean = p.iter().copied().sum::<T>() * inv_n;
            let var = p.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_n;
            let r = T::one() / (var + eps).sqrt();
            for v in p.iter_mut() {
                *v = (*v - mean) * r;
            }
            inv_std.push(r);
        }
        Ok(self.push(out, Op::PlaneNorm { x, plane, inv_std }, &[x]))
    }

    pub fn reshape(&mut self, x: Var, dims: &[usize]) -> Result<Var> {
        let out = self.value(x).reshape(dims)?;
        Ok(self.push(out, Op::Reshape(x), &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: T = self.value(x).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let n = T::lit(xv.len().max(1) as f64);
        let s: T = xv.data().iter().copied().sum();
        self.push(Tensor::scalar(s / n), Op::Mean(x), &[x])
    }

    /// Picks one element of a rank-1 tensor as a one-element tensor.
    pub fn select(&mut self, x: Var, index: usize) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() != 1 || index >= xv.len() {
            return Err(Error::Input(format!(
                "select index {index} out of range for {:?}",
                xv.dims()
            )));
        }
        let out = Tensor::scalar(xv.data()[index]);
        Ok(self.push(out, Op::Select(x, index), &[x]))
    }

    // ---- linear algebra ----------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rank() != 2 || bv.rank() != 2 || av.dims()[1] != bv.dims()[0] {
            return Err(Error::shape("matmul", av.dims(), bv.dims()));
        }
        let (m, k, n) = (av.dims()[0], av.dims()[1], bv.dims()[1]);
        let out = Tensor::new(vec![m, n], kernels::matmul(av.data(), bv.data(), m, k, n))?;
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    // ---- pooling / layout ----------------------------------------------------

    /// Sliding-window mean over the time and spatial axes of `[t, C, H, W]`.
    pub fn avg_pool(&mut self, x: Var, kernel: [usize; 3], stride: [usize; 3]) -> Result<Var> {
        let xv = self.value(x);
        let d = xv.dims();
        if d.len() != 4 {
            return Err(Error::shape("avg_pool", d, &[kernel[0], 0, kernel[1], kernel[2]]));
        }
        if kernel.iter().any(|&k| k == 0) || stride.iter().any(|&s| s == 0) {
            return Err(Error::Config(format!(
                "avg_pool kernel {kernel:?} and stride {stride:?} must be positive"
            )));
        }
        if kernel[0] > d[0] || kernel[1] > d[2] || kernel[2] > d[3] {
            return Err(Error::shape("avg_pool", d, &[kernel[0], d[1], kernel[1], kernel[2]]));
        }
        let odims = kernels::pool_dims(d, kernel, stride);
        let data = kernels::avg_pool(xv.data(), d, kernel, stride);
        let out = Tensor::new(odims.to_vec(), data)?;
        Ok(self.push(out, Op::AvgPool { x, kernel, stride }, &[x]))
    }

    /// Concatenates along the channel axis: axis 1 for rank ≥ 2, axis 0 for
    /// vectors. `a` comes first.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let axis = if self.value(a).rank() == 1 { 0 } else { 1 };
        self.concat(a, b, axis)
    }

    pub fn concat(&mut self, a: Var, b: Var, axis: usize) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (da, db) = (av.dims(), bv.dims());
        let compatible = da.len() == db.len()
            && axis < da.len()
            && da
                .iter()
                .zip(db)
                .enumerate()
                .all(|(i, (x, y))| i == axis || x == y);
        if !compatible {
            return Err(Error::shape("concat", da, db));
        }
        let outer = numel(&da[..axis]);
        let ia = numel(&da[axis..]);
        let ib = numel(&db[axis..]);
        let mut data = Vec::with_capacity(av.len() + bv.len());
        for o in 0..outer {
            data.extend_from_slice(&av.data()[o * ia..(o + 1) * ia]);
            data.extend_from_slice(&bv.data()[o * ib..(o + 1) * ib]);
        }
        let mut dims = da.to_vec();
        dims[axis] += db[axis];
        let out = Tensor::new(dims, data)?;
        Ok(self.push(out, Op::Concat { a, b, axis }, &[a, b]))
    }

    // ---- spectral / sketch ---------------------------------------------------

    pub fn circular_convolve(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = super::circular_convolve(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::CircConv(a, b), &[a, b]))
    }

    pub fn count_sketch(&mut self, x: Var, which: Which, plan: &Arc<SketchPlan>) -> Result<Var> {
        let out = sketch::count_sketch(self.value(x), which, plan)?;
        let op = Op::CountSketch {
            x,
            plan: Arc::clone(plan),
            which,
        };
        Ok(self.push(out, op, &[x]))
    }

    /// Compact bilinear feature `CS1(x) ⊛ CS2(y)` composed from tape primitives.
    pub fn compact_bilinear(&mut self, x: Var, y: Var, plan: &Arc<SketchPlan>) -> Result<Var> {
        let a = self.count_sketch(x, Which::First, plan)?;
        let b = self.count_sketch(y, Which::Second, plan)?;
        self.circular_convolve(a, b)
    }

    /// Batched inter-frame sketch of a `[t, C, H, W]` feature: output
    /// `[t-1, d, H, W]` with `out[i, :, S] = CS1(f_{i,S}) ⊛ CS2(f_{i+lag,S})`.
    pub fn pair_sketch(&mut self, f: Var, plan: &Arc<SketchPlan>, lag: usize) -> Result<Var> {
        let fv = self.value(f);
        let d = fv.dims();
        if d.len() != 4 || d[1] != plan.input_dim() {
            return Err(Error::shape("pair_sketch", d, &[0, plan.input_dim(), 0, 0]));
        }
        if d[0] < 2 {
            return Err(Error::Input(format!(
                "inter-frame sketch needs at least 2 frames, got {}",
                d[0]
            )));
        }
        if lag > 1 {
            return Err(Error::Config(format!("pair lag must be 0 or 1, got {lag}")));
        }
        let geom = PairGeom {
            t: d[0],
            c: d[1],
            hw: d[2] * d[3],
            d: plan.output_dim(),
            lag,
        };
        let dims = vec![d[0] - 1, plan.output_dim(), d[2], d[3]];
        let (data, saved) = sketch::pair_sketch_forward(fv.data(), geom, plan);
        let out = Tensor::new(dims, data)?;
        let op = Op::PairSketch {
            f,
            plan: Arc::clone(plan),
            geom,
            saved: Box::new(saved),
        };
        Ok(self.push(out, op, &[f]))
    }

    // ---- network layers --------------------------------------------------------

    /// Stride-1 zero-padded 2-D convolution of each leading-axis slice of
    /// `[n, C_in, H, W]` with weights `[C_out, C_in, k_h, k_w]` (odd kernels)
    /// and bias `[C_out]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xd, wd, bd) = (self.dims(x), self.dims(w), self.dims(b));
        if xd.len() != 4 || wd.len() != 4 || xd[1] != wd[1] || bd != [wd[0]] {
            return Err(Error::shape("conv2d", xd, wd));
        }
        if wd[2] % 2 == 0 || wd[3] % 2 == 0 {
            return Err(Error::Config(format!("conv2d kernel {:?} must be odd", &wd[2..])));
        }
        let geom = ConvGeom {
            n: xd[0],
            cin: xd[1],
            cout: wd[0],
            h: xd[2],
            w: xd[3],
            kh: wd[2],
            kw: wd[3],
        };
        let data = kernels::conv2d(
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
            geom,
        );
        let out = Tensor::new(vec![geom.n, geom.cout, geom.h, geom.w], data)?;
        Ok(self.push(out, Op::Conv2d { x, w, b, geom }, &[x, w, b]))
    }

    /// `-log softmax(logits)[label]` for rank-1 logits.
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let lv = self.value(logits);
        if lv.rank() != 1 || lv.is_empty() {
            return Err(Error::shape("cross_entropy", lv.dims(), &[label + 1]));
        }
        if label >= lv.len() {
            return Err(Error::Input(format!(
                "label {label} out of range for {} classes",
                lv.len()
            )));
        }
        let max = lv.data().iter().copied().fold(T::neg_infinity(), T::max);
        let lse = max + lv.data().iter().map(|&v| (v - max).exp()).sum::<T>().ln();
        let out = Tensor::scalar(lse - lv.data()[label]);
        Ok(self.push(out, Op::CrossEntropy { logits, label }, &[logits]))
    }

    // ---- backward ------------------------------------------------------------

    fn accumulate(&mut self, v: Var, delta: Vec<T>) {
        let node = &mut self.nodes[v.0];
        if !node.tracked {
            return;
        }
        match node.value.grad_mut() {
            Some(g) => {
                for (a, d) in g.iter_mut().zip(delta) {
                    *a += d;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    fn data(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    /// Reverse-mode sweep from a one-element `loss`. Gradients from earlier
    /// sweeps are cleared first; every parameter ends with a populated gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Input(format!(
                "backward needs a scalar loss, got dims {:?}",
                self.dims(loss)
            )));
        }
        for node in &mut self.nodes {
            node.value.clear_grad();
        }
        if self.tracked(loss) {
            *self.nodes[loss.0].value.grad_mut() = Some(vec![T::one()]);
        }
        for v in self.backward_order(loss) {
            if !self.nodes[v.0].tracked {
                continue;
            }
            let Some(g) = self.nodes[v.0].value.grad_mut().take() else {
                continue;
            };
            let op = std::mem::replace(&mut self.nodes[v.0].op, Op::Leaf);
            let res = self.propagate(v, &op, &g);
            self.nodes[v.0].op = op;
            *self.nodes[v.0].value.grad_mut() = Some(g);
            res?;
        }
        for node in &mut self.nodes {
            if node.param && node.value.grad().is_none() {
                *node.value.grad_mut() = Some(vec![T::zero(); node.value.len()]);
            }
        }
        Ok(())
    }

    fn propagate(&mut self, out: Var, op: &Op<T>, g: &[T]) -> Result<()> {
        match *op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.dims(a)[0], self.dims(a)[1]);
                let n = self.dims(b)[1];
                if self.tracked(a) {
                    let ga = kernels::matmul_nt(g, self.data(b), m, k, n);
                    self.accumulate(a, ga);
                }
                if self.tracked(b) {
                    let gb = kernels::matmul_tn(self.data(a), g, m, k, n);
                    self.accumulate(b, gb);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(a, g.to_vec());
                self.accumulate(b, g.to_vec());
            }
            Op::Sub(a, b) => {
                self.accumulate(a, g.to_vec());
                self.accumulate(b, g.iter().map(|&v| -v).collect());
            }
            Op::Mul(a, b) => {
                let ga = g.iter().zip(self.data(b)).map(|(&x, &y)| x * y).collect();
                let gb = g.iter().zip(self.data(a)).map(|(&x, &y)| x * y).collect();
                self.accumulate(a, ga);
                self.accumulate(b, gb);
            }
            Op::Scale(x, s) => self.accumulate(x, g.iter().map(|&v| v * s).collect()),
            Op::ScaleBy(x, s) => {
                let k = self.data(s)[0];
                let gs = g.iter().zip(self.data(x)).fold(T::zero(), |acc, (&p, &q)| acc + p * q);
                self.accumulate(x, g.iter().map(|&v| v * k).collect());
                self.accumulate(s, vec![gs]);
            }
            Op::ScaleSlices(x, w) => {
                let wv = self.data(w).to_vec();
                let inner = g.len() / wv.len().max(1);
                let xv = self.data(x);
                let gw: Vec<T> = (0..wv.len())
                    .map(|i| {
                        g[i * inner..(i + 1) * inner]
                            .iter()
                            .zip(&xv[i * inner..(i + 1) * inner])
                            .fold(T::zero(), |acc, (&p, &q)| acc + p * q)
                    })
                    .collect();
                let gx = g
                    .iter()
                    .enumerate()
                    .map(|(j, &v)| v * wv[j / inner])
                    .collect();
                self.accumulate(x, gx);
                self.accumulate(w, gw);
            }
            Op::Relu(x) => {
                let gx = g
                    .iter()
                    .zip(self.data(x))
                    .map(|(&gv, &xv)| if xv > T::zero() { gv } else { T::zero() })
                    .collect();
                self.accumulate(x, gx);
            }
            Op::Sigmoid(x) => {
                let gx = g
                    .iter()
                    .zip(self.data(out))
                    .map(|(&gv, &y)| gv * y * (T::one() - y))
                    .collect();
                self.accumulate(x, gx);
            }
            Op::Softmax(x) => {
                let y = self.data(out);
                let dot = g.iter().zip(y).fold(T::zero(), |acc, (&p, &q)| acc + p * q);
                let gx = g.iter().zip(y).map(|(&gv, &yv)| yv * (gv - dot)).collect();
                self.accumulate(x, gx);
            }
            Op::PlaneNorm { x, plane, ref inv_std } => {
                let y = self.data(out);
                let inv_n = T::one() / T::lit(plane as f64);
                let mut gx = Vec::with_capacity(g.len());
                for ((gp, yp), &r) in g.chunks_exact(plane).zip(y.chunks_exact(plane)).zip(inv_std) {
                    let mg = gp.iter().copied().sum::<T>() * inv_n;
                    let mgy = gp.iter().zip(yp).fold(T::zero(), |a, (&p, &q)| a + p * q) * inv_n;
                    gx.extend(gp.iter().zip(yp).map(|(&gv, &yv)| r * (gv - mg - yv * mgy)));
                }
                self.accumulate(x, gx);
            }
            Op::Reshape(x) => self.accumulate(x, g.to_vec()),
            Op::Sum(x) => {
                let n = self.value(x).len();
                self.accumulate(x, vec![g[0]; n]);
            }
            Op::Mean(x) => {
                let n = self.value(x).len();
                self.accumulate(x, vec![g[0] / T::lit(n.max(1) as f64); n]);
            }
            Op::Select(x, i) => {
                let mut gx = vec![T::zero(); self.value(x).len()];
                gx[i] = g[0];
                self.accumulate(x, gx);
            }
            Op::AvgPool { x, kernel, stride } => {
                let gx = kernels::avg_pool_backward(g, self.dims(x), kernel, stride);
                self.accumulate(x, gx);
            }
            Op::Concat { a, b, axis } => {
                let da = self.dims(a).to_vec();
                let db = self.dims(b).to_vec();
                let outer = numel(&da[..axis]);
                let (ia, ib) = (numel(&da[axis..]), numel(&db[axis..]));
                let mut ga = Vec::with_capacity(outer * ia);
                let mut gb = Vec::with_capacity(outer * ib);
                for o in 0..outer {
                    let base = o * (ia + ib);
                    ga.extend_from_slice(&g[base..base + ia]);
                    gb.extend_from_slice(&g[base + ia..base + ia + ib]);
                }
                self.accumulate(a, ga);
                self.accumulate(b, gb);
            }
            Op::CircConv(a, b) => {
                let mut sp = Spectral::new(g.len());
                if self.tracked(a) {
                    let ga = sp.correlate(g, self.data(b));
                    self.accumulate(a, ga);
                }
                if self.tracked(b) {
                    let gb = sp.correlate(g, self.data(a));
                    self.accumulate(b, gb);
                }
            }
            Op::CountSketch { x, ref plan, which } => {
                let mut gx = vec![T::zero(); plan.input_dim()];
                plan.unsketch_add(g, which, &mut gx);
                self.accumulate(x, gx);
            }
            Op::PairSketch {
                f,
                ref plan,
                geom,
                ref saved,
            } => {
                let gf = sketch::pair_sketch_backward(g, geom, plan, saved);
                self.accumulate(f, gf);
            }
            Op::Conv2d { x, w, b, geom } => {
                let need_x = self.tracked(x);
                let (gx, gw, gb) =
                    kernels::conv2d_backward(self.data(x), self.data(w), g, geom, need_x);
                if need_x {
                    self.accumulate(x, gx);
                }
                self.accumulate(w, gw);
                self.accumulate(b, gb);
            }
            Op::CrossEntropy { logits, label } => {
                let mut p = softmax_slice(self.data(logits));
                p[label] -= T::one();
                self.accumulate(logits, p.into_iter().map(|v| v * g[0]).collect());
            }
        }
        Ok(())
    }
}
