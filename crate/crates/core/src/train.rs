//! SGD with momentum and weight decay, a step learning-rate schedule and the
//! epoch loop.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::model::{argmax, ModelParams};
use crate::params::{ParamKind, VisitMutFn};
use crate::rng::{derive_seed, rng_for, streams};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub decay_factor: f64,
    /// Epochs (0-based) at whose start the learning rate is multiplied by `decay_factor`.
    pub decay_epochs: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Also decay biases and fusion logits.
    pub decay_all: bool,
    /// Training videos used to standardize the first reduction layer before
    /// the first epoch; 0 keeps the random initialization.
    pub data_init_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 0.005,
            momentum: 0.9,
            weight_decay: 1e-4,
            decay_factor: 0.1,
            decay_epochs: Vec::new(),
            epochs: 10,
            batch_size: 8,
            seed: 0,
            decay_all: false,
            data_init_samples: 64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return bad(format!("lr0 must be positive, got {}", self.lr0));
        }
        if !(0.0..1.0).contains(&self.decay_factor) {
            return bad(format!("decay_factor must lie in [0, 1), got {}", self.decay_factor));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        Ok(())
    }

    /// `lr0 · factor^k` with `k` the number of decay epochs `≤ epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let k = self.decay_epochs.iter().filter(|&&e| e <= epoch).count();
        self.lr0 * self.decay_factor.powi(k as i32)
    }
}

/// A set of named tensors the optimizer can update in place.
pub trait ParamSet<T> {
    fn visit_params(&mut self, f: &mut VisitMutFn<'_, Tensor<T>>);
}

impl<T: Scalar> ParamSet<T> for ModelParams<T> {
    fn visit_params(&mut self, f: &mut VisitMutFn<'_, Tensor<T>>) {
        self.visit_mut(f);
    }
}

/// Bare weight tensors, named by position.
impl<T> ParamSet<T> for [Tensor<T>] {
    fn visit_params(&mut self, f: &mut VisitMutFn<'_, Tensor<T>>) {
        for (i, t) in self.iter_mut().enumerate() {
            f(&i.to_string(), ParamKind::Weight, t);
        }
    }
}

/// Momentum SGD: `v ← μ·v + g + λ·θ`, `θ ← θ − η·v`.
#[derive(Clone, Debug)]
pub struct Sgd<T> {
    momentum: T,
    weight_decay: T,
    decay_all: bool,
    velocity: Vec<Vec<T>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(momentum: f64, weight_decay: f64, decay_all: bool) -> Self {
        Sgd {
            momentum: T::lit(momentum),
            weight_decay: T::lit(weight_decay),
            decay_all,
            velocity: Vec::new(),
        }
    }

    pub fn from_config(cfg: &TrainConfig) -> Self {
        Sgd::new(cfg.momentum, cfg.weight_decay, cfg.decay_all)
    }

    /// Applies one step using the gradients stored on each tensor, then clears them.
    pub fn step<P: ParamSet<T> + ?Sized>(&mut self, params: &mut P, lr: T) -> Result<()> {
        let mut missing = None;
        params.visit_params(&mut |name, _, t| {
            if missing.is_none() && t.grad().map(<[T]>::len) != Some(t.len()) {
                missing = Some(name.to_string());
            }
        });
        if let Some(name) = missing {
            return Err(Error::Internal(format!("parameter {name} has no gradient")));
        }
        let (mu, decay_all, wd) = (self.momentum, self.decay_all, self.weight_decay);
        let velocity = &mut self.velocity;
        let mut idx = 0;
        params.visit_params(&mut |_, kind, t| {
            if velocity.len() == idx {
                velocity.push(vec![T::zero(); t.len()]);
            }
            let v = &mut velocity[idx];
            idx += 1;
            let lambda = if decay_all || kind == ParamKind::Weight { wd } else { T::zero() };
            let g = t.grad_mut().take().unwrap_or_default();
            for ((theta, vi), gi) in t.data_mut().iter_mut().zip(v.iter_mut()).zip(g) {
                *vi = mu * *vi + gi + lambda * *theta;
                *theta -= lr * *vi;
            }
        });
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Mean training loss over the epoch's samples, measured before each update.
    pub loss: f64,
    pub train_acc: f64,
    pub eval_acc: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
}

impl TrainReport {
    /// Tab-separated table with a header row; a missing eval accuracy is `nan`.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("epoch\tlr\tloss\ttrain_acc\teval_acc\n");
        for r in &self.epochs {
            let eval = r.eval_acc.map_or("nan".to_string(), |a| format!("{a:.6}"));
            let _ = writeln!(
                s,
                "{}\t{:e}\t{:.9}\t{:.6}\t{eval}",
                r.epoch, r.lr, r.loss, r.train_acc
            );
        }
        s
    }
}

/// Accuracy summary of a model on a labelled set.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation<T> {
    pub accuracy: f64,
    /// `(correct, total)` per class.
    pub per_class: Vec<(usize, usize)>,
    pub predictions: Vec<crate::model::Prediction<T>>,
}

pub fn evaluate<T: Scalar>(model: &ModelParams<T>, samples: &[Sample<T>]) -> Result<Evaluation<T>> {
    let mut per_class = vec![(0, 0); model.config.n_classes];
    let mut predictions = Vec::with_capacity(samples.len());
    for s in samples {
        let slot = per_class
            .get_mut(s.label)
            .ok_or_else(|| Error::Input(format!("label {} out of range", s.label)))?;
        let p = model.predict(&s.video)?;
        slot.1 += 1;
        if p.class == s.label {
            slot.0 += 1;
        }
        predictions.push(p);
    }
    let correct: usize = per_class.iter().map(|c| c.0).sum();
    Ok(Evaluation {
        accuracy: correct as f64 / samples.len().max(1) as f64,
        per_class,
        predictions,
    })
}

/// Writes the batch-mean gradient of `batch` into the model's grad slots and
/// returns per-sample `(loss, correct)`.
pub fn accumulate_batch<T: Scalar>(
    model: &mut ModelParams<T>,
    batch: &[&Sample<T>],
) -> Result<Vec<(T, bool)>> {
    let mut sum: Option<Vec<Vec<T>>> = None;
    let mut stats = Vec::with_capacity(batch.len());
    for s in batch {
        let g = model.loss_and_grad(&s.video, s.label)?;
        if !g.loss.is_finite() {
            return Err(Error::Numeric {
                op: "train.loss".into(),
                msg: format!("loss is {}", g.loss),
            });
        }
        stats.push((g.loss, argmax(&g.logits) == s.label));
        match &mut sum {
            None => sum = Some(g.grads),
            Some(acc) => {
                for (a, b) in acc.iter_mut().zip(g.grads) {
                    for (x, y) in a.iter_mut().zip(b) {
                        *x += y;
                    }
                }
            }
        }
    }
    let scale = T::one() / T::lit(batch.len().max(1) as f64);
    let mut grads = sum.unwrap_or_default().into_iter();
    let mut err = None;
    model.visit_mut(&mut |name, _, t| {
        let g: Vec<T> = grads.next().unwrap_or_default().into_iter().map(|x| x * scale).collect();
        if let Err(e) = t.set_grad(g) {
            err.get_or_insert(Error::Internal(format!("gradient for {name}: {e}")));
        }
    });
    err.map_or(Ok(stats), Err)
}

/// Data-dependent initialization of the first reduction layer: every output
/// unit is rescaled and shifted so that, over the first `n` samples, its
/// pre-activation has zero mean and unit variance. Returns the number of
/// samples used (0 when the model has no ACTF branch).
pub fn standardize_reduction<T: Scalar>(model: &mut ModelParams<T>, samples: &[Sample<T>], n: usize) -> Result<usize> {
    let n = n.min(samples.len());
    if model.weights.actf.is_none() || n == 0 {
        return Ok(0);
    }
    let mut pre = Vec::with_capacity(n);
    for s in &samples[..n] {
        let mut tape = crate::tensor::Tape::new();
        let w = model.bind(&mut tape);
        let v = tape.constant(s.video.clone());
        let out = crate::model::forward(&mut tape, v, model, &w)?;
        let actf = out.actf.ok_or_else(|| Error::Internal("ACTF branch missing".into()))?;
        let first = &w.actf.as_ref().expect("bound ACTF parameters").reduction.layers[0];
        let pooled = tape.value(actf.pooled).data().to_vec();
        let weight = tape.value(first.weight);
        let (k, m) = (weight.dims()[0], weight.dims()[1]);
        let mut z = vec![0.0f64; m];
        for (i, &p) in pooled.iter().enumerate().take(k) {
            for (j, zj) in z.iter_mut().enumerate() {
                *zj += p.as_f64() * weight.data()[i * m + j].as_f64();
            }
        }
        pre.push(z);
    }
    let layer = &mut model.weights.actf.as_mut().expect("checked above").reduction.layers[0];
    let m = layer.weight.dims()[1];
    for j in 0..m {
        let mean = pre.iter().map(|z| z[j]).sum::<f64>() / n as f64;
        let var = pre.iter().map(|z| (z[j] - mean).powi(2)).sum::<f64>() / n as f64;
        let scale = 1.0 / (var + 1e-12).sqrt();
        for row in layer.weight.data_mut().chunks_exact_mut(m) {
            row[j] = T::lit(row[j].as_f64() * scale);
        }
        layer.bias.data_mut()[j] = T::lit(-mean * scale);
    }
    Ok(n)
}

/// Trains `model` in place. Sample order within each epoch is a seeded shuffle.
pub fn fit<T: Scalar>(
    model: &mut ModelParams<T>,
    train: &[Sample<T>],
    eval: Option<&[Sample<T>]>,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    if cfg.epochs > 0 {
        standardize_reduction(model, train, cfg.data_init_samples)?;
    }
    let mut opt = Sgd::from_config(cfg);
    let mut report = TrainReport::default();
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        order.sort_unstable();
        order.shuffle(&mut rng_for(derive_seed(cfg.seed, epoch as u64), streams::SHUFFLE));
        let (mut loss, mut correct) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Sample<T>> = chunk.iter().map(|&i| &train[i]).collect();
            for (l, ok) in accumulate_batch(model, &batch)? {
                loss += l.as_f64();
                correct += ok as usize;
            }
            opt.step(model, T::lit(lr))?;
        }
        let eval_acc = match eval {
            Some(set) if !set.is_empty() => Some(evaluate(model, set)?.accuracy),
            _ => None,
        };
        report.epochs.push(EpochRecord {
            epoch,
            lr,
            loss: loss / train.len() as f64,
            train_acc: correct as f64 / train.len() as f64,
            eval_acc,
        });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, Variant};
    use crate::sketch::SketchMode;

    fn quadratic_step(opt: &mut Sgd<f64>, theta: &mut [Tensor<f64>], lr: f64) {
        let g = theta[0].data().to_vec();
        theta[0].set_grad(g).unwrap();
        opt.step(theta, lr).unwrap();
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = [Tensor::vector(vec![0.3, -2.0])];
        p[0].set_grad(vec![0.0, 0.0]).unwrap();
        Sgd::<f64>::new(0.9, 0.0, false).step(&mut p[..], 0.1).unwrap();
        assert_eq!(p[0].data(), &[0.3, -2.0]);
        assert!(p[0].grad().is_none());
    }

    #[test]
    fn plain_gradient_descent_closed_form() {
        let mut p = [Tensor::vector(vec![1.0])];
        quadratic_step(&mut Sgd::new(0.0, 0.0, false), &mut p, 0.1);
        assert_eq!(p[0].data(), &[0.9]);
    }

    #[test]
    fn momentum_matches_scalar_recurrence() {
        let (lr, mu) = (0.1, 0.9);
        let mut p = [Tensor::vector(vec![1.0])];
        let mut opt = Sgd::new(mu, 0.0, false);
        let (mut theta, mut v) = (1.0f64, 0.0f64);
        for _ in 0..20 {
            quadratic_step(&mut opt, &mut p, lr);
            v = mu * v + theta;
            theta -= lr * v;
            assert!((p[0].data()[0] - theta).abs() < 1e-12);
        }
    }

    #[test]
    fn weight_decay_spares_biases_and_fusion_logits() {
        let mut p = crate::params::Linear {
            weight: Tensor::vector(vec![1.0]),
            bias: Tensor::vector(vec![1.0]),
        };
        struct One<'a>(&'a mut crate::params::Linear<Tensor<f64>>, Tensor<f64>);
        impl ParamSet<f64> for One<'_> {
            fn visit_params(&mut self, f: &mut VisitMutFn<'_, Tensor<f64>>) {
                self.0.visit_mut("lin", f);
                f("raw", ParamKind::FusionLogit, &mut self.1);
            }
        }
        let mut set = One(&mut p, Tensor::vector(vec![1.0]));
        for decay_all in [false, true] {
            set.0.weight = Tensor::vector(vec![1.0]);
            set.0.bias = Tensor::vector(vec![1.0]);
            set.1 = Tensor::vector(vec![1.0]);
            let mut opt = Sgd::new(0.0, 0.5, decay_all);
            set.visit_params(&mut |_, _, t| t.set_grad(vec![0.0]).unwrap());
            opt.step(&mut set, 1.0).unwrap();
            let expect = if decay_all { 0.5 } else { 1.0 };
            assert_eq!(set.0.weight.data(), &[0.5]);
            assert_eq!(set.0.bias.data(), &[expect]);
            assert_eq!(set.1.data(), &[expect]);
        }
    }

    #[test]
    fn missing_gradient_is_internal_error() {
        let mut p = [Tensor::vector(vec![1.0]), Tensor::vector(vec![2.0])];
        p[0].set_grad(vec![1.0]).unwrap();
        assert!(matches!(
            Sgd::<f64>::new(0.9, 0.0, false).step(&mut p[..], 0.1),
            Err(Error::Internal(_))
        ));
        assert_eq!(p[0].data(), &[1.0]);
    }

    #[test]
    fn step_schedule() {
        let cfg = TrainConfig {
            decay_epochs: vec![2],
            epochs: 3,
            ..TrainConfig::default()
        };
        let lrs: Vec<f64> = (0..3).map(|e| cfg.lr_at(e)).collect();
        assert_eq!(lrs[..2], [0.005, 0.005]);
        assert!((lrs[2] - 0.0005).abs() < 1e-18);
        assert_eq!(TrainConfig::default().lr_at(0), 0.005);
        let bad = TrainConfig {
            decay_factor: 1.0,
            ..TrainConfig::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
    }

    fn tiny_setup() -> (ModelParams<f64>, Vec<Sample<f64>>) {
        let cfg = ModelConfig {
            frames: 4,
            height: 8,
            width: 8,
            hidden_channels: 3,
            c_out: 4,
            bilinear_dim: 16,
            reduction_widths: None,
            n_classes: 2,
            variant: Variant::Full,
            sketch_mode: SketchMode::Pair,
            sketch_seed: 1,
            init_seed: 2,
            frame_norm: true,
        };
        let samples = (0..4)
            .map(|i| Sample {
                video: Tensor::from_fn(&[4, 3, 8, 8], |j| ((i * 131 + j * 17) % 29) as f64 / 29.0),
                label: i % 2,
            })
            .collect();
        (ModelParams::init(cfg).unwrap(), samples)
    }

    fn batch_loss(model: &ModelParams<f64>, samples: &[Sample<f64>]) -> f64 {
        samples
            .iter()
            .map(|s| model.loss_and_grad(&s.video, s.label).unwrap().loss)
            .sum::<f64>()
            / samples.len() as f64
    }

    #[test]
    fn tiny_step_does_not_increase_loss() {
        let (mut model, samples) = tiny_setup();
        let before = batch_loss(&model, &samples);
        let refs: Vec<&Sample<f64>> = samples.iter().collect();
        accumulate_batch(&mut model, &refs).unwrap();
        Sgd::from_config(&TrainConfig::default()).step(&mut model, 1e-6).unwrap();
        assert!(batch_loss(&model, &samples) <= before);
    }

    #[test]
    fn single_sample_step_is_gradient_descent() {
        let (mut model, samples) = tiny_setup();
        let g = model.loss_and_grad(&samples[0].video, samples[0].label).unwrap();
        let before = model.tensors();
        accumulate_batch(&mut model, &[&samples[0]]).unwrap();
        Sgd::new(0.0, 0.0, false).step(&mut model, 0.01).unwrap();
        for ((_, _, b), ((_, _, a), gr)) in before.iter().zip(model.tensors().iter().zip(&g.grads)) {
            for ((x0, x1), gi) in b.data().iter().zip(a.data()).zip(gr) {
                assert_eq!(*x1, x0 - 0.01 * gi);
            }
        }
    }

    #[test]
    fn fit_is_reproducible_and_validates() {
        let (model, samples) = tiny_setup();
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 3,
            seed: 4,
            ..TrainConfig::default()
        };
        let (mut a, mut b) = (model.clone(), model.clone());
        let ra = fit(&mut a, &samples, Some(&samples), &cfg).unwrap();
        let rb = fit(&mut b, &samples, Some(&samples), &cfg).unwrap();
        assert_eq!(ra, rb);
        assert_eq!(a, b);
        assert_eq!(ra.epochs.len(), 2);
        assert!(ra.to_tsv().starts_with("epoch\tlr\tloss\ttrain_acc\teval_acc\n"));
        let mut c = model.clone();
        assert!(matches!(fit(&mut c, &[], None, &cfg), Err(Error::Config(_))));
        let zero = TrainConfig { epochs: 0, ..cfg };
        fit(&mut c, &samples, None, &zero).unwrap();
        assert_eq!(c, model);
    }
}
