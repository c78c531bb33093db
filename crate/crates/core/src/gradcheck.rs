//! Finite-difference audit of every differentiable operation.
//!
//! Each check builds a scalar loss `Σ p ⊙ op(inputs)` with a random fixed
//! projection `p`, differentiates it on the tape and compares against central
//! differences (step `1e-5`, f64) on a random subset of input coordinates.
//! The reported error is `‖a − n‖ / max(‖a‖, ‖n‖, 1e-10)` over all sampled
//! coordinates of all inputs.

use std::sync::Arc;

use rand::seq::index::sample;
use rand::Rng as _;

use crate::actf::{extract_actf, LowLevelFeature};
use crate::attention::{fusion_weights, temporal_weights, PairFusionWeights, TemporalAttention};
use crate::error::Result;
use crate::model::{forward, ModelConfig, ModelParams, Variant, NORM_EPS};
use crate::params::Init;
use crate::rng::{derive_seed, rng_for, streams, Rng};
use crate::sketch::{SketchMode, SketchPlan, Which};
use crate::tensor::{Tape, Tensor, Var};

pub const STEP: f64 = 1e-5;
pub const PRIMITIVE_TOL: f64 = 1e-4;
pub const MODEL_TOL: f64 = 1e-3;
const MAX_COORDS: usize = 48;

/// One audited operation at one seed.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub seed: u64,
    pub rel_err: f64,
    pub tol: f64,
    pub coords: usize,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.rel_err < self.tol
    }
}

type Build<'a> = dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var> + 'a;

/// Gradient check of `build` at `inputs`.
pub fn check(
    name: &str,
    seed: u64,
    tol: f64,
    inputs: &[Tensor<f64>],
    build: &Build<'_>,
) -> Result<CheckResult> {
    let mut rng = rng_for(seed, streams::AUDIT);
    let eval = |xs: &[Tensor<f64>], proj: Option<&Tensor<f64>>| -> Result<(Tape<f64>, Var, Vec<Var>, Var)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.param(x.clone())).collect();
        let out = build(&mut tape, &vars)?;
        let p = match proj {
            Some(p) => p.clone(),
            None => Tensor::zeros(tape.dims(out)),
        };
        let pv = tape.constant(p);
        let prod = tape.mul(out, pv)?;
        let loss = tape.sum(prod);
        Ok((tape, loss, vars, out))
    };
    let (probe, _, _, out) = eval(inputs, None)?;
    let proj = Tensor::from_fn(probe.dims(out), |_| rng.random_range(-1.0..1.0));
    let (mut tape, loss, vars, _) = eval(inputs, Some(&proj))?;
    tape.backward(loss)?;
    let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
    let mut xs = inputs.to_vec();
    for (k, var) in vars.iter().enumerate() {
        let grad = tape.grad(*var).map(<[f64]>::to_vec).unwrap_or_default();
        let n = xs[k].len();
        let picks = sample(&mut rng, n, n.min(MAX_COORDS));
        for i in picks.iter() {
            let x0 = xs[k].data()[i];
            xs[k].data_mut()[i] = x0 + STEP;
            let (t, lp, _, _) = eval(&xs, Some(&proj))?;
            let fp = t.value(lp).data()[0];
            xs[k].data_mut()[i] = x0 - STEP;
            let (t, lm, _, _) = eval(&xs, Some(&proj))?;
            let fm = t.value(lm).data()[0];
            xs[k].data_mut()[i] = x0;
            numeric.push((fp - fm) / (2.0 * STEP));
            analytic.push(grad.get(i).copied().unwrap_or(0.0));
        }
    }
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, n)| a - n).collect();
    let denom = norm(&analytic).max(norm(&numeric)).max(1e-10);
    Ok(CheckResult {
        name: name.to_string(),
        seed,
        rel_err: norm(&diff) / denom,
        tol,
        coords: analytic.len(),
    })
}

fn uniform(rng: &mut Rng, dims: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(dims, |_| rng.random_range(lo..hi))
}

/// Values bounded away from zero, so piecewise-linear kinks are never straddled.
fn off_zero(rng: &mut Rng, dims: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(dims, |_| {
        let m = rng.random_range(0.1..1.0);
        if rng.random_bool(0.5) { m } else { -m }
    })
}

struct Case {
    name: &'static str,
    inputs: Vec<Tensor<f64>>,
    build: Box<Build<'static>>,
}

fn case(
    name: &'static str,
    inputs: Vec<Tensor<f64>>,
    build: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var> + 'static,
) -> Case {
    Case {
        name,
        inputs,
        build: Box::new(build),
    }
}

fn primitive_cases(seed: u64) -> Result<Vec<Case>> {
    let mut rng = rng_for(seed, streams::AUDIT);
    let r = &mut rng;
    let plan = Arc::new(SketchPlan::new(5, 12, derive_seed(seed, 1))?);
    let (p1, p2, p3, p4) = (plan.clone(), plan.clone(), plan.clone(), plan.clone());
    let pair_plan = Arc::new(SketchPlan::new(3, 10, derive_seed(seed, 2))?);
    let pp2 = pair_plan.clone();
    let attn_init = Init { seed };
    let attn: TemporalAttention<Tensor<f64>> = TemporalAttention::init(attn_init, "attn", 6);
    let label = r.random_range(0..5);
    Ok(vec![
        case("matmul", vec![uniform(r, &[3, 4], -1.0, 1.0), uniform(r, &[4, 2], -1.0, 1.0)], |t, v| {
            t.matmul(v[0], v[1])
        }),
        case("add", vec![uniform(r, &[2, 3], -1.0, 1.0), uniform(r, &[2, 3], -1.0, 1.0)], |t, v| {
            t.add(v[0], v[1])
        }),
        case("sub", vec![uniform(r, &[5], -1.0, 1.0), uniform(r, &[5], -1.0, 1.0)], |t, v| {
            t.sub(v[0], v[1])
        }),
        case("mul", vec![uniform(r, &[2, 2, 2], -1.0, 1.0), uniform(r, &[2, 2, 2], -1.0, 1.0)], |t, v| {
            t.mul(v[0], v[1])
        }),
        case("scale", vec![uniform(r, &[6], -1.0, 1.0)], |t, v| Ok(t.scale(v[0], -1.7))),
        case("scale_by", vec![uniform(r, &[2, 3], -1.0, 1.0), uniform(r, &[1], -1.0, 1.0)], |t, v| {
            t.scale_by(v[0], v[1])
        }),
        case("scale_slices", vec![uniform(r, &[3, 2, 2], -1.0, 1.0), uniform(r, &[3], -1.0, 1.0)], |t, v| {
            t.scale_slices(v[0], v[1])
        }),
        case("relu", vec![off_zero(r, &[10])], |t, v| Ok(t.relu(v[0]))),
        case("sigmoid", vec![uniform(r, &[7], -4.0, 4.0)], |t, v| Ok(t.sigmoid(v[0]))),
        case("softmax", vec![uniform(r, &[5], -2.0, 2.0)], |t, v| t.softmax(v[0])),
        case("reshape", vec![uniform(r, &[2, 6], -1.0, 1.0)], |t, v| t.reshape(v[0], &[3, 4])),
        case("sum", vec![uniform(r, &[4, 2], -1.0, 1.0)], |t, v| Ok(t.sum(v[0]))),
        case("mean", vec![uniform(r, &[4, 2], -1.0, 1.0)], |t, v| Ok(t.mean(v[0]))),
        case("select", vec![uniform(r, &[4], -1.0, 1.0)], |t, v| t.select(v[0], 2)),
        case("avg_pool", vec![uniform(r, &[4, 2, 3, 3], -1.0, 1.0)], |t, v| {
            t.avg_pool(v[0], [2, 2, 1], [1, 1, 1])
        }),
        case("avg_pool_strided", vec![uniform(r, &[3, 2, 4, 4], -1.0, 1.0)], |t, v| {
            t.avg_pool(v[0], [1, 2, 2], [1, 2, 2])
        }),
        case("concat_channels", vec![uniform(r, &[2, 3, 2, 2], -1.0, 1.0), uniform(r, &[2, 1, 2, 2], -1.0, 1.0)], |t, v| {
            t.concat_channels(v[0], v[1])
        }),
        case("concat_vectors", vec![uniform(r, &[3], -1.0, 1.0), uniform(r, &[2], -1.0, 1.0)], |t, v| {
            t.concat_channels(v[0], v[1])
        }),
        case("circular_convolve", vec![uniform(r, &[9], -1.0, 1.0), uniform(r, &[9], -1.0, 1.0)], |t, v| {
            t.circular_convolve(v[0], v[1])
        }),
        case("count_sketch_first", vec![uniform(r, &[5], -1.0, 1.0)], move |t, v| {
            t.count_sketch(v[0], Which::First, &p1)
        }),
        case("count_sketch_second", vec![uniform(r, &[5], -1.0, 1.0)], move |t, v| {
            t.count_sketch(v[0], Which::Second, &p2)
        }),
        case("compact_bilinear", vec![uniform(r, &[5], -1.0, 1.0), uniform(r, &[5], -1.0, 1.0)], move |t, v| {
            t.compact_bilinear(v[0], v[1], &p3)
        }),
        case("pair_sketch", vec![uniform(r, &[4, 3, 2, 3], -1.0, 1.0)], move |t, v| {
            t.pair_sketch(v[0], &pair_plan, 1)
        }),
        case("pair_sketch_single_frame", vec![uniform(r, &[3, 3, 2, 2], -1.0, 1.0)], move |t, v| {
            t.pair_sketch(v[0], &pp2, 0)
        }),
        case("conv2d", vec![
            uniform(r, &[2, 3, 5, 4], -1.0, 1.0),
            uniform(r, &[2, 3, 3, 3], -1.0, 1.0),
            uniform(r, &[2], -1.0, 1.0),
        ], |t, v| t.conv2d(v[0], v[1], v[2])),
        case("plane_norm", vec![uniform(r, &[2, 3, 3, 4], -1.0, 1.0)], |t, v| {
            t.plane_norm(v[0], NORM_EPS)
        }),
        case("cross_entropy", vec![uniform(r, &[5], -2.0, 2.0)], move |t, v| {
            t.cross_entropy(v[0], label)
        }),
        case("temporal_weights", vec![uniform(r, &[3, 6, 2, 2], -1.0, 1.0), attn.proj.clone()], |t, v| {
            let attn = TemporalAttention { proj: v[1], feat_dim: 6 };
            temporal_weights(t, v[0], &attn)
        }),
        case("fusion_weights", vec![uniform(r, &[1], -2.0, 2.0), uniform(r, &[1], -2.0, 2.0)], |t, v| {
            let w = PairFusionWeights { raw_a: v[0], raw_b: v[1], site: crate::attention::FusionSite::PairFusion };
            fusion_weights(t, &w)
        }),
        case("extract_actf", actf_inputs(seed, &plan, r)?, move |t, v| {
            actf_from_vars(t, v, &p4)
        }),
    ])
}

fn actf_inputs(seed: u64, plan: &Arc<SketchPlan>, r: &mut Rng) -> Result<Vec<Tensor<f64>>> {
    let cfg = ModelConfig {
        c_out: plan.input_dim(),
        bilinear_dim: plan.output_dim(),
        ..audit_config(Variant::Full, seed)
    };
    let m = ModelParams::<f64>::init(cfg)?;
    let mut inputs = vec![uniform(r, &[3, plan.input_dim(), 2, 2], 0.0, 1.0)];
    if let Some(a) = &m.weights.actf {
        a.map("", &mut |_, _, t| inputs.push(perturbed(t, r)));
    }
    Ok(inputs)
}

fn actf_from_vars(tape: &mut Tape<f64>, v: &[Var], plan: &Arc<SketchPlan>) -> Result<Var> {
    let cfg = ModelConfig {
        c_out: plan.input_dim(),
        bilinear_dim: plan.output_dim(),
        ..audit_config(Variant::Full, 0)
    };
    let m = ModelParams::<f64>::init(cfg)?;
    let mut it = v[1..].iter().copied();
    let params = m
        .weights
        .actf
        .as_ref()
        .map(|a| a.map("", &mut |_, _, _| it.next().expect("parameter count")))
        .expect("full variant has an ACTF branch");
    let feature = LowLevelFeature::new(tape, v[0])?;
    Ok(extract_actf(tape, &feature, plan, SketchMode::Pair, &params)?.v_actf)
}

/// Adds a random offset so zero-initialized biases and fusion logits are
/// exercised away from their symmetric starting point.
fn perturbed(t: &Tensor<f64>, r: &mut Rng) -> Tensor<f64> {
    Tensor::from_fn(t.dims(), |i| t.data()[i] + r.random_range(-0.3..0.3))
}

/// Tiny model used by the end-to-end audit: `t = 4`, `C_out = 8`, `d = 32`,
/// `4 × 4` feature planes.
pub fn audit_config(variant: Variant, seed: u64) -> ModelConfig {
    ModelConfig {
        frames: 4,
        height: 8,
        width: 8,
        hidden_channels: 4,
        c_out: 8,
        bilinear_dim: 32,
        reduction_widths: None,
        n_classes: 3,
        variant,
        sketch_mode: SketchMode::Pair,
        sketch_seed: derive_seed(seed, 11),
        init_seed: derive_seed(seed, 12),
        frame_norm: true,
    }
}

/// End-to-end check of `forward` with respect to every parameter and the video.
pub fn check_model(variant: Variant, seed: u64) -> Result<CheckResult> {
    let model = ModelParams::<f64>::init(audit_config(variant, seed))?;
    let mut r = rng_for(derive_seed(seed, 13), streams::AUDIT);
    let mut inputs = vec![uniform(&mut r, &[4, 3, 8, 8], 0.0, 1.0)];
    model.weights.map(&mut |_, _, t| inputs.push(perturbed(t, &mut r)));
    let build = |tape: &mut Tape<f64>, v: &[Var]| {
        let mut it = v[1..].iter().copied();
        let w = model.weights.map(&mut |_, _, _| it.next().expect("parameter count"));
        Ok(forward(tape, v[0], &model, &w)?.logits)
    };
    check(&format!("model[{variant}]"), seed, MODEL_TOL, &inputs, &build)
}

/// Every primitive check at one seed.
pub fn check_primitives(seed: u64) -> Result<Vec<CheckResult>> {
    primitive_cases(seed)?
        .into_iter()
        .map(|c| check(c.name, seed, PRIMITIVE_TOL, &c.inputs, &*c.build))
        .collect()
}

/// Runs every primitive check over `seeds` consecutive seeds starting at
/// `base_seed`, then the end-to-end check for every variant at `base_seed`.
pub fn audit(base_seed: u64, seeds: u64) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for s in base_seed..base_seed + seeds {
        out.extend(check_primitives(s)?);
    }
    for v in Variant::ALL {
        out.push(check_model(v, base_seed)?);
    }
    Ok(out)
}
