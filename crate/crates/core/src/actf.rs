//! The ACTF branch.
//!
//! From a low-level feature `F: [t, C_out, H_s, W_s]`:
//!
//! 1. ICCF: compact bilinear correlation of successive frames at every
//!    location, `b_i[:, S] = CS1(f_{i,S}) ⊛ CS2(f_{i+1,S})`, weighted over
//!    time by attention (`B_i = α_i b_i`), shape `[t-1, C_bilinear, H_s, W_s]`.
//! 2. IMF: mean of successive frames, `[t-1, C_out, H_s, W_s]`.
//! 3. `H = β B ⊕ γ L` along channels.
//! 4. Global mean over time and space, then a three-layer reduction network
//!    back to `C_out`.

use std::sync::Arc;

use crate::attention::{fuse_pair, temporal_weights, Fusion, Temporal};
use crate::error::{Error, Result};
use crate::params::{join, Init, Linear, MapFn, VisitMutFn, RELU_GAIN};
use crate::scalar::Scalar;
use crate::sketch::{SketchMode, SketchPlan};
use crate::tensor::{Tape, Tensor, Var};

/// Backbone output `F` with axes `(t, C_out, H_s, W_s)`.
#[derive(Clone, Copy, Debug)]
pub struct LowLevelFeature {
    pub f: Var,
    pub frames: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl LowLevelFeature {
    pub fn new<T: Scalar>(tape: &Tape<T>, f: Var) -> Result<Self> {
        let d = tape.dims(f);
        if d.len() != 4 {
            return Err(Error::Input(format!(
                "low-level feature must be [t, C, H, W], got {d:?}"
            )));
        }
        if d[0] < 2 {
            return Err(Error::Input(format!(
                "at least 2 frames are needed for inter-frame features, got {}",
                d[0]
            )));
        }
        if d[1..].iter().any(|&e| e == 0) {
            return Err(Error::Input(format!("empty feature extents {d:?}")));
        }
        Ok(LowLevelFeature {
            f,
            frames: d[0],
            channels: d[1],
            height: d[2],
            width: d[3],
        })
    }
}

/// Temporally weighted inter-frame correlation `B` and its weights `α`.
#[derive(Clone, Copy, Debug)]
pub struct IccfFeature {
    pub b: Var,
    pub alpha: Var,
}

/// Pairwise temporal mean `L`.
#[derive(Clone, Copy, Debug)]
pub struct ImfFeature {
    pub l: Var,
}

/// `H_cat = [weighted B | weighted L]` and the fusion weights when attentive.
#[derive(Clone, Copy, Debug)]
pub struct FusedFeature {
    pub h: Var,
    pub weights: Option<Var>,
}

/// Every intermediate of one ACTF evaluation.
#[derive(Clone, Copy, Debug)]
pub struct ActfOutput {
    pub iccf: IccfFeature,
    pub imf: ImfFeature,
    pub fused: FusedFeature,
    pub pooled: Var,
    pub v_actf: Var,
}

/// `C_concat → r1 → r2 → C_out` with ReLU after the first two layers.
#[derive(Clone, Debug, PartialEq)]
pub struct ReductionNetwork<P> {
    pub layers: [Linear<P>; 3],
}

impl<T: Scalar> ReductionNetwork<Tensor<T>> {
    pub fn init(init: Init, name: &str, widths: [usize; 4]) -> Self {
        let layer = |i: usize| {
            let gain = if i < 2 { RELU_GAIN } else { 1.0 };
            Linear::init_with_gain(init, &join(name, &format!("layer{i}")), widths[i], widths[i + 1], gain)
        };
        ReductionNetwork {
            layers: [layer(0), layer(1), layer(2)],
        }
    }
}

impl<P> ReductionNetwork<P> {
    pub fn map<Q>(&self, prefix: &str, f: &mut MapFn<'_, P, Q>) -> ReductionNetwork<Q> {
        let [a, b, c] = &self.layers;
        ReductionNetwork {
            layers: [
                a.map(&join(prefix, "layer0"), f),
                b.map(&join(prefix, "layer1"), f),
                c.map(&join(prefix, "layer2"), f),
            ],
        }
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut VisitMutFn<'_, P>) {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            layer.visit_mut(&join(prefix, &format!("layer{i}")), f);
        }
    }
}

impl ReductionNetwork<Var> {
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let h = self.layers[0].forward(tape, x)?;
        let h = tape.relu(h);
        let h = self.layers[1].forward(tape, h)?;
        let h = tape.relu(h);
        self.layers[2].forward(tape, h)
    }
}

/// Learnable parameters of the ACTF branch.
#[derive(Clone, Debug, PartialEq)]
pub struct ActfParams<P> {
    pub temporal: Temporal<P>,
    pub pair_fusion: Fusion<P>,
    pub reduction: ReductionNetwork<P>,
}

impl<P> ActfParams<P> {
    pub fn map<Q>(&self, prefix: &str, f: &mut MapFn<'_, P, Q>) -> ActfParams<Q> {
        ActfParams {
            temporal: self.temporal.map(&join(prefix, "temporal"), f),
            pair_fusion: self.pair_fusion.map(&join(prefix, "pair_fusion"), f),
            reduction: self.reduction.map(&join(prefix, "reduction"), f),
        }
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut VisitMutFn<'_, P>) {
        self.temporal.visit_mut(&join(prefix, "temporal"), f);
        self.pair_fusion.visit_mut(&join(prefix, "pair_fusion"), f);
        self.reduction.visit_mut(&join(prefix, "reduction"), f);
    }
}

fn check_plan(feature: &LowLevelFeature, plan: &SketchPlan) -> Result<()> {
    if plan.input_dim() != feature.channels {
        return Err(Error::Config(format!(
            "sketch plan expects {} channels but the feature has {}",
            plan.input_dim(),
            feature.channels
        )));
    }
    Ok(())
}

/// Inter-frame compact bilinear feature with temporal weighting.
pub fn extract_iccf<T: Scalar>(
    tape: &mut Tape<T>,
    feature: &LowLevelFeature,
    plan: &Arc<SketchPlan>,
    mode: SketchMode,
    temporal: &Temporal<Var>,
) -> Result<IccfFeature> {
    check_plan(feature, plan)?;
    if let Temporal::Attentive(attn) = temporal {
        if attn.feat_dim != plan.output_dim() {
            return Err(Error::Config(format!(
                "temporal attention expects {} channels but the sketch produces {}",
                attn.feat_dim,
                plan.output_dim()
            )));
        }
    }
    let pairs = tape.pair_sketch(feature.f, plan, mode.lag())?;
    match temporal {
        Temporal::Attentive(attn) => {
            let alpha = temporal_weights(tape, pairs, attn)?;
            let b = tape.scale_slices(pairs, alpha)?;
            Ok(IccfFeature { b, alpha })
        }
        Temporal::Unweighted => {
            let alpha = tape.constant(Tensor::full(&[feature.frames - 1], T::one()));
            Ok(IccfFeature { b: pairs, alpha })
        }
    }
}

/// Mean of successive frames: average pool with kernel `(2, 1, 1)`, stride 1.
pub fn extract_imf<T: Scalar>(tape: &mut Tape<T>, feature: &LowLevelFeature) -> Result<ImfFeature> {
    let l = tape.avg_pool(feature.f, [2, 1, 1], [1, 1, 1])?;
    Ok(ImfFeature { l })
}

/// Full ACTF evaluation; `v_actf` has length `C_out`.
pub fn extract_actf<T: Scalar>(
    tape: &mut Tape<T>,
    feature: &LowLevelFeature,
    plan: &Arc<SketchPlan>,
    mode: SketchMode,
    params: &ActfParams<Var>,
) -> Result<ActfOutput> {
    let iccf = extract_iccf(tape, feature, plan, mode, &params.temporal)?;
    let imf = extract_imf(tape, feature)?;
    let fused = fuse_pair(tape, iccf.b, imf.l, &params.pair_fusion)?;
    let hd = tape.dims(fused.out).to_vec();
    let pooled = tape.avg_pool(fused.out, [hd[0], hd[2], hd[3]], [1, 1, 1])?;
    let pooled = tape.reshape(pooled, &[hd[1]])?;
    let v_actf = params.reduction.forward(tape, pooled)?;
    if tape.value(v_actf).len() != feature.channels {
        return Err(Error::Config(format!(
            "reduction network outputs {} values, expected C_out = {}",
            tape.value(v_actf).len(),
            feature.channels
        )));
    }
    Ok(ActfOutput {
        iccf,
        imf,
        fused: FusedFeature {
            h: fused.out,
            weights: fused.weights,
        },
        pooled,
        v_actf,
    })
}
