//! Full classifier: per-frame convolutional backbone, spatial-temporal pooled
//! branch, ACTF branch, final attentive fusion and a linear head.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::actf::{extract_actf, ActfOutput, ActfParams, LowLevelFeature, ReductionNetwork};
use crate::attention::{fuse_pair, Fusion, FusionSite, PairFusionWeights, Temporal, TemporalAttention};
use crate::error::{Error, Result};
use crate::params::{join, Init, Linear, MapFn, ParamKind, VisitMutFn, RELU_GAIN};
use crate::scalar::Scalar;
use crate::sketch::{SketchMode, SketchPlan};
use crate::tensor::{Tape, Tensor, Var};

/// Number of colour channels in every input frame.
pub const VIDEO_CHANNELS: usize = 3;
const KERNEL: usize = 3;

/// Structural variants used for ablation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Both branches, attentive fusion everywhere.
    Full,
    /// Classify on the ACTF vector alone.
    SingleActf,
    /// ACTF with the IMF weight forced to zero.
    IccfOnly,
    /// Every attentive concatenation replaced by a plain one.
    NoAttn,
    /// Classify on the spatial-temporal pooled vector alone.
    SpatialOnly,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Full,
        Variant::SingleActf,
        Variant::IccfOnly,
        Variant::NoAttn,
        Variant::SpatialOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::SingleActf => "single-actf",
            Variant::IccfOnly => "iccf-only",
            Variant::NoAttn => "no-attn",
            Variant::SpatialOnly => "spatial-only",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}`")))
    }
}

/// Sizes, variant and seeds that fully determine a freshly initialized model.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    /// Channels after the first convolution.
    pub hidden_channels: usize,
    pub c_out: usize,
    /// Output dimension of the compact bilinear sketch.
    pub bilinear_dim: usize,
    /// Reduction-network hidden widths; `None` picks `C_concat / 2` and `2 · C_out`.
    pub reduction_widths: Option<[usize; 2]>,
    pub n_classes: usize,
    pub variant: Variant,
    pub sketch_mode: SketchMode,
    pub sketch_seed: u64,
    pub init_seed: u64,
    /// Normalize each backbone feature plane before its ReLU.
    #[serde(default = "enabled")]
    pub frame_norm: bool,
}

fn enabled() -> bool {
    true
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("frames", self.frames),
            ("hidden_channels", self.hidden_channels),
            ("c_out", self.c_out),
            ("bilinear_dim", self.bilinear_dim),
            ("n_classes", self.n_classes),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.frames < 2 {
            return Err(Error::Config(format!(
                "at least 2 frames are required, got {}",
                self.frames
            )));
        }
        if self.height < 2 || self.width < 2 {
            return Err(Error::Config(format!(
                "frames of {}x{} are too small for the backbone's 2x2 pooling",
                self.height, self.width
            )));
        }
        if let Some([r1, r2]) = self.reduction_widths {
            if r1 == 0 || r2 == 0 {
                return Err(Error::Config("reduction widths must be positive".into()));
            }
        }
        Ok(())
    }

    /// Spatial extents `(H_s, W_s)` of the low-level feature.
    pub fn feature_extent(&self) -> (usize, usize) {
        (self.height / 2, self.width / 2)
    }

    pub fn concat_channels(&self) -> usize {
        self.c_out + self.bilinear_dim
    }

    /// `[C_concat, r1, r2, C_out]`.
    pub fn reduction_layout(&self) -> [usize; 4] {
        let [r1, r2] = self
            .reduction_widths
            .unwrap_or([(self.concat_channels() / 2).max(1), 2 * self.c_out]);
        [self.concat_channels(), r1, r2, self.c_out]
    }

    pub fn with_variant(&self, variant: Variant) -> Self {
        ModelConfig {
            variant,
            ..self.clone()
        }
    }
}

/// Two 3×3 convolutions applied to every frame with shared weights:
/// `conv(3→c1) → norm → ReLU → 2×2 mean pool → conv(c1→C_out) → norm → ReLU`,
/// where `norm` is an optional parameter-free per-plane standardization.
#[derive(Clone, Debug, PartialEq)]
pub struct Backbone<P> {
    pub conv1_weight: P,
    pub conv1_bias: P,
    pub conv2_weight: P,
    pub conv2_bias: P,
}

impl<T: Scalar> Backbone<Tensor<T>> {
    pub fn init(init: Init, name: &str, hidden: usize, c_out: usize) -> Self {
        let conv = |cin: usize, cout: usize, layer: &str| {
            let bound = RELU_GAIN / ((cin * KERNEL * KERNEL) as f64).sqrt();
            init.uniform(
                &join(name, &format!("{layer}.weight")),
                &[cout, cin, KERNEL, KERNEL],
                bound,
            )
        };
        Backbone {
            conv1_weight: conv(VIDEO_CHANNELS, hidden, "conv1"),
            conv1_bias: Tensor::zeros(&[hidden]),
            conv2_weight: conv(hidden, c_out, "conv2"),
            conv2_bias: Tensor::zeros(&[c_out]),
        }
    }
}

impl<P> Backbone<P> {
    pub fn map<Q>(&self, prefix: &str, f: &mut MapFn<'_, P, Q>) -> Backbone<Q> {
        Backbone {
            conv1_weight: f(&join(prefix, "conv1.weight"), ParamKind::Weight, &self.conv1_weight),
            conv1_bias: f(&join(prefix, "conv1.bias"), ParamKind::Bias, &self.conv1_bias),
            conv2_weight: f(&join(prefix, "conv2.weight"), ParamKind::Weight, &self.conv2_weight),
            conv2_bias: f(&join(prefix, "conv2.bias"), ParamKind::Bias, &self.conv2_bias),
        }
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut VisitMutFn<'_, P>) {
        f(&join(prefix, "conv1.weight"), ParamKind::Weight, &mut self.conv1_weight);
        f(&join(prefix, "conv1.bias"), ParamKind::Bias, &mut self.conv1_bias);
        f(&join(prefix, "conv2.weight"), ParamKind::Weight, &mut self.conv2_weight);
        f(&join(prefix, "conv2.bias"), ParamKind::Bias, &mut self.conv2_bias);
    }
}

/// Variance floor of the backbone's plane normalization.
pub const NORM_EPS: f64 = 1e-5;

impl Backbone<Var> {
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, video: Var, norm: bool) -> Result<Var> {
        let stage = |tape: &mut Tape<T>, h: Var| -> Result<Var> {
            let h = if norm { tape.plane_norm(h, T::lit(NORM_EPS))? } else { h };
            Ok(tape.relu(h))
        };
        let h = tape.conv2d(video, self.conv1_weight, self.conv1_bias)?;
        let h = stage(tape, h)?;
        let h = tape.avg_pool(h, [1, 2, 2], [1, 2, 2])?;
        let h = tape.conv2d(h, self.conv2_weight, self.conv2_bias)?;
        stage(tape, h)
    }
}

/// Classification head after the two branches.
#[derive(Clone, Debug, PartialEq)]
pub enum Head<P> {
    /// `classifier(fuse(V_actf, V_st))`, input length `2 · C_out`.
    Fused { fusion: Fusion<P>, classifier: Linear<P> },
    ActfOnly(Linear<P>),
    SpatialOnly(Linear<P>),
}

impl<P> Head<P> {
    pub fn classifier(&self) -> &Linear<P> {
        match self {
            Head::Fused { classifier, .. } => classifier,
            Head::ActfOnly(c) | Head::SpatialOnly(c) => c,
        }
    }

    pub fn map<Q>(&self, f: &mut MapFn<'_, P, Q>) -> Head<Q> {
        match self {
            Head::Fused { fusion, classifier } => Head::Fused {
                fusion: fusion.map("final_fusion", f),
                classifier: classifier.map("classifier", f),
            },
            Head::ActfOnly(c) => Head::ActfOnly(c.map("classifier", f)),
            Head::SpatialOnly(c) => Head::SpatialOnly(c.map("classifier", f)),
        }
    }

    pub fn visit_mut(&mut self, f: &mut VisitMutFn<'_, P>) {
        match self {
            Head::Fused { fusion, classifier } => {
                fusion.visit_mut("final_fusion", f);
                classifier.visit_mut("classifier", f);
            }
            Head::ActfOnly(c) | Head::SpatialOnly(c) => c.visit_mut("classifier", f),
        }
    }
}

/// All trainable tensors of a model, generic over the leaf type.
#[derive(Clone, Debug, PartialEq)]
pub struct Weights<P> {
    pub backbone: Backbone<P>,
    pub actf: Option<ActfParams<P>>,
    pub head: Head<P>,
}

impl<P> Weights<P> {
    pub fn map<Q>(&self, f: &mut MapFn<'_, P, Q>) -> Weights<Q> {
        Weights {
            backbone: self.backbone.map("backbone", f),
            actf: self.actf.as_ref().map(|a| a.map("actf", f)),
            head: self.head.map(f),
        }
    }

    pub fn visit_mut(&mut self, f: &mut VisitMutFn<'_, P>) {
        self.backbone.visit_mut("backbone", f);
        if let Some(a) = &mut self.actf {
            a.visit_mut("actf", f);
        }
        self.head.visit_mut(f);
    }
}

/// A model: configuration, the frozen sketch plan and the trainable weights.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub config: ModelConfig,
    pub plan: Arc<SketchPlan>,
    pub weights: Weights<Tensor<T>>,
}

/// Logits and the exported fusion weights of one evaluated video.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction<T> {
    pub logits: Vec<T>,
    pub class: usize,
    /// Post-softmax `(δ, ε)` of the final fusion, when attentive.
    pub final_weights: Option<[T; 2]>,
}

/// Loss, logits and flattened parameter gradients (in [`ModelParams::names`] order).
#[derive(Clone, Debug)]
pub struct SampleGrad<T> {
    pub loss: T,
    pub logits: Vec<T>,
    pub grads: Vec<Vec<T>>,
}

/// Handles produced by [`forward`].
#[derive(Clone, Copy, Debug)]
pub struct ForwardOutput {
    pub logits: Var,
    pub feature: LowLevelFeature,
    pub v_st: Var,
    pub actf: Option<ActfOutput>,
    pub final_weights: Option<Var>,
}

fn build_weights<T: Scalar>(config: &ModelConfig) -> Weights<Tensor<T>> {
    let init = Init {
        seed: config.init_seed,
    };
    let c_out = config.c_out;
    let attentive = |site| Fusion::Attentive(PairFusionWeights::init(site));
    let temporal = match config.variant {
        Variant::NoAttn => Temporal::Unweighted,
        _ => Temporal::Attentive(TemporalAttention::init(
            init,
            "actf.temporal",
            config.bilinear_dim,
        )),
    };
    let pair_fusion = match config.variant {
        Variant::IccfOnly => Fusion::Fixed([1.0, 0.0]),
        Variant::NoAttn => Fusion::Fixed([1.0, 1.0]),
        _ => attentive(FusionSite::PairFusion),
    };
    let actf = (config.variant != Variant::SpatialOnly).then(|| ActfParams {
        temporal,
        pair_fusion,
        reduction: ReductionNetwork::init(init, "actf.reduction", config.reduction_layout()),
    });
    let classifier = |fan_in| Linear::init(init, "classifier", fan_in, config.n_classes);
    let head = match config.variant {
        Variant::SingleActf => Head::ActfOnly(classifier(c_out)),
        Variant::SpatialOnly => Head::SpatialOnly(classifier(c_out)),
        Variant::NoAttn => Head::Fused {
            fusion: Fusion::Fixed([1.0, 1.0]),
            classifier: classifier(2 * c_out),
        },
        Variant::Full | Variant::IccfOnly => Head::Fused {
            fusion: attentive(FusionSite::FinalFusion),
            classifier: classifier(2 * c_out),
        },
    };
    Weights {
        backbone: Backbone::init(init, "backbone", config.hidden_channels, c_out),
        actf,
        head,
    }
}

impl<T: Scalar> ModelParams<T> {
    /// Fresh model; every parameter's initial value depends only on
    /// `init_seed` and its name.
    pub fn init(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let plan = Arc::new(SketchPlan::new(
            config.c_out,
            config.bilinear_dim,
            config.sketch_seed,
        )?);
        let weights = build_weights(&config);
        Ok(ModelParams {
            config,
            plan,
            weights,
        })
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    /// Parameter names in visiting order.
    pub fn names(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.weights.map(&mut |name, _, _| out.push(name.to_string()));
        out
    }

    pub fn num_params(&self) -> usize {
        let mut n = 0;
        self.weights.map(&mut |_, _, t| n += t.len());
        n
    }

    /// `(name, kind, tensor)` for every parameter in visiting order.
    pub fn tensors(&self) -> Vec<(String, ParamKind, Tensor<T>)> {
        let mut out = Vec::new();
        self.weights
            .map(&mut |name, kind, t| out.push((name.to_string(), kind, t.clone())));
        out
    }

    pub fn visit_mut(&mut self, f: &mut VisitMutFn<'_, Tensor<T>>) {
        self.weights.visit_mut(f);
    }

    /// Registers every parameter on `tape`.
    pub fn bind(&self, tape: &mut Tape<T>) -> Weights<Var> {
        self.weights.map(&mut |_, _, t| tape.param(t.clone()))
    }

    fn video_var(&self, tape: &mut Tape<T>, video: &Tensor<T>) -> Var {
        tape.constant(video.clone())
    }

    pub fn predict(&self, video: &Tensor<T>) -> Result<Prediction<T>> {
        let mut tape = Tape::new();
        let w = self.bind(&mut tape);
        let v = self.video_var(&mut tape, video);
        let out = forward(&mut tape, v, self, &w)?;
        let logits = tape.value(out.logits).data().to_vec();
        let class = argmax(&logits);
        let final_weights = out.final_weights.map(|fw| {
            let d = tape.value(fw).data();
            [d[0], d[1]]
        });
        Ok(Prediction {
            logits,
            class,
            final_weights,
        })
    }

    /// Cross-entropy loss of one labelled video and its parameter gradients.
    pub fn loss_and_grad(&self, video: &Tensor<T>, label: usize) -> Result<SampleGrad<T>> {
        let mut tape = Tape::new();
        let w = self.bind(&mut tape);
        let v = self.video_var(&mut tape, video);
        let out = forward(&mut tape, v, self, &w)?;
        let l = loss(&mut tape, out.logits, label)?;
        tape.backward(l)?;
        let mut grads = Vec::new();
        w.map(&mut |_, _, &var| {
            grads.push(tape.grad(var).map(<[T]>::to_vec).unwrap_or_default())
        });
        Ok(SampleGrad {
            loss: tape.value(l).data()[0],
            logits: tape.value(out.logits).data().to_vec(),
            grads,
        })
    }
}

pub(crate) fn argmax<T: Scalar>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Derives a model for `variant` from `params`: every tensor whose name and
/// shape survive is copied, the rest are freshly initialized.
pub fn make_ablation<T: Scalar>(variant: Variant, params: &ModelParams<T>) -> Result<ModelParams<T>> {
    let mut out = ModelParams::init(params.config.with_variant(variant))?;
    let source = params.tensors();
    out.visit_mut(&mut |name, _, t| {
        if let Some((_, _, src)) = source.iter().find(|(n, _, s)| n == name && s.dims() == t.dims()) {
            *t = src.clone();
        }
    });
    Ok(out)
}

/// Global mean over time and space: `[t, C, H, W] → [C]`.
pub fn stpool<T: Scalar>(tape: &mut Tape<T>, feature: &LowLevelFeature) -> Result<Var> {
    let p = tape.avg_pool(
        feature.f,
        [feature.frames, feature.height, feature.width],
        [1, 1, 1],
    )?;
    tape.reshape(p, &[feature.channels])
}

/// Cross-entropy `-log softmax(logits)[label]`.
pub fn loss<T: Scalar>(tape: &mut Tape<T>, logits: Var, label: usize) -> Result<Var> {
    tape.cross_entropy(logits, label)
}

/// Video `[t, 3, H, W]` → logits `[n_classes]`.
pub fn forward<T: Scalar>(
    tape: &mut Tape<T>,
    video: Var,
    model: &ModelParams<T>,
    w: &Weights<Var>,
) -> Result<ForwardOutput> {
    let d = tape.dims(video).to_vec();
    if d.len() != 4 || d[1] != VIDEO_CHANNELS {
        return Err(Error::Input(format!(
            "video must be [t, {VIDEO_CHANNELS}, H, W], got {d:?}"
        )));
    }
    if d[0] < 2 {
        return Err(Error::Input(format!("video needs at least 2 frames, got {}", d[0])));
    }
    let f = w.backbone.forward(tape, video, model.config.frame_norm)?;
    let feature = LowLevelFeature::new(tape, f)?;
    let v_st = stpool(tape, &feature)?;
    let actf = match &w.actf {
        Some(params) => Some(extract_actf(
            tape,
            &feature,
            &model.plan,
            model.config.sketch_mode,
            params,
        )?),
        None => None,
    };
    let v_actf = || {
        actf.map(|a| a.v_actf)
            .ok_or_else(|| Error::Internal("head needs the ACTF branch".into()))
    };
    let (logits, final_weights) = match &w.head {
        Head::Fused { fusion, classifier } => {
            let fused = fuse_pair(tape, v_actf()?, v_st, fusion)?;
            (classifier.forward(tape, fused.out)?, fused.weights)
        }
        Head::ActfOnly(classifier) => (classifier.forward(tape, v_actf()?)?, None),
        Head::SpatialOnly(classifier) => (classifier.forward(tape, v_st)?, None),
    };
    Ok(ForwardOutput {
        logits,
        feature,
        v_st,
        actf,
        final_weights,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny(variant: Variant) -> ModelConfig {
        ModelConfig {
            frames: 4,
            height: 8,
            width: 8,
            hidden_channels: 3,
            c_out: 4,
            bilinear_dim: 16,
            reduction_widths: None,
            n_classes: 3,
            variant,
            sketch_mode: SketchMode::Pair,
            sketch_seed: 5,
            init_seed: 6,
            frame_norm: true,
        }
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert!(matches!("bogus".parse::<Variant>(), Err(Error::Config(_))));
    }

    #[test]
    fn logits_shape_contract() {
        let cfg = ModelConfig {
            frames: 8,
            height: 32,
            width: 32,
            hidden_channels: 4,
            c_out: 64,
            bilinear_dim: 256,
            n_classes: 4,
            ..tiny(Variant::Full)
        };
        let model = ModelParams::<f64>::init(cfg).unwrap();
        let video = Tensor::from_fn(&[8, 3, 32, 32], |i| ((i * 31) % 17) as f64 / 17.0);
        let p = model.predict(&video).unwrap();
        assert_eq!(p.logits.len(), 4);
        let w = p.final_weights.unwrap();
        assert!((w[0] + w[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_video_gives_zero_logits() {
        for v in Variant::ALL {
            let model = ModelParams::<f64>::init(tiny(v)).unwrap();
            let p = model.predict(&Tensor::zeros(&[4, 3, 8, 8])).unwrap();
            assert!(p.logits.iter().all(|&l| l == 0.0), "{v}");
        }
    }

    #[test]
    fn too_few_frames_rejected() {
        let model = ModelParams::<f64>::init(tiny(Variant::Full)).unwrap();
        assert!(matches!(
            model.predict(&Tensor::zeros(&[1, 3, 8, 8])),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn classifier_input_lengths() {
        let expect = [
            (Variant::Full, 8),
            (Variant::SingleActf, 4),
            (Variant::IccfOnly, 8),
            (Variant::NoAttn, 8),
            (Variant::SpatialOnly, 4),
        ];
        for (v, n) in expect {
            let m = ModelParams::<f64>::init(tiny(v)).unwrap();
            assert_eq!(m.weights.head.classifier().in_dim(), n, "{v}");
        }
    }

    #[test]
    fn full_and_single_actf_differ_only_in_final_fusion() {
        let full = ModelParams::<f64>::init(tiny(Variant::Full)).unwrap();
        let single = make_ablation(Variant::SingleActf, &full).unwrap();
        let a = full.tensors();
        let b = single.tensors();
        let only_full: Vec<_> = a
            .iter()
            .filter(|(n, _, _)| !b.iter().any(|(m, _, _)| m == n))
            .map(|(n, _, _)| n.as_str())
            .collect();
        assert_eq!(only_full, ["final_fusion.raw_a", "final_fusion.raw_b"]);
        for (name, _, t) in &b {
            let (_, _, s) = a.iter().find(|(n, _, _)| n == name).unwrap();
            if name == "classifier.weight" {
                assert_ne!(s.dims(), t.dims(), "{name}");
            } else {
                assert_eq!(s, t, "{name}");
            }
        }
    }

    #[test]
    fn ablation_parameter_sets() {
        let full = ModelParams::<f64>::init(tiny(Variant::Full)).unwrap();
        let names = |v| make_ablation(v, &full).unwrap().names();
        assert!(!names(Variant::NoAttn).iter().any(|n| n.contains("raw_") || n.contains("proj")));
        assert!(!names(Variant::IccfOnly).iter().any(|n| n.contains("pair_fusion")));
        assert!(names(Variant::IccfOnly).iter().any(|n| n.contains("final_fusion")));
        assert!(!names(Variant::SpatialOnly).iter().any(|n| n.starts_with("actf")));
        for v in Variant::ALL {
            let list = names(v);
            let mut dedup = list.clone();
            dedup.sort();
            dedup.dedup();
            assert_eq!(dedup.len(), list.len(), "{v} registers a tensor twice");
        }
    }

    #[test]
    fn spatial_only_ignores_frame_order() {
        let model = ModelParams::<f64>::init(tiny(Variant::SpatialOnly)).unwrap();
        let video = Tensor::from_fn(&[4, 3, 8, 8], |i| ((i * 13) % 23) as f64 / 23.0);
        let frames: Vec<_> = (0..4).rev().map(|i| video.slice0(i).unwrap()).collect();
        let reversed = Tensor::stack(&frames).unwrap();
        let a = model.predict(&video).unwrap();
        let b = model.predict(&reversed).unwrap();
        for (x, y) in a.logits.iter().zip(&b.logits) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn no_attn_uses_unit_temporal_weights() {
        let model = ModelParams::<f64>::init(tiny(Variant::NoAttn)).unwrap();
        let mut tape = Tape::new();
        let w = model.bind(&mut tape);
        let v = tape.constant(Tensor::from_fn(&[4, 3, 8, 8], |i| (i as f64 * 0.01).sin().abs()));
        let out = forward(&mut tape, v, &model, &w).unwrap();
        let alpha = out.actf.unwrap().iccf.alpha;
        assert_eq!(tape.value(alpha).data(), &[1.0, 1.0, 1.0]);
        assert!(out.final_weights.is_none());
    }

    #[test]
    fn stpool_matches_naive_mean() {
        let f = Tensor::from_fn(&[3, 2, 4, 5], |i| ((i * 7919) % 101) as f64 / 10.0);
        let mut tape = Tape::new();
        let fv = tape.constant(f.clone());
        let feat = LowLevelFeature::new(&tape, fv).unwrap();
        let v = stpool(&mut tape, &feat).unwrap();
        for c in 0..2 {
            let mut s = 0.0;
            for t in 0..3 {
                for y in 0..4 {
                    for x in 0..5 {
                        s += f.at(&[t, c, y, x]);
                    }
                }
            }
            assert!((tape.value(v).data()[c] - s / 60.0).abs() < 1e-12);
        }
        let constant = tape.constant(Tensor::full(&[8, 3, 7, 7], 1.25));
        let feat = LowLevelFeature::new(&tape, constant).unwrap();
        let v = stpool(&mut tape, &feat).unwrap();
        assert!(tape.value(v).data().iter().all(|&x| (x - 1.25).abs() < 1e-15));
    }

    #[test]
    fn loss_and_grad_covers_every_parameter() {
        let model = ModelParams::<f64>::init(tiny(Variant::Full)).unwrap();
        let video = Tensor::from_fn(&[4, 3, 8, 8], |i| ((i * 13) % 23) as f64 / 23.0);
        let g = model.loss_and_grad(&video, 1).unwrap();
        let tensors = model.tensors();
        assert_eq!(g.grads.len(), tensors.len());
        for (gr, (_, _, t)) in g.grads.iter().zip(&tensors) {
            assert_eq!(gr.len(), t.len());
        }
        assert!(g.loss > 0.0);
        assert!(matches!(model.loss_and_grad(&video, 3), Err(Error::Input(_))));
    }
}
