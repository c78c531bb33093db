//! Attentive concatenation weights.
//!
//! All three fusion sites share one normalization chain: raw scores pass
//! through a sigmoid, then a softmax across the items being combined. The
//! temporal site derives its scores from spatially pooled pair features and a
//! shared projection; the two-way sites use one trainable scalar per input.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{join, Init, MapFn, ParamKind, VisitMutFn};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};

/// Projection `W ∈ R^{C_feat × 1}` shared by every frame pair.
#[derive(Clone, Debug, PartialEq)]
pub struct TemporalAttention<P> {
    pub proj: P,
    pub feat_dim: usize,
}

impl<T: Scalar> TemporalAttention<Tensor<T>> {
    /// Entries drawn from `uniform(-1/sqrt(C_feat), 1/sqrt(C_feat))`.
    pub fn init(init: Init, name: &str, feat_dim: usize) -> Self {
        let bound = 1.0 / (feat_dim.max(1) as f64).sqrt();
        TemporalAttention {
            proj: init.uniform(&join(name, "proj"), &[feat_dim, 1], bound),
            feat_dim,
        }
    }
}

impl<P> TemporalAttention<P> {
    pub fn map<Q>(&self, prefix: &str, f: &mut MapFn<'_, P, Q>) -> TemporalAttention<Q> {
        TemporalAttention {
            proj: f(&join(prefix, "proj"), ParamKind::Weight, &self.proj),
            feat_dim: self.feat_dim,
        }
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut VisitMutFn<'_, P>) {
        f(&join(prefix, "proj"), ParamKind::Weight, &mut self.proj);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FusionSite {
    /// ICCF / IMF combination inside the ACTF branch.
    PairFusion,
    /// ACTF / spatial-temporal pooled combination before the classifier.
    FinalFusion,
}

/// Two trainable scalars whose effective weights are
/// `softmax(sigmoid(raw_a), sigmoid(raw_b))`.
#[derive(Clone, Debug, PartialEq)]
pub struct PairFusionWeights<P> {
    pub raw_a: P,
    pub raw_b: P,
    pub site: FusionSite,
}

impl<T: Scalar> PairFusionWeights<Tensor<T>> {
    /// Both raw scalars start at zero, i.e. an even split.
    pub fn init(site: FusionSite) -> Self {
        PairFusionWeights {
            raw_a: Tensor::zeros(&[1]),
            raw_b: Tensor::zeros(&[1]),
            site,
        }
    }

    /// Post-softmax weights evaluated without a tape.
    pub fn effective(&self) -> [T; 2] {
        let s = |x: T| T::one() / (T::one() + (-x).exp());
        let (a, b) = (s(self.raw_a.data()[0]), s(self.raw_b.data()[0]));
        let m = a.max(b);
        let (ea, eb) = ((a - m).exp(), (b - m).exp());
        [ea / (ea + eb), eb / (ea + eb)]
    }
}

impl<P> PairFusionWeights<P> {
    pub fn map<Q>(&self, prefix: &str, f: &mut MapFn<'_, P, Q>) -> PairFusionWeights<Q> {
        PairFusionWeights {
            raw_a: f(&join(prefix, "raw_a"), ParamKind::FusionLogit, &self.raw_a),
            raw_b: f(&join(prefix, "raw_b"), ParamKind::FusionLogit, &self.raw_b),
            site: self.site,
        }
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut VisitMutFn<'_, P>) {
        f(&join(prefix, "raw_a"), ParamKind::FusionLogit, &mut self.raw_a);
        f(&join(prefix, "raw_b"), ParamKind::FusionLogit, &mut self.raw_b);
    }
}

/// How a two-way combination is weighted.
#[derive(Clone, Debug, PartialEq)]
pub enum Fusion<P> {
    Attentive(PairFusionWeights<P>),
    /// Constant weights, used by the ablation variants.
    Fixed([f64; 2]),
}

impl<P> Fusion<P> {
    pub fn map<Q>(&self, prefix: &str, f: &mut MapFn<'_, P, Q>) -> Fusion<Q> {
        match self {
            Fusion::Attentive(w) => Fusion::Attentive(w.map(prefix, f)),
            Fusion::Fixed(k) => Fusion::Fixed(*k),
        }
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut VisitMutFn<'_, P>) {
        if let Fusion::Attentive(w) = self {
            w.visit_mut(prefix, f);
        }
    }
}

/// How the frame-pair features are combined over time.
#[derive(Clone, Debug, PartialEq)]
pub enum Temporal<P> {
    Attentive(TemporalAttention<P>),
    /// Every pair keeps weight 1 (plain concatenation).
    Unweighted,
}

impl<P> Temporal<P> {
    pub fn map<Q>(&self, prefix: &str, f: &mut MapFn<'_, P, Q>) -> Temporal<Q> {
        match self {
            Temporal::Attentive(a) => Temporal::Attentive(a.map(prefix, f)),
            Temporal::Unweighted => Temporal::Unweighted,
        }
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut VisitMutFn<'_, P>) {
        if let Temporal::Attentive(a) = self {
            a.visit_mut(prefix, f);
        }
    }
}

/// Temporal weights `α ∈ R^{t-1}` for stacked pair features `[t-1, C_feat, H, W]`:
/// spatial mean pool, projection by `W`, sigmoid, then softmax across pairs.
pub fn temporal_weights<T: Scalar>(
    tape: &mut Tape<T>,
    pairs: Var,
    attn: &TemporalAttention<Var>,
) -> Result<Var> {
    let d = tape.dims(pairs).to_vec();
    if d.len() != 4 {
        return Err(Error::shape("temporal_weights", &d, &[0, attn.feat_dim, 0, 0]));
    }
    if d[0] == 0 {
        return Err(Error::Config("temporal attention needs at least one pair".into()));
    }
    if d[1] != attn.feat_dim || tape.dims(attn.proj) != [attn.feat_dim, 1] {
        return Err(Error::Config(format!(
            "attention feature dim {} does not match pair features {:?}",
            attn.feat_dim, d
        )));
    }
    let pooled = tape.avg_pool(pairs, [1, d[2], d[3]], [1, 1, 1])?;
    let pooled = tape.reshape(pooled, &[d[0], d[1]])?;
    let scores = tape.matmul(pooled, attn.proj)?;
    let scores = tape.reshape(scores, &[d[0]])?;
    let squashed = tape.sigmoid(scores);
    tape.softmax(squashed)
}

/// Effective `[w_a, w_b]` for a two-way attentive fusion, as a `[2]` tensor.
pub fn fusion_weights<T: Scalar>(tape: &mut Tape<T>, w: &PairFusionWeights<Var>) -> Result<Var> {
    let raw = tape.concat(w.raw_a, w.raw_b, 0)?;
    if tape.dims(raw) != [2] {
        return Err(Error::shape("fusion_weights", tape.dims(w.raw_a), tape.dims(w.raw_b)));
    }
    let squashed = tape.sigmoid(raw);
    tape.softmax(squashed)
}

/// Output of [`fuse_pair`].
#[derive(Clone, Copy, Debug)]
pub struct Fused {
    pub out: Var,
    /// `[2]` post-softmax weights when the fusion is attentive.
    pub weights: Option<Var>,
}

/// `concat(w_a · a, w_b · b)` along the channel axis (axis 1 for feature maps,
/// axis 0 for vectors).
pub fn fuse_pair<T: Scalar>(tape: &mut Tape<T>, a: Var, b: Var, fusion: &Fusion<Var>) -> Result<Fused> {
    match fusion {
        Fusion::Attentive(w) => {
            let weights = fusion_weights(tape, w)?;
            let wa = tape.select(weights, 0)?;
            let wb = tape.select(weights, 1)?;
            let a = tape.scale_by(a, wa)?;
            let b = tape.scale_by(b, wb)?;
            let out = tape.concat_channels(a, b)?;
            Ok(Fused {
                out,
                weights: Some(weights),
            })
        }
        Fusion::Fixed([ka, kb]) => {
            let a = if *ka == 1.0 { a } else { tape.scale(a, T::lit(*ka)) };
            let b = if *kb == 1.0 { b } else { tape.scale(b, T::lit(*kb)) };
            let out = tape.concat_channels(a, b)?;
            Ok(Fused { out, weights: None })
        }
    }
}
