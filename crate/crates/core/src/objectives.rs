//! Training objectives over one mention's proxy scores.
//!
//! Two losses are provided, each with a closed-form gradient in the scores:
//!
//! * cross-entropy over `{s⁺} ∪ {s⁻_i}`,
//! * the proxy-based loss
//!   `softplus(-α(s⁺ - δ)) + ln(1 + Σ_i exp(α(s⁻_i + δ)))`,
//!   whose negative-score gradients do not depend on `s⁺`.
//!
//! Adversarial proxies are built with a single signed-gradient step on the
//! entity input embeddings: negatives move along `+sign(∇_z s)`, the positive
//! along `-sign(∇_z s)`.

use serde::{Deserialize, Serialize};

use crate::encoder::{BiEncoder, InputEmbeddings, TowerForward};
use crate::error::{Error, Result};
use crate::numerics::{log1p_sum_exp, sigmoid, softplus, stable_softmax, DenseVector};

/// Scores of one mention against its positive and negative proxies.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredProxySet {
    positive: f64,
    negatives: Vec<f64>,
}

impl ScoredProxySet {
    pub fn new(positive: f64, negatives: Vec<f64>) -> Result<Self> {
        if negatives.is_empty() {
            return Err(Error::Empty("negative proxies"));
        }
        if !positive.is_finite() || negatives.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("proxy scores"));
        }
        Ok(Self { positive, negatives })
    }

    pub fn positive(&self) -> f64 {
        self.positive
    }

    pub fn negatives(&self) -> &[f64] {
        &self.negatives
    }

    /// Positive first, then negatives.
    fn all_scores(&self) -> Vec<f64> {
        let mut all = Vec::with_capacity(self.negatives.len() + 1);
        all.push(self.positive);
        all.extend_from_slice(&self.negatives);
        all
    }
}

/// `∂L/∂s⁺` and `∂L/∂s⁻_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProxyGrad {
    pub positive: f64,
    pub negatives: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PbHyper {
    pub alpha: f64,
    pub delta: f64,
}

impl Default for PbHyper {
    fn default() -> Self {
        Self { alpha: 32.0, delta: 0.0 }
    }
}

impl PbHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::Config(format!("alpha must be positive, got {}", self.alpha)));
        }
        if !(self.delta.is_finite() && self.delta >= 0.0) {
            return Err(Error::Config(format!("delta must be non-negative, got {}", self.delta)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FgsmHyper {
    pub epsilon: f64,
    pub lambda: f64,
}

impl Default for FgsmHyper {
    fn default() -> Self {
        Self { epsilon: 0.01, lambda: 1.0 }
    }
}

impl FgsmHyper {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("epsilon", self.epsilon), ("lambda", self.lambda)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("fgsm {name} must be non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LossKind {
    #[serde(rename = "ce")]
    CrossEntropy,
    #[serde(rename = "pb")]
    ProxyBased,
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossKind::CrossEntropy => "ce",
            LossKind::ProxyBased => "pb",
        })
    }
}

pub fn ce_loss(s: &ScoredProxySet) -> f64 {
    // Clamp guards the exact-zero case against a -0 or 1-ulp negative.
    let gaps: Vec<f64> = s.negatives.iter().map(|n| n - s.positive).collect();
    log1p_sum_exp(&gaps)
}

pub fn ce_grad(s: &ScoredProxySet) -> ProxyGrad {
    let p = stable_softmax(&s.all_scores()).expect("validated scores");
    ProxyGrad { positive: p[0] - 1.0, negatives: p[1..].to_vec() }
}

pub fn pb_loss(s: &ScoredProxySet, h: &PbHyper) -> f64 {
    let pos_term = softplus(-h.alpha * (s.positive - h.delta));
    let shifted: Vec<f64> = s.negatives.iter().map(|n| h.alpha * (n + h.delta)).collect();
    pos_term + log1p_sum_exp(&shifted)
}

pub fn pb_grad(s: &ScoredProxySet, h: &PbHyper) -> ProxyGrad {
    let positive = -h.alpha * sigmoid(-h.alpha * (s.positive - h.delta));
    // α e^{a_i} / (1 + Σ_j e^{a_j}) is α times a softmax over [0, a_1, ..., a_N].
    let mut shifted = Vec::with_capacity(s.negatives.len() + 1);
    shifted.push(0.0);
    shifted.extend(s.negatives.iter().map(|n| h.alpha * (n + h.delta)));
    let p = stable_softmax(&shifted).expect("validated scores");
    ProxyGrad { positive, negatives: p[1..].iter().map(|q| h.alpha * q).collect() }
}

pub fn loss(kind: LossKind, s: &ScoredProxySet, h: &PbHyper) -> f64 {
    match kind {
        LossKind::CrossEntropy => ce_loss(s),
        LossKind::ProxyBased => pb_loss(s, h),
    }
}

pub fn grad(kind: LossKind, s: &ScoredProxySet, h: &PbHyper) -> ProxyGrad {
    match kind {
        LossKind::CrossEntropy => ce_grad(s),
        LossKind::ProxyBased => pb_grad(s, h),
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn perturb(z: &InputEmbeddings, g: &InputEmbeddings, step: f64) -> Result<InputEmbeddings> {
    if z.len() != g.len() || z.dim() != g.dim() {
        return Err(Error::DimensionMismatch {
            expected: z.len() * z.dim(),
            actual: g.len() * g.dim(),
        });
    }
    let mut out = z.clone();
    let bound = step.abs();
    for ((v, &z0), gv) in out.as_mut_slice().iter_mut().zip(z.as_slice()).zip(g.as_slice()) {
        *v = z0 + step * sign(*gv);
        // Rounding can push the realised step one ulp past ε; pull it back.
        while (*v - z0).abs() > bound {
            *v = if *v > z0 { v.next_down() } else { v.next_up() };
        }
    }
    InputEmbeddings::new(out.matrix().clone())
}

fn check_epsilon(eps: f64) -> Result<()> {
    if !(eps.is_finite() && eps >= 0.0) {
        return Err(Error::InvalidArgument(format!("epsilon must be non-negative, got {eps}")));
    }
    Ok(())
}

/// `z + ε·sign(g)`: pushes a negative proxy towards the mention.
pub fn perturb_negative(z: &InputEmbeddings, g: &InputEmbeddings, eps: f64) -> Result<InputEmbeddings> {
    check_epsilon(eps)?;
    perturb(z, g, eps)
}

/// `z - ε·sign(g)`: pushes the positive proxy away from the mention.
pub fn perturb_positive(z: &InputEmbeddings, g: &InputEmbeddings, eps: f64) -> Result<InputEmbeddings> {
    check_epsilon(eps)?;
    perturb(z, g, -eps)
}

/// Perturbed entity input embeddings for one mention.
#[derive(Debug, Clone, PartialEq)]
pub struct AdversarialProxySet {
    pub negatives: Vec<InputEmbeddings>,
    pub positive: InputEmbeddings,
}

impl AdversarialProxySet {
    pub fn len(&self) -> usize {
        self.negatives.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Builds the adversarial proxies for `mention` from the cached entity
/// forward passes of its positive and negatives.
pub fn build_adversarial_set(
    model: &BiEncoder,
    mention: &DenseVector,
    positive: &TowerForward,
    negatives: &[TowerForward],
    eps: f64,
) -> Result<AdversarialProxySet> {
    let adversarial = |fwd: &TowerForward, is_positive: bool| -> Result<InputEmbeddings> {
        let z = model.entity_tower.compose_input_embeddings(&fwd.seq)?;
        let g = model.grad_input_embeddings(mention, fwd)?;
        if is_positive {
            perturb_positive(&z, &g, eps)
        } else {
            perturb_negative(&z, &g, eps)
        }
    };
    let negatives = negatives
        .iter()
        .map(|n| adversarial(n, false))
        .collect::<Result<Vec<_>>>()?;
    let positive = adversarial(positive, true)?;
    Ok(AdversarialProxySet { negatives, positive })
}

/// `L(m, P) + λ·L(m, P_adv)`.
pub fn combined_objective(
    base: &ScoredProxySet,
    adversarial: &ScoredProxySet,
    kind: LossKind,
    pb: &PbHyper,
    fgsm: &FgsmHyper,
) -> f64 {
    let base_loss = loss(kind, base, pb);
    if fgsm.lambda == 0.0 {
        return base_loss;
    }
    base_loss + fgsm.lambda * loss(kind, adversarial, pb)
}
