//! Training objectives: the angle penalty, the combined L2+L1 reconstruction
//! distance, and the Wasserstein-style adversarial pair.
//!
//! Each loss exists twice: as a plain evaluator over values (reporting,
//! tests) and as a tape builder (training). The two agree; unit tests pin
//! that down.
//!
//! Sign conventions: everything here is a minimization objective. The critic
//! minimizes `mean(fake) - mean(real)` and the decoder minimizes
//! `-mean(fake)`; [`AdvMode::PaperLiteral`] flips both signs for comparison
//! runs.

use ndarray::ArrayViewD;

use crate::autodiff::{Element, Graph, NodeId};
use crate::error::{Error, Result};
use crate::imaging::{wrap_to_pi, Angle};

/// Weights of the combined objective; the default is the plain unweighted sum.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub w_angle: f64,
    pub w_rec: f64,
    pub w_adv: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            w_angle: 1.0,
            w_rec: 1.0,
            w_adv: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.w_angle < 0.0 || self.w_rec < 0.0 || self.w_adv < 0.0 {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        Ok(())
    }
}

/// Per-step loss components. `adv_critic` is present only on steps where the
/// critic was updated; the critic optimizes its own objective and never
/// enters `total`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossBreakdown {
    pub angle: f64,
    pub rec: f64,
    pub adv_decoder: f64,
    pub adv_critic: Option<f64>,
    pub total: f64,
}

/// Which sign convention the adversarial pair uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum AdvMode {
    /// Critic separates real from fake; decoder chases higher critic scores.
    Standard,
    /// The printed form of the objectives, for auditing runs against it.
    PaperLiteral,
}

/// Angle penalty `exp(|theta - theta_hat|) - 1`. With `wrap` on, the
/// difference is first mapped onto `[-pi, pi)`, which is the right notion of
/// error for full-circle rotations.
pub fn angle_loss(theta: Angle, theta_hat: Angle, wrap: bool) -> f64 {
    let d = theta.radians() - theta_hat.radians();
    let d = if wrap { wrap_to_pi(d) } else { d };
    d.abs().exp() - 1.0
}

/// Per-image `||x - x_hat||_2 + ||x - x_hat||_1` over the trailing axes,
/// averaged over the leading (batch) axis. `squared_l2` swaps the Euclidean
/// norm for its square.
pub fn recon_loss<T: Element>(
    x: ArrayViewD<'_, T>,
    x_hat: ArrayViewD<'_, T>,
    squared_l2: bool,
) -> Result<f64> {
    if x.shape() != x_hat.shape() {
        return Err(Error::Dimension(format!(
            "reconstruction loss shapes: {:?} vs {:?}",
            x.shape(),
            x_hat.shape()
        )));
    }
    let batch = x.shape().first().copied().unwrap_or(0);
    if batch == 0 {
        return Err(Error::Argument("empty batch".into()));
    }
    let mut acc = 0.0f64;
    for b in 0..batch {
        let xi = x.index_axis(ndarray::Axis(0), b);
        let yi = x_hat.index_axis(ndarray::Axis(0), b);
        let mut sq = 0.0f64;
        let mut l1 = 0.0f64;
        for (&xv, &yv) in xi.iter().zip(yi.iter()) {
            let d = (xv - yv).as_f64();
            sq += d * d;
            l1 += d.abs();
        }
        let l2 = if squared_l2 { sq } else { sq.sqrt() };
        acc += l2 + l1;
    }
    Ok(acc / batch as f64)
}

fn mean_of<T: Element>(scores: &[T]) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::Argument("empty score batch".into()));
    }
    Ok(scores.iter().map(|v| v.as_f64()).sum::<f64>() / scores.len() as f64)
}

/// The quantity the critic minimizes: `mean(fake) - mean(real)`.
pub fn critic_loss<T: Element>(scores_real: &[T], scores_fake: &[T]) -> Result<f64> {
    if scores_real.len() != scores_fake.len() {
        return Err(Error::Dimension(format!(
            "score batches differ: {} vs {}",
            scores_real.len(),
            scores_fake.len()
        )));
    }
    Ok(mean_of(scores_fake)? - mean_of(scores_real)?)
}

/// The quantity the decoder minimizes: `-mean(fake)`.
pub fn decoder_adv_loss<T: Element>(scores_fake: &[T]) -> Result<f64> {
    Ok(-mean_of(scores_fake)?)
}

/// Mode-aware critic objective; `Standard` delegates to [`critic_loss`].
pub fn critic_objective<T: Element>(
    scores_real: &[T],
    scores_fake: &[T],
    mode: AdvMode,
) -> Result<f64> {
    let std = critic_loss(scores_real, scores_fake)?;
    Ok(match mode {
        AdvMode::Standard => std,
        AdvMode::PaperLiteral => -std,
    })
}

pub fn decoder_adv_objective<T: Element>(scores_fake: &[T], mode: AdvMode) -> Result<f64> {
    let std = decoder_adv_loss(scores_fake)?;
    Ok(match mode {
        AdvMode::Standard => std,
        AdvMode::PaperLiteral => -std,
    })
}

/// Combines the decoder-side components into the training total. The critic
/// loss is reported separately.
pub fn total_loss(angle: f64, rec: f64, adv_decoder: f64, w: &LossWeights) -> LossBreakdown {
    LossBreakdown {
        angle,
        rec,
        adv_decoder,
        adv_critic: None,
        total: w.w_angle * angle + w.w_rec * rec + w.w_adv * adv_decoder,
    }
}

// --- tape builders ---

/// Angle penalty over a batch: `mean(exp(|theta - theta_hat|) - 1)`.
pub fn angle_loss_node<T: Element>(
    g: &mut Graph<T>,
    theta: NodeId,
    theta_hat: NodeId,
    wrap: bool,
) -> Result<NodeId> {
    let diff = g.sub(theta, theta_hat)?;
    let diff = if wrap { g.wrap_angle(diff) } else { diff };
    let a = g.abs(diff);
    let e = g.exp(a);
    let shifted = g.offset(e, -T::one());
    g.mean_all(shifted)
}

/// Reconstruction distance over a batch, on the tape.
pub fn recon_loss_node<T: Element>(
    g: &mut Graph<T>,
    x: NodeId,
    x_hat: NodeId,
    squared_l2: bool,
) -> Result<NodeId> {
    let d = g.sub(x, x_hat)?;
    let sq = g.mul(d, d)?;
    let sumsq = g.sum_per_sample(sq)?;
    let l2 = if squared_l2 {
        sumsq
    } else {
        g.sqrt_guarded(sumsq)
    };
    let ad = g.abs(d);
    let l1 = g.sum_per_sample(ad)?;
    let per = g.add(l2, l1)?;
    g.mean_all(per)
}

/// Critic objective on the tape.
pub fn critic_loss_node<T: Element>(
    g: &mut Graph<T>,
    scores_real: NodeId,
    scores_fake: NodeId,
    mode: AdvMode,
) -> Result<NodeId> {
    let mean_real = g.mean_all(scores_real)?;
    let mean_fake = g.mean_all(scores_fake)?;
    match mode {
        AdvMode::Standard => g.sub(mean_fake, mean_real),
        AdvMode::PaperLiteral => g.sub(mean_real, mean_fake),
    }
}

/// Decoder adversarial objective on the tape.
pub fn decoder_adv_node<T: Element>(
    g: &mut Graph<T>,
    scores_fake: NodeId,
    mode: AdvMode,
) -> Result<NodeId> {
    let mean_fake = g.mean_all(scores_fake)?;
    Ok(match mode {
        AdvMode::Standard => g.scale(mean_fake, -T::one()),
        AdvMode::PaperLiteral => mean_fake,
    })
}

/// Weighted sum of the decoder-side loss nodes.
pub fn total_loss_node<T: Element>(
    g: &mut Graph<T>,
    angle: NodeId,
    rec: NodeId,
    adv_decoder: Option<NodeId>,
    w: &LossWeights,
) -> Result<NodeId> {
    let a = g.scale(angle, T::from_f64(w.w_angle));
    let r = g.scale(rec, T::from_f64(w.w_rec));
    let mut total = g.add(a, r)?;
    if let Some(adv) = adv_decoder {
        let s = g.scale(adv, T::from_f64(w.w_adv));
        total = g.add(total, s)?;
    }
    Ok(total)
}
