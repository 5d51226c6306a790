//! Classification and alignment objectives.
//!
//! The alignment term compares two feature vectors after a row-wise softmax:
//!
//! ```text
//! L_rd = 1/(β-1) · ln Σ_j (z_x,j + δ)^β (z_y,j + δ)^(1-β)
//! ```
//!
//! The additive δ is applied as written, without renormalising. For
//! identical inputs the sum is `1 + Mδ`, so the loss bottoms out at
//! `ln(1 + Mδ)/(β-1)` rather than zero; the offset carries no gradient.
//! The batch loss is the mean over rows.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Graph, Scalar, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Divergence order β, > 1.
    pub beta: f64,
    /// Smoothing offset δ, > 0.
    pub delta: f64,
    /// Weight λ of the cross-entropy term; the alignment term gets 1 - λ.
    pub lambda: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            beta: 2.0,
            delta: 0.2,
            lambda: 0.4,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.beta.is_finite() || self.beta <= 1.0 {
            return Err(Error::config(format!("beta must be > 1, got {}", self.beta)));
        }
        if !self.delta.is_finite() || self.delta <= 0.0 {
            return Err(Error::config(format!("delta must be > 0, got {}", self.delta)));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::config(format!(
                "lambda must lie in [0, 1], got {}",
                self.lambda
            )));
        }
        Ok(())
    }

    /// Value of the alignment loss for two identical inputs of width `m`.
    pub fn self_divergence(&self, m: usize) -> f64 {
        (1.0 + m as f64 * self.delta).ln() / (self.beta - 1.0)
    }
}

/// Mean negative log-likelihood of the labelled class; `predictions` rows
/// must already lie on the simplex.
pub fn cross_entropy<T: Scalar>(
    g: &mut Graph<'_, T>,
    predictions: Var,
    labels: &[usize],
) -> Result<Var> {
    let shape = g.shape(predictions);
    if shape.len() == 2 {
        let tol = if std::mem::size_of::<T>() == 4 { 1e-4 } else { 1e-5 };
        for (row, p) in g.value(predictions).rows().enumerate() {
            let s: f64 = p.iter().map(|v| v.as_f64()).sum();
            if (s - 1.0).abs() > tol {
                return Err(Error::config(format!(
                    "prediction row {row} sums to {s}, not 1"
                )));
            }
        }
    }
    g.cross_entropy(predictions, labels)
}

/// Alignment loss on raw features: softmax each row, then the smoothed
/// Rényi sum.
pub fn renyi_divergence_loss<T: Scalar>(
    g: &mut Graph<'_, T>,
    feat_x: Var,
    feat_y: Var,
    config: &LossConfig,
) -> Result<Var> {
    if g.shape(feat_x) != g.shape(feat_y) {
        return Err(Error::Dimension {
            op: "renyi_divergence_loss",
            lhs: g.shape(feat_x).to_vec(),
            rhs: g.shape(feat_y).to_vec(),
        });
    }
    let zx = g.softmax(feat_x);
    let zy = g.softmax(feat_y);
    renyi_on_distributions(g, zx, zy, config)
}

/// Alignment loss on rows that are already distributions.
pub fn renyi_on_distributions<T: Scalar>(
    g: &mut Graph<'_, T>,
    z_x: Var,
    z_y: Var,
    config: &LossConfig,
) -> Result<Var> {
    g.renyi(z_x, z_y, config.beta, config.delta)
}

/// `λ·ce + (1-λ)·rd`
pub fn joint_loss<T: Scalar>(g: &mut Graph<'_, T>, ce: Var, rd: Var, lambda: f64) -> Result<Var> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::config(format!(
            "lambda must lie in [0, 1], got {lambda}"
        )));
    }
    g.weighted_sum(ce, lambda, rd, 1.0 - lambda)
}

/// Training objective applied to a network's outputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Objective {
    /// Cross-entropy only; alignment taps, if any, are ignored.
    CrossEntropy,
    /// Cross-entropy blended with the alignment loss between two taps.
    Joint(LossConfig),
}

/// Loss nodes produced by [`Objective::apply`].
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub total: Var,
    pub cross_entropy: Var,
    pub alignment: Option<Var>,
}

impl Objective {
    pub fn apply<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        probs: Var,
        taps: Option<(Var, Var)>,
        labels: &[usize],
    ) -> Result<LossTerms> {
        let ce = cross_entropy(g, probs, labels)?;
        match (self, taps) {
            (Objective::CrossEntropy, _) => Ok(LossTerms {
                total: ce,
                cross_entropy: ce,
                alignment: None,
            }),
            (Objective::Joint(cfg), Some((a, b))) => {
                cfg.validate()?;
                let rd = renyi_divergence_loss(g, a, b, cfg)?;
                let total = joint_loss(g, ce, rd, cfg.lambda)?;
                Ok(LossTerms {
                    total,
                    cross_entropy: ce,
                    alignment: Some(rd),
                })
            }
            (Objective::Joint(_), None) => Err(Error::config(
                "joint objective needs a model with alignment taps",
            )),
        }
    }
}
