//! Match-then-score evaluation of the detection training loss for a single
//! image. No gradients; meant as a deterministic reference for trainers.

use serde::{Deserialize, Serialize};

use crate::annotation::ClassId;
use crate::error::{Error, Result};
use crate::geometry::{giou, l1_box, BoundingBox};
use crate::matching::{hungarian, CostMatrix};
use crate::matrix::Matrix;
use crate::prediction::TeacherPrediction;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Weight of the classification term in the total.
    pub alpha: f64,
    /// Weight of the box term in the total.
    pub beta: f64,
    pub focal_gamma: f64,
    pub focal_alpha: f64,
    /// GIoU and L1 weights inside the box term.
    pub box_giou_weight: f64,
    pub box_l1_weight: f64,
    /// Matching cost weights.
    pub match_class: f64,
    pub match_giou: f64,
    pub match_l1: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 2.0,
            beta: 5.0,
            focal_gamma: 2.0,
            focal_alpha: 0.25,
            box_giou_weight: 2.0,
            box_l1_weight: 5.0,
            match_class: 2.0,
            match_giou: 2.0,
            match_l1: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub cls: f64,
    #[serde(rename = "box")]
    pub bbox: f64,
    pub total: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Query matched to each label, in label order.
    pub matches: Vec<usize>,
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Sigmoid focal loss of one logit against a binary target.
pub fn sigmoid_focal(logit: f64, target: bool, gamma: f64, alpha: f64) -> f64 {
    let p = sigmoid(logit);
    let t = if target { 1.0 } else { 0.0 };
    let ce = softplus(logit) - t * logit;
    let p_t = p * t + (1.0 - p) * (1.0 - t);
    let alpha_t = alpha * t + (1.0 - alpha) * (1.0 - t);
    alpha_t * (1.0 - p_t).powf(gamma) * ce
}

/// Focal-style classification matching cost (positive minus negative term).
fn focal_match_cost(logit: f64, gamma: f64, alpha: f64) -> f64 {
    let p = sigmoid(logit);
    let neg_log_p = softplus(-logit);
    let neg_log_not_p = softplus(logit);
    alpha * (1.0 - p).powf(gamma) * neg_log_p - (1.0 - alpha) * p.powf(gamma) * neg_log_not_p
}

pub fn eval_loss(
    pred: &TeacherPrediction,
    labels: &[(BoundingBox, ClassId)],
    cfg: &LossConfig,
) -> Result<LossBreakdown> {
    let (k, c) = (pred.num_queries(), pred.num_classes());
    if labels.len() > k {
        return Err(Error::TooManyLabels {
            labels: labels.len(),
            queries: k,
        });
    }
    if let Some(&(_, class)) = labels.iter().find(|(_, cl)| *cl >= c) {
        return Err(Error::ClassOutOfRange { class, num_classes: c });
    }
    let logits = pred.logits();
    let boxes = pred.boxes();

    let matches = if labels.is_empty() {
        Vec::new()
    } else {
        let cost = Matrix::from_fn(labels.len(), k, |i, q| {
            let (g, class) = &labels[i];
            cfg.match_class * focal_match_cost(logits[(q, *class)], cfg.focal_gamma, cfg.focal_alpha)
                + cfg.match_giou * (1.0 - giou(g, &boxes[q]))
                + cfg.match_l1 * l1_box(g, &boxes[q])
        });
        hungarian(&CostMatrix::new(cost)?).matches
    };

    let mut target = vec![None; k];
    for (i, &q) in matches.iter().enumerate() {
        target[q] = Some(labels[i].1);
    }
    let norm = labels.len().max(1) as f64;
    let mut cls = 0.0;
    for (q, t) in target.iter().enumerate() {
        for class in 0..c {
            cls += sigmoid_focal(logits[(q, class)], *t == Some(class), cfg.focal_gamma, cfg.focal_alpha);
        }
    }
    cls /= norm;
    let bbox = matches
        .iter()
        .enumerate()
        .map(|(i, &q)| {
            let g = &labels[i].0;
            cfg.box_giou_weight * (1.0 - giou(g, &boxes[q])) + cfg.box_l1_weight * l1_box(g, &boxes[q])
        })
        .sum::<f64>()
        / norm;
    Ok(LossBreakdown {
        cls,
        bbox,
        total: cfg.alpha * cls + cfg.beta * bbox,
        alpha: cfg.alpha,
        beta: cfg.beta,
        matches,
    })
}
