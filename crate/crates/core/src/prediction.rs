//! Teacher outputs and the softmax scoring applied before filtering.

use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::matrix::Matrix;

/// Object query count used by the reference detector configuration.
pub const DEFAULT_NUM_QUERIES: usize = 300;

/// Raw teacher output for one image: `K` queries, each with `C` class logits
/// and a regressed box.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherPrediction {
    image_id: u64,
    logits: Matrix,
    boxes: Vec<BoundingBox>,
}

impl TeacherPrediction {
    pub fn new(image_id: u64, logits: Matrix, boxes: Vec<BoundingBox>) -> Result<Self> {
        if logits.rows() == 0 || logits.cols() == 0 {
            return Err(Error::Dimension(format!(
                "logits must be non-empty, got {}x{}",
                logits.rows(),
                logits.cols()
            )));
        }
        if logits.rows() != boxes.len() {
            return Err(Error::Dimension(format!(
                "{} logit rows but {} boxes",
                logits.rows(),
                boxes.len()
            )));
        }
        if let Some(pos) = logits.as_slice().iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite logit at query {}, class {} of image {image_id}",
                pos / logits.cols(),
                pos % logits.cols()
            )));
        }
        Ok(Self {
            image_id,
            logits,
            boxes,
        })
    }

    pub fn image_id(&self) -> u64 {
        self.image_id
    }

    pub fn logits(&self) -> &Matrix {
        &self.logits
    }

    pub fn boxes(&self) -> &[BoundingBox] {
        &self.boxes
    }

    pub fn num_queries(&self) -> usize {
        self.logits.rows()
    }

    pub fn num_classes(&self) -> usize {
        self.logits.cols()
    }
}

/// Per-query class probabilities with the argmax class and its probability.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPrediction {
    pub probs: Matrix,
    pub pred_class: Vec<usize>,
    pub score: Vec<f64>,
}

impl ScoredPrediction {
    pub fn num_queries(&self) -> usize {
        self.probs.rows()
    }

    pub fn num_classes(&self) -> usize {
        self.probs.cols()
    }

    /// `p_k^c`.
    pub fn prob(&self, query: usize, class: usize) -> f64 {
        self.probs[(query, class)]
    }
}

/// Row-wise softmax over the class logits. Ties in the argmax resolve to the
/// smallest class index.
pub fn score(pred: &TeacherPrediction) -> ScoredPrediction {
    let logits = pred.logits();
    let (k, c) = (logits.rows(), logits.cols());
    let mut probs = Matrix::zeros(k, c);
    let mut pred_class = Vec::with_capacity(k);
    let mut score = Vec::with_capacity(k);
    for q in 0..k {
        let z = logits.row(q);
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let row = probs.row_mut(q);
        let mut sum = 0.0;
        for (p, &v) in row.iter_mut().zip(z) {
            *p = (v - max).exp();
            sum += *p;
        }
        let mut best = 0;
        for j in 0..c {
            row[j] /= sum;
            if row[j] > row[best] {
                best = j;
            }
        }
        pred_class.push(best);
        score.push(row[best]);
    }
    ScoredPrediction {
        probs,
        pred_class,
        score,
    }
}
