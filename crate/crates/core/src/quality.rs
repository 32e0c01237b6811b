//! Precision and recall of pseudo-labels against full annotations.
//!
//! Matching is greedy over candidate pairs in descending IoU order, as in
//! standard detection evaluation. It is deliberately not the Hungarian
//! matcher used by the filters.

use serde::{Deserialize, Serialize};

use crate::annotation::ClassId;
use crate::error::{Error, Result};
use crate::filtering::PseudoLabelSet;
use crate::geometry::{iou, BoundingBox};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct QualityReport {
    pub precision: f64,
    pub recall: f64,
    /// Mean IoU over true positives, 0 when there are none.
    pub mean_iou_matched: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    #[serde(skip)]
    iou_sum: f64,
}

impl QualityReport {
    fn from_counts(tp: usize, fp: usize, fn_: usize, iou_sum: f64) -> Self {
        let ratio = |num: usize, den: usize| if den == 0 { 1.0 } else { num as f64 / den as f64 };
        Self {
            precision: ratio(tp, tp + fp),
            recall: ratio(tp, tp + fn_),
            mean_iou_matched: if tp == 0 { 0.0 } else { iou_sum / tp as f64 },
            tp,
            fp,
            fn_,
            iou_sum,
        }
    }

    /// Pools counts from several images (micro average).
    pub fn merge(reports: &[QualityReport]) -> QualityReport {
        let (tp, fp, fn_, s) = reports.iter().fold((0, 0, 0, 0.0), |acc, r| {
            (acc.0 + r.tp, acc.1 + r.fp, acc.2 + r.fn_, acc.3 + r.iou_sum)
        });
        Self::from_counts(tp, fp, fn_, s)
    }
}

pub fn score_pseudo(
    pseudo: &PseudoLabelSet,
    gt: &[(BoundingBox, ClassId)],
    iou_thresh: f64,
) -> Result<QualityReport> {
    if !(iou_thresh > 0.0 && iou_thresh < 1.0) {
        return Err(Error::InvalidInput(format!("IoU threshold {iou_thresh} must be in (0, 1)")));
    }
    let mut pairs = Vec::new();
    for (p, label) in pseudo.items.iter().enumerate() {
        for (g, (gbox, gclass)) in gt.iter().enumerate() {
            if label.class_id != *gclass {
                continue;
            }
            let v = iou(&label.bbox, gbox);
            if v >= iou_thresh {
                pairs.push((v, p, g));
            }
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut pseudo_used = vec![false; pseudo.len()];
    let mut gt_used = vec![false; gt.len()];
    let (mut tp, mut iou_sum) = (0, 0.0);
    for (v, p, g) in pairs {
        if !pseudo_used[p] && !gt_used[g] {
            pseudo_used[p] = true;
            gt_used[g] = true;
            tp += 1;
            iou_sum += v;
        }
    }
    Ok(QualityReport::from_counts(tp, pseudo.len() - tp, gt.len() - tp, iou_sum))
}
