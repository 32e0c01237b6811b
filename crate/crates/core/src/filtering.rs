//! Pseudo-label selection from teacher predictions given a weak annotation.
//!
//! The unified filter turns every weak format into a `G x K` cost matrix
//! between the annotated entities and the teacher's queries and solves a
//! minimum-cost assignment:
//!
//! | format   | rows                         | cost                                  | emitted             |
//! |----------|------------------------------|---------------------------------------|---------------------|
//! | TagsU    | tags repeated by predicted n | `1 - p_k^c`                           | (pred box, tag)     |
//! | TagsK    | tags repeated by given n     | `1 - p_k^c`                           | (pred box, tag)     |
//! | PointsU  | points                       | `d_norm + 1 - s_k`, BIG if outside    | (pred box, argmax)  |
//! | PointsK  | (point, tag)                 | `g * tag + (1 - g) * point`           | (pred box, tag)     |
//! | BoxesU/EC| boxes                        | `l_iou (1 - giou) + l_l1 * L1`        | (gt box, argmax)    |
//!
//! Images without annotation fall back to a plain score threshold.

use serde::{Deserialize, Serialize};

use crate::annotation::{ClassId, LabelFormat, OmniLabel};
use crate::error::{Error, Result};
use crate::geometry::{center_distance, contains, giou, l1_box, BoundingBox, Point2D};
use crate::matching::{Assignment, CostMatrix, Matcher, BIG};
use crate::matrix::Matrix;
use crate::prediction::{score, ScoredPrediction, TeacherPrediction};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    #[default]
    Unified,
    Simple,
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unified" => Ok(Strategy::Unified),
            "simple" => Ok(Strategy::Simple),
            other => Err(Error::InvalidInput(format!("unknown strategy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    /// Confidence threshold.
    pub tau: f64,
    /// Tag/point trade-off for keyed points.
    pub gamma: f64,
    pub lambda_iou: f64,
    pub lambda_l1: f64,
    pub strategy: Strategy,
    /// Drop matches that landed on an infeasible (BIG) entry instead of
    /// emitting them with the infeasible flag set.
    pub drop_infeasible: bool,
    pub matcher: Matcher,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            tau: 0.7,
            gamma: 0.5,
            lambda_iou: 2.0,
            lambda_l1: 5.0,
            strategy: Strategy::Unified,
            drop_infeasible: false,
            matcher: Matcher::Hungarian,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::InvalidInput(format!("tau must be in (0, 1), got {}", self.tau)));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::InvalidInput(format!("gamma must be in [0, 1], got {}", self.gamma)));
        }
        for (name, v) in [("lambda_iou", self.lambda_iou), ("lambda_l1", self.lambda_l1)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidInput(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabel {
    pub bbox: BoundingBox,
    pub class_id: ClassId,
    pub score: f64,
    pub source_query: usize,
    /// Ground-truth row this label answers, if it came from a matching.
    pub gt_index: Option<usize>,
    pub matched_cost: Option<f64>,
    pub infeasible: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PseudoLabelSet {
    pub items: Vec<PseudoLabel>,
}

impl PseudoLabelSet {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn matched_cost_sum(&self) -> f64 {
        self.items.iter().filter_map(|p| p.matched_cost).sum()
    }
}

/// What a cost-matrix row stands for.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RowTarget {
    Tag(ClassId),
    Point(Point2D),
    PointTag(Point2D, ClassId),
    Box(BoundingBox),
}

/// A built cost matrix together with the meaning of each row.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchingProblem {
    pub format: LabelFormat,
    pub cost: CostMatrix,
    pub rows: Vec<RowTarget>,
}

/// Keeps every query whose confidence strictly exceeds `tau`.
pub fn filter_none(sp: &ScoredPrediction, boxes: &[BoundingBox], cfg: &FilterConfig) -> PseudoLabelSet {
    let items = (0..sp.num_queries())
        .filter(|&k| sp.score[k] > cfg.tau)
        .map(|k| PseudoLabel {
            bbox: boxes[k],
            class_id: sp.pred_class[k],
            score: sp.score[k],
            source_query: k,
            gt_index: None,
            matched_cost: None,
            infeasible: false,
        })
        .collect();
    PseudoLabelSet { items }
}

fn check_class(sp: &ScoredPrediction, class: ClassId) -> Result<()> {
    if class < sp.num_classes() {
        Ok(())
    } else {
        Err(Error::ClassOutOfRange {
            class,
            num_classes: sp.num_classes(),
        })
    }
}

/// Object count per tag: the number of queries whose probability for the
/// tag exceeds `tau`, but at least one.
pub fn predict_counts(sp: &ScoredPrediction, tags: &[ClassId], tau: f64) -> Result<Vec<usize>> {
    if tags.is_empty() {
        return Err(Error::InvalidInput("no tags to count".into()));
    }
    tags.iter()
        .map(|&c| {
            check_class(sp, c)?;
            let above = (0..sp.num_queries()).filter(|&k| sp.prob(k, c) > tau).count();
            Ok(above.max(1))
        })
        .collect()
}

/// Repeats each tag by its count, in tag order.
pub fn expand_tags(pairs: &[(ClassId, usize)]) -> Vec<ClassId> {
    pairs
        .iter()
        .flat_map(|&(c, n)| std::iter::repeat_n(c, n))
        .collect()
}

/// Reduces counts (largest first, never below one) until they sum to at
/// most `limit`.
fn cap_counts(counts: &mut [usize], limit: usize) {
    let mut total: usize = counts.iter().sum();
    if total <= limit {
        return;
    }
    log::warn!("predicted tag counts sum to {total}, truncating to {limit} queries");
    while total > limit {
        let (idx, &max) = counts
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
            .expect("non-empty counts");
        if max <= 1 {
            break;
        }
        counts[idx] -= 1;
        total -= 1;
    }
}

fn ensure_fits(g: usize, k: usize) -> Result<()> {
    if g > k {
        Err(Error::TooManyLabels { labels: g, queries: k })
    } else {
        Ok(())
    }
}

/// `values[i][k] = 1 - p_k^{c_i}`.
pub fn tag_cost(sp: &ScoredPrediction, expanded_tags: &[ClassId]) -> Result<CostMatrix> {
    ensure_fits(expanded_tags.len(), sp.num_queries())?;
    for &c in expanded_tags {
        check_class(sp, c)?;
    }
    CostMatrix::new(Matrix::from_fn(expanded_tags.len(), sp.num_queries(), |i, k| {
        1.0 - sp.prob(k, expanded_tags[i])
    }))
}

/// Center distance min-max normalized over the whole matrix plus `1 - s_k`,
/// or BIG where the query's box does not contain the point.
pub fn point_cost(sp: &ScoredPrediction, boxes: &[BoundingBox], points: &[Point2D]) -> Result<CostMatrix> {
    let k = sp.num_queries();
    ensure_fits(points.len(), k)?;
    if boxes.len() != k {
        return Err(Error::Dimension(format!("{} boxes for {k} queries", boxes.len())));
    }
    let raw = Matrix::from_fn(points.len(), k, |i, q| center_distance(&points[i], &boxes[q]));
    let (lo, hi) = raw
        .as_slice()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &d| (lo.min(d), hi.max(d)));
    let range = hi - lo;
    CostMatrix::new(Matrix::from_fn(points.len(), k, |i, q| {
        if !contains(&boxes[q], &points[i]) {
            return BIG;
        }
        let d = if range > 0.0 { (raw[(i, q)] - lo) / range } else { 0.0 };
        d + (1.0 - sp.score[q])
    }))
}

/// `gamma * tag_cost + (1 - gamma) * point_cost`, with infeasible entries
/// left at BIG.
pub fn point_tag_cost(
    sp: &ScoredPrediction,
    boxes: &[BoundingBox],
    pairs: &[(Point2D, ClassId)],
    gamma: f64,
) -> Result<CostMatrix> {
    let points: Vec<Point2D> = pairs.iter().map(|(p, _)| *p).collect();
    let tags: Vec<ClassId> = pairs.iter().map(|(_, c)| *c).collect();
    let pc = point_cost(sp, boxes, &points)?;
    let tc = tag_cost(sp, &tags)?;
    CostMatrix::new(Matrix::from_fn(pc.rows(), pc.cols(), |i, q| {
        let p = pc.get(i, q);
        if p >= BIG {
            BIG
        } else {
            gamma * tc.get(i, q) + (1.0 - gamma) * p
        }
    }))
}

/// `lambda_iou * (1 - giou) + lambda_l1 * L1` between each ground-truth box
/// and each predicted box.
pub fn box_cost(
    pred_boxes: &[BoundingBox],
    gt_boxes: &[BoundingBox],
    lambda_iou: f64,
    lambda_l1: f64,
) -> Result<CostMatrix> {
    ensure_fits(gt_boxes.len(), pred_boxes.len())?;
    CostMatrix::new(Matrix::from_fn(gt_boxes.len(), pred_boxes.len(), |i, k| {
        let (g, b) = (&gt_boxes[i], &pred_boxes[k]);
        lambda_iou * (1.0 - giou(g, b)) + lambda_l1 * l1_box(g, b)
    }))
}

/// Builds the cost matrix for a weak label. Returns `None` for unannotated
/// images.
pub fn build_problem(
    sp: &ScoredPrediction,
    boxes: &[BoundingBox],
    label: &OmniLabel,
    cfg: &FilterConfig,
) -> Result<Option<MatchingProblem>> {
    label.validate(sp.num_classes())?;
    if !matches!(label, OmniLabel::None) && label.is_empty() {
        return Err(Error::InvalidInput(format!("empty {} payload", label.format())));
    }
    let (cost, rows) = match label {
        OmniLabel::None => return Ok(None),
        OmniLabel::Fully(_) => {
            return Err(Error::Unsupported(
                "fully labeled images need no pseudo-label filtering".into(),
            ))
        }
        OmniLabel::TagsU(tags) => {
            let mut counts = predict_counts(sp, tags, cfg.tau)?;
            cap_counts(&mut counts, sp.num_queries());
            let pairs: Vec<(ClassId, usize)> = tags.iter().copied().zip(counts).collect();
            let expanded = expand_tags(&pairs);
            (tag_cost(sp, &expanded)?, expanded.into_iter().map(RowTarget::Tag).collect())
        }
        OmniLabel::TagsK(pairs) => {
            let expanded = expand_tags(pairs);
            (tag_cost(sp, &expanded)?, expanded.into_iter().map(RowTarget::Tag).collect())
        }
        OmniLabel::PointsU(points) => (
            point_cost(sp, boxes, points)?,
            points.iter().copied().map(RowTarget::Point).collect(),
        ),
        OmniLabel::PointsK(pairs) => (
            point_tag_cost(sp, boxes, pairs, cfg.gamma)?,
            pairs.iter().map(|&(p, c)| RowTarget::PointTag(p, c)).collect(),
        ),
        OmniLabel::BoxesU(gt) | OmniLabel::BoxesEc(gt) => (
            box_cost(boxes, gt, cfg.lambda_iou, cfg.lambda_l1)?,
            gt.iter().copied().map(RowTarget::Box).collect(),
        ),
    };
    Ok(Some(MatchingProblem {
        format: label.format(),
        cost,
        rows,
    }))
}

fn emit(
    sp: &ScoredPrediction,
    boxes: &[BoundingBox],
    problem: &MatchingProblem,
    row: usize,
    query: usize,
) -> PseudoLabel {
    let (bbox, class_id) = match problem.rows[row] {
        RowTarget::Tag(c) | RowTarget::PointTag(_, c) => (boxes[query], c),
        RowTarget::Point(_) => (boxes[query], sp.pred_class[query]),
        RowTarget::Box(g) => (g, sp.pred_class[query]),
    };
    let cost = problem.cost.get(row, query);
    PseudoLabel {
        bbox,
        class_id,
        score: sp.prob(query, class_id),
        source_query: query,
        gt_index: Some(row),
        matched_cost: Some(cost),
        infeasible: cost >= BIG / 2.0,
    }
}

fn finish(mut set: PseudoLabelSet, cfg: &FilterConfig) -> PseudoLabelSet {
    if cfg.drop_infeasible {
        set.items.retain(|p| !p.infeasible);
    }
    set
}

/// Bipartite-matching filter for any weak format.
pub fn unified_filter(pred: &TeacherPrediction, label: &OmniLabel, cfg: &FilterConfig) -> Result<PseudoLabelSet> {
    cfg.validate()?;
    let sp = score(pred);
    let boxes = pred.boxes();
    let Some(problem) = build_problem(&sp, boxes, label, cfg)? else {
        return Ok(filter_none(&sp, boxes, cfg));
    };
    let assignment: Assignment = cfg.matcher.solve(&problem.cost)?;
    let items = assignment
        .matches
        .iter()
        .enumerate()
        .map(|(row, &query)| emit(&sp, boxes, &problem, row, query))
        .collect();
    Ok(finish(PseudoLabelSet { items }, cfg))
}

/// Heuristic per-format selection rules. Each query is used at most once.
pub fn simple_filter(pred: &TeacherPrediction, label: &OmniLabel, cfg: &FilterConfig) -> Result<PseudoLabelSet> {
    cfg.validate()?;
    let sp = score(pred);
    let boxes = pred.boxes();
    if matches!(label, OmniLabel::BoxesU(_) | OmniLabel::BoxesEc(_)) {
        return Err(Error::Unsupported(format!(
            "no simple filter rule for {}",
            label.format()
        )));
    }
    let Some(problem) = build_problem(&sp, boxes, label, cfg)? else {
        return Ok(filter_none(&sp, boxes, cfg));
    };
    let k = sp.num_queries();
    let mut taken = vec![false; k];
    let mut items = Vec::new();
    for (row, target) in problem.rows.iter().enumerate() {
        // Candidates ranked by (key descending, query ascending).
        let pick = |key: &dyn Fn(usize) -> Option<f64>, taken: &[bool]| {
            (0..k)
                .filter(|&q| !taken[q])
                .filter_map(|q| key(q).map(|v| (q, v)))
                .fold(None, |best: Option<(usize, f64)>, (q, v)| match best {
                    Some((_, bv)) if bv >= v => best,
                    _ => Some((q, v)),
                })
                .map(|(q, _)| q)
        };
        let chosen = match *target {
            // Rows are already expanded to the thresholded (TagsU) or given
            // (TagsK) counts, so taking the best remaining query per row is
            // the top-n rule, with the top-1 fallback when nothing clears tau.
            RowTarget::Tag(c) => pick(&|q| Some(sp.prob(q, c)), &taken),
            RowTarget::Point(p) => pick(&|q| contains(&boxes[q], &p).then_some(sp.score[q]), &taken),
            RowTarget::PointTag(p, c) => pick(
                &|q| (contains(&boxes[q], &p) && sp.pred_class[q] == c).then_some(sp.score[q]),
                &taken,
            ),
            RowTarget::Box(_) => unreachable!("rejected above"),
        };
        if let Some(q) = chosen {
            taken[q] = true;
            items.push(emit(&sp, boxes, &problem, row, q));
        }
    }
    Ok(finish(PseudoLabelSet { items }, cfg))
}

/// Runs the filter selected by `cfg.strategy`.
pub fn filter(pred: &TeacherPrediction, label: &OmniLabel, cfg: &FilterConfig) -> Result<PseudoLabelSet> {
    match cfg.strategy {
        Strategy::Unified => unified_filter(pred, label, cfg),
        Strategy::Simple => simple_filter(pred, label, cfg),
    }
}

/// Cost of a selection under `problem`'s matrix. Rows the selection left
/// unanswered are completed with the lowest-index unused queries, which
/// yields a full injective assignment whose cost an optimal matching can
/// never exceed.
pub fn selection_cost(problem: &MatchingProblem, set: &PseudoLabelSet) -> f64 {
    let (g, k) = (problem.cost.rows(), problem.cost.cols());
    let mut cols: Vec<Option<usize>> = vec![None; g];
    let mut used = vec![false; k];
    for item in &set.items {
        if let Some(row) = item.gt_index {
            cols[row] = Some(item.source_query);
            used[item.source_query] = true;
        }
    }
    let mut free = (0..k).filter(|&q| !used[q]);
    let full: Vec<usize> = cols
        .into_iter()
        .map(|c| c.unwrap_or_else(|| free.next().expect("K >= G leaves a free query")))
        .collect();
    problem.cost.cost_of(&full)
}
