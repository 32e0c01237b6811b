//! Omni-label formats, downgrading of full annotations into weak ones, and
//! the interior-point and extreme-clicking simulators.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou, BoundingBox, Point2D, MIN_SIDE};

pub type ClassId = usize;

/// Noise scale that reproduces a mean IoU of 0.82 on [`coco_like_boxes`]
/// (10^4 boxes, seed 0) in the image frame.
pub const DEFAULT_EC_SIGMA: f64 = 0.0071;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelFormat {
    None,
    TagsU,
    TagsK,
    PointsU,
    PointsK,
    BoxesU,
    BoxesEc,
    Fully,
}

impl LabelFormat {
    pub const ALL: [LabelFormat; 8] = [
        LabelFormat::None,
        LabelFormat::TagsU,
        LabelFormat::TagsK,
        LabelFormat::PointsU,
        LabelFormat::PointsK,
        LabelFormat::BoxesU,
        LabelFormat::BoxesEc,
        LabelFormat::Fully,
    ];

    /// The six formats carrying partial information.
    pub const WEAK: [LabelFormat; 6] = [
        LabelFormat::TagsU,
        LabelFormat::TagsK,
        LabelFormat::PointsU,
        LabelFormat::PointsK,
        LabelFormat::BoxesU,
        LabelFormat::BoxesEc,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LabelFormat::None => "none",
            LabelFormat::TagsU => "tags_u",
            LabelFormat::TagsK => "tags_k",
            LabelFormat::PointsU => "points_u",
            LabelFormat::PointsK => "points_k",
            LabelFormat::BoxesU => "boxes_u",
            LabelFormat::BoxesEc => "boxes_ec",
            LabelFormat::Fully => "fully",
        }
    }
}

impl fmt::Display for LabelFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LabelFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('-', "_");
        LabelFormat::ALL
            .into_iter()
            .find(|f| f.as_str() == norm)
            .ok_or_else(|| Error::InvalidInput(format!("unknown label format {s:?}")))
    }
}

/// Annotation attached to one image, in any of the supported formats.
#[derive(Debug, Clone, PartialEq)]
pub enum OmniLabel {
    None,
    /// Unique class tags.
    TagsU(Vec<ClassId>),
    /// Unique class tags with object counts (each `>= 1`).
    TagsK(Vec<(ClassId, usize)>),
    PointsU(Vec<Point2D>),
    PointsK(Vec<(Point2D, ClassId)>),
    BoxesU(Vec<BoundingBox>),
    BoxesEc(Vec<BoundingBox>),
    Fully(Vec<(BoundingBox, ClassId)>),
}

impl OmniLabel {
    pub fn format(&self) -> LabelFormat {
        match self {
            OmniLabel::None => LabelFormat::None,
            OmniLabel::TagsU(_) => LabelFormat::TagsU,
            OmniLabel::TagsK(_) => LabelFormat::TagsK,
            OmniLabel::PointsU(_) => LabelFormat::PointsU,
            OmniLabel::PointsK(_) => LabelFormat::PointsK,
            OmniLabel::BoxesU(_) => LabelFormat::BoxesU,
            OmniLabel::BoxesEc(_) => LabelFormat::BoxesEc,
            OmniLabel::Fully(_) => LabelFormat::Fully,
        }
    }

    /// Number of payload entries (tags, points or boxes; not expanded counts).
    pub fn len(&self) -> usize {
        match self {
            OmniLabel::None => 0,
            OmniLabel::TagsU(v) => v.len(),
            OmniLabel::TagsK(v) => v.len(),
            OmniLabel::PointsU(v) => v.len(),
            OmniLabel::PointsK(v) => v.len(),
            OmniLabel::BoxesU(v) | OmniLabel::BoxesEc(v) => v.len(),
            OmniLabel::Fully(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Checks class ranges and the uniqueness/count rules of the tag formats.
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        let check = |c: ClassId| {
            if c < num_classes {
                Ok(())
            } else {
                Err(Error::ClassOutOfRange {
                    class: c,
                    num_classes,
                })
            }
        };
        let unique = |classes: &mut dyn Iterator<Item = ClassId>| {
            let mut seen = std::collections::BTreeSet::new();
            for c in classes {
                check(c)?;
                if !seen.insert(c) {
                    return Err(Error::InvalidInput(format!("duplicate tag {c}")));
                }
            }
            Ok(())
        };
        match self {
            OmniLabel::None | OmniLabel::PointsU(_) | OmniLabel::BoxesU(_) | OmniLabel::BoxesEc(_) => {
                Ok(())
            }
            OmniLabel::TagsU(tags) => unique(&mut tags.iter().copied()),
            OmniLabel::TagsK(pairs) => {
                if let Some((c, _)) = pairs.iter().find(|(_, n)| *n == 0) {
                    return Err(Error::InvalidInput(format!("tag {c} has zero count")));
                }
                unique(&mut pairs.iter().map(|(c, _)| *c))
            }
            OmniLabel::PointsK(pairs) => pairs.iter().try_for_each(|(_, c)| check(*c)),
            OmniLabel::Fully(pairs) => pairs.iter().try_for_each(|(_, c)| check(*c)),
        }
    }
}

/// Where the extreme-clicking noise standard deviation is measured.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseFrame {
    /// `sigma` is a fraction of the image side (normalized units).
    #[default]
    Image,
    /// `sigma` is a fraction of the box side along the same axis.
    BoxSide,
}

/// Gaussian corner noise used to simulate extreme-clicking boxes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub sigma_scale: f64,
    pub seed: u64,
    #[serde(default)]
    pub frame: NoiseFrame,
}

impl NoiseModel {
    pub fn new(sigma_scale: f64, seed: u64) -> Result<Self> {
        if !(sigma_scale.is_finite() && sigma_scale >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "sigma_scale must be finite and non-negative, got {sigma_scale}"
            )));
        }
        Ok(Self {
            sigma_scale,
            seed,
            frame: NoiseFrame::Image,
        })
    }

    pub fn with_frame(mut self, frame: NoiseFrame) -> Self {
        self.frame = frame;
        self
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            sigma_scale: DEFAULT_EC_SIGMA,
            seed: 0,
            frame: NoiseFrame::Image,
        }
    }
}

/// Simulates one extreme-clicking box from `gt`, seeded by `noise.seed`.
pub fn simulate_ec(gt: &BoundingBox, noise: &NoiseModel) -> BoundingBox {
    simulate_ec_with(gt, noise.sigma_scale, noise.frame, &mut noise.rng())
}

/// Perturbs each corner coordinate with i.i.d. Gaussian noise, re-orders and
/// clamps the result into the unit square. Always draws exactly four
/// normals, so a shared stream stays aligned across calls.
pub fn simulate_ec_with<R: Rng + ?Sized>(
    gt: &BoundingBox,
    sigma: f64,
    frame: NoiseFrame,
    rng: &mut R,
) -> BoundingBox {
    let n: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
    if sigma == 0.0 {
        return *gt;
    }
    let (sx, sy) = match frame {
        NoiseFrame::Image => (sigma, sigma),
        NoiseFrame::BoxSide => (sigma * gt.w(), sigma * gt.h()),
    };
    let [x0, y0, x1, y1] = gt.corners();
    let (ax, bx) = (x0 + n[0] * sx, x1 + n[2] * sx);
    let (ay, by) = (y0 + n[1] * sy, y1 + n[3] * sy);
    let (mut x0, mut x1) = (ax.min(bx).clamp(0.0, 1.0), ax.max(bx).clamp(0.0, 1.0));
    let (mut y0, mut y1) = (ay.min(by).clamp(0.0, 1.0), ay.max(by).clamp(0.0, 1.0));
    widen(&mut x0, &mut x1);
    widen(&mut y0, &mut y1);
    BoundingBox::from_corners(x0, y0, x1, y1).expect("widened box is valid")
}

/// Grows `[lo, hi]` to at least twice `MIN_SIDE` while staying in `[0, 1]`.
fn widen(lo: &mut f64, hi: &mut f64) {
    let need = 2.0 * MIN_SIDE;
    if *hi - *lo >= need {
        return;
    }
    let mid = ((*lo + *hi) / 2.0).clamp(need / 2.0, 1.0 - need / 2.0);
    *lo = mid - need / 2.0;
    *hi = mid + need / 2.0;
}

/// IoU statistics of simulated boxes against their sources.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IouStats {
    pub mean: f64,
    pub std: f64,
    pub second_moment: f64,
    pub count: usize,
}

impl IouStats {
    pub fn from_samples(values: &[f64]) -> Self {
        let n = values.len().max(1) as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean,
            std: var.sqrt(),
            second_moment: var,
            count: values.len(),
        }
    }
}

/// Simulates the whole sample from one stream seeded by `noise.seed` and
/// returns the simulated boxes.
pub fn simulate_ec_batch(boxes: &[BoundingBox], noise: &NoiseModel) -> Vec<BoundingBox> {
    let mut rng = noise.rng();
    boxes
        .iter()
        .map(|b| simulate_ec_with(b, noise.sigma_scale, noise.frame, &mut rng))
        .collect()
}

pub fn ec_iou_stats(boxes: &[BoundingBox], noise: &NoiseModel) -> IouStats {
    let sim = simulate_ec_batch(boxes, noise);
    let ious: Vec<f64> = boxes.iter().zip(&sim).map(|(a, b)| iou(a, b)).collect();
    IouStats::from_samples(&ious)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EcCalibration {
    pub noise: NoiseModel,
    pub achieved: IouStats,
    pub target_mean: f64,
    pub target_std: f64,
}

/// Bisects the noise scale so the simulated mean IoU on `box_sample` hits
/// `target_mean`. The noise draws are common across probes (same seed), so
/// the mean is monotone in the scale. Only the mean is fitted; the achieved
/// std is reported for comparison with `target_std`.
pub fn calibrate_ec(
    target_mean: f64,
    target_std: f64,
    box_sample: &[BoundingBox],
    seed: u64,
    frame: NoiseFrame,
) -> Result<EcCalibration> {
    if !(target_mean > 0.0 && target_mean < 1.0) {
        return Err(Error::InvalidInput(format!(
            "target mean IoU {target_mean} is unattainable; it must lie in (0, 1)"
        )));
    }
    if box_sample.is_empty() {
        return Err(Error::InvalidInput("empty box sample".into()));
    }
    let mean_at = |sigma: f64| {
        let noise = NoiseModel {
            sigma_scale: sigma,
            seed,
            frame,
        };
        ec_iou_stats(box_sample, &noise).mean
    };
    let mut lo = 0.0;
    let mut hi = 0.01;
    while mean_at(hi) > target_mean {
        lo = hi;
        hi *= 2.0;
        if hi > 1e3 {
            return Err(Error::InvalidInput(format!(
                "target mean IoU {target_mean} not reached by any noise scale"
            )));
        }
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if mean_at(mid) > target_mean {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-9 * hi.max(1e-12) {
            break;
        }
    }
    let sigma = 0.5 * (lo + hi);
    let noise = NoiseModel {
        sigma_scale: sigma,
        seed,
        frame,
    };
    let achieved = ec_iou_stats(box_sample, &noise);
    if (achieved.std - target_std).abs() > 0.03 {
        log::warn!(
            "calibrated std {:.3} differs from target {:.3}",
            achieved.std,
            target_std
        );
    }
    Ok(EcCalibration {
        noise,
        achieved,
        target_mean,
        target_std,
    })
}

/// Random boxes with a COCO-like size profile: log-normal square-root area
/// (median 0.15 of the image side), log-normal aspect ratio, and uniformly
/// placed centers that keep the box inside the image.
pub fn coco_like_boxes(n: usize, seed: u64) -> Vec<BoundingBox> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = LogNormal::new(0.15f64.ln(), 0.9).expect("valid parameters");
    let aspect = LogNormal::new(0.0, 0.5).expect("valid parameters");
    (0..n)
        .map(|_| {
            let s: f64 = scale.sample(&mut rng).clamp(0.01, 0.95);
            let a: f64 = aspect.sample(&mut rng);
            let w = (s * a.sqrt()).clamp(0.005, 1.0);
            let h = (s / a.sqrt()).clamp(0.005, 1.0);
            let cx = w / 2.0 + rng.gen::<f64>() * (1.0 - w);
            let cy = h / 2.0 + rng.gen::<f64>() * (1.0 - h);
            BoundingBox::new(cx, cy, w, h).expect("box constructed inside the unit square")
        })
        .collect()
}

/// Uniform point inside `b` (closed extent).
pub fn sample_interior_point<R: Rng + ?Sized>(b: &BoundingBox, rng: &mut R) -> Point2D {
    let [x0, y0, x1, y1] = b.corners();
    let px = (x0 + rng.gen::<f64>() * (x1 - x0)).clamp(x0.max(0.0), x1.min(1.0));
    let py = (y0 + rng.gen::<f64>() * (y1 - y0)).clamp(y0.max(0.0), y1.min(1.0));
    Point2D::new(px, py).expect("point inside a valid box")
}

/// Reduces a full annotation to the `target` format using the default
/// extreme-clicking noise.
pub fn downgrade(full: &OmniLabel, target: LabelFormat, seed: u64) -> Result<OmniLabel> {
    downgrade_with(full, target, seed, DEFAULT_EC_SIGMA, NoiseFrame::Image)
}

pub fn downgrade_with(
    full: &OmniLabel,
    target: LabelFormat,
    seed: u64,
    ec_sigma: f64,
    frame: NoiseFrame,
) -> Result<OmniLabel> {
    let OmniLabel::Fully(pairs) = full else {
        return Err(Error::InvalidInput(format!(
            "downgrade needs a fully labeled source, got {}",
            full.format()
        )));
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let label = match target {
        LabelFormat::None => OmniLabel::None,
        LabelFormat::Fully => full.clone(),
        LabelFormat::TagsU => {
            let mut tags: Vec<ClassId> = pairs.iter().map(|(_, c)| *c).collect();
            tags.sort_unstable();
            tags.dedup();
            OmniLabel::TagsU(tags)
        }
        LabelFormat::TagsK => {
            let mut counts = BTreeMap::new();
            for (_, c) in pairs {
                *counts.entry(*c).or_insert(0usize) += 1;
            }
            OmniLabel::TagsK(counts.into_iter().collect())
        }
        LabelFormat::PointsU => OmniLabel::PointsU(
            pairs
                .iter()
                .map(|(b, _)| sample_interior_point(b, &mut rng))
                .collect(),
        ),
        LabelFormat::PointsK => OmniLabel::PointsK(
            pairs
                .iter()
                .map(|(b, c)| (sample_interior_point(b, &mut rng), *c))
                .collect(),
        ),
        LabelFormat::BoxesU => OmniLabel::BoxesU(pairs.iter().map(|(b, _)| *b).collect()),
        LabelFormat::BoxesEc => OmniLabel::BoxesEc(
            pairs
                .iter()
                .map(|(b, _)| simulate_ec_with(b, ec_sigma, frame, &mut rng))
                .collect(),
        ),
    };
    Ok(label)
}
