//! Seeded synthetic corpora and teacher outputs for tests, fixtures and the
//! CLI demos. Nothing here depends on real images.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};

use crate::annotation::{coco_like_boxes, ClassId};
use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::matrix::Matrix;
use crate::prediction::TeacherPrediction;

/// Fully annotated images with ids `1..=num_images`, each holding
/// `1..=max_objects` boxes of uniformly drawn classes.
pub fn synthetic_fully(
    num_images: usize,
    num_classes: usize,
    max_objects: usize,
    seed: u64,
) -> Result<BTreeMap<u64, Vec<(BoundingBox, ClassId)>>> {
    if num_classes == 0 || max_objects == 0 {
        return Err(Error::InvalidInput("need at least one class and one object".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = BTreeMap::new();
    for id in 1..=num_images as u64 {
        let n = rng.gen_range(1..=max_objects);
        let boxes = coco_like_boxes(n, rng.gen());
        let objects = boxes.into_iter().map(|b| (b, rng.gen_range(0..num_classes))).collect();
        out.insert(id, objects);
    }
    Ok(out)
}

/// Perturbs a box roughly the way a decent detector misses it.
fn jitter<R: Rng>(b: &BoundingBox, rng: &mut R) -> BoundingBox {
    let shift = Normal::new(0.0, 0.15).expect("valid normal");
    let scale = LogNormal::new(0.0, 0.15).expect("valid lognormal");
    let cx = b.cx() + shift.sample(rng) * b.w();
    let cy = b.cy() + shift.sample(rng) * b.h();
    let w = b.w() * scale.sample(rng);
    let h = b.h() * scale.sample(rng);
    BoundingBox::clamped(cx.clamp(0.0, 1.0), cy.clamp(0.0, 1.0), w, h).unwrap_or(*b)
}

/// Teacher output for one image: one query per object (while queries last)
/// with a jittered box and a usually-correct confident class, a few noisy
/// duplicates, and background queries filling the rest. Query order is
/// shuffled.
pub fn synthetic_teacher(
    image_id: u64,
    gt: &[(BoundingBox, ClassId)],
    num_queries: usize,
    num_classes: usize,
    seed: u64,
) -> Result<TeacherPrediction> {
    if num_queries == 0 || num_classes == 0 {
        return Err(Error::Dimension("need at least one query and one class".into()));
    }
    if let Some(&(_, class)) = gt.iter().find(|(_, c)| *c >= num_classes) {
        return Err(Error::ClassOutOfRange { class, num_classes });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ image_id.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let noise = Normal::new(0.0, 1.0).expect("valid normal");
    let mut slots: Vec<usize> = (0..num_queries).collect();
    slots.shuffle(&mut rng);
    let mut slots = slots.into_iter();

    let background = coco_like_boxes(num_queries, rng.gen());
    let mut boxes = background;
    let mut logits = Matrix::from_fn(num_queries, num_classes, |_, _| 0.0);
    for q in 0..num_queries {
        for c in 0..num_classes {
            logits[(q, c)] = -2.0 + 1.2 * noise.sample(&mut rng);
        }
    }

    let mut place = |q: usize, b: BoundingBox, class: ClassId, strength: f64, rng: &mut ChaCha8Rng| {
        boxes[q] = b;
        let label = if num_classes > 1 && rng.gen_bool(0.2) {
            rng.gen_range(0..num_classes)
        } else {
            class
        };
        logits[(q, label)] = strength + noise.sample(rng);
    };
    for &(ref g, class) in gt {
        let Some(q) = slots.next() else { break };
        let b = jitter(g, &mut rng);
        place(q, b, class, 3.0, &mut rng);
    }
    for &(ref g, class) in gt {
        if !rng.gen_bool(0.3) {
            continue;
        }
        let Some(q) = slots.next() else { break };
        let b = jitter(&jitter(g, &mut rng), &mut rng);
        place(q, b, class, 1.0, &mut rng);
    }
    TeacherPrediction::new(image_id, logits, boxes)
}

/// Unstructured teacher output: COCO-like boxes and Gaussian logits with a
/// per-image spread drawn from `[0.5, 4]`.
pub fn random_teacher<R: Rng + ?Sized>(
    image_id: u64,
    num_queries: usize,
    num_classes: usize,
    rng: &mut R,
) -> Result<TeacherPrediction> {
    let spread = rng.gen_range(0.5..4.0);
    let noise = Normal::new(0.0, spread).expect("valid normal");
    let boxes = coco_like_boxes(num_queries, rng.gen());
    let values: Vec<f64> = (0..num_queries * num_classes).map(|_| noise.sample(rng)).collect();
    let logits = Matrix::from_vec(num_queries, num_classes, values)
        .ok_or_else(|| Error::Dimension("empty prediction".into()))?;
    TeacherPrediction::new(image_id, logits, boxes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::iou;
    use crate::prediction::score;

    #[test]
    fn corpus_is_seeded() {
        let a = synthetic_fully(20, 5, 4, 7).unwrap();
        assert_eq!(a, synthetic_fully(20, 5, 4, 7).unwrap());
        assert_ne!(a, synthetic_fully(20, 5, 4, 8).unwrap());
        assert_eq!(a.keys().copied().collect::<Vec<_>>(), (1..=20).collect::<Vec<u64>>());
        assert!(a.values().all(|v| (1..=4).contains(&v.len()) && v.iter().all(|(_, c)| *c < 5)));
    }

    #[test]
    fn teacher_sees_most_objects() {
        let corpus = synthetic_fully(30, 5, 4, 1).unwrap();
        let (mut hits, mut total) = (0, 0);
        for (&id, gt) in &corpus {
            let pred = synthetic_teacher(id, gt, 12, 5, 3).unwrap();
            assert_eq!(pred, synthetic_teacher(id, gt, 12, 5, 3).unwrap());
            let sp = score(&pred);
            for (g, c) in gt {
                total += 1;
                let found = (0..12).any(|q| iou(g, &pred.boxes()[q]) > 0.5 && sp.pred_class[q] == *c);
                hits += found as usize;
            }
        }
        assert!(hits * 2 > total, "{hits}/{total}");
    }

    #[test]
    fn random_teacher_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = random_teacher(4, 300, 20, &mut rng).unwrap();
        assert_eq!((p.num_queries(), p.num_classes(), p.image_id()), (300, 20, 4));
    }
}
