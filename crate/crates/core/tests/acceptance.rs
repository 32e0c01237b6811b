//! Acceptance criteria, one pass/fail line each. Runs without the libtest
//! harness so the summary is always printed.
//!
//! `OMNILABEL_BLESS=1 cargo test --test acceptance` rewrites the golden
//! pseudo-label files using the exhaustive matcher.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use omnilabel::annotation::{
    calibrate_ec, coco_like_boxes, downgrade, ec_iou_stats, ClassId, LabelFormat, NoiseFrame, NoiseModel, OmniLabel,
};
use omnilabel::budget::{builtin_profile, cost_per_image, policy_cost, MixturePolicy};
use omnilabel::ema::{ema_update, ParamVector};
use omnilabel::filtering::{
    build_problem, expand_tags, filter_none, point_cost, selection_cost, simple_filter, tag_cost, unified_filter,
    FilterConfig, PseudoLabelSet,
};
use omnilabel::geometry::{contains, BoundingBox, Point2D};
use omnilabel::io::{pseudo_to_string, ImageSizes};
use omnilabel::loss::{eval_loss, LossConfig};
use omnilabel::matching::{brute_force, hungarian, CostMatrix, Matcher, BIG};
use omnilabel::matrix::Matrix;
use omnilabel::prediction::{score, TeacherPrediction};
use omnilabel::synthetic::{random_teacher, synthetic_fully, synthetic_teacher};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    /// Failed only on entries listed in `KNOWN_DEFECTS`.
    expected_failure: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        expected_failure: false,
        detail: detail.into(),
    }
}

// ------------------------------------------------------------------ 1

// Per-image seconds as printed: TagsU, TagsK, PointsU, PointsK, BoxesEC,
// BoxesU, Fully. `None` marks the cells left blank.
const COST_TABLE: [(&str, [Option<f64>; 7]); 5] = [
    ("bees", [None, Some(6.1), Some(6.4), Some(6.4), Some(50.0), Some(249.9), Some(249.9)]),
    ("crowdhuman", [None, Some(19.4), Some(20.4), Some(20.4), Some(158.5), Some(792.4), Some(792.4)]),
    ("voc", [Some(20.0), Some(21.0), Some(2.2), Some(22.9), Some(16.8), Some(84.0), Some(102.6)]),
    ("coco", [Some(80.0), Some(84.2), Some(6.9), Some(88.7), Some(53.9), Some(269.5), Some(346.0)]),
    ("objects365", [Some(365.0), Some(375.8), Some(14.2), Some(381.7), Some(110.6), Some(553.0), Some(913.0)]),
];

const TABLE_ORDER: [LabelFormat; 7] = [
    LabelFormat::TagsU,
    LabelFormat::TagsK,
    LabelFormat::PointsU,
    LabelFormat::PointsK,
    LabelFormat::BoxesEc,
    LabelFormat::BoxesU,
    LabelFormat::Fully,
];

fn criterion_1() -> Outcome {
    let mut cells = 0;
    let mut bad = Vec::new();
    for (name, row) in COST_TABLE {
        let stats = builtin_profile(name).expect("built-in profile");
        for (format, expected) in TABLE_ORDER.iter().zip(row) {
            let got = cost_per_image(&stats, *format);
            match (expected, got) {
                (Some(want), Ok(v)) => {
                    cells += 1;
                    if (v - want).abs() > 0.05 {
                        bad.push(format!("{name}/{format}: {v:.3} vs {want}"));
                    }
                }
                (None, Err(_)) => {}
                (None, Ok(v)) => bad.push(format!("{name}/{format}: expected blank, got {v:.3}")),
                (Some(want), Err(e)) => bad.push(format!("{name}/{format}: {e} (expected {want})")),
            }
        }
    }
    outcome(
        bad.is_empty(),
        format!("{}/{cells} populated cells within ±0.05 s {bad:?}", cells - bad.len()),
    )
}

// ------------------------------------------------------------------ 2

// (dataset, Fully, None, TagsK, PointsU, BoxesEC percentages, printed hours,
// printed rounding unit).
const BUDGET_TABLE: [(&str, [u32; 5], f64, f64); 30] = [
    ("bees", [5, 0, 80, 0, 15], 25.0, 1.0),
    ("bees", [10, 0, 46, 0, 44], 50.0, 1.0),
    ("bees", [20, 0, 34, 0, 46], 75.0, 1.0),
    ("bees", [5, 0, 0, 80, 15], 25.0, 1.0),
    ("bees", [10, 0, 0, 46, 44], 50.0, 1.0),
    ("bees", [20, 0, 0, 34, 46], 75.0, 1.0),
    ("crowdhuman", [5, 0, 80, 0, 15], 330.0, 10.0),
    ("crowdhuman", [10, 0, 46, 0, 44], 660.0, 10.0),
    ("crowdhuman", [20, 0, 34, 0, 46], 990.0, 10.0),
    ("crowdhuman", [5, 0, 0, 80, 15], 330.0, 10.0),
    ("crowdhuman", [10, 0, 0, 46, 44], 660.0, 10.0),
    ("crowdhuman", [20, 0, 0, 34, 46], 990.0, 10.0),
    ("voc", [8, 80, 0, 0, 12], 63.1, 0.1),
    ("voc", [10, 29, 0, 0, 61], 126.2, 0.1),
    ("voc", [20, 19, 0, 0, 61], 189.3, 0.1),
    ("voc", [8, 0, 0, 91, 1], 63.1, 0.1),
    ("voc", [10, 0, 0, 33, 57], 126.2, 0.1),
    ("voc", [20, 0, 0, 22, 58], 189.3, 0.1),
    ("coco", [8, 79, 0, 0, 13], 1100.0, 100.0),
    ("coco", [10, 26, 0, 0, 64], 2300.0, 100.0),
    ("coco", [20, 16, 0, 0, 64], 3400.0, 100.0),
    ("coco", [8, 0, 0, 91, 1], 1100.0, 100.0),
    ("coco", [10, 0, 0, 30, 60], 2300.0, 100.0),
    ("coco", [20, 0, 0, 18, 62], 3400.0, 100.0),
    ("objects365", [8, 75, 0, 0, 17], 2400.0, 100.0),
    ("objects365", [10, 7, 0, 0, 83], 4800.0, 100.0),
    ("objects365", [25, 25, 0, 0, 50], 7200.0, 100.0),
    ("objects365", [8, 0, 0, 86, 6], 2400.0, 100.0),
    ("objects365", [10, 0, 0, 8, 82], 4800.0, 100.0),
    ("objects365", [25, 0, 0, 34, 41], 7200.0, 100.0),
];

// Printed entries that disagree with their own cost formula. The
// objects365 row's mixture prices at 93455 x (0.25 x 913 + 0.5 x 110.6) s,
// about 7361 h, a full rounding unit above the printed 7200.
const KNOWN_DEFECTS: [(&str, [u32; 5]); 1] = [("objects365", [25, 25, 0, 0, 50])];

fn policy(stats_name: &str, pct: [u32; 5]) -> MixturePolicy {
    let formats = [
        LabelFormat::Fully,
        LabelFormat::None,
        LabelFormat::TagsK,
        LabelFormat::PointsU,
        LabelFormat::BoxesEc,
    ];
    let size = builtin_profile(stats_name).and_then(|s| s.train_images).expect("size");
    MixturePolicy::new(formats.into_iter().zip(pct.map(|p| p as f64 / 100.0)), size).expect("valid policy")
}

fn criterion_2() -> Outcome {
    let bees = builtin_profile("bees").unwrap();
    let worked = policy_cost(&policy("bees", [5, 0, 80, 0, 15]), &bees).unwrap();
    let mut bad = Vec::new();
    if (worked - 24.85).abs() > 0.005 || worked.round() != 25.0 {
        bad.push(format!("worked example {worked:.3} h"));
    }
    let mut ok = 0;
    let mut known = 0;
    for (name, pct, printed, unit) in BUDGET_TABLE {
        let stats = builtin_profile(name).unwrap();
        let hours = policy_cost(&policy(name, pct), &stats).unwrap();
        // The printed value must be the computed one at the printed
        // precision, with one hour of slack.
        let tol = (unit / 2.0).max(1.0);
        if (hours - printed).abs() <= tol {
            ok += 1;
        } else {
            known += usize::from(KNOWN_DEFECTS.contains(&(name, pct)));
            bad.push(format!("{name} {pct:?}: {hours:.1} h vs printed {printed} (±{tol})"));
        }
    }
    let mut o = outcome(
        bad.is_empty(),
        format!("worked example {worked:.3} h; {ok}/30 table entries within rounding {bad:?}"),
    );
    if known > 0 && known == bad.len() {
        o.expected_failure = true;
        o.detail += " [known table inconsistency]";
    }
    o
}

// ------------------------------------------------------------------ 3

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut bad = 0;
    let mut first = None;
    for case in 0..1000 {
        let g = rng.gen_range(1..=6);
        let k = rng.gen_range(g..=10);
        let kind = case % 3;
        let rows: Vec<Vec<f64>> = (0..g)
            .map(|_| {
                (0..k)
                    .map(|_| match kind {
                        0 => rng.gen::<f64>(),
                        1 => rng.gen_range(0..4) as f64,
                        _ if rng.gen_bool(0.3) => BIG,
                        _ => rng.gen::<f64>() * 3.0,
                    })
                    .collect()
            })
            .collect();
        let c = CostMatrix::from_rows(&rows).unwrap();
        let h = hungarian(&c);
        let b = brute_force(&c).unwrap();
        if (h.total_cost - b.total_cost).abs() > 1e-9 || h.matches != b.matches {
            bad += 1;
            first.get_or_insert(format!("case {case}: {:?} vs {:?}", h.matches, b.matches));
        }
    }
    outcome(bad == 0, format!("{}/1000 cases agree {}", 1000 - bad, first.unwrap_or_default()))
}

// ---------------------------------------------------------------- 4, 5

const FILTER_CASES: u64 = 10_500;
const FORMATS: [LabelFormat; 7] = [
    LabelFormat::None,
    LabelFormat::TagsU,
    LabelFormat::TagsK,
    LabelFormat::PointsU,
    LabelFormat::PointsK,
    LabelFormat::BoxesU,
    LabelFormat::BoxesEc,
];

#[derive(Default)]
struct Tally {
    cases: u64,
    violations: BTreeMap<&'static str, u64>,
    first: Vec<String>,
}

impl Tally {
    fn check(&mut self, ok: bool, what: &'static str, case: u64) {
        if !ok {
            *self.violations.entry(what).or_default() += 1;
            if self.first.len() < 5 {
                self.first.push(format!("{what}@{case}"));
            }
        }
    }

    fn total(&self) -> u64 {
        self.violations.values().sum()
    }
}

/// Copy of `pred` whose boxes are grown to cover every point.
fn covering_prediction(pred: &TeacherPrediction, points: &[Point2D]) -> TeacherPrediction {
    let (mut x0, mut y0, mut x1, mut y1) = (1.0f64, 1.0f64, 0.0f64, 0.0f64);
    for p in points {
        x0 = x0.min(p.px());
        y0 = y0.min(p.py());
        x1 = x1.max(p.px());
        y1 = y1.max(p.py());
    }
    let boxes = pred
        .boxes()
        .iter()
        .map(|b| {
            let [a0, b0, a1, b1] = b.corners();
            BoundingBox::clamped_from_corners(
                a0.min(x0) - 1e-6,
                b0.min(y0) - 1e-6,
                a1.max(x1) + 1e-6,
                b1.max(y1) + 1e-6,
            )
            .unwrap()
        })
        .collect();
    TeacherPrediction::new(pred.image_id(), pred.logits().clone(), boxes).unwrap()
}

fn sorted(mut v: Vec<ClassId>) -> Vec<ClassId> {
    v.sort_unstable();
    v
}

fn source_queries(set: &PseudoLabelSet) -> Vec<usize> {
    set.items.iter().map(|p| p.source_query).collect()
}

fn criteria_4_5() -> (Outcome, Outcome) {
    let cfg = FilterConfig::default();
    let sizes = ImageSizes::new();
    let mut inv = Tally::default();
    let mut dom = Tally::default();
    for case in 0..FILTER_CASES {
        let mut rng = ChaCha8Rng::seed_from_u64(case);
        let format = FORMATS[(case % 7) as usize];
        let c = [1, 20, 80][((case / 7) % 3) as usize];
        let n = rng.gen_range(1..=10);
        let gt: Vec<(BoundingBox, ClassId)> = coco_like_boxes(n, rng.gen())
            .into_iter()
            .map(|b| (b, rng.gen_range(0..c)))
            .collect();
        let pred = if case % 2 == 0 {
            synthetic_teacher(case, &gt, 300, c, rng.gen()).unwrap()
        } else {
            random_teacher(case, 300, c, &mut rng).unwrap()
        };
        let label = downgrade(&OmniLabel::Fully(gt.clone()), format, rng.gen()).unwrap();
        let sp = score(&pred);
        let out = unified_filter(&pred, &label, &cfg).unwrap();
        inv.cases += 1;

        // Determinism, down to the serialized bytes.
        let again = unified_filter(&pred, &label, &cfg).unwrap();
        let bytes = |s: &PseudoLabelSet| pseudo_to_string(&[(case, s.clone())].into(), &sizes, None).unwrap();
        inv.check(out == again && bytes(&out) == bytes(&again), "determinism", case);

        if format == LabelFormat::None {
            let expected = (0..300).filter(|&q| sp.score[q] > cfg.tau).count();
            inv.check(out.len() == expected, "cardinality", case);
            let mut prev: Option<Vec<usize>> = None;
            for tau in [0.05, 0.3, 0.5, 0.7, 0.9, 0.99] {
                let kept = source_queries(&filter_none(&sp, pred.boxes(), &FilterConfig { tau, ..cfg }));
                if let Some(p) = &prev {
                    inv.check(kept.iter().all(|q| p.contains(q)), "tau-monotonicity", case);
                }
                prev = Some(kept);
            }
            continue;
        }

        let problem = build_problem(&sp, pred.boxes(), &label, &cfg).unwrap().unwrap();
        let queries = source_queries(&out);
        let mut uniq = queries.clone();
        uniq.sort_unstable();
        uniq.dedup();
        inv.check(uniq.len() == queries.len(), "injectivity", case);

        let rows_expected = match &label {
            OmniLabel::TagsU(tags) => {
                let counts: Vec<(ClassId, usize)> = tags
                    .iter()
                    .map(|&t| (t, (0..300).filter(|&q| sp.prob(q, t) > cfg.tau).count().max(1)))
                    .collect();
                let expanded = expand_tags(&counts);
                inv.check(
                    sorted(out.items.iter().map(|p| p.class_id).collect()) == sorted(expanded.clone()),
                    "class-multiset",
                    case,
                );
                expanded.len()
            }
            OmniLabel::TagsK(pairs) => {
                let expanded = expand_tags(pairs);
                inv.check(
                    sorted(out.items.iter().map(|p| p.class_id).collect()) == sorted(expanded.clone()),
                    "class-multiset",
                    case,
                );
                expanded.len()
            }
            OmniLabel::PointsU(points) => {
                for p in &out.items {
                    let row = p.gt_index.unwrap();
                    inv.check(p.infeasible || contains(&p.bbox, &points[row]), "point-containment", case);
                    inv.check(p.class_id == sp.pred_class[p.source_query], "class-multiset", case);
                }
                points.len()
            }
            OmniLabel::PointsK(pairs) => {
                for p in &out.items {
                    let (point, tag) = pairs[p.gt_index.unwrap()];
                    inv.check(p.infeasible || contains(&p.bbox, &point), "point-containment", case);
                    inv.check(p.class_id == tag, "class-multiset", case);
                }
                // Both endpoints of the point/tag trade-off on a matrix with
                // no infeasible entries.
                let points: Vec<Point2D> = pairs.iter().map(|(p, _)| *p).collect();
                let tags: Vec<ClassId> = pairs.iter().map(|(_, c)| *c).collect();
                let covered = covering_prediction(&pred, &points);
                let csp = score(&covered);
                let at = |gamma| {
                    source_queries(&unified_filter(&covered, &label, &FilterConfig { gamma, ..cfg }).unwrap())
                };
                let by_tag = hungarian(&tag_cost(&csp, &tags).unwrap()).matches;
                let by_point = hungarian(&point_cost(&csp, covered.boxes(), &points).unwrap()).matches;
                inv.check(at(1.0) == by_tag, "gamma-endpoint", case);
                inv.check(at(0.0) == by_point, "gamma-endpoint", case);
                pairs.len()
            }
            OmniLabel::BoxesU(boxes) | OmniLabel::BoxesEc(boxes) => {
                for p in &out.items {
                    inv.check(p.bbox == boxes[p.gt_index.unwrap()], "class-multiset", case);
                    inv.check(p.class_id == sp.pred_class[p.source_query], "class-multiset", case);
                }
                boxes.len()
            }
            _ => unreachable!(),
        };
        inv.check(
            out.len() == rows_expected && problem.cost.rows() == rows_expected,
            "cardinality",
            case,
        );

        if matches!(format, LabelFormat::BoxesU | LabelFormat::BoxesEc) {
            continue;
        }
        let simple = simple_filter(&pred, &label, &cfg).unwrap();
        let unified_cost = out.matched_cost_sum();
        let simple_cost = selection_cost(&problem, &simple);
        dom.cases += 1;
        dom.check(
            unified_cost <= simple_cost + 1e-9 * simple_cost.abs().max(1.0),
            "dominance",
            case,
        );
    }
    let four = outcome(
        inv.total() == 0,
        format!(
            "{} cases (K=300, C in {{1,20,80}}), {} violations {:?} {:?}",
            inv.cases,
            inv.total(),
            inv.violations,
            inv.first
        ),
    );
    let five = outcome(
        dom.total() == 0,
        format!("{} cases, {} where unified cost exceeds simple {:?}", dom.cases, dom.total(), dom.first),
    );
    (four, five)
}

// ------------------------------------------------------------------ 6

fn criterion_6() -> Outcome {
    let boxes = coco_like_boxes(10_000, 0);
    let cal = calibrate_ec(0.82, 0.16, &boxes, 0, NoiseFrame::Image).unwrap();
    let fresh = ec_iou_stats(&boxes, &NoiseModel::new(cal.noise.sigma_scale, 1).unwrap());
    let ok = |m: f64, s: f64| (m - 0.82).abs() <= 0.02 && (s - 0.16).abs() <= 0.03;
    outcome(
        ok(cal.achieved.mean, cal.achieved.std) && ok(fresh.mean, fresh.std),
        format!(
            "sigma {:.5}: mean {:.4} std {:.4} (fresh noise: mean {:.4} std {:.4})",
            cal.noise.sigma_scale, cal.achieved.mean, cal.achieved.std, fresh.mean, fresh.std
        ),
    )
}

// ------------------------------------------------------------------ 7

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let t0: Vec<f64> = (0..64).map(|_| rng.gen_range(-10.0..10.0)).collect();
    let s = ParamVector::new((0..64).map(|_| rng.gen_range(-10.0..10.0)).collect()).unwrap();
    let k = 0.9996;
    let mut t = ParamVector::new(t0.clone()).unwrap();
    let mut worst = 0.0f64;
    for step in 1..=10_000 {
        ema_update(&mut t, &s, k).unwrap();
        let decay = k.powi(step);
        for ((v, a), b) in t.values.iter().zip(&t0).zip(&s.values) {
            worst = worst.max((v - (b + decay * (a - b))).abs());
        }
    }
    let mut zero = ParamVector::new(t0.clone()).unwrap();
    ema_update(&mut zero, &s, 0.0).unwrap();
    let mut one = ParamVector::new(t0.clone()).unwrap();
    for _ in 0..100 {
        ema_update(&mut one, &s, 1.0).unwrap();
    }
    let endpoints = zero.values == s.values && one.values == t0;
    outcome(
        worst <= 1e-9 && endpoints,
        format!("max deviation {worst:.2e} over 10^4 steps; endpoints exact: {endpoints}"),
    )
}

// ------------------------------------------------------------------ 8

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let cfg = LossConfig::default();
    let (mut bad, mut trials) = (Vec::new(), 0);
    let random_box = |rng: &mut ChaCha8Rng| {
        BoundingBox::clamped(
            rng.gen_range(0.2..0.8),
            rng.gen_range(0.2..0.8),
            rng.gen_range(0.05..0.4),
            rng.gen_range(0.05..0.4),
        )
        .unwrap()
    };
    for trial in 0..200 {
        trials += 1;
        let c = rng.gen_range(1..6);
        let class = rng.gen_range(0..c);
        let label = random_box(&mut rng);
        let start = random_box(&mut rng);
        let logits = Matrix::from_fn(1, c, |_, _| rng.gen_range(-3.0..3.0));
        let mut prev = f64::INFINITY;
        for step in 0..=10 {
            let t = step as f64 / 10.0;
            let pred = TeacherPrediction::new(0, logits.clone(), vec![start.lerp(&label, t)]).unwrap();
            let out = eval_loss(&pred, &[(label, class)], &cfg).unwrap();
            if (out.total - (2.0 * out.cls + 5.0 * out.bbox)).abs() > 1e-9 {
                bad.push(format!("total@{trial}"));
            }
            if out.bbox >= prev {
                bad.push(format!("monotone@{trial}/{step}"));
            }
            if step == 10 && out.bbox.abs() > 1e-12 {
                bad.push(format!("endpoint@{trial}"));
            }
            prev = out.bbox;
        }

        // Several labels, each with an exact confident prediction among decoys.
        let labels: Vec<(BoundingBox, ClassId)> = (0..3).map(|_| (random_box(&mut rng), rng.gen_range(0..c))).collect();
        let mut boxes: Vec<BoundingBox> = labels.iter().map(|(b, _)| *b).collect();
        boxes.extend((0..4).map(|_| random_box(&mut rng)));
        let logits = Matrix::from_fn(7, c, |q, k| if q < 3 && k == labels[q].1 { 12.0 } else { -12.0 });
        let pred = TeacherPrediction::new(0, logits, boxes).unwrap();
        let out = eval_loss(&pred, &labels, &cfg).unwrap();
        if out.bbox.abs() > 1e-12 || (out.total - (2.0 * out.cls + 5.0 * out.bbox)).abs() > 1e-9 {
            bad.push(format!("perfect@{trial}"));
        }
    }
    outcome(
        bad.is_empty(),
        format!("{trials} trials x 11 interpolation points, {} failures {:?}", bad.len(), &bad[..bad.len().min(5)]),
    )
}

// ------------------------------------------------------------------ 9

const GOLDEN_SEED: u64 = 2024;
const GOLDEN_QUERIES: usize = 10;
const GOLDEN_CLASSES: usize = 5;

fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests").join("golden")
}

/// The 50-image pipeline, serialized once per weak format.
fn golden_outputs(matcher: Matcher) -> Vec<(LabelFormat, String)> {
    let full = synthetic_fully(50, GOLDEN_CLASSES, 4, GOLDEN_SEED).unwrap();
    let sizes: ImageSizes = full.keys().map(|&id| (id, (640.0, 480.0))).collect();
    let cfg = FilterConfig {
        matcher,
        ..FilterConfig::default()
    };
    LabelFormat::WEAK
        .into_iter()
        .map(|format| {
            let sets: BTreeMap<u64, PseudoLabelSet> = full
                .iter()
                .map(|(&id, gt)| {
                    let pred = synthetic_teacher(id, gt, GOLDEN_QUERIES, GOLDEN_CLASSES, GOLDEN_SEED).unwrap();
                    let label = downgrade(&OmniLabel::Fully(gt.clone()), format, GOLDEN_SEED ^ id).unwrap();
                    (id, unified_filter(&pred, &label, &cfg).unwrap())
                })
                .collect();
            (format, pseudo_to_string(&sets, &sizes, None).unwrap())
        })
        .collect()
}

fn criterion_9() -> Outcome {
    let mut bad = Vec::new();
    for (format, text) in golden_outputs(Matcher::Hungarian) {
        let path = golden_dir().join(format!("unified_{format}.json"));
        match std::fs::read_to_string(&path) {
            Ok(golden) if golden == text => {}
            Ok(_) => bad.push(format!("{format}: differs")),
            Err(e) => bad.push(format!("{format}: {e}")),
        }
    }
    outcome(
        bad.is_empty(),
        format!("{}/6 formats byte-identical to goldens {bad:?}", 6 - bad.len()),
    )
}

fn bless() {
    std::fs::create_dir_all(golden_dir()).unwrap();
    for (format, text) in golden_outputs(Matcher::BruteForce) {
        let path = golden_dir().join(format!("unified_{format}.json"));
        std::fs::write(&path, text).unwrap();
        println!("wrote {}", path.display());
    }
}

// ----------------------------------------------------------------- main

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed())
}

fn main() {
    if std::env::var_os("OMNILABEL_BLESS").is_some() {
        bless();
    }
    // A libtest-style filter argument (e.g. from `cargo test foo`) that
    // names nothing here skips the suite.
    let args: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if !args.is_empty() && !args.iter().any(|a| "acceptance".contains(a.as_str())) {
        return;
    }

    let mut results: Vec<(&str, &str, Outcome, Duration, Option<Duration>)> = Vec::new();
    let mut push = |id, name, (o, d): (Outcome, Duration), limit| results.push((id, name, o, d, limit));
    push("1", "cost-model exactness", timed(criterion_1), Some(Duration::from_secs(1)));
    push("2", "budget exactness", timed(criterion_2), Some(Duration::from_secs(1)));
    push("3", "matching oracle equivalence", timed(criterion_3), Some(Duration::from_secs(30)));
    let ((four, five), d45) = timed(criteria_4_5);
    push("4", "filter invariant suite", (four, d45), Some(Duration::from_secs(120)));
    push("5", "objective dominance", (five, d45), Some(Duration::from_secs(120)));
    push("6", "EC simulator calibration", timed(criterion_6), Some(Duration::from_secs(60)));
    push("7", "EMA contraction", timed(criterion_7), None);
    push("8", "loss sanity", timed(criterion_8), None);
    push("9", "end-to-end golden pipeline", timed(criterion_9), None);

    let (mut failed, mut expected) = (0, 0);
    for (id, name, o, d, limit) in &results {
        let in_time = limit.is_none_or(|l| *d <= l);
        let pass = o.pass && in_time;
        failed += usize::from(!pass);
        expected += usize::from(!pass && in_time && o.expected_failure);
        let budget = limit.map_or(String::new(), |l| format!(" / limit {:.0?}", l));
        println!(
            "[{}] criterion {id} {name}: {} ({:.2?}{budget})",
            if pass { "PASS" } else { "FAIL" },
            o.detail,
            d
        );
    }
    println!(
        "acceptance: {} passed, {failed} failed ({expected} only on known table inconsistencies)",
        results.len() - failed
    );
    if failed > expected {
        std::process::exit(1);
    }
}
