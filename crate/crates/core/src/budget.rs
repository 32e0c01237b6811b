//! Human annotation time per image for each label format, and the cost of
//! mixing formats over a dataset.
//!
//! Per-image seconds, with `C` categories, `C_avg` categories per image and
//! `I_avg` instances per image:
//!
//! | format  | multi-class                                   | single-class      |
//! |---------|-----------------------------------------------|-------------------|
//! | TagsU   | `C`                                           | not applicable    |
//! | TagsK   | `C + I_avg - C_avg`                           | `0.95 * PointsK`  |
//! | PointsU | `0.9 I_avg`                                   | same              |
//! | PointsK | `(C - C_avg) + 2.4 C_avg + 0.9 (I_avg - C_avg)` | `0.9 I_avg`     |
//! | BoxesEC | `7 I_avg`                                     | same              |
//! | BoxesU  | `35 I_avg`                                    | same              |
//! | Fully   | `(C - C_avg) + 35 I_avg`                      | `35 I_avg`        |

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::annotation::LabelFormat;
use crate::error::{Error, Result};

/// Seconds to tag one category (present or absent).
const TAG_SECONDS: f64 = 1.0;
/// Seconds per point click.
const POINT_SECONDS: f64 = 0.9;
/// Seconds to click the first instance of a class.
const FIRST_POINT_SECONDS: f64 = 2.4;
/// Seconds per count annotation.
const COUNT_SECONDS: f64 = 1.0;
/// Seconds per extreme-clicking box.
const EC_BOX_SECONDS: f64 = 7.0;
/// Seconds per high-quality box.
const BOX_SECONDS: f64 = 35.0;
/// Ratio of counted-tag cost to keyed-point cost, averaged over the
/// multi-class datasets and applied to single-class ones.
pub const SINGLE_CLASS_TAGS_K_FACTOR: f64 = 0.95;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub name: String,
    /// Total number of categories.
    #[serde(rename = "C")]
    pub num_classes: u32,
    /// Average categories per image.
    #[serde(rename = "C_avg")]
    pub avg_classes: f64,
    /// Average instances per image.
    #[serde(rename = "I_avg")]
    pub avg_instances: f64,
    /// Training images used for budget planning, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_images: Option<u64>,
}

impl DatasetStats {
    pub fn new(name: impl Into<String>, num_classes: u32, avg_classes: f64, avg_instances: f64) -> Result<Self> {
        let stats = Self {
            name: name.into(),
            num_classes,
            avg_classes,
            avg_instances,
            train_images: None,
        };
        stats.validate()?;
        Ok(stats)
    }

    pub fn with_train_images(mut self, n: u64) -> Self {
        self.train_images = Some(n);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 1 {
            return Err(Error::InvalidInput(format!("{}: C must be >= 1", self.name)));
        }
        if !(self.avg_classes > 0.0 && self.avg_classes <= self.num_classes as f64) {
            return Err(Error::InvalidInput(format!(
                "{}: C_avg {} must be in (0, C]",
                self.name, self.avg_classes
            )));
        }
        if !(self.avg_instances.is_finite() && self.avg_instances >= self.avg_classes) {
            return Err(Error::InvalidInput(format!(
                "{}: I_avg {} must be >= C_avg",
                self.name, self.avg_instances
            )));
        }
        Ok(())
    }

    pub fn single_class(&self) -> bool {
        self.num_classes == 1
    }
}

/// Statistics of the five reference datasets, with their training-set
/// sizes for budget planning.
pub fn builtin_profiles() -> Vec<DatasetStats> {
    let p = |name: &str, c, ca, ia, n| {
        DatasetStats::new(name, c, ca, ia)
            .expect("built-in stats are valid")
            .with_train_images(n)
    };
    vec![
        p("bees", 1, 1.0, 7.14, 3596),
        p("crowdhuman", 1, 1.0, 22.64, 15000),
        p("voc", 20, 1.4, 2.4, 22136),
        p("coco", 80, 3.5, 7.7, 118287),
        p("objects365", 365, 5.0, 15.8, 93455),
    ]
}

pub fn builtin_profile(name: &str) -> Option<DatasetStats> {
    let key = name.to_ascii_lowercase();
    builtin_profiles().into_iter().find(|p| p.name == key)
}

/// Estimated annotation seconds per image.
pub fn cost_per_image(stats: &DatasetStats, format: LabelFormat) -> Result<f64> {
    let c = stats.num_classes as f64;
    let ca = stats.avg_classes;
    let ia = stats.avg_instances;
    let single = stats.single_class();
    let points_k = if single {
        POINT_SECONDS * ia
    } else {
        TAG_SECONDS * (c - ca) + FIRST_POINT_SECONDS * ca + POINT_SECONDS * (ia - ca)
    };
    let seconds = match format {
        LabelFormat::None => 0.0,
        LabelFormat::TagsU if single => {
            return Err(Error::Unsupported(format!(
                "tags_u is not defined for single-class dataset {}",
                stats.name
            )))
        }
        LabelFormat::TagsU => TAG_SECONDS * c,
        LabelFormat::TagsK if single => SINGLE_CLASS_TAGS_K_FACTOR * points_k,
        LabelFormat::TagsK => TAG_SECONDS * (c - ca) + COUNT_SECONDS * ca + COUNT_SECONDS * (ia - ca),
        LabelFormat::PointsU => POINT_SECONDS * ia,
        LabelFormat::PointsK => points_k,
        LabelFormat::BoxesEc => EC_BOX_SECONDS * ia,
        LabelFormat::BoxesU => BOX_SECONDS * ia,
        LabelFormat::Fully if single => BOX_SECONDS * ia,
        LabelFormat::Fully => TAG_SECONDS * (c - ca) + BOX_SECONDS * ia,
    };
    Ok(seconds)
}

/// Fractions of a dataset annotated in each format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixturePolicy {
    pub fractions: BTreeMap<LabelFormat, f64>,
    pub dataset_size: u64,
}

impl MixturePolicy {
    pub fn new(fractions: impl IntoIterator<Item = (LabelFormat, f64)>, dataset_size: u64) -> Result<Self> {
        let policy = Self {
            fractions: fractions.into_iter().collect(),
            dataset_size,
        };
        policy.validate()?;
        Ok(policy)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some((f, v)) = self.fractions.iter().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidInput(format!("fraction for {f} is {v}, outside [0, 1]")));
        }
        let sum: f64 = self.fractions.values().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidInput(format!("fractions sum to {sum}, not 1")));
        }
        Ok(())
    }

    pub fn fraction(&self, format: LabelFormat) -> f64 {
        self.fractions.get(&format).copied().unwrap_or(0.0)
    }
}

/// Total annotation hours for a policy.
pub fn policy_cost(policy: &MixturePolicy, stats: &DatasetStats) -> Result<f64> {
    policy.validate()?;
    let size = policy.dataset_size as f64;
    let mut seconds = 0.0;
    for (&format, &fraction) in &policy.fractions {
        if fraction > 0.0 {
            seconds += size * fraction * cost_per_image(stats, format)?;
        }
    }
    Ok(seconds / 3600.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicyCandidate {
    pub policy: MixturePolicy,
    pub cost_hours: f64,
}

/// Every grid policy over `formats` (remainder left unannotated) whose cost
/// is at most `budget_hours` plus 1%. Sorted by Fully fraction (descending),
/// then cost (descending).
pub fn enumerate_policies(
    stats: &DatasetStats,
    budget_hours: f64,
    formats: &[LabelFormat],
    step: f64,
    dataset_size: u64,
) -> Result<Vec<PolicyCandidate>> {
    let mut formats: Vec<LabelFormat> = formats.iter().copied().filter(|f| *f != LabelFormat::None).collect();
    formats.sort();
    formats.dedup();
    if formats.is_empty() {
        return Err(Error::InvalidInput("no annotation formats to mix".into()));
    }
    if !(budget_hours.is_finite() && budget_hours >= 0.0) {
        return Err(Error::InvalidInput(format!("budget {budget_hours} must be >= 0")));
    }
    if !(step > 0.0 && step <= 1.0) {
        return Err(Error::InvalidInput(format!("step {step} must be in (0, 1]")));
    }
    let units = (1.0 / step).round() as usize;
    if (units as f64 * step - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidInput(format!("step {step} does not divide 1")));
    }
    let unit_hours: Vec<f64> = formats
        .iter()
        .map(|&f| Ok(dataset_size as f64 * cost_per_image(stats, f)? / units as f64 / 3600.0))
        .collect::<Result<_>>()?;
    let limit = budget_hours * 1.01 + 1e-9;

    let mut out = Vec::new();
    let mut counts = vec![0usize; formats.len()];
    fn rec(
        idx: usize,
        remaining: usize,
        hours: f64,
        counts: &mut Vec<usize>,
        unit_hours: &[f64],
        limit: f64,
        found: &mut Vec<(Vec<usize>, f64)>,
    ) {
        if hours > limit {
            return;
        }
        if idx == counts.len() {
            found.push((counts.clone(), hours));
            return;
        }
        for n in 0..=remaining {
            counts[idx] = n;
            let h = hours + n as f64 * unit_hours[idx];
            if h > limit {
                break;
            }
            rec(idx + 1, remaining - n, h, counts, unit_hours, limit, found);
        }
        counts[idx] = 0;
    }
    let mut found = Vec::new();
    rec(0, units, 0.0, &mut counts, &unit_hours, limit, &mut found);

    for (counts, _) in found {
        let used: usize = counts.iter().sum();
        let mut fractions: BTreeMap<LabelFormat, f64> = formats
            .iter()
            .zip(&counts)
            .filter(|(_, &n)| n > 0)
            .map(|(&f, &n)| (f, n as f64 / units as f64))
            .collect();
        if used < units {
            fractions.insert(LabelFormat::None, (units - used) as f64 / units as f64);
        }
        let policy = MixturePolicy {
            fractions,
            dataset_size,
        };
        let cost_hours = policy_cost(&policy, stats)?;
        out.push(PolicyCandidate { policy, cost_hours });
    }
    out.sort_by(|a, b| {
        let fa = a.policy.fraction(LabelFormat::Fully);
        let fb = b.policy.fraction(LabelFormat::Fully);
        fb.total_cmp(&fa).then(b.cost_hours.total_cmp(&a.cost_hours))
    });
    Ok(out)
}

/// One row of the per-image cost table, rounded to one decimal for display.
/// `None` marks formats that do not apply to the dataset.
pub fn cost_table_row(stats: &DatasetStats) -> Vec<(LabelFormat, Option<f64>)> {
    LabelFormat::ALL
        .into_iter()
        .filter(|f| *f != LabelFormat::None)
        .map(|f| (f, cost_per_image(stats, f).ok()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profile(name: &str) -> DatasetStats {
        builtin_profile(name).unwrap()
    }

    #[test]
    fn headline_cells() {
        let coco = cost_per_image(&profile("coco"), LabelFormat::PointsK).unwrap();
        assert!((coco - 88.7).abs() <= 0.05);
        let o365 = cost_per_image(&profile("objects365"), LabelFormat::Fully).unwrap();
        assert!((o365 - 913.0).abs() <= 0.05);
        let bees = cost_per_image(&profile("bees"), LabelFormat::TagsK).unwrap();
        assert!((bees - 6.1).abs() <= 0.05);
    }

    #[test]
    fn single_class_rules() {
        let bees = profile("bees");
        assert!(matches!(cost_per_image(&bees, LabelFormat::TagsU), Err(Error::Unsupported(_))));
        assert_eq!(
            cost_per_image(&bees, LabelFormat::PointsK).unwrap(),
            cost_per_image(&bees, LabelFormat::PointsU).unwrap()
        );
        assert_eq!(
            cost_per_image(&bees, LabelFormat::Fully).unwrap(),
            cost_per_image(&bees, LabelFormat::BoxesU).unwrap()
        );
    }

    #[test]
    fn worked_example() {
        let policy = MixturePolicy::new(
            [(LabelFormat::Fully, 0.05), (LabelFormat::TagsK, 0.8), (LabelFormat::BoxesEc, 0.15)],
            3596,
        )
        .unwrap();
        let h = policy_cost(&policy, &profile("bees")).unwrap();
        assert!((h - 24.85).abs() < 0.005, "{h}");
        assert_eq!(h.round(), 25.0);
    }

    #[test]
    fn all_none_is_free_and_bad_sums_fail() {
        let none = MixturePolicy::new([(LabelFormat::None, 1.0)], 1000).unwrap();
        assert_eq!(policy_cost(&none, &profile("coco")).unwrap(), 0.0);
        assert!(MixturePolicy::new([(LabelFormat::Fully, 0.5)], 10).is_err());
        assert!(MixturePolicy::new([(LabelFormat::Fully, 1.5), (LabelFormat::None, -0.5)], 10).is_err());
    }

    #[test]
    fn cost_is_linear() {
        let stats = profile("voc");
        let p = |size, a: f64| {
            MixturePolicy::new([(LabelFormat::Fully, a), (LabelFormat::PointsU, 1.0 - a)], size).unwrap()
        };
        let one = policy_cost(&p(1000, 0.3), &stats).unwrap();
        let three = policy_cost(&p(3000, 0.3), &stats).unwrap();
        assert!((three - 3.0 * one).abs() < 1e-9);
        let lo = policy_cost(&p(1000, 0.2), &stats).unwrap();
        let hi = policy_cost(&p(1000, 0.4), &stats).unwrap();
        assert!((one - (lo + hi) / 2.0).abs() < 1e-9);
    }

    #[test]
    fn enumeration_edges() {
        let bees = profile("bees");
        let formats = [LabelFormat::Fully, LabelFormat::TagsK, LabelFormat::BoxesEc];
        let zero = enumerate_policies(&bees, 0.0, &formats, 0.1, 3596).unwrap();
        assert_eq!(zero.len(), 1);
        assert_eq!(zero[0].policy.fraction(LabelFormat::None), 1.0);

        let full = policy_cost(&MixturePolicy::new([(LabelFormat::Fully, 1.0)], 3596).unwrap(), &bees).unwrap();
        let all = enumerate_policies(&bees, full, &formats, 0.1, 3596).unwrap();
        assert_eq!(all[0].policy.fraction(LabelFormat::Fully), 1.0);

        assert!(enumerate_policies(&bees, 10.0, &[], 0.1, 3596).is_err());
        assert!(enumerate_policies(&bees, 10.0, &formats, 0.3, 3596).is_err());
        assert!(enumerate_policies(&bees, 10.0, &[LabelFormat::TagsU], 0.5, 3596).is_err());
    }

    #[test]
    fn stats_validation() {
        assert!(DatasetStats::new("x", 0, 1.0, 1.0).is_err());
        assert!(DatasetStats::new("x", 5, 6.0, 7.0).is_err());
        assert!(DatasetStats::new("x", 5, 2.0, 1.0).is_err());
        let json = r#"{"name":"coco","C":80,"C_avg":3.5,"I_avg":7.7}"#;
        let s: DatasetStats = serde_json::from_str(json).unwrap();
        assert_eq!(s, DatasetStats::new("coco", 80, 3.5, 7.7).unwrap());
    }
}
