//! JSON codecs: COCO-style annotations, teacher predictions (JSONL),
//! omni-labels, pseudo-labels, dataset stats and parameter snapshots.
//!
//! Every emitted file carries a `format_version`. Floats are written in the
//! shortest form that parses back to the same `f64`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::annotation::{ClassId, LabelFormat, OmniLabel};
use crate::budget::DatasetStats;
use crate::ema::ParamVector;
use crate::error::{Error, Result};
use crate::filtering::{PseudoLabel, PseudoLabelSet};
use crate::geometry::{BoundingBox, Point2D};
use crate::matrix::Matrix;
use crate::prediction::TeacherPrediction;

pub const FORMAT_VERSION: u32 = 1;

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_reader(BufReader::new(file))?)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------- COCO

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageInfo {
    pub id: u64,
    pub width: u32,
    pub height: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file_name: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryInfo {
    pub id: u64,
    #[serde(default)]
    pub name: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusAnnotation {
    pub id: u64,
    pub image_id: u64,
    pub category_id: u64,
    /// Dense class index.
    pub class_id: ClassId,
    /// Pixel `[x, y, w, h]` as read.
    pub bbox_px: [f64; 4],
    pub bbox: BoundingBox,
}

/// An annotation record that was skipped during loading.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RejectedRecord {
    pub annotation_id: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    pub images: BTreeMap<u64, ImageInfo>,
    /// Sorted by category id; position is the dense class index.
    pub categories: Vec<CategoryInfo>,
    pub category_table: BTreeMap<u64, ClassId>,
    pub annotations: BTreeMap<u64, Vec<CorpusAnnotation>>,
    pub rejected: Vec<RejectedRecord>,
}

#[derive(Deserialize)]
struct RawAnnotation {
    id: u64,
    image_id: u64,
    category_id: u64,
    bbox: [f64; 4],
}

#[derive(Deserialize)]
struct RawCoco {
    images: Vec<ImageInfo>,
    categories: Vec<CategoryInfo>,
    annotations: Vec<RawAnnotation>,
}

impl Corpus {
    fn from_raw(raw: RawCoco) -> Result<Self> {
        let mut images = BTreeMap::new();
        for img in raw.images {
            if img.width == 0 || img.height == 0 {
                return Err(Error::InvalidInput(format!("image {} has zero size", img.id)));
            }
            let id = img.id;
            if images.insert(id, img).is_some() {
                return Err(Error::InvalidInput(format!("duplicate image id {id}")));
            }
        }
        let mut categories = raw.categories;
        categories.sort_by_key(|c| c.id);
        if let Some(w) = categories.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(Error::InvalidInput(format!("duplicate category id {}", w[0].id)));
        }
        let category_table: BTreeMap<u64, ClassId> =
            categories.iter().enumerate().map(|(i, c)| (c.id, i)).collect();

        let mut annotations: BTreeMap<u64, Vec<CorpusAnnotation>> =
            images.keys().map(|&id| (id, Vec::new())).collect();
        let mut rejected = Vec::new();
        for a in raw.annotations {
            let img = images.get(&a.image_id).ok_or(Error::UnknownImage {
                annotation: a.id,
                image_id: a.image_id,
            })?;
            let class_id = *category_table.get(&a.category_id).ok_or(Error::UnknownCategory {
                annotation: a.id,
                category_id: a.category_id,
            })?;
            match BoundingBox::from_pixel_xywh(a.bbox, img.width as f64, img.height as f64) {
                Ok(bbox) => annotations.entry(a.image_id).or_default().push(CorpusAnnotation {
                    id: a.id,
                    image_id: a.image_id,
                    category_id: a.category_id,
                    class_id,
                    bbox_px: a.bbox,
                    bbox,
                }),
                Err(e) => rejected.push(RejectedRecord {
                    annotation_id: a.id,
                    reason: e.to_string(),
                }),
            }
        }
        for list in annotations.values_mut() {
            list.sort_by_key(|a| a.id);
        }
        if !rejected.is_empty() {
            log::warn!("rejected {} malformed annotations", rejected.len());
        }
        Ok(Self {
            images,
            categories,
            category_table,
            annotations,
            rejected,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.categories.len()
    }

    /// Category id for each dense class index.
    pub fn category_ids(&self) -> Vec<u64> {
        self.categories.iter().map(|c| c.id).collect()
    }

    pub fn image_sizes(&self) -> ImageSizes {
        self.images
            .values()
            .map(|i| (i.id, (i.width as f64, i.height as f64)))
            .collect()
    }

    /// Full annotation of one image; empty for images without boxes.
    pub fn fully_label(&self, image_id: u64) -> Option<OmniLabel> {
        self.annotations
            .get(&image_id)
            .map(|v| OmniLabel::Fully(v.iter().map(|a| (a.bbox, a.class_id)).collect()))
    }

    /// Builds a corpus from normalized full labels, with pixel boxes computed
    /// for the given image sizes.
    pub fn from_labels(
        images: Vec<ImageInfo>,
        categories: Vec<CategoryInfo>,
        labels: &BTreeMap<u64, Vec<(BoundingBox, ClassId)>>,
    ) -> Result<Self> {
        let mut cat_sorted = categories.clone();
        cat_sorted.sort_by_key(|c| c.id);
        let mut next_id = 1;
        let mut annotations = Vec::new();
        let sizes: BTreeMap<u64, (u32, u32)> = images.iter().map(|i| (i.id, (i.width, i.height))).collect();
        for (&image_id, list) in labels {
            let &(w, h) = sizes.get(&image_id).ok_or(Error::UnknownImage {
                annotation: next_id,
                image_id,
            })?;
            for (bbox, class) in list {
                let cat = cat_sorted.get(*class).ok_or(Error::ClassOutOfRange {
                    class: *class,
                    num_classes: cat_sorted.len(),
                })?;
                annotations.push(RawAnnotation {
                    id: next_id,
                    image_id,
                    category_id: cat.id,
                    bbox: bbox.to_pixel_xywh(w as f64, h as f64),
                });
                next_id += 1;
            }
        }
        Self::from_raw(RawCoco {
            images,
            categories,
            annotations,
        })
    }
}

pub fn load_coco(path: impl AsRef<Path>) -> Result<Corpus> {
    Corpus::from_raw(read_json(path.as_ref())?)
}

pub fn parse_coco(json: &str) -> Result<Corpus> {
    Corpus::from_raw(serde_json::from_str(json)?)
}

fn coco_value(corpus: &Corpus) -> Value {
    let annotations: Vec<Value> = corpus
        .annotations
        .values()
        .flatten()
        .map(|a| {
            json!({
                "id": a.id,
                "image_id": a.image_id,
                "category_id": a.category_id,
                "bbox": a.bbox_px,
                "area": a.bbox_px[2] * a.bbox_px[3],
                "iscrowd": 0,
            })
        })
        .collect();
    json!({
        "format_version": FORMAT_VERSION,
        "images": corpus.images.values().collect::<Vec<_>>(),
        "categories": corpus.categories,
        "annotations": annotations,
    })
}

pub fn coco_to_string(corpus: &Corpus) -> Result<String> {
    Ok(serde_json::to_string_pretty(&coco_value(corpus))? + "\n")
}

pub fn save_coco(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    write_json(path.as_ref(), &coco_value(corpus))
}

// ---------------------------------------------------------- predictions

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    #[serde(default = "default_version")]
    pub format_version: u32,
    pub image_id: u64,
    #[serde(rename = "K")]
    pub num_queries: usize,
    #[serde(rename = "C")]
    pub num_classes: usize,
    pub logits: Vec<Vec<f64>>,
    pub boxes_cxcywh: Vec<[f64; 4]>,
}

fn default_version() -> u32 {
    FORMAT_VERSION
}

impl PredictionRecord {
    pub fn from_prediction(p: &TeacherPrediction) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            image_id: p.image_id(),
            num_queries: p.num_queries(),
            num_classes: p.num_classes(),
            logits: p.logits().to_rows(),
            boxes_cxcywh: p.boxes().iter().map(|b| b.cxcywh()).collect(),
        }
    }

    pub fn into_prediction(self) -> Result<TeacherPrediction> {
        let id = self.image_id;
        if self.logits.len() != self.num_queries
            || self.boxes_cxcywh.len() != self.num_queries
            || self.logits.iter().any(|r| r.len() != self.num_classes)
        {
            return Err(Error::Dimension(format!(
                "image {id}: arrays do not match K={} C={}",
                self.num_queries, self.num_classes
            )));
        }
        let logits = Matrix::from_rows(&self.logits)
            .ok_or_else(|| Error::Dimension(format!("image {id}: ragged logits")))?;
        let boxes = self
            .boxes_cxcywh
            .iter()
            .map(|&[cx, cy, w, h]| BoundingBox::new(cx, cy, w, h))
            .collect::<Result<Vec<_>>>()?;
        TeacherPrediction::new(id, logits, boxes)
    }
}

/// Streams predictions one line at a time. Blank lines are skipped.
pub struct PredictionReader<R> {
    lines: std::io::Lines<R>,
    line_no: usize,
}

impl<R: BufRead> PredictionReader<R> {
    pub fn new(reader: R) -> Self {
        Self {
            lines: reader.lines(),
            line_no: 0,
        }
    }
}

impl<R: BufRead> Iterator for PredictionReader<R> {
    type Item = Result<TeacherPrediction>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = self.lines.next()?;
            self.line_no += 1;
            let line = match line {
                Ok(l) => l,
                Err(e) => return Some(Err(Error::io(format!("<line {}>", self.line_no), e))),
            };
            if line.trim().is_empty() {
                continue;
            }
            let n = self.line_no;
            return Some(
                serde_json::from_str::<PredictionRecord>(&line)
                    .map_err(Error::from)
                    .and_then(PredictionRecord::into_prediction)
                    .map_err(|e| Error::InvalidInput(format!("prediction line {n}: {e}"))),
            );
        }
    }
}

pub fn open_predictions(path: impl AsRef<Path>) -> Result<PredictionReader<BufReader<File>>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(PredictionReader::new(BufReader::new(file)))
}

pub fn load_predictions(path: impl AsRef<Path>) -> Result<Vec<TeacherPrediction>> {
    open_predictions(path)?.collect()
}

pub fn save_predictions(preds: &[TeacherPrediction], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for p in preds {
        serde_json::to_writer(&mut w, &PredictionRecord::from_prediction(p))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

// ----------------------------------------------------------- omni-labels

#[derive(Serialize, Deserialize)]
struct LabelRecord {
    image_id: u64,
    format: LabelFormat,
    payload: Value,
}

#[derive(Serialize, Deserialize)]
struct LabelFile {
    format_version: u32,
    labels: Vec<LabelRecord>,
}

fn payload_of(label: &OmniLabel) -> Value {
    let boxes = |v: &[BoundingBox]| v.iter().map(|b| b.cxcywh().to_vec()).collect::<Vec<_>>();
    match label {
        OmniLabel::None => json!([]),
        OmniLabel::TagsU(t) => json!(t),
        OmniLabel::TagsK(t) => json!(t.iter().map(|&(c, n)| [c, n]).collect::<Vec<_>>()),
        OmniLabel::PointsU(p) => json!(p.iter().map(|p| [p.px(), p.py()]).collect::<Vec<_>>()),
        OmniLabel::PointsK(p) => json!(p
            .iter()
            .map(|(p, c)| json!([p.px(), p.py(), c]))
            .collect::<Vec<_>>()),
        OmniLabel::BoxesU(b) | OmniLabel::BoxesEc(b) => json!(boxes(b)),
        OmniLabel::Fully(v) => json!(v
            .iter()
            .map(|(b, c)| {
                let [cx, cy, w, h] = b.cxcywh();
                json!([cx, cy, w, h, c])
            })
            .collect::<Vec<_>>()),
    }
}

fn label_from(format: LabelFormat, payload: Value) -> Result<OmniLabel> {
    fn class(v: f64) -> Result<ClassId> {
        if v >= 0.0 && v.fract() == 0.0 {
            Ok(v as ClassId)
        } else {
            Err(Error::InvalidInput(format!("class id {v} is not a non-negative integer")))
        }
    }
    let bbox = |r: &[f64]| BoundingBox::new(r[0], r[1], r[2], r[3]);
    let rows = |n: usize| -> Result<Vec<Vec<f64>>> {
        let rows: Vec<Vec<f64>> = serde_json::from_value(payload.clone())?;
        if let Some(r) = rows.iter().find(|r| r.len() != n) {
            return Err(Error::InvalidInput(format!(
                "{format} payload entries need {n} numbers, got {}",
                r.len()
            )));
        }
        Ok(rows)
    };
    Ok(match format {
        LabelFormat::None => OmniLabel::None,
        LabelFormat::TagsU => OmniLabel::TagsU(serde_json::from_value(payload)?),
        LabelFormat::TagsK => OmniLabel::TagsK(serde_json::from_value(payload)?),
        LabelFormat::PointsU => OmniLabel::PointsU(
            rows(2)?
                .iter()
                .map(|r| Point2D::new(r[0], r[1]))
                .collect::<Result<_>>()?,
        ),
        LabelFormat::PointsK => OmniLabel::PointsK(
            rows(3)?
                .iter()
                .map(|r| Ok((Point2D::new(r[0], r[1])?, class(r[2])?)))
                .collect::<Result<_>>()?,
        ),
        LabelFormat::BoxesU => OmniLabel::BoxesU(rows(4)?.iter().map(|r| bbox(r)).collect::<Result<_>>()?),
        LabelFormat::BoxesEc => OmniLabel::BoxesEc(rows(4)?.iter().map(|r| bbox(r)).collect::<Result<_>>()?),
        LabelFormat::Fully => OmniLabel::Fully(
            rows(5)?
                .iter()
                .map(|r| Ok((bbox(r)?, class(r[4])?)))
                .collect::<Result<_>>()?,
        ),
    })
}

pub fn labels_to_string(labels: &BTreeMap<u64, OmniLabel>) -> Result<String> {
    let file = LabelFile {
        format_version: FORMAT_VERSION,
        labels: labels
            .iter()
            .map(|(&image_id, l)| LabelRecord {
                image_id,
                format: l.format(),
                payload: payload_of(l),
            })
            .collect(),
    };
    Ok(serde_json::to_string_pretty(&file)? + "\n")
}

pub fn labels_from_str(json: &str) -> Result<BTreeMap<u64, OmniLabel>> {
    let file: LabelFile = serde_json::from_str(json)?;
    let mut out = BTreeMap::new();
    for rec in file.labels {
        let label = label_from(rec.format, rec.payload)
            .map_err(|e| Error::InvalidInput(format!("label for image {}: {e}", rec.image_id)))?;
        if out.insert(rec.image_id, label).is_some() {
            return Err(Error::InvalidInput(format!("duplicate label for image {}", rec.image_id)));
        }
    }
    Ok(out)
}

pub fn load_labels(path: impl AsRef<Path>) -> Result<BTreeMap<u64, OmniLabel>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    labels_from_str(&text)
}

pub fn save_labels(labels: &BTreeMap<u64, OmniLabel>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, labels_to_string(labels)?).map_err(|e| Error::io(path, e))
}

// --------------------------------------------------------- pseudo-labels

/// Image id to pixel `(width, height)`.
pub type ImageSizes = BTreeMap<u64, (f64, f64)>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PseudoRecord {
    id: u64,
    image_id: u64,
    category_id: u64,
    /// Pixel `[x, y, w, h]`.
    bbox: [f64; 4],
    /// Normalized box, kept so reloading is exact.
    bbox_cxcywh: [f64; 4],
    score: f64,
    source_query: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gt_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    matched_cost: Option<f64>,
    #[serde(default)]
    infeasible: bool,
}

#[derive(Serialize, Deserialize)]
struct PseudoFile {
    format_version: u32,
    images: Vec<u64>,
    annotations: Vec<PseudoRecord>,
}

/// Serializes pseudo-labels as COCO-style annotations. Images missing from
/// `sizes` are treated as 1x1 (pixel boxes equal normalized ones).
/// `category_ids[c]` maps dense class `c` back to a category id; identity
/// when absent.
pub fn pseudo_to_string(
    labels: &BTreeMap<u64, PseudoLabelSet>,
    sizes: &ImageSizes,
    category_ids: Option<&[u64]>,
) -> Result<String> {
    let mut annotations = Vec::new();
    for (&image_id, set) in labels {
        let (w, h) = sizes.get(&image_id).copied().unwrap_or((1.0, 1.0));
        for p in &set.items {
            let category_id = match category_ids {
                Some(ids) => *ids.get(p.class_id).ok_or(Error::ClassOutOfRange {
                    class: p.class_id,
                    num_classes: ids.len(),
                })?,
                None => p.class_id as u64,
            };
            annotations.push(PseudoRecord {
                id: annotations.len() as u64 + 1,
                image_id,
                category_id,
                bbox: p.bbox.to_pixel_xywh(w, h),
                bbox_cxcywh: p.bbox.cxcywh(),
                score: p.score,
                source_query: p.source_query,
                gt_index: p.gt_index,
                matched_cost: p.matched_cost,
                infeasible: p.infeasible,
            });
        }
    }
    let file = PseudoFile {
        format_version: FORMAT_VERSION,
        images: labels.keys().copied().collect(),
        annotations,
    };
    Ok(serde_json::to_string_pretty(&file)? + "\n")
}

pub fn pseudo_from_str(json: &str, category_ids: Option<&[u64]>) -> Result<BTreeMap<u64, PseudoLabelSet>> {
    let file: PseudoFile = serde_json::from_str(json)?;
    let lookup: Option<BTreeMap<u64, ClassId>> =
        category_ids.map(|ids| ids.iter().enumerate().map(|(i, &c)| (c, i)).collect());
    let mut out: BTreeMap<u64, PseudoLabelSet> =
        file.images.iter().map(|&id| (id, PseudoLabelSet::default())).collect();
    for r in file.annotations {
        let class_id = match &lookup {
            Some(m) => *m.get(&r.category_id).ok_or(Error::UnknownCategory {
                annotation: r.id,
                category_id: r.category_id,
            })?,
            None => r.category_id as ClassId,
        };
        let [cx, cy, w, h] = r.bbox_cxcywh;
        out.entry(r.image_id).or_default().items.push(PseudoLabel {
            bbox: BoundingBox::new(cx, cy, w, h)?,
            class_id,
            score: r.score,
            source_query: r.source_query,
            gt_index: r.gt_index,
            matched_cost: r.matched_cost,
            infeasible: r.infeasible,
        });
    }
    Ok(out)
}

pub fn save_pseudo(
    labels: &BTreeMap<u64, PseudoLabelSet>,
    sizes: &ImageSizes,
    category_ids: Option<&[u64]>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, pseudo_to_string(labels, sizes, category_ids)?).map_err(|e| Error::io(path, e))
}

pub fn load_pseudo(path: impl AsRef<Path>, category_ids: Option<&[u64]>) -> Result<BTreeMap<u64, PseudoLabelSet>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    pseudo_from_str(&text, category_ids)
}

// ------------------------------------------------------ stats and params

pub fn load_stats(path: impl AsRef<Path>) -> Result<DatasetStats> {
    let stats: DatasetStats = read_json(path.as_ref())?;
    stats.validate()?;
    Ok(stats)
}

pub fn save_stats(stats: &DatasetStats, path: impl AsRef<Path>) -> Result<()> {
    let mut v = serde_json::to_value(stats)?;
    v["format_version"] = json!(FORMAT_VERSION);
    write_json(path.as_ref(), &v)
}

#[derive(Serialize, Deserialize)]
struct ParamFile {
    format_version: u32,
    version: u64,
    values: Vec<f64>,
}

pub fn load_params(path: impl AsRef<Path>) -> Result<ParamVector> {
    let f: ParamFile = read_json(path.as_ref())?;
    let mut p = ParamVector::new(f.values)?;
    p.version = f.version;
    Ok(p)
}

pub fn save_params(params: &ParamVector, path: impl AsRef<Path>) -> Result<()> {
    write_json(
        path.as_ref(),
        &ParamFile {
            format_version: FORMAT_VERSION,
            version: params.version,
            values: params.values.clone(),
        },
    )
}
