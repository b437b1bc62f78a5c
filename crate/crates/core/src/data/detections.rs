use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::tensor::Tensor;

/// Detections scoring below this are dropped on load.
pub const SCORE_THRESHOLD: f64 = 0.7;
/// Most objects kept per image.
pub const MAX_OBJECTS: usize = 78;

/// Objects detected in one image, with one visual feature row per box.
#[derive(Clone, Debug, PartialEq)]
pub struct DetectionSet {
    pub image_id: String,
    pub boxes: Vec<BoundingBox>,
    pub scores: Vec<f64>,
    pub features: Tensor,
}

impl DetectionSet {
    pub fn new(image_id: impl Into<String>, boxes: Vec<BoundingBox>, scores: Vec<f64>, features: Tensor) -> Result<Self> {
        let set = DetectionSet {
            image_id: image_id.into(),
            boxes,
            scores,
            features,
        };
        set.validate_shape()?;
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.matrix_dims().1
    }

    fn validate_shape(&self) -> Result<()> {
        if self.boxes.is_empty() {
            return Err(Error::EmptyDetections);
        }
        if self.scores.len() != self.boxes.len() || self.features.shape().len() != 2 || self.features.shape()[0] != self.boxes.len() {
            return Err(Error::Shape {
                op: "detection_set",
                msg: format!(
                    "{} boxes, {} scores, features {:?}",
                    self.boxes.len(),
                    self.scores.len(),
                    self.features.shape()
                ),
            });
        }
        for (i, b) in self.boxes.iter().enumerate() {
            b.validate(i)?;
        }
        Ok(())
    }

    /// Checks the invariants every loaded set satisfies under `filter`.
    pub fn validate(&self, filter: &DetectionFilter) -> Result<()> {
        self.validate_shape()?;
        if self.len() > filter.max_objects {
            return Err(Error::TooManyObjects {
                got: self.len(),
                max: filter.max_objects,
            });
        }
        if let Some(&s) = self.scores.iter().find(|&&s| s < filter.min_score || s > 1.0) {
            return Err(Error::Config(format!("score {s} outside [{}, 1]", filter.min_score)));
        }
        Ok(())
    }
}

/// On-disk form of one detections line.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub image_id: String,
    pub boxes: Vec<[f64; 4]>,
    pub scores: Vec<f64>,
    pub features: Vec<Vec<f32>>,
}

impl From<&DetectionSet> for DetectionRecord {
    fn from(set: &DetectionSet) -> Self {
        let (rows, _) = set.features.matrix_dims();
        DetectionRecord {
            image_id: set.image_id.clone(),
            boxes: set.boxes.iter().map(|b| [b.cx, b.cy, b.w, b.h]).collect(),
            scores: set.scores.clone(),
            features: (0..rows)
                .map(|r| set.features.row(r).iter().map(|&v| v as f32).collect())
                .collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetectionFilter {
    pub min_score: f64,
    pub max_objects: usize,
}

impl Default for DetectionFilter {
    fn default() -> Self {
        DetectionFilter {
            min_score: SCORE_THRESHOLD,
            max_objects: MAX_OBJECTS,
        }
    }
}

impl DetectionFilter {
    /// Threshold first, then cap: boxes scoring `>= min_score` survive; when
    /// more than `max_objects` remain the highest scoring are kept, ties going
    /// to the earlier record. Survivors keep their original order. `None`
    /// when nothing survives.
    pub fn apply(&self, record: DetectionRecord, source: &str, line: usize) -> Result<Option<DetectionSet>> {
        let parse_err = |msg: String| Error::Parse {
            path: source.to_owned(),
            line,
            msg,
        };
        let n = record.boxes.len();
        if record.scores.len() != n || record.features.len() != n {
            return Err(parse_err(format!(
                "{n} boxes but {} scores and {} feature rows",
                record.scores.len(),
                record.features.len()
            )));
        }
        let mut keep: Vec<usize> = (0..n).filter(|&i| record.scores[i] >= self.min_score).collect();
        if keep.len() > self.max_objects {
            keep.sort_by(|&a, &b| record.scores[b].total_cmp(&record.scores[a]).then(a.cmp(&b)));
            keep.truncate(self.max_objects);
            keep.sort_unstable();
        }
        if keep.is_empty() {
            return Ok(None);
        }
        let d_feat = record.features[keep[0]].len();
        if d_feat == 0 {
            return Err(parse_err("empty feature vector".into()));
        }
        let mut boxes = Vec::with_capacity(keep.len());
        let mut scores = Vec::with_capacity(keep.len());
        let mut feats = Vec::with_capacity(keep.len() * d_feat);
        for (k, &i) in keep.iter().enumerate() {
            let [cx, cy, w, h] = record.boxes[i];
            let b = BoundingBox::new(cx, cy, w, h);
            b.validate(k).map_err(|e| parse_err(e.to_string()))?;
            if !(0.0..=1.0).contains(&record.scores[i]) {
                return Err(parse_err(format!("score {} outside [0, 1]", record.scores[i])));
            }
            if record.features[i].len() != d_feat {
                return Err(parse_err(format!("feature row {i} has {} values, expected {d_feat}", record.features[i].len())));
            }
            boxes.push(b);
            scores.push(record.scores[i]);
            feats.extend(record.features[i].iter().map(|&v| v as f64));
        }
        let features = Tensor::new(vec![keep.len(), d_feat], feats)?;
        if !features.is_finite() {
            return Err(parse_err("non-finite feature value".into()));
        }
        Ok(Some(DetectionSet {
            image_id: record.image_id,
            boxes,
            scores,
            features,
        }))
    }
}

/// Streams filtered [`DetectionSet`]s from line-delimited JSON. Images left
/// with no boxes are skipped and counted in [`DetectionReader::skipped`].
pub struct DetectionReader<R> {
    lines: std::io::Lines<R>,
    source: String,
    line: usize,
    filter: DetectionFilter,
    skipped: usize,
}

impl<R: BufRead> DetectionReader<R> {
    pub fn new(reader: R, source: impl Into<String>, filter: DetectionFilter) -> Self {
        DetectionReader {
            lines: reader.lines(),
            source: source.into(),
            line: 0,
            filter,
            skipped: 0,
        }
    }

    pub fn skipped(&self) -> usize {
        self.skipped
    }
}

impl<R: BufRead> Iterator for DetectionReader<R> {
    type Item = Result<DetectionSet>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let raw = match self.lines.next()? {
                Ok(l) => l,
                Err(e) => return Some(Err(Error::io(&self.source, e))),
            };
            self.line += 1;
            if raw.trim().is_empty() {
                continue;
            }
            let record: DetectionRecord = match serde_json::from_str(&raw) {
                Ok(r) => r,
                Err(e) => {
                    return Some(Err(Error::Parse {
                        path: self.source.clone(),
                        line: self.line,
                        msg: format!("{e} (column {})", e.column()),
                    }))
                }
            };
            match self.filter.apply(record, &self.source, self.line) {
                Ok(Some(set)) => return Some(Ok(set)),
                Ok(None) => {
                    self.skipped += 1;
                    log::warn!("{}:{}: no detections survive filtering, image skipped", self.source, self.line);
                }
                Err(e) => return Some(Err(e)),
            }
        }
    }
}

#[derive(Debug)]
pub struct LoadedDetections {
    pub sets: Vec<DetectionSet>,
    pub skipped: usize,
}

pub fn read_detections(path: &Path, filter: DetectionFilter) -> Result<LoadedDetections> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = DetectionReader::new(BufReader::new(file), path.display().to_string(), filter);
    let sets = reader.by_ref().collect::<Result<Vec<_>>>()?;
    Ok(LoadedDetections {
        sets,
        skipped: reader.skipped(),
    })
}

/// Features are written as 32-bit decimals; boxes and scores at full precision.
pub fn write_detections<'a>(path: &Path, sets: impl IntoIterator<Item = &'a DetectionSet>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for set in sets {
        let line = serde_json::to_string(&DetectionRecord::from(set)).expect("detection record serialises");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
