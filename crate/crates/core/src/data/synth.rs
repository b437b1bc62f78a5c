//! Toy scenes of coloured shapes with captions stating true spatial
//! relations, used in place of a real captioning corpus.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::tensor::Tensor;

use super::detections::{DetectionSet, MAX_OBJECTS, SCORE_THRESHOLD};

/// Centers must differ by more than this along an axis for a relation to be stated.
pub const RELATION_MARGIN: f64 = 0.05;

const COLOR_SEED: u64 = 0x5eed_c010;
const SHAPE_SEED: u64 = 0x5eed_5a9e;
const BOX_SEED: u64 = 0x5eed_b0c5;
const BOX_SIGNAL_SCALE: f64 = 0.5;
const MAX_RESAMPLES: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Color {
    Red,
    Green,
    Blue,
    Yellow,
}

impl Color {
    pub const ALL: [Color; 4] = [Color::Red, Color::Green, Color::Blue, Color::Yellow];

    pub fn name(self) -> &'static str {
        match self {
            Color::Red => "red",
            Color::Green => "green",
            Color::Blue => "blue",
            Color::Yellow => "yellow",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shape {
    Square,
    Circle,
    Triangle,
}

impl Shape {
    pub const ALL: [Shape; 3] = [Shape::Square, Shape::Circle, Shape::Triangle];

    pub fn name(self) -> &'static str {
        match self {
            Shape::Square => "square",
            Shape::Circle => "circle",
            Shape::Triangle => "triangle",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SceneObject {
    pub color: Color,
    pub shape: Shape,
    pub bbox: BoundingBox,
    pub score: f64,
}

impl SceneObject {
    fn phrase(&self) -> String {
        format!("a {} {}", self.color.name(), self.shape.name())
    }
}

/// Captions for a scene, most canonical first:
/// leftmost vs rightmost object ("left of" / "right of"), then topmost vs
/// bottommost ("above" / "below"). Relations are only stated when the
/// centers differ by more than [`RELATION_MARGIN`].
pub fn describe_scene(objects: &[SceneObject]) -> Vec<String> {
    let mut captions = Vec::new();
    let Some(first) = objects.first() else {
        return captions;
    };
    let extreme = |key: fn(&SceneObject) -> f64| {
        let mut lo = first;
        let mut hi = first;
        for o in objects {
            if key(o) < key(lo) {
                lo = o;
            }
            if key(o) > key(hi) {
                hi = o;
            }
        }
        (lo, hi)
    };
    let (left, right) = extreme(|o| o.bbox.cx);
    if right.bbox.cx - left.bbox.cx > RELATION_MARGIN {
        captions.push(format!("{} left of {}", left.phrase(), right.phrase()));
        captions.push(format!("{} right of {}", right.phrase(), left.phrase()));
    }
    let (top, bottom) = extreme(|o| o.bbox.cy);
    if bottom.bbox.cy - top.bbox.cy > RELATION_MARGIN {
        captions.push(format!("{} above {}", top.phrase(), bottom.phrase()));
        captions.push(format!("{} below {}", bottom.phrase(), top.phrase()));
    }
    if captions.is_empty() {
        captions.push(first.phrase());
    }
    captions
}

fn fixed_table(seed: u64, rows: usize, cols: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..rows)
        .map(|_| (0..cols).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect()
}

/// Visual feature for one object: fixed colour and shape embeddings plus a
/// small fixed projection of its box. Values are rounded to `f32` so they
/// survive the detections file format unchanged.
fn object_features(objects: &[SceneObject], d_feat: usize) -> Vec<f64> {
    let colors = fixed_table(COLOR_SEED, Color::ALL.len(), d_feat);
    let shapes = fixed_table(SHAPE_SEED, Shape::ALL.len(), d_feat);
    let proj = fixed_table(BOX_SEED, 4, d_feat);
    let mut out = Vec::with_capacity(objects.len() * d_feat);
    for o in objects {
        let ci = Color::ALL.iter().position(|&c| c == o.color).unwrap();
        let si = Shape::ALL.iter().position(|&s| s == o.shape).unwrap();
        let b = &o.bbox;
        let geo = [2.0 * (b.cx - 0.5), 2.0 * (b.cy - 0.5), 5.0 * (b.w - 0.14), 5.0 * (b.h - 0.14)];
        for k in 0..d_feat {
            let signal: f64 = geo.iter().zip(&proj).map(|(g, p)| g * p[k]).sum();
            let v = colors[ci][k] + shapes[si][k] + BOX_SIGNAL_SCALE * signal;
            out.push(v as f32 as f64);
        }
    }
    out
}

fn well_separated(objects: &[SceneObject]) -> bool {
    objects.iter().enumerate().all(|(i, a)| {
        objects[i + 1..].iter().all(|b| {
            (a.bbox.cx - b.bbox.cx).abs() > RELATION_MARGIN && (a.bbox.cy - b.bbox.cy).abs() > RELATION_MARGIN
        })
    })
}

/// One deterministic scene with `num_objects` objects whose centers are
/// pairwise separated by more than [`RELATION_MARGIN`] on both axes.
pub fn synth_scene(seed: u64, num_objects: usize, d_feat: usize) -> Result<(DetectionSet, Vec<String>)> {
    if num_objects == 0 || num_objects > MAX_OBJECTS || num_objects > 8 {
        return Err(Error::Config(format!("synthetic scenes hold 1..=8 objects, asked for {num_objects}")));
    }
    if d_feat == 0 {
        return Err(Error::Config("d_feat must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut objects = Vec::with_capacity(num_objects);
    for _ in 0..MAX_RESAMPLES {
        objects.clear();
        for _ in 0..num_objects {
            let color = Color::ALL[rng.random_range(0..Color::ALL.len())];
            let shape = Shape::ALL[rng.random_range(0..Shape::ALL.len())];
            let bbox = BoundingBox::new(
                rng.random_range(0.1..0.9),
                rng.random_range(0.1..0.9),
                rng.random_range(0.08..0.2),
                rng.random_range(0.08..0.2),
            );
            let score = rng.random_range(SCORE_THRESHOLD..=1.0);
            objects.push(SceneObject { color, shape, bbox, score });
        }
        if well_separated(&objects) {
            break;
        }
    }
    let features = Tensor::new(vec![num_objects, d_feat], object_features(&objects, d_feat))?;
    let set = DetectionSet::new(
        format!("synth-{seed}"),
        objects.iter().map(|o| o.bbox).collect(),
        objects.iter().map(|o| o.score).collect(),
        features,
    )?;
    Ok((set, describe_scene(&objects)))
}

/// `scenes` scenes with 2 to 6 objects each; per-scene seeds and sizes are
/// drawn from `seed`.
pub fn synth_corpus(seed: u64, scenes: usize, d_feat: usize) -> Result<Vec<(DetectionSet, Vec<String>)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..scenes)
        .map(|_| {
            let scene_seed: u64 = rng.random();
            let n = rng.random_range(2..=6);
            synth_scene(scene_seed, n, d_feat)
        })
        .collect()
}
