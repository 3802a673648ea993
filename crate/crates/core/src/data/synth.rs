//! Procedural scenes of flat-colored shapes with templated, grounded
//! questions. Objects never touch, so every pixel mask is exact.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use super::record::{GroundingBox, QaRecord, SemanticType};
use super::rle::RleMask;
use crate::array::Array;
use crate::error::{Error, Result};
use crate::metrics::BinaryMask;
use crate::rng::{derive_seed, seeded};

/// Upper bound on objects per scene, matching the slot budget.
pub const MAX_OBJECTS: usize = 7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum ShapeKind {
    Square,
    Disk,
    Triangle,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 3] = [ShapeKind::Square, ShapeKind::Disk, ShapeKind::Triangle];

    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Square => "square",
            ShapeKind::Disk => "disk",
            ShapeKind::Triangle => "triangle",
        }
    }

    pub fn plural(self) -> String {
        format!("{}s", self.name())
    }

    /// Whether pixel `(r, c)` of a `size x size` box belongs to the shape.
    pub fn covers(self, r: usize, c: usize, size: usize) -> bool {
        let s = size as f64;
        let (y, x) = (r as f64 + 0.5, c as f64 + 0.5);
        match self {
            ShapeKind::Square => true,
            ShapeKind::Disk => {
                let (dy, dx) = (y - s / 2.0, x - s / 2.0);
                dy * dy + dx * dx <= s * s / 4.0
            }
            // apex at the top, base along the bottom row
            ShapeKind::Triangle => libm::fabs(x - s / 2.0) <= y / 2.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Color {
    Red,
    Green,
    Blue,
    Yellow,
    Magenta,
    Cyan,
}

impl Color {
    pub const ALL: [Color; 6] = [
        Color::Red,
        Color::Green,
        Color::Blue,
        Color::Yellow,
        Color::Magenta,
        Color::Cyan,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Color::Red => "red",
            Color::Green => "green",
            Color::Blue => "blue",
            Color::Yellow => "yellow",
            Color::Magenta => "magenta",
            Color::Cyan => "cyan",
        }
    }

    pub fn rgb(self) -> [u8; 3] {
        match self {
            Color::Red => [220, 40, 40],
            Color::Green => [40, 200, 60],
            Color::Blue => [50, 70, 230],
            Color::Yellow => [230, 220, 40],
            Color::Magenta => [210, 50, 210],
            Color::Cyan => [40, 210, 220],
        }
    }
}

pub const BACKGROUND: [u8; 3] = [24, 24, 24];

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SynthConfig {
    pub rows: usize,
    pub cols: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    pub min_size: usize,
    pub max_size: usize,
    pub shapes: Vec<ShapeKind>,
    pub palette: Vec<Color>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            rows: 32,
            cols: 32,
            min_objects: 2,
            max_objects: 4,
            min_size: 7,
            max_size: 11,
            shapes: ShapeKind::ALL.to_vec(),
            palette: Color::ALL.to_vec(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.max_objects > MAX_OBJECTS {
            return bad(format!(
                "{} objects per scene exceeds the budget of {}",
                self.max_objects, MAX_OBJECTS
            ));
        }
        if self.min_objects == 0 || self.min_objects > self.max_objects {
            return bad(format!(
                "object range {}..={} is empty or starts at 0",
                self.min_objects, self.max_objects
            ));
        }
        if self.min_size < 3 || self.min_size > self.max_size {
            return bad(format!(
                "size range {}..={} is invalid (minimum 3)",
                self.min_size, self.max_size
            ));
        }
        if self.max_size > self.rows.min(self.cols) {
            return bad(format!(
                "objects of size {} do not fit a {}x{} image",
                self.max_size, self.rows, self.cols
            ));
        }
        if self.shapes.is_empty() || self.palette.len() < 2 {
            return bad("need at least one shape and two colors".to_string());
        }
        // each object reserves its box plus a one-pixel gap on two sides
        let need = self.max_objects * (self.max_size + 1) * (self.max_size + 1);
        if need > self.rows * self.cols {
            return bad(format!(
                "{} objects of size {} cannot be placed disjointly in {}x{}",
                self.max_objects, self.max_size, self.rows, self.cols
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SynthObject {
    pub shape: ShapeKind,
    pub color: Color,
    pub row: usize,
    pub col: usize,
    pub size: usize,
}

impl SynthObject {
    pub fn mask(&self, rows: usize, cols: usize) -> BinaryMask {
        BinaryMask::from_fn(rows, cols, |r, c| {
            r >= self.row
                && c >= self.col
                && r < self.row + self.size
                && c < self.col + self.size
                && self.shape.covers(r - self.row, c - self.col, self.size)
        })
    }

    pub fn bounding_box(&self) -> GroundingBox {
        let s = self.size as f64;
        GroundingBox {
            x: self.col as f64,
            y: self.row as f64,
            w: s,
            h: s,
        }
    }

    fn overlaps_with_gap(&self, other: &SynthObject) -> bool {
        let apart = self.row + self.size < other.row
            || other.row + other.size < self.row
            || self.col + self.size < other.col
            || other.col + other.size < self.col;
        !apart
    }
}

/// 8-bit RGB raster, row-major and interleaved.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

impl RgbImage {
    /// `rows x cols x 3` with channels scaled to `[0, 1]`.
    pub fn to_array(&self) -> Array {
        let data = self.pixels.iter().map(|&p| p as f64 / 255.0).collect();
        Array::new([self.rows, self.cols, 3], data).expect("pixel count matches")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthScene {
    pub id: String,
    pub image: RgbImage,
    pub objects: Vec<SynthObject>,
    pub questions: Vec<QaRecord>,
}

impl SynthScene {
    pub fn object_masks(&self) -> Vec<BinaryMask> {
        self.objects
            .iter()
            .map(|o| o.mask(self.image.rows, self.image.cols))
            .collect()
    }
}

fn render(objects: &[SynthObject], rows: usize, cols: usize) -> RgbImage {
    let mut pixels = Vec::with_capacity(rows * cols * 3);
    for _ in 0..rows * cols {
        pixels.extend_from_slice(&BACKGROUND);
    }
    for o in objects {
        let mask = o.mask(rows, cols);
        let rgb = o.color.rgb();
        for r in 0..rows {
            for c in 0..cols {
                if mask.get(r, c) {
                    pixels[(r * cols + c) * 3..(r * cols + c + 1) * 3].copy_from_slice(&rgb);
                }
            }
        }
    }
    RgbImage { rows, cols, pixels }
}

fn place(
    config: &SynthConfig,
    rng: &mut crate::rng::SeededRng,
    count: usize,
) -> Option<Vec<SynthObject>> {
    let mut objects: Vec<SynthObject> = Vec::with_capacity(count);
    for _ in 0..count {
        let mut placed = false;
        for _ in 0..200 {
            let size = rng.random_range(config.min_size..=config.max_size);
            let cand = SynthObject {
                shape: config.shapes[rng.random_range(0..config.shapes.len())],
                color: config.palette[rng.random_range(0..config.palette.len())],
                row: rng.random_range(0..=config.rows - size),
                col: rng.random_range(0..=config.cols - size),
                size,
            };
            if objects.iter().all(|o| !o.overlaps_with_gap(&cand)) {
                objects.push(cand);
                placed = true;
                break;
            }
        }
        if !placed {
            return None;
        }
    }
    Some(objects)
}

fn question(
    scene: &str,
    j: usize,
    text: String,
    answer: String,
    grounded: &[&SynthObject],
    semantic_type: SemanticType,
    grid: (usize, usize),
) -> QaRecord {
    QaRecord {
        question_id: format!("{}-q{}", scene, j),
        image_id: scene.to_string(),
        question: text,
        answer,
        image_size: grid,
        grounding_boxes: grounded.iter().map(|o| o.bounding_box()).collect(),
        grounding_masks: grounded
            .iter()
            .map(|o| RleMask::encode(&o.mask(grid.0, grid.1)))
            .collect(),
        semantic_type,
    }
}

/// Existence (one "yes", one "no"), count and, when a shape is unique,
/// color questions for one object list.
fn questions_for(
    scene: &str,
    objects: &[SynthObject],
    config: &SynthConfig,
    rng: &mut crate::rng::SeededRng,
) -> Vec<QaRecord> {
    let grid = (config.rows, config.cols);
    let mut out = Vec::new();

    let pick = &objects[rng.random_range(0..objects.len())];
    let same: Vec<&SynthObject> = objects
        .iter()
        .filter(|o| o.shape == pick.shape && o.color == pick.color)
        .collect();
    out.push(question(
        scene,
        out.len(),
        format!("is there a {} {}", pick.color.name(), pick.shape.name()),
        "yes".to_string(),
        &same,
        SemanticType::Object,
        grid,
    ));

    // a negative about a present shape in an absent color, grounded on
    // the objects of that shape
    let shape = objects[rng.random_range(0..objects.len())].shape;
    let mut absent: Vec<Color> = config
        .palette
        .iter()
        .copied()
        .filter(|c| !objects.iter().any(|o| o.shape == shape && o.color == *c))
        .collect();
    absent.shuffle(rng);
    if let Some(color) = absent.first() {
        let of_shape: Vec<&SynthObject> = objects.iter().filter(|o| o.shape == shape).collect();
        out.push(question(
            scene,
            out.len(),
            format!("is there a {} {}", color.name(), shape.name()),
            "no".to_string(),
            &of_shape,
            SemanticType::Object,
            grid,
        ));
    }

    let shape = objects[rng.random_range(0..objects.len())].shape;
    let of_shape: Vec<&SynthObject> = objects.iter().filter(|o| o.shape == shape).collect();
    out.push(question(
        scene,
        out.len(),
        format!("how many {} are there", shape.plural()),
        of_shape.len().to_string(),
        &of_shape,
        SemanticType::Category,
        grid,
    ));

    let unique: Vec<&SynthObject> = objects
        .iter()
        .filter(|o| objects.iter().filter(|p| p.shape == o.shape).count() == 1)
        .collect();
    if !unique.is_empty() {
        let o = unique[rng.random_range(0..unique.len())];
        out.push(question(
            scene,
            out.len(),
            format!("what color is the {}", o.shape.name()),
            o.color.name().to_string(),
            &[o],
            SemanticType::Attribute,
            grid,
        ));
    }
    out
}

/// Generates `count` scenes. Scene `i` depends only on `(seed, i)`.
pub fn synth_scenes(config: &SynthConfig, count: usize, seed: u64) -> Result<Vec<SynthScene>> {
    config.validate()?;
    (0..count)
        .map(|i| {
            let id = format!("scene-{:05}", i);
            let mut rng = seeded(derive_seed(seed, &id));
            let n = rng.random_range(config.min_objects..=config.max_objects);
            // a crowded layout can paint itself into a corner; start over a few times
            let objects = (0..20)
                .find_map(|_| place(config, &mut rng, n))
                .ok_or_else(|| {
                    Error::InvalidConfig(format!(
                        "could not place {} disjoint objects in {}",
                        n, id
                    ))
                })?;
            let questions = questions_for(&id, &objects, config, &mut rng);
            Ok(SynthScene {
                image: render(&objects, config.rows, config.cols),
                id,
                objects,
                questions,
            })
        })
        .collect()
}

/// Answers a templated question from an object list alone.
pub fn derive_answer(question: &str, objects: &[SynthObject]) -> Result<String> {
    let words: Vec<&str> = question.split_whitespace().collect();
    let unknown = || Error::UnknownTokens(vec![question.to_string()]);
    let shape_named = |w: &str| ShapeKind::ALL.into_iter().find(|s| s.name() == w);
    let shape_plural = |w: &str| ShapeKind::ALL.into_iter().find(|s| s.plural() == w);
    let color_named = |w: &str| Color::ALL.into_iter().find(|c| c.name() == w);
    match words.as_slice() {
        ["is", "there", "a", color, shape] => {
            let (color, shape) = (
                color_named(color).ok_or_else(unknown)?,
                shape_named(shape).ok_or_else(unknown)?,
            );
            let hit = objects.iter().any(|o| o.color == color && o.shape == shape);
            Ok(if hit { "yes" } else { "no" }.to_string())
        }
        ["how", "many", shapes, "are", "there"] => {
            let shape = shape_plural(shapes).ok_or_else(unknown)?;
            Ok(objects
                .iter()
                .filter(|o| o.shape == shape)
                .count()
                .to_string())
        }
        ["what", "color", "is", "the", shape] => {
            let shape = shape_named(shape).ok_or_else(unknown)?;
            let mut of_shape = objects.iter().filter(|o| o.shape == shape);
            match (of_shape.next(), of_shape.next()) {
                (Some(o), None) => Ok(o.color.name().to_string()),
                _ => Err(Error::InvalidConfig(format!(
                    "\"{}\" has no unique referent",
                    question
                ))),
            }
        }
        _ => Err(unknown()),
    }
}

/// Every word the question templates can produce, sorted.
pub fn question_vocabulary() -> Vec<String> {
    let mut words: Vec<String> = [
        "is", "there", "a", "how", "many", "are", "what", "color", "the",
    ]
    .iter()
    .map(|w| w.to_string())
    .collect();
    words.extend(Color::ALL.iter().map(|c| c.name().to_string()));
    for s in ShapeKind::ALL {
        words.push(s.name().to_string());
        words.push(s.plural());
    }
    words.sort();
    words.dedup();
    words
}

/// Every answer the templates can produce: yes/no, counts and colors.
pub fn answer_vocabulary() -> Vec<String> {
    let mut answers = vec!["no".to_string(), "yes".to_string()];
    answers.extend((1..=MAX_OBJECTS).map(|n| n.to_string()));
    answers.extend(Color::ALL.iter().map(|c| c.name().to_string()));
    answers
}
