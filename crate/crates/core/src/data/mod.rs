//! Grounded question-answering records, mask encoding, the grounded-QA
//! filter and a synthetic scene generator with exact ground truth.

mod record;
mod rle;
pub mod synth;

pub use record::{
    box_coverage, box_union_area, filter_egqa, FilterOutcome, FilterRules, GroundingBox, QaRecord,
    RejectReason, SemanticType,
};
pub use rle::RleMask;
pub use synth::{synth_scenes, Color, RgbImage, ShapeKind, SynthConfig, SynthObject, SynthScene};
