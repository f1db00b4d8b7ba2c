//! Front-end ingestion: segments, mask selection, bundles and the
//! synthetic-scene oracle.

mod bundle;
pub mod scenes;
mod segment;
mod synth;

pub use bundle::{
    decode_segments, encode_segments, load_bundle, read_masks, save_bundle, write_masks,
    FrameBundle, NORMAL_UNIT_TOL,
};
pub use segment::{
    mask_iou, primify, sample_queries, select_masks, split_connected, MaskCandidate,
    MaskSelection, Pixel, QuerySampling, Segment,
};
pub use synth::{synth_scene, value_noise, SceneObject, SceneSpec, Shape, SynthOutput, Texture};
