//! Synthetic moving-object videos with exact ground truth, the on-disk
//! corpus layout, and motion-cache precomputation.

mod archive;
mod corpus;
mod pngio;
mod scene;

pub use archive::{
    decode_ground_truth, encode_ground_truth, read_ground_truth, write_ground_truth, GT_MAGIC, GT_VERSION,
};
pub use corpus::{
    build_corpus, cache_path, frame_file_name, load_motion, precompute_motion, video_motion, CorpusConfig, Dataset,
    Manifest, PrecomputeReport, Split, VideoRecord, MANIFEST_FILE,
};
pub use pngio::{encode_png, read_png, write_png};
pub use scene::{add_camera_pan, generate, GroundTruth, ObjectSpec, SceneConfig, SceneSpec, Shape, DIRECTIONS};
