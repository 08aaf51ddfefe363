//! Scenes: synthetic plane scenes with exact ground truth, manifests, LLFF
//! import and image codecs.

mod image;
mod llff;
mod manifest;
mod synthetic;

pub use image::{decode_jpeg, decode_png, decode_ppm, encode_ppm, read_image, write_image, ImageBuffer};
pub use llff::{
    average_pose, encode_npy, export_llff, import_llff, import_llff_to_manifest, parse_npy, pose_distance,
    LLFF_TEST_EVERY, NEAR_BOUND_FACTOR, POSES_FILE,
};
pub use manifest::{
    generate_synthetic, write_synthetic, LoadedScene, SceneManifest, Split, ViewEntry, MANIFEST_FILE, SYNTHETIC_FILE,
};
pub use synthetic::{oracle_lightfield, render_oracle, SyntheticScene, SyntheticSpec, Texture, TexturedPlane};
