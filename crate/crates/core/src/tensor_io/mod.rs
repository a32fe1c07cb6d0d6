//! On-disk formats: tensor blobs, model manifests and datasets.

mod blob;
mod dataset;
mod manifest;

pub use blob::{
    read_blob, read_packed, write_blob, write_packed, DType, PackedCodes, TensorBlob, MAGIC,
    VERSION,
};
pub use dataset::{load_dataset, load_idx, write_idx, Dataset, DatasetFormat, SyntheticSpec};
pub use manifest::{
    load_model, manifest_of, model_from_manifest, save_model, LayerSpec, ModelManifest,
    INPUT_NAME, MANIFEST_FILE,
};
