//! Model files, golden traces and datasets.

mod idx;
mod nnfi;

pub use idx::{
    idx_bytes, load_idx, quantize_input, quantize_pixel, save_idx, IdxDataset, LabeledImage,
    IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC, IMAGE_SIDE,
};
pub use nnfi::{
    load_model, load_traces, model_from_bytes, model_to_bytes, save_model, save_traces,
    traces_from_bytes, traces_to_bytes, GoldenTrace, MAGIC, TRACE_TAG, VERSION,
};
