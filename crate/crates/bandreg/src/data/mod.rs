//! Synthetic corpus generation, ground-truth labeling, and dataset I/O.

mod bulleye;
mod dataset;

pub use bulleye::{
    gen_bulleye, pair_indices, render_bulleye, BullEye, BullEyeParams, LABEL_INNER, LABEL_RING,
};
pub use dataset::{
    load_dataset, make_labels, save_dataset, Dataset, ExcludedPair, ImagePair, LabeledPair,
    PairDiagnostics, Provenance, SplitSpec,
};
