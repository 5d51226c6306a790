//! Embedding files, manifests, fold plans and synthetic corpora.

mod dataset;
mod split;
mod synth;

pub use dataset::{
    load_dataset, load_dataset_with_labels, read_embeddings, read_label_vocab, read_manifest,
    write_embeddings, write_label_vocab, write_manifest, EmbeddingDataset, ManifestRow,
    FORMAT_VERSION, MAGIC, MANIFEST_HEADER,
};
pub use split::{
    batches, stratified_kfold, stratified_kfold_labels, validation_split, FoldPlan,
    VALIDATION_FRACTION,
};
pub use synth::{synth_generate, SynthConfig};
