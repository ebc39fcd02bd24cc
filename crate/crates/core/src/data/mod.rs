//! Dataset construction: alignment across modalities, splits, client
//! partitioning, scenario masks, storage and a synthetic generator.

mod align;
mod mmtf;
mod sample;
mod scenario;
mod split;
mod store;
mod synth;

pub use align::align_by_label;
pub use mmtf::{
    decode_tensors, encode_tensors, encode_tensors_as, read_tensor_file, write_tensor_file, Dtype,
};
pub use sample::{AlignedDataset, AlignedSample, Labeled, LabeledTensor, Manifest};
pub use scenario::ScenarioId;
pub use split::{
    apply_scenario, make_shards, partition_clients, split_size, split_support_query,
    train_test_split, ClientShard,
};
pub use store::{load_dataset, read_labels, read_source, save_dataset, write_labels, MANIFEST_FILE};
pub use synth::{class_template, synth_generate, SynthConfig, IMAGE_INTENSITY_SCALE};
