//! Synthetic scenes, the dataset layout, oracle proposals and training
//! targets.

pub mod dataset;
pub mod font;
pub mod render;
pub mod targets;

pub use dataset::{
    gen_dataset, gen_image, load_annotations, thread_count, thread_pool, write_annotations, Annotation,
    AnnotationRecord, Dataset, DatasetConfig, GenSummary, Instance, InstanceRecord, Sample,
};
pub use font::GlyphFont;
pub use render::{render_word, Baseline, RenderedWord};
pub use targets::{
    make_training_example, oracle_proposals, recognition_crop, resample_instance, ProposalMode, TrainingExample,
};
