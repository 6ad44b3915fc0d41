//! Annotation files, image preprocessing, synthetic tables and batching.

mod collate;
mod image;
mod jsonl;
mod synth;

pub use collate::{
    collate, collate_encoded, encode_sample, Batch, CollateConfig, EncodedSample, SeqLimits, Vocabs, CELL_VOCAB_FILE,
    STRUCTURE_VOCAB_FILE, TOKENIZER_FILE,
};
pub use image::{denormalize_bbox, normalize_bboxes, preprocess_image, standardize, BBox, GrayImage, ScaleRecord};
pub use jsonl::{
    load_jsonl_dataset, write_jsonl, Annotation, CellAnnotation, HtmlAnnotation, JsonlDataset, StructureAnnotation,
    TableSample,
};
pub use synth::{generate_synthetic_table, glyph_code, synth_corpus, SynthConfig};
