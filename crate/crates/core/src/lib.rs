//! Data-side toolkit for quality-aware vision-language training corpora:
//! loading and validating records, box-aware spatial augmentation, question
//! augmentation, MOS quantization, corpus mixing, response parsing and the
//! leaderboard metrics.

pub mod corpus;
pub mod error;
pub mod fixture;
pub mod levels;
pub mod metrics;
pub mod mixer;
pub mod model;
pub mod parser;
pub mod perception;
pub mod rng;
pub mod scoring;
pub mod spatial;

pub use error::{Error, Result};
pub use levels::{QualityScale, QualityWord};
pub use model::{
    AnnotatedImage, DescriptionSample, DistortionBox, DistortionTaxonomy, GroundingRecord,
    McqSample, MosScore,
};
