//! Extraction of structured eligibility criteria from clinical trial text.

pub mod aggregator;
pub mod attribute_cfg;
pub mod config;
pub mod entity_linker;
pub mod entity_tagger;
pub mod eval;
pub mod knowledge_base;
pub mod pipeline;
pub mod preprocessor;
pub mod relation_extractor;
