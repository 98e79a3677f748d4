//! Desk-scale toolkit for masked-language-model pre-training, NER and
//! document-level relation-extraction fine-tuning, and the matching
//! evaluation protocols.

pub mod config;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod finetune;
pub mod hpo;
pub mod io;
pub mod model;
pub mod ner;
pub mod numerics;
pub mod pretrain;
pub mod relation;
pub mod rng;
pub mod tokenizer;

pub use error::{Error, Result};
