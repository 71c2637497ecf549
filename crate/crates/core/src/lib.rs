//! Local-to-global contrastive pretraining of Vision Transformers.
//!
//! The crate holds the encoder ([`vit`]), the two-view augmentation pipeline
//! ([`augmentation`]), the contrastive objectives ([`contrastive`]), the
//! pretraining loop ([`engine`]), dense fine-tuning heads ([`finetune`]),
//! evaluation metrics ([`metrics`]) and the dataset plumbing ([`data`]).

pub mod augmentation;
pub mod checkpoint;
pub mod config;
pub mod contrastive;
pub mod data;
pub mod engine;
pub mod error;
pub mod finetune;
pub mod image;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod vit;

pub use error::{Error, Result};
