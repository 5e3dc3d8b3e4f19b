//! Speculative decoding with a dynamically pruned draft vocabulary.
//!
//! The draft model only ever scores a small *active vocabulary*: a recency
//! window over a stream of candidate tokens seeded from the prompt and grown
//! by every draft/verify round. The rows of the draft LM head that the active
//! vocabulary needs are staged into a pre-allocated repack buffer by an
//! asynchronous copy worker, so the gather overlaps the first backbone call
//! of each round. Decoding is lossless: outputs are bit-identical to plain
//! autoregressive decoding with the target model.
//!
//! Modules mirror the pipeline: [`corpus`] (tokenization, frequencies),
//! [`models`] (toy count-based and linear-head LMs), [`stream`] (the
//! candidate stream and its window), [`gather`] (buffer + copy worker),
//! [`policy`] (how each round's active vocabulary is formed), [`engine`]
//! (draft/verify decode loop), [`metrics`] (latency model, acceptance and
//! coverage statistics), and [`harness`] (experiment orchestration for the
//! CLI).

pub mod bitmap;
pub mod corpus;
pub mod engine;
pub mod error;
pub mod gather;
pub mod harness;
pub mod metrics;
pub mod models;
pub mod policy;
pub mod select;
pub mod stream;
pub mod synth;

pub use error::{Error, Result};
