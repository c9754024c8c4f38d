//! Knowledge-injection workflow over Wikipedia "Did You Know" facts.
//!
//! The crate is organised as one module per pipeline stage:
//!
//! - [`corpus`]: parse DYK archive pages into [`corpus::FactRecord`]s and persist them.
//! - [`qagen`]: drive a generator backend with the question prompts.
//! - [`corpusbuilder`]: emit NTP, synthetic-QA and span-prediction training corpora.
//! - [`clusterer`]: diagonal-covariance GMM fitted by EM, plus chronological blocks.
//! - [`scoperouter`]: scope-classifier data, query scoring and routing with deferral.
//! - [`backends`]: completion / embedding / classifier clients and in-process mocks.
//! - [`ragstore`]: exact cosine retrieval index and RAG prompt assembly.
//! - [`evalharness`]: substring match and token F1 scoring, reports.
//! - [`synthetic`]: seeded invented facts for fixtures and demos.
//!
//! Data-parallel inner loops go through [`par`], which uses rayon when the
//! `parallel` feature is enabled (the default) and plain iterators otherwise.
//! Both paths produce bit-identical results.

pub mod backends;
pub mod clusterer;
pub mod corpus;
pub mod corpusbuilder;
pub mod evalharness;
pub mod jsonl;
pub mod par;
pub mod qagen;
pub mod ragstore;
pub mod scoperouter;
pub mod synthetic;
pub mod wikitext;

pub use backends::{BackendError, BackendKind, BackendSpec};
pub use clusterer::{ClusterAssignment, ClusterKind, GmmParams};
pub use corpus::{DateWindow, FactRecord};
pub use evalharness::{EvalRecord, EvalReport};
pub use qagen::{Dimension, QAItem};
pub use scoperouter::{Decision, RouteDecision};
