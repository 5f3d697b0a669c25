//! Corpus-construction toolkit for studying emerging concepts in company
//! discourse.
//!
//! The crate covers the whole collection chain: a polite per-domain crawler,
//! an annual-report harvester, HTML text extraction, an offline rank-order
//! language identifier, keyword-anchored snippet extraction, sector-level
//! n-gram / TF-IDF term weighting and a context-block dataset builder. The
//! [`pipeline`] module wires these into restartable stages with run manifests.

pub mod crawler;
pub mod dataset;
pub mod extractor;
pub mod harvest;
pub mod langid;
pub mod pipeline;
pub mod registry;
pub mod store;
pub mod termlab;
pub mod util;

pub use registry::{CompanyEntry, SectorList};
