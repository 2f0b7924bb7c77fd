//! Experience-grounded web research: distill expert QA tuples into a
//! versioned base of cited, faceted rules, then use them to gate and plan
//! search queries.

pub mod canonicalize;
pub mod clustering;
pub mod config;
pub mod distill;
pub mod error;
pub mod evidence;
pub mod facets;
pub mod fixtures;
pub mod pipeline;
pub mod planner;
pub mod remote;
pub mod retrieval;
pub mod simeval;
pub mod store;
pub mod textmodel;
pub mod training;

pub use error::{Error, Result};
