//! Lifelog moment retrieval: blur filtering, embedding search, event
//! segmentation, query expansion, reranking and evaluation.

pub mod config;
pub mod corpus;
pub mod embedding;
pub mod eval;
pub mod events;
pub mod fixture;
mod http;
pub mod pipeline;
pub mod rerank;
pub mod retrieval;
pub mod rewrite;

pub use http::HttpError;
