//! Keyword-driven image crawler.

pub mod bloom;
pub mod extract;
pub mod fetch;
pub mod frontier;
pub mod imagestore;
pub mod robots;
pub mod url;
pub mod seeds;
pub mod simweb;
pub mod crawl;
