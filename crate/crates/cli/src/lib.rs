//! IO companion for the dispatch engine: the TOML case-file format, trace and
//! summary documents, and the command implementations behind the `mtsed`
//! binary.

pub mod caseio;
pub mod commands;
pub mod report;
