//! Command-line front end for the `superband` simulator: configuration
//! loading with presets, run/oracle/compare/sweep/husimi commands, and the
//! on-disk formats (series CSV, run metadata JSON, raw field-sample dumps).

pub mod commands;
pub mod config;
pub mod io;
