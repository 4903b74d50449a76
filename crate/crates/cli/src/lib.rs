// `!(x > 0)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! File formats, configuration and stage orchestration behind the
//! `humanslam` command.

pub mod app;
pub mod config;
pub mod formats;
pub mod layout;
pub mod stages;

pub use app::run;
