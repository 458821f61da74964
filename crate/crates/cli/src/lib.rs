//! Experiment runner for `marginflow`: JSON configs in, CSV trajectories and
//! JSON summaries out, plus the numbered verification criteria.

pub mod bundled;
pub mod compare;
pub mod config;
pub mod criteria;
pub mod data_io;
pub mod error;
pub mod output;
pub mod run;
