//! Command-line driver for `bagssl-core`.
//!
//! Each subcommand reads a plain-text config, does one job and leaves its
//! artifacts plus the effective config in the output directory.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod app;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod factorization;
pub mod figures;
pub mod pretrain;
pub mod verify;
