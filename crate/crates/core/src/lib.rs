//! Desk-scale toolkit for scalable AI-on-HPC benchmarking.
//!
//! The crate covers the whole benchmark pipeline:
//!
//! - [`arch_ir`]: static 3D-CNN architecture descriptions with shape inference
//! - [`cost_model`]: analytic add-multiply, FLOP, memory and intensity estimates
//! - [`arch_search`]: seeded cell sampling, the FLOP-range model filter and a
//!   channel-width solver that hits a FLOP target
//! - [`datagen`]: coordinator/worker synthetic cosmology data generation
//! - [`scaling_sim`]: analytic strong- and data-scaling simulation of
//!   data-parallel training
//! - [`micro_trainer`]: an exactly-instrumented tiny trainer used as the
//!   counting oracle for the cost model
//! - [`report`]: metric summary tables and CSV/text emission
//! - [`cli`]: the `scalebench` command-line front end

pub mod arch_ir;
pub mod arch_search;
pub mod cli;
pub mod cost_model;
pub mod datagen;
pub mod micro_trainer;
pub mod report;
pub mod rng;
pub mod scaling_sim;
pub mod units;
