//! Spectrum-based fault localization: run a project's tests one by one
//! under coverage (or read reports produced elsewhere), tally which lines
//! failing and passing tests executed, and rank lines by suspiciousness.
//!
//! ```no_run
//! let mut config = specfault::Config::new("path/to/project");
//! config.coverage_dir = Some("path/to/reports".into());
//! let report = specfault::run(&config)?;
//! for s in &report.ranked {
//!     println!("{} {}", s.location, s.score);
//! }
//! # Ok::<(), specfault::Error>(())
//! ```

pub mod bridge;
pub mod cli;
pub mod engine;
pub mod error;
pub mod export;
pub mod ingest;
pub mod model;
pub mod pipeline;
pub mod recovery;
pub mod runner;
pub mod syntax;

pub use error::Error;
pub use export::LocalizationReport;
pub use pipeline::{run, run_with, Config};
