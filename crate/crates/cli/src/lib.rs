//! Experiment harness for `aprox-core`: sweep configuration and execution,
//! CSV and SVG output, and the lower-bound laboratory.

pub mod config;
pub mod lab;
pub mod report;
pub mod svg;
pub mod sweep;
pub mod table;

pub use config::{load_config, parse_config, preset, ConfigError, Method, MethodSpec, ProblemSpec, SweepConfig};
pub use sweep::{execute_sweep, CellResult, CellStatus, SweepResult};
pub use table::{read_csv, write_csv, write_profile_csv, write_speedup_csv};
