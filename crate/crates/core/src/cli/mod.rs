//! Configuration-driven experiment harness behind the `misspec` binary.

mod config;
mod experiment;
mod sweep;
mod trace_csv;

pub use config::{
    AffineViSpec, EdispCostSpec, EdispDemandSpec, ExperimentConfig, ProblemSpec, QuadraticTestSpec, ScheduleSpec, Scheme,
    StepSpec,
};
pub use experiment::{build_instance, run, run_file, Instance, RunFlags, RunOutcome, Summary};
pub use sweep::{expand_sweep_input, summary_csv, sweep, SweepEntry, SweepOutcome, SUMMARY_HEADER};
pub use trace_csv::{read_trace_csv, trace_csv, write_trace_csv, CsvRow, TRACE_HEADER};
