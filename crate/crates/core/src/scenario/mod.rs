//! Scenario configuration, runner and reporting.

mod config;
mod export;
mod run;

pub use config::{
    ControllerMode, DriveMode, Expectation, FilterInitMode, InitialState, LoadProfile, Metric, ObserverSection,
    ObserverStart, PeSection, ScenarioConfig, SpeedProfile,
};
pub use export::{
    format_value, read_csv, write_csv, write_outputs, write_summary, RunTable, OBSERVER_COLUMNS, PLANT_COLUMNS,
};
pub use run::{
    lambda_decay_rate, metric_value, run_scenario, simulate, AssertionResult, ObserverRecord, ObserverSummary,
    PlantRecord, RunOutput, Summary, Trace,
};
