//! Scenario runner: actors, message bus, plaintext oracle and reports.

mod bus;
pub mod config;
mod harness;
mod report;
pub mod scenarios;

pub use bus::{Bus, Envelope, TranscriptEntry, Transport};
pub use config::{parse_config, ConfigError, ScenarioConfig};
pub use harness::{run_scenario, RunOptions, RunOutput, SimError};
pub use report::{
    scan_transcript, transcript_from_jsonl, transcript_to_jsonl, verify_transcripts, Leak, Record, RoundRecord,
    RunReport, Sentinel,
};
