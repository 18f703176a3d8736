//! Harness for generating and validating proof-of-concept exploits with an
//! LLM agent, guided by static taint traces.
//!
//! The pipeline: load a [`instance::ProblemInstance`], optionally rank its
//! static traces ([`trace::rank_traces`]), build prompts
//! ([`prompt::PromptBuilder`]), ask an [`agent::Agent`] for candidates, run
//! them ([`exec::Runner`]), check them ([`validation::validate`]) with
//! feedback between attempts, then compare successful runs against the
//! ground truth ([`validation::posthoc_validate`]) and aggregate
//! ([`report`]).

pub mod agent;
pub mod cli;
pub mod config;
pub mod exec;
pub mod instance;
pub mod location;
pub mod prompt;
pub mod report;
pub mod trace;
pub mod validation;
