//! Evaluate chat-completion models on perception tasks.
//!
//! Three settings are supported: the bare question with images
//! ([`Setting::Standard`]), images plus tool visualizations
//! ([`Setting::RawTool`]), and images plus serialized perception programs
//! ([`Setting::P2`]). [`run_benchmark`] drives a task set against any
//! [`ChatClient`]; [`run_reconstruction`] measures how well a model fills in
//! redacted programs.

pub mod bench;
pub mod client;
pub mod extract;
pub mod prompt;
pub mod recon;

pub use bench::{run_benchmark, BenchOptions, BenchSummary, BenchmarkRecord, Existing};
pub use client::{
    ChatClient, ChatError, ChatRequest, ChatResponse, EndpointConfig, HttpChatClient, RetryPolicy,
    StubClient,
};
pub use extract::{extract_answer, UNPARSED};
pub use prompt::{build_prompt, Attachment, Message, PromptSpec, Setting, Templates};
pub use recon::{
    read_recon_tasks, run_reconstruction, ReconOptions, ReconReport, ReconTask, ReconTruth,
};
