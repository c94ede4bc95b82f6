//! NPC dialogue agents with function calling: world model, tool registry,
//! prompt composition, a budgeted LLM gateway, retrieval memory, the
//! two-call dialogue pipeline and the evaluation metrics.

pub mod corpus;
pub mod demo;
pub mod gateway;
pub mod harness;
pub mod memory;
pub mod metrics;
pub mod pipeline;
pub mod prompt;
pub mod text;
pub mod toolbox;
pub mod world;

pub use corpus::{Corpus, TaskInstance};
pub use gateway::{Backend, BudgetProfile, CallLedger, GatewayError, MockBackend, MockScript};
pub use pipeline::{run_turn, TurnConfig, TurnOutcome};
pub use prompt::{Phase, StrategyId, TemplateSet};
pub use toolbox::{ToolCall, ToolRegistry};
pub use world::{Session, WorldDefinition};
