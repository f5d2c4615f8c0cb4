//! Agent architecture for long-running multi-agent simulations: option
//! actions, an asynchronous self-monitor, and a summarize-and-forget memory.

pub mod agent;
pub mod embedding;
pub mod lang;
pub mod memory;
pub mod realtime;
pub mod scenarios;
pub mod world;
