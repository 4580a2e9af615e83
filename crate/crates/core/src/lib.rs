//! Evaluation harness for financial LLM tasks: claim/premise classification,
//! earnings-news summarization and single-stock trading.
//!
//! The pipeline is: [`corpus`] fuses task datasets into one instruction corpus,
//! [`prompts`] renders examples, [`llm_client`] drives a chat-completions
//! endpoint with caching, [`parse`] turns raw text into typed answers, and
//! [`metrics_cls`], [`metrics_sum`] and [`backtest`] score the results.

pub mod backtest;
pub mod corpus;
pub mod digest;
pub mod llm_client;
pub mod metrics_cls;
pub mod metrics_sum;
pub mod mock;
pub mod parse;
pub mod prompts;

pub use corpus::{TaskDataset, TaskExample, TaskId};
