//! Explanation-driven evaluation harness for competitive-programming
//! problems.
//!
//! The pipeline: pick oracle solutions from a corpus ([`corpus`]), ask a
//! model to explain them in seven structured points ([`explainer`]), hand
//! one point back to a solver model as a hint ([`solver`]), judge the
//! generated programs locally ([`judge`]) and aggregate the results
//! ([`metrics`]). Every model call and verdict goes through the append-only
//! run log ([`runstore`]) so runs can be resumed and replayed
//! ([`pipeline`]). Human scoring of explanations lives in [`annotation`].

pub mod annotation;
pub mod corpus;
pub mod explainer;
pub mod judge;
pub mod llmgateway;
pub mod metrics;
pub mod pipeline;
pub mod promptkit;
pub mod runstore;
pub mod solver;
pub mod synth;
