//! Adaptive programming-practice engine.
//!
//! Learner skill and exercise difficulty are estimated online with an
//! educational Elo rating; exercises are served from a concept-tagged bank,
//! graded against test cases, and every state change is written to an
//! append-only event log that can be replayed to rebuild the engine.

pub mod analytics;
pub mod bank;
pub mod events;
pub mod grading;
pub mod ontology;
pub mod rating;
pub mod scheduler;
pub mod session;
pub mod simulator;
