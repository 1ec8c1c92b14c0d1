//! Weighted-ensemble majority voting over recorded model generations, with a
//! Dirichlet-process Bayes-factor rule that decides when to stop sampling.
//!
//! The crate is organised around five pieces:
//!
//! * [`datamodel`] loads JSONL generation logs and exposes per-(model, problem)
//!   answer counts and empirical distributions.
//! * [`posterior`] estimates the posterior probability that the current
//!   plurality answer is the population majority, and turns it into a Bayes
//!   factor.
//! * [`adaptive`] runs the sequential sampling loop: draw a model according to
//!   a weight vector, draw an answer, stop on budget or Bayes factor.
//! * [`ensemble`] selects ensemble weights by exact mixed-integer optimisation
//!   of the infinite-sample majority accuracy, with a max-margin refinement.
//! * [`harness`] produces accuracy/cost curves, weight-learning curves,
//!   transfer summaries, and the sample-size bound.

pub mod adaptive;
pub mod datamodel;
pub mod ensemble;
pub mod harness;
pub mod posterior;

pub use adaptive::WeightVector;
pub use datamodel::{AnswerCounts, AnswerKey, GenerationDataset};
