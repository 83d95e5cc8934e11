//! Uncertainty-aware situation reporting from crisis social media.
//!
//! Posts are classified into situational-awareness categories, assessed for
//! plausibility and confidence against an intensity-based proxy, partitioned
//! into quadrants and summarized into reports whose informativeness is then
//! measured.

pub mod classification;
pub mod corpus;
pub mod evaluation;
pub(crate) mod exec;
pub mod gateway;
pub mod partition;
pub mod pipeline;
pub mod prompts;
pub mod proxy;
pub mod reporting;
pub mod uncertainty;
