//! Survey-grounded stance agents: data handling, reward shaping, toy and
//! remote policies, GRPO training, evaluation statistics and analysis.

pub mod baselines;
pub mod error;
pub mod experiments;
pub mod grpo;
pub mod metrics;
pub mod par;
pub mod plot;
pub mod policy;
pub mod report;
pub mod reward;
pub mod schedule;
pub mod schema;
pub mod seed;
pub mod sft;
pub mod space;
pub mod special;
pub mod stance;
pub mod stats;
pub mod survey;
pub mod synth;

pub use error::{Error, Result};
pub use stance::{LabelSpace, Stance};
