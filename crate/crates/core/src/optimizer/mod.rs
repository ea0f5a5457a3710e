//! Hyperparameter search (random, TPE) and instruction search (COPRO).

pub mod copro;
pub mod space;
pub mod study;
pub mod tpe;

pub use copro::{optimize_prompt_copro, CoproConfig, CoproResult};
pub use space::{sample_random, Assignment, Domain, Param, Space, SpaceError};
pub use study::{run_study, Direction, EvalResult, Objective, Sampler, StudyConfig, StudyReport, Trial, TrialStatus, Weights};
pub use tpe::{sample_tpe, TpeConfig, TpeMode};
