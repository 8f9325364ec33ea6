//! Reverse-mode gradients over the model op set, loss terms, Adam, schedules
//! and staged training recipes.

pub mod data;
pub mod error;
pub mod gradcheck;
pub mod loss;
pub mod optim;
pub mod plan;
pub mod schedule;
pub mod tape;

pub use data::{Batch, DataSource, PairSource, SimulatedCodec, SyntheticSource};
pub use error::{Result, TrainError};
pub use loss::{loss_eval, LossConfig, LossInputs, LossOutput, LossRegistry, LossTarget, LossTerm};
pub use optim::Adam;
pub use plan::{run_stage_plan, LogRecord, Stage, StagePlan, TrainLog};
pub use schedule::{Schedule, ScheduleKind};
pub use tape::{Gradients, Tape, Var};
