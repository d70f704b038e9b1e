//! Small feed-forward learner: shared encoder, classifier / OT / projection
//! heads, the three training losses, SGD, the memory queue and the
//! alternating training loop.

pub mod augment;
pub mod loss;
pub mod network;
pub mod optim;
pub mod queue;
pub mod train;

pub use loss::{LossBreakdown, Role};
pub use network::{Network, NetworkShape};
pub use queue::MemoryQueue;
pub use train::{train_run, Assigner, EpochRecord, TrainConfig, TrainOutcome};
