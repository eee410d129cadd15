//! Pre-training courses and fine-tuning.

pub mod augment;
pub mod loss;
pub mod mask;
pub mod train;

pub use train::{run_curriculum, run_finetune, run_pretraining, Course, CourseConfig, CurriculumMode, EpochLog, TrainContext, TrainState};
