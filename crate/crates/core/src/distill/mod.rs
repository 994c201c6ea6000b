//! Desk-scale distillation: a frozen projection teacher, a small relaxed
//! student, feature-space augmentation and an Adam loop over the
//! contrastive losses in [`crate::kd_loss`].

mod student;
mod teacher;
mod train;

pub use student::{Forward, StudentArch, StudentModel};
pub use teacher::TeacherModel;
pub use train::{
    check_grad, grid_search, make_batch, prepare_run, train, Adam, AugmentationSpec, EpochLog, GradCheckReport,
    GridPoint, RunState, TrainConfig, TrainedStudent,
};
