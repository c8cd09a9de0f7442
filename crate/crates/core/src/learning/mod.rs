//! Tabular learners and empirical evaluation.

pub mod joint;
pub mod qtable;
pub mod train;

pub use joint::{evaluate_snapshots, joint_q_learning, PolicySnapshot};
pub use qtable::{greedy_legal, random_legal, QTable};
pub use train::{
    evaluate_policy_empirical, evaluate_random_policy, generalization_gap, q_learning_train,
    CurvePoint, EnvBuilder, EvalReport, ObservationMode, PPBuilder, TaskStats, TrainOutput,
    TrainSchedule,
};
