pub mod action;
pub mod config;
pub mod demos;
pub mod detector;
pub mod eval;
pub mod geometry;
pub mod pipeline;
pub mod policy;
pub mod rgbd;
pub mod roles;
pub mod sim;
pub mod voxel;

pub use action::{ActionMaps, ArmAction, ArmId, GoalTag, LabelSet, LanguageGoal, Proprio, ValueMaps};
pub use config::RunConfig;
pub use demos::{DemoEpisode, Keyframe};
pub use detector::{Detection, Detector};
pub use eval::EvalMetrics;
pub use geometry::{CameraIntrinsics, EulerBins, Frame, Pose6D, Vec3};
pub use policy::{KnnModel, Observation, Policy};
pub use rgbd::{PointCloud, RgbdFrame};
pub use roles::{AlphaMode, ObjectPose, Task};
pub use voxel::{GridSpec, VoxelGrid};
