//! Motion capture I/O: BVH documents, rotation conversion and forward kinematics.

pub mod bvh;
pub mod kinematics;
pub mod rotation;

pub use bvh::{parse_bvh, write_bvh, Channel, EndSite, Joint, MotionSequence, Skeleton};
pub use kinematics::{forward_kinematics, FramePose};
pub use rotation::{euler_to_rotmat, orthonormalize, rotmat_to_euler, Axis, EulerOrder, RotMat};
