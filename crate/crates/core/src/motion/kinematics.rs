use nalgebra::Vector3;

use super::bvh::{MotionSequence, Skeleton};
use super::rotation::{euler_to_rotmat, RotMat};
use crate::error::Result;

/// Joint states of one frame, indexed like `Skeleton::joints`.
#[derive(Debug, Clone)]
pub struct FramePose {
    pub positions: Vec<Vector3<f64>>,
    pub global: Vec<RotMat>,
    pub local: Vec<RotMat>,
}

pub fn local_rotations(skeleton: &Skeleton, row: &[f64]) -> Vec<RotMat> {
    (0..skeleton.num_joints())
        .map(|j| {
            let cols = skeleton.rotation_columns(j);
            euler_to_rotmat(cols.map(|c| row[c]), skeleton.rotation_order(j))
        })
        .collect()
}

pub fn pose_frame(skeleton: &Skeleton, row: &[f64]) -> FramePose {
    let local = local_rotations(skeleton, row);
    let n = skeleton.num_joints();
    let mut global: Vec<RotMat> = Vec::with_capacity(n);
    let mut positions: Vec<Vector3<f64>> = Vec::with_capacity(n);
    for (j, joint) in skeleton.joints().iter().enumerate() {
        match joint.parent {
            None => {
                let [x, y, z] = skeleton.root_position_columns();
                positions.push(Vector3::new(row[x], row[y], row[z]));
                global.push(local[j]);
            }
            Some(p) => {
                let offset = Vector3::from(joint.offset);
                positions.push(positions[p] + global[p].apply(&offset));
                global.push(global[p].mul(&local[j]));
            }
        }
    }
    FramePose {
        positions,
        global,
        local,
    }
}

pub fn forward_kinematics(skeleton: &Skeleton, motion: &MotionSequence) -> Result<Vec<FramePose>> {
    motion.check_against(skeleton)?;
    Ok(motion
        .frames
        .rows()
        .into_iter()
        .map(|row| pose_frame(skeleton, row.as_slice().expect("standard layout")))
        .collect())
}
