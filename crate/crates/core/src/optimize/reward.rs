//! Per-step imitation reward.

use crate::geom::{rotation_from_rpy, Pose, Vec3};
use crate::motion::{ReferenceFrame, ReferenceMotion};
use crate::robot::{Leg, RobotModel, NUM_JOINTS, NUM_LEGS};
use crate::sim::SimState;
use crate::Result;

#[derive(Clone, Copy, Debug, PartialEq, serde::Deserialize, serde::Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardWeights {
    pub pose: f64,
    pub velocity: f64,
    pub end_effector: f64,
    pub com_pos: f64,
    pub com_vel: f64,
    pub pose_scale: f64,
    pub velocity_scale: f64,
    pub end_effector_scale: f64,
    pub com_pos_scale: f64,
    pub com_ori_scale: f64,
    pub com_lin_vel_scale: f64,
    pub com_ang_vel_scale: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            pose: 0.25,
            velocity: 0.05,
            end_effector: 0.1,
            com_pos: 0.3,
            com_vel: 0.3,
            pose_scale: 5.0,
            velocity_scale: 0.1,
            end_effector_scale: 40.0,
            com_pos_scale: 20.0,
            com_ori_scale: 10.0,
            com_lin_vel_scale: 2.0,
            com_ang_vel_scale: 1.0,
        }
    }
}

impl RewardWeights {
    pub fn weight_sum(&self) -> f64 {
        self.pose + self.velocity + self.end_effector + self.com_pos + self.com_vel
    }
}

/// Reward components for one step, each in (0, 1].
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct RewardTerms {
    pub pose: f64,
    pub velocity: f64,
    pub end_effector: f64,
    pub com_pos: f64,
    pub com_vel: f64,
    pub total: f64,
}

/// Reference state at one control tick, including joint targets derived from
/// the reference feet.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RefTarget {
    pub frame: ReferenceFrame,
    pub joints: [f64; NUM_JOINTS],
    pub joint_vel: [f64; NUM_JOINTS],
    /// Robot-frame feet reachable by `joints` (equal to the reference feet
    /// wherever those are inside the workspace).
    pub feet: [Vec3; NUM_LEGS],
}

/// Joint angles that place the reference feet, via IK in the reference body frame.
pub fn reference_joints(frame: &ReferenceFrame, model: &RobotModel) -> [f64; NUM_JOINTS] {
    let mut q = [0.0; NUM_JOINTS];
    for leg in Leg::ALL {
        let ik = model.inverse_kinematics(leg, &frame.foot_body(leg));
        let i = 3 * leg.index();
        q[i..i + 3].copy_from_slice(ik.joints.to_vec3().as_slice());
    }
    q
}

/// Robot-frame foot positions for a body orientation and joint vector.
pub fn feet_robot(model: &RobotModel, rpy: &Vec3, q: &[f64; NUM_JOINTS]) -> [Vec3; NUM_LEGS] {
    let tilt = Pose::new(Vec3::zeros(), *rpy).tilt();
    model.feet_body(q).map(|p| tilt * p)
}

/// Reference targets at `n + 1` ticks `k * dt`; joint velocities by central
/// differences (one-sided at the ends of a non-cyclic motion).
pub fn reference_targets(
    motion: &ReferenceMotion,
    model: &RobotModel,
    dt: f64,
    n: usize,
) -> Result<Vec<RefTarget>> {
    let frames = (0..=n)
        .map(|k| motion.sample(k as f64 * dt))
        .collect::<Result<Vec<_>>>()?;
    let joints: Vec<[f64; NUM_JOINTS]> = frames.iter().map(|f| reference_joints(f, model)).collect();
    let before = if motion.cyclic {
        Some(reference_joints(&motion.sample(motion.duration() - dt)?, model))
    } else {
        None
    };
    let after = motion
        .sample((n + 1) as f64 * dt)
        .ok()
        .map(|f| reference_joints(&f, model));
    let out = (0..=n)
        .map(|k| {
            let (prev, next, span) = match (k, k == n) {
                (0, _) if before.is_some() => (before.unwrap(), joints[1.min(n)], 2.0 * dt),
                (0, _) => (joints[0], joints[1.min(n)], dt),
                (_, true) => match after {
                    Some(a) => (joints[k - 1], a, 2.0 * dt),
                    None => (joints[k - 1], joints[k], dt),
                },
                _ => (joints[k - 1], joints[k + 1], 2.0 * dt),
            };
            let joint_vel = std::array::from_fn(|j| (next[j] - prev[j]) / span);
            RefTarget {
                frame: frames[k],
                joints: joints[k],
                joint_vel,
                feet: feet_robot(model, &frames[k].com_rpy, &joints[k]),
            }
        })
        .collect();
    Ok(out)
}

/// Rotation angle between two orientations, in [0, pi].
pub fn orientation_distance(a: &Vec3, b: &Vec3) -> f64 {
    let r = rotation_from_rpy(a).transpose() * rotation_from_rpy(b);
    // atan2 form stays accurate near zero where acos of the trace does not
    let s = 0.5
        * Vec3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]).norm();
    let c = 0.5 * (r.trace() - 1.0);
    s.atan2(c)
}

pub fn step_reward(
    target: &RefTarget,
    state: &SimState,
    model: &RobotModel,
    w: &RewardWeights,
) -> RewardTerms {
    let sq = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum() };
    let pose = (-w.pose_scale * sq(&target.joints, &state.joint_pos)).exp();
    let velocity = (-w.velocity_scale * sq(&target.joint_vel, &state.joint_vel)).exp();
    let feet = feet_robot(model, &state.com_rpy, &state.joint_pos);
    let ee_err: f64 = (0..NUM_LEGS)
        .map(|l| (target.feet[l] - feet[l]).norm_squared())
        .sum();
    let end_effector = (-w.end_effector_scale * ee_err).exp();
    let f = &target.frame;
    let ori = orientation_distance(&f.com_rpy, &state.com_rpy);
    let com_pos = (-w.com_pos_scale * (f.com_pos - state.com_pos).norm_squared()
        - w.com_ori_scale * ori * ori)
        .exp();
    let com_vel = (-w.com_lin_vel_scale * (f.com_lin_vel - state.com_lin_vel).norm_squared()
        - w.com_ang_vel_scale * (f.com_ang_vel - state.com_ang_vel).norm_squared())
    .exp();
    let total = w.pose * pose
        + w.velocity * velocity
        + w.end_effector * end_effector
        + w.com_pos * com_pos
        + w.com_vel * com_vel;
    RewardTerms {
        pose,
        velocity,
        end_effector,
        com_pos,
        com_vel,
        total,
    }
}

/// Simulator state that reproduces a reference target exactly.
pub fn state_from_target(target: &RefTarget, time: f64) -> SimState {
    let f = &target.frame;
    SimState {
        com_pos: f.com_pos,
        com_rpy: f.com_rpy,
        com_lin_vel: f.com_lin_vel,
        com_ang_vel: f.com_ang_vel,
        joint_pos: target.joints,
        joint_vel: target.joint_vel,
        time,
        ..Default::default()
    }
}
