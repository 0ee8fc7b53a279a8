//! Model-based imitation controller.
//!
//! Each tick the gait planner reconciles the reference contact schedule with
//! measured contact, stance legs receive ground-reaction forces from the
//! centroidal QP (plus a low-gain joint target that follows the reference body
//! velocity), and swing legs track the reference foot trajectory corrected by
//! a velocity feedback term.

use nalgebra::{Matrix3, Rotation3, Vector6};

use crate::error::Result;
use crate::geom::{rotation_from_rpy, yaw_rotation, Pose, Vec3};
use crate::motion::{ReferenceFrame, ReferenceMotion};
use crate::qp::{build_stance_problem, QpSolver, QpStatus, StanceQpConfig};
use crate::robot::{Leg, RobotModel, NUM_JOINTS, NUM_LEGS};
use crate::sim::{measured_contact, JointCommand, SimState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Deserialize, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SwingStrategy {
    /// Follow the reference foot trajectory with velocity feedback.
    Reference,
    /// Raibert-style footstep with a fixed-duration straight swing path.
    Raibert,
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Deserialize, serde::Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerConfig {
    /// CoM position/orientation gains: x, y, z, roll, pitch, yaw.
    pub kp: [f64; 6],
    pub kd: [f64; 6],
    pub qp: StanceQpConfig,
    pub f_thresh: f64,
    /// Swing velocity feedback gain per robot-frame axis, s.
    pub swing_gain: [f64; 3],
    pub stance_kp: f64,
    pub stance_kd: f64,
    pub swing_kp: f64,
    pub swing_kd: f64,
    pub min_switch_time: f64,
    pub dt: f64,
    pub swing: SwingStrategy,
    /// Swing duration of the Raibert baseline, s.
    pub raibert_swing_time: f64,
    /// Apex height of the Raibert baseline swing path, m.
    pub raibert_clearance: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            kp: [50.0, 50.0, 100.0, 100.0, 100.0, 50.0],
            kd: [10.0, 10.0, 20.0, 20.0, 20.0, 10.0],
            qp: StanceQpConfig::default(),
            f_thresh: 10.0,
            swing_gain: [0.03, 0.03, 0.0],
            stance_kp: 15.0,
            stance_kd: 0.5,
            swing_kp: 100.0,
            swing_kd: 2.0,
            min_switch_time: 0.1,
            dt: 0.002,
            swing: SwingStrategy::Reference,
            raibert_swing_time: 0.2,
            raibert_clearance: 0.08,
        }
    }
}

impl ControllerConfig {
    pub fn raibert() -> Self {
        Self {
            swing: SwingStrategy::Raibert,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        use crate::error::Error;
        let joint_gains = [self.stance_kp, self.stance_kd, self.swing_kp, self.swing_kd];
        let mut gains = self
            .kp
            .iter()
            .chain(&self.kd)
            .chain(&self.swing_gain)
            .chain(&joint_gains);
        if gains.any(|g| !(*g >= 0.0)) {
            return Err(Error::spec("gains", "all gains must be non-negative"));
        }
        if !(self.min_switch_time >= 0.0) {
            return Err(Error::spec("min_switch_time", "must be non-negative"));
        }
        if !(self.dt > 0.0) {
            return Err(Error::spec("dt", "control period must be positive"));
        }
        if !(self.f_thresh > 0.0) {
            return Err(Error::spec("f_thresh", "must be positive"));
        }
        if !(self.qp.r > 0.0 && self.qp.mu > 0.0) {
            return Err(Error::spec("qp", "regularization and friction must be positive"));
        }
        if !(self.raibert_swing_time > 0.0) {
            return Err(Error::spec("raibert_swing_time", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    Swing,
    Stance,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LegMode {
    pub mode: Mode,
    pub time_since_switch: f64,
    pub swing_phase: f64,
}

impl LegMode {
    pub fn new(mode: Mode, time_since_switch: f64) -> Self {
        Self {
            mode,
            time_since_switch,
            swing_phase: 0.0,
        }
    }
}

/// Which edge of the gait state machine a leg took this tick.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Transition {
    None,
    /// Stance to swing on schedule.
    LiftOff,
    /// Swing to stance on schedule with contact.
    TouchDown,
    /// Swing to stance: contact while still scheduled to swing.
    EarlyContact,
    /// Stance to swing: contact lost while still scheduled for stance.
    EarlyTakeOff,
}

/// Slack on the hysteresis comparison so accumulated tick sums do not delay a
/// switch by one tick.
const SWITCH_TIME_SLACK: f64 = 1e-9;

/// Gait state machine step; returns the new modes and the edge taken per leg.
pub fn plan_gait_detailed(
    desired: &[bool; NUM_LEGS],
    measured: &[bool; NUM_LEGS],
    modes: &[LegMode; NUM_LEGS],
    config: &ControllerConfig,
) -> ([LegMode; NUM_LEGS], [Transition; NUM_LEGS]) {
    let mut out = *modes;
    let mut edges = [Transition::None; NUM_LEGS];
    for l in 0..NUM_LEGS {
        let m = &mut out[l];
        m.time_since_switch += config.dt;
        let edge = if m.time_since_switch + SWITCH_TIME_SLACK < config.min_switch_time {
            Transition::None
        } else {
            match (m.mode, desired[l], measured[l]) {
                (Mode::Stance, false, _) => Transition::LiftOff,
                (Mode::Stance, true, false) => Transition::EarlyTakeOff,
                (Mode::Swing, true, true) => Transition::TouchDown,
                (Mode::Swing, false, true) => Transition::EarlyContact,
                _ => Transition::None,
            }
        };
        match edge {
            Transition::None => {}
            Transition::LiftOff | Transition::EarlyTakeOff => {
                *m = LegMode::new(Mode::Swing, 0.0);
            }
            Transition::TouchDown | Transition::EarlyContact => {
                *m = LegMode::new(Mode::Stance, 0.0);
            }
        }
        if m.mode == Mode::Swing {
            m.swing_phase = (m.time_since_switch / config.raibert_swing_time).min(1.0);
        }
        edges[l] = edge;
    }
    (out, edges)
}

pub fn plan_gait(
    desired: &[bool; NUM_LEGS],
    measured: &[bool; NUM_LEGS],
    modes: &[LegMode; NUM_LEGS],
    config: &ControllerConfig,
) -> [LegMode; NUM_LEGS] {
    plan_gait_detailed(desired, measured, modes, config).0
}

/// Orientation error as a world-frame rotation vector taking the current
/// attitude to the desired one; its angle is wrapped to `[0, pi]`.
pub fn orientation_error(desired_rpy: &Vec3, rpy: &Vec3) -> Vec3 {
    let r = rotation_from_rpy(desired_rpy) * rotation_from_rpy(rpy).transpose();
    Rotation3::from_matrix_unchecked(r).scaled_axis()
}

/// PD CoM acceleration (linear then angular, world frame).
pub fn desired_com_accel(
    reference: &ReferenceFrame,
    state: &SimState,
    config: &ControllerConfig,
) -> Vector6<f64> {
    let ep = reference.com_pos - state.com_pos;
    let er = orientation_error(&reference.com_rpy, &state.com_rpy);
    let ev = reference.com_lin_vel - state.com_lin_vel;
    let ew = reference.com_ang_vel - state.com_ang_vel;
    Vector6::from_fn(|i, _| {
        let (e, d) = if i < 3 { (ep[i], ev[i]) } else { (er[i - 3], ew[i - 3]) };
        config.kp[i] * e + config.kd[i] * d
    })
}

/// Stance foot target one tick ahead: the foot moves against the CoM velocity
/// (all quantities in the robot frame).
pub fn stance_adaptation_target(foot: &Vec3, lin_vel: &Vec3, ang_vel: &Vec3, dt: f64) -> Vec3 {
    foot - (lin_vel + ang_vel.cross(foot)) * dt
}

/// Swing foot target with velocity feedback (robot frame).
pub fn swing_target(ref_foot: &Vec3, ref_vel: &Vec3, vel: &Vec3, gain: &[f64; 3]) -> Vec3 {
    let e = ref_vel - vel;
    ref_foot - Vec3::new(gain[0] * e.x, gain[1] * e.y, gain[2] * e.z)
}

/// Raibert footstep relative to the neutral point (robot frame).
pub fn raibert_swing_target(
    neutral: &Vec3,
    ref_vel: &Vec3,
    vel: &Vec3,
    gain: &[f64; 3],
    swing_time: f64,
) -> Vec3 {
    let step = neutral + vel * (0.5 * swing_time);
    let mut p = swing_target(&step, ref_vel, vel, gain);
    p.z = neutral.z;
    p
}

/// Straight-line swing path from lift-off to footstep with a half-sine apex.
pub fn linear_swing_path(start: &Vec3, end: &Vec3, phase: f64, clearance: f64) -> Vec3 {
    let s = phase.clamp(0.0, 1.0);
    let mut p = start + (end - start) * s;
    p.z += clearance * (std::f64::consts::PI * s).sin();
    p
}

/// Per-tick diagnostics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TickInfo {
    pub modes: [Mode; NUM_LEGS],
    pub transitions: [Transition; NUM_LEGS],
    pub qp_status: Option<QpStatus>,
    pub out_of_reach: usize,
    pub forces: [Vec3; NUM_LEGS],
}

#[derive(Clone, Debug)]
pub struct ControllerState {
    pub modes: [LegMode; NUM_LEGS],
    pub solver: QpSolver,
    pub last_forces: [Vec3; NUM_LEGS],
    /// Robot-frame foot position at the most recent lift-off.
    pub liftoff: [Vec3; NUM_LEGS],
    pub qp_failures: usize,
    pub out_of_reach: usize,
}

impl ControllerState {
    /// Leg modes initialized from the reference contact flags; the hysteresis
    /// timer starts expired so the first scheduled switch is not delayed.
    pub fn new(initial: &ReferenceFrame, config: &ControllerConfig) -> Self {
        let modes = initial.contact.map(|c| {
            LegMode::new(
                if c { Mode::Stance } else { Mode::Swing },
                config.min_switch_time,
            )
        });
        Self {
            modes,
            solver: QpSolver::new(),
            last_forces: [Vec3::zeros(); NUM_LEGS],
            liftoff: initial.foot_pos,
            qp_failures: 0,
            out_of_reach: 0,
        }
    }
}

fn damped_pinv_apply(j: &Matrix3<f64>, v: &Vec3) -> Vec3 {
    let jt = j.transpose();
    let m = j * jt + Matrix3::identity() * 1e-6;
    jt * m.lu().solve(v).unwrap_or_else(Vec3::zeros)
}

pub struct Controller<'a> {
    pub model: &'a RobotModel,
    pub config: ControllerConfig,
}

impl<'a> Controller<'a> {
    pub fn new(model: &'a RobotModel, config: ControllerConfig) -> Self {
        Self { model, config }
    }

    /// One control tick. Samples the reference at `t`, updates the gait
    /// planner and returns the 12-joint command.
    pub fn control_step(
        &self,
        state: &SimState,
        motion: &ReferenceMotion,
        t: f64,
        cs: &mut ControllerState,
    ) -> Result<(JointCommand, TickInfo)> {
        let cfg = &self.config;
        let reference = motion.sample(t)?;
        // one tick ahead for swing velocity targets; one tick back at the end
        // of a non-cyclic motion
        let (ahead, ahead_sign) = match motion.sample(t + cfg.dt) {
            Ok(f) => (f, 1.0),
            Err(_) => (motion.sample((t - cfg.dt).max(0.0))?, -1.0),
        };

        let measured = measured_contact(state, cfg.f_thresh);
        let prev = cs.modes;
        let (modes, transitions) = plan_gait_detailed(&reference.contact, &measured, &cs.modes, cfg);
        cs.modes = modes;

        let rot = state.rotation();
        let yaw_rot = yaw_rotation(state.com_rpy.z);
        // body frame -> robot frame
        let tilt_body = Pose::new(state.com_pos, state.com_rpy).tilt();
        let feet_robot = state.feet_body(self.model).map(|p| tilt_body * p);

        let ref_yaw = yaw_rotation(reference.com_rpy.z);
        let ref_vel_robot = ref_yaw.transpose() * reference.com_lin_vel;
        let ref_w_robot = ref_yaw.transpose() * reference.com_ang_vel;
        let vel_robot = yaw_rot.transpose() * state.com_lin_vel;

        for l in 0..NUM_LEGS {
            if prev[l].mode == Mode::Stance && cs.modes[l].mode == Mode::Swing {
                cs.liftoff[l] = feet_robot[l];
            }
        }

        let mut cmd = JointCommand::default();
        let mut info = TickInfo {
            modes: cs.modes.map(|m| m.mode),
            transitions,
            qp_status: None,
            out_of_reach: 0,
            forces: [Vec3::zeros(); NUM_LEGS],
        };

        // stance forces
        let stance: [bool; NUM_LEGS] = cs.modes.map(|m| m.mode == Mode::Stance);
        if stance.iter().any(|&s| s) {
            let accel = desired_com_accel(&reference, state, cfg);
            let feet_world = state.feet_world(self.model);
            let sp = build_stance_problem(
                self.model,
                &state.com_rpy,
                &state.com_pos,
                &feet_world,
                &stance,
                &accel,
                &cfg.qp,
            );
            let sol = cs.solver.solve(&sp.problem);
            info.qp_status = Some(sol.status);
            let forces = if sol.status == QpStatus::Infeasible {
                cs.qp_failures += 1;
                let mut f = cs.last_forces;
                for l in 0..NUM_LEGS {
                    if !stance[l] {
                        f[l] = Vec3::zeros();
                    }
                }
                f
            } else {
                sp.leg_forces(&sol.x)
            };
            cs.last_forces = forces;
            info.forces = forces;
        } else {
            cs.last_forces = [Vec3::zeros(); NUM_LEGS];
        }

        for leg in Leg::ALL {
            let l = leg.index();
            let q = state.leg_joints(leg);
            let jac = self.model.leg_jacobian(leg, &q);
            let (target_robot, target_vel_robot, kp, kd, tau) = if stance[l] {
                let target = stance_adaptation_target(&feet_robot[l], &ref_vel_robot, &ref_w_robot, cfg.dt);
                let vel = -(ref_vel_robot + ref_w_robot.cross(&feet_robot[l]));
                // ground reaction f on the body needs joint torque -Jᵀ Rᵀ f
                let tau = -(jac.transpose() * rot.transpose() * info.forces[l]);
                (target, vel, cfg.stance_kp, cfg.stance_kd, tau)
            } else {
                let (target, vel) = match cfg.swing {
                    SwingStrategy::Reference => {
                        let target = swing_target(&reference.foot_pos[l], &ref_vel_robot, &vel_robot, &cfg.swing_gain);
                        let vel = (ahead.foot_pos[l] - reference.foot_pos[l]) * (ahead_sign / cfg.dt);
                        (target, vel)
                    }
                    SwingStrategy::Raibert => {
                        let neutral = self.model.neutral_foot(leg, reference.com_pos.z);
                        let step = raibert_swing_target(&neutral, &ref_vel_robot, &vel_robot, &cfg.swing_gain, cfg.raibert_swing_time);
                        let phase = cs.modes[l].swing_phase;
                        let target = linear_swing_path(&cs.liftoff[l], &step, phase, cfg.raibert_clearance);
                        let next_phase = (phase + cfg.dt / cfg.raibert_swing_time).min(1.0);
                        let next = linear_swing_path(&cs.liftoff[l], &step, next_phase, cfg.raibert_clearance);
                        (target, (next - target) / cfg.dt)
                    }
                };
                (target, vel, cfg.swing_kp, cfg.swing_kd, Vec3::zeros())
            };
            let target_body = tilt_body.transpose() * target_robot;
            let ik = self.model.inverse_kinematics(leg, &target_body);
            if ik.out_of_reach {
                info.out_of_reach += 1;
                cs.out_of_reach += 1;
            }
            let qd_des = damped_pinv_apply(&jac, &(tilt_body.transpose() * target_vel_robot));
            let qv = ik.joints.to_vec3();
            for j in 0..3 {
                let k = 3 * l + j;
                let lim = self.model.torque_limits[k];
                cmd.tau_ff[k] = tau[j].clamp(-lim, lim);
                cmd.q_des[k] = self.model.joint_limits[k].clamp(qv[j]);
                cmd.qd_des[k] = qd_des[j];
                cmd.kp[k] = kp;
                cmd.kd[k] = kd;
            }
        }
        Ok((cmd, info))
    }
}

/// Saturated torques a command produces at a state.
pub fn applied_torques(cmd: &JointCommand, state: &SimState, model: &RobotModel) -> [f64; NUM_JOINTS] {
    std::array::from_fn(|k| {
        let lim = model.torque_limits[k];
        cmd.raw_torque(k, state.joint_pos[k], state.joint_vel[k]).clamp(-lim, lim)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn cfg() -> ControllerConfig {
        ControllerConfig::default()
    }

    fn modes(mode: Mode, t: f64) -> [LegMode; 4] {
        [LegMode::new(mode, t); 4]
    }

    #[test]
    fn scheduled_liftoff_with_contact_still_measured() {
        let (m, e) = plan_gait_detailed(&[false; 4], &[true; 4], &modes(Mode::Stance, 0.5), &cfg());
        assert!(m.iter().all(|l| l.mode == Mode::Swing && l.swing_phase == 0.0));
        assert_eq!(e, [Transition::LiftOff; 4]);
    }

    #[test]
    fn early_contact_enters_stance() {
        let (m, e) = plan_gait_detailed(&[false; 4], &[true; 4], &modes(Mode::Swing, 0.5), &cfg());
        assert!(m.iter().all(|l| l.mode == Mode::Stance));
        assert_eq!(e[0], Transition::EarlyContact);
    }

    #[test]
    fn hysteresis_blocks_switch() {
        let (m, _) = plan_gait_detailed(&[false; 4], &[true; 4], &modes(Mode::Stance, 0.05 - 0.002), &cfg());
        assert!(m.iter().all(|l| l.mode == Mode::Stance));
    }

    #[test]
    fn com_accel_definitions() {
        let mut r = ReferenceFrame::default();
        let s = SimState::default();
        assert_eq!(desired_com_accel(&r, &s, &cfg()), Vector6::zeros());
        r.com_pos = Vec3::new(0.1, -0.2, 0.03);
        let c = ControllerConfig {
            kp: [3.0; 6],
            kd: [0.0; 6],
            ..cfg()
        };
        let a = desired_com_accel(&r, &s, &c);
        assert_relative_eq!(a.fixed_rows::<3>(0).into_owned(), r.com_pos * 3.0, epsilon = 1e-15);
        r.com_pos = Vec3::zeros();
        r.com_rpy.z = std::f64::consts::TAU - 0.1;
        let a = desired_com_accel(&r, &s, &c);
        assert_relative_eq!(a[5], -0.3, epsilon = 1e-12);
    }

    #[test]
    fn stance_target_arithmetic() {
        let p = stance_adaptation_target(
            &Vec3::new(0.2, -0.15, -0.3),
            &Vec3::new(0.5, 0.0, 0.0),
            &Vec3::zeros(),
            0.002,
        );
        assert_relative_eq!(p, Vec3::new(0.199, -0.15, -0.3), epsilon = 1e-15);
        let hold = stance_adaptation_target(&p, &Vec3::zeros(), &Vec3::zeros(), 0.002);
        assert_eq!(hold, p);
    }

    #[test]
    fn swing_feedback_arithmetic() {
        let r = Vec3::new(0.1, 0.1, -0.2);
        assert_eq!(swing_target(&r, &Vec3::zeros(), &Vec3::zeros(), &[0.03, 0.03, 0.0]), r);
        // velocity error (ref - actual) of -0.1 in x
        let t = swing_target(&r, &Vec3::zeros(), &Vec3::new(0.1, 0.0, 0.0), &[0.03, 0.03, 0.0]);
        assert_relative_eq!(t - r, Vec3::new(0.003, 0.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn raibert_arithmetic() {
        let n = Vec3::new(0.18, -0.13, -0.28);
        let g = [0.03, 0.03, 0.0];
        assert_eq!(raibert_swing_target(&n, &Vec3::zeros(), &Vec3::zeros(), &g, 0.3), n);
        let v = Vec3::new(0.4, 0.0, 0.0);
        let t = raibert_swing_target(&n, &v, &v, &g, 0.3);
        assert_relative_eq!(t.x - n.x, 0.06, epsilon = 1e-15);
    }
}
