//! Centroidal rigid-body simulator.
//!
//! One floating body carries all the mass. Legs are massless and driven by
//! joint PD plus feedforward torque through a small viscous joint damping, so a
//! leg's joint velocity is set by the balance of motor torque, damping and the
//! contact force at its foot. The ground is a penalty spring-damper with
//! regularized Coulomb friction. Each step solves the per-leg balance with the
//! contact and PD stiffness taken implicitly, then enforces non-negative normal
//! force, the friction cone and torque saturation exactly.

use nalgebra::Matrix3;

use crate::error::{Error, Result};
use crate::geom::{exp_so3, rotation_from_rpy, rpy_from_rotation, Vec3, GRAVITY};
use crate::motion::ReferenceFrame;
use crate::robot::{Leg, LegJoints, RobotModel, NUM_JOINTS, NUM_LEGS};

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct SimState {
    pub com_pos: Vec3,
    pub com_rpy: Vec3,
    pub com_lin_vel: Vec3,
    pub com_ang_vel: Vec3,
    pub joint_pos: [f64; NUM_JOINTS],
    pub joint_vel: [f64; NUM_JOINTS],
    /// Ground reaction at each foot, world frame.
    pub foot_force: [Vec3; NUM_LEGS],
    /// Motor torques applied during the step that produced this state.
    pub joint_torque: [f64; NUM_JOINTS],
    pub time: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct JointCommand {
    pub tau_ff: [f64; NUM_JOINTS],
    pub q_des: [f64; NUM_JOINTS],
    pub qd_des: [f64; NUM_JOINTS],
    pub kp: [f64; NUM_JOINTS],
    pub kd: [f64; NUM_JOINTS],
}

impl JointCommand {
    /// Pure PD hold of the given joint positions.
    pub fn hold(q: &[f64; NUM_JOINTS], kp: f64, kd: f64) -> Self {
        Self {
            q_des: *q,
            kp: [kp; NUM_JOINTS],
            kd: [kd; NUM_JOINTS],
            ..Default::default()
        }
    }

    /// Unsaturated torque this command would produce at the given joint state.
    pub fn raw_torque(&self, j: usize, q: f64, qd: f64) -> f64 {
        self.tau_ff[j] + self.kp[j] * (self.q_des[j] - q) + self.kd[j] * (self.qd_des[j] - qd)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Deserialize, serde::Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContactParams {
    pub stiffness: f64,
    pub damping: f64,
    pub mu: f64,
    pub ground_height: f64,
    /// Tangential speed below which friction is viscous, m/s.
    pub breakaway_speed: f64,
}

impl Default for ContactParams {
    fn default() -> Self {
        Self {
            stiffness: 1e4,
            damping: 300.0,
            mu: 0.8,
            ground_height: 0.0,
            breakaway_speed: 0.01,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Deserialize, serde::Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimParams {
    pub contact: ContactParams,
    pub dt: f64,
    /// Viscous joint damping that sets the leg's first-order lag, N·m·s/rad.
    pub joint_damping: f64,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            contact: ContactParams::default(),
            dt: 1e-3,
            joint_damping: 0.05,
        }
    }
}

impl SimParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt <= 2e-3) {
            return Err(Error::spec("sim.dt", "must lie in (0, 0.002] s"));
        }
        if !(self.contact.stiffness > 0.0 && self.contact.damping > 0.0) {
            return Err(Error::spec("contact", "stiffness and damping must be positive"));
        }
        if !(self.contact.mu >= 0.0 && self.contact.breakaway_speed > 0.0) {
            return Err(Error::spec("contact", "friction must be non-negative"));
        }
        if !(self.joint_damping > 0.0) {
            return Err(Error::spec("sim.joint_damping", "must be positive"));
        }
        Ok(())
    }
}

const POS_BOUND: f64 = 100.0;
const VEL_BOUND: f64 = 100.0;

impl SimState {
    pub fn rotation(&self) -> Matrix3<f64> {
        rotation_from_rpy(&self.com_rpy)
    }

    pub fn leg_joints(&self, leg: Leg) -> LegJoints {
        let i = 3 * leg.index();
        LegJoints::from_slice(&self.joint_pos[i..i + 3])
    }

    pub fn leg_joint_vel(&self, leg: Leg) -> Vec3 {
        let i = 3 * leg.index();
        Vec3::new(self.joint_vel[i], self.joint_vel[i + 1], self.joint_vel[i + 2])
    }

    pub fn feet_body(&self, model: &RobotModel) -> [Vec3; NUM_LEGS] {
        model.feet_body(&self.joint_pos)
    }

    pub fn feet_world(&self, model: &RobotModel) -> [Vec3; NUM_LEGS] {
        let r = self.rotation();
        self.feet_body(model).map(|p| self.com_pos + r * p)
    }

    /// World-frame foot velocities.
    pub fn feet_world_vel(&self, model: &RobotModel) -> [Vec3; NUM_LEGS] {
        let r = self.rotation();
        Leg::ALL.map(|leg| {
            let pb = model.forward_kinematics(leg, &self.leg_joints(leg));
            let jq = model.leg_jacobian(leg, &self.leg_joints(leg)) * self.leg_joint_vel(leg);
            self.com_lin_vel + self.com_ang_vel.cross(&(r * pb)) + r * jq
        })
    }

    fn check_finite(&self) -> Result<()> {
        let bad = |v: &Vec3, bound: f64| !v.iter().all(|x| x.is_finite() && x.abs() <= bound);
        let what = if bad(&self.com_pos, POS_BOUND) {
            Some("CoM position")
        } else if bad(&self.com_lin_vel, VEL_BOUND) {
            Some("CoM linear velocity")
        } else if bad(&self.com_ang_vel, VEL_BOUND) {
            Some("CoM angular velocity")
        } else if !self.com_rpy.iter().all(|x| x.is_finite()) {
            Some("orientation")
        } else if !self.joint_vel.iter().chain(&self.joint_pos).all(|x| x.is_finite()) {
            // joint positions are bounded by the limits; a massless leg may spin fast
            Some("joint state")
        } else {
            None
        };
        match what {
            Some(w) => Err(Error::Diverged {
                time: self.time,
                what: format!("{w} out of bounds"),
            }),
            None => Ok(()),
        }
    }
}

/// True for each foot whose vertical force strictly exceeds `f_thresh`.
pub fn measured_contact(state: &SimState, f_thresh: f64) -> [bool; NUM_LEGS] {
    state.foot_force.map(|f| f.z > f_thresh)
}

/// Contact treatment for one leg during a step.
#[derive(Clone, Copy, Debug, PartialEq)]
enum ContactMode {
    Free,
    /// Viscous tangential damping coefficient.
    Stick(f64),
    /// Sliding direction (unit, horizontal).
    Slide(Vec3),
}

struct LegStep {
    qd: Vec3,
    force: Vec3,
    torque: Vec3,
}

#[derive(Clone, Debug)]
pub struct Simulator {
    pub model: RobotModel,
    pub params: SimParams,
}

impl Simulator {
    pub fn new(model: RobotModel, params: SimParams) -> Result<Self> {
        params.validate()?;
        model.validate()?;
        Ok(Self { model, params })
    }

    /// Places the robot at a reference frame: joints from IK of the reference
    /// feet, body lowered so stance feet carry the static load.
    pub fn reset_to(&self, frame: &ReferenceFrame) -> SimState {
        let c = &self.params.contact;
        let n_stance = frame.contact.iter().filter(|&&b| b).count();
        let sink = if n_stance > 0 {
            self.model.mass * GRAVITY / (n_stance as f64 * c.stiffness)
        } else {
            0.0
        };
        let mut state = SimState {
            com_pos: frame.com_pos - Vec3::new(0.0, 0.0, sink) + Vec3::new(0.0, 0.0, c.ground_height),
            com_rpy: frame.com_rpy,
            com_lin_vel: frame.com_lin_vel,
            com_ang_vel: frame.com_ang_vel,
            ..Default::default()
        };
        for leg in Leg::ALL {
            let ik = self.model.inverse_kinematics(leg, &frame.foot_body(leg));
            let i = 3 * leg.index();
            state.joint_pos[i..i + 3].copy_from_slice(ik.joints.to_vec3().as_slice());
        }
        state.foot_force = self.feet_static_force(&state);
        state
    }

    fn feet_static_force(&self, state: &SimState) -> [Vec3; NUM_LEGS] {
        let c = &self.params.contact;
        state.feet_world(&self.model).map(|p| {
            let pen = c.ground_height - p.z;
            Vec3::new(0.0, 0.0, (c.stiffness * pen).max(0.0))
        })
    }

    /// Advances one step of `params.dt`.
    pub fn step(&self, state: &SimState, cmd: &JointCommand) -> Result<SimState> {
        step(state, cmd, &self.model, &self.params)
    }
}

/// Advances the simulation by `params.dt`.
pub fn step(
    state: &SimState,
    cmd: &JointCommand,
    model: &RobotModel,
    params: &SimParams,
) -> Result<SimState> {
    let dt = params.dt;
    let rot = state.rotation();
    let mut next = *state;
    let mut total_force = Vec3::new(0.0, 0.0, -model.mass * GRAVITY);
    let mut total_torque = Vec3::zeros();

    for leg in Leg::ALL {
        let q = state.leg_joints(leg);
        let pb = model.forward_kinematics(leg, &q);
        let r_world = rot * pb;
        let foot = state.com_pos + r_world;
        let jw = rot * model.leg_jacobian(leg, &q);
        let base_vel = state.com_lin_vel + state.com_ang_vel.cross(&r_world);
        let ls = leg_step(state, cmd, model, params, leg, &foot, &jw, &base_vel);

        let i = 3 * leg.index();
        for j in 0..3 {
            let range = model.joint_limits[i + j];
            let mut qn = state.joint_pos[i + j] + dt * ls.qd[j];
            let mut qdn = ls.qd[j];
            if qn < range.min || qn > range.max {
                qn = range.clamp(qn);
                qdn = 0.0;
            }
            next.joint_pos[i + j] = qn;
            next.joint_vel[i + j] = qdn;
            next.joint_torque[i + j] = ls.torque[j];
        }
        next.foot_force[leg.index()] = ls.force;
        total_force += ls.force;
        total_torque += r_world.cross(&ls.force);
    }

    // body: exact update for constant acceleration over the step
    let acc = total_force / model.mass;
    next.com_pos = state.com_pos + state.com_lin_vel * dt + acc * (0.5 * dt * dt);
    next.com_lin_vel = state.com_lin_vel + acc * dt;

    let inertia_world = rot * model.inertia_body * rot.transpose();
    let inv_inertia = inertia_world
        .try_inverse()
        .expect("inertia is positive definite");
    let w = state.com_ang_vel;
    let w_dot = inv_inertia * (total_torque - w.cross(&(inertia_world * w)));
    next.com_ang_vel = w + w_dot * dt;
    let rot_next = exp_so3(&(next.com_ang_vel * dt)) * rot;
    next.com_rpy = rpy_from_rotation(&rot_next);
    next.time = state.time + dt;
    next.check_finite()?;
    Ok(next)
}

#[allow(clippy::too_many_arguments)]
fn leg_step(
    state: &SimState,
    cmd: &JointCommand,
    model: &RobotModel,
    params: &SimParams,
    leg: Leg,
    foot: &Vec3,
    jw: &Matrix3<f64>,
    base_vel: &Vec3,
) -> LegStep {
    let c = &params.contact;
    let dt = params.dt;
    let b = params.joint_damping;
    let i = 3 * leg.index();
    let pen = c.ground_height - foot.z;
    // normal damping with the spring taken implicitly over the step
    let dn = c.damping + c.stiffness * dt;

    let mut mode = if pen > 0.0 {
        let fn_est = (c.stiffness * pen - c.damping * base_vel.z).max(0.0);
        ContactMode::Stick(c.mu * fn_est / c.breakaway_speed)
    } else {
        ContactMode::Free
    };
    let mut saturated: [Option<f64>; 3] = [None; 3];

    for _ in 0..8 {
        // Joint balance: b qd = tau(qd) + Jwᵀ F(qd), with tau and F affine in qd.
        let mut lhs = Matrix3::identity() * b;
        let mut rhs = Vec3::zeros();
        for j in 0..3 {
            let k = i + j;
            match saturated[j] {
                Some(t) => rhs[j] += t,
                None => {
                    let q = state.joint_pos[k];
                    lhs[(j, j)] += cmd.kd[k] + cmd.kp[k] * dt;
                    rhs[j] += cmd.tau_ff[k] + cmd.kp[k] * (cmd.q_des[k] - q) + cmd.kd[k] * cmd.qd_des[k];
                }
            }
        }
        // F = F0 - Dmat (base_vel + jw qd)
        let (f0, dmat) = match mode {
            ContactMode::Free => (Vec3::zeros(), Matrix3::zeros()),
            ContactMode::Stick(ct) => (
                Vec3::new(0.0, 0.0, c.stiffness * pen),
                Matrix3::from_diagonal(&Vec3::new(ct, ct, dn)),
            ),
            ContactMode::Slide(s) => {
                let wdir = Vec3::new(-c.mu * s.x, -c.mu * s.y, 1.0);
                let mut d = Matrix3::zeros();
                d.set_column(2, &(wdir * dn));
                (wdir * (c.stiffness * pen), d)
            }
        };
        lhs += jw.transpose() * dmat * jw;
        rhs += jw.transpose() * (f0 - dmat * base_vel);
        let qd = lhs
            .lu()
            .solve(&rhs)
            .unwrap_or_else(Vec3::zeros);
        let force = f0 - dmat * (base_vel + jw * qd);

        let torque = Vec3::from_fn(|j, _| match saturated[j] {
            Some(t) => t,
            None => cmd.raw_torque(i + j, state.joint_pos[i + j] + dt * qd[j], qd[j]),
        });

        // contact consistency
        let next_mode = match mode {
            ContactMode::Free => None,
            _ if force.z < 0.0 => Some(ContactMode::Free),
            ContactMode::Stick(_) => {
                let ft = Vec3::new(force.x, force.y, 0.0);
                if ft.norm() > c.mu * force.z {
                    let vf = base_vel + jw * qd;
                    let vt = Vec3::new(vf.x, vf.y, 0.0);
                    let dir = if vt.norm() > 1e-12 { vt.normalize() } else { -ft.normalize() };
                    Some(ContactMode::Slide(dir))
                } else {
                    None
                }
            }
            ContactMode::Slide(_) => None,
        };
        if let Some(m) = next_mode {
            mode = m;
            continue;
        }

        // torque saturation
        let mut changed = false;
        for j in 0..3 {
            let lim = model.torque_limits[i + j];
            if saturated[j].is_none() && torque[j].abs() > lim {
                saturated[j] = Some(torque[j].clamp(-lim, lim));
                changed = true;
            }
        }
        if changed {
            continue;
        }
        return LegStep { qd, force, torque };
    }

    // Mode iteration did not settle; fall back to a free, saturated leg.
    let qd = Vec3::from_fn(|j, _| {
        let k = i + j;
        let lim = model.torque_limits[k];
        let t = cmd.raw_torque(k, state.joint_pos[k], state.joint_vel[k]).clamp(-lim, lim);
        t / (b + cmd.kd[k] + cmd.kp[k] * dt)
    });
    let torque = Vec3::from_fn(|j, _| {
        let k = i + j;
        let lim = model.torque_limits[k];
        cmd.raw_torque(k, state.joint_pos[k], state.joint_vel[k]).clamp(-lim, lim)
    });
    LegStep {
        qd,
        force: Vec3::zeros(),
        torque,
    }
}
