//! Kinematic and inertial description of a 12-DOF quadruped.
//!
//! Each leg has three revolute joints: abduction about the body x axis, then
//! hip and knee about the (abducted) y axis. With all joints at zero the leg
//! hangs straight down from a point offset laterally by the abduction link.
//! The knee bends backward (negative knee angle).
//!
//! Legs are ordered FR, FL, RR, RL. Joint index `3 * leg + j`.

use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::geom::{wrap_angle, Mat3, Vec3};

pub const NUM_LEGS: usize = 4;
pub const NUM_JOINTS: usize = 12;

/// Fraction of full sagittal extension that inverse kinematics clamps to.
pub const REACH_CLAMP: f64 = 0.995;

const DEFAULT_ROBOT: &str = include_str!("../assets/a1.toml");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Leg {
    FrontRight,
    FrontLeft,
    RearRight,
    RearLeft,
}

impl Leg {
    pub const ALL: [Leg; NUM_LEGS] = [
        Leg::FrontRight,
        Leg::FrontLeft,
        Leg::RearRight,
        Leg::RearLeft,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Leg> {
        Self::ALL.get(i).copied()
    }

    /// -1 for right legs, +1 for left legs.
    pub fn side_sign(self) -> f64 {
        match self {
            Leg::FrontRight | Leg::RearRight => -1.0,
            Leg::FrontLeft | Leg::RearLeft => 1.0,
        }
    }

    /// +1 for front legs, -1 for rear legs.
    pub fn front_sign(self) -> f64 {
        match self {
            Leg::FrontRight | Leg::FrontLeft => 1.0,
            Leg::RearRight | Leg::RearLeft => -1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Leg::FrontRight => "FR",
            Leg::FrontLeft => "FL",
            Leg::RearRight => "RR",
            Leg::RearLeft => "RL",
        }
    }
}

/// Joint angles of one leg, radians.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct LegJoints {
    pub abduction: f64,
    pub hip: f64,
    pub knee: f64,
}

impl LegJoints {
    pub fn new(abduction: f64, hip: f64, knee: f64) -> Self {
        Self {
            abduction,
            hip,
            knee,
        }
    }

    pub fn to_vec3(self) -> Vec3 {
        Vec3::new(self.abduction, self.hip, self.knee)
    }

    pub fn from_slice(q: &[f64]) -> Self {
        Self::new(q[0], q[1], q[2])
    }

    pub fn from_vec3(v: &Vec3) -> Self {
        Self::new(v.x, v.y, v.z)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JointRange {
    pub min: f64,
    pub max: f64,
}

impl JointRange {
    pub fn contains(&self, q: f64) -> bool {
        q >= self.min && q <= self.max
    }

    pub fn clamp(&self, q: f64) -> f64 {
        q.clamp(self.min, self.max)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinkLengths {
    pub hip_abduction_offset: f64,
    pub thigh: f64,
    pub calf: f64,
}

/// Inverse kinematics result. `out_of_reach` is raised when the target had to be
/// clamped onto the workspace; `target` is then the clamped point that `joints`
/// actually reach.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IkSolution {
    pub joints: LegJoints,
    pub target: Vec3,
    pub out_of_reach: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RobotModel {
    pub mass: f64,
    pub inertia_body: Mat3,
    pub hip_offsets: [Vec3; NUM_LEGS],
    pub links: LinkLengths,
    pub joint_limits: [JointRange; NUM_JOINTS],
    pub torque_limits: [f64; NUM_JOINTS],
    pub default_stance: [LegJoints; NUM_LEGS],
}

impl Default for RobotModel {
    fn default() -> Self {
        Self::from_toml_str(DEFAULT_ROBOT).expect("shipped robot description is valid")
    }
}

/// On-disk robot description. Keys carry their unit as a suffix.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RobotFile {
    schema: String,
    mass_kg: f64,
    inertia_xx_kgm2: f64,
    inertia_yy_kgm2: f64,
    inertia_zz_kgm2: f64,
    inertia_xy_kgm2: f64,
    inertia_xz_kgm2: f64,
    inertia_yz_kgm2: f64,
    hip_offset_x_m: f64,
    hip_offset_y_m: f64,
    hip_offset_z_m: f64,
    hip_abduction_offset_m: f64,
    thigh_length_m: f64,
    calf_length_m: f64,
    abduction_min_rad: f64,
    abduction_max_rad: f64,
    hip_min_rad: f64,
    hip_max_rad: f64,
    knee_min_rad: f64,
    knee_max_rad: f64,
    abduction_torque_limit_nm: f64,
    hip_torque_limit_nm: f64,
    knee_torque_limit_nm: f64,
    default_abduction_rad: f64,
    default_hip_rad: f64,
    default_knee_rad: f64,
}

pub const ROBOT_SCHEMA: &str = "quadmimic-robot/1";

impl RobotModel {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let f: RobotFile =
            toml::from_str(text).map_err(|e| Error::Schema(format!("robot description: {e}")))?;
        if f.schema != ROBOT_SCHEMA {
            return Err(Error::Schema(format!(
                "robot description schema `{}`, expected `{ROBOT_SCHEMA}`",
                f.schema
            )));
        }
        let inertia = Mat3::new(
            f.inertia_xx_kgm2,
            f.inertia_xy_kgm2,
            f.inertia_xz_kgm2,
            f.inertia_xy_kgm2,
            f.inertia_yy_kgm2,
            f.inertia_yz_kgm2,
            f.inertia_xz_kgm2,
            f.inertia_yz_kgm2,
            f.inertia_zz_kgm2,
        );
        let hip_offsets = Leg::ALL.map(|leg| {
            Vec3::new(
                leg.front_sign() * f.hip_offset_x_m,
                leg.side_sign() * f.hip_offset_y_m,
                f.hip_offset_z_m,
            )
        });
        let per_leg = [
            JointRange {
                min: f.abduction_min_rad,
                max: f.abduction_max_rad,
            },
            JointRange {
                min: f.hip_min_rad,
                max: f.hip_max_rad,
            },
            JointRange {
                min: f.knee_min_rad,
                max: f.knee_max_rad,
            },
        ];
        let torques = [
            f.abduction_torque_limit_nm,
            f.hip_torque_limit_nm,
            f.knee_torque_limit_nm,
        ];
        let model = RobotModel {
            mass: f.mass_kg,
            inertia_body: inertia,
            hip_offsets,
            links: LinkLengths {
                hip_abduction_offset: f.hip_abduction_offset_m,
                thigh: f.thigh_length_m,
                calf: f.calf_length_m,
            },
            joint_limits: std::array::from_fn(|i| per_leg[i % 3]),
            torque_limits: std::array::from_fn(|i| torques[i % 3]),
            default_stance: [LegJoints::new(
                f.default_abduction_rad,
                f.default_hip_rad,
                f.default_knee_rad,
            ); NUM_LEGS],
        };
        model.validate()?;
        Ok(model)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mass > 0.0 && self.mass.is_finite()) {
            return Err(Error::spec("mass_kg", "must be positive"));
        }
        let i = &self.inertia_body;
        if (i - i.transpose()).abs().max() > 1e-12 || i.cholesky().is_none() {
            return Err(Error::spec("inertia", "must be symmetric positive definite"));
        }
        let l = &self.links;
        for (name, v) in [
            ("hip_abduction_offset_m", l.hip_abduction_offset),
            ("thigh_length_m", l.thigh),
            ("calf_length_m", l.calf),
        ] {
            if !(v > 0.0) {
                return Err(Error::spec(name, "link lengths must be positive"));
            }
        }
        for leg in Leg::ALL {
            let h = self.hip_offsets[leg.index()];
            let fr = self.hip_offsets[0];
            let mirrored = Vec3::new(
                leg.front_sign() * fr.x.abs(),
                leg.side_sign() * fr.y.abs(),
                fr.z,
            );
            if (h - mirrored).abs().max() > 1e-12 || fr.x <= 0.0 || fr.y >= 0.0 {
                return Err(Error::spec(
                    "hip_offset",
                    "hip offsets must be sign-symmetric (FR at +x,-y)",
                ));
            }
        }
        for (j, r) in self.joint_limits.iter().enumerate() {
            if !(r.min < r.max) {
                return Err(Error::spec(format!("joint_limit[{j}]"), "min must be < max"));
            }
        }
        for (j, t) in self.torque_limits.iter().enumerate() {
            if !(*t > 0.0) {
                return Err(Error::spec(format!("torque_limit[{j}]"), "must be positive"));
            }
        }
        Ok(())
    }

    pub fn joint_range(&self, leg: Leg, j: usize) -> JointRange {
        self.joint_limits[3 * leg.index() + j]
    }

    /// Upper bound on the foot's distance from the hip (abduction pivot).
    pub fn max_reach(&self) -> f64 {
        let l = &self.links;
        l.hip_abduction_offset + l.thigh + l.calf
    }

    /// Foot position in the body frame.
    pub fn forward_kinematics(&self, leg: Leg, q: &LegJoints) -> Vec3 {
        let l = &self.links;
        let y0 = leg.side_sign() * l.hip_abduction_offset;
        let (sa, ca) = q.abduction.sin_cos();
        let xs = -(l.thigh * q.hip.sin() + l.calf * (q.hip + q.knee).sin());
        let zs = -(l.thigh * q.hip.cos() + l.calf * (q.hip + q.knee).cos());
        self.hip_offsets[leg.index()] + Vec3::new(xs, ca * y0 - sa * zs, sa * y0 + ca * zs)
    }

    /// `d foot / d q` in the body frame; columns are abduction, hip, knee.
    pub fn leg_jacobian(&self, leg: Leg, q: &LegJoints) -> Mat3 {
        let l = &self.links;
        let y0 = leg.side_sign() * l.hip_abduction_offset;
        let (sa, ca) = q.abduction.sin_cos();
        let (sh, ch) = q.hip.sin_cos();
        let (shk, chk) = (q.hip + q.knee).sin_cos();
        let xs = -(l.thigh * sh + l.calf * shk);
        let zs = -(l.thigh * ch + l.calf * chk);
        let dxk = -l.calf * chk;
        let dzk = l.calf * shk;
        Mat3::new(
            0.0,
            zs,
            dxk,
            -sa * y0 - ca * zs,
            sa * xs,
            -sa * dzk,
            ca * y0 - sa * zs,
            -ca * xs,
            ca * dzk,
        )
    }

    /// Analytic inverse kinematics with the knee-backward branch.
    ///
    /// The sagittal (hip-to-foot, after removing the abduction link) distance
    /// is clamped into `[r_min, REACH_CLAMP * (thigh + calf)]`; the clamped
    /// target is reported and `out_of_reach` set.
    pub fn inverse_kinematics(&self, leg: Leg, target: &Vec3) -> IkSolution {
        let l = &self.links;
        let y0 = leg.side_sign() * l.hip_abduction_offset;
        let hip = self.hip_offsets[leg.index()];
        let r = target - hip;

        let r_max = REACH_CLAMP * (l.thigh + l.calf);
        let r_min = (l.thigh - l.calf).abs().max(0.1 * (l.thigh + l.calf));

        let yz2 = r.y * r.y + r.z * r.z;
        let mut x = r.x;
        let mut zs = -(yz2 - y0 * y0).max(0.0).sqrt();
        let mut out_of_reach = yz2 < y0 * y0;
        let abduction = wrap_angle(r.z.atan2(r.y) - zs.atan2(y0));

        let rs = (x * x + zs * zs).sqrt();
        if rs > r_max {
            let k = r_max / rs;
            x *= k;
            zs *= k;
            out_of_reach = true;
        } else if rs < r_min {
            if rs < 1e-12 {
                x = 0.0;
                zs = -r_min;
            } else {
                let k = r_min / rs;
                x *= k;
                zs *= k;
            }
            out_of_reach = true;
        }

        let rs2 = x * x + zs * zs;
        let cos_knee =
            ((rs2 - l.thigh * l.thigh - l.calf * l.calf) / (2.0 * l.thigh * l.calf)).clamp(-1.0, 1.0);
        let knee = -cos_knee.acos();
        let hip_angle = wrap_angle(
            (-x).atan2(-zs) - (l.calf * knee.sin()).atan2(l.thigh + l.calf * knee.cos()),
        );
        let joints = LegJoints::new(abduction, hip_angle, knee);
        let reached = if out_of_reach {
            self.forward_kinematics(leg, &joints)
        } else {
            *target
        };
        IkSolution {
            joints,
            target: reached,
            out_of_reach,
        }
    }

    /// Foot positions for all legs at the given joint vector.
    pub fn feet_body(&self, q: &[f64; NUM_JOINTS]) -> [Vec3; NUM_LEGS] {
        Leg::ALL.map(|leg| {
            let i = 3 * leg.index();
            self.forward_kinematics(leg, &LegJoints::from_slice(&q[i..i + 3]))
        })
    }

    /// Nominal foot position below the hip at standing height `height`
    /// (body frame, level body).
    pub fn neutral_foot(&self, leg: Leg, height: f64) -> Vec3 {
        let h = self.hip_offsets[leg.index()];
        Vec3::new(
            h.x,
            h.y + leg.side_sign() * self.links.hip_abduction_offset,
            -height,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::FRAC_PI_2;

    fn model() -> RobotModel {
        RobotModel::default()
    }

    #[test]
    fn default_description_parses() {
        let m = model();
        assert_eq!(m.mass, 12.0);
        assert_eq!(m.hip_offsets[Leg::RearLeft.index()], Vec3::new(-0.183, 0.047, 0.0));
        assert_eq!(m.torque_limits.len(), NUM_JOINTS);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_mass() {
        let bad = DEFAULT_ROBOT.replace("mass_kg = 12.0", "mass_kg = -1.0");
        assert!(matches!(RobotModel::from_toml_str(&bad), Err(Error::Spec { .. })));
        let extra = format!("{DEFAULT_ROBOT}\nwheel_radius_m = 0.1\n");
        assert!(matches!(RobotModel::from_toml_str(&extra), Err(Error::Schema(_))));
    }

    #[test]
    fn zero_pose_hangs_straight_down() {
        let m = model();
        for leg in Leg::ALL {
            let foot = m.forward_kinematics(leg, &LegJoints::default());
            let expected = m.hip_offsets[leg.index()]
                + Vec3::new(0.0, leg.side_sign() * m.links.hip_abduction_offset, -0.4);
            assert_relative_eq!(foot, expected, epsilon = 1e-15);
        }
    }

    #[test]
    fn quarter_turn_hip_swings_leg_horizontal() {
        let m = model();
        let foot = m.forward_kinematics(Leg::FrontRight, &LegJoints::new(0.0, FRAC_PI_2, 0.0));
        let pivot = m.hip_offsets[0] + Vec3::new(0.0, -m.links.hip_abduction_offset, 0.0);
        let d = foot - pivot;
        assert_relative_eq!(d.x.abs(), 0.4, epsilon = 1e-12);
        assert!(d.z.abs() < 1e-12);
    }

    #[test]
    fn jacobian_of_zero_motion_is_zero() {
        let m = model();
        let j = m.leg_jacobian(Leg::FrontLeft, &LegJoints::new(0.1, 0.8, -1.5));
        assert_eq!(j * Vec3::zeros(), Vec3::zeros());
    }

    #[test]
    fn zero_pose_knee_column_orthogonal_to_abduction_column() {
        let m = model();
        let j = m.leg_jacobian(Leg::FrontRight, &LegJoints::default());
        assert!(j.column(2).dot(&j.column(0)).abs() < 1e-15);
        // knee motion stays in the sagittal plane
        assert_eq!(j[(1, 2)], 0.0);
    }

    #[test]
    fn ik_roundtrip_on_nominal_pose() {
        let m = model();
        for leg in Leg::ALL {
            let q = LegJoints::new(0.1 * leg.side_sign(), 0.8, -1.5);
            let sol = m.inverse_kinematics(leg, &m.forward_kinematics(leg, &q));
            assert!(!sol.out_of_reach);
            assert_relative_eq!(sol.joints.to_vec3(), q.to_vec3(), epsilon = 1e-9);
        }
    }

    #[test]
    fn ik_clamps_overextended_target() {
        let m = model();
        let leg = Leg::RearLeft;
        let hip = m.hip_offsets[leg.index()];
        let y0 = m.links.hip_abduction_offset;
        let target = hip + Vec3::new(0.0, y0, -(0.4 + 0.01));
        let sol = m.inverse_kinematics(leg, &target);
        assert!(sol.out_of_reach);
        let foot = m.forward_kinematics(leg, &sol.joints);
        assert_relative_eq!(foot, sol.target, epsilon = 1e-9);
        // on the clamped boundary, directly below the hip
        assert_relative_eq!(foot.z - hip.z, -REACH_CLAMP * 0.4, epsilon = 1e-9);
    }

    #[test]
    fn left_right_mirror() {
        let m = model();
        let q = LegJoints::new(0.23, 0.7, -1.3);
        let mirrored = LegJoints::new(-0.23, 0.7, -1.3);
        let fr = m.forward_kinematics(Leg::FrontRight, &q);
        let fl = m.forward_kinematics(Leg::FrontLeft, &mirrored);
        assert_relative_eq!(fr, Vec3::new(fl.x, -fl.y, fl.z), epsilon = 1e-15);
    }
}
