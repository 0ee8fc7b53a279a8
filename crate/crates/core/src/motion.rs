//! Reference motions: data model, CSV I/O, interpolation, validation and
//! procedural gait synthesis.
//!
//! CoM pose and velocities are stored in the world frame. Foot positions are
//! stored in the robot frame: origin at the CoM, axes rotated by the CoM yaw
//! only. Cyclic motions hold one period with the final frame repeating frame 0
//! in every robot-frame field; sampling past the period replays the cycle after
//! applying the planar rigid motion (yaw + horizontal translation) that the
//! cycle accumulates.

use std::f64::consts::PI;
use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::geom::{rpy_error, wrap_angle, yaw_rotation, Pose, Vec3};
use crate::robot::{Leg, RobotModel, NUM_LEGS};

pub const MOTION_TAG: &str = "quadmimic-motion/1";
pub const LOG_TAG: &str = "quadmimic-log/1";

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct ReferenceFrame {
    pub com_pos: Vec3,
    pub com_rpy: Vec3,
    pub com_lin_vel: Vec3,
    pub com_ang_vel: Vec3,
    pub foot_pos: [Vec3; NUM_LEGS],
    pub contact: [bool; NUM_LEGS],
}

impl ReferenceFrame {
    pub fn pose(&self) -> Pose {
        Pose::new(self.com_pos, self.com_rpy)
    }

    /// CoM linear velocity in the robot (yaw-aligned) frame.
    pub fn lin_vel_robot(&self) -> Vec3 {
        yaw_rotation(self.com_rpy.z).transpose() * self.com_lin_vel
    }

    pub fn ang_vel_robot(&self) -> Vec3 {
        yaw_rotation(self.com_rpy.z).transpose() * self.com_ang_vel
    }

    /// Foot position of `leg` in the body frame given this frame's roll and pitch.
    pub fn foot_body(&self, leg: Leg) -> Vec3 {
        self.pose().tilt().transpose() * self.foot_pos[leg.index()]
    }

    /// Foot height above the world origin plane.
    pub fn foot_world_z(&self, leg: Leg) -> f64 {
        self.com_pos.z + self.foot_pos[leg.index()].z
    }
}

/// Planar rigid motion: rotate about z by `yaw`, then translate horizontally.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlanarTransform {
    pub yaw: f64,
    pub translation: Vec3,
}

impl PlanarTransform {
    pub const IDENTITY: PlanarTransform = PlanarTransform {
        yaw: 0.0,
        translation: Vec3::new(0.0, 0.0, 0.0),
    };

    /// Transform that maps the horizontal pose of `from` onto that of `to`.
    pub fn between(from: &ReferenceFrame, to: &ReferenceFrame) -> Self {
        let yaw = to.com_rpy.z - from.com_rpy.z;
        let rotated = yaw_rotation(yaw) * from.com_pos;
        let translation = Vec3::new(to.com_pos.x - rotated.x, to.com_pos.y - rotated.y, 0.0);
        Self { yaw, translation }
    }

    pub fn then(&self, next: &PlanarTransform) -> PlanarTransform {
        PlanarTransform {
            yaw: self.yaw + next.yaw,
            translation: yaw_rotation(next.yaw) * self.translation + next.translation,
        }
    }

    pub fn apply_point(&self, p: &Vec3) -> Vec3 {
        yaw_rotation(self.yaw) * p + self.translation
    }

    pub fn apply(&self, frame: &ReferenceFrame) -> ReferenceFrame {
        let r = yaw_rotation(self.yaw);
        ReferenceFrame {
            com_pos: self.apply_point(&frame.com_pos),
            com_rpy: Vec3::new(frame.com_rpy.x, frame.com_rpy.y, frame.com_rpy.z + self.yaw),
            com_lin_vel: r * frame.com_lin_vel,
            com_ang_vel: r * frame.com_ang_vel,
            foot_pos: frame.foot_pos,
            contact: frame.contact,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceMotion {
    pub dt: f64,
    pub frames: Vec<ReferenceFrame>,
    pub cyclic: bool,
}

impl ReferenceMotion {
    pub fn new(dt: f64, frames: Vec<ReferenceFrame>, cyclic: bool) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::spec("dt", "must be positive and finite"));
        }
        if frames.len() < 2 {
            return Err(Error::spec("frames", "a motion needs at least two frames"));
        }
        Ok(Self { dt, frames, cyclic })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Time of the final frame.
    pub fn duration(&self) -> f64 {
        (self.frames.len() - 1) as f64 * self.dt
    }

    /// Cycle period for cyclic motions.
    pub fn period(&self) -> Option<f64> {
        self.cyclic.then(|| self.duration())
    }

    /// Rigid motion accumulated over one cycle.
    pub fn cycle_transform(&self) -> PlanarTransform {
        PlanarTransform::between(&self.frames[0], &self.frames[self.frames.len() - 1])
    }

    fn interpolate(&self, s: f64) -> ReferenceFrame {
        let n = self.frames.len();
        let x = s / self.dt;
        let mut k = x.floor();
        let mut frac = x - k;
        if frac > 1.0 - 1e-9 {
            k += 1.0;
            frac = 0.0;
        } else if frac < 1e-9 {
            frac = 0.0;
        }
        let mut i = k.max(0.0) as usize;
        if i >= n - 1 {
            i = n - 1;
            frac = 0.0;
        }
        if frac == 0.0 {
            return self.frames[i];
        }
        let a = &self.frames[i];
        let b = &self.frames[i + 1];
        let lerp = |u: &Vec3, v: &Vec3| u + (v - u) * frac;
        ReferenceFrame {
            com_pos: lerp(&a.com_pos, &b.com_pos),
            com_rpy: a.com_rpy + rpy_error(&b.com_rpy, &a.com_rpy) * frac,
            com_lin_vel: lerp(&a.com_lin_vel, &b.com_lin_vel),
            com_ang_vel: lerp(&a.com_ang_vel, &b.com_ang_vel),
            foot_pos: std::array::from_fn(|l| lerp(&a.foot_pos[l], &b.foot_pos[l])),
            contact: if frac <= 0.5 { a.contact } else { b.contact },
        }
    }

    /// Reference at time `t`: linear interpolation (angle-wrapped for Euler
    /// angles), nearest-frame contact flags, cyclic replay past one period.
    pub fn sample(&self, t: f64) -> Result<ReferenceFrame> {
        if !(t >= 0.0) {
            return Err(Error::spec("t", format!("sample time must be >= 0, got {t}")));
        }
        let end = self.duration();
        if !self.cyclic {
            if t > end + 1e-9 * self.dt {
                return Err(Error::PastEnd { t, end });
            }
            return Ok(self.interpolate(t.min(end)));
        }
        let cycles = (t / end).floor();
        let mut s = t - cycles * end;
        let mut k = cycles as u64;
        if s >= end {
            s -= end;
            k += 1;
        }
        let frame = self.interpolate(s.max(0.0));
        if k == 0 {
            return Ok(frame);
        }
        let step = self.cycle_transform();
        let mut total = PlanarTransform::IDENTITY;
        for _ in 0..k {
            total = total.then(&step);
        }
        Ok(total.apply(&frame))
    }

    /// Expands a cyclic motion into `cycles` periods as a non-cyclic motion.
    pub fn unroll(&self, cycles: usize) -> Result<ReferenceMotion> {
        if !self.cyclic {
            return Err(Error::NotCyclic("unroll requires a cyclic motion".into()));
        }
        let per = self.frames.len() - 1;
        let frames = (0..=per * cycles.max(1))
            .map(|i| self.sample(i as f64 * self.dt))
            .collect::<Result<Vec<_>>>()?;
        ReferenceMotion::new(self.dt, frames, false)
    }

    /// Resamples onto a new frame spacing (the duration is preserved as far as
    /// whole new frames allow).
    pub fn resample(&self, dt: f64) -> Result<ReferenceMotion> {
        let n = (self.duration() / dt).round().max(1.0) as usize;
        let dt = self.duration() / n as f64;
        let frames = (0..=n)
            .map(|i| self.interpolate(i as f64 * dt))
            .collect::<Vec<_>>();
        ReferenceMotion::new(dt, frames, self.cyclic)
    }
}

// ---------------------------------------------------------------------------
// CSV I/O
// ---------------------------------------------------------------------------

/// Canonical column names, in file order.
pub fn motion_columns() -> Vec<String> {
    let mut cols: Vec<String> = [
        "t", "com_x", "com_y", "com_z", "com_roll", "com_pitch", "com_yaw", "com_vx", "com_vy",
        "com_vz", "com_wx", "com_wy", "com_wz",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for l in 0..NUM_LEGS {
        for a in ["x", "y", "z"] {
            cols.push(format!("foot{l}_{a}"));
        }
    }
    for l in 0..NUM_LEGS {
        cols.push(format!("contact{l}"));
    }
    cols
}

/// Numeric row for one frame in canonical column order (contacts as 0/1).
pub fn frame_row(t: f64, f: &ReferenceFrame) -> Vec<f64> {
    let mut row = Vec::with_capacity(33);
    row.push(t);
    for v in [&f.com_pos, &f.com_rpy, &f.com_lin_vel, &f.com_ang_vel] {
        row.extend_from_slice(v.as_slice());
    }
    for p in &f.foot_pos {
        row.extend_from_slice(p.as_slice());
    }
    row.extend(f.contact.iter().map(|&c| if c { 1.0 } else { 0.0 }));
    row
}

/// Formats an `f64` so that parsing it back yields the identical value.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

pub fn write_motion<W: Write>(motion: &ReferenceMotion, mut out: W) -> Result<()> {
    let io = |e| Error::io("<motion writer>", e);
    writeln!(
        out,
        "# {MOTION_TAG} dt={} cyclic={}",
        fmt_f64(motion.dt),
        u8::from(motion.cyclic)
    )
    .map_err(io)?;
    writeln!(out, "{}", motion_columns().join(",")).map_err(io)?;
    for (k, f) in motion.frames.iter().enumerate() {
        let row = frame_row(k as f64 * motion.dt, f);
        let cells: Vec<String> = row.iter().map(|&x| fmt_f64(x)).collect();
        writeln!(out, "{}", cells.join(",")).map_err(io)?;
    }
    Ok(())
}

pub fn save_motion(motion: &ReferenceMotion, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_motion(motion, &mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_motion(path: impl AsRef<Path>) -> Result<ReferenceMotion> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_motion(file)
}

fn parse_tag(line: &str) -> Result<(f64, bool)> {
    let body = line
        .trim()
        .strip_prefix('#')
        .map(str::trim)
        .ok_or_else(|| Error::Schema("missing `# quadmimic-motion/1` header tag".into()))?;
    let mut parts = body.split_whitespace();
    let tag = parts.next().unwrap_or("");
    if tag != MOTION_TAG && tag != LOG_TAG {
        return Err(Error::Schema(format!(
            "unsupported header tag `{tag}` (expected `{MOTION_TAG}`)"
        )));
    }
    let mut dt = None;
    let mut cyclic = false;
    for kv in parts {
        match kv.split_once('=') {
            Some(("dt", v)) => {
                dt = Some(v.parse::<f64>().map_err(|_| {
                    Error::Schema(format!("header dt `{v}` is not a number"))
                })?)
            }
            Some(("cyclic", v)) => cyclic = v == "1" || v == "true",
            _ => {}
        }
    }
    let dt = dt.ok_or_else(|| Error::Schema("header tag has no dt=".into()))?;
    Ok((dt, cyclic))
}

/// Reads a motion CSV. Extra columns (e.g. from trajectory logs) are ignored.
pub fn read_motion<R: Read>(input: R) -> Result<ReferenceMotion> {
    let mut reader = BufReader::new(input);
    let mut first = String::new();
    reader
        .read_line(&mut first)
        .map_err(|e| Error::io("<motion reader>", e))?;
    let (dt, cyclic) = parse_tag(&first)?;

    let mut csv = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = csv
        .headers()
        .map_err(|e| Error::Schema(format!("unreadable column header: {e}")))?
        .clone();
    let cols = motion_columns();
    let index: Vec<usize> = cols
        .iter()
        .map(|c| {
            headers
                .iter()
                .position(|h| h == c)
                .ok_or_else(|| Error::Schema(format!("missing column `{c}`")))
        })
        .collect::<Result<_>>()?;

    let mut frames = Vec::new();
    for (row_idx, rec) in csv.records().enumerate() {
        let rec = rec.map_err(|e| Error::Schema(format!("row {row_idx}: {e}")))?;
        let mut vals = [0.0f64; 33];
        for (slot, (&ci, name)) in index.iter().zip(&cols).enumerate() {
            let cell = rec.get(ci).ok_or_else(|| {
                Error::Schema(format!("row {row_idx}: missing value for `{name}`"))
            })?;
            let v: f64 = cell.parse().map_err(|_| Error::Unit {
                row: row_idx,
                column: name.clone(),
                message: format!("`{cell}` is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Unit {
                    row: row_idx,
                    column: name.clone(),
                    message: format!("non-finite value `{cell}`"),
                });
            }
            vals[slot] = v;
        }
        let v3 = |o: usize| Vec3::new(vals[o], vals[o + 1], vals[o + 2]);
        frames.push(ReferenceFrame {
            com_pos: v3(1),
            com_rpy: v3(4),
            com_lin_vel: v3(7),
            com_ang_vel: v3(10),
            foot_pos: std::array::from_fn(|l| v3(13 + 3 * l)),
            contact: std::array::from_fn(|l| vals[25 + l] > 0.5),
        });
    }
    ReferenceMotion::new(dt, frames, cyclic)
}

// ---------------------------------------------------------------------------
// Gait synthesis
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Deserialize, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum GaitKind {
    Trot,
    Pace,
    Turn,
    SideStep,
}

impl GaitKind {
    pub const ALL: [GaitKind; 4] = [GaitKind::Trot, GaitKind::Pace, GaitKind::Turn, GaitKind::SideStep];

    /// Phase offset of each leg within the cycle.
    pub fn phase_offsets(self) -> [f64; NUM_LEGS] {
        match self {
            // diagonal pairs FR+RL, FL+RR
            GaitKind::Trot | GaitKind::Turn | GaitKind::SideStep => [0.0, 0.5, 0.5, 0.0],
            // lateral pairs FR+RR, FL+RL
            GaitKind::Pace => [0.0, 0.5, 0.0, 0.5],
        }
    }
}

impl fmt::Display for GaitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GaitKind::Trot => "trot",
            GaitKind::Pace => "pace",
            GaitKind::Turn => "turn",
            GaitKind::SideStep => "side-step",
        })
    }
}

impl FromStr for GaitKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "trot" => Ok(GaitKind::Trot),
            "pace" => Ok(GaitKind::Pace),
            "turn" => Ok(GaitKind::Turn),
            "side-step" | "sidestep" | "side_step" => Ok(GaitKind::SideStep),
            other => Err(Error::spec(
                "gait",
                format!("unknown gait `{other}` (trot|pace|turn|side-step)"),
            )),
        }
    }
}

/// Parameters of a synthesized gait.
///
/// `speed` is forward speed for trot, pace and turn, lateral speed for
/// side-step. `yaw_rate` is only used by turn.
#[derive(Clone, Copy, Debug, PartialEq, serde::Deserialize, serde::Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaitSpec {
    pub gait: GaitKind,
    pub speed: f64,
    pub yaw_rate: f64,
    pub stance_height: f64,
    pub duty_factor: f64,
    pub step_frequency: f64,
    pub clearance: f64,
    pub frame_dt: f64,
}

impl Default for GaitSpec {
    fn default() -> Self {
        Self {
            gait: GaitKind::Trot,
            speed: 0.4,
            yaw_rate: 0.0,
            stance_height: 0.28,
            duty_factor: 0.6,
            step_frequency: 2.0,
            clearance: 0.08,
            frame_dt: 0.01,
        }
    }
}

impl GaitSpec {
    pub fn new(gait: GaitKind) -> Self {
        let mut s = Self {
            gait,
            ..Self::default()
        };
        match gait {
            GaitKind::Turn => {
                s.speed = 0.1;
                s.yaw_rate = 0.5;
            }
            GaitKind::SideStep => s.speed = 0.2,
            _ => {}
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        let check = |name: &str, v: f64, lo: f64, hi: f64| {
            if v.is_finite() && v >= lo && v <= hi {
                Ok(())
            } else {
                Err(Error::spec(name, format!("{v} outside [{lo}, {hi}]")))
            }
        };
        check("speed", self.speed, -1.5, 1.5)?;
        check("yaw-rate", self.yaw_rate, -1.5, 1.5)?;
        check("stance-height", self.stance_height, 0.18, 0.34)?;
        check("duty-factor", self.duty_factor, 0.35, 0.85)?;
        check("step-frequency", self.step_frequency, 0.5, 5.0)?;
        check("clearance", self.clearance, 0.0, 0.15)?;
        check("frame-dt", self.frame_dt, 1e-4, 0.05)?;
        Ok(())
    }

    /// Commanded body velocity (vx, vy) in the robot frame and yaw rate.
    pub fn body_twist(&self) -> (Vec3, f64) {
        match self.gait {
            GaitKind::Trot | GaitKind::Pace => (Vec3::new(self.speed, 0.0, 0.0), 0.0),
            GaitKind::Turn => (Vec3::new(self.speed, 0.0, 0.0), self.yaw_rate),
            GaitKind::SideStep => (Vec3::new(0.0, self.speed, 0.0), 0.0),
        }
    }
}

/// Planar CoM displacement after time `t` under constant robot-frame twist.
fn integrate_twist(v: &Vec3, omega: f64, t: f64) -> Vec3 {
    if omega.abs() < 1e-12 {
        return Vec3::new(v.x * t, v.y * t, 0.0);
    }
    let (s, c) = (omega * t).sin_cos();
    Vec3::new(
        (s * v.x - (1.0 - c) * v.y) / omega,
        ((1.0 - c) * v.x + s * v.y) / omega,
        0.0,
    )
}

/// Robot-frame stance foot position `tau` seconds after mid-stance, for a foot
/// that is at `mid` at mid-stance and fixed in the world.
fn stance_path(mid: &Vec3, v: &Vec3, omega: f64, tau: f64) -> Vec3 {
    if omega.abs() < 1e-12 {
        return Vec3::new(mid.x - v.x * tau, mid.y - v.y * tau, mid.z);
    }
    let c = Vec3::new(-v.y / omega, v.x / omega, 0.0);
    let rel = Vec3::new(mid.x - c.x, mid.y - c.y, 0.0);
    let rot = yaw_rotation(-omega * tau) * rel;
    Vec3::new(c.x + rot.x, c.y + rot.y, mid.z)
}

/// Procedural stand-in for retargeted animal motion: one cyclic period of the
/// requested gait with half-sine swing height profiles.
pub fn synthesize_gait(spec: &GaitSpec, model: &RobotModel) -> Result<ReferenceMotion> {
    spec.validate()?;
    let period = 1.0 / spec.step_frequency;
    let n = (period / spec.frame_dt).round().max(4.0) as usize;
    let dt = period / n as f64;
    let (v, omega) = spec.body_twist();
    let offsets = spec.gait.phase_offsets();
    let duty = spec.duty_factor;
    let stance_time = duty * period;
    let h = spec.stance_height;

    let frames = (0..=n)
        .map(|j| {
            let t = j as f64 * dt;
            let yaw = omega * t;
            let rot = yaw_rotation(yaw);
            let disp = integrate_twist(&v, omega, t);
            let mut frame = ReferenceFrame {
                com_pos: Vec3::new(disp.x, disp.y, h),
                com_rpy: Vec3::new(0.0, 0.0, yaw),
                com_lin_vel: rot * v,
                com_ang_vel: Vec3::new(0.0, 0.0, omega),
                ..Default::default()
            };
            let base_phase = (j % n) as f64 / n as f64;
            for leg in Leg::ALL {
                let li = leg.index();
                let mid = model.neutral_foot(leg, h);
                let phase = (base_phase + offsets[li]).rem_euclid(1.0);
                if phase < duty {
                    let tau = (phase - 0.5 * duty) * period;
                    frame.foot_pos[li] = stance_path(&mid, &v, omega, tau);
                    frame.contact[li] = true;
                } else {
                    let s = (phase - duty) / (1.0 - duty);
                    let lift = stance_path(&mid, &v, omega, 0.5 * stance_time);
                    let land = stance_path(&mid, &v, omega, -0.5 * stance_time);
                    let blend = 0.5 * (1.0 - (PI * s).cos());
                    let mut p = lift + (land - lift) * blend;
                    p.z = -h + spec.clearance * (PI * s).sin();
                    frame.foot_pos[li] = p;
                    frame.contact[li] = false;
                }
            }
            frame
        })
        .collect();
    ReferenceMotion::new(dt, frames, true)
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub enum Diagnostic {
    /// Foot target outside the leg workspace.
    Workspace { frame: usize, leg: Leg },
    /// Stance foot off the ground, or swing foot below it.
    Height {
        frame: usize,
        leg: Leg,
        height: f64,
        in_contact: bool,
    },
    /// Stored velocity disagrees with the finite-difference velocity.
    Velocity {
        frame: usize,
        field: &'static str,
        stored: f64,
        finite_difference: f64,
    },
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub diagnostics: Vec<Diagnostic>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.diagnostics.is_empty()
    }

    pub fn count(&self, pred: impl Fn(&Diagnostic) -> bool) -> usize {
        self.diagnostics.iter().filter(|d| pred(d)).count()
    }
}

/// Tolerance on stance foot height above ground, m.
pub const CONTACT_HEIGHT_TOL: f64 = 0.02;
/// Relative tolerance for velocity / finite-difference agreement.
pub const VELOCITY_REL_TOL: f64 = 0.10;
const VELOCITY_ABS_TOL: f64 = 1e-3;

/// Checks a motion against the robot and reports every inconsistency found.
/// Ground is the plane z = 0.
pub fn validate(motion: &ReferenceMotion, model: &RobotModel) -> ValidationReport {
    let mut report = ValidationReport::default();
    let frames = &motion.frames;
    for (k, f) in frames.iter().enumerate() {
        for leg in Leg::ALL {
            let body = f.foot_body(leg);
            if model.inverse_kinematics(leg, &body).out_of_reach {
                report.diagnostics.push(Diagnostic::Workspace { frame: k, leg });
            }
            let z = f.foot_world_z(leg);
            let contact = f.contact[leg.index()];
            if (contact && z.abs() > CONTACT_HEIGHT_TOL) || (!contact && z < -CONTACT_HEIGHT_TOL) {
                report.diagnostics.push(Diagnostic::Height {
                    frame: k,
                    leg,
                    height: z,
                    in_contact: contact,
                });
            }
        }
    }

    let n = frames.len();
    let dt = motion.dt;
    for k in 0..n {
        // central differences inside, one-sided at the ends
        let (a, b, span) = if k == 0 {
            (0, 1, dt)
        } else if k == n - 1 {
            (n - 2, n - 1, dt)
        } else {
            (k - 1, k + 1, 2.0 * dt)
        };
        let fd = (frames[b].com_pos - frames[a].com_pos) / span;
        let yaw_fd = (frames[b].com_rpy.z - frames[a].com_rpy.z) / span;
        let stored = frames[k].com_lin_vel;
        let checks = [
            ("com_vx", stored.x, fd.x),
            ("com_vy", stored.y, fd.y),
            ("com_vz", stored.z, fd.z),
            ("com_wz", frames[k].com_ang_vel.z, yaw_fd),
        ];
        for (field, s, d) in checks {
            let tol = VELOCITY_REL_TOL * s.abs().max(d.abs()) + VELOCITY_ABS_TOL;
            if (s - d).abs() > tol {
                report.diagnostics.push(Diagnostic::Velocity {
                    frame: k,
                    field,
                    stored: s,
                    finite_difference: d,
                });
            }
        }
    }
    report
}

/// Yaw of a frame wrapped to `(-pi, pi]`, for display.
pub fn heading(frame: &ReferenceFrame) -> f64 {
    wrap_angle(frame.com_rpy.z)
}
