//! Rhythmic dynamic movement primitives.
//!
//! Each channel follows
//!
//! ```text
//! y'' = alpha_z (beta_z (g - y) - y') + a f(phi),   phi' = 2 pi / period
//! f(phi) = sum_i psi_i(phi) w_i / sum_i psi_i(phi)
//! psi_i(phi) = exp(h (cos(phi - c_i) - 1))
//! ```
//!
//! A reference motion maps to 24 channels that are exactly periodic for a
//! cyclic motion: CoM position and yaw relative to a nominal frame moving with
//! the cycle's average twist, CoM height, roll and pitch, CoM linear and angular
//! velocity in the robot frame, and the four robot-frame foot positions.

use std::f64::consts::TAU;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geom::{wrap_angle, yaw_rotation, Vec3};
use crate::motion::{ReferenceFrame, ReferenceMotion};
use crate::robot::NUM_LEGS;

pub const NUM_CHANNELS: usize = 24;
pub const DEFAULT_BASES: usize = 100;
pub const DMP_SCHEMA: &str = "quadmimic-dmp/1";
/// Channels below this peak-to-peak amplitude are fit as constants.
pub const DEGENERATE_FLOOR: f64 = 1e-6;

pub const CHANNEL_NAMES: [&str; NUM_CHANNELS] = [
    "com_x", "com_y", "com_z", "com_roll", "com_pitch", "com_yaw", "com_vx", "com_vy", "com_vz",
    "com_wx", "com_wy", "com_wz", "foot0_x", "foot0_y", "foot0_z", "foot1_x", "foot1_y", "foot1_z",
    "foot2_x", "foot2_y", "foot2_z", "foot3_x", "foot3_y", "foot3_z",
];

/// Channel index of a leg's vertical foot coordinate.
pub fn foot_z_channel(leg: usize) -> usize {
    12 + 3 * leg + 2
}

#[derive(Clone, Debug, PartialEq, serde::Deserialize, serde::Serialize)]
pub struct DmpParams {
    pub weights: Vec<f64>,
    pub g: f64,
    pub a: f64,
    pub period: f64,
    pub alpha_z: f64,
    pub beta_z: f64,
    pub centers: Vec<f64>,
    /// Von Mises concentration shared by all bases.
    pub width: f64,
    /// Demonstration state at phase zero, used as the default rollout start.
    pub y0: f64,
    pub yd0: f64,
    pub degenerate: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitOptions {
    pub n_basis: usize,
    pub alpha_z: f64,
    pub beta_z: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            n_basis: DEFAULT_BASES,
            alpha_z: 25.0,
            beta_z: 6.25,
        }
    }
}

/// Concentration giving activation 0.5 at the neighbouring center.
pub fn basis_width(n_basis: usize) -> f64 {
    std::f64::consts::LN_2 / (1.0 - (TAU / n_basis as f64).cos())
}

impl DmpParams {
    pub fn n_basis(&self) -> usize {
        self.weights.len()
    }

    pub fn activations(&self, phi: f64) -> Vec<f64> {
        self.centers
            .iter()
            .map(|c| (self.width * ((phi - c).cos() - 1.0)).exp())
            .collect()
    }

    /// Normalized forcing term f(phi), without the amplitude factor.
    pub fn forcing(&self, phi: f64) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for (c, w) in self.centers.iter().zip(&self.weights) {
            let psi = (self.width * ((phi - c).cos() - 1.0)).exp();
            num += psi * w;
            den += psi;
        }
        if den > 0.0 {
            num / den
        } else {
            0.0
        }
    }

    /// Copy with new baseline and amplitude; weights and period untouched.
    pub fn modulate(&self, g: f64, a: f64) -> DmpParams {
        DmpParams {
            g,
            a,
            ..self.clone()
        }
    }

    fn accel(&self, y: f64, yd: f64, f: f64) -> f64 {
        self.alpha_z * (self.beta_z * (self.g - y) - yd) + self.a * f
    }

    /// RK4 integration of `steps` steps of `dt` from `(y, yd)` at phase zero.
    /// Returns `steps + 1` positions and velocities.
    pub fn rollout_from(&self, y: f64, yd: f64, dt: f64, steps: usize) -> (Vec<f64>, Vec<f64>) {
        let omega = TAU / self.period;
        let mut ys = Vec::with_capacity(steps + 1);
        let mut vs = Vec::with_capacity(steps + 1);
        let (mut y, mut v) = (y, yd);
        ys.push(y);
        vs.push(v);
        let zero_forcing = self.a == 0.0 || self.degenerate;
        let mut cache = ForcingCache::new(self, dt, omega);
        for k in 0..steps {
            let (f0, fh, f1) = if zero_forcing {
                (0.0, 0.0, 0.0)
            } else {
                (cache.get(2 * k), cache.get(2 * k + 1), cache.get(2 * k + 2))
            };
            let k1y = v;
            let k1v = self.accel(y, v, f0);
            let k2y = v + 0.5 * dt * k1v;
            let k2v = self.accel(y + 0.5 * dt * k1y, k2y, fh);
            let k3y = v + 0.5 * dt * k2v;
            let k3v = self.accel(y + 0.5 * dt * k2y, k3y, fh);
            let k4y = v + dt * k3v;
            let k4v = self.accel(y + dt * k3y, k4y, f1);
            y += dt / 6.0 * (k1y + 2.0 * k2y + 2.0 * k3y + k4y);
            v += dt / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
            ys.push(y);
            vs.push(v);
        }
        (ys, vs)
    }

    /// Rollout over `duration` seconds from the demonstration's start state.
    pub fn rollout(&self, duration: f64, dt: f64) -> Vec<f64> {
        let steps = (duration / dt).round() as usize;
        self.rollout_from(self.y0, self.yd0, dt, steps).0
    }
}

/// Forcing values on the half-step grid, reused across periods when the
/// period is a whole number of half steps.
struct ForcingCache<'a> {
    params: &'a DmpParams,
    half_dt: f64,
    omega: f64,
    table: Vec<Option<f64>>,
}

impl<'a> ForcingCache<'a> {
    fn new(params: &'a DmpParams, dt: f64, omega: f64) -> Self {
        let half = params.period / (0.5 * dt);
        let n = half.round();
        let table = if (half - n).abs() < 1e-9 && n >= 1.0 {
            vec![None; n as usize]
        } else {
            Vec::new()
        };
        Self {
            params,
            half_dt: 0.5 * dt,
            omega,
            table,
        }
    }

    fn get(&mut self, half_step: usize) -> f64 {
        if self.table.is_empty() {
            return self.params.forcing(self.omega * half_step as f64 * self.half_dt);
        }
        let i = half_step % self.table.len();
        if let Some(v) = self.table[i] {
            return v;
        }
        let v = self.params.forcing(self.omega * i as f64 * self.half_dt);
        self.table[i] = Some(v);
        v
    }
}

/// Fits one periodic channel sampled at `dt` over exactly one period
/// (`samples.len() * dt == period`; the sample at `period` is not included).
pub fn fit(samples: &[f64], dt: f64, period: f64, opts: &FitOptions) -> Result<DmpParams> {
    let n = samples.len();
    if n < 4 {
        return Err(Error::spec("samples", "need at least four samples per period"));
    }
    if !((n as f64 * dt - period).abs() <= 1e-6 * period) {
        return Err(Error::spec(
            "period",
            format!("{n} samples at dt {dt} do not span the period {period}"),
        ));
    }
    if let Some(k) = samples.iter().position(|v| !v.is_finite()) {
        return Err(Error::spec("samples", format!("non-finite value at sample {k}")));
    }
    let centers: Vec<f64> = (0..opts.n_basis)
        .map(|i| TAU * i as f64 / opts.n_basis as f64)
        .collect();
    let width = basis_width(opts.n_basis);
    let mean = samples.iter().sum::<f64>() / n as f64;
    let (lo, hi) = samples
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let vel = |k: usize| (samples[(k + 1) % n] - samples[(k + n - 1) % n]) / (2.0 * dt);
    let mut params = DmpParams {
        weights: vec![0.0; opts.n_basis],
        g: mean,
        a: 1.0,
        period,
        alpha_z: opts.alpha_z,
        beta_z: opts.beta_z,
        centers,
        width,
        y0: samples[0],
        yd0: vel(0),
        degenerate: false,
    };
    if hi - lo < DEGENERATE_FLOOR {
        params.degenerate = true;
        params.y0 = mean;
        params.yd0 = 0.0;
        return Ok(params);
    }

    // forcing target from cyclic central differences
    let target: Vec<f64> = (0..n)
        .map(|k| {
            let y = samples[k];
            let acc = (samples[(k + 1) % n] - 2.0 * y + samples[(k + n - 1) % n]) / (dt * dt);
            acc - opts.alpha_z * (opts.beta_z * (mean - y) - vel(k))
        })
        .collect();
    let omega = TAU / period;
    let mut num = vec![0.0; opts.n_basis];
    let mut den = vec![0.0; opts.n_basis];
    for (k, f) in target.iter().enumerate() {
        let psi = params.activations(omega * k as f64 * dt);
        for i in 0..opts.n_basis {
            num[i] += psi[i] * f;
            den[i] += psi[i];
        }
    }
    for i in 0..opts.n_basis {
        params.weights[i] = if den[i] > 0.0 { num[i] / den[i] } else { 0.0 };
    }
    Ok(params)
}

/// Root-mean-square difference.
pub fn rmse(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    (a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n as f64).sqrt()
}

pub fn peak_to_peak(v: &[f64]) -> f64 {
    let (lo, hi) = v
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &x| (l.min(x), h.max(x)));
    hi - lo
}

/// Constant planar twist that carries the start frame to the end of one cycle.
#[derive(Clone, Copy, Debug, PartialEq, serde::Deserialize, serde::Serialize)]
pub struct NominalFrame {
    pub x0: f64,
    pub y0: f64,
    pub yaw0: f64,
    /// Robot-frame planar velocity and yaw rate of the nominal frame.
    pub vx: f64,
    pub vy: f64,
    pub yaw_rate: f64,
}

impl NominalFrame {
    fn displacement(vx: f64, vy: f64, w: f64, t: f64) -> (f64, f64) {
        if w.abs() < 1e-12 {
            return (vx * t, vy * t);
        }
        let (s, c) = (w * t).sin_cos();
        ((s * vx - (1.0 - c) * vy) / w, ((1.0 - c) * vx + s * vy) / w)
    }

    pub fn from_motion(motion: &ReferenceMotion) -> Self {
        let first = &motion.frames[0];
        let last = motion.frames.last().expect("motion has frames");
        let t = motion.duration();
        let yaw0 = first.com_rpy.z;
        let w = (last.com_rpy.z - yaw0) / t;
        let d = yaw_rotation(yaw0).transpose() * (last.com_pos - first.com_pos);
        // solve M v = d with M the displacement map of a constant twist
        let (vx, vy) = if w.abs() < 1e-12 {
            (d.x / t, d.y / t)
        } else {
            let (s, c) = (w * t).sin_cos();
            let (m00, m01, m10, m11) = (s / w, -(1.0 - c) / w, (1.0 - c) / w, s / w);
            let det = m00 * m11 - m01 * m10;
            ((m11 * d.x - m01 * d.y) / det, (-m10 * d.x + m00 * d.y) / det)
        };
        Self {
            x0: first.com_pos.x,
            y0: first.com_pos.y,
            yaw0,
            vx,
            vy,
            yaw_rate: w,
        }
    }

    /// Nominal planar position and yaw at time `t`.
    pub fn at(&self, t: f64) -> (Vec3, f64) {
        let (dx, dy) = Self::displacement(self.vx, self.vy, self.yaw_rate, t);
        let p = Vec3::new(self.x0, self.y0, 0.0) + yaw_rotation(self.yaw0) * Vec3::new(dx, dy, 0.0);
        (p, self.yaw0 + self.yaw_rate * t)
    }
}

/// Channel values of one frame at time `t`.
pub fn frame_channels(frame: &ReferenceFrame, nominal: &NominalFrame, t: f64) -> [f64; NUM_CHANNELS] {
    let (p, yaw_n) = nominal.at(t);
    let rel = yaw_rotation(yaw_n).transpose() * (frame.com_pos - p);
    let ryaw = yaw_rotation(frame.com_rpy.z).transpose();
    let v = ryaw * frame.com_lin_vel;
    let w = ryaw * frame.com_ang_vel;
    let mut c = [0.0; NUM_CHANNELS];
    c[0] = rel.x;
    c[1] = rel.y;
    c[2] = frame.com_pos.z;
    c[3] = frame.com_rpy.x;
    c[4] = frame.com_rpy.y;
    c[5] = wrap_angle(frame.com_rpy.z - yaw_n);
    c[6..9].copy_from_slice(v.as_slice());
    c[9..12].copy_from_slice(w.as_slice());
    for l in 0..NUM_LEGS {
        c[12 + 3 * l..15 + 3 * l].copy_from_slice(frame.foot_pos[l].as_slice());
    }
    c
}

/// Inverse of [`frame_channels`]; contact flags are supplied separately.
pub fn channels_frame(
    c: &[f64; NUM_CHANNELS],
    nominal: &NominalFrame,
    t: f64,
    contact: [bool; NUM_LEGS],
) -> ReferenceFrame {
    let (p, yaw_n) = nominal.at(t);
    let pos = p + yaw_rotation(yaw_n) * Vec3::new(c[0], c[1], 0.0) + Vec3::new(0.0, 0.0, c[2]);
    let yaw = yaw_n + c[5];
    let ryaw = yaw_rotation(yaw);
    ReferenceFrame {
        com_pos: pos,
        com_rpy: Vec3::new(c[3], c[4], yaw),
        com_lin_vel: ryaw * Vec3::new(c[6], c[7], c[8]),
        com_ang_vel: ryaw * Vec3::new(c[9], c[10], c[11]),
        foot_pos: std::array::from_fn(|l| Vec3::new(c[12 + 3 * l], c[13 + 3 * l], c[14 + 3 * l])),
        contact,
    }
}

/// Twenty-four channel DMPs of one cyclic motion plus what is needed to turn
/// rollouts back into a motion.
#[derive(Clone, Debug, PartialEq, serde::Deserialize, serde::Serialize)]
pub struct DmpSet {
    pub schema: String,
    pub period: f64,
    pub nominal: NominalFrame,
    /// Frame spacing of the source motion.
    pub source_dt: f64,
    /// Contact flags of the source motion, one entry per frame of one period.
    pub contacts: Vec<[bool; NUM_LEGS]>,
    pub channels: Vec<DmpParams>,
}

/// Per-channel reconstruction error of a fit.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelReport {
    pub channel: usize,
    pub name: &'static str,
    pub rmse: f64,
    pub peak_to_peak: f64,
    pub degenerate: bool,
}

impl ChannelReport {
    /// RMSE relative to amplitude (zero for degenerate channels).
    pub fn relative(&self) -> f64 {
        if self.degenerate || self.peak_to_peak == 0.0 {
            0.0
        } else {
            self.rmse / self.peak_to_peak
        }
    }
}

/// Step used to integrate rollouts when rebuilding motions, s.
pub const ROLLOUT_DT: f64 = 0.002;
/// Burn-in before the recorded period so start transients have died out, s.
pub const BURN_IN: f64 = 2.0;

/// Fits all 24 channels of a cyclic motion.
pub fn motion_to_dmps(motion: &ReferenceMotion, opts: &FitOptions) -> Result<DmpSet> {
    if !motion.cyclic {
        return Err(Error::NotCyclic(
            "DMP fitting needs a cyclic motion with a known period".into(),
        ));
    }
    let period = motion.duration();
    let nominal = NominalFrame::from_motion(motion);
    let n = motion.len() - 1;
    let data: Vec<[f64; NUM_CHANNELS]> = (0..n)
        .map(|k| frame_channels(&motion.frames[k], &nominal, k as f64 * motion.dt))
        .collect();
    let channels = (0..NUM_CHANNELS)
        .map(|ch| {
            let samples: Vec<f64> = data.iter().map(|c| c[ch]).collect();
            fit(&samples, motion.dt, period, opts).map_err(|e| Error::Fit {
                channel: ch,
                name: CHANNEL_NAMES[ch].into(),
                message: e.to_string(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DmpSet {
        schema: DMP_SCHEMA.into(),
        period,
        nominal,
        source_dt: motion.dt,
        contacts: motion.frames[..n].iter().map(|f| f.contact).collect(),
        channels,
    })
}

impl DmpSet {
    /// Limit-cycle samples of one channel over one period at `ROLLOUT_DT`
    /// spacing, `n + 1` values with `n = period / ROLLOUT_DT`.
    pub fn channel_cycle(&self, ch: usize) -> Vec<f64> {
        let p = &self.channels[ch];
        let per = (self.period / ROLLOUT_DT).round() as usize;
        let dt = self.period / per as f64;
        let burn = (BURN_IN / self.period).ceil() as usize * per;
        let (ys, _) = p.rollout_from(p.y0, p.yd0, dt, burn + per);
        ys[burn..].to_vec()
    }

    fn contact_at(&self, t: f64) -> [bool; NUM_LEGS] {
        let n = self.contacts.len();
        let k = ((t / self.source_dt).round() as usize) % n;
        self.contacts[k]
    }

    /// Rebuilds one cyclic period with frames at the source spacing.
    pub fn to_motion(&self) -> Result<ReferenceMotion> {
        let cycles: Vec<Vec<f64>> = (0..NUM_CHANNELS).map(|ch| self.channel_cycle(ch)).collect();
        self.motion_from_cycles(&cycles)
    }

    /// Builds the motion from precomputed per-channel cycles (as produced by
    /// [`DmpSet::channel_cycle`]).
    pub fn motion_from_cycles(&self, cycles: &[Vec<f64>]) -> Result<ReferenceMotion> {
        let per = cycles[0].len() - 1;
        let n = self.contacts.len();
        let dt = self.period / n as f64;
        let frames = (0..=n)
            .map(|k| {
                let t = k as f64 * dt;
                let x = t / self.period * per as f64;
                let i = (x.floor() as usize).min(per - 1);
                let frac = x - i as f64;
                let c: [f64; NUM_CHANNELS] =
                    std::array::from_fn(|ch| cycles[ch][i] + (cycles[ch][i + 1] - cycles[ch][i]) * frac);
                channels_frame(&c, &self.nominal, t, self.contact_at(t))
            })
            .collect();
        ReferenceMotion::new(dt, frames, true)
    }

    /// Demonstration-vs-rollout error of every channel.
    pub fn reconstruction_report(&self, motion: &ReferenceMotion) -> Result<Vec<ChannelReport>> {
        let rebuilt = self.to_motion()?;
        if rebuilt.len() != motion.len() {
            return Err(Error::IncompatibleMotions(
                "reconstruction and source differ in frame count".into(),
            ));
        }
        let n = motion.len() - 1;
        let src: Vec<_> = (0..n)
            .map(|k| frame_channels(&motion.frames[k], &self.nominal, k as f64 * motion.dt))
            .collect();
        let out: Vec<_> = (0..n)
            .map(|k| frame_channels(&rebuilt.frames[k], &self.nominal, k as f64 * rebuilt.dt))
            .collect();
        Ok((0..NUM_CHANNELS)
            .map(|ch| {
                let a: Vec<f64> = src.iter().map(|c| c[ch]).collect();
                let b: Vec<f64> = out.iter().map(|c| c[ch]).collect();
                ChannelReport {
                    channel: ch,
                    name: CHANNEL_NAMES[ch],
                    rmse: rmse(&a, &b),
                    peak_to_peak: peak_to_peak(&a),
                    degenerate: self.channels[ch].degenerate,
                }
            })
            .collect())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Schema(format!("cannot encode DMP set: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let set: DmpSet =
            toml::from_str(text).map_err(|e| Error::Schema(format!("bad DMP file: {e}")))?;
        if set.schema != DMP_SCHEMA {
            return Err(Error::Schema(format!(
                "unsupported DMP schema `{}` (expected `{DMP_SCHEMA}`)",
                set.schema
            )));
        }
        if set.channels.len() != NUM_CHANNELS {
            return Err(Error::Schema(format!(
                "expected {NUM_CHANNELS} channels, found {}",
                set.channels.len()
            )));
        }
        Ok(set)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_toml()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    /// (g, a) of the four foot-z channels, interleaved per leg.
    pub fn swing_z_params(&self) -> [f64; 8] {
        let mut out = [0.0; 8];
        for l in 0..NUM_LEGS {
            let p = &self.channels[foot_z_channel(l)];
            out[2 * l] = p.g;
            out[2 * l + 1] = p.a;
        }
        out
    }

    /// Copy with the foot-z channels modulated by an interleaved (g, a) vector.
    pub fn with_swing_z(&self, x: &[f64]) -> DmpSet {
        let mut out = self.clone();
        for l in 0..NUM_LEGS {
            let ch = foot_z_channel(l);
            out.channels[ch] = self.channels[ch].modulate(x[2 * l], x[2 * l + 1]);
        }
        out
    }
}
