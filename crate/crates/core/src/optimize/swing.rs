//! Swing-height optimization of fitted DMPs, and motion stitching.

use std::io::Write;
use std::path::Path;

use super::cmaes::{cma_es, Bounds, CmaConfig, IterRecord};
use super::episode::{EpisodeConfig, EpisodeRunner};
use crate::dmp::{foot_z_channel, DmpSet, NUM_CHANNELS};
use crate::error::{Error, Result};
use crate::motion::{fmt_f64, PlanarTransform, ReferenceMotion};
use crate::robot::NUM_LEGS;

/// Decision variables per motion segment: (g, a) for each foot-z channel.
pub const SWING_DIMS: usize = 2 * NUM_LEGS;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SwingZConfig {
    pub cma: CmaConfig,
    pub a_min: f64,
    pub a_max: f64,
    /// Allowed baseline shift around the fitted value, m.
    pub g_radius: f64,
    pub episode: EpisodeConfig,
}

impl Default for SwingZConfig {
    fn default() -> Self {
        Self {
            cma: CmaConfig::default(),
            a_min: 0.25,
            a_max: 4.0,
            g_radius: 0.1,
            episode: EpisodeConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SwingZResult {
    pub sets: Vec<DmpSet>,
    pub motion: ReferenceMotion,
    pub best_x: Vec<f64>,
    /// Reward of the first seed candidate.
    pub initial_reward: f64,
    pub best_reward: f64,
    /// Reward-valued history (best and mean are rewards, not costs).
    pub history: Vec<IterRecord>,
}

/// Per-segment pieces of the reference being optimized.
struct Segment<'s> {
    set: &'s DmpSet,
    cycles: usize,
    frozen: Vec<Vec<f64>>,
}

impl<'s> Segment<'s> {
    fn new(set: &'s DmpSet, cycles: usize) -> Self {
        let frozen = (0..NUM_CHANNELS)
            .map(|ch| {
                if (0..NUM_LEGS).any(|l| foot_z_channel(l) == ch) {
                    Vec::new()
                } else {
                    set.channel_cycle(ch)
                }
            })
            .collect();
        Self { set, cycles, frozen }
    }

    /// One cyclic period (or `cycles` unrolled periods when `unroll`).
    fn motion(&self, x: &[f64], unroll: bool) -> Result<ReferenceMotion> {
        let set = self.set.with_swing_z(x);
        let mut cycles = self.frozen.clone();
        for l in 0..NUM_LEGS {
            let ch = foot_z_channel(l);
            cycles[ch] = set.channel_cycle(ch);
        }
        let m = set.motion_from_cycles(&cycles)?;
        if unroll {
            m.unroll(self.cycles)
        } else {
            Ok(m)
        }
    }
}

fn segment_bounds(set: &DmpSet, cfg: &SwingZConfig) -> (Vec<f64>, Vec<f64>) {
    let x = set.swing_z_params();
    let mut lo = Vec::with_capacity(SWING_DIMS);
    let mut hi = Vec::with_capacity(SWING_DIMS);
    for l in 0..NUM_LEGS {
        lo.push(x[2 * l] - cfg.g_radius);
        hi.push(x[2 * l] + cfg.g_radius);
        lo.push(cfg.a_min);
        hi.push(cfg.a_max);
    }
    (lo, hi)
}

fn to_rewards(history: Vec<IterRecord>) -> Vec<IterRecord> {
    history
        .into_iter()
        .map(|h| IterRecord {
            best: -h.best,
            mean: -h.mean,
            ..h
        })
        .collect()
}

fn run_optimization(
    segments: &[Segment],
    source: &ReferenceMotion,
    runner: &EpisodeRunner,
    seeds: Vec<Vec<f64>>,
    cfg: &SwingZConfig,
) -> Result<SwingZResult> {
    let unroll = segments.len() > 1 || !source.cyclic;
    let build = |x: &[f64]| -> Result<ReferenceMotion> {
        let parts = segments
            .iter()
            .enumerate()
            .map(|(i, s)| s.motion(&x[i * SWING_DIMS..(i + 1) * SWING_DIMS], unroll))
            .collect::<Result<Vec<_>>>()?;
        if parts.len() == 1 {
            Ok(parts.into_iter().next().expect("one part"))
        } else {
            stitch(&parts.iter().collect::<Vec<_>>())
        }
    };
    let mut lo = Vec::new();
    let mut hi = Vec::new();
    for s in segments {
        let (l, h) = segment_bounds(s.set, cfg);
        lo.extend(l);
        hi.extend(h);
    }
    // the search runs on the unit box so one step size fits metres and ratios
    let to_x = |u: &[f64]| -> Vec<f64> {
        u.iter().zip(lo.iter().zip(&hi)).map(|(u, (l, h))| l + u * (h - l)).collect()
    };
    let to_u = |x: &[f64]| -> Vec<f64> {
        x.iter().zip(lo.iter().zip(&hi)).map(|(x, (l, h))| (x - l) / (h - l)).collect()
    };
    let objective = |u: &[f64]| -> f64 {
        match build(&to_x(u)).and_then(|m| runner.run(&m, Some(source), &cfg.episode)) {
            Ok(r) => -r.total,
            Err(_) => f64::INFINITY,
        }
    };
    let dims = lo.len();
    let unit = Bounds::new(vec![0.0; dims], vec![1.0; dims])?;
    let useeds: Vec<Vec<f64>> = seeds.iter().map(|x| to_u(x)).collect();
    let initial_reward = -objective(&useeds[0]);
    let u0 = useeds.last().expect("at least one seed").clone();
    let mut r = cma_es(objective, &u0, Some(&unit), &useeds, &cfg.cma)?;
    r.best_x = to_x(&r.best_x);

    let sets = segments
        .iter()
        .enumerate()
        .map(|(i, s)| s.set.with_swing_z(&r.best_x[i * SWING_DIMS..(i + 1) * SWING_DIMS]))
        .collect();
    Ok(SwingZResult {
        sets,
        motion: build(&r.best_x)?,
        best_x: r.best_x,
        initial_reward,
        best_reward: -r.best_f,
        history: to_rewards(r.history),
    })
}

/// Optimizes the four foot-z (g, a) pairs of `set`, scoring the tracked
/// motion against `source`. The unmodified fit is the first candidate.
pub fn optimize_swing_z(
    set: &DmpSet,
    source: &ReferenceMotion,
    runner: &EpisodeRunner,
    cfg: &SwingZConfig,
) -> Result<SwingZResult> {
    let seg = Segment::new(set, 1);
    run_optimization(&[seg], source, runner, vec![set.swing_z_params().to_vec()], cfg)
}

/// Concatenates motions, moving each one rigidly (yaw and horizontal
/// translation) so that it starts where the previous one ends. The seam frame
/// appears once.
pub fn stitch(motions: &[&ReferenceMotion]) -> Result<ReferenceMotion> {
    let first = motions
        .first()
        .ok_or_else(|| Error::IncompatibleMotions("nothing to stitch".into()))?;
    let dt = first.dt;
    for m in motions {
        if (m.dt - dt).abs() > 1e-12 * dt {
            return Err(Error::IncompatibleMotions(format!(
                "frame spacing {} differs from {}",
                m.dt, dt
            )));
        }
    }
    let mut frames = first.frames.clone();
    for m in &motions[1..] {
        let end = *frames.last().expect("non-empty");
        let t = PlanarTransform::between(&m.frames[0], &end);
        frames.extend(m.frames[1..].iter().map(|f| t.apply(f)));
    }
    let cyclic = motions.len() == 1 && first.cyclic;
    ReferenceMotion::new(dt, frames, cyclic)
}

/// Jointly optimizes the swing-z parameters of every segment of a stitched
/// motion. Each segment is unrolled `cycles[i]` times; `warm` holds per-segment
/// starting points (typically the individual optima).
pub fn optimize_stitched(
    sets: &[DmpSet],
    cycles: &[usize],
    warm: &[Vec<f64>],
    source: &ReferenceMotion,
    runner: &EpisodeRunner,
    cfg: &SwingZConfig,
) -> Result<SwingZResult> {
    if sets.is_empty() || sets.len() != cycles.len() || sets.len() != warm.len() {
        return Err(Error::spec("segments", "sets, cycles and warm starts must pair up"));
    }
    if warm.iter().any(|w| w.len() != SWING_DIMS) {
        return Err(Error::spec("warm", format!("each warm start needs {SWING_DIMS} values")));
    }
    let segments: Vec<_> = sets.iter().zip(cycles).map(|(s, &c)| Segment::new(s, c)).collect();
    let plain: Vec<f64> = sets.iter().flat_map(|s| s.swing_z_params()).collect();
    let warm: Vec<f64> = warm.iter().flatten().copied().collect();
    run_optimization(&segments, source, runner, vec![plain, warm], cfg)
}

/// Stitches the unmodified sources of a segment list, each unrolled.
pub fn stitch_sources(sources: &[&ReferenceMotion], cycles: &[usize]) -> Result<ReferenceMotion> {
    let unrolled = sources
        .iter()
        .zip(cycles)
        .map(|(m, &c)| m.unroll(c))
        .collect::<Result<Vec<_>>>()?;
    stitch(&unrolled.iter().collect::<Vec<_>>())
}

pub const REPORT_HEADER: &str = "iteration,evaluations,best_reward,mean_reward,sigma";

pub fn write_history<W: Write>(history: &[IterRecord], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{REPORT_HEADER}")?;
    for h in history {
        writeln!(
            out,
            "{},{},{},{},{}",
            h.iteration,
            h.evaluations,
            fmt_f64(h.best),
            fmt_f64(h.mean),
            fmt_f64(h.sigma)
        )?;
    }
    Ok(())
}

pub fn save_history(history: &[IterRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_history(history, std::io::BufWriter::new(file)).map_err(|e| Error::io(path, e))
}
