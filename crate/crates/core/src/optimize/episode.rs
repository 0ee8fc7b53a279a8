//! Closed-loop episode evaluation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::reward::{reference_targets, state_from_target, step_reward, RewardTerms, RewardWeights};
use crate::controller::{Controller, ControllerConfig, ControllerState, Mode};
use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::motion::ReferenceMotion;
use crate::robot::{RobotModel, NUM_LEGS};
use crate::sim::{JointCommand, SimParams, SimState, Simulator};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Termination {
    Completed,
    Fell,
    Diverged,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum EpisodeMode {
    /// Closed loop with the controller.
    #[default]
    Controller,
    /// Replay the reference as the robot state, bypassing control and physics.
    OracleReplay,
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Deserialize, serde::Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct FallCriteria {
    /// Fraction of the reference CoM height below which the robot has fallen.
    pub min_height_ratio: f64,
    pub max_tilt: f64,
}

impl Default for FallCriteria {
    fn default() -> Self {
        Self {
            min_height_ratio: 0.6,
            max_tilt: 0.8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpisodeConfig {
    pub duration: f64,
    pub seed: u64,
    /// Standard deviation of the initial CoM velocity perturbation, m/s.
    pub init_noise: f64,
    pub fall: FallCriteria,
    pub weights: RewardWeights,
    pub mode: EpisodeMode,
    /// Keep the per-tick state and command log.
    pub record: bool,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            duration: 10.0,
            seed: 0,
            init_noise: 0.0,
            fall: FallCriteria::default(),
            weights: RewardWeights::default(),
            mode: EpisodeMode::Controller,
            record: false,
        }
    }
}

/// One logged control tick.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogEntry {
    pub state: SimState,
    pub command: JointCommand,
    pub modes: [Mode; NUM_LEGS],
    pub reward: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeResult {
    /// Reward of every tick of the nominal episode, zero after a fall.
    pub rewards: Vec<f64>,
    pub components: Vec<RewardTerms>,
    /// Mean per-step reward.
    pub total: f64,
    pub termination: Termination,
    /// Ticks simulated before termination.
    pub steps_run: usize,
    pub qp_failures: usize,
    pub log: Vec<LogEntry>,
}

pub struct EpisodeRunner<'a> {
    pub model: &'a RobotModel,
    pub controller: ControllerConfig,
    pub sim: SimParams,
}

impl<'a> EpisodeRunner<'a> {
    pub fn new(model: &'a RobotModel, controller: ControllerConfig, sim: SimParams) -> Self {
        Self {
            model,
            controller,
            sim,
        }
    }

    /// Tracks `motion` and scores against `score_against` (the tracked motion
    /// itself when `None`).
    pub fn run(
        &self,
        motion: &ReferenceMotion,
        score_against: Option<&ReferenceMotion>,
        cfg: &EpisodeConfig,
    ) -> Result<EpisodeResult> {
        self.controller.validate()?;
        let sim = Simulator::new(self.model.clone(), self.sim)?;
        let dt = self.controller.dt;
        let n = (cfg.duration / dt).round() as usize;
        if n == 0 {
            return Err(Error::spec("duration", "episode shorter than one control tick"));
        }
        let substeps = (dt / self.sim.dt).round().max(1.0) as usize;
        if ((substeps as f64) * self.sim.dt - dt).abs() > 1e-12 {
            return Err(Error::spec(
                "dt",
                "control period must be a whole multiple of the simulation step",
            ));
        }
        let scoring = score_against.unwrap_or(motion);
        let targets = reference_targets(scoring, self.model, dt, n)?;

        let mut result = EpisodeResult {
            rewards: vec![0.0; n],
            components: vec![RewardTerms::default(); n],
            total: 0.0,
            termination: Termination::Completed,
            steps_run: 0,
            qp_failures: 0,
            log: Vec::new(),
        };

        if cfg.mode == EpisodeMode::OracleReplay {
            for k in 0..n {
                let t = &targets[k + 1];
                let s = state_from_target(t, (k + 1) as f64 * dt);
                let r = step_reward(t, &s, self.model, &cfg.weights);
                result.rewards[k] = r.total;
                result.components[k] = r;
                if cfg.record {
                    result.log.push(LogEntry {
                        state: s,
                        command: JointCommand::default(),
                        modes: t.frame.contact.map(|c| if c { Mode::Stance } else { Mode::Swing }),
                        reward: r.total,
                    });
                }
            }
            result.steps_run = n;
            result.total = result.rewards.iter().sum::<f64>() / n as f64;
            return Ok(result);
        }

        let first = motion.sample(0.0)?;
        let mut state = sim.reset_to(&first);
        if cfg.init_noise > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let normal = Normal::new(0.0, cfg.init_noise).expect("finite noise");
            state.com_lin_vel += Vec3::from_fn(|_, _| normal.sample(&mut rng));
        }
        let ctrl = Controller::new(self.model, self.controller);
        let mut cs = ControllerState::new(&first, &self.controller);

        'ticks: for k in 0..n {
            let t = k as f64 * dt;
            let (cmd, info) = ctrl.control_step(&state, motion, t, &mut cs)?;
            for _ in 0..substeps {
                match sim.step(&state, &cmd) {
                    Ok(s) => state = s,
                    Err(Error::Diverged { .. }) => {
                        result.termination = Termination::Diverged;
                        result.steps_run = k;
                        break 'ticks;
                    }
                    Err(e) => return Err(e),
                }
            }
            let target = &targets[k + 1];
            let r = step_reward(target, &state, self.model, &cfg.weights);
            result.rewards[k] = r.total;
            result.components[k] = r;
            result.steps_run = k + 1;
            if cfg.record {
                result.log.push(LogEntry {
                    state,
                    command: cmd,
                    modes: info.modes,
                    reward: r.total,
                });
            }
            let fell = state.com_pos.z < cfg.fall.min_height_ratio * target.frame.com_pos.z
                || state.com_rpy.x.abs() > cfg.fall.max_tilt
                || state.com_rpy.y.abs() > cfg.fall.max_tilt;
            if fell {
                result.termination = Termination::Fell;
                break;
            }
        }
        // ticks after a fall or divergence keep their zero reward
        result.qp_failures = cs.qp_failures;
        result.total = result.rewards.iter().sum::<f64>() / n as f64;
        Ok(result)
    }
}
