//! Run configuration: built-in defaults, overlaid by an optional TOML file,
//! overlaid by command-line flags. The output directory falls back to
//! `$QUADMIC_OUT` when neither the file nor a flag sets it.
//!
//! ```toml
//! robot = "robots/a1.toml"     # relative to this file
//! output_dir = "runs"
//! seed = 3
//! duration = 10.0
//!
//! [gait]          # any GaitSpec field
//! clearance = 0.01
//!
//! [controller]    # any ControllerConfig field
//! [sim]           # any SimParams field
//! [reward]        # any RewardWeights field
//!
//! [cma]
//! iters = 200
//! lambda = 16
//! sigma0 = 0.3
//!
//! [swing]
//! a_min = 0.25
//! a_max = 4.0
//! g_radius = 0.1
//! ```

use std::path::{Path, PathBuf};

use quadmimic_core::controller::ControllerConfig;
use quadmimic_core::exec::Exec;
use quadmimic_core::motion::{GaitKind, GaitSpec};
use quadmimic_core::optimize::{CmaConfig, EpisodeConfig, RewardWeights, SwingZConfig};
use quadmimic_core::robot::RobotModel;
use quadmimic_core::sim::SimParams;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Environment variable holding the default output directory.
pub const OUT_ENV: &str = "QUADMIC_OUT";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CmaSection {
    pub iters: usize,
    pub lambda: usize,
    pub sigma0: f64,
}

impl Default for CmaSection {
    fn default() -> Self {
        let c = CmaConfig::default();
        Self {
            iters: c.max_iters,
            lambda: c.lambda,
            sigma0: c.sigma0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SwingSection {
    pub a_min: f64,
    pub a_max: f64,
    pub g_radius: f64,
}

impl Default for SwingSection {
    fn default() -> Self {
        let s = SwingZConfig::default();
        Self {
            a_min: s.a_min,
            a_max: s.a_max,
            g_radius: s.g_radius,
        }
    }
}

/// Layout of the optional config file. The gait table is kept raw so it can be
/// laid over the defaults of whichever gait the command selects.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    robot: Option<PathBuf>,
    output_dir: Option<PathBuf>,
    seed: Option<u64>,
    duration: Option<f64>,
    init_noise: Option<f64>,
    gait: Option<toml::Table>,
    controller: Option<toml::Table>,
    sim: Option<toml::Table>,
    reward: Option<toml::Table>,
    cma: Option<toml::Table>,
    swing: Option<toml::Table>,
}

/// Values that can come from the command line and beat the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub config: Option<PathBuf>,
    pub robot: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub duration: Option<f64>,
    pub init_noise: Option<f64>,
    pub sequential: bool,
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub robot: RobotModel,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub duration: f64,
    pub init_noise: f64,
    pub controller: ControllerConfig,
    pub sim: SimParams,
    pub reward: RewardWeights,
    pub cma: CmaSection,
    pub swing: SwingSection,
    pub exec: Exec,
    gait_table: Option<toml::Table>,
}

/// Lays `overlay` over the serialized `base` and reads the result back.
fn layer<T: Serialize + DeserializeOwned>(base: T, overlay: Option<&toml::Table>, section: &str) -> Result<T, CliError> {
    let Some(overlay) = overlay else {
        return Ok(base);
    };
    let mut value = toml::Value::try_from(&base).map_err(|e| CliError::Data(format!("[{section}]: {e}")))?;
    let table = value.as_table_mut().expect("config sections serialize to tables");
    for (k, v) in overlay {
        table.insert(k.clone(), v.clone());
    }
    value
        .try_into()
        .map_err(|e| CliError::Data(format!("config section [{section}]: {e}")))
}

fn rebase(dir: &Path, p: PathBuf) -> PathBuf {
    if p.is_absolute() {
        p
    } else {
        dir.join(p)
    }
}

impl RunConfig {
    pub fn load(o: &Overrides) -> Result<Self, CliError> {
        let (file, dir) = match &o.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::Data(format!("config {}: {e}", path.display())))?;
                let f: FileConfig = toml::from_str(&text)
                    .map_err(|e| CliError::Data(format!("config {}: {e}", path.display())))?;
                let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
                (f, dir)
            }
            None => (FileConfig::default(), PathBuf::new()),
        };

        let robot_path = o.robot.clone().or(file.robot.map(|p| rebase(&dir, p)));
        let robot = match robot_path {
            Some(p) => RobotModel::load(&p)?,
            None => RobotModel::default(),
        };
        let output_dir = o
            .output_dir
            .clone()
            .or(file.output_dir.map(|p| rebase(&dir, p)))
            .or(std::env::var_os(OUT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("."));

        let cfg = Self {
            robot,
            output_dir,
            seed: o.seed.or(file.seed).unwrap_or(0),
            duration: o.duration.or(file.duration).unwrap_or(EpisodeConfig::default().duration),
            init_noise: o.init_noise.or(file.init_noise).unwrap_or(0.0),
            controller: layer(ControllerConfig::default(), file.controller.as_ref(), "controller")?,
            sim: layer(SimParams::default(), file.sim.as_ref(), "sim")?,
            reward: layer(RewardWeights::default(), file.reward.as_ref(), "reward")?,
            cma: layer(CmaSection::default(), file.cma.as_ref(), "cma")?,
            swing: layer(SwingSection::default(), file.swing.as_ref(), "swing")?,
            exec: if o.sequential { Exec::Sequential } else { Exec::Parallel },
            gait_table: file.gait,
        };
        if !(cfg.duration > 0.0 && cfg.duration.is_finite()) {
            return Err(CliError::Usage("--duration must be positive".into()));
        }
        if !(cfg.init_noise >= 0.0) {
            return Err(CliError::Usage("--init-noise must be non-negative".into()));
        }
        cfg.controller.validate()?;
        cfg.sim.validate()?;
        Ok(cfg)
    }

    /// Gait defaults for `gait` with the file's `[gait]` table laid over them.
    pub fn gait_spec(&self, gait: GaitKind) -> Result<GaitSpec, CliError> {
        let spec = layer(GaitSpec::new(gait), self.gait_table.as_ref(), "gait")?;
        // the command line names the gait; the file cannot change it
        Ok(GaitSpec { gait, ..spec })
    }

    pub fn episode(&self) -> EpisodeConfig {
        EpisodeConfig {
            duration: self.duration,
            seed: self.seed,
            init_noise: self.init_noise,
            weights: self.reward,
            ..Default::default()
        }
    }

    pub fn swing_config(&self, iters: Option<usize>) -> SwingZConfig {
        SwingZConfig {
            cma: CmaConfig {
                lambda: self.cma.lambda,
                sigma0: self.cma.sigma0,
                max_iters: iters.unwrap_or(self.cma.iters),
                seed: self.seed,
                exec: self.exec,
                ..Default::default()
            },
            a_min: self.swing.a_min,
            a_max: self.swing.a_max,
            g_radius: self.swing.g_radius,
            episode: self.episode(),
        }
    }

    /// Creates the output directory if needed and returns `name` inside it.
    pub fn output_path(&self, name: &str) -> Result<PathBuf, CliError> {
        std::fs::create_dir_all(&self.output_dir)
            .map_err(|e| CliError::Data(format!("output dir {}: {e}", self.output_dir.display())))?;
        Ok(self.output_dir.join(name))
    }
}
