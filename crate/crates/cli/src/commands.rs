use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use quadmimic_core::controller::{ControllerConfig, SwingStrategy};
use quadmimic_core::dmp::{motion_to_dmps, FitOptions};
use quadmimic_core::geom::yaw_rotation;
use quadmimic_core::motion::{
    fmt_f64, frame_row, load_motion, motion_columns, save_motion, synthesize_gait, validate, ReferenceFrame,
    ReferenceMotion, LOG_TAG,
};
use quadmimic_core::optimize::{
    optimize_stitched, optimize_swing_z, save_history, stitch_sources, EpisodeConfig, EpisodeMode, EpisodeResult,
    EpisodeRunner, LogEntry, SwingZConfig, SwingZResult, Termination,
};
use quadmimic_core::robot::{RobotModel, NUM_JOINTS, NUM_LEGS};

use crate::config::RunConfig;
use crate::{svg, CliError, CompareArgs, ControllerKind, FitArgs, OptimizeArgs, RolloutArgs, StitchArgs, SynthArgs};

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "motion".into())
}

fn load(path: &Path) -> Result<ReferenceMotion, CliError> {
    load_motion(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Data(format!("{}: {e}", path.display()))
}

fn controller_config(cfg: &RunConfig, kind: ControllerKind) -> ControllerConfig {
    let swing = match kind {
        ControllerKind::Mbc => SwingStrategy::Reference,
        ControllerKind::Raibert => SwingStrategy::Raibert,
    };
    ControllerConfig { swing, ..cfg.controller }
}

fn runner(cfg: &RunConfig, kind: ControllerKind) -> EpisodeRunner<'_> {
    EpisodeRunner::new(&cfg.robot, controller_config(cfg, kind), cfg.sim)
}

pub fn synth(cfg: &RunConfig, a: &SynthArgs) -> Result<(), CliError> {
    let mut spec = cfg.gait_spec(a.gait)?;
    let flags = [
        (&mut spec.speed, a.speed),
        (&mut spec.yaw_rate, a.yaw_rate),
        (&mut spec.stance_height, a.stance_height),
        (&mut spec.duty_factor, a.duty_factor),
        (&mut spec.step_frequency, a.step_frequency),
        (&mut spec.clearance, a.clearance),
        (&mut spec.frame_dt, a.frame_dt),
    ];
    for (slot, flag) in flags {
        if let Some(v) = flag {
            *slot = v;
        }
    }
    let motion = synthesize_gait(&spec, &cfg.robot)?;
    let report = validate(&motion, &cfg.robot);
    let path = match &a.output {
        Some(p) => p.clone(),
        None => cfg.output_path(&format!("{}.csv", spec.gait))?,
    };
    save_motion(&motion, &path).map_err(|e| CliError::Data(e.to_string()))?;
    println!(
        "{} -> {} ({} frames, period {:.3} s, {} validation diagnostics)",
        spec.gait,
        path.display(),
        motion.len(),
        motion.duration(),
        report.diagnostics.len()
    );
    Ok(())
}

pub fn fit(cfg: &RunConfig, a: &FitArgs) -> Result<(), CliError> {
    let motion = load(&a.motion)?;
    let set = motion_to_dmps(&motion, &FitOptions::default())?;
    let report = set.reconstruction_report(&motion)?;
    let name = stem(&a.motion);
    let out = match &a.output {
        Some(p) => p.clone(),
        None => cfg.output_path(&format!("{name}.dmp.toml"))?,
    };
    let report_path = match &a.report {
        Some(p) => p.clone(),
        None => cfg.output_path(&format!("{name}.fit.csv"))?,
    };
    set.save(&out).map_err(|e| CliError::Data(e.to_string()))?;

    let mut w = create(&report_path)?;
    let io = io_err(&report_path);
    writeln!(w, "channel,name,rmse,peak_to_peak,relative_rmse,degenerate").map_err(&io)?;
    for r in &report {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.channel,
            r.name,
            fmt_f64(r.rmse),
            fmt_f64(r.peak_to_peak),
            fmt_f64(r.relative()),
            u8::from(r.degenerate)
        )
        .map_err(&io)?;
    }
    w.flush().map_err(&io)?;

    let worst = report
        .iter()
        .filter(|r| !r.degenerate)
        .max_by(|x, y| x.relative().total_cmp(&y.relative()));
    println!("{} channels -> {}", report.len(), out.display());
    if let Some(r) = worst {
        println!("worst channel {} ({}): RMSE {:.2}% of peak-to-peak", r.channel, r.name, 100.0 * r.relative());
    }
    println!("report -> {}", report_path.display());
    Ok(())
}

/// Robot-frame snapshot of a logged state in the motion layout, so a log can
/// be read back as a motion.
fn logged_frame(e: &LogEntry, model: &RobotModel, f_thresh: f64) -> ReferenceFrame {
    let s = &e.state;
    let r_yaw = yaw_rotation(s.com_rpy.z).transpose();
    let feet = s.feet_world(model);
    ReferenceFrame {
        com_pos: s.com_pos,
        com_rpy: s.com_rpy,
        com_lin_vel: s.com_lin_vel,
        com_ang_vel: s.com_ang_vel,
        foot_pos: feet.map(|p| r_yaw * (p - s.com_pos)),
        contact: s.foot_force.map(|f| f.z > f_thresh),
    }
}

fn write_log(path: &Path, result: &EpisodeResult, dt: f64, model: &RobotModel, f_thresh: f64) -> Result<(), CliError> {
    let mut w = create(path)?;
    let io = io_err(path);
    writeln!(w, "# {LOG_TAG} dt={} cyclic=0", fmt_f64(dt)).map_err(&io)?;
    let mut cols = motion_columns();
    cols.push("reward".into());
    cols.extend((0..NUM_LEGS).map(|l| format!("mode{l}")));
    cols.extend((0..NUM_JOINTS).map(|j| format!("q{j}")));
    cols.extend((0..NUM_JOINTS).map(|j| format!("tau{j}")));
    writeln!(w, "{}", cols.join(",")).map_err(&io)?;
    for (k, e) in result.log.iter().enumerate() {
        let mut cells: Vec<String> = frame_row((k + 1) as f64 * dt, &logged_frame(e, model, f_thresh))
            .into_iter()
            .map(fmt_f64)
            .collect();
        cells.push(fmt_f64(e.reward));
        cells.extend(e.modes.iter().map(|m| format!("{m:?}").to_lowercase()));
        cells.extend(e.state.joint_pos.iter().map(|&v| fmt_f64(v)));
        cells.extend(e.state.joint_torque.iter().map(|&v| fmt_f64(v)));
        writeln!(w, "{}", cells.join(",")).map_err(&io)?;
    }
    w.flush().map_err(&io)
}

pub fn rollout(cfg: &RunConfig, a: &RolloutArgs) -> Result<(), CliError> {
    let motion = load(&a.motion)?;
    let name = stem(&a.motion);
    let episode = EpisodeConfig {
        mode: if a.oracle_replay { EpisodeMode::OracleReplay } else { EpisodeMode::Controller },
        record: a.log,
        ..cfg.episode()
    };
    let mut kinds = a.controller.clone();
    kinds.dedup();

    println!("{:<10} {:>10} {:>8} {:>8} {:>6}", "controller", "outcome", "reward", "steps", "qp-err");
    let mut diverged = Vec::new();
    for kind in kinds {
        let label = if a.oracle_replay { "oracle".to_string() } else { format!("{kind:?}").to_lowercase() };
        let r = runner(cfg, kind).run(&motion, None, &episode)?;
        println!(
            "{label:<10} {:>10} {:>8.4} {:>8} {:>6}",
            format!("{:?}", r.termination),
            r.total,
            r.steps_run,
            r.qp_failures
        );
        if a.log {
            let path = cfg.output_path(&format!("{name}.{label}.log.csv"))?;
            write_log(&path, &r, cfg.controller.dt, &cfg.robot, cfg.controller.f_thresh)?;
            println!("  log -> {}", path.display());
        }
        if r.termination == Termination::Diverged {
            diverged.push(label);
        }
        if a.oracle_replay {
            break;
        }
    }
    if !diverged.is_empty() {
        return Err(CliError::Divergence(format!("simulation diverged under {}", diverged.join(", "))));
    }
    Ok(())
}

fn print_progress(r: &SwingZResult, seconds: f64) {
    println!(
        "reward {:.4} -> {:.4} after {} generations ({} evaluations, {:.1} s)",
        r.initial_reward,
        r.best_reward,
        r.history.last().map_or(0, |h| h.iteration),
        r.history.last().map_or(0, |h| h.evaluations),
        seconds
    );
}

fn optimize_motion(
    cfg: &RunConfig,
    motion: &ReferenceMotion,
    swing: &SwingZConfig,
) -> Result<SwingZResult, CliError> {
    let set = motion_to_dmps(motion, &FitOptions::default())?;
    Ok(optimize_swing_z(&set, motion, &runner(cfg, ControllerKind::Mbc), swing)?)
}

pub fn optimize(cfg: &RunConfig, a: &OptimizeArgs) -> Result<(), CliError> {
    let motion = load(&a.motion)?;
    let name = stem(&a.motion);
    let start = Instant::now();
    let r = optimize_motion(cfg, &motion, &cfg.swing_config(a.iters))?;
    print_progress(&r, start.elapsed().as_secs_f64());

    let motion_path = cfg.output_path(&format!("{name}.optimized.csv"))?;
    let dmp_path = cfg.output_path(&format!("{name}.optimized.dmp.toml"))?;
    let hist_path = cfg.output_path(&format!("{name}.history.csv"))?;
    save_motion(&r.motion, &motion_path)?;
    r.sets[0].save(&dmp_path)?;
    save_history(&r.history, &hist_path)?;
    for p in [&motion_path, &dmp_path, &hist_path] {
        println!("  -> {}", p.display());
    }
    Ok(())
}

pub fn compare(cfg: &RunConfig, a: &CompareArgs) -> Result<(), CliError> {
    let motions = a
        .motions
        .iter()
        .map(|p| load(p).map(|m| (stem(p), m)))
        .collect::<Result<Vec<_>, _>>()?;
    let episode = cfg.episode();
    let swing = cfg.swing_config(a.iters);
    let series = ["MBC", "MBC-DMP", "Raibert"];

    println!("{:<16} {:>8} {:>8} {:>8}", "motion", series[0], series[1], series[2]);
    let mut rows = Vec::new();
    for (name, m) in &motions {
        let mbc = runner(cfg, ControllerKind::Mbc).run(m, None, &episode)?.total;
        let raibert = runner(cfg, ControllerKind::Raibert).run(m, None, &episode)?.total;
        let dmp = optimize_motion(cfg, m, &swing)?.best_reward;
        println!("{name:<16} {mbc:>8.4} {dmp:>8.4} {raibert:>8.4}");
        rows.push(vec![mbc, dmp, raibert]);
    }

    let csv_path = cfg.output_path(&format!("{}.csv", a.name))?;
    let mut w = create(&csv_path)?;
    let io = io_err(&csv_path);
    writeln!(w, "motion,mbc,mbc_dmp,raibert").map_err(&io)?;
    for ((name, _), row) in motions.iter().zip(&rows) {
        let cells: Vec<String> = row.iter().map(|&v| fmt_f64(v)).collect();
        writeln!(w, "{name},{}", cells.join(",")).map_err(&io)?;
    }
    w.flush().map_err(&io)?;

    let svg_path = cfg.output_path(&format!("{}.svg", a.name))?;
    let groups: Vec<String> = motions.iter().map(|(n, _)| n.clone()).collect();
    let chart = svg::grouped_bars("Imitation reward by controller", &groups, &series, &rows);
    std::fs::write(&svg_path, chart).map_err(io_err(&svg_path))?;
    println!("  -> {}\n  -> {}", csv_path.display(), svg_path.display());
    Ok(())
}

pub fn stitch(cfg: &RunConfig, a: &StitchArgs) -> Result<(), CliError> {
    let cycles = if a.cycles.is_empty() {
        vec![1; a.motions.len()]
    } else {
        a.cycles.clone()
    };
    if cycles.len() != a.motions.len() {
        return Err(CliError::Usage(format!(
            "--cycles lists {} values for {} motions",
            cycles.len(),
            a.motions.len()
        )));
    }
    if cycles.contains(&0) {
        return Err(CliError::Usage("--cycles values must be at least 1".into()));
    }
    let sources = a.motions.iter().map(|p| load(p)).collect::<Result<Vec<_>, _>>()?;
    let out: PathBuf = match &a.output {
        Some(p) => p.clone(),
        None => cfg.output_path("stitched.csv")?,
    };

    if sources.len() == 1 && cycles[0] == 1 {
        save_motion(&sources[0], &out)?;
        println!("single motion passed through -> {}", out.display());
        return Ok(());
    }
    let refs: Vec<&ReferenceMotion> = sources.iter().collect();
    let source = stitch_sources(&refs, &cycles)?;
    if a.no_optimize {
        save_motion(&source, &out)?;
        println!("{} frames, {:.2} s -> {}", source.len(), source.duration(), out.display());
        return Ok(());
    }

    let start = Instant::now();
    let mbc = runner(cfg, ControllerKind::Mbc);
    let individual = cfg.swing_config(a.iters);
    let sets = sources
        .iter()
        .map(|m| motion_to_dmps(m, &FitOptions::default()))
        .collect::<Result<Vec<_>, _>>()?;
    let mut warm = Vec::new();
    for (set, m) in sets.iter().zip(&sources) {
        warm.push(optimize_swing_z(set, m, &mbc, &individual)?.best_x);
    }
    let joint = SwingZConfig {
        episode: EpisodeConfig {
            duration: source.duration(),
            ..individual.episode
        },
        ..individual
    };
    let r = optimize_stitched(&sets, &cycles, &warm, &source, &mbc, &joint)?;
    print_progress(&r, start.elapsed().as_secs_f64());

    let hist = out.with_file_name(format!("{}.history.csv", stem(&out)));
    save_motion(&r.motion, &out)?;
    save_history(&r.history, &hist)?;
    println!("  -> {}\n  -> {}", out.display(), hist.display());
    Ok(())
}
