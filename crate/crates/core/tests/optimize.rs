use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use quadmimic_core::controller::ControllerConfig;
use quadmimic_core::dmp::{motion_to_dmps, FitOptions};
use quadmimic_core::exec::Exec;
use quadmimic_core::motion::{synthesize_gait, GaitKind, GaitSpec, ReferenceMotion};
use quadmimic_core::optimize::{
    cma_es, optimize_swing_z, stitch, write_history, Bounds, CmaConfig, EpisodeConfig, EpisodeRunner,
    SwingZConfig,
};
use quadmimic_core::robot::RobotModel;
use quadmimic_core::sim::SimParams;
use quadmimic_core::Error;

fn sphere(x: &[f64]) -> f64 {
    x.iter().enumerate().map(|(i, v)| (v - 0.1 * i as f64).powi(2)).sum()
}

#[test]
fn cma_sphere_over_seeds() {
    for seed in 0..5 {
        let cfg = CmaConfig {
            seed,
            ..Default::default()
        };
        let r = cma_es(sphere, &[0.0; 8], None, &[], &cfg).unwrap();
        assert!(r.best_f.sqrt() < 1e-6, "seed {seed}: {}", r.best_f);
        assert!(r.history.len() <= 200);
        assert!(r.history.windows(2).all(|w| w[1].best <= w[0].best));
    }
}

#[test]
fn cma_candidates_stay_in_bounds() {
    let bounds = Bounds::new(vec![-0.05; 8], vec![0.05; 8]).unwrap();
    let outside = AtomicUsize::new(0);
    let f = |x: &[f64]| {
        if !bounds.contains(x) {
            outside.fetch_add(1, Ordering::Relaxed);
        }
        sphere(x)
    };
    let cfg = CmaConfig {
        sigma0: 1.0,
        max_iters: 40,
        ..Default::default()
    };
    cma_es(f, &[0.0; 8], Some(&bounds), &[vec![1.0; 8]], &cfg).unwrap();
    assert_eq!(outside.load(Ordering::Relaxed), 0);
}

#[test]
fn cma_is_reproducible_across_strategies() {
    let run = |exec| {
        let cfg = CmaConfig {
            seed: 7,
            max_iters: 30,
            exec,
            ..Default::default()
        };
        cma_es(sphere, &[0.5; 8], None, &[], &cfg).unwrap()
    };
    let a = run(Exec::Parallel);
    assert_eq!(a, run(Exec::Parallel));
    assert_eq!(a, run(Exec::Sequential));
}

#[test]
fn cma_seeds_are_evaluated_first() {
    let seen = Mutex::new(Vec::new());
    let f = |x: &[f64]| {
        seen.lock().unwrap().push(x.to_vec());
        sphere(x)
    };
    let cfg = CmaConfig {
        max_iters: 1,
        exec: Exec::Sequential,
        ..Default::default()
    };
    let r = cma_es(f, &[0.0; 8], None, &[vec![0.3; 8]], &cfg).unwrap();
    assert_eq!(seen.lock().unwrap()[0], vec![0.3; 8]);
    assert_eq!(r.history[0].iteration, 0);
}

#[test]
fn swing_z_anchor_and_bounds() {
    let model = RobotModel::default();
    let runner = EpisodeRunner::new(&model, ControllerConfig::default(), SimParams::default());
    let mut spec = GaitSpec::new(GaitKind::Trot);
    spec.clearance = 0.01;
    let m = synthesize_gait(&spec, &model).unwrap();
    let set = motion_to_dmps(&m, &FitOptions::default()).unwrap();
    let cfg = SwingZConfig {
        cma: CmaConfig {
            max_iters: 3,
            ..Default::default()
        },
        episode: EpisodeConfig {
            duration: 2.0,
            ..Default::default()
        },
        ..Default::default()
    };
    let r = optimize_swing_z(&set, &m, &runner, &cfg).unwrap();
    let plain = runner.run(&set.to_motion().unwrap(), Some(&m), &cfg.episode).unwrap();
    assert_eq!(r.initial_reward, plain.total);
    assert!(r.best_reward >= r.initial_reward);
    let fit = set.swing_z_params();
    for l in 0..4 {
        assert!((r.best_x[2 * l] - fit[2 * l]).abs() <= cfg.g_radius + 1e-12);
        assert!(r.best_x[2 * l + 1] >= cfg.a_min && r.best_x[2 * l + 1] <= cfg.a_max);
    }
    let mut csv = Vec::new();
    write_history(&r.history, &mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert!(text.starts_with("iteration,evaluations,best_reward,mean_reward,sigma\n"));
    assert_eq!(text.lines().count(), r.history.len() + 1);
}

fn gait(kind: GaitKind) -> ReferenceMotion {
    synthesize_gait(&GaitSpec::new(kind), &RobotModel::default()).unwrap()
}

#[test]
fn stitch_single_is_identity() {
    let m = gait(GaitKind::Turn);
    assert_eq!(stitch(&[&m]).unwrap(), m);
}

#[test]
fn pace_then_trot_is_continuous() {
    let pace = gait(GaitKind::Pace).unroll(3).unwrap();
    let trot = gait(GaitKind::Trot).unroll(2).unwrap();
    let s = stitch(&[&pace, &trot]).unwrap();
    assert_eq!(s.len(), pace.len() + trot.len() - 1);
    let contacts: Vec<_> = s.frames.iter().map(|f| f.contact).collect();
    let expect: Vec<_> = pace.frames.iter().chain(&trot.frames[1..]).map(|f| f.contact).collect();
    assert_eq!(contacts, expect);
    let seam = pace.len() - 1;
    assert!((s.frames[seam].com_pos - pace.frames.last().unwrap().com_pos).norm() < 1e-12);
    let step = (s.frames[seam + 1].com_pos - s.frames[seam].com_pos).norm();
    assert!(step < 0.02);
}

#[test]
fn stitch_rejects_mismatched_spacing() {
    let a = gait(GaitKind::Trot);
    let b = a.resample(0.005).unwrap();
    assert!(matches!(stitch(&[&a, &b]), Err(Error::IncompatibleMotions(_))));
}
