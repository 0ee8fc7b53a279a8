use quadmimic_core::controller::{plan_gait_detailed, ControllerConfig, LegMode, Mode, Transition};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn expected_edge(mode: Mode, desired: bool, measured: bool) -> Transition {
    match (mode, desired, measured) {
        (Mode::Stance, false, _) => Transition::LiftOff,
        (Mode::Stance, true, false) => Transition::EarlyTakeOff,
        (Mode::Swing, true, true) => Transition::TouchDown,
        (Mode::Swing, false, true) => Transition::EarlyContact,
        _ => Transition::None,
    }
}

#[test]
fn fuzzed_contact_sequences() {
    let cfg = ControllerConfig::default();
    let ticks_between = (cfg.min_switch_time / cfg.dt).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10_000 {
        let flip = rng.random_range(0.01..0.5);
        let mut modes = [LegMode::new(Mode::Stance, cfg.min_switch_time); 4];
        let mut desired = [true; 4];
        let mut measured = [true; 4];
        let mut last_switch: [Option<usize>; 4] = [None; 4];
        for tick in 0..120 {
            for l in 0..4 {
                if rng.random_bool(flip) {
                    desired[l] = !desired[l];
                }
                if rng.random_bool(flip) {
                    measured[l] = !measured[l];
                }
            }
            let (next, edges) = plan_gait_detailed(&desired, &measured, &modes, &cfg);
            for l in 0..4 {
                let elapsed_ok = modes[l].time_since_switch + cfg.dt + 1e-9 >= cfg.min_switch_time;
                let want = if elapsed_ok {
                    expected_edge(modes[l].mode, desired[l], measured[l])
                } else {
                    Transition::None
                };
                assert_eq!(edges[l], want);
                if edges[l] != Transition::None {
                    if let Some(prev) = last_switch[l] {
                        assert!(tick - prev >= ticks_between);
                    }
                    last_switch[l] = Some(tick);
                    assert_ne!(next[l].mode, modes[l].mode);
                } else {
                    assert_eq!(next[l].mode, modes[l].mode);
                }
            }
            modes = next;
        }
    }
}

#[test]
fn first_switch_is_not_delayed() {
    let cfg = ControllerConfig::default();
    let modes = [LegMode::new(Mode::Stance, cfg.min_switch_time); 4];
    let (next, edges) = plan_gait_detailed(&[false; 4], &[true; 4], &modes, &cfg);
    assert!(edges.iter().all(|e| *e == Transition::LiftOff));
    assert!(next.iter().all(|m| m.mode == Mode::Swing));
}
