//! Independent oracles and generators shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, Isometry3, Matrix3, Translation3, UnitQuaternion, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use quadmimic_core::geom::Vec3;
use quadmimic_core::optimize::{RefTarget, RewardWeights};
use quadmimic_core::qp::{build_stance_problem, StanceProblem, StanceQpConfig};
use quadmimic_core::robot::{Leg, LegJoints, RobotModel, NUM_JOINTS, NUM_LEGS, REACH_CLAMP};
use quadmimic_core::sim::SimState;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------- kinematics

/// Foot position from a chain of homogeneous transforms.
pub fn fk_chain(model: &RobotModel, leg: Leg, q: &LegJoints) -> Vec3 {
    let y0 = leg.side_sign() * model.links.hip_abduction_offset;
    let hip = model.hip_offsets[leg.index()];
    let chain = Isometry3::from_parts(Translation3::new(hip.x, hip.y, hip.z), UnitQuaternion::identity())
        * Isometry3::rotation(Vector3::x() * q.abduction)
        * Isometry3::translation(0.0, y0, 0.0)
        * Isometry3::rotation(Vector3::y() * q.hip)
        * Isometry3::translation(0.0, 0.0, -model.links.thigh)
        * Isometry3::rotation(Vector3::y() * q.knee)
        * Isometry3::translation(0.0, 0.0, -model.links.calf);
    chain.translation.vector
}

pub fn jacobian_fd(model: &RobotModel, leg: Leg, q: &LegJoints, h: f64) -> Matrix3<f64> {
    let mut j = Matrix3::zeros();
    for c in 0..3 {
        let mut qp = q.to_vec3();
        let mut qm = q.to_vec3();
        qp[c] += h;
        qm[c] -= h;
        let d = (model.forward_kinematics(leg, &LegJoints::from_vec3(&qp))
            - model.forward_kinematics(leg, &LegJoints::from_vec3(&qm)))
            / (2.0 * h);
        j.set_column(c, &d);
    }
    j
}

/// Joint angles inside the limits whose foot lies strictly inside the IK
/// reach band (so the roundtrip is expected to be exact).
pub fn reachable_joints(model: &RobotModel, leg: Leg, rng: &mut ChaCha8Rng) -> LegJoints {
    let l = &model.links;
    let r_max = REACH_CLAMP * (l.thigh + l.calf);
    let r_min = (l.thigh - l.calf).abs().max(0.1 * (l.thigh + l.calf));
    loop {
        let q: [f64; 3] = std::array::from_fn(|j| {
            let r = model.joint_range(leg, j);
            rng.random_range(r.min..r.max)
        });
        // sagittal reach depends on the knee only
        let rs = (l.thigh * l.thigh + l.calf * l.calf + 2.0 * l.thigh * l.calf * q[2].cos()).sqrt();
        if q[2] < -0.05 && rs > r_min * 1.01 && rs < r_max * 0.99 {
            return LegJoints::new(q[0], q[1], q[2]);
        }
    }
}

// ------------------------------------------------------------------------ QP

/// Random stance QP; `n_legs` fixes the number of stance legs.
pub fn random_stance_problem(
    model: &RobotModel,
    rng: &mut ChaCha8Rng,
    config: &StanceQpConfig,
    n_legs: Option<usize>,
) -> (StanceProblem, [bool; NUM_LEGS]) {
    let stance = loop {
        let s: [bool; NUM_LEGS] = std::array::from_fn(|_| rng.random_bool(0.6));
        let n = s.iter().filter(|&&b| b).count();
        if n > 0 && n_legs.is_none_or(|k| k == n) {
            break s;
        }
    };
    let rpy = Vec3::new(
        rng.random_range(-0.3..0.3),
        rng.random_range(-0.3..0.3),
        rng.random_range(-3.0..3.0),
    );
    let com = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.2..0.32));
    let yaw = quadmimic_core::geom::yaw_rotation(rpy.z);
    let feet = Leg::ALL.map(|l| {
        let mut p = com + yaw * model.neutral_foot(l, com.z);
        p.x += rng.random_range(-0.08..0.08);
        p.y += rng.random_range(-0.08..0.08);
        p.z = rng.random_range(-0.01..0.01);
        p
    });
    let accel = Vector6::from_fn(|i, _| {
        let s = if i < 3 { 3.0 } else { 8.0 };
        rng.random_range(-s..s)
    });
    (build_stance_problem(model, &rpy, &com, &feet, &stance, &accel, config), stance)
}

/// Hessian and linear term of `‖Ax - b‖²_Q + xᵀRx`.
pub fn quadratic_form(sp: &StanceProblem) -> (DMatrix<f64>, DVector<f64>) {
    let p = &sp.problem;
    let q = DMatrix::from_diagonal(&p.q_diag);
    let r = DMatrix::from_diagonal(&p.r_diag);
    let h = (p.a.transpose() * &q * &p.a + r) * 2.0;
    let c = p.a.transpose() * &q * &p.b * -2.0;
    (h, c)
}

/// Euclidean projection onto {b >= 0, lo <= sum(b) <= hi}.
fn project_capped_simplex(y: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    let s = |tau: f64| y.iter().map(|v| (v - tau).max(0.0)).sum::<f64>();
    let s0 = s(0.0);
    let tau = if s0 > hi {
        solve_shift(y, hi)
    } else if s0 < lo {
        solve_shift(y, lo)
    } else {
        0.0
    };
    y.iter().map(|v| (v - tau).max(0.0)).collect()
}

/// tau with sum(max(y - tau, 0)) = target (> 0), from sorted breakpoints.
fn solve_shift(y: &[f64], target: f64) -> f64 {
    let mut v = y.to_vec();
    v.sort_by(|a, b| b.total_cmp(a));
    let mut sum = 0.0;
    for k in 0..v.len() {
        sum += v[k];
        let tau = (sum - target) / (k + 1) as f64;
        let next = v.get(k + 1).copied().unwrap_or(f64::NEG_INFINITY);
        if tau >= next {
            return tau;
        }
    }
    unreachable!("target is positive")
}

/// Optimal stance-QP objective by accelerated projected gradient over the
/// friction-pyramid edge coefficients of each leg.
pub fn projected_gradient_objective(sp: &StanceProblem, config: &StanceQpConfig, fz_max: f64) -> f64 {
    let p = &sp.problem;
    let legs = sp.legs.len();
    let mu = config.mu;
    let edges = DMatrix::from_row_slice(3, 4, &[mu, -mu, mu, -mu, mu, mu, -mu, -mu, 1.0, 1.0, 1.0, 1.0]);
    let mut e = DMatrix::zeros(3 * legs, 4 * legs);
    for k in 0..legs {
        e.view_mut((3 * k, 4 * k), (3, 4)).copy_from(&edges);
    }
    let (hf, cf) = quadratic_form(sp);
    let h = e.transpose() * hf * &e;
    let c = e.transpose() * cf;
    let lip = h.symmetric_eigenvalues().max() * 1.0001;
    let n = 4 * legs;
    let hm: Vec<f64> = (0..n * n).map(|i| h[(i / n, i % n)]).collect();
    let cv: Vec<f64> = c.iter().copied().collect();
    let hv = |b: &[f64], out: &mut [f64]| {
        for i in 0..n {
            out[i] = hm[i * n..(i + 1) * n].iter().zip(b).map(|(a, x)| a * x).sum::<f64>();
        }
    };
    let project = |b: &mut [f64]| {
        for k in 0..legs {
            let pr = project_capped_simplex(&b[4 * k..4 * k + 4], config.fz_min, fz_max);
            b[4 * k..4 * k + 4].copy_from_slice(&pr);
        }
    };
    let mut x = vec![20.0; n];
    project(&mut x);
    let mut y = x.clone();
    let mut xn = vec![0.0; n];
    let mut g = vec![0.0; n];
    let mut t = 1.0f64;
    for _ in 0..3_000_000 {
        hv(&y, &mut g);
        for i in 0..n {
            xn[i] = y[i] - (g[i] + cv[i]) / lip;
        }
        project(&mut xn);
        // gradient restart: momentum that points uphill is dropped
        let uphill: f64 = (0..n).map(|i| (y[i] - xn[i]) * (xn[i] - x[i])).sum();
        let step: f64 = (0..n).map(|i| (xn[i] - x[i]).powi(2)).sum::<f64>().sqrt();
        let tn = if uphill > 0.0 { 1.0 } else { 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt()) };
        for i in 0..n {
            y[i] = xn[i] + (xn[i] - x[i]) * ((t - 1.0) / tn);
        }
        std::mem::swap(&mut x, &mut xn);
        t = tn;
        if step < 1e-11 {
            break;
        }
    }
    // evaluate in force space, where nothing cancels
    let beta = DVector::from_vec(x);
    let f = e * beta;
    let res = &p.a * &f - &p.b;
    let task: f64 = res.iter().zip(p.q_diag.iter()).map(|(e, q)| q * e * e).sum();
    let reg: f64 = f.iter().zip(p.r_diag.iter()).map(|(v, r)| r * v * v).sum();
    task + reg
}

/// KKT residual of `min ½xᵀHx + cᵀx s.t. Gx <= h` computed from scratch.
pub fn kkt_residual(sp: &StanceProblem, x: &DVector<f64>, lambda: &DVector<f64>) -> f64 {
    let p = &sp.problem;
    let (hf, cf) = quadratic_form(sp);
    let stat = hf * x + cf + p.g.transpose() * lambda;
    let slack = &p.h - &p.g * x;
    let mut r = stat.amax();
    for i in 0..slack.len() {
        r = r.max((-slack[i]).max(0.0)).max((-lambda[i]).max(0.0)).max((lambda[i] * slack[i]).abs());
    }
    r
}

// -------------------------------------------------------------------- reward

fn quat(rpy: &Vec3) -> UnitQuaternion<f64> {
    UnitQuaternion::from_euler_angles(rpy.x, rpy.y, rpy.z)
}

/// Imitation reward written without the library's kinematics or rotation helpers.
pub fn reward_oracle(target: &RefTarget, s: &SimState, model: &RobotModel, w: &RewardWeights) -> f64 {
    let mut dq = 0.0;
    let mut dqd = 0.0;
    for j in 0..NUM_JOINTS {
        dq += (target.joints[j] - s.joint_pos[j]).powi(2);
        dqd += (target.joint_vel[j] - s.joint_vel[j]).powi(2);
    }
    let q = quat(&s.com_rpy);
    let heading = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), s.com_rpy.z);
    let tilt = heading.inverse() * q;
    let mut de = 0.0;
    for leg in Leg::ALL {
        let i = 3 * leg.index();
        let lj = LegJoints::new(s.joint_pos[i], s.joint_pos[i + 1], s.joint_pos[i + 2]);
        let foot = tilt * fk_chain(model, leg, &lj);
        de += (target.feet[leg.index()] - foot).norm_squared();
    }
    let f = &target.frame;
    let rel = quat(&f.com_rpy).inverse() * q;
    let angle = 2.0 * rel.imag().norm().atan2(rel.scalar().abs());
    let dp = (f.com_pos - s.com_pos).norm_squared();
    let dv = (f.com_lin_vel - s.com_lin_vel).norm_squared();
    let dw = (f.com_ang_vel - s.com_ang_vel).norm_squared();
    w.pose * (-w.pose_scale * dq).exp()
        + w.velocity * (-w.velocity_scale * dqd).exp()
        + w.end_effector * (-w.end_effector_scale * de).exp()
        + w.com_pos * (-w.com_pos_scale * dp - w.com_ori_scale * angle * angle).exp()
        + w.com_vel * (-w.com_lin_vel_scale * dv - w.com_ang_vel_scale * dw).exp()
}

pub fn perturbed_state(target: &RefTarget, rng: &mut ChaCha8Rng, scale: f64) -> SimState {
    let f = &target.frame;
    let mut s = SimState {
        com_pos: f.com_pos,
        com_rpy: f.com_rpy,
        com_lin_vel: f.com_lin_vel,
        com_ang_vel: f.com_ang_vel,
        joint_pos: target.joints,
        joint_vel: target.joint_vel,
        ..Default::default()
    };
    let mut v = |s: f64| rng.random_range(-s..s) * scale;
    s.com_pos += Vec3::new(v(0.1), v(0.1), v(0.05));
    s.com_rpy += Vec3::new(v(0.3), v(0.3), v(3.0));
    s.com_lin_vel += Vec3::new(v(1.0), v(1.0), v(0.5));
    s.com_ang_vel += Vec3::new(v(2.0), v(2.0), v(2.0));
    for j in 0..NUM_JOINTS {
        s.joint_pos[j] += v(0.4);
        s.joint_vel[j] += v(8.0);
    }
    s
}
