//! Dense convex QP for stance-force distribution.
//!
//! Problems have the form
//!
//! ```text
//! minimize   (A x - b)ᵀ Q (A x - b) + xᵀ R x
//! subject to G x <= h
//! ```
//!
//! with diagonal `Q >= 0` and `R > 0`. The solver is the Goldfarb–Idnani dual
//! active-set method: it starts at the unconstrained minimizer and adds the most
//! violated constraint at a time, keeping the iterate optimal on the current
//! active set. At most 12 variables and 24 constraints, so every linear solve
//! is a small dense factorization.

use nalgebra::{DMatrix, DVector, Vector6};

use crate::geom::{rotation_from_rpy, skew, Vec3, GRAVITY};
use crate::robot::{RobotModel, NUM_LEGS};

#[derive(Clone, Debug, PartialEq)]
pub struct QpProblem {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub q_diag: DVector<f64>,
    pub r_diag: DVector<f64>,
    pub g: DMatrix<f64>,
    pub h: DVector<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    MaxIter,
    Infeasible,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// Multipliers of `G x <= h`, one per row, zero for inactive rows.
    pub multipliers: DVector<f64>,
    pub objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub status: QpStatus,
}

impl QpProblem {
    pub fn num_vars(&self) -> usize {
        self.a.ncols()
    }

    pub fn num_constraints(&self) -> usize {
        self.g.nrows()
    }

    /// Hessian of the objective, `2 (AᵀQA + R)`.
    pub fn hessian(&self) -> DMatrix<f64> {
        let qa = DMatrix::from_diagonal(&self.q_diag) * &self.a;
        let mut hm = self.a.transpose() * qa;
        for i in 0..self.num_vars() {
            hm[(i, i)] += self.r_diag[i];
        }
        hm * 2.0
    }

    /// Linear term of the objective, `-2 AᵀQb`.
    pub fn gradient_offset(&self) -> DVector<f64> {
        self.a.transpose() * self.b.component_mul(&self.q_diag) * -2.0
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        let res = &self.a * x - &self.b;
        let task: f64 = res
            .iter()
            .zip(self.q_diag.iter())
            .map(|(e, q)| q * e * e)
            .sum();
        let reg: f64 = x
            .iter()
            .zip(self.r_diag.iter())
            .map(|(v, r)| r * v * v)
            .sum();
        task + reg
    }

    /// Largest constraint violation `max(G x - h, 0)`.
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        (&self.g * x - &self.h)
            .iter()
            .fold(0.0f64, |m, &v| m.max(v))
    }

    /// Max of stationarity, primal infeasibility and complementarity residuals.
    pub fn kkt_residual(&self, x: &DVector<f64>, lambda: &DVector<f64>) -> f64 {
        let stationarity = (self.hessian() * x + self.gradient_offset() + self.g.transpose() * lambda)
            .amax();
        let slack = &self.h - &self.g * x;
        let complementarity = slack
            .iter()
            .zip(lambda.iter())
            .fold(0.0f64, |m, (s, l)| m.max((s * l).abs()));
        let dual = lambda.iter().fold(0.0f64, |m, &l| m.max(-l));
        stationarity
            .max(self.max_violation(x))
            .max(complementarity)
            .max(dual)
    }
}

const VIOLATION_TOL: f64 = 1e-10;
const STEP_EPS: f64 = 1e-12;

/// Active-set QP solver holding the previous active set for warm starts.
#[derive(Clone, Debug, Default)]
pub struct QpSolver {
    warm: Option<(usize, usize, Vec<usize>)>,
    pub max_iter: Option<usize>,
}

struct Workspace<'a> {
    hinv: DMatrix<f64>,
    g: &'a DMatrix<f64>,
    h: &'a DVector<f64>,
}

impl Workspace<'_> {
    fn normal(&self, i: usize) -> DVector<f64> {
        -self.g.row(i).transpose()
    }

    /// Columns of the active normals `n_i = -G_iᵀ`.
    fn normals(&self, active: &[usize]) -> DMatrix<f64> {
        let n = self.g.ncols();
        DMatrix::from_fn(n, active.len(), |r, c| -self.g[(active[c], r)])
    }
}

fn solve_spd(m: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    if m.nrows() == 0 {
        return Some(DVector::zeros(0));
    }
    match m.clone().cholesky() {
        Some(ch) => Some(ch.solve(rhs)),
        None => m.clone().lu().solve(rhs),
    }
}

impl QpSolver {
    pub fn new() -> Self {
        Self::default()
    }

    /// Forgets the warm-start active set.
    pub fn reset(&mut self) {
        self.warm = None;
    }

    pub fn active_set(&self) -> &[usize] {
        self.warm.as_ref().map(|w| w.2.as_slice()).unwrap_or(&[])
    }

    pub fn solve(&mut self, p: &QpProblem) -> QpSolution {
        let n = p.num_vars();
        let m = p.num_constraints();
        let c = p.gradient_offset();
        // Factor the stacked least-squares matrix [sqrt(Q) A; sqrt(R)] instead of
        // the Hessian: its conditioning is the square root of the Hessian's,
        // which matters when R is tiny.
        let Some((hinv, x0)) = factor(p) else {
            return QpSolution {
                x: DVector::zeros(n),
                multipliers: DVector::zeros(m),
                objective: f64::NAN,
                kkt_residual: f64::INFINITY,
                iterations: 0,
                status: QpStatus::Infeasible,
            };
        };
        let ws = Workspace {
            hinv,
            g: &p.g,
            h: &p.h,
        };
        let max_iter = self.max_iter.unwrap_or(10 * (n + m) + 10);

        let mut active: Vec<usize> = Vec::new();
        let mut u: Vec<f64> = Vec::new();
        let mut x = x0.clone();

        if let Some((wn, wm, prev)) = &self.warm {
            if *wn == n && *wm == m && !prev.is_empty() {
                if let Some((xw, aw, uw)) = warm_point(&ws, &c, &x0, prev.clone()) {
                    x = xw;
                    active = aw;
                    u = uw;
                }
            }
        }

        let mut iterations = 0;
        let mut status = QpStatus::Optimal;
        'outer: loop {
            // most violated inactive constraint
            let gx = &p.g * &x;
            let mut worst = None;
            let mut worst_v = VIOLATION_TOL;
            for j in 0..m {
                if active.contains(&j) {
                    continue;
                }
                let v = gx[j] - p.h[j];
                if v > worst_v {
                    worst_v = v;
                    worst = Some(j);
                }
            }
            let Some(pi) = worst else { break };
            let np = ws.normal(pi);
            let bp = -ws.h[pi];
            let mut up = 0.0;
            loop {
                iterations += 1;
                if iterations > max_iter {
                    status = QpStatus::MaxIter;
                    break 'outer;
                }
                let hinv_np = &ws.hinv * &np;
                let (z, r) = if active.is_empty() {
                    (hinv_np, DVector::zeros(0))
                } else {
                    let nm = ws.normals(&active);
                    let hn = &ws.hinv * &nm;
                    let mm = nm.transpose() * &hn;
                    let rhs = hn.transpose() * &np;
                    let Some(r) = solve_spd(&mm, &rhs) else {
                        status = QpStatus::Infeasible;
                        break 'outer;
                    };
                    (hinv_np - hn * &r, r)
                };
                let mut t1 = f64::INFINITY;
                let mut block = None;
                for (k, rk) in r.iter().enumerate() {
                    if *rk > STEP_EPS {
                        let t = u[k] / rk;
                        if t < t1 {
                            t1 = t;
                            block = Some(k);
                        }
                    }
                }
                let zn = z.dot(&np);
                let t2 = if zn > STEP_EPS * np.norm_squared().max(1.0) {
                    (bp - np.dot(&x)) / zn
                } else {
                    f64::INFINITY
                };
                if t1.is_infinite() && t2.is_infinite() {
                    status = QpStatus::Infeasible;
                    break 'outer;
                }
                let t = t1.min(t2);
                if t2.is_finite() {
                    x += &z * t;
                }
                for (k, rk) in r.iter().enumerate() {
                    u[k] -= t * rk;
                }
                up += t;
                if t2 <= t1 {
                    active.push(pi);
                    u.push(up);
                    continue 'outer;
                }
                let k = block.expect("finite partial step has a blocking constraint");
                active.remove(k);
                u.remove(k);
            }
        }

        let mut multipliers = DVector::zeros(m);
        for (&i, &ui) in active.iter().zip(&u) {
            multipliers[i] = ui.max(0.0);
        }
        if status == QpStatus::Optimal {
            self.warm = Some((n, m, active));
        } else {
            self.warm = None;
        }
        QpSolution {
            objective: p.objective(&x),
            kkt_residual: p.kkt_residual(&x, &multipliers),
            x,
            multipliers,
            iterations,
            status,
        }
    }
}

/// Minimizer on a previous active set, dropping constraints with negative
/// multipliers until the point is dual feasible.
fn warm_point(
    ws: &Workspace<'_>,
    c: &DVector<f64>,
    x0: &DVector<f64>,
    mut active: Vec<usize>,
) -> Option<(DVector<f64>, Vec<usize>, Vec<f64>)> {
    loop {
        if active.is_empty() {
            return None;
        }
        let nm = ws.normals(&active);
        let hn = &ws.hinv * &nm;
        let mm = nm.transpose() * &hn;
        let b = DVector::from_iterator(active.len(), active.iter().map(|&i| -ws.h[i]));
        let rhs = b + hn.transpose() * c;
        let u = solve_spd(&mm, &rhs)?;
        let (k, min) = u
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (k, &v)| if v < acc.1 { (k, v) } else { acc });
        if min < 0.0 {
            active.remove(k);
            continue;
        }
        let x = x0 + &hn * &u;
        return Some((x, active, u.iter().copied().collect()));
    }
}

/// Inverse Hessian and unconstrained minimizer from a QR factorization of the
/// stacked least-squares matrix.
fn factor(p: &QpProblem) -> Option<(DMatrix<f64>, DVector<f64>)> {
    let n = p.num_vars();
    let k = p.a.nrows();
    let mut stacked = DMatrix::zeros(k + n, n);
    let mut rhs = DVector::zeros(k + n);
    for i in 0..k {
        let sq = p.q_diag[i].max(0.0).sqrt();
        for j in 0..n {
            stacked[(i, j)] = sq * p.a[(i, j)];
        }
        rhs[i] = sq * p.b[i];
    }
    for j in 0..n {
        if !(p.r_diag[j] > 0.0) {
            return None;
        }
        stacked[(k + j, j)] = p.r_diag[j].sqrt();
    }
    let qr = stacked.qr();
    let r = qr.r();
    let r_inv = r.solve_upper_triangular(&DMatrix::identity(n, n))?;
    let qtb = qr.q().transpose() * rhs;
    let x0 = &r_inv * qtb;
    let hinv = &r_inv * r_inv.transpose() * 0.5;
    Some((hinv, x0))
}

/// Cold-start convenience wrapper.
pub fn solve(problem: &QpProblem) -> QpSolution {
    QpSolver::new().solve(problem)
}

/// Weights and limits of the stance-force problem.
#[derive(Clone, Copy, Debug, PartialEq, serde::Deserialize, serde::Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct StanceQpConfig {
    /// Task weights: linear x, y, z then angular roll, pitch, yaw.
    pub q: [f64; 6],
    /// Force regularization, identical on every component.
    pub r: f64,
    pub mu: f64,
    pub fz_min: f64,
    /// Upper normal-force bound as a multiple of body weight.
    pub fz_max_body_weights: f64,
}

impl Default for StanceQpConfig {
    fn default() -> Self {
        Self {
            q: [1.0, 1.0, 10.0, 10.0, 10.0, 1.0],
            r: 1e-4,
            mu: 0.6,
            fz_min: 5.0,
            fz_max_body_weights: 1.5,
        }
    }
}

/// A stance QP together with the leg owning each 3-variable block.
#[derive(Clone, Debug, PartialEq)]
pub struct StanceProblem {
    pub problem: QpProblem,
    pub legs: Vec<usize>,
}

impl StanceProblem {
    /// Splits a solution vector into per-leg world-frame forces; swing legs get zero.
    pub fn leg_forces(&self, x: &DVector<f64>) -> [Vec3; NUM_LEGS] {
        let mut out = [Vec3::zeros(); NUM_LEGS];
        for (k, &leg) in self.legs.iter().enumerate() {
            out[leg] = Vec3::new(x[3 * k], x[3 * k + 1], x[3 * k + 2]);
        }
        out
    }
}

/// Builds the stance QP. `accel_des` is (linear, angular) CoM acceleration in
/// the world frame; stance forces are the ground reaction on the body.
pub fn build_stance_problem(
    model: &RobotModel,
    com_rpy: &Vec3,
    com_pos: &Vec3,
    foot_pos_world: &[Vec3; NUM_LEGS],
    stance: &[bool; NUM_LEGS],
    accel_des: &Vector6<f64>,
    config: &StanceQpConfig,
) -> StanceProblem {
    let legs: Vec<usize> = (0..NUM_LEGS).filter(|&l| stance[l]).collect();
    let n = 3 * legs.len();
    let rot = rotation_from_rpy(com_rpy);
    let inertia_world = rot * model.inertia_body * rot.transpose();
    let inv_inertia = inertia_world
        .try_inverse()
        .expect("inertia is positive definite");

    let mut a = DMatrix::zeros(6, n);
    for (k, &leg) in legs.iter().enumerate() {
        let ang = inv_inertia * skew(&(foot_pos_world[leg] - com_pos));
        for i in 0..3 {
            a[(i, 3 * k + i)] = 1.0 / model.mass;
            for j in 0..3 {
                a[(3 + i, 3 * k + j)] = ang[(i, j)];
            }
        }
    }
    let mut b = DVector::from_column_slice(accel_des.as_slice());
    b[2] += GRAVITY;

    let rows = 6 * legs.len();
    let mut g = DMatrix::zeros(rows, n);
    let mut h = DVector::zeros(rows);
    let mu = config.mu;
    let fz_max = config.fz_max_body_weights * model.mass * GRAVITY;
    for k in 0..legs.len() {
        let (r0, c0) = (6 * k, 3 * k);
        // |fx| <= mu fz, |fy| <= mu fz
        g[(r0, c0)] = 1.0;
        g[(r0, c0 + 2)] = -mu;
        g[(r0 + 1, c0)] = -1.0;
        g[(r0 + 1, c0 + 2)] = -mu;
        g[(r0 + 2, c0 + 1)] = 1.0;
        g[(r0 + 2, c0 + 2)] = -mu;
        g[(r0 + 3, c0 + 1)] = -1.0;
        g[(r0 + 3, c0 + 2)] = -mu;
        // fz_min <= fz <= fz_max
        g[(r0 + 4, c0 + 2)] = -1.0;
        h[r0 + 4] = -config.fz_min;
        g[(r0 + 5, c0 + 2)] = 1.0;
        h[r0 + 5] = fz_max;
    }

    StanceProblem {
        problem: QpProblem {
            a,
            b,
            q_diag: DVector::from_column_slice(&config.q),
            r_diag: DVector::from_element(n, config.r),
            g,
            h,
        },
        legs,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn standing_feet(model: &RobotModel, height: f64) -> [Vec3; NUM_LEGS] {
        std::array::from_fn(|l| {
            let leg = crate::robot::Leg::from_index(l).unwrap();
            model.neutral_foot(leg, height) + Vec3::new(0.0, 0.0, height)
        })
    }

    #[test]
    fn interior_solution_matches_normal_equations() {
        let p = QpProblem {
            a: DMatrix::from_row_slice(2, 2, &[1.0, 0.5, -0.2, 1.0]),
            b: DVector::from_vec(vec![1.0, 2.0]),
            q_diag: DVector::from_vec(vec![1.0, 3.0]),
            r_diag: DVector::from_vec(vec![0.1, 0.1]),
            g: DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            h: DVector::from_vec(vec![100.0]),
        };
        let s = solve(&p);
        assert_eq!(s.status, QpStatus::Optimal);
        let q = DMatrix::from_diagonal(&p.q_diag);
        let lhs = p.a.transpose() * &q * &p.a + DMatrix::from_diagonal(&p.r_diag);
        let expected = lhs.lu().solve(&(p.a.transpose() * &q * &p.b)).unwrap();
        assert_relative_eq!(s.x, expected, epsilon = 1e-12);
    }

    #[test]
    fn single_leg_under_com_carries_weight() {
        let model = RobotModel::default();
        let mut feet = [Vec3::zeros(); 4];
        feet[0] = Vec3::new(0.0, 0.0, -0.3);
        let cfg = StanceQpConfig {
            r: 1e-12,
            ..Default::default()
        };
        let sp = build_stance_problem(
            &model,
            &Vec3::zeros(),
            &Vec3::zeros(),
            &feet,
            &[true, false, false, false],
            &Vector6::zeros(),
            &cfg,
        );
        let s = solve(&sp.problem);
        assert_eq!(s.status, QpStatus::Optimal);
        assert_relative_eq!(s.x[2], model.mass * GRAVITY, epsilon = 1e-6);
        assert!(s.x[0].abs() < 1e-6 && s.x[1].abs() < 1e-6);
    }

    #[test]
    fn angular_block_is_cross_product() {
        let model = RobotModel::default();
        let mut feet = [Vec3::zeros(); 4];
        feet[2] = Vec3::new(0.0, 0.0, -0.3);
        let sp = build_stance_problem(
            &model,
            &Vec3::zeros(),
            &Vec3::zeros(),
            &feet,
            &[false, false, true, false],
            &Vector6::zeros(),
            &StanceQpConfig::default(),
        );
        let expected = model.inertia_body.try_inverse().unwrap() * skew(&Vec3::new(0.0, 0.0, -0.3));
        let block = sp.problem.a.fixed_view::<3, 3>(3, 0).into_owned();
        assert_relative_eq!(block, expected, epsilon = 1e-14);
        assert_eq!(sp.legs, vec![2]);
    }

    #[test]
    fn friction_rows_bound_tangential_force() {
        let model = RobotModel::default();
        let sp = build_stance_problem(
            &model,
            &Vec3::zeros(),
            &Vec3::zeros(),
            &[Vec3::new(0.0, 0.0, -0.3); 4],
            &[true, false, false, false],
            &Vector6::zeros(),
            &StanceQpConfig::default(),
        );
        let feasible = |fx: f64| {
            let x = DVector::from_vec(vec![fx, 0.0, 10.0]);
            sp.problem.max_violation(&x) == 0.0
        };
        assert!(feasible(6.0) && feasible(-6.0));
        assert!(!feasible(6.01) && !feasible(-6.01));
    }

    #[test]
    fn symmetric_stance_shares_weight_equally() {
        let model = RobotModel::default();
        // mirror-symmetric feet about the CoM
        let feet: [Vec3; 4] = std::array::from_fn(|l| {
            let leg = crate::robot::Leg::from_index(l).unwrap();
            Vec3::new(0.18 * leg.front_sign(), 0.13 * leg.side_sign(), -0.28)
        });
        let cfg = StanceQpConfig {
            r: 1e-10,
            ..Default::default()
        };
        let sp = build_stance_problem(
            &model,
            &Vec3::zeros(),
            &Vec3::zeros(),
            &feet,
            &[true; 4],
            &Vector6::zeros(),
            &cfg,
        );
        let s = solve(&sp.problem);
        let f = sp.leg_forces(&s.x);
        let total: f64 = f.iter().map(|v| v.z).sum();
        assert!((total - model.mass * GRAVITY).abs() < 1e-6, "{total}");
        for leg in 1..4 {
            assert!((f[leg].z - f[0].z).abs() < 1e-6);
        }
        let _ = standing_feet(&model, 0.28);
    }

    #[test]
    fn contradictory_bounds_are_infeasible() {
        let p = QpProblem {
            a: DMatrix::identity(1, 1),
            b: DVector::from_vec(vec![0.0]),
            q_diag: DVector::from_vec(vec![1.0]),
            r_diag: DVector::from_vec(vec![1e-3]),
            g: DMatrix::from_row_slice(2, 1, &[1.0, -1.0]),
            h: DVector::from_vec(vec![-1.0, -1.0]),
        };
        assert_eq!(solve(&p).status, QpStatus::Infeasible);
    }

    #[test]
    fn warm_start_reproduces_cold_solution() {
        let model = RobotModel::default();
        let feet = standing_feet(&model, 0.28);
        let mut accel = Vector6::zeros();
        accel[0] = 8.0;
        accel[5] = 30.0;
        let sp = build_stance_problem(
            &model,
            &Vec3::new(0.05, -0.02, 0.3),
            &Vec3::new(0.0, 0.0, 0.28),
            &feet,
            &[true; 4],
            &accel,
            &StanceQpConfig::default(),
        );
        let cold = solve(&sp.problem);
        let mut solver = QpSolver::new();
        solver.solve(&sp.problem);
        let warm = solver.solve(&sp.problem);
        assert_eq!(warm.status, QpStatus::Optimal);
        assert!(warm.iterations <= cold.iterations);
        assert_relative_eq!(warm.x, cold.x, epsilon = 1e-9);
        assert!(warm.kkt_residual < 1e-6);
    }
}
