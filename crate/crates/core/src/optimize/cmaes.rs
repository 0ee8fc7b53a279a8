//! (mu/mu_w, lambda)-CMA-ES with rank-one and rank-mu covariance updates and
//! cumulative step-size adaptation. Minimizes.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::exec::Exec;

#[derive(Clone, Debug, PartialEq)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.iter().zip(&upper).any(|(l, u)| !(l <= u)) {
            return Err(Error::spec("bounds", "lower and upper must pair up with lower <= upper"));
        }
        Ok(Self { lower, upper })
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (l, u))| *l <= *v && *v <= *u)
    }

    pub fn clamp(&self, x: &mut [f64]) {
        for (v, (l, u)) in x.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *v = v.clamp(*l, *u);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CmaConfig {
    /// Population size.
    pub lambda: usize,
    pub sigma0: f64,
    pub max_iters: usize,
    pub seed: u64,
    /// Stop once the best value reaches this.
    pub target: Option<f64>,
    /// Stop once the step size times the largest axis falls below this.
    pub tol_x: f64,
    /// Resampling attempts for an out-of-bounds candidate before clamping.
    pub max_resample: usize,
    pub exec: Exec,
}

impl Default for CmaConfig {
    fn default() -> Self {
        Self {
            lambda: 16,
            sigma0: 0.3,
            max_iters: 200,
            seed: 0,
            target: None,
            tol_x: 1e-14,
            max_resample: 100,
            exec: Exec::default(),
        }
    }
}

/// Progress after one generation (iteration 0 holds the seed candidates).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterRecord {
    pub iteration: usize,
    pub evaluations: usize,
    pub best: f64,
    pub mean: f64,
    pub sigma: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CmaResult {
    pub best_x: Vec<f64>,
    pub best_f: f64,
    pub history: Vec<IterRecord>,
    pub evaluations: usize,
}

fn sanitize(f: f64) -> f64 {
    if f.is_nan() {
        f64::INFINITY
    } else {
        f
    }
}

/// Minimizes `f` from mean `x0`. `seeds` are evaluated before the first
/// generation and count toward the best-so-far record.
pub fn cma_es<F>(
    f: F,
    x0: &[f64],
    bounds: Option<&Bounds>,
    seeds: &[Vec<f64>],
    cfg: &CmaConfig,
) -> Result<CmaResult>
where
    F: Fn(&[f64]) -> f64 + Sync + Send,
{
    let n = x0.len();
    if n == 0 {
        return Err(Error::spec("x0", "empty decision vector"));
    }
    if cfg.lambda < 2 {
        return Err(Error::spec("lambda", "population needs at least two members"));
    }
    if !(cfg.sigma0 > 0.0 && cfg.sigma0.is_finite()) {
        return Err(Error::spec("sigma0", "must be positive and finite"));
    }
    if let Some(b) = bounds {
        if b.lower.len() != n {
            return Err(Error::spec("bounds", "dimension differs from x0"));
        }
    }
    if seeds.iter().any(|s| s.len() != n) {
        return Err(Error::spec("seeds", "dimension differs from x0"));
    }

    let nf = n as f64;
    let lambda = cfg.lambda;
    let mu = lambda / 2;
    let raw: Vec<f64> = (0..mu)
        .map(|i| (mu as f64 + 0.5).ln() - ((i + 1) as f64).ln())
        .collect();
    let wsum: f64 = raw.iter().sum();
    let weights: Vec<f64> = raw.iter().map(|w| w / wsum).collect();
    let mueff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
    let cc = (4.0 + mueff / nf) / (nf + 4.0 + 2.0 * mueff / nf);
    let cs = (mueff + 2.0) / (nf + mueff + 5.0);
    let c1 = 2.0 / ((nf + 1.3).powi(2) + mueff);
    let cmu = (1.0 - c1).min(2.0 * (mueff - 2.0 + 1.0 / mueff) / ((nf + 2.0).powi(2) + mueff));
    let damps = 1.0 + 2.0 * (((mueff - 1.0) / (nf + 1.0)).sqrt() - 1.0).max(0.0) + cs;
    let chi_n = nf.sqrt() * (1.0 - 1.0 / (4.0 * nf) + 1.0 / (21.0 * nf * nf));

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut mean = DVector::from_column_slice(x0);
    if let Some(b) = bounds {
        b.clamp(mean.as_mut_slice());
    }
    let mut sigma = cfg.sigma0;
    let mut c = DMatrix::<f64>::identity(n, n);
    let mut b_mat = DMatrix::<f64>::identity(n, n);
    let mut d = DVector::<f64>::from_element(n, 1.0);
    let mut pc = DVector::<f64>::zeros(n);
    let mut ps = DVector::<f64>::zeros(n);

    let mut best_x = mean.as_slice().to_vec();
    let mut best_f = f64::INFINITY;
    let mut history = Vec::new();
    let mut evaluations = 0;

    if !seeds.is_empty() {
        let mut pts = seeds.to_vec();
        if let Some(b) = bounds {
            pts.iter_mut().for_each(|p| b.clamp(p));
        }
        let fs: Vec<f64> = cfg.exec.map(&pts, |x| sanitize(f(x)));
        evaluations += pts.len();
        for (x, &v) in pts.iter().zip(&fs) {
            if v < best_f {
                best_f = v;
                best_x = x.clone();
            }
        }
        history.push(IterRecord {
            iteration: 0,
            evaluations,
            best: best_f,
            mean: fs.iter().sum::<f64>() / fs.len() as f64,
            sigma,
        });
    }

    for iter in 1..=cfg.max_iters {
        if cfg.target.is_some_and(|t| best_f <= t) {
            break;
        }
        // sample
        let mut pop: Vec<Vec<f64>> = Vec::with_capacity(lambda);
        for _ in 0..lambda {
            let mut tries = 0;
            let x = loop {
                let z = DVector::<f64>::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
                let y = &b_mat * d.component_mul(&z);
                let mut x: Vec<f64> = (&mean + sigma * y).as_slice().to_vec();
                match bounds {
                    Some(b) if !b.contains(&x) => {
                        tries += 1;
                        if tries >= cfg.max_resample {
                            b.clamp(&mut x);
                            break x;
                        }
                    }
                    _ => break x,
                }
            };
            pop.push(x);
        }
        let fs: Vec<f64> = cfg.exec.map(&pop, |x| sanitize(f(x)));
        evaluations += lambda;

        let mut order: Vec<usize> = (0..lambda).collect();
        order.sort_by(|&i, &j| fs[i].total_cmp(&fs[j]).then(i.cmp(&j)));
        if fs[order[0]] < best_f {
            best_f = fs[order[0]];
            best_x = pop[order[0]].clone();
        }

        // recombination
        let old = mean.clone();
        let ys: Vec<DVector<f64>> = order[..mu]
            .iter()
            .map(|&i| (DVector::from_column_slice(&pop[i]) - &old) / sigma)
            .collect();
        let mut yw = DVector::<f64>::zeros(n);
        for (w, y) in weights.iter().zip(&ys) {
            yw += *w * y;
        }
        mean = &old + sigma * &yw;

        // C^{-1/2} yw
        let dinv = d.map(|v| if v > 0.0 { 1.0 / v } else { 0.0 });
        let c_inv_sqrt_yw = &b_mat * dinv.component_mul(&(b_mat.transpose() * &yw));
        ps = (1.0 - cs) * &ps + (cs * (2.0 - cs) * mueff).sqrt() * c_inv_sqrt_yw;
        let ps_norm = ps.norm();
        let hsig_lhs = ps_norm / (1.0 - (1.0 - cs).powi(2 * iter as i32)).sqrt() / chi_n;
        let hsig = if hsig_lhs < 1.4 + 2.0 / (nf + 1.0) { 1.0 } else { 0.0 };
        pc = (1.0 - cc) * &pc + hsig * (cc * (2.0 - cc) * mueff).sqrt() * &yw;

        let mut rank_mu = DMatrix::<f64>::zeros(n, n);
        for (w, y) in weights.iter().zip(&ys) {
            rank_mu += *w * y * y.transpose();
        }
        let delta_h = (1.0 - hsig) * cc * (2.0 - cc);
        c = (1.0 - c1 - cmu) * &c + c1 * (&pc * pc.transpose() + delta_h * &c) + cmu * rank_mu;
        c = 0.5 * (&c + c.transpose());

        sigma *= ((cs / damps) * (ps_norm / chi_n - 1.0)).exp();
        if !sigma.is_finite() {
            sigma = cfg.sigma0;
        }

        let eig = SymmetricEigen::new(c.clone());
        let top = eig.eigenvalues.max().max(f64::MIN_POSITIVE);
        let floor = top * 1e-20;
        d = eig.eigenvalues.map(|v| v.max(floor).sqrt());
        b_mat = eig.eigenvectors;
        if d.iter().chain(b_mat.iter()).any(|v| !v.is_finite()) {
            // numerical breakdown: restart the shape, keep the mean
            c = DMatrix::identity(n, n);
            b_mat = DMatrix::identity(n, n);
            d = DVector::from_element(n, 1.0);
            pc.fill(0.0);
            ps.fill(0.0);
        }

        let finite: Vec<f64> = fs.iter().copied().filter(|v| v.is_finite()).collect();
        history.push(IterRecord {
            iteration: iter,
            evaluations,
            best: best_f,
            mean: if finite.is_empty() {
                f64::INFINITY
            } else {
                finite.iter().sum::<f64>() / finite.len() as f64
            },
            sigma,
        });
        if sigma * d.max() < cfg.tol_x {
            break;
        }
    }

    Ok(CmaResult {
        best_x,
        best_f,
        history,
        evaluations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_converges() {
        let target = [0.5, -0.2, 0.1, 0.0, 0.3, -0.4, 0.2, 0.05];
        let f = |x: &[f64]| x.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        let cfg = CmaConfig {
            seed: 3,
            ..Default::default()
        };
        let r = cma_es(f, &[0.0; 8], None, &[], &cfg).unwrap();
        let dist = r.best_x.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!(dist < 1e-6, "{dist} after {} iterations", r.history.len());
        assert!(r.history.windows(2).all(|w| w[1].best <= w[0].best));
    }

    #[test]
    fn flat_objective_stays_finite() {
        let r = cma_es(|_| 1.0, &[0.0; 4], None, &[], &CmaConfig { max_iters: 50, ..Default::default() })
            .unwrap();
        assert!(r.best_x.iter().all(|v| v.is_finite()));
        assert!(r.history.iter().all(|h| h.sigma.is_finite()));
    }
}
