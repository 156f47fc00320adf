//! Levenberg–Marquardt curve fitting with analytic gradients.
//!
//! Minimises `Σ (yᵢ − f(xᵢ; p))²` for a model that returns its value and
//! parameter gradient at each abscissa. The damping follows Marquardt's
//! diagonal scaling, `(JᵀJ + λ·diag JᵀJ) δ = Jᵀr`.

use nalgebra::{SMatrix, SVector};

use crate::error::{Error, Result};

pub const DEFAULT_MAX_ITERATIONS: usize = 200;
pub const DEFAULT_STEP_TOLERANCE: f64 = 1e-9;

pub trait CurveModel<const P: usize> {
    /// Model value and gradient with respect to the parameters.
    fn eval(&self, x: f64, params: &SVector<f64, P>) -> (f64, SVector<f64, P>);

    /// Rejects parameter vectors outside the model's domain.
    fn admissible(&self, _params: &SVector<f64, P>) -> bool {
        true
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmOptions {
    pub max_iterations: usize,
    /// Converged once every parameter moves less than this, relative to its size.
    pub step_tolerance: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self { max_iterations: DEFAULT_MAX_ITERATIONS, step_tolerance: DEFAULT_STEP_TOLERANCE }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmSolution<const P: usize> {
    pub params: SVector<f64, P>,
    /// `s²·(JᵀJ)⁻¹` with `s² = RSS/(n − P)`.
    pub covariance: SMatrix<f64, P, P>,
    pub rss: f64,
    pub iterations: usize,
}

impl<const P: usize> LmSolution<P> {
    pub fn stderr(&self, i: usize) -> f64 {
        self.covariance[(i, i)].max(0.0).sqrt()
    }

    pub fn residual_rms(&self, n: usize) -> f64 {
        (self.rss / n as f64).sqrt()
    }
}

struct Linearisation<const P: usize> {
    jtj: SMatrix<f64, P, P>,
    jtr: SVector<f64, P>,
    rss: f64,
}

fn linearise<M: CurveModel<P>, const P: usize>(model: &M, xs: &[f64], ys: &[f64], p: &SVector<f64, P>) -> Linearisation<P> {
    let mut jtj = SMatrix::<f64, P, P>::zeros();
    let mut jtr = SVector::<f64, P>::zeros();
    let mut rss = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        let (f, g) = model.eval(x, p);
        let r = y - f;
        rss += r * r;
        jtj += g * g.transpose();
        jtr += g * r;
    }
    Linearisation { jtj, jtr, rss }
}

fn rss_at<M: CurveModel<P>, const P: usize>(model: &M, xs: &[f64], ys: &[f64], p: &SVector<f64, P>) -> f64 {
    xs.iter().zip(ys).map(|(&x, &y)| (y - model.eval(x, p).0).powi(2)).sum()
}

pub fn fit_curve<M: CurveModel<P>, const P: usize>(
    model: &M,
    xs: &[f64],
    ys: &[f64],
    initial: SVector<f64, P>,
    options: &LmOptions,
) -> Result<LmSolution<P>> {
    assert_eq!(xs.len(), ys.len(), "abscissae and ordinates differ in length");
    if xs.len() <= P {
        return Err(Error::InvalidParameter {
            name: "points",
            reason: format!("need more than {P} points, got {}", xs.len()),
        });
    }
    let mut p = initial;
    let mut lambda = 1e-3;
    let mut lin = linearise(model, xs, ys, &p);
    for iteration in 1..=options.max_iterations {
        let mut damped = lin.jtj;
        for i in 0..P {
            let d = lin.jtj[(i, i)];
            damped[(i, i)] = d + lambda * if d > 0.0 { d } else { 1e-12 };
        }
        let Some(step) = damped.cholesky().map(|c| c.solve(&lin.jtr)) else {
            lambda *= 10.0;
            if lambda > 1e16 {
                return Err(Error::NoConvergence { iterations: iteration });
            }
            continue;
        };
        let small = (0..P).all(|i| step[i].abs() <= options.step_tolerance * (p[i].abs() + options.step_tolerance));
        let trial = p + step;
        let trial_rss = if model.admissible(&trial) { rss_at(model, xs, ys, &trial) } else { f64::INFINITY };
        if trial_rss.is_finite() && trial_rss <= lin.rss {
            p = trial;
            lin = linearise(model, xs, ys, &p);
            lambda = (lambda * 0.1).max(1e-12);
        } else {
            lambda *= 10.0;
        }
        if small || lambda > 1e16 {
            return finish(model, xs, ys, p, iteration);
        }
    }
    Err(Error::NoConvergence { iterations: options.max_iterations })
}

fn finish<M: CurveModel<P>, const P: usize>(
    model: &M,
    xs: &[f64],
    ys: &[f64],
    params: SVector<f64, P>,
    iterations: usize,
) -> Result<LmSolution<P>> {
    let lin = linearise(model, xs, ys, &params);
    let dof = (xs.len() - P) as f64;
    let inverse = lin.jtj.try_inverse().ok_or(Error::NoConvergence { iterations })?;
    Ok(LmSolution { params, covariance: inverse * (lin.rss / dof), rss: lin.rss, iterations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector2;

    struct Exponential;

    impl CurveModel<2> for Exponential {
        fn eval(&self, x: f64, p: &Vector2<f64>) -> (f64, Vector2<f64>) {
            let e = (-p[1] * x).exp();
            (p[0] * e, Vector2::new(e, -p[0] * x * e))
        }
    }

    #[test]
    fn recovers_exponential_decay() {
        let xs: Vec<f64> = (0..30).map(|k| k as f64 * 0.2).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * (-0.7 * x).exp()).collect();
        let sol = fit_curve(&Exponential, &xs, &ys, Vector2::new(1.0, 0.1), &LmOptions::default()).unwrap();
        assert!((sol.params[0] - 3.0).abs() < 1e-9);
        assert!((sol.params[1] - 0.7).abs() < 1e-9);
        assert!(sol.rss < 1e-18);
    }

    struct Line;

    impl CurveModel<2> for Line {
        fn eval(&self, x: f64, p: &Vector2<f64>) -> (f64, Vector2<f64>) {
            (p[0] + p[1] * x, Vector2::new(1.0, x))
        }
    }

    #[test]
    fn linear_covariance_matches_ordinary_least_squares() {
        let xs = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0];
        let ys = [0.1, 0.9, 2.2, 2.8, 4.1, 5.0];
        let sol = fit_curve(&Line, &xs, &ys, Vector2::new(0.0, 0.0), &LmOptions::default()).unwrap();
        // Closed-form OLS.
        let n = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let slope = sxy / sxx;
        let icpt = my - slope * mx;
        assert!((sol.params[1] - slope).abs() < 1e-9);
        assert!((sol.params[0] - icpt).abs() < 1e-9);
        let s2 = sol.rss / (n - 2.0);
        assert!((sol.stderr(1) - (s2 / sxx).sqrt()).abs() < 1e-9);
    }

    #[test]
    fn too_few_points() {
        let r = fit_curve(&Line, &[0.0, 1.0], &[0.0, 1.0], Vector2::zeros(), &LmOptions::default());
        assert!(matches!(r, Err(Error::InvalidParameter { .. })));
    }

    #[test]
    fn iteration_cap() {
        let xs: Vec<f64> = (0..30).map(|k| k as f64 * 0.2).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * (-0.7 * x).exp()).collect();
        let opts = LmOptions { max_iterations: 1, ..LmOptions::default() };
        let r = fit_curve(&Exponential, &xs, &ys, Vector2::new(1.0, 0.1), &opts);
        assert_eq!(r, Err(Error::NoConvergence { iterations: 1 }));
    }
}
