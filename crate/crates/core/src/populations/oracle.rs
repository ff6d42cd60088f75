//! Population limits of the subsampled estimators.
//!
//! Each limit minimises a population risk of the form
//! `E[ sum_y P(y|x) a(x, y) rho(theta'x~ + b(x), y) ]` where `a` is the
//! acceptance probability and `b` the fitting offset.

use nalgebra::DVector;

use super::{Integration, Population};
use crate::data::ModelParams;
use crate::error::{Error, Result};
use crate::linalg::{self, packed_len, unpack_symmetric};
use crate::numerics::{log1p_exp, logit, sigmoid};

const MAX_ITER: usize = 200;
const MAX_HALVINGS: usize = 60;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleFit {
    pub params: ModelParams,
    /// `max_j |score_j| / E[a]` at the solution.
    pub score_max: f64,
    /// Monte-Carlo standard errors of the coefficients; zero when exact.
    pub param_se: Vec<f64>,
    pub exact: bool,
    pub iterations: usize,
}

#[inline]
fn xt(x: &[f64], i: usize) -> f64 {
    if i == 0 {
        1.0
    } else {
        x[i - 1]
    }
}

struct RiskEval {
    loss: f64,
    mass: f64,
    grad: Vec<f64>,
    hess: nalgebra::DMatrix<f64>,
}

fn eval_risk<A, O>(
    pop: &Population,
    opts: &Integration,
    acc: &A,
    off: &O,
    theta: &ModelParams,
) -> Result<RiskEval>
where
    A: Fn(&[f64], bool) -> f64 + Sync,
    O: Fn(&[f64]) -> f64 + Sync,
{
    let k = pop.dim() + 1;
    let width = 2 + k + packed_len(k);
    let e = pop.integrate(opts, width, false, |x, f, out| {
        let p = sigmoid(f);
        let w1 = p * acc(x, true);
        let w0 = (1.0 - p) * acc(x, false);
        let eta = theta.linear_predictor(x) + off(x);
        let s = sigmoid(eta);
        out[0] = w1 * log1p_exp(-eta) + w0 * log1p_exp(eta);
        out[1] = w1 + w0;
        let gw = w1 * (s - 1.0) + w0 * s;
        for j in 0..k {
            out[2 + j] = gw * xt(x, j);
        }
        let hw = (w1 + w0) * s * (1.0 - s);
        let mut idx = 2 + k;
        for i in 0..k {
            let hi = hw * xt(x, i);
            for j in i..k {
                out[idx] = hi * xt(x, j);
                idx += 1;
            }
        }
    })?;
    Ok(RiskEval {
        loss: e.mean[0],
        mass: e.mean[1],
        grad: e.mean[2..2 + k].to_vec(),
        hess: unpack_symmetric(&e.mean[2 + k..], k),
    })
}

/// Minimises the population risk with acceptance `acc(x, y)` and offset
/// `off(x)` by damped Newton. Monte-Carlo populations reuse one fixed set
/// of draws for every iteration, so the solution is exact for that sample
/// and `param_se` reports its Monte-Carlo error.
pub fn population_fit<A, O>(
    pop: &Population,
    opts: &Integration,
    acc: A,
    off: O,
    start: Option<&ModelParams>,
    tol: f64,
) -> Result<OracleFit>
where
    A: Fn(&[f64], bool) -> f64 + Sync,
    O: Fn(&[f64]) -> f64 + Sync,
{
    let p = pop.dim();
    let k = p + 1;
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument("tolerance must be positive".into()));
    }
    let mut theta = match start {
        Some(s) => {
            s.check_dim(p)?;
            s.clone()
        }
        None => {
            let m = pop.integrate(opts, 3, false, |x, f, out| {
                let q = sigmoid(f);
                let w1 = q * acc(x, true);
                let w = w1 + (1.0 - q) * acc(x, false);
                out[0] = w1;
                out[1] = w;
                out[2] = w * off(x);
            })?;
            if !(m.mean[0] > 0.0 && m.mean[0] < m.mean[1]) {
                return Err(Error::SingleClass);
            }
            let mut t = ModelParams::zeros(p);
            t.intercept = logit(m.mean[0] / m.mean[1]) - m.mean[2] / m.mean[1];
            t
        }
    };
    let mut ev = eval_risk(pop, opts, &acc, &off, &theta)?;
    let mut iterations = 0;
    loop {
        let score_max = linalg::max_abs(&ev.grad) / ev.mass;
        if score_max < tol {
            break;
        }
        if iterations >= MAX_ITER {
            return Err(Error::NotConverged {
                iterations,
                grad_norm: score_max,
            });
        }
        iterations += 1;
        let rhs = -DVector::from_column_slice(&ev.grad);
        let step = linalg::solve_spd_with_ridge(&ev.hess, &rhs)?;
        let step = ModelParams::from_slice(step.as_slice());
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let cand = theta.add(&step.scale(t));
            if cand.norm() > 1e6 || !cand.is_finite() {
                return Err(Error::Separation { norm: cand.norm() });
            }
            let cev = eval_risk(pop, opts, &acc, &off, &cand)?;
            if cev.loss <= ev.loss + 1e-14 * ev.loss.abs() {
                accepted = Some((cand, cev));
                break;
            }
            t *= 0.5;
        }
        match accepted {
            Some((cand, cev)) => {
                let moved = cand.max_abs_diff(&theta);
                theta = cand;
                ev = cev;
                if moved < 1e-15 * (1.0 + theta.norm()) {
                    let score_max = linalg::max_abs(&ev.grad) / ev.mass;
                    if score_max < tol.sqrt() {
                        break;
                    }
                    return Err(Error::NotConverged {
                        iterations,
                        grad_norm: score_max,
                    });
                }
            }
            None => {
                let score_max = linalg::max_abs(&ev.grad) / ev.mass;
                if score_max < tol.sqrt() {
                    break;
                }
                return Err(Error::NotConverged {
                    iterations,
                    grad_norm: score_max,
                });
            }
        }
    }
    let score_max = linalg::max_abs(&ev.grad) / ev.mass;
    let exact = pop.has_exact_measure();
    let param_se = if exact {
        vec![0.0; k]
    } else {
        monte_carlo_param_se(pop, opts, &acc, &off, &theta, &ev.hess)?
    };
    Ok(OracleFit {
        params: theta,
        score_max,
        param_se,
        exact,
        iterations,
    })
}

/// Sandwich `H^{-1} V H^{-1}` with `V` the stratified Monte-Carlo
/// covariance of the mean score.
fn monte_carlo_param_se<A, O>(
    pop: &Population,
    opts: &Integration,
    acc: &A,
    off: &O,
    theta: &ModelParams,
    hess: &nalgebra::DMatrix<f64>,
) -> Result<Vec<f64>>
where
    A: Fn(&[f64], bool) -> f64 + Sync,
    O: Fn(&[f64]) -> f64 + Sync,
{
    let k = pop.dim() + 1;
    let e = pop.integrate(opts, k + packed_len(k), false, |x, f, out| {
        let p = sigmoid(f);
        let w1 = p * acc(x, true);
        let w0 = (1.0 - p) * acc(x, false);
        let s = sigmoid(theta.linear_predictor(x) + off(x));
        let gw = w1 * (s - 1.0) + w0 * s;
        for j in 0..k {
            out[j] = gw * xt(x, j);
        }
        let mut idx = k;
        for i in 0..k {
            for j in i..k {
                out[idx] = out[i] * out[j];
                idx += 1;
            }
        }
    })?;
    let mut v = nalgebra::DMatrix::zeros(k, k);
    for st in &e.strata {
        let m = DVector::from_column_slice(&st.mean[..k]);
        let second = unpack_symmetric(&st.mean[k..], k);
        let cov = (second - &m * m.transpose()) * (st.draws as f64 / (st.draws as f64 - 1.0));
        v += cov * (st.prior * st.prior / st.draws as f64);
    }
    let hinv = linalg::inverse_spd(hess, "population Hessian")?;
    let c = &hinv * v * &hinv;
    Ok((0..k).map(|i| c[(i, i)].max(0.0).sqrt()).collect())
}

/// Population risk minimiser `theta*` under the full population.
pub fn population_theta_star(pop: &Population, opts: &Integration, tol: f64) -> Result<OracleFit> {
    if let Some(lin) = pop.linear_log_odds() {
        return Ok(exact_fit(lin.clone()));
    }
    population_fit(pop, opts, |_, _| 1.0, |_| 0.0, None, tol)
}

fn exact_fit(params: ModelParams) -> OracleFit {
    let k = params.dim() + 1;
    OracleFit {
        params,
        score_max: 0.0,
        param_se: vec![0.0; k],
        exact: true,
        iterations: 0,
    }
}

/// Selection bias `b = log(P(Y=0) / P(Y=1))` under which case-control
/// sampling yields equal expected class counts.
pub fn equal_class_bias(pop: &Population, opts: &Integration) -> Result<f64> {
    let p1 = pop.case_rate(opts)?;
    Ok(((1.0 - p1) / p1).ln())
}

/// Large-sample limit of the adjusted case-control estimate with
/// selection bias `b = log(a1 / a0)`.
pub fn theta_cc_limit(pop: &Population, opts: &Integration, b: f64, tol: f64) -> Result<OracleFit> {
    if !b.is_finite() {
        return Err(Error::NonFinite("selection bias"));
    }
    if let Some(lin) = pop.linear_log_odds() {
        return Ok(exact_fit(lin.clone()));
    }
    let (a1, a0) = if b >= 0.0 { (1.0, (-b).exp()) } else { (b.exp(), 1.0) };
    population_fit(
        pop,
        opts,
        move |_, y| if y { a1 } else { a0 },
        move |_| b,
        None,
        tol,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::populations::{Cell, PopulationSpec};

    /// Independent exact Newton for a discrete population.
    fn cell_newton(cells: &[(Vec<f64>, f64, f64)], b: f64, a0: f64) -> Vec<f64> {
        let k = cells[0].0.len() + 1;
        let mut th = vec![0.0; k];
        for _ in 0..200 {
            let mut g = vec![0.0; k];
            let mut h = nalgebra::DMatrix::<f64>::zeros(k, k);
            for (x, m, f) in cells {
                let xt: Vec<f64> = std::iter::once(1.0).chain(x.iter().copied()).collect();
                let p = 1.0 / (1.0 + (-f).exp());
                let eta: f64 = th.iter().zip(&xt).map(|(a, b)| a * b).sum::<f64>() + b;
                let s = 1.0 / (1.0 + (-eta).exp());
                let w1 = m * p;
                let w0 = m * (1.0 - p) * a0;
                for i in 0..k {
                    g[i] += (w1 * (s - 1.0) + w0 * s) * xt[i];
                    for j in 0..k {
                        h[(i, j)] += (w1 + w0) * s * (1.0 - s) * xt[i] * xt[j];
                    }
                }
            }
            let step = h.cholesky().unwrap().solve(&DVector::from_vec(g));
            let mut t = 1.0;
            if step.amax() > 1.0 {
                t = 1.0 / step.amax();
            }
            for i in 0..k {
                th[i] -= t * step[i];
            }
        }
        th
    }

    fn oatmeal_cells() -> Vec<(Vec<f64>, f64, f64)> {
        vec![
            (vec![0.0, 0.0], 0.45, -5.0),
            (vec![0.0, 1.0], 0.05, -4.0),
            (vec![1.0, 0.0], 0.45, -10.0),
            (vec![1.0, 1.0], 0.05, -1.0),
        ]
    }

    #[test]
    fn oatmeal_theta_star_matches_independent_newton() {
        let pop = PopulationSpec::oatmeal().compile().unwrap();
        let fit = population_theta_star(&pop, &Integration::default(), 1e-13).unwrap();
        let oracle = cell_newton(&oatmeal_cells(), 0.0, 1.0);
        assert!(fit.exact);
        for (a, b) in fit.params.to_vec().iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
        assert!((fit.params.slopes[0] - 1.388).abs() < 1e-3);
    }

    #[test]
    fn oatmeal_cc_limit_matches_independent_newton() {
        let pop = PopulationSpec::oatmeal().compile().unwrap();
        let opts = Integration::default();
        let b = equal_class_bias(&pop, &opts).unwrap();
        let fit = theta_cc_limit(&pop, &opts, b, 1e-13).unwrap();
        let oracle = cell_newton(&oatmeal_cells(), b, (-b).exp());
        for (a, o) in fit.params.to_vec().iter().zip(&oracle) {
            assert!((a - o).abs() < 1e-9, "{a} vs {o}");
        }
        assert!((fit.params.slopes[0] + 0.825).abs() < 2e-3);
    }

    #[test]
    fn zero_bias_cc_limit_is_theta_star() {
        let pop = PopulationSpec::oatmeal().compile().unwrap();
        let opts = Integration::default();
        let a = theta_cc_limit(&pop, &opts, 0.0, 1e-13).unwrap();
        let b = population_theta_star(&pop, &opts, 1e-13).unwrap();
        assert!(a.params.max_abs_diff(&b.params) < 1e-10);
    }

    #[test]
    fn cc_limit_depends_on_bias() {
        let pop = PopulationSpec::oatmeal().compile().unwrap();
        let opts = Integration::default();
        let a = theta_cc_limit(&pop, &opts, 0.0, 1e-12).unwrap();
        let b = theta_cc_limit(&pop, &opts, 3.8, 1e-12).unwrap();
        assert!((a.params.slopes[0] - b.params.slopes[0]).abs() > 1.0);
    }

    fn linear_discrete() -> Population {
        let theta = ModelParams::new(-2.0, vec![1.5, -0.5]);
        let mut cells = Vec::new();
        for (i, x) in [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 2.0], [2.0, 1.0]]
            .iter()
            .enumerate()
        {
            cells.push(Cell {
                x: x.to_vec(),
                mass: [0.3, 0.2, 0.2, 0.15, 0.15][i],
                logodds: theta.linear_predictor(x),
            });
        }
        PopulationSpec::Discrete {
            cells,
            feature_names: None,
        }
        .compile()
        .unwrap()
    }

    #[test]
    fn correct_specification_recovers_generating_coefficients() {
        let pop = linear_discrete();
        let opts = Integration::default();
        let truth = ModelParams::new(-2.0, vec![1.5, -0.5]);
        let star = population_theta_star(&pop, &opts, 1e-13).unwrap();
        assert!(star.params.max_abs_diff(&truth) < 1e-10);
        for b in [-2.0, 1.0, 5.0] {
            let cc = theta_cc_limit(&pop, &opts, b, 1e-13).unwrap();
            assert!(cc.params.max_abs_diff(&truth) < 1e-10);
        }
    }

    #[test]
    fn perturbed_start_returns_same_fixed_point() {
        let pop = PopulationSpec::oatmeal().compile().unwrap();
        let opts = Integration::default();
        let star = population_theta_star(&pop, &opts, 1e-13).unwrap();
        let noise = ModelParams::new(0.6, vec![-0.48, 0.64]);
        let again =
            population_fit(&pop, &opts, |_, _| 1.0, |_| 0.0, Some(&star.params.add(&noise)), 1e-13).unwrap();
        assert!(again.params.max_abs_diff(&star.params) < 1e-9);
    }

    #[test]
    fn steplogit_theta_star_matches_probabilities_near_one() {
        let pop = PopulationSpec::steplogit_example().compile().unwrap();
        let star = population_theta_star(&pop, &Integration::default(), 1e-12).unwrap();
        let f = |x: f64| pop.true_log_odds(&[x]).unwrap();
        let fit = |x: f64| star.params.linear_predictor(&[x]);
        // far above f on the logit scale for small x
        assert!(fit(0.05) - f(0.05) > 1.0);
        // close on the probability scale near x = 1
        assert!((sigmoid(fit(0.98)) - sigmoid(f(0.98))).abs() < 0.05);
    }

    #[test]
    fn monte_carlo_fit_reports_standard_errors() {
        let pop = PopulationSpec::example2().compile().unwrap();
        let opts = Integration::with_draws(200_000);
        let fit = population_theta_star(&pop, &opts, 1e-10).unwrap();
        assert!(!fit.exact);
        assert!(fit.param_se.iter().all(|s| *s > 0.0 && *s < 0.5));
        let finer = population_theta_star(&pop, &Integration { mc_seed: 99, ..Integration::with_draws(800_000) }, 1e-10).unwrap();
        for j in 0..3 {
            let d = (fit.params.to_vec()[j] - finer.params.to_vec()[j]).abs();
            let se = (fit.param_se[j].powi(2) + finer.param_se[j].powi(2)).sqrt();
            assert!(d < 4.0 * se, "coordinate {j}: {d} vs {se}");
        }
    }
}
