//! Population evaluation of the local case-control sandwich quantities.
//!
//! For a pilot `lambda`, acceptance `a(x, y) = |y - p_lambda(x)|`, scale
//! `c` and linear predictor `eta = (theta - lambda)'x~`, the estimator
//! weights accepted rows by `c a ∨ 1` after accepting with probability
//! `c a ∧ 1`. With `abar = E a(X, Y)` (at `c = 1`) the report holds
//!
//! * `G = E[ sum_y P(y|x) c a_y (y - sigma(eta)) x~ ] / abar`
//! * `H = E[ sum_y P(y|x) c a_y sigma'(eta) x~ x~' ] / abar`
//! * `J = E[ sum_y P(y|x) c a_y (c a_y ∨ 1) (y - sigma(eta))^2 x~ x~' ] / abar - G G'`
//! * `C = d G / d lambda` by central differences
//!
//! so that `sqrt(n) (theta_hat - theta_bar)` has covariance
//! `abar^{-1} H^{-1} J H^{-1}` where `n` is the full-sample size.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::ModelParams;
use crate::error::{Error, Result};
use crate::linalg::{self, packed_len, unpack_symmetric};
use crate::numerics::sigmoid;
use crate::populations::{population_fit, Integration, OracleFit, Population, PopulationSpec};

/// Finite-difference step for `C`.
pub const CROSSED_STEP: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalarEstimate {
    pub value: f64,
    pub se: f64,
}

#[inline]
fn xt(x: &[f64], i: usize) -> f64 {
    if i == 0 {
        1.0
    } else {
        x[i - 1]
    }
}

/// `abar(lambda) = E |Y - p_lambda(X)|`.
pub fn eval_abar(pop: &Population, opts: &Integration, lambda: &ModelParams) -> Result<ScalarEstimate> {
    eval_accept_rate(pop, opts, lambda, 1.0)
}

/// Expected accepted fraction `E[c a(X, Y) ∧ 1]`.
pub fn eval_accept_rate(
    pop: &Population,
    opts: &Integration,
    lambda: &ModelParams,
    c: f64,
) -> Result<ScalarEstimate> {
    lambda.check_dim(pop.dim())?;
    if !(c > 0.0) {
        return Err(Error::InvalidArgument("c must be positive".into()));
    }
    let e = pop.integrate(opts, 1, true, |x, f, out| {
        let p = sigmoid(f);
        let q = sigmoid(lambda.linear_predictor(x));
        out[0] = p * (c * (1.0 - q)).min(1.0) + (1.0 - p) * (c * q).min(1.0);
    })?;
    Ok(ScalarEstimate {
        value: e.mean[0],
        se: e.se[0],
    })
}

/// `abar` for several pilots in one integration pass.
pub fn eval_abar_many(
    pop: &Population,
    opts: &Integration,
    pilots: &[ModelParams],
) -> Result<Vec<ScalarEstimate>> {
    for l in pilots {
        l.check_dim(pop.dim())?;
    }
    let e = pop.integrate(opts, pilots.len(), true, |x, f, out| {
        let p = sigmoid(f);
        for (o, l) in out.iter_mut().zip(pilots) {
            let q = sigmoid(l.linear_predictor(x));
            *o = p * (1.0 - q) + (1.0 - p) * q;
        }
    })?;
    Ok(e.mean
        .iter()
        .zip(&e.se)
        .map(|(&value, &se)| ScalarEstimate { value, se })
        .collect())
}

/// Standard errors of the Monte-Carlo estimates, zero when exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloErrors {
    pub abar: f64,
    pub g: Vec<f64>,
    pub h: Vec<Vec<f64>>,
    pub j: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticsReport {
    pub spec: PopulationSpec,
    pub theta: ModelParams,
    pub lambda: ModelParams,
    pub c: f64,
    pub exact: bool,
    pub abar: f64,
    /// Expected accepted fraction at this `c`.
    pub accept_rate: f64,
    pub g: Vec<f64>,
    pub h: Vec<Vec<f64>>,
    pub j: Vec<Vec<f64>>,
    pub crossed: Option<Vec<Vec<f64>>>,
    /// Largest change in `C` when the step is halved.
    pub crossed_step_discrepancy: Option<f64>,
    /// `H^{-1} J H^{-1}`.
    pub sigma: Vec<Vec<f64>>,
    /// Full-sample sandwich at `theta`.
    pub sigma_full: Vec<Vec<f64>>,
    pub mc_se: MonteCarloErrors,
}

fn mat(rows: &[Vec<f64>]) -> DMatrix<f64> {
    linalg::from_rows(rows).expect("report matrices are square")
}

impl AsymptoticsReport {
    pub fn h_matrix(&self) -> DMatrix<f64> {
        mat(&self.h)
    }

    pub fn j_matrix(&self) -> DMatrix<f64> {
        mat(&self.j)
    }

    pub fn sigma_matrix(&self) -> DMatrix<f64> {
        mat(&self.sigma)
    }

    pub fn sigma_full_matrix(&self) -> DMatrix<f64> {
        mat(&self.sigma_full)
    }

    pub fn crossed_matrix(&self) -> Option<DMatrix<f64>> {
        self.crossed.as_deref().map(mat)
    }
}

/// Evaluates the report at `(theta, lambda)`. When `crossed` is set, `C` is
/// computed from central differences with step [`CROSSED_STEP`] and
/// re-evaluated at half the step; all perturbed pilots share one
/// integration pass.
pub fn eval_matrices(
    pop: &Population,
    opts: &Integration,
    theta: &ModelParams,
    lambda: &ModelParams,
    c: f64,
    crossed: bool,
) -> Result<AsymptoticsReport> {
    let p = pop.dim();
    let k = p + 1;
    theta.check_dim(p)?;
    lambda.check_dim(p)?;
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::InvalidArgument("c must be positive".into()));
    }
    let kp = packed_len(k);
    // [abar, accept, G(k), Hraw(kp), Jsecond(kp), Gfull(k), Hfull(kp), Jfull(kp)]
    let base = 2 + 2 * k + 4 * kp;
    // perturbations: for step h and h/2, for each coordinate, +/-; each
    // carries (abar', G'(k))
    let steps = [CROSSED_STEP, CROSSED_STEP / 2.0];
    let n_pert = if crossed { 2 * 2 * k } else { 0 };
    let width = base + n_pert * (k + 1);
    let est = pop.integrate(opts, width, true, |x, f, out| {
        let p1 = sigmoid(f);
        let p0 = 1.0 - p1;
        let lam_eta = lambda.linear_predictor(x);
        let q = sigmoid(lam_eta);
        let (a1, a0) = (1.0 - q, q);
        let (ca1, ca0) = (c * a1, c * a0);
        let eta = theta.linear_predictor(x) - lam_eta;
        let s = sigmoid(eta);
        out[0] = p1 * a1 + p0 * a0;
        out[1] = p1 * ca1.min(1.0) + p0 * ca0.min(1.0);
        let gw = p1 * ca1 * (1.0 - s) - p0 * ca0 * s;
        let hw = (p1 * ca1 + p0 * ca0) * s * (1.0 - s);
        let jw = p1 * ca1 * ca1.max(1.0) * (1.0 - s) * (1.0 - s) + p0 * ca0 * ca0.max(1.0) * s * s;
        let sf = sigmoid(theta.linear_predictor(x));
        let gfw = p1 - sf;
        let hfw = sf * (1.0 - sf);
        let jfw = p1 * (1.0 - sf) * (1.0 - sf) + p0 * sf * sf;
        let g_at = 2;
        let h_at = g_at + k;
        let j_at = h_at + kp;
        let gf_at = j_at + kp;
        let hf_at = gf_at + k;
        let jf_at = hf_at + kp;
        let mut idx = 0;
        for i in 0..k {
            let xi = xt(x, i);
            out[g_at + i] = gw * xi;
            out[gf_at + i] = gfw * xi;
            for j in i..k {
                let xij = xi * xt(x, j);
                out[h_at + idx] = hw * xij;
                out[j_at + idx] = jw * xij;
                out[hf_at + idx] = hfw * xij;
                out[jf_at + idx] = jfw * xij;
                idx += 1;
            }
        }
        if crossed {
            let mut at = base;
            for h in steps {
                for coord in 0..k {
                    let dx = xt(x, coord);
                    for sign in [1.0, -1.0] {
                        let le = lam_eta + sign * h * dx;
                        let q = sigmoid(le);
                        let (a1, a0) = (1.0 - q, q);
                        let s = sigmoid(eta + lam_eta - le);
                        out[at] = p1 * a1 + p0 * a0;
                        let gw = c * (p1 * a1 * (1.0 - s) - p0 * a0 * s);
                        for i in 0..k {
                            out[at + 1 + i] = gw * xt(x, i);
                        }
                        at += k + 1;
                    }
                }
            }
        }
    })?;
    let m = &est.mean;
    let abar = m[0];
    if !(abar > 0.0 && abar < 1.0) {
        return Err(Error::InvalidArgument(format!("abar = {abar} is outside (0, 1)")));
    }
    let g_at = 2;
    let h_at = g_at + k;
    let j_at = h_at + kp;
    let gf_at = j_at + kp;
    let hf_at = gf_at + k;
    let jf_at = hf_at + kp;
    let g = DVector::from_iterator(k, m[g_at..g_at + k].iter().map(|v| v / abar));
    let h = unpack_symmetric(&m[h_at..h_at + kp], k) / abar;
    let j = unpack_symmetric(&m[j_at..j_at + kp], k) / abar - &g * g.transpose();
    let gf = DVector::from_column_slice(&m[gf_at..gf_at + k]);
    let hf = unpack_symmetric(&m[hf_at..hf_at + kp], k);
    let jf = unpack_symmetric(&m[jf_at..jf_at + kp], k) - &gf * gf.transpose();

    let hinv = linalg::inverse_spd(&h, "H")?;
    let mut sigma = &hinv * &j * &hinv;
    linalg::symmetrize(&mut sigma);
    let hfinv = linalg::inverse_spd(&hf, "full-sample Hessian")?;
    let mut sigma_full = &hfinv * &jf * &hfinv;
    linalg::symmetrize(&mut sigma_full);

    let (crossed_rows, discrepancy) = if crossed {
        let mut cs = Vec::new();
        let mut at = base;
        for h in steps {
            let mut cm = DMatrix::zeros(k, k);
            for coord in 0..k {
                let plus_abar = m[at];
                let plus: Vec<f64> = m[at + 1..at + 1 + k].iter().map(|v| v / plus_abar).collect();
                at += k + 1;
                let minus_abar = m[at];
                let minus: Vec<f64> = m[at + 1..at + 1 + k].iter().map(|v| v / minus_abar).collect();
                at += k + 1;
                for i in 0..k {
                    cm[(i, coord)] = (plus[i] - minus[i]) / (2.0 * h);
                }
            }
            cs.push(cm);
        }
        let disc = (&cs[0] - &cs[1]).amax();
        (Some(linalg::to_rows(&cs[1])), Some(disc))
    } else {
        (None, None)
    };

    let se = &est.se;
    let se_mat = |at: usize| -> Vec<Vec<f64>> {
        let sem = unpack_symmetric(&se[at..at + kp], k) / abar;
        linalg::to_rows(&sem)
    };
    Ok(AsymptoticsReport {
        spec: pop.spec().clone(),
        theta: theta.clone(),
        lambda: lambda.clone(),
        c,
        exact: est.is_exact(),
        abar,
        accept_rate: m[1],
        g: g.iter().copied().collect(),
        h: linalg::to_rows(&h),
        j: linalg::to_rows(&j),
        crossed: crossed_rows,
        crossed_step_discrepancy: discrepancy,
        sigma: linalg::to_rows(&sigma),
        sigma_full: linalg::to_rows(&sigma_full),
        mc_se: MonteCarloErrors {
            abar: se[0],
            g: se[g_at..g_at + k].iter().map(|v| v / abar).collect(),
            h: se_mat(h_at),
            j: se_mat(j_at),
        },
    })
}

/// Large-sample limit of local case-control with the pilot frozen at
/// `lambda`. Equal-covariance Gaussian mixtures return their exact
/// coefficients.
pub fn eval_bar_theta(
    pop: &Population,
    opts: &Integration,
    lambda: &ModelParams,
    tol: f64,
) -> Result<OracleFit> {
    lambda.check_dim(pop.dim())?;
    if let Some(lin) = pop.linear_log_odds() {
        return Ok(OracleFit {
            params: lin.clone(),
            score_max: 0.0,
            param_se: vec![0.0; lin.dim() + 1],
            exact: true,
            iterations: 0,
        });
    }
    population_fit(
        pop,
        opts,
        |x, y| {
            let q = sigmoid(lambda.linear_predictor(x));
            if y {
                1.0 - q
            } else {
                q
            }
        },
        |x| -lambda.linear_predictor(x),
        Some(lambda),
        tol,
    )
}

/// Asymptotic covariance of `sqrt(n) (theta_hat - theta*)` for a pilot
/// with asymptotic covariance `v`, `H^{-1} (C V C' + J / abar) H^{-1}`.
pub fn lcc_variance(report: &AsymptoticsReport, v: Option<&DMatrix<f64>>) -> Result<DMatrix<f64>> {
    let k = report.theta.dim() + 1;
    let h = report.h_matrix();
    let hinv = linalg::inverse_spd(&h, "H")?;
    let mut middle = report.j_matrix() / report.abar;
    if let Some(v) = v {
        if v.nrows() != k || v.ncols() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                actual: v.nrows(),
            });
        }
        let c = report
            .crossed_matrix()
            .ok_or_else(|| Error::InvalidArgument("report was evaluated without C".into()))?;
        middle += &c * v * c.transpose();
    }
    let mut out = &hinv * middle * &hinv;
    linalg::symmetrize(&mut out);
    Ok(out)
}

/// `H^{-1} C`, the first-order sensitivity of `theta_bar` to the pilot.
pub fn conditional_bias_slope(report: &AsymptoticsReport) -> Result<DMatrix<f64>> {
    let c = report
        .crossed_matrix()
        .ok_or_else(|| Error::InvalidArgument("report was evaluated without C".into()))?;
    let hinv = linalg::inverse_spd(&report.h_matrix(), "H")?;
    Ok(hinv * c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::populations::{population_theta_star, Cell};

    fn linear_discrete() -> (Population, ModelParams) {
        let theta = ModelParams::new(-1.5, vec![1.0, -0.5]);
        let xs = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 2.0], [2.0, 1.0], [-1.0, 1.0]];
        let masses = [0.25, 0.2, 0.2, 0.1, 0.15, 0.1];
        let cells = xs
            .iter()
            .zip(masses)
            .map(|(x, mass)| Cell {
                x: x.to_vec(),
                mass,
                logodds: theta.linear_predictor(x),
            })
            .collect();
        let pop = PopulationSpec::Discrete {
            cells,
            feature_names: None,
        }
        .compile()
        .unwrap();
        (pop, theta)
    }

    #[test]
    fn zero_pilot_accepts_half() {
        let pop = PopulationSpec::oatmeal().compile().unwrap();
        let a = eval_abar(&pop, &Integration::default(), &ModelParams::zeros(2)).unwrap();
        assert_eq!(a.value, 0.5);
        assert_eq!(a.se, 0.0);
    }

    #[test]
    fn oatmeal_abar_matches_cell_sum() {
        let pop = PopulationSpec::oatmeal().compile().unwrap();
        let opts = Integration::default();
        let star = population_theta_star(&pop, &opts, 1e-13).unwrap().params;
        let mut expect = 0.0;
        for c in pop.cells().unwrap() {
            let p = 1.0 / (1.0 + (-c.logodds).exp());
            let q = 1.0 / (1.0 + (-star.linear_predictor(&c.x)).exp());
            expect += c.mass * (p * (1.0 - q) + (1.0 - p) * q);
        }
        let a = eval_abar(&pop, &opts, &star).unwrap();
        assert!((a.value - expect).abs() < 1e-15);
    }

    #[test]
    fn h_identity_for_correct_specification() {
        let (pop, theta) = linear_discrete();
        let r = eval_matrices(&pop, &Integration::default(), &theta, &theta, 1.0, false).unwrap();
        let prod = r.h_matrix() * (r.sigma_full_matrix() * (2.0 * r.abar));
        let err = (prod - DMatrix::identity(3, 3)).amax();
        assert!(err < 1e-10, "{err}");
        let lv = lcc_variance(&r, None).unwrap();
        let rel = (&lv - r.sigma_full_matrix() * 2.0).amax() / r.sigma_full_matrix().amax();
        assert!(rel < 1e-10);
    }

    #[test]
    fn matrices_are_symmetric_and_h_is_positive_definite() {
        let pop = PopulationSpec::oatmeal().compile().unwrap();
        let opts = Integration::default();
        let star = population_theta_star(&pop, &opts, 1e-13).unwrap().params;
        let r = eval_matrices(&pop, &opts, &star, &star, 1.0, true).unwrap();
        let (h, j) = (r.h_matrix(), r.j_matrix());
        assert!((&h - h.transpose()).amax() < 1e-12);
        assert!((&j - j.transpose()).amax() < 1e-12);
        assert!(h.clone().cholesky().is_some());
        assert!(linalg::max_abs(&r.g) < 1e-10);
        assert!(r.crossed_step_discrepancy.unwrap() < 1e-6);
    }

    #[test]
    fn crossed_matrix_vanishes_for_correct_specification() {
        let (pop, theta) = linear_discrete();
        let r = eval_matrices(&pop, &Integration::default(), &theta, &theta, 1.0, true).unwrap();
        let s = conditional_bias_slope(&r).unwrap();
        assert!(s.amax() < 1e-7, "{s}");
    }

    #[test]
    fn bar_theta_is_theta_star_at_zero_pilot_and_at_theta_star() {
        let pop = PopulationSpec::oatmeal().compile().unwrap();
        let opts = Integration::default();
        let star = population_theta_star(&pop, &opts, 1e-13).unwrap().params;
        let at_zero = eval_bar_theta(&pop, &opts, &ModelParams::zeros(2), 1e-13).unwrap();
        assert!(at_zero.params.max_abs_diff(&star) < 1e-9);
        let at_star = eval_bar_theta(&pop, &opts, &star, 1e-13).unwrap();
        assert!(at_star.params.max_abs_diff(&star) < 1e-9);
    }

    #[test]
    fn bar_theta_constant_for_correct_specification() {
        let (pop, theta) = linear_discrete();
        let opts = Integration::default();
        for lam in [ModelParams::zeros(2), ModelParams::new(0.5, vec![-1.0, 2.0])] {
            let bt = eval_bar_theta(&pop, &opts, &lam, 1e-13).unwrap();
            assert!(bt.params.max_abs_diff(&theta) < 1e-9);
        }
    }

    #[test]
    fn c_bound_for_correct_specification() {
        let (pop, theta) = linear_discrete();
        let opts = Integration::default();
        for c in [1.0, 2.0, 5.0] {
            let r = eval_matrices(&pop, &opts, &theta, &theta, c, false).unwrap();
            let lv = lcc_variance(&r, None).unwrap();
            let ev = linalg::relative_eigenvalues(&lv, &r.sigma_full_matrix()).unwrap();
            let top = ev.last().copied().unwrap();
            assert!(top <= 1.0 + 1.0 / c + 1e-9, "c = {c}: {top}");
            assert!(ev[0] >= 1.0 - 1e-9);
        }
    }

    #[test]
    fn pilot_variance_adds_through_crossed_matrix() {
        let pop = PopulationSpec::oatmeal().compile().unwrap();
        let opts = Integration::default();
        let star = population_theta_star(&pop, &opts, 1e-13).unwrap().params;
        let r = eval_matrices(&pop, &opts, &star, &star, 1.0, true).unwrap();
        let base = lcc_variance(&r, None).unwrap();
        let v = DMatrix::identity(3, 3);
        let with = lcc_variance(&r, Some(&v)).unwrap();
        let s = conditional_bias_slope(&r).unwrap();
        let diff = &with - &base - &s * s.transpose();
        assert!(diff.amax() < 1e-8 * with.amax());
        assert!(lcc_variance(&r, Some(&DMatrix::identity(2, 2))).is_err());
    }
}
