//! Weighted, offset-aware logistic regression.
//!
//! The linear predictor of row `i` is `alpha + beta' x_i + offset_i`; every
//! row contributes `weight_i` times the logit loss. Fitting is damped Newton
//! (equivalently IRLS) with step halving.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{ModelParams, ObservationSet};
use crate::error::{Error, Result};
use crate::linalg::{self, packed_len, packed_rank1, unpack_symmetric};
use crate::numerics::{logit_loss, sigmoid};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    /// Convergence threshold on `max_j |score_j| / sum(weights)`.
    pub grad_tol: f64,
    pub max_iter: usize,
    /// Maximum step halvings per Newton iteration.
    pub step_halvings: usize,
    /// Coefficient norm beyond which the data are declared separable.
    pub divergence_norm: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            grad_tol: 1e-10,
            max_iter: 100,
            step_halvings: 30,
            divergence_norm: 1e4,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.grad_tol > 0.0) || self.max_iter < 1 || !(self.divergence_norm > 0.0) {
            return Err(Error::InvalidArgument(
                "fit config needs grad_tol > 0, max_iter >= 1 and divergence_norm > 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub params: ModelParams,
    pub iterations: usize,
    /// Final `max_j |score_j| / sum(weights)`.
    pub grad_norm: f64,
    pub neg_log_likelihood: f64,
}

/// Loss, score and Hessian at one parameter value.
pub(crate) struct Evaluation {
    pub loss: f64,
    pub score: Vec<f64>,
    pub hessian_packed: Vec<f64>,
}

fn check(theta: &ModelParams, data: &ObservationSet) -> Result<()> {
    theta.check_dim(data.p())?;
    if !theta.is_finite() {
        return Err(Error::NonFinite("parameters"));
    }
    Ok(())
}

pub(crate) fn evaluate(theta: &ModelParams, data: &ObservationSet, with_hessian: bool) -> Evaluation {
    let k = data.p() + 1;
    let mut loss = 0.0;
    let mut score = vec![0.0; k];
    let mut hess = if with_hessian {
        vec![0.0; packed_len(k)]
    } else {
        Vec::new()
    };
    let mut xt = vec![1.0; k];
    for i in 0..data.n() {
        let x = data.row(i);
        let y = data.labels()[i];
        let w = data.weights()[i];
        let eta = theta.linear_predictor(x) + data.offsets()[i];
        loss += w * logit_loss(eta, y);
        let prob = sigmoid(eta);
        let resid = w * (if y { 1.0 } else { 0.0 } - prob);
        score[0] += resid;
        for (s, xj) in score[1..].iter_mut().zip(x) {
            *s += resid * xj;
        }
        if with_hessian {
            xt[1..].copy_from_slice(x);
            packed_rank1(&mut hess, &xt, w * prob * (1.0 - prob));
        }
    }
    Evaluation {
        loss,
        score,
        hessian_packed: hess,
    }
}

/// `sum_i w_i * rho(alpha + beta' x_i + offset_i; y_i)`.
pub fn neg_log_likelihood(theta: &ModelParams, data: &ObservationSet) -> Result<f64> {
    check(theta, data)?;
    Ok(evaluate(theta, data, false).loss)
}

/// `sum_i w_i (y_i - p_i) (1, x_i)`, the negative gradient of
/// [`neg_log_likelihood`].
pub fn score(theta: &ModelParams, data: &ObservationSet) -> Result<Vec<f64>> {
    check(theta, data)?;
    Ok(evaluate(theta, data, false).score)
}

/// `sum_i w_i p_i (1 - p_i) (1, x_i)(1, x_i)'`.
pub fn hessian(theta: &ModelParams, data: &ObservationSet) -> Result<DMatrix<f64>> {
    check(theta, data)?;
    let ev = evaluate(theta, data, true);
    Ok(unpack_symmetric(&ev.hessian_packed, data.p() + 1))
}

pub fn fit_logistic(data: &ObservationSet, config: &FitConfig) -> Result<ModelParams> {
    fit_logistic_report(data, config, None).map(|r| r.params)
}

/// Damped Newton fit. `start` defaults to the intercept-only logit of the
/// weighted label mean.
pub fn fit_logistic_report(
    data: &ObservationSet,
    config: &FitConfig,
    start: Option<&ModelParams>,
) -> Result<FitReport> {
    config.validate()?;
    let p = data.p();
    let k = p + 1;
    let total_w = data.total_weight();
    if !(total_w > 0.0) {
        return Err(Error::InvalidArgument("total weight must be positive".into()));
    }
    let mut theta = match start {
        Some(s) => {
            check(s, data)?;
            s.clone()
        }
        None => {
            let w1: f64 = data
                .labels()
                .iter()
                .zip(data.weights())
                .filter(|(y, _)| **y)
                .map(|(_, w)| w)
                .sum();
            let ybar = w1 / total_w;
            if ybar <= 0.0 || ybar >= 1.0 {
                // a single class: the intercept runs off to infinity
                return Err(Error::Separation { norm: f64::INFINITY });
            }
            let mean_offset = data
                .offsets()
                .iter()
                .zip(data.weights())
                .map(|(o, w)| o * w)
                .sum::<f64>()
                / total_w;
            let mut t = ModelParams::zeros(p);
            t.intercept = (ybar / (1.0 - ybar)).ln() - mean_offset;
            t
        }
    };

    let mut ev = evaluate(&theta, data, true);
    let mut norms: Vec<f64> = vec![theta.norm()];
    for iter in 0..config.max_iter {
        let grad_norm = linalg::max_abs(&ev.score) / total_w;
        if grad_norm < config.grad_tol {
            return finish(data, theta, ev, iter, grad_norm);
        }
        let h = unpack_symmetric(&ev.hessian_packed, k);
        let g = DVector::from_vec(ev.score.clone());
        let dir = linalg::solve_spd_with_ridge(&h, &g)?;
        let theta_scale = 1.0 + linalg::max_abs(&theta.to_vec());
        if dir.amax() <= 1e-14 * theta_scale {
            // Newton step below rounding: nothing more to gain
            if grad_norm < config.grad_tol.sqrt() {
                return finish(data, theta, ev, iter, grad_norm);
            }
            return Err(Error::NotConverged {
                iterations: iter,
                grad_norm,
            });
        }

        let base = theta.to_vec();
        // Once the predicted decrease g'd is below the rounding noise of the
        // summed loss, loss comparisons are meaningless; take the full step
        // if it lowers the gradient instead.
        let decrement: f64 = dir.iter().zip(&ev.score).map(|(d, g)| d * g).sum();
        if decrement <= 1e-10 * ev.loss.abs() {
            let cand: Vec<f64> = base.iter().zip(dir.iter()).map(|(t, d)| t + d).collect();
            let cand = ModelParams::from_slice(&cand);
            let cev = evaluate(&cand, data, true);
            let cand_norm = linalg::max_abs(&cev.score) / total_w;
            if cand_norm < grad_norm {
                theta = cand;
                ev = cev;
                norms.push(theta.norm());
                continue;
            }
            if grad_norm < config.grad_tol.sqrt() {
                return finish(data, theta, ev, iter, grad_norm);
            }
            return Err(Error::NotConverged {
                iterations: iter,
                grad_norm,
            });
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..=config.step_halvings {
            let cand: Vec<f64> = base
                .iter()
                .zip(dir.iter())
                .map(|(t, d)| t + step * d)
                .collect();
            let cand = ModelParams::from_slice(&cand);
            let norm = cand.norm();
            if !(norm <= config.divergence_norm) {
                return Err(Error::Separation { norm });
            }
            let cev = evaluate(&cand, data, true);
            if cev.loss <= ev.loss + 1e-14 * ev.loss.abs() {
                accepted = Some((cand, cev));
                break;
            }
            step *= 0.5;
        }
        match accepted {
            Some((t, e)) => {
                theta = t;
                ev = e;
            }
            None => {
                if grad_norm < config.grad_tol.sqrt() {
                    return finish(data, theta, ev, iter, grad_norm);
                }
                return Err(Error::NotConverged {
                    iterations: iter,
                    grad_norm,
                });
            }
        }
        norms.push(theta.norm());
    }
    let grad_norm = linalg::max_abs(&ev.score) / total_w;
    if grad_norm < config.grad_tol {
        return finish(data, theta, ev, config.max_iter, grad_norm);
    }
    let growing = norms.len() >= 3 && {
        let m = norms.len();
        norms[m - 1] > norms[m - 2] && norms[m - 2] > norms[m - 3]
    };
    if growing {
        Err(Error::Separation {
            norm: theta.norm(),
        })
    } else {
        Err(Error::NotConverged {
            iterations: config.max_iter,
            grad_norm,
        })
    }
}

/// A gradient-converged point of a separable problem is not a minimiser:
/// moving further along the coefficient vector keeps lowering the loss.
fn finish(
    data: &ObservationSet,
    theta: ModelParams,
    ev: Evaluation,
    iterations: usize,
    grad_norm: f64,
) -> Result<FitReport> {
    if theta.norm() >= 1.0 {
        let doubled = theta.scale(2.0);
        let loss2 = evaluate(&doubled, data, false).loss;
        if loss2 < ev.loss {
            return Err(Error::Separation {
                norm: theta.norm(),
            });
        }
    }
    Ok(FitReport {
        params: theta,
        iterations,
        grad_norm,
        neg_log_likelihood: ev.loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn random_data(n: usize, p: usize, seed: u64) -> ObservationSet {
        let mut r = rng::stream(seed);
        let feats: Vec<f64> = (0..n * p).map(|_| r.sample(StandardNormal)).collect();
        let labels: Vec<bool> = (0..n).map(|_| r.random::<f64>() < 0.4).collect();
        let weights: Vec<f64> = (0..n).map(|_| 0.5 + r.random::<f64>()).collect();
        let offsets: Vec<f64> = (0..n).map(|_| r.random::<f64>() - 0.5).collect();
        ObservationSet::new(feats, p, labels)
            .unwrap()
            .with_weights(weights)
            .unwrap()
            .with_offsets(offsets)
            .unwrap()
    }

    fn random_theta(p: usize, r: &mut rng::Stream) -> ModelParams {
        ModelParams::new(
            r.random::<f64>() * 2.0 - 1.0,
            (0..p).map(|_| r.random::<f64>() * 2.0 - 1.0).collect(),
        )
    }

    #[test]
    fn loss_at_zero_is_log_two() {
        let d = ObservationSet::new(vec![], 0, vec![true]).unwrap();
        let l = neg_log_likelihood(&ModelParams::zeros(0), &d).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn loss_with_large_offset_does_not_overflow() {
        let d = ObservationSet::new(vec![], 0, vec![true])
            .unwrap()
            .with_offsets(vec![40.0])
            .unwrap();
        let l = neg_log_likelihood(&ModelParams::zeros(0), &d).unwrap();
        assert!(l > 0.0 && (l - 4.25e-18).abs() < 1e-20, "{l}");
    }

    #[test]
    fn loss_matches_direct_summation() {
        let d = random_data(20, 3, 11);
        let mut r = rng::stream(12);
        let theta = random_theta(3, &mut r);
        let mut direct = 0.0;
        for i in 0..d.n() {
            let mut eta = theta.intercept + d.offsets()[i];
            for j in 0..3 {
                eta += theta.slopes[j] * d.row(i)[j];
            }
            let y = if d.labels()[i] { 1.0 } else { 0.0 };
            direct += d.weights()[i] * (-y * eta + (1.0 + eta.exp()).ln());
        }
        let l = neg_log_likelihood(&theta, &d).unwrap();
        assert!((l - direct).abs() <= 1e-12 * direct.abs());
    }

    #[test]
    fn score_at_zero_intercept_component() {
        let d = random_data(30, 2, 5).with_offsets(vec![0.0; 30]).unwrap();
        let s = score(&ModelParams::zeros(2), &d).unwrap();
        let expect: f64 = d
            .labels()
            .iter()
            .zip(d.weights())
            .map(|(y, w)| w * (if *y { 1.0 } else { 0.0 } - 0.5))
            .sum();
        assert!((s[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn score_matches_finite_differences() {
        let d = random_data(50, 3, 21);
        let mut r = rng::stream(22);
        let h = 1e-5;
        for _ in 0..10 {
            let theta = random_theta(3, &mut r);
            let s = score(&theta, &d).unwrap();
            let base = theta.to_vec();
            for j in 0..4 {
                let mut up = base.clone();
                let mut dn = base.clone();
                up[j] += h;
                dn[j] -= h;
                let fd = -(neg_log_likelihood(&ModelParams::from_slice(&up), &d).unwrap()
                    - neg_log_likelihood(&ModelParams::from_slice(&dn), &d).unwrap())
                    / (2.0 * h);
                let rel = (fd - s[j]).abs() / s[j].abs().max(1e-3);
                assert!(rel < 1e-6, "component {j}: fd {fd} vs {}", s[j]);
            }
        }
    }

    #[test]
    fn hessian_matches_finite_differences() {
        let d = random_data(50, 2, 31);
        let mut r = rng::stream(32);
        let h = 1e-5;
        let theta = random_theta(2, &mut r);
        let hm = hessian(&theta, &d).unwrap();
        let base = theta.to_vec();
        for j in 0..3 {
            let mut up = base.clone();
            let mut dn = base.clone();
            up[j] += h;
            dn[j] -= h;
            let su = score(&ModelParams::from_slice(&up), &d).unwrap();
            let sd = score(&ModelParams::from_slice(&dn), &d).unwrap();
            for i in 0..3 {
                let fd = -(su[i] - sd[i]) / (2.0 * h);
                let rel = (fd - hm[(i, j)]).abs() / hm[(i, j)].abs().max(1e-3);
                assert!(rel < 1e-5);
            }
        }
        assert_eq!(hm, hm.transpose());
    }

    #[test]
    fn intercept_only_fit_is_logit_of_mean() {
        let d = ObservationSet::new(vec![], 0, vec![true, true, true, false]).unwrap();
        let fit = fit_logistic(&d, &FitConfig::default()).unwrap();
        assert!((fit.intercept - 3f64.ln()).abs() < 1e-10);
    }

    #[test]
    fn separated_points_are_reported() {
        let d = ObservationSet::new(vec![-1.0, 1.0], 1, vec![false, true]).unwrap();
        assert!(matches!(
            fit_logistic(&d, &FitConfig::default()),
            Err(Error::Separation { .. })
        ));
        let one_class = ObservationSet::new(vec![0.0, 1.0], 1, vec![true, true]).unwrap();
        assert!(matches!(
            fit_logistic(&one_class, &FitConfig::default()),
            Err(Error::Separation { .. })
        ));
    }

    #[test]
    fn duplicate_features_use_ridge_retry() {
        let mut r = rng::stream(3);
        let n = 60;
        let mut feats = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..n {
            let v: f64 = r.sample(StandardNormal);
            feats.push(v);
            feats.push(v);
            labels.push(r.random::<f64>() < crate::numerics::sigmoid(v));
        }
        let d = ObservationSet::new(feats, 2, labels).unwrap();
        match fit_logistic_report(&d, &FitConfig::default(), None) {
            Ok(rep) => assert!((rep.params.slopes[0] - rep.params.slopes[1]).abs() < 1e-6),
            Err(e) => assert!(matches!(e, Error::Singular | Error::NotConverged { .. })),
        }
    }

    #[test]
    fn converged_fit_meets_tolerance() {
        let d = random_data(200, 3, 41);
        let cfg = FitConfig::default();
        let rep = fit_logistic_report(&d, &cfg, None).unwrap();
        assert!(rep.grad_norm < cfg.grad_tol);
        let s = score(&rep.params, &d).unwrap();
        assert!(linalg::max_abs(&s) / d.total_weight() < cfg.grad_tol);
    }
}
