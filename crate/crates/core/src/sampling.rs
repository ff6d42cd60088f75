//! Accept-reject subsampling schemes and their coefficient adjustments.
//!
//! Every scheme accepts row `i` iff `u_i <= prob(x_i, y_i)` for a supplied
//! uniform `u_i`, so several schemes driven by the same uniforms make
//! coupled decisions.
//!
//! A [`WeightedSubsample`] carries two equivalent descriptions of the
//! correction:
//!
//! * `offsets`: the log-selection bias `b(x) = log a(x,1)/a(x,0)` of each
//!   row. A fit that includes these offsets estimates the original
//!   population's coefficients directly.
//! * `adjustment`: the vector to add to a fit that ignores the offsets.
//!
//! [`estimate`] uses the offsets.

use rand::distr::{Distribution, Open01};
use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::data::{ModelParams, ObservationSet};
use crate::error::{Error, Result};
use crate::glm::{fit_logistic_report, FitConfig, FitReport};
use crate::numerics::sigmoid;
use crate::rng::Stream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SamplingScheme {
    /// Keep each row with probability `rate`.
    Uniform { rate: f64 },
    /// Case-control: keep with probability `a_y`, then shift the intercept
    /// by `-log(a1/a0)`.
    Cc { a0: f64, a1: f64 },
    /// Weighted case-control: keep with probability `a_y`, weight `1/a_y`.
    Wcc { a0: f64, a1: f64 },
    /// Local case-control with pilot `pilot`: keep with probability
    /// `c |y - p_pilot(x)| ∧ 1`, weight `c |y - p_pilot(x)| ∨ 1`.
    Lcc {
        pilot: ModelParams,
        c: f64,
        #[serde(default)]
        retain_cases: bool,
    },
}

fn in_unit(v: f64) -> bool {
    v > 0.0 && v <= 1.0
}

impl SamplingScheme {
    pub fn lcc(pilot: ModelParams, c: f64) -> Self {
        SamplingScheme::Lcc {
            pilot,
            c,
            retain_cases: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            SamplingScheme::Uniform { rate } => in_unit(*rate),
            SamplingScheme::Cc { a0, a1 } | SamplingScheme::Wcc { a0, a1 } => {
                in_unit(*a0) && in_unit(*a1)
            }
            SamplingScheme::Lcc { pilot, c, .. } => *c > 0.0 && c.is_finite() && pilot.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("ill-formed sampling scheme {self:?}")))
        }
    }

    /// Selection bias `b = log(a1/a0)` of the case-control schemes.
    pub fn log_selection_bias(&self) -> Option<f64> {
        match self {
            SamplingScheme::Cc { a0, a1 } | SamplingScheme::Wcc { a0, a1 } => Some((a1 / a0).ln()),
            _ => None,
        }
    }

    /// Offset attached to an accepted row at `x`.
    #[inline]
    pub fn offset(&self, x: &[f64]) -> f64 {
        match self {
            SamplingScheme::Cc { a0, a1 } => (a1 / a0).ln(),
            SamplingScheme::Lcc { pilot, .. } => -pilot.linear_predictor(x),
            _ => 0.0,
        }
    }

    /// Vector to add to a fit that ignores the offsets.
    pub fn adjustment(&self, p: usize) -> ModelParams {
        match self {
            SamplingScheme::Cc { a0, a1 } => {
                let mut m = ModelParams::zeros(p);
                m.intercept = -(a1 / a0).ln();
                m
            }
            SamplingScheme::Lcc { pilot, .. } => pilot.clone(),
            _ => ModelParams::zeros(p),
        }
    }
}

/// Acceptance probability and the weight an accepted row receives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Acceptance {
    pub prob: f64,
    pub weight: f64,
}

#[inline]
pub fn acceptance_probability(scheme: &SamplingScheme, x: &[f64], y: bool) -> Acceptance {
    match scheme {
        SamplingScheme::Uniform { rate } => Acceptance {
            prob: *rate,
            weight: 1.0,
        },
        SamplingScheme::Cc { a0, a1 } => Acceptance {
            prob: if y { *a1 } else { *a0 },
            weight: 1.0,
        },
        SamplingScheme::Wcc { a0, a1 } => {
            let a = if y { *a1 } else { *a0 };
            Acceptance {
                prob: a,
                weight: 1.0 / a,
            }
        }
        SamplingScheme::Lcc {
            pilot,
            c,
            retain_cases,
        } => {
            let eta = pilot.linear_predictor(x);
            // |y - p(x)| computed without cancellation
            let a = if y { sigmoid(-eta) } else { sigmoid(eta) };
            let ca = c * a;
            if y && *retain_cases {
                Acceptance {
                    prob: 1.0,
                    weight: ca,
                }
            } else {
                Acceptance {
                    prob: ca.min(1.0),
                    weight: ca.max(1.0),
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedSubsample {
    /// Indices of accepted rows, ascending.
    pub rows: Vec<usize>,
    /// Scheme weight times the row's own weight.
    pub weights: Vec<f64>,
    /// Scheme offset plus the row's own offset.
    pub offsets: Vec<f64>,
    /// `sum_i prob(x_i, y_i)` over the candidate rows.
    pub expected_size: f64,
    pub realized_size: usize,
    pub scheme: SamplingScheme,
    pub adjustment: ModelParams,
}

impl WeightedSubsample {
    /// The accepted rows as an observation set carrying the subsample's
    /// weights and offsets.
    pub fn observations(&self, data: &ObservationSet) -> Result<ObservationSet> {
        if self.rows.is_empty() {
            return Err(Error::EmptySubsample);
        }
        data.subset(&self.rows)?
            .with_weights(self.weights.clone())?
            .with_offsets(self.offsets.clone())
    }
}

/// Draws `n` uniforms on the open interval (0, 1).
pub fn draw_uniforms(n: usize, rng: &mut Stream) -> Vec<f64> {
    Open01.sample_iter(rng).take(n).collect()
}

/// Deterministic accept-reject pass: row `i` is kept iff
/// `uniforms[i] <= prob(x_i, y_i)`.
pub fn draw_subsample(
    data: &ObservationSet,
    scheme: &SamplingScheme,
    uniforms: &[f64],
) -> Result<WeightedSubsample> {
    scheme.validate()?;
    if uniforms.len() != data.n() {
        return Err(Error::DimensionMismatch {
            expected: data.n(),
            actual: uniforms.len(),
        });
    }
    if let SamplingScheme::Lcc { pilot, .. } = scheme {
        pilot.check_dim(data.p())?;
    }
    let mut rows = Vec::new();
    let mut weights = Vec::new();
    let mut offsets = Vec::new();
    let mut expected = 0.0;
    for (i, &u) in uniforms.iter().enumerate() {
        let x = data.row(i);
        let acc = acceptance_probability(scheme, x, data.labels()[i]);
        expected += acc.prob;
        if u <= acc.prob {
            rows.push(i);
            weights.push(acc.weight * data.weights()[i]);
            offsets.push(scheme.offset(x) + data.offsets()[i]);
        }
    }
    Ok(WeightedSubsample {
        realized_size: rows.len(),
        rows,
        weights,
        offsets,
        expected_size: expected,
        scheme: scheme.clone(),
        adjustment: scheme.adjustment(data.p()),
    })
}

/// Fits the subsample with its weights and offsets.
pub fn fit_subsample(
    data: &ObservationSet,
    sub: &WeightedSubsample,
    config: &FitConfig,
) -> Result<FitReport> {
    let obs = sub.observations(data)?;
    fit_logistic_report(&obs, config, None)
}

/// Draws a subsample with uniforms from `rng` and returns the corrected
/// coefficient estimate.
pub fn estimate(
    data: &ObservationSet,
    scheme: &SamplingScheme,
    rng: &mut Stream,
    config: &FitConfig,
) -> Result<ModelParams> {
    let uniforms = draw_uniforms(data.n(), rng);
    let sub = draw_subsample(data, scheme, &uniforms)?;
    Ok(fit_subsample(data, &sub, config)?.params)
}

/// Class acceptance rates giving equal expected class counts of
/// `target / 2` each, capped by the rarer class.
pub fn balanced_rates(n_cases: usize, n_controls: usize, target: f64) -> Result<(f64, f64)> {
    if n_cases == 0 {
        return Err(Error::TooFewCases { label: 1 });
    }
    if n_controls == 0 {
        return Err(Error::TooFewCases { label: 0 });
    }
    let half = (target / 2.0).min(n_cases as f64).min(n_controls as f64);
    Ok((half / n_controls as f64, half / n_cases as f64))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PilotFit {
    pub params: ModelParams,
    /// `(a0, a1)` of the weighted case-control pass.
    pub scheme: SamplingScheme,
    /// Rows used by the pilot fit, ascending.
    pub rows: Vec<usize>,
}

/// Weighted case-control pilot with equal expected class counts and
/// expected total `target_size` (capped by the available counts).
pub fn fit_pilot_wcc(
    data: &ObservationSet,
    target_size: usize,
    rng: &mut Stream,
    config: &FitConfig,
) -> Result<PilotFit> {
    if target_size < data.p() + 2 {
        return Err(Error::InvalidArgument(format!(
            "pilot target {target_size} is below p + 2 = {}",
            data.p() + 2
        )));
    }
    let n1 = data.n_cases();
    let (a0, a1) = balanced_rates(n1, data.n() - n1, target_size as f64)?;
    let scheme = SamplingScheme::Wcc { a0, a1 };
    let uniforms = draw_uniforms(data.n(), rng);
    let sub = draw_subsample(data, &scheme, &uniforms)?;
    let fit = fit_subsample(data, &sub, config)?;
    Ok(PilotFit {
        params: fit.params,
        scheme,
        rows: sub.rows,
    })
}

/// Uniform without-replacement thinning of an existing subsample to `n_s`
/// rows.
pub fn thin_uniform(sub: &WeightedSubsample, n_s: usize, rng: &mut Stream) -> Result<WeightedSubsample> {
    if n_s > sub.realized_size {
        return Err(Error::InvalidArgument(format!(
            "cannot thin {} rows to {n_s}",
            sub.realized_size
        )));
    }
    let mut picked = index::sample(rng, sub.realized_size, n_s).into_vec();
    picked.sort_unstable();
    let frac = if sub.realized_size == 0 {
        0.0
    } else {
        n_s as f64 / sub.realized_size as f64
    };
    Ok(WeightedSubsample {
        rows: picked.iter().map(|&k| sub.rows[k]).collect(),
        weights: picked.iter().map(|&k| sub.weights[k]).collect(),
        offsets: picked.iter().map(|&k| sub.offsets[k]).collect(),
        expected_size: sub.expected_size * frac,
        realized_size: n_s,
        scheme: sub.scheme.clone(),
        adjustment: sub.adjustment.clone(),
    })
}

/// `sum_i |y_i - p_pilot(x_i)|`, the expected local case-control size at
/// `c = 1`.
pub fn lcc_expected_size(data: &ObservationSet, pilot: &ModelParams) -> f64 {
    let scheme = SamplingScheme::lcc(pilot.clone(), 1.0);
    (0..data.n())
        .map(|i| acceptance_probability(&scheme, data.row(i), data.labels()[i]).prob)
        .sum()
}

/// `c` such that `c * expected_size(c = 1) = target`.
pub fn calibrate_c(data: &ObservationSet, pilot: &ModelParams, target: f64) -> f64 {
    target / lcc_expected_size(data, pilot)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::logit;
    use crate::rng;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn lcc_const(p_tilde: f64, c: f64) -> SamplingScheme {
        SamplingScheme::lcc(ModelParams::new(logit(p_tilde), vec![]), c)
    }

    #[test]
    fn lcc_acceptance_examples() {
        let s = lcc_const(0.5, 1.0);
        for y in [false, true] {
            let a = acceptance_probability(&s, &[], y);
            assert!((a.prob - 0.5).abs() < 1e-15 && a.weight == 1.0);
        }
        let s = lcc_const(0.01, 1.0);
        let a0 = acceptance_probability(&s, &[], false);
        let a1 = acceptance_probability(&s, &[], true);
        assert!((a0.prob - 0.01).abs() < 1e-15 && a0.weight == 1.0);
        assert!((a1.prob - 0.99).abs() < 1e-15 && a1.weight == 1.0);
        let s = lcc_const(0.3, 5.0);
        let a = acceptance_probability(&s, &[], false);
        assert_eq!(a.prob, 1.0);
        assert!((a.weight - 1.5).abs() < 1e-12);
    }

    #[test]
    fn retained_cases_get_weight_a() {
        let s = SamplingScheme::Lcc {
            pilot: ModelParams::new(logit(0.2), vec![]),
            c: 1.0,
            retain_cases: true,
        };
        let a = acceptance_probability(&s, &[], true);
        assert_eq!(a.prob, 1.0);
        assert!((a.weight - 0.8).abs() < 1e-12);
        let a = acceptance_probability(&s, &[], false);
        assert!((a.prob - 0.2).abs() < 1e-12 && a.weight == 1.0);
    }

    #[test]
    fn case_control_rates() {
        let cc = SamplingScheme::Cc { a0: 0.1, a1: 1.0 };
        assert_eq!(acceptance_probability(&cc, &[], false).prob, 0.1);
        assert_eq!(acceptance_probability(&cc, &[], true).weight, 1.0);
        let wcc = SamplingScheme::Wcc { a0: 0.1, a1: 1.0 };
        assert!((acceptance_probability(&wcc, &[], false).weight - 10.0).abs() < 1e-12);
        assert!((cc.log_selection_bias().unwrap() - 10f64.ln()).abs() < 1e-15);
        assert!(SamplingScheme::Cc { a0: 0.0, a1: 1.0 }.validate().is_err());
        assert!(SamplingScheme::Uniform { rate: 1.5 }.validate().is_err());
        assert!(lcc_const(0.5, 0.0).validate().is_err());
    }

    fn gaussian_data(n: usize, seed: u64) -> ObservationSet {
        let mut r = rng::stream(seed);
        let theta = ModelParams::new(-3.0, vec![1.0, -0.5]);
        let mut feats = Vec::with_capacity(2 * n);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let x = [r.sample(StandardNormal), r.sample(StandardNormal)];
            labels.push(r.random::<f64>() < sigmoid(theta.linear_predictor(&x)));
            feats.extend_from_slice(&x);
        }
        ObservationSet::new(feats, 2, labels).unwrap()
    }

    #[test]
    fn uniform_rate_one_is_identity() {
        let d = gaussian_data(100, 1);
        let u = draw_uniforms(100, &mut rng::stream(2));
        let sub = draw_subsample(&d, &SamplingScheme::Uniform { rate: 1.0 }, &u).unwrap();
        assert_eq!(sub.rows, (0..100).collect::<Vec<_>>());
        assert!(sub.weights.iter().all(|&w| w == 1.0));
        assert!(sub.offsets.iter().all(|&o| o == 0.0));
        assert_eq!(sub.adjustment, ModelParams::zeros(2));
        assert_eq!(sub.expected_size, 100.0);
    }

    #[test]
    fn equal_rates_case_control_is_uniform() {
        let d = gaussian_data(2000, 3);
        let u = draw_uniforms(d.n(), &mut rng::stream(4));
        let cc = draw_subsample(&d, &SamplingScheme::Cc { a0: 0.4, a1: 0.4 }, &u).unwrap();
        let un = draw_subsample(&d, &SamplingScheme::Uniform { rate: 0.4 }, &u).unwrap();
        assert!(cc.offsets.iter().all(|&o| o == 0.0));
        assert_eq!(cc.rows, un.rows);
        let cfg = FitConfig::default();
        let a = fit_subsample(&d, &cc, &cfg).unwrap().params;
        let b = fit_subsample(&d, &un, &cfg).unwrap().params;
        assert!(a.max_abs_diff(&b) < 1e-12);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let d = gaussian_data(10, 5);
        assert!(matches!(
            draw_subsample(&d, &SamplingScheme::Uniform { rate: 0.5 }, &[0.5; 3]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn offsets_and_adjustment_agree() {
        let d = gaussian_data(4000, 6);
        let cfg = FitConfig::default();
        let u = draw_uniforms(d.n(), &mut rng::stream(7));
        let schemes = [
            SamplingScheme::Cc { a0: 0.1, a1: 1.0 },
            SamplingScheme::lcc(ModelParams::new(-2.5, vec![0.8, -0.3]), 1.0),
        ];
        for scheme in schemes {
            let sub = draw_subsample(&d, &scheme, &u).unwrap();
            let with_offsets = fit_subsample(&d, &sub, &cfg).unwrap().params;
            let obs = d.subset(&sub.rows).unwrap();
            let plain = fit_logistic_report(&obs, &cfg, None).unwrap().params;
            let adjusted = plain.add(&sub.adjustment);
            assert!(
                with_offsets.max_abs_diff(&adjusted) < 1e-8,
                "{scheme:?}: {with_offsets:?} vs {adjusted:?}"
            );
        }
    }

    #[test]
    fn coupled_lcc_decisions_rarely_differ() {
        let d = gaussian_data(20_000, 8);
        let u = draw_uniforms(d.n(), &mut rng::stream(9));
        let l1 = ModelParams::new(-3.0, vec![1.0, -0.5]);
        let l2 = ModelParams::new(-2.9, vec![1.05, -0.5]);
        let s1 = SamplingScheme::lcc(l1.clone(), 1.0);
        let s2 = SamplingScheme::lcc(l2.clone(), 1.0);
        let a = draw_subsample(&d, &s1, &u).unwrap();
        let b = draw_subsample(&d, &s2, &u).unwrap();
        let set_a: std::collections::HashSet<_> = a.rows.iter().collect();
        let set_b: std::collections::HashSet<_> = b.rows.iter().collect();
        let differ = set_a.symmetric_difference(&set_b).count() as f64 / d.n() as f64;
        let mean_gap: f64 = (0..d.n())
            .map(|i| {
                let p1 = acceptance_probability(&s1, d.row(i), d.labels()[i]).prob;
                let p2 = acceptance_probability(&s2, d.row(i), d.labels()[i]).prob;
                (p1 - p2).abs()
            })
            .sum::<f64>()
            / d.n() as f64;
        let se = (mean_gap * (1.0 - mean_gap) / d.n() as f64).sqrt();
        assert!(differ <= mean_gap + 3.0 * se, "{differ} vs {mean_gap}");
        assert!(differ > 0.0);
    }

    #[test]
    fn lcc_weights_follow_c() {
        let d = gaussian_data(5000, 10);
        let u = draw_uniforms(d.n(), &mut rng::stream(11));
        let pilot = ModelParams::new(-3.0, vec![1.0, -0.5]);
        let big = draw_subsample(&d, &SamplingScheme::lcc(pilot.clone(), 4.0), &u).unwrap();
        assert!(big.weights.iter().all(|&w| w >= 1.0));
        assert!(big.weights.iter().any(|&w| w > 1.0));
        let small = draw_subsample(&d, &SamplingScheme::lcc(pilot.clone(), 0.5), &u).unwrap();
        assert!(small.weights.iter().all(|&w| w == 1.0));
        for (k, &i) in big.rows.iter().enumerate() {
            assert!((big.offsets[k] + pilot.linear_predictor(d.row(i))).abs() < 1e-12);
        }
        assert_eq!(big.realized_size, big.rows.len());
    }

    #[test]
    fn pilot_rates_balance_classes() {
        let (a0, a1) = balanced_rates(500, 500, 200.0).unwrap();
        assert!((a0 - 0.2).abs() < 1e-15 && (a1 - 0.2).abs() < 1e-15);
        let (a0, a1) = balanced_rates(500, 49_500, 1000.0).unwrap();
        assert_eq!(a1, 1.0);
        assert!((a0 * 49_500.0 - 500.0).abs() < 1e-9);
        assert_eq!(balanced_rates(0, 10, 4.0), Err(Error::TooFewCases { label: 1 }));
    }

    #[test]
    fn pilot_rejects_tiny_target() {
        let d = gaussian_data(100, 12);
        assert!(fit_pilot_wcc(&d, 3, &mut rng::stream(1), &FitConfig::default()).is_err());
    }

    #[test]
    fn thinning_edges() {
        let d = gaussian_data(500, 13);
        let u = draw_uniforms(d.n(), &mut rng::stream(14));
        let sub = draw_subsample(&d, &SamplingScheme::Uniform { rate: 0.5 }, &u).unwrap();
        let same = thin_uniform(&sub, sub.realized_size, &mut rng::stream(15)).unwrap();
        assert_eq!(same.rows, sub.rows);
        assert_eq!(same.weights, sub.weights);
        let empty = thin_uniform(&sub, 0, &mut rng::stream(15)).unwrap();
        assert_eq!(
            fit_subsample(&d, &empty, &FitConfig::default()).unwrap_err(),
            Error::EmptySubsample
        );
        assert!(thin_uniform(&sub, sub.realized_size + 1, &mut rng::stream(15)).is_err());
    }

    #[test]
    fn calibration_hits_target() {
        let d = gaussian_data(5000, 16);
        let pilot = ModelParams::new(-3.0, vec![1.0, -0.5]);
        let c = calibrate_c(&d, &pilot, 100.0);
        let u = draw_uniforms(d.n(), &mut rng::stream(17));
        let sub = draw_subsample(&d, &SamplingScheme::lcc(pilot, c), &u).unwrap();
        assert!((sub.expected_size - 100.0).abs() < 1e-6);
    }
}
