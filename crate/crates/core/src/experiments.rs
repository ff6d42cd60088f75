//! Seeded replication studies comparing subsampling estimators.
//!
//! Every replication draws from streams derived from
//! `(master_seed, replication, stage)` and results are reduced in
//! replication order, so a report depends only on its configuration.

use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ModelParams, ObservationSet};
use crate::error::{Error, Result};
use crate::glm::{fit_logistic_report, FitConfig};
use crate::populations::{population_theta_star, theta_cc_limit, equal_class_bias, Integration, Population, PopulationSpec};
use crate::rng::{self, derive_seed, replication_stream, Stage};
use crate::sampling::{
    balanced_rates, draw_subsample, draw_uniforms, fit_pilot_wcc, fit_subsample, lcc_expected_size,
    SamplingScheme,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Lcc,
    Wcc,
    Cc,
    Uniform,
    Full,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Lcc, Method::Wcc, Method::Cc, Method::Uniform, Method::Full];

    pub fn name(self) -> &'static str {
        match self {
            Method::Lcc => "lcc",
            Method::Wcc => "wcc",
            Method::Cc => "cc",
            Method::Uniform => "uniform",
            Method::Full => "full",
        }
    }
}

/// Where the local case-control pilot comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PilotSource {
    /// Weighted case-control fit on the replication's own data.
    #[default]
    Wcc,
    /// Weighted case-control fit on fresh class-balanced draws that share
    /// nothing with the replication's data.
    Independent,
    /// The population limit used as truth.
    Truth,
    Fixed { params: ModelParams },
}

fn default_c() -> f64 {
    1.0
}

fn default_bootstrap() -> usize {
    1000
}

fn default_true() -> bool {
    true
}

fn default_max_proposals() -> u64 {
    1_000_000_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub spec: PopulationSpec,
    /// Rows per replication; ignored when `implicit_full` is set.
    #[serde(default)]
    pub n_full: usize,
    /// Expected pilot size.
    pub n_pilot: usize,
    /// Expected local case-control size. When set, `c` is calibrated per
    /// replication to hit it; otherwise `c` is used as given.
    #[serde(default)]
    pub n_lcc: Option<usize>,
    #[serde(default = "default_c")]
    pub c: f64,
    #[serde(default)]
    pub retain_cases: bool,
    pub methods: Vec<Method>,
    pub replications: usize,
    #[serde(default = "default_bootstrap")]
    pub bootstrap_b: usize,
    pub master_seed: u64,
    /// Whether rows used by a same-data pilot stay eligible for the local
    /// case-control draw.
    #[serde(default = "default_true")]
    pub recycle_pilot: bool,
    #[serde(default)]
    pub pilot: PilotSource,
    /// Draw the local case-control sample directly from the tilted
    /// population instead of thinning a materialised data set.
    #[serde(default)]
    pub implicit_full: bool,
    /// Overrides the population-limit truth.
    #[serde(default)]
    pub truth: Option<ModelParams>,
    #[serde(default)]
    pub integration: Integration,
    #[serde(default)]
    pub fit: FitConfig,
    #[serde(default = "default_max_proposals")]
    pub max_proposals: u64,
}

impl ExperimentConfig {
    /// A configuration with the library defaults for everything but the
    /// population, budgets, methods and replication count.
    pub fn new(spec: PopulationSpec, n_full: usize, n_pilot: usize, methods: Vec<Method>, replications: usize) -> Self {
        Self {
            spec,
            n_full,
            n_pilot,
            n_lcc: None,
            c: 1.0,
            retain_cases: false,
            methods,
            replications,
            bootstrap_b: default_bootstrap(),
            master_seed: 1,
            recycle_pilot: true,
            pilot: PilotSource::Wcc,
            implicit_full: false,
            truth: None,
            integration: Integration::default(),
            fit: FitConfig::default(),
            max_proposals: default_max_proposals(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.replications < 2 {
            return bad("replications must be at least 2");
        }
        if self.methods.is_empty() {
            return bad("methods must not be empty");
        }
        let mut sorted = self.methods.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != self.methods.len() {
            return bad("methods contains duplicates");
        }
        if !(self.c > 0.0) || !self.c.is_finite() {
            return bad("c must be positive");
        }
        if self.bootstrap_b < 100 {
            return bad("bootstrap_b must be at least 100");
        }
        if matches!(self.pilot, PilotSource::Wcc | PilotSource::Independent) && self.n_pilot == 0 {
            return bad("n_pilot must be positive");
        }
        if self.n_lcc == Some(0) {
            return bad("n_lcc must be positive");
        }
        if let PilotSource::Fixed { params } = &self.pilot {
            params.check_dim(self.spec.dim())?;
        }
        if self.implicit_full {
            if self.n_lcc.is_none() {
                return bad("implicit_full needs n_lcc");
            }
            if self.c != 1.0 || self.retain_cases {
                return bad("implicit_full supports only c = 1 without retained cases");
            }
            if self.methods.contains(&Method::Full) {
                return bad("the full-sample method needs a materialised data set");
            }
        } else if self.n_full == 0 {
            return bad("n_full must be positive");
        }
        self.fit.validate()
    }
}

/// One successful estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Draw {
    pub params: ModelParams,
    /// Rows the estimator was fitted on.
    pub size: f64,
    pub expected_size: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub replication: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub successes: usize,
    pub failures: Vec<Failure>,
    pub bias_sq: f64,
    pub var: f64,
    pub bias_sq_se: f64,
    pub var_se: f64,
    pub mean_size: f64,
    pub mean_expected_size: f64,
    pub draws: Vec<ModelParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub replication: usize,
    pub pilot: Option<ModelParams>,
    pub lcc_c: Option<f64>,
    pub lcc_expected_size: Option<f64>,
    pub lcc_realized_size: Option<usize>,
    /// Proposals behind an implicit tilted draw.
    pub proposals: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RuntimeStats {
    pub seconds: f64,
    pub threads: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub truth: ModelParams,
    /// Monte-Carlo standard errors of the truth; zero when exact.
    pub truth_se: Vec<f64>,
    pub methods: Vec<MethodSummary>,
    pub replications: Vec<ReplicationRecord>,
    /// Wall-clock information; not serialised so reports stay
    /// reproducible byte for byte.
    #[serde(skip)]
    pub runtime: RuntimeStats,
}

impl ExperimentReport {
    pub fn method(&self, m: Method) -> Option<&MethodSummary> {
        self.methods.iter().find(|s| s.method == m)
    }
}

/// `(‖mean slope - truth slope‖², sum_j sample variance of slope j)`.
pub fn summarize(draws: &[ModelParams], truth: &ModelParams) -> Result<(f64, f64)> {
    if draws.len() < 2 {
        return Err(Error::TooFewDraws {
            needed: 2,
            got: draws.len(),
        });
    }
    let p = truth.dim();
    for d in draws {
        d.check_dim(p)?;
    }
    let r = draws.len() as f64;
    let mut bias_sq = 0.0;
    let mut var = 0.0;
    for j in 0..p {
        let mean = draws.iter().map(|d| d.slopes[j]).sum::<f64>() / r;
        let ss = draws.iter().map(|d| (d.slopes[j] - mean).powi(2)).sum::<f64>();
        bias_sq += (mean - truth.slopes[j]).powi(2);
        var += ss / (r - 1.0);
    }
    Ok((bias_sq, var))
}

/// Nonparametric bootstrap over replications: standard deviations of the
/// `b` resampled `(bias_sq, var)` pairs.
pub fn bootstrap_se(draws: &[ModelParams], truth: &ModelParams, b: usize, rng: &mut rng::Stream) -> Result<(f64, f64)> {
    if b < 100 {
        return Err(Error::InvalidArgument(format!("bootstrap needs at least 100 resamples, got {b}")));
    }
    summarize(draws, truth)?;
    let r = draws.len();
    let mut stats = Vec::with_capacity(b);
    let mut resample = Vec::with_capacity(r);
    for _ in 0..b {
        resample.clear();
        resample.extend((0..r).map(|_| draws[rng.random_range(0..r)].clone()));
        stats.push(summarize(&resample, truth)?);
    }
    let sd = |f: &dyn Fn(&(f64, f64)) -> f64| {
        let m = stats.iter().map(f).sum::<f64>() / b as f64;
        (stats.iter().map(|s| (f(s) - m).powi(2)).sum::<f64>() / (b as f64 - 1.0)).sqrt()
    };
    Ok((sd(&|s| s.0), sd(&|s| s.1)))
}

/// Weighted case-control pilot from `n_pilot / 2` draws of each class,
/// weighted by the class priors.
pub fn class_balanced_pilot(
    pop: &Population,
    n_pilot: usize,
    case_rate: f64,
    rng: &mut rng::Stream,
    fit: &FitConfig,
) -> Result<ModelParams> {
    let (data, _) = class_balanced_sample(pop, n_pilot, rng)?;
    let weights = data
        .labels()
        .iter()
        .map(|&y| 2.0 * if y { case_rate } else { 1.0 - case_rate })
        .collect();
    Ok(fit_logistic_report(&data.with_weights(weights)?, fit, None)?.params)
}

/// `total / 2` draws from each class, controls first. Returns the data and
/// the per-class count.
fn class_balanced_sample(pop: &Population, total: usize, rng: &mut rng::Stream) -> Result<(ObservationSet, usize)> {
    let m = (total / 2).max(1);
    let mut feats = pop.sample_given_label(false, m, rng)?;
    feats.extend(pop.sample_given_label(true, m, rng)?);
    let labels = (0..2 * m).map(|i| i >= m).collect();
    Ok((ObservationSet::new(feats, pop.dim(), labels)?, m))
}

struct Outcome {
    record: ReplicationRecord,
    results: Vec<(Method, std::result::Result<Draw, String>)>,
}

fn draw_of(params: ModelParams, size: f64, expected_size: f64) -> Draw {
    Draw {
        params,
        size,
        expected_size,
    }
}

fn replicate_explicit(cfg: &ExperimentConfig, pop: &Population, truth: &ModelParams, case_rate: f64, r: usize) -> Outcome {
    let seed = cfg.master_seed;
    let rep = r as u64;
    let mut record = ReplicationRecord {
        replication: r,
        pilot: None,
        lcc_c: None,
        lcc_expected_size: None,
        lcc_realized_size: None,
        proposals: None,
    };
    let fail_all = |record: ReplicationRecord, e: &Error| Outcome {
        record,
        results: cfg.methods.iter().map(|&m| (m, Err(e.to_string()))).collect(),
    };
    let data = match pop.sample(cfg.n_full, &mut replication_stream(seed, rep, Stage::Data)) {
        Ok(d) => d,
        Err(e) => return fail_all(record, &e),
    };
    let mut results = Vec::with_capacity(cfg.methods.len());
    if cfg.methods.contains(&Method::Full) {
        let full = fit_logistic_report(&data, &cfg.fit, None)
            .map(|f| draw_of(f.params, data.n() as f64, data.n() as f64))
            .map_err(|e| e.to_string());
        results.push((Method::Full, full));
    }
    let pilot = match &cfg.pilot {
        PilotSource::Wcc => fit_pilot_wcc(&data, cfg.n_pilot, &mut replication_stream(seed, rep, Stage::Pilot), &cfg.fit)
            .map(|p| (p.params, p.rows)),
        PilotSource::Independent => class_balanced_pilot(
            pop,
            cfg.n_pilot,
            case_rate,
            &mut replication_stream(seed, rep, Stage::PilotData),
            &cfg.fit,
        )
        .map(|p| (p, Vec::new())),
        PilotSource::Truth => Ok((truth.clone(), Vec::new())),
        PilotSource::Fixed { params } => Ok((params.clone(), Vec::new())),
    };
    let (pilot, pilot_rows) = match pilot {
        Ok(p) => p,
        Err(e) => {
            for &m in cfg.methods.iter().filter(|&&m| m != Method::Full) {
                results.push((m, Err(format!("pilot: {e}"))));
            }
            return Outcome { record, results };
        }
    };
    record.pilot = Some(pilot.clone());
    let uniforms = draw_uniforms(data.n(), &mut replication_stream(seed, rep, Stage::Uniforms));
    let mut lcc_uniforms = uniforms.clone();
    if !cfg.recycle_pilot {
        for &i in &pilot_rows {
            lcc_uniforms[i] = 2.0;
        }
    }
    let c = match cfg.n_lcc {
        Some(m) => m as f64 / lcc_expected_size(&data, &pilot),
        None => cfg.c,
    };
    record.lcc_c = Some(c);
    let scheme = SamplingScheme::Lcc {
        pilot: pilot.clone(),
        c,
        retain_cases: cfg.retain_cases,
    };
    let lcc_sub = match draw_subsample(&data, &scheme, &lcc_uniforms) {
        Ok(s) => s,
        Err(e) => {
            for &m in cfg.methods.iter().filter(|&&m| m != Method::Full) {
                results.push((m, Err(e.to_string())));
            }
            return Outcome { record, results };
        }
    };
    record.lcc_expected_size = Some(lcc_sub.expected_size);
    record.lcc_realized_size = Some(lcc_sub.realized_size);
    let budget = cfg.n_pilot as f64 + lcc_sub.expected_size;
    let n1 = data.n_cases();
    let rates = balanced_rates(n1, data.n() - n1, budget);
    for &m in &cfg.methods {
        let res: Result<Draw> = match m {
            Method::Full => continue,
            Method::Lcc => fit_subsample(&data, &lcc_sub, &cfg.fit)
                .map(|f| draw_of(f.params, lcc_sub.realized_size as f64, lcc_sub.expected_size)),
            Method::Cc | Method::Wcc | Method::Uniform => {
                let scheme = match (m, &rates) {
                    (_, Err(e)) if m != Method::Uniform => Err(e.clone()),
                    (Method::Cc, Ok((a0, a1))) => Ok(SamplingScheme::Cc { a0: *a0, a1: *a1 }),
                    (Method::Wcc, Ok((a0, a1))) => Ok(SamplingScheme::Wcc { a0: *a0, a1: *a1 }),
                    _ => Ok(SamplingScheme::Uniform {
                        rate: (budget / data.n() as f64).min(1.0),
                    }),
                };
                scheme.and_then(|s| {
                    let sub = draw_subsample(&data, &s, &uniforms)?;
                    let f = fit_subsample(&data, &sub, &cfg.fit)?;
                    Ok(draw_of(f.params, sub.realized_size as f64, sub.expected_size))
                })
            }
        };
        results.push((m, res.map_err(|e| e.to_string())));
    }
    Outcome { record, results }
}

fn replicate_implicit(cfg: &ExperimentConfig, pop: &Population, truth: &ModelParams, case_rate: f64, r: usize) -> Outcome {
    let seed = cfg.master_seed;
    let rep = r as u64;
    let mut record = ReplicationRecord {
        replication: r,
        pilot: None,
        lcc_c: Some(1.0),
        lcc_expected_size: None,
        lcc_realized_size: None,
        proposals: None,
    };
    let n_lcc = cfg.n_lcc.expect("validated");
    let pilot = match &cfg.pilot {
        PilotSource::Wcc | PilotSource::Independent => class_balanced_pilot(
            pop,
            cfg.n_pilot,
            case_rate,
            &mut replication_stream(seed, rep, Stage::Pilot),
            &cfg.fit,
        ),
        PilotSource::Truth => Ok(truth.clone()),
        PilotSource::Fixed { params } => Ok(params.clone()),
    };
    let pilot = match pilot {
        Ok(p) => p,
        Err(e) => {
            return Outcome {
                record,
                results: cfg.methods.iter().map(|&m| (m, Err(format!("pilot: {e}")))).collect(),
            }
        }
    };
    record.pilot = Some(pilot.clone());
    let budget = cfg.n_pilot + n_lcc;
    let comparison = if cfg.methods.iter().any(|m| matches!(m, Method::Cc | Method::Wcc)) {
        Some(class_balanced_sample(
            pop,
            budget,
            &mut rng::stream(derive_seed(seed, &[rep, Stage::Comparison as u64, 0])),
        ))
    } else {
        None
    };
    let mut results = Vec::with_capacity(cfg.methods.len());
    for &m in &cfg.methods {
        let res: Result<Draw> = match m {
            Method::Full => unreachable!("rejected by validate"),
            Method::Lcc => pop
                .sample_tilted(
                    &pilot,
                    n_lcc,
                    &mut replication_stream(seed, rep, Stage::Tilted),
                    cfg.max_proposals,
                )
                .and_then(|t| {
                    record.proposals = Some(t.proposals);
                    record.lcc_expected_size = Some(n_lcc as f64);
                    record.lcc_realized_size = Some(t.data.n());
                    let offsets = t.data.rows().map(|x| -pilot.linear_predictor(x)).collect();
                    let obs = t.data.with_offsets(offsets)?;
                    let f = fit_logistic_report(&obs, &cfg.fit, None)?;
                    Ok(draw_of(f.params, n_lcc as f64, n_lcc as f64))
                }),
            Method::Cc | Method::Wcc => match comparison.as_ref().expect("drawn above") {
                Err(e) => Err(e.clone()),
                Ok((data, per_class)) => {
                    let n = data.n();
                    let fitted = if m == Method::Cc {
                        let b = ((1.0 - case_rate) / case_rate).ln();
                        data.clone().with_offsets(vec![b; n])
                    } else {
                        let w = data
                            .labels()
                            .iter()
                            .map(|&y| 2.0 * if y { case_rate } else { 1.0 - case_rate })
                            .collect();
                        data.clone().with_weights(w)
                    };
                    fitted
                        .and_then(|d| fit_logistic_report(&d, &cfg.fit, None))
                        .map(|f| draw_of(f.params, (2 * per_class) as f64, budget as f64))
                }
            },
            Method::Uniform => pop
                .sample(budget, &mut rng::stream(derive_seed(seed, &[rep, Stage::Comparison as u64, 1])))
                .and_then(|d| fit_logistic_report(&d, &cfg.fit, None))
                .map(|f| draw_of(f.params, budget as f64, budget as f64)),
        };
        results.push((m, res.map_err(|e| e.to_string())));
    }
    Outcome { record, results }
}

/// Runs every replication and summarises each method against the
/// population limit `theta*` (or the configured truth).
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let start = Instant::now();
    let pop = cfg.spec.compile()?;
    let (truth, truth_se) = match &cfg.truth {
        Some(t) => {
            t.check_dim(pop.dim())?;
            (t.clone(), vec![0.0; pop.dim() + 1])
        }
        None => {
            let fit = population_theta_star(&pop, &cfg.integration, 1e-10)?;
            (fit.params, fit.param_se)
        }
    };
    let case_rate = pop.case_rate(&cfg.integration)?;
    let outcomes: Vec<Outcome> = (0..cfg.replications)
        .into_par_iter()
        .map(|r| {
            if cfg.implicit_full {
                replicate_implicit(cfg, &pop, &truth, case_rate, r)
            } else {
                replicate_explicit(cfg, &pop, &truth, case_rate, r)
            }
        })
        .collect();
    let mut methods = Vec::with_capacity(cfg.methods.len());
    for (mi, &m) in cfg.methods.iter().enumerate() {
        let mut draws = Vec::new();
        let mut failures = Vec::new();
        let (mut size, mut expected) = (0.0, 0.0);
        for o in &outcomes {
            match o.results.iter().find(|(mm, _)| *mm == m).map(|(_, r)| r) {
                Some(Ok(d)) => {
                    size += d.size;
                    expected += d.expected_size;
                    draws.push(d.params.clone());
                }
                Some(Err(reason)) => failures.push(Failure {
                    replication: o.record.replication,
                    reason: reason.clone(),
                }),
                None => failures.push(Failure {
                    replication: o.record.replication,
                    reason: "not run".into(),
                }),
            }
        }
        if failures.len() * 5 > cfg.replications {
            return Err(Error::TooManyFailures {
                method: m.name().into(),
                failed: failures.len(),
                total: cfg.replications,
            });
        }
        let (bias_sq, var) = summarize(&draws, &truth)?;
        let mut brng = rng::stream(derive_seed(cfg.master_seed, &[Stage::Bootstrap as u64, mi as u64]));
        let (bias_sq_se, var_se) = bootstrap_se(&draws, &truth, cfg.bootstrap_b, &mut brng)?;
        let ok = draws.len() as f64;
        methods.push(MethodSummary {
            method: m,
            successes: draws.len(),
            failures,
            bias_sq,
            var,
            bias_sq_se,
            var_se,
            mean_size: size / ok,
            mean_expected_size: expected / ok,
            draws,
        });
    }
    Ok(ExperimentReport {
        config: cfg.clone(),
        truth,
        truth_se,
        methods,
        replications: outcomes.into_iter().map(|o| o.record).collect(),
        runtime: RuntimeStats {
            seconds: start.elapsed().as_secs_f64(),
            threads: rayon::current_num_threads(),
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceConfig {
    pub spec: PopulationSpec,
    pub n_grid: Vec<usize>,
    pub seeds: usize,
    pub master_seed: u64,
    #[serde(default)]
    pub integration: Integration,
    #[serde(default)]
    pub fit: FitConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub method: Method,
    pub n: usize,
    pub median: f64,
    pub q10: f64,
    pub q90: f64,
    pub failures: usize,
    pub errors: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub theta_star: ModelParams,
    /// Case-control limit at equal expected class counts.
    pub cc_limit: ModelParams,
    /// `‖cc_limit - theta_star‖`.
    pub cc_plateau: f64,
    pub rows: Vec<ConvergenceRow>,
}

impl ConvergenceReport {
    pub fn row(&self, m: Method, n: usize) -> Option<&ConvergenceRow> {
        self.rows.iter().find(|r| r.method == m && r.n == n)
    }

    /// Medians of `m` along the grid.
    pub fn medians(&self, m: Method) -> Vec<f64> {
        self.rows.iter().filter(|r| r.method == m).map(|r| r.median).collect()
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Errors `‖theta_hat - theta*‖` of local case-control (`c = 1`),
/// case-control and weighted case-control along a grid of sample sizes.
/// Each seed fits a weighted case-control pilot on all cases and as many
/// controls in expectation; the comparison methods use the same rates.
pub fn convergence_study(cfg: &ConvergenceConfig) -> Result<ConvergenceReport> {
    if cfg.n_grid.is_empty() || cfg.n_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument("n_grid must be nonempty and increasing".into()));
    }
    if cfg.seeds < 2 {
        return Err(Error::InvalidArgument("seeds must be at least 2".into()));
    }
    let pop = cfg.spec.compile()?;
    let star = population_theta_star(&pop, &cfg.integration, 1e-12)?.params;
    let b = equal_class_bias(&pop, &cfg.integration)?;
    let cc_limit = theta_cc_limit(&pop, &cfg.integration, b, 1e-12)?.params;
    let methods = [Method::Lcc, Method::Cc, Method::Wcc];
    let mut rows = Vec::new();
    for &n in &cfg.n_grid {
        let per_seed: Vec<Vec<Option<f64>>> = (0..cfg.seeds)
            .into_par_iter()
            .map(|s| {
                let run = || -> Result<Vec<Option<f64>>> {
                    let path = |stage: Stage| rng::stream(derive_seed(cfg.master_seed, &[s as u64, n as u64, stage as u64]));
                    let data = pop.sample(n, &mut path(Stage::Data))?;
                    let n1 = data.n_cases();
                    let pilot = fit_pilot_wcc(&data, 2 * n1.max(1), &mut path(Stage::Pilot), &cfg.fit)?;
                    let rates = balanced_rates(n1, n - n1, 2.0 * n1 as f64)?;
                    let uniforms = draw_uniforms(n, &mut path(Stage::Uniforms));
                    let schemes = [
                        SamplingScheme::lcc(pilot.params.clone(), 1.0),
                        SamplingScheme::Cc { a0: rates.0, a1: rates.1 },
                        SamplingScheme::Wcc { a0: rates.0, a1: rates.1 },
                    ];
                    Ok(schemes
                        .iter()
                        .map(|sch| {
                            draw_subsample(&data, sch, &uniforms)
                                .and_then(|sub| fit_subsample(&data, &sub, &cfg.fit))
                                .ok()
                                .map(|f| f.params.distance(&star))
                        })
                        .collect())
                };
                run().unwrap_or_else(|_| vec![None; 3])
            })
            .collect();
        for (mi, &m) in methods.iter().enumerate() {
            let mut errors: Vec<f64> = per_seed.iter().filter_map(|v| v[mi]).collect();
            let failures = cfg.seeds - errors.len();
            if failures * 5 > cfg.seeds {
                return Err(Error::TooManyFailures {
                    method: m.name().into(),
                    failed: failures,
                    total: cfg.seeds,
                });
            }
            let mut sorted = errors.clone();
            sorted.sort_by(f64::total_cmp);
            rows.push(ConvergenceRow {
                method: m,
                n,
                median: quantile(&sorted, 0.5),
                q10: quantile(&sorted, 0.1),
                q90: quantile(&sorted, 0.9),
                failures,
                errors: std::mem::take(&mut errors),
            });
        }
    }
    Ok(ConvergenceReport {
        cc_plateau: cc_limit.distance(&star),
        theta_star: star,
        cc_limit,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summarize_trivial_cases() {
        let truth = ModelParams::new(0.3, vec![1.0, -2.0]);
        let same = vec![truth.clone(); 5];
        assert_eq!(summarize(&same, &truth).unwrap(), (0.0, 0.0));
        let plus = ModelParams::new(0.3, vec![2.0, -2.0]);
        let minus = ModelParams::new(0.3, vec![0.0, -2.0]);
        let (b, v) = summarize(&[plus, minus], &truth).unwrap();
        assert_eq!(b, 0.0);
        assert!((v - 2.0).abs() < 1e-15);
        assert!(summarize(&[truth.clone()], &truth).is_err());
    }

    #[test]
    fn intercept_is_excluded() {
        let truth = ModelParams::new(0.0, vec![1.0]);
        let draws = vec![ModelParams::new(5.0, vec![1.0]), ModelParams::new(-3.0, vec![1.0])];
        assert_eq!(summarize(&draws, &truth).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn bootstrap_of_constant_draws_is_zero() {
        let truth = ModelParams::new(0.0, vec![1.0, 1.0]);
        let draws = vec![ModelParams::new(0.0, vec![1.5, 1.0]); 10];
        let se = bootstrap_se(&draws, &truth, 200, &mut rng::stream(1)).unwrap();
        assert_eq!(se, (0.0, 0.0));
        assert!(bootstrap_se(&draws, &truth, 99, &mut rng::stream(1)).is_err());
    }

    #[test]
    fn config_validation() {
        let mut cfg = ExperimentConfig::new(PopulationSpec::oatmeal(), 1000, 100, vec![Method::Lcc], 10);
        assert!(cfg.validate().is_ok());
        cfg.replications = 1;
        assert!(cfg.validate().is_err());
        cfg.replications = 10;
        cfg.methods = vec![Method::Lcc, Method::Lcc];
        assert!(cfg.validate().is_err());
        cfg.methods = vec![Method::Full];
        cfg.implicit_full = true;
        cfg.n_lcc = Some(100);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn quantiles_interpolate() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile(&v, 0.5), 3.0);
        assert_eq!(quantile(&v, 0.1), 1.4);
    }
}
