//! Synthetic populations with exact conditional log-odds.
//!
//! A [`PopulationSpec`] is the serialisable description; [`Population`] is
//! the validated form with precomputed factorisations that every sampler
//! and oracle works from.

mod measure;
mod oracle;
mod precision_recall;
pub mod quadrature;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{ModelParams, ObservationSet};
use crate::error::{Error, Result};
use crate::numerics::sigmoid;
use crate::rng::Stream;

pub use measure::{Estimate, Integration, StratumMean};
pub use oracle::{
    equal_class_bias, population_fit, population_theta_star, theta_cc_limit, OracleFit,
};
pub use precision_recall::{average_precision, precision_recall, precision_recall_scores, PrPoint};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cell {
    pub x: Vec<f64>,
    pub mass: f64,
    pub logodds: f64,
}

/// Covariance given either in full or by its diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Covariance {
    Full(Vec<Vec<f64>>),
    Diagonal { diag: Vec<f64> },
}

impl Covariance {
    pub fn identity(p: usize) -> Self {
        Covariance::Diagonal { diag: vec![1.0; p] }
    }

    fn to_matrix(&self) -> Result<DMatrix<f64>> {
        match self {
            Covariance::Full(rows) => crate::linalg::from_rows(rows),
            Covariance::Diagonal { diag } => Ok(DMatrix::from_diagonal(
                &nalgebra::DVector::from_column_slice(diag),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PopulationSpec {
    /// Finitely many feature values with given masses and log-odds.
    Discrete {
        cells: Vec<Cell>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        feature_names: Option<Vec<String>>,
    },
    /// `X | Y = y ~ N(mu_y, sigma_y)` with `P(Y = 1) = prior1`.
    Gaussian2 {
        prior1: f64,
        mu0: Vec<f64>,
        mu1: Vec<f64>,
        sigma0: Covariance,
        sigma1: Covariance,
    },
    /// `X ~ U(0, 1)` and `f(x) = a + b x + jump * 1{x > threshold}`.
    Steplogit {
        a: f64,
        b: f64,
        jump: f64,
        threshold: f64,
    },
}

impl PopulationSpec {
    pub fn compile(&self) -> Result<Population> {
        Population::new(self.clone())
    }

    /// The oatmeal / family-history example: features (oatmeal, history).
    pub fn oatmeal() -> Self {
        let cell = |o: f64, h: f64, mass: f64, logodds: f64| Cell {
            x: vec![o, h],
            mass,
            logodds,
        };
        PopulationSpec::Discrete {
            cells: vec![
                cell(0.0, 0.0, 0.45, -5.0),
                cell(0.0, 1.0, 0.05, -4.0),
                cell(1.0, 0.0, 0.45, -10.0),
                cell(1.0, 1.0, 0.05, -1.0),
            ],
            feature_names: Some(vec!["oatmeal".into(), "history".into()]),
        }
    }

    /// Two-dimensional Gaussian mixture with unequal covariances.
    pub fn example2() -> Self {
        PopulationSpec::Gaussian2 {
            prior1: 0.01,
            mu0: vec![0.0, 0.0],
            mu1: vec![1.5, 1.5],
            sigma0: Covariance::identity(2),
            sigma1: Covariance::Diagonal {
                diag: vec![0.3, 5.0],
            },
        }
    }

    pub fn simulation1() -> Self {
        PopulationSpec::Gaussian2 {
            prior1: 0.01,
            mu0: vec![0.0; 5],
            mu1: vec![1.0, 1.0, 1.0, 1.0, 4.0],
            sigma0: Covariance::Diagonal {
                diag: vec![1.0, 1.0, 1.0, 1.0, 9.0],
            },
            sigma1: Covariance::identity(5),
        }
    }

    /// Equal-covariance mixture with `P(Y = 1) = 0.1`, `p` coordinates of
    /// which the first `shifted` have class-1 mean one.
    pub fn simulation2(p: usize, shifted: usize) -> Self {
        let mut mu1 = vec![0.0; p];
        mu1[..shifted].iter_mut().for_each(|m| *m = 1.0);
        PopulationSpec::Gaussian2 {
            prior1: 0.1,
            mu0: vec![0.0; p],
            mu1,
            sigma0: Covariance::identity(p),
            sigma1: Covariance::identity(p),
        }
    }

    pub fn steplogit_example() -> Self {
        PopulationSpec::Steplogit {
            a: -10.0,
            b: 5.0,
            jump: 3.0,
            threshold: 0.5,
        }
    }

    pub fn feature_names(&self) -> Vec<String> {
        match self {
            PopulationSpec::Discrete {
                feature_names: Some(names),
                ..
            } => names.clone(),
            _ => (1..=self.dim()).map(|j| format!("x{j}")).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            PopulationSpec::Discrete { cells, .. } => cells.first().map_or(0, |c| c.x.len()),
            PopulationSpec::Gaussian2 { mu0, .. } => mu0.len(),
            PopulationSpec::Steplogit { .. } => 1,
        }
    }
}

#[derive(Debug, Clone)]
struct GaussianClass {
    mu: Vec<f64>,
    /// Lower Cholesky factor, or `None` when the covariance is diagonal.
    chol: Option<DMatrix<f64>>,
    sd: Vec<f64>,
    precision: DMatrix<f64>,
    log_norm: f64,
}

impl GaussianClass {
    fn new(mu: &[f64], sigma: &Covariance) -> Result<Self> {
        let p = mu.len();
        let m = sigma.to_matrix()?;
        if m.nrows() != p || m.ncols() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                actual: m.nrows(),
            });
        }
        if (&m - m.transpose()).amax() > 1e-12 * (1.0 + m.amax()) {
            return Err(Error::NotPositiveDefinite("covariance is not symmetric"));
        }
        let ch = m
            .clone()
            .cholesky()
            .ok_or(Error::NotPositiveDefinite("covariance"))?;
        let l = ch.l();
        let logdet: f64 = 2.0 * (0..p).map(|i| l[(i, i)].ln()).sum::<f64>();
        let is_diag = (0..p).all(|i| (0..p).all(|j| i == j || m[(i, j)] == 0.0));
        Ok(Self {
            mu: mu.to_vec(),
            sd: (0..p).map(|i| m[(i, i)].sqrt()).collect(),
            chol: if is_diag { None } else { Some(l) },
            precision: ch.inverse(),
            log_norm: -0.5 * (p as f64 * (2.0 * std::f64::consts::PI).ln() + logdet),
        })
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        let p = self.mu.len();
        let mut q = 0.0;
        if self.chol.is_none() {
            for i in 0..p {
                let d = x[i] - self.mu[i];
                q += d * d * self.precision[(i, i)];
            }
        } else {
            for i in 0..p {
                let di = x[i] - self.mu[i];
                let mut row = 0.0;
                for j in 0..p {
                    row += self.precision[(i, j)] * (x[j] - self.mu[j]);
                }
                q += di * row;
            }
        }
        self.log_norm - 0.5 * q
    }

    fn draw_into(&self, rng: &mut Stream, z: &mut [f64], out: &mut [f64]) {
        let p = self.mu.len();
        for zi in z.iter_mut() {
            *zi = rng.sample(StandardNormal);
        }
        match &self.chol {
            None => {
                for i in 0..p {
                    out[i] = self.mu[i] + self.sd[i] * z[i];
                }
            }
            Some(l) => {
                for i in 0..p {
                    let mut v = self.mu[i];
                    for j in 0..=i {
                        v += l[(i, j)] * z[j];
                    }
                    out[i] = v;
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
enum Compiled {
    Discrete {
        cells: Vec<Cell>,
        cumulative: Vec<f64>,
    },
    Gaussian {
        prior1: f64,
        classes: [GaussianClass; 2],
        /// Exact coefficients when the covariances coincide.
        linear: Option<ModelParams>,
    },
    Step {
        a: f64,
        b: f64,
        jump: f64,
        threshold: f64,
    },
}

/// A validated population.
#[derive(Debug, Clone)]
pub struct Population {
    spec: PopulationSpec,
    p: usize,
    compiled: Compiled,
}

impl Population {
    pub fn new(spec: PopulationSpec) -> Result<Self> {
        let p = spec.dim();
        let compiled = match &spec {
            PopulationSpec::Discrete { cells, feature_names } => {
                if cells.is_empty() {
                    return Err(Error::InvalidArgument("discrete population has no cells".into()));
                }
                if cells.iter().any(|c| c.x.len() != p) {
                    return Err(Error::InvalidArgument("cells differ in dimension".into()));
                }
                if let Some(names) = feature_names {
                    if names.len() != p {
                        return Err(Error::InvalidArgument(format!(
                            "feature_names has {} entries for {p} features",
                            names.len()
                        )));
                    }
                }
                if cells.iter().any(|c| {
                    !(c.mass > 0.0) || !c.logodds.is_finite() || c.x.iter().any(|v| !v.is_finite())
                }) {
                    return Err(Error::InvalidArgument(
                        "cell masses must be positive and log-odds finite".into(),
                    ));
                }
                let total: f64 = cells.iter().map(|c| c.mass).sum();
                if (total - 1.0).abs() > 1e-12 {
                    return Err(Error::InvalidArgument(format!(
                        "cell masses sum to {total}, not 1"
                    )));
                }
                let mut acc = 0.0;
                let cumulative = cells
                    .iter()
                    .map(|c| {
                        acc += c.mass;
                        acc
                    })
                    .collect();
                Compiled::Discrete {
                    cells: cells.clone(),
                    cumulative,
                }
            }
            PopulationSpec::Gaussian2 {
                prior1,
                mu0,
                mu1,
                sigma0,
                sigma1,
            } => {
                if !(*prior1 > 0.0 && *prior1 < 1.0) {
                    return Err(Error::InvalidArgument("prior1 must lie in (0, 1)".into()));
                }
                if mu1.len() != p {
                    return Err(Error::DimensionMismatch {
                        expected: p,
                        actual: mu1.len(),
                    });
                }
                let c0 = GaussianClass::new(mu0, sigma0)?;
                let c1 = GaussianClass::new(mu1, sigma1)?;
                let linear = if sigma0.to_matrix()? == sigma1.to_matrix()? {
                    let prec = &c0.precision;
                    let m0 = nalgebra::DVector::from_column_slice(mu0);
                    let m1 = nalgebra::DVector::from_column_slice(mu1);
                    let beta = prec * (&m1 - &m0);
                    let alpha = (prior1 / (1.0 - prior1)).ln()
                        - 0.5 * (m1.dot(&(prec * &m1)) - m0.dot(&(prec * &m0)));
                    Some(ModelParams::new(alpha, beta.iter().copied().collect()))
                } else {
                    None
                };
                Compiled::Gaussian {
                    prior1: *prior1,
                    classes: [c0, c1],
                    linear,
                }
            }
            PopulationSpec::Steplogit {
                a,
                b,
                jump,
                threshold,
            } => {
                if !(*threshold > 0.0 && *threshold < 1.0) || ![a, b, jump].iter().all(|v| v.is_finite()) {
                    return Err(Error::InvalidArgument(
                        "steplogit needs finite coefficients and a threshold in (0, 1)".into(),
                    ));
                }
                Compiled::Step {
                    a: *a,
                    b: *b,
                    jump: *jump,
                    threshold: *threshold,
                }
            }
        };
        Ok(Self { spec, p, compiled })
    }

    pub fn spec(&self) -> &PopulationSpec {
        &self.spec
    }

    /// Number of features.
    pub fn dim(&self) -> usize {
        self.p
    }

    /// Whether expectations are computed exactly (sums or quadrature)
    /// rather than by Monte Carlo.
    pub fn has_exact_measure(&self) -> bool {
        !matches!(self.compiled, Compiled::Gaussian { .. })
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self.compiled, Compiled::Discrete { .. })
    }

    /// Exact coefficients when the log-odds are linear in `x` by
    /// construction (equal-covariance Gaussian mixtures).
    pub fn linear_log_odds(&self) -> Option<&ModelParams> {
        match &self.compiled {
            Compiled::Gaussian { linear, .. } => linear.as_ref(),
            _ => None,
        }
    }

    /// `P(Y = 1)`; exact for every population kind.
    pub fn case_rate(&self, opts: &Integration) -> Result<f64> {
        if let Compiled::Gaussian { prior1, .. } = &self.compiled {
            return Ok(*prior1);
        }
        let e = self.integrate(opts, 1, false, |_, f, out| out[0] = sigmoid(f))?;
        Ok(e.mean[0])
    }

    /// Discrete cells; `None` for continuous populations.
    pub fn cells(&self) -> Option<&[Cell]> {
        match &self.compiled {
            Compiled::Discrete { cells, .. } => Some(cells),
            _ => None,
        }
    }

    #[inline]
    fn log_odds_unchecked(&self, x: &[f64]) -> f64 {
        match &self.compiled {
            Compiled::Discrete { cells, .. } => cells
                .iter()
                .find(|c| c.x.as_slice() == x)
                .map_or(f64::NAN, |c| c.logodds),
            Compiled::Gaussian {
                prior1,
                classes,
                linear,
            } => match linear {
                Some(l) => l.linear_predictor(x),
                None => {
                    (prior1 / (1.0 - prior1)).ln() + classes[1].log_density(x)
                        - classes[0].log_density(x)
                }
            },
            Compiled::Step {
                a,
                b,
                jump,
                threshold,
            } => {
                a + b * x[0] + if x[0] > *threshold { *jump } else { 0.0 }
            }
        }
    }

    /// Exact conditional log-odds `f(x) = logit P(Y = 1 | X = x)`.
    pub fn true_log_odds(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.p {
            return Err(Error::DimensionMismatch {
                expected: self.p,
                actual: x.len(),
            });
        }
        match &self.compiled {
            Compiled::Discrete { cells, .. } => cells
                .iter()
                .find(|c| c.x.as_slice() == x)
                .map(|c| c.logodds)
                .ok_or(Error::OutsideSupport),
            Compiled::Step { .. } if !(0.0..=1.0).contains(&x[0]) => Err(Error::OutsideSupport),
            _ => Ok(self.log_odds_unchecked(x)),
        }
    }

    /// Draws `(x, y)` into `x`, returning `y`.
    #[inline]
    fn draw_into(&self, rng: &mut Stream, z: &mut [f64], x: &mut [f64]) -> bool {
        match &self.compiled {
            Compiled::Discrete { cells, cumulative } => {
                let u: f64 = rng.random();
                let k = cumulative
                    .iter()
                    .position(|&c| u < c)
                    .unwrap_or(cells.len() - 1);
                x.copy_from_slice(&cells[k].x);
                rng.random::<f64>() < sigmoid(cells[k].logodds)
            }
            Compiled::Gaussian { prior1, classes, .. } => {
                let y = rng.random::<f64>() < *prior1;
                classes[y as usize].draw_into(rng, z, x);
                y
            }
            Compiled::Step { .. } => {
                x[0] = rng.random();
                rng.random::<f64>() < sigmoid(self.log_odds_unchecked(x))
            }
        }
    }

    /// `n` i.i.d. draws.
    pub fn sample(&self, n: usize, rng: &mut Stream) -> Result<ObservationSet> {
        if n == 0 {
            return Err(Error::InvalidArgument("sample size must be at least 1".into()));
        }
        let mut feats = vec![0.0; n * self.p];
        let mut labels = Vec::with_capacity(n);
        let mut z = vec![0.0; self.p];
        for row in feats.chunks_exact_mut(self.p.max(1)).take(n) {
            labels.push(self.draw_into(rng, &mut z, &mut row[..self.p]));
        }
        if self.p == 0 {
            labels.resize_with(n, || false);
        }
        ObservationSet::new(feats, self.p, labels)
    }

    /// `n` draws of `X` given `Y = y`. Gaussian mixtures draw directly;
    /// other populations filter unconditional draws.
    pub fn sample_given_label(&self, y: bool, n: usize, rng: &mut Stream) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(n * self.p);
        let mut z = vec![0.0; self.p];
        let mut x = vec![0.0; self.p];
        match &self.compiled {
            Compiled::Gaussian { classes, .. } => {
                for _ in 0..n {
                    classes[y as usize].draw_into(rng, &mut z, &mut x);
                    out.extend_from_slice(&x);
                }
            }
            _ => {
                let cap = 1000 * n as u64 + 1_000_000;
                let mut tries = 0u64;
                while out.len() < n * self.p {
                    tries += 1;
                    if tries > cap {
                        return Err(Error::AcceptanceTooLow {
                            proposals: tries,
                            accepted: out.len() / self.p.max(1),
                        });
                    }
                    if self.draw_into(rng, &mut z, &mut x) == y {
                        out.extend_from_slice(&x);
                    }
                }
            }
        }
        Ok(out)
    }

    /// Rejection sampling from the local case-control measure of `pilot`:
    /// proposals from the population are kept with probability
    /// `|y - p_pilot(x)|` until `n_accept` are kept. Fails once more than
    /// `max_proposals` proposals have been made.
    pub fn sample_tilted(
        &self,
        pilot: &ModelParams,
        n_accept: usize,
        rng: &mut Stream,
        max_proposals: u64,
    ) -> Result<TiltedSample> {
        pilot.check_dim(self.p)?;
        if n_accept == 0 {
            return Err(Error::InvalidArgument("n_accept must be at least 1".into()));
        }
        let mut feats = Vec::with_capacity(n_accept * self.p);
        let mut labels = Vec::with_capacity(n_accept);
        let mut z = vec![0.0; self.p];
        let mut x = vec![0.0; self.p];
        let mut proposals = 0u64;
        while labels.len() < n_accept {
            if proposals >= max_proposals {
                return Err(Error::AcceptanceTooLow {
                    proposals,
                    accepted: labels.len(),
                });
            }
            proposals += 1;
            let y = self.draw_into(rng, &mut z, &mut x);
            let eta = pilot.linear_predictor(&x);
            let a = if y { sigmoid(-eta) } else { sigmoid(eta) };
            if rng.random::<f64>() < a {
                feats.extend_from_slice(&x);
                labels.push(y);
            }
        }
        Ok(TiltedSample {
            data: ObservationSet::new(feats, self.p, labels)?,
            proposals,
        })
    }

    /// `odds(Y=1 | x_j = 1) / odds(Y=1 | x_j = 0)` from exact cell sums.
    pub fn marginal_odds_ratio(&self, coordinate: usize) -> Result<f64> {
        let cells = self.cells().ok_or_else(|| {
            Error::InvalidArgument("marginal odds ratios need a discrete population".into())
        })?;
        if coordinate >= self.p {
            return Err(Error::DimensionMismatch {
                expected: self.p,
                actual: coordinate,
            });
        }
        let mut mass = [0.0; 2];
        let mut cases = [0.0; 2];
        for c in cells {
            let v = c.x[coordinate];
            if v != 0.0 && v != 1.0 {
                return Err(Error::NonBinary(coordinate));
            }
            let k = v as usize;
            mass[k] += c.mass;
            cases[k] += c.mass * sigmoid(c.logodds);
        }
        if mass[0] == 0.0 || mass[1] == 0.0 {
            return Err(Error::NonBinary(coordinate));
        }
        let odds = |k: usize| {
            let q = cases[k] / mass[k];
            q / (1.0 - q)
        };
        Ok(odds(1) / odds(0))
    }
}

/// Accepted rows of a tilted draw plus the number of proposals behind them.
#[derive(Debug, Clone)]
pub struct TiltedSample {
    pub data: ObservationSet,
    pub proposals: u64,
}

impl TiltedSample {
    pub fn acceptance_rate(&self) -> f64 {
        self.data.n() as f64 / self.proposals as f64
    }
}
