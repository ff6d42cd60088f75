//! Expectations over the feature distribution of a population.
//!
//! Discrete populations are summed exactly, the step-logit population is
//! integrated by Gauss–Legendre on each side of the jump, and Gaussian
//! mixtures by Monte Carlo stratified on the class with a fixed number of
//! draws per class.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Compiled, Population};
use crate::error::{Error, Result};
use crate::rng::{self, Stage};

const CHUNK: usize = 1 << 15;

/// Integration settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Integration {
    /// Total Monte-Carlo draws, split equally between the classes.
    pub mc_draws: usize,
    pub mc_seed: u64,
    /// Nodes per panel for the step-logit population.
    pub quadrature_nodes: usize,
}

impl Default for Integration {
    fn default() -> Self {
        Self {
            mc_draws: 4_000_000,
            mc_seed: 0x5eed,
            quadrature_nodes: 256,
        }
    }
}

impl Integration {
    pub fn with_draws(mc_draws: usize) -> Self {
        Self {
            mc_draws,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mc_draws < 2000 {
            return Err(Error::TooFewDraws {
                needed: 2000,
                got: self.mc_draws,
            });
        }
        if self.quadrature_nodes < 2 {
            return Err(Error::InvalidArgument("quadrature_nodes must be at least 2".into()));
        }
        Ok(())
    }
}

/// Mean of the integrand within one class.
#[derive(Debug, Clone, PartialEq)]
pub struct StratumMean {
    pub prior: f64,
    pub draws: usize,
    pub mean: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub mean: Vec<f64>,
    /// Monte-Carlo standard errors; zero for exact rules or when not
    /// requested.
    pub se: Vec<f64>,
    /// Per-class means; empty for exact rules.
    pub strata: Vec<StratumMean>,
}

impl Estimate {
    pub fn is_exact(&self) -> bool {
        self.strata.is_empty()
    }
}

impl Population {
    /// `E[g(X)]` where `g(x, f(x), out)` writes a `width`-vector into the
    /// zeroed buffer `out`.
    pub fn integrate<F>(&self, opts: &Integration, width: usize, want_se: bool, g: F) -> Result<Estimate>
    where
        F: Fn(&[f64], f64, &mut [f64]) + Sync,
    {
        let p = self.p;
        let mut out = vec![0.0; width];
        match &self.compiled {
            Compiled::Discrete { cells, .. } => {
                let mut mean = vec![0.0; width];
                for c in cells {
                    out.iter_mut().for_each(|v| *v = 0.0);
                    g(&c.x, c.logodds, &mut out);
                    for (m, v) in mean.iter_mut().zip(&out) {
                        *m += c.mass * v;
                    }
                }
                Ok(exact(mean))
            }
            Compiled::Step { threshold, .. } => {
                if opts.quadrature_nodes < 2 {
                    return Err(Error::InvalidArgument("quadrature_nodes must be at least 2".into()));
                }
                let mut mean = vec![0.0; width];
                for (lo, hi) in [(0.0, *threshold), (*threshold, 1.0)] {
                    let (nodes, weights) = super::quadrature::gauss_legendre(opts.quadrature_nodes, lo, hi);
                    for (x, w) in nodes.iter().zip(&weights) {
                        out.iter_mut().for_each(|v| *v = 0.0);
                        let xs = [*x];
                        g(&xs, self.log_odds_unchecked(&xs), &mut out);
                        for (m, v) in mean.iter_mut().zip(&out) {
                            *m += w * v;
                        }
                    }
                }
                Ok(exact(mean))
            }
            Compiled::Gaussian { prior1, classes, .. } => {
                opts.validate()?;
                let per_class = opts.mc_draws / 2;
                let n_chunks = per_class.div_ceil(CHUNK);
                let mut mean = vec![0.0; width];
                let mut var = vec![0.0; width];
                let mut strata = Vec::with_capacity(2);
                for (label, prior) in [(0usize, 1.0 - prior1), (1usize, *prior1)] {
                    let class = &classes[label];
                    let partial: Vec<(Vec<f64>, Vec<f64>)> = (0..n_chunks)
                        .into_par_iter()
                        .map(|chunk| {
                            let mut rng = rng::stream(rng::derive_seed(
                                opts.mc_seed,
                                &[Stage::MonteCarlo as u64, label as u64, chunk as u64],
                            ));
                            let len = CHUNK.min(per_class - chunk * CHUNK);
                            let mut sum = vec![0.0; width];
                            let mut sumsq = if want_se { vec![0.0; width] } else { Vec::new() };
                            let mut z = vec![0.0; p];
                            let mut x = vec![0.0; p];
                            let mut out = vec![0.0; width];
                            for _ in 0..len {
                                class.draw_into(&mut rng, &mut z, &mut x);
                                out.iter_mut().for_each(|v| *v = 0.0);
                                g(&x, self.log_odds_unchecked(&x), &mut out);
                                for (s, v) in sum.iter_mut().zip(&out) {
                                    *s += v;
                                }
                                if want_se {
                                    for (s, v) in sumsq.iter_mut().zip(&out) {
                                        *s += v * v;
                                    }
                                }
                            }
                            (sum, sumsq)
                        })
                        .collect();
                    let mut sum = vec![0.0; width];
                    let mut sumsq = vec![0.0; width];
                    for (s, q) in &partial {
                        for j in 0..width {
                            sum[j] += s[j];
                            if want_se {
                                sumsq[j] += q[j];
                            }
                        }
                    }
                    let m = per_class as f64;
                    let class_mean: Vec<f64> = sum.iter().map(|s| s / m).collect();
                    for j in 0..width {
                        mean[j] += prior * class_mean[j];
                        if want_se {
                            let v = (sumsq[j] / m - class_mean[j] * class_mean[j]).max(0.0) * m / (m - 1.0);
                            var[j] += prior * prior * v / m;
                        }
                    }
                    strata.push(StratumMean {
                        prior,
                        draws: per_class,
                        mean: class_mean,
                    });
                }
                Ok(Estimate {
                    mean,
                    se: var.into_iter().map(f64::sqrt).collect(),
                    strata,
                })
            }
        }
    }
}

fn exact(mean: Vec<f64>) -> Estimate {
    let se = vec![0.0; mean.len()];
    Estimate {
        mean,
        se,
        strata: Vec::new(),
    }
}
