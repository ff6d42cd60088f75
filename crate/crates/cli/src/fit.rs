use serde::Serialize;

use lcc_core::glm::fit_logistic_report;
use lcc_core::{FitConfig, ModelParams};

use crate::args::{FitArgs, Format};
use crate::error::Result;
use crate::io::{self, fmt17};
use crate::Context;

#[derive(Debug, Serialize)]
pub struct FitOutput {
    pub feature_names: Vec<String>,
    pub params: ModelParams,
    /// Added to the fitted coefficients before reporting.
    pub adjustment: Option<ModelParams>,
    pub iterations: usize,
    pub grad_norm: f64,
    pub neg_log_likelihood: f64,
    pub rows: usize,
}

pub fn run(ctx: &Context, args: &FitArgs) -> Result<FitOutput> {
    let (data, names) = io::read_observations(&args.data, !args.ignore_offsets)?;
    let mut config = FitConfig::default();
    if let Some(t) = args.grad_tol {
        config.grad_tol = t;
    }
    if let Some(m) = args.max_iter {
        config.max_iter = m;
    }
    let report = fit_logistic_report(&data, &config, None)?;
    let adjustment = args
        .adjustment
        .as_deref()
        .map(|p| io::read_coefficients(p, Some(&names)))
        .transpose()?;
    let params = match &adjustment {
        Some(a) => report.params.add(a),
        None => report.params.clone(),
    };
    let out = FitOutput {
        feature_names: names,
        params,
        adjustment,
        iterations: report.iterations,
        grad_norm: report.grad_norm,
        neg_log_likelihood: report.neg_log_likelihood,
        rows: data.n(),
    };
    let text = match ctx.format {
        Format::Json => io::to_json(&out),
        Format::Csv => format!(
            "{}# iterations,{}\n# grad_norm,{}\n",
            io::render_coefficients(&out.feature_names, &out.params),
            out.iterations,
            fmt17(out.grad_norm)
        ),
    };
    io::emit(ctx.out.as_deref(), &text)?;
    Ok(out)
}
