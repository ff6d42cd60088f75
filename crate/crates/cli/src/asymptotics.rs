use serde::Serialize;

use lcc_core::asymptotics::{conditional_bias_slope, eval_bar_theta, eval_matrices, lcc_variance, AsymptoticsReport};
use lcc_core::populations::{population_theta_star, Integration};
use lcc_core::linalg;

use crate::args::{AsymptoticsArgs, Format};
use crate::error::Result;
use crate::io::{self, fmt17};
use crate::Context;

const LIMIT_TOL: f64 = 1e-12;

#[derive(Debug, Serialize)]
pub struct AsymptoticsOutput {
    pub seed: u64,
    pub feature_names: Vec<String>,
    pub integration: Integration,
    pub report: AsymptoticsReport,
    /// Covariance of `sqrt(n) (theta_hat - theta_bar)` with the pilot held
    /// fixed.
    pub lcc_variance: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub conditional_bias_slope: Option<Vec<Vec<f64>>>,
}

fn push_matrix(out: &mut String, name: &str, terms: &[String], m: &[Vec<f64>]) {
    for (r, row) in terms.iter().zip(m) {
        for (c, v) in terms.iter().zip(row) {
            out.push_str(&format!("{name},{r},{c},{}\n", fmt17(*v)));
        }
    }
}

fn render_csv(o: &AsymptoticsOutput) -> String {
    let terms: Vec<String> = std::iter::once("intercept".to_string())
        .chain(o.feature_names.iter().cloned())
        .collect();
    let r = &o.report;
    let mut out = String::from("quantity,row,column,value\n");
    out.push_str(&format!("abar,,,{}\n", fmt17(r.abar)));
    out.push_str(&format!("accept_rate,,,{}\n", fmt17(r.accept_rate)));
    out.push_str(&format!("c,,,{}\n", fmt17(r.c)));
    for (t, v) in terms.iter().zip(r.theta.to_vec()) {
        out.push_str(&format!("theta,{t},,{}\n", fmt17(v)));
    }
    for (t, v) in terms.iter().zip(r.lambda.to_vec()) {
        out.push_str(&format!("lambda,{t},,{}\n", fmt17(v)));
    }
    for (t, v) in terms.iter().zip(&r.g) {
        out.push_str(&format!("g,{t},,{}\n", fmt17(*v)));
    }
    push_matrix(&mut out, "h", &terms, &r.h);
    push_matrix(&mut out, "j", &terms, &r.j);
    push_matrix(&mut out, "sigma", &terms, &r.sigma);
    push_matrix(&mut out, "sigma_full", &terms, &r.sigma_full);
    push_matrix(&mut out, "lcc_variance", &terms, &o.lcc_variance);
    if let Some(c) = &r.crossed {
        push_matrix(&mut out, "crossed", &terms, c);
    }
    if let Some(s) = &o.conditional_bias_slope {
        push_matrix(&mut out, "conditional_bias_slope", &terms, s);
    }
    out
}

pub fn run(ctx: &Context, args: &AsymptoticsArgs) -> Result<AsymptoticsOutput> {
    let spec = io::load_spec(&args.spec)?;
    let pop = spec.compile()?;
    let names = spec.feature_names();
    let mut opts = Integration {
        mc_seed: ctx.seed,
        ..Integration::default()
    };
    if let Some(d) = args.draws {
        opts.mc_draws = d;
    }
    opts.validate()?;
    let lambda = match &args.lambda {
        Some(p) => io::read_coefficients(p, Some(&names))?,
        None => population_theta_star(&pop, &opts, LIMIT_TOL)?.params,
    };
    let theta = match &args.theta {
        Some(p) => io::read_coefficients(p, Some(&names))?,
        None => eval_bar_theta(&pop, &opts, &lambda, LIMIT_TOL)?.params,
    };
    let report = eval_matrices(&pop, &opts, &theta, &lambda, args.c, args.crossed)?;
    let var = lcc_variance(&report, None)?;
    let slope = if args.crossed {
        Some(linalg::to_rows(&conditional_bias_slope(&report)?))
    } else {
        None
    };
    let out = AsymptoticsOutput {
        seed: ctx.seed,
        feature_names: names,
        integration: opts,
        lcc_variance: linalg::to_rows(&var),
        conditional_bias_slope: slope,
        report,
    };
    let text = match ctx.format {
        Format::Json => io::to_json(&out),
        Format::Csv => render_csv(&out),
    };
    io::emit(ctx.out.as_deref(), &text)?;
    Ok(out)
}
