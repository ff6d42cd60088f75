use lcc_core::experiments::{convergence_study, run_experiment, ConvergenceConfig, ExperimentConfig};

use crate::args::{Format, SimulateArgs};
use crate::error::{CliError, Result};
use crate::io::{self, fmt17};
use crate::Context;

fn experiment(ctx: &Context, args: &SimulateArgs) -> Result<()> {
    let mut cfg: ExperimentConfig = io::load_config(&args.config)?;
    if let Some(s) = ctx.seed_override {
        cfg.master_seed = s;
    }
    if let Some(r) = args.replications {
        cfg.replications = r;
    }
    eprintln!("master_seed = {}", cfg.master_seed);
    let report = run_experiment(&cfg)?;
    eprintln!(
        "{} replications in {:.1} s on {} threads",
        cfg.replications, report.runtime.seconds, report.runtime.threads
    );

    let text = match ctx.format {
        Format::Json => io::to_json(&report),
        Format::Csv => {
            let mut out = String::from("method,bias_sq,bias_sq_se,var,var_se,mean_size,successes,failures\n");
            for m in &report.methods {
                out.push_str(&format!(
                    "{},{},{},{},{},{},{},{}\n",
                    m.method.name(),
                    fmt17(m.bias_sq),
                    fmt17(m.bias_sq_se),
                    fmt17(m.var),
                    fmt17(m.var_se),
                    fmt17(m.mean_size),
                    m.successes,
                    m.failures.len()
                ));
            }
            out
        }
    };
    io::emit(ctx.out.as_deref(), &text)?;
    if let (Format::Csv, Some(out)) = (ctx.format, &ctx.out) {
        io::write_atomic(&io::sibling(out, ".json"), io::to_json(&report).as_bytes())?;
    }

    if let Some(path) = &args.coefficients {
        let names = cfg.spec.feature_names();
        let terms: Vec<String> = std::iter::once("intercept".to_string()).chain(names).collect();
        let mut out = String::from("method,coefficient,truth,mean,var\n");
        let truth = report.truth.to_vec();
        for m in &report.methods {
            let k = terms.len();
            let n = m.draws.len() as f64;
            let mut mean = vec![0.0; k];
            for d in &m.draws {
                for (s, v) in mean.iter_mut().zip(d.to_vec()) {
                    *s += v / n;
                }
            }
            let mut var = vec![0.0; k];
            for d in &m.draws {
                for ((s, v), mu) in var.iter_mut().zip(d.to_vec()).zip(&mean) {
                    *s += (v - mu).powi(2) / (n - 1.0);
                }
            }
            for j in 0..k {
                out.push_str(&format!(
                    "{},{},{},{},{}\n",
                    m.method.name(),
                    terms[j],
                    fmt17(truth[j]),
                    fmt17(mean[j]),
                    fmt17(var[j])
                ));
            }
        }
        io::write_atomic(path, out.as_bytes())?;
    }
    Ok(())
}

fn convergence(ctx: &Context, args: &SimulateArgs) -> Result<()> {
    if args.coefficients.is_some() {
        return Err(CliError::Usage("--coefficients applies to replication studies only".into()));
    }
    let mut cfg: ConvergenceConfig = io::load_config(&args.config)?;
    if let Some(s) = ctx.seed_override {
        cfg.master_seed = s;
    }
    if let Some(r) = args.replications {
        cfg.seeds = r;
    }
    eprintln!("master_seed = {}", cfg.master_seed);
    let report = convergence_study(&cfg)?;
    let text = match ctx.format {
        Format::Json => io::to_json(&report),
        Format::Csv => {
            let mut out = String::from("method,n,median,q10,q90,failures\n");
            for r in &report.rows {
                out.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    r.method.name(),
                    r.n,
                    fmt17(r.median),
                    fmt17(r.q10),
                    fmt17(r.q90),
                    r.failures
                ));
            }
            out.push_str(&format!("cc_plateau,,{},,,\n", fmt17(report.cc_plateau)));
            out
        }
    };
    io::emit(ctx.out.as_deref(), &text)
}

/// A config with an `n_grid` key is a convergence study; anything else is
/// a replication study.
pub fn run(ctx: &Context, args: &SimulateArgs) -> Result<()> {
    if io::config_has_key(&args.config, "n_grid")? {
        convergence(ctx, args)
    } else {
        experiment(ctx, args)
    }
}
