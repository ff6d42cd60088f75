

use serde::Serialize;

use lcc_core::numerics::sigmoid;
use lcc_core::populations::{
    average_precision, equal_class_bias, population_theta_star, precision_recall, theta_cc_limit, Integration, PrPoint,
};
use lcc_core::rng::{self, Stage};
use lcc_core::{Error, ModelParams, PopulationSpec};

use crate::args::{Format, OracleArgs};
use crate::error::{CliError, Result};
use crate::io::{self, fmt17};
use crate::Context;

const ORACLE_TOL: f64 = 1e-12;
pub const PLOT_ROWS: usize = 512;

#[derive(Debug, Serialize)]
pub struct CcLimit {
    pub b: f64,
    pub params: ModelParams,
    pub param_se: Vec<f64>,
}

#[derive(Debug, Serialize)]
pub struct Named {
    pub name: String,
    pub value: f64,
}

#[derive(Debug, Serialize)]
pub struct OracleReport {
    pub seed: u64,
    pub spec: PopulationSpec,
    pub feature_names: Vec<String>,
    pub exact: bool,
    pub case_rate: f64,
    pub theta_star: ModelParams,
    pub theta_star_se: Vec<f64>,
    pub equal_class_bias: f64,
    pub cc_limits: Vec<CcLimit>,
    pub marginal_odds_ratios: Vec<Named>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub average_precision: Vec<Named>,
}

fn terms(names: &[String]) -> Vec<String> {
    std::iter::once("intercept".to_string()).chain(names.iter().cloned()).collect()
}

fn render_csv(r: &OracleReport) -> String {
    let mut out = String::from("quantity,b,term,value\n");
    let mut line = |q: &str, b: Option<f64>, term: &str, v: f64| {
        let b = b.map(fmt17).unwrap_or_default();
        out.push_str(&format!("{q},{b},{term},{}\n", fmt17(v)));
    };
    line("case_rate", None, "", r.case_rate);
    line("equal_class_bias", None, "", r.equal_class_bias);
    let names = terms(&r.feature_names);
    for (t, (v, se)) in names.iter().zip(r.theta_star.to_vec().iter().zip(&r.theta_star_se)) {
        line("theta_star", None, t, *v);
        line("theta_star_se", None, t, *se);
    }
    for cc in &r.cc_limits {
        for (t, v) in names.iter().zip(cc.params.to_vec()) {
            line("theta_cc", Some(cc.b), t, v);
        }
    }
    for or in &r.marginal_odds_ratios {
        line("marginal_odds_ratio", None, &or.name, or.value);
    }
    for ap in &r.average_precision {
        line("average_precision", None, &ap.name, ap.value);
    }
    out
}

fn plot_csv(pop: &lcc_core::Population, star: &ModelParams) -> Result<String> {
    let mut out = String::from("x,f,f_theta_star,p,p_theta_star\n");
    for i in 0..PLOT_ROWS {
        let x = (i as f64 + 0.5) / PLOT_ROWS as f64;
        let f = pop.true_log_odds(&[x])?;
        let g = star.linear_predictor(&[x]);
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            fmt17(x),
            fmt17(f),
            fmt17(g),
            fmt17(sigmoid(f)),
            fmt17(sigmoid(g))
        ));
    }
    Ok(out)
}

/// Precision at the first curve point reaching each recall level.
fn on_recall_grid(curve: &[PrPoint], levels: usize) -> Vec<(f64, f64)> {
    (1..=levels)
        .map(|i| {
            let r = i as f64 / levels as f64;
            let pt = curve
                .iter()
                .find(|p| p.recall >= r - 1e-12)
                .unwrap_or_else(|| curve.last().expect("non-empty curve"));
            (r, pt.precision)
        })
        .collect()
}

pub fn run(ctx: &Context, args: &OracleArgs) -> Result<()> {
    let spec = io::load_spec(&args.spec)?;
    let pop = spec.compile()?;
    let mut opts = Integration {
        mc_seed: ctx.seed,
        ..Integration::default()
    };
    if let Some(d) = args.draws {
        opts.mc_draws = d;
    }
    opts.validate()?;
    let names = spec.feature_names();

    let star = population_theta_star(&pop, &opts, ORACLE_TOL)?;
    let b_eq = equal_class_bias(&pop, &opts)?;
    let bs = if args.b.is_empty() { vec![b_eq] } else { args.b.clone() };
    let cc_limits = bs
        .iter()
        .map(|&b| {
            theta_cc_limit(&pop, &opts, b, ORACLE_TOL).map(|f| CcLimit {
                b,
                params: f.params,
                param_se: f.param_se,
            })
        })
        .collect::<Result<Vec<_>, Error>>()?;

    let mut marginal_odds_ratios = Vec::new();
    if pop.is_discrete() {
        for (j, name) in names.iter().enumerate() {
            match pop.marginal_odds_ratio(j) {
                Ok(v) => marginal_odds_ratios.push(Named {
                    name: name.clone(),
                    value: v,
                }),
                Err(Error::NonBinary(_)) => {}
                Err(e) => return Err(e.into()),
            }
        }
    }

    if let Some(path) = &args.plot {
        if pop.dim() != 1 {
            return Err(CliError::Usage("--plot needs a one-dimensional population".into()));
        }
        io::write_atomic(path, plot_csv(&pop, &star.params)?.as_bytes())?;
    } else if let (PopulationSpec::Steplogit { .. }, Some(out)) = (&spec, &ctx.out) {
        io::write_atomic(&io::sibling(out, ".plot.csv"), plot_csv(&pop, &star.params)?.as_bytes())?;
    }

    let mut aps = Vec::new();
    if let Some(path) = &args.pr {
        let test = pop.sample(args.pr_test_size, &mut rng::stream(rng::derive_seed(ctx.seed, &[Stage::Comparison as u64])))?;
        let mut out = String::from("curve,recall,precision\n");
        let curves = [("theta_star", &star.params), ("theta_cc", &cc_limits[0].params)];
        for (name, theta) in curves {
            let curve = precision_recall(theta, &test)?;
            aps.push(Named {
                name: name.to_string(),
                value: average_precision(&curve),
            });
            for (r, p) in on_recall_grid(&curve, 100) {
                out.push_str(&format!("{name},{},{}\n", fmt17(r), fmt17(p)));
            }
        }
        io::write_atomic(path, out.as_bytes())?;
    }

    let report = OracleReport {
        seed: ctx.seed,
        feature_names: names,
        exact: star.exact,
        case_rate: pop.case_rate(&opts)?,
        theta_star: star.params,
        theta_star_se: star.param_se,
        equal_class_bias: b_eq,
        cc_limits,
        marginal_odds_ratios,
        average_precision: aps,
        spec,
    };
    let text = match ctx.format {
        Format::Json => io::to_json(&report),
        Format::Csv => render_csv(&report),
    };
    io::emit(ctx.out.as_deref(), &text)
}

