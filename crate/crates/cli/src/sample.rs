//! Streaming subsampling of a CSV. Each pass reads the file once; only the
//! pilot sample and the output writer are held at any time.

use std::path::PathBuf;

use rand::distr::Open01;
use rand::Rng;
use serde::Serialize;

use lcc_core::numerics::sigmoid;
use lcc_core::rng::{self, Stage};
use lcc_core::sampling::{acceptance_probability, balanced_rates};
use lcc_core::{fit_logistic, FitConfig, ModelParams, ObservationSet, SamplingScheme};

use crate::args::{Format, SampleArgs, SchemeKind};
use crate::error::{CliError, Result};
use crate::io::{self, fmt17, open_csv};
use crate::Context;

#[derive(Debug, Clone, Serialize)]
pub struct SampleSummary {
    pub seed: u64,
    pub input: PathBuf,
    pub feature_names: Vec<String>,
    pub scheme: SamplingScheme,
    /// `file`, `wcc` or `none`.
    pub pilot_source: String,
    pub rows_read: usize,
    pub passes: usize,
    pub realized_size: usize,
    pub expected_size: f64,
    pub acceptance_rate: f64,
    /// Mean of `|y - p_pilot(x)|` over the input, local case-control only.
    pub abar: Option<f64>,
    /// Add to a fit that ignores the `offset` column; also written as a
    /// coefficient file beside the output.
    pub adjustment: ModelParams,
}

struct Counts {
    n: usize,
    n1: usize,
}

fn count(args: &SampleArgs) -> Result<Counts> {
    let mut src = open_csv(&args.data)?;
    let mut c = Counts { n: 0, n1: 0 };
    src.for_each(|_, row| {
        c.n += 1;
        c.n1 += row.y as usize;
        Ok(())
    })?;
    if c.n == 0 {
        return Err(CliError::parse(args.data.display(), "no data rows"));
    }
    Ok(c)
}

/// Weighted case-control pilot with equal expected class counts.
fn wcc_pilot(ctx: &Context, args: &SampleArgs, counts: &Counts) -> Result<ModelParams> {
    let (a0, a1) = balanced_rates(counts.n1, counts.n - counts.n1, args.pilot_size as f64)?;
    let mut u = rng::stream(rng::derive_seed(ctx.seed, &[Stage::Pilot as u64]));
    let mut src = open_csv(&args.data)?;
    let p = src.layout.p();
    let (mut feats, mut labels, mut weights, mut offsets) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    src.for_each(|_, row| {
        let a = if row.y { a1 } else { a0 };
        let draw: f64 = u.sample(Open01);
        if draw <= a {
            feats.extend_from_slice(&row.x);
            labels.push(row.y);
            weights.push(row.weight / a);
            offsets.push(row.offset);
        }
        Ok(())
    })?;
    if labels.is_empty() {
        return Err(lcc_core::Error::EmptySubsample.into());
    }
    let data = ObservationSet::new(feats, p, labels)?
        .with_weights(weights)?
        .with_offsets(offsets)?;
    Ok(fit_logistic(&data, &FitConfig::default())?)
}

fn lcc_mass(args: &SampleArgs, pilot: &ModelParams) -> Result<f64> {
    let mut src = open_csv(&args.data)?;
    let mut total = 0.0;
    src.for_each(|_, row| {
        let eta = pilot.linear_predictor(&row.x);
        total += if row.y { sigmoid(-eta) } else { sigmoid(eta) };
        Ok(())
    })?;
    Ok(total)
}

fn usage(msg: &str) -> CliError {
    CliError::Usage(msg.to_string())
}

pub fn run(ctx: &Context, args: &SampleArgs) -> Result<SampleSummary> {
    let out = ctx
        .out
        .clone()
        .ok_or_else(|| usage("sample needs --out for the subsample CSV"))?;
    let lcc = args.scheme == SchemeKind::Lcc;
    if !lcc && (args.pilot.is_some() || args.c.is_some() || args.retain_cases) {
        return Err(usage("--pilot, --c and --retain-cases apply to the lcc scheme only"));
    }
    if (args.a0.is_some() || args.a1.is_some()) && !matches!(args.scheme, SchemeKind::Cc | SchemeKind::Wcc) {
        return Err(usage("--a0 and --a1 apply to the cc and wcc schemes only"));
    }
    if args.rate.is_some() && args.scheme != SchemeKind::Uniform {
        return Err(usage("--rate applies to the uniform scheme only"));
    }
    if args.a0.is_some() != args.a1.is_some() {
        return Err(usage("give both --a0 and --a1"));
    }
    if args.target_size.is_some() && (args.c.is_some() || args.a0.is_some() || args.rate.is_some()) {
        return Err(usage("--target-size replaces --c, --a0/--a1 and --rate"));
    }

    let header = open_csv(&args.data)?;
    let layout = header.layout.clone();
    drop(header);
    let p = layout.p();
    let mut passes = 1;
    let needs_counts = match args.scheme {
        SchemeKind::Lcc => args.pilot.is_none(),
        SchemeKind::Cc | SchemeKind::Wcc => args.a0.is_none(),
        SchemeKind::Uniform => args.rate.is_none(),
    };
    let counts = if needs_counts {
        passes += 1;
        Some(count(args)?)
    } else {
        None
    };

    let mut pilot_source = "none";
    let scheme = match args.scheme {
        SchemeKind::Lcc => {
            let pilot = match &args.pilot {
                Some(path) => {
                    pilot_source = "file";
                    io::read_coefficients(path, Some(&layout.feature_names()))?
                }
                None => {
                    pilot_source = "wcc";
                    passes += 1;
                    wcc_pilot(ctx, args, counts.as_ref().expect("counted"))?
                }
            };
            let c = match args.target_size {
                Some(t) => {
                    passes += 1;
                    t as f64 / lcc_mass(args, &pilot)?
                }
                None => args.c.unwrap_or(1.0),
            };
            SamplingScheme::Lcc {
                pilot,
                c,
                retain_cases: args.retain_cases,
            }
        }
        SchemeKind::Cc | SchemeKind::Wcc => {
            let (a0, a1) = match (args.a0, args.a1) {
                (Some(a0), Some(a1)) => (a0, a1),
                _ => {
                    let c = counts.as_ref().expect("counted");
                    let target = args
                        .target_size
                        .ok_or_else(|| usage("cc and wcc need --target-size or --a0/--a1"))?;
                    balanced_rates(c.n1, c.n - c.n1, target as f64)?
                }
            };
            if args.scheme == SchemeKind::Cc {
                SamplingScheme::Cc { a0, a1 }
            } else {
                SamplingScheme::Wcc { a0, a1 }
            }
        }
        SchemeKind::Uniform => {
            let rate = match args.rate {
                Some(r) => r,
                None => {
                    let c = counts.as_ref().expect("counted");
                    let target = args
                        .target_size
                        .ok_or_else(|| usage("uniform needs --target-size or --rate"))?;
                    (target as f64 / c.n as f64).min(1.0)
                }
            };
            SamplingScheme::Uniform { rate }
        }
    };
    scheme.validate()?;
    if let SamplingScheme::Lcc { pilot, .. } = &scheme {
        pilot.check_dim(p)?;
    }

    // the selection pass
    let mut u = rng::stream(rng::derive_seed(ctx.seed, &[Stage::Uniforms as u64]));
    let mut writer = io::AtomicCsv::create(&out)?;
    let mut header_row = layout.headers.clone();
    let (has_w, has_o) = (layout.weight.is_some(), layout.offset.is_some());
    if !has_w {
        header_row.push("weight".into());
    }
    if !has_o {
        header_row.push("offset".into());
    }
    writer.write(&header_row)?;
    let mut rows_read = 0usize;
    let mut realized = 0usize;
    let mut expected = 0.0;
    let mut a_sum = 0.0;
    let mut src = open_csv(&args.data)?;
    src.for_each(|record, row| {
        rows_read += 1;
        let acc = acceptance_probability(&scheme, &row.x, row.y);
        expected += acc.prob;
        if let SamplingScheme::Lcc { pilot, .. } = &scheme {
            let eta = pilot.linear_predictor(&row.x);
            a_sum += if row.y { sigmoid(-eta) } else { sigmoid(eta) };
        }
        let draw: f64 = u.sample(Open01);
        if draw <= acc.prob {
            realized += 1;
            let w = fmt17(acc.weight * row.weight);
            let o = fmt17(scheme.offset(&row.x) + row.offset);
            let mut fields: Vec<String> = record.iter().map(str::to_string).collect();
            match layout.weight {
                Some(i) => fields[i] = w,
                None => fields.push(w),
            }
            match layout.offset {
                Some(i) => fields[i] = o,
                None => fields.push(o),
            }
            writer.write(&fields)?;
        }
        Ok(())
    })?;
    if rows_read == 0 {
        return Err(CliError::parse(args.data.display(), "no data rows"));
    }
    if realized == 0 {
        return Err(lcc_core::Error::EmptySubsample.into());
    }
    writer.commit()?;

    let summary = SampleSummary {
        seed: ctx.seed,
        input: args.data.clone(),
        feature_names: layout.feature_names(),
        adjustment: scheme.adjustment(p),
        abar: lcc.then(|| a_sum / rows_read as f64),
        scheme,
        pilot_source: pilot_source.to_string(),
        rows_read,
        passes,
        realized_size: realized,
        expected_size: expected,
        acceptance_rate: realized as f64 / rows_read as f64,
    };
    let (text, suffix) = match ctx.format {
        Format::Json => (io::to_json(&summary), ".summary.json"),
        Format::Csv => (summary_csv(&summary), ".summary.csv"),
    };
    let path = args.summary.clone().unwrap_or_else(|| io::sibling(&out, suffix));
    io::write_atomic(&path, text.as_bytes())?;
    io::write_atomic(
        &io::sibling(&out, ".adjustment.csv"),
        io::render_coefficients(&summary.feature_names, &summary.adjustment).as_bytes(),
    )?;
    eprintln!(
        "kept {realized} of {rows_read} rows (expected {expected:.1}); summary in {}",
        path.display()
    );
    Ok(summary)
}

fn summary_csv(s: &SampleSummary) -> String {
    let mut out = String::from("key,value\n");
    let mut kv = |k: &str, v: String| out.push_str(&format!("{k},{v}\n"));
    kv("seed", s.seed.to_string());
    kv("input", s.input.display().to_string());
    kv("scheme", serde_json::to_value(&s.scheme).expect("scheme")["kind"].as_str().unwrap_or("").to_string());
    kv("pilot_source", s.pilot_source.clone());
    kv("rows_read", s.rows_read.to_string());
    kv("passes", s.passes.to_string());
    kv("realized_size", s.realized_size.to_string());
    kv("expected_size", fmt17(s.expected_size));
    kv("acceptance_rate", fmt17(s.acceptance_rate));
    if let Some(a) = s.abar {
        kv("abar", fmt17(a));
    }
    let names: Vec<String> = std::iter::once("intercept".to_string())
        .chain(s.feature_names.iter().cloned())
        .collect();
    match &s.scheme {
        SamplingScheme::Lcc { pilot, c, retain_cases } => {
            kv("c", fmt17(*c));
            kv("retain_cases", retain_cases.to_string());
            for (n, v) in names.iter().zip(pilot.to_vec()) {
                kv(&format!("pilot.{n}"), fmt17(v));
            }
        }
        SamplingScheme::Cc { a0, a1 } | SamplingScheme::Wcc { a0, a1 } => {
            kv("a0", fmt17(*a0));
            kv("a1", fmt17(*a1));
        }
        SamplingScheme::Uniform { rate } => kv("rate", fmt17(*rate)),
    }
    for (n, v) in names.iter().zip(s.adjustment.to_vec()) {
        kv(&format!("adjustment.{n}"), fmt17(v));
    }
    out
}
