use std::io::Write;
use std::path::PathBuf;

use anyhow::{Context, Result};
use brett_core::regress::{
    beta_fit, bootstrap_fitted, bootstrap_model, design_levels, predict_beta, BetaFit, BetaOptions, BootstrapConfig,
    CoefficientSummary, NormalizedPrevalence, PrecisionLink, PrevalenceMode,
};
use brett_core::{DesignMatrix, TopicModel};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{require, resolve, usage, Overrides};
use crate::io::{align_design, create, read_design, write_json};
use crate::manifest::RunManifest;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    OlsBootstrap,
    Beta,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Link {
    Log,
    Logit,
}

impl From<Link> for PrecisionLink {
    fn from(l: Link) -> Self {
        match l {
            Link::Log => PrecisionLink::Log,
            Link::Logit => PrecisionLink::Logit,
        }
    }
}

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Model directory written by `fit`.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Covariate design CSV (`doc_id` column first).
    #[arg(long)]
    design: Option<PathBuf>,
    /// Design for the beta precision model; intercept-only when omitted.
    #[arg(long)]
    precision_design: Option<PathBuf>,
    #[arg(long, value_enum)]
    method: Option<Method>,
    /// Anchor term or 0-based topic index; all topics when omitted.
    #[arg(long)]
    topic: Option<String>,
    /// Bootstrap draws; 0 gives point estimates only.
    #[arg(long)]
    boot: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    precision_link: Option<Link>,
    /// Coverage of the beta prediction intervals in the plot data.
    #[arg(long)]
    level: Option<f64>,
    /// Drop documents without anchor occurrences before a beta fit.
    #[arg(long)]
    drop_empty: bool,
    /// Output directory for coefficients.json and plot_data.csv.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default)]
struct Settings {
    model: Option<PathBuf>,
    design: Option<PathBuf>,
    precision_design: Option<PathBuf>,
    method: Method,
    topic: Option<String>,
    boot: usize,
    alpha: f64,
    seed: u64,
    precision_link: PrecisionLink,
    level: f64,
    drop_empty_documents: bool,
    out: Option<PathBuf>,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            model: None,
            design: None,
            precision_design: None,
            method: Method::OlsBootstrap,
            topic: None,
            boot: 10_000,
            alpha: 0.05,
            seed: 1,
            precision_link: PrecisionLink::Log,
            level: 0.95,
            drop_empty_documents: false,
            out: None,
        }
    }
}

pub fn run(args: Args) -> Result<()> {
    let mut flags = Overrides::default();
    flags
        .set("model", args.model)
        .set("design", args.design)
        .set("precision_design", args.precision_design)
        .set("method", args.method)
        .set("topic", args.topic)
        .set("boot", args.boot)
        .set("alpha", args.alpha)
        .set("seed", args.seed)
        .set("precision_link", args.precision_link.map(PrecisionLink::from))
        .set("level", args.level)
        .set("drop_empty_documents", args.drop_empty.then_some(true))
        .set("out", args.out);
    let (s, canonical) = resolve(&Settings::default(), args.config.as_deref(), flags)?;
    let model_dir = require(s.model.clone(), "model")?;
    let design_path = require(s.design.clone(), "design")?;
    let out = require(s.out.clone(), "out")?;
    if !(s.alpha > 0.0 && s.alpha < 1.0) {
        return Err(usage(format!("alpha must be in (0, 1), got {}", s.alpha)));
    }
    if !(s.level > 0.0 && s.level < 1.0) {
        return Err(usage(format!("level must be in (0, 1), got {}", s.level)));
    }

    let seed = (s.method == Method::OlsBootstrap).then_some(s.seed);
    let mut manifest = RunManifest::new("regress", canonical, seed);
    manifest.input(&model_dir)?;
    manifest.input(&design_path)?;
    let model = manifest.stage("read", || -> Result<_> {
        TopicModel::load(&model_dir).with_context(|| format!("loading model {}", model_dir.display()))
    })?;
    let z = align_design(read_design(&design_path)?, &model.doc_ids)?;
    let zp = match &s.precision_design {
        Some(p) => {
            manifest.input(p)?;
            align_design(read_design(p)?, &model.doc_ids)?
        }
        None => DesignMatrix::intercept_only(model.doc_ids.clone()),
    };
    let topics: Vec<usize> = match &s.topic {
        Some(key) => vec![model.resolve_topic(key)?],
        None => (0..model.num_topics()).collect(),
    };

    let (table, plot) = match s.method {
        Method::OlsBootstrap => manifest.stage("bootstrap", || ols_bootstrap(&model, &z, &topics, &s))?,
        Method::Beta => manifest.stage("beta", || beta(&model, &z, &zp, &topics, &s))?,
    };

    std::fs::create_dir_all(&out)?;
    write_json(&out.join("coefficients.json"), &table)?;
    let mut w = create(&out.join("plot_data.csv"))?;
    w.write_all(plot.as_bytes())?;
    w.flush()?;
    manifest.output(&out.join("coefficients.json"));
    manifest.output(&out.join("plot_data.csv"));
    manifest.write(&out.join("manifest.json"))?;
    Ok(())
}

fn keep(rows: Vec<CoefficientSummary>, labels: &[String]) -> Vec<CoefficientSummary> {
    rows.into_iter().filter(|r| labels.contains(&r.topic)).collect()
}

fn plot_header(z: &DesignMatrix) -> Result<csv::Writer<Vec<u8>>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = ["topic", "design_level", "n_docs"].iter().map(|s| s.to_string()).collect();
    header.extend(z.column_names.iter().cloned());
    header.extend(["fitted", "lower", "upper", "precision"].iter().map(|s| s.to_string()));
    w.write_record(&header)?;
    Ok(w)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    Ok(String::from_utf8(w.into_inner().map_err(|e| anyhow::anyhow!("{e}"))?)?)
}

fn ols_bootstrap(
    model: &TopicModel,
    z: &DesignMatrix,
    topics: &[usize],
    s: &Settings,
) -> Result<(serde_json::Value, String)> {
    let cfg = BootstrapConfig { draws: s.boot, alpha: s.alpha, seed: s.seed };
    let result = bootstrap_model(model, z, &cfg)?;
    let labels: Vec<String> = topics.iter().map(|&t| result.topic_labels[t].clone()).collect();

    let mut w = plot_header(z)?;
    for &t in topics {
        for (i, lvl) in design_levels(z, z).iter().enumerate() {
            let (fitted, band) = bootstrap_fitted(&result, t, &lvl.mean_row);
            let mut rec = vec![result.topic_labels[t].clone(), i.to_string(), lvl.n_docs.to_string()];
            rec.extend(lvl.mean_row.iter().map(|v| format!("{v}")));
            rec.extend([format!("{fitted}"), opt(band.map(|b| b.0)), opt(band.map(|b| b.1)), String::new()]);
            w.write_record(&rec)?;
        }
    }
    let table = json!({
        "method": "ols-bootstrap",
        "prevalence_mode": PrevalenceMode::PerTopicRows,
        "topics": labels,
        "draws": s.boot,
        "alpha": s.alpha,
        "seed": s.seed,
        "redrawn": result.redrawn,
        "coefficients": keep(result.summary(), &labels),
    });
    Ok((table, finish(w)?))
}

fn beta(
    model: &TopicModel,
    zm: &DesignMatrix,
    zp: &DesignMatrix,
    topics: &[usize],
    s: &Settings,
) -> Result<(serde_json::Value, String)> {
    let prev = NormalizedPrevalence::from_model(model, PrevalenceMode::PerDocumentColumns)?;
    let opts = BetaOptions {
        precision_link: s.precision_link,
        drop_empty_documents: s.drop_empty_documents,
        ..BetaOptions::default()
    };
    let fits: Vec<BetaFit> = topics
        .par_iter()
        .map(|&t| beta_fit(&prev, zm, zp, t, &opts))
        .collect::<brett_core::Result<_>>()?;

    let mut w = plot_header(zm)?;
    let mut rows = Vec::new();
    let mut diagnostics = Vec::new();
    for fit in &fits {
        if !fit.converged {
            eprintln!("warning: beta regression for `{}` did not converge", fit.topic_label);
        }
        rows.extend(fit.summary(1.0 - s.alpha));
        diagnostics.push(json!({
            "topic": fit.topic_label,
            "converged": fit.converged,
            "iterations": fit.iterations,
            "log_likelihood": fit.log_likelihood,
            "n_obs": fit.n_obs,
            "boundary_squeezed": fit.boundary_squeezed,
            "dropped_documents": fit.dropped_documents,
        }));
        for (i, lvl) in design_levels(zm, zp).iter().enumerate() {
            let p = predict_beta(fit, &lvl.mean_row, &lvl.precision_row, s.level);
            let mut rec = vec![fit.topic_label.clone(), i.to_string(), lvl.n_docs.to_string()];
            rec.extend(lvl.mean_row.iter().map(|v| format!("{v}")));
            rec.extend([p.mean, p.lower, p.upper, p.precision].iter().map(|v| format!("{v}")));
            w.write_record(&rec)?;
        }
    }
    let table = json!({
        "method": "beta",
        "prevalence_mode": PrevalenceMode::PerDocumentColumns,
        "topics": fits.iter().map(|f| f.topic_label.clone()).collect::<Vec<_>>(),
        "alpha": s.alpha,
        "mean_link": "logit",
        "precision_link": s.precision_link,
        "prediction_level": s.level,
        "fits": diagnostics,
        "coefficients": rows,
    });
    Ok((table, finish(w)?))
}
