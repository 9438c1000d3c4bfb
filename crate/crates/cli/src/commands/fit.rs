use std::path::PathBuf;

use anyhow::Result;
use brett_core::nnls::DEFAULT_TOL_KKT;
use brett_core::{fit_with, rank_topics, select_anchors, top_words, AnchorSet, FitOptions};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::anchors::excluded_terms;
use crate::config::{require, resolve, usage, Overrides};
use crate::io::{load_tdm, read_json, write_json, AnchorsFile};
use crate::manifest::RunManifest;

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Directory written by `ingest`.
    #[arg(long)]
    tdm: Option<PathBuf>,
    /// Select this many anchors before fitting.
    #[arg(long, conflicts_with = "anchors")]
    num_topics: Option<usize>,
    /// Use the anchors in this JSON file (from `anchors`).
    #[arg(long)]
    anchors: Option<PathBuf>,
    #[arg(long)]
    exclude_terms: Option<PathBuf>,
    /// Model directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// NNLS KKT tolerance, relative to the gradient scale of each row.
    #[arg(long)]
    tol_kkt: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Number of top words per topic in topics.json.
    #[arg(long)]
    top_words: Option<usize>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default)]
struct Settings {
    tdm: Option<PathBuf>,
    num_topics: Option<usize>,
    anchors: Option<PathBuf>,
    exclude_terms: Option<PathBuf>,
    out: Option<PathBuf>,
    tol_kkt: f64,
    max_iter: Option<usize>,
    top_words: usize,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            tdm: None,
            num_topics: None,
            anchors: None,
            exclude_terms: None,
            out: None,
            tol_kkt: DEFAULT_TOL_KKT,
            max_iter: None,
            top_words: 10,
        }
    }
}

pub fn run(args: Args) -> Result<()> {
    let mut flags = Overrides::default();
    flags
        .set("tdm", args.tdm)
        .set("num_topics", args.num_topics)
        .set("anchors", args.anchors)
        .set("exclude_terms", args.exclude_terms)
        .set("out", args.out)
        .set("tol_kkt", args.tol_kkt)
        .set("max_iter", args.max_iter)
        .set("top_words", args.top_words);
    let (s, canonical) = resolve(&Settings::default(), args.config.as_deref(), flags)?;
    let dir = require(s.tdm.clone(), "tdm")?;
    let out = require(s.out.clone(), "out")?;

    let mut manifest = RunManifest::new("fit", canonical, None);
    manifest.input(&dir)?;
    let excluded = excluded_terms(s.exclude_terms.as_deref(), &mut manifest)?;
    let tdm = manifest.stage("read", || load_tdm(&dir))?;

    let anchors = match (&s.anchors, s.num_topics) {
        (Some(path), None) => {
            manifest.input(path)?;
            let file: AnchorsFile = read_json(path)?;
            let mut indices = Vec::with_capacity(file.anchors.len());
            for rec in &file.anchors {
                let i = tdm
                    .term_index(&rec.term)
                    .ok_or_else(|| usage(format!("anchor `{}` is not in the vocabulary", rec.term)))?;
                indices.push(i);
            }
            let mut set = AnchorSet::from_indices(indices);
            set.pick_residuals = file.anchors.iter().map(|r| r.residual.unwrap_or(f64::NAN)).collect();
            set.excluded_terms = excluded;
            set
        }
        (None, Some(t)) => manifest.stage("anchors", || select_anchors(&tdm, t, &excluded))?,
        _ => return Err(usage("give exactly one of `num_topics` and `anchors`")),
    };

    let opts = FitOptions { tol_kkt: s.tol_kkt, max_iter: s.max_iter };
    let (model, report) = manifest.stage("fit", || fit_with(&tdm, &anchors, &opts))?;

    manifest.stage("write", || -> Result<()> {
        model.save(&out)?;
        write_json(&out.join("fit_report.json"), &report)?;
        let k = s.top_words.min(model.vocabulary.len());
        let mut topics = Vec::new();
        for (rank, r) in rank_topics(&model).into_iter().enumerate() {
            let words: Vec<_> = top_words(&model, r.topic, k)?
                .into_iter()
                .map(|(term, weight)| json!({ "term": term, "weight": weight }))
                .collect();
            topics.push(json!({
                "rank": rank + 1,
                "topic": r.topic,
                "anchor_term": r.anchor_term,
                "lambda": model.lambdas[r.topic],
                "inverse_lambda": r.inverse_lambda,
                "top_words": words,
            }));
        }
        write_json(&out.join("topics.json"), &topics)
    })?;
    for f in ["phi.csv", "theta.csv", "anchor_counts.csv", "lambdas.json", "anchors.json", "fit_report.json", "topics.json"] {
        manifest.output(&out.join(f));
    }
    manifest.write(&out.join("manifest.json"))?;
    eprintln!(
        "{} topics, relative residual {:.3e}, {} empty documents",
        model.num_topics(),
        report.relative_residual,
        report.empty_documents.len()
    );
    Ok(())
}
