use std::fmt::Write as _;
use std::io::Write;
use std::path::PathBuf;

use anyhow::{Context, Result};
use brett_core::regress::CoefficientSummary;
use brett_core::{rank_topics, top_words, TopicModel};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{require, resolve, usage, Overrides};
use crate::io::{create, read_json};
use crate::manifest::{sibling_manifest, RunManifest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Text,
    Json,
}

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Model directory written by `fit`.
    #[arg(long)]
    model: Option<PathBuf>,
    /// coefficients.json written by `regress`.
    #[arg(long)]
    coefficients: Option<PathBuf>,
    #[arg(long)]
    top_words: Option<usize>,
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Output file; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default)]
struct Settings {
    model: Option<PathBuf>,
    coefficients: Option<PathBuf>,
    top_words: usize,
    format: Format,
    out: Option<PathBuf>,
}

impl Default for Settings {
    fn default() -> Self {
        Settings { model: None, coefficients: None, top_words: 10, format: Format::Text, out: None }
    }
}

#[derive(Deserialize)]
struct CoefficientFile {
    method: String,
    coefficients: Vec<CoefficientSummary>,
}

fn num(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into())
}

pub fn run(args: Args) -> Result<()> {
    let mut flags = Overrides::default();
    flags
        .set("model", args.model)
        .set("coefficients", args.coefficients)
        .set("top_words", args.top_words)
        .set("format", args.format)
        .set("out", args.out);
    let (s, canonical) = resolve(&Settings::default(), args.config.as_deref(), flags)?;
    let model_dir = require(s.model.clone(), "model")?;
    if s.top_words == 0 {
        return Err(usage("top_words must be at least 1"));
    }

    let mut manifest = RunManifest::new("report", canonical, None);
    manifest.input(&model_dir)?;
    let model = TopicModel::load(&model_dir).with_context(|| format!("loading model {}", model_dir.display()))?;
    let k = s.top_words.min(model.vocabulary.len());
    let coefs: Option<CoefficientFile> = match &s.coefficients {
        Some(p) => {
            manifest.input(p)?;
            Some(read_json(p)?)
        }
        None => None,
    };

    let mut topics = Vec::new();
    for (rank, r) in rank_topics(&model).into_iter().enumerate() {
        topics.push((rank + 1, r.clone(), top_words(&model, r.topic, k)?));
    }

    let rendered = match s.format {
        Format::Json => {
            let v: Vec<Value> = topics
                .iter()
                .map(|(rank, r, words)| {
                    json!({
                        "rank": rank,
                        "topic": r.topic,
                        "anchor_term": r.anchor_term,
                        "inverse_lambda": r.inverse_lambda,
                        "top_words": words.iter().map(|(t, _)| t).collect::<Vec<_>>(),
                    })
                })
                .collect();
            let mut doc = json!({ "documents": model.doc_ids.len(), "terms": model.vocabulary.len(), "topics": v });
            if let Some(c) = &coefs {
                doc["method"] = json!(c.method);
                doc["coefficients"] = serde_json::to_value(&c.coefficients)?;
            }
            serde_json::to_string_pretty(&doc)? + "\n"
        }
        Format::Text => {
            let mut txt = String::new();
            writeln!(
                txt,
                "{} topics over {} terms and {} documents, ranked by 1/lambda\n",
                model.num_topics(),
                model.vocabulary.len(),
                model.doc_ids.len()
            )?;
            for (rank, r, words) in &topics {
                let words: Vec<&str> = words.iter().map(|(t, _)| t.as_str()).collect();
                writeln!(txt, "{rank:>3}. {} (1/lambda = {:.4}): {}", r.anchor_term, r.inverse_lambda, words.join(" "))?;
            }
            if let Some(c) = &coefs {
                writeln!(txt, "\ncoefficients ({})", c.method)?;
                writeln!(
                    txt,
                    "{:<20} {:<10} {:<24} {:>10} {:>10} {:>10} {:>10} {:>10} sig",
                    "topic", "part", "term", "estimate", "se", "lower", "upper", "p"
                )?;
                for row in &c.coefficients {
                    let part = serde_json::to_value(row.component)?;
                    writeln!(
                        txt,
                        "{:<20} {:<10} {:<24} {:>10} {:>10} {:>10} {:>10} {:>10} {}",
                        row.topic,
                        part.as_str().unwrap_or(""),
                        row.name,
                        num(Some(row.estimate)),
                        num(row.std_error),
                        num(row.lower),
                        num(row.upper),
                        num(row.p_value),
                        row.significance.as_deref().unwrap_or("-")
                    )?;
                }
            }
            txt
        }
    };

    match &s.out {
        Some(path) => {
            let mut w = create(path)?;
            w.write_all(rendered.as_bytes())?;
            w.flush()?;
            manifest.output(path);
            manifest.write(&sibling_manifest(path))?;
        }
        None => {
            print!("{rendered}");
            eprintln!("{}", serde_json::to_string(&manifest)?);
        }
    }
    Ok(())
}
