use std::fs::File;
use std::io::{BufReader, Write};
use std::path::PathBuf;

use anyhow::{Context, Result};
use brett_core::corpus::{read_documents_csv, read_documents_jsonl};
use brett_core::{build_design, build_tdm, preprocess, DesignSpec, PreprocessConfig};
use serde::{Deserialize, Serialize};

use super::Contrast;
use crate::config::{require, resolve, usage, Overrides};
use crate::io::{create, read_term_list, save_tdm, DESIGN_FILE};
use crate::manifest::RunManifest;

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Documents as JSONL (one object per line) or CSV with `id` and `text` columns.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Input format; guessed from the extension when omitted.
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Output directory for tdm.mtx, vocabulary.txt, doc_ids.txt and design.csv.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Drop terms with a corpus total below this count.
    #[arg(long)]
    min_term_count: Option<usize>,
    /// Stopword file, one word per line.
    #[arg(long)]
    stopwords: Option<PathBuf>,
    /// Keep letter case.
    #[arg(long)]
    no_lowercase: bool,
    /// Covariates entering the design, in order.
    #[arg(long, value_delimiter = ',')]
    covariates: Option<Vec<String>>,
    /// Covariates to code as categorical even if numeric.
    #[arg(long, value_delimiter = ',')]
    factors: Option<Vec<String>>,
    #[arg(long, value_enum)]
    contrast: Option<Contrast>,
    /// Leave out the intercept column.
    #[arg(long)]
    no_intercept: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Jsonl,
    Csv,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct Settings {
    input: Option<PathBuf>,
    format: Option<Format>,
    out: Option<PathBuf>,
    stopwords_file: Option<PathBuf>,
    preprocess: PreprocessConfig,
    design: DesignSpec,
}

pub fn run(args: Args) -> Result<()> {
    let mut flags = Overrides::default();
    flags
        .set("input", args.input)
        .set("format", args.format)
        .set("out", args.out)
        .set("stopwords_file", args.stopwords)
        .set("preprocess.min_term_count", args.min_term_count)
        .set("preprocess.lowercase", args.no_lowercase.then_some(false))
        .set("design.covariates", args.covariates)
        .set("design.factors", args.factors)
        .set("design.contrast", args.contrast.map(Contrast::scheme))
        .set("design.intercept", args.no_intercept.then_some(false));
    let (mut s, canonical) = resolve(&Settings::default(), args.config.as_deref(), flags)?;
    let input = require(s.input.clone(), "input")?;
    let out = require(s.out.clone(), "out")?;
    let format = match s.format {
        Some(f) => f,
        None => match input.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("json") | Some("ndjson") => Format::Jsonl,
            Some("csv") => Format::Csv,
            _ => return Err(usage(format!("cannot tell the format of {}; pass --format", input.display()))),
        },
    };

    let mut manifest = RunManifest::new("ingest", canonical, None);
    manifest.input(&input)?;
    if let Some(sw) = &s.stopwords_file {
        manifest.input(sw)?;
        s.preprocess.stopword_list.extend(read_term_list(sw)?);
    }

    let docs = manifest.stage("read", || -> Result<_> {
        let reader = BufReader::new(File::open(&input).with_context(|| format!("opening {}", input.display()))?);
        let docs = match format {
            Format::Jsonl => read_documents_jsonl(reader),
            Format::Csv => read_documents_csv(reader),
        };
        docs.with_context(|| format!("reading {}", input.display()))
    })?;
    let docs = manifest.stage("preprocess", || preprocess(&docs, &s.preprocess))?;
    let tdm = manifest.stage("count", || build_tdm(&docs, s.preprocess.min_term_count))?;
    let design = manifest.stage("design", || build_design(&docs, &s.design))?;

    manifest.stage("write", || -> Result<()> {
        save_tdm(&tdm, &out)?;
        let mut w = create(&out.join(DESIGN_FILE))?;
        design.write_csv(&mut w)?;
        w.flush()?;
        Ok(())
    })?;
    for f in ["tdm.mtx", "vocabulary.txt", "doc_ids.txt", DESIGN_FILE] {
        manifest.output(&out.join(f));
    }
    manifest.write(&out.join("manifest.json"))?;
    eprintln!("{} documents, {} terms, {} non-zeros", tdm.n_docs(), tdm.n_terms(), tdm.nnz());
    Ok(())
}
