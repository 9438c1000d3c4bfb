use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::Result;
use brett_core::{select_anchors, AnchorSet, TermDocumentMatrix};
use serde::{Deserialize, Serialize};

use crate::config::{require, resolve, Overrides};
use crate::io::{load_tdm, read_term_list, write_json, AnchorsFile};
use crate::manifest::{sibling_manifest, RunManifest};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Directory written by `ingest`.
    #[arg(long)]
    tdm: Option<PathBuf>,
    #[arg(long)]
    num_topics: Option<usize>,
    /// Terms that may not serve as anchors, one per line.
    #[arg(long)]
    exclude_terms: Option<PathBuf>,
    /// Output JSON file.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct Settings {
    tdm: Option<PathBuf>,
    num_topics: Option<usize>,
    exclude_terms: Option<PathBuf>,
    out: Option<PathBuf>,
}

pub fn excluded_terms(path: Option<&Path>, manifest: &mut RunManifest) -> Result<BTreeSet<String>> {
    match path {
        Some(p) => {
            manifest.input(p)?;
            read_term_list(p)
        }
        None => Ok(BTreeSet::new()),
    }
}

pub fn anchors_file(anchors: &AnchorSet, tdm: &TermDocumentMatrix) -> AnchorsFile {
    AnchorsFile {
        anchors: anchors.records(tdm),
        excluded_terms: anchors.excluded_terms.iter().cloned().collect(),
    }
}

pub fn run(args: Args) -> Result<()> {
    let mut flags = Overrides::default();
    flags
        .set("tdm", args.tdm)
        .set("num_topics", args.num_topics)
        .set("exclude_terms", args.exclude_terms)
        .set("out", args.out);
    let (s, canonical) = resolve(&Settings::default(), args.config.as_deref(), flags)?;
    let dir = require(s.tdm, "tdm")?;
    let t = require(s.num_topics, "num_topics")?;
    let out = require(s.out, "out")?;

    let mut manifest = RunManifest::new("anchors", canonical, None);
    manifest.input(&dir)?;
    let excluded = excluded_terms(s.exclude_terms.as_deref(), &mut manifest)?;
    let tdm = manifest.stage("read", || load_tdm(&dir))?;
    let anchors = manifest.stage("select", || select_anchors(&tdm, t, &excluded))?;
    write_json(&out, &anchors_file(&anchors, &tdm))?;
    manifest.output(&out);
    manifest.write(&sibling_manifest(&out))?;
    Ok(())
}
