use std::io::Write;
use std::path::PathBuf;

use anyhow::Result;
use brett_core::simulate::{run_study, SimConfig};
use serde_json::json;

use crate::config::{require, resolve, Overrides};
use crate::io::{create, write_json};
use crate::manifest::{sibling_manifest, RunManifest};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Study configuration (JSON); unset keys take the desk-scale defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Per-replicate results CSV; mse_table.csv and pseudo_truth.json go next to it.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replicates: Option<usize>,
    /// Start from the full-size grid instead of the desk-scale one.
    #[arg(long)]
    paper_scale: bool,
}

pub fn run(args: Args) -> Result<()> {
    let out = require(args.out, "out")?;
    let defaults = if args.paper_scale { SimConfig::paper_scale() } else { SimConfig::desk_scale() };
    let mut flags = Overrides::default();
    flags.set("seed", args.seed).set("replicates", args.replicates);
    let (cfg, canonical) = resolve(&defaults, args.config.as_deref(), flags)?;
    cfg.validate()?;
    if args.paper_scale {
        eprintln!(
            "warning: the full grid runs {} replicates of up to {} words per document; expect a long batch job",
            cfg.replicates,
            cfg.words_grid.iter().max().copied().unwrap_or(0)
        );
    }

    let mut manifest = RunManifest::new("simulate", canonical, Some(cfg.seed));
    if let Some(c) = &args.config {
        manifest.input(c)?;
    }
    let result = manifest.stage("study", || run_study(&cfg))?;

    let mse_path = out.with_file_name("mse_table.csv");
    let truth_path = out.with_file_name("pseudo_truth.json");
    let mut w = create(&out)?;
    result.write_records(&mut w)?;
    w.flush()?;
    let mut w = create(&mse_path)?;
    result.write_mse_table(&mut w)?;
    w.flush()?;
    write_json(&truth_path, &json!({ "mechanism": result.mechanism, "cells": result.pseudo_truth }))?;
    for p in [&out, &mse_path, &truth_path] {
        manifest.output(p);
    }
    manifest.write(&sibling_manifest(&out))?;
    Ok(())
}
