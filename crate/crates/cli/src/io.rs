//! On-disk formats shared by the commands.

use std::collections::{BTreeSet, HashMap};
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use brett_core::tdm::{read_labels, write_labels};
use brett_core::{AnchorRecord, DesignMatrix, TermDocumentMatrix};
use serde::{Deserialize, Serialize};

use crate::config::usage;

pub const TDM_FILE: &str = "tdm.mtx";
pub const VOCAB_FILE: &str = "vocabulary.txt";
pub const DOC_IDS_FILE: &str = "doc_ids.txt";
pub const DESIGN_FILE: &str = "design.csv";

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?))
}

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

/// Reads `tdm.mtx`, `vocabulary.txt` and `doc_ids.txt` from a directory.
pub fn load_tdm(dir: &Path) -> Result<TermDocumentMatrix> {
    let vocab = read_labels(open(&dir.join(VOCAB_FILE))?)?;
    let ids = read_labels(open(&dir.join(DOC_IDS_FILE))?)?;
    let tdm = TermDocumentMatrix::read_matrix_market(open(&dir.join(TDM_FILE))?, vocab, ids)
        .with_context(|| format!("reading {}", dir.join(TDM_FILE).display()))?;
    Ok(tdm)
}

pub fn save_tdm(tdm: &TermDocumentMatrix, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut w = create(&dir.join(TDM_FILE))?;
    tdm.write_matrix_market(&mut w)?;
    w.flush()?;
    let mut w = create(&dir.join(VOCAB_FILE))?;
    write_labels(&mut w, tdm.vocabulary())?;
    w.flush()?;
    let mut w = create(&dir.join(DOC_IDS_FILE))?;
    write_labels(&mut w, tdm.doc_ids())?;
    w.flush()?;
    Ok(())
}

pub fn read_design(path: &Path) -> Result<DesignMatrix> {
    DesignMatrix::read_csv(open(path)?).with_context(|| format!("reading design {}", path.display()))
}

/// Reorders design rows to follow `doc_ids`.
pub fn align_design(design: DesignMatrix, doc_ids: &[String]) -> Result<DesignMatrix> {
    if design.doc_ids == doc_ids {
        return Ok(design);
    }
    if design.n_rows() != doc_ids.len() {
        return Err(usage(format!(
            "design has {} rows but the model has {} documents",
            design.n_rows(),
            doc_ids.len()
        )));
    }
    let pos: HashMap<&str, usize> = design.doc_ids.iter().enumerate().map(|(i, d)| (d.as_str(), i)).collect();
    let rows = doc_ids
        .iter()
        .map(|d| pos.get(d.as_str()).copied().ok_or_else(|| usage(format!("document `{d}` missing from the design"))))
        .collect::<Result<Vec<_>>>()?;
    Ok(design.select_rows(&rows))
}

/// One term per line.
pub fn read_term_list(path: &Path) -> Result<BTreeSet<String>> {
    Ok(read_labels(open(path)?)?.into_iter().map(|t| t.trim().to_string()).collect())
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_reader(open(path)?).map_err(|e| usage(format!("{}: {e}", path.display())))
}

/// Layout of the anchors JSON written by `anchors` and read by `fit`.
#[derive(Debug, Serialize, Deserialize)]
pub struct AnchorsFile {
    pub anchors: Vec<AnchorRecord>,
    pub excluded_terms: Vec<String>,
}
