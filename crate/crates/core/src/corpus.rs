//! Document ingestion: text cleaning, term counting and covariate design.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::BufRead;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::tdm::TermDocumentMatrix;

/// A covariate value attached to a document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CovariateValue {
    Real(f64),
    Level(String),
}

impl CovariateValue {
    fn as_level(&self) -> String {
        match self {
            CovariateValue::Real(x) => format!("{x}"),
            CovariateValue::Level(s) => s.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    #[serde(default)]
    pub covariates: BTreeMap<String, CovariateValue>,
}

impl Document {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Document {
            id: id.into(),
            text: text.into(),
            covariates: BTreeMap::new(),
        }
    }

    pub fn with_covariate(mut self, name: impl Into<String>, value: CovariateValue) -> Self {
        self.covariates.insert(name.into(), value);
        self
    }
}

/// Text cleaning options.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    pub lowercase: bool,
    pub stopword_list: BTreeSet<String>,
    /// Phrase → merged token, e.g. `"india pale ale" → "india_pale_ale"`.
    pub ngram_merges: BTreeMap<String, String>,
    /// Token → replacement token, e.g. `"ddh" → "double_dry_hopped"`.
    pub acronym_expansions: BTreeMap<String, String>,
    pub banned_terms: BTreeSet<String>,
    pub min_term_count: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            lowercase: true,
            stopword_list: BTreeSet::new(),
            ngram_merges: BTreeMap::new(),
            acronym_expansions: BTreeMap::new(),
            banned_terms: BTreeSet::new(),
            min_term_count: 1,
        }
    }
}

/// Compiled form of a [`PreprocessConfig`].
#[derive(Debug, Clone)]
pub struct Preprocessor {
    lowercase: bool,
    drop: HashSet<String>,
    // keyed on the first token of each phrase; longest phrases first
    merges: HashMap<String, Vec<(Vec<String>, String)>>,
    expansions: HashMap<String, String>,
}

impl Preprocessor {
    pub fn new(cfg: &PreprocessConfig) -> Result<Self> {
        if cfg.min_term_count < 1 {
            return Err(Error::InvalidArgument("min_term_count must be at least 1".into()));
        }
        let norm = |s: &str| -> String {
            if cfg.lowercase {
                s.to_lowercase()
            } else {
                s.to_string()
            }
        };
        let check_token = |tok: &str, what: &str| -> Result<()> {
            if tok.is_empty() || tok.chars().any(|c| !(c.is_alphanumeric() || c == '_')) {
                return Err(Error::InvalidArgument(format!(
                    "{what} `{tok}` must be a single token of letters, digits and underscores"
                )));
            }
            Ok(())
        };

        let mut merges: HashMap<String, Vec<(Vec<String>, String)>> = HashMap::new();
        for (phrase, merged) in &cfg.ngram_merges {
            let merged = norm(merged);
            check_token(&merged, "merged token")?;
            let words = tokenize(&clean_chars(&norm(phrase)));
            if words.len() < 2 {
                return Err(Error::InvalidArgument(format!("n-gram `{phrase}` needs at least two words")));
            }
            merges.entry(words[0].clone()).or_default().push((words, merged));
        }
        for list in merges.values_mut() {
            list.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.0.cmp(&b.0)));
        }

        let mut expansions = HashMap::new();
        for (from, to) in &cfg.acronym_expansions {
            let (from, to) = (norm(from), norm(to));
            check_token(&from, "acronym")?;
            check_token(&to, "acronym expansion")?;
            expansions.insert(from, to);
        }
        for to in expansions.values() {
            if expansions.contains_key(to) {
                return Err(Error::InvalidArgument(format!(
                    "acronym expansion `{to}` is itself expanded; chains are not allowed"
                )));
            }
        }

        let drop = cfg
            .stopword_list
            .iter()
            .chain(&cfg.banned_terms)
            .map(|s| norm(s.trim()))
            .collect();
        Ok(Preprocessor {
            lowercase: cfg.lowercase,
            drop,
            merges,
            expansions,
        })
    }

    /// Cleans one text, returning the surviving tokens joined by single spaces.
    pub fn clean(&self, text: &str) -> String {
        let text = if self.lowercase { text.to_lowercase() } else { text.to_string() };
        let mut tokens = tokenize(&clean_chars(&text));
        // Removing a stopword can bring the words of a phrase together, so
        // expand/merge/filter is repeated until nothing changes; the result is
        // then a fixed point and cleaning is idempotent.
        loop {
            let before = tokens.clone();
            for tok in tokens.iter_mut() {
                if let Some(exp) = self.expansions.get(tok.as_str()) {
                    *tok = exp.clone();
                }
            }
            tokens = self.merge(tokens);
            tokens.retain(|t| !self.drop.contains(t) && !is_number(t));
            if tokens == before {
                break;
            }
        }
        tokens.join(" ")
    }

    fn merge(&self, tokens: Vec<String>) -> Vec<String> {
        if self.merges.is_empty() {
            return tokens;
        }
        let mut out = Vec::with_capacity(tokens.len());
        let mut i = 0;
        'outer: while i < tokens.len() {
            if let Some(cands) = self.merges.get(&tokens[i]) {
                for (words, merged) in cands {
                    if tokens.len() - i >= words.len() && tokens[i..i + words.len()] == words[..] {
                        out.push(merged.clone());
                        i += words.len();
                        continue 'outer;
                    }
                }
            }
            out.push(tokens[i].clone());
            i += 1;
        }
        out
    }
}

// Punctuation (anything but letters, digits, whitespace and the `_` joiner)
// becomes a separator.
fn clean_chars(text: &str) -> String {
    text.chars()
        .map(|c| if c.is_alphanumeric() || c == '_' || c.is_whitespace() { c } else { ' ' })
        .collect()
}

fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_string).collect()
}

fn is_number(tok: &str) -> bool {
    tok.chars().all(|c| c.is_numeric() || c == '_')
}

/// Applies the cleaning rules to every document. Covariates are untouched.
pub fn preprocess(docs: &[Document], cfg: &PreprocessConfig) -> Result<Vec<Document>> {
    let pre = Preprocessor::new(cfg)?;
    Ok(docs
        .par_iter()
        .map(|d| Document {
            id: d.id.clone(),
            text: pre.clean(&d.text),
            covariates: d.covariates.clone(),
        })
        .collect())
}

/// Counts whitespace-separated tokens. The vocabulary is sorted
/// lexicographically and terms with a corpus total below `min_term_count`
/// are dropped.
pub fn build_tdm(docs: &[Document], min_term_count: usize) -> Result<TermDocumentMatrix> {
    let mut seen = HashSet::with_capacity(docs.len());
    for d in docs {
        if !seen.insert(d.id.as_str()) {
            return Err(Error::DuplicateDocument(d.id.clone()));
        }
    }
    let per_doc: Vec<BTreeMap<&str, f64>> = docs
        .par_iter()
        .map(|d| {
            let mut counts = BTreeMap::new();
            for tok in d.text.split_whitespace() {
                *counts.entry(tok).or_insert(0.0) += 1.0;
            }
            counts
        })
        .collect();

    let mut totals: BTreeMap<&str, f64> = BTreeMap::new();
    for counts in &per_doc {
        for (&t, &c) in counts {
            *totals.entry(t).or_insert(0.0) += c;
        }
    }
    let min = min_term_count.max(1) as f64;
    let vocabulary: Vec<&str> = totals.iter().filter(|(_, &c)| c >= min).map(|(&t, _)| t).collect();
    if vocabulary.is_empty() {
        return Err(Error::EmptyVocabulary);
    }
    let index: HashMap<&str, usize> = vocabulary.iter().enumerate().map(|(i, &t)| (t, i)).collect();
    let triplets = per_doc.iter().enumerate().flat_map(|(j, counts)| {
        let index = &index;
        counts.iter().filter_map(move |(t, &c)| index.get(t).map(|&i| (i, j, c)))
    });
    TermDocumentMatrix::from_triplets(
        vocabulary.iter().map(|t| t.to_string()).collect(),
        docs.iter().map(|d| d.id.clone()).collect(),
        triplets.collect::<Vec<_>>(),
    )
}

/// Coding of categorical covariates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ContrastScheme {
    /// Dummy columns for every level but the baseline.
    #[default]
    TreatmentBaseline,
    /// Columns for every level but the omitted one, which is coded `-1`
    /// throughout.
    SumToZero,
}

/// Which covariates enter the design and how.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DesignSpec {
    pub covariates: Vec<String>,
    pub contrast: ContrastScheme,
    /// Baseline (treatment) or omitted (sum-to-zero) level per factor.
    /// Defaults to the first level in sorted order for treatment coding and
    /// the last for sum-to-zero coding.
    pub baseline_levels: BTreeMap<String, String>,
    /// Covariates to treat as categorical even when their values are numeric.
    pub factors: BTreeSet<String>,
    pub intercept: bool,
}

impl Default for DesignSpec {
    fn default() -> Self {
        DesignSpec {
            covariates: Vec::new(),
            contrast: ContrastScheme::TreatmentBaseline,
            baseline_levels: BTreeMap::new(),
            factors: BTreeSet::new(),
            intercept: true,
        }
    }
}

impl DesignSpec {
    pub fn new(covariates: &[&str], contrast: ContrastScheme) -> Self {
        DesignSpec {
            covariates: covariates.iter().map(|s| s.to_string()).collect(),
            contrast,
            ..Default::default()
        }
    }
}

/// Dense `D x P` covariate model matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub values: DMatrix<f64>,
    pub column_names: Vec<String>,
    pub doc_ids: Vec<String>,
    /// `None` when the matrix was loaded without coding metadata.
    pub contrast_scheme: Option<ContrastScheme>,
    pub baseline_levels: BTreeMap<String, String>,
}

impl DesignMatrix {
    /// Wraps raw values, checking shape and full column rank.
    pub fn from_values(values: DMatrix<f64>, column_names: Vec<String>, doc_ids: Vec<String>) -> Result<Self> {
        if values.ncols() != column_names.len() || values.nrows() != doc_ids.len() {
            return Err(Error::Dimension(format!(
                "design is {}x{} with {} column names and {} documents",
                values.nrows(),
                values.ncols(),
                column_names.len(),
                doc_ids.len()
            )));
        }
        linalg::check_full_column_rank(&values).map_err(Error::RankDeficientDesign)?;
        Ok(DesignMatrix {
            values,
            column_names,
            doc_ids,
            contrast_scheme: None,
            baseline_levels: BTreeMap::new(),
        })
    }

    /// Intercept-only design for `n` documents.
    pub fn intercept_only(doc_ids: Vec<String>) -> Self {
        DesignMatrix {
            values: DMatrix::from_element(doc_ids.len(), 1, 1.0),
            column_names: vec!["(Intercept)".into()],
            doc_ids,
            contrast_scheme: None,
            baseline_levels: BTreeMap::new(),
        }
    }

    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.values.ncols()
    }

    pub fn row(&self, j: usize) -> Vec<f64> {
        self.values.row(j).iter().copied().collect()
    }

    /// Keeps the given rows (documents) in order.
    pub fn select_rows(&self, rows: &[usize]) -> DesignMatrix {
        let values = DMatrix::from_fn(rows.len(), self.n_cols(), |r, c| self.values[(rows[r], c)]);
        DesignMatrix {
            values,
            column_names: self.column_names.clone(),
            doc_ids: rows.iter().map(|&r| self.doc_ids[r].clone()).collect(),
            contrast_scheme: self.contrast_scheme,
            baseline_levels: self.baseline_levels.clone(),
        }
    }

    /// Writes `doc_id,<columns…>` CSV.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["doc_id".to_string()];
        header.extend(self.column_names.iter().cloned());
        w.write_record(&header).map_err(csv_err)?;
        for j in 0..self.n_rows() {
            let mut rec = vec![self.doc_ids[j].clone()];
            rec.extend(self.values.row(j).iter().map(|v| format!("{v}")));
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let header = r.headers().map_err(csv_err)?.clone();
        if header.is_empty() || &header[0] != "doc_id" {
            return Err(Error::Parse { line: 1, message: "design CSV must start with a `doc_id` column".into() });
        }
        let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let mut ids = Vec::new();
        let mut data = Vec::new();
        for (n, rec) in r.records().enumerate() {
            let line = n + 2;
            let rec = rec.map_err(csv_err)?;
            if rec.len() != names.len() + 1 {
                return Err(Error::Parse { line, message: format!("expected {} fields", names.len() + 1) });
            }
            ids.push(rec[0].to_string());
            for field in rec.iter().skip(1) {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|e| Error::Parse { line, message: format!("bad number `{field}`: {e}") })?;
                data.push(v);
            }
        }
        let values = DMatrix::from_row_slice(ids.len(), names.len(), &data);
        DesignMatrix::from_values(values, names, ids)
    }
}

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    Error::Parse { line, message: e.to_string() }
}

/// Builds the model matrix: optional intercept, then each covariate in
/// order, categorical ones expanded per the contrast scheme.
pub fn build_design(docs: &[Document], spec: &DesignSpec) -> Result<DesignMatrix> {
    let n = docs.len();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    let mut names = Vec::new();
    let mut baselines = BTreeMap::new();
    if spec.intercept {
        columns.push(vec![1.0; n]);
        names.push("(Intercept)".to_string());
    }

    for cov in &spec.covariates {
        let mut values = Vec::with_capacity(n);
        for d in docs {
            let v = d.covariates.get(cov).ok_or_else(|| Error::MissingCovariate {
                doc: d.id.clone(),
                covariate: cov.clone(),
            })?;
            values.push(v);
        }
        let categorical = spec.factors.contains(cov) || values.iter().any(|v| matches!(v, CovariateValue::Level(_)));
        if !categorical {
            columns.push(
                values
                    .iter()
                    .map(|v| match v {
                        CovariateValue::Real(x) => *x,
                        CovariateValue::Level(_) => unreachable!(),
                    })
                    .collect(),
            );
            names.push(cov.clone());
            continue;
        }
        if !spec.factors.contains(cov) {
            if let Some((d, _)) = docs.iter().zip(&values).find(|(_, v)| matches!(v, CovariateValue::Real(_))) {
                return Err(Error::MixedCovariate { doc: d.id.clone(), covariate: cov.clone() });
            }
        }
        let levels_of_docs: Vec<String> = values.iter().map(|v| v.as_level()).collect();
        let levels: Vec<String> = levels_of_docs.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
        let reference = match spec.baseline_levels.get(cov) {
            Some(b) => {
                if !levels.contains(b) {
                    return Err(Error::InvalidArgument(format!("baseline `{b}` is not a level of `{cov}`")));
                }
                b.clone()
            }
            None => match spec.contrast {
                ContrastScheme::TreatmentBaseline => levels[0].clone(),
                ContrastScheme::SumToZero => levels[levels.len() - 1].clone(),
            },
        };
        baselines.insert(cov.clone(), reference.clone());
        for level in levels.iter().filter(|l| **l != reference) {
            let col = levels_of_docs
                .iter()
                .map(|l| match spec.contrast {
                    ContrastScheme::TreatmentBaseline => f64::from(l == level),
                    ContrastScheme::SumToZero => {
                        if l == level {
                            1.0
                        } else if *l == reference {
                            -1.0
                        } else {
                            0.0
                        }
                    }
                })
                .collect();
            columns.push(col);
            names.push(match spec.contrast {
                ContrastScheme::TreatmentBaseline => format!("{cov}[{level}]"),
                ContrastScheme::SumToZero => format!("{cov}[sum:{level}]"),
            });
        }
    }

    if columns.is_empty() {
        return Err(Error::InvalidArgument("design has no columns".into()));
    }
    let values = DMatrix::from_fn(n, columns.len(), |r, c| columns[c][r]);
    let mut design = DesignMatrix::from_values(values, names, docs.iter().map(|d| d.id.clone()).collect())?;
    design.contrast_scheme = Some(spec.contrast);
    design.baseline_levels = baselines;
    Ok(design)
}

/// Reads one JSON object per line. `id` and `text` are required; every
/// other field becomes a covariate (numbers are real-valued, strings and
/// booleans categorical, `null` means missing).
pub fn read_documents_jsonl<R: BufRead>(input: R) -> Result<Vec<Document>> {
    let mut docs = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        let lineno = n + 1;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line)
            .map_err(|e| Error::Parse { line: lineno, message: e.to_string() })?;
        let obj = value
            .as_object()
            .ok_or_else(|| Error::Parse { line: lineno, message: "expected a JSON object".into() })?;
        let id = match obj.get("id") {
            Some(serde_json::Value::String(s)) => s.clone(),
            Some(serde_json::Value::Number(x)) => x.to_string(),
            _ => return Err(Error::Parse { line: lineno, message: "missing string field `id`".into() }),
        };
        let text = match obj.get("text") {
            Some(serde_json::Value::String(s)) => s.clone(),
            Some(serde_json::Value::Null) | None => String::new(),
            _ => return Err(Error::Parse { line: lineno, message: "field `text` must be a string".into() }),
        };
        let mut doc = Document::new(id, text);
        for (k, v) in obj {
            if k == "id" || k == "text" {
                continue;
            }
            let cv = match v {
                serde_json::Value::Null => continue,
                serde_json::Value::Number(x) => CovariateValue::Real(x.as_f64().unwrap_or(f64::NAN)),
                serde_json::Value::String(s) => CovariateValue::Level(s.clone()),
                serde_json::Value::Bool(b) => CovariateValue::Level(b.to_string()),
                _ => {
                    return Err(Error::Parse {
                        line: lineno,
                        message: format!("covariate `{k}` must be a number, string or boolean"),
                    })
                }
            };
            doc.covariates.insert(k.clone(), cv);
        }
        docs.push(doc);
    }
    Ok(docs)
}

/// Reads a CSV file with `id` and `text` columns; other columns are
/// covariates. Numeric-looking cells are real-valued, empty cells missing.
pub fn read_documents_csv<R: std::io::Read>(input: R) -> Result<Vec<Document>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers().map_err(csv_err)?.clone();
    let id_col = header
        .iter()
        .position(|h| h == "id")
        .ok_or(Error::Parse { line: 1, message: "missing `id` column".into() })?;
    let text_col = header
        .iter()
        .position(|h| h == "text")
        .ok_or(Error::Parse { line: 1, message: "missing `text` column".into() })?;
    let mut docs = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let mut doc = Document::new(&rec[id_col], &rec[text_col]);
        for (c, name) in header.iter().enumerate() {
            if c == id_col || c == text_col {
                continue;
            }
            let cell = rec.get(c).unwrap_or("").trim();
            if cell.is_empty() {
                continue;
            }
            let cv = match cell.parse::<f64>() {
                Ok(x) => CovariateValue::Real(x),
                Err(_) => CovariateValue::Level(cell.to_string()),
            };
            doc.covariates.insert(name.to_string(), cv);
        }
        docs.push(doc);
    }
    Ok(docs)
}
