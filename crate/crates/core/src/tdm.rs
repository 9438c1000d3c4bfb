//! Sparse term-document matrix.
//!
//! Stored row-major (one compressed row per vocabulary term) because every
//! consumer — anchor selection, the per-term NNLS solves, residual accounting —
//! walks term rows.

use std::collections::HashSet;
use std::io::{BufRead, Write};

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Non-negative count matrix with `V` term rows and `D` document columns.
#[derive(Debug, Clone, PartialEq)]
pub struct TermDocumentMatrix {
    vocabulary: Vec<String>,
    doc_ids: Vec<String>,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl TermDocumentMatrix {
    /// Builds a matrix from `(term, doc, count)` triplets. Duplicate
    /// coordinates are summed and explicit zeros dropped.
    pub fn from_triplets(
        vocabulary: Vec<String>,
        doc_ids: Vec<String>,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        let n_terms = vocabulary.len();
        let n_docs = doc_ids.len();
        let mut entries: Vec<(usize, usize, f64)> = Vec::new();
        for (i, j, v) in triplets {
            if i >= n_terms || j >= n_docs {
                return Err(Error::Dimension(format!(
                    "entry ({i}, {j}) outside a {n_terms}x{n_docs} matrix"
                )));
            }
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "entry ({i}, {j}) = {v} is not a finite non-negative count"
                )));
            }
            if v != 0.0 {
                entries.push((i, j, v));
            }
        }
        entries.sort_by_key(|a| (a.0, a.1));

        let mut row_ptr = vec![0usize; n_terms + 1];
        let mut col_idx = Vec::with_capacity(entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in entries {
            if last == Some((i, j)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            last = Some((i, j));
            row_ptr[i + 1] += 1;
            col_idx.push(j);
            values.push(v);
        }
        for i in 0..n_terms {
            row_ptr[i + 1] += row_ptr[i];
        }
        let tdm = TermDocumentMatrix {
            vocabulary,
            doc_ids,
            row_ptr,
            col_idx,
            values,
        };
        tdm.validate()?;
        Ok(tdm)
    }

    /// Dense constructor, mostly for tests and synthetic data. `dense[i][j]`
    /// is the count of term `i` in document `j`.
    pub fn from_dense(vocabulary: Vec<String>, doc_ids: Vec<String>, dense: &DMatrix<f64>) -> Result<Self> {
        if dense.nrows() != vocabulary.len() || dense.ncols() != doc_ids.len() {
            return Err(Error::Dimension(format!(
                "dense matrix is {}x{}, labels are {}x{}",
                dense.nrows(),
                dense.ncols(),
                vocabulary.len(),
                doc_ids.len()
            )));
        }
        let triplets = (0..dense.nrows())
            .flat_map(|i| (0..dense.ncols()).map(move |j| (i, j)))
            .map(|(i, j)| (i, j, dense[(i, j)]));
        Self::from_triplets(vocabulary, doc_ids, triplets)
    }

    /// Dense constructor with generated labels `w0, w1, …` and `d0, d1, …`.
    pub fn from_dense_unlabelled(dense: &DMatrix<f64>) -> Result<Self> {
        let vocab = (0..dense.nrows()).map(|i| format!("w{i}")).collect();
        let docs = (0..dense.ncols()).map(|j| format!("d{j}")).collect();
        Self::from_dense(vocab, docs, dense)
    }

    fn validate(&self) -> Result<()> {
        let mut seen = HashSet::with_capacity(self.vocabulary.len());
        for term in &self.vocabulary {
            if !seen.insert(term.as_str()) {
                return Err(Error::InvalidArgument(format!("duplicate vocabulary term `{term}`")));
            }
        }
        let mut seen = HashSet::with_capacity(self.doc_ids.len());
        for id in &self.doc_ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateDocument(id.clone()));
            }
        }
        for i in 0..self.n_terms() {
            if self.row_ptr[i] == self.row_ptr[i + 1] {
                return Err(Error::InvalidArgument(format!(
                    "term `{}` has no occurrences",
                    self.vocabulary[i]
                )));
            }
        }
        Ok(())
    }

    pub fn n_terms(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn n_docs(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn vocabulary(&self) -> &[String] {
        &self.vocabulary
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn term_index(&self, term: &str) -> Option<usize> {
        self.vocabulary.iter().position(|t| t == term)
    }

    /// Column indices and counts of the non-zeros in term row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[range.clone()], &self.values[range])
    }

    /// Iterates `(term, doc, count)` over the non-zeros in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n_terms()).flat_map(move |i| {
            let (cols, vals) = self.row(i);
            cols.iter().zip(vals).map(move |(&j, &v)| (i, j, v))
        })
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    pub fn row_norm(&self, i: usize) -> f64 {
        self.row(i).1.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n_terms()).map(|i| self.row(i).1.iter().sum()).collect()
    }

    pub fn column_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.n_docs()];
        for (&j, &v) in self.col_idx.iter().zip(&self.values) {
            sums[j] += v;
        }
        sums
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut dense = DMatrix::zeros(self.n_terms(), self.n_docs());
        for (i, j, v) in self.iter() {
            dense[(i, j)] = v;
        }
        dense
    }

    /// Dense `T x D` block formed by the given term rows, in the given order.
    pub fn dense_rows(&self, rows: &[usize]) -> DMatrix<f64> {
        let mut block = DMatrix::zeros(rows.len(), self.n_docs());
        for (k, &i) in rows.iter().enumerate() {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                block[(k, j)] = v;
            }
        }
        block
    }

    /// Matrix with the given documents (columns) in the given order; indices
    /// may repeat. Resampled documents get a `#k` suffix to keep ids unique.
    /// Terms left without occurrences are dropped.
    pub fn select_docs(&self, docs: &[usize]) -> Result<Self> {
        let mut positions: Vec<Vec<usize>> = vec![Vec::new(); self.n_docs()];
        for (k, &j) in docs.iter().enumerate() {
            if j >= self.n_docs() {
                return Err(Error::Dimension(format!("document index {j} out of range")));
            }
            positions[j].push(k);
        }
        let mut seen = vec![0usize; self.n_docs()];
        let ids = docs
            .iter()
            .map(|&j| {
                seen[j] += 1;
                if positions[j].len() == 1 {
                    self.doc_ids[j].clone()
                } else {
                    format!("{}#{}", self.doc_ids[j], seen[j])
                }
            })
            .collect();
        let mut triplets = Vec::new();
        let mut keep = Vec::new();
        for i in 0..self.n_terms() {
            let (cols, vals) = self.row(i);
            let start = triplets.len();
            for (&j, &v) in cols.iter().zip(vals) {
                for &k in &positions[j] {
                    triplets.push((keep.len(), k, v));
                }
            }
            if triplets.len() > start {
                keep.push(i);
            }
        }
        let vocab = keep.iter().map(|&i| self.vocabulary[i].clone()).collect();
        Self::from_triplets(vocab, ids, triplets)
    }

    /// Element-wise sum of matrices that share labels and shape.
    pub fn sum<'a>(mats: impl IntoIterator<Item = &'a TermDocumentMatrix>) -> Result<Self> {
        let mut iter = mats.into_iter();
        let first = iter
            .next()
            .ok_or_else(|| Error::InvalidArgument("cannot sum an empty list of matrices".into()))?;
        let mut dense = first.to_dense();
        for m in iter {
            if m.vocabulary != first.vocabulary || m.doc_ids != first.doc_ids {
                return Err(Error::Dimension("summed matrices must share labels".into()));
            }
            for (i, j, v) in m.iter() {
                dense[(i, j)] += v;
            }
        }
        Self::from_dense(first.vocabulary.clone(), first.doc_ids.clone(), &dense)
    }

    /// Writes the counts in MatrixMarket coordinate format (1-based indices).
    /// The field is `integer` when every count is integral, `real` otherwise.
    pub fn write_matrix_market<W: Write>(&self, mut out: W) -> Result<()> {
        let integral = self.values.iter().all(|v| v.fract() == 0.0 && *v < 9.0e15);
        let field = if integral { "integer" } else { "real" };
        writeln!(out, "%%MatrixMarket matrix coordinate {field} general")?;
        writeln!(out, "{} {} {}", self.n_terms(), self.n_docs(), self.nnz())?;
        for (i, j, v) in self.iter() {
            if integral {
                writeln!(out, "{} {} {}", i + 1, j + 1, v as u64)?;
            } else {
                writeln!(out, "{} {} {}", i + 1, j + 1, v)?;
            }
        }
        Ok(())
    }

    /// Reads a MatrixMarket coordinate file. Labels come from the separate
    /// vocabulary and document-id lists, whose lengths must match the header.
    pub fn read_matrix_market<R: BufRead>(input: R, vocabulary: Vec<String>, doc_ids: Vec<String>) -> Result<Self> {
        let mut lines = input.lines().enumerate();
        let (_, banner) = lines
            .next()
            .ok_or(Error::Parse { line: 1, message: "empty MatrixMarket file".into() })?;
        let banner = banner?;
        let lower = banner.to_ascii_lowercase();
        let fields: Vec<&str> = lower.split_whitespace().collect();
        if fields.len() != 5 || fields[0] != "%%matrixmarket" || fields[1] != "matrix" || fields[2] != "coordinate" {
            return Err(Error::Parse { line: 1, message: format!("unsupported banner `{banner}`") });
        }
        let pattern = match fields[3] {
            "integer" | "real" => false,
            "pattern" => true,
            other => return Err(Error::Parse { line: 1, message: format!("unsupported field `{other}`") }),
        };
        if fields[4] != "general" {
            return Err(Error::Parse { line: 1, message: format!("unsupported symmetry `{}`", fields[4]) });
        }

        let mut header: Option<(usize, usize, usize)> = None;
        let mut triplets = Vec::new();
        for (n, line) in lines {
            let line = line?;
            let lineno = n + 1;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('%') {
                continue;
            }
            let parts: Vec<&str> = trimmed.split_whitespace().collect();
            let parse_idx = |s: &str| {
                s.parse::<usize>()
                    .map_err(|e| Error::Parse { line: lineno, message: format!("bad integer `{s}`: {e}") })
            };
            match header {
                None => {
                    if parts.len() != 3 {
                        return Err(Error::Parse { line: lineno, message: "expected `rows cols nnz`".into() });
                    }
                    let h = (parse_idx(parts[0])?, parse_idx(parts[1])?, parse_idx(parts[2])?);
                    if h.0 != vocabulary.len() || h.1 != doc_ids.len() {
                        return Err(Error::Parse {
                            line: lineno,
                            message: format!(
                                "matrix is {}x{} but {} terms and {} documents were supplied",
                                h.0,
                                h.1,
                                vocabulary.len(),
                                doc_ids.len()
                            ),
                        });
                    }
                    triplets.reserve(h.2);
                    header = Some(h);
                }
                Some(_) => {
                    let want = if pattern { 2 } else { 3 };
                    if parts.len() != want {
                        return Err(Error::Parse { line: lineno, message: format!("expected {want} fields") });
                    }
                    let i = parse_idx(parts[0])?;
                    let j = parse_idx(parts[1])?;
                    if i == 0 || j == 0 {
                        return Err(Error::Parse { line: lineno, message: "indices are 1-based".into() });
                    }
                    let v = if pattern {
                        1.0
                    } else {
                        parts[2].parse::<f64>().map_err(|e| Error::Parse {
                            line: lineno,
                            message: format!("bad value `{}`: {e}", parts[2]),
                        })?
                    };
                    triplets.push((i - 1, j - 1, v));
                }
            }
        }
        let (_, _, nnz) = header.ok_or(Error::Parse { line: 1, message: "missing size line".into() })?;
        if triplets.len() != nnz {
            return Err(Error::Parse {
                line: 0,
                message: format!("header declares {nnz} entries, found {}", triplets.len()),
            });
        }
        Self::from_triplets(vocabulary, doc_ids, triplets)
    }
}

/// Reads a label file with one entry per line (blank lines ignored).
pub fn read_labels<R: BufRead>(input: R) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line?;
        let t = line.trim_end_matches(['\r', '\n']);
        if !t.trim().is_empty() {
            out.push(t.to_string());
        }
    }
    Ok(out)
}

pub fn write_labels<W: Write>(mut out: W, labels: &[String]) -> Result<()> {
    for l in labels {
        writeln!(out, "{l}")?;
    }
    Ok(())
}
