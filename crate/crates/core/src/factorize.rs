//! Separable NMF given anchor words.
//!
//! With anchor rows `X_†` and the remaining rows `X_‡`, every non-anchor row
//! is written as a non-negative combination of anchor rows (`X_‡ ≈ Y X_†`),
//! one NNLS problem per row. Normalizing the columns of `Φ` to sum to one then
//! fixes the anchor weights `λ_j = 1 / (1 + Σ_i y_ij)`, the non-anchor block
//! `Γ = Y Λ` and the prevalences `Θ = Λ⁻¹ X_†`.

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::anchors::{AnchorRecord, AnchorSet};
use crate::error::{Error, Result};
use crate::nnls::{GramSystem, DEFAULT_TOL_KKT};
use crate::tdm::TermDocumentMatrix;

/// Fitted topic model. `phi` is `V x T` in vocabulary order, `theta` is
/// `T x D`, topic `j` is tied to anchor row `anchors.indices[j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TopicModel {
    pub phi: DMatrix<f64>,
    pub theta: DMatrix<f64>,
    pub lambdas: Vec<f64>,
    pub anchors: AnchorSet,
    /// Topic indices by decreasing `1/λ`, ties in pick order.
    pub importance_rank: Vec<usize>,
    pub vocabulary: Vec<String>,
    pub doc_ids: Vec<String>,
    /// The anchor rows of the term-document matrix (`X_†`, `T x D`).
    pub anchor_counts: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub frobenius_residual: f64,
    pub relative_residual: f64,
    /// Documents with no anchor occurrences, hence an all-zero `theta` column.
    pub empty_documents: Vec<String>,
    pub nnls_iterations: usize,
    pub max_kkt_violation: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    /// KKT tolerance of each NNLS solve, relative to the scale
    /// `max(1, ‖x_i‖ · max_j ‖x_{a_j}‖)` of its gradient.
    pub tol_kkt: f64,
    pub max_iter: Option<usize>,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            tol_kkt: DEFAULT_TOL_KKT,
            max_iter: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedTopic {
    pub topic: usize,
    pub anchor_term: String,
    pub inverse_lambda: f64,
}

pub fn fit(tdm: &TermDocumentMatrix, anchors: &AnchorSet) -> Result<(TopicModel, FitReport)> {
    fit_with(tdm, anchors, &FitOptions::default())
}

/// Non-negative coefficients of every non-anchor row on the anchor rows
/// (`Ŷ`, one row per term, zero rows for anchors).
pub fn anchor_coefficients(
    tdm: &TermDocumentMatrix,
    anchors: &AnchorSet,
    opts: &FitOptions,
) -> Result<(DMatrix<f64>, usize, f64)> {
    anchors.validate(tdm)?;
    let t = anchors.len();
    let block = tdm.dense_rows(&anchors.indices);
    for (k, &a) in anchors.indices.iter().enumerate() {
        if block.row(k).iter().all(|&v| v == 0.0) {
            return Err(Error::DegenerateAnchor { term: tdm.vocabulary()[a].clone() });
        }
    }
    let gram = &block * block.transpose();
    let max_anchor_norm = (0..t).map(|k| gram[(k, k)]).fold(0.0, f64::max).sqrt();
    let system = GramSystem::from_gram(gram);

    let mut is_anchor = vec![false; tdm.n_terms()];
    for &a in &anchors.indices {
        is_anchor[a] = true;
    }
    let rows: Vec<usize> = (0..tdm.n_terms()).filter(|&i| !is_anchor[i]).collect();
    let solved: Vec<(usize, Vec<f64>, usize, f64)> = rows
        .par_iter()
        .map(|&i| {
            let (cols, vals) = tdm.row(i);
            let mut c = vec![0.0; t];
            let mut btb = 0.0;
            for (&d, &v) in cols.iter().zip(vals) {
                btb += v * v;
                let col = block.column(d);
                for k in 0..t {
                    c[k] += v * col[k];
                }
            }
            let scale = (btb.sqrt() * max_anchor_norm).max(1.0);
            let sol = system.solve(&c, btb, opts.tol_kkt * scale, opts.max_iter).map_err(|e| Error::NnlsRow {
                row: i,
                term: Some(tdm.vocabulary()[i].clone()),
                source: Box::new(e),
            })?;
            Ok((i, sol.x, sol.iterations, sol.kkt_violation / scale))
        })
        .collect::<Result<_>>()?;

    let mut y = DMatrix::zeros(tdm.n_terms(), t);
    let mut iterations = 0;
    let mut max_kkt = 0.0_f64;
    for (i, x, it, kkt) in solved {
        for k in 0..t {
            y[(i, k)] = x[k];
        }
        iterations += it;
        max_kkt = max_kkt.max(kkt);
    }
    Ok((y, iterations, max_kkt))
}

pub fn fit_with(tdm: &TermDocumentMatrix, anchors: &AnchorSet, opts: &FitOptions) -> Result<(TopicModel, FitReport)> {
    let (y, nnls_iterations, max_kkt_violation) = anchor_coefficients(tdm, anchors, opts)?;
    let t = anchors.len();
    let block = tdm.dense_rows(&anchors.indices);

    let lambdas: Vec<f64> = (0..t).map(|j| 1.0 / (1.0 + y.column(j).sum())).collect();
    let mut phi = DMatrix::zeros(tdm.n_terms(), t);
    for i in 0..tdm.n_terms() {
        for j in 0..t {
            phi[(i, j)] = y[(i, j)] * lambdas[j];
        }
    }
    for (j, &a) in anchors.indices.iter().enumerate() {
        phi[(a, j)] = lambdas[j];
    }
    let theta = DMatrix::from_fn(t, tdm.n_docs(), |j, d| block[(j, d)] / lambdas[j]);

    let frobenius_residual = residual_norm(tdm, &phi, &theta);
    let norm = tdm.frobenius_norm();
    let empty_documents = (0..tdm.n_docs())
        .filter(|&d| theta.column(d).iter().all(|&v| v == 0.0))
        .map(|d| tdm.doc_ids()[d].clone())
        .collect();

    let model = TopicModel {
        importance_rank: importance_order(&lambdas),
        phi,
        theta,
        lambdas,
        anchors: anchors.clone(),
        vocabulary: tdm.vocabulary().to_vec(),
        doc_ids: tdm.doc_ids().to_vec(),
        anchor_counts: block,
    };
    let report = FitReport {
        frobenius_residual,
        relative_residual: if norm > 0.0 { frobenius_residual / norm } else { 0.0 },
        empty_documents,
        nnls_iterations,
        max_kkt_violation,
    };
    Ok((model, report))
}

/// `‖X − Φ Θ‖_F`, accumulated one term row at a time so the `V x D`
/// product never materializes. Only the non-zero entries of each `Φ` row
/// contribute to its reconstruction.
pub fn residual_norm(tdm: &TermDocumentMatrix, phi: &DMatrix<f64>, theta: &DMatrix<f64>) -> f64 {
    let t = phi.ncols();
    let d = tdm.n_docs();
    let total: f64 = (0..tdm.n_terms())
        .into_par_iter()
        .map(|i| {
            let mut recon = vec![0.0; d];
            for k in 0..t {
                let w = phi[(i, k)];
                if w == 0.0 {
                    continue;
                }
                for (r, &th) in recon.iter_mut().zip(theta.row(k).iter()) {
                    *r += w * th;
                }
            }
            let (cols, vals) = tdm.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                recon[j] -= v;
            }
            recon.iter().map(|r| r * r).sum::<f64>()
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum();
    total.sqrt()
}

fn importance_order(lambdas: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..lambdas.len()).collect();
    // stable: equal 1/λ keep pick order
    order.sort_by(|&a, &b| (1.0 / lambdas[b]).total_cmp(&(1.0 / lambdas[a])));
    order
}

/// Topics by decreasing `1/λ` (the λ-criterion), ties in anchor pick order.
pub fn rank_topics(model: &TopicModel) -> Vec<RankedTopic> {
    model
        .importance_rank
        .iter()
        .map(|&j| RankedTopic {
            topic: j,
            anchor_term: model.anchor_term(j).to_string(),
            inverse_lambda: 1.0 / model.lambdas[j],
        })
        .collect()
}

/// The `k` heaviest terms of a topic, ties in vocabulary order.
pub fn top_words(model: &TopicModel, topic: usize, k: usize) -> Result<Vec<(String, f64)>> {
    if topic >= model.num_topics() {
        return Err(Error::InvalidArgument(format!("topic {topic} out of range")));
    }
    let v = model.vocabulary.len();
    if k < 1 || k > v {
        return Err(Error::InvalidArgument(format!("k must be in 1..={v}")));
    }
    let col = model.phi.column(topic);
    let mut order: Vec<usize> = (0..v).collect();
    order.sort_by(|&a, &b| col[b].total_cmp(&col[a]));
    Ok(order
        .into_iter()
        .take(k)
        .map(|i| (model.vocabulary[i].clone(), col[i]))
        .collect())
}

#[derive(Serialize, Deserialize)]
struct AnchorsFile {
    anchors: Vec<AnchorRecord>,
    excluded_terms: Vec<String>,
}

impl TopicModel {
    pub fn num_topics(&self) -> usize {
        self.lambdas.len()
    }

    pub fn anchor_term(&self, topic: usize) -> &str {
        &self.vocabulary[self.anchors.indices[topic]]
    }

    /// Resolves a topic given either its anchor term or a 0-based index.
    pub fn resolve_topic(&self, key: &str) -> Result<usize> {
        if let Some(j) = (0..self.num_topics()).find(|&j| self.anchor_term(j) == key) {
            return Ok(j);
        }
        match key.parse::<usize>() {
            Ok(j) if j < self.num_topics() => Ok(j),
            _ => Err(Error::InvalidArgument(format!("no topic `{key}`"))),
        }
    }

    /// Writes `phi.csv`, `theta.csv`, `lambdas.json`, `anchors.json` and
    /// `anchor_counts.csv` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let labels: Vec<String> = (0..self.num_topics()).map(|j| self.anchor_term(j).to_string()).collect();

        let mut w = csv::Writer::from_writer(BufWriter::new(fs::File::create(dir.join("phi.csv"))?));
        let mut header = vec!["term".to_string()];
        header.extend(labels.iter().cloned());
        w.write_record(&header).map_err(csv_err)?;
        for (i, term) in self.vocabulary.iter().enumerate() {
            let mut rec = vec![term.clone()];
            rec.extend(self.phi.row(i).iter().map(|v| format!("{v}")));
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush()?;

        write_topic_by_doc(&dir.join("theta.csv"), &labels, &self.doc_ids, &self.theta)?;
        write_topic_by_doc(&dir.join("anchor_counts.csv"), &labels, &self.doc_ids, &self.anchor_counts)?;

        let mut f = BufWriter::new(fs::File::create(dir.join("lambdas.json"))?);
        serde_json::to_writer_pretty(&mut f, &self.lambdas)?;
        writeln!(f)?;
        f.flush()?;

        let anchors = AnchorsFile {
            anchors: self
                .anchors
                .indices
                .iter()
                .zip(&self.anchors.pick_residuals)
                .enumerate()
                .map(|(order, (&index, &residual))| AnchorRecord {
                    term: self.vocabulary[index].clone(),
                    index,
                    pick_order: order + 1,
                    residual: residual.is_finite().then_some(residual),
                })
                .collect(),
            excluded_terms: self.anchors.excluded_terms.iter().cloned().collect(),
        };
        let mut f = BufWriter::new(fs::File::create(dir.join("anchors.json"))?);
        serde_json::to_writer_pretty(&mut f, &anchors)?;
        writeln!(f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_reader(BufReader::new(fs::File::open(dir.join("phi.csv"))?));
        let t = r.headers().map_err(csv_err)?.len().saturating_sub(1);
        let mut vocabulary = Vec::new();
        let mut phi_data = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(csv_err)?;
            vocabulary.push(rec[0].to_string());
            for f in rec.iter().skip(1) {
                phi_data.push(parse_num(f)?);
            }
        }
        let phi = DMatrix::from_row_slice(vocabulary.len(), t, &phi_data);
        let (doc_ids, theta) = read_topic_by_doc(&dir.join("theta.csv"), t)?;
        let (_, anchor_counts) = read_topic_by_doc(&dir.join("anchor_counts.csv"), t)?;
        let lambdas: Vec<f64> = serde_json::from_reader(BufReader::new(fs::File::open(dir.join("lambdas.json"))?))?;
        let anchors: AnchorsFile = serde_json::from_reader(BufReader::new(fs::File::open(dir.join("anchors.json"))?))?;
        if lambdas.len() != t || anchors.anchors.len() != t {
            return Err(Error::Dimension("model files disagree on the number of topics".into()));
        }
        let anchor_set = AnchorSet {
            indices: anchors.anchors.iter().map(|a| a.index).collect(),
            pick_residuals: anchors.anchors.iter().map(|a| a.residual.unwrap_or(f64::NAN)).collect(),
            excluded_terms: anchors.excluded_terms.into_iter().collect(),
        };
        Ok(TopicModel {
            importance_rank: importance_order(&lambdas),
            phi,
            theta,
            lambdas,
            anchors: anchor_set,
            vocabulary,
            doc_ids,
            anchor_counts,
        })
    }
}

fn write_topic_by_doc(path: &Path, labels: &[String], doc_ids: &[String], m: &DMatrix<f64>) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(fs::File::create(path)?));
    let mut header = vec!["topic".to_string()];
    header.extend(doc_ids.iter().cloned());
    w.write_record(&header).map_err(csv_err)?;
    for (j, label) in labels.iter().enumerate() {
        let mut rec = vec![label.clone()];
        rec.extend(m.row(j).iter().map(|v| format!("{v}")));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn read_topic_by_doc(path: &Path, t: usize) -> Result<(Vec<String>, DMatrix<f64>)> {
    let mut r = csv::Reader::from_reader(BufReader::new(fs::File::open(path)?));
    let doc_ids: Vec<String> = r.headers().map_err(csv_err)?.iter().skip(1).map(str::to_string).collect();
    let mut data = Vec::new();
    let mut rows = 0;
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        rows += 1;
        for f in rec.iter().skip(1) {
            data.push(parse_num(f)?);
        }
    }
    if rows != t || data.len() != t * doc_ids.len() {
        return Err(Error::Dimension(format!("{} has an unexpected shape", path.display())));
    }
    Ok((doc_ids.clone(), DMatrix::from_row_slice(t, doc_ids.len(), &data)))
}

fn parse_num(s: &str) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|e| Error::Parse { line: 0, message: format!("bad number `{s}`: {e}") })
}

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    Error::Parse { line, message: e.to_string() }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `Φ` columns (0.5, 0, 0.25, 0.25) and (0, 0.5, 0.25, 0.25) with a
    /// positive `Θ`; `X = ΦΘ` exactly.
    pub(crate) fn exact_example() -> (TermDocumentMatrix, DMatrix<f64>, DMatrix<f64>) {
        let phi = DMatrix::from_row_slice(4, 2, &[0.5, 0.0, 0.0, 0.5, 0.25, 0.25, 0.25, 0.25]);
        let theta = DMatrix::from_row_slice(2, 6, &[
            3.0, 1.0, 4.0, 1.5, 9.0, 2.0, //
            6.0, 5.0, 3.0, 5.0, 8.0, 9.0,
        ]);
        let x = &phi * &theta;
        (TermDocumentMatrix::from_dense_unlabelled(&x).unwrap(), phi, theta)
    }

    #[test]
    fn recovers_exact_factorization() {
        let (x, phi, theta) = exact_example();
        let (model, report) = fit(&x, &AnchorSet::from_indices(vec![0, 1])).unwrap();
        assert!(report.frobenius_residual <= 1e-8, "{}", report.frobenius_residual);
        assert!((&model.phi - &phi).amax() < 1e-10);
        assert!((&model.theta - &theta).amax() < 1e-10);
        for &l in &model.lambdas {
            assert!((l - 0.5).abs() < 1e-12);
        }
        // both 1/λ = 2; pick order decides
        let ranked = rank_topics(&model);
        assert_eq!(ranked.iter().map(|r| r.topic).collect::<Vec<_>>(), vec![0, 1]);
        let top = top_words(&model, 0, 3).unwrap();
        let weights: Vec<f64> = top.iter().map(|w| w.1).collect();
        for (w, want) in weights.iter().zip([0.5, 0.25, 0.25]) {
            assert!((w - want).abs() < 1e-12);
        }
        assert_eq!(top[0].0, "w0");
        assert_eq!((top[1].0.as_str(), top[2].0.as_str()), ("w2", "w3"));
    }

    #[test]
    fn unattributable_rows_give_unit_lambdas() {
        // w2 only occurs in a document without anchors
        let x = DMatrix::from_row_slice(3, 3, &[2.0, 0.0, 0.0, 0.0, 3.0, 0.0, 0.0, 0.0, 5.0]);
        let tdm = TermDocumentMatrix::from_dense_unlabelled(&x).unwrap();
        let (model, report) = fit(&tdm, &AnchorSet::from_indices(vec![0, 1])).unwrap();
        assert_eq!(model.lambdas, vec![1.0, 1.0]);
        assert_eq!(model.phi.row(2).iter().copied().collect::<Vec<_>>(), vec![0.0, 0.0]);
        assert_eq!(model.phi[(0, 0)], 1.0);
        assert_eq!(model.phi[(1, 1)], 1.0);
        assert_eq!(report.empty_documents, vec!["d2".to_string()]);
        assert_eq!(model.theta.column(2).iter().copied().collect::<Vec<_>>(), vec![0.0, 0.0]);
    }

    #[test]
    fn ranks_by_inverse_lambda() {
        let (x, _, _) = exact_example();
        let (mut model, _) = fit(&x, &AnchorSet::from_indices(vec![0, 1])).unwrap();
        model.lambdas = vec![0.5, 0.25];
        model.importance_rank = importance_order(&model.lambdas);
        let ranked = rank_topics(&model);
        assert_eq!(ranked[0].topic, 1);
        assert_eq!(ranked[0].inverse_lambda, 4.0);
        assert_eq!(ranked[1].inverse_lambda, 2.0);
    }

    #[test]
    fn top_words_bounds() {
        let (x, _, _) = exact_example();
        let (model, _) = fit(&x, &AnchorSet::from_indices(vec![0, 1])).unwrap();
        assert!(top_words(&model, 2, 1).is_err());
        assert!(top_words(&model, 0, 0).is_err());
        assert_eq!(top_words(&model, 1, 4).unwrap().len(), 4);
    }

    #[test]
    fn save_load_round_trip() {
        let (x, _, _) = exact_example();
        let (model, _) = fit(&x, &AnchorSet::from_indices(vec![0, 1])).unwrap();
        let dir = std::env::temp_dir().join(format!("brett-model-{}", std::process::id()));
        model.save(&dir).unwrap();
        let back = TopicModel::load(&dir).unwrap();
        fs::remove_dir_all(&dir).ok();
        assert_eq!(back.phi, model.phi);
        assert_eq!(back.theta, model.theta);
        assert_eq!(back.lambdas, model.lambdas);
        assert_eq!(back.anchors.indices, model.anchors.indices);
        assert_eq!(back.anchor_counts, model.anchor_counts);
        assert_eq!(back.resolve_topic("w1").unwrap(), 1);
        assert_eq!(back.resolve_topic("0").unwrap(), 0);
    }
}
