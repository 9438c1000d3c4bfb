//! Anchor-word selection by successive projection.
//!
//! The successive projection algorithm is the pivot order of Householder QR
//! with column pivoting applied to `Xᵀ`: each step takes the term row with
//! the largest distance to the span of the rows already taken. The QR is
//! carried out implicitly on the sparse rows. Only the first `T` reflectors
//! are formed, and the trailing column norms are downdated with the
//! coefficients `q_k · x_j`, falling back to an exact recomputation when the
//! downdate loses too many digits.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tdm::TermDocumentMatrix;

/// Pivot residuals below this fraction of the largest row norm stop the
/// selection.
pub const RANK_TOL: f64 = 1e-10;

/// Residuals within this relative distance of the maximum count as ties;
/// the lowest row index wins.
const TIE_TOL: f64 = 1e-12;

// Squared residuals that have shrunk below this fraction of the squared row
// norm are recomputed from scratch (LAPACK's `tol3z` criterion).
const DOWNDATE_GUARD: f64 = 1.490_116_119_384_765_6e-8;

/// Selected anchor rows in pick order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorSet {
    pub indices: Vec<usize>,
    /// Distance of each anchor row to the span of the earlier anchors at the
    /// moment it was picked.
    pub pick_residuals: Vec<f64>,
    pub excluded_terms: BTreeSet<String>,
}

impl AnchorSet {
    /// Anchors chosen by hand (or read back from disk); residuals unknown.
    pub fn from_indices(indices: Vec<usize>) -> Self {
        let n = indices.len();
        AnchorSet {
            indices,
            pick_residuals: vec![f64::NAN; n],
            excluded_terms: BTreeSet::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Checks distinctness, bounds and exclusions against `tdm`.
    pub fn validate(&self, tdm: &TermDocumentMatrix) -> Result<()> {
        if self.indices.is_empty() {
            return Err(Error::InvalidArgument("anchor set is empty".into()));
        }
        let mut seen = BTreeSet::new();
        for &i in &self.indices {
            if i >= tdm.n_terms() {
                return Err(Error::Dimension(format!("anchor index {i} out of range")));
            }
            if !seen.insert(i) {
                return Err(Error::InvalidArgument(format!("anchor index {i} repeated")));
            }
            if self.excluded_terms.contains(&tdm.vocabulary()[i]) {
                return Err(Error::InvalidArgument(format!(
                    "anchor `{}` is excluded",
                    tdm.vocabulary()[i]
                )));
            }
        }
        Ok(())
    }

    /// JSON-friendly records: term, row index, pick order and residual.
    pub fn records(&self, tdm: &TermDocumentMatrix) -> Vec<AnchorRecord> {
        self.indices
            .iter()
            .zip(&self.pick_residuals)
            .enumerate()
            .map(|(order, (&index, &residual))| AnchorRecord {
                term: tdm.vocabulary()[index].clone(),
                index,
                pick_order: order + 1,
                residual: residual.is_finite().then_some(residual),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorRecord {
    pub term: String,
    pub index: usize,
    pub pick_order: usize,
    pub residual: Option<f64>,
}

/// Householder reflectors accumulated over the rows picked so far.
struct Reflectors {
    dim: usize,
    // v_k is zero before position k; stored from k onward.
    vectors: Vec<Vec<f64>>,
    betas: Vec<f64>,
}

impl Reflectors {
    fn new(dim: usize) -> Self {
        Reflectors {
            dim,
            vectors: Vec::new(),
            betas: Vec::new(),
        }
    }

    fn len(&self) -> usize {
        self.vectors.len()
    }

    /// `x ← H_k ⋯ H_1 x`.
    fn apply_transpose(&self, x: &mut [f64]) {
        for (k, (v, &beta)) in self.vectors.iter().zip(&self.betas).enumerate() {
            let tail = &mut x[k..];
            let s: f64 = v.iter().zip(tail.iter()).map(|(a, b)| a * b).sum();
            let s = beta * s;
            for (t, a) in tail.iter_mut().zip(v) {
                *t -= s * a;
            }
        }
    }

    /// Forms the next reflector from `w = Qᵀ x` (already transformed) and
    /// returns the new orthonormal basis vector `q_k = H_1 ⋯ H_k e_k`, or
    /// `None` when the tail of `w` vanishes.
    fn push(&mut self, w: &[f64]) -> Option<Vec<f64>> {
        let k = self.len();
        let tail = &w[k..];
        let norm = tail.iter().map(|a| a * a).sum::<f64>().sqrt();
        if !(norm > 0.0) {
            return None;
        }
        let alpha = if tail[0] >= 0.0 { -norm } else { norm };
        let mut v = tail.to_vec();
        v[0] -= alpha;
        let vtv: f64 = v.iter().map(|a| a * a).sum();
        if !(vtv > 0.0) {
            return None;
        }
        self.vectors.push(v);
        self.betas.push(2.0 / vtv);

        let mut q = vec![0.0; self.dim];
        q[k] = 1.0;
        for (i, (v, &beta)) in self.vectors.iter().zip(&self.betas).enumerate().rev() {
            let tail = &mut q[i..];
            let s: f64 = v.iter().zip(tail.iter()).map(|(a, b)| a * b).sum();
            let s = beta * s;
            for (t, a) in tail.iter_mut().zip(v) {
                *t -= s * a;
            }
        }
        Some(q)
    }
}

fn dense_row(tdm: &TermDocumentMatrix, i: usize) -> Vec<f64> {
    let mut x = vec![0.0; tdm.n_docs()];
    let (cols, vals) = tdm.row(i);
    for (&j, &v) in cols.iter().zip(vals) {
        x[j] = v;
    }
    x
}

fn sparse_dot(tdm: &TermDocumentMatrix, i: usize, q: &[f64]) -> f64 {
    let (cols, vals) = tdm.row(i);
    cols.iter().zip(vals).map(|(&j, &v)| v * q[j]).sum()
}

/// Squared distance of row `i` to the span of the current basis, computed
/// by applying every reflector.
fn exact_residual_sq(tdm: &TermDocumentMatrix, refl: &Reflectors, i: usize) -> f64 {
    let mut x = dense_row(tdm, i);
    refl.apply_transpose(&mut x);
    x[refl.len()..].iter().map(|a| a * a).sum()
}

/// Tracks downdated squared residuals for a set of candidate rows.
struct ResidualTracker<'a> {
    tdm: &'a TermDocumentMatrix,
    candidates: Vec<usize>,
    norms_sq: Vec<f64>,
    residual_sq: Vec<f64>,
}

impl<'a> ResidualTracker<'a> {
    fn new(tdm: &'a TermDocumentMatrix, candidates: Vec<usize>) -> Self {
        let norms_sq: Vec<f64> = candidates
            .iter()
            .map(|&i| tdm.row(i).1.iter().map(|v| v * v).sum())
            .collect();
        ResidualTracker {
            tdm,
            candidates,
            residual_sq: norms_sq.clone(),
            norms_sq,
        }
    }

    /// Downdates every candidate with the new basis vector `q`.
    fn downdate(&mut self, q: &[f64], refl: &Reflectors) {
        let tdm = self.tdm;
        self.residual_sq
            .par_iter_mut()
            .zip(self.candidates.par_iter())
            .zip(self.norms_sq.par_iter())
            .for_each(|((r, &i), &n2)| {
                if *r == 0.0 {
                    return;
                }
                let c = sparse_dot(tdm, i, q);
                *r -= c * c;
                if *r <= DOWNDATE_GUARD * n2 {
                    *r = exact_residual_sq(tdm, refl, i).max(0.0);
                }
            });
    }
}

/// Picks `num_topics` anchor rows by successive projection, skipping rows
/// whose term is in `excluded_terms`.
pub fn select_anchors(
    tdm: &TermDocumentMatrix,
    num_topics: usize,
    excluded_terms: &BTreeSet<String>,
) -> Result<AnchorSet> {
    let max_t = tdm.n_terms().min(tdm.n_docs());
    if num_topics < 1 || num_topics > max_t {
        return Err(Error::InvalidArgument(format!(
            "number of topics must be in 1..={max_t}, got {num_topics}"
        )));
    }
    let candidates: Vec<usize> = (0..tdm.n_terms())
        .filter(|&i| !excluded_terms.contains(&tdm.vocabulary()[i]))
        .collect();
    let mut tracker = ResidualTracker::new(tdm, candidates);
    let largest = tracker.norms_sq.iter().cloned().fold(0.0, f64::max).sqrt();
    let tol = RANK_TOL * largest;

    let mut refl = Reflectors::new(tdm.n_docs());
    let mut chosen = Vec::with_capacity(num_topics);
    let mut residuals = Vec::with_capacity(num_topics);
    let mut taken = vec![false; tracker.candidates.len()];

    while chosen.len() < num_topics {
        let max = tracker
            .residual_sq
            .iter()
            .zip(&taken)
            .filter(|(_, &t)| !t)
            .map(|(&r, _)| r)
            .fold(0.0, f64::max);
        let found = chosen.len();
        if !(max.sqrt() > tol) {
            return Err(Error::RankDeficientAnchors { requested: num_topics, found });
        }
        let threshold = max * (1.0 - TIE_TOL);
        let pos = (0..tracker.candidates.len())
            .find(|&k| !taken[k] && tracker.residual_sq[k] >= threshold)
            .expect("maximum exists");
        let row = tracker.candidates[pos];

        let mut w = dense_row(tdm, row);
        refl.apply_transpose(&mut w);
        let exact = w[refl.len()..].iter().map(|a| a * a).sum::<f64>();
        if exact.sqrt() <= tol {
            // the downdated estimate was stale; drop it and look again
            tracker.residual_sq[pos] = exact;
            continue;
        }
        let q = refl
            .push(&w)
            .ok_or(Error::RankDeficientAnchors { requested: num_topics, found })?;
        taken[pos] = true;
        tracker.residual_sq[pos] = 0.0;
        chosen.push(row);
        residuals.push(exact.sqrt());
        if chosen.len() < num_topics {
            tracker.downdate(&q, &refl);
        }
    }

    Ok(AnchorSet {
        indices: chosen,
        pick_residuals: residuals,
        excluded_terms: excluded_terms.clone(),
    })
}

/// Distance of every term row to the span of the rows in `partial`
/// (selected rows report exactly zero).
pub fn residual_norms(tdm: &TermDocumentMatrix, partial: &[usize]) -> Result<Vec<f64>> {
    if let Some(&bad) = partial.iter().find(|&&i| i >= tdm.n_terms()) {
        return Err(Error::Dimension(format!("anchor index {bad} out of range")));
    }
    let mut tracker = ResidualTracker::new(tdm, (0..tdm.n_terms()).collect());
    let mut refl = Reflectors::new(tdm.n_docs());
    for &row in partial {
        let mut w = dense_row(tdm, row);
        refl.apply_transpose(&mut w);
        if refl.len() >= tdm.n_docs() {
            continue;
        }
        if let Some(q) = refl.push(&w) {
            tracker.downdate(&q, &refl);
        }
    }
    let mut out: Vec<f64> = tracker.residual_sq.iter().map(|r| r.max(0.0).sqrt()).collect();
    for &row in partial {
        out[row] = 0.0;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn tdm(rows: usize, cols: usize, data: &[f64]) -> TermDocumentMatrix {
        TermDocumentMatrix::from_dense_unlabelled(&DMatrix::from_row_slice(rows, cols, data)).unwrap()
    }

    #[test]
    fn picks_largest_norm_then_farthest() {
        let x = tdm(3, 2, &[3.0, 0.0, 0.0, 2.0, 1.0, 1.0]);
        let a = select_anchors(&x, 2, &BTreeSet::new()).unwrap();
        assert_eq!(a.indices, vec![0, 1]);
        assert!((a.pick_residuals[0] - 3.0).abs() < 1e-14);
        assert!((a.pick_residuals[1] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn identity_ties_go_to_lowest_index() {
        let x = tdm(3, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(select_anchors(&x, 3, &BTreeSet::new()).unwrap().indices, vec![0, 1, 2]);
    }

    #[test]
    fn exclusion_replaces_top_anchor() {
        let x = tdm(3, 2, &[3.0, 0.0, 0.0, 2.0, 1.0, 1.0]);
        let excluded: BTreeSet<String> = ["w0".to_string()].into();
        let a = select_anchors(&x, 2, &excluded).unwrap();
        assert!(!a.indices.contains(&0));
        assert_eq!(a.indices, vec![1, 2]);
        assert!(a.validate(&x).is_ok());
    }

    #[test]
    fn rank_deficiency_is_reported() {
        let x = tdm(3, 3, &[1.0, 1.0, 0.0, 2.0, 2.0, 0.0, 3.0, 3.0, 0.0]);
        match select_anchors(&x, 2, &BTreeSet::new()) {
            Err(Error::RankDeficientAnchors { requested: 2, found: 1 }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn topic_count_bounds() {
        let x = tdm(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        assert!(select_anchors(&x, 0, &BTreeSet::new()).is_err());
        assert!(select_anchors(&x, 3, &BTreeSet::new()).is_err());
    }

    #[test]
    fn residual_norm_examples() {
        let x = tdm(2, 2, &[3.0, 0.0, 0.0, 2.0]);
        assert_eq!(residual_norms(&x, &[0]).unwrap(), vec![0.0, 2.0]);
        assert_eq!(residual_norms(&x, &[]).unwrap(), vec![3.0, 2.0]);
        assert_eq!(residual_norms(&x, &[0, 1]).unwrap(), vec![0.0, 0.0]);
    }
}
