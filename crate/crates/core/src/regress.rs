//! Covariate effects on topic prevalence.
//!
//! Two estimators are offered. The OLS bootstrap regresses row-normalized
//! prevalences on the design and resamples documents; since row
//! normalization cancels the `λ` scaling of `Θ = Λ⁻¹ X_†`, every bootstrap
//! iteration only needs the resampled anchor rows, never a refit. Beta
//! regression models the per-document topic share with a logit mean link
//! and a log (or logit) precision link, fitted by Fisher scoring.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::anchors::AnchorSet;
use crate::corpus::DesignMatrix;
use crate::error::{Error, Result};
use crate::factorize::TopicModel;
use crate::linalg::LeastSquares;
use crate::special::{
    beta_quantile, digamma, ln_gamma, logistic, logit, normal_quantile, normal_two_sided_p, trigamma,
};
use crate::stats::{quantile_sorted, sample_sd};
use crate::tdm::TermDocumentMatrix;

/// Significance level behind the `NS` flag.
pub const SIGNIFICANCE_LEVEL: f64 = 0.05;

/// Share of bootstrap iterations that may be redrawn before giving up.
pub const MAX_REDRAW_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrevalenceMode {
    /// `θ̃_ij = θ_ij / Σ_j θ_ij`: each topic's row sums to one.
    PerTopicRows,
    /// `θ̃_ij = θ_ij / Σ_i θ_ij`: each non-empty document's column sums to one.
    PerDocumentColumns,
}

/// `T x D` prevalences normalized per [`PrevalenceMode`].
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedPrevalence {
    pub values: DMatrix<f64>,
    pub mode: PrevalenceMode,
    /// Documents whose column is all zero (left at zero in document mode).
    pub zero_columns: Vec<usize>,
    pub topic_labels: Vec<String>,
    pub doc_ids: Vec<String>,
}

pub fn normalize_prevalence(
    m: &DMatrix<f64>,
    mode: PrevalenceMode,
    topic_labels: &[String],
    doc_ids: &[String],
) -> Result<NormalizedPrevalence> {
    let (t, d) = m.shape();
    if topic_labels.len() != t || doc_ids.len() != d {
        return Err(Error::Dimension(format!(
            "{t}x{d} prevalence with {} topic labels and {} documents",
            topic_labels.len(),
            doc_ids.len()
        )));
    }
    let zero_columns: Vec<usize> = (0..d).filter(|&j| m.column(j).iter().all(|&v| v == 0.0)).collect();
    let mut values = m.clone();
    match mode {
        PrevalenceMode::PerTopicRows => {
            for i in 0..t {
                let s: f64 = m.row(i).sum();
                if s == 0.0 {
                    return Err(Error::ZeroPrevalenceRow(topic_labels[i].clone()));
                }
                values.row_mut(i).iter_mut().for_each(|v| *v /= s);
            }
        }
        PrevalenceMode::PerDocumentColumns => {
            for j in 0..d {
                let s: f64 = m.column(j).sum();
                if s > 0.0 {
                    values.column_mut(j).iter_mut().for_each(|v| *v /= s);
                }
            }
        }
    }
    Ok(NormalizedPrevalence {
        values,
        mode,
        zero_columns,
        topic_labels: topic_labels.to_vec(),
        doc_ids: doc_ids.to_vec(),
    })
}

impl NormalizedPrevalence {
    /// Normalizes the fitted `Θ` of a model.
    pub fn from_model(model: &TopicModel, mode: PrevalenceMode) -> Result<Self> {
        normalize_prevalence(&model.theta, mode, &topic_labels(model), &model.doc_ids)
    }

    /// Normalizes the model's anchor rows `X_†` directly.
    pub fn from_anchor_block(model: &TopicModel, mode: PrevalenceMode) -> Result<Self> {
        normalize_prevalence(&model.anchor_counts, mode, &topic_labels(model), &model.doc_ids)
    }
}

pub fn topic_labels(model: &TopicModel) -> Vec<String> {
    (0..model.num_topics()).map(|j| model.anchor_term(j).to_string()).collect()
}

fn check_rows(prev_docs: usize, z: &DesignMatrix) -> Result<()> {
    if prev_docs != z.n_rows() {
        return Err(Error::Dimension(format!(
            "prevalence has {prev_docs} documents but the design has {} rows",
            z.n_rows()
        )));
    }
    Ok(())
}

/// The `P x T` coefficients minimizing `‖Θ̃ − Bᵀ Zᵀ‖_F`, one column per topic.
pub fn ols_fit(prev: &NormalizedPrevalence, z: &DesignMatrix) -> Result<DMatrix<f64>> {
    check_rows(prev.values.ncols(), z)?;
    let ls = LeastSquares::new(&z.values).map_err(Error::RankDeficientDesign)?;
    Ok(ls.solve(&prev.values.transpose()))
}

/// One OLS fit on the documents `sample` of a `T x D` block, row-normalized.
/// `None` when the sample leaves a topic without occurrences or the
/// resampled design loses rank.
pub fn ols_on_sample(block: &DMatrix<f64>, z: &DMatrix<f64>, sample: &[usize]) -> Option<DMatrix<f64>> {
    let t = block.nrows();
    let mut y = DMatrix::zeros(sample.len(), t);
    let mut sums = vec![0.0; t];
    for (r, &d) in sample.iter().enumerate() {
        for i in 0..t {
            let v = block[(i, d)];
            y[(r, i)] = v;
            sums[i] += v;
        }
    }
    if sums.contains(&0.0) {
        return None;
    }
    for i in 0..t {
        y.column_mut(i).iter_mut().for_each(|v| *v /= sums[i]);
    }
    let zs = z.select_rows(sample);
    let ls = LeastSquares::new(&zs).ok()?;
    Some(ls.solve(&y))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapConfig {
    pub draws: usize,
    pub alpha: f64,
    pub seed: u64,
}

/// Bootstrap draws of the `P x T` OLS coefficients and their summaries.
/// The summary matrices are `None` when no draws were requested.
#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapResult {
    pub point_estimate: DMatrix<f64>,
    pub draws: Vec<DMatrix<f64>>,
    pub lower: Option<DMatrix<f64>>,
    pub upper: Option<DMatrix<f64>>,
    pub std_errors: Option<DMatrix<f64>>,
    pub p_values: Option<DMatrix<f64>>,
    pub alpha: f64,
    pub seed: u64,
    /// Iterations whose first sample had to be replaced.
    pub redrawn: usize,
    pub coefficient_names: Vec<String>,
    pub topic_labels: Vec<String>,
}

/// Per-iteration generator: the stream index is the iteration, so parallel
/// and serial schedules see the same samples.
pub fn iteration_rng(seed: u64, iteration: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(iteration as u64);
    rng
}

pub fn draw_sample(rng: &mut impl Rng, d: usize) -> Vec<usize> {
    (0..d).map(|_| rng.random_range(0..d)).collect()
}

/// Generic resampling driver. `estimate` maps a sample of document indices
/// to a coefficient matrix, or `None` to reject the sample and draw again.
pub fn bootstrap_with<F>(n_docs: usize, cfg: &BootstrapConfig, estimate: F) -> Result<(Vec<DMatrix<f64>>, usize)>
where
    F: Fn(&[usize]) -> Option<DMatrix<f64>> + Sync,
{
    if n_docs == 0 {
        return Err(Error::InvalidArgument("no documents to resample".into()));
    }
    let budget = (MAX_REDRAW_FRACTION * cfg.draws as f64).floor() as usize;
    let results: Vec<(Option<DMatrix<f64>>, usize)> = (0..cfg.draws)
        .into_par_iter()
        .map(|it| {
            let mut rng = iteration_rng(cfg.seed, it);
            let mut redraws = 0;
            loop {
                let sample = draw_sample(&mut rng, n_docs);
                if let Some(b) = estimate(&sample) {
                    return (Some(b), redraws);
                }
                redraws += 1;
                if redraws > budget {
                    return (None, redraws);
                }
            }
        })
        .collect();
    let redrawn = results.iter().filter(|r| r.1 > 0).count();
    let total: usize = results.iter().map(|r| r.1).sum();
    if total > budget || results.iter().any(|r| r.0.is_none()) {
        return Err(Error::AnchorTooSparse { resampled: total, requested: cfg.draws });
    }
    Ok((results.into_iter().map(|r| r.0.unwrap()).collect(), redrawn))
}

/// Bootstrap on the fitted model's anchor block.
pub fn bootstrap_model(model: &TopicModel, z: &DesignMatrix, cfg: &BootstrapConfig) -> Result<BootstrapResult> {
    bootstrap_anchor_block(&model.anchor_counts, &topic_labels(model), z, cfg)
}

/// Bootstrap regression straight from the term-document matrix and fixed anchors.
pub fn bootstrap_effects(
    tdm: &TermDocumentMatrix,
    anchors: &AnchorSet,
    z: &DesignMatrix,
    cfg: &BootstrapConfig,
) -> Result<BootstrapResult> {
    anchors.validate(tdm)?;
    let labels: Vec<String> = anchors.indices.iter().map(|&a| tdm.vocabulary()[a].clone()).collect();
    bootstrap_anchor_block(&tdm.dense_rows(&anchors.indices), &labels, z, cfg)
}

pub fn bootstrap_anchor_block(
    block: &DMatrix<f64>,
    labels: &[String],
    z: &DesignMatrix,
    cfg: &BootstrapConfig,
) -> Result<BootstrapResult> {
    if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must be in (0, 1), got {}", cfg.alpha)));
    }
    let prev = normalize_prevalence(block, PrevalenceMode::PerTopicRows, labels, &z.doc_ids)?;
    let point_estimate = ols_fit(&prev, z)?;
    let (draws, redrawn) = bootstrap_with(block.ncols(), cfg, |s| ols_on_sample(block, &z.values, s))?;
    let mut result = BootstrapResult {
        point_estimate,
        draws,
        lower: None,
        upper: None,
        std_errors: None,
        p_values: None,
        alpha: cfg.alpha,
        seed: cfg.seed,
        redrawn,
        coefficient_names: z.column_names.clone(),
        topic_labels: labels.to_vec(),
    };
    result.summarize();
    Ok(result)
}

impl BootstrapResult {
    fn summarize(&mut self) {
        if self.draws.is_empty() {
            return;
        }
        let (p, t) = self.point_estimate.shape();
        let cells: Vec<(f64, f64, f64, f64)> = (0..p * t)
            .into_par_iter()
            .map(|k| {
                let (r, c) = (k % p, k / p);
                let mut v: Vec<f64> = self.draws.iter().map(|b| b[(r, c)]).collect();
                let sd = sample_sd(&v);
                let n = v.len() as f64;
                let below = v.iter().filter(|&&x| x <= 0.0).count() as f64 / n;
                let above = v.iter().filter(|&&x| x >= 0.0).count() as f64 / n;
                v.sort_by(f64::total_cmp);
                (
                    quantile_sorted(&v, self.alpha / 2.0),
                    quantile_sorted(&v, 1.0 - self.alpha / 2.0),
                    sd,
                    (2.0 * below.min(above)).min(1.0),
                )
            })
            .collect();
        let pick = |f: fn(&(f64, f64, f64, f64)) -> f64| DMatrix::from_fn(p, t, |r, c| f(&cells[c * p + r]));
        self.lower = Some(pick(|x| x.0));
        self.upper = Some(pick(|x| x.1));
        self.std_errors = Some(pick(|x| x.2));
        self.p_values = Some(pick(|x| x.3));
    }

    /// One row per (topic, coefficient).
    pub fn summary(&self) -> Vec<CoefficientSummary> {
        let mut rows = Vec::new();
        for (t, label) in self.topic_labels.iter().enumerate() {
            for (p, name) in self.coefficient_names.iter().enumerate() {
                let get = |m: &Option<DMatrix<f64>>| m.as_ref().map(|m| m[(p, t)]);
                let p_value = get(&self.p_values);
                rows.push(CoefficientSummary {
                    topic: label.clone(),
                    component: Component::Ols,
                    name: name.clone(),
                    estimate: self.point_estimate[(p, t)],
                    std_error: get(&self.std_errors),
                    lower: get(&self.lower),
                    upper: get(&self.upper),
                    p_value,
                    significance: p_value.map(significance_flag),
                });
            }
        }
        rows
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    Ols,
    Mean,
    Precision,
}

/// A reporting row for one coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSummary {
    pub topic: String,
    pub component: Component,
    pub name: String,
    pub estimate: f64,
    pub std_error: Option<f64>,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub p_value: Option<f64>,
    /// `"NS"` when not significant at 5%, `"*"` otherwise.
    pub significance: Option<String>,
}

pub fn significance_flag(p: f64) -> String {
    if p < SIGNIFICANCE_LEVEL { "*".into() } else { "NS".into() }
}

// ---------------------------------------------------------------------------
// Beta regression

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanLink {
    Logit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrecisionLink {
    #[default]
    Log,
    /// Bounds the precision to `(0, 1)`.
    Logit,
}

impl PrecisionLink {
    fn inverse(self, eta: f64) -> f64 {
        match self {
            PrecisionLink::Log => eta.exp(),
            PrecisionLink::Logit => logistic(eta),
        }
    }

    fn link(self, phi: f64) -> f64 {
        match self {
            PrecisionLink::Log => phi.ln(),
            PrecisionLink::Logit => logit(phi),
        }
    }

    /// First and second derivative of the inverse link as functions of its value.
    fn derivatives(self, phi: f64) -> (f64, f64) {
        match self {
            PrecisionLink::Log => (phi, phi),
            PrecisionLink::Logit => {
                let d = phi * (1.0 - phi);
                (d, d * (1.0 - 2.0 * phi))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaOptions {
    pub precision_link: PrecisionLink,
    pub max_iter: usize,
    /// Stop once the Newton decrement `Uᵀ I⁻¹ U` falls below `tol · (1 + |ℓ|)`.
    pub tol: f64,
    /// Squeeze responses into the open interval when 0 or 1 occur.
    pub squeeze_boundary: bool,
    /// Drop documents with an all-zero prevalence column before fitting.
    pub drop_empty_documents: bool,
}

impl Default for BetaOptions {
    fn default() -> Self {
        BetaOptions {
            precision_link: PrecisionLink::Log,
            max_iter: 200,
            tol: 1e-12,
            squeeze_boundary: true,
            drop_empty_documents: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaFit {
    pub topic: usize,
    pub topic_label: String,
    pub mean_names: Vec<String>,
    pub precision_names: Vec<String>,
    pub mean_coefficients: Vec<f64>,
    pub precision_coefficients: Vec<f64>,
    pub mean_std_errors: Vec<f64>,
    pub precision_std_errors: Vec<f64>,
    pub log_likelihood: f64,
    pub converged: bool,
    pub iterations: usize,
    pub mean_link: MeanLink,
    pub precision_link: PrecisionLink,
    /// Log-likelihood after every accepted step, starting from the start values.
    pub log_likelihood_trace: Vec<f64>,
    pub n_obs: usize,
    pub boundary_squeezed: bool,
    pub dropped_documents: Vec<String>,
}

/// Raw result of [`fit_beta_response`], parameters stacked as `[β; γ]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaEstimate {
    pub params: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub log_likelihood: f64,
    pub converged: bool,
    pub iterations: usize,
    pub trace: Vec<f64>,
}

/// Log-density pieces and derivatives in `(μ, φ)` for one observation.
struct Obs {
    ll: f64,
    d_mu: f64,
    d_phi: f64,
    d_mu_mu: f64,
    d_mu_phi: f64,
    d_phi_phi: f64,
    /// Expected information terms.
    e_mu_mu: f64,
    e_mu_phi: f64,
    e_phi_phi: f64,
}

fn observation(y: f64, mu: f64, phi: f64) -> Obs {
    let a = mu * phi;
    let b = (1.0 - mu) * phi;
    let (ly, l1y) = (y.ln(), (1.0 - y).ln());
    let ystar = ly - l1y;
    let (dga, dgb) = (digamma(a), digamma(b));
    let mustar = dga - dgb;
    let (tga, tgb, tgp) = (trigamma(a), trigamma(b), trigamma(phi));
    let e_mu_phi = phi * (mu * tga - (1.0 - mu) * tgb);
    let e_phi_phi = mu * mu * tga + (1.0 - mu) * (1.0 - mu) * tgb - tgp;
    Obs {
        ll: ln_gamma(phi) - ln_gamma(a) - ln_gamma(b) + (a - 1.0) * ly + (b - 1.0) * l1y,
        d_mu: phi * (ystar - mustar),
        d_phi: mu * (ystar - mustar) + l1y - dgb + digamma(phi),
        d_mu_mu: -phi * phi * (tga + tgb),
        d_mu_phi: (ystar - mustar) - e_mu_phi,
        d_phi_phi: -e_phi_phi,
        e_mu_mu: phi * phi * (tga + tgb),
        e_mu_phi,
        e_phi_phi,
    }
}

/// Mean and precision of every observation under `params = [β; γ]`.
fn linear_predictors(
    xm: &DMatrix<f64>,
    xp: &DMatrix<f64>,
    params: &[f64],
    link: PrecisionLink,
) -> (Vec<f64>, Vec<f64>) {
    let k = xm.ncols();
    let beta = DVector::from_column_slice(&params[..k]);
    let gamma = DVector::from_column_slice(&params[k..]);
    let mu = (xm * beta).iter().map(|&e| logistic(e)).collect();
    let phi = (xp * gamma).iter().map(|&e| link.inverse(e)).collect();
    (mu, phi)
}

fn check_beta_shapes(y: &[f64], xm: &DMatrix<f64>, xp: &DMatrix<f64>, params: &[f64]) {
    assert_eq!(xm.nrows(), y.len(), "mean design rows");
    assert_eq!(xp.nrows(), y.len(), "precision design rows");
    assert_eq!(xm.ncols() + xp.ncols(), params.len(), "parameter length");
}

pub fn beta_log_likelihood(
    y: &[f64],
    xm: &DMatrix<f64>,
    xp: &DMatrix<f64>,
    params: &[f64],
    link: PrecisionLink,
) -> f64 {
    check_beta_shapes(y, xm, xp, params);
    let (mu, phi) = linear_predictors(xm, xp, params, link);
    y.iter()
        .zip(mu.iter().zip(&phi))
        .map(|(&y, (&m, &p))| {
            let (a, b) = (m * p, (1.0 - m) * p);
            ln_gamma(p) - ln_gamma(a) - ln_gamma(b) + (a - 1.0) * y.ln() + (b - 1.0) * (1.0 - y).ln()
        })
        .sum()
}

struct Derivatives {
    ll: f64,
    score: DVector<f64>,
    hessian: DMatrix<f64>,
    information: DMatrix<f64>,
}

fn beta_derivatives(y: &[f64], xm: &DMatrix<f64>, xp: &DMatrix<f64>, params: &[f64], link: PrecisionLink) -> Derivatives {
    check_beta_shapes(y, xm, xp, params);
    let (k, q) = (xm.ncols(), xp.ncols());
    let n = k + q;
    let (mu, phi) = linear_predictors(xm, xp, params, link);
    let mut ll = 0.0;
    let mut score = DVector::zeros(n);
    let mut hessian = DMatrix::zeros(n, n);
    let mut information = DMatrix::zeros(n, n);
    let mut g = vec![0.0; n];
    for i in 0..y.len() {
        let o = observation(y[i], mu[i], phi[i]);
        ll += o.ll;
        let m = mu[i];
        let (m1, m2) = (m * (1.0 - m), m * (1.0 - m) * (1.0 - 2.0 * m));
        let (p1, p2) = link.derivatives(phi[i]);
        for c in 0..k {
            g[c] = xm[(i, c)];
        }
        for c in 0..q {
            g[k + c] = xp[(i, c)];
        }
        for r in 0..n {
            let (dr, mean_r) = if r < k { (m1, true) } else { (p1, false) };
            score[r] += g[r] * if mean_r { o.d_mu } else { o.d_phi } * dr;
            for c in 0..=r {
                let mean_c = c < k;
                let (h, e) = match (mean_r, mean_c) {
                    (true, true) => (o.d_mu_mu * m1 * m1 + o.d_mu * m2, o.e_mu_mu * m1 * m1),
                    (false, false) => (o.d_phi_phi * p1 * p1 + o.d_phi * p2, o.e_phi_phi * p1 * p1),
                    _ => (o.d_mu_phi * m1 * p1, o.e_mu_phi * m1 * p1),
                };
                let gg = g[r] * g[c];
                hessian[(r, c)] += h * gg;
                information[(r, c)] += e * gg;
            }
        }
    }
    for r in 0..n {
        for c in 0..r {
            hessian[(c, r)] = hessian[(r, c)];
            information[(c, r)] = information[(r, c)];
        }
    }
    Derivatives { ll, score, hessian, information }
}

/// Analytic gradient of [`beta_log_likelihood`] with respect to `[β; γ]`.
pub fn beta_score(y: &[f64], xm: &DMatrix<f64>, xp: &DMatrix<f64>, params: &[f64], link: PrecisionLink) -> Vec<f64> {
    beta_derivatives(y, xm, xp, params, link).score.iter().copied().collect()
}

/// Analytic Hessian of [`beta_log_likelihood`] with respect to `[β; γ]`.
pub fn beta_hessian(
    y: &[f64],
    xm: &DMatrix<f64>,
    xp: &DMatrix<f64>,
    params: &[f64],
    link: PrecisionLink,
) -> DMatrix<f64> {
    beta_derivatives(y, xm, xp, params, link).hessian
}

fn start_values(y: &[f64], xm: &DMatrix<f64>, xp: &DMatrix<f64>, link: PrecisionLink) -> Result<Vec<f64>> {
    let n = y.len();
    let lm = LeastSquares::new(xm).map_err(|e| Error::RankDeficientDesign(format!("mean design: {e}")))?;
    let lp = LeastSquares::new(xp).map_err(|e| Error::RankDeficientDesign(format!("precision design: {e}")))?;
    let ystar = DMatrix::from_iterator(n, 1, y.iter().map(|&v| logit(v)));
    let beta = lm.solve(&ystar);
    let fitted = xm * &beta;
    let mu: Vec<f64> = fitted.iter().map(|&e| logistic(e)).collect();
    let dof = if n > xm.ncols() { n - xm.ncols() } else { n };
    let s2 = y.iter().zip(&mu).map(|(y, m)| (y - m) * (y - m)).sum::<f64>() / dof as f64;
    let mean_var = mu.iter().map(|m| m * (1.0 - m)).sum::<f64>() / n as f64;
    let mut phi0 = mean_var / s2 - 1.0;
    if !(phi0.is_finite() && phi0 > 0.0) {
        phi0 = 1.0;
    }
    if link == PrecisionLink::Logit {
        phi0 = phi0.clamp(0.01, 0.99);
    }
    let gamma = lp.solve(&DMatrix::from_element(n, 1, link.link(phi0)));
    Ok(beta.iter().chain(gamma.iter()).copied().collect())
}

/// Maximum likelihood fit of a beta regression to responses in `(0, 1)`.
pub fn fit_beta_response(y: &[f64], xm: &DMatrix<f64>, xp: &DMatrix<f64>, opts: &BetaOptions) -> Result<BetaEstimate> {
    if y.len() != xm.nrows() || y.len() != xp.nrows() {
        return Err(Error::Dimension(format!(
            "{} responses, {} mean rows, {} precision rows",
            y.len(),
            xm.nrows(),
            xp.nrows()
        )));
    }
    if y.iter().any(|&v| !(v > 0.0 && v < 1.0)) {
        return Err(Error::BoundaryValues);
    }
    let link = opts.precision_link;
    let mut params = start_values(y, xm, xp, link)?;
    let mut d = beta_derivatives(y, xm, xp, &params, link);
    let mut trace = vec![d.ll];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        let Some(chol) = d.information.clone().cholesky() else { break };
        let step = chol.solve(&d.score);
        let decrement = step.dot(&d.score);
        if decrement <= opts.tol * (1.0 + d.ll.abs()) {
            converged = true;
            break;
        }
        iterations += 1;
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let cand: Vec<f64> = params.iter().zip(step.iter()).map(|(p, s)| p + scale * s).collect();
            let ll = beta_log_likelihood(y, xm, xp, &cand, link);
            if ll.is_finite() && ll >= d.ll {
                accepted = Some(cand);
                break;
            }
            scale *= 0.5;
        }
        match accepted {
            Some(cand) => {
                params = cand;
                d = beta_derivatives(y, xm, xp, &params, link);
                trace.push(d.ll);
            }
            None => {
                // no ascent along the scoring direction: stationary up to rounding
                converged = decrement <= opts.tol.sqrt() * (1.0 + d.ll.abs());
                break;
            }
        }
    }
    let n = params.len();
    let std_errors = match (-&d.hessian).cholesky() {
        Some(c) => {
            let inv = c.inverse();
            (0..n).map(|i| inv[(i, i)].sqrt()).collect()
        }
        None => {
            converged = false;
            vec![f64::NAN; n]
        }
    };
    Ok(BetaEstimate {
        params,
        std_errors,
        log_likelihood: d.ll,
        converged,
        iterations,
        trace,
    })
}

/// Beta regression for one topic of a document-mode prevalence matrix.
pub fn beta_fit(
    prev: &NormalizedPrevalence,
    z_mean: &DesignMatrix,
    z_precision: &DesignMatrix,
    topic: usize,
    opts: &BetaOptions,
) -> Result<BetaFit> {
    if prev.mode != PrevalenceMode::PerDocumentColumns {
        return Err(Error::InvalidArgument("beta regression needs per-document prevalences".into()));
    }
    if topic >= prev.values.nrows() {
        return Err(Error::InvalidArgument(format!("topic {topic} out of range")));
    }
    check_rows(prev.values.ncols(), z_mean)?;
    check_rows(prev.values.ncols(), z_precision)?;
    let keep: Vec<usize> = if opts.drop_empty_documents {
        (0..prev.values.ncols()).filter(|j| !prev.zero_columns.contains(j)).collect()
    } else {
        (0..prev.values.ncols()).collect()
    };
    let dropped_documents = prev.zero_columns.iter().filter(|_| opts.drop_empty_documents).map(|&j| prev.doc_ids[j].clone()).collect();
    let mut y: Vec<f64> = keep.iter().map(|&j| prev.values[(topic, j)]).collect();
    let on_boundary = y.iter().any(|&v| v <= 0.0 || v >= 1.0);
    if on_boundary {
        if !opts.squeeze_boundary {
            return Err(Error::BoundaryValues);
        }
        let n = y.len() as f64;
        y.iter_mut().for_each(|v| *v = (*v * (n - 1.0) + 0.5) / n);
    }
    let xm = z_mean.select_rows(&keep).values;
    let xp = z_precision.select_rows(&keep).values;
    let est = fit_beta_response(&y, &xm, &xp, opts)?;
    let k = xm.ncols();
    Ok(BetaFit {
        topic,
        topic_label: prev.topic_labels[topic].clone(),
        mean_names: z_mean.column_names.clone(),
        precision_names: z_precision.column_names.clone(),
        mean_coefficients: est.params[..k].to_vec(),
        precision_coefficients: est.params[k..].to_vec(),
        mean_std_errors: est.std_errors[..k].to_vec(),
        precision_std_errors: est.std_errors[k..].to_vec(),
        log_likelihood: est.log_likelihood,
        converged: est.converged,
        iterations: est.iterations,
        mean_link: MeanLink::Logit,
        precision_link: opts.precision_link,
        log_likelihood_trace: est.trace,
        n_obs: y.len(),
        boundary_squeezed: on_boundary,
        dropped_documents,
    })
}

impl BetaFit {
    /// Wald summaries with intervals at `level`.
    pub fn summary(&self, level: f64) -> Vec<CoefficientSummary> {
        let zq = normal_quantile(0.5 + level / 2.0);
        let mut rows = Vec::new();
        let parts = [
            (Component::Mean, &self.mean_names, &self.mean_coefficients, &self.mean_std_errors),
            (Component::Precision, &self.precision_names, &self.precision_coefficients, &self.precision_std_errors),
        ];
        for (component, names, est, se) in parts {
            for ((name, &b), &s) in names.iter().zip(est).zip(se) {
                let p = normal_two_sided_p(b / s);
                rows.push(CoefficientSummary {
                    topic: self.topic_label.clone(),
                    component,
                    name: name.clone(),
                    estimate: b,
                    std_error: Some(s),
                    lower: Some(b - zq * s),
                    upper: Some(b + zq * s),
                    p_value: Some(p),
                    significance: Some(significance_flag(p)),
                });
            }
        }
        rows
    }

    pub fn mean_at(&self, z: &[f64]) -> f64 {
        logistic(dot(&self.mean_coefficients, z))
    }

    pub fn precision_at(&self, z: &[f64]) -> f64 {
        self.precision_link.inverse(dot(&self.precision_coefficients, z))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "covariate row length");
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaPrediction {
    pub mean: f64,
    pub precision: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Fitted mean and central `level` prediction interval of the response.
pub fn predict_beta(fit: &BetaFit, z_mean: &[f64], z_precision: &[f64], level: f64) -> BetaPrediction {
    let mean = fit.mean_at(z_mean);
    let precision = fit.precision_at(z_precision);
    let level = level.clamp(0.0, 1.0);
    let (a, b) = (mean * precision, (1.0 - mean) * precision);
    BetaPrediction {
        mean,
        precision,
        lower: beta_quantile(a, b, (1.0 - level) / 2.0),
        upper: beta_quantile(a, b, (1.0 + level) / 2.0),
    }
}

/// A distinct design row and the number of documents sharing it.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignLevel {
    pub mean_row: Vec<f64>,
    pub precision_row: Vec<f64>,
    pub n_docs: usize,
}

/// Distinct (mean, precision) design rows in order of first appearance.
pub fn design_levels(z_mean: &DesignMatrix, z_precision: &DesignMatrix) -> Vec<DesignLevel> {
    let mut seen: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut out: Vec<DesignLevel> = Vec::new();
    for j in 0..z_mean.n_rows() {
        let (m, p) = (z_mean.row(j), z_precision.row(j));
        let key: Vec<u64> = m.iter().chain(&p).map(|v| v.to_bits()).collect();
        match seen.get(&key) {
            Some(&i) => out[i].n_docs += 1,
            None => {
                seen.insert(key, out.len());
                out.push(DesignLevel { mean_row: m, precision_row: p, n_docs: 1 });
            }
        }
    }
    out
}

/// Fitted prevalence `zᵀβ` of one topic at a design row, with the percentile
/// band of the bootstrap draws.
pub fn bootstrap_fitted(result: &BootstrapResult, topic: usize, z: &[f64]) -> (f64, Option<(f64, f64)>) {
    let col = |b: &DMatrix<f64>| -> f64 { (0..z.len()).map(|p| z[p] * b[(p, topic)]).sum() };
    let point = col(&result.point_estimate);
    if result.draws.is_empty() {
        return (point, None);
    }
    let mut v: Vec<f64> = result.draws.iter().map(col).collect();
    v.sort_by(f64::total_cmp);
    (
        point,
        Some((quantile_sorted(&v, result.alpha / 2.0), quantile_sorted(&v, 1.0 - result.alpha / 2.0))),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_design, ContrastScheme, CovariateValue, DesignSpec, Document};

    fn labels(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("t{i}")).collect()
    }

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("d{i}")).collect()
    }

    fn two_group_design(groups: &[&str], scheme: ContrastScheme) -> DesignMatrix {
        let docs: Vec<Document> = groups
            .iter()
            .enumerate()
            .map(|(i, g)| Document::new(format!("d{i}"), "").with_covariate("g", CovariateValue::Level(g.to_string())))
            .collect();
        build_design(&docs, &DesignSpec::new(&["g"], scheme)).unwrap()
    }

    #[test]
    fn row_and_column_normalization() {
        let m = DMatrix::from_row_slice(2, 3, &[2.0, 2.0, 4.0, 1.0, 3.0, 0.0]);
        let rows = normalize_prevalence(&m, PrevalenceMode::PerTopicRows, &labels(2), &ids(3)).unwrap();
        assert_eq!(rows.values.row(0).iter().copied().collect::<Vec<_>>(), vec![0.25, 0.25, 0.5]);
        let cols = normalize_prevalence(&m, PrevalenceMode::PerDocumentColumns, &labels(2), &ids(3)).unwrap();
        assert_eq!(cols.values[(0, 0)], 2.0 / 3.0);
        assert_eq!((cols.values[(0, 1)], cols.values[(1, 1)]), (0.4, 0.6));

        let c = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 3.0, 0.0]);
        let cols = normalize_prevalence(&c, PrevalenceMode::PerDocumentColumns, &labels(2), &ids(2)).unwrap();
        assert_eq!((cols.values[(0, 0)], cols.values[(1, 0)]), (0.25, 0.75));
        assert_eq!(cols.zero_columns, vec![1]);
        let err = normalize_prevalence(&c.transpose(), PrevalenceMode::PerTopicRows, &labels(2), &ids(2)).unwrap_err();
        assert!(matches!(err, Error::ZeroPrevalenceRow(ref t) if t == "t1"));
    }

    #[test]
    fn lambda_cancels_in_row_mode() {
        let x = DMatrix::from_row_slice(2, 3, &[3.0, 1.0, 7.0, 2.0, 2.0, 5.0]);
        let theta = &x / 0.5;
        let a = normalize_prevalence(&x, PrevalenceMode::PerTopicRows, &labels(2), &ids(3)).unwrap();
        let b = normalize_prevalence(&theta, PrevalenceMode::PerTopicRows, &labels(2), &ids(3)).unwrap();
        assert!((&a.values - &b.values).amax() <= 1e-16);
    }

    #[test]
    fn ols_examples() {
        let m = DMatrix::from_row_slice(1, 2, &[0.2, 0.4]);
        let prev = NormalizedPrevalence {
            values: m,
            mode: PrevalenceMode::PerTopicRows,
            zero_columns: vec![],
            topic_labels: labels(1),
            doc_ids: ids(2),
        };
        let b = ols_fit(&prev, &DesignMatrix::intercept_only(ids(2))).unwrap();
        assert!((b[(0, 0)] - 0.3).abs() < 1e-15);

        let z = two_group_design(&["a", "a", "b", "b"], ContrastScheme::SumToZero);
        let prev = NormalizedPrevalence { values: DMatrix::from_row_slice(1, 4, &[0.2, 0.2, 0.4, 0.4]), doc_ids: ids(4), ..prev };
        let b = ols_fit(&prev, &z).unwrap();
        // sum-to-zero over {a, b} omits b: a coded +1, b coded -1
        assert!((b[(0, 0)] - 0.3).abs() < 1e-15);
        assert!((b[(1, 0)] + 0.1).abs() < 1e-15);

        let zs = [0.0, 1.0, 2.0, 3.0];
        let zv = DMatrix::from_fn(4, 2, |r, c| if c == 0 { 1.0 } else { zs[r] });
        let z = DesignMatrix::from_values(zv, vec!["(Intercept)".into(), "z".into()], ids(4)).unwrap();
        let y = DMatrix::from_fn(1, 4, |_, c| 0.1 + 0.2 * zs[c]);
        let prev = NormalizedPrevalence { values: y, ..prev };
        let b = ols_fit(&prev, &z).unwrap();
        assert!((b[(0, 0)] - 0.1).abs() < 1e-14 && (b[(1, 0)] - 0.2).abs() < 1e-14);
    }

    #[test]
    fn rank_deficient_design_is_rejected() {
        let z = DesignMatrix {
            values: DMatrix::from_element(3, 2, 1.0),
            column_names: vec!["a".into(), "b".into()],
            doc_ids: ids(3),
            contrast_scheme: None,
            baseline_levels: Default::default(),
        };
        let prev = normalize_prevalence(&DMatrix::from_element(1, 3, 1.0), PrevalenceMode::PerTopicRows, &labels(1), &ids(3)).unwrap();
        assert!(matches!(ols_fit(&prev, &z), Err(Error::RankDeficientDesign(_))));
    }

    #[test]
    fn identity_sample_reproduces_full_fit() {
        let block = DMatrix::from_row_slice(2, 4, &[1.0, 2.0, 3.0, 4.0, 4.0, 0.0, 1.0, 1.0]);
        let z = two_group_design(&["a", "b", "a", "b"], ContrastScheme::TreatmentBaseline);
        let prev = normalize_prevalence(&block, PrevalenceMode::PerTopicRows, &labels(2), &ids(4)).unwrap();
        let full = ols_fit(&prev, &z).unwrap();
        let one = ols_on_sample(&block, &z.values, &[0, 1, 2, 3]).unwrap();
        assert!((&full - &one).amax() < 1e-15);
    }

    #[test]
    fn bootstrap_is_deterministic_and_summarized() {
        let block = DMatrix::from_fn(2, 40, |i, j| ((i + 1) * (j % 7 + 1)) as f64);
        let groups: Vec<&str> = (0..40).map(|j| if j % 2 == 0 { "a" } else { "b" }).collect();
        let z = two_group_design(&groups, ContrastScheme::SumToZero);
        let cfg = BootstrapConfig { draws: 200, alpha: 0.05, seed: 7 };
        let a = bootstrap_anchor_block(&block, &labels(2), &z, &cfg).unwrap();
        let b = bootstrap_anchor_block(&block, &labels(2), &z, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.draws.len(), 200);
        let mut v: Vec<f64> = a.draws.iter().map(|d| d[(1, 0)]).collect();
        v.sort_by(f64::total_cmp);
        assert_eq!(a.lower.as_ref().unwrap()[(1, 0)], quantile_sorted(&v, 0.025));
        assert_eq!(a.upper.as_ref().unwrap()[(1, 0)], quantile_sorted(&v, 0.975));
        let other = bootstrap_anchor_block(&block, &labels(2), &z, &BootstrapConfig { seed: 8, ..cfg }).unwrap();
        assert_ne!(a.draws, other.draws);
        assert_eq!(a.summary().len(), 4);
    }

    #[test]
    fn zero_draws_gives_point_estimates_only() {
        let block = DMatrix::from_fn(1, 10, |_, j| (j + 1) as f64);
        let z = DesignMatrix::intercept_only(ids(10));
        let r = bootstrap_anchor_block(&block, &labels(1), &z, &BootstrapConfig { draws: 0, alpha: 0.05, seed: 1 }).unwrap();
        assert!(r.draws.is_empty() && r.lower.is_none() && r.p_values.is_none());
        assert!((r.point_estimate[(0, 0)] - 0.1).abs() < 1e-15);
        assert!(r.summary()[0].significance.is_none());
    }

    #[test]
    fn sparse_anchor_fails_bootstrap() {
        // the second topic only occurs in one of 50 documents
        let block = DMatrix::from_fn(2, 50, |i, j| if i == 0 || j == 0 { 1.0 } else { 0.0 });
        let z = DesignMatrix::intercept_only(ids(50));
        let err = bootstrap_anchor_block(&block, &labels(2), &z, &BootstrapConfig { draws: 100, alpha: 0.05, seed: 3 }).unwrap_err();
        assert!(matches!(err, Error::AnchorTooSparse { requested: 100, .. }));
    }

    #[test]
    fn occasional_redraws_are_counted() {
        // topic 1 occurs in 3 of 20 documents: P(sample misses all) = (17/20)^20 ≈ 3.9%
        let block = DMatrix::from_fn(2, 20, |i, j| if i == 0 || j < 3 { 1.0 } else { 0.0 });
        let z = DesignMatrix::intercept_only(ids(20));
        let r = bootstrap_anchor_block(&block, &labels(2), &z, &BootstrapConfig { draws: 1000, alpha: 0.05, seed: 11 }).unwrap();
        assert!(r.redrawn > 0 && r.redrawn < 100, "{}", r.redrawn);
        assert_eq!(r.draws.len(), 1000);
    }

    #[test]
    fn links() {
        assert_eq!(logit(0.5), 0.0);
        assert_eq!(logistic(0.0), 0.5);
        assert!((PrecisionLink::Log.inverse(PrecisionLink::Log.link(3.0)) - 3.0).abs() < 1e-15);
        assert!((PrecisionLink::Logit.inverse(PrecisionLink::Logit.link(0.3)) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn boundary_values_need_handling() {
        let values = DMatrix::from_row_slice(2, 4, &[0.0, 0.3, 0.5, 1.0, 1.0, 0.7, 0.5, 0.0]);
        let prev = NormalizedPrevalence {
            values,
            mode: PrevalenceMode::PerDocumentColumns,
            zero_columns: vec![],
            topic_labels: labels(2),
            doc_ids: ids(4),
        };
        let z = DesignMatrix::intercept_only(ids(4));
        let opts = BetaOptions { squeeze_boundary: false, ..Default::default() };
        assert!(matches!(beta_fit(&prev, &z, &z, 0, &opts), Err(Error::BoundaryValues)));
        let fit = beta_fit(&prev, &z, &z, 0, &BetaOptions::default()).unwrap();
        assert!(fit.boundary_squeezed);
        let row_mode = NormalizedPrevalence { mode: PrevalenceMode::PerTopicRows, ..prev };
        assert!(beta_fit(&row_mode, &z, &z, 0, &BetaOptions::default()).is_err());
    }

    #[test]
    fn design_levels_are_deduplicated() {
        let z = two_group_design(&["a", "b", "a", "a"], ContrastScheme::TreatmentBaseline);
        let levels = design_levels(&z, &z);
        assert_eq!(levels.len(), 2);
        assert_eq!((levels[0].n_docs, levels[1].n_docs), (3, 1));
        assert_eq!(levels[1].mean_row, vec![1.0, 1.0]);
    }
}
