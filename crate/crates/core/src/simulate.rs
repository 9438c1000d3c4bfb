//! Monte Carlo study of covariate-effect recovery.
//!
//! Documents carry one standard-normal covariate `z`. It sets the expected
//! share `m(z) = logistic(a + b z)` of a distinguished topic, whose actual
//! share is drawn from a Beta with that mean and a fixed precision; the
//! other topics split the remainder evenly. Words follow the resulting
//! mixture of topic-word distributions, and a final seeding pass puts one
//! extra count of every word into a random document so that no row is empty.
//!
//! Replicates of one `(D, N_d)` cell share the covariate draw, so their sum
//! is an aggregate corpus whose beta-regression fit acts as the pseudo truth
//! against which each replicate's estimate is scored.

use std::io::Write;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Binomial, Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::anchors::AnchorSet;
use crate::corpus::DesignMatrix;
use crate::error::{Error, Result};
use crate::factorize::fit;
use crate::regress::{beta_fit, normalize_prevalence, BetaOptions, NormalizedPrevalence, PrevalenceMode};
use crate::special::logistic;
use crate::tdm::TermDocumentMatrix;

/// Description of the allocation mechanism, recorded with every result.
pub const MECHANISM: &str = "z ~ N(0,1); m = logistic(a + b z); share of the distinguished topic ~ Beta(m phi, (1 - m) phi); remaining share split evenly; words ~ Multinomial(N_d, Phi share); then one count of every word in a uniformly random document";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub vocab_size: usize,
    pub doc_grid: Vec<usize>,
    pub words_grid: Vec<usize>,
    pub num_topics: usize,
    pub replicates: usize,
    /// `V x T` column-stochastic topic-word matrix given row by row. Generated
    /// from `seed` when absent.
    pub true_phi: Option<Vec<Vec<f64>>>,
    /// Anchor word of each topic. Defaults to words `0..T` for generated `Φ`.
    pub anchors: Option<Vec<usize>>,
    /// Intercept `a` of the logistic mean of the distinguished topic's share.
    pub intercept: f64,
    /// Slope `b` on the covariate.
    pub slope: f64,
    /// Precision of the Beta draw of the distinguished share.
    pub precision: f64,
    pub distinguished_topic: usize,
    /// Weight of each anchor word in its topic when `Φ` is generated.
    pub anchor_mass: f64,
    pub topic_generator: TopicGenerator,
    pub seed: u64,
}

/// How the non-anchor weights of a generated `Φ` are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TopicGenerator {
    /// Each topic independently from a symmetric Dirichlet.
    Dirichlet { concentration: f64 },
    /// A shared Zipf profile `r^-exponent` over words, scaled per topic by
    /// log-normal factors `exp(spread · N(0, 1))`.
    Zipf { exponent: f64, spread: f64 },
}

impl Default for TopicGenerator {
    fn default() -> Self {
        TopicGenerator::Dirichlet { concentration: 0.1 }
    }
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig::desk_scale()
    }
}

impl SimConfig {
    pub fn desk_scale() -> Self {
        SimConfig {
            vocab_size: 200,
            doc_grid: vec![50, 100],
            words_grid: vec![500, 2000],
            num_topics: 4,
            replicates: 100,
            true_phi: None,
            anchors: None,
            intercept: -0.5,
            slope: 1.0,
            precision: 20.0,
            distinguished_topic: 0,
            anchor_mass: 0.05,
            topic_generator: TopicGenerator::default(),
            seed: 20_240_601,
        }
    }

    /// The full-size grid: many hours of compute.
    pub fn paper_scale() -> Self {
        SimConfig {
            vocab_size: 1000,
            doc_grid: vec![100, 500, 1000],
            words_grid: vec![1000, 5000, 10_000, 15_000, 25_000],
            replicates: 1000,
            ..SimConfig::desk_scale()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.num_topics == 0 || self.vocab_size < self.num_topics {
            return bad(format!("need 1 <= T <= V, got T={} V={}", self.num_topics, self.vocab_size));
        }
        if self.doc_grid.is_empty() || self.words_grid.is_empty() {
            return bad("empty D or N_d grid".into());
        }
        if self.doc_grid.iter().any(|&d| d < 3) {
            return bad("every D must be at least 3".into());
        }
        if self.replicates == 0 {
            return bad("replicates must be positive".into());
        }
        if !(self.precision > 0.0) || !self.intercept.is_finite() || !self.slope.is_finite() {
            return bad("allocation parameters must be finite with positive precision".into());
        }
        if self.distinguished_topic >= self.num_topics {
            return bad("distinguished topic out of range".into());
        }
        if self.true_phi.is_none() {
            if !(self.anchor_mass > 0.0 && self.anchor_mass < 1.0) {
                return bad("anchor_mass must be in (0, 1)".into());
            }
            let ok = match self.topic_generator {
                TopicGenerator::Dirichlet { concentration } => concentration > 0.0 && concentration.is_finite(),
                TopicGenerator::Zipf { exponent, spread } => exponent.is_finite() && spread.is_finite(),
            };
            if !ok {
                return bad("invalid topic generator parameters".into());
            }
        }
        Ok(())
    }

    /// The topic-word matrix and its anchors, checked for column
    /// stochasticity and exact separability.
    pub fn resolve_phi(&self) -> Result<(DMatrix<f64>, Vec<usize>)> {
        self.validate()?;
        let (v, t) = (self.vocab_size, self.num_topics);
        let (phi, anchors) = match &self.true_phi {
            Some(rows) => {
                if rows.len() != v || rows.iter().any(|r| r.len() != t) {
                    return Err(Error::Dimension(format!("true_phi must be {v}x{t}")));
                }
                let phi = DMatrix::from_fn(v, t, |i, j| rows[i][j]);
                let anchors = self
                    .anchors
                    .clone()
                    .ok_or_else(|| Error::InvalidArgument("true_phi needs explicit anchors".into()))?;
                (phi, anchors)
            }
            None => (generate_phi(self), self.anchors.clone().unwrap_or_else(|| (0..t).collect())),
        };
        if anchors.len() != t || anchors.iter().any(|&a| a >= v) {
            return Err(Error::InvalidArgument("one in-range anchor per topic required".into()));
        }
        for j in 0..t {
            let s: f64 = phi.column(j).sum();
            if (s - 1.0).abs() > 1e-9 || phi.column(j).iter().any(|&x| !(x >= 0.0)) {
                return Err(Error::InvalidArgument(format!("column {j} of true_phi is not a distribution")));
            }
            for k in 0..t {
                let x = phi[(anchors[j], k)];
                if (k == j) != (x > 0.0) {
                    return Err(Error::InvalidArgument(format!("anchor {} of topic {j} is not separable", anchors[j])));
                }
            }
        }
        Ok((phi, anchors))
    }
}

/// Random separable `Φ`: word `j < T` anchors topic `j` with weight
/// `anchor_mass`, the remaining mass is spread over the other words per
/// [`TopicGenerator`].
pub fn generate_phi(cfg: &SimConfig) -> DMatrix<f64> {
    let (v, t) = (cfg.vocab_size, cfg.num_topics);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(u64::MAX);
    let mut phi = DMatrix::zeros(v, t);
    match cfg.topic_generator {
        TopicGenerator::Dirichlet { concentration } => {
            let g = Gamma::new(concentration, 1.0).expect("validated concentration");
            for j in 0..t {
                for i in t..v {
                    phi[(i, j)] = g.sample(&mut rng);
                }
            }
        }
        TopicGenerator::Zipf { exponent, spread } => {
            for i in t..v {
                let b = ((i - t + 1) as f64).powf(-exponent);
                for j in 0..t {
                    let e: f64 = rng.sample(StandardNormal);
                    phi[(i, j)] = b * (spread * e).exp();
                }
            }
        }
    }
    for j in 0..t {
        let s: f64 = phi.column(j).sum();
        if s > 0.0 {
            phi.column_mut(j).iter_mut().for_each(|x| *x *= (1.0 - cfg.anchor_mass) / s);
            phi[(j, j)] = cfg.anchor_mass;
        } else {
            phi[(j, j)] = 1.0;
        }
    }
    phi
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Generator for one `(D, N_d)` cell; stream 0 draws the covariates and
/// stream `r + 1` replicate `r`.
pub fn cell_rng(seed: u64, docs: usize, words: usize, stream: u64) -> ChaCha8Rng {
    let key = splitmix(seed ^ splitmix(docs as u64 ^ splitmix(words as u64)));
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(stream);
    rng
}

pub fn draw_covariates(rng: &mut impl Rng, docs: usize) -> Vec<f64> {
    (0..docs).map(|_| rng.sample(StandardNormal)).collect()
}

/// Topic shares of a document with covariate `z`.
pub fn allocation(cfg: &SimConfig, z: f64, rng: &mut impl Rng) -> Vec<f64> {
    let t = cfg.num_topics;
    if t == 1 {
        return vec![1.0];
    }
    let m = logistic(cfg.intercept + cfg.slope * z);
    let share: f64 = Beta::new(m * cfg.precision, (1.0 - m) * cfg.precision)
        .map(|b| b.sample(rng))
        .unwrap_or(m);
    let rest = (1.0 - share) / (t - 1) as f64;
    (0..t).map(|j| if j == cfg.distinguished_topic { share } else { rest }).collect()
}

fn vocabulary(v: usize) -> Vec<String> {
    let width = v.to_string().len();
    (0..v).map(|i| format!("w{i:0width$}")).collect()
}

fn doc_ids(d: usize) -> Vec<String> {
    let width = d.to_string().len();
    (0..d).map(|i| format!("d{i:0width$}")).collect()
}

/// One replicate corpus for the given covariates.
pub fn generate_tdm(
    cfg: &SimConfig,
    phi: &DMatrix<f64>,
    covariates: &[f64],
    words: usize,
    rng: &mut impl Rng,
) -> Result<TermDocumentMatrix> {
    let (v, d) = (phi.nrows(), covariates.len());
    if d == 0 {
        return Err(Error::InvalidArgument("no documents".into()));
    }
    let mut triplets: Vec<(usize, usize, f64)> = Vec::new();
    for (j, &z) in covariates.iter().enumerate() {
        let share = allocation(cfg, z, rng);
        let p: Vec<f64> = (0..v).map(|i| (0..share.len()).map(|k| phi[(i, k)] * share[k]).sum()).collect();
        // multinomial by successive conditional binomials
        let mut left = words as u64;
        let mut mass = 1.0;
        for (i, &pi) in p.iter().enumerate() {
            if left == 0 {
                break;
            }
            let q = if mass > 0.0 { (pi / mass).clamp(0.0, 1.0) } else { 0.0 };
            let c = if i + 1 == v { left } else { Binomial::new(left, q).expect("valid binomial").sample(rng) };
            if c > 0 {
                triplets.push((i, j, c as f64));
            }
            left -= c;
            mass -= pi;
        }
    }
    for i in 0..v {
        triplets.push((i, rng.random_range(0..d), 1.0));
    }
    TermDocumentMatrix::from_triplets(vocabulary(v), doc_ids(d), triplets)
}

/// `Θ = (ΦᵀΦ)⁻¹ Φᵀ X`, the unconstrained least-squares prevalences for a
/// known `Φ`. Entries may be negative.
pub fn fixed_phi_projection(phi: &DMatrix<f64>, tdm: &TermDocumentMatrix) -> Result<DMatrix<f64>> {
    if phi.nrows() != tdm.n_terms() {
        return Err(Error::Dimension(format!("phi has {} rows for {} terms", phi.nrows(), tdm.n_terms())));
    }
    let t = phi.ncols();
    let mut ptx = DMatrix::zeros(t, tdm.n_docs());
    for (i, j, x) in tdm.iter() {
        for k in 0..t {
            ptx[(k, j)] += phi[(i, k)] * x;
        }
    }
    let chol = (phi.transpose() * phi)
        .cholesky()
        .ok_or_else(|| Error::RankDeficientDesign("true phi has dependent columns".into()))?;
    Ok(chol.solve(&ptx))
}

/// Document-mode prevalences from the fixed-Φ projection: negative entries
/// are set to zero before each column is normalized.
pub fn fixed_phi_prevalence(theta: &DMatrix<f64>, labels: &[String], ids: &[String]) -> Result<NormalizedPrevalence> {
    normalize_prevalence(&theta.map(|x| x.max(0.0)), PrevalenceMode::PerDocumentColumns, labels, ids)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    RecalculatedPhi,
    FixedPhi,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::RecalculatedPhi => "recalculated_phi",
            Strategy::FixedPhi => "fixed_phi",
        }
    }
}

/// Intercept and covariate slope of the beta mean model for every topic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Effects {
    pub intercepts: Vec<f64>,
    pub slopes: Vec<f64>,
    pub converged: bool,
}

fn covariate_design(covariates: &[f64]) -> (DesignMatrix, DesignMatrix) {
    let d = covariates.len();
    let ids = doc_ids(d);
    let values = DMatrix::from_fn(d, 2, |r, c| if c == 0 { 1.0 } else { covariates[r] });
    let mean = DesignMatrix {
        values,
        column_names: vec!["(Intercept)".into(), "z".into()],
        doc_ids: ids.clone(),
        contrast_scheme: None,
        baseline_levels: Default::default(),
    };
    (mean, DesignMatrix::intercept_only(ids))
}

fn effects(prev: &NormalizedPrevalence, covariates: &[f64]) -> Result<Effects> {
    let (zm, zp) = covariate_design(covariates);
    let mut out = Effects { intercepts: Vec::new(), slopes: Vec::new(), converged: true };
    for topic in 0..prev.values.nrows() {
        let f = beta_fit(prev, &zm, &zp, topic, &BetaOptions::default())?;
        out.intercepts.push(f.mean_coefficients[0]);
        out.slopes.push(f.mean_coefficients[1]);
        out.converged &= f.converged;
    }
    Ok(out)
}

fn labels(t: usize) -> Vec<String> {
    (0..t).map(|j| format!("topic{j}")).collect()
}

/// Beta-regression effects of a corpus under one strategy.
pub fn estimate_effects(
    strategy: Strategy,
    tdm: &TermDocumentMatrix,
    phi: &DMatrix<f64>,
    anchors: &[usize],
    covariates: &[f64],
) -> Result<Effects> {
    let t = phi.ncols();
    let prev = match strategy {
        Strategy::RecalculatedPhi => {
            let (model, _) = fit(tdm, &AnchorSet::from_indices(anchors.to_vec()))?;
            normalize_prevalence(&model.theta, PrevalenceMode::PerDocumentColumns, &labels(t), tdm.doc_ids())?
        }
        Strategy::FixedPhi => fixed_phi_prevalence(&fixed_phi_projection(phi, tdm)?, &labels(t), tdm.doc_ids())?,
    };
    effects(&prev, covariates)
}

/// Aggregate of all replicates in a cell and its recalculated-Φ effects.
pub fn pseudo_ground_truth(cfg: &SimConfig, docs: usize, words: usize) -> Result<(TermDocumentMatrix, Effects)> {
    let (phi, anchors) = cfg.resolve_phi()?;
    let covariates = draw_covariates(&mut cell_rng(cfg.seed, docs, words, 0), docs);
    let reps = replicate_corpora(cfg, &phi, &covariates, docs, words)?;
    aggregate_truth(&reps, &phi, &anchors, &covariates, docs, words)
}

fn replicate_corpora(
    cfg: &SimConfig,
    phi: &DMatrix<f64>,
    covariates: &[f64],
    docs: usize,
    words: usize,
) -> Result<Vec<TermDocumentMatrix>> {
    (0..cfg.replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = cell_rng(cfg.seed, docs, words, r as u64 + 1);
            generate_tdm(cfg, phi, covariates, words, &mut rng).map_err(|e| wrap(e, docs, words, r))
        })
        .collect()
}

fn aggregate_truth(
    reps: &[TermDocumentMatrix],
    phi: &DMatrix<f64>,
    anchors: &[usize],
    covariates: &[f64],
    docs: usize,
    words: usize,
) -> Result<(TermDocumentMatrix, Effects)> {
    let total = TermDocumentMatrix::sum(reps)?;
    let eff = estimate_effects(Strategy::RecalculatedPhi, &total, phi, anchors, covariates)
        .map_err(|e| wrap(e, docs, words, usize::MAX))?;
    Ok((total, eff))
}

fn wrap(e: Error, docs: usize, words: usize, replicate: usize) -> Error {
    Error::Simulation { docs, words, replicate, source: Box::new(e) }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimRecord {
    pub docs: usize,
    pub words: usize,
    pub strategy: Strategy,
    pub replicate: usize,
    /// Squared slope error averaged over topics.
    pub squared_error: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MseCell {
    pub docs: usize,
    pub words: usize,
    pub strategy: Strategy,
    pub mse: f64,
    pub replicates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoTruth {
    pub docs: usize,
    pub words: usize,
    pub effects: Effects,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub records: Vec<SimRecord>,
    pub mse_table: Vec<MseCell>,
    pub pseudo_truth: Vec<PseudoTruth>,
    pub mechanism: String,
}

impl SimResult {
    pub fn mse(&self, docs: usize, words: usize, strategy: Strategy) -> Option<f64> {
        self.mse_table
            .iter()
            .find(|c| c.docs == docs && c.words == words && c.strategy == strategy)
            .map(|c| c.mse)
    }

    pub fn write_records<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["D", "N_d", "strategy", "replicate", "squared_error"]).map_err(csv_err)?;
        for r in &self.records {
            w.write_record([
                r.docs.to_string(),
                r.words.to_string(),
                r.strategy.as_str().to_string(),
                r.replicate.to_string(),
                format!("{}", r.squared_error),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_mse_table<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["D", "N_d", "strategy", "mse", "replicates"]).map_err(csv_err)?;
        for c in &self.mse_table {
            w.write_record([
                c.docs.to_string(),
                c.words.to_string(),
                c.strategy.as_str().to_string(),
                format!("{}", c.mse),
                c.replicates.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Runs every `(D, N_d)` cell of the grid under both strategies.
pub fn run_study(cfg: &SimConfig) -> Result<SimResult> {
    let (phi, anchors) = cfg.resolve_phi()?;
    let strategies = [Strategy::RecalculatedPhi, Strategy::FixedPhi];
    let mut result = SimResult {
        records: Vec::new(),
        mse_table: Vec::new(),
        pseudo_truth: Vec::new(),
        mechanism: MECHANISM.to_string(),
    };
    for &docs in &cfg.doc_grid {
        for &words in &cfg.words_grid {
            let covariates = draw_covariates(&mut cell_rng(cfg.seed, docs, words, 0), docs);
            let reps = replicate_corpora(cfg, &phi, &covariates, docs, words)?;
            let (_, truth) = aggregate_truth(&reps, &phi, &anchors, &covariates, docs, words)?;
            let per_rep: Vec<Vec<SimRecord>> = reps
                .par_iter()
                .enumerate()
                .map(|(r, tdm)| {
                    strategies
                        .iter()
                        .map(|&s| {
                            let e = estimate_effects(s, tdm, &phi, &anchors, &covariates)
                                .map_err(|e| wrap(e, docs, words, r))?;
                            let se = e
                                .slopes
                                .iter()
                                .zip(&truth.slopes)
                                .map(|(a, b)| (a - b) * (a - b))
                                .sum::<f64>()
                                / e.slopes.len() as f64;
                            Ok(SimRecord { docs, words, strategy: s, replicate: r, squared_error: se, converged: e.converged })
                        })
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<_>>()?;
            let records: Vec<SimRecord> = per_rep.into_iter().flatten().collect();
            for &s in &strategies {
                let errs: Vec<f64> = records.iter().filter(|r| r.strategy == s).map(|r| r.squared_error).collect();
                result.mse_table.push(MseCell {
                    docs,
                    words,
                    strategy: s,
                    mse: errs.iter().sum::<f64>() / errs.len() as f64,
                    replicates: errs.len(),
                });
            }
            result.records.extend(records);
            result.pseudo_truth.push(PseudoTruth { docs, words, effects: truth });
        }
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SimConfig {
        SimConfig {
            vocab_size: 30,
            doc_grid: vec![20],
            words_grid: vec![200],
            num_topics: 3,
            replicates: 3,
            ..SimConfig::desk_scale()
        }
    }

    #[test]
    fn generated_phi_is_separable_and_stochastic() {
        let cfg = small();
        let (phi, anchors) = cfg.resolve_phi().unwrap();
        assert_eq!(anchors, vec![0, 1, 2]);
        for j in 0..3 {
            assert!((phi.column(j).sum() - 1.0).abs() < 1e-12);
            assert_eq!(phi[(j, j)], cfg.anchor_mass);
        }
    }

    #[test]
    fn counting_identity() {
        let cfg = SimConfig { vocab_size: 1000, ..small() };
        let (phi, _) = cfg.resolve_phi().unwrap();
        let mut rng = cell_rng(1, 100, 1000, 1);
        let z = draw_covariates(&mut rng, 100);
        let x = generate_tdm(&cfg, &phi, &z, 1000, &mut rng).unwrap();
        let total: f64 = x.column_sums().iter().sum();
        assert_eq!(total, (100 * 1000 + 1000) as f64);
        assert_eq!(x.n_terms(), 1000);
    }

    #[test]
    fn seeding_only() {
        let cfg = small();
        let (phi, _) = cfg.resolve_phi().unwrap();
        let mut rng = cell_rng(2, 20, 0, 1);
        let x = generate_tdm(&cfg, &phi, &[0.0; 20], 0, &mut rng).unwrap();
        assert_eq!(x.column_sums().iter().sum::<f64>(), 30.0);
        assert!(x.row_sums().iter().all(|&s| s == 1.0));
    }

    #[test]
    fn single_topic_allocation() {
        let cfg = SimConfig { num_topics: 1, ..small() };
        let mut rng = cell_rng(3, 1, 1, 1);
        assert_eq!(allocation(&cfg, 1.3, &mut rng), vec![1.0]);
    }

    #[test]
    fn rejects_non_separable_phi() {
        let cfg = SimConfig {
            vocab_size: 3,
            num_topics: 2,
            true_phi: Some(vec![vec![0.5, 0.1], vec![0.0, 0.5], vec![0.5, 0.4]]),
            anchors: Some(vec![0, 1]),
            ..small()
        };
        assert!(cfg.resolve_phi().is_err());
    }

    #[test]
    fn projection_satisfies_normal_equations() {
        let cfg = small();
        let (phi, _) = cfg.resolve_phi().unwrap();
        let mut rng = cell_rng(4, 20, 200, 1);
        let z = draw_covariates(&mut rng, 20);
        let x = generate_tdm(&cfg, &phi, &z, 200, &mut rng).unwrap();
        let theta = fixed_phi_projection(&phi, &x).unwrap();
        let resid = x.to_dense() - &phi * &theta;
        let ne = phi.transpose() * resid;
        assert!(ne.amax() < 1e-8, "{}", ne.amax());
    }

    #[test]
    fn study_is_reproducible() {
        let cfg = small();
        let a = run_study(&cfg).unwrap();
        let b = run_study(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.records.len(), 6);
        assert_eq!(a.mse_table.len(), 2);
        assert!(a.mse_table.iter().all(|c| c.mse >= 0.0));
    }

    #[test]
    fn one_replicate_truth_is_its_own_fit() {
        let cfg = SimConfig { replicates: 1, ..small() };
        let (phi, anchors) = cfg.resolve_phi().unwrap();
        let (total, truth) = pseudo_ground_truth(&cfg, 20, 200).unwrap();
        let z = draw_covariates(&mut cell_rng(cfg.seed, 20, 200, 0), 20);
        let own = estimate_effects(Strategy::RecalculatedPhi, &total, &phi, &anchors, &z).unwrap();
        assert_eq!(truth, own);
        let res = run_study(&cfg).unwrap();
        let rec = res.records.iter().find(|r| r.strategy == Strategy::RecalculatedPhi).unwrap();
        assert_eq!(rec.squared_error, 0.0);
    }
}
