//! Anchor-word topic models with covariate regression on topic prevalence.
//!
//! The pipeline runs corpus preprocessing, anchor selection, separable NMF,
//! and then OLS with a bootstrap or beta regression of the prevalences on
//! document covariates. [`simulate`] holds the Monte Carlo study tooling.

pub mod anchors;
pub mod corpus;
pub mod error;
pub mod factorize;
pub mod linalg;
pub mod nnls;
pub mod regress;
pub mod simulate;
pub mod special;
pub mod stats;
pub mod synth;
pub mod tdm;

pub use anchors::{residual_norms, select_anchors, AnchorRecord, AnchorSet};
pub use corpus::{
    build_design, build_tdm, preprocess, ContrastScheme, CovariateValue, DesignMatrix, DesignSpec, Document,
    PreprocessConfig,
};
pub use error::{Error, Result};
pub use factorize::{fit, fit_with, rank_topics, top_words, FitOptions, FitReport, RankedTopic, TopicModel};
pub use nnls::{solve_nnls, solve_nnls_batch, NnlsProblem, NnlsSolution};
pub use tdm::TermDocumentMatrix;
