//! Shared inputs for the criterion benchmarks.

use brett_core::synth::sparse_counts;
use brett_core::{fit, select_anchors, DesignMatrix, TermDocumentMatrix, TopicModel};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A sparse count corpus of the given shape, fixed by `seed`.
pub fn corpus(seed: u64, v: usize, t: usize, d: usize, words_per_doc: usize) -> TermDocumentMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sparse_counts(&mut rng, v, t, d, words_per_doc).expect("valid corpus shape")
}

pub fn fitted(tdm: &TermDocumentMatrix, t: usize) -> TopicModel {
    let anchors = select_anchors(tdm, t, &Default::default()).expect("anchors");
    fit(tdm, &anchors).expect("fit").0
}

/// Intercept, a two-level group and one standard-uniform covariate.
pub fn design(seed: u64, d: usize) -> DesignMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = DMatrix::from_fn(d, 3, |j, c| match c {
        0 => 1.0,
        1 => (j % 2) as f64,
        _ => rng.random::<f64>(),
    });
    DesignMatrix::from_values(values, vec!["(Intercept)".into(), "g[b]".into(), "x".into()], (0..d).map(|j| format!("d{j}")).collect())
        .expect("full-rank design")
}

/// Random dense NNLS system with `m` rows and `n` columns.
pub fn nnls_system(seed: u64, m: usize, n: usize) -> (DMatrix<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = DMatrix::from_fn(m, n, |_, _| rng.random::<f64>());
    let b = (0..m).map(|_| rng.random_range(-1.0..2.0)).collect();
    (a, b)
}
