//! Synthetic corpora with known structure, for tests and benchmarks.

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::Result;
use crate::tdm::TermDocumentMatrix;

/// An exactly separable `X = ΦΘ` with anchors on the first `T` rows.
#[derive(Debug, Clone)]
pub struct SeparableInstance {
    pub tdm: TermDocumentMatrix,
    pub phi: DMatrix<f64>,
    pub theta: DMatrix<f64>,
    pub anchors: Vec<usize>,
}

/// Random exact instance. Every non-anchor row is `Σ_j c_j x_{a_j}` with
/// 1 to 3 non-zero `c_j` summing to at most 0.9, so it lies strictly inside
/// the hull of the anchor rows and the greedy projection picks anchors only.
/// Rows are shuffled when `shuffle` is set; `anchors` follows the shuffle.
pub fn separable_instance(rng: &mut impl Rng, v: usize, t: usize, d: usize, shuffle: bool) -> Result<SeparableInstance> {
    assert!(t >= 1 && v >= t && d >= t, "need T <= V and T <= D");
    let mut c = DMatrix::zeros(v, t);
    for i in t..v {
        let k = rng.random_range(1..=3.min(t));
        let support = sample(rng, t, k);
        let total: f64 = rng.random_range(0.05..0.9);
        let w: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..1.0)).collect();
        let ws: f64 = w.iter().sum();
        for (j, wj) in support.iter().zip(&w) {
            c[(i, j)] = total * wj / ws;
        }
    }
    let lambdas: Vec<f64> = (0..t).map(|j| 1.0 / (1.0 + c.column(j).sum())).collect();
    let mut phi = DMatrix::from_fn(v, t, |i, j| c[(i, j)] * lambdas[j]);
    for j in 0..t {
        phi[(j, j)] = lambdas[j];
    }
    let g = Gamma::new(2.0, 50.0).expect("valid gamma");
    let theta = DMatrix::from_fn(t, d, |_, _| g.sample(rng) + 1.0);

    let mut order: Vec<usize> = (0..v).collect();
    if shuffle {
        for i in (1..v).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
    }
    // row `r` of the output is row `order[r]` of the construction
    let phi = DMatrix::from_fn(v, t, |r, j| phi[(order[r], j)]);
    let mut anchors = vec![0; t];
    for (r, &o) in order.iter().enumerate() {
        if o < t {
            anchors[o] = r;
        }
    }
    let x = &phi * &theta;
    Ok(SeparableInstance {
        tdm: TermDocumentMatrix::from_dense_unlabelled(&x)?,
        phi,
        theta,
        anchors,
    })
}

/// Sparse integer counts from a separable model: `T` sparse topics on `V`
/// words with anchors `0..T`, each document mixing about three topics and
/// holding `words_per_doc` tokens on average. Every term occurs at least once.
pub fn sparse_counts(rng: &mut impl Rng, v: usize, t: usize, d: usize, words_per_doc: usize) -> Result<TermDocumentMatrix> {
    assert!(t >= 1 && v > t && d >= t, "need T < V and T <= D");
    let g = Gamma::new(0.1, 1.0).expect("valid gamma");
    // cumulative word distribution per topic over its own anchor and a random subset
    let per_topic = ((v - t) / 4).max(1);
    let topics: Vec<(Vec<usize>, Vec<f64>)> = (0..t)
        .map(|j| {
            let mut words: Vec<usize> = sample(rng, v - t, per_topic).into_iter().map(|i| i + t).collect();
            words.push(j);
            let mut w: Vec<f64> = words.iter().map(|_| g.sample(rng) + 1e-3).collect();
            let last = w.len() - 1;
            w[last] = w.iter().sum::<f64>() * 0.05;
            let mut acc = 0.0;
            let cum = w
                .iter()
                .map(|x| {
                    acc += x;
                    acc
                })
                .collect::<Vec<_>>();
            (words, cum)
        })
        .collect();
    let mix = Gamma::new(0.3, 1.0).expect("valid gamma");
    let mut triplets = Vec::new();
    for doc in 0..d {
        let k = 3.min(t);
        let chosen = sample(rng, t, k).into_vec();
        let mut share: Vec<f64> = chosen.iter().map(|_| mix.sample(rng) + 1e-2).collect();
        let s: f64 = share.iter().sum();
        share.iter_mut().for_each(|x| *x /= s);
        let n = rng.random_range(words_per_doc / 2..=words_per_doc * 3 / 2).max(1);
        for _ in 0..n {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut topic = chosen[k - 1];
            for (c, &p) in chosen.iter().zip(&share) {
                acc += p;
                if u < acc {
                    topic = *c;
                    break;
                }
            }
            let (words, cum) = &topics[topic];
            let target = rng.random::<f64>() * cum[cum.len() - 1];
            let pos = cum.partition_point(|&c| c < target).min(words.len() - 1);
            triplets.push((words[pos], doc, 1.0));
        }
    }
    for i in 0..v {
        triplets.push((i, rng.random_range(0..d), 1.0));
    }
    let vocab = (0..v).map(|i| format!("w{i}")).collect();
    let ids = (0..d).map(|j| format!("d{j}")).collect();
    TermDocumentMatrix::from_triplets(vocab, ids, triplets)
}
