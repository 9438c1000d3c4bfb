use std::collections::BTreeSet;

use brett_core::synth::separable_instance;
use brett_core::{fit, residual_norms, select_anchors, AnchorSet, TermDocumentMatrix};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Greedy selection by explicit Gram–Schmidt on the dense rows.
fn gram_schmidt_picks(x: &DMatrix<f64>, t: usize) -> Vec<usize> {
    let mut r = x.clone();
    let mut picks = Vec::new();
    for _ in 0..t {
        let norms: Vec<f64> = (0..r.nrows()).map(|i| r.row(i).norm_squared()).collect();
        let max = norms.iter().cloned().fold(0.0, f64::max);
        let i = (0..norms.len()).find(|&i| norms[i] >= max * (1.0 - 1e-12)).unwrap();
        picks.push(i);
        let q = r.row(i).transpose() / norms[i].sqrt();
        let coef = &r * &q;
        r -= coef * q.transpose();
    }
    picks
}

fn dense_matrix() -> impl Strategy<Value = (DMatrix<f64>, usize)> {
    (2usize..=25, 2usize..=15).prop_flat_map(|(v, d)| {
        (
            proptest::collection::vec(0.0f64..10.0, v * d).prop_map(move |vals| DMatrix::from_vec(v, d, vals)),
            1..=v.min(d),
        )
    })
}

fn no_exclusions() -> BTreeSet<String> {
    BTreeSet::new()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn spa_matches_gram_schmidt((x, t) in dense_matrix()) {
        let tdm = TermDocumentMatrix::from_dense_unlabelled(&x).unwrap();
        let got = select_anchors(&tdm, t, &no_exclusions()).unwrap();
        prop_assert_eq!(got.indices, gram_schmidt_picks(&x, t));
    }

    #[test]
    fn permuting_terms_permutes_anchors((x, t) in dense_matrix(), seed in any::<u64>()) {
        let v = x.nrows();
        let mut perm: Vec<usize> = (0..v).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..v).rev() {
            perm.swap(i, rand::Rng::random_range(&mut rng, 0..=i));
        }
        let px = DMatrix::from_fn(v, x.ncols(), |r, c| x[(perm[r], c)]);
        let a = select_anchors(&TermDocumentMatrix::from_dense_unlabelled(&x).unwrap(), t, &no_exclusions()).unwrap();
        let b = select_anchors(&TermDocumentMatrix::from_dense_unlabelled(&px).unwrap(), t, &no_exclusions()).unwrap();
        let mapped: Vec<usize> = b.indices.iter().map(|&i| perm[i]).collect();
        prop_assert_eq!(mapped, a.indices);
    }

    #[test]
    fn residuals_drop_on_picked_rows((x, t) in dense_matrix()) {
        let tdm = TermDocumentMatrix::from_dense_unlabelled(&x).unwrap();
        let a = select_anchors(&tdm, t, &no_exclusions()).unwrap();
        let r = residual_norms(&tdm, &a.indices).unwrap();
        for &i in &a.indices {
            prop_assert_eq!(r[i], 0.0);
        }
        let before = residual_norms(&tdm, &[]).unwrap();
        for i in 0..x.nrows() {
            prop_assert!(r[i] <= before[i] * (1.0 + 1e-12) + 1e-12);
            prop_assert!((before[i] - x.row(i).norm()).abs() <= 1e-12 * (1.0 + before[i]));
        }
    }

    #[test]
    fn exact_instances_are_recovered(seed in any::<u64>(), v in 10usize..=60, t in 1usize..=6, d in 6usize..=40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = separable_instance(&mut rng, v, t, d.max(t), true).unwrap();
        let anchors = select_anchors(&inst.tdm, t, &no_exclusions()).unwrap();
        let got: BTreeSet<usize> = anchors.indices.iter().copied().collect();
        let want: BTreeSet<usize> = inst.anchors.iter().copied().collect();
        prop_assert_eq!(&got, &want);

        let (model, report) = fit(&inst.tdm, &anchors).unwrap();
        prop_assert!(report.relative_residual <= 1e-8, "{}", report.relative_residual);
        for (j, &a) in anchors.indices.iter().enumerate() {
            let truth = inst.anchors.iter().position(|&b| b == a).unwrap();
            for i in 0..v {
                prop_assert!((model.phi[(i, j)] - inst.phi[(i, truth)]).abs() <= 1e-8);
            }
            for k in 0..inst.theta.ncols() {
                let th = inst.theta[(truth, k)];
                prop_assert!((model.theta[(j, k)] - th).abs() <= 1e-8 * th.max(1.0));
            }
        }
    }

    #[test]
    fn fitted_phi_is_stochastic((x, t) in dense_matrix()) {
        let tdm = TermDocumentMatrix::from_dense_unlabelled(&x).unwrap();
        let anchors = select_anchors(&tdm, t, &no_exclusions()).unwrap();
        let (model, _) = fit(&tdm, &anchors).unwrap();
        for j in 0..t {
            prop_assert!((model.phi.column(j).sum() - 1.0).abs() <= 1e-10);
            let l = model.lambdas[j];
            prop_assert!(l > 0.0 && l <= 1.0);
        }
        prop_assert!(model.phi.iter().all(|&p| p >= 0.0));
        prop_assert!(model.theta.iter().all(|&p| p >= 0.0));
    }

    #[test]
    fn scaling_a_document_scales_its_prevalences(seed in any::<u64>(), c in 0.1f64..20.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = separable_instance(&mut rng, 30, 4, 12, false).unwrap();
        let anchors = AnchorSet::from_indices(inst.anchors.clone());
        let mut x = inst.tdm.to_dense();
        x.column_mut(3).iter_mut().for_each(|v| *v *= c);
        let scaled = TermDocumentMatrix::from_dense_unlabelled(&x).unwrap();
        let (a, _) = fit(&inst.tdm, &anchors).unwrap();
        let (b, _) = fit(&scaled, &anchors).unwrap();
        prop_assert!((&a.phi - &b.phi).amax() <= 1e-9);
        for j in 0..4 {
            prop_assert!((b.theta[(j, 3)] - c * a.theta[(j, 3)]).abs() <= 1e-8 * (1.0 + b.theta[(j, 3)]));
        }
    }
}

#[test]
fn small_spa_examples() {
    let x = DMatrix::from_row_slice(3, 2, &[3.0, 0.0, 0.0, 2.0, 1.0, 1.0]);
    let tdm = TermDocumentMatrix::from_dense_unlabelled(&x).unwrap();
    assert_eq!(select_anchors(&tdm, 2, &no_exclusions()).unwrap().indices, vec![0, 1]);
    let r = residual_norms(&tdm, &[0]).unwrap();
    assert_eq!(r[0], 0.0);
    assert!((r[1] - 2.0).abs() < 1e-15 && (r[2] - 1.0).abs() < 1e-15);
}
