mod common;

use common::*;
use geocal_core::aggregate::{build_shape_bank, BankEntry};
use geocal_core::augment::{
    augment_class, augment_multi_domain, augment_single_domain, perturbation_covariance, sample_perturbation,
};
use geocal_core::rng::stream;
use geocal_core::{AugmentPlan, ClientUpload, CovarianceMode, EmbeddingSet, Error, GeometricShape, Prototype, RowOrigin, ScaleMode, ShapeBank};

fn axis_shape(l: [f64; 2]) -> GeometricShape {
    GeometricShape::from_parts(2, vec![1.0, 0.0, 0.0, 1.0], l.to_vec()).unwrap()
}

#[test]
fn perturbation_covariance_both_modes() {
    let shape = axis_shape([2.0, 1.0]);
    for (mode, want) in [(ScaleMode::Lambda, [4.0, 1.0]), (ScaleMode::SqrtLambda, [2.0, 1.0])] {
        let mut rng = stream(17);
        let draws: Vec<Vec<f64>> = (0..100_000).map(|_| sample_perturbation(&shape, mode, &mut rng)).collect();
        let (_, cov) = empirical_covariance(&draws);
        let target = geocal_core::Matrix::from_diagonal(&want);
        assert!(cov.relative_frobenius_error(&target) < 0.02, "{mode:?}");
        assert!(perturbation_covariance(&shape, mode).frobenius_distance(&target) < 1e-15);
    }
}

#[test]
fn augment_from_origin_reproduces_squared_spectrum() {
    let p = 6;
    let cov = random_psd(p, 10, 3);
    let shape = geocal_core::geometry::shape_of(&cov, 3).unwrap();
    let origin = vec![0.0f32; p];
    let new = augment_class(&[&origin], &shape, 10_001, ScaleMode::Lambda, &mut stream(5)).unwrap();
    assert_eq!(new.len(), 10_000);
    let rows: Vec<Vec<f64>> = new.iter().map(|r| r.iter().map(|&v| v as f64).collect()).collect();
    let (_, emp) = empirical_covariance(&rows);
    let target = shape.weighted_outer_sum(|l| l * l);
    assert!(emp.relative_frobenius_error(&target) < 0.03);
}

fn one_class_bank(p: usize, m: usize) -> ShapeBank {
    let rows = random_rows(40, p, 2);
    let set = set_from_rows(&rows, &[0; 40], 1);
    build_shape_bank(&[ClientUpload::from_set(0, 0, &set, CovarianceMode::Centered)], m, false).unwrap()
}

#[test]
fn single_domain_counts() {
    let bank = one_class_bank(4, 2);
    let client = set_from_rows(&random_rows(5, 4, 8), &[0; 5], 1);
    let out = augment_single_domain(&client, &bank, &AugmentPlan::single_domain(1)).unwrap();
    assert_eq!(out.class_counts(), vec![2000]);
    assert_eq!(&out.data()[..20], client.data());
    assert_eq!(out.origins().unwrap().iter().filter(|o| **o == RowOrigin::Perturbed).count(), 1995);

    let full = set_from_rows(&random_rows(10, 4, 8), &[0; 10], 1);
    let plan = AugmentPlan { target_count_per_class: 10, ..AugmentPlan::single_domain(1) };
    assert_eq!(augment_single_domain(&full, &bank, &plan).unwrap(), full);

    let two = set_from_rows(&random_rows(2, 4, 8), &[0, 1], 2);
    assert_eq!(augment_single_domain(&two, &bank, &plan).unwrap_err(), Error::MissingShape { class: 1 });
}

#[test]
fn multi_domain_prototype_step() {
    let (p, classes, domains) = (3, 10, 3);
    let shape = GeometricShape::degenerate(p, 2);
    let entries = (0..classes).map(|_| BankEntry { shape: shape.clone(), mean: vec![0.0; p], count: 1 }).collect();
    let protos: Vec<Prototype> = (0..classes)
        .flat_map(|c| (0..domains).map(move |d| Prototype::new(c, vec![c as f64, d as f64, 1.0]).with_domain(d)))
        .collect();
    let bank = ShapeBank::new(p, 2, entries, Some(protos)).unwrap();
    let n = classes;
    let client = EmbeddingSet::new(p, vec![0.5; n * p], (0..n as u16).collect(), vec![0; n], classes, domains).unwrap();
    let plan = AugmentPlan { target_count_per_class: 1, ..AugmentPlan::multi_domain(4) };
    let out = augment_multi_domain(&client, &bank, &plan).unwrap();
    assert_eq!(out.len() - client.len(), classes * 2 * 500);
    // Zero shape: every transferred row equals its prototype.
    for i in client.len()..out.len() {
        let want = [out.label(i) as f32, out.domain(i) as f32, 1.0];
        assert_eq!(out.row(i), &want);
        assert_eq!(out.origin(i), RowOrigin::PrototypeTransfer);
        assert_ne!(out.domain(i), 0);
    }
}

#[test]
fn single_domain_multi_collapse() {
    let rows = random_rows(30, 3, 4);
    let set = set_from_rows(&rows, &[[0u16; 15], [1u16; 15]].concat(), 2);
    let bank = build_shape_bank(&[ClientUpload::from_set(0, 0, &set, CovarianceMode::Centered)], 2, true).unwrap();
    let client = set.subset(&[0, 1, 2, 20]);
    let plan = AugmentPlan::multi_domain(9);
    assert_eq!(augment_multi_domain(&client, &bank, &plan).unwrap(), augment_single_domain(&client, &bank, &plan).unwrap());
}

#[test]
fn augmentation_is_deterministic() {
    let bank = one_class_bank(4, 2);
    let client = set_from_rows(&random_rows(3, 4, 1), &[0; 3], 1);
    let plan = AugmentPlan { target_count_per_class: 50, ..AugmentPlan::single_domain(3) };
    let a = augment_single_domain(&client, &bank, &plan).unwrap();
    let b = augment_single_domain(&client, &bank, &plan).unwrap();
    let bits = |s: &EmbeddingSet| s.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
}
