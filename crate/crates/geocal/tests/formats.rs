use geocal::formats::{
    decode_bank, decode_params, decode_upload, encode_bank, encode_params, encode_upload, load_container,
    save_container, Container, LoadOptions,
};
use geocal::GeocalError;
use geocal_core::aggregate::build_shape_bank;
use geocal_core::synth::{GaussianMixture, MixtureSpec};
use geocal_core::{Architecture, ClassifierParams, ClientUpload, CovarianceMode, EmbeddingSet, RowOrigin};
use proptest::prelude::*;

fn arb_set() -> impl Strategy<Value = EmbeddingSet> {
    (1usize..6, 0usize..20, 1usize..4, 1usize..3, any::<bool>(), any::<bool>()).prop_flat_map(
        |(p, n, c, d, names, origins)| {
            (
                proptest::collection::vec(any::<f32>().prop_filter("finite", |v| v.is_finite()), n * p),
                proptest::collection::vec(0..c as u16, n),
                proptest::collection::vec(0..d as u16, n),
                proptest::collection::vec(0u8..3, n),
            )
                .prop_map(move |(data, labels, domains, codes)| {
                    let mut set = EmbeddingSet::new(p, data, labels, domains, c, d).unwrap();
                    if names {
                        set = set.with_class_names((0..c).map(|i| format!("class {i}")).collect()).unwrap();
                    }
                    if origins {
                        set = set.with_origins(codes.into_iter().map(|k| RowOrigin::from_code(k).unwrap()).collect()).unwrap();
                    }
                    set
                })
        },
    )
}

proptest! {
    #[test]
    fn container_round_trip_is_byte_exact(set in arb_set()) {
        let bytes = Container::new(set.clone()).encode();
        let back = Container::decode(&bytes).unwrap();
        prop_assert_eq!(back.set(), &set);
        prop_assert_eq!(back.encode(), bytes);
    }
}

fn mixture_set(seed: u64) -> EmbeddingSet {
    let spec = MixtureSpec { num_classes: 3, dim: 5, ..MixtureSpec::default() };
    GaussianMixture::new(spec).unwrap().sample_balanced(12, seed).unwrap()
}

#[test]
fn file_round_trip_and_l2_option() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("nested/set.geob");
    let set = mixture_set(1);
    save_container(&set, &path).unwrap();
    assert_eq!(load_container(&path, LoadOptions::default()).unwrap(), set);
    let normalized = load_container(&path, LoadOptions { l2_normalize: true }).unwrap();
    for row in normalized.rows() {
        let norm: f64 = row.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
    }
}

#[test]
fn upload_bank_and_params_round_trip() {
    let uploads: Vec<ClientUpload> = (0..2)
        .map(|k| ClientUpload::from_set(k, k as usize, &mixture_set(k as u64), CovarianceMode::Centered))
        .collect();
    for u in &uploads {
        assert_eq!(&decode_upload(&encode_upload(u)).unwrap(), u);
    }
    for prototypes in [false, true] {
        let bank = build_shape_bank(&uploads, 3, prototypes).unwrap();
        let bytes = encode_bank(&bank);
        assert_eq!(decode_bank(&bytes).unwrap(), bank);
        assert_eq!(encode_bank(&decode_bank(&bytes).unwrap()), bytes);
    }
    for arch in [Architecture::linear(5, 3), Architecture::mlp(5, 7, 3)] {
        let p = ClassifierParams::init(arch, 4);
        assert_eq!(decode_params(&encode_params(&p)).unwrap().flatten(), p.flatten());
    }
}

#[test]
fn corrupt_inputs_are_rejected() {
    let p = ClassifierParams::init(Architecture::linear(2, 2), 0);
    let bytes = encode_params(&p);
    assert!(matches!(decode_params(&bytes[..bytes.len() - 1]), Err(GeocalError::TruncatedFile { .. })));
    assert!(matches!(decode_upload(&bytes), Err(GeocalError::BadMagic { .. })));
    let mut long = bytes.clone();
    long.push(0);
    assert!(matches!(decode_params(&long), Err(GeocalError::DimensionMismatch { .. })));
}
