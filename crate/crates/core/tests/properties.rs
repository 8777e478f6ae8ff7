//! Randomized invariant checks over the public API.

use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use voxreport::morphology::{dilate, erode, morphological_gradient, StructuringElement};
use voxreport::roi::mask_prompt_features;
use voxreport::seg_metrics::{dsc, evaluate, precision, sensitivity, HdMode};
use voxreport::text_metrics::{bleu, rouge_n, TokenSeq};
use voxreport::vio::{self, VvlObject};
use voxreport::volume::{AtlasLabelMap, BinaryMask, Dims, FeatureGrid, Spacing, Volume};

fn dims_strategy(max: usize) -> impl Strategy<Value = Dims> {
    (1..=max, 1..=max, 1..=max).prop_map(|(x, y, z)| Dims::new(x, y, z).unwrap())
}

fn spacing_strategy() -> impl Strategy<Value = Spacing> {
    (0.1f32..8.0, 0.1f32..8.0, 0.1f32..8.0)
}

fn mask_strategy(max: usize) -> impl Strategy<Value = BinaryMask> {
    dims_strategy(max).prop_flat_map(|dims| {
        proptest::collection::vec(any::<bool>(), dims.voxel_count())
            .prop_map(move |bits| BinaryMask::from_bits(dims, bits).unwrap())
    })
}

fn paired_masks(max: usize) -> impl Strategy<Value = (BinaryMask, BinaryMask)> {
    dims_strategy(max).prop_flat_map(|dims| {
        let n = dims.voxel_count();
        (
            proptest::collection::vec(any::<bool>(), n),
            proptest::collection::vec(any::<bool>(), n),
        )
            .prop_map(move |(a, b)| {
                (
                    BinaryMask::from_bits(dims, a).unwrap(),
                    BinaryMask::from_bits(dims, b).unwrap(),
                )
            })
    })
}

fn volume_strategy(max: usize) -> impl Strategy<Value = Volume> {
    (dims_strategy(max), spacing_strategy()).prop_flat_map(|(dims, spacing)| {
        proptest::collection::vec(-1.0e6f32..1.0e6, dims.voxel_count())
            .prop_map(move |data| Volume::new(dims, spacing, data).unwrap())
    })
}

fn atlas_strategy(max: usize) -> impl Strategy<Value = AtlasLabelMap> {
    dims_strategy(max).prop_flat_map(|dims| {
        proptest::collection::vec(0u16..=3, dims.voxel_count()).prop_map(move |labels| {
            let names: BTreeMap<u16, String> =
                (1..=3u16).map(|l| (l, format!("part {l}"))).collect();
            AtlasLabelMap::new(dims, labels, names).unwrap()
        })
    })
}

fn se_strategy() -> impl Strategy<Value = StructuringElement> {
    prop_oneof![
        Just(StructuringElement::Face6),
        Just(StructuringElement::Full26),
        Just(StructuringElement::Ball(1)),
        Just(StructuringElement::Ball(2)),
    ]
}

fn word_list() -> impl Strategy<Value = Vec<String>> {
    proptest::collection::vec(
        proptest::sample::select(vec!["alpha", "beta", "gamma", "delta", "epsilon", "zeta"]),
        1..12,
    )
    .prop_map(|ws| ws.into_iter().map(str::to_string).collect())
}

fn seq_of(tokens: &[String]) -> TokenSeq {
    TokenSeq::tokenize(&tokens.join(" "))
}

proptest! {
    #[test]
    fn vio_volume_round_trip(volume in volume_strategy(5)) {
        let bytes = vio::encode_volume(&volume);
        match vio::decode(&bytes).unwrap() {
            VvlObject::Volume(back) => {
                prop_assert_eq!(back.dims(), volume.dims());
                prop_assert_eq!(back.spacing(), volume.spacing());
                prop_assert!(
                    back.data().iter().zip(volume.data()).all(|(a, b)| a.to_bits() == b.to_bits())
                );
            }
            other => prop_assert!(false, "decoded wrong kind {}", other.kind()),
        }
    }

    #[test]
    fn vio_mask_round_trip(mask in mask_strategy(5), spacing in spacing_strategy()) {
        let bytes = vio::encode_mask(&mask, spacing).unwrap();
        match vio::decode(&bytes).unwrap() {
            VvlObject::Mask { mask: back, spacing: sp } => {
                prop_assert_eq!(back, mask);
                prop_assert_eq!(sp, spacing);
            }
            other => prop_assert!(false, "decoded wrong kind {}", other.kind()),
        }
    }

    #[test]
    fn vio_atlas_round_trip(atlas in atlas_strategy(4), spacing in spacing_strategy()) {
        let bytes = vio::encode_atlas(&atlas, spacing).unwrap();
        match vio::decode(&bytes).unwrap() {
            VvlObject::Atlas { atlas: back, spacing: sp } => {
                prop_assert_eq!(back.dims(), atlas.dims());
                prop_assert_eq!(back.labels(), atlas.labels());
                prop_assert_eq!(back.label_names(), atlas.label_names());
                prop_assert_eq!(sp, spacing);
            }
            other => prop_assert!(false, "decoded wrong kind {}", other.kind()),
        }
    }

    #[test]
    fn erosion_dilation_duality(mask in mask_strategy(6), se in se_strategy()) {
        prop_assert_eq!(erode(&mask, se), dilate(&mask.complement(), se).complement());
    }

    #[test]
    fn dilation_extensive_erosion_antiextensive(mask in mask_strategy(6), se in se_strategy()) {
        prop_assert!(mask.is_subset_of(&dilate(&mask, se)));
        prop_assert!(erode(&mask, se).is_subset_of(&mask));
        prop_assert_eq!(
            morphological_gradient(&mask, se),
            dilate(&mask, se).and_not(&erode(&mask, se))
        );
    }

    #[test]
    fn dsc_is_symmetric((p, g) in paired_masks(6)) {
        prop_assert_eq!(dsc(&p, &g).unwrap(), dsc(&g, &p).unwrap());
    }

    #[test]
    fn precision_transposes_to_sensitivity((p, g) in paired_masks(6)) {
        match (precision(&p, &g), sensitivity(&g, &p)) {
            (Ok(a), Ok(b)) => prop_assert_eq!(a, b),
            (Err(_), Err(_)) => prop_assert!(!p.any()),
            (a, b) => prop_assert!(false, "asymmetric outcome: {a:?} vs {b:?}"),
        }
    }

    #[test]
    fn evaluate_agrees_with_scalar_metrics((p, g) in paired_masks(5)) {
        let spacing = (1.0, 1.5, 2.0);
        let score = evaluate(&p, &g, spacing, HdMode::Symmetric).unwrap();
        prop_assert_eq!(score.dsc, dsc(&p, &g).unwrap());
        prop_assert_eq!(score.pre, precision(&p, &g).ok());
        prop_assert_eq!(score.se, sensitivity(&p, &g).ok());
        if p.any() && g.any() {
            prop_assert_eq!(
                score.hd_mm,
                Some(voxreport::seg_metrics::hausdorff(&p, &g, spacing, HdMode::Symmetric).unwrap())
            );
        } else {
            prop_assert_eq!(score.hd_mm, None);
        }
    }

    #[test]
    fn tokenize_is_idempotent(text in any::<String>()) {
        let once = TokenSeq::tokenize(&text);
        let twice = TokenSeq::tokenize(&once.tokens().join(" "));
        prop_assert_eq!(once.tokens(), twice.tokens());
    }

    #[test]
    fn bleu_of_identical_sequences_is_one(tokens in proptest::collection::vec(
        proptest::sample::select(vec!["alpha", "beta", "gamma", "delta"]),
        4..12,
    )) {
        let tokens: Vec<String> = tokens.into_iter().map(str::to_string).collect();
        let seq = seq_of(&tokens);
        let score = bleu(&seq, &[seq.clone()], [0.25, 0.25, 0.25, 0.25]).unwrap();
        prop_assert!((score - 1.0).abs() <= 1e-12, "self-bleu {score}");
    }

    #[test]
    fn rouge1_ignores_candidate_order(cand in word_list(), reference in word_list(), shuffle_seed in any::<u64>()) {
        let mut shuffled = cand.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle_seed));
        let refs = [seq_of(&reference)];
        let a = rouge_n(&seq_of(&cand), &refs, 1).unwrap();
        let b = rouge_n(&seq_of(&shuffled), &refs, 1).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn masked_features_keep_global_half(dims in dims_strategy(4), mask_bits in proptest::collection::vec(any::<bool>(), 64)) {
        let n = dims.voxel_count();
        let channels = 2usize;
        let data: Vec<f32> = (0..n * channels).map(|i| i as f32 * 0.5 - 3.0).collect();
        let features = FeatureGrid::new(dims, channels, data).unwrap();
        let mask = BinaryMask::from_bits(dims, mask_bits[..n].to_vec()).unwrap();

        let out = mask_prompt_features(&features, &mask).unwrap();
        prop_assert_eq!(out.channels(), 2 * channels);
        prop_assert_eq!(out.dims(), dims);
        for z in 0..dims.nz {
            for y in 0..dims.ny {
                for x in 0..dims.nx {
                    for c in 0..channels {
                        prop_assert_eq!(out.at(c, x, y, z), features.at(c, x, y, z));
                        let want = if mask.get(x, y, z) { features.at(c, x, y, z) } else { 0.0 };
                        prop_assert_eq!(out.at(channels + c, x, y, z), want);
                    }
                }
            }
        }
    }

    #[test]
    fn structure_masks_partition_the_brain(atlas in atlas_strategy(5)) {
        let mut union = BinaryMask::empty(atlas.dims());
        for label in atlas.labels_present() {
            let m = atlas.structure_mask(label).unwrap();
            prop_assert!(!m.intersects(&union), "structures overlap");
            union.or_with(&m);
        }
        prop_assert_eq!(union, atlas.brain_mask());
    }
}
