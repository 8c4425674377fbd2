use std::collections::{BTreeMap, HashSet};

use fewshot_stack::ensemble::{flatten, reshape_stack};
use fewshot_stack::episodic::{sample_episode, EpisodeOutcome, EpisodeSpec, EvalReport};
use fewshot_stack::store::{FeatureRecord, FeatureStore, ItemKey, JoinMode};
use fewshot_stack::synth::{clustered_dataset, SynthSpec};
use fewshot_stack::{join, Error};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn finite_f32() -> impl Strategy<Value = f32> {
    any::<u32>().prop_map(|bits| {
        let v = f32::from_bits(bits);
        if v.is_finite() {
            v
        } else {
            f32::from_bits(bits & 0x807f_ffff)
        }
    })
}

fn store_strategy() -> impl Strategy<Value = FeatureStore> {
    (
        "[a-zA-Z0-9_ éü@.-]{0,24}",
        prop::collection::vec("[a-z0-9 ,\"]{0,12}", 1..5),
        1usize..9,
    )
        .prop_flat_map(|(name, classes, dim)| {
            let n_classes = classes.len() as u32;
            let records = prop::collection::btree_map(
                (0..n_classes, any::<u32>()),
                prop::collection::vec(finite_f32(), dim),
                0..12,
            );
            (Just(name), Just(classes), Just(dim), records)
        })
        .prop_map(|(backbone_name, class_names, dim, records)| FeatureStore {
            backbone_name,
            dim,
            class_names,
            records: records
                .into_iter()
                .map(|((class_index, image_id), features)| FeatureRecord {
                    class_index,
                    image_id,
                    features,
                })
                .collect(),
        })
}

/// Stores of dims `dims` over one shared key set, each in its own record order.
fn aligned_stores(keys: &[ItemKey], dims: &[usize], seed: u64) -> Vec<FeatureStore> {
    use rand::seq::SliceRandom;
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    dims.iter()
        .enumerate()
        .map(|(s, &dim)| {
            let mut records: Vec<FeatureRecord> = keys
                .iter()
                .map(|k| FeatureRecord {
                    class_index: k.class_index,
                    image_id: k.image_id,
                    features: (0..dim).map(|_| rng.random_range(-10.0f32..10.0)).collect(),
                })
                .collect();
            records.shuffle(&mut rng);
            FeatureStore {
                backbone_name: format!("b{s}"),
                dim,
                class_names: vec!["a".into(), "b".into(), "c".into()],
                records,
            }
        })
        .collect()
}

fn bits(v: &[f32]) -> Vec<u32> {
    v.iter().map(|x| x.to_bits()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn fsf_round_trip_is_bitwise(store in store_strategy()) {
        let bytes = store.to_bytes().unwrap();
        let back = FeatureStore::from_bytes(&bytes).unwrap();
        prop_assert_eq!(&back.backbone_name, &store.backbone_name);
        prop_assert_eq!(&back.class_names, &store.class_names);
        prop_assert_eq!(back.dim, store.dim);
        prop_assert_eq!(back.records.len(), store.records.len());
        for (a, b) in back.records.iter().zip(&store.records) {
            prop_assert_eq!(a.key(), b.key());
            prop_assert_eq!(bits(&a.features), bits(&b.features));
        }
        prop_assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn truncation_never_parses(store in store_strategy(), cut in 0.0f64..1.0) {
        let bytes = store.to_bytes().unwrap();
        let len = ((bytes.len() as f64) * cut) as usize;
        prop_assume!(len < bytes.len());
        prop_assert!(FeatureStore::from_bytes(&bytes[..len]).is_err());
    }

    #[test]
    fn join_concatenation_is_associative(
        keys in prop::collection::btree_set((0u32..3, 0u32..50), 1..20),
        dims in prop::collection::vec(1usize..6, 3),
        seed in any::<u64>(),
    ) {
        let keys: Vec<ItemKey> = keys.into_iter().map(|(c, i)| ItemKey { class_index: c, image_id: i }).collect();
        let stores = aligned_stores(&keys, &dims, seed);
        let abc = join(&stores, JoinMode::Strict).unwrap();
        let ab = join(&stores[..2], JoinMode::Strict).unwrap();
        let c = join(&stores[2..], JoinMode::Strict).unwrap();
        prop_assert_eq!(abc.dim(), dims.iter().sum::<usize>());
        prop_assert_eq!(abc.items.len(), keys.len());
        let c_by_key: BTreeMap<ItemKey, &Vec<f32>> = c.items.iter().map(|it| (it.key, &it.features)).collect();
        for (whole, left) in abc.items.iter().zip(&ab.items) {
            prop_assert_eq!(whole.key, left.key);
            let mut expected = left.features.clone();
            expected.extend_from_slice(c_by_key[&whole.key]);
            prop_assert_eq!(bits(&whole.features), bits(&expected));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn reshape_is_a_bijection_or_refused(
        (dim, side) in prop_oneof![
            (1usize..=40, 1usize..=64).prop_map(|(s, c)| (s * s * c, s)),
            (1usize..=8192, 1usize..=40),
        ],
        seed in any::<u32>(),
    ) {
        let v: Vec<f32> = (0..dim).map(|i| (i as u32 ^ seed) as f32).collect();
        match reshape_stack(v.clone(), side) {
            Ok(t) => {
                prop_assert_eq!(dim % (side * side), 0);
                prop_assert_eq!(t.channels(), dim / (side * side));
                let c = t.channels() - 1;
                prop_assert_eq!(t.get(c, side - 1, side - 1), v[dim - 1]);
                prop_assert_eq!(flatten(t), v);
            }
            Err(Error::Indivisible { dim: d, side: s }) => {
                prop_assert_ne!(dim % (side * side), 0);
                prop_assert_eq!((d, s), (dim, side));
            }
            Err(e) => prop_assert!(false, "unexpected error {e}"),
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn episodes_are_disjoint_and_balanced(
        seed in any::<u64>(),
        n_way in 2usize..=5,
        k_shot in 1usize..=5,
        q_query in 1usize..=10,
        per_class in 15usize..=40,
    ) {
        let dataset = clustered_dataset(&SynthSpec {
            dims: vec![8],
            n_classes: 5,
            per_class,
            seed: 1,
            ..SynthSpec::default()
        }).unwrap();
        let spec = EpisodeSpec { n_way, k_shot, q_query, pool_per_class: 32, seed };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ep = sample_episode(&dataset, &spec, &mut rng).unwrap();
        prop_assert_eq!(ep.classes.len(), n_way);
        prop_assert_eq!(ep.support.len(), n_way * k_shot);
        prop_assert_eq!(ep.query.len(), n_way * q_query);
        let support: HashSet<ItemKey> = ep.support.iter().map(|i| i.key).collect();
        prop_assert_eq!(support.len(), ep.support.len());
        prop_assert!(ep.query.iter().all(|i| !support.contains(&i.key)));
        for label in 0..n_way {
            prop_assert_eq!(ep.support.iter().filter(|i| i.label == label).count(), k_shot);
            prop_assert_eq!(ep.query.iter().filter(|i| i.label == label).count(), q_query);
        }
        for item in ep.support.iter().chain(&ep.query) {
            prop_assert_eq!(dataset.items[item.index].key, item.key);
            prop_assert_eq!(ep.classes[item.label], item.key.class_index as usize);
        }
        let mut again = ChaCha8Rng::seed_from_u64(seed);
        prop_assert_eq!(sample_episode(&dataset, &spec, &mut again).unwrap(), ep);
    }

    #[test]
    fn report_statistics_are_consistent(
        rows in prop::collection::vec(prop::collection::vec(0u64..20, 9), 2..12),
    ) {
        let outcomes: Vec<EpisodeOutcome> = rows
            .iter()
            .map(|flat| {
                let confusion: Vec<Vec<u64>> = flat.chunks(3).map(|r| r.to_vec()).collect();
                let total: u64 = flat.iter().sum();
                let trace = confusion[0][0] + confusion[1][1] + confusion[2][2];
                EpisodeOutcome {
                    accuracy: if total == 0 { 0.0 } else { trace as f64 / total as f64 },
                    confusion,
                }
            })
            .collect();
        let report = EvalReport::from_outcomes(&outcomes);
        let min = report.per_episode_accuracy.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = report.per_episode_accuracy.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(report.mean >= min - 1e-12 && report.mean <= max + 1e-12);
        prop_assert!(report.std >= 0.0);
        let pooled: u64 = report.confusion.iter().flatten().sum();
        prop_assert_eq!(pooled, rows.iter().flatten().sum::<u64>());
    }
}
