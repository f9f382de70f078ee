use std::sync::Arc;

use greenlaunch::container::ContainerError;
use greenlaunch::dataset::{apportion, collect_rollouts, mix_datasets, Dataset, DatasetError, ReplayBuffer, Transition};
use greenlaunch::heuristics::HeuristicKind;
use greenlaunch::policy::RandomPolicy;
use greenlaunch::sim::{Observation, ObservationShape, SimConfig};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_config() -> SimConfig {
    SimConfig::with_resources(10)
}

fn toy_transition(shape: ObservationShape, i: usize, tag: &str) -> Transition {
    let mut obs = Observation::zeros(shape);
    Arc::get_mut(&mut obs.image).unwrap()[0] = i as f32 / 1000.0;
    Transition {
        obs: obs.clone(),
        action: i % shape.n_actions(),
        reward: i as f64 - 0.5,
        next_obs: obs,
        done: i % 7 == 0,
        behavior_tag: Arc::from(tag),
    }
}

fn toy_dataset(n: usize, tag: &str) -> Dataset {
    let shape = ObservationShape { rows: 2, cols: 3, slots: 2 };
    let mut d = Dataset::new(shape, Some("abc".into()));
    d.transitions = (0..n).map(|i| toy_transition(shape, i, tag)).collect();
    d
}

#[test]
fn qos_collection_matches_paper_scale_count() {
    let d = collect_rollouts(&HeuristicKind::Qos, &small_config(), 80, 2000, 1).unwrap();
    assert_eq!(d.len(), 160_000);
    assert_eq!(d.tag_counts().into_iter().collect::<Vec<_>>(), vec![("qos".to_string(), 160_000)]);
    d.validate().unwrap();
}

#[test]
fn zero_rollouts_is_empty() {
    let d = collect_rollouts(&RandomPolicy, &small_config(), 0, 100, 1).unwrap();
    assert!(d.is_empty());
}

#[test]
fn collection_is_deterministic_to_the_byte() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.ds"), dir.path().join("b.ds"));
    collect_rollouts(&RandomPolicy, &small_config(), 3, 200, 42).unwrap().save(&a).unwrap();
    collect_rollouts(&RandomPolicy, &small_config(), 3, 200, 42).unwrap().save(&b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    collect_rollouts(&RandomPolicy, &small_config(), 3, 200, 43).unwrap().save(&b).unwrap();
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn consecutive_transitions_share_observations() {
    let d = collect_rollouts(&HeuristicKind::Fcfs, &small_config(), 1, 50, 3).unwrap();
    for w in d.transitions.windows(2) {
        assert!(Arc::ptr_eq(&w[0].next_obs.image, &w[1].obs.image));
    }
}

#[test]
fn save_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.ds");
    let d = collect_rollouts(&HeuristicKind::Hvf, &small_config(), 2, 100, 5).unwrap();
    d.save(&path).unwrap();
    let loaded = Dataset::load(&path, Some(&small_config().config_hash())).unwrap();
    assert!(loaded.warnings.is_empty());
    assert_eq!(loaded.value, d);
    for w in loaded.value.transitions.windows(2) {
        if w[0].next_obs == w[1].obs {
            assert!(Arc::ptr_eq(&w[0].next_obs.image, &w[1].obs.image));
        }
    }
}

#[test]
fn truncated_file_is_a_truncation_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.ds");
    toy_dataset(20, "x").save(&path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    for cut in [4, 20, bytes.len() / 2, bytes.len() - 1] {
        std::fs::write(&path, &bytes[..cut]).unwrap();
        let err = Dataset::load(&path, None).unwrap_err();
        assert!(matches!(err, DatasetError::Container(ContainerError::Truncated(_))), "cut {cut}: {err}");
    }
}

#[test]
fn mismatched_config_hash_is_a_warning() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.ds");
    let d = collect_rollouts(&RandomPolicy, &small_config(), 1, 10, 5).unwrap();
    d.save(&path).unwrap();
    let other = SimConfig::with_resources(20).config_hash();
    let loaded = Dataset::load(&path, Some(&other)).unwrap();
    assert_eq!(loaded.warnings.len(), 1);
    assert!(loaded.warnings[0].contains(&other));
    assert_eq!(loaded.value, d);
}

#[test]
fn shape_and_version_mismatches_are_distinct_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.ds");
    toy_dataset(3, "x").save(&path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let header = std::str::from_utf8(&bytes[12..12 + header_len]).unwrap();
    let rewrite = |new_header: String| {
        let mut out = bytes[..8].to_vec();
        out.extend_from_slice(&(new_header.len() as u32).to_le_bytes());
        out.extend_from_slice(new_header.as_bytes());
        out.extend_from_slice(&bytes[12 + header_len..]);
        std::fs::write(&path, out).unwrap();
    };

    rewrite(header.replace("\"cols\":3", "\"cols\":4"));
    let err = Dataset::load(&path, None).unwrap_err();
    assert!(matches!(err, DatasetError::Container(ContainerError::Shape(_))), "{err}");

    rewrite(header.replace("\"cols\":3", "\"cols\":2"));
    let err = Dataset::load(&path, None).unwrap_err();
    assert!(matches!(err, DatasetError::Container(ContainerError::Shape(_))), "{err}");

    rewrite(header.replace("\"format_version\":1", "\"format_version\":2"));
    let err = Dataset::load(&path, None).unwrap_err();
    assert!(matches!(err, DatasetError::Container(ContainerError::Version { found: 2, .. })), "{err}");
}

#[test]
fn four_way_mix_has_exact_counts() {
    let parts: Vec<Dataset> = ["sjf", "fcfs", "qos", "hvf"].iter().map(|t| toy_dataset(30_000, t)).collect();
    let refs: Vec<(&Dataset, f64)> = parts.iter().map(|d| (d, 0.25)).collect();
    let mixed = mix_datasets(&refs, 100_000, 9).unwrap();
    assert_eq!(mixed.len(), 100_000);
    for (_, n) in mixed.tag_counts() {
        assert_eq!(n, 25_000);
    }
}

#[test]
fn single_part_mix_is_a_subsample() {
    let d = toy_dataset(50, "a");
    let mixed = mix_datasets(&[(&d, 1.0)], 20, 1).unwrap();
    assert_eq!(mixed.len(), 20);
    let mut seen = std::collections::HashSet::new();
    for t in &mixed.transitions {
        let i = (t.reward + 0.5) as usize;
        assert_eq!(*t, d.transitions[i]);
        assert!(seen.insert(i), "drawn twice");
    }
    let full = mix_datasets(&[(&d, 1.0)], 50, 1).unwrap();
    let mut rewards: Vec<f64> = full.transitions.iter().map(|t| t.reward).collect();
    rewards.sort_by(f64::total_cmp);
    assert_eq!(rewards, d.transitions.iter().map(|t| t.reward).collect::<Vec<_>>());
}

#[test]
fn half_half_of_three() {
    let (a, b) = (toy_dataset(5, "a"), toy_dataset(5, "b"));
    let m1 = mix_datasets(&[(&a, 0.5), (&b, 0.5)], 3, 4).unwrap();
    let m2 = mix_datasets(&[(&a, 0.5), (&b, 0.5)], 3, 4).unwrap();
    assert_eq!(m1, m2);
    let counts = m1.tag_counts();
    assert_eq!((counts["a"], counts["b"]), (2, 1));
}

#[test]
fn short_part_is_named() {
    let (a, b) = (toy_dataset(100, "big"), toy_dataset(10, "small"));
    let err = mix_datasets(&[(&a, 0.5), (&b, 0.5)], 100, 0).unwrap_err();
    match err {
        DatasetError::InsufficientData {
            index,
            tag,
            available,
            requested,
        } => assert_eq!((index, tag.as_str(), available, requested), (1, "small", 10, 50)),
        other => panic!("{other}"),
    }
    assert!(matches!(
        mix_datasets(&[(&a, 0.5), (&b, 0.4)], 10, 0),
        Err(DatasetError::Fractions(_))
    ));
}

#[test]
fn sampling_examples() {
    let mut buf = ReplayBuffer::new(8);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(matches!(buf.sample_batch(4, &mut rng), Err(DatasetError::EmptyBuffer)));
    let d = toy_dataset(1, "a");
    buf.push(d.transitions[0].clone());
    let batch = buf.sample_batch(4, &mut rng).unwrap();
    assert_eq!(batch.len(), 4);
    assert!(batch.iter().all(|t| **t == d.transitions[0]));

    let d = toy_dataset(10, "a");
    let buf = ReplayBuffer::from_dataset(&d, 10);
    let draw = |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        buf.sample_indices(32, &mut rng).unwrap()
    };
    assert_eq!(draw(5), draw(5));
}

#[test]
fn sampling_is_uniform() {
    let buf = ReplayBuffer::from_dataset(&toy_dataset(10, "a"), 10);
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let n = 100_000;
    let mut counts = [0usize; 10];
    for i in buf.sample_indices(n, &mut rng).unwrap() {
        counts[i] += 1;
    }
    let p = 0.1;
    let sigma = (n as f64 * p * (1.0 - p)).sqrt();
    for c in counts {
        assert!((c as f64 - n as f64 * p).abs() <= 3.0 * sigma, "{counts:?}");
    }
}

#[test]
fn apportion_exhaustive_small_cases() {
    // Brute force: the largest-remainder split minimizes the max deviation from the exact
    // quotas among all integer splits that sum to total.
    for total in 0..12 {
        for a in 0..=8 {
            let fr = [a as f64 / 8.0, 1.0 - a as f64 / 8.0];
            let got = apportion(&fr, total);
            assert_eq!(got.iter().sum::<usize>(), total);
            let dev = |c: &[usize]| c.iter().zip(&fr).map(|(&c, f)| (c as f64 - f * total as f64).abs()).fold(0.0, f64::max);
            let best = (0..=total).map(|x| dev(&[x, total - x])).fold(f64::INFINITY, f64::min);
            assert!(dev(&got) <= best + 1e-12, "{fr:?} {total} -> {got:?}");
        }
    }
}

proptest! {
    #[test]
    fn fifo_eviction(capacity in 1usize..20, extra in 0usize..30) {
        let d = toy_dataset(capacity + extra, "a");
        let mut buf = ReplayBuffer::new(capacity);
        buf.extend(d.transitions.iter().cloned());
        prop_assert_eq!(buf.len(), capacity);
        let kept: Vec<f64> = buf.iter().map(|t| t.reward).collect();
        let expected: Vec<f64> = d.transitions[extra..].iter().map(|t| t.reward).collect();
        prop_assert_eq!(kept, expected);
    }

    #[test]
    fn mix_counts_match_fractions(weights in prop::collection::vec(1u32..10, 1..5), total in 0usize..200) {
        let sum: u32 = weights.iter().sum();
        let fractions: Vec<f64> = weights.iter().map(|&w| w as f64 / sum as f64).collect();
        let parts: Vec<Dataset> = (0..weights.len()).map(|i| toy_dataset(200, &format!("p{i}"))).collect();
        let refs: Vec<(&Dataset, f64)> = parts.iter().zip(&fractions).map(|(d, &f)| (d, f)).collect();
        let Ok(mixed) = mix_datasets(&refs, total, 3) else {
            // Fractions built from integer weights can miss 1 by more than 1e-9 only through
            // rounding, which never happens for these small sums.
            panic!("mix failed for {fractions:?}");
        };
        let want = apportion(&fractions, total);
        let counts = mixed.tag_counts();
        for (i, w) in want.iter().enumerate() {
            prop_assert_eq!(counts.get(&format!("p{i}")).copied().unwrap_or(0), *w);
            prop_assert!((*w as f64 - fractions[i] * total as f64).abs() < 1.0);
        }
    }

    #[test]
    fn round_trip_arbitrary(n in 0usize..40, seed in any::<u64>()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.ds");
        let mut d = toy_dataset(n, "t");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for t in &mut d.transitions {
            t.reward = rand::Rng::random_range(&mut rng, -1e6..1e6);
        }
        d.save(&path).unwrap();
        prop_assert_eq!(Dataset::load(&path, None).unwrap().value, d);
    }
}
