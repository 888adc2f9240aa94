mod common;

use std::collections::{BTreeMap, BTreeSet};

use ave_core::dataset::{group_by_task_family, split_dataset, Sample, SplitAssignment};
use ave_core::taxonomy::{Category, TaskFamily};
use proptest::prelude::*;

fn fixture(strata: &[(usize, usize)]) -> Vec<Sample> {
    let mut out = Vec::new();
    for (k, &(cat, count)) in strata.iter().enumerate() {
        let category = Category::ALL[cat % 6];
        for i in 0..count {
            out.push(common::sample(&format!("x{k}-{i:03}"), category, &format!("sub{k}"), &[]));
        }
    }
    out
}

fn stratum_counts(samples: &[Sample], split: &SplitAssignment) -> BTreeMap<String, [usize; 3]> {
    let sub: BTreeMap<&str, &str> = samples.iter().map(|s| (s.id.as_str(), s.subcategory.as_str())).collect();
    let mut counts: BTreeMap<String, [usize; 3]> = BTreeMap::new();
    for (k, ids) in [&split.train_ids, &split.val_ids, &split.test_ids].into_iter().enumerate() {
        for id in ids {
            counts.entry(sub[id.as_str()].to_string()).or_default()[k] += 1;
        }
    }
    counts
}

fn spread(v: &[usize; 3]) -> usize {
    v.iter().max().unwrap() - v.iter().min().unwrap()
}

#[test]
fn six_hundred_records_split_evenly() {
    let strata: Vec<(usize, usize)> = (0..47).map(|k| (k, if k < 36 { 13 } else { 12 })).collect();
    let samples = fixture(&strata);
    assert_eq!(samples.len(), 600);
    let split = split_dataset(&samples, 2024).unwrap();
    assert_eq!(split.sizes(), [200, 200, 200]);
    for (sub, counts) in stratum_counts(&samples, &split) {
        assert!(spread(&counts) <= 1, "{sub}: {counts:?}");
    }
    assert_eq!(split_dataset(&samples, 2024).unwrap(), split);
    assert_ne!(split_dataset(&samples, 2025).unwrap(), split);
}

#[test]
fn families_always_present() {
    let groups = group_by_task_family(&fixture(&[(0, 2)]));
    assert_eq!(groups.len(), 3);
    assert_eq!(
        groups[&TaskFamily::ALL[0]].len() + groups[&TaskFamily::ALL[1]].len() + groups[&TaskFamily::ALL[2]].len(),
        2
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn split_is_a_balanced_partition(
        strata in prop::collection::vec((0usize..6, 1usize..20), 1..12),
        seed in any::<u64>(),
        rotation in any::<usize>(),
    ) {
        let samples = fixture(&strata);
        prop_assume!(samples.len() >= 3);
        let split = split_dataset(&samples, seed).unwrap();

        let all: Vec<&String> = split.train_ids.iter().chain(&split.val_ids).chain(&split.test_ids).collect();
        let unique: BTreeSet<&String> = all.iter().copied().collect();
        prop_assert_eq!(all.len(), samples.len());
        prop_assert_eq!(unique.len(), samples.len());
        prop_assert!(spread(&split.sizes()) <= 1);
        for counts in stratum_counts(&samples, &split).values() {
            prop_assert!(spread(counts) <= 1);
        }

        let mut shuffled = samples.clone();
        let k = rotation % shuffled.len();
        shuffled.rotate_left(k);
        shuffled.reverse();
        prop_assert_eq!(split_dataset(&shuffled, seed).unwrap(), split);
    }
}
