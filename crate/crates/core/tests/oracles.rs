//! Brute-force reimplementations of the evaluation and filter metrics,
//! compared for exact equality on randomized instances.

use std::collections::{BTreeMap, BTreeSet};

use mavias::discovery::{evaluate_filter, RelevanceGroundTruth};
use mavias::evaluation::{
    closed_set_metrics, form_open_set_groups, group_metrics, identify_biased_tags,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Instance {
    num_classes: usize,
    vocab: Vec<String>,
    labels: Vec<usize>,
    preds: Vec<usize>,
    tags: Vec<Vec<String>>,
}

fn instance(n: usize, num_classes: usize, vocab_size: usize, seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab: Vec<String> = (0..vocab_size).map(|i| format!("tag{i}")).collect();
    let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..num_classes)).collect();
    // tags correlated with correctness so some end up biased
    let hot = rng.gen_range(0..vocab_size);
    let tags: Vec<Vec<String>> = (0..n)
        .map(|_| {
            let k = rng.gen_range(0..6);
            let mut t: Vec<String> = (0..k)
                .map(|_| vocab[rng.gen_range(0..vocab_size)].clone())
                .collect();
            if rng.gen_bool(0.3) {
                t.push(vocab[hot].clone());
            }
            t
        })
        .collect();
    let preds = labels
        .iter()
        .zip(&tags)
        .map(|(&y, t)| {
            let p_ok = if t.contains(&vocab[hot]) { 0.9 } else { 0.6 };
            if rng.gen_bool(p_ok) {
                y
            } else {
                rng.gen_range(0..num_classes)
            }
        })
        .collect();
    Instance {
        num_classes,
        vocab,
        labels,
        preds,
        tags,
    }
}

/// `(tag, accuracy, support, biased)` per class for every vocabulary tag
/// with non-zero support, plus the biased tags.
type BruteReport = Vec<(Vec<(String, f64, usize, bool)>, Vec<String>)>;

fn brute_biased_tags(inst: &Instance, min_support: usize) -> (f64, BruteReport) {
    let n = inst.labels.len();
    let mut correct = 0;
    for i in 0..n {
        if inst.preds[i] == inst.labels[i] {
            correct += 1;
        }
    }
    let overall = correct as f64 / n as f64;
    let mut sorted_vocab = inst.vocab.clone();
    sorted_vocab.sort();
    let report = (0..inst.num_classes)
        .map(|c| {
            let mut stats = Vec::new();
            let mut biased = Vec::new();
            for t in &sorted_vocab {
                let (mut support, mut ok) = (0, 0);
                for i in 0..n {
                    if inst.labels[i] == c && inst.tags[i].contains(t) {
                        support += 1;
                        if inst.preds[i] == c {
                            ok += 1;
                        }
                    }
                }
                if support == 0 {
                    continue;
                }
                let acc = ok as f64 / support as f64;
                let is_biased = acc > overall && support >= min_support;
                if is_biased {
                    biased.push(t.clone());
                }
                stats.push((t.clone(), acc, support, is_biased));
            }
            (stats, biased)
        })
        .collect();
    (overall, report)
}

#[test]
fn biased_tags_and_groups_match_brute_force() {
    let cases = [
        (50, 2, 5),
        (500, 3, 40),
        (2_000, 4, 200),
        (10_000, 5, 1_000),
    ];
    for (k, &(n, c, v)) in cases.iter().enumerate() {
        let inst = instance(n, c, v, k as u64);
        for min_support in [1, 5, 20] {
            let got =
                identify_biased_tags(&inst.preds, &inst.labels, &inst.tags, c, min_support, None)
                    .unwrap();
            let (overall, want) = brute_biased_tags(&inst, min_support);
            assert_eq!(got.overall_accuracy, overall);
            for (cls, (stats, biased)) in got.classes.iter().zip(&want) {
                let flat: Vec<(String, f64, usize, bool)> = cls
                    .tags
                    .iter()
                    .map(|s| (s.tag.clone(), s.accuracy, s.support, s.biased))
                    .collect();
                assert_eq!(&flat, stats, "n={n} class {}", cls.class);
                assert_eq!(&cls.biased, biased);
            }

            let groups = form_open_set_groups(&inst.labels, &inst.tags, &got).unwrap();
            for ((g, &y), tags) in groups.iter().zip(&inst.labels).zip(&inst.tags) {
                let has = tags.iter().any(|t| want[y].1.contains(t));
                assert_eq!(*g, 2 * y + has as usize);
            }
        }
    }
}

#[test]
fn group_metrics_match_brute_force() {
    for (k, &(n, g)) in [(10, 3), (1_000, 8), (10_000, 20)].iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + k as u64);
        // group g-1 stays empty
        let groups: Vec<usize> = (0..n).map(|_| rng.gen_range(0..g - 1)).collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..3)).collect();
        let preds: Vec<usize> = (0..n).map(|_| rng.gen_range(0..3)).collect();
        let got = group_metrics(&preds, &labels, &groups, g).unwrap();

        let mut accs = Vec::new();
        let mut total_ok = 0;
        for gi in 0..g {
            let (mut m, mut ok) = (0, 0);
            for i in 0..n {
                if groups[i] == gi {
                    m += 1;
                    ok += (preds[i] == labels[i]) as usize;
                }
            }
            total_ok += ok;
            let acc = (m > 0).then(|| ok as f64 / m as f64);
            assert_eq!(got.groups[gi].samples, m);
            assert_eq!(got.groups[gi].accuracy, acc);
            if let Some(a) = acc {
                accs.push(a);
            }
        }
        let mut worst = f64::INFINITY;
        let mut sum = 0.0;
        for a in &accs {
            worst = worst.min(*a);
            sum += a;
        }
        assert_eq!(got.worst_group_accuracy, worst);
        assert_eq!(got.average_accuracy, sum / accs.len() as f64);
        assert_eq!(got.weighted_accuracy, total_ok as f64 / n as f64);
    }
}

#[test]
fn closed_set_metrics_match_brute_force() {
    for (k, &n) in [7usize, 900, 10_000].iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + k as u64);
        let (c, b) = (3, 4);
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..c)).collect();
        let bias: Vec<usize> = labels
            .iter()
            .map(|&y| {
                if rng.gen_bool(0.8) {
                    y
                } else {
                    rng.gen_range(0..b)
                }
            })
            .collect();
        let aligned: Vec<bool> = labels.iter().zip(&bias).map(|(y, v)| y == v).collect();
        let preds: Vec<usize> = (0..n).map(|_| rng.gen_range(0..c)).collect();
        let got = closed_set_metrics(&preds, &labels, &bias, &aligned).unwrap();

        let (mut cn, mut cok) = (0, 0);
        for i in 0..n {
            if !aligned[i] {
                cn += 1;
                cok += (preds[i] == labels[i]) as usize;
            }
        }
        let mut sum = 0.0;
        let mut cells = 0;
        for y in 0..c {
            for v in 0..b {
                let (mut m, mut ok) = (0, 0);
                for i in 0..n {
                    if labels[i] == y && bias[i] == v {
                        m += 1;
                        ok += (preds[i] == y) as usize;
                    }
                }
                if m > 0 {
                    sum += ok as f64 / m as f64;
                    cells += 1;
                }
            }
        }
        assert_eq!(
            got.bias_conflict_accuracy,
            (cn > 0).then(|| cok as f64 / cn as f64)
        );
        assert_eq!(got.unbiased_accuracy, Some(sum / cells as f64));
    }
}

#[test]
fn filter_score_matches_brute_force() {
    for (k, &(classes, vocab_size)) in [(1, 10), (5, 100), (20, 1_000)].iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + k as u64);
        let vocab: Vec<String> = (0..vocab_size).map(|i| format!("t{i}")).collect();
        let draw = |rng: &mut ChaCha8Rng| -> BTreeSet<String> {
            let m = rng.gen_range(0..vocab_size / 2 + 1);
            vocab.choose_multiple(rng, m).cloned().collect()
        };
        let mut pred = BTreeMap::new();
        let mut truth = RelevanceGroundTruth::default();
        for c in 0..classes {
            if rng.gen_bool(0.8) {
                pred.insert(format!("c{c}"), draw(&mut rng));
            }
            if rng.gen_bool(0.8) {
                truth.classes.insert(format!("c{c}"), draw(&mut rng));
            }
        }
        let got = evaluate_filter(&pred, &truth);

        let (mut hit, mut p, mut t) = (0, 0, 0);
        for c in 0..classes {
            let name = format!("c{c}");
            for tag in &vocab {
                let in_p = pred.get(&name).is_some_and(|s| s.contains(tag));
                let in_t = truth.classes.get(&name).is_some_and(|s| s.contains(tag));
                hit += (in_p && in_t) as usize;
                p += in_p as usize;
                t += in_t as usize;
            }
        }
        assert_eq!(got.precision, (p > 0).then(|| hit as f64 / p as f64));
        assert_eq!(got.recall, (t > 0).then(|| hit as f64 / t as f64));
    }
}
