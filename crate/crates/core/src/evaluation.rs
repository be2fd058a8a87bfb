//! Open-set and closed-set group metrics, biased-tag identification and
//! logit diagnostics.
//!
//! Everything here is a pure function of predictions, labels and tags.

use std::collections::{BTreeMap, HashSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::autodiff::DenseMatrix;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("input mismatch: {0}")]
    Input(String),
    #[error("every group is empty")]
    AllGroupsEmpty,
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Default support a tag needs before it can be flagged as biased.
pub const DEFAULT_MIN_SUPPORT: usize = 5;

fn check_len(what: &str, got: usize, want: usize) -> Result<(), EvalError> {
    if got != want {
        return Err(EvalError::Input(format!("{got} {what} for {want} samples")));
    }
    Ok(())
}

fn accuracy(predictions: &[usize], labels: &[usize]) -> f64 {
    let correct = predictions
        .iter()
        .zip(labels)
        .filter(|(p, y)| p == y)
        .count();
    correct as f64 / labels.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagStat {
    pub tag: String,
    /// Accuracy over the class's samples carrying the tag.
    pub accuracy: f64,
    pub support: usize,
    pub biased: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassTagReport {
    pub class: usize,
    /// Sorted by tag.
    pub tags: Vec<TagStat>,
    /// Candidate tags no sample of the class carries.
    pub zero_support: Vec<String>,
    /// `B'` for this class, sorted.
    pub biased: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasedTagReport {
    /// Accuracy over the whole evaluated set.
    pub overall_accuracy: f64,
    pub min_support: usize,
    pub classes: Vec<ClassTagReport>,
}

/// Flags irrelevant tags on which the (vanilla) model is more accurate than
/// it is overall.
///
/// For each class `c` and candidate tag `t`, accuracy is taken over the
/// samples of class `c` whose irrelevant tags contain `t`. The tag is biased
/// iff that accuracy is strictly greater than the dataset-wide accuracy and
/// its support is at least `min_support`. Candidates default to every
/// irrelevant tag seen in the class; `candidates[c]` overrides them.
pub fn identify_biased_tags(
    predictions: &[usize],
    labels: &[usize],
    irrelevant: &[Vec<String>],
    num_classes: usize,
    min_support: usize,
    candidates: Option<&[Vec<String>]>,
) -> Result<BiasedTagReport, EvalError> {
    check_len("predictions", predictions.len(), labels.len())?;
    check_len("tag lists", irrelevant.len(), labels.len())?;
    if labels.is_empty() {
        return Err(EvalError::Input("no samples".into()));
    }
    if let Some(y) = labels.iter().find(|&&y| y >= num_classes) {
        return Err(EvalError::Input(format!(
            "label {y} >= {num_classes} classes"
        )));
    }
    if let Some(c) = candidates {
        check_len("candidate lists", c.len(), num_classes)?;
    }
    let overall = accuracy(predictions, labels);

    // (class, tag) -> (support, correct)
    let mut counts: Vec<BTreeMap<&str, (usize, usize)>> = vec![BTreeMap::new(); num_classes];
    for i in 0..labels.len() {
        let ok = (predictions[i] == labels[i]) as usize;
        let mut seen = HashSet::new();
        for t in &irrelevant[i] {
            if seen.insert(t.as_str()) {
                let e = counts[labels[i]].entry(t.as_str()).or_insert((0, 0));
                e.0 += 1;
                e.1 += ok;
            }
        }
    }

    let classes = (0..num_classes)
        .map(|c| {
            let mut zero_support = Vec::new();
            let pool: Vec<(&str, (usize, usize))> = match candidates {
                Some(cands) => {
                    let mut uniq: Vec<&str> = cands[c].iter().map(String::as_str).collect();
                    uniq.sort_unstable();
                    uniq.dedup();
                    uniq.into_iter()
                        .filter_map(|t| match counts[c].get(t) {
                            Some(&n) => Some((t, n)),
                            None => {
                                zero_support.push(t.to_string());
                                None
                            }
                        })
                        .collect()
                }
                None => counts[c].iter().map(|(t, n)| (*t, *n)).collect(),
            };
            let tags: Vec<TagStat> = pool
                .into_iter()
                .map(|(t, (support, correct))| {
                    let acc = correct as f64 / support as f64;
                    TagStat {
                        tag: t.to_string(),
                        accuracy: acc,
                        support,
                        biased: acc > overall && support >= min_support,
                    }
                })
                .collect();
            let biased = tags
                .iter()
                .filter(|s| s.biased)
                .map(|s| s.tag.clone())
                .collect();
            ClassTagReport {
                class: c,
                tags,
                zero_support,
                biased,
            }
        })
        .collect();
    Ok(BiasedTagReport {
        overall_accuracy: overall,
        min_support,
        classes,
    })
}

/// Group id of a sample of class `c`: `2c + 1` if it carries one of `B'(c)`,
/// else `2c`. There are `2 * num_classes` groups.
pub fn form_open_set_groups(
    labels: &[usize],
    irrelevant: &[Vec<String>],
    report: &BiasedTagReport,
) -> Result<Vec<usize>, EvalError> {
    check_len("tag lists", irrelevant.len(), labels.len())?;
    let sets: Vec<HashSet<&str>> = report
        .classes
        .iter()
        .map(|c| c.biased.iter().map(String::as_str).collect())
        .collect();
    labels
        .iter()
        .zip(irrelevant)
        .map(|(&y, tags)| {
            let set = sets.get(y).ok_or_else(|| {
                EvalError::Input(format!("label {y} not covered by the tag report"))
            })?;
            let has = tags.iter().any(|t| set.contains(t.as_str()));
            Ok(2 * y + has as usize)
        })
        .collect()
}

/// `"<class>:no-bias"` and `"<class>:bias"` for each class, in group-id order.
pub fn open_set_group_names(class_names: &[String]) -> Vec<String> {
    class_names
        .iter()
        .flat_map(|c| [format!("{c}:no-bias"), format!("{c}:bias")])
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStat {
    pub group: usize,
    pub samples: usize,
    /// `None` for an empty group.
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub groups: Vec<GroupStat>,
    pub worst_group_accuracy: f64,
    /// Unweighted mean over non-empty groups.
    pub average_accuracy: f64,
    /// Mean weighted by group size.
    pub weighted_accuracy: f64,
}

/// Per-group, worst-group, average and weighted accuracy. Empty groups are
/// reported but left out of the summaries.
pub fn group_metrics(
    predictions: &[usize],
    labels: &[usize],
    groups: &[usize],
    num_groups: usize,
) -> Result<GroupMetrics, EvalError> {
    check_len("predictions", predictions.len(), labels.len())?;
    check_len("group ids", groups.len(), labels.len())?;
    if let Some(g) = groups.iter().find(|&&g| g >= num_groups) {
        return Err(EvalError::Input(format!("group id {g} >= {num_groups}")));
    }
    let mut n = vec![0usize; num_groups];
    let mut correct = vec![0usize; num_groups];
    for i in 0..labels.len() {
        n[groups[i]] += 1;
        correct[groups[i]] += (predictions[i] == labels[i]) as usize;
    }
    let stats: Vec<GroupStat> = (0..num_groups)
        .map(|g| GroupStat {
            group: g,
            samples: n[g],
            accuracy: (n[g] > 0).then(|| correct[g] as f64 / n[g] as f64),
        })
        .collect();
    let present: Vec<(usize, f64)> = stats
        .iter()
        .filter_map(|s| s.accuracy.map(|a| (s.group, a)))
        .collect();
    if present.is_empty() {
        return Err(EvalError::AllGroupsEmpty);
    }
    let empty = num_groups - present.len();
    if empty > 0 {
        log::warn!("{empty} empty group(s) excluded from group metrics");
    }
    Ok(GroupMetrics {
        worst_group_accuracy: present.iter().map(|p| p.1).fold(f64::INFINITY, f64::min),
        average_accuracy: present.iter().map(|p| p.1).sum::<f64>() / present.len() as f64,
        weighted_accuracy: correct.iter().sum::<usize>() as f64 / labels.len() as f64,
        groups: stats,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClosedSetMetrics {
    /// Accuracy over samples that are not bias-aligned.
    pub bias_conflict_accuracy: Option<f64>,
    /// Unweighted mean over non-empty `(class, bias)` groups.
    pub unbiased_accuracy: Option<f64>,
}

/// Closed-set metrics from known bias labels; `aligned[i]` marks samples
/// whose bias value agrees with the majority pairing.
pub fn closed_set_metrics(
    predictions: &[usize],
    labels: &[usize],
    bias: &[usize],
    aligned: &[bool],
) -> Result<ClosedSetMetrics, EvalError> {
    check_len("predictions", predictions.len(), labels.len())?;
    check_len("bias labels", bias.len(), labels.len())?;
    check_len("aligned flags", aligned.len(), labels.len())?;
    let (mut conflict_n, mut conflict_ok) = (0usize, 0usize);
    let mut cells: BTreeMap<(usize, usize), (usize, usize)> = BTreeMap::new();
    for i in 0..labels.len() {
        let ok = (predictions[i] == labels[i]) as usize;
        if !aligned[i] {
            conflict_n += 1;
            conflict_ok += ok;
        }
        let e = cells.entry((labels[i], bias[i])).or_insert((0, 0));
        e.0 += 1;
        e.1 += ok;
    }
    Ok(ClosedSetMetrics {
        bias_conflict_accuracy: (conflict_n > 0).then(|| conflict_ok as f64 / conflict_n as f64),
        unbiased_accuracy: (!cells.is_empty()).then(|| {
            cells
                .values()
                .map(|(n, c)| *c as f64 / *n as f64)
                .sum::<f64>()
                / cells.len() as f64
        }),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitSummary {
    pub group: usize,
    pub samples: usize,
    pub mean: Option<f64>,
    pub p10: Option<f64>,
    pub median: Option<f64>,
    pub p90: Option<f64>,
    /// Max-logit of each sample in the group, in input order.
    pub values: Vec<f64>,
}

/// Linearly interpolated percentile of sorted data, `q` in `[0, 1]`.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Distribution of the per-sample max logit, per group.
pub fn logit_distribution_by_group(
    logits: &DenseMatrix,
    groups: &[usize],
    num_groups: usize,
) -> Result<Vec<LogitSummary>, EvalError> {
    check_len("group ids", groups.len(), logits.rows())?;
    if let Some(g) = groups.iter().find(|&&g| g >= num_groups) {
        return Err(EvalError::Input(format!("group id {g} >= {num_groups}")));
    }
    let mut values = vec![Vec::new(); num_groups];
    for (i, &g) in groups.iter().enumerate() {
        let m = logits
            .row(i)
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        values[g].push(m);
    }
    Ok(values
        .into_iter()
        .enumerate()
        .map(|(group, v)| {
            let mut sorted = v.clone();
            sorted.sort_by(f64::total_cmp);
            let has = !v.is_empty();
            LogitSummary {
                group,
                samples: v.len(),
                mean: has.then(|| v.iter().sum::<f64>() / v.len() as f64),
                p10: has.then(|| percentile(&sorted, 0.1)),
                median: has.then(|| percentile(&sorted, 0.5)),
                p90: has.then(|| percentile(&sorted, 0.9)),
                values: v,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedTags {
    pub class: usize,
    pub tags: Vec<String>,
}

/// Up to `k` biased tags per class, by support (desc), then accuracy gain
/// over the overall accuracy (desc), then tag.
pub fn rank_top_biased_tags(report: &BiasedTagReport, k: usize) -> Vec<RankedTags> {
    report
        .classes
        .iter()
        .map(|c| {
            let mut b: Vec<&TagStat> = c.tags.iter().filter(|t| t.biased).collect();
            b.sort_by(|x, y| {
                y.support
                    .cmp(&x.support)
                    .then(y.accuracy.total_cmp(&x.accuracy))
                    .then(x.tag.cmp(&y.tag))
            });
            RankedTags {
                class: c.class,
                tags: b.into_iter().take(k).map(|t| t.tag.clone()).collect(),
            }
        })
        .collect()
}

/// CSV with one row per group: `group,name,samples,accuracy` (empty accuracy
/// for empty groups).
pub fn write_group_metrics_csv<W: Write>(
    metrics: &GroupMetrics,
    names: &[String],
    writer: W,
) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["group", "name", "samples", "accuracy"])?;
    for s in &metrics.groups {
        let name = names.get(s.group).map(String::as_str).unwrap_or("");
        let acc = s.accuracy.map(|a| a.to_string()).unwrap_or_default();
        w.write_record([
            s.group.to_string(),
            name.to_string(),
            s.samples.to_string(),
            acc,
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One JSON line per sample: `{"index", "group", "logits"}`.
pub fn write_logits_jsonl<W: Write>(
    logits: &DenseMatrix,
    groups: &[usize],
    mut writer: W,
) -> Result<(), EvalError> {
    check_len("group ids", groups.len(), logits.rows())?;
    for (i, g) in groups.iter().enumerate() {
        let line = serde_json::json!({ "index": i, "group": g, "logits": logits.row(i) });
        writeln!(writer, "{line}")?;
    }
    writer.flush()?;
    Ok(())
}
