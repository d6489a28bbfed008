//! ROC analysis, thresholded confusion metrics, stratified k-fold splits and
//! a cross-validation driver.

use crate::phantom::sub_seed;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("{scores} scores but {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("no samples")]
    Empty,
    #[error("ROC needs both classes, got only label {0}")]
    SingleClass(u8),
    #[error("label {0} is not 0 or 1")]
    BadLabel(u8),
    #[error("score {0} is not finite")]
    NonFinite(f64),
    #[error("k = {0} must be at least 2")]
    BadK(usize),
    #[error("class {class} has {count} samples, fewer than k = {k}")]
    TooFewInClass { class: u8, count: usize, k: usize },
    #[error("threshold grid is empty")]
    EmptyGrid,
    #[error("fold {fold}: {message}")]
    Fold { fold: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn check_inputs(scores: &[f64], labels: &[u8]) -> Result<(), EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch { scores: scores.len(), labels: labels.len() });
    }
    if scores.is_empty() {
        return Err(EvalError::Empty);
    }
    if let Some(&l) = labels.iter().find(|&&l| l > 1) {
        return Err(EvalError::BadLabel(l));
    }
    if let Some(&s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(EvalError::NonFinite(s));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// `(fpr, tpr)` from `(0, 0)` to `(1, 1)`, one step per distinct score.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

/// ROC over all thresholds, sweeping from the highest score down. Tied
/// scores move the curve in a single diagonal step.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<RocCurve, EvalError> {
    check_inputs(scores, labels)?;
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(EvalError::SingleClass(labels[0]));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut auc2 = 0usize; // twice the area in units of 1 / (pos * neg)
    for group in order.chunk_by(|&a, &b| scores[a] == scores[b]) {
        let gp = group.iter().filter(|&&i| labels[i] == 1).count();
        let gn = group.len() - gp;
        auc2 += gn * (2 * tp + gp);
        tp += gp;
        fp += gn;
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    Ok(RocCurve { points, auc: auc2 as f64 / (2 * pos * neg) as f64 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub threshold: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub r#fn: usize,
    pub accuracy: f64,
    /// Absent when nothing is predicted positive.
    pub precision: Option<f64>,
    pub recall: f64,
}

/// Counts with `score >= threshold` predicted positive (bad).
pub fn confusion_metrics(scores: &[f64], labels: &[u8], threshold: f64) -> Result<Metrics, EvalError> {
    check_inputs(scores, labels)?;
    let (mut tp, mut fp, mut tn, mut r#fn) = (0, 0, 0, 0);
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= threshold, l == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => r#fn += 1,
        }
    }
    let ratio = |a: usize, b: usize| a as f64 / b as f64;
    Ok(Metrics {
        threshold,
        tp,
        fp,
        tn,
        r#fn,
        accuracy: ratio(tp + tn, scores.len()),
        precision: (tp + fp > 0).then(|| ratio(tp, tp + fp)),
        // no positives at all: nothing was missed
        recall: if tp + r#fn > 0 { ratio(tp, tp + r#fn) } else { 1.0 },
    })
}

pub fn threshold_sweep(scores: &[f64], labels: &[u8], grid: &[f64]) -> Result<Vec<Metrics>, EvalError> {
    if grid.is_empty() {
        return Err(EvalError::EmptyGrid);
    }
    grid.iter().map(|&t| confusion_metrics(scores, labels, t)).collect()
}

/// Entry of a sweep with the highest accuracy; the first one wins ties.
pub fn best_accuracy(sweep: &[Metrics]) -> Option<&Metrics> {
    sweep.iter().reduce(|best, m| if m.accuracy > best.accuracy { m } else { best })
}

/// `folds[f]` holds the sample indices validated in fold `f`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub folds: Vec<Vec<usize>>,
    /// `[negatives, positives]` per fold.
    pub class_counts: Vec<[usize; 2]>,
}

impl FoldSplit {
    pub fn k(&self) -> usize {
        self.folds.len()
    }

    /// Indices outside fold `f`, ascending.
    pub fn train_indices(&self, f: usize) -> Vec<usize> {
        let mut out: Vec<usize> =
            self.folds.iter().enumerate().filter(|&(g, _)| g != f).flat_map(|(_, v)| v.iter().copied()).collect();
        out.sort_unstable();
        out
    }
}

/// Shuffles each class and deals it round-robin over the folds. The dealing
/// position carries over from one class to the next, so fold sizes also
/// differ by at most one.
pub fn stratified_kfold(labels: &[u8], k: usize, seed: u64) -> Result<FoldSplit, EvalError> {
    if k < 2 {
        return Err(EvalError::BadK(k));
    }
    if let Some(&l) = labels.iter().find(|&&l| l > 1) {
        return Err(EvalError::BadLabel(l));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![Vec::new(); k];
    let mut class_counts = vec![[0usize; 2]; k];
    let mut next = 0;
    for class in [0u8, 1] {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.len() < k {
            return Err(EvalError::TooFewInClass { class, count: members.len(), k });
        }
        members.shuffle(&mut rng);
        for i in members {
            folds[next].push(i);
            class_counts[next][class as usize] += 1;
            next = (next + 1) % k;
        }
    }
    folds.iter_mut().for_each(|f| f.sort_unstable());
    Ok(FoldSplit { folds, class_counts })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub auc: Option<f64>,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Population standard deviation; `None` for no values.
    pub fn of(values: impl IntoIterator<Item = f64>) -> Option<Self> {
        let v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return None;
        }
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64;
        Some(MeanStd { mean, std: var.sqrt() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvSummary {
    pub k: usize,
    pub seed: u64,
    pub threshold: f64,
    pub folds: Vec<FoldResult>,
    /// Held-out score of every sample, by sample index.
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
    pub pooled_auc: f64,
    pub pooled: Metrics,
    pub sweep: Vec<Metrics>,
    pub auc: Option<MeanStd>,
    pub accuracy: MeanStd,
    pub precision: Option<MeanStd>,
    pub recall: MeanStd,
}

/// Runs `k`-fold cross-validation. `train_eval(fold, train, test, seed)`
/// must return one score per test index; `seed` is derived per fold.
/// Metrics are reported per fold and pooled over all held-out scores.
pub fn cross_validate<F>(
    labels: &[u8],
    k: usize,
    seed: u64,
    threshold: f64,
    grid: &[f64],
    mut train_eval: F,
) -> Result<CvSummary, EvalError>
where
    F: FnMut(usize, &[usize], &[usize], u64) -> Result<Vec<f64>, String>,
{
    let split = stratified_kfold(labels, k, seed)?;
    let mut scores = vec![f64::NAN; labels.len()];
    let mut folds = Vec::with_capacity(k);
    for (f, test) in split.folds.iter().enumerate() {
        let train = split.train_indices(f);
        let out = train_eval(f, &train, test, sub_seed(seed, f as u64 + 1))
            .map_err(|message| EvalError::Fold { fold: f, message })?;
        if out.len() != test.len() {
            return Err(EvalError::Fold {
                fold: f,
                message: format!("{} scores for {} samples", out.len(), test.len()),
            });
        }
        let fold_labels: Vec<u8> = test.iter().map(|&i| labels[i]).collect();
        for (&i, &s) in test.iter().zip(&out) {
            scores[i] = s;
        }
        folds.push(FoldResult {
            fold: f,
            auc: roc_auc(&out, &fold_labels).ok().map(|r| r.auc),
            metrics: confusion_metrics(&out, &fold_labels, threshold)?,
        });
    }
    Ok(CvSummary {
        k,
        seed,
        threshold,
        pooled_auc: roc_auc(&scores, labels)?.auc,
        pooled: confusion_metrics(&scores, labels, threshold)?,
        sweep: threshold_sweep(&scores, labels, grid)?,
        auc: MeanStd::of(folds.iter().filter_map(|r| r.auc)),
        accuracy: MeanStd::of(folds.iter().map(|r| r.metrics.accuracy)).expect("k >= 2"),
        precision: MeanStd::of(folds.iter().filter_map(|r| r.metrics.precision)),
        recall: MeanStd::of(folds.iter().map(|r| r.metrics.recall)).expect("k >= 2"),
        folds,
        scores,
        labels: labels.to_vec(),
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x}"))
}

/// One row per fold: `fold,auc,accuracy,precision,recall`. Undefined values
/// are left empty.
pub fn write_folds_csv(summary: &CvSummary, mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "fold,auc,accuracy,precision,recall")?;
    for r in &summary.folds {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.fold,
            opt(r.auc),
            r.metrics.accuracy,
            opt(r.metrics.precision),
            r.metrics.recall
        )?;
    }
    Ok(())
}

/// Writes `<stem>.csv` and `<stem>.json` into `dir`.
pub fn save_summary(summary: &CvSummary, dir: impl AsRef<Path>, stem: &str) -> Result<(PathBuf, PathBuf), EvalError> {
    let dir = dir.as_ref();
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| EvalError::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let csv = dir.join(format!("{stem}.csv"));
    let mut buf = Vec::new();
    write_folds_csv(summary, &mut buf).expect("writing to memory");
    std::fs::write(&csv, buf).map_err(io(&csv))?;
    let json = dir.join(format!("{stem}.json"));
    std::fs::write(&json, serde_json::to_vec_pretty(summary).expect("summary serializes")).map_err(io(&json))?;
    Ok((csv, json))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    /// Pairwise concordance, ties counted one half.
    fn concordance(scores: &[f64], labels: &[u8]) -> f64 {
        let mut num = 0.0;
        let mut pairs = 0.0;
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if labels[i] == 1 && labels[j] == 0 {
                    pairs += 1.0;
                    if scores[i] > scores[j] {
                        num += 1.0;
                    } else if scores[i] == scores[j] {
                        num += 0.5;
                    }
                }
            }
        }
        num / pairs
    }

    #[test]
    fn auc_worked_examples() {
        let s = [0.9, 0.8, 0.3, 0.1];
        assert_eq!(roc_auc(&s, &[1, 1, 0, 0]).unwrap().auc, 1.0);
        assert_eq!(roc_auc(&s, &[0, 0, 1, 1]).unwrap().auc, 0.0);
        assert_eq!(roc_auc(&[0.9, 0.4, 0.35, 0.1], &[1, 0, 1, 0]).unwrap().auc, 0.75);
        assert_eq!(roc_auc(&[0.5; 4], &[1, 0, 1, 0]).unwrap().auc, 0.5);
    }

    #[test]
    fn auc_errors() {
        assert!(matches!(roc_auc(&[0.1, 0.2], &[1, 1]), Err(EvalError::SingleClass(1))));
        assert!(matches!(roc_auc(&[0.1], &[1, 0]), Err(EvalError::LengthMismatch { .. })));
        assert!(roc_auc(&[], &[]).is_err());
        assert!(roc_auc(&[0.1, f64::NAN], &[1, 0]).is_err());
    }

    #[test]
    fn auc_matches_concordance_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            let n = rng.gen_range(2..=200);
            let mut labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2)).collect();
            labels[0] = 0;
            labels[1] = 1;
            // coarse scores so ties are common
            let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..20) as f64 / 20.0).collect();
            assert_eq!(roc_auc(&scores, &labels).unwrap().auc, concordance(&scores, &labels));
        }
    }

    #[test]
    fn confusion_worked_example() {
        let m = confusion_metrics(&[0.9, 0.6, 0.4, 0.2], &[1, 0, 1, 0], 0.4).unwrap();
        assert_eq!((m.tp, m.fp, m.tn, m.r#fn), (2, 1, 1, 0));
        assert_eq!(m.accuracy, 0.75);
        assert_eq!(m.precision, Some(2.0 / 3.0));
        assert_eq!(m.recall, 1.0);
    }

    #[test]
    fn confusion_degenerate_cases() {
        let m = confusion_metrics(&[0.5, 0.7], &[1, 1], 0.4).unwrap();
        assert_eq!((m.accuracy, m.recall), (1.0, 1.0));
        let m = confusion_metrics(&[0.5, 0.7, 0.2], &[1, 0, 1], 1.1).unwrap();
        assert_eq!(m.recall, 0.0);
        assert_eq!(m.precision, None);
        assert!(matches!(confusion_metrics(&[], &[], 0.5), Err(EvalError::Empty)));
    }

    #[test]
    fn sweep_basics() {
        let s = [0.35, 0.5, 0.2, 0.45];
        let l = [1, 1, 0, 0];
        let sw = threshold_sweep(&s, &l, &[0.3, 0.4]).unwrap();
        assert!(sw[0].recall >= sw[1].recall);
        assert_eq!(threshold_sweep(&s, &l, &[0.0]).unwrap()[0].recall, 1.0);
        assert!(matches!(threshold_sweep(&s, &l, &[]), Err(EvalError::EmptyGrid)));
    }

    #[test]
    fn best_accuracy_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s: Vec<f64> = (0..50).map(|_| rng.gen()).collect();
        let l: Vec<u8> = s.iter().map(|&x| (x + rng.gen_range(-0.3..0.3) > 0.5) as u8).collect();
        let grid: Vec<f64> = (0..=20).map(|i| i as f64 / 20.0).collect();
        let sweep = threshold_sweep(&s, &l, &grid).unwrap();
        let best = best_accuracy(&sweep).unwrap();
        let mut top = (0.0, f64::NAN);
        for &t in &grid {
            let correct = s.iter().zip(&l).filter(|(&x, &y)| (x >= t) == (y == 1)).count() as f64 / 50.0;
            if correct > top.0 {
                top = (correct, t);
            }
        }
        assert_eq!((best.accuracy, best.threshold), top);
    }

    #[test]
    fn kfold_worked_examples() {
        let labels = [1, 1, 1, 1, 1, 1, 0, 0, 0, 0];
        let split = stratified_kfold(&labels, 2, 0).unwrap();
        for f in 0..2 {
            assert_eq!(split.folds[f].len(), 5);
            let pos = split.folds[f].iter().filter(|&&i| labels[i] == 1).count();
            assert_eq!(pos, 3);
        }
        let labels: Vec<u8> = (0..600).map(|i| (i >= 300) as u8).collect();
        let split = stratified_kfold(&labels, 10, 1).unwrap();
        for f in 0..10 {
            assert_eq!(split.folds[f].len(), 60);
            assert_eq!(split.class_counts[f], [30, 30]);
        }
        assert!(matches!(stratified_kfold(&[0, 1, 1], 2, 0), Err(EvalError::TooFewInClass { class: 0, .. })));
        assert!(stratified_kfold(&[0, 1], 1, 0).is_err());
    }

    proptest! {
        #[test]
        fn kfold_partitions_and_stratifies(
            labels in prop::collection::vec(0u8..2, 20..120),
            k in prop::sample::select(vec![2usize, 5, 10]),
            seed in any::<u64>(),
        ) {
            let pos = labels.iter().filter(|&&l| l == 1).count();
            let neg = labels.len() - pos;
            prop_assume!(pos >= k && neg >= k);
            let split = stratified_kfold(&labels, k, seed).unwrap();
            let mut seen: Vec<usize> = split.folds.iter().flatten().copied().collect();
            seen.sort_unstable();
            prop_assert_eq!(seen, (0..labels.len()).collect::<Vec<_>>());
            for (class, total) in [(0u8, neg), (1, pos)] {
                for fold in &split.folds {
                    let c = fold.iter().filter(|&&i| labels[i] == class).count() as f64;
                    prop_assert!((c - total as f64 / k as f64).abs() < 1.0);
                }
            }
            let sizes: Vec<usize> = split.folds.iter().map(Vec::len).collect();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        }

        #[test]
        fn auc_is_invariant_to_monotone_transforms(
            pairs in prop::collection::vec((0.0f64..1.0, 0u8..2), 2..80),
        ) {
            let (s, mut l): (Vec<f64>, Vec<u8>) = pairs.into_iter().unzip();
            l[0] = 0;
            l[1] = 1;
            let a = roc_auc(&s, &l).unwrap();
            let t: Vec<f64> = s.iter().map(|x| (3.0 * x).exp() - 7.0).collect();
            prop_assert_eq!(a.auc, roc_auc(&t, &l).unwrap().auc);
            prop_assert_eq!(a.points.first().copied(), Some((0.0, 0.0)));
            prop_assert_eq!(a.points.last().copied(), Some((1.0, 1.0)));
            for w in a.points.windows(2) {
                prop_assert!(w[1].0 >= w[0].0 && w[1].1 >= w[0].1);
            }
            let trapezoid: f64 = a.points.windows(2).map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0).sum();
            prop_assert!((trapezoid - a.auc).abs() < 1e-12);
        }

        #[test]
        fn counts_sum_to_n(pairs in prop::collection::vec((0.0f64..1.0, 0u8..2), 1..60), t in 0.0f64..1.0) {
            let (s, l): (Vec<f64>, Vec<u8>) = pairs.into_iter().unzip();
            let m = confusion_metrics(&s, &l, t).unwrap();
            prop_assert_eq!(m.tp + m.fp + m.tn + m.r#fn, s.len());
        }

        #[test]
        fn recall_never_increases_with_threshold(
            pairs in prop::collection::vec((0.0f64..1.0, 0u8..2), 1..60),
        ) {
            let (s, l): (Vec<f64>, Vec<u8>) = pairs.into_iter().unzip();
            let grid: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
            let sweep = threshold_sweep(&s, &l, &grid).unwrap();
            for w in sweep.windows(2) {
                prop_assert!(w[1].recall <= w[0].recall);
            }
        }
    }

    #[test]
    fn cross_validation_holds_out_every_sample_once() {
        let labels: Vec<u8> = (0..40).map(|i| (i % 2) as u8).collect();
        let mut calls = Vec::new();
        let summary = cross_validate(&labels, 5, 9, 0.4, &[0.3, 0.4], |f, train, test, seed| {
            assert!(test.iter().all(|i| !train.contains(i)));
            assert_eq!(train.len() + test.len(), 40);
            calls.push((f, seed));
            // a perfect scorer that also reveals the index
            Ok(test.iter().map(|&i| labels[i] as f64 * 0.5 + 0.25).collect())
        })
        .unwrap();
        assert_eq!(calls.len(), 5);
        assert!(calls.windows(2).all(|w| w[0].1 != w[1].1));
        assert_eq!(summary.pooled_auc, 1.0);
        assert!(summary.scores.iter().all(|s| s.is_finite()));
        assert_eq!(summary.accuracy, MeanStd { mean: 1.0, std: 0.0 });
        let mut csv = Vec::new();
        write_folds_csv(&summary, &mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert_eq!(text.lines().count(), 6);
        assert_eq!(text.lines().nth(1).unwrap(), "0,1,1,1,1");
    }

    #[test]
    fn cross_validation_reports_failing_folds() {
        let labels: Vec<u8> = (0..10).map(|i| (i % 2) as u8).collect();
        let err =
            cross_validate(
                &labels,
                2,
                0,
                0.4,
                &[0.4],
                |f, _, _, _| if f == 1 { Err("boom".into()) } else { Ok(vec![0.5; 5]) },
            )
            .unwrap_err();
        assert!(matches!(err, EvalError::Fold { fold: 1, .. }));
    }

    #[test]
    fn summary_files() {
        let labels: Vec<u8> = (0..8).map(|i| (i % 2) as u8).collect();
        let summary = cross_validate(&labels, 2, 0, 0.4, &[0.4], |_, _, test, _| {
            Ok(test.iter().map(|&i| i as f64 / 8.0).collect())
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (csv, json) = save_summary(&summary, dir.path(), "cv").unwrap();
        assert!(std::fs::read_to_string(csv).unwrap().starts_with("fold,auc,accuracy,precision,recall\n"));
        let back: CvSummary = serde_json::from_slice(&std::fs::read(json).unwrap()).unwrap();
        assert_eq!(back, summary);
    }
}
