//! Retrieval metrics, NIL detection and reports.
//!
//! A mention is predicted NIL when its top-1 score is strictly below the
//! threshold τ. Candidate thresholds are the distinct observed scores plus
//! `+∞`. With NIL in play the threshold gates the whole prediction: an in-KB
//! mention scored below τ counts as wrong at every k.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datakit::{read_jsonl, write_jsonl, MentionRecord};
use crate::encoder::{BiEncoder, TokenSequence};
use crate::error::{Error, Result};
use crate::sampling::{top_k, EntityIndex};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedPrediction {
    pub mention_id: String,
    /// Entity ids, best first.
    pub ranked: Vec<String>,
    pub scores: Vec<f64>,
    pub top1_score: f64,
}

impl RankedPrediction {
    /// 1-based rank of `entity_id`, if it is within the stored depth.
    pub fn rank_of(&self, entity_id: &str) -> Option<usize> {
        self.ranked.iter().position(|e| e == entity_id).map(|p| p + 1)
    }

    pub fn in_top_k(&self, entity_id: &str, k: usize) -> bool {
        self.ranked.iter().take(k).any(|e| e == entity_id)
    }
}

/// Scores every mention against the whole index and keeps the best `depth`
/// entities (all of them if `depth` exceeds the KB).
pub fn rank_all(
    model: &BiEncoder,
    mention_ids: &[String],
    mentions: &[TokenSequence],
    index: &EntityIndex,
    depth: usize,
) -> Result<Vec<RankedPrediction>> {
    if mention_ids.len() != mentions.len() {
        return Err(Error::DimensionMismatch { expected: mention_ids.len(), actual: mentions.len() });
    }
    if index.is_empty() {
        return Err(Error::Empty("entity index"));
    }
    if depth == 0 {
        return Err(Error::InvalidArgument("rank depth must be at least 1".into()));
    }
    mention_ids
        .iter()
        .zip(mentions)
        .map(|(id, seq)| {
            let fwd = model.encode_mention(seq)?;
            let scores = index.scores(&fwd.output)?;
            Ok(ranked_from_scores(id.clone(), &scores, &index.entity_ids, depth))
        })
        .collect()
}

/// Builds a prediction from raw scores over `entity_ids` (which must be in
/// ascending id order for the tie-break to be by id).
pub fn ranked_from_scores(mention_id: String, scores: &[f64], entity_ids: &[String], depth: usize) -> RankedPrediction {
    let order = top_k(scores, depth, None);
    RankedPrediction {
        mention_id,
        ranked: order.iter().map(|&p| entity_ids[p].clone()).collect(),
        scores: order.iter().map(|&p| scores[p]).collect(),
        top1_score: scores[order[0]],
    }
}

fn predictions_by_id(preds: &[RankedPrediction]) -> Result<HashMap<&str, &RankedPrediction>> {
    let mut map = HashMap::with_capacity(preds.len());
    for p in preds {
        if map.insert(p.mention_id.as_str(), p).is_some() {
            return Err(Error::InvalidArgument(format!("duplicate prediction for mention `{}`", p.mention_id)));
        }
    }
    Ok(map)
}

fn lookup<'a>(map: &HashMap<&str, &'a RankedPrediction>, m: &MentionRecord) -> Result<&'a RankedPrediction> {
    map.get(m.mention_id.as_str())
        .copied()
        .ok_or_else(|| Error::InvalidArgument(format!("no prediction for mention `{}`", m.mention_id)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Recall {
    pub k: usize,
    pub micro: f64,
    /// Mean of per-group recalls; mentions without a group form one group.
    pub macro_by_group: f64,
}

/// recall@k over the in-KB mentions of `mentions`; NIL mentions are ignored.
pub fn recall_at_k(preds: &[RankedPrediction], mentions: &[MentionRecord], k: usize) -> Result<Recall> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let map = predictions_by_id(preds)?;
    let mut hits = Vec::new();
    for m in mentions {
        let Some(gold) = m.label.entity() else { continue };
        let p = lookup(&map, m)?;
        hits.push((m.group.as_deref(), p.in_top_k(gold, k)));
    }
    if hits.is_empty() {
        return Err(Error::Empty("in-KB mentions"));
    }
    Ok(summarize(k, &hits))
}

fn summarize(k: usize, hits: &[(Option<&str>, bool)]) -> Recall {
    let micro = hits.iter().filter(|(_, h)| *h).count() as f64 / hits.len() as f64;
    let mut groups: BTreeMap<Option<&str>, (usize, usize)> = BTreeMap::new();
    for &(g, h) in hits {
        let entry = groups.entry(g).or_default();
        entry.0 += h as usize;
        entry.1 += 1;
    }
    let macro_by_group = groups.values().map(|&(h, n)| h as f64 / n as f64).sum::<f64>() / groups.len() as f64;
    Recall { k, micro, macro_by_group }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrCurve {
    /// One point per candidate threshold, in ascending threshold order.
    pub points: Vec<PrPoint>,
    pub au_pr: f64,
}

/// Distinct observed scores in ascending order, then `+∞`.
pub fn candidate_thresholds(scores: &[f64]) -> Vec<f64> {
    let mut t: Vec<f64> = scores.to_vec();
    t.sort_by(f64::total_cmp);
    t.dedup();
    t.push(f64::INFINITY);
    t
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct NilCounts {
    pub true_positive: usize,
    pub false_positive: usize,
    pub false_negative: usize,
}

impl NilCounts {
    /// NIL-class counts at `tau`.
    pub fn at(scores: &[f64], is_nil: &[bool], tau: f64) -> Self {
        let mut c = Self::default();
        for (&s, &nil) in scores.iter().zip(is_nil) {
            match (s < tau, nil) {
                (true, true) => c.true_positive += 1,
                (true, false) => c.false_positive += 1,
                (false, true) => c.false_negative += 1,
                (false, false) => {}
            }
        }
        c
    }

    /// 1 when nothing is predicted NIL.
    pub fn precision(&self) -> f64 {
        let predicted = self.true_positive + self.false_positive;
        if predicted == 0 {
            1.0
        } else {
            self.true_positive as f64 / predicted as f64
        }
    }

    /// 0 when there are no NIL mentions.
    pub fn recall(&self) -> f64 {
        let actual = self.true_positive + self.false_negative;
        if actual == 0 {
            0.0
        } else {
            self.true_positive as f64 / actual as f64
        }
    }

    pub fn f1(&self) -> f64 {
        let denom = 2 * self.true_positive + self.false_positive + self.false_negative;
        if denom == 0 {
            0.0
        } else {
            2.0 * self.true_positive as f64 / denom as f64
        }
    }
}

fn check_scores(scores: &[f64], is_nil: &[bool]) -> Result<()> {
    if scores.len() != is_nil.len() {
        return Err(Error::DimensionMismatch { expected: scores.len(), actual: is_nil.len() });
    }
    if scores.is_empty() {
        return Err(Error::Empty("scores"));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("top-1 scores"));
    }
    Ok(())
}

/// Precision/recall of the NIL class at every candidate threshold and the
/// trapezoidal area under the curve over recall.
pub fn pr_curve_nil(top1_scores: &[f64], is_nil: &[bool]) -> Result<PrCurve> {
    check_scores(top1_scores, is_nil)?;
    if is_nil.iter().all(|&n| n) || is_nil.iter().all(|&n| !n) {
        return Err(Error::InvalidArgument("NIL PR curve needs both NIL and in-KB mentions".into()));
    }
    // Sweep ascending thresholds: each distinct score moves its mentions into
    // the predicted-NIL set for every larger threshold.
    let mut order: Vec<usize> = (0..top1_scores.len()).collect();
    order.sort_by(|&a, &b| top1_scores[a].total_cmp(&top1_scores[b]));
    let total_nil = is_nil.iter().filter(|&&n| n).count();
    let mut counts = NilCounts { false_negative: total_nil, ..Default::default() };
    let mut points = Vec::new();
    let mut next = 0;
    for tau in candidate_thresholds(top1_scores) {
        while next < order.len() && top1_scores[order[next]] < tau {
            if is_nil[order[next]] {
                counts.true_positive += 1;
                counts.false_negative -= 1;
            } else {
                counts.false_positive += 1;
            }
            next += 1;
        }
        points.push(PrPoint { threshold: tau, precision: counts.precision(), recall: counts.recall() });
    }
    let au_pr = points
        .windows(2)
        .map(|w| (w[1].recall - w[0].recall) * (w[0].precision + w[1].precision) / 2.0)
        .sum();
    Ok(PrCurve { points, au_pr })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NilThreshold {
    pub tau: f64,
    pub selected_on: String,
    pub f1_at_tau: f64,
}

impl NilThreshold {
    pub fn write(&self, path: &Path) -> Result<()> {
        let text = format!("tau\t{}\nselected_on\t{}\nf1_at_tau\t{}\n", self.tau, self.selected_on, self.f1_at_tau);
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let schema = |line: usize, message: String| Error::Schema { path: path.to_path_buf(), line, message };
        let mut fields: HashMap<&str, (usize, &str)> = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let (key, value) = line
                .split_once('\t')
                .ok_or_else(|| schema(i + 1, "expected `key<TAB>value`".into()))?;
            fields.insert(key, (i + 1, value));
        }
        let get = |key: &str| fields.get(key).copied().ok_or_else(|| schema(0, format!("missing `{key}`")));
        let number = |key: &str| -> Result<f64> {
            let (line, v) = get(key)?;
            v.parse().map_err(|_| schema(line, format!("bad number `{v}`")))
        };
        Ok(Self { tau: number("tau")?, selected_on: get("selected_on")?.1.to_string(), f1_at_tau: number("f1_at_tau")? })
    }
}

/// The candidate threshold with the highest NIL F1; ties go to the smallest.
/// An all-NIL input selects `+∞`.
pub fn tune_nil_threshold(top1_scores: &[f64], is_nil: &[bool], selected_on: &str) -> Result<NilThreshold> {
    check_scores(top1_scores, is_nil)?;
    if !is_nil.iter().any(|&n| n) {
        return Err(Error::InvalidArgument("threshold tuning needs at least one NIL mention".into()));
    }
    let curve_thresholds = candidate_thresholds(top1_scores);
    let mut order: Vec<usize> = (0..top1_scores.len()).collect();
    order.sort_by(|&a, &b| top1_scores[a].total_cmp(&top1_scores[b]));
    let total_nil = is_nil.iter().filter(|&&n| n).count();
    let mut counts = NilCounts { false_negative: total_nil, ..Default::default() };
    let mut best: Option<(f64, f64)> = None;
    let mut next = 0;
    for tau in curve_thresholds {
        while next < order.len() && top1_scores[order[next]] < tau {
            if is_nil[order[next]] {
                counts.true_positive += 1;
                counts.false_negative -= 1;
            } else {
                counts.false_positive += 1;
            }
            next += 1;
        }
        let f1 = counts.f1();
        if best.is_none_or(|(_, b)| f1 > b) {
            best = Some((tau, f1));
        }
    }
    let (tau, f1_at_tau) = best.expect("at least one candidate");
    Ok(NilThreshold { tau, selected_on: selected_on.to_string(), f1_at_tau })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub nil_correct: usize,
    pub nil_wrong: usize,
    pub in_kb_correct: usize,
    pub in_kb_wrong: usize,
}

/// Outcome cells at threshold `tau` and cut-off `k`.
pub fn confusion(preds: &[RankedPrediction], mentions: &[MentionRecord], tau: f64, k: usize) -> Result<Confusion> {
    let map = predictions_by_id(preds)?;
    let mut c = Confusion::default();
    for m in mentions {
        let p = lookup(&map, m)?;
        match m.label.entity() {
            None if p.top1_score < tau => c.nil_correct += 1,
            None => c.nil_wrong += 1,
            Some(gold) if p.top1_score >= tau && p.in_top_k(gold, k) => c.in_kb_correct += 1,
            Some(_) => c.in_kb_wrong += 1,
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NilMetrics {
    pub tau: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Absent when the mentions do not contain both classes.
    pub au_pr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub n_mentions: usize,
    pub n_nil: usize,
    pub recall: Vec<Recall>,
    pub nil: Option<NilMetrics>,
    pub pr_curve: Option<PrCurve>,
}

/// Plain recall@k over in-KB mentions, without NIL handling.
pub fn evaluate(preds: &[RankedPrediction], mentions: &[MentionRecord], ks: &[usize]) -> Result<EvalReport> {
    let recall = ks.iter().map(|&k| recall_at_k(preds, mentions, k)).collect::<Result<Vec<_>>>()?;
    Ok(EvalReport {
        n_mentions: mentions.len(),
        n_nil: mentions.iter().filter(|m| m.label.is_nil()).count(),
        recall,
        nil: None,
        pr_curve: None,
    })
}

/// All-classes recall@k with the NIL threshold gating every prediction,
/// plus NIL precision/recall at `tau` and the NIL PR curve.
pub fn evaluate_with_nil(
    preds: &[RankedPrediction],
    mentions: &[MentionRecord],
    tau: f64,
    ks: &[usize],
) -> Result<EvalReport> {
    if mentions.is_empty() {
        return Err(Error::Empty("mentions"));
    }
    let map = predictions_by_id(preds)?;
    let mut top1 = Vec::with_capacity(mentions.len());
    let mut is_nil = Vec::with_capacity(mentions.len());
    for m in mentions {
        top1.push(lookup(&map, m)?.top1_score);
        is_nil.push(m.label.is_nil());
    }

    let mut recall = Vec::with_capacity(ks.len());
    for &k in ks {
        if k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        let hits: Vec<(Option<&str>, bool)> = mentions
            .iter()
            .zip(&top1)
            .map(|(m, &s)| {
                let correct = match m.label.entity() {
                    None => s < tau,
                    Some(gold) => s >= tau && map[m.mention_id.as_str()].in_top_k(gold, k),
                };
                (m.group.as_deref(), correct)
            })
            .collect();
        recall.push(summarize(k, &hits));
    }

    let counts = NilCounts::at(&top1, &is_nil, tau);
    let pr_curve = pr_curve_nil(&top1, &is_nil).ok();
    let nil = NilMetrics {
        tau,
        precision: counts.precision(),
        recall: counts.recall(),
        f1: counts.f1(),
        au_pr: pr_curve.as_ref().map(|c| c.au_pr),
    };
    Ok(EvalReport {
        n_mentions: mentions.len(),
        n_nil: is_nil.iter().filter(|&&n| n).count(),
        recall,
        nil: Some(nil),
        pr_curve,
    })
}

impl EvalReport {
    pub fn recall_at(&self, k: usize) -> Option<&Recall> {
        self.recall.iter().find(|r| r.k == k)
    }

    /// `metric<TAB>value` lines.
    pub fn metrics_tsv(&self) -> String {
        let mut out = String::from("metric\tvalue\n");
        out.push_str(&format!("n_mentions\t{}\n", self.n_mentions));
        out.push_str(&format!("n_nil\t{}\n", self.n_nil));
        for r in &self.recall {
            out.push_str(&format!("recall@{}\t{}\n", r.k, r.micro));
            out.push_str(&format!("macro_recall@{}\t{}\n", r.k, r.macro_by_group));
        }
        if let Some(n) = &self.nil {
            out.push_str(&format!("nil_tau\t{}\n", n.tau));
            out.push_str(&format!("nil_precision\t{}\n", n.precision));
            out.push_str(&format!("nil_recall\t{}\n", n.recall));
            out.push_str(&format!("nil_f1\t{}\n", n.f1));
            if let Some(a) = n.au_pr {
                out.push_str(&format!("nil_au_pr\t{a}\n"));
            }
        }
        out
    }

    /// `threshold<TAB>precision<TAB>recall` lines, empty body without a curve.
    pub fn pr_curve_tsv(&self) -> String {
        let mut out = String::from("threshold\tprecision\trecall\n");
        for p in self.pr_curve.iter().flat_map(|c| &c.points) {
            out.push_str(&format!("{}\t{}\t{}\n", p.threshold, p.precision, p.recall));
        }
        out
    }

    pub fn write_metrics(&self, path: &Path) -> Result<()> {
        write_text(path, &self.metrics_tsv())
    }

    pub fn write_pr_curve(&self, path: &Path) -> Result<()> {
        write_text(path, &self.pr_curve_tsv())
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(text.as_bytes())?;
    w.flush()?;
    Ok(())
}

pub fn write_predictions(path: &Path, preds: &[RankedPrediction]) -> Result<()> {
    write_jsonl(path, preds)
}

pub fn read_predictions(path: &Path) -> Result<Vec<RankedPrediction>> {
    read_jsonl(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datakit::Label;
    use proptest::prelude::*;

    fn pred(id: &str, ranked: &[&str], top1: f64) -> RankedPrediction {
        RankedPrediction {
            mention_id: id.into(),
            ranked: ranked.iter().map(|s| s.to_string()).collect(),
            scores: (0..ranked.len()).map(|i| top1 - i as f64).collect(),
            top1_score: top1,
        }
    }

    fn mention(id: &str, label: Option<&str>, group: Option<&str>) -> MentionRecord {
        MentionRecord {
            mention_id: id.into(),
            context_left: String::new(),
            mention: "x".into(),
            context_right: String::new(),
            label: label.map_or(Label::Nil, |l| Label::Entity(l.into())),
            group: group.map(String::from),
        }
    }

    #[test]
    fn gold_at_rank_three() {
        let preds = [pred("m", &["a", "b", "c", "d"], 1.0)];
        let ms = [mention("m", Some("c"), None)];
        assert_eq!(recall_at_k(&preds, &ms, 1).unwrap().micro, 0.0);
        assert_eq!(recall_at_k(&preds, &ms, 4).unwrap().micro, 1.0);
        assert_eq!(preds[0].rank_of("c"), Some(3));
    }

    #[test]
    fn missing_prediction_is_an_error() {
        let preds = [pred("m", &["a"], 1.0)];
        let ms = [mention("other", Some("a"), None)];
        assert!(recall_at_k(&preds, &ms, 1).is_err());
    }

    #[test]
    fn macro_recall_averages_groups() {
        let preds = [pred("1", &["a"], 1.0), pred("2", &["a"], 1.0), pred("3", &["a"], 1.0)];
        let ms = [
            mention("1", Some("a"), Some("g0")),
            mention("2", Some("b"), Some("g0")),
            mention("3", Some("a"), Some("g1")),
        ];
        let r = recall_at_k(&preds, &ms, 1).unwrap();
        assert!((r.micro - 2.0 / 3.0).abs() < 1e-15);
        assert!((r.macro_by_group - 0.75).abs() < 1e-15);
    }

    #[test]
    fn separated_scores_have_unit_area() {
        let scores = [0.1, 0.2, 0.8, 0.9];
        let nil = [true, true, false, false];
        let curve = pr_curve_nil(&scores, &nil).unwrap();
        assert_eq!(curve.au_pr, 1.0);
        assert_eq!(curve.points[0].recall, 0.0);
        assert_eq!(curve.points[0].precision, 1.0);
        let t = tune_nil_threshold(&scores, &nil, "validation").unwrap();
        assert_eq!((t.tau, t.f1_at_tau), (0.8, 1.0));
    }

    #[test]
    fn inverted_labels_fall_to_prevalence() {
        let n = 400;
        let scores: Vec<f64> = (0..n).map(|i| i as f64).collect();
        // NIL mentions carry the highest scores: the worst possible detector.
        let nil: Vec<bool> = (0..n).map(|i| i >= n - 40).collect();
        let curve = pr_curve_nil(&scores, &nil).unwrap();
        assert!(curve.au_pr < 0.12, "{}", curve.au_pr);
        assert!(curve.au_pr > 0.05, "{}", curve.au_pr);
    }

    #[test]
    fn single_class_is_degenerate() {
        assert!(pr_curve_nil(&[0.1, 0.2], &[true, true]).is_err());
        assert!(pr_curve_nil(&[0.1, 0.2], &[false, false]).is_err());
        assert!(tune_nil_threshold(&[0.1, 0.2], &[false, false], "v").is_err());
    }

    #[test]
    fn all_nil_selects_infinity() {
        let t = tune_nil_threshold(&[0.3, 0.1, 0.3], &[true, true, true], "v").unwrap();
        assert_eq!(t.tau, f64::INFINITY);
        assert_eq!(t.f1_at_tau, 1.0);
    }

    #[test]
    fn threshold_boundaries() {
        let preds = [pred("1", &["a", "b"], 0.5), pred("2", &["a", "b"], 0.7), pred("3", &["b", "a"], 0.2)];
        let ms = [mention("1", Some("b"), None), mention("2", Some("a"), None), mention("3", None, None)];

        let low = evaluate_with_nil(&preds, &ms, f64::NEG_INFINITY, &[1, 2]).unwrap();
        let plain = evaluate(&preds, &ms, &[1, 2]).unwrap();
        // in-KB part equals plain recall; the NIL mention is always wrong
        assert_eq!(low.recall_at(1).unwrap().micro, plain.recall_at(1).unwrap().micro * 2.0 / 3.0);
        assert_eq!(low.recall_at(2).unwrap().micro, 2.0 / 3.0);
        assert_eq!(low.nil.unwrap().recall, 0.0);

        let high = evaluate_with_nil(&preds, &ms, f64::INFINITY, &[1, 2]).unwrap();
        assert_eq!(high.recall_at(1).unwrap().micro, 1.0 / 3.0);
        assert_eq!(high.recall_at(2).unwrap().micro, 1.0 / 3.0);
        assert_eq!(high.nil.unwrap().recall, 1.0);
    }

    #[test]
    fn hand_enumerated_confusion() {
        let preds = [
            pred("1", &["a", "b"], 0.9), // in-KB, gold top-1, above τ
            pred("2", &["b", "a"], 0.8), // in-KB, gold rank 2, above τ
            pred("3", &["a", "b"], 0.3), // in-KB, gold top-1, below τ
            pred("4", &["a", "b"], 0.2), // NIL, below τ
            pred("5", &["a", "b"], 0.6), // NIL, above τ
        ];
        let ms = [
            mention("1", Some("a"), None),
            mention("2", Some("a"), None),
            mention("3", Some("a"), None),
            mention("4", None, None),
            mention("5", None, None),
        ];
        let c1 = confusion(&preds, &ms, 0.5, 1).unwrap();
        assert_eq!(c1, Confusion { nil_correct: 1, nil_wrong: 1, in_kb_correct: 1, in_kb_wrong: 2 });
        let c2 = confusion(&preds, &ms, 0.5, 2).unwrap();
        assert_eq!(c2, Confusion { nil_correct: 1, nil_wrong: 1, in_kb_correct: 2, in_kb_wrong: 1 });
        let report = evaluate_with_nil(&preds, &ms, 0.5, &[1, 2]).unwrap();
        assert_eq!(report.recall_at(1).unwrap().micro, 2.0 / 5.0);
        assert_eq!(report.recall_at(2).unwrap().micro, 3.0 / 5.0);
        let nil = report.nil.unwrap();
        assert_eq!(nil.precision, 0.5);
        assert_eq!(nil.recall, 0.5);
    }

    #[test]
    fn threshold_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tau.tsv");
        for tau in [0.25, f64::INFINITY] {
            let t = NilThreshold { tau, selected_on: "validation".into(), f1_at_tau: 0.5 };
            t.write(&path).unwrap();
            assert_eq!(NilThreshold::read(&path).unwrap(), t);
        }
    }

    proptest! {
        #[test]
        fn recall_is_monotone_in_k(
            golds in prop::collection::vec(0usize..10, 1..30),
            seed in 0u64..1000,
        ) {
            let ids: Vec<String> = (0..10).map(|i| format!("e{i}")).collect();
            let preds: Vec<RankedPrediction> = golds.iter().enumerate().map(|(i, _)| {
                let scores: Vec<f64> = (0..10).map(|j| ((i as u64 * 31 + j as u64 * 17 + seed) % 23) as f64).collect();
                ranked_from_scores(format!("m{i}"), &scores, &ids, 10)
            }).collect();
            let ms: Vec<MentionRecord> = golds.iter().enumerate()
                .map(|(i, &g)| mention(&format!("m{i}"), Some(&ids[g]), Some(if i % 2 == 0 { "a" } else { "b" })))
                .collect();
            let mut last = 0.0;
            for k in 1..=10 {
                let r = recall_at_k(&preds, &ms, k).unwrap().micro;
                prop_assert!(r >= last);
                last = r;
            }
            prop_assert_eq!(last, 1.0);
        }

        #[test]
        fn confusion_partitions_mentions(
            scores in prop::collection::vec(-1.0f64..1.0, 2..40),
            nil_mask in prop::collection::vec(any::<bool>(), 40),
            tau_frac in 0.0f64..1.0,
        ) {
            let lo = scores.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let tau = lo + tau_frac * (hi - lo);
            let preds: Vec<RankedPrediction> = scores.iter().enumerate()
                .map(|(i, &s)| pred(&format!("m{i}"), &["a", "b"], s)).collect();
            let ms: Vec<MentionRecord> = (0..scores.len())
                .map(|i| mention(&format!("m{i}"), if nil_mask[i] { None } else { Some("b") }, None)).collect();
            let c = confusion(&preds, &ms, tau, 1).unwrap();
            prop_assert_eq!(c.nil_correct + c.nil_wrong + c.in_kb_correct + c.in_kb_wrong, scores.len());
        }

        #[test]
        fn pr_recall_is_non_increasing_as_tau_decreases(
            scores in prop::collection::vec(-1.0f64..1.0, 2..60),
            nil_mask in prop::collection::vec(any::<bool>(), 60),
        ) {
            let mut nil: Vec<bool> = nil_mask[..scores.len()].to_vec();
            nil[0] = true;
            nil[1] = false;
            let curve = pr_curve_nil(&scores, &nil).unwrap();
            for w in curve.points.windows(2) {
                prop_assert!(w[1].recall >= w[0].recall);
            }
            prop_assert!((0.0..=1.0).contains(&curve.au_pr));
        }
    }
}
