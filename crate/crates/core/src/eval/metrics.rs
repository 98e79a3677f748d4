use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{EntityLabel, EntityMention};
use crate::error::{Error, Result};
use crate::tokenizer::CharSpan;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    NerSpan,
    ReGoldPair,
    RePredictedPair,
    MlmProbe,
}

/// True/false positive and false negative tallies.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Counts {
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        f1(self.precision(), self.recall())
    }

    fn add(&mut self, o: Counts) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Harmonic mean, 0 when both inputs are 0.
pub fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRow {
    pub label: String,
    /// Gold instances of this label.
    pub support: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub counts: Counts,
    /// False when the label has no gold instances; its scores are then not
    /// meaningful and it is listed only so the layout stays fixed.
    pub supported: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Micro {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub counts: Counts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub protocol: Protocol,
    pub per_label: Vec<LabelRow>,
    pub micro: Micro,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evaluation_loss: Option<f64>,
}

impl MetricsReport {
    /// Builds rows in the given label order. Micro scores come from the
    /// summed counts, never from averaging rows.
    pub fn from_counts(protocol: Protocol, labels: &[String], counts: &BTreeMap<String, Counts>) -> Self {
        let mut pooled = Counts::default();
        let per_label = labels
            .iter()
            .map(|l| {
                let c = counts.get(l).copied().unwrap_or_default();
                pooled.add(c);
                let support = c.tp + c.fn_;
                LabelRow {
                    label: l.clone(),
                    support,
                    precision: c.precision(),
                    recall: c.recall(),
                    f1: c.f1(),
                    counts: c,
                    supported: support > 0,
                }
            })
            .collect();
        MetricsReport {
            protocol,
            per_label,
            micro: Micro {
                precision: pooled.precision(),
                recall: pooled.recall(),
                f1: pooled.f1(),
                counts: pooled,
            },
            evaluation_loss: None,
        }
    }

    pub fn row(&self, label: &str) -> Option<&LabelRow> {
        self.per_label.iter().find(|r| r.label == label)
    }

    /// Unweighted mean of supported per-label F1, for comparison only.
    pub fn macro_f1(&self) -> f64 {
        let rows: Vec<&LabelRow> = self.per_label.iter().filter(|r| r.supported).collect();
        if rows.is_empty() {
            0.0
        } else {
            rows.iter().map(|r| r.f1).sum::<f64>() / rows.len() as f64
        }
    }
}

/// Exact `(start, end, label)` matching, one-to-one per document. Rows cover
/// all twelve labels in schema order.
pub fn ner_metrics(
    gold: &BTreeMap<String, Vec<EntityMention>>,
    pred: &BTreeMap<String, Vec<EntityMention>>,
) -> Result<MetricsReport> {
    let gk: BTreeSet<&String> = gold.keys().collect();
    let pk: BTreeSet<&String> = pred.keys().collect();
    if gk != pk {
        let diff: Vec<&&String> = gk.symmetric_difference(&pk).take(5).collect();
        return Err(Error::validation(
            diff.first().map(|s| s.as_str()).unwrap_or(""),
            format!("gold and predicted document sets differ (e.g. {diff:?})"),
        ));
    }
    let mut counts: BTreeMap<String, Counts> = BTreeMap::new();
    for (doc, g) in gold {
        let mut remaining: BTreeMap<(usize, usize, EntityLabel), usize> = BTreeMap::new();
        for m in g {
            *remaining.entry(m.key()).or_default() += 1;
        }
        for m in &pred[doc] {
            let c = counts.entry(m.label.as_str().to_string()).or_default();
            match remaining.get_mut(&m.key()) {
                Some(n) if *n > 0 => {
                    *n -= 1;
                    c.tp += 1;
                }
                _ => c.fp += 1,
            }
        }
        for ((_, _, label), n) in remaining {
            counts.entry(label.as_str().to_string()).or_default().fn_ += n;
        }
    }
    let labels: Vec<String> = EntityLabel::ALL.iter().map(|l| l.as_str().to_string()).collect();
    Ok(MetricsReport::from_counts(Protocol::NerSpan, &labels, &counts))
}

/// One labelled entity pair, keyed by document and the two mention spans.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationRecord {
    pub doc_id: String,
    pub head: CharSpan,
    pub tail: CharSpan,
    pub label: String,
}

impl RelationRecord {
    fn key(&self) -> (&str, CharSpan, CharSpan) {
        (&self.doc_id, self.head, self.tail)
    }
}

/// Relation scores. Under [`Protocol::ReGoldPair`] every prediction must
/// address a gold pair; under [`Protocol::RePredictedPair`] predictions on
/// pairs absent from gold count as false positives. Rows are sorted by label.
pub fn re_metrics(gold: &[RelationRecord], pred: &[RelationRecord], protocol: Protocol) -> Result<MetricsReport> {
    if !matches!(protocol, Protocol::ReGoldPair | Protocol::RePredictedPair) {
        return Err(Error::config("re_metrics needs a relation protocol"));
    }
    let mut gold_by_key = BTreeMap::new();
    for g in gold {
        if gold_by_key.insert(g.key(), g.label.as_str()).is_some() {
            return Err(Error::validation(&g.doc_id, format!("duplicate gold pair {:?} -> {:?}", g.head, g.tail)));
        }
    }
    let mut pred_by_key = BTreeMap::new();
    for p in pred {
        if pred_by_key.insert(p.key(), p.label.as_str()).is_some() {
            return Err(Error::validation(&p.doc_id, format!("duplicate prediction for pair {:?} -> {:?}", p.head, p.tail)));
        }
        if protocol == Protocol::ReGoldPair && !gold_by_key.contains_key(&p.key()) {
            return Err(Error::validation(
                &p.doc_id,
                format!("prediction for non-gold pair {:?} -> {:?} under the gold-pair protocol", p.head, p.tail),
            ));
        }
    }
    let mut counts: BTreeMap<String, Counts> = BTreeMap::new();
    for (key, g) in &gold_by_key {
        match pred_by_key.get(key) {
            Some(p) if p == g => counts.entry(g.to_string()).or_default().tp += 1,
            Some(p) => {
                counts.entry(g.to_string()).or_default().fn_ += 1;
                counts.entry(p.to_string()).or_default().fp += 1;
            }
            None => counts.entry(g.to_string()).or_default().fn_ += 1,
        }
    }
    for (key, p) in &pred_by_key {
        if !gold_by_key.contains_key(key) {
            counts.entry(p.to_string()).or_default().fp += 1;
        }
    }
    let labels: Vec<String> = counts.keys().cloned().collect();
    Ok(MetricsReport::from_counts(protocol, &labels, &counts))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(start: usize, end: usize, label: EntityLabel) -> EntityMention {
        EntityMention {
            start,
            end,
            label,
            surface: String::new(),
        }
    }

    fn docs(v: Vec<EntityMention>) -> BTreeMap<String, Vec<EntityMention>> {
        BTreeMap::from([("d".to_string(), v)])
    }

    #[test]
    fn perfect_prediction() {
        let g = docs(vec![m(0, 3, EntityLabel::Person), m(5, 9, EntityLabel::Location)]);
        let r = ner_metrics(&g, &g).unwrap();
        assert_eq!((r.micro.precision, r.micro.recall, r.micro.f1), (1.0, 1.0, 1.0));
        assert_eq!(r.per_label.len(), 12);
        assert!(!r.row("LANGUAGE").unwrap().supported);
    }

    #[test]
    fn hand_enumerated_confusion() {
        // gold: three PERSON; pred: one exact PERSON, one PERSON off by one char, one LOCATION
        let g = docs(vec![
            m(0, 3, EntityLabel::Person),
            m(10, 14, EntityLabel::Person),
            m(20, 25, EntityLabel::Person),
        ]);
        let p = docs(vec![
            m(0, 3, EntityLabel::Person),
            m(10, 13, EntityLabel::Person),
            m(30, 35, EntityLabel::Location),
        ]);
        let r = ner_metrics(&g, &p).unwrap();
        let person = r.row("PERSON").unwrap();
        assert_eq!(person.precision, 0.5);
        assert_eq!(person.recall, 1.0 / 3.0);
        assert!((person.f1 - 0.4).abs() < 1e-12);
        assert_eq!(r.row("LOCATION").unwrap().precision, 0.0);
        assert_eq!(r.micro.precision, 1.0 / 3.0);
        assert_eq!(r.micro.recall, 1.0 / 3.0);
    }

    #[test]
    fn document_sets_must_agree() {
        let g = docs(vec![]);
        let p = BTreeMap::from([("other".to_string(), vec![])]);
        assert!(matches!(ner_metrics(&g, &p), Err(Error::Validation { .. })));
    }

    #[test]
    fn one_to_one_matching() {
        let g = docs(vec![m(0, 3, EntityLabel::Person)]);
        let p = docs(vec![m(0, 3, EntityLabel::Person), m(0, 3, EntityLabel::Person)]);
        let c = ner_metrics(&g, &p).unwrap().micro.counts;
        assert_eq!((c.tp, c.fp, c.fn_), (1, 1, 0));
    }

    fn rel(doc: &str, h: usize, t: usize, label: &str) -> RelationRecord {
        RelationRecord {
            doc_id: doc.into(),
            head: (h, h + 1),
            tail: (t, t + 1),
            label: label.into(),
        }
    }

    #[test]
    fn relation_cross_label_error() {
        let gold = vec![rel("a", 0, 2, "x"), rel("a", 2, 4, "x"), rel("b", 0, 2, "y"), rel("b", 4, 6, "y")];
        let mut pred = gold.clone();
        pred[3].label = "x".into();
        let r = re_metrics(&gold, &pred, Protocol::ReGoldPair).unwrap();
        // x: tp 2, fp 1 -> P 2/3, R 1; y: tp 1, fn 1 -> P 1, R 1/2
        let x = r.row("x").unwrap();
        assert_eq!((x.counts.tp, x.counts.fp, x.counts.fn_), (2, 1, 0));
        let y = r.row("y").unwrap();
        assert_eq!((y.counts.tp, y.counts.fp, y.counts.fn_), (1, 0, 1));
        assert!((x.f1 - 0.8).abs() < 1e-12);
        assert!((y.f1 - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.micro.f1, 0.75);
    }

    #[test]
    fn duplicate_predictions_rejected() {
        let gold = vec![rel("a", 0, 2, "x")];
        let pred = vec![rel("a", 0, 2, "x"), rel("a", 0, 2, "y")];
        assert!(re_metrics(&gold, &pred, Protocol::ReGoldPair).is_err());
    }

    #[test]
    fn predicted_pair_protocol_counts_spurious_pairs() {
        let gold = vec![rel("a", 0, 2, "x")];
        let pred = vec![rel("a", 0, 2, "x"), rel("a", 2, 0, "x")];
        assert!(re_metrics(&gold, &pred, Protocol::ReGoldPair).is_err());
        let r = re_metrics(&gold, &pred, Protocol::RePredictedPair).unwrap();
        assert_eq!(r.micro.precision, 0.5);
        assert_eq!(r.micro.recall, 1.0);
    }
}
