use log::warn;
use serde::{Deserialize, Serialize};

use crate::corpus::{AnnotatedDocument, EntityLabel, EntityMention};
use crate::error::{Error, Result};
use crate::tokenizer::TokenizedSequence;

/// `O` plus `B-`/`I-` for each of the twelve labels.
pub const NUM_TAGS: usize = 1 + 2 * EntityLabel::ALL.len();
pub const OUTSIDE: usize = 0;

pub fn begin_tag(label: EntityLabel) -> usize {
    1 + 2 * label.index()
}

pub fn inside_tag(label: EntityLabel) -> usize {
    2 + 2 * label.index()
}

/// `(label, is_begin)` for a non-`O` tag.
pub fn tag_label(tag: usize) -> Option<(EntityLabel, bool)> {
    if tag == OUTSIDE || tag >= NUM_TAGS {
        return None;
    }
    Some((EntityLabel::ALL[(tag - 1) / 2], tag % 2 == 1))
}

pub fn tag_name(tag: usize) -> String {
    match tag_label(tag) {
        None => "O".into(),
        Some((l, true)) => format!("B-{l}"),
        Some((l, false)) => format!("I-{l}"),
    }
}

/// Per-position tags (`None` = ignored by the loss) and, for tagged
/// positions inside a mention, the index of that mention.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BioTagSequence {
    pub tags: Vec<Option<usize>>,
    pub alignment: Vec<Option<usize>>,
}

/// Gold BIO tags for a window of `doc`. A token belongs to a mention when
/// their character intervals intersect, so boundaries inside a token widen
/// the mention to whole tokens (logged). Mentions cut by the window edge are
/// left untagged (ignored) rather than tagged as fragments. Special and
/// padding positions are ignored.
pub fn align_bio_labels(doc: &AnnotatedDocument, seq: &TokenizedSequence) -> Result<BioTagSequence> {
    let n = seq.len();
    let mut tags: Vec<Option<usize>> = seq
        .char_spans
        .iter()
        .zip(&seq.attention_mask)
        .map(|(s, &m)| (s.is_some() && m == 1).then_some(OUTSIDE))
        .collect();
    let mut alignment: Vec<Option<usize>> = vec![None; n];
    let content: Vec<usize> = (0..n).filter(|&j| tags[j].is_some()).collect();
    let (Some(&first), Some(&last)) = (content.first(), content.last()) else {
        return Ok(BioTagSequence { tags, alignment });
    };
    let window = (seq.char_spans[first].unwrap().0, seq.char_spans[last].unwrap().1);

    for (mi, m) in doc.mentions.iter().enumerate() {
        let covered: Vec<usize> = content
            .iter()
            .copied()
            .filter(|&j| {
                let (s, e) = seq.char_spans[j].unwrap();
                s < m.end && e > m.start
            })
            .collect();
        if covered.is_empty() {
            continue;
        }
        for &j in &covered {
            if let Some(other) = alignment[j] {
                return Err(Error::validation(
                    &doc.doc_id,
                    format!("mentions {other} and {mi} share the token at position {j}"),
                ));
            }
        }
        let partial = m.start < window.0 || m.end > window.1;
        if partial {
            for &j in &covered {
                tags[j] = None;
                alignment[j] = Some(mi);
            }
            continue;
        }
        let s = seq.char_spans[covered[0]].unwrap().0;
        let e = seq.char_spans[*covered.last().unwrap()].unwrap().1;
        if (s, e) != (m.start, m.end) {
            warn!(
                "{}: mention [{}, {}) widened to token boundaries [{s}, {e})",
                doc.doc_id, m.start, m.end
            );
        }
        for (k, &j) in covered.iter().enumerate() {
            tags[j] = Some(if k == 0 { begin_tag(m.label) } else { inside_tag(m.label) });
            alignment[j] = Some(mi);
        }
    }
    Ok(BioTagSequence { tags, alignment })
}

/// Turns per-position tags into mentions. Runs of `B-X I-X*` become one
/// mention spanning their tokens; an `I-X` that does not continue an `X`
/// run starts a new one. Positions without a character span (specials,
/// padding) and `None` tags break runs.
pub fn decode_entities(tags: &[Option<usize>], seq: &TokenizedSequence, text: &str) -> Vec<EntityMention> {
    let mut out = Vec::new();
    let mut open: Option<(EntityLabel, usize, usize)> = None;
    let close = |open: &mut Option<(EntityLabel, usize, usize)>, out: &mut Vec<EntityMention>| {
        if let Some((l, s, e)) = open.take() {
            out.push(EntityMention::new(text, s, e, l));
        }
    };
    for (j, tag) in tags.iter().enumerate() {
        let span = seq.char_spans.get(j).copied().flatten();
        let (Some(tag), Some((s, e))) = (*tag, span) else {
            close(&mut open, &mut out);
            continue;
        };
        match tag_label(tag) {
            None => close(&mut open, &mut out),
            Some((l, begin)) => match &mut open {
                Some((ol, _, oe)) if !begin && *ol == l => *oe = e,
                _ => {
                    close(&mut open, &mut out);
                    open = Some((l, s, e));
                }
            },
        }
    }
    close(&mut open, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::{encode, Vocab, SPECIAL_TOKENS};

    fn vocab() -> Vocab {
        let mut t: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        t.extend(["ali", "went", "to", "kuala", "lum", "##pur", "today", "."].map(String::from));
        Vocab::from_tokens(t).unwrap()
    }

    fn doc(text: &str, mentions: &[(usize, usize, EntityLabel)]) -> AnnotatedDocument {
        AnnotatedDocument {
            doc_id: "d".into(),
            text: text.into(),
            mentions: mentions.iter().map(|&(s, e, l)| EntityMention::new(text, s, e, l)).collect(),
            relations: vec![],
        }
    }

    #[test]
    fn tag_scheme() {
        assert_eq!(NUM_TAGS, 25);
        assert_eq!(tag_name(0), "O");
        assert_eq!(tag_name(begin_tag(EntityLabel::Person)), "B-PERSON");
        assert_eq!(tag_label(inside_tag(EntityLabel::Law)), Some((EntityLabel::Law, false)));
    }

    #[test]
    fn no_mentions_all_outside() {
        let v = vocab();
        let d = doc("ali went to kuala lumpur", &[]);
        let seq = encode(&d.text, &v, 10);
        let t = align_bio_labels(&d, &seq).unwrap();
        assert_eq!(t.tags[0], None);
        assert!(t.tags[1..7].iter().all(|&x| x == Some(OUTSIDE)));
        assert!(t.tags[7..].iter().all(Option::is_none));
    }

    #[test]
    fn split_word_gets_begin_then_inside() {
        let v = vocab();
        let d = doc("ali went to lumpur", &[(12, 18, EntityLabel::Location)]);
        let seq = encode(&d.text, &v, 10);
        assert_eq!(&seq.tokens[4..6], ["lum", "##pur"]);
        let t = align_bio_labels(&d, &seq).unwrap();
        let b = begin_tag(EntityLabel::Location);
        let i = inside_tag(EntityLabel::Location);
        assert_eq!(&t.tags[4..6], [Some(b), Some(i)]);
        assert_eq!(decode_entities(&t.tags, &seq, &d.text), d.mentions);
    }

    #[test]
    fn mid_token_boundary_expands_outward() {
        // "kuala lumpur" with the mention starting at the 'u' of "kuala" and
        // ending inside "lum". Oracle by hand: tokens kuala [12,17), lum [18,21),
        // ##pur [21,24). Intersections with [13,20): kuala and lum.
        let v = vocab();
        let text = "ali went to kuala lumpur";
        let d = doc(text, &[(13, 20, EntityLabel::Location)]);
        let seq = encode(text, &v, 12);
        let t = align_bio_labels(&d, &seq).unwrap();
        let oracle: Vec<Option<usize>> = seq
            .char_spans
            .iter()
            .map(|s| s.map(|(a, b)| a < 20 && b > 13))
            .map(|hit| hit.map(|h| h as usize))
            .collect();
        let b = begin_tag(EntityLabel::Location);
        let i = inside_tag(EntityLabel::Location);
        let mut seen = false;
        for (j, o) in oracle.iter().enumerate() {
            let expected = match o {
                None => None,
                Some(0) => Some(OUTSIDE),
                Some(_) if !seen => {
                    seen = true;
                    Some(b)
                }
                Some(_) => Some(i),
            };
            if seq.attention_mask[j] == 1 || expected.is_none() {
                assert_eq!(t.tags[j], expected, "position {j}");
            }
        }
        let decoded = decode_entities(&t.tags, &seq, text);
        assert_eq!((decoded[0].start, decoded[0].end), (12, 21));
    }

    #[test]
    fn mentions_sharing_a_token_rejected() {
        let v = vocab();
        let text = "ali went to lumpur";
        let d = doc(text, &[(12, 14, EntityLabel::Location), (14, 18, EntityLabel::Person)]);
        let seq = encode(text, &v, 10);
        assert!(matches!(align_bio_labels(&d, &seq), Err(Error::Validation { .. })));
    }

    #[test]
    fn mention_cut_by_window_is_ignored() {
        let v = vocab();
        let text = "ali went to lumpur";
        let d = doc(text, &[(12, 18, EntityLabel::Location)]);
        // room for "ali went to lum" only
        let seq = encode(text, &v, 6);
        let t = align_bio_labels(&d, &seq).unwrap();
        assert_eq!(t.tags[4], None);
        assert!(decode_entities(&t.tags, &seq, text).is_empty());
    }

    #[test]
    fn decode_examples() {
        let v = vocab();
        let text = "ali went to kuala";
        let seq = encode(text, &v, 6);
        let p = begin_tag(EntityLabel::Person);
        let pi = inside_tag(EntityLabel::Person);
        let got = decode_entities(&[None, Some(0), Some(p), Some(pi), Some(0), None], &seq, text);
        assert_eq!(got.len(), 1);
        assert_eq!((got[0].start, got[0].end, got[0].surface.as_str()), (4, 11, "went to"));
        assert!(decode_entities(&[None, Some(0), Some(0), Some(0), Some(0), None], &seq, text).is_empty());
        let law = inside_tag(EntityLabel::Law);
        let got = decode_entities(&[None, Some(law), Some(0), Some(0), Some(0), None], &seq, text);
        assert_eq!((got[0].start, got[0].end, got[0].label), (0, 3, EntityLabel::Law));
    }
}
