/// A pre-split word with its `[start, end)` offsets in Unicode scalar values.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Word {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

/// ASCII punctuation plus any other visible non-alphanumeric character.
fn is_punctuation(c: char) -> bool {
    c.is_ascii_punctuation() || (!c.is_alphanumeric() && !c.is_whitespace() && !c.is_control())
}

/// Splits on Unicode whitespace and isolates every punctuation character as a
/// word of its own. Control characters are dropped.
pub fn pre_split(text: &str) -> Vec<Word> {
    let mut words = Vec::new();
    let mut current = String::new();
    let mut start = 0;
    let flush = |current: &mut String, start: usize, end: usize, words: &mut Vec<Word>| {
        if !current.is_empty() {
            words.push(Word {
                text: std::mem::take(current),
                start,
                end,
            });
        }
    };
    for (i, c) in text.chars().enumerate() {
        if c.is_whitespace() || c.is_control() {
            flush(&mut current, start, i, &mut words);
        } else if is_punctuation(c) {
            flush(&mut current, start, i, &mut words);
            words.push(Word {
                text: c.to_string(),
                start: i,
                end: i + 1,
            });
        } else {
            if current.is_empty() {
                start = i;
            }
            current.push(c);
        }
    }
    let n = text.chars().count();
    flush(&mut current, start, n, &mut words);
    words
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texts(ws: &[Word]) -> Vec<&str> {
        ws.iter().map(|w| w.text.as_str()).collect()
    }

    #[test]
    fn splits_whitespace_and_punctuation() {
        let ws = pre_split("Hello, Taman Sri-Muda!\n ok");
        assert_eq!(texts(&ws), ["Hello", ",", "Taman", "Sri", "-", "Muda", "!", "ok"]);
        assert_eq!((ws[2].start, ws[2].end), (7, 12));
    }

    #[test]
    fn offsets_count_scalar_values() {
        let ws = pre_split("café “RM50”");
        assert_eq!(texts(&ws), ["café", "“", "RM50", "”"]);
        assert_eq!((ws[2].start, ws[2].end), (6, 10));
    }

    #[test]
    fn empty_and_blank() {
        assert!(pre_split("").is_empty());
        assert!(pre_split(" \t\n").is_empty());
    }
}
