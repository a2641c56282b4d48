//! Caption extraction and tokenization.
//!
//! The caption is the impression followed by the findings, lowercased and
//! whitespace-normalized. Sentences split on periods; punctuation becomes
//! standalone tokens; every encoded sentence ends with the END id.

use crate::data::{RawReport, Vocabulary, END, PAD, START};
use crate::error::{Error, Result};

/// Builds the target caption for a study. Errors when the study has
/// neither an impression nor findings, flagging it for exclusion.
pub fn extract_caption(report: &RawReport) -> Result<String> {
    let joined = format!("{} {}", report.impression, report.findings);
    let normalized = normalize(&joined);
    if normalized.is_empty() {
        return Err(Error::Data(
            "study has empty impression and findings; exclude it".into(),
        ));
    }
    Ok(normalized)
}

fn normalize(text: &str) -> String {
    text.to_lowercase()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

const PUNCT: [char; 6] = [',', ':', ';', '!', '?', '"'];

/// Splits a caption into sentences of word/punctuation tokens.
pub fn tokenize_caption(caption: &str) -> Vec<Vec<String>> {
    let lower = caption.to_lowercase();
    let mut sentences = Vec::new();
    for raw_sentence in lower.split('.') {
        let mut tokens = Vec::new();
        for word in raw_sentence.split_whitespace() {
            let mut current = String::new();
            for ch in word.chars() {
                if PUNCT.contains(&ch) {
                    if !current.is_empty() {
                        tokens.push(std::mem::take(&mut current));
                    }
                    tokens.push(ch.to_string());
                } else {
                    current.push(ch);
                }
            }
            if !current.is_empty() {
                tokens.push(current);
            }
        }
        if !tokens.is_empty() {
            sentences.push(tokens);
        }
    }
    sentences
}

/// A caption as sentence-segmented token-id sequences. Every sentence ends
/// with END; ids are valid under the vocabulary that produced them.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct TokenizedReport {
    pub sentences: Vec<Vec<u32>>,
}

impl TokenizedReport {
    /// Tokenizes and encodes a caption. Errors if no sentence survives.
    pub fn from_caption(caption: &str, vocab: &Vocabulary) -> Result<TokenizedReport> {
        let sentences = tokenize_caption(caption);
        if sentences.is_empty() {
            return Err(Error::Data(format!("caption tokenizes to nothing: {caption:?}")));
        }
        let encoded = sentences
            .iter()
            .map(|tokens| {
                let mut ids: Vec<u32> = tokens.iter().map(|t| vocab.id_of(t)).collect();
                ids.push(END);
                ids
            })
            .collect();
        Ok(TokenizedReport { sentences: encoded })
    }

    /// All ids are defined under `vocab` and every sentence ends with END.
    pub fn is_valid(&self, vocab: &Vocabulary) -> bool {
        !self.sentences.is_empty()
            && self.sentences.iter().all(|s| {
                !s.is_empty()
                    && *s.last().unwrap() == END
                    && s.iter().all(|&id| (id as usize) < vocab.len())
            })
    }

    /// Content tokens (no PAD/START/END), flattened across sentences.
    pub fn content_ids(&self) -> Vec<u32> {
        self.sentences
            .iter()
            .flatten()
            .copied()
            .filter(|&id| id != PAD && id != START && id != END)
            .collect()
    }

    /// Content tokens as strings.
    pub fn content_tokens(&self, vocab: &Vocabulary) -> Vec<String> {
        self.content_ids()
            .iter()
            .map(|&id| vocab.token_of(id).to_string())
            .collect()
    }

    /// Renders back to a caption string; inverse of `from_caption` for
    /// reports whose tokens are all in-vocabulary.
    pub fn to_caption(&self, vocab: &Vocabulary) -> String {
        self.sentences
            .iter()
            .map(|s| {
                let words: Vec<&str> = s
                    .iter()
                    .filter(|&&id| id != END && id != PAD && id != START)
                    .map(|&id| vocab.token_of(id))
                    .collect();
                format!("{} .", words.join(" "))
            })
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn token_count(&self) -> usize {
        self.sentences.iter().map(|s| s.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::build_vocabulary;

    fn report(impression: &str, findings: &str) -> RawReport {
        RawReport {
            impression: impression.into(),
            findings: findings.into(),
            tags: String::new(),
            comparison: String::new(),
            indication: String::new(),
        }
    }

    #[test]
    fn caption_single_field() {
        let c = extract_caption(&report("no acute disease.", "")).unwrap();
        assert_eq!(c, "no acute disease.");
    }

    #[test]
    fn caption_orders_impression_then_findings() {
        let c = extract_caption(&report("Stable chest.", "Heart size normal.")).unwrap();
        assert_eq!(c, "stable chest. heart size normal.");
    }

    #[test]
    fn caption_both_empty_is_error() {
        assert!(extract_caption(&report("", "  ")).is_err());
    }

    #[test]
    fn tokenizer_separates_punctuation_and_sentences() {
        let s = tokenize_caption("heart size normal, lungs clear. no effusion.");
        assert_eq!(
            s,
            vec![
                vec!["heart", "size", "normal", ",", "lungs", "clear"],
                vec!["no", "effusion"],
            ]
            .into_iter()
            .map(|v: Vec<&str>| v.into_iter().map(String::from).collect::<Vec<_>>())
            .collect::<Vec<_>>()
        );
    }

    #[test]
    fn tokenize_detokenize_roundtrip() {
        let corpus = vec![
            "heart size normal. lungs are clear.".to_string(),
            "there is a square in the upper left quadrant.".to_string(),
        ];
        let vocab = build_vocabulary(&corpus, 1).unwrap();
        for caption in &corpus {
            let t = TokenizedReport::from_caption(caption, &vocab).unwrap();
            let round = TokenizedReport::from_caption(&t.to_caption(&vocab), &vocab).unwrap();
            assert_eq!(t, round);
        }
    }
}
