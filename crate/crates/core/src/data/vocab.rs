//! Token vocabulary with fixed reserved ids.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use crate::data::caption::tokenize_caption;
use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const START: u32 = 1;
pub const END: u32 = 2;
pub const UNK: u32 = 3;

const RESERVED: [&str; 4] = ["<pad>", "<start>", "<end>", "<unk>"];

/// Bijective token/id map over non-reserved entries; ids 0..=3 are fixed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    token_to_id: BTreeMap<String, u32>,
    id_to_token: Vec<String>,
}

impl Vocabulary {
    fn from_tokens(tokens: Vec<String>) -> Vocabulary {
        let mut id_to_token: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        id_to_token.extend(tokens);
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocabulary {
            token_to_id,
            id_to_token,
        }
    }

    /// Total size including the four reserved ids.
    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Id of a token; unknown tokens map to UNK.
    pub fn id_of(&self, token: &str) -> u32 {
        self.token_to_id.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.token_to_id.contains_key(token)
    }

    pub fn token_of(&self, id: u32) -> &str {
        &self.id_to_token[id as usize]
    }

    /// Newline-delimited `token<TAB>id` file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for (id, token) in self.id_to_token.iter().enumerate() {
            out.push_str(&format!("{token}\t{id}\n"));
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Vocabulary> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut pairs: Vec<(String, u32)> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let (token, id) = line.split_once('\t').ok_or_else(|| {
                Error::Data(format!("vocabulary line {} lacks a tab: {line:?}", lineno + 1))
            })?;
            let id: u32 = id
                .parse()
                .map_err(|_| Error::Data(format!("bad vocabulary id {id:?}")))?;
            pairs.push((token.to_string(), id));
        }
        pairs.sort_by_key(|(_, id)| *id);
        for (expect, (_, id)) in pairs.iter().enumerate() {
            if *id != expect as u32 {
                return Err(Error::Data(format!(
                    "vocabulary ids are not dense: expected {expect}, found {id}"
                )));
            }
        }
        for (i, reserved) in RESERVED.iter().enumerate() {
            if pairs.get(i).map(|(t, _)| t.as_str()) != Some(*reserved) {
                return Err(Error::Data(format!("reserved token {reserved} missing at id {i}")));
            }
        }
        Ok(Vocabulary::from_tokens(
            pairs.into_iter().skip(RESERVED.len()).map(|(t, _)| t).collect(),
        ))
    }
}

/// Builds a vocabulary from a caption corpus. Tokens with corpus frequency
/// below `min_freq` are absorbed by UNK. Ids are assigned by descending
/// frequency, ties alphabetical.
pub fn build_vocabulary(captions: &[String], min_freq: usize) -> Result<Vocabulary> {
    if min_freq < 1 {
        return Err(Error::Config("min_freq must be >= 1".into()));
    }
    if captions.is_empty() {
        return Err(Error::Data("empty caption corpus".into()));
    }
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for caption in captions {
        for sentence in tokenize_caption(caption) {
            for token in sentence {
                *counts.entry(token).or_insert(0) += 1;
            }
        }
    }
    if counts.is_empty() {
        return Err(Error::Data("caption corpus contains no tokens".into()));
    }
    let mut kept: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|(_, c)| *c >= min_freq)
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(Vocabulary::from_tokens(kept.into_iter().map(|(t, _)| t).collect()))
}
