//! Dictionary-based concept extraction from captions.
//!
//! A token-level prefix trie over lowercase synonym token sequences drives a
//! greedy left-to-right longest-match scan. Matched tokens are consumed, so
//! spans never overlap, and identical input always produces identical output.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufReader};
use std::path::Path;

/// A caption token with its byte offsets into the original text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

/// Lowercase and split on any non-alphanumeric codepoint; empty tokens are
/// dropped and byte offsets retained. Unicode alphanumerics survive intact.
pub fn tokenize(caption: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut start: Option<usize> = None;
    for (i, ch) in caption.char_indices() {
        if ch.is_alphanumeric() {
            if start.is_none() {
                start = Some(i);
            }
        } else if let Some(s) = start.take() {
            tokens.push(Token {
                text: caption[s..i].to_lowercase(),
                start: s,
                end: i,
            });
        }
    }
    if let Some(s) = start {
        tokens.push(Token {
            text: caption[s..].to_lowercase(),
            start: s,
            end: caption.len(),
        });
    }
    tokens
}

#[derive(Debug, Default)]
struct TrieNode {
    children: HashMap<String, TrieNode>,
    cui: Option<String>,
}

/// Synonym dictionary as a token-level prefix trie. Each synonym maps to
/// exactly one CUI.
#[derive(Debug, Default)]
pub struct ConceptVocab {
    root: TrieNode,
    entries: usize,
}

impl ConceptVocab {
    /// Load a TSV of `cui \t canonical_name \t synonym` rows, one synonym per
    /// row (producers list the canonical name as its own synonym row).
    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::from_reader(BufReader::new(file))
    }

    pub fn from_reader<R: BufRead>(reader: R) -> Result<Self> {
        let mut vocab = Self::default();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(Error::MalformedRow { line: i + 1 });
            }
            vocab.insert_checked(fields[0], fields[2], i + 1)?;
        }
        Ok(vocab)
    }

    pub fn insert(&mut self, cui: &str, synonym: &str) -> Result<()> {
        self.insert_checked(cui, synonym, 0)
    }

    fn insert_checked(&mut self, cui: &str, synonym: &str, line: usize) -> Result<()> {
        let tokens = tokenize(synonym);
        if tokens.is_empty() {
            return Err(Error::MalformedRow { line });
        }
        let mut node = &mut self.root;
        for t in &tokens {
            node = node.children.entry(t.text.clone()).or_default();
        }
        match &node.cui {
            Some(existing) if existing != cui => {
                return Err(Error::ConflictingSynonym {
                    synonym: synonym.to_string(),
                    existing: existing.clone(),
                    incoming: cui.to_string(),
                });
            }
            Some(_) => {}
            None => {
                node.cui = Some(cui.to_string());
                self.entries += 1;
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries == 0
    }

    // Longest match starting at tokens[pos]: (token count, cui).
    fn longest_match(&self, tokens: &[Token], pos: usize) -> Option<(usize, &str)> {
        let mut node = &self.root;
        let mut best: Option<(usize, &str)> = None;
        for (len, tok) in tokens[pos..].iter().enumerate() {
            match node.children.get(&tok.text) {
                Some(next) => node = next,
                None => break,
            }
            if let Some(cui) = &node.cui {
                best = Some((len + 1, cui));
            }
        }
        best
    }
}

/// One extracted concept mention; token indices are 0-based, end exclusive.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractedSpan {
    pub start: usize,
    pub end: usize,
    pub cui: String,
    /// Original caption slice (original case and separators preserved).
    pub surface: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionResult {
    pub id: String,
    pub tokens: Vec<String>,
    pub spans: Vec<ExtractedSpan>,
}

/// Greedy left-to-right longest-match extraction over the caption's tokens.
pub fn extract(id: &str, caption: &str, vocab: &ConceptVocab) -> ExtractionResult {
    let tokens = tokenize(caption);
    let mut spans = Vec::new();
    let mut pos = 0;
    while pos < tokens.len() {
        if let Some((len, cui)) = vocab.longest_match(&tokens, pos) {
            let start_byte = tokens[pos].start;
            let end_byte = tokens[pos + len - 1].end;
            spans.push(ExtractedSpan {
                start: pos,
                end: pos + len,
                cui: cui.to_string(),
                surface: caption[start_byte..end_byte].to_string(),
            });
            pos += len;
        } else {
            pos += 1;
        }
    }
    ExtractionResult {
        id: id.to_string(),
        tokens: tokens.into_iter().map(|t| t.text).collect(),
        spans,
    }
}

/// Exact per-CUI mention counts, sorted by descending count then CUI.
pub fn corpus_stats<'a, I>(results: I) -> Vec<(String, u64)>
where
    I: IntoIterator<Item = &'a ExtractionResult>,
{
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    for r in results {
        for span in &r.spans {
            *counts.entry(span.cui.clone()).or_insert(0) += 1;
        }
    }
    let mut table: Vec<(String, u64)> = counts.into_iter().collect();
    table.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    table
}
