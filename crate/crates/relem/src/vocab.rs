use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{ReLeMError, Result};

/// Lowercases and drops every character that is not alphanumeric or
/// whitespace, then collapses runs of whitespace.
pub fn normalize_title(title: &str) -> String {
    let cleaned: String = title
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .flat_map(char::to_lowercase)
        .collect();
    cleaned.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Lowercased alphanumeric words of a sentence.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Dish-title classes used by the semantic loss.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SemanticVocabulary {
    pub k: usize,
    pub title_to_label: BTreeMap<String, usize>,
    /// Title count per label.
    pub frequencies: Vec<u64>,
}

impl SemanticVocabulary {
    pub fn label(&self, title: &str) -> Option<usize> {
        self.title_to_label.get(&normalize_title(title)).copied()
    }

    pub fn titles_by_label(&self) -> Vec<&str> {
        let mut out = vec![""; self.k];
        for (t, &l) in &self.title_to_label {
            out[l] = t;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VocabBuild {
    pub vocab: SemanticVocabulary,
    /// Set when fewer than the requested number of distinct titles exist.
    pub warning: Option<String>,
}

/// Keeps the `k` most frequent normalized titles; equal counts are ordered
/// lexicographically. Label 0 is the most frequent title.
pub fn build_semantic_vocab<S: AsRef<str>>(titles: &[S], k: usize) -> Result<VocabBuild> {
    if titles.is_empty() {
        return Err(ReLeMError::NoTitles);
    }
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    for t in titles {
        *counts.entry(normalize_title(t.as_ref())).or_default() += 1;
    }
    let mut ranked: Vec<(String, u64)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let warning = (k > ranked.len()).then(|| {
        let msg = format!(
            "requested {k} semantic classes but only {} distinct titles exist",
            ranked.len()
        );
        log::warn!("{msg}");
        msg
    });
    ranked.truncate(k);
    let frequencies = ranked.iter().map(|(_, c)| *c).collect();
    let title_to_label = ranked
        .into_iter()
        .enumerate()
        .map(|(i, (t, _))| (t, i))
        .collect::<BTreeMap<_, _>>();
    Ok(VocabBuild {
        vocab: SemanticVocabulary {
            k: title_to_label.len(),
            title_to_label,
            frequencies,
        },
        warning,
    })
}

/// Word-to-id table for recipe text, ids assigned in sorted order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenVocabulary {
    tokens: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl TokenVocabulary {
    pub fn from_tokens<I: IntoIterator<Item = String>>(tokens: I) -> Self {
        let mut sorted: Vec<String> = tokens.into_iter().collect();
        sorted.sort();
        sorted.dedup();
        let index = sorted.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self {
            tokens: sorted,
            index,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }
}
