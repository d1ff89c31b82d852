use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{AstTree, ProgramRecord};
use crate::error::{Error, Result};

/// Reserved entry at index 0 of both the type and the token tables.
pub const UNK: &str = "<unk>";
pub const DEFAULT_MIN_COUNT: usize = 2;

/// Node-type and token inventories for embedding lookup. Index 0 of each
/// table is [`UNK`]; unknown strings and tokenless nodes map there.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "VocabRepr", into = "VocabRepr")]
pub struct Vocabulary {
    type_names: Vec<String>,
    tokens: Vec<String>,
    min_count: usize,
    type_index: HashMap<String, usize>,
    token_index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabRepr {
    min_count: usize,
    type_names: Vec<String>,
    tokens: Vec<String>,
}

impl From<VocabRepr> for Vocabulary {
    fn from(r: VocabRepr) -> Self {
        Vocabulary::from_parts(r.type_names, r.tokens, r.min_count)
    }
}

impl From<Vocabulary> for VocabRepr {
    fn from(v: Vocabulary) -> Self {
        VocabRepr {
            min_count: v.min_count,
            type_names: v.type_names,
            tokens: v.tokens,
        }
    }
}

fn index_of(items: &[String]) -> HashMap<String, usize> {
    items.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect()
}

/// Frequency desc, then lexicographic; UNK prepended.
fn ranked(counts: HashMap<&str, usize>, min_count: usize) -> Vec<String> {
    let mut items: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|&(s, c)| c >= min_count && s != UNK)
        .collect();
    items.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    std::iter::once(UNK.to_string())
        .chain(items.into_iter().map(|(s, _)| s.to_string()))
        .collect()
}

impl Vocabulary {
    pub(crate) fn from_parts(type_names: Vec<String>, tokens: Vec<String>, min_count: usize) -> Self {
        Vocabulary {
            type_index: index_of(&type_names),
            token_index: index_of(&tokens),
            type_names,
            tokens,
            min_count,
        }
    }

    pub fn build(dataset: &[ProgramRecord], min_count: usize) -> Result<Self> {
        Self::from_trees(dataset.iter().map(|r| &r.ast), min_count)
    }

    /// Every observed node type is kept; tokens need `min_count` occurrences.
    pub fn from_trees<'a>(trees: impl IntoIterator<Item = &'a AstTree>, min_count: usize) -> Result<Self> {
        let mut types: HashMap<&str, usize> = HashMap::new();
        let mut tokens: HashMap<&str, usize> = HashMap::new();
        let mut seen = false;
        for tree in trees {
            seen = true;
            for node in &tree.nodes {
                *types.entry(node.node_type.as_str()).or_default() += 1;
                if let Some(t) = node.token.as_deref() {
                    *tokens.entry(t).or_default() += 1;
                }
            }
        }
        if !seen {
            return Err(Error::EmptyDataset);
        }
        Ok(Self::from_parts(ranked(types, 1), ranked(tokens, min_count), min_count))
    }

    pub fn type_names(&self) -> &[String] {
        &self.type_names
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn min_count(&self) -> usize {
        self.min_count
    }

    pub fn num_types(&self) -> usize {
        self.type_names.len()
    }

    pub fn num_tokens(&self) -> usize {
        self.tokens.len()
    }

    pub fn type_id(&self, name: &str) -> usize {
        self.type_index.get(name).copied().unwrap_or(0)
    }

    /// Index of a token; `None` (tokenless node) and unknown tokens give UNK.
    pub fn token_id(&self, token: Option<&str>) -> usize {
        token
            .and_then(|t| self.token_index.get(t).copied())
            .unwrap_or(0)
    }

    pub fn contains_token(&self, token: &str) -> bool {
        self.token_index.contains_key(token)
    }
}
