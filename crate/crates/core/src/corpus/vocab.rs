//! Frozen string-to-index vocabularies with a reserved UNK entry.

use std::collections::HashMap;

/// Word vocabulary. Index 0 is the shared UNK entry; out-of-vocabulary
/// surfaces map there. Insertion order is first occurrence, so builds are
/// deterministic for a fixed input order.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    items: Vec<String>,
    index: HashMap<String, usize>,
}

pub const UNK_WORD: usize = 0;

impl Vocab {
    pub fn new() -> Self {
        let mut v = Vocab { items: Vec::new(), index: HashMap::new() };
        v.insert("<unk>");
        v
    }

    fn insert(&mut self, s: &str) -> usize {
        if let Some(&i) = self.index.get(s) {
            return i;
        }
        let i = self.items.len();
        self.items.push(s.to_string());
        self.index.insert(s.to_string(), i);
        i
    }

    pub fn from_surfaces<'a>(surfaces: impl IntoIterator<Item = &'a str>) -> Self {
        let mut v = Self::new();
        for s in surfaces {
            v.insert(s);
        }
        v
    }

    /// Extend with additional surfaces (used when folding in dev/test words
    /// covered by the embedding file).
    pub fn extend<'a>(&mut self, surfaces: impl IntoIterator<Item = &'a str>) {
        for s in surfaces {
            self.insert(s);
        }
    }

    pub fn lookup(&self, s: &str) -> usize {
        self.index.get(s).copied().unwrap_or(UNK_WORD)
    }

    pub fn contains(&self, s: &str) -> bool {
        self.index.contains_key(s)
    }

    pub fn surface(&self, id: usize) -> &str {
        &self.items[id]
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &String> {
        self.items.iter()
    }

    pub fn fingerprint(&self) -> u64 {
        crate::numeric::fnv1a_strings(self.items.iter().map(|s| s.as_str()))
    }
}

impl Default for Vocab {
    fn default() -> Self {
        Self::new()
    }
}

/// Character vocabulary. Index 0 is PAD (used to widen short tokens for the
/// character convolution), index 1 is UNK.
#[derive(Debug, Clone, PartialEq)]
pub struct CharVocab {
    items: Vec<char>,
    index: HashMap<char, usize>,
}

pub const PAD_CHAR: usize = 0;
pub const UNK_CHAR: usize = 1;

impl CharVocab {
    pub fn from_chars(chars: impl IntoIterator<Item = char>) -> Self {
        let mut items = vec!['\u{0}', '\u{1}'];
        let mut index = HashMap::new();
        index.insert('\u{0}', PAD_CHAR);
        index.insert('\u{1}', UNK_CHAR);
        let mut seen: Vec<char> = chars.into_iter().collect();
        seen.sort_unstable();
        seen.dedup();
        for c in seen {
            if let std::collections::hash_map::Entry::Vacant(e) = index.entry(c) {
                e.insert(items.len());
                items.push(c);
            }
        }
        CharVocab { items, index }
    }

    pub fn lookup(&self, c: char) -> usize {
        self.index.get(&c).copied().unwrap_or(UNK_CHAR)
    }

    pub fn encode(&self, surface: &str) -> Vec<usize> {
        surface.chars().map(|c| self.lookup(c)).collect()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn fingerprint(&self) -> u64 {
        let strs: Vec<String> = self.items.iter().map(|c| c.to_string()).collect();
        crate::numeric::fnv1a_strings(strs.iter().map(|s| s.as_str()))
    }
}
