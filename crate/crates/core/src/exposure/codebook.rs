use serde::{Deserialize, Serialize};

use crate::llm::normalize_category;

/// Per-cluster category tallies in insertion order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Codebook {
    entries: Vec<(String, usize)>,
}

impl Codebook {
    /// Known categories, each with count 0.
    pub fn from_categories(categories: &[String]) -> Self {
        let mut book = Self::default();
        for c in categories {
            if book.position(c).is_none() {
                book.entries.push((c.clone(), 0));
            }
        }
        book
    }

    pub fn entries(&self) -> &[(String, usize)] {
        &self.entries
    }

    pub fn categories(&self) -> Vec<String> {
        self.entries.iter().map(|(c, _)| c.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entry index of `category` under normalized comparison.
    pub fn position(&self, category: &str) -> Option<usize> {
        let key = normalize_category(category);
        self.entries.iter().position(|(c, _)| normalize_category(c) == key)
    }

    pub fn count(&self, category: &str) -> usize {
        self.position(category).map_or(0, |i| self.entries[i].1)
    }

    pub fn total(&self) -> usize {
        self.entries.iter().map(|(_, n)| n).sum()
    }

    /// Increments a matching entry or appends `(category, 1)`; returns the
    /// entry's index.
    pub fn record(&mut self, category: &str) -> usize {
        match self.position(category) {
            Some(i) => {
                self.entries[i].1 += 1;
                i
            }
            None => {
                self.entries.push((category.to_string(), 1));
                self.entries.len() - 1
            }
        }
    }
}

/// Functional form of [`Codebook::record`].
pub fn update_codebook(mut book: Codebook, assigned: &str) -> Codebook {
    book.record(assigned);
    book
}

/// The `k` most frequent categories, ties broken by insertion order. Entries
/// never assigned (count 0) are not candidates, so fewer than `k` may return.
pub fn top_k_categories(book: &Codebook, k: usize) -> Vec<String> {
    let mut ranked: Vec<(usize, &(String, usize))> = book.entries.iter().enumerate().filter(|(_, e)| e.1 > 0).collect();
    ranked.sort_by(|a, b| b.1 .1.cmp(&a.1 .1).then(a.0.cmp(&b.0)));
    ranked.into_iter().take(k).map(|(_, (c, _))| c.clone()).collect()
}
