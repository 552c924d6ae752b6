//! Lower-cased byte-pair encoding trained on the graph's own corpus.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

pub const PAD: u32 = 0;
pub const CLS: u32 = 1;
pub const UNK: u32 = 2;
const SPECIALS: [&str; 3] = ["<pad>", "<cls>", "<unk>"];
const END_OF_WORD: &str = "</w>";

/// Lower-cased alphanumeric runs. Whitespace and punctuation only separate.
pub fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Stored {
    vocab: Vec<String>,
    merges: Vec<(String, String)>,
    max_len: usize,
}

/// BPE vocabulary plus merge ranks. Encodings start with `<cls>` and are cut
/// to `max_len` ids including it.
#[derive(Debug, Clone)]
pub struct BpeTokenizer {
    vocab: Vec<String>,
    merges: Vec<(String, String)>,
    max_len: usize,
    index: HashMap<String, u32>,
    ranks: HashMap<(String, String), usize>,
}

impl PartialEq for BpeTokenizer {
    fn eq(&self, other: &Self) -> bool {
        self.vocab == other.vocab && self.merges == other.merges && self.max_len == other.max_len
    }
}

fn symbols(word: &str) -> Vec<String> {
    let chars: Vec<char> = word.chars().collect();
    chars
        .iter()
        .enumerate()
        .map(|(i, c)| {
            if i + 1 == chars.len() {
                format!("{c}{END_OF_WORD}")
            } else {
                c.to_string()
            }
        })
        .collect()
}

fn merge_pair(syms: &mut Vec<String>, a: &str, b: &str) {
    let mut i = 0;
    while i + 1 < syms.len() {
        if syms[i] == a && syms[i + 1] == b {
            let joined = format!("{a}{b}");
            syms[i] = joined;
            syms.remove(i + 1);
        }
        i += 1;
    }
}

impl BpeTokenizer {
    /// Learns merges until the vocabulary reaches `vocab_size` or no pair
    /// occurs twice. Pair ties break lexicographically.
    pub fn train(corpus: &[String], vocab_size: usize, max_len: usize) -> Self {
        let mut freq: BTreeMap<String, usize> = BTreeMap::new();
        for text in corpus {
            for w in words(text) {
                *freq.entry(w).or_default() += 1;
            }
        }
        let mut split: Vec<(Vec<String>, usize)> = freq.iter().map(|(w, &n)| (symbols(w), n)).collect();

        let mut vocab: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        let mut base: Vec<String> = split.iter().flat_map(|(s, _)| s.iter().cloned()).collect();
        base.sort();
        base.dedup();
        vocab.extend(base);

        let mut merges = Vec::new();
        while vocab.len() < vocab_size {
            let mut pairs: BTreeMap<(&str, &str), usize> = BTreeMap::new();
            for (syms, n) in &split {
                for w in syms.windows(2) {
                    *pairs.entry((w[0].as_str(), w[1].as_str())).or_default() += n;
                }
            }
            let best = pairs
                .into_iter()
                .fold(None, |best: Option<((&str, &str), usize)>, (p, n)| match best {
                    Some((_, bn)) if bn >= n => best,
                    _ => Some((p, n)),
                });
            let Some(((a, b), n)) = best else { break };
            if n < 2 {
                break;
            }
            let (a, b) = (a.to_string(), b.to_string());
            for (syms, _) in &mut split {
                merge_pair(syms, &a, &b);
            }
            vocab.push(format!("{a}{b}"));
            merges.push((a, b));
        }
        Self::from_parts(vocab, merges, max_len)
    }

    fn from_parts(vocab: Vec<String>, merges: Vec<(String, String)>, max_len: usize) -> Self {
        let index = vocab.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        let ranks = merges.iter().cloned().enumerate().map(|(i, p)| (p, i)).collect();
        Self {
            vocab,
            merges,
            max_len: max_len.max(1),
            index,
            ranks,
        }
    }

    pub fn vocab_len(&self) -> usize {
        self.vocab.len()
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn token(&self, id: u32) -> &str {
        &self.vocab[id as usize]
    }

    fn encode_word(&self, word: &str, out: &mut Vec<u32>) {
        let mut syms = symbols(word);
        loop {
            let best = syms
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0].clone(), w[1].clone())).map(|&r| (r, w[0].clone(), w[1].clone())))
                .min_by_key(|(r, _, _)| *r);
            let Some((_, a, b)) = best else { break };
            merge_pair(&mut syms, &a, &b);
        }
        out.extend(syms.iter().map(|s| self.index.get(s).copied().unwrap_or(UNK)));
    }

    /// `<cls>` followed by the word pieces, truncated to `max_len` ids.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        let mut ids = vec![CLS];
        for w in words(text) {
            if ids.len() >= self.max_len {
                break;
            }
            self.encode_word(&w, &mut ids);
        }
        ids.truncate(self.max_len);
        ids
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&Stored {
            vocab: self.vocab.clone(),
            merges: self.merges.clone(),
            max_len: self.max_len,
        })
        .expect("tokenizer serializes")
    }

    pub fn from_json(s: &str) -> serde_json::Result<Self> {
        let stored: Stored = serde_json::from_str(s)?;
        Ok(Self::from_parts(stored.vocab, stored.merges, stored.max_len))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus() -> Vec<String> {
        ["low lower lowest", "newer newest wider", "low low lowest"]
            .iter()
            .map(|s| s.to_string())
            .collect()
    }

    #[test]
    fn frequent_words_become_single_tokens() {
        let tok = BpeTokenizer::train(&corpus(), 200, 32);
        let ids = tok.encode("low");
        assert_eq!(ids.len(), 2);
        assert_eq!(tok.token(ids[1]), "low</w>");
    }

    #[test]
    fn cls_first_and_truncated() {
        let tok = BpeTokenizer::train(&corpus(), 200, 4);
        let ids = tok.encode("low low low low low low");
        assert_eq!(ids[0], CLS);
        assert_eq!(ids.len(), 4);
        assert_eq!(tok.encode(""), vec![CLS]);
    }

    #[test]
    fn unknown_characters_map_to_unk() {
        let tok = BpeTokenizer::train(&corpus(), 200, 32);
        assert!(tok.encode("zz").contains(&UNK));
    }

    #[test]
    fn case_and_whitespace_insensitive() {
        let tok = BpeTokenizer::train(&corpus(), 200, 32);
        assert_eq!(tok.encode("Lower  newest"), tok.encode("lower newest   \n"));
    }

    #[test]
    fn json_round_trip() {
        let tok = BpeTokenizer::train(&corpus(), 200, 32);
        let back = BpeTokenizer::from_json(&tok.to_json()).unwrap();
        assert_eq!(tok, back);
        assert_eq!(back.encode("lowest wider"), tok.encode("lowest wider"));
    }
}
