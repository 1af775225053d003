//! Byte-pair encoding: merge-table training and greedy application.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Marker appended to the final symbol of every word.
pub const END_OF_WORD: &str = "</w>";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<(String, String)>", into = "Vec<(String, String)>")]
pub struct MergeTable {
    merges: Vec<(String, String)>,
    ranks: HashMap<(String, String), usize>,
}

impl From<Vec<(String, String)>> for MergeTable {
    fn from(merges: Vec<(String, String)>) -> Self {
        let ranks = merges.iter().cloned().enumerate().map(|(i, p)| (p, i)).collect();
        Self { merges, ranks }
    }
}

impl From<MergeTable> for Vec<(String, String)> {
    fn from(table: MergeTable) -> Self {
        table.merges
    }
}

impl MergeTable {
    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn len(&self) -> usize {
        self.merges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.merges.is_empty()
    }

    /// Splits one whitespace-free word into subword symbols, applying the
    /// lowest-ranked available merge until none applies.
    pub fn apply_word(&self, word: &str) -> Vec<String> {
        let mut symbols = initial_symbols(word);
        loop {
            let best = symbols
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0].clone(), w[1].clone())))
                .min()
                .copied();
            let Some(rank) = best else { break };
            let (left, right) = &self.merges[rank];
            symbols = merge_pair(&symbols, left, right);
        }
        symbols
    }
}

fn initial_symbols(word: &str) -> Vec<String> {
    let mut symbols: Vec<String> = word.chars().map(String::from).collect();
    if let Some(last) = symbols.last_mut() {
        last.push_str(END_OF_WORD);
    }
    symbols
}

fn merge_pair(symbols: &[String], left: &str, right: &str) -> Vec<String> {
    let mut out = Vec::with_capacity(symbols.len());
    let mut i = 0;
    while i < symbols.len() {
        if i + 1 < symbols.len() && symbols[i] == left && symbols[i + 1] == right {
            out.push(format!("{left}{right}"));
            i += 2;
        } else {
            out.push(symbols[i].clone());
            i += 1;
        }
    }
    out
}

/// Learns merges until the symbol inventory reaches `vocab_size` or no
/// adjacent pair occurs at least twice. Ties go to the lexicographically
/// smallest pair.
pub fn train_bpe<S: AsRef<str>>(texts: &[S], vocab_size: usize) -> Result<MergeTable> {
    let mut word_counts: BTreeMap<&str, usize> = BTreeMap::new();
    for text in texts {
        for word in text.as_ref().split_whitespace() {
            *word_counts.entry(word).or_default() += 1;
        }
    }
    if word_counts.is_empty() {
        return Err(Error::EmptyText);
    }

    let mut words: Vec<(Vec<String>, usize)> =
        word_counts.into_iter().map(|(w, c)| (initial_symbols(w), c)).collect();
    let alphabet = words
        .iter()
        .flat_map(|(symbols, _)| symbols.iter())
        .collect::<std::collections::BTreeSet<_>>()
        .len();
    if vocab_size <= alphabet {
        return Err(Error::VocabTooSmall { vocab_size, alphabet });
    }

    let mut merges = Vec::new();
    while alphabet + merges.len() < vocab_size {
        let mut pair_counts: BTreeMap<(&str, &str), usize> = BTreeMap::new();
        for (symbols, count) in &words {
            for w in symbols.windows(2) {
                *pair_counts.entry((w[0].as_str(), w[1].as_str())).or_default() += count;
            }
        }
        // BTreeMap iterates in lexicographic order, so the first maximum wins ties.
        let mut best: Option<((&str, &str), usize)> = None;
        for (pair, count) in pair_counts {
            if best.is_none_or(|(_, c)| count > c) {
                best = Some((pair, count));
            }
        }
        let Some(((left, right), count)) = best else { break };
        if count < 2 {
            break;
        }
        let (left, right) = (left.to_string(), right.to_string());
        for (symbols, _) in &mut words {
            *symbols = merge_pair(symbols, &left, &right);
        }
        merges.push((left, right));
    }
    Ok(MergeTable::from(merges))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn first_merge_is_most_frequent_pair() {
        // symbols a a a b</w>: (a,a) occurs twice per word
        let table = train_bpe(&["aaab", "aaab"], 3).unwrap();
        assert_eq!(table.merges(), &[("a".to_string(), "a".to_string())]);
    }

    #[test]
    fn unique_single_chars_give_no_merges() {
        let table = train_bpe(&["a", "b", "c"], 10).unwrap();
        assert!(table.is_empty());
    }

    #[test]
    fn vocab_not_above_alphabet_errors() {
        let err = train_bpe(&["ab ab"], 2).unwrap_err();
        assert!(matches!(err, Error::VocabTooSmall { vocab_size: 2, alphabet: 2 }));
    }

    #[test]
    fn ties_break_lexicographically() {
        // "ab" and "cd" both occur twice; (a, b</w>) < (c, d</w>)
        let table = train_bpe(&["ab cd ab cd"], 6).unwrap();
        assert_eq!(table.merges()[0], ("a".to_string(), "b</w>".to_string()));
        assert_eq!(table.merges()[1], ("c".to_string(), "d</w>".to_string()));
    }

    #[test]
    fn deterministic() {
        let texts = ["the cat sat on the mat", "the dog sat on the log"];
        assert_eq!(train_bpe(&texts, 40).unwrap(), train_bpe(&texts, 40).unwrap());
    }

    #[test]
    fn applies_learned_merges() {
        let table = train_bpe(&["low low low lower lowest"], 30).unwrap();
        assert_eq!(table.apply_word("low"), vec!["low</w>"]);
    }

    proptest! {
        #[test]
        fn concatenation_reconstructs_text(
            words in prop::collection::vec("[a-e]{1,7}", 1..20),
            extra in 1usize..30,
        ) {
            let text = words.join(" ");
            let alphabet = words.iter().flat_map(|w| {
                let n = w.chars().count();
                w.chars().enumerate().map(move |(i, c)| if i + 1 == n { format!("{c}{END_OF_WORD}") } else { c.to_string() })
            }).collect::<std::collections::BTreeSet<_>>().len();
            let table = train_bpe(&[text.as_str()], alphabet + extra).unwrap();
            let rebuilt: String = text
                .split_whitespace()
                .flat_map(|w| table.apply_word(w))
                .collect::<String>()
                .replace(END_OF_WORD, " ");
            prop_assert_eq!(rebuilt.trim_end(), text.as_str());
        }
    }
}
