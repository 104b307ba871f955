//! Text-derived features: sentence segmentation, query/statement counts,
//! word counts and a unigram TF-IDF model.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const INTERROGATIVE_LEADS: &[&str] = &[
    "who", "what", "when", "where", "why", "how", "should", "can", "could", "would", "do",
    "does", "did", "is", "are",
];

fn is_terminator(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

/// Splits on runs of `.`, `!` and `?`. A run ends a sentence only when it is
/// followed by whitespace or the end of the text, so "2.5 mg" stays whole.
/// A trailing unterminated fragment is its own sentence.
pub fn split_sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut start = 0;
    let mut i = 0;
    while i < chars.len() {
        if is_terminator(chars[i].1) {
            let mut j = i;
            while j + 1 < chars.len() && is_terminator(chars[j + 1].1) {
                j += 1;
            }
            let at_boundary = j + 1 == chars.len() || chars[j + 1].1.is_whitespace();
            if at_boundary {
                let end = chars[j].0 + chars[j].1.len_utf8();
                let s = text[start..end].trim();
                if !s.is_empty() {
                    out.push(s.to_string());
                }
                start = end;
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    let tail = text[start..].trim();
    if !tail.is_empty() {
        out.push(tail.to_string());
    }
    out
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceKindCounts {
    pub queries: u32,
    pub statements: u32,
}

pub fn is_query(sentence: &str) -> bool {
    let s = sentence.trim();
    let trailing: String = s
        .chars()
        .rev()
        .take_while(|c| is_terminator(*c))
        .collect();
    if trailing.contains('?') {
        return true;
    }
    let lower = s.to_lowercase();
    INTERROGATIVE_LEADS.iter().any(|lead| {
        lower
            .strip_prefix(lead)
            .is_some_and(|rest| rest.starts_with(' '))
    })
}

pub fn count_sentence_kinds(text: &str) -> SentenceKindCounts {
    let mut counts = SentenceKindCounts::default();
    for s in split_sentences(text) {
        if is_query(&s) {
            counts.queries += 1;
        } else {
            counts.statements += 1;
        }
    }
    counts
}

/// Whitespace-delimited tokens that contain at least one alphanumeric char.
pub fn word_count(text: &str) -> u32 {
    text.split_whitespace()
        .filter(|t| t.chars().any(char::is_alphanumeric))
        .count() as u32
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizerConfig {
    pub lowercase: bool,
    /// Minimum token length in characters.
    pub min_token_len: usize,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        Self {
            lowercase: true,
            min_token_len: 2,
        }
    }
}

impl TokenizerConfig {
    /// Lowercases (optionally), splits on non-alphanumeric characters and
    /// drops tokens shorter than `min_token_len`.
    pub fn tokenize(&self, text: &str) -> Vec<String> {
        text.split(|c: char| !c.is_alphanumeric())
            .filter(|t| t.chars().count() >= self.min_token_len.max(1))
            .map(|t| {
                if self.lowercase {
                    t.to_lowercase()
                } else {
                    t.to_string()
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseVector {
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
    pub dimension: usize,
}

impl SparseVector {
    pub fn zeros(dimension: usize) -> Self {
        Self {
            indices: Vec::new(),
            values: Vec::new(),
            dimension,
        }
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &SparseVector) -> f64 {
        let (mut i, mut j, mut acc) = (0, 0, 0.0);
        while i < self.indices.len() && j < other.indices.len() {
            match self.indices[i].cmp(&other.indices[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    acc += self.values[i] * other.values[j];
                    i += 1;
                    j += 1;
                }
            }
        }
        acc
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.dimension];
        for (&i, &v) in self.indices.iter().zip(&self.values) {
            d[i] = v;
        }
        d
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices.iter().copied().zip(self.values.iter().copied())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfidfModel {
    /// Terms in column order.
    pub terms: Vec<String>,
    pub idf: Vec<f64>,
    pub doc_count: usize,
    pub tokenizer: TokenizerConfig,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl TfidfModel {
    pub fn from_parts(
        terms: Vec<String>,
        idf: Vec<f64>,
        doc_count: usize,
        tokenizer: TokenizerConfig,
    ) -> Result<Self> {
        if terms.len() != idf.len() {
            return Err(Error::Dimension {
                what: "tf-idf idf weights",
                expected: terms.len(),
                got: idf.len(),
            });
        }
        let index = terms
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Ok(Self {
            terms,
            idf,
            doc_count,
            tokenizer,
            index,
        })
    }

    /// Rebuilds the term lookup after deserialization.
    pub fn reindex(&mut self) {
        self.index = self
            .terms
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
    }

    pub fn dimension(&self) -> usize {
        self.terms.len()
    }

    pub fn term_index(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }

    pub fn idf_of(&self, term: &str) -> Option<f64> {
        self.term_index(term).map(|i| self.idf[i])
    }

    pub fn vocabulary_csv(&self) -> String {
        let mut s = String::from("term,index,idf\n");
        for (i, (t, w)) in self.terms.iter().zip(&self.idf).enumerate() {
            s.push_str(&format!("{t},{i},{w}\n"));
        }
        s
    }

    /// Raw term counts times idf, L2-normalised. OOV tokens are ignored.
    pub fn vector(&self, text: &str) -> SparseVector {
        self.vector_from_tokens(&self.tokenizer.tokenize(text))
    }

    pub fn vector_from_tokens(&self, tokens: &[String]) -> SparseVector {
        let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
        for t in tokens {
            if let Some(i) = self.term_index(t) {
                *counts.entry(i).or_insert(0.0) += 1.0;
            }
        }
        let mut v = SparseVector {
            indices: Vec::with_capacity(counts.len()),
            values: Vec::with_capacity(counts.len()),
            dimension: self.dimension(),
        };
        for (i, c) in counts {
            v.indices.push(i);
            v.values.push(c * self.idf[i]);
        }
        let norm = v.norm();
        if norm > 0.0 {
            v.values.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }

    /// Cosine similarity of the two normalised TF-IDF vectors; 0 when either
    /// side has no in-vocabulary token.
    pub fn cosine_similarity(&self, question: &str, response: &str) -> f64 {
        let q = self.vector(question);
        let r = self.vector(response);
        q.dot(&r).clamp(0.0, 1.0)
    }
}

/// Fits a smoothed-idf unigram model: `idf(t) = ln((1+N)/(1+df(t))) + 1`
/// over terms with `df(t) >= min_df`. Columns are ordered lexicographically.
pub fn fit_tfidf<S: AsRef<str>>(
    docs: &[S],
    min_df: usize,
    tokenizer: TokenizerConfig,
) -> Result<TfidfModel> {
    if docs.is_empty() {
        return Err(Error::Invalid("cannot fit tf-idf on zero documents".into()));
    }
    let mut df: BTreeMap<String, usize> = BTreeMap::new();
    let mut any_tokens = false;
    for d in docs {
        let mut toks = tokenizer.tokenize(d.as_ref());
        any_tokens |= !toks.is_empty();
        toks.sort_unstable();
        toks.dedup();
        for t in toks {
            *df.entry(t).or_insert(0) += 1;
        }
    }
    if !any_tokens {
        return Err(Error::Invalid("all documents are empty after tokenization".into()));
    }
    let n = docs.len() as f64;
    let (terms, idf): (Vec<_>, Vec<_>) = df
        .into_iter()
        .filter(|(_, c)| *c >= min_df)
        .map(|(t, c)| (t, ((1.0 + n) / (1.0 + c as f64)).ln() + 1.0))
        .unzip();
    TfidfModel::from_parts(terms, idf, docs.len(), tokenizer)
}

pub fn tfidf_cosine_similarity(m: &TfidfModel, question: &str, response: &str) -> f64 {
    m.cosine_similarity(question, response)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const SINGLE: TokenizerConfig = TokenizerConfig {
        lowercase: true,
        min_token_len: 1,
    };

    #[test]
    fn sentence_examples() {
        assert!(split_sentences("").is_empty());
        assert_eq!(split_sentences("Have you at least seen your doctor?").len(), 1);
        let s = "Sleep well, eat on time and maintain your fluid intake and see if all \
                 this makes any difference to your headache. Good luck!";
        assert_eq!(split_sentences(s), vec![
            "Sleep well, eat on time and maintain your fluid intake and see if all this makes any difference to your headache.",
            "Good luck!"
        ]);
        assert_eq!(split_sentences("Take 2.5 mg daily. Ok"), vec!["Take 2.5 mg daily.", "Ok"]);
        assert_eq!(split_sentences("Really?! Yes..."), vec!["Really?!", "Yes..."]);
    }

    #[test]
    fn kind_examples() {
        assert_eq!(
            count_sentence_kinds("Should I go get a brain scan?"),
            SentenceKindCounts { queries: 1, statements: 0 }
        );
        assert_eq!(count_sentence_kinds(""), SentenceKindCounts::default());
        let t = "I have CT with contrast done. Nothing wrong. What can I do to get rid of this headache?";
        assert_eq!(
            count_sentence_kinds(t),
            SentenceKindCounts { queries: 1, statements: 2 }
        );
        // Lead word without a question mark.
        assert_eq!(count_sentence_kinds("How do I cope.").queries, 1);
        // Lead word must be a whole word.
        assert_eq!(count_sentence_kinds("Isolation helps.").queries, 0);
    }

    #[test]
    fn word_count_examples() {
        assert_eq!(word_count(""), 0);
        assert_eq!(word_count("Good luck!"), 2);
        assert_eq!(word_count("—  …"), 0);
        assert_eq!(word_count("  a - b  "), 2);
    }

    #[test]
    fn fit_single_term() {
        let m = fit_tfidf(&["a", "a"], 1, SINGLE).unwrap();
        assert_eq!(m.terms, vec!["a"]);
        assert!((m.idf[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn fit_min_df_filter_and_errors() {
        let m = fit_tfidf(&["a b", "a c"], 2, SINGLE).unwrap();
        assert_eq!(m.terms, vec!["a"]);
        assert!(fit_tfidf::<&str>(&[], 1, SINGLE).is_err());
        assert!(fit_tfidf(&["", "  ..."], 1, SINGLE).is_err());
    }

    #[test]
    fn full_coverage_term_has_min_idf() {
        let m = fit_tfidf(&["a b", "a c", "a d e"], 1, SINGLE).unwrap();
        let ia = m.idf_of("a").unwrap();
        assert!(m.idf.iter().all(|&w| w >= ia));
        assert!(m.idf.iter().all(|&w| w > 0.0));
    }

    /// Hand oracle for docs {"a b", "a c"}: idf(a)=1, idf(b)=idf(c)=ln(3/2)+1.
    fn hand_vectors() -> (f64, f64) {
        let wb = (1.5f64).ln() + 1.0;
        let norm = (1.0 + wb * wb).sqrt();
        (1.0 / norm, wb / norm)
    }

    #[test]
    fn vector_matches_hand_computation() {
        let m = fit_tfidf(&["a b", "a c"], 1, SINGLE).unwrap();
        let (va, vb) = hand_vectors();
        let v = m.vector("a b");
        assert_eq!(v.indices, vec![0, 1]);
        assert!((v.values[0] - va).abs() < 1e-12);
        assert!((v.values[1] - vb).abs() < 1e-12);
        assert!((v.norm() - 1.0).abs() < 1e-9);
        let z = m.vector("zzz qqq");
        assert!(z.indices.is_empty());
        assert_eq!(z.norm(), 0.0);
    }

    #[test]
    fn cosine_examples() {
        let m = fit_tfidf(&["a b", "a c"], 1, SINGLE).unwrap();
        let (va, _) = hand_vectors();
        // Only "a" is shared.
        assert!((m.cosine_similarity("a b", "a c") - va * va).abs() < 1e-12);
        assert!((m.cosine_similarity("a b", "a b") - 1.0).abs() < 1e-9);
        assert_eq!(m.cosine_similarity("b", "c"), 0.0);
        assert_eq!(m.cosine_similarity("", "a"), 0.0);
    }

    #[test]
    fn vocabulary_csv_lists_every_term() {
        let m = fit_tfidf(&["a b", "a c"], 1, SINGLE).unwrap();
        let csv = m.vocabulary_csv();
        assert!(csv.starts_with("term,index,idf\na,0,1\n"));
        assert_eq!(csv.lines().count(), 4);
    }

    fn words() -> impl Strategy<Value = String> {
        proptest::collection::vec(
            prop_oneof![
                Just("pain"), Just("doctor"), Just("scan"), Just("what"), Just("is"),
                Just("sleep."), Just("help?"), Just("ok!"), Just("  "), Just("2.5")
            ],
            0..25,
        )
        .prop_map(|w| w.join(" "))
    }

    proptest! {
        #[test]
        fn kinds_partition_sentences(t in words()) {
            let k = count_sentence_kinds(&t);
            prop_assert_eq!((k.queries + k.statements) as usize, split_sentences(&t).len());
        }

        #[test]
        fn cosine_symmetric_and_bounded(a in words(), b in words(), c in words()) {
            let m = fit_tfidf(&[a.clone(), b.clone(), c, "pain scan".to_string()], 1, TokenizerConfig::default()).unwrap();
            let ab = m.cosine_similarity(&a, &b);
            let ba = m.cosine_similarity(&b, &a);
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&ab));
        }

        #[test]
        fn duplicating_a_document_keeps_idf_order(docs in proptest::collection::vec(words(), 1..6), pick in 0usize..6) {
            prop_assume!(docs.iter().any(|d| !TokenizerConfig::default().tokenize(d).is_empty()));
            let m1 = fit_tfidf(&docs, 1, TokenizerConfig::default()).unwrap();
            let mut more = docs.clone();
            more.push(docs[pick % docs.len()].clone());
            let m2 = fit_tfidf(&more, 1, TokenizerConfig::default()).unwrap();
            prop_assert_eq!(&m1.terms, &m2.terms);
            for i in 0..m1.idf.len() {
                for j in 0..m1.idf.len() {
                    if m1.idf[i] < m1.idf[j] {
                        prop_assert!(m2.idf[i] <= m2.idf[j] + 1e-12);
                    }
                }
            }
        }
    }
}
