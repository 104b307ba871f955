//! Seven-way emotion intensities per text: ingested from a JSONL sidecar or
//! estimated with a word lexicon when no sidecar is available.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::textfeat::TokenizerConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Emotion {
    Anger,
    Disgust,
    Fear,
    Joy,
    Sadness,
    Surprise,
    Neutral,
}

impl Emotion {
    /// Sidecar column order.
    pub const ALL: [Emotion; 7] = [
        Emotion::Anger,
        Emotion::Disgust,
        Emotion::Fear,
        Emotion::Joy,
        Emotion::Sadness,
        Emotion::Surprise,
        Emotion::Neutral,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Emotion::Anger => "anger",
            Emotion::Disgust => "disgust",
            Emotion::Fear => "fear",
            Emotion::Joy => "joy",
            Emotion::Sadness => "sadness",
            Emotion::Surprise => "surprise",
            Emotion::Neutral => "neutral",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl std::str::FromStr for Emotion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Emotion::ALL
            .into_iter()
            .find(|e| e.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::Invalid(format!("unknown emotion `{s}`")))
    }
}

/// Intensities in [`Emotion::ALL`] order; components in [0,1], summing to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmotionScores(pub [f64; 7]);

impl EmotionScores {
    pub const SUM_TOLERANCE: f64 = 1e-6;
    pub const LOAD_TOLERANCE: f64 = 1e-3;

    pub fn neutral() -> Self {
        let mut s = [0.0; 7];
        s[Emotion::Neutral.index()] = 1.0;
        Self(s)
    }

    pub fn get(&self, e: Emotion) -> f64 {
        self.0[e.index()]
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }

    /// Checks the component range and that the sum is within `tolerance` of 1.
    pub fn check(&self, tolerance: f64) -> std::result::Result<(), String> {
        for (e, v) in Emotion::ALL.iter().zip(self.0) {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(format!("{} = {v} outside [0, 1]", e.name()));
            }
        }
        let s = self.sum();
        if (s - 1.0).abs() > tolerance {
            return Err(format!("scores sum to {s}, expected 1"));
        }
        Ok(())
    }

    /// Validates against the load tolerance and renormalises records whose
    /// sum is off by more than [`Self::SUM_TOLERANCE`].
    pub fn validated(self, pair_id: &str) -> Result<Self> {
        self.check(Self::LOAD_TOLERANCE).map_err(|reason| Error::Emotion {
            pair_id: pair_id.to_string(),
            reason,
        })?;
        let s = self.sum();
        if (s - 1.0).abs() > Self::SUM_TOLERANCE {
            let mut v = self.0;
            v.iter_mut().for_each(|x| *x /= s);
            return Ok(Self(v));
        }
        Ok(self)
    }

    pub fn argmax(&self) -> Emotion {
        let mut best = 0;
        for i in 1..7 {
            if self.0[i] > self.0[best] {
                best = i;
            }
        }
        Emotion::ALL[best]
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SidecarRecord {
    pair_id: String,
    q_emotions: [f64; 7],
    r_emotions: [f64; 7],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairEmotions {
    pub question: EmotionScores,
    pub response: EmotionScores,
}

/// Emotion scores keyed by pair_id, as read from a sidecar file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmotionTable {
    entries: HashMap<String, PairEmotions>,
}

impl EmotionTable {
    pub fn insert(&mut self, pair_id: impl Into<String>, e: PairEmotions) {
        self.entries.insert(pair_id.into(), e);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, pair_id: &str) -> Result<&PairEmotions> {
        self.entries
            .get(pair_id)
            .ok_or_else(|| Error::UnknownPair(pair_id.to_string()))
    }

    pub fn contains(&self, pair_id: &str) -> bool {
        self.entries.contains_key(pair_id)
    }

    /// Writes records sorted by pair_id.
    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        let mut ids: Vec<&String> = self.entries.keys().collect();
        ids.sort();
        for id in ids {
            let e = &self.entries[id];
            let rec = SidecarRecord {
                pair_id: id.clone(),
                q_emotions: e.question.0,
                r_emotions: e.response.0,
            };
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

pub fn load_emotion_scores<R: BufRead>(reader: R) -> Result<EmotionTable> {
    let mut table = EmotionTable::default();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SidecarRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        let question = EmotionScores(rec.q_emotions).validated(&rec.pair_id)?;
        let response = EmotionScores(rec.r_emotions).validated(&rec.pair_id)?;
        if table.contains(&rec.pair_id) {
            return Err(Error::DuplicatePair(rec.pair_id));
        }
        table.insert(rec.pair_id, PairEmotions { question, response });
    }
    Ok(table)
}

pub fn read_emotion_file(path: &std::path::Path) -> Result<EmotionTable> {
    load_emotion_scores(std::io::BufReader::new(std::fs::File::open(path)?))
}

/// Term to valenced-emotion map for the fallback scorer.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Lexicon {
    terms: HashMap<String, Emotion>,
}

impl Lexicon {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, term: &str, e: Emotion) -> Result<()> {
        if e == Emotion::Neutral {
            return Err(Error::Invalid(format!(
                "lexicon term `{term}` cannot be tagged neutral"
            )));
        }
        self.terms.insert(term.to_lowercase(), e);
        Ok(())
    }

    pub fn get(&self, term: &str) -> Option<Emotion> {
        self.terms.get(term).copied()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// `term,emotion` lines; `#` comments and blank lines are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lex = Lexicon::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (term, emo) = line.split_once(',').ok_or_else(|| Error::Parse {
                line: i + 1,
                message: "expected `term,emotion`".into(),
            })?;
            let e: Emotion = emo.parse().map_err(|_| Error::Parse {
                line: i + 1,
                message: format!("unknown emotion `{emo}`"),
            })?;
            lex.insert(term.trim(), e).map_err(|err| Error::Parse {
                line: i + 1,
                message: err.to_string(),
            })?;
        }
        Ok(lex)
    }

    /// A small general-purpose word list.
    pub fn builtin() -> Self {
        Self::parse(include_str!("lexicon.csv")).expect("bundled lexicon parses")
    }
}

/// Fallback scorer. Each valenced emotion gets `matches / tokens`, neutral
/// gets the unmatched share `1 - matched / tokens`; empty text is neutral.
pub fn lexicon_emotions(text: &str, lexicon: &Lexicon) -> EmotionScores {
    let tok = TokenizerConfig {
        lowercase: true,
        min_token_len: 1,
    };
    let tokens = tok.tokenize(text);
    if tokens.is_empty() {
        return EmotionScores::neutral();
    }
    let mut raw = [0.0f64; 7];
    let mut matched = 0usize;
    for t in &tokens {
        if let Some(e) = lexicon.get(t) {
            raw[e.index()] += 1.0;
            matched += 1;
        }
    }
    let total = tokens.len() as f64;
    raw.iter_mut().for_each(|r| *r /= total);
    raw[Emotion::Neutral.index()] = (1.0 - matched as f64 / total).max(0.0);
    let s: f64 = raw.iter().sum();
    raw.iter_mut().for_each(|r| *r /= s);
    EmotionScores(raw)
}

/// Where a pipeline gets its emotion scores from. Sidecar entries win over
/// the lexicon whenever both are present.
#[derive(Debug, Clone)]
pub struct EmotionSource {
    pub sidecar: Option<EmotionTable>,
    pub lexicon: Lexicon,
}

impl Default for EmotionSource {
    fn default() -> Self {
        Self {
            sidecar: None,
            lexicon: Lexicon::builtin(),
        }
    }
}

impl EmotionSource {
    pub fn with_sidecar(table: EmotionTable) -> Self {
        Self {
            sidecar: Some(table),
            lexicon: Lexicon::builtin(),
        }
    }

    /// Sidecar scores when the table has the pair; lexicon scores when there
    /// is no sidecar at all. A sidecar that lacks the pair is an error.
    pub fn scores_for(&self, pair: &crate::corpus::QrPair) -> Result<PairEmotions> {
        match &self.sidecar {
            Some(t) => t.get(&pair.pair_id).copied(),
            None => Ok(PairEmotions {
                question: lexicon_emotions(&pair.question_text, &self.lexicon),
                response: lexicon_emotions(&pair.response_text, &self.lexicon),
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn one_hot(i: usize) -> [f64; 7] {
        let mut a = [0.0; 7];
        a[i] = 1.0;
        a
    }

    #[test]
    fn one_hot_record_is_valid() {
        let line = format!(
            "{{\"pair_id\":\"p1\",\"q_emotions\":{:?},\"r_emotions\":{:?}}}",
            one_hot(3),
            one_hot(6)
        );
        let t = load_emotion_scores(line.as_bytes()).unwrap();
        let e = t.get("p1").unwrap();
        assert_eq!(e.question.argmax(), Emotion::Joy);
        assert_eq!(e.response.argmax(), Emotion::Neutral);
        assert!(matches!(t.get("p2"), Err(Error::UnknownPair(_))));
    }

    #[test]
    fn short_sum_rejected_with_pair_id() {
        let line = r#"{"pair_id":"bad7","q_emotions":[0.1,0.1,0.1,0.1,0.1,0.1,0.2],"r_emotions":[0,0,0,0,0,0,1]}"#;
        let err = load_emotion_scores(line.as_bytes()).unwrap_err().to_string();
        assert!(err.contains("bad7"), "{err}");
    }

    #[test]
    fn slightly_off_sum_is_renormalised() {
        let line = r#"{"pair_id":"p","q_emotions":[0.1,0.1,0.1,0.1,0.1,0.1,0.4005],"r_emotions":[0,0,0,0,0,0,1]}"#;
        let t = load_emotion_scores(line.as_bytes()).unwrap();
        let q = t.get("p").unwrap().question;
        assert!(q.check(EmotionScores::SUM_TOLERANCE).is_ok());
    }

    #[test]
    fn lexicon_examples() {
        let mut lex = Lexicon::new();
        lex.insert("scared", Emotion::Fear).unwrap();
        assert_eq!(lexicon_emotions("", &lex), EmotionScores::neutral());
        assert_eq!(lexicon_emotions("plain words here", &lex), EmotionScores::neutral());
        let s = lexicon_emotions("scared today", &lex);
        assert!((s.get(Emotion::Fear) - 0.5).abs() < 1e-12);
        assert!((s.get(Emotion::Neutral) - 0.5).abs() < 1e-12);
        assert!(lex.insert("calm", Emotion::Neutral).is_err());
    }

    #[test]
    fn builtin_lexicon_loads() {
        let lex = Lexicon::builtin();
        assert!(lex.len() > 50);
        let s = lexicon_emotions("I am so happy and grateful", &lex);
        assert_eq!(s.argmax(), Emotion::Neutral);
        assert!(s.get(Emotion::Joy) > 0.0);
    }

    #[test]
    fn sidecar_takes_precedence() {
        let mut t = EmotionTable::default();
        let joy = EmotionScores(one_hot(3));
        t.insert("a", PairEmotions { question: joy, response: joy });
        let src = EmotionSource::with_sidecar(t);
        let mut p = crate::corpus::tests_support::pair("a");
        p.question_text = "terrified scared afraid".into();
        assert_eq!(src.scores_for(&p).unwrap().question, joy);
        p.pair_id = "zz".into();
        assert!(src.scores_for(&p).is_err());
    }

    fn scores() -> impl Strategy<Value = EmotionScores> {
        proptest::array::uniform7(0.0f64..1.0).prop_filter_map("non-zero", |raw| {
            let s: f64 = raw.iter().sum();
            (s > 1e-6).then(|| EmotionScores(raw.map(|v| v / s)))
        })
    }

    proptest! {
        #[test]
        fn sidecar_round_trip(recs in proptest::collection::vec((scores(), scores()), 0..20)) {
            let mut t = EmotionTable::default();
            for (i, (q, r)) in recs.iter().enumerate() {
                t.insert(format!("p{i}"), PairEmotions { question: *q, response: *r });
            }
            let mut buf = Vec::new();
            t.write(&mut buf).unwrap();
            let back = load_emotion_scores(buf.as_slice()).unwrap();
            prop_assert_eq!(back.len(), t.len());
            for i in 0..recs.len() {
                let id = format!("p{i}");
                let (a, b) = (t.get(&id).unwrap(), back.get(&id).unwrap());
                for k in 0..7 {
                    prop_assert!((a.question.0[k] - b.question.0[k]).abs() <= 1e-9);
                    prop_assert!((a.response.0[k] - b.response.0[k]).abs() <= 1e-9);
                }
            }
        }

        #[test]
        fn lexicon_scores_valid_and_order_free(mut words in proptest::collection::vec(
            prop_oneof![Just("happy"), Just("sad"), Just("angry"), Just("doctor"), Just("pain"), Just("scared")], 0..12)) {
            let lex = Lexicon::builtin();
            let a = lexicon_emotions(&words.join(" "), &lex);
            prop_assert!(a.check(EmotionScores::SUM_TOLERANCE).is_ok());
            words.reverse();
            let b = lexicon_emotions(&words.join(" "), &lex);
            for k in 0..7 {
                prop_assert!((a.0[k] - b.0[k]).abs() < 1e-12);
            }
        }
    }
}
