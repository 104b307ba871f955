//! Question/response corpora: the JSONL record format, label summaries,
//! stratified sampling and seeded train/test splitting.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserProfile {
    pub user_id: String,
    /// Seconds between the post and the start of the user's membership.
    pub tenure_seconds: u64,
    /// Platform-wide response count.
    pub platform_response_count: u64,
    /// Self-disclosed medical profession.
    pub med_expert: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QrPair {
    pub pair_id: String,
    pub condition: String,
    pub question_text: String,
    pub response_text: String,
    /// Position of the response in its thread, starting at 1.
    pub response_index: u32,
    pub questioner_reply_ratio: f64,
    pub q_user: UserProfile,
    pub r_user: UserProfile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub issq_label: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub isr_label: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub helpful: Option<bool>,
}

impl QrPair {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.pair_id.is_empty() {
            return Err("pair_id: must not be empty".into());
        }
        if self.response_index < 1 {
            return Err("response_index: must be >= 1".into());
        }
        let r = self.questioner_reply_ratio;
        if !(0.0..=1.0).contains(&r) {
            return Err(format!("questioner_reply_ratio: {r} outside [0, 1]"));
        }
        if self.isr_label.is_some() && self.issq_label != Some(true) {
            return Err("isr_label: only defined when issq_label is true".into());
        }
        Ok(())
    }

    pub fn label(&self, field: LabelField) -> Option<bool> {
        match field {
            LabelField::Issq => self.issq_label,
            LabelField::Isr => self.isr_label,
            LabelField::Helpful => self.helpful,
        }
    }
}

/// Which optional label a split or task is keyed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelField {
    Issq,
    Isr,
    Helpful,
}

impl std::str::FromStr for LabelField {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "issq" => Ok(Self::Issq),
            "isr" => Ok(Self::Isr),
            "helpful" => Ok(Self::Helpful),
            other => Err(Error::Invalid(format!("unknown label field `{other}`"))),
        }
    }
}

impl fmt::Display for LabelField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Issq => "issq",
            Self::Isr => "isr",
            Self::Helpful => "helpful",
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    pub pairs: Vec<QrPair>,
    pub provenance: String,
}

impl Corpus {
    /// Builds a corpus, checking record invariants and pair_id uniqueness.
    pub fn new(pairs: Vec<QrPair>, provenance: impl Into<String>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(pairs.len());
        for (i, p) in pairs.iter().enumerate() {
            p.validate().map_err(|message| Error::Parse {
                line: i + 1,
                message,
            })?;
            if !seen.insert(p.pair_id.as_str()) {
                return Err(Error::DuplicatePair(p.pair_id.clone()));
            }
        }
        Ok(Self {
            pairs,
            provenance: provenance.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn conditions(&self) -> BTreeSet<String> {
        self.pairs.iter().map(|p| p.condition.clone()).collect()
    }

    pub fn get(&self, pair_id: &str) -> Option<&QrPair> {
        self.pairs.iter().find(|p| p.pair_id == pair_id)
    }

    /// Per-condition label counts. ISSQ is counted over distinct questions
    /// (questioner + question text), ISR over labelled responses.
    pub fn label_summary(&self) -> LabelSummary {
        let mut rows: BTreeMap<String, LabelCounts> = BTreeMap::new();
        let mut seen_questions = HashSet::new();
        for p in &self.pairs {
            let row = rows.entry(p.condition.clone()).or_default();
            if let Some(issq) = p.issq_label {
                let key = (p.q_user.user_id.as_str(), p.question_text.as_str());
                if seen_questions.insert(key) {
                    row.issq_total += 1;
                    row.issq_positive += usize::from(issq);
                }
            }
            if let Some(isr) = p.isr_label {
                row.isr_total += 1;
                row.isr_positive += usize::from(isr);
            }
            if let Some(h) = p.helpful {
                row.helpful_total += 1;
                row.helpful_positive += usize::from(h);
            }
        }
        LabelSummary { rows }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LabelCounts {
    pub issq_positive: usize,
    pub issq_total: usize,
    pub isr_positive: usize,
    pub isr_total: usize,
    pub helpful_positive: usize,
    pub helpful_total: usize,
}

impl LabelCounts {
    fn add(&mut self, o: &LabelCounts) {
        self.issq_positive += o.issq_positive;
        self.issq_total += o.issq_total;
        self.isr_positive += o.isr_positive;
        self.isr_total += o.isr_total;
        self.helpful_positive += o.helpful_positive;
        self.helpful_total += o.helpful_total;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelSummary {
    pub rows: BTreeMap<String, LabelCounts>,
}

/// `"1621/1947 (83%)"`, percentage rounded to the nearest integer.
pub fn format_ratio(positive: usize, total: usize) -> String {
    if total == 0 {
        return "0/0 (-)".to_string();
    }
    let pct = (100.0 * positive as f64 / total as f64).round();
    format!("{positive}/{total} ({pct:.0}%)")
}

impl LabelSummary {
    pub fn total(&self) -> LabelCounts {
        let mut t = LabelCounts::default();
        for c in self.rows.values() {
            t.add(c);
        }
        t
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("condition,ISSQ,ISR,HELPFUL\n");
        let line = |name: &str, c: &LabelCounts| {
            format!(
                "{name},{},{},{}\n",
                format_ratio(c.issq_positive, c.issq_total),
                format_ratio(c.isr_positive, c.isr_total),
                format_ratio(c.helpful_positive, c.helpful_total)
            )
        };
        for (name, c) in &self.rows {
            out.push_str(&line(name, c));
        }
        out.push_str(&line("Sum", &self.total()));
        out
    }
}

/// Reads newline-delimited JSON records. Blank lines are skipped.
pub fn parse_corpus<R: BufRead>(reader: R) -> Result<Corpus> {
    let mut pairs = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let pair: QrPair = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        pair.validate().map_err(|message| Error::Parse {
            line: lineno,
            message,
        })?;
        if !seen.insert(pair.pair_id.clone()) {
            return Err(Error::DuplicatePair(pair.pair_id));
        }
        pairs.push(pair);
    }
    Ok(Corpus {
        pairs,
        provenance: String::new(),
    })
}

pub fn read_corpus(path: &std::path::Path) -> Result<Corpus> {
    let file = std::fs::File::open(path)?;
    let mut c = parse_corpus(std::io::BufReader::new(file))?;
    c.provenance = path.display().to_string();
    Ok(c)
}

pub fn write_corpus<W: Write>(corpus: &Corpus, mut w: W) -> Result<()> {
    for p in &corpus.pairs {
        serde_json::to_writer(&mut w, p)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn corpus_to_string(corpus: &Corpus) -> String {
    let mut buf = Vec::new();
    write_corpus(corpus, &mut buf).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}

/// Draws `min(requested, available)` pairs per requested condition without
/// replacement. Shortfalls are recorded as warnings in the provenance.
pub fn stratified_sample(
    corpus: &Corpus,
    per_condition: &BTreeMap<String, usize>,
    seed: u64,
) -> Result<Corpus> {
    let present = corpus.conditions();
    for cond in per_condition.keys() {
        if !present.contains(cond) {
            return Err(Error::Invalid(format!(
                "condition `{cond}` is not present in the corpus"
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::new();
    let mut warnings = Vec::new();
    for (cond, &requested) in per_condition {
        let mut idx: Vec<usize> = corpus
            .pairs
            .iter()
            .enumerate()
            .filter(|(_, p)| &p.condition == cond)
            .map(|(i, _)| i)
            .collect();
        let take = requested.min(idx.len());
        if requested > idx.len() {
            warnings.push(format!(
                "warning: requested {requested} `{cond}` pairs, only {} available",
                idx.len()
            ));
        }
        let (chosen, _) = idx.partial_shuffle(&mut rng, take);
        pairs.extend(chosen.iter().map(|&i| corpus.pairs[i].clone()));
    }
    let mut provenance = format!(
        "stratified_sample(seed={seed}) of [{}]",
        corpus.provenance
    );
    for w in warnings {
        provenance.push_str("; ");
        provenance.push_str(&w);
    }
    Ok(Corpus { pairs, provenance })
}

/// Seeded holdout split. With `stratify_on`, every label class is split
/// separately with `round(n_class * train_fraction)` training members
/// (clamped so both sides keep at least one). Output preserves corpus order.
pub fn holdout_split(
    corpus: &Corpus,
    train_fraction: f64,
    seed: u64,
    stratify_on: Option<LabelField>,
) -> Result<(Corpus, Corpus)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Invalid(format!(
            "train_fraction {train_fraction} must lie strictly between 0 and 1"
        )));
    }
    let mut groups: BTreeMap<Option<bool>, Vec<usize>> = BTreeMap::new();
    for (i, p) in corpus.pairs.iter().enumerate() {
        let key = match stratify_on {
            Some(field) => Some(p.label(field).ok_or_else(|| {
                Error::Invalid(format!(
                    "pair `{}` has no {field} label to stratify on",
                    p.pair_id
                ))
            })?),
            None => None,
        };
        groups.entry(key).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut in_train = vec![false; corpus.len()];
    for (key, idx) in groups.iter_mut() {
        if key.is_some() && idx.len() < 2 {
            return Err(Error::Invalid(format!(
                "label class {:?} has {} member(s); cannot stratify",
                key.unwrap(),
                idx.len()
            )));
        }
        let n = idx.len();
        let mut take = (n as f64 * train_fraction).round() as usize;
        if n >= 2 {
            take = take.clamp(1, n - 1);
        }
        idx.shuffle(&mut rng);
        for &i in &idx[..take] {
            in_train[i] = true;
        }
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (p, &t) in corpus.pairs.iter().zip(&in_train) {
        if t {
            train.push(p.clone());
        } else {
            test.push(p.clone());
        }
    }
    let tag = |side: &str| {
        format!(
            "holdout_split({side}, fraction={train_fraction}, seed={seed}) of [{}]",
            corpus.provenance
        )
    };
    Ok((
        Corpus {
            pairs: train,
            provenance: tag("train"),
        },
        Corpus {
            pairs: test,
            provenance: tag("test"),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn pair(id: &str, cond: &str) -> QrPair {
        QrPair {
            pair_id: id.into(),
            condition: cond.into(),
            question_text: format!("question {id}?"),
            response_text: format!("response {id}."),
            response_index: 1,
            questioner_reply_ratio: 0.5,
            q_user: UserProfile {
                user_id: format!("q{id}"),
                tenure_seconds: 10,
                platform_response_count: 3,
                med_expert: false,
            },
            r_user: UserProfile {
                user_id: format!("r{id}"),
                tenure_seconds: 100,
                platform_response_count: 30,
                med_expert: true,
            },
            issq_label: None,
            isr_label: None,
            helpful: None,
        }
    }

    #[test]
    fn empty_stream_is_empty_corpus() {
        let c = parse_corpus("".as_bytes()).unwrap();
        assert!(c.is_empty());
    }

    #[test]
    fn missing_field_names_field_and_line() {
        let mut p = serde_json::to_value(pair("a", "cancer")).unwrap();
        let good = serde_json::to_string(&p).unwrap();
        p.as_object_mut().unwrap().remove("question_text");
        let bad = serde_json::to_string(&p).unwrap();
        let text = format!("{good}\n{bad}\n");
        let err = parse_corpus(text.as_bytes()).unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
        assert!(err.contains("question_text"), "{err}");
    }

    #[test]
    fn invalid_ratio_and_isr_without_issq_rejected() {
        let mut p = pair("a", "cancer");
        p.questioner_reply_ratio = 1.5;
        let line = serde_json::to_string(&p).unwrap();
        let err = parse_corpus(line.as_bytes()).unwrap_err().to_string();
        assert!(err.contains("questioner_reply_ratio"), "{err}");

        let mut p = pair("a", "cancer");
        p.isr_label = Some(true);
        p.issq_label = Some(false);
        let line = serde_json::to_string(&p).unwrap();
        assert!(parse_corpus(line.as_bytes()).is_err());
    }

    #[test]
    fn duplicate_pair_id_rejected() {
        let c = Corpus {
            pairs: vec![pair("a", "x"), pair("a", "x")],
            provenance: String::new(),
        };
        let text = corpus_to_string(&c);
        assert!(matches!(
            parse_corpus(text.as_bytes()),
            Err(Error::DuplicatePair(_))
        ));
    }

    #[test]
    fn summary_matches_table_shaped_counts() {
        // 1947 distinct questions, 1621 ISSQ; 1673 labelled responses, 1231 ISR.
        let mut pairs = Vec::new();
        for q in 0..1947 {
            let mut p = pair(&format!("q{q}"), if q % 2 == 0 { "cancer" } else { "diabetes" });
            p.issq_label = Some(q < 1621);
            pairs.push(p);
        }
        // Attach ISR labels to extra responses of ISSQ questions.
        let mut k = 0;
        'outer: for q in 0..1621 {
            for extra in 0..2 {
                if k == 1673 {
                    break 'outer;
                }
                let mut p = pairs[q].clone();
                p.pair_id = format!("q{q}-r{extra}");
                p.isr_label = Some(k < 1231);
                pairs.push(p);
                k += 1;
            }
        }
        let c = Corpus::new(pairs, "synthetic").unwrap();
        let t = c.label_summary().total();
        assert_eq!(format_ratio(t.issq_positive, t.issq_total), "1621/1947 (83%)");
        assert_eq!(format_ratio(t.isr_positive, t.isr_total), "1231/1673 (74%)");
        assert!(c.label_summary().to_csv().contains("Sum,1621/1947 (83%),1231/1673 (74%)"));
    }

    fn strata(n_a: usize, n_b: usize) -> Corpus {
        let mut pairs = Vec::new();
        for i in 0..n_a {
            pairs.push(pair(&format!("a{i}"), "cancer"));
        }
        for i in 0..n_b {
            pairs.push(pair(&format!("b{i}"), "diabetes"));
        }
        Corpus::new(pairs, "t").unwrap()
    }

    #[test]
    fn stratified_zero_and_exhaustive_requests() {
        let c = strata(5, 7);
        let req = BTreeMap::from([("cancer".to_string(), 0), ("diabetes".to_string(), 7)]);
        for seed in 0..5 {
            let s = stratified_sample(&c, &req, seed).unwrap();
            assert_eq!(s.pairs.iter().filter(|p| p.condition == "cancer").count(), 0);
            let mut ids: Vec<_> = s.pairs.iter().map(|p| p.pair_id.clone()).collect();
            ids.sort();
            let mut want: Vec<_> = (0..7).map(|i| format!("b{i}")).collect();
            want.sort();
            assert_eq!(ids, want);
        }
    }

    #[test]
    fn stratified_oversized_request_warns() {
        let c = strata(3, 1);
        let req = BTreeMap::from([("cancer".to_string(), 10)]);
        let s = stratified_sample(&c, &req, 1).unwrap();
        assert_eq!(s.len(), 3);
        assert!(s.provenance.contains("warning"));
    }

    #[test]
    fn stratified_unknown_condition_is_error() {
        let c = strata(3, 1);
        let req = BTreeMap::from([("pregnancy".to_string(), 1)]);
        assert!(stratified_sample(&c, &req, 1).is_err());
    }

    #[test]
    fn stratified_determinism_and_seed_sensitivity() {
        let c = strata(100, 0);
        let req = BTreeMap::from([("cancer".to_string(), 10)]);
        let a = stratified_sample(&c, &req, 42).unwrap();
        let b = stratified_sample(&c, &req, 42).unwrap();
        assert_eq!(corpus_to_string(&a), corpus_to_string(&b));
        // Two seeds agree on an ordered 10-of-100 draw with probability
        // 90!/100! (about 1.6e-20); over 50 seeds every selection must differ.
        let draws: HashSet<String> = (0..50)
            .map(|s| {
                stratified_sample(&c, &req, s)
                    .unwrap()
                    .pairs
                    .iter()
                    .map(|p| p.pair_id.clone())
                    .collect::<Vec<_>>()
                    .join(",")
            })
            .collect();
        assert_eq!(draws.len(), 50);
    }

    fn labelled(n_pos: usize, n_neg: usize) -> Corpus {
        let mut pairs = Vec::new();
        for i in 0..n_pos + n_neg {
            let mut p = pair(&format!("p{i}"), "cancer");
            p.issq_label = Some(i < n_pos);
            pairs.push(p);
        }
        Corpus::new(pairs, "t").unwrap()
    }

    #[test]
    fn split_exact_division() {
        let c = labelled(5, 5);
        let (tr, te) = holdout_split(&c, 0.8, 3, Some(LabelField::Issq)).unwrap();
        assert_eq!((tr.len(), te.len()), (8, 2));
        assert_eq!(tr.pairs.iter().filter(|p| p.issq_label == Some(true)).count(), 4);
        assert_eq!(te.pairs.iter().filter(|p| p.issq_label == Some(true)).count(), 1);
    }

    #[test]
    fn split_table_sized_corpus_recount() {
        // Recount oracle: per class round(n_c * 0.8) is floor or ceil.
        let c = labelled(1621, 326);
        let (tr, te) = holdout_split(&c, 0.8, 11, Some(LabelField::Issq)).unwrap();
        let pos_floor = (1621.0f64 * 0.8).floor() as usize;
        let neg_floor = (326.0f64 * 0.8).floor() as usize;
        let pos = tr.pairs.iter().filter(|p| p.issq_label == Some(true)).count();
        let neg = tr.len() - pos;
        assert!(pos == pos_floor || pos == pos_floor + 1);
        assert!(neg == neg_floor || neg == neg_floor + 1);
        assert!(tr.len() == 1557 || tr.len() == 1558, "{}", tr.len());
        assert_eq!(tr.len() + te.len(), 1947);
    }

    #[test]
    fn split_rejects_singleton_class_and_missing_label() {
        let c = labelled(5, 1);
        assert!(holdout_split(&c, 0.8, 0, Some(LabelField::Issq)).is_err());
        assert!(holdout_split(&c, 0.8, 0, Some(LabelField::Isr)).is_err());
        assert!(holdout_split(&c, 1.0, 0, None).is_err());
    }
}
