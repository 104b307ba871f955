//! Tabular feature vectors for the two tasks and their numeric/categorical
//! matrix form.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::QrPair;
use crate::emotion::{Emotion, EmotionScores};
use crate::error::{Error, Result};
use crate::textfeat::{count_sentence_kinds, word_count, TfidfModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// Is the question seeking informational support?
    Issq,
    /// Does the response provide informational support?
    Isr,
}

impl std::str::FromStr for Task {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "issq" => Ok(Task::Issq),
            "isr" => Ok(Task::Isr),
            other => Err(Error::Invalid(format!("unknown task `{other}` (issq|isr)"))),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Issq => "issq",
            Task::Isr => "isr",
        })
    }
}

impl Task {
    pub fn label_field(self) -> crate::corpus::LabelField {
        match self {
            Task::Issq => crate::corpus::LabelField::Issq,
            Task::Isr => crate::corpus::LabelField::Isr,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureGroup {
    Text,
    Emotions,
    NumericText,
    Post,
    User,
}

impl FeatureGroup {
    pub const ALL: [FeatureGroup; 5] = [
        FeatureGroup::Text,
        FeatureGroup::Emotions,
        FeatureGroup::NumericText,
        FeatureGroup::Post,
        FeatureGroup::User,
    ];

    pub fn tabular() -> BTreeSet<FeatureGroup> {
        FeatureGroup::ALL[1..].iter().copied().collect()
    }

    /// Parses a comma-separated list such as `text,emotions,user`.
    pub fn parse_list(s: &str) -> Result<BTreeSet<FeatureGroup>> {
        s.split(',').map(str::trim).filter(|t| !t.is_empty()).map(str::parse).collect()
    }
}

impl std::str::FromStr for FeatureGroup {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" => Ok(Self::Text),
            "emotions" | "emotion" => Ok(Self::Emotions),
            "numeric_text" | "numeric" => Ok(Self::NumericText),
            "post" => Ok(Self::Post),
            "user" => Ok(Self::User),
            other => Err(Error::Invalid(format!("unknown feature group `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Numeric,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
    pub group: FeatureGroup,
}

/// Ordered tabular columns for one task, possibly restricted to a subset of
/// feature groups.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub task: Task,
    pub columns: Vec<ColumnSpec>,
}

fn col(name: &str, kind: ColumnKind, group: FeatureGroup) -> ColumnSpec {
    ColumnSpec {
        name: name.to_string(),
        kind,
        group,
    }
}

fn emotion_columns(prefix: &str) -> Vec<ColumnSpec> {
    Emotion::ALL
        .iter()
        .map(|e| {
            col(
                &format!("{prefix}_{}", e.name().to_uppercase()),
                ColumnKind::Numeric,
                FeatureGroup::Emotions,
            )
        })
        .collect()
}

impl FeatureSchema {
    pub fn for_task(task: Task) -> Self {
        use ColumnKind::*;
        use FeatureGroup::*;
        let columns = match task {
            Task::Issq => {
                let mut c = emotion_columns("Q");
                c.extend([
                    col("Q_QUERY", Numeric, NumericText),
                    col("Q_STATEMENT", Numeric, NumericText),
                    col("Q_LEN", Numeric, NumericText),
                    col("M_CONDITION", Categorical, Post),
                    col("Q_PWRC", Numeric, User),
                    col("Q_TENURE", Numeric, User),
                    col("Q_MED_EXPERT", Categorical, User),
                ]);
                c
            }
            Task::Isr => {
                let mut c = emotion_columns("R");
                c.extend([
                    col("R_QUERY", Numeric, NumericText),
                    col("R_STATEMENT", Numeric, NumericText),
                    col("R_LEN", Numeric, NumericText),
                    col("TFIDF_CS", Numeric, NumericText),
                    col("RID", Numeric, Post),
                    col("Q_REPLY_RATIO", Numeric, Post),
                    col("M_CONDITION", Categorical, Post),
                    col("R_PWRC", Numeric, User),
                    col("R_TENURE", Numeric, User),
                    col("R_MED_EXPERT", Categorical, User),
                ]);
                c
            }
        };
        Self { task, columns }
    }

    /// Keeps only the columns of the given groups, in schema order.
    pub fn restrict(&self, groups: &BTreeSet<FeatureGroup>) -> Self {
        Self {
            task: self.task,
            columns: self
                .columns
                .iter()
                .filter(|c| groups.contains(&c.group))
                .cloned()
                .collect(),
        }
    }

    pub fn names(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn numeric_names(&self) -> Vec<String> {
        self.columns
            .iter()
            .filter(|c| c.kind == ColumnKind::Numeric)
            .map(|c| c.name.clone())
            .collect()
    }

    pub fn categorical_names(&self) -> Vec<String> {
        self.columns
            .iter()
            .filter(|c| c.kind == ColumnKind::Categorical)
            .map(|c| c.name.clone())
            .collect()
    }
}

/// One raw cell of a feature row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RawValue {
    Num(f64),
    Cat(String),
}

impl fmt::Display for RawValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RawValue::Num(v) => write!(f, "{v}"),
            RawValue::Cat(s) => f.write_str(s),
        }
    }
}

/// A feature row aligned with the full (unrestricted) schema of its task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub task: Task,
    pub values: Vec<RawValue>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionFeatures {
    pub q_emotions: EmotionScores,
    pub q_query: u32,
    pub q_statement: u32,
    /// Words.
    pub q_len: u32,
    pub q_pwrc: u64,
    pub q_tenure: u64,
    pub q_med_expert: bool,
    pub condition: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseFeatures {
    pub r_emotions: EmotionScores,
    pub r_query: u32,
    pub r_statement: u32,
    /// Words.
    pub r_len: u32,
    pub tfidf_cs: f64,
    pub rid: u32,
    pub q_reply_ratio: f64,
    pub r_pwrc: u64,
    pub r_tenure: u64,
    pub r_med_expert: bool,
    pub condition: String,
}

fn flag(b: bool) -> RawValue {
    RawValue::Cat(if b { "1" } else { "0" }.to_string())
}

impl QuestionFeatures {
    pub fn to_row(&self) -> FeatureRow {
        let mut v: Vec<RawValue> = self.q_emotions.0.iter().map(|&x| RawValue::Num(x)).collect();
        v.extend([
            RawValue::Num(self.q_query as f64),
            RawValue::Num(self.q_statement as f64),
            RawValue::Num(self.q_len as f64),
            RawValue::Cat(self.condition.clone()),
            RawValue::Num(self.q_pwrc as f64),
            RawValue::Num(self.q_tenure as f64),
            flag(self.q_med_expert),
        ]);
        FeatureRow {
            task: Task::Issq,
            values: v,
        }
    }
}

impl ResponseFeatures {
    pub fn to_row(&self) -> FeatureRow {
        let mut v: Vec<RawValue> = self.r_emotions.0.iter().map(|&x| RawValue::Num(x)).collect();
        v.extend([
            RawValue::Num(self.r_query as f64),
            RawValue::Num(self.r_statement as f64),
            RawValue::Num(self.r_len as f64),
            RawValue::Num(self.tfidf_cs),
            RawValue::Num(self.rid as f64),
            RawValue::Num(self.q_reply_ratio),
            RawValue::Cat(self.condition.clone()),
            RawValue::Num(self.r_pwrc as f64),
            RawValue::Num(self.r_tenure as f64),
            flag(self.r_med_expert),
        ]);
        FeatureRow {
            task: Task::Isr,
            values: v,
        }
    }
}

pub fn build_question_features(pair: &QrPair, scores: &EmotionScores) -> QuestionFeatures {
    let kinds = count_sentence_kinds(&pair.question_text);
    QuestionFeatures {
        q_emotions: *scores,
        q_query: kinds.queries,
        q_statement: kinds.statements,
        q_len: word_count(&pair.question_text),
        q_pwrc: pair.q_user.platform_response_count,
        q_tenure: pair.q_user.tenure_seconds,
        q_med_expert: pair.q_user.med_expert,
        condition: pair.condition.clone(),
    }
}

/// `tfidf` must have been fitted on training text only.
pub fn build_response_features(
    pair: &QrPair,
    scores: &EmotionScores,
    tfidf: &TfidfModel,
) -> ResponseFeatures {
    let kinds = count_sentence_kinds(&pair.response_text);
    ResponseFeatures {
        r_emotions: *scores,
        r_query: kinds.queries,
        r_statement: kinds.statements,
        r_len: word_count(&pair.response_text),
        tfidf_cs: tfidf.cosine_similarity(&pair.question_text, &pair.response_text),
        rid: pair.response_index,
        q_reply_ratio: pair.questioner_reply_ratio,
        r_pwrc: pair.r_user.platform_response_count,
        r_tenure: pair.r_user.tenure_seconds,
        r_med_expert: pair.r_user.med_expert,
        condition: pair.condition.clone(),
    }
}

/// Per-column statistics fitted on training rows: z-score parameters for
/// numeric columns and a dictionary per categorical column. Code 0 is
/// reserved for categories not seen during fitting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub schema: FeatureSchema,
    /// Position of each schema column within the full task row.
    pub source_index: Vec<usize>,
    pub means: Vec<f64>,
    /// Population standard deviations; 0 marks a constant column.
    pub stds: Vec<f64>,
    pub categories: Vec<Vec<String>>,
}

impl Standardizer {
    pub fn fit(rows: &[FeatureRow], schema: &FeatureSchema) -> Result<Self> {
        let full = FeatureSchema::for_task(schema.task);
        let source_index = schema
            .columns
            .iter()
            .map(|c| {
                full.position(&c.name).ok_or_else(|| {
                    Error::Invalid(format!("column `{}` is not a {} feature", c.name, schema.task))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        check_rows(rows, &full)?;
        let mut means = Vec::new();
        let mut stds = Vec::new();
        let mut categories = Vec::new();
        for (c, &src) in schema.columns.iter().zip(&source_index) {
            match c.kind {
                ColumnKind::Numeric => {
                    let vals: Vec<f64> = rows.iter().map(|r| num(&r.values[src])).collect::<Result<_>>()?;
                    let n = vals.len().max(1) as f64;
                    let mean = vals.iter().sum::<f64>() / n;
                    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                    let sd = var.sqrt();
                    means.push(mean);
                    stds.push(if sd > 1e-12 * mean.abs().max(1.0) { sd } else { 0.0 });
                }
                ColumnKind::Categorical => {
                    let set: BTreeSet<String> = rows.iter().map(|r| r.values[src].to_string()).collect();
                    categories.push(set.into_iter().collect());
                }
            }
        }
        Ok(Self {
            schema: schema.clone(),
            source_index,
            means,
            stds,
            categories,
        })
    }

    /// Cardinality of each categorical column including the reserved code.
    pub fn cardinalities(&self) -> Vec<usize> {
        self.categories.iter().map(|c| c.len() + 1).collect()
    }

    pub fn numeric_width(&self) -> usize {
        self.means.len()
    }

    /// Applies the fitted statistics; never updates them.
    pub fn transform(&self, rows: &[FeatureRow]) -> Result<FeatureMatrix> {
        let full = FeatureSchema::for_task(self.schema.task);
        check_rows(rows, &full)?;
        let lookup: Vec<HashMap<&str, u32>> = self
            .categories
            .iter()
            .map(|cats| {
                cats.iter()
                    .enumerate()
                    .map(|(i, s)| (s.as_str(), i as u32 + 1))
                    .collect()
            })
            .collect();
        let p = self.numeric_width();
        let q = self.categories.len();
        let mut numeric = Vec::with_capacity(rows.len() * p);
        let mut categorical = Vec::with_capacity(rows.len() * q);
        for r in rows {
            let (mut ni, mut ci) = (0, 0);
            for (c, &src) in self.schema.columns.iter().zip(&self.source_index) {
                match c.kind {
                    ColumnKind::Numeric => {
                        let v = num(&r.values[src])?;
                        let sd = self.stds[ni];
                        numeric.push(if sd > 0.0 { (v - self.means[ni]) / sd } else { 0.0 });
                        ni += 1;
                    }
                    ColumnKind::Categorical => {
                        let s = r.values[src].to_string();
                        categorical.push(lookup[ci].get(s.as_str()).copied().unwrap_or(0));
                        ci += 1;
                    }
                }
            }
        }
        Ok(FeatureMatrix {
            rows: rows.len(),
            numeric,
            numeric_names: self.schema.numeric_names(),
            categorical,
            categorical_names: self.schema.categorical_names(),
            cardinalities: self.cardinalities(),
        })
    }
}

fn num(v: &RawValue) -> Result<f64> {
    match v {
        RawValue::Num(x) if x.is_finite() => Ok(*x),
        RawValue::Num(x) => Err(Error::Invalid(format!("non-finite feature value {x}"))),
        RawValue::Cat(s) => Err(Error::Invalid(format!("expected a number, found `{s}`"))),
    }
}

fn check_rows(rows: &[FeatureRow], full: &FeatureSchema) -> Result<()> {
    for r in rows {
        if r.task != full.task {
            return Err(Error::Invalid(format!(
                "{} feature row given to a {} schema",
                r.task, full.task
            )));
        }
        if r.values.len() != full.columns.len() {
            return Err(Error::Dimension {
                what: "feature row columns",
                expected: full.columns.len(),
                got: r.values.len(),
            });
        }
    }
    Ok(())
}

/// Standardised numeric block (row-major) plus integer-coded categoricals.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub rows: usize,
    pub numeric: Vec<f64>,
    pub numeric_names: Vec<String>,
    pub categorical: Vec<u32>,
    pub categorical_names: Vec<String>,
    pub cardinalities: Vec<usize>,
}

impl FeatureMatrix {
    pub fn numeric_width(&self) -> usize {
        self.numeric_names.len()
    }

    pub fn categorical_width(&self) -> usize {
        self.categorical_names.len()
    }

    pub fn numeric_row(&self, i: usize) -> &[f64] {
        let p = self.numeric_width();
        &self.numeric[i * p..(i + 1) * p]
    }

    pub fn categorical_row(&self, i: usize) -> &[u32] {
        let q = self.categorical_width();
        &self.categorical[i * q..(i + 1) * q]
    }

    /// Numeric columns followed by one-hot categorical columns (the reserved
    /// code gets no column).
    pub fn dense_design(&self) -> Vec<Vec<f64>> {
        (0..self.rows)
            .map(|i| {
                let mut r = self.numeric_row(i).to_vec();
                for (j, &code) in self.categorical_row(i).iter().enumerate() {
                    let k = self.cardinalities[j] - 1;
                    let start = r.len();
                    r.extend(std::iter::repeat_n(0.0, k));
                    if code > 0 {
                        r[start + code as usize - 1] = 1.0;
                    }
                }
                r
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = self
            .numeric_names
            .iter()
            .chain(&self.categorical_names)
            .cloned()
            .collect::<Vec<_>>()
            .join(",");
        s.push('\n');
        for i in 0..self.rows {
            let cells: Vec<String> = self
                .numeric_row(i)
                .iter()
                .map(|v| v.to_string())
                .chain(self.categorical_row(i).iter().map(|c| c.to_string()))
                .collect();
            s.push_str(&cells.join(","));
            s.push('\n');
        }
        s
    }
}

/// Fits (`standardizer = None`) or reuses a standardizer and transforms.
pub fn to_matrix(
    rows: &[FeatureRow],
    schema: &FeatureSchema,
    standardizer: Option<&Standardizer>,
) -> Result<(FeatureMatrix, Standardizer)> {
    let st = match standardizer {
        Some(s) => {
            if &s.schema != schema {
                return Err(Error::Invalid("standardizer was fitted on a different schema".into()));
            }
            s.clone()
        }
        None => Standardizer::fit(rows, schema)?,
    };
    let m = st.transform(rows)?;
    Ok((m, st))
}

/// Raw feature rows as CSV with a `pair_id` column followed by the full
/// schema, in schema order.
pub fn raw_rows_csv(ids: &[String], rows: &[FeatureRow], schema: &FeatureSchema) -> String {
    let mut s = String::from("pair_id,");
    s.push_str(&schema.names().join(","));
    s.push('\n');
    for (id, r) in ids.iter().zip(rows) {
        s.push_str(id);
        for v in &r.values {
            s.push(',');
            s.push_str(&v.to_string());
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::tests_support::pair;
    use crate::textfeat::{fit_tfidf, TokenizerConfig};

    #[test]
    fn group_list_parsing() {
        let g = FeatureGroup::parse_list("text, user,").unwrap();
        assert_eq!(g.into_iter().collect::<Vec<_>>(), vec![FeatureGroup::Text, FeatureGroup::User]);
        assert!(FeatureGroup::parse_list("colour").is_err());
    }

    #[test]
    fn every_appendix_symbol_maps_to_one_column() {
        let q = FeatureSchema::for_task(Task::Issq);
        let r = FeatureSchema::for_task(Task::Isr);
        for name in [
            "Q_ANGER", "Q_DISGUST", "Q_FEAR", "Q_JOY", "Q_SADNESS", "Q_SURPRISE", "Q_NEUTRAL",
            "Q_QUERY", "Q_STATEMENT", "Q_LEN", "Q_PWRC", "Q_TENURE", "Q_MED_EXPERT", "M_CONDITION",
        ] {
            assert_eq!(q.names().iter().filter(|n| **n == name).count(), 1, "{name}");
        }
        for name in [
            "R_ANGER", "R_NEUTRAL", "R_QUERY", "R_STATEMENT", "R_LEN", "TFIDF_CS", "RID",
            "Q_REPLY_RATIO", "R_PWRC", "R_TENURE", "R_MED_EXPERT", "M_CONDITION",
        ] {
            assert_eq!(r.names().iter().filter(|n| **n == name).count(), 1, "{name}");
        }
        assert_eq!(q.columns.len(), q.columns.len());
        assert_eq!(pair("x").condition, "cancer");
        let qf = build_question_features(&pair("x"), &EmotionScores::neutral());
        assert_eq!(qf.to_row().values.len(), q.columns.len());
    }

    #[test]
    fn empty_question_counts() {
        let f = build_question_features(&pair("x"), &EmotionScores::neutral());
        assert_eq!((f.q_query, f.q_statement, f.q_len), (0, 0, 0));
    }

    #[test]
    fn brain_scan_question_is_a_query() {
        let mut p = pair("x");
        p.question_text = "I have had a headache for two weeks. Should I go get a brain scan?".into();
        let f = build_question_features(&p, &EmotionScores::neutral());
        assert!(f.q_query >= 1);
        // Recomputation oracle.
        let k = count_sentence_kinds(&p.question_text);
        assert_eq!((f.q_query, f.q_statement, f.q_len), (k.queries, k.statements, word_count(&p.question_text)));
    }

    #[test]
    fn response_features_examples() {
        let mut p = pair("x");
        p.question_text = "migraine headache every morning".into();
        p.response_text = p.question_text.clone();
        let m = fit_tfidf(&["migraine headache", "morning every day"], 1, TokenizerConfig::default()).unwrap();
        let f = build_response_features(&p, &EmotionScores::neutral(), &m);
        assert!((f.tfidf_cs - 1.0).abs() < 1e-9);
        assert_eq!(f.rid, 1);
        let again = build_response_features(&p, &EmotionScores::neutral(), &m);
        assert_eq!(f, again);
        assert_eq!(f.r_len, word_count(&p.response_text));
    }

    fn rows(vals: &[(f64, &str)]) -> Vec<FeatureRow> {
        vals.iter()
            .map(|(v, cond)| {
                let mut p = pair("x");
                p.condition = cond.to_string();
                p.q_user.platform_response_count = *v as u64;
                build_question_features(&p, &EmotionScores::neutral()).to_row()
            })
            .collect()
    }

    #[test]
    fn standardization_properties() {
        let schema = FeatureSchema::for_task(Task::Issq);
        let train = rows(&[(1.0, "a"), (2.0, "b"), (6.0, "a"), (9.0, "b")]);
        let (m, st) = to_matrix(&train, &schema, None).unwrap();
        let p = m.numeric_width();
        let pwrc = m.numeric_names.iter().position(|n| n == "Q_PWRC").unwrap();
        let col: Vec<f64> = (0..m.rows).map(|i| m.numeric[i * p + pwrc]).collect();
        let mean = col.iter().sum::<f64>() / 4.0;
        let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0).sqrt();
        assert!(mean.abs() < 1e-9 && (sd - 1.0).abs() < 1e-9);
        // Constant columns (Q_LEN etc.) become zeros.
        let qlen = m.numeric_names.iter().position(|n| n == "Q_LEN").unwrap();
        assert!((0..m.rows).all(|i| m.numeric[i * p + qlen] == 0.0));

        // Unseen category gets the reserved code; test transform is stable.
        let test = rows(&[(3.0, "zzz")]);
        let (t1, _) = to_matrix(&test, &schema, Some(&st)).unwrap();
        let (t2, _) = to_matrix(&test, &schema, Some(&st)).unwrap();
        assert_eq!(t1, t2);
        let cond = m.categorical_names.iter().position(|n| n == "M_CONDITION").unwrap();
        assert_eq!(t1.categorical_row(0)[cond], 0);
        assert!(m.categorical_row(0)[cond] > 0);
    }

    #[test]
    fn column_count_mismatch_is_error() {
        let schema = FeatureSchema::for_task(Task::Issq);
        let mut bad = rows(&[(1.0, "a")]);
        bad[0].values.pop();
        assert!(matches!(to_matrix(&bad, &schema, None), Err(Error::Dimension { .. })));
    }

    #[test]
    fn restricted_schema_drops_groups() {
        let schema = FeatureSchema::for_task(Task::Isr);
        let mut groups = FeatureGroup::tabular();
        groups.remove(&FeatureGroup::NumericText);
        let s = schema.restrict(&groups);
        assert!(s.position("TFIDF_CS").is_none());
        assert!(s.position("R_NEUTRAL").is_some());
    }
}
