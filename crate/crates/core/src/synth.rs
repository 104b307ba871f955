//! Seeded synthetic corpora with known labelling rules.
//!
//! The response-task generator draws response words partly from the
//! question's topic words, so question/response TF-IDF similarity varies
//! from pair to pair, and then labels a response as informational when
//! `0.6 * TFIDF_CS + 0.4 * R_NEUTRAL + noise` exceeds a threshold.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::corpus::{Corpus, QrPair, UserProfile};
use crate::emotion::{EmotionScores, EmotionTable, PairEmotions};
use crate::error::{Error, Result};
use crate::textfeat::{fit_tfidf, TokenizerConfig};

const WORDS: &[&str] = &[
    "pain", "dose", "scan", "blood", "sugar", "insulin", "tumor", "biopsy", "chemo", "radiation",
    "nausea", "fatigue", "headache", "migraine", "seizure", "nerve", "spine", "heart", "pressure", "pulse",
    "artery", "stent", "statin", "aspirin", "diet", "exercise", "sleep", "stress", "anxiety", "therapy",
    "surgeon", "oncologist", "neurologist", "cardiologist", "clinic", "hospital", "nurse", "referral", "symptom", "rash",
    "fever", "infection", "antibiotic", "steroid", "inhaler", "allergy", "vitamin", "iron", "thyroid", "hormone",
    "glucose", "meter", "pump", "needle", "injection", "tablet", "capsule", "syrup", "label", "pharmacy",
    "dizziness", "vision", "hearing", "balance", "memory", "tremor", "numbness", "tingling", "cramp", "swelling",
    "weight", "appetite", "kidney", "liver", "lung", "breath", "cough", "throat", "chest", "stomach",
    "bowel", "bladder", "skin", "bone", "joint", "muscle", "tendon", "fracture", "brace", "cast",
    "ultrasound", "xray", "mri", "ecg", "monitor", "results", "report", "scar", "wound", "stitches",
];

const FILLER: &[&str] = &["the", "and", "my", "your", "with", "for", "this", "that", "was", "about"];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_pairs: usize,
    pub condition: String,
    /// Share of positive responses used to place the threshold.
    pub positive_rate: f64,
    pub noise_sd: f64,
    /// Shifted covariate distributions (transfer target).
    pub shifted: bool,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_pairs: 2000,
            condition: "cancer".into(),
            positive_rate: 0.74,
            noise_sd: 0.01,
            shifted: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub corpus: Corpus,
    pub emotions: EmotionTable,
    /// Decision threshold on the latent score.
    pub tau: f64,
    /// `(TFIDF_CS, R_NEUTRAL)` per pair as used by the labelling rule.
    pub drivers: Vec<(f64, f64)>,
}

fn sentence(words: &[&str], end: char) -> String {
    let mut s = words.join(" ");
    if let Some(f) = s.get_mut(0..1) {
        f.make_ascii_uppercase();
    }
    s.push(end);
    s
}

fn split_emotions(rng: &mut ChaCha8Rng, neutral: f64) -> EmotionScores {
    let w: Vec<f64> = (0..6).map(|_| rng.random::<f64>() + 0.05).collect();
    let total: f64 = w.iter().sum();
    let mut a = [0.0; 7];
    for (k, wk) in w.iter().enumerate() {
        a[k] = (1.0 - neutral) * wk / total;
    }
    a[6] = neutral;
    let s: f64 = a.iter().sum();
    a.iter_mut().for_each(|v| *v /= s);
    EmotionScores(a)
}

fn user(rng: &mut ChaCha8Rng, prefix: &str, i: usize, shifted: bool) -> UserProfile {
    let scale = if shifted { 3.0 } else { 1.0 };
    UserProfile {
        user_id: format!("{prefix}{i}"),
        tenure_seconds: (rng.random_range(0.0..3.0e7) * scale) as u64,
        platform_response_count: (rng.random_range(0.0..500.0) * scale) as u64,
        med_expert: rng.random_bool(if shifted { 0.2 } else { 0.1 }),
    }
}

/// Generates the response-task corpus. With `tau = None` the threshold is
/// the `1 - positive_rate` quantile of the latent score; pass the source
/// threshold to label a shifted target by the same rule.
pub fn synthetic_isr_corpus(cfg: &SynthConfig, tau: Option<f64>) -> Result<SynthCorpus> {
    if cfg.n_pairs < 2 || !(0.0..1.0).contains(&cfg.positive_rate) || cfg.noise_sd < 0.0 {
        return Err(Error::Invalid(format!("invalid synthetic config {cfg:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, cfg.noise_sd.max(1e-300)).expect("sd > 0");
    let mut pairs = Vec::with_capacity(cfg.n_pairs);
    let mut emo = Vec::with_capacity(cfg.n_pairs);
    for i in 0..cfg.n_pairs {
        let mut vocab: Vec<&str> = WORDS.to_vec();
        vocab.shuffle(&mut rng);
        let (topic, other) = vocab.split_at(8);
        let q_len = rng.random_range(12..30);
        let q_words: Vec<&str> = (0..q_len).map(|_| *topic.choose(&mut rng).unwrap()).collect();
        let cut = q_len / 2;
        let question = format!("{} {}", sentence(&q_words[..cut], '.'), sentence(&q_words[cut..], '?'));

        let overlap: f64 = if cfg.shifted {
            rng.random::<f64>().sqrt()
        } else {
            rng.random()
        };
        let r_len = rng.random_range(15..40);
        let mut r_words = Vec::with_capacity(r_len);
        for _ in 0..r_len {
            let w = if rng.random_bool(0.15) {
                *FILLER.choose(&mut rng).unwrap()
            } else if rng.random_bool(overlap) {
                *topic.choose(&mut rng).unwrap()
            } else {
                *other.choose(&mut rng).unwrap()
            };
            r_words.push(w);
        }
        let rc = r_len / 3;
        let response = format!(
            "{} {}",
            sentence(&r_words[..rc], '.'),
            sentence(&r_words[rc..], '.')
        );
        let neutral = if cfg.shifted {
            rng.random_range(0.3..0.9)
        } else {
            rng.random_range(0.2..0.8)
        };
        let r_emotions = split_emotions(&mut rng, neutral);
        let q_neutral = rng.random_range(0.1..0.9);
        let q_emotions = split_emotions(&mut rng, q_neutral);
        pairs.push(QrPair {
            pair_id: format!("{}-{i:05}", cfg.condition),
            condition: cfg.condition.clone(),
            question_text: question,
            response_text: response,
            response_index: if cfg.shifted { rng.random_range(1..20) } else { rng.random_range(1..10) },
            questioner_reply_ratio: rng.random(),
            q_user: user(&mut rng, "q", i, cfg.shifted),
            r_user: user(&mut rng, "r", i, cfg.shifted),
            issq_label: Some(true),
            isr_label: None,
            helpful: None,
        });
        emo.push(PairEmotions {
            question: q_emotions,
            response: r_emotions,
        });
    }
    let docs: Vec<&str> = pairs
        .iter()
        .flat_map(|p| [p.question_text.as_str(), p.response_text.as_str()])
        .collect();
    let tfidf = fit_tfidf(&docs, 2, TokenizerConfig::default())?;
    let drivers: Vec<(f64, f64)> = pairs
        .iter()
        .zip(&emo)
        .map(|(p, e)| (tfidf.cosine_similarity(&p.question_text, &p.response_text), e.response.0[6]))
        .collect();
    let scores: Vec<f64> = drivers
        .iter()
        .map(|(cs, n)| 0.6 * cs + 0.4 * n + if cfg.noise_sd > 0.0 { noise.sample(&mut rng) } else { 0.0 })
        .collect();
    let tau = match tau {
        Some(t) => t,
        None => {
            let mut s = scores.clone();
            s.sort_by(f64::total_cmp);
            let k = ((1.0 - cfg.positive_rate) * s.len() as f64).round() as usize;
            let k = k.clamp(1, s.len() - 1);
            0.5 * (s[k - 1] + s[k])
        }
    };
    let mut table = EmotionTable::default();
    for ((p, s), e) in pairs.iter_mut().zip(&scores).zip(emo) {
        p.isr_label = Some(*s > tau);
        table.insert(p.pair_id.clone(), e);
    }
    Ok(SynthCorpus {
        corpus: Corpus::new(pairs, format!("synthetic_isr({cfg:?})"))?,
        emotions: table,
        tau,
        drivers,
    })
}

/// Responses with known helpfulness odds. Returns the corpus (with
/// `helpful` flags) and the ISR indicator used as the regressor.
///
/// ISR responses are longer on average, so length matching matters.
pub fn synthetic_helpfulness_corpus(n: usize, odds_ratio: f64, seed: u64) -> Result<(Corpus, Vec<bool>)> {
    if n < 10 || !(odds_ratio.is_finite() && odds_ratio > 0.0) {
        return Err(Error::Invalid("need n >= 10 and a positive odds ratio".into()));
    }
    const CONDITIONS: [&str; 4] = ["cancer", "cardiovascular", "diabetes", "neurological"];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let beta_isr = odds_ratio.ln();
    let mut pairs = Vec::with_capacity(n);
    let mut isr = Vec::with_capacity(n);
    for i in 0..n {
        let r = rng.random_bool(0.74);
        let condition = CONDITIONS[rng.random_range(0..CONDITIONS.len())];
        let words = rng.random_range(5..60) + if r { 20 } else { 0 };
        let text: Vec<&str> = (0..words).map(|_| *WORDS.choose(&mut rng).unwrap()).collect();
        let response_text = sentence(&text, '.');
        let chars = response_text.chars().count() as f64;
        let r_user = user(&mut rng, "r", i, false);
        let q_user = user(&mut rng, "q", i, false);
        let eta = -0.25 + beta_isr * f64::from(u8::from(r)) + 0.001 * (chars - 250.0)
            + 0.0005 * r_user.platform_response_count as f64
            - 0.1 * f64::from(u8::from(q_user.med_expert));
        let p = 1.0 / (1.0 + (-eta).exp());
        pairs.push(QrPair {
            pair_id: format!("h{i:05}"),
            condition: condition.into(),
            question_text: "What should I do?".into(),
            response_text,
            response_index: rng.random_range(1..10),
            questioner_reply_ratio: rng.random(),
            q_user,
            r_user,
            issq_label: Some(true),
            isr_label: Some(r),
            helpful: Some(rng.random_bool(p)),
        });
        isr.push(r);
    }
    Ok((Corpus::new(pairs, format!("synthetic_helpfulness(n={n}, or={odds_ratio}, seed={seed})"))?, isr))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn base_rate_and_determinism() {
        let cfg = SynthConfig { n_pairs: 500, ..Default::default() };
        let a = synthetic_isr_corpus(&cfg, None).unwrap();
        let b = synthetic_isr_corpus(&cfg, None).unwrap();
        assert_eq!(a.corpus, b.corpus);
        let pos = a.corpus.pairs.iter().filter(|p| p.isr_label == Some(true)).count();
        assert_eq!(pos, 370);
        for p in &a.corpus.pairs {
            a.emotions.get(&p.pair_id).unwrap().response.check(1e-9).unwrap();
        }
        let spread = a.drivers.iter().map(|d| d.0).fold(0.0f64, f64::max) - a.drivers.iter().map(|d| d.0).fold(1.0f64, f64::min);
        assert!(spread > 0.5, "similarity spread {spread}");
    }

    #[test]
    fn helpfulness_corpus_shape() {
        let (c, isr) = synthetic_helpfulness_corpus(300, 1.32, 1).unwrap();
        assert_eq!(c.len(), 300);
        assert_eq!(isr.len(), 300);
        assert!(c.pairs.iter().all(|p| p.helpful.is_some()));
        assert!(c.conditions().len() > 1);
    }
}
