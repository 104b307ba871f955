//! Writes a synthetic ISR corpus with its emotion sidecar, a covariate-shifted
//! corpus labelled by the same rule (under `shifted/`), and a helpfulness
//! corpus with a known ISR odds ratio of 1.32.
//!
//! cargo run --release --example make_synthetic -- OUT_DIR [N_PAIRS] [SEED]

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use ohcsupport::corpus::write_corpus;
use ohcsupport::synth::{synthetic_helpfulness_corpus, synthetic_isr_corpus, SynthConfig, SynthCorpus};

fn save(s: &SynthCorpus, dir: &Path) -> ohcsupport::Result<()> {
    std::fs::create_dir_all(dir)?;
    write_corpus(&s.corpus, BufWriter::new(File::create(dir.join("corpus.jsonl"))?))?;
    s.emotions.write(BufWriter::new(File::create(dir.join("emotions.jsonl"))?))
}

fn main() -> ohcsupport::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let out = PathBuf::from(args.first().map_or("synthetic", |s| s.as_str()));
    let mut cfg = SynthConfig::default();
    if let Some(n) = args.get(1) {
        cfg.n_pairs = n.parse().expect("N_PAIRS must be an integer");
    }
    if let Some(s) = args.get(2) {
        cfg.seed = s.parse().expect("SEED must be an integer");
    }
    let s = synthetic_isr_corpus(&cfg, None)?;
    save(&s, &out)?;
    let shifted_cfg = SynthConfig {
        n_pairs: (cfg.n_pairs / 3).max(50),
        condition: "diabetes".into(),
        shifted: true,
        seed: cfg.seed + 1,
        ..cfg.clone()
    };
    save(&synthetic_isr_corpus(&shifted_cfg, Some(s.tau))?, &out.join("shifted"))?;
    let (h, _) = synthetic_helpfulness_corpus(cfg.n_pairs, 1.32, cfg.seed)?;
    write_corpus(&h, BufWriter::new(File::create(out.join("helpfulness.jsonl"))?))?;
    eprintln!("{} pairs, tau = {:.4}, written to {}", s.corpus.len(), s.tau, out.display());
    Ok(())
}
