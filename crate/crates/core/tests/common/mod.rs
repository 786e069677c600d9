#![allow(dead_code)]

use gapmap_core::synth::{synthetic_corpus, SynthConfig};
use gapmap_core::{analyze, AnalysisConfig, Corpus, EmbeddingMatrix, HashingEmbedder, PreparedSnapshot};

pub fn small_analysis_config() -> AnalysisConfig {
    AnalysisConfig {
        encoder_name: "hashing-128".into(),
        pca_components: 16,
        graph_k: 8,
        scales: vec![4, 8],
        gap_quantile: 0.85,
        ..Default::default()
    }
}

pub fn embed(corpus: &Corpus, encoder: &HashingEmbedder) -> EmbeddingMatrix {
    let rows: Vec<Vec<f32>> = corpus.papers().iter().map(|p| encoder.embed_one(&p.text())).collect();
    EmbeddingMatrix::from_f32_rows(corpus.ids(), &rows, "hashing-128").unwrap()
}

/// A published-ready snapshot of a 150-paper synthetic corpus.
pub fn prepared_snapshot() -> PreparedSnapshot {
    let corpus = synthetic_corpus(&SynthConfig { n_papers: 150, ..Default::default() });
    let encoder = HashingEmbedder::new(128);
    let out = analyze(&corpus, &embed(&corpus, &encoder), &small_analysis_config()).unwrap();
    PreparedSnapshot::from_outputs(&out).unwrap()
}
