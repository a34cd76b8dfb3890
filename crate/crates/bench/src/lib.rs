//! Fixtures shared by the benchmarks.

use quizhost_core::corpus::{
    generate_corpus, parse_corpus, training_sequences, write_corpus, GeneratorConfig,
};
use quizhost_core::policy::TrainingSequence;
use quizhost_core::IntentRegistry;

/// Training sequences from a small synthetic corpus.
pub fn sequences(episodes: usize) -> Vec<TrainingSequence> {
    let rows = generate_corpus(&GeneratorConfig {
        episodes,
        ..GeneratorConfig::default()
    })
    .expect("corpus generation");
    let mut buf = Vec::new();
    write_corpus(&rows, &mut buf).expect("in-memory write");
    let corpus = parse_corpus(std::str::from_utf8(&buf).expect("utf-8")).expect("round trip");
    training_sequences(&corpus, &IntentRegistry::standard()).expect("encodable corpus")
}
