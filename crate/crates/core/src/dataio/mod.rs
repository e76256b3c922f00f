//! MIND-format parsing, vocabulary, training-sample assembly and the
//! synthetic planted-interest generator.

mod samples;
mod synthetic;
mod tsv;
mod vocab;

pub use samples::{
    build_train_samples, history_slots, negative_sample, Corpus, NewsRecord, NewsStore, ResolvedImpression, SampleSkip,
    SampleStats, TrainSample, UNKNOWN_NEWS,
};
pub use synthetic::{
    generate_synthetic, parse_planted, token_name, write_planted, Placement, SynthConfig, SyntheticDataset,
};
pub use tsv::{
    parse_behaviors_str, parse_news_str, read_behaviors_tsv, read_news_tsv, write_behaviors_tsv, write_news_tsv,
    Candidate, Impression, ParseStats, RawNews,
};
pub use vocab::{tokenize, Vocabulary, PAD_ID, UNK_ID};
