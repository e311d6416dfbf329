//! Phoneme recognition toolkit for child speech: CHAT transcript parsing,
//! IPA tokenization and normalization onto a fixed target inventory, corpus
//! curation and speaker-independent splits, masked CTC with context windows,
//! a trainable frame classifier, and PER / developmental analyses.

pub mod chat;
pub mod ctc;
pub mod curator;
pub mod devmetrics;
pub mod evaluator;
pub mod features;
pub mod head;
pub mod inventory;
pub mod optim;
pub mod synth;
pub mod tensor;
pub mod train;
