pub mod text;
pub mod decoder;
pub mod nbest;
pub mod cnbuild;
pub mod ngram;
pub mod rnn;
