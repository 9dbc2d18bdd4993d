use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("lattice `{utt}` contains a cycle")]
    Cycle { utt: String },

    #[error("lattice `{utt}` references unknown node {node}")]
    DanglingNode { utt: String, node: usize },

    #[error("non-finite score in {what}")]
    NonFinite { what: String },

    #[error("empty lattice")]
    EmptyLattice,

    #[error("lattice `{utt}` has no path from start to a final node")]
    NoPath { utt: String },

    #[error("acoustic and LM scales must be positive")]
    NonPositiveScale,

    #[error("path count exceeds cap {cap}")]
    PathCapExceeded { cap: usize },

    #[error("expanded state count exceeds cap {cap}; fall back to n-best rescoring")]
    StateCapExceeded { cap: usize },

    #[error("empty word")]
    EmptyWord,

    #[error("unsupported character {ch:?} in word `{word}`")]
    UnsupportedChar { word: String, ch: char },

    #[error("empty token list")]
    EmptyTokenList,

    #[error("cannot expand a phonetic lexicon without supplied pronunciations")]
    PhoneticExpansion,

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("no n-grams observed at order {order}")]
    ZeroCountOrder { order: usize },

    #[error("training loss became non-finite at epoch {epoch}, sentence {sentence}")]
    NanLoss { epoch: usize, sentence: usize },

    #[error("named entity `{ne}` has {have} candidates, need {need}")]
    TooFewCandidates { ne: String, have: usize, need: usize },

    #[error("candidate `{candidate}` for `{ne}` is not in the LM vocabulary")]
    CandidateOutsideVocab { ne: String, candidate: String },

    #[error("augmentation target `{ne}` is not in the LM vocabulary")]
    TargetOutsideVocab { ne: String },

    #[error("duplicate augmentation target `{ne}`")]
    DuplicateTarget { ne: String },

    #[error("boost bonus must be finite and non-negative")]
    NegativeBonus,

    #[error("index entry for `{utt}` references unknown arc {arc}")]
    DanglingArcRef { utt: String, arc: usize },

    #[error("invalid configuration: {msg}")]
    InvalidConfig { msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse { line, msg: msg.into() }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig { msg: msg.into() }
    }
}
