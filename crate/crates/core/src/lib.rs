//! Word-lattice post-processing toolkit for improving recognition of
//! underrepresented named entities.
//!
//! The pipeline operates on decoder output lattices and never touches
//! acoustic training: lexicon expansion, Kneser-Ney and recurrent-LM
//! rescoring, embedding-row augmentation for rare/OOV entities, and
//! keyword-search style posterior boosting, scored with WER and NE-WER.
//!
//! All numeric code is generic over a [`Scalar`] (`f32` or `f64`); the
//! crate root exports `f64` aliases, which is what the CLI and the test
//! suites use.

pub mod augment;
pub mod boost;
pub mod eval;
pub mod lattice;
pub mod lexicon;
pub mod neural_lm;
pub mod ngram;
pub mod pipeline;
pub mod rescore;
pub mod synth;

mod error;

pub use error::{Error, Result};

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point scalar the numeric code is generic over.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + std::iter::Sum
    + std::fmt::Debug
    + std::fmt::Display
    + std::fmt::LowerExp
    + Default
    + Send
    + Sync
    + 'static
{
    fn from_f64_c(v: f64) -> Self {
        Self::from_f64(v).expect("f64 -> Scalar")
    }

    fn from_usize_c(v: usize) -> Self {
        Self::from_usize(v).expect("usize -> Scalar")
    }

    fn to_f64_c(self) -> f64 {
        self.to_f64().expect("Scalar -> f64")
    }

    /// ln(10), used at the log10 (ARPA) <-> natural-log boundary.
    fn ln_10() -> Self {
        Self::from_f64_c(std::f64::consts::LN_10)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Scores and model parameters are serialized with 9 significant digits;
/// text round-trips are exact at that precision.
pub fn fmt_score<S: Scalar>(v: S) -> String {
    format!("{:.8e}", v)
}

pub type Lattice = lattice::Lattice<f64>;
pub type Arc = lattice::Arc<f64>;
pub type ArcPosteriors = lattice::ArcPosteriors<f64>;
pub type Hypothesis = lattice::Hypothesis<f64>;
pub type ScaleConfig = lattice::ScaleConfig<f64>;
pub type NGramLm = ngram::NGramLm<f64>;
pub type NeuralLm = neural_lm::NeuralLm<f64>;
pub type NlmTrainConfig = neural_lm::TrainConfig<f64>;
pub type AugmentationPlan = augment::AugmentationPlan<f64>;
pub type InterpolationConfig = rescore::InterpolationConfig<f64>;
pub type InvertedIndex = boost::InvertedIndex<f64>;
pub type IndexEntry = boost::IndexEntry<f64>;
pub type WerStats = eval::WerStats<f64>;
pub type NeWerReport = eval::NeWerReport<f64>;
