//! Deterministic synthetic corpus and lattice generation.
//!
//! The generator stands in for a decoder: it emits a train split in
//! which rare entities appear between 1 and threshold-1 times and OOV
//! entities never, a test split containing every entity at least twice,
//! and one lattice per test sentence. Each lattice holds the reference
//! path plus, at every entity position, competing frequent-word arcs
//! whose acoustic scores are drawn so the entity is not always
//! acoustically best. Arc LM scores come from an add-half smoothed
//! unigram fit on the train split, which plays the decoding LM: it puts
//! its mass on frequent words, so underrepresented entities lose unless
//! later stages intervene.
//!
//! Everything is a pure function of the seed. Constructed properties
//! (reference reachability, a lossy baseline on the OOV split) are
//! checked after generation and the acoustic jitter is redrawn if a
//! draw violates them.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::augment::rank_candidates;
use crate::eval::{classify_nes, ne_wer, pair_transcripts};
use crate::lattice::{
    best_path, enumerate_paths, serialize_lattices, Arc, Lattice, Node, ScaleConfig,
};
use crate::lexicon::{expand_lexicon, Lexicon};
use crate::{Error, Result, Scalar};

/// Frames per word in generated lattices (10 ms frames).
const FRAMES_PER_WORD: u32 = 30;
const ACOUSTIC_BASE: f64 = -10.0;

/// Per-entity-slot acoustic regimes: (probability, best-competitor edge
/// relative to the reference arc). Negative edges put the entity ahead
/// acoustically; positive edges put the best competitor ahead.
const MODE_WEIGHTS: [f64; 4] = [0.10, 0.50, 0.22, 0.18];
const MODE_EDGES: [f64; 4] = [-80.0, -35.0, 1.5, 40.0];

const MAX_ATTEMPTS: u64 = 50;

const FILLERS: &[&str] = &[
    "go", "to", "the", "we", "at", "from", "take", "bus", "train", "walk", "ride", "meet",
    "stops", "now", "today", "then", "turn", "left", "head", "towards", "via", "road", "near",
    "is", "closed",
];

/// Sentence skeletons; `{}` marks a location slot.
const TEMPLATES: &[&[&str]] = &[
    &["go", "to", "{}", "now"],
    &["take", "the", "bus", "to", "{}"],
    &["we", "meet", "at", "{}", "today"],
    &["walk", "from", "{}", "to", "{}"],
    &["the", "train", "stops", "at", "{}"],
    &["head", "towards", "{}", "then", "turn", "left"],
    &["ride", "from", "{}", "via", "{}"],
    &["the", "road", "near", "{}", "is", "closed"],
];

const ONSETS: &[&str] = &["b", "ch", "d", "g", "h", "j", "k", "l", "m", "n", "p", "r", "s", "sh", "t", "w", "y"];
const RIMES: &[&str] = &["a", "an", "ang", "e", "ek", "en", "i", "in", "o", "ok", "on", "ong", "u", "un"];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    /// Frequent location words; these fill slots in train and compete
    /// against entities in lattices.
    pub frequent_words: usize,
    pub rare_nes: usize,
    pub oov_nes: usize,
    pub train_sentences: usize,
    /// Filler sentences in the test split, on top of the two carrier
    /// sentences every entity gets.
    pub test_filler_sentences: usize,
    /// Rarity threshold: rare entities get train counts in [1, threshold).
    pub ne_threshold: usize,
    /// Competing arcs per entity slot.
    pub confusion_depth: usize,
    /// Acoustic log-score jitter spread.
    pub jitter_sigma: f64,
    /// When set, every competitor arc sits at exactly this edge relative
    /// to the reference arc (degenerate-test knob).
    pub competitor_edge_override: Option<f64>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 7,
            frequent_words: 24,
            rare_nes: 12,
            oov_nes: 12,
            train_sentences: 420,
            test_filler_sentences: 80,
            ne_threshold: 10,
            confusion_depth: 3,
            jitter_sigma: 1.0,
            competitor_edge_override: None,
        }
    }
}

/// The bundled fixed-seed configuration behind `synth --preset
/// paper-ablation`.
pub fn paper_ablation_preset() -> SynthConfig {
    SynthConfig::default()
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ne_threshold < 2 {
            return Err(Error::config(
                "ne_threshold must be at least 2 so rare counts in [1, threshold) exist",
            ));
        }
        if self.frequent_words < 5 || self.frequent_words < self.confusion_depth {
            return Err(Error::config("frequent_words must be >= 5 and >= confusion_depth"));
        }
        if self.train_sentences == 0 {
            return Err(Error::config("train_sentences must be positive"));
        }
        if self.confusion_depth == 0 {
            return Err(Error::config("confusion_depth must be at least 1"));
        }
        if !self.jitter_sigma.is_finite() || self.jitter_sigma < 0.0 {
            return Err(Error::config("jitter_sigma must be finite and non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub train: Vec<Vec<String>>,
    pub test: Vec<(String, Vec<String>)>,
    pub rare_nes: Vec<String>,
    pub oov_nes: Vec<String>,
    pub locations: Vec<String>,
}

impl SynthCorpus {
    pub fn ne_list(&self) -> Vec<String> {
        self.rare_nes.iter().chain(self.oov_nes.iter()).cloned().collect()
    }

    pub fn ne_set(&self) -> BTreeSet<String> {
        self.ne_list().into_iter().collect()
    }

    /// Words the decoder could emit before lexicon expansion.
    pub fn baseline_words(&self) -> BTreeSet<String> {
        self.train.iter().flatten().cloned().collect()
    }

    /// Baseline words plus every entity (the expanded-lexicon vocabulary).
    pub fn expanded_words(&self) -> BTreeSet<String> {
        let mut words = self.baseline_words();
        words.extend(self.ne_list());
        words
    }
}

fn gen_name(rng: &mut ChaCha8Rng, used: &mut HashSet<String>) -> String {
    loop {
        let syllables = 2 + (rng.gen_range(0..2) as usize);
        let mut name = String::new();
        for _ in 0..syllables {
            name.push_str(ONSETS[rng.gen_range(0..ONSETS.len())]);
            name.push_str(RIMES[rng.gen_range(0..RIMES.len())]);
        }
        if used.insert(name.clone()) {
            return name;
        }
    }
}

fn gen_entity(rng: &mut ChaCha8Rng, used: &mut HashSet<String>) -> String {
    // Some entities are multi-word names joined with an underscore.
    if rng.gen_bool(0.4) {
        let a = gen_name(rng, used);
        let b = gen_name(rng, used);
        let joined = format!("{}_{}", a, b);
        used.insert(joined.clone());
        joined
    } else {
        gen_name(rng, used)
    }
}

/// Rank-weighted location pick (earlier locations are more frequent).
fn pick_location(rng: &mut ChaCha8Rng, locations: &[String]) -> String {
    let weights: Vec<f64> = (0..locations.len()).map(|i| 1.0 / (i as f64 + 1.5)).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen_range(0.0..total);
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return locations[i].clone();
        }
        u -= w;
    }
    locations.last().unwrap().clone()
}

fn fill_template(
    rng: &mut ChaCha8Rng,
    locations: &[String],
    forced_first_slot: Option<&str>,
) -> Vec<String> {
    let template = TEMPLATES[rng.gen_range(0..TEMPLATES.len())];
    let mut first = true;
    template
        .iter()
        .map(|&tok| {
            if tok != "{}" {
                return tok.to_string();
            }
            if first {
                first = false;
                if let Some(ne) = forced_first_slot {
                    return ne.to_string();
                }
            }
            pick_location(rng, locations)
        })
        .collect()
}

/// Deterministic corpus generation: train split with the configured
/// rare/OOV partition, test split containing every entity at least
/// twice.
pub fn generate_corpus(cfg: &SynthConfig) -> Result<SynthCorpus> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut used: HashSet<String> = FILLERS.iter().map(|s| s.to_string()).collect();

    let locations: Vec<String> =
        (0..cfg.frequent_words).map(|_| gen_name(&mut rng, &mut used)).collect();
    let rare_nes: Vec<String> = (0..cfg.rare_nes).map(|_| gen_entity(&mut rng, &mut used)).collect();
    let oov_nes: Vec<String> = (0..cfg.oov_nes).map(|_| gen_entity(&mut rng, &mut used)).collect();

    let mut train: Vec<Vec<String>> = Vec::new();
    for _ in 0..cfg.train_sentences {
        train.push(fill_template(&mut rng, &locations, None));
    }
    for ne in &rare_nes {
        let occurrences = rng.gen_range(1..cfg.ne_threshold);
        for _ in 0..occurrences {
            train.push(fill_template(&mut rng, &locations, Some(ne)));
        }
    }
    train.shuffle(&mut rng);

    let mut test_sents: Vec<Vec<String>> = Vec::new();
    for ne in rare_nes.iter().chain(oov_nes.iter()) {
        for _ in 0..2 {
            test_sents.push(fill_template(&mut rng, &locations, Some(ne)));
        }
    }
    for _ in 0..cfg.test_filler_sentences {
        test_sents.push(fill_template(&mut rng, &locations, None));
    }
    test_sents.shuffle(&mut rng);
    let test: Vec<(String, Vec<String>)> = test_sents
        .into_iter()
        .enumerate()
        .map(|(i, s)| (format!("utt{:04}", i + 1), s))
        .collect();

    let corpus = SynthCorpus { train, test, rare_nes, oov_nes, locations };

    // Closure check: the evaluator must recover exactly the partition the
    // generator intended.
    let inventory = classify_nes(&corpus.ne_list(), &corpus.train, cfg.ne_threshold)?;
    let want_rare: BTreeSet<String> = corpus.rare_nes.iter().cloned().collect();
    let want_oov: BTreeSet<String> = corpus.oov_nes.iter().cloned().collect();
    if inventory.rare != want_rare || inventory.oov != want_oov {
        return Err(Error::config(
            "generated corpus does not reproduce the configured rare/oov partition",
        ));
    }
    Ok(corpus)
}

/// Add-half smoothed unigram over the train split: the synthetic
/// decoding LM behind arc lm_scores.
pub struct UnigramScores {
    counts: BTreeMap<String, usize>,
    total: usize,
    vocab_size: usize,
}

impl UnigramScores {
    pub fn fit(corpus: &SynthCorpus) -> Self {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        let mut total = 0usize;
        for tok in corpus.train.iter().flatten() {
            *counts.entry(tok.clone()).or_insert(0) += 1;
            total += 1;
        }
        let vocab_size = corpus.expanded_words().len();
        UnigramScores { counts, total, vocab_size }
    }

    pub fn ln_prob(&self, word: &str) -> f64 {
        let c = self.counts.get(word).copied().unwrap_or(0) as f64;
        ((c + 0.5) / (self.total as f64 + 0.5 * self.vocab_size as f64)).ln()
    }
}

fn build_lattices<S: Scalar>(
    corpus: &SynthCorpus,
    cfg: &SynthConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<Lattice<S>>, bool)> {
    let uni = UnigramScores::fit(corpus);
    let ne_set = corpus.ne_set();
    let noise = Normal::new(0.0, (0.3 * cfg.jitter_sigma).max(f64::MIN_POSITIVE)).unwrap();
    let mut any_competitor_beats_reference = false;
    let mut lattices = Vec::with_capacity(corpus.test.len());

    for (utt, sentence) in &corpus.test {
        let n = sentence.len();
        let nodes: Vec<Node> =
            (0..=n).map(|i| Node { id: i, time: i as u32 * FRAMES_PER_WORD }).collect();
        let mut arcs: Vec<Arc<S>> = Vec::new();
        for (i, word) in sentence.iter().enumerate() {
            let jitter = |rng: &mut ChaCha8Rng| {
                if cfg.jitter_sigma == 0.0 {
                    0.0
                } else {
                    noise.sample(rng)
                }
            };
            let ref_ac = ACOUSTIC_BASE + jitter(rng);
            arcs.push(Arc::new(
                i,
                i + 1,
                word.clone(),
                S::from_f64_c(ref_ac),
                S::from_f64_c(uni.ln_prob(word)),
            ));
            if !ne_set.contains(word) {
                continue;
            }
            let edge = match cfg.competitor_edge_override {
                Some(e) => e,
                None => {
                    let mut u = rng.gen_range(0.0..1.0);
                    let mut pick = MODE_EDGES[MODE_EDGES.len() - 1];
                    for (w, e) in MODE_WEIGHTS.iter().zip(MODE_EDGES.iter()) {
                        if u < *w {
                            pick = *e;
                            break;
                        }
                        u -= w;
                    }
                    pick
                }
            };
            let mut pool: Vec<&String> = corpus.locations.iter().collect();
            pool.shuffle(rng);
            for (j, comp) in pool.iter().take(cfg.confusion_depth).enumerate() {
                let ac = ref_ac + edge - 2.0 * j as f64 + jitter(rng);
                if ac > ref_ac {
                    any_competitor_beats_reference = true;
                }
                arcs.push(Arc::new(
                    i,
                    i + 1,
                    (*comp).clone(),
                    S::from_f64_c(ac),
                    S::from_f64_c(uni.ln_prob(comp)),
                ));
            }
        }
        let lat = Lattice::new(utt.clone(), nodes, arcs, 0, BTreeSet::from([n]))?;
        lattices.push(lat);
    }
    Ok((lattices, any_competitor_beats_reference))
}

/// One lattice per test sentence. Redraws the acoustic jitter (bounded
/// attempts) until the constructed properties hold: the reference path
/// exists in every lattice, the entity is not always acoustically best,
/// and the 1-best baseline loses at least 40% of OOV-entity occurrences.
pub fn generate_lattices<S: Scalar>(
    corpus: &SynthCorpus,
    cfg: &SynthConfig,
) -> Result<Vec<Lattice<S>>> {
    cfg.validate()?;
    let scales = ScaleConfig::<S>::default();
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(
            cfg.seed ^ attempt.wrapping_mul(0x9e37_79b9_7f4a_7c15),
        );
        let (lattices, competitor_wins) = build_lattices::<S>(corpus, cfg, &mut rng)?;

        for (lat, (_, sentence)) in lattices.iter().zip(&corpus.test) {
            let slots = sentence.iter().filter(|w| corpus.ne_set().contains(*w)).count();
            let cap = 64 * (cfg.confusion_depth + 1).pow(slots.min(6) as u32);
            let paths = enumerate_paths(lat, &scales, cap)?;
            if !paths.iter().any(|(h, _)| &h.words == sentence) {
                return Err(Error::config(format!(
                    "reference path missing from generated lattice `{}`",
                    lat.utterance_id
                )));
            }
        }

        if cfg.competitor_edge_override.is_some() {
            return Ok(lattices);
        }
        let has_ne_slots = corpus
            .test
            .iter()
            .any(|(_, s)| s.iter().any(|w| corpus.ne_set().contains(w)));
        if has_ne_slots && !competitor_wins {
            continue;
        }
        if !corpus.oov_nes.is_empty() {
            let hyps: Vec<(String, Vec<String>)> = lattices
                .iter()
                .map(|lat| Ok((lat.utterance_id.clone(), best_path(lat, &scales)?.words)))
                .collect::<Result<_>>()?;
            let pairs = pair_transcripts(&corpus.test, &hyps)?;
            let inventory = classify_nes(&corpus.ne_list(), &corpus.train, cfg.ne_threshold)?;
            let report = ne_wer::<S>(&pairs, &inventory);
            let oov_pct = report.oov.map(|s| s.percent.to_f64_c()).unwrap_or(100.0);
            if oov_pct < 40.0 {
                continue;
            }
        }
        return Ok(lattices);
    }
    Err(Error::config("could not satisfy constructed lattice properties within the attempt budget"))
}

/// Writes the full fixture tree (corpus files, lattices, entity list,
/// candidate map, lexicons, and a ready-to-run pipeline config).
pub fn write_fixture_tree(dir: &Path, cfg: &SynthConfig) -> Result<Vec<std::path::PathBuf>> {
    let corpus = generate_corpus(cfg)?;
    let lattices = generate_lattices::<f64>(&corpus, cfg)?;

    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut emit = |name: &str, contents: String| -> Result<()> {
        let path = dir.join(name);
        std::fs::write(&path, contents)?;
        written.push(path);
        Ok(())
    };

    let train_text: String = corpus.train.iter().map(|s| s.join(" ") + "\n").collect();
    emit("train.txt", train_text)?;
    let test_text: String =
        corpus.test.iter().map(|(u, s)| format!("{}\t{}\n", u, s.join(" "))).collect();
    emit("test_ref.tsv", test_text)?;
    emit("lattices.lats", serialize_lattices(&lattices))?;
    let ne_text: String = corpus.ne_list().iter().map(|ne| ne.clone() + "\n").collect();
    emit("ne_list.txt", ne_text)?;

    let candidates = rank_candidates(&corpus.ne_list(), &corpus.locations, &corpus.train, 5)?;
    emit("candidates.tsv", crate::augment::serialize_candidate_map(&candidates))?;

    let baseline_words = corpus.baseline_words();
    let baseline = Lexicon::graphemic_from_words(baseline_words.iter().map(String::as_str))?;
    let (expanded, _) = expand_lexicon(&baseline, &corpus.ne_list())?;
    emit("lexicon.baseline.lex", baseline.serialize())?;
    emit("lexicon.expanded.lex", expanded.serialize())?;

    let config = format!(
        "# paper-ablation pipeline configuration (seed {seed})\n\
         train_corpus=train.txt\n\
         test_ref=test_ref.tsv\n\
         lattices=lattices.lats\n\
         ne_list=ne_list.txt\n\
         candidate_map=candidates.tsv\n\
         rows=1,2,3,4,5,6,7,8,9,10\n\
         kn_order=4\n\
         kn_weight=0.6\n\
         theta_rare=0.09\n\
         theta_oov=0.01\n\
         candidates_k=5\n\
         ne_threshold={threshold}\n\
         letter_n_min=2\n\
         letter_n_max=5\n\
         letter_slots=10000\n\
         embedding_dim=32\n\
         epochs=3\n\
         learning_rate=0.08\n\
         nlm_seed={seed}\n\
         acoustic_scale=0.1\n\
         lm_scale=1.0\n\
         boost_bonus=1.3862943611198906\n\
         nbest=100\n\
         state_cap=50000\n\
         jobs=1\n",
        seed = cfg.seed,
        threshold = cfg.ne_threshold,
    );
    emit("pipeline.cfg", config)?;
    Ok(written)
}
