//! Pipeline driver: runs the stage stack over a fixture tree and emits
//! one report row per system.
//!
//! Row structure (each row names the row it builds on):
//!   (1) baseline 1-best on lattices restricted to the baseline lexicon
//!   (2) (1) + expanded lexicon (full lattices)
//!   (3) (2) + neural LM rescoring interpolated with the n-gram model
//!   (4) (2) + neural LM rescoring with letter features
//!   (5) (3) + embedding matrix augmentation
//!   (6) (4) + embedding matrix augmentation
//!   (7)-(10) word lattice boosting applied to rows (3)-(6)
//!
//! Work is utterance-parallel under `jobs`; each utterance is scored
//! independently and results merge in utterance order, so reports are
//! byte-reproducible for a fixed seed regardless of thread count.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::augment::{augment_embeddings, build_plans, ensure_targets_in_vocab, parse_candidate_map};
use crate::boost::{boost_index, build_index, regenerate_lattice};
use crate::eval::{
    classify_nes, format_report, ne_wer, pair_transcripts, parse_transcripts, wer, NeInventory,
    NeWerReport, WerStats,
};
use crate::lattice::{best_path, parse_lattices, Lattice, ScaleConfig};
use crate::lexicon::{expand_lexicon, Lexicon};
use crate::neural_lm::{train, LetterFeatureConfig, NeuralLm, TrainConfig};
use crate::ngram::{train_kn, NGramLm, BOS, EOS, UNK};
use crate::rescore::{rescore_lattice, InterpolationConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub train_corpus: PathBuf,
    pub test_ref: PathBuf,
    pub lattices: PathBuf,
    pub ne_list: PathBuf,
    pub candidate_map: PathBuf,
    pub rows: Vec<u8>,
    pub kn_order: usize,
    pub kn_weight: f64,
    pub theta_rare: f64,
    pub theta_oov: f64,
    pub candidates_k: usize,
    pub ne_threshold: usize,
    pub letter_n_min: usize,
    pub letter_n_max: usize,
    pub letter_slots: usize,
    pub embedding_dim: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub nlm_seed: u64,
    pub acoustic_scale: f64,
    pub lm_scale: f64,
    pub boost_bonus: f64,
    pub nbest: usize,
    pub state_cap: usize,
    pub jobs: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            train_corpus: PathBuf::new(),
            test_ref: PathBuf::new(),
            lattices: PathBuf::new(),
            ne_list: PathBuf::new(),
            candidate_map: PathBuf::new(),
            rows: (1..=10).collect(),
            kn_order: 4,
            kn_weight: 0.6,
            theta_rare: 0.09,
            theta_oov: 0.01,
            candidates_k: 5,
            ne_threshold: 10,
            letter_n_min: 2,
            letter_n_max: 5,
            letter_slots: 10_000,
            embedding_dim: 32,
            epochs: 3,
            learning_rate: 0.08,
            nlm_seed: 7,
            acoustic_scale: 0.1,
            lm_scale: 1.0,
            boost_bonus: 4f64.ln(),
            nbest: 100,
            state_cap: 50_000,
            jobs: 1,
        }
    }
}

/// Parses the flat key=value config format. Paths resolve relative to
/// `base_dir`; unknown keys are errors.
pub fn parse_config(text: &str, base_dir: &Path) -> Result<PipelineConfig> {
    let mut cfg = PipelineConfig::default();
    let mut seen_files = BTreeSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(i + 1, "expected key=value"))?;
        let (key, value) = (key.trim(), value.trim());
        let path = |v: &str| base_dir.join(v);
        let us = |v: &str| -> Result<usize> {
            v.parse().map_err(|_| Error::parse(i + 1, format!("bad integer `{}`", v)))
        };
        let fl = |v: &str| -> Result<f64> {
            v.parse().map_err(|_| Error::parse(i + 1, format!("bad number `{}`", v)))
        };
        match key {
            "train_corpus" => cfg.train_corpus = path(value),
            "test_ref" => cfg.test_ref = path(value),
            "lattices" => cfg.lattices = path(value),
            "ne_list" => cfg.ne_list = path(value),
            "candidate_map" => cfg.candidate_map = path(value),
            "rows" => {
                if value == "all" {
                    cfg.rows = (1..=10).collect();
                } else {
                    cfg.rows = value
                        .split(',')
                        .map(|r| {
                            r.trim()
                                .parse::<u8>()
                                .ok()
                                .filter(|r| (1..=10).contains(r))
                                .ok_or_else(|| Error::parse(i + 1, format!("bad row `{}`", r)))
                        })
                        .collect::<Result<_>>()?;
                    cfg.rows.sort_unstable();
                    cfg.rows.dedup();
                }
            }
            "kn_order" => cfg.kn_order = us(value)?,
            "kn_weight" => cfg.kn_weight = fl(value)?,
            "theta_rare" => cfg.theta_rare = fl(value)?,
            "theta_oov" => cfg.theta_oov = fl(value)?,
            "candidates_k" => cfg.candidates_k = us(value)?,
            "ne_threshold" => cfg.ne_threshold = us(value)?,
            "letter_n_min" => cfg.letter_n_min = us(value)?,
            "letter_n_max" => cfg.letter_n_max = us(value)?,
            "letter_slots" => cfg.letter_slots = us(value)?,
            "embedding_dim" => cfg.embedding_dim = us(value)?,
            "epochs" => cfg.epochs = us(value)?,
            "learning_rate" => cfg.learning_rate = fl(value)?,
            "nlm_seed" => {
                cfg.nlm_seed =
                    value.parse().map_err(|_| Error::parse(i + 1, "bad seed"))?
            }
            "acoustic_scale" => cfg.acoustic_scale = fl(value)?,
            "lm_scale" => cfg.lm_scale = fl(value)?,
            "boost_bonus" => cfg.boost_bonus = fl(value)?,
            "nbest" => cfg.nbest = us(value)?,
            "state_cap" => cfg.state_cap = us(value)?,
            "jobs" => cfg.jobs = us(value)?,
            other => return Err(Error::parse(i + 1, format!("unknown config key `{}`", other))),
        }
        seen_files.insert(key.to_string());
    }
    for required in ["train_corpus", "test_ref", "lattices", "ne_list", "candidate_map"] {
        if !seen_files.contains(required) {
            return Err(Error::config(format!("config is missing `{}`", required)));
        }
    }
    Ok(cfg)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RowResult {
    pub row: u8,
    pub label: String,
    pub wer: WerStats<f64>,
    pub ne: NeWerReport<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub rows: Vec<RowResult>,
}

impl AblationReport {
    pub fn row(&self, n: u8) -> Option<&RowResult> {
        self.rows.iter().find(|r| r.row == n)
    }

    /// Fixed-width table plus one key=value block per row.
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<5} {:<42} {:>7} {:>8} {:>8} {:>8}\n",
            "row", "system", "WER", "NE-WER", "rare", "oov"
        ));
        let pct = |o: &Option<crate::eval::NeWerStats<f64>>| match o {
            Some(s) => format!("{:.2}", s.percent),
            None => "--".to_string(),
        };
        for r in &self.rows {
            out.push_str(&format!(
                "{:<5} {:<42} {:>7.2} {:>8} {:>8} {:>8}\n",
                format!("({})", r.row),
                r.label,
                r.wer.percent,
                pct(&r.ne.overall),
                pct(&r.ne.rare),
                pct(&r.ne.oov),
            ));
        }
        for r in &self.rows {
            out.push_str(&format!("\n[row {}] {}\n", r.row, r.label));
            out.push_str(&format_report(&r.wer, &r.ne));
        }
        out
    }
}

fn row_label(row: u8) -> &'static str {
    match row {
        1 => "baseline",
        2 => "(1) + expanded lexicon",
        3 => "(2) + neural lm rescoring",
        4 => "(2) + neural lm rescoring (letter features)",
        5 => "(3) + embedding matrix augmentation",
        6 => "(4) + embedding matrix augmentation",
        7 => "(3) + word lattice boosting",
        8 => "(4) + word lattice boosting",
        9 => "(5) + word lattice boosting",
        10 => "(6) + word lattice boosting",
        _ => unreachable!(),
    }
}

/// Drops arcs whose word is outside the lexicon (epsilon arcs stay),
/// trims dead nodes, and orders arcs by source topo rank so the lattice
/// stays valid.
fn strip_to_lexicon(lat: &Lattice<f64>, words: &BTreeSet<String>) -> Result<Lattice<f64>> {
    let mut out = lat.clone();
    out.arcs.retain(|a| a.is_epsilon() || words.contains(&a.word));
    if out.arcs.is_empty() {
        return Err(Error::NoPath { utt: lat.utterance_id.clone() });
    }
    let connected = {
        // connect() needs a structurally valid lattice; reorder first so
        // the first arc leaves the start node.
        let probe = Lattice {
            utterance_id: out.utterance_id.clone(),
            nodes: out.nodes.clone(),
            arcs: out.arcs.clone(),
            start_node: lat.start_node,
            final_nodes: out.final_nodes.clone(),
        };
        let order = probe.topo_order()?;
        let idx = probe.node_index();
        let mut rank = vec![0usize; probe.nodes.len()];
        for (r, &i) in order.iter().enumerate() {
            rank[i] = r;
        }
        let mut arcs = probe.arcs;
        arcs.sort_by_key(|a| rank[idx[&a.source]]);
        Lattice { arcs, ..probe }.connect()?
    };
    connected.validate()?;
    Ok(connected)
}

struct Inputs {
    train: Vec<Vec<String>>,
    test: Vec<(String, Vec<String>)>,
    lattices: Vec<Lattice<f64>>,
    inventory: NeInventory,
    candidate_map: BTreeMap<String, Vec<String>>,
    expanded_words: BTreeSet<String>,
    baseline_words: BTreeSet<String>,
}

fn load_inputs(cfg: &PipelineConfig) -> Result<Inputs> {
    let read = |p: &PathBuf| -> Result<String> {
        std::fs::read_to_string(p).map_err(|e| {
            Error::config(format!("cannot read `{}`: {}", p.display(), e))
        })
    };
    let train: Vec<Vec<String>> = read(&cfg.train_corpus)?
        .lines()
        .map(|l| l.split_whitespace().map(str::to_string).collect::<Vec<String>>())
        .filter(|s: &Vec<String>| !s.is_empty())
        .collect();
    let test = parse_transcripts(&read(&cfg.test_ref)?)?;
    let all_lattices = parse_lattices::<f64>(&read(&cfg.lattices)?)?;
    let by_utt: BTreeMap<&str, &Lattice<f64>> =
        all_lattices.iter().map(|l| (l.utterance_id.as_str(), l)).collect();
    let lattices: Vec<Lattice<f64>> = test
        .iter()
        .map(|(u, _)| {
            by_utt
                .get(u.as_str())
                .map(|l| (*l).clone())
                .ok_or_else(|| Error::config(format!("no lattice for utterance `{}`", u)))
        })
        .collect::<Result<_>>()?;
    let ne_list: Vec<String> = read(&cfg.ne_list)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect();
    let inventory = classify_nes(&ne_list, &train, cfg.ne_threshold)?;
    let candidate_map = parse_candidate_map(&read(&cfg.candidate_map)?)?;

    let baseline_words: BTreeSet<String> = train.iter().flatten().cloned().collect();
    let baseline = Lexicon::graphemic_from_words(baseline_words.iter().map(String::as_str))?;
    let (expanded, _) = expand_lexicon(&baseline, &ne_list)?;
    let expanded_words: BTreeSet<String> = expanded.words().cloned().collect();
    Ok(Inputs { train, test, lattices, inventory, candidate_map, expanded_words, baseline_words })
}

fn score_rows(
    test: &[(String, Vec<String>)],
    hyps: Vec<Vec<String>>,
) -> Result<(WerStats<f64>, NeWerReport<f64>, Vec<(Vec<String>, Vec<String>)>)> {
    let tagged: Vec<(String, Vec<String>)> = test
        .iter()
        .zip(hyps)
        .map(|((u, _), h)| (u.clone(), h))
        .collect();
    let pairs = pair_transcripts(test, &tagged)?;
    Ok((wer(&pairs), NeWerReport { overall: None, rare: None, oov: None }, pairs))
}

/// Executes the requested rows and returns the report. Deterministic for
/// a fixed input tree and seed, independent of `jobs`.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<AblationReport> {
    let scales = ScaleConfig::new(cfg.acoustic_scale, cfg.lm_scale)?;
    let interp = InterpolationConfig {
        kn_weight: cfg.kn_weight,
        scales,
        nbest_size: cfg.nbest,
        state_cap: cfg.state_cap,
    };
    interp.validate()?;
    let inputs = load_inputs(cfg)?;
    let rows: Vec<u8> = if cfg.rows.is_empty() { vec![1] } else { cfg.rows.clone() };
    let ne_set = inputs.inventory.all();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs.max(1))
        .build()
        .map_err(|e| Error::config(format!("cannot build thread pool: {}", e)))?;

    // Models, trained once and shared by every row that needs them.
    let needs_plain = rows.iter().any(|r| [3, 5, 7, 9].contains(r));
    let needs_letter = rows.iter().any(|r| [4, 6, 8, 10].contains(r));
    let needs_aug_plain = rows.iter().any(|r| [5, 9].contains(r));
    let needs_aug_letter = rows.iter().any(|r| [6, 10].contains(r));

    let kn: Option<NGramLm<f64>> = if needs_plain || needs_letter {
        let mut vocab = inputs.expanded_words.clone();
        vocab.insert(UNK.to_string());
        vocab.insert(BOS.to_string());
        vocab.insert(EOS.to_string());
        Some(train_kn(&inputs.train, cfg.kn_order, &vocab)?)
    } else {
        None
    };
    let nlm_vocab: Vec<String> = inputs.expanded_words.iter().cloned().collect();
    let train_cfg = TrainConfig {
        dim: cfg.embedding_dim,
        epochs: cfg.epochs,
        learning_rate: cfg.learning_rate,
        seed: cfg.nlm_seed,
        letter_features: None,
    };
    let nlm_plain: Option<NeuralLm<f64>> = if needs_plain {
        Some(train(&inputs.train, nlm_vocab.clone(), &train_cfg)?.0)
    } else {
        None
    };
    let nlm_letter: Option<NeuralLm<f64>> = if needs_letter {
        let lf = LetterFeatureConfig {
            n_min: cfg.letter_n_min,
            n_max: cfg.letter_n_max,
            slots: cfg.letter_slots,
        };
        let tc = TrainConfig { letter_features: Some(lf), ..train_cfg.clone() };
        Some(train(&inputs.train, nlm_vocab.clone(), &tc)?.0)
    } else {
        None
    };
    let plans = if needs_aug_plain || needs_aug_letter {
        Some(build_plans(
            &inputs.inventory,
            &inputs.candidate_map,
            cfg.candidates_k,
            cfg.theta_rare,
            cfg.theta_oov,
        )?)
    } else {
        None
    };
    let augmented = |base: &Option<NeuralLm<f64>>| -> Result<Option<NeuralLm<f64>>> {
        match (base, &plans) {
            (Some(lm), Some(plans)) => {
                let mut lm = lm.clone();
                ensure_targets_in_vocab(&mut lm, plans)?;
                Ok(Some(augment_embeddings(&lm, plans)?))
            }
            _ => Ok(None),
        }
    };
    let nlm_plain_aug = if needs_aug_plain { augmented(&nlm_plain)? } else { None };
    let nlm_letter_aug = if needs_aug_letter { augmented(&nlm_letter)? } else { None };

    // Rescored lattice sets, keyed by the row that defines them.
    let mut rescored: BTreeMap<u8, Vec<Lattice<f64>>> = BTreeMap::new();
    let model_for_row = |row: u8| -> Option<&NeuralLm<f64>> {
        match row {
            3 => nlm_plain.as_ref(),
            4 => nlm_letter.as_ref(),
            5 => nlm_plain_aug.as_ref(),
            6 => nlm_letter_aug.as_ref(),
            _ => None,
        }
    };
    for base_row in [3u8, 4, 5, 6] {
        let needed = rows.contains(&base_row) || rows.contains(&(base_row + 4));
        if !needed {
            continue;
        }
        let nlm = model_for_row(base_row).expect("model trained for requested row");
        let kn = kn.as_ref().expect("kn trained for requested row");
        let lats: Vec<Lattice<f64>> = pool.install(|| {
            inputs
                .lattices
                .par_iter()
                .map(|lat| rescore_lattice(lat, kn, nlm, &interp))
                .collect::<Result<_>>()
        })?;
        rescored.insert(base_row, lats);
    }

    let decode = |lats: &[Lattice<f64>], boosted: bool| -> Result<Vec<Vec<String>>> {
        pool.install(|| {
            lats.par_iter()
                .map(|lat| {
                    let hyp = if boosted {
                        let index = build_index(std::slice::from_ref(lat), &scales)?;
                        let bi = boost_index(&index, &ne_set, cfg.boost_bonus)?;
                        let regen = regenerate_lattice(lat, &bi, &scales)?;
                        best_path(&regen, &scales)?
                    } else {
                        best_path(lat, &scales)?
                    };
                    Ok(hyp.words)
                })
                .collect::<Result<_>>()
        })
    };

    let mut report = AblationReport { rows: Vec::new() };
    for &row in &rows {
        let hyps: Vec<Vec<String>> = match row {
            1 => {
                let stripped: Vec<Lattice<f64>> = inputs
                    .lattices
                    .iter()
                    .map(|l| strip_to_lexicon(l, &inputs.baseline_words))
                    .collect::<Result<_>>()?;
                decode(&stripped, false)?
            }
            2 => decode(&inputs.lattices, false)?,
            3 | 4 | 5 | 6 => decode(&rescored[&row], false)?,
            7 | 8 | 9 | 10 => decode(&rescored[&(row - 4)], true)?,
            other => return Err(Error::config(format!("row {} out of range", other))),
        };
        let (wer_stats, _, pairs) = score_rows(&inputs.test, hyps)?;
        let ne = ne_wer(&pairs, &inputs.inventory);
        report.rows.push(RowResult { row, label: row_label(row).to_string(), wer: wer_stats, ne });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{write_fixture_tree, SynthConfig};

    #[test]
    fn config_parsing_defaults_and_errors() {
        let base = Path::new("/tmp");
        let text = "train_corpus=a\ntest_ref=b\nlattices=c\nne_list=d\ncandidate_map=e\nrows=1,3\n";
        let cfg = parse_config(text, base).unwrap();
        assert_eq!(cfg.rows, vec![1, 3]);
        assert_eq!(cfg.kn_weight, 0.6);
        assert_eq!(cfg.theta_rare, 0.09);
        assert_eq!(cfg.theta_oov, 0.01);
        assert_eq!(cfg.candidates_k, 5);
        assert_eq!(cfg.ne_threshold, 10);
        assert_eq!(cfg.kn_order, 4);
        assert_eq!(cfg.train_corpus, base.join("a"));

        assert!(parse_config("bogus_key=1\n", base).is_err());
        assert!(parse_config("train_corpus=a\n", base).is_err());
        assert!(parse_config("train_corpus=a\ntest_ref=b\nlattices=c\nne_list=d\ncandidate_map=e\nrows=11\n", base).is_err());
    }

    #[test]
    fn baseline_rows_run_on_a_small_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let synth_cfg = SynthConfig {
            seed: 3,
            frequent_words: 8,
            rare_nes: 3,
            oov_nes: 3,
            train_sentences: 40,
            test_filler_sentences: 6,
            ne_threshold: 4,
            confusion_depth: 2,
            jitter_sigma: 1.0,
            competitor_edge_override: None,
        };
        write_fixture_tree(dir.path(), &synth_cfg).unwrap();
        let text = std::fs::read_to_string(dir.path().join("pipeline.cfg")).unwrap();
        let mut cfg = parse_config(&text, dir.path()).unwrap();
        cfg.rows = vec![1, 2];
        cfg.ne_threshold = synth_cfg.ne_threshold;
        let report = run_pipeline(&cfg).unwrap();
        assert_eq!(report.rows.len(), 2);
        // The baseline lexicon cannot produce OOV entities at all.
        let r1 = report.row(1).unwrap();
        assert_eq!(r1.ne.oov.unwrap().percent, 100.0);
        let r2 = report.row(2).unwrap();
        assert!(r2.ne.oov.unwrap().percent < 100.0);
        let rendered = report.render();
        assert!(rendered.contains("[row 1] baseline"));
        assert!(rendered.contains("NE-WER_oov=100.00"));
    }
}
