//! LM rescoring: replace lattice LM scores with a linear interpolation
//! of the Kneser-Ney model and the neural LM.
//!
//! Interpolation is in the probability domain per word event:
//! ln(lambda * p_kn + (1 - lambda) * p_nlm), including the end-of-sentence
//! event. N-best rescoring rescores hypothesis word sequences; lattice
//! rescoring expands states by word history, which makes the recurrent
//! scores exact per unique prefix, at the price of a state cap.

use std::collections::{BTreeSet, HashMap};

use crate::lattice::{n_best, Arc, Hypothesis, Lattice, Node, ScaleConfig};
use crate::neural_lm::NeuralLm;
use crate::ngram::{NGramLm, BOS, EOS};
use crate::{Error, Result, Scalar};

pub const DEFAULT_KN_WEIGHT: f64 = 0.6;
pub const DEFAULT_NBEST: usize = 100;
pub const DEFAULT_STATE_CAP: usize = 50_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterpolationConfig<S> {
    /// Weight on the Kneser-Ney probability, in [0, 1].
    pub kn_weight: S,
    pub scales: ScaleConfig<S>,
    pub nbest_size: usize,
    /// Cap on expanded states during exact lattice rescoring.
    pub state_cap: usize,
}

impl<S: Scalar> Default for InterpolationConfig<S> {
    fn default() -> Self {
        InterpolationConfig {
            kn_weight: S::from_f64_c(DEFAULT_KN_WEIGHT),
            scales: ScaleConfig::default(),
            nbest_size: DEFAULT_NBEST,
            state_cap: DEFAULT_STATE_CAP,
        }
    }
}

impl<S: Scalar> InterpolationConfig<S> {
    pub fn validate(&self) -> Result<()> {
        if self.kn_weight < S::zero() || self.kn_weight > S::one() || !self.kn_weight.is_finite() {
            return Err(Error::config("kn_weight must lie in [0, 1]"));
        }
        self.scales.validate()
    }
}

/// ln(lambda * p_kn + (1 - lambda) * p_nlm) for one word event.
fn interpolate<S: Scalar>(lambda: S, ln_p_kn: S, ln_p_nlm: S) -> S {
    if lambda == S::one() {
        return ln_p_kn;
    }
    if lambda == S::zero() {
        return ln_p_nlm;
    }
    (lambda * ln_p_kn.exp() + (S::one() - lambda) * ln_p_nlm.exp()).ln()
}

/// Per-sentence interpolated natural-log probability including `</s>`.
pub fn interpolated_sentence_logprob<S: Scalar>(
    kn: &NGramLm<S>,
    nlm: &NeuralLm<S>,
    sentence: &[String],
    cfg: &InterpolationConfig<S>,
) -> Result<S> {
    cfg.validate()?;
    let lambda = cfg.kn_weight;
    let neural_needed = lambda < S::one();
    let mut hist: Vec<String> = vec![BOS.to_string()];
    let mut hidden = if neural_needed { nlm.start_hidden() } else { Vec::new() };
    let mut total = S::zero();
    for w in sentence.iter().map(String::as_str).chain(std::iter::once(EOS)) {
        let ln_kn = if lambda > S::zero() {
            kn.logprob(w, &hist) * S::ln_10()
        } else {
            S::zero()
        };
        let ln_nlm = if neural_needed {
            nlm.log_distribution(&hidden)[nlm.word_id(w)]
        } else {
            S::zero()
        };
        total += interpolate(lambda, ln_kn, ln_nlm);
        if w != EOS {
            hist.push(w.to_string());
            if neural_needed {
                hidden = nlm.advance(&hidden, w);
            }
        }
    }
    Ok(total)
}

/// Takes the n-best list, replaces each hypothesis's LM portion with the
/// interpolated sentence score, and re-sorts. The sort is stable, so
/// exact ties keep their original rank.
pub fn rescore_nbest<S: Scalar>(
    lat: &Lattice<S>,
    kn: &NGramLm<S>,
    nlm: &NeuralLm<S>,
    cfg: &InterpolationConfig<S>,
) -> Result<Vec<Hypothesis<S>>> {
    cfg.validate()?;
    let mut hyps = n_best(lat, &cfg.scales, cfg.nbest_size)?;
    for h in hyps.iter_mut() {
        let lm = interpolated_sentence_logprob(kn, nlm, &h.words, cfg)?;
        h.lm_total = lm;
        h.total_score = cfg.scales.acoustic_scale * h.acoustic_total + cfg.scales.lm_scale * lm;
    }
    hyps.sort_by(|a, b| b.total_score.partial_cmp(&a.total_score).unwrap());
    Ok(hyps)
}

/// Interned word-history state during lattice expansion.
struct ExpState<S> {
    /// Truncated history key (for the n-gram side and state identity).
    history: Vec<String>,
    /// Recurrent hidden state; empty when the neural side is unused.
    hidden: Vec<S>,
    /// Lazily computed natural-log distribution from `hidden`.
    log_dist: Option<Vec<S>>,
}

/// Exact lattice rescoring by history expansion.
///
/// Each state is split by its word history, truncated to the n-gram
/// context when the neural weight is zero (memoryless case preserves the
/// arc count), full prefix otherwise. Every arc's lm_score becomes the
/// interpolated log-probability of its word given the expanded history;
/// epsilon arcs get zero. The end-of-sentence term is folded into arcs
/// entering sink final nodes, or carried on epsilon arcs to a fresh
/// super-final node when a final node has outgoing arcs.
pub fn rescore_lattice<S: Scalar>(
    lat: &Lattice<S>,
    kn: &NGramLm<S>,
    nlm: &NeuralLm<S>,
    cfg: &InterpolationConfig<S>,
) -> Result<Lattice<S>> {
    cfg.validate()?;
    let lambda = cfg.kn_weight;
    let neural_needed = lambda < S::one();
    let hist_len = if neural_needed { usize::MAX } else { kn.order.saturating_sub(1) };

    let idx = lat.node_index();
    let order = lat.topo_order()?;
    let mut out_arcs: Vec<Vec<usize>> = vec![Vec::new(); lat.nodes.len()];
    for (ai, a) in lat.arcs.iter().enumerate() {
        out_arcs[idx[&a.source]].push(ai);
    }
    let finals_are_sinks = lat
        .final_nodes
        .iter()
        .all(|f| out_arcs[idx[f]].is_empty() && *f != lat.start_node);

    let truncate = |mut h: Vec<String>| -> Vec<String> {
        if h.len() > hist_len {
            let cut = h.len() - hist_len;
            h.drain(..cut);
        }
        h
    };

    // Expanded state bookkeeping. A state is (original node, history id);
    // histories carry the <s> padding so the n-gram side sees the same
    // context as sentence scoring.
    let root_history = truncate(vec![BOS.to_string()]);
    let mut histories: Vec<ExpState<S>> = vec![ExpState {
        history: root_history.clone(),
        hidden: if neural_needed { nlm.start_hidden() } else { Vec::new() },
        log_dist: None,
    }];
    let mut hist_ids: HashMap<Vec<String>, usize> = HashMap::new();
    hist_ids.insert(root_history, 0);

    let mut state_ids: HashMap<(usize, usize), usize> = HashMap::new();
    let mut states: Vec<(usize, usize)> = Vec::new(); // new node id -> (node idx, hist id)
    let mut states_at_node: Vec<Vec<usize>> = vec![Vec::new(); lat.nodes.len()];
    let start_idx = idx[&lat.start_node];
    state_ids.insert((start_idx, 0), 0);
    states.push((start_idx, 0));
    states_at_node[start_idx].push(0);

    let mut new_arcs: Vec<Arc<S>> = Vec::new();
    let mut new_finals: BTreeSet<usize> = BTreeSet::new();
    // (expanded final state, history id) pairs for </s> handling.
    let mut final_states: Vec<(usize, usize)> = Vec::new();

    // Natural-log interpolated probability of `word` after history `hid`.
    // Computes and caches the neural distribution per history on demand.
    let word_lp = |histories: &mut Vec<ExpState<S>>, hid: usize, word: &str| -> S {
        let ln_kn = if lambda > S::zero() {
            kn.logprob(word, &histories[hid].history) * S::ln_10()
        } else {
            S::zero()
        };
        let ln_nlm = if neural_needed {
            if histories[hid].log_dist.is_none() {
                let dist = nlm.log_distribution(&histories[hid].hidden);
                histories[hid].log_dist = Some(dist);
            }
            histories[hid].log_dist.as_ref().unwrap()[nlm.word_id(word)]
        } else {
            S::zero()
        };
        interpolate(lambda, ln_kn, ln_nlm)
    };

    for &node in &order {
        // states_at_node grows only for successors of already-processed
        // nodes, so iteration by index is stable here.
        let mut si = 0;
        while si < states_at_node[node].len() {
            let state = states_at_node[node][si];
            si += 1;
            let (_, hid) = states[state];
            if lat.final_nodes.contains(&lat.nodes[node].id) {
                final_states.push((state, hid));
            }
            for &ai in &out_arcs[node] {
                let arc = &lat.arcs[ai];
                let tgt = idx[&arc.target];
                let (new_lm, next_hid) = if arc.is_epsilon() {
                    (S::zero(), hid)
                } else {
                    let lp = word_lp(&mut histories, hid, &arc.word);
                    let mut h = histories[hid].history.clone();
                    h.push(arc.word.clone());
                    let h = truncate(h);
                    let next = match hist_ids.get(&h) {
                        Some(&i) => i,
                        None => {
                            let hidden = if neural_needed {
                                nlm.advance(&histories[hid].hidden, &arc.word)
                            } else {
                                Vec::new()
                            };
                            histories.push(ExpState { history: h.clone(), hidden, log_dist: None });
                            hist_ids.insert(h, histories.len() - 1);
                            histories.len() - 1
                        }
                    };
                    (lp, next)
                };
                let tgt_state = match state_ids.get(&(tgt, next_hid)) {
                    Some(&s) => s,
                    None => {
                        let s = states.len();
                        if s >= cfg.state_cap {
                            return Err(Error::StateCapExceeded { cap: cfg.state_cap });
                        }
                        state_ids.insert((tgt, next_hid), s);
                        states.push((tgt, next_hid));
                        states_at_node[tgt].push(s);
                        s
                    }
                };
                new_arcs.push(Arc {
                    source: state,
                    target: tgt_state,
                    word: arc.word.clone(),
                    acoustic_score: arc.acoustic_score,
                    lm_score: new_lm,
                });
            }
        }
    }

    if final_states.is_empty() {
        return Err(Error::NoPath { utt: lat.utterance_id.clone() });
    }

    if finals_are_sinks {
        // Fold ln p(</s> | history) into every arc entering a final state;
        // sink finals have no outgoing arcs, so only complete paths see it.
        let eos_lp: HashMap<usize, S> = final_states
            .iter()
            .map(|&(state, hid)| (state, word_lp(&mut histories, hid, EOS)))
            .collect();
        for arc in new_arcs.iter_mut() {
            if let Some(&lp) = eos_lp.get(&arc.target) {
                arc.lm_score += lp;
            }
        }
        for &(state, _) in &final_states {
            new_finals.insert(state);
        }
    } else {
        let super_final = states.len();
        for &(state, hid) in &final_states {
            let lp = word_lp(&mut histories, hid, EOS);
            new_arcs.push(Arc {
                source: state,
                target: super_final,
                word: crate::lattice::EPSILON.to_string(),
                acoustic_score: S::zero(),
                lm_score: lp,
            });
        }
        states.push((usize::MAX, usize::MAX));
        new_finals.insert(super_final);
    }

    // Node times carry over from the original node of each state.
    let max_time = lat.nodes.iter().map(|n| n.time).max().unwrap_or(0);
    let nodes: Vec<Node> = states
        .iter()
        .enumerate()
        .map(|(i, &(orig, _))| Node {
            id: i,
            time: if orig == usize::MAX { max_time } else { lat.nodes[orig].time },
        })
        .collect();
    let out = Lattice {
        utterance_id: lat.utterance_id.clone(),
        nodes,
        arcs: new_arcs,
        start_node: 0,
        final_nodes: new_finals,
    };
    out.validate()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{best_path, enumerate_paths, parse_lattice};
    use crate::neural_lm::{train, TrainConfig};
    use crate::ngram::{train_kn, vocab_from_corpus};

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    fn toy_models() -> (NGramLm<f64>, NeuralLm<f64>) {
        let corpus: Vec<Vec<String>> = vec![
            toks("go to bedok"),
            toks("go to bedok"),
            toks("walk to yishun"),
            toks("go home"),
        ];
        let vocab = vocab_from_corpus(&corpus);
        let kn = train_kn(&corpus, 2, &vocab).unwrap();
        let cfg = TrainConfig { dim: 8, epochs: 4, learning_rate: 0.1, seed: 3, letter_features: None };
        let (nlm, _) = train(&corpus, vocab.iter().cloned().collect(), &cfg).unwrap();
        (kn, nlm)
    }

    fn cfg_with_lambda(lambda: f64) -> InterpolationConfig<f64> {
        InterpolationConfig {
            kn_weight: lambda,
            scales: ScaleConfig::new(1.0, 1.0).unwrap(),
            ..InterpolationConfig::default()
        }
    }

    #[test]
    fn lambda_one_equals_kn() {
        let (kn, nlm) = toy_models();
        let sent = toks("go to bedok");
        let got = interpolated_sentence_logprob(&kn, &nlm, &sent, &cfg_with_lambda(1.0)).unwrap();
        let expect = kn.sentence_log10prob(&sent) * std::f64::consts::LN_10;
        assert!((got - expect).abs() < 1e-12);
    }

    #[test]
    fn lambda_zero_equals_neural() {
        let (kn, nlm) = toy_models();
        let sent = toks("go to bedok");
        let got = interpolated_sentence_logprob(&kn, &nlm, &sent, &cfg_with_lambda(0.0)).unwrap();
        assert!((got - nlm.sentence_logprob(&sent)).abs() < 1e-12);
    }

    #[test]
    fn interpolation_matches_per_word_recomputation() {
        let (kn, nlm) = toy_models();
        let sent = toks("go to bedok");
        let lambda = 0.6;
        let got = interpolated_sentence_logprob(&kn, &nlm, &sent, &cfg_with_lambda(lambda)).unwrap();
        // Recompute term by term.
        let mut expect = 0.0;
        let mut hist: Vec<String> = vec![BOS.to_string()];
        let mut h = nlm.start_hidden();
        for w in sent.iter().map(String::as_str).chain(std::iter::once(EOS)) {
            let pk = 10f64.powf(kn.logprob(w, &hist));
            let pn = nlm.log_distribution(&h)[nlm.word_id(w)].exp();
            expect += (lambda * pk + (1.0 - lambda) * pn).ln();
            if w != EOS {
                hist.push(w.to_string());
                h = nlm.advance(&h, w);
            }
        }
        assert!((got - expect).abs() < 1e-12);
        let kn_only = interpolated_sentence_logprob(&kn, &nlm, &sent, &cfg_with_lambda(1.0)).unwrap();
        let nlm_only = interpolated_sentence_logprob(&kn, &nlm, &sent, &cfg_with_lambda(0.0)).unwrap();
        let lo = kn_only.min(nlm_only);
        let hi = kn_only.max(nlm_only);
        assert!(got >= lo - 1e-9 && got <= hi + 1e-9);
    }

    fn two_path_lattice() -> Lattice<f64> {
        // Acoustically "walk to yishun" wins; the LM prefers "go to
        // bedok", which appears twice in the toy corpus.
        let text = "UTT u\n\
                    0 1 walk -0.8 -2.0\n1 2 to -1.0 -2.0\n2 3 yishun -1.0 -2.0\n\
                    0 4 go -1.4 -2.0\n4 5 to -1.0 -2.0\n5 3 bedok -1.0 -2.0\n\
                    3\n";
        parse_lattice(text).unwrap()
    }

    #[test]
    fn nbest_rescoring_swaps_ranks() {
        let (kn, nlm) = toy_models();
        let lat = two_path_lattice();
        let cfg = cfg_with_lambda(0.6);
        let before = n_best(&lat, &cfg.scales, 2).unwrap();
        assert_eq!(before[0].words, toks("walk to yishun"));
        let after = rescore_nbest(&lat, &kn, &nlm, &cfg).unwrap();
        assert_eq!(after.len(), 2);
        assert_eq!(after[0].words, toks("go to bedok"));
        // Acoustic parts are untouched by rescoring.
        for h in &after {
            let orig = before.iter().find(|o| o.words == h.words).unwrap();
            assert_eq!(h.acoustic_total, orig.acoustic_total);
        }
    }

    #[test]
    fn nbest_size_one_is_a_single_row() {
        let (kn, nlm) = toy_models();
        let lat = two_path_lattice();
        let cfg = InterpolationConfig { nbest_size: 1, ..cfg_with_lambda(0.6) };
        let out = rescore_nbest(&lat, &kn, &nlm, &cfg).unwrap();
        assert_eq!(out.len(), 1);
    }

    #[test]
    fn lambda_one_nbest_matches_kn_only_ranking() {
        let (kn, nlm) = toy_models();
        let lat = two_path_lattice();
        let cfg = cfg_with_lambda(1.0);
        let out = rescore_nbest(&lat, &kn, &nlm, &cfg).unwrap();
        for h in &out {
            let kn_lp = kn.sentence_log10prob(&h.words) * std::f64::consts::LN_10;
            let expect = cfg.scales.acoustic_scale * h.acoustic_total + cfg.scales.lm_scale * kn_lp;
            assert!((h.total_score - expect).abs() < 1e-9);
        }
    }

    #[test]
    fn single_path_lattice_total_matches_sentence_logprob() {
        let (kn, nlm) = toy_models();
        let lat: Lattice<f64> =
            parse_lattice("UTT u\n0 1 go -1.0 -0.5\n1 2 to -1.0 -0.5\n2 3 bedok -1.0 -0.5\n3\n")
                .unwrap();
        let cfg = cfg_with_lambda(0.6);
        let out = rescore_lattice(&lat, &kn, &nlm, &cfg).unwrap();
        let hyp = best_path(&out, &cfg.scales).unwrap();
        let lm = interpolated_sentence_logprob(&kn, &nlm, &toks("go to bedok"), &cfg).unwrap();
        let expect = cfg.scales.acoustic_scale * (-3.0) + cfg.scales.lm_scale * lm;
        assert!((hyp.total_score - expect).abs() < 1e-9);
    }

    #[test]
    fn memoryless_rescoring_preserves_arc_count() {
        let corpus = vec![toks("go to bedok"), toks("walk to yishun")];
        let vocab = vocab_from_corpus(&corpus);
        let kn1 = train_kn::<f64>(&corpus, 1, &vocab).unwrap();
        let (_, nlm) = (0, toy_models().1);
        let lat = two_path_lattice();
        let cfg = cfg_with_lambda(1.0);
        let out = rescore_lattice(&lat, &kn1, &nlm, &cfg).unwrap();
        assert_eq!(out.arcs.len(), lat.arcs.len());
        assert_eq!(out.nodes.len(), lat.nodes.len());
    }

    #[test]
    fn diamond_rescoring_matches_enumeration_oracle() {
        let (kn, nlm) = toy_models();
        let lat = two_path_lattice();
        for lambda in [0.0, 0.3, 0.6, 1.0] {
            let cfg = cfg_with_lambda(lambda);
            let out = rescore_lattice(&lat, &kn, &nlm, &cfg).unwrap();
            let got = best_path(&out, &cfg.scales).unwrap();
            // Oracle: per-path acoustic total plus interpolated LM score.
            let paths = enumerate_paths(&lat, &cfg.scales, 100).unwrap();
            let mut scored: Vec<(Vec<String>, f64)> = paths
                .iter()
                .map(|(h, _)| {
                    let lm =
                        interpolated_sentence_logprob(&kn, &nlm, &h.words, &cfg).unwrap();
                    let s = cfg.scales.acoustic_scale * h.acoustic_total
                        + cfg.scales.lm_scale * lm;
                    (h.words.clone(), s)
                })
                .collect();
            scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            assert_eq!(got.words, scored[0].0, "lambda {}", lambda);
            assert!((got.total_score - scored[0].1).abs() < 1e-9);
        }
    }

    #[test]
    fn epsilon_arcs_keep_history_and_score_zero() {
        let (kn, nlm) = toy_models();
        let text = "UTT u\n0 1 go -1.0 -0.5\n1 2 <eps> -0.2 -0.1\n2 3 home -1.0 -0.5\n3\n";
        let lat: Lattice<f64> = parse_lattice(text).unwrap();
        let cfg = cfg_with_lambda(0.6);
        let out = rescore_lattice(&lat, &kn, &nlm, &cfg).unwrap();
        let eps = out.arcs.iter().find(|a| a.is_epsilon()).unwrap();
        assert_eq!(eps.lm_score, 0.0);
        assert_eq!(eps.acoustic_score, -0.2);
        let hyp = best_path(&out, &cfg.scales).unwrap();
        let lm = interpolated_sentence_logprob(&kn, &nlm, &toks("go home"), &cfg).unwrap();
        let expect = cfg.scales.acoustic_scale * (-2.2) + cfg.scales.lm_scale * lm;
        assert!((hyp.total_score - expect).abs() < 1e-9);
    }

    #[test]
    fn state_cap_is_enforced() {
        let (kn, nlm) = toy_models();
        let lat = two_path_lattice();
        let cfg = InterpolationConfig { state_cap: 3, ..cfg_with_lambda(0.6) };
        assert!(matches!(
            rescore_lattice(&lat, &kn, &nlm, &cfg),
            Err(Error::StateCapExceeded { cap: 3 })
        ));
    }

    #[test]
    fn nbest_covering_all_paths_equals_exhaustive_rescoring() {
        let (kn, nlm) = toy_models();
        let lat = two_path_lattice();
        let cfg = InterpolationConfig { nbest_size: 64, ..cfg_with_lambda(0.6) };
        let nb = rescore_nbest(&lat, &kn, &nlm, &cfg).unwrap();
        let out = rescore_lattice(&lat, &kn, &nlm, &cfg).unwrap();
        let lattice_best = best_path(&out, &cfg.scales).unwrap();
        assert_eq!(nb[0].words, lattice_best.words);
        assert!((nb[0].total_score - lattice_best.total_score).abs() < 1e-9);
    }

    #[test]
    fn bad_lambda_is_rejected() {
        let cfg = cfg_with_lambda(1.5);
        assert!(cfg.validate().is_err());
    }
}
