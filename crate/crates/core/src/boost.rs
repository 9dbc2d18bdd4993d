//! Keyword-search style lattice machinery: an inverted index of word
//! hits with times and posteriors, posterior boosting for a set of named
//! entities, and regeneration of a lattice whose 1-best reflects the
//! boost.
//!
//! The boost is an additive natural-log bonus on indexed entries. When a
//! lattice is regenerated, each boosted entry's arc gets the bonus
//! divided by the LM scale added to its lm_score, so the combined weight
//! of the arc moves by exactly the bonus while the lattice stays a
//! two-score graph.

use std::collections::BTreeMap;

use crate::lattice::{best_path, forward_backward, Hypothesis, Lattice, ScaleConfig};
use crate::{fmt_score, Error, Result, Scalar};

/// Default boost, chosen to flip the bundled fixtures without drowning
/// acoustic evidence: ln 4.
pub fn default_bonus<S: Scalar>() -> S {
    S::from_f64_c(4.0).ln()
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry<S> {
    pub word: String,
    pub utterance_id: String,
    pub start: u32,
    pub end: u32,
    pub log_posterior: S,
    pub arc_index: usize,
    /// Accumulated boost already folded into `log_posterior`; in-memory
    /// bookkeeping for lattice regeneration, not serialized.
    pub boost: S,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct InvertedIndex<S> {
    /// word -> entries sorted by (utterance, start, arc index).
    pub entries: BTreeMap<String, Vec<IndexEntry<S>>>,
}

impl<S: Scalar> InvertedIndex<S> {
    pub fn new() -> Self {
        InvertedIndex { entries: BTreeMap::new() }
    }

    pub fn len(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries for one query word, already sorted; empty if absent.
    pub fn search(&self, query: &str) -> &[IndexEntry<S>] {
        self.entries.get(query).map(|v| v.as_slice()).unwrap_or(&[])
    }

    /// `word utt start end log_posterior arc_idx`, tab-separated, sorted.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        for (word, entries) in &self.entries {
            for e in entries {
                out.push_str(&format!(
                    "{}\t{}\t{}\t{}\t{}\t{}\n",
                    word,
                    e.utterance_id,
                    e.start,
                    e.end,
                    fmt_score(e.log_posterior),
                    e.arc_index
                ));
            }
        }
        out
    }

    pub fn parse(text: &str) -> Result<InvertedIndex<S>> {
        let mut index = InvertedIndex::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 6 {
                return Err(Error::parse(i + 1, "expected 6 tab-separated fields"));
            }
            let entry = IndexEntry {
                word: f[0].to_string(),
                utterance_id: f[1].to_string(),
                start: f[2].parse().map_err(|_| Error::parse(i + 1, "bad start frame"))?,
                end: f[3].parse().map_err(|_| Error::parse(i + 1, "bad end frame"))?,
                log_posterior: S::from_f64_c(
                    f[4].parse::<f64>().map_err(|_| Error::parse(i + 1, "bad log posterior"))?,
                ),
                arc_index: f[5].parse().map_err(|_| Error::parse(i + 1, "bad arc index"))?,
                boost: S::zero(),
            };
            index.entries.entry(entry.word.clone()).or_default().push(entry);
        }
        for v in index.entries.values_mut() {
            v.sort_by(|a, b| {
                (&a.utterance_id, a.start, a.arc_index).cmp(&(&b.utterance_id, b.start, b.arc_index))
            });
        }
        Ok(index)
    }
}

/// Builds the inverted list of all words: one entry per non-epsilon arc
/// with the arc posterior from forward-backward. Requires connected
/// lattices so every posterior is positive.
pub fn build_index<S: Scalar>(
    lattices: &[Lattice<S>],
    scales: &ScaleConfig<S>,
) -> Result<InvertedIndex<S>> {
    let mut index = InvertedIndex::new();
    for lat in lattices {
        let (post, _) = forward_backward(lat, scales)?;
        let times: BTreeMap<usize, u32> = lat.nodes.iter().map(|n| (n.id, n.time)).collect();
        for (ai, arc) in lat.arcs.iter().enumerate() {
            if arc.is_epsilon() {
                continue;
            }
            let p = post.get(ai);
            if p <= S::zero() {
                return Err(Error::config(format!(
                    "lattice `{}` is not connected: arc {} has zero posterior (run connect first)",
                    lat.utterance_id, ai
                )));
            }
            index.entries.entry(arc.word.clone()).or_default().push(IndexEntry {
                word: arc.word.clone(),
                utterance_id: lat.utterance_id.clone(),
                start: times[&arc.source],
                end: times[&arc.target],
                log_posterior: p.ln(),
                arc_index: ai,
                boost: S::zero(),
            });
        }
    }
    for v in index.entries.values_mut() {
        v.sort_by(|a, b| {
            (&a.utterance_id, a.start, a.arc_index).cmp(&(&b.utterance_id, b.start, b.arc_index))
        });
    }
    Ok(index)
}

/// Adds the bonus to the log posterior of every entry whose word is in
/// the entity set; all other entries stay bit-identical. Negative
/// bonuses are rejected (de-boosting is out of scope).
pub fn boost_index<S: Scalar>(
    index: &InvertedIndex<S>,
    ne_set: &std::collections::BTreeSet<String>,
    bonus: S,
) -> Result<InvertedIndex<S>> {
    if !bonus.is_finite() || bonus < S::zero() {
        return Err(Error::NegativeBonus);
    }
    let mut out = index.clone();
    for (word, entries) in out.entries.iter_mut() {
        if !ne_set.contains(word) {
            continue;
        }
        for e in entries.iter_mut() {
            e.log_posterior += bonus;
            e.boost += bonus;
        }
    }
    Ok(out)
}

/// Copies the lattice, adding boost/lm_scale to the lm_score of every
/// arc referenced by a boosted entry, so each combined arc weight moves
/// by exactly the log-domain bonus. Structure is unchanged.
pub fn regenerate_lattice<S: Scalar>(
    lat: &Lattice<S>,
    boosted: &InvertedIndex<S>,
    scales: &ScaleConfig<S>,
) -> Result<Lattice<S>> {
    scales.validate()?;
    let mut out = lat.clone();
    for entries in boosted.entries.values() {
        for e in entries {
            if e.utterance_id != lat.utterance_id || e.boost == S::zero() {
                continue;
            }
            let arc = out.arcs.get_mut(e.arc_index).ok_or(Error::DanglingArcRef {
                utt: lat.utterance_id.clone(),
                arc: e.arc_index,
            })?;
            if arc.word != e.word {
                return Err(Error::DanglingArcRef { utt: lat.utterance_id.clone(), arc: e.arc_index });
            }
            arc.lm_score += e.boost / scales.lm_scale;
        }
    }
    Ok(out)
}

/// index -> boost -> regenerate -> best path, as one call.
pub fn boosted_best_path<S: Scalar>(
    lat: &Lattice<S>,
    ne_set: &std::collections::BTreeSet<String>,
    bonus: S,
    scales: &ScaleConfig<S>,
) -> Result<Hypothesis<S>> {
    let index = build_index(std::slice::from_ref(lat), scales)?;
    let boosted = boost_index(&index, ne_set, bonus)?;
    let regenerated = regenerate_lattice(lat, &boosted, scales)?;
    best_path(&regenerated, scales)
}
