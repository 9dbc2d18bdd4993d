//! Embedding-matrix augmentation: rewrite the embedding row of an
//! underrepresented named entity from the rows of frequent words.
//!
//! The target row becomes `theta * e_target + mean(candidate rows)`,
//! with candidate rows read from the model *before* any plan is applied
//! (snapshot semantics), so plan order cannot matter. Everything outside
//! the targeted rows stays bit-identical. Because the embedding matrix
//! is tied, one row edit moves both the input representation and the
//! output logit of the target.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::eval::NeInventory;
use crate::neural_lm::NeuralLm;
use crate::{Error, Result, Scalar};

pub const DEFAULT_CANDIDATES: usize = 5;
pub const DEFAULT_THETA_RARE: f64 = 0.09;
pub const DEFAULT_THETA_OOV: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentationPlan<S> {
    pub target: String,
    pub candidates: Vec<String>,
    pub theta: S,
}

/// One plan per underrepresented entity: exactly `k` candidates from the
/// mapping file, theta chosen by rare/OOV class. An entity with fewer
/// than `k` mapped candidates is an error, not a silent truncation.
pub fn build_plans<S: Scalar>(
    inventory: &NeInventory,
    candidate_map: &BTreeMap<String, Vec<String>>,
    k: usize,
    theta_rare: S,
    theta_oov: S,
) -> Result<Vec<AugmentationPlan<S>>> {
    if k == 0 {
        return Err(Error::config("candidate count k must be at least 1"));
    }
    if theta_rare < S::zero() || theta_oov < S::zero() {
        return Err(Error::config("theta must be non-negative"));
    }
    let mut plans = Vec::new();
    for (set, theta) in [(&inventory.rare, theta_rare), (&inventory.oov, theta_oov)] {
        for ne in set {
            let cands = candidate_map
                .get(ne)
                .ok_or_else(|| Error::TooFewCandidates { ne: ne.clone(), have: 0, need: k })?;
            if cands.len() < k {
                return Err(Error::TooFewCandidates { ne: ne.clone(), have: cands.len(), need: k });
            }
            let candidates: Vec<String> = cands[..k].to_vec();
            if candidates.iter().any(|c| c == ne) {
                return Err(Error::config(format!("candidate list for `{}` contains the target itself", ne)));
            }
            plans.push(AugmentationPlan { target: ne.clone(), candidates, theta });
        }
    }
    plans.sort_by(|a, b| a.target.cmp(&b.target));
    Ok(plans)
}

/// Applies every plan to a copy of the model. Candidate rows are read
/// from the input model, untargeted parameters stay bit-identical, and a
/// duplicate target across plans is an error since it would make the
/// result order-dependent.
pub fn augment_embeddings<S: Scalar>(
    lm: &NeuralLm<S>,
    plans: &[AugmentationPlan<S>],
) -> Result<NeuralLm<S>> {
    let mut seen: BTreeSet<&str> = BTreeSet::new();
    for p in plans {
        if !seen.insert(&p.target) {
            return Err(Error::DuplicateTarget { ne: p.target.clone() });
        }
        if !lm.contains(&p.target) {
            return Err(Error::TargetOutsideVocab { ne: p.target.clone() });
        }
        if p.candidates.is_empty() {
            return Err(Error::TooFewCandidates { ne: p.target.clone(), have: 0, need: 1 });
        }
        for c in &p.candidates {
            if !lm.contains(c) {
                return Err(Error::CandidateOutsideVocab { ne: p.target.clone(), candidate: c.clone() });
            }
            if c == &p.target {
                return Err(Error::config(format!("candidate list for `{}` contains the target itself", p.target)));
            }
        }
    }
    let mut out = lm.clone();
    for p in plans {
        let tid = lm.word_id(&p.target);
        let inv = S::one() / S::from_usize_c(p.candidates.len());
        let mut new_row: Vec<S> = lm.embedding.row(tid).iter().map(|&v| p.theta * v).collect();
        for c in &p.candidates {
            let crow = lm.embedding.row(lm.word_id(c));
            for (n, &v) in new_row.iter_mut().zip(crow) {
                *n += inv * v;
            }
        }
        out.embedding.row_mut(tid).copy_from_slice(&new_row);
    }
    Ok(out)
}

/// Appends any plan target missing from the vocabulary with a zero
/// embedding row, the documented init for OOV targets.
pub fn ensure_targets_in_vocab<S: Scalar>(
    lm: &mut NeuralLm<S>,
    plans: &[AugmentationPlan<S>],
) -> Result<()> {
    for p in plans {
        lm.ensure_word(&p.target)?;
    }
    Ok(())
}

/// Ranks `category_words` by train-corpus frequency (ties lexicographic)
/// and returns the same top-k list for every entity. This is the shipped
/// helper behind the candidate mapping file.
pub fn rank_candidates(
    entities: &[String],
    category_words: &[String],
    train_corpus: &[Vec<String>],
    k: usize,
) -> Result<BTreeMap<String, Vec<String>>> {
    if category_words.len() < k {
        return Err(Error::config(format!(
            "category has {} words, need at least k={}",
            category_words.len(),
            k
        )));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for tok in train_corpus.iter().flatten() {
        *counts.entry(tok.as_str()).or_insert(0) += 1;
    }
    let mut ranked: Vec<&String> = category_words.iter().collect();
    ranked.sort_by(|a, b| {
        let ca = counts.get(a.as_str()).copied().unwrap_or(0);
        let cb = counts.get(b.as_str()).copied().unwrap_or(0);
        cb.cmp(&ca).then_with(|| a.cmp(b))
    });
    let top: Vec<String> = ranked[..k].iter().map(|w| (*w).clone()).collect();
    Ok(entities.iter().map(|ne| (ne.clone(), top.clone())).collect())
}

/// `ne<TAB>cand1 cand2 ...` per line.
pub fn serialize_candidate_map(map: &BTreeMap<String, Vec<String>>) -> String {
    let mut out = String::new();
    for (ne, cands) in map {
        out.push_str(&format!("{}\t{}\n", ne, cands.join(" ")));
    }
    out
}

pub fn parse_candidate_map(text: &str) -> Result<BTreeMap<String, Vec<String>>> {
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (ne, rest) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(i + 1, "expected `ne<TAB>candidates`"))?;
        let cands: Vec<String> = rest.split_whitespace().map(str::to_string).collect();
        if cands.is_empty() {
            return Err(Error::parse(i + 1, format!("no candidates for `{}`", ne)));
        }
        map.insert(ne.to_string(), cands);
    }
    Ok(map)
}

/// Plan dump echoing theta and candidates per entity.
pub fn serialize_plans<S: Scalar>(plans: &[AugmentationPlan<S>]) -> String {
    let mut out = String::new();
    for p in plans {
        out.push_str(&format!("{}\t{}\t{}\n", p.target, p.theta, p.candidates.join(" ")));
    }
    out
}
