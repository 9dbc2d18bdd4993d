//! WER and NE-WER scoring.
//!
//! NE-WER is per-occurrence: each reference occurrence of an
//! underrepresented entity counts as one error when its alignment op is
//! a substitution or deletion. Insertions are charged to overall WER
//! only. The alignment tie-break (match > sub > del > ins at equal
//! cost) is fixed so both metrics are deterministic.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::{Error, Result, Scalar};

/// Underrepresented-entity inventory: rare (train count in
/// [1, threshold)), OOV (count 0); everything at or above the threshold
/// is excluded and reported separately.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeInventory {
    pub rare: BTreeSet<String>,
    pub oov: BTreeSet<String>,
    pub excluded: BTreeSet<String>,
    pub threshold: usize,
    pub counts: BTreeMap<String, usize>,
}

impl NeInventory {
    pub fn contains(&self, token: &str) -> bool {
        self.rare.contains(token) || self.oov.contains(token)
    }

    pub fn all(&self) -> BTreeSet<String> {
        self.rare.union(&self.oov).cloned().collect()
    }
}

pub fn classify_nes(
    ne_list: &[String],
    train_corpus: &[Vec<String>],
    threshold: usize,
) -> Result<NeInventory> {
    if threshold == 0 {
        return Err(Error::config("frequency threshold must be at least 1"));
    }
    let mut freq: HashMap<&str, usize> = HashMap::new();
    for tok in train_corpus.iter().flatten() {
        *freq.entry(tok.as_str()).or_insert(0) += 1;
    }
    let mut inv = NeInventory {
        rare: BTreeSet::new(),
        oov: BTreeSet::new(),
        excluded: BTreeSet::new(),
        threshold,
        counts: BTreeMap::new(),
    };
    for ne in ne_list {
        let c = freq.get(ne.as_str()).copied().unwrap_or(0);
        inv.counts.insert(ne.clone(), c);
        if c == 0 {
            inv.oov.insert(ne.clone());
        } else if c < threshold {
            inv.rare.insert(ne.clone());
        } else {
            inv.excluded.insert(ne.clone());
        }
    }
    Ok(inv)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EditOp {
    Match,
    Substitute,
    Insert,
    Delete,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignedPair {
    pub op: EditOp,
    pub reference: Option<String>,
    pub hypothesis: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alignment {
    pub ops: Vec<AlignedPair>,
}

impl Alignment {
    pub fn edit_distance(&self) -> usize {
        self.ops.iter().filter(|p| p.op != EditOp::Match).count()
    }

    pub fn reference_tokens(&self) -> Vec<String> {
        self.ops.iter().filter_map(|p| p.reference.clone()).collect()
    }

    pub fn hypothesis_tokens(&self) -> Vec<String> {
        self.ops.iter().filter_map(|p| p.hypothesis.clone()).collect()
    }
}

/// Minimum-edit-distance alignment with unit costs; ties prefer
/// match > sub > del > ins.
pub fn align(reference: &[String], hypothesis: &[String]) -> Alignment {
    let r = reference.len();
    let h = hypothesis.len();
    let mut dp = vec![vec![0usize; h + 1]; r + 1];
    for i in 0..=r {
        dp[i][0] = i;
    }
    for j in 0..=h {
        dp[0][j] = j;
    }
    for i in 1..=r {
        for j in 1..=h {
            let sub_cost = if reference[i - 1] == hypothesis[j - 1] { 0 } else { 1 };
            dp[i][j] = (dp[i - 1][j - 1] + sub_cost)
                .min(dp[i - 1][j] + 1)
                .min(dp[i][j - 1] + 1);
        }
    }
    let mut ops: Vec<AlignedPair> = Vec::with_capacity(r.max(h));
    let (mut i, mut j) = (r, h);
    while i > 0 || j > 0 {
        let diag_ok = i > 0 && j > 0 && {
            let cost = if reference[i - 1] == hypothesis[j - 1] { 0 } else { 1 };
            dp[i - 1][j - 1] + cost == dp[i][j]
        };
        let is_match = diag_ok && reference[i - 1] == hypothesis[j - 1];
        let del_ok = i > 0 && dp[i - 1][j] + 1 == dp[i][j];
        let ins_ok = j > 0 && dp[i][j - 1] + 1 == dp[i][j];
        if is_match {
            ops.push(AlignedPair {
                op: EditOp::Match,
                reference: Some(reference[i - 1].clone()),
                hypothesis: Some(hypothesis[j - 1].clone()),
            });
            i -= 1;
            j -= 1;
        } else if diag_ok {
            ops.push(AlignedPair {
                op: EditOp::Substitute,
                reference: Some(reference[i - 1].clone()),
                hypothesis: Some(hypothesis[j - 1].clone()),
            });
            i -= 1;
            j -= 1;
        } else if del_ok {
            ops.push(AlignedPair {
                op: EditOp::Delete,
                reference: Some(reference[i - 1].clone()),
                hypothesis: None,
            });
            i -= 1;
        } else {
            debug_assert!(ins_ok);
            ops.push(AlignedPair {
                op: EditOp::Insert,
                reference: None,
                hypothesis: Some(hypothesis[j - 1].clone()),
            });
            j -= 1;
        }
    }
    ops.reverse();
    Alignment { ops }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WerStats<S> {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub matches: usize,
    pub reference_tokens: usize,
    pub percent: S,
}

/// Corpus WER: 100 * (S + D + I) / N over all pairs.
pub fn wer<S: Scalar>(pairs: &[(Vec<String>, Vec<String>)]) -> WerStats<S> {
    let mut stats = WerStats {
        substitutions: 0,
        deletions: 0,
        insertions: 0,
        matches: 0,
        reference_tokens: 0,
        percent: S::zero(),
    };
    for (reference, hypothesis) in pairs {
        let a = align(reference, hypothesis);
        for p in &a.ops {
            match p.op {
                EditOp::Match => stats.matches += 1,
                EditOp::Substitute => stats.substitutions += 1,
                EditOp::Delete => stats.deletions += 1,
                EditOp::Insert => stats.insertions += 1,
            }
        }
        stats.reference_tokens += reference.len();
    }
    let errors = stats.substitutions + stats.deletions + stats.insertions;
    stats.percent = if stats.reference_tokens == 0 {
        if errors == 0 {
            S::zero()
        } else {
            S::from_f64_c(100.0)
        }
    } else {
        S::from_f64_c(100.0) * S::from_usize_c(errors) / S::from_usize_c(stats.reference_tokens)
    };
    stats
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeWerStats<S> {
    pub errors: usize,
    pub total: usize,
    pub percent: S,
}

/// NE-WER split report; a split with no reference occurrences is absent
/// rather than zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeWerReport<S> {
    pub overall: Option<NeWerStats<S>>,
    pub rare: Option<NeWerStats<S>>,
    pub oov: Option<NeWerStats<S>>,
}

fn split_stats<S: Scalar>(errors: usize, total: usize) -> Option<NeWerStats<S>> {
    if total == 0 {
        None
    } else {
        Some(NeWerStats {
            errors,
            total,
            percent: S::from_f64_c(100.0) * S::from_usize_c(errors) / S::from_usize_c(total),
        })
    }
}

/// Per-occurrence NE error rate 100 * E_NE / N_NE, overall and split by
/// rare/OOV membership. An occurrence errs iff its alignment op is a
/// substitution or deletion.
pub fn ne_wer<S: Scalar>(
    pairs: &[(Vec<String>, Vec<String>)],
    inventory: &NeInventory,
) -> NeWerReport<S> {
    let mut rare = (0usize, 0usize);
    let mut oov = (0usize, 0usize);
    for (reference, hypothesis) in pairs {
        let a = align(reference, hypothesis);
        for p in &a.ops {
            let Some(ref_tok) = &p.reference else { continue };
            let bucket = if inventory.rare.contains(ref_tok) {
                &mut rare
            } else if inventory.oov.contains(ref_tok) {
                &mut oov
            } else {
                continue;
            };
            bucket.1 += 1;
            if matches!(p.op, EditOp::Substitute | EditOp::Delete) {
                bucket.0 += 1;
            }
        }
    }
    NeWerReport {
        overall: split_stats(rare.0 + oov.0, rare.1 + oov.1),
        rare: split_stats(rare.0, rare.1),
        oov: split_stats(oov.0, oov.1),
    }
}

/// Machine-readable key=value block for one scored system.
pub fn format_report<S: Scalar>(wer: &WerStats<S>, ne: &NeWerReport<S>) -> String {
    let pct = |o: &Option<NeWerStats<S>>| match o {
        Some(s) => format!("{:.2}", s.percent),
        None => "absent".to_string(),
    };
    let mut out = String::new();
    out.push_str(&format!("WER={:.2}\n", wer.percent));
    out.push_str(&format!("NE-WER={}\n", pct(&ne.overall)));
    out.push_str(&format!("NE-WER_rare={}\n", pct(&ne.rare)));
    out.push_str(&format!("NE-WER_oov={}\n", pct(&ne.oov)));
    let (e, n) = match &ne.overall {
        Some(s) => (s.errors, s.total),
        None => (0, 0),
    };
    out.push_str(&format!("E_NE={}\n", e));
    out.push_str(&format!("N_NE={}\n", n));
    out
}

/// Reads `utt_id<TAB>token token ...` transcript files.
pub fn parse_transcripts(text: &str) -> Result<Vec<(String, Vec<String>)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let (utt, rest) = match line.split_once('\t') {
            Some(pair) => pair,
            // An utterance with an empty hypothesis is a bare id.
            None => (line, ""),
        };
        let toks: Vec<String> = rest.split_whitespace().map(str::to_string).collect();
        if utt.is_empty() {
            return Err(Error::parse(i + 1, "missing utterance id"));
        }
        out.push((utt.to_string(), toks));
    }
    Ok(out)
}

pub fn serialize_transcripts(trans: &[(String, Vec<String>)]) -> String {
    let mut out = String::new();
    for (utt, toks) in trans {
        out.push_str(&format!("{}\t{}\n", utt, toks.join(" ")));
    }
    out
}

/// Pairs reference and hypothesis transcripts by utterance id, in
/// reference order; a missing hypothesis is an error.
pub fn pair_transcripts(
    reference: &[(String, Vec<String>)],
    hypothesis: &[(String, Vec<String>)],
) -> Result<Vec<(Vec<String>, Vec<String>)>> {
    let hyp: HashMap<&str, &Vec<String>> =
        hypothesis.iter().map(|(u, t)| (u.as_str(), t)).collect();
    reference
        .iter()
        .map(|(u, r)| {
            let h = hyp
                .get(u.as_str())
                .ok_or_else(|| Error::config(format!("no hypothesis for utterance `{}`", u)))?;
            Ok((r.clone(), (*h).clone()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn classification_splits_by_count() {
        let train: Vec<Vec<String>> = vec![toks("bedok bedok pasir pasir pasir")];
        let mut train10 = train.clone();
        for _ in 0..10 {
            train10.push(toks("yishun"));
        }
        let nes = vec!["bedok".to_string(), "tampines".to_string(), "yishun".to_string()];
        let inv = classify_nes(&nes, &train10, 10).unwrap();
        assert!(inv.rare.contains("bedok"));
        assert!(inv.oov.contains("tampines"));
        // Exactly at the threshold: excluded, not rare.
        assert!(inv.excluded.contains("yishun"));
        assert_eq!(inv.counts["tampines"], 0);
    }

    #[test]
    fn classification_at_scale() {
        // 195 entities with count 0, 198 with counts in [1,10).
        let mut train: Vec<Vec<String>> = Vec::new();
        let mut nes: Vec<String> = Vec::new();
        for i in 0..195 {
            nes.push(format!("oov{}", i));
        }
        for i in 0..198 {
            let ne = format!("rare{}", i);
            for _ in 0..(1 + i % 9) {
                train.push(vec![ne.clone()]);
            }
            nes.push(ne);
        }
        let inv = classify_nes(&nes, &train, 10).unwrap();
        assert_eq!(inv.oov.len(), 195);
        assert_eq!(inv.rare.len(), 198);
        assert_eq!(inv.oov.len() + inv.rare.len(), 393);
    }

    #[test]
    fn zero_threshold_is_rejected() {
        assert!(matches!(classify_nes(&[], &[], 0), Err(Error::InvalidConfig { .. })));
    }

    #[test]
    fn identical_sequences_align_as_matches() {
        let a = align(&toks("a b c"), &toks("a b c"));
        assert!(a.ops.iter().all(|p| p.op == EditOp::Match));
        assert_eq!(a.reference_tokens(), toks("a b c"));
        assert_eq!(a.hypothesis_tokens(), toks("a b c"));
    }

    #[test]
    fn forced_deletion_alignment() {
        let a = align(&toks("a b c"), &toks("a c"));
        let ops: Vec<EditOp> = a.ops.iter().map(|p| p.op).collect();
        assert_eq!(ops, [EditOp::Match, EditOp::Delete, EditOp::Match]);
        assert_eq!(a.edit_distance(), 1);
    }

    #[test]
    fn alignment_sides_reproduce_inputs() {
        let r = toks("go to bedok now");
        let h = toks("go bedok now now");
        let a = align(&r, &h);
        assert_eq!(a.reference_tokens(), r);
        assert_eq!(a.hypothesis_tokens(), h);
    }

    #[test]
    fn alignment_distance_matches_dp_oracle() {
        // Brute-force DP distance (no backtrace) as the oracle.
        fn lev(a: &[String], b: &[String]) -> usize {
            let mut prev: Vec<usize> = (0..=b.len()).collect();
            for i in 1..=a.len() {
                let mut cur = vec![i];
                for j in 1..=b.len() {
                    let c = if a[i - 1] == b[j - 1] { 0 } else { 1 };
                    cur.push((prev[j - 1] + c).min(prev[j] + 1).min(cur[j - 1] + 1));
                }
                prev = cur;
            }
            prev[b.len()]
        }
        let alphabet = ["a", "b", "c"];
        let mut state = 0x2545_F491_4F6C_DD1Du64;
        let mut rnd = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            state as usize
        };
        for _ in 0..200 {
            let r: Vec<String> = (0..rnd() % 8).map(|_| alphabet[rnd() % 3].to_string()).collect();
            let h: Vec<String> = (0..rnd() % 8).map(|_| alphabet[rnd() % 3].to_string()).collect();
            assert_eq!(align(&r, &h).edit_distance(), lev(&r, &h));
        }
    }

    #[test]
    fn wer_examples() {
        let zero = wer::<f64>(&[(toks("a b"), toks("a b"))]);
        assert_eq!(zero.percent, 0.0);
        let half = wer::<f64>(&[(toks("a b"), toks("a c"))]);
        assert_eq!(half.percent, 50.0);
        let all = wer::<f64>(&[(toks("a b c d"), vec![])]);
        assert_eq!(all.percent, 100.0);
        assert_eq!(all.deletions, 4);
    }

    #[test]
    fn wer_is_consistent_with_alignment_ops() {
        let pairs = vec![(toks("a b c"), toks("a x c d"))];
        let stats = wer::<f64>(&pairs);
        let a = align(&pairs[0].0, &pairs[0].1);
        let errs = a.ops.iter().filter(|p| p.op != EditOp::Match).count();
        let expect = 100.0 * errs as f64 / 3.0;
        assert!((stats.percent - expect).abs() < 1e-12);
    }

    fn toy_inventory() -> NeInventory {
        let train = vec![toks("bedok")];
        classify_nes(&["bedok".to_string(), "tampines".to_string()], &train, 10).unwrap()
    }

    #[test]
    fn ne_wer_zero_when_hypothesis_matches() {
        let inv = toy_inventory();
        let pairs = vec![(toks("go to bedok"), toks("go to bedok"))];
        let rep = ne_wer::<f64>(&pairs, &inv);
        assert_eq!(rep.overall.unwrap().percent, 0.0);
        assert_eq!(rep.rare.unwrap().percent, 0.0);
        assert!(rep.oov.is_none());
    }

    #[test]
    fn ne_wer_counts_per_occurrence() {
        let inv = toy_inventory();
        let pairs = vec![
            (toks("go to bedok"), toks("go to bedok")),
            (toks("bedok road"), toks("bed road")),
        ];
        let rep = ne_wer::<f64>(&pairs, &inv);
        let overall = rep.overall.unwrap();
        assert_eq!(overall.errors, 1);
        assert_eq!(overall.total, 2);
        assert_eq!(overall.percent, 50.0);
    }

    #[test]
    fn insertions_do_not_count_as_ne_errors() {
        let inv = toy_inventory();
        let pairs = vec![(toks("go bedok"), toks("go uh bedok"))];
        let rep = ne_wer::<f64>(&pairs, &inv);
        assert_eq!(rep.overall.unwrap().errors, 0);
        let w = wer::<f64>(&pairs);
        assert_eq!(w.insertions, 1);
    }

    #[test]
    fn overall_is_weighted_mean_of_splits() {
        let inv = toy_inventory();
        let pairs = vec![
            (toks("bedok bedok bedok"), toks("bedok x y")),
            (toks("tampines"), toks("tampines")),
        ];
        let rep = ne_wer::<f64>(&pairs, &inv);
        let (o, r, v) = (rep.overall.unwrap(), rep.rare.unwrap(), rep.oov.unwrap());
        assert_eq!(o.errors, r.errors + v.errors);
        assert_eq!(o.total, r.total + v.total);
        let weighted =
            (r.percent * r.total as f64 + v.percent * v.total as f64) / (r.total + v.total) as f64;
        assert!((o.percent - weighted).abs() < 1e-12);
    }

    #[test]
    fn absent_split_is_reported_as_absent() {
        let inv = toy_inventory();
        let pairs = vec![(toks("go home"), toks("go home"))];
        let rep = ne_wer::<f64>(&pairs, &inv);
        assert!(rep.overall.is_none());
        let text = format_report(&wer::<f64>(&pairs), &rep);
        assert!(text.contains("NE-WER=absent"));
        assert!(text.contains("N_NE=0"));
    }

    #[test]
    fn transcript_round_trip_and_pairing() {
        let text = "u1\tgo to bedok\nu2\t\n";
        let trans = parse_transcripts(text).unwrap();
        assert_eq!(trans.len(), 2);
        assert_eq!(trans[1].1.len(), 0);
        let refs = vec![("u1".to_string(), toks("go to bedok"))];
        let pairs = pair_transcripts(&refs, &trans).unwrap();
        assert_eq!(pairs[0].0, toks("go to bedok"));
        let missing = pair_transcripts(&[("zz".to_string(), vec![])], &trans);
        assert!(missing.is_err());
    }
}
