//! Interpolated Kneser-Ney backoff n-gram language model with ARPA
//! serialization.
//!
//! Training uses a single absolute discount per order, D = n1/(n1+2*n2)
//! from the count-of-counts at that order. Lower orders are estimated
//! from continuation counts (distinct left extensions), except n-grams
//! starting with `<s>`, which keep raw counts since nothing can precede
//! them. Stored probabilities are the fully interpolated values, so the
//! backoff weight of a history is exactly its leftover mass
//! D * types / total and the model normalizes per history by
//! construction.
//!
//! Probabilities and backoff weights are stored in log10 to match ARPA;
//! rescoring converts to natural log at the boundary.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::{Error, Result, Scalar};

pub const UNK: &str = "<unk>";
pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";

/// log10 probability assigned to `<s>`, which is never predicted.
const BOS_LOG10: f64 = -99.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ProbEntry<S> {
    pub log10_prob: S,
    /// Present when the n-gram serves as a history with continuations.
    pub log10_backoff: Option<S>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NGramLm<S> {
    pub order: usize,
    pub vocab: BTreeSet<String>,
    /// tables[k-1]: (k)-gram -> entry, keyed by the token sequence.
    pub tables: Vec<BTreeMap<Vec<String>, ProbEntry<S>>>,
}

/// Corpus vocabulary plus the `<s>`, `</s>`, `<unk>` specials.
pub fn vocab_from_corpus(corpus: &[Vec<String>]) -> BTreeSet<String> {
    let mut vocab: BTreeSet<String> =
        corpus.iter().flatten().cloned().collect();
    vocab.insert(UNK.to_string());
    vocab.insert(BOS.to_string());
    vocab.insert(EOS.to_string());
    vocab
}

fn map_token<'a>(tok: &'a str, vocab: &BTreeSet<String>) -> &'a str {
    if vocab.contains(tok) {
        tok
    } else {
        UNK
    }
}

/// Trains an interpolated Kneser-Ney model of the given order.
///
/// Sentences are padded with `<s>`/`</s>`; tokens outside `vocab` map to
/// `<unk>`. A degenerate count-of-counts histogram (n1 = 0) falls back
/// to D = 0.5 so the backoff mass stays positive and finite.
pub fn train_kn<S: Scalar>(
    corpus: &[Vec<String>],
    order: usize,
    vocab: &BTreeSet<String>,
) -> Result<NGramLm<S>> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if !(1..=5).contains(&order) {
        return Err(Error::config(format!("order {} outside [1,5]", order)));
    }
    let mut vocab = vocab.clone();
    vocab.insert(UNK.to_string());
    vocab.insert(BOS.to_string());
    vocab.insert(EOS.to_string());

    // counts[k-1]: adjusted counts of k-grams. Top order and <s>-initial
    // prefixes are raw; everything else is a continuation (type) count.
    let mut counts: Vec<HashMap<Vec<String>, u64>> = vec![HashMap::new(); order];
    for sent in corpus {
        let mut toks: Vec<String> = Vec::with_capacity(sent.len() + 2);
        toks.push(BOS.to_string());
        toks.extend(sent.iter().map(|t| map_token(t, &vocab).to_string()));
        toks.push(EOS.to_string());
        if toks.len() >= order {
            for i in 0..=toks.len() - order {
                let gram = toks[i..i + order].to_vec();
                if gram.last().map(String::as_str) == Some(BOS) {
                    continue; // never predict <s> (order-1 case)
                }
                *counts[order - 1].entry(gram).or_insert(0) += 1;
            }
        }
        for k in 2..order {
            if toks.len() >= k {
                *counts[k - 1].entry(toks[..k].to_vec()).or_insert(0) += 1;
            }
        }
    }
    if counts[order - 1].is_empty() {
        return Err(Error::ZeroCountOrder { order });
    }
    for k in (1..order).rev() {
        let mut continuations: HashMap<Vec<String>, BTreeSet<String>> = HashMap::new();
        let higher: Vec<Vec<String>> = counts[k].keys().cloned().collect();
        for gram in higher {
            let suffix = gram[1..].to_vec();
            continuations.entry(suffix).or_default().insert(gram[0].clone());
        }
        for (gram, preds) in continuations {
            *counts[k - 1].entry(gram).or_insert(0) += preds.len() as u64;
        }
        if counts[k - 1].is_empty() {
            return Err(Error::ZeroCountOrder { order: k });
        }
    }

    let discounts: Vec<f64> = (0..order)
        .map(|k| {
            let mut n1 = 0u64;
            let mut n2 = 0u64;
            for &c in counts[k].values() {
                if c == 1 {
                    n1 += 1;
                } else if c == 2 {
                    n2 += 1;
                }
            }
            if n1 == 0 {
                eprintln!(
                    "warning: degenerate count-of-counts at order {} (n1={}, n2={}); using D=0.5",
                    k + 1,
                    n1,
                    n2
                );
                0.5
            } else {
                n1 as f64 / (n1 as f64 + 2.0 * n2 as f64)
            }
        })
        .collect();

    // Predicted vocabulary: everything except <s>.
    let n_pred = vocab.iter().filter(|w| w.as_str() != BOS).count();
    let uniform = 1.0 / n_pred as f64;

    let mut model = NGramLm {
        order,
        vocab: vocab.clone(),
        tables: vec![BTreeMap::new(); order],
    };

    // Unigrams: interpolate the (adjusted) counts with the uniform base so
    // every vocabulary word gets mass, including <unk>.
    {
        let d = discounts[0];
        let total: u64 = counts[0].values().sum();
        let types = counts[0].len() as f64;
        let a1 = total as f64;
        let gamma = d * types / a1;
        for w in vocab.iter().filter(|w| w.as_str() != BOS) {
            let c = *counts[0].get(&vec![w.clone()]).unwrap_or(&0) as f64;
            let p = (c - d).max(0.0) / a1 + gamma * uniform;
            model.tables[0].insert(
                vec![w.clone()],
                ProbEntry { log10_prob: S::from_f64_c(p.log10()), log10_backoff: None },
            );
        }
        model.tables[0].insert(
            vec![BOS.to_string()],
            ProbEntry { log10_prob: S::from_f64_c(BOS_LOG10), log10_backoff: None },
        );
    }

    // Higher orders, bottom up; the lower tables are complete before a
    // level needs them for its interpolation term.
    for k in 2..=order {
        let d = discounts[k - 1];
        let mut by_history: BTreeMap<Vec<String>, Vec<(String, u64)>> = BTreeMap::new();
        for (gram, &c) in &counts[k - 1] {
            let hist = gram[..k - 1].to_vec();
            let word = gram[k - 1].clone();
            by_history.entry(hist).or_default().push((word, c));
        }
        for (hist, mut conts) in by_history {
            conts.sort_by(|a, b| a.0.cmp(&b.0));
            let a: u64 = conts.iter().map(|(_, c)| c).sum();
            let a = a as f64;
            let types = conts.len() as f64;
            let gamma = d * types / a;
            for (word, c) in &conts {
                let lower = model.eval_log10_upto(k - 1, &hist[1..], word);
                let p = (*c as f64 - d).max(0.0) / a + gamma * lower.to_f64_c().exp10();
                let mut gram = hist.clone();
                gram.push(word.clone());
                model.tables[k - 1].insert(
                    gram,
                    ProbEntry { log10_prob: S::from_f64_c(p.log10()), log10_backoff: None },
                );
            }
            let entry = model.tables[k - 2].get_mut(&hist).unwrap_or_else(|| {
                panic!("history {:?} missing from the level below", hist)
            });
            entry.log10_backoff = Some(S::from_f64_c(gamma.log10()));
        }
    }
    Ok(model)
}

trait Exp10 {
    fn exp10(self) -> f64;
}
impl Exp10 for f64 {
    fn exp10(self) -> f64 {
        10f64.powf(self)
    }
}

impl<S: Scalar> NGramLm<S> {
    fn map<'a>(&self, tok: &'a str) -> &'a str {
        map_token(tok, &self.vocab)
    }

    /// Backoff evaluation restricted to orders below `max_order`; this is
    /// also how the lower-order interpolation term is looked up during
    /// training.
    fn eval_log10_upto(&self, max_order: usize, history: &[String], word: &str) -> S {
        let word = self.map(word);
        let start = history.len().min(max_order - 1);
        let mut hist: Vec<String> = history[history.len() - start..]
            .iter()
            .map(|t| self.map(t).to_string())
            .collect();
        let mut backoff_acc = S::zero();
        loop {
            let mut gram = hist.clone();
            gram.push(word.to_string());
            if let Some(e) = self.tables[gram.len() - 1].get(&gram) {
                return backoff_acc + e.log10_prob;
            }
            if hist.is_empty() {
                // Unreachable for vocabulary words: every one has a
                // unigram entry. Guard for robustness.
                return S::from_f64_c(-99.0);
            }
            if let Some(e) = self.tables[hist.len() - 1].get(&hist) {
                if let Some(bow) = e.log10_backoff {
                    backoff_acc += bow;
                }
            }
            hist.remove(0);
        }
    }

    /// log10 p(word | history) via standard backoff; unseen tokens map to
    /// `<unk>`, so this is total.
    pub fn logprob(&self, word: &str, history: &[String]) -> S {
        self.eval_log10_upto(self.order, history, word)
    }

    /// log10 probability of a sentence including the `</s>` event.
    pub fn sentence_log10prob(&self, sentence: &[String]) -> S {
        let mut hist: Vec<String> = vec![BOS.to_string()];
        let mut total = S::zero();
        for w in sentence.iter().map(String::as_str).chain(std::iter::once(EOS)) {
            total += self.logprob(w, &hist);
            hist.push(self.map(w).to_string());
        }
        total
    }

    /// Perplexity over a corpus; events are words plus `</s>` per sentence.
    pub fn perplexity(&self, corpus: &[Vec<String>]) -> S {
        let mut lp = S::zero();
        let mut events = 0usize;
        for sent in corpus {
            lp += self.sentence_log10prob(sent);
            events += sent.len() + 1;
        }
        let avg = lp / S::from_usize_c(events.max(1));
        S::from_f64_c(10.0).powf(-avg)
    }

    /// Serializes to the ARPA text format with 6 decimal places.
    pub fn write_arpa(&self) -> String {
        let mut out = String::from("\\data\\\n");
        for k in 1..=self.order {
            out.push_str(&format!("ngram {}={}\n", k, self.tables[k - 1].len()));
        }
        for k in 1..=self.order {
            out.push_str(&format!("\n\\{}-grams:\n", k));
            for (gram, e) in &self.tables[k - 1] {
                out.push_str(&format!("{:.6}\t{}", e.log10_prob, gram.join(" ")));
                if let Some(b) = e.log10_backoff {
                    out.push_str(&format!("\t{:.6}", b));
                }
                out.push('\n');
            }
        }
        out.push_str("\n\\end\\\n");
        out
    }
}

/// Parses an ARPA file; validates the section headers and that each
/// section's entry count matches the `\data\` declaration.
pub fn read_arpa<S: Scalar>(text: &str) -> Result<NGramLm<S>> {
    let mut lines = text.lines().enumerate().peekable();
    let mut declared: Vec<(usize, usize)> = Vec::new();

    // \data\ section
    loop {
        match lines.next() {
            Some((_, l)) if l.trim().is_empty() => continue,
            Some((_, l)) if l.trim() == "\\data\\" => break,
            Some((i, l)) => return Err(Error::parse(i + 1, format!("expected \\data\\, got `{}`", l))),
            None => return Err(Error::parse(0, "missing \\data\\ section")),
        }
    }
    loop {
        match lines.peek() {
            Some((_, l)) if l.trim().starts_with("ngram ") => {
                let (i, l) = lines.next().unwrap();
                let spec = l.trim().strip_prefix("ngram ").unwrap();
                let (k, n) = spec
                    .split_once('=')
                    .ok_or_else(|| Error::parse(i + 1, "bad ngram count line"))?;
                let k: usize = k.trim().parse().map_err(|_| Error::parse(i + 1, "bad order"))?;
                let n: usize = n.trim().parse().map_err(|_| Error::parse(i + 1, "bad count"))?;
                declared.push((k, n));
            }
            Some((_, l)) if l.trim().is_empty() => {
                lines.next();
            }
            _ => break,
        }
    }
    if declared.is_empty() {
        return Err(Error::parse(0, "\\data\\ declares no n-gram orders"));
    }
    declared.sort();
    let order = declared.last().unwrap().0;
    for (want, (k, _)) in declared.iter().enumerate() {
        if *k != want + 1 {
            return Err(Error::parse(0, "non-contiguous n-gram orders in \\data\\"));
        }
    }

    let mut tables: Vec<BTreeMap<Vec<String>, ProbEntry<S>>> = vec![BTreeMap::new(); order];
    let mut current: Option<usize> = None;
    let mut seen_end = false;
    for (i, raw) in lines {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if line == "\\end\\" {
            seen_end = true;
            continue;
        }
        if let Some(rest) = line.strip_prefix('\\') {
            let k: usize = rest
                .strip_suffix("-grams:")
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::parse(i + 1, format!("bad section header `{}`", line)))?;
            if k == 0 || k > order {
                return Err(Error::parse(i + 1, format!("section order {} not declared", k)));
            }
            current = Some(k);
            continue;
        }
        let k = current.ok_or_else(|| Error::parse(i + 1, "entry outside any n-gram section"))?;
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 2 || fields.len() > 3 {
            return Err(Error::parse(i + 1, "expected `prob<TAB>ngram[<TAB>backoff]`"));
        }
        let prob: f64 = fields[0].parse().map_err(|_| Error::parse(i + 1, "bad probability"))?;
        let gram: Vec<String> = fields[1].split_whitespace().map(str::to_string).collect();
        if gram.len() != k {
            return Err(Error::parse(i + 1, format!("{}-gram with {} tokens", k, gram.len())));
        }
        let backoff = match fields.get(2) {
            Some(b) => {
                Some(S::from_f64_c(b.parse::<f64>().map_err(|_| Error::parse(i + 1, "bad backoff"))?))
            }
            None => None,
        };
        tables[k - 1].insert(gram, ProbEntry { log10_prob: S::from_f64_c(prob), log10_backoff: backoff });
    }
    if !seen_end {
        return Err(Error::parse(0, "missing \\end\\ marker"));
    }
    for (k, n) in &declared {
        if tables[k - 1].len() != *n {
            return Err(Error::parse(
                0,
                format!("\\data\\ declares {} {}-grams but body lists {}", n, k, tables[k - 1].len()),
            ));
        }
    }
    let vocab: BTreeSet<String> = tables[0].keys().map(|g| g[0].clone()).collect();
    Ok(NGramLm { order, vocab, tables })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sents(raw: &[&str]) -> Vec<Vec<String>> {
        raw.iter().map(|s| s.split_whitespace().map(str::to_string).collect()).collect()
    }

    fn toy_model() -> NGramLm<f64> {
        let corpus = sents(&["a b", "a b", "a c"]);
        let vocab = vocab_from_corpus(&corpus);
        train_kn(&corpus, 2, &vocab).unwrap()
    }

    #[test]
    fn hand_derived_bigram_probability() {
        // Corpus: "a b" x2, "a c". Raw bigrams: (<s>,a)=3 (a,b)=2 (a,c)=1
        // (b,</s>)=2 (c,</s>)=1, so n1=2, n2=2 and D2 = 1/3. Continuation
        // unigram counts: a=1 b=1 c=1 </s>=2 with D1 = 3/5. Over the
        // 5-word predicted vocabulary {a,b,c,</s>,<unk>}:
        //   p1(b) = (1-0.6)/5 + (0.6*4/5)/5        = 0.176
        //   p(b|a) = (2-1/3)/3 + (1/3 * 2/3)*0.176 = 669/1125
        let lm = toy_model();
        let p = 10f64.powf(lm.logprob("b", &["a".to_string()]));
        assert!((p - 669.0 / 1125.0).abs() < 1e-12, "p(b|a) = {}", p);
        let p1b = 10f64.powf(lm.logprob("b", &[]));
        assert!((p1b - 0.176).abs() < 1e-12);
    }

    #[test]
    fn unigram_model_normalizes() {
        let corpus = sents(&["a a a"]);
        let vocab: BTreeSet<String> =
            ["a", UNK, BOS, EOS].iter().map(|s| s.to_string()).collect();
        let lm: NGramLm<f64> = train_kn(&corpus, 1, &vocab).unwrap();
        let sum: f64 = lm
            .vocab
            .iter()
            .filter(|w| w.as_str() != BOS)
            .map(|w| 10f64.powf(lm.logprob(w, &[])))
            .sum();
        assert!((sum - 1.0).abs() < 1e-6, "sum = {}", sum);
    }

    #[test]
    fn every_observed_history_normalizes() {
        let corpus = sents(&["a b c a", "b a c", "a b b a", "c"]);
        let vocab = vocab_from_corpus(&corpus);
        for order in 1..=4 {
            let lm: NGramLm<f64> = train_kn(&corpus, order, &vocab).unwrap();
            for k in 1..order {
                for hist in lm.tables[k - 1].keys() {
                    if hist.last().map(String::as_str) == Some(EOS) {
                        continue;
                    }
                    let sum: f64 = lm
                        .vocab
                        .iter()
                        .filter(|w| w.as_str() != BOS)
                        .map(|w| 10f64.powf(lm.logprob(w, hist)))
                        .sum();
                    assert!((sum - 1.0).abs() < 1e-6, "order {} history {:?}: {}", order, hist, sum);
                }
            }
        }
    }

    #[test]
    fn stored_entry_is_returned_verbatim() {
        let lm = toy_model();
        let stored = lm.tables[1].get(&vec!["a".to_string(), "b".to_string()]).unwrap().log10_prob;
        assert_eq!(lm.logprob("b", &["a".to_string()]), stored);
    }

    #[test]
    fn unseen_word_backs_off_to_finite_value() {
        let lm = toy_model();
        let lp = lm.logprob("zzz", &["a".to_string(), "b".to_string()]);
        assert!(lp.is_finite());
        assert!(lp < 0.0);
    }

    #[test]
    fn training_sentence_beats_shuffled_version() {
        let lm = toy_model();
        let orig: Vec<String> = vec!["a".into(), "b".into()];
        let shuf: Vec<String> = vec!["b".into(), "a".into()];
        assert!(lm.sentence_log10prob(&orig) >= lm.sentence_log10prob(&shuf));
    }

    #[test]
    fn rejects_bad_inputs() {
        let corpus = sents(&["a b"]);
        let vocab = vocab_from_corpus(&corpus);
        assert!(matches!(
            train_kn::<f64>(&[], 2, &vocab),
            Err(Error::EmptyCorpus)
        ));
        assert!(matches!(
            train_kn::<f64>(&corpus, 0, &vocab),
            Err(Error::InvalidConfig { .. })
        ));
        // All sentences shorter than the order: no top-order n-grams.
        let tiny = sents(&[""]);
        assert!(matches!(
            train_kn::<f64>(&tiny, 3, &vocab),
            Err(Error::ZeroCountOrder { .. })
        ));
    }

    #[test]
    fn arpa_round_trip() {
        let lm = toy_model();
        let text = lm.write_arpa();
        let back: NGramLm<f64> = read_arpa(&text).unwrap();
        assert_eq!(back.write_arpa(), text);
        assert_eq!(back.order, lm.order);
        for k in 0..lm.order {
            assert_eq!(back.tables[k].len(), lm.tables[k].len());
            for (gram, e) in &lm.tables[k] {
                let b = &back.tables[k][gram];
                assert!((b.log10_prob - e.log10_prob).abs() < 1e-6);
                match (e.log10_backoff, b.log10_backoff) {
                    (Some(x), Some(y)) => assert!((x - y).abs() < 1e-6),
                    (None, None) => {}
                    other => panic!("backoff mismatch for {:?}: {:?}", gram, other),
                }
            }
        }
    }

    #[test]
    fn arpa_count_mismatch_is_rejected() {
        let text = "\\data\\\nngram 1=2\n\n\\1-grams:\n-0.301030\ta\n\n\\end\\\n";
        assert!(matches!(read_arpa::<f64>(text), Err(Error::Parse { .. })));
    }

    #[test]
    fn minimal_arpa_parses() {
        let text = "\\data\\\nngram 1=1\n\n\\1-grams:\n-0.000000\ta\n\n\\end\\\n";
        let lm: NGramLm<f64> = read_arpa(text).unwrap();
        assert_eq!(lm.order, 1);
        assert_eq!(lm.tables[0].len(), 1);
    }
}
