//! Word-level recurrent language model with a tied input/output
//! embedding matrix and optional hashed letter n-gram features.
//!
//! The cell is a single tanh recurrence: small enough that every
//! gradient is exact and checkable against central finite differences,
//! which the test suite does for all parameter blocks. The same matrix
//! `E` provides input lookup and output logits, so editing a row changes
//! both sides at once; letter features add into the word embedding so
//! the row stays the single place a word's representation lives.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::ngram::{BOS, EOS, UNK};
use crate::{fmt_score, Error, Result, Scalar};

/// Minimal row-major matrix; everything here is desk scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<S> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<S>,
}

impl<S: Scalar> Matrix<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![S::zero(); rows * cols] }
    }

    pub fn row(&self, r: usize) -> &[S] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [S] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// M * v
    pub fn matvec(&self, v: &[S]) -> Vec<S> {
        (0..self.rows)
            .map(|r| self.row(r).iter().zip(v).map(|(&a, &b)| a * b).sum())
            .collect()
    }

    /// M^T * v
    pub fn matvec_t(&self, v: &[S]) -> Vec<S> {
        let mut out = vec![S::zero(); self.cols];
        for r in 0..self.rows {
            let row = self.row(r);
            let s = v[r];
            for (o, &a) in out.iter_mut().zip(row) {
                *o += s * a;
            }
        }
        out
    }

    /// M += scale * u v^T
    pub fn add_outer(&mut self, u: &[S], v: &[S], scale: S) {
        for (r, &ur) in u.iter().enumerate() {
            let row = self.row_mut(r);
            for (c, &vc) in v.iter().enumerate() {
                row[c] += scale * ur * vc;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LetterFeatureConfig {
    pub n_min: usize,
    pub n_max: usize,
    pub slots: usize,
}

impl Default for LetterFeatureConfig {
    fn default() -> Self {
        LetterFeatureConfig { n_min: 2, n_max: 5, slots: 10_000 }
    }
}

/// Sparse hashed character n-gram counts for one word.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LetterFeatures {
    pub counts: BTreeMap<usize, u32>,
}

impl LetterFeatures {
    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }
}

/// FNV-1a, fixed here so hashed feature slots are stable across builds.
fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x1_0000_0000_01b3);
    }
    h
}

/// Hashed character n-grams of `^word$` with lengths in [n_min, n_max].
pub fn letter_ngram_features(
    word: &str,
    n_min: usize,
    n_max: usize,
    slots: usize,
) -> Result<LetterFeatures> {
    if word.is_empty() {
        return Err(Error::EmptyWord);
    }
    if n_min == 0 || n_min > n_max {
        return Err(Error::config(format!("bad letter n-gram range [{}, {}]", n_min, n_max)));
    }
    if slots == 0 {
        return Err(Error::config("letter feature slot count must be at least 1"));
    }
    let padded: Vec<char> = std::iter::once('^')
        .chain(word.chars())
        .chain(std::iter::once('$'))
        .collect();
    let mut counts: BTreeMap<usize, u32> = BTreeMap::new();
    for n in n_min..=n_max.min(padded.len()) {
        for start in 0..=padded.len() - n {
            let gram: String = padded[start..start + n].iter().collect();
            let slot = (fnv1a64(gram.as_bytes()) % slots as u64) as usize;
            *counts.entry(slot).or_insert(0) += 1;
        }
    }
    Ok(LetterFeatures { counts })
}

fn is_special(word: &str) -> bool {
    word == BOS || word == EOS || word == UNK
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeuralLm<S> {
    pub vocab: Vec<String>,
    word_ids: HashMap<String, usize>,
    /// Tied input/output embedding matrix, |V| x d.
    pub embedding: Matrix<S>,
    /// Letter feature matrix, slots x d; present iff features enabled.
    pub letter_matrix: Option<Matrix<S>>,
    pub w_input: Matrix<S>,
    pub w_hidden: Matrix<S>,
    pub b_hidden: Vec<S>,
    pub b_output: Vec<S>,
    pub dim: usize,
    pub seed: u64,
    pub feature_config: Option<LetterFeatureConfig>,
    /// Cached hashed features per vocab word; None for specials.
    features: Vec<Option<LetterFeatures>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig<S> {
    pub dim: usize,
    pub epochs: usize,
    pub learning_rate: S,
    pub seed: u64,
    pub letter_features: Option<LetterFeatureConfig>,
}

impl<S: Scalar> Default for TrainConfig<S> {
    fn default() -> Self {
        TrainConfig {
            dim: 32,
            epochs: 10,
            learning_rate: S::from_f64_c(0.1),
            seed: 1,
            letter_features: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport<S> {
    /// Training-set perplexity after each epoch.
    pub epoch_perplexity: Vec<S>,
}

/// Analytic gradients for every parameter block, same shapes as the model.
#[derive(Debug, Clone)]
pub struct Gradients<S> {
    pub embedding: Matrix<S>,
    pub letter_matrix: Option<Matrix<S>>,
    pub w_input: Matrix<S>,
    pub w_hidden: Matrix<S>,
    pub b_hidden: Vec<S>,
    pub b_output: Vec<S>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport<S> {
    /// (block name, max relative error) per parameter block.
    pub blocks: Vec<(String, S)>,
    pub max_rel_error: S,
    pub passed: bool,
}

impl<S: Scalar> NeuralLm<S> {
    /// Fresh model with seeded uniform init in +-1/sqrt(d); biases zero.
    pub fn new(vocab: Vec<String>, cfg: &TrainConfig<S>) -> Result<Self> {
        if cfg.dim == 0 {
            return Err(Error::config("embedding dimension must be positive"));
        }
        let mut vocab = vocab;
        for special in [UNK, BOS, EOS] {
            if !vocab.iter().any(|w| w == special) {
                vocab.push(special.to_string());
            }
        }
        let d = cfg.dim;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let r = 1.0 / (d as f64).sqrt();
        let mut fill = |m: &mut Matrix<S>| {
            for v in m.data.iter_mut() {
                *v = S::from_f64_c(rng.gen_range(-r..r));
            }
        };
        let mut embedding = Matrix::zeros(vocab.len(), d);
        fill(&mut embedding);
        let mut w_input = Matrix::zeros(d, d);
        fill(&mut w_input);
        let mut w_hidden = Matrix::zeros(d, d);
        fill(&mut w_hidden);
        let letter_matrix = match cfg.letter_features {
            Some(fc) => {
                let mut m = Matrix::zeros(fc.slots, d);
                fill(&mut m);
                Some(m)
            }
            None => None,
        };
        let word_ids = vocab.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        let features = compute_feature_cache(&vocab, cfg.letter_features)?;
        Ok(NeuralLm {
            b_output: vec![S::zero(); vocab.len()],
            b_hidden: vec![S::zero(); d],
            vocab,
            word_ids,
            embedding,
            letter_matrix,
            w_input,
            w_hidden,
            dim: d,
            seed: cfg.seed,
            feature_config: cfg.letter_features,
            features,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn word_id(&self, word: &str) -> usize {
        match self.word_ids.get(word) {
            Some(&id) => id,
            None => self.word_ids[UNK],
        }
    }

    pub fn contains(&self, word: &str) -> bool {
        self.word_ids.contains_key(word)
    }

    /// Appends a word with a zero embedding row and zero output bias.
    /// Returns its id; existing words are returned as-is.
    pub fn ensure_word(&mut self, word: &str) -> Result<usize> {
        if let Some(&id) = self.word_ids.get(word) {
            return Ok(id);
        }
        let id = self.vocab.len();
        self.vocab.push(word.to_string());
        self.word_ids.insert(word.to_string(), id);
        self.embedding.data.extend(std::iter::repeat(S::zero()).take(self.dim));
        self.embedding.rows += 1;
        self.b_output.push(S::zero());
        self.features.push(match self.feature_config {
            Some(fc) if !is_special(word) => {
                Some(letter_ngram_features(word, fc.n_min, fc.n_max, fc.slots)?)
            }
            _ => None,
        });
        Ok(id)
    }

    /// E[word], plus the letter-feature projection when enabled.
    pub fn input_vector(&self, word: &str) -> Vec<S> {
        let id = self.word_id(word);
        let mut v = self.embedding.row(id).to_vec();
        if let (Some(f), Some(fm)) = (&self.features[id], &self.letter_matrix) {
            for (&slot, &count) in &f.counts {
                let row = fm.row(slot);
                let c = S::from_usize_c(count as usize);
                for (o, &a) in v.iter_mut().zip(row) {
                    *o += c * a;
                }
            }
        }
        v
    }

    /// Hidden state after consuming `word` from `hidden`.
    pub fn advance(&self, hidden: &[S], word: &str) -> Vec<S> {
        let u = self.input_vector(word);
        let mut a = self.w_input.matvec(&u);
        let wh = self.w_hidden.matvec(hidden);
        for ((av, &hv), &bv) in a.iter_mut().zip(&wh).zip(&self.b_hidden) {
            *av = (*av + hv + bv).tanh();
        }
        a
    }

    /// Natural-log softmax over the vocabulary from a hidden state.
    pub fn log_distribution(&self, hidden: &[S]) -> Vec<S> {
        let mut logits = self.embedding.matvec(hidden);
        for (l, &b) in logits.iter_mut().zip(&self.b_output) {
            *l += b;
        }
        let max = logits.iter().fold(S::neg_infinity(), |m, &v| m.max(v));
        let lse = logits.iter().map(|&v| (v - max).exp()).sum::<S>().ln() + max;
        for l in logits.iter_mut() {
            *l -= lse;
        }
        logits
    }

    /// One recurrence step: new hidden plus the natural-log distribution
    /// over the next word.
    pub fn step(&self, hidden: &[S], word: &str) -> (Vec<S>, Vec<S>) {
        let h = self.advance(hidden, word);
        let dist = self.log_distribution(&h);
        (h, dist)
    }

    /// Hidden state after consuming `<s>` from the zero state.
    pub fn start_hidden(&self) -> Vec<S> {
        self.advance(&vec![S::zero(); self.dim], BOS)
    }

    /// Natural-log probability of the sentence, including the `</s>`
    /// event; the empty sentence scores log p(</s> | start).
    pub fn sentence_logprob(&self, sentence: &[String]) -> S {
        let mut h = self.start_hidden();
        let mut total = S::zero();
        for w in sentence {
            let dist = self.log_distribution(&h);
            total += dist[self.word_id(w)];
            h = self.advance(&h, w);
        }
        let dist = self.log_distribution(&h);
        total + dist[self.word_id(EOS)]
    }

    /// Cross-entropy loss over one sentence and exact gradients for every
    /// parameter block (full backpropagation through time).
    pub fn loss_and_gradients(&self, sentence: &[String]) -> (S, Gradients<S>) {
        let inputs: Vec<usize> = std::iter::once(BOS)
            .chain(sentence.iter().map(String::as_str))
            .map(|w| self.word_id(w))
            .collect();
        let targets: Vec<usize> = sentence
            .iter()
            .map(String::as_str)
            .chain(std::iter::once(EOS))
            .map(|w| self.word_id(w))
            .collect();
        let steps = inputs.len();
        let d = self.dim;

        let mut us: Vec<Vec<S>> = Vec::with_capacity(steps);
        let mut hs: Vec<Vec<S>> = Vec::with_capacity(steps);
        let mut probs: Vec<Vec<S>> = Vec::with_capacity(steps);
        let mut h_prev = vec![S::zero(); d];
        let mut loss = S::zero();
        for t in 0..steps {
            let u = self.input_vector(&self.vocab[inputs[t]]);
            let mut a = self.w_input.matvec(&u);
            let wh = self.w_hidden.matvec(&h_prev);
            for ((av, &hv), &bv) in a.iter_mut().zip(&wh).zip(&self.b_hidden) {
                *av = (*av + hv + bv).tanh();
            }
            let logp = self.log_distribution(&a);
            loss -= logp[targets[t]];
            probs.push(logp.iter().map(|&v| v.exp()).collect());
            us.push(u);
            hs.push(a.clone());
            h_prev = a;
        }

        let mut g = Gradients {
            embedding: Matrix::zeros(self.vocab.len(), d),
            letter_matrix: self.letter_matrix.as_ref().map(|m| Matrix::zeros(m.rows, d)),
            w_input: Matrix::zeros(d, d),
            w_hidden: Matrix::zeros(d, d),
            b_hidden: vec![S::zero(); d],
            b_output: vec![S::zero(); self.vocab.len()],
        };
        let mut carry = vec![S::zero(); d];
        for t in (0..steps).rev() {
            let mut dlogits = probs[t].clone();
            dlogits[targets[t]] -= S::one();
            for (go, &dl) in g.b_output.iter_mut().zip(&dlogits) {
                *go += dl;
            }
            g.embedding.add_outer(&dlogits, &hs[t], S::one());
            let mut dh = self.embedding.matvec_t(&dlogits);
            for (dv, &c) in dh.iter_mut().zip(&carry) {
                *dv += c;
            }
            let da: Vec<S> = dh
                .iter()
                .zip(&hs[t])
                .map(|(&dv, &hv)| dv * (S::one() - hv * hv))
                .collect();
            for (gb, &v) in g.b_hidden.iter_mut().zip(&da) {
                *gb += v;
            }
            g.w_input.add_outer(&da, &us[t], S::one());
            let h_before = if t == 0 { vec![S::zero(); d] } else { hs[t - 1].clone() };
            g.w_hidden.add_outer(&da, &h_before, S::one());
            let du = self.w_input.matvec_t(&da);
            let in_id = inputs[t];
            for (gv, &v) in g.embedding.row_mut(in_id).iter_mut().zip(&du) {
                *gv += v;
            }
            if let (Some(f), Some(gm)) = (&self.features[in_id], g.letter_matrix.as_mut()) {
                for (&slot, &count) in &f.counts {
                    let c = S::from_usize_c(count as usize);
                    for (gv, &v) in gm.row_mut(slot).iter_mut().zip(&du) {
                        *gv += c * v;
                    }
                }
            }
            carry = self.w_hidden.matvec_t(&da);
        }
        (loss, g)
    }

    fn sgd_update(&mut self, g: &Gradients<S>, lr: S) {
        let apply = |p: &mut [S], gp: &[S]| {
            for (pv, &gv) in p.iter_mut().zip(gp) {
                *pv -= lr * gv;
            }
        };
        apply(&mut self.embedding.data, &g.embedding.data);
        if let (Some(m), Some(gm)) = (self.letter_matrix.as_mut(), g.letter_matrix.as_ref()) {
            apply(&mut m.data, &gm.data);
        }
        apply(&mut self.w_input.data, &g.w_input.data);
        apply(&mut self.w_hidden.data, &g.w_hidden.data);
        apply(&mut self.b_hidden, &g.b_hidden);
        apply(&mut self.b_output, &g.b_output);
    }

    /// Writes the versioned text model format (9 significant digits).
    pub fn serialize(&self) -> String {
        let mut out = String::from("NLM1\n");
        out.push_str(&format!("dim {}\n", self.dim));
        out.push_str(&format!("vocab {}\n", self.vocab.len()));
        out.push_str(&format!("seed {}\n", self.seed));
        match self.feature_config {
            Some(fc) => out.push_str(&format!("letter_features {} {} {}\n", fc.n_min, fc.n_max, fc.slots)),
            None => out.push_str("letter_features none\n"),
        }
        for w in &self.vocab {
            out.push_str(w);
            out.push('\n');
        }
        let mat = |name: &str, m: &Matrix<S>, out: &mut String| {
            out.push_str(name);
            out.push('\n');
            for r in 0..m.rows {
                let line: Vec<String> = m.row(r).iter().map(|&v| fmt_score(v)).collect();
                out.push_str(&line.join(" "));
                out.push('\n');
            }
        };
        mat("E", &self.embedding, &mut out);
        if let Some(f) = &self.letter_matrix {
            mat("F", f, &mut out);
        }
        mat("WX", &self.w_input, &mut out);
        mat("WH", &self.w_hidden, &mut out);
        out.push_str("BH\n");
        out.push_str(&self.b_hidden.iter().map(|&v| fmt_score(v)).collect::<Vec<_>>().join(" "));
        out.push('\n');
        out.push_str("BO\n");
        out.push_str(&self.b_output.iter().map(|&v| fmt_score(v)).collect::<Vec<_>>().join(" "));
        out.push('\n');
        out
    }

    pub fn parse(text: &str) -> Result<NeuralLm<S>> {
        let mut lines = text.lines().enumerate();
        let mut next = |what: &str| -> Result<(usize, String)> {
            lines
                .next()
                .map(|(i, l)| (i + 1, l.to_string()))
                .ok_or_else(|| Error::parse(0, format!("unexpected end of model file, wanted {}", what)))
        };
        let (i, magic) = next("magic")?;
        if magic != "NLM1" {
            return Err(Error::parse(i, "not an NLM1 model file"));
        }
        let field = |lineno: usize, line: &str, key: &str| -> Result<String> {
            line.strip_prefix(key)
                .and_then(|r| r.strip_prefix(' '))
                .map(str::to_string)
                .ok_or_else(|| Error::parse(lineno, format!("expected `{} ...`", key)))
        };
        let (i, l) = next("dim")?;
        let dim: usize = field(i, &l, "dim")?.parse().map_err(|_| Error::parse(i, "bad dim"))?;
        let (i, l) = next("vocab")?;
        let vs: usize = field(i, &l, "vocab")?.parse().map_err(|_| Error::parse(i, "bad vocab size"))?;
        let (i, l) = next("seed")?;
        let seed: u64 = field(i, &l, "seed")?.parse().map_err(|_| Error::parse(i, "bad seed"))?;
        let (i, l) = next("letter_features")?;
        let fc = match field(i, &l, "letter_features")?.as_str() {
            "none" => None,
            spec => {
                let parts: Vec<&str> = spec.split_whitespace().collect();
                if parts.len() != 3 {
                    return Err(Error::parse(i, "letter_features wants `n_min n_max slots`"));
                }
                let p = |s: &str| -> Result<usize> {
                    s.parse().map_err(|_| Error::parse(i, "bad letter_features field"))
                };
                Some(LetterFeatureConfig { n_min: p(parts[0])?, n_max: p(parts[1])?, slots: p(parts[2])? })
            }
        };
        let mut vocab = Vec::with_capacity(vs);
        for _ in 0..vs {
            vocab.push(next("vocab word")?.1);
        }
        let mut read_matrix = |name: &str, rows: usize, cols: usize| -> Result<Matrix<S>> {
            let (i, l) = next(name)?;
            if l != name {
                return Err(Error::parse(i, format!("expected section `{}`", name)));
            }
            let mut m = Matrix::zeros(rows, cols);
            for r in 0..rows {
                let (i, l) = next("matrix row")?;
                let vals: Vec<&str> = l.split_whitespace().collect();
                if vals.len() != cols {
                    return Err(Error::parse(i, format!("expected {} values", cols)));
                }
                for (c, v) in vals.iter().enumerate() {
                    let x: f64 = v.parse().map_err(|_| Error::parse(i, "bad number"))?;
                    m.row_mut(r)[c] = S::from_f64_c(x);
                }
            }
            Ok(m)
        };
        let embedding = read_matrix("E", vs, dim)?;
        let letter_matrix = match fc {
            Some(c) => Some(read_matrix("F", c.slots, dim)?),
            None => None,
        };
        let w_input = read_matrix("WX", dim, dim)?;
        let w_hidden = read_matrix("WH", dim, dim)?;
        let b_hidden = read_matrix("BH", 1, dim)?.data;
        let b_output = read_matrix("BO", 1, vs)?.data;
        let word_ids = vocab.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        let features = compute_feature_cache(&vocab, fc)?;
        Ok(NeuralLm {
            vocab,
            word_ids,
            embedding,
            letter_matrix,
            w_input,
            w_hidden,
            b_hidden,
            b_output,
            dim,
            seed,
            feature_config: fc,
            features,
        })
    }
}

fn compute_feature_cache(
    vocab: &[String],
    fc: Option<LetterFeatureConfig>,
) -> Result<Vec<Option<LetterFeatures>>> {
    vocab
        .iter()
        .map(|w| match fc {
            Some(c) if !is_special(w) => {
                Ok(Some(letter_ngram_features(w, c.n_min, c.n_max, c.slots)?))
            }
            _ => Ok(None),
        })
        .collect()
}

/// Trains by plain SGD on full-sentence backpropagation through time.
/// Deterministic given the seed; aborts on a non-finite loss.
pub fn train<S: Scalar>(
    corpus: &[Vec<String>],
    vocab: Vec<String>,
    cfg: &TrainConfig<S>,
) -> Result<(NeuralLm<S>, TrainReport<S>)> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut lm = NeuralLm::new(vocab, cfg)?;
    let mut report = TrainReport { epoch_perplexity: Vec::with_capacity(cfg.epochs) };
    for epoch in 0..cfg.epochs {
        let mut total_loss = S::zero();
        let mut events = 0usize;
        for (si, sent) in corpus.iter().enumerate() {
            let (loss, grads) = lm.loss_and_gradients(sent);
            if !loss.is_finite() {
                return Err(Error::NanLoss { epoch, sentence: si });
            }
            lm.sgd_update(&grads, cfg.learning_rate);
            total_loss += loss;
            events += sent.len() + 1;
        }
        report.epoch_perplexity.push((total_loss / S::from_usize_c(events)).exp());
    }
    Ok((lm, report))
}

/// Central finite differences against the analytic gradients over every
/// parameter block. Relative error uses max(|a|, |n|) with tiny pairs
/// treated as exact.
pub fn gradient_check<S: Scalar>(
    lm: &NeuralLm<S>,
    sentence: &[String],
    epsilon: S,
    tolerance: S,
) -> Result<GradCheckReport<S>> {
    if epsilon <= S::zero() || tolerance <= S::zero() {
        return Err(Error::config("epsilon and tolerance must be positive"));
    }
    let (_, analytic) = lm.loss_and_gradients(sentence);
    let mut work = lm.clone();
    let tiny = S::from_f64_c(1e-6);

    let mut blocks: Vec<(String, S)> = Vec::new();
    // (name, parameter accessor) pairs drive both loops; each closure
    // returns a raw pointer-free mutable view by index.
    let block_sizes: Vec<(String, usize)> = {
        let mut v = vec![
            ("embedding".to_string(), lm.embedding.data.len()),
            ("w_input".to_string(), lm.w_input.data.len()),
            ("w_hidden".to_string(), lm.w_hidden.data.len()),
            ("b_hidden".to_string(), lm.b_hidden.len()),
            ("b_output".to_string(), lm.b_output.len()),
        ];
        if let Some(m) = &lm.letter_matrix {
            v.insert(1, ("letter_matrix".to_string(), m.data.len()));
        }
        v
    };

    fn param_mut<'a, S: Scalar>(lm: &'a mut NeuralLm<S>, block: &str, i: usize) -> &'a mut S {
        match block {
            "embedding" => &mut lm.embedding.data[i],
            "letter_matrix" => &mut lm.letter_matrix.as_mut().unwrap().data[i],
            "w_input" => &mut lm.w_input.data[i],
            "w_hidden" => &mut lm.w_hidden.data[i],
            "b_hidden" => &mut lm.b_hidden[i],
            "b_output" => &mut lm.b_output[i],
            _ => unreachable!(),
        }
    }

    fn grad_at<S: Scalar>(g: &Gradients<S>, block: &str, i: usize) -> S {
        match block {
            "embedding" => g.embedding.data[i],
            "letter_matrix" => g.letter_matrix.as_ref().unwrap().data[i],
            "w_input" => g.w_input.data[i],
            "w_hidden" => g.w_hidden.data[i],
            "b_hidden" => g.b_hidden[i],
            "b_output" => g.b_output[i],
            _ => unreachable!(),
        }
    }

    let mut overall = S::zero();
    for (name, size) in &block_sizes {
        let mut worst = S::zero();
        for i in 0..*size {
            let orig = *param_mut(&mut work, name, i);
            *param_mut(&mut work, name, i) = orig + epsilon;
            let (lp, _) = work.loss_and_gradients(sentence);
            *param_mut(&mut work, name, i) = orig - epsilon;
            let (lm_, _) = work.loss_and_gradients(sentence);
            *param_mut(&mut work, name, i) = orig;
            let numeric = (lp - lm_) / (S::from_f64_c(2.0) * epsilon);
            let a = grad_at(&analytic, name, i);
            let err = if a.abs() < tiny && numeric.abs() < tiny {
                S::zero()
            } else {
                (a - numeric).abs() / a.abs().max(numeric.abs())
            };
            if err > worst {
                worst = err;
            }
        }
        if worst > overall {
            overall = worst;
        }
        blocks.push((name.clone(), worst));
    }
    Ok(GradCheckReport { blocks, max_rel_error: overall, passed: overall < tolerance })
}
