//! Word lattices and log-semiring dynamic programming.
//!
//! A lattice is an acyclic weighted word graph; every arc carries an
//! acoustic and an LM natural-log score. Operations are pure: posteriors
//! (forward-backward), best path, n-best, and an exhaustive path
//! enumeration that serves as the testing oracle for all of them.

use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap, HashSet};
use std::cmp::Ordering;

use crate::{fmt_score, Error, Result, Scalar};

/// Epsilon token: scored like any arc, dropped from hypothesis words.
pub const EPSILON: &str = "<eps>";

/// Node times are integer frame indices at 10 ms per frame.
pub const FRAME_SECONDS: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Node {
    pub id: usize,
    pub time: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Arc<S> {
    pub source: usize,
    pub target: usize,
    pub word: String,
    pub acoustic_score: S,
    pub lm_score: S,
}

impl<S: Scalar> Arc<S> {
    pub fn new(source: usize, target: usize, word: impl Into<String>, acoustic: S, lm: S) -> Self {
        Arc { source, target, word: word.into(), acoustic_score: acoustic, lm_score: lm }
    }

    pub fn is_epsilon(&self) -> bool {
        self.word == EPSILON
    }
}

/// Acoustic/LM scale pair applied when combining the two arc scores.
/// Defaults follow the usual decoding convention (0.1, 1.0).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleConfig<S> {
    pub acoustic_scale: S,
    pub lm_scale: S,
}

impl<S: Scalar> Default for ScaleConfig<S> {
    fn default() -> Self {
        ScaleConfig { acoustic_scale: S::from_f64_c(0.1), lm_scale: S::one() }
    }
}

impl<S: Scalar> ScaleConfig<S> {
    pub fn new(acoustic_scale: S, lm_scale: S) -> Result<Self> {
        let cfg = ScaleConfig { acoustic_scale, lm_scale };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.acoustic_scale <= S::zero()
            || self.lm_scale <= S::zero()
            || !self.acoustic_scale.is_finite()
            || !self.lm_scale.is_finite()
        {
            return Err(Error::NonPositiveScale);
        }
        Ok(())
    }
}

/// acoustic_scale * acoustic + lm_scale * lm.
pub fn combined_arc_weight<S: Scalar>(arc: &Arc<S>, scales: &ScaleConfig<S>) -> Result<S> {
    scales.validate()?;
    Ok(scales.acoustic_scale * arc.acoustic_score + scales.lm_scale * arc.lm_score)
}

/// Per-arc posterior probabilities, indexed like `Lattice::arcs`.
#[derive(Debug, Clone, PartialEq)]
pub struct ArcPosteriors<S> {
    pub posteriors: Vec<S>,
}

impl<S: Scalar> ArcPosteriors<S> {
    pub fn get(&self, arc_index: usize) -> S {
        self.posteriors[arc_index]
    }
}

/// One path through a lattice with epsilon tokens removed from `words`
/// (but not from any score).
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis<S> {
    pub words: Vec<String>,
    pub total_score: S,
    /// (start frame, end frame) per word, aligned 1:1 with `words`.
    pub word_times: Vec<(u32, u32)>,
    pub acoustic_total: S,
    pub lm_total: S,
    /// Arcs of the underlying path, including epsilon arcs.
    pub arc_indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lattice<S> {
    pub utterance_id: String,
    pub nodes: Vec<Node>,
    pub arcs: Vec<Arc<S>>,
    pub start_node: usize,
    pub final_nodes: BTreeSet<usize>,
}

impl<S: Scalar> Lattice<S> {
    /// Builds a lattice from parts, inferring missing node times as
    /// longest-path depth, and validates it.
    pub fn new(
        utterance_id: impl Into<String>,
        nodes: Vec<Node>,
        arcs: Vec<Arc<S>>,
        start_node: usize,
        final_nodes: BTreeSet<usize>,
    ) -> Result<Self> {
        let lat = Lattice { utterance_id: utterance_id.into(), nodes, arcs, start_node, final_nodes };
        lat.validate()?;
        Ok(lat)
    }

    pub fn node_index(&self) -> HashMap<usize, usize> {
        self.nodes.iter().enumerate().map(|(i, n)| (n.id, i)).collect()
    }

    pub fn node_time(&self, id: usize) -> Option<u32> {
        self.nodes.iter().find(|n| n.id == id).map(|n| n.time)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nodes.is_empty() || self.arcs.is_empty() {
            return Err(Error::EmptyLattice);
        }
        let idx = self.node_index();
        if idx.len() != self.nodes.len() {
            return Err(Error::config(format!(
                "duplicate node id in lattice `{}`",
                self.utterance_id
            )));
        }
        let missing = |node: usize| Error::DanglingNode { utt: self.utterance_id.clone(), node };
        if !idx.contains_key(&self.start_node) {
            return Err(missing(self.start_node));
        }
        for f in &self.final_nodes {
            if !idx.contains_key(f) {
                return Err(missing(*f));
            }
        }
        for arc in &self.arcs {
            let (s, t) = (
                *idx.get(&arc.source).ok_or_else(|| missing(arc.source))?,
                *idx.get(&arc.target).ok_or_else(|| missing(arc.target))?,
            );
            if !arc.acoustic_score.is_finite() || !arc.lm_score.is_finite() {
                return Err(Error::NonFinite {
                    what: format!("arc {}->{} of lattice `{}`", arc.source, arc.target, self.utterance_id),
                });
            }
            if self.nodes[t].time < self.nodes[s].time {
                return Err(Error::config(format!(
                    "lattice `{}`: arc {}->{} goes backwards in time",
                    self.utterance_id, arc.source, arc.target
                )));
            }
        }
        if self.arcs[0].source != self.start_node {
            return Err(Error::config(format!(
                "lattice `{}`: first arc must leave the start node",
                self.utterance_id
            )));
        }
        self.topo_order()?;
        Ok(())
    }

    /// Topological order of node indices (Kahn's algorithm, smallest node
    /// id first for determinism). Errors on cycles.
    pub fn topo_order(&self) -> Result<Vec<usize>> {
        let idx = self.node_index();
        let n = self.nodes.len();
        let mut in_deg = vec![0usize; n];
        let mut out: Vec<Vec<usize>> = vec![Vec::new(); n];
        for arc in &self.arcs {
            let s = idx[&arc.source];
            let t = idx[&arc.target];
            in_deg[t] += 1;
            out[s].push(t);
        }
        let mut ready: BTreeSet<(usize, usize)> = (0..n)
            .filter(|&i| in_deg[i] == 0)
            .map(|i| (self.nodes[i].id, i))
            .collect();
        let mut order = Vec::with_capacity(n);
        while let Some(&(id, i)) = ready.iter().next() {
            ready.remove(&(id, i));
            order.push(i);
            for &t in &out[i] {
                in_deg[t] -= 1;
                if in_deg[t] == 0 {
                    ready.insert((self.nodes[t].id, t));
                }
            }
        }
        if order.len() != n {
            return Err(Error::Cycle { utt: self.utterance_id.clone() });
        }
        Ok(order)
    }

    /// Keeps only nodes and arcs on some start-to-final path. Arc order is
    /// preserved, so the cleaned lattice still satisfies the first-arc
    /// convention whenever a path exists.
    pub fn connect(&self) -> Result<Lattice<S>> {
        let idx = self.node_index();
        let n = self.nodes.len();
        let mut fwd = vec![false; n];
        let mut bwd = vec![false; n];
        fwd[idx[&self.start_node]] = true;
        let order = self.topo_order()?;
        let mut out: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut inc: Vec<Vec<usize>> = vec![Vec::new(); n];
        for arc in &self.arcs {
            out[idx[&arc.source]].push(idx[&arc.target]);
            inc[idx[&arc.target]].push(idx[&arc.source]);
        }
        for &i in &order {
            if fwd[i] {
                for &t in &out[i] {
                    fwd[t] = true;
                }
            }
        }
        for f in &self.final_nodes {
            bwd[idx[f]] = true;
        }
        for &i in order.iter().rev() {
            if bwd[i] {
                for &s in &inc[i] {
                    bwd[s] = true;
                }
            }
        }
        let keep: HashSet<usize> = (0..n)
            .filter(|&i| fwd[i] && bwd[i])
            .map(|i| self.nodes[i].id)
            .collect();
        if !keep.contains(&self.start_node) {
            return Err(Error::NoPath { utt: self.utterance_id.clone() });
        }
        let nodes: Vec<Node> = self.nodes.iter().filter(|nd| keep.contains(&nd.id)).copied().collect();
        let arcs: Vec<Arc<S>> = self
            .arcs
            .iter()
            .filter(|a| keep.contains(&a.source) && keep.contains(&a.target))
            .cloned()
            .collect();
        let finals: BTreeSet<usize> = self.final_nodes.iter().filter(|f| keep.contains(f)).copied().collect();
        if arcs.is_empty() || finals.is_empty() {
            return Err(Error::NoPath { utt: self.utterance_id.clone() });
        }
        Ok(Lattice {
            utterance_id: self.utterance_id.clone(),
            nodes,
            arcs,
            start_node: self.start_node,
            final_nodes: finals,
        })
    }

    /// Serializes in the lattice text format; scores carry 9 significant
    /// digits so that parse . serialize round-trips.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("UTT {}\n", self.utterance_id));
        let mut nodes = self.nodes.clone();
        nodes.sort_by_key(|n| n.id);
        for n in &nodes {
            out.push_str(&format!("NODE {} {}\n", n.id, n.time));
        }
        for a in &self.arcs {
            out.push_str(&format!(
                "{} {} {} {} {}\n",
                a.source,
                a.target,
                a.word,
                fmt_score(a.acoustic_score),
                fmt_score(a.lm_score)
            ));
        }
        for f in &self.final_nodes {
            out.push_str(&format!("{}\n", f));
        }
        out.push('\n');
        out
    }
}

pub fn serialize_lattices<S: Scalar>(lats: &[Lattice<S>]) -> String {
    lats.iter().map(Lattice::serialize).collect()
}

/// Parses one lattice block; errors if the text holds none or several.
pub fn parse_lattice<S: Scalar>(text: &str) -> Result<Lattice<S>> {
    let lats = parse_lattices(text)?;
    match lats.len() {
        1 => Ok(lats.into_iter().next().unwrap()),
        n => Err(Error::parse(0, format!("expected exactly one lattice block, found {}", n))),
    }
}

/// Parses a sequence of blank-line-separated lattice blocks.
///
/// Block grammar: `UTT <id>` header, optional `NODE <id> <frame>` lines,
/// arc lines `src dst word acoustic lm`, and single-token final-node
/// lines. The start node is the source of the first arc. When no NODE
/// lines are given, times are inferred as longest-path depth from the
/// start.
pub fn parse_lattices<S: Scalar>(text: &str) -> Result<Vec<Lattice<S>>> {
    struct Block<S> {
        line: usize,
        utt: String,
        times: BTreeMap<usize, u32>,
        arcs: Vec<Arc<S>>,
        finals: BTreeSet<usize>,
    }

    let mut blocks: Vec<Block<S>> = Vec::new();
    let mut cur: Option<Block<S>> = None;

    let parse_id = |tok: &str, lineno: usize| -> Result<usize> {
        tok.parse::<usize>().map_err(|_| Error::parse(lineno, format!("bad node id `{}`", tok)))
    };
    let parse_score = |tok: &str, lineno: usize| -> Result<S> {
        let v: f64 = tok
            .parse()
            .map_err(|_| Error::parse(lineno, format!("bad score `{}`", tok)))?;
        if !v.is_finite() {
            return Err(Error::parse(lineno, format!("non-finite score `{}`", tok)));
        }
        Ok(S::from_f64_c(v))
    };

    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            if let Some(b) = cur.take() {
                blocks.push(b);
            }
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks[0] == "UTT" {
            if cur.is_some() {
                return Err(Error::parse(lineno, "UTT header inside an open block"));
            }
            if toks.len() != 2 {
                return Err(Error::parse(lineno, "UTT header takes exactly one id"));
            }
            cur = Some(Block {
                line: lineno,
                utt: toks[1].to_string(),
                times: BTreeMap::new(),
                arcs: Vec::new(),
                finals: BTreeSet::new(),
            });
            continue;
        }
        let b = cur
            .as_mut()
            .ok_or_else(|| Error::parse(lineno, "content before UTT header"))?;
        match toks.len() {
            3 if toks[0] == "NODE" => {
                let id = parse_id(toks[1], lineno)?;
                let frame = toks[2]
                    .parse::<u32>()
                    .map_err(|_| Error::parse(lineno, format!("bad frame `{}`", toks[2])))?;
                b.times.insert(id, frame);
            }
            5 => {
                let src = parse_id(toks[0], lineno)?;
                let dst = parse_id(toks[1], lineno)?;
                let ac = parse_score(toks[3], lineno)?;
                let lm = parse_score(toks[4], lineno)?;
                b.arcs.push(Arc::new(src, dst, toks[2], ac, lm));
            }
            1 => {
                b.finals.insert(parse_id(toks[0], lineno)?);
            }
            _ => return Err(Error::parse(lineno, format!("unrecognized line `{}`", line))),
        }
    }
    if let Some(b) = cur.take() {
        blocks.push(b);
    }

    let mut out = Vec::with_capacity(blocks.len());
    for b in blocks {
        if b.arcs.is_empty() {
            return Err(Error::parse(b.line, format!("lattice `{}` has no arcs", b.utt)));
        }
        let mut ids: BTreeSet<usize> = BTreeSet::new();
        for a in &b.arcs {
            ids.insert(a.source);
            ids.insert(a.target);
        }
        for f in &b.finals {
            if !ids.contains(f) {
                return Err(Error::DanglingNode { utt: b.utt.clone(), node: *f });
            }
        }
        for t in b.times.keys() {
            if !ids.contains(t) {
                return Err(Error::DanglingNode { utt: b.utt.clone(), node: *t });
            }
        }
        if b.finals.is_empty() {
            return Err(Error::parse(b.line, format!("lattice `{}` declares no final node", b.utt)));
        }
        let start = b.arcs[0].source;
        let nodes: Vec<Node> = if b.times.is_empty() {
            infer_times(&ids, &b.arcs, start, &b.utt)?
        } else {
            if b.times.len() != ids.len() {
                return Err(Error::parse(
                    b.line,
                    format!("lattice `{}`: NODE lines must cover every node or none", b.utt),
                ));
            }
            ids.iter().map(|&id| Node { id, time: b.times[&id] }).collect()
        };
        let lat = Lattice {
            utterance_id: b.utt,
            nodes,
            arcs: b.arcs,
            start_node: start,
            final_nodes: b.finals,
        };
        lat.validate()?;
        out.push(lat);
    }
    Ok(out)
}

/// Longest-path depth from the start node, used as the inferred frame.
fn infer_times<S: Scalar>(
    ids: &BTreeSet<usize>,
    arcs: &[Arc<S>],
    start: usize,
    utt: &str,
) -> Result<Vec<Node>> {
    let probe = Lattice {
        utterance_id: utt.to_string(),
        nodes: ids.iter().map(|&id| Node { id, time: 0 }).collect(),
        arcs: arcs.to_vec(),
        start_node: start,
        final_nodes: BTreeSet::new(),
    };
    let order = probe.topo_order()?;
    let idx = probe.node_index();
    let mut depth = vec![0u32; probe.nodes.len()];
    for &i in &order {
        let src_id = probe.nodes[i].id;
        for a in arcs.iter().filter(|a| a.source == src_id) {
            let t = idx[&a.target];
            depth[t] = depth[t].max(depth[i] + 1);
        }
    }
    Ok(probe
        .nodes
        .iter()
        .enumerate()
        .map(|(i, n)| Node { id: n.id, time: depth[i] })
        .collect())
}

/// log(exp(a) + exp(b)) with max shift; tolerates -inf.
pub fn log_add<S: Scalar>(a: S, b: S) -> S {
    if a == S::neg_infinity() {
        return b;
    }
    if b == S::neg_infinity() {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

struct Dp<S> {
    idx: HashMap<usize, usize>,
    order: Vec<usize>,
    weights: Vec<S>,
    out_arcs: Vec<Vec<usize>>,
}

fn prepare_dp<S: Scalar>(lat: &Lattice<S>, scales: &ScaleConfig<S>) -> Result<Dp<S>> {
    scales.validate()?;
    if lat.nodes.is_empty() || lat.arcs.is_empty() {
        return Err(Error::EmptyLattice);
    }
    let idx = lat.node_index();
    let order = lat.topo_order()?;
    let weights: Vec<S> = lat
        .arcs
        .iter()
        .map(|a| scales.acoustic_scale * a.acoustic_score + scales.lm_scale * a.lm_score)
        .collect();
    let mut out_arcs: Vec<Vec<usize>> = vec![Vec::new(); lat.nodes.len()];
    for (ai, a) in lat.arcs.iter().enumerate() {
        out_arcs[idx[&a.source]].push(ai);
    }
    Ok(Dp { idx, order, weights, out_arcs })
}

/// Arc posteriors and total log-probability by log-domain
/// forward-backward over the topological order.
pub fn forward_backward<S: Scalar>(
    lat: &Lattice<S>,
    scales: &ScaleConfig<S>,
) -> Result<(ArcPosteriors<S>, S)> {
    let dp = prepare_dp(lat, scales)?;
    let n = lat.nodes.len();
    let mut alpha = vec![S::neg_infinity(); n];
    let mut beta = vec![S::neg_infinity(); n];
    alpha[dp.idx[&lat.start_node]] = S::zero();
    for &i in &dp.order {
        if alpha[i] == S::neg_infinity() {
            continue;
        }
        for &ai in &dp.out_arcs[i] {
            let t = dp.idx[&lat.arcs[ai].target];
            alpha[t] = log_add(alpha[t], alpha[i] + dp.weights[ai]);
        }
    }
    for f in &lat.final_nodes {
        beta[dp.idx[f]] = S::zero();
    }
    for &i in dp.order.iter().rev() {
        for &ai in &dp.out_arcs[i] {
            let t = dp.idx[&lat.arcs[ai].target];
            if beta[t] == S::neg_infinity() {
                continue;
            }
            beta[i] = log_add(beta[i], dp.weights[ai] + beta[t]);
        }
    }
    let mut total = S::neg_infinity();
    for f in &lat.final_nodes {
        total = log_add(total, alpha[dp.idx[f]]);
    }
    if total == S::neg_infinity() {
        return Err(Error::NoPath { utt: lat.utterance_id.clone() });
    }
    let posteriors: Vec<S> = lat
        .arcs
        .iter()
        .enumerate()
        .map(|(ai, a)| {
            let s = dp.idx[&a.source];
            let t = dp.idx[&a.target];
            let lp = alpha[s] + dp.weights[ai] + beta[t] - total;
            lp.exp()
        })
        .collect();
    Ok((ArcPosteriors { posteriors }, total))
}

/// Sums of arc posteriors over every valid topological cut. For a
/// connected lattice each sum is 1 up to rounding, which is the standard
/// sanity invariant for forward-backward.
pub fn posterior_cut_sums<S: Scalar>(lat: &Lattice<S>, post: &ArcPosteriors<S>) -> Result<Vec<S>> {
    let order = lat.topo_order()?;
    let idx = lat.node_index();
    let mut pos = vec![0usize; lat.nodes.len()];
    for (rank, &i) in order.iter().enumerate() {
        pos[i] = rank;
    }
    let min_final = lat
        .final_nodes
        .iter()
        .map(|f| pos[idx[f]])
        .min()
        .ok_or_else(|| Error::NoPath { utt: lat.utterance_id.clone() })?;
    let mut sums = Vec::new();
    for k in 1..=min_final {
        let mut s = S::zero();
        for (ai, a) in lat.arcs.iter().enumerate() {
            if pos[idx[&a.source]] < k && pos[idx[&a.target]] >= k {
                s += post.get(ai);
            }
        }
        sums.push(s);
    }
    Ok(sums)
}

fn hypothesis_from_arcs<S: Scalar>(
    lat: &Lattice<S>,
    scales: &ScaleConfig<S>,
    arc_indices: Vec<usize>,
) -> Hypothesis<S> {
    let mut words = Vec::new();
    let mut word_times = Vec::new();
    let mut ac = S::zero();
    let mut lm = S::zero();
    let times: HashMap<usize, u32> = lat.nodes.iter().map(|n| (n.id, n.time)).collect();
    for &ai in &arc_indices {
        let a = &lat.arcs[ai];
        ac += a.acoustic_score;
        lm += a.lm_score;
        if !a.is_epsilon() {
            words.push(a.word.clone());
            word_times.push((times[&a.source], times[&a.target]));
        }
    }
    let total = scales.acoustic_scale * ac + scales.lm_scale * lm;
    Hypothesis { words, total_score: total, word_times, acoustic_total: ac, lm_total: lm, arc_indices }
}

/// Exhaustive DFS path enumeration: the oracle against which the DP
/// operations are tested. Errors if the path count exceeds `cap`.
pub fn enumerate_paths<S: Scalar>(
    lat: &Lattice<S>,
    scales: &ScaleConfig<S>,
    cap: usize,
) -> Result<Vec<(Hypothesis<S>, S)>> {
    let dp = prepare_dp(lat, scales)?;
    let mut out = Vec::new();
    let mut stack: Vec<usize> = Vec::new();
    let start = dp.idx[&lat.start_node];

    fn dfs<S: Scalar>(
        lat: &Lattice<S>,
        dp: &Dp<S>,
        scales: &ScaleConfig<S>,
        node: usize,
        stack: &mut Vec<usize>,
        out: &mut Vec<(Hypothesis<S>, S)>,
        cap: usize,
    ) -> Result<()> {
        if lat.final_nodes.contains(&lat.nodes[node].id) {
            if out.len() >= cap {
                return Err(Error::PathCapExceeded { cap });
            }
            let hyp = hypothesis_from_arcs(lat, scales, stack.clone());
            let w = hyp.total_score;
            out.push((hyp, w));
        }
        for &ai in &dp.out_arcs[node] {
            let t = dp.idx[&lat.arcs[ai].target];
            stack.push(ai);
            dfs(lat, dp, scales, t, stack, out, cap)?;
            stack.pop();
        }
        Ok(())
    }

    dfs(lat, &dp, scales, start, &mut stack, &mut out, cap)?;
    if out.is_empty() {
        return Err(Error::NoPath { utt: lat.utterance_id.clone() });
    }
    Ok(out)
}

/// Heap entry for best-first n-best search. Ordered by (f, words,
/// arc sequence) so that ties resolve to the lexicographically smallest
/// word sequence, then the smallest arc-index sequence.
struct Partial<S> {
    f: S,
    words: Vec<String>,
    arcs: Vec<usize>,
    node: usize,
    g: S,
}

impl<S: Scalar> PartialEq for Partial<S> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl<S: Scalar> Eq for Partial<S> {}
impl<S: Scalar> PartialOrd for Partial<S> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<S: Scalar> Ord for Partial<S> {
    fn cmp(&self, other: &Self) -> Ordering {
        // BinaryHeap is a max-heap: larger f first, then smaller words,
        // then smaller arc sequence.
        match self.f.partial_cmp(&other.f).expect("finite scores") {
            Ordering::Equal => {}
            o => return o,
        }
        match self.words.cmp(&other.words) {
            Ordering::Equal => {}
            o => return o.reverse(),
        }
        self.arcs.cmp(&other.arcs).reverse()
    }
}

const NBEST_POP_CAP: usize = 4_000_000;

/// Top-n distinct word sequences by combined score (A* with the exact
/// Viterbi-backward heuristic). Deterministic under the tie-break rule.
pub fn n_best<S: Scalar>(lat: &Lattice<S>, scales: &ScaleConfig<S>, n: usize) -> Result<Vec<Hypothesis<S>>> {
    if n == 0 {
        return Err(Error::config("n-best size must be at least 1"));
    }
    let dp = prepare_dp(lat, scales)?;
    let nn = lat.nodes.len();
    // Exact heuristic: best achievable completion weight per node.
    let mut best_to_final = vec![S::neg_infinity(); nn];
    for f in &lat.final_nodes {
        best_to_final[dp.idx[f]] = S::zero();
    }
    for &i in dp.order.iter().rev() {
        for &ai in &dp.out_arcs[i] {
            let t = dp.idx[&lat.arcs[ai].target];
            if best_to_final[t] == S::neg_infinity() {
                continue;
            }
            let cand = dp.weights[ai] + best_to_final[t];
            if cand > best_to_final[i] {
                best_to_final[i] = cand;
            }
        }
    }
    let start = dp.idx[&lat.start_node];
    if best_to_final[start] == S::neg_infinity() {
        return Err(Error::NoPath { utt: lat.utterance_id.clone() });
    }

    let mut heap: BinaryHeap<Partial<S>> = BinaryHeap::new();
    heap.push(Partial { f: best_to_final[start], words: Vec::new(), arcs: Vec::new(), node: start, g: S::zero() });

    // Completed candidates: (score, words, arcs). Collected until the heap
    // can no longer produce anything tying the current n-th distinct score.
    let mut completed: Vec<(S, Vec<String>, Vec<usize>)> = Vec::new();
    let mut distinct: BTreeMap<Vec<String>, S> = BTreeMap::new();
    let mut pops = 0usize;

    while let Some(p) = heap.pop() {
        pops += 1;
        if pops > NBEST_POP_CAP {
            return Err(Error::PathCapExceeded { cap: NBEST_POP_CAP });
        }
        if distinct.len() >= n {
            let mut scores: Vec<S> = distinct.values().copied().collect();
            scores.sort_by(|a, b| b.partial_cmp(a).unwrap());
            let nth = scores[n - 1];
            if p.f < nth {
                break;
            }
        }
        if lat.final_nodes.contains(&lat.nodes[p.node].id) {
            completed.push((p.g, p.words.clone(), p.arcs.clone()));
            let e = distinct.entry(p.words.clone()).or_insert(p.g);
            if p.g > *e {
                *e = p.g;
            }
        }
        for &ai in &dp.out_arcs[p.node] {
            let arc = &lat.arcs[ai];
            let t = dp.idx[&arc.target];
            if best_to_final[t] == S::neg_infinity() {
                continue;
            }
            let g = p.g + dp.weights[ai];
            let mut words = p.words.clone();
            if !arc.is_epsilon() {
                words.push(arc.word.clone());
            }
            let mut arcs = p.arcs.clone();
            arcs.push(ai);
            heap.push(Partial { f: g + best_to_final[t], words, arcs, node: t, g });
        }
    }

    // Reduce to the best representative path per word sequence.
    let mut best: BTreeMap<Vec<String>, (S, Vec<usize>)> = BTreeMap::new();
    for (score, words, arcs) in completed {
        match best.get_mut(&words) {
            None => {
                best.insert(words, (score, arcs));
            }
            Some(slot) => {
                let replace = score > slot.0 || (score == slot.0 && arcs < slot.1);
                if replace {
                    *slot = (score, arcs);
                }
            }
        }
    }
    let mut ranked: Vec<(Vec<String>, (S, Vec<usize>))> = best.into_iter().collect();
    ranked.sort_by(|a, b| match b.1 .0.partial_cmp(&a.1 .0).unwrap() {
        Ordering::Equal => a.0.cmp(&b.0),
        o => o,
    });
    ranked.truncate(n);
    Ok(ranked
        .into_iter()
        .map(|(_, (_, arcs))| hypothesis_from_arcs(lat, scales, arcs))
        .collect())
}

/// Max-combined-weight path; epsilon tokens are dropped from the word
/// sequence but kept in the score. Ties break to the lexicographically
/// smallest word sequence, then the smallest arc-index sequence.
pub fn best_path<S: Scalar>(lat: &Lattice<S>, scales: &ScaleConfig<S>) -> Result<Hypothesis<S>> {
    Ok(n_best(lat, scales, 1)?.into_iter().next().expect("n_best(1) is non-empty"))
}

#[cfg(test)]
mod tests {
    use super::*;

    type L = Lattice<f64>;

    fn unit_scales() -> ScaleConfig<f64> {
        ScaleConfig::new(1.0, 1.0).unwrap()
    }

    /// Two disjoint three-word paths with combined weights ln .75 / ln .25.
    pub fn diamond() -> L {
        let up = (0.75f64).ln() / 3.0;
        let lo = (0.25f64).ln() / 3.0;
        let arcs = vec![
            Arc::new(0, 1, "a", up, 0.0),
            Arc::new(1, 2, "b", up, 0.0),
            Arc::new(2, 5, "c", up, 0.0),
            Arc::new(0, 3, "x", lo, 0.0),
            Arc::new(3, 4, "y", lo, 0.0),
            Arc::new(4, 5, "z", lo, 0.0),
        ];
        let nodes = (0..=5).map(|id| Node { id, time: [0, 10, 20, 10, 20, 30][id] }).collect();
        Lattice::new("diamond", nodes, arcs, 0, BTreeSet::from([5])).unwrap()
    }

    #[test]
    fn parse_minimal_lattice() {
        let lat: L = parse_lattice("UTT u1\n0 1 hello -1.0 -0.5\n1\n").unwrap();
        assert_eq!(lat.arcs.len(), 1);
        assert_eq!(lat.arcs[0].word, "hello");
        assert_eq!(lat.start_node, 0);
        assert!(lat.final_nodes.contains(&1));
    }

    #[test]
    fn parse_rejects_cycle() {
        let r: Result<L> = parse_lattice("UTT u\n0 1 a -1.0 0.0\n1 0 b -1.0 0.0\n1\n");
        assert!(matches!(r, Err(Error::Cycle { .. })));
    }

    #[test]
    fn parse_rejects_dangling_final() {
        let r: Result<L> = parse_lattice("UTT u\n0 1 a -1.0 0.0\n7\n");
        assert!(matches!(r, Err(Error::DanglingNode { node: 7, .. })));
    }

    #[test]
    fn parse_rejects_non_finite_score() {
        let r: Result<L> = parse_lattice("UTT u\n0 1 a inf 0.0\n1\n");
        assert!(matches!(r, Err(Error::Parse { .. })));
    }

    #[test]
    fn parse_reports_line_numbers() {
        let r: Result<L> = parse_lattice("UTT u\n0 1 a -1.0\n1\n");
        match r {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {:?}", other.map(|l| l.utterance_id)),
        }
    }

    #[test]
    fn diamond_fixture_shape() {
        let lat = diamond();
        assert_eq!(lat.nodes.len(), 6);
        assert_eq!(lat.arcs.len(), 6);
        assert!(lat.topo_order().is_ok());
        let paths = enumerate_paths(&lat, &unit_scales(), 100).unwrap();
        assert_eq!(paths.len(), 2);
    }

    #[test]
    fn combined_weight_examples() {
        let arc = Arc::new(0, 1, "w", -2.0, -1.0);
        assert_eq!(combined_arc_weight(&arc, &unit_scales()).unwrap(), -3.0);
        let scaled = ScaleConfig::new(0.1, 1.0).unwrap();
        assert!((combined_arc_weight(&arc, &scaled).unwrap() - (-1.2)).abs() < 1e-12);
        let zero = Arc::new(0, 1, "w", 0.0, 0.0);
        assert_eq!(combined_arc_weight(&zero, &ScaleConfig::new(2.5, 0.3).unwrap()).unwrap(), 0.0);
    }

    #[test]
    fn combined_weight_rejects_bad_scales() {
        let arc = Arc::new(0, 1, "w", -2.0, -1.0);
        let bad = ScaleConfig { acoustic_scale: 0.0, lm_scale: 1.0 };
        assert!(matches!(combined_arc_weight(&arc, &bad), Err(Error::NonPositiveScale)));
    }

    #[test]
    fn forward_backward_single_path() {
        let lat: L = parse_lattice("UTT u\n0 1 a -1.0 -0.5\n1 2 b -2.0 -0.25\n2\n").unwrap();
        let (post, _) = forward_backward(&lat, &unit_scales()).unwrap();
        for p in &post.posteriors {
            assert!((p - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_backward_diamond_posteriors() {
        let lat = diamond();
        let (post, total) = forward_backward(&lat, &unit_scales()).unwrap();
        for ai in 0..3 {
            assert!((post.get(ai) - 0.75).abs() < 1e-9);
        }
        for ai in 3..6 {
            assert!((post.get(ai) - 0.25).abs() < 1e-9);
        }
        assert!((total - 1.0f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn forward_backward_matches_enumeration() {
        // Random-ish small lattice with multiple merge points.
        let text = "UTT u\n\
                    0 1 a -1.0 -0.1\n\
                    0 1 b -1.5 -0.2\n\
                    1 2 c -0.5 -0.3\n\
                    1 3 d -0.7 -0.1\n\
                    2 3 e -0.2 -0.4\n\
                    2 3 <eps> -0.9 -0.1\n\
                    3\n";
        let lat: L = parse_lattice(text).unwrap();
        let scales = ScaleConfig::new(0.7, 1.3).unwrap();
        let (post, total) = forward_backward(&lat, &scales).unwrap();
        let paths = enumerate_paths(&lat, &scales, 100).unwrap();
        let z = paths.iter().fold(f64::NEG_INFINITY, |acc, (_, w)| log_add(acc, *w));
        assert!((total - z).abs() < 1e-9);
        for (ai, _) in lat.arcs.iter().enumerate() {
            let mass = paths
                .iter()
                .filter(|(h, _)| h.arc_indices.contains(&ai))
                .fold(f64::NEG_INFINITY, |acc, (_, w)| log_add(acc, *w));
            let expect = (mass - z).exp();
            assert!((post.get(ai) - expect).abs() < 1e-9, "arc {}", ai);
        }
    }

    #[test]
    fn forward_backward_errors_without_path() {
        let lat = Lattice {
            utterance_id: "u".into(),
            nodes: vec![Node { id: 0, time: 0 }, Node { id: 1, time: 1 }, Node { id: 2, time: 2 }],
            arcs: vec![Arc::new(0, 1, "a", -1.0, 0.0)],
            start_node: 0,
            final_nodes: BTreeSet::from([2]),
        };
        assert!(matches!(forward_backward(&lat, &unit_scales()), Err(Error::NoPath { .. })));
    }

    #[test]
    fn best_path_diamond_prefers_upper() {
        let hyp = best_path(&diamond(), &unit_scales()).unwrap();
        assert_eq!(hyp.words, ["a", "b", "c"]);
        assert!((hyp.total_score - 0.75f64.ln()).abs() < 1e-12);
        assert_eq!(hyp.word_times, [(0, 10), (10, 20), (20, 30)]);
    }

    #[test]
    fn best_path_tie_breaks_lexicographically() {
        let text = "UTT u\n0 1 b -1.0 0.0\n0 1 a -1.0 0.0\n1\n";
        let lat: L = parse_lattice(text).unwrap();
        let hyp = best_path(&lat, &unit_scales()).unwrap();
        assert_eq!(hyp.words, ["a"]);
    }

    #[test]
    fn best_path_scale_invariance_of_argmax() {
        let lat = diamond();
        let a = best_path(&lat, &ScaleConfig::new(0.3, 0.9).unwrap()).unwrap();
        let b = best_path(&lat, &ScaleConfig::new(0.3 * 7.0, 0.9 * 7.0).unwrap()).unwrap();
        assert_eq!(a.words, b.words);
    }

    #[test]
    fn n_best_diamond() {
        let hyps = n_best(&diamond(), &unit_scales(), 2).unwrap();
        assert_eq!(hyps.len(), 2);
        assert_eq!(hyps[0].words, ["a", "b", "c"]);
        assert_eq!(hyps[1].words, ["x", "y", "z"]);
        let top = n_best(&diamond(), &unit_scales(), 1).unwrap();
        assert_eq!(top[0], best_path(&diamond(), &unit_scales()).unwrap());
    }

    #[test]
    fn n_best_exhausts_single_path() {
        let lat: L = parse_lattice("UTT u\n0 1 a -1.0 -0.5\n1\n").unwrap();
        let hyps = n_best(&lat, &unit_scales(), 10).unwrap();
        assert_eq!(hyps.len(), 1);
    }

    #[test]
    fn n_best_dedups_word_sequences() {
        // Epsilon variant gives two paths with the same words.
        let text = "UTT u\n0 1 a -1.0 0.0\n1 2 <eps> -5.0 0.0\n1 2 <eps> -0.1 0.0\n2\n";
        let lat: L = parse_lattice(text).unwrap();
        let hyps = n_best(&lat, &unit_scales(), 5).unwrap();
        assert_eq!(hyps.len(), 1);
        assert_eq!(hyps[0].words, ["a"]);
        // Best representative path retains the higher-scoring epsilon arc.
        assert!((hyps[0].total_score - (-1.1)).abs() < 1e-12);
    }

    #[test]
    fn enumerate_counts() {
        assert_eq!(enumerate_paths(&diamond(), &unit_scales(), 10).unwrap().len(), 2);
        let single: L = parse_lattice("UTT u\n0 1 a -1.0 -0.5\n1\n").unwrap();
        assert_eq!(enumerate_paths(&single, &unit_scales(), 10).unwrap().len(), 1);
        // Three stages, two arcs per stage: 8 paths.
        let text = "UTT u\n\
                    0 1 a -1.0 0.0\n0 1 b -1.0 0.0\n\
                    1 2 c -1.0 0.0\n1 2 d -1.0 0.0\n\
                    2 3 e -1.0 0.0\n2 3 f -1.0 0.0\n\
                    3\n";
        let lat: L = parse_lattice(text).unwrap();
        assert_eq!(enumerate_paths(&lat, &unit_scales(), 100).unwrap().len(), 8);
        assert!(matches!(
            enumerate_paths(&lat, &unit_scales(), 4),
            Err(Error::PathCapExceeded { cap: 4 })
        ));
    }

    #[test]
    fn connect_trims_off_path_nodes() {
        let text = "UTT u\n0 1 a -1.0 0.0\n0 2 b -1.0 0.0\n1 3 c -1.0 0.0\n3\n";
        let lat: L = parse_lattice(text).unwrap();
        let trimmed = lat.connect().unwrap();
        assert_eq!(trimmed.nodes.len(), 3);
        assert_eq!(trimmed.arcs.len(), 2);
        assert!(trimmed.validate().is_ok());
    }

    #[test]
    fn serialize_parse_round_trip() {
        let lat = diamond();
        let text = lat.serialize();
        let back: L = parse_lattice(&text).unwrap();
        assert_eq!(back.serialize(), text);
        assert_eq!(back.start_node, lat.start_node);
        assert_eq!(back.final_nodes, lat.final_nodes);
        assert_eq!(back.arcs.len(), lat.arcs.len());
        for (a, b) in lat.arcs.iter().zip(back.arcs.iter()) {
            assert_eq!(a.word, b.word);
            assert!((a.acoustic_score - b.acoustic_score).abs() < 1e-8);
        }
    }

    #[test]
    fn inferred_times_are_longest_path_depth() {
        let text = "UTT u\n0 1 a -1.0 0.0\n1 2 b -1.0 0.0\n0 2 c -1.0 0.0\n2\n";
        let lat: L = parse_lattice(text).unwrap();
        assert_eq!(lat.node_time(0), Some(0));
        assert_eq!(lat.node_time(1), Some(1));
        assert_eq!(lat.node_time(2), Some(2));
    }

    #[test]
    fn cut_sums_are_normalized() {
        let lat = diamond();
        let (post, _) = forward_backward(&lat, &unit_scales()).unwrap();
        for s in posterior_cut_sums(&lat, &post).unwrap() {
            assert!((s - 1.0).abs() < 1e-9);
        }
    }
}
