use latkit::augment::*;
use latkit::eval::classify_nes;
use latkit::neural_lm::{train, TrainConfig};
use latkit::ngram::train_kn;
use latkit::synth::{generate_corpus, paper_ablation_preset};

#[test]
fn probe_probabilities() {
    let cfg = paper_ablation_preset();
    let corpus = generate_corpus(&cfg).unwrap();
    let vocab: std::collections::BTreeSet<String> = corpus.expanded_words();
    let mut kn_vocab = vocab.clone();
    for s in ["<unk>", "<s>", "</s>"] { kn_vocab.insert(s.to_string()); }
    let kn = train_kn::<f64>(&corpus.train, 4, &kn_vocab).unwrap();
    let tc = TrainConfig { dim: 32, epochs: 3, learning_rate: 0.08, seed: 7, letter_features: None };
    let (nlm, rep): (latkit::NeuralLm, _) = train(&corpus.train, vocab.iter().cloned().collect(), &tc).unwrap();
    eprintln!("train ppl: {:?}", rep.epoch_perplexity);

    let inv = classify_nes(&corpus.ne_list(), &corpus.train, cfg.ne_threshold).unwrap();
    let cands = rank_candidates(&corpus.ne_list(), &corpus.locations, &corpus.train, 5).unwrap();
    let plans = build_plans(&inv, &cands, 5, 0.09, 0.01).unwrap();
    let aug = augment_embeddings(&nlm, &plans).unwrap();

    let oov = &corpus.oov_nes[0];
    let rare = &corpus.rare_nes[0];
    let loc_top = &corpus.locations[0];
    let loc_mid = &corpus.locations[corpus.locations.len()/2];
    eprintln!("oov={} rare={} loc_top={} loc_mid={}", oov, rare, loc_top, loc_mid);
    // bias values
    for w in [oov, rare, loc_top, loc_mid] {
        eprintln!("b_o[{}] = {:.3}", w, nlm.b_output[nlm.word_id(w)]);
    }
    // context "go to"
    let h0 = nlm.start_hidden();
    let h1 = nlm.advance(&h0, "go");
    let h2 = nlm.advance(&h1, "to");
    let dist = nlm.log_distribution(&h2);
    let dist_aug = {
        let a0 = aug.start_hidden();
        let a1 = aug.advance(&a0, "go");
        let a2 = aug.advance(&a1, "to");
        aug.log_distribution(&a2)
    };
    let hist: Vec<String> = vec!["<s>".into(), "go".into(), "to".into()];
    for w in [oov, rare, loc_top, loc_mid] {
        let pk = 10f64.powf(kn.logprob(w, &hist));
        let pn = f64::exp(dist[nlm.word_id(w)]);
        let pn_aug = f64::exp(dist_aug[aug.word_id(w)]);
        let interp = 0.6*pk + 0.4*pn;
        let interp_aug = 0.6*pk + 0.4*pn_aug;
        eprintln!("{:>14}: p_kn={:.5} p_nlm={:.5} p_nlm_aug={:.5} interp={:.5} interp_aug={:.5} ln(interp_aug)={:.2}",
            w, pk, pn, pn_aug, interp, interp_aug, interp_aug.ln());
    }
}
