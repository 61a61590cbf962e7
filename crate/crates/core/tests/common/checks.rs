//! Property checks shared by the oracle tests and the acceptance run.
//! Each panics on the first violation.

use cnlm::cnbuild::{build_cn, validate_cn, CnParams, ConfusionNetwork, Validation};
use cnlm::decoder::{beam_search, diverse_beam_search, Hypothesis};
use cnlm::nbest::postprocess_nbest;
use cnlm::ngram::{add_cn_counts, count_text, poisson_binomial, ppl_ngram, train_kn, CnCountOptions, FractionalCounts, NGramModel};
use cnlm::rnn::{gradient_check, loss_and_grad, ppl_rnn, Pooling, RnnLmParams, Sequence};
use cnlm::text::{Vocabulary, BOS, DELETE, EOS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

const TEN_SENTENCES: &[&str] = &[
    "no they are outside",
    "no they are at the outside",
    "they are on the terrace",
    "we are outside",
    "no we are inside",
    "they are inside",
    "are they outside",
    "no no they are outside",
    "yes they are at the station",
    "yes we are on the terrace",
];

fn all_contexts(model: &NGramModel) -> Vec<Vec<String>> {
    let mut out = vec![vec![]];
    for k in 1..model.order() {
        out.extend(model.entries(k).keys().cloned());
    }
    // histories the model never saw
    out.push(vec!["station".into(), "no".into()]);
    out.push(vec!["terrace".into()]);
    out
}

pub fn integer_count_model_matches_textbook_kneser_ney() {
    let text = corpus(TEN_SENTENCES);
    for order in 1..=4 {
        let kn = train_kn(&count_text(&text, order), None).unwrap();
        let oracle = KnOracle::train(&text, order);
        for (ours, theirs) in kn.discounts.iter().zip(oracle.discounts()) {
            assert!((ours.d1 - theirs[0]).abs() < 1e-12);
            assert!((ours.d2 - theirs[1]).abs() < 1e-12);
            assert!((ours.d3 - theirs[2]).abs() < 1e-12);
        }
        let words: Vec<String> = kn.model.vocab().filter(|w| *w != BOS).map(str::to_owned).collect();
        assert_eq!(words.len(), oracle.vocab_size());
        for ctx in all_contexts(&kn.model) {
            let ctx: Vec<&str> = ctx.iter().map(String::as_str).collect();
            for w in &words {
                let ours = kn.model.log10_prob(&ctx, w).unwrap();
                let theirs = oracle.prob(&ctx, w).log10();
                assert!((ours - theirs).abs() < 1e-9, "order {order}: P({w} | {ctx:?}) {ours} vs {theirs}");
            }
        }
    }
}

pub fn chain_networks_give_the_text_model() {
    let text = corpus(TEN_SENTENCES);
    let opts = CnCountOptions {
        order: 3,
        ..CnCountOptions::default()
    };
    let mut counts = FractionalCounts::new(3);
    for (i, s) in text.iter().enumerate() {
        add_cn_counts(&mut counts, &ConfusionNetwork::chain(i.to_string(), s), &opts);
    }
    let from_cn = train_kn(&counts, None).unwrap().model;
    let from_text = train_kn(&count_text(&text, 3), None).unwrap().model;
    for k in 1..=3 {
        let (a, b) = (from_cn.entries(k), from_text.entries(k));
        assert_eq!(a.len(), b.len());
        for ((ga, ea), (gb, eb)) in a.iter().zip(b) {
            assert_eq!(ga, gb);
            assert!((ea.logp - eb.logp).abs() < 1e-6);
            match (ea.bow, eb.bow) {
                (Some(x), Some(y)) => assert!((x - y).abs() < 1e-6),
                (x, y) => assert_eq!(x, y),
            }
        }
    }
}

pub fn poisson_binomial_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..1000 {
        let k = rng.gen_range(0..=12);
        let ps: Vec<f64> = (0..k).map(|_| rng.gen::<f64>()).collect();
        let want = poisson_binomial_enumerated(&ps);
        let got = poisson_binomial(&ps, k);
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

fn assert_same(a: &[Hypothesis], b: &[Hypothesis]) {
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(b) {
        assert_eq!(x.tokens, y.tokens);
        assert!((x.loglik - y.loglik).abs() < 1e-9);
    }
}

pub fn wide_beam_is_exhaustive_and_narrow_beam_is_greedy() {
    for seed in 0..20 {
        for (words, max_len) in [(&["a", "b", "c", "d"][..], 3), (&["a", "b"][..], 4)] {
            let scorer = HashScorer::new(words, seed);
            let all = enumerate_paths(&scorer, max_len);
            let wide = beam_search(&scorer, &[], all.len(), max_len).unwrap();
            assert_same(&wide.hypotheses, &all);
            let one = beam_search(&scorer, &[], 1, max_len).unwrap();
            assert_same(&one.hypotheses, &[greedy(&scorer, max_len)]);
        }
    }
}

pub fn single_group_diverse_search_is_beam_search() {
    for seed in 0..20 {
        let scorer = HashScorer::new(&["a", "b", "c", "d", "e"], seed);
        for beam in [1, 3, 8] {
            let plain = beam_search(&scorer, &[], beam, 4).unwrap();
            let dbs = diverse_beam_search(&scorer, &[], beam, 1, 0.7, 4).unwrap();
            assert_eq!(plain.hypotheses, dbs.hypotheses);
        }
    }
}

pub fn networks_from_random_lists_are_valid_and_contain_every_hypothesis() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let uncapped = CnParams {
        max_arcs: None,
        vocab: None,
    };
    for i in 0..500 {
        let list = postprocess_nbest(&random_nbest(&mut rng, i, 20), 1.0).unwrap();

        let cn = build_cn(&list, &CnParams::default()).unwrap();
        validate_cn(&cn, &Validation::default()).unwrap();
        for bin in &cn.bins {
            let total: f64 = bin.arcs.iter().map(|a| a.score).sum();
            assert!((total - 1.0).abs() < 1e-9);
            assert!(bin.arcs.len() <= 5);
            assert!(bin.arcs.windows(2).all(|w| w[0].score >= w[1].score));
            let deletes = bin.arcs.iter().filter(|a| a.token == DELETE).count();
            assert!(deletes <= 1 && deletes < bin.arcs.len());
        }

        let full = build_cn(&list, &uncapped).unwrap();
        validate_cn(&full, &Validation { max_arcs: None, ..Validation::default() }).unwrap();
        for h in &list.hypotheses {
            assert!(is_path(&full, &h.tokens), "{:?} not in network {i}", h.tokens);
        }
        if full.len() <= 6 {
            assert!((total_path_mass(&full) - 1.0).abs() < 1e-6);
        }
    }
}

/// Uniform weights in ±1: large enough that few gradient components fall
/// into the rounding noise of a 1e-5 difference quotient.
fn tiny_model(seed: u64) -> RnnLmParams<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = RnnLmParams::zeros(Vocabulary::from_tokens(["a", "b", "c"]), 3);
    for x in p.as_mut_slice() {
        *x = rng.gen_range(-1.0..1.0);
    }
    p
}

fn tiny_network() -> ConfusionNetwork {
    cnlm::cnbuild::parse_cn(
        "name 1\nnumaligns 3\nalign 0 a 0.7 b 0.3\nalign 1 *DELETE* 0.6 c 0.4\nalign 2 b 0.5 a 0.3 c 0.2\n",
    )
    .unwrap()
}

pub fn gradients_match_finite_differences() {
    for seed in 0..5 {
        let p = tiny_model(seed);
        let text = Sequence::from_text(&p.encode(&["a", "c", "b"]).unwrap());
        let net = Sequence::from_cn(&tiny_network(), p.vocab()).unwrap();
        let err = gradient_check(&p, &[text], Pooling::WeightedMean, 1e-5, None).unwrap();
        assert!(err < 1e-4, "text loss: {err}");
        for pooling in [Pooling::WeightedMean, Pooling::Mean, Pooling::Max] {
            let err = gradient_check(&p, std::slice::from_ref(&net), pooling, 1e-5, None).unwrap();
            assert!(err < 1e-4, "{pooling:?} network loss: {err}");
        }
    }
}

fn central_difference(p: &RnnLmParams<f64>, seq: &Sequence, pooling: Pooling, i: usize, h: f64) -> f64 {
    let mut scratch = vec![0.0; p.as_slice().len()];
    let mut loss_at = |x: f64| {
        let mut q = p.clone();
        q.as_mut_slice()[i] = x;
        loss_and_grad(&q, seq, pooling, &mut scratch).unwrap()
    };
    let x = p.as_slice()[i];
    (loss_at(x + h) - loss_at(x - h)) / (2.0 * h)
}

/// Richardson-extrapolated differences are accurate to O(h^4), which pins
/// down even the components too small for the plain check. Max pooling is
/// left out: its kinks are within reach of the wider steps.
pub fn gradients_match_extrapolated_differences() {
    let net_cn = tiny_network();
    for seed in 0..20 {
        let p = tiny_model(seed);
        let text = Sequence::from_text(&p.encode(&["a", "c", "b"]).unwrap());
        let net = Sequence::from_cn(&net_cn, p.vocab()).unwrap();
        for (seq, pooling) in [(&text, Pooling::WeightedMean), (&net, Pooling::WeightedMean), (&net, Pooling::Mean)] {
            let mut grad = vec![0.0; p.as_slice().len()];
            loss_and_grad(&p, seq, pooling, &mut grad).unwrap();
            for (i, &g) in grad.iter().enumerate() {
                let (wide, narrow) = (
                    central_difference(&p, seq, pooling, i, 2e-3),
                    central_difference(&p, seq, pooling, i, 1e-3),
                );
                let numeric = (4.0 * narrow - wide) / 3.0;
                let err = (numeric - g).abs() / numeric.abs().max(g.abs()).max(1e-8);
                assert!(err < 1e-5, "seed {seed} {pooling:?} parameter {i}: {g} vs {numeric}");
            }
        }
    }
}

pub fn uniform_models_have_vocabulary_size_perplexity() {
    let words = ["a", "b", "c", "d"];
    let test = corpus(&["a b", "c d a", "d"]);

    let mut predictable: Vec<&str> = words.to_vec();
    predictable.push(EOS);
    let ngram = NGramModel::uniform(&predictable);
    let ppl = ppl_ngram(&ngram, &test).unwrap().ppl();
    assert!((ppl - predictable.len() as f64).abs() < 1e-9);

    // all-zero parameters give equal logits over the whole vocabulary
    let rnn = RnnLmParams::<f64>::zeros(Vocabulary::from_tokens(words), 4);
    let ppl = ppl_rnn(&rnn, &test).unwrap().ppl();
    assert!((ppl - rnn.vocab_size() as f64).abs() < 1e-9);
}

pub fn perplexities_agree_with_direct_recomputation() {
    let text = corpus(TEN_SENTENCES);
    let test = corpus(&["no they are on the outside", "we are at the station", "yes"]);

    let model = train_kn(&count_text(&text, 3), None).unwrap().model;
    let oracle = KnOracle::train(&text, 3);
    let (mut logprob, mut n) = (0.0, 0usize);
    for s in &test {
        let mut hist = vec![BOS];
        for w in s.iter().map(String::as_str).chain([EOS]) {
            logprob += oracle.prob(&hist, w).ln();
            n += 1;
            hist.push(w);
        }
    }
    let want = (-logprob / n as f64).exp();
    let got = ppl_ngram(&model, &test).unwrap().ppl();
    assert!((got - want).abs() < 1e-9 * want);

    let p = tiny_model(9);
    let test = corpus(&["a b c", "c", "b b a c"]);
    let (mut logprob, mut n) = (0.0, 0usize);
    for s in &test {
        logprob += gru_sentence_logprob(&p, &p.encode(s).unwrap());
        n += s.len() + 1;
    }
    let want = (-logprob / n as f64).exp();
    let got = ppl_rnn(&p, &test).unwrap().ppl();
    assert!((got - want).abs() < 1e-9 * want);
}
