use std::collections::BTreeMap;

use super::*;
use crate::cnbuild::{Arc, Bin, ConfusionNetwork};
use crate::text::{Vocabulary, BOS, DELETE, EOS, UNK};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_owned).collect()
}

fn corpus(lines: &[&str]) -> Vec<Vec<String>> {
    lines.iter().map(|l| toks(l)).collect()
}

fn cn(bins: &[&[(&str, f64)]]) -> ConfusionNetwork {
    ConfusionNetwork {
        source_id: "x".into(),
        bins: bins
            .iter()
            .map(|b| Bin::new(b.iter().map(|&(t, s)| Arc::new(t, s)).collect()))
            .collect(),
    }
}

fn exact() -> CnCountOptions {
    CnCountOptions {
        order: 3,
        eps: 0.0,
        max_skip: None,
    }
}

#[test]
fn text_bigram_counts() {
    let c = count_text(&corpus(&["a b"]), 2);
    let bigrams: Vec<(String, f64)> = c.grams(2).iter().map(|(g, ps)| (g.join(" "), ps.iter().sum())).collect();
    assert_eq!(
        bigrams,
        vec![("<s> a".into(), 1.0), ("a b".into(), 1.0), ("b </s>".into(), 1.0)]
    );
}

#[test]
fn duplicated_sentence_doubles_occurrences() {
    let once = count_text(&corpus(&["x y z"]), 3);
    let twice = count_text(&corpus(&["x y z", "x y z"]), 3);
    for k in 1..=3 {
        for (g, ps) in once.grams(k) {
            assert_eq!(twice.grams(k)[g].len(), 2 * ps.len());
        }
    }
}

#[test]
fn text_counts_match_naive_recount() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let words = ["a", "b", "c", "d", "e", "f"];
    let sentences: Vec<Vec<String>> = (0..100)
        .map(|_| {
            let len = rng.gen_range(0..9);
            (0..len).map(|_| words[rng.gen_range(0..words.len())].to_owned()).collect()
        })
        .collect();
    let counts = count_text(&sentences, 3);
    let mut naive: BTreeMap<String, usize> = BTreeMap::new();
    for s in &sentences {
        let padded = format!("<s> {} </s>", s.join(" "));
        let w: Vec<&str> = padded.split_whitespace().collect();
        for k in 1..=3 {
            for i in 0..w.len().saturating_sub(k - 1) {
                *naive.entry(w[i..i + k].join(" ")).or_default() += 1;
            }
        }
    }
    let mut ours: BTreeMap<String, usize> = BTreeMap::new();
    for k in 1..=3 {
        for (g, ps) in counts.grams(k) {
            assert!(ps.iter().all(|&p| p == 1.0));
            ours.insert(g.join(" "), ps.len());
        }
    }
    assert_eq!(ours, naive);
}

#[test]
fn chain_network_counts_equal_text_counts() {
    let sentence = toks("i want it at <d>");
    let chain = ConfusionNetwork::chain("c", &sentence);
    assert_eq!(count_cn(&chain, &CnCountOptions::default()), count_text(&[sentence], 3));
}

#[test]
fn network_counts_are_arc_products() {
    let c = count_cn(&cn(&[&[("a", 0.6), ("b", 0.4)], &[("c", 1.0)]]), &CnCountOptions { order: 2, ..exact() });
    assert!((c.expected(&["a", "c"]) - 0.6).abs() < 1e-12);
    assert!((c.expected(&["b", "c"]) - 0.4).abs() < 1e-12);
    assert!((c.expected(&[BOS, "a"]) - 0.6).abs() < 1e-12);
    assert!((c.expected(&["c", EOS]) - 1.0).abs() < 1e-12);
}

#[test]
fn delete_arcs_bridge_bins() {
    let c = count_cn(
        &cn(&[&[("a", 1.0)], &[("b", 0.7), (DELETE, 0.3)], &[("c", 1.0)]]),
        &CnCountOptions { order: 2, ..exact() },
    );
    assert!((c.expected(&["a", "c"]) - 0.3).abs() < 1e-12);
    assert!((c.expected(&["a", "b"]) - 0.7).abs() < 1e-12);
    assert!((c.expected(&["b"]) - 0.7).abs() < 1e-12);
    assert!(c.occurrences(&[DELETE]).is_none());
}

#[test]
fn skip_depth_and_floor_are_respected() {
    let net = cn(&[
        &[("a", 1.0)],
        &[("b", 0.5), (DELETE, 0.5)],
        &[("c", 0.5), (DELETE, 0.5)],
        &[("d", 1.0)],
    ]);
    let one = count_cn(&net, &CnCountOptions { order: 2, eps: 0.0, max_skip: Some(1) });
    assert_eq!(one.expected(&["a", "d"]), 0.0);
    let deep = count_cn(&net, &CnCountOptions { order: 2, eps: 0.0, max_skip: None });
    assert!((deep.expected(&["a", "d"]) - 0.25).abs() < 1e-12);
    let floored = count_cn(&net, &CnCountOptions { order: 2, eps: 0.3, max_skip: None });
    assert_eq!(floored.expected(&["a", "d"]), 0.0);
}

/// Expected counts by expanding every path of the network.
fn path_expansion(net: &ConfusionNetwork, order: usize) -> BTreeMap<Vec<String>, f64> {
    let mut out = BTreeMap::new();
    let mut stack = vec![(0usize, Vec::<String>::new(), 1.0f64)];
    while let Some((k, words, p)) = stack.pop() {
        if k == net.bins.len() {
            let mut w = vec![BOS.to_owned()];
            w.extend(words);
            w.push(EOS.to_owned());
            for n in 1..=order {
                for g in w.windows(n) {
                    *out.entry(g.to_vec()).or_insert(0.0) += p;
                }
            }
            continue;
        }
        for arc in &net.bins[k].arcs {
            let mut next = words.clone();
            if arc.token != DELETE {
                next.push(arc.token.clone());
            }
            stack.push((k + 1, next, p * arc.score));
        }
    }
    out
}

fn arb_network() -> impl Strategy<Value = ConfusionNetwork> {
    let arc = (prop_oneof![Just("a"), Just("b"), Just("c"), Just(DELETE)], 0.05f64..1.0);
    let bin = proptest::collection::vec(arc, 1..4).prop_filter_map("needs a word", |arcs| {
        let mut merged: BTreeMap<&str, f64> = BTreeMap::new();
        for (t, s) in arcs {
            *merged.entry(t).or_default() += s;
        }
        if merged.keys().all(|t| *t == DELETE) {
            return None;
        }
        let total: f64 = merged.values().sum();
        Some(Bin::new(merged.into_iter().map(|(t, s)| Arc::new(t, s / total)).collect()))
    });
    proptest::collection::vec(bin, 1..6).prop_map(|bins| ConfusionNetwork {
        source_id: "r".into(),
        bins,
    })
}

/// Exhaustive enumeration of every outcome of the occurrences.
fn enumerate_counts(ps: &[f64]) -> Vec<f64> {
    let mut dist = vec![0.0; ps.len() + 1];
    for mask in 0u32..(1 << ps.len()) {
        let mut p = 1.0;
        for (i, &q) in ps.iter().enumerate() {
            p *= if mask >> i & 1 == 1 { q } else { 1.0 - q };
        }
        dist[mask.count_ones() as usize] += p;
    }
    dist
}

proptest! {
    #[test]
    fn network_counts_match_path_expansion(net in arb_network()) {
        let counts = count_cn(&net, &exact());
        let oracle = path_expansion(&net, 3);
        for k in 1..=3 {
            for (g, ps) in counts.grams(k) {
                let want = oracle.get(g).copied().unwrap_or(0.0);
                let got: f64 = ps.iter().sum();
                prop_assert!((got - want).abs() < 1e-9, "{:?}: {} vs {}", g, got, want);
            }
        }
        for (g, want) in &oracle {
            prop_assert!((counts.expected(g) - want).abs() < 1e-9, "{:?}", g);
        }
        // totals per order = expected number of n-gram slots
        for k in 1..=3usize {
            let total: f64 = counts.grams(k).values().flatten().sum();
            let slots: f64 = oracle.iter().filter(|(g, _)| g.len() == k).map(|(_, v)| v).sum();
            prop_assert!((total - slots).abs() < 1e-9);
        }
    }

    #[test]
    fn poisson_binomial_matches_enumeration(ps in proptest::collection::vec(0.001f64..=1.0, 0..=12)) {
        let full = enumerate_counts(&ps);
        let dp = poisson_binomial(&ps, ps.len());
        for (a, b) in dp.iter().zip(&full) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        let lumped = poisson_binomial(&ps, 4);
        prop_assert!((lumped.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for k in 0..4 {
            prop_assert!((lumped[k] - full.get(k).copied().unwrap_or(0.0)).abs() < 1e-12);
        }
        let tail: f64 = full.iter().skip(4).sum();
        prop_assert!((lumped[4] - tail).abs() < 1e-12);
    }
}

#[test]
fn poisson_binomial_examples() {
    assert_eq!(poisson_binomial(&[1.0, 1.0], 4), vec![0.0, 0.0, 1.0, 0.0, 0.0]);
    assert_eq!(poisson_binomial(&[0.5, 0.5], 4), vec![0.25, 0.5, 0.25, 0.0, 0.0]);
    assert_eq!(poisson_binomial(&[], 2), vec![1.0, 0.0, 0.0]);
}

#[test]
fn discount_arithmetic() {
    let d = Discounts::from_counts_of_counts([100.0, 50.0, 30.0, 20.0]).unwrap();
    assert!((d.d1 - 0.5).abs() < 1e-12);
    assert!((d.d2 - 1.1).abs() < 1e-12);
    assert!((d.d3 - 5.0 / 3.0).abs() < 1e-12);
    assert!(Discounts::from_counts_of_counts([10.0, 0.0, 3.0, 1.0]).is_none());
    // n3 large relative to n2 drives d2 below zero
    assert!(Discounts::from_counts_of_counts([10.0, 2.0, 9.0, 1.0]).is_none());
    assert_eq!(estimate_discounts([[1.0].as_slice()]), Discounts::FALLBACK);
}

#[test]
fn integer_counts_give_classical_discounts() {
    // counts 1,1,1,1,2,2,3,4,4,5 -> n1=4 n2=2 n3=1 n4=2
    let lists: Vec<Vec<f64>> = [1, 1, 1, 1, 2, 2, 3, 4, 4, 5].iter().map(|&c| vec![1.0; c]).collect();
    let n = counts_of_counts(lists.iter().map(Vec::as_slice));
    assert_eq!(n, [4.0, 2.0, 1.0, 2.0]);
    // 3 - 4 * y * 2 / 1 = -1 is not a usable discount
    assert_eq!(estimate_discounts(lists.iter().map(Vec::as_slice)), Discounts::FALLBACK);

    // add a count-3 type: n3 = 2, d3 = 3 - 4 * y * 2 / 2 = 1
    let mut lists = lists;
    lists.push(vec![1.0; 3]);
    let y = 4.0 / 8.0;
    let d = estimate_discounts(lists.iter().map(Vec::as_slice));
    assert!((d.d1 - (1.0 - 2.0 * y * 2.0 / 4.0)).abs() < 1e-12);
    assert!((d.d2 - (2.0 - 3.0 * y * 2.0 / 2.0)).abs() < 1e-12);
    assert!((d.d3 - 1.0).abs() < 1e-12);
}

#[test]
fn expected_counts_of_counts_match_enumeration() {
    let types: [&[f64]; 5] = [&[0.9, 0.4], &[0.2], &[1.0, 1.0, 0.5], &[0.3, 0.3, 0.3, 0.3], &[0.7, 0.6, 0.5, 0.4, 0.9]];
    let n = counts_of_counts(types.iter().copied());
    let mut want = [0.0; 4];
    for ps in types {
        let full = enumerate_counts(ps);
        for k in 1..=4 {
            want[k - 1] += full.get(k).copied().unwrap_or(0.0);
        }
    }
    for k in 0..4 {
        assert!((n[k] - want[k]).abs() < 1e-12);
    }
}

#[test]
fn hand_computed_bigram_model() {
    let kn = train_kn(&count_text(&corpus(&["a b", "a c"]), 2), None).unwrap();
    let m = &kn.model;
    let p = |ctx: &[&str], w: &str| m.prob(ctx, w).unwrap();
    assert_eq!(kn.discounts, vec![Discounts::FALLBACK; 2]);
    assert!((p(&[], "a") - 0.17).abs() < 1e-12);
    assert!((p(&[], EOS) - 0.37).abs() < 1e-12);
    assert!((p(&[], UNK) - 0.12).abs() < 1e-12);
    assert!((p(&["a"], "b") - 0.2525).abs() < 1e-12);
    assert!((p(&[BOS], "a") - 0.68875).abs() < 1e-12);
    assert!((p(&["b"], EOS) - 0.5275).abs() < 1e-12);
    // unseen bigram backs off through bow(a) = 0.75
    assert!((p(&["a"], EOS) - 0.75 * 0.37).abs() < 1e-12);
    assert!((m.entry(&["a"]).unwrap().bow.unwrap() - 0.75f64.log10()).abs() < 1e-12);
    assert_eq!(m.entry(&[BOS]).unwrap().logp, LOG10_ZERO);
}

fn training_corpus() -> Vec<Vec<String>> {
    corpus(&[
        "i want to book a table",
        "i want to book a room",
        "i would like a table for two",
        "can i book a room for tonight",
        "a table for two please",
        "i want a room",
        "book a table at <d>",
        "can you book a table",
        "i would like to book",
        "a room for two please",
    ])
}

fn assert_normalized(model: &NGramModel, contexts: &[Vec<String>]) {
    let vocab: Vec<String> = model.vocab().filter(|w| *w != BOS).map(str::to_owned).collect();
    for ctx in contexts {
        let total: f64 = vocab.iter().map(|w| model.prob(ctx, w).unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-6, "context {ctx:?}: {total}");
    }
}

fn all_contexts(model: &NGramModel) -> Vec<Vec<String>> {
    let mut out = vec![vec![]];
    for k in 1..model.order() {
        out.extend(model.entries(k).iter().filter(|(_, e)| e.bow.is_some()).map(|(g, _)| g.clone()));
    }
    out.push(toks("never seen"));
    out
}

#[test]
fn text_models_normalize() {
    let vocab = Vocabulary::build(&training_corpus(), 1).unwrap();
    for order in 1..=4 {
        let kn = train_kn(&count_text(&training_corpus(), order), Some(&vocab)).unwrap();
        assert_normalized(&kn.model, &all_contexts(&kn.model));
    }
}

#[test]
fn network_models_normalize() {
    let nets = [
        cn(&[&[("i", 0.7), ("we", 0.3)], &[("want", 0.6), ("need", 0.3), (DELETE, 0.1)], &[("a", 1.0)], &[("table", 0.8), ("room", 0.2)]]),
        cn(&[&[("a", 0.5), ("the", 0.5)], &[("room", 0.9), (DELETE, 0.1)], &[("please", 1.0)]]),
    ];
    let mut counts = FractionalCounts::new(3);
    for net in &nets {
        add_cn_counts(&mut counts, net, &CnCountOptions::default());
    }
    let kn = train_kn(&counts, None).unwrap();
    for d in &kn.discounts {
        assert!(d.d1 >= 0.0 && d.d1 < 2.0 && d.d2 < 3.0 && d.d3 < 4.0);
    }
    assert_normalized(&kn.model, &all_contexts(&kn.model));
}

#[test]
fn chain_networks_reproduce_text_arpa() {
    let text = training_corpus();
    let mut from_cn = FractionalCounts::new(3);
    for s in &text {
        add_cn_counts(&mut from_cn, &ConfusionNetwork::chain("c", s), &CnCountOptions::default());
    }
    let a = train_kn(&count_text(&text, 3), None).unwrap().model;
    let b = train_kn(&from_cn, None).unwrap().model;
    let (mut wa, mut wb) = (Vec::new(), Vec::new());
    a.write_arpa(&mut wa).unwrap();
    b.write_arpa(&mut wb).unwrap();
    assert_eq!(wa, wb);
}

#[test]
fn empty_counts_are_rejected() {
    assert!(matches!(train_kn(&FractionalCounts::new(2), None), Err(NGramError::EmptyCounts)));
}

#[test]
fn uniform_model_perplexity_is_vocab_size() {
    let words = ["a", "b", "c", "d", EOS];
    let m = NGramModel::uniform(&words);
    let test = corpus(&["a b c", "d", "c c a b"]);
    let r = ppl_ngram(&m, &test).unwrap();
    assert_eq!(r.tokens, 3 + 1 + 4 + 3);
    assert!((r.ppl() - 5.0).abs() < 1e-9);
}

#[test]
fn certain_model_has_unit_perplexity() {
    let mut m = NGramModel::new(2);
    for w in ["a", EOS] {
        m.insert(vec![w.into()], Entry { logp: -0.5, bow: Some(0.0) });
    }
    m.insert(vec![BOS.into()], Entry { logp: LOG10_ZERO, bow: Some(0.0) });
    m.insert(toks("<s> a"), Entry { logp: 0.0, bow: None });
    m.insert(toks("a </s>"), Entry { logp: 0.0, bow: None });
    let r = ppl_ngram(&m, &corpus(&["a", "a"])).unwrap();
    assert!((r.ppl() - 1.0).abs() < 1e-12);
}

#[test]
fn perplexity_matches_direct_summation_and_ignores_order() {
    let train = training_corpus();
    let vocab = Vocabulary::build(&train, 1).unwrap();
    let m = train_kn(&count_text(&train, 3), Some(&vocab)).unwrap().model;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let words: Vec<&str> = vocab.tokens()[6..].iter().map(String::as_str).chain([UNK]).collect();
    let test: Vec<Vec<String>> = (0..20)
        .map(|_| (0..rng.gen_range(1..8)).map(|_| words[rng.gen_range(0..words.len())].to_owned()).collect())
        .collect();
    let r = ppl_ngram(&m, &test).unwrap();

    let mut sum = 0.0;
    let mut n = 0usize;
    for s in &test {
        let mut hist = vec![BOS.to_owned()];
        for t in s.iter().chain(std::iter::once(&EOS.to_owned())) {
            let start = hist.len().saturating_sub(2);
            sum += m.prob(&hist[start..], t).unwrap().ln();
            n += 1;
            hist.push(t.clone());
        }
    }
    assert_eq!(n, r.tokens);
    assert!(((-sum / n as f64).exp() - r.ppl()).abs() < 1e-9);

    let mut reversed = test.clone();
    reversed.reverse();
    assert!((ppl_ngram(&m, &reversed).unwrap().ppl() - r.ppl()).abs() < 1e-9);
}

#[test]
fn unknown_tokens_are_errors() {
    let m = NGramModel::uniform(&["a", EOS]);
    assert!(matches!(ppl_ngram(&m, &corpus(&["zz"])), Err(NGramError::UnknownToken(t)) if t == "zz"));
}

#[test]
fn arpa_round_trip() {
    let train = training_corpus();
    let m = train_kn(&count_text(&train, 3), None).unwrap().model;
    let mut text = Vec::new();
    m.write_arpa(&mut text).unwrap();
    let back = NGramModel::read_arpa(text.as_slice()).unwrap();
    let mut again = Vec::new();
    back.write_arpa(&mut again).unwrap();
    assert_eq!(text, again);
    for k in 1..=3 {
        assert_eq!(back.len(k), m.len(k));
        for (g, e) in m.entries(k) {
            let f = back.entry(g).unwrap();
            assert!((f.logp - e.logp).abs() < 1e-6);
            assert_eq!(f.bow.is_some(), e.bow.is_some());
        }
    }
    let s = String::from_utf8(text).unwrap();
    for k in 1..=3 {
        let declared = format!("ngram {k}={}", m.len(k));
        assert!(s.contains(&declared));
    }

    let uni = NGramModel::uniform(&["a", "b", EOS]);
    let mut t = Vec::new();
    uni.write_arpa(&mut t).unwrap();
    assert_eq!(
        String::from_utf8(t.clone()).unwrap(),
        "\\data\\\nngram 1=3\n\n\\1-grams:\n-0.4771213\t</s>\n-0.4771213\ta\n-0.4771213\tb\n\n\\end\\\n"
    );
    assert_eq!(NGramModel::read_arpa(t.as_slice()).unwrap().entries(1), NGramModel::read_arpa(t.as_slice()).unwrap().entries(1));
}

#[test]
fn arpa_parse_errors() {
    let bad = [
        ("\\data\\\nngram 1=1\n\n\\1-grams:\nxx\ta\n\n\\end\\\n", 5),
        ("\\data\\\nngram 1=1\n\n\\2-grams:\n-1\ta b\n\\end\\\n", 4),
        ("\\data\\\nngram 1=1\n\n\\1-grams:\n-1\ta b c\n\\end\\\n", 5),
    ];
    for (text, line) in bad {
        match NGramModel::read_arpa(text.as_bytes()) {
            Err(NGramError::Parse { line: l, .. }) => assert_eq!(l, line, "{text:?}"),
            other => panic!("{text:?}: {other:?}"),
        }
    }
    let mismatch = "\\data\\\nngram 1=2\n\n\\1-grams:\n-1\ta\n\n\\end\\\n";
    assert!(NGramModel::read_arpa(mismatch.as_bytes()).is_err());
    let unterminated = "\\data\\\nngram 1=1\n\n\\1-grams:\n-1\ta\n";
    assert!(NGramModel::read_arpa(unterminated.as_bytes()).is_err());
}

#[test]
fn counts_dump_format() {
    let c = count_cn(&cn(&[&[("a", 0.5), ("b", 0.5)]]), &CnCountOptions { order: 1, ..exact() });
    let mut out = Vec::new();
    c.write_dump(&mut out).unwrap();
    assert_eq!(
        String::from_utf8(out).unwrap(),
        "</s>\t1.000000\t1\n<s>\t1.000000\t1\na\t0.500000\t1\nb\t0.500000\t1\n"
    );
}

#[test]
fn merging_concatenates_occurrences() {
    let mut a = count_text(&corpus(&["a b"]), 2);
    let b = count_text(&corpus(&["a c"]), 2);
    a.merge(b);
    assert_eq!(a, count_text(&corpus(&["a b", "a c"]), 2));
}
