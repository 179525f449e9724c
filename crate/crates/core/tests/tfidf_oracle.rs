use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rumour_stance::features::{fit_tfidf, transform_tfidf, TfidfConfig};

/// Direct recomputation: vocabulary, document frequency, tf·idf and norm with
/// nothing shared with the library except the documented formula.
fn brute_force(docs: &[String], query: &str) -> (Vec<String>, Vec<f64>) {
    let split = |d: &str| -> Vec<String> { d.split(' ').filter(|t| !t.is_empty()).map(str::to_lowercase).collect() };
    let mut vocab: Vec<String> = docs.iter().flat_map(|d| split(d)).collect();
    vocab.sort();
    vocab.dedup();
    let n = docs.len() as f64;
    let q = split(query);
    let mut out = Vec::new();
    for term in &vocab {
        let df = docs.iter().filter(|d| split(d).contains(term)).count() as f64;
        let idf = ((1.0 + n) / (1.0 + df)).ln() + 1.0;
        let tf = q.iter().filter(|t| *t == term).count() as f64;
        out.push(tf * idf);
    }
    let norm = out.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        out.iter_mut().for_each(|v| *v /= norm);
    }
    (vocab, out)
}

#[test]
fn matches_brute_force_on_random_corpora() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let terms = ["alpha", "Beta", "gamma", "delta", "eps", "zeta", "Eta", "theta", "iota", "kappa"];
    for case in 0..200 {
        let n_terms = rng.random_range(1..=terms.len());
        let pick = |rng: &mut ChaCha8Rng, len: usize| -> String {
            (0..len).map(|_| terms[rng.random_range(0..n_terms)]).collect::<Vec<_>>().join(" ")
        };
        let n_docs = rng.random_range(1..=5);
        let docs: Vec<String> = (0..n_docs)
            .map(|_| {
                let len = rng.random_range(1..8);
                pick(&mut rng, len)
            })
            .collect();
        let model = fit_tfidf(&docs, &TfidfConfig::default()).unwrap();
        let queries = [docs[0].clone(), pick(&mut rng, 6), "unseen words only".to_string(), String::new()];
        for q in &queries {
            let (vocab, expected) = brute_force(&docs, q);
            assert_eq!(model.terms, vocab, "case {case}");
            let got = transform_tfidf(&model, q).to_dense();
            for (g, e) in got.iter().zip(&expected) {
                assert!((g - e).abs() <= 1e-12, "case {case} query {q:?}: {g} vs {e}");
            }
            let norm = got.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(norm == 0.0 || (norm - 1.0).abs() < 1e-9);
        }
    }
}
