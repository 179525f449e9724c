mod common;

use common::{cue_pairs, rel_err};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rumour_stance::encoder::{AnyEncoder, Encoder, PretrainedAdapter, ToyEncoder};
use rumour_stance::feature_model::{train_mlp, vectorize_pairs};
use rumour_stance::features::{fit_pca_sparse, fit_tfidf, PairText, PcaOptions, TfidfConfig, TfidfModel};
use rumour_stance::fusion::{
    batch_loss, batch_loss_and_grads, feature_vector, fusion_forward, predict, train_ensemble, FeatureSource,
    FeatureSourceKind, SubModels,
};
use rumour_stance::{CostWeights, EnsembleHyperparams, FusionModel, Label, MlpHyperparams, MlpModel, SequencePair};

fn fit(pairs: &[SequencePair]) -> TfidfModel {
    let docs: Vec<String> = pairs.iter().map(|p| PairText::FirstAndSecond.text_of(p)).collect();
    fit_tfidf(&docs, &TfidfConfig::default()).unwrap()
}

fn trained_mlp(pairs: &[SequencePair], hidden: usize) -> MlpModel {
    let tfidf = fit(pairs);
    let data = vectorize_pairs(&tfidf, PairText::FirstAndSecond, pairs);
    let hp = MlpHyperparams { hidden_units: hidden, batch_size: 4, seed: 1, ..Default::default() };
    train_mlp(&data, &[], tfidf, PairText::FirstAndSecond, &hp).unwrap().0
}

fn random_mlp(rng: &mut ChaCha8Rng, pairs: &[SequencePair], hidden: usize) -> MlpModel {
    let hp = MlpHyperparams { hidden_units: hidden, ..Default::default() };
    MlpModel::init(fit(pairs), PairText::FirstAndSecond, &hp, rng)
}

fn random_weights(rng: &mut ChaCha8Rng) -> CostWeights {
    CostWeights::new([0, 1, 2, 3].map(|_| rng.random_range(0.2..2.0))).unwrap()
}

fn toy(dim: usize, trainable: bool) -> AnyEncoder {
    AnyEncoder::Toy(ToyEncoder::new(dim).trainable(trainable))
}

fn check_param(
    model: &mut FusionModel,
    pairs: &[SequencePair],
    w: &CostWeights,
    analytic: f64,
    tweak: &dyn Fn(&mut FusionModel, f64),
    what: &str,
) {
    let h = 1e-5;
    tweak(model, h);
    let up = batch_loss(model, pairs, w).unwrap();
    tweak(model, -2.0 * h);
    let down = batch_loss(model, pairs, w).unwrap();
    tweak(model, h);
    let numeric = (up - down) / (2.0 * h);
    assert!(rel_err(analytic, numeric) < 1e-4, "{what}: analytic {analytic} numeric {numeric}");
}

#[test]
fn head_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for case in 0..20 {
        let pairs = cue_pairs(rng.random_range(1..6), case);
        let dim = rng.random_range(1..6);
        let source = if case % 2 == 0 {
            FeatureSource::FrozenMlpHidden { mlp: random_mlp(&mut rng, &pairs, 3) }
        } else {
            FeatureSource::None
        };
        let hp = EnsembleHyperparams { seed: case, ..Default::default() };
        let mut m = FusionModel::new(toy(dim, false), source, hp);
        m.b = [0, 1, 2, 3].map(|_| rng.random_range(-0.5..0.5));
        let w = random_weights(&mut rng);
        let (_, g, _) = batch_loss_and_grads(&mut m, &pairs, &w).unwrap();
        for i in 0..m.w.len() {
            check_param(&mut m, &pairs, &w, g.w[i], &|m, d| m.w[i] += d, &format!("case {case} w[{i}]"));
        }
        for k in 0..4 {
            check_param(&mut m, &pairs, &w, g.b[k], &|m, d| m.b[k] += d, &format!("case {case} b[{k}]"));
        }
    }
}

fn joint_mlp(m: &mut FusionModel) -> &mut MlpModel {
    match &mut m.source {
        FeatureSource::JointMlpOutput { mlp } => mlp,
        _ => unreachable!(),
    }
}

#[test]
fn joint_mlp_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    for case in 0..20 {
        let pairs = cue_pairs(rng.random_range(1..5), 100 + case);
        let hid = rng.random_range(1..4);
        let source = FeatureSource::JointMlpOutput { mlp: random_mlp(&mut rng, &pairs, hid) };
        let mut m = FusionModel::new(toy(3, false), source, EnsembleHyperparams { seed: case, ..Default::default() });
        let w = random_weights(&mut rng);
        let (_, _, g) = batch_loss_and_grads(&mut m, &pairs, &w).unwrap();
        let g = g.expect("joint source yields MLP gradients");
        let (d, hid) = (joint_mlp(&mut m).input_dim, joint_mlp(&mut m).hidden_units);
        let w1 = g.w1_dense(d, hid);
        for i in (0..w1.len()).step_by(3) {
            check_param(&mut m, &pairs, &w, w1[i], &|m, dv| joint_mlp(m).w1[i] += dv, &format!("case {case} w1[{i}]"));
        }
        for i in 0..hid {
            check_param(&mut m, &pairs, &w, g.b1[i], &|m, dv| joint_mlp(m).b1[i] += dv, &format!("case {case} b1[{i}]"));
        }
        for i in 0..g.w2.len() {
            check_param(&mut m, &pairs, &w, g.w2[i], &|m, dv| joint_mlp(m).w2[i] += dv, &format!("case {case} w2[{i}]"));
        }
        for k in 0..4 {
            check_param(&mut m, &pairs, &w, g.b2[k], &|m, dv| joint_mlp(m).b2[k] += dv, &format!("case {case} b2[{k}]"));
        }
    }
}

fn toy_mut(m: &mut FusionModel) -> &mut ToyEncoder {
    match &mut m.encoder {
        AnyEncoder::Toy(t) => t,
        _ => unreachable!(),
    }
}

#[test]
fn encoder_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    for case in 0..20 {
        let pairs = cue_pairs(rng.random_range(1..4), 200 + case);
        let mut m = FusionModel::new(toy(4, true), FeatureSource::None, EnsembleHyperparams { seed: case, ..Default::default() });
        let w = random_weights(&mut rng);
        batch_loss_and_grads(&mut m, &pairs, &w).unwrap();
        let mut grads: Vec<(String, Vec<f64>)> = Vec::new();
        m.encoder.visit_params(&mut |name, _, g| grads.push((name.trim_start_matches("token:").to_string(), g.to_vec())));
        assert!(!grads.is_empty());
        for (tok, g) in grads.iter().take(4) {
            for i in 0..4 {
                check_param(&mut m, &pairs, &w, g[i], &|m, d| toy_mut(m).token_param_mut(tok)[i] += d, &format!("case {case} {tok}[{i}]"));
            }
        }
    }
}

fn straight_line(m: &FusionModel, pair: &SequencePair) -> Vec<f64> {
    let enc: Vec<f64> = rumour_stance::encoder::encode_pair(&m.encoder, pair).unwrap().to_f64();
    let feat = feature_vector(&m.source, pair).unwrap();
    let z: Vec<f64> = enc.into_iter().chain(feat).collect();
    let logits: Vec<f64> = (0..4).map(|k| m.b[k] + (0..z.len()).map(|i| z[i] * m.w[i * 4 + k]).sum::<f64>()).collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

#[test]
fn forward_matches_straight_line_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(34);
    let pairs = cue_pairs(12, 34);
    for seed in 0..10 {
        let mlp = random_mlp(&mut rng, &pairs, 5);
        let m = FusionModel::new(toy(6, false), FeatureSource::FrozenMlpHidden { mlp }, EnsembleHyperparams { seed, ..Default::default() });
        for p in &pairs {
            let got = fusion_forward(&m, p).unwrap();
            for (a, b) in got.iter().zip(straight_line(&m, p)) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }
}

#[test]
fn every_source_has_its_declared_width() {
    let pairs = cue_pairs(40, 5);
    let mlp = trained_mlp(&pairs, 128);
    let tfidf = mlp.tfidf.clone();
    // PCA to 128 components needs at least 128 documents over a larger vocabulary
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let docs: Vec<String> =
        (0..200).map(|_| (0..12).map(|_| format!("t{}", rng.random_range(0..300))).collect::<Vec<_>>().join(" ")).collect();
    let big = fit_tfidf(&docs, &TfidfConfig::default()).unwrap();
    let rows: Vec<_> = docs.iter().map(|d| big.transform(d)).collect();
    let pca = fit_pca_sparse(&rows, big.dim(), 128, &PcaOptions::default()).unwrap();

    let expected = [
        (FeatureSourceKind::None, 0),
        (FeatureSourceKind::RawTfidf, tfidf.dim()),
        (FeatureSourceKind::PcaTfidf, 128),
        (FeatureSourceKind::JointMlpOutput, 4),
        (FeatureSourceKind::FrozenMlpHidden, 128),
        (FeatureSourceKind::FrozenMlpOutput, 4),
    ];
    for (kind, width) in expected {
        let subs = SubModels {
            tfidf: Some(if kind == FeatureSourceKind::PcaTfidf { (big.clone(), PairText::FirstAndSecond) } else { (tfidf.clone(), PairText::FirstAndSecond) }),
            pca: Some(pca.clone()),
            mlp: Some(mlp.clone()),
        };
        let source = FeatureSource::build(kind, subs).unwrap();
        assert_eq!(source.feature_dim(), width, "{kind}");
        let v = feature_vector(&source, &pairs[0]).unwrap();
        assert_eq!(v.len(), width, "{kind}");
        match kind {
            FeatureSourceKind::FrozenMlpHidden => assert!(v.iter().all(|x| x.abs() < 1.0)),
            FeatureSourceKind::FrozenMlpOutput | FeatureSourceKind::JointMlpOutput => {
                assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-9)
            }
            _ => {}
        }
        let m = FusionModel::new(AnyEncoder::Toy(ToyEncoder::new(768)), source.clone(), Default::default());
        assert_eq!(m.input_width, 768 + width);
        assert_eq!(fusion_forward(&m, &pairs[0]).unwrap().len(), 4);
        let roberta = AnyEncoder::Pretrained(PretrainedAdapter::named("roberta-base").unwrap());
        assert_eq!(FusionModel::new(roberta, source, Default::default()).input_width, 768 + width);
    }
    let m = FusionModel::new(
        AnyEncoder::Pretrained(PretrainedAdapter::named("roberta-base").unwrap()),
        FeatureSource::FrozenMlpHidden { mlp },
        Default::default(),
    );
    assert_eq!(m.input_width, 896);
}

#[test]
fn frozen_mlp_is_untouched_by_ensemble_training() {
    let pairs = cue_pairs(40, 8);
    let probe = cue_pairs(12, 9);
    let mlp = trained_mlp(&pairs, 16);
    let before_sum = mlp.param_checksum();
    for kind in [FeatureSourceKind::FrozenMlpHidden, FeatureSourceKind::FrozenMlpOutput] {
        let source = FeatureSource::build(kind, SubModels { mlp: Some(mlp.clone()), ..Default::default() }).unwrap();
        let before: Vec<Vec<f64>> = probe.iter().map(|p| feature_vector(&source, p).unwrap()).collect();
        let hp = EnsembleHyperparams { learning_rate: 1e-2, ..Default::default() };
        let (model, _) = train_ensemble(&pairs, &probe, toy(8, true), source, &hp, None).unwrap();
        assert_eq!(model.source.mlp().unwrap().param_checksum(), before_sum);
        let after: Vec<Vec<f64>> = probe.iter().map(|p| feature_vector(&model.source, p).unwrap()).collect();
        assert_eq!(before, after);
    }
}

#[test]
fn toy_ensemble_learns_an_easy_corpus() {
    let pairs = cue_pairs(40, 10);
    let mlp = trained_mlp(&pairs, 16);
    let hp = EnsembleHyperparams { learning_rate: 1e-2, seed: 2, ..Default::default() };
    let (model, trace) =
        train_ensemble(&pairs, &pairs, toy(16, false), FeatureSource::FrozenMlpHidden { mlp }, &hp, None).unwrap();
    assert_eq!(trace.len(), 6);
    let preds = model.predict_all(&pairs, None).unwrap();
    let correct = preds.iter().zip(&pairs).filter(|(p, q)| Some(**p) == q.label).count();
    assert!(correct as f64 / pairs.len() as f64 >= 0.9, "{correct}/40");
}

#[test]
fn ensemble_training_is_deterministic() {
    let pairs = cue_pairs(24, 11);
    let dev = cue_pairs(8, 12);
    let run = || {
        let hp = EnsembleHyperparams { learning_rate: 1e-2, seed: 5, ..Default::default() };
        train_ensemble(&pairs, &dev, toy(8, true), FeatureSource::None, &hp, None).unwrap()
    };
    let (a, ta) = run();
    let (b, tb) = run();
    assert_eq!(ta, tb);
    assert_eq!(a.w, b.w);
    assert_eq!(a.encoder.cache_id(), b.encoder.cache_id());
    let te2 = SequencePair { first: "Can we see video proof".into(), second: common::EXAMPLE_SOURCE.into(), post_id: "te2".into(), label: None };
    assert_eq!(predict(&a, &te2).unwrap(), predict(&b, &te2).unwrap());
}

#[test]
fn none_source_is_encoder_plus_linear_head() {
    let pairs = cue_pairs(4, 13);
    let m = FusionModel::new(toy(5, false), FeatureSource::None, Default::default());
    for p in &pairs {
        let enc = rumour_stance::encoder::encode_pair(&m.encoder, p).unwrap().to_f64();
        assert_eq!(m.head(&enc, &[]).unwrap().probs, fusion_forward(&m, p).unwrap());
    }
}

#[test]
fn tie_goes_to_lowest_label() {
    let mut m = FusionModel::new(toy(3, false), FeatureSource::None, Default::default());
    m.w.iter_mut().for_each(|w| *w = 0.0);
    let p = &cue_pairs(1, 0)[0];
    assert_eq!(predict(&m, p).unwrap(), Label::Support);
    m.b = [0.0, 2.0, 0.0, 0.0];
    assert_eq!(predict(&m, p).unwrap(), Label::Deny);
}
