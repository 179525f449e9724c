mod common;

use common::rel_err;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rumour_stance::feature_model::{
    logits_grad, mean_loss, train_mlp, weighted_cross_entropy_logits, LabeledVector, MlpGrads,
};
use rumour_stance::features::{fit_tfidf, PairText, SparseVec, TfidfConfig, TfidfModel};
use rumour_stance::{CostWeights, Label, MlpHyperparams, MlpModel};

fn tfidf_of_dim(d: usize) -> TfidfModel {
    let doc: Vec<String> = (0..d).map(|i| format!("w{i:02}")).collect();
    let m = fit_tfidf(&[doc.join(" ")], &TfidfConfig::default()).unwrap();
    assert_eq!(m.dim(), d);
    m
}

fn random_model(rng: &mut ChaCha8Rng, d: usize, h: usize) -> MlpModel {
    let hp = MlpHyperparams { hidden_units: h, seed: rng.random(), ..Default::default() };
    let mut m = MlpModel::init(tfidf_of_dim(d), PairText::FirstAndSecond, &hp, rng);
    m.b1.iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
    m.b2.iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
    m
}

fn random_input(rng: &mut ChaCha8Rng, d: usize) -> SparseVec {
    let dense: Vec<f64> = (0..d).map(|_| if rng.random_bool(0.6) { rng.random_range(-1.0..1.0) } else { 0.0 }).collect();
    SparseVec::from_dense(&dense)
}

fn random_weights(rng: &mut ChaCha8Rng) -> CostWeights {
    CostWeights::new([0, 1, 2, 3].map(|_| rng.random_range(0.1..3.0))).unwrap()
}

fn loss(m: &MlpModel, x: &SparseVec, y: Label, w: &CostWeights) -> f64 {
    weighted_cross_entropy_logits(&m.forward(x).unwrap().logits, y, w)
}

#[test]
fn analytic_gradients_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let h = 1e-5;
    for case in 0..24 {
        let d = rng.random_range(1..=10);
        let hid = rng.random_range(1..=6);
        let mut m = random_model(&mut rng, d, hid);
        let x = random_input(&mut rng, d);
        let y = Label::from_index(rng.random_range(0..4)).unwrap();
        let w = random_weights(&mut rng);

        let out = m.forward(&x).unwrap();
        let mut g = MlpGrads::zeros(&m);
        m.backward_from_logits(&x, &out, &logits_grad(&out.probs, y, &w), &mut g);
        let w1 = g.w1_dense(d, hid);

        macro_rules! check {
            ($field:ident, $analytic:expr) => {
                for i in 0..m.$field.len() {
                    let orig = m.$field[i];
                    m.$field[i] = orig + h;
                    let up = loss(&m, &x, y, &w);
                    m.$field[i] = orig - h;
                    let down = loss(&m, &x, y, &w);
                    m.$field[i] = orig;
                    let numeric = (up - down) / (2.0 * h);
                    let e = rel_err($analytic[i], numeric);
                    assert!(e < 1e-4, "case {case} {}[{i}]: analytic {} numeric {numeric}", stringify!($field), $analytic[i]);
                }
            };
        }
        check!(w1, w1);
        check!(b1, g.b1);
        check!(w2, g.w2);
        check!(b2, g.b2);
    }
}

/// Straight-line recomputation with plain loops and no shared helpers.
fn oracle_probs(m: &MlpModel, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let h = m.hidden_units;
    let mut hidden = vec![0.0; h];
    for j in 0..h {
        let mut s = m.b1[j];
        for i in 0..x.len() {
            s += x[i] * m.w1[i * h + j];
        }
        hidden[j] = s.tanh();
    }
    let mut z = [0.0; 4];
    for k in 0..4 {
        z[k] = m.b2[k];
        for j in 0..h {
            z[k] += hidden[j] * m.w2[j * 4 + k];
        }
    }
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    (hidden, e.iter().map(|v| v / s).collect())
}

#[test]
fn forward_matches_straight_line_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let d = rng.random_range(1..=12);
        let hid = rng.random_range(1..=16);
        let m = random_model(&mut rng, d, hid);
        let x = random_input(&mut rng, d);
        let out = m.forward(&x).unwrap();
        let (hidden, probs) = oracle_probs(&m, &x.to_dense());
        for (a, b) in out.hidden.iter().zip(&hidden) {
            assert!((a - b).abs() < 1e-10);
        }
        for (a, b) in out.probs.iter().zip(&probs) {
            assert!((a - b).abs() < 1e-10);
        }
        assert!((out.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(out.hidden.iter().all(|v| v.abs() < 1.0));
    }
}

/// 20 points, one class per quadrant of a 2-feature plane.
fn quadrants() -> Vec<LabeledVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let signs = [(1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0)];
    let mut out = Vec::new();
    for (c, (sx, sy)) in signs.iter().enumerate() {
        for i in 0..5 {
            let x = sx * rng.random_range(0.2..1.0);
            let y = sy * rng.random_range(0.2..1.0);
            out.push(LabeledVector {
                id: format!("q{c}-{i}"),
                x: SparseVec::from_dense(&[x, y]),
                label: Label::from_index(c).unwrap(),
            });
        }
    }
    out
}

fn accuracy(m: &MlpModel, data: &[LabeledVector]) -> f64 {
    data.iter().filter(|e| m.predict(&e.x).unwrap() == e.label).count() as f64 / data.len() as f64
}

#[test]
fn separable_quadrants_are_learned() {
    let data = quadrants();
    let hp = MlpHyperparams { batch_size: 1, seed: 3, ..Default::default() };
    let (m, trace) = train_mlp(&data, &data, tfidf_of_dim(2), PairText::FirstAndSecond, &hp).unwrap();
    assert_eq!(trace.len(), 55);
    assert_eq!(accuracy(&m, &data), 1.0);
    assert_eq!(trace.last().unwrap().dev_macro_f1, Some(1.0));
}

#[test]
fn full_batch_loss_never_increases() {
    let data = quadrants();
    for lr in [0.02, 0.01, 0.005] {
        let hp = MlpHyperparams { batch_size: data.len(), learning_rate: lr, seed: 8, ..Default::default() };
        let (m, trace) = train_mlp(&data, &[], tfidf_of_dim(2), PairText::FirstAndSecond, &hp).unwrap();
        for w in trace.windows(2) {
            assert!(w[1].train_loss <= w[0].train_loss, "lr {lr}: {} -> {}", w[0].train_loss, w[1].train_loss);
        }
        assert_eq!(mean_loss(&m, &data, &hp.cost_weights).unwrap(), trace.last().unwrap().train_loss);
    }
}

#[test]
fn training_is_deterministic_and_order_free() {
    let data = quadrants();
    let hp = MlpHyperparams { batch_size: 4, seed: 17, epochs: 10, ..Default::default() };
    let run = |d: &[LabeledVector]| train_mlp(d, &[], tfidf_of_dim(2), PairText::FirstAndSecond, &hp).unwrap();
    let (a, ta) = run(&data);
    let (b, tb) = run(&data);
    assert_eq!(a.param_checksum(), b.param_checksum());
    assert_eq!(ta, tb);
    let mut shuffled = data.clone();
    shuffled.reverse();
    shuffled.swap(0, 7);
    let (c, _) = run(&shuffled);
    assert_eq!(a.w1, c.w1);
    assert_eq!(a.w2, c.w2);
    let other = train_mlp(&data, &[], tfidf_of_dim(2), PairText::FirstAndSecond, &MlpHyperparams { seed: 18, ..hp.clone() }).unwrap().0;
    assert_ne!(a.param_checksum(), other.param_checksum());
}

#[test]
fn unit_weights_give_plain_cross_entropy() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let logits = [0, 1, 2, 3].map(|_| rng.random_range(-5.0..5.0));
        let y = Label::from_index(rng.random_range(0..4)).unwrap();
        let lse = logits.iter().map(|v: &f64| v.exp()).sum::<f64>().ln();
        let plain = lse - logits[y.index()];
        assert!((weighted_cross_entropy_logits(&logits, y, &CostWeights::uniform()) - plain).abs() < 1e-12);
    }
}
