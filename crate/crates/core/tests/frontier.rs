use dqnf::agent::select_action;
use dqnf::frontier::{frontier_loss, masked_bce, predict_valid_set, ValidityClassifier};
use dqnf::nn::{mlp_q_chain, rmsprop_step, with_sigmoid_heads, Network, OptState, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn saturated_classifier() -> ValidityClassifier<f64> {
    let chain = mlp_q_chain(4, 8, 3);
    let mut classifier = ValidityClassifier::<f64>::new(&chain, 1, 0.5);
    let params = classifier.network_mut().params_mut();
    params.tensors[2].data_mut().fill(0.0);
    params.tensors[3].data_mut().copy_from_slice(&[25.0, -25.0, 25.0]);
    classifier
}

fn batch() -> Tensor<f64> {
    Tensor::from_slice(&[4, 4], &[
        0.1, 0.2, -0.3, 0.4, //
        -1.0, 0.5, 0.0, 0.2, //
        0.7, -0.7, 0.3, 0.1, //
        0.0, 0.0, 1.0, -1.0,
    ])
    .unwrap()
}

#[test]
fn classifier_at_target_does_not_move() {
    let mut classifier = saturated_classifier();
    let obs = batch();
    let actions = [0, 1, 2, 1];
    let bits = [0, 1, 0, 1];
    let probs = classifier.predict(&obs).unwrap();
    for (i, (&a, &f)) in actions.iter().zip(&bits).enumerate() {
        assert!((probs.row(i)[a] - (1.0 - f as f64)).abs() < 1e-9);
    }
    let before = classifier.network().params().clone();
    let step = classifier.train_step(&obs, &actions, &bits, 1e-4, 0.0).unwrap();
    assert!(step.loss < 1e-6, "loss {}", step.loss);
    assert_eq!(step.accuracy, 1.0);
    for (a, b) in before.tensors.iter().zip(&classifier.network().params().tensors) {
        assert!(a.max_abs_diff(b) <= 1e-9);
    }
}

#[test]
fn untaken_heads_get_no_gradient() {
    let chain = with_sigmoid_heads(&mlp_q_chain(4, 6, 3));
    let mut net = Network::<f64>::new(chain, 9);
    let obs = batch();
    let actions = [2, 0, 2, 0];
    let targets = [1.0, 0.0, 0.0, 1.0];
    let loss_of = |net: &Network<f64>| masked_bce(&net.predict(&obs).unwrap(), &actions, &targets).0;

    let (probs, trace) = net.forward(&obs).unwrap();
    let (_, grad) = masked_bce(&probs, &actions, &targets);
    for (i, &taken) in actions.iter().enumerate() {
        for a in (0..3).filter(|&a| a != taken) {
            assert_eq!(grad.row(i)[a], 0.0);
        }
    }
    let grads = net.backward(&trace, &grad).unwrap();

    // Output-layer weights are [hidden, heads]; column 1 feeds a head no
    // sample took.
    let h = 1e-5;
    let (hidden, heads) = (6, 3);
    for j in 0..hidden {
        for o in 0..heads {
            let k = j * heads + o;
            let analytic = grads.tensors[2].data()[k];
            let original = net.params().tensors[2].data()[k];
            net.params_mut().tensors[2].data_mut()[k] = original + h;
            let up = loss_of(&net);
            net.params_mut().tensors[2].data_mut()[k] = original - h;
            let down = loss_of(&net);
            net.params_mut().tensors[2].data_mut()[k] = original;
            let numeric = (up - down) / (2.0 * h);
            if o == 1 {
                assert_eq!(analytic, 0.0);
                assert_eq!(numeric, 0.0);
            } else {
                assert!((analytic - numeric).abs() < 1e-7, "{analytic} vs {numeric}");
            }
        }
    }
}

#[test]
fn bce_half_probability_is_ln_two() {
    let p = Tensor::from_slice(&[1, 2], &[0.5f64, 0.5]).unwrap();
    let (loss, _) = masked_bce(&p, &[0], &[1.0]);
    assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
}

#[test]
fn forbidden_action_never_in_valid_set() {
    assert_eq!(predict_valid_set(&[0.9f64, 0.99, 0.9], 0.5, 1), vec![0, 2]);
}

#[test]
fn forbidden_action_stays_selectable() {
    let chain = mlp_q_chain(4, 8, 3);
    let mut net = Network::<f64>::new(chain, 2);
    let mut opt = OptState::new(net.params());
    let obs = Tensor::from_slice(&[1, 4], &[0.3, -0.1, 0.8, 0.5]).unwrap();
    let forbidden = 1;
    for _ in 0..300 {
        let (q, trace) = net.forward(&obs).unwrap();
        let fl = frontier_loss(q.row(0), forbidden, &[0, 2], 0.1);
        let mut g = Tensor::zeros(q.shape());
        for (a, v) in fl.gradient {
            g.row_mut(0)[a] = v;
        }
        let grads = net.backward(&trace, &g).unwrap();
        rmsprop_step(net.params_mut(), &grads, &mut opt, 1e-3, 0.0).unwrap();
    }
    let q = net.predict(&obs).unwrap();
    assert!(q.row(0)[forbidden] < q.row(0)[0].min(q.row(0)[2]));
    assert_eq!(q.row(0).len(), 3);

    let single = Tensor::from_slice(&[4], &[0.3, -0.1, 0.8, 0.5]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let picked = (0..3_000)
        .filter(|_| select_action(&net, &single, 1.0, &mut rng).unwrap() == forbidden)
        .count();
    assert!(picked > 800, "forbidden action drawn {picked} times");
}

fn hinge_case() -> impl Strategy<Value = (Vec<f64>, usize, Vec<usize>, f64)> {
    (2usize..10).prop_flat_map(|n| {
        (
            proptest::collection::vec(-5.0f64..5.0, n),
            0..n,
            proptest::collection::vec(any::<bool>(), n),
            0.01f64..1.0,
        )
            .prop_map(|(q, forbidden, mask, m)| {
                let valid: Vec<usize> = (0..q.len()).filter(|&a| a != forbidden && mask[a]).collect();
                (q, forbidden, valid, m)
            })
    })
}

proptest! {
    #[test]
    fn hinge_zero_exactly_when_margin_holds((q, forbidden, valid, m) in hinge_case()) {
        let l = frontier_loss(&q, forbidden, &valid, m);
        prop_assert!(l.loss >= 0.0);
        if valid.is_empty() {
            prop_assert_eq!(l.loss, 0.0);
            prop_assert!(l.gradient.is_empty());
        } else {
            let g = valid.iter().map(|&a| q[a]).fold(f64::INFINITY, f64::min);
            prop_assert_eq!(l.loss == 0.0, q[forbidden] <= g - m);
        }
    }

    #[test]
    fn hinge_grows_with_forbidden_value((q, forbidden, valid, m) in hinge_case(), bump in 0.01f64..2.0) {
        prop_assume!(!valid.is_empty());
        let base = frontier_loss(&q, forbidden, &valid, m);
        let mut raised = q.clone();
        raised[forbidden] += bump;
        let after = frontier_loss(&raised, forbidden, &valid, m);
        prop_assert!(after.loss >= base.loss);
        if after.loss > 0.0 {
            prop_assert!(after.loss > base.loss);
        }
    }

    #[test]
    fn hinge_gradient_matches_differences((q, forbidden, valid, m) in hinge_case()) {
        let l = frontier_loss(&q, forbidden, &valid, m);
        let h = 1e-6;
        for (a, g) in &l.gradient {
            let mut up = q.clone();
            up[*a] += h;
            let mut down = q.clone();
            down[*a] -= h;
            let numeric = (frontier_loss(&up, forbidden, &valid, m).loss - frontier_loss(&down, forbidden, &valid, m).loss) / (2.0 * h);
            prop_assert!((numeric - g).abs() < 1e-4 * (1.0 + g.abs()), "{} vs {}", numeric, g);
        }
        prop_assert!(l.gradient.is_empty() || l.gradient.len() == 2);
    }
}
