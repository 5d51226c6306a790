use proptest::prelude::*;
use reno_core::losses::{joint_loss, renyi_divergence_loss, renyi_on_distributions, LossConfig};
use reno_core::nn::{Graph, ParamStore, Tensor};

fn store() -> ParamStore<f64> {
    ParamStore::new()
}

/// Direct evaluation of the smoothed order-β sum for one pair of rows.
fn renyi_row(p: &[f64], q: &[f64], beta: f64, delta: f64) -> f64 {
    let s: f64 = p
        .iter()
        .zip(q)
        .map(|(&a, &b)| (a + delta).powf(beta) * (b + delta).powf(1.0 - beta))
        .sum();
    s.ln() / (beta - 1.0)
}

fn normalise(v: &[f64]) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    v.iter().map(|x| x / s).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn self_divergence_is_constant(
        m in prop::sample::select(vec![2usize, 3, 17, 128, 1024, 2048, 4096]),
        beta in prop::sample::select(vec![1.5f64, 2.0, 3.0]),
        delta in prop::sample::select(vec![0.05f64, 0.2]),
        scale in 0.01f64..50.0,
        seed in any::<u64>(),
    ) {
        let mut r = seed;
        let logits: Vec<f64> = (0..2 * m)
            .map(|_| {
                r = r.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((r >> 11) as f64 / (1u64 << 53) as f64 - 0.5) * scale
            })
            .collect();
        let cfg = LossConfig { beta, delta, lambda: 0.4 };
        let s = store();
        let mut g = Graph::new(&s);
        let x = g.input(Tensor::new(vec![2, m], logits).unwrap());
        let l = renyi_divergence_loss(&mut g, x, x, &cfg).unwrap();
        let expect = (1.0 + m as f64 * delta).ln() / (beta - 1.0);
        prop_assert!((g.value(l).item() - expect).abs() < 1e-6);
        prop_assert!((cfg.self_divergence(m) - expect).abs() < 1e-15);
    }

    #[test]
    fn joint_is_linear_in_both_terms(
        ce in 0.0f64..10.0,
        rd in 0.0f64..10.0,
        lambda in 0.0f64..=1.0,
    ) {
        let s = store();
        let mut g = Graph::new(&s);
        let a = g.input(Tensor::scalar(ce));
        let b = g.input(Tensor::scalar(rd));
        let j = joint_loss(&mut g, a, b, lambda).unwrap();
        prop_assert!((g.value(j).item() - (lambda * ce + (1.0 - lambda) * rd)).abs() < 1e-12);
        let grads = g.backward(j).unwrap();
        prop_assert!((grads.wrt(a).unwrap()[0] - lambda).abs() < 1e-15);
        prop_assert!((grads.wrt(b).unwrap()[0] - (1.0 - lambda)).abs() < 1e-15);
    }

    #[test]
    fn batch_loss_is_mean_of_rows(
        p in prop::collection::vec(0.01f64..1.0, 15),
        q in prop::collection::vec(0.01f64..1.0, 15),
    ) {
        let (rows, m) = (3, 5);
        let pn: Vec<f64> = p.chunks(m).flat_map(normalise).collect();
        let qn: Vec<f64> = q.chunks(m).flat_map(normalise).collect();
        let cfg = LossConfig::default();
        let s = store();
        let mut g = Graph::new(&s);
        let a = g.input(Tensor::new(vec![rows, m], pn.clone()).unwrap());
        let b = g.input(Tensor::new(vec![rows, m], qn.clone()).unwrap());
        let l = renyi_on_distributions(&mut g, a, b, &cfg).unwrap();
        let expect: f64 = pn
            .chunks(m)
            .zip(qn.chunks(m))
            .map(|(x, y)| renyi_row(x, y, cfg.beta, cfg.delta))
            .sum::<f64>()
            / rows as f64;
        prop_assert!((g.value(l).item() - expect).abs() < 1e-12);
    }
}

#[test]
fn lower_bound_over_random_pairs() {
    let mut r: u64 = 12345;
    let mut next = || {
        r = r.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (r >> 11) as f64 / (1u64 << 53) as f64
    };
    for trial in 0..1000 {
        let m = 2 + (next() * 64.0) as usize;
        let beta = [1.5, 2.0, 3.0][trial % 3];
        let delta = [0.05, 0.2][trial % 2];
        let p = normalise(&(0..m).map(|_| next() + 1e-9).collect::<Vec<_>>());
        let q = normalise(&(0..m).map(|_| next() + 1e-9).collect::<Vec<_>>());
        let cfg = LossConfig { beta, delta, lambda: 0.4 };
        let s = store();
        let mut g = Graph::new(&s);
        let a = g.input(Tensor::new(vec![1, m], p).unwrap());
        let b = g.input(Tensor::new(vec![1, m], q).unwrap());
        let l = renyi_on_distributions(&mut g, a, b, &cfg).unwrap();
        let bound = (1.0 + m as f64 * delta).ln() / (beta - 1.0) - 1e-9;
        assert!(g.value(l).item() >= bound, "trial {trial}: {} < {bound}", g.value(l).item());
    }
}

#[test]
fn identical_features_give_zero_gradient() {
    let cfg = LossConfig::default();
    let s = store();
    let mut g = Graph::new(&s);
    let x = g.input(Tensor::new(vec![2, 4], vec![0.3, -1.2, 2.0, 0.0, 1.0, 1.0, -3.0, 0.5]).unwrap());
    let y = g.input(Tensor::new(vec![2, 4], vec![0.3, -1.2, 2.0, 0.0, 1.0, 1.0, -3.0, 0.5]).unwrap());
    let l = renyi_divergence_loss(&mut g, x, y, &cfg).unwrap();
    let grads = g.backward(l).unwrap();
    for v in grads.wrt(x).unwrap().iter().chain(grads.wrt(y).unwrap()) {
        assert!(v.abs() < 1e-12);
    }
}

#[test]
fn order_and_offset_are_validated() {
    let s = store();
    let mut g = Graph::new(&s);
    let x = g.input(Tensor::full(vec![1, 3], 1.0));
    for (beta, delta) in [(1.0, 0.2), (0.5, 0.2), (2.0, 0.0)] {
        let cfg = LossConfig { beta, delta, lambda: 0.4 };
        assert!(renyi_divergence_loss(&mut g, x, x, &cfg).is_err());
    }
}
