use proptest::prelude::*;
use reno_core::nn::{ConvBlock, Graph, ParamBuilder, ParamStore, SelfAttention, Tensor};

fn attention(d_model: usize, heads: usize, seed: u64) -> (ParamStore<f64>, SelfAttention) {
    let mut s = ParamStore::new();
    let attn = SelfAttention::new(&mut ParamBuilder::new(&mut s, seed), "attn", d_model, heads).unwrap();
    (s.cast(), attn)
}

fn matmul(x: &[f64], w: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            out[i * m + j] = (0..k).map(|t| x[i * k + t] * w[t * m + j]).sum();
        }
    }
    out
}

fn values(len: usize, scale: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-scale..scale, len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_on_simplex_at_large_magnitude(
        rows in 1usize..5,
        cols in 2usize..12,
        seed in any::<u64>(),
    ) {
        let mut rng = seed;
        let data: Vec<f64> = (0..rows * cols)
            .map(|_| {
                rng = rng.wrapping_mul(6364136223846793005).wrapping_add(1);
                ((rng >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0) * 1e4
            })
            .collect();
        let s = ParamStore::<f32>::new();
        let mut g = Graph::new(&s);
        let x = g.input(Tensor::<f32>::from_f64(vec![rows, cols], &data).unwrap());
        let p = g.softmax(x);
        for row in g.value(p).rows() {
            prop_assert!(row.iter().all(|v| v.is_finite() && *v >= 0.0));
            let sum: f64 = row.iter().map(|&v| v as f64).sum();
            prop_assert!((sum - 1.0).abs() < 1e-6, "row sum {}", sum);
        }
    }

    #[test]
    fn attention_is_permutation_equivariant(
        tokens in 2usize..7,
        x in values(6 * 8, 2.0),
        perm_seed in any::<u64>(),
        seed in any::<u64>(),
    ) {
        let d = 8;
        let x = &x[..tokens * d];
        let mut perm: Vec<usize> = (0..tokens).collect();
        let mut r = perm_seed;
        for i in (1..tokens).rev() {
            r = r.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            perm.swap(i, (r >> 33) as usize % (i + 1));
        }
        let permuted: Vec<f64> = perm.iter().flat_map(|&p| x[p * d..(p + 1) * d].to_vec()).collect();

        let (store, attn) = attention(d, 2, seed);
        let mut g = Graph::new(&store);
        let a = g.input(Tensor::new(vec![1, tokens, d], x.to_vec()).unwrap());
        let b = g.input(Tensor::new(vec![1, tokens, d], permuted).unwrap());
        let ya = attn.forward(&mut g, a).unwrap();
        let yb = attn.forward(&mut g, b).unwrap();
        let (ya, yb) = (g.value(ya).data(), g.value(yb).data());
        for (i, &p) in perm.iter().enumerate() {
            for e in 0..d {
                prop_assert!((yb[i * d + e] - ya[p * d + e]).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn attention_weights_rows_sum_to_one(
        tokens in 1usize..9,
        x in values(2 * 8 * 12, 3.0),
        heads in prop::sample::select(vec![1usize, 2, 3, 4]),
        seed in any::<u64>(),
    ) {
        let d = 12;
        let (store, attn) = attention(d, heads, seed);
        let mut g = Graph::new(&store);
        let input = g.input(Tensor::new(vec![2, tokens, d], x[..2 * tokens * d].to_vec()).unwrap());
        let (_, w) = attn.forward_with_weights(&mut g, input).unwrap();
        prop_assert_eq!(g.shape(w), &[2 * heads, tokens, tokens]);
        for row in g.value(w).rows() {
            let s: f64 = row.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn single_token_attention_is_its_linear_path(
        x in values(3 * 8, 2.0),
        seed in any::<u64>(),
    ) {
        let d = 8;
        let (store, attn) = attention(d, 2, seed);
        let wv = store.value(attn.w_value).data().to_vec();
        let wo = store.value(attn.w_out).data().to_vec();
        let expect = matmul(&matmul(&x, &wv, 3, d, d), &wo, 3, d, d);
        let mut g = Graph::new(&store);
        let input = g.input(Tensor::new(vec![3, 1, d], x.clone()).unwrap());
        let y = attn.forward(&mut g, input).unwrap();
        for (a, b) in g.value(y).data().iter().zip(&expect) {
            prop_assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn max_pool_routes_gradient_to_argmax(
        len in 2usize..20,
        x in values(2 * 3 * 20, 5.0),
        upstream in values(2 * 3 * 10, 1.0),
    ) {
        let n = 2 * 3 * len;
        let mut store = ParamStore::<f64>::new();
        let id = store.add("x", Tensor::new(vec![2, 3, len], x[..n].to_vec()).unwrap());
        let mut g = Graph::new(&store);
        let xv = g.param(id);
        let y = g.max_pool2(xv).unwrap();
        let out_len = len / 2;
        let m = 2 * 3 * out_len;
        let w = g.input(Tensor::new(vec![m, 1], upstream[..m].to_vec()).unwrap());
        let flat = g.reshape(y, vec![1, m]).unwrap();
        let loss = g.matmul(flat, w).unwrap();
        let grads = g.backward(loss).unwrap();
        let grad = grads.param(id).unwrap();
        let total: f64 = grad.iter().sum();
        let incoming: f64 = upstream[..m].iter().sum();
        prop_assert!((total - incoming).abs() < 1e-6);
        for row in 0..6 {
            for j in 0..out_len {
                let (a, b) = (row * len + 2 * j, row * len + 2 * j + 1);
                let winner = if x[b] > x[a] { b } else { a };
                let loser = a + b - winner;
                prop_assert_eq!(grad[winner], upstream[row * out_len + j]);
                prop_assert_eq!(grad[loser], 0.0);
            }
            if len % 2 == 1 {
                prop_assert_eq!(grad[row * len + len - 1], 0.0);
            }
        }
    }
}

#[test]
fn conv_and_pool_shapes_for_embedding_widths() {
    for (d, after) in [(768usize, 190usize), (960, 238), (3840, 958)] {
        let mut store = ParamStore::<f32>::new();
        let mut pb = ParamBuilder::new(&mut store, 0);
        let b1 = ConvBlock::new(&mut pb, "c1", 1, 32, 3);
        let b2 = ConvBlock::new(&mut pb, "c2", 32, 64, 3);
        let mut g = Graph::new(&store);
        let x = g.input(Tensor::zeros(vec![1, 1, d]));
        let h = b1.forward(&mut g, x).unwrap();
        let h = b2.forward(&mut g, h).unwrap();
        assert_eq!(g.shape(h), &[1, 64, after]);
        let p = g.adaptive_max_pool(h, 16).unwrap();
        assert_eq!(g.shape(p), &[1, 64, 16]);
    }
}
