//! Finite-difference checks over every layer type, both losses and the four
//! full models, all in `f64`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::losses::{cross_entropy, joint_loss, renyi_divergence_loss, LossConfig};
use crate::models::{build, Forward, ModelKind, ModelSpec};
use crate::nn::{
    grad_check, ConvBlock, Dense, GradCheckConfig, GradCheckReport, Graph, ParamBuilder,
    ParamStore, SelfAttention, Tensor, Var,
};

pub const LAYER_TOLERANCE: f64 = 1e-4;
pub const END_TO_END_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scope {
    Layer,
    EndToEnd,
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteCase {
    pub name: String,
    pub scope: Scope,
    pub report: GradCheckReport,
}

impl SuiteCase {
    pub fn passed(&self) -> bool {
        self.report.passed()
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: Vec<usize>, scale: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor::new(shape, data).expect("positive shape")
}

/// Reduces any node to a scalar by a fixed random projection.
fn probe(g: &mut Graph<'_, f64>, out: Var, seed: u64) -> Result<Var> {
    let n = g.value(out).len();
    let flat = g.reshape(out, vec![1, n])?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let w = g.input(uniform(&mut rng, vec![n, 1], 1.0));
    g.matmul(flat, w)
}

fn check(
    store: &ParamStore<f64>,
    seed: u64,
    tolerance: f64,
    f: impl Fn(&mut Graph<'_, f64>) -> Result<Var>,
) -> Result<GradCheckReport> {
    let cfg = GradCheckConfig {
        h: 1e-4,
        tolerance,
        samples_per_param: 8,
        seed,
    };
    grad_check(store, f, &cfg)
}

/// Runs every case with inputs and parameters drawn from `seed`.
pub fn gradient_suite(seed: u64) -> Result<Vec<SuiteCase>> {
    let mut cases = layer_cases(seed)?;
    cases.extend(model_cases(seed)?);
    Ok(cases)
}

fn layer_case(
    name: &str,
    seed: u64,
    store: ParamStore<f32>,
    rng: &mut ChaCha8Rng,
    loss: impl Fn(&mut Graph<'_, f64>, &ParamStore<f64>, &mut ChaCha8Rng) -> Result<Var>,
) -> Result<SuiteCase> {
    let store = randomize_biases(store.cast::<f64>(), rng);
    let input_seed: u64 = rng.random();
    let report = check(&store, seed, LAYER_TOLERANCE, |g| {
        let mut r = ChaCha8Rng::seed_from_u64(input_seed);
        loss(g, &store, &mut r)
    })?;
    Ok(SuiteCase {
        name: name.into(),
        scope: Scope::Layer,
        report,
    })
}

/// Moves biases off their zero initialisation so the check runs at a
/// generic point.
fn randomize_biases(mut store: ParamStore<f64>, rng: &mut ChaCha8Rng) -> ParamStore<f64> {
    for p in store.iter_mut() {
        if p.name.ends_with(".bias") {
            for v in p.value.data_mut() {
                *v = rng.random_range(-0.1..0.1);
            }
        }
    }
    store
}

fn layer_cases(seed: u64) -> Result<Vec<SuiteCase>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases = Vec::new();

    let mut s = ParamStore::new();
    let dense = Dense::new(&mut ParamBuilder::new(&mut s, seed), "dense", 5, 4);
    cases.push(layer_case("dense", seed, s, &mut rng, |g, _, r| {
        let x = g.input(uniform(r, vec![3, 5], 1.0));
        let y = dense.forward(g, x)?;
        probe(g, y, seed)
    })?);

    let mut s = ParamStore::new();
    let pre = Dense::new(&mut ParamBuilder::new(&mut s, seed), "pre", 6, 7);
    cases.push(layer_case("relu", seed, s, &mut rng, |g, _, r| {
        let x = g.input(uniform(r, vec![4, 6], 1.0));
        let h = pre.forward(g, x)?;
        let y = g.relu(h)?;
        probe(g, y, seed)
    })?);

    let mut s = ParamStore::new();
    let conv = ConvBlock::new(&mut ParamBuilder::new(&mut s, seed), "conv", 2, 3, 3);
    cases.push(layer_case("conv1d+relu+max_pool", seed, s, &mut rng, |g, _, r| {
        let x = g.input(uniform(r, vec![2, 2, 11], 1.0));
        let y = conv.forward(g, x)?;
        probe(g, y, seed)
    })?);

    let mut s = ParamStore::new();
    s.add("x", uniform(&mut rng, vec![2, 3, 10], 1.0).cast());
    cases.push(layer_case("adaptive_max_pool", seed, s, &mut rng, |g, s, _| {
        let x = g.param(s.find("x").unwrap());
        let y = g.adaptive_max_pool(x, 4)?;
        probe(g, y, seed)
    })?);

    let mut s = ParamStore::new();
    s.add("logits", uniform(&mut rng, vec![3, 5], 2.0).cast());
    cases.push(layer_case("softmax", seed, s, &mut rng, |g, s, _| {
        let x = g.param(s.find("logits").unwrap());
        let y = g.softmax(x);
        probe(g, y, seed)
    })?);

    let mut s = ParamStore::new();
    let attn = SelfAttention::new(&mut ParamBuilder::new(&mut s, seed), "attn", 8, 2)?;
    s.add("tokens", uniform(&mut rng, vec![2, 5, 8], 1.0).cast());
    cases.push(layer_case("self_attention", seed, s, &mut rng, |g, s, _| {
        let x = g.param(s.find("tokens").unwrap());
        let y = attn.forward(g, x)?;
        probe(g, y, seed)
    })?);

    let mut s = ParamStore::new();
    s.add("logits", uniform(&mut rng, vec![4, 6], 2.0).cast());
    cases.push(layer_case("cross_entropy", seed, s, &mut rng, |g, s, _| {
        let x = g.param(s.find("logits").unwrap());
        let p = g.softmax(x);
        cross_entropy(g, p, &[0, 5, 2, 2])
    })?);

    for (beta, delta) in [(2.0, 0.2), (1.5, 0.05), (3.0, 0.2)] {
        let cfg = LossConfig {
            beta,
            delta,
            ..LossConfig::default()
        };
        let mut s = ParamStore::new();
        s.add("feat_x", uniform(&mut rng, vec![4, 6], 2.0).cast());
        s.add("feat_y", uniform(&mut rng, vec![4, 6], 2.0).cast());
        let name = format!("renyi(beta={beta},delta={delta})");
        cases.push(layer_case(&name, seed, s, &mut rng, |g, s, _| {
            let fx = g.param(s.find("feat_x").unwrap());
            let fy = g.param(s.find("feat_y").unwrap());
            renyi_divergence_loss(g, fx, fy, &cfg)
        })?);
    }

    let mut s = ParamStore::new();
    s.add("logits", uniform(&mut rng, vec![4, 3], 2.0).cast());
    s.add("feat_x", uniform(&mut rng, vec![4, 6], 2.0).cast());
    s.add("feat_y", uniform(&mut rng, vec![4, 6], 2.0).cast());
    cases.push(layer_case("joint", seed, s, &mut rng, |g, s, _| {
        let cfg = LossConfig::default();
        let logits = g.param(s.find("logits").unwrap());
        let p = g.softmax(logits);
        let ce = cross_entropy(g, p, &[0, 1, 2, 1])?;
        let fx = g.param(s.find("feat_x").unwrap());
        let fy = g.param(s.find("feat_y").unwrap());
        let rd = renyi_divergence_loss(g, fx, fy, &cfg)?;
        joint_loss(g, ce, rd, cfg.lambda)
    })?);
    Ok(cases)
}

fn model_cases(seed: u64) -> Result<Vec<SuiteCase>> {
    let batch = 4;
    let classes = 3;
    let mut cases = Vec::new();
    for kind in ModelKind::ALL {
        let dims: Vec<usize> = [20, 24][..kind.views()].to_vec();
        let spec = ModelSpec {
            common_dim: 8,
            pooled_tokens: 4,
            ..ModelSpec::new(kind, dims.clone(), classes)
        };
        let model = build(&spec, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(17));
        let store = randomize_biases(model.params.cast::<f64>(), &mut rng);
        let inputs: Vec<Tensor<f64>> = dims
            .iter()
            .map(|&d| uniform(&mut rng, vec![batch, d], 2.0))
            .collect();
        let labels: Vec<usize> = (0..batch).map(|i| i % classes).collect();
        let objective = model.objective(&LossConfig::default())?;
        let report = check(&store, seed, END_TO_END_TOLERANCE, |g| {
            let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
            let out = Forward::<f64>::forward(model.network.as_ref(), g, &vars)?;
            Ok(objective.apply(g, out.probs, out.taps, &labels)?.total)
        })?;
        cases.push(SuiteCase {
            name: format!("{kind} end-to-end"),
            scope: Scope::EndToEnd,
            report,
        });
    }
    Ok(cases)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes_for_one_seed() {
        for case in gradient_suite(3).unwrap() {
            let tol = match case.scope {
                Scope::Layer => LAYER_TOLERANCE,
                Scope::EndToEnd => END_TO_END_TOLERANCE,
            };
            assert!(case.report.max_rel_error() < tol, "{}: {:?}", case.name, case.report);
        }
    }
}
