//! Central finite-difference check of analytic gradients.
//!
//! The loss closure is evaluated in `f64`. Routing decisions taken on the
//! unperturbed pass (ReLU masks, pooling argmax positions) are replayed on
//! every perturbed pass, so each difference quotient samples the same smooth
//! piece that the backward pass differentiates.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::graph::{Graph, Var};
use super::param::ParamStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    /// Finite-difference step.
    pub h: f64,
    /// Maximum tolerated relative error.
    pub tolerance: f64,
    /// Coordinates checked per parameter (all of them when smaller).
    pub samples_per_param: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            h: 1e-3,
            tolerance: 1e-2,
            samples_per_param: 8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamCheck {
    pub name: String,
    pub coords_checked: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.params
            .iter()
            .map(|p| p.max_rel_error)
            .fold(0.0, f64::max)
    }
}

/// `|a - b| / max(|a|, |b|, 1e-8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

pub fn grad_check<F>(
    store: &ParamStore<f64>,
    loss_fn: F,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_, f64>) -> Result<Var>,
{
    let (base_loss, routes, analytic) = {
        let mut g = Graph::new(store).record_routes();
        let loss = loss_fn(&mut g)?;
        let grads = g.backward(loss)?;
        let analytic: Vec<Vec<f64>> = store
            .ids()
            .map(|id| {
                grads
                    .param(id)
                    .map(<[f64]>::to_vec)
                    .unwrap_or_else(|| vec![0.0; store.get(id).len()])
            })
            .collect();
        (g.value(loss).item(), g.take_routes(), analytic)
    };

    {
        let mut g = Graph::new(store).record_routes();
        let loss = loss_fn(&mut g)?;
        let again = g.value(loss).item();
        if again.to_bits() != base_loss.to_bits() || g.take_routes() != routes {
            return Err(Error::NonDeterministic {
                first: base_loss,
                second: again,
            });
        }
    }

    let eval = |s: &ParamStore<f64>| -> Result<f64> {
        let mut g = Graph::new(s).replay_routes(routes.clone());
        let loss = loss_fn(&mut g)?;
        Ok(g.value(loss).item())
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut work = store.clone();
    let mut params = Vec::with_capacity(store.len());
    for (pi, id) in store.ids().enumerate() {
        let n = store.get(id).len();
        let coords: Vec<usize> = if n <= cfg.samples_per_param {
            (0..n).collect()
        } else {
            let mut c = sample(&mut rng, n, cfg.samples_per_param).into_vec();
            c.sort_unstable();
            c
        };
        let mut max_rel: f64 = 0.0;
        for &i in &coords {
            let orig = store.value(id).data()[i];
            work.get_mut(id).value.data_mut()[i] = orig + cfg.h;
            let plus = eval(&work)?;
            work.get_mut(id).value.data_mut()[i] = orig - cfg.h;
            let minus = eval(&work)?;
            work.get_mut(id).value.data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * cfg.h);
            max_rel = max_rel.max(relative_error(analytic[pi][i], numeric));
        }
        params.push(ParamCheck {
            name: store.get(id).name.clone(),
            coords_checked: coords.len(),
            max_rel_error: max_rel,
            passed: max_rel < cfg.tolerance,
        });
    }
    Ok(GradCheckReport {
        tolerance: cfg.tolerance,
        params,
    })
}
