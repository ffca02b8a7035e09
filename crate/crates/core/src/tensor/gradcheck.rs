use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, ParameterStore, Tensor, Var};
use crate::error::{Error, Result};

const STEP: f64 = 1e-5;

fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs() + 1e-8)
}

fn scalar_of(g: &Graph, v: Var) -> Result<f64> {
    let t = g.value(v);
    if t.len() != 1 {
        return Err(Error::NotScalar(t.shape().to_vec()));
    }
    Ok(t.data()[0])
}

/// Central-difference gradient of a scalar function of one tensor.
pub fn central_difference(f: impl Fn(&Tensor) -> Result<f64>, x: &Tensor, h: f64) -> Result<Tensor> {
    let mut out = Tensor::zeros(x.shape().to_vec());
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe)?;
        probe.data_mut()[i] = orig - h;
        let down = f(&probe)?;
        probe.data_mut()[i] = orig;
        out.data_mut()[i] = (up - down) / (2.0 * h);
    }
    Ok(out)
}

/// Largest relative error between the reverse-mode gradient of `f` at `x`
/// and a central difference with step 1e-5, over every coordinate.
pub fn gradient_check(f: impl Fn(&mut Graph, Var) -> Result<Var>, x: &Tensor) -> Result<f64> {
    let mut g = Graph::new();
    let xv = g.input(x.clone());
    let y = f(&mut g, xv)?;
    g.backward(y)?;
    let analytic = g.grad(xv).unwrap_or_else(|| Tensor::zeros(vec![x.rows(), x.cols()]));

    let eval = |probe: &Tensor| -> Result<f64> {
        let mut g = Graph::new();
        let xv = g.input(probe.clone());
        let y = f(&mut g, xv)?;
        scalar_of(&g, y)
    };
    let numeric = central_difference(eval, &x.as_matrix(), STEP)?;
    Ok(analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(a, n)| rel_error(*a, *n))
        .fold(0.0, f64::max))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub coordinates: usize,
}

/// Finite-difference check of a scalar loss built from a parameter store.
///
/// Every trainable canonical entry is probed; entries larger than
/// `per_param` coordinates are sampled with a seeded RNG.
pub fn gradient_check_store(
    store: &ParameterStore,
    f: impl Fn(&mut Graph, &ParameterStore) -> Result<Var>,
    per_param: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    let mut g = Graph::new();
    let y = f(&mut g, store)?;
    g.backward(y)?;
    let grads = g.gradients(store)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = store.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        coordinates: 0,
    };
    let names: Vec<String> = store
        .names()
        .filter(|n| store.requires_grad(n).unwrap_or(false))
        .map(str::to_string)
        .collect();
    for name in names {
        let n = store.get(&name)?.len();
        let coords: Vec<usize> = if n <= per_param {
            (0..n).collect()
        } else {
            let mut v = sample(&mut rng, n, per_param).into_vec();
            v.sort_unstable();
            v
        };
        let analytic = grads.get(&name);
        for i in coords {
            let orig = store.get(&name)?.data()[i];
            let mut eval_at = |v: f64| -> Result<f64> {
                probe.get_mut(&name)?.data_mut()[i] = v;
                let mut g = Graph::new();
                let y = f(&mut g, &probe)?;
                scalar_of(&g, y)
            };
            let up = eval_at(orig + STEP)?;
            let down = eval_at(orig - STEP)?;
            eval_at(orig)?;
            let numeric = (up - down) / (2.0 * STEP);
            let a = analytic.map_or(0.0, |t| t.data()[i]);
            let err = rel_error(a, numeric);
            report.coordinates += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((name.clone(), i));
            }
        }
    }
    Ok(report)
}
