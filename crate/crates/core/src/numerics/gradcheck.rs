use std::collections::BTreeMap;

use rand::seq::index;

use super::{Graph, ParamStore, Var};
use crate::error::{Error, Result};
use crate::rng::{stream, Stream};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    /// Coordinates sampled per parameter tensor; smaller tensors are checked
    /// exhaustively.
    pub probe_count: usize,
    pub fd_step: f64,
    /// Relative errors are measured against `max(|numeric|, abs_floor)`.
    pub abs_floor: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            probe_count: 64,
            fd_step: 1e-5,
            abs_floor: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Worst relative error per parameter tensor.
    pub per_param: BTreeMap<String, f64>,
    /// `(parameter, flat index, analytic, numeric)` at the worst coordinate.
    pub worst: Option<(String, usize, f64, f64)>,
    pub probes: usize,
}

/// Compares an analytic gradient against central finite differences of
/// `loss` at sampled coordinates.
pub fn grad_check_with<L, G>(
    mut loss: L,
    analytic: G,
    params: &ParamStore<f64>,
    config: GradCheckConfig,
) -> Result<GradCheckReport>
where
    L: FnMut(&ParamStore<f64>) -> Result<f64>,
    G: FnOnce(&ParamStore<f64>) -> Result<BTreeMap<String, Vec<f64>>>,
{
    let base = loss(params)?;
    if !base.is_finite() {
        return Err(Error::Numeric(format!("grad_check: loss is {base}")));
    }
    let grads = analytic(params)?;
    let mut rng = stream(config.seed, Stream::GradCheck);
    let mut work = params.clone();
    let mut report = GradCheckReport::default();
    let h = config.fd_step;

    for (name, tensor) in params {
        let Some(g) = grads.get(name) else { continue };
        if g.len() != tensor.len() {
            return Err(Error::shape(format!("grad_check: gradient shape for {name}")));
        }
        let coords: Vec<usize> = if tensor.len() <= config.probe_count {
            (0..tensor.len()).collect()
        } else {
            let mut picked = index::sample(&mut rng, tensor.len(), config.probe_count).into_vec();
            picked.sort_unstable();
            picked
        };
        let mut worst_here = 0.0f64;
        for i in coords {
            let orig = tensor.data()[i];
            work.get_mut(name).unwrap().data_mut()[i] = orig + h;
            let plus = loss(&work)?;
            work.get_mut(name).unwrap().data_mut()[i] = orig - h;
            let minus = loss(&work)?;
            work.get_mut(name).unwrap().data_mut()[i] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::Numeric(format!(
                    "grad_check: non-finite loss probing {name}[{i}]"
                )));
            }
            let numeric = (plus - minus) / (2.0 * h);
            let rel = (g[i] - numeric).abs() / numeric.abs().max(config.abs_floor);
            report.probes += 1;
            worst_here = worst_here.max(rel);
            if rel > report.max_relative_error || report.worst.is_none() {
                report.max_relative_error = report.max_relative_error.max(rel);
                report.worst = Some((name.clone(), i, g[i], numeric));
            }
        }
        report.per_param.insert(name.clone(), worst_here);
    }
    Ok(report)
}

/// Gradient check for a loss written against the tape: `build` records the
/// loss on a fresh graph and returns its `1 x 1` node.
pub fn grad_check<F>(build: F, params: &ParamStore<f64>, config: GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>,
{
    let loss = |p: &ParamStore<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let v = build(&mut g, p)?;
        Ok(g.scalar(v))
    };
    let analytic = |p: &ParamStore<f64>| -> Result<BTreeMap<String, Vec<f64>>> {
        let mut g = Graph::new();
        let v = build(&mut g, p)?;
        Ok(g.backward(v)?.into_params())
    };
    grad_check_with(loss, analytic, params, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    fn theta() -> ParamStore<f64> {
        let mut p = ParamStore::new();
        p.insert(
            "theta".into(),
            Tensor::new(vec![2, 3], vec![0.3, -1.7, 2.2, 0.05, -0.4, 1.1]).unwrap(),
        );
        p
    }

    fn sum_of_squares(g: &mut Graph<f64>, p: &ParamStore<f64>) -> Result<Var> {
        let t = g.param("theta", &p["theta"]);
        let sq = g.mul(t, t);
        Ok(g.sum(sq))
    }

    #[test]
    fn quadratic_passes() {
        let r = grad_check(sum_of_squares, &theta(), GradCheckConfig::default()).unwrap();
        assert!(r.max_relative_error < 1e-8, "{r:?}");
        assert_eq!(r.probes, 6);
    }

    #[test]
    fn doubled_gradient_is_flagged() {
        let params = theta();
        let loss = |p: &ParamStore<f64>| Ok(p["theta"].data().iter().map(|v| v * v).sum::<f64>());
        let analytic = |p: &ParamStore<f64>| {
            let mut g: Vec<f64> = p["theta"].data().iter().map(|v| 2.0 * v).collect();
            g[2] *= 2.0;
            Ok(BTreeMap::from([("theta".to_string(), g)]))
        };
        let r = grad_check_with(loss, analytic, &params, GradCheckConfig::default()).unwrap();
        assert!((r.max_relative_error - 1.0).abs() < 1e-6, "{r:?}");
        assert_eq!(r.worst.as_ref().unwrap().1, 2);
    }

    #[test]
    fn non_finite_loss_is_rejected() {
        let loss = |_: &ParamStore<f64>| Ok(f64::NAN);
        let analytic = |_: &ParamStore<f64>| Ok(BTreeMap::new());
        assert!(matches!(
            grad_check_with(loss, analytic, &theta(), GradCheckConfig::default()),
            Err(Error::Numeric(_))
        ));
    }
}
