//! Central-difference gradient checking.

use rand::seq::index::sample;

use super::Tensor;
use crate::error::Result;
use crate::rng::RngPool;

#[derive(Debug, Clone)]
pub struct GradcheckOptions {
    /// Perturbation step for central differences.
    pub h: f64,
    pub rel_tol: f64,
    /// Absolute floor under which a mismatch always passes; central
    /// differences bottom out around 1e-10 regardless of the relative error.
    pub abs_tol: f64,
    /// Check at most this many coordinates per tensor, sampled by seed.
    pub max_coords: Option<usize>,
    pub seed: u64,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            h: 1e-4,
            rel_tol: 1e-4,
            abs_tol: 1e-7,
            max_coords: None,
            seed: 0,
        }
    }
}

#[derive(Debug)]
pub struct GradcheckReport {
    pub checked: usize,
    pub max_abs_diff: f64,
    pub max_rel_err: f64,
    pub failures: Vec<String>,
}

impl GradcheckReport {
    pub fn pass(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Compare analytic gradients of the scalar `f()` against central finite
/// differences at every (or a sampled subset of) coordinate of each named
/// input. `f` must be a deterministic function of the input values. Frozen
/// inputs are skipped.
pub fn gradcheck_named<F>(
    mut f: F,
    inputs: &[(&str, &Tensor)],
    opts: &GradcheckOptions,
) -> Result<GradcheckReport>
where
    F: FnMut() -> Result<Tensor>,
{
    for (_, t) in inputs {
        t.zero_grad();
    }
    let loss = f()?;
    loss.backward()?;
    let analytic: Vec<Option<Vec<f64>>> = inputs.iter().map(|(_, t)| t.grad()).collect();
    for (_, t) in inputs {
        t.zero_grad();
    }

    let mut report = GradcheckReport {
        checked: 0,
        max_abs_diff: 0.0,
        max_rel_err: 0.0,
        failures: Vec::new(),
    };
    let pool = RngPool::new(opts.seed);
    for (slot, (name, t)) in inputs.iter().enumerate() {
        let grads = match &analytic[slot] {
            Some(g) => g,
            None => continue,
        };
        let coords: Vec<usize> = match opts.max_coords {
            Some(k) if k < t.len() => {
                let mut rng = pool.stream_indexed("gradcheck", slot as u64);
                sample(&mut rng, t.len(), k).into_iter().collect()
            }
            _ => (0..t.len()).collect(),
        };
        let original = t.to_vec();
        for i in coords {
            let mut bumped = original.clone();
            bumped[i] = original[i] + opts.h;
            t.set_value(&bumped);
            let up = f()?.item();
            bumped[i] = original[i] - opts.h;
            t.set_value(&bumped);
            let down = f()?.item();
            t.set_value(&original);
            let numeric = (up - down) / (2.0 * opts.h);
            let a = grads[i];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(1e-300);
            report.checked += 1;
            report.max_abs_diff = report.max_abs_diff.max(abs);
            if abs > opts.abs_tol {
                report.max_rel_err = report.max_rel_err.max(rel);
                if rel > opts.rel_tol {
                    report.failures.push(format!(
                        "{name}[{i}]: analytic {a:.9e} vs numeric {numeric:.9e} (rel {rel:.3e})"
                    ));
                }
            }
        }
    }
    Ok(report)
}

/// [`gradcheck_named`] with default options (h = 1e-4, rel tol 1e-4).
pub fn gradcheck<F>(f: F, inputs: &[(&str, &Tensor)]) -> Result<GradcheckReport>
where
    F: FnMut() -> Result<Tensor>,
{
    gradcheck_named(f, inputs, &GradcheckOptions::default())
}
