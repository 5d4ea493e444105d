//! Central finite-difference verification of tape gradients.

use std::fmt;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::param::ParamStore;
use crate::tape::{Tape, Var};

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Central-difference step. Must lie in `[1e-6, 1e-4]`.
    pub eps: f64,
    /// Maximum acceptable relative error per parameter.
    pub tolerance: f64,
    /// Denominator floor for the relative error, so coordinates whose true
    /// gradient is zero are judged by absolute error. Raised to the
    /// round-off level of the central difference when that is larger.
    pub floor: f64,
    /// Check at most this many coordinates per parameter (sampled without
    /// replacement). `None` checks every coordinate.
    pub max_coords: Option<usize>,
    pub seed: u64,
    /// Adds a bogus offset to the analytic gradient of the named parameter.
    /// Exists to prove the checker catches wrong gradients.
    pub corrupt: Option<String>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            eps: 1e-5,
            tolerance: 1e-4,
            floor: 1e-6,
            max_coords: None,
            seed: 0,
            corrupt: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_err: f64,
    pub coords_checked: usize,
    /// Coordinates whose perturbation straddled a non-differentiable point
    /// and were compared against the one-sided difference from the smooth
    /// side.
    pub kinks: usize,
    pub passed: bool,
}

#[derive(Clone, Debug)]
pub struct GradReport {
    pub tolerance: f64,
    pub params: Vec<ParamCheck>,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.passed)
    }

    pub fn failures(&self) -> Vec<&str> {
        self.params
            .iter()
            .filter(|p| !p.passed)
            .map(|p| p.name.as_str())
            .collect()
    }

    pub fn max_rel_err(&self) -> f64 {
        self.params
            .iter()
            .map(|p| p.max_rel_err)
            .fold(0.0, f64::max)
    }
}

impl fmt::Display for GradReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in &self.params {
            writeln!(
                f,
                "param={} coords={} kinks={} max_rel_err={:.3e} status={}",
                p.name,
                p.coords_checked,
                p.kinks,
                p.max_rel_err,
                if p.passed { "ok" } else { "FAIL" }
            )?;
        }
        Ok(())
    }
}

const ROUND_OFF_ULPS: f64 = 32.0;

/// Compares the tape gradient of the scalar built by `f` against central
/// differences for every parameter in `store`.
///
/// `f` must be deterministic; it is evaluated twice at the unperturbed point
/// and a bit-level mismatch is reported as a precondition error. The store's
/// gradients are overwritten with the analytic gradient.
pub fn grad_check<F>(
    store: &mut ParamStore<f64>,
    opts: &GradCheckOptions,
    mut f: F,
) -> Result<GradReport>
where
    F: FnMut(&mut Tape<f64>, &ParamStore<f64>) -> Result<Var>,
{
    if !(1e-6..=1e-4).contains(&opts.eps) {
        return Err(Error::Precondition(format!(
            "finite-difference step {} outside [1e-6, 1e-4]",
            opts.eps
        )));
    }

    let base = eval(&mut f, store)?;
    if eval(&mut f, store)?.to_bits() != base.to_bits() {
        return Err(Error::Precondition(
            "loss is not deterministic (is dropout enabled?)".into(),
        ));
    }

    store.zero_grad();
    {
        let mut tape = Tape::new();
        let loss = f(&mut tape, store)?;
        tape.backward(loss, store)?;
    }

    // Evaluating the loss carries relative round-off of a few ulps, which
    // the central difference divides by `eps`. Discrepancies at that level
    // say nothing about the analytic gradient.
    let round_off = ROUND_OFF_ULPS * f64::EPSILON * base.abs().max(1.0) / opts.eps;
    let floor = opts.floor.max(round_off / opts.tolerance);

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradReport {
        tolerance: opts.tolerance,
        params: Vec::with_capacity(store.len()),
    };
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let n = store.get(id).value.numel();
        let coords: Vec<usize> = match opts.max_coords {
            Some(limit) if limit < n => sample(&mut rng, n, limit).into_vec(),
            _ => (0..n).collect(),
        };
        let analytic = store.get(id).grad.clone();
        let corrupt = opts.corrupt.as_deref() == Some(store.get(id).name.as_str());

        let mut worst = 0.0f64;
        let mut kinks = 0;
        for &i in &coords {
            let original = store.get(id).value.data()[i];
            store.get_mut(id).value.data_mut()[i] = original + opts.eps;
            let plus = eval(&mut f, store)?;
            store.get_mut(id).value.data_mut()[i] = original - opts.eps;
            let minus = eval(&mut f, store)?;
            store.get_mut(id).value.data_mut()[i] = original;

            let mut a = analytic.data()[i];
            if corrupt {
                a += 0.5 * a.abs().max(1.0);
            }
            let rel = |n: f64| (a - n).abs() / a.abs().max(n.abs()).max(floor);
            let mut err = rel((plus - minus) / (2.0 * opts.eps));
            if err >= opts.tolerance {
                // Relu and max are piecewise linear. When the one-sided
                // slopes disagree, a kink lies inside the stencil and only
                // the side without it measures the derivative at the point.
                // In smooth regions both sides agree with the central
                // difference, so this cannot excuse a wrong gradient there.
                let forward = (plus - base) / opts.eps;
                let backward = (base - minus) / opts.eps;
                let split =
                    (forward - backward).abs() / forward.abs().max(backward.abs()).max(floor);
                if split >= opts.tolerance {
                    kinks += 1;
                    err = rel(forward).min(rel(backward));
                }
            }
            worst = worst.max(err);
        }
        report.params.push(ParamCheck {
            name: store.get(id).name.clone(),
            max_rel_err: worst,
            coords_checked: coords.len(),
            kinks,
            passed: worst < opts.tolerance,
        });
    }
    Ok(report)
}

fn eval<F>(f: &mut F, store: &ParamStore<f64>) -> Result<f64>
where
    F: FnMut(&mut Tape<f64>, &ParamStore<f64>) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = f(&mut tape, store)?;
    Ok(tape.value(loss).item())
}
