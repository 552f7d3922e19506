//! Iterated decomposition: run one step on the current residual, fold the
//! step's `g` and `h` into running totals, and repeat until the residual
//! sup-norm reaches the requested tolerance.
//!
//! Each step is run at `eps = residual/12`, so its `6·eps` guarantee
//! halves the residual; the loop therefore needs about `log2(norm/tol)`
//! iterations and the partial sums of `g` and `h` stay bounded by a
//! geometric series.

use serde::Serialize;

use crate::geometry::{detect_three_array, sup_norm, PlaneSample};
use crate::step::{decompose_step, residuals, sup, PiecewiseLinear};
use crate::{Error, Result};

/// Smallest accepted tolerance; below this the f64 residual arithmetic
/// itself is in the noise.
pub const MIN_TOL: f64 = 1e-12;

/// Relative slack allowed on top of exact halving, covering the rounding
/// of evaluating merged totals instead of summing per-step parts.
const MERGE_SLACK: f64 = 1e-12;

/// One line of the iteration trace.
#[derive(Clone, Debug, Serialize)]
pub struct IterationRecord {
    /// 1-based step number.
    pub iter: u32,
    /// The eps the step actually used.
    pub eps: f64,
    /// Residual sup-norm after this step, measured against the merged
    /// totals.
    pub residual_sup: f64,
    pub norm_g: f64,
    pub norm_h: f64,
    /// Lattice level the step settled on.
    pub level_n: u32,
}

#[derive(Clone, Debug)]
pub struct DecompositionResult {
    pub g: PiecewiseLinear,
    pub h: PiecewiseLinear,
    /// False when `max_iter` ran out first; the totals are still the best
    /// achieved decomposition.
    pub converged: bool,
    pub iterations: u32,
    pub final_residual: f64,
    pub f_norm: f64,
    pub trace: Vec<IterationRecord>,
}

/// Residuals of a candidate decomposition at every sample point, with
/// their sup-norm. This is the same computation the solver uses between
/// iterations, so on a solver result the sup reproduces `final_residual`
/// exactly.
pub fn evaluate(
    sample: &PlaneSample,
    g: &PiecewiseLinear,
    h: &PiecewiseLinear,
) -> (Vec<f64>, f64) {
    let r = residuals(sample, g, h);
    let s = sup(&r);
    (r, s)
}

/// Decomposes `sample` to within `tol`, iterating at most `max_iter`
/// steps and letting each step search lattice levels up to `max_n`.
pub fn decompose(
    sample: &PlaneSample,
    tol: f64,
    max_iter: u32,
    max_n: u32,
) -> Result<DecompositionResult> {
    if !tol.is_finite() || tol < MIN_TOL {
        return Err(Error::Config {
            detail: format!("tolerance must be a finite number of at least {MIN_TOL}, got {tol}"),
        });
    }
    if max_iter == 0 {
        return Err(Error::Config { detail: "max_iter must be at least 1".into() });
    }
    if let Some(witness) = detect_three_array(sample) {
        return Err(Error::ArrayPresent { witness });
    }

    let f_norm = sup_norm(sample);
    let mut g_total = PiecewiseLinear::zero();
    let mut h_total = PiecewiseLinear::zero();
    let (mut residual_vec, mut residual) = evaluate(sample, &g_total, &h_total);
    let mut trace = Vec::new();
    let mut iterations = 0u32;
    let converged = loop {
        if residual <= tol {
            break true;
        }
        if iterations == max_iter {
            break false;
        }
        let current = sample.with_values(&residual_vec);
        let step = decompose_step(&current, residual / 12.0, max_n)?;
        g_total = g_total.merge_add(&step.g);
        h_total = h_total.merge_add(&step.h);
        iterations += 1;
        let (next_vec, next) = evaluate(sample, &g_total, &h_total);
        // The step guarantees 6·eps_used <= residual/2 on its own output;
        // the slack covers re-evaluating through the merged totals.
        if next > 0.5 * residual + MERGE_SLACK * f_norm {
            return Err(Error::guarantee(format!(
                "iteration {iterations} left residual {next}, above half of {residual}"
            )));
        }
        trace.push(IterationRecord {
            iter: iterations,
            eps: step.eps_used,
            residual_sup: next,
            norm_g: step.norm_g,
            norm_h: step.norm_h,
            level_n: step.level,
        });
        log::info!("iteration {iterations}: residual {next} (eps {})", step.eps_used);
        (residual_vec, residual) = (next_vec, next);
    };

    // Geometric-series bounds on the totals: each step's g is bounded by
    // the residual it started from, its h by twice that.
    if g_total.norm() > 2.0 * f_norm + MERGE_SLACK * f_norm {
        return Err(Error::guarantee(format!(
            "total g norm {} exceeds twice the sample norm {f_norm}",
            g_total.norm()
        )));
    }
    if h_total.norm() > 4.0 * f_norm + MERGE_SLACK * f_norm {
        return Err(Error::guarantee(format!(
            "total h norm {} exceeds four times the sample norm {f_norm}",
            h_total.norm()
        )));
    }
    Ok(DecompositionResult {
        g: g_total,
        h: h_total,
        converged,
        iterations,
        final_residual: residual,
        f_norm,
        trace,
    })
}
