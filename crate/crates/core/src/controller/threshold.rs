//! Search for the optimal switching time of a bang-bang threshold policy.

use rayon::prelude::*;

use crate::controller::{rollout_cost, CostWeights, GatePolicy, RolloutResult, ThresholdMode, STRICT_IMPROVEMENT};
use crate::fluid::{FluidModel, FluidState};

/// Resolution of the coarse grid (h).
pub const COARSE_GRID: f64 = 1.0 / 60.0;

/// Resolution of the golden-section refinement (h).
pub const REFINE_TOLERANCE: f64 = 1.0 / 3600.0;

/// Outcome of a threshold optimisation.
#[derive(Debug, Clone)]
pub struct ThresholdSearch {
    pub policy: GatePolicy,
    pub result: RolloutResult,
    /// Number of rollouts evaluated.
    pub evaluations: usize,
    /// Every evaluated `(t*, J)` pair, in evaluation order.
    pub trace: Vec<(f64, f64)>,
}

/// Golden-section minimisation of `f` on `[a, b]` down to an interval of
/// width `tol`. Returns every evaluated point in order.
pub fn golden_section(mut f: impl FnMut(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> Vec<(f64, f64)> {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut visited = Vec::new();
    if b - a <= tol {
        return visited;
    }
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    visited.push((c, fc));
    visited.push((d, fd));
    while b - a > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
            visited.push((c, fc));
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
            visited.push((d, fd));
        }
    }
    visited
}

pub(crate) fn improves(candidate: f64, incumbent: f64) -> bool {
    candidate < incumbent - STRICT_IMPROVEMENT * incumbent.abs()
}

/// Finds `t*` in `[init.t, t_end]` minimising the predicted cost of
/// `base.with_threshold(mode, t*)`: a coarse grid on absolute minutes, then
/// golden-section refinement to one second around the best grid point.
///
/// Ties favour the least intervention: the latest switch for
/// [`ThresholdMode::OpenUntil`], the earliest for
/// [`ThresholdMode::ClosedUntil`]; a candidate replaces the incumbent only on
/// a strict relative improvement.
pub fn optimize_threshold(
    model: &FluidModel,
    init: &FluidState,
    weights: &CostWeights,
    base: &GatePolicy,
    mode: ThresholdMode,
    t_end: f64,
) -> ThresholdSearch {
    let t0 = init.t.min(t_end);
    let mut grid = vec![t0];
    let mut k = (t0 / COARSE_GRID + 1e-9).floor() + 1.0;
    while k * COARSE_GRID < t_end - 1e-9 {
        grid.push(k * COARSE_GRID);
        k += 1.0;
    }
    if t_end > t0 {
        grid.push(t_end);
    }

    let evaluate = |t_star: f64| rollout_cost(model, init, &base.with_threshold(mode, t_star), t_end, weights);
    let coarse: Vec<f64> = grid.par_iter().map(|&ts| evaluate(ts).j).collect();
    let mut trace: Vec<(f64, f64)> = grid.iter().copied().zip(coarse.iter().copied()).collect();

    let order: Vec<usize> = match mode {
        ThresholdMode::OpenUntil => (0..grid.len()).rev().collect(),
        ThresholdMode::ClosedUntil => (0..grid.len()).collect(),
    };
    let mut best = order[0];
    for &i in &order[1..] {
        if improves(coarse[i], coarse[best]) {
            best = i;
        }
    }
    let (mut t_best, mut j_best) = (grid[best], coarse[best]);

    let lo = grid[best.saturating_sub(1)];
    let hi = grid[(best + 1).min(grid.len() - 1)];
    let refined = golden_section(|ts| evaluate(ts).j, lo, hi, REFINE_TOLERANCE);
    let mut refined_sorted = refined.clone();
    // Apply the same preference order among the refinement points.
    match mode {
        ThresholdMode::OpenUntil => refined_sorted.sort_by(|x, y| y.0.total_cmp(&x.0)),
        ThresholdMode::ClosedUntil => refined_sorted.sort_by(|x, y| x.0.total_cmp(&y.0)),
    }
    for &(ts, j) in &refined_sorted {
        if improves(j, j_best) {
            t_best = ts;
            j_best = j;
        }
    }
    trace.extend(refined);

    let policy = base.with_threshold(mode, t_best);
    let result = rollout_cost(model, init, &policy, t_end, weights);
    ThresholdSearch {
        policy,
        evaluations: trace.len() + 1,
        result,
        trace,
    }
}
