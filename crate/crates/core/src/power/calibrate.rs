//! Fits idle and max power of a model shape to measured (utilization, watts) data.

use super::model::{clamp_utilization, PowerModel, PowerShape};
use super::PowerError;

/// Outcome of a calibration.
#[derive(Clone, Debug, PartialEq)]
pub struct Calibration {
    pub model: PowerModel,
    /// Mean absolute percentage error as a fraction (0.055 = 5.5 %).
    pub mape: f64,
    /// Set when the data cannot pin down both parameters (a single
    /// utilization level). The minimum-idle optimum is returned.
    pub degenerate: bool,
}

const GRID_STEPS: usize = 40;

/// Mean of `|pred - obs| / obs` over the series.
pub fn mape(model: &PowerModel, series: &[(f64, f64)]) -> f64 {
    let total: f64 = series
        .iter()
        .map(|&(u, obs)| (super::model::device_power(model, u) - obs).abs() / obs)
        .sum();
    total / series.len() as f64
}

/// Finds `(idle, max)` minimizing MAPE for `shape`: a weighted least-squares
/// start and a coarse grid, refined by a shrinking pattern search.
pub fn calibrate_power_model(measured: &[(f64, f64)], shape: PowerShape) -> Result<Calibration, PowerError> {
    if measured.iter().any(|&(u, w)| !u.is_finite() || !w.is_finite() || w < 0.0) {
        return Err(PowerError::Calibration("measurements must be finite and non-negative".into()));
    }
    let usable: Vec<(f64, f64)> = measured
        .iter()
        .filter(|&&(_, w)| w > 0.0)
        .map(|&(u, w)| (clamp_utilization(u), w))
        .collect();
    if usable.is_empty() {
        return Err(PowerError::Calibration("all observations are zero watts; MAPE is undefined".into()));
    }
    if usable.len() < measured.len() {
        log::warn!("{} zero-watt observations excluded from MAPE", measured.len() - usable.len());
    }

    let curve: Vec<f64> = usable.iter().map(|&(u, _)| shape.curve(u)).collect();
    let first = curve[0];
    if curve.iter().all(|&c| (c - first).abs() < 1e-12) {
        return Ok(fit_single_level(&usable, shape, first));
    }

    let objective = |idle: f64, max: f64| -> f64 {
        usable
            .iter()
            .zip(&curve)
            .map(|(&(_, obs), &c)| (idle + (max - idle) * c - obs).abs() / obs)
            .sum::<f64>()
            / usable.len() as f64
    };
    let feasible = |idle: f64, max: f64| (idle.max(0.0), max.max(idle.max(0.0)));

    let hi = usable.iter().map(|&(_, w)| w).fold(0.0, f64::max);
    let mut best = {
        let (i, m) = weighted_least_squares(&usable, &curve).unwrap_or((0.0, hi));
        let (i, m) = feasible(i, m);
        (i, m, objective(i, m))
    };

    // Coarse grid over idle in [0, hi] and max in [0, 2 hi].
    for a in 0..=GRID_STEPS {
        let idle = hi * a as f64 / GRID_STEPS as f64;
        for b in 0..=GRID_STEPS {
            let max = 2.0 * hi * b as f64 / GRID_STEPS as f64;
            if max < idle {
                continue;
            }
            let v = objective(idle, max);
            if v < best.2 {
                best = (idle, max, v);
            }
        }
    }

    // Pattern search in eight directions; the objective is convex but has kinks.
    let dirs: [(f64, f64); 8] =
        [(1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0), (1.0, 1.0), (-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0)];
    let mut step = hi / GRID_STEPS as f64;
    let floor = hi * 1e-12;
    while step > floor {
        let mut improved = false;
        for (di, dm) in dirs {
            let (idle, max) = feasible(best.0 + di * step, best.1 + dm * step);
            let v = objective(idle, max);
            if v < best.2 - 1e-15 {
                best = (idle, max, v);
                improved = true;
            }
        }
        if !improved {
            step *= 0.5;
        }
    }

    let model = PowerModel::new(shape, best.0, best.1)?;
    Ok(Calibration { mape: mape(&model, &usable), model, degenerate: false })
}

/// All observations share one curve value `c`, so only `idle + (max - idle) c`
/// is identified. Picks the smallest idle that attains the optimum.
fn fit_single_level(series: &[(f64, f64)], shape: PowerShape, c: f64) -> Calibration {
    let model = if c <= 0.0 {
        // Prediction equals idle; max is free, keep it at idle.
        let idle = weighted_median(series.iter().map(|&(_, o)| (o, 1.0 / o)));
        PowerModel { shape, idle_w: idle, max_w: idle }
    } else {
        // idle = 0 and the prediction is max * c.
        let max = weighted_median(series.iter().map(|&(_, o)| (o / c, c / o)));
        PowerModel { shape, idle_w: 0.0, max_w: max }
    };
    Calibration { mape: mape(&model, series), model, degenerate: true }
}

/// Minimizer of `sum w_i |x - v_i|`.
fn weighted_median(points: impl Iterator<Item = (f64, f64)>) -> f64 {
    let mut pts: Vec<(f64, f64)> = points.collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = pts.iter().map(|p| p.1).sum();
    let mut acc = 0.0;
    for (v, w) in &pts {
        acc += w;
        if acc >= total / 2.0 {
            return *v;
        }
    }
    pts.last().map(|p| p.0).unwrap_or(0.0)
}

/// Relative-error least squares: rows `[(1 - c)/o, c/o] x = 1`.
fn weighted_least_squares(series: &[(f64, f64)], curve: &[f64]) -> Option<(f64, f64)> {
    let (mut s11, mut s12, mut s22, mut t1, mut t2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (&(_, o), &c) in series.iter().zip(curve) {
        let r1 = (1.0 - c) / o;
        let r2 = c / o;
        s11 += r1 * r1;
        s12 += r1 * r2;
        s22 += r2 * r2;
        t1 += r1;
        t2 += r2;
    }
    let det = s11 * s22 - s12 * s12;
    if det.abs() < 1e-300 {
        return None;
    }
    Some(((t1 * s22 - t2 * s12) / det, (s11 * t2 - s12 * t1) / det))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::power::model::device_power;

    fn synth(model: &PowerModel, n: usize) -> Vec<(f64, f64)> {
        (0..n)
            .map(|i| {
                let u = i as f64 / (n - 1) as f64;
                (u, device_power(model, u))
            })
            .collect()
    }

    #[test]
    fn recovers_noiseless_sqrt_model() {
        let truth = PowerModel::new(PowerShape::Sqrt, 50.0, 150.0).unwrap();
        let fit = calibrate_power_model(&synth(&truth, 101), PowerShape::Sqrt).unwrap();
        assert!(!fit.degenerate);
        assert!(fit.mape <= 0.01, "mape {}", fit.mape);
        assert!((fit.model.idle_w - 50.0).abs() < 0.5, "{:?}", fit.model);
        assert!((fit.model.max_w - 150.0).abs() < 0.5, "{:?}", fit.model);
    }

    #[test]
    fn shape_mismatch_reports_positive_error() {
        let truth = PowerModel::new(PowerShape::Linear, 100.0, 300.0).unwrap();
        let series = synth(&truth, 51);
        let exact = calibrate_power_model(&series, PowerShape::Linear).unwrap();
        let mismatched = calibrate_power_model(&series, PowerShape::Sqrt).unwrap();
        assert!(exact.mape < 1e-6, "{}", exact.mape);
        assert!(mismatched.mape > 1e-3, "{}", mismatched.mape);
    }

    #[test]
    fn single_utilization_level_is_degenerate() {
        let series = vec![(0.5, 100.0), (0.5, 110.0), (0.5, 90.0)];
        let fit = calibrate_power_model(&series, PowerShape::Linear).unwrap();
        assert!(fit.degenerate);
        assert_eq!(fit.model.idle_w, 0.0);
        assert!((fit.model.max_w * 0.5 - 100.0).abs() < 1e-9, "{:?}", fit.model);

        let idle_only = calibrate_power_model(&[(0.0, 40.0), (0.0, 44.0)], PowerShape::Sqrt).unwrap();
        assert!(idle_only.degenerate);
        assert_eq!(idle_only.model.idle_w, idle_only.model.max_w);
    }

    #[test]
    fn all_zero_observations_rejected() {
        assert!(calibrate_power_model(&[(0.1, 0.0), (0.9, 0.0)], PowerShape::Linear).is_err());
        assert!(calibrate_power_model(&[], PowerShape::Linear).is_err());
        assert!(calibrate_power_model(&[(0.1, f64::NAN)], PowerShape::Linear).is_err());
    }

    #[test]
    fn noisy_series_fit_beats_initial_guess() {
        let truth = PowerModel::new(PowerShape::Cubic, 80.0, 250.0).unwrap();
        let series: Vec<(f64, f64)> = synth(&truth, 60)
            .into_iter()
            .enumerate()
            .map(|(i, (u, w))| (u, w * if i % 2 == 0 { 1.03 } else { 0.97 }))
            .collect();
        let fit = calibrate_power_model(&series, PowerShape::Cubic).unwrap();
        assert!(fit.mape <= mape(&truth, &series) + 1e-9);
    }
}
