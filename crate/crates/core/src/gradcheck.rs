//! Central finite-difference gradient checks.

/// `|a - n| / max(|a|, |n|, floor)`. The floor keeps near-zero entries
/// from producing huge ratios out of rounding noise.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub entries: usize,
    pub max_relative_error: f64,
    pub max_absolute_error: f64,
}

impl GradCheck {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_relative_error <= tolerance
    }

    pub fn merge(self, other: GradCheck) -> GradCheck {
        GradCheck {
            entries: self.entries + other.entries,
            max_relative_error: self.max_relative_error.max(other.max_relative_error),
            max_absolute_error: self.max_absolute_error.max(other.max_absolute_error),
        }
    }
}

/// Near the cube root of f64 machine epsilon, which balances truncation
/// against rounding error for central differences.
pub const DEFAULT_STEP: f64 = 1e-5;
/// Gradient entries smaller than this are compared in absolute terms.
pub const DEFAULT_FLOOR: f64 = 1e-6;

/// Compare `analytic` against `(f(x + h e_i) - f(x - h e_i)) / 2h` for
/// every coordinate of `x`. `f` receives the perturbed vector.
pub fn check_gradient(
    f: impl FnMut(&[f64]) -> f64,
    x: &[f64],
    analytic: &[f64],
    h: f64,
    floor: f64,
) -> GradCheck {
    check_with(f, x, analytic, h, floor, 0)
}

/// Like [`check_gradient`] for piecewise-smooth functions (ReLU networks).
/// A perturbation that straddles a kink makes the central difference depend
/// on the step, so each coordinate is re-estimated with the step divided by
/// 10 until two consecutive estimates agree, at most `retries` times.
pub fn check_gradient_piecewise(
    f: impl FnMut(&[f64]) -> f64,
    x: &[f64],
    analytic: &[f64],
    h: f64,
    floor: f64,
    retries: usize,
) -> GradCheck {
    check_with(f, x, analytic, h, floor, retries)
}

/// Consecutive estimates closer than this (relative) are accepted.
const AGREEMENT: f64 = 1e-2;

fn check_with(
    mut f: impl FnMut(&[f64]) -> f64,
    x: &[f64],
    analytic: &[f64],
    h: f64,
    floor: f64,
    retries: usize,
) -> GradCheck {
    assert_eq!(x.len(), analytic.len(), "gradient length mismatch");
    let mut p = x.to_vec();
    let mut central = |i: usize, step: f64| {
        p[i] = x[i] + step;
        let plus = f(&p);
        p[i] = x[i] - step;
        let minus = f(&p);
        p[i] = x[i];
        (plus - minus) / (2.0 * step)
    };
    let mut out = GradCheck {
        entries: x.len(),
        max_relative_error: 0.0,
        max_absolute_error: 0.0,
    };
    for i in 0..x.len() {
        let mut step = h;
        let mut numeric = central(i, step);
        for _ in 0..retries {
            step /= 10.0;
            let finer = central(i, step);
            if relative_error(numeric, finer, floor) <= AGREEMENT {
                break;
            }
            numeric = finer;
        }
        out.max_absolute_error = out.max_absolute_error.max((analytic[i] - numeric).abs());
        out.max_relative_error = out
            .max_relative_error
            .max(relative_error(analytic[i], numeric, floor));
    }
    out
}
