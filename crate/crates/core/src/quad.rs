//! Adaptive Gauss-Kronrod quadrature (G7, K15) for the bath correlation
//! function and influence coefficients.

use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

// 15-point Kronrod abscissae on [0, 1] side (symmetric), QUADPACK values.
const XGK: [f64; 8] = [
    0.991455371120813,
    0.949107912342759,
    0.864864423359769,
    0.741531185599394,
    0.586087235467691,
    0.405845151377397,
    0.207784955007898,
    0.0,
];
const WGK: [f64; 8] = [
    0.022935322010529,
    0.063092092629979,
    0.104790010322250,
    0.140653259715525,
    0.169004726639267,
    0.190350578064785,
    0.204432940075298,
    0.209482141084728,
];
// 7-point Gauss weights matching XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129484966168870,
    0.279705391489277,
    0.381830050505119,
    0.417959183673469,
];

/// One G7/K15 panel: returns (kronrod, |kronrod - gauss|).
fn gk15<F: Fn(f64) -> C64>(f: &F, a: f64, b: f64) -> (C64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut kronrod = C64::new(0.0, 0.0);
    let mut gauss = C64::new(0.0, 0.0);
    for (i, (&x, &wk)) in XGK.iter().zip(WGK.iter()).enumerate() {
        let (fl, fr) = if x == 0.0 {
            let v = f(c);
            (v, C64::new(0.0, 0.0))
        } else {
            (f(c - h * x), f(c + h * x))
        };
        let pair = fl + fr;
        kronrod += pair * wk;
        // Odd indices (and the center node at i = 7) are the G7 nodes.
        if i % 2 == 1 {
            gauss += pair * WG[i / 2];
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).norm())
}

/// Adaptive integration of a complex-valued function over [a, b].
///
/// Bisects panels until each local error passes
/// `err <= max(abs_tol, rel_tol * |whole|) * len / (b - a)`.
pub(crate) fn integrate<F: Fn(f64) -> C64>(
    f: &F,
    a: f64,
    b: f64,
    rel_tol: f64,
    abs_tol: f64,
) -> Result<C64> {
    if a == b {
        return Ok(C64::new(0.0, 0.0));
    }
    let (whole, _) = gk15(f, a, b);
    let mut total = C64::new(0.0, 0.0);
    // Manual stack of (a, b, depth).
    let mut stack: Vec<(f64, f64, u32)> = vec![(a, b, 0)];
    let full = (b - a).abs();
    while let Some((lo, hi, depth)) = stack.pop() {
        let (val, err) = gk15(f, lo, hi);
        let budget = abs_tol.max(rel_tol * whole.norm()).max(rel_tol * total.norm())
            * ((hi - lo).abs() / full);
        if err <= budget || err <= f64::EPSILON * val.norm() {
            total += val;
        } else if depth >= 48 {
            return Err(Error::Quadrature(format!(
                "panel [{lo}, {hi}] error {err:.3e} above budget {budget:.3e} at max depth"
            )));
        } else {
            let mid = 0.5 * (lo + hi);
            stack.push((lo, mid, depth + 1));
            stack.push((mid, hi, depth + 1));
        }
    }
    Ok(total)
}

/// Real-valued convenience wrapper.
#[cfg_attr(not(test), allow(dead_code))]
pub(crate) fn integrate_real<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    rel_tol: f64,
    abs_tol: f64,
) -> Result<f64> {
    integrate(&|x| C64::new(f(x), 0.0), a, b, rel_tol, abs_tol).map(|z| z.re)
}
