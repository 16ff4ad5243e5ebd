//! Fitting of storage decay curves, the analytic effective decay rate of
//! the stored excitation, and grid optimization of Gaussian write pulses.

use crate::error::{Error, Result};
use crate::linalg::CMat;
use crate::model::SystemSpec;
use crate::par::*;
use crate::protocol::{dark_occupation_after_write, WriteSettings};
use crate::pulses::{gaussian_sigma_from_fwhm, PulseSpec};
use ndarray::Array2;
use num_complex::Complex64 as C64;

/// Result of the exponential fit c · e^(-τ/τ*).
#[derive(Clone, Copy, Debug)]
pub struct FitResult {
    /// Scaling constant c.
    pub amplitude: f64,
    /// Decay time τ*, ns.
    pub tau_star_ns: f64,
    /// Root-mean-square residual.
    pub rms: f64,
    /// Covariance estimate of (c, τ*) from the final Jacobian.
    pub covariance: [[f64; 2]; 2],
    /// Number of points entering the fit after the head cutoff.
    pub points_used: usize,
    /// Head cutoff actually applied, ns.
    pub head_cutoff_ns: Option<f64>,
}

/// Options of [`fit_exponential`].
#[derive(Clone, Copy, Debug)]
pub struct FitOptions {
    /// Discard points with τ below this, ns. The initial oscillation band
    /// of a storage sweep is excluded this way.
    pub head_cutoff_ns: Option<f64>,
    /// Require the fitted span to resolve the decay time.
    pub check_span: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            head_cutoff_ns: None,
            check_span: true,
        }
    }
}

/// Nonlinear least squares for c · e^(-τ/τ*) on (τ [ns], value) points,
/// seeded by a log-linear regression and refined by Levenberg-Marquardt.
pub fn fit_exponential(points: &[(f64, f64)], opts: &FitOptions) -> Result<FitResult> {
    let used: Vec<(f64, f64)> = match opts.head_cutoff_ns {
        Some(cut) => points.iter().copied().filter(|(t, _)| *t >= cut).collect(),
        None => points.to_vec(),
    };
    if used.len() < 5 {
        return Err(Error::FitInsufficientPoints {
            needed: 5,
            got: used.len(),
        });
    }

    // Log-linear seed on the positive values.
    let logs: Vec<(f64, f64)> = used
        .iter()
        .filter(|(_, y)| *y > 0.0)
        .map(|(t, y)| (*t, y.ln()))
        .collect();
    if logs.len() < 2 {
        return Err(Error::FitDidNotConverge(
            "fewer than two positive values for the seed".into(),
        ));
    }
    let n = logs.len() as f64;
    let sx: f64 = logs.iter().map(|(t, _)| t).sum();
    let sy: f64 = logs.iter().map(|(_, l)| l).sum();
    let sxx: f64 = logs.iter().map(|(t, _)| t * t).sum();
    let sxy: f64 = logs.iter().map(|(t, l)| t * l).sum();
    let denom = n * sxx - sx * sx;
    let span = used.last().unwrap().0 - used[0].0;
    let (mut c, mut tau) = if denom.abs() > 1e-300 {
        let slope = (n * sxy - sx * sy) / denom;
        let intercept = (sy - slope * sx) / n;
        let tau = if slope < -1e-300 { -1.0 / slope } else { 10.0 * span.max(1.0) };
        (intercept.exp(), tau)
    } else {
        (used[0].1.max(1e-12), span.max(1.0))
    };

    let cost_of = |c: f64, tau: f64| -> f64 {
        used.iter()
            .map(|(t, y)| (y - c * (-t / tau).exp()).powi(2))
            .sum()
    };
    let mut cost = cost_of(c, tau);
    let mut lambda = 1e-3;
    let mut converged = false;
    for _ in 0..200 {
        // Normal equations of the 2-parameter problem.
        let (mut jtj00, mut jtj01, mut jtj11) = (0.0, 0.0, 0.0);
        let (mut jtr0, mut jtr1) = (0.0, 0.0);
        for (t, y) in &used {
            let e = (-t / tau).exp();
            let j0 = e;
            let j1 = c * t / (tau * tau) * e;
            let r = y - c * e;
            jtj00 += j0 * j0;
            jtj01 += j0 * j1;
            jtj11 += j1 * j1;
            jtr0 += j0 * r;
            jtr1 += j1 * r;
        }
        let mut improved = false;
        for _ in 0..60 {
            let a00 = jtj00 * (1.0 + lambda);
            let a11 = jtj11 * (1.0 + lambda);
            let det = a00 * a11 - jtj01 * jtj01;
            if det.abs() < 1e-300 {
                break;
            }
            let dc = (a11 * jtr0 - jtj01 * jtr1) / det;
            let dtau = (a00 * jtr1 - jtj01 * jtr0) / det;
            let (c_new, tau_new) = (c + dc, tau + dtau);
            if tau_new > 0.0 {
                let cost_new = cost_of(c_new, tau_new);
                if cost_new <= cost {
                    let rel_step =
                        (dc.abs() / c.abs().max(1e-12)).max(dtau.abs() / tau.abs().max(1e-12));
                    c = c_new;
                    tau = tau_new;
                    cost = cost_new;
                    lambda = (lambda / 3.0).max(1e-14);
                    improved = true;
                    if rel_step < 1e-12 {
                        converged = true;
                    }
                    break;
                }
            }
            lambda *= 10.0;
            if lambda > 1e14 {
                break;
            }
        }
        if converged || !improved {
            converged = converged || !improved;
            break;
        }
    }
    if !converged {
        return Err(Error::FitDidNotConverge(format!(
            "no stationary point after 200 iterations (c = {c}, tau = {tau})"
        )));
    }

    if opts.check_span && span < 0.5 * tau {
        return Err(Error::FitSpanTooShort {
            span_ns: span,
            tau_star_ns: tau,
        });
    }

    // Residual statistics and covariance from the final Jacobian.
    let (mut jtj00, mut jtj01, mut jtj11, mut ss) = (0.0, 0.0, 0.0, 0.0);
    for (t, y) in &used {
        let e = (-t / tau).exp();
        let j1 = c * t / (tau * tau) * e;
        let r = y - c * e;
        jtj00 += e * e;
        jtj01 += e * j1;
        jtj11 += j1 * j1;
        ss += r * r;
    }
    let sigma2 = ss / (used.len() as f64 - 2.0);
    let det = jtj00 * jtj11 - jtj01 * jtj01;
    let covariance = if det.abs() > 1e-300 {
        [
            [sigma2 * jtj11 / det, -sigma2 * jtj01 / det],
            [-sigma2 * jtj01 / det, sigma2 * jtj00 / det],
        ]
    } else {
        [[f64::INFINITY; 2]; 2]
    };

    Ok(FitResult {
        amplitude: c,
        tau_star_ns: tau,
        rms: (ss / used.len() as f64).sqrt(),
        covariance,
        points_used: used.len(),
        head_cutoff_ns: opts.head_cutoff_ns,
    })
}

/// Analytic storage decay time, ns:
/// τ*(δ_eff) = [(J/2δ_eff)² (γ_X - γ_D) + γ_D]⁻¹,
/// valid for J, ħg ≪ δ_eff. Rates in ns⁻¹, energies in meV.
pub fn analytic_tau(flip_coupling: f64, delta_eff: f64, gamma_x: f64, gamma_d: f64) -> Result<f64> {
    if delta_eff <= 0.0 {
        return Err(Error::Domain(format!(
            "analytic decay time needs delta_eff > 0, got {delta_eff} meV"
        )));
    }
    if flip_coupling < 0.0 {
        return Err(Error::Domain(format!(
            "analytic decay time needs J >= 0, got {flip_coupling} meV"
        )));
    }
    let mixing = (flip_coupling / (2.0 * delta_eff)).powi(2);
    let rate = mixing * (gamma_x - gamma_d) + gamma_d;
    if rate <= 0.0 {
        return Err(Error::Domain(
            "effective decay rate vanished; no finite decay time".into(),
        ));
    }
    Ok(1.0 / rate)
}

/// The storage eigenstate |d> = c_D |D,0> + c_X |X,0> of the coherent
/// storage Hamiltonian, with its energy and effective decay rate.
#[derive(Clone, Copy, Debug)]
pub struct DarkEigenstate {
    pub c_x: f64,
    pub c_d: f64,
    /// Eigenenergy, meV (below the bright state).
    pub energy: f64,
    /// Effective decay rate c_X² γ_X + c_D² γ_D, ns⁻¹.
    pub gamma_eff: f64,
}

/// Closed-form lowest eigenstate of the upper-left 2×2 block of the
/// storage Hamiltonian; the |G,1> admixture of order J g / δ_eff² is
/// neglected.
pub fn dark_eigenstate(
    flip_coupling: f64,
    delta_eff: f64,
    gamma_x: f64,
    gamma_d: f64,
) -> Result<DarkEigenstate> {
    if delta_eff <= 0.0 {
        return Err(Error::Domain(format!(
            "dark eigenstate needs delta_eff > 0, got {delta_eff} meV"
        )));
    }
    let root = (delta_eff.powi(2) + flip_coupling.powi(2)).sqrt();
    let c_x = flip_coupling / (flip_coupling.powi(2) + (delta_eff + root).powi(2)).sqrt();
    let c_d = (1.0 - c_x * c_x).sqrt();
    Ok(DarkEigenstate {
        c_x,
        c_d,
        energy: -0.5 * (delta_eff + root),
        gamma_eff: c_x * c_x * gamma_x + c_d * c_d * gamma_d,
    })
}

/// Coherent storage Hamiltonian in the basis {|D,0>, |X,0>, |G,1>}, meV.
/// The brute-force eigensolve of this matrix is the independent check of
/// [`dark_eigenstate`].
pub fn storage_hamiltonian(flip_coupling: f64, delta_eff: f64, hbar_g: f64) -> CMat {
    let mut h: CMat = Array2::zeros((3, 3));
    h[[0, 0]] = C64::new(-delta_eff, 0.0);
    h[[0, 1]] = C64::new(-0.5 * flip_coupling, 0.0);
    h[[1, 0]] = C64::new(-0.5 * flip_coupling, 0.0);
    h[[1, 2]] = C64::new(hbar_g, 0.0);
    h[[2, 1]] = C64::new(hbar_g, 0.0);
    h
}

/// Search grid for the Gaussian pulse parameters.
#[derive(Clone, Debug)]
pub struct GaussianGrid {
    /// Pulse areas Θ, radians.
    pub theta: Vec<f64>,
    /// Standard deviations σ, ps.
    pub sigma: Vec<f64>,
    /// Center times t0, ps.
    pub t0: Vec<f64>,
}

impl GaussianGrid {
    /// Linear grid from inclusive ranges.
    pub fn linear(
        theta: (f64, f64, usize),
        sigma: (f64, f64, usize),
        t0: (f64, f64, usize),
    ) -> Self {
        GaussianGrid {
            theta: linspace(theta.0, theta.1, theta.2),
            sigma: linspace(sigma.0, sigma.1, sigma.2),
            t0: linspace(t0.0, t0.1, t0.2),
        }
    }

    /// Grid specified by full width at half maximum instead of σ.
    pub fn linear_fwhm(
        theta: (f64, f64, usize),
        fwhm: (f64, f64, usize),
        t0: (f64, f64, usize),
    ) -> Self {
        GaussianGrid {
            theta: linspace(theta.0, theta.1, theta.2),
            sigma: linspace(fwhm.0, fwhm.1, fwhm.2)
                .into_iter()
                .map(gaussian_sigma_from_fwhm)
                .collect(),
            t0: linspace(t0.0, t0.1, t0.2),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.theta.is_empty() || self.sigma.is_empty() || self.t0.is_empty() {
            return Err(Error::Spec("gaussian grid must be non-empty in every axis".into()));
        }
        Ok(())
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![lo];
    }
    (0..n)
        .map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64)
        .collect()
}

/// Optimal Gaussian write pulse found by the search.
#[derive(Clone, Copy, Debug)]
pub struct GaussianOptimum {
    pub theta: f64,
    pub sigma: f64,
    pub t0: f64,
    /// Dark occupation after the write pulse at the optimum.
    pub dark_occupation: f64,
}

/// Exhaustive grid search of the dark occupation after a Gaussian write
/// pulse over (Θ, σ, t0), with deterministic lowest-(Θ, σ, t0) tie
/// breaking, optionally refined around the coarse optimum.
///
/// Grid points evaluate in parallel; the argmax scan is sequential in
/// index order, so the result is independent of the worker count.
pub fn optimize_gaussian(
    sys: &SystemSpec,
    grid: &GaussianGrid,
    settings: &WriteSettings,
    refine_levels: usize,
) -> Result<GaussianOptimum> {
    grid.validate()?;
    let mut current = grid.clone();
    let mut best = evaluate_grid(sys, &current, settings)?;
    for _ in 0..refine_levels {
        let refined = GaussianGrid {
            theta: refine_axis(&current.theta, best.0),
            sigma: refine_axis(&current.sigma, best.1),
            t0: refine_axis(&current.t0, best.2),
        };
        let candidate = evaluate_grid(sys, &refined, settings)?;
        if candidate.3 > best.3 {
            best = candidate;
            current = refined;
        } else {
            break;
        }
    }
    let (i, j, k, value) = best;
    Ok(GaussianOptimum {
        theta: current.theta[i],
        sigma: current.sigma[j],
        t0: current.t0[k],
        dark_occupation: value,
    })
}

type GridBest = (usize, usize, usize, f64);

fn evaluate_grid(
    sys: &SystemSpec,
    grid: &GaussianGrid,
    settings: &WriteSettings,
) -> Result<GridBest> {
    let (nt, ns, n0) = (grid.theta.len(), grid.sigma.len(), grid.t0.len());
    let values: Result<Vec<f64>> = (0..nt * ns * n0)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|flat| {
            let (i, rest) = (flat / (ns * n0), flat % (ns * n0));
            let (j, k) = (rest / n0, rest % n0);
            let pulse = PulseSpec::Gauss {
                theta: grid.theta[i],
                sigma: grid.sigma[j],
                t0: grid.t0[k],
            };
            dark_occupation_after_write(&pulse, sys, settings)
        })
        .collect();
    let values = values?;
    let mut best = (0usize, 0usize, 0usize, f64::NEG_INFINITY);
    for i in 0..nt {
        for j in 0..ns {
            for k in 0..n0 {
                let v = values[(i * ns + j) * n0 + k];
                if v > best.3 {
                    best = (i, j, k, v);
                }
            }
        }
    }
    Ok(best)
}

/// One-cell bracket around the winning index, re-gridded at the original
/// point count.
fn refine_axis(axis: &[f64], winner: usize) -> Vec<f64> {
    if axis.len() <= 1 {
        return axis.to_vec();
    }
    let lo = axis[winner.saturating_sub(1)];
    let hi = axis[(winner + 1).min(axis.len() - 1)];
    linspace(lo, hi, axis.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg;
    use crate::model::{ModelParams, SystemSpec};
    use approx::assert_relative_eq;

    #[test]
    fn fit_recovers_exact_exponential() {
        let (c, tau) = (0.85, 50.0);
        let points: Vec<(f64, f64)> = (0..30)
            .map(|k| {
                let t = 100.0 * k as f64 / 29.0;
                (t, c * (-t / tau).exp())
            })
            .collect();
        let fit = fit_exponential(&points, &FitOptions::default()).unwrap();
        assert_relative_eq!(fit.amplitude, c, max_relative = 1e-6);
        assert_relative_eq!(fit.tau_star_ns, tau, max_relative = 1e-6);
        assert!(fit.rms < 1e-10);
    }

    #[test]
    fn fit_is_scale_equivariant() {
        let points: Vec<(f64, f64)> = (0..25)
            .map(|k| {
                let t = 2.0 * k as f64;
                // Slightly noisy but deterministic data.
                let wobble = 1.0 + 1e-4 * (0.7 * t).sin();
                (t, 0.9 * (-t / 30.0).exp() * wobble)
            })
            .collect();
        let base = fit_exponential(&points, &FitOptions::default()).unwrap();
        for s in [0.5, 0.2, 0.05] {
            let scaled: Vec<(f64, f64)> = points.iter().map(|(t, y)| (*t, s * y)).collect();
            let fit = fit_exponential(&scaled, &FitOptions::default()).unwrap();
            assert!((fit.amplitude - s * base.amplitude).abs() < 1e-9);
            assert!((fit.tau_star_ns - base.tau_star_ns).abs() < 1e-9 * base.tau_star_ns);
        }
    }

    #[test]
    fn fit_head_cutoff_and_errors() {
        let tail: Vec<(f64, f64)> = (0..40)
            .map(|k| {
                let t = k as f64;
                let y = 0.8 * (-t / 20.0).exp()
                    + if t < 5.0 { 0.1 * (3.0 * t).sin() } else { 0.0 };
                (t, y)
            })
            .collect();
        let with_cut = fit_exponential(
            &tail,
            &FitOptions {
                head_cutoff_ns: Some(5.0),
                ..Default::default()
            },
        )
        .unwrap();
        assert_relative_eq!(with_cut.tau_star_ns, 20.0, max_relative = 1e-6);
        assert_eq!(with_cut.points_used, 35);

        assert!(matches!(
            fit_exponential(&tail[..4], &FitOptions::default()),
            Err(Error::FitInsufficientPoints { .. })
        ));

        // Span far shorter than the decay time.
        let short: Vec<(f64, f64)> = (0..10)
            .map(|k| {
                let t = 0.01 * k as f64;
                (t, (-t / 100.0).exp())
            })
            .collect();
        assert!(matches!(
            fit_exponential(&short, &FitOptions::default()),
            Err(Error::FitSpanTooShort { .. })
        ));
    }

    #[test]
    fn analytic_tau_reproduces_published_values() {
        // J = 0.25 meV, delta_eff = 1.85 meV -> about 47.8 ns.
        let tau = analytic_tau(0.25, 1.85, 2.4, 0.01).unwrap();
        assert_relative_eq!(tau, 47.82, max_relative = 1e-3);
        // J = 0.05 meV -> about 95.8 ns.
        let tau = analytic_tau(0.05, 1.85, 2.4, 0.01).unwrap();
        assert_relative_eq!(tau, 95.82, max_relative = 1e-3);
        // J -> 0: the intrinsic dark lifetime, exactly 100 ns.
        assert_eq!(analytic_tau(0.0, 1.85, 2.4, 0.01).unwrap(), 100.0);
        assert!(analytic_tau(0.25, 0.0, 2.4, 0.01).is_err());
    }

    #[test]
    fn analytic_tau_monotonic_in_couplings() {
        let mut prev = 0.0;
        for k in 0..40 {
            let delta = 1.0 + 2.0 * k as f64 / 39.0;
            let tau = analytic_tau(0.25, delta, 2.4, 0.01).unwrap();
            assert!(tau > prev);
            prev = tau;
        }
        let mut prev = f64::INFINITY;
        for k in 0..40 {
            let j = 0.05 + 0.45 * k as f64 / 39.0;
            let tau = analytic_tau(j, 1.85, 2.4, 0.01).unwrap();
            assert!(tau < prev);
            prev = tau;
        }
    }

    #[test]
    fn dark_eigenstate_matches_formulas_and_eigenvalue_equation() {
        let st = dark_eigenstate(0.25, 1.85, 2.4, 0.01).unwrap();
        assert_relative_eq!(st.energy, -1.8584, max_relative = 1e-3);
        assert_relative_eq!(st.c_x, 0.0671, max_relative = 2e-3);
        assert_relative_eq!(st.gamma_eff, 0.02076, max_relative = 1e-3);
        assert_relative_eq!(1.0 / st.gamma_eff, 48.2, max_relative = 1e-2);
        assert_relative_eq!(st.c_x * st.c_x + st.c_d * st.c_d, 1.0, epsilon = 1e-12);
        assert!(st.energy < 0.0);

        // (c_D, c_X) solves the upper-left 2x2 eigenvalue problem.
        let (j, delta) = (0.25, 1.85);
        let hv_d = -delta * st.c_d - 0.5 * j * st.c_x;
        let hv_x = -0.5 * j * st.c_d;
        assert!((hv_d - st.energy * st.c_d).abs() < 1e-12);
        assert!((hv_x - st.energy * st.c_x).abs() < 1e-12);

        // Decoupled limit.
        let st = dark_eigenstate(0.0, 1.85, 2.4, 0.01).unwrap();
        assert_eq!(st.c_x, 0.0);
        assert_eq!(st.c_d, 1.0);
        assert_eq!(st.energy, -1.85);
    }

    #[test]
    fn dark_eigenstate_close_to_full_3x3_eigenvector() {
        // Brute-force eigensolve of the 3x3 storage Hamiltonian: the
        // closed form neglects only the O(J g / delta^2) cavity admixture.
        let (j, delta, g) = (0.25, 1.85, 0.1);
        let closed = dark_eigenstate(j, delta, 2.4, 0.01).unwrap();
        let (evals, evecs) = linalg::hermitian_eigen(&storage_hamiltonian(j, delta, g));
        let lowest = 0;
        assert!(evals[lowest] < evals[1]);
        let anchor = evecs[[0, lowest]];
        let phase = anchor / C64::new(anchor.norm(), 0.0);
        let v_d = (evecs[[0, lowest]] / phase).re;
        let v_x = (evecs[[1, lowest]] / phase).re;
        let v_g = (evecs[[2, lowest]] / phase).re;
        assert!((v_d - closed.c_d).abs() < 1e-3);
        assert!((v_x - closed.c_x).abs() < 1e-3);
        // The neglected |G,1> admixture is of order J g / delta^2.
        assert!(v_g.abs() < 2.0 * j * g / (delta * delta));
        assert!((evals[lowest] - closed.energy).abs() < 1e-3);
    }

    #[test]
    fn single_point_grid_returns_that_point() {
        let sys = SystemSpec::from_params(&ModelParams::default()).unwrap();
        let grid = GaussianGrid {
            theta: vec![30.0 * std::f64::consts::PI],
            sigma: vec![3.0],
            t0: vec![15.0],
        };
        let settings = WriteSettings::default();
        let opt = optimize_gaussian(&sys, &grid, &settings, 0).unwrap();
        assert_eq!(opt.theta, 30.0 * std::f64::consts::PI);
        assert_eq!(opt.sigma, 3.0);
        assert_eq!(opt.t0, 15.0);
        assert!(opt.dark_occupation > 0.0 && opt.dark_occupation <= 1.0);
    }
}
