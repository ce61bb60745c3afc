//! Feasibility analysis: the maximum attainable detection probability under
//! the power and unit-modulus budgets, the feasibility gate it induces,
//! minimum-transmit-power curves, the scattering surface area, the ultimate
//! detection resolution search, and the required sensing duration.

use crate::beamforming::{optimize_receive_combiner, solve_power_split};
use crate::error::{Error, Result};
use crate::linalg::{
    hermitian_eig, numerical_rank, rank_one_recovery, reduce_rank, C64, CMat,
    CVec,
};
use crate::operators::build_sensing_operators;
use crate::scenario::{directional_phases, ChannelSet};
use crate::sdp::{solve_sdp, ConstraintOp, SdpProblem, SdpStatus, Sense};
use crate::sensing::{inv_q_function, matrix_mcs, SensingGrid, SensingRegion};
use crate::system::{BeamformingSolution, IsacSystem};

/// Outcome of the detection-probability maximization.
#[derive(Debug, Clone)]
pub struct FeasibilityReport {
    /// Maximum detection probability `U`.
    pub u: f64,
    /// The maximizing design, scored.
    pub solution: BeamformingSolution,
    /// `U ≥ γ − 1e-9` for the configured requirement.
    pub feasible: bool,
    pub max_echo_mw: f64,
    /// Echo power after each alternation round (monotone non-decreasing).
    pub echo_trace: Vec<f64>,
}

/// Result of the detection-resolution search with tied angle spreads.
#[derive(Debug, Clone, Copy)]
pub struct UdrResult {
    /// Converged spread `Δθ = Δφ = Δ*`.
    pub delta_star: f64,
    /// Scattering surface area at the converged spread, m².
    pub area_m2: f64,
    pub gamma: f64,
    /// Sensing duration that would pin the maximum detection probability at
    /// `gamma` for this spread.
    pub t0_required: Option<f64>,
}

/// Phase recovery from a relaxed `Q` (reference entry is the appended 1).
fn recover_phases(q_mat: &CMat) -> Result<CVec> {
    let dim = q_mat.nrows();
    let q = rank_one_recovery(q_mat, dim - 1)?;
    let anchor = q[dim - 1];
    let mut omega = CVec::zeros(dim - 1);
    for l in 0..dim - 1 {
        let ratio = q[l] / anchor;
        omega[l] = if ratio.norm() <= 1e-14 {
            C64::new(1.0, 0.0)
        } else {
            ratio / C64::new(ratio.norm(), 0.0)
        };
    }
    Ok(omega)
}

/// One echo-maximization step over the phases: successive maximization of the
/// linear surrogate `tr(Υ_{Q_k} Q)` under the diagonal pinning, with recovery
/// fallback to the incoming phases if the projection loses echo power.
fn maximize_phases_for_echo(
    system: &IsacSystem,
    channels: &ChannelSet,
    grid: &SensingGrid,
    omega: &CVec,
    w_c: &CVec,
    w_s: &CVec,
    w_rx: &CVec,
) -> Result<CVec> {
    let n = omega.len();
    let dim = n + 1;
    let ops = build_sensing_operators(w_c, w_s, w_rx, grid, channels)?;
    let mut q1 = CVec::zeros(dim);
    for i in 0..n {
        q1[i] = omega[i];
    }
    q1[n] = C64::new(1.0, 0.0);
    let mut q_k = &q1 * q1.adjoint();

    let mut best_omega = omega.clone();
    let mut best_echo = system.echo(channels, grid, omega, w_c, w_s, w_rx);
    let mut objective = ops.eval_v(&q_k).norm();

    for _ in 0..system.tolerances.sca_max_iter {
        let upsilon = match ops.upsilon(&q_k) {
            Ok(u) => u,
            Err(_) => break,
        };
        let mut p = SdpProblem::new(Sense::Maximize);
        let qv = p.add_matrix_var("Q", dim);
        let mut obj = p.form();
        obj.matrix_coeffs[qv] = Some(upsilon);
        p.set_objective(obj);
        for l in 0..dim {
            let mut sel = CMat::zeros(dim, dim);
            sel[(l, l)] = C64::new(1.0, 0.0);
            let mut cons = p.form();
            cons.matrix_coeffs[qv] = Some(sel);
            p.add_constraint(cons, ConstraintOp::Eq, 1.0, format!("diag {l}"));
        }
        let sol = solve_sdp(&p)?;
        if sol.status != SdpStatus::Optimal {
            break;
        }
        let q_new = sol.matrix_values[qv].clone();
        let new_objective = ops.eval_v(&q_new).norm();
        let gap = new_objective - objective;
        q_k = q_new;
        objective = new_objective;

        if let Ok(candidate) = recover_phases(&q_k) {
            let echo = system.echo(channels, grid, &candidate, w_c, w_s, w_rx);
            if echo > best_echo {
                best_echo = echo;
                best_omega = candidate;
            }
        }
        if gap.abs() <= 1e-4 * objective.abs().max(1e-300) {
            break;
        }
    }
    Ok(best_omega)
}

/// Maximum detection probability over all designs meeting the power and
/// unit-modulus constraints, by alternating echo-power maximizations: the
/// transmit pair (relaxed trace maximization), the combiner (leading
/// eigenvector) and the phases (surrogate ascent). The echo trace is monotone
/// by construction: every block either improves the exact echo power or keeps
/// the previous block value.
pub fn max_detection_probability(
    system: &IsacSystem,
    channels: &ChannelSet,
) -> Result<FeasibilityReport> {
    max_detection_probability_for(system, channels, &system.region, system.p_tx_mw)
}

/// As [`max_detection_probability`] with explicit region and power overrides
/// (used by the resolution and minimum-power searches).
pub fn max_detection_probability_for(
    system: &IsacSystem,
    channels: &ChannelSet,
    region: &SensingRegion,
    p_tx_mw: f64,
) -> Result<FeasibilityReport> {
    let grid = system.sensing_grid_for(region);
    let n = system.arrays.n();
    let m = system.arrays.m;

    // Directional start: reflect the incident wave toward the sensing patch,
    // combine matched to the returning cascade.
    let mut omega = directional_phases(&system.arrays, system.geometry.ris_incident, region.psi_s);
    let a_s = crate::scenario::upa_steering(
        system.arrays.n_x,
        system.arrays.n_y,
        system.arrays.d,
        system.arrays.lambda,
        region.psi_s.theta,
        region.psi_s.phi,
    );
    let matched = channels
        .h_br
        .ad_mul(&CVec::from_fn(n, |i, _| omega[i].conj() * a_s[i]));
    let mut w_rx = if matched.norm() > 0.0 {
        &matched / C64::new(matched.norm(), 0.0)
    } else {
        CVec::from_fn(m, |i, _| C64::new(((i == 0) as u8) as f64, 0.0))
    };
    let mut w_c = CVec::zeros(m);
    let mut w_s = CVec::zeros(m);

    let mut echo_trace: Vec<f64> = Vec::new();
    let mut last_echo = 0.0;
    for _ in 0..system.tolerances.feasibility_max_iter {
        // Transmit pair: maximize the echo trace under the power budget.
        let m_r = crate::sensing::matrix_mr(&omega, &w_rx, &grid, channels);
        let solve = solve_power_split(&m_r, None, p_tx_mw)?;
        if solve.status != SdpStatus::Infeasible {
            let (wc_mat, ws_mat) = purify_power_only(solve.w_c_mat, solve.w_s_mat, &m_r)?;
            let cand_c = principal(&wc_mat)?;
            let cand_s = principal(&ws_mat)?;
            let new_echo = system.echo(channels, &grid, &omega, &cand_c, &cand_s, &w_rx);
            let old_echo = system.echo(channels, &grid, &omega, &w_c, &w_s, &w_rx);
            if new_echo >= old_echo {
                w_c = cand_c;
                w_s = cand_s;
            }
        }

        // Combiner: exact Rayleigh maximizer.
        let m_cs = matrix_mcs(&omega, &w_c, &w_s, &grid, &system.detection, channels);
        if let Ok(rx) = optimize_receive_combiner(&m_cs) {
            w_rx = rx;
        }

        // Phases: surrogate ascent with projection fallback.
        omega = maximize_phases_for_echo(system, channels, &grid, &omega, &w_c, &w_s, &w_rx)?;

        let echo = system.echo(channels, &grid, &omega, &w_c, &w_s, &w_rx);
        echo_trace.push(echo);
        let gap = echo - last_echo;
        let done = gap <= 1e-4 * echo.abs().max(1e-300) && echo_trace.len() > 1;
        last_echo = echo;
        if done {
            break;
        }
    }

    let metrics = system.score(channels, &grid, &omega, &w_c, &w_s, &w_rx);
    let u = metrics.detection_probability;
    Ok(FeasibilityReport {
        u,
        feasible: u >= system.detection.gamma_min - 1e-9,
        max_echo_mw: metrics.echo_power_mw,
        echo_trace,
        solution: BeamformingSolution {
            w_c,
            w_s,
            w_rx,
            omega,
            metrics,
        },
    })
}

fn principal(w_mat: &CMat) -> Result<CVec> {
    let eig = hermitian_eig(w_mat)?;
    let lam = eig.eigenvalues[0];
    if lam <= 1e-14 * w_mat.norm().max(1e-300) || lam <= 0.0 {
        return Ok(CVec::zeros(w_mat.nrows()));
    }
    Ok(eig.eigenvectors.column(0).into_owned() * C64::new(lam.sqrt(), 0.0))
}

fn purify_power_only(w_c: CMat, w_s: CMat, m_r: &CMat) -> Result<(CMat, CMat)> {
    let m = w_c.nrows();
    let traces = vec![CMat::identity(m, m), m_r.clone()];
    let reduce = |w: CMat| -> Result<CMat> {
        if numerical_rank(&w, 1e-6)? <= 1 {
            Ok(w)
        } else {
            reduce_rank(&w, &traces)
        }
    };
    Ok((reduce(w_c)?, reduce(w_s)?))
}

/// The feasibility gate: whether some design reaches the required detection
/// probability. The maximizing design doubles as the initial point of the main
/// alternation.
pub fn check_feasibility(system: &IsacSystem, channels: &ChannelSet) -> Result<FeasibilityReport> {
    max_detection_probability(system, channels)
}

/// Minimum transmit power (mW) whose maximum detection probability reaches
/// `gamma`, found by bisection on the dBm scale to 0.05 dB. The bracket is
/// `(lo_dbm, hi_dbm)`; the top of the bracket must already be feasible.
pub fn minimum_transmit_power(
    system: &IsacSystem,
    channels: &ChannelSet,
    gamma: f64,
    bracket_dbm: (f64, f64),
) -> Result<f64> {
    let (mut lo, mut hi) = bracket_dbm;
    if lo >= hi {
        return Err(Error::InvalidInput("empty power bracket".into()));
    }
    let u_of = |p_dbm: f64| -> Result<f64> {
        let p_mw = crate::scenario::dbm_to_mw(p_dbm);
        Ok(max_detection_probability_for(system, channels, &system.region, p_mw)?.u)
    };
    let u_hi = u_of(hi)?;
    if u_hi < gamma {
        return Err(Error::Infeasible(format!(
            "maximum detection probability {u_hi:.6} at the bracket top stays below {gamma}"
        )));
    }
    if u_of(lo)? >= gamma {
        return Ok(crate::scenario::dbm_to_mw(lo));
    }
    while hi - lo > 0.05 {
        let mid = 0.5 * (lo + hi);
        if u_of(mid)? >= gamma {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(crate::scenario::dbm_to_mw(hi))
}

/// Scattering surface area of an angular patch at the worst-case range:
/// `r² Δφ (cos(θ_S − Δθ/2) − cos(θ_S + Δθ/2)) = 2 r² Δφ sinθ_S sin(Δθ/2)`.
pub fn scattering_area(region: &SensingRegion) -> f64 {
    2.0 * region.r_max
        * region.r_max
        * region.delta_phi
        * region.psi_s.theta.sin()
        * (region.delta_theta / 2.0).sin()
}

/// Bisection over the tied angle spread `Δθ = Δφ = Δ` for the smallest
/// detectable target: finds `Δ*` with `|U(Δ*) − γ| ≤ tol`. The monotonicity
/// premise is probed at three spreads before bisecting; the designed system's
/// spread is the upper end of the search.
pub fn udr_search(
    system: &IsacSystem,
    channels: &ChannelSet,
    gamma: f64,
    tol: f64,
) -> Result<UdrResult> {
    let delta_max = system.region.delta_theta.max(system.region.delta_phi);
    let u_at = |delta: f64| -> Result<(f64, f64)> {
        let region = system.region.with_spread(delta)?;
        let report = max_detection_probability_for(system, channels, &region, system.p_tx_mw)?;
        Ok((report.u, report.max_echo_mw))
    };

    // Monotonicity probe: U must not decrease with the spread.
    let (u_quarter, _) = u_at(delta_max / 4.0)?;
    let (u_half, _) = u_at(delta_max / 2.0)?;
    let (u_full, echo_full) = u_at(delta_max)?;
    let slack = 1e-6;
    if !(u_quarter <= u_half + slack && u_half <= u_full + slack) {
        return Err(Error::SolverFailure(format!(
            "detection probability is not monotone in the spread: \
             U({:.4}) = {u_quarter:.6}, U({:.4}) = {u_half:.6}, U({:.4}) = {u_full:.6}",
            delta_max / 4.0,
            delta_max / 2.0,
            delta_max
        )));
    }
    if u_full < gamma {
        return Err(Error::Infeasible(format!(
            "target undetectable at any admissible size: U({delta_max:.4}) = {u_full:.6} < {gamma}"
        )));
    }

    // Establish a lower end with U < γ.
    let mut hi = delta_max;
    let mut u_hi = u_full;
    let mut lo = delta_max / 2.0;
    let mut u_lo = u_half;
    if (u_full - gamma).abs() <= tol {
        return finish_udr(system, channels, delta_max, gamma, echo_full);
    }
    let mut shrink_guard = 0;
    while u_lo >= gamma {
        hi = lo;
        u_hi = u_lo;
        lo /= 2.0;
        u_lo = u_at(lo)?.0;
        shrink_guard += 1;
        if shrink_guard > 20 {
            // Even vanishing spreads stay detectable; report the smallest probe.
            return finish_udr(system, channels, lo, gamma, u_at(lo)?.1);
        }
    }
    let _ = u_hi;

    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let (u_mid, echo_mid) = u_at(mid)?;
        if (u_mid - gamma).abs() <= tol {
            return finish_udr(system, channels, mid, gamma, echo_mid);
        }
        if u_mid >= gamma {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let (u_hi_final, echo_hi) = u_at(hi)?;
    if (u_hi_final - gamma).abs() <= 10.0 * tol {
        return finish_udr(system, channels, hi, gamma, echo_hi);
    }
    Err(Error::SolverFailure(
        "resolution bisection did not reach the requested tolerance".into(),
    ))
}

fn finish_udr(
    system: &IsacSystem,
    channels: &ChannelSet,
    delta_star: f64,
    gamma: f64,
    max_echo_mw: f64,
) -> Result<UdrResult> {
    let region = system.region.with_spread(delta_star)?;
    let t0 = required_t0_from_echo(system, gamma, max_echo_mw).ok();
    let _ = channels;
    Ok(UdrResult {
        delta_star,
        area_m2: scattering_area(&region),
        gamma,
        t0_required: t0,
    })
}

/// Sensing duration that pins the maximum detection probability at `gamma`:
/// `T₀ = σ_n²/(f_s · maxP_rx) · (Q⁻¹(P_f) − Q⁻¹(γ))²`, with the false-alarm
/// rate held at its configured value while `T₀` varies.
pub fn required_t0(system: &IsacSystem, channels: &ChannelSet, region: &SensingRegion) -> Result<f64> {
    let report = max_detection_probability_for(system, channels, region, system.p_tx_mw)?;
    required_t0_from_echo(system, system.detection.gamma_min, report.max_echo_mw)
}

/// The closed-form duration given a maximum echo power.
pub fn required_t0_from_echo(system: &IsacSystem, gamma: f64, max_echo_mw: f64) -> Result<f64> {
    if max_echo_mw <= 0.0 {
        return Err(Error::InvalidInput(
            "maximum echo power is zero; no sensing duration can reach the target".into(),
        ));
    }
    let pf = system
        .detection
        .false_alarm_rate(system.channel_params.sigma_sense_sq);
    let spread = inv_q_function(pf)? - inv_q_function(gamma)?;
    Ok(system.channel_params.sigma_sense_sq / (system.detection.fs * max_echo_mw) * spread * spread)
}

/// Trace-preservation helper shared with tests.
pub fn echo_trace_of(report: &FeasibilityReport) -> &[f64] {
    &report.echo_trace
}
