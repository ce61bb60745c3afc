//! Communication SNR, reflective radiation pattern, echo-power surface
//! integral, Neyman-Pearson detection probability, the sensing threshold
//! constant, and the integral-derived Hermitian matrices that drive the
//! sensing-side optimization.

use nalgebra::DMatrix;
use statrs::function::erf;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::linalg::{C64, CMat, CVec};
use crate::quadrature::{map_nodes, pairwise_sum, ExecMode, NodeGrid, QuadratureRule};
use crate::scenario::{
    unit_cell_response, upa_steering, ArrayConfig, ChannelSet, Direction, Geometry, UnitCellModel,
};

/// Angular patch of the scattering surface and the admissible scan region.
#[derive(Debug, Clone, Copy)]
pub struct SensingRegion {
    /// Sensing direction `Ψ_S`.
    pub psi_s: Direction,
    /// Worst-case target range in meters.
    pub r_max: f64,
    pub delta_theta: f64,
    pub delta_phi: f64,
    /// Elevation bounds `(θ₁, θ₂)` of the admissible scan region.
    pub theta_bounds: (f64, f64),
    /// Azimuth bounds `(φ₁, φ₂)`.
    pub phi_bounds: (f64, f64),
}

impl SensingRegion {
    /// Region with scan bounds defaulting to the integration patch widened by
    /// one spread on each side.
    pub fn new(psi_s: Direction, r_max: f64, delta_theta: f64, delta_phi: f64) -> Result<Self> {
        let region = SensingRegion {
            psi_s,
            r_max,
            delta_theta,
            delta_phi,
            theta_bounds: (psi_s.theta - delta_theta, psi_s.theta + delta_theta),
            phi_bounds: (psi_s.phi - delta_phi, psi_s.phi + delta_phi),
        };
        region.validate()?;
        Ok(region)
    }

    pub fn with_spread(&self, delta: f64) -> Result<Self> {
        SensingRegion::new(self.psi_s, self.r_max, delta, delta)
    }

    pub fn with_r_max(&self, r_max: f64) -> Result<Self> {
        SensingRegion::new(self.psi_s, r_max, self.delta_theta, self.delta_phi)
    }

    pub fn validate(&self) -> Result<()> {
        if self.delta_theta <= 0.0 || self.delta_phi <= 0.0 {
            return Err(Error::InvalidInput("angle spreads must be positive".into()));
        }
        if self.r_max <= 0.0 {
            return Err(Error::InvalidInput("r_max must be positive".into()));
        }
        let t_lo = self.psi_s.theta - self.delta_theta / 2.0;
        let t_hi = self.psi_s.theta + self.delta_theta / 2.0;
        if t_lo <= 0.0 || t_hi >= PI {
            return Err(Error::InvalidInput(format!(
                "elevation patch [{t_lo:.4}, {t_hi:.4}] leaves (0, π)"
            )));
        }
        if !(self.theta_bounds.0 <= self.psi_s.theta && self.psi_s.theta <= self.theta_bounds.1) {
            return Err(Error::InvalidInput(
                "sensing elevation outside scan bounds".into(),
            ));
        }
        if !(self.phi_bounds.0 <= self.psi_s.phi && self.psi_s.phi <= self.phi_bounds.1) {
            return Err(Error::InvalidInput(
                "sensing azimuth outside scan bounds".into(),
            ));
        }
        Ok(())
    }

    /// Integration rectangle `[θ_S ± Δθ/2] × [φ_S ± Δφ/2]`.
    pub fn integration_bounds(&self) -> (f64, f64, f64, f64) {
        (
            self.psi_s.theta - self.delta_theta / 2.0,
            self.psi_s.theta + self.delta_theta / 2.0,
            self.psi_s.phi - self.delta_phi / 2.0,
            self.psi_s.phi + self.delta_phi / 2.0,
        )
    }
}

/// Slot duration, sampling, decision threshold and probability requirement for
/// the Neyman-Pearson detector.
#[derive(Debug, Clone, Copy)]
pub struct DetectionSpec {
    /// Sensing slot duration in seconds.
    pub t0: f64,
    /// Sampling frequency in Hz.
    pub fs: f64,
    /// Decision threshold in √mW amplitude units.
    pub eta: f64,
    /// Required minimum detection probability.
    pub gamma_min: f64,
    /// Average first-order scattering loss `E[δ_S]` (linear).
    pub mean_scatter_loss: f64,
    /// Optional direct override of the false-alarm rate (otherwise derived
    /// from `eta`).
    pub pf_override: Option<f64>,
}

impl DetectionSpec {
    /// The reference configuration: `T0 = 0.1 s`, `fs = 1 kHz`,
    /// `η = 10^(−4.5)`, `γ = 0.9`, `E[δ_S] = −10 dB`.
    pub fn reference(gamma_min: f64) -> Self {
        DetectionSpec {
            t0: 0.1,
            fs: 1000.0,
            eta: 10f64.powf(-4.5),
            gamma_min,
            mean_scatter_loss: 0.1,
            pf_override: None,
        }
    }

    pub fn validate(&self, sigma_sense_sq: f64) -> Result<()> {
        if self.t0 <= 0.0 || self.fs <= 0.0 {
            return Err(Error::InvalidInput(
                "slot duration and sampling frequency must be positive".into(),
            ));
        }
        if !(self.gamma_min > 0.0 && self.gamma_min < 1.0) {
            return Err(Error::InvalidInput(format!(
                "gamma_min = {} must lie in (0, 1)",
                self.gamma_min
            )));
        }
        if self.mean_scatter_loss <= 0.0 {
            return Err(Error::InvalidInput(
                "mean scattering loss must be positive".into(),
            ));
        }
        let pf = self.false_alarm_rate(sigma_sense_sq);
        if !(pf > 0.0 && pf < 1.0) {
            return Err(Error::InvalidInput(format!(
                "derived false-alarm rate {pf:.3e} leaves (0, 1)"
            )));
        }
        Ok(())
    }

    /// False-alarm rate `P_f = Q(η / √(σ_n²/(T₀ f_s)))`.
    pub fn false_alarm_rate(&self, sigma_sense_sq: f64) -> f64 {
        if let Some(pf) = self.pf_override {
            return pf;
        }
        q_function(self.eta * (self.t0 * self.fs).sqrt() / sigma_sense_sq.sqrt())
    }

    /// Echo power (mW) at which the detection probability equals `gamma_min`:
    /// `σ_n²/(T₀ f_s) · (Q⁻¹(P_f) − Q⁻¹(γ))²`.
    pub fn required_echo_mw(&self, sigma_sense_sq: f64) -> Result<f64> {
        let pf = self.false_alarm_rate(sigma_sense_sq);
        if self.gamma_min < pf {
            return Err(Error::InvalidInput(format!(
                "gamma_min {} is below the false-alarm floor {pf:.3e}",
                self.gamma_min
            )));
        }
        let spread = inv_q_function(pf)? - inv_q_function(self.gamma_min)?;
        Ok(sigma_sense_sq / (self.t0 * self.fs) * spread * spread)
    }
}

/// Gaussian tail probability `Q(x) = ½ erfc(x/√2)`.
pub fn q_function(x: f64) -> f64 {
    0.5 * erf::erfc(x / std::f64::consts::SQRT_2)
}

/// Inverse of [`q_function`] on `(0, 1)`: a rational initial guess refined by
/// Newton steps against `q_function` itself, accurate to round-off over
/// `[1e-10, 1 − 1e-10]` and monotone-consistent far into the tails.
pub fn inv_q_function(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidInput(format!(
            "inverse Q argument {p} outside (0, 1)"
        )));
    }
    let mut x = -acklam_normal_quantile(p);
    // Newton on Q(x) − p = 0; Q'(x) = −φ(x).
    for _ in 0..3 {
        let pdf = (-(x * x) / 2.0).exp() / (2.0 * PI).sqrt();
        if pdf < 1e-300 {
            break;
        }
        let step = (q_function(x) - p) / pdf;
        x += step;
        if step.abs() <= 1e-16 * x.abs().max(1.0) {
            break;
        }
    }
    Ok(x)
}

/// Acklam's rational approximation to the standard normal quantile Φ⁻¹(p).
fn acklam_normal_quantile(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;
    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    }
}

/// Effective UE channel `g` with `g^H = h_RU^H Ω(Ψ_R, Ψ_U) H_BR + h_BU^H`.
pub fn effective_channel(
    omega: &CVec,
    channels: &ChannelSet,
    geometry: &Geometry,
    arrays: &ArrayConfig,
    unit_cell: UnitCellModel,
) -> CVec {
    let gain = crate::scenario::ris_gain(
        unit_cell,
        geometry.ris_incident,
        geometry.ris_to_ue,
        arrays.lambda,
    );
    let weighted = CVec::from_fn(omega.len(), |i, _| omega[i].conj() * channels.h_ru[i]);
    channels.h_br.ad_mul(&weighted) * C64::new(gain, 0.0) + &channels.h_bu
}

/// UE SNR `|g^H w_c|² / (|g^H w_s|² + σ²_{n,u})`.
pub fn snr_ue(
    w_c: &CVec,
    w_s: &CVec,
    omega: &CVec,
    channels: &ChannelSet,
    geometry: &Geometry,
    arrays: &ArrayConfig,
    unit_cell: UnitCellModel,
    sigma_comm_sq: f64,
) -> f64 {
    let g = effective_channel(omega, channels, geometry, arrays, unit_cell);
    let sig = g.dotc(w_c).norm_sqr();
    let intf = g.dotc(w_s).norm_sqr();
    sig / (intf + sigma_comm_sq)
}

/// Reflective radiation power pattern toward a direction (mW):
/// `(4π/λ²)|g_uc(Ψ_R,Ψ)|² · a^H diag(ω) H_BR (W_c+W_s) H_BR^H diag(ω^H) a`.
pub fn radiation_pattern(
    omega: &CVec,
    w_c: &CVec,
    w_s: &CVec,
    direction: Direction,
    channels: &ChannelSet,
    geometry: &Geometry,
    arrays: &ArrayConfig,
    unit_cell: UnitCellModel,
) -> f64 {
    let a = upa_steering(
        arrays.n_x,
        arrays.n_y,
        arrays.d,
        arrays.lambda,
        direction.theta,
        direction.phi,
    );
    let guc = unit_cell_response(unit_cell, geometry.ris_incident, direction, arrays.lambda);
    let scale = 4.0 * PI / (arrays.lambda * arrays.lambda) * guc * guc;
    let hv_c = &channels.h_br * w_c;
    let hv_s = &channels.h_br * w_s;
    let project = |hv: &CVec| -> f64 {
        let mut acc = C64::new(0.0, 0.0);
        for i in 0..omega.len() {
            acc += a[i].conj() * omega[i] * hv[i];
        }
        acc.norm_sqr()
    };
    scale * (project(&hv_c) + project(&hv_s))
}

/// Detection probability `Q(Q⁻¹(P_f) − √(T₀ f_s p_rx)/σ_n)`; strictly
/// increasing in the echo power.
pub fn detection_probability(p_rx_mw: f64, spec: &DetectionSpec, sigma_sense_sq: f64) -> f64 {
    let pf = spec.false_alarm_rate(sigma_sense_sq);
    let enr = (spec.t0 * spec.fs * p_rx_mw.max(0.0)).sqrt() / sigma_sense_sq.sqrt();
    let arg = inv_q_function(pf).expect("validated false-alarm rate") - enr;
    q_function(arg)
}

/// Sensing threshold constant
/// `G = (4π r_max² λ² σ_n² / (E[δ_S] T₀ f_s)) · (Q⁻¹(P_f) − Q⁻¹(γ))²`.
///
/// Errors when `γ` lies below the false-alarm floor.
pub fn sensing_threshold_g(
    region: &SensingRegion,
    spec: &DetectionSpec,
    sigma_sense_sq: f64,
    lambda: f64,
) -> Result<f64> {
    let required = spec.required_echo_mw(sigma_sense_sq)?;
    Ok(echo_to_constraint_scale(region, spec, lambda) * required)
}

/// The factor `4π r_max² λ² / E[δ_S]` mapping echo power (mW) onto the
/// integral-domain quantity compared against `G`.
pub fn echo_to_constraint_scale(region: &SensingRegion, spec: &DetectionSpec, lambda: f64) -> f64 {
    4.0 * PI * region.r_max * region.r_max * lambda * lambda / spec.mean_scatter_loss
}

/// Precomputed quadrature nodes over the scattering patch: steering vectors,
/// unit-cell gains, geometric factors and weights. Shared by the echo power,
/// the matrix builders and the sensing-operator construction.
#[derive(Debug, Clone)]
pub struct SensingGrid {
    pub region: SensingRegion,
    pub lambda: f64,
    pub exec: ExecMode,
    /// Trapezoid weight per node.
    pub weights: Vec<f64>,
    /// `|g_uc(Ψ_R,Ψ)|² · |g_uc(Ψ,Ψ_R)|²` per node.
    pub gain2: Vec<f64>,
    pub sin_theta: Vec<f64>,
    /// N × nodes matrix whose columns are the RIS steering vectors `a(θ,φ)`.
    pub steering: CMat,
}

impl SensingGrid {
    pub fn build(
        region: &SensingRegion,
        rule: &QuadratureRule,
        arrays: &ArrayConfig,
        geometry: &Geometry,
        unit_cell: UnitCellModel,
    ) -> SensingGrid {
        let grid = NodeGrid::over(region, rule);
        let n = arrays.n();
        let count = grid.len();
        let psi_r = geometry.ris_incident;
        let per_node = map_nodes(count, rule.exec, |idx| {
            let (theta, phi) = grid.node(idx);
            let psi = Direction::new(theta, phi);
            let g_in = unit_cell_response(unit_cell, psi_r, psi, arrays.lambda);
            let g_out = unit_cell_response(unit_cell, psi, psi_r, arrays.lambda);
            let a = upa_steering(arrays.n_x, arrays.n_y, arrays.d, arrays.lambda, theta, phi);
            (g_in * g_in * g_out * g_out, theta.sin(), a)
        });
        let mut steering = CMat::zeros(n, count);
        let mut gain2 = Vec::with_capacity(count);
        let mut sin_theta = Vec::with_capacity(count);
        for (idx, (g2, st, a)) in per_node.into_iter().enumerate() {
            steering.set_column(idx, &a);
            gain2.push(g2);
            sin_theta.push(st);
        }
        SensingGrid {
            region: *region,
            lambda: arrays.lambda,
            exec: rule.exec,
            weights: grid.weights,
            gain2,
            sin_theta,
            steering,
        }
    }

    /// Degenerate grid holding only the patch center with unit weight: the
    /// point-target view of the echo expressions (no surface integration).
    pub fn single_node(
        region: &SensingRegion,
        arrays: &ArrayConfig,
        geometry: &Geometry,
        unit_cell: UnitCellModel,
    ) -> SensingGrid {
        let psi = region.psi_s;
        let psi_r = geometry.ris_incident;
        let g_in = unit_cell_response(unit_cell, psi_r, psi, arrays.lambda);
        let g_out = unit_cell_response(unit_cell, psi, psi_r, arrays.lambda);
        let a = upa_steering(
            arrays.n_x,
            arrays.n_y,
            arrays.d,
            arrays.lambda,
            psi.theta,
            psi.phi,
        );
        let mut steering = CMat::zeros(arrays.n(), 1);
        steering.set_column(0, &a);
        SensingGrid {
            region: *region,
            lambda: arrays.lambda,
            exec: ExecMode::Sequential,
            weights: vec![1.0],
            gain2: vec![g_in * g_in * g_out * g_out],
            sin_theta: vec![psi.theta.sin()],
            steering,
        }
    }

    pub fn nodes(&self) -> usize {
        self.weights.len()
    }

    /// Per-node scalars `a(θ,φ)^H (f ⊙ v)` for all nodes at once.
    pub fn project(&self, f: &CVec, v: &CVec) -> CVec {
        let weighted = CVec::from_fn(f.len(), |i, _| f[i] * v[i]);
        self.steering.ad_mul(&weighted)
    }

    /// Echo-power prefactor `E[δ_S] / (4π r² λ²)` in the region's range.
    pub fn echo_prefactor(&self, spec: &DetectionSpec) -> f64 {
        spec.mean_scatter_loss
            / (4.0 * PI * self.region.r_max * self.region.r_max * self.lambda * self.lambda)
    }
}

/// Total echo power (mW) harvested from the scattering patch.
pub fn echo_power(
    omega: &CVec,
    w_c: &CVec,
    w_s: &CVec,
    w_rx: &CVec,
    grid: &SensingGrid,
    spec: &DetectionSpec,
    channels: &ChannelSet,
) -> f64 {
    let hv_c = &channels.h_br * w_c;
    let hv_s = &channels.h_br * w_s;
    let hv_rx = &channels.h_br * w_rx;
    let omega_conj = omega.map(|w| w.conj());
    let z_c = grid.project(omega, &hv_c);
    let z_s = grid.project(omega, &hv_s);
    let z_rx = grid.project(&omega_conj, &hv_rx);
    let mut vals = map_nodes(grid.nodes(), grid.exec, |idx| {
        grid.weights[idx]
            * grid.gain2[idx]
            * grid.sin_theta[idx]
            * (z_c[idx].norm_sqr() + z_s[idx].norm_sqr())
            * z_rx[idx].norm_sqr()
    });
    let total = pairwise_sum(&mut vals).unwrap_or(0.0);
    grid.echo_prefactor(spec) * total
}

const OUTER_CHUNK: usize = 512;

/// Accumulates `Σ_node coeff[node] · x_node x_node^H` with
/// `x_node = H_BR^H (factor ⊙ a_node)`. Coefficients must be nonnegative.
/// Node order inside the accumulation is fixed, so the result does not depend
/// on the execution mode.
fn accumulate_outer(
    grid: &SensingGrid,
    channels: &ChannelSet,
    factor: &CVec,
    coeffs: &[f64],
) -> CMat {
    let m = channels.h_br.ncols();
    let mut acc = CMat::zeros(m, m);
    let nodes = grid.nodes();
    let mut start = 0;
    while start < nodes {
        let len = OUTER_CHUNK.min(nodes - start);
        // Columns (factor ⊙ a_node) · √coeff for the chunk.
        let mut t = CMat::zeros(factor.len(), len);
        for k in 0..len {
            let idx = start + k;
            let root = coeffs[idx].max(0.0).sqrt();
            let col = CVec::from_fn(factor.len(), |i, _| {
                factor[i] * grid.steering[(i, idx)] * root
            });
            t.set_column(k, &col);
        }
        let p = channels.h_br.ad_mul(&t);
        acc += &p * p.adjoint();
        start += len;
    }
    (acc.adjoint() + &acc).scale(0.5)
}

/// Beamformer-side echo matrix `M_r` (M×M, Hermitian PSD, no prefactor):
/// `tr(M_r (W_c + W_s))` scaled by `E[δ_S]/(4π r² λ²)` reproduces the echo
/// power for rank-one `W_c`, `W_s`.
pub fn matrix_mr(
    omega: &CVec,
    w_rx: &CVec,
    grid: &SensingGrid,
    channels: &ChannelSet,
) -> CMat {
    let hv_rx = &channels.h_br * w_rx;
    let omega_conj = omega.map(|w| w.conj());
    let z_rx = grid.project(&omega_conj, &hv_rx);
    let coeffs: Vec<f64> = (0..grid.nodes())
        .map(|idx| {
            grid.weights[idx] * grid.gain2[idx] * grid.sin_theta[idx] * z_rx[idx].norm_sqr()
        })
        .collect();
    accumulate_outer(grid, channels, &omega_conj, &coeffs)
}

/// Combiner-side echo matrix `M_cs` (M×M, Hermitian PSD, prefactor included):
/// `w_rx^H M_cs w_rx` equals the echo power for every unit-norm `w_rx`.
pub fn matrix_mcs(
    omega: &CVec,
    w_c: &CVec,
    w_s: &CVec,
    grid: &SensingGrid,
    spec: &DetectionSpec,
    channels: &ChannelSet,
) -> CMat {
    let hv_c = &channels.h_br * w_c;
    let hv_s = &channels.h_br * w_s;
    let z_c = grid.project(omega, &hv_c);
    let z_s = grid.project(omega, &hv_s);
    let pre = grid.echo_prefactor(spec);
    let coeffs: Vec<f64> = (0..grid.nodes())
        .map(|idx| {
            pre * grid.weights[idx]
                * grid.gain2[idx]
                * grid.sin_theta[idx]
                * (z_c[idx].norm_sqr() + z_s[idx].norm_sqr())
        })
        .collect();
    accumulate_outer(grid, channels, omega, &coeffs)
}

/// `tr(F W)` for Hermitian `F` and PSD `W` given as a matrix.
pub fn quadratic_trace(f: &CMat, w: &DMatrix<C64>) -> f64 {
    crate::linalg::trace_product_re(f, w)
}
