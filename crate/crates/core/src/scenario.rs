//! Geometry, steering vectors, path loss, Rician channel realization, and the
//! physics-based RIS reflection model.
//!
//! Conventions: elevation `θ` is measured from the global +z axis, azimuth `φ`
//! in the x-y plane from +x, with azimuths wrapped to `[0, 2π)`. The BS ULA
//! phases progress along `sin θ sin φ` (array on the y axis); the RIS UPA is
//! the Kronecker product of an x-axis progression (`sin θ cos φ`, slow index)
//! and a y-axis progression (`sin θ sin φ`, fast index). The RIS broadside is
//! +z. All powers are carried in milliwatts; dBm and dB conversions happen at
//! the interfaces only.

use nalgebra::Vector3;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::linalg::{C64, CMat, CVec};

/// Converts dBm to milliwatts.
pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

/// Converts milliwatts to dBm.
pub fn mw_to_dbm(mw: f64) -> f64 {
    10.0 * mw.log10()
}

/// Converts a dB ratio to linear.
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// A propagation direction as (elevation, azimuth) in radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Direction {
    pub theta: f64,
    pub phi: f64,
}

impl Direction {
    pub fn new(theta: f64, phi: f64) -> Self {
        Direction { theta, phi }
    }

    /// Direction of the vector `to − from`, azimuth wrapped to `[0, 2π)`.
    pub fn between(from: Vector3<f64>, to: Vector3<f64>) -> Self {
        let d = to - from;
        let r = d.norm();
        let theta = (d.z / r).clamp(-1.0, 1.0).acos();
        let mut phi = d.y.atan2(d.x);
        if phi < 0.0 {
            phi += 2.0 * PI;
        }
        Direction { theta, phi }
    }
}

/// Antenna array sizes and element spacing.
#[derive(Debug, Clone)]
pub struct ArrayConfig {
    /// BS antennas per array (transmit and receive arrays each have `m`).
    pub m: usize,
    pub n_x: usize,
    pub n_y: usize,
    /// Element spacing in meters (defaults to half a wavelength).
    pub d: f64,
    /// Carrier wavelength in meters.
    pub lambda: f64,
}

impl ArrayConfig {
    pub fn new(m: usize, n_x: usize, n_y: usize, lambda: f64) -> Self {
        ArrayConfig {
            m,
            n_x,
            n_y,
            d: lambda / 2.0,
            lambda,
        }
    }

    /// Total number of RIS elements.
    pub fn n(&self) -> usize {
        self.n_x * self.n_y
    }

    pub fn validate(&self) -> Result<()> {
        if self.m < 1 || self.n_x < 1 || self.n_y < 1 {
            return Err(Error::InvalidInput(
                "array sizes must be at least 1".into(),
            ));
        }
        if self.d <= 0.0 || self.lambda <= 0.0 {
            return Err(Error::InvalidInput(
                "element spacing and wavelength must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Node positions with all derived angles and distances.
#[derive(Debug, Clone)]
pub struct Geometry {
    pub bs: Vector3<f64>,
    pub ris: Vector3<f64>,
    pub ue: Vector3<f64>,
    /// AOD at the BS toward the RIS.
    pub bs_to_ris: Direction,
    /// AOD at the BS toward the UE.
    pub bs_to_ue: Direction,
    /// Incident direction at the RIS (toward the BS).
    pub ris_incident: Direction,
    /// AOD at the RIS toward the UE.
    pub ris_to_ue: Direction,
    pub d_br: f64,
    pub d_ru: f64,
    pub d_bu: f64,
}

impl Geometry {
    pub fn from_positions(bs: Vector3<f64>, ris: Vector3<f64>, ue: Vector3<f64>) -> Result<Self> {
        let d_br = (ris - bs).norm();
        let d_ru = (ue - ris).norm();
        let d_bu = (ue - bs).norm();
        if d_br <= 0.0 || d_ru <= 0.0 || d_bu <= 0.0 {
            return Err(Error::InvalidInput(
                "BS, RIS and UE positions must be distinct".into(),
            ));
        }
        Ok(Geometry {
            bs,
            ris,
            ue,
            bs_to_ris: Direction::between(bs, ris),
            bs_to_ue: Direction::between(bs, ue),
            ris_incident: Direction::between(ris, bs),
            ris_to_ue: Direction::between(ris, ue),
            d_br,
            d_ru,
            d_bu,
        })
    }
}

/// Large-scale channel statistics.
#[derive(Debug, Clone)]
pub struct ChannelParams {
    /// Rician factor (linear).
    pub kappa: f64,
    /// Path-loss coefficient at 1 m (linear).
    pub zeta0: f64,
    pub alpha_br: f64,
    pub alpha_ru: f64,
    pub alpha_bu: f64,
    /// UE noise power in milliwatts.
    pub sigma_comm_sq: f64,
    /// BS sensing noise power in milliwatts.
    pub sigma_sense_sq: f64,
    /// Pure line-of-sight mode: channels equal the scaled LoS components
    /// exactly, no random draw.
    pub pure_los: bool,
}

impl ChannelParams {
    pub fn validate(&self) -> Result<()> {
        if self.kappa < 0.0 {
            return Err(Error::InvalidInput("kappa must be nonnegative".into()));
        }
        if self.zeta0 <= 0.0 {
            return Err(Error::InvalidInput("zeta0 must be positive".into()));
        }
        if self.sigma_comm_sq <= 0.0 || self.sigma_sense_sq <= 0.0 {
            return Err(Error::InvalidInput("noise powers must be positive".into()));
        }
        Ok(())
    }
}

/// ULA steering vector: entry `k` is `exp(j·(2πd/λ)·k·sinθ·sinφ)`.
pub fn ula_steering(m: usize, d: f64, lambda: f64, theta: f64, phi: f64) -> CVec {
    let step = 2.0 * PI * d / lambda * theta.sin() * phi.sin();
    CVec::from_fn(m, |k, _| C64::from_polar(1.0, step * k as f64))
}

/// UPA steering vector: Kronecker product of the x-axis progression (phase
/// step `(2πd/λ)sinθcosφ`, slow index) and the y-axis progression
/// (`(2πd/λ)sinθsinφ`, fast index); length `n_x·n_y`.
pub fn upa_steering(n_x: usize, n_y: usize, d: f64, lambda: f64, theta: f64, phi: f64) -> CVec {
    let base = 2.0 * PI * d / lambda * theta.sin();
    let step_x = base * phi.cos();
    let step_y = base * phi.sin();
    CVec::from_fn(n_x * n_y, |k, _| {
        let ix = (k / n_y) as f64;
        let iy = (k % n_y) as f64;
        C64::from_polar(1.0, step_x * ix + step_y * iy)
    })
}

/// Distance-power law `ζ₀ · (dist / 1 m)^(−α)`.
pub fn path_loss(zeta0: f64, dist: f64, alpha: f64) -> f64 {
    zeta0 * dist.powf(-alpha)
}

/// Realized channels plus their LoS components and path losses.
#[derive(Debug, Clone)]
pub struct ChannelSet {
    /// BS→RIS channel, N×M.
    pub h_br: CMat,
    /// RIS→UE channel, N-vector.
    pub h_ru: CVec,
    /// BS→UE channel, M-vector.
    pub h_bu: CVec,
    pub los_h_br: CMat,
    pub los_h_ru: CVec,
    pub los_h_bu: CVec,
    pub rho_br: f64,
    pub rho_ru: f64,
    pub rho_bu: f64,
}

fn complex_gaussian(rng: &mut ChaCha8Rng) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re, im) / C64::new(std::f64::consts::SQRT_2, 0.0)
}

/// Draws a Rician channel set. Each channel is
/// `√(ρκ/(1+κ))·LoS + √(ρ/(1+κ))·NLoS` with i.i.d. standard complex Gaussian
/// NLoS entries; deterministic for a given seed. In pure-LoS mode the channels
/// are `√ρ·LoS` exactly and the generator is not consulted.
pub fn sample_channels(
    geometry: &Geometry,
    arrays: &ArrayConfig,
    params: &ChannelParams,
    rng_seed: u64,
) -> ChannelSet {
    let n = arrays.n();
    let m = arrays.m;
    let a_ris_in = upa_steering(
        arrays.n_x,
        arrays.n_y,
        arrays.d,
        arrays.lambda,
        geometry.ris_incident.theta,
        geometry.ris_incident.phi,
    );
    let a_bs_ris = ula_steering(
        m,
        arrays.d,
        arrays.lambda,
        geometry.bs_to_ris.theta,
        geometry.bs_to_ris.phi,
    );
    let los_h_br = &a_ris_in * a_bs_ris.adjoint();
    let los_h_ru = upa_steering(
        arrays.n_x,
        arrays.n_y,
        arrays.d,
        arrays.lambda,
        geometry.ris_to_ue.theta,
        geometry.ris_to_ue.phi,
    );
    let los_h_bu = ula_steering(
        m,
        arrays.d,
        arrays.lambda,
        geometry.bs_to_ue.theta,
        geometry.bs_to_ue.phi,
    );

    let rho_br = path_loss(params.zeta0, geometry.d_br, params.alpha_br);
    let rho_ru = path_loss(params.zeta0, geometry.d_ru, params.alpha_ru);
    let rho_bu = path_loss(params.zeta0, geometry.d_bu, params.alpha_bu);

    let (h_br, h_ru, h_bu) = if params.pure_los {
        (
            &los_h_br * C64::new(rho_br.sqrt(), 0.0),
            &los_h_ru * C64::new(rho_ru.sqrt(), 0.0),
            &los_h_bu * C64::new(rho_bu.sqrt(), 0.0),
        )
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let kappa = params.kappa;
        let los_w = (kappa / (1.0 + kappa)).sqrt();
        let nlos_w = (1.0 / (1.0 + kappa)).sqrt();
        // Draw order is fixed: H_BR row-major, then h_RU, then h_BU.
        let mut h_br = CMat::zeros(n, m);
        for i in 0..n {
            for j in 0..m {
                h_br[(i, j)] = los_w * los_h_br[(i, j)] + nlos_w * complex_gaussian(&mut rng);
            }
        }
        let mut h_ru = CVec::zeros(n);
        for i in 0..n {
            h_ru[i] = los_w * los_h_ru[i] + nlos_w * complex_gaussian(&mut rng);
        }
        let mut h_bu = CVec::zeros(m);
        for i in 0..m {
            h_bu[i] = los_w * los_h_bu[i] + nlos_w * complex_gaussian(&mut rng);
        }
        (
            h_br * C64::new(rho_br.sqrt(), 0.0),
            h_ru * C64::new(rho_ru.sqrt(), 0.0),
            h_bu * C64::new(rho_bu.sqrt(), 0.0),
        )
    };

    ChannelSet {
        h_br,
        h_ru,
        h_bu,
        los_h_br,
        los_h_ru,
        los_h_bu,
        rho_br,
        rho_ru,
        rho_bu,
    }
}

/// Unit-cell reflection model of the RIS.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnitCellModel {
    /// `g_uc = λ/√(4π)`: ideal lossless reflection (the `√(4π)/λ` prefactor of
    /// the response matrix cancels exactly).
    Constant,
    /// `g_uc = (λ/√(4π))·√(cosθ_in·cosθ_out)` with elevations measured from
    /// the RIS broadside (+z); negative cosines are clipped to zero.
    CosinePattern,
}

/// Unit-cell response factor for a reflection from `psi_in` to `psi_out`.
pub fn unit_cell_response(
    model: UnitCellModel,
    psi_in: Direction,
    psi_out: Direction,
    lambda: f64,
) -> f64 {
    let base = lambda / (4.0 * PI).sqrt();
    match model {
        UnitCellModel::Constant => base,
        UnitCellModel::CosinePattern => {
            let ci = psi_in.theta.cos().max(0.0);
            let co = psi_out.theta.cos().max(0.0);
            base * (ci * co).sqrt()
        }
    }
}

/// Dimensionless reflection gain `(√(4π)/λ)·g_uc`; equals 1 for the constant
/// model.
pub fn ris_gain(model: UnitCellModel, psi_in: Direction, psi_out: Direction, lambda: f64) -> f64 {
    (4.0 * PI).sqrt() / lambda * unit_cell_response(model, psi_in, psi_out, lambda)
}

/// RIS configuration: unit-modulus phase coefficients plus the unit-cell model.
#[derive(Debug, Clone)]
pub struct RisState {
    pub omega: CVec,
    pub unit_cell: UnitCellModel,
}

impl RisState {
    pub fn new(omega: CVec, unit_cell: UnitCellModel) -> Result<Self> {
        for (i, w) in omega.iter().enumerate() {
            if (w.norm() - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidInput(format!(
                    "RIS coefficient {i} has modulus {:.12}, expected 1",
                    w.norm()
                )));
            }
        }
        Ok(RisState { omega, unit_cell })
    }

    /// All-ones phases.
    pub fn uniform(n: usize, unit_cell: UnitCellModel) -> Self {
        RisState {
            omega: CVec::from_element(n, C64::new(1.0, 0.0)),
            unit_cell,
        }
    }

    /// Response matrix `Ω(Ψ_in, Ψ_out) = (√(4π)/λ)·g_uc·diag(ω)`.
    pub fn response(&self, psi_in: Direction, psi_out: Direction, lambda: f64) -> Result<CMat> {
        for (i, w) in self.omega.iter().enumerate() {
            if (w.norm() - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidInput(format!(
                    "RIS coefficient {i} has modulus {:.12}, expected 1",
                    w.norm()
                )));
            }
        }
        let gain = ris_gain(self.unit_cell, psi_in, psi_out, lambda);
        Ok(CMat::from_diagonal(&(&self.omega * C64::new(gain, 0.0))))
    }
}

/// Phase coefficients that point the reflection of the incident wave from
/// `psi_in` toward `psi_out`: `ω = a(Ψ_out) ⊙ a*(Ψ_in)`.
pub fn directional_phases(arrays: &ArrayConfig, psi_in: Direction, psi_out: Direction) -> CVec {
    let a_out = upa_steering(
        arrays.n_x,
        arrays.n_y,
        arrays.d,
        arrays.lambda,
        psi_out.theta,
        psi_out.phi,
    );
    let a_in = upa_steering(
        arrays.n_x,
        arrays.n_y,
        arrays.d,
        arrays.lambda,
        psi_in.theta,
        psi_in.phi,
    );
    CVec::from_fn(arrays.n(), |i, _| a_out[i] * a_in[i].conj())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn paper_geometry() -> Geometry {
        Geometry::from_positions(
            Vector3::new(0.0, 0.0, 18.0),
            Vector3::new(2.0, 10.0, 12.0),
            Vector3::new(-30.0, 80.0, 25.0),
        )
        .unwrap()
    }

    #[test]
    fn ula_first_entry_is_one_and_unit_modulus() {
        let a = ula_steering(4, 0.06, 0.12, 1.1, 2.3);
        assert!((a[0] - C64::new(1.0, 0.0)).norm() < 1e-15);
        for v in a.iter() {
            assert!((v.norm() - 1.0).abs() < 1e-14);
        }
        assert!((a.norm_squared() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn ula_broadside_is_all_ones() {
        let a = ula_steering(5, 0.06, 0.12, 0.0, 1.0);
        for v in a.iter() {
            assert!((v - C64::new(1.0, 0.0)).norm() < 1e-14);
        }
    }

    #[test]
    fn ula_two_element_endfire() {
        // M=2, d=λ/2, θ=π/2, φ=π/2 → (1, e^{jπ}) = (1, −1).
        let a = ula_steering(2, 0.06, 0.12, PI / 2.0, PI / 2.0);
        assert!((a[0] - C64::new(1.0, 0.0)).norm() < 1e-12);
        assert!((a[1] - C64::new(-1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn upa_trivial_and_broadside() {
        let a = upa_steering(1, 1, 0.06, 0.12, 1.0, 1.0);
        assert_eq!(a.len(), 1);
        assert!((a[0] - C64::new(1.0, 0.0)).norm() < 1e-15);
        let b = upa_steering(3, 2, 0.06, 0.12, 0.0, 0.7);
        for v in b.iter() {
            assert!((v - C64::new(1.0, 0.0)).norm() < 1e-14);
        }
    }

    #[test]
    fn upa_kronecker_ordering() {
        // N_x=N_y=2, d=λ/2, θ=π/2, φ=0: x-step π, y-step 0 → (1, 1, −1, −1).
        let a = upa_steering(2, 2, 0.06, 0.12, PI / 2.0, 0.0);
        let expect = [1.0, 1.0, -1.0, -1.0];
        for (v, e) in a.iter().zip(expect) {
            assert!((v - C64::new(e, 0.0)).norm() < 1e-12, "{v} vs {e}");
        }
    }

    #[test]
    fn upa_norm_equals_element_count() {
        let a = upa_steering(3, 4, 0.06, 0.12, 1.2, 0.4);
        assert!((a.norm_squared() - 12.0).abs() < 1e-10);
    }

    #[test]
    fn path_loss_examples() {
        assert!((path_loss(1e-3, 1.0, 2.2) - 1e-3).abs() < 1e-18);
        assert!((path_loss(1e-3, 10.0, 2.0) - 1e-5).abs() < 1e-18);
        let expect = 1e-3 * 80f64.powf(-3.5);
        assert!((path_loss(1e-3, 80.0, 3.5) - expect).abs() < 1e-12 * expect);
    }

    #[test]
    fn pure_los_channels_are_exact() {
        let geom = paper_geometry();
        let arrays = ArrayConfig::new(4, 2, 2, 0.1199);
        let params = ChannelParams {
            kappa: 10.0,
            zeta0: 1e-3,
            alpha_br: 2.2,
            alpha_ru: 2.2,
            alpha_bu: 3.5,
            sigma_comm_sq: 1e-8,
            sigma_sense_sq: 1e-9,
            pure_los: true,
        };
        let ch = sample_channels(&geom, &arrays, &params, 1);
        let expect = &ch.los_h_br * C64::new(ch.rho_br.sqrt(), 0.0);
        assert!((&ch.h_br - expect).norm() < 1e-15);
        // LoS norms: ‖H̄‖_F = √(NM), ‖h̄‖ = √N, √M.
        assert!((ch.los_h_br.norm() - (4.0f64 * 4.0).sqrt()).abs() < 1e-12);
        assert!((ch.los_h_ru.norm() - 2.0).abs() < 1e-12);
        assert!((ch.los_h_bu.norm() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn same_seed_reproduces_channels() {
        let geom = paper_geometry();
        let arrays = ArrayConfig::new(3, 2, 2, 0.1199);
        let params = ChannelParams {
            kappa: 10.0,
            zeta0: 1e-3,
            alpha_br: 2.2,
            alpha_ru: 2.2,
            alpha_bu: 3.5,
            sigma_comm_sq: 1e-8,
            sigma_sense_sq: 1e-9,
            pure_los: false,
        };
        let c1 = sample_channels(&geom, &arrays, &params, 42);
        let c2 = sample_channels(&geom, &arrays, &params, 42);
        assert_eq!(c1.h_br, c2.h_br);
        assert_eq!(c1.h_ru, c2.h_ru);
        assert_eq!(c1.h_bu, c2.h_bu);
        let c3 = sample_channels(&geom, &arrays, &params, 43);
        assert_ne!(c1.h_br, c3.h_br);
    }

    #[test]
    fn rician_mean_power_matches_expectation() {
        // With κ=10, E‖H_BR‖²_F = ρ_BR·N·M; check within 3% over 10⁴ draws.
        let geom = paper_geometry();
        let arrays = ArrayConfig::new(2, 2, 1, 0.1199);
        let params = ChannelParams {
            kappa: 10.0,
            zeta0: 1e-3,
            alpha_br: 2.2,
            alpha_ru: 2.2,
            alpha_bu: 3.5,
            sigma_comm_sq: 1e-8,
            sigma_sense_sq: 1e-9,
            pure_los: false,
        };
        let mut acc = 0.0;
        let trials = 10_000;
        for seed in 0..trials {
            let ch = sample_channels(&geom, &arrays, &params, seed);
            acc += ch.h_br.norm_squared();
        }
        let mean = acc / trials as f64;
        let expect = path_loss(1e-3, geom.d_br, 2.2) * 4.0;
        assert!(
            (mean - expect).abs() < 0.03 * expect,
            "mean {mean:.6e} expect {expect:.6e}"
        );
    }

    #[test]
    fn unit_cell_models() {
        let lam = 0.1199;
        let base = lam / (4.0 * PI).sqrt();
        let any = Direction::new(1.0, 2.0);
        assert!((unit_cell_response(UnitCellModel::Constant, any, any, lam) - base).abs() < 1e-15);
        let broadside = Direction::new(0.0, 0.0);
        assert!(
            (unit_cell_response(UnitCellModel::CosinePattern, broadside, broadside, lam) - base)
                .abs()
                < 1e-15
        );
        let oblique = Direction::new(PI / 3.0, 0.5);
        let got = unit_cell_response(UnitCellModel::CosinePattern, oblique, oblique, lam);
        assert!((got - base * 0.5).abs() < 1e-12);
    }

    #[test]
    fn ris_response_identity_for_uniform_constant() {
        let ris = RisState::uniform(4, UnitCellModel::Constant);
        let any = Direction::new(0.3, 0.4);
        let omega = ris.response(any, any, 0.1199).unwrap();
        assert!((omega - CMat::identity(4, 4)).norm() < 1e-12);
    }

    #[test]
    fn ris_response_scales_with_global_phase() {
        let n = 3;
        let phase = C64::from_polar(1.0, 0.77);
        let base = RisState::uniform(n, UnitCellModel::Constant);
        let rotated = RisState::new(&base.omega * phase, UnitCellModel::Constant).unwrap();
        let d = Direction::new(0.3, 0.4);
        let a = base.response(d, d, 0.1199).unwrap();
        let b = rotated.response(d, d, 0.1199).unwrap();
        assert!((a * phase - b).norm() < 1e-12);
    }

    #[test]
    fn ris_response_rejects_non_unit_modulus() {
        let mut omega = CVec::from_element(3, C64::new(1.0, 0.0));
        omega[1] = C64::new(0.5, 0.0);
        assert!(RisState::new(omega, UnitCellModel::Constant).is_err());
    }

    #[test]
    fn cosine_model_broadside_reduces_to_diag_omega() {
        let mut omega = CVec::from_element(3, C64::new(1.0, 0.0));
        omega[0] = C64::from_polar(1.0, 1.1);
        omega[2] = C64::from_polar(1.0, -0.6);
        let ris = RisState::new(omega.clone(), UnitCellModel::CosinePattern).unwrap();
        let broadside = Direction::new(0.0, 0.0);
        let got = ris.response(broadside, broadside, 0.1199).unwrap();
        assert!((got - CMat::from_diagonal(&omega)).norm() < 1e-12);
    }

    #[test]
    fn constant_model_response_is_direction_independent() {
        let ris = RisState::uniform(4, UnitCellModel::Constant);
        let a = ris
            .response(Direction::new(0.2, 0.3), Direction::new(1.1, 2.2), 0.1199)
            .unwrap();
        let b = ris
            .response(Direction::new(1.4, 5.1), Direction::new(0.5, 0.1), 0.1199)
            .unwrap();
        assert!((a - b).norm() < 1e-14);
    }

    #[test]
    fn geometry_angles_recompute_positions() {
        let g = paper_geometry();
        // Distances match hand evaluation.
        assert!((g.d_br - 140f64.sqrt()).abs() < 1e-12);
        assert!((g.d_ru - 6093f64.sqrt()).abs() < 1e-12);
        assert!((g.d_bu - 7349f64.sqrt()).abs() < 1e-12);
        // Reconstruct the RIS→UE displacement from (θ, φ, r).
        let d = g.ris_to_ue;
        let rebuilt = Vector3::new(
            g.d_ru * d.theta.sin() * d.phi.cos(),
            g.d_ru * d.theta.sin() * d.phi.sin(),
            g.d_ru * d.theta.cos(),
        );
        assert!((rebuilt - (g.ue - g.ris)).norm() < 1e-9);
        assert!(d.theta >= 0.0 && d.theta <= PI);
        assert!(d.phi >= 0.0 && d.phi < 2.0 * PI);
    }
}
