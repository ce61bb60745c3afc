//! Runtime bundle tying a scenario's geometry, arrays, channel statistics,
//! sensing region, detection spec and solver tolerances together, plus the
//! scored solution types shared by the optimizers and the experiment runners.

use crate::error::Result;
use crate::linalg::CVec;
use crate::quadrature::QuadratureRule;
use crate::scenario::{
    sample_channels, ArrayConfig, ChannelParams, ChannelSet, Geometry, UnitCellModel,
};
use crate::sensing::{
    detection_probability, echo_power, sensing_threshold_g, snr_ue, DetectionSpec, SensingGrid,
    SensingRegion,
};

/// Terminating gaps and iteration caps for the three nested loops.
#[derive(Debug, Clone, Copy)]
pub struct Tolerances {
    /// Bisection bracket width on the linear SNR scale (Algorithm 1).
    pub eps1: f64,
    /// Successive objective gap of the phase-shift iteration, linear SNR scale.
    pub eps2: f64,
    /// Successive SNR gap of the outer alternation, linear scale.
    pub eps3: f64,
    pub sca_max_iter: usize,
    pub outer_max_iter: usize,
    pub feasibility_max_iter: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            eps1: 2e-4,
            eps2: 2e-3,
            eps3: 2e-3,
            sca_max_iter: 50,
            outer_max_iter: 30,
            feasibility_max_iter: 30,
        }
    }
}

/// Everything configuration-derived a solve needs (channels are sampled
/// separately so seeds stay explicit).
#[derive(Debug, Clone)]
pub struct IsacSystem {
    pub arrays: ArrayConfig,
    pub geometry: Geometry,
    pub channel_params: ChannelParams,
    pub region: SensingRegion,
    pub detection: DetectionSpec,
    pub quadrature: QuadratureRule,
    pub p_tx_mw: f64,
    pub tolerances: Tolerances,
    pub unit_cell: UnitCellModel,
}

impl IsacSystem {
    pub fn validate(&self) -> Result<()> {
        self.arrays.validate()?;
        self.channel_params.validate()?;
        self.region.validate()?;
        self.detection.validate(self.channel_params.sigma_sense_sq)?;
        self.quadrature.validate()?;
        if self.p_tx_mw <= 0.0 {
            return Err(crate::Error::InvalidInput(
                "transmit power must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn sample_channels(&self, seed: u64) -> ChannelSet {
        sample_channels(&self.geometry, &self.arrays, &self.channel_params, seed)
    }

    pub fn sensing_grid(&self) -> SensingGrid {
        SensingGrid::build(
            &self.region,
            &self.quadrature,
            &self.arrays,
            &self.geometry,
            self.unit_cell,
        )
    }

    /// Grid over the same region with a different angle spread or range.
    pub fn sensing_grid_for(&self, region: &SensingRegion) -> SensingGrid {
        SensingGrid::build(
            region,
            &self.quadrature,
            &self.arrays,
            &self.geometry,
            self.unit_cell,
        )
    }

    pub fn snr(&self, channels: &ChannelSet, omega: &CVec, w_c: &CVec, w_s: &CVec) -> f64 {
        snr_ue(
            w_c,
            w_s,
            omega,
            channels,
            &self.geometry,
            &self.arrays,
            self.unit_cell,
            self.channel_params.sigma_comm_sq,
        )
    }

    pub fn echo(
        &self,
        channels: &ChannelSet,
        grid: &SensingGrid,
        omega: &CVec,
        w_c: &CVec,
        w_s: &CVec,
        w_rx: &CVec,
    ) -> f64 {
        echo_power(omega, w_c, w_s, w_rx, grid, &self.detection, channels)
    }

    pub fn detection_prob(&self, echo_mw: f64) -> f64 {
        detection_probability(echo_mw, &self.detection, self.channel_params.sigma_sense_sq)
    }

    /// Echo power at which the detection constraint becomes active.
    pub fn required_echo_mw(&self) -> Result<f64> {
        self.detection
            .required_echo_mw(self.channel_params.sigma_sense_sq)
    }

    /// The constant `G` of the trace-form detection constraint, for the grid's
    /// region.
    pub fn threshold_g(&self, region: &SensingRegion) -> Result<f64> {
        sensing_threshold_g(
            region,
            &self.detection,
            self.channel_params.sigma_sense_sq,
            self.arrays.lambda,
        )
    }

    pub fn score(
        &self,
        channels: &ChannelSet,
        grid: &SensingGrid,
        omega: &CVec,
        w_c: &CVec,
        w_s: &CVec,
        w_rx: &CVec,
    ) -> SolutionMetrics {
        let snr_linear = self.snr(channels, omega, w_c, w_s);
        let echo_power_mw = self.echo(channels, grid, omega, w_c, w_s, w_rx);
        SolutionMetrics {
            snr_linear,
            echo_power_mw,
            detection_probability: self.detection_prob(echo_power_mw),
        }
    }
}

/// SNR, echo power and detection probability of a candidate solution.
#[derive(Debug, Clone, Copy)]
pub struct SolutionMetrics {
    pub snr_linear: f64,
    pub echo_power_mw: f64,
    pub detection_probability: f64,
}

impl SolutionMetrics {
    pub fn snr_db(&self) -> f64 {
        10.0 * self.snr_linear.log10()
    }

    pub fn echo_dbm(&self) -> f64 {
        10.0 * self.echo_power_mw.log10()
    }
}

/// A complete beamforming design with its scores.
#[derive(Debug, Clone)]
pub struct BeamformingSolution {
    pub w_c: CVec,
    pub w_s: CVec,
    pub w_rx: CVec,
    pub omega: CVec,
    pub metrics: SolutionMetrics,
}
