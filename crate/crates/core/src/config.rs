//! System configuration: deployment geometry, frame structure, radio
//! parameters, sensing model knobs, power-control settings and Monte Carlo
//! scales. Sections mirror the engine modules; unknown keys are rejected so
//! typos cannot silently fall back to defaults.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{Result, SimError};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SystemConfig {
    pub scenario: ScenarioConfig,
    pub frame: FrameConfig,
    pub radio: RadioConfig,
    pub sensing: SensingConfig,
    pub power: PowerConfig,
    pub harness: HarnessConfig,
}

/// Deployment geometry and association sizes.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    /// Total deployment area in km²; the square side is derived from it.
    pub area_km2: f64,
    /// Total number of APs (transmit + receive).
    pub num_aps: usize,
    /// Number of receive-only APs. They gather echoes and never transmit.
    pub num_rx_aps: usize,
    pub num_ues: usize,
    pub num_targets: usize,
    /// Number of disjoint sensing regions tiling the area.
    pub num_regions: usize,
    /// Antennas per AP (uniform linear array).
    pub antennas_per_ap: usize,
    /// Serving cluster size per UE.
    pub serving_cluster_size: usize,
    /// Transmit APs assigned to each inspected position.
    pub tx_aps_per_task: usize,
    /// Receive APs assigned to each inspected position.
    pub rx_aps_per_task: usize,
    pub ue_height_m: f64,
    pub ap_height_m: f64,
    pub target_height_min_m: f64,
    pub target_height_max_m: f64,
    /// Radar-cell grid pitch inside each sensing region, in meters.
    pub cell_pitch_m: f64,
    /// Require the region count to be a perfect square instead of falling
    /// back to the most-square factorization.
    pub strict_grid: bool,
    /// Pin specific AP indices as receive APs instead of sampling them.
    pub rx_ap_indices: Option<Vec<usize>>,
    pub rng_seed: u64,
}

/// Coherence-block layout and waveform constants.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FrameConfig {
    /// Samples per coherence block (τ_c).
    pub coherence_block: usize,
    /// Pilot length (τ_p).
    pub pilot_len: usize,
    /// Downlink data samples (τ_d).
    pub data_len: usize,
    /// Sensing samples collected per block (τ_s); may equal τ_c since
    /// probing runs concurrently with data.
    pub sensing_len: usize,
    pub bandwidth_hz: f64,
    pub carrier_freq_hz: f64,
}

/// Transmit powers, noise and propagation-model knobs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RadioConfig {
    /// Per-AP downlink power budget P_m in watts.
    pub ap_power_w: f64,
    /// Uplink pilot power per UE in watts.
    pub pilot_power_w: f64,
    pub noise_psd_dbm_hz: f64,
    /// Azimuth angular spread of the local-scattering correlation, degrees.
    pub angular_spread_deg: f64,
    /// ULA element spacing in wavelengths.
    pub element_spacing_wavelengths: f64,
}

/// Target, clutter and detector parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensingConfig {
    /// Mean radar cross section in dBsm (10 dBsm = 10 m²).
    pub rcs_dbsm: f64,
    /// Width of the Gaussian view-angle RCS correlation, degrees.
    pub rcs_view_corr_deg: f64,
    /// Clutter cancellation factor ς ∈ [0, 1] scaling NLoS AP–AP power.
    pub clutter_scale: f64,
    /// Std of the tracking angle estimation error, radians.
    pub tracking_error_std_rad: f64,
    /// Draw the angle error independently per AP instead of once per target.
    pub per_ap_angle_error: bool,
    /// Monte Carlo samples for the long-term beam covariance maps.
    pub interference_mc_samples: usize,
    /// Allow N·τ_s < |Mᵗˣ| (rank-deficient stacked model experiments).
    pub allow_degenerate_rank: bool,
    /// Use raw steering vectors (norm √N) instead of unit-norm probing
    /// beams; power budgets then no longer account for the array gain.
    pub raw_steering_beams: bool,
    /// Synthesize echoes from all targets (true) or only the inspected
    /// cell's target (false) during detection.
    pub full_echo_synthesis: bool,
}

/// Power-control settings for both the fractional rule and the optimizer.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PowerConfig {
    /// Fractional exponent for communication coefficients (κ_c).
    pub kappa_c: f64,
    /// Fractional exponent for sensing coefficients (κ_s).
    pub kappa_s: f64,
    /// Sensing QoS threshold γ̄₀ in dB for the max-min optimizer.
    pub min_sir_db: f64,
    /// Bisection stopping width ε₁ on the linear SINR target.
    pub bisection_tol: f64,
    /// Relative-change stopping threshold ε₂ for the inner SCA loop.
    pub sca_tol: f64,
    pub max_sca_iters: usize,
}

/// Monte Carlo scales for experiment plans.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HarnessConfig {
    /// Random deployments per experiment.
    pub num_drops: usize,
    /// Fading realizations per drop.
    pub num_fading: usize,
    /// Upper bound on drops × fading accepted by plan validation.
    pub max_total_trials: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            area_km2: 0.5,
            num_aps: 16,
            num_rx_aps: 4,
            num_ues: 16,
            num_targets: 4,
            num_regions: 9,
            antennas_per_ap: 4,
            serving_cluster_size: 4,
            tx_aps_per_task: 4,
            rx_aps_per_task: 1,
            ue_height_m: 1.65,
            ap_height_m: 10.0,
            target_height_min_m: 20.0,
            target_height_max_m: 100.0,
            cell_pitch_m: 50.0,
            strict_grid: false,
            rx_ap_indices: None,
            rng_seed: 1,
        }
    }
}

impl Default for FrameConfig {
    fn default() -> Self {
        Self {
            coherence_block: 50,
            pilot_len: 16,
            data_len: 34,
            sensing_len: 50,
            bandwidth_hz: 20e6,
            carrier_freq_hz: 2e9,
        }
    }
}

impl Default for RadioConfig {
    fn default() -> Self {
        Self {
            ap_power_w: 2.0,
            pilot_power_w: 1e-4,
            noise_psd_dbm_hz: -174.0,
            angular_spread_deg: 10.0,
            element_spacing_wavelengths: 0.5,
        }
    }
}

impl Default for SensingConfig {
    fn default() -> Self {
        Self {
            rcs_dbsm: 10.0,
            rcs_view_corr_deg: 20.0,
            clutter_scale: 1e-2,
            tracking_error_std_rad: 1e-2,
            per_ap_angle_error: false,
            interference_mc_samples: 10_000,
            allow_degenerate_rank: false,
            raw_steering_beams: false,
            full_echo_synthesis: true,
        }
    }
}

impl Default for PowerConfig {
    fn default() -> Self {
        Self {
            kappa_c: 0.0,
            kappa_s: 0.5,
            min_sir_db: 0.0,
            bisection_tol: 1e-3,
            sca_tol: 1e-4,
            max_sca_iters: 50,
        }
    }
}

impl Default for HarnessConfig {
    fn default() -> Self {
        Self {
            num_drops: 20,
            num_fading: 200,
            max_total_trials: 1_000_000,
        }
    }
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            scenario: ScenarioConfig::default(),
            frame: FrameConfig::default(),
            radio: RadioConfig::default(),
            sensing: SensingConfig::default(),
            power: PowerConfig::default(),
            harness: HarnessConfig::default(),
        }
    }
}

impl SystemConfig {
    /// Side length of the square deployment area in meters.
    pub fn area_side_m(&self) -> f64 {
        (self.scenario.area_km2 * 1e6).sqrt()
    }

    /// Number of transmit APs (|Mᵗˣ| = M − |Mʳˣ|).
    pub fn num_tx_aps(&self) -> usize {
        self.scenario.num_aps - self.scenario.num_rx_aps
    }

    /// Thermal noise power σ_z² = N₀·B in watts.
    pub fn noise_power_w(&self) -> f64 {
        10f64.powf((self.radio.noise_psd_dbm_hz - 30.0) / 10.0) * self.frame.bandwidth_hz
    }

    /// Mean RCS σ_α² in m².
    pub fn sigma_alpha2_m2(&self) -> f64 {
        10f64.powf(self.sensing.rcs_dbsm / 10.0)
    }

    pub fn angular_spread_rad(&self) -> f64 {
        self.radio.angular_spread_deg.to_radians()
    }

    pub fn rcs_view_corr_rad(&self) -> f64 {
        self.sensing.rcs_view_corr_deg.to_radians()
    }

    /// Sensing QoS threshold γ̄₀ as a linear ratio.
    pub fn min_sir_linear(&self) -> f64 {
        10f64.powf(self.power.min_sir_db / 10.0)
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.scenario;
        let f = &self.frame;
        let fail = |msg: String| Err(SimError::Config(msg));
        if s.num_aps == 0 || s.num_ues == 0 || s.antennas_per_ap == 0 {
            return fail("num_aps, num_ues and antennas_per_ap must be positive".into());
        }
        if s.num_rx_aps >= s.num_aps {
            return fail(format!(
                "num_rx_aps ({}) must leave at least one transmit AP out of {}",
                s.num_rx_aps, s.num_aps
            ));
        }
        if s.num_rx_aps == 0 {
            return fail("num_rx_aps must be at least 1 (echo reception pool is empty)".into());
        }
        if s.serving_cluster_size == 0 || s.serving_cluster_size > self.num_tx_aps() {
            return fail(format!(
                "serving_cluster_size ({}) must be in 1..={} transmit APs",
                s.serving_cluster_size,
                self.num_tx_aps()
            ));
        }
        if s.tx_aps_per_task == 0 || s.tx_aps_per_task > self.num_tx_aps() {
            return fail(format!(
                "tx_aps_per_task ({}) must be in 1..={}",
                s.tx_aps_per_task,
                self.num_tx_aps()
            ));
        }
        if s.rx_aps_per_task == 0 || s.rx_aps_per_task > s.num_rx_aps {
            return fail(format!(
                "rx_aps_per_task ({}) must be in 1..={}",
                s.rx_aps_per_task, s.num_rx_aps
            ));
        }
        if let Some(pins) = &s.rx_ap_indices {
            if pins.len() != s.num_rx_aps {
                return fail("rx_ap_indices length must equal num_rx_aps".into());
            }
            let mut seen = pins.clone();
            seen.sort_unstable();
            seen.dedup();
            if seen.len() != pins.len() || pins.iter().any(|&m| m >= s.num_aps) {
                return fail("rx_ap_indices must be distinct AP indices".into());
            }
        }
        if s.num_regions == 0 {
            return fail("num_regions must be positive".into());
        }
        if s.strict_grid {
            let root = (s.num_regions as f64).sqrt().round() as usize;
            if root * root != s.num_regions {
                return fail(format!(
                    "strict_grid requires a perfect-square region count, got {}",
                    s.num_regions
                ));
            }
        }
        if s.area_km2 <= 0.0 || s.cell_pitch_m <= 0.0 {
            return fail("area_km2 and cell_pitch_m must be positive".into());
        }
        if s.target_height_max_m < s.target_height_min_m {
            return fail("target height range is inverted".into());
        }
        if f.data_len > f.coherence_block || f.sensing_len > f.coherence_block {
            return fail(format!(
                "tau_d ({}) and tau_s ({}) must not exceed tau_c ({})",
                f.data_len, f.sensing_len, f.coherence_block
            ));
        }
        if f.pilot_len == 0 || f.sensing_len == 0 {
            return fail("pilot_len and sensing_len must be positive".into());
        }
        if !self.sensing.allow_degenerate_rank
            && s.antennas_per_ap * f.sensing_len < self.num_tx_aps()
        {
            return fail(format!(
                "N·tau_s = {} < {} transmit APs: the stacked model is rank deficient \
                 (set sensing.allow_degenerate_rank to override)",
                s.antennas_per_ap * f.sensing_len,
                self.num_tx_aps()
            ));
        }
        if self.radio.ap_power_w <= 0.0 || self.radio.pilot_power_w <= 0.0 {
            return fail("all powers must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.sensing.clutter_scale) {
            return fail(format!(
                "clutter_scale must lie in [0, 1], got {}",
                self.sensing.clutter_scale
            ));
        }
        if self.sensing.tracking_error_std_rad < 0.0 {
            return fail("tracking_error_std_rad must be non-negative".into());
        }
        if self.sensing.interference_mc_samples == 0 {
            return fail("interference_mc_samples must be positive".into());
        }
        if !self.power.kappa_c.is_finite() || !self.power.kappa_s.is_finite() {
            return fail("fractional power exponents must be finite".into());
        }
        if self.power.bisection_tol <= 0.0 || self.power.sca_tol <= 0.0 {
            return fail("optimizer tolerances must be positive".into());
        }
        if self.harness.num_drops == 0 || self.harness.num_fading == 0 {
            return fail("num_drops and num_fading must be positive".into());
        }
        if self.harness.num_drops * self.harness.num_fading > self.harness.max_total_trials {
            return fail(format!(
                "drops × fading = {} exceeds max_total_trials = {}",
                self.harness.num_drops * self.harness.num_fading,
                self.harness.max_total_trials
            ));
        }
        Ok(())
    }

    /// Stable hash of the full configuration, carried by result tables.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(format!("{self:?}").as_bytes());
        let digest = hasher.finalize();
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}
