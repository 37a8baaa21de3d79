//! Per-drop simulation state: one random deployment with all long-term
//! statistics precomputed (correlations, MMSE statistics, reflection
//! geometry, RCS covariances and the long-term probing-beam covariances).

use nalgebra::Vector3;
use rand_chacha::ChaCha12Rng;

use crate::channels::{
    build_rcs_correlation, target_channel, CorrelationSet, TargetLink, UlaGeometry,
};
use crate::comm_metrics::{
    sensing_interference_detection, sensing_interference_tracking, SensingInterferenceMap,
};
use crate::config::SystemConfig;
use crate::estimation::{EstimateSet, PilotBook};
use crate::linalg::{hermitian_sqrt, CMat};
use crate::scenario::{generate_scenario, AssociationMaps, AssociationMode, Scenario};
use crate::Result;

/// Everything that stays fixed within one Monte Carlo drop.
pub struct DropContext {
    pub config: SystemConfig,
    pub mode: AssociationMode,
    pub geom: UlaGeometry,
    pub scenario: Scenario,
    pub corr: CorrelationSet,
    pub assoc: AssociationMaps,
    pub book: PilotBook,
    pub estimates: EstimateSet,
    pub noise: f64,
    /// ρ_{k,m} table (shared with association).
    pub ue_lsf: Vec<Vec<f64>>,
    /// Reflection geometry `[target][rx-list idx][tx-list idx]`.
    pub target_links: Vec<Vec<Vec<TargetLink>>>,
    /// Full (view-correlated) RCS covariance per target, σ_α²-scaled; the
    /// same matrix applies at every receive AP.
    pub rcs_full: Vec<CMat>,
    pub rcs_sqrt: Vec<CMat>,
    /// Fusion sets as indices into `corr.rx_list` / `corr.tx_list`.
    pub target_rx: Vec<Vec<usize>>,
    pub region_rx: Vec<Vec<usize>>,
    /// Long-term probing-beam covariances for the two phases.
    pub w_det: SensingInterferenceMap,
    pub w_trk: SensingInterferenceMap,
    /// One-hop AP→target LSF table for fractional power control.
    pub lambda_trk: Vec<Vec<f64>>,
    /// Two-hop AP→region-cell→rx LSF table for the detection split.
    pub lambda_det: Vec<Vec<f64>>,
}

impl DropContext {
    /// Builds one drop from its dedicated rng substream. Draw order is
    /// fixed: scenario, AP–AP link branches, detection W maps, tracking
    /// W maps.
    pub fn build(
        config: &SystemConfig,
        mode: AssociationMode,
        rng: &mut ChaCha12Rng,
    ) -> Result<Self> {
        let scenario = generate_scenario(config, rng)?;
        let corr = CorrelationSet::build(config, &scenario, rng);
        let ue_lsf = corr.ue_lsf.clone();
        let assoc = AssociationMaps::build(&scenario, &ue_lsf, config, mode)?;
        let book = if config.frame.pilot_len >= config.scenario.num_ues {
            PilotBook::orthogonal(
                config.frame.pilot_len,
                config.scenario.num_ues,
                config.radio.pilot_power_w,
            )?
        } else {
            PilotBook::with_reuse(
                config.frame.pilot_len,
                config.scenario.num_ues,
                config.radio.pilot_power_w,
            )
        };
        let noise = config.noise_power_w();
        let estimates = EstimateSet::build(&corr, &book, noise)?;
        let geom = UlaGeometry::from_config(config);

        let index_of = |list: &[usize], m: usize| list.iter().position(|&x| x == m).unwrap();
        let target_rx: Vec<Vec<usize>> = assoc
            .rx_aps_of_target
            .iter()
            .map(|set| set.iter().map(|&m| index_of(&corr.rx_list, m)).collect())
            .collect();
        let region_rx: Vec<Vec<usize>> = assoc
            .rx_aps_of_region
            .iter()
            .map(|set| set.iter().map(|&m| index_of(&corr.rx_list, m)).collect())
            .collect();

        let fc = config.frame.carrier_freq_hz;
        let target_links: Vec<Vec<Vec<TargetLink>>> = scenario
            .target_positions
            .iter()
            .map(|pos| {
                corr.rx_list
                    .iter()
                    .map(|&rx| {
                        corr.tx_list
                            .iter()
                            .map(|&tx| {
                                target_channel(
                                    &geom,
                                    &scenario.ap_positions[tx],
                                    &scenario.ap_positions[rx],
                                    pos,
                                    fc,
                                )
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();

        let sigma_alpha2 = config.sigma_alpha2_m2();
        let sigma_view = config.rcs_view_corr_rad();
        let rcs_full: Vec<CMat> = scenario
            .target_positions
            .iter()
            .map(|pos| {
                let angles: Vec<f64> = corr
                    .tx_list
                    .iter()
                    .map(|&tx| crate::channels::angles_to(&scenario.ap_positions[tx], pos).0)
                    .collect();
                build_rcs_correlation(&angles, sigma_alpha2, sigma_view)
            })
            .collect();
        let rcs_sqrt: Vec<CMat> = rcs_full.iter().map(hermitian_sqrt).collect();

        let num_aps = scenario.ap_positions.len();
        let mc = config.sensing.interference_mc_samples;
        let raw = config.sensing.raw_steering_beams;
        let mut w_det = vec![vec![None; num_aps]; scenario.regions.num_regions()];
        for (i, row) in w_det.iter_mut().enumerate() {
            let schedule: Vec<Vector3<f64>> = scenario.regions.cell_schedule(i);
            for &m in &assoc.tx_aps_of_region[i] {
                row[m] = Some(sensing_interference_detection(
                    &geom,
                    &scenario.ap_positions[m],
                    &schedule,
                    mc,
                    raw,
                    rng,
                ));
            }
        }
        let mut w_trk = vec![vec![None; num_aps]; scenario.target_positions.len()];
        for (l, row) in w_trk.iter_mut().enumerate() {
            for &m in &assoc.tx_aps_of_target[l] {
                row[m] = Some(sensing_interference_tracking(
                    &geom,
                    &scenario.ap_positions[m],
                    &scenario.target_positions[l],
                    config.sensing.tracking_error_std_rad,
                    mc,
                    raw,
                    rng,
                ));
            }
        }

        let lambda_trk = crate::power::tracking_lsf_table(config, &scenario);
        let lambda_det = crate::power::detection_lsf_table(config, &scenario, &assoc);

        Ok(Self {
            config: config.clone(),
            mode,
            geom,
            scenario,
            corr,
            assoc,
            book,
            estimates,
            noise,
            ue_lsf,
            target_links,
            rcs_full,
            rcs_sqrt,
            target_rx,
            region_rx,
            w_det: SensingInterferenceMap { w: w_det },
            w_trk: SensingInterferenceMap { w: w_trk },
            lambda_trk,
            lambda_det,
        })
    }

    /// tr(Φ) accessor for beam building.
    pub fn tr_phi(&self, k: usize, m: usize) -> f64 {
        self.estimates.stats[k][m]
            .as_ref()
            .map(|s| s.tr_phi)
            .unwrap_or(0.0)
    }

    /// R_{l,m} views for a target's fusion set.
    pub fn target_rcs_refs(&self, l: usize) -> Vec<&CMat> {
        self.target_rx[l].iter().map(|_| &self.rcs_full[l]).collect()
    }
}
