//! Transmit power allocation: the scalable generalized fractional rule and
//! the non-scalable max-min benchmark optimizer.

mod effective_sir;
mod socp;

pub use effective_sir::{
    build_effective_sir, effective_sir, numerator_value, sca_gradient, sca_linearize,
    EffectiveSirModel, SirLinearization,
};
pub use socp::{
    find_sensing_feasible, opc_bisection, solve_feasibility, C4Statistics, FeasibilityOutcome,
    OpcResult, OpcSettings,
};

use nalgebra::DMatrix;
use nalgebra::Vector3;

use crate::config::SystemConfig;
use crate::scenario::{AssociationMaps, Scenario};
use crate::{Result, SimError};

/// Which entity set receives probing power.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SensingEntities {
    /// Sensing regions (detection phase), one beam per region in S_m.
    Regions,
    /// Tracked targets, one beam per target in L_m.
    Targets,
    /// No probing beams at all (communication-only baseline).
    None,
}

/// Power coefficients η (communication) and μ (sensing) per AP.
#[derive(Debug, Clone)]
pub struct PowerAllocation {
    eta: DMatrix<f64>,
    mu: DMatrix<f64>,
}

impl PowerAllocation {
    pub fn zeros(num_ues: usize, num_entities: usize, num_aps: usize) -> Self {
        Self {
            eta: DMatrix::zeros(num_ues, num_aps),
            mu: DMatrix::zeros(num_entities, num_aps),
        }
    }

    pub fn eta(&self, k: usize, m: usize) -> f64 {
        self.eta[(k, m)]
    }

    pub fn mu(&self, entity: usize, m: usize) -> f64 {
        self.mu[(entity, m)]
    }

    pub fn set_eta(&mut self, k: usize, m: usize, value: f64) {
        self.eta[(k, m)] = value;
    }

    pub fn set_mu(&mut self, entity: usize, m: usize, value: f64) {
        self.mu[(entity, m)] = value;
    }

    pub fn num_ues(&self) -> usize {
        self.eta.nrows()
    }

    pub fn num_entities(&self) -> usize {
        self.mu.nrows()
    }

    /// Total power allocated by AP m.
    pub fn ap_total(&self, m: usize) -> f64 {
        self.eta.column(m).sum() + self.mu.column(m).sum()
    }

    /// Verifies C1–C2: nonnegativity and per-AP budgets.
    pub fn check_budgets(&self, ap_power: f64, tol: f64) -> Result<()> {
        if self.eta.iter().chain(self.mu.iter()).any(|&v| v < -tol) {
            return Err(SimError::Config("negative power coefficient".into()));
        }
        for m in 0..self.eta.ncols() {
            let total = self.ap_total(m);
            if total > ap_power + tol {
                return Err(SimError::Config(format!(
                    "AP {m} allocates {total:.9e} W over the {ap_power} W budget"
                )));
            }
        }
        Ok(())
    }

    /// CSV dump: ap, entity_type, entity_id, power_watts.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("ap,entity_type,entity_id,power_watts\n");
        for m in 0..self.eta.ncols() {
            for k in 0..self.eta.nrows() {
                if self.eta[(k, m)] > 0.0 {
                    out.push_str(&format!("{m},ue,{k},{:.12e}\n", self.eta[(k, m)]));
                }
            }
            for e in 0..self.mu.nrows() {
                if self.mu[(e, m)] > 0.0 {
                    out.push_str(&format!("{m},target,{e},{:.12e}\n", self.mu[(e, m)]));
                }
            }
        }
        out
    }
}

/// Two-hop LSF from each transmit AP to each region's representative cell
/// (the region center) and back to the region's first receive AP; drives
/// the fractional split across detection beams.
pub fn detection_lsf_table(
    config: &SystemConfig,
    scenario: &Scenario,
    assoc: &AssociationMaps,
) -> Vec<Vec<f64>> {
    let fc = config.frame.carrier_freq_hz;
    (0..scenario.regions.num_regions())
        .map(|i| {
            let cell = scenario.regions.region_center(i);
            let rx = assoc.rx_aps_of_region[i][0];
            scenario
                .ap_positions
                .iter()
                .map(|ap| {
                    crate::channels::target_path_gain(
                        ap,
                        &scenario.ap_positions[rx],
                        &cell,
                        fc,
                    )
                })
                .collect()
        })
        .collect()
}

/// One-hop LSF from each AP to each target position (LoS branch).
pub fn tracking_lsf_table(config: &SystemConfig, scenario: &Scenario) -> Vec<Vec<f64>> {
    let fc = config.frame.carrier_freq_hz;
    scenario
        .target_positions
        .iter()
        .map(|target| {
            scenario
                .ap_positions
                .iter()
                .map(|ap| {
                    crate::channels::path_loss_linear(
                        (ap - target).norm(),
                        crate::channels::PathLossBranch::LineOfSight,
                        fc,
                        ap.z,
                        target.z,
                    )
                })
                .collect()
        })
        .collect()
}

/// Normalized fractional power allocation. Per transmit AP the UE share is
/// proportional to ρ^κ_c and the sensing share to λ^κ_s, both normalized by
/// the AP's largest coefficient so different exponents keep comparable
/// magnitudes; the common factor p_m spends the budget exactly.
pub fn fpc_allocate(
    assoc: &AssociationMaps,
    rho: &[Vec<f64>],
    lambda: &[Vec<f64>],
    kappa_c: f64,
    kappa_s: f64,
    ap_power: f64,
    entities: SensingEntities,
) -> PowerAllocation {
    let num_aps = assoc.ues_of_ap.len();
    let num_ues = assoc.serving_aps_of_ue.len();
    let num_entities = lambda.len();
    let mut alloc = PowerAllocation::zeros(num_ues, num_entities, num_aps);
    for m in 0..num_aps {
        let ues = &assoc.ues_of_ap[m];
        let ents: &[usize] = match entities {
            SensingEntities::Regions => &assoc.regions_of_tx_ap[m],
            SensingEntities::Targets => &assoc.targets_of_tx_ap[m],
            SensingEntities::None => &[],
        };
        if ues.is_empty() && ents.is_empty() {
            continue;
        }
        let comm_terms: Vec<f64> = ues.iter().map(|&k| rho[k][m].powf(kappa_c)).collect();
        let sense_terms: Vec<f64> = ents.iter().map(|&e| lambda[e][m].powf(kappa_s)).collect();
        let c_m = comm_terms
            .iter()
            .fold(f64::MIN, |a, &b| a.max(b))
            .recip()
            .max(0.0);
        let c_m = if comm_terms.is_empty() { 0.0 } else { c_m };
        let s_m = sense_terms
            .iter()
            .fold(f64::MIN, |a, &b| a.max(b))
            .recip()
            .max(0.0);
        let s_m = if sense_terms.is_empty() { 0.0 } else { s_m };
        let denom: f64 =
            c_m * comm_terms.iter().sum::<f64>() + s_m * sense_terms.iter().sum::<f64>();
        if denom <= 0.0 {
            continue;
        }
        let p_m = ap_power / denom;
        for (&k, &term) in ues.iter().zip(&comm_terms) {
            alloc.set_eta(k, m, p_m * c_m * term);
        }
        for (&e, &term) in ents.iter().zip(&sense_terms) {
            alloc.set_mu(e, m, p_m * s_m * term);
        }
    }
    alloc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use crate::SystemConfig;
    use rand::Rng;

    fn system(seed: u64) -> (SystemConfig, Scenario, AssociationMaps) {
        let cfg = SystemConfig::default();
        let mut rng = substream(seed, &[0]);
        let scenario = crate::scenario::generate_scenario(&cfg, &mut rng).unwrap();
        let lsf = crate::channels::ue_lsf_table(&cfg, &scenario);
        let assoc = AssociationMaps::build(
            &scenario,
            &lsf,
            &cfg,
            crate::scenario::AssociationMode::UserTargetCentric,
        )
        .unwrap();
        (cfg, scenario, assoc)
    }

    #[test]
    fn uniform_exponents_split_power_equally() {
        let (cfg, scenario, assoc) = system(61);
        let rho = crate::channels::ue_lsf_table(&cfg, &scenario);
        let lambda = detection_lsf_table(&cfg, &scenario, &assoc);
        let alloc = fpc_allocate(
            &assoc,
            &rho,
            &lambda,
            0.0,
            0.0,
            cfg.radio.ap_power_w,
            SensingEntities::Regions,
        );
        for &m in &scenario.tx_aps() {
            let beams = assoc.ues_of_ap[m].len() + assoc.regions_of_tx_ap[m].len();
            if beams == 0 {
                continue;
            }
            let share = cfg.radio.ap_power_w / beams as f64;
            for &k in &assoc.ues_of_ap[m] {
                assert!((alloc.eta(k, m) - share).abs() < 1e-12);
            }
            for &i in &assoc.regions_of_tx_ap[m] {
                assert!((alloc.mu(i, m) - share).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn singleton_ue_takes_whole_comm_share_under_ppc() {
        // With one served UE, normalization makes c_m·ρ^κ = 1 regardless of ρ.
        let (cfg, scenario, mut assoc) = system(62);
        let m = scenario.tx_aps()[0];
        assoc.ues_of_ap[m] = vec![3];
        assoc.regions_of_tx_ap[m] = vec![];
        let rho = crate::channels::ue_lsf_table(&cfg, &scenario);
        let lambda = detection_lsf_table(&cfg, &scenario, &assoc);
        let alloc = fpc_allocate(
            &assoc,
            &rho,
            &lambda,
            1.0,
            0.5,
            cfg.radio.ap_power_w,
            SensingEntities::Regions,
        );
        assert!((alloc.eta(3, m) - cfg.radio.ap_power_w).abs() < 1e-12);
    }

    #[test]
    fn budgets_met_with_equality_over_random_tables() {
        let (cfg, scenario, assoc) = system(63);
        let mut rng = substream(64, &[0]);
        for trial in 0..100 {
            let rho: Vec<Vec<f64>> = (0..cfg.scenario.num_ues)
                .map(|_| {
                    (0..cfg.scenario.num_aps)
                        .map(|_| 10f64.powf(rng.random_range(-14.0..-6.0)))
                        .collect()
                })
                .collect();
            let lambda: Vec<Vec<f64>> = (0..scenario.regions.num_regions())
                .map(|_| {
                    (0..cfg.scenario.num_aps)
                        .map(|_| 10f64.powf(rng.random_range(-20.0..-10.0)))
                        .collect()
                })
                .collect();
            for kc in [-1.0, 0.0, 0.5, 1.0] {
                for ks in [-1.0, 0.0, 0.5, 1.0] {
                    let alloc = fpc_allocate(
                        &assoc,
                        &rho,
                        &lambda,
                        kc,
                        ks,
                        cfg.radio.ap_power_w,
                        SensingEntities::Regions,
                    );
                    for &m in &scenario.tx_aps() {
                        if assoc.ues_of_ap[m].is_empty()
                            && assoc.regions_of_tx_ap[m].is_empty()
                        {
                            continue;
                        }
                        assert!(
                            (alloc.ap_total(m) - cfg.radio.ap_power_w).abs() < 1e-12,
                            "trial {trial} kc={kc} ks={ks} m={m}: {}",
                            alloc.ap_total(m)
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn unserved_ap_gets_zero_allocation() {
        let (cfg, scenario, mut assoc) = system(65);
        let m = scenario.tx_aps()[1];
        assoc.ues_of_ap[m] = vec![];
        assoc.regions_of_tx_ap[m] = vec![];
        let rho = crate::channels::ue_lsf_table(&cfg, &scenario);
        let lambda = detection_lsf_table(&cfg, &scenario, &assoc);
        let alloc = fpc_allocate(
            &assoc,
            &rho,
            &lambda,
            0.5,
            0.5,
            cfg.radio.ap_power_w,
            SensingEntities::Regions,
        );
        assert_eq!(alloc.ap_total(m), 0.0);
    }

    #[test]
    fn fpc_is_permutation_equivariant() {
        // Relabeling UEs permutes coefficients when κ_c = κ_s and ρ ≡ λ.
        let (cfg, scenario, assoc) = system(66);
        let rho = crate::channels::ue_lsf_table(&cfg, &scenario);
        let alloc = fpc_allocate(
            &assoc,
            &rho,
            &rho,
            0.5,
            0.5,
            cfg.radio.ap_power_w,
            SensingEntities::None,
        );
        // Swap two UEs everywhere and compare.
        let (a, b) = (0usize, 1usize);
        let mut rho_sw = rho.clone();
        rho_sw.swap(a, b);
        let mut assoc_sw = assoc.clone();
        assoc_sw.serving_aps_of_ue.swap(a, b);
        for ues in assoc_sw.ues_of_ap.iter_mut() {
            for k in ues.iter_mut() {
                if *k == a {
                    *k = b;
                } else if *k == b {
                    *k = a;
                }
            }
        }
        let alloc_sw = fpc_allocate(
            &assoc_sw,
            &rho_sw,
            &rho_sw,
            0.5,
            0.5,
            cfg.radio.ap_power_w,
            SensingEntities::None,
        );
        for m in 0..cfg.scenario.num_aps {
            assert!((alloc.eta(a, m) - alloc_sw.eta(b, m)).abs() < 1e-15);
            assert!((alloc.eta(b, m) - alloc_sw.eta(a, m)).abs() < 1e-15);
        }
    }

    #[test]
    fn csv_dump_lists_positive_entries() {
        let (cfg, scenario, assoc) = system(67);
        let rho = crate::channels::ue_lsf_table(&cfg, &scenario);
        let lambda = detection_lsf_table(&cfg, &scenario, &assoc);
        let alloc = fpc_allocate(
            &assoc,
            &rho,
            &lambda,
            0.0,
            0.5,
            cfg.radio.ap_power_w,
            SensingEntities::Regions,
        );
        let csv = alloc.to_csv();
        assert!(csv.starts_with("ap,entity_type,entity_id,power_watts"));
        assert!(csv.lines().count() > 10);
    }
}
