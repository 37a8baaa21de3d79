//! Random deployments and the scalable association sets linking APs to
//! UEs, sensing regions and targets.

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::config::SystemConfig;
use crate::{Result, SimError};

/// Role of an AP in the multistatic split.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ApRole {
    Transmit,
    Receive,
}

/// Association regime; the non-scalable variants exist for benchmarking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AssociationMode {
    /// Scalable communication and sensing (the proposed architecture).
    UserTargetCentric,
    /// Scalable communication, every AP senses every region/target.
    UserCentric,
    /// Scalable sensing, every transmit AP serves every UE.
    TargetCentric,
    /// Neither side is scalable.
    PureCellFree,
}

impl AssociationMode {
    pub fn label(&self) -> &'static str {
        match self {
            AssociationMode::UserTargetCentric => "utc",
            AssociationMode::UserCentric => "uc",
            AssociationMode::TargetCentric => "tc",
            AssociationMode::PureCellFree => "cf",
        }
    }

    fn comm_scalable(&self) -> bool {
        matches!(
            self,
            AssociationMode::UserTargetCentric | AssociationMode::UserCentric
        )
    }

    fn sensing_scalable(&self) -> bool {
        matches!(
            self,
            AssociationMode::UserTargetCentric | AssociationMode::TargetCentric
        )
    }
}

/// Disjoint rectangular sensing regions tiling the deployment square, each
/// holding a raster grid of radar cells inspected one per scan step.
#[derive(Debug, Clone)]
pub struct RegionGrid {
    pub rows: usize,
    pub cols: usize,
    pub region_w: f64,
    pub region_h: f64,
    /// Radar cells per region along x and y.
    pub cells_x: usize,
    pub cells_y: usize,
    /// Height at which radar cells are inspected.
    pub cell_height: f64,
}

impl RegionGrid {
    pub fn new(num_regions: usize, side: f64, pitch: f64, cell_height: f64) -> Self {
        let (rows, cols) = most_square_factorization(num_regions);
        let region_w = side / cols as f64;
        let region_h = side / rows as f64;
        let cells_x = (region_w / pitch).round().max(1.0) as usize;
        let cells_y = (region_h / pitch).round().max(1.0) as usize;
        Self {
            rows,
            cols,
            region_w,
            region_h,
            cells_x,
            cells_y,
            cell_height,
        }
    }

    pub fn num_regions(&self) -> usize {
        self.rows * self.cols
    }

    pub fn cells_per_region(&self) -> usize {
        self.cells_x * self.cells_y
    }

    fn origin(&self, region: usize) -> (f64, f64) {
        let row = region / self.cols;
        let col = region % self.cols;
        (col as f64 * self.region_w, row as f64 * self.region_h)
    }

    pub fn region_center(&self, region: usize) -> Vector3<f64> {
        let (x0, y0) = self.origin(region);
        Vector3::new(
            x0 + self.region_w / 2.0,
            y0 + self.region_h / 2.0,
            self.cell_height,
        )
    }

    /// Cell center at a scan step; steps advance in raster order and wrap.
    pub fn cell_center(&self, region: usize, step: usize) -> Vector3<f64> {
        let idx = step % self.cells_per_region();
        let ix = idx % self.cells_x;
        let iy = idx / self.cells_x;
        let (x0, y0) = self.origin(region);
        Vector3::new(
            x0 + (ix as f64 + 0.5) * self.region_w / self.cells_x as f64,
            y0 + (iy as f64 + 0.5) * self.region_h / self.cells_y as f64,
            self.cell_height,
        )
    }

    /// All cell centers of one region in raster order.
    pub fn cell_schedule(&self, region: usize) -> Vec<Vector3<f64>> {
        (0..self.cells_per_region())
            .map(|s| self.cell_center(region, s))
            .collect()
    }

    /// Region containing the (x, y) projection of a position.
    pub fn region_of(&self, pos: &Vector3<f64>) -> usize {
        let col = ((pos.x / self.region_w) as usize).min(self.cols - 1);
        let row = ((pos.y / self.region_h) as usize).min(self.rows - 1);
        row * self.cols + col
    }

    /// Raster index of the cell whose center is closest to `pos`.
    pub fn nearest_cell_step(&self, region: usize, pos: &Vector3<f64>) -> usize {
        let (x0, y0) = self.origin(region);
        let ix = (((pos.x - x0) / (self.region_w / self.cells_x as f64) - 0.5).round())
            .clamp(0.0, self.cells_x as f64 - 1.0) as usize;
        let iy = (((pos.y - y0) / (self.region_h / self.cells_y as f64) - 0.5).round())
            .clamp(0.0, self.cells_y as f64 - 1.0) as usize;
        iy * self.cells_x + ix
    }
}

/// Factorization r·c = n with r ≤ c and r as close to √n as possible.
fn most_square_factorization(n: usize) -> (usize, usize) {
    let mut best = (1, n);
    for r in 1..=((n as f64).sqrt() as usize) {
        if n % r == 0 {
            best = (r, n / r);
        }
    }
    best
}

/// One random deployment: AP/UE/target positions, AP roles, region grid.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub side_m: f64,
    pub ap_positions: Vec<Vector3<f64>>,
    pub ap_roles: Vec<ApRole>,
    pub ue_positions: Vec<Vector3<f64>>,
    pub target_positions: Vec<Vector3<f64>>,
    pub regions: RegionGrid,
}

impl Scenario {
    pub fn tx_aps(&self) -> Vec<usize> {
        self.ap_roles
            .iter()
            .enumerate()
            .filter(|(_, r)| **r == ApRole::Transmit)
            .map(|(m, _)| m)
            .collect()
    }

    pub fn rx_aps(&self) -> Vec<usize> {
        self.ap_roles
            .iter()
            .enumerate()
            .filter(|(_, r)| **r == ApRole::Receive)
            .map(|(m, _)| m)
            .collect()
    }
}

/// Draws a deployment: i.i.d. uniform planar positions, uniformly sampled
/// receive-AP roles (unless pinned in the config) and the region grid.
pub fn generate_scenario(config: &SystemConfig, rng: &mut ChaCha12Rng) -> Result<Scenario> {
    config.validate()?;
    let s = &config.scenario;
    let side = config.area_side_m();

    let planar = |rng: &mut ChaCha12Rng, height: f64| {
        Vector3::new(
            rng.random::<f64>() * side,
            rng.random::<f64>() * side,
            height,
        )
    };

    let ap_positions: Vec<_> = (0..s.num_aps).map(|_| planar(rng, s.ap_height_m)).collect();
    let ue_positions: Vec<_> = (0..s.num_ues).map(|_| planar(rng, s.ue_height_m)).collect();
    let target_positions: Vec<_> = (0..s.num_targets)
        .map(|_| {
            let h = s.target_height_min_m
                + rng.random::<f64>() * (s.target_height_max_m - s.target_height_min_m);
            planar(rng, h)
        })
        .collect();

    let mut ap_roles = vec![ApRole::Transmit; s.num_aps];
    match &s.rx_ap_indices {
        Some(pins) => {
            for &m in pins {
                ap_roles[m] = ApRole::Receive;
            }
        }
        None => {
            let mut indices: Vec<usize> = (0..s.num_aps).collect();
            indices.shuffle(rng);
            for &m in indices.iter().take(s.num_rx_aps) {
                ap_roles[m] = ApRole::Receive;
            }
        }
    }

    let cell_height = 0.5 * (s.target_height_min_m + s.target_height_max_m);
    let regions = RegionGrid::new(s.num_regions, side, s.cell_pitch_m, cell_height);

    Ok(Scenario {
        side_m: side,
        ap_positions,
        ap_roles,
        ue_positions,
        target_positions,
        regions,
    })
}

/// Serving clusters: for each UE the `cluster_size` transmit APs with the
/// largest LSF, ties broken toward the lower AP index.
pub fn associate_ues(
    scenario: &Scenario,
    lsf: &[Vec<f64>],
    cluster_size: usize,
) -> Result<Vec<Vec<usize>>> {
    let tx = scenario.tx_aps();
    if cluster_size > tx.len() {
        return Err(SimError::Config(format!(
            "cluster size {} exceeds the {} transmit APs",
            cluster_size,
            tx.len()
        )));
    }
    let mut clusters = Vec::with_capacity(scenario.ue_positions.len());
    for row in lsf {
        let mut ranked: Vec<usize> = tx.clone();
        ranked.sort_by(|&a, &b| {
            row[b]
                .partial_cmp(&row[a])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        ranked.truncate(cluster_size);
        clusters.push(ranked);
    }
    Ok(clusters)
}

/// Transmit/receive AP sets for an inspected position: the nearest
/// `m_tx` transmit and `m_rx` receive APs by 3-D distance, index tie-break.
pub fn associate_sensing(
    scenario: &Scenario,
    position: &Vector3<f64>,
    m_tx: usize,
    m_rx: usize,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let pick = |pool: Vec<usize>, count: usize| -> Result<Vec<usize>> {
        if pool.is_empty() {
            return Err(SimError::Config("empty AP pool for sensing task".into()));
        }
        if count > pool.len() {
            return Err(SimError::Config(format!(
                "sensing task needs {count} APs but the pool has {}",
                pool.len()
            )));
        }
        let mut ranked = pool;
        ranked.sort_by(|&a, &b| {
            let da = (scenario.ap_positions[a] - position).norm();
            let db = (scenario.ap_positions[b] - position).norm();
            da.partial_cmp(&db)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        ranked.truncate(count);
        Ok(ranked)
    };
    Ok((
        pick(scenario.tx_aps(), m_tx)?,
        pick(scenario.rx_aps(), m_rx)?,
    ))
}

/// Cell centers inspected at a scan step, one per region. Because every
/// region advances through the same raster offsets, simultaneously
/// inspected cells in different regions stay at least a region apart.
pub fn next_scan_positions(scenario: &Scenario, step: usize) -> Vec<Vector3<f64>> {
    (0..scenario.regions.num_regions())
        .map(|i| scenario.regions.cell_center(i, step))
        .collect()
}

/// All association sets of one deployment under a given mode.
#[derive(Debug, Clone)]
pub struct AssociationMaps {
    pub mode: AssociationMode,
    /// M_k: serving transmit APs per UE, ranked by LSF.
    pub serving_aps_of_ue: Vec<Vec<usize>>,
    /// K_m: UEs served by each AP (empty for receive APs).
    pub ues_of_ap: Vec<Vec<usize>>,
    /// S_m: sensing regions probed by each transmit AP.
    pub regions_of_tx_ap: Vec<Vec<usize>>,
    /// L_m: targets tracked by each transmit AP.
    pub targets_of_tx_ap: Vec<Vec<usize>>,
    /// M_{p_i}ᵗˣ / M_{p_i}ʳˣ per region (taken at the region center).
    pub tx_aps_of_region: Vec<Vec<usize>>,
    pub rx_aps_of_region: Vec<Vec<usize>>,
    /// Same sets per target, taken at the true target position.
    pub tx_aps_of_target: Vec<Vec<usize>>,
    pub rx_aps_of_target: Vec<Vec<usize>>,
}

impl AssociationMaps {
    pub fn build(
        scenario: &Scenario,
        lsf: &[Vec<f64>],
        config: &SystemConfig,
        mode: AssociationMode,
    ) -> Result<Self> {
        let s = &config.scenario;
        let tx = scenario.tx_aps();
        let rx = scenario.rx_aps();
        let num_aps = scenario.ap_positions.len();

        let serving_aps_of_ue = if mode.comm_scalable() {
            associate_ues(scenario, lsf, s.serving_cluster_size)?
        } else {
            vec![tx.clone(); scenario.ue_positions.len()]
        };
        let mut ues_of_ap = vec![Vec::new(); num_aps];
        for (k, cluster) in serving_aps_of_ue.iter().enumerate() {
            for &m in cluster {
                ues_of_ap[m].push(k);
            }
        }

        let (m_tx, m_rx) = if mode.sensing_scalable() {
            (s.tx_aps_per_task, s.rx_aps_per_task)
        } else {
            (tx.len(), rx.len())
        };

        let mut tx_aps_of_region = Vec::new();
        let mut rx_aps_of_region = Vec::new();
        for i in 0..scenario.regions.num_regions() {
            let center = scenario.regions.region_center(i);
            let (t, r) = associate_sensing(scenario, &center, m_tx, m_rx)?;
            tx_aps_of_region.push(t);
            rx_aps_of_region.push(r);
        }
        let mut regions_of_tx_ap = vec![Vec::new(); num_aps];
        for (i, set) in tx_aps_of_region.iter().enumerate() {
            for &m in set {
                regions_of_tx_ap[m].push(i);
            }
        }

        let mut tx_aps_of_target = Vec::new();
        let mut rx_aps_of_target = Vec::new();
        for pos in &scenario.target_positions {
            let (t, r) = associate_sensing(scenario, pos, m_tx, m_rx)?;
            tx_aps_of_target.push(t);
            rx_aps_of_target.push(r);
        }
        let mut targets_of_tx_ap = vec![Vec::new(); num_aps];
        for (l, set) in tx_aps_of_target.iter().enumerate() {
            for &m in set {
                targets_of_tx_ap[m].push(l);
            }
        }

        Ok(Self {
            mode,
            serving_aps_of_ue,
            ues_of_ap,
            regions_of_tx_ap,
            targets_of_tx_ap,
            tx_aps_of_region,
            rx_aps_of_region,
            tx_aps_of_target,
            rx_aps_of_target,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    fn baseline() -> SystemConfig {
        SystemConfig::default()
    }

    fn nlos_lsf(config: &SystemConfig, scenario: &Scenario) -> Vec<Vec<f64>> {
        crate::channels::ue_lsf_table(config, scenario)
    }

    #[test]
    fn baseline_grid_is_3x3_of_expected_size() {
        let cfg = baseline();
        let mut rng = substream(1, &[0]);
        let sc = generate_scenario(&cfg, &mut rng).unwrap();
        assert_eq!((sc.regions.rows, sc.regions.cols), (3, 3));
        assert!((sc.regions.region_w - 235.7).abs() < 0.1);
        assert!((sc.regions.region_h - 235.7).abs() < 0.1);
    }

    #[test]
    fn degenerate_single_ap_single_ue_inside_area() {
        let mut cfg = baseline();
        cfg.scenario.num_aps = 2;
        cfg.scenario.num_rx_aps = 1;
        cfg.scenario.num_ues = 1;
        cfg.scenario.serving_cluster_size = 1;
        cfg.scenario.tx_aps_per_task = 1;
        cfg.sensing.allow_degenerate_rank = false;
        let mut rng = substream(3, &[0]);
        let sc = generate_scenario(&cfg, &mut rng).unwrap();
        let side = cfg.area_side_m();
        for p in sc.ap_positions.iter().chain(sc.ue_positions.iter()) {
            assert!(p.x >= 0.0 && p.x <= side && p.y >= 0.0 && p.y <= side);
        }
        assert_eq!(sc.ue_positions[0].z, cfg.scenario.ue_height_m);
    }

    #[test]
    fn same_seed_reproduces_scenario() {
        let cfg = baseline();
        let a = generate_scenario(&cfg, &mut substream(9, &[4])).unwrap();
        let b = generate_scenario(&cfg, &mut substream(9, &[4])).unwrap();
        assert_eq!(a.ap_positions, b.ap_positions);
        assert_eq!(a.ue_positions, b.ue_positions);
        assert_eq!(a.target_positions, b.target_positions);
        assert_eq!(a.ap_roles, b.ap_roles);
    }

    #[test]
    fn clusters_have_requested_size_and_respect_roles() {
        let cfg = baseline();
        let mut rng = substream(5, &[0]);
        let sc = generate_scenario(&cfg, &mut rng).unwrap();
        let lsf = nlos_lsf(&cfg, &sc);
        let clusters = associate_ues(&sc, &lsf, 4).unwrap();
        let tx = sc.tx_aps();
        for c in &clusters {
            assert_eq!(c.len(), 4);
            for m in c {
                assert!(tx.contains(m));
            }
        }
    }

    #[test]
    fn equal_lsf_breaks_ties_toward_low_indices() {
        let cfg = baseline();
        let mut rng = substream(6, &[0]);
        let sc = generate_scenario(&cfg, &mut rng).unwrap();
        let flat = vec![vec![1.0; sc.ap_positions.len()]; sc.ue_positions.len()];
        let clusters = associate_ues(&sc, &flat, 4).unwrap();
        let expect: Vec<usize> = sc.tx_aps().into_iter().take(4).collect();
        assert_eq!(clusters[0], expect);
    }

    #[test]
    fn decreasing_lsf_selects_first_aps() {
        let mut cfg = baseline();
        cfg.scenario.rx_ap_indices = Some(vec![12, 13, 14, 15]);
        let mut rng = substream(8, &[0]);
        let sc = generate_scenario(&cfg, &mut rng).unwrap();
        let m = sc.ap_positions.len();
        let lsf = vec![(0..m).map(|i| 1.0 / (1.0 + i as f64)).collect::<Vec<_>>()];
        let mut sc1 = sc.clone();
        sc1.ue_positions.truncate(1);
        let clusters = associate_ues(&sc1, &lsf, 4).unwrap();
        assert_eq!(clusters[0], vec![0, 1, 2, 3]);
    }

    #[test]
    fn sensing_sets_have_requested_sizes_and_disjoint_roles() {
        let cfg = baseline();
        let mut rng = substream(12, &[0]);
        let sc = generate_scenario(&cfg, &mut rng).unwrap();
        let pos = Vector3::new(100.0, 100.0, 60.0);
        let (t, r) = associate_sensing(&sc, &pos, 4, 1).unwrap();
        assert_eq!((t.len(), r.len()), (4, 1));
        assert!(t.iter().all(|m| sc.ap_roles[*m] == ApRole::Transmit));
        assert!(r.iter().all(|m| sc.ap_roles[*m] == ApRole::Receive));
    }

    #[test]
    fn ap_at_inspected_position_ranks_first() {
        let cfg = baseline();
        let mut rng = substream(13, &[0]);
        let sc = generate_scenario(&cfg, &mut rng).unwrap();
        let tx0 = sc.tx_aps()[2];
        let pos = sc.ap_positions[tx0];
        let (t, _) = associate_sensing(&sc, &pos, 3, 1).unwrap();
        assert_eq!(t[0], tx0);
    }

    #[test]
    fn scan_positions_keep_region_separation_and_wrap() {
        let cfg = baseline();
        let mut rng = substream(14, &[0]);
        let sc = generate_scenario(&cfg, &mut rng).unwrap();
        let cells = next_scan_positions(&sc, 0);
        assert_eq!(cells.len(), 9);
        let min_side = sc.regions.region_w.min(sc.regions.region_h);
        for i in 0..cells.len() {
            for j in i + 1..cells.len() {
                let d = (cells[i] - cells[j]).norm();
                assert!(d >= min_side - 1e-9, "cells {i},{j} too close: {d}");
            }
        }
        let wrapped = next_scan_positions(&sc, sc.regions.cells_per_region());
        assert_eq!(cells, wrapped);
    }

    #[test]
    fn single_region_emits_one_center() {
        let mut cfg = baseline();
        cfg.scenario.num_regions = 1;
        let mut rng = substream(15, &[0]);
        let sc = generate_scenario(&cfg, &mut rng).unwrap();
        assert_eq!(next_scan_positions(&sc, 0).len(), 1);
    }

    #[test]
    fn association_maps_are_consistent_inverses() {
        let cfg = baseline();
        for seed in 0..20 {
            let mut rng = substream(seed, &[0]);
            let sc = generate_scenario(&cfg, &mut rng).unwrap();
            let lsf = nlos_lsf(&cfg, &sc);
            let maps =
                AssociationMaps::build(&sc, &lsf, &cfg, AssociationMode::UserTargetCentric)
                    .unwrap();
            for (k, cluster) in maps.serving_aps_of_ue.iter().enumerate() {
                for &m in cluster {
                    assert!(maps.ues_of_ap[m].contains(&k));
                }
            }
            for (m, ues) in maps.ues_of_ap.iter().enumerate() {
                for &k in ues {
                    assert!(maps.serving_aps_of_ue[k].contains(&m));
                }
            }
            for (i, set) in maps.tx_aps_of_region.iter().enumerate() {
                assert_eq!(set.len(), cfg.scenario.tx_aps_per_task);
                for &m in set {
                    assert!(maps.regions_of_tx_ap[m].contains(&i));
                    assert_eq!(sc.ap_roles[m], ApRole::Transmit);
                }
            }
            for set in &maps.rx_aps_of_region {
                assert_eq!(set.len(), cfg.scenario.rx_aps_per_task);
                for &m in set {
                    assert_eq!(sc.ap_roles[m], ApRole::Receive);
                }
            }
        }
    }

    #[test]
    fn target_centric_mode_serves_all_ues_from_all_tx_aps() {
        let cfg = baseline();
        let mut rng = substream(77, &[0]);
        let sc = generate_scenario(&cfg, &mut rng).unwrap();
        let lsf = nlos_lsf(&cfg, &sc);
        let maps =
            AssociationMaps::build(&sc, &lsf, &cfg, AssociationMode::TargetCentric).unwrap();
        for cluster in &maps.serving_aps_of_ue {
            assert_eq!(cluster.len(), cfg.num_tx_aps());
        }
    }

    #[test]
    fn most_square_factorizations() {
        assert_eq!(most_square_factorization(9), (3, 3));
        assert_eq!(most_square_factorization(6), (2, 3));
        assert_eq!(most_square_factorization(7), (1, 7));
        assert_eq!(most_square_factorization(1), (1, 1));
    }
}
