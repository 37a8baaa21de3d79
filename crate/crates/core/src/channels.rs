//! Propagation models and channel draws: spatially correlated Rayleigh
//! UE–AP links, Rician AP–AP links with scalable clutter, and line-of-sight
//! target reflections with correlated radar cross sections.

use nalgebra::{DVector, Vector3};
use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::config::SystemConfig;
use crate::linalg::{cr, hermitian_sqrt, psd_project, CMat, CVec, C64};
use crate::rng::{complex_gaussian_mat, complex_gaussian_vec, correlated_gaussian};
use crate::scenario::Scenario;
use crate::{Result, SimError};

const SPEED_OF_LIGHT: f64 = 2.998e8;
const GAUSS_HERMITE_ORDER: usize = 31;

/// Uniform linear array description. Elements lie along the y axis, so a
/// wave from azimuth φ (measured from x) and elevation θ accumulates a
/// per-element phase of 2π·d·sin(φ)·cos(θ).
#[derive(Debug, Clone, Copy)]
pub struct UlaGeometry {
    pub num_antennas: usize,
    pub spacing_wavelengths: f64,
}

impl UlaGeometry {
    pub fn from_config(config: &SystemConfig) -> Self {
        Self {
            num_antennas: config.scenario.antennas_per_ap,
            spacing_wavelengths: config.radio.element_spacing_wavelengths,
        }
    }
}

/// Azimuth/elevation of `to` as seen from `from`.
pub fn angles_to(from: &Vector3<f64>, to: &Vector3<f64>) -> (f64, f64) {
    let d = to - from;
    let azimuth = d.y.atan2(d.x);
    let elevation = d.z.atan2((d.x * d.x + d.y * d.y).sqrt());
    (azimuth, elevation)
}

/// ULA steering vector; every element has unit modulus so ‖a‖² = N.
pub fn steering_vector(geom: &UlaGeometry, azimuth: f64, elevation: f64) -> CVec {
    let phase = 2.0 * std::f64::consts::PI
        * geom.spacing_wavelengths
        * azimuth.sin()
        * elevation.cos();
    DVector::from_fn(geom.num_antennas, |u, _| {
        C64::from_polar(1.0, phase * u as f64)
    })
}

pub fn steering_towards(
    geom: &UlaGeometry,
    ap_pos: &Vector3<f64>,
    point: &Vector3<f64>,
) -> CVec {
    let (az, el) = angles_to(ap_pos, point);
    steering_vector(geom, az, el)
}

fn wrap_angle(x: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut y = x % two_pi;
    if y > std::f64::consts::PI {
        y -= two_pi;
    } else if y <= -std::f64::consts::PI {
        y += two_pi;
    }
    y
}

/// Local-scattering spatial correlation for a nominal arrival direction
/// with Gaussian azimuth perturbations. The phase is expanded to first
/// order in the perturbation (the standard local-scattering construction),
/// so entry (u, u') carries the suppression E[e^{j·a·δ·(u−u')}] with
/// a = 2π·d·cos(φ)·cos(θ). The expectation is evaluated by Gauss–Hermite
/// quadrature; beyond the quadrature's oscillation budget it switches to
/// the analytic Gaussian characteristic function (both branches agree to
/// machine precision at the crossover). Trace equals N·lsf; slightly
/// indefinite numerical results are projected back onto the PSD cone.
pub fn local_scattering_correlation(
    geom: &UlaGeometry,
    azimuth: f64,
    elevation: f64,
    angular_spread: f64,
    lsf: f64,
) -> CMat {
    assert!(angular_spread > 0.0, "angular spread must be positive");
    let n = geom.num_antennas;
    let (nodes, weights) = crate::linalg::gauss_hermite(GAUSS_HERMITE_ORDER);
    let norm = std::f64::consts::PI.sqrt();
    let two_pi_d = 2.0 * std::f64::consts::PI * geom.spacing_wavelengths;
    let base = two_pi_d * azimuth.sin() * elevation.cos();
    let slope = two_pi_d * azimuth.cos() * elevation.cos();
    let mut corr = CMat::zeros(n, n);
    // First row determines the Toeplitz structure: entry depends on u - u'.
    let mut row = vec![C64::new(0.0, 0.0); n];
    for (lag, slot) in row.iter_mut().enumerate() {
        let a = slope * lag as f64;
        let suppression = if (a * angular_spread).abs() <= 8.0 {
            let mut acc = C64::new(0.0, 0.0);
            for (x, w) in nodes.iter().zip(&weights) {
                let delta = std::f64::consts::SQRT_2 * angular_spread * x;
                acc += C64::from_polar(*w, a * delta);
            }
            acc / cr(norm)
        } else {
            cr((-(a * angular_spread).powi(2) / 2.0).exp())
        };
        *slot = C64::from_polar(1.0, base * lag as f64) * suppression * cr(lsf);
    }
    for u in 0..n {
        for v in 0..n {
            corr[(u, v)] = if u >= v {
                row[u - v]
            } else {
                row[v - u].conj()
            };
        }
    }
    let projected = psd_project(&corr);
    // Restore the exact trace after eigenvalue clipping.
    let tr = projected.trace().re;
    if tr > 0.0 {
        projected * cr(n as f64 * lsf / tr)
    } else {
        projected
    }
}

/// Steering vector at first-order-perturbed pointing angles: the element
/// phase of a(φ, θ) shifted by the angle errors' linear phase terms. Used
/// by the long-term beam-covariance averages; agrees with re-steering at
/// the perturbed angles to O(ε²).
pub fn perturbed_steering_vector(
    geom: &UlaGeometry,
    azimuth: f64,
    elevation: f64,
    eps_az: f64,
    eps_el: f64,
) -> CVec {
    let two_pi_d = 2.0 * std::f64::consts::PI * geom.spacing_wavelengths;
    let phase = two_pi_d
        * (azimuth.sin() * elevation.cos()
            + eps_az * azimuth.cos() * elevation.cos()
            - eps_el * azimuth.sin() * elevation.sin());
    DVector::from_fn(geom.num_antennas, |u, _| {
        C64::from_polar(1.0, phase * u as f64)
    })
}

/// Propagation branch of the micro-urban path-loss model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathLossBranch {
    LineOfSight,
    NonLineOfSight,
}

/// Micro-urban path loss in dB (dual-slope LoS, single-slope NLoS).
/// Distances below 1 m are clamped.
pub fn umi_path_loss_db(
    distance_m: f64,
    branch: PathLossBranch,
    carrier_hz: f64,
    h1_m: f64,
    h2_m: f64,
) -> f64 {
    let d = distance_m.max(1.0);
    let f_ghz = carrier_hz / 1e9;
    match branch {
        PathLossBranch::LineOfSight => {
            let h1 = (h1_m - 1.0).max(0.05);
            let h2 = (h2_m - 1.0).max(0.05);
            let breakpoint = 4.0 * h1 * h2 * carrier_hz / SPEED_OF_LIGHT;
            if d <= breakpoint {
                22.0 * d.log10() + 28.0 + 20.0 * f_ghz.log10()
            } else {
                40.0 * d.log10() + 7.8 - 18.0 * h1.log10() - 18.0 * h2.log10()
                    + 2.0 * f_ghz.log10()
            }
        }
        PathLossBranch::NonLineOfSight => 36.7 * d.log10() + 22.7 + 26.0 * f_ghz.log10(),
    }
}

/// Linear power gain of the micro-urban model.
pub fn path_loss_linear(
    distance_m: f64,
    branch: PathLossBranch,
    carrier_hz: f64,
    h1_m: f64,
    h2_m: f64,
) -> f64 {
    10f64.powf(-umi_path_loss_db(distance_m, branch, carrier_hz, h1_m, h2_m) / 10.0)
}

/// Micro-urban LoS probability as a function of distance.
pub fn umi_los_probability(distance_m: f64) -> f64 {
    let d = distance_m.max(1.0);
    (18.0 / d).min(1.0) * (1.0 - (-d / 36.0).exp()) + (-d / 36.0).exp()
}

/// Two-hop target path gain: tx AP → target → rx AP, LoS on both hops.
pub fn target_path_gain(
    tx_pos: &Vector3<f64>,
    rx_pos: &Vector3<f64>,
    target_pos: &Vector3<f64>,
    carrier_hz: f64,
) -> f64 {
    let d1 = (target_pos - tx_pos).norm();
    let d2 = (rx_pos - target_pos).norm();
    path_loss_linear(d1, PathLossBranch::LineOfSight, carrier_hz, tx_pos.z, target_pos.z)
        * path_loss_linear(d2, PathLossBranch::LineOfSight, carrier_hz, target_pos.z, rx_pos.z)
}

/// Deterministic geometry of one target/cell reflection path.
#[derive(Debug, Clone)]
pub struct TargetLink {
    /// Two-hop path gain β.
    pub beta: f64,
    /// Steering of the receive AP toward the reflection point.
    pub a_rx: CVec,
    /// Steering of the transmit AP toward the reflection point.
    pub a_tx: CVec,
}

impl TargetLink {
    /// Rank-one array response A = a_rx·a_txᴴ (Frobenius norm N).
    pub fn array_outer(&self) -> CMat {
        &self.a_rx * self.a_tx.adjoint()
    }
}

/// Builds the reflection geometry for a (tx AP, rx AP, point) triple.
pub fn target_channel(
    geom: &UlaGeometry,
    tx_pos: &Vector3<f64>,
    rx_pos: &Vector3<f64>,
    point: &Vector3<f64>,
    carrier_hz: f64,
) -> TargetLink {
    TargetLink {
        beta: target_path_gain(tx_pos, rx_pos, point, carrier_hz),
        a_rx: steering_towards(geom, rx_pos, point),
        a_tx: steering_towards(geom, tx_pos, point),
    }
}

/// Gaussian-shaped RCS correlation over the transmit APs' view angles,
/// with σ_α² on the diagonal. Eigenvalues are clipped to keep it PSD.
pub fn build_rcs_correlation(view_angles: &[f64], sigma_alpha2: f64, sigma_view: f64) -> CMat {
    let n = view_angles.len();
    let mut r = CMat::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let diff = wrap_angle(view_angles[i] - view_angles[j]);
            r[(i, j)] = cr(sigma_alpha2 * (-diff * diff / (2.0 * sigma_view * sigma_view)).exp());
        }
    }
    psd_project(&r)
}

/// One AP→AP link: LSF, Rician split, LoS response and Kronecker-factored
/// NLoS correlation (unit-diagonal side factors, so tr(Q) = N²).
#[derive(Debug, Clone)]
pub struct ApApLink {
    /// LSF coefficient b (linear path gain, branch drawn by LoS probability).
    pub pathloss: f64,
    /// Rician factor c; `None` encodes the pure-LoS limit (p_LoS = 1).
    pub rician_c: Option<f64>,
    /// Amplitude of the NLoS part, κ = √(b/(1+c)).
    pub nlos_amp: f64,
    /// Amplitude of the LoS part, √(b·c/(1+c)).
    pub los_amp: f64,
    /// Array response a_m·a_{m'}ᴴ at the LoS direction.
    pub v_los: CMat,
    /// Receive- and transmit-side correlation factors of Q = R_tx ⊗ R_rx.
    pub r_rx: CMat,
    pub r_tx: CMat,
    pub r_rx_sqrt: CMat,
    pub r_tx_sqrt: CMat,
}

impl ApApLink {
    /// Materializes the full N²×N² NLoS covariance Q (column-major vec).
    pub fn full_nlos_cov(&self) -> CMat {
        self.r_tx.kronecker(&self.r_rx)
    }
}

/// Long-term statistics for one deployment: UE–AP correlation matrices and
/// their square roots, the LSF tables, and all AP–AP link descriptors.
#[derive(Debug)]
pub struct CorrelationSet {
    pub geom: UlaGeometry,
    /// C_{k,m} for transmit APs, `None` for receive APs.
    pub ue_ap: Vec<Vec<Option<CMat>>>,
    pub ue_ap_sqrt: Vec<Vec<Option<CMat>>>,
    /// ρ_{k,m} = tr(C_{k,m})/N over all APs.
    pub ue_lsf: Vec<Vec<f64>>,
    /// Links indexed `[rx position][tx position]` via the role lists below.
    pub ap_links: Vec<Vec<ApApLink>>,
    pub tx_list: Vec<usize>,
    pub rx_list: Vec<usize>,
}

/// Large-scale fading table ρ_{k,m} (micro-urban NLoS branch), used for
/// serving-cluster selection before correlation matrices exist.
pub fn ue_lsf_table(config: &SystemConfig, scenario: &Scenario) -> Vec<Vec<f64>> {
    let fc = config.frame.carrier_freq_hz;
    scenario
        .ue_positions
        .iter()
        .map(|ue| {
            scenario
                .ap_positions
                .iter()
                .map(|ap| {
                    let d = (ap - ue).norm();
                    path_loss_linear(d, PathLossBranch::NonLineOfSight, fc, ap.z, ue.z)
                })
                .collect()
        })
        .collect()
}

impl CorrelationSet {
    /// Builds every correlation matrix of one deployment. The AP–AP LSF
    /// branch (LoS vs NLoS path loss) is drawn here from the model's LoS
    /// probability, one Bernoulli draw per link.
    pub fn build(config: &SystemConfig, scenario: &Scenario, rng: &mut ChaCha12Rng) -> Self {
        let geom = UlaGeometry::from_config(config);
        let fc = config.frame.carrier_freq_hz;
        let spread = config.angular_spread_rad();
        let tx_list = scenario.tx_aps();
        let rx_list = scenario.rx_aps();

        let ue_lsf = ue_lsf_table(config, scenario);
        let mut ue_ap = vec![vec![None; scenario.ap_positions.len()]; scenario.ue_positions.len()];
        let mut ue_ap_sqrt =
            vec![vec![None; scenario.ap_positions.len()]; scenario.ue_positions.len()];
        for (k, ue) in scenario.ue_positions.iter().enumerate() {
            for &m in &tx_list {
                let ap = &scenario.ap_positions[m];
                let (az, el) = angles_to(ap, ue);
                let corr = local_scattering_correlation(&geom, az, el, spread, ue_lsf[k][m]);
                ue_ap_sqrt[k][m] = Some(hermitian_sqrt(&corr));
                ue_ap[k][m] = Some(corr);
            }
        }

        let mut ap_links = Vec::with_capacity(rx_list.len());
        for &m in &rx_list {
            let mut row = Vec::with_capacity(tx_list.len());
            for &mp in &tx_list {
                let rx_pos = &scenario.ap_positions[m];
                let tx_pos = &scenario.ap_positions[mp];
                let d = (rx_pos - tx_pos).norm();
                let p_los = umi_los_probability(d);
                let branch = if rng.random::<f64>() < p_los {
                    PathLossBranch::LineOfSight
                } else {
                    PathLossBranch::NonLineOfSight
                };
                let b = path_loss_linear(d, branch, fc, rx_pos.z, tx_pos.z);
                let (rician_c, nlos_amp, los_amp) = if p_los >= 1.0 {
                    (None, 0.0, b.sqrt())
                } else {
                    let c = p_los / (1.0 - p_los);
                    ((Some(c)), (b / (1.0 + c)).sqrt(), (b * c / (1.0 + c)).sqrt())
                };
                let (az_rx, el_rx) = angles_to(rx_pos, tx_pos);
                let (az_tx, el_tx) = angles_to(tx_pos, rx_pos);
                let a_rx = steering_vector(&geom, az_rx, el_rx);
                let a_tx = steering_vector(&geom, az_tx, el_tx);
                let v_los = &a_rx * a_tx.adjoint();
                let r_rx = local_scattering_correlation(&geom, az_rx, el_rx, spread, 1.0);
                let r_tx = local_scattering_correlation(&geom, az_tx, el_tx, spread, 1.0);
                row.push(ApApLink {
                    pathloss: b,
                    rician_c,
                    nlos_amp,
                    los_amp,
                    v_los,
                    r_rx_sqrt: hermitian_sqrt(&r_rx),
                    r_tx_sqrt: hermitian_sqrt(&r_tx),
                    r_rx,
                    r_tx,
                });
            }
            ap_links.push(row);
        }

        Self {
            geom,
            ue_ap,
            ue_ap_sqrt,
            ue_lsf,
            ap_links,
            tx_list,
            rx_list,
        }
    }

    pub fn corr(&self, k: usize, m: usize) -> Result<&CMat> {
        self.ue_ap[k][m].as_ref().ok_or_else(|| {
            SimError::Dimension(format!("no UE-AP correlation for UE {k}, AP {m}"))
        })
    }
}

/// Rayleigh UE channel draw h = C^{1/2}·w.
pub fn draw_ue_channel<R: Rng>(corr_sqrt: &CMat, rng: &mut R) -> CVec {
    correlated_gaussian(corr_sqrt, rng)
}

/// Rician AP–AP draw split into its LoS and NLoS components. The clutter
/// cancellation factor ς scales the NLoS power, i.e. the amplitude by √ς.
pub fn draw_ap_ap_channel<R: Rng>(
    link: &ApApLink,
    varsigma: f64,
    rng: &mut R,
) -> (CMat, CMat) {
    let n = link.v_los.nrows();
    let psi: f64 = rng.random::<f64>() * 2.0 * std::f64::consts::PI;
    let g_los = &link.v_los * (C64::from_polar(link.los_amp, psi));
    let g_nlos = if link.nlos_amp == 0.0 || varsigma == 0.0 {
        CMat::zeros(n, n)
    } else {
        // vec(Ḡ) = (R_tx^{1/2} ⊗ R_rx^{1/2})·w  ⇔  Ḡ = R_rx^{1/2}·W·(R_tx^{1/2})ᵀ
        let w = complex_gaussian_mat(rng, n, n);
        let correlated = &link.r_rx_sqrt * w * link.r_tx_sqrt.transpose();
        correlated * cr(link.nlos_amp * varsigma.sqrt())
    };
    (g_los, g_nlos)
}

/// Draws the RCS vector (one entry per transmit AP) from CN(0, R).
pub fn draw_rcs<R: Rng>(r_sqrt: &CMat, rng: &mut R) -> CVec {
    correlated_gaussian(r_sqrt, rng)
}

/// One coherence-block draw of every random channel component.
#[derive(Debug, Clone)]
pub struct ChannelRealization {
    /// h_{k,m}, `None` for receive APs.
    pub ue_channels: Vec<Vec<Option<CVec>>>,
    /// LoS component of G indexed `[rx][tx]` (includes the random phase).
    pub ap_los: Vec<Vec<CMat>>,
    /// NLoS (clutter) component of G, already scaled by √ς.
    pub ap_nlos: Vec<Vec<CMat>>,
    /// α_{l,m}: per target and receive AP, one entry per transmit AP.
    pub target_alpha: Vec<Vec<CVec>>,
}

/// Draws a full realization. `rcs_sqrt[l][rx]` are square roots of the
/// R_{l,m} matrices; draw order is fixed so equal seeds reproduce bytes.
pub fn draw_realization(
    corr: &CorrelationSet,
    rcs_sqrt: &[Vec<CMat>],
    varsigma: f64,
    rng: &mut ChaCha12Rng,
) -> ChannelRealization {
    let ue_channels = corr
        .ue_ap_sqrt
        .iter()
        .map(|row| {
            row.iter()
                .map(|s| s.as_ref().map(|sq| draw_ue_channel(sq, rng)))
                .collect()
        })
        .collect();
    let mut ap_los = Vec::with_capacity(corr.rx_list.len());
    let mut ap_nlos = Vec::with_capacity(corr.rx_list.len());
    for row in &corr.ap_links {
        let mut los_row = Vec::with_capacity(row.len());
        let mut nlos_row = Vec::with_capacity(row.len());
        for link in row {
            let (los, nlos) = draw_ap_ap_channel(link, varsigma, rng);
            los_row.push(los);
            nlos_row.push(nlos);
        }
        ap_los.push(los_row);
        ap_nlos.push(nlos_row);
    }
    let target_alpha = rcs_sqrt
        .iter()
        .map(|per_rx| per_rx.iter().map(|s| draw_rcs(s, rng)).collect())
        .collect();
    ChannelRealization {
        ue_channels,
        ap_los,
        ap_nlos,
        target_alpha,
    }
}
