//! GLRT-based multistatic sensing: stacked observation models, clutter
//! whitening, ML reflectivity estimation, CPU-fused test statistics,
//! constant-false-alarm threshold calibration and the SCNR/SICNR figures
//! of merit.

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::channels::{ApApLink, TargetLink};
use crate::linalg::{
    cr, hermitian_eigen, pinv_hermitian, scaled_outer, trace_product_re, CMat, CVec, C64,
    RANK_CUTOFF,
};
use crate::precoding::TransmitFrame;
use crate::rng::complex_gaussian_vec;
use crate::{Result, SimError};

/// Whitening operator Ψ^{-1/2} for one receive AP, built from the
/// Hermitian eigendecomposition so the whitened basis is explicit.
#[derive(Debug, Clone)]
pub struct Whitener {
    pub inv_sqrt: CMat,
    pub dim: usize,
}

impl Whitener {
    /// From an explicit clutter-plus-noise covariance Ψ.
    pub fn from_cov(psi: &CMat) -> Result<Self> {
        let eig = hermitian_eigen(psi);
        if eig.values[0] <= 0.0 {
            return Err(SimError::Numerical(
                "whitening covariance is not positive definite".into(),
            ));
        }
        Ok(Self {
            inv_sqrt: scaled_outer(&eig.vectors, &eig.values.map(|v| 1.0 / v.sqrt())),
            dim: psi.nrows(),
        })
    }

    /// Clutter-blind variant: Ψ = σ_z²·I.
    pub fn noise_only(dim: usize, noise_var: f64) -> Self {
        Self {
            inv_sqrt: CMat::identity(dim, dim) * cr(1.0 / noise_var.sqrt()),
            dim,
        }
    }
}

/// Eigendecomposition of the unit-clutter covariance Q̈ (ς = 1), shared by
/// all clutter scales: Ψ(ς)^{-1/2} = E·diag((ς·λ + σ²)^{-1/2})·Eᴴ.
#[derive(Debug, Clone)]
pub struct ClutterEigen {
    vectors: CMat,
    values: DVector<f64>,
}

impl ClutterEigen {
    pub fn new(q_unit: &CMat) -> Self {
        let eig = hermitian_eigen(q_unit);
        Self {
            vectors: eig.vectors,
            values: eig.values.map(|v| v.max(0.0)),
        }
    }

    pub fn whitener(&self, varsigma: f64, noise_var: f64) -> Whitener {
        Whitener {
            inv_sqrt: scaled_outer(
                &self.vectors,
                &self.values.map(|v| 1.0 / (varsigma * v + noise_var).sqrt()),
            ),
            dim: self.values.len(),
        }
    }

    pub fn psi(&self, varsigma: f64, noise_var: f64) -> CMat {
        scaled_outer(&self.vectors, &self.values.map(|v| varsigma * v + noise_var))
    }
}

/// Unit-clutter stacked covariance Σ_{m'} κ²·(S̈·R_tx·S̈ᴴ) ⊗ R_rx for one
/// receive AP; multiply by ς and add σ²·I to obtain Ψ. Exploits the
/// Kronecker factorization of each link's NLoS covariance.
pub fn clutter_covariance_unit(
    frame: &TransmitFrame,
    links: &[ApApLink],
    tx_list: &[usize],
    tau_s: usize,
) -> Result<CMat> {
    if links.len() != tx_list.len() {
        return Err(SimError::Dimension(
            "one AP-AP link required per transmit AP".into(),
        ));
    }
    let n = links
        .first()
        .map(|l| l.r_rx.nrows())
        .ok_or_else(|| SimError::Dimension("no transmit APs".into()))?;
    let dim = n * tau_s;
    let mut q = CMat::zeros(dim, dim);
    for (j, &m) in tx_list.iter().enumerate() {
        let link = &links[j];
        if link.nlos_amp == 0.0 {
            continue;
        }
        let stacked = frame.stacked(m)?; // τ × N
        if stacked.nrows() < tau_s {
            return Err(SimError::Dimension(format!(
                "frame of AP {m} has {} samples, need {tau_s}",
                stacked.nrows()
            )));
        }
        let s = stacked.rows(0, tau_s);
        let time_part = &s * &link.r_tx * s.adjoint(); // τ_s × τ_s
        q += time_part.kronecker(&link.r_rx) * cr(link.nlos_amp * link.nlos_amp);
    }
    Ok(q)
}

/// Clutter covariance and Ψ for a given clutter scale ς.
pub fn clutter_covariance(
    frame: &TransmitFrame,
    links: &[ApApLink],
    tx_list: &[usize],
    tau_s: usize,
    varsigma: f64,
    noise_var: f64,
) -> Result<(CMat, CMat)> {
    let q = clutter_covariance_unit(frame, links, tx_list, tau_s)? * cr(varsigma);
    let dim = q.nrows();
    let psi = &q + CMat::identity(dim, dim) * cr(noise_var);
    Ok((q, psi))
}

/// Reference Kronecker-sandwich form Σ κ²·(S̈⊗I_N)·Q·(S̈⊗I_N)ᴴ over
/// explicit N²×N² covariances; used to validate the factored fast path.
pub fn clutter_covariance_general(
    stacked_signals: &[CMat],
    kappas: &[f64],
    covs: &[CMat],
) -> CMat {
    let n = (covs[0].nrows() as f64).sqrt() as usize;
    let tau = stacked_signals[0].nrows();
    let eye = CMat::identity(n, n);
    let mut q = CMat::zeros(n * tau, n * tau);
    for ((s, &k), cov) in stacked_signals.iter().zip(kappas).zip(covs) {
        let lift = s.kronecker(&eye);
        q += &lift * cov * lift.adjoint() * cr(k * k);
    }
    q
}

/// Stacked steering model D̈ for one (inspected position, receive AP)
/// pair: column m' of time block t is √β·A·s_{m'}[t], with one column per
/// transmit AP, stacked over τ_s blocks.
pub fn build_stacked_model(
    frame: &TransmitFrame,
    links: &[TargetLink],
    tx_list: &[usize],
    tau_s: usize,
) -> Result<CMat> {
    if links.len() != tx_list.len() {
        return Err(SimError::Dimension(
            "one reflection link required per transmit AP".into(),
        ));
    }
    let n = links
        .first()
        .map(|l| l.a_rx.len())
        .ok_or_else(|| SimError::Dimension("no transmit APs".into()))?;
    let mut d = CMat::zeros(n * tau_s, tx_list.len());
    for (j, &m) in tx_list.iter().enumerate() {
        let link = &links[j];
        let signal = frame.signals[m]
            .as_ref()
            .ok_or_else(|| SimError::Dimension(format!("AP {m} does not transmit")))?;
        if signal.ncols() < tau_s || signal.nrows() != n {
            return Err(SimError::Dimension(format!(
                "signal of AP {m} is {}x{}, need {n}x≥{tau_s}",
                signal.nrows(),
                signal.ncols()
            )));
        }
        let amp = cr(link.beta.sqrt());
        for t in 0..tau_s {
            // A·s = a_rx·(a_txᴴ·s); the rank-one structure avoids N×N work.
            let inner = link.a_tx.dotc(&signal.column(t).into_owned());
            let scaled = &link.a_rx * (inner * amp);
            for u in 0..n {
                d[(t * n + u, j)] = scaled[u];
            }
        }
    }
    Ok(d)
}

/// The per-(position, receive AP) detection/tracking problem: stacked
/// steering, whitened column space and its semi-unitary basis.
#[derive(Debug, Clone)]
pub struct SensingProblem {
    pub d_stack: CMat,
    /// Ψ^{-1/2}·D̈, cached for the figures of merit.
    pub whitened_d: CMat,
    /// Left singular vectors of the non-zero singular values of Ψ^{-1/2}·D̈.
    pub basis: CMat,
    pub rank: usize,
}

impl SensingProblem {
    pub fn new(d_stack: CMat, whitener: &Whitener) -> Self {
        let whitened_d = &whitener.inv_sqrt * &d_stack;
        let svd = whitened_d.clone().svd(true, false);
        let u = svd.u.as_ref().expect("left singular vectors requested");
        let max_sv = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
        let rank = svd
            .singular_values
            .iter()
            .filter(|s| **s > max_sv * RANK_CUTOFF)
            .count();
        // Singular values come out sorted descending.
        let basis = u.columns(0, rank).into_owned();
        Self {
            d_stack,
            whitened_d,
            basis,
            rank,
        }
    }

    /// Receive combining matrix Ξ = Uᴴ·Ψ^{-1/2} (r × N·τ_s).
    pub fn combiner(&self, whitener: &Whitener) -> CMat {
        self.basis.adjoint() * &whitener.inv_sqrt
    }

    /// Per-AP contribution ‖Uᴴ·Ψ^{-1/2}·ÿ‖² to the fused statistic.
    pub fn statistic(&self, whitener: &Whitener, observation: &CVec) -> f64 {
        (self.basis.adjoint() * (&whitener.inv_sqrt * observation)).norm_squared()
    }
}

/// ML estimate of the reflectivity vector: the whitened least-squares
/// solution (D̈ᴴΨ⁻¹D̈)⁻¹·D̈ᴴΨ⁻¹·ÿ; a rank-deficient normal matrix falls
/// back to the pseudo-inverse (degenerate-rank experiments).
pub fn ml_rcs_estimate(problem: &SensingProblem, whitener: &Whitener, observation: &CVec) -> CVec {
    let wd = &problem.whitened_d;
    let gram = wd.adjoint() * wd;
    let (pinv, _) = pinv_hermitian(&gram);
    let wy = &whitener.inv_sqrt * observation;
    &pinv * (wd.adjoint() * wy)
}

/// Value of the GLRT objective α̂ᴴ·G·α̂ − 2Re{α̂ᴴ·D̈ᴴΨ⁻¹·ÿ} at a point.
pub fn glrt_objective(
    problem: &SensingProblem,
    whitener: &Whitener,
    observation: &CVec,
    alpha: &CVec,
) -> f64 {
    let wd = &problem.whitened_d;
    let wy = &whitener.inv_sqrt * observation;
    let fitted = wd * alpha;
    let quad = fitted.norm_squared();
    let cross = (wy.dotc(&fitted)).re;
    quad - 2.0 * cross
}

/// Outcome of one fused binary test.
#[derive(Debug, Clone)]
pub struct TestResult {
    pub statistic: f64,
    pub ln_threshold: f64,
    /// true ⇔ H1 declared (statistic > ln δ).
    pub target_declared: bool,
    /// ML reflectivity estimate per receive AP.
    pub ml_rcs: Vec<CVec>,
}

/// Fuses the per-AP GLRT contributions at the CPU and compares with the
/// calibrated log-threshold.
pub fn glrt_statistic(
    parts: &[(&SensingProblem, &Whitener, &CVec)],
    ln_threshold: f64,
) -> TestResult {
    let mut statistic = 0.0;
    let mut ml_rcs = Vec::with_capacity(parts.len());
    for (problem, whitener, obs) in parts {
        statistic += problem.statistic(whitener, obs);
        ml_rcs.push(ml_rcs_estimate(problem, whitener, obs));
    }
    TestResult {
        statistic,
        ln_threshold,
        target_declared: statistic > ln_threshold,
        ml_rcs,
    }
}

/// Empirical (1 − p_fa) quantile of H0 statistics: the calibrated ln δ.
pub fn calibrate_threshold(h0_statistics: &[f64], p_fa: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&p_fa) || p_fa <= 0.0 {
        return Err(SimError::Calibration(format!(
            "false-alarm target must lie in (0, 1), got {p_fa}"
        )));
    }
    let needed = (10.0 / p_fa).ceil() as usize;
    if h0_statistics.len() < needed {
        return Err(SimError::Calibration(format!(
            "{} H0 trials are too few for p_fa = {p_fa} (need ≥ {needed})",
            h0_statistics.len()
        )));
    }
    let mut sorted = h0_statistics.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    let idx = (((1.0 - p_fa) * n as f64).ceil() as usize).clamp(1, n) - 1;
    Ok(sorted[idx])
}

/// Draws H0 statistics from a caller-supplied family and calibrates ln δ.
pub fn calibrate_threshold_with<F>(
    mut family: F,
    p_fa: f64,
    num_trials: usize,
    rng: &mut ChaCha12Rng,
) -> Result<f64>
where
    F: FnMut(&mut ChaCha12Rng) -> f64,
{
    let stats: Vec<f64> = (0..num_trials).map(|_| family(rng)).collect();
    calibrate_threshold(&stats, p_fa)
}

/// Per-target tracking tests: every target gets the detection-style fused
/// statistic on the same observations, which carry the other targets'
/// echoes as interference (the whitener stays clutter-plus-noise only).
pub fn tracking_glrt(
    per_target: &[Vec<(&SensingProblem, &Whitener, &CVec)>],
    ln_thresholds: &[f64],
) -> Vec<TestResult> {
    per_target
        .iter()
        .zip(ln_thresholds)
        .map(|(parts, &thr)| glrt_statistic(parts, thr))
        .collect()
}

/// Receive-side SCNR: useful whitened-projected power over the projected
/// clutter-plus-noise power, which equals the fused subspace dimension.
pub fn scnr(parts: &[(&SensingProblem, &Whitener)], rcs_cov: &[&CMat]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for ((problem, _), r) in parts.iter().zip(rcs_cov) {
        let t = problem.basis.adjoint() * &problem.whitened_d; // Ξ·D̈
        num += trace_product_re(&(t.adjoint() * &t), r);
        den += problem.rank as f64;
    }
    if den == 0.0 {
        return 0.0;
    }
    num / den
}

/// SICNR of one tracked target: like the SCNR but the denominator adds the
/// projected power ξ of every other target's echo.
pub fn sicnr(
    own: &[(&SensingProblem, &Whitener)],
    own_rcs: &[&CMat],
    interferers: &[Vec<(&CMat, &CMat)>],
) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (idx, ((problem, whitener), r)) in own.iter().zip(own_rcs).enumerate() {
        let t = problem.basis.adjoint() * &problem.whitened_d;
        num += trace_product_re(&(t.adjoint() * &t), r);
        den += problem.rank as f64;
        let xi: f64 = interferers[idx]
            .iter()
            .map(|(d_other, r_other)| {
                let proj = problem.combiner(whitener) * *d_other;
                trace_product_re(&(proj.adjoint() * &proj), r_other)
            })
            .sum();
        den += xi;
    }
    if den == 0.0 {
        return 0.0;
    }
    num / den
}

/// Synthesizes the stacked receive signal of one receive AP: target echoes
/// plus direct AP–AP paths plus noise, then subtracts the (perfectly
/// known) LoS components, leaving echoes + clutter + noise.
#[allow(clippy::too_many_arguments)]
pub fn receive_echo<R: Rng>(
    frame: &TransmitFrame,
    tx_list: &[usize],
    ap_los: &[CMat],
    ap_nlos: &[CMat],
    targets: &[(&CVec, &[TargetLink])],
    tau_s: usize,
    noise_var: f64,
    rng: &mut R,
) -> CVec {
    let n = ap_los
        .first()
        .map(|g| g.nrows())
        .unwrap_or_else(|| ap_nlos.first().map(|g| g.nrows()).unwrap_or(0));
    let mut y = complex_gaussian_vec(rng, n * tau_s) * cr(noise_var.sqrt());
    for (j, &m) in tx_list.iter().enumerate() {
        let signal = frame.signals[m].as_ref().expect("transmit AP has a frame");
        for t in 0..tau_s {
            let s_t = signal.column(t);
            // Direct paths: the LoS part is added and subtracted exactly,
            // so only the NLoS clutter survives.
            let clutter = &ap_nlos[j] * s_t;
            let direct = &ap_los[j] * s_t;
            let cancelled = &direct - &direct;
            for u in 0..n {
                y[t * n + u] += clutter[u] + cancelled[u];
            }
        }
    }
    for (alpha, links) in targets {
        for (j, link) in links.iter().enumerate() {
            let gain = alpha[j] * cr(link.beta.sqrt());
            let signal = frame.signals[tx_list[j]].as_ref().unwrap();
            for t in 0..tau_s {
                let inner = link.a_tx.dotc(&signal.column(t).into_owned()) * gain;
                for u in 0..n {
                    y[t * n + u] += link.a_rx[u] * inner;
                }
            }
        }
    }
    y
}

/// Clutter-plus-noise-only observation (an H0 draw).
pub fn receive_h0<R: Rng>(
    frame: &TransmitFrame,
    tx_list: &[usize],
    ap_los: &[CMat],
    ap_nlos: &[CMat],
    tau_s: usize,
    noise_var: f64,
    rng: &mut R,
) -> CVec {
    receive_echo(frame, tx_list, ap_los, ap_nlos, &[], tau_s, noise_var, rng)
}
