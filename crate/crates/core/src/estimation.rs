//! Uplink pilot signaling and per-AP MMSE channel estimation.
//!
//! Pilot sequences are orthonormal (πⱼᴴπₖ = δ_jk for the default book); the
//! τ_p processing gain enters through the explicit √(τ_p·η̄) factors. With
//! pilot reuse, UEs sharing a sequence have πⱼᴴπₖ = 1 and contaminate each
//! other's observations.

use rand::Rng;

use crate::channels::CorrelationSet;
use crate::linalg::{cr, solve_hermitian, CMat, CVec, C64};
use crate::rng::complex_gaussian_vec;
use crate::{Result, SimError};

/// Pilot assignment for all UEs.
#[derive(Debug, Clone)]
pub struct PilotBook {
    /// τ_p × K matrix with one unit-norm column per UE.
    pilots: CMat,
    /// Uplink training power η̄_k per UE.
    pub pilot_power: Vec<f64>,
    pub pilot_len: usize,
}

impl PilotBook {
    /// Orthonormal DFT book; requires τ_p ≥ K.
    pub fn orthogonal(pilot_len: usize, num_ues: usize, eta_bar: f64) -> Result<Self> {
        if pilot_len < num_ues {
            return Err(SimError::Config(format!(
                "orthogonal pilots need tau_p >= K ({pilot_len} < {num_ues})"
            )));
        }
        Ok(Self::dft_book(pilot_len, num_ues, eta_bar))
    }

    /// Round-robin pilot reuse for τ_p < K; exercises contamination terms.
    pub fn with_reuse(pilot_len: usize, num_ues: usize, eta_bar: f64) -> Self {
        Self::dft_book(pilot_len, num_ues, eta_bar)
    }

    fn dft_book(pilot_len: usize, num_ues: usize, eta_bar: f64) -> Self {
        let tau = pilot_len as f64;
        let mut pilots = CMat::zeros(pilot_len, num_ues);
        for k in 0..num_ues {
            let col = k % pilot_len;
            for t in 0..pilot_len {
                let phase = 2.0 * std::f64::consts::PI * (t * col) as f64 / tau;
                pilots[(t, k)] = C64::from_polar(1.0 / tau.sqrt(), phase);
            }
        }
        Self {
            pilots,
            pilot_power: vec![eta_bar; num_ues],
            pilot_len,
        }
    }

    pub fn num_ues(&self) -> usize {
        self.pilots.ncols()
    }

    /// πⱼᴴπₖ.
    pub fn cross(&self, j: usize, k: usize) -> C64 {
        self.pilots.column(j).dotc(&self.pilots.column(k))
    }

    pub fn shares_pilot(&self, j: usize, k: usize) -> bool {
        self.cross(j, k).norm() > 0.5
    }
}

/// MMSE statistics of one (UE, AP) pair.
#[derive(Debug, Clone)]
pub struct UeApStatistics {
    /// MMSE matrix Λ.
    pub lambda: CMat,
    /// Observation covariance Γ (Hermitian positive definite).
    pub gamma: CMat,
    /// Φ = Λ·C, the covariance of the channel estimate.
    pub phi: CMat,
    pub tr_phi: f64,
}

/// Least-squares pilot observation φ_{k,m} at AP m.
pub fn ls_observation<R: Rng>(
    channels_at_ap: &[Option<CVec>],
    book: &PilotBook,
    k: usize,
    noise_var: f64,
    rng: &mut R,
) -> CVec {
    let n = channels_at_ap
        .iter()
        .flatten()
        .next()
        .map(|h| h.len())
        .expect("at least one channel at the AP");
    let mut phi = complex_gaussian_vec(rng, n) * cr(noise_var.sqrt());
    for (j, h) in channels_at_ap.iter().enumerate() {
        let Some(h) = h else { continue };
        let cross = book.cross(j, k);
        if cross.norm() > 0.0 {
            let gain = (book.pilot_len as f64 * book.pilot_power[j]).sqrt();
            phi += h * (cross * cr(gain));
        }
    }
    phi
}

/// Builds (Λ, Γ, Φ) for UE k at an AP from the correlation matrices of all
/// UEs heard at that AP. Γ stays invertible thanks to the noise term; a
/// singular Γ is surfaced as a numerical error rather than regularized.
pub fn mmse_statistics(
    corrs_at_ap: &[Option<&CMat>],
    book: &PilotBook,
    k: usize,
    noise_var: f64,
) -> Result<UeApStatistics> {
    let c_k = corrs_at_ap[k]
        .ok_or_else(|| SimError::Dimension(format!("no correlation for UE {k} at this AP")))?;
    let n = c_k.nrows();
    let mut gamma = CMat::identity(n, n) * cr(noise_var);
    for (j, c) in corrs_at_ap.iter().enumerate() {
        let Some(c) = c else { continue };
        let w = book.cross(j, k).norm_sqr();
        if w > 0.0 {
            gamma += *c * cr(book.pilot_len as f64 * book.pilot_power[j] * w);
        }
    }
    let lambda_h = solve_hermitian(&gamma, c_k)
        .map_err(|_| SimError::Numerical("singular pilot observation covariance".into()))?
        * cr(book.pilot_len as f64 * book.pilot_power[k]);
    // Λ = τ_p·η̄_k·C·Γ⁻¹; the solve gives Γ⁻¹·C = (C·Γ⁻¹)ᴴ for Hermitian C, Γ.
    let lambda = lambda_h.adjoint();
    let phi = &lambda * c_k;
    let tr_phi = phi.trace().re;
    Ok(UeApStatistics {
        lambda,
        gamma,
        phi,
        tr_phi,
    })
}

/// MMSE channel estimate ĥ = Λ·φ / √(τ_p·η̄_k).
pub fn mmse_estimate(phi_obs: &CVec, stats: &UeApStatistics, book: &PilotBook, k: usize) -> CVec {
    let gain = (book.pilot_len as f64 * book.pilot_power[k]).sqrt();
    (&stats.lambda * phi_obs) / cr(gain)
}

/// All per-pair MMSE statistics for one deployment.
#[derive(Debug)]
pub struct EstimateSet {
    /// Indexed `[k][m]`, `None` for receive APs.
    pub stats: Vec<Vec<Option<UeApStatistics>>>,
}

impl EstimateSet {
    pub fn build(corr: &CorrelationSet, book: &PilotBook, noise_var: f64) -> Result<Self> {
        let num_ues = corr.ue_ap.len();
        let num_aps = corr.ue_ap.first().map(|r| r.len()).unwrap_or(0);
        let mut stats = vec![Vec::with_capacity(num_aps); num_ues];
        for m in 0..num_aps {
            let corrs_at_ap: Vec<Option<&CMat>> =
                (0..num_ues).map(|k| corr.ue_ap[k][m].as_ref()).collect();
            for (k, row) in stats.iter_mut().enumerate() {
                if corrs_at_ap[k].is_some() {
                    row.push(Some(mmse_statistics(&corrs_at_ap, book, k, noise_var)?));
                } else {
                    row.push(None);
                }
            }
        }
        Ok(Self { stats })
    }

    pub fn get(&self, k: usize, m: usize) -> Result<&UeApStatistics> {
        self.stats[k][m]
            .as_ref()
            .ok_or_else(|| SimError::Dimension(format!("no statistics for UE {k}, AP {m}")))
    }
}

/// Runs the pilot phase for one realization: every (UE, serving-capable AP)
/// pair gets an LS observation and an MMSE estimate.
pub fn estimate_all<R: Rng>(
    ue_channels: &[Vec<Option<CVec>>],
    estimates: &EstimateSet,
    book: &PilotBook,
    noise_var: f64,
    rng: &mut R,
) -> Vec<Vec<Option<CVec>>> {
    let num_ues = ue_channels.len();
    let num_aps = ue_channels.first().map(|r| r.len()).unwrap_or(0);
    let mut out = vec![vec![None; num_aps]; num_ues];
    for m in 0..num_aps {
        if ue_channels.iter().all(|row| row[m].is_none()) {
            continue;
        }
        let at_ap: Vec<Option<CVec>> = (0..num_ues)
            .map(|k| ue_channels[k][m].clone())
            .collect();
        for k in 0..num_ues {
            if let Some(stats) = &estimates.stats[k][m] {
                let obs = ls_observation(&at_ap, book, k, noise_var, rng);
                out[k][m] = Some(mmse_estimate(&obs, stats, book, k));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::{local_scattering_correlation, UlaGeometry};
    use crate::linalg::rel_frobenius_err;
    use crate::rng::substream;

    fn geom(n: usize) -> UlaGeometry {
        UlaGeometry {
            num_antennas: n,
            spacing_wavelengths: 0.5,
        }
    }

    fn corr(n: usize, az: f64, lsf: f64) -> CMat {
        local_scattering_correlation(&geom(n), az, 0.0, 10f64.to_radians(), lsf)
    }

    #[test]
    fn orthogonal_pilots_are_orthonormal() {
        let book = PilotBook::orthogonal(8, 8, 1e-4).unwrap();
        for j in 0..8 {
            for k in 0..8 {
                let x = book.cross(j, k);
                let expect = if j == k { 1.0 } else { 0.0 };
                assert!((x - cr(expect)).norm() < 1e-10);
            }
        }
        assert!(PilotBook::orthogonal(4, 8, 1e-4).is_err());
    }

    #[test]
    fn observation_collapses_under_orthogonal_pilots() {
        let book = PilotBook::orthogonal(4, 2, 1e-4).unwrap();
        let mut rng = substream(31, &[0]);
        let h0 = crate::rng::complex_gaussian_vec(&mut rng, 3);
        let h1 = crate::rng::complex_gaussian_vec(&mut rng, 3);
        let chans = vec![Some(h0.clone()), Some(h1)];
        let obs = ls_observation(&chans, &book, 0, 0.0, &mut rng);
        let gain = (4.0 * 1e-4f64).sqrt();
        assert!((obs - &h0 * cr(gain)).norm() < 1e-12);
    }

    #[test]
    fn shared_pilot_contaminates_observation() {
        // Two UEs on one sequence: both channels appear at equal pilot gain.
        let book = PilotBook::with_reuse(1, 2, 1e-4);
        assert!(book.shares_pilot(0, 1));
        let mut rng = substream(32, &[0]);
        let h0 = crate::rng::complex_gaussian_vec(&mut rng, 3);
        let h1 = crate::rng::complex_gaussian_vec(&mut rng, 3);
        let chans = vec![Some(h0.clone()), Some(h1.clone())];
        let obs = ls_observation(&chans, &book, 0, 0.0, &mut rng);
        let gain = cr((1.0 * 1e-4f64).sqrt());
        assert!((obs - (&h0 * gain + &h1 * gain)).norm() < 1e-12);
    }

    #[test]
    fn observation_is_zero_mean() {
        let book = PilotBook::orthogonal(2, 2, 1e-4).unwrap();
        let c = corr(2, 0.3, 1.0);
        let sq = crate::linalg::hermitian_sqrt(&c);
        let mut rng = substream(33, &[0]);
        let mut mean = CVec::zeros(2);
        let trials = 50_000;
        for _ in 0..trials {
            let chans = vec![
                Some(crate::channels::draw_ue_channel(&sq, &mut rng)),
                Some(crate::channels::draw_ue_channel(&sq, &mut rng)),
            ];
            mean += ls_observation(&chans, &book, 0, 1e-5, &mut rng);
        }
        mean /= cr(trials as f64);
        assert!(mean.norm() < 5e-3 * (2.0 * 1e-4f64).sqrt() * 50.0 + 5e-4);
    }

    #[test]
    fn scalar_correlation_gives_scalar_mmse_gain() {
        let n = 3;
        let c_val = 2.5e-7;
        let c = CMat::identity(n, n) * cr(c_val);
        let book = PilotBook::orthogonal(4, 1, 2e-4).unwrap();
        let noise = 1e-10;
        let stats = mmse_statistics(&[Some(&c)], &book, 0, noise).unwrap();
        let tau_eta = 4.0 * 2e-4;
        let expect = tau_eta * c_val / (tau_eta * c_val + noise);
        let gain = CMat::identity(n, n) * cr(expect);
        assert!(rel_frobenius_err(&stats.lambda, &gain) < 1e-10);
    }

    #[test]
    fn noiseless_orthogonal_limit_recovers_channel() {
        let c = corr(3, 0.8, 1e-7);
        let book = PilotBook::orthogonal(2, 1, 1e-4).unwrap();
        let stats = mmse_statistics(&[Some(&c)], &book, 0, 1e-22).unwrap();
        assert!(rel_frobenius_err(&stats.lambda, &CMat::identity(3, 3)) < 1e-6);
        assert!((stats.tr_phi - c.trace().re).abs() < 1e-6 * c.trace().re);
    }

    #[test]
    fn infinite_noise_kills_estimates() {
        let c = corr(3, 0.8, 1e-7);
        let book = PilotBook::orthogonal(2, 1, 1e-4).unwrap();
        let stats = mmse_statistics(&[Some(&c)], &book, 0, 1e6).unwrap();
        assert!(stats.lambda.norm() < 1e-12);
    }

    #[test]
    fn zero_observation_gives_zero_estimate() {
        let c = corr(2, 0.1, 1e-7);
        let book = PilotBook::orthogonal(2, 1, 1e-4).unwrap();
        let stats = mmse_statistics(&[Some(&c)], &book, 0, 1e-13).unwrap();
        let est = mmse_estimate(&CVec::zeros(2), &stats, &book, 0);
        assert_eq!(est.norm(), 0.0);
    }

    /// Monte Carlo audit of the estimator's second-order statistics:
    /// cov(ĥ) = Φ, orthogonality E[ĥ(h−ĥ)ᴴ] = 0 and the induced power
    /// split E‖h‖² = E‖ĥ‖² + E‖h−ĥ‖².
    #[test]
    fn estimator_second_order_statistics() {
        let n = 2;
        let c = corr(n, 0.5, 1.0);
        let sq = crate::linalg::hermitian_sqrt(&c);
        let book = PilotBook::orthogonal(2, 1, 0.5).unwrap();
        let noise = 0.3;
        let stats = mmse_statistics(&[Some(&c)], &book, 0, noise).unwrap();
        let mut rng = substream(34, &[0]);
        let trials = 100_000;
        let mut cov_est = CMat::zeros(n, n);
        let mut cross = CMat::zeros(n, n);
        let (mut p_h, mut p_est, mut p_err) = (0.0, 0.0, 0.0);
        for _ in 0..trials {
            let h = crate::channels::draw_ue_channel(&sq, &mut rng);
            let obs = ls_observation(&[Some(h.clone())], &book, 0, noise, &mut rng);
            let est = mmse_estimate(&obs, &stats, &book, 0);
            let err = &h - &est;
            cov_est += &est * est.adjoint();
            cross += &est * err.adjoint();
            p_h += h.norm_squared();
            p_est += est.norm_squared();
            p_err += err.norm_squared();
        }
        cov_est /= cr(trials as f64);
        cross /= cr(trials as f64);
        assert!(rel_frobenius_err(&cov_est, &stats.phi) < 0.02);
        assert!(cross.norm() / stats.phi.norm() < 0.02);
        assert!((p_est + p_err - p_h).abs() / p_h < 0.02);
    }

    #[test]
    fn estimate_power_monotone_in_pilot_power() {
        let c = corr(3, -0.4, 1e-7);
        let noise = 1e-13;
        let mut last = 0.0;
        for eta in [1e-6, 1e-5, 1e-4, 1e-3, 1e-2] {
            let book = PilotBook::orthogonal(2, 1, eta).unwrap();
            let stats = mmse_statistics(&[Some(&c)], &book, 0, noise).unwrap();
            assert!(stats.tr_phi >= last - 1e-18);
            last = stats.tr_phi;
        }
    }
}
