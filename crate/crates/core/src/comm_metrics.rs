//! Downlink user rates: the closed-form use-and-then-forget SINR under MRT
//! (including the long-term sensing-interference covariances) and an
//! independent Monte Carlo moment oracle used to validate it.

use nalgebra::Vector3;
use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::channels::{CorrelationSet, UlaGeometry};
use crate::config::SystemConfig;
use crate::estimation::{estimate_all, EstimateSet, PilotBook};
use crate::linalg::{cr, trace_product, trace_product_re, CMat, CVec, C64};
use crate::power::PowerAllocation;
use crate::precoding::{mrt_precoder, sensing_precoder, sensing_precoder_angles};
use crate::scenario::AssociationMaps;
use crate::{Result, SimError};
use rand_distr::StandardNormal;

/// Long-term covariances W of the probing beams, per (entity, AP); the
/// entity is a sensing region (detection) or a target (tracking).
#[derive(Debug, Clone)]
pub struct SensingInterferenceMap {
    /// Indexed `[entity][ap]`; present where the AP may probe the entity.
    pub w: Vec<Vec<Option<CMat>>>,
}

/// E[w₀·w₀ᴴ] over the cells a region's scan visits, by Monte Carlo over
/// the schedule.
pub fn sensing_interference_detection<R: Rng>(
    geom: &UlaGeometry,
    ap_pos: &Vector3<f64>,
    schedule: &[Vector3<f64>],
    num_mc: usize,
    raw_steering: bool,
    rng: &mut R,
) -> CMat {
    assert!(num_mc >= 1 && !schedule.is_empty());
    let n = geom.num_antennas;
    let mut acc = CMat::zeros(n, n);
    for _ in 0..num_mc {
        let cell = &schedule[rng.random_range(0..schedule.len())];
        let w = sensing_precoder(geom, ap_pos, cell, raw_steering);
        acc += &w * w.adjoint();
    }
    acc / cr(num_mc as f64)
}

/// Samples one probing beam under the angle-estimation error model
/// (first-order phase perturbation of the steering vector).
pub fn sample_tracking_beam<R: Rng>(
    geom: &UlaGeometry,
    az: f64,
    el: f64,
    sigma_eps: f64,
    raw_steering: bool,
    rng: &mut R,
) -> CVec {
    let w = crate::channels::perturbed_steering_vector(
        geom,
        az,
        el,
        sigma_eps * rng.sample::<f64, _>(StandardNormal),
        sigma_eps * rng.sample::<f64, _>(StandardNormal),
    );
    if raw_steering {
        w
    } else {
        let n = geom.num_antennas as f64;
        w / cr(n.sqrt())
    }
}

/// E[w₀(p̂)·w₀(p̂)ᴴ] over the angle-estimation error distribution at a
/// known target position (nested expectation with a degenerate outer law).
pub fn sensing_interference_tracking<R: Rng>(
    geom: &UlaGeometry,
    ap_pos: &Vector3<f64>,
    target: &Vector3<f64>,
    sigma_eps: f64,
    num_mc: usize,
    raw_steering: bool,
    rng: &mut R,
) -> CMat {
    assert!(num_mc >= 1);
    let n = geom.num_antennas;
    let (az, el) = crate::channels::angles_to(ap_pos, target);
    let mut acc = CMat::zeros(n, n);
    for _ in 0..num_mc {
        let w = sample_tracking_beam(geom, az, el, sigma_eps, raw_steering, rng);
        acc += &w * w.adjoint();
    }
    acc / cr(num_mc as f64)
}

/// SINR term breakdown for one UE (all terms in watt-equivalents).
#[derive(Debug, Clone, Copy)]
pub struct SinrEntry {
    pub ue: usize,
    pub gamma: f64,
    pub rate_bps: f64,
    /// Coherent useful power A.
    pub useful: f64,
    /// Beamforming-uncertainty power B.
    pub uncertainty: f64,
    /// Multi-user interference C (incoherent + pilot-coherent parts).
    pub multiuser: f64,
    /// Sensing-beam interference D.
    pub sensing: f64,
    pub noise: f64,
}

impl SinrEntry {
    fn from_terms(
        ue: usize,
        useful: f64,
        uncertainty: f64,
        multiuser: f64,
        sensing: f64,
        noise: f64,
        config: &SystemConfig,
    ) -> Self {
        let gamma = if useful > 0.0 {
            useful / (uncertainty + multiuser + sensing + noise)
        } else {
            0.0
        };
        Self {
            ue,
            gamma,
            rate_bps: achievable_rate(gamma, config),
            useful,
            uncertainty,
            multiuser,
            sensing,
            noise,
        }
    }
}

/// Per-UE SINR report with CSV serialization.
#[derive(Debug, Clone, Default)]
pub struct SinrReport {
    pub entries: Vec<SinrEntry>,
}

impl SinrReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("ue_id,gamma_linear,rate_bps,A,B,C,D,noise\n");
        for e in &self.entries {
            out.push_str(&format!(
                "{},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e}\n",
                e.ue, e.gamma, e.rate_bps, e.useful, e.uncertainty, e.multiuser, e.sensing, e.noise
            ));
        }
        out
    }

    pub fn min_gamma(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| e.gamma)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Everything the closed form needs for one deployment.
pub struct SinrContext<'a> {
    pub config: &'a SystemConfig,
    pub corr: &'a CorrelationSet,
    pub estimates: &'a EstimateSet,
    pub book: &'a PilotBook,
    pub assoc: &'a AssociationMaps,
    pub w_map: &'a SensingInterferenceMap,
}

/// Closed-form use-and-then-forget SINR for UE k under MRT.
pub fn closed_form_sinr(
    ctx: &SinrContext,
    alloc: &PowerAllocation,
    k: usize,
) -> Result<SinrEntry> {
    let noise = ctx.config.noise_power_w();
    let num_ues = ctx.assoc.serving_aps_of_ue.len();

    // Coherent useful power: |Σ_m √(η·trΦ)|².
    let mut amp = 0.0;
    for &m in &ctx.assoc.serving_aps_of_ue[k] {
        let st = ctx.estimates.get(k, m)?;
        if st.tr_phi <= 0.0 {
            return Err(SimError::Numerical(format!(
                "undefined statistics: tr(Phi) = 0 for UE {k}, AP {m}"
            )));
        }
        amp += (alloc.eta(k, m) * st.tr_phi).sqrt();
    }
    let useful = amp * amp;

    // Beam-uncertainty (own j = k terms) and incoherent multi-user power.
    let mut uncertainty = 0.0;
    let mut multiuser = 0.0;
    for j in 0..num_ues {
        for &m in &ctx.assoc.serving_aps_of_ue[j] {
            let eta = alloc.eta(j, m);
            if eta == 0.0 {
                continue;
            }
            let st = ctx.estimates.get(j, m)?;
            if st.tr_phi <= 0.0 {
                return Err(SimError::Numerical(format!(
                    "undefined statistics: tr(Phi) = 0 for UE {j}, AP {m}"
                )));
            }
            let c_k = ctx.corr.corr(k, m)?;
            let term = eta * trace_product_re(c_k, &st.phi) / st.tr_phi;
            if j == k {
                uncertainty += term;
            } else {
                multiuser += term;
            }
        }
    }

    // Pilot-coherent contamination.
    for j in 0..num_ues {
        if j == k {
            continue;
        }
        let cross = ctx.book.cross(j, k);
        if cross.norm() == 0.0 {
            continue;
        }
        let mut acc = C64::new(0.0, 0.0);
        for &m in &ctx.assoc.serving_aps_of_ue[j] {
            let eta = alloc.eta(j, m);
            if eta == 0.0 {
                continue;
            }
            let st = ctx.estimates.get(j, m)?;
            let c_k = ctx.corr.corr(k, m)?;
            acc += trace_product(c_k, &st.lambda) * cr(eta.sqrt() / st.tr_phi.sqrt());
        }
        multiuser += (cross * acc).norm_sqr();
    }

    // Long-term sensing interference.
    let mut sensing = 0.0;
    for e in 0..alloc.num_entities() {
        for m in 0..ctx.assoc.ues_of_ap.len() {
            let mu = alloc.mu(e, m);
            if mu == 0.0 {
                continue;
            }
            let w = ctx.w_map.w[e][m].as_ref().ok_or_else(|| {
                SimError::Dimension(format!("missing W map for entity {e}, AP {m}"))
            })?;
            let c_k = ctx.corr.corr(k, m)?;
            sensing += mu * trace_product_re(c_k, w);
        }
    }

    Ok(SinrEntry::from_terms(
        k,
        useful,
        uncertainty,
        multiuser,
        sensing,
        noise,
        ctx.config,
    ))
}

pub fn closed_form_report(ctx: &SinrContext, alloc: &PowerAllocation) -> Result<SinrReport> {
    let entries = (0..ctx.assoc.serving_aps_of_ue.len())
        .map(|k| closed_form_sinr(ctx, alloc, k))
        .collect::<Result<Vec<_>>>()?;
    Ok(SinrReport { entries })
}

/// Draws one probing beam consistent with the long-term distribution the
/// W maps average over.
pub type BeamSampler<'a> = dyn Fn(usize, usize, &mut ChaCha12Rng) -> CVec + 'a;

/// Monte Carlo moment oracle for the use-and-then-forget decomposition:
/// every term of the closed form is re-estimated from raw channel,
/// estimate and beam draws.
pub fn empirical_sinr(
    ctx: &SinrContext,
    alloc: &PowerAllocation,
    k: usize,
    beam_sampler: &BeamSampler,
    num_blocks: usize,
    rng: &mut ChaCha12Rng,
) -> Result<SinrEntry> {
    assert!(num_blocks >= 1000, "oracle needs at least 1e3 blocks");
    let noise = ctx.config.noise_power_w();
    let num_ues = ctx.assoc.serving_aps_of_ue.len();
    let num_aps = ctx.assoc.ues_of_ap.len();

    let mut mean_own = C64::new(0.0, 0.0);
    let mut pow_own = 0.0;
    let mut pow_cross = 0.0;
    let mut pow_sense = 0.0;

    for _ in 0..num_blocks {
        // Channels of every UE at every transmit AP, then the pilot phase.
        let mut h = vec![vec![None; num_aps]; num_ues];
        for (j, row) in h.iter_mut().enumerate() {
            for (m, slot) in row.iter_mut().enumerate() {
                if let Some(sq) = &ctx.corr.ue_ap_sqrt[j][m] {
                    *slot = Some(crate::channels::draw_ue_channel(sq, rng));
                }
            }
        }
        let est = estimate_all(&h, ctx.estimates, ctx.book, noise, rng);

        for j in 0..num_ues {
            let mut g = C64::new(0.0, 0.0);
            for &m in &ctx.assoc.serving_aps_of_ue[j] {
                let eta = alloc.eta(j, m);
                if eta == 0.0 {
                    continue;
                }
                let st = ctx.estimates.get(j, m)?;
                let w = mrt_precoder(est[j][m].as_ref().unwrap(), st.tr_phi)?;
                let h_k = h[k][m].as_ref().unwrap();
                g += h_k.dotc(&w) * cr(eta.sqrt());
            }
            if j == k {
                mean_own += g;
                pow_own += g.norm_sqr();
            } else {
                pow_cross += g.norm_sqr();
            }
        }

        for e in 0..alloc.num_entities() {
            for m in 0..num_aps {
                let mu = alloc.mu(e, m);
                if mu == 0.0 {
                    continue;
                }
                let w0 = beam_sampler(e, m, rng);
                let h_k = h[k][m].as_ref().unwrap();
                pow_sense += mu * h_k.dotc(&w0).norm_sqr();
            }
        }
    }

    let n = num_blocks as f64;
    mean_own /= cr(n);
    let useful = mean_own.norm_sqr();
    let uncertainty = (pow_own / n - useful).max(0.0);
    let multiuser = pow_cross / n;
    let sensing = pow_sense / n;
    Ok(SinrEntry::from_terms(
        k,
        useful,
        uncertainty,
        multiuser,
        sensing,
        noise,
        ctx.config,
    ))
}

/// Ergodic-rate lower bound R = (τ_d/τ_c)·B·log₂(1+γ).
pub fn achievable_rate(gamma: f64, config: &SystemConfig) -> f64 {
    assert!(gamma >= 0.0);
    config.frame.data_len as f64 / config.frame.coherence_block as f64
        * config.frame.bandwidth_hz
        * (1.0 + gamma).log2()
}
