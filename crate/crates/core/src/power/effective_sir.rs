//! Effective sensing SIR as quadratic forms of the per-AP amplitude
//! coefficients: the tracking-phase signal and interference powers become
//! b_iᵀ·F̄·b_i and b_iᵀ·F̃·b_i, which are convex for uncorrelated RCS and
//! drive both the SCA linearization and the max-min optimizer.

use nalgebra::{DMatrix, DVector};

use crate::channels::TargetLink;
use crate::linalg::{cr, CMat, C64};
use crate::power::PowerAllocation;
use crate::{Result, SimError};

/// Layout of one transmit AP's slice of the global amplitude vector b:
/// first the √η entries of its served UEs, then the √μ entries of its
/// tracked targets, in association order.
#[derive(Debug, Clone)]
pub struct ApBlock {
    /// Global AP index.
    pub ap: usize,
    /// Start offset in the global vector.
    pub offset: usize,
    pub ues: Vec<usize>,
    pub targets: Vec<usize>,
}

impl ApBlock {
    pub fn len(&self) -> usize {
        self.ues.len() + self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Quadratic-form model of the per-target effective SIR.
#[derive(Debug, Clone)]
pub struct EffectiveSirModel {
    pub blocks: Vec<ApBlock>,
    pub dim: usize,
    pub num_targets: usize,
    /// F̄_{l,i}: own-target quadratic form per (target, transmit block).
    pub f_own: Vec<Vec<CMat>>,
    /// F̃_{l,i}: interfering-targets quadratic form.
    pub f_int: Vec<Vec<CMat>>,
}

/// Builds the b-vector layout from association sets.
pub fn build_blocks(
    tx_list: &[usize],
    ues_of_ap: &[Vec<usize>],
    targets_of_tx_ap: &[Vec<usize>],
) -> Vec<ApBlock> {
    let mut blocks = Vec::with_capacity(tx_list.len());
    let mut offset = 0;
    for &m in tx_list {
        let block = ApBlock {
            ap: m,
            offset,
            ues: ues_of_ap[m].clone(),
            targets: targets_of_tx_ap[m].clone(),
        };
        offset += block.len();
        blocks.push(block);
    }
    blocks
}

const DIAG_TOL: f64 = 1e-9;

/// Assembles the F̄/F̃ forms from the per-block beam matrices
/// B_i = [Ω_i, Ω₀_i], the matching symbol matrices X_i (block length × τ_s),
/// the reflection geometry and the RCS covariances. Off-diagonal RCS
/// correlation is rejected: convexity of the forms needs uncorrelated RCS.
///
/// `links[l][r][i]` and `rcs[l][r]` cover every (target l, receive AP r,
/// transmit block i) triple; `rx_sets[l]` lists the receive APs fused for
/// target l (indices into the r axis).
pub fn build_effective_sir(
    blocks: Vec<ApBlock>,
    beams: &[CMat],
    symbols: &[CMat],
    links: &[Vec<Vec<TargetLink>>],
    rcs: &[Vec<CMat>],
    rx_sets: &[Vec<usize>],
    tau_s: usize,
) -> Result<EffectiveSirModel> {
    let num_targets = links.len();
    let num_blocks = blocks.len();
    for per_rx in rcs {
        for r in per_rx {
            for i in 0..r.nrows() {
                for j in 0..r.ncols() {
                    if i != j && r[(i, j)].norm() > DIAG_TOL * r[(i, i)].norm().max(1e-300) {
                        return Err(SimError::Config(
                            "non-diagonal RCS covariance: the effective-SIR forms are only \
                             convex for uncorrelated RCS"
                                .into(),
                        ));
                    }
                }
            }
        }
    }
    let dim = blocks.last().map(|b| b.offset + b.len()).unwrap_or(0);

    // Per (target, block) symbol-weighted beam kernel:
    // K_{l,i} = diag(u*)·(conj(X)·Xᵀ)·diag(u), u_c = a_txᴴ·w_c.
    // Then F_{l,m,i,i} = [R_{l,m}]_{ii}·β_{l,m,i}·N·K_{l,i} because the
    // receive steering only contributes ‖a_rx‖² = N.
    let mut kernels: Vec<Vec<CMat>> = Vec::with_capacity(num_targets);
    for l in 0..num_targets {
        let mut per_block = Vec::with_capacity(num_blocks);
        for (i, block) in blocks.iter().enumerate() {
            let n_i = block.len();
            if n_i == 0 {
                per_block.push(CMat::zeros(0, 0));
                continue;
            }
            let x = &symbols[i];
            debug_assert_eq!(x.nrows(), n_i);
            debug_assert!(x.ncols() >= tau_s);
            let a_tx = &links[l][0][i].a_tx;
            let u: Vec<C64> = (0..n_i)
                .map(|c| a_tx.dotc(&beams[i].column(c).into_owned()))
                .collect();
            let mut kernel = CMat::zeros(n_i, n_i);
            for c in 0..n_i {
                for cp in 0..n_i {
                    let mut sym = C64::new(0.0, 0.0);
                    for t in 0..tau_s {
                        sym += x[(c, t)].conj() * x[(cp, t)];
                    }
                    kernel[(c, cp)] = u[c].conj() * u[cp] * sym;
                }
            }
            per_block.push(kernel);
        }
        kernels.push(per_block);
    }

    let n_ant = links[0][0][0].a_rx.len() as f64;
    let mut f_own = vec![Vec::with_capacity(num_blocks); num_targets];
    let mut f_int = vec![Vec::with_capacity(num_blocks); num_targets];
    for l in 0..num_targets {
        for (i, block) in blocks.iter().enumerate() {
            let n_i = block.len();
            let mut own = CMat::zeros(n_i, n_i);
            let mut int = CMat::zeros(n_i, n_i);
            for &r in &rx_sets[l] {
                for lp in 0..num_targets {
                    let weight =
                        rcs[lp][r][(i, i)].re * links[lp][r][i].beta * n_ant;
                    if weight == 0.0 || n_i == 0 {
                        continue;
                    }
                    let contribution = &kernels[lp][i] * cr(weight);
                    if lp == l {
                        own += &contribution;
                    } else {
                        int += &contribution;
                    }
                }
            }
            f_own[l].push(own);
            f_int[l].push(int);
        }
    }

    Ok(EffectiveSirModel {
        blocks,
        dim,
        num_targets,
        f_own,
        f_int,
    })
}

impl EffectiveSirModel {
    /// Global amplitude vector from a power allocation (entries √η, √μ).
    pub fn b_from_alloc(&self, alloc: &PowerAllocation) -> DVector<f64> {
        let mut b = DVector::zeros(self.dim);
        for block in &self.blocks {
            let mut idx = block.offset;
            for &k in &block.ues {
                b[idx] = alloc.eta(k, block.ap).sqrt();
                idx += 1;
            }
            for &l in &block.targets {
                b[idx] = alloc.mu(l, block.ap).sqrt();
                idx += 1;
            }
        }
        b
    }

    /// Power allocation from a global amplitude vector.
    pub fn alloc_from_b(
        &self,
        b: &DVector<f64>,
        num_ues: usize,
        num_entities: usize,
        num_aps: usize,
    ) -> PowerAllocation {
        let mut alloc = PowerAllocation::zeros(num_ues, num_entities, num_aps);
        for block in &self.blocks {
            let mut idx = block.offset;
            for &k in &block.ues {
                alloc.set_eta(k, block.ap, b[idx] * b[idx]);
                idx += 1;
            }
            for &l in &block.targets {
                alloc.set_mu(l, block.ap, b[idx] * b[idx]);
                idx += 1;
            }
        }
        alloc
    }

    fn quad(&self, forms: &[CMat], b: &DVector<f64>) -> f64 {
        let mut acc = 0.0;
        for (block, f) in self.blocks.iter().zip(forms) {
            let n_i = block.len();
            for r in 0..n_i {
                for c in 0..n_i {
                    acc += b[block.offset + r] * f[(r, c)].re * b[block.offset + c];
                }
            }
        }
        acc
    }

    /// Ā_l(b): own-target whitening-free echo power.
    pub fn numerator(&self, l: usize, b: &DVector<f64>) -> f64 {
        self.quad(&self.f_own[l], b)
    }

    /// B̄_l(b): other-target interference power.
    pub fn denominator(&self, l: usize, b: &DVector<f64>) -> f64 {
        self.quad(&self.f_int[l], b)
    }

    /// Real block-diagonal Hessian 2·Σ P_iᵀ·Re{F}·P_i of either form.
    pub fn hessian(&self, l: usize, own: bool) -> DMatrix<f64> {
        let forms = if own { &self.f_own[l] } else { &self.f_int[l] };
        let mut h = DMatrix::zeros(self.dim, self.dim);
        for (block, f) in self.blocks.iter().zip(forms) {
            for r in 0..block.len() {
                for c in 0..block.len() {
                    h[(block.offset + r, block.offset + c)] = 2.0 * f[(r, c)].re;
                }
            }
        }
        // Re{F} of a Hermitian form is symmetric; enforce against rounding.
        for r in 0..self.dim {
            for c in 0..r {
                let v = 0.5 * (h[(r, c)] + h[(c, r)]);
                h[(r, c)] = v;
                h[(c, r)] = v;
            }
        }
        h
    }
}

/// γ̄_l = Ā_l/B̄_l per target; a zero denominator maps to +∞.
pub fn effective_sir(model: &EffectiveSirModel, b: &DVector<f64>) -> Vec<f64> {
    (0..model.num_targets)
        .map(|l| {
            let den = model.denominator(l, b);
            if den <= 0.0 {
                f64::INFINITY
            } else {
                model.numerator(l, b) / den
            }
        })
        .collect()
}

/// Ā_l(b) convenience wrapper.
pub fn numerator_value(model: &EffectiveSirModel, l: usize, b: &DVector<f64>) -> f64 {
    model.numerator(l, b)
}

/// ∇Ā_l(b) = 2·(Σ P_iᵀ·Re{F̄_{l,i}}·P_i)·b.
pub fn sca_gradient(model: &EffectiveSirModel, l: usize, b: &DVector<f64>) -> DVector<f64> {
    let mut g = DVector::zeros(model.dim);
    for (block, f) in model.blocks.iter().zip(&model.f_own[l]) {
        let n_i = block.len();
        for r in 0..n_i {
            let mut acc = 0.0;
            for c in 0..n_i {
                // Use the symmetrized real part so the gradient matches
                // the quadratic b·Re{F}·b exactly.
                acc += (f[(r, c)].re + f[(c, r)].re) * b[block.offset + c];
            }
            g[block.offset + r] = acc;
        }
    }
    g
}

/// First-order lower bound of Ā_l at an expansion point.
#[derive(Debug, Clone)]
pub struct SirLinearization {
    pub value_at_prev: f64,
    pub gradient: DVector<f64>,
    pub b_prev: DVector<f64>,
}

impl SirLinearization {
    /// Ã_l(b, b_prev) = Ā(b_prev) + ∇Ā(b_prev)ᵀ(b − b_prev) ≤ Ā(b).
    pub fn evaluate(&self, b: &DVector<f64>) -> f64 {
        self.value_at_prev + self.gradient.dot(&(b - &self.b_prev))
    }

    /// Constant part when written as c₀ + gᵀb.
    pub fn constant(&self) -> f64 {
        self.value_at_prev - self.gradient.dot(&self.b_prev)
    }
}

pub fn sca_linearize(model: &EffectiveSirModel, l: usize, b_prev: &DVector<f64>) -> SirLinearization {
    SirLinearization {
        value_at_prev: model.numerator(l, b_prev),
        gradient: sca_gradient(model, l, b_prev),
        b_prev: b_prev.clone(),
    }
}
