//! Max-min power optimization: the per-iteration convex feasibility
//! problem (second-order cone form, solved with Clarabel) and the outer
//! bisection-plus-SCA loop.
//!
//! Constraints: C1 nonnegativity, C2 per-AP amplitude budgets
//! ‖b_i‖² ≤ P_m, C3 linearized sensing QoS γ̄₀·B̄_l(b) ≤ Ã_l(b, b_prev)
//! (a restriction of the true constraint because Ã ≤ Ā), and C4 the
//! second-order-cone form of the per-UE rate target.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use nalgebra::{DMatrix, DVector};

use crate::channels::CorrelationSet;
use crate::comm_metrics::SensingInterferenceMap;
use crate::estimation::{EstimateSet, PilotBook};
use crate::linalg::{trace_product, C64};
use crate::power::effective_sir::{
    effective_sir, sca_linearize, EffectiveSirModel, SirLinearization,
};
use crate::scenario::AssociationMaps;
use crate::{Result, SimError};

/// One row of a conic constraint: s_row = rhs − Σ coeff·x ∈ cone.
struct ConicBuilder {
    num_vars: usize,
    triplets: Vec<(usize, usize, f64)>,
    rhs: Vec<f64>,
    cones: Vec<SupportedConeT<f64>>,
}

impl ConicBuilder {
    fn new(num_vars: usize) -> Self {
        Self {
            num_vars,
            triplets: Vec::new(),
            rhs: Vec::new(),
            cones: Vec::new(),
        }
    }

    /// Appends s = rhs + Σ coeff·x as one row (the builder negates into A).
    fn row(&mut self, coeffs: &[(usize, f64)], rhs: f64) {
        let r = self.rhs.len();
        for &(c, v) in coeffs {
            if v != 0.0 {
                self.triplets.push((r, c, -v));
            }
        }
        self.rhs.push(rhs);
    }

    fn cone(&mut self, cone: SupportedConeT<f64>) {
        self.cones.push(cone);
    }

    fn matrices(&self) -> (CscMatrix<f64>, Vec<f64>) {
        let m = self.rhs.len();
        let n = self.num_vars;
        let mut by_col: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for &(r, c, v) in &self.triplets {
            by_col[c].push((r, v));
        }
        let mut colptr = Vec::with_capacity(n + 1);
        let mut rowval = Vec::new();
        let mut nzval = Vec::new();
        colptr.push(0);
        for col in by_col.iter_mut() {
            col.sort_by_key(|&(r, _)| r);
            for &(r, v) in col.iter() {
                rowval.push(r);
                nzval.push(v);
            }
            colptr.push(rowval.len());
        }
        (CscMatrix::new(m, n, colptr, rowval, nzval), self.rhs.clone())
    }
}

fn diag_csc(n: usize, value: f64) -> CscMatrix<f64> {
    CscMatrix::new(n, n, (0..=n).collect(), (0..n).collect(), vec![value; n])
}

fn zero_csc(n: usize) -> CscMatrix<f64> {
    CscMatrix::new(n, n, vec![0; n + 1], vec![], vec![])
}

/// Coefficients of the per-UE rate SOC (C4), prepared once per deployment.
#[derive(Debug, Clone)]
pub struct C4Statistics {
    pub num_ues: usize,
    /// Useful-signal coefficients per UE: (b index, √trΦ).
    pub useful: Vec<Vec<(usize, f64)>>,
    /// Pilot-coherent contamination rows: per UE, one complex row per
    /// co-pilot UE j (including j = k with unit cross-correlation).
    pub coherent: Vec<Vec<Vec<(usize, C64)>>>,
    /// Incoherent interference rows: one row per (j, serving AP).
    pub incoherent: Vec<Vec<(usize, f64)>>,
    /// Sensing interference rows: one row per (AP, probed target).
    pub sensing: Vec<Vec<(usize, f64)>>,
    pub sigma_z: f64,
}

/// Builds the C4 coefficients from the closed-form SINR statistics.
pub fn build_c4_statistics(
    model: &EffectiveSirModel,
    corr: &CorrelationSet,
    estimates: &EstimateSet,
    book: &PilotBook,
    assoc: &AssociationMaps,
    w_map: &SensingInterferenceMap,
    noise_var: f64,
) -> Result<C4Statistics> {
    let num_ues = assoc.serving_aps_of_ue.len();
    // b-vector index of the (AP, UE) and (AP, target) amplitude entries.
    let mut ue_index = std::collections::HashMap::new();
    let mut target_index = std::collections::HashMap::new();
    for block in &model.blocks {
        let mut idx = block.offset;
        for &k in &block.ues {
            ue_index.insert((block.ap, k), idx);
            idx += 1;
        }
        for &l in &block.targets {
            target_index.insert((block.ap, l), idx);
            idx += 1;
        }
    }

    let mut useful = vec![Vec::new(); num_ues];
    let mut coherent = vec![Vec::new(); num_ues];
    let mut incoherent = vec![Vec::new(); num_ues];
    let mut sensing = vec![Vec::new(); num_ues];
    for k in 0..num_ues {
        for &m in &assoc.serving_aps_of_ue[k] {
            let st = estimates.get(k, m)?;
            if st.tr_phi <= 0.0 {
                return Err(SimError::Numerical(format!(
                    "tr(Phi) = 0 for UE {k}, AP {m}"
                )));
            }
            useful[k].push((ue_index[&(m, k)], st.tr_phi.sqrt()));
        }
        for j in 0..num_ues {
            let cross = book.cross(j, k);
            if cross.norm() > 0.0 {
                let mut row = Vec::new();
                for &m in &assoc.serving_aps_of_ue[j] {
                    let st = estimates.get(j, m)?;
                    let c_k = corr.corr(k, m)?;
                    let t = trace_product(c_k, &st.lambda) / C64::new(st.tr_phi.sqrt(), 0.0);
                    row.push((ue_index[&(m, j)], cross * t));
                }
                coherent[k].push(row);
            }
            for &m in &assoc.serving_aps_of_ue[j] {
                let st = estimates.get(j, m)?;
                let c_k = corr.corr(k, m)?;
                let coef =
                    (crate::linalg::trace_product_re(c_k, &st.phi) / st.tr_phi).max(0.0);
                incoherent[k].push((ue_index[&(m, j)], coef.sqrt()));
            }
        }
        for block in &model.blocks {
            for &l in &block.targets {
                let w = w_map.w[l][block.ap].as_ref().ok_or_else(|| {
                    SimError::Dimension(format!("missing W map for target {l}, AP {}", block.ap))
                })?;
                let c_k = corr.corr(k, block.ap)?;
                let coef = crate::linalg::trace_product_re(c_k, w).max(0.0);
                sensing[k].push((target_index[&(block.ap, l)], coef.sqrt()));
            }
        }
    }
    Ok(C4Statistics {
        num_ues,
        useful,
        coherent,
        incoherent,
        sensing,
        sigma_z: noise_var.sqrt(),
    })
}

/// Square-root factor rows of γ̄₀·B̄_l for the C3 rotated-cone embedding.
fn interference_factor(model: &EffectiveSirModel, l: usize, gamma_bar0: f64) -> DMatrix<f64> {
    let h = model.hessian(l, false) * (0.5 * gamma_bar0);
    let eig = nalgebra::SymmetricEigen::new(h);
    let keep: Vec<usize> = (0..eig.eigenvalues.len())
        .filter(|&i| eig.eigenvalues[i] > 1e-14 * eig.eigenvalues.max().max(1e-300))
        .collect();
    let mut v = DMatrix::zeros(keep.len(), model.dim);
    for (row, &i) in keep.iter().enumerate() {
        let scale = eig.eigenvalues[i].sqrt();
        for c in 0..model.dim {
            v[(row, c)] = scale * eig.eigenvectors[(c, i)];
        }
    }
    v
}

#[derive(Debug, Clone)]
pub enum FeasibilityOutcome {
    Feasible(DVector<f64>),
    Infeasible,
}

fn run_solver(
    p: &CscMatrix<f64>,
    q: &[f64],
    builder: &ConicBuilder,
) -> Result<(SolverStatus, Vec<f64>)> {
    let (a, b) = builder.matrices();
    let settings = DefaultSettingsBuilder::default()
        .verbose(false)
        .max_iter(200)
        .build()
        .map_err(|e| SimError::Solver(format!("settings: {e:?}")))?;
    let mut solver = DefaultSolver::new(p, q, &a, &b, &builder.cones, settings)
        .map_err(|e| SimError::Solver(format!("setup: {e:?}")))?;
    solver.solve();
    Ok((solver.solution.status, solver.solution.x.clone()))
}

/// Adds C1 (b ≥ 0) and C2 (per-AP ‖b_i‖ ≤ √P_m) rows.
fn push_c1_c2(builder: &mut ConicBuilder, model: &EffectiveSirModel, ap_power: &[f64]) {
    let n = model.dim;
    for i in 0..n {
        builder.row(&[(i, 1.0)], 0.0);
    }
    builder.cone(SupportedConeT::NonnegativeConeT(n));
    for (block, &p) in model.blocks.iter().zip(ap_power) {
        if block.is_empty() {
            continue;
        }
        builder.row(&[], p.sqrt());
        for idx in block.offset..block.offset + block.len() {
            builder.row(&[(idx, 1.0)], 0.0);
        }
        builder.cone(SupportedConeT::SecondOrderConeT(block.len() + 1));
    }
}

/// Adds one linearized C3 constraint ‖V·b‖² ≤ Ã(b) as the standard SOC
/// embedding ‖[2Vb; Ã−1]‖ ≤ Ã+1. `slack_col` shifts Ã by −t.
fn push_c3(
    builder: &mut ConicBuilder,
    v: &DMatrix<f64>,
    lin: &SirLinearization,
    slack_col: Option<usize>,
) {
    let c0 = lin.constant();
    let mut head: Vec<(usize, f64)> = lin
        .gradient
        .iter()
        .enumerate()
        .filter(|(_, g)| **g != 0.0)
        .map(|(i, g)| (i, *g))
        .collect();
    if let Some(t) = slack_col {
        head.push((t, -1.0));
    }
    builder.row(&head, c0 + 1.0);
    for r in 0..v.nrows() {
        let coeffs: Vec<(usize, f64)> = (0..v.ncols())
            .filter(|&c| v[(r, c)] != 0.0)
            .map(|c| (c, 2.0 * v[(r, c)]))
            .collect();
        builder.row(&coeffs, 0.0);
    }
    builder.row(&head, c0 - 1.0);
    builder.cone(SupportedConeT::SecondOrderConeT(v.nrows() + 2));
}

/// Adds one C4 rate cone for UE k at SINR target γ.
fn push_c4(builder: &mut ConicBuilder, c4: &C4Statistics, k: usize, gamma: f64) {
    let scale = (1.0 + 1.0 / gamma).sqrt();
    let head: Vec<(usize, f64)> = c4.useful[k]
        .iter()
        .map(|&(i, coef)| (i, scale * coef))
        .collect();
    builder.row(&head, 0.0);
    let mut rows = 0;
    for row in &c4.coherent[k] {
        let re: Vec<(usize, f64)> = row.iter().map(|&(i, v)| (i, v.re)).collect();
        let im: Vec<(usize, f64)> = row.iter().map(|&(i, v)| (i, v.im)).collect();
        builder.row(&re, 0.0);
        builder.row(&im, 0.0);
        rows += 2;
    }
    for &(i, coef) in &c4.incoherent[k] {
        builder.row(&[(i, coef)], 0.0);
        rows += 1;
    }
    for &(i, coef) in &c4.sensing[k] {
        builder.row(&[(i, coef)], 0.0);
        rows += 1;
    }
    builder.row(&[], c4.sigma_z);
    rows += 1;
    builder.cone(SupportedConeT::SecondOrderConeT(rows + 1));
}

/// Solves the convex feasibility subproblem at a fixed rate target γ with
/// the sensing constraints linearized at `b_prev`. Returns a feasible
/// point (the proximal projection of `b_prev` onto the restricted set) or
/// an infeasibility verdict; solver breakdowns surface as errors.
pub fn solve_feasibility(
    model: &EffectiveSirModel,
    c4: Option<&C4Statistics>,
    ap_power: &[f64],
    gamma: f64,
    gamma_bar0: f64,
    linearizations: &[(usize, SirLinearization)],
    b_prev: &DVector<f64>,
) -> Result<FeasibilityOutcome> {
    let n = model.dim;
    let mut builder = ConicBuilder::new(n);
    push_c1_c2(&mut builder, model, ap_power);
    for (l, lin) in linearizations {
        let v = interference_factor(model, *l, gamma_bar0);
        push_c3(&mut builder, &v, lin, None);
    }
    if let Some(c4) = c4 {
        if gamma > 0.0 {
            for k in 0..c4.num_ues {
                push_c4(&mut builder, c4, k, gamma);
            }
        }
    }
    let p = diag_csc(n, 2.0);
    let q: Vec<f64> = b_prev.iter().map(|v| -2.0 * v).collect();
    let (status, x) = run_solver(&p, &q, &builder)?;
    match status {
        SolverStatus::Solved | SolverStatus::AlmostSolved => {
            Ok(FeasibilityOutcome::Feasible(DVector::from_vec(x)))
        }
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
            Ok(FeasibilityOutcome::Infeasible)
        }
        other => Err(SimError::Solver(format!(
            "feasibility subproblem ended with status {other:?}"
        ))),
    }
}

/// Searches for a point satisfying C1, C2 and the true sensing QoS
/// γ̄_l ≥ γ̄₀ by maximizing the worst C3 slack through SCA rounds.
/// Returns `None` when the slack converges below zero.
pub fn find_sensing_feasible(
    model: &EffectiveSirModel,
    ap_power: &[f64],
    gamma_bar0: f64,
    b_init: &DVector<f64>,
    max_iters: usize,
) -> Result<Option<DVector<f64>>> {
    let active: Vec<usize> = (0..model.num_targets)
        .filter(|&l| model.f_int[l].iter().any(|f| f.norm() > 0.0))
        .collect();
    let feasible = |b: &DVector<f64>| {
        effective_sir(model, b)
            .iter()
            .all(|&g| g >= gamma_bar0 * (1.0 - 1e-9))
    };
    if feasible(b_init) {
        return Ok(Some(b_init.clone()));
    }
    let n = model.dim;
    let t_col = n;
    let mut b = b_init.clone();
    let mut last_slack = f64::NEG_INFINITY;
    for _ in 0..max_iters {
        let mut builder = ConicBuilder::new(n + 1);
        // C1/C2 on the b part only.
        for i in 0..n {
            builder.row(&[(i, 1.0)], 0.0);
        }
        builder.cone(SupportedConeT::NonnegativeConeT(n));
        for (block, &p) in model.blocks.iter().zip(ap_power) {
            if block.is_empty() {
                continue;
            }
            builder.row(&[], p.sqrt());
            for idx in block.offset..block.offset + block.len() {
                builder.row(&[(idx, 1.0)], 0.0);
            }
            builder.cone(SupportedConeT::SecondOrderConeT(block.len() + 1));
        }
        for &l in &active {
            let lin = sca_linearize(model, l, &b);
            let v = interference_factor(model, l, gamma_bar0);
            push_c3(&mut builder, &v, &lin, Some(t_col));
        }
        let p = zero_csc(n + 1);
        let mut q = vec![0.0; n + 1];
        q[t_col] = -1.0;
        let (status, x) = run_solver(&p, &q, &builder)?;
        if !matches!(status, SolverStatus::Solved | SolverStatus::AlmostSolved) {
            return Ok(None);
        }
        let slack = x[t_col];
        b = DVector::from_iterator(n, x[..n].iter().cloned());
        if slack >= 0.0 && feasible(&b) {
            return Ok(Some(b));
        }
        if (slack - last_slack).abs() < 1e-9 * slack.abs().max(1.0) {
            return Ok(None);
        }
        last_slack = slack;
    }
    Ok(if feasible(&b) { Some(b) } else { None })
}

#[derive(Debug, Clone)]
pub struct OpcSettings {
    /// Bisection stopping width ε₁ on the linear SINR target.
    pub bisection_tol: f64,
    /// Relative-change threshold ε₂ of the inner SCA loop.
    pub sca_tol: f64,
    pub max_sca_iters: usize,
    pub max_bisection_iters: usize,
}

impl Default for OpcSettings {
    fn default() -> Self {
        Self {
            bisection_tol: 1e-3,
            sca_tol: 1e-4,
            max_sca_iters: 50,
            max_bisection_iters: 64,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OpcResult {
    pub b: DVector<f64>,
    /// Certified min-SINR target: the last feasible bisection point.
    pub gamma_star: f64,
    pub bisection_iters: usize,
    pub subproblem_solves: usize,
    pub final_gap: f64,
}

/// Outer bisection on the minimum-rate SINR target with an inner SCA loop
/// per candidate; the warm start carries across feasible updates. An inner
/// loop exceeding the iteration cap counts as infeasible (conservative).
pub fn opc_bisection(
    model: &EffectiveSirModel,
    c4: &C4Statistics,
    ap_power: &[f64],
    gamma_bar0: f64,
    bounds: (f64, f64),
    b0: &DVector<f64>,
    settings: &OpcSettings,
) -> Result<OpcResult> {
    let (mut lo, mut hi) = bounds;
    if hi < lo {
        return Err(SimError::Config(format!(
            "bisection bounds inverted: [{lo}, {hi}]"
        )));
    }
    let active: Vec<usize> = (0..model.num_targets)
        .filter(|&l| model.f_int[l].iter().any(|f| f.norm() > 0.0))
        .collect();
    let mut warm = b0.clone();
    let mut best = b0.clone();
    let mut iters = 0;
    let mut solves = 0;
    while hi - lo > settings.bisection_tol && iters < settings.max_bisection_iters {
        iters += 1;
        let gamma = 0.5 * (lo + hi);
        let mut b_prev = warm.clone();
        let mut accepted: Option<DVector<f64>> = None;
        let mut infeasible = false;
        for _ in 0..settings.max_sca_iters {
            let lins: Vec<(usize, SirLinearization)> = active
                .iter()
                .map(|&l| (l, sca_linearize(model, l, &b_prev)))
                .collect();
            solves += 1;
            match solve_feasibility(
                model,
                Some(c4),
                ap_power,
                gamma,
                gamma_bar0,
                &lins,
                &b_prev,
            )? {
                FeasibilityOutcome::Feasible(b) => {
                    let diff = (&b - &b_prev).norm_squared();
                    let scale = b.norm_squared().max(1e-300);
                    b_prev = b;
                    if diff / scale <= settings.sca_tol {
                        accepted = Some(b_prev.clone());
                        break;
                    }
                }
                FeasibilityOutcome::Infeasible => {
                    infeasible = true;
                    break;
                }
            }
        }
        match accepted {
            Some(b) => {
                lo = gamma;
                warm = b.clone();
                best = b;
            }
            None => {
                let _ = infeasible;
                hi = gamma;
            }
        }
    }
    Ok(OpcResult {
        b: best,
        gamma_star: lo,
        bisection_iters: iters,
        subproblem_solves: solves,
        final_gap: hi - lo,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::power::effective_sir::sca_linearize;

    /// A tiny hand-built model: two blocks of two entries each, two
    /// targets with explicit quadratic forms.
    fn toy_model() -> EffectiveSirModel {
        use crate::power::effective_sir::ApBlock;
        let blocks = vec![
            ApBlock {
                ap: 0,
                offset: 0,
                ues: vec![0],
                targets: vec![0],
            },
            ApBlock {
                ap: 1,
                offset: 2,
                ues: vec![0],
                targets: vec![1],
            },
        ];
        let eye = crate::linalg::CMat::identity(2, 2);
        let weak = crate::linalg::CMat::identity(2, 2) * crate::linalg::cr(0.1);
        EffectiveSirModel {
            blocks,
            dim: 4,
            num_targets: 2,
            f_own: vec![vec![eye.clone(), weak.clone()], vec![weak.clone(), eye.clone()]],
            f_int: vec![vec![weak.clone(), weak.clone()], vec![weak.clone(), weak]],
        }
    }

    #[test]
    fn c1_c2_projection_stays_in_budget() {
        let model = toy_model();
        let b_prev = DVector::from_element(4, 10.0); // far outside budgets
        let out = solve_feasibility(&model, None, &[1.0, 1.0], 0.0, 0.0, &[], &b_prev).unwrap();
        let FeasibilityOutcome::Feasible(b) = out else {
            panic!("unconstrained-by-C3/C4 problem must be feasible")
        };
        for block in &model.blocks {
            let norm2: f64 = (block.offset..block.offset + 2).map(|i| b[i] * b[i]).sum();
            assert!(norm2 <= 1.0 + 1e-6);
        }
        for v in b.iter() {
            assert!(*v >= -1e-9);
        }
    }

    #[test]
    fn c3_restriction_is_respected() {
        let model = toy_model();
        let b_prev = DVector::from_element(4, 0.5);
        let gamma_bar0 = 2.0;
        let lins: Vec<(usize, SirLinearization)> = (0..2)
            .map(|l| (l, sca_linearize(&model, l, &b_prev)))
            .collect();
        let out = solve_feasibility(
            &model,
            None,
            &[1.0, 1.0],
            0.0,
            gamma_bar0,
            &lins,
            &b_prev,
        )
        .unwrap();
        let FeasibilityOutcome::Feasible(b) = out else {
            panic!("toy C3 is satisfiable")
        };
        // The returned point satisfies the true constraint because the
        // linearization under-estimates the numerator.
        let sir = effective_sir(&model, &b);
        for &g in &sir {
            assert!(g >= gamma_bar0 * (1.0 - 1e-6), "sir {g}");
        }
    }

    #[test]
    fn impossible_qos_is_reported_infeasible() {
        let model = toy_model();
        // Own/interference forms are symmetric across targets, so a huge
        // γ̄₀ cannot be met by any b.
        let b0 = DVector::from_element(4, 0.1);
        let found = find_sensing_feasible(&model, &[1.0, 1.0], 1e6, &b0, 20).unwrap();
        assert!(found.is_none());
        let found = find_sensing_feasible(&model, &[1.0, 1.0], 0.5, &b0, 20).unwrap();
        assert!(found.is_some());
    }
}
