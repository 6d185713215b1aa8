//! NLL@K objective, analytic gradients through the link functions, and a
//! deterministic full-batch gradient-descent fitter for the parametric
//! families (contextual and not).
//!
//! Scalar families are optimized in raw (pre-link) space with a single
//! weight; contextual families carry one weight per feature. Observation
//! probabilities are clamped to [ε, 1−ε] before the log, and clamped
//! records contribute zero gradient.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::models::{
    base_d_log_prob_d_param, base_prob_view, link, link_deriv, link_inverse, BaseFamily, LinkKind,
    PositionBiasModel, PROB_FLOOR,
};
use crate::simulator::ImpressionRecord;

/// Families the gradient-descent fitter applies to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParametricFamily {
    Log,
    Exp,
    Prob,
    ContextualLog,
    ContextualExp,
    ContextualProb,
}

impl ParametricFamily {
    pub fn base(&self) -> BaseFamily {
        match self {
            Self::Log | Self::ContextualLog => BaseFamily::Log,
            Self::Exp | Self::ContextualExp => BaseFamily::Exp,
            Self::Prob | Self::ContextualProb => BaseFamily::Prob,
        }
    }

    pub fn is_contextual(&self) -> bool {
        matches!(
            self,
            Self::ContextualLog | Self::ContextualExp | Self::ContextualProb
        )
    }

    pub fn link_kind(&self) -> LinkKind {
        self.base().link_kind()
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Log => "log",
            Self::Exp => "exp",
            Self::Prob => "prob",
            Self::ContextualLog => "contextual-log",
            Self::ContextualExp => "contextual-exp",
            Self::ContextualProb => "contextual-prob",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "log" => Ok(Self::Log),
            "exp" => Ok(Self::Exp),
            "prob" => Ok(Self::Prob),
            "contextual-log" => Ok(Self::ContextualLog),
            "contextual-exp" => Ok(Self::ContextualExp),
            "contextual-prob" => Ok(Self::ContextualProb),
            other => Err(Error::Parse(format!("unknown parametric family {other:?}"))),
        }
    }

    /// Materializes the model implied by raw (pre-link) parameters.
    pub fn model_from_raw(&self, theta: &[f64]) -> Result<PositionBiasModel> {
        let kind = self.link_kind();
        match self {
            Self::Log => PositionBiasModel::log(link(theta[0], kind)),
            Self::Exp => PositionBiasModel::exp(link(theta[0], kind)),
            Self::Prob => PositionBiasModel::prob(link(theta[0], kind)),
            Self::ContextualLog => Ok(PositionBiasModel::ContextualLog {
                theta: theta.to_vec(),
            }),
            Self::ContextualExp => Ok(PositionBiasModel::ContextualExp {
                theta: theta.to_vec(),
            }),
            Self::ContextualProb => Ok(PositionBiasModel::ContextualProb {
                theta: theta.to_vec(),
            }),
        }
    }

    /// Raw-space starting point: the scalar parameter at link⁻¹(1)
    /// (ρ = α = 1, γ = 0.5), remaining contextual weights at zero.
    pub fn default_init(&self, dim: usize) -> Vec<f64> {
        let w0 = match self.link_kind() {
            LinkKind::Softplus => link_inverse(1.0, LinkKind::Softplus),
            LinkKind::Sigmoid => 0.0,
        };
        let mut theta = vec![0.0; dim];
        theta[0] = w0;
        theta
    }
}

/// Optimizer settings for the NLL@K fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub k_cutoff: u32,
    pub max_iters: u32,
    pub tol: f64,
    pub step_size: f64,
    pub seed: u64,
    pub init: Option<Vec<f64>>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            k_cutoff: 50,
            max_iters: 1000,
            tol: 1e-9,
            step_size: 0.5,
            seed: 0,
            init: None,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_cutoff < 1 {
            return Err(Error::Usage("k_cutoff must be >= 1".into()));
        }
        if self.max_iters < 1 {
            return Err(Error::Usage("max_iters must be >= 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Usage("tol must be positive".into()));
        }
        if !(self.step_size > 0.0) {
            return Err(Error::Usage("step_size must be positive".into()));
        }
        Ok(())
    }
}

/// Fitted model plus convergence diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub model: PositionBiasModel,
    pub final_nll: f64,
    pub iterations: u32,
    pub converged: bool,
    /// Times the ε-floor fired while computing the final NLL.
    pub clamp_events: u64,
}

// Aggregated (rank, views, non-views) triples for non-contextual models.
fn rank_counts(data: &[ImpressionRecord], k: u32) -> Vec<(u32, u64, u64)> {
    let mut counts: BTreeMap<u32, (u64, u64)> = BTreeMap::new();
    for rec in data {
        if rec.rank >= 1 && rec.rank <= k {
            let slot = counts.entry(rec.rank).or_insert((0, 0));
            if rec.viewed {
                slot.0 += 1;
            } else {
                slot.1 += 1;
            }
        }
    }
    counts.into_iter().map(|(r, (v, n))| (r, v, n)).collect()
}

fn observation_nll(p_view_raw: f64, viewed: bool) -> (f64, bool) {
    let p_view = p_view_raw.clamp(PROB_FLOOR, 1.0);
    let p_obs = if viewed { p_view } else { 1.0 - p_view };
    let floored = p_obs < PROB_FLOOR;
    let p = p_obs.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
    (-p.ln(), floored)
}

/// Mean negative log-likelihood over records at ranks <= k.
pub fn nll_at_k(model: &PositionBiasModel, data: &[ImpressionRecord], k: u32) -> Result<f64> {
    nll_at_k_with_clamps(model, data, k).map(|(nll, _)| nll)
}

/// As `nll_at_k`, also reporting how often the ε-floor fired.
pub fn nll_at_k_with_clamps(
    model: &PositionBiasModel,
    data: &[ImpressionRecord],
    k: u32,
) -> Result<(f64, u64)> {
    if k < 1 {
        return Err(Error::Usage("k must be >= 1".into()));
    }
    let mut total = 0.0;
    let mut n = 0u64;
    let mut clamps = 0u64;
    if model.is_contextual() {
        for rec in data {
            if rec.rank < 1 || rec.rank > k {
                continue;
            }
            let p = model.prob_view(rec.rank as u64, Some(&rec.context))?;
            let (term, floored) = observation_nll(p, rec.viewed);
            total += term;
            n += 1;
            clamps += floored as u64;
        }
    } else {
        for (rank, views, nonviews) in rank_counts(data, k) {
            let p = model.prob_view(rank as u64, None)?;
            let (term_v, fl_v) = observation_nll(p, true);
            let (term_n, fl_n) = observation_nll(p, false);
            total += views as f64 * term_v + nonviews as f64 * term_n;
            n += views + nonviews;
            clamps += views * fl_v as u64 + nonviews * fl_n as u64;
        }
    }
    if n == 0 {
        return Err(Error::Usage(format!("no records at ranks <= {k}")));
    }
    Ok((total / n as f64, clamps))
}

// d ln P(obs) / ds for one observation, zero on the clamp's flat region.
fn observation_d_log_d_param(base: BaseFamily, s: f64, rank: u64, viewed: bool) -> f64 {
    let p_raw = base_prob_view(base, s, rank);
    if p_raw <= PROB_FLOOR || p_raw >= 1.0 - PROB_FLOOR {
        return 0.0;
    }
    let dlnp = base_d_log_prob_d_param(base, s, rank);
    if viewed {
        dlnp
    } else {
        -p_raw * dlnp / (1.0 - p_raw)
    }
}

/// Analytic gradient of NLL@K in raw parameter space.
pub fn nll_gradient(
    family: ParametricFamily,
    theta: &[f64],
    data: &[ImpressionRecord],
    k: u32,
) -> Result<Vec<f64>> {
    let base = family.base();
    let kind = family.link_kind();
    let mut grad = vec![0.0; theta.len()];
    let mut n = 0u64;
    if family.is_contextual() {
        for rec in data {
            if rec.rank < 1 || rec.rank > k {
                continue;
            }
            let raw = rec.context.dot(theta)?;
            let s = link(raw, kind);
            let g = observation_d_log_d_param(base, s, rec.rank as u64, rec.viewed);
            let scale = g * link_deriv(raw, kind);
            for (gj, xj) in grad.iter_mut().zip(rec.context.values()) {
                *gj -= scale * xj;
            }
            n += 1;
        }
    } else {
        if theta.len() != 1 {
            return Err(Error::Usage(format!(
                "scalar family {} takes one raw parameter, got {}",
                family.name(),
                theta.len()
            )));
        }
        let raw = theta[0];
        let s = link(raw, kind);
        let lp = link_deriv(raw, kind);
        for (rank, views, nonviews) in rank_counts(data, k) {
            let gv = observation_d_log_d_param(base, s, rank as u64, true);
            let gn = observation_d_log_d_param(base, s, rank as u64, false);
            grad[0] -= (views as f64 * gv + nonviews as f64 * gn) * lp;
            n += views + nonviews;
        }
    }
    if n == 0 {
        return Err(Error::Usage(format!("no records at ranks <= {k}")));
    }
    for g in &mut grad {
        *g /= n as f64;
    }
    Ok(grad)
}

const MAX_HALVINGS: u32 = 30;

// Mean NLL for a scalar family from pre-aggregated rank counts; matches
// `nll_at_k` on the same data.
fn scalar_nll_from_counts(base: BaseFamily, s: f64, counts: &[(u32, u64, u64)]) -> (f64, u64) {
    let mut total = 0.0;
    let mut n = 0u64;
    for &(rank, views, nonviews) in counts {
        let p = base_prob_view(base, s, rank as u64);
        let (term_v, _) = observation_nll(p, true);
        let (term_n, _) = observation_nll(p, false);
        total += views as f64 * term_v + nonviews as f64 * term_n;
        n += views + nonviews;
    }
    (total / n as f64, n)
}

fn scalar_grad_from_counts(
    base: BaseFamily,
    kind: LinkKind,
    raw: f64,
    counts: &[(u32, u64, u64)],
) -> f64 {
    let s = link(raw, kind);
    let lp = link_deriv(raw, kind);
    let mut grad = 0.0;
    let mut n = 0u64;
    for &(rank, views, nonviews) in counts {
        let gv = observation_d_log_d_param(base, s, rank as u64, true);
        let gn = observation_d_log_d_param(base, s, rank as u64, false);
        grad -= (views as f64 * gv + nonviews as f64 * gn) * lp;
        n += views + nonviews;
    }
    grad / n as f64
}

/// Deterministic full-batch gradient descent with backtracking line search:
/// halve the step while the NLL does not decrease, stop on |ΔNLL| < tol or
/// the iteration cap.
pub fn fit(
    family: ParametricFamily,
    data: &[ImpressionRecord],
    config: &FitConfig,
) -> Result<FitResult> {
    config.validate()?;
    let k = config.k_cutoff;
    let dim = if family.is_contextual() {
        let rec = data
            .iter()
            .find(|r| r.rank >= 1 && r.rank <= k)
            .ok_or_else(|| Error::Usage(format!("no records at ranks <= {k}")))?;
        rec.context.len()
    } else {
        1
    };
    let mut theta = match &config.init {
        Some(init) => {
            if init.len() != dim {
                return Err(Error::Usage(format!(
                    "init has length {}, expected {dim}",
                    init.len()
                )));
            }
            init.clone()
        }
        None => family.default_init(dim),
    };

    // Scalar families see the data only through per-rank counts; aggregate
    // once instead of on every objective evaluation.
    let counts = if family.is_contextual() {
        Vec::new()
    } else {
        let c = rank_counts(data, k);
        if c.is_empty() {
            return Err(Error::Usage(format!("no records at ranks <= {k}")));
        }
        c
    };
    let base = family.base();
    let kind = family.link_kind();

    let nll_of = |t: &[f64]| -> Result<f64> {
        if family.is_contextual() {
            nll_at_k(&family.model_from_raw(t)?, data, k)
        } else {
            Ok(scalar_nll_from_counts(base, link(t[0], kind), &counts).0)
        }
    };

    let mut nll = nll_of(&theta)?;
    if !nll.is_finite() {
        return Err(Error::FitDiverged {
            reason: "non-finite NLL at initialization".into(),
            last_theta: theta,
        });
    }

    let mut iterations = 0;
    let mut converged = false;
    while iterations < config.max_iters {
        iterations += 1;
        let grad = if family.is_contextual() {
            nll_gradient(family, &theta, data, k)?
        } else {
            vec![scalar_grad_from_counts(base, kind, theta[0], &counts)]
        };
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::FitDiverged {
                reason: "non-finite gradient".into(),
                last_theta: theta,
            });
        }
        let mut step = config.step_size;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let cand: Vec<f64> = theta.iter().zip(&grad).map(|(t, g)| t - step * g).collect();
            let cand_nll = nll_of(&cand)?;
            if cand_nll.is_finite() && cand_nll < nll {
                accepted = Some((cand, cand_nll));
                break;
            }
            step *= 0.5;
        }
        match accepted {
            None => {
                // No descent left at the smallest step: at an optimum.
                converged = true;
                break;
            }
            Some((cand, cand_nll)) => {
                let delta = nll - cand_nll;
                theta = cand;
                nll = cand_nll;
                if delta < config.tol {
                    converged = true;
                    break;
                }
            }
        }
    }

    let model = family.model_from_raw(&theta)?;
    let (final_nll, clamp_events) = nll_at_k_with_clamps(&model, data, k)?;
    Ok(FitResult {
        model,
        final_nll,
        iterations,
        converged,
        clamp_events,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ContextVector;

    fn record(rank: u32, viewed: bool) -> ImpressionRecord {
        record_ctx(rank, viewed, &[1.0])
    }

    fn record_ctx(rank: u32, viewed: bool, ctx: &[f64]) -> ImpressionRecord {
        ImpressionRecord {
            session_id: 0,
            context: ContextVector::new(ctx.to_vec()).unwrap(),
            item_id: 0,
            rank,
            viewed,
            clicked: false,
        }
    }

    #[test]
    fn nll_known_values() {
        let model = PositionBiasModel::prob(1.0).unwrap();
        let data = vec![record(2, true), record(2, false)];
        let nll = nll_at_k(&model, &data, 10).unwrap();
        assert!((nll - 2.0f64.ln()).abs() < 1e-12);

        // All-viewed rank-1 data: NLL vanishes up to the clamp.
        let data = vec![record(1, true); 5];
        let nll = nll_at_k(&model, &data, 10).unwrap();
        assert!(nll.abs() < 1e-5);

        // A rank-1 non-view is floored at ε.
        let data = vec![record(1, false)];
        let (nll, clamps) = nll_at_k_with_clamps(&model, &data, 10).unwrap();
        assert!((nll - 1e6f64.ln()).abs() < 1e-9);
        assert_eq!(clamps, 1);
    }

    #[test]
    fn nll_requires_records_below_cutoff() {
        let model = PositionBiasModel::Dcg;
        let data = vec![record(30, true)];
        assert!(matches!(nll_at_k(&model, &data, 10), Err(Error::Usage(_))));
    }

    #[test]
    fn nll_agrees_between_aggregated_and_per_record_paths() {
        // The contextual model with zero feature weights must reproduce the
        // scalar path exactly up to summation order.
        let w = crate::models::link_inverse(1.3, LinkKind::Softplus);
        let scalar = PositionBiasModel::prob(1.3).unwrap();
        let ctxual = PositionBiasModel::ContextualProb {
            theta: vec![w, 0.0, 0.0],
        };
        let data: Vec<ImpressionRecord> = (1..=40u32)
            .flat_map(|r| {
                vec![
                    record_ctx(r, r < 12, &[1.0, 2.0, 5.0]),
                    record_ctx(r, r < 30, &[1.0, 4.0, 9.0]),
                ]
            })
            .collect();
        let a = nll_at_k(&scalar, &data, 25).unwrap();
        let b = nll_at_k(&ctxual, &data, 25).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn gradient_known_values() {
        // Single viewed rank-1 record: flat likelihood, zero gradient.
        let data = vec![record(1, true)];
        for family in [
            ParametricFamily::Log,
            ParametricFamily::Exp,
            ParametricFamily::Prob,
        ] {
            let theta = family.default_init(1);
            let g = nll_gradient(family, &theta, &data, 10).unwrap();
            assert_eq!(g, vec![0.0], "{}", family.name());
        }

        // In parameter space: dNLL/dρ = −(ψ(2) − ψ(3)) = +1/2 for a single
        // viewed record at rank 2 with ρ = 1.
        let d = observation_d_log_d_param(BaseFamily::Prob, 1.0, 2, true);
        assert!((-d - 0.5).abs() < 1e-12);
    }

    fn numeric_gradient(
        family: ParametricFamily,
        theta: &[f64],
        data: &[ImpressionRecord],
        k: u32,
    ) -> Vec<f64> {
        let h = 1e-5;
        (0..theta.len())
            .map(|j| {
                let mut up = theta.to_vec();
                up[j] += h;
                let mut dn = theta.to_vec();
                dn[j] -= h;
                let f = |t: &[f64]| nll_at_k(&family.model_from_raw(t).unwrap(), data, k).unwrap();
                (f(&up) - f(&dn)) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let data: Vec<ImpressionRecord> = (2..=30u32)
            .flat_map(|r| {
                vec![
                    record_ctx(r, r < 8, &[1.0, 3.0, 6.0]),
                    record_ctx(r, r < 20, &[1.0, 1.5, 2.0]),
                ]
            })
            .collect();
        let cases = [
            (ParametricFamily::Log, vec![0.8]),
            (ParametricFamily::Exp, vec![-0.4]),
            (ParametricFamily::Prob, vec![0.2]),
            (ParametricFamily::ContextualProb, vec![0.3, -0.05, 0.02]),
            (ParametricFamily::ContextualLog, vec![0.1, 0.03, -0.01]),
            (ParametricFamily::ContextualExp, vec![0.5, 0.02, 0.01]),
        ];
        for (family, theta) in cases {
            let a = nll_gradient(family, &theta, &data, 25).unwrap();
            let n = numeric_gradient(family, &theta, &data, 25);
            for (ai, ni) in a.iter().zip(&n) {
                let rel = (ai - ni).abs() / ai.abs().max(ni.abs()).max(1e-8);
                assert!(rel < 1e-4, "{}: {a:?} vs {n:?}", family.name());
            }
        }
    }

    #[test]
    fn fit_is_deterministic_and_descends() {
        let data: Vec<ImpressionRecord> = (1..=50u32)
            .flat_map(|r| {
                let viewed = (r as f64) < 3.0 + (50 - r) as f64 / 10.0;
                vec![record(r, viewed), record(r, r < 4)]
            })
            .collect();
        let cfg = FitConfig::default();
        let a = fit(ParametricFamily::Prob, &data, &cfg).unwrap();
        let b = fit(ParametricFamily::Prob, &data, &cfg).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.final_nll.to_bits(), b.final_nll.to_bits());
        let init_nll = nll_at_k(
            &ParametricFamily::Prob
                .model_from_raw(&ParametricFamily::Prob.default_init(1))
                .unwrap(),
            &data,
            cfg.k_cutoff,
        )
        .unwrap();
        assert!(a.final_nll <= init_nll);
        assert!(a.iterations <= cfg.max_iters);
    }

    #[test]
    fn fit_degenerate_all_viewed_rank_one() {
        let data = vec![record(1, true); 20];
        let res = fit(ParametricFamily::Prob, &data, &FitConfig::default()).unwrap();
        assert!(res.converged);
        assert!(res.final_nll.abs() < 1e-5);
    }

    #[test]
    fn fit_rejects_bad_config_and_empty_cutoff() {
        let data = vec![record(90, true)];
        let mut cfg = FitConfig::default();
        cfg.k_cutoff = 50;
        assert!(matches!(
            fit(ParametricFamily::Prob, &data, &cfg),
            Err(Error::Usage(_))
        ));
        cfg.tol = 0.0;
        assert!(fit(ParametricFamily::Prob, &[record(1, true)], &cfg).is_err());
    }
}
