//! Position-bias model families behind one evaluation interface: the fixed
//! DCG discount, the parametric log/exp/survival forms, their contextual
//! variants through link functions, and the non-parametric empirical
//! baseline.

use std::f64::consts::E;

use crate::distributions::{d_log_survival_d_rho_raw, survival_raw, MIN_RHO};
use crate::error::{Error, Result};
use crate::simulator::ImpressionRecord;

/// Floor applied to every view probability (and to likelihood terms before
/// the log). Rank-1 non-views are impossible under the parametric families;
/// the floor keeps their likelihood finite.
pub const PROB_FLOOR: f64 = 1e-6;

/// Fixed-length feature vector. Index 0 is the constant 1-feature by
/// convention; index 1 the user's past average scroll depth, index 2 the
/// time-of-day average scroll depth.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextVector {
    values: Vec<f64>,
}

impl ContextVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Domain("context vector must be non-empty".into()));
        }
        if values[0] != 1.0 {
            return Err(Error::Domain(format!(
                "context vector must start with the constant 1-feature, got {}",
                values[0]
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain(
                "context vector entries must be finite".into(),
            ));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// θᵀx. Lengths must match.
    pub fn dot(&self, theta: &[f64]) -> Result<f64> {
        if theta.len() != self.values.len() {
            return Err(Error::Usage(format!(
                "parameter length {} does not match context length {}",
                theta.len(),
                self.values.len()
            )));
        }
        Ok(self.values.iter().zip(theta).map(|(x, t)| x * t).sum())
    }
}

/// Link functions mapping an unconstrained linear predictor into a valid
/// parameter domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkKind {
    /// ln(1 + e^raw) + 1e-6, onto the positive reals. Used for ρ and α.
    Softplus,
    /// 1 / (1 + e^−raw), onto (0, 1). Used for γ.
    Sigmoid,
}

impl LinkKind {
    pub fn name(&self) -> &'static str {
        match self {
            LinkKind::Softplus => "softplus",
            LinkKind::Sigmoid => "sigmoid",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "softplus" => Ok(LinkKind::Softplus),
            "sigmoid" => Ok(LinkKind::Sigmoid),
            other => Err(Error::Parse(format!("unknown link kind {other:?}"))),
        }
    }
}

fn sigmoid(raw: f64) -> f64 {
    if raw >= 0.0 {
        1.0 / (1.0 + (-raw).exp())
    } else {
        let e = raw.exp();
        e / (1.0 + e)
    }
}

pub fn link(raw: f64, kind: LinkKind) -> f64 {
    match kind {
        LinkKind::Softplus => raw.max(0.0) + (-raw.abs()).exp().ln_1p() + MIN_RHO,
        LinkKind::Sigmoid => sigmoid(raw),
    }
}

pub fn link_deriv(raw: f64, kind: LinkKind) -> f64 {
    match kind {
        LinkKind::Softplus => sigmoid(raw),
        LinkKind::Sigmoid => {
            let s = sigmoid(raw);
            s * (1.0 - s)
        }
    }
}

pub fn link_inverse(value: f64, kind: LinkKind) -> f64 {
    match kind {
        // softplus⁻¹(y) = ln(e^y − 1)
        LinkKind::Softplus => (value - MIN_RHO).exp_m1().ln(),
        LinkKind::Sigmoid => (value / (1.0 - value)).ln(),
    }
}

/// The three single-parameter discount shapes shared by the contextual and
/// non-contextual families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaseFamily {
    Log,
    Exp,
    Prob,
}

impl BaseFamily {
    pub fn link_kind(&self) -> LinkKind {
        match self {
            BaseFamily::Log | BaseFamily::Prob => LinkKind::Softplus,
            BaseFamily::Exp => LinkKind::Sigmoid,
        }
    }
}

/// Unclamped view probability for scalar parameter `s` at rank `r >= 1`.
pub fn base_prob_view(base: BaseFamily, s: f64, r: u64) -> f64 {
    match base {
        BaseFamily::Log => 1.0 / (E + s * (r - 1) as f64).ln(),
        BaseFamily::Exp => s.powf((r - 1) as f64),
        BaseFamily::Prob => survival_raw(s, r),
    }
}

/// d ln P(V=1|r) / ds for the base families; zero at rank 1 for `Prob`.
pub fn base_d_log_prob_d_param(base: BaseFamily, s: f64, r: u64) -> f64 {
    match base {
        BaseFamily::Log => {
            let rm1 = (r - 1) as f64;
            let t = E + s * rm1;
            -(rm1 / t) / t.ln()
        }
        BaseFamily::Exp => (r - 1) as f64 / s,
        BaseFamily::Prob => d_log_survival_d_rho_raw(s, r),
    }
}

/// A position-bias model: maps (rank, context) to a view probability.
#[derive(Debug, Clone, PartialEq)]
pub enum PositionBiasModel {
    /// 1 / log2(r + 1), no parameters.
    Dcg,
    /// 1 / ln(e + α(r − 1)).
    Log {
        alpha: f64,
    },
    /// γ^(r − 1).
    Exp {
        gamma: f64,
    },
    /// Survival of the scroll-depth distribution with shape ρ.
    Prob {
        rho: f64,
    },
    /// Per-rank view-rate table; ranks beyond the table fall back to its
    /// last entry.
    Empirical {
        table: Vec<f64>,
    },
    ContextualLog {
        theta: Vec<f64>,
    },
    ContextualExp {
        theta: Vec<f64>,
    },
    ContextualProb {
        theta: Vec<f64>,
    },
}

impl PositionBiasModel {
    pub fn log(alpha: f64) -> Result<Self> {
        if !alpha.is_finite() || alpha <= 0.0 {
            return Err(Error::Domain(format!(
                "alpha must be positive, got {alpha}"
            )));
        }
        Ok(Self::Log { alpha })
    }

    pub fn exp(gamma: f64) -> Result<Self> {
        if !gamma.is_finite() || gamma <= 0.0 || gamma > 1.0 {
            return Err(Error::Domain(format!(
                "gamma must lie in (0, 1], got {gamma}"
            )));
        }
        Ok(Self::Exp { gamma })
    }

    pub fn prob(rho: f64) -> Result<Self> {
        if !rho.is_finite() || rho < MIN_RHO {
            return Err(Error::Domain(format!(
                "rho must be >= {MIN_RHO}, got {rho}"
            )));
        }
        Ok(Self::Prob { rho })
    }

    pub fn family_name(&self) -> &'static str {
        match self {
            Self::Dcg => "dcg",
            Self::Log { .. } => "log",
            Self::Exp { .. } => "exp",
            Self::Prob { .. } => "prob",
            Self::Empirical { .. } => "empirical",
            Self::ContextualLog { .. } => "contextual-log",
            Self::ContextualExp { .. } => "contextual-exp",
            Self::ContextualProb { .. } => "contextual-prob",
        }
    }

    pub fn is_contextual(&self) -> bool {
        matches!(
            self,
            Self::ContextualLog { .. } | Self::ContextualExp { .. } | Self::ContextualProb { .. }
        )
    }

    pub fn link_kind(&self) -> Option<LinkKind> {
        match self {
            Self::Log { .. } | Self::ContextualLog { .. } => Some(LinkKind::Softplus),
            Self::Prob { .. } | Self::ContextualProb { .. } => Some(LinkKind::Softplus),
            Self::Exp { .. } | Self::ContextualExp { .. } => Some(LinkKind::Sigmoid),
            _ => None,
        }
    }

    /// View probability at `rank`, clamped to [PROB_FLOOR, 1]. Contextual
    /// families require a context.
    pub fn prob_view(&self, rank: u64, context: Option<&ContextVector>) -> Result<f64> {
        if rank < 1 {
            return Err(Error::Domain(format!("rank must be >= 1, got {rank}")));
        }
        let raw = match self {
            Self::Dcg => 1.0 / ((rank + 1) as f64).log2(),
            Self::Log { alpha } => base_prob_view(BaseFamily::Log, *alpha, rank),
            Self::Exp { gamma } => base_prob_view(BaseFamily::Exp, *gamma, rank),
            Self::Prob { rho } => base_prob_view(BaseFamily::Prob, *rho, rank),
            Self::Empirical { table } => {
                let idx = (rank as usize - 1).min(table.len() - 1);
                table[idx]
            }
            Self::ContextualLog { theta } => {
                let s = self.contextual_param(theta, context)?;
                base_prob_view(BaseFamily::Log, s, rank)
            }
            Self::ContextualExp { theta } => {
                let s = self.contextual_param(theta, context)?;
                base_prob_view(BaseFamily::Exp, s, rank)
            }
            Self::ContextualProb { theta } => {
                let s = self.contextual_param(theta, context)?;
                base_prob_view(BaseFamily::Prob, s, rank)
            }
        };
        Ok(raw.clamp(PROB_FLOOR, 1.0))
    }

    fn contextual_param(&self, theta: &[f64], context: Option<&ContextVector>) -> Result<f64> {
        let ctx = context.ok_or_else(|| {
            Error::Usage(format!(
                "family {} requires a context vector",
                self.family_name()
            ))
        })?;
        let kind = self.link_kind().expect("contextual families have a link");
        Ok(link(ctx.dot(theta)?, kind))
    }
}

/// Per-rank empirical view rates with add-one smoothing on both outcomes.
/// Ranks beyond `max_rank` fall back to the last table entry.
pub fn fit_empirical(dataset: &[ImpressionRecord], max_rank: u32) -> Result<PositionBiasModel> {
    if dataset.is_empty() {
        return Err(Error::Usage(
            "cannot fit empirical model on an empty dataset".into(),
        ));
    }
    if max_rank < 1 {
        return Err(Error::Usage("max_rank must be >= 1".into()));
    }
    let mut views = vec![0u64; max_rank as usize];
    let mut counts = vec![0u64; max_rank as usize];
    for rec in dataset {
        if rec.rank >= 1 && rec.rank <= max_rank {
            let idx = rec.rank as usize - 1;
            counts[idx] += 1;
            if rec.viewed {
                views[idx] += 1;
            }
        }
    }
    let table = views
        .iter()
        .zip(&counts)
        .map(|(&v, &n)| (v + 1) as f64 / (n + 2) as f64)
        .collect();
    Ok(PositionBiasModel::Empirical { table })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx(values: &[f64]) -> ContextVector {
        ContextVector::new(values.to_vec()).unwrap()
    }

    fn record(rank: u32, viewed: bool) -> ImpressionRecord {
        ImpressionRecord {
            session_id: 0,
            context: ctx(&[1.0]),
            item_id: 0,
            rank,
            viewed,
            clicked: false,
        }
    }

    #[test]
    fn context_vector_invariants() {
        assert!(ContextVector::new(vec![]).is_err());
        assert!(ContextVector::new(vec![0.5, 2.0]).is_err());
        assert!(ContextVector::new(vec![1.0, f64::NAN]).is_err());
        assert!(ContextVector::new(vec![1.0, 3.0, 5.0]).is_ok());
    }

    #[test]
    fn link_known_values() {
        let sp0 = link(0.0, LinkKind::Softplus);
        assert!((sp0 - (2.0f64.ln() + 1e-6)).abs() < 1e-12);
        assert_eq!(link(0.0, LinkKind::Sigmoid), 0.5);
        // No underflow to zero at extreme negative inputs.
        assert!((link(-1000.0, LinkKind::Softplus) - 1e-6).abs() < 1e-18);
        assert!(link(500.0, LinkKind::Softplus).is_finite());
        assert!(link(-500.0, LinkKind::Sigmoid) > 0.0);
    }

    #[test]
    fn link_inverse_round_trips() {
        for &y in &[0.1, 0.5, 1.0, 3.0, 20.0] {
            let w = link_inverse(y, LinkKind::Softplus);
            assert!((link(w, LinkKind::Softplus) - y).abs() < 1e-10, "y = {y}");
        }
        for &y in &[0.05, 0.5, 0.95] {
            let w = link_inverse(y, LinkKind::Sigmoid);
            assert!((link(w, LinkKind::Sigmoid) - y).abs() < 1e-12, "y = {y}");
        }
    }

    #[test]
    fn link_deriv_matches_finite_differences() {
        let h = 1e-6;
        for kind in [LinkKind::Softplus, LinkKind::Sigmoid] {
            for &raw in &[-5.0, -0.3, 0.0, 1.2, 8.0] {
                let fd = (link(raw + h, kind) - link(raw - h, kind)) / (2.0 * h);
                assert!((link_deriv(raw, kind) - fd).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn prob_view_known_values() {
        assert!((PositionBiasModel::Dcg.prob_view(3, None).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(PositionBiasModel::Dcg.prob_view(1, None).unwrap(), 1.0);
        let prob = PositionBiasModel::prob(1.0).unwrap();
        assert!((prob.prob_view(4, None).unwrap() - 0.25).abs() < 1e-12);
        let log = PositionBiasModel::log(1.0).unwrap();
        assert!((log.prob_view(1, None).unwrap() - 1.0).abs() < 1e-12);
        let exp = PositionBiasModel::exp(0.5).unwrap();
        assert!((exp.prob_view(3, None).unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn contextual_prob_reduces_to_survival() {
        // θᵀx hits link⁻¹(1), so the model must equal survival(1, r).
        let w = link_inverse(1.0, LinkKind::Softplus);
        let model = PositionBiasModel::ContextualProb {
            theta: vec![w, 0.0, 0.0],
        };
        let x = ctx(&[1.0, 4.2, 7.7]);
        assert!((model.prob_view(2, Some(&x)).unwrap() - 0.5).abs() < 1e-10);
        assert!((model.prob_view(4, Some(&x)).unwrap() - 0.25).abs() < 1e-10);
    }

    #[test]
    fn contextual_family_needs_context() {
        let model = PositionBiasModel::ContextualProb { theta: vec![0.0] };
        assert!(matches!(model.prob_view(2, None), Err(Error::Usage(_))));
    }

    #[test]
    fn prob_view_rejects_rank_zero() {
        assert!(PositionBiasModel::Dcg.prob_view(0, None).is_err());
    }

    #[test]
    fn parametric_families_are_non_increasing_and_bounded() {
        let models = vec![
            PositionBiasModel::Dcg,
            PositionBiasModel::log(0.3).unwrap(),
            PositionBiasModel::log(7.0).unwrap(),
            PositionBiasModel::exp(0.9).unwrap(),
            PositionBiasModel::exp(0.2).unwrap(),
            PositionBiasModel::prob(0.4).unwrap(),
            PositionBiasModel::prob(3.0).unwrap(),
        ];
        for m in &models {
            let mut prev = m.prob_view(1, None).unwrap();
            assert!(prev <= 1.0);
            for r in 2..=1000u64 {
                let p = m.prob_view(r, None).unwrap();
                assert!(p <= prev + 1e-15, "{} at r = {r}", m.family_name());
                assert!(p >= PROB_FLOOR && p <= 1.0);
                prev = p;
            }
            // Deep ranks must still be valid probabilities.
            let deep = m.prob_view(1_000_000, None).unwrap();
            assert!(deep >= PROB_FLOOR && deep <= 1.0);
        }
    }

    #[test]
    fn empirical_fit_known_values() {
        let data = vec![
            record(2, true),
            record(2, true),
            record(2, false),
            record(2, false),
        ];
        let model = fit_empirical(&data, 5).unwrap();
        if let PositionBiasModel::Empirical { table } = &model {
            assert!((table[1] - 0.5).abs() < 1e-15); // (2+1)/(4+2)
            assert!((table[4] - 0.5).abs() < 1e-15); // smoothing prior at unseen rank
                                                     // Fallback beyond max_rank is the last entry.
            assert_eq!(
                model.prob_view(9, None).unwrap(),
                model.prob_view(5, None).unwrap()
            );
        } else {
            panic!("expected empirical model");
        }
        assert!(fit_empirical(&[], 5).is_err());
    }

    proptest::proptest! {
        #[test]
        fn prob_view_stays_in_unit_interval(
            rho in 1e-3f64..15.0,
            rank in 1u64..1_000_000,
        ) {
            let m = PositionBiasModel::prob(rho).unwrap();
            let p = m.prob_view(rank, None).unwrap();
            proptest::prop_assert!(p >= PROB_FLOOR && p <= 1.0);
        }
    }
}
