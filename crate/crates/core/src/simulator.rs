//! Synthetic interventional feed-session logs: a ground-truth contextual
//! scroll-budget model with an item-quality click model, rank randomization,
//! and Monte-Carlo ground-truth online reward for ranking policies.
//!
//! Sessions are independent given per-session sub-streams derived from the
//! master seed, so generation order never affects output.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::distributions::{sample_depth, YuleSimonParams};
use crate::error::{Error, Result};
use crate::evaluation::Policy;
use crate::models::{link, ContextVector, LinkKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Intervention {
    #[serde(rename = "full-shuffle")]
    FullShuffle,
    #[serde(rename = "none")]
    None,
}

impl Intervention {
    pub fn name(&self) -> &'static str {
        match self {
            Intervention::FullShuffle => "full-shuffle",
            Intervention::None => "none",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "full-shuffle" => Ok(Intervention::FullShuffle),
            "none" => Ok(Intervention::None),
            other => Err(Error::Parse(format!("unknown intervention mode {other:?}"))),
        }
    }
}

/// Ground-truth generative spec for contexts, scroll budgets, item quality,
/// and rank interventions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_sessions: u64,
    pub list_length: u32,
    pub n_items: u64,
    /// Ground-truth contextual shape parameter, softplus link.
    pub true_theta: Vec<f64>,
    pub quality_seed: u64,
    pub intervention: Intervention,
    pub seed: u64,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_sessions < 1 {
            return Err(Error::Usage("n_sessions must be >= 1".into()));
        }
        if self.list_length < 2 {
            return Err(Error::Usage("list_length must be >= 2".into()));
        }
        if self.n_items < self.list_length as u64 {
            return Err(Error::Usage("n_items must be >= list_length".into()));
        }
        if self.true_theta.len() != 3 {
            return Err(Error::Usage(
                "true_theta must have 3 entries (constant, user, time-of-day)".into(),
            ));
        }
        if self.true_theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::Usage("true_theta entries must be finite".into()));
        }
        Ok(())
    }
}

/// One logged (context, item, rank, view, click) event from a session.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpressionRecord {
    pub session_id: u64,
    pub context: ContextVector,
    pub item_id: u64,
    /// Post-intervention position, 1-based.
    pub rank: u32,
    pub viewed: bool,
    pub clicked: bool,
}

/// Per-item base qualities and context-interaction weights, fixed by the
/// quality seed.
#[derive(Debug, Clone)]
pub struct ItemCatalog {
    qualities: Vec<f64>,
    w_user: Vec<f64>,
    w_time: Vec<f64>,
}

impl ItemCatalog {
    pub fn generate(n_items: u64, quality_seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(quality_seed);
        let n = n_items as usize;
        let mut qualities = Vec::with_capacity(n);
        let mut w_user = Vec::with_capacity(n);
        let mut w_time = Vec::with_capacity(n);
        for _ in 0..n {
            qualities.push(0.01 + 0.29 * rng.gen::<f64>());
            w_user.push(-0.01 + 0.02 * rng.gen::<f64>());
            w_time.push(-0.01 + 0.02 * rng.gen::<f64>());
        }
        Self {
            qualities,
            w_user,
            w_time,
        }
    }

    pub fn len(&self) -> usize {
        self.qualities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.qualities.is_empty()
    }

    pub fn base_quality(&self, item_id: u64) -> f64 {
        self.qualities[item_id as usize]
    }

    pub fn base_qualities(&self) -> &[f64] {
        &self.qualities
    }

    /// Click probability of an item given the session context: the base
    /// quality plus a small interaction with the centred features.
    pub fn quality(&self, item_id: u64, context: &ContextVector) -> f64 {
        let i = item_id as usize;
        let x = context.values();
        let q = self.qualities[i] + self.w_user[i] * (x[1] - 3.0) + self.w_time[i] * (x[2] - 5.5);
        q.clamp(0.0, 1.0)
    }
}

/// Sub-stream RNG for one session, derived from the master seed.
pub fn session_rng(seed: u64, session_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(session_id);
    rng
}

/// (1, u, t): u is log-normal(ln 3, 0.5) truncated to [1, 50], t is
/// uniform on [1, 10].
pub fn simulate_context<R: Rng + ?Sized>(rng: &mut R) -> ContextVector {
    let normal = Normal::new(3.0f64.ln(), 0.5).expect("valid normal parameters");
    let u = loop {
        let draw = normal.sample(rng).exp();
        if (1.0..=50.0).contains(&draw) {
            break draw;
        }
    };
    let t = 1.0 + 9.0 * rng.gen::<f64>();
    ContextVector::new(vec![1.0, u, t]).expect("constructed context is valid")
}

/// Randomizes the rank assignment. Full-shuffle draws a uniform permutation
/// (Fisher-Yates), severing rank from the base ordering.
pub fn apply_rank_intervention<R: Rng + ?Sized>(
    ranking: &[u64],
    mode: Intervention,
    rng: &mut R,
) -> Result<Vec<u64>> {
    let mut seen = std::collections::HashSet::with_capacity(ranking.len());
    for item in ranking {
        if !seen.insert(item) {
            return Err(Error::Usage(format!("duplicate item {item} in ranking")));
        }
    }
    let mut out = ranking.to_vec();
    if mode == Intervention::FullShuffle {
        for i in (1..out.len()).rev() {
            let j = rng.gen_range(0..=i);
            out.swap(i, j);
        }
    }
    Ok(out)
}

/// Ground-truth scroll-depth shape for a context: softplus(θᵀx).
pub fn true_rho(true_theta: &[f64], context: &ContextVector) -> Result<f64> {
    Ok(link(context.dot(true_theta)?, LinkKind::Softplus))
}

fn sample_slate<R: Rng + ?Sized>(n_items: u64, list_length: u32, rng: &mut R) -> Vec<u64> {
    // Partial Fisher-Yates over the catalog indices.
    let mut ids: Vec<u64> = (0..n_items).collect();
    let l = list_length as usize;
    for i in 0..l {
        let j = rng.gen_range(i..ids.len());
        ids.swap(i, j);
    }
    ids.truncate(l);
    ids
}

/// Generates one session: draw context, scroll budget, slate, intervene on
/// ranks, then emit one record per position with prefix views and
/// view-gated clicks.
pub fn simulate_session<R: Rng + ?Sized>(
    config: &SimConfig,
    catalog: &ItemCatalog,
    session_id: u64,
    rng: &mut R,
) -> Result<Vec<ImpressionRecord>> {
    let context = simulate_context(rng);
    let rho = true_rho(&config.true_theta, &context)?;
    let depth = sample_depth(&YuleSimonParams::new(rho)?, rng);
    let slate = sample_slate(config.n_items, config.list_length, rng);
    let slate = apply_rank_intervention(&slate, config.intervention, rng)?;

    let mut records = Vec::with_capacity(slate.len());
    for (pos, &item_id) in slate.iter().enumerate() {
        let rank = pos as u32 + 1;
        let viewed = (rank as u64) <= depth;
        let clicked = viewed && rng.gen::<f64>() < catalog.quality(item_id, &context);
        records.push(ImpressionRecord {
            session_id,
            context: context.clone(),
            item_id,
            rank,
            viewed,
            clicked,
        });
    }
    Ok(records)
}

/// Full interventional log: `n_sessions` independent sessions in id order.
pub fn simulate_dataset(config: &SimConfig) -> Result<Vec<ImpressionRecord>> {
    config.validate()?;
    let catalog = ItemCatalog::generate(config.n_items, config.quality_seed);
    let mut records = Vec::with_capacity((config.n_sessions * config.list_length as u64) as usize);
    for session_id in 0..config.n_sessions {
        let mut rng = session_rng(config.seed, session_id);
        records.extend(simulate_session(config, &catalog, session_id, &mut rng)?);
    }
    Ok(records)
}

/// Monte-Carlo online reward estimate for a policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardEstimate {
    /// Mean total clicks per session.
    pub mean_per_session: f64,
    pub std_err_per_session: f64,
    /// Mean clicks per ranked impression (per-session mean / list length).
    pub mean_per_impression: f64,
    pub std_err_per_impression: f64,
    pub n_sessions: u64,
}

/// Ground-truth online reward: average total clicks per session over `n_mc`
/// fresh sessions where the policy's ranking is shown without intervention.
pub fn online_reward(
    policy: &Policy,
    config: &SimConfig,
    n_mc: u64,
    seed: u64,
) -> Result<RewardEstimate> {
    config.validate()?;
    if n_mc < 1 {
        return Err(Error::Usage("n_mc must be >= 1".into()));
    }
    let catalog = ItemCatalog::generate(config.n_items, config.quality_seed);
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for mc in 0..n_mc {
        let mut rng = session_rng(seed, mc);
        let context = simulate_context(&mut rng);
        let rho = true_rho(&config.true_theta, &context)?;
        let depth = sample_depth(&YuleSimonParams::new(rho)?, &mut rng);
        let slate = sample_slate(config.n_items, config.list_length, &mut rng);
        let ranked = policy.rank_slate(&slate);
        let mut clicks = 0u64;
        for (pos, &item_id) in ranked.iter().enumerate() {
            let rank = pos as u64 + 1;
            let viewed = rank <= depth;
            if viewed && rng.gen::<f64>() < catalog.quality(item_id, &context) {
                clicks += 1;
            }
        }
        let c = clicks as f64;
        sum += c;
        sum_sq += c * c;
    }
    let n = n_mc as f64;
    let mean = sum / n;
    let var = ((sum_sq / n) - mean * mean).max(0.0);
    let se = (var / n).sqrt();
    let l = config.list_length as f64;
    Ok(RewardEstimate {
        mean_per_session: mean,
        std_err_per_session: se,
        mean_per_impression: mean / l,
        std_err_per_impression: se / l,
        n_sessions: n_mc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::survival;

    fn base_config() -> SimConfig {
        SimConfig {
            n_sessions: 100,
            list_length: 10,
            n_items: 50,
            true_theta: vec![
                crate::models::link_inverse(1.0, LinkKind::Softplus),
                0.0,
                0.0,
            ],
            quality_seed: 5,
            intervention: Intervention::FullShuffle,
            seed: 11,
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = base_config();
        cfg.n_sessions = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = base_config();
        cfg.list_length = 1;
        assert!(cfg.validate().is_err());
        let mut cfg = base_config();
        cfg.n_items = 5;
        assert!(cfg.validate().is_err());
        assert!(base_config().validate().is_ok());
    }

    #[test]
    fn context_respects_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut t_sum = 0.0;
        let n = 100_000;
        for _ in 0..n {
            let x = simulate_context(&mut rng);
            let v = x.values();
            assert_eq!(v[0], 1.0);
            assert!((1.0..=50.0).contains(&v[1]));
            assert!((1.0..=10.0).contains(&v[2]));
            t_sum += v[2];
        }
        let t_mean = t_sum / n as f64;
        assert!((t_mean - 5.5).abs() < 0.05, "t mean {t_mean}");
    }

    #[test]
    fn intervention_identity_and_shuffle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let items = vec![3u64, 1, 4];
        assert_eq!(
            apply_rank_intervention(&items, Intervention::None, &mut rng).unwrap(),
            items
        );
        assert_eq!(
            apply_rank_intervention(&[7], Intervention::FullShuffle, &mut rng).unwrap(),
            vec![7]
        );
        assert!(apply_rank_intervention(&[1, 1], Intervention::FullShuffle, &mut rng).is_err());
    }

    #[test]
    fn shuffle_is_uniform_at_rank_one() {
        let items = vec![0u64, 1, 2, 3, 4];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 100_000;
        let mut first = [0u64; 5];
        for _ in 0..n {
            let out = apply_rank_intervention(&items, Intervention::FullShuffle, &mut rng).unwrap();
            first[out[0] as usize] += 1;
        }
        for (item, &count) in first.iter().enumerate() {
            let freq = count as f64 / n as f64;
            assert!((freq - 0.2).abs() < 0.005, "item {item}: {freq}");
        }
    }

    #[test]
    fn sessions_have_prefix_views_and_gated_clicks() {
        let cfg = base_config();
        let data = simulate_dataset(&cfg).unwrap();
        assert_eq!(
            data.len(),
            (cfg.n_sessions * cfg.list_length as u64) as usize
        );
        for session in data.chunks(cfg.list_length as usize) {
            let mut prev_viewed = true;
            for rec in session {
                assert!(!(rec.clicked && !rec.viewed));
                if rec.viewed {
                    assert!(prev_viewed, "views must be a prefix");
                }
                prev_viewed = rec.viewed;
            }
            let ranks: Vec<u32> = session.iter().map(|r| r.rank).collect();
            assert_eq!(ranks, (1..=cfg.list_length).collect::<Vec<_>>());
        }
    }

    #[test]
    fn dataset_is_deterministic() {
        let cfg = base_config();
        assert_eq!(
            simulate_dataset(&cfg).unwrap(),
            simulate_dataset(&cfg).unwrap()
        );
    }

    #[test]
    fn marginal_view_rate_matches_survival() {
        let mut cfg = base_config();
        cfg.n_sessions = 200_000;
        let data = simulate_dataset(&cfg).unwrap();
        let params = YuleSimonParams::new(1.0).unwrap();
        let n = cfg.n_sessions as f64;
        for r in [2u32, 4, 8] {
            let viewed = data
                .iter()
                .filter(|rec| rec.rank == r && rec.viewed)
                .count() as f64;
            let rate = viewed / n;
            let expected = survival(&params, r as u64).unwrap();
            let se = (expected * (1.0 - expected) / n).sqrt();
            assert!(
                (rate - expected).abs() < 3.0 * se + 1e-3,
                "rank {r}: {rate} vs {expected}"
            );
        }
    }

    #[test]
    fn shuffle_decorrelates_quality_and_rank() {
        let mut cfg = base_config();
        cfg.n_sessions = 100_000;
        let catalog = ItemCatalog::generate(cfg.n_items, cfg.quality_seed);
        let data = simulate_dataset(&cfg).unwrap();
        let qs: Vec<f64> = data
            .iter()
            .map(|r| catalog.base_quality(r.item_id))
            .collect();
        let rs: Vec<f64> = data.iter().map(|r| r.rank as f64).collect();
        let corr = crate::evaluation::pearson_correlation(&qs, &rs).unwrap();
        assert!(corr.abs() < 0.01, "corr = {corr}");
    }

    #[test]
    fn online_reward_orders_policies_and_scales() {
        let cfg = base_config();
        let catalog = ItemCatalog::generate(cfg.n_items, cfg.quality_seed);
        let oracle = Policy::by_true_quality(&catalog);
        let random = Policy::random(cfg.n_items, 77);
        let good = online_reward(&oracle, &cfg, 100_000, 900).unwrap();
        let bad = online_reward(&random, &cfg, 100_000, 901).unwrap();
        let gap = good.mean_per_session - bad.mean_per_session;
        let se = (good.std_err_per_session.powi(2) + bad.std_err_per_session.powi(2)).sqrt();
        assert!(gap > 3.0 * se, "gap {gap} vs se {se}");

        let half = online_reward(&oracle, &cfg, 50_000, 900).unwrap();
        let ratio = good.std_err_per_session / half.std_err_per_session;
        assert!((ratio - std::f64::consts::FRAC_1_SQRT_2).abs() < 0.2 * ratio.max(1.0));
    }

    #[test]
    fn zero_quality_catalog_yields_zero_reward() {
        let mut cfg = base_config();
        cfg.n_items = 20;
        let catalog = ItemCatalog {
            qualities: vec![0.0; 20],
            w_user: vec![0.0; 20],
            w_time: vec![0.0; 20],
        };
        // Bypass the generated catalog by simulating by hand.
        let policy = Policy::random(cfg.n_items, 3);
        let mut total = 0u64;
        for mc in 0..1000u64 {
            let mut rng = session_rng(55, mc);
            let context = simulate_context(&mut rng);
            let rho = true_rho(&cfg.true_theta, &context).unwrap();
            let depth = sample_depth(&YuleSimonParams::new(rho).unwrap(), &mut rng);
            let slate = sample_slate(cfg.n_items, cfg.list_length, &mut rng);
            for (pos, &item) in policy.rank_slate(&slate).iter().enumerate() {
                let viewed = (pos as u64 + 1) <= depth;
                if viewed && rng.gen::<f64>() < catalog.quality(item, &context) {
                    total += 1;
                }
            }
        }
        assert_eq!(total, 0);
    }
}
