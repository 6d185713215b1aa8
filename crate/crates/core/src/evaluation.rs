//! Unbiased offline DCG estimation via inverse propensity scoring,
//! per-item quality estimation, and the offline-online correlation study.

use std::collections::HashMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::models::{ContextVector, PositionBiasModel};
use crate::simulator::{online_reward, simulate_dataset, ImpressionRecord, ItemCatalog, SimConfig};

/// Deterministic ranking rule over (context, candidate set). Ties break by
/// ascending item id so the assigned ranks form a bijection.
#[derive(Debug, Clone, PartialEq)]
pub enum Policy {
    /// Ranks by the catalog's base quality, best first.
    ByTrueQuality { scores: Vec<f64> },
    /// Base quality plus fixed per-item Gaussian noise.
    ByNoisyQuality { scores: Vec<f64>, noise_sd: f64 },
    /// A fixed random preference order drawn from the seed.
    Random { scores: Vec<f64>, seed: u64 },
    /// Reproduces the logged ranks.
    IdentityLogged,
}

impl Policy {
    pub fn by_true_quality(catalog: &ItemCatalog) -> Self {
        Self::ByTrueQuality {
            scores: catalog.base_qualities().to_vec(),
        }
    }

    pub fn by_noisy_quality(catalog: &ItemCatalog, noise_sd: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scores = catalog
            .base_qualities()
            .iter()
            .map(|q| {
                // Box-Muller keeps the draw order independent of library
                // sampler internals.
                let u1: f64 = 1.0 - rng.gen::<f64>();
                let u2: f64 = rng.gen();
                let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
                q + noise_sd * z
            })
            .collect();
        Self::ByNoisyQuality { scores, noise_sd }
    }

    pub fn random(n_items: u64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scores = (0..n_items).map(|_| rng.gen::<f64>()).collect();
        Self::Random { scores, seed }
    }

    fn scores(&self) -> Option<&[f64]> {
        match self {
            Self::ByTrueQuality { scores }
            | Self::ByNoisyQuality { scores, .. }
            | Self::Random { scores, .. } => Some(scores),
            Self::IdentityLogged => None,
        }
    }

    /// Reorders a candidate slate into the policy's ranking (rank 1 first).
    /// `IdentityLogged` keeps the given order.
    pub fn rank_slate(&self, slate: &[u64]) -> Vec<u64> {
        match self.scores() {
            None => slate.to_vec(),
            Some(scores) => {
                let mut items = slate.to_vec();
                items.sort_by(|a, b| {
                    let sa = scores[*a as usize];
                    let sb = scores[*b as usize];
                    sb.partial_cmp(&sa)
                        .expect("policy scores are finite")
                        .then(a.cmp(b))
                });
                items
            }
        }
    }

    /// Rank each slate item would be placed at: a map item -> rank, 1-based.
    pub fn assigned_ranks(&self, slate: &[u64]) -> HashMap<u64, u32> {
        self.rank_slate(slate)
            .into_iter()
            .enumerate()
            .map(|(pos, item)| (item, pos as u32 + 1))
            .collect()
    }
}

struct Session<'a> {
    records: Vec<&'a ImpressionRecord>,
}

// Groups records by session in first-seen order, validating that each
// session's ranks form a complete 1..L slate.
fn group_sessions(data: &[ImpressionRecord]) -> Result<Vec<Session<'_>>> {
    let mut index: HashMap<u64, usize> = HashMap::new();
    let mut sessions: Vec<Session> = Vec::new();
    for rec in data {
        let i = *index.entry(rec.session_id).or_insert_with(|| {
            sessions.push(Session {
                records: Vec::new(),
            });
            sessions.len() - 1
        });
        sessions[i].records.push(rec);
    }
    for s in &mut sessions {
        s.records.sort_by_key(|r| r.rank);
        for (pos, rec) in s.records.iter().enumerate() {
            if rec.rank as usize != pos + 1 {
                return Err(Error::Usage(format!(
                    "session {} has an incomplete slate: expected rank {}, found {}",
                    rec.session_id,
                    pos + 1,
                    rec.rank
                )));
            }
        }
    }
    Ok(sessions)
}

/// Unbiased offline estimate of per-impression reward under `policy`
/// (Owen-style importance sampling over the logged ranks): the mean of
/// c · P̂(V|policy rank) / P̂(V|logged rank). No capping is applied.
pub fn unbiased_dcg(
    data: &[ImpressionRecord],
    policy: &Policy,
    model: &PositionBiasModel,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Usage("dataset is empty".into()));
    }
    let sessions = group_sessions(data)?;
    let mut total = 0.0;
    let mut n = 0u64;
    for session in &sessions {
        let slate: Vec<u64> = session.records.iter().map(|r| r.item_id).collect();
        let pi_ranks = match policy {
            Policy::IdentityLogged => None,
            _ => Some(policy.assigned_ranks(&slate)),
        };
        for rec in &session.records {
            n += 1;
            if !rec.clicked {
                continue;
            }
            let ctx = Some(&rec.context);
            let pi_rank = match &pi_ranks {
                None => rec.rank,
                Some(map) => map[&rec.item_id],
            };
            let numer = model.prob_view(pi_rank as u64, ctx)?;
            let denom = model.prob_view(rec.rank as u64, ctx)?;
            total += numer / denom;
        }
    }
    Ok(total / n as f64)
}

/// Exposure-reweighted quality estimate for one item over a context bucket:
/// clicks divided by the model's expected exposures.
pub fn estimate_quality<F>(
    data: &[ImpressionRecord],
    model: &PositionBiasModel,
    item_id: u64,
    bucket: F,
) -> Result<f64>
where
    F: Fn(&ContextVector) -> bool,
{
    let mut clicks = 0.0;
    let mut exposure = 0.0;
    let mut impressions = 0u64;
    for rec in data {
        if rec.item_id != item_id || !bucket(&rec.context) {
            continue;
        }
        impressions += 1;
        clicks += rec.clicked as u64 as f64;
        exposure += model.prob_view(rec.rank as u64, Some(&rec.context))?;
    }
    if impressions == 0 {
        return Err(Error::Usage(format!(
            "item {item_id} has no impressions in the bucket"
        )));
    }
    Ok(clicks / exposure)
}

/// Sample Pearson correlation coefficient.
pub fn pearson_correlation(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::Usage(
            "correlation needs two sequences of equal length >= 2".into(),
        ));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation(
            "zero variance in one of the sequences".into(),
        ));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// One (model, trial) correlation outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationRow {
    pub model: String,
    pub trial: u32,
    pub correlation: f64,
}

/// Mean correlation per model and its improvement relative to the fixed
/// DCG discount.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSummary {
    pub model: String,
    pub mean_correlation: f64,
    pub relative_improvement_vs_dcg_pct: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyResult {
    pub rows: Vec<CorrelationRow>,
    pub summary: Vec<ModelSummary>,
}

/// Study knobs: trials, Monte-Carlo sessions for the online side, and the
/// base seed the per-trial seeds derive from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StudyConfig {
    pub n_trials: u32,
    pub n_mc: u64,
    pub base_seed: u64,
}

/// Per trial: simulate an interventional log, estimate per-impression
/// reward offline for every (policy, model) pair, sample the online reward
/// per policy, and correlate across policies. Returns every trial row plus
/// mean correlation per model with its improvement over the DCG baseline.
pub fn offline_online_study(
    models: &[(String, PositionBiasModel)],
    policies: &[(String, Policy)],
    sim: &SimConfig,
    study: &StudyConfig,
) -> Result<StudyResult> {
    if policies.len() < 2 {
        return Err(Error::Usage(
            "the correlation study needs at least two policies".into(),
        ));
    }
    if models.is_empty() {
        return Err(Error::Usage(
            "the correlation study needs at least one model".into(),
        ));
    }
    if study.n_trials < 1 {
        return Err(Error::Usage("n_trials must be >= 1".into()));
    }

    let mut rows = Vec::new();
    let mut sums: Vec<f64> = vec![0.0; models.len()];
    for trial in 0..study.n_trials {
        let mut cfg = sim.clone();
        cfg.seed = study
            .base_seed
            .wrapping_add(trial as u64)
            .wrapping_mul(0x9e3779b97f4a7c15);
        cfg.intervention = crate::simulator::Intervention::FullShuffle;
        let data = simulate_dataset(&cfg)?;

        let online: Vec<f64> = policies
            .iter()
            .enumerate()
            .map(|(i, (_, policy))| {
                let seed = cfg.seed.wrapping_add(1 + i as u64);
                online_reward(policy, &cfg, study.n_mc, seed).map(|r| r.mean_per_impression)
            })
            .collect::<Result<_>>()?;

        for (mi, (name, model)) in models.iter().enumerate() {
            let offline: Vec<f64> = policies
                .iter()
                .map(|(_, policy)| unbiased_dcg(&data, policy, model))
                .collect::<Result<_>>()?;
            let corr = pearson_correlation(&offline, &online)?;
            sums[mi] += corr;
            rows.push(CorrelationRow {
                model: name.clone(),
                trial,
                correlation: corr,
            });
        }
    }

    let means: Vec<f64> = sums.iter().map(|s| s / study.n_trials as f64).collect();
    let dcg_mean = models
        .iter()
        .position(|(_, m)| matches!(m, PositionBiasModel::Dcg))
        .map(|i| means[i]);
    let summary = models
        .iter()
        .zip(&means)
        .map(|((name, _), &mean)| ModelSummary {
            model: name.clone(),
            mean_correlation: mean,
            relative_improvement_vs_dcg_pct: match dcg_mean {
                Some(d) if d != 0.0 => (mean / d - 1.0) * 100.0,
                _ => f64::NAN,
            },
        })
        .collect();

    Ok(StudyResult { rows, summary })
}
