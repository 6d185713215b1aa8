//! Resolved command configurations and their execution.
//!
//! Every command resolves its flags into a serializable job struct, runs,
//! and writes a manifest echoing that struct plus the output paths. The
//! `replay` command deserializes a manifest's job and re-runs it; because
//! every source of randomness is seeded from the job, the replay is
//! byte-identical.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use feedbias_core::distributions::{yule_simon_log_pmf, YuleSimonParams};
use feedbias_core::error::{Error, Result};
use feedbias_core::estimation::{fit, nll_at_k, FitConfig, ParametricFamily};
use feedbias_core::evaluation::{offline_online_study, Policy, StudyConfig};
use feedbias_core::io::{
    fmt_real, read_dataset_jsonl, read_model_json, read_sidecar, write_dataset_jsonl,
    write_json_file, write_model_json, write_sidecar,
};
use feedbias_core::models::{base_prob_view, fit_empirical, BaseFamily, PositionBiasModel};
use feedbias_core::simulator::{simulate_dataset, Intervention, ItemCatalog, SimConfig};
use feedbias_core::ImpressionRecord;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// NLL cutoffs reported by `fit` on the held-out split.
const REPORT_KS: [u32; 5] = [5, 10, 25, 50, 100];

fn ensure_out_dir(out: &str) -> Result<PathBuf> {
    let dir = PathBuf::from(out);
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn require_file(path: &str, what: &str) -> Result<PathBuf> {
    let p = PathBuf::from(path);
    if !p.is_file() {
        return Err(Error::Usage(format!("{what} not found: {path}")));
    }
    Ok(p)
}

fn write_manifest(
    path: &Path,
    command: &str,
    config: Value,
    seed: u64,
    outputs: &BTreeMap<String, String>,
) -> Result<()> {
    let manifest = json!({
        "command": command,
        "config": config,
        "seed": seed,
        "tool_version": TOOL_VERSION,
        "outputs": outputs,
    });
    write_json_file(path, &manifest)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// simulate

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulateJob {
    pub sessions: u64,
    pub list_length: u32,
    pub items: u64,
    pub theta: Vec<f64>,
    pub quality_seed: u64,
    pub intervention: String,
    pub seed: u64,
    pub out: String,
}

pub fn run_simulate(job: &SimulateJob) -> Result<()> {
    let config = SimConfig {
        n_sessions: job.sessions,
        list_length: job.list_length,
        n_items: job.items,
        true_theta: job.theta.clone(),
        quality_seed: job.quality_seed,
        intervention: Intervention::parse(&job.intervention)?,
        seed: job.seed,
    };
    config.validate()?;
    let dir = ensure_out_dir(&job.out)?;

    let data = simulate_dataset(&config)?;
    let dataset_path = dir.join("dataset.jsonl");
    let sidecar_path = dir.join("ground_truth.json");
    let manifest_path = dir.join("simulate_manifest.json");
    write_dataset_jsonl(&dataset_path, &data)?;
    write_sidecar(&sidecar_path, &config)?;

    let outputs = BTreeMap::from([
        ("dataset".to_string(), dataset_path.display().to_string()),
        (
            "ground_truth".to_string(),
            sidecar_path.display().to_string(),
        ),
        ("manifest".to_string(), manifest_path.display().to_string()),
    ]);
    write_manifest(
        &manifest_path,
        "simulate",
        serde_json::to_value(job).expect("job serializes"),
        job.seed,
        &outputs,
    )?;

    println!("sessions: {}", config.n_sessions);
    println!("impressions: {}", data.len());
    print_view_rate_deciles(&data, config.list_length);
    println!("wrote {}", dataset_path.display());
    println!("wrote {}", sidecar_path.display());
    println!("wrote {}", manifest_path.display());
    Ok(())
}

fn print_view_rate_deciles(data: &[ImpressionRecord], list_length: u32) {
    // Ten equal-width rank buckets over 1..=list_length.
    let mut views = [0u64; 10];
    let mut totals = [0u64; 10];
    for rec in data {
        let bucket =
            (((rec.rank as u64 * 10).div_ceil(list_length as u64)) as usize).clamp(1, 10) - 1;
        totals[bucket] += 1;
        views[bucket] += rec.viewed as u64;
    }
    for d in 0..10 {
        if totals[d] == 0 {
            continue;
        }
        let lo = d as u32 * list_length / 10 + 1;
        let hi = (d as u32 + 1) * list_length / 10;
        println!(
            "view rate decile {} (ranks {}-{}): {:.4}",
            d + 1,
            lo,
            hi.max(lo),
            views[d] as f64 / totals[d] as f64
        );
    }
}

// ---------------------------------------------------------------------------
// fit

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitJob {
    pub dataset: String,
    pub family: String,
    pub k_cutoff: u32,
    pub max_iters: u32,
    pub tol: f64,
    pub step_size: f64,
    pub seed: u64,
    pub out: String,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Sessions go to the training split iff their hash lands in the low 80%.
pub fn is_train_session(session_id: u64, seed: u64) -> bool {
    splitmix64(session_id ^ splitmix64(seed)) % 100 < 80
}

pub fn run_fit(job: &FitJob) -> Result<()> {
    let dataset_path = require_file(&job.dataset, "dataset")?;
    let dir = ensure_out_dir(&job.out)?;
    let data = read_dataset_jsonl(&dataset_path)?;

    let (train, test): (Vec<_>, Vec<_>) = data
        .into_iter()
        .partition(|r| is_train_session(r.session_id, job.seed));
    if train.is_empty() || test.is_empty() {
        return Err(Error::Usage(
            "the train/test split left one side empty; need more sessions".into(),
        ));
    }

    let model = match job.family.as_str() {
        "dcg" => PositionBiasModel::Dcg,
        "empirical" => {
            let max_rank = train.iter().map(|r| r.rank).max().unwrap_or(1);
            fit_empirical(&train, max_rank)?
        }
        other => {
            let family = ParametricFamily::parse(other)?;
            let cfg = FitConfig {
                k_cutoff: job.k_cutoff,
                max_iters: job.max_iters,
                tol: job.tol,
                step_size: job.step_size,
                seed: job.seed,
                init: None,
            };
            let res = fit(family, &train, &cfg)?;
            println!(
                "fit {}: train NLL@{} = {:.6}, iterations = {}, converged = {}",
                family.name(),
                job.k_cutoff,
                res.final_nll,
                res.iterations,
                res.converged
            );
            res.model
        }
    };

    for k in REPORT_KS {
        match nll_at_k(&model, &test, k) {
            Ok(nll) => println!("test NLL@{k} = {nll:.6}"),
            Err(_) => println!("test NLL@{k} = n/a (no test records at ranks <= {k})"),
        }
    }

    let model_path = dir.join(format!("model_{}.json", job.family));
    let manifest_path = dir.join(format!("fit_{}_manifest.json", job.family));
    write_model_json(&model_path, &model)?;
    let outputs = BTreeMap::from([
        ("model".to_string(), model_path.display().to_string()),
        ("manifest".to_string(), manifest_path.display().to_string()),
    ]);
    write_manifest(
        &manifest_path,
        "fit",
        serde_json::to_value(job).expect("job serializes"),
        job.seed,
        &outputs,
    )?;
    println!("wrote {}", model_path.display());
    println!("wrote {}", manifest_path.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// eval

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalJob {
    pub dataset: String,
    pub sidecar: String,
    pub models: Vec<String>,
    pub ground_truth: bool,
    pub policies: String,
    pub trials: u32,
    pub mc_sessions: u64,
    pub sessions: Option<u64>,
    pub seed: u64,
    pub out: String,
}

fn parse_policies(spec: &str, catalog: &ItemCatalog) -> Result<Vec<(String, Policy)>> {
    let mut policies = Vec::new();
    for token in spec.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        let policy = if token == "oracle" {
            Policy::by_true_quality(catalog)
        } else if let Some(sd) = token.strip_prefix("noisy:") {
            let sd: f64 = sd
                .parse()
                .map_err(|_| Error::Usage(format!("bad noise sd in policy '{token}'")))?;
            if !(sd.is_finite() && sd > 0.0) {
                return Err(Error::Usage(format!("noise sd must be > 0 in '{token}'")));
            }
            // Hash the token so distinct noise levels draw distinct noise.
            Policy::by_noisy_quality(catalog, sd, splitmix64(sd.to_bits()))
        } else if let Some(seed) = token.strip_prefix("random:") {
            let seed: u64 = seed
                .parse()
                .map_err(|_| Error::Usage(format!("bad seed in policy '{token}'")))?;
            Policy::random(catalog.len() as u64, seed)
        } else {
            return Err(Error::Usage(format!(
                "unknown policy '{token}' (expected oracle, noisy:SD, or random:SEED)"
            )));
        };
        policies.push((token.to_string(), policy));
    }
    Ok(policies)
}

fn model_name_from_path(path: &str) -> String {
    Path::new(path)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.to_string())
}

pub fn run_eval(job: &EvalJob) -> Result<()> {
    require_file(&job.dataset, "dataset")?;
    let sidecar_path = require_file(&job.sidecar, "ground-truth sidecar")?;
    let dir = ensure_out_dir(&job.out)?;

    let mut sim = read_sidecar(&sidecar_path)?;
    if let Some(n) = job.sessions {
        sim.n_sessions = n;
    }
    sim.validate()?;

    let catalog = ItemCatalog::generate(sim.n_items, sim.quality_seed);
    let policies = parse_policies(&job.policies, &catalog)?;

    let mut models: Vec<(String, PositionBiasModel)> =
        vec![("dcg".to_string(), PositionBiasModel::Dcg)];
    for path in &job.models {
        let p = require_file(path, "model file")?;
        models.push((model_name_from_path(path), read_model_json(&p)?));
    }
    if job.ground_truth {
        models.push((
            "ground_truth".to_string(),
            PositionBiasModel::ContextualProb {
                theta: sim.true_theta.clone(),
            },
        ));
    }

    let study = StudyConfig {
        n_trials: job.trials,
        n_mc: job.mc_sessions,
        base_seed: job.seed,
    };
    let result = offline_online_study(&models, &policies, &sim, &study)?;

    let mut corr_csv = String::from("model,trial,correlation\n");
    for row in &result.rows {
        corr_csv.push_str(&format!(
            "{},{},{}\n",
            row.model,
            row.trial,
            fmt_real(row.correlation)
        ));
    }
    let mut summary_csv = String::from("model,mean_correlation,relative_improvement_vs_dcg_pct\n");
    for s in &result.summary {
        summary_csv.push_str(&format!(
            "{},{},{}\n",
            s.model,
            fmt_real(s.mean_correlation),
            fmt_real(s.relative_improvement_vs_dcg_pct)
        ));
        println!(
            "{}: mean correlation {:.4} ({:+.2}% vs dcg)",
            s.model, s.mean_correlation, s.relative_improvement_vs_dcg_pct
        );
    }

    let corr_path = dir.join("correlations.csv");
    let summary_path = dir.join("summary.csv");
    let manifest_path = dir.join("eval_manifest.json");
    write_text(&corr_path, &corr_csv)?;
    write_text(&summary_path, &summary_csv)?;
    let outputs = BTreeMap::from([
        ("correlations".to_string(), corr_path.display().to_string()),
        ("summary".to_string(), summary_path.display().to_string()),
        ("manifest".to_string(), manifest_path.display().to_string()),
    ]);
    write_manifest(
        &manifest_path,
        "eval",
        serde_json::to_value(job).expect("job serializes"),
        job.seed,
        &outputs,
    )?;
    println!("wrote {}", corr_path.display());
    println!("wrote {}", summary_path.display());
    println!("wrote {}", manifest_path.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// export-curves

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurvesJob {
    pub rhos: Vec<f64>,
    pub alphas: Vec<f64>,
    pub gammas: Vec<f64>,
    pub max_rank: u32,
    pub max_depth: u64,
    pub out: String,
}

pub fn run_curves(job: &CurvesJob) -> Result<()> {
    if job.max_rank < 1 {
        return Err(Error::Usage("max_rank must be >= 1".into()));
    }
    if job.max_depth < 1 {
        return Err(Error::Usage("max_depth must be >= 1".into()));
    }
    let dir = ensure_out_dir(&job.out)?;

    // Curves are exported unclamped: the estimation layer's probability
    // floor is a fitting guard, not part of the curve shapes.
    let mut shapes: Vec<(String, Option<(BaseFamily, f64)>)> = vec![("dcg".to_string(), None)];
    for &alpha in &job.alphas {
        PositionBiasModel::log(alpha)?;
        shapes.push((
            format!("log(alpha={alpha})"),
            Some((BaseFamily::Log, alpha)),
        ));
    }
    for &gamma in &job.gammas {
        PositionBiasModel::exp(gamma)?;
        shapes.push((
            format!("exp(gamma={gamma})"),
            Some((BaseFamily::Exp, gamma)),
        ));
    }
    for &rho in &job.rhos {
        PositionBiasModel::prob(rho)?;
        shapes.push((format!("prob(rho={rho})"), Some((BaseFamily::Prob, rho))));
    }

    let mut curves = String::from("rank,model_label,prob_view\n");
    for (label, shape) in &shapes {
        for rank in 1..=job.max_rank as u64 {
            let p = match shape {
                None => 1.0 / (rank as f64 + 1.0).log2(),
                Some((base, param)) => base_prob_view(*base, *param, rank),
            };
            curves.push_str(&format!("{rank},{label},{}\n", fmt_real(p)));
        }
    }

    let mut pmf_csv = String::from("depth,rho,pmf\n");
    for &rho in &job.rhos {
        let params = YuleSimonParams::new(rho)?;
        for depth in 1..=job.max_depth {
            let pmf = yule_simon_log_pmf(&params, depth)?.exp();
            pmf_csv.push_str(&format!("{depth},{rho},{}\n", fmt_real(pmf)));
        }
    }

    let curves_path = dir.join("position_bias_curves.csv");
    let pmf_path = dir.join("scroll_depth_pmf.csv");
    let manifest_path = dir.join("curves_manifest.json");
    write_text(&curves_path, &curves)?;
    write_text(&pmf_path, &pmf_csv)?;
    let outputs = BTreeMap::from([
        ("curves".to_string(), curves_path.display().to_string()),
        ("pmf".to_string(), pmf_path.display().to_string()),
        ("manifest".to_string(), manifest_path.display().to_string()),
    ]);
    write_manifest(
        &manifest_path,
        "export-curves",
        serde_json::to_value(job).expect("job serializes"),
        0,
        &outputs,
    )?;
    println!("wrote {}", curves_path.display());
    println!("wrote {}", pmf_path.display());
    println!("wrote {}", manifest_path.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// replay

pub fn run_replay(manifest_path: &str) -> Result<()> {
    let path = require_file(manifest_path, "manifest")?;
    let text = fs::read_to_string(&path)?;
    let value: Value =
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("bad manifest: {e}")))?;
    let command = value
        .get("command")
        .and_then(Value::as_str)
        .ok_or_else(|| Error::Parse("manifest is missing the command field".into()))?
        .to_string();
    let config = value
        .get("config")
        .cloned()
        .ok_or_else(|| Error::Parse("manifest is missing the config field".into()))?;

    let bad = |e: serde_json::Error| {
        Error::Parse(format!("manifest config does not match {command}: {e}"))
    };
    match command.as_str() {
        "simulate" => run_simulate(&serde_json::from_value(config).map_err(bad)?),
        "fit" => run_fit(&serde_json::from_value(config).map_err(bad)?),
        "eval" => run_eval(&serde_json::from_value(config).map_err(bad)?),
        "export-curves" => run_curves(&serde_json::from_value(config).map_err(bad)?),
        other => Err(Error::Usage(format!(
            "unknown command in manifest: {other}"
        ))),
    }
}
