//! End-to-end fitting checks against the simulator as ground truth.

use feedbias_core::distributions::{survival, YuleSimonParams};
use feedbias_core::estimation::{fit, nll_at_k, FitConfig, ParametricFamily};
use feedbias_core::models::{fit_empirical, link_inverse, LinkKind, PositionBiasModel};
use feedbias_core::simulator::{simulate_dataset, Intervention, SimConfig};

fn scalar_config(rho: f64, n_sessions: u64, seed: u64) -> SimConfig {
    SimConfig {
        n_sessions,
        list_length: 20,
        n_items: 100,
        true_theta: vec![link_inverse(rho, LinkKind::Softplus), 0.0, 0.0],
        quality_seed: 7,
        intervention: Intervention::FullShuffle,
        seed,
    }
}

#[test]
fn recovers_scalar_shape_parameter() {
    let data = simulate_dataset(&scalar_config(1.5, 10_000, 101)).unwrap();
    let cfg = FitConfig {
        k_cutoff: 100,
        ..FitConfig::default()
    };
    let res = fit(ParametricFamily::Prob, &data, &cfg).unwrap();
    let rho = match res.model {
        PositionBiasModel::Prob { rho } => rho,
        ref m => panic!("unexpected model {m:?}"),
    };
    assert!((rho - 1.5).abs() < 0.05, "fitted rho = {rho}");
    assert!(res.converged);

    // The fitted NLL cannot be far above the truth's.
    let truth = PositionBiasModel::prob(1.5).unwrap();
    let truth_nll = nll_at_k(&truth, &data, cfg.k_cutoff).unwrap();
    assert!(res.final_nll <= truth_nll + 1e-3);
}

#[test]
fn empirical_table_matches_survival() {
    let data = simulate_dataset(&scalar_config(1.0, 100_000, 55)).unwrap();
    let model = fit_empirical(&data, 20).unwrap();
    let params = YuleSimonParams::new(1.0).unwrap();
    for r in [2u64, 4, 10] {
        let p = model.prob_view(r, None).unwrap();
        let expected = survival(&params, r).unwrap();
        assert!((p - expected).abs() < 0.01, "rank {r}: {p} vs {expected}");
    }
}

#[test]
fn contextual_fit_beats_scalar_fit_on_contextual_data() {
    let cfg = SimConfig {
        n_sessions: 3000,
        list_length: 30,
        n_items: 100,
        true_theta: vec![0.5, -0.25, -0.05],
        quality_seed: 7,
        intervention: Intervention::FullShuffle,
        seed: 2024,
    };
    let data = simulate_dataset(&cfg).unwrap();
    let fit_cfg = FitConfig {
        k_cutoff: 30,
        ..FitConfig::default()
    };
    let scalar = fit(ParametricFamily::Prob, &data, &fit_cfg).unwrap();
    let contextual = fit(ParametricFamily::ContextualProb, &data, &fit_cfg).unwrap();
    assert!(
        contextual.final_nll < scalar.final_nll,
        "contextual {} vs scalar {}",
        contextual.final_nll,
        scalar.final_nll
    );
}

#[test]
fn recovery_tightens_with_data() {
    // Median absolute error over a few seeds shrinks as sessions grow.
    let sizes = [500u64, 5_000, 50_000];
    let mut medians = Vec::new();
    for &n in &sizes {
        let mut errs: Vec<f64> = (0..5u64)
            .map(|seed| {
                let data = simulate_dataset(&scalar_config(1.5, n, 300 + seed)).unwrap();
                let cfg = FitConfig {
                    k_cutoff: 100,
                    ..FitConfig::default()
                };
                let res = fit(ParametricFamily::Prob, &data, &cfg).unwrap();
                match res.model {
                    PositionBiasModel::Prob { rho } => (rho - 1.5).abs(),
                    ref m => panic!("unexpected model {m:?}"),
                }
            })
            .collect();
        errs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        medians.push(errs[errs.len() / 2]);
    }
    // With only 5 seeds per size, adjacent sizes are noisy; require the
    // hundredfold increase to help.
    assert!(medians[2] <= medians[0], "medians {medians:?}");
}
