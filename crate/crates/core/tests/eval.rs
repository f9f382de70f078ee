use std::fs;

use greenlaunch::eval::{
    action_agreement, eval_seeds, evaluate, rollout_values, run_experiment, AgentEntry, AgentKind, DatasetRecipe, ExperimentId,
    ExperimentSpec, CURVES_HEADER, RESULTS_HEADER,
};
use greenlaunch::heuristics::HeuristicKind;
use greenlaunch::policy::{NoOpPolicy, Policy, RandomPolicy};
use greenlaunch::sim::{encode_observation, DatacenterState, SimConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn cfg() -> SimConfig {
    SimConfig::with_resources(10)
}

#[test]
fn noop_completes_nothing() {
    let r = evaluate(&NoOpPolicy, &cfg(), 3, 500, 7).unwrap();
    assert_eq!(r.per_rollout, vec![0.0; 3]);
    assert_eq!(r.ci95, 0.0);
}

#[test]
fn qos_beats_random_on_every_seed() {
    for seed in 0..5 {
        let q = evaluate(&HeuristicKind::Qos, &cfg(), 10, 2000, seed).unwrap();
        let r = evaluate(&RandomPolicy, &cfg(), 10, 2000, seed).unwrap();
        assert!(q.mean > r.mean, "seed {seed}: qos {} vs random {}", q.mean, r.mean);
    }
}

#[test]
fn evaluation_is_deterministic() {
    let a = evaluate(&RandomPolicy, &cfg(), 4, 300, 11).unwrap();
    let b = evaluate(&RandomPolicy, &cfg(), 4, 300, 11).unwrap();
    assert_eq!(a, b);
    let c = evaluate(&RandomPolicy, &cfg(), 4, 300, 12).unwrap();
    assert_ne!(a.per_rollout, c.per_rollout);
}

#[test]
fn value_is_sum_of_completed_job_values() {
    let config = cfg();
    let values = rollout_values(&HeuristicKind::Sjf, &config, 2, 400, 5).unwrap();
    let mut episode = config.clone();
    episode.episode_len = 400;
    for (i, v) in values.iter().enumerate() {
        let (env_seed, policy_seed) = eval_seeds(5, i);
        let mut env = DatacenterState::reset(&episode, env_seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(policy_seed);
        let (mut completed, mut reward) = (0.0, 0.0);
        while !env.is_done() {
            let obs = encode_observation(&env);
            let step = env.step(HeuristicKind::Sjf.act(&env, &obs, &mut rng)).unwrap();
            completed += step.info.completed_value;
            reward += step.reward;
        }
        assert!((completed - v).abs() < 1e-6 * v.max(1.0));
        // Violation penalties only ever lower the return below the completed value.
        assert!(reward <= completed + 1e-9);
    }
}

#[test]
fn heuristic_agrees_with_itself() {
    for h in HeuristicKind::ALL {
        assert_eq!(action_agreement(&h, h, &cfg(), 2, 300, 3).unwrap(), 1.0);
    }
}

#[test]
fn random_agreement_is_one_over_action_count() {
    let config = cfg();
    let (n, steps) = (10, 2000);
    let a = action_agreement(&RandomPolicy, HeuristicKind::Qos, &config, n, steps, 9).unwrap();
    let p = 1.0 / config.n_actions() as f64;
    let sigma = (p * (1.0 - p) / (n * steps) as f64).sqrt();
    assert!((a - p).abs() < 3.0 * sigma, "agreement {a}, expected {p} +- {}", 3.0 * sigma);
}

fn tiny_spec(experiment: ExperimentId, dir: &std::path::Path) -> ExperimentSpec {
    let mut spec = ExperimentSpec::new(experiment);
    spec.resources = vec![10];
    spec.seeds = vec![0, 1];
    spec.output_dir = dir.to_path_buf();
    spec.data.rollouts = 2;
    spec.data.steps = 150;
    spec.eval.rollouts = 2;
    spec.eval.steps = 150;
    spec.eval.curve_rollouts = 1;
    spec.agent.offline_steps = 20;
    spec.agent.pretrain_steps = 20;
    spec.agent.online_steps = 60;
    spec.agent.finetune_steps = 60;
    spec.agent.learning_starts = 10;
    spec.agent.batch_size = 16;
    spec
}

#[test]
fn experiment_writes_one_row_per_cell_metric_plus_summaries() {
    let dir = tempfile::tempdir().unwrap();
    let spec = tiny_spec(ExperimentId::OfflineVsBc, dir.path());
    let out = run_experiment(&spec).unwrap();
    assert!(out.is_complete());
    let text = fs::read_to_string(dir.path().join("results.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(RESULTS_HEADER));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert!(rows.iter().all(|r| r.len() == 6 && r[0] == "offline_vs_bc" && r[2] == "10"));
    // value, value_ci95, four per-heuristic agreements and their max.
    let per_seed = rows.iter().filter(|r| r[3] != "all").count();
    assert_eq!(per_seed, 2 * 2 * 7);
    assert_eq!(rows.len() - per_seed, 2 * 7 * 2);
    for agent in ["bc_combo", "offline_combo"] {
        for seed in ["0", "1"] {
            assert!(rows.iter().any(|r| r[1] == agent && r[3] == seed && r[4] == "value"));
        }
        assert!(rows.iter().any(|r| r[1] == agent && r[3] == "all" && r[4] == "value_mean"));
    }
    for f in ["value_vs_resources.svg", "agreement.svg", "spec.toml", "datasets/combo_r10.dataset"] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
    assert!(!dir.path().join("failures.csv").exists());
}

#[test]
fn experiment_reruns_are_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_experiment(&tiny_spec(ExperimentId::OfflineVsBc, a.path())).unwrap();
    run_experiment(&tiny_spec(ExperimentId::OfflineVsBc, b.path())).unwrap();
    for f in ["results.csv", "datasets/combo_r10.dataset"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f} differs");
    }
}

#[test]
fn failed_cells_are_recorded_and_the_rest_still_run() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = tiny_spec(ExperimentId::BcQuality, dir.path());
    spec.seeds = vec![0];
    spec.datasets.insert(
        "missing".into(),
        DatasetRecipe {
            path: Some(dir.path().join("nope_{resources}.dataset")),
            ..Default::default()
        },
    );
    spec.agents = vec![
        AgentEntry {
            name: "bc_missing".into(),
            algo: AgentKind::Bc,
            data: Some("missing".into()),
            heuristic: None,
            filter: None,
        },
        AgentEntry {
            name: "qos".into(),
            algo: AgentKind::Heuristic,
            data: None,
            heuristic: Some(HeuristicKind::Qos),
            filter: None,
        },
    ];
    let out = run_experiment(&spec).unwrap();
    assert_eq!(out.failures.len(), 1);
    assert_eq!(out.failures[0].agent, "bc_missing");
    assert!(out.rows.iter().any(|r| r.agent == "qos" && r.metric == "value"));
    assert!(out.rows.iter().any(|r| r.agent == "bc_missing" && r.metric == "failed"));
    assert!(dir.path().join("failures.csv").exists());
}

#[test]
fn launchpad_reports_curves_and_steps_to_target() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = tiny_spec(ExperimentId::Launchpad, dir.path());
    spec.seeds = vec![0];
    spec.agent.eval_every = 20;
    let out = run_experiment(&spec).unwrap();
    assert!(out.is_complete(), "{:?}", out.failures);
    let curves = fs::read_to_string(dir.path().join("curves.csv")).unwrap();
    assert_eq!(curves.lines().next(), Some(CURVES_HEADER));
    for agent in ["online", "offline_online_qos"] {
        let steps: Vec<usize> = curves
            .lines()
            .skip(1)
            .map(|l| l.split(',').collect::<Vec<_>>())
            .filter(|r| r[1] == agent)
            .map(|r| r[4].parse().unwrap())
            .collect();
        assert_eq!(steps.first(), Some(&0), "{agent}");
        assert!(steps.windows(2).all(|w| w[0] < w[1]) && *steps.last().unwrap() <= 60, "{agent}: {steps:?}");
        let hit = out.rows.iter().find(|r| r.agent == agent && r.metric == "steps_to_target").unwrap();
        assert!(hit.value > 0.0 && hit.value <= 60.0);
    }
    assert!(dir.path().join("curves.svg").exists());
}

#[test]
fn spec_file_paths_resolve_against_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("exp.toml");
    fs::write(&path, "schema_version = 1\nexperiment = \"agreement\"\noutput_dir = \"out\"\n").unwrap();
    let spec = ExperimentSpec::load(&path).unwrap();
    assert_eq!(spec.output_dir, dir.path().join("out"));
    assert_eq!(spec.agent_entries().len(), 9);
}
