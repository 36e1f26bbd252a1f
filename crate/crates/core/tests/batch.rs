use advsim::intention::IntentionConfig;
use advsim::scenario::{synth_scenario, Scenario, Template};
use advsim::sim::{batch_run, derive_seed, run_scenario, IntentionMode, RolloutLog, SimConfig};

fn suite(n: usize) -> Vec<Scenario> {
    (0..n)
        .map(|i| synth_scenario(i as u64 / 4, Template::ALL[i % 4]))
        .collect()
}

#[test]
fn batch_of_one_is_run_scenario() {
    let s = suite(2).pop().unwrap();
    let cfg = SimConfig {
        seed: 9,
        ..SimConfig::default()
    };
    let batch = batch_run(std::slice::from_ref(&s), &cfg);
    let solo = run_scenario(
        &s,
        &SimConfig {
            seed: derive_seed(9, 0),
            ..cfg.clone()
        },
    )
    .unwrap();
    assert_eq!(batch[0].as_ref().unwrap(), &solo);
}

#[test]
fn permuted_input_gives_permuted_output() {
    // Without planner rollouts among the AV candidates the outcome does not
    // depend on the per-scenario seed.
    let cfg = SimConfig {
        intention: IntentionConfig {
            k_av_candidates: 2,
            ..IntentionConfig::default()
        },
        ..SimConfig::default()
    };
    let scenarios = suite(6);
    let perm = [4usize, 0, 5, 2, 1, 3];
    let permuted: Vec<Scenario> = perm.iter().map(|&i| scenarios[i].clone()).collect();
    let strip = |mut l: RolloutLog| {
        l.seed = 0;
        l
    };
    let a: Vec<RolloutLog> = batch_run(&scenarios, &cfg)
        .into_iter()
        .map(|r| strip(r.unwrap()))
        .collect();
    let b: Vec<RolloutLog> = batch_run(&permuted, &cfg)
        .into_iter()
        .map(|r| strip(r.unwrap()))
        .collect();
    for (k, &i) in perm.iter().enumerate() {
        assert_eq!(b[k], a[i], "slot {k}");
    }
}

#[test]
fn hundred_scenarios_without_cross_talk() {
    let cfg = SimConfig {
        intention_mode: IntentionMode::Heuristic,
        seed: 3,
        ..SimConfig::default()
    };
    let scenarios = suite(100);
    let logs = batch_run(&scenarios, &cfg);
    assert_eq!(logs.len(), 100);
    for (i, (s, l)) in scenarios.iter().zip(&logs).enumerate() {
        let solo = run_scenario(
            s,
            &SimConfig {
                seed: derive_seed(3, i as u64),
                ..cfg.clone()
            },
        )
        .unwrap();
        assert_eq!(l.as_ref().unwrap(), &solo, "scenario {i}");
    }
}

#[test]
fn failures_stay_in_their_slot() {
    let mut scenarios = suite(3);
    scenarios[1].dt = 0.3;
    let logs = batch_run(&scenarios, &SimConfig::default());
    assert!(logs[0].is_ok() && logs[2].is_ok());
    assert!(logs[1].is_err());
}
