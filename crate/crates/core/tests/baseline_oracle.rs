use knobtune::baseline::{dds_sample, run_baseline, BaselineConfig, SearchBounds};
use knobtune::env::{ProfileSet, SimEnv};
use knobtune::harness::{run_grid_oracle, true_objective};
use knobtune::objective::ObjectiveSpec;
use knobtune::param_space::Configuration;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const PROFILES: [&str; 5] = ["file_server", "video_server", "seq_write", "seq_read", "random_rw"];

fn sim(profile: &str, noise: f64) -> SimEnv {
    let mut env = SimEnv::new(ProfileSet::builtin().get(profile).unwrap().clone(), 17);
    env.set_noise(noise).unwrap();
    env
}

fn throughput() -> ObjectiveSpec {
    ObjectiveSpec::new([("throughput", 1.0)])
}

#[test]
fn oracle_finds_configured_optimum() {
    for name in PROFILES {
        let env = sim(name, 0.05);
        for metric in ["throughput", "iops"] {
            let obj = ObjectiveSpec::new([(metric, 1.0)]);
            let o = run_grid_oracle(&env, &obj, &[1, 25]).unwrap();
            let want = &env.profile().indicator(metric).unwrap().primary.optimum;
            assert_eq!(o.config.values[0], want[0], "{name}/{metric}");
            // configured optima are grid points rounded to whole bytes
            assert!((o.config.values[1] - want[1]).abs() < 1.0, "{name}/{metric}: {:?} vs {:?}", o.config.values, want);
            // the surface peak is 1 / 1.25 of the normalization ceiling
            assert!((o.objective - 0.8).abs() < 1e-6);
        }
    }
}

#[test]
fn oracle_brute_force_cross_check() {
    // independent enumeration over the same grid
    let env = sim("random_rw", 0.0);
    let obj = ObjectiveSpec::new([("throughput", 1.0), ("iops", 1.0)]);
    let o = run_grid_oracle(&env, &obj, &[1, 25]).unwrap();
    let mut best = f64::NEG_INFINITY;
    for count in 1..=6 {
        for j in 0..25 {
            let size = 2f64.powf(16.0 + 10.0 * j as f64 / 24.0);
            let v = true_objective(&env, &Configuration::new(vec![count as f64, size]), &obj).unwrap();
            best = best.max(v);
        }
    }
    assert!((o.objective - best).abs() < 1e-9);
    // conflicting optima: the weighted optimum is neither single-metric optimum
    let t = run_grid_oracle(&env, &throughput(), &[1, 25]).unwrap();
    let i = run_grid_oracle(&env, &ObjectiveSpec::new([("iops", 1.0)]), &[1, 25]).unwrap();
    assert_ne!(t.config, i.config);
}

#[test]
fn oracle_discrete_only_enumerates_product() {
    let text = r#"
        [[params]]
        name = "a"
        kind = "discrete"
        min = 1
        max = 4
        restart = "workload"

        [[params]]
        name = "b"
        kind = "discrete"
        min = 0
        max = 2
        restart = "dfs"

        [[metrics]]
        name = "throughput"
        scope = "server"

        [[profiles]]
        name = "tiny"
        noise = 0.0
        default = [1, 0]

        [[profiles.indicators]]
        metric = "throughput"
        peak = 10
        optimum = [3, 1]
        width = [0.2, 0.2]
    "#;
    let set = ProfileSet::from_toml(text).unwrap();
    let env = SimEnv::new(set.get("tiny").unwrap().clone(), 0);
    let o = run_grid_oracle(&env, &throughput(), &[1, 1]).unwrap();
    assert_eq!(o.evaluated, 4 * 3);
    assert_eq!(o.config.values, vec![3.0, 1.0]);
}

#[test]
fn baseline_rounds_and_best_so_far() {
    let obj = throughput();
    let mut env = sim("seq_write", 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let t = run_baseline(&mut env, &obj, 30, &BaselineConfig::default(), &mut rng).unwrap();
    assert_eq!(t.entries.len(), 30);
    assert_eq!(t.round_starts, vec![0, 10, 20]);
    let mut prev = f64::NEG_INFINITY;
    for (e, b) in t.entries.iter().zip(&t.best_so_far) {
        prev = prev.max(e.objective);
        assert_eq!(*b, prev);
    }
    // each round covers every interval of its bounds once per parameter
    for (r, bounds) in t.round_bounds.iter().enumerate() {
        let entries: Vec<_> = t.entries.iter().filter(|e| e.round == r).collect();
        for p in 0..2 {
            let mut cells: Vec<usize> = entries
                .iter()
                .map(|e| ((e.unit[p] - bounds.lo[p]) / bounds.width(p) * 10.0).floor() as usize)
                .collect();
            cells.sort();
            assert_eq!(cells, (0..10).collect::<Vec<_>>(), "round {r} param {p}");
        }
    }
    // widths halve each round
    assert!((t.round_bounds[2].width(0) - 0.25).abs() < 1e-12);
}

#[test]
fn baseline_reaches_most_of_oracle_on_seq_write() {
    let obj = throughput();
    let oracle = run_grid_oracle(&sim("seq_write", 0.0), &obj, &[1, 25]).unwrap();
    for seed in 0..5 {
        let mut env = sim("seq_write", 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = run_baseline(&mut env, &obj, 30, &BaselineConfig::default(), &mut rng).unwrap();
        let best = t.best_so_far.last().unwrap();
        assert!(*best >= 0.8 * oracle.objective, "seed {seed}: {best} vs {}", oracle.objective);
        let rec = t.recommended().unwrap();
        assert!(t.entries.iter().any(|e| &e.config == rec));
    }
}

#[test]
fn dds_points_valid_on_shipped_space() {
    let env = sim("video_server", 0.0);
    let space = env.profile().space();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for n in [2, 4, 10, 37] {
        for p in dds_sample(space, &SearchBounds::full(2), n, &mut rng).unwrap() {
            assert!(space.validate(&p.config).unwrap().is_empty());
        }
    }
}
