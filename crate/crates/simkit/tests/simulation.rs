use proptest::prelude::*;
use simkit::{
    generate_circle_crossing, generate_dataset, generate_scene, generate_scenes, load_tsv,
    read_manifest, render_tsv, rollout, simulate_scene, Placement, SimConfig, Split, SplitCounts,
};

#[test]
fn head_on_pair_keeps_style_separation() {
    let cfg = SimConfig::default();
    for d in [0.0, 0.1, 0.3, 0.5, 0.8] {
        let agents = generate_circle_crossing(2, 4.0, 0, Placement::Symmetric, &cfg).unwrap();
        let frames = rollout(&agents, &cfg.style(d), 11, &cfg, 1).unwrap();
        let min = frames
            .iter()
            .map(|f| (f[0] - f[1]).norm())
            .fold(f64::INFINITY, f64::min);
        assert!(
            min >= 2.0 * cfg.radius + d - 0.05,
            "d = {d}: min distance {min}"
        );
    }
}

#[test]
fn ten_agents_start_apart() {
    let cfg = SimConfig::default();
    for seed in 0..20 {
        let agents = generate_circle_crossing(10, 4.0, seed, Placement::Perturbed, &cfg).unwrap();
        for i in 0..agents.len() {
            for j in i + 1..agents.len() {
                let d = (agents[i].position - agents[j].position).norm();
                assert!(d > 2.0 * cfg.radius, "seed {seed}: agents {i},{j} at {d}");
            }
        }
    }
}

#[test]
fn same_seed_same_scene_bytes() {
    let cfg = SimConfig::default();
    let a = generate_scene(0.3, Split::Train, 4, 99, &cfg).unwrap();
    let b = generate_scene(0.3, Split::Train, 4, 99, &cfg).unwrap();
    assert_eq!(render_tsv(std::slice::from_ref(&a)), render_tsv(&[b]));
    let agents = generate_circle_crossing(3, 4.0, 5, Placement::Perturbed, &cfg).unwrap();
    let s1 = simulate_scene(&agents, &cfg.style(0.2), 8, &cfg, "x", "e").unwrap();
    let s2 = simulate_scene(&agents, &cfg.style(0.2), 8, &cfg, "x", "e").unwrap();
    assert_eq!(s1, s2);
}

#[test]
fn wider_separation_from_same_seed() {
    let cfg = SimConfig::default();
    let agents = generate_circle_crossing(4, 4.0, 21, Placement::Perturbed, &cfg).unwrap();
    let narrow = simulate_scene(&agents, &cfg.style(0.1), 21, &cfg, "a", "e").unwrap();
    let wide = simulate_scene(&agents, &cfg.style(0.5), 21, &cfg, "b", "e").unwrap();
    assert!(wide.mean_min_distance().unwrap() > narrow.mean_min_distance().unwrap());
}

#[test]
fn mean_min_distance_grows_with_style() {
    let cfg = SimConfig::default();
    let mut previous = 0.0;
    for d in [0.1, 0.3, 0.5, 0.7] {
        let scenes = generate_scenes(d, Split::Test, 100, 2024, &cfg).unwrap();
        let mean = scenes
            .iter()
            .map(|s| s.mean_min_distance().unwrap())
            .sum::<f64>()
            / scenes.len() as f64;
        assert!(mean >= previous, "d = {d}: {mean} < {previous}");
        previous = mean;
    }
}

#[test]
fn scenes_are_collision_free_and_speed_bounded() {
    let cfg = SimConfig::default();
    let max_allowed = cfg.preferred_speed[1] * cfg.max_speed_factor;
    for d in [0.1, 0.3, 0.5, 0.8] {
        for scene in generate_scenes(d, Split::Train, 40, 5, &cfg).unwrap() {
            assert!(
                scene.min_pairwise_distance().unwrap() >= 2.0 * cfg.radius - 0.02,
                "{}",
                scene.scene_id
            );
            assert!(
                scene.max_speed() <= max_allowed + 1e-9,
                "{}",
                scene.scene_id
            );
            assert_eq!(scene.n_frames(), cfg.scene_len);
        }
    }
}

#[test]
fn dataset_layout_and_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SimConfig::default();
    let counts = SplitCounts {
        train: 10,
        val: 3,
        test: 5,
    };
    for d in [0.1, 0.3, 0.5] {
        generate_dataset(dir.path(), d, counts, 1, &cfg).unwrap();
    }
    let mut envs: Vec<_> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    envs.sort();
    assert_eq!(envs, ["style-0.1", "style-0.3", "style-0.5"]);

    let env = dir.path().join("style-0.3");
    let manifest = read_manifest(&env).unwrap();
    assert_eq!(manifest.counts, counts);
    assert_eq!(manifest.separation, 0.3);
    let sizes: Vec<usize> = ["train", "val", "test"]
        .iter()
        .map(|s| {
            load_tsv(&env.join(format!("{s}.tsv")), "style-0.3", cfg.dt)
                .unwrap()
                .len()
        })
        .collect();
    assert_eq!(sizes, [10, 3, 5]);
}

#[test]
fn zero_counts_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let counts = SplitCounts {
        train: 1,
        val: 0,
        test: 1,
    };
    assert!(generate_dataset(dir.path(), 0.3, counts, 1, &SimConfig::default()).is_err());
}

#[test]
fn loaded_scenes_match_generated_ones() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SimConfig::default();
    let scenes = generate_scenes(0.4, Split::Val, 6, 3, &cfg).unwrap();
    let path = dir.path().join("val.tsv");
    simkit::write_tsv(&path, &scenes).unwrap();
    let back = load_tsv(&path, "style-0.4", cfg.dt).unwrap();
    assert_eq!(back.len(), scenes.len());
    for (a, b) in scenes.iter().zip(&back) {
        assert_eq!(a.n_agents(), b.n_agents());
        for (ta, tb) in a.tracks.iter().zip(&b.tracks) {
            for (pa, pb) in ta.iter().zip(tb) {
                assert!((pa[0] - pb[0]).abs() <= 5e-7 && (pa[1] - pb[1]).abs() <= 5e-7);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn random_scenes_respect_invariants(seed in any::<u64>(), d in 0.0f64..0.8) {
        let cfg = SimConfig::default();
        let scene = generate_scene(d, Split::Train, 0, seed, &cfg).unwrap();
        prop_assert!(scene.min_pairwise_distance().unwrap() >= 2.0 * cfg.radius - 0.02);
        prop_assert!(scene.max_speed() <= cfg.preferred_speed[1] * cfg.max_speed_factor + 1e-9);
    }
}
