mod common;

use common::{effective_weights, linear_model, pooled_least_squares, toy_config, toy_envs};
use forecast::dataio::{invariant_dim, window_scenes, EnvData, Split, TrajectoryScene};
use forecast::model::Architecture;
use forecast::suites::style_env;
use forecast::trainer::{
    train_contrastive, train_erm, train_invariant, train_modular_staged, train_styled,
    validate_invariant, Stage, StageEpochs, TrainConfig,
};
use forecast::{Group, ModularModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use simkit::{SimConfig, SplitCounts};

#[test]
fn erm_on_the_toy_lands_on_pooled_least_squares() {
    let envs = toy_envs(1000, 11);
    let mut m = linear_model(1);
    train_erm(&mut m, &envs, &toy_config(150, 0.0)).unwrap();
    let w = effective_weights(&m);
    let ls = pooled_least_squares(&envs);
    // spreads 2 and 1 with coefficients ±1 pool to (4 - 1) / 5
    assert!((ls[1] - 0.6).abs() < 0.05, "{ls:?}");
    for k in 0..3 {
        assert!((w[k] - ls[k]).abs() < 0.02, "{w:?} vs {ls:?}");
    }
    assert!(w[1].abs() > 0.3);
}

#[test]
fn strong_penalty_drops_the_unstable_input() {
    let envs = toy_envs(1000, 12);
    let mut m = linear_model(2);
    train_invariant(&mut m, &envs, &toy_config(150, 100.0)).unwrap();
    let w = effective_weights(&m);
    assert!(w[1].abs() < 0.05, "{w:?}");
    assert!((w[0] - 1.0).abs() < 0.1, "{w:?}");
}

fn straight_scene(rng: &mut ChaCha8Rng, i: usize) -> TrajectoryScene {
    let heading = rng.gen_range(0.0..std::f64::consts::TAU);
    let speed = rng.gen_range(0.3..0.5);
    let start = [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)];
    let track = (0..20)
        .map(|t| {
            let s = speed * t as f64;
            [start[0] + s * heading.cos(), start[1] + s * heading.sin()]
        })
        .collect();
    TrajectoryScene::new(format!("cv-{i}"), "cv", 0.4, vec![0], vec![track]).unwrap()
}

fn cv_env(n: usize, seed: u64) -> EnvData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = |n: usize| {
        let scenes: Vec<_> = (0..n).map(|i| straight_scene(&mut rng, i)).collect();
        Split::from_windows(&window_scenes(&scenes)).unwrap()
    };
    EnvData {
        id: "cv".into(),
        train: split(n),
        val: split(n / 4),
    }
}

#[test]
fn constant_velocity_is_learned_to_centimeters() {
    let env = cv_env(2000, 3);
    let mut m = ModularModel::new(Architecture::trajectory(invariant_dim(false)), 0).unwrap();
    m.fit_scaling(&[&env.train]).unwrap();
    let cfg = TrainConfig {
        epochs: StageEpochs {
            backbone: 100,
            ..StageEpochs::default()
        },
        ..TrainConfig::default()
    };
    assert_eq!(cfg.batch_size, 64);
    let out = train_erm(&mut m, std::slice::from_ref(&env), &cfg).unwrap();
    let (_, ade) = validate_invariant(&m, &[env], 0.0, 2).unwrap();
    assert!(ade < 0.01, "val ADE {ade}, best epoch {:?}", out.best_epoch);
}

fn style_envs() -> Vec<EnvData> {
    let counts = SplitCounts {
        train: 30,
        val: 10,
        test: 1,
    };
    [0.1, 0.5]
        .iter()
        .map(|&d| {
            style_env(d, counts, 5, &SimConfig::default())
                .unwrap()
                .env_data()
        })
        .collect()
}

fn short_cfg(seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        epochs: StageEpochs {
            backbone: 2,
            contrastive: 2,
            modulator: 2,
            joint: 2,
        },
        ..TrainConfig::default()
    }
}

fn style_model(envs: &[EnvData], seed: u64) -> ModularModel {
    let mut m = ModularModel::new(Architecture::trajectory(invariant_dim(false)), seed).unwrap();
    m.fit_scaling(&envs.iter().map(|e| &e.train).collect::<Vec<_>>())
        .unwrap();
    m
}

#[test]
fn later_stages_leave_frozen_groups_bit_identical() {
    let envs = style_envs();
    let cfg = short_cfg(1);
    let mut m = style_model(&envs, 1);
    train_erm(&mut m, &envs, &cfg).unwrap();
    let phi = m.group_hash(Group::Phi);
    let g = m.group_hash(Group::G);

    let before = m.clone();
    train_contrastive(&mut m, &envs, &cfg).unwrap();
    for grp in [Group::Phi, Group::F, Group::G] {
        assert_eq!(m.group_hash(grp), before.group_hash(grp), "{}", grp.name());
    }
    let before = m.clone();
    train_styled(&mut m, &envs, &cfg, Stage::Modulator).unwrap();
    for grp in [Group::Phi, Group::Psi, Group::G, Group::H] {
        assert_eq!(m.group_hash(grp), before.group_hash(grp), "{}", grp.name());
    }
    train_styled(&mut m, &envs, &cfg, Stage::Joint).unwrap();
    assert_eq!(m.group_hash(Group::Phi), phi);
    assert_ne!(m.group_hash(Group::G), g);
}

#[test]
fn staged_run_reproduces_its_checkpoint_hash() {
    let envs = style_envs();
    let run = || {
        let mut m = style_model(&envs, 4);
        let stages = train_modular_staged(&mut m, &envs, &short_cfg(4), Stage::Backbone).unwrap();
        (m.hash(), stages)
    };
    let (h1, s1) = run();
    let (h2, s2) = run();
    assert_eq!(h1, h2);
    assert_eq!(s1, s2);
    assert_eq!(
        s1.iter().map(|s| s.stage).collect::<Vec<_>>(),
        [
            Stage::Backbone,
            Stage::Contrastive,
            Stage::Modulator,
            Stage::Joint
        ]
    );
}

#[test]
fn skipping_pretraining_starts_at_the_modulator() {
    let envs = style_envs();
    let cfg = TrainConfig {
        skip_contrastive: true,
        ..short_cfg(2)
    };
    let mut m = style_model(&envs, 2);
    let stages = train_modular_staged(&mut m, &envs, &cfg, Stage::Contrastive).unwrap();
    assert_eq!(
        stages.iter().map(|s| s.stage).collect::<Vec<_>>(),
        [Stage::Modulator, Stage::Joint]
    );
}

#[test]
fn stage_traces_have_one_row_per_epoch() {
    let envs = style_envs();
    let mut m = style_model(&envs, 3);
    let stages = train_modular_staged(&mut m, &envs, &short_cfg(3), Stage::Backbone).unwrap();
    for s in &stages {
        assert_eq!(s.trace.len(), 2, "{}", s.stage.name());
        assert!(s
            .trace
            .iter()
            .all(|r| r.train_loss.is_finite() && r.val_loss.is_finite()));
    }
}
