#![allow(dead_code)]

use diffcore::Tensor64;
use forecast::dataio::{EnvData, Split};
use forecast::trainer::{LearningRates, Selection, StageEpochs, TrainConfig};
use forecast::{Architecture, ModularModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Spread of the second input in each toy environment.
pub const TOY_SPREAD: [f64; 2] = [2.0, 1.0];
/// Its coefficient in the target, opposite across environments.
pub const TOY_COEF: [f64; 2] = [1.0, -1.0];

fn toy_split(n: usize, spread: f64, coef: f64, rng: &mut ChaCha8Rng) -> Split {
    // uniform with unit variance
    let unit = |rng: &mut ChaCha8Rng| rng.gen_range(-3f64.sqrt()..3f64.sqrt());
    let mut x = Vec::with_capacity(2 * n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let z = unit(rng);
        let s = spread * unit(rng);
        x.extend([z, s]);
        y.push(z + coef * s);
    }
    Split::from_tensors(
        Tensor64::from_vec(n, 2, x).unwrap(),
        Tensor64::from_vec(n, 1, y).unwrap(),
        Tensor64::zeros(n, 0),
    )
    .unwrap()
}

/// Two environments with `y = z + β_e s`, `β = ±1`, where only `z` is
/// stable across environments.
pub fn toy_envs(n: usize, seed: u64) -> Vec<EnvData> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..2)
        .map(|e| EnvData {
            id: format!("toy-{e}"),
            train: toy_split(n, TOY_SPREAD[e], TOY_COEF[e], &mut rng),
            val: toy_split(n / 4, TOY_SPREAD[e], TOY_COEF[e], &mut rng),
        })
        .collect()
}

/// φ: 2 → 2 and g: 2 → 1, both linear.
pub fn linear_model(seed: u64) -> ModularModel {
    let arch = Architecture {
        input_dim: 2,
        style_dim: 1,
        z_dim: 2,
        c_dim: 1,
        proj_dim: 1,
        output_dim: 1,
        phi_hidden: vec![],
        psi_hidden: vec![],
        f_hidden: vec![],
        g_hidden: vec![],
        h_hidden: vec![],
    };
    ModularModel::new(arch, seed).unwrap()
}

pub fn toy_config(epochs: usize, lambda: f64) -> TrainConfig {
    TrainConfig {
        epochs: StageEpochs {
            backbone: epochs,
            ..StageEpochs::default()
        },
        lr: LearningRates {
            baseline: 0.002,
            ..LearningRates::default()
        },
        lambda,
        point_dim: 1,
        // the oracle minimizes squared error, not absolute error
        selection: Selection::ValObjective,
        ..TrainConfig::default()
    }
}

/// `[w_z, w_s, bias]` of the end-to-end map, read off by probing.
pub fn effective_weights(model: &ModularModel) -> [f64; 3] {
    let probe = Tensor64::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
    let out = model.predict_invariant(&probe).unwrap();
    let b = out.get(0, 0);
    [out.get(1, 0) - b, out.get(2, 0) - b, b]
}

/// Least squares with intercept over the pooled training rows, by the
/// normal equations and Gaussian elimination.
#[allow(clippy::needless_range_loop)]
pub fn pooled_least_squares(envs: &[EnvData]) -> [f64; 3] {
    let mut a = [[0.0f64; 4]; 3];
    for env in envs {
        for r in 0..env.train.len() {
            let f = [env.train.inputs.get(r, 0), env.train.inputs.get(r, 1), 1.0];
            let y = env.train.targets.get(r, 0);
            for i in 0..3 {
                for j in 0..3 {
                    a[i][j] += f[i] * f[j];
                }
                a[i][3] += f[i] * y;
            }
        }
    }
    for col in 0..3 {
        let pivot = (col..3)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, pivot);
        for row in 0..3 {
            if row != col {
                let k = a[row][col] / a[col][col];
                for c in col..4 {
                    a[row][c] -= k * a[col][c];
                }
            }
        }
    }
    [a[0][3] / a[0][0], a[1][3] / a[1][1], a[2][3] / a[2][2]]
}
