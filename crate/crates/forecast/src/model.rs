//! Modular forecaster: invariant encoder φ, style encoder ψ, residual style
//! modulator f, decoder g and projection head h.
//!
//! ```text
//! z = φ(x)    c = mean_o ψ(o)    z̃ = f([z, c]) + z    ŷ = g(z̃)    p = h(c) / ‖h(c)‖
//! ```

use std::fs;
use std::path::Path;

use diffcore::{checkpoint, Activation, BoundMlp, Gradients, Graph64, Mlp64, Tensor64, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataio::{Split, PRED_LEN, STYLE_DIM};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    Phi,
    Psi,
    F,
    G,
    H,
}

impl Group {
    pub const ALL: [Group; 5] = [Group::Phi, Group::Psi, Group::F, Group::G, Group::H];

    pub fn name(self) -> &'static str {
        match self {
            Group::Phi => "phi",
            Group::Psi => "psi",
            Group::F => "f",
            Group::G => "g",
            Group::H => "h",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub style_dim: usize,
    pub z_dim: usize,
    pub c_dim: usize,
    pub proj_dim: usize,
    pub output_dim: usize,
    pub phi_hidden: Vec<usize>,
    pub psi_hidden: Vec<usize>,
    pub f_hidden: Vec<usize>,
    pub g_hidden: Vec<usize>,
    pub h_hidden: Vec<usize>,
}

impl Architecture {
    /// Default widths for trajectory windows with `input_dim` features.
    pub fn trajectory(input_dim: usize) -> Self {
        Self {
            input_dim,
            style_dim: STYLE_DIM,
            z_dim: 64,
            c_dim: 32,
            proj_dim: 16,
            output_dim: 2 * PRED_LEN,
            phi_hidden: vec![128],
            psi_hidden: vec![128],
            f_hidden: vec![64],
            g_hidden: vec![128],
            h_hidden: vec![32],
        }
    }

    fn chain(first: usize, hidden: &[usize], last: usize) -> Vec<usize> {
        let mut w = vec![first];
        w.extend_from_slice(hidden);
        w.push(last);
        w
    }

    pub fn widths(&self, group: Group) -> Vec<usize> {
        match group {
            Group::Phi => Self::chain(self.input_dim, &self.phi_hidden, self.z_dim),
            Group::Psi => Self::chain(self.style_dim, &self.psi_hidden, self.c_dim),
            Group::F => Self::chain(self.z_dim + self.c_dim, &self.f_hidden, self.z_dim),
            Group::G => Self::chain(self.z_dim, &self.g_hidden, self.output_dim),
            Group::H => Self::chain(self.c_dim, &self.h_hidden, self.proj_dim),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.input_dim,
            self.style_dim,
            self.z_dim,
            self.c_dim,
            self.proj_dim,
            self.output_dim,
        ];
        if dims.contains(&0) || Group::ALL.iter().any(|&g| self.widths(g).contains(&0)) {
            return Err(Error::Config(format!(
                "architecture has a zero width: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Per-column affine map `(x - mean) / scale` and its inverse.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    /// Column means and population standard deviations of `data`; columns
    /// with (near) zero spread keep scale 1.
    pub fn fit(data: &Tensor64) -> Result<Self> {
        let (n, d) = data.shape();
        if n == 0 {
            return Err(Error::InvalidInput(
                "cannot fit a standardizer on no rows".into(),
            ));
        }
        let mut mean = vec![0.0; d];
        for r in 0..n {
            for (m, x) in mean.iter_mut().zip(data.row(r)) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; d];
        for r in 0..n {
            for ((v, x), m) in var.iter_mut().zip(data.row(r)).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let scale = var
            .iter()
            .map(|v| {
                let s = (v / n as f64).sqrt();
                if s > 1e-8 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, scale })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn rows(&self) -> (Tensor64, Tensor64) {
        let d = self.dim();
        (
            Tensor64::from_vec(1, d, self.mean.clone()).expect("sized"),
            Tensor64::from_vec(1, d, self.scale.clone()).expect("sized"),
        )
    }

    fn check(&self, g: &Graph64, v: Var) -> Result<usize> {
        let (n, d) = g.shape(v);
        if d != self.dim() {
            return Err(Error::InvalidInput(format!(
                "{d} columns, expected {}",
                self.dim()
            )));
        }
        Ok(n)
    }

    pub fn normalize(&self, g: &mut Graph64, v: Var) -> Result<Var> {
        let n = self.check(g, v)?;
        let (mean, scale) = self.rows();
        let neg = g.constant(mean.map(|m| -m));
        let inv = g.constant(scale.map(|s| 1.0 / s));
        let inv = g.broadcast_rows(inv, n)?;
        let centered = g.add_row(v, neg)?;
        Ok(g.mul(centered, inv)?)
    }

    pub fn denormalize(&self, g: &mut Graph64, v: Var) -> Result<Var> {
        let n = self.check(g, v)?;
        let (mean, scale) = self.rows();
        let mean = g.constant(mean);
        let scale = g.constant(scale);
        let scale = g.broadcast_rows(scale, n)?;
        let scaled = g.mul(v, scale)?;
        Ok(g.add_row(scaled, mean)?)
    }
}

/// Fixed input and output standardization, fitted once on training data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    pub input: Standardizer,
    pub style: Standardizer,
    pub output: Standardizer,
}

impl Scaling {
    pub fn identity(arch: &Architecture) -> Self {
        Self {
            input: Standardizer::identity(arch.input_dim),
            style: Standardizer::identity(arch.style_dim),
            output: Standardizer::identity(arch.output_dim),
        }
    }

    fn check(&self, arch: &Architecture) -> Result<()> {
        if self.input.dim() != arch.input_dim
            || self.style.dim() != arch.style_dim
            || self.output.dim() != arch.output_dim
        {
            return Err(Error::Config(
                "scaling dimensions disagree with the architecture".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModularModel {
    pub arch: Architecture,
    pub scaling: Scaling,
    pub phi: Mlp64,
    pub psi: Mlp64,
    pub f: Mlp64,
    pub g: Mlp64,
    pub h: Mlp64,
}

/// The five sub-networks bound into one graph.
#[derive(Clone, Debug)]
pub struct Bound {
    pub scaling: Scaling,
    pub phi: BoundMlp,
    pub psi: BoundMlp,
    pub f: BoundMlp,
    pub g: BoundMlp,
    pub h: BoundMlp,
}

impl ModularModel {
    /// Hidden layers use ReLU, outputs are linear; f's last layer starts at
    /// zero so that z̃ = z until f is trained.
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut make = |group| {
            Mlp64::with_activations(
                &arch.widths(group),
                Activation::Relu,
                Activation::Identity,
                &mut rng,
            )
        };
        let phi = make(Group::Phi)?;
        let psi = make(Group::Psi)?;
        let mut f = make(Group::F)?;
        let g = make(Group::G)?;
        let h = make(Group::H)?;
        f.zero_last_layer();
        Ok(Self {
            scaling: Scaling::identity(&arch),
            arch,
            phi,
            psi,
            f,
            g,
            h,
        })
    }

    pub fn group(&self, group: Group) -> &Mlp64 {
        match group {
            Group::Phi => &self.phi,
            Group::Psi => &self.psi,
            Group::F => &self.f,
            Group::G => &self.g,
            Group::H => &self.h,
        }
    }

    pub fn group_mut(&mut self, group: Group) -> &mut Mlp64 {
        match group {
            Group::Phi => &mut self.phi,
            Group::Psi => &mut self.psi,
            Group::F => &mut self.f,
            Group::G => &mut self.g,
            Group::H => &mut self.h,
        }
    }

    /// Binds every group; those listed in `trainable` become graph variables.
    pub fn bind(&self, graph: &mut Graph64, trainable: &[Group]) -> Bound {
        let mut b = |group: Group| self.group(group).bind(graph, trainable.contains(&group));
        Bound {
            scaling: self.scaling.clone(),
            phi: b(Group::Phi),
            psi: b(Group::Psi),
            f: b(Group::F),
            g: b(Group::G),
            h: b(Group::H),
        }
    }

    /// Adds gradients from a backward pass to the trainable groups.
    pub fn accumulate(&mut self, bound: &Bound, grads: &Gradients<f64>) -> Result<()> {
        self.phi.accumulate_grads(&bound.phi, grads)?;
        self.psi.accumulate_grads(&bound.psi, grads)?;
        self.f.accumulate_grads(&bound.f, grads)?;
        self.g.accumulate_grads(&bound.g, grads)?;
        self.h.accumulate_grads(&bound.h, grads)?;
        Ok(())
    }

    /// Fits the input, style and output standardization on training data.
    /// Must happen before any training; it changes every forward pass.
    pub fn fit_scaling(&mut self, splits: &[&Split]) -> Result<()> {
        let all = Split::concat(splits)?;
        let scaling = Scaling {
            input: Standardizer::fit(&all.inputs)?,
            style: if all.style.cols() == self.arch.style_dim {
                Standardizer::fit(&all.style)?
            } else {
                Standardizer::identity(self.arch.style_dim)
            },
            output: Standardizer::fit(&all.targets)?,
        };
        scaling.check(&self.arch)?;
        self.scaling = scaling;
        Ok(())
    }

    /// Runs `build` on constant bindings of every group.
    fn eval(&self, build: impl FnOnce(&mut Graph64, &Bound) -> Result<Var>) -> Result<Tensor64> {
        let mut g = Graph64::new();
        let b = self.bind(&mut g, &[]);
        let out = build(&mut g, &b)?;
        Ok(g.value(out).clone())
    }

    pub fn encode_invariant(&self, x: &Tensor64) -> Result<Tensor64> {
        self.eval(|g, b| {
            let x = g.constant(x.clone());
            b.invariant(g, x)
        })
    }

    /// `ψ(o)` for every observation row.
    pub fn style_codes(&self, obs: &Tensor64) -> Result<Tensor64> {
        self.eval(|g, b| {
            let o = g.constant(obs.clone());
            b.style_each(g, o)
        })
    }

    /// Mean style code over one or more observations, `1 x c_dim`.
    pub fn encode_style(&self, obs: &Tensor64) -> Result<Tensor64> {
        self.eval(|g, b| {
            let o = g.constant(obs.clone());
            b.style(g, o)
        })
    }

    /// `f([z, c]) + z`; `c` is one row shared by all of `z` or one row each.
    pub fn modulate(&self, z: &Tensor64, c: &Tensor64) -> Result<Tensor64> {
        self.eval(|g, b| {
            let (zv, cv) = (g.constant(z.clone()), g.constant(c.clone()));
            b.modulate(g, zv, cv)
        })
    }

    pub fn decode(&self, z_tilde: &Tensor64) -> Result<Tensor64> {
        self.eval(|g, b| {
            let z = g.constant(z_tilde.clone());
            b.decode(g, z)
        })
    }

    /// Unit-norm projection of style codes, row by row.
    pub fn project(&self, c: &Tensor64) -> Result<Tensor64> {
        self.eval(|g, b| {
            let cv = g.constant(c.clone());
            b.project(g, cv)
        })
    }

    /// `g(φ(x))`: the invariant-only predictor.
    pub fn predict_invariant(&self, x: &Tensor64) -> Result<Tensor64> {
        self.eval(|g, b| {
            let x = g.constant(x.clone());
            b.predict_invariant(g, x)
        })
    }

    /// Prediction given a precomputed style code.
    pub fn predict_with_code(&self, x: &Tensor64, c: &Tensor64) -> Result<Tensor64> {
        self.eval(|g, b| {
            let (x, c) = (g.constant(x.clone()), g.constant(c.clone()));
            b.predict(g, x, c)
        })
    }

    /// Predictions for `x` and the projected embedding of the style code
    /// computed from `obs`.
    pub fn forward_full(&self, x: &Tensor64, obs: &Tensor64) -> Result<(Tensor64, Tensor64)> {
        let c = self.encode_style(obs)?;
        Ok((self.predict_with_code(x, &c)?, self.project(&c)?))
    }

    pub fn group_hash(&self, group: Group) -> String {
        hex::encode(Sha256::digest(
            checkpoint::to_json(self.group(group)).as_bytes(),
        ))
    }

    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(
            serde_json::to_string(&self.arch)
                .expect("plain data")
                .as_bytes(),
        );
        h.update(
            serde_json::to_string(&self.scaling)
                .expect("plain data")
                .as_bytes(),
        );
        for group in Group::ALL {
            h.update(self.group_hash(group).as_bytes());
        }
        hex::encode(h.finalize())
    }

    fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(value)?).map_err(|e| Error::io(path, e))
    }

    /// Writes `<group>.json` for the listed groups plus `architecture.json`
    /// and `scaling.json`.
    pub fn save_groups(&self, dir: &Path, groups: &[Group]) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Self::write_json(&dir.join("architecture.json"), &self.arch)?;
        Self::write_json(&dir.join("scaling.json"), &self.scaling)?;
        for &group in groups {
            checkpoint::save(
                self.group(group),
                &dir.join(format!("{}.json", group.name())),
            )?;
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.save_groups(dir, &Group::ALL)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let read = |name: &str| -> Result<String> {
            let path = dir.join(name);
            if !path.exists() {
                return Err(Error::MissingArtifact(format!(
                    "{} missing",
                    path.display()
                )));
            }
            fs::read_to_string(&path).map_err(|e| Error::io(&path, e))
        };
        let arch: Architecture = serde_json::from_str(&read("architecture.json")?)?;
        arch.validate()?;
        let scaling: Scaling = serde_json::from_str(&read("scaling.json")?)?;
        scaling.check(&arch)?;
        let load = |group: Group| -> Result<Mlp64> {
            let mlp: Mlp64 = checkpoint::from_json(&read(&format!("{}.json", group.name()))?)?;
            if mlp.widths() != arch.widths(group) {
                return Err(Error::Config(format!(
                    "{} widths {:?} disagree with architecture {:?}",
                    group.name(),
                    mlp.widths(),
                    arch.widths(group)
                )));
            }
            Ok(mlp)
        };
        Ok(Self {
            phi: load(Group::Phi)?,
            psi: load(Group::Psi)?,
            f: load(Group::F)?,
            g: load(Group::G)?,
            h: load(Group::H)?,
            arch,
            scaling,
        })
    }
}

impl Bound {
    pub fn invariant(&self, g: &mut Graph64, x: Var) -> Result<Var> {
        let xn = self.scaling.input.normalize(g, x)?;
        Ok(self.phi.forward(g, xn)?)
    }

    /// `ψ` of each observation row.
    pub fn style_each(&self, g: &mut Graph64, obs: Var) -> Result<Var> {
        let on = self.scaling.style.normalize(g, obs)?;
        Ok(self.psi.forward(g, on)?)
    }

    /// Mean of `ψ` over the observation rows, `1 x c_dim`.
    pub fn style(&self, g: &mut Graph64, obs: Var) -> Result<Var> {
        if g.shape(obs).0 == 0 {
            return Err(Error::InvalidInput("no style observations".into()));
        }
        let codes = self.style_each(g, obs)?;
        Ok(g.mean_rows(codes)?)
    }

    pub fn modulate(&self, g: &mut Graph64, z: Var, c: Var) -> Result<Var> {
        let (n, _) = g.shape(z);
        let (cr, _) = g.shape(c);
        let c = if cr == n {
            c
        } else if cr == 1 {
            g.broadcast_rows(c, n)?
        } else {
            return Err(Error::InvalidInput(format!(
                "{cr} style rows for {n} latents"
            )));
        };
        let joint = g.concat_cols(&[z, c])?;
        let delta = self.f.forward(g, joint)?;
        Ok(g.add(delta, z)?)
    }

    pub fn decode(&self, g: &mut Graph64, z_tilde: Var) -> Result<Var> {
        let raw = self.g.forward(g, z_tilde)?;
        self.scaling.output.denormalize(g, raw)
    }

    pub fn project(&self, g: &mut Graph64, c: Var) -> Result<Var> {
        let raw = self.h.forward(g, c)?;
        g.normalize_rows(raw).map_err(|e| match e {
            diffcore::Error::NonFinite { .. } => {
                Error::InvalidInput("degenerate projection: ‖h(c)‖ < 1e-12".into())
            }
            other => other.into(),
        })
    }

    /// Projected embedding of each observation row on its own.
    pub fn project_each(&self, g: &mut Graph64, obs: Var) -> Result<Var> {
        let codes = self.style_each(g, obs)?;
        self.project(g, codes)
    }

    pub fn predict_invariant(&self, g: &mut Graph64, x: Var) -> Result<Var> {
        let z = self.invariant(g, x)?;
        self.decode(g, z)
    }

    pub fn predict(&self, g: &mut Graph64, x: Var, c: Var) -> Result<Var> {
        let z = self.invariant(g, x)?;
        let zt = self.modulate(g, z, c)?;
        self.decode(g, zt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Architecture {
        Architecture {
            input_dim: 6,
            style_dim: 5,
            z_dim: 4,
            c_dim: 3,
            proj_dim: 2,
            output_dim: 4,
            phi_hidden: vec![7],
            psi_hidden: vec![6],
            f_hidden: vec![5],
            g_hidden: vec![8],
            h_hidden: vec![16],
        }
    }

    fn input(rows: usize, cols: usize, k: f64) -> Tensor64 {
        Tensor64::from_vec(
            rows,
            cols,
            (0..rows * cols)
                .map(|i| ((i as f64 + k) * 0.37).sin())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn default_dimension_chain() {
        let a = Architecture::trajectory(101);
        assert_eq!(a.widths(Group::Phi), vec![101, 128, 64]);
        assert_eq!(a.widths(Group::Psi), vec![80, 128, 32]);
        assert_eq!(a.widths(Group::F), vec![96, 64, 64]);
        assert_eq!(a.widths(Group::G), vec![64, 128, 24]);
        assert_eq!(a.widths(Group::H), vec![32, 32, 16]);
    }

    #[test]
    fn fresh_modulator_is_identity() {
        let m = ModularModel::new(small(), 1).unwrap();
        let x = input(3, 6, 0.0);
        let obs = input(2, 5, 1.0);
        let (full, _) = m.forward_full(&x, &obs).unwrap();
        assert_eq!(full, m.predict_invariant(&x).unwrap());
    }

    #[test]
    fn zero_phi_gives_zero_latent() {
        let mut m = ModularModel::new(small(), 1).unwrap();
        for p in m.phi.params_mut() {
            p.value = Tensor64::zeros(p.value.rows(), p.value.cols());
        }
        let z = m.encode_invariant(&input(2, 6, 0.0)).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn style_mean_properties() {
        let m = ModularModel::new(small(), 2).unwrap();
        let o = input(1, 5, 3.0);
        let single = m.encode_style(&o).unwrap();
        assert_eq!(single, m.style_codes(&o).unwrap());
        let twice = Tensor64::from_rows(&[o.row(0).to_vec(), o.row(0).to_vec()]).unwrap();
        let c2 = m.encode_style(&twice).unwrap();
        for (a, b) in single.data().iter().zip(c2.data()) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(m.encode_style(&Tensor64::zeros(0, 5)).is_err());
    }

    #[test]
    fn projection_is_unit_norm() {
        let m = ModularModel::new(small(), 3).unwrap();
        let p = m.project(&input(4, 3, 0.5)).unwrap();
        for r in 0..4 {
            let n: f64 = p.row(r).iter().map(|v| v * v).sum();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_projection_is_an_error() {
        let mut m = ModularModel::new(small(), 3).unwrap();
        m.h.zero_last_layer();
        assert!(m.project(&input(1, 3, 0.0)).is_err());
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let m = ModularModel::new(small(), 3).unwrap();
        assert!(m.encode_invariant(&input(1, 5, 0.0)).is_err());
        assert!(m.decode(&input(1, 3, 0.0)).is_err());
        assert!(m.style_codes(&input(1, 4, 0.0)).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = ModularModel::new(small(), 4).unwrap();
        m.save(dir.path()).unwrap();
        let back = ModularModel::load(dir.path()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.hash(), m.hash());
        assert!(ModularModel::load(&dir.path().join("nope")).is_err());
    }
}
