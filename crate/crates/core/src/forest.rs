//! Random forests over uncontrollable inputs whose leaves hold affine maps
//! over the controllable inputs. One forest per prediction step; step `k`
//! never sees an output predicted by another step, so every forest is
//! affine in the decisions once the uncontrollable inputs are fixed.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::TimeSeries;
use crate::dynamics::AffineDynamics;
use crate::error::{Error, Result};
use crate::features::{fit_energy_gain, ActuatorOption, FeatureFrame, RegressorConfig};
use crate::linalg;

/// Ridge strength used when a leaf's design matrix is rank deficient.
pub const LEAF_RIDGE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestHyper {
    pub n_trees: usize,
    pub min_samples_leaf: usize,
    pub max_depth: Option<usize>,
    pub seed: u64,
}

impl Default for ForestHyper {
    fn default() -> Self {
        Self {
            n_trees: 200,
            min_samples_leaf: 200,
            max_depth: None,
            seed: 0,
        }
    }
}

/// Inputs of the step-`k` model for a prediction made at sample `t`.
///
/// Uncontrollable: measured outputs `y[t−δ..=t]`, past drives
/// `u[t−δ..t]`, neighbor temperatures at `t`, ambient and irradiance
/// forecasts `t..t+k`, time of day, season, and the mode sign.
/// Controllable: drives `u[t..t+k]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepFeatureSpec {
    pub k: usize,
    pub delta: usize,
    pub n_neighbors: usize,
}

impl StepFeatureSpec {
    pub fn n_d(&self) -> usize {
        (self.delta + 1) + self.delta + self.n_neighbors + 2 * self.k + 5
    }

    pub fn n_c(&self) -> usize {
        self.k
    }

    pub fn d_names(&self) -> Vec<String> {
        let mut v = Vec::with_capacity(self.n_d());
        v.extend((0..=self.delta).map(|l| format!("y[t-{l}]")));
        v.extend((1..=self.delta).map(|l| format!("u[t-{l}]")));
        v.extend((0..self.n_neighbors).map(|j| format!("neighbor{j}[t]")));
        v.extend((0..self.k).map(|i| format!("T_amb[t+{i}]")));
        v.extend((0..self.k).map(|i| format!("I_hor[t+{i}]")));
        v.extend(["sin_tod", "cos_tod", "sin_season", "cos_season", "mode"].map(String::from));
        v
    }

    pub fn c_names(&self) -> Vec<String> {
        (0..self.k).map(|i| format!("u[t+{i}]")).collect()
    }

    pub fn x_d_into(&self, frame: &FeatureFrame, now: usize, out: &mut Vec<f64>) {
        use std::f64::consts::TAU;
        out.clear();
        out.extend((0..=self.delta).map(|l| frame.y[now - l]));
        out.extend((1..=self.delta).map(|l| frame.actuator_at(now - l, frame.y[now - l])));
        out.extend(frame.neighbors.iter().map(|n| n[now]));
        out.extend((0..self.k).map(|i| frame.ambient[now + i]));
        out.extend((0..self.k).map(|i| frame.i_hor[now + i]));
        let tod = frame.tod[now] / 86_400.0;
        out.extend([
            (TAU * tod).sin(),
            (TAU * tod).cos(),
            (TAU * frame.season[now]).sin(),
            (TAU * frame.season[now]).cos(),
            frame.sign[now],
        ]);
    }

    /// Drives at `now..now+k` with the room temperature frozen at `y[now]`.
    pub fn x_c_into(&self, frame: &FeatureFrame, now: usize, out: &mut Vec<f64>) {
        out.clear();
        out.extend((0..self.k).map(|i| frame.actuator_at(now + i, frame.y[now])));
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeafModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub rows: usize,
}

impl LeafModel {
    pub fn eval(&self, x_c: &[f64]) -> f64 {
        self.intercept + self.weights.iter().zip(x_c).map(|(w, x)| w * x).sum::<f64>()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf(LeafModel),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf(&self, x_d: &[f64]) -> &LeafModel {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x_d[*feature] <= *threshold { *left } else { *right },
                Node::Leaf(l) => return l,
            }
        }
    }

    pub fn leaves(&self) -> impl Iterator<Item = &LeafModel> {
        self.nodes.iter().filter_map(|n| match n {
            Node::Leaf(l) => Some(l),
            Node::Split { .. } => None,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForestModel {
    pub spec: StepFeatureSpec,
    pub hyper: ForestHyper,
    pub trees: Vec<Tree>,
    pub training_rows: usize,
}

/// Training rows for one step model, features stored column-major.
#[derive(Clone, Debug)]
pub struct StepDataset {
    pub x_d: Vec<Vec<f64>>,
    pub x_c: DMatrix<f64>,
    pub target: Vec<f64>,
}

impl StepDataset {
    pub fn rows(&self) -> usize {
        self.target.len()
    }

    /// Builds a dataset from row-major `(x_d, x_c, target)` triples.
    pub fn from_rows(rows: &[(Vec<f64>, Vec<f64>, f64)]) -> Self {
        let n_d = rows.first().map_or(0, |r| r.0.len());
        let n_c = rows.first().map_or(0, |r| r.1.len());
        let x_d = (0..n_d).map(|f| rows.iter().map(|r| r.0[f]).collect()).collect();
        let x_c = DMatrix::from_fn(rows.len(), n_c, |i, j| rows[i].1[j]);
        Self {
            x_d,
            x_c,
            target: rows.iter().map(|r| r.2).collect(),
        }
    }
}

impl ForestModel {
    pub fn fit(spec: StepFeatureSpec, data: &StepDataset, hyper: ForestHyper) -> Result<Self> {
        let n = data.rows();
        if hyper.n_trees == 0 || hyper.min_samples_leaf == 0 {
            return Err(Error::invalid("forest needs at least one tree and a positive leaf size"));
        }
        if n < hyper.min_samples_leaf || n == 0 {
            return Err(Error::NotEnoughData(format!(
                "{n} rows cannot fill a leaf of {} samples",
                hyper.min_samples_leaf
            )));
        }
        if data.x_d.len() != spec.n_d() || data.x_c.ncols() != spec.n_c() {
            return Err(Error::DimensionMismatch {
                expected: spec.n_d() + spec.n_c(),
                got: data.x_d.len() + data.x_c.ncols(),
            });
        }
        let sorted: Vec<Vec<u32>> = data
            .x_d
            .iter()
            .map(|col| {
                let mut idx: Vec<u32> = (0..n as u32).collect();
                idx.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]));
                idx
            })
            .collect();
        let trees = (0..hyper.n_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed ^ (spec.k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
                rng.set_stream(t as u64);
                let mut weights = vec![0.0; n];
                for _ in 0..n {
                    weights[rng.gen_range(0..n)] += 1.0;
                }
                grow_tree(data, &sorted, &weights, &hyper)
            })
            .collect();
        Ok(Self {
            spec,
            hyper,
            trees,
            training_rows: n,
        })
    }

    fn check(&self, x_d: &[f64]) -> Result<()> {
        if x_d.len() != self.spec.n_d() {
            return Err(Error::DimensionMismatch {
                expected: self.spec.n_d(),
                got: x_d.len(),
            });
        }
        Ok(())
    }

    /// Averaged leaf map `(weights, intercept)` selected by `x_d`.
    pub fn extract_affine(&self, x_d: &[f64]) -> Result<(Vec<f64>, f64)> {
        self.check(x_d)?;
        let mut w = vec![0.0; self.spec.n_c()];
        let mut b = 0.0;
        for tree in &self.trees {
            let leaf = tree.leaf(x_d);
            for (acc, v) in w.iter_mut().zip(&leaf.weights) {
                *acc += v;
            }
            b += leaf.intercept;
        }
        let n = self.trees.len() as f64;
        w.iter_mut().for_each(|v| *v /= n);
        Ok((w, b / n))
    }

    /// Mean over trees of the leaf maps evaluated at `x_c`.
    pub fn predict(&self, x_d: &[f64], x_c: &[f64]) -> Result<f64> {
        if x_c.len() != self.spec.n_c() {
            return Err(Error::DimensionMismatch {
                expected: self.spec.n_c(),
                got: x_c.len(),
            });
        }
        let (w, b) = self.extract_affine(x_d)?;
        Ok(b + w.iter().zip(x_c).map(|(w, x)| w * x).sum::<f64>())
    }

    /// Average leaf count per tree.
    pub fn mean_leaves(&self) -> f64 {
        self.trees.iter().map(|t| t.leaves().count()).sum::<usize>() as f64 / self.trees.len() as f64
    }
}

struct Pending {
    node: usize,
    depth: usize,
}

fn grow_tree(data: &StepDataset, sorted: &[Vec<u32>], weights: &[f64], hyper: &ForestHyper) -> Tree {
    let n = data.rows();
    let msl = hyper.min_samples_leaf;
    let t = &data.target;
    let mut node_of = vec![0u32; n];
    // placeholder leaves are replaced once the partition is final
    let mut nodes: Vec<Option<(usize, f64, usize, usize)>> = vec![None];
    let mut counts = vec![n];
    let mut frontier = vec![Pending { node: 0, depth: 0 }];

    while !frontier.is_empty() {
        let n_nodes = nodes.len();
        let mut active = vec![false; n_nodes];
        for p in &frontier {
            let deep_enough = hyper.max_depth.is_some_and(|d| p.depth >= d);
            if counts[p.node] >= 2 * msl && !deep_enough {
                active[p.node] = true;
            }
        }
        if !active.iter().any(|&a| a) {
            break;
        }
        let mut tot_w = vec![0.0; n_nodes];
        let mut tot_s = vec![0.0; n_nodes];
        let mut tot_ss = vec![0.0; n_nodes];
        for r in 0..n {
            let nd = node_of[r] as usize;
            if active[nd] {
                tot_w[nd] += weights[r];
                tot_s[nd] += weights[r] * t[r];
                tot_ss[nd] += weights[r] * t[r] * t[r];
            }
        }
        let mut best: Vec<Option<(f64, usize, f64)>> = vec![None; n_nodes];
        let mut cnt = vec![0usize; n_nodes];
        let mut wl = vec![0.0; n_nodes];
        let mut sl = vec![0.0; n_nodes];
        let mut last = vec![f64::NAN; n_nodes];
        for (f, order) in sorted.iter().enumerate() {
            let col = &data.x_d[f];
            cnt.iter_mut().for_each(|c| *c = 0);
            wl.iter_mut().for_each(|c| *c = 0.0);
            sl.iter_mut().for_each(|c| *c = 0.0);
            for &r in order {
                let r = r as usize;
                let nd = node_of[r] as usize;
                if !active[nd] {
                    continue;
                }
                let v = col[r];
                let c = cnt[nd];
                if c >= msl && counts[nd] - c >= msl && v > last[nd] {
                    let wr = tot_w[nd] - wl[nd];
                    if wl[nd] > 0.0 && wr > 0.0 {
                        let sr = tot_s[nd] - sl[nd];
                        let gain = sl[nd] * sl[nd] / wl[nd] + sr * sr / wr - tot_s[nd] * tot_s[nd] / tot_w[nd];
                        let min_gain = 1e-12 * tot_ss[nd].max(f64::MIN_POSITIVE);
                        if gain > min_gain && best[nd].map_or(true, |b| gain > b.0) {
                            let mut thr = last[nd] + (v - last[nd]) / 2.0;
                            if thr >= v {
                                thr = last[nd];
                            }
                            best[nd] = Some((gain, f, thr));
                        }
                    }
                }
                cnt[nd] = c + 1;
                wl[nd] += weights[r];
                sl[nd] += weights[r] * t[r];
                last[nd] = v;
            }
        }
        let mut next = Vec::new();
        let mut child_of = vec![(0usize, 0usize); n_nodes];
        for p in &frontier {
            if let Some((_, f, thr)) = best[p.node] {
                let left = nodes.len();
                nodes.push(None);
                nodes.push(None);
                counts.push(0);
                counts.push(0);
                nodes[p.node] = Some((f, thr, left, left + 1));
                child_of[p.node] = (left, left + 1);
                next.push(Pending { node: left, depth: p.depth + 1 });
                next.push(Pending {
                    node: left + 1,
                    depth: p.depth + 1,
                });
            }
        }
        for r in 0..n {
            let nd = node_of[r] as usize;
            if let Some(Some((f, thr, _, _))) = nodes.get(nd) {
                if nd < n_nodes && best[nd].is_some() {
                    let (l, rr) = child_of[nd];
                    let child = if data.x_d[*f][r] <= *thr { l } else { rr };
                    node_of[r] = child as u32;
                    counts[child] += 1;
                }
            }
        }
        frontier = next;
    }

    let mut leaf_rows: Vec<Vec<usize>> = vec![Vec::new(); nodes.len()];
    for (r, &nd) in node_of.iter().enumerate() {
        leaf_rows[nd as usize].push(r);
    }
    let nodes = nodes
        .into_iter()
        .enumerate()
        .map(|(i, split)| match split {
            Some((feature, threshold, left, right)) => Node::Split {
                feature,
                threshold,
                left,
                right,
            },
            None => Node::Leaf(fit_leaf(data, &leaf_rows[i])),
        })
        .collect();
    Tree { nodes }
}

/// Ordinary least squares of the target on `[x_c, 1]` over the leaf rows.
fn fit_leaf(data: &StepDataset, rows: &[usize]) -> LeafModel {
    let k = data.x_c.ncols();
    let a = DMatrix::from_fn(rows.len(), k + 1, |i, j| if j < k { data.x_c[(rows[i], j)] } else { 1.0 });
    let b = DVector::from_iterator(rows.len(), rows.iter().map(|&r| data.target[r]));
    let sol = if linalg::rank(&a) == k + 1 {
        linalg::lstsq(&a, &b)
    } else {
        linalg::ridge(&a, &b, LEAF_RIDGE)
    };
    LeafModel {
        weights: sol.as_slice()[..k].to_vec(),
        intercept: sol[k],
        rows: rows.len(),
    }
}

/// Per-step forests for a whole horizon, predicting temperature changes
/// relative to the last measurement.
#[derive(Clone, Debug, PartialEq)]
pub struct RfModel {
    pub config: RegressorConfig,
    pub hyper: ForestHyper,
    pub steps: Vec<ForestModel>,
    pub step_secs: i64,
    pub energy_gain: Option<f64>,
}

/// Builds the step-`k` training set from every admissible start of every
/// segment; `horizon` fixes the admissible starts so all steps share rows.
pub fn step_dataset(frames: &[FeatureFrame], spec: StepFeatureSpec, horizon: usize) -> StepDataset {
    let mut rows = Vec::new();
    let mut xd = Vec::new();
    let mut xc = Vec::new();
    for f in frames {
        if f.len() < spec.delta + horizon + 1 {
            continue;
        }
        for now in spec.delta..f.len() - horizon {
            spec.x_d_into(f, now, &mut xd);
            spec.x_c_into(f, now, &mut xc);
            rows.push((xd.clone(), xc.clone(), f.y[now + spec.k] - f.y[now]));
        }
    }
    StepDataset::from_rows(&rows)
}

impl RfModel {
    pub fn fit_horizon(segments: &[TimeSeries], config: &RegressorConfig, horizon: usize, hyper: ForestHyper) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::invalid("horizon must be at least one step"));
        }
        let step_secs = segments
            .first()
            .ok_or_else(|| Error::NotEnoughData("no training segments".into()))?
            .step_secs();
        let frames = segments
            .iter()
            .map(|s| FeatureFrame::new(s, config))
            .collect::<Result<Vec<_>>>()?;
        let n_neighbors = config.roles.neighbors.len();
        let steps = (1..=horizon)
            .map(|k| {
                let spec = StepFeatureSpec {
                    k,
                    delta: config.delta,
                    n_neighbors,
                };
                let data = step_dataset(&frames, spec, horizon);
                ForestModel::fit(spec, &data, hyper)
            })
            .collect::<Result<Vec<_>>>()?;
        let energy_gain = match config.actuator {
            ActuatorOption::MeasuredEnergy => Some(fit_energy_gain(segments, config)?),
            _ => None,
        };
        Ok(Self {
            config: config.clone(),
            hyper,
            steps,
            step_secs,
            energy_gain,
        })
    }

    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    fn check_window(&self, frame: &FeatureFrame, now: usize, steps: usize) -> Result<()> {
        if steps > self.horizon() {
            return Err(Error::ForecastTooShort {
                needed: steps,
                have: self.horizon(),
            });
        }
        if now < self.config.delta {
            return Err(Error::TooShort {
                needed: self.config.delta,
                have: now,
            });
        }
        if now + steps > frame.len() {
            return Err(Error::ForecastTooShort {
                needed: now + steps,
                have: frame.len(),
            });
        }
        Ok(())
    }

    /// Non-recursive prediction of `y[now+1 ..= now+steps]`; `u[j]` is the
    /// drive at `now + j` in model units, defaulting to the frame's.
    pub fn predict_frame(&self, frame: &FeatureFrame, now: usize, steps: usize, u: Option<&[f64]>) -> Result<Vec<f64>> {
        self.check_window(frame, now, steps)?;
        let mut xd = Vec::new();
        let mut xc = Vec::new();
        (0..steps)
            .map(|j| {
                let model = &self.steps[j];
                model.spec.x_d_into(frame, now, &mut xd);
                match u {
                    Some(u) => {
                        xc.clear();
                        xc.extend_from_slice(&u[..=j]);
                    }
                    None => model.spec.x_c_into(frame, now, &mut xc),
                }
                Ok(frame.y[now] + model.predict(&xd, &xc)?)
            })
            .collect()
    }

    pub fn affine_dynamics(&self, frame: &FeatureFrame, now: usize, steps: usize, gains: &[f64]) -> Result<AffineDynamics> {
        self.check_window(frame, now, steps)?;
        let mut d = AffineDynamics::zeros(steps);
        let mut xd = Vec::new();
        for j in 0..steps {
            let model = &self.steps[j];
            model.spec.x_d_into(frame, now, &mut xd);
            let (w, b) = model.extract_affine(&xd)?;
            d.constant[j] = frame.y[now] + b;
            for m in 0..=j {
                d.input[(j, m)] = w[m] * gains[m];
            }
        }
        Ok(d)
    }

    /// Writes a JSON manifest at `path` and the tree arrays to a binary
    /// sidecar next to it.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let sidecar = sidecar_path(path);
        let manifest = RfManifest {
            config: self.config.clone(),
            hyper: self.hyper,
            step_secs: self.step_secs,
            energy_gain: self.energy_gain,
            sidecar: sidecar
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
            steps: self
                .steps
                .iter()
                .map(|m| StepManifest {
                    spec: m.spec,
                    training_rows: m.training_rows,
                    nodes_per_tree: m.trees.iter().map(|t| t.nodes.len()).collect(),
                })
                .collect(),
        };
        std::fs::write(path, serde_json::to_string_pretty(&manifest)?)?;
        let mut w = std::io::BufWriter::new(std::fs::File::create(&sidecar)?);
        self.write_sidecar(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let manifest: RfManifest = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        let sidecar = path.with_file_name(&manifest.sidecar);
        let mut r = std::io::BufReader::new(std::fs::File::open(sidecar)?);
        Self::from_parts(manifest, &mut r)
    }

    fn write_sidecar(&self, w: &mut impl Write) -> Result<()> {
        for m in &self.steps {
            for t in &m.trees {
                for node in &t.nodes {
                    match node {
                        Node::Split {
                            feature,
                            threshold,
                            left,
                            right,
                        } => {
                            w.write_all(&[0u8])?;
                            w.write_all(&(*feature as u32).to_le_bytes())?;
                            w.write_all(&threshold.to_le_bytes())?;
                            w.write_all(&(*left as u32).to_le_bytes())?;
                            w.write_all(&(*right as u32).to_le_bytes())?;
                        }
                        Node::Leaf(l) => {
                            w.write_all(&[1u8])?;
                            w.write_all(&(l.rows as u32).to_le_bytes())?;
                            w.write_all(&l.intercept.to_le_bytes())?;
                            for v in &l.weights {
                                w.write_all(&v.to_le_bytes())?;
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn from_parts(manifest: RfManifest, r: &mut impl Read) -> Result<Self> {
        fn u32_(r: &mut impl Read) -> Result<u32> {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            Ok(u32::from_le_bytes(b))
        }
        fn f64_(r: &mut impl Read) -> Result<f64> {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            Ok(f64::from_le_bytes(b))
        }
        let mut steps = Vec::with_capacity(manifest.steps.len());
        for sm in &manifest.steps {
            let mut trees = Vec::with_capacity(sm.nodes_per_tree.len());
            for &count in &sm.nodes_per_tree {
                let mut nodes = Vec::with_capacity(count);
                for _ in 0..count {
                    let mut tag = [0u8; 1];
                    r.read_exact(&mut tag)?;
                    nodes.push(match tag[0] {
                        0 => Node::Split {
                            feature: u32_(r)? as usize,
                            threshold: f64_(r)?,
                            left: u32_(r)? as usize,
                            right: u32_(r)? as usize,
                        },
                        1 => {
                            let rows = u32_(r)? as usize;
                            let intercept = f64_(r)?;
                            let weights = (0..sm.spec.n_c()).map(|_| f64_(r)).collect::<Result<Vec<_>>>()?;
                            Node::Leaf(LeafModel {
                                weights,
                                intercept,
                                rows,
                            })
                        }
                        t => return Err(Error::invalid(format!("corrupt forest sidecar: node tag {t}"))),
                    });
                }
                if nodes.iter().any(|n| matches!(n, Node::Split { left, right, .. } if *left >= count || *right >= count)) {
                    return Err(Error::invalid("corrupt forest sidecar: child index out of range"));
                }
                trees.push(Tree { nodes });
            }
            steps.push(ForestModel {
                spec: sm.spec,
                hyper: manifest.hyper,
                trees,
                training_rows: sm.training_rows,
            });
        }
        Ok(Self {
            config: manifest.config,
            hyper: manifest.hyper,
            steps,
            step_secs: manifest.step_secs,
            energy_gain: manifest.energy_gain,
        })
    }
}

pub fn sidecar_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("trees.bin")
}

#[derive(Serialize, Deserialize)]
struct RfManifest {
    config: RegressorConfig,
    hyper: ForestHyper,
    step_secs: i64,
    energy_gain: Option<f64>,
    sidecar: String,
    steps: Vec<StepManifest>,
}

#[derive(Serialize, Deserialize)]
struct StepManifest {
    spec: StepFeatureSpec,
    training_rows: usize,
    nodes_per_tree: Vec<usize>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn toy(n: usize, seed: u64, f: impl Fn(&[f64], &[f64]) -> f64) -> StepDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.01).unwrap();
        let spec = toy_spec();
        let rows: Vec<_> = (0..n)
            .map(|_| {
                let xd: Vec<f64> = (0..spec.n_d()).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let xc = vec![rng.gen_range(0.0..1.0)];
                let t = f(&xd, &xc) + noise.sample(&mut rng);
                (xd, xc, t)
            })
            .collect();
        StepDataset::from_rows(&rows)
    }

    fn toy_spec() -> StepFeatureSpec {
        StepFeatureSpec {
            k: 1,
            delta: 0,
            n_neighbors: 0,
        }
    }

    fn hyper(n_trees: usize, msl: usize) -> ForestHyper {
        ForestHyper {
            n_trees,
            min_samples_leaf: msl,
            max_depth: None,
            seed: 7,
        }
    }

    #[test]
    fn leaves_learn_known_slope() {
        let data = toy(2000, 1, |_, xc| 2.0 * xc[0]);
        let m = ForestModel::fit(toy_spec(), &data, hyper(20, 200)).unwrap();
        for t in &m.trees {
            for l in t.leaves() {
                assert!((l.weights[0] - 2.0).abs() < 0.05, "slope {}", l.weights[0]);
                assert!(l.rows >= 200);
            }
        }
    }

    #[test]
    fn single_leaf_equals_global_ols() {
        let data = toy(300, 2, |xd, xc| xd[0] + 0.5 * xc[0]);
        let m = ForestModel::fit(toy_spec(), &data, hyper(3, 300)).unwrap();
        let a = DMatrix::from_fn(300, 2, |i, j| if j == 0 { data.x_c[(i, 0)] } else { 1.0 });
        let ols = linalg::lstsq(&a, &DVector::from_vec(data.target.clone()));
        for t in &m.trees {
            assert_eq!(t.nodes.len(), 1);
            let l = t.leaf(&[0.0; 8]);
            assert_eq!(l.weights[0], ols[0]);
            assert_eq!(l.intercept, ols[1]);
        }
    }

    #[test]
    fn splits_on_informative_feature_and_is_deterministic() {
        let data = toy(3000, 3, |xd, xc| if xd[2] > 0.0 { 1.0 + xc[0] } else { -1.0 + 3.0 * xc[0] });
        let a = ForestModel::fit(toy_spec(), &data, hyper(10, 100)).unwrap();
        let b = ForestModel::fit(toy_spec(), &data, hyper(10, 100)).unwrap();
        assert_eq!(a, b);
        let mut probe = vec![0.0; 8];
        probe[2] = 0.5;
        let (w, c) = a.extract_affine(&probe).unwrap();
        assert!((w[0] - 1.0).abs() < 0.05 && (c - 1.0).abs() < 0.05);
        probe[2] = -0.5;
        let (w, _) = a.extract_affine(&probe).unwrap();
        assert!((w[0] - 3.0).abs() < 0.05);
    }

    #[test]
    fn averages_leaf_maps() {
        let leaf = |w: f64, b: f64| Tree {
            nodes: vec![Node::Leaf(LeafModel {
                weights: vec![w],
                intercept: b,
                rows: 1,
            })],
        };
        let mut m = ForestModel {
            spec: toy_spec(),
            hyper: hyper(2, 1),
            trees: vec![leaf(1.0, 0.0), leaf(3.0, 2.0)],
            training_rows: 1,
        };
        assert_eq!(m.extract_affine(&[0.0; 8]).unwrap(), (vec![2.0], 1.0));
        m.trees = vec![leaf(0.5, 0.1)];
        assert!((m.predict(&[0.0; 8], &[1.0]).unwrap() - 0.6).abs() < 1e-15);
        assert_eq!(m.predict(&[0.0; 8], &[0.0]).unwrap(), 0.1);
        assert!(matches!(m.predict(&[0.0; 5], &[0.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn every_leaf_respects_minimum_size() {
        let data = toy(1500, 4, |xd, xc| xd[0] * xd[1] + xd[3] + xc[0]);
        let m = ForestModel::fit(toy_spec(), &data, hyper(8, 60)).unwrap();
        for t in &m.trees {
            let total: usize = t.leaves().map(|l| l.rows).sum();
            assert_eq!(total, 1500);
            assert!(t.leaves().all(|l| l.rows >= 60));
        }
        assert!(m.mean_leaves() > 2.0);
    }

    #[test]
    fn too_few_rows_is_an_error() {
        let data = toy(50, 5, |_, xc| xc[0]);
        assert!(matches!(
            ForestModel::fit(toy_spec(), &data, hyper(2, 200)),
            Err(Error::NotEnoughData(_))
        ));
    }

    #[test]
    fn later_steps_see_no_predicted_outputs() {
        let spec = StepFeatureSpec {
            k: 2,
            delta: 3,
            n_neighbors: 1,
        };
        let names = spec.d_names();
        assert_eq!(names.len(), spec.n_d());
        assert!(names.iter().all(|n| !n.starts_with("y[t+")));
        assert!(names.contains(&"y[t-0]".to_string()));
        assert_eq!(spec.c_names(), vec!["u[t+0]", "u[t+1]"]);
    }
}
