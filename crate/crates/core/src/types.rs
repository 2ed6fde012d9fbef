//! Domain types shared by every module: label space, bags, datasets, model
//! parameters and the training configuration.

use std::collections::HashSet;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{MimlError, Result};

/// The real labels `0..num_labels` plus one dummy label at id `num_labels`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSpace {
    pub num_labels: usize,
}

impl LabelSpace {
    pub fn new(num_labels: usize) -> Result<Self> {
        if num_labels == 0 {
            return Err(MimlError::Config("label space must hold at least one label".into()));
        }
        Ok(LabelSpace { num_labels })
    }

    /// Id of the dummy label, one past the last real label.
    #[inline]
    pub fn dummy(&self) -> usize {
        self.num_labels
    }

    /// Number of label ids that own heads, dummy included.
    #[inline]
    pub fn with_dummy(&self) -> usize {
        self.num_labels + 1
    }

    #[inline]
    pub fn is_real(&self, label: usize) -> bool {
        label < self.num_labels
    }
}

/// A bag of instances sharing one label set.
///
/// Instances are stored contiguously, `dim` features each.
#[derive(Debug, Clone, PartialEq)]
pub struct Bag {
    pub id: String,
    dim: usize,
    features: Vec<f64>,
    /// Relevant real labels, sorted and unique.
    pub labels: Vec<usize>,
    /// Optional ground-truth labels per instance (sorted, unique).
    pub instance_labels: Option<Vec<Vec<usize>>>,
}

impl Bag {
    /// Builds a bag from per-instance feature vectors. Labels are sorted and
    /// deduplicated.
    pub fn new(id: impl Into<String>, instances: Vec<Vec<f64>>, labels: Vec<usize>) -> Result<Self> {
        let id = id.into();
        let Some(first) = instances.first() else {
            return Err(MimlError::Config(format!("bag {id} has no instances")));
        };
        let dim = first.len();
        if dim == 0 {
            return Err(MimlError::Config(format!("bag {id} has zero-dimensional instances")));
        }
        let mut features = Vec::with_capacity(dim * instances.len());
        for inst in &instances {
            if inst.len() != dim {
                return Err(MimlError::Dimension { expected: dim, found: inst.len() });
            }
            if inst.iter().any(|v| !v.is_finite()) {
                return Err(MimlError::Config(format!("bag {id} has non-finite features")));
            }
            features.extend_from_slice(inst);
        }
        Ok(Bag { id, dim, features, labels: normalize_labels(labels), instance_labels: None })
    }

    pub fn with_instance_labels(mut self, instance_labels: Vec<Vec<usize>>) -> Result<Self> {
        if instance_labels.len() != self.len() {
            return Err(MimlError::Config(format!(
                "bag {} has {} instances but {} instance label sets",
                self.id,
                self.len(),
                instance_labels.len()
            )));
        }
        self.instance_labels = Some(instance_labels.into_iter().map(normalize_labels).collect());
        Ok(self)
    }

    /// Number of instances `z`.
    #[inline]
    pub fn len(&self) -> usize {
        self.features.len() / self.dim
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn instance(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn instances(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.features.chunks_exact(self.dim)
    }

    #[inline]
    pub fn is_relevant(&self, label: usize) -> bool {
        self.labels.binary_search(&label).is_ok()
    }
}

fn normalize_labels(mut labels: Vec<usize>) -> Vec<usize> {
    labels.sort_unstable();
    labels.dedup();
    labels
}

/// A validated collection of bags over one label space and feature dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub bags: Vec<Bag>,
    pub label_space: LabelSpace,
    pub feature_dim: usize,
}

impl Dataset {
    pub fn new(bags: Vec<Bag>, label_space: LabelSpace, feature_dim: usize) -> Result<Self> {
        let ds = Dataset { bags, label_space, feature_dim };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 {
            return Err(MimlError::Config("feature dimension must be positive".into()));
        }
        let mut seen = HashSet::with_capacity(self.bags.len());
        for bag in &self.bags {
            if bag.dim() != self.feature_dim {
                return Err(MimlError::Dimension { expected: self.feature_dim, found: bag.dim() });
            }
            if !seen.insert(bag.id.as_str()) {
                return Err(MimlError::Config(format!("duplicate bag id {}", bag.id)));
            }
            if let Some(&l) = bag.labels.iter().find(|&&l| !self.label_space.is_real(l)) {
                return Err(MimlError::Config(format!(
                    "bag {} has label {l} outside [0, {})",
                    bag.id, self.label_space.num_labels
                )));
            }
            if let Some(inst) = &bag.instance_labels {
                if inst.iter().flatten().any(|&l| !self.label_space.is_real(l)) {
                    return Err(MimlError::Config(format!(
                        "bag {} has an instance label outside [0, {})",
                        bag.id, self.label_space.num_labels
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.bags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bags.is_empty()
    }

    /// Copies the bags at `indices` into a new dataset over the same space.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            bags: indices.iter().map(|&i| self.bags[i].clone()).collect(),
            label_space: self.label_space,
            feature_dim: self.feature_dim,
        }
    }

    /// Mean number of relevant labels per bag.
    pub fn mean_label_cardinality(&self) -> f64 {
        if self.bags.is_empty() {
            return 0.0;
        }
        self.bags.iter().map(|b| b.labels.len()).sum::<usize>() as f64 / self.bags.len() as f64
    }
}

/// Model family. `V1NoSharedSpace` drops the shared projection and learns
/// heads directly on the features; `V2TopR` trains like `Full` but predicts
/// the `r` top-ranked labels instead of thresholding on the dummy label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    #[default]
    Full,
    #[serde(rename = "v1")]
    V1NoSharedSpace,
    #[serde(rename = "v2")]
    V2TopR,
}

impl Variant {
    pub(crate) fn code(self) -> u8 {
        match self {
            Variant::Full => 0,
            Variant::V1NoSharedSpace => 1,
            Variant::V2TopR => 2,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Variant::Full),
            1 => Some(Variant::V1NoSharedSpace),
            2 => Some(Variant::V2TopR),
            _ => None,
        }
    }

    #[inline]
    pub fn has_shared_space(self) -> bool {
        self != Variant::V1NoSharedSpace
    }
}

/// Hyperparameters of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Shared-space dimension `m`.
    pub m: usize,
    /// Sub-concepts per label `K`.
    pub k: usize,
    /// L2 norm bound on heads and on the columns of the projection.
    pub c: f64,
    pub gamma0: f64,
    pub eta: f64,
    pub max_iters: u64,
    /// Iterations between validation evaluations.
    pub eval_every: u64,
    /// Validation evaluations without improvement before stopping.
    pub patience: u32,
    pub validation_fraction: f64,
    pub rng_seed: u64,
    pub variant: Variant,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            m: 50,
            k: 5,
            c: 1.0,
            gamma0: 0.001,
            eta: 1e-5,
            max_iters: 1_000_000,
            eval_every: 1_000,
            patience: 20,
            validation_fraction: 0.1,
            rng_seed: 0,
            variant: Variant::Full,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(MimlError::Config(msg.to_string()));
        if self.m == 0 {
            return fail("m must be positive");
        }
        if self.k == 0 {
            return fail("K must be positive");
        }
        if !(self.c.is_finite() && self.c > 0.0) {
            return fail("C must be a positive real");
        }
        if !(self.gamma0.is_finite() && self.gamma0 > 0.0) {
            return fail("gamma0 must be a positive real");
        }
        if !(self.eta.is_finite() && self.eta >= 0.0) {
            return fail("eta must be non-negative");
        }
        if self.eval_every == 0 {
            return fail("eval_every must be positive");
        }
        if self.patience == 0 {
            return fail("patience must be positive");
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return fail("validation_fraction must lie in (0, 1)");
        }
        Ok(())
    }
}

/// Key instance and winning sub-concept of a bag on one label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KeyChoice {
    pub instance: usize,
    pub sub_concept: usize,
}

/// One sampled SGD unit: a bag, a relevant label `y` and a violated
/// irrelevant label `y_bar`, together with their key instances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Triplet {
    pub bag_index: usize,
    pub y: usize,
    pub y_bar: usize,
    pub key: KeyChoice,
    pub key_bar: KeyChoice,
    /// Sampling step (1-based) at which the violation was found.
    pub v: usize,
    pub s_weight: f64,
}

/// Parameters of a trained or freshly initialized model.
///
/// `w0` is `embed_dim × feature_dim`, row-major. Heads are stored for every
/// label id including the dummy, `sub_concepts` per label, each of length
/// `embed_dim`. Under [`Variant::V1NoSharedSpace`] `w0` is empty and
/// `embed_dim == feature_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub(crate) variant: Variant,
    pub(crate) feature_dim: usize,
    pub(crate) embed_dim: usize,
    pub(crate) label_space: LabelSpace,
    pub(crate) sub_concepts: usize,
    pub(crate) norm_bound: f64,
    pub(crate) top_r: Option<usize>,
    pub(crate) w0: Vec<f64>,
    pub(crate) heads: Vec<f64>,
}

impl Model {
    /// Assembles a model from explicit parameters, checking every array length.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        variant: Variant,
        feature_dim: usize,
        embed_dim: usize,
        label_space: LabelSpace,
        sub_concepts: usize,
        norm_bound: f64,
        w0: Vec<f64>,
        heads: Vec<f64>,
    ) -> Result<Self> {
        if feature_dim == 0 || embed_dim == 0 || sub_concepts == 0 {
            return Err(MimlError::Config("model dimensions must be positive".into()));
        }
        if !(norm_bound.is_finite() && norm_bound > 0.0) {
            return Err(MimlError::Config("norm bound must be a positive real".into()));
        }
        let expected_w0 = if variant.has_shared_space() {
            embed_dim * feature_dim
        } else {
            if embed_dim != feature_dim {
                return Err(MimlError::Dimension { expected: feature_dim, found: embed_dim });
            }
            0
        };
        if w0.len() != expected_w0 {
            return Err(MimlError::Dimension { expected: expected_w0, found: w0.len() });
        }
        let expected_heads = label_space.with_dummy() * sub_concepts * embed_dim;
        if heads.len() != expected_heads {
            return Err(MimlError::Dimension { expected: expected_heads, found: heads.len() });
        }
        if w0.iter().chain(&heads).any(|v| !v.is_finite()) {
            return Err(MimlError::Config("model parameters must be finite".into()));
        }
        Ok(Model {
            variant,
            feature_dim,
            embed_dim,
            label_space,
            sub_concepts,
            norm_bound,
            top_r: None,
            w0,
            heads,
        })
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    /// Switches how relevant labels are decided at prediction time. Switching
    /// to or from [`Variant::V1NoSharedSpace`] is refused since it changes the
    /// parameter layout.
    pub fn set_prediction_rule(&mut self, variant: Variant, top_r: Option<usize>) -> Result<()> {
        if variant.has_shared_space() != self.variant.has_shared_space() {
            return Err(MimlError::Config("cannot change the shared-space layout of a model".into()));
        }
        if variant == Variant::V2TopR && top_r.is_none() {
            return Err(MimlError::Config("top-r prediction needs r".into()));
        }
        self.variant = variant;
        self.top_r = top_r;
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    /// Dimension of the space the heads live in (`m`, or `d` under V1).
    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn label_space(&self) -> LabelSpace {
        self.label_space
    }

    pub fn sub_concepts(&self) -> usize {
        self.sub_concepts
    }

    pub fn norm_bound(&self) -> f64 {
        self.norm_bound
    }

    pub fn top_r(&self) -> Option<usize> {
        self.top_r
    }

    pub fn w0(&self) -> &[f64] {
        &self.w0
    }

    pub fn w0_mut(&mut self) -> &mut [f64] {
        &mut self.w0
    }

    pub fn heads(&self) -> &[f64] {
        &self.heads
    }

    #[inline]
    pub(crate) fn head_offset(&self, label: usize, k: usize) -> usize {
        debug_assert!(label < self.label_space.with_dummy() && k < self.sub_concepts);
        (label * self.sub_concepts + k) * self.embed_dim
    }

    #[inline]
    pub fn head(&self, label: usize, k: usize) -> &[f64] {
        assert!(label < self.label_space.with_dummy(), "label {label} out of range");
        assert!(k < self.sub_concepts, "sub-concept {k} out of range");
        let off = self.head_offset(label, k);
        &self.heads[off..off + self.embed_dim]
    }

    #[inline]
    pub fn head_mut(&mut self, label: usize, k: usize) -> &mut [f64] {
        assert!(label < self.label_space.with_dummy(), "label {label} out of range");
        assert!(k < self.sub_concepts, "sub-concept {k} out of range");
        let off = self.head_offset(label, k);
        let m = self.embed_dim;
        &mut self.heads[off..off + m]
    }

    /// Norm of column `j` of the projection.
    pub fn w0_column_norm(&self, j: usize) -> f64 {
        (0..self.embed_dim)
            .map(|i| self.w0[i * self.feature_dim + j].powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn max_w0_column_norm(&self) -> f64 {
        if !self.variant.has_shared_space() {
            return 0.0;
        }
        (0..self.feature_dim).map(|j| self.w0_column_norm(j)).fold(0.0, f64::max)
    }

    pub fn max_head_norm(&self) -> f64 {
        self.heads
            .chunks_exact(self.embed_dim)
            .map(|h| h.iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    /// Projects every column of `w0` onto the L2 ball of radius `C`.
    pub(crate) fn project_w0_columns(&mut self) {
        let (d, c) = (self.feature_dim, self.norm_bound);
        if self.w0.is_empty() {
            return;
        }
        // Accumulate squared column norms in one row-major pass.
        let mut sq = vec![0.0; d];
        for row in self.w0.chunks_exact(d) {
            for (s, v) in sq.iter_mut().zip(row) {
                *s += v * v;
            }
        }
        let scale: Vec<f64> = sq
            .iter()
            .map(|&s| {
                let n = s.sqrt();
                if n > c {
                    c / n
                } else {
                    1.0
                }
            })
            .collect();
        if scale.iter().all(|&s| s == 1.0) {
            return;
        }
        for row in self.w0.chunks_exact_mut(d) {
            for (v, s) in row.iter_mut().zip(&scale) {
                *v *= s;
            }
        }
    }

    pub(crate) fn project_head(&mut self, label: usize, k: usize) {
        let c = self.norm_bound;
        project_to_ball(self.head_mut(label, k), c);
    }
}

/// Scales `v` onto the L2 ball of radius `c` if it lies outside.
pub fn project_to_ball(v: &mut [f64], c: f64) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > c {
        let s = c / n;
        v.iter_mut().for_each(|x| *x *= s);
    }
}

/// Draws a fresh model: every parameter i.i.d. Gaussian with mean 0 and
/// standard deviation `1/sqrt(d)`, then projected onto the norm ball.
pub fn new_model<R: Rng + ?Sized>(
    d: usize,
    label_space: LabelSpace,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<Model> {
    if d == 0 {
        return Err(MimlError::Config("feature dimension must be positive".into()));
    }
    if cfg.m == 0 || cfg.k == 0 {
        return Err(MimlError::Config("m and K must be positive".into()));
    }
    if !(cfg.c.is_finite() && cfg.c > 0.0) {
        return Err(MimlError::Config("C must be a positive real".into()));
    }
    let normal = Normal::new(0.0, 1.0 / (d as f64).sqrt()).expect("finite std");
    let embed_dim = if cfg.variant.has_shared_space() { cfg.m } else { d };
    let w0_len = if cfg.variant.has_shared_space() { embed_dim * d } else { 0 };
    let w0: Vec<f64> = (0..w0_len).map(|_| normal.sample(rng)).collect();
    let heads: Vec<f64> = (0..label_space.with_dummy() * cfg.k * embed_dim)
        .map(|_| normal.sample(rng))
        .collect();
    let mut model = Model {
        variant: cfg.variant,
        feature_dim: d,
        embed_dim,
        label_space,
        sub_concepts: cfg.k,
        norm_bound: cfg.c,
        top_r: None,
        w0,
        heads,
    };
    model.project_w0_columns();
    let c = model.norm_bound;
    model.heads.chunks_exact_mut(embed_dim).for_each(|h| project_to_ball(h, c));
    Ok(model)
}
