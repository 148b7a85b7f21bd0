//! Reference embeddings: raw-pixel flattening and a supervised CNN whose
//! last hidden layer serves as the embedding.

use std::path::Path;

use ndarray::{Array2, ArrayD, ArrayView2, Axis, IxDyn};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, Manifest, ModelKind};
use crate::error::{Error, Result};
use crate::labels::{to_image_dataset, LabeledCoordSet};
use crate::models::{ModelBundle, NORMALIZATION};
use crate::nn::loss::{bce_with_logits, sigmoid};
use crate::nn::optim::{Optimizer, OptimizerKind};
use crate::nn::{stack_images, Conv2d, Layer, Linear, Mode, Padding, Sequential, Tensor};
use crate::patch::{ScaleSpec, PATCH_SIDE};
use crate::raster::ElevationRaster;
use crate::rng;

pub const ID_DIM: usize = PATCH_SIDE * PATCH_SIDE;
pub const CNN_EMBED_DIM: usize = 64;
pub const CNN_ARCH_VERSION: &str = "cnn-2conv-2fc-v1";

/// Row-major flattening of a `17x17` patch.
pub fn id_embed(patch: ArrayView2<f64>) -> Result<Vec<f64>> {
    if patch.dim() != (PATCH_SIDE, PATCH_SIDE) {
        return Err(Error::contract(format!(
            "expected a {PATCH_SIDE}x{PATCH_SIDE} patch, got {:?}",
            patch.dim()
        )));
    }
    Ok(patch.iter().copied().collect())
}

/// conv(1->8)+ReLU+pool, conv(8->16)+ReLU+pool, FC 256->64 + ReLU.
pub fn cnn_trunk(rng: &mut rng::Rng) -> Sequential {
    Sequential::new(vec![
        Layer::Conv2d(Conv2d::new(1, 8, 3, 1, Padding::same(1), rng)),
        Layer::Relu,
        Layer::MaxPool2,
        Layer::Conv2d(Conv2d::new(8, 16, 3, 1, Padding::same(1), rng)),
        Layer::Relu,
        Layer::MaxPool2,
        Layer::Flatten,
        Layer::Linear(Linear::new(16 * 4 * 4, CNN_EMBED_DIM, rng)),
        Layer::Relu,
    ])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CnnTrainOptions {
    pub lr: f64,
    pub optimizer: OptimizerKind,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for CnnTrainOptions {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            optimizer: OptimizerKind::Adam { beta1: 0.9, beta2: 0.999 },
            batch_size: 32,
            epochs: 20,
        }
    }
}

/// Shared trunk with one independent binary head per class.
#[derive(Debug, Clone)]
pub struct CnnModel {
    pub trunk: Sequential,
    /// Linear `64 -> classes.len()`; column `h` is the logit of class `h`.
    pub heads: Sequential,
    pub classes: Vec<String>,
    pub seed: u64,
    /// Patch resolution (m/px) the model was trained at.
    pub resolution: f64,
    pub training_step: usize,
}

#[derive(Debug, Clone)]
pub struct CnnFit {
    pub model: CnnModel,
    /// Accuracy of every head on its own training samples, at threshold 0.5.
    pub train_accuracy: f64,
    pub final_loss: f64,
}

/// One training sample: a normalized patch, the head it supervises, its label.
pub type HeadSample<'a> = (ArrayView2<'a, f64>, usize, u8);

impl CnnModel {
    pub fn init(classes: Vec<String>, seed: u64, resolution: f64) -> Result<Self> {
        if classes.is_empty() {
            return Err(Error::contract("a CNN needs at least one class head"));
        }
        let mut r = rng::substream(seed, "cnn/init");
        let trunk = cnn_trunk(&mut r);
        let heads = Sequential::new(vec![Layer::Linear(Linear::new(CNN_EMBED_DIM, classes.len(), &mut r))]);
        Ok(Self { trunk, heads, classes, seed, resolution, training_step: 0 })
    }

    /// Masked BCE training: each sample only contributes to its own head.
    pub fn fit(mut self, samples: &[HeadSample], opts: &CnnTrainOptions) -> Result<CnnFit> {
        if samples.is_empty() {
            return Err(Error::Capacity { what: "CNN training samples".into(), needed: 1, available: 0 });
        }
        if opts.batch_size == 0 || !(opts.lr > 0.0) {
            return Err(Error::contract("CNN batch size and learning rate must be positive"));
        }
        if let Some(&(_, h, _)) = samples.iter().find(|s| s.1 >= self.classes.len()) {
            return Err(Error::contract(format!("head {h} out of range")));
        }
        let mut opt_trunk = Optimizer::new(opts.optimizer, opts.lr);
        let mut opt_heads = Optimizer::new(opts.optimizer, opts.lr);
        let mut order: Vec<usize> = (0..samples.len()).collect();
        let mut order_rng = rng::substream(self.seed, "cnn/order");
        let mut final_loss = f64::NAN;
        for _ in 0..opts.epochs {
            order.shuffle(&mut order_rng);
            let mut epoch_loss = 0.0;
            for chunk in order.chunks(opts.batch_size) {
                let x = stack_images(chunk.iter().map(|&i| samples[i].0));
                let (h, trunk_tape) = self.trunk.forward(&x, Mode::Train);
                let (logits, head_tape) = self.heads.forward(&h, Mode::Train);
                let b = chunk.len() as f64;
                let mut grad = ArrayD::zeros(logits.raw_dim());
                let mut loss = 0.0;
                for (row, &i) in chunk.iter().enumerate() {
                    let (_, head, label) = samples[i];
                    let z = ArrayD::from_elem(IxDyn(&[1]), logits[[row, head]]);
                    let (l, g) = bce_with_logits(&z, f64::from(label));
                    loss += l / b;
                    grad[[row, head]] = g[[0]] / b;
                }
                if !loss.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        step: self.training_step,
                        scale: self.resolution,
                        detail: "CNN classification loss".into(),
                    });
                }
                let (dh, head_grads) = self.heads.backward(&head_tape, grad);
                let (_, trunk_grads) = self.trunk.backward(&trunk_tape, dh);
                opt_heads.step(self.heads.params_mut(), &head_grads);
                opt_trunk.step(self.trunk.params_mut(), &trunk_grads);
                self.training_step += 1;
                epoch_loss += loss * b;
            }
            final_loss = epoch_loss / samples.len() as f64;
        }
        let correct = samples
            .chunks(256)
            .map(|chunk| {
                let probs = self.head_probabilities(&chunk.iter().map(|s| s.0).collect::<Vec<_>>());
                chunk
                    .iter()
                    .enumerate()
                    .filter(|(r, s)| u8::from(probs[[*r, s.1]] > 0.5) == s.2)
                    .count()
            })
            .sum::<usize>();
        let train_accuracy = correct as f64 / samples.len() as f64;
        Ok(CnnFit { model: self, train_accuracy, final_loss })
    }

    /// `(N, 64)` last-hidden-layer activations.
    pub fn embed(&self, patches: &[ArrayView2<f64>]) -> Result<Array2<f64>> {
        let x = ModelBundle::patch_batch(patches)?;
        Ok(into_matrix(self.trunk.infer(&x)))
    }

    /// `(N, classes)` per-head probabilities.
    pub fn head_probabilities(&self, patches: &[ArrayView2<f64>]) -> Array2<f64> {
        if patches.is_empty() {
            return Array2::zeros((0, self.classes.len()));
        }
        let h = self.trunk.infer(&stack_images(patches.iter().cloned()));
        into_matrix(self.heads.infer(&h)).mapv(sigmoid)
    }

    pub fn save(&self, path: &Path) -> Result<Manifest> {
        let manifest = Manifest {
            format: String::new(),
            kind: ModelKind::Cnn,
            arch_version: CNN_ARCH_VERSION.to_string(),
            k: 1,
            scales: vec![self.resolution],
            seed: self.seed,
            normalization: NORMALIZATION.to_string(),
            training_step: self.training_step,
            classes: self.classes.clone(),
            networks: Vec::new(),
            blob_sha256: String::new(),
        };
        checkpoint::save(path, manifest, &[("trunk", &self.trunk), ("heads", &self.heads)])
    }

    pub fn load(path: &Path) -> Result<(Self, Manifest)> {
        let manifest = checkpoint::read_manifest(path)?;
        if manifest.kind != ModelKind::Cnn || manifest.arch_version != CNN_ARCH_VERSION {
            return Err(Error::Checkpoint {
                path: path.to_owned(),
                message: format!("expected a `{CNN_ARCH_VERSION}` CNN, found {:?} `{}`", manifest.kind, manifest.arch_version),
            });
        }
        let resolution = manifest.scales.first().copied().unwrap_or(f64::NAN);
        let mut model = Self::init(manifest.classes.clone(), manifest.seed, resolution)?;
        checkpoint::load_into(path, &manifest, &mut [("trunk", &mut model.trunk), ("heads", &mut model.heads)])?;
        model.training_step = manifest.training_step;
        Ok((model, manifest))
    }
}

fn into_matrix(t: Tensor) -> Array2<f64> {
    t.into_dimensionality().expect("rank-2 network output")
}

/// Train the multi-head baseline on one labeled set per class, all sampled at
/// `scale`. Every class must contribute both labels.
pub fn train_supervised_cnn(
    datasets: &[LabeledCoordSet],
    raster: &ElevationRaster,
    scale: &ScaleSpec,
    seed: u64,
    opts: &CnnTrainOptions,
) -> Result<CnnFit> {
    let mut images = Vec::with_capacity(datasets.len());
    for ds in datasets {
        let img = to_image_dataset(&ds.entries, scale, raster)?;
        let positives = img.items.iter().filter(|(_, y)| *y == 1).count();
        if positives == 0 || positives == img.items.len() {
            return Err(Error::Capacity {
                what: format!("usable examples of both labels for class `{}`", ds.class_tag.name),
                needed: 1,
                available: 0,
            });
        }
        images.push(img);
    }
    let samples: Vec<HeadSample> = images
        .iter()
        .enumerate()
        .flat_map(|(h, img)| img.items.iter().map(move |(p, y)| (p.values.view(), h, *y)))
        .collect();
    let classes = datasets.iter().map(|d| d.class_tag.name.clone()).collect();
    CnnModel::init(classes, seed, scale.resolution())?.fit(&samples, opts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingKind {
    Id,
    Cnn,
    Autoencoder,
}

impl std::fmt::Display for EmbeddingKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EmbeddingKind::Id => "id",
            EmbeddingKind::Cnn => "cnn",
            EmbeddingKind::Autoencoder => "autoencoder",
        })
    }
}

/// Any model mapping normalized patches to fixed-length vectors.
#[derive(Debug, Clone)]
pub enum EmbeddingModel {
    Id,
    Cnn(CnnModel),
    Autoencoder(ModelBundle),
}

impl EmbeddingModel {
    /// `id` or a checkpoint path (autoencoder or CNN, read from its manifest).
    pub fn open(spec: &str) -> Result<Self> {
        if spec == "id" {
            return Ok(EmbeddingModel::Id);
        }
        let path = Path::new(spec);
        match checkpoint::read_manifest(path)?.kind {
            ModelKind::Autoencoder => Ok(EmbeddingModel::Autoencoder(ModelBundle::load(path)?.0)),
            ModelKind::Cnn => Ok(EmbeddingModel::Cnn(CnnModel::load(path)?.0)),
        }
    }

    pub fn kind(&self) -> EmbeddingKind {
        match self {
            EmbeddingModel::Id => EmbeddingKind::Id,
            EmbeddingModel::Cnn(_) => EmbeddingKind::Cnn,
            EmbeddingModel::Autoencoder(_) => EmbeddingKind::Autoencoder,
        }
    }

    /// Short label for reports, e.g. `autoencoder-4`.
    pub fn label(&self) -> String {
        match self {
            EmbeddingModel::Autoencoder(b) => format!("autoencoder-{}", b.k()),
            other => other.kind().to_string(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            EmbeddingModel::Id => ID_DIM,
            EmbeddingModel::Cnn(_) => CNN_EMBED_DIM,
            EmbeddingModel::Autoencoder(_) => crate::models::LATENT_DIM,
        }
    }

    /// `(N, output_dim)` embeddings; rows are independent of batch
    /// composition.
    pub fn embed(&self, patches: &[ArrayView2<f64>]) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((patches.len(), self.output_dim()));
        // Bounded chunks keep intermediate activations small.
        for (chunk, mut rows) in patches.chunks(256).zip(out.axis_chunks_iter_mut(Axis(0), 256)) {
            match self {
                EmbeddingModel::Id => {
                    for (p, mut row) in chunk.iter().zip(rows.axis_iter_mut(Axis(0))) {
                        row.assign(&ndarray::ArrayView1::from(&id_embed(*p)?[..]));
                    }
                }
                EmbeddingModel::Cnn(m) => rows.assign(&m.embed(chunk)?),
                EmbeddingModel::Autoencoder(b) => {
                    let z = b.encoder.infer(&ModelBundle::patch_batch(chunk)?);
                    rows.assign(&into_matrix(z));
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::Landform;
    use rand::Rng as _;

    #[test]
    fn id_embed_is_row_major_and_invertible() {
        let p = Array2::from_shape_fn((17, 17), |(i, j)| (i * 17 + j) as f64);
        let v = id_embed(p.view()).unwrap();
        assert_eq!(v.len(), 289);
        assert_eq!((v[0], v[1], v[17]), (0.0, 1.0, 17.0));
        let back = Array2::from_shape_vec((17, 17), v).unwrap();
        assert_eq!(back, p);
        assert!(id_embed(Array2::zeros((16, 17)).view()).is_err());
    }

    /// Normalized peak or pit patches with noise; label 1 = peak.
    fn peak_pit_samples(n: usize, seed: u64) -> Vec<(Array2<f64>, u8)> {
        let mut r = rng::substream(seed, "test/peak-pit");
        (0..n)
            .map(|i| {
                let label = (i % 2) as u8;
                let sigma = r.gen_range(2.0..4.0);
                let form = if label == 1 {
                    Landform::Peak { sigma_px: sigma, height_m: 1.0 }
                } else {
                    Landform::Pit { sigma_px: sigma, depth_m: 1.0 }
                };
                let (dr, dc) = (r.gen_range(-1.5..1.5), r.gen_range(-1.5..1.5));
                let mut p = Array2::from_shape_fn((17, 17), |(i, j)| form.height_at(i as f64 - 8.0 - dr, j as f64 - 8.0 - dc));
                p.mapv_inplace(|v| v + r.gen_range(-0.1..0.1));
                (crate::patch::normalize_values(p.view()), label)
            })
            .collect()
    }

    #[test]
    fn cnn_learns_separable_classes_deterministically() {
        let data = peak_pit_samples(200, 1);
        let samples: Vec<HeadSample> = data.iter().map(|(p, y)| (p.view(), 0, *y)).collect();
        let opts = CnnTrainOptions { epochs: 8, ..Default::default() };
        let fit = CnnModel::init(vec!["peak".into()], 3, 30.0).unwrap().fit(&samples, &opts).unwrap();
        assert!(fit.train_accuracy > 0.9, "{}", fit.train_accuracy);
        let again = CnnModel::init(vec!["peak".into()], 3, 30.0).unwrap().fit(&samples, &opts).unwrap();
        assert_eq!(fit.final_loss, again.final_loss);
        let views: Vec<_> = data.iter().take(5).map(|(p, _)| p.view()).collect();
        let e = fit.model.embed(&views).unwrap();
        assert_eq!(e.dim(), (5, CNN_EMBED_DIM));
        // Batch-independent rows.
        assert_eq!(fit.model.embed(&views[2..3]).unwrap().row(0), e.row(2));
    }

    #[test]
    fn cnn_checkpoint_round_trip() {
        let m = CnnModel::init(vec!["peak".into(), "pit".into()], 5, 10.0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cnn.bin");
        m.save(&path).unwrap();
        let loaded = match EmbeddingModel::open(path.to_str().unwrap()).unwrap() {
            EmbeddingModel::Cnn(c) => c,
            other => panic!("wrong kind {:?}", other.kind()),
        };
        assert_eq!(loaded.classes, m.classes);
        let p = Array2::from_shape_fn((17, 17), |(i, j)| ((i * j) % 5) as f64 / 4.0);
        assert_eq!(loaded.embed(&[p.view()]).unwrap(), m.embed(&[p.view()]).unwrap());
        assert!(ModelBundle::load(&path).is_err());
    }

    #[test]
    fn embedding_dims_follow_kind() {
        let p = Array2::from_shape_fn((17, 17), |(i, j)| ((i + j) % 3) as f64);
        let bundle = ModelBundle::init(1, 1).unwrap();
        let cnn = CnnModel::init(vec!["a".into()], 1, 30.0).unwrap();
        for (m, d) in [
            (EmbeddingModel::Id, 289),
            (EmbeddingModel::Cnn(cnn), 64),
            (EmbeddingModel::Autoencoder(bundle), 128),
        ] {
            assert_eq!(m.output_dim(), d);
            assert_eq!(m.embed(&[p.view(), p.view()]).unwrap().dim(), (2, d));
        }
    }
}
