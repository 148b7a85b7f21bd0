//! Encoder, decoder and discriminator networks.
//!
//! Shape chain of the encoder: `1x17x17 -> 8x16x16 -> 16x8x8 -> 32x4x4 ->
//! 64x2x2 -> 128x1x1 -> 128`. The decoder mirrors it back to `8x16x16` and
//! adds one bilinear x2 stage per factor of two in the fractal-factor `k`,
//! halving filters each time (`8 -> 4 -> 2` for `k = 4`), before a final
//! convolution to a single `16k x 16k` channel. The discriminator maps a
//! `2x64x64` (input, output) pair to a probability.

use std::path::Path;

use ndarray::{Array2, Array3, ArrayD, ArrayView2, ArrayView3, Axis, IxDyn};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, Manifest, ModelKind};
use crate::error::{Error, Result};
use crate::nn::{loss::sigmoid, BatchNorm2d, Conv2d, Layer, Linear, Padding, Sequential, Tensor};
use crate::patch::PATCH_SIDE;
use crate::rng::{self, Rng};

pub const LATENT_DIM: usize = 128;
pub const DISCRIMINATOR_SIDE: usize = 64;
pub const ARCH_VERSION: &str = "ae-17to16k-halving-v1";
pub const NORMALIZATION: &str = "per-patch-min-max";

/// Smallest distance of a reported probability from 0 and 1.
const PROBABILITY_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentVector(Vec<f64>);

impl LatentVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() != LATENT_DIM {
            return Err(Error::contract(format!(
                "latent vector has {} values, expected {LATENT_DIM}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::contract("latent vector has non-finite values"));
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

/// Conv 3x3 + BatchNorm + ReLU.
fn conv_block(layers: &mut Vec<Layer>, cin: usize, cout: usize, padding: Padding, rng: &mut Rng) {
    layers.push(Layer::Conv2d(Conv2d::new(cin, cout, 3, 1, padding, rng)));
    layers.push(Layer::BatchNorm2d(BatchNorm2d::new(cout)));
    layers.push(Layer::Relu);
}

pub fn encoder_network(rng: &mut Rng) -> Sequential {
    let mut l = Vec::new();
    // Padding only the top/left edge maps 17 -> 16.
    conv_block(&mut l, 1, 8, Padding { top: 1, left: 1, bottom: 0, right: 0 }, rng);
    conv_block(&mut l, 8, 8, Padding::same(1), rng);
    for (cin, cout) in [(8, 16), (16, 32), (32, 64), (64, 128)] {
        l.push(Layer::MaxPool2);
        conv_block(&mut l, cin, cout, Padding::same(1), rng);
        conv_block(&mut l, cout, cout, Padding::same(1), rng);
    }
    l.push(Layer::Flatten);
    Sequential::new(l)
}

pub fn decoder_network(k: usize, rng: &mut Rng) -> Result<Sequential> {
    check_fractal_factor(k)?;
    let mut l = vec![Layer::Reshape(vec![LATENT_DIM, 1, 1])];
    let mut channels = LATENT_DIM;
    for _ in 0..4 {
        let next = channels / 2;
        l.push(Layer::Upsample2);
        conv_block(&mut l, channels, next, Padding::same(1), rng);
        conv_block(&mut l, next, next, Padding::same(1), rng);
        channels = next;
    }
    for _ in 0..k.trailing_zeros() {
        let next = (channels / 2).max(1);
        l.push(Layer::Upsample2);
        conv_block(&mut l, channels, next, Padding::same(1), rng);
        conv_block(&mut l, next, next, Padding::same(1), rng);
        channels = next;
    }
    l.push(Layer::Conv2d(Conv2d::new(channels, 1, 3, 1, Padding::same(1), rng)));
    Ok(Sequential::new(l))
}

/// Produces a logit; [`ModelBundle::discriminate`] applies the sigmoid.
pub fn discriminator_network(rng: &mut Rng) -> Sequential {
    let mut l = Vec::new();
    let mut cin = 2;
    for cout in [8, 16, 32, 64] {
        l.push(Layer::Conv2d(Conv2d::new(cin, cout, 4, 2, Padding::same(1), rng)));
        l.push(Layer::BatchNorm2d(BatchNorm2d::new(cout)));
        l.push(Layer::Relu);
        cin = cout;
    }
    l.push(Layer::Conv2d(Conv2d::new(64, 128, 4, 1, Padding::same(0), rng)));
    l.push(Layer::BatchNorm2d(BatchNorm2d::new(128)));
    l.push(Layer::Relu);
    l.push(Layer::Flatten);
    l.push(Layer::Linear(Linear::new(128, 64, rng)));
    l.push(Layer::Relu);
    l.push(Layer::Linear(Linear::new(64, 32, rng)));
    l.push(Layer::Relu);
    l.push(Layer::Linear(Linear::new(32, 1, rng)));
    Sequential::new(l)
}

pub fn check_fractal_factor(k: usize) -> Result<()> {
    if k == 0 || !k.is_power_of_two() || k > 64 {
        return Err(Error::domain(format!("fractal-factor {k} must be a power of two in [1, 64]")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleMeta {
    pub k: usize,
    pub scales: Vec<f64>,
    pub seed: u64,
    pub arch_version: String,
    pub training_step: usize,
}

#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub encoder: Sequential,
    pub decoder: Sequential,
    pub discriminator: Sequential,
    pub meta: BundleMeta,
}

impl ModelBundle {
    /// Deterministic initialization; each network draws from its own substream.
    pub fn init(seed: u64, k: usize) -> Result<Self> {
        check_fractal_factor(k)?;
        Ok(Self {
            encoder: encoder_network(&mut rng::substream(seed, "init/encoder")),
            decoder: decoder_network(k, &mut rng::substream(seed, "init/decoder"))?,
            discriminator: discriminator_network(&mut rng::substream(seed, "init/discriminator")),
            meta: BundleMeta {
                k,
                scales: Vec::new(),
                seed,
                arch_version: ARCH_VERSION.to_string(),
                training_step: 0,
            },
        })
    }

    pub fn k(&self) -> usize {
        self.meta.k
    }

    /// Side of the decoder output, `16 k`.
    pub fn output_side(&self) -> usize {
        16 * self.meta.k
    }

    /// Stack patches into an `(N, 1, 17, 17)` batch, checking the contract.
    pub fn patch_batch(patches: &[ArrayView2<f64>]) -> Result<Tensor> {
        for p in patches {
            if p.dim() != (PATCH_SIDE, PATCH_SIDE) {
                return Err(Error::contract(format!(
                    "encoder expects 1x{PATCH_SIDE}x{PATCH_SIDE} patches, got {:?}",
                    p.dim()
                )));
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::contract("patch holds non-finite values"));
            }
        }
        if patches.is_empty() {
            return Ok(ArrayD::zeros(IxDyn(&[0, 1, PATCH_SIDE, PATCH_SIDE])));
        }
        Ok(crate::nn::stack_images(patches.iter().cloned()))
    }

    pub fn encode(&self, patch: ArrayView2<f64>) -> Result<LatentVector> {
        Ok(self.encode_batch(&[patch])?.remove(0))
    }

    /// Inference-mode embeddings; each result is independent of the others
    /// in the batch.
    pub fn encode_batch(&self, patches: &[ArrayView2<f64>]) -> Result<Vec<LatentVector>> {
        if patches.is_empty() {
            return Ok(Vec::new());
        }
        let x = Self::patch_batch(patches)?;
        let z = self.encoder.infer(&x);
        z.axis_iter(Axis(0)).map(|row| LatentVector::new(row.iter().copied().collect())).collect()
    }

    pub fn decode(&self, z: &LatentVector, k: usize) -> Result<Array2<f64>> {
        if k != self.meta.k {
            return Err(Error::contract(format!(
                "decoder was built for k = {}, asked for k = {k}",
                self.meta.k
            )));
        }
        let x = ArrayD::from_shape_vec(IxDyn(&[1, LATENT_DIM]), z.as_slice().to_vec())
            .expect("latent length checked");
        let y = self.decoder.infer(&x);
        let side = self.output_side();
        Ok(y.into_shape_with_order((side, side)).expect("decoder output is 1x1xSxS"))
    }

    /// Probability that a `2x64x64` (input, output) pair is real; strictly
    /// inside (0, 1).
    pub fn discriminate(&self, pair: ArrayView3<f64>) -> Result<f64> {
        let expected = (2, DISCRIMINATOR_SIDE, DISCRIMINATOR_SIDE);
        if pair.dim() != expected {
            return Err(Error::contract(format!(
                "discriminator expects {expected:?}, got {:?}",
                pair.dim()
            )));
        }
        let x = pair.to_owned().insert_axis(Axis(0)).into_dyn();
        let logit = self.discriminator.infer(&x)[[0, 0]];
        Ok(sigmoid(logit).clamp(PROBABILITY_FLOOR, 1.0 - PROBABILITY_FLOOR))
    }

    pub fn save(&self, path: &Path) -> Result<Manifest> {
        let manifest = Manifest {
            format: String::new(),
            kind: ModelKind::Autoencoder,
            arch_version: self.meta.arch_version.clone(),
            k: self.meta.k,
            scales: self.meta.scales.clone(),
            seed: self.meta.seed,
            normalization: NORMALIZATION.to_string(),
            training_step: self.meta.training_step,
            classes: Vec::new(),
            networks: Vec::new(),
            blob_sha256: String::new(),
        };
        checkpoint::save(
            path,
            manifest,
            &[
                ("encoder", &self.encoder),
                ("decoder", &self.decoder),
                ("discriminator", &self.discriminator),
            ],
        )
    }

    pub fn load(path: &Path) -> Result<(Self, Manifest)> {
        let manifest = checkpoint::read_manifest(path)?;
        if manifest.kind != ModelKind::Autoencoder {
            return Err(Error::Checkpoint {
                path: path.to_owned(),
                message: format!("expected an autoencoder checkpoint, found {:?}", manifest.kind),
            });
        }
        if manifest.arch_version != ARCH_VERSION {
            return Err(Error::Checkpoint {
                path: path.to_owned(),
                message: format!(
                    "architecture `{}` is not `{ARCH_VERSION}`",
                    manifest.arch_version
                ),
            });
        }
        let mut bundle = Self::init(manifest.seed, manifest.k)?;
        checkpoint::load_into(
            path,
            &manifest,
            &mut [
                ("encoder", &mut bundle.encoder),
                ("decoder", &mut bundle.decoder),
                ("discriminator", &mut bundle.discriminator),
            ],
        )?;
        bundle.meta.scales = manifest.scales.clone();
        bundle.meta.training_step = manifest.training_step;
        Ok((bundle, manifest))
    }
}

/// Channel-stack an input and an output image into a `2xHxW` pair.
pub fn make_pair(input: ArrayView2<f64>, output: ArrayView2<f64>) -> Array3<f64> {
    ndarray::stack(Axis(0), &[input, output]).expect("pair images share a shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn patch(seed: u64) -> Array2<f64> {
        Array2::from_shape_fn((17, 17), |(i, j)| (((i * 31 + j * 17) as u64 + seed) % 13) as f64 / 12.0)
    }

    #[test]
    fn encoder_shape_chain() {
        let b = ModelBundle::init(1, 1).unwrap();
        let x = ModelBundle::patch_batch(&[patch(0).view()]).unwrap();
        let shapes = b.encoder.trace_shapes(&x);
        let stage_outputs: Vec<Vec<usize>> = b
            .encoder
            .layers
            .iter()
            .zip(&shapes)
            .enumerate()
            .filter(|(i, (layer, _))| {
                matches!(layer, Layer::Relu) && matches!(b.encoder.layers.get(i + 1), Some(Layer::MaxPool2) | Some(Layer::Flatten))
            })
            .map(|(_, (_, s))| s.clone())
            .collect();
        assert_eq!(
            stage_outputs,
            vec![
                vec![1, 8, 16, 16],
                vec![1, 16, 8, 8],
                vec![1, 32, 4, 4],
                vec![1, 64, 2, 2],
                vec![1, 128, 1, 1]
            ]
        );
        assert_eq!(shapes.last().unwrap(), &vec![1, 128]);
    }

    #[test]
    fn decode_sides_follow_k() {
        for k in [1, 2, 4] {
            let b = ModelBundle::init(3, k).unwrap();
            let z = b.encode(patch(1).view()).unwrap();
            assert_eq!(b.decode(&z, k).unwrap().dim(), (16 * k, 16 * k));
        }
        let b = ModelBundle::init(3, 4).unwrap();
        let zero = LatentVector::new(vec![0.0; LATENT_DIM]).unwrap();
        assert!(b.decode(&zero, 4).unwrap().iter().all(|v| v.is_finite()));
        assert!(matches!(b.decode(&zero, 1), Err(Error::Contract(_))));
        assert!(ModelBundle::init(3, 3).is_err());
    }

    #[test]
    fn wrong_shapes_are_contract_errors() {
        let b = ModelBundle::init(1, 4).unwrap();
        assert!(b.encode(Array2::zeros((16, 16)).view()).is_err());
        assert!(b.discriminate(Array3::zeros((2, 32, 32)).view()).is_err());
        assert!(LatentVector::new(vec![0.0; 127]).is_err());
    }

    #[test]
    fn initialization_is_seeded() {
        let a = ModelBundle::init(5, 4).unwrap();
        let b = ModelBundle::init(5, 4).unwrap();
        let c = ModelBundle::init(6, 4).unwrap();
        let flat = |m: &ModelBundle| -> Vec<f64> {
            [&m.encoder, &m.decoder, &m.discriminator]
                .iter()
                .flat_map(|n| n.state().into_iter().flat_map(|t| t.iter().copied().collect::<Vec<_>>()))
                .collect()
        };
        assert_eq!(flat(&a), flat(&b));
        assert_ne!(flat(&a), flat(&c));
    }

    #[test]
    fn discriminator_output_is_a_probability() {
        let b = ModelBundle::init(2, 4).unwrap();
        let pair = Array3::from_shape_fn((2, 64, 64), |(c, i, j)| ((c + i * j) % 5) as f64 * 0.2);
        let p = b.discriminate(pair.view()).unwrap();
        assert!(p > 0.0 && p < 1.0);
        assert_eq!(p, b.discriminate(pair.view()).unwrap());
        let huge = pair.mapv(|v| v * 1e12);
        let p = b.discriminate(huge.view()).unwrap();
        assert!(p > 0.0 && p < 1.0);
    }

    #[test]
    fn checkpoint_round_trip_and_version_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let mut b = ModelBundle::init(9, 4).unwrap();
        b.meta.scales = vec![10.0, 30.0];
        b.meta.training_step = 12;
        b.save(&path).unwrap();
        let (back, manifest) = ModelBundle::load(&path).unwrap();
        assert_eq!(manifest.k, 4);
        assert_eq!(back.meta, b.meta);
        let z1 = b.encode(patch(4).view()).unwrap();
        let z2 = back.encode(patch(4).view()).unwrap();
        assert_eq!(z1, z2);

        let mpath = checkpoint::manifest_path(&path);
        let text = std::fs::read_to_string(&mpath).unwrap().replace(ARCH_VERSION, "other-arch");
        std::fs::write(&mpath, text).unwrap();
        assert!(matches!(ModelBundle::load(&path), Err(Error::Checkpoint { .. })));
    }
}
