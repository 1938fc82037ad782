//! Angular super-resolution: one network per colour channel maps an `A x A`
//! lenslet region to a `2A x 2A` one. The dense layer's `4A^2` outputs are
//! read row-major (u-major) into the enlarged lenslet.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil;
use crate::lightfield::{LensletRegion, LightField};
use crate::nn::network::layer_seed;
use crate::nn::{self, Dataset, LossRecord, Network, NetworkConfig, TrainConfig, Trainer};

/// Lenslets per forward call during inference.
const INFER_CHUNK: usize = 512;

pub const MANIFEST_FILE: &str = "manifest.json";

/// One training pair: an `A x A` input and the `2A x 2A` lenslet it was
/// decimated from (`target[2u][2v] == input[u][v]`).
#[derive(Debug, Clone, PartialEq)]
pub struct AngularSample {
    pub channel: usize,
    pub origin: (usize, usize),
    pub input: Vec<f64>,
    pub target: Vec<f64>,
}

/// Builds the angular network for `A x A` input lenslets; the dense layer has
/// `4 A^2` outputs.
pub fn build_angular_net(
    angular_in: usize,
    config: &NetworkConfig,
    seed: u64,
    init_std: f64,
) -> Result<Network> {
    if angular_in < 3 {
        return Err(Error::Config(format!(
            "angular input side {angular_in} is too small; at least 3 is needed for a 3x3 first layer"
        )));
    }
    let out = 4 * angular_in * angular_in;
    config.build(1, angular_in, out, seed, init_std)
}

/// One sample per lenslet per channel, enumerated channel-major, then by
/// lenslet row, then column. The target is the full lenslet; the input keeps
/// its even angular indices.
pub fn make_angular_training_set(lf: &LightField) -> Result<Vec<AngularSample>> {
    let a = lf.angular();
    if !a.is_multiple_of(2) {
        return Err(Error::OddAngular(a));
    }
    let half = a / 2;
    let mut samples = Vec::with_capacity(lf.channels() * lf.height() * lf.width());
    for c in 0..lf.channels() {
        for s in 0..lf.height() {
            for t in 0..lf.width() {
                let target = lf.lenslet_data(c, s, t).to_vec();
                let input = (0..half * half)
                    .map(|i| target[(2 * (i / half)) * a + 2 * (i % half)])
                    .collect();
                samples.push(AngularSample {
                    channel: c,
                    origin: (s, t),
                    input,
                    target,
                });
            }
        }
    }
    Ok(samples)
}

/// Gathers the samples of one channel into a training dataset.
pub fn angular_dataset(samples: &[AngularSample], channel: usize) -> Result<Dataset> {
    let first = samples
        .iter()
        .find(|s| s.channel == channel)
        .ok_or_else(|| Error::Config(format!("no angular samples for channel {channel}")))?;
    let mut data = Dataset::new(first.input.len(), first.target.len());
    for s in samples.iter().filter(|s| s.channel == channel) {
        data.push(&s.input, &s.target)?;
    }
    Ok(data)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngularManifest {
    pub angular_in: usize,
    pub angular_out: usize,
    pub channels: usize,
    pub channel_order: Vec<String>,
    pub models: Vec<String>,
    pub copy_through: bool,
    pub network: NetworkConfig,
}

pub fn channel_names(channels: usize) -> Vec<String> {
    match channels {
        1 => vec!["gray".into()],
        3 => vec!["red".into(), "green".into(), "blue".into()],
        n => (0..n).map(|c| format!("c{c}")).collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AngularNetBundle {
    networks: Vec<Network>,
    angular_in: usize,
    config: NetworkConfig,
    /// Overwrite the even-even outputs with the known input samples.
    pub copy_through: bool,
}

impl AngularNetBundle {
    pub fn new(networks: Vec<Network>, angular_in: usize, config: NetworkConfig) -> Result<Self> {
        if networks.is_empty() {
            return Err(Error::Config("angular bundle needs at least one network".into()));
        }
        for net in &networks {
            if net.input_shape() != (1, angular_in, angular_in) {
                return Err(Error::shape(
                    "angular network input",
                    (1, angular_in, angular_in),
                    net.input_shape(),
                ));
            }
            if net.output_len() != 4 * angular_in * angular_in {
                return Err(Error::shape(
                    "angular network output",
                    4 * angular_in * angular_in,
                    net.output_len(),
                ));
            }
        }
        Ok(Self {
            networks,
            angular_in,
            config,
            copy_through: false,
        })
    }

    /// Freshly initialized networks, one per channel.
    pub fn initialized(
        channels: usize,
        angular_in: usize,
        config: &NetworkConfig,
        train: &TrainConfig,
    ) -> Result<Self> {
        let nets = (0..channels)
            .map(|c| build_angular_net(angular_in, config, channel_seed(train.seed, c), train.init_std))
            .collect::<Result<Vec<_>>>()?;
        Self::new(nets, angular_in, config.clone())
    }

    pub fn angular_in(&self) -> usize {
        self.angular_in
    }

    pub fn angular_out(&self) -> usize {
        2 * self.angular_in
    }

    pub fn channels(&self) -> usize {
        self.networks.len()
    }

    pub fn networks(&self) -> &[Network] {
        &self.networks
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    fn network(&self, channel: usize) -> Result<&Network> {
        self.networks.get(channel).ok_or(Error::ChannelCount {
            expected: self.networks.len(),
            found: channel + 1,
        })
    }

    fn finish(&self, inputs: &[f64], outputs: &mut [f64]) {
        let a = self.angular_in;
        let b = 2 * a;
        for (x, y) in inputs.chunks_exact(a * a).zip(outputs.chunks_exact_mut(b * b)) {
            for v in y.iter_mut() {
                *v = v.clamp(0.0, 1.0);
            }
            if self.copy_through {
                for u in 0..a {
                    for v in 0..a {
                        y[2 * u * b + 2 * v] = x[u * a + v];
                    }
                }
            }
        }
    }

    /// Predicts the `2A x 2A` lenslet for one `A x A` lenslet of `channel`.
    pub fn upsample_lenslet(&self, lenslet: &LensletRegion, channel: usize) -> Result<LensletRegion> {
        if lenslet.side() != self.angular_in {
            return Err(Error::shape("angular lenslet side", self.angular_in, lenslet.side()));
        }
        let net = self.network(channel)?;
        let mut out = net.forward_batch(lenslet.data(), 1)?;
        self.finish(lenslet.data(), &mut out);
        LensletRegion::new(lenslet.origin(), 2 * self.angular_in, out)
    }

    /// Upsamples every lenslet independently; spatial size is unchanged.
    pub fn upsample_field(&self, lf: &LightField) -> Result<LightField> {
        if lf.angular() != self.angular_in {
            return Err(Error::shape("angular side of field", self.angular_in, lf.angular()));
        }
        if lf.channels() != self.channels() {
            return Err(Error::ChannelCount {
                expected: self.channels(),
                found: lf.channels(),
            });
        }
        let a2 = self.angular_in * self.angular_in;
        let per_channel = lf.height() * lf.width();
        let mut data = Vec::with_capacity(lf.channels() * per_channel * 4 * a2);
        for c in 0..lf.channels() {
            let net = &self.networks[c];
            let start = c * per_channel * a2;
            let inputs = &lf.data()[start..start + per_channel * a2];
            let chunks: Vec<Vec<f64>> = inputs
                .par_chunks(INFER_CHUNK * a2)
                .map(|chunk| {
                    let mut out = net.forward_batch(chunk, chunk.len() / a2)?;
                    self.finish(chunk, &mut out);
                    Ok(out)
                })
                .collect::<Result<_>>()?;
            for chunk in chunks {
                data.extend(chunk);
            }
        }
        LightField::new(
            lf.channels(),
            lf.height(),
            lf.width(),
            2 * self.angular_in,
            data,
        )
    }

    pub fn manifest(&self) -> AngularManifest {
        AngularManifest {
            angular_in: self.angular_in,
            angular_out: self.angular_out(),
            channels: self.channels(),
            channel_order: channel_names(self.channels()),
            models: (0..self.channels()).map(model_file_name).collect(),
            copy_through: self.copy_through,
            network: self.config.clone(),
        }
    }

    /// Writes one model file per channel plus `manifest.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fsutil::replace_dir(dir, |tmp| {
            for (c, net) in self.networks.iter().enumerate() {
                nn::save_model(net, &tmp.join(model_file_name(c)))?;
            }
            let manifest = serde_json::to_string_pretty(&self.manifest()).expect("manifest serializes");
            let path = tmp.join(MANIFEST_FILE);
            fs::write(&path, manifest + "\n").map_err(|e| Error::io(&path, e))
        })
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: AngularManifest =
            serde_json::from_str(&text).map_err(|source| Error::Json { path: path.clone(), source })?;
        if manifest.angular_out != 2 * manifest.angular_in || manifest.models.len() != manifest.channels {
            return Err(Error::ModelFormat(format!("inconsistent manifest {}", path.display())));
        }
        let specs = manifest
            .network
            .layer_specs(1, manifest.angular_in, 4 * manifest.angular_in * manifest.angular_in)?;
        let nets = manifest
            .models
            .iter()
            .map(|m| {
                nn::load_model_expecting(
                    &dir.join(m),
                    (1, manifest.angular_in, manifest.angular_in),
                    &specs,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let mut bundle = Self::new(nets, manifest.angular_in, manifest.network)?;
        bundle.copy_through = manifest.copy_through;
        Ok(bundle)
    }
}

pub fn model_file_name(channel: usize) -> String {
    format!("channel_{channel}.model")
}

pub fn channel_seed(seed: u64, channel: usize) -> u64 {
    layer_seed(seed, 1000 + channel)
}

/// Trains one network per channel present in `samples`. Channel networks are
/// independent and train in parallel; each is seeded from `(train.seed, c)`.
pub fn train_angular(
    samples: &[AngularSample],
    config: &NetworkConfig,
    train: &TrainConfig,
) -> Result<(AngularNetBundle, Vec<Vec<LossRecord>>)> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Config("no angular training samples".into()))?;
    let a = (first.input.len() as f64).sqrt() as usize;
    if a * a != first.input.len() || first.target.len() != 4 * a * a {
        return Err(Error::shape(
            "angular sample",
            "A*A input and 4*A*A target",
            (first.input.len(), first.target.len()),
        ));
    }
    let channels = samples.iter().map(|s| s.channel).max().unwrap_or(0) + 1;
    let results = (0..channels)
        .into_par_iter()
        .map(|c| {
            let data = angular_dataset(samples, c)?;
            let mut ch_train = train.clone();
            ch_train.seed = channel_seed(train.seed, c);
            let net = build_angular_net(a, config, ch_train.seed, train.init_std)?;
            let mut trainer = Trainer::new(net, ch_train)?;
            trainer.run(&data)?;
            Ok(trainer.into_parts())
        })
        .collect::<Result<Vec<_>>>()?;
    let (nets, histories): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    Ok((AngularNetBundle::new(nets, a, config.clone())?, histories))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic;

    #[test]
    fn default_net_has_4a2_outputs() {
        let net = build_angular_net(7, &NetworkConfig::default(), 0, 1e-3).unwrap();
        assert_eq!(net.output_len(), 196);
        assert!(build_angular_net(2, &NetworkConfig::default(), 0, 1e-3).is_err());
        let k5 = build_angular_net(7, &NetworkConfig::with_second_kernel(5), 0, 1e-3).unwrap();
        assert!(matches!(
            k5.layers()[2],
            nn::LayerSpec::Conv { in_channels: 64, out_channels: 32, kernel: 5 }
        ));
        assert_eq!(k5.output_len(), 196);
    }

    #[test]
    fn training_pairs_are_consistent() {
        let lf = synthetic::smooth_field(3, 4, 5, 6, 1);
        let samples = make_angular_training_set(&lf).unwrap();
        assert_eq!(samples.len(), 3 * 4 * 5);
        assert_eq!((samples[0].channel, samples[0].origin), (0, (0, 0)));
        assert_eq!((samples[1].channel, samples[1].origin), (0, (0, 1)));
        assert_eq!(samples[20].channel, 1);
        for s in &samples {
            for u in 0..3 {
                for v in 0..3 {
                    assert_eq!(s.target[2 * u * 6 + 2 * v], s.input[u * 3 + v]);
                }
            }
        }
        let odd = LightField::constant(1, 2, 2, 5, 0.5).unwrap();
        assert!(matches!(make_angular_training_set(&odd), Err(Error::OddAngular(5))));
    }

    #[test]
    fn constant_field_gives_constant_pairs() {
        let lf = LightField::constant(1, 3, 3, 4, 0.3).unwrap();
        let samples = make_angular_training_set(&lf).unwrap();
        assert_eq!(samples.len(), 9);
        assert!(samples
            .iter()
            .all(|s| s.input.iter().chain(&s.target).all(|&v| v == 0.3)));
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = build_angular_net(3, &NetworkConfig::from_pairs(&[(4, 3)]), 0, 0.0).unwrap();
        let bundle = AngularNetBundle::new(vec![net], 3, NetworkConfig::from_pairs(&[(4, 3)])).unwrap();
        let lenslet = LensletRegion::new((0, 0), 3, vec![0.5; 9]).unwrap();
        let out = bundle.upsample_lenslet(&lenslet, 0).unwrap();
        assert_eq!(out.side(), 6);
        assert!(out.data().iter().all(|&v| v == 0.0));
        let wrong = LensletRegion::new((0, 0), 4, vec![0.5; 16]).unwrap();
        assert!(bundle.upsample_lenslet(&wrong, 0).is_err());
    }

    #[test]
    fn field_upsampling_matches_per_lenslet() {
        let cfg = NetworkConfig::from_pairs(&[(4, 3), (2, 1)]);
        let train = TrainConfig {
            init_std: 0.3,
            ..TrainConfig::default()
        };
        let bundle = AngularNetBundle::initialized(3, 3, &cfg, &train).unwrap();
        let lf = synthetic::smooth_field(3, 3, 4, 3, 8);
        let up = bundle.upsample_field(&lf).unwrap();
        assert_eq!(up.shape(), (3, 3, 4, 6));
        for c in 0..3 {
            for s in 0..3 {
                for t in 0..4 {
                    let one = bundle.upsample_lenslet(&lf.lenslet(c, s, t), c).unwrap();
                    assert_eq!(one.data(), up.lenslet_data(c, s, t));
                }
            }
        }
    }

    #[test]
    fn single_lenslet_field() {
        let cfg = NetworkConfig::from_pairs(&[(4, 3)]);
        let bundle = AngularNetBundle::initialized(1, 3, &cfg, &TrainConfig::default()).unwrap();
        let lf = LightField::constant(1, 1, 1, 3, 0.5).unwrap();
        let up = bundle.upsample_field(&lf).unwrap();
        assert_eq!(up.shape(), (1, 1, 1, 6));
    }

    #[test]
    fn copy_through_keeps_known_samples() {
        let cfg = NetworkConfig::from_pairs(&[(4, 3)]);
        let mut bundle = AngularNetBundle::initialized(1, 3, &cfg, &TrainConfig::default()).unwrap();
        bundle.copy_through = true;
        let lf = synthetic::smooth_field(1, 2, 2, 3, 4);
        let up = bundle.upsample_field(&lf).unwrap();
        for u in 0..3 {
            for v in 0..3 {
                assert_eq!(up.get(0, 1, 1, 2 * u, 2 * v), lf.get(0, 1, 1, u, v));
            }
        }
    }

    #[test]
    fn bundle_save_load() {
        let cfg = NetworkConfig::from_pairs(&[(4, 3), (2, 1)]);
        let bundle = AngularNetBundle::initialized(3, 3, &cfg, &TrainConfig::default()).unwrap();
        let tmp = tempfile::tempdir().unwrap();
        bundle.save(tmp.path()).unwrap();
        let back = AngularNetBundle::load(tmp.path()).unwrap();
        assert_eq!(back.channels(), 3);
        assert_eq!(back.manifest(), bundle.manifest());
    }
}
