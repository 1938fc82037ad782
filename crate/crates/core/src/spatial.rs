//! Spatial super-resolution. For one perspective `(u, v)` and channel, a
//! network reads four neighbouring lenslets stacked as `[TL, TR, BL, BR]`
//! (`4 x A x A`) and predicts the three sub-pixels that sit between them:
//! horizontal `(2s, 2t+1)`, vertical `(2s+1, 2t)` and diagonal `(2s+1, 2t+1)`
//! of the doubled perspective image. The picked pixel `(2s, 2t)` is copied
//! verbatim.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::angular::AngularNetBundle;
use crate::error::{Error, Result};
use crate::fsutil;
use crate::lightfield::{Image, LightField, PerspectiveImage};
use crate::nn::network::layer_seed;
use crate::nn::{self, Dataset, LossRecord, Network, NetworkConfig, TrainConfig, Trainer};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SpatialNetKey {
    pub u: usize,
    pub v: usize,
    pub channel: usize,
}

impl SpatialNetKey {
    pub fn new(u: usize, v: usize, channel: usize) -> Self {
        Self { u, v, channel }
    }

    pub fn file_name(&self) -> String {
        format!("{}_{}_{}.model", self.u, self.v, self.channel)
    }

    fn check(&self, angular: usize, channels: usize) -> Result<()> {
        if self.u >= angular || self.v >= angular {
            return Err(Error::AngularIndexOutOfRange {
                u: self.u,
                v: self.v,
                angular,
            });
        }
        if self.channel >= channels {
            return Err(Error::ChannelCount {
                expected: channels,
                found: self.channel + 1,
            });
        }
        Ok(())
    }
}

impl fmt::Display for SpatialNetKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.u, self.v, self.channel)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpatialSample {
    /// Low-resolution lenslet index of the top-left input lenslet.
    pub origin: (usize, usize),
    /// `[TL, TR, BL, BR]`, each `A x A`.
    pub input: Vec<f64>,
    /// Horizontal, vertical, diagonal.
    pub target: [f64; 3],
}

pub fn build_spatial_net(angular: usize, config: &NetworkConfig, seed: u64, init_std: f64) -> Result<Network> {
    if angular < 3 {
        return Err(Error::Config(format!(
            "angular side {angular} is too small; at least 3 is needed for a 3x3 first layer"
        )));
    }
    config.build(4, angular, 3, seed, init_std)
}

/// Writes the `[TL, TR, BL, BR]` stack for low-resolution lenslet `(s, t)`
/// of channel `c`. Neighbours past the last row or column are replaced by
/// the nearest existing lenslet.
pub fn stack_lenslets(lf: &LightField, c: usize, s: usize, t: usize, out: &mut [f64]) {
    let a2 = lf.angular() * lf.angular();
    let s1 = (s + 1).min(lf.height() - 1);
    let t1 = (t + 1).min(lf.width() - 1);
    for (i, &(y, x)) in [(s, t), (s, t1), (s1, t), (s1, t1)].iter().enumerate() {
        out[i * a2..(i + 1) * a2].copy_from_slice(lf.lenslet_data(c, y, x));
    }
}

/// Training pairs for one key from a full-resolution field. The low-resolution
/// field keeps lenslets at even `(s, t)`; for each `(s, t)` with all four kept
/// neighbours inside the grid, the inputs are lenslets `(2s, 2t)`,
/// `(2s, 2t+2)`, `(2s+2, 2t)`, `(2s+2, 2t+2)` and the targets are the dropped
/// lenslets `(2s, 2t+1)`, `(2s+1, 2t)`, `(2s+1, 2t+1)` at the key's `(u, v)`.
/// Enumeration is row-major over `(s, t)`.
pub fn make_spatial_training_set(lf: &LightField, key: SpatialNetKey) -> Result<Vec<SpatialSample>> {
    key.check(lf.angular(), lf.channels())?;
    if lf.height() < 3 || lf.width() < 3 {
        return Err(Error::shape(
            "spatial training grid",
            "at least 3x3 lenslets",
            (lf.height(), lf.width()),
        ));
    }
    let (rows, cols) = ((lf.height() - 1) / 2, (lf.width() - 1) / 2);
    let a2 = lf.angular() * lf.angular();
    let c = key.channel;
    let at = |y: usize, x: usize| lf.get(c, y, x, key.u, key.v);
    let mut samples = Vec::with_capacity(rows * cols);
    for s in 0..rows {
        for t in 0..cols {
            let (y, x) = (2 * s, 2 * t);
            let mut input = Vec::with_capacity(4 * a2);
            for (ly, lx) in [(y, x), (y, x + 2), (y + 2, x), (y + 2, x + 2)] {
                input.extend_from_slice(lf.lenslet_data(c, ly, lx));
            }
            samples.push(SpatialSample {
                origin: (s, t),
                input,
                target: [at(y, x + 1), at(y + 1, x), at(y + 1, x + 1)],
            });
        }
    }
    Ok(samples)
}

pub fn spatial_dataset(samples: &[SpatialSample]) -> Result<Dataset> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Config("no spatial training samples".into()))?;
    let mut data = Dataset::new(first.input.len(), 3);
    for s in samples {
        data.push(&s.input, &s.target)?;
    }
    Ok(data)
}

pub fn key_seed(seed: u64, key: SpatialNetKey) -> u64 {
    layer_seed(layer_seed(layer_seed(seed, 2000 + key.u), key.v), key.channel)
}

/// Trains the network for one key. The network seed is derived from
/// `(train.seed, key)` so keys trained separately or together agree.
pub fn train_spatial(
    samples: &[SpatialSample],
    key: SpatialNetKey,
    config: &NetworkConfig,
    train: &TrainConfig,
) -> Result<(Network, Vec<LossRecord>)> {
    let data = spatial_dataset(samples)?;
    let a = ((data.input_len() / 4) as f64).sqrt() as usize;
    if 4 * a * a != data.input_len() {
        return Err(Error::shape("spatial sample input", "4*A*A", data.input_len()));
    }
    let mut train = train.clone();
    train.seed = key_seed(train.seed, key);
    let net = build_spatial_net(a, config, train.seed, train.init_std)?;
    let mut trainer = Trainer::new(net, train)?;
    trainer.run(&data)?;
    Ok(trainer.into_parts())
}

fn finish(out: &mut [f64]) {
    for v in out {
        *v = v.clamp(0.0, 1.0);
    }
}

/// Predicts `(h, v, d)` for one `4 x A x A` stack, clamped to `[0, 1]`.
pub fn spatial_sr_predict(net: &Network, stack: &[f64]) -> Result<[f64; 3]> {
    if net.output_len() != 3 {
        return Err(Error::shape("spatial network output", 3, net.output_len()));
    }
    let mut out = net.forward_batch(stack, 1)?;
    finish(&mut out);
    Ok([out[0], out[1], out[2]])
}

/// Doubled perspective `(u, v)` of channel `c`, as a `2H x 2W` plane.
pub fn assemble_highres_plane(lf: &LightField, net: &Network, u: usize, v: usize, c: usize) -> Result<Vec<f64>> {
    let a = lf.angular();
    if net.input_shape() != (4, a, a) || net.output_len() != 3 {
        return Err(Error::shape(
            "spatial network for field",
            (4, a, a, 3),
            (net.input_shape(), net.output_len()),
        ));
    }
    SpatialNetKey::new(u, v, c).check(a, lf.channels())?;
    let (h, w) = (lf.height(), lf.width());
    let a2 = a * a;
    let rows: Vec<Vec<f64>> = (0..h)
        .into_par_iter()
        .map(|s| {
            let mut stacks = vec![0.0; w * 4 * a2];
            for t in 0..w {
                stack_lenslets(lf, c, s, t, &mut stacks[t * 4 * a2..(t + 1) * 4 * a2]);
            }
            let mut pred = net.forward_batch(&stacks, w)?;
            finish(&mut pred);
            // two output rows: [picked, h, picked, h, ...] and [v, d, v, d, ...]
            let mut out = vec![0.0; 4 * w];
            for t in 0..w {
                out[2 * t] = lf.get(c, s, t, u, v);
                out[2 * t + 1] = pred[3 * t];
                out[2 * w + 2 * t] = pred[3 * t + 1];
                out[2 * w + 2 * t + 1] = pred[3 * t + 2];
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(rows.concat())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialManifest {
    #[serde(rename = "A")]
    pub angular: usize,
    pub trained_keys: Vec<SpatialNetKey>,
    pub config_hash: String,
    pub network: NetworkConfig,
}

/// Hash of the network description, stored so a registry directory can be
/// checked against the configuration that is about to use it.
pub fn config_hash(config: &NetworkConfig) -> String {
    let json = serde_json::to_string(config).expect("config serializes");
    format!("{:08x}", crc32fast::hash(json.as_bytes()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpatialNetRegistry {
    angular: usize,
    config: NetworkConfig,
    nets: BTreeMap<SpatialNetKey, Network>,
}

impl SpatialNetRegistry {
    pub fn new(angular: usize, config: NetworkConfig) -> Self {
        Self {
            angular,
            config,
            nets: BTreeMap::new(),
        }
    }

    pub fn angular(&self) -> usize {
        self.angular
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.nets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nets.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = SpatialNetKey> + '_ {
        self.nets.keys().copied()
    }

    pub fn get(&self, key: SpatialNetKey) -> Option<&Network> {
        self.nets.get(&key)
    }

    pub fn insert(&mut self, key: SpatialNetKey, net: Network) -> Result<()> {
        let a = self.angular;
        if key.u >= a || key.v >= a {
            return Err(Error::AngularIndexOutOfRange { u: key.u, v: key.v, angular: a });
        }
        if net.input_shape() != (4, a, a) || net.output_len() != 3 {
            return Err(Error::shape(
                "spatial network",
                (4, a, a, 3),
                (net.input_shape(), net.output_len()),
            ));
        }
        self.nets.insert(key, net);
        Ok(())
    }

    /// Keys needed for a field with `channels` channels that are not present.
    pub fn missing_keys(&self, channels: usize) -> Vec<SpatialNetKey> {
        let a = self.angular;
        (0..a * a)
            .flat_map(|i| (0..channels).map(move |c| SpatialNetKey::new(i / a, i % a, c)))
            .filter(|k| !self.nets.contains_key(k))
            .collect()
    }

    pub fn manifest(&self) -> SpatialManifest {
        SpatialManifest {
            angular: self.angular,
            trained_keys: self.keys().collect(),
            config_hash: config_hash(&self.config),
            network: self.config.clone(),
        }
    }

    /// Writes `<u>_<v>_<channel>.model` per key plus `manifest.json`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fsutil::replace_dir(dir, |tmp| {
            for (key, net) in &self.nets {
                nn::save_model(net, &tmp.join(key.file_name()))?;
            }
            let manifest = serde_json::to_string_pretty(&self.manifest()).expect("manifest serializes");
            let path = tmp.join(MANIFEST_FILE);
            fs::write(&path, manifest + "\n").map_err(|e| Error::io(&path, e))
        })
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: SpatialManifest =
            serde_json::from_str(&text).map_err(|source| Error::Json { path: path.clone(), source })?;
        if manifest.config_hash != config_hash(&manifest.network) {
            return Err(Error::ModelFormat(format!(
                "{}: config hash {} does not match the stored network description",
                path.display(),
                manifest.config_hash
            )));
        }
        let a = manifest.angular;
        let specs = manifest.network.layer_specs(4, a, 3)?;
        let mut reg = Self::new(a, manifest.network);
        for key in manifest.trained_keys {
            let net = nn::load_model_expecting(&dir.join(key.file_name()), (4, a, a), &specs)?;
            reg.insert(key, net)?;
        }
        Ok(reg)
    }
}

/// Doubled perspective `(u, v)` with every channel, each from its own key.
pub fn assemble_highres_perspective(
    lf: &LightField,
    registry: &SpatialNetRegistry,
    u: usize,
    v: usize,
) -> Result<PerspectiveImage> {
    if lf.angular() != registry.angular() {
        return Err(Error::shape("angular side of field", registry.angular(), lf.angular()));
    }
    let missing: Vec<_> = (0..lf.channels())
        .map(|c| SpatialNetKey::new(u, v, c))
        .filter(|k| registry.get(*k).is_none())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingModels(
            missing.iter().map(|k| (k.u, k.v, k.channel)).collect(),
        ));
    }
    let mut data = Vec::with_capacity(lf.channels() * 4 * lf.height() * lf.width());
    for c in 0..lf.channels() {
        let net = registry.get(SpatialNetKey::new(u, v, c)).expect("checked above");
        data.extend(assemble_highres_plane(lf, net, u, v, c)?);
    }
    Ok(PerspectiveImage {
        angular_index: (u, v),
        image: Image::new(lf.channels(), 2 * lf.height(), 2 * lf.width(), data)?,
    })
}

/// Doubles the spatial resolution of every perspective.
pub fn spatial_sr_lightfield(lf: &LightField, registry: &SpatialNetRegistry) -> Result<LightField> {
    if lf.angular() != registry.angular() {
        return Err(Error::shape("angular side of field", registry.angular(), lf.angular()));
    }
    let missing = registry.missing_keys(lf.channels());
    if !missing.is_empty() {
        return Err(Error::MissingModels(
            missing.iter().map(|k| (k.u, k.v, k.channel)).collect(),
        ));
    }
    let a = lf.angular();
    let views = (0..a * a)
        .map(|i| assemble_highres_perspective(lf, registry, i / a, i % a))
        .collect::<Result<Vec<_>>>()?;
    LightField::from_perspectives(a, views)
}

/// Angular then spatial enhancement: `A -> 2A`, `H x W -> 2H x 2W`. All model
/// gaps are reported before any work is done.
pub fn lfsr_enhance(
    lf: &LightField,
    angular: &AngularNetBundle,
    registry: &SpatialNetRegistry,
) -> Result<LightField> {
    if registry.angular() != angular.angular_out() {
        return Err(Error::shape(
            "spatial registry angular side",
            angular.angular_out(),
            registry.angular(),
        ));
    }
    let missing = registry.missing_keys(lf.channels());
    if !missing.is_empty() {
        return Err(Error::MissingModels(
            missing.iter().map(|k| (k.u, k.v, k.channel)).collect(),
        ));
    }
    let up = angular.upsample_field(lf)?;
    spatial_sr_lightfield(&up, registry)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic;

    fn small_cfg() -> NetworkConfig {
        NetworkConfig::from_pairs(&[(4, 3), (2, 1)])
    }

    #[test]
    fn default_net_shapes() {
        let net = build_spatial_net(14, &NetworkConfig::default(), 0, 1e-3).unwrap();
        assert_eq!(net.output_len(), 3);
        assert!(matches!(
            net.layers().last(),
            Some(nn::LayerSpec::FullyConnected { in_size: 4608, out_size: 3 })
        ));
        let deep = &NetworkConfig::depth_variants()[4].1;
        let net = build_spatial_net(14, deep, 0, 1e-3).unwrap();
        assert!(matches!(
            net.layers()[0],
            nn::LayerSpec::Conv { in_channels: 4, out_channels: 64, kernel: 3 }
        ));
        assert_eq!(net.parametric_layers(), 5);
        assert!(build_spatial_net(2, &NetworkConfig::default(), 0, 1e-3).is_err());
    }

    #[test]
    fn sample_count_and_provenance() {
        let lf = synthetic::smooth_field(1, 7, 6, 3, 5);
        let key = SpatialNetKey::new(1, 2, 0);
        let samples = make_spatial_training_set(&lf, key).unwrap();
        assert_eq!(samples.len(), 3 * 2);
        let s = &samples[3];
        assert_eq!(s.origin, (1, 1));
        assert_eq!(&s.input[..9], lf.lenslet_data(0, 2, 2));
        assert_eq!(&s.input[9..18], lf.lenslet_data(0, 2, 4));
        assert_eq!(&s.input[18..27], lf.lenslet_data(0, 4, 2));
        assert_eq!(&s.input[27..], lf.lenslet_data(0, 4, 4));
        assert_eq!(s.target, [lf.get(0, 2, 3, 1, 2), lf.get(0, 3, 2, 1, 2), lf.get(0, 3, 3, 1, 2)]);
        let small = synthetic::smooth_field(1, 2, 5, 3, 5);
        assert!(make_spatial_training_set(&small, key).is_err());
        assert!(make_spatial_training_set(&lf, SpatialNetKey::new(3, 0, 0)).is_err());
    }

    #[test]
    fn constant_field_targets() {
        let lf = LightField::constant(1, 5, 5, 3, 0.7).unwrap();
        let samples = make_spatial_training_set(&lf, SpatialNetKey::new(0, 0, 0)).unwrap();
        assert!(samples.iter().all(|s| s.target == [0.7; 3]));
    }

    #[test]
    fn zero_network_predicts_zero() {
        let net = build_spatial_net(3, &small_cfg(), 0, 0.0).unwrap();
        assert_eq!(spatial_sr_predict(&net, &[0.5; 36]).unwrap(), [0.0; 3]);
        assert!(spatial_sr_predict(&net, &[0.5; 35]).is_err());
    }

    #[test]
    fn edge_stack_replicates() {
        let lf = synthetic::smooth_field(1, 2, 3, 3, 1);
        let mut buf = vec![0.0; 36];
        stack_lenslets(&lf, 0, 1, 2, &mut buf);
        for i in 0..4 {
            assert_eq!(&buf[i * 9..(i + 1) * 9], lf.lenslet_data(0, 1, 2));
        }
    }

    #[test]
    fn assembled_perspective_keeps_picked_pixels() {
        let lf = synthetic::smooth_field(3, 4, 5, 3, 9);
        let mut reg = SpatialNetRegistry::new(3, small_cfg());
        for c in 0..3 {
            reg.insert(SpatialNetKey::new(1, 0, c), build_spatial_net(3, &small_cfg(), c as u64, 0.5).unwrap())
                .unwrap();
        }
        let p = assemble_highres_perspective(&lf, &reg, 1, 0).unwrap();
        assert_eq!(p.image.shape(), (3, 8, 10));
        for c in 0..3 {
            for s in 0..4 {
                for t in 0..5 {
                    assert_eq!(p.image.get(c, 2 * s, 2 * t), lf.get(c, s, t, 1, 0));
                }
            }
        }
    }

    #[test]
    fn enhance_lists_every_missing_key() {
        let lf = synthetic::smooth_field(1, 3, 3, 3, 1);
        let bundle = AngularNetBundle::initialized(1, 3, &small_cfg(), &TrainConfig::default()).unwrap();
        let mut reg = SpatialNetRegistry::new(6, small_cfg());
        reg.insert(SpatialNetKey::new(2, 2, 0), build_spatial_net(6, &small_cfg(), 0, 1e-3).unwrap())
            .unwrap();
        match lfsr_enhance(&lf, &bundle, &reg) {
            Err(Error::MissingModels(keys)) => {
                assert_eq!(keys.len(), 35);
                assert!(!keys.contains(&(2, 2, 0)));
            }
            other => panic!("expected missing models, got {other:?}"),
        }
    }

    #[test]
    fn enhance_shape_law() {
        let lf = synthetic::smooth_field(1, 3, 4, 3, 1);
        let bundle = AngularNetBundle::initialized(1, 3, &small_cfg(), &TrainConfig::default()).unwrap();
        let mut reg = SpatialNetRegistry::new(6, small_cfg());
        for i in 0..36 {
            let key = SpatialNetKey::new(i / 6, i % 6, 0);
            reg.insert(key, build_spatial_net(6, &small_cfg(), i as u64, 1e-2).unwrap()).unwrap();
        }
        let out = lfsr_enhance(&lf, &bundle, &reg).unwrap();
        assert_eq!(out.shape(), (1, 6, 8, 6));
    }

    #[test]
    fn registry_round_trip() {
        let mut reg = SpatialNetRegistry::new(3, small_cfg());
        reg.insert(SpatialNetKey::new(0, 1, 0), build_spatial_net(3, &small_cfg(), 1, 1e-2).unwrap())
            .unwrap();
        reg.insert(SpatialNetKey::new(2, 2, 2), build_spatial_net(3, &small_cfg(), 2, 1e-2).unwrap())
            .unwrap();
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("spatial_models");
        reg.save(&dir).unwrap();
        assert!(dir.join("0_1_0.model").exists());
        let back = SpatialNetRegistry::load(&dir).unwrap();
        assert_eq!(back.manifest(), reg.manifest());
        assert_eq!(back.len(), 2);
    }
}
