use std::path::{Path, PathBuf};

use lfsr_core::angular::{self, AngularNetBundle};
use lfsr_core::container;
use lfsr_core::nn::{self, Dataset, LossRecord, Network, NetworkConfig, TrainConfig, Trainer};
use lfsr_core::spatial::{self, SpatialNetKey, SpatialNetRegistry};
use lfsr_core::{Error, LightField, Result};
use rayon::prelude::*;

use crate::commands::{self, PreparedManifest, PREPARED_DIR};
use crate::config::ExperimentConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Target {
    Angular,
    Spatial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SweepAxis {
    FilterSize,
    Depth,
}

#[derive(Debug, Clone, Copy)]
pub struct RunOptions {
    pub resume: bool,
    pub checkpoint_every: Option<u64>,
}

/// Parses `u,v` pairs; `all` and `middle` expand against the angular side.
pub fn parse_keys(items: &[String], angular: usize) -> Result<Vec<[usize; 2]>> {
    let mut keys = Vec::new();
    for item in items {
        match item.as_str() {
            "all" => keys.extend((0..angular * angular).map(|i| [i / angular, i % angular])),
            "middle" => keys.push([angular / 2, angular / 2]),
            s => {
                let parts: Vec<&str> = s.split(',').collect();
                let parsed: Vec<usize> = parts
                    .iter()
                    .map(|p| p.trim().parse::<usize>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| Error::Config(format!("bad key {s:?}; expected u,v")))?;
                if parsed.len() != 2 {
                    return Err(Error::Config(format!("bad key {s:?}; expected u,v")));
                }
                keys.push([parsed[0], parsed[1]]);
            }
        }
    }
    keys.sort_unstable();
    keys.dedup();
    Ok(keys)
}

fn logs_dir(out: &Path) -> PathBuf {
    out.join("logs")
}

fn checkpoints_dir(out: &Path) -> PathBuf {
    out.join("checkpoints")
}

/// Trains (or resumes) one model, checkpointing at the end and optionally
/// every `checkpoint_every` steps.
fn train_model(
    build: impl FnOnce() -> Result<Network>,
    cfg: TrainConfig,
    data: &Dataset,
    ckpt: &Path,
    opts: RunOptions,
) -> Result<Trainer> {
    let total = cfg.iterations;
    let mut trainer = if opts.resume && ckpt.is_file() {
        let mut t = nn::io::load_checkpoint(ckpt, cfg)?;
        t.continue_to(total);
        t
    } else {
        Trainer::new(build()?, cfg)?
    };
    match opts.checkpoint_every {
        Some(every) if every > 0 => {
            while trainer.step() < total {
                let next = (trainer.step() + every).min(total);
                trainer.continue_to(next);
                trainer.run(data)?;
                nn::io::save_checkpoint(&trainer, ckpt)?;
            }
            trainer.continue_to(total);
        }
        _ => {
            trainer.run(data)?;
        }
    }
    nn::io::save_checkpoint(&trainer, ckpt)?;
    Ok(trainer)
}

fn read_split(manifest: &PreparedManifest, split: &str, pick: impl Fn(&commands::PreparedField) -> PathBuf) -> Result<Vec<LightField>> {
    manifest.split(split).map(|f| container::read_container(&pick(f))).collect()
}

fn angular_data(fields: &[LightField], channel: usize) -> Result<Dataset> {
    let mut data: Option<Dataset> = None;
    for lf in fields {
        let samples = angular::make_angular_training_set(lf)?;
        let d = angular::angular_dataset(&samples, channel)?;
        match &mut data {
            None => data = Some(d),
            Some(all) => all.extend(&d)?,
        }
    }
    data.ok_or_else(|| Error::Config("no training fields in the prepared manifest".into()))
}

fn spatial_data(fields: &[LightField], key: SpatialNetKey) -> Result<Dataset> {
    let mut data: Option<Dataset> = None;
    for lf in fields {
        let d = spatial::spatial_dataset(&spatial::make_spatial_training_set(lf, key)?)?;
        match &mut data {
            None => data = Some(d),
            Some(all) => all.extend(&d)?,
        }
    }
    data.ok_or_else(|| Error::Config("no training fields in the prepared manifest".into()))
}

fn check_channels(fields: &[LightField]) -> Result<usize> {
    let channels = fields
        .first()
        .ok_or_else(|| Error::Config("no training fields in the prepared manifest".into()))?
        .channels();
    if let Some(lf) = fields.iter().find(|lf| lf.channels() != channels) {
        return Err(Error::ChannelCount {
            expected: channels,
            found: lf.channels(),
        });
    }
    Ok(channels)
}

fn summary_line(what: &str, data: &Dataset, models: usize) -> String {
    format!(
        "{what}: {models} model(s); {} samples per model, {} input elements, {} target elements",
        data.len(),
        data.len() * data.input_len(),
        data.len() * data.target_len()
    )
}

pub fn train_angular(cfg: &ExperimentConfig, models: &Path, opts: RunOptions) -> Result<Vec<String>> {
    let manifest = PreparedManifest::load(&cfg.out)?;
    let prepared = cfg.out.join(PREPARED_DIR);
    let fields = read_split(&manifest, "train", |f| prepared.join(&f.spatial_low))?;
    let channels = check_channels(&fields)?;
    let a_out = fields[0].angular();
    if let Some(lf) = fields.iter().find(|lf| lf.angular() != a_out) {
        return Err(Error::shape("training field angular side", a_out, lf.angular()));
    }
    let stage = &cfg.angular;
    // every channel network must build before any training starts
    angular::build_angular_net(a_out / 2, &stage.network, 0, 0.0)?;
    let datasets = (0..channels).map(|c| angular_data(&fields, c)).collect::<Result<Vec<_>>>()?;
    let mut lines = vec![summary_line("angular", &datasets[0], channels)];
    let logs = logs_dir(&cfg.out);
    let ckpts = checkpoints_dir(&cfg.out);
    let results = datasets
        .par_iter()
        .enumerate()
        .map(|(c, data)| {
            let mut tc = stage.train.clone();
            tc.seed = angular::channel_seed(stage.train.seed, c);
            let build = || angular::build_angular_net(a_out / 2, &stage.network, tc.seed, tc.init_std);
            let ckpt = ckpts.join(format!("angular_c{c}.ckpt"));
            let trainer = train_model(build, tc.clone(), data, &ckpt, opts)?;
            Ok(trainer.into_parts())
        })
        .collect::<Result<Vec<(Network, Vec<LossRecord>)>>>()?;
    let mut nets = Vec::with_capacity(channels);
    for (c, (net, history)) in results.into_iter().enumerate() {
        let path = logs.join(format!("angular_c{c}.csv"));
        commands::write_text(&path, &nn::loss_csv(&history))?;
        if let Some(last) = history.last() {
            lines.push(format!("  channel {c}: final loss {:e} at step {}", last.loss, last.step));
        }
        nets.push(net);
    }
    let bundle = AngularNetBundle::new(nets, a_out / 2, stage.network.clone())?;
    bundle.save(&commands::angular_dir(models))?;
    Ok(lines)
}

pub fn train_spatial(
    cfg: &ExperimentConfig,
    keys: &[String],
    models: &Path,
    opts: RunOptions,
) -> Result<Vec<String>> {
    let manifest = PreparedManifest::load(&cfg.out)?;
    let fields = read_split(&manifest, "train", |f| f.source.clone())?;
    let channels = check_channels(&fields)?;
    let a = fields[0].angular();
    if let Some(lf) = fields.iter().find(|lf| lf.angular() != a) {
        return Err(Error::shape("training field angular side", a, lf.angular()));
    }
    let pairs = if keys.is_empty() {
        cfg.spatial.keys.clone()
    } else {
        parse_keys(keys, a)?
    };
    if pairs.is_empty() {
        return Err(Error::Config(
            "no spatial keys requested; pass --keys u,v (or all / middle) or set spatial.keys".into(),
        ));
    }
    let stage = &cfg.spatial;
    spatial::build_spatial_net(a, &stage.network, 0, 0.0)?;
    let reg_dir = commands::spatial_dir(models);
    let mut registry = if reg_dir.join(spatial::MANIFEST_FILE).is_file() {
        let reg = SpatialNetRegistry::load(&reg_dir)?;
        if reg.angular() != a || reg.config() != &stage.network {
            return Err(Error::Config(format!(
                "{} holds models for a different network or angular side; use a new --out",
                reg_dir.display()
            )));
        }
        reg
    } else {
        SpatialNetRegistry::new(a, stage.network.clone())
    };
    let keys: Vec<SpatialNetKey> = pairs
        .iter()
        .flat_map(|&[u, v]| (0..channels).map(move |c| SpatialNetKey::new(u, v, c)))
        .collect();
    let datasets = keys
        .iter()
        .map(|&k| spatial_data(&fields, k))
        .collect::<Result<Vec<_>>>()?;
    let mut lines = vec![summary_line("spatial", &datasets[0], keys.len())];
    let logs = logs_dir(&cfg.out);
    let ckpts = checkpoints_dir(&cfg.out);
    let results = keys
        .par_iter()
        .zip(&datasets)
        .map(|(&key, data)| {
            let mut tc = stage.train.clone();
            tc.seed = spatial::key_seed(stage.train.seed, key);
            let build = || spatial::build_spatial_net(a, &stage.network, tc.seed, tc.init_std);
            let ckpt = ckpts.join(format!("spatial_{}_{}_{}.ckpt", key.u, key.v, key.channel));
            Ok(train_model(build, tc.clone(), data, &ckpt, opts)?.into_parts())
        })
        .collect::<Result<Vec<(Network, Vec<LossRecord>)>>>()?;
    for (key, (net, history)) in keys.iter().zip(results) {
        let path = logs.join(format!("spatial_{}_{}_{}.csv", key.u, key.v, key.channel));
        commands::write_text(&path, &nn::loss_csv(&history))?;
        registry.insert(*key, net)?;
    }
    registry.save(&reg_dir)?;
    lines.push(format!("registry: {} trained key(s) in {}", registry.len(), reg_dir.display()));
    Ok(lines)
}

/// PSNR (peak 1) of clamped predictions over every target element.
pub fn dataset_psnr(net: &Network, data: &Dataset) -> Result<f64> {
    const CHUNK: usize = 1024;
    let mut sse = 0.0;
    let mut start = 0;
    while start < data.len() {
        let idx: Vec<usize> = (start..(start + CHUNK).min(data.len())).collect();
        let (x, y) = data.gather(&idx);
        let pred = net.forward_batch(&x, idx.len())?;
        sse += pred
            .iter()
            .zip(&y)
            .map(|(p, t)| (p.clamp(0.0, 1.0) - t).powi(2))
            .sum::<f64>();
        start += CHUNK;
    }
    let mse = sse / (data.len() * data.target_len()) as f64;
    Ok(if mse == 0.0 { f64::INFINITY } else { -10.0 * mse.log10() })
}

/// Trains every variant of `axis` on identical data and seed, and returns a
/// `variant,step,psnr_db` CSV of held-out PSNR against training steps.
pub fn sweep(
    cfg: &ExperimentConfig,
    axis: SweepAxis,
    target: Target,
    key: [usize; 2],
    channel: usize,
) -> Result<String> {
    let variants = match axis {
        SweepAxis::FilterSize => NetworkConfig::filter_size_variants(),
        SweepAxis::Depth => NetworkConfig::depth_variants(),
    };
    let manifest = PreparedManifest::load(&cfg.out)?;
    let prepared = cfg.out.join(PREPARED_DIR);
    let (train, test, mut tc) = match target {
        Target::Angular => {
            let pick = |f: &commands::PreparedField| prepared.join(&f.spatial_low);
            (
                read_split(&manifest, "train", pick)?,
                read_split(&manifest, "test", pick)?,
                cfg.angular.train.clone(),
            )
        }
        Target::Spatial => (
            read_split(&manifest, "train", |f| f.source.clone())?,
            read_split(&manifest, "test", |f| f.source.clone())?,
            cfg.spatial.train.clone(),
        ),
    };
    let test = if test.is_empty() { train.clone() } else { test };
    let channels = check_channels(&train)?;
    if channel >= channels {
        return Err(Error::ChannelCount {
            expected: channels,
            found: channel + 1,
        });
    }
    let a = train[0].angular();
    let (train_data, test_data) = match target {
        Target::Angular => (angular_data(&train, channel)?, angular_data(&test, channel)?),
        Target::Spatial => {
            let k = SpatialNetKey::new(key[0], key[1], channel);
            (spatial_data(&train, k)?, spatial_data(&test, k)?)
        }
    };
    let nets = variants
        .iter()
        .map(|(name, net_cfg)| {
            let net = match target {
                Target::Angular => angular::build_angular_net(a / 2, net_cfg, tc.seed, tc.init_std),
                Target::Spatial => spatial::build_spatial_net(a, net_cfg, tc.seed, tc.init_std),
            };
            net.map_err(|e| Error::Config(format!("variant {name}: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let total = tc.iterations;
    tc.iterations = 0;
    let mut csv = String::from("variant,step,psnr_db\n");
    for ((name, _), net) in variants.iter().zip(nets) {
        let mut trainer = Trainer::new(net, tc.clone())?;
        loop {
            let psnr = dataset_psnr(trainer.network(), &test_data)?;
            csv.push_str(&format!("{name},{},{psnr:.6}\n", trainer.step()));
            if trainer.step() >= total {
                break;
            }
            trainer.continue_to((trainer.step() + cfg.sweep.eval_interval).min(total));
            trainer.run(&train_data)?;
        }
    }
    Ok(csv)
}
