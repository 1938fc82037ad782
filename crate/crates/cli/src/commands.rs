use std::fs;
use std::path::{Path, PathBuf};

use lfsr_core::container::{self, ContainerMeta, Layout};
use lfsr_core::metrics::{self, EvalReport};
use lfsr_core::{
    fsutil, AngularNetBundle, Baseline, Error, LightField, Result, SpatialNetRegistry,
};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;

pub const PREPARED_DIR: &str = "prepared";
pub const PREPARED_MANIFEST: &str = "manifest.json";

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fsutil::write_file(path, text.as_bytes())
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("value serializes") + "\n"
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Mode {
    Angular,
    Spatial,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum LayoutArg {
    Views,
    Mosaic,
}

impl From<LayoutArg> for Layout {
    fn from(l: LayoutArg) -> Self {
        match l {
            LayoutArg::Views => Layout::Views,
            LayoutArg::Mosaic => Layout::Mosaic,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct IngestSummary {
    pub path: PathBuf,
    pub layout: &'static str,
    #[serde(flatten)]
    pub meta: ContainerMeta,
}

pub fn ingest(path: &Path) -> Result<IngestSummary> {
    let lf = container::read_container(path)?;
    let has_mosaic = path.join(container::MOSAIC_FILE).is_file();
    let has_views = path.join(container::view_file_name(0, 0)).is_file();
    let layout = match (has_views, has_mosaic) {
        (true, true) => "views+mosaic",
        (true, false) => "views",
        _ => "mosaic",
    };
    Ok(IngestSummary {
        path: path.to_path_buf(),
        layout,
        meta: ContainerMeta::of(&lf),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreparedField {
    pub name: String,
    pub split: String,
    /// Ground-truth container, as listed in the configuration.
    pub source: PathBuf,
    /// Every other lenslet dropped; relative to the prepared directory.
    pub spatial_low: PathBuf,
    /// `spatial_low` with every other angular sample dropped.
    pub angular_low: PathBuf,
    pub ground_truth: ContainerMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreparedManifest {
    pub fields: Vec<PreparedField>,
}

impl PreparedManifest {
    pub fn load(out: &Path) -> Result<Self> {
        let path = out.join(PREPARED_DIR).join(PREPARED_MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| {
            Error::Config(format!(
                "{}: {e}; run `lfsr prepare` first",
                path.display()
            ))
        })?;
        serde_json::from_str(&text).map_err(|source| Error::Json { path, source })
    }

    pub fn split<'a>(&'a self, split: &'a str) -> impl Iterator<Item = &'a PreparedField> + 'a {
        self.fields.iter().filter(move |f| f.split == split)
    }
}

fn field_name(index: usize, path: &Path) -> String {
    let base = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "field".into());
    format!("{index:02}_{base}")
}

/// Reads every listed container, derives the low-resolution fields and only
/// then writes `<out>/prepared` in one atomic step.
pub fn prepare(cfg: &ExperimentConfig) -> Result<PreparedManifest> {
    cfg.validate_data()?;
    let sources: Vec<(&str, &PathBuf)> = cfg
        .data
        .train
        .iter()
        .map(|p| ("train", p))
        .chain(cfg.data.test.iter().map(|p| ("test", p)))
        .collect();
    let mut derived = Vec::with_capacity(sources.len());
    for (i, (split, path)) in sources.iter().enumerate() {
        let lf = container::read_container(path)?;
        let spatial_low = lf.downsample_spatial();
        let angular_low = spatial_low.downsample_angular()?;
        let name = field_name(i, path);
        let field = PreparedField {
            spatial_low: PathBuf::from(&name).join("spatial_low"),
            angular_low: PathBuf::from(&name).join("angular_low"),
            name,
            split: split.to_string(),
            source: (*path).clone(),
            ground_truth: ContainerMeta::of(&lf),
        };
        derived.push((field, spatial_low, angular_low));
    }
    let manifest = PreparedManifest {
        fields: derived.iter().map(|d| d.0.clone()).collect(),
    };
    let dir = cfg.out.join(PREPARED_DIR);
    fsutil::replace_dir(&dir, |tmp| {
        for (field, spatial_low, angular_low) in &derived {
            container::write_container(spatial_low, &tmp.join(&field.spatial_low), Layout::Views)?;
            container::write_container(angular_low, &tmp.join(&field.angular_low), Layout::Views)?;
        }
        write_text(&tmp.join(PREPARED_MANIFEST), &to_json(&manifest))
    })?;
    Ok(manifest)
}

pub fn models_dir(out: &Path) -> PathBuf {
    out.join("models")
}

pub fn angular_dir(models: &Path) -> PathBuf {
    models.join("angular")
}

pub fn spatial_dir(models: &Path) -> PathBuf {
    models.join("spatial_models")
}

pub fn enhance(
    input: &Path,
    models: &Path,
    mode: Mode,
    copy_through: bool,
    output: &Path,
    layout: Layout,
) -> Result<ContainerMeta> {
    let lf = container::read_container(input)?;
    let load_angular = || -> Result<AngularNetBundle> {
        let mut bundle = AngularNetBundle::load(&angular_dir(models))?;
        bundle.copy_through |= copy_through;
        Ok(bundle)
    };
    let out = match mode {
        Mode::Angular => load_angular()?.upsample_field(&lf)?,
        Mode::Spatial => {
            let reg = SpatialNetRegistry::load(&spatial_dir(models))?;
            lfsr_core::spatial::spatial_sr_lightfield(&lf, &reg)?
        }
        Mode::Full => {
            let bundle = load_angular()?;
            let reg = SpatialNetRegistry::load(&spatial_dir(models))?;
            lfsr_core::spatial::lfsr_enhance(&lf, &bundle, &reg)?
        }
    };
    container::write_container(&out, output, layout)?;
    Ok(ContainerMeta::of(&out))
}

pub fn baseline(input: &Path, method: Baseline, mode: Mode, output: &Path, layout: Layout) -> Result<ContainerMeta> {
    let lf = container::read_container(input)?;
    let out = match mode {
        Mode::Angular => method.angular(&lf)?,
        Mode::Spatial => method.spatial(&lf)?,
        Mode::Full => method.full(&lf)?,
    };
    container::write_container(&out, output, layout)?;
    Ok(ContainerMeta::of(&out))
}

/// Scores each `(reference, test)` pair and, for more than one pair, combines
/// them with the configured aggregation.
pub fn evaluate(
    cfg: &ExperimentConfig,
    pairs: &[(PathBuf, PathBuf)],
    method: &str,
) -> Result<EvalReport> {
    if pairs.is_empty() {
        return Err(Error::Config("evaluate needs at least one --reference/--test pair".into()));
    }
    let included = cfg.perspectives();
    let mut reports = Vec::with_capacity(pairs.len());
    for (r, t) in pairs {
        let reference: LightField = container::read_container(r)?;
        let test = container::read_container(t)?;
        reports.push(metrics::evaluate_lf(&reference, &test, included.as_deref(), method)?);
    }
    if reports.len() == 1 {
        Ok(reports.pop().unwrap())
    } else {
        metrics::aggregate(&reports, cfg.evaluate.aggregation, method)
    }
}

/// Writes `<stem>.json` and `<stem>.txt`.
pub fn write_report(report: &EvalReport, stem: &Path) -> Result<(PathBuf, PathBuf)> {
    let json = stem.with_extension("json");
    let txt = stem.with_extension("txt");
    write_text(&json, &report.to_json())?;
    write_text(&txt, &report.to_table())?;
    Ok((json, txt))
}
