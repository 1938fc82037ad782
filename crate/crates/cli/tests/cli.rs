use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lfsr_core::container::{self, Layout};
use lfsr_core::metrics::EvalReport;
use lfsr_core::synthetic::smooth_field;
use tempfile::TempDir;

const NETS: &str = r#"
[angular.network]
convs = [{ filters = 4, kernel = 3 }, { filters = 4, kernel = 1 }]

[angular.train]
learning_rates = [1e-3]
init_std = 1e-2
batch_size = 8
iterations = ITER
log_interval = 7

[spatial.network]
convs = [{ filters = 4, kernel = 3 }, { filters = 4, kernel = 1 }]

[spatial.train]
learning_rates = [1e-3]
init_std = 1e-2
batch_size = 8
iterations = ITER
log_interval = 7

[sweep]
eval_interval = 5
"#;

struct Work {
    dir: TempDir,
}

impl Work {
    /// Train and test containers (one channel, 12x12 lenslets, A = `a`).
    fn new(a: usize) -> Self {
        let dir = tempfile::tempdir().unwrap();
        for (name, seed) in [("train", 1), ("test", 2)] {
            let lf = container::quantize(&smooth_field(1, 12, 12, a, seed));
            container::write_container(&lf, &dir.path().join(name), Layout::Views).unwrap();
        }
        Self { dir }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn config(&self, name: &str, iterations: u64) -> PathBuf {
        let text = format!(
            "seed = 3\n{}\n[data]\ntrain = [{:?}]\ntest = [{:?}]\n",
            NETS.replace("ITER", &iterations.to_string()),
            self.path("train"),
            self.path("test")
        );
        let path = self.path(name);
        fs::write(&path, text).unwrap();
        path
    }

    fn run(&self, config: &Path, out: &str, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_lfsr"))
            .arg("--config")
            .arg(config)
            .arg("--out")
            .arg(self.path(out))
            .args(args)
            .output()
            .unwrap()
    }

    fn ok(&self, config: &Path, out: &str, args: &[&str]) -> String {
        let o = self.run(config, out, args);
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        String::from_utf8(o.stdout).unwrap()
    }
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn ingest_reports_shape_and_rejects_missing_containers() {
    let w = Work::new(4);
    let cfg = w.config("c.toml", 10);
    let out = w.ok(&cfg, "out", &["ingest", w.path("train").to_str().unwrap()]);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["angular"], 4);
    assert_eq!(v["height"], 12);

    let o = w.run(&cfg, "out", &["ingest", w.path("nowhere").to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).starts_with("error["), "{}", stderr(&o));
}

#[test]
fn prepare_rejects_odd_angular_side_before_writing() {
    let w = Work::new(5);
    let cfg = w.config("c.toml", 10);
    let o = w.run(&cfg, "out", &["prepare"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("error["), "{}", stderr(&o));
    assert!(!w.path("out/prepared").exists());
}

#[test]
fn usage_errors_exit_with_config_code() {
    let w = Work::new(4);
    let cfg = w.config("c.toml", 10);
    w.ok(&cfg, "out", &["prepare"]);
    let o = w.run(&cfg, "out", &["train", "spatial"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).starts_with("error[config]"));

    let o = w.run(
        &cfg,
        "out",
        &["baseline", "--input", w.path("test").to_str().unwrap(), "--output", w.path("b").to_str().unwrap(), "--method", "lanczos"],
    );
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));

    fs::write(w.path("bad.toml"), "seed = 1\ncolour = 3\n").unwrap();
    let o = w.run(&w.path("bad.toml"), "out", &["prepare"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn effective_config_round_trips() {
    let w = Work::new(4);
    let cfg = w.config("c.toml", 10);
    let printed = w.ok(&cfg, "out", &["--seed", "9", "--print-effective-config"]);
    assert!(printed.contains("seed = 9"));
    fs::write(w.path("again.toml"), &printed).unwrap();
    let again = w.ok(&w.path("again.toml"), "out", &["--print-effective-config"]);
    assert_eq!(printed, again);
}

#[test]
fn baseline_pipeline_and_report() {
    let w = Work::new(4);
    let cfg = w.config("c.toml", 10);
    w.ok(&cfg, "out", &["prepare"]);
    let low = w.path("out/prepared/01_test/angular_low");
    let up = w.path("up");
    w.ok(&cfg, "out", &["baseline", "--input", low.to_str().unwrap(), "--output", up.to_str().unwrap(), "--method", "bicubic-interp"]);
    let meta = container::read_meta(&up).unwrap();
    assert_eq!((meta.height, meta.width, meta.angular), (12, 12, 4));

    let table = w.ok(
        &cfg,
        "out",
        &["evaluate", "--reference", w.path("test").to_str().unwrap(), "--test", up.to_str().unwrap(), "--method", "bicubic-interp"],
    );
    assert!(table.contains("bicubic-interp"));
    let json = fs::read_to_string(w.path("out/reports/bicubic-interp.json")).unwrap();
    let report = EvalReport::from_json(&json).unwrap();
    assert_eq!(report.per_perspective.len(), 16);
    assert!(report.summary.psnr.avg.is_finite());
    assert_eq!(EvalReport::from_json(&report.to_json()).unwrap(), report);
}

#[test]
fn resumed_training_matches_a_fresh_run() {
    let w = Work::new(6);
    let short = w.config("short.toml", 20);
    let long = w.config("long.toml", 45);
    for out in ["fresh", "resumed"] {
        w.ok(&short, out, &["prepare"]);
    }
    w.ok(&long, "fresh", &["train", "angular", "--checkpoint-every", "10"]);
    w.ok(&short, "resumed", &["train", "angular"]);
    w.ok(&long, "resumed", &["train", "angular", "--resume"]);
    for rel in ["models/angular/channel_0.model", "logs/angular_c0.csv", "checkpoints/angular_c0.ckpt"] {
        let a = fs::read(w.path("fresh").join(rel)).unwrap();
        let b = fs::read(w.path("resumed").join(rel)).unwrap();
        assert!(a == b, "{rel} differs");
    }

    w.ok(&long, "fresh", &["train", "spatial", "--keys", "1,2"]);
    w.ok(&short, "resumed", &["train", "spatial", "--keys", "1,2"]);
    w.ok(&long, "resumed", &["train", "spatial", "--keys", "1,2", "--resume"]);
    for rel in ["models/spatial_models/1_2_0.model", "logs/spatial_1_2_0.csv"] {
        let a = fs::read(w.path("fresh").join(rel)).unwrap();
        let b = fs::read(w.path("resumed").join(rel)).unwrap();
        assert!(a == b, "{rel} differs");
    }
}

#[test]
fn full_enhance_needs_every_spatial_model() {
    let w = Work::new(6);
    let cfg = w.config("c.toml", 5);
    w.ok(&cfg, "out", &["prepare"]);
    w.ok(&cfg, "out", &["train", "angular"]);
    w.ok(&cfg, "out", &["train", "spatial", "--keys", "0,0"]);
    let low = w.path("out/prepared/01_test/angular_low");
    let o = w.run(&cfg, "out", &["enhance", "--input", low.to_str().unwrap(), "--output", w.path("e").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(5), "{}", stderr(&o));
    assert!(stderr(&o).contains("(5,5,0)"), "{}", stderr(&o));

    // angular-only enhancement works with the angular bundle alone
    w.ok(&cfg, "out", &["enhance", "--mode", "angular", "--input", low.to_str().unwrap(), "--output", w.path("e").to_str().unwrap()]);
    assert_eq!(container::read_meta(&w.path("e")).unwrap().angular, 6);
}

#[test]
fn sweeps_write_one_series_per_variant() {
    // the k2=5 variant needs a 7x7 angular input
    let w = Work::new(14);
    let cfg = w.config("c.toml", 10);
    w.ok(&cfg, "out", &["prepare"]);
    for (axis, variants) in [("filter-size", 3), ("depth", 5)] {
        let path = w.ok(&cfg, "out", &["sweep", "--axis", axis]);
        let csv = fs::read_to_string(path.trim()).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("variant,step,psnr_db"));
        let rows: Vec<_> = lines.collect();
        // steps 0, 5, 10 for every variant
        assert_eq!(rows.len(), 3 * variants, "{csv}");
        let names: std::collections::BTreeSet<_> = rows.iter().map(|r| r.rsplitn(3, ',').last().unwrap()).collect();
        assert_eq!(names.len(), variants);
    }
}
