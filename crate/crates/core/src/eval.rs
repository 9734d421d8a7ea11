//! Evaluation harness: batch encode/decode, RD summaries, seed sweeps,
//! ablations and BD-rate.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::codec::{decode, encode, EncodeOptions, Encoded};
use crate::error::{Error, Result};
use crate::image_io::load_rgb;
use crate::model::{count_params, Setting};
use crate::tensor::Tensor;
use crate::train::{psnr, TrainConfig, TrainReport};

/// One `(image, setting, seed)` run. Rate and quality come from decoding the
/// produced stream, never from encoder bookkeeping.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRecord {
    pub dataset: String,
    pub image: String,
    pub setting: u8,
    pub seed: u16,
    pub bpp: f64,
    pub psnr_db: f64,
    pub encode_seconds: f64,
    pub decode_ms: f64,
    /// Empty on success.
    pub error: String,
}

pub const EVAL_CSV_HEADER: [&str; 9] = [
    "dataset",
    "image",
    "setting",
    "seed",
    "bpp",
    "psnr_db",
    "encode_s",
    "decode_ms",
    "error",
];

#[derive(Clone, Debug)]
pub struct EvalConfig {
    pub images: Vec<PathBuf>,
    pub settings: Vec<Setting>,
    pub seeds: Vec<u16>,
    pub train: TrainConfig,
    pub lambda: Option<f64>,
    pub jobs: usize,
    /// Directory for per-run convergence CSVs; none are written when unset.
    pub curves_dir: Option<PathBuf>,
}

/// Image files (`png`, `ppm`, `pnm`) directly inside `dir`, sorted by name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if path.is_file() && matches!(ext.as_deref(), Some("png" | "ppm" | "pnm")) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Convergence CSV name for one run.
pub fn curve_file_name(image: &str, setting: u8, seed: u16) -> String {
    let stem = Path::new(image)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    format!("{stem}_s{setting}_seed{seed}.csv")
}

struct Job<'a> {
    path: &'a Path,
    setting: Setting,
    seed: u16,
}

fn run_job(job: &Job, cfg: &EvalConfig, dataset: &str) -> EvalRecord {
    let mut rec = EvalRecord {
        dataset: dataset.to_owned(),
        image: file_name(job.path),
        setting: job.setting.id(),
        seed: job.seed,
        bpp: f64::NAN,
        psnr_db: f64::NAN,
        encode_seconds: f64::NAN,
        decode_ms: f64::NAN,
        error: String::new(),
    };
    let result = (|| -> Result<()> {
        let image = load_rgb(job.path)?;
        let opts = EncodeOptions {
            seed: job.seed,
            lambda: cfg.lambda,
            train: cfg.train.clone(),
            ..EncodeOptions::new(job.setting, cfg.train.steps)
        };
        let started = Instant::now();
        let enc = encode(&image, &opts, |_| {})?;
        rec.encode_seconds = started.elapsed().as_secs_f64();
        if let Some(dir) = &cfg.curves_dir {
            let path = dir.join(curve_file_name(&rec.image, rec.setting, rec.seed));
            enc.train.write_csv(std::fs::File::create(path)?)?;
        }
        let started = Instant::now();
        let dec = decode(&enc.stream)?;
        rec.decode_ms = started.elapsed().as_secs_f64() * 1e3;
        rec.bpp = dec.parsed.bpp();
        rec.psnr_db = psnr(&dec.image, &image)?;
        Ok(())
    })();
    if let Err(e) = result {
        rec.error = e.to_string();
    }
    rec
}

/// Runs every `(image, setting, seed)` combination on a pool of `jobs`
/// threads. Records come back ordered by image name, setting, then seed.
pub fn run_eval(cfg: &EvalConfig, dataset: &str) -> Result<Vec<EvalRecord>> {
    if let Some(dir) = &cfg.curves_dir {
        std::fs::create_dir_all(dir)?;
    }
    let mut images: Vec<&PathBuf> = cfg.images.iter().collect();
    images.sort_by_key(|p| file_name(p));
    let mut settings = cfg.settings.clone();
    settings.sort();
    let mut seeds = cfg.seeds.clone();
    seeds.sort();
    let mut jobs = Vec::new();
    for p in &images {
        for &setting in &settings {
            for &seed in &seeds {
                jobs.push(Job { path: p, setting, seed });
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs.max(1))
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    Ok(pool.install(|| jobs.par_iter().map(|j| run_job(j, cfg, dataset)).collect()))
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Config(format!("CSV: {other:?}")),
    }
}

pub fn write_eval_csv(records: &[EvalRecord], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(EVAL_CSV_HEADER).map_err(csv_err)?;
    for r in records {
        w.write_record([
            r.dataset.clone(),
            r.image.clone(),
            r.setting.to_string(),
            r.seed.to_string(),
            format!("{:.6}", r.bpp),
            format!("{:.4}", r.psnr_db),
            format!("{:.3}", r.encode_seconds),
            format!("{:.3}", r.decode_ms),
            r.error.clone(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// One RD point per setting: mean bpp and PSNR over successful records.
pub fn rd_points(records: &[EvalRecord]) -> Vec<(u8, f64, f64, usize)> {
    let mut out: Vec<(u8, f64, f64, usize)> = Vec::new();
    for r in records.iter().filter(|r| r.error.is_empty()) {
        match out.iter_mut().find(|p| p.0 == r.setting) {
            Some(p) => {
                p.1 += r.bpp;
                p.2 += r.psnr_db;
                p.3 += 1;
            }
            None => out.push((r.setting, r.bpp, r.psnr_db, 1)),
        }
    }
    for p in &mut out {
        p.1 /= p.3 as f64;
        p.2 /= p.3 as f64;
    }
    out.sort_by_key(|p| p.0);
    out
}

/// Whitespace-separated RD data for gnuplot (`plot "rd.dat" using 2:3`).
pub fn write_rd_dat(records: &[EvalRecord], mut out: impl Write) -> Result<()> {
    writeln!(out, "# setting bpp psnr_db runs")?;
    for (s, bpp, psnr, n) in rd_points(records) {
        writeln!(out, "{s} {bpp:.6} {psnr:.4} {n}")?;
    }
    Ok(())
}

/// Largest minus smallest PSNR over the seeds of each `(image, setting)`.
pub fn seed_spread(records: &[EvalRecord]) -> Vec<(String, u8, f64)> {
    let mut out: Vec<(String, u8, f64, f64)> = Vec::new();
    for r in records.iter().filter(|r| r.error.is_empty()) {
        match out.iter_mut().find(|e| e.0 == r.image && e.1 == r.setting) {
            Some(e) => {
                e.2 = e.2.min(r.psnr_db);
                e.3 = e.3.max(r.psnr_db);
            }
            None => out.push((r.image.clone(), r.setting, r.psnr_db, r.psnr_db)),
        }
    }
    out.into_iter().map(|(i, s, lo, hi)| (i, s, hi - lo)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AblationMode {
    NoGpp,
    SingleScale,
}

impl AblationMode {
    pub fn name(self) -> &'static str {
        match self {
            AblationMode::NoGpp => "no-gpp",
            AblationMode::SingleScale => "single-scale",
        }
    }
}

#[derive(Clone, Debug)]
pub struct AblationSide {
    pub params: usize,
    pub bpp: f64,
    pub psnr_db: f64,
    pub stream: Vec<u8>,
    pub train: TrainReport,
}

#[derive(Clone, Debug)]
pub struct AblationReport {
    pub mode: AblationMode,
    pub setting: Setting,
    pub steps: usize,
    pub full: AblationSide,
    pub ablated: AblationSide,
}

impl AblationReport {
    /// Full model PSNR minus ablated PSNR.
    pub fn delta_psnr_db(&self) -> f64 {
        self.full.psnr_db - self.ablated.psnr_db
    }

    pub fn write_text(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(
            out,
            "ablation: {} (setting {}, {} steps)",
            self.mode.name(),
            self.setting.id(),
            self.steps
        )?;
        writeln!(out, "variant,params,bpp,psnr_db")?;
        for (name, s) in [("full", &self.full), (self.mode.name(), &self.ablated)] {
            writeln!(out, "{name},{},{:.6},{:.4}", s.params, s.bpp, s.psnr_db)?;
        }
        let d = self.delta_psnr_db();
        let sign = if d >= 0.0 {
            "full model better or equal"
        } else {
            "ablated model better"
        };
        writeln!(out, "delta_psnr_db,{d:+.4} ({sign})")
    }
}

fn side(enc: Encoded, image: &Tensor, params: usize) -> Result<AblationSide> {
    let dec = decode(&enc.stream)?;
    Ok(AblationSide {
        params,
        bpp: dec.parsed.bpp(),
        psnr_db: psnr(&dec.image, image)?,
        stream: enc.stream,
        train: enc.train,
    })
}

/// Encodes `image` with the full model and with the ablated variant under
/// the same steps, seed and λ, and decodes both streams to compare.
pub fn ablate(image: &Tensor, mode: AblationMode, base: &EncodeOptions) -> Result<AblationReport> {
    let full_opts = EncodeOptions {
        no_gpp: false,
        single_scale: false,
        ..base.clone()
    };
    let abl_opts = EncodeOptions {
        no_gpp: mode == AblationMode::NoGpp,
        single_scale: mode == AblationMode::SingleScale,
        ..full_opts.clone()
    };
    let full_params = count_params(&full_opts.config());
    let abl_params = count_params(&abl_opts.config());
    let full = side(encode(image, &full_opts, |_| {})?, image, full_params)?;
    let ablated = side(encode(image, &abl_opts, |_| {})?, image, abl_params)?;
    Ok(AblationReport {
        mode,
        setting: base.setting,
        steps: base.train.steps,
        full,
        ablated,
    })
}

/// `(bpp, psnr_db)` pairs from an eval CSV, skipping failed rows.
pub fn read_rd_csv(path: &Path) -> Result<Vec<(f64, f64)>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let headers = r.headers().map_err(csv_err)?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Config(format!("{}: no `{name}` column", path.display())))
    };
    let (bc, pc) = (col("bpp")?, col("psnr_db")?);
    let ec = headers.iter().position(|h| h == "error");
    let mut out = Vec::new();
    for row in r.records() {
        let row = row.map_err(csv_err)?;
        if ec.is_some_and(|c| !row.get(c).unwrap_or("").is_empty()) {
            continue;
        }
        let num = |c: usize| -> Result<f64> {
            row.get(c)
                .and_then(|v| v.trim().parse().ok())
                .ok_or_else(|| Error::Config(format!("{}: bad number in row {row:?}", path.display())))
        };
        let (b, p) = (num(bc)?, num(pc)?);
        if b.is_finite() && p.is_finite() {
            out.push((b, p));
        }
    }
    Ok(out)
}

/// Least-squares cubic `y = c0 + c1 x + c2 x^2 + c3 x^3`.
fn cubic_fit(x: &[f64], y: &[f64]) -> Result<[f64; 4]> {
    let a = DMatrix::from_fn(x.len(), 4, |i, j| x[i].powi(j as i32));
    let b = DVector::from_column_slice(y);
    let c = a
        .svd(true, true)
        .solve(&b, 1e-12)
        .map_err(|e| Error::Config(e.to_string()))?;
    Ok([c[0], c[1], c[2], c[3]])
}

fn cubic_integral(c: &[f64; 4], lo: f64, hi: f64) -> f64 {
    let f = |x: f64| c[0] * x + c[1] * x * x / 2.0 + c[2] * x.powi(3) / 3.0 + c[3] * x.powi(4) / 4.0;
    f(hi) - f(lo)
}

/// Bjøntegaard delta rate of `test` against `anchor`, in percent (negative
/// means fewer bits at equal quality). Each curve needs at least four points.
pub fn bd_rate(anchor: &[(f64, f64)], test: &[(f64, f64)]) -> Result<f64> {
    for (name, pts) in [("anchor", anchor), ("test", test)] {
        if pts.len() < 4 {
            return Err(Error::Config(format!(
                "{name} curve has {} points, BD-rate needs at least 4",
                pts.len()
            )));
        }
        if pts.iter().any(|p| p.0.is_nan() || p.0 <= 0.0) {
            return Err(Error::Config(format!("{name} curve has a non-positive rate")));
        }
    }
    let split = |pts: &[(f64, f64)]| -> (Vec<f64>, Vec<f64>) { pts.iter().map(|p| (p.1, p.0.log10())).unzip() };
    let (qa, ra) = split(anchor);
    let (qt, rt) = split(test);
    let lo = qa
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
        .max(qt.iter().copied().fold(f64::INFINITY, f64::min));
    let hi = qa
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
        .min(qt.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    if hi.is_nan() || lo.is_nan() || hi <= lo {
        return Err(Error::Config("the two curves do not overlap in PSNR".into()));
    }
    let ca = cubic_fit(&qa, &ra)?;
    let ct = cubic_fit(&qt, &rt)?;
    let diff = (cubic_integral(&ct, lo, hi) - cubic_integral(&ca, lo, hi)) / (hi - lo);
    Ok((10f64.powf(diff) - 1.0) * 100.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(scale: f64) -> Vec<(f64, f64)> {
        [0.1, 0.2, 0.4, 0.8, 1.6]
            .iter()
            .map(|&b| (b * scale, 25.0 + 4.0 * b.log2()))
            .collect()
    }

    #[test]
    fn bd_rate_of_scaled_curve() {
        let anchor = curve(1.0);
        let test = curve(0.8);
        assert!((bd_rate(&anchor, &test).unwrap() + 20.0).abs() < 1e-6);
        assert!(bd_rate(&anchor, &anchor).unwrap().abs() < 1e-9);
        assert!(bd_rate(&anchor[..3], &test).is_err());
    }

    #[test]
    fn rd_points_average_per_setting() {
        let rec = |setting, bpp, psnr_db, error: &str| EvalRecord {
            dataset: "d".into(),
            image: "a.png".into(),
            setting,
            seed: 0,
            bpp,
            psnr_db,
            encode_seconds: 0.0,
            decode_ms: 0.0,
            error: error.into(),
        };
        let rs = [
            rec(1, 1.0, 30.0, ""),
            rec(0, 0.5, 28.0, ""),
            rec(1, 2.0, 32.0, ""),
            rec(0, f64::NAN, f64::NAN, "boom"),
        ];
        assert_eq!(rd_points(&rs), vec![(0, 0.5, 28.0, 1), (1, 1.5, 31.0, 2)]);
        let spread = seed_spread(&rs);
        assert_eq!(
            spread,
            vec![("a.png".to_string(), 1, 2.0), ("a.png".to_string(), 0, 0.0)]
        );
    }

    #[test]
    fn empty_eval_writes_header_only() {
        let mut buf = Vec::new();
        write_eval_csv(&[], &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            format!("{}\n", EVAL_CSV_HEADER.join(","))
        );
    }

    #[test]
    fn curve_names() {
        assert_eq!(curve_file_name("kodim01.png", 0, 3), "kodim01_s0_seed3.csv");
    }
}
