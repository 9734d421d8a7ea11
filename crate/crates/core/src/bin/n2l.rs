use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use n2l::bitstream::{deserialize, HEADER_LEN};
use n2l::codec::{decode, decode_model, dump_latent, encode, EncodeOptions};
use n2l::eval::{
    ablate, bd_rate, list_images, read_rd_csv, run_eval, seed_spread, write_eval_csv, write_rd_dat, AblationMode,
    EvalConfig,
};
use n2l::image_io::{load_rgb, save_gray_png, save_png};
use n2l::model::{count_params, ModelConfig, Setting};
use n2l::train::TrainConfig;
use n2l::Result;

const EXIT_CODES: &str = "\
Exit codes:
  0  success
  2  bad input (unreadable image, bad arguments, I/O failure)
  3  malformed or unsupported stream
  4  training diverged or weights left the quantizer range
  5  image size outside 8..=65535 per side";

#[derive(Parser)]
#[command(name = "n2l", version, about = "Noise-to-latent image codec", after_help = EXIT_CODES)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    NoGpp,
    SingleScale,
}

#[derive(Subcommand)]
enum Cmd {
    /// Overfit a model to an image and write the stream.
    #[command(after_help = EXIT_CODES)]
    Encode {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0, value_parser = setting_id)]
        setting: u8,
        #[arg(long, default_value_t = 0)]
        seed: u16,
        #[arg(long, default_value_t = 0)]
        init_seed: u16,
        #[arg(long, default_value_t = 10_000)]
        steps: usize,
        /// Rate-distortion weight (default 0.02 * H * W).
        #[arg(long)]
        lambda: Option<f64>,
        /// Ablation: drop the GPP and feed noise straight to one network.
        #[arg(long)]
        no_gpp: bool,
        /// Ablation: one full-resolution noise scale.
        #[arg(long)]
        single_scale: bool,
        /// Write the convergence curve (step,mse,psnr,lr) here.
        #[arg(long)]
        curve: Option<PathBuf>,
    },
    /// Reconstruct an image from a stream.
    #[command(after_help = EXIT_CODES)]
    Decode {
        stream: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the header and size breakdown of a stream.
    #[command(after_help = EXIT_CODES)]
    Info { stream: PathBuf },
    /// Encode and decode every image in a directory for each setting and seed.
    #[command(after_help = EXIT_CODES)]
    Eval {
        dir: PathBuf,
        /// Settings to run, comma separated.
        #[arg(long, value_delimiter = ',', num_args = 0.., default_value = "0", value_parser = setting_id)]
        setting: Vec<u8>,
        /// Noise seeds to run, comma separated.
        #[arg(long, value_delimiter = ',', num_args = 1.., default_value = "0")]
        seed: Vec<u16>,
        #[arg(long, default_value_t = 0)]
        init_seed: u16,
        #[arg(long, default_value_t = 10_000)]
        steps: usize,
        #[arg(long)]
        lambda: Option<f64>,
        /// Result CSV; the RD data file is written next to it with a `.dat` extension.
        #[arg(long)]
        out: PathBuf,
        /// Directory for per-run convergence CSVs.
        #[arg(long)]
        curves: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Compare the full model against an ablated variant on one image.
    #[command(after_help = EXIT_CODES)]
    Ablate {
        input: PathBuf,
        #[arg(long, value_enum)]
        mode: Mode,
        #[arg(long, default_value_t = 0, value_parser = setting_id)]
        setting: u8,
        #[arg(long, default_value_t = 0)]
        seed: u16,
        #[arg(long, default_value_t = 0)]
        init_seed: u16,
        #[arg(long, default_value_t = 10_000)]
        steps: usize,
        #[arg(long)]
        lambda: Option<f64>,
        /// Also write the report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write one noise channel, the matching latent channel and the
    /// reconstruction as PNGs.
    #[command(after_help = EXIT_CODES)]
    DumpLatent {
        stream: PathBuf,
        #[arg(long, default_value_t = 0)]
        channel: usize,
        /// Output prefix: writes PREFIX_noise.png, PREFIX_latent.png, PREFIX_recon.png.
        #[arg(long)]
        out: PathBuf,
    },
    /// Bjøntegaard delta rate between two eval CSVs.
    #[command(after_help = EXIT_CODES)]
    Bdrate { anchor: PathBuf, test: PathBuf },
}

fn setting_id(s: &str) -> std::result::Result<u8, String> {
    let id: u8 = s.trim().parse().map_err(|_| format!("`{s}` is not a setting id"))?;
    Setting::from_id(id).map(|_| id).map_err(|e| e.to_string())
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut name = prefix.as_os_str().to_owned();
    name.push(suffix);
    PathBuf::from(name)
}

fn train_config(steps: usize, init_seed: u16) -> TrainConfig {
    TrainConfig {
        init_seed,
        ..TrainConfig::with_steps(steps)
    }
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Encode {
            input,
            out,
            setting,
            seed,
            init_seed,
            steps,
            lambda,
            no_gpp,
            single_scale,
            curve,
        } => {
            let image = load_rgb(&input)?;
            let opts = EncodeOptions {
                seed,
                lambda,
                no_gpp,
                single_scale,
                train: train_config(steps, init_seed),
                ..EncodeOptions::new(Setting::from_id(setting)?, steps)
            };
            let enc = encode(&image, &opts, |p| {
                eprintln!("step {:>6}  psnr {:7.3} dB  lr {:.2e}", p.step, p.psnr_db, p.lr);
            })?;
            fs::write(&out, &enc.stream)?;
            if let Some(path) = curve {
                enc.train.write_csv(fs::File::create(path)?)?;
            }
            println!("stream        {} ({} bytes)", out.display(), enc.stream.len());
            println!("params        {}", count_params(&opts.config()));
            println!("bpp           {:.6}", enc.bpp);
            println!(
                "steps exp     gpp {} synth {}",
                enc.header.gpp_step_exp, enc.header.synth_step_exp
            );
            println!("psnr trained  {:.4} dB", enc.psnr_trained_db);
            println!("psnr quant    {:.4} dB", enc.psnr_quantized_db);
            println!("psnr output   {:.4} dB", enc.psnr_db);
            println!("train time    {:.2} s", enc.train_seconds);
            println!("search time   {:.2} s", enc.search_seconds);
        }
        Cmd::Decode { stream, out } => {
            let dec = decode(&fs::read(&stream)?)?;
            save_png(&out, &dec.image)?;
            println!(
                "wrote {} ({}x{})",
                out.display(),
                dec.parsed.header.width,
                dec.parsed.header.height
            );
            println!("decode time   {:.1} ms", dec.seconds * 1e3);
        }
        Cmd::Info { stream } => {
            let bytes = fs::read(&stream)?;
            let p = deserialize(&bytes)?;
            let h = &p.header;
            let flags = ModelConfig::flag_names(h.flags);
            println!("magic         N2L1");
            println!("version       {}", h.version);
            println!("setting       {}", h.setting_id);
            println!(
                "flags         {:#04x} ({})",
                h.flags,
                if flags.is_empty() {
                    "none".to_string()
                } else {
                    flags.join(", ")
                }
            );
            println!("dims          {}x{}", h.width, h.height);
            println!("seed          {}", h.seed);
            println!("init seed     {}", h.init_seed);
            println!("step exp      gpp {} synth {}", h.gpp_step_exp, h.synth_step_exp);
            println!(
                "params        gpp {} synth {}",
                p.params.gpp.len(),
                p.params.synth.len()
            );
            println!("header bits   {}", HEADER_LEN * 8);
            println!("gpp bits      {}", p.gpp_bytes * 8);
            println!("synth bits    {}", p.synth_bytes * 8);
            println!("total bits    {}", bytes.len() * 8);
            println!("bpp           {:.6}", p.bpp());
        }
        Cmd::Eval {
            dir,
            setting,
            seed,
            init_seed,
            steps,
            lambda,
            out,
            curves,
            jobs,
        } => {
            let settings = setting.into_iter().map(Setting::from_id).collect::<Result<Vec<_>>>()?;
            let cfg = EvalConfig {
                images: list_images(&dir)?,
                settings,
                seeds: seed,
                train: train_config(steps, init_seed),
                lambda,
                jobs,
                curves_dir: curves,
            };
            let dataset = fs::canonicalize(&dir)
                .ok()
                .and_then(|d| d.file_name().map(|n| n.to_string_lossy().into_owned()))
                .unwrap_or_default();
            let records = run_eval(&cfg, &dataset)?;
            write_eval_csv(&records, fs::File::create(&out)?)?;
            write_rd_dat(&records, fs::File::create(out.with_extension("dat"))?)?;
            for r in &records {
                if r.error.is_empty() {
                    println!(
                        "{} s{} seed {}: {:.4} bpp {:.3} dB",
                        r.image, r.setting, r.seed, r.bpp, r.psnr_db
                    );
                } else {
                    println!("{} s{} seed {}: FAILED {}", r.image, r.setting, r.seed, r.error);
                }
            }
            if cfg.seeds.len() > 1 {
                for (image, s, spread) in seed_spread(&records) {
                    println!("seed spread {image} s{s}: {spread:.3} dB");
                }
            }
        }
        Cmd::Ablate {
            input,
            mode,
            setting,
            seed,
            init_seed,
            steps,
            lambda,
            out,
        } => {
            let image = load_rgb(&input)?;
            let base = EncodeOptions {
                seed,
                lambda,
                train: train_config(steps, init_seed),
                ..EncodeOptions::new(Setting::from_id(setting)?, steps)
            };
            let mode = match mode {
                Mode::NoGpp => AblationMode::NoGpp,
                Mode::SingleScale => AblationMode::SingleScale,
            };
            let report = ablate(&image, mode, &base)?;
            report.write_text(std::io::stdout())?;
            if let Some(path) = out {
                report.write_text(fs::File::create(path)?)?;
            }
        }
        Cmd::DumpLatent { stream, channel, out } => {
            let d = decode_model(&fs::read(&stream)?)?;
            let dump = dump_latent(&d, channel)?;
            let (h, w) = (usize::from(d.parsed.header.height), usize::from(d.parsed.header.width));
            save_gray_png(&with_suffix(&out, "_noise.png"), &dump.noise, h, w)?;
            save_gray_png(&with_suffix(&out, "_latent.png"), &dump.latent, h, w)?;
            save_png(&with_suffix(&out, "_recon.png"), &dump.image)?;
            println!("wrote {}_{{noise,latent,recon}}.png", out.display());
        }
        Cmd::Bdrate { anchor, test } => {
            let rate = bd_rate(&read_rd_csv(&anchor)?, &read_rd_csv(&test)?)?;
            println!("bd-rate {rate:+.3} %");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
