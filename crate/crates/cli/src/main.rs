//! `rrnet`: build, profile, run, check, train and evaluate RRNet models.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rrnet_core::format::{read_tensor, write_tensor};
use rrnet_core::gradcheck::{gradcheck, GradcheckOptions};
use rrnet_core::metrics::{compute_metrics_cropped, metrics_csv, Crop};
use rrnet_core::ops::{concat_channels, resize_bilinear};
use rrnet_core::pnm::Image;
use rrnet_core::profiler::{profile_preset_sweep, profile_with, ProfileOptions, REFERENCE_INPUT};
use rrnet_core::train::{dataset_loss, load_dataset, loss_csv, train};
use rrnet_core::{blocks::DISPARITY_SCALE, build, parse_config, preset, GraphSpec, Shape, Tensor};

mod error;

use error::CliError;

/// Largest relative gradient error `gradcheck` accepts.
const GRADCHECK_TOLERANCE: f64 = 1e-6;

#[derive(Parser, Debug)]
#[command(name = "rrnet", version, about = "Repetition-reduction stereo disparity networks")]
struct Cli {
    /// Caps the number of compute worker threads.
    #[arg(long, global = true, env = "RRNET_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Initialize a network from a config and write its weights.
    Build {
        #[arg(short = 'c', value_name = "CFG")]
        config: PathBuf,
        #[arg(short = 'o', value_name = "RRWT")]
        out: PathBuf,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Per-layer parameters, MAdds and activation memory.
    Profile {
        #[arg(short = 'c', value_name = "CFG")]
        config: PathBuf,
        /// NxCxHxW; defaults to 1xCx256x512.
        #[arg(long, value_name = "NxCxHxW", value_parser = parse_shape)]
        input: Option<Shape>,
        #[arg(long, value_name = "PATH")]
        csv: Option<PathBuf>,
        /// Count MAdds over this many forward passes.
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
        images: u64,
    },
    /// Predict a disparity map from a stereo pair (or one image for mono graphs).
    Infer {
        #[arg(short = 'm', value_name = "RRWT")]
        weights: PathBuf,
        #[arg(short = 'c', value_name = "CFG")]
        config: PathBuf,
        #[arg(long, value_name = "IMG")]
        left: PathBuf,
        #[arg(long, value_name = "IMG")]
        right: Option<PathBuf>,
        #[arg(short = 'o', value_name = "RRTN")]
        out: PathBuf,
        /// Also write an 8-bit PGM visualization.
        #[arg(long = "png-out", value_name = "PGM")]
        png_out: Option<PathBuf>,
        /// Resample inputs down to the nearest valid size.
        #[arg(long)]
        resize: bool,
    },
    /// Compare analytic gradients with central finite differences.
    Gradcheck {
        #[arg(short = 'c', value_name = "CFG")]
        config: PathBuf,
        #[arg(long, default_value_t = 200)]
        samples: usize,
        #[arg(long, default_value_t = 1e-6)]
        eps: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train on a directory of NNN_in.rrtn / NNN_gt.rrtn pairs.
    TrainToy {
        #[arg(short = 'c', value_name = "CFG")]
        config: PathBuf,
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        #[arg(long)]
        steps: usize,
        #[arg(long)]
        lr: f64,
        #[arg(long, value_name = "RRWT")]
        out: PathBuf,
        #[arg(long, value_name = "CSV")]
        log: PathBuf,
    },
    /// Depth metrics of predicted against ground-truth RRTN maps.
    Eval {
        #[arg(long, value_name = "DIR")]
        pred: PathBuf,
        #[arg(long, value_name = "DIR")]
        gt: PathBuf,
        #[arg(long = "min-valid", default_value_t = 0.0)]
        min_valid: f64,
        /// Evaluation window `top,bottom,left,right` in pixels.
        #[arg(long, value_name = "t,b,l,r", value_parser = parse_crop)]
        crop: Option<Crop>,
        #[arg(long, value_name = "PATH")]
        csv: PathBuf,
    },
    /// Complexity of the shipped rrnet-r1..r4 presets with an affine fit in r.
    Sweep,
}

fn parse_shape(text: &str) -> Result<Shape, String> {
    let dims: Vec<usize> = text
        .split('x')
        .map(|p| p.trim().parse::<usize>().map_err(|_| format!("`{p}` is not a dimension")))
        .collect::<Result<_, _>>()?;
    match dims[..] {
        [n, c, h, w] if n > 0 && c > 0 && h > 0 && w > 0 => Ok(Shape::new(n, c, h, w)),
        _ => Err(format!("expected four positive dimensions NxCxHxW, got `{text}`")),
    }
}

fn parse_crop(text: &str) -> Result<Crop, String> {
    Crop::parse(text).ok_or_else(|| format!("expected t,b,l,r with t < b and l < r, got `{text}`"))
}

fn load_spec(path: &Path) -> Result<GraphSpec, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_config(&text).map_err(|e| CliError::from_core(e).context(path))
}

/// Fails early when an output file could not be created, so that no command
/// writes anything before all its outputs are known to be writable.
fn check_writable(path: &Path) -> Result<(), CliError> {
    let parent = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    if !parent.is_dir() {
        return Err(CliError::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "parent directory does not exist"),
        ));
    }
    if path.is_dir() {
        return Err(CliError::io(
            path,
            std::io::Error::new(std::io::ErrorKind::InvalidInput, "is a directory"),
        ));
    }
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn summary(spec: &GraphSpec, params: u64) -> String {
    let mut s = format!(
        "{}: {} input, {} connections, {} activation, seed {}\n",
        spec.name,
        if spec.input_channels == 3 { "mono" } else { "stereo" },
        spec.connection.name(),
        spec.activation.name(),
        spec.seed
    );
    for (i, st) in spec.stages.iter().enumerate() {
        let dil: Vec<String> = (1..=st.r).map(|j| st.dilation(j).to_string()).collect();
        let _ = writeln!(
            s,
            "stage {}: r={} rr={} re={} rcn={} dilations={}",
            i + 1,
            st.r,
            st.rr,
            st.re,
            spec.rcn_per_stage[i],
            dil.join(",")
        );
    }
    let widths: Vec<String> = spec.decoder_widths.iter().map(|w| w.to_string()).collect();
    let _ = writeln!(s, "decoder widths: {}", widths.join(","));
    let _ = writeln!(s, "params: {params}");
    s
}

fn cmd_build(config: &Path, out: &Path, seed: Option<u64>) -> Result<(), CliError> {
    let mut spec = load_spec(config)?;
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    let g = build::<f32>(&spec).map_err(CliError::from_core)?;
    check_writable(out)?;
    g.save_weights(out).map_err(CliError::from_core)?;
    print!("{}", summary(&spec, g.param_count()));
    Ok(())
}

fn cmd_profile(config: &Path, input: Option<Shape>, csv: Option<&Path>, images: u64) -> Result<(), CliError> {
    let spec = load_spec(config)?;
    let g = build::<f32>(&spec).map_err(CliError::from_core)?;
    let input = input.unwrap_or(Shape::new(1, spec.input_channels, REFERENCE_INPUT.h, REFERENCE_INPUT.w));
    let report = profile_with(
        &g,
        input,
        ProfileOptions {
            count_bias: true,
            images,
        },
    )
    .map_err(CliError::from_core)?;
    if let Some(path) = csv {
        check_writable(path)?;
        write_file(path, report.to_csv().as_bytes())?;
    }
    println!("{:<20} {:<8} {:>18} {:>10} {:>16}", "layer", "type", "output", "params", "madds");
    for l in &report.layers {
        let out = format!("{}x{}x{}x{}", l.out.n, l.out.c, l.out.h, l.out.w);
        println!("{:<20} {:<8} {:>18} {:>10} {:>16}", l.name, l.kind, out, l.params, l.madds);
    }
    println!(
        "total: {} params ({:.2}M), {} MAdds ({:.2}B) over {} image(s), {} activation bytes",
        report.params,
        report.params as f64 / 1e6,
        report.madds,
        report.madds as f64 / 1e9,
        images,
        report.act_bytes
    );
    Ok(())
}

fn read_eye(path: &Path) -> Result<Tensor<f32>, CliError> {
    Image::read(path).map(|img| img.to_rgb_tensor()).map_err(CliError::from_core)
}

#[allow(clippy::too_many_arguments)]
fn cmd_infer(
    weights: &Path,
    config: &Path,
    left: &Path,
    right: Option<&Path>,
    out: &Path,
    pgm: Option<&Path>,
    resize: bool,
) -> Result<(), CliError> {
    let spec = load_spec(config)?;
    let mut g = build::<f32>(&spec).map_err(CliError::from_core)?;
    g.load_weights(weights).map_err(CliError::from_core)?;
    let mono = g.input_channels() == 3;
    let l = read_eye(left)?;
    let x = match (mono, right) {
        (true, None) => l,
        (true, Some(_)) => return Err(CliError::Usage("--right given but the graph is mono".into())),
        (false, None) => return Err(CliError::Usage("stereo graphs need --right".into())),
        (false, Some(rp)) => {
            let r = read_eye(rp)?;
            let (ls, rs) = (l.shape(), r.shape());
            if (ls.h, ls.w) != (rs.h, rs.w) {
                return Err(CliError::Parse(format!(
                    "left image is {}x{} but right image is {}x{}",
                    ls.w, ls.h, rs.w, rs.h
                )));
            }
            concat_channels(&[&l, &r]).map_err(CliError::from_core)?
        }
    };
    let f = g.stride_factor();
    let s = x.shape();
    let x = if s.h % f == 0 && s.w % f == 0 {
        x
    } else if resize {
        let (h, w) = (s.h / f * f, s.w / f * f);
        if h == 0 || w == 0 {
            return Err(CliError::Parse(format!(
                "image {}x{} is smaller than the minimum size {f}x{f}",
                s.w, s.h
            )));
        }
        resize_bilinear(&x, h, w).map_err(CliError::from_core)?
    } else {
        return Err(CliError::Parse(format!(
            "image {}x{} (WxH) is not divisible by {f}; pass --resize to resample to {}x{}",
            s.w,
            s.h,
            s.w / f * f,
            s.h / f * f
        )));
    };
    check_writable(out)?;
    if let Some(p) = pgm {
        check_writable(p)?;
    }
    let y = g.forward(&x).map_err(CliError::from_core)?;
    if !y.all_finite() {
        return Err(CliError::Numeric("prediction contains non-finite values".into()));
    }
    let vis = pgm
        .map(|_| Image::from_map(&y, (255.0 / DISPARITY_SCALE) as f32))
        .transpose()
        .map_err(CliError::from_core)?;
    write_tensor(out, &y).map_err(CliError::from_core)?;
    if let (Some(p), Some(img)) = (pgm, vis) {
        img.write(p).map_err(CliError::from_core)?;
    }
    let ys = y.shape();
    println!("disparity {}x{}x{}x{} -> {}", ys.n, ys.c, ys.h, ys.w, out.display());
    Ok(())
}

fn cmd_gradcheck(config: &Path, samples: usize, eps: f64, seed: u64) -> Result<(), CliError> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(CliError::Usage(format!("--eps must be positive, got {eps}")));
    }
    let spec = load_spec(config)?;
    let g = build::<f64>(&spec).map_err(CliError::from_core)?;
    let opts = GradcheckOptions {
        samples,
        eps,
        seed,
        ..GradcheckOptions::default()
    };
    let report = gradcheck(&g, &opts).map_err(CliError::from_core)?;
    print!("{}", report.render());
    if report.max_rel_error > GRADCHECK_TOLERANCE || !report.dead_reductions.is_empty() {
        return Err(CliError::Numeric(format!(
            "gradient check failed (max relative error {:.3e}, tolerance {GRADCHECK_TOLERANCE:e})",
            report.max_rel_error
        )));
    }
    Ok(())
}

fn cmd_train(config: &Path, data: &Path, steps: usize, lr: f64, out: &Path, log: &Path) -> Result<(), CliError> {
    if !(lr.is_finite() && lr >= 0.0) {
        return Err(CliError::Usage(format!("--lr must be finite and >= 0, got {lr}")));
    }
    let spec = load_spec(config)?;
    let mut g = build::<f32>(&spec).map_err(CliError::from_core)?;
    let samples = load_dataset(data).map_err(CliError::from_core)?;
    for s in &samples {
        g.check_input(s.input.shape()).map_err(CliError::from_core)?;
    }
    check_writable(out)?;
    check_writable(log)?;
    let initial = dataset_loss(&g, &samples).map_err(CliError::from_core)?;
    let losses = train(&mut g, &samples, steps, lr).map_err(CliError::from_core)?;
    let last = dataset_loss(&g, &samples).map_err(CliError::from_core)?;
    g.save_weights(out).map_err(CliError::from_core)?;
    write_file(log, loss_csv(&losses).as_bytes())?;
    println!(
        "{} samples, {steps} steps at lr {lr}: dataset loss {initial:.6} -> {last:.6} ({:.1}%)",
        samples.len(),
        100.0 * last / initial
    );
    Ok(())
}

fn rrtn_files(dir: &Path) -> Result<Vec<String>, CliError> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    let mut names = Vec::new();
    for e in entries {
        let e = e.map_err(|err| CliError::io(dir, err))?;
        let name = e.file_name().to_string_lossy().into_owned();
        if name.ends_with(".rrtn") && e.path().is_file() {
            names.push(name);
        }
    }
    names.sort();
    Ok(names)
}

fn cmd_eval(pred: &Path, gt: &Path, min_valid: f64, crop: Option<Crop>, csv: &Path) -> Result<(), CliError> {
    let names = rrtn_files(pred)?;
    if names.is_empty() {
        return Err(CliError::io(
            pred,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no .rrtn predictions"),
        ));
    }
    let mut rows = Vec::with_capacity(names.len());
    for name in names {
        let p: Tensor<f32> = read_tensor(&pred.join(&name)).map_err(CliError::from_core)?;
        let t: Tensor<f32> = read_tensor(&gt.join(&name)).map_err(CliError::from_core)?;
        let m = compute_metrics_cropped(&p, &t, min_valid, crop)
            .map_err(|e| CliError::from_core(e).context(&pred.join(&name)))?;
        rows.push((name, m));
    }
    let table = metrics_csv(&rows).map_err(CliError::from_core)?;
    check_writable(csv)?;
    write_file(csv, table.as_bytes())?;
    print!("{table}");
    Ok(())
}

fn cmd_sweep() -> Result<(), CliError> {
    let specs = (1..=4)
        .map(|r| preset(&format!("rrnet-r{r}")))
        .collect::<Result<Vec<_>, _>>()
        .map_err(CliError::from_core)?;
    let table = profile_preset_sweep(&specs, REFERENCE_INPUT).map_err(CliError::from_core)?;
    print!("{}", table.render());
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot start {n} worker threads: {e}")))?;
    }
    match cli.command {
        Command::Build { config, out, seed } => cmd_build(&config, &out, seed),
        Command::Profile {
            config,
            input,
            csv,
            images,
        } => cmd_profile(&config, input, csv.as_deref(), images),
        Command::Infer {
            weights,
            config,
            left,
            right,
            out,
            png_out,
            resize,
        } => cmd_infer(&weights, &config, &left, right.as_deref(), &out, png_out.as_deref(), resize),
        Command::Gradcheck {
            config,
            samples,
            eps,
            seed,
        } => cmd_gradcheck(&config, samples, eps, seed),
        Command::TrainToy {
            config,
            data,
            steps,
            lr,
            out,
            log,
        } => cmd_train(&config, &data, steps, lr, &out, &log),
        Command::Eval {
            pred,
            gt,
            min_valid,
            crop,
            csv,
        } => cmd_eval(&pred, &gt, min_valid, crop, &csv),
        Command::Sweep => cmd_sweep(),
    }
}

/// `--help` and `--version` succeed; every other argument error is a usage error.
fn parse_error_code(e: &clap::Error) -> u8 {
    if e.use_stderr() {
        1
    } else {
        0
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(parse_error_code(&e));
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
