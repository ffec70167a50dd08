//! Writes a synthetic stereo dataset for `rrnet train-toy`.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use rrnet_core::synth::{generate_dataset, write_dataset, SynthConfig};
use rrnet_core::Error;

#[derive(Parser, Debug)]
#[command(name = "rrnet-synth", version, about = "Synthetic stereo pairs with planar disparity")]
struct Args {
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u64).range(1..))]
    count: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 32)]
    height: usize,
    #[arg(long, default_value_t = 64)]
    width: usize,
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let cfg = SynthConfig {
        height: args.height,
        width: args.width,
        ..SynthConfig::default()
    };
    let result = generate_dataset(args.seed, args.count as usize, &cfg).and_then(|s| write_dataset(&args.out, &s));
    match result {
        Ok(()) => {
            println!("{} samples of {}x{} -> {}", args.count, args.width, args.height, args.out.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if matches!(e, Error::Io { .. }) { 3 } else { 1 })
        }
    }
}
