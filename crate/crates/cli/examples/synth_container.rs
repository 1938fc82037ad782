//! Writes a seeded synthetic light field as a container directory.
//!
//! cargo run -p lfsr-cli --example synth_container -- <dir> [channels height width angular seed]

use std::path::PathBuf;
use std::process::ExitCode;

use lfsr_core::container::{self, Layout};
use lfsr_core::synthetic;

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let Some(dir) = args.first().map(PathBuf::from) else {
        eprintln!("usage: synth_container <dir> [channels height width angular seed]");
        return ExitCode::from(2);
    };
    let num = |i: usize, default: u64| -> u64 {
        args.get(i).and_then(|s| s.parse().ok()).unwrap_or(default)
    };
    let (c, h, w, a, seed) = (num(1, 3) as usize, num(2, 32), num(3, 48), num(4, 14), num(5, 0));
    let lf = container::quantize(&synthetic::smooth_field(c, h as usize, w as usize, a as usize, seed));
    match container::write_container(&lf, &dir, Layout::Views) {
        Ok(p) => {
            println!("{}: {h}x{w} lenslets, A={a}, {c} channel(s)", p.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::from(1)
        }
    }
}
