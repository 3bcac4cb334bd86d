//! Writes a synthetic dataset for trying the command line end to end.
//!
//! ```text
//! cargo run --release -p opcap --example make_toy -- /tmp/toy 32 7
//! ```

use std::path::PathBuf;
use std::process::ExitCode;

fn main() -> ExitCode {
    let mut args = std::env::args().skip(1);
    let Some(dir) = args.next().map(PathBuf::from) else {
        eprintln!("usage: make_toy DIR [N_IMAGES] [SEED]");
        return ExitCode::from(2);
    };
    let parse = |v: Option<String>, default: u64| v.map_or(Ok(default), |s| s.parse::<u64>());
    let (Ok(n), Ok(seed)) = (parse(args.next(), 32), parse(args.next(), 0)) else {
        eprintln!("N_IMAGES and SEED must be non-negative integers");
        return ExitCode::from(2);
    };
    let images = opcap::toy::generate(n as usize, seed);
    match opcap::toy::write_dataset(&dir, &images) {
        Ok(p) => {
            println!("wrote {} images to {}", images.len(), p.images.display());
            println!("captions:   {}", p.captions.display());
            println!("instances:  {}", p.instances.display());
            println!("attributes: {}", p.attributes.display());
            println!("config:     {}", p.config.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
