//! Full pipeline on the 784-256-128-10 digit experiment: pretrain, personalize,
//! mask, adjust, prove, verify and report.
//!
//! `cargo run --release --example desk_experiment -- [merkle|pedersen] [out_dir]`

use edge_unlearn::cli::{self, Outcome, Stage};

fn main() {
    let mut args = std::env::args().skip(1);
    let backend = args.next().unwrap_or_else(|| "merkle".into());
    let out_dir = args.next().unwrap_or_else(|| "desk-run".into());
    let cfg = cli::default_config()
        .with_overrides(&[
            format!("protocol.backend={}", toml::Value::String(backend)),
            format!("out_dir={}", toml::Value::String(out_dir)),
        ])
        .unwrap_or_else(|e| panic!("bad arguments: {e}"));
    match cli::run(Stage::Pipeline, &cfg, false) {
        Ok(Outcome::Done { notes, .. }) => notes.iter().for_each(|n| println!("{n}")),
        Ok(Outcome::Rejected(r)) => println!("REJECT: {r}"),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(1);
        }
    }
}
