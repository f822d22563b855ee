//! Writes a ready-to-run synthetic corpus and experiment config into
//! ./demo, then prints the commands to try.
//!
//!     cargo run -p mdl-cli --example demo
//!     cargo run -p mdl-cli -- run --config demo/exp.toml

use std::path::Path;

use mdl_core::synthetic::{transfer_fixture, write_corpus};

fn main() {
    let dir = Path::new("demo");
    std::fs::create_dir_all(dir).expect("create demo dir");
    write_corpus(dir, &transfer_fixture(), 101).expect("write corpus");
    std::fs::write(
        dir.join("exp.toml"),
        r#"manifest = "manifest.toml"
out_dir = "out"
seeds = [1, 2, 3, 4, 5]

# settings that suit the small reference backend; a real encoder adapter
# would keep the defaults (lr 5e-5, accumulation 16)
[train]
learning_rate = 1.0
grad_accumulation = 4
eval_every = 20
early_stop_patience = 12

[[run]]
method = "mdl"
target = "tgt-d"
n_shots = [1, 4, 8, 16, 32, 64]

[[run]]
method = "lm-base"
target = "tgt-d"
n_shots = [1, 4, 8, 16, 32, 64]
"#,
    )
    .expect("write config");

    println!("wrote demo/manifest.toml, demo/data/*.csv and demo/exp.toml");
    println!();
    println!("next steps:");
    println!("  cargo run -p mdl-cli -- validate-manifest --manifest demo/manifest.toml");
    println!("  cargo run -p mdl-cli -- train-external --config demo/exp.toml");
    println!("  cargo run -p mdl-cli -- run --config demo/exp.toml");
    println!(
        "  cargo run -p mdl-cli -- plot-nshot --reports demo/out/reports --out demo/out/nshot.svg"
    );
}
