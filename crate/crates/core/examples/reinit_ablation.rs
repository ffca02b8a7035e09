//! Trains ALBERT twice from the same initialization, once with the shared
//! block's last feed-forward linear re-drawn, and compares dev scores.
//!
//! cargo run --release --example reinit_ablation -- [epochs]

use std::path::Path;

use spanforge::config::RunConfig;
use spanforge::pipeline::ablate_reinit;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let epochs: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(6);
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("data");
    let out = std::env::temp_dir().join(format!("spanforge-ablation-{}", std::process::id()));

    let mut cfg = RunConfig::preset("albert-mini")?;
    cfg.train.epochs = epochs;
    cfg.data_train = Some(data.join("toy_train.json"));
    cfg.data_dev = Some(data.join("toy_train.json"));
    cfg.out = Some(out.clone());
    let report = ablate_reinit(&cfg)?;

    println!("changed by re-initialization:");
    for d in &report.reinit_diff {
        println!("  {} (l2 {:.4})", d.name, d.l2_delta);
    }
    println!("changed in control: {}", report.control_diff.len());
    println!("epoch  variant  em     f1");
    for r in &report.rows {
        println!("{:5}  {:7}  {:.3}  {:.3}", r.epoch, r.variant, r.dev_em, r.dev_f1);
    }
    std::fs::remove_dir_all(&out)?;
    Ok(())
}
