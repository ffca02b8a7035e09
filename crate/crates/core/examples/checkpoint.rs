//! Saves a parameter store at both precisions and reads it back.

use spanforge::bidaf::{init_bidaf, BidafConfig};
use spanforge::encoders::EncoderConfig;
use spanforge::tensor::{load_checkpoint, save_checkpoint, ParameterStore, Precision};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = BidafConfig {
        encoder: EncoderConfig { hidden: 8, word_dim: 10, char_dim: 6, ..EncoderConfig::default() },
        vocab: 50,
        chars: Some(20),
    };
    let mut store = ParameterStore::new();
    init_bidaf(&mut store, &cfg, 5)?;
    println!("{} tensors, {} parameters", store.len(), store.param_count());

    let dir = std::env::temp_dir().join(format!("spanforge-checkpoint-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    for precision in [Precision::F64, Precision::F32] {
        let path = dir.join(format!("bidaf-f{}.bin", precision.bits()));
        save_checkpoint(&store, precision, &path)?;
        let (loaded, p) = load_checkpoint(&path)?;
        loaded.check_compatible(&store)?;
        let drift = store
            .iter()
            .map(|(n, t)| loaded.get(n).map(|l| l.max_abs_diff(t)))
            .collect::<spanforge::Result<Vec<_>>>()?
            .into_iter()
            .fold(0.0, f64::max);
        println!(
            "{:?}: {} bytes, read back as {:?}, max drift {drift:.2e}",
            precision,
            std::fs::metadata(&path)?.len(),
            p
        );
    }

    let mut rounded = store.clone();
    rounded.round_to(Precision::F32);
    let path = dir.join("rounded.bin");
    save_checkpoint(&rounded, Precision::F32, &path)?;
    println!("f32-rounded store survives a round trip bitwise: {}", load_checkpoint(&path)?.0.bitwise_eq(&rounded));
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
