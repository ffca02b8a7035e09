//! Scores a predictions file against a gold file with the official answer
//! normalization, and shows EM/F1 on a few individual pairs.
//!
//! cargo run --example evaluate_predictions -- [gold.json predictions.json]

use std::path::{Path, PathBuf};

use spanforge::eval::{em_f1, evaluate_predictions, normalize_answer, Predictions};
use spanforge::squad::load_squad;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("data");
    let args: Vec<PathBuf> = std::env::args().skip(1).map(PathBuf::from).collect();
    let (gold, preds) = match args.as_slice() {
        [g, p] => (g.clone(), p.clone()),
        _ => (dir.join("golden_dev.json"), dir.join("golden_predictions.json")),
    };

    for (pred, gold) in [
        ("The Eiffel Tower!", "eiffel tower"),
        ("in Paris, France", "Paris"),
        ("", ""),
        ("London", "Paris"),
    ] {
        let (em, f1) = em_f1(pred, &[gold]);
        println!("{pred:?} vs {gold:?} -> normalized {:?}: em {em} f1 {f1:.3}", normalize_answer(pred));
    }

    let report = evaluate_predictions(&Predictions::load(&preds)?, &load_squad(&gold)?, false)?;
    println!("{}", serde_json::to_string_pretty(&report.to_json())?);
    Ok(())
}
