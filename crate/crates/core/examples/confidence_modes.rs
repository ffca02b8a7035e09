//! Ranks the best span of three paragraphs under each confidence mode.
//!
//! Paragraph 1 has flat, low logits, so its per-paragraph probabilities
//! are dominated by a single weak candidate; paragraph 0 has one strong
//! span among strong competitors.

use spanforge::docqa::{confidence_score, shared_norm_probabilities, ParagraphLogits};
use spanforge::ConfidenceMode;

fn main() -> spanforge::Result<()> {
    let paragraphs = vec![
        ParagraphLogits {
            paragraph: 0,
            start: vec![4.0, 3.8, 3.5, 0.0],
            end: vec![0.0, 4.2, 3.9, 3.6],
            legal: vec![true; 4],
        },
        ParagraphLogits {
            paragraph: 1,
            start: vec![-3.0, 0.5, -3.0],
            end: vec![-3.0, -3.0, 0.6],
            legal: vec![true; 3],
        },
        ParagraphLogits {
            paragraph: 2,
            start: vec![1.0, 1.0],
            end: vec![1.0, 1.0],
            legal: vec![true, false],
        },
    ];

    let shared = shared_norm_probabilities(&paragraphs);
    let mass: f64 = shared.iter().map(|(s, _)| s.iter().sum::<f64>()).sum();
    println!("shared start mass across paragraphs: {mass:.6}");

    for mode in [
        ConfidenceMode::None,
        ConfidenceMode::SharedNorm,
        ConfidenceMode::Merge,
        ConfidenceMode::Original,
    ] {
        println!("{mode}");
        for s in confidence_score(&paragraphs, mode, 3)? {
            println!(
                "  paragraph {} span ({}, {}) confidence {:.4}",
                s.paragraph, s.start, s.end, s.confidence
            );
        }
    }
    Ok(())
}
