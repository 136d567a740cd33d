//! PGM export and loss-trace CSV.

use crate::error::{Error, Result};
use crate::grid::{ImageGrid, ValueRange};

/// 8-bit binary PGM (P5) of a `[0, 1]` image; values are clamped and
/// rounded to the nearest level.
pub fn encode_pgm(img: &ImageGrid) -> Result<Vec<u8>> {
    if img.range() != ValueRange::Unit {
        return Err(Error::invalid(format!(
            "PGM export needs a [0, 1] image, got {:?}",
            img.range()
        )));
    }
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.values().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    Ok(out)
}

pub fn encode_loss_csv(losses: &[f64]) -> String {
    let mut s = String::from("step,loss\n");
    for (i, l) in losses.iter().enumerate() {
        s.push_str(&format!("{},{:e}\n", i + 1, l));
    }
    s
}

pub fn decode_loss_csv(text: &str) -> Result<Vec<f64>> {
    let mut lines = text.lines();
    if lines.next() != Some("step,loss") {
        return Err(Error::invalid("loss CSV must start with 'step,loss'"));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let (step, loss) = line
                .split_once(',')
                .ok_or_else(|| Error::invalid(format!("loss CSV line {}: missing comma", i + 2)))?;
            if step.parse::<usize>().ok() != Some(i + 1) {
                return Err(Error::invalid(format!("loss CSV line {}: bad step '{step}'", i + 2)));
            }
            loss.parse::<f64>()
                .map_err(|e| Error::invalid(format!("loss CSV line {}: {e}", i + 2)))
        })
        .collect()
}
