use std::collections::HashMap;

use crate::error::{invalid, shape, Result};
use crate::tensor::DenseTensor;

/// Causal modal filter: output `i` is the most frequent class among
/// inputs `i + 1 - window ..= i`. Ties go to the class seen most recently.
pub fn majority_filter(classes: &[usize], window: usize) -> Result<Vec<usize>> {
    if window == 0 {
        return Err(invalid("filter window must be at least 1"));
    }
    let mut out = Vec::with_capacity(classes.len());
    for i in 0..classes.len() {
        let lo = (i + 1).saturating_sub(window);
        // class -> (count, last position)
        let mut tally: HashMap<usize, (usize, usize)> = HashMap::new();
        for (pos, &c) in classes.iter().enumerate().take(i + 1).skip(lo) {
            let e = tally.entry(c).or_insert((0, pos));
            e.0 += 1;
            e.1 = pos;
        }
        let (&best, _) = tally.iter().max_by_key(|(_, &(count, last))| (count, last)).expect("window is non-empty");
        out.push(best);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeOptions {
    pub threshold: f64,
    pub top_k: usize,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        Self { threshold: 0.05, top_k: 100 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub class: usize,
    /// Sigmoid of the heatmap logit.
    pub score: f64,
    /// Peak position plus offsets, in output pixels.
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub height: f64,
    pub dx: f64,
    pub dy: f64,
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Decodes one `(num_classes + 4, 1, H, W)` head frame. Channels are the
/// class heatmap logits, then box height, width, and centre offsets x, y.
/// A detection is a heatmap pixel no smaller than its 3x3 neighbourhood
/// whose score exceeds the threshold; no suppression is applied beyond
/// that.
pub fn decode_centernet(frame: &DenseTensor, num_classes: usize, opts: DecodeOptions) -> Result<Vec<Detection>> {
    let (c, t, h, w) = frame.dims4()?;
    if t != 1 {
        return Err(shape(format!("expected a single frame, got {t}")));
    }
    if c != num_classes + 4 {
        return Err(shape(format!("{num_classes} classes need {} channels, got {c}", num_classes + 4)));
    }
    let d = frame.data();
    let plane = h * w;
    let at = |ch: usize, y: usize, x: usize| d[ch * plane + y * w + x];
    let mut found = Vec::new();
    for class in 0..num_classes {
        for y in 0..h {
            for x in 0..w {
                let v = at(class, y, x);
                let score = sigmoid(v);
                if score.is_nan() || score <= opts.threshold {
                    continue;
                }
                let is_peak = (y.saturating_sub(1)..(y + 2).min(h))
                    .all(|yy| (x.saturating_sub(1)..(x + 2).min(w)).all(|xx| at(class, yy, xx) <= v));
                if !is_peak {
                    continue;
                }
                let (dx, dy) = (at(num_classes + 2, y, x), at(num_classes + 3, y, x));
                found.push(Detection {
                    class,
                    score,
                    x: x as f64 + dx,
                    y: y as f64 + dy,
                    height: at(num_classes, y, x),
                    width: at(num_classes + 1, y, x),
                    dx,
                    dy,
                });
            }
        }
    }
    // stable: equal scores keep (class, y, x) order
    found.sort_by(|a, b| b.score.total_cmp(&a.score));
    found.truncate(opts.top_k);
    Ok(found)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn filter_examples() {
        let (a, b) = (0, 1);
        assert_eq!(majority_filter(&[a, a, b, a, b, b, b], 3).unwrap(), vec![a, a, a, a, b, b, b]);
        let seq = [3, 1, 4, 1, 5];
        assert_eq!(majority_filter(&seq, 1).unwrap(), seq.to_vec());
        assert_eq!(majority_filter(&[2; 6], 4).unwrap(), vec![2; 6]);
        // tie goes to the most recent
        assert_eq!(majority_filter(&[0, 1], 2).unwrap(), vec![0, 1]);
        assert!(majority_filter(&seq, 0).is_err());
    }

    fn head(nc: usize, h: usize, w: usize) -> DenseTensor {
        let mut t = DenseTensor::volume_zeros(nc + 4, 1, h, w);
        t.data_mut()[..nc * h * w].fill(f64::NEG_INFINITY);
        t
    }

    #[test]
    fn empty_heatmap() {
        assert!(decode_centernet(&head(2, 4, 4), 2, DecodeOptions::default()).unwrap().is_empty());
    }

    #[test]
    fn single_peak_with_offsets() {
        let (nc, h, w) = (2, 5, 6);
        let mut t = head(nc, h, w);
        let plane = h * w;
        let p = 2 * w + 3;
        let d = t.data_mut();
        d[plane + p] = 2.0;
        d[nc * plane + p] = 4.0;
        d[(nc + 1) * plane + p] = 8.0;
        d[(nc + 2) * plane + p] = 0.25;
        d[(nc + 3) * plane + p] = -0.5;
        let dets = decode_centernet(&t, nc, DecodeOptions::default()).unwrap();
        assert_eq!(dets.len(), 1);
        let det = dets[0];
        assert_eq!((det.class, det.x, det.y, det.height, det.width), (1, 3.25, 1.5, 4.0, 8.0));
        assert_eq!(det.score, 1.0 / (1.0 + (-2.0f64).exp()));
    }
}
