//! Binary masks and their row-major run-length encoding.
//!
//! `counts` alternates runs of background and foreground pixels, starting
//! with background (a leading zero-length run when pixel 0 is set).

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: u32,
    pub height: u32,
    /// Row-major.
    pub data: Vec<bool>,
}

impl Mask {
    pub fn new(width: u32, height: u32, data: Vec<bool>) -> Option<Self> {
        (data.len() == width as usize * height as usize).then_some(Self { width, height, data })
    }

    pub fn get(&self, u: u32, v: u32) -> bool {
        self.data[(v * self.width + u) as usize]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// `(u, v)` of every set pixel, row-major.
    pub fn pixels(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let w = self.width;
        self.data.iter().enumerate().filter(|(_, &b)| b).map(move |(i, _)| (i as u32 % w, i as u32 / w))
    }

    /// Inclusive pixel bounds `(u_min, v_min, u_max, v_max)`.
    pub fn bounds(&self) -> Option<[u32; 4]> {
        self.pixels().fold(None, |acc, (u, v)| {
            Some(match acc {
                None => [u, v, u, v],
                Some([a, b, c, d]) => [a.min(u), b.min(v), c.max(u), d.max(v)],
            })
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RleMask {
    /// `[height, width]`.
    pub size: [u32; 2],
    pub counts: Vec<u32>,
}

#[derive(Debug, thiserror::Error, PartialEq)]
#[error("run lengths sum to {got}, expected {expected} pixels")]
pub struct RleLengthError {
    pub got: u64,
    pub expected: u64,
}

pub fn encode(mask: &Mask) -> RleMask {
    let mut counts = Vec::new();
    let mut current = false;
    let mut run = 0u32;
    for &b in &mask.data {
        if b != current {
            counts.push(run);
            run = 0;
            current = b;
        }
        run += 1;
    }
    counts.push(run);
    RleMask { size: [mask.height, mask.width], counts }
}

pub fn decode(rle: &RleMask) -> Result<Mask, RleLengthError> {
    let [h, w] = rle.size;
    let expected = h as u64 * w as u64;
    let got: u64 = rle.counts.iter().map(|&c| c as u64).sum();
    if got != expected {
        return Err(RleLengthError { got, expected });
    }
    let mut data = Vec::with_capacity(expected as usize);
    for (i, &c) in rle.counts.iter().enumerate() {
        data.extend(std::iter::repeat_n(i % 2 == 1, c as usize));
    }
    Ok(Mask { width: w, height: h, data })
}
