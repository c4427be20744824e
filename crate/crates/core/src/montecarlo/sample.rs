use crate::designs::Design;
use crate::model::Dataset;

use super::rng::{NormalStream, SplitMix64};

/// Standard deviation of `x₁, x₂` in the Hall–Horowitz design (`√0.16`).
const HH_SCALE: f64 = 0.4;

/// Draws `n` observations of `design` from `stream`, row by row.
///
/// Hall–Horowitz rows are `(0.4·z₁, 0.4·z₂, z₃², …, z_K²)`; mean/variance rows
/// are `σ·z`.
pub fn sample_design(design: &Design, n: usize, stream: SplitMix64) -> Dataset {
    let mut normals = NormalStream::new(stream);
    let values = match *design {
        Design::HallHorowitz { k } => {
            let mut v = Vec::with_capacity(n * k);
            for _ in 0..n {
                v.push(HH_SCALE * normals.next_normal());
                v.push(HH_SCALE * normals.next_normal());
                for _ in 2..k {
                    let z = normals.next_normal();
                    v.push(z * z);
                }
            }
            v
        }
        Design::MeanKnownVariance { sigma } => (0..n).map(|_| sigma * normals.next_normal()).collect(),
    };
    let nx = match *design {
        Design::HallHorowitz { k } => k,
        Design::MeanKnownVariance { .. } => 1,
    };
    Dataset::from_row_major(nx, values).expect("sampler produces finite rectangular data")
}
