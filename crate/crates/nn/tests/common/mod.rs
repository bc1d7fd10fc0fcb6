//! Shared synthetic data for integration tests.

use dprong_nn::{SequenceSample, Shape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random masses with a moving blob marked in the mask.
pub fn sample(side: usize, frames: usize, seed: u64) -> SequenceSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = Shape::new(2, side, side);
    let p = s.plane();
    let mut out = SequenceSample { full: vec![], stat: vec![], dynamic: vec![], masks: vec![] };
    for t in 0..frames {
        let mut full = Tensor::zeros(s);
        let mut mask = Tensor::zeros(s.with_channels(1));
        for i in 0..p {
            let o: f64 = rng.gen_range(0.0..1.0);
            full.data[i] = o;
            full.data[p + i] = rng.gen_range(0.0..1.0 - o);
            let (r, c) = (i / side, i % side);
            if r == side / 2 && (c + side - t % side) % side < 2 {
                mask.data[i] = 1.0;
            }
        }
        let mut stat = full.clone();
        let mut dynamic = full.clone();
        for i in 0..p {
            let m = mask.data[i];
            for ch in 0..2 {
                stat.data[ch * p + i] *= 1.0 - m;
                dynamic.data[ch * p + i] *= m;
            }
        }
        out.full.push(full);
        out.stat.push(stat);
        out.dynamic.push(dynamic);
        out.masks.push(mask);
    }
    out
}
