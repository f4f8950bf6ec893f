//! Counter-based seed derivation.
//!
//! Every random stream in the lab is keyed by a master seed plus a path of
//! counters (depth, split, theory index, resample index, ...). Derived seeds
//! do not depend on scheduling order, so parallel and sequential runs draw
//! identical numbers.

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix(master), |acc, part| splitmix(acc ^ splitmix(*part)))
}
