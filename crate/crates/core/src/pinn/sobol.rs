//! Sobol sequence (Joe–Kuo direction numbers) with a random digital shift.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// (s, a, m_1..m_s) for dimensions 2..=8; dimension 1 is van der Corput.
const JOE_KUO: [(u32, u32, &[u32]); 7] = [
    (1, 0, &[1]),
    (2, 1, &[1, 3]),
    (3, 1, &[1, 3, 1]),
    (3, 2, &[1, 1, 1]),
    (4, 1, &[1, 1, 3, 3]),
    (4, 4, &[1, 3, 5, 13]),
    (5, 2, &[1, 1, 5, 5, 17]),
];

pub const MAX_DIM: usize = JOE_KUO.len() + 1;
const BITS: usize = 32;

#[derive(Clone, Debug)]
pub struct Sobol {
    dirs: Vec<[u32; BITS]>,
    shift: Vec<u32>,
}

impl Sobol {
    /// Unscrambled sequence; panics beyond [`MAX_DIM`] dimensions.
    pub fn new(dims: usize) -> Self {
        assert!((1..=MAX_DIM).contains(&dims), "Sobol supports 1..={MAX_DIM} dimensions");
        let mut dirs = Vec::with_capacity(dims);
        let mut v = [0u32; BITS];
        for (k, d) in v.iter_mut().enumerate() {
            *d = 1 << (31 - k);
        }
        dirs.push(v);
        for &(s, a, m) in JOE_KUO.iter().take(dims - 1) {
            let s = s as usize;
            let mut v = [0u32; BITS];
            for k in 0..s.min(BITS) {
                v[k] = m[k] << (31 - k);
            }
            for k in s..BITS {
                let mut x = v[k - s] ^ (v[k - s] >> s);
                for j in 1..s {
                    if (a >> (s - 1 - j)) & 1 == 1 {
                        x ^= v[k - j];
                    }
                }
                v[k] = x;
            }
            dirs.push(v);
        }
        Sobol { dirs, shift: vec![0; dims] }
    }

    /// Digitally shifted copy; the shift preserves the net stratification.
    pub fn scrambled(dims: usize, seed: u64) -> Self {
        let mut s = Self::new(dims);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in &mut s.shift {
            *v = rng.random();
        }
        s
    }

    /// Point `index` in Gray-code order.
    pub fn point(&self, index: u32) -> Vec<f64> {
        self.dirs
            .iter()
            .zip(&self.shift)
            .map(|(v, &sh)| {
                let mut x = 0u32;
                let mut i = index ^ (index >> 1);
                let mut k = 0;
                while i != 0 {
                    if i & 1 == 1 {
                        x ^= v[k];
                    }
                    i >>= 1;
                    k += 1;
                }
                ((x ^ sh) as f64 + 0.5) / 4_294_967_296.0
            })
            .collect()
    }
}
