//! Counter-based random streams.
//!
//! Every draw is a pure function of `(seed, path, step, substream, block)`
//! through the Philox-4x32-10 bijection, so a path's randomness does not
//! depend on which worker simulates it or in what order.

use rand_core::RngCore;
use rand_distr::{Distribution, StandardNormal};

const PHILOX_M0: u32 = 0xD251_1F53;
const PHILOX_M1: u32 = 0xCD9E_8D57;
const PHILOX_W0: u32 = 0x9E37_79B9;
const PHILOX_W1: u32 = 0xBB67_AE85;

/// Philox-4x32 with 10 rounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Philox4x32 {
    key: [u32; 2],
}

#[inline(always)]
fn mulhilo(a: u32, b: u32) -> (u32, u32) {
    let p = a as u64 * b as u64;
    ((p >> 32) as u32, p as u32)
}

impl Philox4x32 {
    pub fn new(key: [u32; 2]) -> Self {
        Self { key }
    }

    /// Encrypt one counter block.
    #[inline]
    pub fn block(&self, ctr: [u32; 4]) -> [u32; 4] {
        let mut c = ctr;
        let mut k = self.key;
        for round in 0..10 {
            if round > 0 {
                k[0] = k[0].wrapping_add(PHILOX_W0);
                k[1] = k[1].wrapping_add(PHILOX_W1);
            }
            let (hi0, lo0) = mulhilo(PHILOX_M0, c[0]);
            let (hi1, lo1) = mulhilo(PHILOX_M1, c[2]);
            c = [hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0];
        }
        c
    }
}

/// Independent streams within one path and step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u32)]
pub enum Substream {
    Gaussian = 0,
    FlagUniform = 1,
    Auxiliary = 2,
}

const BLOCK_BITS: u32 = 28;

/// The random source of one path: a value type that can be copied to any worker.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngStream {
    cipher: Philox4x32,
    master_seed: u64,
    path_index: u64,
}

impl RngStream {
    pub fn new(master_seed: u64, path_index: u64) -> Self {
        Self {
            cipher: Philox4x32::new([master_seed as u32, (master_seed >> 32) as u32]),
            master_seed,
            path_index,
        }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn path_index(&self) -> u64 {
        self.path_index
    }

    /// Generator for draws of `step` on `sub`.
    #[inline]
    pub fn draws(&self, step: u64, sub: Substream) -> CounterRng {
        CounterRng {
            cipher: self.cipher,
            base: [
                step as u32,
                (sub as u32) << BLOCK_BITS,
                self.path_index as u32,
                (self.path_index >> 32) as u32,
            ],
            block: 0,
            buf: [0; 4],
            used: 4,
        }
    }

    /// One standard normal for `step`.
    #[inline]
    pub fn gaussian(&self, step: u64) -> f64 {
        StandardNormal.sample(&mut self.draws(step, Substream::Gaussian))
    }

    /// One uniform in `[0, 1)` for `step` on `sub`.
    #[inline]
    pub fn uniform(&self, step: u64, sub: Substream) -> f64 {
        unit_interval(self.draws(step, sub).next_u64())
    }
}

/// Map 64 random bits to `[0, 1)` on the 2^-53 lattice.
#[inline]
pub fn unit_interval(bits: u64) -> f64 {
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Sequential generator over consecutive Philox blocks of one `(path, step, substream)` cell.
#[derive(Debug, Clone)]
pub struct CounterRng {
    cipher: Philox4x32,
    base: [u32; 4],
    block: u32,
    buf: [u32; 4],
    used: usize,
}

impl CounterRng {
    #[inline]
    fn refill(&mut self) {
        assert!(self.block < 1 << BLOCK_BITS, "counter block space exhausted");
        let mut ctr = self.base;
        ctr[1] |= self.block;
        self.buf = self.cipher.block(ctr);
        self.block += 1;
        self.used = 0;
    }
}

impl RngCore for CounterRng {
    #[inline]
    fn next_u32(&mut self) -> u32 {
        if self.used == 4 {
            self.refill();
        }
        let v = self.buf[self.used];
        self.used += 1;
        v
    }

    #[inline]
    fn next_u64(&mut self) -> u64 {
        let lo = self.next_u32() as u64;
        let hi = self.next_u32() as u64;
        (hi << 32) | lo
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        rand_core::impls::fill_bytes_via_next(self, dst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Published known-answer vectors for Philox-4x32-10.
    #[test]
    fn philox_known_answers() {
        let zero = Philox4x32::new([0, 0]).block([0, 0, 0, 0]);
        assert_eq!(zero, [0x6627_e8d5, 0xe169_c58d, 0xbc57_ac4c, 0x9b00_dbd8]);
        let ones = Philox4x32::new([u32::MAX; 2]).block([u32::MAX; 4]);
        assert_eq!(ones, [0x408f_276d, 0x41c8_3b0e, 0xa20b_c7c6, 0x6d54_51fd]);
        let pi = Philox4x32::new([0xa409_3822, 0x299f_31d0])
            .block([0x243f_6a88, 0x85a3_08d3, 0x1319_8a2e, 0x0370_7344]);
        assert_eq!(pi, [0xd16c_fe09, 0x94fd_cceb, 0x5001_e420, 0x2412_6ea1]);
    }

    #[test]
    fn streams_are_pure_functions_of_their_coordinates() {
        let a = RngStream::new(42, 7);
        let b = RngStream::new(42, 7);
        for step in 0..50 {
            assert_eq!(a.gaussian(step).to_bits(), b.gaussian(step).to_bits());
            assert_eq!(
                a.uniform(step, Substream::FlagUniform).to_bits(),
                b.uniform(step, Substream::FlagUniform).to_bits()
            );
        }
    }

    #[test]
    fn coordinates_separate_streams() {
        let s = RngStream::new(1, 0);
        let cells = [
            s.draws(0, Substream::Gaussian).next_u64(),
            s.draws(1, Substream::Gaussian).next_u64(),
            s.draws(0, Substream::FlagUniform).next_u64(),
            s.draws(0, Substream::Auxiliary).next_u64(),
            RngStream::new(1, 1).draws(0, Substream::Gaussian).next_u64(),
            RngStream::new(2, 0).draws(0, Substream::Gaussian).next_u64(),
            RngStream::new(1, 1 << 32).draws(0, Substream::Gaussian).next_u64(),
        ];
        for i in 0..cells.len() {
            for j in i + 1..cells.len() {
                assert_ne!(cells[i], cells[j], "cells {i} and {j} collide");
            }
        }
    }

    #[test]
    fn uniform_and_gaussian_moments() {
        let m = 200_000u64;
        let (mut su, mut sg, mut sg2) = (0.0, 0.0, 0.0);
        for p in 0..m {
            let s = RngStream::new(9, p);
            let u = s.uniform(3, Substream::Auxiliary);
            assert!((0.0..1.0).contains(&u));
            su += u;
            let g = s.gaussian(3);
            sg += g;
            sg2 += g * g;
        }
        let mf = m as f64;
        assert!((su / mf - 0.5).abs() < 4.0 * (1.0 / 12.0 / mf).sqrt());
        assert!((sg / mf).abs() < 4.0 / mf.sqrt());
        assert!((sg2 / mf - 1.0).abs() < 4.0 * (2.0 / mf).sqrt());
    }

    #[test]
    fn long_draw_sequences_cross_blocks() {
        let mut r = RngStream::new(5, 5).draws(0, Substream::Gaussian);
        let first: Vec<u32> = (0..12).map(|_| r.next_u32()).collect();
        let mut again = RngStream::new(5, 5).draws(0, Substream::Gaussian);
        let second: Vec<u32> = (0..12).map(|_| again.next_u32()).collect();
        assert_eq!(first, second);
        assert_ne!(first[..4], first[4..8]);
    }
}
