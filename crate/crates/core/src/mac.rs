//! AES-128 CMAC with the digest truncated to its leftmost 64 bits.
//!
//! The block cipher comes from the `aes` crate; the CMAC mode (subkey
//! doubling, last-block masking, CBC chaining) is implemented here.

use std::fmt;

use aes::cipher::{BlockEncrypt, KeyInit};
use aes::Aes128;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::Pid;

pub const BLOCK_LEN: usize = 16;
pub const TAG_BITS: usize = 64;

type Block = [u8; BLOCK_LEN];

/// 128-bit key shared by master and slave. `Debug` never prints the key.
#[derive(Clone, PartialEq, Eq)]
pub struct MacKey([u8; 16]);

impl MacKey {
    pub fn new(bytes: [u8; 16]) -> Self {
        MacKey(bytes)
    }

    /// Parses exactly 32 hex characters.
    pub fn from_hex(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.len() != 32 {
            return Err(Error::Key(format!("expected 32 hex characters, got {}", s.len())));
        }
        let mut out = [0u8; 16];
        hex::decode_to_slice(s, &mut out).map_err(|e| Error::Key(e.to_string()))?;
        Ok(MacKey(out))
    }

    pub fn as_bytes(&self) -> &[u8; 16] {
        &self.0
    }
}

impl fmt::Debug for MacKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("MacKey(..)")
    }
}

/// 64-bit truncated tag. Bit 0 on the wire is the most significant bit.
#[derive(Copy, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct MacTag(u64);

impl MacTag {
    pub const fn new(v: u64) -> Self {
        MacTag(v)
    }

    pub const fn get(self) -> u64 {
        self.0
    }

    /// Transmission-order bit `i` (0 = MSB).
    pub fn bit(self, i: usize) -> bool {
        assert!(i < TAG_BITS);
        (self.0 >> (TAG_BITS - 1 - i)) & 1 == 1
    }

    pub fn bits(self) -> impl Iterator<Item = bool> {
        (0..TAG_BITS).map(move |i| self.bit(i))
    }

    /// Builds a tag from bits in transmission order; missing trailing bits are 0.
    pub fn from_bits<I: IntoIterator<Item = bool>>(bits: I) -> Self {
        let mut v = 0u64;
        let mut n = 0;
        for b in bits.into_iter().take(TAG_BITS) {
            v = (v << 1) | u64::from(b);
            n += 1;
        }
        if n == 0 {
            return MacTag(0);
        }
        MacTag(v << (TAG_BITS - n))
    }

    pub fn bit_errors(self, other: MacTag) -> u32 {
        (self.0 ^ other.0).count_ones()
    }

    pub fn to_bytes(self) -> [u8; 8] {
        self.0.to_be_bytes()
    }
}

impl fmt::Debug for MacTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "MacTag({:016x})", self.0)
    }
}

impl fmt::Display for MacTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

impl From<MacTag> for String {
    fn from(t: MacTag) -> String {
        t.to_string()
    }
}

impl TryFrom<String> for MacTag {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        u64::from_str_radix(&s, 16)
            .map(MacTag)
            .map_err(|e| Error::Key(format!("bad tag {s:?}: {e}")))
    }
}

/// The byte string covered by the tag: PID, data bytes, and optionally a
/// big-endian 32-bit freshness counter.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AuthMessage(Vec<u8>);

impl AuthMessage {
    pub fn new(pid: Pid, data: &[u8], counter: Option<u32>) -> Self {
        let mut v = Vec::with_capacity(1 + data.len() + 4);
        v.push(pid.get());
        v.extend_from_slice(data);
        if let Some(c) = counter {
            v.extend_from_slice(&c.to_be_bytes());
        }
        AuthMessage(v)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }
}

/// Multiplication by x in GF(2^128) with the 0x87 reduction polynomial.
pub fn double_block(block: &Block) -> Block {
    let v = u128::from_be_bytes(*block);
    let carry = (v >> 127) as u8;
    let shifted = (v << 1).to_be_bytes();
    let mut out = shifted;
    // Constant-time select of the feedback byte.
    out[15] ^= 0x87 & carry.wrapping_neg();
    out
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Subkeys {
    pub k1: Block,
    pub k2: Block,
}

/// Keyed CMAC state: the expanded cipher plus both subkeys.
#[derive(Clone)]
pub struct Cmac {
    cipher: Aes128,
    subkeys: Subkeys,
}

impl Cmac {
    pub fn new(key: &MacKey) -> Self {
        let cipher = Aes128::new(&key.0.into());
        let l = encrypt(&cipher, [0u8; BLOCK_LEN]);
        let k1 = double_block(&l);
        let k2 = double_block(&k1);
        Cmac {
            cipher,
            subkeys: Subkeys { k1, k2 },
        }
    }

    pub fn subkeys(&self) -> &Subkeys {
        &self.subkeys
    }

    pub fn tag(&self, msg: &[u8]) -> Block {
        let n = msg.len().div_ceil(BLOCK_LEN).max(1);
        let complete = !msg.is_empty() && msg.len() % BLOCK_LEN == 0;

        let mut last = [0u8; BLOCK_LEN];
        let tail = &msg[(n - 1) * BLOCK_LEN..];
        last[..tail.len()].copy_from_slice(tail);
        let mask = if complete {
            &self.subkeys.k1
        } else {
            last[tail.len()] = 0x80;
            &self.subkeys.k2
        };
        xor_into(&mut last, mask);

        let mut x = [0u8; BLOCK_LEN];
        for chunk in msg.chunks(BLOCK_LEN).take(n - 1) {
            xor_into(&mut x, chunk.try_into().expect("full block"));
            x = encrypt(&self.cipher, x);
        }
        xor_into(&mut x, &last);
        encrypt(&self.cipher, x)
    }

    pub fn truncated(&self, msg: &[u8]) -> MacTag {
        truncate_tag(&self.tag(msg))
    }

    /// Full-width comparison: every tag bit is examined.
    pub fn verify(&self, msg: &AuthMessage, received: MacTag) -> bool {
        let expected = self.truncated(msg.as_bytes()).to_bytes();
        let got = received.to_bytes();
        let diff = expected.iter().zip(got.iter()).fold(0u8, |acc, (a, b)| acc | (a ^ b));
        diff == 0
    }
}

fn encrypt(cipher: &Aes128, block: Block) -> Block {
    let mut b = block.into();
    cipher.encrypt_block(&mut b);
    b.into()
}

fn xor_into(dst: &mut Block, src: &Block) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d ^= s;
    }
}

pub fn cmac_subkeys(key: &MacKey) -> Subkeys {
    Cmac::new(key).subkeys
}

pub fn cmac_tag(key: &MacKey, msg: &[u8]) -> Block {
    Cmac::new(key).tag(msg)
}

/// Keeps the leftmost 64 bits.
pub fn truncate_tag(full: &Block) -> MacTag {
    MacTag(u64::from_be_bytes(full[..8].try_into().expect("8 bytes")))
}

pub fn verify_tag(key: &MacKey, msg: &AuthMessage, received: MacTag) -> bool {
    Cmac::new(key).verify(msg, received)
}
