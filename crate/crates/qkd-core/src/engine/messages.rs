//! Payload layouts for the protocol messages.
//!
//! Everything is little-endian and self-delimiting; decoders reject trailing
//! bytes and non-canonical padding so a frame has exactly one valid reading.

use super::bits::KeyMaterial;
use crate::transport::{decode_index_deltas, encode_index_deltas};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PayloadError {
    #[error("payload truncated")]
    Truncated,
    #[error("payload malformed: {0}")]
    Malformed(&'static str),
}

struct Cur<'a> {
    b: &'a [u8],
    p: usize,
}

impl<'a> Cur<'a> {
    fn new(b: &'a [u8]) -> Self {
        Cur { b, p: 0 }
    }

    fn u8(&mut self) -> Result<u8, PayloadError> {
        let v = *self.b.get(self.p).ok_or(PayloadError::Truncated)?;
        self.p += 1;
        Ok(v)
    }

    fn u32(&mut self) -> Result<u32, PayloadError> {
        let end = self.p.checked_add(4).filter(|e| *e <= self.b.len());
        let end = end.ok_or(PayloadError::Truncated)?;
        let v = u32::from_le_bytes(self.b[self.p..end].try_into().unwrap());
        self.p = end;
        Ok(v)
    }

    fn u64(&mut self) -> Result<u64, PayloadError> {
        let end = self.p.checked_add(8).filter(|e| *e <= self.b.len());
        let end = end.ok_or(PayloadError::Truncated)?;
        let v = u64::from_le_bytes(self.b[self.p..end].try_into().unwrap());
        self.p = end;
        Ok(v)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], PayloadError> {
        let end = self.p.checked_add(n).filter(|e| *e <= self.b.len());
        let end = end.ok_or(PayloadError::Truncated)?;
        let s = &self.b[self.p..end];
        self.p = end;
        Ok(s)
    }

    fn rest(&mut self) -> &'a [u8] {
        let s = &self.b[self.p..];
        self.p = self.b.len();
        s
    }

    fn finish(self) -> Result<(), PayloadError> {
        if self.p == self.b.len() {
            Ok(())
        } else {
            Err(PayloadError::Malformed("trailing bytes"))
        }
    }
}

/// Packed bits with canonical (zero) padding in the final byte.
fn read_bits(cur: &mut Cur, n: usize) -> Result<KeyMaterial, PayloadError> {
    let bytes = cur.take(n.div_ceil(8))?;
    let bits = KeyMaterial::from_bytes(bytes, n);
    if bits.to_bytes() != bytes {
        return Err(PayloadError::Malformed("nonzero padding bits"));
    }
    Ok(bits)
}

fn bit_count(n: usize) -> Result<u32, PayloadError> {
    u32::try_from(n).map_err(|_| PayloadError::Malformed("bit field too long"))
}

// ---- detection announcements -------------------------------------------

pub fn encode_detections(block_start: u64, indices: &[u64]) -> Vec<u8> {
    let mut out = block_start.to_le_bytes().to_vec();
    out.extend_from_slice(&encode_index_deltas(indices));
    out
}

pub fn decode_detections(payload: &[u8]) -> Result<(u64, Vec<u64>), PayloadError> {
    let mut cur = Cur::new(payload);
    let block = cur.u64()?;
    let indices =
        decode_index_deltas(cur.rest()).ok_or(PayloadError::Malformed("bad index list"))?;
    Ok((block, indices))
}

// ---- basis and intensity announcements ----------------------------------

pub fn encode_bases(block_start: u64, bases: &KeyMaterial) -> Vec<u8> {
    let mut out = block_start.to_le_bytes().to_vec();
    out.extend_from_slice(&(bases.len() as u32).to_le_bytes());
    out.extend_from_slice(&bases.to_bytes());
    out
}

pub fn decode_bases(payload: &[u8]) -> Result<(u64, KeyMaterial), PayloadError> {
    let mut cur = Cur::new(payload);
    let block = cur.u64()?;
    let n = cur.u32()? as usize;
    let bases = read_bits(&mut cur, n)?;
    cur.finish()?;
    Ok((block, bases))
}

/// Bob's reply: his bases plus, for every round both sides measured in X,
/// his resolved outcome bit. X outcomes are check data and safe to publish.
pub fn encode_bases_with_check_bits(
    block_start: u64,
    bases: &KeyMaterial,
    check_bits: &KeyMaterial,
) -> Vec<u8> {
    let mut out = encode_bases(block_start, bases);
    out.extend_from_slice(&(check_bits.len() as u32).to_le_bytes());
    out.extend_from_slice(&check_bits.to_bytes());
    out
}

pub fn decode_bases_with_check_bits(
    payload: &[u8],
) -> Result<(u64, KeyMaterial, KeyMaterial), PayloadError> {
    let mut cur = Cur::new(payload);
    let block = cur.u64()?;
    let n = cur.u32()? as usize;
    let bases = read_bits(&mut cur, n)?;
    let xn = cur.u32()? as usize;
    let check = read_bits(&mut cur, xn)?;
    cur.finish()?;
    Ok((block, bases, check))
}

pub fn encode_intensities(block_start: u64, codes: &[u8]) -> Vec<u8> {
    let mut out = block_start.to_le_bytes().to_vec();
    out.extend_from_slice(&(codes.len() as u32).to_le_bytes());
    let mut packed = vec![0u8; codes.len().div_ceil(4)];
    for (i, c) in codes.iter().enumerate() {
        debug_assert!(*c < 3);
        packed[i / 4] |= c << (2 * (i % 4));
    }
    out.extend_from_slice(&packed);
    out
}

pub fn decode_intensities(payload: &[u8]) -> Result<(u64, Vec<u8>), PayloadError> {
    let mut cur = Cur::new(payload);
    let block = cur.u64()?;
    let n = cur.u32()? as usize;
    let packed = cur.take(n.div_ceil(4))?;
    cur.finish()?;
    let mut codes = Vec::with_capacity(n);
    for i in 0..n {
        let c = packed[i / 4] >> (2 * (i % 4)) & 0b11;
        if c > 2 {
            return Err(PayloadError::Malformed("intensity code out of range"));
        }
        codes.push(c);
    }
    for i in n..packed.len() * 4 {
        if packed[i / 4] >> (2 * (i % 4)) & 0b11 != 0 {
            return Err(PayloadError::Malformed("nonzero padding codes"));
        }
    }
    Ok((block, codes))
}

// ---- estimation summary --------------------------------------------------

/// Everything both sides must agree on before parameter estimation, plus the
/// seed for sampling the raw key out of the sifted Z set.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EstimateSummary {
    pub sample_seed: u64,
    pub z_counts: [u64; 3],
    pub x_detected: [u64; 3],
    pub x_errors: [u64; 3],
}

pub fn encode_summary(s: &EstimateSummary) -> Vec<u8> {
    let mut out = s.sample_seed.to_le_bytes().to_vec();
    for group in [&s.z_counts, &s.x_detected, &s.x_errors] {
        for v in group {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_summary(payload: &[u8]) -> Result<EstimateSummary, PayloadError> {
    let mut cur = Cur::new(payload);
    let mut s = EstimateSummary {
        sample_seed: cur.u64()?,
        z_counts: [0; 3],
        x_detected: [0; 3],
        x_errors: [0; 3],
    };
    for k in 0..3 {
        s.z_counts[k] = cur.u64()?;
    }
    for k in 0..3 {
        s.x_detected[k] = cur.u64()?;
    }
    for k in 0..3 {
        s.x_errors[k] = cur.u64()?;
    }
    cur.finish()?;
    Ok(s)
}

// ---- reconciliation -------------------------------------------------------

/// Sub-messages multiplexed on the parity-exchange frame type. Parity bits
/// flow from Alice only; Bob's probes name ranges but carry no key data.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum EcMessage {
    PassHeader { pass: u32, block_size: u32, perm_seed: u64 },
    BlockParities(KeyMaterial),
    Probe { pass: u32, lo: u32, len: u32 },
    ProbeReply(bool),
    PassComplete { corrections: u64 },
    Finished,
}

pub fn encode_ec(m: &EcMessage) -> Vec<u8> {
    match m {
        EcMessage::PassHeader { pass, block_size, perm_seed } => {
            let mut out = vec![0u8];
            out.extend_from_slice(&pass.to_le_bytes());
            out.extend_from_slice(&block_size.to_le_bytes());
            out.extend_from_slice(&perm_seed.to_le_bytes());
            out
        }
        EcMessage::BlockParities(bits) => {
            let mut out = vec![1u8];
            out.extend_from_slice(&(bits.len() as u32).to_le_bytes());
            out.extend_from_slice(&bits.to_bytes());
            out
        }
        EcMessage::Probe { pass, lo, len } => {
            let mut out = vec![2u8];
            out.extend_from_slice(&pass.to_le_bytes());
            out.extend_from_slice(&lo.to_le_bytes());
            out.extend_from_slice(&len.to_le_bytes());
            out
        }
        EcMessage::ProbeReply(bit) => vec![3u8, *bit as u8],
        EcMessage::PassComplete { corrections } => {
            let mut out = vec![4u8];
            out.extend_from_slice(&corrections.to_le_bytes());
            out
        }
        EcMessage::Finished => vec![5u8],
    }
}

pub fn decode_ec(payload: &[u8]) -> Result<EcMessage, PayloadError> {
    let mut cur = Cur::new(payload);
    let m = match cur.u8()? {
        0 => EcMessage::PassHeader {
            pass: cur.u32()?,
            block_size: cur.u32()?,
            perm_seed: cur.u64()?,
        },
        1 => {
            let n = cur.u32()? as usize;
            EcMessage::BlockParities(read_bits(&mut cur, n)?)
        }
        2 => EcMessage::Probe { pass: cur.u32()?, lo: cur.u32()?, len: cur.u32()? },
        3 => match cur.u8()? {
            0 => EcMessage::ProbeReply(false),
            1 => EcMessage::ProbeReply(true),
            _ => return Err(PayloadError::Malformed("parity byte above 1")),
        },
        4 => EcMessage::PassComplete { corrections: cur.u64()? },
        5 => EcMessage::Finished,
        _ => return Err(PayloadError::Malformed("unknown reconciliation sub-message")),
    };
    cur.finish()?;
    Ok(m)
}

// ---- verification and amplification ---------------------------------------

pub fn encode_seed(seed: u64) -> Vec<u8> {
    seed.to_le_bytes().to_vec()
}

pub fn decode_seed(payload: &[u8]) -> Result<u64, PayloadError> {
    let mut cur = Cur::new(payload);
    let s = cur.u64()?;
    cur.finish()?;
    Ok(s)
}

pub fn encode_digest(digest: &KeyMaterial) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&bit_count(digest.len()).unwrap_or(u32::MAX).to_le_bytes());
    out.extend_from_slice(&digest.to_bytes());
    out
}

pub fn decode_digest(payload: &[u8]) -> Result<KeyMaterial, PayloadError> {
    let mut cur = Cur::new(payload);
    let n = cur.u32()? as usize;
    let bits = read_bits(&mut cur, n)?;
    cur.finish()?;
    Ok(bits)
}

pub fn encode_amplify(seed: u64, key_len: u64) -> Vec<u8> {
    let mut out = seed.to_le_bytes().to_vec();
    out.extend_from_slice(&key_len.to_le_bytes());
    out
}

pub fn decode_amplify(payload: &[u8]) -> Result<(u64, u64), PayloadError> {
    let mut cur = Cur::new(payload);
    let seed = cur.u64()?;
    let len = cur.u64()?;
    cur.finish()?;
    Ok((seed, len))
}
