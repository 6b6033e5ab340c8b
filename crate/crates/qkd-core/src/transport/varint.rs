//! LEB128 varints and the delta encoding used for detection-index lists.
//! Indices are sparse and strictly increasing, so the list goes on the wire
//! as a first absolute index followed by positive gaps; at 20 dB of loss
//! that is roughly one byte per detection instead of eight.

pub fn write_varint(out: &mut Vec<u8>, mut v: u64) {
    loop {
        let byte = (v & 0x7f) as u8;
        v >>= 7;
        if v == 0 {
            out.push(byte);
            return;
        }
        out.push(byte | 0x80);
    }
}

/// Reads one varint at `*pos`, advancing it. None on truncation or on an
/// encoding that overflows 64 bits.
pub fn read_varint(buf: &[u8], pos: &mut usize) -> Option<u64> {
    let mut v: u64 = 0;
    let mut shift = 0u32;
    loop {
        let byte = *buf.get(*pos)?;
        *pos += 1;
        if shift == 63 && byte > 1 {
            return None;
        }
        v |= u64::from(byte & 0x7f) << shift;
        if byte & 0x80 == 0 {
            return Some(v);
        }
        shift += 7;
        if shift > 63 {
            return None;
        }
    }
}

/// Encode a strictly increasing index list as first value plus gaps.
pub fn encode_index_deltas(indices: &[u64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(indices.len() + 8);
    let mut prev = None;
    for &i in indices {
        match prev {
            None => write_varint(&mut out, i),
            Some(p) => {
                assert!(i > p, "index list must be strictly increasing");
                write_varint(&mut out, i - p);
            }
        }
        prev = Some(i);
    }
    out
}

/// Inverse of [`encode_index_deltas`]. None on truncation, a zero gap or
/// index overflow, all of which mean the peer broke protocol.
pub fn decode_index_deltas(buf: &[u8]) -> Option<Vec<u64>> {
    let mut out = Vec::new();
    let mut pos = 0usize;
    let mut prev: Option<u64> = None;
    while pos < buf.len() {
        let v = read_varint(buf, &mut pos)?;
        let next = match prev {
            None => v,
            Some(p) => {
                if v == 0 {
                    return None;
                }
                p.checked_add(v)?
            }
        };
        out.push(next);
        prev = Some(next);
    }
    Some(out)
}
