//! Wire format. Every frame is
//!
//! ```text
//! magic[4] version[1] msg_type[1] seq[8 LE] payload_len[4 LE] payload tag[16]
//! ```
//!
//! with the tag an HMAC-SHA256 over all preceding bytes, truncated to 128
//! bits. The authentication key is pre-shared out of band; sequence numbers
//! count per direction from zero and any gap, repeat or tag mismatch kills
//! the session rather than being retried.

use hmac::{Hmac, Mac};
use sha2::Sha256;

pub const MAGIC: [u8; 4] = *b"QKD1";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 18;
pub const TAG_LEN: usize = 16;
/// Bytes added around a payload: header plus tag.
pub const FRAME_OVERHEAD: usize = HEADER_LEN + TAG_LEN;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MsgType {
    BasisAnnounce = 0,
    IntensityAnnounce = 1,
    DetectIndices = 2,
    SiftConfirm = 3,
    PeSummary = 4,
    EcParity = 5,
    VerifySeed = 6,
    VerifyDigest = 7,
    PaSeed = 8,
    Abort = 9,
    Calibrate = 10,
}

impl MsgType {
    pub fn from_byte(b: u8) -> Option<MsgType> {
        Some(match b {
            0 => MsgType::BasisAnnounce,
            1 => MsgType::IntensityAnnounce,
            2 => MsgType::DetectIndices,
            3 => MsgType::SiftConfirm,
            4 => MsgType::PeSummary,
            5 => MsgType::EcParity,
            6 => MsgType::VerifySeed,
            7 => MsgType::VerifyDigest,
            8 => MsgType::PaSeed,
            9 => MsgType::Abort,
            10 => MsgType::Calibrate,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    pub msg_type: MsgType,
    pub seq: u64,
    pub payload: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum FrameError {
    #[error("payload of {0} bytes exceeds the frame limit")]
    Oversize(usize),
    #[error("need {0} bytes for a complete frame")]
    Incomplete(usize),
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported version {0}")]
    BadVersion(u8),
    #[error("authentication tag mismatch")]
    BadTag,
    #[error("sequence number {got} where {want} was expected")]
    BadSeq { got: u64, want: u64 },
    #[error("unknown message type {0}")]
    UnknownType(u8),
}

type HmacSha256 = Hmac<Sha256>;

fn tag_of(auth_key: &[u8], signed: &[u8]) -> [u8; TAG_LEN] {
    let mut mac = HmacSha256::new_from_slice(auth_key).expect("hmac accepts any key length");
    mac.update(signed);
    let full = mac.finalize().into_bytes();
    let mut tag = [0u8; TAG_LEN];
    tag.copy_from_slice(&full[..TAG_LEN]);
    tag
}

pub fn encode_frame(
    msg_type: MsgType,
    seq: u64,
    payload: &[u8],
    auth_key: &[u8],
) -> Result<Vec<u8>, FrameError> {
    if payload.len() > u32::MAX as usize {
        return Err(FrameError::Oversize(payload.len()));
    }
    let mut out = Vec::with_capacity(FRAME_OVERHEAD + payload.len());
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(msg_type as u8);
    out.extend_from_slice(&seq.to_le_bytes());
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(payload);
    let tag = tag_of(auth_key, &out);
    out.extend_from_slice(&tag);
    Ok(out)
}

/// Parse one frame from the start of `bytes`. On success returns the frame
/// and the number of bytes consumed. `Incomplete(n)` means the buffer is a
/// valid prefix and `n` total bytes are required; everything else is fatal.
/// The tag is verified before the message type or sequence number are
/// interpreted.
pub fn decode_frame(
    bytes: &[u8],
    auth_key: &[u8],
    expected_seq: u64,
) -> Result<(Frame, usize), FrameError> {
    if bytes.len() < HEADER_LEN {
        return Err(FrameError::Incomplete(HEADER_LEN));
    }
    if bytes[..4] != MAGIC {
        return Err(FrameError::BadMagic);
    }
    if bytes[4] != VERSION {
        return Err(FrameError::BadVersion(bytes[4]));
    }
    let type_byte = bytes[5];
    let seq = u64::from_le_bytes(bytes[6..14].try_into().unwrap());
    let payload_len = u32::from_le_bytes(bytes[14..18].try_into().unwrap()) as usize;
    let total = HEADER_LEN + payload_len + TAG_LEN;
    if bytes.len() < total {
        return Err(FrameError::Incomplete(total));
    }
    let signed = &bytes[..HEADER_LEN + payload_len];
    let mut mac = HmacSha256::new_from_slice(auth_key).expect("hmac accepts any key length");
    mac.update(signed);
    if mac.verify_truncated_left(&bytes[HEADER_LEN + payload_len..total]).is_err() {
        return Err(FrameError::BadTag);
    }
    if seq != expected_seq {
        return Err(FrameError::BadSeq { got: seq, want: expected_seq });
    }
    let msg_type = MsgType::from_byte(type_byte).ok_or(FrameError::UnknownType(type_byte))?;
    Ok((Frame { msg_type, seq, payload: signed[HEADER_LEN..].to_vec() }, total))
}
