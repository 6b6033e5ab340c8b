//! Classical channel between the parties: length-framed, authenticated,
//! strictly ordered messages over any reliable byte stream.
//!
//! [`FramedLink`] does the framing and per-direction sequence accounting on
//! top of anything implementing `Read + Write`, so the in-memory
//! [`loopback_pair`] used by tests and a TCP socket run the exact same code
//! path; a session transcript depends only on the frames, never on the
//! carrier.

mod frame;
mod link;
mod varint;

pub use frame::{
    decode_frame, encode_frame, Frame, FrameError, MsgType, FRAME_OVERHEAD, HEADER_LEN, MAGIC,
    TAG_LEN, VERSION,
};
pub use link::{loopback_pair, DuplexPipe, FramedLink, LinkError};
pub use varint::{decode_index_deltas, encode_index_deltas, read_varint, write_varint};
