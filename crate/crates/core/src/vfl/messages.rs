//! Round messages and their wire encoding.
//!
//! Frame (little endian): `version u8 | kind u8 | vehicle u32 | len u32 |
//! payload`. Uplink payloads hold a minibatch of precoder outputs, either
//! as `2N` f32 values per sample or quantized (`bits u8 | n_reals u16`,
//! then per sample an f32 norm and the packed codes). Downlink payloads are
//! `2N` f32 gradient values per sample.

use std::io::{Read, Write};

use crate::error::{Error, Result};

pub const WIRE_VERSION: u8 = 1;
pub const HEADER_LEN: usize = 10;

const KIND_UPLINK_RAW: u8 = 1;
const KIND_UPLINK_QUANTIZED: u8 = 2;
const KIND_DOWNLINK: u8 = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct QuantizedSample {
    pub norm: f32,
    pub packed: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Body {
    /// Stacked `Re ++ Im` outputs, sample after sample.
    UplinkRaw(Vec<f32>),
    UplinkQuantized {
        bits: u8,
        n_reals: u16,
        samples: Vec<QuantizedSample>,
    },
    /// `∂L/∂Re(v) ++ ∂L/∂Im(v)`, sample after sample.
    Downlink(Vec<f32>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Message {
    pub vehicle: u32,
    pub body: Body,
}

impl Message {
    pub fn is_uplink(&self) -> bool {
        !matches!(self.body, Body::Downlink(_))
    }

    fn kind(&self) -> u8 {
        match self.body {
            Body::UplinkRaw(_) => KIND_UPLINK_RAW,
            Body::UplinkQuantized { .. } => KIND_UPLINK_QUANTIZED,
            Body::Downlink(_) => KIND_DOWNLINK,
        }
    }

    pub fn payload_len(&self) -> usize {
        match &self.body {
            Body::UplinkRaw(v) | Body::Downlink(v) => 4 * v.len(),
            Body::UplinkQuantized { samples, .. } => 3 + samples.iter().map(|s| 4 + s.packed.len()).sum::<usize>(),
        }
    }

    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + self.payload_len()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.push(WIRE_VERSION);
        out.push(self.kind());
        out.extend_from_slice(&self.vehicle.to_le_bytes());
        out.extend_from_slice(&(self.payload_len() as u32).to_le_bytes());
        match &self.body {
            Body::UplinkRaw(v) | Body::Downlink(v) => {
                for x in v {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
            Body::UplinkQuantized { bits, n_reals, samples } => {
                out.push(*bits);
                out.extend_from_slice(&n_reals.to_le_bytes());
                for s in samples {
                    out.extend_from_slice(&s.norm.to_le_bytes());
                    out.extend_from_slice(&s.packed);
                }
            }
        }
        out
    }

    /// Parses a frame header, returning `(kind, vehicle, payload length)`.
    fn parse_header(h: &[u8; HEADER_LEN]) -> Result<(u8, u32, usize)> {
        if h[0] != WIRE_VERSION {
            return Err(Error::Protocol(format!("wire version {} unsupported", h[0])));
        }
        let vehicle = u32::from_le_bytes(h[2..6].try_into().expect("4 bytes"));
        let len = u32::from_le_bytes(h[6..10].try_into().expect("4 bytes")) as usize;
        Ok((h[1], vehicle, len))
    }

    fn from_parts(kind: u8, vehicle: u32, payload: &[u8]) -> Result<Self> {
        let f32s = |p: &[u8]| -> Result<Vec<f32>> {
            if p.len() % 4 != 0 {
                return Err(Error::Protocol("f32 payload length not a multiple of 4".into()));
            }
            Ok(p.chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect())
        };
        let body = match kind {
            KIND_UPLINK_RAW => Body::UplinkRaw(f32s(payload)?),
            KIND_DOWNLINK => Body::Downlink(f32s(payload)?),
            KIND_UPLINK_QUANTIZED => {
                if payload.len() < 3 {
                    return Err(Error::Protocol("quantized payload too short".into()));
                }
                let bits = payload[0];
                let n_reals = u16::from_le_bytes([payload[1], payload[2]]);
                if bits == 0 || bits > 16 {
                    return Err(Error::Protocol(format!("invalid code width {bits}")));
                }
                let per = 4 + (n_reals as usize * bits as usize).div_ceil(8);
                let rest = &payload[3..];
                if rest.len() % per != 0 {
                    return Err(Error::Protocol("quantized payload has a partial sample".into()));
                }
                let samples = rest
                    .chunks_exact(per)
                    .map(|c| QuantizedSample {
                        norm: f32::from_le_bytes(c[..4].try_into().expect("4 bytes")),
                        packed: c[4..].to_vec(),
                    })
                    .collect();
                Body::UplinkQuantized { bits, n_reals, samples }
            }
            other => return Err(Error::Protocol(format!("unknown message kind {other}"))),
        };
        Ok(Self { vehicle, body })
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Protocol("frame shorter than header".into()));
        }
        let (kind, vehicle, len) = Self::parse_header(bytes[..HEADER_LEN].try_into().expect("header"))?;
        if bytes.len() != HEADER_LEN + len {
            return Err(Error::Protocol(format!(
                "frame length {} disagrees with header ({len} + {HEADER_LEN})",
                bytes.len()
            )));
        }
        Self::from_parts(kind, vehicle, &bytes[HEADER_LEN..])
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<usize> {
        let bytes = self.encode();
        w.write_all(&bytes).map_err(|e| Error::Transport(e.to_string()))?;
        w.flush().map_err(|e| Error::Transport(e.to_string()))?;
        Ok(bytes.len())
    }

    /// Reads one frame; `Ok(None)` on a clean end of stream.
    pub fn read_from<R: Read>(r: &mut R) -> Result<Option<Self>> {
        let mut header = [0u8; HEADER_LEN];
        match r.read_exact(&mut header) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(None),
            Err(e) => return Err(Error::Transport(e.to_string())),
        }
        let (kind, vehicle, len) = Self::parse_header(&header)?;
        let mut payload = vec![0u8; len];
        r.read_exact(&mut payload).map_err(|e| Error::Transport(e.to_string()))?;
        Self::from_parts(kind, vehicle, &payload).map(Some)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn all_kinds() -> Vec<Message> {
        vec![
            Message {
                vehicle: 7,
                body: Body::UplinkRaw(vec![1.0, -2.5, 3.25, 0.0]),
            },
            Message {
                vehicle: 0,
                body: Body::Downlink(vec![f32::MIN_POSITIVE, -0.0]),
            },
            Message {
                vehicle: 2,
                body: Body::UplinkQuantized {
                    bits: 2,
                    n_reals: 6,
                    samples: vec![
                        QuantizedSample {
                            norm: 0.5,
                            packed: vec![0xAB, 0x0C],
                        },
                        QuantizedSample {
                            norm: 2.0,
                            packed: vec![0x01, 0x02],
                        },
                    ],
                },
            },
        ]
    }

    #[test]
    fn frames_round_trip() {
        for m in all_kinds() {
            let bytes = m.encode();
            assert_eq!(bytes.len(), m.encoded_len());
            assert_eq!(Message::decode(&bytes).unwrap(), m);
            let mut cur = std::io::Cursor::new(bytes);
            assert_eq!(Message::read_from(&mut cur).unwrap(), Some(m));
            assert_eq!(Message::read_from(&mut cur).unwrap(), None);
        }
    }

    #[test]
    fn header_layout_is_fixed() {
        let m = Message {
            vehicle: 0x0102_0304,
            body: Body::Downlink(vec![1.0]),
        };
        let b = m.encode();
        assert_eq!(&b[..10], &[1, 3, 4, 3, 2, 1, 4, 0, 0, 0]);
        assert_eq!(&b[10..], &1.0f32.to_le_bytes());
    }

    #[test]
    fn malformed_frames_are_rejected() {
        let mut b = all_kinds()[0].encode();
        b[0] = 9;
        assert!(Message::decode(&b).is_err());
        let mut b = all_kinds()[0].encode();
        b[1] = 42;
        assert!(Message::decode(&b).is_err());
        let b = all_kinds()[2].encode();
        assert!(Message::decode(&b[..b.len() - 1]).is_err());
    }
}
