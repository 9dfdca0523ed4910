//! Canonical XML wire codec for emergency messages and the packet filter.
//!
//! The document is a single `<lifeline-msg v="1">` root holding the fields
//! `msg_id, src, dst, priority, payload, sender_load, hop_count, created_at`
//! in that order, with no whitespace between elements. The payload is
//! standard base64. Equal messages always encode to identical bytes.

use std::fmt::Write as _;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use quick_xml::events::Event;
use quick_xml::Reader;
use thiserror::Error;

use crate::message::{EmergencyMessage, MessageId, NodeId, Payload, Percent, Priority};

/// Magic prefix of every encoded control (HELLO/TC) packet.
pub const CONTROL_MAGIC: [u8; 4] = *b"LLCP";

const ROOT: &str = "lifeline-msg";
const VERSION: &str = "1";
const FIELDS: [&str; 8] = [
    "msg_id",
    "src",
    "dst",
    "priority",
    "payload",
    "sender_load",
    "hop_count",
    "created_at",
];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DecodeError {
    #[error("malformed document: {0}")]
    MalformedDocument(String),
    #[error("invariant violation: {0}")]
    InvariantViolation(String),
}

fn malformed(msg: impl Into<String>) -> DecodeError {
    DecodeError::MalformedDocument(msg.into())
}

fn violation(msg: impl Into<String>) -> DecodeError {
    DecodeError::InvariantViolation(msg.into())
}

/// Kind of an incoming packet as seen by the receive filter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PacketKind {
    Emergency,
    Control,
    Other,
}

pub fn encode_message(msg: &EmergencyMessage) -> Vec<u8> {
    let mut out = String::with_capacity(encoded_len(msg));
    // Writing into a String cannot fail.
    let _ = write!(
        out,
        "<{ROOT} v=\"{VERSION}\"><msg_id>{}</msg_id><src>{}</src><dst>{}</dst>\
         <priority>{}</priority><payload>{}</payload><sender_load>{}</sender_load>\
         <hop_count>{}</hop_count><created_at>{}</created_at></{ROOT}>",
        msg.msg_id.0,
        msg.src,
        msg.dst,
        msg.priority.level(),
        BASE64.encode(msg.payload.as_bytes()),
        msg.sender_load.value(),
        msg.hop_count,
        msg.created_at,
    );
    out.into_bytes()
}

/// Length in bytes of [`encode_message`]'s output, without encoding.
pub fn encoded_len(msg: &EmergencyMessage) -> usize {
    fn digits(mut v: u64) -> usize {
        let mut n = 1;
        while v >= 10 {
            v /= 10;
            n += 1;
        }
        n
    }
    let tags: usize = FIELDS.iter().map(|f| 2 * f.len() + 5).sum();
    let root = 2 * ROOT.len() + 5 + " v=\"1\"".len();
    let b64 = msg.payload.len().div_ceil(3) * 4;
    root + tags
        + digits(msg.msg_id.0)
        + msg.src.to_string().len()
        + msg.dst.to_string().len()
        + 1
        + b64
        + digits(msg.sender_load.value() as u64)
        + digits(msg.hop_count as u64)
        + digits(msg.created_at)
}

pub fn decode_message(bytes: &[u8]) -> Result<EmergencyMessage, DecodeError> {
    let text = std::str::from_utf8(bytes).map_err(|_| malformed("not UTF-8"))?;
    let mut reader = Reader::from_str(text);
    let mut values: [Option<String>; 8] = Default::default();
    let mut open_field: Option<usize> = None;
    let mut in_root = false;
    let mut root_closed = false;

    loop {
        let event = reader
            .read_event()
            .map_err(|e| malformed(format!("xml: {e}")))?;
        match event {
            Event::Decl(_) | Event::Comment(_) if !in_root => {}
            Event::Start(start) => {
                let name = start.name();
                let name = name.as_ref();
                if root_closed {
                    return Err(malformed("content after root element"));
                }
                if !in_root {
                    if name != ROOT {
                        return Err(malformed(format!("unexpected root <{name}>")));
                    }
                    let version = start
                        .try_get_attribute("v")
                        .map_err(|e| malformed(format!("attribute: {e}")))?
                        .ok_or_else(|| malformed("missing version attribute"))?;
                    if version.value.as_ref() != VERSION {
                        return Err(malformed(format!("unsupported version {}", version.value)));
                    }
                    in_root = true;
                    continue;
                }
                if open_field.is_some() {
                    return Err(malformed(format!("nested element <{name}>")));
                }
                let idx = FIELDS
                    .iter()
                    .position(|f| *f == name)
                    .ok_or_else(|| malformed(format!("unknown element <{name}>")))?;
                if values[idx].is_some() {
                    return Err(malformed(format!("duplicate element <{name}>")));
                }
                values[idx] = Some(String::new());
                open_field = Some(idx);
            }
            Event::Text(t) => {
                let content = t.xml10_content();
                match open_field {
                    Some(idx) => values[idx].get_or_insert_with(String::new).push_str(&content),
                    None if content.trim().is_empty() => {}
                    None => return Err(malformed("stray text")),
                }
            }
            Event::End(end) => {
                let name = end.name();
                let name = name.as_ref();
                match open_field.take() {
                    Some(idx) if FIELDS[idx] == name => {}
                    Some(_) => return Err(malformed(format!("mismatched </{name}>"))),
                    None if in_root && name == ROOT => {
                        in_root = false;
                        root_closed = true;
                    }
                    None => return Err(malformed(format!("unexpected </{name}>"))),
                }
            }
            Event::Eof => break,
            other => return Err(malformed(format!("unsupported construct {other:?}"))),
        }
    }
    if !root_closed {
        return Err(malformed("document not closed"));
    }

    let mut fields = values.into_iter().zip(FIELDS);
    let mut next = || {
        let (value, name) = fields.next().expect("eight fields");
        value.ok_or_else(|| malformed(format!("missing <{name}>")))
    };
    let msg_id = MessageId(parse_int(&next()?, "msg_id")?);
    let src = parse_node(&next()?, "src")?;
    let dst = parse_node(&next()?, "dst")?;
    let priority_raw = parse_int(&next()?, "priority")?;
    let payload_raw = BASE64
        .decode(next()?.as_bytes())
        .map_err(|e| malformed(format!("payload base64: {e}")))?;
    let load_raw = parse_int(&next()?, "sender_load")?;
    let hop_raw = parse_int(&next()?, "hop_count")?;
    let created_at = parse_int(&next()?, "created_at")?;

    let priority = u8::try_from(priority_raw)
        .ok()
        .and_then(Priority::new)
        .ok_or_else(|| violation(format!("priority {priority_raw} outside 0..=4")))?;
    let payload = Payload::new(payload_raw).map_err(|e| violation(e.to_string()))?;
    let sender_load = u8::try_from(load_raw)
        .ok()
        .and_then(Percent::new)
        .ok_or_else(|| violation(format!("sender_load {load_raw} outside 0..=100")))?;
    let hop_count =
        u32::try_from(hop_raw).map_err(|_| violation(format!("hop_count {hop_raw} too large")))?;

    Ok(EmergencyMessage {
        msg_id,
        src,
        dst,
        priority,
        payload,
        sender_load,
        hop_count,
        created_at,
    })
}

fn parse_int(s: &str, field: &str) -> Result<u64, DecodeError> {
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
        return Err(malformed(format!("{field}: not an unsigned integer")));
    }
    s.parse()
        .map_err(|_| malformed(format!("{field}: integer overflow")))
}

fn parse_node(s: &str, field: &str) -> Result<NodeId, DecodeError> {
    s.parse()
        .map_err(|_| malformed(format!("{field}: bad address {s:?}")))
}

/// Receive-side filter. Never fails.
pub fn classify_packet(bytes: &[u8]) -> PacketKind {
    if bytes.starts_with(&CONTROL_MAGIC) {
        PacketKind::Control
    } else if decode_message(bytes).is_ok() {
        PacketKind::Emergency
    } else {
        PacketKind::Other
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(priority: u8, payload_len: usize) -> EmergencyMessage {
        EmergencyMessage {
            msg_id: MessageId::compose(NodeId::host(3), 9),
            src: NodeId::host(3),
            dst: NodeId::station(0),
            priority: Priority::new(priority).unwrap(),
            payload: Payload::new(vec![0xAB; payload_len]).unwrap(),
            sender_load: Percent::new(42).unwrap(),
            hop_count: 0,
            created_at: 1234,
        }
    }

    fn arb_message() -> impl Strategy<Value = EmergencyMessage> {
        (
            any::<u64>(),
            any::<u32>(),
            any::<u32>(),
            0u8..=4,
            proptest::collection::vec(any::<u8>(), 1..=255),
            0u8..=100,
            any::<u32>(),
            any::<u64>(),
        )
            .prop_map(|(id, src, dst, p, payload, load, hops, at)| EmergencyMessage {
                msg_id: MessageId(id),
                src: NodeId(src),
                dst: NodeId(dst),
                priority: Priority::new(p).unwrap(),
                payload: Payload::new(payload).unwrap(),
                sender_load: Percent::new(load).unwrap(),
                hop_count: hops,
                created_at: at,
            })
    }

    #[test]
    fn minimal_message_has_priority_element() {
        let bytes = encode_message(&sample(0, 1));
        let text = String::from_utf8(bytes).unwrap();
        assert!(text.contains("<priority>0</priority>"));
        assert!(text.starts_with("<lifeline-msg v=\"1\"><msg_id>"));
        assert_eq!(text.matches(' ').count(), 1);
    }

    #[test]
    fn full_payload_survives() {
        let m = sample(2, 255);
        let decoded = decode_message(&encode_message(&m)).unwrap();
        assert_eq!(decoded.payload.len(), 255);
        assert_eq!(decoded, m);
    }

    #[test]
    fn junk_is_malformed() {
        assert!(matches!(
            decode_message(b"hello"),
            Err(DecodeError::MalformedDocument(_))
        ));
        assert!(matches!(
            decode_message(&[0xff, 0xfe, 0x00]),
            Err(DecodeError::MalformedDocument(_))
        ));
        assert!(matches!(decode_message(b""), Err(DecodeError::MalformedDocument(_))));
    }

    #[test]
    fn out_of_range_priority_is_invariant_violation() {
        let text = String::from_utf8(encode_message(&sample(0, 4))).unwrap();
        let bad = text.replace("<priority>0</priority>", "<priority>5</priority>");
        assert!(matches!(
            decode_message(bad.as_bytes()),
            Err(DecodeError::InvariantViolation(_))
        ));
        let bad = text.replace("<priority>0</priority>", "<priority>7</priority>");
        assert!(matches!(
            decode_message(bad.as_bytes()),
            Err(DecodeError::InvariantViolation(_))
        ));
    }

    #[test]
    fn oversized_payload_is_invariant_violation() {
        let text = String::from_utf8(encode_message(&sample(0, 4))).unwrap();
        let big = BASE64.encode(vec![1u8; 256]);
        let start = text.find("<payload>").unwrap() + "<payload>".len();
        let end = text.find("</payload>").unwrap();
        let bad = format!("{}{}{}", &text[..start], big, &text[end..]);
        assert!(matches!(
            decode_message(bad.as_bytes()),
            Err(DecodeError::InvariantViolation(_))
        ));
    }

    #[test]
    fn missing_and_duplicate_fields_are_malformed() {
        let text = String::from_utf8(encode_message(&sample(1, 4))).unwrap();
        let missing = text.replace("<hop_count>0</hop_count>", "");
        assert!(matches!(
            decode_message(missing.as_bytes()),
            Err(DecodeError::MalformedDocument(_))
        ));
        let dup = text.replace("<hop_count>0</hop_count>", "<hop_count>0</hop_count><hop_count>1</hop_count>");
        assert!(matches!(
            decode_message(dup.as_bytes()),
            Err(DecodeError::MalformedDocument(_))
        ));
        let version = text.replace("v=\"1\"", "v=\"2\"");
        assert!(matches!(
            decode_message(version.as_bytes()),
            Err(DecodeError::MalformedDocument(_))
        ));
        let truncated = &text.as_bytes()[..text.len() - 3];
        assert!(decode_message(truncated).is_err());
    }

    #[test]
    fn classification() {
        assert_eq!(classify_packet(&encode_message(&sample(0, 10))), PacketKind::Emergency);
        let mut control = CONTROL_MAGIC.to_vec();
        control.extend_from_slice(&[1, 2, 3]);
        assert_eq!(classify_packet(&control), PacketKind::Control);
        assert_eq!(classify_packet(b"hello"), PacketKind::Other);
    }

    #[test]
    fn random_bytes_are_other() {
        use rand::{RngCore, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut other = 0;
        for _ in 0..1000 {
            let mut buf = [0u8; 64];
            rng.fill_bytes(&mut buf);
            if classify_packet(&buf) == PacketKind::Other {
                other += 1;
            }
        }
        assert_eq!(other, 1000);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn round_trip_and_canonical(m in arb_message()) {
            let bytes = encode_message(&m);
            prop_assert_eq!(bytes.len(), encoded_len(&m));
            let decoded = decode_message(&bytes).unwrap();
            prop_assert_eq!(&decoded, &m);
            prop_assert_eq!(encode_message(&decoded), bytes.clone());
            prop_assert_eq!(encode_message(&m.clone()), bytes.clone());
            prop_assert_eq!(classify_packet(&bytes), PacketKind::Emergency);
        }

        #[test]
        fn decode_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..512)) {
            let _ = decode_message(&bytes);
            let _ = classify_packet(&bytes);
        }

        #[test]
        fn mutated_documents_never_panic(m in arb_message(), pos in any::<usize>(), byte in any::<u8>()) {
            let mut bytes = encode_message(&m);
            let i = pos % bytes.len();
            bytes[i] = byte;
            let _ = decode_message(&bytes);
        }
    }
}
