mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use moviebench::wire::{
    decode_frame, decode_frame_with, encode_frame, encode_frame_with, Field, MessageKind, RpcMessage, TraceContext,
    WireError,
};

fn golden(name: &str) -> Vec<u8> {
    let text = std::fs::read_to_string(format!("{}/tests/golden/{name}", env!("CARGO_MANIFEST_DIR"))).unwrap();
    let hex: String = text.lines().filter(|l| !l.starts_with('#')).collect();
    hex::decode(hex.trim()).unwrap()
}

fn ping() -> RpcMessage {
    RpcMessage::request(
        TraceContext {
            trace_id: 1,
            span_id: 1,
            parent_span_id: 0,
        },
        "Ping",
        vec![],
    )
}

#[test]
fn golden_ping_matches_file() {
    let g = golden("ping.hex");
    assert_eq!(encode_frame(&ping()).unwrap(), g);
    assert_eq!(decode_frame(&g).unwrap(), ping());
}

#[test]
fn oversize_is_refused_on_both_sides() {
    let mut m = ping();
    m.fields.push(Field::new(0, vec![0u8; 100]));
    let err = encode_frame_with(&m, 64).unwrap_err();
    assert!(matches!(err, WireError::OversizeFrame { max: 64, .. }));
    let frame = encode_frame(&m).unwrap();
    assert!(matches!(decode_frame_with(&frame, 64), Err(WireError::OversizeFrame { .. })));
}

#[test]
fn header_errors_are_typed() {
    let frame = encode_frame(&ping()).unwrap();
    let mut v = frame.clone();
    v[4] = 2;
    assert_eq!(decode_frame(&v), Err(WireError::BadVersion(2)));
    let mut k = frame.clone();
    k[5] = 9;
    assert_eq!(decode_frame(&k), Err(WireError::BadKind(9)));

    let mut m = ping();
    m.fields = vec![Field::new(3, b"x".to_vec()), Field::new(4, b"y".to_vec())];
    let mut dup = encode_frame(&m).unwrap();
    let second_tag = dup.len() - 6;
    dup[second_tag] = 3;
    assert_eq!(decode_frame(&dup), Err(WireError::DuplicateTag(3)));
    m.fields[1].tag = 3;
    assert_eq!(encode_frame(&m), Err(WireError::DuplicateTag(3)));

    let empty = RpcMessage::request(ping().context, "", vec![]);
    assert!(matches!(encode_frame(&empty), Err(WireError::InvalidMethod(_))));
    let resp = RpcMessage::response(ping().context, vec![]);
    assert_eq!(decode_frame(&encode_frame(&resp).unwrap()).unwrap().kind, MessageKind::Response);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn random_messages_round_trip(seed in any::<u64>()) {
        let m = common::gen::message(&mut ChaCha8Rng::seed_from_u64(seed));
        let frame = encode_frame(&m).unwrap();
        prop_assert_eq!(frame.len(), 4 + m.payload_len());
        prop_assert_eq!(decode_frame(&frame).unwrap(), m);
    }
}

#[test]
fn mutated_frames_never_crash() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xF022);
    let mut accepted = 0;
    for _ in 0..100_000 {
        let m = common::gen::message(&mut rng);
        let mut f = encode_frame(&m).unwrap();
        common::gen::mutate(&mut rng, &mut f);
        if let Ok(decoded) = decode_frame(&f) {
            // Anything accepted must be exactly what the encoder produces for it.
            assert_eq!(encode_frame(&decoded).unwrap(), f);
            accepted += 1;
        }
    }
    assert!(accepted > 0);
}
