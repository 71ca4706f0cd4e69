use channelrpc::marshal::{marshal_message, marshal_reply, peek_method, unmarshal_message, unmarshal_reply};
use channelrpc::message::{wrap, Address, CallId, Fault, FaultKind, Message, Phase, Reply, TaggedValue, TransportKind};
use channelrpc::stream::segment::{segment, Reassembler, FRAGMENT_HEADER_LEN};
use proptest::prelude::*;

fn fixture(name: &str) -> Vec<u8> {
    let path = format!("{}/tests/fixtures/{name}.hex", env!("CARGO_MANIFEST_DIR"));
    let hex = std::fs::read_to_string(path).unwrap();
    let hex = hex.trim();
    (0..hex.len()).step_by(2).map(|i| u8::from_str_radix(&hex[i..i + 2], 16).unwrap()).collect()
}

const CID: CallId = CallId(0x0102030405060708090a0b0c0d0e0f10);

fn answer(arg: &str) -> Message {
    Message::new(
        Address::loopback("srv", "Answerer"),
        Address::loopback("client", "C"),
        "answer",
        vec![TaggedValue::text(arg)],
        CID,
    )
}

#[test]
fn golden_request() {
    let b = marshal_message(&answer("hello"));
    assert_eq!(b, fixture("answer_request"));
    assert_eq!(unmarshal_message(&b).unwrap(), answer("hello"));
}

#[test]
fn golden_wrapped_request() {
    let m = wrap("stampedAt", answer("hi"), vec![TaggedValue::Int64(1000)]);
    let b = marshal_message(&m);
    assert_eq!(b, fixture("stamped_request"));
    assert_eq!(unmarshal_message(&b).unwrap(), m);
}

#[test]
fn golden_one_cast() {
    let mut m = answer("x");
    m.method = "note".into();
    m.params.clear();
    m.one_cast = true;
    assert_eq!(marshal_message(&m), fixture("one_cast"));
}

#[test]
fn golden_replies() {
    let ok = Reply::ok(CallId(1), TaggedValue::text("You said:hello"));
    assert_eq!(marshal_reply(&ok).unwrap(), fixture("reply_ok"));
    let f = Fault::channel(Phase::Indication, "Failer", "injected fault").containing(Fault::transport(Phase::Request, "refused"));
    let bad = Reply::fault(CallId(1), f);
    assert_eq!(marshal_reply(&bad).unwrap(), fixture("reply_fault"));
    assert_eq!(unmarshal_reply(&fixture("reply_fault")).unwrap(), bad);
}

fn address() -> impl Strategy<Value = Address> {
    (
        prop_oneof![Just(TransportKind::Loopback), Just(TransportKind::Tcp), Just(TransportKind::Udp)],
        "[a-z0-9.]{1,12}",
        any::<u16>(),
        "[A-Za-z]{1,10}",
    )
        .prop_map(|(k, h, p, o)| Address::new(k, h, p, o))
}

fn leaf() -> impl Strategy<Value = TaggedValue> {
    prop_oneof![
        Just(TaggedValue::Unit),
        any::<bool>().prop_map(TaggedValue::Bool),
        any::<i64>().prop_map(TaggedValue::Int64),
        any::<f64>().prop_map(TaggedValue::Float64),
        ".{0,20}".prop_map(TaggedValue::Text),
        proptest::collection::vec(any::<u8>(), 0..40).prop_map(TaggedValue::Bytes),
    ]
}

fn value() -> impl Strategy<Value = TaggedValue> {
    leaf().prop_recursive(3, 24, 4, |inner| proptest::collection::vec(inner, 0..4).prop_map(TaggedValue::List))
}

fn phase() -> impl Strategy<Value = Phase> {
    prop_oneof![Just(Phase::Request), Just(Phase::Indication), Just(Phase::Response), Just(Phase::Confirmation)]
}

/// A call wrapped zero to three times, sometimes with its own addresses.
fn message() -> impl Strategy<Value = Message> {
    (
        address(),
        address(),
        "[a-zA-Z]{1,12}",
        proptest::collection::vec(value(), 0..4),
        any::<u128>(),
        any::<bool>(),
        phase(),
        proptest::collection::vec(("[a-z]{1,8}", proptest::collection::vec(value(), 0..2), proptest::option::of(address())), 0..4),
    )
        .prop_map(|(t, r, method, params, id, one_cast, ph, layers)| {
            let mut m = Message::new(t, r, method, params, CallId(id));
            m.one_cast = one_cast;
            for (outer, extra, retarget) in layers {
                m = wrap(&outer, m, extra);
                if let Some(a) = retarget {
                    m.target = a;
                }
            }
            m.with_phase(ph)
        })
}

fn fault() -> impl Strategy<Value = Fault> {
    let kind = prop_oneof![Just(FaultKind::Application), Just(FaultKind::Channel), Just(FaultKind::Transport)];
    let one = (kind, phase(), "[A-Za-z]{0,10}", ".{0,30}").prop_map(|(k, p, h, d)| Fault::new(k, p, h, d)).boxed();
    (one.clone(), proptest::option::of(one)).prop_map(|(f, c)| match c {
        Some(c) => f.containing(c),
        None => f,
    })
}

fn reply() -> impl Strategy<Value = Reply> {
    (any::<u128>(), prop_oneof![value().prop_map(Ok), fault().prop_map(Err)]).prop_map(|(id, outcome)| Reply { call_id: CallId(id), outcome })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn messages_round_trip_bit_exactly(m in message()) {
        let b = marshal_message(&m);
        let back = unmarshal_message(&b).unwrap();
        prop_assert_eq!(marshal_message(&back), b.clone());
        let p = peek_method(&b).unwrap();
        prop_assert_eq!(&p.method, &back.method);
        prop_assert_eq!(p.call_id, back.call_id);
        prop_assert_eq!(p.one_cast, back.one_cast);
    }

    #[test]
    fn replies_round_trip_bit_exactly(r in reply()) {
        let b = marshal_reply(&r).unwrap();
        let back = unmarshal_reply(&b).unwrap();
        prop_assert_eq!(marshal_reply(&back).unwrap(), b);
    }

    #[test]
    fn truncation_never_panics(m in message(), cut in any::<prop::sample::Index>()) {
        let b = marshal_message(&m);
        let n = cut.index(b.len());
        prop_assert!(unmarshal_message(&b[..n]).is_err());
    }

    #[test]
    fn segmentation_reassembles(data in proptest::collection::vec(any::<u8>(), 1..65_536), mtu in 64usize..=1500, seed in any::<u64>()) {
        let frags = segment(&data, mtu, seed).unwrap();
        prop_assert_eq!(frags.len(), data.len().div_ceil(mtu - FRAGMENT_HEADER_LEN));
        let mut order: Vec<usize> = (0..frags.len()).collect();
        let mut s = seed;
        for i in (1..order.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            order.swap(i, (s >> 33) as usize % (i + 1));
        }
        let mut r = Reassembler::default();
        let mut out = None;
        for i in order {
            if let Some(whole) = r.offer(frags[i].clone(), 0).unwrap() {
                out = Some(whole);
            }
        }
        prop_assert_eq!(out, Some(data));
    }
}
