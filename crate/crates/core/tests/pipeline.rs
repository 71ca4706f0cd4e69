use std::sync::Arc;

use channelrpc::binding::{Answerer, ChannelTemplate, Node, RelocationManager, ANSWERER_OBJECT};
use channelrpc::engine::{ServiceTable, Trace};
use channelrpc::env::Env;
use channelrpc::message::{Address, FaultKind, Phase, TaggedValue};
use channelrpc::stream::loopback::{FrameDirection, Injection, InjectionAction};
use channelrpc::stream::Network;

const SECURE: &str = "\
call KeyNegotiator required
call StampIssuer required
call SequenceIssuer required
call ReplayDetector required
stream Encryptor required
";

fn node(seed: u64) -> Node {
    let env = Env::deterministic(seed);
    Node::new(env.clone(), Network::new(), Arc::new(Trace::new(env)))
}

fn tpl(s: &str) -> ChannelTemplate {
    s.parse().unwrap()
}

fn answerer() -> (Arc<Answerer>, ServiceTable) {
    let a = Arc::new(Answerer::new());
    (a.clone(), ServiceTable::new().with(ANSWERER_OBJECT, a))
}

fn addr(host: &str) -> Address {
    Address::loopback(host, ANSWERER_OBJECT)
}

fn text(s: &str) -> TaggedValue {
    TaggedValue::text(s)
}

#[test]
fn identity_answer() {
    let n = node(1);
    let (_, services) = answerer();
    let empty = ChannelTemplate::default();
    let (_l, _) = n.serve(&addr("srv"), &empty, services).unwrap();
    let c = n.bind(addr("srv"), &empty, &empty).unwrap();
    assert_eq!(c.call("answer", vec![text("hello")]).unwrap(), text("You said:hello"));
    assert_eq!(n.net.loopback.frame_count(), 2);
}

#[test]
fn secure_answers_match_identity() {
    let n = node(2);
    let (_, services) = answerer();
    let secure = tpl(SECURE);
    let (_l, _) = n.serve(&addr("srv"), &secure, services).unwrap();
    let c = n.bind(addr("srv"), &secure, &secure).unwrap();
    for i in 0..20 {
        let arg = format!("m{i}");
        assert_eq!(c.call("answer", vec![text(&arg)]).unwrap(), text(&format!("You said:{arg}")));
    }
    let frames = n.net.loopback.frames();
    assert!(frames[2..].iter().all(|f| f.bytes.starts_with(b"ODPX")), "after negotiation every frame is encrypted");
    assert!(!frames[0].bytes.starts_with(b"ODPX"));
}

#[test]
fn one_cast_sends_one_frame() {
    let n = node(3);
    let (a, services) = answerer();
    let empty = ChannelTemplate::default();
    let (_l, _) = n.serve(&addr("srv"), &empty, services).unwrap();
    let c = n.bind(addr("srv"), &empty, &empty).unwrap().with_interface(Answerer::declared());
    assert_eq!(c.call("note", vec![]).unwrap(), TaggedValue::Unit);
    assert_eq!(n.net.loopback.frame_count(), 1);
    assert_eq!(c.call("noted", vec![]).unwrap(), TaggedValue::Int64(1));
    assert_eq!(a.noted(), 1);
}

#[test]
fn application_fault_reaches_caller() {
    let n = node(4);
    let (_, services) = answerer();
    let secure = tpl(SECURE);
    let (_l, _) = n.serve(&addr("srv"), &secure, services).unwrap();
    let c = n.bind(addr("srv"), &secure, &secure).unwrap();
    let f = c.call("reject", vec![text("x")]).unwrap_err();
    assert_eq!(f.kind, FaultKind::Application);
    assert!(f.detail.contains("rejected"));
    let f = c.call("nope", vec![]).unwrap_err();
    assert!(f.detail.contains("unknown method"));
}

#[test]
fn indication_fault_propagates_without_dispatch() {
    let n = node(5);
    let (a, services) = answerer();
    let server = tpl("call FaultInjector optional phase=indication name=Failer");
    let (_l, _) = n.serve(&addr("srv"), &server, services).unwrap();
    let c = n.bind(addr("srv"), &ChannelTemplate::default(), &server).unwrap();
    let f = c.call("answer", vec![text("x")]).unwrap_err();
    assert_eq!((f.kind, f.origin, f.handler.as_str()), (FaultKind::Channel, Phase::Indication, "Failer"));
    assert_eq!(a.answered(), 0);
    assert!(!n.trace.render().contains("\tdispatch\t"));
}

#[test]
fn confirmation_fault_resends_once() {
    let n = node(6);
    let (a, services) = answerer();
    let client = tpl("call FaultInjector optional phase=confirmation mode=once name=ConfFailer clears=true");
    let empty = ChannelTemplate::default();
    let (_l, _) = n.serve(&addr("srv"), &empty, services).unwrap();
    let c = n.bind(addr("srv"), &client, &empty).unwrap();
    assert_eq!(c.call("answer", vec![text("x")]).unwrap(), text("You said:x"));
    assert_eq!(a.answered(), 2);
    assert_eq!(n.trace.events().iter().filter(|e| e.event == "resend").count(), 1);
}

#[test]
fn confirmation_fault_without_budget_surfaces() {
    let n = node(7);
    let (_, services) = answerer();
    let client = tpl("engine resend_budget=0\ncall FaultInjector optional phase=confirmation mode=once name=ConfFailer clears=true");
    let empty = ChannelTemplate::default();
    let (_l, _) = n.serve(&addr("srv"), &empty, services).unwrap();
    let c = n.bind(addr("srv"), &client, &empty).unwrap();
    assert!(c.call("answer", vec![text("x")]).is_err());
}

#[test]
fn dropped_request_times_out_and_resends() {
    let n = node(8);
    let (a, services) = answerer();
    let secure = tpl(SECURE);
    let (_l, _) = n.serve(&addr("srv"), &secure, services).unwrap();
    let c = n.bind(addr("srv"), &secure, &secure).unwrap();
    c.call("answer", vec![text("warm")]).unwrap();
    n.net.loopback.inject(Injection::new(InjectionAction::Drop, 1).on(FrameDirection::Request));
    assert_eq!(c.call("answer", vec![text("y")]).unwrap(), text("You said:y"));
    assert_eq!(a.answered(), 2);
}

#[test]
fn relocation_is_transparent() {
    let mut n = node(9);
    let manager = Arc::new(RelocationManager::new());
    n.catalog = n.catalog.clone().with_lookup(manager.clone());
    let client = tpl("call Relocator optional service=Answerer");
    let empty = ChannelTemplate::default();
    let (old, _) = n.serve(&addr("old"), &empty, answerer().1).unwrap();
    let c = n.bind(addr("old"), &client, &empty).unwrap();
    assert_eq!(c.call("answer", vec![text("a")]).unwrap(), text("You said:a"));
    old.stop();
    let (_new, _) = n.serve(&addr("new"), &empty, answerer().1).unwrap();
    manager.notify(ANSWERER_OBJECT, addr("new"));
    assert_eq!(c.call("answer", vec![text("b")]).unwrap(), text("You said:b"));
    assert_eq!(c.target().host, "new");
    let trace = n.trace.render();
    assert!(trace.contains("Relocator\tclear"));
    assert!(trace.contains("\trebind\t"));
}

#[test]
fn relocation_without_manager_entry_surfaces_transport_fault() {
    let mut n = node(10);
    n.catalog = n.catalog.clone().with_lookup(Arc::new(RelocationManager::new()));
    let client = tpl("call Relocator optional");
    let c = n.bind(addr("gone"), &client, &ChannelTemplate::default()).unwrap();
    let f = c.call("answer", vec![text("a")]).unwrap_err();
    assert_eq!(f.kind, FaultKind::Transport);
}

#[test]
fn key_expiry_renegotiates() {
    let n = node(11);
    let (_, services) = answerer();
    let t = tpl("call KeyNegotiator required ttl_ms=1000\nstream Encryptor required");
    let (_l, _) = n.serve(&addr("srv"), &t, services).unwrap();
    let c = n.bind(addr("srv"), &t, &t).unwrap();
    c.call("answer", vec![text("1")]).unwrap();
    n.env.advance_clock(5_000);
    assert_eq!(c.call("answer", vec![text("2")]).unwrap(), text("You said:2"));
    assert!(n.trace.render().contains("key-expired"));
}

#[test]
fn deterministic_traces() {
    let run = || {
        let n = node(42);
        let secure = tpl(SECURE);
        let (_l, _) = n.serve(&addr("srv"), &secure, answerer().1).unwrap();
        let c = n.bind(addr("srv"), &secure, &secure).unwrap();
        for i in 0..5 {
            c.call("answer", vec![TaggedValue::Int64(i).to_string().as_str()].into_iter().map(text).collect()).unwrap();
        }
        n.trace.render()
    };
    assert_eq!(run(), run());
}

#[test]
fn indication_fault_trace_shows_propagation() {
    let n = node(12);
    let server = tpl("call StampIssuer optional\ncall FaultInjector optional phase=indication name=Failer");
    let (_l, _) = n.serve(&addr("srv"), &server, answerer().1).unwrap();
    let c = n.bind(addr("srv"), &server, &server).unwrap();
    assert!(c.call("answer", vec![text("x")]).is_err());
    let events = n.trace.events();
    let acceptor: Vec<String> = events.iter().filter(|e| e.side.name() == "acceptor").map(|e| format!("{}:{}", e.event, e.handler)).collect();
    assert_eq!(acceptor, ["receive:wire", "enter:channel", "todo:Failer", "propagate:engine", "send:wire"]);
}

#[test]
fn replayed_frames_rejected() {
    let n = node(13);
    let (a, services) = answerer();
    let secure = tpl(SECURE);
    let (l, _) = n.serve(&addr("srv"), &secure, services).unwrap();
    let c = n.bind(addr("srv"), &secure, &secure).unwrap();
    c.call("answer", vec![text("1")]).unwrap();
    c.call("answer", vec![text("2")]).unwrap();
    let captured = n.net.loopback.frames()[2].bytes.clone();
    let reply = n.net.loopback.send_raw(l.address(), &captured, std::time::Duration::from_secs(2)).unwrap().unwrap();
    assert!(!reply.is_empty());
    assert_eq!(a.answered(), 2);
    assert!(n.trace.render().contains("ReplayDetector"));
}

#[test]
fn secure_over_tcp_and_udp() {
    for kind in [channelrpc::message::TransportKind::Tcp, channelrpc::message::TransportKind::Udp] {
        let n = node(14);
        let secure = tpl(SECURE);
        let (l, _) = n.serve(&Address::new(kind, "127.0.0.1", 0, ANSWERER_OBJECT), &secure, answerer().1).unwrap();
        let c = n.bind(l.address().clone(), &secure, &secure).unwrap();
        let big = "z".repeat(5_000);
        assert_eq!(c.call("answer", vec![text(&big)]).unwrap(), text(&format!("You said:{big}")));
        assert_eq!(c.call("answer", vec![text("x")]).unwrap(), text("You said:x"));
    }
}
