use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;

use zombihub_core::hub::{HubCore, Output, SessionConfig};
use zombihub_core::protocol::{ControlChange, Hello, Motion, Orientation, Role, Topics};
use zombihub_core::{
    decode_envelope, encode_envelope, CapabilityProfile, Envelope, Payload, TopicPattern, UnitId,
};

const PATTERNS: [&str; 10] = [
    "*",
    "sensor/*",
    "sensor/motion/*",
    "sensor/orientation/*",
    "sensor/motion/u1",
    "control/*",
    "control/zombitronica/*",
    "control/zombitronica/vol0",
    "state/*",
    "nothing/here",
];

const DEFAULTS: [&str; 2] = ["state/*", "control/*"];

/// Reference matcher written from the rule: a trailing `*` stands for one
/// or more whole segments, everything else must match segment by segment.
fn matches(pattern: &str, topic: &str) -> bool {
    let p: Vec<&str> = pattern.split('/').collect();
    let t: Vec<&str> = topic.split('/').collect();
    if p.last() == Some(&"*") {
        let fixed = &p[..p.len() - 1];
        t.len() > fixed.len() && fixed.iter().zip(&t).all(|(a, b)| a == b)
    } else {
        p == t
    }
}

#[derive(Debug, Clone)]
enum Op {
    Subscribe(usize, Vec<usize>),
    Unsubscribe(usize, Vec<usize>),
    Motion(usize),
    Orientation(usize),
    Control(usize, usize, f64),
}

fn op(units: usize) -> impl Strategy<Value = Op> {
    let who = 0..units;
    let pats = proptest::collection::vec(0..PATTERNS.len(), 1..3);
    prop_oneof![
        (who.clone(), pats.clone()).prop_map(|(u, p)| Op::Subscribe(u, p)),
        (who.clone(), pats).prop_map(|(u, p)| Op::Unsubscribe(u, p)),
        who.clone().prop_map(Op::Motion),
        who.clone().prop_map(Op::Orientation),
        (who, 0usize..4, 0.0..=1.0f64).prop_map(|(u, k, v)| Op::Control(u, k, v)),
    ]
}

fn scenario() -> impl Strategy<Value = (usize, Vec<Op>)> {
    (2usize..7).prop_flat_map(|n| (Just(n), proptest::collection::vec(op(n), 1..80)))
}

fn text(src: &UnitId, seq: u64, payload: Payload) -> String {
    encode_envelope(&Envelope::new(src.clone(), seq, 0, payload)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn fan_out_matches_reference((n, ops) in scenario()) {
        let config = SessionConfig {
            sensor_rate_per_s: 1_000_000,
            seed: Some(1),
            ..SessionConfig::default()
        };
        let mut hub = HubCore::new(config).unwrap();
        let ids: Vec<UnitId> = (0..n).map(|i| UnitId::new(format!("u{i}")).unwrap()).collect();
        let conn = |i: usize| i as u64 + 1;
        let mut seqs = vec![0u64; n];
        let mut subs: Vec<BTreeSet<&str>> = vec![DEFAULTS.into_iter().collect(); n];
        let controls: Vec<String> = hub
            .state()
            .controls
            .keys()
            .filter(|k| k.starts_with("zombitronica/"))
            .take(4)
            .cloned()
            .collect();

        for (i, id) in ids.iter().enumerate() {
            let hello = Payload::Hello(Hello {
                roles: [Role::Client].into(),
                caps: CapabilityProfile::full(),
                wants_surface: None,
            });
            hub.on_frame(conn(i), &text(id, 0, hello), 0);
            seqs[i] = 1;
        }
        hub.take_outputs();

        for (t, op) in ops.iter().enumerate() {
            let now = 10 + t as u64;
            let (who, payload) = match op {
                Op::Subscribe(u, p) | Op::Unsubscribe(u, p) => {
                    let topics = p.iter().map(|&i| TopicPattern::new(PATTERNS[i]).unwrap()).collect();
                    if matches!(op, Op::Subscribe(..)) {
                        subs[*u].extend(p.iter().map(|&i| PATTERNS[i]));
                        (*u, Payload::Subscribe(Topics { topics }))
                    } else {
                        for &i in p {
                            subs[*u].remove(PATTERNS[i]);
                        }
                        (*u, Payload::Unsubscribe(Topics { topics }))
                    }
                }
                Op::Motion(u) => (*u, Payload::Motion(Motion { ax: 1.0, ay: 2.0, az: 3.0, rot_alpha: 0.0, rot_beta: 0.0, rot_gamma: 0.0 })),
                Op::Orientation(u) => (*u, Payload::Orientation(Orientation { alpha: 1.0, beta: 2.0, gamma: 3.0 })),
                Op::Control(u, k, v) => (*u, Payload::ControlChange(ControlChange { control: controls[*k % controls.len()].clone(), value: *v })),
            };
            let env = Envelope::new(ids[who].clone(), seqs[who], now, payload);
            seqs[who] += 1;
            let topic = env.topic();
            hub.on_frame(conn(who), &encode_envelope(&env).unwrap(), now);

            let mut got: BTreeMap<u64, usize> = BTreeMap::new();
            for out in hub.take_outputs() {
                if let Output::Frame { conn: c, frame, .. } = out {
                    let e = decode_envelope(&frame).unwrap();
                    prop_assert!(e.source == ids[who] || e.source.as_str() == "hub");
                    if e.source == ids[who] {
                        prop_assert_eq!(&e, &env);
                        *got.entry(c).or_default() += 1;
                    } else {
                        prop_assert!(!matches!(e.payload, Payload::Error(_)), "{:?}", e);
                    }
                }
            }
            let want: BTreeMap<u64, usize> = match &topic {
                Some(topic) => (0..n)
                    .filter(|&r| r != who && subs[r].iter().any(|p| matches(p, topic.as_str())))
                    .map(|r| (conn(r), 1))
                    .collect(),
                None => BTreeMap::new(),
            };
            prop_assert_eq!(got, want, "op {:?}", op);
        }
    }
}

#[test]
fn reference_matcher_agrees_with_pattern_type() {
    let topics = [
        "sensor/motion/u1",
        "sensor/orientation/u2",
        "control/zombitronica/vol0",
        "control/zombitronica/lead/x",
        "state/seq",
        "state",
    ];
    for p in PATTERNS {
        let pattern = TopicPattern::new(p).unwrap();
        for t in topics {
            let topic = zombihub_core::Topic::new(t).unwrap();
            assert_eq!(pattern.matches(&topic), matches(p, t), "{p} vs {t}");
        }
    }
}
