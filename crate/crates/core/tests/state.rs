mod common;

use proptest::prelude::*;

use common::{canonical, replay_json};
use zombihub_core::protocol::{ControlChange, SeqCellSet, TransportSet};
use zombihub_core::surface::{
    bundled_spec, load_snapshot, snapshot, Mutation, SessionLayout,
};
use zombihub_core::{apply_mutation, SharedState};

fn initial() -> SharedState {
    let a = bundled_spec("zombitronica").unwrap();
    let b = bundled_spec("zombee-conductor").unwrap();
    SharedState::new(&SessionLayout::from_surfaces([&a, &b]).unwrap())
}

/// Mutations aimed at the session above, with a share of ones that must
/// be rejected (unknown keys, out-of-range cells and values).
fn mutation(keys: Vec<String>, instruments: u32, steps: u32) -> impl Strategy<Value = Mutation> {
    let known = proptest::sample::select(keys);
    let key = prop_oneof![9 => known, 1 => "[a-z]{1,6}/[a-z]{1,6}"];
    let value = prop_oneof![9 => 0.0..=1.0f64, 1 => -1.0..2.0f64];
    prop_oneof![
        (key, value).prop_map(|(control, value)| Mutation::Control(ControlChange { control, value })),
        (0..instruments + 1, 0..steps + 1, any::<bool>(), proptest::option::of(0u8..=130)).prop_map(
            |(instrument, step, on, note)| Mutation::SeqCell(SeqCellSet { instrument, step, on, note })
        ),
        (proptest::option::of(prop_oneof![0.0..400.0f64, Just(f64::NAN)]), proptest::option::of(any::<bool>()))
            .prop_map(|(bpm, playing)| Mutation::Transport(TransportSet { bpm, playing })),
    ]
}

fn mutations(n: usize) -> impl Strategy<Value = Vec<Mutation>> {
    let s = initial();
    let keys: Vec<String> = s.controls.keys().cloned().collect();
    proptest::collection::vec(mutation(keys, s.grid.instruments, s.grid.steps), 0..n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn replay_matches_untyped_oracle(ms in mutations(120)) {
        let mut state = initial();
        let mut oracle = serde_json::to_value(&state).unwrap();
        for m in &ms {
            let accepted = state.apply(m).is_ok();
            prop_assert_eq!(accepted, replay_json(&mut oracle, m).is_some(), "{:?}", m);
        }
        prop_assert_eq!(canonical(&state), oracle.to_string());
        prop_assert!(state.check().is_ok());
    }

    #[test]
    fn apply_is_pure_and_rejection_leaves_state_alone(ms in mutations(40)) {
        let mut state = initial();
        for m in &ms {
            let before = snapshot(&state);
            let result = apply_mutation(&state, m);
            prop_assert_eq!(snapshot(&state), before.clone());
            let mut in_place = state.clone();
            match result {
                Ok(next) => {
                    in_place.apply(m).unwrap();
                    prop_assert_eq!(next.revision, state.revision + 1);
                    prop_assert_eq!(snapshot(&in_place), snapshot(&next));
                    state = next;
                }
                Err(e) => {
                    prop_assert_eq!(in_place.apply(m).unwrap_err(), e);
                    prop_assert_eq!(snapshot(&in_place), before);
                }
            }
        }
    }

    #[test]
    fn snapshots_round_trip_bitwise(s in common::state()) {
        let text = snapshot(&s);
        let back = load_snapshot(&text).unwrap();
        prop_assert_eq!(snapshot(&back), text);
    }

    /// Same mutation log, same bytes: replay is deterministic.
    #[test]
    fn replay_is_deterministic(ms in mutations(60)) {
        let run = || {
            let mut s = initial();
            for m in &ms {
                let _ = s.apply(m);
            }
            snapshot(&s)
        };
        prop_assert_eq!(run(), run());
    }
}

#[test]
fn rejected_mutations_do_not_bump_revision() {
    let mut s = initial();
    let bad = Mutation::SeqCell(SeqCellSet {
        instrument: s.grid.instruments,
        step: 0,
        on: true,
        note: None,
    });
    assert_eq!(s.apply(&bad).unwrap_err().code(), "index-out-of-range");
    let unknown = Mutation::Control(ControlChange {
        control: "nope/nothing".into(),
        value: 0.5,
    });
    assert_eq!(s.apply(&unknown).unwrap_err().code(), "unknown-control");
    assert_eq!(s.revision, 0);
}

#[test]
fn bpm_is_clamped_to_range() {
    let mut s = initial();
    s.apply(&Mutation::Transport(TransportSet {
        bpm: Some(1000.0),
        playing: None,
    }))
    .unwrap();
    assert_eq!(s.transport.bpm, 300.0);
    s.apply(&Mutation::Transport(TransportSet {
        bpm: Some(1.0),
        playing: Some(true),
    }))
    .unwrap();
    assert_eq!(s.transport.bpm, 20.0);
    assert!(s.transport.playing);
}
