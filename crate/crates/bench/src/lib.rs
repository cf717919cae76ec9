//! Fixtures shared by the benchmarks.

use zombihub_core::hub::{HubCore, SessionConfig};
use zombihub_core::protocol::{Hello, Motion, Role, Topics};
use zombihub_core::{encode_envelope, CapabilityProfile, Envelope, Payload, TopicPattern, UnitId};

pub fn motion_envelope(seq: u64) -> Envelope {
    Envelope::new(
        UnitId::new("tilt").unwrap(),
        seq,
        1_700_000_000_000 + seq,
        Payload::Motion(Motion {
            ax: 0.12,
            ay: -9.79,
            az: 0.4,
            rot_alpha: 1.5,
            rot_beta: -0.25,
            rot_gamma: 12.0,
        }),
    )
}

/// A hub with `listeners` units subscribed to all sensor traffic plus one
/// publisher on connection 0. Returns the hub and the publisher's next seq.
pub fn hub_with_listeners(listeners: usize) -> (HubCore, u64) {
    let config = SessionConfig {
        sensor_rate_per_s: u32::MAX,
        max_units: listeners + 1,
        seed: Some(7),
        ..SessionConfig::default()
    };
    let mut hub = HubCore::new(config).unwrap();
    let join = |hub: &mut HubCore, conn: u64, id: &str| {
        let hello = Payload::Hello(Hello {
            roles: [Role::Client].into(),
            caps: CapabilityProfile::full(),
            wants_surface: None,
        });
        let e = Envelope::new(UnitId::new(id).unwrap(), 0, 0, hello);
        hub.on_frame(conn, &encode_envelope(&e).unwrap(), 0);
    };
    join(&mut hub, 0, "tilt");
    for i in 0..listeners {
        let id = format!("ear{i}");
        let conn = i as u64 + 1;
        join(&mut hub, conn, &id);
        let sub = Payload::Subscribe(Topics {
            topics: vec![TopicPattern::new("sensor/*").unwrap()],
        });
        let e = Envelope::new(UnitId::new(id).unwrap(), 1, 0, sub);
        hub.on_frame(conn, &encode_envelope(&e).unwrap(), 0);
    }
    hub.take_outputs();
    (hub, 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use zombihub_core::hub::Output;

    #[test]
    fn every_listener_gets_the_frame() {
        let (mut hub, seq) = hub_with_listeners(31);
        let text = encode_envelope(&motion_envelope(seq)).unwrap();
        hub.on_frame(0, &text, 100_000);
        let frames = hub
            .take_outputs()
            .into_iter()
            .filter(|o| matches!(o, Output::Frame { .. }))
            .count();
        assert_eq!(frames, 31);
    }
}
