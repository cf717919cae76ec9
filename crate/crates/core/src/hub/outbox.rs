use std::collections::VecDeque;
use std::sync::Arc;

use crate::protocol::TrafficClass;

/// Per-connection send queue. When full, the oldest queued sensor frame is
/// dropped to make room; control frames are never dropped and may push the
/// queue past its nominal capacity.
#[derive(Debug)]
pub struct OutQueue {
    capacity: usize,
    frames: VecDeque<(Arc<str>, TrafficClass)>,
    dropped: u64,
}

impl OutQueue {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            frames: VecDeque::new(),
            dropped: 0,
        }
    }

    pub fn push(&mut self, frame: Arc<str>, class: TrafficClass) {
        if self.frames.len() >= self.capacity {
            let oldest_sensor = self
                .frames
                .iter()
                .position(|(_, c)| *c == TrafficClass::Sensor);
            match (oldest_sensor, class) {
                (Some(i), _) => {
                    self.frames.remove(i);
                    self.dropped += 1;
                }
                (None, TrafficClass::Sensor) => {
                    self.dropped += 1;
                    return;
                }
                (None, TrafficClass::Control) => {}
            }
        }
        self.frames.push_back((frame, class));
    }

    pub fn pop(&mut self) -> Option<Arc<str>> {
        self.frames.pop_front().map(|(f, _)| f)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dropped(&self) -> u64 {
        self.dropped
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use TrafficClass::*;

    fn drain(q: &mut OutQueue) -> Vec<String> {
        std::iter::from_fn(|| q.pop()).map(|f| f.to_string()).collect()
    }

    #[test]
    fn drops_oldest_sensor_frame_first() {
        let mut q = OutQueue::new(3);
        q.push("c1".into(), Control);
        q.push("s1".into(), Sensor);
        q.push("s2".into(), Sensor);
        q.push("s3".into(), Sensor);
        assert_eq!(q.dropped(), 1);
        assert_eq!(drain(&mut q), ["c1", "s2", "s3"]);
    }

    #[test]
    fn control_frames_are_never_dropped() {
        let mut q = OutQueue::new(2);
        q.push("c1".into(), Control);
        q.push("c2".into(), Control);
        q.push("s1".into(), Sensor);
        q.push("c3".into(), Control);
        assert_eq!(q.dropped(), 1);
        assert_eq!(drain(&mut q), ["c1", "c2", "c3"]);
    }
}
