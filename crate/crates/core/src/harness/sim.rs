//! Deterministic virtual-time runs: an in-memory hub, scripted clients and
//! FIFO links with latency and jitter, driven by one event queue.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::client::{ClientLog, ClientModel};
use super::report::{build_report, HubSide, RunOutcome};
use super::scenario::{Scenario, Step};
use crate::hub::{ConnId, HubCore, Output};

#[derive(Debug)]
enum Event {
    Join(usize),
    Step(usize, usize),
    Ping(usize),
    ToHub(usize, String),
    ToClient(usize, String),
    ClosedByHub(usize),
    LeftHub(usize),
    Heartbeat,
    ClockTick,
}

struct Link {
    up_free_ms: u64,
    down_free_ms: u64,
}

struct Sim<'a> {
    scenario: &'a Scenario,
    now: u64,
    order: u64,
    queue: BTreeMap<(u64, u64), Event>,
    rng: ChaCha8Rng,
    core: HubCore,
    clients: Vec<ClientModel>,
    schedules: Vec<Vec<(u64, Step)>>,
    links: Vec<Link>,
    clock_scheduled: Option<u64>,
    hub_rtts: Vec<crate::hub::RttEstimate>,
}

fn conn_of(client: usize) -> ConnId {
    client as ConnId + 1
}

impl Sim<'_> {
    fn at(&mut self, t: u64, e: Event) {
        self.queue.insert((t, self.order), e);
        self.order += 1;
    }

    fn one_way(&mut self, client: usize) -> u64 {
        let jitter = match self.scenario.jitter_ms {
            0 => 0,
            j => self.rng.gen_range(0..=j),
        };
        self.scenario.latency_ms + self.scenario.clients[client].delay_ms + jitter
    }

    fn send_up(&mut self, client: usize, e: Event) {
        let d = self.one_way(client);
        let t = (self.now + d).max(self.links[client].up_free_ms);
        self.links[client].up_free_ms = t;
        self.at(t, e);
    }

    fn send_down(&mut self, client: usize, e: Event) {
        let d = self.one_way(client);
        let t = (self.now + d).max(self.links[client].down_free_ms);
        self.links[client].down_free_ms = t;
        self.at(t, e);
    }

    fn send_to_hub(&mut self, client: usize, frames: Vec<String>) {
        for f in frames {
            self.send_up(client, Event::ToHub(client, f));
        }
    }

    fn flush_hub(&mut self) {
        for out in self.core.take_outputs() {
            match out {
                Output::Frame { conn, frame, .. } => {
                    let client = (conn - 1) as usize;
                    self.send_down(client, Event::ToClient(client, frame.to_string()));
                }
                Output::Close { conn } => {
                    let client = (conn - 1) as usize;
                    self.send_down(client, Event::ClosedByHub(client));
                }
            }
        }
        if let Some(d) = self.core.clock_deadline() {
            if self.clock_scheduled != Some(d) && d <= self.scenario.duration_ms {
                self.clock_scheduled = Some(d);
                self.at(d, Event::ClockTick);
            }
        }
    }

    fn handle(&mut self, e: Event) {
        let s = self.scenario;
        match e {
            Event::Join(c) => {
                let hello = self.clients[c].hello(self.now);
                self.send_to_hub(c, vec![hello]);
                if s.ping_interval_ms > 0 {
                    let first = self.now + s.ping_interval_ms;
                    if first <= s.duration_ms {
                        self.at(first, Event::Ping(c));
                    }
                }
            }
            Event::Step(c, i) => {
                let step = self.schedules[c][i].1.clone();
                let was_open = !self.clients[c].is_closed();
                let frames = self.clients[c].step(&step, self.now);
                self.send_to_hub(c, frames);
                if step == Step::Disconnect && was_open {
                    self.send_up(c, Event::LeftHub(c));
                }
            }
            Event::Ping(c) => {
                if let Some(f) = self.clients[c].ping(self.now) {
                    self.send_to_hub(c, vec![f]);
                }
                let next = self.now + s.ping_interval_ms;
                if next <= s.duration_ms && !self.clients[c].is_closed() {
                    self.at(next, Event::Ping(c));
                }
            }
            Event::ToHub(c, text) => {
                self.core.on_frame(conn_of(c), &text, self.now);
                self.flush_hub();
            }
            Event::ToClient(c, text) => {
                let replies = self.clients[c].receive(&text, self.now);
                self.send_to_hub(c, replies);
            }
            Event::ClosedByHub(c) => self.clients[c].closed(self.now),
            Event::LeftHub(c) => {
                self.core.on_disconnect(conn_of(c));
                self.flush_hub();
            }
            Event::Heartbeat => {
                let report = self.core.heartbeat_tick(self.now);
                self.hub_rtts.extend(report.rtts);
                self.flush_hub();
                let next = self.now + s.hub.heartbeat_ms;
                if next <= s.duration_ms {
                    self.at(next, Event::Heartbeat);
                }
            }
            Event::ClockTick => {
                self.clock_scheduled = None;
                self.core.clock_tick(self.now);
                self.flush_hub();
            }
        }
    }
}

/// Runs `scenario` in virtual time. The same scenario and seed always give
/// the same outcome.
pub fn run_virtual(scenario: &Scenario) -> RunOutcome {
    let mut core = HubCore::new(scenario.hub.session_config(scenario.seed))
        .expect("scenario surfaces were validated");
    core.enable_journal();
    let clients: Vec<ClientModel> = scenario
        .clients
        .iter()
        .enumerate()
        .map(|(i, c)| ClientModel::new(c.clone(), client_seed(scenario.seed, i)))
        .collect();
    let schedules: Vec<_> = scenario.clients.iter().map(|c| c.schedule()).collect();
    let mut sim = Sim {
        scenario,
        now: 0,
        order: 0,
        queue: BTreeMap::new(),
        rng: ChaCha8Rng::seed_from_u64(scenario.seed ^ 0x6c69_6e6b),
        core,
        clients,
        links: (0..scenario.clients.len())
            .map(|_| Link {
                up_free_ms: 0,
                down_free_ms: 0,
            })
            .collect(),
        schedules,
        clock_scheduled: None,
        hub_rtts: Vec::new(),
    };
    for (i, c) in scenario.clients.iter().enumerate() {
        sim.at(c.join_ms, Event::Join(i));
        for j in 0..sim.schedules[i].len() {
            let t = sim.schedules[i][j].0;
            sim.at(t.max(c.join_ms), Event::Step(i, j));
        }
    }
    if scenario.hub.heartbeat_ms <= scenario.duration_ms {
        sim.at(scenario.hub.heartbeat_ms, Event::Heartbeat);
    }
    while let Some(((t, _), e)) = sim.queue.pop_first() {
        sim.now = t;
        sim.handle(e);
    }

    let hub = HubSide {
        stats: Some(sim.core.stats()),
        rtts: sim.hub_rtts,
        state: Some(sim.core.state().clone()),
        journal: sim.core.journal().to_vec(),
    };
    let logs: Vec<ClientLog> = sim.clients.into_iter().map(ClientModel::into_log).collect();
    let max_delay = scenario.clients.iter().map(|c| c.delay_ms).max().unwrap_or(0);
    let grace = 2 * (scenario.latency_ms + scenario.jitter_ms + max_delay) + 1;
    build_report(scenario, &logs, &hub, grace)
}

pub(crate) fn client_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(index as u64 + 1)
}
