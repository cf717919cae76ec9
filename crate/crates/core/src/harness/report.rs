//! Run reports and the counting oracle behind their verdicts.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::client::{ClientLog, SubOp};
use super::scenario::{Mode, Scenario};
use crate::hub::{HubStats, RttEstimate};
use crate::protocol::{Capability, Topic, TopicPattern, UnitId};
use crate::surface::{Mutation, SharedState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RttStats {
    pub samples: usize,
    pub min_ms: f64,
    pub median_ms: f64,
    pub p95_ms: f64,
    pub max_ms: f64,
}

impl RttStats {
    /// Nearest-rank statistics; `None` for an empty sample.
    pub fn from_samples(samples: &[f64]) -> Option<Self> {
        if samples.is_empty() {
            return None;
        }
        let mut v = samples.to_vec();
        v.sort_by(f64::total_cmp);
        let rank = |q: f64| v[((q * v.len() as f64).ceil() as usize).clamp(1, v.len()) - 1];
        Some(Self {
            samples: v.len(),
            min_ms: v[0],
            median_ms: rank(0.5),
            p95_ms: rank(0.95),
            max_ms: v[v.len() - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UnitReport {
    pub name: String,
    pub unit: Option<UnitId>,
    pub sent: u64,
    pub received: u64,
    pub routed_received: u64,
    pub mutations_sent: u64,
    pub skipped_steps: u64,
    pub rtt: Option<RttStats>,
    pub evicted: bool,
    pub rejected: bool,
    pub disconnected: bool,
}

/// Frames one source published on one topic and what one receiver got.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DeliveryRow {
    pub source: String,
    pub receiver: String,
    pub topic: String,
    /// Frames the routing rules require to arrive.
    pub expected: u64,
    /// Frames published while the receiver's membership was changing; they
    /// may or may not arrive.
    pub uncertain: u64,
    pub received: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CapabilityFailure {
    pub unit: String,
    pub surface: String,
    pub missing: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct HubErrorRecord {
    pub unit: String,
    pub code: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Convergence {
    /// Units whose mirror was compared with the hub's state.
    pub compared: usize,
    pub revision: u64,
    pub converged: bool,
    pub diverged: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub scenario: String,
    pub mode: Mode,
    pub seed: u64,
    pub units: Vec<UnitReport>,
    /// Routed frames received, by source then receiver.
    pub delivery_matrix: BTreeMap<String, BTreeMap<String, u64>>,
    /// Routed frames received, by topic then receiver.
    pub topic_matrix: BTreeMap<String, BTreeMap<String, u64>>,
    pub deliveries: Vec<DeliveryRow>,
    pub rtt: Option<RttStats>,
    pub hub_rtt: Option<RttStats>,
    pub ordering_violations: u64,
    pub duplicates: u64,
    pub echoes: u64,
    pub unexpected: u64,
    pub sensor_loss: u64,
    pub control_loss: u64,
    pub capability_failures: Vec<CapabilityFailure>,
    pub hub_errors: Vec<HubErrorRecord>,
    pub convergence: Convergence,
    pub hub: Option<HubStats>,
    pub violations: Vec<String>,
    pub passed: bool,
}

/// What the runner learned from the hub side.
#[derive(Debug, Clone)]
pub struct HubSide {
    pub stats: Option<HubStats>,
    pub rtts: Vec<RttEstimate>,
    /// Final state, when the hub could be asked for it.
    pub state: Option<SharedState>,
    pub journal: Vec<Mutation>,
}

/// A finished run: the report plus the raw material behind its
/// convergence verdict.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: RunReport,
    pub initial_state: SharedState,
    pub hub_state: Option<SharedState>,
    /// Mutations in the order the hub applied them.
    pub journal: Vec<Mutation>,
    /// Final mirror of every client still connected at the end, by name.
    pub mirrors: BTreeMap<String, SharedState>,
}

/// State with the playhead zeroed: the step advances on its own and a tick
/// may still be in flight when the run ends.
pub fn without_playhead(s: &SharedState) -> SharedState {
    let mut s = s.clone();
    s.transport.step = 0;
    s
}

fn display_name(log: &ClientLog) -> String {
    log.unit
        .as_ref()
        .map(|u| u.to_string())
        .unwrap_or_else(|| log.name.clone())
}

/// `(lo, hi, member_after)`: membership changed at some point in `[lo, hi]`.
type Transition = (u64, u64, bool);

/// Membership of `receiver` in the audience of `topic` over time.
fn transitions(log: &ClientLog, topic: &Topic) -> Vec<Transition> {
    let mut patterns: BTreeSet<TopicPattern> = BTreeSet::new();
    let mut active = false;
    let mut member = false;
    let mut out = Vec::new();
    for c in &log.subs {
        match &c.change {
            SubOp::Add(p) => {
                active = true;
                patterns.extend(p.iter().cloned());
            }
            SubOp::Remove(p) => {
                for x in p {
                    patterns.remove(x);
                }
            }
            SubOp::Leave => active = false,
        }
        let now = active && patterns.iter().any(|p| p.matches(topic));
        if now != member {
            out.push((c.lo_ms, c.hi_ms, now));
            member = now;
        }
    }
    out
}

fn classify(t: u64, transitions: &[Transition], grace: u64) -> Option<bool> {
    let mut member = false;
    for &(lo, hi, after) in transitions {
        if t + grace >= lo && t <= hi + grace {
            return None;
        }
        if t > hi {
            member = after;
        }
    }
    Some(member)
}

pub fn build_report(scenario: &Scenario, logs: &[ClientLog], hub: &HubSide, grace_ms: u64) -> RunOutcome {
    let names: BTreeMap<&str, String> = logs.iter().map(|l| (l.name.as_str(), display_name(l))).collect();
    let mut violations = Vec::new();

    let mut rows: BTreeMap<(String, String, String), DeliveryRow> = BTreeMap::new();
    let mut audience_cache: BTreeMap<(usize, Topic), Vec<Transition>> = BTreeMap::new();
    for source in logs {
        let Some(source_unit) = &source.unit else { continue };
        for sent in &source.sent {
            for (ri, receiver) in logs.iter().enumerate() {
                if std::ptr::eq(receiver, source) || receiver.unit.is_none() {
                    continue;
                }
                let tr = audience_cache
                    .entry((ri, sent.topic.clone()))
                    .or_insert_with(|| transitions(receiver, &sent.topic));
                let verdict = classify(sent.t_ms, tr, grace_ms);
                if verdict == Some(false) {
                    continue;
                }
                let row = rows
                    .entry((source_unit.to_string(), display_name(receiver), sent.topic.to_string()))
                    .or_insert_with(|| DeliveryRow {
                        source: source_unit.to_string(),
                        receiver: display_name(receiver),
                        topic: sent.topic.to_string(),
                        expected: 0,
                        uncertain: 0,
                        received: 0,
                    });
                match verdict {
                    Some(true) => row.expected += 1,
                    _ => row.uncertain += 1,
                }
            }
        }
    }
    for receiver in logs {
        for ((src, topic), n) in &receiver.received {
            rows.entry((src.to_string(), display_name(receiver), topic.to_string()))
                .or_insert_with(|| DeliveryRow {
                    source: src.to_string(),
                    receiver: display_name(receiver),
                    topic: topic.to_string(),
                    expected: 0,
                    uncertain: 0,
                    received: 0,
                })
                .received += n;
        }
    }

    let (mut sensor_loss, mut control_loss, mut unexpected) = (0, 0, 0);
    let mut delivery_matrix: BTreeMap<String, BTreeMap<String, u64>> = BTreeMap::new();
    let mut topic_matrix: BTreeMap<String, BTreeMap<String, u64>> = BTreeMap::new();
    for row in rows.values() {
        let sensor = row.topic.starts_with("sensor/");
        if row.received < row.expected {
            if sensor {
                sensor_loss += row.expected - row.received;
            } else {
                control_loss += row.expected - row.received;
            }
        }
        if row.received > row.expected + row.uncertain {
            unexpected += row.received - row.expected - row.uncertain;
        }
        if row.received > 0 {
            *delivery_matrix
                .entry(row.source.clone())
                .or_default()
                .entry(row.receiver.clone())
                .or_default() += row.received;
            *topic_matrix
                .entry(row.topic.clone())
                .or_default()
                .entry(row.receiver.clone())
                .or_default() += row.received;
        }
    }

    let sum = |f: fn(&ClientLog) -> u64| logs.iter().map(f).sum::<u64>();
    let ordering_violations = sum(|l| l.ordering_violations);
    let duplicates = sum(|l| l.duplicates);
    let echoes = sum(|l| l.echoes);

    let mut capability_failures = Vec::new();
    let mut hub_errors = Vec::new();
    for (log, spec) in logs.iter().zip(&scenario.clients) {
        let local = spec.surface.as_ref().and_then(|name| {
            let surface = scenario.hub.surfaces.iter().find(|s| &s.name == name)?;
            crate::protocol::validate_capabilities(&spec.caps, surface).err()
        });
        let mut reported: Option<Vec<String>> = None;
        for e in &log.errors {
            if e.code == "missing-capabilities" {
                reported = Some(e.detail.split(',').map(str::to_owned).collect());
            } else {
                hub_errors.push(HubErrorRecord {
                    unit: names[log.name.as_str()].clone(),
                    code: e.code.clone(),
                    detail: e.detail.clone(),
                });
            }
        }
        let local_names = local
            .as_ref()
            .map(|m| m.iter().map(Capability::to_string).collect::<Vec<_>>());
        if let Some(missing) = &reported {
            capability_failures.push(CapabilityFailure {
                unit: names[log.name.as_str()].clone(),
                surface: spec.surface.clone().unwrap_or_default(),
                missing: missing.clone(),
            });
        }
        if log.welcomed_ms.is_some() && reported != local_names {
            violations.push(format!(
                "{}: hub reported missing capabilities {:?}, local check says {:?}",
                log.name, reported, local_names
            ));
        }
    }
    let rejected_ok = |code: &str| code == "session-full";
    for e in &hub_errors {
        if !rejected_ok(&e.code) {
            violations.push(format!("{}: hub error {}: {}", e.unit, e.code, e.detail));
        }
    }

    // without access to the hub, mirrors are compared with each other
    let reference = hub.state.as_ref().or_else(|| {
        logs.iter()
            .find(|l| !(l.evicted || l.disconnected || l.rejected))
            .and_then(|l| l.mirror.as_ref())
    });
    let hub_text = reference
        .map(|s| serde_json::to_string(&without_playhead(s)).expect("state serializes"))
        .unwrap_or_default();
    let mut mirrors = BTreeMap::new();
    let mut diverged = Vec::new();
    for log in logs {
        if log.evicted || log.disconnected || log.rejected {
            continue;
        }
        if let Some(m) = &log.mirror {
            let text = serde_json::to_string(&without_playhead(m)).expect("state serializes");
            if text != hub_text {
                diverged.push(names[log.name.as_str()].clone());
            }
            mirrors.insert(log.name.clone(), m.clone());
        }
    }
    let convergence = Convergence {
        compared: mirrors.len(),
        revision: reference.map_or(0, |s| s.revision),
        converged: diverged.is_empty(),
        diverged,
    };

    if ordering_violations > 0 {
        violations.push(format!("{ordering_violations} ordering violations"));
    }
    if duplicates > 0 {
        violations.push(format!("{duplicates} duplicate frames"));
    }
    if echoes > 0 {
        violations.push(format!("{echoes} frames echoed to their source"));
    }
    if unexpected > 0 {
        violations.push(format!("{unexpected} frames delivered outside their audience"));
    }
    if control_loss > 0 {
        violations.push(format!("{control_loss} control frames lost"));
    }
    if sensor_loss > 0 && !scenario.allow_sensor_loss {
        violations.push(format!("{sensor_loss} sensor frames lost"));
    }
    if !convergence.converged {
        violations.push(format!("mirrors diverged: {}", convergence.diverged.join(", ")));
    }
    let undecodable = sum(|l| l.undecodable);
    if undecodable > 0 {
        violations.push(format!("{undecodable} undecodable frames from the hub"));
    }

    let all_rtts: Vec<f64> = logs.iter().flat_map(|l| l.rtts_ms.iter().copied()).collect();
    let hub_rtts: Vec<f64> = hub.rtts.iter().map(|r| r.rtt_ms).collect();
    let units = logs
        .iter()
        .map(|l| UnitReport {
            name: l.name.clone(),
            unit: l.unit.clone(),
            sent: l.frames_sent,
            received: l.frames_received,
            routed_received: l.received.values().sum(),
            mutations_sent: l.mutations_sent,
            skipped_steps: l.skipped_steps,
            rtt: RttStats::from_samples(&l.rtts_ms),
            evicted: l.evicted,
            rejected: l.rejected,
            disconnected: l.disconnected,
        })
        .collect();

    let report = RunReport {
        scenario: scenario.name.clone(),
        mode: scenario.mode,
        seed: scenario.seed,
        units,
        delivery_matrix,
        topic_matrix,
        deliveries: rows.into_values().collect(),
        rtt: RttStats::from_samples(&all_rtts),
        hub_rtt: RttStats::from_samples(&hub_rtts),
        ordering_violations,
        duplicates,
        echoes,
        unexpected,
        sensor_loss,
        control_loss,
        capability_failures,
        hub_errors,
        convergence,
        hub: hub.stats,
        passed: violations.is_empty(),
        violations,
    };
    RunOutcome {
        report,
        initial_state: SharedState::new(
            &crate::surface::SessionLayout::from_surfaces(&scenario.hub.surfaces).expect("validated"),
        ),
        hub_state: hub.state.clone(),
        journal: hub.journal.clone(),
        mirrors,
    }
}

impl RunReport {
    /// Multi-line summary for terminals.
    pub fn human(&self) -> String {
        let mut out = format!(
            "scenario {} ({:?}, seed {}): {}\n",
            self.scenario,
            self.mode,
            self.seed,
            if self.passed { "PASS" } else { "FAIL" }
        );
        for u in &self.units {
            let mut flags = Vec::new();
            if u.evicted {
                flags.push("evicted");
            }
            if u.rejected {
                flags.push("rejected");
            }
            if u.disconnected {
                flags.push("disconnected");
            }
            out.push_str(&format!(
                "  {:<12} sent {:>6}  received {:>7}  routed {:>7}{}{}\n",
                u.unit.as_ref().map(|x| x.as_str()).unwrap_or(&u.name),
                u.sent,
                u.received,
                u.routed_received,
                u.rtt
                    .map(|r| format!("  rtt median {:.1} ms", r.median_ms))
                    .unwrap_or_default(),
                if flags.is_empty() { String::new() } else { format!("  [{}]", flags.join(", ")) },
            ));
        }
        let fmt_rtt = |r: &Option<RttStats>| match r {
            Some(r) => format!(
                "min {:.1} / median {:.1} / p95 {:.1} ms over {} samples",
                r.min_ms, r.median_ms, r.p95_ms, r.samples
            ),
            None => "no samples".into(),
        };
        out.push_str(&format!("  client rtt: {}\n", fmt_rtt(&self.rtt)));
        out.push_str(&format!("  hub rtt:    {}\n", fmt_rtt(&self.hub_rtt)));
        out.push_str(&format!(
            "  ordering violations {}, duplicates {}, echoes {}, unexpected {}, sensor loss {}, control loss {}\n",
            self.ordering_violations, self.duplicates, self.echoes, self.unexpected, self.sensor_loss, self.control_loss
        ));
        out.push_str(&format!(
            "  convergence: {} ({} mirrors at revision {})\n",
            if self.convergence.converged { "yes" } else { "NO" },
            self.convergence.compared,
            self.convergence.revision
        ));
        for c in &self.capability_failures {
            out.push_str(&format!(
                "  capability: {} cannot run {} (missing {})\n",
                c.unit,
                c.surface,
                c.missing.join(", ")
            ));
        }
        for v in &self.violations {
            out.push_str(&format!("  violation: {v}\n"));
        }
        out
    }
}
