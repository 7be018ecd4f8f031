use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::channel::{ms_to_us, ChannelConfig, DatagramFate, DropRule, ReliableChannel, UnreliableChannel};
use super::queue::EventQueue;
use super::scenario::{Action, Assertion, PeerName, Scenario, ShapeName};
use super::{inject_loss_pattern, ScenarioError};
use crate::geometry::{SimTransform, Vec3};
use crate::mesh::grid_mesh;
use crate::protocol::POINTER_FRAME_LEN;
use crate::replica::{run_frames, synth_capture, PipelineConfig, StageSet, SynthParams, SynthShape};
use crate::session::dump::{canonical_json, diff_json};
use crate::session::{Outgoing, Peer, Role, SessionEvent};

/// Overrides applied on top of the scenario's own settings.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub loss: Option<f64>,
    pub latency_ms: Option<f64>,
    pub jitter_ms: Option<f64>,
    /// Explicit datagram drops, keyed by the sending peer.
    pub drop_rules: Vec<(PeerName, DropRule)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssertionFailure {
    pub index: usize,
    pub check: String,
    pub diff: Vec<String>,
}

#[derive(Debug)]
pub struct SimOutcome {
    pub ar: Peer,
    pub vr: Peer,
    /// One JSON object per line; no wall-clock values.
    pub log: Vec<String>,
    pub failures: Vec<AssertionFailure>,
    pub objects: BTreeMap<String, u32>,
    pub cutouts: BTreeMap<String, u16>,
    /// Virtual time of the last processed event.
    pub end_us: u64,
}

impl SimOutcome {
    pub fn peer(&self, role: Role) -> &Peer {
        match role {
            Role::Ar => &self.ar,
            Role::Vr => &self.vr,
        }
    }

    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn log_text(&self) -> String {
        self.log.iter().flat_map(|l| [l.as_str(), "\n"]).collect()
    }

    /// Canonical JSON dump of one peer's full state.
    pub fn dump(&self, role: Role) -> String {
        canonical_json(&self.peer(role).dump())
    }

    pub fn ensure_passed(self) -> Result<SimOutcome, ScenarioError> {
        if self.failures.is_empty() {
            Ok(self)
        } else {
            Err(ScenarioError::AssertionFailed(self.failures))
        }
    }
}

pub fn run(scenario: &Scenario) -> Result<SimOutcome, ScenarioError> {
    run_with(scenario, &RunOptions::default())
}

/// Runs every action, drains the network, lets each peer that ever pointed
/// send one final datagram (exempt from random loss), drains again and
/// evaluates the assertions.
pub fn run_with(scenario: &Scenario, options: &RunOptions) -> Result<SimOutcome, ScenarioError> {
    scenario.validate()?;
    let seed = options.seed.unwrap_or(scenario.seed);
    let net = &scenario.network;
    let latency = options.latency_ms.unwrap_or(net.latency_ms);
    let base = ChannelConfig {
        latency_mean_ms: latency,
        latency_jitter_ms: options.jitter_ms.unwrap_or(net.jitter_ms).min(latency),
        loss_rate: options.loss.unwrap_or(net.loss),
        reorder_rate: net.reorder,
        rng_seed: 0,
    };
    base.validate().map_err(ScenarioError::Invalid)?;
    let cfg = |stream: u64| ChannelConfig { rng_seed: mix(seed, stream), ..base };

    let mut datagram = [UnreliableChannel::new(cfg(0)), UnreliableChannel::new(cfg(1))];
    for (peer, rule) in &options.drop_rules {
        let i = peer.role().peer_id() as usize;
        let ch = datagram[i].clone();
        datagram[i] = inject_loss_pattern(ch, rule.clone());
    }
    let mut sim = Sim {
        peers: [Peer::new(Role::Ar), Peer::new(Role::Vr)],
        datagram,
        stream: [ReliableChannel::new(cfg(2)), ReliableChannel::new(cfg(3))],
        queue: EventQueue::new(),
        log: Vec::new(),
        objects: BTreeMap::new(),
        cutouts: BTreeMap::new(),
        frames_sent: [0; 2],
        seed,
        now: 0,
    };

    for (i, a) in scenario.actions.iter().enumerate() {
        sim.queue.push(ms_to_us(a.t_ms), Event::Action(i));
    }
    sim.drain(scenario)?;
    for role in [Role::Ar, Role::Vr] {
        if sim.peer(role).last_sent_pointer().is_some() {
            sim.peer_mut(role).send_pointer();
            sim.pump(role, true);
        }
    }
    sim.drain(scenario)?;

    let failures = scenario
        .assertions
        .iter()
        .enumerate()
        .filter_map(|(index, a)| {
            let diff = sim.check(a);
            (!diff.is_empty()).then(|| AssertionFailure { index, check: check_name(a), diff })
        })
        .collect();
    let [ar, vr] = sim.peers;
    Ok(SimOutcome { ar, vr, log: sim.log, failures, objects: sim.objects, cutouts: sim.cutouts, end_us: sim.now })
}

fn mix(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn check_name(a: &Assertion) -> String {
    serde_json::to_value(a).ok().and_then(|v| v.get("check").and_then(Value::as_str).map(String::from)).unwrap_or_default()
}

/// `owner:ordinal@attachment` for every annotation a peer holds.
pub(crate) fn annotation_set(peer: &Peer) -> BTreeSet<String> {
    peer.annotations().map(|a| format!("{}:{}@{}", a.id.owner, a.id.ordinal, a.attachment.label())).collect()
}

fn digest(bytes: &[u8]) -> String {
    hex::encode(&Sha256::digest(bytes)[..8])
}

fn peer_name(role: Role) -> &'static str {
    role.name()
}

#[derive(Debug)]
enum Event {
    Action(usize),
    Datagram { to: Role, id: u64, bytes: [u8; POINTER_FRAME_LEN] },
    Segment { to: Role, frame: u64, bytes: Vec<u8> },
}

struct Sim {
    peers: [Peer; 2],
    /// Indexed by sender peer id.
    datagram: [UnreliableChannel; 2],
    stream: [ReliableChannel; 2],
    queue: EventQueue<Event>,
    log: Vec<String>,
    objects: BTreeMap<String, u32>,
    cutouts: BTreeMap<String, u16>,
    frames_sent: [u64; 2],
    seed: u64,
    now: u64,
}

impl Sim {
    fn peer(&self, role: Role) -> &Peer {
        &self.peers[role.peer_id() as usize]
    }

    fn peer_mut(&mut self, role: Role) -> &mut Peer {
        &mut self.peers[role.peer_id() as usize]
    }

    fn record(&mut self, mut entry: Value) {
        entry["t"] = json!(self.now);
        self.log.push(entry.to_string());
    }

    fn drain(&mut self, scenario: &Scenario) -> Result<(), ScenarioError> {
        while let Some((at, event)) = self.queue.pop() {
            self.now = at;
            match event {
                Event::Action(i) => {
                    let a = &scenario.actions[i];
                    let role = a.peer.role();
                    self.record(json!({ "kind": "action", "peer": peer_name(role), "action": a.action }));
                    match self.act(role, &a.action) {
                        Ok(events) => self.record_events(role, events),
                        Err(ActError::Session(e)) => {
                            self.record(json!({ "kind": "action-error", "peer": peer_name(role), "error": e }))
                        }
                        Err(ActError::Scenario(e)) => return Err(e),
                    }
                    self.pump(role, false);
                }
                Event::Datagram { to, id, bytes } => {
                    self.record(json!({ "kind": "deliver", "channel": "datagram", "to": peer_name(to), "id": id }));
                    let events = self.peer_mut(to).receive_datagram(&bytes);
                    self.record_events(to, events);
                    self.pump(to, false);
                }
                Event::Segment { to, frame, bytes } => {
                    self.record(json!({
                        "kind": "deliver", "channel": "stream", "to": peer_name(to), "frame": frame, "len": bytes.len(),
                    }));
                    let events = self.peer_mut(to).receive_stream(&bytes);
                    self.record_events(to, events);
                    self.pump(to, false);
                }
            }
        }
        Ok(())
    }

    /// Moves everything in `role`'s outbox onto the links.
    fn pump(&mut self, role: Role, exempt_random: bool) {
        let from = role.peer_id() as usize;
        let to = role.other();
        for out in self.peer_mut(role).take_outgoing() {
            match out {
                Outgoing::Datagram(bytes) => {
                    let id = self.datagram[from].sent();
                    let fate = self.datagram[from].send(self.now, &bytes, exempt_random);
                    let (fate_name, at) = match fate {
                        DatagramFate::DeliverAt(at) => ("deliver", Some(at)),
                        DatagramFate::LostRandom => ("lost-random", None),
                        DatagramFate::LostByRule => ("lost-rule", None),
                    };
                    self.record(json!({
                        "kind": "send", "channel": "datagram", "from": peer_name(role), "id": id,
                        "digest": digest(&bytes), "fate": fate_name, "at": at,
                    }));
                    if let Some(at) = at {
                        self.queue.push(at, Event::Datagram { to, id, bytes });
                    }
                }
                Outgoing::Frame(bytes) => {
                    let frame = self.frames_sent[from];
                    self.frames_sent[from] += 1;
                    let segments = self.stream[from].send(self.now, &bytes);
                    self.record(json!({
                        "kind": "send", "channel": "stream", "from": peer_name(role), "frame": frame,
                        "len": bytes.len(), "digest": digest(&bytes), "at": segments.first().map(|s| s.0),
                    }));
                    for (at, seg) in segments {
                        self.queue.push(at, Event::Segment { to, frame, bytes: seg });
                    }
                }
            }
        }
    }

    fn record_events(&mut self, role: Role, events: Vec<SessionEvent>) {
        for e in events {
            let detail = match e {
                SessionEvent::PointerAccepted { from, seq } => json!({ "type": "pointer-accepted", "from": from, "seq": seq }),
                SessionEvent::PointerDropped { reason } => json!({ "type": "pointer-dropped", "reason": reason }),
                SessionEvent::Stroke { owner, event } => {
                    json!({ "type": "stroke", "owner": owner, "event": format!("{event:?}") })
                }
                SessionEvent::Annotation(change) => json!({ "type": "annotation", "change": format!("{change:?}") }),
                SessionEvent::Applied { message, sender } => {
                    json!({ "type": "applied", "message": message, "sender": sender })
                }
                SessionEvent::Rejected { message, sender, reason } => {
                    json!({ "type": "rejected", "message": message, "sender": sender, "reason": reason })
                }
                SessionEvent::FrameDropped { reason } => json!({ "type": "frame-dropped", "reason": reason }),
            };
            self.record(json!({ "kind": "event", "peer": peer_name(role), "event": detail }));
        }
    }

    fn object_id(&self, label: &str) -> Result<u32, ScenarioError> {
        self.objects.get(label).copied().ok_or_else(|| ScenarioError::UnknownLabel { kind: "object", label: label.into() })
    }

    fn cutout_id(&self, label: &str) -> Result<u16, ScenarioError> {
        self.cutouts.get(label).copied().ok_or_else(|| ScenarioError::UnknownLabel { kind: "cutout", label: label.into() })
    }

    fn act(&mut self, role: Role, action: &Action) -> Result<Vec<SessionEvent>, ActError> {
        let v = |a: [f64; 3]| Vec3::from(a);
        Ok(match action {
            Action::SetAlignment { pose } => {
                let t = pose.to_transform()?;
                self.peer_mut(role).set_alignment(t);
                Vec::new()
            }
            Action::PublishMesh { mesh } => {
                let m = grid_mesh(mesh.chunk, v(mesh.origin), v(mesh.u), v(mesh.v), mesh.cells[0], mesh.cells[1], mesh.color);
                self.peer_mut(role).publish_mesh(&m)?
            }
            Action::RemoveMesh { chunk } => self.peer_mut(role).remove_mesh(*chunk)?,
            Action::PointerMove { origin, direction } => self.peer_mut(role).point(v(*origin), v(*direction)),
            Action::DrawStart => self.peer_mut(role).begin_stroke(),
            Action::DrawStop => self.peer_mut(role).end_stroke(),
            Action::Undo => self.peer_mut(role).undo_annotation()?,
            Action::Flush => self.peer_mut(role).send_pointer(),
            Action::Spawn { object, kind, pose, properties } => {
                if self.objects.contains_key(object) {
                    return Err(ScenarioError::Invalid(format!("object label {object:?} reused")).into());
                }
                let (kind, pose) = (kind.to_kind()?, pose.to_transform()?);
                let id = self.peer_mut(role).spawn_object(kind, &pose, properties.apply(Default::default()))?;
                self.objects.insert(object.clone(), id);
                Vec::new()
            }
            Action::Grab { object } => {
                let id = self.object_id(object)?;
                self.peer_mut(role).grab(id)?
            }
            Action::Release { object } => {
                let id = self.object_id(object)?;
                self.peer_mut(role).release(id)?
            }
            Action::MoveObject { object, pose } => {
                let (id, pose) = (self.object_id(object)?, pose.to_transform()?);
                self.peer_mut(role).move_object(id, &pose)?
            }
            Action::MoveObjectInCutout { object, cutout, pose } => {
                let (id, c, pose) = (self.object_id(object)?, self.cutout_id(cutout)?, pose.to_transform()?);
                self.peer_mut(role).move_object_in_cutout(id, c, &pose)?
            }
            Action::EditObject { object, properties } => {
                let id = self.object_id(object)?;
                let peer = self.peer_mut(role);
                let base = peer.object(id).map(|o| o.properties).unwrap_or_default();
                peer.edit_object(id, properties.apply(base))?
            }
            Action::Despawn { object } => {
                let id = self.object_id(object)?;
                self.peer_mut(role).despawn(id)?
            }
            Action::CreateCutout { cutout, apex, points } => {
                if self.cutouts.contains_key(cutout) {
                    return Err(ScenarioError::Invalid(format!("cutout label {cutout:?} reused")).into());
                }
                let id = self.peer_mut(role).create_cutout(v(*apex), points.map(v))?;
                self.cutouts.insert(cutout.clone(), id);
                Vec::new()
            }
            Action::TransformCutout { cutout, pose } => {
                let (id, pose) = (self.cutout_id(cutout)?, pose.to_transform()?);
                self.peer_mut(role).transform_cutout(id, &pose)?
            }
            Action::Activate { cutout } => {
                let id = self.cutout_id(cutout)?;
                self.peer_mut(role).activate_cutout(id)?
            }
            Action::Deactivate { cutout } => {
                let id = self.cutout_id(cutout)?;
                self.peer_mut(role).deactivate_cutout(id)?
            }
            Action::ScanReplica { replica, shape, frames, voxel_mm } => {
                let shape = match shape {
                    ShapeName::Sphere => SynthShape::Sphere,
                    ShapeName::Box => SynthShape::Box,
                };
                let mut params = SynthParams { seed: self.seed, ..SynthParams::new(shape) };
                if let Some(n) = frames {
                    params.frames = *n;
                }
                let (manifest, captured) = synth_capture(&params);
                let mut config = PipelineConfig::default();
                if let Some(mm) = voxel_mm {
                    config.voxel_size = mm / 1000.0;
                }
                let out = match run_frames(&captured, &manifest.plane_seed, &StageSet::default(), &config) {
                    Ok(out) => out,
                    Err(e) => return Err(ActError::Session(e.to_string())),
                };
                self.record(json!({
                    "kind": "replica-scanned", "peer": peer_name(role), "replica": replica,
                    "vertices": out.mesh.vertices().len(), "triangles": out.mesh.triangles().len(),
                    "obj-digest": digest(&out.obj),
                }));
                self.peer_mut(role).announce_replica(*replica, out.obj)?
            }
        })
    }

    /// Differences between the expectation and the final state; empty on
    /// success.
    fn check(&self, a: &Assertion) -> Vec<String> {
        let peers = |p: &Option<PeerName>| -> Vec<Role> {
            match p {
                Some(p) => vec![p.role()],
                None => vec![Role::Ar, Role::Vr],
            }
        };
        let mut diff = Vec::new();
        match a {
            Assertion::Converged { tolerance } => {
                diff = diff_json(&self.peers[0].shared_state(), &self.peers[1].shared_state(), *tolerance);
            }
            Assertion::AnnotationSets => {
                let [a, b] = [&self.peers[0], &self.peers[1]].map(annotation_set);
                for x in a.difference(&b) {
                    diff.push(format!("only on ar: {x}"));
                }
                for x in b.difference(&a) {
                    diff.push(format!("only on vr: {x}"));
                }
            }
            Assertion::PointerSynced => {
                for role in [Role::Ar, Role::Vr] {
                    let sent = self.peer(role.other()).last_sent_pointer();
                    let seen = self.peer(role).remote_pointer();
                    if sent != seen {
                        diff.push(format!("{}: remote pointer {seen:?} != last sent {sent:?}", role.name()));
                    }
                }
            }
            Assertion::AnnotationCount { peer, count } => {
                for role in peers(peer) {
                    let n = self.peer(role).annotation_count();
                    if n != *count {
                        diff.push(format!("{}: {n} annotations, expected {count}", role.name()));
                    }
                }
            }
            Assertion::ObjectPose { object, peer, pose, tolerance } => match (self.objects.get(object), pose.to_transform()) {
                (Some(&id), Ok(expected)) => {
                    for role in peers(peer) {
                        diff.extend(self.pose_diff(role, id, &expected, *tolerance));
                    }
                }
                (None, _) => diff.push(format!("unknown object {object:?}")),
                (_, Err(e)) => diff.push(e.to_string()),
            },
            Assertion::ObjectViaCutout { object, cutout, peer, pose, tolerance } => {
                match (self.objects.get(object), self.cutouts.get(cutout), pose.to_transform()) {
                    (Some(&id), Some(&cid), Ok(in_copy)) => {
                        for role in peers(peer) {
                            match self.peer(role).cutout(cid) {
                                Ok(c) => {
                                    let expected = c.source_frame.compose(&c.copy_frame.inverse()).compose(&in_copy);
                                    diff.extend(self.pose_diff(role, id, &expected, *tolerance));
                                }
                                Err(e) => diff.push(format!("{}: {e}", role.name())),
                            }
                        }
                    }
                    (None, _, _) => diff.push(format!("unknown object {object:?}")),
                    (_, None, _) => diff.push(format!("unknown cutout {cutout:?}")),
                    (_, _, Err(e)) => diff.push(e.to_string()),
                }
            }
            Assertion::ObjectProperty { object, peer, gravity, color, scale } => match self.objects.get(object) {
                Some(&id) => {
                    for role in peers(peer) {
                        match self.peer(role).object(id) {
                            Some(o) => {
                                let p = o.properties;
                                if gravity.is_some_and(|g| g != p.gravity_enabled) {
                                    diff.push(format!("{}: gravity {}", role.name(), p.gravity_enabled));
                                }
                                if color.is_some_and(|c| c != p.material_color) {
                                    diff.push(format!("{}: color {:?}", role.name(), p.material_color));
                                }
                                if scale.is_some_and(|s| s != p.uniform_scale) {
                                    diff.push(format!("{}: scale {}", role.name(), p.uniform_scale));
                                }
                            }
                            None => diff.push(format!("{}: object {object:?} missing", role.name())),
                        }
                    }
                }
                None => diff.push(format!("unknown object {object:?}")),
            },
            Assertion::ObjectAbsent { object } => match self.objects.get(object) {
                Some(&id) => {
                    for role in [Role::Ar, Role::Vr] {
                        if self.peer(role).object(id).is_some() {
                            diff.push(format!("{}: object {object:?} still present", role.name()));
                        }
                    }
                }
                None => diff.push(format!("unknown object {object:?}")),
            },
            Assertion::CutoutActive { cutout, active } => match self.cutouts.get(cutout) {
                Some(&cid) => {
                    for role in [Role::Ar, Role::Vr] {
                        match self.peer(role).cutout(cid) {
                            Ok(c) if c.active == *active => {}
                            Ok(c) => diff.push(format!("{}: active = {}", role.name(), c.active)),
                            Err(e) => diff.push(format!("{}: {e}", role.name())),
                        }
                    }
                }
                None => diff.push(format!("unknown cutout {cutout:?}")),
            },
            Assertion::AvatarPosition { head, position, tolerance } => match head.to_transform() {
                Ok(head) => {
                    let shown = self.peer(Role::Ar).avatar_pose(&head).translation;
                    let err = (shown - Vec3::from(*position)).norm();
                    if !(err <= *tolerance) {
                        diff.push(format!("avatar at {:?}, expected {position:?} (error {err:.3e})", shown.as_slice()));
                    }
                }
                Err(e) => diff.push(e.to_string()),
            },
            Assertion::ReplicaPresent { replica, min_triangles } => {
                for role in [Role::Ar, Role::Vr] {
                    match self.peer(role).replicas().get(replica) {
                        Some(m) if m.triangles().len() >= *min_triangles => {}
                        Some(m) => diff.push(format!("{}: {} triangles", role.name(), m.triangles().len())),
                        None => diff.push(format!("{}: replica {replica} missing", role.name())),
                    }
                }
            }
        }
        diff
    }

    fn pose_diff(&self, role: Role, id: u32, expected: &SimTransform, tol: f64) -> Option<String> {
        match self.peer(role).object(id) {
            Some(o) => {
                let d = o.transform.distance(expected);
                (!(d <= tol)).then(|| format!("{}: object {id} pose {:?} deviates by {d:.3e}", role.name(), o.transform))
            }
            None => Some(format!("{}: object {id} missing", role.name())),
        }
    }
}

enum ActError {
    Session(String),
    Scenario(ScenarioError),
}

impl From<ScenarioError> for ActError {
    fn from(e: ScenarioError) -> Self {
        ActError::Scenario(e)
    }
}

impl From<crate::session::SessionError> for ActError {
    fn from(e: crate::session::SessionError) -> Self {
        ActError::Session(e.to_string())
    }
}
