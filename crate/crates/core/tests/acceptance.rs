//! Acceptance criteria, one PASS/FAIL line each. Every check compares the
//! library against an oracle written here or against a fixed expectation,
//! and enforces its own time budget. Exits non-zero if any criterion fails.

use std::collections::{BTreeSet, HashMap};
use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::Matrix4;
use nexus_core::geometry::{FisheyeModel, FisheyeSample, SimTransform, UnitQuat, Vec3};
use nexus_core::mesh::{
    parse_obj, select_triangles, write_obj, ColoredObjDocument, ObjVertex, Selection, SelectionFrustum, TriangleMesh,
    Vertex,
};
use nexus_core::protocol::{
    decode_pointer, decode_reliable, encode_pointer, encode_reliable, Envelope, FrameDecoder, ObjectKind,
    ObjectProperties, PointerDatagram, ReliableMessage, WireMesh, WireTransform,
};
use nexus_core::replica::{
    fit_plane_ransac, run_pipeline, save_capture, synth_capture, GroundTruth, PipelineConfig, PlaneModel, RansacParams,
    StageSet, SynthParams, SynthShape,
};
use nexus_core::session::{classify, Cutout, Peer, Role, StrokeEvent};
use nexus_core::sim::{run_with, Action, RunOptions, Scenario, SimOutcome};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde_json::Value;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn budget(start: Instant, seconds: f64) -> Result<f64, String> {
    let s = start.elapsed().as_secs_f64();
    ensure!(s < seconds, "took {s:.2} s, budget {seconds} s");
    Ok(s)
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn unit(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(StandardNormal.sample(rng), StandardNormal.sample(rng), StandardNormal.sample(rng));
        if v.norm() > 1e-3 {
            return v.normalize();
        }
    }
}

fn angle(a: &Vec3, b: &Vec3) -> f64 {
    a.cross(b).norm().atan2(a.dot(b))
}

fn scenario(name: &str) -> Scenario {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(format!("{name}.json"));
    Scenario::from_json(&std::fs::read_to_string(path).unwrap()).unwrap()
}

const SCENARIOS: [&str; 5] = ["drawing", "objects", "whiteboard", "replica", "bowling"];

// ---- 1. protocol ---------------------------------------------------------------

fn rand_f32(rng: &mut ChaCha8Rng) -> f32 {
    rng.random_range(-1000.0f32..1000.0)
}

fn rand_f32x3(rng: &mut ChaCha8Rng) -> [f32; 3] {
    [rand_f32(rng), rand_f32(rng), rand_f32(rng)]
}

fn rand_transform(rng: &mut ChaCha8Rng) -> WireTransform {
    WireTransform {
        position: rand_f32x3(rng),
        rotation: [0; 4].map(|_| rng.random_range(-1.0f32..1.0)),
        scale: rng.random_range(0.01f32..10.0),
    }
}

fn rand_props(rng: &mut ChaCha8Rng) -> ObjectProperties {
    ObjectProperties {
        gravity_enabled: rng.random(),
        material_color: [0; 3].map(|_| rng.random_range(0.0f32..1.0)),
        uniform_scale: rng.random_range(0.01f32..10.0),
    }
}

fn rand_kind(rng: &mut ChaCha8Rng) -> ObjectKind {
    match rng.random_range(0..6) {
        0 => ObjectKind::Cube,
        1 => ObjectKind::Sphere,
        2 => ObjectKind::Cylinder,
        3 => ObjectKind::Capsule,
        4 => ObjectKind::Plane,
        _ => ObjectKind::Replica(rng.random()),
    }
}

fn rand_message(rng: &mut ChaCha8Rng, tag: u8) -> ReliableMessage {
    match tag {
        1 => {
            let n = rng.random_range(1..30usize);
            let colored: bool = rng.random();
            ReliableMessage::MeshChunkUpsert(WireMesh {
                chunk_id: rng.random(),
                positions: (0..n).map(|_| rand_f32x3(rng)).collect(),
                colors: colored.then(|| (0..n).map(|_| rng.random()).collect()),
                triangles: (0..rng.random_range(0..40)).map(|_| [0; 3].map(|_| rng.random_range(0..n as u32))).collect(),
            })
        }
        2 => ReliableMessage::MeshChunkRemove { chunk_id: rng.random() },
        3 => ReliableMessage::ObjectSpawn {
            object_id: rng.random(),
            kind: rand_kind(rng),
            transform: rand_transform(rng),
            properties: rand_props(rng),
        },
        4 => ReliableMessage::ObjectTransform { object_id: rng.random(), object_seq: rng.random(), transform: rand_transform(rng) },
        5 => ReliableMessage::ObjectPropertyEdit { object_id: rng.random(), object_seq: rng.random(), properties: rand_props(rng) },
        6 => ReliableMessage::ObjectGrab { object_id: rng.random(), peer_id: rng.random() },
        7 => ReliableMessage::ObjectRelease { object_id: rng.random(), peer_id: rng.random() },
        8 => ReliableMessage::ObjectDespawn { object_id: rng.random() },
        9 => ReliableMessage::CutoutCreate {
            cutout_id: rng.random(),
            apex: rand_f32x3(rng),
            points: [0; 4].map(|_| rand_f32x3(rng)),
            source_frame: rand_transform(rng),
        },
        10 => ReliableMessage::CutoutTransform { cutout_id: rng.random(), copy_frame: rand_transform(rng) },
        11 => ReliableMessage::CutoutActivate { cutout_id: rng.random() },
        12 => ReliableMessage::CutoutDeactivate { cutout_id: rng.random() },
        13 => {
            let len = rng.random_range(0..200);
            ReliableMessage::ReplicaMeshAnnounce { replica_id: rng.random(), obj: (0..len).map(|_| rng.random()).collect() }
        }
        _ => unreachable!(),
    }
}

fn rand_datagram(rng: &mut ChaCha8Rng) -> PointerDatagram {
    let d = unit(rng);
    PointerDatagram {
        peer_id: rng.random(),
        send_seq: rng.random(),
        ray_origin: [0; 3].map(|_| rng.random_range(-50.0f32..50.0)),
        ray_direction: [d.x as f32, d.y as f32, d.z as f32],
        drawing: rng.random(),
        annotation_count: rng.random(),
        active_cutout_id: rng.random(),
    }
}

/// Polls until the decoder is drained; a poll that reports something must
/// consume bytes, so the loop is bounded by the buffered length.
fn drain(dec: &mut FrameDecoder) -> Result<Vec<Envelope>, String> {
    let mut out = Vec::new();
    for _ in 0..=dec.buffered() + 1 {
        let before = dec.buffered();
        match dec.poll() {
            Ok(None) => return Ok(out),
            Ok(Some(env)) => out.push(env),
            Err(_) => {}
        }
        ensure!(dec.buffered() < before, "decoder made no progress");
    }
    Err("decoder did not drain".into())
}

fn protocol_fidelity() -> Check {
    let start = Instant::now();
    let mut rng = rng(1);
    const N: usize = 10_000;

    for _ in 0..N {
        let d = rand_datagram(&mut rng);
        let back = decode_pointer(&encode_pointer(&d));
        ensure!(back == Ok(d), "pointer {d:?} decoded as {back:?}");
    }
    for tag in 1..=13u8 {
        let mut stream = Vec::new();
        let mut sent = Vec::with_capacity(N);
        for _ in 0..N {
            let env = Envelope { sender: rng.random(), message: rand_message(&mut rng, tag) };
            ensure!(env.message.tag() == tag, "generator produced tag {} for {tag}", env.message.tag());
            let bytes = encode_reliable(&env);
            let back = decode_reliable(&bytes);
            ensure!(back == Ok((env.clone(), bytes.len())), "{} did not round-trip: {back:?}", env.message.name());
            stream.extend_from_slice(&bytes);
            sent.push(env);
        }
        // The same messages as one stream, cut at random points.
        let mut dec = FrameDecoder::new();
        let mut received = Vec::new();
        let mut at = 0;
        while at < stream.len() {
            let end = (at + rng.random_range(1..512)).min(stream.len());
            dec.feed(&stream[at..end]);
            received.extend(drain(&mut dec)?);
            at = end;
        }
        ensure!(received == sent, "tag {tag}: stream decode differs");
    }
    let roundtrip_s = start.elapsed().as_secs_f64();

    // Fuzzing: random bytes and mutated valid encodings.
    let fuzz = Instant::now();
    let mut ar = Peer::new(Role::Ar);
    let mut vr = Peer::new(Role::Vr);
    for i in 0..20_000 {
        let mut bytes: Vec<u8> = if i % 2 == 0 {
            (0..rng.random_range(0..64)).map(|_| rng.random()).collect()
        } else {
            encode_pointer(&rand_datagram(&mut rng)).to_vec()
        };
        if !bytes.is_empty() && i % 2 == 1 {
            let k = rng.random_range(0..bytes.len());
            bytes[k] = rng.random();
            if rng.random_bool(0.5) {
                let sum = bytes[..31].iter().fold(0, |a, b| a ^ b);
                bytes[31] = sum;
            }
        }
        let _ = decode_pointer(&bytes);
        ar.receive_datagram(&bytes);
        vr.receive_datagram(&bytes);
    }
    for i in 0..20_000 {
        let mut bytes = if i % 2 == 0 {
            (0..rng.random_range(0..256)).map(|_| rng.random()).collect()
        } else {
            let tag = rng.random_range(1..=13);
            encode_reliable(&Envelope { sender: rng.random_range(0..2), message: rand_message(&mut rng, tag) })
        };
        for _ in 0..rng.random_range(0..4) {
            if bytes.is_empty() {
                break;
            }
            let k = rng.random_range(0..bytes.len());
            bytes[k] = rng.random();
        }
        let _ = decode_reliable(&bytes);
        let mut dec = FrameDecoder::new();
        dec.feed(&bytes);
        drain(&mut dec)?;
        ar.receive_stream(&bytes);
        vr.receive_stream(&bytes);
    }
    let fuzz_s = fuzz.elapsed().as_secs_f64();
    ensure!(fuzz_s < 5.0, "fuzzing took {fuzz_s:.2} s");
    Ok(format!(
        "{N} round-trips each for the pointer datagram and 13 reliable messages ({roundtrip_s:.2} s); 40000 fuzz inputs in {fuzz_s:.2} s"
    ))
}

// ---- 2. convergence at 0% loss ---------------------------------------------------

/// Structural equality with numbers compared within `tol`.
fn json_close(a: &Value, b: &Value, tol: f64, path: &str) -> Result<(), String> {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => {
            let (x, y) = (x.as_f64().unwrap(), y.as_f64().unwrap());
            ensure!((x - y).abs() <= tol, "{path}: {x} vs {y}");
            Ok(())
        }
        (Value::Array(x), Value::Array(y)) => {
            ensure!(x.len() == y.len(), "{path}: lengths {} vs {}", x.len(), y.len());
            x.iter().zip(y).enumerate().try_for_each(|(i, (x, y))| json_close(x, y, tol, &format!("{path}[{i}]")))
        }
        (Value::Object(x), Value::Object(y)) => {
            let kx: Vec<_> = x.keys().collect();
            let ky: Vec<_> = y.keys().collect();
            ensure!(kx == ky, "{path}: keys {kx:?} vs {ky:?}");
            x.iter().try_for_each(|(k, v)| json_close(v, &y[k], tol, &format!("{path}.{k}")))
        }
        _ => {
            ensure!(a == b, "{path}: {a} vs {b}");
            Ok(())
        }
    }
}

fn convergence_lossless() -> Check {
    let start = Instant::now();
    for name in SCENARIOS {
        let out = run_with(&scenario(name), &RunOptions { loss: Some(0.0), ..Default::default() })
            .map_err(|e| format!("{name}: {e}"))?;
        ensure!(out.passed(), "{name}: assertions failed: {:?}", out.failures);
        json_close(&out.ar.shared_state(), &out.vr.shared_state(), 1e-5, name)?;
    }
    let s = budget(start, 10.0)?;
    Ok(format!("5 scenarios, shared dumps agree within 1e-5 ({s:.2} s)"))
}

// ---- 3. convergence under loss -------------------------------------------------

fn annotation_set(p: &Peer) -> BTreeSet<(u8, u32, String)> {
    p.annotations().map(|a| (a.id.owner, a.id.ordinal, a.attachment.label())).collect()
}

fn convergence_lossy() -> Check {
    let start = Instant::now();
    let s = scenario("drawing");
    let mut annotations = 0;
    for seed in 0..50 {
        let opts = RunOptions {
            seed: Some(seed),
            loss: Some(0.05),
            latency_ms: Some(100.0),
            jitter_ms: Some(20.0),
            ..Default::default()
        };
        let out = run_with(&s, &opts).map_err(|e| format!("seed {seed}: {e}"))?;
        let (a, v) = (annotation_set(&out.ar), annotation_set(&out.vr));
        ensure!(a == v, "seed {seed}: annotation sets differ: {a:?} vs {v:?}");
        ensure!(!a.is_empty(), "seed {seed}: no annotations");
        ensure!(out.vr.remote_pointer() == out.ar.last_sent_pointer(), "seed {seed}: VR's view of the AR pointer is stale");
        ensure!(out.ar.remote_pointer() == out.vr.last_sent_pointer(), "seed {seed}: AR's view of the VR pointer is stale");
        annotations += a.len();
    }
    let secs = budget(start, 30.0)?;
    Ok(format!("50 seeds at 5% loss, 100±20 ms; {annotations} annotations matched, pointers synced ({secs:.2} s)"))
}

// ---- 4. annotation bytes -------------------------------------------------------

fn annotation_semantics() -> Check {
    let start = Instant::now();
    // Every (old, new) pair reachable by a step of at most 32 either way.
    let mut step: HashMap<(u8, u8), i32> = HashMap::new();
    for old in 0..=255u8 {
        for k in -32i32..=32 {
            let new = (old as i32 + k).rem_euclid(256) as u8;
            step.insert((old, new), k);
        }
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for old in 0..=255u8 {
        for new in 0..=255u8 {
            for prev in [false, true] {
                for flag in [false, true] {
                    let expected = match step.get(&(old, new)).copied() {
                        None => StrokeEvent::Desync,
                        Some(k) if k < 0 && flag => StrokeEvent::DeleteThenBegin(-k as u8),
                        Some(k) if k < 0 => StrokeEvent::Delete(-k as u8),
                        Some(k) if k > 0 && flag => StrokeEvent::Begin,
                        Some(k) if k > 0 => StrokeEvent::NoOp,
                        Some(_) if flag && !prev => StrokeEvent::Begin,
                        Some(_) if flag => StrokeEvent::Append,
                        Some(_) => StrokeEvent::NoOp,
                    };
                    let got = classify(old, prev, new, flag);
                    ensure!(got == expected, "({old}, {prev}) -> ({new}, {flag}): {got:?}, expected {expected:?}");
                    let class = match got {
                        StrokeEvent::Begin | StrokeEvent::Append => "new",
                        StrokeEvent::Delete(_) | StrokeEvent::DeleteThenBegin(_) => "delete",
                        _ => "no-op",
                    };
                    *counts.entry(class).or_default() += 1;
                }
            }
        }
    }
    ensure!(classify(255, true, 0, true) == StrokeEvent::Begin, "255 -> 0 while drawing is not a new annotation");
    ensure!(classify(5, false, 4, false) == StrokeEvent::Delete(1), "5 -> 4 is not a deletion");
    let s = budget(start, 1.0)?;
    Ok(format!(
        "262144 cases: {} new/append, {} delete, {} no-op or desync ({s:.3} s)",
        counts["new"], counts["delete"], counts["no-op"]
    ))
}

// ---- 5. frustum selection ------------------------------------------------------

fn det(a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    a.dot(&b.cross(c))
}

/// Inside all four half-spaces bounded by the planes through the apex and
/// consecutive boundary points, with the quad's own winding.
fn oracle_contains(apex: &Vec3, quad: &[Vec3; 4], axis: &Vec3, p: &Vec3) -> bool {
    let r = quad.map(|q| q - apex);
    let sign = det(axis, &r[0], &r[1]).signum();
    (0..4).all(|i| {
        let (a, b) = (r[i], r[(i + 1) % 4]);
        sign * det(&(p - apex), &a, &b) / a.cross(&b).norm() >= -1e-9
    })
}

fn frustum_selection() -> Check {
    let start = Instant::now();
    let mut rng = rng(5);
    let (mut selected, mut total) = (0usize, 0usize);
    let mut frusta = 0;
    while frusta < 100 {
        let apex = Vec3::from([0; 3].map(|_| rng.random_range(-2.0..2.0)));
        let axis = unit(&mut rng);
        let e1 = axis.cross(&if axis.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() }).normalize();
        let e2 = axis.cross(&e1);
        let mut angles = [0.0; 4].map(|_| rng.random_range(0.0..2.0 * PI));
        angles.sort_by(f64::total_cmp);
        let gaps: Vec<f64> = (0..4).map(|i| (angles[(i + 1) % 4] - angles[i]).rem_euclid(2.0 * PI)).collect();
        if gaps.iter().any(|g| !(0.2..=PI - 0.2).contains(g)) {
            continue;
        }
        let half = rng.random_range(0.2..0.8f64).tan();
        let mut quad = angles.map(|t| {
            let depth = rng.random_range(0.5..3.0);
            apex + (axis + (e1 * t.cos() + e2 * t.sin()) * half) * depth
        });
        if rng.random_bool(0.5) {
            quad.reverse();
        }
        quad.rotate_left(rng.random_range(0..4));
        let frustum = SelectionFrustum::build(apex, quad).map_err(|e| format!("valid frustum rejected: {e}"))?;
        frusta += 1;

        let meshes: Vec<TriangleMesh> = (0..4u32)
            .map(|chunk| {
                let mut vertices = Vec::new();
                for _ in 0..250 {
                    let d = rng.random_range(0.2..4.0);
                    let lateral = (e1 * rng.random_range(-1.2..1.2) + e2 * rng.random_range(-1.2..1.2)) * half * d;
                    let c = apex + axis * d + lateral;
                    for _ in 0..3 {
                        vertices.push(Vertex::new(c + unit(&mut rng) * rng.random_range(0.0..0.1) * d));
                    }
                }
                let tris = (0..250u32).map(|t| [3 * t, 3 * t + 1, 3 * t + 2]).collect();
                TriangleMesh::new(chunk, vertices, tris).unwrap()
            })
            .collect();
        let got: BTreeSet<(u32, u32)> = match select_triangles(&meshes, &frustum) {
            Ok(sel) => sel.sources.iter().map(|s| (s.chunk_id, s.triangle)).collect(),
            Err(_) => BTreeSet::new(),
        };
        let mut want = BTreeSet::new();
        for m in &meshes {
            for t in 0..m.triangles().len() {
                if m.triangle_positions(t).iter().all(|p| oracle_contains(&apex, &quad, &axis, p)) {
                    want.insert((m.chunk_id, t as u32));
                }
            }
        }
        ensure!(got == want, "frustum {frusta}: {} selected vs {} by the oracle", got.len(), want.len());
        selected += want.len();
        total += 1000;
    }
    let s = budget(start, 5.0)?;
    Ok(format!("100 frusta x 1000 triangles, 0 mismatches, {selected}/{total} selected ({s:.2} s)"))
}

// ---- 6. cutout mapping ---------------------------------------------------------

fn matrix(t: &SimTransform) -> Matrix4<f64> {
    let mut m = Matrix4::identity();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&(t.rotation.to_rotation_matrix().matrix() * t.scale));
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(&t.translation);
    m
}

fn max_abs(m: &Matrix4<f64>) -> f64 {
    m.iter().fold(0.0, |a, v| a.max(v.abs()))
}

fn rand_similarity(rng: &mut ChaCha8Rng) -> SimTransform {
    let axis = nalgebra::Unit::new_normalize(unit(rng));
    SimTransform::new(
        UnitQuat::from_axis_angle(&axis, rng.random_range(-PI..PI)),
        Vec3::from([0; 3].map(|_| rng.random_range(-10.0..10.0))),
        rng.random_range(0.1..3.0),
    )
}

fn pose_of(action: &Action) -> Option<SimTransform> {
    match action {
        Action::MoveObjectInCutout { pose, .. } | Action::TransformCutout { pose, .. } => pose.to_transform().ok(),
        _ => None,
    }
}

fn cutout_mapping() -> Check {
    let start = Instant::now();
    let mut rng = rng(6);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let cutout = Cutout {
            id: 1,
            apex: Vec3::zeros(),
            points: [Vec3::zeros(); 4],
            selection: Selection { mesh: TriangleMesh::empty(0), sources: Vec::new() },
            source_frame: rand_similarity(&mut rng),
            copy_frame: rand_similarity(&mut rng),
            active: true,
        };
        let pose = rand_similarity(&mut rng);
        let world = cutout.map_to_world(&pose);
        let expected = matrix(&cutout.source_frame) * matrix(&cutout.copy_frame).try_inverse().unwrap() * matrix(&pose);
        let forward = max_abs(&(matrix(&world) - expected));
        let back = max_abs(&(matrix(&cutout.map_to_copy(&world)) - matrix(&pose)));
        worst = worst.max(forward).max(back);
        ensure!(forward <= 1e-9 && back <= 1e-9, "mapping error {forward:e} / round trip {back:e}");
    }

    // The bowling scenario moves a pin through the lane cutout's copy.
    let s = scenario("bowling");
    let out: SimOutcome = run_with(&s, &RunOptions { loss: Some(0.0), ..Default::default() }).map_err(|e| e.to_string())?;
    let find = |pred: &dyn Fn(&Action) -> bool| s.actions.iter().filter(|a| pred(&a.action)).filter_map(|a| pose_of(&a.action)).last();
    let in_copy = find(&|a| matches!(a, Action::MoveObjectInCutout { object, .. } if object == "pin1")).ok_or("no copy move")?;
    let copy_frame = find(&|a| matches!(a, Action::TransformCutout { .. })).ok_or("no cutout transform")?;
    let (pin, cid) = (out.objects["pin1"], out.cutouts["lane-end"]);
    let mut e2e: f64 = 0.0;
    for peer in [&out.ar, &out.vr] {
        let c = peer.cutout(cid).map_err(|e| e.to_string())?;
        let centroid = c.selection.mesh.vertices().iter().map(|v| v.position).sum::<Vec3>() / c.selection.mesh.vertices().len() as f64;
        ensure!((c.source_frame.translation - centroid).norm() <= 1e-5, "source frame is not at the selection centroid");
        ensure!(max_abs(&(matrix(&c.copy_frame) - matrix(&copy_frame))) <= 1e-5, "copy frame differs from the scripted one");
        let expected = matrix(&c.source_frame) * matrix(&c.copy_frame).try_inverse().unwrap() * matrix(&in_copy);
        let got = matrix(&peer.object(pin).ok_or("pin1 missing")?.transform);
        e2e = e2e.max(max_abs(&(got - expected)));
    }
    ensure!(e2e <= 1e-5, "end-to-end pose error {e2e:e}");
    let s = budget(start, 5.0)?;
    Ok(format!("1000 triples, worst error {worst:.1e}; bowling copy move error {e2e:.1e} ({s:.2} s)"))
}

// ---- 7. fisheye ----------------------------------------------------------------

fn fisheye() -> Check {
    let start = Instant::now();
    let n = 2048u32;
    let m = FisheyeModel::dual_hemisphere(n);
    let (c, f) = (n as f64 / 2.0, n as f64 / PI);
    let mut rng = rng(7);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let d = unit(&mut rng);
        let s = m.project(&d);
        let back = m.unproject(s.lens, s.u, s.v).map_err(|e| e.to_string())?;
        worst = worst.max(angle(&back, &d));
    }
    ensure!(worst < 1e-6, "roundtrip error {worst:e} rad");

    ensure!(m.project(&Vec3::z()) == FisheyeSample { lens: 0, u: c, v: c }, "+Z is not the lens 0 principal point");
    ensure!(m.project(&-Vec3::z()) == FisheyeSample { lens: 1, u: c, v: c }, "-Z is not the lens 1 principal point");
    // Lens 1's axis comes from a half-turn quaternion, so it is −Z to within rounding.
    ensure!(m.unproject(0, c, c).unwrap() == Vec3::z(), "lens 0 principal point is not +Z");
    ensure!(angle(&m.unproject(1, c, c).unwrap(), &-Vec3::z()) <= 1e-15, "lens 1 principal point is not -Z");

    // r = f·θ; lens 1 looks along −Z with its image +u along camera −X.
    let (s6, c8) = (0.6f64, 0.8f64);
    let cases: [(Vec3, usize, f64, f64); 6] = [
        (Vec3::x(), 0, c + f * FRAC_PI_2, c),
        (-Vec3::x(), 0, c - f * FRAC_PI_2, c),
        (Vec3::y(), 0, c, c + f * FRAC_PI_2),
        (Vec3::new(FRAC_PI_4.sin(), 0.0, FRAC_PI_4.cos()), 0, c + f * FRAC_PI_4, c),
        (Vec3::new(s6, 0.0, -c8), 1, c - f * s6.atan2(c8), c),
        (Vec3::new(0.0, -s6, -c8), 1, c, c - f * s6.atan2(c8)),
    ];
    for (d, lens, u, v) in cases {
        let s = m.project(&d);
        ensure!(s.lens == lens && (s.u - u).abs() <= 1e-9 && (s.v - v).abs() <= 1e-9, "{d:?}: {s:?}, expected ({lens}, {u}, {v})");
        ensure!(angle(&m.unproject(lens, u, v).unwrap(), &d) <= 1e-12, "unproject({lens}, {u}, {v}) is not {d:?}");
    }
    ensure!((c + f * FRAC_PI_2 - n as f64).abs() <= 1e-9, "hemisphere does not fill the frame");
    let s = budget(start, 1.0)?;
    Ok(format!("10000 directions, worst roundtrip {worst:.1e} rad; principal points exact, boundary within 1e-9 px ({s:.3} s)"))
}

// ---- 8. RANSAC -----------------------------------------------------------------

fn ransac() -> Check {
    let start = Instant::now();
    let mut worst_angle: f64 = 0.0;
    let mut worst_recall: f64 = 1.0;
    for seed in 0..5u64 {
        let mut rng = rng(80 + seed);
        let tilt = rng.random_range(0.0..30f64.to_radians());
        let normal = UnitQuat::from_axis_angle(&nalgebra::Unit::new_normalize(Vec3::new(1.0, rng.random(), 0.0)), tilt) * Vec3::z();
        let center = Vec3::from([0; 3].map(|_| rng.random_range(-1.0..1.0)));
        let e1 = normal.cross(&Vec3::x()).normalize();
        let e2 = normal.cross(&e1);
        let (inliers, outliers) = (7000, 3000);
        let mut points = Vec::with_capacity(inliers + outliers);
        for _ in 0..inliers {
            let noise: f64 = StandardNormal.sample(&mut rng);
            points.push(center + e1 * rng.random_range(-0.5..0.5) + e2 * rng.random_range(-0.5..0.5) + normal * (0.002 * noise));
        }
        for _ in 0..outliers {
            points.push(center + Vec3::from([0; 3].map(|_| rng.random_range(-0.5..0.5))));
        }
        // A rough seed: 5° off and 2 cm away.
        let seed_normal = UnitQuat::from_axis_angle(&nalgebra::Unit::new_normalize(e1), 5f64.to_radians()) * normal;
        let seed_plane = PlaneModel::new(seed_normal, seed_normal.dot(&center) + 0.02, 0.008);
        let params = RansacParams { threshold: 0.008, rng_seed: seed, ..RansacParams::default() };
        let (plane, mask) = fit_plane_ransac(&points, &seed_plane, &params).map_err(|e| e.to_string())?;
        let again = fit_plane_ransac(&points, &seed_plane, &params).map_err(|e| e.to_string())?;
        ensure!(again == (plane, mask.clone()), "seed {seed}: repeated fit differs");

        let err = angle(&plane.normal, &normal).to_degrees();
        let recall = mask[..inliers].iter().filter(|&&b| b).count() as f64 / inliers as f64;
        ensure!(err <= 0.5, "seed {seed}: normal error {err:.3}°");
        ensure!(recall >= 0.99, "seed {seed}: inlier recall {recall:.4}");
        worst_angle = worst_angle.max(err);
        worst_recall = worst_recall.min(recall);
    }
    let s = budget(start, 5.0)?;
    Ok(format!("5 planes, 30% outliers, σ 2 mm: worst normal error {worst_angle:.3}°, worst recall {:.2}% ({s:.2} s)", worst_recall * 100.0))
}

// ---- 9. replica ----------------------------------------------------------------

fn segment_distance(p: &Vec3, a: &Vec3, b: &Vec3) -> f64 {
    let ab = b - a;
    let t = ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
    (a + ab * t - p).norm()
}

fn triangle_distance(p: &Vec3, [a, b, c]: [Vec3; 3]) -> f64 {
    let n = (b - a).cross(&(c - a));
    if n.norm() > 0.0 {
        let n = n.normalize();
        let q = p - n * (p - a).dot(&n);
        if [(a, b), (b, c), (c, a)].iter().all(|(u, v)| (v - u).cross(&(q - u)).dot(&n) >= 0.0) {
            return (p - q).norm();
        }
    }
    segment_distance(p, &a, &b).min(segment_distance(p, &b, &c)).min(segment_distance(p, &c, &a))
}

/// Symmetric Hausdorff distance between a mesh and an analytic sphere.
fn sphere_hausdorff(mesh: &TriangleMesh, center: Vec3, radius: f64) -> f64 {
    let to_sphere = mesh.vertices().iter().map(|v| ((v.position - center).norm() - radius).abs()).fold(0.0, f64::max);
    let n = 2000;
    let golden = PI * (3.0 - 5f64.sqrt());
    let to_mesh = (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let rho = (1.0 - z * z).sqrt();
            let phi = golden * i as f64;
            let p = center + Vec3::new(rho * phi.cos(), rho * phi.sin(), z) * radius;
            (0..mesh.triangles().len()).map(|t| triangle_distance(&p, mesh.triangle_positions(t))).fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max);
    to_sphere.max(to_mesh)
}

/// Writes a synthetic sphere capture and returns the analytic center and radius.
fn capture(dir: &Path, frames: usize) -> (Vec3, f64) {
    let params = SynthParams { frames, ..SynthParams::new(SynthShape::Sphere) };
    let (manifest, data) = synth_capture(&params);
    save_capture(dir, &manifest, &data).unwrap();
    match manifest.ground_truth {
        Some(GroundTruth::Sphere { center, radius }) => (Vec3::from(center), radius),
        other => panic!("unexpected ground truth {other:?}"),
    }
}

fn replica() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let start = Instant::now();
    let (center, radius) = capture(tmp.path(), 75);
    let config = PipelineConfig::default();
    let out = run_pipeline(tmp.path(), &StageSet::default(), &config).map_err(|e| e.to_string())?;
    let run_s = budget(start, 60.0)?;
    let h = sphere_hausdorff(&out.mesh, center, radius);
    ensure!(h <= 2.0 * config.voxel_size, "Hausdorff {:.2} mm", h * 1000.0);
    ensure!(out.mesh.is_watertight(), "mesh is not watertight");
    let chi = out.mesh.euler_characteristic();
    ensure!(chi == 2, "Euler characteristic {chi}");
    Ok(format!(
        "75-frame sphere: Hausdorff {:.2} mm (limit {:.0} mm), watertight, χ = 2, {} triangles; capture + pipeline {run_s:.2} s",
        h * 1000.0,
        2000.0 * config.voxel_size,
        out.mesh.triangles().len()
    ))
}

// ---- 10. OBJ -------------------------------------------------------------------

fn micro(rng: &mut ChaCha8Rng, lo: i64, hi: i64) -> f64 {
    rng.random_range(lo..=hi) as f64 / 1e6
}

fn obj() -> Check {
    let start = Instant::now();
    let mut rng = rng(10);
    for i in 0..1000 {
        let n = rng.random_range(3..60);
        let colored = i % 4 != 0;
        let vertices = (0..n)
            .map(|_| ObjVertex {
                position: [0; 3].map(|_| micro(&mut rng, -100_000_000, 100_000_000)),
                color: colored.then(|| [0; 3].map(|_| micro(&mut rng, 0, 1_000_000))),
            })
            .collect();
        let faces = (0..rng.random_range(1..80)).map(|_| [0; 3].map(|_| rng.random_range(0..n as u32))).collect();
        let doc = ColoredObjDocument { vertices, faces };
        let text = write_obj(&doc);
        let parsed = parse_obj(&text).map_err(|e| format!("mesh {i}: {e}"))?;
        ensure!(parsed == doc, "mesh {i}: parse(write(doc)) differs");
        ensure!(write_obj(&parsed) == text, "mesh {i}: write(parse(text)) differs");
    }

    let fixture_path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/colored_tetrahedron.obj");
    let fixture = std::fs::read(&fixture_path).map_err(|e| e.to_string())?;
    let v = |position: [f64; 3], color: [f64; 3]| ObjVertex { position, color: Some(color) };
    let tetra = ColoredObjDocument {
        vertices: vec![
            v([0.0, 0.0, 0.0], [1.0, 0.0, 0.0]),
            v([1.25, 0.0, -0.5], [0.0, 1.0, 0.0]),
            v([0.0, 2.0, 0.0], [0.0, 0.0, 1.0]),
            v([-0.125, 0.333333, 1.0], [0.5, 0.5, 0.5]),
        ],
        faces: vec![[0, 2, 1], [0, 1, 3], [1, 2, 3], [2, 0, 3]],
    };
    ensure!(write_obj(&tetra) == fixture, "golden fixture differs:\n{}", String::from_utf8_lossy(&write_obj(&tetra)));
    ensure!(parse_obj(&fixture).map_err(|e| e.to_string())? == tetra, "golden fixture parses differently");
    let mesh = TriangleMesh::from_obj(0, &tetra).map_err(|e| e.to_string())?;
    ensure!(write_obj(&mesh.to_obj()) == fixture, "mesh round trip changes the fixture");
    let s = budget(start, 5.0)?;
    Ok(format!("1000 random meshes round-trip; golden fixture byte-exact ({s:.2} s)"))
}

// ---- 11. determinism -----------------------------------------------------------

fn determinism() -> Check {
    let start = Instant::now();
    for name in SCENARIOS {
        let s = scenario(name);
        let opts = RunOptions { seed: Some(7), loss: Some(0.1), ..Default::default() };
        let a = run_with(&s, &opts).map_err(|e| e.to_string())?;
        let b = run_with(&s, &opts).map_err(|e| e.to_string())?;
        ensure!(a.log_text() == b.log_text(), "{name}: event logs differ");
        for role in [Role::Ar, Role::Vr] {
            ensure!(a.dump(role) == b.dump(role), "{name}: {} dumps differ", role.name());
        }
    }
    let s = scenario("drawing");
    let log = |seed| run_with(&s, &RunOptions { seed: Some(seed), loss: Some(0.1), ..Default::default() }).unwrap().log_text();
    ensure!(log(1) != log(2), "different seeds gave the same lossy log");

    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    capture(&a, 16);
    capture(&b, 16);
    let mut files: Vec<_> = std::fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    files.sort();
    for f in &files {
        ensure!(std::fs::read(a.join(f)).unwrap() == std::fs::read(b.join(f)).unwrap(), "capture file {f:?} differs");
    }
    let cfg = PipelineConfig::default();
    let oa = run_pipeline(&a, &StageSet::default(), &cfg).map_err(|e| e.to_string())?;
    let ob = run_pipeline(&b, &StageSet::default(), &cfg).map_err(|e| e.to_string())?;
    ensure!(oa.obj == ob.obj, "pipeline OBJ output differs");
    let secs = start.elapsed().as_secs_f64();
    Ok(format!("5 scenarios x 2 runs at 10% loss, {} capture files and the pipeline OBJ byte-identical ({secs:.2} s)", files.len()))
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("protocol fidelity", protocol_fidelity),
        ("convergence at 0% loss", convergence_lossless),
        ("convergence under loss", convergence_lossy),
        ("annotation byte semantics", annotation_semantics),
        ("frustum selection", frustum_selection),
        ("cutout mapping", cutout_mapping),
        ("fisheye", fisheye),
        ("RANSAC", ransac),
        ("replica desk scale", replica),
        ("OBJ", obj),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<&str>().map(|s| s.to_string()).or_else(|| p.downcast_ref::<String>().cloned());
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        match result {
            Ok(detail) => println!("PASS  {:>2}. {name}: {detail}", i + 1),
            Err(reason) => {
                failed += 1;
                println!("FAIL  {:>2}. {name}: {reason}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
