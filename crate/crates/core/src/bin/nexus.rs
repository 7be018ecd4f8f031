//! `nexus`: command-line front end to the collaboration core.
//!
//! Exit codes: 0 success, 1 domain error (failed assertion, bad capture,
//! undecodable bytes), 2 usage error (bad flags, missing input file).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use nexus_core::geometry::Vec3;
use nexus_core::mesh::{parse_obj, select_triangles, write_obj, SelectionFrustum, TriangleMesh};
use nexus_core::protocol::{decode_pointer, decode_reliable, encode_pointer, encode_reliable, Envelope, PointerDatagram};
use nexus_core::replica::{
    run_pipeline, save_capture, synth_capture, CaptureManifest, PipelineConfig, StageSet, SynthParams, SynthShape,
    MANIFEST_FILE,
};
use nexus_core::session::Role;
use nexus_core::sim::{run_with, RunOptions, Scenario};

#[derive(Parser)]
#[command(name = "nexus", version, about = "360° video AR/VR collaboration core: simulator, replica pipeline and tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a two-peer scenario over the simulated network.
    Simulate(SimulateArgs),
    /// Virtual replica reconstruction.
    #[command(subcommand)]
    Replica(ReplicaCommand),
    /// Encode or decode wire messages.
    #[command(subcommand)]
    Proto(ProtoCommand),
    /// Mesh tools.
    #[command(subcommand)]
    Mesh(MeshCommand),
    /// Capture tools.
    #[command(subcommand)]
    Capture(CaptureCommand),
}

#[derive(Args)]
struct SimulateArgs {
    scenario: PathBuf,
    /// Datagram loss rate in [0, 1].
    #[arg(long)]
    loss: Option<f64>,
    /// Mean one-way latency in milliseconds.
    #[arg(long)]
    latency: Option<f64>,
    /// Overrides the scenario seed and the NEXUS_SEED variable.
    #[arg(long)]
    seed: Option<u64>,
    /// Writes ar.json, vr.json and events.jsonl into this directory.
    #[arg(long)]
    dump_state: Option<PathBuf>,
}

#[derive(Subcommand)]
enum ReplicaCommand {
    /// Reconstruct a colored mesh from a capture directory.
    Run {
        capture_dir: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long, default_value_t = 5.0)]
        voxel_mm: f64,
        /// Stage implementation choice such as `refine=identity`; repeatable.
        #[arg(long = "stage")]
        stages: Vec<String>,
        /// Cache directory; defaults to `<capture-dir>/.nexus-cache`.
        #[arg(long)]
        cache_dir: Option<PathBuf>,
        #[arg(long)]
        no_cache: bool,
    },
}

#[derive(Subcommand)]
enum ProtoCommand {
    /// Encode a JSON message (a pointer datagram, or an envelope with a
    /// `type` field) and print it as hex.
    Encode { json: String },
    /// Decode hex bytes and print the fields as JSON.
    Decode { hex: String },
}

#[derive(Subcommand)]
enum MeshCommand {
    /// Keep the triangles seen through four points from an apex.
    Cutout {
        mesh: PathBuf,
        /// `x,y,z`
        #[arg(long, allow_hyphen_values = true)]
        apex: String,
        /// Four `x,y,z` points separated by spaces or semicolons.
        #[arg(long, allow_hyphen_values = true)]
        points: String,
        #[arg(short, long)]
        output: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ShapeArg {
    Sphere,
    Box,
}

#[derive(Subcommand)]
enum CaptureCommand {
    /// Render a synthetic RGBD capture of an analytic object.
    Synth {
        shape: ShapeArg,
        dir: PathBuf,
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

enum CliError {
    Usage(String),
    Domain(String),
}

type CliResult = Result<(), CliError>;

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn domain(e: impl std::fmt::Display) -> CliError {
    CliError::Domain(e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(args) => simulate(args),
        Command::Replica(ReplicaCommand::Run { capture_dir, output, voxel_mm, stages, cache_dir, no_cache }) => {
            replica_run(&capture_dir, &output, voxel_mm, &stages, cache_dir, no_cache)
        }
        Command::Proto(ProtoCommand::Encode { json }) => proto_encode(&json),
        Command::Proto(ProtoCommand::Decode { hex }) => proto_decode(&hex),
        Command::Mesh(MeshCommand::Cutout { mesh, apex, points, output }) => mesh_cutout(&mesh, &apex, &points, &output),
        Command::Capture(CaptureCommand::Synth { shape, dir, frames, seed }) => capture_synth(shape, &dir, frames, seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Domain(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(CliError::Usage(m)) => {
            eprintln!("usage error: {m}");
            ExitCode::from(2)
        }
    }
}

fn read_input(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn write_output(path: &Path, bytes: &[u8]) -> CliResult {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| domain(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, bytes).map_err(|e| domain(format!("{}: {e}", path.display())))
}

fn simulate(args: SimulateArgs) -> CliResult {
    let text = String::from_utf8(read_input(&args.scenario)?).map_err(|_| domain("scenario is not UTF-8"))?;
    let scenario = Scenario::from_json(&text).map_err(domain)?;
    let env_seed = match std::env::var("NEXUS_SEED") {
        Ok(s) => Some(s.trim().parse::<u64>().map_err(|_| usage(format!("NEXUS_SEED={s:?} is not a u64")))?),
        Err(_) => None,
    };
    let options =
        RunOptions { seed: args.seed.or(env_seed), loss: args.loss, latency_ms: args.latency, ..Default::default() };
    let outcome = run_with(&scenario, &options).map_err(domain)?;

    if let Some(dir) = &args.dump_state {
        write_output(&dir.join("ar.json"), outcome.dump(Role::Ar).as_bytes())?;
        write_output(&dir.join("vr.json"), outcome.dump(Role::Vr).as_bytes())?;
        write_output(&dir.join("events.jsonl"), outcome.log_text().as_bytes())?;
    }
    println!(
        "{}: {} events, {} annotations, {} objects, virtual time {:.3} s",
        scenario.name,
        outcome.log.len(),
        outcome.ar.annotation_count(),
        outcome.ar.objects().len(),
        outcome.end_us as f64 / 1e6
    );
    for (i, a) in scenario.assertions.iter().enumerate() {
        let failure = outcome.failures.iter().find(|f| f.index == i);
        let name = serde_json::to_value(a).ok().and_then(|v| v["check"].as_str().map(String::from)).unwrap_or_default();
        println!("  [{}] {name}", if failure.is_some() { "FAIL" } else { "ok" });
        for line in failure.iter().flat_map(|f| &f.diff) {
            eprintln!("    {line}");
        }
    }
    if outcome.passed() {
        Ok(())
    } else {
        Err(domain(format!("{} of {} assertions failed", outcome.failures.len(), scenario.assertions.len())))
    }
}

/// Hash of everything the pipeline output depends on.
fn capture_key(dir: &Path, voxel_mm: f64, stages: &[String]) -> Result<String, CliError> {
    let manifest_bytes = read_input(&dir.join(MANIFEST_FILE))?;
    let mut h = Sha256::new();
    h.update(env!("CARGO_PKG_VERSION"));
    h.update(format!("voxel={voxel_mm}"));
    let mut sorted = stages.to_vec();
    sorted.sort();
    for s in &sorted {
        h.update(format!("stage={s};"));
    }
    h.update(&manifest_bytes);
    // Frame files are hashed only when the manifest parses; otherwise the
    // pipeline reports the error itself.
    if let Ok(m) = CaptureManifest::from_json(&String::from_utf8_lossy(&manifest_bytes)) {
        for f in &m.frames {
            for name in [&f.color, &f.depth] {
                h.update(name.as_bytes());
                h.update(std::fs::read(dir.join(name)).unwrap_or_default());
            }
        }
    }
    Ok(hex::encode(h.finalize()))
}

fn replica_run(
    dir: &Path,
    output: &Path,
    voxel_mm: f64,
    stage_choices: &[String],
    cache_dir: Option<PathBuf>,
    no_cache: bool,
) -> CliResult {
    if !(voxel_mm > 0.0) {
        return Err(usage("--voxel-mm must be positive"));
    }
    if !dir.is_dir() {
        return Err(usage(format!("{} is not a directory", dir.display())));
    }
    let mut stages = StageSet::default();
    for c in stage_choices {
        stages.select(c).map_err(usage)?;
    }
    let timings_path = output.parent().unwrap_or(Path::new(".")).join("timings.json");
    let key = capture_key(dir, voxel_mm, stage_choices)?;
    let cache = cache_dir.unwrap_or_else(|| dir.join(".nexus-cache"));
    let cached_obj = cache.join(format!("{key}.obj"));
    let cached_timings = cache.join(format!("{key}.timings.json"));

    if !no_cache {
        if let (Ok(obj), Ok(t)) = (std::fs::read(&cached_obj), std::fs::read_to_string(&cached_timings)) {
            let mut timings: Value = serde_json::from_str(&t).map_err(domain)?;
            timings["cache_hit"] = json!(true);
            write_output(output, &obj)?;
            write_output(&timings_path, (serde_json::to_string_pretty(&timings).map_err(domain)? + "\n").as_bytes())?;
            println!("cache hit {key}: wrote {}", output.display());
            return Ok(());
        }
    }

    let config = PipelineConfig { voxel_size: voxel_mm / 1000.0, ..Default::default() };
    let out = run_pipeline(dir, &stages, &config).map_err(domain)?;
    let mut timings = serde_json::to_value(&out.timings).map_err(domain)?;
    timings["cache_key"] = json!(key);
    timings["cache_hit"] = json!(false);
    timings["voxel_mm"] = json!(voxel_mm);
    let timings_text = serde_json::to_string_pretty(&timings).map_err(domain)? + "\n";
    write_output(output, &out.obj)?;
    write_output(&timings_path, timings_text.as_bytes())?;
    if !no_cache {
        write_output(&cached_obj, &out.obj)?;
        write_output(&cached_timings, timings_text.as_bytes())?;
    }
    println!(
        "wrote {} ({} vertices, {} triangles, watertight: {}) in {:.0} ms",
        output.display(),
        out.mesh.vertices().len(),
        out.mesh.triangles().len(),
        out.mesh.is_watertight(),
        out.timings.total_ms
    );
    for s in &out.timings.stages {
        println!("  {:<12} {:<24} {:>9.1} ms", s.stage, s.implementation, s.ms);
    }
    Ok(())
}

fn proto_encode(text: &str) -> CliResult {
    let value: Value = serde_json::from_str(text).map_err(usage)?;
    let bytes = if value.get("type").is_some() {
        let env: Envelope = serde_json::from_value(value).map_err(usage)?;
        encode_reliable(&env)
    } else {
        let d: PointerDatagram = serde_json::from_value(value).map_err(usage)?;
        encode_pointer(&d).to_vec()
    };
    println!("{}", hex::encode(bytes));
    Ok(())
}

fn proto_decode(text: &str) -> CliResult {
    let cleaned: String = text.chars().filter(|c| !c.is_whitespace()).collect();
    let bytes = hex::decode(&cleaned).map_err(usage)?;
    let framed = bytes.len() >= 4 && u32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]) as usize + 4 == bytes.len();
    let value = if framed {
        let (env, _) = decode_reliable(&bytes).map_err(domain)?;
        json!({ "channel": "reliable", "envelope": env })
    } else {
        let d = decode_pointer(&bytes).map_err(domain)?;
        json!({ "channel": "pointer", "datagram": d })
    };
    println!("{}", serde_json::to_string_pretty(&value).map_err(domain)?);
    Ok(())
}

fn parse_vec3(s: &str) -> Result<Vec3, CliError> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| usage(format!("{s:?}: {e}")))?;
    match parts[..] {
        [x, y, z] => Ok(Vec3::new(x, y, z)),
        _ => Err(usage(format!("{s:?}: expected x,y,z"))),
    }
}

fn mesh_cutout(path: &Path, apex: &str, points: &str, output: &Path) -> CliResult {
    let doc = parse_obj(&read_input(path)?).map_err(domain)?;
    let mesh = TriangleMesh::from_obj(0, &doc).map_err(domain)?;
    let apex = parse_vec3(apex)?;
    let pts: Vec<Vec3> =
        points.split([';', ' ']).filter(|s| !s.trim().is_empty()).map(parse_vec3).collect::<Result<_, _>>()?;
    let pts: [Vec3; 4] = pts.try_into().map_err(|_| usage("--points needs exactly four points"))?;
    let frustum = SelectionFrustum::build(apex, pts).map_err(domain)?;
    let selection = select_triangles([&mesh], &frustum).map_err(domain)?;
    write_output(output, &write_obj(&selection.mesh.to_obj()))?;
    println!("selected {} of {} triangles", selection.mesh.triangles().len(), mesh.triangles().len());
    Ok(())
}

fn capture_synth(shape: ShapeArg, dir: &Path, frames: Option<usize>, seed: Option<u64>) -> CliResult {
    let shape = match shape {
        ShapeArg::Sphere => SynthShape::Sphere,
        ShapeArg::Box => SynthShape::Box,
    };
    let mut params = SynthParams::new(shape);
    if let Some(n) = frames {
        params.frames = n;
    }
    if let Some(s) = seed {
        params.seed = s;
    }
    let (manifest, captured) = synth_capture(&params);
    save_capture(dir, &manifest, &captured).map_err(domain)?;
    println!("wrote {} frames to {}", captured.len(), dir.display());
    Ok(())
}
