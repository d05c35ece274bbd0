use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use rollsurf_core::control::{cache_validate, scene_links, ConfigCache, Session, SimPlant};
use rollsurf_core::scene::validate_scene;
use rollsurf_core::Scene;
use rollsurf_expcli::{catalog, runner, ExperimentSpec, Transport};

#[derive(Parser)]
#[command(name = "rollsurf", version, about = "Roll-surface experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone)]
struct RunFlags {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    transport: Option<Transport>,
    /// Parameter override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment from a spec file or by catalog name.
    Run {
        spec: String,
        #[command(flatten)]
        flags: RunFlags,
    },
    /// List the experiments.
    List,
    /// Check a scene file.
    Validate { scene: PathBuf },
    /// Apply the cached configuration matching a scene and report its gains.
    ReplayCache {
        cache: PathBuf,
        scene: PathBuf,
        #[command(flatten)]
        flags: RunFlags,
    },
}

fn load_spec(arg: &str) -> Result<ExperimentSpec> {
    let path = Path::new(arg);
    if path.exists() {
        return Ok(ExperimentSpec::load(path)?);
    }
    if catalog::find(arg).is_some() {
        return Ok(ExperimentSpec::named(arg));
    }
    bail!("{arg:?} is neither a spec file nor an experiment name (see `rollsurf list`)")
}

fn apply_flags(spec: &ExperimentSpec, flags: &RunFlags) -> Result<rollsurf_expcli::RunParams> {
    let mut p = spec.params()?;
    for pair in &flags.set {
        p.set_pair(pair)?;
    }
    if let Some(s) = flags.seed {
        p.seed = s;
    }
    if let Some(t) = flags.trials {
        p.set("trials", &t.to_string())?;
    }
    if let Some(t) = flags.transport {
        p.transport = t;
    }
    Ok(p)
}

fn read_scene(path: &Path) -> Result<Scene> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Scene::from_toml(&text).with_context(|| format!("parsing {}", path.display()))
}

fn cmd_run(arg: &str, flags: &RunFlags) -> Result<ExitCode> {
    let spec = load_spec(arg)?;
    let params = apply_flags(&spec, flags)?;
    let out = flags
        .out
        .clone()
        .or_else(|| spec.out.clone())
        .unwrap_or_else(|| runner::default_out(&spec.name));
    let o = runner::run(&spec, &params, &out)?;
    println!("{} ({}) -> {}", o.experiment, o.algorithm.name(), out.display());
    for (k, v) in &o.metrics {
        println!("  {k} = {v}");
    }
    if !o.failures.is_empty() {
        eprintln!("{} trial(s) failed, see errors.csv", o.failures.len());
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_validate(path: &Path) -> Result<ExitCode> {
    let scene = read_scene(path)?;
    match validate_scene(&scene) {
        Ok(()) => {
            println!(
                "{}: ok, {} panels, {} rolls, {} links",
                path.display(),
                scene.panels.len(),
                scene.roll_ids().len(),
                scene.links.len()
            );
            Ok(ExitCode::SUCCESS)
        }
        Err(violations) => {
            for v in &violations {
                println!("{}: {v}", path.display());
            }
            Ok(ExitCode::from(1))
        }
    }
}

fn cmd_replay(cache_path: &Path, scene_path: &Path, flags: &RunFlags) -> Result<ExitCode> {
    if flags.transport == Some(Transport::Socket) {
        bail!("replay-cache runs in process only");
    }
    let cache = ConfigCache::load(cache_path)?;
    let scene = read_scene(scene_path)?;
    let mut spec = ExperimentSpec::named("cache-replay");
    spec.scene = Some(scene_path.to_path_buf());
    let p = apply_flags(&spec, flags)?;
    let links = scene_links(&scene)?;
    let Some(entry) = cache.lookup(&links) else {
        println!("miss: no entry within {} m of this scene's links", cache.tolerance_m);
        return Ok(ExitCode::from(1));
    };
    let cp = p.control(p.seed);
    let plant = SimPlant::new(&scene, cp.policy, cp.seed);
    let mut session = Session::new(&scene, plant, &cp)?;
    let check = cache_validate(
        &mut session,
        entry,
        &scene,
        p.cache.retain_fraction,
        p.policy.noise_floor_margin_db,
    )?;
    println!("hit: {} rolls, valid = {}", entry.rolls.len(), check.valid);
    println!("link,recorded_gain_db,replay_gain_db");
    for ((l, r), g) in scene.links.iter().zip(&entry.recorded_gain_db).zip(&check.gains_db) {
        println!("{},{r},{g}", l.id);
    }
    Ok(if check.valid {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let res = match &cli.command {
        Command::Run { spec, flags } => cmd_run(spec, flags),
        Command::List => {
            for e in catalog::CATALOG {
                println!("{:<26} {}", e.name, e.description);
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Validate { scene } => cmd_validate(scene),
        Command::ReplayCache { cache, scene, flags } => cmd_replay(cache, scene, flags),
    };
    res.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        ExitCode::FAILURE
    })
}
