use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use tli_bench::multimode::{run_campaign, run_color, run_generalization, run_looping, CampaignConfig};
use tli_bench::report::{write_json, write_single_mode};
use tli_bench::single_mode::{run_single_mode, SingleModeConfig};
use tli_bench::tasks::{scene_demos, Variant};
use tli_bench::theorem1::{run_theorem1, Theorem1Config};
use tli_core::executor::{learn_library, run, BoundarySet, ExecutorConfig, NoPerturbations, PerturbationSource, PolicyLibrary};
use tli_core::ltl::synthesize;
use tli_core::sim::PerturbationSchedule;
use tli_core::types::{Demonstration, Vector};
use tli_service::Assets;

#[derive(Parser)]
#[command(name = "tli", version, about = "Learn, plan and execute mode-based motion policies")]
struct Cli {
    /// Directory with `scenes/*.json` and `specs/*.ltl` overriding the bundled assets.
    #[arg(long, global = true)]
    assets: Option<PathBuf>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum BenchKind {
    SingleMode,
    Theorem1,
    Looping,
    Generalization,
    Color,
    Campaign,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a study and write its results.
    Bench {
        kind: BenchKind,
        /// JSON config; unspecified fields take their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "results")]
        out: PathBuf,
        /// Use the larger sample sizes.
        #[arg(long)]
        paper_scale: bool,
    },
    /// Generate demonstrations for a scene.
    DemoGen {
        #[arg(long)]
        scene: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Learn a policy library from demonstrations.
    Fit {
        #[arg(long)]
        scene: String,
        /// Demonstrations file; generated from the seed when absent.
        #[arg(long)]
        demos: Option<PathBuf>,
        #[arg(long, default_value = "DS")]
        variant: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Synthesize the mode automaton of a spec and print it as JSON.
    Synth {
        spec: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Execute one run and print its outcome.
    Run {
        #[arg(long)]
        scene: String,
        #[arg(long)]
        spec: String,
        /// Library from `tli fit`; learned on the spot when absent.
        #[arg(long)]
        library: Option<PathBuf>,
        #[arg(long, default_value = "DS+mod")]
        variant: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Start state; the first demonstration's start when absent.
        #[arg(long, num_args = 2, value_names = ["X", "Y"])]
        start: Option<Vec<f64>>,
        /// Perturbation schedule: a JSON list of {step, kind, vector}.
        #[arg(long)]
        perturbations: Option<PathBuf>,
        /// Cuts to start from.
        #[arg(long)]
        boundaries: Option<PathBuf>,
        /// Where to write the cuts after the run.
        #[arg(long)]
        save_boundaries: Option<PathBuf>,
        #[arg(long)]
        no_cutting: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve sessions over a WebSocket.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
}

#[derive(Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SeedConfig {
    seed: u64,
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    path.map_or_else(|| Ok(T::default()), read_json)
}

fn write_out(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn variant(name: &str) -> Result<Variant> {
    Variant::parse(name).with_context(|| format!("unknown variant {name:?}; expected BC, BC+mod, DS or DS+mod"))
}

fn bench(kind: BenchKind, cfg: Option<&Path>, out: &Path, paper_scale: bool) -> Result<bool> {
    let (passed, paths) = match kind {
        BenchKind::SingleMode => {
            let mut c: SingleModeConfig = config(cfg)?;
            if paper_scale {
                c.modes = c.modes.max(SingleModeConfig::paper_scale().modes);
            }
            c.validate()?;
            let r = run_single_mode(&c)?;
            for row in &r.table {
                let cells: Vec<String> = row.success.iter().map(|(n, s)| format!("{n}%: {s:.1}")).collect();
                println!("{:7} {}", row.variant.label(), cells.join("  "));
            }
            (true, write_single_mode(out, &r)?)
        }
        BenchKind::Theorem1 => {
            let r = run_theorem1(&config::<Theorem1Config>(cfg)?)?;
            let rate = r.models.iter().map(|m| m.max_rate).fold(f64::NEG_INFINITY, f64::max);
            let outward = r.models.iter().map(|m| m.max_outward).fold(f64::NEG_INFINITY, f64::max);
            println!("{} models: max rate {rate:.3e}, max outward {outward:.3e}", r.models.len());
            (r.passed(), vec![write_json(out, "theorem1", &r)?])
        }
        BenchKind::Looping => {
            let r = run_looping(config::<SeedConfig>(cfg)?.seed)?;
            println!("without modulation: {:?}; with: {:?}", r.without_modulation.verdict, r.with_modulation.verdict);
            (r.passed(), vec![write_json(out, "looping", &r)?])
        }
        BenchKind::Generalization => {
            let r = run_generalization(config::<SeedConfig>(cfg)?.seed)?;
            for c in &r.cases {
                let status = if c.behaved { "ok" } else { "unexpected" };
                println!("{:12} {:?} / {:?} perturbed: {status}", c.spec, c.unperturbed.verdict, c.perturbed.verdict);
            }
            (r.passed(), vec![write_json(out, "generalization", &r)?])
        }
        BenchKind::Color => {
            let r = run_color(config::<SeedConfig>(cfg)?.seed)?;
            let matched = |c: &tli_bench::multimode::ReentryCase| c.observed.as_deref() == Some(c.expected.as_str());
            for c in &r {
                println!("{:8} after {:7} re-entered {:?}, expected {}", c.spec, c.trigger, c.observed, c.expected);
            }
            (r.iter().all(matched), vec![write_json(out, "color", &r)?])
        }
        BenchKind::Campaign => {
            let c: CampaignConfig = config(cfg)?;
            let r = run_campaign(&c)?;
            println!("{}/{} succeeded, {}/{} satisfied", r.successes, c.runs, r.satisfied, c.runs);
            (r.passed(), vec![write_json(out, "campaign", &r)?])
        }
    };
    for p in paths {
        println!("wrote {}", p.display());
    }
    Ok(passed)
}

fn demos_for(assets: &Assets, scene: &str, seed: u64, file: Option<&Path>) -> Result<Vec<Demonstration>> {
    match file {
        Some(p) => read_json(p),
        None => Ok(scene_demos(&assets.scene(scene)?, seed)?),
    }
}

#[allow(clippy::too_many_arguments)]
fn run_once(
    assets: &Assets,
    scene_name: &str,
    spec_name: &str,
    library: Option<&Path>,
    variant_name: &str,
    seed: u64,
    start: Option<Vec<f64>>,
    perturbations: Option<&Path>,
    boundaries: Option<&Path>,
    save_boundaries: Option<&Path>,
    cutting: bool,
    out: Option<&Path>,
) -> Result<bool> {
    let scene = assets.scene(scene_name)?;
    let spec = assets.spec(spec_name)?;
    scene.validate_against(&spec)?;
    let v = variant(variant_name)?;
    let demos = scene_demos(&scene, seed)?;
    let library: PolicyLibrary = match library {
        Some(p) => read_json(p)?,
        None => learn_library(&scene, &demos, &v.policy_kind(seed))?,
    };
    let x0 = match start {
        Some(s) => Vector::from_vec(s),
        None => demos[0].samples[0].x.clone(),
    };
    let boundaries: BoundarySet = match boundaries {
        Some(p) => read_json(p)?,
        None => BoundarySet::default(),
    };
    let mut source: Box<dyn PerturbationSource> = match perturbations {
        Some(p) => Box::new(read_json::<PerturbationSchedule>(p)?),
        None => Box::new(NoPerturbations),
    };
    let cfg = ExecutorConfig { modulation_enabled: v.modulated(), online_cutting_enabled: cutting, seed, ..Default::default() };
    let (outcome, boundaries) = run(&scene, &spec, Arc::new(library), boundaries, x0, source.as_mut(), &cfg)?;
    println!(
        "{:?} after {} steps, {} replans, {} cuts; modes {}",
        outcome.verdict,
        outcome.trace.len(),
        outcome.replans,
        boundaries.cut_count(),
        outcome.trace.mode_names().join(" ")
    );
    println!("spec: {}", if outcome.spec_verdict.is_satisfied() { "satisfied" } else { "violated" });
    if let Some(p) = save_boundaries {
        write_out(p, &serde_json::to_string_pretty(&boundaries)?)?;
    }
    if let Some(p) = out {
        write_out(p, &serde_json::to_string_pretty(&outcome)?)?;
    }
    Ok(outcome.verdict == tli_core::executor::Verdict::Success)
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let assets = cli.assets.map(Assets::with_dir).unwrap_or_default();
    let ok = match cli.command {
        Cmd::Bench { kind, config, out, paper_scale } => bench(kind, config.as_deref(), &out, paper_scale)?,
        Cmd::DemoGen { scene, seed, out } => {
            let demos = demos_for(&assets, &scene, seed, None)?;
            write_out(&out, &serde_json::to_string(&demos)?)?;
            println!("{} demonstrations written to {}", demos.len(), out.display());
            true
        }
        Cmd::Fit { scene, demos, variant: v, seed, out } => {
            let sc = assets.scene(&scene)?;
            let demos = demos_for(&assets, &scene, seed, demos.as_deref())?;
            let lib = learn_library(&sc, &demos, &variant(&v)?.policy_kind(seed))?;
            write_out(&out, &serde_json::to_string(&lib)?)?;
            println!("{} policies written to {}", lib.policies.len(), out.display());
            true
        }
        Cmd::Synth { spec, out } => {
            let spec = if Path::new(&spec).is_file() {
                tli_core::ltl::Gr1Spec::parse(&fs::read_to_string(&spec)?)?
            } else {
                assets.spec(&spec)?
            };
            let automaton = synthesize(&spec)?;
            let text = serde_json::to_string_pretty(&automaton)?;
            match out {
                Some(p) => write_out(&p, &text)?,
                None => println!("{text}"),
            }
            true
        }
        Cmd::Run { scene, spec, library, variant, seed, start, perturbations, boundaries, save_boundaries, no_cutting, out } => {
            run_once(
                &assets,
                &scene,
                &spec,
                library.as_deref(),
                &variant,
                seed,
                start,
                perturbations.as_deref(),
                boundaries.as_deref(),
                save_boundaries.as_deref(),
                !no_cutting,
                out.as_deref(),
            )?
        }
        Cmd::Serve { port, host } => {
            let addr: SocketAddr = format!("{host}:{port}").parse().context("bad host")?;
            tokio::runtime::Runtime::new()?.block_on(tli_service::serve(addr, assets))?;
            true
        }
    };
    if !ok {
        bail!("check failed");
    }
    Ok(())
}
