//! The `skelkit` command line: one sub-command per pipeline stage.
//!
//! Configs are JSON files whose unknown keys are rejected. `SKELKIT_SEED`
//! overrides every seed read from a config. Exit codes: 0 success, 2 bad
//! configuration or input, 3 numerical failure; failures print a JSON
//! object on stderr.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::contraction::{contract_with_history, ContractionConfig};
use crate::error::{Error, Result};
use crate::eval::{eval_dirs, RunArtifacts};
use crate::geometry::{load_mesh, save_obj, TriMesh};
use crate::io::{create_dir, read_json, save_weights, write_json, write_text};
use crate::kinematics::blend_skin;
use crate::refine::{initial_skeleton, sios2_from, RefineConfig};
use crate::rendering::rasterize_silhouette;
use crate::skeleton::Skeleton;
use crate::skinning::{compute_skinning_weights, one_hot_parts, rigidity_coefficients, DEFAULT_LAMBDA};
use crate::synth::{corrupt, generate, preset, read_dataset, write_dataset, NoiseSpec, SynthSpec, PRESETS};

pub const SEED_ENV: &str = "SKELKIT_SEED";

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "skelkit", version, about = "Implicit skeleton learning for articulated meshes")]
pub struct Cli {
    /// Progress messages on stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic articulated sequence with ground truth.
    Synth {
        /// Built-in spec name.
        #[arg(long, conflicts_with = "spec")]
        preset: Option<String>,
        /// Spec JSON file.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Noise JSON file applied to targets and flows.
        #[arg(long)]
        noise: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Laplacian contraction of a mesh.
    Contract {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Initial skeleton by contraction and connectivity surgery.
    Skeletonize {
        #[arg(long)]
        mesh: PathBuf,
        /// Refinement config; its contraction, surgery and coarsening sections apply.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Skinning weights and edge rigidity for a mesh and skeleton.
    Skin {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        skeleton: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        temperature: f64,
        #[arg(long, default_value_t = DEFAULT_LAMBDA)]
        lambda: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Silhouettes of a fitted run through the dataset cameras.
    Render {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Alternating skeleton refinement on a dataset.
    Refine {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Start from this skeleton instead of contraction and surgery.
        #[arg(long)]
        init: Option<PathBuf>,
        /// Keep per-iteration skeletons, weights and losses.
        #[arg(long)]
        checkpoints: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Metrics of a run against a synthetic dataset; writes `metrics.json`.
    Eval {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        temperature: f64,
    },
    /// Posed meshes, part labels and joints of a run.
    Export {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn seed_override() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("{SEED_ENV} must be an unsigned integer, got `{s}`"))),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(_) => Err(Error::Config(format!("{SEED_ENV} is not valid unicode"))),
    }
}

fn config_or_default<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    path.map_or_else(|| Ok(T::default()), read_json)
}

fn log(verbose: bool, msg: impl AsRef<str>) {
    if verbose {
        eprintln!("{}", msg.as_ref());
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Schema(e.to_string()))?;
    // a closed pipe on stdout is not a failure of the command
    let _ = writeln!(std::io::stdout().lock(), "{text}");
    Ok(())
}

fn mesh(path: &Path) -> Result<TriMesh> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    load_mesh(path)
}

pub fn run(cli: &Cli) -> Result<()> {
    let seed = seed_override()?;
    let v = cli.verbose;
    match &cli.command {
        Command::Synth { preset: name, spec, noise, out } => {
            let mut spec: SynthSpec = match (name, spec) {
                (Some(n), None) => preset(n)?,
                (None, Some(p)) => read_json(p)?,
                _ => {
                    return Err(Error::Config(format!(
                        "give --preset ({}) or --spec",
                        PRESETS.join(", ")
                    )))
                }
            };
            if let Some(s) = seed {
                spec.seed = s;
            }
            let (m, mut gt) = generate(&spec)?;
            if let Some(p) = noise {
                let mut n: NoiseSpec = read_json(p)?;
                if let Some(s) = seed {
                    n.seed = s;
                }
                gt = corrupt(&gt, &n)?;
            }
            write_dataset(out, &m, &gt)?;
            write_json(&spec, out.join("spec.json"))?;
            log(v, format!("wrote {} frames, {} vertices to {}", spec.frames, m.num_vertices(), out.display()));
        }
        Command::Contract { mesh: path, config, out } => {
            let cfg: ContractionConfig = config_or_default(config.as_deref())?;
            let outcome = contract_with_history(&mesh(path)?, &cfg)?;
            create_dir(out)?;
            save_obj(&outcome.mesh, out.join("contracted.obj"))?;
            let report = serde_json::json!({
                "iterations": outcome.iterations,
                "converged": outcome.converged,
                "volumes": outcome.volumes,
            });
            write_json(&report, out.join("contraction.json"))?;
            log(v, format!("{} iterations, converged: {}", outcome.iterations, outcome.converged));
        }
        Command::Skeletonize { mesh: path, config, out } => {
            let cfg: RefineConfig = config_or_default(config.as_deref())?;
            cfg.validate()?;
            let skel = initial_skeleton(&mesh(path)?, &cfg)?;
            create_dir(out)?;
            skel.save(out.join("skeleton.json"))?;
            log(v, format!("{} bones, {} joints", skel.num_bones(), skel.num_joints()));
        }
        Command::Skin { mesh: path, skeleton, temperature, lambda, out } => {
            let m = mesh(path)?;
            let skel = Skeleton::load(skeleton)?;
            let w = compute_skinning_weights(m.vertices(), &skel, None, *temperature)?;
            let r = rigidity_coefficients(&w, m.edges(), *lambda)?;
            create_dir(out)?;
            save_weights(&w, out.join("weights.bin"))?;
            let mut csv = String::from("i,j,rigidity\n");
            for (e, r) in m.edges().iter().zip(&r.r) {
                let _ = writeln!(csv, "{},{},{r:?}", e[0], e[1]);
            }
            write_text(&csv, out.join("rigidity.csv"))?;
        }
        Command::Render { data, run, out } => {
            let ds = read_dataset(data)?;
            let fit = RunArtifacts::load(run)?;
            create_dir(out)?;
            for (f, (pose, cam)) in fit.poses.iter().zip(&ds.frames.cameras).enumerate() {
                let posed = blend_skin(ds.mesh.vertices(), &fit.weights, pose)?;
                let sil = rasterize_silhouette(&posed, ds.mesh.faces(), cam);
                let path = out.join(format!("{f:04}.pgm"));
                std::fs::write(&path, sil.to_pgm()).map_err(|e| Error::io(&path, e))?;
            }
        }
        Command::Refine { data, config, init, checkpoints, out } => {
            let mut cfg: RefineConfig = config_or_default(config.as_deref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let ds = read_dataset(data)?;
            let init = init.as_deref().map(Skeleton::load).transpose()?;
            create_dir(out)?;
            let ck = checkpoints.then(|| out.join("checkpoints"));
            let r = sios2_from(&ds.mesh, &ds.frames, &cfg, init, ck.as_deref())?;
            RunArtifacts {
                skeleton: r.skeleton.clone(),
                weights: r.weights.clone(),
                poses: r.poses.clone(),
            }
            .save(out)?;
            write_json(&r.history, out.join("history.json"))?;
            write_json(&cfg, out.join("config.json"))?;
            write_text(&r.losses.to_csv(), out.join("losses.csv"))?;
            for h in &r.history {
                log(v, format!("iteration {}: {} bones, {} merges, {} splits", h.iteration, h.bones, h.merges.len(), h.splits.len()));
            }
            log(v, format!("{} → {} bones", r.initial_bones, r.skeleton.num_bones()));
        }
        Command::Eval { run, data, temperature } => {
            print_json(&eval_dirs(run, data, *temperature)?)?;
        }
        Command::Export { data, run, out } => {
            let ds = read_dataset(data)?;
            let fit = RunArtifacts::load(run)?;
            create_dir(out)?;
            for (f, pose) in fit.poses.iter().enumerate() {
                let posed = blend_skin(ds.mesh.vertices(), &fit.weights, pose)?;
                let m = TriMesh::new(posed, ds.mesh.faces().to_vec())?;
                save_obj(&m, out.join(format!("posed_{f:04}.obj")))?;
            }
            write_json(&one_hot_parts(&fit.weights).labels, out.join("parts.json"))?;
            let joints: Vec<[f64; 3]> = fit.skeleton.joints.iter().map(|j| j.position.into()).collect();
            write_json(&joints, out.join("joints.json"))?;
        }
    }
    Ok(())
}

pub fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Io { .. } => "io",
        Error::Parse { .. } | Error::NonTriangularFace { .. } | Error::IndexOutOfRange { .. } => "parse",
        Error::InvalidMesh(_) => "invalid_mesh",
        Error::DegenerateTriangle { .. } => "degenerate_triangle",
        Error::SingularSystem { .. } => "singular_system",
        Error::NonFinite(_) => "non_finite",
        Error::EmptyGraph => "empty_graph",
        Error::SingularBlend { .. } => "singular_blend",
        Error::DegeneratePart { .. } => "degenerate_part",
        Error::BehindCamera { .. } => "behind_camera",
        Error::ZeroVector => "zero_vector",
        Error::SizeMismatch(_) => "size_mismatch",
        Error::Schema(_) => "schema",
        Error::Config(_) => "config",
        Error::InvalidSpec(_) => "invalid_spec",
        Error::MissingArtifact(_) => "missing_artifact",
    }
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_INPUT
    }
}

pub fn error_json(e: &Error) -> String {
    serde_json::json!({
        "error": error_kind(e),
        "message": e.to_string(),
        "exit_code": exit_code(e),
    })
    .to_string()
}

/// Parses `args`, runs, reports failures on stderr and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return EXIT_OK;
            }
            let msg = e.render().to_string();
            eprintln!(
                "{}",
                serde_json::json!({ "error": "usage", "message": msg.trim_end(), "exit_code": EXIT_INPUT })
            );
            return EXIT_INPUT;
        }
    };
    match run(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("{}", error_json(&e));
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_by_error_class() {
        assert_eq!(exit_code(&Error::Config("x".into())), EXIT_INPUT);
        assert_eq!(exit_code(&Error::MissingArtifact("m.obj".into())), EXIT_INPUT);
        assert_eq!(exit_code(&Error::SingularSystem { condition: 1e20 }), EXIT_NUMERICAL);
        assert_eq!(exit_code(&Error::NonFinite("w".into())), EXIT_NUMERICAL);
    }

    #[test]
    fn error_json_is_machine_readable() {
        let s = error_json(&Error::MissingArtifact("dir/mesh.obj".into()));
        let v: serde_json::Value = serde_json::from_str(&s).unwrap();
        assert_eq!(v["error"], "missing_artifact");
        assert_eq!(v["exit_code"], 2);
        assert!(v["message"].as_str().unwrap().contains("dir/mesh.obj"));
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(main_with_args(["skelkit", "frobnicate"]), EXIT_INPUT);
        assert_eq!(main_with_args(["skelkit", "synth"]), EXIT_INPUT);
        assert_eq!(main_with_args(["skelkit", "--help"]), EXIT_OK);
    }
}
